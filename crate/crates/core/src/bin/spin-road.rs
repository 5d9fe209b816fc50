fn main() {
    std::process::exit(spin_road::cli::run(std::env::args_os()));
}
