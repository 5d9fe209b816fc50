//! The `spin-road` command line.
//!
//! Exit codes: 0 on success, 1 for invalid arguments, configuration or data
//! (and for a failing gradient check), 2 for runtime failures such as I/O.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{RunConfig, CONFIG_FILE};
use crate::data::{generate_synthetic, load_image, read_dataset, save_classes, save_mask, write_dataset, Sample, Split};
use crate::error::{Error, Result};
use crate::gradsuite;
use crate::tensor::gradcheck::GradCheckReport;
use crate::metrics::{evaluate, MetricsReport, OraclePredictor, Predictor};
use crate::network::{Checkpoint, Model};
use crate::spin::{pyramid_param_count, SpinVariant};
use crate::train::{fit, TrainLog, CHECKPOINT_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_TXT: &str = "metrics.txt";
pub const GRADCHECK_CSV: &str = "gradcheck.csv";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const CURVES_CSV: &str = "curves.csv";
pub const PARAMS_CSV: &str = "params.csv";
pub const SUMMARY_TXT: &str = "summary.txt";

#[derive(Debug, Parser)]
#[command(name = "spin-road", version, about = "Road segmentation with graph reasoning")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train a model; writes a checkpoint and a CSV log.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Segment one image.
    Predict(PredictArgs),
    /// Run every registered gradient check.
    Gradcheck,
    /// Train all SPIN variants on one synthetic split and compare them.
    Ablate,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Training samples (default from config).
    #[arg(long)]
    pub count: Option<usize>,
    /// Validation samples (default from config).
    #[arg(long)]
    pub val_count: Option<usize>,
    /// Side length in pixels, a multiple of 16.
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory (default `data.dir` from config).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long, value_name = "CHECKPOINT")]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<u64>,
    #[arg(long)]
    pub spin: Option<SpinVariant>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

impl SplitArg {
    fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Val => Some(Split::Val),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Score the ground truth itself instead of a model.
    #[arg(long, conflicts_with = "checkpoint")]
    pub oracle: bool,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "val")]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Also write the orientation argmax as `orientation.png`.
    #[arg(long)]
    pub orientation: bool,
}

/// Parses `args` (program name first) and runs the command, printing
/// results to stdout and errors to stderr. Returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(Outcome { text, code }) => {
            print!("{text}");
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Dataset(_)
        | Error::InvalidArgument(_)
        | Error::ShapeMismatch { .. }
        | Error::Indivisible { .. } => EXIT_INVALID,
        _ => EXIT_RUNTIME,
    }
}

/// What a command printed and how it wants to exit.
#[derive(Debug)]
pub struct Outcome {
    pub text: String,
    pub code: i32,
}

impl Outcome {
    fn ok(text: String) -> Self {
        Outcome { text, code: EXIT_OK }
    }
}

pub fn execute(cli: &Cli) -> Result<Outcome> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    match &cli.command {
        Command::Synth(a) => cmd_synth(&mut cfg, a, cli.force),
        Command::Train(a) => cmd_train(&mut cfg, a, cli.force),
        Command::Eval(a) => cmd_eval(&cfg, a),
        Command::Predict(a) => cmd_predict(&cfg, a, cli.force),
        Command::Gradcheck => cmd_gradcheck(&cfg),
        Command::Ablate => cmd_ablate(&cfg, cli.force),
    }
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    cfg.out
        .as_deref()
        .ok_or_else(|| Error::Config("no output directory: pass --out DIR or set `out`".into()))
}

/// Creates `dir`, refusing one that already has entries unless `force`.
fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if entries.next().is_some() && !force {
            return Err(Error::Config(format!(
                "{} is not empty; pass --force to write into it",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn data_dir<'a>(cfg: &'a RunConfig, arg: &'a Option<PathBuf>) -> Result<&'a Path> {
    arg.as_deref()
        .or(cfg.data.dir.as_deref())
        .ok_or_else(|| Error::Config("no dataset: pass --data DIR or set `data.dir`".into()))
}

fn load_split(dir: &Path, split: Option<Split>) -> Result<Vec<Sample>> {
    Ok(read_dataset(dir, split)?.into_iter().map(|(_, _, s)| s).collect())
}

pub fn cmd_synth(cfg: &mut RunConfig, a: &SynthArgs, force: bool) -> Result<Outcome> {
    if let Some(c) = a.count {
        cfg.synth.train_count = c;
    }
    if let Some(c) = a.val_count {
        cfg.synth.val_count = c;
    }
    if let Some(s) = a.size {
        cfg.synth.size = s;
    }
    cfg.validate()?;
    let out = out_dir(cfg)?.to_path_buf();
    prepare_out(&out, force)?;
    let s = &cfg.synth;
    let all = generate_synthetic(cfg.seed, s.train_count + s.val_count, s.size, &s.options())?;
    let tagged: Vec<(Split, &Sample)> = all
        .iter()
        .enumerate()
        .map(|(i, x)| (if i < s.train_count { Split::Train } else { Split::Val }, x))
        .collect();
    let ids = write_dataset(&out, &tagged)?;
    cfg.data.dir = Some(out.clone());
    cfg.save(out.join(CONFIG_FILE))?;
    Ok(Outcome::ok(format!(
        "wrote {} samples ({} train, {} val, {}×{}) to {}\n",
        ids.len(),
        s.train_count,
        s.val_count,
        s.size,
        s.size,
        out.display()
    )))
}

pub fn cmd_train(cfg: &mut RunConfig, a: &TrainArgs, force: bool) -> Result<Outcome> {
    if let Some(e) = a.epochs {
        cfg.train.schedule.epochs = e;
    }
    if a.max_iters.is_some() {
        cfg.train.max_iters = a.max_iters;
    }
    if let Some(v) = a.spin {
        cfg.network.spin = v;
    }
    cfg.validate()?;
    let data = data_dir(cfg, &a.data)?.to_path_buf();
    let train = load_split(&data, Some(Split::Train))?;
    let val = load_split(&data, Some(Split::Val))?;
    let out = out_dir(cfg)?.to_path_buf();

    let (mut model, state) = match &a.resume {
        Some(path) => {
            let ck = Checkpoint::<f32>::load(path)?;
            if ck.config != cfg.network {
                return Err(Error::Config(format!(
                    "{} was trained with a different [network] section; use the run's {CONFIG_FILE}",
                    path.display()
                )));
            }
            let state = ck.train.clone();
            if state.is_none() {
                return Err(Error::Checkpoint(format!("{} holds no optimizer state", path.display())));
            }
            (ck.into_model()?, state)
        }
        None => {
            prepare_out(&out, force)?;
            (Model::<f32>::new(&cfg.network, cfg.seed)?, None)
        }
    };
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    cfg.data.dir = Some(data);
    cfg.save(out.join(CONFIG_FILE))?;
    let log = fit(&mut model, &train, &val, &cfg.train, cfg.seed, Some(&out), state)?;
    Ok(Outcome::ok(train_summary(&log, &out)))
}

fn train_summary(log: &TrainLog<f32>, out: &Path) -> String {
    let mut s = String::new();
    for r in &log.rows {
        let _ = write!(s, "epoch {:>3}  iter {:>6}  lr {:.0e}  loss {:.4}", r.epoch, r.iter, r.lr, r.l_final);
        if let (Some(f1), Some(iou)) = (r.val_f1, r.val_iou) {
            let _ = write!(s, "  val F1 {f1:.4}  IoU {iou:.4}");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "checkpoint: {}", out.join(CHECKPOINT_FILE).display());
    s
}

pub fn cmd_eval(cfg: &RunConfig, a: &EvalArgs) -> Result<Outcome> {
    cfg.validate()?;
    let data = data_dir(cfg, &a.data)?;
    let samples = load_split(data, a.split.split())?;
    if samples.is_empty() {
        return Err(Error::Dataset(format!("{} has no {:?} samples", data.display(), a.split)));
    }
    let model;
    let predictor: &dyn Predictor = match &a.checkpoint {
        Some(path) => {
            model = Checkpoint::<f32>::load(path)?.into_model()?;
            &model
        }
        None => &OraclePredictor,
    };
    let report = evaluate(predictor, &samples, &cfg.eval)?;
    if let Some(out) = &cfg.out {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write(&out.join(METRICS_CSV), &report.to_csv())?;
        write(&out.join(METRICS_TXT), &report.to_string())?;
    }
    Ok(Outcome::ok(report.to_string()))
}

pub fn cmd_predict(cfg: &RunConfig, a: &PredictArgs, force: bool) -> Result<Outcome> {
    let model = Checkpoint::<f32>::load(&a.checkpoint)?.into_model()?;
    let (h, w, image) = load_image(&a.image)?;
    let pred = match &cfg.eval.tile {
        Some(spec) => model.predict_tiled(&image, h, w, spec)?,
        None => model.predict_image(&image, h, w)?,
    };
    let out = out_dir(cfg)?;
    prepare_out(out, force)?;
    let mask: Vec<u8> = pred.road_prob.iter().map(|&p| u8::from(p >= cfg.eval.threshold)).collect();
    let mask_path = out.join("mask.png");
    save_mask(&mask_path, &mask, h, w)?;
    let mut text = format!("{}×{} → {}\n", h, w, mask_path.display());
    if a.orientation {
        let path = out.join("orientation.png");
        save_classes(&path, &pred.orientation, h, w)?;
        let _ = writeln!(text, "orientation → {}", path.display());
    }
    Ok(Outcome::ok(text))
}

pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<Outcome> {
    let reports = gradsuite::run(cfg.seed)?;
    let (outcome, csv) = gradcheck_table(&reports);
    if let Some(out) = &cfg.out {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write(&out.join(GRADCHECK_CSV), &csv)?;
    }
    Ok(outcome)
}

/// Pass/fail table and CSV of gradient checks; any failure exits with 1.
pub fn gradcheck_table(reports: &[GradCheckReport]) -> (Outcome, String) {
    let mut text = format!("{:<28} {:>12} {:>9} {:>8} {:>8}  result\n", "check", "max rel err", "tol", "probes", "skipped");
    let mut csv = String::from("check,max_rel_error,tolerance,probes,skipped,passed\n");
    let mut failed = 0;
    for r in reports {
        let ok = r.passed();
        failed += usize::from(!ok);
        let _ = writeln!(
            text,
            "{:<28} {:>12.3e} {:>9.0e} {:>8} {:>8}  {}",
            r.name,
            r.max_rel_error,
            r.tolerance,
            r.elements,
            r.skipped,
            if ok { "pass" } else { "FAIL" }
        );
        let _ = writeln!(csv, "{},{:e},{:e},{},{},{}", r.name, r.max_rel_error, r.tolerance, r.elements, r.skipped, ok);
    }
    let _ = writeln!(text, "{} checks, {} failed", reports.len(), failed);
    let code = if failed == 0 { EXIT_OK } else { EXIT_INVALID };
    (Outcome { text, code }, csv)
}

/// Result of one ablation variant.
#[derive(Clone, Debug)]
pub struct VariantRun {
    pub variant: SpinVariant,
    pub params: usize,
    pub spin_params: usize,
    /// Validation F1 and accurate IoU after every epoch.
    pub val_f1: Vec<f64>,
    pub val_iou: Vec<f64>,
    pub final_report: MetricsReport,
}

/// Trains every configured variant from the same seed on the same synthetic
/// split, with validation after every epoch.
pub fn ablate(cfg: &RunConfig, out: Option<&Path>) -> Result<Vec<VariantRun>> {
    cfg.validate()?;
    let s = &cfg.synth;
    if s.val_count == 0 {
        return Err(Error::Config("ablation needs synth.val_count > 0".into()));
    }
    let all = generate_synthetic(cfg.seed, s.train_count + s.val_count, s.size, &s.options())?;
    let (train, val) = all.split_at(s.train_count);
    let mut tc = cfg.train.clone();
    tc.schedule.epochs = cfg.ablate.epochs;
    tc.val_every = 1;
    let mut runs = Vec::new();
    for &variant in &cfg.ablate.variants {
        let net = crate::network::NetworkConfig { spin: variant, ..cfg.network.clone() };
        let mut model = Model::<f32>::new(&net, cfg.seed)?;
        let dir = out.map(|o| o.join(variant.name()));
        let log = fit(&mut model, train, val, &tc, cfg.seed, dir.as_deref(), None)?;
        let final_report = evaluate(&model, val, &cfg.eval)?;
        runs.push(VariantRun {
            variant,
            params: model.count_parameters(),
            spin_params: pyramid_param_count(net.spin_dims(), variant),
            val_f1: log.rows.iter().map(|r| r.val_f1.unwrap_or(f64::NAN)).collect(),
            val_iou: log.rows.iter().map(|r| r.val_iou.unwrap_or(f64::NAN)).collect(),
            final_report,
        });
    }
    Ok(runs)
}

/// Per-epoch validation F1, one column per variant.
pub fn ablation_csv(runs: &[VariantRun]) -> String {
    let mut s = String::from("epoch");
    for r in runs {
        let _ = write!(s, ",{}", r.variant.name());
    }
    s.push('\n');
    let epochs = runs.iter().map(|r| r.val_f1.len()).max().unwrap_or(0);
    for e in 0..epochs {
        let _ = write!(s, "{e}");
        for r in runs {
            let _ = write!(s, ",{}", r.val_f1.get(e).copied().unwrap_or(f64::NAN));
        }
        s.push('\n');
    }
    s
}

/// Long-format curves: `variant,epoch,val_F1,val_IoU`.
pub fn curves_csv(runs: &[VariantRun]) -> String {
    let mut s = String::from("variant,epoch,val_F1,val_IoU\n");
    for r in runs {
        for (e, (f, i)) in r.val_f1.iter().zip(&r.val_iou).enumerate() {
            let _ = writeln!(s, "{},{e},{f},{i}", r.variant.name());
        }
    }
    s
}

/// Parameter counts and their difference from the run without SPIN.
pub fn params_csv(runs: &[VariantRun]) -> String {
    let base = runs.iter().find(|r| r.variant == SpinVariant::None).map(|r| r.params);
    let mut s = String::from("variant,params,spin_params,delta_vs_none\n");
    for r in runs {
        let delta = base.map_or(String::new(), |b| (r.params as i64 - b as i64).to_string());
        let _ = writeln!(s, "{},{},{},{delta}", r.variant.name(), r.params, r.spin_params);
    }
    s
}

fn ablation_summary(runs: &[VariantRun]) -> String {
    let mut s = format!("{:<12} {:>9} {:>9} {:>8} {:>8} {:>8}\n", "variant", "params", "spin", "F1", "IoU", "APLS");
    for r in runs {
        let m = &r.final_report;
        let _ = writeln!(
            s,
            "{:<12} {:>9} {:>9} {:>8.4} {:>8.4} {:>8.4}",
            r.variant.name(),
            r.params,
            r.spin_params,
            m.f1,
            m.iou_a,
            m.apls
        );
    }
    let f1 = |v: SpinVariant| runs.iter().find(|r| r.variant == v).map(|r| r.final_report.f1);
    if let (Some(base), Some(full)) = (f1(SpinVariant::None), f1(SpinVariant::Full)) {
        let holds = full >= base;
        let _ = writeln!(
            s,
            "SPIN ≥ baseline val F1 at the final epoch: {} ({full:.4} vs {base:.4})",
            if holds { "yes" } else { "no" }
        );
    }
    s
}

pub fn cmd_ablate(cfg: &RunConfig, force: bool) -> Result<Outcome> {
    let out = out_dir(cfg)?.to_path_buf();
    prepare_out(&out, force)?;
    cfg.save(out.join(CONFIG_FILE))?;
    let runs = ablate(cfg, Some(&out))?;
    write(&out.join(ABLATION_CSV), &ablation_csv(&runs))?;
    write(&out.join(CURVES_CSV), &curves_csv(&runs))?;
    write(&out.join(PARAMS_CSV), &params_csv(&runs))?;
    let summary = ablation_summary(&runs);
    write(&out.join(SUMMARY_TXT), &summary)?;
    Ok(Outcome::ok(summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(name: &str, err: f64) -> GradCheckReport {
        GradCheckReport {
            name: name.into(),
            max_rel_error: err,
            tolerance: 1e-4,
            elements: 10,
            skipped: 0,
        }
    }

    #[test]
    fn any_failed_check_sets_a_nonzero_exit() {
        let (ok, _) = gradcheck_table(&[report("a", 1e-6), report("b", 2e-5)]);
        assert_eq!(ok.code, EXIT_OK);
        let (bad, csv) = gradcheck_table(&[report("a", 1e-6), report("b", 2e-3)]);
        assert_eq!(bad.code, EXIT_INVALID);
        assert!(bad.text.contains("FAIL"));
        assert!(csv.lines().nth(2).unwrap().ends_with(",false"));
    }

    #[test]
    fn error_kinds_map_to_exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_INVALID);
        assert_eq!(exit_code(&Error::Dataset("x".into())), EXIT_INVALID);
        let io = Error::io("p", std::io::Error::from(std::io::ErrorKind::NotFound));
        assert_eq!(exit_code(&io), EXIT_RUNTIME);
        assert_eq!(exit_code(&Error::Checkpoint("x".into())), EXIT_RUNTIME);
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(run(["spin-road", "frobnicate"]), EXIT_INVALID);
        assert_eq!(run(["spin-road", "eval"]), EXIT_INVALID);
        assert_eq!(run(["spin-road", "--help"]), EXIT_OK);
    }
}
