use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

/// Undirected road graph in pixel coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoadGraph {
    /// `(row, col)` per node.
    pub nodes: Vec<(usize, usize)>,
    /// `(a, b, length)` with `a ≠ b`.
    pub edges: Vec<(usize, usize, f64)>,
}

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Item {
    // Reversed so the heap pops the shortest distance first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl RoadGraph {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.edges.iter().map(|e| e.2).sum()
    }

    fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(a, b, len) in &self.edges {
            adj[a].push((b, len));
            adj[b].push((a, len));
        }
        adj
    }

    /// Shortest-path lengths from every node (Dijkstra); `∞` when
    /// unreachable.
    pub fn all_pairs_shortest(&self) -> Vec<Vec<f64>> {
        let adj = self.adjacency();
        (0..self.nodes.len())
            .map(|src| {
                let mut dist = vec![f64::INFINITY; self.nodes.len()];
                dist[src] = 0.0;
                let mut heap = BinaryHeap::from([Item(0.0, src)]);
                while let Some(Item(d, u)) = heap.pop() {
                    if d > dist[u] {
                        continue;
                    }
                    for &(v, len) in &adj[u] {
                        let nd = d + len;
                        if nd < dist[v] {
                            dist[v] = nd;
                            heap.push(Item(nd, v));
                        }
                    }
                }
                dist
            })
            .collect()
    }
}

const OFFSETS: [(isize, isize); 8] = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)];

/// Zhang–Suen thinning of a binary mask to a one-pixel-wide skeleton, with
/// line ends preserved.
pub fn zhang_suen(mask: &[u8], height: usize, width: usize) -> Vec<u8> {
    let mut img: Vec<u8> = mask.iter().map(|&v| (v != 0) as u8).collect();
    let at = |img: &[u8], r: usize, c: usize, (dr, dc): (isize, isize)| -> u8 {
        let (y, x) = (r as isize + dr, c as isize + dc);
        if y < 0 || x < 0 || y >= height as isize || x >= width as isize {
            0
        } else {
            img[y as usize * width + x as usize]
        }
    };
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let mut remove = Vec::new();
            for r in 0..height {
                for c in 0..width {
                    if img[r * width + c] == 0 {
                        continue;
                    }
                    // P2..P9 clockwise from north.
                    let p: Vec<u8> = OFFSETS.iter().map(|&o| at(&img, r, c, o)).collect();
                    let b: u8 = p.iter().sum();
                    let a = (0..8).filter(|&i| p[i] == 0 && p[(i + 1) % 8] == 1).count();
                    let (n, e, s, w) = (p[0], p[2], p[4], p[6]);
                    let cond = if pass == 0 {
                        n * e * s == 0 && e * s * w == 0
                    } else {
                        n * e * w == 0 && n * s * w == 0
                    };
                    // A pixel with a single effective neighbour is a line end;
                    // plain Zhang–Suen would erode staircase lines from there.
                    let end = (0..8)
                        .filter(|&i| p[i] == 1 && (i % 2 == 0 || (p[i - 1] == 0 && p[(i + 1) % 8] == 0)))
                        .count()
                        == 1;
                    if (2..=6).contains(&b) && a == 1 && cond && !end {
                        remove.push(r * width + c);
                    }
                }
            }
            changed |= !remove.is_empty();
            for i in remove {
                img[i] = 0;
            }
        }
        if !changed {
            return img;
        }
    }
}

struct Skeleton<'a> {
    img: &'a [u8],
    height: usize,
    width: usize,
}

impl Skeleton<'_> {
    fn set(&self, r: isize, c: isize) -> bool {
        r >= 0 && c >= 0 && r < self.height as isize && c < self.width as isize && self.img[r as usize * self.width + c as usize] != 0
    }

    /// 8-neighbours, dropping a diagonal link when a shared 4-neighbour
    /// already joins the two pixels, so staircase corners are not triangles.
    fn neighbors(&self, i: usize) -> Vec<usize> {
        let (r, c) = ((i / self.width) as isize, (i % self.width) as isize);
        OFFSETS
            .iter()
            .filter(|&&(dr, dc)| self.set(r + dr, c + dc))
            .filter(|&&(dr, dc)| dr == 0 || dc == 0 || !(self.set(r + dr, c) || self.set(r, c + dc)))
            .map(|&(dr, dc)| (r + dr) as usize * self.width + (c + dc) as usize)
            .collect()
    }

    fn step(&self, a: usize, b: usize) -> f64 {
        let diagonal = a / self.width != b / self.width && a % self.width != b % self.width;
        if diagonal {
            std::f64::consts::SQRT_2
        } else {
            1.0
        }
    }
}

/// Converts a road mask to a graph: Zhang–Suen skeleton, nodes at skeleton
/// pixels whose degree is not 2 (touching node pixels merge into one node),
/// edges traced along degree-2 chains with step lengths 1 and √2. A chain
/// returning to its own node gets an extra node at its midpoint; a cycle with
/// no node pixels becomes a single node.
pub fn mask_to_graph(mask: &[u8], height: usize, width: usize) -> RoadGraph {
    let img = zhang_suen(mask, height, width);
    skeleton_to_graph(&img, height, width)
}

pub(crate) fn skeleton_to_graph(img: &[u8], height: usize, width: usize) -> RoadGraph {
    let sk = Skeleton { img, height, width };
    let n = height * width;
    let nbrs: Vec<Vec<usize>> = (0..n)
        .map(|i| if img[i] != 0 { sk.neighbors(i) } else { Vec::new() })
        .collect();
    let is_node = |i: usize| img[i] != 0 && nbrs[i].len() != 2;

    // Cluster touching node pixels.
    let mut cluster = vec![usize::MAX; n];
    let mut members: Vec<Vec<usize>> = Vec::new();
    for i in (0..n).filter(|&i| is_node(i)) {
        if cluster[i] != usize::MAX {
            continue;
        }
        let id = members.len();
        let mut group = vec![i];
        cluster[i] = id;
        let mut queue = VecDeque::from([i]);
        while let Some(p) = queue.pop_front() {
            let (r, c) = ((p / width) as isize, (p % width) as isize);
            for (dr, dc) in OFFSETS {
                if !sk.set(r + dr, c + dc) {
                    continue;
                }
                let q = (r + dr) as usize * width + (c + dc) as usize;
                if is_node(q) && cluster[q] == usize::MAX {
                    cluster[q] = id;
                    group.push(q);
                    queue.push_back(q);
                }
            }
        }
        members.push(group);
    }

    let mut graph = RoadGraph::default();
    for group in &members {
        let (sr, sc) = group
            .iter()
            .fold((0.0, 0.0), |(a, b), &p| (a + (p / width) as f64, b + (p % width) as f64));
        let (mr, mc) = (sr / group.len() as f64, sc / group.len() as f64);
        let rep = *group
            .iter()
            .min_by(|&&a, &&b| {
                let d = |p: usize| ((p / width) as f64 - mr).powi(2) + ((p % width) as f64 - mc).powi(2);
                d(a).total_cmp(&d(b))
            })
            .expect("non-empty cluster");
        graph.nodes.push((rep / width, rep % width));
    }

    let mut visited = vec![false; n];
    for (id, group) in members.iter().enumerate() {
        for &p in group {
            for &q in &nbrs[p] {
                if is_node(q) || visited[q] {
                    continue;
                }
                let mut path = vec![p, q];
                let mut cum = vec![0.0, sk.step(p, q)];
                visited[q] = true;
                let (mut prev, mut cur) = (p, q);
                let end = loop {
                    if is_node(cur) {
                        break cluster[cur];
                    }
                    let Some(&next) = nbrs[cur].iter().find(|&&x| x != prev) else {
                        break usize::MAX;
                    };
                    if !is_node(next) {
                        if visited[next] {
                            break usize::MAX;
                        }
                        visited[next] = true;
                    }
                    cum.push(cum.last().unwrap() + sk.step(cur, next));
                    path.push(next);
                    (prev, cur) = (cur, next);
                };
                if end == usize::MAX {
                    continue;
                }
                let len = *cum.last().unwrap();
                if end != id {
                    graph.edges.push((id, end, len));
                } else {
                    let mid = path.len() / 2;
                    let m = graph.nodes.len();
                    graph.nodes.push((path[mid] / width, path[mid] % width));
                    graph.edges.push((id, m, cum[mid]));
                    graph.edges.push((m, id, len - cum[mid]));
                }
            }
        }
    }

    // Pure cycles of degree-2 pixels.
    for i in 0..n {
        if img[i] == 0 || is_node(i) || visited[i] {
            continue;
        }
        graph.nodes.push((i / width, i % width));
        let mut queue = VecDeque::from([i]);
        visited[i] = true;
        while let Some(p) = queue.pop_front() {
            for &q in &nbrs[p] {
                if !visited[q] {
                    visited[q] = true;
                    queue.push_back(q);
                }
            }
        }
    }
    debug_assert!(graph.edges.iter().all(|e| e.0 != e.1));
    graph
}
