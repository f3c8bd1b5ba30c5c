#![allow(dead_code)]

use coe::distribution::{ClusterDistribution, EnsembleState};
use coe::simulator::sample_dirichlet;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn dist(probs: &[f64]) -> ClusterDistribution {
    ClusterDistribution::new(probs.to_vec()).unwrap()
}

/// Dirichlet draw with a randomly chosen concentration, so the sample covers
/// both near-delta and near-uniform distributions.
pub fn random_dist(rng: &mut ChaCha8Rng, l: usize) -> ClusterDistribution {
    let alpha = [0.05, 0.3, 1.0, 5.0][rng.random_range(0..4)];
    ClusterDistribution::from_masses(sample_dirichlet(rng, alpha, l)).unwrap()
}

/// Random weights; about one ensemble in five carries a zero-weight model.
pub fn random_weights(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    if k > 2 && rng.random_bool(0.2) {
        w[rng.random_range(0..k)] = 0.0;
    }
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

pub fn random_ensemble(rng: &mut ChaCha8Rng) -> EnsembleState {
    let k = rng.random_range(1..=6);
    let l = rng.random_range(2..=10);
    let d = (0..k).map(|_| random_dist(rng, l)).collect();
    EnsembleState::new(d, random_weights(rng, k)).unwrap()
}

/// H(x) computed directly, skipping zero entries.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

/// Weighted mixture computed directly.
pub fn mixture(e: &EnsembleState) -> Vec<f64> {
    let mut m = vec![0.0; e.num_clusters()];
    for (d, w) in e.distributions().iter().zip(e.weights()) {
        for (j, p) in d.probs().iter().enumerate() {
            m[j] += w * p;
        }
    }
    m
}

/// Minimum transport cost by enumerating every vertex of the transport
/// polytope. Each vertex is a basic solution supported on a spanning tree of
/// the complete bipartite supply/demand graph, so this is exponential in `l`
/// and meant for `l ≤ 3`.
pub fn brute_transport(p: &[f64], q: &[f64], cost: &[Vec<f64>]) -> f64 {
    let l = p.len();
    let cells: Vec<(usize, usize)> = (0..l).flat_map(|i| (0..l).map(move |j| (i, j))).collect();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << cells.len()) {
        if mask.count_ones() as usize != 2 * l - 1 {
            continue;
        }
        let tree: Vec<(usize, usize)> = (0..cells.len())
            .filter(|b| mask & (1 << b) != 0)
            .map(|b| cells[b])
            .collect();
        if let Some(c) = tree_solution(p, q, cost, &tree) {
            best = best.min(c);
        }
    }
    best
}

// Cost of the basic solution on `tree`, or None if `tree` is not a spanning
// tree or the solution has a negative entry.
fn tree_solution(p: &[f64], q: &[f64], cost: &[Vec<f64>], tree: &[(usize, usize)]) -> Option<f64> {
    let l = p.len();
    let mut parent: Vec<usize> = (0..2 * l).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        if p[x] == x {
            x
        } else {
            let r = find(p, p[x]);
            p[x] = r;
            r
        }
    }
    for &(i, j) in tree {
        let (a, b) = (find(&mut parent, i), find(&mut parent, l + j));
        if a == b {
            return None;
        }
        parent[a] = b;
    }
    let mut residual: Vec<f64> = p.iter().chain(q).copied().collect();
    let mut open: Vec<(usize, usize)> = tree.to_vec();
    let mut total = 0.0;
    while !open.is_empty() {
        let degree = |v: usize, open: &[(usize, usize)]| {
            open.iter().filter(|&&(i, j)| i == v || l + j == v).count()
        };
        let leaf = (0..2 * l).find(|&v| degree(v, &open) == 1)?;
        let k = open.iter().position(|&(i, j)| i == leaf || l + j == leaf)?;
        let (i, j) = open.swap_remove(k);
        let flow = residual[leaf];
        if flow < -1e-12 {
            return None;
        }
        let other = if leaf == i { l + j } else { i };
        residual[leaf] = 0.0;
        residual[other] -= flow;
        total += flow * cost[i][j];
    }
    Some(total)
}

/// Lowest index among the maxima.
pub fn first_argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (j, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = j;
        }
    }
    best
}

/// Pairwise AUROC: the share of (correct, incorrect) pairs where the correct
/// item carries strictly lower uncertainty, ties counting one half.
pub fn brute_auroc(u: &[f64], correct: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &ci) in correct.iter().enumerate() {
        for (j, &cj) in correct.iter().enumerate() {
            if ci && !cj {
                pairs += 1.0;
                if u[i] < u[j] {
                    wins += 1.0;
                } else if u[i] == u[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Accuracy of the `keep` most certain items, ties broken by id.
pub fn brute_accuracy_at(u: &[f64], correct: &[bool], ids: &[String], keep: usize) -> f64 {
    let mut order: Vec<usize> = (0..u.len()).collect();
    order.sort_by(|&a, &b| u[a].partial_cmp(&u[b]).unwrap().then(ids[a].cmp(&ids[b])));
    let hits = order[..keep].iter().filter(|&&i| correct[i]).count();
    hits as f64 / keep as f64
}

/// Runs the `coe` command line in-process and returns its exit code.
pub fn run_cli(args: &[&str]) -> i32 {
    let mut full = vec!["coe"];
    full.extend_from_slice(args);
    coe::cli::run(full)
}

pub fn fixture(name: &str) -> String {
    format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

/// A one-route HTTP server on a loopback port. `reply` maps each request
/// body to a status code and response body.
pub struct StubServer {
    pub url: String,
    pub hits: std::sync::Arc<std::sync::atomic::AtomicUsize>,
}

impl StubServer {
    pub fn start<F>(reply: F) -> Self
    where
        F: Fn(&serde_json::Value) -> (u16, String) + Send + Sync + 'static,
    {
        use std::io::{BufRead, BufReader, Read, Write};
        use std::sync::atomic::Ordering;

        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/nli", listener.local_addr().unwrap());
        let hits = std::sync::Arc::new(std::sync::atomic::AtomicUsize::new(0));
        let counter = hits.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut length = 0;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some((name, value)) = line.split_once(':') {
                        if name.eq_ignore_ascii_case("content-length") {
                            length = value.trim().parse().unwrap_or(0);
                        }
                    }
                }
                let mut body = vec![0; length];
                if reader.read_exact(&mut body).is_err() {
                    continue;
                }
                counter.fetch_add(1, Ordering::SeqCst);
                let request = serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null);
                let (status, text) = reply(&request);
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
            }
        });
        StubServer { url, hits }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(std::sync::atomic::Ordering::SeqCst)
    }
}
