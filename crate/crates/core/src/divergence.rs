//! Divergences between cluster distributions.
//!
//! Four instantiations of the inter-model term are provided:
//!
//! | Kind        | Symmetric | Bounded          | Geometry-aware |
//! |-------------|-----------|------------------|----------------|
//! | KL          | no        | no               | no             |
//! | JS          | yes       | `[0, ln 2]`      | no             |
//! | Wasserstein | yes       | `[0, max cost]`  | yes            |
//! | Hellinger   | yes       | `[0, 1]`         | no             |
//!
//! All logarithms are natural. Terms with `p_j = 0` contribute zero.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::distribution::ClusterDistribution;
use crate::error::{Error, Result};

const METRIC_TOL: f64 = 1e-12;

/// Which divergence instantiates the epistemic term.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum DivergenceKind {
    #[default]
    Kl,
    Js,
    /// Optimal transport under a ground metric; `None` is the discrete 0/1 metric.
    Wasserstein(Option<Arc<CostMatrix>>),
    Hellinger,
}

impl DivergenceKind {
    /// Short lowercase name, as used on the command line and in CSV output.
    pub fn name(&self) -> &'static str {
        match self {
            DivergenceKind::Kl => "kl",
            DivergenceKind::Js => "js",
            DivergenceKind::Wasserstein(_) => "wasserstein",
            DivergenceKind::Hellinger => "hellinger",
        }
    }

    /// The four kinds with default parameters, in canonical order.
    pub fn all() -> [DivergenceKind; 4] {
        [
            DivergenceKind::Kl,
            DivergenceKind::Js,
            DivergenceKind::Wasserstein(None),
            DivergenceKind::Hellinger,
        ]
    }

    /// `D(p ‖ q)` for this kind.
    pub fn eval(&self, p: &ClusterDistribution, q: &ClusterDistribution) -> Result<f64> {
        match self {
            DivergenceKind::Kl => kl(p, q),
            DivergenceKind::Js => js(p, q),
            DivergenceKind::Wasserstein(cost) => wasserstein(p, q, cost.as_deref()),
            DivergenceKind::Hellinger => hellinger(p, q),
        }
    }
}

impl fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DivergenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "kl" => Ok(DivergenceKind::Kl),
            "js" => Ok(DivergenceKind::Js),
            "wasserstein" | "w" => Ok(DivergenceKind::Wasserstein(None)),
            "hellinger" => Ok(DivergenceKind::Hellinger),
            other => Err(Error::Config(format!("unknown divergence `{other}`"))),
        }
    }
}

/// A ground metric over clusters: square, non-negative, symmetric, zero
/// diagonal, and satisfying the triangle inequality.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n: usize,
    cost: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidCost("empty matrix".into()));
        }
        let mut cost = Vec::with_capacity(n * n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidCost(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            cost.extend(row);
        }
        let m = CostMatrix { n, cost };
        m.validate()?;
        Ok(m)
    }

    /// The discrete metric: 0 on the diagonal, 1 elsewhere.
    pub fn discrete(n: usize) -> Self {
        let mut cost = vec![1.0; n * n];
        for i in 0..n {
            cost[i * n + i] = 0.0;
        }
        CostMatrix { n, cost }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cost[i * self.n + j]
    }

    fn validate(&self) -> Result<()> {
        let n = self.n;
        for i in 0..n {
            for j in 0..n {
                let c = self.get(i, j);
                if !c.is_finite() || c < 0.0 {
                    return Err(Error::InvalidCost(format!("entry ({i},{j}) = {c}")));
                }
                if i == j && c != 0.0 {
                    return Err(Error::InvalidCost(format!("diagonal entry {i} = {c}")));
                }
                if (c - self.get(j, i)).abs() > METRIC_TOL {
                    return Err(Error::InvalidCost(format!("asymmetric at ({i},{j})")));
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if self.get(i, k) > self.get(i, j) + self.get(j, k) + METRIC_TOL {
                        return Err(Error::InvalidCost(format!(
                            "triangle inequality fails for ({i},{j},{k})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_dims(p: &ClusterDistribution, q: &ClusterDistribution) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    Ok(())
}

/// `KL(p ‖ q) = Σ p_j ln(p_j / q_j)`.
///
/// Fails with [`Error::SupportViolation`] when `p` puts mass where `q` has none.
pub fn kl(p: &ClusterDistribution, q: &ClusterDistribution) -> Result<f64> {
    check_dims(p, q)?;
    let mut acc = 0.0;
    for (j, (&pj, &qj)) in p.probs().iter().zip(q.probs()).enumerate() {
        if pj == 0.0 {
            continue;
        }
        if qj == 0.0 {
            return Err(Error::SupportViolation { cluster: j, p: pj });
        }
        acc += pj * (pj / qj).ln();
    }
    Ok(acc.max(0.0))
}

/// Jensen–Shannon divergence against the midpoint mixture. Always finite.
pub fn js(p: &ClusterDistribution, q: &ClusterDistribution) -> Result<f64> {
    check_dims(p, q)?;
    let mut acc = 0.0;
    for (&pj, &qj) in p.probs().iter().zip(q.probs()) {
        let mj = 0.5 * (pj + qj);
        if pj > 0.0 {
            acc += 0.5 * pj * (pj / mj).ln();
        }
        if qj > 0.0 {
            acc += 0.5 * qj * (qj / mj).ln();
        }
    }
    Ok(acc.clamp(0.0, std::f64::consts::LN_2))
}

/// Hellinger distance `sqrt(0.5 Σ (√p_j − √q_j)²)`, in `[0, 1]`.
pub fn hellinger(p: &ClusterDistribution, q: &ClusterDistribution) -> Result<f64> {
    check_dims(p, q)?;
    let sq: f64 = p
        .probs()
        .iter()
        .zip(q.probs())
        .map(|(&a, &b)| {
            let d = a.sqrt() - b.sqrt();
            d * d
        })
        .sum();
    Ok((0.5 * sq).sqrt().min(1.0))
}

/// Total variation `0.5 Σ |p_j − q_j|`.
pub fn total_variation(p: &ClusterDistribution, q: &ClusterDistribution) -> Result<f64> {
    check_dims(p, q)?;
    Ok(0.5
        * p.probs()
            .iter()
            .zip(q.probs())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>())
}

/// Optimal-transport cost between `p` and `q`.
///
/// With no cost matrix the discrete metric is used and the closed form
/// (total variation) is returned directly. A supplied matrix is solved as a
/// transportation problem, see [`transport_cost`].
pub fn wasserstein(
    p: &ClusterDistribution,
    q: &ClusterDistribution,
    cost: Option<&CostMatrix>,
) -> Result<f64> {
    match cost {
        None => total_variation(p, q),
        Some(c) => transport_cost(p, q, c),
    }
}

/// Exact minimum-cost transport plan value between two distributions under a
/// ground metric, via successive shortest augmenting paths on the bipartite
/// transportation network.
pub fn transport_cost(
    p: &ClusterDistribution,
    q: &ClusterDistribution,
    cost: &CostMatrix,
) -> Result<f64> {
    check_dims(p, q)?;
    if cost.dim() != p.len() {
        return Err(Error::InvalidCost(format!(
            "cost matrix is {0}x{0}, distributions have {1} clusters",
            cost.dim(),
            p.len()
        )));
    }
    Ok(TransportNetwork::new(p.probs(), q.probs(), cost).solve())
}

// Residual capacities below this are treated as exhausted.
const FLOW_EPS: f64 = 1e-15;

struct Edge {
    to: usize,
    cap: f64,
    cost: f64,
}

/// Source -> supply rows -> demand columns -> sink, with residual edges
/// stored in pairs (`e`, `e ^ 1`).
struct TransportNetwork {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
    source: usize,
    sink: usize,
}

impl TransportNetwork {
    fn new(supply: &[f64], demand: &[f64], cost: &CostMatrix) -> Self {
        let n = supply.len();
        let source = 2 * n;
        let sink = 2 * n + 1;
        let mut net = TransportNetwork {
            edges: Vec::new(),
            adj: vec![Vec::new(); 2 * n + 2],
            source,
            sink,
        };
        for (i, &s) in supply.iter().enumerate() {
            if s > 0.0 {
                net.add_edge(source, i, s, 0.0);
            }
        }
        for (j, &d) in demand.iter().enumerate() {
            if d > 0.0 {
                net.add_edge(n + j, sink, d, 0.0);
            }
        }
        for i in (0..n).filter(|&i| supply[i] > 0.0) {
            for j in (0..n).filter(|&j| demand[j] > 0.0) {
                net.add_edge(i, n + j, f64::INFINITY, cost.get(i, j));
            }
        }
        net
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: f64, cost: f64) {
        self.adj[from].push(self.edges.len());
        self.edges.push(Edge { to, cap, cost });
        self.adj[to].push(self.edges.len());
        self.edges.push(Edge {
            to: from,
            cap: 0.0,
            cost: -cost,
        });
    }

    fn solve(mut self) -> f64 {
        let nodes = self.adj.len();
        let mut total = 0.0;
        loop {
            // Bellman-Ford; the residual graph never holds a negative cycle
            // because every augmentation follows a shortest path.
            let mut dist = vec![f64::INFINITY; nodes];
            let mut via = vec![usize::MAX; nodes];
            dist[self.source] = 0.0;
            for _ in 0..nodes {
                let mut changed = false;
                for u in 0..nodes {
                    if dist[u] == f64::INFINITY {
                        continue;
                    }
                    for &e in &self.adj[u] {
                        let edge = &self.edges[e];
                        if edge.cap > FLOW_EPS && dist[u] + edge.cost < dist[edge.to] - 1e-15 {
                            dist[edge.to] = dist[u] + edge.cost;
                            via[edge.to] = e;
                            changed = true;
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
            if dist[self.sink] == f64::INFINITY {
                break;
            }
            let mut push = f64::INFINITY;
            let mut v = self.sink;
            while v != self.source {
                let e = via[v];
                push = push.min(self.edges[e].cap);
                v = self.edges[e ^ 1].to;
            }
            let mut v = self.sink;
            while v != self.source {
                let e = via[v];
                self.edges[e].cap -= push;
                self.edges[e ^ 1].cap += push;
                v = self.edges[e ^ 1].to;
            }
            total += push * dist[self.sink];
        }
        total.max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn d(v: &[f64]) -> ClusterDistribution {
        ClusterDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl(&d(&[0.3, 0.7]), &d(&[0.3, 0.7])).unwrap(), 0.0);
        let v = kl(&d(&[1.0, 0.0]), &d(&[0.5, 0.5])).unwrap();
        assert!((v - LN_2).abs() < 1e-15);
        assert!(matches!(
            kl(&d(&[0.5, 0.5]), &d(&[1.0, 0.0])),
            Err(Error::SupportViolation { cluster: 1, .. })
        ));
    }

    #[test]
    fn js_examples() {
        assert_eq!(js(&d(&[0.2, 0.8]), &d(&[0.2, 0.8])).unwrap(), 0.0);
        let v = js(&d(&[1.0, 0.0]), &d(&[0.0, 1.0])).unwrap();
        assert!((v - LN_2).abs() < 1e-15);
    }

    #[test]
    fn hellinger_examples() {
        assert_eq!(hellinger(&d(&[0.1, 0.9]), &d(&[0.1, 0.9])).unwrap(), 0.0);
        let v = hellinger(&d(&[1.0, 0.0]), &d(&[0.0, 1.0])).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn wasserstein_examples() {
        let p = d(&[0.7, 0.3]);
        let q = d(&[0.3, 0.7]);
        assert_eq!(wasserstein(&p, &p, None).unwrap(), 0.0);
        assert!((wasserstein(&p, &q, None).unwrap() - 0.4).abs() < 1e-15);
        let disjoint = wasserstein(&d(&[1.0, 0.0]), &d(&[0.0, 1.0]), None).unwrap();
        assert_eq!(disjoint, 1.0);
        let lp = transport_cost(&p, &q, &CostMatrix::discrete(2)).unwrap();
        assert!((lp - 0.4).abs() < 1e-12);
    }

    #[test]
    fn transport_uses_ground_metric() {
        // Line metric 0 - 1 - 2: shifting all mass two steps costs 2.
        let line = CostMatrix::new(vec![
            vec![0.0, 1.0, 2.0],
            vec![1.0, 0.0, 1.0],
            vec![2.0, 1.0, 0.0],
        ])
        .unwrap();
        let v = transport_cost(&d(&[1.0, 0.0, 0.0]), &d(&[0.0, 0.0, 1.0]), &line).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
        let v = transport_cost(&d(&[0.5, 0.5, 0.0]), &d(&[0.0, 0.5, 0.5]), &line).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cost_matrix_rejects_non_metrics() {
        let asym = CostMatrix::new(vec![vec![0.0, 1.0], vec![2.0, 0.0]]);
        assert!(matches!(asym, Err(Error::InvalidCost(_))));
        let diag = CostMatrix::new(vec![vec![1.0, 1.0], vec![1.0, 0.0]]);
        assert!(matches!(diag, Err(Error::InvalidCost(_))));
        let tri = CostMatrix::new(vec![
            vec![0.0, 1.0, 5.0],
            vec![1.0, 0.0, 1.0],
            vec![5.0, 1.0, 0.0],
        ]);
        assert!(matches!(tri, Err(Error::InvalidCost(_))));
        let ragged = CostMatrix::new(vec![vec![0.0, 1.0], vec![1.0]]);
        assert!(matches!(ragged, Err(Error::InvalidCost(_))));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let r = hellinger(&d(&[1.0]), &d(&[0.5, 0.5]));
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
        let r = transport_cost(&d(&[0.5, 0.5]), &d(&[0.5, 0.5]), &CostMatrix::discrete(3));
        assert!(matches!(r, Err(Error::InvalidCost(_))));
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("KL".parse::<DivergenceKind>().unwrap(), DivergenceKind::Kl);
        assert_eq!(
            "wasserstein".parse::<DivergenceKind>().unwrap(),
            DivergenceKind::Wasserstein(None)
        );
        assert!("renyi".parse::<DivergenceKind>().is_err());
    }
}
