//! Sample-set metrics: exact empirical Wasserstein-2, best-match R²,
//! per-node moments, turbulence statistics, histograms and sign coherence.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::meshgraph::FieldState;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("sample set is empty")]
    Empty,
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("every reference state has zero variance")]
    ZeroVariance,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("channel {0} does not exist")]
    MissingChannel(usize),
    #[error("node {0} does not exist")]
    MissingNode(usize),
    #[error("need at least 2 bins, got {0}")]
    TooFewBins(usize),
}

fn check_set(set: &[FieldState]) -> Result<(usize, usize), EvalError> {
    let first = set.first().ok_or(EvalError::Empty)?;
    let shape = first.values.dim();
    for f in set {
        if f.values.dim() != shape {
            return Err(EvalError::ShapeMismatch(shape, f.values.dim()));
        }
    }
    Ok(shape)
}

fn sq_dist(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Minimum-cost perfect assignment of rows to columns for an `n x m` cost
/// matrix with `n <= m`. Returns the column of every row.
pub fn hungarian(cost: &Array2<f64>) -> Vec<usize> {
    let (n, m) = cost.dim();
    assert!(n <= m, "hungarian needs rows <= columns");
    // Shortest augmenting paths with potentials; index 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

#[derive(Clone, Copy)]
struct Arc {
    to: usize,
    rev: usize,
    cap: i64,
    cost: f64,
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

/// Exact optimal transport between uniform weights on `n` rows and `m`
/// columns of `cost`. Solved as an integer min-cost flow where each row
/// supplies `m` units and each column absorbs `n`; returns the optimal
/// expected cost under the `1/n`, `1/m` weights.
pub fn transport_cost(cost: &Array2<f64>) -> f64 {
    let (n, m) = cost.dim();
    let (src, sink) = (n + m, n + m + 1);
    let mut g: Vec<Vec<Arc>> = vec![Vec::new(); n + m + 2];
    let add = |g: &mut Vec<Vec<Arc>>, a: usize, b: usize, cap: i64, cost: f64| {
        let (ra, rb) = (g[b].len(), g[a].len());
        g[a].push(Arc {
            to: b,
            rev: ra,
            cap,
            cost,
        });
        g[b].push(Arc {
            to: a,
            rev: rb,
            cap: 0,
            cost: -cost,
        });
    };
    for i in 0..n {
        add(&mut g, src, i, m as i64, 0.0);
        for j in 0..m {
            add(&mut g, i, n + j, i64::MAX / 4, cost[[i, j]]);
        }
    }
    for j in 0..m {
        add(&mut g, n + j, sink, n as i64, 0.0);
    }
    let total_flow = (n * m) as i64;
    let nv = g.len();
    let mut potential = vec![0.0; nv];
    let mut flow = 0i64;
    let mut total_cost = 0.0;
    while flow < total_flow {
        let mut dist = vec![f64::INFINITY; nv];
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; nv];
        dist[src] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(HeapItem(0.0, src));
        while let Some(HeapItem(d, a)) = heap.pop() {
            if d > dist[a] {
                continue;
            }
            for (ei, e) in g[a].iter().enumerate() {
                if e.cap <= 0 {
                    continue;
                }
                let reduced = (e.cost + potential[a] - potential[e.to]).max(0.0);
                let nd = d + reduced;
                if nd < dist[e.to] {
                    dist[e.to] = nd;
                    prev[e.to] = Some((a, ei));
                    heap.push(HeapItem(nd, e.to));
                }
            }
        }
        assert!(dist[sink].is_finite(), "transport network is always feasible");
        for v in 0..nv {
            if dist[v].is_finite() {
                potential[v] += dist[v];
            }
        }
        let mut push = total_flow - flow;
        let mut v = sink;
        while let Some((a, ei)) = prev[v] {
            push = push.min(g[a][ei].cap);
            v = a;
        }
        let mut v = sink;
        while let Some((a, ei)) = prev[v] {
            let rev = g[a][ei].rev;
            g[a][ei].cap -= push;
            g[v][rev].cap += push;
            total_cost += push as f64 * g[a][ei].cost;
            v = a;
        }
        flow += push;
    }
    total_cost / total_flow as f64
}

/// Empirical Wasserstein-2 distance between two sets of field states, each
/// flattened to one vector over all nodes and channels.
pub fn w2_distance(a: &[FieldState], b: &[FieldState]) -> Result<f64, EvalError> {
    let sa = check_set(a)?;
    let sb = check_set(b)?;
    if sa != sb {
        return Err(EvalError::ShapeMismatch(sa, sb));
    }
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let cost = Array2::from_shape_fn((small.len(), large.len()), |(i, j)| {
        sq_dist(&small[i].values, &large[j].values)
    });
    let mean_cost = if small.len() == large.len() {
        let assign = hungarian(&cost);
        assign.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum::<f64>() / small.len() as f64
    } else {
        transport_cost(&cost)
    };
    Ok(mean_cost.max(0.0).sqrt())
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// R² of `sample` against the trajectory state it correlates with best.
pub fn r2_best_match(sample: &FieldState, trajectory: &[FieldState]) -> Result<f64, EvalError> {
    let shape = check_set(trajectory)?;
    if sample.values.dim() != shape {
        return Err(EvalError::ShapeMismatch(sample.values.dim(), shape));
    }
    let s: Vec<f64> = sample.values.iter().copied().collect();
    let mut best: Option<(f64, &FieldState)> = None;
    for state in trajectory {
        let r: Vec<f64> = state.values.iter().copied().collect();
        let varies = r.iter().any(|&x| x != r[0]);
        if !varies {
            continue;
        }
        // A constant sample correlates with nothing; keep the first state.
        let c = pearson(&s, &r).unwrap_or(f64::NEG_INFINITY);
        if best.is_none_or(|(bc, _)| c > bc) {
            best = Some((c, state));
        }
    }
    let (_, reference) = best.ok_or(EvalError::ZeroVariance)?;
    let mean = reference.values.mean().expect("nonempty");
    let ss_tot: f64 = reference.values.iter().map(|x| (x - mean).powi(2)).sum();
    let ss_res = sq_dist(&sample.values, &reference.values);
    Ok(1.0 - ss_res / ss_tot)
}

/// Per-node, per-channel mean and unbiased standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeStats {
    pub mean: Array2<f64>,
    pub std: Array2<f64>,
}

pub fn per_node_stats(set: &[FieldState]) -> Result<NodeStats, EvalError> {
    let shape = check_set(set)?;
    if set.len() < 2 {
        return Err(EvalError::TooFewSamples {
            needed: 2,
            got: set.len(),
        });
    }
    let n = set.len() as f64;
    let mut mean = Array2::zeros(shape);
    for f in set {
        mean += &f.values;
    }
    mean /= n;
    let mut var = Array2::<f64>::zeros(shape);
    for f in set {
        var += &(&f.values - &mean).mapv(|d| d * d);
    }
    var /= n - 1.0;
    Ok(NodeStats {
        mean,
        std: var.mapv(f64::sqrt),
    })
}

fn channel_moments(set: &[FieldState], u: usize, v: usize) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), EvalError> {
    let (nodes, channels) = check_set(set)?;
    for c in [u, v] {
        if c >= channels {
            return Err(EvalError::MissingChannel(c));
        }
    }
    if set.len() < 2 {
        return Err(EvalError::TooFewSamples {
            needed: 2,
            got: set.len(),
        });
    }
    let n = set.len() as f64;
    let mut out = (vec![0.0; nodes], vec![0.0; nodes], vec![0.0; nodes]);
    for i in 0..nodes {
        let mu = set.iter().map(|f| f.values[[i, u]]).sum::<f64>() / n;
        let mv = set.iter().map(|f| f.values[[i, v]]).sum::<f64>() / n;
        let (mut vu, mut vv, mut cuv) = (0.0, 0.0, 0.0);
        for f in set {
            let (du, dv) = (f.values[[i, u]] - mu, f.values[[i, v]] - mv);
            vu += du * du;
            vv += dv * dv;
            cuv += du * dv;
        }
        out.0[i] = vu / n;
        out.1[i] = vv / n;
        out.2[i] = cuv / n;
    }
    Ok(out)
}

/// Turbulent kinetic energy `(var(u) + var(v)) / 2` per node, population
/// normalisation.
pub fn tke(set: &[FieldState], u: usize, v: usize) -> Result<Vec<f64>, EvalError> {
    let (vu, vv, _) = channel_moments(set, u, v)?;
    Ok(vu.iter().zip(&vv).map(|(a, b)| 0.5 * (a + b)).collect())
}

/// Reynolds shear stress `cov(u, v)` per node, population normalisation.
pub fn rss(set: &[FieldState], u: usize, v: usize) -> Result<Vec<f64>, EvalError> {
    Ok(channel_moments(set, u, v)?.2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` increasing edges.
    pub edges: Vec<f64>,
    /// Density per bin; `sum(density * width) = 1`.
    pub density: Vec<f64>,
}

impl Histogram {
    pub fn integral(&self) -> f64 {
        self.density
            .iter()
            .zip(self.edges.windows(2))
            .map(|(d, e)| d * (e[1] - e[0]))
            .sum()
    }
}

/// Density histogram of one node and channel over the set. A set with a
/// single repeated value uses the range `[v - 0.5, v + 0.5]`.
pub fn pdf_histogram(set: &[FieldState], node: usize, channel: usize, bins: usize) -> Result<Histogram, EvalError> {
    let (nodes, channels) = check_set(set)?;
    if bins < 2 {
        return Err(EvalError::TooFewBins(bins));
    }
    if node >= nodes {
        return Err(EvalError::MissingNode(node));
    }
    if channel >= channels {
        return Err(EvalError::MissingChannel(channel));
    }
    let vals: Vec<f64> = set.iter().map(|f| f.values[[node, channel]]).collect();
    let (mut lo, mut hi) = vals
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if hi <= lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in &vals {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let total = vals.len() as f64;
    Ok(Histogram {
        edges: (0..=bins).map(|b| lo + b as f64 * width).collect(),
        density: counts.iter().map(|&c| c as f64 / (total * width)).collect(),
    })
}

/// Sign coherence of single-channel fields over the nodes whose envelope
/// weight is at least a threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignReport {
    /// Mean over samples of the fraction of node pairs with equal sign.
    pub pair_agreement: f64,
    /// Fraction of samples in which all selected nodes share one sign.
    pub coherent_fraction: f64,
    /// Fraction of samples whose envelope-weighted sum is positive.
    pub positive_fraction: f64,
    pub nodes: usize,
}

pub fn sign_agreement(set: &[FieldState], envelope: &[f64], threshold: f64) -> Result<SignReport, EvalError> {
    let (nodes, _) = check_set(set)?;
    if envelope.len() != nodes {
        return Err(EvalError::ShapeMismatch((nodes, 1), (envelope.len(), 1)));
    }
    let selected: Vec<usize> = (0..nodes).filter(|&i| envelope[i] >= threshold).collect();
    let m = selected.len();
    if m < 2 {
        return Err(EvalError::TooFewSamples { needed: 2, got: m });
    }
    let pairs = (m * (m - 1) / 2) as f64;
    let (mut agree, mut coherent, mut positive) = (0.0, 0usize, 0usize);
    for f in set {
        let p = selected.iter().filter(|&&i| f.values[[i, 0]] > 0.0).count();
        let q = m - p;
        agree += ((p * p.saturating_sub(1) + q * q.saturating_sub(1)) / 2) as f64 / pairs;
        if p == 0 || q == 0 {
            coherent += 1;
        }
        let weighted: f64 = (0..nodes).map(|i| envelope[i] * f.values[[i, 0]]).sum();
        if weighted > 0.0 {
            positive += 1;
        }
    }
    let n = set.len() as f64;
    Ok(SignReport {
        pair_agreement: agree / n,
        coherent_fraction: coherent as f64 / n,
        positive_fraction: positive as f64 / n,
        nodes: m,
    })
}

/// A named metric with its values and the settings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub values: Vec<f64>,
    pub sample_counts: Vec<usize>,
    pub settings: serde_json::Value,
}

impl MetricReport {
    pub fn scalar(metric: &str, value: f64, sample_counts: Vec<usize>, settings: serde_json::Value) -> Self {
        Self {
            metric: metric.to_string(),
            values: vec![value],
            sample_counts,
            settings,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// `metric,index,value` rows.
pub fn reports_to_csv(reports: &[MetricReport]) -> String {
    let mut s = String::from("metric,index,value\n");
    for r in reports {
        for (i, v) in r.values.iter().enumerate() {
            s.push_str(&format!("{},{},{:.12e}\n", r.metric, i, v));
        }
    }
    s
}
