//! Mesh graphs, field snapshots, synthetic datasets with known statistics,
//! per-channel normalization and the JSON dataset format.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numcore::rng;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    IndexOutOfRange(usize, usize, usize),
    #[error("duplicate edge {{{0}, {1}}}")]
    DuplicateEdge(usize, usize),
    #[error("self-loop at node {0}")]
    SelfLoop(usize),
    #[error("positions have {0} rows but conditions have {1}")]
    ConditionRows(usize, usize),
    #[error("grid must be at least 2x2, got {0}x{1}")]
    DegenerateGrid(usize, usize),
    #[error("invalid generator parameter: {0}")]
    BadParameter(String),
    #[error("channel {0} has zero variance")]
    ZeroVariance(usize),
    #[error("field has {found} rows, graph has {expected} nodes")]
    FieldRows { expected: usize, found: usize },
    #[error("dataset has no snapshots")]
    Empty,
    #[error("malformed dataset: {0}")]
    Malformed(String),
}

/// Nodes with positions and condition features, connected by directed edges
/// that always come in both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshGraph {
    positions: Array2<f64>,
    undirected: Vec<(usize, usize)>,
    edges: Vec<(usize, usize)>,
    node_conditions: Array2<f64>,
    edge_displacements: Array2<f64>,
}

impl MeshGraph {
    /// Materializes both directions of every undirected edge, in input order:
    /// `{a, b}` becomes `(a, b), (b, a)`.
    pub fn new(
        positions: Array2<f64>,
        undirected_edges: &[(usize, usize)],
        node_conditions: Array2<f64>,
    ) -> Result<Self, MeshError> {
        let n = positions.nrows();
        if node_conditions.nrows() != n {
            return Err(MeshError::ConditionRows(n, node_conditions.nrows()));
        }
        let mut seen = HashSet::new();
        let mut edges = Vec::with_capacity(2 * undirected_edges.len());
        for &(a, b) in undirected_edges {
            if a >= n || b >= n {
                return Err(MeshError::IndexOutOfRange(a, b, n));
            }
            if a == b {
                return Err(MeshError::SelfLoop(a));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(MeshError::DuplicateEdge(a, b));
            }
            edges.push((a, b));
            edges.push((b, a));
        }
        let d = positions.ncols();
        let mut disp = Array2::zeros((edges.len(), d));
        for (e, &(i, j)) in edges.iter().enumerate() {
            let diff = &positions.row(j) - &positions.row(i);
            disp.row_mut(e).assign(&diff);
        }
        Ok(Self {
            positions,
            undirected: undirected_edges.to_vec(),
            edges,
            node_conditions,
            edge_displacements: disp,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.positions.nrows()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn dim(&self) -> usize {
        self.positions.ncols()
    }

    pub fn num_conditions(&self) -> usize {
        self.node_conditions.ncols()
    }

    pub fn positions(&self) -> &Array2<f64> {
        &self.positions
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn undirected_edges(&self) -> &[(usize, usize)] {
        &self.undirected
    }

    pub fn node_conditions(&self) -> &Array2<f64> {
        &self.node_conditions
    }

    pub fn edge_displacements(&self) -> &Array2<f64> {
        &self.edge_displacements
    }

    pub fn senders(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.0).collect()
    }

    pub fn receivers(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.1).collect()
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.num_nodes()];
        for &(_, j) in &self.edges {
            d[j] += 1;
        }
        d
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.num_nodes()];
        for &(i, _) in &self.edges {
            d[i] += 1;
        }
        d
    }

    /// Axis-aligned bounding box as `(min, max)` per coordinate.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.positions
            .columns()
            .into_iter()
            .map(|c| {
                c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                })
            })
            .collect()
    }

    /// Gaussian envelope `exp(-|x - x0|^2 / l^2)` with `x0` the domain
    /// center and `l` a quarter of the domain diagonal.
    pub fn envelope(&self) -> Vec<f64> {
        let b = self.bounds();
        let center: Vec<f64> = b.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
        let diag2: f64 = b.iter().map(|(lo, hi)| (hi - lo).powi(2)).sum();
        let ell2 = 0.0625 * diag2;
        self.positions
            .rows()
            .into_iter()
            .map(|p| {
                let r2: f64 = p.iter().zip(&center).map(|(x, c)| (x - c).powi(2)).sum();
                (-r2 / ell2).exp()
            })
            .collect()
    }

    /// Returns the same graph with nodes relabeled: new node `k` is old node
    /// `perm[k]`. Edge order follows the original undirected list.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, MeshError> {
        let n = self.num_nodes();
        let mut inv = vec![0; n];
        for (k, &old) in perm.iter().enumerate() {
            inv[old] = k;
        }
        let positions = self.positions.select(Axis(0), perm);
        let conds = self.node_conditions.select(Axis(0), perm);
        let und: Vec<_> = self.undirected.iter().map(|&(a, b)| (inv[a], inv[b])).collect();
        Self::new(positions, &und, conds)
    }
}

/// Which space a field lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Physical,
    Latent,
}

/// Per-node channel values, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub values: Array2<f64>,
    pub space: Space,
}

impl FieldState {
    pub fn physical(values: Array2<f64>) -> Self {
        Self {
            values,
            space: Space::Physical,
        }
    }

    pub fn latent(values: Array2<f64>) -> Self {
        Self {
            values,
            space: Space::Latent,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.values.nrows()
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn check_against(&self, graph: &MeshGraph) -> Result<(), MeshError> {
        if self.values.nrows() != graph.num_nodes() {
            return Err(MeshError::FieldRows {
                expected: graph.num_nodes(),
                found: self.values.nrows(),
            });
        }
        if !self.values.iter().all(|v| v.is_finite()) {
            return Err(MeshError::Malformed("non-finite field value".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Population mean and standard deviation per channel over every node of
    /// every snapshot.
    pub fn compute<'a>(fields: impl IntoIterator<Item = &'a FieldState>) -> Result<Self, MeshError> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sum2: Vec<f64> = Vec::new();
        let mut count = 0usize;
        let fields: Vec<_> = fields.into_iter().collect();
        if fields.is_empty() {
            return Err(MeshError::Empty);
        }
        let c = fields[0].channels();
        sum.resize(c, 0.0);
        for f in &fields {
            for row in f.values.rows() {
                for (k, v) in row.iter().enumerate() {
                    sum[k] += v;
                }
                count += 1;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        sum2.resize(c, 0.0);
        for f in &fields {
            for row in f.values.rows() {
                for (k, v) in row.iter().enumerate() {
                    sum2[k] += (v - mean[k]).powi(2);
                }
            }
        }
        let std = sum2.iter().map(|s| (s / count as f64).sqrt()).collect();
        Ok(Self { mean, std })
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        match self.std.iter().position(|s| !(*s > 0.0)) {
            Some(k) => Err(MeshError::ZeroVariance(k)),
            None => Ok(()),
        }
    }

    pub fn apply(&self, values: &Array2<f64>) -> Array2<f64> {
        let mut out = values.clone();
        for mut row in out.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[k]) / self.std[k];
            }
        }
        out
    }

    pub fn invert(&self, values: &Array2<f64>) -> Array2<f64> {
        let mut out = values.clone();
        for mut row in out.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = *v * self.std[k] + self.mean[k];
            }
        }
        out
    }
}

/// One mesh and its snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct System {
    pub graph: MeshGraph,
    pub snapshots: Vec<FieldState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub systems: Vec<System>,
    /// Statistics of the un-normalized data; used by [`denormalize`].
    pub channel_stats: ChannelStats,
    pub normalized: bool,
    pub space: Space,
}

impl Dataset {
    /// Builds a dataset and computes its channel statistics.
    pub fn from_systems(systems: Vec<System>, space: Space) -> Result<Self, MeshError> {
        for s in &systems {
            for f in &s.snapshots {
                f.check_against(&s.graph)?;
            }
        }
        let stats = ChannelStats::compute(systems.iter().flat_map(|s| &s.snapshots))?;
        Ok(Self {
            systems,
            channel_stats: stats,
            normalized: false,
            space,
        })
    }

    pub fn channels(&self) -> usize {
        self.systems
            .iter()
            .flat_map(|s| s.snapshots.first())
            .map(|f| f.channels())
            .next()
            .unwrap_or(0)
    }

    pub fn num_snapshots(&self) -> usize {
        self.systems.iter().map(|s| s.snapshots.len()).sum()
    }

    /// Snapshots of `system` as a row-concatenated list of references.
    pub fn snapshots(&self, system: usize) -> &[FieldState] {
        &self.systems[system].snapshots
    }

    pub fn save_json(&self, path: &Path) -> Result<(), crate::Error> {
        let file = DatasetFile::from(self);
        fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self, crate::Error> {
        let file: DatasetFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        Ok(file.into_dataset()?)
    }
}

fn grid_mesh(nx: usize, ny: usize) -> Result<(Array2<f64>, Vec<(usize, usize)>), MeshError> {
    if nx < 2 || ny < 2 {
        return Err(MeshError::DegenerateGrid(nx, ny));
    }
    let idx = |i: usize, j: usize| j * nx + i;
    let mut pos = Array2::zeros((nx * ny, 2));
    for j in 0..ny {
        for i in 0..nx {
            pos[[idx(i, j), 0]] = i as f64 / (nx - 1) as f64;
            pos[[idx(i, j), 1]] = j as f64 / (ny - 1) as f64;
        }
    }
    let mut edges = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            if i + 1 < nx {
                edges.push((idx(i, j), idx(i + 1, j)));
            }
            if j + 1 < ny {
                edges.push((idx(i, j), idx(i, j + 1)));
            }
            if i + 1 < nx && j + 1 < ny {
                edges.push((idx(i, j), idx(i + 1, j + 1)));
            }
        }
    }
    Ok((pos, edges))
}

/// Unit-square grid, row-major node order, every cell split along the same
/// diagonal.
pub fn triangulated_grid(nx: usize, ny: usize, conditions: &[f64]) -> Result<MeshGraph, MeshError> {
    let (pos, edges) = grid_mesh(nx, ny)?;
    let n = pos.nrows();
    let conds = Array2::from_shape_fn((n, conditions.len()), |(_, k)| conditions[k]);
    MeshGraph::new(pos, &edges, conds)
}

/// Quasi-periodic travelling wave under a Gaussian envelope:
/// `s_i = a sin(2 pi theta + 2 pi x_i / L) g(x_i)` with `theta ~ U[0, 1)`.
/// Per-node marginal: mean 0, standard deviation `a g(x_i) / sqrt(2)`.
pub fn gen_quasiperiodic(
    grid_nx: usize,
    grid_ny: usize,
    amplitude: f64,
    num_snapshots: usize,
    seed: u64,
) -> Result<Dataset, MeshError> {
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(MeshError::BadParameter(format!("amplitude {amplitude}")));
    }
    let graph = triangulated_grid(grid_nx, grid_ny, &[amplitude])?;
    let env = graph.envelope();
    let b = graph.bounds();
    let (x_lo, width) = (b[0].0, b[0].1 - b[0].0);
    let phase: Vec<f64> = graph
        .positions()
        .column(0)
        .iter()
        .map(|x| 2.0 * PI * (x - x_lo) / width)
        .collect();
    let snapshots = (0..num_snapshots)
        .map(|s| {
            let mut r = rng::stream(seed, "quasiperiodic", s as u64);
            let theta: f64 = r.gen();
            let vals = Array2::from_shape_fn((graph.num_nodes(), 1), |(i, _)| {
                amplitude * (2.0 * PI * theta + phase[i]).sin() * env[i]
            });
            FieldState::physical(vals)
        })
        .collect();
    Dataset::from_systems(vec![System { graph, snapshots }], Space::Physical)
}

/// Two mirror-image modes sharing one sign per snapshot:
/// `s_i = sigma m g(x_i) + eps_i`, `sigma = +-1`, `eps_i ~ N(0, noise^2)`.
pub fn gen_bimodal(
    grid_nx: usize,
    grid_ny: usize,
    mode: f64,
    noise_sigma: f64,
    num_snapshots: usize,
    seed: u64,
) -> Result<Dataset, MeshError> {
    if !(mode > 0.0) {
        return Err(MeshError::BadParameter(format!("mode {mode}")));
    }
    if !(noise_sigma >= 0.0) {
        return Err(MeshError::BadParameter(format!("noise {noise_sigma}")));
    }
    let graph = triangulated_grid(grid_nx, grid_ny, &[mode])?;
    let env = graph.envelope();
    let snapshots = (0..num_snapshots)
        .map(|s| {
            let mut r = rng::stream(seed, "bimodal", s as u64);
            let sign = if r.gen::<bool>() { 1.0 } else { -1.0 };
            let vals = Array2::from_shape_fn((graph.num_nodes(), 1), |(i, _)| {
                let eps: f64 = r.sample(StandardNormal);
                sign * mode * env[i] + noise_sigma * eps
            });
            FieldState::physical(vals)
        })
        .collect();
    Dataset::from_systems(vec![System { graph, snapshots }], Space::Physical)
}

/// Standardizes every channel over all systems and snapshots. The returned
/// dataset keeps the statistics needed to undo the transform.
pub fn normalize(dataset: &Dataset) -> Result<Dataset, MeshError> {
    let stats = ChannelStats::compute(dataset.systems.iter().flat_map(|s| &s.snapshots))?;
    stats.validate()?;
    let systems = dataset
        .systems
        .iter()
        .map(|s| System {
            graph: s.graph.clone(),
            snapshots: s
                .snapshots
                .iter()
                .map(|f| FieldState {
                    values: stats.apply(&f.values),
                    space: f.space,
                })
                .collect(),
        })
        .collect();
    Ok(Dataset {
        systems,
        channel_stats: stats,
        normalized: true,
        space: dataset.space,
    })
}

pub fn denormalize(field: &FieldState, stats: &ChannelStats) -> Result<FieldState, MeshError> {
    stats.validate()?;
    Ok(FieldState {
        values: stats.invert(&field.values),
        space: field.space,
    })
}

pub const DATASET_FORMAT: &str = "sarmesh-dataset-v1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    format: String,
    space: Space,
    normalized: bool,
    channel_stats: ChannelStats,
    systems: Vec<SystemFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemFile {
    positions: Vec<Vec<f64>>,
    edges: Vec<[usize; 2]>,
    conditions: Vec<Vec<f64>>,
    /// `snapshots[s][channel][node]`.
    snapshots: Vec<Vec<Vec<f64>>>,
}

fn rows_of(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn array_from_rows(rows: &[Vec<f64>], cols_if_empty: usize) -> Result<Array2<f64>, MeshError> {
    let c = rows.first().map_or(cols_if_empty, |r| r.len());
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if rows.iter().any(|r| r.len() != c) {
        return Err(MeshError::Malformed("ragged array".into()));
    }
    Array2::from_shape_vec((rows.len(), c), flat).map_err(|e| MeshError::Malformed(e.to_string()))
}

impl From<&Dataset> for DatasetFile {
    fn from(d: &Dataset) -> Self {
        Self {
            format: DATASET_FORMAT.to_string(),
            space: d.space,
            normalized: d.normalized,
            channel_stats: d.channel_stats.clone(),
            systems: d
                .systems
                .iter()
                .map(|s| SystemFile {
                    positions: rows_of(s.graph.positions()),
                    edges: s.graph.undirected_edges().iter().map(|&(a, b)| [a, b]).collect(),
                    conditions: rows_of(s.graph.node_conditions()),
                    snapshots: s.snapshots.iter().map(|f| rows_of(&f.values.t().to_owned())).collect(),
                })
                .collect(),
        }
    }
}

impl DatasetFile {
    fn into_dataset(self) -> Result<Dataset, MeshError> {
        if self.format != DATASET_FORMAT {
            return Err(MeshError::Malformed(format!("unknown format '{}'", self.format)));
        }
        let mut systems = Vec::with_capacity(self.systems.len());
        for s in self.systems {
            let positions = array_from_rows(&s.positions, 0)?;
            let conds = array_from_rows(&s.conditions, 0)?;
            let edges: Vec<_> = s.edges.iter().map(|e| (e[0], e[1])).collect();
            let graph = MeshGraph::new(positions, &edges, conds)?;
            let snapshots = s
                .snapshots
                .iter()
                .map(|chans| {
                    let by_channel = array_from_rows(chans, 0)?;
                    let f = FieldState {
                        values: by_channel.t().to_owned(),
                        space: self.space,
                    };
                    f.check_against(&graph)?;
                    Ok(f)
                })
                .collect::<Result<Vec<_>, MeshError>>()?;
            systems.push(System { graph, snapshots });
        }
        Ok(Dataset {
            systems,
            channel_stats: self.channel_stats,
            normalized: self.normalized,
            space: self.space,
        })
    }
}
