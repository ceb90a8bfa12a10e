//! Checks shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use sarmesh::eval::w2_distance;
use sarmesh::hierarchy::{coarsen_edges, guillard_mask, ScaleHierarchy};
use sarmesh::meshgraph::{triangulated_grid, ChannelStats, FieldState, MeshGraph};
use sarmesh::numcore::rng::{normal_matrix, stream};
use sarmesh::numcore::{ParamBuilder, ParamStore, Tape, Var};
use sarmesh::sar::{fm_loss, SarConfig, SarContext, SarModel};
use sarmesh::transolver::{AdaLnBlock, AttentionConfig, PhysicsAttention, TransolverBlock};
use sarmesh::vae::{vae_loss, EdgeIndex, MpLayer, VaeConfig, VaeModel};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-5;

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if diff == 0.0 {
        0.0
    } else {
        diff / na.max(nb)
    }
}

#[derive(Debug, Clone)]
pub struct GradCase {
    pub name: String,
    pub rel_err: f64,
    pub checked: usize,
}

impl GradCase {
    pub fn ok(&self) -> bool {
        self.rel_err < FD_TOL && self.checked > 0
    }
}

/// Random readout so every output entry reaches the loss.
fn readout(t: &Tape, out: Var, seed: u64) -> Var {
    let (r, c) = t.shape(out);
    let w = normal_matrix(&mut stream(seed, "readout", 0), r, c, 1.0);
    t.sum(t.mul(out, t.constant(w)))
}

/// Central differences with respect to tape inputs.
pub fn fd_inputs(name: &str, inputs: &[Array2<f64>], f: impl Fn(&Tape, &[Var]) -> Var) -> GradCase {
    fd_inputs_on(&ParamStore::new(), name, inputs, f)
}

/// As [`fd_inputs`], with `store` loaded on every tape.
pub fn fd_inputs_on(
    store: &ParamStore,
    name: &str,
    inputs: &[Array2<f64>],
    f: impl Fn(&Tape, &[Var]) -> Var,
) -> GradCase {
    let eval = |xs: &[Array2<f64>]| {
        let t = Tape::with_params(store);
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let l = f(&t, &vs);
        t.scalar_value(l)
    };
    let t = Tape::with_params(store);
    let vs: Vec<Var> = inputs.iter().map(|x| t.input(x.clone())).collect();
    let loss = f(&t, &vs);
    let grads = t.backward(loss).expect("scalar loss");
    let (mut ana, mut num) = (Vec::new(), Vec::new());
    let mut work = inputs.to_vec();
    for (k, v) in vs.iter().enumerate() {
        let g = grads.wrt(*v).cloned().unwrap_or_else(|| Array2::zeros(inputs[k].dim()));
        for idx in 0..inputs[k].len() {
            let (i, j) = (idx / inputs[k].ncols(), idx % inputs[k].ncols());
            let x0 = work[k][[i, j]];
            work[k][[i, j]] = x0 + FD_STEP;
            let fp = eval(&work);
            work[k][[i, j]] = x0 - FD_STEP;
            let fm = eval(&work);
            work[k][[i, j]] = x0;
            num.push((fp - fm) / (2.0 * FD_STEP));
            ana.push(g[[i, j]]);
        }
    }
    GradCase {
        name: name.to_string(),
        rel_err: rel_err(&ana, &num),
        checked: ana.len(),
    }
}

/// Central differences with respect to parameters, at most `per_tensor`
/// random coordinates of every parameter tensor.
pub fn fd_params(name: &str, store: &ParamStore, per_tensor: usize, seed: u64, f: impl Fn(&Tape) -> Var) -> GradCase {
    let t = Tape::with_params(store);
    let loss = f(&t);
    let grads = t.backward(loss).expect("scalar loss").param_grads(store);
    let mut work = store.clone();
    let mut r = stream(seed, "fd_params", 0);
    let (mut ana, mut num) = (Vec::new(), Vec::new());
    for id in store.ids() {
        let (rows, cols) = store.value(id).dim();
        let mut picks: Vec<usize> = (0..rows * cols).collect();
        picks.shuffle(&mut r);
        picks.truncate(per_tensor);
        for p in picks {
            let (i, j) = (p / cols, p % cols);
            let x0 = work.value(id)[[i, j]];
            let at = |x: f64, w: &mut ParamStore| {
                w.value_mut(id)[[i, j]] = x;
                let t = Tape::with_params(w);
                let l = f(&t);
                t.scalar_value(l)
            };
            let fp = at(x0 + FD_STEP, &mut work);
            let fm = at(x0 - FD_STEP, &mut work);
            work.value_mut(id)[[i, j]] = x0;
            num.push((fp - fm) / (2.0 * FD_STEP));
            ana.push(grads.get(id).map_or(0.0, |g| g[[i, j]]));
        }
    }
    GradCase {
        name: name.to_string(),
        rel_err: rel_err(&ana, &num),
        checked: ana.len(),
    }
}

/// Adds N(0, std^2) noise to every parameter, moving zero-initialised gates
/// away from the identity.
pub fn jitter(store: &mut ParamStore, std: f64, seed: u64) {
    let mut r = stream(seed, "jitter", 0);
    for id in store.ids().collect::<Vec<_>>() {
        let v = store.value_mut(id);
        *v += &normal_matrix(&mut r, v.nrows(), v.ncols(), std);
    }
}

fn rand(seed: u64, rows: usize, cols: usize) -> Array2<f64> {
    normal_matrix(&mut stream(seed, "fd_input", 0), rows, cols, 1.0)
}

fn positive(seed: u64, rows: usize, cols: usize) -> Array2<f64> {
    let mut r = stream(seed, "fd_positive", 0);
    Array2::from_shape_fn((rows, cols), |_| r.gen_range(0.5..1.5))
}

/// Every tape primitive on random inputs.
pub fn primitive_cases() -> Vec<GradCase> {
    let a = rand(1, 4, 3);
    let b = rand(2, 4, 3);
    let row = rand(3, 1, 3);
    let col = rand(4, 4, 1);
    let m = rand(5, 3, 5);
    let ro = |t: &Tape, v: Var| readout(t, v, 99);
    vec![
        fd_inputs("add", &[a.clone(), b.clone()], |t, v| ro(t, t.add(v[0], v[1]))),
        fd_inputs("sub", &[a.clone(), b.clone()], |t, v| ro(t, t.sub(v[0], v[1]))),
        fd_inputs("mul", &[a.clone(), b.clone()], |t, v| ro(t, t.mul(v[0], v[1]))),
        fd_inputs("add_row", &[a.clone(), row.clone()], |t, v| {
            ro(t, t.add_row(v[0], v[1]))
        }),
        fd_inputs("mul_row", &[a.clone(), row.clone()], |t, v| {
            ro(t, t.mul_row(v[0], v[1]))
        }),
        fd_inputs("mul_col", &[a.clone(), col.clone()], |t, v| {
            ro(t, t.mul_col(v[0], v[1]))
        }),
        fd_inputs("div_col_guarded", &[a.clone(), positive(6, 4, 1)], |t, v| {
            ro(t, t.div_col_guarded(v[0], v[1]))
        }),
        fd_inputs("scale", std::slice::from_ref(&a), |t, v| ro(t, t.scale(v[0], -1.7))),
        fd_inputs("neg", std::slice::from_ref(&a), |t, v| ro(t, t.neg(v[0]))),
        fd_inputs("matmul", &[a.clone(), m.clone()], |t, v| ro(t, t.matmul(v[0], v[1]))),
        fd_inputs("transpose", std::slice::from_ref(&a), |t, v| ro(t, t.transpose(v[0]))),
        fd_inputs("concat_cols", &[a.clone(), col.clone()], |t, v| {
            ro(t, t.concat_cols(&[v[0], v[1]]))
        }),
        fd_inputs("concat_rows", &[a.clone(), row.clone()], |t, v| {
            ro(t, t.concat_rows(&[v[0], v[1]]))
        }),
        fd_inputs("slice_cols", std::slice::from_ref(&a), |t, v| {
            ro(t, t.slice_cols(v[0], 1, 2))
        }),
        fd_inputs("slice_rows", std::slice::from_ref(&a), |t, v| {
            ro(t, t.slice_rows(v[0], 1, 2))
        }),
        fd_inputs("gather_rows", std::slice::from_ref(&a), |t, v| {
            ro(t, t.gather_rows(v[0], &[3, 0, 3, 1, 1]))
        }),
        fd_inputs("scatter_add_rows", std::slice::from_ref(&a), |t, v| {
            ro(t, t.scatter_add_rows(v[0], &[2, 0, 2, 4], 5))
        }),
        fd_inputs("softmax_rows", std::slice::from_ref(&a), |t, v| {
            ro(t, t.softmax_rows(v[0]))
        }),
        fd_inputs("layer_norm", std::slice::from_ref(&a), |t, v| ro(t, t.layer_norm(v[0]))),
        fd_inputs("selu", std::slice::from_ref(&a), |t, v| ro(t, t.selu(v[0]))),
        fd_inputs("gelu", std::slice::from_ref(&a), |t, v| ro(t, t.gelu(v[0]))),
        fd_inputs("exp", std::slice::from_ref(&a), |t, v| ro(t, t.exp(v[0]))),
        fd_inputs("square", std::slice::from_ref(&a), |t, v| ro(t, t.square(v[0]))),
        fd_inputs("sum", std::slice::from_ref(&a), |t, v| t.sum(v[0])),
        fd_inputs("mean", std::slice::from_ref(&a), |t, v| t.mean(v[0])),
        fd_inputs("col_sum", std::slice::from_ref(&a), |t, v| ro(t, t.col_sum(v[0]))),
        fd_inputs("mse", &[a, b], |t, v| t.mse(v[0], v[1])),
    ]
}

/// Layer and loss level checks on random instances of at most 12 nodes.
pub fn module_cases() -> Vec<GradCase> {
    let att = AttentionConfig {
        width: 8,
        heads: 2,
        slices: 3,
    };
    let n = 12;
    let mut cases = Vec::new();

    let mut store = ParamStore::new();
    let mut r = stream(11, "fd_init", 0);
    let pa = PhysicsAttention::new(&mut ParamBuilder::new(&mut store, &mut r), "pa", att).unwrap();
    jitter(&mut store, 0.3, 1);
    let x = rand(12, n, 8);
    cases.push(fd_params("physics attention (params)", &store, 12, 1, |t| {
        readout(t, pa.forward(t, t.constant(x.clone())), 5)
    }));
    cases.push(fd_inputs_on(
        &store,
        "physics attention (input)",
        std::slice::from_ref(&x),
        |t, v| readout(t, pa.forward(t, v[0]), 5),
    ));

    let mut store = ParamStore::new();
    let mut r = stream(13, "fd_init", 0);
    let blk = TransolverBlock::new(&mut ParamBuilder::new(&mut store, &mut r), "blk", att).unwrap();
    jitter(&mut store, 0.3, 2);
    cases.push(fd_params("transolver block", &store, 12, 2, |t| {
        readout(t, blk.forward(t, t.constant(x.clone())), 6)
    }));

    let mut store = ParamStore::new();
    let mut r = stream(14, "fd_init", 0);
    let ada = AdaLnBlock::new(&mut ParamBuilder::new(&mut store, &mut r), "ada", att, 6, false).unwrap();
    jitter(&mut store, 0.3, 3);
    let emb = rand(15, 1, 6);
    cases.push(fd_params("adaln-zero block", &store, 12, 3, |t| {
        readout(t, ada.forward(t, t.constant(x.clone()), t.constant(emb.clone())), 7)
    }));

    let g = triangulated_grid(3, 4, &[0.3]).unwrap();
    let edges = EdgeIndex::from_graph(&g);
    let mut store = ParamStore::new();
    let mut r = stream(16, "fd_init", 0);
    let mp = MpLayer::new(&mut ParamBuilder::new(&mut store, &mut r), "mp", 4);
    jitter(&mut store, 0.2, 4);
    let v = rand(17, n, 4);
    let e = rand(18, edges.num_edges(), 4);
    cases.push(fd_params("message passing layer", &store, 12, 4, |t| {
        let (v2, e2) = mp.forward(t, t.constant(v.clone()), t.constant(e.clone()), &edges);
        t.add(readout(t, v2, 8), readout(t, e2, 9))
    }));

    let vae = VaeModel::new(VaeConfig {
        channels: 1,
        dim: 2,
        width: 4,
        latent: 1,
        seed: 3,
    })
    .unwrap();
    let xf = rand(19, n, 1);
    let eps = rand(20, n, 1);
    let noise = rand(21, n, 1) * 0.01;
    cases.push(fd_params("vae loss", &vae.params, 8, 5, |t| {
        let xv = t.constant(xf.clone());
        let out = vae.forward_on(t, xv, &edges, &eps, &noise);
        vae_loss(t, xv, out.reconstruction, out.mu, out.log_sigma)
    }));

    let (mut sar, ctx) = tiny_sar(&g, 3, false);
    jitter(&mut sar.params, 0.1, 6);
    let target = rand(22, n, 1);
    let store = sar.params.clone();
    for k in 1..=3 {
        cases.push(fd_params(
            &format!("fm_loss (scale {k})"),
            &store,
            6,
            6 + k as u64,
            |t| fm_loss(&sar, t, &ctx, &target, k, 17, 0.01),
        ));
    }
    cases
}

/// Width-8 SAR model on the given mesh.
pub fn tiny_sar(g: &MeshGraph, num_scales: usize, latent: bool) -> (SarModel, SarContext) {
    let config = SarConfig {
        channels: 1,
        dim: 2,
        num_conditions: g.num_conditions(),
        num_scales,
        width: 8,
        emb_width: 8,
        heads: 2,
        slices: 4,
        cond_layers: 1,
        ar_layers: 1,
        sampler_layers: 1,
        latent_mode: latent,
        seed: 5,
        ..SarConfig::default()
    };
    let model = SarModel::new(config, None, ChannelStats::identity(1)).unwrap();
    let ctx = SarContext::new(g, num_scales).unwrap();
    (model, ctx)
}

/// All gradient checks of the suite.
pub fn gradient_suite() -> Vec<GradCase> {
    let mut cases = primitive_cases();
    cases.extend(module_cases());
    cases
}

/// Jittered `nx x ny` grid with a random diagonal per cell and randomly
/// permuted node ids.
pub fn random_mesh(r: &mut ChaCha8Rng, nx: usize, ny: usize) -> MeshGraph {
    let n = nx * ny;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(r);
    let id = |i: usize, j: usize| perm[j * nx + i];
    let mut pos = Array2::zeros((n, 2));
    for j in 0..ny {
        for i in 0..nx {
            pos[[id(i, j), 0]] = i as f64 + r.gen_range(-0.3..0.3);
            pos[[id(i, j), 1]] = j as f64 + r.gen_range(-0.3..0.3);
        }
    }
    let mut edges = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            if i + 1 < nx {
                edges.push((id(i, j), id(i + 1, j)));
            }
            if j + 1 < ny {
                edges.push((id(i, j), id(i, j + 1)));
            }
            if i + 1 < nx && j + 1 < ny {
                if r.gen_bool(0.5) {
                    edges.push((id(i, j), id(i + 1, j + 1)));
                } else {
                    edges.push((id(i + 1, j), id(i, j + 1)));
                }
            }
        }
    }
    MeshGraph::new(pos, &edges, Array2::zeros((n, 1))).unwrap()
}

/// Random grid dimensions with 16 to 400 nodes.
pub fn random_dims(r: &mut ChaCha8Rng) -> (usize, usize) {
    loop {
        let (nx, ny) = (r.gen_range(2..=40), r.gen_range(2..=40));
        if (16..=400).contains(&(nx * ny)) {
            return (nx, ny);
        }
    }
}

/// Checks one hierarchy against every structural invariant; returns a
/// description of the first violation.
pub fn check_hierarchy(g: &MeshGraph, h: &ScaleHierarchy) -> Result<(), String> {
    let n = g.num_nodes();
    let k = h.num_scales();
    let mut seen = vec![0usize; n];
    for (idx, part) in h.partitions().iter().enumerate() {
        for &i in part {
            seen[i] += 1;
            if h.scale_of(i) != idx + 1 {
                return Err(format!(
                    "node {i} listed in S_{} but labelled {}",
                    idx + 1,
                    h.scale_of(i)
                ));
            }
        }
    }
    if let Some(i) = seen.iter().position(|&c| c != 1) {
        return Err(format!("node {i} appears in {} partitions", seen[i]));
    }
    for (round, mask) in h.kept_masks().iter().enumerate() {
        let nodes = &h.level_nodes()[round];
        let local: std::collections::HashMap<usize, usize> =
            nodes.iter().enumerate().map(|(l, &gid)| (gid, l)).collect();
        let mut has_kept_nbr = vec![false; nodes.len()];
        for &(a, b) in &h.level_edges()[round] {
            let (la, lb) = (local[&a], local[&b]);
            if mask[la] && mask[lb] {
                return Err(format!("round {}: kept nodes {a} and {b} are adjacent", round + 1));
            }
            if mask[la] {
                has_kept_nbr[lb] = true;
            }
        }
        if let Some(l) = (0..nodes.len()).find(|&l| !mask[l] && !has_kept_nbr[l]) {
            return Err(format!(
                "round {}: dropped node {} has no kept neighbour",
                round + 1,
                nodes[l]
            ));
        }
    }
    if k > 1 && h.level_nodes().last().unwrap() != h.partition(1) {
        return Err("S_1 is not the set of final survivors".into());
    }
    Ok(())
}

pub fn strictly_increasing(sizes: &[usize]) -> bool {
    sizes.windows(2).all(|w| w[0] < w[1])
}

/// Delaunay triangulation of `n` uniform points in the unit square.
pub fn delaunay_mesh(r: &mut ChaCha8Rng, n: usize) -> MeshGraph {
    let pts: Vec<delaunator::Point> = (0..n).map(|_| delaunator::Point { x: r.gen(), y: r.gen() }).collect();
    let t = delaunator::triangulate(&pts);
    let mut edges = std::collections::BTreeSet::new();
    for tri in t.triangles.chunks(3) {
        for (a, b) in [(tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])] {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    let edges: Vec<(usize, usize)> = edges.into_iter().collect();
    let mut pos = Array2::zeros((n, 2));
    for (i, p) in pts.iter().enumerate() {
        pos[[i, 0]] = p.x;
        pos[[i, 1]] = p.y;
    }
    MeshGraph::new(pos, &edges, Array2::zeros((n, 1))).unwrap()
}

pub struct HierarchyRun {
    pub checked: usize,
    /// Hierarchies whose partition sizes are not strictly increasing.
    pub unordered: Vec<String>,
}

/// `count` random Delaunay meshes of 16 to 400 nodes, every K in {1, 2, 3},
/// each built twice. Structural violations are errors; size ordering is
/// collected separately.
pub fn hierarchy_invariants(count: usize, seed: u64) -> Result<HierarchyRun, String> {
    let mut r = stream(seed, "random_mesh", 0);
    let mut run = HierarchyRun {
        checked: 0,
        unordered: Vec::new(),
    };
    for m in 0..count {
        let n = r.gen_range(16..=400);
        let g = delaunay_mesh(&mut r, n);
        for k in 1..=3 {
            let h = ScaleHierarchy::build(&g, k).map_err(|e| format!("mesh {m} (n={n}), K={k}: {e}"))?;
            check_hierarchy(&g, &h).map_err(|e| format!("mesh {m} (n={n}), K={k}: {e}"))?;
            if ScaleHierarchy::build(&g, k).unwrap() != h {
                return Err(format!("mesh {m}: rebuild differs for K={k}"));
            }
            if !strictly_increasing(&h.sizes()) {
                run.unordered.push(format!("n={n} K={k} {:?}", h.sizes()));
            }
            run.checked += 1;
        }
    }
    Ok(run)
}

/// Hand-traced coarsening outcomes on the 4-node path and the triangle.
pub fn coarsening_oracle() -> Result<(), String> {
    let both =
        |und: &[(usize, usize)]| -> Vec<(usize, usize)> { und.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect() };
    let path = both(&[(0, 1), (1, 2), (2, 3)]);
    let mask = guillard_mask(&path, 4).map_err(|e| e.to_string())?;
    if mask != [true, false, true, false] {
        return Err(format!("path-of-4 kept mask {mask:?}, expected [T, F, T, F]"));
    }
    let next = coarsen_edges(&path, &mask);
    if next != [(0, 2), (2, 0)] {
        return Err(format!("path-of-4 coarse edges {next:?}, expected [(0,2),(2,0)]"));
    }
    let h = ScaleHierarchy::from_edges(&path, 4, 2).map_err(|e| e.to_string())?;
    if h.partition(1) != [0, 2] || h.partition(2) != [1, 3] {
        return Err(format!("path-of-4 K=2 partitions {:?}", h.partitions()));
    }
    let k3 = both(&[(0, 1), (1, 2), (0, 2)]);
    let mask = guillard_mask(&k3, 3).map_err(|e| e.to_string())?;
    if mask != [true, false, false] {
        return Err(format!("K3 kept mask {mask:?}, expected [T, F, F]"));
    }
    if !coarsen_edges(&k3, &mask).is_empty() {
        return Err("K3 coarse level should have no edges".into());
    }
    Ok(())
}

fn gaussian_set(seed: u64, mean: f64, std: f64, count: usize) -> Vec<FieldState> {
    let mut r = stream(seed, "w2_oracle", 0);
    let d = Normal::new(mean, std).unwrap();
    (0..count)
        .map(|_| FieldState::physical(Array2::from_elem((1, 1), d.sample(&mut r))))
        .collect()
}

/// Worst relative deviation of 500-vs-500 empirical W2 from the closed form
/// over 20 seeds, for N(0, 1) against N(6, 1.5^2).
pub fn w2_gaussian_oracle() -> (f64, f64) {
    let (mu, sigma) = (6.0, 1.5);
    let exact = (mu * mu + (sigma - 1.0f64).powi(2)).sqrt();
    let mut worst: f64 = 0.0;
    for s in 0..20u64 {
        let a = gaussian_set(2 * s, 0.0, 1.0, 500);
        let b = gaussian_set(2 * s + 1, mu, sigma, 500);
        let w = w2_distance(&a, &b).unwrap();
        worst = worst.max((w - exact).abs() / exact);
    }
    (worst, exact)
}

fn random_fields(seed: u64, count: usize, nodes: usize) -> Vec<FieldState> {
    let mut r = stream(seed, "w2_axioms", 0);
    (0..count)
        .map(|_| FieldState::physical(normal_matrix(&mut r, nodes, 2, 1.0)))
        .collect()
}

/// Largest violation of symmetry, identity and the triangle inequality over
/// random multi-node sets of equal and unequal size.
pub fn w2_axiom_violation() -> f64 {
    let mut worst: f64 = 0.0;
    for s in 0..5u64 {
        let a = random_fields(3 * s, 30, 5);
        let mut b = random_fields(3 * s + 1, 30, 5);
        for f in &mut b {
            f.values += 0.5;
        }
        let c = random_fields(3 * s + 2, 20, 5);
        let ab = w2_distance(&a, &b).unwrap();
        let ba = w2_distance(&b, &a).unwrap();
        let ac = w2_distance(&a, &c).unwrap();
        let bc = w2_distance(&b, &c).unwrap();
        let aa = w2_distance(&a, &a).unwrap();
        worst = worst.max((ab - ba).abs()).max(aa);
        worst = worst.max(ac - (ab + bc)).max(ab - (ac + bc)).max(bc - (ab + ac));
        // Duplicating every state leaves the empirical measure unchanged.
        let mut a2 = a.clone();
        a2.extend(a.iter().cloned());
        worst = worst.max((w2_distance(&a2, &b).unwrap() - ab).abs());
    }
    worst
}

/// Largest deviation of AdaLN-Zero blocks at initialization from the
/// identity map, over random inputs and embeddings.
pub fn adaln_identity_deviation() -> f64 {
    let att = AttentionConfig {
        width: 8,
        heads: 2,
        slices: 4,
    };
    let mut worst: f64 = 0.0;
    for (s, nodewise) in [(0u64, false), (1, true), (2, false)] {
        let mut store = ParamStore::new();
        let mut r = stream(s, "adaln_init", 0);
        let blk = AdaLnBlock::new(&mut ParamBuilder::new(&mut store, &mut r), "b", att, 6, nodewise).unwrap();
        let t = Tape::with_params(&store);
        let x = rand(30 + s, 12, 8) * 3.0;
        let out = blk.forward(&t, t.constant(x.clone()), t.constant(rand(40 + s, 1, 6)));
        worst = worst.max((&t.value(out) - &x).iter().fold(0.0, |m: f64, d| m.max(d.abs())));
    }
    worst
}

/// Maximum difference between `sample_scale` at initialization and the
/// Euler integration of `out(lift(input))`, the sampler with identity
/// blocks.
pub fn init_sampler_formula_deviation() -> f64 {
    use sarmesh::sar::sample_scale;
    let g = triangulated_grid(4, 4, &[0.5]).unwrap();
    let (model, ctx) = tiny_sar(&g, 3, false);
    let y = model.encode_conditions(&ctx).unwrap();
    let values = rand(50, 16, 1);
    let mut worst: f64 = 0.0;
    for k in 1..=3 {
        let steps = 4;
        let got = sample_scale(&model, k, &ctx, &y, &values, steps, 77).unwrap();
        let z = model.ar_step(k, &ctx, &y, &values).unwrap();
        let n_k = ctx.hierarchy.partition(k).len();
        let mut s = normal_matrix(&mut stream(77, "sample_scale", k as u64), n_k, 1, 1.0);
        for m in 0..steps {
            let t = Tape::with_params(&model.params);
            let (input, _) = model.sampler_input_on(
                &t,
                t.constant(s.clone()),
                m as f64 / steps as f64,
                &ctx,
                k,
                t.constant(y.clone()),
                t.constant(z.clone()),
            );
            let net = &model.sampler.net;
            let u = t.value(net.out.forward(&t, net.lift.forward(&t, input)));
            s.scaled_add(1.0 / steps as f64, &u);
        }
        worst = worst.max((&got - &s).iter().fold(0.0, |m: f64, d| m.max(d.abs())));
    }
    worst
}

/// Mean over rows of a node-major matrix restricted to `rows`.
pub fn select_rows(a: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    a.select(Axis(0), rows)
}
