//! Reverse-mode differentiation over dense row-major matrices.
//!
//! Every value on a [`Tape`] is a 2-D `f64` array; scalars are `1 x 1` and
//! row vectors are `1 x c`. Node features are laid out one node per row, so
//! the broadcasting ops only ever broadcast a single row (`*_row`) or a single
//! column (`*_col`).

use std::cell::RefCell;
use std::collections::HashMap;

use ndarray::{s, Array2, Axis, Zip};

use super::params::{ParamId, ParamStore};
use super::TensorError;

/// Floor applied to the row variance inside [`Tape::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Denominators below this value make [`Tape::div_col_guarded`] emit zero.
pub const DIV_GUARD_EPS: f64 = 1e-12;

const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;
const SELU_SCALE: f64 = 1.050_700_987_355_480_5;
const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    DivColGuarded(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    SoftmaxRows(Var),
    LayerNormRows(Var),
    Selu(Var),
    Gelu(Var),
    Exp(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    ColSum(Var),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Records a computation for later reverse accumulation.
///
/// Interior mutability lets ops be nested (`t.add(t.matmul(a, b), c)`). A
/// tape is single-threaded; concurrent work uses one tape per worker.
pub struct Tape<'p> {
    params: Option<&'p ParamStore>,
    nodes: RefCell<Vec<Node>>,
    param_vars: RefCell<HashMap<ParamId, Var>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self {
            params: None,
            nodes: RefCell::new(Vec::new()),
            param_vars: RefCell::new(HashMap::new()),
        }
    }

    /// A tape that can load parameters from `params`.
    pub fn with_params(params: &'p ParamStore) -> Self {
        Self {
            params: Some(params),
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert!(
            value.iter().all(|x| x.is_finite()),
            "non-finite value produced by {op:?}"
        );
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, needs_grad });
        Var(nodes.len() - 1)
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives gradients.
    pub fn input(&self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn scalar(&self, x: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    /// Loads a parameter; repeated loads of the same id return the same var.
    pub fn param(&self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.borrow().get(&id) {
            return *v;
        }
        let store = self.params.expect("tape was created without a parameter store");
        let v = self.input(store.value(id).clone());
        self.param_vars.borrow_mut().insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> Array2<f64> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.0].value.dim()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let nodes = self.nodes.borrow();
        let a = &nodes[v.0].value;
        assert_eq!(a.dim(), (1, 1), "scalar_value on non-scalar");
        a[[0, 0]]
    }

    fn unary(&self, a: Var, op: Op, f: impl FnOnce(&Array2<f64>) -> Array2<f64>) -> Var {
        let (value, ng) = {
            let nodes = self.nodes.borrow();
            (f(&nodes[a.0].value), nodes[a.0].needs_grad)
        };
        self.push(value, op, ng)
    }

    fn binary(&self, a: Var, b: Var, op: Op, f: impl FnOnce(&Array2<f64>, &Array2<f64>) -> Array2<f64>) -> Var {
        let (value, ng) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            (f(&na.value, &nb.value), na.needs_grad || nb.needs_grad)
        };
        self.push(value, op, ng)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| {
            assert_eq!(x.dim(), y.dim(), "add: shape mismatch");
            x + y
        })
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| {
            assert_eq!(x.dim(), y.dim(), "sub: shape mismatch");
            x - y
        })
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| {
            assert_eq!(x.dim(), y.dim(), "mul: shape mismatch");
            x * y
        })
    }

    /// `a (n x c) + row (1 x c)`, broadcast over rows.
    pub fn add_row(&self, a: Var, row: Var) -> Var {
        self.binary(a, row, Op::AddRow(a, row), |x, r| {
            assert_eq!(r.dim(), (1, x.ncols()), "add_row: shape mismatch");
            x + r
        })
    }

    /// `a (n x c) * row (1 x c)`, broadcast over rows.
    pub fn mul_row(&self, a: Var, row: Var) -> Var {
        self.binary(a, row, Op::MulRow(a, row), |x, r| {
            assert_eq!(r.dim(), (1, x.ncols()), "mul_row: shape mismatch");
            x * r
        })
    }

    /// `a (n x c) * col (n x 1)`, broadcast over columns.
    pub fn mul_col(&self, a: Var, col: Var) -> Var {
        self.binary(a, col, Op::MulCol(a, col), |x, c| {
            assert_eq!(c.dim(), (x.nrows(), 1), "mul_col: shape mismatch");
            x * c
        })
    }

    /// `a (n x c) / col (n x 1)`; rows whose denominator is below
    /// [`DIV_GUARD_EPS`] are set to zero.
    pub fn div_col_guarded(&self, a: Var, col: Var) -> Var {
        self.binary(a, col, Op::DivColGuarded(a, col), |x, c| {
            assert_eq!(c.dim(), (x.nrows(), 1), "div_col: shape mismatch");
            let mut out = x.clone();
            for (mut row, d) in out.rows_mut().into_iter().zip(c.column(0)) {
                if *d < DIV_GUARD_EPS {
                    row.fill(0.0);
                } else {
                    row /= *d;
                }
            }
            out
        })
    }

    pub fn scale(&self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Scale(a, k), |x| x * k)
    }

    pub fn neg(&self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::MatMul(a, b), |x, y| {
            assert_eq!(
                x.ncols(),
                y.nrows(),
                "matmul: inner dimensions {:?} x {:?}",
                x.dim(),
                y.dim()
            );
            x.dot(y)
        })
    }

    pub fn transpose(&self, a: Var) -> Var {
        self.unary(a, Op::Transpose(a), |x| x.t().to_owned())
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: no inputs");
        let (value, ng) = {
            let nodes = self.nodes.borrow();
            let views: Vec<_> = parts.iter().map(|p| nodes[p.0].value.view()).collect();
            let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
            (v, parts.iter().any(|p| nodes[p.0].needs_grad))
        };
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows: no inputs");
        let (value, ng) = {
            let nodes = self.nodes.borrow();
            let views: Vec<_> = parts.iter().map(|p| nodes[p.0].value.view()).collect();
            let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
            (v, parts.iter().any(|p| nodes[p.0].needs_grad))
        };
        self.push(value, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_cols(&self, a: Var, start: usize, len: usize) -> Var {
        self.unary(a, Op::SliceCols(a, start), |x| {
            assert!(start + len <= x.ncols(), "slice_cols: out of range");
            x.slice(s![.., start..start + len]).to_owned()
        })
    }

    pub fn slice_rows(&self, a: Var, start: usize, len: usize) -> Var {
        self.unary(a, Op::SliceRows(a, start), |x| {
            assert!(start + len <= x.nrows(), "slice_rows: out of range");
            x.slice(s![start..start + len, ..]).to_owned()
        })
    }

    /// Row `r` of the output is row `idx[r]` of `a`. Indices may repeat.
    pub fn gather_rows(&self, a: Var, idx: &[usize]) -> Var {
        self.unary(a, Op::GatherRows(a, idx.to_vec()), |x| {
            let mut out = Array2::zeros((idx.len(), x.ncols()));
            for (mut row, &i) in out.rows_mut().into_iter().zip(idx) {
                assert!(i < x.nrows(), "gather_rows: index {i} out of range");
                row.assign(&x.row(i));
            }
            out
        })
    }

    /// Sums row `r` of `a` into output row `idx[r]`; output has `rows` rows.
    pub fn scatter_add_rows(&self, a: Var, idx: &[usize], rows: usize) -> Var {
        let mut op_idx = idx.to_vec();
        op_idx.push(rows);
        self.unary(a, Op::ScatterAddRows(a, op_idx), |x| {
            assert_eq!(x.nrows(), idx.len(), "scatter_add_rows: index count");
            let mut out = Array2::zeros((rows, x.ncols()));
            for (row, &i) in x.rows().into_iter().zip(idx) {
                assert!(i < rows, "scatter_add_rows: index {i} out of range");
                let mut o = out.row_mut(i);
                o += &row;
            }
            out
        })
    }

    pub fn softmax_rows(&self, a: Var) -> Var {
        self.unary(a, Op::SoftmaxRows(a), softmax_rows)
    }

    /// Row-wise standardization without affine parameters.
    pub fn layer_norm(&self, a: Var) -> Var {
        self.unary(a, Op::LayerNormRows(a), |x| layer_norm_rows(x).0)
    }

    pub fn selu(&self, a: Var) -> Var {
        self.unary(a, Op::Selu(a), |x| x.mapv(selu))
    }

    pub fn gelu(&self, a: Var) -> Var {
        self.unary(a, Op::Gelu(a), |x| x.mapv(gelu))
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), |x| x.mapv(f64::exp))
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x.mapv(|v| v * v))
    }

    pub fn sum(&self, a: Var) -> Var {
        self.unary(a, Op::Sum(a), |x| Array2::from_elem((1, 1), x.sum()))
    }

    pub fn mean(&self, a: Var) -> Var {
        self.unary(a, Op::Mean(a), |x| Array2::from_elem((1, 1), x.sum() / x.len() as f64))
    }

    /// Column sums as a `1 x c` row.
    pub fn col_sum(&self, a: Var) -> Var {
        self.unary(a, Op::ColSum(a), |x| x.sum_axis(Axis(0)).insert_axis(Axis(0)))
    }

    /// Mean squared difference of two equally shaped values.
    pub fn mse(&self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        self.mean(self.square(d))
    }

    /// Reverse accumulation from a `1 x 1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.0].value.dim();
        if shape != (1, 1) {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            let val = |v: Var| &nodes[v.0].value;
            let mut acc = |v: Var, delta: Array2<f64>| {
                if !nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => *existing += &delta,
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, -g);
                }
                Op::Mul(a, b) => {
                    acc(*a, &g * val(*b));
                    acc(*b, &g * val(*a));
                }
                Op::AddRow(a, r) => {
                    acc(*r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*a, g);
                }
                Op::MulRow(a, r) => {
                    let gr = (&g * val(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(*a, &g * val(*r));
                    acc(*r, gr);
                }
                Op::MulCol(a, c) => {
                    let gc = (&g * val(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(*a, &g * val(*c));
                    acc(*c, gc);
                }
                Op::DivColGuarded(a, c) => {
                    let x = val(*a);
                    let d = val(*c);
                    let mut ga = g.clone();
                    let mut gc = Array2::zeros(d.dim());
                    for i in 0..x.nrows() {
                        let di = d[[i, 0]];
                        if di < DIV_GUARD_EPS {
                            ga.row_mut(i).fill(0.0);
                        } else {
                            let dot: f64 = g.row(i).dot(&x.row(i));
                            gc[[i, 0]] = -dot / (di * di);
                            ga.row_mut(i).mapv_inplace(|v| v / di);
                        }
                    }
                    acc(*a, ga);
                    acc(*c, gc);
                }
                Op::Scale(a, k) => acc(*a, g * *k),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&val(*b).t());
                    let gb = val(*a).t().dot(&g);
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::Transpose(a) => acc(*a, g.t().to_owned()),
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = val(*p).ncols();
                        acc(*p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let h = val(*p).nrows();
                        acc(*p, g.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(val(*a).dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(*a, ga);
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Array2::zeros(val(*a).dim());
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(*a, ga);
                }
                Op::GatherRows(a, idx) => {
                    let mut ga = Array2::zeros(val(*a).dim());
                    for (row, &i) in g.rows().into_iter().zip(idx) {
                        let mut t = ga.row_mut(i);
                        t += &row;
                    }
                    acc(*a, ga);
                }
                Op::ScatterAddRows(a, idx) => {
                    let idx = &idx[..idx.len() - 1];
                    let mut ga = Array2::zeros(val(*a).dim());
                    for (mut row, &i) in ga.rows_mut().into_iter().zip(idx) {
                        row.assign(&g.row(i));
                    }
                    acc(*a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = &g * y;
                    let dots = ga.sum_axis(Axis(1));
                    Zip::from(ga.rows_mut())
                        .and(y.rows())
                        .and(&dots)
                        .for_each(|mut row, yr, d| row.scaled_add(-d, &yr));
                    acc(*a, ga);
                }
                Op::LayerNormRows(a) => {
                    let (y, inv_std, clamped) = layer_norm_rows(val(*a));
                    let c = y.ncols() as f64;
                    let mut ga = g.clone();
                    for i in 0..ga.nrows() {
                        let gm = g.row(i).sum() / c;
                        let gy = if clamped[i] { 0.0 } else { g.row(i).dot(&y.row(i)) / c };
                        let s = inv_std[i];
                        Zip::from(ga.row_mut(i))
                            .and(y.row(i))
                            .for_each(|gv, &yv| *gv = s * (*gv - gm - yv * gy));
                    }
                    acc(*a, ga);
                }
                Op::Selu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(val(*a)).for_each(|gv, &x| *gv *= selu_grad(x));
                    acc(*a, ga);
                }
                Op::Gelu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(val(*a)).for_each(|gv, &x| *gv *= gelu_grad(x));
                    acc(*a, ga);
                }
                Op::Exp(a) => acc(*a, g * &node.value),
                Op::Square(a) => acc(*a, g * val(*a) * 2.0),
                Op::Sum(a) => acc(*a, Array2::from_elem(val(*a).dim(), g[[0, 0]])),
                Op::Mean(a) => {
                    let x = val(*a);
                    acc(*a, Array2::from_elem(x.dim(), g[[0, 0]] / x.len() as f64));
                }
                Op::ColSum(a) => {
                    let n = val(*a).nrows();
                    let ga = g.broadcast((n, g.ncols())).expect("col_sum broadcast").to_owned();
                    acc(*a, ga);
                }
            }
        }
        Ok(Gradients {
            grads,
            params: self.param_vars.borrow().clone(),
        })
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    params: HashMap<ParamId, Var>,
}

impl Gradients {
    /// Gradient with respect to a leaf created with [`Tape::input`] or
    /// [`Tape::param`]; `None` if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Per-parameter gradients for every parameter loaded on the tape.
    pub fn param_grads(&self, store: &ParamStore) -> ParamGrads {
        let mut out = ParamGrads::zeros_like(store);
        for (id, v) in &self.params {
            if let Some(g) = self.wrt(*v) {
                out.grads[id.index()] = Some(g.clone());
            }
        }
        out
    }
}

/// Gradients aligned with the entries of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub(crate) grads: Vec<Option<Array2<f64>>>,
}

impl ParamGrads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.grads[id.index()].as_ref()
    }

    /// Adds `other` into `self`.
    pub fn accumulate(&mut self, other: &ParamGrads) {
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => *m += t,
                (None, Some(t)) => *mine = Some(t.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.grads.iter_mut().flatten() {
            *g *= k;
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.iter().all(|x| x.is_finite()))
    }
}

pub(crate) fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
    out
}

/// Returns the standardized rows, the per-row `1/std` and whether the row
/// variance was clamped to [`LAYER_NORM_EPS`].
fn layer_norm_rows(x: &Array2<f64>) -> (Array2<f64>, Vec<f64>, Vec<bool>) {
    let c = x.ncols() as f64;
    let mut out = x.clone();
    let mut inv = Vec::with_capacity(x.nrows());
    let mut clamped = Vec::with_capacity(x.nrows());
    for mut row in out.rows_mut() {
        let mean = row.sum() / c;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / c;
        let is_clamped = var < LAYER_NORM_EPS;
        let s = 1.0 / var.max(LAYER_NORM_EPS).sqrt();
        row.mapv_inplace(|v| v * s);
        inv.push(s);
        clamped.push(is_clamped);
    }
    (out, inv, clamped)
}

pub(crate) fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_SCALE * x
    } else {
        SELU_SCALE * SELU_ALPHA * x.exp_m1()
    }
}

fn selu_grad(x: f64) -> f64 {
    if x > 0.0 {
        SELU_SCALE
    } else {
        SELU_SCALE * SELU_ALPHA * x.exp()
    }
}

pub(crate) fn gelu(x: f64) -> f64 {
    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * x * (1.0 + t)
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn square_gradient() {
        let t = Tape::new();
        let x = t.input(array![[3.0]]);
        let loss = t.sum(t.square(x));
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap()[[0, 0]], 6.0);
    }

    #[test]
    fn softmax_sum_has_zero_gradient() {
        let t = Tape::new();
        let x = t.input(array![[0.3, -1.2, 2.0, 0.1]]);
        let loss = t.sum(t.softmax_rows(x));
        let g = t.backward(loss).unwrap();
        for v in g.wrt(x).unwrap() {
            assert!(v.abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let t = Tape::new();
        let y = t.value(t.softmax_rows(t.constant(array![[0.0, 0.0, 0.0]])));
        for v in y {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let t = Tape::new();
        let y = t.value(t.layer_norm(t.constant(array![[2.5, 2.5, 2.5, 2.5]])));
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn selu_fixed_point() {
        assert_eq!(selu(0.0), 0.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let t = Tape::new();
        let x = t.input(array![[1.0, 2.0]]);
        assert!(matches!(t.backward(x), Err(TensorError::NonScalarLoss((1, 2)))));
    }

    #[test]
    #[should_panic(expected = "matmul")]
    fn matmul_shape_mismatch_panics() {
        let t = Tape::new();
        let a = t.constant(Array2::zeros((2, 3)));
        let b = t.constant(Array2::zeros((2, 3)));
        t.matmul(a, b);
    }

    #[test]
    fn guarded_division_zeroes_empty_rows() {
        let t = Tape::new();
        let a = t.input(array![[1.0, 2.0], [3.0, 4.0]]);
        let d = t.input(array![[2.0], [0.0]]);
        let out = t.div_col_guarded(a, d);
        assert_eq!(t.value(out), array![[0.5, 1.0], [0.0, 0.0]]);
        let g = t.backward(t.sum(out)).unwrap();
        assert_eq!(g.wrt(a).unwrap(), &array![[0.5, 0.5], [0.0, 0.0]]);
        assert_eq!(g.wrt(d).unwrap(), &array![[-0.75], [0.0]]);
    }

    #[test]
    fn duplicate_gather_accumulates() {
        let t = Tape::new();
        let a = t.input(array![[1.0], [2.0]]);
        let out = t.gather_rows(a, &[1, 1, 0]);
        let g = t.backward(t.sum(out)).unwrap();
        assert_eq!(g.wrt(a).unwrap(), &array![[1.0], [2.0]]);
    }
}
