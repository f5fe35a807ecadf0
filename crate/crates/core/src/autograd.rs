//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records every operation of one forward pass. [`Var`] is a cheap
//! copyable handle into it. Parameters enter the tape through
//! [`Tape::param`], which caches one leaf per parameter so gradients
//! accumulate across every use.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::matrix::{dot, Matrix};
use crate::nn::{ParamId, ParamStore};
use crate::scalar::Scalar;

/// Boolean attention mask, `allowed[i][j]` over query row `i` and key column `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn full(rows: usize, cols: usize) -> Self {
        AttentionMask {
            rows,
            cols,
            allowed: vec![true; rows * cols],
        }
    }

    /// Single-directional mask: `allowed[i][j] == (j <= i)`.
    pub fn causal(n: usize) -> Self {
        let mut allowed = vec![false; n * n];
        for i in 0..n {
            for j in 0..=i {
                allowed[i * n + j] = true;
            }
        }
        AttentionMask {
            rows: n,
            cols: n,
            allowed,
        }
    }

    /// Every query may see only the first `valid` keys.
    pub fn key_prefix(rows: usize, cols: usize, valid: usize) -> Self {
        let mut allowed = vec![false; rows * cols];
        for i in 0..rows {
            for j in 0..valid.min(cols) {
                allowed[i * cols + j] = true;
            }
        }
        AttentionMask {
            rows,
            cols,
            allowed,
        }
    }

    /// Intersection of two masks of equal shape.
    pub fn and(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        AttentionMask {
            rows: self.rows,
            cols: self.cols,
            allowed: self
                .allowed
                .iter()
                .zip(&other.allowed)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }

    #[inline]
    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn count_allowed(&self) -> usize {
        self.allowed.iter().filter(|&&a| a).count()
    }
}

enum Op<F> {
    Leaf,
    MatMul(usize, usize),
    MatMulNT(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Mul(usize, usize),
    Scale(usize, F),
    ScaleBy(usize, usize),
    Gelu(usize),
    Softmax(usize),
    LayerNorm { x: usize, inv_std: Vec<F> },
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    Transpose(usize),
    Gather(usize, Vec<usize>),
    L2Normalize { x: usize, norms: Vec<F> },
    CrossEntropy { logits: usize, probs: Matrix<F>, targets: Vec<usize> },
    Ln(usize),
    Clamp(usize, F, F),
    Sum(usize),
    MeanRows(usize),
}

struct Node<F> {
    value: Rc<Matrix<F>>,
    op: Op<F>,
}

pub struct Tape<F: Scalar> {
    nodes: RefCell<Vec<Node<F>>>,
    params: RefCell<HashMap<ParamId, usize>>,
    record: bool,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
            record: true,
        }
    }

    /// A tape that keeps values but not backward information.
    pub fn inference() -> Self {
        Tape {
            record: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix<F>, op: Op<F>) -> Var<'_, F> {
        let op = if self.record { op } else { Op::Leaf };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn val(&self, id: usize) -> Rc<Matrix<F>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub fn constant(&self, value: Matrix<F>) -> Var<'_, F> {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&self, value: F) -> Var<'_, F> {
        self.constant(Matrix::scalar(value))
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&self, store: &ParamStore<F>, id: ParamId) -> Var<'_, F> {
        if let Some(&node) = self.params.borrow().get(&id) {
            return Var { tape: self, id: node };
        }
        let v = self.push(store.value(id).clone(), Op::Leaf);
        self.params.borrow_mut().insert(id, v.id);
        v
    }

    pub fn concat_rows(&self, parts: &[Var<'_, F>]) -> Var<'_, F> {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let vals: Vec<_> = parts.iter().map(|p| self.val(p.id)).collect();
        let cols = vals[0].cols();
        let rows: usize = vals.iter().map(|v| v.rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for v in &vals {
            assert_eq!(v.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(v.data());
        }
        self.push(
            Matrix::from_vec(rows, cols, data),
            Op::ConcatRows(parts.iter().map(|p| p.id).collect()),
        )
    }

    pub fn concat_cols(&self, parts: &[Var<'_, F>]) -> Var<'_, F> {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let vals: Vec<_> = parts.iter().map(|p| self.val(p.id)).collect();
        let rows = vals[0].rows();
        let cols: usize = vals.iter().map(|v| v.cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for v in &vals {
            assert_eq!(v.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[off..off + v.cols()].copy_from_slice(v.row(r));
            }
            off += v.cols();
        }
        self.push(out, Op::ConcatCols(parts.iter().map(|p| p.id).collect()))
    }

    /// Rows of `table` selected by `ids` (embedding lookup).
    pub fn gather_rows(&self, table: Var<'_, F>, ids: &[usize]) -> Var<'_, F> {
        let t = self.val(table.id);
        let mut data = Vec::with_capacity(ids.len() * t.cols());
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        self.push(
            Matrix::from_vec(ids.len(), t.cols(), data),
            Op::Gather(table.id, ids.to_vec()),
        )
    }

    /// Reverse pass from a 1×1 output.
    pub fn backward(&self, output: Var<'_, F>) -> Gradients<F> {
        assert!(self.record, "backward on an inference tape");
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[output.id].value.shape(), (1, 1), "backward from non-scalar");
        let mut grads: Vec<Option<Matrix<F>>> = (0..nodes.len()).map(|_| None).collect();
        grads[output.id] = Some(Matrix::scalar(F::one()));

        fn acc<F: Scalar>(grads: &mut [Option<Matrix<F>>], id: usize, g: Matrix<F>) {
            match &mut grads[id] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let v = |i: usize| &nodes[i].value;
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, g.matmul_nt(v(*b)));
                    acc(&mut grads, *b, v(*a).matmul_tn(&g));
                }
                Op::MatMulNT(a, b) => {
                    acc(&mut grads, *a, g.matmul(v(*b)));
                    acc(&mut grads, *b, g.matmul_tn(v(*a)));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *row, column_sums(&g));
                    acc(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    let x = v(*a);
                    let r = v(*row);
                    let mut ga = g.clone();
                    let mut gr = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            ga.set(i, j, g.get(i, j) * r.get(0, j));
                            let cur = gr.get(0, j);
                            gr.set(0, j, cur + g.get(i, j) * x.get(i, j));
                        }
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *row, gr);
                }
                Op::Mul(a, b) => {
                    let (x, y) = (v(*a), v(*b));
                    let ga = zip_map(&g, y, |g, y| g * y);
                    let gb = zip_map(&g, x, |g, x| g * x);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    acc(&mut grads, *a, g.map(|x| x * c));
                }
                Op::ScaleBy(a, s) => {
                    let sv = v(*s).item();
                    let gs = dot(g.data(), v(*a).data());
                    acc(&mut grads, *a, g.map(|x| x * sv));
                    acc(&mut grads, *s, Matrix::scalar(gs));
                }
                Op::Gelu(a) => {
                    let x = v(*a);
                    acc(&mut grads, *a, zip_map(&g, x, |g, x| g * gelu_grad(x)));
                }
                Op::Softmax(a) => {
                    let p = &node.value;
                    let mut ga = Matrix::zeros(g.rows(), g.cols());
                    for i in 0..g.rows() {
                        let pr = p.row(i);
                        let gr = g.row(i);
                        let s = dot(pr, gr);
                        for (o, (&pj, &gj)) in ga.row_mut(i).iter_mut().zip(pr.iter().zip(gr)) {
                            *o = pj * (gj - s);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm { x, inv_std } => {
                    let y = &node.value;
                    let n = F::of(g.cols() as f64);
                    let mut ga = Matrix::zeros(g.rows(), g.cols());
                    for i in 0..g.rows() {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let mean_g = gr.iter().copied().sum::<F>() / n;
                        let mean_gy = dot(gr, yr) / n;
                        for (o, (&gj, &yj)) in ga.row_mut(i).iter_mut().zip(gr.iter().zip(yr)) {
                            *o = inv_std[i] * (gj - mean_g - yj * mean_gy);
                        }
                    }
                    acc(&mut grads, *x, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let r = v(p).rows();
                        let slice = g.data()[off * g.cols()..(off + r) * g.cols()].to_vec();
                        acc(&mut grads, p, Matrix::from_vec(r, g.cols(), slice));
                        off += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let c = v(p).cols();
                        let mut gp = Matrix::zeros(g.rows(), c);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + c]);
                        }
                        acc(&mut grads, p, gp);
                        off += c;
                    }
                }
                Op::SliceRows(a, start) => {
                    let x = v(*a);
                    let mut ga = Matrix::zeros(x.rows(), x.cols());
                    for r in 0..g.rows() {
                        ga.row_mut(start + r).copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let x = v(*a);
                    let mut ga = Matrix::zeros(x.rows(), x.cols());
                    for r in 0..g.rows() {
                        ga.row_mut(r)[*start..start + g.cols()].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::Gather(table, ids) => {
                    let t = v(*table);
                    let mut gt = Matrix::zeros(t.rows(), t.cols());
                    for (r, &i) in ids.iter().enumerate() {
                        for (o, &x) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o = *o + x;
                        }
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::L2Normalize { x, norms } => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(g.rows(), g.cols());
                    for i in 0..g.rows() {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        // y = x / (|x| + eps): dy/dx = (I - y ŷᵀ) / (|x| + eps) with ŷ = x/|x|
                        let nrm = norms[i];
                        let denom = nrm + F::of(crate::nn::NORM_EPS);
                        let scale = if nrm > F::zero() { denom / nrm } else { F::zero() };
                        let gy = dot(gr, yr) * scale;
                        for (o, (&gj, &yj)) in ga.row_mut(i).iter_mut().zip(gr.iter().zip(yr)) {
                            *o = (gj - yj * gy) / denom;
                        }
                    }
                    acc(&mut grads, *x, ga);
                }
                Op::CrossEntropy {
                    logits,
                    probs,
                    targets,
                } => {
                    let mut ga = probs.clone();
                    for (i, &t) in targets.iter().enumerate() {
                        let cur = ga.get(i, t);
                        ga.set(i, t, cur - F::one());
                        let gi = g.get(i, 0);
                        for x in ga.row_mut(i) {
                            *x = *x * gi;
                        }
                    }
                    acc(&mut grads, *logits, ga);
                }
                Op::Ln(a) => {
                    let x = v(*a);
                    acc(&mut grads, *a, zip_map(&g, x, |g, x| g / x));
                }
                Op::Clamp(a, lo, hi) => {
                    let x = v(*a);
                    let (lo, hi) = (*lo, *hi);
                    acc(
                        &mut grads,
                        *a,
                        zip_map(&g, x, |g, x| if x < lo || x > hi { F::zero() } else { g }),
                    );
                }
                Op::Sum(a) => {
                    let x = v(*a);
                    acc(&mut grads, *a, Matrix::filled(x.rows(), x.cols(), g.item()));
                }
                Op::MeanRows(a) => {
                    let x = v(*a);
                    let inv = F::one() / F::of(x.rows() as f64);
                    let mut ga = Matrix::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        for (o, &gj) in ga.row_mut(r).iter_mut().zip(g.row(0)) {
                            *o = gj * inv;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
            }
        }

        let params = self
            .params
            .borrow()
            .iter()
            .filter_map(|(&pid, &node)| grads[node].take().map(|g| (pid, g)))
            .collect();
        Gradients { params, nodes: grads }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<F> {
    params: HashMap<ParamId, Matrix<F>>,
    nodes: Vec<Option<Matrix<F>>>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient of a parameter, `None` if it did not influence the output.
    pub fn param(&self, id: ParamId) -> Option<&Matrix<F>> {
        self.params.get(&id)
    }

    /// Gradient of an arbitrary leaf (constants included).
    pub fn of(&self, var: Var<'_, F>) -> Option<&Matrix<F>> {
        self.nodes.get(var.id).and_then(Option::as_ref)
    }

    pub fn into_params(self) -> HashMap<ParamId, Matrix<F>> {
        self.params
    }
}

fn column_sums<F: Scalar>(g: &Matrix<F>) -> Matrix<F> {
    let mut out = Matrix::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, &x) in out.row_mut(0).iter_mut().zip(g.row(r)) {
            *o = *o + x;
        }
    }
    out
}

fn zip_map<F: Scalar>(a: &Matrix<F>, b: &Matrix<F>, f: impl Fn(F, F) -> F) -> Matrix<F> {
    assert_eq!(a.shape(), b.shape());
    Matrix::from_vec(
        a.rows(),
        a.cols(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[inline]
fn gelu<F: Scalar>(x: F) -> F {
    let c = F::of(GELU_C);
    let k = F::of(0.044715);
    F::of(0.5) * x * (F::one() + (c * (x + k * x * x * x)).tanh())
}

#[inline]
fn gelu_grad<F: Scalar>(x: F) -> F {
    let c = F::of(GELU_C);
    let k = F::of(0.044715);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let du = c * (F::one() + F::of(3.0) * k * x * x);
    F::of(0.5) * (F::one() + t) + F::of(0.5) * x * (F::one() - t * t) * du
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, F: Scalar> {
    tape: &'t Tape<F>,
    id: usize,
}

impl<'t, F: Scalar> Var<'t, F> {
    pub fn tape(&self) -> &'t Tape<F> {
        self.tape
    }

    pub fn value(&self) -> Matrix<F> {
        (*self.tape.val(self.id)).clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.val(self.id).shape()
    }

    pub fn rows(&self) -> usize {
        self.shape().0
    }

    pub fn cols(&self) -> usize {
        self.shape().1
    }

    /// Value of a 1×1 node.
    pub fn item(&self) -> F {
        self.tape.val(self.id).item()
    }

    fn unary(self, value: Matrix<F>, op: Op<F>) -> Var<'t, F> {
        self.tape.push(value, op)
    }

    pub fn matmul(self, rhs: Var<'t, F>) -> Var<'t, F> {
        let out = self.tape.val(self.id).matmul(&self.tape.val(rhs.id));
        self.unary(out, Op::MatMul(self.id, rhs.id))
    }

    /// `self · rhsᵀ`.
    pub fn matmul_t(self, rhs: Var<'t, F>) -> Var<'t, F> {
        let out = self.tape.val(self.id).matmul_nt(&self.tape.val(rhs.id));
        self.unary(out, Op::MatMulNT(self.id, rhs.id))
    }

    pub fn add(self, rhs: Var<'t, F>) -> Var<'t, F> {
        let a = self.tape.val(self.id);
        let b = self.tape.val(rhs.id);
        assert_eq!(a.shape(), b.shape(), "add shape mismatch");
        let out = zip_map(&a, &b, |x, y| x + y);
        self.unary(out, Op::Add(self.id, rhs.id))
    }

    pub fn sub(self, rhs: Var<'t, F>) -> Var<'t, F> {
        self.add(rhs.scale(-F::one()))
    }

    /// Adds a 1×n row to every row.
    pub fn add_row(self, row: Var<'t, F>) -> Var<'t, F> {
        let a = self.tape.val(self.id);
        let r = self.tape.val(row.id);
        assert_eq!(r.shape(), (1, a.cols()), "add_row shape mismatch");
        let mut out = (*a).clone();
        for i in 0..out.rows() {
            for (o, &x) in out.row_mut(i).iter_mut().zip(r.row(0)) {
                *o = *o + x;
            }
        }
        self.unary(out, Op::AddRow(self.id, row.id))
    }

    /// Multiplies every row elementwise by a 1×n row.
    pub fn mul_row(self, row: Var<'t, F>) -> Var<'t, F> {
        let a = self.tape.val(self.id);
        let r = self.tape.val(row.id);
        assert_eq!(r.shape(), (1, a.cols()), "mul_row shape mismatch");
        let mut out = (*a).clone();
        for i in 0..out.rows() {
            for (o, &x) in out.row_mut(i).iter_mut().zip(r.row(0)) {
                *o = *o * x;
            }
        }
        self.unary(out, Op::MulRow(self.id, row.id))
    }

    pub fn mul(self, rhs: Var<'t, F>) -> Var<'t, F> {
        let out = zip_map(&self.tape.val(self.id), &self.tape.val(rhs.id), |x, y| x * y);
        self.unary(out, Op::Mul(self.id, rhs.id))
    }

    pub fn scale(self, c: F) -> Var<'t, F> {
        let out = self.tape.val(self.id).map(|x| x * c);
        self.unary(out, Op::Scale(self.id, c))
    }

    /// Multiplies by the value of a 1×1 node.
    pub fn scale_by(self, s: Var<'t, F>) -> Var<'t, F> {
        let sv = self.tape.val(s.id).item();
        let out = self.tape.val(self.id).map(|x| x * sv);
        self.unary(out, Op::ScaleBy(self.id, s.id))
    }

    pub fn gelu(self) -> Var<'t, F> {
        let out = self.tape.val(self.id).map(gelu);
        self.unary(out, Op::Gelu(self.id))
    }

    /// Row-wise normalized exponential. Disallowed entries get probability 0;
    /// a fully masked row is all zeros.
    pub fn softmax_rows(self, mask: Option<&AttentionMask>) -> Var<'t, F> {
        let x = self.tape.val(self.id);
        if let Some(m) = mask {
            assert_eq!(m.shape(), x.shape(), "mask shape mismatch");
        }
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            let ok = |j: usize| mask.is_none_or(|m| m.allowed(i, j));
            let xr = x.row(i);
            let mx = (0..x.cols())
                .filter(|&j| ok(j))
                .map(|j| xr[j])
                .fold(F::neg_infinity(), F::max);
            if mx == F::neg_infinity() {
                continue;
            }
            let orow = out.row_mut(i);
            let mut s = F::zero();
            for j in 0..xr.len() {
                if ok(j) {
                    let e = (xr[j] - mx).exp();
                    orow[j] = e;
                    s = s + e;
                }
            }
            for o in orow.iter_mut() {
                *o = *o / s;
            }
        }
        self.unary(out, Op::Softmax(self.id))
    }

    /// Per-row standardization without affine parameters.
    pub fn layer_norm(self, eps: F) -> Var<'t, F> {
        let x = self.tape.val(self.id);
        let n = F::of(x.cols() as f64);
        let mut out = Matrix::zeros(x.rows(), x.cols());
        let mut inv_std = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let xr = x.row(i);
            let mean = xr.iter().copied().sum::<F>() / n;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            let is = F::one() / (var + eps).sqrt();
            for (o, &v) in out.row_mut(i).iter_mut().zip(xr) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        self.unary(out, Op::LayerNorm { x: self.id, inv_std })
    }

    pub fn slice_rows(self, start: usize, end: usize) -> Var<'t, F> {
        let x = self.tape.val(self.id);
        assert!(start <= end && end <= x.rows(), "slice_rows out of range");
        let data = x.data()[start * x.cols()..end * x.cols()].to_vec();
        self.unary(Matrix::from_vec(end - start, x.cols(), data), Op::SliceRows(self.id, start))
    }

    pub fn row(self, i: usize) -> Var<'t, F> {
        self.slice_rows(i, i + 1)
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Var<'t, F> {
        let x = self.tape.val(self.id);
        assert!(start <= end && end <= x.cols(), "slice_cols out of range");
        let mut out = Matrix::zeros(x.rows(), end - start);
        for r in 0..x.rows() {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..end]);
        }
        self.unary(out, Op::SliceCols(self.id, start))
    }

    pub fn transpose(self) -> Var<'t, F> {
        let out = self.tape.val(self.id).transpose();
        self.unary(out, Op::Transpose(self.id))
    }

    /// Row-wise `x / (‖x‖₂ + ε)`.
    pub fn l2_normalize_rows(self) -> Var<'t, F> {
        let x = self.tape.val(self.id);
        let eps = F::of(crate::nn::NORM_EPS);
        let mut out = Matrix::zeros(x.rows(), x.cols());
        let mut norms = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let xr = x.row(i);
            let n = dot(xr, xr).sqrt();
            for (o, &v) in out.row_mut(i).iter_mut().zip(xr) {
                *o = v / (n + eps);
            }
            norms.push(n);
        }
        self.unary(out, Op::L2Normalize { x: self.id, norms })
    }

    /// Per-row negative log-likelihood of `targets[i]` under `softmax(row i)`,
    /// returned as an n×1 column.
    pub fn cross_entropy_rows(self, targets: &[usize]) -> Var<'t, F> {
        let x = self.tape.val(self.id);
        assert_eq!(targets.len(), x.rows(), "one target per row");
        let mut probs = Matrix::zeros(x.rows(), x.cols());
        let mut nll = Vec::with_capacity(x.rows());
        for (i, &t) in targets.iter().enumerate() {
            let xr = x.row(i);
            let mx = xr.iter().copied().fold(F::neg_infinity(), F::max);
            let s: F = xr.iter().map(|&v| (v - mx).exp()).sum();
            let lse = mx + s.ln();
            for (p, &v) in probs.row_mut(i).iter_mut().zip(xr) {
                *p = (v - lse).exp();
            }
            nll.push(lse - xr[t]);
        }
        let n = nll.len();
        self.unary(
            Matrix::from_vec(n, 1, nll),
            Op::CrossEntropy {
                logits: self.id,
                probs,
                targets: targets.to_vec(),
            },
        )
    }

    pub fn ln(self) -> Var<'t, F> {
        let out = self.tape.val(self.id).map(F::ln);
        self.unary(out, Op::Ln(self.id))
    }

    pub fn clamp(self, lo: F, hi: F) -> Var<'t, F> {
        let out = self.tape.val(self.id).map(|x| x.max(lo).min(hi));
        self.unary(out, Op::Clamp(self.id, lo, hi))
    }

    pub fn sum(self) -> Var<'t, F> {
        let out = Matrix::scalar(self.tape.val(self.id).sum());
        self.unary(out, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t, F> {
        let n = {
            let x = self.tape.val(self.id);
            x.rows() * x.cols()
        };
        self.sum().scale(F::one() / F::of(n as f64))
    }

    /// Column means as a 1×n row.
    pub fn mean_rows(self) -> Var<'t, F> {
        let x = self.tape.val(self.id);
        let inv = F::one() / F::of(x.rows() as f64);
        let mut out = column_sums(&x);
        for o in out.row_mut(0) {
            *o = *o * inv;
        }
        self.unary(out, Op::MeanRows(self.id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_diff<Fun>(x: &Matrix<f64>, f: Fun) -> Matrix<f64>
    where
        Fun: Fn(&Matrix<f64>) -> f64,
    {
        let h = 1e-6;
        let mut g = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.data().len() {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            g.data_mut()[i] = (f(&p) - f(&m)) / (2.0 * h);
        }
        g
    }

    fn sample(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        let mut s = seed;
        let data = (0..rows * cols)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        Matrix::from_vec(rows, cols, data)
    }

    fn check(build: impl for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Var<'t, f64>, x: Matrix<f64>) {
        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = build(&tape, xv);
        let grads = tape.backward(out);
        let analytic = grads.of(xv).cloned().unwrap_or_else(|| Matrix::zeros(x.rows(), x.cols()));
        let numeric = finite_diff(&x, |m| {
            let t = Tape::new();
            let v = t.constant(m.clone());
            build(&t, v).item()
        });
        let err = analytic.max_abs_diff(&numeric);
        assert!(err < 1e-6, "gradient mismatch {err}: {analytic:?} vs {numeric:?}");
    }

    #[test]
    fn elementwise_and_reduction_gradients() {
        let w = sample(3, 4, 9);
        check(|t, x| x.gelu().mul(t.constant(w.clone())).sum(), sample(3, 4, 1));
        check(|_, x| x.layer_norm(1e-5).row(1).scale(3.0).gelu().sum(), sample(3, 4, 2));
        check(|_, x| x.l2_normalize_rows().slice_cols(0, 2).sum(), sample(3, 4, 3));
        check(|_, x| x.cross_entropy_rows(&[0, 3, 1]).mean(), sample(3, 4, 4));
        check(|_, x| x.mean_rows().gelu().sum(), sample(3, 4, 5));
        check(
            |_, x| x.softmax_rows(Some(&AttentionMask::causal(4))).row(2).ln().clamp(-10.0, 10.0).sum(),
            sample(4, 4, 6).map(|v| v * 0.3),
        );
    }

    #[test]
    fn matmul_concat_gather_gradients() {
        let w = sample(4, 2, 11);
        check(
            |t, x| {
                let wv = t.constant(w.clone());
                let y = x.matmul(wv);
                let z = x.matmul_t(x).sum();
                let cat = t.concat_rows(&[y, x.slice_cols(1, 3)]);
                let g = t.gather_rows(x, &[2, 0, 2]);
                cat.transpose().sum().add(z).add(g.scale_by(z).sum())
            },
            sample(3, 4, 7),
        );
        check(
            |t, x| {
                let r = x.row(0);
                let c = t.concat_cols(&[x, x.add_row(r)]);
                c.mul_row(t.constant(sample(1, 8, 3))).gelu().sum()
            },
            sample(3, 4, 8),
        );
    }

    #[test]
    fn causal_mask_counts() {
        assert_eq!(AttentionMask::causal(4).count_allowed(), 10);
        let m = AttentionMask::causal(6);
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(m.allowed(i, j), j <= i);
            }
        }
    }
}
