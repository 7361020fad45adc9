//! Reverse-mode automatic differentiation over matrices.
#![allow(clippy::should_implement_trait)]
//!
//! Operations are appended to the tape in execution order, so every node's
//! inputs precede it. `backward` walks the nodes in exact reverse order and
//! accumulates adjoints additively, which handles fan-out.

use std::cell::{Ref, RefCell};
use std::rc::Rc;
use std::sync::Arc;

use ndarray::{Axis, Zip};

use super::{Matrix, SparseMatrix, Tensor};
use crate::error::{Error, Result};

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    RowMean(usize),
    RowSums(usize),
    Sum(usize),
    L2NormalizeRows(usize),
    Cosine(usize, usize),
    Transpose(usize),
    GatherRows(usize, Rc<[usize]>),
    PairDots(usize, Rc<[usize]>, Rc<[usize]>),
    ConcatRows(Vec<usize>),
    Reshape(usize),
    Propagate(Arc<SparseMatrix>, usize),
    LogSumExpRows(usize),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Records one forward computation. Not shareable across threads.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Adjoints produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    tape_id: usize,
    grads: Vec<Option<Matrix>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Copies a tensor onto the tape. Gradients flow to it iff the tensor
    /// has `requires_grad` set.
    pub fn leaf(&self, t: &Tensor) -> Var<'_> {
        self.push(t.data().clone(), Op::Leaf, t.requires_grad())
    }

    pub fn constant(&self, m: Matrix) -> Var<'_> {
        self.push(m, Op::Leaf, false)
    }

    pub fn variable(&self, m: Matrix) -> Var<'_> {
        self.push(m, Op::Leaf, true)
    }

    /// Stacks the rows of several matrices with equal column counts.
    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        if parts.is_empty() {
            return Err(Error::shape("concat_rows", "no inputs"));
        }
        for p in parts {
            self.check_owner(*p)?;
        }
        let (value, requires_grad) = {
            let nodes = self.nodes.borrow();
            let cols = nodes[parts[0].id].value.ncols();
            if let Some(bad) = parts.iter().find(|p| nodes[p.id].value.ncols() != cols) {
                return Err(Error::shape(
                    "concat_rows",
                    format!("{} columns vs {}", nodes[bad.id].value.ncols(), cols),
                ));
            }
            let views: Vec<_> = parts.iter().map(|p| nodes[p.id].value.view()).collect();
            let value = ndarray::concatenate(Axis(0), &views)
                .map_err(|e| Error::shape("concat_rows", e.to_string()))?;
            (value, parts.iter().any(|p| nodes[p.id].requires_grad))
        };
        Ok(self.push(
            value,
            Op::ConcatRows(parts.iter().map(|p| p.id).collect()),
            requires_grad,
        ))
    }

    fn check_owner(&self, v: Var<'_>) -> Result<()> {
        if std::ptr::eq(self, v.tape) {
            Ok(())
        } else {
            Err(Error::Autodiff("variable belongs to a different tape".into()))
        }
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        self.check_owner(loss)?;
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.dim() != (1, 1) {
            return Err(Error::Autodiff(format!(
                "loss must be 1x1, got {:?}",
                nodes[loss.id].value.dim()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Matrix::ones((1, 1)));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients {
            tape_id: self as *const Tape as usize,
            grads,
        })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], nodes: &[Node], id: usize, g: Matrix) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => *acc += &g,
        slot => *slot = Some(g),
    }
}

fn backprop(nodes: &[Node], id: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
    let value = &nodes[id].value;
    let val = |i: usize| &nodes[i].value;
    let rg = |i: usize| nodes[i].requires_grad;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            if rg(*a) {
                accumulate(grads, nodes, *a, g.dot(&val(*b).t()));
            }
            if rg(*b) {
                accumulate(grads, nodes, *b, val(*a).t().dot(g));
            }
        }
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, -g);
        }
        Op::Mul(a, b) => {
            if rg(*a) {
                accumulate(grads, nodes, *a, g * val(*b));
            }
            if rg(*b) {
                accumulate(grads, nodes, *b, g * val(*a));
            }
        }
        Op::MulRow(x, row) => {
            if rg(*x) {
                accumulate(grads, nodes, *x, g * val(*row));
            }
            if rg(*row) {
                let gr = (g * val(*x)).sum_axis(Axis(0)).insert_axis(Axis(0));
                accumulate(grads, nodes, *row, gr);
            }
        }
        Op::Scale(a, c) => accumulate(grads, nodes, *a, g * *c),
        Op::Relu(a) => {
            let mut ga = g.clone();
            Zip::from(&mut ga).and(val(*a)).for_each(|gi, &x| {
                if x <= 0.0 {
                    *gi = 0.0;
                }
            });
            accumulate(grads, nodes, *a, ga);
        }
        Op::RowMean(a) => {
            let n = val(*a).nrows();
            let row = g.row(0).mapv(|v| v / n as f64);
            let ga = row.broadcast(val(*a).dim()).unwrap().to_owned();
            accumulate(grads, nodes, *a, ga);
        }
        Op::RowSums(a) => {
            let ga = g.broadcast(val(*a).dim()).unwrap().to_owned();
            accumulate(grads, nodes, *a, ga);
        }
        Op::Sum(a) => {
            let ga = Matrix::from_elem(val(*a).dim(), g[[0, 0]]);
            accumulate(grads, nodes, *a, ga);
        }
        Op::L2NormalizeRows(a) => {
            let x = val(*a);
            let mut ga = Matrix::zeros(x.dim());
            for r in 0..x.nrows() {
                let norm = x.row(r).dot(&x.row(r)).sqrt();
                if norm == 0.0 {
                    continue;
                }
                let y = value.row(r);
                let gr = g.row(r);
                let proj = y.dot(&gr);
                let mut out = ga.row_mut(r);
                Zip::from(&mut out)
                    .and(&gr)
                    .and(&y)
                    .for_each(|o, &gi, &yi| *o = (gi - yi * proj) / norm);
            }
            accumulate(grads, nodes, *a, ga);
        }
        Op::Cosine(a, b) => {
            let (u, v) = (val(*a), val(*b));
            let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nu == 0.0 || nv == 0.0 {
                return;
            }
            let c = value[[0, 0]];
            let s = g[[0, 0]];
            if rg(*a) {
                let ga = (v / (nu * nv) - u * (c / (nu * nu))) * s;
                accumulate(grads, nodes, *a, ga);
            }
            if rg(*b) {
                let gb = (u / (nu * nv) - v * (c / (nv * nv))) * s;
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::Transpose(a) => accumulate(grads, nodes, *a, g.t().to_owned()),
        Op::GatherRows(a, idx) => {
            let (n, w) = val(*a).dim();
            let g = g.as_standard_layout();
            let gs = g.as_slice().expect("standard layout");
            let mut ga = vec![0.0; n * w];
            for (r, &src) in idx.iter().enumerate() {
                for (o, v) in ga[src * w..(src + 1) * w].iter_mut().zip(&gs[r * w..(r + 1) * w]) {
                    *o += v;
                }
            }
            accumulate(grads, nodes, *a, Matrix::from_shape_vec((n, w), ga).expect("sized"));
        }
        Op::PairDots(a, left, right) => {
            let x = val(*a).as_standard_layout();
            let (n, w) = x.dim();
            let xs = x.as_slice().expect("standard layout");
            let mut ga = vec![0.0; n * w];
            for ((&i, &j), &gk) in left.iter().zip(right.iter()).zip(g.iter()) {
                for c in 0..w {
                    ga[i * w + c] += gk * xs[j * w + c];
                    ga[j * w + c] += gk * xs[i * w + c];
                }
            }
            accumulate(grads, nodes, *a, Matrix::from_shape_vec((n, w), ga).expect("sized"));
        }
        Op::ConcatRows(parts) => {
            let mut start = 0;
            for &p in parts {
                let n = val(p).nrows();
                if rg(p) {
                    let gp = g.slice(ndarray::s![start..start + n, ..]).to_owned();
                    accumulate(grads, nodes, p, gp);
                }
                start += n;
            }
        }
        Op::Reshape(a) => {
            let shape = val(*a).dim();
            let flat: Vec<f64> = g.iter().copied().collect();
            let ga = Matrix::from_shape_vec(shape, flat).unwrap();
            accumulate(grads, nodes, *a, ga);
        }
        Op::Propagate(adj, a) => accumulate(grads, nodes, *a, adj.transpose_matmul(g)),
        Op::LogSumExpRows(a) => {
            let x = val(*a);
            let mut ga = Matrix::zeros(x.dim());
            for r in 0..x.nrows() {
                let lse = value[[r, 0]];
                let gr = g[[r, 0]];
                let mut out = ga.row_mut(r);
                Zip::from(&mut out)
                    .and(&x.row(r))
                    .for_each(|o, &xi| *o = gr * (xi - lse).exp());
            }
            accumulate(grads, nodes, *a, ga);
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Matrix> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().dim()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// The single entry of a `1 × 1` value.
    pub fn item(&self) -> f64 {
        let v = self.value();
        debug_assert_eq!(v.dim(), (1, 1));
        v[[0, 0]]
    }

    fn same_tape(&self, other: Var<'t>, op: &'static str) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::shape(op, "operands recorded on different tapes"))
        }
    }

    fn unary(self, op: Op, f: impl FnOnce(&Matrix) -> Matrix) -> Var<'t> {
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (f(&n.value), n.requires_grad)
        };
        self.tape.push(value, op, rg)
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        op: Op,
        check: impl FnOnce((usize, usize), (usize, usize)) -> bool,
        f: impl FnOnce(&Matrix, &Matrix) -> Matrix,
    ) -> Result<Var<'t>> {
        self.same_tape(other, name)?;
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            if !check(a.value.dim(), b.value.dim()) {
                return Err(Error::shape(
                    name,
                    format!("{:?} and {:?}", a.value.dim(), b.value.dim()),
                ));
            }
            (f(&a.value, &b.value), a.requires_grad || b.requires_grad)
        };
        Ok(self.tape.push(value, op, rg))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(
            other,
            "matmul",
            Op::MatMul(self.id, other.id),
            |a, b| a.1 == b.0,
            |a, b| a.dot(b),
        )
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a == b, |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a == b, |a, b| a - b)
    }

    /// Elementwise (Hadamard) product of equal shapes.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a == b, |a, b| a * b)
    }

    /// Multiplies every row of `self` elementwise by the `1 × d` row `row`.
    pub fn mul_row(self, row: Var<'t>) -> Result<Var<'t>> {
        self.binary(
            row,
            "mul_row",
            Op::MulRow(self.id, row.id),
            |a, b| b.0 == 1 && a.1 == b.1,
            |x, r| x * r,
        )
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |x| x * c)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| x.mapv(|v| if v > 0.0 { v } else { 0.0 }))
    }

    /// Mean over rows: `n × d → 1 × d`.
    pub fn row_mean(self) -> Result<Var<'t>> {
        if self.shape().0 == 0 {
            return Err(Error::shape("row_mean", "zero rows"));
        }
        Ok(self.unary(Op::RowMean(self.id), |x| {
            x.mean_axis(Axis(0)).unwrap().insert_axis(Axis(0))
        }))
    }

    /// Sum of each row: `n × d → n × 1`.
    pub fn row_sums(self) -> Var<'t> {
        self.unary(Op::RowSums(self.id), |x| x.sum_axis(Axis(1)).insert_axis(Axis(1)))
    }

    pub fn sum(self) -> Var<'t> {
        self.unary(Op::Sum(self.id), |x| Matrix::from_elem((1, 1), x.sum()))
    }

    /// Scales each row to unit Euclidean norm; zero rows stay zero.
    pub fn l2_normalize_rows(self) -> Var<'t> {
        self.unary(Op::L2NormalizeRows(self.id), |x| {
            let mut out = x.clone();
            for mut row in out.rows_mut() {
                let norm = row.dot(&row).sqrt();
                if norm > 0.0 {
                    row /= norm;
                }
            }
            out
        })
    }

    /// Cosine similarity of two equally shaped operands viewed as flat
    /// vectors. Defined as 0 (with zero gradient) if either is zero.
    pub fn cosine_similarity(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(
            other,
            "cosine_similarity",
            Op::Cosine(self.id, other.id),
            |a, b| a == b,
            |u, v| Matrix::from_elem((1, 1), cosine(u.iter().copied(), v.iter().copied())),
        )
    }

    pub fn transpose(self) -> Var<'t> {
        self.unary(Op::Transpose(self.id), |x| x.t().to_owned())
    }

    pub fn gather_rows(self, indices: impl Into<Rc<[usize]>>) -> Result<Var<'t>> {
        let indices: Rc<[usize]> = indices.into();
        let n = self.shape().0;
        if let Some(bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {n}")));
        }
        let idx = indices.clone();
        Ok(self.unary(Op::GatherRows(self.id, indices), |x| {
            let w = x.ncols();
            let x = x.as_standard_layout();
            let xs = x.as_slice().expect("standard layout");
            let mut out = Vec::with_capacity(idx.len() * w);
            for &i in idx.iter() {
                out.extend_from_slice(&xs[i * w..(i + 1) * w]);
            }
            Matrix::from_shape_vec((idx.len(), w), out).expect("sized")
        }))
    }

    /// Column of row dot products `x[left[k]] · x[right[k]]`. Same as
    /// gathering both sides, multiplying and summing rows, without the
    /// intermediate matrices.
    pub fn pair_dots(self, left: impl Into<Rc<[usize]>>, right: impl Into<Rc<[usize]>>) -> Result<Var<'t>> {
        let (left, right): (Rc<[usize]>, Rc<[usize]>) = (left.into(), right.into());
        let n = self.shape().0;
        if left.len() != right.len() {
            return Err(Error::shape("pair_dots", format!("{} left and {} right rows", left.len(), right.len())));
        }
        if let Some(bad) = left.iter().chain(right.iter()).find(|&&i| i >= n) {
            return Err(Error::shape("pair_dots", format!("row {bad} of {n}")));
        }
        let (l, r) = (left.clone(), right.clone());
        Ok(self.unary(Op::PairDots(self.id, left, right), |x| {
            let w = x.ncols();
            let x = x.as_standard_layout();
            let xs = x.as_slice().expect("standard layout");
            let dots = l
                .iter()
                .zip(r.iter())
                .map(|(&i, &j)| xs[i * w..(i + 1) * w].iter().zip(&xs[j * w..(j + 1) * w]).map(|(a, b)| a * b).sum())
                .collect();
            Matrix::from_shape_vec((l.len(), 1), dots).expect("sized")
        }))
    }

    /// Row-major reshape.
    pub fn reshape(self, rows: usize, cols: usize) -> Result<Var<'t>> {
        let (r, c) = self.shape();
        if r * c != rows * cols {
            return Err(Error::shape("reshape", format!("{r}x{c} to {rows}x{cols}")));
        }
        Ok(self.unary(Op::Reshape(self.id), |x| {
            Matrix::from_shape_vec((rows, cols), x.iter().copied().collect()).unwrap()
        }))
    }

    /// `adj · self` for a constant sparse `adj`.
    pub fn propagate(self, adj: &Arc<SparseMatrix>) -> Result<Var<'t>> {
        if adj.dim().1 != self.shape().0 {
            return Err(Error::shape(
                "propagate",
                format!("operator {:?} on {:?}", adj.dim(), self.shape()),
            ));
        }
        Ok(self.unary(Op::Propagate(adj.clone(), self.id), |x| adj.matmul(x)))
    }

    /// Numerically stable `ln Σ_j exp(x_ij)` per row: `n × m → n × 1`.
    pub fn logsumexp_rows(self) -> Result<Var<'t>> {
        if self.shape().1 == 0 {
            return Err(Error::shape("logsumexp_rows", "zero columns"));
        }
        Ok(self.unary(Op::LogSumExpRows(self.id), |x| {
            let mut out = Matrix::zeros((x.nrows(), 1));
            for (r, row) in x.rows().into_iter().enumerate() {
                let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                out[[r, 0]] = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            }
            out
        }))
    }
}

/// Plain cosine similarity; 0 when either vector is zero.
pub(crate) fn cosine(u: impl Iterator<Item = f64>, v: impl Iterator<Item = f64>) -> f64 {
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        0.0
    } else {
        dot / (nu.sqrt() * nv.sqrt())
    }
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Matrix> {
        if self.tape_id != v.tape as *const Tape as usize {
            return None;
        }
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Adds the gradient of `v` into `t.grad` (no-op if `t` is frozen or no
    /// gradient reached `v`).
    pub fn accumulate_into(&self, v: Var<'_>, t: &mut Tensor) -> Result<()> {
        if !t.requires_grad() {
            return Ok(());
        }
        match self.get(v) {
            Some(g) => t.accumulate_grad(g),
            None => Ok(()),
        }
    }
}
