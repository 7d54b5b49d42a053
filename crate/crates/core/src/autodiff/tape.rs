//! Reverse-mode differentiation over a closed set of matrix operations.
//!
//! Values are computed eagerly as nodes are recorded. `backward` walks the
//! record in reverse and scatters parameter gradients into one flat vector.

use crate::autodiff::matrix::{axpy, gemm_acc, gemm_tn_acc};
use crate::autodiff::{GradientVector, Matrix};
use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, Scalar};

/// Handle to a recorded node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Applied to the assembled gradient before it is returned from `backward_with`.
pub trait GradientHook<S>: Sync {
    fn apply(&self, grad: GradientVector<S>) -> GradientVector<S>;
}

impl<S, F> GradientHook<S> for F
where
    F: Fn(GradientVector<S>) -> GradientVector<S> + Sync,
{
    fn apply(&self, grad: GradientVector<S>) -> GradientVector<S> {
        self(grad)
    }
}

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    Param { offset: usize },
    Affine { x: Var, w: Var, b: Option<Var> },
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var, broadcast: bool },
    Sub { a: Var, b: Var, broadcast: bool },
    Mul { a: Var, b: Var, broadcast: bool },
    Scale { a: Var, k: S },
    AddScalar { a: Var },
    Tanh { a: Var },
    Exp { a: Var },
    Square { a: Var },
    RowSum { a: Var },
    SumAll { a: Var },
    LogSumExpRows { a: Var },
    ConcatCols { parts: Vec<Var> },
    SliceCols { a: Var, start: usize },
    GatherRows { a: Var, index: Vec<usize> },
    Reshape { a: Var },
}

struct Node<S> {
    op: Op<S>,
    value: Matrix<S>,
    needs_grad: bool,
}

/// Recording of one forward pass over a parameter space of fixed dimension.
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    param_dim: usize,
}

impl<S: Scalar> Tape<S> {
    /// `param_dim` is the length of the flat vector that gradients are reported in.
    pub fn new(param_dim: usize) -> Self {
        Tape {
            nodes: Vec::new(),
            param_dim,
        }
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// The single entry of a 1×1 node.
    pub fn scalar(&self, v: Var) -> S {
        self.value(v).data()[0]
    }

    fn push(&mut self, op: Op<S>, value: Matrix<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, m: Matrix<S>) -> Var {
        self.push(Op::Leaf, m, false)
    }

    /// A trainable leaf occupying `offset..offset + m.len()` of the flat parameter vector.
    pub fn param(&mut self, offset: usize, m: Matrix<S>) -> Result<Var> {
        if offset + m.len() > self.param_dim {
            return Err(Error::Autodiff(format!(
                "parameter range {}..{} exceeds dimension {}",
                offset,
                offset + m.len(),
                self.param_dim
            )));
        }
        Ok(self.push(Op::Param { offset }, m, true))
    }

    /// `x · wᵀ + b` for `x` (n×in), `w` (out×in), `b` (1×out).
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, fan_in) = self.shape(x);
        let (out, w_in) = self.shape(w);
        if w_in != fan_in {
            return Err(Error::Shape(format!(
                "affine input has {fan_in} features, weight expects {w_in}"
            )));
        }
        let mut y = Matrix::zeros(n, out);
        if let Some(b) = b {
            if self.shape(b) != (1, out) {
                return Err(Error::Shape(format!(
                    "bias is {:?}, expected (1, {out})",
                    self.shape(b)
                )));
            }
            let bias = self.value(b).data();
            for i in 0..n {
                y.row_mut(i).copy_from_slice(bias);
            }
        }
        let wt = self.value(w).transpose();
        gemm_acc(self.value(x).data(), wt.data(), y.data_mut(), n, fan_in, out);
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        Ok(self.push(Op::Affine { x, w, b }, y, needs))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).matmul(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMul { a, b }, y, needs))
    }

    fn broadcast_shape(&self, a: Var, b: Var, what: &str) -> Result<bool> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok(false)
        } else if sb.0 == 1 && sb.1 == sa.1 {
            Ok(true)
        } else {
            Err(Error::Shape(format!("{what} of {sa:?} and {sb:?}")))
        }
    }

    fn zip_rows(&self, a: Var, b: Var, broadcast: bool, f: impl Fn(S, S) -> S) -> Matrix<S> {
        let va = self.value(a);
        let vb = self.value(b);
        let mut out = va.clone();
        for i in 0..va.rows() {
            let rb = if broadcast { vb.row(0) } else { vb.row(i) };
            for (o, &y) in out.row_mut(i).iter_mut().zip(rb) {
                *o = f(*o, y);
            }
        }
        out
    }

    /// Elementwise sum; `b` may be a single row broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let broadcast = self.broadcast_shape(a, b, "sum")?;
        let y = self.zip_rows(a, b, broadcast, |p, q| p + q);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add { a, b, broadcast }, y, needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let broadcast = self.broadcast_shape(a, b, "difference")?;
        let y = self.zip_rows(a, b, broadcast, |p, q| p - q);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Sub { a, b, broadcast }, y, needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let broadcast = self.broadcast_shape(a, b, "product")?;
        let y = self.zip_rows(a, b, broadcast, |p, q| p * q);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul { a, b, broadcast }, y, needs))
    }

    pub fn scale(&mut self, a: Var, k: S) -> Var {
        let y = self.value(a).map(|v| v * k);
        let needs = self.needs(a);
        self.push(Op::Scale { a, k }, y, needs)
    }

    pub fn add_scalar(&mut self, a: Var, k: S) -> Var {
        let y = self.value(a).map(|v| v + k);
        let needs = self.needs(a);
        self.push(Op::AddScalar { a }, y, needs)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let y = self.value(a).map(|v| v.tanh());
        let needs = self.needs(a);
        self.push(Op::Tanh { a }, y, needs)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let y = self.value(a).map(|v| v.exp());
        let needs = self.needs(a);
        self.push(Op::Exp { a }, y, needs)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let y = self.value(a).map(|v| v * v);
        let needs = self.needs(a);
        self.push(Op::Square { a }, y, needs)
    }

    /// n×c → n×1.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let y = Matrix::column((0..va.rows()).map(|i| va.row(i).iter().copied().sum()).collect());
        let needs = self.needs(a);
        self.push(Op::RowSum { a }, y, needs)
    }

    /// Any shape → 1×1.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let y = Matrix::row_vector(vec![self.value(a).data().iter().copied().sum()]);
        let needs = self.needs(a);
        self.push(Op::SumAll { a }, y, needs)
    }

    /// Row-wise `log Σ_j exp(a_ij)`, n×c → n×1.
    pub fn log_sum_exp_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let y = Matrix::column((0..va.rows()).map(|i| log_sum_exp(va.row(i))).collect());
        let needs = self.needs(a);
        self.push(Op::LogSumExpRows { a }, y, needs)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Shape("concatenation of nothing".into()))?;
        let n = self.shape(first).0;
        if parts.iter().any(|&p| self.shape(p).0 != n) {
            return Err(Error::Shape("concatenated parts differ in row count".into()));
        }
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut y = Matrix::zeros(n, total);
        for i in 0..n {
            let mut at = 0;
            let row = y.row_mut(i);
            for &p in parts {
                let src = self.nodes[p.0].value.row(i);
                row[at..at + src.len()].copy_from_slice(src);
                at += src.len();
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            y,
            needs,
        ))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (n, c) = self.shape(a);
        if start > end || end > c {
            return Err(Error::Shape(format!("column range {start}..{end} of {c}")));
        }
        let va = self.value(a);
        let y = Matrix::from_fn(n, end - start, |i, j| va.get(i, start + j));
        let needs = self.needs(a);
        Ok(self.push(Op::SliceCols { a, start }, y, needs))
    }

    /// Row `k` of the result is row `index[k]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: Vec<usize>) -> Result<Var> {
        let (n, c) = self.shape(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::Shape(format!("row {bad} of {n}")));
        }
        let va = self.value(a);
        let mut y = Matrix::zeros(index.len(), c);
        for (k, &i) in index.iter().enumerate() {
            y.row_mut(k).copy_from_slice(va.row(i));
        }
        let needs = self.needs(a);
        Ok(self.push(Op::GatherRows { a, index }, y, needs))
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let y = Matrix::new(rows, cols, self.value(a).data().to_vec())?;
        let needs = self.needs(a);
        Ok(self.push(Op::Reshape { a }, y, needs))
    }

    pub fn backward(&self, loss: Var) -> Result<GradientVector<S>> {
        self.backward_with(loss, &[])
    }

    /// Gradient of the 1×1 node `loss` with respect to every parameter leaf,
    /// passed through `hooks` in order.
    pub fn backward_with(
        &self,
        loss: Var,
        hooks: &[&dyn GradientHook<S>],
    ) -> Result<GradientVector<S>> {
        if self.nodes.is_empty() {
            return Err(Error::Autodiff("backward called before any forward pass".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Autodiff("loss does not belong to this tape".into()));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::Autodiff(format!(
                "loss must be a scalar, got {:?}",
                self.shape(loss)
            )));
        }
        let mut out = GradientVector::zeros(self.param_dim);
        let mut grads: Vec<Option<Matrix<S>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::row_vector(vec![S::one()]));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads, &mut out);
        }
        for h in hooks {
            out = h.apply(out);
        }
        Ok(out)
    }

    fn grad_slot<'g>(
        &self,
        grads: &'g mut [Option<Matrix<S>>],
        v: Var,
    ) -> Option<&'g mut Matrix<S>> {
        if !self.needs(v) {
            return None;
        }
        let (r, c) = self.shape(v);
        Some(grads[v.0].get_or_insert_with(|| Matrix::zeros(r, c)))
    }

    fn propagate(
        &self,
        node: &Node<S>,
        g: &Matrix<S>,
        grads: &mut [Option<Matrix<S>>],
        out: &mut GradientVector<S>,
    ) {
        let one = S::one();
        match &node.op {
            Op::Leaf => {}
            Op::Param { offset } => {
                axpy(one, g.data(), &mut out[*offset..*offset + g.len()]);
            }
            Op::Affine { x, w, b } => {
                let (n, fan_in) = self.shape(*x);
                let out_dim = g.cols();
                if let Some(dx) = self.grad_slot(grads, *x) {
                    gemm_acc(g.data(), self.value(*w).data(), dx.data_mut(), n, out_dim, fan_in);
                }
                if let Some(dw) = self.grad_slot(grads, *w) {
                    gemm_tn_acc(g.data(), self.value(*x).data(), dw.data_mut(), n, out_dim, fan_in);
                }
                if let Some(b) = b {
                    if let Some(db) = self.grad_slot(grads, *b) {
                        for i in 0..n {
                            axpy(one, g.row(i), db.data_mut());
                        }
                    }
                }
            }
            Op::MatMul { a, b } => {
                let (n, k) = self.shape(*a);
                let m = self.shape(*b).1;
                if let Some(da) = self.grad_slot(grads, *a) {
                    let bt = self.value(*b).transpose();
                    gemm_acc(g.data(), bt.data(), da.data_mut(), n, m, k);
                }
                if let Some(db) = self.grad_slot(grads, *b) {
                    gemm_tn_acc(self.value(*a).data(), g.data(), db.data_mut(), n, k, m);
                }
            }
            Op::Add { a, b, broadcast } | Op::Sub { a, b, broadcast } => {
                let sign = if matches!(node.op, Op::Sub { .. }) { -one } else { one };
                if let Some(da) = self.grad_slot(grads, *a) {
                    axpy(one, g.data(), da.data_mut());
                }
                if let Some(db) = self.grad_slot(grads, *b) {
                    if *broadcast {
                        for i in 0..g.rows() {
                            axpy(sign, g.row(i), db.data_mut());
                        }
                    } else {
                        axpy(sign, g.data(), db.data_mut());
                    }
                }
            }
            Op::Mul { a, b, broadcast } => {
                let va = self.value(*a);
                let vb = self.value(*b);
                if let Some(da) = self.grad_slot(grads, *a) {
                    for i in 0..g.rows() {
                        let rb = if *broadcast { vb.row(0) } else { vb.row(i) };
                        for ((d, &gi), &bi) in da.row_mut(i).iter_mut().zip(g.row(i)).zip(rb) {
                            *d += gi * bi;
                        }
                    }
                }
                if let Some(db) = self.grad_slot(grads, *b) {
                    for i in 0..g.rows() {
                        let target = if *broadcast { 0 } else { i };
                        for ((d, &gi), &ai) in
                            db.row_mut(target).iter_mut().zip(g.row(i)).zip(va.row(i))
                        {
                            *d += gi * ai;
                        }
                    }
                }
            }
            Op::Scale { a, k } => {
                if let Some(da) = self.grad_slot(grads, *a) {
                    axpy(*k, g.data(), da.data_mut());
                }
            }
            Op::AddScalar { a } | Op::Reshape { a } => {
                if let Some(da) = self.grad_slot(grads, *a) {
                    axpy(one, g.data(), da.data_mut());
                }
            }
            Op::Tanh { a } => {
                if let Some(da) = self.grad_slot(grads, *a) {
                    for ((d, &gi), &y) in da.data_mut().iter_mut().zip(g.data()).zip(node.value.data()) {
                        *d += gi * (one - y * y);
                    }
                }
            }
            Op::Exp { a } => {
                if let Some(da) = self.grad_slot(grads, *a) {
                    for ((d, &gi), &y) in da.data_mut().iter_mut().zip(g.data()).zip(node.value.data()) {
                        *d += gi * y;
                    }
                }
            }
            Op::Square { a } => {
                let va = self.value(*a);
                if let Some(da) = self.grad_slot(grads, *a) {
                    let two = S::lit(2.0);
                    for ((d, &gi), &x) in da.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        *d += two * gi * x;
                    }
                }
            }
            Op::RowSum { a } => {
                if let Some(da) = self.grad_slot(grads, *a) {
                    for i in 0..da.rows() {
                        let gi = g.data()[i];
                        da.row_mut(i).iter_mut().for_each(|d| *d += gi);
                    }
                }
            }
            Op::SumAll { a } => {
                if let Some(da) = self.grad_slot(grads, *a) {
                    let g0 = g.data()[0];
                    da.data_mut().iter_mut().for_each(|d| *d += g0);
                }
            }
            Op::LogSumExpRows { a } => {
                let va = self.value(*a);
                if let Some(da) = self.grad_slot(grads, *a) {
                    for i in 0..va.rows() {
                        let (gi, lse) = (g.data()[i], node.value.data()[i]);
                        for (d, &x) in da.row_mut(i).iter_mut().zip(va.row(i)) {
                            *d += gi * (x - lse).exp();
                        }
                    }
                }
            }
            Op::ConcatCols { parts } => {
                let mut at = 0;
                for &p in parts {
                    let c = self.shape(p).1;
                    if let Some(dp) = self.grad_slot(grads, p) {
                        for i in 0..g.rows() {
                            axpy(one, &g.row(i)[at..at + c], dp.row_mut(i));
                        }
                    }
                    at += c;
                }
            }
            Op::SliceCols { a, start } => {
                if let Some(da) = self.grad_slot(grads, *a) {
                    let c = g.cols();
                    for i in 0..g.rows() {
                        axpy(one, g.row(i), &mut da.row_mut(i)[*start..*start + c]);
                    }
                }
            }
            Op::GatherRows { a, index } => {
                if let Some(da) = self.grad_slot(grads, *a) {
                    for (k, &i) in index.iter().enumerate() {
                        axpy(one, g.row(k), da.row_mut(i));
                    }
                }
            }
        }
    }
}
