//! Tape-based reverse-mode automatic differentiation over matrices.
//!
//! Every op evaluates eagerly and appends a node to the tape. [`Graph::backward`]
//! walks the tape in reverse, accumulating vector-Jacobian products only into
//! nodes that (transitively) depend on a leaf created with `requires_grad`.

use crate::error::{Error, Result};
use crate::scalar::{gemm, Real};

use super::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow {
        x: Var,
        row: Var,
    },
    MulRow {
        x: Var,
        row: Var,
    },
    Scale(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SoftmaxRows(Var),
    /// Value holds the normalized rows; `rstd` the per-row `1/σ`.
    LayerNormRows {
        x: Var,
        rstd: Vec<T>,
    },
    Block {
        x: Var,
        r0: usize,
        c0: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    Mse {
        x: Var,
        target: Tensor<T>,
    },
    WeightedSum {
        x: Var,
        w: Tensor<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// `op(a) · op(b)` where `op` transposes when the flag is set.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ar, ac) = self.value(a).dims2();
        let (br, bc) = self.value(b).dims2();
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (kb, n) = if tb { (bc, br) } else { (br, bc) };
        if k != kb {
            return Err(Error::shape("matmul", format!("inner dim {k}"), kb));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(
            ta,
            tb,
            self.value(a).data(),
            ar,
            ac,
            self.value(b).data(),
            br,
            bc,
            T::one(),
            T::zero(),
            &mut out,
        );
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::MatMul { a, b, ta, tb },
            ng,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).dims2() != self.value(b).dims2() {
            return Err(Error::shape(
                op,
                format!("{:?}", self.value(a).dims2()),
                format!("{:?}", self.value(b).dims2()),
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(a) || self.ng(b);
        self.push(value, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    fn row_broadcast(&mut self, op_name: &'static str, x: Var, row: Var, mul: bool) -> Result<Var> {
        let (r, c) = self.value(x).dims2();
        if self.value(row).len() != c {
            return Err(Error::shape(op_name, c, self.value(row).len()));
        }
        let rv = self.value(row).data();
        let mut data = self.value(x).data().to_vec();
        for i in 0..r {
            for (v, b) in data[i * c..(i + 1) * c].iter_mut().zip(rv) {
                if mul {
                    *v *= *b;
                } else {
                    *v += *b;
                }
            }
        }
        let value = Tensor::new(self.value(x).shape().to_vec(), data)?;
        let ng = self.ng(x) || self.ng(row);
        let op = if mul {
            Op::MulRow { x, row }
        } else {
            Op::AddRow { x, row }
        };
        Ok(self.push(value, op, ng))
    }

    /// Adds a length-`cols` vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_broadcast("add_row", x, row, false)
    }

    /// Multiplies every row of `x` elementwise by a length-`cols` vector.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_broadcast("mul_row", x, row, true)
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(x).map(f);
        let ng = self.ng(x);
        self.push(value, op, ng)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.unary(x, Op::Scale(x, s), |v| v * s)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), |v| T::one() / (T::one() + (-v).exp()))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(T::zero()))
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.value(x).dims2();
        let mut data = self.value(x).data().to_vec();
        for i in 0..r {
            let row = &mut data[i * c..(i + 1) * c];
            let mx = row.iter().fold(T::neg_infinity(), |m, v| m.max(*v));
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let value = Tensor::new(self.value(x).shape().to_vec(), data).expect("same shape");
        let ng = self.ng(x);
        self.push(value, Op::SoftmaxRows(x), ng)
    }

    /// Normalizes each row to zero mean and unit (biased) variance.
    pub fn layer_norm_rows(&mut self, x: Var, eps: T) -> Var {
        let (r, c) = self.value(x).dims2();
        let n = T::lit(c as f64);
        let mut data = self.value(x).data().to_vec();
        let mut rstd = Vec::with_capacity(r);
        for i in 0..r {
            let row = &mut data[i * c..(i + 1) * c];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * rs;
            }
            rstd.push(rs);
        }
        let value = Tensor::new(self.value(x).shape().to_vec(), data).expect("same shape");
        let ng = self.ng(x);
        self.push(value, Op::LayerNormRows { x, rstd }, ng)
    }

    /// Sub-matrix `x[r0..r0+nr, c0..c0+nc]`.
    pub fn block(&mut self, x: Var, r0: usize, nr: usize, c0: usize, nc: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2();
        if r0 + nr > r || c0 + nc > c {
            return Err(Error::shape(
                "block",
                format!("within [{r}, {c}]"),
                format!("rows {r0}+{nr}, cols {c0}+{nc}"),
            ));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(nr * nc);
        for i in r0..r0 + nr {
            data.extend_from_slice(&src[i * c + c0..i * c + c0 + nc]);
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::new(vec![nr, nc], data)?,
            Op::Block { x, r0, c0 },
            ng,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = parts
            .first()
            .map(|p| self.value(*p).dims2().0)
            .ok_or_else(|| Error::Validation("concat of nothing".into()))?;
        let mut total = 0;
        for p in parts {
            let (pr, pc) = self.value(*p).dims2();
            if pr != r {
                return Err(Error::shape("concat_cols", r, pr));
            }
            total += pc;
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(i));
            }
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(
            Tensor::new(vec![r, total], data)?,
            Op::ConcatCols(parts.to_vec()),
            ng,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = parts
            .first()
            .map(|p| self.value(*p).dims2().1)
            .ok_or_else(|| Error::Validation("concat of nothing".into()))?;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let (pr, pc) = self.value(*p).dims2();
            if pc != c {
                return Err(Error::shape("concat_rows", c, pc));
            }
            rows += pr;
            data.extend_from_slice(self.value(*p).data());
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(
            Tensor::new(vec![rows, c], data)?,
            Op::ConcatRows(parts.to_vec()),
            ng,
        ))
    }

    /// Output row `i` is row `idx[i]` of `x`.
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let (r, c) = self.value(x).dims2();
        if let Some(bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::shape("gather_rows", format!("index < {r}"), bad));
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            data.extend_from_slice(self.value(x).row(i));
        }
        let ng = self.ng(x);
        let value = Tensor::new(vec![idx.len(), c], data)?;
        Ok(self.push(value, Op::GatherRows { x, idx }, ng))
    }

    /// Mean squared error against a constant target; scalar output.
    pub fn mse(&mut self, x: Var, target: Tensor<T>) -> Result<Var> {
        let v = self.value(x);
        if v.dims2() != target.dims2() || v.len() != target.len() {
            return Err(Error::shape(
                "mse",
                format!("{:?}", target.shape()),
                format!("{:?}", v.shape()),
            ));
        }
        let n = T::lit(v.len().max(1) as f64);
        let loss = v
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (*a - *b) * (*a - *b))
            .sum::<T>()
            / n;
        let ng = self.ng(x);
        Ok(self.push(Tensor::scalar(loss), Op::Mse { x, target }, ng))
    }

    /// `Σ xᵢ·wᵢ` for a constant weight tensor of the same size.
    pub fn weighted_sum(&mut self, x: Var, w: Tensor<T>) -> Result<Var> {
        if self.value(x).len() != w.len() {
            return Err(Error::shape("weighted_sum", w.len(), self.value(x).len()));
        }
        let s = self
            .value(x)
            .data()
            .iter()
            .zip(w.data())
            .map(|(a, b)| *a * *b)
            .sum::<T>();
        let ng = self.ng(x);
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, w }, ng))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.value(root).len() != 1 {
            return Err(Error::shape(
                "backward",
                "scalar root",
                self.value(root).len(),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::filled(self.value(root).shape(), T::one()));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Tensor<T>>], v: Var) -> Option<&'g mut [T]> {
        if !self.ng(v) {
            return None;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.value(v).shape()));
        }
        slot.as_mut().map(|t| t.data_mut())
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (ta, tb) = (*ta, *tb);
                let va = self.value(*a);
                let vb = self.value(*b);
                let (ar, ac) = va.dims2();
                let (br, bc) = vb.dims2();
                let (gr, gc) = g.dims2();
                if let Some(da) = self.acc(grads, *a) {
                    if !ta {
                        gemm(
                            false,
                            !tb,
                            gd,
                            gr,
                            gc,
                            vb.data(),
                            br,
                            bc,
                            T::one(),
                            T::one(),
                            da,
                        );
                    } else {
                        gemm(
                            tb,
                            true,
                            vb.data(),
                            br,
                            bc,
                            gd,
                            gr,
                            gc,
                            T::one(),
                            T::one(),
                            da,
                        );
                    }
                }
                if let Some(db) = self.acc(grads, *b) {
                    if !tb {
                        gemm(
                            !ta,
                            false,
                            va.data(),
                            ar,
                            ac,
                            gd,
                            gr,
                            gc,
                            T::one(),
                            T::one(),
                            db,
                        );
                    } else {
                        gemm(
                            true,
                            ta,
                            gd,
                            gr,
                            gc,
                            va.data(),
                            ar,
                            ac,
                            T::one(),
                            T::one(),
                            db,
                        );
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = self.acc(grads, *a) {
                    da.iter_mut().zip(gd).for_each(|(d, g)| *d += *g);
                }
                if let Some(db) = self.acc(grads, *b) {
                    db.iter_mut().zip(gd).for_each(|(d, g)| *d += *g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = self.acc(grads, *a) {
                    da.iter_mut().zip(gd).for_each(|(d, g)| *d += *g);
                }
                if let Some(db) = self.acc(grads, *b) {
                    db.iter_mut().zip(gd).for_each(|(d, g)| *d -= *g);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(da) = self.acc(grads, *a) {
                    for ((d, g), o) in da.iter_mut().zip(gd).zip(vb) {
                        *d += *g * *o;
                    }
                }
                if let Some(db) = self.acc(grads, *b) {
                    for ((d, g), o) in db.iter_mut().zip(gd).zip(va) {
                        *d += *g * *o;
                    }
                }
            }
            Op::AddRow { x, row } => {
                let (r, c) = g.dims2();
                if let Some(dx) = self.acc(grads, *x) {
                    dx.iter_mut().zip(gd).for_each(|(d, g)| *d += *g);
                }
                if let Some(dr) = self.acc(grads, *row) {
                    for i in 0..r {
                        for (d, g) in dr.iter_mut().zip(&gd[i * c..(i + 1) * c]) {
                            *d += *g;
                        }
                    }
                }
            }
            Op::MulRow { x, row } => {
                let (r, c) = g.dims2();
                let vx = self.value(*x).data();
                let vr = self.value(*row).data();
                if let Some(dx) = self.acc(grads, *x) {
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] += gd[i * c + j] * vr[j];
                        }
                    }
                }
                if let Some(dr) = self.acc(grads, *row) {
                    for i in 0..r {
                        for j in 0..c {
                            dr[j] += gd[i * c + j] * vx[i * c + j];
                        }
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(dx) = self.acc(grads, *x) {
                    dx.iter_mut().zip(gd).for_each(|(d, g)| *d += *g * *s);
                }
            }
            Op::Sigmoid(x) => {
                if let Some(dx) = self.acc(grads, *x) {
                    for ((d, g), y) in dx.iter_mut().zip(gd).zip(y) {
                        *d += *g * *y * (T::one() - *y);
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(dx) = self.acc(grads, *x) {
                    for ((d, g), y) in dx.iter_mut().zip(gd).zip(y) {
                        *d += *g * (T::one() - *y * *y);
                    }
                }
            }
            Op::Relu(x) => {
                if let Some(dx) = self.acc(grads, *x) {
                    for ((d, g), y) in dx.iter_mut().zip(gd).zip(y) {
                        if *y > T::zero() {
                            *d += *g;
                        }
                    }
                }
            }
            Op::SoftmaxRows(x) => {
                let (r, c) = g.dims2();
                if let Some(dx) = self.acc(grads, *x) {
                    for i in 0..r {
                        let gs = &gd[i * c..(i + 1) * c];
                        let ys = &y[i * c..(i + 1) * c];
                        let dot: T = gs.iter().zip(ys).map(|(a, b)| *a * *b).sum();
                        for j in 0..c {
                            dx[i * c + j] += ys[j] * (gs[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNormRows { x, rstd } => {
                let (r, c) = g.dims2();
                let n = T::lit(c as f64);
                if let Some(dx) = self.acc(grads, *x) {
                    for i in 0..r {
                        let gs = &gd[i * c..(i + 1) * c];
                        let xh = &y[i * c..(i + 1) * c];
                        let mean_g = gs.iter().copied().sum::<T>() / n;
                        let mean_gx = gs.iter().zip(xh).map(|(a, b)| *a * *b).sum::<T>() / n;
                        for j in 0..c {
                            dx[i * c + j] += rstd[i] * (gs[j] - mean_g - xh[j] * mean_gx);
                        }
                    }
                }
            }
            Op::Block { x, r0, c0 } => {
                let (nr, nc) = g.dims2();
                let (_, c) = self.value(*x).dims2();
                if let Some(dx) = self.acc(grads, *x) {
                    for i in 0..nr {
                        let dst = &mut dx[(r0 + i) * c + c0..(r0 + i) * c + c0 + nc];
                        for (d, g) in dst.iter_mut().zip(&gd[i * nc..(i + 1) * nc]) {
                            *d += *g;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let (r, c) = g.dims2();
                let mut off = 0;
                for p in parts {
                    let (_, pc) = self.value(*p).dims2();
                    if let Some(dp) = self.acc(grads, *p) {
                        for i in 0..r {
                            let src = &gd[i * c + off..i * c + off + pc];
                            for (d, g) in dp[i * pc..(i + 1) * pc].iter_mut().zip(src) {
                                *d += *g;
                            }
                        }
                    }
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    if let Some(dp) = self.acc(grads, *p) {
                        for (d, g) in dp.iter_mut().zip(&gd[off..off + n]) {
                            *d += *g;
                        }
                    }
                    off += n;
                }
            }
            Op::GatherRows { x, idx } => {
                let (_, c) = g.dims2();
                if let Some(dx) = self.acc(grads, *x) {
                    for (o, &src) in idx.iter().enumerate() {
                        for (d, g) in dx[src * c..(src + 1) * c]
                            .iter_mut()
                            .zip(&gd[o * c..(o + 1) * c])
                        {
                            *d += *g;
                        }
                    }
                }
            }
            Op::Mse { x, target } => {
                let vx = self.value(*x).data();
                let scale = T::lit(2.0) * gd[0] / T::lit(vx.len().max(1) as f64);
                if let Some(dx) = self.acc(grads, *x) {
                    for ((d, a), b) in dx.iter_mut().zip(vx).zip(target.data()) {
                        *d += scale * (*a - *b);
                    }
                }
            }
            Op::WeightedSum { x, w } => {
                if let Some(dx) = self.acc(grads, *x) {
                    for (d, wv) in dx.iter_mut().zip(w.data()) {
                        *d += gd[0] * *wv;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_and_gradients_by_hand() {
        let mut g = Graph::new();
        let a = g.param(t(&[1, 2], &[1.0, 2.0]));
        let b = g.param(t(&[2, 1], &[3.0, 4.0]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[11.0]);
        let grads = g.backward(c).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[3.0, 4.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let a = g.param(t(&[1, 2], &[1.0, 2.0]));
        let k = g.constant(t(&[1, 2], &[5.0, 6.0]));
        let s = g.mul(a, k).unwrap();
        let l = g.weighted_sum(s, t(&[2], &[1.0, 1.0])).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[5.0, 6.0]);
        assert!(grads.get(k).is_none());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.0, 1000.0]));
        let s = g.softmax_rows(x);
        for r in 0..2 {
            let sum: f64 = g.value(s).row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 3], &[0.0; 6]));
        let b = g.constant(t(&[2, 3], &[0.0; 6]));
        assert!(g.matmul(a, b).is_err());
        let c = g.constant(t(&[3, 2], &[0.0; 6]));
        assert!(g.add(a, c).is_err());
        assert!(g.block(a, 1, 2, 0, 1).is_err());
        assert!(g.backward(a).is_err());
    }
}
