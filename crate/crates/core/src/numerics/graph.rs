use std::borrow::Cow;

use super::tensor::{axpy, dot, Real, Tensor};
use super::NumericsError;

/// Clamp applied to probabilities before taking logs in the BCE loss.
pub const BCE_EPSILON: f64 = 1e-7;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    /// `x · wᵀ + b` with `w` stored as (out × in).
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Rows {
        src: Var,
        start: usize,
    },
    Select {
        mask: Vec<bool>,
        on: Var,
        off: Var,
    },
    Sum(Var),
    Bce {
        p: Var,
        labels: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<'a, T: Real> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// A tape of differentiable operations. Nodes are appended in evaluation
/// order, so reverse index order is a valid reverse topological order.
///
/// Leaves may borrow their values (model parameters) for the lifetime of the
/// graph. Gradients for leaves that require them accumulate across calls to
/// [`Graph::backward`] until [`Graph::zero_grad`].
#[derive(Debug)]
pub struct Graph<'a, T: Real = f32> {
    nodes: Vec<Node<'a, T>>,
    accumulated: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(what: &str, a: &[usize], b: &[usize]) -> NumericsError {
    NumericsError::ShapeMismatch(format!("{what}: {a:?} vs {b:?}"))
}

impl<'a, T: Real> Graph<'a, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            accumulated: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.accumulated.push(None);
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), op, rg)
    }

    /// Trainable leaf borrowing its value.
    pub fn param(&mut self, value: &'a Tensor<T>) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, true)
    }

    /// Trainable leaf owning its value.
    pub fn param_owned(&mut self, value: Tensor<T>) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a trainable leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.accumulated[v.0].as_ref()
    }

    /// Accumulated gradient, or zeros of the leaf's shape.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor<T> {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()))
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.accumulated {
            *g = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.derived(out, Op::MatMul(a, b), &[a, b]))
    }

    /// Affine map of each row: `x · wᵀ + b`, `w` shaped (out × in).
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NumericsError> {
        let xv = self.value(x);
        let wv = self.value(w);
        let (rows, inp) = xv.dims2()?;
        let (out_dim, w_in) = wv.dims2()?;
        if inp != w_in || wv.rank() != 2 {
            return Err(mismatch("linear", xv.shape(), wv.shape()));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [out_dim] {
                return Err(mismatch("linear bias", self.value(b).shape(), &[out_dim]));
            }
        }
        let mut out = vec![T::zero(); rows * out_dim];
        for r in 0..rows {
            let xr = &xv.data()[r * inp..(r + 1) * inp];
            let or = &mut out[r * out_dim..(r + 1) * out_dim];
            for (o, slot) in or.iter_mut().enumerate() {
                *slot = dot(xr, &wv.data()[o * inp..(o + 1) * inp]);
            }
        }
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in out.chunks_mut(out_dim) {
                for (o, &bb) in row.iter_mut().zip(bv) {
                    *o = *o + bb;
                }
            }
        }
        let out = Tensor::new(vec![rows, out_dim], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.derived(out, Op::Linear { x, w, b }, &inputs))
    }

    fn zip_with(
        &self,
        a: Var,
        b: Var,
        what: &str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>, NumericsError> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.shape() != bv.shape() {
            return Err(mismatch(what, av.shape(), bv.shape()));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.zip_with(a, b, "add", |x, y| x + y)?;
        Ok(self.derived(out, Op::Add(a, b), &[a, b]))
    }

    /// Adds a vector to every row of a matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, NumericsError> {
        let av = self.value(a);
        let bv = self.value(bias);
        let (_, cols) = av.dims2()?;
        if bv.shape() != [cols] {
            return Err(mismatch("add_row", av.shape(), bv.shape()));
        }
        let mut out = av.clone();
        for row in out.data_mut().chunks_mut(cols) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o = *o + b;
            }
        }
        Ok(self.derived(out, Op::AddRow(a, bias), &[a, bias]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.zip_with(a, b, "mul", |x, y| x * y)?;
        Ok(self.derived(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.derived(out, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.tanh());
        self.derived(out, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .map(|x| if x > T::zero() { x } else { T::zero() });
        self.derived(out, Op::Relu(a), &[a])
    }

    /// Concatenation of vectors (axis 0) or matrices (axis 0 or 1).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, NumericsError> {
        let first = parts
            .first()
            .ok_or_else(|| NumericsError::ShapeMismatch("concat of nothing".into()))?;
        let rank = self.value(*first).rank();
        if rank == 0 || rank > 2 || axis >= rank {
            return Err(NumericsError::ShapeMismatch(format!(
                "concat axis {axis} on rank {rank}"
            )));
        }
        let out = if rank == 1 || axis == 0 {
            let tail: Vec<usize> = self.value(*first).shape()[1..].to_vec();
            let mut data = Vec::new();
            let mut lead = 0;
            for &p in parts {
                let v = self.value(p);
                if v.rank() != rank || v.shape()[1..] != tail[..] {
                    return Err(mismatch("concat", self.value(*first).shape(), v.shape()));
                }
                lead += v.shape()[0];
                data.extend_from_slice(v.data());
            }
            let mut shape = vec![lead];
            shape.extend(tail);
            Tensor::new(shape, data)?
        } else {
            let rows = self.value(*first).shape()[0];
            let mut widths = Vec::with_capacity(parts.len());
            for &p in parts {
                let v = self.value(p);
                if v.rank() != 2 || v.shape()[0] != rows {
                    return Err(mismatch("concat", self.value(*first).shape(), v.shape()));
                }
                widths.push(v.shape()[1]);
            }
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row(r));
                }
            }
            Tensor::new(vec![rows, total], data)?
        };
        Ok(self.derived(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    /// Row lookup into a (vocab × dim) table.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let tv = self.value(table);
        let (n, dim) = tv.dims2()?;
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= n {
                return Err(NumericsError::ShapeMismatch(format!(
                    "gather id {id} out of range for {n} rows"
                )));
            }
            data.extend_from_slice(tv.row(id));
        }
        let out = Tensor::new(vec![ids.len(), dim], data)?;
        Ok(self.derived(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Contiguous block of rows `[start, start + len)` of a matrix.
    pub fn rows(&mut self, src: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let sv = self.value(src);
        let (n, cols) = sv.dims2()?;
        if start + len > n {
            return Err(NumericsError::ShapeMismatch(format!(
                "rows {start}..{} of {n}",
                start + len
            )));
        }
        let out = Tensor::new(
            vec![len, cols],
            sv.data()[start * cols..(start + len) * cols].to_vec(),
        )?;
        Ok(self.derived(out, Op::Rows { src, start }, &[src]))
    }

    /// Row-wise choice: row r comes from `on` where `mask[r]`, else from `off`.
    pub fn select_rows(&mut self, mask: &[bool], on: Var, off: Var) -> Result<Var, NumericsError> {
        let a = self.value(on);
        let b = self.value(off);
        if a.shape() != b.shape() {
            return Err(mismatch("select_rows", a.shape(), b.shape()));
        }
        let (rows, cols) = a.dims2()?;
        if mask.len() != rows {
            return Err(NumericsError::ShapeMismatch(format!(
                "mask of {} for {rows} rows",
                mask.len()
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for (r, &m) in mask.iter().enumerate() {
            data.extend_from_slice(if m { a.row(r) } else { b.row(r) });
        }
        let out = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self.derived(
            out,
            Op::Select {
                mask: mask.to_vec(),
                on,
                off,
            },
            &[on, off],
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self
            .value(a)
            .data()
            .iter()
            .fold(T::zero(), |acc, &x| acc + x);
        self.derived(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Mean binary cross-entropy of probabilities `p` against 0/1 labels.
    pub fn bce(&mut self, p: Var, labels: &[T]) -> Result<Var, NumericsError> {
        let pv = self.value(p);
        if pv.len() != labels.len() || labels.is_empty() {
            return Err(NumericsError::ShapeMismatch(format!(
                "bce over {} probabilities with {} labels",
                pv.len(),
                labels.len()
            )));
        }
        let n = T::of(labels.len() as f64);
        let total = pv
            .data()
            .iter()
            .zip(labels)
            .fold(T::zero(), |acc, (&pi, &y)| acc + bce_term(pi, y));
        Ok(self.derived(
            Tensor::scalar(total / n),
            Op::Bce {
                p,
                labels: labels.to_vec(),
            },
            &[p],
        ))
    }

    /// Reverse pass from a scalar node. Gradients of trainable leaves are
    /// added to whatever an earlier pass left there.
    pub fn backward(&mut self, loss: Var) -> Result<(), NumericsError> {
        if self.value(loss).len() != 1 {
            return Err(NumericsError::NonScalarLoss(
                self.value(loss).shape().to_vec(),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => match &mut self.accumulated[i] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                },
                op => self.propagate(op, &node.value, &g, &mut grads),
            }
        }
        Ok(())
    }

    fn propagate(
        &self,
        op: &Op<T>,
        out: &Tensor<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if self.wants(*a) {
                    // dA = G · Bᵀ
                    let ga = self.slot(*a, grads);
                    for i in 0..m {
                        for p in 0..k {
                            let s = dot(
                                &g.data()[i * n..(i + 1) * n],
                                &bv.data()[p * n..(p + 1) * n],
                            );
                            ga.data_mut()[i * k + p] = ga.data()[i * k + p] + s;
                        }
                    }
                }
                if self.wants(*b) {
                    // dB = Aᵀ · G
                    let gb = self.slot(*b, grads);
                    for i in 0..m {
                        for p in 0..k {
                            let av_ip = av.data()[i * k + p];
                            axpy(
                                av_ip,
                                &g.data()[i * n..(i + 1) * n],
                                &mut gb.data_mut()[p * n..(p + 1) * n],
                            );
                        }
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (rows, inp) = xv.dims2().expect("checked in forward");
                let out_dim = wv.shape()[0];
                if self.wants(*x) {
                    let gx = self.slot(*x, grads);
                    for r in 0..rows {
                        let gr = &g.data()[r * out_dim..(r + 1) * out_dim];
                        let gxr = &mut gx.data_mut()[r * inp..(r + 1) * inp];
                        for (o, &go) in gr.iter().enumerate() {
                            if go != T::zero() {
                                axpy(go, &wv.data()[o * inp..(o + 1) * inp], gxr);
                            }
                        }
                    }
                }
                if self.wants(*w) {
                    let gw = self.slot(*w, grads);
                    for r in 0..rows {
                        let xr = &xv.data()[r * inp..(r + 1) * inp];
                        for o in 0..out_dim {
                            let go = g.data()[r * out_dim + o];
                            if go != T::zero() {
                                axpy(go, xr, &mut gw.data_mut()[o * inp..(o + 1) * inp]);
                            }
                        }
                    }
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let gb = self.slot(*b, grads);
                        for row in g.data().chunks(out_dim) {
                            axpy(T::one(), row, gb.data_mut());
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        self.slot(v, grads).add_assign(g).expect("same shape");
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if self.wants(*a) {
                    self.slot(*a, grads).add_assign(g).expect("same shape");
                }
                if self.wants(*bias) {
                    let cols = self.value(*bias).len();
                    let gb = self.slot(*bias, grads);
                    for row in g.data().chunks(cols) {
                        axpy(T::one(), row, gb.data_mut());
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let ga = self.slot(*a, grads);
                    for ((s, &gi), &bi) in ga.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                        *s = *s + gi * bi;
                    }
                }
                if self.wants(*b) {
                    let gb = self.slot(*b, grads);
                    for ((s, &gi), &ai) in gb.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *s = *s + gi * ai;
                    }
                }
            }
            Op::Sigmoid(a) => self.unary(*a, out, g, grads, |y, gi| gi * y * (T::one() - y)),
            Op::Tanh(a) => self.unary(*a, out, g, grads, |y, gi| gi * (T::one() - y * y)),
            Op::Relu(a) => self.unary(*a, out, g, grads, |y, gi| {
                if y > T::zero() {
                    gi
                } else {
                    T::zero()
                }
            }),
            Op::Concat { parts, axis } => {
                let rank = out.rank();
                if rank == 1 || *axis == 0 {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        if self.wants(p) {
                            let gp = self.slot(p, grads);
                            axpy(T::one(), &g.data()[offset..offset + n], gp.data_mut());
                        }
                        offset += n;
                    }
                } else {
                    let rows = out.shape()[0];
                    let total = out.shape()[1];
                    let mut col = 0;
                    for &p in parts {
                        let w = self.value(p).shape()[1];
                        if self.wants(p) {
                            let gp = self.slot(p, grads);
                            for r in 0..rows {
                                axpy(
                                    T::one(),
                                    &g.data()[r * total + col..r * total + col + w],
                                    &mut gp.data_mut()[r * w..(r + 1) * w],
                                );
                            }
                        }
                        col += w;
                    }
                }
            }
            Op::Gather { table, ids } => {
                if self.wants(*table) {
                    let dim = out.shape()[1];
                    let gt = self.slot(*table, grads);
                    for (r, &id) in ids.iter().enumerate() {
                        axpy(
                            T::one(),
                            &g.data()[r * dim..(r + 1) * dim],
                            &mut gt.data_mut()[id * dim..(id + 1) * dim],
                        );
                    }
                }
            }
            Op::Rows { src, start } => {
                if self.wants(*src) {
                    let cols = out.shape()[1];
                    let gs = self.slot(*src, grads);
                    let from = start * cols;
                    axpy(T::one(), g.data(), &mut gs.data_mut()[from..from + g.len()]);
                }
            }
            Op::Select { mask, on, off } => {
                let cols = out.shape()[1];
                for (target, want_on) in [(*on, true), (*off, false)] {
                    if !self.wants(target) {
                        continue;
                    }
                    let gt = self.slot(target, grads);
                    for (r, &m) in mask.iter().enumerate() {
                        if m == want_on {
                            axpy(
                                T::one(),
                                &g.data()[r * cols..(r + 1) * cols],
                                &mut gt.data_mut()[r * cols..(r + 1) * cols],
                            );
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if self.wants(*a) {
                    let s = g.data()[0];
                    for v in self.slot(*a, grads).data_mut() {
                        *v = *v + s;
                    }
                }
            }
            Op::Bce { p, labels } => {
                if self.wants(*p) {
                    let pv = self.value(*p);
                    let scale = g.data()[0] / T::of(labels.len() as f64);
                    let gp = self.slot(*p, grads);
                    for ((s, &pi), &y) in gp.data_mut().iter_mut().zip(pv.data()).zip(labels) {
                        // The loss is flat where the clamp is active.
                        if clamp_prob(pi) == pi {
                            let d = (T::one() - y) / (T::one() - pi) - y / pi;
                            *s = *s + scale * d;
                        }
                    }
                }
            }
        }
    }

    fn unary(
        &self,
        a: Var,
        out: &Tensor<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
        f: impl Fn(T, T) -> T,
    ) {
        if !self.wants(a) {
            return;
        }
        let ga = self.slot(a, grads);
        for ((s, &y), &gi) in ga.data_mut().iter_mut().zip(out.data()).zip(g.data()) {
            *s = *s + f(y, gi);
        }
    }

    #[inline]
    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn slot<'g>(&self, v: Var, grads: &'g mut [Option<Tensor<T>>]) -> &'g mut Tensor<T> {
        grads[v.0].get_or_insert_with(|| Tensor::zeros(self.value(v).shape()))
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn clamp_prob<T: Real>(p: T) -> T {
    let eps = T::of(BCE_EPSILON);
    p.max(eps).min(T::one() - eps)
}

#[inline]
fn bce_term<T: Real>(p: T, y: T) -> T {
    let pc = clamp_prob(p);
    -(y * pc.ln() + (T::one() - y) * (T::one() - pc).ln())
}

/// Binary cross-entropy of a single probability against a 0/1 label, with
/// the probability clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    bce_term(p, y)
}
