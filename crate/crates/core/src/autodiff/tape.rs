//! Wengert-list tape recording primitive ops for reverse-mode differentiation.
//!
//! Every op appends a node whose inputs already exist on the tape, so the node
//! vector is topologically ordered by construction and `backward` is a single
//! reverse sweep.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, gemm_nt_acc, gemm_tn_acc, log_softmax_row, softmax_row, Tensor};
use crate::error::{FpbError, Result};

/// Handle to a node on a [`Tape`].
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
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    Concat(Vec<Var>),
    Softmax(Var),
    LogSoftmax(Var),
    Gather(Var, Vec<usize>),
    SliceCols(Var, usize),
    AddBias(Var, Var),
    Reshape(Var),
    RepeatRows(Var, usize),
    Stack(Vec<Var>),
    Pick(Var, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.by_node.get(var.0).and_then(|g| g.as_ref())
    }
}

/// Parameter-keyed gradients; every parameter in the store has an entry.
pub type GradMap = Vec<(ParamId, Tensor)>;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_leaves: HashMap<ParamId, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.param_leaves.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copies the value of `v` into a fresh constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    /// Leaf bound to a stored parameter; repeated calls reuse the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        let v = self.leaf(store.value(id).clone());
        self.param_leaves.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sb.len() == 2 {
            let k = *sa.last().unwrap();
            if k != sb[0] {
                return Err(FpbError::dim("matmul", format!("{sa:?} x {sb:?}")));
            }
            let (va, vb) = (self.value(a), self.value(b));
            let m = va.rows();
            let n = sb[1];
            let out = gemm(va.data(), vb.data(), m, k, n);
            let mut shape = sa.clone();
            *shape.last_mut().unwrap() = n;
            let rg = self.rg(a) || self.rg(b);
            Ok(self.push(Tensor::new(shape, out)?, Op::MatMul(a, b), rg))
        } else if sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && sa[2] == sb[1] {
            let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
            let (va, vb) = (self.value(a).data(), self.value(b).data());
            let mut out = Vec::with_capacity(batch * m * n);
            for i in 0..batch {
                out.extend(gemm(
                    &va[i * m * k..(i + 1) * m * k],
                    &vb[i * k * n..(i + 1) * k * n],
                    m,
                    k,
                    n,
                ));
            }
            let rg = self.rg(a) || self.rg(b);
            Ok(self.push(
                Tensor::new(vec![batch, m, n], out)?,
                Op::BatchMatMul(a, b),
                rg,
            ))
        } else {
            Err(FpbError::dim("matmul", format!("{sa:?} x {sb:?}")))
        }
    }

    fn zip_op(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(FpbError::dim(
                name,
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&x| !(x > 0.0)) {
            return Err(FpbError::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary(a, f64::ln, Op::Log(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Concatenation along the last dimension.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| FpbError::dim("concat", "no inputs"))?;
        let lead = {
            let s = self.shape(*first);
            s[..s.len() - 1].to_vec()
        };
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return Err(FpbError::dim(
                    "concat",
                    format!("leading dims {:?} vs {:?}", s, lead),
                ));
            }
            total += s[s.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(parts.to_vec()), rg))
    }

    /// Softmax over the last dimension (max-subtracted).
    pub fn softmax(&mut self, a: Var) -> Var {
        self.rowwise(a, softmax_row, Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        self.rowwise(a, log_softmax_row, Op::LogSoftmax(a))
    }

    fn rowwise(&mut self, a: Var, f: fn(&[f64], &mut [f64]), op: Op) -> Var {
        let v = self.value(a);
        let c = v.cols();
        let mut out = vec![0.0; v.len()];
        for (src, dst) in v.data().chunks(c).zip(out.chunks_mut(c)) {
            f(src, dst);
        }
        let value = Tensor::new(v.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    /// Row lookup: `out[i] = table[ids[i]]`, shape `[ids.len(), d]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(FpbError::dim(
                "gather_rows",
                format!("table {:?}", t.shape()),
            ));
        }
        if ids.is_empty() {
            return Err(FpbError::dim("gather_rows", "empty id list"));
        }
        let size = t.rows();
        let mut data = Vec::with_capacity(ids.len() * t.cols());
        for &id in ids {
            if id >= size {
                return Err(FpbError::Index { id, size });
            }
            data.extend_from_slice(t.row_slice(id));
        }
        let value = Tensor::new(vec![ids.len(), t.cols()], data)?;
        let rg = self.rg(table);
        Ok(self.push(value, Op::Gather(table, ids.to_vec()), rg))
    }

    /// Columns `start..start+len` of the last dimension.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(a);
        let c = v.cols();
        if len == 0 || start + len > c {
            return Err(FpbError::dim(
                "slice",
                format!("{start}..{} of {:?}", start + len, v.shape()),
            ));
        }
        let mut data = Vec::with_capacity(v.rows() * len);
        for r in 0..v.rows() {
            data.extend_from_slice(&v.row_slice(r)[start..start + len]);
        }
        let mut shape = v.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(shape, data)?, Op::SliceCols(a, start), rg))
    }

    /// Adds a bias vector (width = last dim of `x`) to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vb.len() != vx.cols() {
            return Err(FpbError::dim(
                "broadcast_add",
                format!("{:?} + {:?}", vx.shape(), vb.shape()),
            ));
        }
        let c = vx.cols();
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(c) {
            for (o, b) in row.iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        let value = Tensor::new(vx.shape().to_vec(), data)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(value, Op::AddBias(x, bias), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self
            .value(a)
            .reshaped(shape)
            .map_err(|_| FpbError::dim("reshape", format!("{:?} -> {shape:?}", self.shape(a))))?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// `[R, d] -> [R, times, d]`, each row repeated `times` times.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Result<Var> {
        let v = self.value(a);
        if v.shape().len() != 2 || times == 0 {
            return Err(FpbError::dim("repeat_rows", format!("{:?}", v.shape())));
        }
        let (r, c) = (v.rows(), v.cols());
        let mut data = Vec::with_capacity(r * times * c);
        for i in 0..r {
            for _ in 0..times {
                data.extend_from_slice(v.row_slice(i));
            }
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![r, times, c], data)?,
            Op::RepeatRows(a, times),
            rg,
        ))
    }

    /// Stacks `t` tensors of shape `[B, d]` into `[B, t, d]`.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| FpbError::dim("stack", "no inputs"))?;
        let s = self.shape(*first).to_vec();
        if s.len() != 2 || parts.iter().any(|&p| self.shape(p) != &s[..]) {
            return Err(FpbError::dim(
                "stack",
                format!("parts must share 2-D shape {s:?}"),
            ));
        }
        let (b, d, t) = (s[0], s[1], parts.len());
        let mut data = Vec::with_capacity(b * t * d);
        for row in 0..b {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(row));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(vec![b, t, d], data)?,
            Op::Stack(parts.to_vec()),
            rg,
        ))
    }

    /// `out[r] = a[r, cols[r]]`, shape `[R, 1]`.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let v = self.value(a);
        if cols.len() != v.rows() {
            return Err(FpbError::dim(
                "pick",
                format!("{} indices for {:?}", cols.len(), v.shape()),
            ));
        }
        let c = v.cols();
        let mut data = Vec::with_capacity(cols.len());
        for (r, &j) in cols.iter().enumerate() {
            if j >= c {
                return Err(FpbError::Index { id: j, size: c });
            }
            data.push(v.row_slice(r)[j]);
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![cols.len(), 1], data)?,
            Op::Pick(a, cols.to_vec()),
            rg,
        ))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != [1] {
            return Err(FpbError::contract(format!(
                "backward needs a scalar loss of shape [1], got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        // Reachable-or-not, every trainable leaf gets a gradient.
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { by_node: grads })
    }

    /// Parameter gradients for every parameter of `store`; unused ones are zero.
    pub fn param_grads(&self, store: &ParamStore, grads: &Gradients) -> GradMap {
        store
            .ids()
            .map(|id| {
                let g = self
                    .param_leaves
                    .get(&id)
                    .and_then(|&v| grads.get(v).cloned())
                    .unwrap_or_else(|| Tensor::zeros(store.value(id).shape()));
                (id, g)
            })
            .collect()
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if self.rg(a) {
                    gemm_nt_acc(self.buf(grads, a), gd, vb.data(), m, k, n);
                }
                if self.rg(b) {
                    gemm_tn_acc(self.buf(grads, b), va.data(), gd, m, k, n);
                }
            }
            &Op::BatchMatMul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                let s = va.shape();
                let (batch, m, k, n) = (s[0], s[1], s[2], vb.shape()[2]);
                if self.rg(a) {
                    let buf = self.buf(grads, a);
                    for i in 0..batch {
                        gemm_nt_acc(
                            &mut buf[i * m * k..(i + 1) * m * k],
                            &gd[i * m * n..(i + 1) * m * n],
                            &vb.data()[i * k * n..(i + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                }
                if self.rg(b) {
                    let buf = self.buf(grads, b);
                    for i in 0..batch {
                        gemm_tn_acc(
                            &mut buf[i * k * n..(i + 1) * k * n],
                            &va.data()[i * m * k..(i + 1) * m * k],
                            &gd[i * m * n..(i + 1) * m * n],
                            m,
                            k,
                            n,
                        );
                    }
                }
            }
            &Op::Add(a, b) => {
                self.acc_map(grads, a, gd, |g, _| g);
                self.acc_map(grads, b, gd, |g, _| g);
            }
            &Op::Sub(a, b) => {
                self.acc_map(grads, a, gd, |g, _| g);
                self.acc_map(grads, b, gd, |g, _| -g);
            }
            &Op::Mul(a, b) => {
                if self.rg(a) {
                    let vb = self.value(b).data();
                    let buf = self.buf(grads, a);
                    for ((o, g), y) in buf.iter_mut().zip(gd).zip(vb) {
                        *o += g * y;
                    }
                }
                if self.rg(b) {
                    let va = self.value(a).data();
                    let buf = self.buf(grads, b);
                    for ((o, g), x) in buf.iter_mut().zip(gd).zip(va) {
                        *o += g * x;
                    }
                }
            }
            &Op::Scale(a, c) => self.acc_map(grads, a, gd, |g, _| g * c),
            &Op::AddScalar(a) => self.acc_map(grads, a, gd, |g, _| g),
            &Op::Sigmoid(a) => {
                let y = node.value.data();
                self.acc_zip(grads, a, gd, y, |g, y| g * y * (1.0 - y));
            }
            &Op::Tanh(a) => {
                let y = node.value.data();
                self.acc_zip(grads, a, gd, y, |g, y| g * (1.0 - y * y));
            }
            &Op::Exp(a) => {
                let y = node.value.data();
                self.acc_zip(grads, a, gd, y, |g, y| g * y);
            }
            &Op::Log(a) => self.acc_map(grads, a, gd, |g, x| g / x),
            &Op::Sum(a) => {
                let s = gd[0];
                for o in self.buf(grads, a).iter_mut() {
                    *o += s;
                }
            }
            &Op::Mean(a) => {
                let n = self.value(a).len() as f64;
                let s = gd[0] / n;
                for o in self.buf(grads, a).iter_mut() {
                    *o += s;
                }
            }
            Op::Concat(parts) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.rg(p) {
                        let buf = self.buf(grads, p);
                        for r in 0..rows {
                            let src = &gd[r * total + offset..r * total + offset + w];
                            for (o, g) in buf[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *o += g;
                            }
                        }
                    }
                    offset += w;
                }
            }
            &Op::Softmax(a) => {
                if self.rg(a) {
                    let y = node.value.data();
                    let c = node.value.cols();
                    let buf = self.buf(grads, a);
                    for ((o, g), y) in buf.chunks_mut(c).zip(gd.chunks(c)).zip(y.chunks(c)) {
                        let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            o[j] += y[j] * (g[j] - dot);
                        }
                    }
                }
            }
            &Op::LogSoftmax(a) => {
                if self.rg(a) {
                    let y = node.value.data();
                    let c = node.value.cols();
                    let buf = self.buf(grads, a);
                    for ((o, g), y) in buf.chunks_mut(c).zip(gd.chunks(c)).zip(y.chunks(c)) {
                        let gs: f64 = g.iter().sum();
                        for j in 0..c {
                            o[j] += g[j] - y[j].exp() * gs;
                        }
                    }
                }
            }
            Op::Gather(table, ids) => {
                if self.rg(*table) {
                    let c = node.value.cols();
                    let buf = self.buf(grads, *table);
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, g) in buf[id * c..(id + 1) * c].iter_mut().zip(&gd[r * c..]) {
                            *o += g;
                        }
                    }
                }
            }
            &Op::SliceCols(a, start) => {
                if self.rg(a) {
                    let w = node.value.cols();
                    let c = self.value(a).cols();
                    let buf = self.buf(grads, a);
                    for (r, grow) in gd.chunks(w).enumerate() {
                        for (o, g) in buf[r * c + start..r * c + start + w].iter_mut().zip(grow) {
                            *o += g;
                        }
                    }
                }
            }
            &Op::AddBias(x, bias) => {
                self.acc_map(grads, x, gd, |g, _| g);
                if self.rg(bias) {
                    let c = node.value.cols();
                    let buf = self.buf(grads, bias);
                    for grow in gd.chunks(c) {
                        for (o, g) in buf.iter_mut().zip(grow) {
                            *o += g;
                        }
                    }
                }
            }
            &Op::Reshape(a) => self.acc_map(grads, a, gd, |g, _| g),
            &Op::RepeatRows(a, times) => {
                if self.rg(a) {
                    let c = node.value.cols();
                    let buf = self.buf(grads, a);
                    for (i, block) in gd.chunks(times * c).enumerate() {
                        for grow in block.chunks(c) {
                            for (o, g) in buf[i * c..(i + 1) * c].iter_mut().zip(grow) {
                                *o += g;
                            }
                        }
                    }
                }
            }
            Op::Stack(parts) => {
                let s = node.value.shape();
                let (b, t, d) = (s[0], s[1], s[2]);
                for (j, &p) in parts.iter().enumerate() {
                    if !self.rg(p) {
                        continue;
                    }
                    let buf = self.buf(grads, p);
                    for row in 0..b {
                        let src = &gd[(row * t + j) * d..(row * t + j + 1) * d];
                        for (o, g) in buf[row * d..(row + 1) * d].iter_mut().zip(src) {
                            *o += g;
                        }
                    }
                }
            }
            Op::Pick(a, cols) => {
                if self.rg(*a) {
                    let c = self.value(*a).cols();
                    let buf = self.buf(grads, *a);
                    for (r, &j) in cols.iter().enumerate() {
                        buf[r * c + j] += gd[r];
                    }
                }
            }
        }
    }

    fn buf<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> &'g mut [f64] {
        grads[v.0]
            .get_or_insert_with(|| Tensor::zeros(self.nodes[v.0].value.shape()))
            .data_mut()
    }

    /// `grad[v] += f(g, value[v])` elementwise.
    fn acc_map(
        &self,
        grads: &mut [Option<Tensor>],
        v: Var,
        gd: &[f64],
        f: impl Fn(f64, f64) -> f64,
    ) {
        if !self.rg(v) {
            return;
        }
        let x = self.nodes[v.0].value.data();
        let buf = self.buf(grads, v);
        for ((o, &g), &x) in buf.iter_mut().zip(gd).zip(x) {
            *o += f(g, x);
        }
    }

    fn acc_zip(
        &self,
        grads: &mut [Option<Tensor>],
        v: Var,
        gd: &[f64],
        y: &[f64],
        f: impl Fn(f64, f64) -> f64,
    ) {
        if !self.rg(v) {
            return;
        }
        let buf = self.buf(grads, v);
        for ((o, &g), &y) in buf.iter_mut().zip(gd).zip(y) {
            *o += f(g, y);
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
