use super::kernels::{self, ConvGeometry};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointwiseKind {
    Sigmoid,
    Tanh,
    Relu,
}

impl PointwiseKind {
    pub fn name(self) -> &'static str {
        match self {
            PointwiseKind::Sigmoid => "sigmoid",
            PointwiseKind::Tanh => "tanh",
            PointwiseKind::Relu => "relu",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

/// Floor applied to probabilities before taking the log in cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize, vector: bool },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Pointwise { kind: PointwiseKind, x: Var },
    MaskedSoftmax { x: Var, mask: Vec<bool> },
    Concat { parts: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    Reshape { x: Var },
    WeightedSum { w: Var, v: Var, n: usize, d: usize },
    Reduce { kind: ReduceKind, x: Var, axis: usize },
    SumAll { x: Var },
    Conv2d { input: Var, filters: Var, bias: Var, geom: ConvGeometry },
    Embedding { table: Var, ids: Vec<usize>, dim: usize, word_len: usize },
    CrossEntropy { probs: Var, labels: Vec<usize>, classes: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Pointwise { kind, .. } => kind.name(),
            Op::MaskedSoftmax { .. } => "masked_softmax",
            Op::Concat { .. } => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Reshape { .. } => "reshape",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::Reduce { .. } => "reduce",
            Op::SumAll { .. } => "sum_all",
            Op::Conv2d { .. } => "conv2d",
            Op::Embedding { .. } => "embedding",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

struct Node<T> {
    tensor: Tensor<T>,
    op: Op,
}

/// Computation record. Nodes are stored in the order they were created,
/// which is a topological order: an op's inputs always precede it.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Gradients are tracked iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Result<Var> {
        if !tensor.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        let mut tensor = tensor;
        tensor.set_grad(None)?;
        Ok(self.push_raw(tensor, Op::Leaf))
    }

    pub fn param(&mut self, tensor: Tensor<T>) -> Result<Var> {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Result<Var> {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].tensor
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].tensor.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].tensor.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].tensor.requires_grad()
    }

    /// Name of the op that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    /// Inputs of the op that produced `v`.
    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.inputs_of(&self.nodes[v.0].op)
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            *node.tensor.grad_mut() = None;
        }
    }

    fn push_raw(&mut self, tensor: Tensor<T>, op: Op) -> Var {
        self.nodes.push(Node { tensor, op });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op) -> Result<Var> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = self.inputs_of(&op).iter().any(|&v| self.requires_grad(v));
        let tensor = Tensor::new(shape, data)?.with_requires_grad(requires_grad);
        Ok(self.push_raw(tensor, op))
    }

    fn inputs_of(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. } | Op::Add { a, b } | Op::Mul { a, b } => vec![*a, *b],
            Op::Pointwise { x, .. }
            | Op::MaskedSoftmax { x, .. }
            | Op::Narrow { x, .. }
            | Op::Reshape { x }
            | Op::Reduce { x, .. }
            | Op::SumAll { x } => vec![*x],
            Op::Concat { parts, .. } => parts.clone(),
            Op::WeightedSum { w, v, .. } => vec![*w, *v],
            Op::Conv2d { input, filters, bias, .. } => vec![*input, *filters, *bias],
            Op::Embedding { table, .. } => vec![*table],
            Op::CrossEntropy { probs, .. } => vec![*probs],
        }
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].tensor.data()
    }

    // ---- forward ops -------------------------------------------------

    /// Matrix product. `b` may be a matrix `[k×n]` or a vector `[k]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || Error::dim("matmul", format!("cannot multiply {sa:?} by {sb:?}"));
        if sa.len() != 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[0], sa[1]);
        match sb.len() {
            2 if sb[0] == k => {
                let n = sb[1];
                let out = kernels::matmul(self.data(a), self.data(b), m, k, n);
                self.push(vec![m, n], out, Op::MatMul { a, b, m, k, n, vector: false })
            }
            1 if sb[0] == k => {
                let out = kernels::matvec(self.data(a), self.data(b), m, k);
                self.push(vec![m], out, Op::MatMul { a, b, m, k, n: 1, vector: true })
            }
            _ => Err(mismatch()),
        }
    }

    /// Elementwise sum. `b` may equal `a` in shape, be a single value, or
    /// match a trailing suffix of `a`'s shape (row broadcast).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_broadcast("add", a, b)?;
        let (da, db) = (self.data(a), self.data(b));
        let bn = db.len();
        let out = da.iter().enumerate().map(|(i, &x)| x + db[i % bn]).collect();
        self.push(self.shape(a).to_vec(), out, Op::Add { a, b })
    }

    /// Elementwise product with the same broadcasting rules as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_broadcast("mul", a, b)?;
        let (da, db) = (self.data(a), self.data(b));
        let bn = db.len();
        let out = da.iter().enumerate().map(|(i, &x)| x * db[i % bn]).collect();
        self.push(self.shape(a).to_vec(), out, Op::Mul { a, b })
    }

    fn check_broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ok = sa == sb
            || self.value(b).numel() == 1
            || (sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == *sb);
        if ok {
            Ok(())
        } else {
            Err(Error::dim(op, format!("cannot broadcast {sb:?} onto {sa:?}")))
        }
    }

    pub fn pointwise(&mut self, kind: PointwiseKind, x: Var) -> Result<Var> {
        let out = self
            .data(x)
            .iter()
            .map(|&v| match kind {
                PointwiseKind::Sigmoid => sigmoid(v),
                PointwiseKind::Tanh => v.tanh(),
                PointwiseKind::Relu => v.max(T::zero()),
            })
            .collect();
        self.push(self.shape(x).to_vec(), out, Op::Pointwise { kind, x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.pointwise(PointwiseKind::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.pointwise(PointwiseKind::Tanh, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.pointwise(PointwiseKind::Relu, x)
    }

    /// Softmax over a vector restricted to positions where `mask` is true.
    /// Masked positions come out exactly zero.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let shape = self.shape(x);
        if shape.len() != 1 || shape[0] != mask.len() {
            return Err(Error::dim(
                "masked_softmax",
                format!("scores {shape:?} with mask of length {}", mask.len()),
            ));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::InvalidMask);
        }
        let xs = self.data(x);
        let max = xs
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .fold(T::neg_infinity(), T::max);
        let mut out: Vec<T> = xs
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { (v - max).exp() } else { T::zero() })
            .collect();
        let total = out.iter().fold(T::zero(), |acc, &v| acc + v);
        for v in &mut out {
            *v = *v / total;
        }
        self.push(vec![mask.len()], out, Op::MaskedSoftmax { x, mask: mask.to_vec() })
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        if self.shape(x).len() != 1 {
            return Err(Error::dim("softmax", format!("expected a vector, got {:?}", self.shape(x))));
        }
        self.masked_softmax(x, &vec![true; n])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat", "no parts given"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let agrees = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !agrees {
                return Err(Error::dim(
                    "concat",
                    format!("part {s:?} does not match {base:?} outside axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let chunk = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.data(p)[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(shape, out, Op::Concat { parts: parts.to_vec(), axis })
    }

    /// `len` consecutive entries along `axis`, starting at `start`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::dim(
                "narrow",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        self.push(oshape, out, Op::Narrow { x, axis, start })
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::dim("row", format!("expected rank >= 2, got {shape:?}")));
        }
        let r = self.narrow(x, 0, i, 1)?;
        self.reshape(r, shape[1..].to_vec())
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || numel != self.value(x).numel() {
            return Err(Error::dim(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape(x)),
            ));
        }
        let data = self.data(x).to_vec();
        self.push(shape, data, Op::Reshape { x })
    }

    /// `Σᵢ wᵢ · vᵢ` over the rows of `v`, summed in ascending `i`.
    pub fn weighted_sum(&mut self, w: Var, v: Var) -> Result<Var> {
        let (sw, sv) = (self.shape(w).to_vec(), self.shape(v).to_vec());
        if sw.len() != 1 || sv.len() != 2 || sw[0] != sv[0] {
            return Err(Error::dim(
                "weighted_sum",
                format!("weights {sw:?} against vectors {sv:?}"),
            ));
        }
        let (n, d) = (sv[0], sv[1]);
        let (ws, vs) = (self.data(w), self.data(v));
        let mut out = vec![T::zero(); d];
        for i in 0..n {
            let wi = ws[i];
            for (o, &x) in out.iter_mut().zip(&vs[i * d..(i + 1) * d]) {
                *o = *o + wi * x;
            }
        }
        self.push(vec![d], out, Op::WeightedSum { w, v, n, d })
    }

    pub fn reduce(&mut self, kind: ReduceKind, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim("reduce", format!("axis {axis} out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let len = shape[axis];
        let src = self.data(x);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                for (dst, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(&src[base..base + inner]) {
                    *dst = *dst + s;
                }
            }
        }
        if kind == ReduceKind::Mean {
            let scale = T::from_usize(len).expect("length fits");
            out.iter_mut().for_each(|v| *v = *v / scale);
        }
        let mut oshape: Vec<usize> = shape.clone();
        oshape.remove(axis);
        if oshape.is_empty() {
            oshape.push(1);
        }
        self.push(oshape, out, Op::Reduce { kind, x, axis })
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let total = self.data(x).iter().fold(T::zero(), |acc, &v| acc + v);
        self.push(vec![1], vec![total], Op::SumAll { x })
    }

    /// Valid-padding cross-correlation plus per-channel bias. Accepts a
    /// single `[C×H×W]` image or a batch `[N×C×H×W]`.
    pub fn conv2d(&mut self, input: Var, filters: Var, bias: Var, stride: (usize, usize)) -> Result<Var> {
        let (si, sf, sb) = (
            self.shape(input).to_vec(),
            self.shape(filters).to_vec(),
            self.shape(bias).to_vec(),
        );
        let err = |msg: String| Error::dim("conv2d", format!("{msg} (input {si:?}, filters {sf:?}, bias {sb:?})"));
        let (batch, dims) = match si.len() {
            3 => (1, &si[..]),
            4 => (si[0], &si[1..]),
            _ => return Err(err("input must be rank 3 or 4".into())),
        };
        if sf.len() != 4 || sf[1] != dims[0] {
            return Err(err("filter channels do not match input".into()));
        }
        if sb != [sf[0]] {
            return Err(err("bias must have one entry per filter".into()));
        }
        if sf[2] > dims[1] || sf[3] > dims[2] {
            return Err(err("kernel larger than input".into()));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(err("stride must be positive".into()));
        }
        let geom = ConvGeometry {
            batch,
            in_channels: dims[0],
            height: dims[1],
            width: dims[2],
            out_channels: sf[0],
            kernel_h: sf[2],
            kernel_w: sf[3],
            stride_h: stride.0,
            stride_w: stride.1,
        };
        let out = kernels::conv2d(self.data(input), self.data(filters), self.data(bias), &geom);
        let mut shape = vec![geom.out_channels, geom.out_h(), geom.out_w()];
        if si.len() == 4 {
            shape.insert(0, batch);
        }
        self.push(shape, out, Op::Conv2d { input, filters, bias, geom })
    }

    /// Looks up rows of `table [V×E]` for each id and lays every group of
    /// `word_len` ids out as an `E×word_len` single-channel image:
    /// the output is `[words × 1 × E × word_len]` with column `t` holding
    /// the embedding of character `t`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], word_len: usize) -> Result<Var> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 {
            return Err(Error::dim("embedding", format!("table must be a matrix, got {st:?}")));
        }
        if word_len == 0 || ids.is_empty() || !ids.len().is_multiple_of(word_len) {
            return Err(Error::dim(
                "embedding",
                format!("{} ids do not split into words of {word_len}", ids.len()),
            ));
        }
        let (vocab, dim) = (st[0], st[1]);
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::Index { what: "embedding table", index: bad, size: vocab });
        }
        let words = ids.len() / word_len;
        let tab = self.data(table);
        let mut out = vec![T::zero(); words * dim * word_len];
        for w in 0..words {
            for t in 0..word_len {
                let row = &tab[ids[w * word_len + t] * dim..][..dim];
                for (e, &val) in row.iter().enumerate() {
                    out[(w * dim + e) * word_len + t] = val;
                }
            }
        }
        self.push(
            vec![words, 1, dim, word_len],
            out,
            Op::Embedding { table, ids: ids.to_vec(), dim, word_len },
        )
    }

    /// Mean of `−ln max(p[label], 1e-12)` over the rows of `probs`
    /// (`[B×K]`, or `[K]` for a single row).
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(probs).to_vec();
        let (rows, classes) = match shape.len() {
            1 => (1, shape[0]),
            2 => (shape[0], shape[1]),
            _ => return Err(Error::dim("cross_entropy", format!("probabilities {shape:?}"))),
        };
        if labels.len() != rows {
            return Err(Error::dim(
                "cross_entropy",
                format!("{} labels for {rows} rows", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Label(format!("label {bad} not below class count {classes}")));
        }
        let floor = T::from_f64_lossy(PROB_FLOOR);
        let p = self.data(probs);
        let total = labels
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (r, &l)| acc - p[r * classes + l].max(floor).ln());
        let loss = total / T::from_usize(rows).expect("row count fits");
        self.push(vec![1], vec![loss], Op::CrossEntropy { probs, labels: labels.to_vec(), classes })
    }

    // ---- backward ----------------------------------------------------

    /// Reverse-mode sweep from a single-element root.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::dim(
                "backward",
                format!("root must hold one value, has shape {:?}", self.shape(root)),
            ));
        }
        self.backward_with_seed(root, &[T::one()])
    }

    /// Reverse-mode sweep seeded with `d(root)`. Visits nodes in exact
    /// reverse recording order. Intermediate gradients are recomputed from
    /// scratch; leaf gradients accumulate across calls until zeroed.
    pub fn backward_with_seed(&mut self, root: Var, seed: &[T]) -> Result<()> {
        if seed.len() != self.value(root).numel() {
            return Err(Error::dim("backward", "seed does not match root shape"));
        }
        for node in &mut self.nodes[..=root.0] {
            if !matches!(node.op, Op::Leaf) {
                *node.tensor.grad_mut() = None;
            }
        }
        self.accumulate(root, seed);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].tensor.requires_grad() {
                continue;
            }
            let Some(grad) = self.nodes[i].tensor.grad_mut().take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            let result = self.propagate(i, &op, &grad);
            self.nodes[i].op = op;
            *self.nodes[i].tensor.grad_mut() = Some(grad);
            result?;
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: &[T]) {
        let tensor = &mut self.nodes[v.0].tensor;
        if !tensor.requires_grad() {
            return;
        }
        let n = tensor.numel();
        let g = tensor.grad_mut().get_or_insert_with(|| vec![T::zero(); n]);
        for (dst, &d) in g.iter_mut().zip(delta) {
            *dst = *dst + d;
        }
    }

    /// Moves the gradient buffer of `v` out of the graph (zeros if it has
    /// none yet) so kernels can accumulate into it in place. Must be paired
    /// with `put_grad`.
    fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        let tensor = &mut self.nodes[v.0].tensor;
        if !tensor.requires_grad() {
            return None;
        }
        let n = tensor.numel();
        Some(tensor.grad_mut().take().unwrap_or_else(|| vec![T::zero(); n]))
    }

    /// Returns a buffer from `take_grad`. If the same var was taken twice
    /// the second buffer is added onto the first.
    fn put_grad(&mut self, v: Var, g: Option<Vec<T>>) {
        let Some(g) = g else { return };
        let slot = self.nodes[v.0].tensor.grad_mut();
        match slot {
            Some(existing) => {
                for (dst, d) in existing.iter_mut().zip(g) {
                    *dst = *dst + d;
                }
            }
            None => *slot = Some(g),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.requires_grad(v)
    }

    fn zeros_for(&self, v: Var) -> Option<Vec<T>> {
        self.needs(v).then(|| vec![T::zero(); self.value(v).numel()])
    }

    fn propagate(&mut self, i: usize, op: &Op, grad: &[T]) -> Result<()> {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { op: op.name() });
        }
        match *op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n, vector } => {
                let mut da = self.take_grad(a);
                let mut db = self.take_grad(b);
                let (av, bv) = (self.data(a), self.data(b));
                if vector {
                    kernels::matvec_backward(av, bv, grad, m, k, da.as_deref_mut(), db.as_deref_mut());
                } else {
                    kernels::matmul_backward(av, bv, grad, m, k, n, da.as_deref_mut(), db.as_deref_mut());
                }
                self.put_grad(a, da);
                self.put_grad(b, db);
            }
            Op::Add { a, b } => {
                let db = self.zeros_for(b).map(|mut db| {
                    let bn = db.len();
                    for (j, &g) in grad.iter().enumerate() {
                        db[j % bn] = db[j % bn] + g;
                    }
                    db
                });
                self.accumulate(a, grad);
                self.accumulate_opt(b, db);
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.data(a), self.data(b));
                let bn = bv.len();
                let da = self
                    .needs(a)
                    .then(|| grad.iter().enumerate().map(|(j, &g)| g * bv[j % bn]).collect::<Vec<_>>());
                let db = self.zeros_for(b).map(|mut db| {
                    for (j, &g) in grad.iter().enumerate() {
                        db[j % bn] = db[j % bn] + g * av[j];
                    }
                    db
                });
                self.accumulate_opt(a, da);
                self.accumulate_opt(b, db);
            }
            Op::Pointwise { kind, x } => {
                let y = self.nodes[i].tensor.data();
                let xs = self.data(x);
                let flip = kind == PointwiseKind::Sigmoid
                    && fault::active() == Some(fault::Fault::SigmoidBackwardSignFlip);
                let dx: Vec<T> = grad
                    .iter()
                    .zip(y.iter().zip(xs))
                    .map(|(&g, (&yv, &xv))| match kind {
                        PointwiseKind::Sigmoid => {
                            let d = g * yv * (T::one() - yv);
                            if flip { -d } else { d }
                        }
                        PointwiseKind::Tanh => g * (T::one() - yv * yv),
                        PointwiseKind::Relu => {
                            if xv > T::zero() { g } else { T::zero() }
                        }
                    })
                    .collect();
                self.accumulate(x, &dx);
            }
            Op::MaskedSoftmax { x, ref mask } => {
                let y = self.nodes[i].tensor.data();
                let inner = y.iter().zip(grad).fold(T::zero(), |acc, (&yv, &g)| acc + yv * g);
                let dx: Vec<T> = y
                    .iter()
                    .zip(grad)
                    .zip(mask)
                    .map(|((&yv, &g), &m)| if m { yv * (g - inner) } else { T::zero() })
                    .collect();
                self.accumulate(x, &dx);
            }
            Op::Concat { ref parts, axis } => {
                let shape = self.nodes[i].tensor.shape().to_vec();
                let outer: usize = shape[..axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let mut offset = 0;
                let mut contribs = Vec::with_capacity(parts.len());
                for o in 0..outer {
                    for (pi, &p) in parts.iter().enumerate() {
                        let chunk = self.shape(p)[axis] * inner;
                        if o == 0 {
                            contribs.push(self.zeros_for(p));
                        }
                        if let Some(c) = contribs[pi].as_mut() {
                            c[o * chunk..(o + 1) * chunk].copy_from_slice(&grad[offset..offset + chunk]);
                        }
                        offset += chunk;
                    }
                }
                for (&p, c) in parts.iter().zip(contribs) {
                    self.accumulate_opt(p, c);
                }
            }
            Op::Narrow { x, axis, start } => {
                if let Some(mut dx) = self.zeros_for(x) {
                    let shape = self.shape(x).to_vec();
                    let len = self.nodes[i].tensor.shape()[axis];
                    let outer: usize = shape[..axis].iter().product();
                    let inner: usize = shape[axis + 1..].iter().product();
                    for o in 0..outer {
                        let base = (o * shape[axis] + start) * inner;
                        dx[base..base + len * inner]
                            .copy_from_slice(&grad[o * len * inner..(o + 1) * len * inner]);
                    }
                    self.accumulate(x, &dx);
                }
            }
            Op::Reshape { x } => self.accumulate(x, grad),
            Op::WeightedSum { w, v, n, d } => {
                let (ws, vs) = (self.data(w), self.data(v));
                let dw = self
                    .needs(w)
                    .then(|| (0..n).map(|r| kernels::dot(&vs[r * d..(r + 1) * d], grad)).collect::<Vec<_>>());
                let dv = self.needs(v).then(|| {
                    let mut dv = Vec::with_capacity(n * d);
                    for &wr in ws.iter().take(n) {
                        dv.extend(grad.iter().map(|&g| wr * g));
                    }
                    dv
                });
                self.accumulate_opt(w, dw);
                self.accumulate_opt(v, dv);
            }
            Op::Reduce { kind, x, axis } => {
                let shape = self.shape(x).to_vec();
                let outer: usize = shape[..axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let len = shape[axis];
                let scale = match kind {
                    ReduceKind::Sum => T::one(),
                    ReduceKind::Mean => T::one() / T::from_usize(len).expect("length fits"),
                };
                let mut dx = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    for _ in 0..len {
                        dx.extend(grad[o * inner..(o + 1) * inner].iter().map(|&g| g * scale));
                    }
                }
                self.accumulate(x, &dx);
            }
            Op::SumAll { x } => {
                let dx = vec![grad[0]; self.value(x).numel()];
                self.accumulate(x, &dx);
            }
            Op::Conv2d { input, filters, bias, geom } => {
                let mut di = self.take_grad(input);
                let mut df = self.take_grad(filters);
                let mut db = self.take_grad(bias);
                kernels::conv2d_backward(
                    self.data(input),
                    self.data(filters),
                    grad,
                    &geom,
                    di.as_deref_mut(),
                    df.as_deref_mut(),
                    db.as_deref_mut(),
                );
                self.put_grad(input, di);
                self.put_grad(filters, df);
                self.put_grad(bias, db);
            }
            Op::Embedding { table, ref ids, dim, word_len } => {
                if let Some(mut dt) = self.take_grad(table) {
                    let words = ids.len() / word_len;
                    for w in 0..words {
                        for t in 0..word_len {
                            let id = ids[w * word_len + t];
                            for e in 0..dim {
                                let g = grad[(w * dim + e) * word_len + t];
                                dt[id * dim + e] = dt[id * dim + e] + g;
                            }
                        }
                    }
                    self.put_grad(table, Some(dt));
                }
            }
            Op::CrossEntropy { probs, ref labels, classes } => {
                if let Some(mut dp) = self.zeros_for(probs) {
                    let p = self.data(probs);
                    let floor = T::from_f64_lossy(PROB_FLOOR);
                    let rows = T::from_usize(labels.len()).expect("row count fits");
                    for (r, &l) in labels.iter().enumerate() {
                        let pv = p[r * classes + l];
                        if pv > floor {
                            dp[r * classes + l] = -grad[0] / (rows * pv);
                        }
                    }
                    self.accumulate(probs, &dp);
                }
            }
        }
        Ok(())
    }

    fn accumulate_opt(&mut self, v: Var, delta: Option<Vec<T>>) {
        if let Some(d) = delta {
            self.accumulate(v, &d);
        }
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Deliberate backward-pass faults, used to prove the gradient checker
/// catches broken derivatives. Scoped to the current thread.
pub mod fault {
    use std::cell::Cell;

    #[derive(Clone, Copy, Debug, PartialEq, Eq)]
    pub enum Fault {
        SigmoidBackwardSignFlip,
    }

    thread_local! {
        static ACTIVE: Cell<Option<Fault>> = const { Cell::new(None) };
    }

    pub fn active() -> Option<Fault> {
        ACTIVE.with(|a| a.get())
    }

    /// Active until the guard drops.
    pub fn inject(fault: Fault) -> FaultGuard {
        let previous = ACTIVE.with(|a| a.replace(Some(fault)));
        FaultGuard { previous }
    }

    pub struct FaultGuard {
        previous: Option<Fault>,
    }

    impl Drop for FaultGuard {
        fn drop(&mut self) {
            ACTIVE.with(|a| a.set(self.previous));
        }
    }
}
