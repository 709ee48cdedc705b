use rand::Rng;

use super::{kernels::gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    Train,
    #[default]
    Eval,
}

/// Clamp applied to probabilities before taking logarithms.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    /// Shared `[m×k]` matrix applied to each `[k×n]` slice of a batch.
    LeftMatmul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    AddBias {
        x: Var,
        bias: Var,
    },
    Relu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Softmax {
        x: Var,
        geom: AxisGeom,
    },
    Reshape {
        x: Var,
    },
    Conv1d {
        input: Var,
        kernels: Var,
        bias: Var,
        geom: ConvGeom,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    MeanAxis {
        x: Var,
        geom: AxisGeom,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    SelectRows {
        x: Var,
        rows: Vec<usize>,
        row_len: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    BinaryCrossEntropy {
        probs: Var,
        targets: Vec<f64>,
    },
}

/// A tensor viewed as `[outer, len, inner]` around one axis.
#[derive(Debug, Clone, Copy)]
struct AxisGeom {
    outer: usize,
    len: usize,
    inner: usize,
}

impl AxisGeom {
    fn new(shape: &[usize], axis: usize) -> Self {
        AxisGeom {
            outer: shape[..axis].iter().product(),
            len: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        }
    }

    fn index(&self, o: usize, l: usize, i: usize) -> usize {
        (o * self.len + l) * self.inner + i
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    c_in: usize,
    c_out: usize,
    width: usize,
    len: usize,
    len_out: usize,
    stride: usize,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and [`Tape::backward`] is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Registers a tensor; its `requires_grad` flag decides whether
    /// gradients are accumulated for it.
    pub fn leaf(&mut self, mut tensor: Tensor) -> Var {
        tensor.grad = None;
        self.push(tensor, Op::Leaf)
    }

    pub fn constant(&mut self, mut tensor: Tensor) -> Var {
        tensor.requires_grad = false;
        self.leaf(tensor)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    /// Consumes the tape, returning the recorded tensor (with its gradient).
    pub fn take(mut self, v: Var) -> Tensor {
        self.nodes.swap_remove(v.0).value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    fn emit(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|&p| self.requires(p));
        let mut value = Tensor::new(shape, data).expect("op output shape");
        value.requires_grad = requires_grad;
        self.push(value, op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        Ok(self.emit(vec![m, n], out, Op::Matmul { a, b, m, k, n }, &[a, b]))
    }

    /// `out[b] = a · x[b]` for `a: [m×k]` and `x: [B×k×n]`.
    pub fn left_matmul(&mut self, a: Var, x: Var) -> Result<Var> {
        let (sa, sx) = (self.shape(a), self.shape(x));
        if sa.len() != 2 || sx.len() != 3 || sa[1] != sx[1] {
            return Err(Error::dim("left_matmul", sa, sx));
        }
        let (batch, m, k, n) = (sx[0], sa[0], sa[1], sx[2]);
        let mut out = vec![0.0; batch * m * n];
        let (av, xv) = (self.value(a).data(), self.value(x).data());
        for bi in 0..batch {
            gemm(
                m,
                k,
                n,
                av,
                false,
                &xv[bi * k * n..(bi + 1) * k * n],
                false,
                &mut out[bi * m * n..(bi + 1) * m * n],
                false,
            );
        }
        let op = Op::LeftMatmul {
            a,
            b: x,
            batch,
            m,
            k,
            n,
        };
        Ok(self.emit(vec![batch, m, n], out, op, &[a, x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        Ok(self.emit(shape, data, Op::Add { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        Ok(self.emit(shape, data, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let data = self.value(x).data().iter().map(|v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        self.emit(shape, data, Op::Scale { x, factor }, &[x])
    }

    /// Adds a `[n]` bias along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(Error::dim("add_bias", sx, sb));
        }
        let n = sb[0];
        let b = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + b[i % n])
            .collect();
        let shape = sx.to_vec();
        Ok(self.emit(shape, data, Op::AddBias { x, bias }, &[x, bias]))
    }

    /// NaN passes through so that divergence stays visible downstream.
    pub fn relu(&mut self, x: Var) -> Var {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| if v > 0.0 || v.is_nan() { v } else { 0.0 })
            .collect();
        let shape = self.shape(x).to_vec();
        self.emit(shape, data, Op::Relu { x }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        self.emit(shape, data, Op::Sigmoid { x }, &[x])
    }

    /// Softmax along `axis`, shifted by the per-slice maximum.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!("softmax axis {axis} for {shape:?}")));
        }
        let geom = AxisGeom::new(&shape, axis);
        let xs = self.value(x).data();
        let mut out = vec![0.0; xs.len()];
        for o in 0..geom.outer {
            for i in 0..geom.inner {
                let idx = |l| geom.index(o, l, i);
                let max = (0..geom.len).map(|l| xs[idx(l)]).fold(f64::MIN, f64::max);
                let mut total = 0.0;
                for l in 0..geom.len {
                    let e = (xs[idx(l)] - max).exp();
                    out[idx(l)] = e;
                    total += e;
                }
                for l in 0..geom.len {
                    out[idx(l)] /= total;
                }
            }
        }
        Ok(self.emit(shape, out, Op::Softmax { x, geom }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() || shape.contains(&0) {
            return Err(Error::dim("reshape", self.shape(x), &shape));
        }
        let data = self.value(x).data().to_vec();
        Ok(self.emit(shape, data, Op::Reshape { x }, &[x]))
    }

    /// Valid 1-D cross-correlation (no kernel flip).
    ///
    /// `input` is `[C_in×K]` or batched `[B×C_in×K]`, `kernels` is
    /// `[C_out×C_in×w]` and `bias` is `[C_out]`. Output length is
    /// `(K − w) / stride + 1`.
    pub fn conv1d_valid(
        &mut self,
        input: Var,
        kernels: Var,
        bias: Var,
        stride: usize,
    ) -> Result<Var> {
        let (si, sk, sb) = (self.shape(input), self.shape(kernels), self.shape(bias));
        let (batch, c_in, len, batched) = match *si {
            [c, k] => (1, c, k, false),
            [b, c, k] => (b, c, k, true),
            _ => return Err(Error::dim("conv1d_valid", si, sk)),
        };
        if sk.len() != 3 || sk[1] != c_in || sb != [sk[0]] {
            return Err(Error::dim("conv1d_valid", si, sk));
        }
        let (c_out, width) = (sk[0], sk[2]);
        if stride == 0 {
            return Err(Error::Parameter("conv1d stride must be positive".into()));
        }
        if width > len {
            return Err(Error::dim("conv1d_valid (kernel wider than input)", si, sk));
        }
        let len_out = (len - width) / stride + 1;
        let geom = ConvGeom {
            batch,
            c_in,
            c_out,
            width,
            len,
            len_out,
            stride,
        };
        let (xs, ws, bs) = (
            self.value(input).data(),
            self.value(kernels).data(),
            self.value(bias).data(),
        );
        let mut out = vec![0.0; batch * c_out * len_out];
        for b in 0..batch {
            let x = &xs[b * c_in * len..(b + 1) * c_in * len];
            for k in 0..c_out {
                for t in 0..len_out {
                    let mut acc = bs[k];
                    for i in 0..c_in {
                        let w = &ws[(k * c_in + i) * width..(k * c_in + i + 1) * width];
                        let start = i * len + t * stride;
                        let window = &x[start..start + width];
                        acc += w.iter().zip(window).map(|(a, b)| a * b).sum::<f64>();
                    }
                    out[(b * c_out + k) * len_out + t] = acc;
                }
            }
        }
        let shape = if batched {
            vec![batch, c_out, len_out]
        } else {
            vec![c_out, len_out]
        };
        let op = Op::Conv1d {
            input,
            kernels,
            bias,
            geom,
        };
        Ok(self.emit(shape, out, op, &[input, kernels, bias]))
    }

    /// Inverted dropout: in train mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1−rate)`.
    /// Eval mode returns `x` itself.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!(
                "dropout rate {rate} not in [0, 1)"
            )));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).numel())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let data = zip_map(self.value(x).data(), &mask, |v, m| v * m);
        let shape = self.shape(x).to_vec();
        Ok(self.emit(shape, data, Op::Dropout { x, mask }, &[x]))
    }

    /// Arithmetic mean over `axis`, which is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!("mean axis {axis} for {shape:?}")));
        }
        let geom = AxisGeom::new(&shape, axis);
        let xs = self.value(x).data();
        let mut out = vec![0.0; geom.outer * geom.inner];
        for o in 0..geom.outer {
            for i in 0..geom.inner {
                let s: f64 = (0..geom.len).map(|l| xs[geom.index(o, l, i)]).sum();
                out[o * geom.inner + i] = s / geom.len as f64;
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        Ok(self.emit(out_shape, out, Op::MeanAxis { x, geom }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.emit(Vec::new(), vec![s], Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.data().iter().sum::<f64>() / v.numel() as f64;
        self.emit(Vec::new(), vec![m], Op::Mean { x }, &[x])
    }

    /// Gathers slices of the leading axis, in the given order.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || rows.is_empty() {
            return Err(Error::Shape(
                "select_rows needs a non-empty selection".into(),
            ));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= shape[0]) {
            return Err(Error::Index(format!("row {bad} of {}", shape[0])));
        }
        let row_len = self.value(x).numel() / shape[0];
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(rows.len() * row_len);
        for &r in rows {
            out.extend_from_slice(&xs[r * row_len..(r + 1) * row_len]);
        }
        let mut out_shape = shape;
        out_shape[0] = rows.len();
        let op = Op::SelectRows {
            x,
            rows: rows.to_vec(),
            row_len,
        };
        Ok(self.emit(out_shape, out, op, &[x]))
    }

    /// Mean over the batch of `−log softmax(logits)[target]`, `logits: [B×C]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let shape = self.shape(logits);
        if shape.len() != 2 || shape[0] != targets.len() {
            return Err(Error::dim("cross_entropy", shape, &[targets.len()]));
        }
        let (batch, classes) = (shape[0], shape[1]);
        if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
            return Err(Error::Index(format!("target class {bad} of {classes}")));
        }
        let zs = self.value(logits).data();
        let mut probs = vec![0.0; zs.len()];
        let mut total = 0.0;
        for (b, &t) in targets.iter().enumerate() {
            let row = &zs[b * classes..(b + 1) * classes];
            let max = row.iter().copied().fold(f64::MIN, f64::max);
            let sum_exp: f64 = row.iter().map(|z| (z - max).exp()).sum();
            let lse = max + sum_exp.ln();
            total += lse - row[t];
            for (c, z) in row.iter().enumerate() {
                probs[b * classes + c] = (z - lse).exp();
            }
        }
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
        };
        Ok(self.emit(Vec::new(), vec![total / batch as f64], op, &[logits]))
    }

    /// Mean of `−[t·ln p + (1−t)·ln(1−p)]` with `p` clamped to `[ε, 1−ε]`.
    pub fn binary_cross_entropy(&mut self, probs: Var, targets: &Tensor) -> Result<Var> {
        if self.shape(probs) != targets.shape() {
            return Err(Error::dim(
                "binary_cross_entropy",
                self.shape(probs),
                targets.shape(),
            ));
        }
        let ps = self.value(probs).data();
        let total: f64 = ps
            .iter()
            .zip(targets.data())
            .map(|(&p, &t)| {
                let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum();
        let n = ps.len() as f64;
        let op = Op::BinaryCrossEntropy {
            probs,
            targets: targets.data().to_vec(),
        };
        Ok(self.emit(Vec::new(), vec![total / n], op, &[probs]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Afterwards every `requires_grad` node that `loss` depends on holds a
    /// gradient; contributions from multiple uses are summed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        for node in &mut self.nodes {
            node.value.grad = None;
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].value.requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            self.nodes[idx].value.grad = Some(g);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let nodes = &self.nodes;
        // Adds into the parent's gradient buffer, allocating it on first use.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].value.requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
            f(buf);
        };
        let val = |v: Var| nodes[v.0].value.data();

        match &node.op {
            Op::Leaf => {}
            &Op::Matmul { a, b, m, k, n } => {
                acc(a, &mut |da| gemm(m, n, k, g, false, val(b), true, da, true));
                acc(b, &mut |db| gemm(k, m, n, val(a), true, g, false, db, true));
            }
            &Op::LeftMatmul {
                a,
                b,
                batch,
                m,
                k,
                n,
            } => {
                acc(a, &mut |da| {
                    let xs = val(b);
                    for bi in 0..batch {
                        let gb = &g[bi * m * n..(bi + 1) * m * n];
                        let xb = &xs[bi * k * n..(bi + 1) * k * n];
                        gemm(m, n, k, gb, false, xb, true, da, true);
                    }
                });
                acc(b, &mut |dx| {
                    let av = val(a);
                    for bi in 0..batch {
                        let gb = &g[bi * m * n..(bi + 1) * m * n];
                        let dxb = &mut dx[bi * k * n..(bi + 1) * k * n];
                        gemm(k, m, n, av, true, gb, false, dxb, true);
                    }
                });
            }
            &Op::Add { a, b } => {
                acc(a, &mut |d| add_into(d, g));
                acc(b, &mut |d| add_into(d, g));
            }
            &Op::Mul { a, b } => {
                acc(a, &mut |d| {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(val(b)) {
                        *d += g * y;
                    }
                });
                acc(b, &mut |d| {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(val(a)) {
                        *d += g * x;
                    }
                });
            }
            &Op::Scale { x, factor } => {
                acc(x, &mut |d| {
                    for (d, g) in d.iter_mut().zip(g) {
                        *d += g * factor;
                    }
                });
            }
            &Op::AddBias { x, bias } => {
                acc(x, &mut |d| add_into(d, g));
                acc(bias, &mut |d| {
                    let n = d.len();
                    for (i, gv) in g.iter().enumerate() {
                        d[i % n] += gv;
                    }
                });
            }
            &Op::Relu { x } => {
                acc(x, &mut |d| {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(out) {
                        if *y > 0.0 {
                            *d += g;
                        }
                    }
                });
            }
            &Op::Sigmoid { x } => {
                acc(x, &mut |d| {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(out) {
                        *d += g * y * (1.0 - y);
                    }
                });
            }
            &Op::Softmax { x, geom } => {
                acc(x, &mut |d| {
                    for o in 0..geom.outer {
                        for i in 0..geom.inner {
                            let dot: f64 = (0..geom.len)
                                .map(|l| {
                                    let j = geom.index(o, l, i);
                                    g[j] * out[j]
                                })
                                .sum();
                            for l in 0..geom.len {
                                let j = geom.index(o, l, i);
                                d[j] += out[j] * (g[j] - dot);
                            }
                        }
                    }
                });
            }
            &Op::Reshape { x } => acc(x, &mut |d| add_into(d, g)),
            &Op::Conv1d {
                input,
                kernels,
                bias,
                geom,
            } => {
                let ConvGeom {
                    batch,
                    c_in,
                    c_out,
                    width,
                    len,
                    len_out,
                    stride,
                } = geom;
                let go = |b: usize, k: usize, t: usize| g[(b * c_out + k) * len_out + t];
                acc(input, &mut |d| {
                    let ws = val(kernels);
                    for b in 0..batch {
                        for k in 0..c_out {
                            for t in 0..len_out {
                                let gv = go(b, k, t);
                                for i in 0..c_in {
                                    let w = &ws[(k * c_in + i) * width..][..width];
                                    let base = (b * c_in + i) * len + t * stride;
                                    for (j, wv) in w.iter().enumerate() {
                                        d[base + j] += gv * wv;
                                    }
                                }
                            }
                        }
                    }
                });
                acc(kernels, &mut |d| {
                    let xs = val(input);
                    for b in 0..batch {
                        for k in 0..c_out {
                            for t in 0..len_out {
                                let gv = go(b, k, t);
                                for i in 0..c_in {
                                    let base = (b * c_in + i) * len + t * stride;
                                    let dw = &mut d[(k * c_in + i) * width..][..width];
                                    for (j, dwv) in dw.iter_mut().enumerate() {
                                        *dwv += gv * xs[base + j];
                                    }
                                }
                            }
                        }
                    }
                });
                acc(bias, &mut |d| {
                    for b in 0..batch {
                        for (k, dv) in d.iter_mut().enumerate() {
                            *dv += (0..len_out).map(|t| go(b, k, t)).sum::<f64>();
                        }
                    }
                });
            }
            Op::Dropout { x, mask } => {
                acc(*x, &mut |d| {
                    for ((d, g), m) in d.iter_mut().zip(g).zip(mask) {
                        *d += g * m;
                    }
                });
            }
            &Op::MeanAxis { x, geom } => {
                let scale = 1.0 / geom.len as f64;
                acc(x, &mut |d| {
                    for o in 0..geom.outer {
                        for i in 0..geom.inner {
                            let gv = g[o * geom.inner + i] * scale;
                            for l in 0..geom.len {
                                d[geom.index(o, l, i)] += gv;
                            }
                        }
                    }
                });
            }
            &Op::Sum { x } => {
                acc(x, &mut |d| d.iter_mut().for_each(|v| *v += g[0]));
            }
            &Op::Mean { x } => {
                acc(x, &mut |d| {
                    let gv = g[0] / d.len() as f64;
                    d.iter_mut().for_each(|v| *v += gv);
                });
            }
            Op::SelectRows { x, rows, row_len } => {
                acc(*x, &mut |d| {
                    for (slot, &r) in rows.iter().enumerate() {
                        let src = &g[slot * row_len..(slot + 1) * row_len];
                        add_into(&mut d[r * row_len..(r + 1) * row_len], src);
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let classes = probs.len() / targets.len();
                let scale = g[0] / targets.len() as f64;
                acc(*logits, &mut |d| {
                    for (b, &t) in targets.iter().enumerate() {
                        for c in 0..classes {
                            let onehot = if c == t { 1.0 } else { 0.0 };
                            d[b * classes + c] += scale * (probs[b * classes + c] - onehot);
                        }
                    }
                });
            }
            Op::BinaryCrossEntropy { probs, targets } => {
                let scale = g[0] / targets.len() as f64;
                acc(*probs, &mut |d| {
                    for ((d, &p), &t) in d.iter_mut().zip(val(*probs)).zip(targets) {
                        let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
                        *d += scale * ((1.0 - t) / (1.0 - p) - t / p);
                    }
                });
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn t2(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_sum() {
        let mut tape = Tape::new();
        let eye = tape.constant(Tensor::eye(2));
        let m = tape.constant(t2(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let out = tape.matmul(eye, m).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

        let row = tape.constant(t2(&[&[1.0, 2.0]]));
        let col = tape.constant(t2(&[&[3.0], &[4.0]]));
        let dot = tape.matmul(row, col).unwrap();
        assert_eq!(tape.value(dot).data(), &[11.0]);

        let zero = tape.constant(Tensor::zeros(vec![2, 2]));
        let any = tape.constant(t2(&[&[5.0, -1.0, 2.0], &[0.5, 7.0, 3.0]]));
        let z = tape.matmul(zero, any).unwrap();
        assert_eq!(tape.value(z).shape(), &[2, 3]);
        assert!(tape.value(z).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![2, 3]));
        match tape.matmul(a, b) {
            Err(Error::Dimension { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn conv1d_hand_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t2(&[&[1.0, 2.0, 3.0, 4.0]]));
        let k = tape.constant(Tensor::new(vec![1, 1, 3], vec![1.0, 0.0, -1.0]).unwrap());
        let b = tape.constant(Tensor::zeros(vec![1]));
        let y = tape.conv1d_valid(x, k, b, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[-2.0, -2.0]);

        let one = tape.constant(Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap());
        let same = tape.conv1d_valid(x, one, b, 1).unwrap();
        assert_eq!(tape.value(same).data(), tape.value(x).data());
    }

    #[test]
    fn conv1d_width4_stride4_on_twenty_samples_gives_five() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(vec![3, 20]));
        let k = tape.constant(Tensor::zeros(vec![3, 3, 4]));
        let b = tape.constant(Tensor::zeros(vec![3]));
        let y = tape.conv1d_valid(x, k, b, 4).unwrap();
        assert_eq!(tape.shape(y), &[3, 5]);
    }

    #[test]
    fn conv1d_rejects_wide_kernel() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(vec![1, 3]));
        let k = tape.constant(Tensor::zeros(vec![1, 1, 4]));
        let b = tape.constant(Tensor::zeros(vec![1]));
        assert!(matches!(
            tape.conv1d_valid(x, k, b, 1),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn activations() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);

        let z = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(z);
        assert_eq!(tape.value(s).item(), 0.5);

        let flat = tape.constant(Tensor::vector(vec![3.5; 3]));
        let sm = tape.softmax(flat, 0).unwrap();
        for &p in tape.value(sm).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1000.0, 0.0, -1000.0]));
        let sm = tape.softmax(x, 0).unwrap();
        let p = tape.value(sm).data();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dropout_modes_and_rate_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector((0..50).map(f64::from).collect()));
        let e = tape.dropout(x, 0.5, Mode::Eval, &mut rng).unwrap();
        assert_eq!(tape.value(e), tape.value(x));
        let z = tape.dropout(x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(tape.value(z).data(), tape.value(x).data());
        assert!(matches!(
            tape.dropout(x, 1.0, Mode::Train, &mut rng),
            Err(Error::Parameter(_))
        ));
        assert!(tape.dropout(x, -0.1, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_zero_fraction_tracks_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(vec![100_000], 1.0));
        let d = tape.dropout(x, 0.1, Mode::Train, &mut rng).unwrap();
        let vals = tape.value(d).data();
        let zeros = vals.iter().filter(|&&v| v == 0.0).count() as f64 / vals.len() as f64;
        assert!((zeros - 0.1).abs() <= 0.01, "zero fraction {zeros}");
        let survivor = vals.iter().find(|&&v| v != 0.0).unwrap();
        assert!((survivor - 1.0 / 0.9).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_limits() {
        let mut tape = Tape::new();
        let uniform = tape.constant(Tensor::zeros(vec![4, 6]));
        let l = tape.cross_entropy(uniform, &[0, 1, 2, 5]).unwrap();
        assert!((tape.value(l).item() - 6f64.ln()).abs() < 1e-12);

        let sharp = tape.constant(t2(&[&[500.0, 0.0], &[0.0, 500.0]]));
        let l = tape.cross_entropy(sharp, &[0, 1]).unwrap();
        assert!(tape.value(l).item() < 1e-12);

        assert!(matches!(
            tape.cross_entropy(sharp, &[0, 2]),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn binary_cross_entropy_limits() {
        let mut tape = Tape::new();
        let t = Tensor::vector(vec![1.0, 0.0, 1.0]);
        let p = tape.constant(t.clone());
        let l = tape.binary_cross_entropy(p, &t).unwrap();
        assert!(tape.value(l).item() < 1e-11);

        let half = tape.constant(Tensor::full(vec![3], 0.5));
        let l = tape.binary_cross_entropy(half, &t).unwrap();
        assert!((tape.value(l).item() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn backward_basic_rules() {
        let mut tape = Tape::new();
        let x = tape.leaf(
            Tensor::new(vec![2, 2], vec![1.0, -2.0, 0.5, 3.0])
                .unwrap()
                .with_grad(),
        );
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 4]);

        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, -4.0, 1.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![3]).with_grad());
        assert!(matches!(tape.backward(x), Err(Error::Shape(_))));
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = sum(3x) + sum(x ⊙ x): grad = 3 + 2x
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.5, -1.0]).with_grad());
        let a = tape.scale(x, 3.0);
        let b = tape.mul(x, x).unwrap();
        let sa = tape.sum(a);
        let sb = tape.sum(b);
        let l = tape.add(sa, sb).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[4.0, 1.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let x = tape.leaf(Tensor::vector(vec![3.0, 4.0]).with_grad());
        let p = tape.mul(c, x).unwrap();
        let l = tape.sum(p);
        tape.backward(l).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 2.0]);
    }
}
