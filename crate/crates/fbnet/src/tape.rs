//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! The forward pass executes eagerly; every operation records its parents and
//! output value on the tape. [`Tape::backward`] replays the records in exact
//! reverse execution order, accumulating vector-Jacobian products into the
//! gradient slot of each tracked variable. Parents always carry a smaller
//! index than their results, so the reverse sweep is a plain reverse loop.
//!
//! A tape is confined to one thread of execution. Independent forward passes
//! over frozen parameter tensors may run concurrently on separate tapes.

use crate::tensor::{check_same_shape, Scalar, Tensor, TensorError};

/// Handle to a value on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output keeps the input's spatial extent; requires odd kernel sides.
    Same,
    /// No padding; output shrinks by `k - 1` per side.
    Valid,
}

#[derive(Debug, Clone)]
enum Op<F> {
    Leaf,
    Conv2d { input: Var, kernel: Var, padding: Padding },
    AddBias { input: Var, bias: Var },
    AvgPool2 { input: Var },
    Upsample2 { input: Var },
    Linear { input: Var, weight: Var, bias: Var },
    Reshape { input: Var },
    ConcatChannels { inputs: Vec<Var> },
    SliceChannels { input: Var, start: usize },
    Sigmoid { input: Var },
    Tanh { input: Var },
    Exp { input: Var },
    Square { input: Var },
    Scale { input: Var, factor: F },
    Add { lhs: Var, rhs: Var },
    Sub { lhs: Var, rhs: Var },
    Mul { lhs: Var, rhs: Var },
    Sum { input: Var },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    /// True when a gradient can flow from this node to some tracked leaf.
    tracked: bool,
}

/// Ordered record of executed operations plus per-variable gradient slots.
pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a tensor as a leaf. `requires_grad` marks it as a gradient
    /// target for [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf that no gradient is requested for (inputs, ground truth).
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    /// Leaf tracked for gradients (parameters).
    pub fn tracked(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of `v`, if any flowed into it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`; exactly zero when the variable is unused by the loss.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor<F> {
        match self.grad(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.nodes[v.0].value.shape()),
        }
    }

    pub fn reset_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn tracked_any(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    // ── Primitive operations ────────────────────────────────────────────

    /// Cross-correlation of `input [h,w,cin]` with `kernel [kh,kw,cin,cout]`
    /// plus per-channel `bias [cout]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        padding: Padding,
    ) -> Result<Var, TensorError> {
        let raw = self.conv2d_nobias(input, kernel, padding)?;
        self.add_bias(raw, bias)
    }

    /// Convolution without the bias term (Eq-style weight sums add one bias
    /// after several convolutions).
    pub fn conv2d_nobias(
        &mut self,
        input: Var,
        kernel: Var,
        padding: Padding,
    ) -> Result<Var, TensorError> {
        let (inp, ker) = (self.value(input), self.value(kernel));
        let geo = ConvGeometry::resolve(inp.shape(), ker.shape(), padding)?;
        let out = conv2d_forward(inp, ker, &geo);
        let tracked = self.tracked_any(&[input, kernel]);
        Ok(self.push(out, Op::Conv2d { input, kernel, padding }, tracked))
    }

    /// The per-channel bias broadcast: `input [h,w,c] + bias [c]`. This is
    /// the only implicit broadcast in the crate.
    pub fn add_bias(&mut self, input: Var, bias: Var) -> Result<Var, TensorError> {
        let (a, b) = (self.value(input), self.value(bias));
        if a.shape().len() != 3 || b.shape().len() != 1 || a.shape()[2] != b.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let c = b.shape()[0];
        let mut out = a.clone();
        let bd = b.data().to_vec();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v + bd[i % c];
        }
        let tracked = self.tracked_any(&[input, bias]);
        Ok(self.push(out, Op::AddBias { input, bias }, tracked))
    }

    /// 2x2 average pooling, stride 2, ceiling output extents; border windows
    /// are clipped and averaged over their actual size.
    pub fn avg_pool2(&mut self, input: Var) -> Result<Var, TensorError> {
        let a = self.value(input);
        let [h, w, c] = rank3(a.shape(), "avg_pool2")?;
        let (ho, wo) = ((h + 1) / 2, (w + 1) / 2);
        let mut out = Tensor::zeros(&[ho, wo, c]);
        {
            let src = a.data().to_vec();
            let dst = out.data_mut();
            for oy in 0..ho {
                let (y0, y1) = (2 * oy, (2 * oy + 2).min(h));
                for ox in 0..wo {
                    let (x0, x1) = (2 * ox, (2 * ox + 2).min(w));
                    let count = F::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                    for ch in 0..c {
                        let mut acc = F::zero();
                        for y in y0..y1 {
                            for x in x0..x1 {
                                acc = acc + src[(y * w + x) * c + ch];
                            }
                        }
                        dst[(oy * wo + ox) * c + ch] = acc / count;
                    }
                }
            }
        }
        let tracked = self.nodes[input.0].tracked;
        Ok(self.push(out, Op::AvgPool2 { input }, tracked))
    }

    /// Nearest-neighbor 2x upsampling.
    pub fn upsample2(&mut self, input: Var) -> Result<Var, TensorError> {
        let a = self.value(input);
        let [h, w, c] = rank3(a.shape(), "upsample2")?;
        let (ho, wo) = (2 * h, 2 * w);
        let src = a.data().to_vec();
        let out = Tensor::from_fn(&[ho, wo, c], |i| {
            let ch = i % c;
            let x = (i / c) % wo;
            let y = i / (c * wo);
            src[((y / 2) * w + x / 2) * c + ch]
        });
        let tracked = self.nodes[input.0].tracked;
        Ok(self.push(out, Op::Upsample2 { input }, tracked))
    }

    /// Fully connected layer: `weight [m,n] * input [n] + bias [m]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var, TensorError> {
        let (x, wt, b) = (self.value(input), self.value(weight), self.value(bias));
        let n = match x.shape() {
            [n] => *n,
            other => {
                return Err(TensorError::InvalidShape {
                    shape: other.to_vec(),
                    reason: "linear input must be rank 1".into(),
                })
            }
        };
        let m = match wt.shape() {
            [m, wn] if *wn == n => *m,
            other => {
                return Err(TensorError::ShapeMismatch {
                    op: "linear",
                    lhs: other.to_vec(),
                    rhs: vec![n],
                })
            }
        };
        if b.shape() != [m] {
            return Err(TensorError::ShapeMismatch {
                op: "linear_bias",
                lhs: b.shape().to_vec(),
                rhs: vec![m],
            });
        }
        let (xd, wd, bd) = (x.data().to_vec(), wt.data().to_vec(), b.data().to_vec());
        let out = Tensor::from_fn(&[m], |i| {
            let row = &wd[i * n..(i + 1) * n];
            let mut acc = bd[i];
            for j in 0..n {
                acc = acc + row[j] * xd[j];
            }
            acc
        });
        let tracked = self.tracked_any(&[input, weight, bias]);
        Ok(self.push(out, Op::Linear { input, weight, bias }, tracked))
    }

    /// Shape change without data movement.
    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let a = self.value(input);
        let numel: usize = shape.iter().product();
        if numel != a.numel() || shape.iter().any(|&e| e == 0) {
            return Err(TensorError::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("cannot reshape {} elements", a.numel()),
            });
        }
        let out = Tensor::new(shape.to_vec(), a.data().to_vec())?;
        let tracked = self.nodes[input.0].tracked;
        Ok(self.push(out, Op::Reshape { input }, tracked))
    }

    pub fn flatten(&mut self, input: Var) -> Result<Var, TensorError> {
        let numel = self.value(input).numel();
        self.reshape(input, &[numel])
    }

    /// Concatenates rank-3 maps along the channel axis, in argument order.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var, TensorError> {
        if inputs.is_empty() {
            return Err(TensorError::Invalid("concat_channels of nothing".into()));
        }
        let [h, w, _] = rank3(self.value(inputs[0]).shape(), "concat_channels")?;
        let mut total = 0usize;
        for &v in inputs {
            let [vh, vw, vc] = rank3(self.value(v).shape(), "concat_channels")?;
            if (vh, vw) != (h, w) {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_channels",
                    lhs: vec![h, w],
                    rhs: vec![vh, vw],
                });
            }
            total += vc;
        }
        let mut out = Tensor::zeros(&[h, w, total]);
        {
            let dst = out.data_mut();
            let mut offset = 0usize;
            for &v in inputs {
                let t = &self.nodes[v.0].value;
                let c = t.shape()[2];
                let src = t.data();
                for p in 0..h * w {
                    dst[p * total + offset..p * total + offset + c]
                        .copy_from_slice(&src[p * c..(p + 1) * c]);
                }
                offset += c;
            }
        }
        let tracked = self.tracked_any(inputs);
        Ok(self.push(out, Op::ConcatChannels { inputs: inputs.to_vec() }, tracked))
    }

    /// Channel slice `[start, start+len)` of a rank-3 map.
    pub fn slice_channels(
        &mut self,
        input: Var,
        start: usize,
        len: usize,
    ) -> Result<Var, TensorError> {
        let a = self.value(input);
        let [h, w, c] = rank3(a.shape(), "slice_channels")?;
        if len == 0 || start + len > c {
            return Err(TensorError::Invalid(format!(
                "channel slice {}..{} out of {} channels",
                start,
                start + len,
                c
            )));
        }
        let src = a.data();
        let mut data = Vec::with_capacity(h * w * len);
        for p in 0..h * w {
            data.extend_from_slice(&src[p * c + start..p * c + start + len]);
        }
        let out = Tensor::new(vec![h, w, len], data)?;
        let tracked = self.nodes[input.0].tracked;
        Ok(self.push(out, Op::SliceChannels { input, start }, tracked))
    }

    // ── Elementwise ─────────────────────────────────────────────────────

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let out = self.value(input).map(sigmoid_scalar);
        let tracked = self.nodes[input.0].tracked;
        self.push(out, Op::Sigmoid { input }, tracked)
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        let out = self.value(input).map(|v| v.tanh());
        let tracked = self.nodes[input.0].tracked;
        self.push(out, Op::Tanh { input }, tracked)
    }

    pub fn exp(&mut self, input: Var) -> Var {
        let out = self.value(input).map(|v| v.exp());
        let tracked = self.nodes[input.0].tracked;
        self.push(out, Op::Exp { input }, tracked)
    }

    pub fn square(&mut self, input: Var) -> Var {
        let out = self.value(input).map(|v| v * v);
        let tracked = self.nodes[input.0].tracked;
        self.push(out, Op::Square { input }, tracked)
    }

    /// Multiplication by a plain scalar constant.
    pub fn scale(&mut self, input: Var, factor: F) -> Var {
        let out = self.value(input).map(|v| v * factor);
        let tracked = self.nodes[input.0].tracked;
        self.push(out, Op::Scale { input, factor }, tracked)
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var, TensorError> {
        check_same_shape("add", self.value(lhs), self.value(rhs))?;
        let out = zip(self.value(lhs), self.value(rhs), |a, b| a + b);
        let tracked = self.tracked_any(&[lhs, rhs]);
        Ok(self.push(out, Op::Add { lhs, rhs }, tracked))
    }

    pub fn sub(&mut self, lhs: Var, rhs: Var) -> Result<Var, TensorError> {
        check_same_shape("sub", self.value(lhs), self.value(rhs))?;
        let out = zip(self.value(lhs), self.value(rhs), |a, b| a - b);
        let tracked = self.tracked_any(&[lhs, rhs]);
        Ok(self.push(out, Op::Sub { lhs, rhs }, tracked))
    }

    /// Hadamard product.
    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var, TensorError> {
        check_same_shape("mul", self.value(lhs), self.value(rhs))?;
        let out = zip(self.value(lhs), self.value(rhs), |a, b| a * b);
        let tracked = self.tracked_any(&[lhs, rhs]);
        Ok(self.push(out, Op::Mul { lhs, rhs }, tracked))
    }

    /// Sum of all elements, as a 1-element tensor.
    pub fn sum(&mut self, input: Var) -> Var {
        let mut acc = F::zero();
        for &v in self.value(input).data() {
            acc = acc + v;
        }
        let tracked = self.nodes[input.0].tracked;
        self.push(Tensor::scalar(acc), Op::Sum { input }, tracked)
    }

    /// Mean squared difference of two same-shape maps, as a scalar var.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let n = self.value(a).numel();
        let d = self.sub(a, b)?;
        let sq = self.square(d);
        let s = self.sum(sq);
        Ok(self.scale(s, F::from_f64(1.0 / n as f64)))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar `loss`. Gradients accumulate across
    /// repeated calls until [`Tape::reset_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(TensorError::NotScalar {
                op: "backward",
                shape: self.nodes[loss.0].value.shape().to_vec(),
            });
        }
        // The sweep runs on a scratch table seeded with d(loss)/d(loss) = 1,
        // then folds into the persistent accumulators, so repeated calls add
        // one full vector-Jacobian product each.
        let mut sweep: Vec<Option<Tensor<F>>> = vec![None; self.nodes.len()];
        sweep[loss.0] = Some(Tensor::filled(self.nodes[loss.0].value.shape(), F::one()));
        for i in (0..=loss.0).rev() {
            if sweep[i].is_none() || !self.nodes[i].tracked {
                continue;
            }
            // Parents of node i always have index < i.
            let (gparents, gself) = sweep.split_at_mut(i);
            let out_grad = gself[0].take().expect("checked above");
            self.propagate(i, &out_grad, gparents);
            gself[0] = Some(out_grad);
        }
        for (slot, fresh) in self.grads.iter_mut().zip(sweep) {
            match (slot.as_mut(), fresh) {
                (Some(acc), Some(g)) => {
                    for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a = *a + v;
                    }
                }
                (None, Some(g)) => *slot = Some(g),
                _ => {}
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, og: &Tensor<F>, gp: &mut [Option<Tensor<F>>]) {
        let nodes = &self.nodes;
        // Gradient slice of `var`, allocated lazily; None for untracked vars.
        fn slot<'a, F: Scalar>(
            nodes: &[Node<F>],
            gp: &'a mut [Option<Tensor<F>>],
            var: Var,
        ) -> Option<&'a mut [F]> {
            if !nodes[var.0].tracked {
                return None;
            }
            let opt = &mut gp[var.0];
            if opt.is_none() {
                *opt = Some(Tensor::zeros(nodes[var.0].value.shape()));
            }
            Some(opt.as_mut().expect("just filled").data_mut())
        }
        let ogd = og.data();
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, padding } => {
                let inp = &nodes[input.0].value;
                let ker = &nodes[kernel.0].value;
                let geo = ConvGeometry::resolve(inp.shape(), ker.shape(), *padding)
                    .expect("validated at forward");
                // Both slots may be live at once; detach them from the table
                // so the borrows are provably disjoint.
                let mut gin = nodes[input.0].tracked.then(|| {
                    gp[input.0].take().unwrap_or_else(|| Tensor::zeros(inp.shape()))
                });
                let mut gker = nodes[kernel.0].tracked.then(|| {
                    gp[kernel.0].take().unwrap_or_else(|| Tensor::zeros(ker.shape()))
                });
                conv2d_backward(
                    inp,
                    ker,
                    &geo,
                    ogd,
                    gin.as_mut().map(|t| t.data_mut()),
                    gker.as_mut().map(|t| t.data_mut()),
                );
                if let Some(t) = gin {
                    gp[input.0] = Some(t);
                }
                if let Some(t) = gker {
                    gp[kernel.0] = Some(t);
                }
            }
            Op::AddBias { input, bias } => {
                if let Some(g) = slot(nodes, gp, *input) {
                    for (gv, &o) in g.iter_mut().zip(ogd) {
                        *gv = *gv + o;
                    }
                }
                if let Some(g) = slot(nodes, gp, *bias) {
                    let c = g.len();
                    for (k, &o) in ogd.iter().enumerate() {
                        g[k % c] = g[k % c] + o;
                    }
                }
            }
            Op::AvgPool2 { input } => {
                if let Some(g) = slot(nodes, gp, *input) {
                    let [h, w, c] = rank3(nodes[input.0].value.shape(), "pool")
                        .expect("validated at forward");
                    let (ho, wo) = ((h + 1) / 2, (w + 1) / 2);
                    for oy in 0..ho {
                        let (y0, y1) = (2 * oy, (2 * oy + 2).min(h));
                        for ox in 0..wo {
                            let (x0, x1) = (2 * ox, (2 * ox + 2).min(w));
                            let inv =
                                F::one() / F::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                            for ch in 0..c {
                                let o = ogd[(oy * wo + ox) * c + ch] * inv;
                                for y in y0..y1 {
                                    for x in x0..x1 {
                                        let k = (y * w + x) * c + ch;
                                        g[k] = g[k] + o;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Upsample2 { input } => {
                if let Some(g) = slot(nodes, gp, *input) {
                    let [h, w, c] = rank3(nodes[input.0].value.shape(), "upsample")
                        .expect("validated at forward");
                    let wo = 2 * w;
                    for y in 0..2 * h {
                        for x in 0..wo {
                            for ch in 0..c {
                                let k = ((y / 2) * w + x / 2) * c + ch;
                                g[k] = g[k] + ogd[(y * wo + x) * c + ch];
                            }
                        }
                    }
                }
            }
            Op::Linear { input, weight, bias } => {
                let x = nodes[input.0].value.data();
                let wt = nodes[weight.0].value.data();
                let n = x.len();
                let m = ogd.len();
                if let Some(g) = slot(nodes, gp, *input) {
                    for i in 0..m {
                        let row = &wt[i * n..(i + 1) * n];
                        for j in 0..n {
                            g[j] = g[j] + ogd[i] * row[j];
                        }
                    }
                }
                if let Some(g) = slot(nodes, gp, *weight) {
                    for i in 0..m {
                        let row = &mut g[i * n..(i + 1) * n];
                        for j in 0..n {
                            row[j] = row[j] + ogd[i] * x[j];
                        }
                    }
                }
                if let Some(g) = slot(nodes, gp, *bias) {
                    for i in 0..m {
                        g[i] = g[i] + ogd[i];
                    }
                }
            }
            Op::Reshape { input } => {
                if let Some(g) = slot(nodes, gp, *input) {
                    for (gv, &o) in g.iter_mut().zip(ogd) {
                        *gv = *gv + o;
                    }
                }
            }
            Op::ConcatChannels { inputs } => {
                let total = nodes[i].value.shape()[2];
                let hw = nodes[i].value.numel() / total;
                let mut offset = 0usize;
                for &v in inputs {
                    let c = nodes[v.0].value.shape()[2];
                    if let Some(g) = slot(nodes, gp, v) {
                        for p in 0..hw {
                            for ch in 0..c {
                                g[p * c + ch] =
                                    g[p * c + ch] + ogd[p * total + offset + ch];
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::SliceChannels { input, start } => {
                if let Some(g) = slot(nodes, gp, *input) {
                    let c = nodes[input.0].value.shape()[2];
                    let len = nodes[i].value.shape()[2];
                    let hw = nodes[i].value.numel() / len;
                    for p in 0..hw {
                        for ch in 0..len {
                            let k = p * c + start + ch;
                            g[k] = g[k] + ogd[p * len + ch];
                        }
                    }
                }
            }
            Op::Sigmoid { input } => {
                if let Some(g) = slot(nodes, gp, *input) {
                    let y = nodes[i].value.data();
                    for k in 0..g.len() {
                        g[k] = g[k] + ogd[k] * y[k] * (F::one() - y[k]);
                    }
                }
            }
            Op::Tanh { input } => {
                if let Some(g) = slot(nodes, gp, *input) {
                    let y = nodes[i].value.data();
                    for k in 0..g.len() {
                        g[k] = g[k] + ogd[k] * (F::one() - y[k] * y[k]);
                    }
                }
            }
            Op::Exp { input } => {
                if let Some(g) = slot(nodes, gp, *input) {
                    let y = nodes[i].value.data();
                    for k in 0..g.len() {
                        g[k] = g[k] + ogd[k] * y[k];
                    }
                }
            }
            Op::Square { input } => {
                if let Some(g) = slot(nodes, gp, *input) {
                    let x = nodes[input.0].value.data();
                    let two = F::from_f64(2.0);
                    for k in 0..g.len() {
                        g[k] = g[k] + ogd[k] * two * x[k];
                    }
                }
            }
            Op::Scale { input, factor } => {
                if let Some(g) = slot(nodes, gp, *input) {
                    for k in 0..g.len() {
                        g[k] = g[k] + ogd[k] * *factor;
                    }
                }
            }
            Op::Add { lhs, rhs } => {
                for v in [*lhs, *rhs] {
                    if let Some(g) = slot(nodes, gp, v) {
                        for k in 0..g.len() {
                            g[k] = g[k] + ogd[k];
                        }
                    }
                }
            }
            Op::Sub { lhs, rhs } => {
                if let Some(g) = slot(nodes, gp, *lhs) {
                    for k in 0..g.len() {
                        g[k] = g[k] + ogd[k];
                    }
                }
                if let Some(g) = slot(nodes, gp, *rhs) {
                    for k in 0..g.len() {
                        g[k] = g[k] - ogd[k];
                    }
                }
            }
            Op::Mul { lhs, rhs } => {
                let (a, b) = (nodes[lhs.0].value.data(), nodes[rhs.0].value.data());
                if let Some(g) = slot(nodes, gp, *lhs) {
                    for k in 0..g.len() {
                        g[k] = g[k] + ogd[k] * b[k];
                    }
                }
                if let Some(g) = slot(nodes, gp, *rhs) {
                    for k in 0..g.len() {
                        g[k] = g[k] + ogd[k] * a[k];
                    }
                }
            }
            Op::Sum { input } => {
                if let Some(g) = slot(nodes, gp, *input) {
                    let o = ogd[0];
                    for k in 0..g.len() {
                        g[k] = g[k] + o;
                    }
                }
            }
        }
    }
}

fn sigmoid_scalar<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn zip<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>, f: impl Fn(F, F) -> F) -> Tensor<F> {
    let bd = b.data();
    let data = a
        .data()
        .iter()
        .zip(bd)
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape checked")
}

fn rank3(shape: &[usize], op: &'static str) -> Result<[usize; 3], TensorError> {
    match shape {
        [h, w, c] => Ok([*h, *w, *c]),
        other => Err(TensorError::InvalidShape {
            shape: other.to_vec(),
            reason: format!("{op} expects a rank-3 [h,w,c] map"),
        }),
    }
}

struct ConvGeometry {
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    ph: usize,
    pw: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeometry {
    fn resolve(
        input: &[usize],
        kernel: &[usize],
        padding: Padding,
    ) -> Result<ConvGeometry, TensorError> {
        let [h, w, cin] = rank3(input, "conv2d")?;
        let (kh, kw, kcin, cout) = match kernel {
            [kh, kw, kcin, cout] => (*kh, *kw, *kcin, *cout),
            other => {
                return Err(TensorError::InvalidShape {
                    shape: other.to_vec(),
                    reason: "conv2d kernel must be [kh,kw,cin,cout]".into(),
                })
            }
        };
        if kcin != cin {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: input.to_vec(),
                rhs: kernel.to_vec(),
            });
        }
        match padding {
            Padding::Same => {
                if kh % 2 == 0 || kw % 2 == 0 {
                    return Err(TensorError::InvalidShape {
                        shape: kernel.to_vec(),
                        reason: "same-padding requires odd kernel sides".into(),
                    });
                }
                Ok(ConvGeometry { h, w, cin, kh, kw, cout, ph: kh / 2, pw: kw / 2, ho: h, wo: w })
            }
            Padding::Valid => {
                if kh > h || kw > w {
                    return Err(TensorError::ShapeMismatch {
                        op: "conv2d_valid",
                        lhs: input.to_vec(),
                        rhs: kernel.to_vec(),
                    });
                }
                Ok(ConvGeometry {
                    h,
                    w,
                    cin,
                    kh,
                    kw,
                    cout,
                    ph: 0,
                    pw: 0,
                    ho: h - kh + 1,
                    wo: w - kw + 1,
                })
            }
        }
    }
}

fn conv2d_forward<F: Scalar>(inp: &Tensor<F>, ker: &Tensor<F>, g: &ConvGeometry) -> Tensor<F> {
    let mut out = Tensor::zeros(&[g.ho, g.wo, g.cout]);
    let (id, kd) = (inp.data(), ker.data());
    let dst = out.data_mut();
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let acc = &mut dst[(oy * g.wo + ox) * g.cout..(oy * g.wo + ox + 1) * g.cout];
            for ky in 0..g.kh {
                let iy = oy + ky;
                if iy < g.ph || iy - g.ph >= g.h {
                    continue;
                }
                let iy = iy - g.ph;
                for kx in 0..g.kw {
                    let ix = ox + kx;
                    if ix < g.pw || ix - g.pw >= g.w {
                        continue;
                    }
                    let ix = ix - g.pw;
                    let ibase = (iy * g.w + ix) * g.cin;
                    let kbase = (ky * g.kw + kx) * g.cin * g.cout;
                    for ci in 0..g.cin {
                        let v = id[ibase + ci];
                        let krow = &kd[kbase + ci * g.cout..kbase + (ci + 1) * g.cout];
                        for co in 0..g.cout {
                            acc[co] = acc[co] + v * krow[co];
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv2d_backward<F: Scalar>(
    inp: &Tensor<F>,
    ker: &Tensor<F>,
    g: &ConvGeometry,
    out_grad: &[F],
    mut din: Option<&mut [F]>,
    mut dker: Option<&mut [F]>,
) {
    let (id, kd) = (inp.data(), ker.data());
    for oy in 0..g.ho {
        for ox in 0..g.wo {
            let og = &out_grad[(oy * g.wo + ox) * g.cout..(oy * g.wo + ox + 1) * g.cout];
            for ky in 0..g.kh {
                let iy = oy + ky;
                if iy < g.ph || iy - g.ph >= g.h {
                    continue;
                }
                let iy = iy - g.ph;
                for kx in 0..g.kw {
                    let ix = ox + kx;
                    if ix < g.pw || ix - g.pw >= g.w {
                        continue;
                    }
                    let ix = ix - g.pw;
                    let ibase = (iy * g.w + ix) * g.cin;
                    let kbase = (ky * g.kw + kx) * g.cin * g.cout;
                    for ci in 0..g.cin {
                        let krow = &kd[kbase + ci * g.cout..kbase + (ci + 1) * g.cout];
                        if let Some(din) = din.as_deref_mut() {
                            let mut acc = F::zero();
                            for co in 0..g.cout {
                                acc = acc + og[co] * krow[co];
                            }
                            din[ibase + ci] = din[ibase + ci] + acc;
                        }
                        if let Some(dker) = dker.as_deref_mut() {
                            let v = id[ibase + ci];
                            let kout = &mut dker[kbase + ci * g.cout..kbase + (ci + 1) * g.cout];
                            for co in 0..g.cout {
                                kout[co] = kout[co] + v * og[co];
                            }
                        }
                    }
                }
            }
        }
    }
}
