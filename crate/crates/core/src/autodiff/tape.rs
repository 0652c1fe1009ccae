use super::kernels::{self, axpy, dot, ConvDims, ConvGeometry};
use super::{AutodiffError, Real, Tensor};

type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeometry,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    MulChannel {
        x: Var,
        gate: Var,
    },
    SubChannel {
        x: Var,
        shift: Var,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    Reshape(Var),
    Transpose(Var),
    MeanTime(Var),
    SumTime(Var),
    SoftmaxTime(Var),
    SqrtFloor {
        x: Var,
        eps: f64,
    },
    SumAll(Var),
    BceWithLogit {
        logit: Var,
        target: f64,
    },
    CrossEntropy {
        logits: Var,
        class: usize,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv1d { x, w, b, .. } => vec![*x, *w, *b],
            Op::Linear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::MulChannel { x, gate } => vec![*x, *gate],
            Op::SubChannel { x, shift } => vec![*x, *shift],
            Op::ConcatRows(parts) => parts.clone(),
            Op::Scale(x, _)
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::SliceRows { x, .. }
            | Op::Reshape(x)
            | Op::Transpose(x)
            | Op::MeanTime(x)
            | Op::SumTime(x)
            | Op::SoftmaxTime(x)
            | Op::SqrtFloor { x, .. }
            | Op::SumAll(x) => vec![*x],
            Op::BceWithLogit { logit, .. } => vec![*logit],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// Records primitive operations in execution order and replays them in reverse.
///
/// Gradients are write-once: a second [`Tape::backward`] fails until
/// [`Tape::reset_grads`] is called.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass, if `v` was reachable from the loss.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    // ----- primitive ops -----

    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeometry) -> Result<Var> {
        let dims = self.conv_dims(x, w, b, &geom)?;
        let y = kernels::conv1d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &dims,
            &geom,
        );
        let out = Tensor::from_parts_unchecked(vec![dims.c_out, dims.t_out], y);
        Ok(self.push(out, Op::Conv1d { x, w, b, geom }))
    }

    fn conv_dims(&self, x: Var, w: Var, b: Var, geom: &ConvGeometry) -> Result<ConvDims> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 {
            return Err(mismatch("conv1d", "input rank", 2, xs.len()));
        }
        if ws.len() != 3 {
            return Err(mismatch("conv1d", "weight rank", 3, ws.len()));
        }
        if ws[1] != xs[0] {
            return Err(mismatch("conv1d", "in_channels", ws[1], xs[0]));
        }
        if bs != [ws[0]] {
            return Err(mismatch(
                "conv1d",
                "bias length",
                ws[0],
                bs.iter().product(),
            ));
        }
        if geom.stride == 0 || geom.dilation == 0 {
            return Err(AutodiffError::Config(format!(
                "conv1d stride and dilation must be positive, got {geom:?}"
            )));
        }
        let t_out = geom.output_len(xs[1], ws[2]).ok_or_else(|| {
            mismatch(
                "conv1d",
                "time (padded input shorter than dilated kernel)",
                geom.dilation * (ws[2] - 1) + 1,
                xs[1] + 2 * geom.pad,
            )
        })?;
        Ok(ConvDims {
            c_in: xs[0],
            t_in: xs[1],
            c_out: ws[0],
            kernel: ws[2],
            t_out,
        })
    }

    /// `w [O, I] · x [I] + b [O]`
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 1 {
            return Err(mismatch("linear", "input rank", 1, xs.len()));
        }
        if ws.len() != 2 || ws[1] != xs[0] {
            return Err(mismatch(
                "linear",
                "in_features",
                xs[0],
                ws.get(1).copied().unwrap_or(0),
            ));
        }
        let (o, i) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(mismatch("linear", "bias length", o, self.value(b).len()));
            }
        }
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut y: Vec<T> = (0..o).map(|r| dot(&wv[r * i..(r + 1) * i], xv)).collect();
        if let Some(b) = b {
            for (yi, bi) in y.iter_mut().zip(self.value(b).data()) {
                *yi = *yi + *bi;
            }
        }
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![o], y),
            Op::Linear { x, w, b },
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::ShapeMismatch {
                op,
                dim: "shape".into(),
                expected: format!("{:?}", self.shape(a)),
                actual: format!("{:?}", self.shape(b)),
            });
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::from_parts_unchecked(va.shape().to_vec(), data);
        self.push(t, op)
    }

    fn map(&mut self, x: Var, f: impl Fn(T) -> T, op: Op) -> Var {
        let v = self.value(x);
        let t = Tensor::from_parts_unchecked(
            v.shape().to_vec(),
            v.data().iter().map(|&a| f(a)).collect(),
        );
        self.push(t, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let cc = T::from_f64(c);
        self.map(x, |a| a * cc, Op::Scale(x, c))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(
            x,
            |a| if a < T::zero() { T::zero() } else { a },
            Op::Relu(x),
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, |a| a.tanh(), Op::Tanh(x))
    }

    fn channel_time(&self, op: &'static str, x: Var, v: Var) -> Result<(usize, usize)> {
        let xs = self.shape(x);
        if xs.len() != 2 {
            return Err(mismatch(op, "input rank", 2, xs.len()));
        }
        if self.shape(v) != [xs[0]] {
            return Err(mismatch(op, "channels", xs[0], self.value(v).len()));
        }
        Ok((xs[0], xs[1]))
    }

    /// `x [C, T] * gate [C]`, broadcast over time.
    pub fn mul_channel(&mut self, x: Var, gate: Var) -> Result<Var> {
        let (c, t) = self.channel_time("mul_channel", x, gate)?;
        let xv = self.value(x).data();
        let gv = self.value(gate).data();
        let mut y = xv.to_vec();
        for ch in 0..c {
            for v in &mut y[ch * t..(ch + 1) * t] {
                *v = *v * gv[ch];
            }
        }
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![c, t], y),
            Op::MulChannel { x, gate },
        ))
    }

    /// `x [C, T] - shift [C]`, broadcast over time.
    pub fn sub_channel(&mut self, x: Var, shift: Var) -> Result<Var> {
        let (c, t) = self.channel_time("sub_channel", x, shift)?;
        let xv = self.value(x).data();
        let sv = self.value(shift).data();
        let mut y = xv.to_vec();
        for ch in 0..c {
            for v in &mut y[ch * t..(ch + 1) * t] {
                *v = *v - sv[ch];
            }
        }
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![c, t], y),
            Op::SubChannel { x, shift },
        ))
    }

    /// Rows `start..start+len` along axis 0.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        let rows = v.shape()[0];
        if len == 0 || start + len > rows {
            return Err(mismatch("slice_rows", "rows", rows, start + len));
        }
        let rl = v.row_len();
        let data = v.data()[start * rl..(start + len) * rl].to_vec();
        let mut shape = v.shape().to_vec();
        shape[0] = len;
        Ok(self.push(
            Tensor::from_parts_unchecked(shape, data),
            Op::SliceRows { x, start },
        ))
    }

    /// Concatenation along axis 0; trailing dimensions must agree.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| AutodiffError::Config("concat_rows needs at least one input".into()))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.shape()[1..] != tail[..] {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat_rows",
                    dim: "trailing dims".into(),
                    expected: format!("{tail:?}"),
                    actual: format!("{:?}", &v.shape()[1..]),
                });
            }
            rows += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        Ok(self.push(
            Tensor::from_parts_unchecked(shape, data),
            Op::ConcatRows(parts.to_vec()),
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let data = self.value(x).data().to_vec();
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.rank() != 2 {
            return Err(mismatch("transpose", "input rank", 2, v.rank()));
        }
        let (r, c) = (v.shape()[0], v.shape()[1]);
        let src = v.data();
        let mut y = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                y[j * r + i] = src[i * c + j];
            }
        }
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![c, r], y),
            Op::Transpose(x),
        ))
    }

    fn rows_of(&self, op: &'static str, x: Var) -> Result<(usize, usize)> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(mismatch(op, "input rank", 2, s.len()));
        }
        Ok((s[0], s[1]))
    }

    /// `[C, T] -> [C]`, mean over the last axis.
    pub fn mean_time(&mut self, x: Var) -> Result<Var> {
        let (c, t) = self.rows_of("mean_time", x)?;
        let inv = T::one() / T::from_f64(t as f64);
        let xv = self.value(x).data();
        let y = (0..c)
            .map(|ch| kernels::sum(&xv[ch * t..(ch + 1) * t]) * inv)
            .collect();
        Ok(self.push(Tensor::from_parts_unchecked(vec![c], y), Op::MeanTime(x)))
    }

    /// `[C, T] -> [C]`, sum over the last axis.
    pub fn sum_time(&mut self, x: Var) -> Result<Var> {
        let (c, t) = self.rows_of("sum_time", x)?;
        let xv = self.value(x).data();
        let y = (0..c)
            .map(|ch| kernels::sum(&xv[ch * t..(ch + 1) * t]))
            .collect();
        Ok(self.push(Tensor::from_parts_unchecked(vec![c], y), Op::SumTime(x)))
    }

    /// Softmax over the last axis of `[C, T]`, independently per channel.
    pub fn softmax_time(&mut self, x: Var) -> Result<Var> {
        let (c, t) = self.rows_of("softmax_time", x)?;
        let xv = self.value(x).data();
        let mut y = vec![T::zero(); c * t];
        for ch in 0..c {
            softmax_into(&xv[ch * t..(ch + 1) * t], &mut y[ch * t..(ch + 1) * t]);
        }
        Ok(self.push(
            Tensor::from_parts_unchecked(vec![c, t], y),
            Op::SoftmaxTime(x),
        ))
    }

    /// `sqrt(max(x, eps))` elementwise.
    pub fn sqrt_floor(&mut self, x: Var, eps: f64) -> Var {
        let e = T::from_f64(eps);
        self.map(x, |a| a.max(e).sqrt(), Op::SqrtFloor { x, eps })
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = kernels::sum(self.value(x).data());
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    /// Binary cross-entropy on a single logit, log-sum-exp stable.
    pub fn bce_with_logit(&mut self, logit: Var, target: f64) -> Result<Var> {
        if self.value(logit).len() != 1 {
            return Err(mismatch(
                "bce_with_logit",
                "logit length",
                1,
                self.value(logit).len(),
            ));
        }
        if !(0.0..=1.0).contains(&target) {
            return Err(AutodiffError::InvalidTarget(target));
        }
        let z = self.value(logit).data()[0];
        let y = T::from_f64(target);
        let loss = z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p();
        Ok(self.push(Tensor::scalar(loss), Op::BceWithLogit { logit, target }))
    }

    /// Multi-class cross-entropy, `logsumexp(logits) - logits[class]`.
    pub fn cross_entropy(&mut self, logits: Var, class: usize) -> Result<Var> {
        let v = self.value(logits);
        if v.rank() != 1 {
            return Err(mismatch("cross_entropy", "logits rank", 1, v.rank()));
        }
        if class >= v.len() {
            return Err(AutodiffError::ClassOutOfRange {
                class,
                classes: v.len(),
            });
        }
        let loss = log_sum_exp(v.data()) - v.data()[class];
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, class }))
    }

    // ----- reverse pass -----

    /// Populate gradients of every `requires_grad` node reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(AutodiffError::BackwardAlreadyRun);
        }
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(AutodiffError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        for (i, g) in grads.iter_mut().enumerate() {
            if !self.nodes[i].requires_grad {
                *g = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let n = self.nodes[v.0].value.len();
            let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d { x, w, b, geom } => {
                let dims = self
                    .conv_dims(*x, *w, *b, geom)
                    .expect("shapes validated in forward");
                let cg = kernels::conv1d_backward(
                    g,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    &dims,
                    geom,
                    needs(x),
                );
                if let Some(dx) = cg.dx {
                    acc(*x, &mut |buf| axpy(T::one(), &dx, buf));
                }
                acc(*w, &mut |buf| axpy(T::one(), &cg.dw, buf));
                acc(*b, &mut |buf| axpy(T::one(), &cg.db, buf));
            }
            Op::Linear { x, w, b } => {
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let n_in = xv.len();
                acc(*w, &mut |buf| {
                    for (r, &gr) in g.iter().enumerate() {
                        axpy(gr, xv, &mut buf[r * n_in..(r + 1) * n_in]);
                    }
                });
                acc(*x, &mut |buf| {
                    for (r, &gr) in g.iter().enumerate() {
                        axpy(gr, &wv[r * n_in..(r + 1) * n_in], buf);
                    }
                });
                if let Some(b) = b {
                    acc(*b, &mut |buf| axpy(T::one(), g, buf));
                }
            }
            Op::Add(a, b) => {
                acc(*a, &mut |buf| axpy(T::one(), g, buf));
                acc(*b, &mut |buf| axpy(T::one(), g, buf));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |buf| axpy(T::one(), g, buf));
                acc(*b, &mut |buf| axpy(-T::one(), g, buf));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |buf| {
                    for ((o, &gi), &bi) in buf.iter_mut().zip(g).zip(bv) {
                        *o = *o + gi * bi;
                    }
                });
                acc(*b, &mut |buf| {
                    for ((o, &gi), &ai) in buf.iter_mut().zip(g).zip(av) {
                        *o = *o + gi * ai;
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |buf| axpy(T::from_f64(*c), g, buf)),
            Op::Relu(x) => acc(*x, &mut |buf| {
                for ((o, &gi), &yi) in buf.iter_mut().zip(g).zip(out) {
                    if yi > T::zero() {
                        *o = *o + gi;
                    }
                }
            }),
            Op::Sigmoid(x) => acc(*x, &mut |buf| {
                for ((o, &gi), &yi) in buf.iter_mut().zip(g).zip(out) {
                    *o = *o + gi * yi * (T::one() - yi);
                }
            }),
            Op::Tanh(x) => acc(*x, &mut |buf| {
                for ((o, &gi), &yi) in buf.iter_mut().zip(g).zip(out) {
                    *o = *o + gi * (T::one() - yi * yi);
                }
            }),
            Op::MulChannel { x, gate } => {
                let (c, t) = (self.shape(*x)[0], self.shape(*x)[1]);
                let xv = self.value(*x).data();
                let gv = self.value(*gate).data();
                acc(*x, &mut |buf| {
                    for ch in 0..c {
                        axpy(
                            gv[ch],
                            &g[ch * t..(ch + 1) * t],
                            &mut buf[ch * t..(ch + 1) * t],
                        );
                    }
                });
                acc(*gate, &mut |buf| {
                    for ch in 0..c {
                        buf[ch] =
                            buf[ch] + dot(&g[ch * t..(ch + 1) * t], &xv[ch * t..(ch + 1) * t]);
                    }
                });
            }
            Op::SubChannel { x, shift } => {
                let (c, t) = (self.shape(*x)[0], self.shape(*x)[1]);
                acc(*x, &mut |buf| axpy(T::one(), g, buf));
                acc(*shift, &mut |buf| {
                    for ch in 0..c {
                        buf[ch] = buf[ch] - kernels::sum(&g[ch * t..(ch + 1) * t]);
                    }
                });
            }
            Op::SliceRows { x, start } => {
                let rl = self.value(*x).row_len();
                let off = start * rl;
                acc(*x, &mut |buf| {
                    axpy(T::one(), g, &mut buf[off..off + g.len()])
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    acc(*p, &mut |buf| axpy(T::one(), &g[off..off + n], buf));
                    off += n;
                }
            }
            Op::Reshape(x) => acc(*x, &mut |buf| axpy(T::one(), g, buf)),
            Op::Transpose(x) => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                acc(*x, &mut |buf| {
                    for i in 0..r {
                        for j in 0..c {
                            buf[i * c + j] = buf[i * c + j] + g[j * r + i];
                        }
                    }
                });
            }
            Op::MeanTime(x) | Op::SumTime(x) => {
                let t = self.shape(*x)[1];
                let f = if matches!(node.op, Op::MeanTime(_)) {
                    T::one() / T::from_f64(t as f64)
                } else {
                    T::one()
                };
                acc(*x, &mut |buf| {
                    for (ch, &gc) in g.iter().enumerate() {
                        for o in &mut buf[ch * t..(ch + 1) * t] {
                            *o = *o + gc * f;
                        }
                    }
                });
            }
            Op::SoftmaxTime(x) => {
                let t = self.shape(*x)[1];
                acc(*x, &mut |buf| {
                    for ch in 0..g.len() / t {
                        let (gs, ys) = (&g[ch * t..(ch + 1) * t], &out[ch * t..(ch + 1) * t]);
                        let inner = dot(gs, ys);
                        for k in 0..t {
                            buf[ch * t + k] = buf[ch * t + k] + ys[k] * (gs[k] - inner);
                        }
                    }
                });
            }
            Op::SqrtFloor { x, eps } => {
                let xv = self.value(*x).data();
                let e = T::from_f64(*eps);
                let half = T::from_f64(0.5);
                acc(*x, &mut |buf| {
                    for ((o, &gi), (&xi, &yi)) in buf.iter_mut().zip(g).zip(xv.iter().zip(out)) {
                        if xi > e {
                            *o = *o + gi * half / yi;
                        }
                    }
                });
            }
            Op::SumAll(x) => acc(*x, &mut |buf| {
                for o in buf.iter_mut() {
                    *o = *o + g[0];
                }
            }),
            Op::BceWithLogit { logit, target } => {
                let z = self.value(*logit).data()[0];
                let d = sigmoid(z) - T::from_f64(*target);
                acc(*logit, &mut |buf| buf[0] = buf[0] + g[0] * d);
            }
            Op::CrossEntropy { logits, class } => {
                let lv = self.value(*logits).data();
                let mut p = vec![T::zero(); lv.len()];
                softmax_into(lv, &mut p);
                p[*class] = p[*class] - T::one();
                acc(*logits, &mut |buf| axpy(g[0], &p, buf));
            }
        }
    }
}

fn mismatch(op: &'static str, dim: &str, expected: usize, actual: usize) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        dim: dim.to_string(),
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn log_sum_exp<T: Real>(v: &[T]) -> T {
    let m = v.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let s = v.iter().fold(T::zero(), |a, &b| a + (b - m).exp());
    m + s.ln()
}

fn softmax_into<T: Real>(x: &[T], y: &mut [T]) {
    let m = x.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut s = T::zero();
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = (xi - m).exp();
        s = s + *yi;
    }
    let inv = T::one() / s;
    for yi in y.iter_mut() {
        *yi = *yi * inv;
    }
}
