//! Composite blocks built from tape primitives: SE-Res2 block, attentive
//! statistics pooling and a unidirectional LSTM.

use super::kernels::ConvGeometry;
use super::{AutodiffError, Real, Tape, Var};

type Result<T> = std::result::Result<T, AutodiffError>;

/// Floor applied to variances before square roots.
pub const STD_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug)]
pub struct ConvParams {
    pub w: Var,
    pub b: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct DenseParams {
    pub w: Var,
    pub b: Var,
}

impl DenseParams {
    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        tape.linear(x, self.w, Some(self.b))
    }
}

#[derive(Clone, Debug)]
pub struct SeRes2Params {
    pub conv_in: ConvParams,
    /// `scale - 1` dilated convolutions, one per non-identity split.
    pub res2: Vec<ConvParams>,
    pub conv_out: ConvParams,
    pub se_down: DenseParams,
    pub se_up: DenseParams,
}

#[derive(Clone, Copy, Debug)]
pub struct SeRes2Config {
    pub scale: usize,
    pub kernel: usize,
    pub dilation: usize,
    /// Replace the squeeze-excitation gate with all ones.
    pub se_bypass: bool,
}

impl SeRes2Config {
    /// Padding that keeps the time length unchanged (`dilation` for kernel 3).
    pub fn pad(&self) -> usize {
        self.dilation * (self.kernel - 1) / 2
    }
}

/// 1x1 conv -> dilated Res2 convs -> 1x1 conv -> SE gating -> residual add.
pub fn se_res2_block<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    p: &SeRes2Params,
    cfg: &SeRes2Config,
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 2 {
        return Err(AutodiffError::Config(format!(
            "se_res2_block expects [C, T], got {shape:?}"
        )));
    }
    let channels = shape[0];
    if cfg.scale == 0 || channels % cfg.scale != 0 {
        return Err(AutodiffError::Config(format!(
            "channels {channels} not divisible by res2 scale {}",
            cfg.scale
        )));
    }
    if cfg.kernel % 2 == 0 {
        return Err(AutodiffError::Config(format!(
            "res2 kernel must be odd to preserve length, got {}",
            cfg.kernel
        )));
    }
    if p.res2.len() != cfg.scale - 1 {
        return Err(AutodiffError::Config(format!(
            "expected {} res2 convolutions, got {}",
            cfg.scale - 1,
            p.res2.len()
        )));
    }
    let one = ConvGeometry::new(1, 0, 1);
    let h = tape.conv1d(x, p.conv_in.w, p.conv_in.b, one)?;
    let h = tape.relu(h);

    let width = channels / cfg.scale;
    let geom = ConvGeometry::new(1, cfg.pad(), cfg.dilation);
    let mut outs = Vec::with_capacity(cfg.scale);
    outs.push(tape.slice_rows(h, 0, width)?);
    let mut prev: Option<Var> = None;
    for (i, conv) in p.res2.iter().enumerate() {
        let chunk = tape.slice_rows(h, (i + 1) * width, width)?;
        let inp = match prev {
            Some(pv) => tape.add(chunk, pv)?,
            None => chunk,
        };
        let y = tape.conv1d(inp, conv.w, conv.b, geom)?;
        let y = tape.relu(y);
        outs.push(y);
        prev = Some(y);
    }
    let cat = tape.concat_rows(&outs)?;

    let h2 = tape.conv1d(cat, p.conv_out.w, p.conv_out.b, one)?;
    let h2 = tape.relu(h2);
    let gated = if cfg.se_bypass {
        h2
    } else {
        let s = tape.mean_time(h2)?;
        let z = p.se_down.apply(tape, s)?;
        let z = tape.relu(z);
        let gate = p.se_up.apply(tape, z)?;
        let gate = tape.sigmoid(gate);
        tape.mul_channel(h2, gate)?
    };
    tape.add(gated, x)
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    /// `[A, C, 1]` bottleneck projection.
    pub hidden: ConvParams,
    /// `[C, A, 1]` per-channel scores.
    pub score: ConvParams,
}

pub struct PooledStats {
    /// `[2C]`: weighted mean followed by weighted std.
    pub output: Var,
    /// `[C, T]` attention weights; each row sums to one.
    pub weights: Var,
}

/// Attention-weighted mean and standard deviation over time, concatenated.
pub fn attentive_stats_pool<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    p: &AttentionParams,
) -> Result<PooledStats> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 2 {
        return Err(AutodiffError::Config(format!(
            "attentive_stats_pool expects [C, T], got {shape:?}"
        )));
    }
    let one = ConvGeometry::new(1, 0, 1);
    let h = tape.conv1d(x, p.hidden.w, p.hidden.b, one)?;
    let h = tape.tanh(h);
    let scores = tape.conv1d(h, p.score.w, p.score.b, one)?;
    let alpha = tape.softmax_time(scores)?;

    let wx = tape.mul(alpha, x)?;
    let mean = tape.sum_time(wx)?;
    let centered = tape.sub_channel(x, mean)?;
    let sq = tape.mul(centered, centered)?;
    let wsq = tape.mul(alpha, sq)?;
    let var = tape.sum_time(wsq)?;
    let std = tape.sqrt_floor(var, STD_EPS);
    let output = tape.concat_rows(&[mean, std])?;
    Ok(PooledStats {
        output,
        weights: alpha,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    /// `[4H, D_in]`, gate order input, forget, cell, output.
    pub w_ih: Var,
    /// `[4H, H]`
    pub w_hh: Var,
    /// `[4H]`
    pub b: Var,
}

/// One LSTM step. Returns `(h', c')`.
pub fn lstm_cell<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    h: Var,
    c: Var,
    p: &LstmParams,
) -> Result<(Var, Var)> {
    let hidden = tape.shape(h)[0];
    let gx = tape.linear(x, p.w_ih, Some(p.b))?;
    let gh = tape.linear(h, p.w_hh, None)?;
    let gates = tape.add(gx, gh)?;
    if tape.shape(gates)[0] != 4 * hidden {
        return Err(AutodiffError::ShapeMismatch {
            op: "lstm_cell",
            dim: "gate rows".into(),
            expected: (4 * hidden).to_string(),
            actual: tape.shape(gates)[0].to_string(),
        });
    }
    let i = tape.slice_rows(gates, 0, hidden)?;
    let f = tape.slice_rows(gates, hidden, hidden)?;
    let g = tape.slice_rows(gates, 2 * hidden, hidden)?;
    let o = tape.slice_rows(gates, 3 * hidden, hidden)?;
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let tc = tape.tanh(c_next);
    let h_next = tape.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// Runs the recurrence over `x [T, D_in]` and stacks hidden states into `[T, H]`.
pub fn lstm_sequence<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    p: &LstmParams,
    h0: Var,
    c0: Var,
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 2 {
        return Err(AutodiffError::Config(format!(
            "lstm_sequence expects [T, D], got {shape:?}"
        )));
    }
    let (steps, d_in) = (shape[0], shape[1]);
    let hidden = tape.shape(h0)[0];
    let (mut h, mut c) = (h0, c0);
    let mut rows = Vec::with_capacity(steps);
    for t in 0..steps {
        let xt = tape.slice_rows(x, t, 1)?;
        let xt = tape.reshape(xt, vec![d_in])?;
        let (hn, cn) = lstm_cell(tape, xt, h, c, p)?;
        h = hn;
        c = cn;
        rows.push(tape.reshape(h, vec![1, hidden])?);
    }
    tape.concat_rows(&rows)
}
