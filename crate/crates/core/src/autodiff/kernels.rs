//! Dense loops behind the tape ops.
//!
//! Every reduction runs in a fixed order so repeated runs are bit-identical.

use super::Real;

/// Dot product with eight independent accumulators, folded pairwise.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] = acc[i] + x[i] * y[i];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s = s + *x * *y;
    }
    s
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * *xi;
    }
}

pub fn sum<T: Real>(x: &[T]) -> T {
    x.iter().fold(T::zero(), |a, &b| a + b)
}

/// Stride, padding and dilation of a 1-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl ConvGeometry {
    pub const fn new(stride: usize, pad: usize, dilation: usize) -> Self {
        Self {
            stride,
            pad,
            dilation,
        }
    }

    /// Output length, or `None` when the padded input is shorter than the kernel span.
    pub fn output_len(&self, input_len: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input_len + 2 * self.pad;
        if padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }

    /// Output positions `t` whose tap `k` lands inside the unpadded input.
    #[inline]
    fn valid_range(&self, k: usize, t_in: usize, t_out: usize) -> (usize, usize) {
        // input index = t*stride + k*dilation - pad
        let off = (k * self.dilation) as isize - self.pad as isize;
        let s = self.stride as isize;
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi_excl = {
            let limit = t_in as isize - off; // need t*s < limit
            if limit <= 0 {
                0
            } else {
                (limit + s - 1) / s
            }
        };
        let lo = lo.max(0) as usize;
        let hi = (hi_excl.max(0) as usize).min(t_out);
        (lo, hi.max(lo))
    }
}

pub struct ConvDims {
    pub c_in: usize,
    pub t_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub t_out: usize,
}

pub fn conv1d_forward<T: Real>(
    x: &[T],
    w: &[T],
    b: &[T],
    d: &ConvDims,
    g: &ConvGeometry,
) -> Vec<T> {
    let mut y = vec![T::zero(); d.c_out * d.t_out];
    if g.stride == 1 {
        for co in 0..d.c_out {
            let yrow = &mut y[co * d.t_out..(co + 1) * d.t_out];
            yrow.fill(b[co]);
            for ci in 0..d.c_in {
                let xrow = &x[ci * d.t_in..(ci + 1) * d.t_in];
                let wrow = &w[(co * d.c_in + ci) * d.kernel..][..d.kernel];
                for (k, &wv) in wrow.iter().enumerate() {
                    let (lo, hi) = g.valid_range(k, d.t_in, d.t_out);
                    if lo >= hi {
                        continue;
                    }
                    let start = lo + k * g.dilation - g.pad;
                    axpy(wv, &xrow[start..start + (hi - lo)], &mut yrow[lo..hi]);
                }
            }
        }
    } else {
        for co in 0..d.c_out {
            for t in 0..d.t_out {
                let mut acc = b[co];
                for ci in 0..d.c_in {
                    let xrow = &x[ci * d.t_in..(ci + 1) * d.t_in];
                    let wrow = &w[(co * d.c_in + ci) * d.kernel..][..d.kernel];
                    acc = acc + window_dot(xrow, wrow, t, d, g);
                }
                y[co * d.t_out + t] = acc;
            }
        }
    }
    y
}

#[inline]
fn window_dot<T: Real>(xrow: &[T], wrow: &[T], t: usize, d: &ConvDims, g: &ConvGeometry) -> T {
    let start = (t * g.stride) as isize - g.pad as isize;
    let span = (g.dilation * (d.kernel - 1)) as isize;
    if g.dilation == 1 && start >= 0 && start + span < d.t_in as isize {
        let s = start as usize;
        return dot(wrow, &xrow[s..s + d.kernel]);
    }
    let mut acc = T::zero();
    for (k, &wv) in wrow.iter().enumerate() {
        let idx = start + (k * g.dilation) as isize;
        if idx >= 0 && (idx as usize) < d.t_in {
            acc = acc + wv * xrow[idx as usize];
        }
    }
    acc
}

pub struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Vec<T>,
    pub db: Vec<T>,
}

pub fn conv1d_backward<T: Real>(
    dy: &[T],
    x: &[T],
    w: &[T],
    d: &ConvDims,
    g: &ConvGeometry,
    want_dx: bool,
) -> ConvGrads<T> {
    let mut dw = vec![T::zero(); w.len()];
    let mut db = vec![T::zero(); d.c_out];
    let mut dx = want_dx.then(|| vec![T::zero(); x.len()]);
    for co in 0..d.c_out {
        let dyrow = &dy[co * d.t_out..(co + 1) * d.t_out];
        db[co] = sum(dyrow);
    }
    if g.stride == 1 {
        for co in 0..d.c_out {
            let dyrow = &dy[co * d.t_out..(co + 1) * d.t_out];
            for ci in 0..d.c_in {
                let xrow = &x[ci * d.t_in..(ci + 1) * d.t_in];
                let base = (co * d.c_in + ci) * d.kernel;
                for k in 0..d.kernel {
                    let (lo, hi) = g.valid_range(k, d.t_in, d.t_out);
                    if lo >= hi {
                        continue;
                    }
                    let start = lo + k * g.dilation - g.pad;
                    let n = hi - lo;
                    dw[base + k] = dot(&dyrow[lo..hi], &xrow[start..start + n]);
                    if let Some(dx) = dx.as_mut() {
                        let dxrow = &mut dx[ci * d.t_in..(ci + 1) * d.t_in];
                        axpy(w[base + k], &dyrow[lo..hi], &mut dxrow[start..start + n]);
                    }
                }
            }
        }
    } else {
        for co in 0..d.c_out {
            for t in 0..d.t_out {
                let gv = dy[co * d.t_out + t];
                if gv == T::zero() {
                    continue;
                }
                let start = (t * g.stride) as isize - g.pad as isize;
                for ci in 0..d.c_in {
                    let base = (co * d.c_in + ci) * d.kernel;
                    let xoff = ci * d.t_in;
                    let span = (g.dilation * (d.kernel - 1)) as isize;
                    if g.dilation == 1 && start >= 0 && start + span < d.t_in as isize {
                        let s = xoff + start as usize;
                        axpy(gv, &x[s..s + d.kernel], &mut dw[base..base + d.kernel]);
                        if let Some(dx) = dx.as_mut() {
                            axpy(gv, &w[base..base + d.kernel], &mut dx[s..s + d.kernel]);
                        }
                    } else {
                        for k in 0..d.kernel {
                            let idx = start + (k * g.dilation) as isize;
                            if idx >= 0 && (idx as usize) < d.t_in {
                                let xi = xoff + idx as usize;
                                dw[base + k] = dw[base + k] + gv * x[xi];
                                if let Some(dx) = dx.as_mut() {
                                    dx[xi] = dx[xi] + gv * w[base + k];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    ConvGrads { dx, dw, db }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_len_formula() {
        let g = ConvGeometry::new(512, 0, 1);
        assert_eq!(g.output_len(61440, 1024), Some(119));
        assert_eq!(ConvGeometry::new(1, 2, 2).output_len(119, 3), Some(119));
        assert_eq!(ConvGeometry::new(1, 0, 4).output_len(8, 3), None);
    }

    #[test]
    fn dot_matches_naive_on_odd_lengths() {
        for n in [0usize, 1, 7, 8, 9, 33] {
            let a: Vec<f64> = (0..n).map(|i| i as f64 * 0.5 - 1.0).collect();
            let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
            let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            assert!((dot(&a, &b) - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn valid_range_covers_exactly_in_bounds_taps() {
        let d = ConvDims {
            c_in: 1,
            t_in: 10,
            c_out: 1,
            kernel: 3,
            t_out: 0,
        };
        for g in [
            ConvGeometry::new(1, 2, 2),
            ConvGeometry::new(3, 1, 1),
            ConvGeometry::new(2, 0, 3),
        ] {
            let t_out = g.output_len(d.t_in, d.kernel).unwrap();
            for k in 0..d.kernel {
                let (lo, hi) = g.valid_range(k, d.t_in, t_out);
                for t in 0..t_out {
                    let idx = (t * g.stride + k * g.dilation) as isize - g.pad as isize;
                    let inside = idx >= 0 && idx < d.t_in as isize;
                    assert_eq!(inside, t >= lo && t < hi, "{g:?} k={k} t={t}");
                }
            }
        }
    }
}
