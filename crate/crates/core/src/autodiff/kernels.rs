//! Numeric kernels shared by the forward and backward passes.

/// `c = beta*c + a @ b` for row-major `a: [m,k]`, `b: [k,n]`, with optional
/// transposition of either operand (interpreting the stored buffer as the
/// transposed matrix).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    // a stored [m,k] (rs=k, cs=1) or as transpose of [k,m] (rs=1, cs=m)
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths are checked above against the declared extents and
    // strides never step outside them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub len: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn out_len(&self) -> usize {
        let span = self.dilation * (self.kernel - 1) + 1;
        let padded = self.len + self.pad_left;
        if padded < span {
            0
        } else {
            (padded - span) / self.stride + 1
        }
    }

    fn src(&self, t: usize, k: usize) -> Option<usize> {
        let pos = t * self.stride + k * self.dilation;
        pos.checked_sub(self.pad_left).filter(|&p| p < self.len)
    }
}

/// im2col for one batch element: `[c_in*kernel, out_len]`.
fn im2col(geo: &ConvGeom, x: &[f64]) -> Vec<f64> {
    let lout = geo.out_len();
    let mut col = vec![0.0; geo.c_in * geo.kernel * lout];
    for ci in 0..geo.c_in {
        let xrow = &x[ci * geo.len..(ci + 1) * geo.len];
        for k in 0..geo.kernel {
            let crow = &mut col[(ci * geo.kernel + k) * lout..(ci * geo.kernel + k + 1) * lout];
            for (t, c) in crow.iter_mut().enumerate() {
                if let Some(p) = geo.src(t, k) {
                    *c = xrow[p];
                }
            }
        }
    }
    col
}

pub(crate) fn conv1d_forward(geo: &ConvGeom, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let lout = geo.out_len();
    let ck = geo.c_in * geo.kernel;
    let mut out = vec![0.0; geo.batch * geo.c_out * lout];
    for b in 0..geo.batch {
        let xb = &x[b * geo.c_in * geo.len..(b + 1) * geo.c_in * geo.len];
        let col = im2col(geo, xb);
        let ob = &mut out[b * geo.c_out * lout..(b + 1) * geo.c_out * lout];
        if let Some(bias) = bias {
            for co in 0..geo.c_out {
                ob[co * lout..(co + 1) * lout].fill(bias[co]);
            }
        }
        gemm(geo.c_out, ck, lout, w, false, &col, false, 1.0, ob);
    }
    out
}

/// Returns (grad_x, grad_w, grad_bias).
pub(crate) fn conv1d_backward(
    geo: &ConvGeom,
    x: &[f64],
    w: &[f64],
    g: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let lout = geo.out_len();
    let ck = geo.c_in * geo.kernel;
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; geo.c_out];
    let mut gcol = vec![0.0; ck * lout];
    for b in 0..geo.batch {
        let xb = &x[b * geo.c_in * geo.len..(b + 1) * geo.c_in * geo.len];
        let gbatch = &g[b * geo.c_out * lout..(b + 1) * geo.c_out * lout];
        for co in 0..geo.c_out {
            gb[co] += gbatch[co * lout..(co + 1) * lout].iter().sum::<f64>();
        }
        let col = im2col(geo, xb);
        gemm(geo.c_out, lout, ck, gbatch, false, &col, true, 1.0, &mut gw);
        gemm(ck, geo.c_out, lout, w, true, gbatch, false, 0.0, &mut gcol);
        let gxb = &mut gx[b * geo.c_in * geo.len..(b + 1) * geo.c_in * geo.len];
        for ci in 0..geo.c_in {
            for k in 0..geo.kernel {
                let crow = &gcol[(ci * geo.kernel + k) * lout..(ci * geo.kernel + k + 1) * lout];
                for (t, c) in crow.iter().enumerate() {
                    if let Some(p) = geo.src(t, k) {
                        gxb[ci * geo.len + p] += c;
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

/// Max pool along the last axis. Returns values and the flat source index of
/// each winner (first maximum on ties).
pub(crate) fn maxpool_forward(
    x: &[f64],
    rows: usize,
    len: usize,
    kernel: usize,
    stride: usize,
) -> (Vec<f64>, Vec<usize>) {
    let lout = if len < kernel { 0 } else { (len - kernel) / stride + 1 };
    let mut out = Vec::with_capacity(rows * lout);
    let mut arg = Vec::with_capacity(rows * lout);
    for r in 0..rows {
        let row = &x[r * len..(r + 1) * len];
        for t in 0..lout {
            let start = t * stride;
            let mut best = start;
            for i in start + 1..start + kernel {
                if row[i] > row[best] {
                    best = i;
                }
            }
            out.push(row[best]);
            arg.push(r * len + best);
        }
    }
    (out, arg)
}
