//! Convolution, batch-norm and pooling kernels.
//!
//! Feature maps are stored channel-major as `[C][B][H][W]`, which makes every
//! batch-norm channel a contiguous row and lets each per-sample convolution be
//! one GEMM over a strided output.

use super::{gemm, Layout, Scalar};

/// Unrolls the 3x3 (pad 1) neighbourhoods of sample `bi` into a
/// `(c * 9) x (h * w)` matrix.
fn im2col<T: Scalar>(input: &[T], c: usize, b: usize, h: usize, w: usize, bi: usize, cols: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &input[(ci * b + bi) * hw..(ci * b + bi + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * hw..((ci * 9) + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into sample `bi`.
fn col2im_add<T: Scalar>(cols: &[T], c: usize, b: usize, h: usize, w: usize, bi: usize, out: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut out[(ci * b + bi) * hw..(ci * b + bi + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 9) + ky * 3 + kx) * hw..((ci * 9) + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            for x in 1..w {
                                dst[x - 1] += src[x];
                            }
                        }
                        1 => {
                            for x in 0..w {
                                dst[x] += src[x];
                            }
                        }
                        _ => {
                            for x in 0..w - 1 {
                                dst[x + 1] += src[x];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 3x3 convolution, stride 1, zero padding 1, no bias.
/// `weight` is `[c_out][c_in][3][3]`.
pub fn conv3x3_forward<T: Scalar>(
    input: &[T],
    c_in: usize,
    b: usize,
    h: usize,
    w: usize,
    weight: &[T],
    c_out: usize,
) -> Vec<T> {
    let hw = h * w;
    assert_eq!(input.len(), c_in * b * hw);
    assert_eq!(weight.len(), c_out * c_in * 9);
    let mut out = vec![T::zero(); c_out * b * hw];
    let mut cols = vec![T::zero(); c_in * 9 * hw];
    for bi in 0..b {
        im2col(input, c_in, b, h, w, bi, &mut cols);
        gemm(
            T::one(),
            weight,
            Layout::row_major(c_out, c_in * 9),
            &cols,
            Layout::row_major(c_in * 9, hw),
            T::zero(),
            &mut out[bi * hw..],
            Layout::strided(c_out, hw, b * hw),
        );
    }
    out
}

/// Returns the weight gradient and, if requested, the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_backward<T: Scalar>(
    input: &[T],
    dout: &[T],
    c_in: usize,
    b: usize,
    h: usize,
    w: usize,
    weight: &[T],
    c_out: usize,
    want_dinput: bool,
) -> (Vec<T>, Option<Vec<T>>) {
    let hw = h * w;
    assert_eq!(dout.len(), c_out * b * hw);
    let mut dweight = vec![T::zero(); c_out * c_in * 9];
    let mut dinput = want_dinput.then(|| vec![T::zero(); c_in * b * hw]);
    let mut cols = vec![T::zero(); c_in * 9 * hw];
    let mut dcols = if want_dinput {
        vec![T::zero(); c_in * 9 * hw]
    } else {
        Vec::new()
    };
    for bi in 0..b {
        im2col(input, c_in, b, h, w, bi, &mut cols);
        gemm(
            T::one(),
            &dout[bi * hw..],
            Layout::strided(c_out, hw, b * hw),
            &cols,
            Layout::row_major(c_in * 9, hw).t(),
            T::one(),
            &mut dweight,
            Layout::row_major(c_out, c_in * 9),
        );
        if let Some(dx) = dinput.as_mut() {
            gemm(
                T::one(),
                weight,
                Layout::row_major(c_out, c_in * 9).t(),
                &dout[bi * hw..],
                Layout::strided(c_out, hw, b * hw),
                T::zero(),
                &mut dcols,
                Layout::row_major(c_in * 9, hw),
            );
            col2im_add(&dcols, c_in, b, h, w, bi, dx);
        }
    }
    (dweight, dinput)
}

/// Per-channel statistics kept from a training-mode batch-norm pass.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    /// Biased batch variance.
    pub var: Vec<T>,
}

/// Batch norm with batch statistics over each channel row of `x` (`c x n`).
pub fn batchnorm_train<T: Scalar>(x: &[T], c: usize, gamma: &[T], beta: &[T], eps: f64) -> (Vec<T>, BnCache<T>) {
    let n = x.len() / c;
    let inv_n = T::of(1.0 / n as f64);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(c);
    let mut means = Vec::with_capacity(c);
    let mut vars = Vec::with_capacity(c);
    for ch in 0..c {
        let row = &x[ch * n..(ch + 1) * n];
        let mean = row.iter().fold(T::zero(), |a, &v| a + v) * inv_n;
        let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) * inv_n;
        let is = T::one() / (var + T::of(eps)).sqrt();
        let (g, bt) = (gamma[ch], beta[ch]);
        for ((xh, yo), &v) in xhat[ch * n..(ch + 1) * n]
            .iter_mut()
            .zip(&mut y[ch * n..(ch + 1) * n])
            .zip(row)
        {
            *xh = (v - mean) * is;
            *yo = g * *xh + bt;
        }
        inv_std.push(is);
        means.push(mean);
        vars.push(var);
    }
    (
        y,
        BnCache {
            xhat,
            inv_std,
            mean: means,
            var: vars,
        },
    )
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward<T: Scalar>(dy: &[T], cache: &BnCache<T>, gamma: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let c = gamma.len();
    let n = dy.len() / c;
    let nf = T::of(n as f64);
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgamma = Vec::with_capacity(c);
    let mut dbeta = Vec::with_capacity(c);
    for ch in 0..c {
        let dyr = &dy[ch * n..(ch + 1) * n];
        let xh = &cache.xhat[ch * n..(ch + 1) * n];
        let sum_dy = dyr.iter().fold(T::zero(), |a, &v| a + v);
        let sum_dy_xh = dyr.iter().zip(xh).fold(T::zero(), |a, (&d, &x)| a + d * x);
        let k = gamma[ch] * cache.inv_std[ch] / nf;
        for ((o, &d), &x) in dx[ch * n..(ch + 1) * n].iter_mut().zip(dyr).zip(xh) {
            *o = k * (nf * d - sum_dy - x * sum_dy_xh);
        }
        dgamma.push(sum_dy_xh);
        dbeta.push(sum_dy);
    }
    (dx, dgamma, dbeta)
}

/// Batch norm with frozen running statistics, in place.
pub fn batchnorm_infer<T: Scalar>(
    x: &mut [T],
    c: usize,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: f64,
) {
    let n = x.len() / c;
    for ch in 0..c {
        let scale = gamma[ch] / (running_var[ch] + T::of(eps)).sqrt();
        let shift = beta[ch] - scale * running_mean[ch];
        for v in &mut x[ch * n..(ch + 1) * n] {
            *v = scale * *v + shift;
        }
    }
}

pub fn relu_inplace<T: Scalar>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes `dy` wherever the ReLU output was not positive.
pub fn relu_backward_inplace<T: Scalar>(dy: &mut [T], out: &[T]) {
    for (d, &o) in dy.iter_mut().zip(out) {
        if o <= T::zero() {
            *d = T::zero();
        }
    }
}

/// 2x2 max pooling with stride 2. Returns the pooled maps and, per output,
/// the flat input index of the selected maximum (first on ties).
pub fn maxpool2_forward<T: Scalar>(x: &[T], c: usize, b: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    assert!(h % 2 == 0 && w % 2 == 0, "max pooling needs even spatial size");
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Vec::with_capacity(c * b * oh * ow);
    let mut arg = Vec::with_capacity(c * b * oh * ow);
    for plane in 0..c * b {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let i0 = base + 2 * oy * w + 2 * ox;
                let mut best = i0;
                for &i in &[i0 + 1, i0 + w, i0 + w + 1] {
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                y.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (y, arg)
}

pub fn maxpool2_backward<T: Scalar>(dy: &[T], arg: &[u32], input_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&d, &i) in dy.iter().zip(arg) {
        dx[i as usize] += d;
    }
    dx
}

/// Global average pool `[C][B][HW] -> [C][B]`.
pub fn global_avg_pool<T: Scalar>(x: &[T], c: usize, b: usize, hw: usize) -> Vec<T> {
    let inv = T::of(1.0 / hw as f64);
    (0..c * b)
        .map(|p| x[p * hw..(p + 1) * hw].iter().fold(T::zero(), |a, &v| a + v) * inv)
        .collect()
}

pub fn global_avg_pool_backward<T: Scalar>(dy: &[T], hw: usize) -> Vec<T> {
    let inv = T::of(1.0 / hw as f64);
    dy.iter()
        .flat_map(|&d| std::iter::repeat(d * inv).take(hw))
        .collect()
}
