//! Forward and backward kernels for the graph operations.
//!
//! Dense convolutions go through im2col and `dgemm`; depthwise convolutions,
//! pooling and resampling are direct loops.

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// C (m×n) = alpha · A (m×k) · B (k×n) + beta · C, all row-major unless strides say otherwise.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the slices cover every index touched for the given shapes and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(x: &[f64], c_in: usize, h: usize, w: usize, g: ConvGeom, cols: &mut [f64]) {
    let (ho, wo) = g.out_size(h, w);
    let p = ho * wo;
    let k = g.kernel;
    for c in 0..c_in {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], c_in: usize, h: usize, w: usize, g: ConvGeom, dx: &mut [f64]) {
    let (ho, wo) = g.out_size(h, w);
    let p = ho * wo;
    let k = g.kernel;
    for c in 0..c_in {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Dense convolution. `w` is `(c_out, c_in, k, k)`.
pub fn conv_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>, g: ConvGeom) -> Tensor {
    let [n, c_in, h, wd] = x.shape();
    let c_out = w.batch();
    let (ho, wo) = g.out_size(h, wd);
    let p = ho * wo;
    let kk = c_in * g.kernel * g.kernel;
    let mut out = Tensor::zeros([n, c_out, ho, wo]);
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; kk * p] };
    for i in 0..n {
        let xi = &x.data()[i * c_in * h * wd..(i + 1) * c_in * h * wd];
        let rhs: &[f64] = if g.is_pointwise() {
            xi
        } else {
            im2col(xi, c_in, h, wd, g, &mut cols);
            &cols
        };
        let oi = &mut out.data_mut()[i * c_out * p..(i + 1) * c_out * p];
        if let Some(b) = b {
            for (c, chunk) in oi.chunks_mut(p).enumerate() {
                chunk.fill(b.data()[c]);
            }
        }
        gemm(
            c_out,
            kk,
            p,
            w.data(),
            (kk as isize, 1),
            rhs,
            (p as isize, 1),
            if b.is_some() { 1.0 } else { 0.0 },
            oi,
        );
    }
    out
}

/// Gradients of a dense convolution. Returns `(dx, dw, db)`; `dx` is skipped
/// when `need_dx` is false.
pub fn conv_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    g: ConvGeom,
    need_dx: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let [n, c_in, h, wd] = x.shape();
    let c_out = w.batch();
    let (ho, wo) = (dy.height(), dy.width());
    let p = ho * wo;
    let kk = c_in * g.kernel * g.kernel;
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros([1, c_out, 1, 1]);
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; kk * p] };
    let mut dcols = vec![0.0; kk * p];
    for i in 0..n {
        let xi = &x.data()[i * c_in * h * wd..(i + 1) * c_in * h * wd];
        let dyi = &dy.data()[i * c_out * p..(i + 1) * c_out * p];
        for (c, chunk) in dyi.chunks(p).enumerate() {
            db.data_mut()[c] += chunk.iter().sum::<f64>();
        }
        let rhs: &[f64] = if g.is_pointwise() {
            xi
        } else {
            im2col(xi, c_in, h, wd, g, &mut cols);
            &cols
        };
        // dw (c_out × kk) += dy_i (c_out × p) · colsᵀ (p × kk)
        gemm(c_out, p, kk, dyi, (p as isize, 1), rhs, (1, p as isize), 1.0, dw.data_mut());
        if let Some(dx) = dx.as_mut() {
            let dxi = &mut dx.data_mut()[i * c_in * h * wd..(i + 1) * c_in * h * wd];
            if g.is_pointwise() {
                // dx_i (kk × p) = wᵀ (kk × c_out) · dy_i
                gemm(kk, c_out, p, w.data(), (1, kk as isize), dyi, (p as isize, 1), 0.0, dxi);
            } else {
                gemm(kk, c_out, p, w.data(), (1, kk as isize), dyi, (p as isize, 1), 0.0, &mut dcols);
                col2im(&dcols, c_in, h, wd, g, dxi);
            }
        }
    }
    (dx, dw, db)
}

/// Depthwise convolution. `w` is `(c, 1, k, k)`.
pub fn depthwise_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>, g: ConvGeom) -> Tensor {
    let [n, c, h, wd] = x.shape();
    let (ho, wo) = g.out_size(h, wd);
    let k = g.kernel;
    let mut out = Tensor::zeros([n, c, ho, wo]);
    for i in 0..n {
        for ch in 0..c {
            let src = &x.data()[(i * c + ch) * h * wd..][..h * wd];
            let ker = &w.data()[ch * k * k..(ch + 1) * k * k];
            let bias = b.map_or(0.0, |b| b.data()[ch]);
            let dst = &mut out.data_mut()[(i * c + ch) * ho * wo..][..ho * wo];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias;
                    for ky in 0..k {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < wd as isize {
                                acc += ker[ky * k + kx] * src[iy as usize * wd + ix as usize];
                            }
                        }
                    }
                    dst[oy * wo + ox] = acc;
                }
            }
        }
    }
    out
}

pub fn depthwise_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    g: ConvGeom,
    need_dx: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let [n, c, h, wd] = x.shape();
    let (ho, wo) = (dy.height(), dy.width());
    let k = g.kernel;
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros([1, c, 1, 1]);
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    for i in 0..n {
        for ch in 0..c {
            let src = &x.data()[(i * c + ch) * h * wd..][..h * wd];
            let ker = &w.data()[ch * k * k..(ch + 1) * k * k];
            let grad = &dy.data()[(i * c + ch) * ho * wo..][..ho * wo];
            db.data_mut()[ch] += grad.iter().sum::<f64>();
            let dker = &mut dw.data_mut()[ch * k * k..(ch + 1) * k * k];
            let mut dsrc = dx.as_mut().map(|dx| &mut dx.data_mut()[(i * c + ch) * h * wd..][..h * wd]);
            for oy in 0..ho {
                for ox in 0..wo {
                    let gv = grad[oy * wo + ox];
                    if gv == 0.0 {
                        continue;
                    }
                    for ky in 0..k {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < wd as isize {
                                let at = iy as usize * wd + ix as usize;
                                dker[ky * k + kx] += gv * src[at];
                                if let Some(d) = dsrc.as_deref_mut() {
                                    d[at] += gv * ker[ky * k + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Max pooling with stride 1 and "same" padding. Returns the pooled tensor and
/// the flat argmax offset for every output element.
pub fn maxpool_same_forward(x: &Tensor, kernel: usize) -> (Tensor, Vec<u32>) {
    let [n, c, h, w] = x.shape();
    let r = (kernel / 2) as isize;
    let mut out = Tensor::zeros(x.shape());
    let mut arg = vec![0u32; x.len()];
    for plane in 0..n * c {
        let base = plane * h * w;
        let src = &x.data()[base..base + h * w];
        for y in 0..h as isize {
            for xx in 0..w as isize {
                let mut best = f64::NEG_INFINITY;
                let mut best_at = 0usize;
                for yy in (y - r).max(0)..(y + r + 1).min(h as isize) {
                    for xi in (xx - r).max(0)..(xx + r + 1).min(w as isize) {
                        let at = yy as usize * w + xi as usize;
                        if src[at] > best {
                            best = src[at];
                            best_at = at;
                        }
                    }
                }
                let o = base + y as usize * w + xx as usize;
                out.data_mut()[o] = best;
                arg[o] = (base + best_at) as u32;
            }
        }
    }
    (out, arg)
}

/// Nearest-neighbor resampling with source index `floor(dst · in / out)`.
pub fn nearest_index(dst: usize, in_size: usize, out_size: usize) -> usize {
    ((dst * in_size) / out_size).min(in_size - 1)
}

pub fn nearest_forward(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let [n, c, h, w] = x.shape();
    let mut out = Tensor::zeros([n, c, out_h, out_w]);
    let cols: Vec<usize> = (0..out_w).map(|ox| nearest_index(ox, w, out_w)).collect();
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..][..h * w];
        let dst = &mut out.data_mut()[plane * out_h * out_w..][..out_h * out_w];
        for oy in 0..out_h {
            let iy = nearest_index(oy, h, out_h);
            for ox in 0..out_w {
                dst[oy * out_w + ox] = src[iy * w + cols[ox]];
            }
        }
    }
    out
}

pub fn nearest_backward(dy: &Tensor, in_shape: [usize; 4]) -> Tensor {
    let [n, c, h, w] = in_shape;
    let (out_h, out_w) = (dy.height(), dy.width());
    let mut dx = Tensor::zeros(in_shape);
    for plane in 0..n * c {
        let src = &dy.data()[plane * out_h * out_w..][..out_h * out_w];
        let dst = &mut dx.data_mut()[plane * h * w..][..h * w];
        for oy in 0..out_h {
            let iy = nearest_index(oy, h, out_h);
            for ox in 0..out_w {
                dst[iy * w + nearest_index(ox, w, out_w)] += src[oy * out_w + ox];
            }
        }
    }
    dx
}

/// Half-pixel-centred bilinear sample positions: `(i0, i1, frac)` per output index.
pub fn bilinear_taps(in_size: usize, out_size: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_size as f64 / out_size as f64;
    (0..out_size)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_size - 1);
            let i1 = (i0 + 1).min(in_size - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn bilinear_forward(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let [n, c, h, w] = x.shape();
    let ty = bilinear_taps(h, out_h);
    let tx = bilinear_taps(w, out_w);
    let mut out = Tensor::zeros([n, c, out_h, out_w]);
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..][..h * w];
        let dst = &mut out.data_mut()[plane * out_h * out_w..][..out_h * out_w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                dst[oy * out_w + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

pub fn bilinear_backward(dy: &Tensor, in_shape: [usize; 4]) -> Tensor {
    let [n, c, h, w] = in_shape;
    let (out_h, out_w) = (dy.height(), dy.width());
    let ty = bilinear_taps(h, out_h);
    let tx = bilinear_taps(w, out_w);
    let mut dx = Tensor::zeros(in_shape);
    for plane in 0..n * c {
        let src = &dy.data()[plane * out_h * out_w..][..out_h * out_w];
        let dst = &mut dx.data_mut()[plane * h * w..][..h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let g = src[oy * out_w + ox];
                dst[y0 * w + x0] += g * (1.0 - fy) * (1.0 - fx);
                dst[y0 * w + x1] += g * (1.0 - fy) * fx;
                dst[y1 * w + x0] += g * fy * (1.0 - fx);
                dst[y1 * w + x1] += g * fy * fx;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor, w: &Tensor, b: Option<&Tensor>, g: ConvGeom) -> Tensor {
        let [n, c_in, h, wd] = x.shape();
        let c_out = w.batch();
        let (ho, wo) = g.out_size(h, wd);
        Tensor::from_fn([n, c_out, ho, wo], |[i, co, oy, ox]| {
            let mut acc = b.map_or(0.0, |b| b.data()[co]);
            for ci in 0..c_in {
                for ky in 0..g.kernel {
                    for kx in 0..g.kernel {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                            acc += w.at([co, ci, ky, kx]) * x.at([i, ci, iy as usize, ix as usize]);
                        }
                    }
                }
            }
            acc
        })
    }

    fn pseudo(shape: [usize; 4], seed: u64) -> Tensor {
        let mut s = seed;
        Tensor::from_fn(shape, |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
    }

    #[test]
    fn gemm_conv_matches_naive_loops() {
        for &(k, stride, pad) in &[(3, 1, 1), (3, 2, 1), (1, 1, 0), (5, 2, 2), (1, 2, 0)] {
            let g = ConvGeom { kernel: k, stride, pad };
            let x = pseudo([2, 3, 7, 6], 1);
            let w = pseudo([4, 3, k, k], 2);
            let b = pseudo([1, 4, 1, 1], 3);
            let fast = conv_forward(&x, &w, Some(&b), g);
            let slow = naive_conv(&x, &w, Some(&b), g);
            assert_eq!(fast.shape(), slow.shape());
            for (a, e) in fast.data().iter().zip(slow.data()) {
                assert!((a - e).abs() < 1e-12, "{k} {stride} {pad}");
            }
        }
    }

    #[test]
    fn depthwise_matches_grouped_naive() {
        let g = ConvGeom { kernel: 3, stride: 2, pad: 1 };
        let x = pseudo([2, 3, 8, 8], 4);
        let w = pseudo([3, 1, 3, 3], 5);
        let out = depthwise_forward(&x, &w, None, g);
        for ch in 0..3 {
            let mut wf = Tensor::zeros([3, 3, 3, 3]);
            for ky in 0..3 {
                for kx in 0..3 {
                    let o = wf.offset([ch, ch, ky, kx]);
                    wf.data_mut()[o] = w.at([ch, 0, ky, kx]);
                }
            }
            let full = naive_conv(&x, &wf, None, g);
            for i in 0..2 {
                for y in 0..4 {
                    for xx in 0..4 {
                        assert!((out.at([i, ch, y, xx]) - full.at([i, ch, y, xx])).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn bilinear_identity_and_constant() {
        let x = pseudo([1, 2, 4, 4], 6);
        assert_eq!(bilinear_forward(&x, 4, 4), x);
        let c = Tensor::filled([1, 1, 3, 5], 2.5);
        assert!(bilinear_forward(&c, 12, 20).data().iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn nearest_upsample_repeats() {
        let x = Tensor::from_vec([1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        assert_eq!(nearest_forward(&x, 2, 4).data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }
}
