// Raw forward/backward kernels over flat row-major buffers. Shape checks
// happen in the graph layer; everything here assumes consistent sizes.

use crate::tensor::{gemm, Mat, Scalar};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub height: usize,
    pub width: usize,
    pub k: usize,
    pub pad: usize,
}

impl ConvDims {
    fn plane(&self) -> usize {
        self.height * self.width
    }

    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }
}

/// Valid output-column range for kernel column offset `kj`.
#[inline]
fn col_range(width: usize, kj: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kj);
    let hi = (width + pad).saturating_sub(kj).min(width);
    (lo, hi.max(lo))
}

fn im2col<T: Scalar>(x: &[T], d: &ConvDims, col: &mut [T]) {
    let (h, w, k, pad) = (d.height, d.width, d.k, d.pad);
    let plane = d.plane();
    for c in 0..d.cin {
        let src = &x[c * plane..(c + 1) * plane];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut col[row * plane..(row + 1) * plane];
                let (lo, hi) = col_range(w, kj, pad);
                for oy in 0..h {
                    let out_row = &mut dst[oy * w..(oy + 1) * w];
                    let iy = oy + ki;
                    if iy < pad || iy - pad >= h {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let iy = iy - pad;
                    out_row[..lo].fill(T::zero());
                    out_row[hi..].fill(T::zero());
                    if hi > lo {
                        let ix0 = lo + kj - pad;
                        out_row[lo..hi]
                            .copy_from_slice(&src[iy * w + ix0..iy * w + ix0 + (hi - lo)]);
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(col: &[T], d: &ConvDims, dx: &mut [T]) {
    let (h, w, k, pad) = (d.height, d.width, d.k, d.pad);
    let plane = d.plane();
    for c in 0..d.cin {
        let dst = &mut dx[c * plane..(c + 1) * plane];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &col[row * plane..(row + 1) * plane];
                let (lo, hi) = col_range(w, kj, pad);
                if hi <= lo {
                    continue;
                }
                for oy in 0..h {
                    let iy = oy + ki;
                    if iy < pad || iy - pad >= h {
                        continue;
                    }
                    let iy = iy - pad;
                    let ix0 = lo + kj - pad;
                    let target = &mut dst[iy * w + ix0..iy * w + ix0 + (hi - lo)];
                    for (t, s) in target.iter_mut().zip(&src[oy * w + lo..oy * w + hi]) {
                        *t = *t + *s;
                    }
                }
            }
        }
    }
}

/// k×k convolutions run on zero-padded planes; 1×1 convolutions are plain
/// matrix products.
fn use_direct(d: &ConvDims) -> bool {
    d.k > 1
}

/// Copies each `h×w` plane of `src` into the centre of the zero-bordered
/// `(h+2p)×(w+2p)` planes of `dst`.
#[inline(always)]
fn pad_planes<T: Scalar>(src: &[T], dst: &mut [T], h: usize, w: usize, p: usize) {
    let wp = w + 2 * p;
    let padded = (h + 2 * p) * wp;
    for (s, d) in src.chunks_exact(h * w).zip(dst.chunks_exact_mut(padded)) {
        for y in 0..h {
            let at = (y + p) * wp + p;
            d[at..at + w].copy_from_slice(&s[y * w..(y + 1) * w]);
        }
    }
}

/// `oq += xp ⋆ taps` for one padded plane and one k×k kernel, with `oq` on
/// the padded row stride. Columns past `w` of each `oq` row are scratch.
#[inline(always)]
fn corr_acc<T: Scalar>(oq: &mut [T], xp: &[T], taps: &[T], h: usize, w: usize, k: usize) {
    let wp = w + k - 1;
    let len = (h - 1) * wp + w;
    let oq = &mut oq[..len];
    if k == 3 {
        let t = [
            taps[0], taps[1], taps[2], taps[3], taps[4], taps[5], taps[6], taps[7], taps[8],
        ];
        let src = |ki: usize, kj: usize| &xp[ki * wp + kj..ki * wp + kj + len];
        let (a0, a1, a2) = (src(0, 0), src(0, 1), src(0, 2));
        let (b0, b1, b2) = (src(1, 0), src(1, 1), src(1, 2));
        let (c0, c1, c2) = (src(2, 0), src(2, 1), src(2, 2));
        for i in 0..len {
            oq[i] = oq[i]
                + t[0] * a0[i]
                + t[1] * a1[i]
                + t[2] * a2[i]
                + t[3] * b0[i]
                + t[4] * b1[i]
                + t[5] * b2[i]
                + t[6] * c0[i]
                + t[7] * c1[i]
                + t[8] * c2[i];
        }
        return;
    }
    for ki in 0..k {
        for kj in 0..k {
            let tv = taps[ki * k + kj];
            let at = ki * wp + kj;
            for (o, x) in oq.iter_mut().zip(&xp[at..at + len]) {
                *o = *o + tv * *x;
            }
        }
    }
}

/// `out += oq` with `oq` on the padded row stride `wp`.
#[inline(always)]
fn add_strided<T: Scalar>(out: &mut [T], oq: &[T], w: usize, wp: usize) {
    for (y, row) in out.chunks_exact_mut(w).enumerate() {
        for (o, v) in row.iter_mut().zip(&oq[y * wp..y * wp + w]) {
            *o = *o + *v;
        }
    }
}

/// `dtaps[t] += Σ g · (xp shifted by tap t)` for one plane pair. `gq` holds
/// the output gradient on the padded row stride with zero tail columns, which
/// turns every tap into one contiguous dot product.
#[inline(always)]
fn corr_grad<T: Scalar>(dtaps: &mut [T], gq: &[T], xp: &[T], h: usize, w: usize, k: usize) {
    let wp = w + k - 1;
    let len = (h - 1) * wp + w;
    for ki in 0..k {
        for kj in 0..k {
            let at = ki * wp + kj;
            let mut acc = [T::zero(); 8];
            dot_acc(&mut acc, &gq[..len], &xp[at..at + len]);
            let t = ki * k + kj;
            dtaps[t] = dtaps[t] + acc.iter().fold(T::zero(), |s, v| s + *v);
        }
    }
}

/// Dot product with eight independent partial sums (vectorizable).
#[inline(always)]
fn dot_acc<T: Scalar>(acc: &mut [T; 8], a: &[T], b: &[T]) {
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    for (l, (x, y)) in ra.iter().zip(rb).enumerate() {
        acc[l] = acc[l] + *x * *y;
    }
}

#[inline(always)]
fn direct_forward_impl<T: Scalar>(x: &[T], w: &[T], out: &mut [T], d: &ConvDims) {
    let (h, wd, k, p) = (d.height, d.width, d.k, d.pad);
    let (plane, kk) = (d.plane(), k * k);
    let padded = (h + 2 * p) * (wd + 2 * p);
    let wp = wd + 2 * p;
    let mut xp = vec![T::zero(); d.cin * padded];
    let mut oq = vec![T::zero(); h * wp];
    for bi in 0..d.batch {
        pad_planes(
            &x[bi * d.cin * plane..(bi + 1) * d.cin * plane],
            &mut xp,
            h,
            wd,
            p,
        );
        for co in 0..d.cout {
            oq.fill(T::zero());
            for ci in 0..d.cin {
                let taps = &w[(co * d.cin + ci) * kk..(co * d.cin + ci + 1) * kk];
                corr_acc(&mut oq, &xp[ci * padded..(ci + 1) * padded], taps, h, wd, k);
            }
            add_strided(
                &mut out[(bi * d.cout + co) * plane..(bi * d.cout + co + 1) * plane],
                &oq,
                wd,
                wp,
            );
        }
    }
}

#[inline(always)]
fn direct_backward_impl<T: Scalar>(
    x: &[T],
    w: &[T],
    gout: &[T],
    d: &ConvDims,
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let (h, wd, k, p) = (d.height, d.width, d.k, d.pad);
    let (plane, kk) = (d.plane(), k * k);
    let padded = (h + 2 * p) * (wd + 2 * p);
    let wp = wd + 2 * p;
    let mut xp = vec![T::zero(); if dw.is_some() { d.cin * padded } else { 0 }];
    let mut gq = vec![T::zero(); if dw.is_some() { h * wp } else { 0 }];
    let mut oq = vec![T::zero(); if dx.is_some() { h * wp } else { 0 }];
    let mut gp = vec![T::zero(); if dx.is_some() { d.cout * padded } else { 0 }];
    let mut flipped = vec![T::zero(); kk];
    for bi in 0..d.batch {
        let gb = &gout[bi * d.cout * plane..(bi + 1) * d.cout * plane];
        if let Some(dw) = dw.as_deref_mut() {
            pad_planes(
                &x[bi * d.cin * plane..(bi + 1) * d.cin * plane],
                &mut xp,
                h,
                wd,
                p,
            );
            for co in 0..d.cout {
                for (y, row) in gb[co * plane..(co + 1) * plane]
                    .chunks_exact(wd)
                    .enumerate()
                {
                    gq[y * wp..y * wp + wd].copy_from_slice(row);
                }
                for ci in 0..d.cin {
                    let wi = (co * d.cin + ci) * kk;
                    corr_grad(
                        &mut dw[wi..wi + kk],
                        &gq,
                        &xp[ci * padded..(ci + 1) * padded],
                        h,
                        wd,
                        k,
                    );
                }
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            // The input gradient is the padded output gradient correlated
            // with the spatially flipped kernel.
            pad_planes(gb, &mut gp, h, wd, p);
            for ci in 0..d.cin {
                oq.fill(T::zero());
                for co in 0..d.cout {
                    let wi = (co * d.cin + ci) * kk;
                    for (f, v) in flipped.iter_mut().zip(w[wi..wi + kk].iter().rev()) {
                        *f = *v;
                    }
                    corr_acc(
                        &mut oq,
                        &gp[co * padded..(co + 1) * padded],
                        &flipped,
                        h,
                        wd,
                        k,
                    );
                }
                add_strided(
                    &mut dx[(bi * d.cin + ci) * plane..(bi * d.cin + ci + 1) * plane],
                    &oq,
                    wd,
                    wp,
                );
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn direct_forward_avx2<T: Scalar>(x: &[T], w: &[T], out: &mut [T], d: &ConvDims) {
    direct_forward_impl(x, w, out, d)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn direct_backward_avx2<T: Scalar>(
    x: &[T],
    w: &[T],
    gout: &[T],
    d: &ConvDims,
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
) {
    direct_backward_impl(x, w, gout, d, dx, dw)
}

// The AVX2 builds only widen the vectors; every element sees the same
// operations in the same order, so results do not depend on the CPU.
fn direct_forward<T: Scalar>(x: &[T], w: &[T], out: &mut [T], d: &ConvDims) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2.
        return unsafe { direct_forward_avx2(x, w, out, d) };
    }
    direct_forward_impl(x, w, out, d)
}

fn direct_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    gout: &[T],
    d: &ConvDims,
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2.
        return unsafe { direct_backward_avx2(x, w, gout, d, dx, dw) };
    }
    direct_backward_impl(x, w, gout, d, dx, dw)
}

pub(crate) fn conv2d_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], d: &ConvDims) -> Vec<T> {
    let plane = d.plane();
    let mut out = vec![T::zero(); d.batch * d.cout * plane];
    for (i, row) in out.chunks_exact_mut(plane).enumerate() {
        row.fill(b[i % d.cout]);
    }
    if use_direct(d) {
        direct_forward(x, w, &mut out, d);
    } else {
        gemm_forward(x, w, &mut out, d);
    }
    out
}

fn gemm_forward<T: Scalar>(x: &[T], w: &[T], out: &mut [T], d: &ConvDims) {
    let plane = d.plane();
    let patch = d.patch();
    let mut col = if d.k == 1 {
        Vec::new()
    } else {
        vec![T::zero(); patch * plane]
    };
    for bi in 0..d.batch {
        let xb = &x[bi * d.cin * plane..(bi + 1) * d.cin * plane];
        let ob = &mut out[bi * d.cout * plane..(bi + 1) * d.cout * plane];
        let cols: &[T] = if d.k == 1 {
            xb
        } else {
            im2col(xb, d, &mut col);
            &col
        };
        gemm(
            Mat::new(w, d.cout, patch),
            Mat::new(cols, patch, plane),
            ob,
            true,
        );
    }
}

/// Accumulates input, weight and bias gradients for whichever are requested.
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    gout: &[T],
    d: &ConvDims,
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    let plane = d.plane();
    if let Some(db) = db.as_deref_mut() {
        for (i, row) in gout.chunks_exact(plane).enumerate() {
            let co = i % d.cout;
            db[co] = db[co] + row.iter().copied().sum::<T>();
        }
    }
    if use_direct(d) {
        direct_backward(x, w, gout, d, dx, dw);
    } else {
        gemm_backward(x, w, gout, d, dx, dw);
    }
}

fn gemm_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    gout: &[T],
    d: &ConvDims,
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let plane = d.plane();
    let patch = d.patch();
    let mut col = if d.k == 1 {
        Vec::new()
    } else {
        vec![T::zero(); patch * plane]
    };
    let mut dcol = vec![T::zero(); if dx.is_some() { patch * plane } else { 0 }];
    for bi in 0..d.batch {
        let xb = &x[bi * d.cin * plane..(bi + 1) * d.cin * plane];
        let gb = &gout[bi * d.cout * plane..(bi + 1) * d.cout * plane];
        if let Some(dw) = dw.as_deref_mut() {
            let cols: &[T] = if d.k == 1 {
                xb
            } else {
                im2col(xb, d, &mut col);
                &col
            };
            gemm(
                Mat::new(gb, d.cout, plane),
                Mat::new(cols, patch, plane).t(),
                dw,
                true,
            );
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxb = &mut dx[bi * d.cin * plane..(bi + 1) * d.cin * plane];
            if d.k == 1 {
                gemm(
                    Mat::new(w, d.cout, patch).t(),
                    Mat::new(gb, d.cout, plane),
                    dxb,
                    true,
                );
            } else {
                gemm(
                    Mat::new(w, d.cout, patch).t(),
                    Mat::new(gb, d.cout, plane),
                    &mut dcol,
                    false,
                );
                col2im_add(&dcol, d, dxb);
            }
        }
    }
}

/// 2×2 max pooling; returns output and the flat input index of each max
/// (first in row-major order on ties).
pub(crate) fn maxpool2_forward<T: Scalar>(x: &[T], dims: [usize; 4]) -> (Vec<T>, Vec<u32>) {
    let [b, c, h, w] = dims;
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut arg = Vec::with_capacity(out.capacity());
    for bc in 0..b * c {
        let base = bc * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_i = base + 2 * oy * w + 2 * ox;
                let mut best = x[best_i];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[i] > best {
                        best = x[i];
                        best_i = i;
                    }
                }
                out.push(best);
                arg.push(best_i as u32);
            }
        }
    }
    (out, arg)
}

pub(crate) fn upsample2_forward<T: Scalar>(x: &[T], dims: [usize; 4]) -> Vec<T> {
    let [b, c, h, w] = dims;
    let ow = 2 * w;
    let mut out = vec![T::zero(); b * c * 4 * h * w];
    for bc in 0..b * c {
        let src = &x[bc * h * w..(bc + 1) * h * w];
        let dst = &mut out[bc * 4 * h * w..(bc + 1) * 4 * h * w];
        for y in 0..h {
            let row = &mut dst[2 * y * ow..(2 * y + 1) * ow];
            for (xi, v) in src[y * w..(y + 1) * w].iter().enumerate() {
                row[2 * xi] = *v;
                row[2 * xi + 1] = *v;
            }
            let (upper, lower) = dst.split_at_mut((2 * y + 1) * ow);
            lower[..ow].copy_from_slice(&upper[2 * y * ow..]);
        }
    }
    out
}

pub(crate) fn upsample2_backward<T: Scalar>(g: &[T], dims: [usize; 4], dx: &mut [T]) {
    let [b, c, h, w] = dims;
    let ow = 2 * w;
    for bc in 0..b * c {
        let src = &g[bc * 4 * h * w..(bc + 1) * 4 * h * w];
        let dst = &mut dx[bc * h * w..(bc + 1) * h * w];
        for y in 0..h {
            for xi in 0..w {
                let top = 2 * y * ow + 2 * xi;
                let bottom = top + ow;
                let s = src[top] + src[top + 1] + src[bottom] + src[bottom + 1];
                dst[y * w + xi] = dst[y * w + xi] + s;
            }
        }
    }
}

/// Logistic function saturating at the representable values nearest 0 and
/// 1, so the output stays strictly inside the open unit interval.
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    let y = if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    };
    y.max(T::min_positive_value())
        .min(T::one() - T::epsilon() / T::lit(2.0))
}

/// Mean per-pixel softmax cross-entropy; returns (loss, softmax probs).
pub(crate) fn softmax_ce_forward<T: Scalar>(
    logits: &[T],
    dims: [usize; 4],
    target: &[u8],
) -> (T, Vec<T>) {
    let [b, c, h, w] = dims;
    let plane = h * w;
    let mut probs = vec![T::zero(); logits.len()];
    let mut total = 0.0f64;
    for bi in 0..b {
        let base = bi * c * plane;
        for p in 0..plane {
            let mut m = T::neg_infinity();
            for ci in 0..c {
                m = m.max(logits[base + ci * plane + p]);
            }
            let mut z = T::zero();
            for ci in 0..c {
                let e = (logits[base + ci * plane + p] - m).exp();
                probs[base + ci * plane + p] = e;
                z = z + e;
            }
            for ci in 0..c {
                let i = base + ci * plane + p;
                probs[i] = probs[i] / z;
            }
            let t = target[bi * plane + p] as usize;
            let lse = m + z.ln();
            total += (lse - logits[base + t * plane + p]).as_f64();
        }
    }
    (T::lit(total / (b * plane) as f64), probs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_matches_gemm_path() {
        let mut state = 12345u64;
        let mut rnd = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for (batch, cin, cout, h, w, k) in [
            (2, 3, 2, 5, 7, 3),
            (1, 1, 4, 4, 4, 3),
            (2, 2, 3, 6, 3, 5),
            (1, 2, 2, 1, 1, 3),
            (1, 3, 3, 9, 37, 3),
            (2, 4, 1, 2, 17, 5),
        ] {
            let d = ConvDims {
                batch,
                cin,
                cout,
                height: h,
                width: w,
                k,
                pad: (k - 1) / 2,
            };
            let x: Vec<f64> = (0..batch * cin * h * w).map(|_| rnd()).collect();
            let wt: Vec<f64> = (0..cout * cin * k * k).map(|_| rnd()).collect();
            let g: Vec<f64> = (0..batch * cout * h * w).map(|_| rnd()).collect();
            let mut a = vec![0.0; g.len()];
            let mut b = vec![0.0; g.len()];
            direct_forward(&x, &wt, &mut a, &d);
            gemm_forward(&x, &wt, &mut b, &d);
            let close = |p: &[f64], q: &[f64]| p.iter().zip(q).all(|(u, v)| (u - v).abs() < 1e-12);
            assert!(close(&a, &b));
            let (mut dx1, mut dw1) = (vec![0.0; x.len()], vec![0.0; wt.len()]);
            let (mut dx2, mut dw2) = (vec![0.0; x.len()], vec![0.0; wt.len()]);
            direct_backward(&x, &wt, &g, &d, Some(&mut dx1), Some(&mut dw1));
            gemm_backward(&x, &wt, &g, &d, Some(&mut dx2), Some(&mut dw2));
            assert!(close(&dx1, &dx2) && close(&dw1, &dw2));
        }
    }

    #[test]
    fn im2col_identity_for_1x1() {
        let d = ConvDims {
            batch: 1,
            cin: 2,
            cout: 1,
            height: 2,
            width: 3,
            k: 1,
            pad: 0,
        };
        let x: Vec<f64> = (0..12).map(f64::from).collect();
        let mut col = vec![0.0; 12];
        im2col(&x, &d, &mut col);
        assert_eq!(col, x);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let d = ConvDims {
            batch: 1,
            cin: 2,
            cout: 1,
            height: 4,
            width: 5,
            k: 3,
            pad: 1,
        };
        let x: Vec<f64> = (0..40).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let y: Vec<f64> = (0..18 * 20).map(|i| ((i * 5) % 13) as f64 - 6.0).collect();
        let mut col = vec![0.0; 18 * 20];
        im2col(&x, &d, &mut col);
        let lhs: f64 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; 40];
        col2im_add(&y, &d, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(1000.0f64), 1.0 - f64::EPSILON / 2.0);
        assert_eq!(sigmoid(-1000.0f64), f64::MIN_POSITIVE);
        assert_eq!(sigmoid(0.0f32), 0.5);
        for v in [17.0f32, 40.0, 1e4, -90.0, -1e4] {
            let y = sigmoid(v);
            assert!(y > 0.0 && y < 1.0, "{v} -> {y}");
        }
    }
}
