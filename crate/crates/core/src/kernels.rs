//! Dense kernels behind the differentiable ops. All matrices are row-major
//! and every routine accumulates into its output.

use crate::real::Real;

/// Column tile width; keeps the active output tile in L1/L2 for long rows.
const NB: usize = 256;

#[inline(always)]
fn axpy<T: Real>(c: &mut [T], a: T, b: &[T]) {
    for (cv, &bv) in c.iter_mut().zip(b) {
        *cv += a * bv;
    }
}

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn gemm_nn<T: Real>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    for j0 in (0..n).step_by(NB) {
        let j1 = (j0 + NB).min(n);
        let len = j1 - j0;
        let mut i = 0;
        // Four output rows share each loaded strip of `b`.
        while i + 4 <= m {
            let (r0, rest) = c[i * n..].split_at_mut(n);
            let (r1, rest) = rest.split_at_mut(n);
            let (r2, r3) = rest.split_at_mut(n);
            let (c0, c1, c2, c3) = (&mut r0[j0..j1], &mut r1[j0..j1], &mut r2[j0..j1], &mut r3[j0..j1]);
            for p in 0..k {
                let (a0, a1, a2, a3) = (a[i * k + p], a[(i + 1) * k + p], a[(i + 2) * k + p], a[(i + 3) * k + p]);
                let bv = &b[p * n + j0..p * n + j1];
                for j in 0..len {
                    let x = bv[j];
                    c0[j] += a0 * x;
                    c1[j] += a1 * x;
                    c2[j] += a2 * x;
                    c3[j] += a3 * x;
                }
            }
            i += 4;
        }
        for i in i..m {
            let c_row = &mut c[i * n + j0..i * n + j1];
            for p in 0..k {
                let a_ip = a[i * k + p];
                if a_ip != T::zero() {
                    axpy(c_row, a_ip, &b[p * n + j0..p * n + j1]);
                }
            }
        }
    }
}

/// `c[m×n] += aᵀ · b` with `a` stored as `k×m` and `b` as `k×n`.
pub fn gemm_tn<T: Real>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
    for j0 in (0..n).step_by(NB) {
        let j1 = (j0 + NB).min(n);
        for p in 0..k {
            let b_row = &b[p * n + j0..p * n + j1];
            for i in 0..m {
                let a_pi = a[p * m + i];
                if a_pi != T::zero() {
                    axpy(&mut c[i * n + j0..i * n + j1], a_pi, b_row);
                }
            }
        }
    }
}

/// Dot product with eight independent partial sums so it vectorizes.
#[inline(always)]
fn dot<T: Real>(x: &[T], y: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (xc, yc) = (x.chunks_exact(8), y.chunks_exact(8));
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (u, v) in xc.zip(yc) {
        for l in 0..8 {
            acc[l] += u[l] * v[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (&u, &v) in xr.iter().zip(yr) {
        s += u * v;
    }
    s
}

/// `c[m×n] += a · bᵀ` with `a` stored as `m×k` and `b` as `n×k`.
pub fn gemm_nt<T: Real>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

/// Kernel, stride and padding of a 2-D (transposed) convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvGeom {
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvGeom {
    pub fn square(k: usize, stride: usize, pad: usize) -> Self {
        ConvGeom { kh: k, kw: k, sh: stride, sw: stride, ph: pad, pw: pad }
    }

    /// Output size of a convolution, `None` when it would be non-positive.
    pub fn conv_out(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let hp = h + 2 * self.ph;
        let wp = w + 2 * self.pw;
        if hp < self.kh || wp < self.kw || self.sh == 0 || self.sw == 0 {
            return None;
        }
        Some(((hp - self.kh) / self.sh + 1, (wp - self.kw) / self.sw + 1))
    }

    /// Output size of a transposed convolution with extra trailing rows/cols `oph`/`opw`.
    pub fn transpose_out(&self, h: usize, w: usize, oph: usize, opw: usize) -> Option<(usize, usize)> {
        let full_h = (h - 1) * self.sh + self.kh + oph;
        let full_w = (w - 1) * self.sw + self.kw + opw;
        if full_h <= 2 * self.ph || full_w <= 2 * self.pw {
            return None;
        }
        Some((full_h - 2 * self.ph, full_w - 2 * self.pw))
    }
}

/// Output columns `ox` whose input column `ox·s + k − pad` lies in `0..w`.
#[inline]
fn valid_cols(wo: usize, w: usize, s: usize, k: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k).div_ceil(s);
    let hi = (w + pad).saturating_sub(k).div_ceil(s).min(wo);
    (lo.min(hi), hi)
}

/// Unfolds one `(c, h, w)` image into a `(c·kh·kw) × (ho·wo)` column matrix.
pub fn im2col<T: Real>(
    x: &[T],
    (c, h, w): (usize, usize, usize),
    g: &ConvGeom,
    (ho, wo): (usize, usize),
    cols: &mut [T],
) {
    let p = ho * wo;
    for ci in 0..c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_cols(wo, w, g.sw, kj, g.pw);
                for oy in 0..ho {
                    let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                    let dst_row = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst_row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &x[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    dst_row[..lo].iter_mut().for_each(|v| *v = T::zero());
                    dst_row[hi..].iter_mut().for_each(|v| *v = T::zero());
                    let start = lo * g.sw + kj - g.pw;
                    if g.sw == 1 {
                        dst_row[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (d, &v) in dst_row[lo..hi].iter_mut().zip(src[start..].iter().step_by(g.sw)) {
                            *d = v;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `x`.
pub fn col2im<T: Real>(
    cols: &[T],
    (c, h, w): (usize, usize, usize),
    g: &ConvGeom,
    (ho, wo): (usize, usize),
    x: &mut [T],
) {
    let p = ho * wo;
    for ci in 0..c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = valid_cols(wo, w, g.sw, kj, g.pw);
                if lo >= hi {
                    continue;
                }
                let start = lo * g.sw + kj - g.pw;
                for oy in 0..ho {
                    let iy = (oy * g.sh + ki) as isize - g.ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut x[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    let s_row = &src[oy * wo + lo..oy * wo + hi];
                    if g.sw == 1 {
                        for (d, &v) in dst[start..start + hi - lo].iter_mut().zip(s_row) {
                            *d += v;
                        }
                    } else {
                        for (d, &v) in dst[start..].iter_mut().step_by(g.sw).zip(s_row) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}
