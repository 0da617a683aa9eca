//! Raw slice kernels. Every output row is produced by exactly one worker in a
//! fixed summation order, so results do not depend on the thread count.

use rayon::prelude::*;

use super::Scalar;

const PAR_THRESHOLD: usize = 1 << 16;

/// `C[m×n] = A[m×k] · B[k×n]`.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    if n == 0 {
        return c;
    }
    let row = |(i, out): (usize, &mut [T])| {
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        c.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        c.chunks_mut(n).enumerate().for_each(row);
    }
    c
}

/// `D[m×k] = G[m×n] · Bᵀ` where `B` is `k×n`.
pub fn matmul_nt<T: Scalar>(g: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut d = vec![T::zero(); m * k];
    if k == 0 {
        return d;
    }
    let row = |(i, out): (usize, &mut [T])| {
        let g_row = &g[i * n..(i + 1) * n];
        for (p, o) in out.iter_mut().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&gv, &bv) in g_row.iter().zip(b_row) {
                acc += gv * bv;
            }
            *o = acc;
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        d.par_chunks_mut(k).enumerate().for_each(row);
    } else {
        d.chunks_mut(k).enumerate().for_each(row);
    }
    d
}

/// `D[k×n] = Aᵀ · G` where `A` is `m×k` and `G` is `m×n`.
pub fn matmul_tn<T: Scalar>(a: &[T], g: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut d = vec![T::zero(); k * n];
    if n == 0 {
        return d;
    }
    let row = |(p, out): (usize, &mut [T])| {
        for i in 0..m {
            let aip = a[i * k + p];
            let g_row = &g[i * n..(i + 1) * n];
            for (o, &gv) in out.iter_mut().zip(g_row) {
                *o += aip * gv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        d.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        d.chunks_mut(n).enumerate().for_each(row);
    }
    d
}

/// Geometry of a same-padded depthwise convolution over an `h×w×c` grid
/// with a `k×k×c` kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub k: usize,
}

impl ConvGeom {
    fn taps(&self) -> impl Iterator<Item = (usize, usize, isize, isize)> + '_ {
        let pad = (self.k / 2) as isize;
        (0..self.k).flat_map(move |di| (0..self.k).map(move |dj| (di, dj, di as isize - pad, dj as isize - pad)))
    }

    fn src(&self, i: usize, j: usize, oi: isize, oj: isize) -> Option<usize> {
        let si = i as isize + oi;
        let sj = j as isize + oj;
        if si < 0 || sj < 0 || si >= self.h as isize || sj >= self.w as isize {
            None
        } else {
            Some(si as usize * self.w + sj as usize)
        }
    }
}

pub fn depthwise_conv<T: Scalar>(x: &[T], kern: &[T], g: ConvGeom) -> Vec<T> {
    let ConvGeom { h, w, c, k } = g;
    let mut out = vec![T::zero(); h * w * c];
    out.par_chunks_mut(w * c).enumerate().for_each(|(i, out_row)| {
        for j in 0..w {
            let o = &mut out_row[j * c..(j + 1) * c];
            for (di, dj, oi, oj) in g.taps() {
                if let Some(s) = g.src(i, j, oi, oj) {
                    let xs = &x[s * c..(s + 1) * c];
                    let ks = &kern[(di * k + dj) * c..(di * k + dj + 1) * c];
                    for ((ov, &xv), &kv) in o.iter_mut().zip(xs).zip(ks) {
                        *ov += xv * kv;
                    }
                }
            }
        }
    });
    out
}

/// Returns `(dx, dkernel)` for an upstream gradient `dy`.
pub fn depthwise_conv_backward<T: Scalar>(x: &[T], kern: &[T], dy: &[T], g: ConvGeom) -> (Vec<T>, Vec<T>) {
    let ConvGeom { h, w, c, k } = g;
    let mut dx = vec![T::zero(); h * w * c];
    let mut dk = vec![T::zero(); k * k * c];
    for i in 0..h {
        for j in 0..w {
            let d = &dy[(i * w + j) * c..(i * w + j + 1) * c];
            for (di, dj, oi, oj) in g.taps() {
                if let Some(s) = g.src(i, j, oi, oj) {
                    let kb = (di * k + dj) * c;
                    for ch in 0..c {
                        dx[s * c + ch] += d[ch] * kern[kb + ch];
                        dk[kb + ch] += d[ch] * x[s * c + ch];
                    }
                }
            }
        }
    }
    (dx, dk)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let g: Vec<f64> = (0..m * n).map(|i| (i as f64 * 0.7).sin()).collect();
        let bt: Vec<f64> = (0..n * k).map(|idx| b[(idx % k) * n + idx / k]).collect();
        let at: Vec<f64> = (0..k * m).map(|idx| a[(idx % m) * k + idx / m]).collect();
        let nt = matmul_nt(&g, &b, m, k, n);
        let tn = matmul_tn(&a, &g, m, k, n);
        for (x, y) in nt.iter().zip(naive(&g, &bt, m, n, k)) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in tn.iter().zip(naive(&at, &g, k, m, n)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn parallel_path_matches_serial_bitwise() {
        let (m, k, n) = (64, 48, 40);
        let a: Vec<f32> = (0..m * k).map(|i| ((i * 7919) % 97) as f32 / 97.0 - 0.5).collect();
        let b: Vec<f32> = (0..k * n).map(|i| ((i * 104729) % 89) as f32 / 89.0 - 0.5).collect();
        let par = matmul(&a, &b, m, k, n);
        let mut serial = vec![0.0f32; m * n];
        for i in 0..m {
            for p in 0..k {
                for j in 0..n {
                    serial[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        assert_eq!(par, serial);
    }
}
