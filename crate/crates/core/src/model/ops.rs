//! Dense row-major kernels used by the forward and backward passes.
//!
//! Every kernel computes each output row from the matching input row only,
//! with a fixed summation order, so results at one position never depend on
//! the contents of other positions.

use super::Scalar;

#[inline]
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = F::zero();
    for (&x, &y) in ta.iter().zip(tb) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<F: Scalar>(alpha: F, x: &[F], y: &mut [F]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[n×m] += a[n×k] · b[k×m]`
pub fn matmul_acc<F: Scalar>(a: &[F], b: &[F], out: &mut [F], n: usize, k: usize, m: usize) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(out.len(), n * m);
    for (arow, orow) in a.chunks_exact(k).zip(out.chunks_exact_mut(m)) {
        for (&aik, brow) in arow.iter().zip(b.chunks_exact(m)) {
            axpy(aik, brow, orow);
        }
    }
}

/// `out[n×k] += a[n×m] · b[k×m]ᵀ`
pub fn matmul_bt_acc<F: Scalar>(a: &[F], b: &[F], out: &mut [F], n: usize, m: usize, k: usize) {
    debug_assert_eq!(a.len(), n * m);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(out.len(), n * k);
    for (arow, orow) in a.chunks_exact(m).zip(out.chunks_exact_mut(k)) {
        for (o, brow) in orow.iter_mut().zip(b.chunks_exact(m)) {
            *o += dot(arow, brow);
        }
    }
}

/// `out[k×m] += a[n×k]ᵀ · b[n×m]`
pub fn matmul_at_acc<F: Scalar>(a: &[F], b: &[F], out: &mut [F], n: usize, k: usize, m: usize) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), n * m);
    debug_assert_eq!(out.len(), k * m);
    for (arow, brow) in a.chunks_exact(k).zip(b.chunks_exact(m)) {
        for (&aik, orow) in arow.iter().zip(out.chunks_exact_mut(m)) {
            axpy(aik, brow, orow);
        }
    }
}

pub const RMS_EPS: f64 = 1e-5;

/// Row-wise RMS normalization with a learned gain. Returns `1/rms` per row.
pub fn rmsnorm<F: Scalar>(x: &[F], gain: &[F], out: &mut [F], d: usize) -> Vec<F> {
    let eps = F::from_f64(RMS_EPS).unwrap();
    let inv_d = F::one() / F::from_usize(d).unwrap();
    x.chunks_exact(d)
        .zip(out.chunks_exact_mut(d))
        .map(|(xr, or)| {
            let r = F::one() / (dot(xr, xr) * inv_d + eps).sqrt();
            for ((o, &xi), &g) in or.iter_mut().zip(xr).zip(gain) {
                *o = xi * r * g;
            }
            r
        })
        .collect()
}

/// Backward of [`rmsnorm`]: accumulates into `dx` and `dgain`.
pub fn rmsnorm_backward<F: Scalar>(
    x: &[F],
    gain: &[F],
    inv_rms: &[F],
    dy: &[F],
    dx: &mut [F],
    dgain: &mut [F],
    d: usize,
) {
    let inv_d = F::one() / F::from_usize(d).unwrap();
    let mut gy = vec![F::zero(); d];
    for (((xr, &r), dyr), dxr) in x
        .chunks_exact(d)
        .zip(inv_rms)
        .zip(dy.chunks_exact(d))
        .zip(dx.chunks_exact_mut(d))
    {
        for i in 0..d {
            gy[i] = gain[i] * dyr[i];
            dgain[i] += dyr[i] * xr[i] * r;
        }
        let coef = r * r * r * dot(&gy, xr) * inv_d;
        for i in 0..d {
            dxr[i] += r * gy[i] - coef * xr[i];
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Tanh approximation of GELU.
#[inline]
pub fn gelu<F: Scalar>(u: F) -> F {
    let c = F::from_f64(GELU_C).unwrap();
    let a = F::from_f64(GELU_A).unwrap();
    let half = F::from_f64(0.5).unwrap();
    half * u * (F::one() + (c * (u + a * u * u * u)).tanh())
}

#[inline]
pub fn gelu_grad<F: Scalar>(u: F) -> F {
    let c = F::from_f64(GELU_C).unwrap();
    let a = F::from_f64(GELU_A).unwrap();
    let half = F::from_f64(0.5).unwrap();
    let three = F::from_f64(3.0).unwrap();
    let t = (c * (u + a * u * u * u)).tanh();
    half * (F::one() + t) + half * u * (F::one() - t * t) * c * (F::one() + three * a * u * u)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                for t in 0..k {
                    out[i * m + j] += a[i * k + t] * b[t * m + j];
                }
            }
        }
        out
    }

    fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = a[i * c + j];
            }
        }
        t
    }

    fn fill(n: usize, seed: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + seed) * 0.731).sin()).collect()
    }

    #[test]
    fn matmul_variants_agree_with_naive() {
        let (n, k, m) = (5, 11, 7);
        let a = fill(n * k, 0.1);
        let b = fill(k * m, 0.7);
        let want = naive(&a, &b, n, k, m);

        let mut out = vec![0.0; n * m];
        matmul_acc(&a, &b, &mut out, n, k, m);
        for (x, y) in out.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        let bt = transpose(&b, k, m);
        let mut out = vec![0.0; n * m];
        matmul_bt_acc(&a, &bt, &mut out, n, k, m);
        for (x, y) in out.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        let at = transpose(&a, n, k);
        let mut out = vec![0.0; n * m];
        matmul_at_acc(&at, &b, &mut out, k, n, m);
        for (x, y) in out.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &u in &[-3.0f64, -0.5, 0.0, 0.3, 2.0] {
            let h = 1e-5;
            let fd = (gelu(u + h) - gelu(u - h)) / (2.0 * h);
            assert!((fd - gelu_grad(u)).abs() < 1e-8, "u={u}");
        }
    }
}
