//! Dense kernels with hand-written backward passes. Matrices are row-major
//! slices; GEMM goes through `matrixmultiply` with explicit strides so that
//! transposed operands never need to be materialized.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Floating-point element type of the network (f32 for training, f64 for
/// gradient verification).
pub trait Real:
    Copy
    + Debug
    + Default
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            #[inline]
            fn from_f64(x: f64) -> Self {
                x as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn tanh(self) -> Self {
                <$t>::tanh(self)
            }
            #[inline]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
                    if rows == 0 || cols == 0 {
                        0
                    } else {
                        ((rows - 1) as isize * rs + (cols - 1) as isize * cs) as usize + 1
                    }
                };
                assert!(a.len() >= span(m, k, rsa, csa), "gemm: A too short");
                assert!(b.len() >= span(k, n, rsb, csb), "gemm: B too short");
                assert!(c.len() >= span(m, n, rsc, csc), "gemm: C too short");
                // SAFETY: bounds of all three operands checked above, strides
                // are non-negative and C does not alias A or B (distinct borrows).
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    )
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// `C (m x n) (+)= A (m x k) · B (k x n)`, all contiguous row-major.
pub fn matmul<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize, accumulate: bool) {
    let beta = if accumulate { T::ONE } else { T::ZERO };
    T::gemm(m, k, n, T::ONE, a, k as isize, 1, b, n as isize, 1, beta, c, n as isize, 1);
}

/// `C (m x n) (+)= A (m x k) · Bᵀ` with `B` stored as (n x k).
pub fn matmul_nt<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize, accumulate: bool) {
    let beta = if accumulate { T::ONE } else { T::ZERO };
    T::gemm(m, k, n, T::ONE, a, k as isize, 1, b, 1, k as isize, beta, c, n as isize, 1);
}

/// `C (m x n) (+)= Aᵀ · B` with `A` stored as (k x m) and `B` as (k x n).
pub fn matmul_tn<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize, accumulate: bool) {
    let beta = if accumulate { T::ONE } else { T::ZERO };
    T::gemm(m, k, n, T::ONE, a, 1, m as isize, b, n as isize, 1, beta, c, n as isize, 1);
}

/// `y = x W + b` for `rows` input rows.
pub fn linear<T: Real>(x: &[T], w: &[T], b: &[T], y: &mut [T], rows: usize, d_in: usize, d_out: usize) {
    for r in 0..rows {
        y[r * d_out..(r + 1) * d_out].copy_from_slice(b);
    }
    matmul(x, w, y, rows, d_in, d_out, true);
}

/// Backward of [`linear`]: accumulates `dW`, `db`, and writes or accumulates `dx`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Real>(
    x: &[T],
    w: &[T],
    dy: &[T],
    dx: Option<&mut [T]>,
    dw: &mut [T],
    db: &mut [T],
    rows: usize,
    d_in: usize,
    d_out: usize,
) {
    matmul_tn(x, dy, dw, d_in, rows, d_out, true);
    for r in 0..rows {
        for (g, &v) in db.iter_mut().zip(&dy[r * d_out..(r + 1) * d_out]) {
            *g += v;
        }
    }
    if let Some(dx) = dx {
        matmul_nt(dy, w, dx, rows, d_out, d_in, false);
    }
}

pub const LN_EPS: f64 = 1e-5;

/// Row-wise layer norm. Stores normalized rows and reciprocal std for backward.
pub fn layer_norm<T: Real>(x: &[T], gamma: &[T], beta: &[T], y: &mut [T], xhat: &mut [T], rstd: &mut [T], d: usize) {
    let n = T::from_f64(d as f64);
    let eps = T::from_f64(LN_EPS);
    for (r, row) in x.chunks_exact(d).enumerate() {
        let mut mean = T::ZERO;
        for &v in row {
            mean += v;
        }
        mean = mean / n;
        let mut var = T::ZERO;
        for &v in row {
            let c = v - mean;
            var += c * c;
        }
        let rs = T::ONE / (var / n + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            y[r * d + j] = h * gamma[j] + beta[j];
        }
    }
}

/// Backward of [`layer_norm`]; accumulates into `dx`, `dgamma`, `dbeta`.
#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward<T: Real>(
    dy: &[T],
    xhat: &[T],
    rstd: &[T],
    gamma: &[T],
    dx: &mut [T],
    dgamma: &mut [T],
    dbeta: &mut [T],
    d: usize,
) {
    let n = T::from_f64(d as f64);
    for (r, dyr) in dy.chunks_exact(d).enumerate() {
        let xh = &xhat[r * d..(r + 1) * d];
        let mut mean_g = T::ZERO;
        let mut mean_gx = T::ZERO;
        for j in 0..d {
            let g = dyr[j] * gamma[j];
            mean_g += g;
            mean_gx += g * xh[j];
            dgamma[j] += dyr[j] * xh[j];
            dbeta[j] += dyr[j];
        }
        mean_g = mean_g / n;
        mean_gx = mean_gx / n;
        let rs = rstd[r];
        let dxr = &mut dx[r * d..(r + 1) * d];
        for j in 0..d {
            let g = dyr[j] * gamma[j];
            dxr[j] += rs * (g - mean_g - xh[j] * mean_gx);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    half * x * (T::ONE + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::ONE + t) + half * x * (T::ONE - t * t) * c * (T::ONE + three * a * x * x)
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

/// In-place row softmax over `cols` columns.
pub fn softmax_rows<T: Real>(x: &mut [T], cols: usize) {
    for row in x.chunks_exact_mut(cols) {
        let mut m = row[0];
        for &v in row.iter() {
            if v > m {
                m = v;
            }
        }
        let mut s = T::ZERO;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        let inv = T::ONE / s;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

/// Softmax backward in place: `dp` becomes `ds = p ⊙ (dp − rowsum(dp ⊙ p))`.
pub fn softmax_backward_rows<T: Real>(p: &[T], dp: &mut [T], cols: usize) {
    for (pr, dr) in p.chunks_exact(cols).zip(dp.chunks_exact_mut(cols)) {
        let mut dot = T::ZERO;
        for j in 0..cols {
            dot += pr[j] * dr[j];
        }
        for j in 0..cols {
            dr[j] = pr[j] * (dr[j] - dot);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize) -> f64 {
        let h = 1e-6;
        let mut xp = x.to_vec();
        xp[i] += h;
        let mut xm = x.to_vec();
        xm[i] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    }

    #[test]
    fn matmul_variants_agree_with_naive() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut naive = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    naive[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        let mut c = vec![0.0; m * n];
        matmul(&a, &b, &mut c, m, k, n, false);
        let bt: Vec<f64> = (0..n * k).map(|idx| b[(idx % k) * n + idx / k]).collect();
        let mut c2 = vec![0.0; m * n];
        matmul_nt(&a, &bt, &mut c2, m, k, n, false);
        let at: Vec<f64> = (0..k * m).map(|idx| a[(idx % m) * k + idx / m]).collect();
        let mut c3 = vec![0.0; m * n];
        matmul_tn(&at, &b, &mut c3, m, k, n, false);
        for i in 0..m * n {
            assert!((c[i] - naive[i]).abs() < 1e-12);
            assert!((c2[i] - naive[i]).abs() < 1e-12);
            assert!((c3[i] - naive[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn gelu_derivative_matches_fd() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let fd = finite_diff(|v| gelu(v[0]), &[x], 0);
            assert!((gelu_grad(x) - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn layer_norm_backward_matches_fd() {
        let d = 6;
        let x: Vec<f64> = (0..2 * d).map(|i| (i as f64 * 1.3).sin() * 2.0).collect();
        let gamma: Vec<f64> = (0..d).map(|i| 0.5 + i as f64 * 0.1).collect();
        let beta: Vec<f64> = (0..d).map(|i| i as f64 * -0.05).collect();
        let w: Vec<f64> = (0..2 * d).map(|i| (i as f64 * 0.7).cos()).collect();
        let loss = |x: &[f64]| {
            let (mut y, mut xh, mut rs) = (vec![0.0; 2 * d], vec![0.0; 2 * d], vec![0.0; 2]);
            layer_norm(x, &gamma, &beta, &mut y, &mut xh, &mut rs, d);
            y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        let (mut y, mut xh, mut rs) = (vec![0.0; 2 * d], vec![0.0; 2 * d], vec![0.0; 2]);
        layer_norm(&x, &gamma, &beta, &mut y, &mut xh, &mut rs, d);
        let (mut dx, mut dg, mut db) = (vec![0.0; 2 * d], vec![0.0; d], vec![0.0; d]);
        layer_norm_backward(&w, &xh, &rs, &gamma, &mut dx, &mut dg, &mut db, d);
        for i in 0..2 * d {
            assert!((dx[i] - finite_diff(loss, &x, i)).abs() < 1e-7, "dx[{i}]");
        }
    }

    #[test]
    fn softmax_backward_matches_fd() {
        let x = vec![0.3, -1.2, 2.0, 0.5];
        let w = vec![1.0, -2.0, 0.5, 3.0];
        let loss = |x: &[f64]| {
            let mut p = x.to_vec();
            softmax_rows(&mut p, 4);
            p.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut p = x.clone();
        softmax_rows(&mut p, 4);
        let mut d = w.clone();
        softmax_backward_rows(&p, &mut d, 4);
        for i in 0..4 {
            assert!((d[i] - finite_diff(loss, &x, i)).abs() < 1e-8);
        }
    }
}
