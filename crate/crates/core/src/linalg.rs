//! Small complex linear-algebra helpers on top of `ndarray`.
//!
//! Everything here operates on `Array2<Complex64>` / `Array1<Complex64>`.
//! The solvers only ever need Hermitian positive-definite systems, so a
//! hand-rolled Cholesky plus a Jacobi eigendecomposition cover all needs.

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use num_complex::Complex64;

pub type CMat = Array2<Complex64>;
pub type CVec = Array1<Complex64>;

pub const C_ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const C_ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Conjugate transpose.
pub fn herm(a: &CMat) -> CMat {
    a.t().mapv(|z| z.conj())
}

/// Squared Frobenius norm.
pub fn fro_sq(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// Frobenius norm of a vector view.
pub fn vec_norm(v: ArrayView1<Complex64>) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Real part of the Frobenius inner product `<a, b> = tr(a^H b)`.
pub fn inner_re(a: &CMat, b: &CMat) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x.conj() * y).re)
        .sum()
}

/// Horizontal concatenation `[a | b]`.
pub fn hcat(a: ArrayView2<Complex64>, b: ArrayView2<Complex64>) -> CMat {
    concatenate![Axis(1), a, b]
}

/// Cholesky factorization of a Hermitian positive-definite matrix.
/// Returns the lower factor, or `None` when a pivot drops below
/// `tol` times the largest diagonal entry.
pub fn cholesky(a: &CMat, tol: f64) -> Option<CMat> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let scale = (0..n).map(|i| a[(i, i)].re.abs()).fold(0.0f64, f64::max);
    let floor = tol * scale.max(f64::MIN_POSITIVE);
    let mut l = CMat::zeros((n, n));
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > floor) {
            return None;
        }
        let dj = d.sqrt();
        l[(j, j)] = Complex64::new(dj, 0.0);
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / dj;
        }
    }
    Some(l)
}

/// Solves `A X = B` for Hermitian positive-definite `A` via Cholesky.
pub fn cholesky_solve(a: &CMat, b: &CMat, tol: f64) -> Option<CMat> {
    let l = cholesky(a, tol)?;
    let n = a.nrows();
    let mut x = b.clone();
    // forward: L y = b
    for col in 0..x.ncols() {
        for i in 0..n {
            let mut s = x[(i, col)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, col)];
            }
            x[(i, col)] = s / l[(i, i)].re;
        }
        // backward: L^H x = y
        for i in (0..n).rev() {
            let mut s = x[(i, col)];
            for k in (i + 1)..n {
                s -= l[(k, i)].conj() * x[(k, col)];
            }
            x[(i, col)] = s / l[(i, i)].re;
        }
    }
    Some(x)
}

/// Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.
/// Returns `(eigenvalues, eigenvectors)` with `a ≈ V diag(w) V^H`;
/// eigenvalues ascending.
pub fn eigh(a: &CMat, sweeps: usize) -> (Array1<f64>, CMat) {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut m = a.clone();
    let mut v = CMat::eye(n);
    for _ in 0..sweeps {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)].norm_sqr())
            .sum();
        if off < 1e-30 * fro_sq(&m).max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.norm_sqr() < 1e-300 {
                    continue;
                }
                // Unitary 2x2 rotation zeroing m[(p,q)].
                let app = m[(p, p)].re;
                let aqq = m[(q, q)].re;
                let abs_apq = apq.norm();
                let phase = apq / abs_apq;
                let theta = 0.5 * (2.0 * abs_apq).atan2(aqq - app);
                let (s, c) = theta.sin_cos();
                let sp = phase * s;
                // rows/cols p and q: G^H M G with G = [[c, s*phase],[-s*conj(phase), c]]
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = mkp * c - mkq * sp.conj();
                    m[(k, q)] = mkp * sp + mkq * c;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = mpk * c - mqk * sp;
                    m[(q, k)] = mpk * sp.conj() + mqk * c;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * c - vkq * sp.conj();
                    v[(k, q)] = vkp * sp + vkq * c;
                }
            }
        }
    }
    let mut w: Vec<(f64, usize)> = (0..n).map(|i| (m[(i, i)].re, i)).collect();
    w.sort_by(|a, b| a.0.total_cmp(&b.0));
    let vals = Array1::from_iter(w.iter().map(|&(x, _)| x));
    let mut vecs = CMat::zeros((n, n));
    for (new, &(_, old)) in w.iter().enumerate() {
        for k in 0..n {
            vecs[(k, new)] = v[(k, old)];
        }
    }
    (vals, vecs)
}

/// Inverse principal square root of a Hermitian positive-definite matrix.
pub fn inv_sqrt_hermitian(a: &CMat, eig_floor: f64) -> CMat {
    let (w, v) = eigh(a, 30);
    let wmax = w.iter().cloned().fold(f64::MIN_POSITIVE, f64::max);
    let n = a.nrows();
    let mut scaled = CMat::zeros((n, n));
    for j in 0..n {
        let lam = w[j].max(eig_floor * wmax);
        let s = Complex64::new(1.0 / lam.sqrt(), 0.0);
        for i in 0..n {
            scaled[(i, j)] = v[(i, j)] * s;
        }
    }
    scaled.dot(&herm(&v))
}
