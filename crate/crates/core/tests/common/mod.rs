#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use pcrit::system::{validate, LinearSystem};
use pcrit::CMatrix;
use rand::Rng;

pub fn scalar(a: f64) -> LinearSystem {
    LinearSystem::with_identity_noise(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, 1.0)).unwrap()
}

pub fn diag(values: &[f64], c: DMatrix<f64>) -> LinearSystem {
    LinearSystem::with_identity_noise(DMatrix::from_diagonal(&DVector::from_row_slice(values)), c).unwrap()
}

/// `A = diag(2, -2)`, `C = [1 1]`.
pub fn degenerate_pair() -> LinearSystem {
    diag(&[2.0, -2.0], DMatrix::from_row_slice(1, 2, &[1.0, 1.0]))
}

/// `A = diag(2, -2)`, `C = I`.
pub fn observed_pair() -> LinearSystem {
    diag(&[2.0, -2.0], DMatrix::identity(2, 2))
}

pub fn random_spd<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &b * b.transpose() + DMatrix::identity(n, n) * 0.2
}

/// Random admissible system, `n <= max_n`, with every eigenvalue of `A` in
/// the annulus `0.7 <= |lambda| <= 1.6` so that powers of `A^-1` up to the
/// 50th stay well inside double range.
pub fn random_system<R: Rng>(rng: &mut R, max_n: usize) -> LinearSystem {
    loop {
        let n = rng.random_range(1..=max_n);
        let m = rng.random_range(1..=n);
        let a: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.3..1.3));
        let mags: Vec<f64> = a.complex_eigenvalues().iter().map(|z| z.norm()).collect();
        if mags.iter().any(|&x| !(0.7..=1.6).contains(&x)) {
            continue;
        }
        let c = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let sys = LinearSystem::new(a, c, random_spd(rng, n), random_spd(rng, m), random_spd(rng, n)).unwrap();
        if validate(&sys, 1e-9).admissible() {
            return sys;
        }
    }
}

pub fn random_gammas<R: Rng>(rng: &mut R, len: usize) -> Vec<bool> {
    let p = rng.random_range(0.1..0.9);
    (0..len).map(|_| rng.random_bool(p)).collect()
}

/// `P_0, ..., P_len` from the Riccati recursion.
pub fn riccati_path(sys: &LinearSystem, gammas: &[bool]) -> Vec<DMatrix<f64>> {
    pcrit::filter::riccati_path(sys, gammas).unwrap()
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Spectral condition number of a symmetric positive definite matrix.
pub fn condition(m: &DMatrix<f64>) -> f64 {
    let e = m.symmetric_eigenvalues();
    e.max() / e.min()
}

/// The same plant seen through the block-diagonal doubled observation
/// `[[C_I, 0], [0, C_J]]` with noise `I / 2`; `Q = Sigma0 = I`.
pub fn doubled_observation(a: &DMatrix<f64>, c: &DMatrix<f64>, split: usize) -> (LinearSystem, LinearSystem) {
    let (m, n) = c.shape();
    let mut c2 = DMatrix::zeros(2 * m, n);
    c2.view_mut((0, 0), (m, split)).copy_from(&c.columns(0, split));
    c2.view_mut((m, split), (m, n - split)).copy_from(&c.columns(split, n - split));
    let original = LinearSystem::with_identity_noise(a.clone(), c.clone()).unwrap();
    let comparison = LinearSystem::new(
        a.clone(),
        c2,
        DMatrix::identity(n, n),
        DMatrix::identity(2 * m, 2 * m) * 0.5,
        DMatrix::identity(n, n),
    )
    .unwrap();
    (original, comparison)
}

/// Random detectable 4-state diagonal system and its doubled-observation
/// comparison system.
pub fn random_diagonal_pair<R: Rng>(rng: &mut R) -> (LinearSystem, LinearSystem) {
    loop {
        let lambdas: Vec<f64> = (0..4)
            .map(|_| rng.random_range(0.5..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        let a = DMatrix::from_diagonal(&DVector::from_vec(lambdas));
        let m = rng.random_range(1..=2);
        let c = DMatrix::from_fn(m, 4, |_, _| rng.random_range(-1.0..1.0));
        let split = rng.random_range(1..4);
        let (original, comparison) = doubled_observation(&a, &c, split);
        if validate(&original, 1e-9).admissible() {
            return (original, comparison);
        }
    }
}

/// The `(k+1)n x (k+1)n` lower block-triangular matrix whose `(i, j)` block
/// is `Lambda^-(i-j+1)` for `i >= j`.
pub fn f_matrix(lambdas: &[Complex64], k: usize) -> CMatrix {
    let n = lambdas.len();
    let size = (k + 1) * n;
    let mut f = CMatrix::zeros(size, size);
    for i in 0..=k {
        for j in 0..=i {
            for (d, l) in lambdas.iter().enumerate() {
                f[(i * n + d, j * n + d)] = l.powi(-((i - j + 1) as i32));
            }
        }
    }
    f
}

/// `D / prod lambda_k^{-i_k}` for the determinant with rows
/// `l_{k,j} lambda_j^{-i_k}`.
pub fn determinant_ratio(lambdas: &[Complex64], l: &CMatrix, times: &[i32]) -> Complex64 {
    let n = lambdas.len();
    let m = CMatrix::from_fn(n, n, |k, j| l[(k, j)] * lambdas[j].powi(-times[k]));
    let scale: Complex64 = (0..n).map(|k| lambdas[k].powi(-times[k])).product();
    m.determinant() / scale
}

/// Rows `L_i C~` with `l_ii = 1` and `l_ij = 0` whenever `|lambda_i| = |lambda_j|`,
/// built by eliminating within each equal-magnitude group.
pub fn row_reduced(lambdas: &[Complex64], c_tilde: &CMatrix) -> Option<CMatrix> {
    let n = lambdas.len();
    let mut out = CMatrix::zeros(n, n);
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && (lambdas[j].norm() - lambdas[i].norm()).abs() < 1e-12 {
            j += 1;
        }
        let block = c_tilde.columns(i, j - i).into_owned();
        // Left inverse of the block picks rows with unit diagonal and zeros
        // elsewhere inside the group.
        let pinv = block.clone().pseudo_inverse(1e-12).ok()?;
        if (&pinv * &block - CMatrix::identity(j - i, j - i)).norm() > 1e-9 {
            return None;
        }
        let rows = &pinv * c_tilde;
        out.view_mut((i, 0), (j - i, n)).copy_from(&rows);
        i = j;
    }
    Some(out)
}
