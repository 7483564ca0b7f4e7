//! Kalman filtering with intermittent observations.
//!
//! The one-step predictor covariance obeys
//!
//! ```text
//! P_{k+1} = A P_k A' + Q - gamma_k A P_k C' (C P_k C' + R)^-1 C P_k A'
//! ```
//!
//! [`riccati_step`] is the canonical implementation. [`information_step`]
//! and [`ml_covariance`] compute the same quantity by independent routes
//! and exist to cross-check it.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{all_finite, symmetrize, CMatrix};
use crate::spectral::SpectralForm;
use crate::system::LinearSystem;

/// Longest arrival prefix accepted by [`ml_covariance`].
pub const ML_MAX_LEN: usize = 201;

/// Predictor state `x_hat_{k|k-1}`, `P_k` at time `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub x_hat: DVector<f64>,
    pub p: DMatrix<f64>,
    pub k: u64,
}

impl FilterState {
    /// `x_hat_{0|-1} = x0_mean`, `P_0 = Sigma0`.
    pub fn initial(sys: &LinearSystem) -> Self {
        Self {
            x_hat: sys.x0_mean().clone(),
            p: sys.sigma0().clone(),
            k: 0,
        }
    }
}

/// A seeded i.i.d. Bernoulli(p) arrival sequence.
///
/// `gammas[k]` is drawn as `ChaCha8Rng::seed_from_u64(seed).random_bool(p)`
/// in order, so `(seed, p, length)` reproduces the trace bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct ErasureTrace {
    pub gammas: Vec<bool>,
    pub p: f64,
    pub seed: u64,
}

impl ErasureTrace {
    pub fn generate(p: f64, seed: u64, length: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Precondition(format!("arrival probability {p} outside [0, 1]")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gammas = (0..length).map(|_| rng.random_bool(p)).collect();
        Ok(Self { gammas, p, seed })
    }

    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }
}

fn ensure_finite(p: &DMatrix<f64>) -> Result<()> {
    if all_finite(p) {
        Ok(())
    } else {
        Err(Error::Numeric("covariance has non-finite entries".into()))
    }
}

/// One step of the randomized Riccati recursion.
///
/// Evaluated on a square-root factor of `P` (see [`SqrtRiccati`]), which
/// avoids the cancellation of `P - P C' (C P C' + R)^-1 C P` after long
/// outages. A `P` that is only semidefinite is factored through its
/// eigenvectors.
pub fn riccati_step(p: &DMatrix<f64>, gamma: bool, sys: &LinearSystem) -> Result<DMatrix<f64>> {
    ensure_finite(p)?;
    let sr = SqrtRiccati::new(sys)?;
    let next = sr.step(&factor(&(p / sr.scale)), gamma)?;
    Ok(sr.covariance(&next))
}

/// `P_0, ..., P_len` for the arrival sequence `gammas`, propagated as
/// square-root factors throughout.
pub fn riccati_path(sys: &LinearSystem, gammas: &[bool]) -> Result<Vec<DMatrix<f64>>> {
    let sr = SqrtRiccati::new(sys)?;
    let mut l = sr.initial();
    let mut out = Vec::with_capacity(gammas.len() + 1);
    out.push(sys.sigma0().clone());
    for &g in gammas {
        l = sr.step(&l, g)?;
        out.push(sr.covariance(&l));
    }
    Ok(out)
}

/// `|G|_F^2` above which the measurement update switches from
/// `I + G'G` to the array form.
const ARRAY_FORM_THRESHOLD: f64 = 1e4;

/// Riccati recursion on factors `P = s L L'`, where `s` is the largest
/// diagonal entry of `R` and all noise matrices are held in units of `s`.
/// Scaling `Q`, `R`, `Sigma0` by a common factor therefore leaves every
/// factor unchanged.
///
/// Measurement update, with `G = L_R^-1 C L`: `X' X` where
/// `X = chol(I + G'G)^-1 L'` while `|G|` is moderate, otherwise the
/// lower-right block of an orthogonal triangularization of
/// `[[L_R, C L], [0, L]]`. Time update: the triangular factor of
/// `[L' A' ; L_Q']`.
#[derive(Debug, Clone)]
pub struct SqrtRiccati {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    lq: DMatrix<f64>,
    lr: DMatrix<f64>,
    l0: DMatrix<f64>,
    scale: f64,
}

impl SqrtRiccati {
    pub fn new(sys: &LinearSystem) -> Result<Self> {
        let scale = sys.r().diagonal().max();
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Numeric("R is not positive definite".into()));
        }
        let lr = Cholesky::new(sys.r() / scale)
            .ok_or_else(|| Error::Numeric("R is not positive definite".into()))?
            .unpack();
        Ok(Self {
            a: sys.a().clone(),
            c: sys.c().clone(),
            lq: factor(&(sys.q() / scale)),
            lr,
            l0: factor(&(sys.sigma0() / scale)),
            scale,
        })
    }

    /// Factor of `Sigma0`.
    pub fn initial(&self) -> DMatrix<f64> {
        self.l0.clone()
    }

    /// `P` for a factor `L`.
    pub fn covariance(&self, l: &DMatrix<f64>) -> DMatrix<f64> {
        let mut p = l * l.transpose() * self.scale;
        symmetrize(&mut p);
        p
    }

    /// `trace(P)` for a factor `L`.
    pub fn trace(&self, l: &DMatrix<f64>) -> f64 {
        l.norm_squared() * self.scale
    }

    /// Factor of `P_{k+1}` from a factor of `P_k`.
    pub fn step(&self, l: &DMatrix<f64>, gamma: bool) -> Result<DMatrix<f64>> {
        let n = l.nrows();
        let post = if gamma { self.measurement(l)? } else { l.transpose() };
        let mut stacked = DMatrix::zeros(2 * n, n);
        stacked.rows_mut(0, n).copy_from(&(post * self.a.transpose()));
        stacked.rows_mut(n, n).copy_from(&self.lq.transpose());
        let next = stacked.qr().r().transpose();
        ensure_finite(&next)?;
        Ok(next)
    }

    /// Transposed factor of the posterior.
    fn measurement(&self, l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = l.nrows();
        let m = self.lr.nrows();
        let cl = &self.c * l;
        let g = self
            .lr
            .solve_lower_triangular(&cl)
            .ok_or_else(|| Error::Numeric("R factor is singular".into()))?;
        if g.norm_squared() <= ARRAY_FORM_THRESHOLD {
            let inner = Cholesky::new(DMatrix::identity(n, n) + g.transpose() * g)
                .ok_or_else(|| Error::Numeric("I + G'G is not positive definite".into()))?;
            return inner
                .l_dirty()
                .solve_lower_triangular(&l.transpose())
                .ok_or_else(|| Error::Numeric("update factor is singular".into()));
        }
        let mut pre = DMatrix::zeros(m + n, m + n);
        pre.view_mut((0, 0), (m, m)).copy_from(&self.lr);
        pre.view_mut((0, m), (m, n)).copy_from(&cl);
        pre.view_mut((m, m), (n, n)).copy_from(l);
        let r = pre.transpose().qr().r();
        Ok(r.view((m, m), (n, n)).into_owned())
    }
}

/// Any `L` with `L L' = P`: the Cholesky factor, or `V sqrt(max(D, 0))` for
/// a `P = V D V'` that has lost definiteness to roundoff.
fn factor(p: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(chol) = Cholesky::new(p.clone()) {
        return chol.unpack();
    }
    let eig = p.clone().symmetric_eigen();
    let mut v = eig.eigenvectors;
    for (mut col, d) in v.column_iter_mut().zip(eig.eigenvalues.iter()) {
        col *= d.max(0.0).sqrt();
    }
    v
}

/// Information-form update `A (P^-1 + gamma C' R^-1 C)^-1 A' + Q`.
pub fn information_step(p: &DMatrix<f64>, gamma: bool, sys: &LinearSystem) -> Result<DMatrix<f64>> {
    ensure_finite(p)?;
    let p_chol = Cholesky::new(p.clone())
        .ok_or_else(|| Error::Numeric("P is not positive definite; use riccati_step".into()))?;
    let mut info = p_chol.inverse();
    if gamma {
        let r_chol = Cholesky::new(sys.r().clone())
            .ok_or_else(|| Error::Numeric("R is not positive definite".into()))?;
        let c = sys.c();
        info += c.transpose() * r_chol.solve(c);
    }
    symmetrize(&mut info);
    let post = Cholesky::new(info)
        .ok_or_else(|| Error::Numeric("information matrix is not positive definite".into()))?
        .inverse();
    let a = sys.a();
    let mut next = a * post * a.transpose() + sys.q();
    symmetrize(&mut next);
    ensure_finite(&next)?;
    Ok(next)
}

/// Measurement update (when `gamma`) followed by the time update.
pub fn kalman_step(
    state: &FilterState,
    y: Option<&DVector<f64>>,
    gamma: bool,
    sys: &LinearSystem,
) -> Result<FilterState> {
    let (a, c) = (sys.a(), sys.c());
    let mut x_post = state.x_hat.clone();
    if gamma {
        let y = y.ok_or_else(|| Error::Precondition("measurement arrived (gamma = 1) but y is absent".into()))?;
        if y.len() != sys.output_dim() {
            return Err(Error::Dimension(format!(
                "measurement has length {}, expected {}",
                y.len(),
                sys.output_dim()
            )));
        }
        let pct = &state.p * c.transpose();
        let s = c * &pct + sys.r();
        let chol = Cholesky::new(s)
            .ok_or_else(|| Error::Numeric("innovation covariance is not positive definite".into()))?;
        let innovation = y - c * &state.x_hat;
        x_post += pct * chol.solve(&innovation);
    }
    Ok(FilterState {
        x_hat: a * x_post,
        p: riccati_step(&state.p, gamma, sys)?,
        k: state.k + 1,
    })
}

fn powers_of_inverse(a: &DMatrix<f64>, count: usize) -> Result<Vec<DMatrix<f64>>> {
    let inv = a
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Precondition("A must be invertible".into()))?;
    let n = a.nrows();
    let mut out = Vec::with_capacity(count + 1);
    out.push(DMatrix::identity(n, n));
    for j in 1..=count {
        let next = &out[j - 1] * &inv;
        out.push(next);
    }
    Ok(out)
}

/// `P_{k+1}` rebuilt as the covariance of the maximum-likelihood estimate of
/// `x_{k+1}` from the received measurements `y_0..y_k` and the prior mean.
///
/// Every received `y_i` and the prior are written as linear functions of
/// `x_{k+1}` plus noise:
///
/// ```text
/// y_i     = C A^-(k+1-i) x_{k+1} - sum_{t=i}^{k} C A^-(t+1-i) w_t + v_i
/// x0_mean = A^-(k+1) x_{k+1}     - sum_{t=0}^{k} A^-(t+1) w_t   + (x0_mean - x_0)
/// ```
///
/// Rows with `gamma_i = 0` are dropped. With `T` the stacked regressor and
/// `S` the stacked noise covariance, the result is `(T' S^-1 T)^-1`.
pub fn ml_covariance(gammas: &[bool], sys: &LinearSystem) -> Result<DMatrix<f64>> {
    if gammas.is_empty() {
        return Err(Error::Precondition("arrival prefix must be non-empty".into()));
    }
    if gammas.len() > ML_MAX_LEN {
        return Err(Error::Precondition(format!(
            "arrival prefix of length {} exceeds the cap of {ML_MAX_LEN}",
            gammas.len()
        )));
    }
    let n = sys.state_dim();
    let m = sys.output_dim();
    let k1 = gammas.len(); // k + 1
    let inv_pow = powers_of_inverse(sys.a(), k1)?;
    let c = sys.c();

    let received: Vec<usize> = (0..k1).filter(|&i| gammas[i]).collect();
    let rows = m * received.len() + n;
    let noise_cols = n * k1;

    // Regressor T, and the maps from w (stacked w_0..w_k) and from the
    // independent noises (v_i for received rows, then x0_mean - x_0).
    let mut t = DMatrix::zeros(rows, n);
    let mut w_map = DMatrix::zeros(rows, noise_cols);
    for (slot, &i) in received.iter().enumerate() {
        let r0 = slot * m;
        t.view_mut((r0, 0), (m, n)).copy_from(&(c * &inv_pow[k1 - i]));
        for tt in i..k1 {
            w_map
                .view_mut((r0, tt * n), (m, n))
                .copy_from(&(-(c * &inv_pow[tt + 1 - i])));
        }
    }
    let r0 = m * received.len();
    t.view_mut((r0, 0), (n, n)).copy_from(&inv_pow[k1]);
    for tt in 0..k1 {
        w_map.view_mut((r0, tt * n), (n, n)).copy_from(&(-&inv_pow[tt + 1]));
    }

    let mut q_big = DMatrix::zeros(noise_cols, noise_cols);
    for tt in 0..k1 {
        q_big.view_mut((tt * n, tt * n), (n, n)).copy_from(sys.q());
    }
    let mut cov = &w_map * q_big * w_map.transpose();
    for slot in 0..received.len() {
        let mut block = cov.view_mut((slot * m, slot * m), (m, m));
        block += sys.r();
    }
    {
        let mut block = cov.view_mut((r0, r0), (n, n));
        block += sys.sigma0();
    }
    symmetrize(&mut cov);

    let chol = Cholesky::new(cov)
        .ok_or_else(|| Error::Numeric("stacked noise covariance is not positive definite".into()))?;
    let fisher = t.transpose() * chol.solve(&t);
    let mut p = Cholesky::new(fisher)
        .ok_or_else(|| Error::Numeric("information matrix is singular".into()))?
        .inverse();
    symmetrize(&mut p);
    ensure_finite(&p)?;
    Ok(p)
}

/// `sum_{i=1}^{L} gamma_i (Lambda^-i)^H C~^H C~ Lambda^-i` in the diagonal
/// standard form; `gammas[i - 1]` is `gamma_i`. All eigenvalues must be
/// strictly unstable.
pub fn grammian_partial_sum(sf: &SpectralForm, gammas: &[bool]) -> Result<CMatrix> {
    let eig = sf.eigenvalues();
    if let Some(z) = eig.iter().find(|z| z.norm() <= 1.0) {
        return Err(Error::Precondition(format!(
            "grammian sum needs |lambda| > 1 for every eigenvalue, found {:.6}",
            z.norm()
        )));
    }
    let n = eig.len();
    let ct = sf.c_tilde();
    let gram = ct.adjoint() * ct;
    let inv: Vec<Complex64> = eig.iter().map(|z| z.inv()).collect();
    let mut pow = vec![Complex64::new(1.0, 0.0); n];
    let mut sum = CMatrix::zeros(n, n);
    for &g in gammas {
        for (p, l) in pow.iter_mut().zip(&inv) {
            *p *= l;
        }
        if g {
            for r in 0..n {
                for col in 0..n {
                    sum[(r, col)] += pow[r].conj() * gram[(r, col)] * pow[col];
                }
            }
        }
    }
    Ok(sum)
}
