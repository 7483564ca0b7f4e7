//! The linear Gaussian system driven over an erasure channel, its standing
//! assumptions, and the JSON system-spec file format.
//!
//! ```text
//! x_{k+1} = A x_k + w_k,   w_k ~ N(0, Q)
//! y_k     = C x_k + v_k,   v_k ~ N(0, R)
//! x_0 ~ N(x0_mean, Sigma0)
//! ```
//!
//! Dimensional consistency is enforced when a [`LinearSystem`] is built.
//! The modelling assumptions (detectability, diagonalizability and positive
//! definite noise) are checked separately by [`validate`].

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, numerical_rank, to_complex, CMatrix};
use crate::spectral;

/// Default relative singular-value threshold for numerical rank.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// Relative threshold on the smallest eigenvalue of a covariance.
pub const PD_REL_TOL: f64 = 1e-12;

/// Relative asymmetry tolerated in a covariance before it is rejected.
pub const SYMMETRY_REL_TOL: f64 = 1e-10;

/// Exact knowledge of `phi / 2pi` for a degenerate eigenvalue pair, supplied
/// by the user rather than recovered from floating point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleHint {
    Rational { numerator: i64, denominator: u64 },
    Irrational,
}

impl AngleHint {
    /// Builds a rational hint reduced to lowest terms with `0 < r < q`.
    pub fn rational(numerator: i64, denominator: u64) -> Result<Self> {
        if denominator == 0 {
            return Err(Error::Parse("angle_hint denominator must be positive".into()));
        }
        let q = denominator as i64;
        let r = numerator.rem_euclid(q);
        if r == 0 {
            return Err(Error::NotDetectable(
                "angle_hint declares phi = 0: equal eigenvalues with a rank-one observation".into(),
            ));
        }
        let g = gcd(r as u64, denominator);
        Ok(AngleHint::Rational {
            numerator: r / g as i64,
            denominator: denominator / g,
        })
    }
}

pub(crate) fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// A time-invariant linear system with Gaussian noise.
///
/// Immutable once built; all matrices are dimensionally consistent.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    sigma0: DMatrix<f64>,
    x0_mean: DVector<f64>,
    angle_hint: Option<AngleHint>,
}

impl LinearSystem {
    pub fn new(
        a: DMatrix<f64>,
        c: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        sigma0: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 {
            return Err(Error::Dimension("A must be non-empty".into()));
        }
        check_shape("A", &a, n, n)?;
        let m = c.nrows();
        if m == 0 {
            return Err(Error::Dimension("C must have at least one row".into()));
        }
        check_shape("C", &c, m, n)?;
        check_shape("Q", &q, n, n)?;
        check_shape("R", &r, m, m)?;
        check_shape("Sigma0", &sigma0, n, n)?;
        Ok(Self {
            a,
            c,
            q,
            r,
            sigma0,
            x0_mean: DVector::zeros(n),
            angle_hint: None,
        })
    }

    /// Convenience constructor with `Q = I`, `R = I`, `Sigma0 = I`.
    pub fn with_identity_noise(a: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        let m = c.nrows();
        Self::new(
            a,
            c,
            DMatrix::identity(n, n),
            DMatrix::identity(m, m),
            DMatrix::identity(n, n),
        )
    }

    pub fn with_x0_mean(mut self, x0_mean: DVector<f64>) -> Result<Self> {
        if x0_mean.len() != self.state_dim() {
            return Err(Error::Dimension(format!(
                "x0_mean has length {}, expected {}",
                x0_mean.len(),
                self.state_dim()
            )));
        }
        self.x0_mean = x0_mean;
        Ok(self)
    }

    pub fn with_angle_hint(mut self, hint: Option<AngleHint>) -> Self {
        self.angle_hint = hint;
        self
    }

    /// Same dynamics and observation, different noise covariances.
    pub fn with_noise(&self, q: DMatrix<f64>, r: DMatrix<f64>, sigma0: DMatrix<f64>) -> Result<Self> {
        let sys = Self::new(self.a.clone(), self.c.clone(), q, r, sigma0)?;
        Ok(Self {
            x0_mean: self.x0_mean.clone(),
            angle_hint: self.angle_hint,
            ..sys
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn sigma0(&self) -> &DMatrix<f64> {
        &self.sigma0
    }

    pub fn x0_mean(&self) -> &DVector<f64> {
        &self.x0_mean
    }

    pub fn angle_hint(&self) -> Option<AngleHint> {
        self.angle_hint
    }

    /// State dimension `n`.
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Output dimension `m`.
    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }
}

fn check_shape(name: &str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::Dimension(format!(
            "{name}: expected {rows}x{cols}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Per-assumption verdicts for a [`LinearSystem`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub detectable: bool,
    pub diagonalizable: bool,
    pub noise_pd: bool,
    #[serde(serialize_with = "crate::report::serialize_complex_vec")]
    pub offending_eigenvalues: Vec<Complex64>,
    pub messages: Vec<String>,
}

impl ValidationReport {
    /// True when every downstream operation may run on the system.
    pub fn admissible(&self) -> bool {
        self.detectable && self.diagonalizable && self.noise_pd
    }

    /// Converts a failing report into [`Error::Assumption`].
    pub fn into_result(self) -> Result<Self> {
        if self.admissible() {
            Ok(self)
        } else {
            Err(Error::Assumption(Box::new(self)))
        }
    }
}

/// Checks detectability (PBH), diagonalizability of `A` and strict positive
/// definiteness of `Q`, `R`, `Sigma0`.
///
/// `tol` is the relative singular-value threshold used for the PBH rank.
pub fn validate(sys: &LinearSystem, tol: f64) -> ValidationReport {
    let mut messages = Vec::new();

    let mut noise_pd = true;
    for (name, m) in [("Q", sys.q()), ("R", sys.r()), ("Sigma0", sys.sigma0())] {
        if let Err(msg) = check_positive_definite(m) {
            noise_pd = false;
            messages.push(format!("{name} {msg}"));
        }
    }

    let diagonalizable = match spectral::decompose(sys.a()) {
        Ok(_) => true,
        Err(e) => {
            messages.push(e.to_string());
            false
        }
    };

    let offending = pbh_failures(sys.a(), sys.c(), tol);
    for lambda in &offending {
        messages.push(format!(
            "PBH rank test fails at eigenvalue {:.6}{:+.6}i (|lambda| = {:.6}): mode is unstable and unobservable",
            lambda.re,
            lambda.im,
            lambda.norm()
        ));
    }

    ValidationReport {
        detectable: offending.is_empty(),
        diagonalizable,
        noise_pd,
        offending_eigenvalues: offending,
        messages,
    }
}

fn check_positive_definite(m: &DMatrix<f64>) -> std::result::Result<(), String> {
    if !linalg::all_finite(m) {
        return Err("has non-finite entries".into());
    }
    let scale = m.norm();
    let asym = (m - m.transpose()).norm();
    if asym > SYMMETRY_REL_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(format!("is not symmetric (asymmetry {asym:.3e})"));
    }
    let (min, max) = linalg::symmetric_extremes(m);
    if !(max > 0.0 && min > PD_REL_TOL * max) {
        return Err(format!(
            "is not strictly positive definite (eigenvalues in [{min:.3e}, {max:.3e}])"
        ));
    }
    Ok(())
}

/// Eigenvalues with `|lambda| >= 1` at which `[A - lambda I; C]` loses rank.
fn pbh_failures(a: &DMatrix<f64>, c: &DMatrix<f64>, tol: f64) -> Vec<Complex64> {
    let n = a.nrows();
    let m = c.nrows();
    let ac = to_complex(a);
    let cc = to_complex(c);
    let mut offending = Vec::new();
    for lambda in distinct_eigenvalues(a) {
        if lambda.norm() < 1.0 - spectral::DEFAULT_REL_TOL {
            continue;
        }
        let mut stacked = CMatrix::zeros(n + m, n);
        let mut top = ac.clone();
        for i in 0..n {
            top[(i, i)] -= lambda;
        }
        stacked.view_mut((0, 0), (n, n)).copy_from(&top);
        stacked.view_mut((n, 0), (m, n)).copy_from(&cc);
        if numerical_rank(&stacked, tol) < n {
            offending.push(lambda);
        }
    }
    offending
}

fn distinct_eigenvalues(a: &DMatrix<f64>) -> Vec<Complex64> {
    let mut out: Vec<Complex64> = Vec::new();
    for lambda in a.complex_eigenvalues().iter() {
        let scale = lambda.norm().max(1.0);
        if !out
            .iter()
            .any(|mu| (mu - lambda).norm() <= spectral::DEFAULT_REL_TOL * scale)
        {
            out.push(*lambda);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// System spec files

#[derive(Debug, Serialize, Deserialize)]
struct AngleHintFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    numerator: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    denominator: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    irrational: Option<bool>,
}

/// On-disk layout of a system spec (row-major nested arrays).
#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct SystemFile {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
    #[serde(rename = "Sigma0")]
    sigma0: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x0_mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    angle_hint: Option<AngleHintFile>,
}

fn matrix_from_rows(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::Dimension(format!(
                "{name}: row {i} has {} entries, expected {ncols} (matrices must be rectangular)",
                row.len()
            )));
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn rows_from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

impl SystemFile {
    pub(crate) fn from_system(sys: &LinearSystem) -> Self {
        let angle_hint = sys.angle_hint.map(|h| match h {
            AngleHint::Rational {
                numerator,
                denominator,
            } => AngleHintFile {
                numerator: Some(numerator),
                denominator: Some(denominator),
                irrational: None,
            },
            AngleHint::Irrational => AngleHintFile {
                numerator: None,
                denominator: None,
                irrational: Some(true),
            },
        });
        Self {
            a: rows_from_matrix(&sys.a),
            c: rows_from_matrix(&sys.c),
            q: rows_from_matrix(&sys.q),
            r: rows_from_matrix(&sys.r),
            sigma0: rows_from_matrix(&sys.sigma0),
            x0_mean: Some(sys.x0_mean.iter().copied().collect()),
            angle_hint,
        }
    }

    fn into_system(self) -> Result<LinearSystem> {
        let sys = LinearSystem::new(
            matrix_from_rows("A", &self.a)?,
            matrix_from_rows("C", &self.c)?,
            matrix_from_rows("Q", &self.q)?,
            matrix_from_rows("R", &self.r)?,
            matrix_from_rows("Sigma0", &self.sigma0)?,
        )?;
        let sys = match self.x0_mean {
            Some(x) => sys.with_x0_mean(DVector::from_vec(x))?,
            None => sys,
        };
        let hint = match self.angle_hint {
            None => None,
            Some(AngleHintFile {
                irrational: Some(true),
                numerator: None,
                denominator: None,
            }) => Some(AngleHint::Irrational),
            Some(AngleHintFile {
                numerator: Some(r),
                denominator: Some(q),
                irrational: None | Some(false),
            }) => Some(AngleHint::rational(r, q)?),
            Some(_) => {
                return Err(Error::Parse(
                    "angle_hint: expected {\"numerator\", \"denominator\"} or {\"irrational\": true}".into(),
                ))
            }
        };
        Ok(sys.with_angle_hint(hint))
    }
}

/// Parses a system spec from JSON text. Assumptions are not validated.
pub fn parse_system(text: &str) -> Result<LinearSystem> {
    let file: SystemFile =
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    file.into_system()
}

/// Loads a system spec file. Assumptions are not validated.
pub fn load_system(path: impl AsRef<Path>) -> Result<LinearSystem> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_system(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn system_to_json(sys: &LinearSystem) -> String {
    serde_json::to_string_pretty(&SystemFile::from_system(sys)).expect("system serializes")
}

pub fn save_system(path: impl AsRef<Path>, sys: &LinearSystem) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, system_to_json(sys) + "\n").map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
