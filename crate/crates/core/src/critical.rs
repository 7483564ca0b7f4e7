//! Critical arrival probability `p_c`.
//!
//! Exact values are produced where a closed form is known:
//!
//! * every unstable or critically stable equi-block is non-degenerate:
//!   `p_c = max(1 - |lambda_1|^-2, 0)`;
//! * a degenerate second-order block `lambda_1 = lambda_2 e^{j phi}`:
//!   `p_c = max(1 - |lambda_1|^{-2 / (1 - D_M(phi / 2pi))}, 0)`, where
//!   `D_M` is 1/q at irreducible r/q and 0 at irrationals.
//!
//! Everywhere else the result is an interval whose lower end is the largest
//! exact value over sub-blocks (the critical value of a system dominates that
//! of any of its blocks) and the dominant-eigenvalue bound.
//!
//! Only `A` and `C` are read: the noise covariances do not move `p_c`.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{arg_positive, numerical_rank, CMatrix};
use crate::spectral::{self, Stability, DEFAULT_REL_TOL};
use crate::system::{self, gcd, AngleHint, LinearSystem, DEFAULT_RANK_TOL};

/// Default largest denominator tried when recognising `phi / 2pi`.
pub const DEFAULT_MAX_DENOMINATOR: u64 = 64;

/// Default tolerance for accepting a continued-fraction convergent.
pub const DEFAULT_ANGLE_TOL: f64 = 1e-9;

/// Absolute tolerance used to check a user's angle hint against the eigenvalues.
pub const HINT_CONSISTENCY_TOL: f64 = 1e-6;

/// Tuning knobs of the analysis; every default is a named constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    pub rank_tol: f64,
    pub rel_tol: f64,
    pub max_denominator: u64,
    pub angle_tol: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            rank_tol: DEFAULT_RANK_TOL,
            rel_tol: DEFAULT_REL_TOL,
            max_denominator: DEFAULT_MAX_DENOMINATOR,
            angle_tol: DEFAULT_ANGLE_TOL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AngleKind {
    /// `phi / 2pi = r / q`, irreducible, `0 < r < q`.
    Rational { r: i64, q: u64 },
    Irrational,
    /// No convergent with denominator `<= max_denominator` matched.
    Undetermined { max_denominator: u64 },
}

/// `phi / 2pi` of an eigenvalue pair with its rationality verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RationalAngle {
    #[serde(flatten)]
    pub kind: AngleKind,
    /// `phi / 2pi` in `[0, 1)`.
    pub value: f64,
}

/// Modified Dirichlet function: `1/q` at irreducible `r/q`, `0` at irrationals.
pub fn modified_dirichlet(angle: &RationalAngle) -> Result<f64> {
    match angle.kind {
        AngleKind::Rational { q, .. } => Ok(1.0 / q as f64),
        AngleKind::Irrational => Ok(0.0),
        AngleKind::Undetermined { .. } => Err(Error::UndeterminedAngle),
    }
}

/// Convergents `(h, k)` of the continued fraction of `x >= 0`, stopping once
/// a denominator exceeds `max_denominator` or the expansion terminates.
pub fn convergents(x: f64, max_denominator: u64) -> Vec<(i64, u64)> {
    let mut out = Vec::new();
    let (mut h_prev, mut h) = (1i64, x.floor() as i64);
    let (mut k_prev, mut k) = (0u64, 1u64);
    let mut frac = x - x.floor();
    out.push((h, k));
    while frac > 1e-15 {
        let inv = 1.0 / frac;
        let a = inv.floor();
        if a > 1e15 {
            break;
        }
        frac = inv - a;
        let a = a as u64;
        let k_next = match a.checked_mul(k).and_then(|v| v.checked_add(k_prev)) {
            Some(v) if v <= max_denominator => v,
            _ => break,
        };
        let h_next = a as i64 * h + h_prev;
        h_prev = h;
        h = h_next;
        k_prev = k;
        k = k_next;
        out.push((h, k));
    }
    out
}

fn angle_ratio(lambda1: Complex64, lambda2: Complex64) -> Result<f64> {
    if lambda2.norm() == 0.0 {
        return Err(Error::Precondition("angle of a zero eigenvalue is undefined".into()));
    }
    Ok(arg_positive(lambda1 / lambda2) / std::f64::consts::TAU)
}

/// Classifies `phi / 2pi` where `lambda1 = lambda2 e^{j phi}` from floating
/// point alone. Never returns `Irrational`: a float cannot certify it.
pub fn classify_angle(
    lambda1: Complex64,
    lambda2: Complex64,
    max_denominator: u64,
    tol: f64,
) -> Result<RationalAngle> {
    let value = angle_ratio(lambda1, lambda2)?;
    if value <= tol || 1.0 - value <= tol {
        return Err(Error::NotDetectable(
            "phi = 0: equal eigenvalues observed through a rank-one block".into(),
        ));
    }
    for (h, k) in convergents(value, max_denominator) {
        if k >= 2 && (value - h as f64 / k as f64).abs() <= tol {
            let g = gcd(h.unsigned_abs(), k);
            return Ok(RationalAngle {
                kind: AngleKind::Rational {
                    r: h / g as i64,
                    q: k / g,
                },
                value,
            });
        }
    }
    Ok(RationalAngle {
        kind: AngleKind::Undetermined { max_denominator },
        value,
    })
}

/// As [`classify_angle`], with a user hint taking precedence when it is
/// consistent with the eigenvalues (either orientation of the pair).
pub fn resolve_angle(
    lambda1: Complex64,
    lambda2: Complex64,
    max_denominator: u64,
    tol: f64,
    hint: Option<AngleHint>,
) -> Result<RationalAngle> {
    match hint {
        None => classify_angle(lambda1, lambda2, max_denominator, tol),
        Some(AngleHint::Irrational) => {
            let value = angle_ratio(lambda1, lambda2)?;
            if value <= tol || 1.0 - value <= tol {
                return Err(Error::NotDetectable("phi = 0 cannot be irrational".into()));
            }
            Ok(RationalAngle {
                kind: AngleKind::Irrational,
                value,
            })
        }
        Some(AngleHint::Rational {
            numerator,
            denominator,
        }) => {
            let value = angle_ratio(lambda1, lambda2)?;
            let declared = numerator as f64 / denominator as f64;
            let mismatch = (value - declared).abs().min((1.0 - value - declared).abs());
            if mismatch > HINT_CONSISTENCY_TOL {
                return Err(Error::AngleHintMismatch {
                    numerator,
                    denominator,
                    observed: value,
                });
            }
            Ok(RationalAngle {
                kind: AngleKind::Rational {
                    r: numerator,
                    q: denominator,
                },
                value,
            })
        }
    }
}

/// Which closed form or inequality produced a bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// `max(1 - |lambda_1|^-2, 0)` with all relevant equi-blocks non-degenerate.
    NonDegenerateDominant,
    /// Degenerate second-order block with rational `phi / 2pi = r / q`.
    DegenerateRationalAngle,
    /// Degenerate second-order block with irrational `phi / 2pi`.
    DegenerateIrrationalAngle,
    /// Degenerate second-order block, smallest denominator not excluded.
    UndeterminedAngleCeiling,
    /// `max(1 - |lambda_1|^-2, 0)` holds for every system.
    DominantEigenvalueFloor,
    /// Critical value of a sub-block.
    SubBlock,
    /// Dominant degenerate block fixes `p_c`; stable modes excluded.
    DominantBlockComposition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Exact,
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Provenance {
    pub bound: BoundKind,
    pub source: Source,
    pub value: f64,
}

/// Either an exact `p_c` or an interval `[lower, upper]` (upper may be unknown).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalValueResult {
    pub exact: Option<f64>,
    pub lower: f64,
    pub upper: Option<f64>,
    pub provenance: Vec<Provenance>,
    pub notes: Vec<String>,
}

impl CriticalValueResult {
    fn exact(value: f64, source: Source) -> Self {
        Self {
            exact: Some(value),
            lower: value,
            upper: Some(value),
            provenance: vec![Provenance {
                bound: BoundKind::Exact,
                source,
                value,
            }],
            notes: Vec::new(),
        }
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    /// Exact value if known, otherwise the lower bound.
    pub fn best_lower(&self) -> f64 {
        self.exact.unwrap_or(self.lower)
    }
}

/// `max(1 - |lambda|^-2, 0)`, with the unit-circle band mapped to 0.
pub fn dominant_formula(magnitude: f64, rel_tol: f64) -> f64 {
    if magnitude <= 1.0 + rel_tol {
        0.0
    } else {
        1.0 - magnitude.powi(-2)
    }
}

/// `1 - |lambda|^{-2q/(q-1)}` for `|lambda| > 1`, else 0.
pub fn degenerate_rational_formula(magnitude: f64, q: u64, rel_tol: f64) -> f64 {
    if magnitude <= 1.0 + rel_tol || q < 2 {
        return 0.0;
    }
    let q = q as f64;
    1.0 - magnitude.powf(-2.0 * q / (q - 1.0))
}

/// Critical value of a second-order block `diag(lambda1, lambda2)` observed
/// through the two columns of `c_block`.
pub fn second_order_critical_value(
    lambdas: [Complex64; 2],
    c_block: &CMatrix,
    opts: &AnalysisOptions,
    hint: Option<AngleHint>,
) -> Result<CriticalValueResult> {
    if c_block.ncols() != 2 {
        return Err(Error::Dimension(format!(
            "second-order block needs 2 observation columns, got {}",
            c_block.ncols()
        )));
    }
    let (l1, l2, c_block) = if lambdas[1].norm() > lambdas[0].norm() {
        (lambdas[1], lambdas[0], c_block.select_columns(&[1, 0]))
    } else {
        (lambdas[0], lambdas[1], c_block.clone())
    };
    let mag = l1.norm();
    let floor = dominant_formula(mag, opts.rel_tol);
    let rank = numerical_rank(&c_block, opts.rank_tol);
    let tie = (mag - l2.norm()).abs() <= opts.rel_tol * mag.max(1.0);

    if !tie || rank == 2 {
        if rank == 0 && mag >= 1.0 - opts.rel_tol {
            return Err(Error::NotDetectable("observation block has rank 0".into()));
        }
        return Ok(CriticalValueResult::exact(floor, Source::NonDegenerateDominant));
    }
    if mag < 1.0 - opts.rel_tol {
        return Ok(CriticalValueResult::exact(0.0, Source::NonDegenerateDominant)
            .with_note("stable block: bounded for every arrival probability"));
    }
    if rank == 0 || c_block.column(0).norm() == 0.0 || c_block.column(1).norm() == 0.0 {
        return Err(Error::NotDetectable("a mode of the block is not observed".into()));
    }

    let angle = resolve_angle(l1, l2, opts.max_denominator, opts.angle_tol, hint)?;
    Ok(match angle.kind {
        AngleKind::Rational { r, q } => CriticalValueResult::exact(
            degenerate_rational_formula(mag, q, opts.rel_tol),
            Source::DegenerateRationalAngle,
        )
        .with_note(format!("degenerate pair, phi/2pi = {r}/{q}, D_M = 1/{q}")),
        AngleKind::Irrational => CriticalValueResult::exact(floor, Source::DegenerateIrrationalAngle)
            .with_note("degenerate pair, phi/2pi declared irrational, D_M = 0"),
        AngleKind::Undetermined { max_denominator } => {
            let q_star = max_denominator + 1;
            let upper = degenerate_rational_formula(mag, q_star, opts.rel_tol);
            CriticalValueResult {
                exact: None,
                lower: floor,
                upper: Some(upper),
                provenance: vec![
                    Provenance {
                        bound: BoundKind::Lower,
                        source: Source::DegenerateIrrationalAngle,
                        value: floor,
                    },
                    Provenance {
                        bound: BoundKind::Upper,
                        source: Source::UndeterminedAngleCeiling,
                        value: upper,
                    },
                ],
                notes: vec![format!(
                    "phi/2pi = {:.12} matches no fraction with denominator <= {max_denominator}; \
                     supply angle_hint for an exact value",
                    angle.value
                )],
            }
        }
    })
}

/// Critical arrival probability of a validated system.
pub fn critical_value(sys: &LinearSystem, opts: &AnalysisOptions) -> Result<CriticalValueResult> {
    system::validate(sys, opts.rank_tol).into_result()?;
    let sf = spectral::diagonalize(sys)?;
    let report = spectral::equi_blocks_with_rank_tol(&sf, opts.rel_tol, opts.rank_tol);
    let eig = sf.eigenvalues();
    let floor = dominant_formula(eig[0].norm(), opts.rel_tol);

    let relevant: Vec<&spectral::EquiBlock> = report
        .blocks
        .iter()
        .filter(|b| b.stability_class != Stability::Stable)
        .collect();
    let stable_degenerate = report
        .blocks
        .iter()
        .any(|b| b.degenerate && b.stability_class == Stability::Stable);
    let degenerate: Vec<&spectral::EquiBlock> =
        relevant.iter().copied().filter(|b| b.degenerate).collect();

    if degenerate.is_empty() {
        let mut res = CriticalValueResult::exact(floor, Source::NonDegenerateDominant);
        if relevant.is_empty() {
            res = res.with_note("all eigenvalues strictly stable");
        }
        if stable_degenerate {
            res = res.with_note("degenerate stable equi-blocks do not affect p_c");
        }
        return Ok(res);
    }

    let floor_bound = Provenance {
        bound: BoundKind::Lower,
        source: Source::DominantEigenvalueFloor,
        value: floor,
    };

    if degenerate.iter().all(|b| b.dim() == 2) {
        let mut lower = floor;
        let mut provenance = vec![floor_bound];
        let mut block_results = Vec::new();
        for b in &degenerate {
            let lambdas = [eig[b.indices[0]], eig[b.indices[1]]];
            let res = second_order_critical_value(lambdas, &b.c_block, opts, sys.angle_hint())?;
            lower = lower.max(res.best_lower());
            provenance.push(Provenance {
                bound: BoundKind::Lower,
                source: Source::SubBlock,
                value: res.best_lower(),
            });
            block_results.push(res);
        }
        let dominant = degenerate.len() == 1 && degenerate[0].indices.contains(&0);
        if dominant {
            let res = &block_results[0];
            let others_below = relevant
                .iter()
                .filter(|b| !b.degenerate)
                .all(|b| dominant_formula(b.magnitude, opts.rel_tol) <= res.best_lower());
            if others_below {
                let mut out = res.clone();
                for p in &mut out.provenance {
                    if p.bound == BoundKind::Exact {
                        p.source = Source::DominantBlockComposition;
                    }
                }
                out.lower = out.lower.max(lower);
                if report.blocks.len() > 1 {
                    out.notes.push(
                        "the dominant degenerate pair fixes p_c; remaining unstable blocks are \
                         non-degenerate with smaller critical values and stable modes are excluded"
                            .into(),
                    );
                }
                return Ok(out);
            }
        }
        return Ok(CriticalValueResult {
            exact: None,
            lower,
            upper: None,
            provenance,
            notes: vec![
                "degenerate block below the dominant magnitude: only the sub-block lower bound is known"
                    .into(),
            ],
        });
    }

    // Some degenerate equi-block has dimension >= 3: lower bound from all
    // one- and two-dimensional sub-blocks.
    let mut lower = floor;
    let mut provenance = vec![floor_bound];
    let mut notes = vec!["degenerate equi-block of dimension >= 3: exact value is an open problem".to_string()];
    for b in &relevant {
        for (x, &i) in b.indices.iter().enumerate() {
            for &j in &b.indices[x + 1..] {
                let cols = sf.columns(&[i, j]);
                match second_order_critical_value([eig[i], eig[j]], &cols, opts, sys.angle_hint()) {
                    Ok(res) => {
                        if res.best_lower() > lower {
                            lower = res.best_lower();
                            provenance.push(Provenance {
                                bound: BoundKind::Lower,
                                source: Source::SubBlock,
                                value: lower,
                            });
                        }
                    }
                    Err(e) => notes.push(format!("sub-block ({i}, {j}) skipped: {e}")),
                }
            }
        }
    }
    Ok(CriticalValueResult {
        exact: None,
        lower,
        upper: None,
        provenance,
        notes,
    })
}
