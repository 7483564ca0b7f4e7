//! Seeded Monte Carlo estimation of `E[trace(P_k)^q]` and the sweep that
//! localizes the critical arrival probability empirically.
//!
//! Two estimators run side by side for every configuration:
//!
//! * `trials` independent covariance trajectories, each with its own seed.
//!   They give the per-step quantiles and the diverged fraction.
//! * A cloning (sequential Monte Carlo) estimate of the moment
//!   `E[trace(P_k)^q]`. Below the critical probability the moment grows
//!   through events of exponentially small probability, which a plain
//!   sample mean over a few hundred trials never sees. The cloning
//!   estimator keeps `trials` walkers, tilts them by `trace(P)^q` and tracks
//!   the normalizing constant, which is an unbiased estimate of the moment.
//!
//! Both estimators are deterministic functions of the base seed and give the
//! same output whether trials run serially or on a thread pool.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::critical::{critical_value, AnalysisOptions};
use crate::error::{Error, Result};
use crate::filter::{ErasureTrace, SqrtRiccati};
use crate::system::LinearSystem;

pub const DEFAULT_SEED: u64 = 20_240_601;
pub const DEFAULT_HORIZON: usize = 300;
pub const DEFAULT_TRIALS: usize = 500;
/// Multiplier on `trace(Sigma0)` above which a trajectory counts as diverged.
pub const DEFAULT_DIVERGENCE_THRESHOLD: f64 = 1e8;
pub const DIVERGED_FRACTION_LIMIT: f64 = 0.01;
pub const DIVERGENT_SLOPE: f64 = 0.01;
pub const BOUNDED_SLOPE: f64 = 0.001;
pub const MIN_RESOLUTION: f64 = 0.005;
pub const DEFAULT_RESOLUTION: f64 = 0.05;
pub const QUANTILES: [f64; 3] = [0.5, 0.9, 0.99];

const CLONING_STREAM: u64 = 0xC10E_5EED_0000_0001;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialConfig {
    pub p: f64,
    pub horizon: usize,
    pub trials: usize,
    pub base_seed: u64,
    pub divergence_threshold: f64,
    pub moment_order: u32,
}

impl TrialConfig {
    pub fn new(p: f64, horizon: usize, trials: usize, base_seed: u64) -> Result<Self> {
        let cfg = Self {
            p,
            horizon,
            trials,
            base_seed,
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
            moment_order: 1,
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        self.divergence_threshold = threshold;
        self.check()?;
        Ok(self)
    }

    pub fn with_moment_order(mut self, q: u32) -> Result<Self> {
        self.moment_order = q;
        self.check()?;
        Ok(self)
    }

    pub fn with_p(mut self, p: f64) -> Result<Self> {
        self.p = p;
        self.check()?;
        Ok(self)
    }

    pub fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Precondition(format!("p = {} outside [0, 1]", self.p)));
        }
        if self.horizon < 10 {
            return Err(Error::Precondition(format!("horizon {} < 10", self.horizon)));
        }
        if self.trials < 1 {
            return Err(Error::Precondition("trials must be at least 1".into()));
        }
        if !(self.divergence_threshold > 1.0) || !self.divergence_threshold.is_finite() {
            return Err(Error::Precondition(format!(
                "divergence threshold {} must be a finite number > 1",
                self.divergence_threshold
            )));
        }
        if self.moment_order < 1 {
            return Err(Error::Precondition("moment order must be at least 1".into()));
        }
        Ok(())
    }
}

/// Seed for trial `index`: SplitMix64 finalizer over `base ^ golden * (index + 1)`.
pub fn trial_seed(base_seed: u64, index: u64) -> u64 {
    let mut z = base_seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `trace(P_k)` for `k = 0..horizon`, truncated at overflow.
    pub traces: Vec<f64>,
    /// First step whose covariance was not finite.
    pub overflow_at: Option<usize>,
}

/// `trace(P_k)` for `k = 0..horizon` with `P_0 = Sigma0`, driven by
/// `ErasureTrace::generate(p, seed, horizon)`.
pub fn simulate_trajectory(sys: &LinearSystem, p: f64, horizon: usize, seed: u64) -> Result<Trajectory> {
    let trace = ErasureTrace::generate(p, seed, horizon)?;
    Ok(run_trace(&SqrtRiccati::new(sys)?, &trace.gammas))
}

fn run_trace(sr: &SqrtRiccati, gammas: &[bool]) -> Trajectory {
    let mut l = sr.initial();
    let mut traces = Vec::with_capacity(gammas.len());
    let mut overflow_at = None;
    for (k, &g) in gammas.iter().enumerate() {
        traces.push(sr.trace(&l));
        if k + 1 == gammas.len() {
            break;
        }
        match sr.step(&l, g) {
            Ok(next) if sr.trace(&next).is_finite() => l = next,
            _ => {
                overflow_at = Some(k + 1);
                break;
            }
        }
    }
    Trajectory { traces, overflow_at }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Bounded,
    Divergent,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Bounded => "bounded",
            Verdict::Divergent => "divergent",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

/// The verdict rules. `overflowed` means the moment estimate itself left the
/// floating-point range.
pub fn classify(diverged_fraction: f64, log_slope: f64, overflowed: bool) -> Verdict {
    if overflowed || diverged_fraction > DIVERGED_FRACTION_LIMIT || log_slope > DIVERGENT_SLOPE {
        Verdict::Divergent
    } else if log_slope < BOUNDED_SLOPE && diverged_fraction == 0.0 {
        Verdict::Bounded
    } else {
        Verdict::Inconclusive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub config: TrialConfig,
    /// Estimate of `E[trace(P_k)^q]` for `k = 0..horizon`.
    pub per_k_mean_trace: Vec<f64>,
    /// Quantiles [`QUANTILES`] of the winsorized `trace(P_k)` across trials.
    pub per_k_quantiles: Vec<[f64; 3]>,
    pub diverged_fraction: f64,
    pub log_slope: f64,
    /// The moment estimate overflowed before the horizon.
    pub overflowed: bool,
    pub verdict: Verdict,
}

/// Least-squares slope of `ys` against `0, 1, 2, ...`.
pub fn ls_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let xbar = (n - 1.0) / 2.0;
    let ybar = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - xbar;
        sxy += dx * (y - ybar);
        sxx += dx * dx;
    }
    sxy / sxx
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn map_indexed<T: Send>(n: usize, parallel: bool, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    if parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = parallel;
    (0..n).map(f).collect()
}

/// Runs the estimators on the current rayon pool (when the `parallel`
/// feature is on).
pub fn estimate(sys: &LinearSystem, cfg: &TrialConfig) -> Result<SimulationSummary> {
    estimate_impl(sys, cfg, true)
}

/// Same as [`estimate`] on the calling thread only.
pub fn estimate_serial(sys: &LinearSystem, cfg: &TrialConfig) -> Result<SimulationSummary> {
    estimate_impl(sys, cfg, false)
}

fn estimate_impl(sys: &LinearSystem, cfg: &TrialConfig, parallel: bool) -> Result<SimulationSummary> {
    cfg.check()?;
    let k_len = cfg.horizon;
    let cap = cfg.divergence_threshold * sys.sigma0().trace();
    let sr = SqrtRiccati::new(sys)?;

    let trajectories = map_indexed(cfg.trials, parallel, |i| {
        let seed = trial_seed(cfg.base_seed, i as u64);
        let trace = ErasureTrace::generate(cfg.p, seed, k_len).expect("p checked");
        run_trace(&sr, &trace.gammas)
    });

    let mut diverged = 0usize;
    let mut columns = vec![Vec::with_capacity(cfg.trials); k_len];
    for t in &trajectories {
        let mut hit = false;
        for (k, col) in columns.iter_mut().enumerate() {
            let v = t.traces.get(k).copied().unwrap_or(f64::INFINITY);
            hit |= v > cap;
            col.push(if hit { cap } else { v });
        }
        if hit {
            diverged += 1;
        }
    }
    let per_k_quantiles = columns
        .iter_mut()
        .map(|col| {
            col.sort_by(f64::total_cmp);
            QUANTILES.map(|q| quantile(col, q))
        })
        .collect();
    let diverged_fraction = diverged as f64 / cfg.trials as f64;

    let log_moment = cloning_log_moment(&sr, cfg, parallel);
    let overflowed = log_moment.len() < k_len;
    let tail = &log_moment[log_moment.len() / 2..];
    let log_slope = ls_slope(tail);
    let per_k_mean_trace = (0..k_len)
        .map(|k| log_moment.get(k).map_or(f64::INFINITY, |l| l.exp()))
        .collect();

    Ok(SimulationSummary {
        config: cfg.clone(),
        per_k_mean_trace,
        per_k_quantiles,
        diverged_fraction,
        log_slope,
        overflowed,
        verdict: classify(diverged_fraction, log_slope, overflowed),
    })
}

/// `ln E[trace(P_k)^q]` for `k = 0..horizon`, truncated where it stops being
/// finite.
///
/// Walkers are distributed as the law of `P_k` tilted by `trace(P_k)^q`.
/// Each walker expands both successors; the mean over walkers of
/// `sum_child Pr(child) trace(child)^q / trace(P)^q` is the one-step ratio of
/// the moment, and the next population is drawn from the `2N` children, sorted by
/// trace, by stratified resampling with weights `Pr(child) trace(child)^q`.
fn cloning_log_moment(sr: &SqrtRiccati, cfg: &TrialConfig, parallel: bool) -> Vec<f64> {
    let n = cfg.trials;
    let q = cfg.moment_order as i32;
    let p = cfg.p;
    let mut walkers: Vec<(f64, DMatrix<f64>)> = vec![(sr.trace(&sr.initial()), sr.initial()); n];
    let mut log_z = walkers[0].0.ln() * q as f64;
    let mut out = Vec::with_capacity(cfg.horizon);
    out.push(log_z);

    for k in 1..cfg.horizon {
        let children = map_indexed(n, parallel, |i| {
            let (base, parent) = &walkers[i];
            let mut pair = [(None, 0.0), (None, 0.0)];
            for (slot, (gamma, prob)) in [(false, 1.0 - p), (true, p)].into_iter().enumerate() {
                if prob == 0.0 {
                    continue;
                }
                if let Ok(child) = sr.step(parent, gamma) {
                    let tr = sr.trace(&child);
                    let w = prob * (tr / base).powi(q);
                    if w.is_finite() {
                        pair[slot] = (Some((tr, child)), w);
                        continue;
                    }
                }
                pair[slot] = (None, f64::INFINITY);
            }
            pair
        });
        // Children ordered by trace so that the strata of the resampling
        // step follow the quantity being estimated.
        let mut pool: Vec<(f64, (f64, DMatrix<f64>))> = Vec::with_capacity(2 * n);
        let mut total = 0.0;
        for (child, w) in children.into_iter().flatten() {
            total += w;
            if let Some(c) = child {
                pool.push((w, c));
            }
        }
        if !total.is_finite() || total <= 0.0 {
            break;
        }
        let step = (total / n as f64).ln();
        log_z += step;
        if !log_z.is_finite() || log_z > f64::MAX.ln() {
            break;
        }
        out.push(log_z);
        pool.sort_by(|x, y| x.1 .0.total_cmp(&y.1 .0));

        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(cfg.base_seed ^ CLONING_STREAM, k as u64));
        let mut next = Vec::with_capacity(n);
        let mut cumulative = 0.0;
        let mut j = 0usize;
        for i in 0..n {
            let target = (i as f64 + rng.random::<f64>()) / n as f64 * total;
            while j + 1 < pool.len() && cumulative + pool[j].0 <= target {
                cumulative += pool[j].0;
                j += 1;
            }
            next.push(pool[j].1.clone());
        }
        walkers = next;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub p: f64,
    pub horizon: usize,
    pub verdict: Verdict,
    pub log_slope: f64,
    pub diverged_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub evaluated_points: Vec<SweepPoint>,
    pub estimated_pc: f64,
    pub bracket: (f64, f64),
    pub analytic_pc: Option<f64>,
    /// Bounded verdicts found below a divergent one.
    pub anomalies: Vec<String>,
}

struct Sweeper<'a> {
    sys: &'a LinearSystem,
    template: &'a TrialConfig,
    points: Vec<SweepPoint>,
}

impl Sweeper<'_> {
    fn run(&mut self, p: f64, horizon: usize) -> Result<Verdict> {
        let mut cfg = self.template.clone().with_p(p)?;
        cfg.horizon = horizon;
        let s = estimate(self.sys, &cfg)?;
        self.points.push(SweepPoint {
            p,
            horizon,
            verdict: s.verdict,
            log_slope: s.log_slope,
            diverged_fraction: s.diverged_fraction,
        });
        Ok(s.verdict)
    }

    /// Verdict at `p`, retrying once with twice the horizon when inconclusive.
    fn eval(&mut self, p: f64) -> Result<Verdict> {
        match self.run(p, self.template.horizon)? {
            Verdict::Inconclusive => self.run(p, 2 * self.template.horizon),
            v => Ok(v),
        }
    }
}

/// Bisection on `p` over `[0, 1]` using [`estimate`] verdicts until the
/// bracket is no wider than `resolution`.
///
/// A point that stays inconclusive after the horizon is doubled is stepped
/// over by probing a quarter of the bracket to either side.
pub fn empirical_pc(sys: &LinearSystem, resolution: f64, template: &TrialConfig) -> Result<SweepResult> {
    if !(resolution >= MIN_RESOLUTION) {
        return Err(Error::Precondition(format!("resolution {resolution} below {MIN_RESOLUTION}")));
    }
    template.check()?;
    let analytic_pc = critical_value(sys, &AnalysisOptions::default()).ok().and_then(|r| r.exact);
    let mut sw = Sweeper {
        sys,
        template,
        points: Vec::new(),
    };

    let finish = |sw: Sweeper, estimated_pc: f64, bracket: (f64, f64)| {
        let anomalies = monotonicity_anomalies(&sw.points);
        SweepResult {
            evaluated_points: sw.points,
            estimated_pc,
            bracket,
            analytic_pc,
            anomalies,
        }
    };

    if sw.eval(0.0)? == Verdict::Bounded {
        return Ok(finish(sw, 0.0, (0.0, 0.0)));
    }
    match sw.eval(1.0)? {
        Verdict::Bounded => {}
        v => {
            return Err(Error::Inconclusive(format!(
                "verdict at p = 1 is {v}; a detectable system should be bounded there, increase the budget"
            )))
        }
    }

    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > resolution {
        let mid = 0.5 * (lo + hi);
        match sw.eval(mid)? {
            Verdict::Bounded => hi = mid,
            Verdict::Divergent => lo = mid,
            Verdict::Inconclusive => {
                let quarter = 0.25 * (hi - lo);
                let mut moved = false;
                for probe in [mid - quarter, mid + quarter] {
                    match sw.eval(probe)? {
                        Verdict::Bounded => {
                            hi = hi.min(probe);
                            moved = true;
                        }
                        Verdict::Divergent => {
                            lo = lo.max(probe);
                            moved = true;
                        }
                        Verdict::Inconclusive => {}
                    }
                }
                if !moved {
                    return Err(Error::Inconclusive(format!(
                        "every probe in ({lo:.4}, {hi:.4}) was inconclusive; increase trials or horizon"
                    )));
                }
                if lo >= hi {
                    return Err(Error::Inconclusive(format!(
                        "non-monotone verdicts around p = {mid:.4}; increase trials or horizon"
                    )));
                }
            }
        }
    }
    Ok(finish(sw, 0.5 * (lo + hi), (lo, hi)))
}

fn monotonicity_anomalies(points: &[SweepPoint]) -> Vec<String> {
    let mut out = Vec::new();
    for b in points.iter().filter(|x| x.verdict == Verdict::Bounded) {
        for d in points.iter().filter(|x| x.verdict == Verdict::Divergent && x.p > b.p) {
            out.push(format!("bounded at p = {} but divergent at p = {}", b.p, d.p));
        }
    }
    out
}
