//! Structured reports: the JSON analysis report and the CSV tables written
//! by the simulation harness.
//!
//! The analysis report is the input system file with an added `"results"`
//! object:
//!
//! ```text
//! { "A": .., "C": .., "Q": .., "R": .., "Sigma0": .., "x0_mean": ..,
//!   "results": { "validation": .., "spectral": .., "degeneracy": ..,
//!                "angles": [..], "critical_value": .. } }
//! ```

use std::io::Write;

use num_complex::Complex64;
use serde::ser::{SerializeSeq, Serializer};
use serde::Serialize;

use crate::critical::{self, AnalysisOptions, CriticalValueResult, RationalAngle};
use crate::error::{Error, Result};
use crate::harness::{SimulationSummary, SweepResult};
use crate::spectral::{self, DegeneracyReport, Stability};
use crate::system::{self, LinearSystem, SystemFile, ValidationReport};

/// Serializes complex numbers as `[re, im]` pairs.
pub(crate) fn serialize_complex_vec<S: Serializer>(v: &[Complex64], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for z in v {
        seq.serialize_element(&[z.re, z.im])?;
    }
    seq.end()
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralSummary {
    #[serde(serialize_with = "serialize_complex_vec")]
    pub eigenvalues: Vec<Complex64>,
    pub magnitudes: Vec<f64>,
    pub reconstruction_residual: f64,
}

/// Angle of a degenerate second-order equi-block.
#[derive(Debug, Clone, Serialize)]
pub struct BlockAngle {
    pub indices: [usize; 2],
    #[serde(flatten)]
    pub angle: RationalAngle,
    /// Modified Dirichlet value `D_M`; absent when the angle is undetermined.
    pub dirichlet: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub validation: ValidationReport,
    pub spectral: SpectralSummary,
    pub degeneracy: DegeneracyReport,
    pub angles: Vec<BlockAngle>,
    pub critical_value: CriticalValueResult,
}

/// Validation, spectral form, equi-blocks, angles and critical value.
/// Never simulates.
pub fn analyze(sys: &LinearSystem, opts: &AnalysisOptions) -> Result<AnalysisReport> {
    let validation = system::validate(sys, opts.rank_tol).into_result()?;
    let sf = spectral::diagonalize(sys)?;
    let degeneracy = spectral::equi_blocks_with_rank_tol(&sf, opts.rel_tol, opts.rank_tol);
    let eig = sf.eigenvalues();

    let mut angles = Vec::new();
    for b in &degeneracy.blocks {
        if b.degenerate && b.dim() == 2 && b.stability_class != Stability::Stable {
            let (i, j) = (b.indices[0], b.indices[1]);
            let angle =
                critical::resolve_angle(eig[i], eig[j], opts.max_denominator, opts.angle_tol, sys.angle_hint())?;
            angles.push(BlockAngle {
                indices: [i, j],
                angle,
                dirichlet: critical::modified_dirichlet(&angle).ok(),
            });
        }
    }

    Ok(AnalysisReport {
        validation,
        spectral: SpectralSummary {
            eigenvalues: eig.to_vec(),
            magnitudes: eig.iter().map(|z| z.norm()).collect(),
            reconstruction_residual: sf.reconstruction_residual(sys.a()),
        },
        degeneracy,
        angles,
        critical_value: critical::critical_value(sys, opts)?,
    })
}

/// The system file with `results` attached, pretty-printed.
pub fn report_json<T: Serialize>(sys: &LinearSystem, results: &T) -> Result<String> {
    let mut doc = serde_json::to_value(SystemFile::from_system(sys)).map_err(|e| Error::Parse(e.to_string()))?;
    let results = serde_json::to_value(results).map_err(|e| Error::Parse(e.to_string()))?;
    doc.as_object_mut()
        .expect("system file is an object")
        .insert("results".into(), results);
    Ok(serde_json::to_string_pretty(&doc).expect("value serializes") + "\n")
}

pub const SUMMARY_COLUMNS: [&str; 5] = ["k", "mean_trace", "q50", "q90", "q99"];
pub const SWEEP_COLUMNS: [&str; 9] = [
    "p",
    "verdict",
    "log_slope",
    "diverged_fraction",
    "horizon",
    "analytic_pc",
    "estimated_pc",
    "bracket_low",
    "bracket_high",
];

/// One row per step `k`.
pub fn write_summary_csv<W: Write>(out: W, s: &SimulationSummary) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_COLUMNS)?;
    for (k, (mean, q)) in s.per_k_mean_trace.iter().zip(&s.per_k_quantiles).enumerate() {
        w.write_record([
            k.to_string(),
            mean.to_string(),
            q[0].to_string(),
            q[1].to_string(),
            q[2].to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// One row per evaluated point, in evaluation order; a point retried with a
/// longer horizon appears twice. The analytic and
/// estimated critical values and the bracket repeat on every row.
pub fn write_sweep_csv<W: Write>(out: W, r: &SweepResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_COLUMNS)?;
    let analytic = r.analytic_pc.map(|x| x.to_string()).unwrap_or_default();
    for pt in &r.evaluated_points {
        w.write_record([
            pt.p.to_string(),
            pt.verdict.to_string(),
            pt.log_slope.to_string(),
            pt.diverged_fraction.to_string(),
            pt.horizon.to_string(),
            analytic.clone(),
            r.estimated_pc.to_string(),
            r.bracket.0.to_string(),
            r.bracket.1.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{SweepPoint, TrialConfig, Verdict};
    use nalgebra::{DMatrix, DVector};

    fn degenerate_pair() -> LinearSystem {
        LinearSystem::with_identity_noise(
            DMatrix::from_diagonal(&DVector::from_row_slice(&[2.0, -2.0])),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        )
        .unwrap()
    }

    #[test]
    fn analysis_report_for_degenerate_pair() {
        let sys = degenerate_pair();
        let rep = analyze(&sys, &AnalysisOptions::default()).unwrap();
        assert!(rep.degeneracy.system_degenerate);
        assert_eq!(rep.angles.len(), 1);
        assert_eq!(rep.angles[0].dirichlet, Some(0.5));
        assert!((rep.critical_value.exact.unwrap() - 0.9375).abs() < 1e-12);

        let text = report_json(&sys, &rep).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["A"][1][1], -2.0);
        assert_eq!(v["results"]["degeneracy"]["system_degenerate"], true);
        assert_eq!(v["results"]["angles"][0]["kind"], "rational");
        assert_eq!(v["results"]["angles"][0]["q"], 2);
        assert_eq!(v["results"]["spectral"]["eigenvalues"][0][0], 2.0);
        // The report still parses as a system spec.
        assert_eq!(crate::system::parse_system(&text).unwrap().a(), sys.a());
    }

    #[test]
    fn analysis_refuses_inadmissible_systems() {
        let sys = LinearSystem::with_identity_noise(
            DMatrix::from_diagonal(&DVector::from_row_slice(&[2.0, 0.5])),
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
        )
        .unwrap();
        assert!(matches!(analyze(&sys, &AnalysisOptions::default()), Err(Error::Assumption(_))));
    }

    #[test]
    fn summary_csv_layout() {
        let sys = degenerate_pair();
        let cfg = TrialConfig::new(1.0, 10, 4, 1).unwrap();
        let s = crate::harness::estimate(&sys, &cfg).unwrap();
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, &s).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,mean_trace,q50,q90,q99");
        assert_eq!(lines.len(), 11);
        assert_eq!(lines[1], "0,2,2,2,2");
    }

    #[test]
    fn sweep_csv_layout() {
        let r = SweepResult {
            evaluated_points: vec![SweepPoint {
                p: 0.5,
                horizon: 300,
                verdict: Verdict::Divergent,
                log_slope: 0.25,
                diverged_fraction: 0.5,
            }],
            estimated_pc: 0.75,
            bracket: (0.7, 0.8),
            analytic_pc: None,
            anomalies: Vec::new(),
        };
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &r).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "p,verdict,log_slope,diverged_fraction,horizon,analytic_pc,estimated_pc,bracket_low,bracket_high\n\
             0.5,divergent,0.25,0.5,300,,0.75,0.7,0.8\n"
        );
    }
}
