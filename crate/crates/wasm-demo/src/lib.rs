//! Browser bindings for the `www/` demo page.
//!
//! Every export takes and returns plain strings or numbers so the page needs
//! no glue beyond the generated module.

use nalgebra::DMatrix;
use pcrit::system::AngleHint;
use pcrit::{critical_value, estimate, parse_system, AnalysisOptions, LinearSystem, TrialConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn msg(e: pcrit::Error) -> String {
    e.to_string()
}

/// Analysis report for a system spec, as JSON.
#[wasm_bindgen]
pub fn analyze(spec: &str) -> Result<String, String> {
    let sys = parse_system(spec).map_err(msg)?;
    let report = pcrit::report::analyze(&sys, &AnalysisOptions::default()).map_err(msg)?;
    pcrit::report::report_json(&sys, &report).map_err(msg)
}

#[derive(Serialize)]
struct CurvePoint {
    q: u64,
    pc: f64,
}

#[derive(Serialize)]
struct Curve {
    magnitude: f64,
    points: Vec<CurvePoint>,
    irrational: f64,
}

/// `magnitude` times a rotation by `phi`, observed through its first coordinate.
fn rotation_system(magnitude: f64, phi: f64, hint: AngleHint) -> pcrit::Result<LinearSystem> {
    let a = DMatrix::from_row_slice(2, 2, &[phi.cos(), -phi.sin(), phi.sin(), phi.cos()]) * magnitude;
    let sys = LinearSystem::with_identity_noise(a, DMatrix::from_row_slice(1, 2, &[1.0, 0.0]))?;
    Ok(sys.with_angle_hint(Some(hint)))
}

/// Critical value of a rotation of the given magnitude observed through one
/// coordinate, for eigenvalue angles `2 pi / q`, `q = 2..=max_q`, and for an
/// irrational angle.
#[wasm_bindgen]
pub fn angle_curve(magnitude: f64, max_q: u32) -> Result<String, String> {
    if !(magnitude > 0.0 && magnitude.is_finite()) || max_q < 2 || max_q > 200 {
        return Err("need magnitude > 0 and 2 <= max_q <= 200".into());
    }
    let opts = AnalysisOptions::default();
    let value = |phi: f64, hint: AngleHint| -> Result<f64, String> {
        let cv = critical_value(&rotation_system(magnitude, phi, hint).map_err(msg)?, &opts).map_err(msg)?;
        Ok(cv.exact.unwrap_or(cv.lower))
    };
    let mut points = Vec::new();
    for q in 2..=max_q as u64 {
        // A rotation by pi / q puts the eigenvalues 2 pi / q apart.
        let phi = std::f64::consts::PI / q as f64;
        points.push(CurvePoint {
            q,
            pc: value(phi, AngleHint::rational(1, q).map_err(msg)?)?,
        });
    }
    let irrational = value(0.5, AngleHint::Irrational)?;
    serde_json::to_string(&Curve {
        magnitude,
        points,
        irrational,
    })
    .map_err(|e| e.to_string())
}

/// Monte Carlo summary (mean and quantiles of `trace(P_k)`, verdict) as JSON.
#[wasm_bindgen]
pub fn simulate(spec: &str, p: f64, horizon: u32, trials: u32, seed: u32) -> Result<String, String> {
    let sys = parse_system(spec).map_err(msg)?;
    let cfg = TrialConfig::new(p, horizon as usize, trials as usize, seed as u64).map_err(msg)?;
    let summary = estimate(&sys, &cfg).map_err(msg)?;
    serde_json::to_string(&summary).map_err(|e| e.to_string())
}
