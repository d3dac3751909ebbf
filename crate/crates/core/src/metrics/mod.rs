//! Distances between measures: total variation, 1- and 2-Wasserstein, the
//! Fourier-weighted `H^{-s}` dual norm, and a `W^{-2,∞}` lower-bound
//! estimator.

mod assignment;
mod cdf;
mod flow;
mod w2inf;

pub use cdf::OneD;
pub use w2inf::w2inf_dual_estimate;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{fourier_coeffs, FourierCoeffs};
use crate::measures::Measure;

/// Support cap for the d ≥ 2 flow solver.
const FLOW_SUPPORT_CAP: usize = 4096;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub value: f64,
    pub method: String,
    pub error_bound: f64,
}

impl MetricReport {
    fn exact(value: f64, method: &str) -> Self {
        MetricReport { value, method: method.to_string(), error_bound: 1e-12 }
    }
}

fn check_domains(m: &Measure, mp: &Measure) -> Result<()> {
    if m.domain() != mp.domain() {
        return Err(Error::DomainMismatch(format!(
            "{:?} vs {:?}",
            m.domain(),
            mp.domain()
        )));
    }
    Ok(())
}

/// Total variation with the half-L1 convention: `TV(δ_x, δ_y) = 1` for
/// `x ≠ y`. Requires matching representations (bin to a common grid first
/// for mixed comparisons).
pub fn tv_distance(m: &Measure, mp: &Measure) -> Result<f64> {
    check_domains(m, mp)?;
    match (m, mp) {
        (Measure::Empirical(a), Measure::Empirical(b)) => {
            let mut support: Vec<(&[f64], f64)> = Vec::new();
            for (atoms, weights, sign) in
                [(&a.atoms, &a.weights, 1.0), (&b.atoms, &b.weights, -1.0)]
            {
                for (p, &w) in atoms.iter().zip(weights.iter()) {
                    match support.iter_mut().find(|(q, _)| *q == p.as_slice()) {
                        Some(entry) => entry.1 += sign * w,
                        None => support.push((p.as_slice(), sign * w)),
                    }
                }
            }
            Ok(0.5 * support.iter().map(|(_, w)| w.abs()).sum::<f64>())
        }
        (Measure::Grid(a), Measure::Grid(b)) => {
            if a.resolution != b.resolution {
                return Err(Error::DomainMismatch(
                    "grids must share a resolution for TV".into(),
                ));
            }
            Ok(0.5
                * a.masses
                    .iter()
                    .zip(&b.masses)
                    .map(|(&x, &y)| (x - y).abs())
                    .sum::<f64>())
        }
        _ => Err(Error::DomainMismatch(
            "TV needs a common representation; bin the empirical first".into(),
        )),
    }
}

fn support_points(m: &Measure) -> Vec<(Vec<f64>, f64)> {
    match m {
        Measure::Empirical(e) => e
            .atoms
            .iter()
            .zip(&e.weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(p, &w)| (p.clone(), w))
            .collect(),
        Measure::Grid(g) => (0..g.n_cells())
            .filter(|&i| g.masses[i] > 0.0)
            .map(|i| (g.cell_center(i), g.masses[i]))
            .collect(),
    }
}

fn uniform_equal_empiricals<'a>(
    m: &'a Measure,
    mp: &'a Measure,
) -> Option<(&'a crate::measures::EmpiricalMeasure, &'a crate::measures::EmpiricalMeasure)> {
    if let (Measure::Empirical(a), Measure::Empirical(b)) = (m, mp) {
        let n = a.atoms.len();
        if b.atoms.len() == n {
            let w = 1.0 / n as f64;
            let uni =
                |e: &crate::measures::EmpiricalMeasure| e.weights.iter().all(|&x| (x - w).abs() < 1e-12);
            if uni(a) && uni(b) {
                return Some((a, b));
            }
        }
    }
    None
}

fn wasserstein(m: &Measure, mp: &Measure, squared: bool) -> Result<MetricReport> {
    check_domains(m, mp)?;
    let domain = m.domain();
    let d = domain.dim();
    if d == 1 {
        let a = OneD::from_measure(m)?;
        let b = OneD::from_measure(mp)?;
        return Ok(if domain.is_torus() {
            if squared {
                let v = cdf::d2_sq_circle(&a, &b).max(0.0);
                MetricReport {
                    value: v.sqrt(),
                    method: "quantile-1d-circle-cutsearch".into(),
                    error_bound: 1e-6 * v.sqrt() + 1e-12,
                }
            } else {
                MetricReport::exact(cdf::d1_circle(&a, &b), "cdf-1d-circle")
            }
        } else if squared {
            MetricReport::exact(cdf::d2_sq_line(&a, &b).max(0.0).sqrt(), "quantile-1d")
        } else {
            MetricReport::exact(cdf::d1_line(&a, &b), "cdf-1d")
        });
    }
    // d ≥ 2
    let ground = |x: &[f64], y: &[f64]| -> f64 {
        let dist = domain.distance(x, y);
        if squared {
            dist * dist
        } else {
            dist
        }
    };
    if let Some((a, b)) = uniform_equal_empiricals(m, mp) {
        let n = a.atoms.len();
        let mut cost = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                cost[i * n + j] = ground(&a.atoms[i], &b.atoms[j]);
            }
        }
        let (_, total) = assignment::solve(&cost, n);
        let v = total / n as f64;
        return Ok(MetricReport::exact(
            if squared { v.max(0.0).sqrt() } else { v },
            "assignment",
        ));
    }
    match (m, mp) {
        (Measure::Empirical(_), Measure::Grid(_)) | (Measure::Grid(_), Measure::Empirical(_)) => {
            Err(Error::DomainMismatch(
                "mixed empirical/grid transport in d ≥ 2 needs a common discretization".into(),
            ))
        }
        _ => {
            let src = support_points(m);
            let snk = support_points(mp);
            if src.len() > FLOW_SUPPORT_CAP || snk.len() > FLOW_SUPPORT_CAP {
                return Err(Error::Unsupported(format!(
                    "support exceeds the {FLOW_SUPPORT_CAP}-cell flow cap"
                )));
            }
            let nt = snk.len();
            let mut cost = vec![0.0; src.len() * nt];
            for (i, (p, _)) in src.iter().enumerate() {
                for (j, (q, _)) in snk.iter().enumerate() {
                    cost[i * nt + j] = ground(p, q);
                }
            }
            let supply: Vec<f64> = src.iter().map(|&(_, w)| w).collect();
            let demand: Vec<f64> = snk.iter().map(|&(_, w)| w).collect();
            let v = flow::transport(&supply, &demand, &cost, nt);
            Ok(MetricReport {
                value: if squared { v.max(0.0).sqrt() } else { v },
                method: "min-cost-flow".into(),
                error_bound: 1e-10,
            })
        }
    }
}

/// 1-Wasserstein distance; exact in d = 1 (CDF route) and for empirical
/// pairs in d ≥ 2 (assignment / flow).
pub fn d1(m: &Measure, mp: &Measure) -> Result<MetricReport> {
    wasserstein(m, mp, false)
}

/// 2-Wasserstein distance; 1-D via the quantile coupling.
pub fn d2(m: &Measure, mp: &Measure) -> Result<MetricReport> {
    wasserstein(m, mp, true)
}

/// `H^{-s}` dual norm of the signed difference through the Fourier-weighted
/// equivalent norm: `‖q‖_{−s} = (Σ_k |q̂(k)|²/(1+|k|^s)²)^{1/2}` over the
/// stored truncation, with `|k|` the Euclidean frequency norm. `s = 0` is
/// accepted as the plain (unweighted) Plancherel norm of the density.
pub fn sobolev_dual_norm(q: &FourierCoeffs, s: i32) -> Result<f64> {
    if s < 0 {
        return Err(Error::InvalidParameter("Sobolev index must be ≥ 0".into()));
    }
    let mut acc = 0.0;
    for (flat, k) in q.frequencies() {
        let knorm = k.iter().map(|&ki| (ki * ki) as f64).sum::<f64>().sqrt();
        let weight = if s == 0 { 1.0 } else { 1.0 + knorm.powi(s) };
        acc += q.coeffs[flat].norm_sqr() / (weight * weight);
    }
    Ok(acc.sqrt())
}

/// Truncation making the worst-case tail of the squared norm below `tol²`
/// (atoms have non-decaying coefficients, so the bound uses `|q̂| ≤ 2`).
/// Only practical for `s ≥ 2`.
pub fn required_truncation(s: i32, tol: f64) -> i64 {
    // tail ≤ Σ_{|k|>K} 4/k^{2s} ≤ 8·K^{1−2s}/(2s−1)
    let s = s.max(2) as f64;
    let k = (8.0 / ((2.0 * s - 1.0) * tol * tol)).powf(1.0 / (2.0 * s - 1.0));
    (k.ceil() as i64).max(8)
}

/// Convenience: `‖m − m′‖_{−s}` with an automatically chosen truncation
/// (d = 1 torus).
pub fn dual_norm_diff(m: &Measure, mp: &Measure, s: i32) -> Result<f64> {
    check_domains(m, mp)?;
    let k = required_truncation(s, 1e-7);
    let fa = fourier_coeffs(m, k)?;
    let fb = fourier_coeffs(mp, k)?;
    sobolev_dual_norm(&fa.sub(&fb)?, s)
}
