//! Probes coupling the grid solvers to the measure/metric layer: the
//! mollification commutator of the density flow, Monte-Carlo evaluation of a
//! value tensor against product measures, and a direct feedback-control
//! search for an upper bound on the noisy mean-field value.

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::measures::{sample_iid, GridDensity, Measure, MollifierKernel};
use crate::metrics::dual_norm_diff;
use crate::seeds::{derive_seed, rng_from_seed};
use rand::Rng;

use super::{solve_fp_common_noise, CommonNoisePath, FeedbackControl, ProblemData, ValueTensor};

/// Circular convolution of an arbitrary cell vector with the mollifier's
/// discrete weights (sum 1, centered).
fn mollify_vector(values: &[f64], kernel: &MollifierKernel) -> Result<Vec<f64>> {
    let r = values.len();
    let w = kernel.discrete_weights(r)?;
    let half = w.len() / 2;
    let mut out = vec![0.0; r];
    for (o, wv) in w.iter().enumerate() {
        if *wv == 0.0 {
            continue;
        }
        let shift = o as isize - half as isize;
        for j in 0..r {
            let src = (j as isize - shift).rem_euclid(r as isize) as usize;
            out[j] += wv * values[src];
        }
    }
    Ok(out)
}

/// Measures how far evolving a mollified density differs from mollifying
/// the evolved density, when the mollified flow uses the compatibility
/// drift `α^δ = ρ_δ*(α⁰ m) / (ρ_δ*m)`. Returns
/// `sup_{0 < t ≤ h} ‖m_t^δ − ρ_δ*m_t‖_{H^{-3}} / t`.
pub fn commutator_probe(
    alpha0: &[f64],
    delta: f64,
    data: &ProblemData,
    m0: &GridDensity,
    path: &CommonNoisePath,
    horizon: f64,
) -> Result<f64> {
    let r = m0.resolution[0];
    if alpha0.len() != r {
        return Err(Error::InvalidParameter("drift field must match the grid".into()));
    }
    let steps = (horizon / path.dt).round() as usize;
    if steps == 0 || steps > path.increments.len() {
        return Err(Error::InvalidParameter("path does not cover the probe horizon".into()));
    }
    let floor = m0.masses.iter().copied().fold(f64::INFINITY, f64::min) * r as f64;
    if floor < 1e-6 {
        return Err(Error::InvalidParameter(
            "initial density must be bounded away from zero".into(),
        ));
    }
    let kernel = MollifierKernel::gaussian(delta)?;
    let bound = alpha0.iter().fold(0.0f64, |a, &b| a.max(b.abs())) + 1e-9;
    let sub = CommonNoisePath {
        dt: path.dt,
        sigma0: path.sigma0,
        increments: path.increments[..steps].to_vec(),
    };

    // un-mollified flow
    let base_ctrl = FeedbackControl::new(vec![alpha0.to_vec()], horizon, bound)?;
    let base_flow = solve_fp_common_noise(&base_ctrl, data, m0, &sub)?;

    // compatibility drift per step, from the un-mollified flow
    let mut delta_ctrl_rows = Vec::with_capacity(steps);
    for g in base_flow.iter().take(steps) {
        let weighted: Vec<f64> =
            alpha0.iter().zip(&g.masses).map(|(&a, &m)| a * m).collect();
        let num = mollify_vector(&weighted, &kernel)?;
        let den = mollify_vector(&g.masses, &kernel)?;
        let row: Vec<f64> = num
            .iter()
            .zip(&den)
            .map(|(&nu, &de)| if de > 1e-300 { nu / de } else { 0.0 })
            .collect();
        delta_ctrl_rows.push(row);
    }
    let d_bound = delta_ctrl_rows
        .iter()
        .flat_map(|row| row.iter().map(|v| v.abs()))
        .fold(0.0f64, f64::max)
        + 1e-9;
    let delta_ctrl = FeedbackControl::new(delta_ctrl_rows, horizon, d_bound)?;

    // mollified initial data
    let m0_masses = mollify_vector(&m0.masses, &kernel)?;
    let m0_delta = GridDensity::new(Domain::torus(1), vec![r], m0_masses)?;
    let delta_flow = solve_fp_common_noise(&delta_ctrl, data, &m0_delta, &sub)?;

    let mut worst = 0.0f64;
    for k in 1..=steps {
        let t = k as f64 * path.dt;
        let target_masses = mollify_vector(&base_flow[k].masses, &kernel)?;
        let target = GridDensity::new(Domain::torus(1), vec![r], target_masses)?;
        let norm = dual_norm_diff(
            &Measure::Grid(delta_flow[k].clone()),
            &Measure::Grid(target),
            3,
        )?;
        worst = worst.max(norm / t);
    }
    Ok(worst)
}

/// Monte-Carlo average of the value tensor at its earliest stored time over
/// configurations `x ~ m^{⊗N}`. Returns (estimate, standard error).
pub fn integrated_value_mc(
    v: &ValueTensor,
    m: &Measure,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if samples < 100 {
        return Err(Error::InvalidParameter("need at least 100 samples".into()));
    }
    if m.domain().dim() != 1 {
        return Err(Error::Unsupported("value tensors carry 1-D particles".into()));
    }
    let mut vals = Vec::with_capacity(samples);
    for s in 0..samples {
        let pts = sample_iid(m, v.n, derive_seed(seed, &format!("ivmc/{s}")))?;
        let x: Vec<f64> = pts.into_iter().map(|p| p[0]).collect();
        vals.push(v.at(0, &x));
    }
    let mean = vals.iter().sum::<f64>() / samples as f64;
    let var = vals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
        / (samples - 1) as f64;
    Ok((mean, (var / samples as f64).sqrt()))
}

/// Cost of one feedback control: mean over the supplied paths of
/// `∫ ∫ ½α² dm_t dt + G(m_T)`, plus the per-path standard error.
fn control_cost(
    control: &FeedbackControl,
    data: &ProblemData,
    m0: &GridDensity,
    paths: &[CommonNoisePath],
) -> Result<(f64, f64)> {
    let r = m0.resolution[0];
    let h = 1.0 / r as f64;
    let mut costs = Vec::with_capacity(paths.len());
    for path in paths {
        let flow = solve_fp_common_noise(control, data, m0, path)?;
        let mut run = 0.0;
        for (k, g) in flow.iter().enumerate().take(flow.len() - 1) {
            let t = k as f64 * path.dt;
            let mut acc = 0.0;
            for j in 0..r {
                let a = control.at(t, (j as f64 + 0.5) * h);
                acc += 0.5 * a * a * g.masses[j];
            }
            run += acc * path.dt;
        }
        let terminal = data.terminal.evaluate(&Measure::Grid(flow.last().unwrap().clone()))?;
        costs.push(run + terminal);
    }
    let n = costs.len() as f64;
    let mean = costs.iter().sum::<f64>() / n;
    let var = costs.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Simultaneous-perturbation descent over piecewise-constant feedback
/// controls, evaluated with common random numbers. The returned value is
/// the sampled cost of a feasible control, hence a certified (up to MC
/// error) upper bound on the feedback value.
pub fn feedback_value_search(
    data: &ProblemData,
    m0: &GridDensity,
    slabs: usize,
    iters: usize,
    seed: u64,
) -> Result<(f64, FeedbackControl, f64)> {
    if data.eta <= 0.0 {
        return Err(Error::InvalidParameter("feedback search needs η > 0".into()));
    }
    let r = m0.resolution[0];
    let lg = data.terminal.lipschitz.unwrap_or(1.0);
    let bound = 2.0 * lg + 1.0;
    let h = 1.0 / r as f64;
    let dt_cap = (h / bound).min(data.horizon / (slabs as f64 * 4.0));
    let steps = (data.horizon / dt_cap).ceil() as usize;
    let dt = data.horizon / steps as f64;
    let n_paths = 8;
    let paths: Vec<CommonNoisePath> = (0..n_paths)
        .map(|p| {
            CommonNoisePath::sample(
                steps,
                dt,
                (2.0 * data.a0).sqrt(),
                derive_seed(seed, &format!("fb-path/{p}")),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let mut control = FeedbackControl::zero(slabs, r, data.horizon, bound);
    let (mut best_cost, mut best_err) = control_cost(&control, data, m0, &paths)?;
    let mut rng = rng_from_seed(derive_seed(seed, "fb-spsa"));
    for it in 0..iters {
        let c = 0.1 * bound / (1.0 + it as f64).powf(0.2);
        let signs: Vec<Vec<f64>> = (0..slabs)
            .map(|_| (0..r).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect())
            .collect();
        let perturb = |base: &FeedbackControl, scale: f64| -> FeedbackControl {
            let values: Vec<Vec<f64>> = base
                .values
                .iter()
                .zip(&signs)
                .map(|(row, srow)| {
                    row.iter()
                        .zip(srow)
                        .map(|(&v, &s)| (v + scale * s).clamp(-bound, bound))
                        .collect()
                })
                .collect();
            FeedbackControl { values, horizon: base.horizon, bound }
        };
        let (jp, _) = control_cost(&perturb(&control, c), data, m0, &paths)?;
        let (jm, _) = control_cost(&perturb(&control, -c), data, m0, &paths)?;
        let slope = (jp - jm) / (2.0 * c);
        // monotone line search along the descent direction
        let mut step = 0.5 * bound;
        for _ in 0..8 {
            let cand = perturb(&control, -step * slope.signum().max(-1.0) * slope.abs().min(1.0));
            let (jc, ec) = control_cost(&cand, data, m0, &paths)?;
            if jc < best_cost {
                control = cand;
                best_cost = jc;
                best_err = ec;
                break;
            }
            step *= 0.5;
        }
    }
    Ok((best_cost, control, best_err))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hopflax::TerminalCost;
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn uniform(r: usize) -> GridDensity {
        GridDensity::uniform(Domain::torus(1), vec![r]).unwrap()
    }

    #[test]
    fn mollify_vector_preserves_means_and_constants() {
        let kernel = MollifierKernel::gaussian(0.1).unwrap();
        let constant = vec![0.5; 64];
        let out = mollify_vector(&constant, &kernel).unwrap();
        for v in out {
            assert_abs_diff_eq!(v, 0.5, epsilon = 1e-10);
        }
        let spike: Vec<f64> = (0..64).map(|j| if j == 10 { 1.0 } else { 0.0 }).collect();
        let sm = mollify_vector(&spike, &kernel).unwrap();
        assert_abs_diff_eq!(sm.iter().sum::<f64>(), 1.0, epsilon = 1e-10);
        assert!(sm[10] < 1.0 && sm[10] > sm[20]);
    }

    #[test]
    fn integrated_value_exact_on_node_dirac() {
        let g = TerminalCost::linear(
            Arc::new(|x: &[f64]| (2.0 * std::f64::consts::PI * x[0]).sin()),
            None,
        );
        let data = ProblemData::constant_diffusion(0.25, 0.08, 0.0, 0.0, g).unwrap();
        let vt = super::super::solve_hjb_nparticle(&data, 1, 32, None).unwrap();
        let m = Measure::Empirical(
            crate::measures::EmpiricalMeasure::dirac(Domain::torus(1), vec![0.25]).unwrap(),
        );
        let (est, err) = integrated_value_mc(&vt, &m, 200, 4).unwrap();
        assert_abs_diff_eq!(est, vt.values[0][8], epsilon = 1e-12);
        assert!(err < 1e-12);
        assert!(integrated_value_mc(&vt, &m, 50, 4).is_err());
    }

    #[test]
    fn integrated_value_on_constant_tensor() {
        let vt = ValueTensor {
            n: 2,
            resolution: 16,
            dt: 0.1,
            horizon: 1.0,
            times: vec![0.0],
            values: vec![vec![2.5; 256]],
        };
        let m = Measure::Grid(uniform(16));
        let (est, err) = integrated_value_mc(&vt, &m, 150, 9).unwrap();
        assert_abs_diff_eq!(est, 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(err, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn commutator_vanishes_for_constant_diffusion() {
        let data =
            ProblemData::constant_diffusion(1.0, 0.05, 0.03, 0.0, TerminalCost::zero()).unwrap();
        let r = 64;
        let alpha0: Vec<f64> =
            (0..r).map(|j| 0.4 * (2.0 * std::f64::consts::PI * j as f64 / r as f64).sin()).collect();
        let path = CommonNoisePath::zero(100, 2e-3);
        let probe = commutator_probe(&alpha0, 0.1, &data, &uniform(r), &path, 0.2).unwrap();
        assert!(probe < 0.2, "constant-A commutator {probe}");
    }

    #[test]
    fn commutator_grows_with_variable_diffusion() {
        let a = Arc::new(|x: f64| 0.1 + 0.05 * (2.0 * std::f64::consts::PI * x).sin());
        let data = ProblemData::new(1.0, 0.02, a, 0.0, TerminalCost::zero()).unwrap();
        let r = 64;
        let alpha0: Vec<f64> =
            (0..r).map(|j| 0.4 * (2.0 * std::f64::consts::PI * j as f64 / r as f64).cos()).collect();
        let path = CommonNoisePath::zero(100, 2e-3);
        let var = commutator_probe(&alpha0, 0.1, &data, &uniform(r), &path, 0.2).unwrap();
        let const_data =
            ProblemData::constant_diffusion(1.0, 0.02, 0.125, 0.0, TerminalCost::zero()).unwrap();
        let flat = commutator_probe(&alpha0, 0.1, &const_data, &uniform(r), &path, 0.2).unwrap();
        assert!(var > flat, "variable {var} vs constant {flat}");
    }

    #[test]
    fn commutator_rejects_vacuum_regions() {
        let data =
            ProblemData::constant_diffusion(1.0, 0.05, 0.0, 0.0, TerminalCost::zero()).unwrap();
        let r = 32;
        let mut masses = vec![0.0; r];
        masses[0] = 1.0;
        let m0 = GridDensity::new(Domain::torus(1), vec![r], masses).unwrap();
        let path = CommonNoisePath::zero(10, 1e-3);
        assert!(commutator_probe(&vec![0.0; r], 0.1, &data, &m0, &path, 0.01).is_err());
    }

    #[test]
    fn feedback_search_recovers_constant_cost() {
        let g = TerminalCost::linear(Arc::new(|_: &[f64]| 0.9), Some(0.0));
        let data = ProblemData::constant_diffusion(0.25, 0.05, 0.0, 0.0, g).unwrap();
        let (value, control, err) = feedback_value_search(&data, &uniform(32), 2, 6, 13).unwrap();
        assert_abs_diff_eq!(value, 0.9, epsilon = 1e-6);
        assert!(control.max_abs() < 1e-9, "control magnitude {}", control.max_abs());
        assert!(err < 1e-9);
    }

    #[test]
    fn feedback_search_improves_on_zero_control() {
        // steering toward the cosine minimum pays off against G = ∫cos
        let g = TerminalCost::linear(
            Arc::new(|x: &[f64]| 0.5 * (2.0 * std::f64::consts::PI * x[0]).cos()),
            Some(0.5 * 2.0 * std::f64::consts::PI),
        );
        let data = ProblemData::constant_diffusion(0.5, 0.05, 0.0, 0.0, g).unwrap();
        let zero_cost = {
            let ctrl = FeedbackControl::zero(2, 32, 0.5, 1.0);
            let dt: f64 = (1.0 / 32.0) / 1.0;
            let steps = (0.5 / dt).ceil() as usize;
            let path = CommonNoisePath::zero(steps, 0.5 / steps as f64);
            control_cost(&ctrl, &data, &uniform(32), &[path]).unwrap().0
        };
        let (value, _, _) = feedback_value_search(&data, &uniform(32), 2, 12, 5).unwrap();
        assert!(value <= zero_cost + 1e-9, "search {value} vs zero-control {zero_cost}");
    }
}
