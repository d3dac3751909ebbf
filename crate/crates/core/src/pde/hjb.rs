//! Explicit monotone finite-difference solver for the N-particle HJB
//! equation on `(T^1)^N` with idiosyncratic and common noise, and the
//! derivative / vanishing-viscosity probes built on it.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hopflax::{vn_deterministic, CostKind};
use crate::rates::{RateRow, RateTable};

use super::{running_value, terminal_value, ProblemData, ValueTensor};

const MAX_STORED_SLICES: usize = 65;

struct Grid {
    n: usize,
    r: usize,
    strides: Vec<usize>,
}

impl Grid {
    fn new(n: usize, r: usize) -> Self {
        let mut strides = vec![1usize; n];
        for i in (0..n.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * r;
        }
        Grid { n, r, strides }
    }

    fn nodes(&self) -> usize {
        self.r.pow(self.n as u32)
    }

    fn axis_index(&self, flat: usize, axis: usize) -> usize {
        (flat / self.strides[axis]) % self.r
    }

    fn shift_up(&self, flat: usize, axis: usize) -> usize {
        if self.axis_index(flat, axis) == self.r - 1 {
            flat - (self.r - 1) * self.strides[axis]
        } else {
            flat + self.strides[axis]
        }
    }

    fn shift_down(&self, flat: usize, axis: usize) -> usize {
        if self.axis_index(flat, axis) == 0 {
            flat + (self.r - 1) * self.strides[axis]
        } else {
            flat - self.strides[axis]
        }
    }
}

fn max_central_gradient(grid: &Grid, v: &[f64], h: f64) -> f64 {
    let mut worst = 0.0f64;
    for flat in 0..grid.nodes() {
        for i in 0..grid.n {
            let g = (v[grid.shift_up(flat, i)] - v[grid.shift_down(flat, i)]) / (2.0 * h);
            worst = worst.max(g.abs());
        }
    }
    worst
}

/// Backward explicit march for
/// `−∂_t V − Σ_i (η + A(x_i) + A0) D²_ii V − A0 Σ_{i≠j} D²_ij V
///  + (1/N) Σ_i H(x_i, N D_i V) = F`,
/// terminal condition `G` on the empirical measure of the grid node.
/// Lax-Friedrichs Hamiltonian, mixed terms by the monotone 4-point cross
/// stencil; both monotonicity requirements (diagonal dominance and the CFL
/// bound) are enforced, not assumed.
pub fn solve_hjb_nparticle(
    data: &ProblemData,
    n: usize,
    resolution: usize,
    dt: Option<f64>,
) -> Result<ValueTensor> {
    if n == 0 || n > 3 {
        return Err(Error::Unsupported("particle count must be in 1..=3".into()));
    }
    if resolution < 8 {
        return Err(Error::InvalidParameter("need at least 8 nodes per axis".into()));
    }
    let r = resolution;
    let h = 1.0 / r as f64;
    let grid = Grid::new(n, r);

    // diagonal dominance needed by the cross stencil
    if data.a0 > 0.0 && n > 1 {
        let slack = data.eta + data.a_min(r) - (n as f64 - 1.0) * data.a0;
        if slack < -1e-12 {
            return Err(Error::MonotonicityViolation(format!(
                "cross stencil needs η + A(x) ≥ (N−1)·A0; deficit {:.3e}",
                -slack
            )));
        }
    }

    let a_axis: Vec<f64> = (0..r).map(|j| (data.a)(j as f64 / r as f64)).collect();
    if a_axis.iter().any(|&a| a < 0.0) {
        return Err(Error::InvalidParameter("A(x) must be nonnegative".into()));
    }
    let diag_axis: Vec<f64> = a_axis.iter().map(|&a| data.eta + a + data.a0).collect();
    let diag_max = diag_axis.iter().copied().fold(0.0f64, f64::max);

    // terminal slice
    let mut coords = vec![0.0f64; n];
    let mut v: Vec<f64> = Vec::with_capacity(grid.nodes());
    let linear_axis: Option<Vec<f64>> = match &data.terminal.kind {
        CostKind::Linear(g) if data.cost_kernel.is_none() => {
            Some((0..r).map(|j| g(&[j as f64 / r as f64])).collect())
        }
        _ => None,
    };
    for flat in 0..grid.nodes() {
        for i in 0..n {
            coords[i] = grid.axis_index(flat, i) as f64 / r as f64;
        }
        let tv = match &linear_axis {
            Some(ga) => {
                (0..n).map(|i| ga[grid.axis_index(flat, i)]).sum::<f64>() / n as f64
            }
            None => terminal_value(data, &coords)?,
        };
        v.push(tv);
    }
    let source: Option<Vec<f64>> = if data.running.is_some() {
        let mut f = Vec::with_capacity(grid.nodes());
        for flat in 0..grid.nodes() {
            for i in 0..n {
                coords[i] = grid.axis_index(flat, i) as f64 / r as f64;
            }
            f.push(running_value(data, &coords)?);
        }
        Some(f)
    } else {
        None
    };

    // fixed dissipation constant from the terminal gradient; the monotone
    // range is re-checked every step
    let g_term = max_central_gradient(&grid, &v, h);
    let theta = data.lf_floor.max(1.1 * n as f64 * g_term + 0.1);
    let denom = n as f64 * 2.0 * diag_max / (h * h)
        + (n * (n - 1)) as f64 * data.a0 / (h * h)
        + n as f64 * theta / h;
    let dt_bound = 0.95 / denom;
    let mut step = match dt {
        Some(d) => {
            if d > dt_bound {
                return Err(Error::CflViolation { dt: d, bound: dt_bound });
            }
            d
        }
        None => 0.9 * dt_bound,
    };
    let steps = (data.horizon / step).ceil() as usize;
    step = data.horizon / steps as f64;

    let stride = (steps / (MAX_STORED_SLICES - 1)).max(1);
    let mut times: Vec<f64> = vec![data.horizon];
    let mut values: Vec<Vec<f64>> = vec![v.clone()];

    let pairs: Vec<(usize, usize)> =
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let half_n = n as f64 / 2.0;

    let mut new_v = vec![0.0f64; grid.nodes()];
    for k in 1..=steps {
        // monotonicity of the LF Hamiltonian on the current gradient range
        let g_now = max_central_gradient(&grid, &v, h);
        if n as f64 * g_now > theta + 1e-9 {
            return Err(Error::MonotonicityViolation(format!(
                "gradient range {:.3} escaped the dissipation constant {:.3}",
                n as f64 * g_now,
                theta
            )));
        }
        let grid_ref = &grid;
        let v_ref = &v;
        let source_ref = &source;
        let diag_ref = &diag_axis;
        let pairs_ref = &pairs;
        new_v
            .par_iter_mut()
            .enumerate()
            .for_each(|(flat, out)| {
                let vc = v_ref[flat];
                let mut rhs = 0.0;
                for i in 0..n {
                    let up = v_ref[grid_ref.shift_up(flat, i)];
                    let dn = v_ref[grid_ref.shift_down(flat, i)];
                    let aii = diag_ref[grid_ref.axis_index(flat, i)];
                    rhs += aii * (up + dn - 2.0 * vc) / (h * h);
                    let p_plus = (up - vc) / h;
                    let p_minus = (vc - dn) / h;
                    let s = 0.5 * (p_plus + p_minus);
                    let ham = half_n * s * s - 0.5 * theta * (p_plus - p_minus);
                    rhs -= ham;
                }
                for &(i, j) in pairs_ref {
                    let fi = grid_ref.shift_up(flat, i);
                    let fd = grid_ref.shift_down(flat, i);
                    let vpp = v_ref[grid_ref.shift_up(fi, j)];
                    let vmm = v_ref[grid_ref.shift_down(fd, j)];
                    let vp0 = v_ref[fi];
                    let vm0 = v_ref[fd];
                    let v0p = v_ref[grid_ref.shift_up(flat, j)];
                    let v0m = v_ref[grid_ref.shift_down(flat, j)];
                    rhs += data.a0 * (vpp + vmm - vp0 - vm0 - v0p - v0m + 2.0 * vc)
                        / (h * h);
                }
                if let Some(f) = source_ref {
                    rhs += f[flat];
                }
                *out = vc + step * rhs;
            });
        std::mem::swap(&mut v, &mut new_v);
        if k % stride == 0 || k == steps {
            times.push(data.horizon - k as f64 * step);
            values.push(v.clone());
        }
    }
    times.reverse();
    values.reverse();
    Ok(ValueTensor { n, resolution: r, dt: step, horizon: data.horizon, times, values })
}

/// Sup-norms of first and second centered differences over all stored
/// slices: `(max_i ‖D_i V‖_∞, max_i ‖D²_ii V‖_∞)`.
pub fn hjb_gradient_probe(v: &ValueTensor) -> Result<(f64, f64)> {
    if v.resolution < 32 {
        return Err(Error::InvalidParameter("probe needs ≥ 32 nodes per axis".into()));
    }
    let grid = Grid::new(v.n, v.resolution);
    let h = 1.0 / v.resolution as f64;
    let mut g1 = 0.0f64;
    let mut g2 = 0.0f64;
    for slice in &v.values {
        for flat in 0..grid.nodes() {
            for i in 0..v.n {
                let up = slice[grid.shift_up(flat, i)];
                let dn = slice[grid.shift_down(flat, i)];
                let c = slice[flat];
                g1 = g1.max(((up - dn) / (2.0 * h)).abs());
                g2 = g2.max(((up + dn - 2.0 * c) / (h * h)).abs());
            }
        }
    }
    Ok((g1, g2))
}

/// Sup-grid distance between the viscous solve and the exact zero-noise
/// value (from the inf-convolution formula) per viscosity level. Requires a
/// configuration where the zero-noise value is exactly computable:
/// `A ≡ 0`, `A0 = 0`.
pub fn viscosity_rate_probe(
    data: &ProblemData,
    n: usize,
    etas: &[f64],
    resolution: usize,
) -> Result<RateTable> {
    if data.a0 != 0.0 || data.a_max(resolution.max(64)) != 0.0 {
        return Err(Error::InvalidParameter(
            "zero-viscosity oracle needs A ≡ 0 and A0 = 0".into(),
        ));
    }
    let mut sorted = etas.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let grid = Grid::new(n, resolution);

    // exact η = 0 values on the grid nodes
    let oracle: Vec<f64> = (0..grid.nodes())
        .into_par_iter()
        .map(|flat| {
            let x: Vec<Vec<f64>> = (0..n)
                .map(|i| vec![grid.axis_index(flat, i) as f64 / resolution as f64])
                .collect();
            vn_deterministic(0.0, &x, &data.terminal, data.horizon).map(|s| s.value)
        })
        .collect::<Result<Vec<f64>>>()?;

    let rows = sorted
        .par_iter()
        .map(|&eta| {
            let mut d = data.clone();
            d.eta = eta;
            let vt = solve_hjb_nparticle(&d, n, resolution, None)?;
            let sup = vt.values[0]
                .iter()
                .zip(&oracle)
                .map(|(&a, &b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            Ok(RateRow { param: eta, value: sup, stderr: 0.0 })
        })
        .collect::<Result<Vec<RateRow>>>()?;
    RateTable::from_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hopflax::TerminalCost;
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn cosine_cost(amp: f64) -> TerminalCost {
        TerminalCost::linear(
            Arc::new(move |x: &[f64]| amp * (2.0 * std::f64::consts::PI * x[0]).cos()),
            Some(amp * 2.0 * std::f64::consts::PI),
        )
    }

    #[test]
    fn constants_are_preserved() {
        let g = TerminalCost::linear(Arc::new(|_: &[f64]| 0.7), Some(0.0));
        let data = ProblemData::constant_diffusion(0.5, 0.05, 0.02, 0.01, g).unwrap();
        for n in [1usize, 2] {
            let vt = solve_hjb_nparticle(&data, n, 16, None).unwrap();
            for slice in &vt.values {
                for &v in slice {
                    assert_abs_diff_eq!(v, 0.7, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn terminal_slice_matches_the_cost() {
        let g = cosine_cost(0.3);
        let data = ProblemData::constant_diffusion(0.25, 0.1, 0.0, 0.0, g).unwrap();
        let vt = solve_hjb_nparticle(&data, 1, 32, None).unwrap();
        let last = vt.values.last().unwrap();
        for j in 0..32 {
            let expect = 0.3 * (2.0 * std::f64::consts::PI * j as f64 / 32.0).cos();
            assert_abs_diff_eq!(last[j], expect, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(*vt.times.last().unwrap(), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn two_particle_linear_cost_decouples() {
        let amp = 0.2;
        let g = cosine_cost(amp);
        let a = Arc::new(|x: f64| 0.03 + 0.01 * (2.0 * std::f64::consts::PI * x).sin());
        let data = ProblemData {
            horizon: 0.5,
            eta: 0.05,
            a: a.clone(),
            a0: 0.02,
            hamiltonian: super::super::Hamiltonian::Quadratic,
            terminal: g,
            running: None,
            cost_kernel: None,
            lf_floor: 1.0,
        };
        let r = 32;
        // common dt below both CFL bounds
        let v2 = solve_hjb_nparticle(&data, 2, r, Some(1e-4)).unwrap();
        let v1 = solve_hjb_nparticle(&data, 1, r, Some(1e-4)).unwrap();
        let h = 1.0 / r as f64;
        let mut worst = 0.0f64;
        for j1 in 0..r {
            for j2 in 0..r {
                let expect = 0.5 * (v1.values[0][j1] + v1.values[0][j2]);
                let got = v2.values[0][j1 * r + j2];
                worst = worst.max((got - expect).abs());
            }
        }
        assert!(worst <= 2.0 * h * h, "decoupling deviation {worst}");
    }

    #[test]
    fn discrete_comparison_principle() {
        let g1 = cosine_cost(0.3);
        let g2 = TerminalCost::linear(
            Arc::new(|x: &[f64]| 0.3 * (2.0 * std::f64::consts::PI * x[0]).cos() + 0.1),
            Some(1.9),
        );
        let d1 = ProblemData::constant_diffusion(0.5, 0.08, 0.0, 0.0, g1).unwrap();
        let d2 = ProblemData::constant_diffusion(0.5, 0.08, 0.0, 0.0, g2).unwrap();
        let v1 = solve_hjb_nparticle(&d1, 1, 64, Some(2e-5)).unwrap();
        let v2 = solve_hjb_nparticle(&d2, 1, 64, Some(2e-5)).unwrap();
        for (s1, s2) in v1.values.iter().zip(&v2.values) {
            for (&a, &b) in s1.iter().zip(s2) {
                assert!(a <= b + 1e-10, "comparison violated: {a} > {b}");
            }
        }
    }

    #[test]
    fn permutation_symmetry_for_symmetric_data() {
        let g = cosine_cost(0.25);
        let data = ProblemData::constant_diffusion(0.3, 0.06, 0.01, 0.01, g).unwrap();
        let vt = solve_hjb_nparticle(&data, 2, 24, None).unwrap();
        let r = 24;
        for slice in &vt.values {
            for j1 in 0..r {
                for j2 in 0..r {
                    let d = (slice[j1 * r + j2] - slice[j2 * r + j1]).abs();
                    assert!(d <= 1e-10, "asymmetry {d}");
                }
            }
        }
    }

    #[test]
    fn richardson_self_convergence_is_first_order_or_better() {
        let g = cosine_cost(0.3);
        let mut data = ProblemData::constant_diffusion(0.25, 0.1, 0.0, 0.0, g).unwrap();
        // one dissipation constant across all resolutions, so the leading
        // error term scales cleanly with h
        data.lf_floor = 2.5;
        let dt = 4e-6;
        let sols: Vec<ValueTensor> = [32usize, 64, 128]
            .iter()
            .map(|&r| solve_hjb_nparticle(&data, 1, r, Some(dt)).unwrap())
            .collect();
        // triple form: both errors against the common finest solve
        let err = |coarse: &ValueTensor, fine: &ValueTensor| -> f64 {
            let k = fine.resolution / coarse.resolution;
            (0..coarse.resolution)
                .map(|j| (coarse.values[0][j] - fine.values[0][j * k]).abs())
                .fold(0.0f64, f64::max)
        };
        let e1 = err(&sols[0], &sols[2]);
        let e2 = err(&sols[1], &sols[2]);
        let order = (e1 / e2).log2();
        assert!(order >= 1.0, "observed order {order} (errors {e1:.3e}, {e2:.3e})");
    }

    #[test]
    fn cfl_and_dominance_guards() {
        let g = cosine_cost(0.2);
        let data = ProblemData::constant_diffusion(0.5, 0.1, 0.0, 0.0, g.clone()).unwrap();
        assert!(matches!(
            solve_hjb_nparticle(&data, 1, 64, Some(0.5)),
            Err(Error::CflViolation { .. })
        ));
        // A0 too large for N = 3 diagonal dominance
        let bad = ProblemData::constant_diffusion(0.5, 0.01, 0.0, 0.2, g).unwrap();
        assert!(matches!(
            solve_hjb_nparticle(&bad, 3, 8, None),
            Err(Error::MonotonicityViolation(_))
        ));
    }

    #[test]
    fn gradient_probe_on_constant_is_zero() {
        let g = TerminalCost::linear(Arc::new(|_: &[f64]| 1.3), Some(0.0));
        let data = ProblemData::constant_diffusion(0.2, 0.1, 0.0, 0.0, g).unwrap();
        let vt = solve_hjb_nparticle(&data, 1, 32, None).unwrap();
        let (g1, g2) = hjb_gradient_probe(&vt).unwrap();
        assert_abs_diff_eq!(g1, 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(g2, 0.0, epsilon = 1e-8);
    }

    #[test]
    fn scaled_gradient_is_stable_across_particle_counts() {
        let g = cosine_cost(0.25);
        let data = ProblemData::constant_diffusion(0.3, 0.1, 0.0, 0.0, g).unwrap();
        let mut scaled = Vec::new();
        for n in [1usize, 2] {
            let vt = solve_hjb_nparticle(&data, n, 32, None).unwrap();
            let (g1, _) = hjb_gradient_probe(&vt).unwrap();
            scaled.push(n as f64 * g1);
        }
        let ratio = scaled.iter().fold(0.0f64, |a, &b| a.max(b))
            / scaled.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        assert!(ratio < 2.0, "N-scaled gradient ratio {ratio}");
    }

    #[test]
    fn viscosity_probe_fits_the_square_root_law() {
        let g = cosine_cost(0.3);
        let data = ProblemData::constant_diffusion(0.5, 0.0, 0.0, 0.0, g).unwrap();
        let etas: Vec<f64> = (2..=6).map(|k| 0.5f64.powi(k)).collect();
        let table = viscosity_rate_probe(&data, 1, &etas, 128).unwrap();
        let slope = table.slope().unwrap();
        assert!((slope - 0.5).abs() < 0.15, "slope {slope}");
    }

    #[test]
    fn viscosity_probe_rejects_unoracled_configs() {
        let g = cosine_cost(0.3);
        let data = ProblemData::constant_diffusion(0.5, 0.0, 0.05, 0.0, g).unwrap();
        assert!(viscosity_rate_probe(&data, 1, &[0.1, 0.2, 0.4], 64).is_err());
    }

    #[test]
    fn time_slices_are_square_root_holder() {
        let g = cosine_cost(0.3);
        let data = ProblemData::constant_diffusion(0.5, 0.1, 0.0, 0.0, g).unwrap();
        let vt = solve_hjb_nparticle(&data, 1, 64, None).unwrap();
        let mut c_max = 0.0f64;
        for s in 1..vt.times.len() {
            let dt = vt.times[s] - vt.times[s - 1];
            let sup = vt.values[s]
                .iter()
                .zip(&vt.values[s - 1])
                .map(|(&a, &b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            c_max = c_max.max(sup / dt.sqrt());
        }
        assert!(c_max < 2.0, "time-Hölder constant {c_max}");
    }
}
