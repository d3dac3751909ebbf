//! Fokker-Planck solver on the 1-D torus under a shared noise path. The
//! equation is solved in shifted coordinates (the common-noise transport is
//! removed by evaluating the coefficients at the shifted position), with an
//! explicit upwind drift step and an implicit conservative diffusion step;
//! the output slices are shifted back along the sampled path.

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::measures::{translate, GridDensity, Measure};
use crate::metrics::tv_distance;

use super::{CommonNoisePath, FeedbackControl, ProblemData};

/// Solves the cyclic tridiagonal system arising from the implicit diffusion
/// step by the Thomas algorithm plus a Sherman-Morrison correction.
fn solve_cyclic_tridiag(
    diag: &[f64],
    lower: &[f64], // coefficient of x[j-1] in row j (lower[0] couples to x[n-1])
    upper: &[f64], // coefficient of x[j+1] in row j (upper[n-1] couples to x[0])
    rhs: &[f64],
) -> Vec<f64> {
    let n = diag.len();
    if n == 1 {
        return vec![rhs[0] / (diag[0] + lower[0] + upper[0])];
    }
    let gamma = -diag[0];
    let mut d = diag.to_vec();
    d[0] -= gamma;
    d[n - 1] -= lower[0] * upper[n - 1] / gamma;

    let tri = |d: &[f64], rhs: &[f64]| -> Vec<f64> {
        let mut c = vec![0.0; n];
        let mut x = vec![0.0; n];
        c[0] = upper[0] / d[0];
        x[0] = rhs[0] / d[0];
        for j in 1..n {
            let m = d[j] - lower[j] * c[j - 1];
            if j < n - 1 {
                c[j] = upper[j] / m;
            }
            x[j] = (rhs[j] - lower[j] * x[j - 1]) / m;
        }
        for j in (0..n - 1).rev() {
            x[j] -= c[j] * x[j + 1];
        }
        x
    };

    let y = tri(&d, rhs);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = upper[n - 1];
    let z = tri(&d, &u);
    let vy = y[0] + lower[0] / gamma * y[n - 1];
    let vz = z[0] + lower[0] / gamma * z[n - 1];
    let factor = vy / (1.0 + vz);
    (0..n).map(|j| y[j] - factor * z[j]).collect()
}

/// One flow of cell masses under drift `α` and diffusion `ν(x)`, both read
/// at shifted positions. Returns every intermediate slice in the shifted
/// frame (slice k is the state at time k·dt).
fn march(
    control: &FeedbackControl,
    data: &ProblemData,
    m0: &GridDensity,
    path: &CommonNoisePath,
) -> Result<Vec<Vec<f64>>> {
    let r = m0.resolution[0];
    let h = 1.0 / r as f64;
    let dt = path.dt;
    let alpha_max = control.max_abs();
    if alpha_max > 0.0 && dt > h / alpha_max {
        return Err(Error::CflViolation { dt, bound: h / alpha_max });
    }
    let mut m = m0.masses.clone();
    let mut slices = vec![m.clone()];
    for k in 0..path.increments.len() {
        let t = k as f64 * dt;
        let z = path.sigma0 * path.w0(k);
        // explicit upwind drift in conservative form
        let mut flux = vec![0.0; r]; // flux[j] across the edge between cells j and j+1
        for j in 0..r {
            let edge = (j + 1) as f64 * h;
            let a = control.at(t, edge + z);
            flux[j] = if a >= 0.0 { a * m[j] } else { a * m[(j + 1) % r] };
        }
        let mut star = vec![0.0; r];
        for j in 0..r {
            let inflow = flux[(j + r - 1) % r];
            star[j] = m[j] - dt / h * (flux[j] - inflow);
        }
        // implicit conservative diffusion ∂_xx(ν m)
        let nu: Vec<f64> = (0..r)
            .map(|j| data.eta + (data.a)((j as f64 + 0.5) * h + z))
            .collect();
        let s = dt / (h * h);
        let diag: Vec<f64> = nu.iter().map(|&v| 1.0 + 2.0 * s * v).collect();
        let lower: Vec<f64> = (0..r).map(|j| -s * nu[(j + r - 1) % r]).collect();
        let upper: Vec<f64> = (0..r).map(|j| -s * nu[(j + 1) % r]).collect();
        m = solve_cyclic_tridiag(&diag, &lower, &upper, &star);
        let total: f64 = m.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Numerical(format!("mass drifted to {total}")));
        }
        if m.iter().any(|&v| v < -1e-12) {
            return Err(Error::Numerical("negative cell mass in the density flow".into()));
        }
        slices.push(m.clone());
    }
    Ok(slices)
}

/// Density flow under feedback control and a sampled common-noise path.
/// Slice k is the density at time k·dt (unshifted, physical coordinates).
pub fn solve_fp_common_noise(
    control: &FeedbackControl,
    data: &ProblemData,
    m0: &GridDensity,
    path: &CommonNoisePath,
) -> Result<Vec<GridDensity>> {
    if m0.resolution.len() != 1 || !m0.domain.is_torus() {
        return Err(Error::Unsupported("density flow lives on the 1-D torus".into()));
    }
    let slices = march(control, data, m0, path)?;
    let domain = Domain::torus(1);
    let mut out = Vec::with_capacity(slices.len());
    for (k, masses) in slices.into_iter().enumerate() {
        let clipped: Vec<f64> = masses.iter().map(|&v| v.max(0.0)).collect();
        let g = GridDensity::new(domain.clone(), m0.resolution.clone(), clipped)?;
        let z = path.sigma0 * path.w0(k);
        let shifted = translate(&Measure::Grid(g), &[z])?;
        match shifted {
            Measure::Grid(g) => out.push(g),
            _ => unreachable!(),
        }
    }
    Ok(out)
}

/// Runs two initial densities through the same control and path; reports
/// the worst ratio `TV(m_t, m_t′) / TV(m_0, m_0′)` over all time steps.
pub fn tv_contraction_probe(
    m0: &GridDensity,
    m0p: &GridDensity,
    control: &FeedbackControl,
    data: &ProblemData,
    path: &CommonNoisePath,
) -> Result<f64> {
    if data.eta <= 0.0 {
        return Err(Error::InvalidParameter("contraction probe needs η > 0".into()));
    }
    let fa = solve_fp_common_noise(control, data, m0, path)?;
    let fb = solve_fp_common_noise(control, data, m0p, path)?;
    let tv0 = tv_distance(&Measure::Grid(m0.clone()), &Measure::Grid(m0p.clone()))?;
    if tv0 == 0.0 {
        return Ok(0.0);
    }
    let mut worst = 0.0f64;
    for (a, b) in fa.iter().zip(&fb) {
        let tv = tv_distance(&Measure::Grid(a.clone()), &Measure::Grid(b.clone()))?;
        worst = worst.max(tv / tv0);
    }
    Ok(worst)
}
