//! Optimal quantization of measures, empirical sampling rates, and the
//! rate-exponent bookkeeping.

use num_rational::Ratio;
use rayon::prelude::*;

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::measures::{empirical_from_points, sample_iid, EmpiricalMeasure, Measure};
use crate::metrics::{self, OneD};
use crate::rates::{RateRow, RateTable};
use crate::seeds::derive_seed;

/// The convergence-rate exponents, exact as rationals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RateExponents {
    pub d: u32,
    /// `1/(3d+19)` for even d, `1/(3d+16)` for odd d.
    pub gamma: Ratio<i64>,
    /// `1/(d+7)` for even d, `1/(d+6)` for odd d.
    pub gamma_prime: Ratio<i64>,
    /// Smallest integer strictly larger than `d/2 + 2`.
    pub s_star: i64,
    /// Empirical d1 sampling rate in N.
    pub r_nd: String,
    /// Quantization-by-sampling d2 rate in N.
    pub r_dn: String,
}

pub fn rate_exponents(d: u32) -> Result<RateExponents> {
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be ≥ 1".into()));
    }
    let di = d as i64;
    let (gamma, gamma_prime, s_star) = if d % 2 == 0 {
        (
            Ratio::new(1, 3 * di + 19),
            Ratio::new(1, di + 7),
            di / 2 + 3,
        )
    } else {
        (
            Ratio::new(1, 3 * di + 16),
            Ratio::new(1, di + 6),
            (di + 5) / 2,
        )
    };
    let r_nd = match d {
        1 => "N^{-1/2}".to_string(),
        2 => "N^{-1/2} log N".to_string(),
        _ => format!("N^{{-1/{d}}}"),
    };
    let r_dn = match d {
        1..=3 => "N^{-1/4}".to_string(),
        4 => "N^{-1/4} log(1+N)^{1/2}".to_string(),
        _ => format!("N^{{-1/{d}}}"),
    };
    Ok(RateExponents { d, gamma, gamma_prime, s_star, r_nd, r_dn })
}

/// The empirical-measure d1 rate `r_{N,d}`: `N^{-1/2}` for d = 1,
/// `N^{-1/2} log N` for d = 2, `N^{-1/d}` for d ≥ 3.
pub fn fournier_guillin_rate(n: u64, d: u32) -> f64 {
    let nf = n as f64;
    match d {
        1 => nf.powf(-0.5),
        2 => nf.powf(-0.5) * nf.ln(),
        _ => nf.powf(-1.0 / d as f64),
    }
}

/// `N` atoms on cell centers of the `k^d` partition with `k = ⌊N^{1/d}⌋`;
/// any remainder goes onto the first cells of the refined `(k+1)^d` grid.
pub fn grid_center_config(n: usize, d: usize) -> Result<EmpiricalMeasure> {
    if n == 0 || d == 0 || d > 3 {
        return Err(Error::InvalidParameter("need N ≥ 1 and 1 ≤ d ≤ 3".into()));
    }
    let mut k = (n as f64).powf(1.0 / d as f64).round() as usize;
    while k.pow(d as u32) > n {
        k -= 1;
    }
    while (k + 1).pow(d as u32) <= n {
        k += 1;
    }
    let mut pts = centers(k, d);
    let remainder = n - k.pow(d as u32);
    if remainder > 0 {
        pts.extend(centers(k + 1, d).into_iter().take(remainder));
    }
    empirical_from_points(pts, Domain::cube(d))
}

fn centers(k: usize, d: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(k.pow(d as u32));
    let mut idx = vec![0usize; d];
    loop {
        out.push(idx.iter().map(|&j| (2 * j + 1) as f64 / (2 * k) as f64).collect());
        let mut axis = d;
        while axis > 0 {
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < k {
                break;
            }
            idx[axis] = 0;
            if axis == 0 {
                return out;
            }
        }
    }
}

/// One continuous 1-D Lloyd pass and the exact Voronoi d2² error against a
/// measure given as sorted atoms + cells.
struct Lloyd1D<'a> {
    nu: &'a OneD,
}

impl Lloyd1D<'_> {
    /// Mass, first moment and second moment of ν restricted to `[a, b)`.
    fn cell_stats(&self, a: f64, b: f64, y: f64) -> (f64, f64, f64) {
        let mut mass = 0.0;
        let mut mom = 0.0;
        let mut err = 0.0;
        for &(p, w) in &self.nu.atoms {
            if p >= a && p < b {
                mass += w;
                mom += w * p;
                err += w * (p - y) * (p - y);
            }
        }
        for &(l, r, m) in &self.nu.cells {
            let x1 = l.max(a);
            let x2 = r.min(b);
            if x2 <= x1 {
                continue;
            }
            let dens = m / (r - l);
            mass += dens * (x2 - x1);
            mom += dens * (x2 * x2 - x1 * x1) / 2.0;
            err += dens * ((x2 - y).powi(3) - (x1 - y).powi(3)) / 3.0;
        }
        (mass, mom, err)
    }

    /// Lloyd iterations from sorted initial atoms; returns (atoms, Voronoi
    /// masses, d2² error).
    fn run(&self, mut y: Vec<f64>, iters: usize) -> (Vec<f64>, Vec<f64>, f64) {
        let n = y.len();
        for _ in 0..iters {
            y.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut new_y = y.clone();
            for i in 0..n {
                let a = if i == 0 { f64::NEG_INFINITY } else { 0.5 * (y[i - 1] + y[i]) };
                let b = if i == n - 1 { f64::INFINITY } else { 0.5 * (y[i] + y[i + 1]) };
                let (mass, mom, _) = self.cell_stats(a, b, y[i]);
                if mass > 1e-15 {
                    new_y[i] = mom / mass;
                }
            }
            y = new_y;
        }
        y.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut weights = vec![0.0; n];
        let mut err = 0.0;
        for i in 0..n {
            let a = if i == 0 { f64::NEG_INFINITY } else { 0.5 * (y[i - 1] + y[i]) };
            let b = if i == n - 1 { f64::INFINITY } else { 0.5 * (y[i] + y[i + 1]) };
            let (mass, _, e) = self.cell_stats(a, b, y[i]);
            weights[i] = mass;
            err += e;
        }
        (y, weights, err)
    }
}

/// Best-of-restarts Lloyd quantizer. Returns the quantizer as a weighted
/// empirical measure (Voronoi masses) and its d2 error to ν, a certified
/// upper bound on `ε_N(ν)`. Extra initial configurations (e.g. the best
/// previous-N quantizer) can be appended through `extra_inits`.
pub fn lloyd_quantizer(
    nu: &Measure,
    n: usize,
    iters: usize,
    seed: u64,
) -> Result<(EmpiricalMeasure, f64)> {
    lloyd_quantizer_with_inits(nu, n, iters, seed, &[])
}

pub fn lloyd_quantizer_with_inits(
    nu: &Measure,
    n: usize,
    iters: usize,
    seed: u64,
    extra_inits: &[Vec<f64>],
) -> Result<(EmpiricalMeasure, f64)> {
    if n == 0 || iters == 0 {
        return Err(Error::InvalidParameter("need N ≥ 1 and iters ≥ 1".into()));
    }
    let d = nu.domain().dim();
    if d == 1 {
        let view = OneD::from_measure(nu)?;
        let lloyd = Lloyd1D { nu: &view };
        let mut inits: Vec<Vec<f64>> = Vec::new();
        // Quantile spread of ν, then grid centers, then ν-samples.
        let q = view.quantile_pieces();
        let quantile = |u: f64| -> f64 {
            let i = q.partition_point(|&(_, u1, _, _)| u1 < u).min(q.len().saturating_sub(1));
            let (u0, u1, x0, x1) = q[i];
            if u1 <= u0 {
                x0
            } else {
                x0 + (x1 - x0) * ((u - u0) / (u1 - u0)).clamp(0.0, 1.0)
            }
        };
        inits.push((0..n).map(|i| quantile((i as f64 + 0.5) / n as f64)).collect());
        inits.push(
            grid_center_config(n, 1)?.atoms.iter().map(|p| p[0]).collect(),
        );
        for r in 0..6 {
            let s = sample_iid(nu, n, derive_seed(seed, &format!("lloyd/{r}")))?;
            inits.push(s.into_iter().map(|p| p[0]).collect());
        }
        inits.extend(extra_inits.iter().cloned());
        let mut best: Option<(Vec<f64>, Vec<f64>, f64)> = None;
        for init in inits {
            let mut y = init;
            y.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let out = lloyd.run(y, iters);
            let better = match &best {
                None => true,
                Some((by, _, be)) => {
                    out.2 < be - 1e-15 || (out.2 < be + 1e-15 && out.0 < *by)
                }
            };
            if better {
                best = Some(out);
            }
        }
        let (y, w, err2) = best.unwrap();
        let total: f64 = w.iter().sum();
        let weights: Vec<f64> = w.iter().map(|x| x / total).collect();
        let atoms: Vec<Vec<f64>> = y.iter().map(|&v| vec![v.clamp(0.0, 1.0)]).collect();
        let m = EmpiricalMeasure::new(nu.domain(), atoms, weights)?;
        Ok((m, err2.max(0.0).sqrt()))
    } else {
        // d ≥ 2: weighted k-means on grid cell centers (or atoms); the
        // error adds the exact within-cell dispersion, so the value is a
        // certified cellwise-transport upper bound.
        let (points, masses, disp): (Vec<Vec<f64>>, Vec<f64>, f64) = match nu {
            Measure::Grid(g) => {
                let pts: Vec<Vec<f64>> = (0..g.n_cells()).map(|i| g.cell_center(i)).collect();
                let per_cell: f64 = g
                    .resolution
                    .iter()
                    .map(|&r| 1.0 / (12.0 * (r * r) as f64))
                    .sum();
                (pts, g.masses.clone(), per_cell)
            }
            Measure::Empirical(e) => (e.atoms.clone(), e.weights.clone(), 0.0),
        };
        let mut best: Option<(Vec<Vec<f64>>, Vec<f64>, f64)> = None;
        for r in 0..8 {
            let init = sample_iid(nu, n, derive_seed(seed, &format!("kmeans/{r}")))?;
            let out = kmeans(&points, &masses, init, iters);
            let better = match &best {
                None => true,
                Some((_, _, be)) => out.2 < *be,
            };
            if better {
                best = Some(out);
            }
        }
        for init in extra_inits {
            // extra_inits for d ≥ 2 carry flattened coordinates
            let pts: Vec<Vec<f64>> = init.chunks(d).map(|c| c.to_vec()).collect();
            if pts.len() == n {
                let out = kmeans(&points, &masses, pts, iters);
                if best.as_ref().map_or(true, |(_, _, be)| out.2 < *be) {
                    best = Some(out);
                }
            }
        }
        let (y, w, err2) = best.unwrap();
        let total: f64 = w.iter().sum();
        let weights: Vec<f64> = w.iter().map(|x| x / total).collect();
        let m = EmpiricalMeasure::new(nu.domain(), y, weights)?;
        Ok((m, (err2 + disp).max(0.0).sqrt()))
    }
}

fn kmeans(
    points: &[Vec<f64>],
    masses: &[f64],
    mut centers: Vec<Vec<f64>>,
    iters: usize,
) -> (Vec<Vec<f64>>, Vec<f64>, f64) {
    let n = centers.len();
    let d = centers[0].len();
    let mut weights = vec![0.0; n];
    let mut err = 0.0;
    for _ in 0..iters {
        let mut acc = vec![vec![0.0; d]; n];
        weights = vec![0.0; n];
        err = 0.0;
        for (p, &m) in points.iter().zip(masses) {
            if m == 0.0 {
                continue;
            }
            let (mut bi, mut bd) = (0usize, f64::INFINITY);
            for (i, c) in centers.iter().enumerate() {
                let dist: f64 = p.iter().zip(c).map(|(&a, &b)| (a - b) * (a - b)).sum();
                if dist < bd {
                    bd = dist;
                    bi = i;
                }
            }
            weights[bi] += m;
            err += m * bd;
            for (a, &pi) in acc[bi].iter_mut().zip(p) {
                *a += m * pi;
            }
        }
        for i in 0..n {
            if weights[i] > 1e-15 {
                for j in 0..d {
                    centers[i][j] = acc[i][j] / weights[i];
                }
            }
        }
    }
    (centers, weights, err)
}

/// Exact d = 1 value of the best d1 approximation of Lebesgue by N freely
/// weighted atoms, `v_N = 1/(4N)`, computed by alternating interval-median
/// descent (atoms to interval medians, boundaries to atom midpoints). For
/// d = 2 the value is the cellwise-transport upper bound on the best grid
/// of `k² ≤ N` centers.
pub fn d1_quantization_value(n: usize, d: usize) -> Result<f64> {
    if n == 0 || n > 1024 {
        return Err(Error::InvalidParameter("need 1 ≤ N ≤ 1024".into()));
    }
    match d {
        1 => {
            // boundaries t_0 = 0 < .. < t_N = 1, atoms = interval medians
            let mut t: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
            let mut y = vec![0.0; n];
            for _ in 0..64 {
                for i in 0..n {
                    y[i] = 0.5 * (t[i] + t[i + 1]);
                }
                for i in 1..n {
                    t[i] = 0.5 * (y[i - 1] + y[i]);
                }
            }
            // Σ_i ∫_{t_i}^{t_{i+1}} |x − y_i| dx with y_i the median of the
            // interval: two triangles.
            let mut v = 0.0;
            for i in 0..n {
                let (a, b, yi) = (t[i], t[i + 1], y[i]);
                v += 0.5 * ((yi - a).powi(2) + (b - yi).powi(2));
            }
            Ok(v)
        }
        2 => {
            // mean distance to the center of a unit square
            let c2 = (std::f64::consts::SQRT_2 + (1.0 + std::f64::consts::SQRT_2).ln()) / 6.0;
            let k = (n as f64).sqrt().floor() as usize;
            Ok(c2 / k as f64)
        }
        _ => Err(Error::Unsupported("d1 quantization value supports d ∈ {1,2}".into())),
    }
}

/// `v_N` sweep with its log-log fit (d = 1 slope is exactly −1).
pub fn v_n_rate_table(d: usize, ns: &[usize]) -> Result<RateTable> {
    let rows = ns
        .iter()
        .map(|&n| {
            Ok(RateRow { param: n as f64, value: d1_quantization_value(n, d)?, stderr: 0.0 })
        })
        .collect::<Result<Vec<_>>>()?;
    RateTable::from_rows(rows)
}

/// Monte-Carlo estimate of the empirical-measure d1 convergence rate. For
/// d = 1 each trial measures `d1(m^N_X, m)` exactly through the CDF; for
/// d ≥ 2 it measures the paired-sample distance `d1(m^N_X, m^N_{X'})` by
/// assignment. Trials parallelize over derived seeds.
pub fn empirical_rate_mc(
    m: &Measure,
    ns: &[usize],
    trials: usize,
    seed: u64,
) -> Result<RateTable> {
    if trials < 30 {
        return Err(Error::InvalidParameter("need ≥ 30 trials".into()));
    }
    let d = m.domain().dim();
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let vals: Vec<f64> = (0..trials)
            .into_par_iter()
            .map(|t| -> Result<f64> {
                let s = derive_seed(seed, &format!("mc/{n}/{t}"));
                if d == 1 {
                    let pts = sample_iid(m, n, s)?;
                    let emp = Measure::Empirical(empirical_from_points(pts, m.domain())?);
                    Ok(metrics::d1(&emp, m)?.value)
                } else {
                    let pa = sample_iid(m, n, derive_seed(s, "a"))?;
                    let pb = sample_iid(m, n, derive_seed(s, "b"))?;
                    let ea = Measure::Empirical(empirical_from_points(pa, m.domain())?);
                    let eb = Measure::Empirical(empirical_from_points(pb, m.domain())?);
                    Ok(metrics::d1(&ea, &eb)?.value)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mean = vals.iter().sum::<f64>() / trials as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (trials.max(2) - 1) as f64;
        rows.push(RateRow {
            param: n as f64,
            value: mean,
            stderr: (var / trials as f64).sqrt(),
        });
    }
    RateTable::from_rows(rows)
}

pub use crate::rates::fit_loglog_slope;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::GridDensity;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exponents_match_the_published_table() {
        let e2 = rate_exponents(2).unwrap();
        assert_eq!(e2.gamma, Ratio::new(1, 25));
        assert_eq!(e2.gamma_prime, Ratio::new(1, 9));
        assert_eq!(e2.s_star, 4);

        let e3 = rate_exponents(3).unwrap();
        assert_eq!(e3.gamma, Ratio::new(1, 25));
        assert_eq!(e3.gamma_prime, Ratio::new(1, 9));
        assert_eq!(e3.s_star, 4);

        let e1 = rate_exponents(1).unwrap();
        assert_eq!(e1.s_star, 3);
        assert_eq!(2 * e1.s_star + 1, 1 + 6);
        assert!(rate_exponents(0).is_err());
    }

    #[test]
    fn exponent_identity_inverse_of_two_sstar_plus_one() {
        for d in 1..=6 {
            let e = rate_exponents(d).unwrap();
            assert_eq!(Ratio::new(1, 2 * e.s_star + 1), e.gamma_prime);
        }
    }

    #[test]
    fn fournier_guillin_cases() {
        assert_abs_diff_eq!(fournier_guillin_rate(100, 1), 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(fournier_guillin_rate(8, 3), 0.5, epsilon = 1e-12);
        let n = std::f64::consts::E * std::f64::consts::E;
        assert_abs_diff_eq!(
            fournier_guillin_rate(n.round() as u64, 2),
            (n.round()).powf(-0.5) * (n.round()).ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn grid_centers_1d() {
        let m = grid_center_config(4, 1).unwrap();
        let xs: Vec<f64> = m.atoms.iter().map(|p| p[0]).collect();
        assert_eq!(xs, vec![0.125, 0.375, 0.625, 0.875]);

        let m1 = grid_center_config(1, 1).unwrap();
        assert_eq!(m1.atoms, vec![vec![0.5]]);
        let leb = Measure::Grid(GridDensity::uniform(Domain::cube(1), vec![64]).unwrap());
        let r = metrics::d2(&Measure::Empirical(m1), &leb).unwrap();
        assert_abs_diff_eq!(r.value * r.value, 1.0 / 12.0, epsilon = 1e-12);
    }

    #[test]
    fn grid_centers_2d() {
        let m = grid_center_config(4, 2).unwrap();
        assert_eq!(m.atoms.len(), 4);
        for p in &m.atoms {
            for &c in p {
                assert!((c - 0.25).abs() < 1e-12 || (c - 0.75).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grid_centers_with_remainder_keep_count() {
        let m = grid_center_config(11, 2).unwrap();
        assert_eq!(m.atoms.len(), 11);
        assert_abs_diff_eq!(m.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn lloyd_on_lebesgue_single_atom() {
        let leb = Measure::Grid(GridDensity::uniform(Domain::cube(1), vec![64]).unwrap());
        let (m, err) = lloyd_quantizer(&leb, 1, 50, 3).unwrap();
        assert_abs_diff_eq!(m.atoms[0][0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(err * err, 1.0 / 12.0, epsilon = 1e-6);
    }

    #[test]
    fn lloyd_on_dirac_collapses() {
        let nu = Measure::Empirical(EmpiricalMeasure::dirac(Domain::cube(1), vec![0.3]).unwrap());
        let (m, err) = lloyd_quantizer(&nu, 3, 20, 5).unwrap();
        assert!(err < 1e-12);
        for p in &m.atoms {
            assert_abs_diff_eq!(p[0], 0.3, epsilon = 1e-9);
        }
    }

    #[test]
    fn lloyd_beats_grid_centers_on_lebesgue() {
        let leb = Measure::Grid(GridDensity::uniform(Domain::cube(1), vec![128]).unwrap());
        for n in [1usize, 2, 4, 8] {
            let (_, err) = lloyd_quantizer(&leb, n, 60, 7).unwrap();
            // centers are feasible, so Lloyd's best-of-restarts can't lose
            let centers_err = 1.0 / (12.0 * (n * n) as f64);
            assert!(
                err * err <= centers_err + 1e-9,
                "N={n}: lloyd {} vs centers {}",
                err * err,
                centers_err
            );
        }
        // N = 4 spec anchor: error ≤ 1/(8√3)
        let (_, err4) = lloyd_quantizer(&leb, 4, 60, 7).unwrap();
        assert!(err4 <= 1.0 / (8.0 * 3.0f64.sqrt()) + 1e-9);
    }

    #[test]
    fn lloyd_error_is_monotone_in_n_with_chained_inits() {
        let leb = Measure::Grid(GridDensity::uniform(Domain::cube(1), vec![64]).unwrap());
        let mut prev: Option<(Vec<f64>, f64)> = None;
        for n in 1..=8 {
            let extra: Vec<Vec<f64>> = prev
                .as_ref()
                .map(|(atoms, _)| {
                    let mut a = atoms.clone();
                    a.push(0.5 + 0.25 / n as f64);
                    vec![a]
                })
                .unwrap_or_default();
            let (m, err) = lloyd_quantizer_with_inits(&leb, n, 40, 11, &extra).unwrap();
            if let Some((_, prev_err)) = &prev {
                assert!(err <= prev_err + 1e-9, "N={n}: {err} > {prev_err}");
            }
            prev = Some((m.atoms.iter().map(|p| p[0]).collect(), err));
        }
    }

    #[test]
    fn v_n_is_quarter_over_n_in_1d() {
        assert_abs_diff_eq!(d1_quantization_value(1, 1).unwrap(), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(d1_quantization_value(4, 1).unwrap(), 1.0 / 16.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d1_quantization_value(256, 1).unwrap(), 1.0 / 1024.0, epsilon = 1e-12);
        assert!(d1_quantization_value(0, 1).is_err());
        assert!(d1_quantization_value(4, 3).is_err());
    }

    #[test]
    fn v_n_golden_section_cross_check_n1() {
        // v_1 by golden-section over the single atom location.
        let f = |y: f64| 0.5 * (y * y + (1.0 - y) * (1.0 - y));
        let (mut a, mut b) = (0.0f64, 1.0f64);
        let phi = (5.0f64.sqrt() - 1.0) / 2.0;
        for _ in 0..80 {
            let c = b - phi * (b - a);
            let d = a + phi * (b - a);
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let y = 0.5 * (a + b);
        assert_abs_diff_eq!(y, 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(f(y), d1_quantization_value(1, 1).unwrap(), epsilon = 1e-9);
    }

    #[test]
    fn v_n_slope_is_minus_one() {
        let t = v_n_rate_table(1, &[4, 8, 16, 32, 64, 128, 256]).unwrap();
        let slope = t.slope().unwrap();
        assert!((slope + 1.0).abs() < 0.05, "slope {slope}");
        // N^{1/d}·v_N pinned between positive constants
        for r in &t.rows {
            let c = r.param * r.value;
            assert!(c > 0.2 && c < 0.3, "N·v_N = {c}");
        }
    }

    #[test]
    fn v_n_below_grid_center_distance() {
        let leb = Measure::Grid(GridDensity::uniform(Domain::cube(1), vec![64]).unwrap());
        for n in [1usize, 2, 4, 8, 16] {
            let cfg = Measure::Empirical(grid_center_config(n, 1).unwrap());
            let dist = metrics::d1(&cfg, &leb).unwrap().value;
            assert!(d1_quantization_value(n, 1).unwrap() <= dist + 1e-12);
        }
    }

    #[test]
    fn empirical_rate_point_mass_is_degenerate_zero() {
        let nu = Measure::Empirical(EmpiricalMeasure::dirac(Domain::torus(1), vec![0.25]).unwrap());
        let t = empirical_rate_mc(&nu, &[8, 16, 32], 30, 1).unwrap();
        for r in &t.rows {
            assert_abs_diff_eq!(r.value, 0.0, epsilon = 1e-12);
        }
        assert!(t.fit.is_none());
    }

    #[test]
    fn empirical_rate_needs_enough_trials() {
        let nu = Measure::Grid(GridDensity::uniform(Domain::torus(1), vec![16]).unwrap());
        assert!(empirical_rate_mc(&nu, &[8, 16], 10, 1).is_err());
    }

    #[test]
    fn empirical_rate_uniform_1d_sqrt_slope() {
        let nu = Measure::Grid(GridDensity::uniform(Domain::torus(1), vec![64]).unwrap());
        let t = empirical_rate_mc(&nu, &[16, 32, 64, 128, 256], 60, 5).unwrap();
        let slope = t.slope().unwrap();
        assert!((slope + 0.5).abs() < 0.1, "slope {slope}");
    }
}
