//! Zero-noise value functions through their inf-convolution (Hopf-Lax)
//! representations: the N-particle value over point configurations, certified
//! upper bounds on the mean-field value over feasible measures, and the
//! comparison machinery between them (gap tables, convexity checks, moment
//! transfer, replication).

use std::sync::Arc;

use serde::Serialize;

use rand::Rng;

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::measures::{empirical_from_points, EmpiricalMeasure, Measure};
use crate::metrics;
use crate::quantize::{d1_quantization_value, grid_center_config};
use crate::rates::{RateRow, RateTable};
use crate::seeds::{derive_seed, rng_from_seed};

type SpaceFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type MeasureFn = Arc<dyn Fn(&Measure) -> Result<f64> + Send + Sync>;

/// Terminal cost `G` acting on probability measures.
#[derive(Clone)]
pub enum CostKind {
    Zero,
    /// `G(m) = ∫ g dm` for a pointwise function g.
    Linear(SpaceFn),
    /// `G(m) = |mean(m) − b|²`.
    MeanQuadratic { b: Vec<f64> },
    /// `G(m) = d1(m, reference)`; 1-Lipschitz in d1 by duality.
    D1ToReference(Measure),
    Custom(MeasureFn),
}

#[derive(Clone)]
pub struct TerminalCost {
    pub kind: CostKind,
    /// d1-Lipschitz constant when known.
    pub lipschitz: Option<f64>,
}

impl std::fmt::Debug for TerminalCost {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match &self.kind {
            CostKind::Zero => "zero",
            CostKind::Linear(_) => "linear",
            CostKind::MeanQuadratic { .. } => "mean_quadratic",
            CostKind::D1ToReference(_) => "d1_to_reference",
            CostKind::Custom(_) => "custom",
        };
        write!(f, "TerminalCost({name}, L={:?})", self.lipschitz)
    }
}

impl TerminalCost {
    pub fn zero() -> Self {
        TerminalCost { kind: CostKind::Zero, lipschitz: Some(0.0) }
    }

    pub fn linear(g: SpaceFn, lipschitz: Option<f64>) -> Self {
        TerminalCost { kind: CostKind::Linear(g), lipschitz }
    }

    pub fn mean_quadratic(b: Vec<f64>) -> Self {
        TerminalCost { kind: CostKind::MeanQuadratic { b }, lipschitz: None }
    }

    pub fn d1_to_reference(reference: Measure) -> Self {
        TerminalCost { kind: CostKind::D1ToReference(reference), lipschitz: Some(1.0) }
    }

    pub fn custom(f: MeasureFn, lipschitz: Option<f64>) -> Self {
        TerminalCost { kind: CostKind::Custom(f), lipschitz }
    }

    pub fn evaluate(&self, m: &Measure) -> Result<f64> {
        match &self.kind {
            CostKind::Zero => Ok(0.0),
            CostKind::Linear(g) => match m {
                Measure::Empirical(e) => {
                    Ok(e.atoms.iter().zip(&e.weights).map(|(x, &w)| w * g(x)).sum())
                }
                Measure::Grid(gr) => Ok((0..gr.n_cells())
                    .map(|i| gr.masses[i] * g(&gr.cell_center(i)))
                    .sum()),
            },
            CostKind::MeanQuadratic { b } => {
                let mean = measure_mean(m);
                Ok(mean.iter().zip(b).map(|(&a, &bi)| (a - bi) * (a - bi)).sum())
            }
            CostKind::D1ToReference(r) => Ok(metrics::d1(m, r)?.value),
            CostKind::Custom(f) => f(m),
        }
    }

    /// Spatial dimension the cost naturally lives in, when it carries one.
    pub fn dimension_hint(&self) -> Option<usize> {
        match &self.kind {
            CostKind::MeanQuadratic { b } => Some(b.len()),
            CostKind::D1ToReference(r) => Some(r.domain().dim()),
            _ => None,
        }
    }

    fn domain_hint(&self, d: usize) -> Domain {
        match &self.kind {
            CostKind::D1ToReference(r) => r.domain(),
            _ => Domain::cube(d),
        }
    }

    /// Evaluate G on a raw configuration (uniform weights). Locations are
    /// clamped into the cube (or wrapped on the torus) only when a measure
    /// object must actually be built.
    fn eval_config(&self, atoms: &[Vec<f64>]) -> Result<f64> {
        match &self.kind {
            CostKind::Zero => Ok(0.0),
            CostKind::Linear(g) => {
                Ok(atoms.iter().map(|x| g(x)).sum::<f64>() / atoms.len() as f64)
            }
            CostKind::MeanQuadratic { b } => {
                let d = atoms[0].len();
                let mut mean = vec![0.0; d];
                for a in atoms {
                    for i in 0..d {
                        mean[i] += a[i];
                    }
                }
                for mi in mean.iter_mut() {
                    *mi /= atoms.len() as f64;
                }
                Ok(mean.iter().zip(b).map(|(&a, &bi)| (a - bi) * (a - bi)).sum())
            }
            _ => {
                let d = atoms[0].len();
                let domain = self.domain_hint(d);
                let pts: Vec<Vec<f64>> =
                    atoms.iter().map(|a| fit_into(a, &domain)).collect();
                let m = Measure::Empirical(empirical_from_points(pts, domain)?);
                self.evaluate(&m)
            }
        }
    }
}

fn fit_into(x: &[f64], domain: &Domain) -> Vec<f64> {
    if domain.is_torus() {
        let mut w = x.to_vec();
        domain.wrap(&mut w);
        w
    } else {
        x.iter().map(|&c| c.clamp(0.0, 1.0)).collect()
    }
}

fn measure_mean(m: &Measure) -> Vec<f64> {
    match m {
        Measure::Empirical(e) => {
            let d = e.atoms[0].len();
            let mut mean = vec![0.0; d];
            for (a, &w) in e.atoms.iter().zip(&e.weights) {
                for i in 0..d {
                    mean[i] += w * a[i];
                }
            }
            mean
        }
        Measure::Grid(g) => {
            let d = g.resolution.len();
            let mut mean = vec![0.0; d];
            for i in 0..g.n_cells() {
                let c = g.cell_center(i);
                for j in 0..d {
                    mean[j] += g.masses[i] * c[j];
                }
            }
            mean
        }
    }
}

/// p-th moment `(∫ |x|^p dm)^{1/p}` with the Euclidean norm.
pub fn moment_p(m: &Measure, p: f64) -> f64 {
    let acc = match m {
        Measure::Empirical(e) => e
            .atoms
            .iter()
            .zip(&e.weights)
            .map(|(a, &w)| w * a.iter().map(|x| x * x).sum::<f64>().sqrt().powf(p))
            .sum::<f64>(),
        Measure::Grid(g) => (0..g.n_cells())
            .map(|i| {
                let c = g.cell_center(i);
                g.masses[i] * c.iter().map(|x| x * x).sum::<f64>().sqrt().powf(p)
            })
            .sum::<f64>(),
    };
    acc.powf(1.0 / p)
}

#[derive(Debug, Clone, Serialize)]
pub struct HopfLaxSolution {
    pub value: f64,
    pub argmin: Vec<Vec<f64>>,
    /// Atom weights of the minimizing measure; uniform when absent.
    pub weights: Option<Vec<f64>>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub restarts: usize,
}

fn quadratic_term(x: &[Vec<f64>], y: &[Vec<f64>], tau: f64) -> f64 {
    let n = x.len() as f64;
    let s: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| a.iter().zip(b).map(|(&u, &v)| (u - v) * (u - v)).sum::<f64>())
        .sum();
    s / (2.0 * tau * n)
}

fn fd_gradient<F: Fn(&[Vec<f64>]) -> f64>(f: &F, y: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let h = 1e-6;
    let mut g = vec![vec![0.0; y[0].len()]; y.len()];
    let mut probe = y.to_vec();
    for i in 0..y.len() {
        for j in 0..y[0].len() {
            probe[i][j] = y[i][j] + h;
            let fp = f(&probe);
            probe[i][j] = y[i][j] - h;
            let fm = f(&probe);
            probe[i][j] = y[i][j];
            g[i][j] = (fp - fm) / (2.0 * h);
        }
    }
    g
}

/// Gradient descent with Armijo backtracking from one starting point;
/// returns (argmin, value, iterations).
fn descend<F: Fn(&[Vec<f64>]) -> f64>(
    f: &F,
    start: Vec<Vec<f64>>,
    max_iters: usize,
) -> (Vec<Vec<f64>>, f64, usize) {
    let mut y = start;
    let mut val = f(&y);
    let mut iters = 0;
    for _ in 0..max_iters {
        iters += 1;
        let g = fd_gradient(f, &y);
        let gnorm2: f64 = g.iter().flat_map(|r| r.iter().map(|v| v * v)).sum();
        if gnorm2.sqrt() < 1e-10 {
            break;
        }
        let mut step = 0.5;
        let mut improved = false;
        for _ in 0..40 {
            let cand: Vec<Vec<f64>> = y
                .iter()
                .zip(&g)
                .map(|(yr, gr)| yr.iter().zip(gr).map(|(&v, &d)| v - step * d).collect())
                .collect();
            let cv = f(&cand);
            if cv < val - 1e-4 * step * gnorm2 {
                y = cand;
                val = cv;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (y, val, iters)
}

/// Exact 1-D solver for `G = d1(·, reference)`: coordinate-wise golden
/// section sweeps; each coordinate's objective is convex.
fn solve_d1_1d(
    x: &[Vec<f64>],
    g: &TerminalCost,
    tau: f64,
    inits: Vec<Vec<Vec<f64>>>,
) -> Result<(Vec<Vec<f64>>, f64, usize)> {
    let n = x.len();
    let objective = |y: &[Vec<f64>]| -> f64 {
        g.eval_config(y).unwrap_or(f64::INFINITY) + quadratic_term(x, y, tau)
    };
    let mut best: Option<(Vec<Vec<f64>>, f64)> = None;
    let mut total_iters = 0;
    for init in inits {
        let mut y = init;
        let mut val = objective(&y);
        for sweep in 0..30 {
            total_iters += 1;
            let before = val;
            for i in 0..n {
                // golden section for coordinate i over [0, 1]
                let phi = (5.0f64.sqrt() - 1.0) / 2.0;
                let (mut a, mut b) = (0.0f64, 1.0f64);
                let eval = |y: &mut Vec<Vec<f64>>, t: f64| -> f64 {
                    y[i][0] = t;
                    objective(y)
                };
                let mut c = b - phi * (b - a);
                let mut d = a + phi * (b - a);
                let mut fc = eval(&mut y, c);
                let mut fd = eval(&mut y, d);
                for _ in 0..60 {
                    if fc < fd {
                        b = d;
                        d = c;
                        fd = fc;
                        c = b - phi * (b - a);
                        fc = eval(&mut y, c);
                    } else {
                        a = c;
                        c = d;
                        fc = fd;
                        d = a + phi * (b - a);
                        fd = eval(&mut y, d);
                    }
                }
                let t = 0.5 * (a + b);
                let ft = eval(&mut y, t);
                // keep the original coordinate if golden section stalled
                if ft > val {
                    y[i][0] = x[i][0].clamp(0.0, 1.0);
                    let fx = objective(&y);
                    if fx > ft {
                        y[i][0] = t;
                        val = ft;
                    } else {
                        val = fx;
                    }
                } else {
                    val = ft;
                }
            }
            if before - val < 1e-13 && sweep > 0 {
                break;
            }
        }
        match &best {
            Some((_, bv)) if *bv <= val => {}
            _ => best = Some((y, val)),
        }
    }
    let (y, val) = best.unwrap();
    Ok((y, val, total_iters))
}

/// N-particle zero-noise value
/// `V^N(t, x) = inf_y { G(m^N_y) + (1/(2(T−t)N)) Σ_i |x^i − y^i|² }`.
pub fn vn_deterministic(
    t: f64,
    x: &[Vec<f64>],
    g: &TerminalCost,
    horizon: f64,
) -> Result<HopfLaxSolution> {
    if t >= horizon {
        return Err(Error::InvalidParameter("need t < T".into()));
    }
    if x.is_empty() || x.iter().any(|p| p.len() != x[0].len()) {
        return Err(Error::InvalidParameter("configuration must be nonempty, equal dims".into()));
    }
    let tau = horizon - t;
    let n = x.len();
    let d = x[0].len();

    if matches!(g.kind, CostKind::Zero) {
        return Ok(HopfLaxSolution {
            value: 0.0,
            argmin: x.to_vec(),
            weights: None,
            iterations: 0,
            grad_norm: 0.0,
            restarts: 0,
        });
    }

    // exact path: 1-D cost measured against a fixed reference
    if d == 1 {
        if let CostKind::D1ToReference(r) = &g.kind {
            if !r.domain().is_torus() {
                let mut inits = vec![x.to_vec()];
                if let Ok(cfg) = grid_center_config(n, 1) {
                    inits.push(cfg.atoms);
                }
                let (y, val, iters) = solve_d1_1d(x, g, tau, inits)?;
                return Ok(HopfLaxSolution {
                    value: val,
                    argmin: y,
                    weights: None,
                    iterations: iters,
                    grad_norm: f64::NAN, // nonsmooth objective
                    restarts: 2,
                });
            }
        }
    }

    let objective = |y: &[Vec<f64>]| -> f64 {
        g.eval_config(y).unwrap_or(f64::INFINITY) + quadratic_term(x, y, tau)
    };
    let mut starts: Vec<Vec<Vec<f64>>> = vec![x.to_vec()];
    if d <= 3 {
        if let Ok(cfg) = grid_center_config(n, d) {
            starts.push(cfg.atoms);
        }
    }
    if let CostKind::MeanQuadratic { b } = &g.kind {
        // stationary uniform shift, the known closed-form minimizer
        let mut mean = vec![0.0; d];
        for p in x {
            for i in 0..d {
                mean[i] += p[i] / n as f64;
            }
        }
        let shifted: Vec<Vec<f64>> = x
            .iter()
            .map(|p| {
                (0..d)
                    .map(|i| p[i] + 2.0 * tau * (b[i] - mean[i]) / (2.0 * tau + 1.0))
                    .collect()
            })
            .collect();
        starts.push(shifted);
    }
    if d == 1 {
        // shifted copies catch far basins of periodic costs
        for s in [-1.0, -0.5, 0.5, 1.0] {
            starts.push(x.iter().map(|p| vec![p[0] + s]).collect());
        }
    }
    let mut rng = rng_from_seed(derive_seed(17, "hopflax/vn"));
    while starts.len() < 8 {
        let jitter: Vec<Vec<f64>> = x
            .iter()
            .map(|p| p.iter().map(|&c| c + 0.3 * (rng.gen::<f64>() - 0.5)).collect())
            .collect();
        starts.push(jitter);
    }
    let restarts = starts.len();
    let mut best: Option<(Vec<Vec<f64>>, f64)> = None;
    let mut total_iters = 0;
    for s in starts {
        let (y, val, it) = descend(&objective, s, 150);
        total_iters += it;
        match &best {
            Some((_, bv)) if *bv <= val => {}
            _ => best = Some((y, val)),
        }
    }
    let (y, val) = best.unwrap();
    let grad = fd_gradient(&objective, &y);
    let grad_norm = grad.iter().flat_map(|r| r.iter().map(|v| v * v)).sum::<f64>().sqrt();
    Ok(HopfLaxSolution {
        value: val,
        argmin: y,
        weights: None,
        iterations: total_iters,
        grad_norm,
        restarts,
    })
}

/// `min_ν { G(ν) + d2²(m, ν) / (2(T−t)) }` over an explicit candidate list;
/// an upper bound on the mean-field value at (t, m).
pub fn u_upper_candidates(
    t: f64,
    m: &Measure,
    g: &TerminalCost,
    horizon: f64,
    candidates: &[Measure],
) -> Result<f64> {
    if t >= horizon {
        return Err(Error::InvalidParameter("need t < T".into()));
    }
    if candidates.is_empty() {
        return Err(Error::InvalidParameter("need at least one candidate".into()));
    }
    let tau = horizon - t;
    let mut best = f64::INFINITY;
    for nu in candidates {
        let d2 = metrics::d2(m, nu)?.value;
        let v = g.evaluate(nu)? + d2 * d2 / (2.0 * tau);
        best = best.min(v);
    }
    Ok(best)
}

fn project_simplex(w: &mut [f64]) {
    let mut u = w.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut css = 0.0;
    let mut rho = 0;
    let mut cs_at_rho = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        css += ui;
        if ui + (1.0 - css) / (i + 1) as f64 > 0.0 {
            rho = i + 1;
            cs_at_rho = css;
        }
    }
    let theta = (1.0 - cs_at_rho) / rho as f64;
    for wi in w.iter_mut() {
        *wi = (*wi + theta).max(0.0);
    }
}

fn relaxed_measure(atoms: &[Vec<f64>], weights: &[f64], domain: &Domain) -> Result<Measure> {
    let mut pts = Vec::new();
    let mut ws = Vec::new();
    for (a, &w) in atoms.iter().zip(weights) {
        if w > 1e-14 {
            pts.push(fit_into(a, domain));
            ws.push(w);
        }
    }
    let total: f64 = ws.iter().sum();
    for w in ws.iter_mut() {
        *w /= total;
    }
    Ok(Measure::Empirical(EmpiricalMeasure::new(domain.clone(), pts, ws)?))
}

fn relaxed_objective(
    m: &Measure,
    g: &TerminalCost,
    tau: f64,
    atoms: &[Vec<f64>],
    weights: &[f64],
    domain: &Domain,
) -> f64 {
    match relaxed_measure(atoms, weights, domain) {
        Ok(nu) => {
            let gval = g.evaluate(&nu).unwrap_or(f64::INFINITY);
            let d2 = match metrics::d2(m, &nu) {
                Ok(r) => r.value,
                Err(_) => return f64::INFINITY,
            };
            gval + d2 * d2 / (2.0 * tau)
        }
        Err(_) => f64::INFINITY,
    }
}

/// Relaxed upper bound on the mean-field value: minimize over measures with
/// at most M weighted atoms by alternating location and weight descent.
/// Monotone in the objective, so a feasible initial configuration certifies
/// `value ≤ initial objective`.
pub fn u_relaxed_atomic(
    t: f64,
    m: &Measure,
    g: &TerminalCost,
    horizon: f64,
    m_atoms: usize,
    seed: u64,
) -> Result<HopfLaxSolution> {
    let n_atoms = match m {
        Measure::Empirical(e) => e.n_atoms(),
        Measure::Grid(_) => 1,
    };
    if m_atoms < n_atoms {
        return Err(Error::InvalidParameter(
            "relaxed solver needs at least as many atoms as the input measure".into(),
        ));
    }
    u_relaxed_with_init(t, m, g, horizon, m_atoms, seed, None)
}

pub fn u_relaxed_with_init(
    t: f64,
    m: &Measure,
    g: &TerminalCost,
    horizon: f64,
    m_atoms: usize,
    seed: u64,
    init: Option<(Vec<Vec<f64>>, Vec<f64>)>,
) -> Result<HopfLaxSolution> {
    if t >= horizon {
        return Err(Error::InvalidParameter("need t < T".into()));
    }
    if m_atoms < 1 {
        return Err(Error::InvalidParameter("need at least one atom".into()));
    }
    let tau = horizon - t;
    let domain = m.domain();
    let d = domain.dim();

    let mut inits: Vec<(Vec<Vec<f64>>, Vec<f64>)> = Vec::new();
    if let Some(iv) = init {
        inits.push(pad_config(iv, m_atoms));
    }
    // m itself, padded by splitting its first atom
    if let Measure::Empirical(e) = m {
        inits.push(pad_config((e.atoms.clone(), e.weights.clone()), m_atoms));
    }
    // quantile spread of the reference when the cost measures distance to one
    if let CostKind::D1ToReference(r) = &g.kind {
        if let Ok(cfg) = grid_center_config(m_atoms, d) {
            let _ = r;
            inits.push((cfg.atoms, vec![1.0 / m_atoms as f64; m_atoms]));
        }
    }
    // random samples from m
    if let Ok(pts) = crate::measures::sample_iid(m, m_atoms, derive_seed(seed, "relax")) {
        inits.push((pts, vec![1.0 / m_atoms as f64; m_atoms]));
    }

    let mut best: Option<(Vec<Vec<f64>>, Vec<f64>, f64)> = None;
    let mut iters = 0;
    let restarts = inits.len();
    for (mut atoms, mut weights) in inits {
        let mut val = relaxed_objective(m, g, tau, &atoms, &weights, &domain);
        for _ in 0..40 {
            iters += 1;
            let before = val;
            // location pass
            let loc_obj = |a: &[Vec<f64>]| relaxed_objective(m, g, tau, a, &weights, &domain);
            let grad = fd_gradient(&loc_obj, &atoms);
            let gnorm2: f64 = grad.iter().flat_map(|r| r.iter().map(|v| v * v)).sum();
            if gnorm2 > 0.0 {
                let mut step = 0.25;
                for _ in 0..25 {
                    let cand: Vec<Vec<f64>> = atoms
                        .iter()
                        .zip(&grad)
                        .map(|(ar, gr)| {
                            ar.iter().zip(gr).map(|(&v, &dg)| v - step * dg).collect()
                        })
                        .collect();
                    let cv = relaxed_objective(m, g, tau, &cand, &weights, &domain);
                    if cv < val {
                        atoms = cand;
                        val = cv;
                        break;
                    }
                    step *= 0.5;
                }
            }
            // weight pass: projected gradient on the simplex
            let h = 1e-6;
            let mut wgrad = vec![0.0; weights.len()];
            for i in 0..weights.len() {
                let mut wp = weights.clone();
                wp[i] += h;
                let tot: f64 = wp.iter().sum();
                for w in wp.iter_mut() {
                    *w /= tot;
                }
                let fp = relaxed_objective(m, g, tau, &atoms, &wp, &domain);
                wgrad[i] = (fp - val) / h;
            }
            let mut step = 0.25;
            for _ in 0..25 {
                let mut cand: Vec<f64> =
                    weights.iter().zip(&wgrad).map(|(&w, &dg)| w - step * dg).collect();
                project_simplex(&mut cand);
                let cv = relaxed_objective(m, g, tau, &atoms, &cand, &domain);
                if cv < val {
                    weights = cand;
                    val = cv;
                    break;
                }
                step *= 0.5;
            }
            if before - val < 1e-12 {
                break;
            }
        }
        match &best {
            Some((_, _, bv)) if *bv <= val => {}
            _ => best = Some((atoms, weights, val)),
        }
    }
    let (atoms, weights, val) = best.unwrap();
    Ok(HopfLaxSolution {
        value: val,
        argmin: atoms,
        weights: Some(weights),
        iterations: iters,
        grad_norm: f64::NAN,
        restarts,
    })
}

fn pad_config(
    (mut atoms, mut weights): (Vec<Vec<f64>>, Vec<f64>),
    m_atoms: usize,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    while atoms.len() < m_atoms {
        // split the heaviest atom in two; the measure is unchanged
        let i = weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let half = weights[i] / 2.0;
        weights[i] = half;
        atoms.push(atoms[i].clone());
        weights.push(half);
    }
    (atoms, weights)
}

/// Certified lower bound on V^N when G measures d1 distance to Lebesgue:
/// the optimal N-point quantization value of Lebesgue (the quadratic term
/// is dropped).
pub fn vn_lower_quantization(
    _t: f64,
    x: &[Vec<f64>],
    g: &TerminalCost,
    _horizon: f64,
) -> Result<f64> {
    match &g.kind {
        CostKind::D1ToReference(r) => {
            if !matches!(r, Measure::Grid(gr) if gr.masses.iter().all(|&m| (m * gr.n_cells() as f64 - 1.0).abs() < 1e-9))
            {
                return Err(Error::InvalidParameter(
                    "lower bound requires the Lebesgue reference".into(),
                ));
            }
            d1_quantization_value(x.len(), x[0].len())
        }
        _ => Err(Error::InvalidParameter(
            "lower bound only applies to the d1-to-reference cost".into(),
        )),
    }
}

/// `V^{nN}(t, x^{⊗n})` for each replication count n. For costs that are
/// convex under conditional-expectation collapse these are non-increasing.
pub fn replication_monotonicity(
    t: f64,
    x: &[Vec<f64>],
    g: &TerminalCost,
    horizon: f64,
    reps: &[usize],
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(reps.len());
    for &n in reps {
        if n < 1 {
            return Err(Error::InvalidParameter("replication count must be ≥ 1".into()));
        }
        if n * x.len() > 256 {
            return Err(Error::InvalidParameter(
                "replicated configuration exceeds 256 particles".into(),
            ));
        }
        let mut cfg = Vec::with_capacity(n * x.len());
        for _ in 0..n {
            cfg.extend(x.iter().cloned());
        }
        out.push(vn_deterministic(t, &cfg, g, horizon)?.value);
    }
    Ok(out)
}

/// Randomized check of convexity under conditional-expectation collapse:
/// sample finite (X, Y), test `G(law(E[X|Y])) ≤ G(law(X)) + 1e-9`.
/// Returns (pass, worst violation found).
pub fn lconvex_check(g: &TerminalCost, trials: usize, seed: u64) -> Result<(bool, f64)> {
    if trials < 1 {
        return Err(Error::InvalidParameter("need at least one trial".into()));
    }
    let d = g.dimension_hint().unwrap_or(1);
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut check = |atoms: &[Vec<f64>], probs: &[f64], blocks: &[usize]| -> Result<()> {
        let nb = blocks.iter().max().map(|&b| b + 1).unwrap_or(0);
        let mut bw = vec![0.0; nb];
        let mut bx = vec![vec![0.0; d]; nb];
        for (i, &b) in blocks.iter().enumerate() {
            bw[b] += probs[i];
            for j in 0..d {
                bx[b][j] += probs[i] * atoms[i][j];
            }
        }
        let mut c_atoms = Vec::new();
        let mut c_w = Vec::new();
        for b in 0..nb {
            if bw[b] > 1e-14 {
                c_atoms.push(bx[b].iter().map(|v| v / bw[b]).collect::<Vec<f64>>());
                c_w.push(bw[b]);
            }
        }
        let domain = g.domain_hint(d);
        let orig = Measure::Empirical(EmpiricalMeasure::new(
            domain.clone(),
            atoms.iter().map(|a| fit_into(a, &domain)).collect(),
            probs.to_vec(),
        )?);
        let coll = Measure::Empirical(EmpiricalMeasure::new(
            domain.clone(),
            c_atoms.iter().map(|a| fit_into(a, &domain)).collect(),
            c_w,
        )?);
        let violation = g.evaluate(&coll)? - g.evaluate(&orig)?;
        if violation > worst {
            worst = violation;
        }
        Ok(())
    };

    // structured candidate: symmetric two-point X collapsed to its mean
    let a = vec![vec![0.25; d], vec![0.75; d]];
    check(&a, &[0.5, 0.5], &[0, 0])?;

    let mut rng = rng_from_seed(derive_seed(seed, "lconvex"));
    for _ in 0..trials {
        let k = rng.gen_range(2..=16usize);
        let atoms: Vec<Vec<f64>> =
            (0..k).map(|_| (0..d).map(|_| rng.gen::<f64>()).collect()).collect();
        let mut probs: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 0.05).collect();
        let tot: f64 = probs.iter().sum();
        for p in probs.iter_mut() {
            *p /= tot;
        }
        let nb = rng.gen_range(1..=k);
        let blocks: Vec<usize> = (0..k).map(|_| rng.gen_range(0..nb)).collect();
        check(&atoms, &probs, &blocks)?;
    }
    Ok((worst <= 1e-9, worst))
}

/// Checks the moment bound `M_p(ν̄) ≤ L_G (T−t) + M_p(m^N_x)` at the
/// computed minimizing configuration ν̄. Returns (pass, margin).
pub fn moment_transfer_check(
    t: f64,
    x: &[Vec<f64>],
    g: &TerminalCost,
    horizon: f64,
    p: f64,
) -> Result<(bool, f64)> {
    if p < 5.0 {
        return Err(Error::InvalidParameter("moment order must be ≥ 5".into()));
    }
    let lg = g
        .lipschitz
        .ok_or_else(|| Error::InvalidParameter("Lipschitz constant required".into()))?;
    let sol = vn_deterministic(t, x, g, horizon)?;
    let domain = Domain::cube(x[0].len());
    let m_x = Measure::Empirical(empirical_from_points(
        x.iter().map(|a| fit_into(a, &domain)).collect(),
        domain.clone(),
    )?);
    let nu = Measure::Empirical(empirical_from_points(
        sol.argmin.iter().map(|a| fit_into(a, &domain)).collect(),
        domain,
    )?);
    let margin = lg * (horizon - t) + moment_p(&m_x, p) - moment_p(&nu, p);
    Ok((margin >= -1e-9, margin))
}

/// Per-N gap `V^N − (best upper bound on U)` over a family of
/// configurations with increasing N, with its log-log slope.
pub fn gap_report(
    t: f64,
    xs: &[Vec<Vec<f64>>],
    g: &TerminalCost,
    horizon: f64,
) -> Result<RateTable> {
    let tau = horizon - t;
    let mut rows = Vec::with_capacity(xs.len());
    for x in xs {
        let n = x.len();
        let sol = vn_deterministic(t, x, g, horizon)?;
        let d = x[0].len();
        let domain = g.domain_hint(d);
        let m = Measure::Empirical(empirical_from_points(
            x.iter().map(|a| fit_into(a, &domain)).collect(),
            domain.clone(),
        )?);
        let mut candidates = vec![m.clone()];
        if let CostKind::D1ToReference(r) = &g.kind {
            candidates.push(r.clone());
        }
        let upper = u_upper_candidates(t, &m, g, horizon, &candidates)?;
        let init = (
            sol.argmin.iter().map(|a| fit_into(a, &domain)).collect::<Vec<_>>(),
            vec![1.0 / n as f64; n],
        );
        let relaxed = u_relaxed_with_init(t, &m, g, horizon, n, 23, Some(init))?;
        let gap = sol.value - upper.min(relaxed.value);
        if gap < -1e-9 {
            return Err(Error::MonotonicityViolation(format!(
                "upper bound exceeded the particle value by {:.3e} at N = {n}",
                -gap
            )));
        }
        rows.push(RateRow { param: n as f64, value: gap.max(0.0), stderr: 0.0 });
        let _ = tau;
    }
    RateTable::from_rows(rows)
}
