//! Finite-difference machinery on the torus: the N-particle HJB solver with
//! idiosyncratic and common noise, the Fokker-Planck solver with a shared
//! noise path (through the coefficient-shift change of variables), and the
//! probes built on top of them.

mod fp;
mod hjb;
mod probes;

pub use fp::{solve_fp_common_noise, tv_contraction_probe};
pub use hjb::{hjb_gradient_probe, solve_hjb_nparticle, viscosity_rate_probe};
pub use probes::{commutator_probe, feedback_value_search, integrated_value_mc};

use std::io::{Read as _, Write as _};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hopflax::TerminalCost;
use crate::measures::{Measure, MollifierKernel};
use crate::seeds::rng_from_seed;
use rand::Rng;

type DiffusionFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type RunningCostFn = Arc<dyn Fn(&Measure) -> crate::error::Result<f64> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hamiltonian {
    /// `H(x, p) = ½|p|²`.
    Quadratic,
}

/// Coefficients and costs of one control problem on the 1-D torus.
#[derive(Clone)]
pub struct ProblemData {
    pub horizon: f64,
    /// Idiosyncratic vanishing-viscosity strength.
    pub eta: f64,
    /// Idiosyncratic diffusion `A(x) = ½σ(x)²`, nonnegative.
    pub a: DiffusionFn,
    /// Common-noise diffusion `A0 = ½|σ⁰|²`, nonnegative.
    pub a0: f64,
    pub hamiltonian: Hamiltonian,
    pub terminal: TerminalCost,
    /// Running cost of the measure argument; zero when absent.
    pub running: Option<RunningCostFn>,
    /// When set, terminal and running costs are evaluated on the mollified
    /// empirical measure instead of the raw one.
    pub cost_kernel: Option<MollifierKernel>,
    /// Floor for the Lax-Friedrichs dissipation constant.
    pub lf_floor: f64,
}

impl ProblemData {
    pub fn new(horizon: f64, eta: f64, a: DiffusionFn, a0: f64, terminal: TerminalCost) -> Result<Self> {
        if horizon <= 0.0 || eta < 0.0 || a0 < 0.0 {
            return Err(Error::InvalidParameter(
                "need T > 0, η ≥ 0, A0 ≥ 0".into(),
            ));
        }
        Ok(ProblemData {
            horizon,
            eta,
            a,
            a0,
            hamiltonian: Hamiltonian::Quadratic,
            terminal,
            running: None,
            cost_kernel: None,
            lf_floor: 1.0,
        })
    }

    pub fn constant_diffusion(horizon: f64, eta: f64, a: f64, a0: f64, terminal: TerminalCost) -> Result<Self> {
        if a < 0.0 {
            return Err(Error::InvalidParameter("A must be nonnegative".into()));
        }
        Self::new(horizon, eta, Arc::new(move |_| a), a0, terminal)
    }

    /// Max of A over the periodic grid used by the solvers.
    pub fn a_max(&self, resolution: usize) -> f64 {
        (0..resolution)
            .map(|j| (self.a)(j as f64 / resolution as f64))
            .fold(0.0f64, f64::max)
    }

    pub fn a_min(&self, resolution: usize) -> f64 {
        (0..resolution)
            .map(|j| (self.a)(j as f64 / resolution as f64))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn summary(&self, n: usize, resolution: usize, dt: f64) -> ProblemSummary {
        ProblemSummary {
            horizon: self.horizon,
            eta: self.eta,
            a0: self.a0,
            hamiltonian: self.hamiltonian,
            terminal_kind: format!("{:?}", self.terminal),
            n,
            resolution,
            dt,
        }
    }
}

/// Serializable echo of the problem configuration (the sidecar payload).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemSummary {
    pub horizon: f64,
    pub eta: f64,
    pub a0: f64,
    pub hamiltonian: Hamiltonian,
    pub terminal_kind: String,
    pub n: usize,
    pub resolution: usize,
    pub dt: f64,
}

/// Value function samples on the periodic tensor grid `(T^1)^N`, with a
/// subsampled set of time slices (the full time march is not retained).
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTensor {
    pub n: usize,
    /// Nodes per axis; node j sits at x = j / resolution.
    pub resolution: usize,
    pub dt: f64,
    pub horizon: f64,
    /// Stored slice times, strictly increasing, first ≈ 0 and last = T.
    pub times: Vec<f64>,
    /// One value array per stored time, row-major over the N axes.
    pub values: Vec<Vec<f64>>,
}

impl ValueTensor {
    pub fn n_nodes(&self) -> usize {
        self.resolution.pow(self.n as u32)
    }

    pub fn node_coords(&self, mut flat: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for i in (0..self.n).rev() {
            x[i] = (flat % self.resolution) as f64 / self.resolution as f64;
            flat /= self.resolution;
        }
        x
    }

    /// Multilinear periodic interpolation of the stored slice `s` at x.
    pub fn at(&self, s: usize, x: &[f64]) -> f64 {
        let r = self.resolution;
        let vals = &self.values[s];
        let mut base = vec![0usize; self.n];
        let mut frac = vec![0.0f64; self.n];
        for i in 0..self.n {
            let u = (x[i].rem_euclid(1.0)) * r as f64;
            let j = u.floor() as usize % r;
            base[i] = j;
            frac[i] = u - u.floor();
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << self.n) {
            let mut idx = 0usize;
            let mut w = 1.0;
            for i in 0..self.n {
                let up = (corner >> i) & 1 == 1;
                let j = if up { (base[i] + 1) % r } else { base[i] };
                idx = idx * r + j;
                w *= if up { frac[i] } else { 1.0 - frac[i] };
            }
            acc += w * vals[idx];
        }
        acc
    }

    /// Index of the stored slice closest to time t.
    pub fn slice_near(&self, t: f64) -> usize {
        let mut best = 0;
        let mut bd = f64::INFINITY;
        for (i, &ti) in self.times.iter().enumerate() {
            if (ti - t).abs() < bd {
                bd = (ti - t).abs();
                best = i;
            }
        }
        best
    }

    const MAGIC: &'static [u8; 4] = b"MFVT";

    /// Binary layout: magic, version, dims, dt, horizon, then times and
    /// time-major values as little-endian f64. A JSON sidecar with the
    /// problem summary goes to `<path>.json`.
    pub fn save(&self, path: &std::path::Path, summary: &ProblemSummary) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(Self::MAGIC);
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&(self.n as u64).to_le_bytes());
        buf.extend_from_slice(&(self.resolution as u64).to_le_bytes());
        buf.extend_from_slice(&self.dt.to_le_bytes());
        buf.extend_from_slice(&self.horizon.to_le_bytes());
        buf.extend_from_slice(&(self.times.len() as u64).to_le_bytes());
        for &t in &self.times {
            buf.extend_from_slice(&t.to_le_bytes());
        }
        for slice in &self.values {
            for &v in slice {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        let sidecar = path.with_extension("json");
        std::fs::write(&sidecar, serde_json::to_vec_pretty(summary)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        let mut pos = 0usize;
        let take = |buf: &[u8], pos: &mut usize, n: usize| -> Result<Vec<u8>> {
            if *pos + n > buf.len() {
                return Err(Error::Serialization("truncated value tensor".into()));
            }
            let out = buf[*pos..*pos + n].to_vec();
            *pos += n;
            Ok(out)
        };
        let magic = take(&buf, &mut pos, 4)?;
        if magic != Self::MAGIC {
            return Err(Error::Serialization("bad value tensor magic".into()));
        }
        let _version = u32::from_le_bytes(take(&buf, &mut pos, 4)?.try_into().unwrap());
        let n = u64::from_le_bytes(take(&buf, &mut pos, 8)?.try_into().unwrap()) as usize;
        let resolution = u64::from_le_bytes(take(&buf, &mut pos, 8)?.try_into().unwrap()) as usize;
        let dt = f64::from_le_bytes(take(&buf, &mut pos, 8)?.try_into().unwrap());
        let horizon = f64::from_le_bytes(take(&buf, &mut pos, 8)?.try_into().unwrap());
        let n_slices = u64::from_le_bytes(take(&buf, &mut pos, 8)?.try_into().unwrap()) as usize;
        let mut times = Vec::with_capacity(n_slices);
        for _ in 0..n_slices {
            times.push(f64::from_le_bytes(take(&buf, &mut pos, 8)?.try_into().unwrap()));
        }
        let nodes = resolution.pow(n as u32);
        let mut values = Vec::with_capacity(n_slices);
        for _ in 0..n_slices {
            let raw = take(&buf, &mut pos, 8 * nodes)?;
            values.push(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            );
        }
        Ok(ValueTensor { n, resolution, dt, horizon, times, values })
    }
}

/// A sampled common-noise trajectory on a uniform time grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommonNoisePath {
    pub dt: f64,
    pub sigma0: f64,
    /// Brownian increments over each step, `~ N(0, dt)` under the seed.
    pub increments: Vec<f64>,
}

impl CommonNoisePath {
    pub fn sample(steps: usize, dt: f64, sigma0: f64, seed: u64) -> Result<Self> {
        if dt <= 0.0 || steps == 0 {
            return Err(Error::InvalidParameter("need dt > 0 and steps ≥ 1".into()));
        }
        let mut rng = rng_from_seed(seed);
        let mut increments = Vec::with_capacity(steps);
        while increments.len() < steps {
            // Box-Muller pair
            let u1: f64 = rng.gen::<f64>().max(1e-300);
            let u2: f64 = rng.gen::<f64>();
            let r = (-2.0 * u1.ln()).sqrt();
            let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
            increments.push(r * c * dt.sqrt());
            if increments.len() < steps {
                increments.push(r * s * dt.sqrt());
            }
        }
        Ok(CommonNoisePath { dt, sigma0, increments })
    }

    pub fn zero(steps: usize, dt: f64) -> Self {
        CommonNoisePath { dt, sigma0: 0.0, increments: vec![0.0; steps] }
    }

    /// `W⁰` value at the start of step k (so `w0(0) = 0`).
    pub fn w0(&self, k: usize) -> f64 {
        self.increments[..k.min(self.increments.len())].iter().sum()
    }
}

/// Piecewise-constant-in-time feedback control on the periodic space grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedbackControl {
    /// `values[slab][cell]`; slab s covers `[s·T/S, (s+1)·T/S)`.
    pub values: Vec<Vec<f64>>,
    pub horizon: f64,
    pub bound: f64,
}

impl FeedbackControl {
    pub fn new(values: Vec<Vec<f64>>, horizon: f64, bound: f64) -> Result<Self> {
        if values.is_empty() || values[0].is_empty() {
            return Err(Error::InvalidParameter("control grid must be nonempty".into()));
        }
        let cells = values[0].len();
        for row in &values {
            if row.len() != cells {
                return Err(Error::InvalidParameter("ragged control grid".into()));
            }
            for &v in row {
                if !v.is_finite() || v.abs() > bound + 1e-12 {
                    return Err(Error::InvalidParameter(format!(
                        "control value {v} exceeds the bound {bound}"
                    )));
                }
            }
        }
        Ok(FeedbackControl { values, horizon, bound })
    }

    pub fn zero(slabs: usize, cells: usize, horizon: f64, bound: f64) -> Self {
        FeedbackControl { values: vec![vec![0.0; cells]; slabs], horizon, bound }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().flat_map(|r| r.iter().map(|v| v.abs())).fold(0.0, f64::max)
    }

    /// Control value at time t and spatial position x (nearest cell).
    pub fn at(&self, t: f64, x: f64) -> f64 {
        let slabs = self.values.len();
        let s = ((t / self.horizon * slabs as f64).floor() as usize).min(slabs - 1);
        let cells = self.values[s].len();
        let j = ((x.rem_euclid(1.0)) * cells as f64).floor() as usize % cells;
        self.values[s][j]
    }
}

/// Terminal-cost evaluation on the empirical measure of a configuration,
/// mollified when the problem asks for it.
pub(crate) fn terminal_value(data: &ProblemData, x: &[f64]) -> Result<f64> {
    use crate::domain::Domain;
    use crate::measures::{empirical_from_points, mollify};
    let pts: Vec<Vec<f64>> = x.iter().map(|&c| vec![c.rem_euclid(1.0)]).collect();
    let m = Measure::Empirical(empirical_from_points(pts, Domain::torus(1))?);
    match &data.cost_kernel {
        None => data.terminal.evaluate(&m),
        Some(kernel) => {
            let out = (4.0 / kernel.delta).ceil().max(64.0) as usize;
            let g = mollify(&m, kernel, out)?;
            data.terminal.evaluate(&Measure::Grid(g))
        }
    }
}

pub(crate) fn running_value(data: &ProblemData, x: &[f64]) -> Result<f64> {
    match &data.running {
        None => Ok(0.0),
        Some(f) => {
            use crate::domain::Domain;
            use crate::measures::empirical_from_points;
            let pts: Vec<Vec<f64>> = x.iter().map(|&c| vec![c.rem_euclid(1.0)]).collect();
            let m = Measure::Empirical(empirical_from_points(pts, Domain::torus(1))?);
            f(&m)
        }
    }
}
