//! Probability measures on the torus and cube: empirical atom lists and
//! finite-volume grid densities, with mollification, mixing with Lebesgue,
//! translation and i.i.d. sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{wrap_unit, Domain};
use crate::error::{Error, Result};
use crate::seeds::rng_from_seed;

pub const MASS_TOL: f64 = 1e-12;

/// `m^N_x`-style atomic measure: weighted atoms in the domain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub domain: Domain,
    pub atoms: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

/// Finite-volume density: cell masses on a regular grid, row-major over the
/// per-axis resolutions. Cell `j` on axis `i` covers `[j/r_i, (j+1)/r_i)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridDensity {
    pub domain: Domain,
    pub resolution: Vec<usize>,
    pub masses: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Measure {
    Empirical(EmpiricalMeasure),
    Grid(GridDensity),
}

impl EmpiricalMeasure {
    pub fn new(domain: Domain, atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        domain.validate()?;
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(Error::InvalidParameter(
                "atoms and weights must be nonempty and of equal length".into(),
            ));
        }
        for (i, a) in atoms.iter().enumerate() {
            if !domain.contains(a) {
                return Err(Error::OutOfDomain { index: i });
            }
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::InvalidParameter("weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidParameter(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { domain, atoms, weights })
    }

    /// Point mass at `x`.
    pub fn dirac(domain: Domain, x: Vec<f64>) -> Result<Self> {
        Self::new(domain, vec![x], vec![1.0])
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    /// Bin the atoms onto a grid; each atom's whole mass goes to its
    /// containing cell (no splitting, so empiricals with distinct supports
    /// keep TV distance 1 once the grid separates them).
    pub fn bin(&self, resolution: &[usize]) -> Result<GridDensity> {
        let mut g = GridDensity::zero(self.domain, resolution.to_vec())?;
        for (a, &w) in self.atoms.iter().zip(&self.weights) {
            let idx = g.cell_of(a);
            g.masses[idx] += w;
        }
        Ok(g)
    }
}

/// Uniform empirical measure on the given points.
pub fn empirical_from_points(points: Vec<Vec<f64>>, domain: Domain) -> Result<EmpiricalMeasure> {
    let n = points.len();
    if n == 0 {
        return Err(Error::InvalidParameter("points must be nonempty".into()));
    }
    let w = 1.0 / n as f64;
    EmpiricalMeasure::new(domain, points, vec![w; n])
}

impl GridDensity {
    pub fn zero(domain: Domain, resolution: Vec<usize>) -> Result<Self> {
        domain.validate()?;
        if resolution.len() != domain.dim() || resolution.iter().any(|&r| r == 0) {
            return Err(Error::InvalidParameter(
                "resolution must give a positive cell count per axis".into(),
            ));
        }
        let cells = resolution.iter().product();
        Ok(Self { domain, resolution, masses: vec![0.0; cells] })
    }

    pub fn new(domain: Domain, resolution: Vec<usize>, masses: Vec<f64>) -> Result<Self> {
        let mut g = Self::zero(domain, resolution)?;
        if masses.len() != g.masses.len() {
            return Err(Error::InvalidParameter(format!(
                "expected {} cell masses, got {}",
                g.masses.len(),
                masses.len()
            )));
        }
        if masses.iter().any(|&m| !(m >= -MASS_TOL)) {
            return Err(Error::InvalidParameter("cell masses must be nonnegative".into()));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidParameter(format!(
                "cell masses sum to {total}, expected 1"
            )));
        }
        g.masses = masses;
        Ok(g)
    }

    pub fn uniform(domain: Domain, resolution: Vec<usize>) -> Result<Self> {
        let mut g = Self::zero(domain, resolution)?;
        let v = 1.0 / g.masses.len() as f64;
        g.masses.fill(v);
        Ok(g)
    }

    pub fn n_cells(&self) -> usize {
        self.masses.len()
    }

    pub fn cell_volume(&self) -> f64 {
        1.0 / self.n_cells() as f64
    }

    /// Flat index of the cell containing `p` (row-major).
    pub fn cell_of(&self, p: &[f64]) -> usize {
        let mut idx = 0;
        for (i, &r) in self.resolution.iter().enumerate() {
            let mut j = (p[i] * r as f64).floor() as isize;
            j = j.clamp(0, r as isize - 1);
            idx = idx * r + j as usize;
        }
        idx
    }

    pub fn cell_center(&self, flat: usize) -> Vec<f64> {
        let mut rem = flat;
        let d = self.resolution.len();
        let mut multi = vec![0usize; d];
        for i in (0..d).rev() {
            multi[i] = rem % self.resolution[i];
            rem /= self.resolution[i];
        }
        multi
            .iter()
            .zip(&self.resolution)
            .map(|(&j, &r)| (j as f64 + 0.5) / r as f64)
            .collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }
}

impl Measure {
    pub fn domain(&self) -> Domain {
        match self {
            Measure::Empirical(m) => m.domain,
            Measure::Grid(g) => g.domain,
        }
    }

    /// Grid representation: identity for grids whose resolution matches,
    /// binning for empiricals.
    pub fn as_grid(&self, resolution: &[usize]) -> Result<GridDensity> {
        match self {
            Measure::Empirical(m) => m.bin(resolution),
            Measure::Grid(g) => {
                if g.resolution == resolution {
                    Ok(g.clone())
                } else {
                    Err(Error::Unsupported(
                        "grid resampling to a different resolution is not provided".into(),
                    ))
                }
            }
        }
    }
}

/// Smooth approximate identity `ρ_δ`, realized as a product of 1-D kernels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MollifierKernel {
    pub delta: f64,
    pub shape: KernelShape,
    /// Support radius in units of `δ`.
    pub truncation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelShape {
    PeriodicGaussian,
    Bump,
}

impl MollifierKernel {
    /// Wrapped Gaussian of bandwidth `δ` truncated at `6δ`.
    pub fn gaussian(delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::InvalidParameter("mollifier bandwidth must be positive".into()));
        }
        Ok(Self { delta, shape: KernelShape::PeriodicGaussian, truncation: 6.0 })
    }

    pub fn bump(delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::InvalidParameter("mollifier bandwidth must be positive".into()));
        }
        Ok(Self { delta, shape: KernelShape::Bump, truncation: 1.0 })
    }

    fn profile(&self, u: f64) -> f64 {
        let r = u / self.delta;
        if r.abs() > self.truncation {
            return 0.0;
        }
        match self.shape {
            KernelShape::PeriodicGaussian => (-0.5 * r * r).exp(),
            KernelShape::Bump => {
                if r.abs() >= 1.0 {
                    0.0
                } else {
                    (-1.0 / (1.0 - r * r)).exp()
                }
            }
        }
    }

    /// Discrete 1-D kernel on a periodic grid of `cells` cells: weights by
    /// cell-center sampling, normalized to unit mass. The stencil half-width
    /// covers the truncated support.
    pub fn discrete_weights(&self, cells: usize) -> Result<Vec<f64>> {
        let h = 1.0 / cells as f64;
        if h > self.delta / 4.0 + 1e-15 {
            return Err(Error::InvalidParameter(format!(
                "grid too coarse for mollification: cell width {h:.4} > δ/4 = {:.4}",
                self.delta / 4.0
            )));
        }
        let half = ((self.truncation * self.delta) / h).ceil() as usize;
        let half = half.min(cells / 2);
        let mut w = vec![0.0; 2 * half + 1];
        for (i, wi) in w.iter_mut().enumerate() {
            let off = i as isize - half as isize;
            *wi = self.profile(off as f64 * h);
        }
        let total: f64 = w.iter().sum();
        for wi in &mut w {
            *wi /= total;
        }
        Ok(w)
    }

    /// First absolute moment `∫|u| ρ_δ(u) du` of the unit (continuous,
    /// truncated) kernel, by quadrature; scales linearly in `δ`.
    pub fn first_abs_moment(&self) -> f64 {
        let r = self.truncation * self.delta;
        let n = 20_000;
        let h = 2.0 * r / n as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..=n {
            let u = -r + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            let p = self.profile(u);
            num += w * u.abs() * p;
            den += w * p;
        }
        num / den
    }

    /// Fourier multiplier of the discrete periodic convolution at frequency
    /// `k` on a `cells`-cell grid (real by symmetry of the kernel).
    pub fn discrete_symbol(&self, cells: usize, k: i64) -> Result<f64> {
        let w = self.discrete_weights(cells)?;
        let half = (w.len() - 1) / 2;
        let h = 1.0 / cells as f64;
        let mut s = 0.0;
        for (i, &wi) in w.iter().enumerate() {
            let off = (i as isize - half as isize) as f64 * h;
            s += wi * (2.0 * std::f64::consts::PI * k as f64 * off).cos();
        }
        Ok(s)
    }
}

/// Discrete convolution `m * ρ_δ` on a torus grid of the given resolution.
/// Empirical inputs are binned first; the kernel acts separably per axis.
pub fn mollify(m: &Measure, kernel: &MollifierKernel, out_resolution: usize) -> Result<GridDensity> {
    let domain = m.domain();
    if !domain.is_torus() {
        return Err(Error::Unsupported("mollification is defined on the torus".into()));
    }
    let res = vec![out_resolution; domain.dim()];
    let g = m.as_grid(&res)?;
    mollify_grid(&g, kernel)
}

pub fn mollify_grid(g: &GridDensity, kernel: &MollifierKernel) -> Result<GridDensity> {
    if !g.domain.is_torus() {
        return Err(Error::Unsupported("mollification is defined on the torus".into()));
    }
    let mut out = g.clone();
    let d = g.resolution.len();
    for axis in 0..d {
        let cells = g.resolution[axis];
        let w = kernel.discrete_weights(cells)?;
        out = convolve_axis(&out, axis, &w);
    }
    Ok(out)
}

fn convolve_axis(g: &GridDensity, axis: usize, w: &[f64]) -> GridDensity {
    let half = (w.len() - 1) as isize / 2;
    let res = &g.resolution;
    let d = res.len();
    let n = g.masses.len();
    // strides, row-major
    let mut strides = vec![1usize; d];
    for i in (0..d.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * res[i + 1];
    }
    let r_axis = res[axis] as isize;
    let stride = strides[axis];
    let mut out = vec![0.0; n];
    for flat in 0..n {
        let j_axis = (flat / stride) % res[axis];
        let base = flat - j_axis * stride;
        let mass = g.masses[flat];
        if mass == 0.0 {
            continue;
        }
        for (wi, &weight) in w.iter().enumerate() {
            let off = wi as isize - half;
            let mut j = (j_axis as isize + off) % r_axis;
            if j < 0 {
                j += r_axis;
            }
            out[base + j as usize * stride] += mass * weight;
        }
    }
    GridDensity { domain: g.domain, resolution: g.resolution.clone(), masses: out }
}

/// `λ·Leb + (1−λ)·m`, cellwise on the grid.
pub fn mix_with_lebesgue(m: &GridDensity, lambda: f64) -> Result<GridDensity> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!("λ = {lambda} outside [0,1]")));
    }
    let v = m.cell_volume();
    let masses = m.masses.iter().map(|&c| lambda * v + (1.0 - lambda) * c).collect();
    Ok(GridDensity { domain: m.domain, resolution: m.resolution.clone(), masses })
}

/// Pushforward `(Id + z)_# m`. On the torus coordinates wrap; grid densities
/// translate with linear mass splitting between the two straddled cells
/// (exact when `z` is a multiple of the cell width).
pub fn translate(m: &Measure, z: &[f64]) -> Result<Measure> {
    let domain = m.domain();
    if z.len() != domain.dim() || z.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidParameter("translation vector must be finite of matching dimension".into()));
    }
    match m {
        Measure::Empirical(e) => {
            let mut atoms = Vec::with_capacity(e.atoms.len());
            for (i, a) in e.atoms.iter().enumerate() {
                let mut p: Vec<f64> = a.iter().zip(z).map(|(&x, &dz)| x + dz).collect();
                domain.wrap(&mut p);
                if !domain.contains(&p) {
                    return Err(Error::OutOfDomain { index: i });
                }
                atoms.push(p);
            }
            Ok(Measure::Empirical(EmpiricalMeasure {
                domain,
                atoms,
                weights: e.weights.clone(),
            }))
        }
        Measure::Grid(g) => {
            if !domain.is_torus() {
                if z.iter().all(|&c| c == 0.0) {
                    return Ok(m.clone());
                }
                return Err(Error::Unsupported(
                    "grid translation on the cube would move mass outside".into(),
                ));
            }
            let mut out = g.clone();
            for (axis, &dz) in z.iter().enumerate() {
                out = translate_axis(&out, axis, dz);
            }
            Ok(Measure::Grid(out))
        }
    }
}

fn translate_axis(g: &GridDensity, axis: usize, dz: f64) -> GridDensity {
    let res = &g.resolution;
    let d = res.len();
    let mut strides = vec![1usize; d];
    for i in (0..d.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * res[i + 1];
    }
    let r = res[axis];
    let stride = strides[axis];
    let shift = wrap_unit(dz) * r as f64;
    let whole = shift.floor() as usize % r;
    let frac = shift - shift.floor();
    let mut out = vec![0.0; g.masses.len()];
    for flat in 0..g.masses.len() {
        let j = (flat / stride) % r;
        let base = flat - j * stride;
        let j0 = (j + whole) % r;
        let j1 = (j0 + 1) % r;
        out[base + j0 * stride] += g.masses[flat] * (1.0 - frac);
        out[base + j1 * stride] += g.masses[flat] * frac;
    }
    GridDensity { domain: g.domain, resolution: g.resolution.clone(), masses: out }
}

/// Draw `n` i.i.d. points from `m`: categorical over atoms for empiricals,
/// inverse-CDF over cells (uniform within the chosen cell) for grids.
pub fn sample_iid(m: &Measure, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample size must be ≥ 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(n);
    match m {
        Measure::Empirical(e) => {
            let cdf = cumsum(&e.weights);
            for _ in 0..n {
                let u: f64 = rng.gen();
                let i = lower_bound(&cdf, u);
                out.push(e.atoms[i].clone());
            }
        }
        Measure::Grid(g) => {
            let cdf = cumsum(&g.masses);
            let d = g.resolution.len();
            for _ in 0..n {
                let u: f64 = rng.gen();
                let flat = lower_bound(&cdf, u);
                let mut c = g.cell_center(flat);
                for (i, ci) in c.iter_mut().enumerate().take(d) {
                    let h = 1.0 / g.resolution[i] as f64;
                    let v: f64 = rng.gen();
                    *ci += (v - 0.5) * h;
                }
                out.push(c);
            }
        }
    }
    Ok(out)
}

fn cumsum(w: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(w.len());
    for &x in w {
        acc += x;
        out.push(acc);
    }
    if let Some(last) = out.last_mut() {
        *last = last.max(1.0);
    }
    out
}

fn lower_bound(cdf: &[f64], u: f64) -> usize {
    match cdf.binary_search_by(|v| v.partial_cmp(&u).unwrap()) {
        Ok(i) | Err(i) => i.min(cdf.len() - 1),
    }
}
