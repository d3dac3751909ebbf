//! Fourier coefficients `m̂(k) = ∫ e^{-2πi k·x} dm(x)` of measures on the
//! torus, the raw material of the `H^{-s}` dual norms.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::measures::Measure;

#[derive(Debug, Clone)]
pub struct FourierCoeffs {
    pub d: usize,
    /// Coefficients cover all `k` with `|k|_∞ ≤ k_max`.
    pub k_max: i64,
    /// Row-major over the `(2K+1)^d` lattice, axis range `-K..=K`.
    pub coeffs: Vec<Complex64>,
}

impl FourierCoeffs {
    pub fn zero(d: usize, k_max: i64) -> Self {
        let n = (2 * k_max as usize + 1).pow(d as u32);
        Self { d, k_max, coeffs: vec![Complex64::new(0.0, 0.0); n] }
    }

    pub fn index(&self, k: &[i64]) -> usize {
        let side = 2 * self.k_max as usize + 1;
        let mut idx = 0;
        for &ki in k {
            debug_assert!(ki.abs() <= self.k_max);
            idx = idx * side + (ki + self.k_max) as usize;
        }
        idx
    }

    pub fn at(&self, k: &[i64]) -> Complex64 {
        self.coeffs[self.index(k)]
    }

    /// Iterate over all lattice frequencies with their flat index.
    pub fn frequencies(&self) -> impl Iterator<Item = (usize, Vec<i64>)> + '_ {
        let side = 2 * self.k_max + 1;
        let d = self.d;
        let k_max = self.k_max;
        (0..self.coeffs.len()).map(move |flat| {
            let mut rem = flat as i64;
            let mut k = vec![0i64; d];
            for i in (0..d).rev() {
                k[i] = rem % side - k_max;
                rem /= side;
            }
            (flat, k)
        })
    }

    /// Coefficientwise difference, the transform of the signed measure
    /// `m − m′`.
    pub fn sub(&self, other: &FourierCoeffs) -> Result<FourierCoeffs> {
        if self.d != other.d || self.k_max != other.k_max {
            return Err(Error::DomainMismatch(
                "Fourier truncations differ".into(),
            ));
        }
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a - b)
            .collect();
        Ok(FourierCoeffs { d: self.d, k_max: self.k_max, coeffs })
    }

    /// Worst Hermitian-symmetry defect `|m̂(-k) - conj(m̂(k))|`; zero for
    /// transforms of real measures up to roundoff.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (flat, k) in self.frequencies() {
            let neg: Vec<i64> = k.iter().map(|&ki| -ki).collect();
            let defect = (self.coeffs[self.index(&neg)] - self.coeffs[flat].conj()).norm();
            worst = worst.max(defect);
        }
        worst
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Transform of `m` truncated at `|k|_∞ ≤ K`. Atomic measures transform
/// exactly; grid densities are treated as piecewise-constant densities, so
/// each cell contributes its mass times a phase and a `sinc(πk h)` factor.
pub fn fourier_coeffs(m: &Measure, k_max: i64) -> Result<FourierCoeffs> {
    let domain = m.domain();
    if !domain.is_torus() {
        return Err(Error::Unsupported("Fourier coefficients require the torus".into()));
    }
    if k_max < 1 {
        return Err(Error::InvalidParameter("truncation K must be ≥ 1".into()));
    }
    let d = domain.dim();
    let mut out = FourierCoeffs::zero(d, k_max);
    let tau = 2.0 * std::f64::consts::PI;
    match m {
        Measure::Empirical(e) => {
            for (flat, k) in out.frequencies().collect::<Vec<_>>() {
                let mut acc = Complex64::new(0.0, 0.0);
                for (a, &w) in e.atoms.iter().zip(&e.weights) {
                    let phase: f64 = k.iter().zip(a).map(|(&ki, &xi)| ki as f64 * xi).sum();
                    acc += w * Complex64::from_polar(1.0, -tau * phase);
                }
                out.coeffs[flat] = acc;
            }
        }
        Measure::Grid(g) => {
            let centers: Vec<Vec<f64>> = (0..g.n_cells()).map(|i| g.cell_center(i)).collect();
            for (flat, k) in out.frequencies().collect::<Vec<_>>() {
                let shape: f64 = k
                    .iter()
                    .enumerate()
                    .map(|(i, &ki)| sinc(std::f64::consts::PI * ki as f64 / g.resolution[i] as f64))
                    .product();
                let mut acc = Complex64::new(0.0, 0.0);
                for (c, &mass) in centers.iter().zip(&g.masses) {
                    if mass == 0.0 {
                        continue;
                    }
                    let phase: f64 = k.iter().zip(c).map(|(&ki, &xi)| ki as f64 * xi).sum();
                    acc += mass * Complex64::from_polar(1.0, -tau * phase);
                }
                out.coeffs[flat] = shape * acc;
            }
        }
    }
    Ok(out)
}
