//! Exact 1-D transport via CDF and quantile functions.
//!
//! A 1-D measure is viewed as sorted atoms plus grid cells. CDF differences
//! are piecewise affine with jumps at atoms, so `∫|F−G|` (the 1-Wasserstein
//! distance on the line) and the quantile-coupling integral
//! `∫(F⁻¹−G⁻¹)² du` (squared 2-Wasserstein) are computed in closed form per
//! piece. On the circle, `d1 = min_c ∫|F−G−c|` with `c*` the Lebesgue
//! median of `F−G`.

use crate::error::{Error, Result};
use crate::measures::Measure;

/// Sorted-support view of a 1-D measure.
pub struct OneD {
    /// Sorted merged `(position, weight)` atoms.
    pub atoms: Vec<(f64, f64)>,
    /// Sorted `(left, right, mass)` cells of a piecewise-constant density.
    pub cells: Vec<(f64, f64, f64)>,
}

impl OneD {
    pub fn from_measure(m: &Measure) -> Result<Self> {
        if m.domain().dim() != 1 {
            return Err(Error::Unsupported("CDF route requires d = 1".into()));
        }
        Ok(match m {
            Measure::Empirical(e) => {
                let mut pairs: Vec<(f64, f64)> =
                    e.atoms.iter().zip(&e.weights).map(|(a, &w)| (a[0], w)).collect();
                pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                let mut atoms: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
                for (x, w) in pairs {
                    match atoms.last_mut() {
                        Some(last) if last.0 == x => last.1 += w,
                        _ => atoms.push((x, w)),
                    }
                }
                OneD { atoms, cells: Vec::new() }
            }
            Measure::Grid(g) => {
                let r = g.resolution[0];
                let h = 1.0 / r as f64;
                let cells = (0..r)
                    .filter(|&j| g.masses[j] != 0.0)
                    .map(|j| (j as f64 * h, (j + 1) as f64 * h, g.masses[j]))
                    .collect();
                OneD { atoms: Vec::new(), cells }
            }
        })
    }

    /// Right-continuous CDF value `F(x+)`.
    pub fn cdf_plus(&self, x: f64) -> f64 {
        let mut f = 0.0;
        for &(p, w) in &self.atoms {
            if p <= x {
                f += w;
            } else {
                break;
            }
        }
        for &(l, r, m) in &self.cells {
            if x >= r {
                f += m;
            } else if x > l {
                f += m * (x - l) / (r - l);
            } else {
                break;
            }
        }
        f
    }

    /// Atom weight exactly at `x` (the jump of the CDF).
    pub fn jump_at(&self, x: f64) -> f64 {
        self.atoms
            .iter()
            .find(|&&(p, _)| p == x)
            .map(|&(_, w)| w)
            .unwrap_or(0.0)
    }

    /// All CDF breakpoints (atom positions and cell edges).
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.atoms.iter().map(|&(p, _)| p).collect();
        for &(l, r, _) in &self.cells {
            b.push(l);
            b.push(r);
        }
        b
    }

    /// Quantile function as affine pieces `(u0, u1, x0, x1)`: on the mass
    /// interval `[u0, u1]` the quantile moves affinely from `x0` to `x1`.
    pub fn quantile_pieces(&self) -> Vec<(f64, f64, f64, f64)> {
        // Merge atoms and cells in position order.
        let mut events: Vec<(f64, f64, f64)> = Vec::new(); // (x0, x1, mass)
        let mut ai = 0;
        let mut ci = 0;
        while ai < self.atoms.len() || ci < self.cells.len() {
            let take_atom = match (self.atoms.get(ai), self.cells.get(ci)) {
                (Some(&(p, _)), Some(&(l, _, _))) => p <= l,
                (Some(_), None) => true,
                _ => false,
            };
            if take_atom {
                let (p, w) = self.atoms[ai];
                events.push((p, p, w));
                ai += 1;
            } else {
                let (l, r, m) = self.cells[ci];
                events.push((l, r, m));
                ci += 1;
            }
        }
        let mut u = 0.0;
        let mut out = Vec::with_capacity(events.len());
        for (x0, x1, mass) in events {
            if mass <= 0.0 {
                continue;
            }
            out.push((u, u + mass, x0, x1));
            u += mass;
        }
        out
    }
}

/// The piecewise-affine difference `D = F − G` over the merged breakpoint
/// grid: segments `(u, v, D(u+), D(v−))`.
fn diff_segments(a: &OneD, b: &OneD, lo: f64, hi: f64) -> Vec<(f64, f64, f64, f64)> {
    let mut bp: Vec<f64> = a.breakpoints();
    bp.extend(b.breakpoints());
    bp.push(lo);
    bp.push(hi);
    bp.retain(|&x| x >= lo && x <= hi);
    bp.sort_by(|x, y| x.partial_cmp(y).unwrap());
    bp.dedup();
    let mut segs = Vec::with_capacity(bp.len());
    for w in bp.windows(2) {
        let (u, v) = (w[0], w[1]);
        if v <= u {
            continue;
        }
        let du = a.cdf_plus(u) - b.cdf_plus(u);
        let dv = (a.cdf_plus(v) - a.jump_at(v)) - (b.cdf_plus(v) - b.jump_at(v));
        segs.push((u, v, du, dv));
    }
    segs
}

/// `∫ |p + slope·t| dt` over a segment with endpoint values `p`, `q` and
/// length `len`, splitting at the zero crossing.
fn integrate_abs_affine(p: f64, q: f64, len: f64) -> f64 {
    if p * q >= 0.0 {
        0.5 * (p.abs() + q.abs()) * len
    } else {
        len * (p * p + q * q) / (2.0 * (p - q).abs())
    }
}

/// Exact `d1` on the line: `∫ |F − G|` over the hull of both supports.
pub fn d1_line(a: &OneD, b: &OneD) -> f64 {
    let (lo, hi) = support_hull(a, b);
    diff_segments(a, b, lo, hi)
        .iter()
        .map(|&(u, v, p, q)| integrate_abs_affine(p, q, v - u))
        .sum()
}

fn support_hull(a: &OneD, b: &OneD) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for m in [a, b] {
        for &(p, _) in &m.atoms {
            lo = lo.min(p);
            hi = hi.max(p);
        }
        for &(l, r, _) in &m.cells {
            lo = lo.min(l);
            hi = hi.max(r);
        }
    }
    if lo > hi {
        (0.0, 1.0)
    } else {
        (lo.min(0.0), hi.max(1.0))
    }
}

/// Exact `d1` on the circle: `min_c ∫₀¹ |F − G − c|` with `c*` the Lebesgue
/// median of `F − G`.
pub fn d1_circle(a: &OneD, b: &OneD) -> f64 {
    let segs = diff_segments(a, b, 0.0, 1.0);
    // Median level of the piecewise-affine D by bisection on
    // Leb{u : D(u) ≤ c}.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(_, _, p, q) in &segs {
        lo = lo.min(p.min(q));
        hi = hi.max(p.max(q));
    }
    if !lo.is_finite() {
        return 0.0;
    }
    let leb_below = |c: f64| -> f64 {
        segs.iter()
            .map(|&(u, v, p, q)| {
                let len = v - u;
                let (mn, mx) = (p.min(q), p.max(q));
                if c >= mx {
                    len
                } else if c <= mn {
                    0.0
                } else {
                    len * (c - mn) / (mx - mn)
                }
            })
            .sum()
    };
    let (mut clo, mut chi) = (lo, hi);
    for _ in 0..80 {
        let mid = 0.5 * (clo + chi);
        if leb_below(mid) < 0.5 {
            clo = mid;
        } else {
            chi = mid;
        }
    }
    let c = 0.5 * (clo + chi);
    segs.iter()
        .map(|&(u, v, p, q)| integrate_abs_affine(p - c, q - c, v - u))
        .sum()
}

/// Exact squared `d2` on the line via the quantile coupling
/// `∫₀¹ (F⁻¹ − G⁻¹)² du` (Simpson per merged piece, exact for the
/// piecewise-quadratic integrand).
pub fn d2_sq_line(a: &OneD, b: &OneD) -> f64 {
    let pa = a.quantile_pieces();
    let pb = b.quantile_pieces();
    let mut cuts: Vec<f64> = pa.iter().flat_map(|&(u0, u1, _, _)| [u0, u1]).collect();
    cuts.extend(pb.iter().flat_map(|&(u0, u1, _, _)| [u0, u1]));
    cuts.push(0.0);
    cuts.push(1.0);
    cuts.retain(|&u| (0.0..=1.0).contains(&u));
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cuts.dedup();
    let eval = |pieces: &[(f64, f64, f64, f64)], u: f64| -> f64 {
        // Locate the piece containing u; pieces tile [0,1].
        let i = pieces
            .partition_point(|&(_, u1, _, _)| u1 < u)
            .min(pieces.len() - 1);
        let (u0, u1, x0, x1) = pieces[i];
        if u1 <= u0 {
            x0
        } else {
            x0 + (x1 - x0) * ((u - u0) / (u1 - u0)).clamp(0.0, 1.0)
        }
    };
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (u, v) = (w[0], w[1]);
        let len = v - u;
        if len <= 0.0 {
            continue;
        }
        let mid = 0.5 * (u + v);
        // Segment endpoints are evaluated one-sidedly through the piece
        // containing the midpoint; Simpson is exact for the quadratic piece.
        let fu = piece_eval_sq(&pa, &pb, u, mid);
        let fm = {
            let qa = eval(&pa, mid);
            let qb = eval(&pb, mid);
            (qa - qb) * (qa - qb)
        };
        let fv = piece_eval_sq(&pa, &pb, v, mid);
        total += len / 6.0 * (fu + 4.0 * fm + fv);
    }
    total
}

fn piece_eval_sq(
    pa: &[(f64, f64, f64, f64)],
    pb: &[(f64, f64, f64, f64)],
    u: f64,
    interior: f64,
) -> f64 {
    let eval_in_piece = |pieces: &[(f64, f64, f64, f64)]| -> f64 {
        // Choose the piece that contains the interior point, evaluate its
        // affine extension at u (u is an endpoint of that piece).
        let i = pieces
            .partition_point(|&(_, u1, _, _)| u1 < interior)
            .min(pieces.len() - 1);
        let (u0, u1, x0, x1) = pieces[i];
        if u1 <= u0 {
            x0
        } else {
            x0 + (x1 - x0) * ((u - u0) / (u1 - u0)).clamp(0.0, 1.0)
        }
    };
    let qa = eval_in_piece(pa);
    let qb = eval_in_piece(pb);
    (qa - qb) * (qa - qb)
}

/// Upper bound for squared `d2` on the circle: minimum over cut points of
/// the unrolled line coupling. For strictly convex costs some cut is
/// optimal, so a dense cut search converges to the true value; the result
/// is always an admissible (hence upper-bounding) coupling cost.
pub fn d2_sq_circle(a: &OneD, b: &OneD) -> f64 {
    let mut cuts: Vec<f64> = a.breakpoints();
    cuts.extend(b.breakpoints());
    for i in 0..32 {
        cuts.push(i as f64 / 32.0);
    }
    for c in cuts.iter_mut() {
        *c = c.rem_euclid(1.0);
    }
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cuts.dedup();
    let mut best = f64::INFINITY;
    for &c in &cuts {
        let ra = recut(a, c);
        let rb = recut(b, c);
        best = best.min(d2_sq_line(&ra, &rb));
    }
    best
}

/// Re-coordinate a circle measure with the cut at `c`: positions map to
/// `(x − c) mod 1`; straddling cells split in two.
fn recut(m: &OneD, c: f64) -> OneD {
    let mut atoms: Vec<(f64, f64)> =
        m.atoms.iter().map(|&(p, w)| ((p - c).rem_euclid(1.0), w)).collect();
    atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut cells: Vec<(f64, f64, f64)> = Vec::new();
    for &(l, r, mass) in &m.cells {
        let nl = (l - c).rem_euclid(1.0);
        let len = r - l;
        if nl + len <= 1.0 + 1e-15 {
            cells.push((nl, (nl + len).min(1.0), mass));
        } else {
            let first = 1.0 - nl;
            cells.push((nl, 1.0, mass * first / len));
            cells.push((0.0, len - first, mass * (len - first) / len));
        }
    }
    cells.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    OneD { atoms, cells }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Domain;
    use crate::measures::{empirical_from_points, EmpiricalMeasure, GridDensity};
    use approx::assert_abs_diff_eq;

    fn dirac(domain: Domain, x: f64) -> OneD {
        OneD::from_measure(&Measure::Empirical(
            EmpiricalMeasure::dirac(domain, vec![x]).unwrap(),
        ))
        .unwrap()
    }

    fn leb_grid(domain: Domain, r: usize) -> OneD {
        OneD::from_measure(&Measure::Grid(GridDensity::uniform(domain, vec![r]).unwrap())).unwrap()
    }

    #[test]
    fn d1_antipodal_diracs() {
        let a = dirac(Domain::torus(1), 0.0);
        let b = dirac(Domain::torus(1), 0.5);
        assert_abs_diff_eq!(d1_circle(&a, &b), 0.5, epsilon = 1e-12);
        // On the line the same pair costs 0.5 too.
        assert_abs_diff_eq!(d1_line(&a, &b), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn d1_circle_beats_line_near_wrap() {
        let a = dirac(Domain::torus(1), 0.05);
        let b = dirac(Domain::torus(1), 0.95);
        assert_abs_diff_eq!(d1_circle(&a, &b), 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(d1_line(&a, &b), 0.9, epsilon = 1e-12);
    }

    #[test]
    fn d1_grid_centers_vs_lebesgue_quarter_n() {
        // N centered atoms against the uniform density: ∫|F_N(u)−u| = 1/(4N).
        for n in [1usize, 4, 16] {
            let pts: Vec<Vec<f64>> =
                (0..n).map(|i| vec![(2 * i + 1) as f64 / (2 * n) as f64]).collect();
            let e = OneD::from_measure(&Measure::Empirical(
                empirical_from_points(pts, Domain::cube(1)).unwrap(),
            ))
            .unwrap();
            let leb = leb_grid(Domain::cube(1), 64);
            assert_abs_diff_eq!(d1_line(&e, &leb), 1.0 / (4 * n) as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn d2_sq_dirac_pair_is_squared_distance() {
        let a = dirac(Domain::cube(1), 0.2);
        let b = dirac(Domain::cube(1), 0.9);
        assert_abs_diff_eq!(d2_sq_line(&a, &b), 0.49, epsilon = 1e-12);
    }

    #[test]
    fn d2_sq_centers_vs_lebesgue() {
        // d2²(centers_N, Leb) = 1/(12N²).
        for n in [1usize, 2, 4] {
            let pts: Vec<Vec<f64>> =
                (0..n).map(|i| vec![(2 * i + 1) as f64 / (2 * n) as f64]).collect();
            let e = OneD::from_measure(&Measure::Empirical(
                empirical_from_points(pts, Domain::cube(1)).unwrap(),
            ))
            .unwrap();
            let leb = leb_grid(Domain::cube(1), 32);
            assert_abs_diff_eq!(
                d2_sq_line(&e, &leb),
                1.0 / (12 * n * n) as f64,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn d2_sq_circle_wraps() {
        let a = dirac(Domain::torus(1), 0.05);
        let b = dirac(Domain::torus(1), 0.95);
        assert_abs_diff_eq!(d2_sq_circle(&a, &b), 0.01, epsilon = 1e-12);
    }

    #[test]
    fn grid_self_distance_is_zero() {
        let g = leb_grid(Domain::torus(1), 16);
        let g2 = leb_grid(Domain::torus(1), 16);
        assert_abs_diff_eq!(d1_circle(&g, &g2), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(d2_sq_circle(&g, &g2), 0.0, epsilon = 1e-12);
    }
}
