//! Exact W_2 between measures with piecewise-constant densities on the
//! uniform cells of a circle.
//!
//! On the circle the quadratic cost is `inf_θ ∫_0^1 |F⁻¹(u) − G⁻¹(u + θ)|² du`
//! with the quantile functions extended quasi-periodically
//! (`G⁻¹(u + 1) = G⁻¹(u) + L`). The objective is convex in θ. With cellwise
//! constant densities both quantiles are piecewise linear, so each
//! evaluation is an exact sum over merged breakpoints.

use crate::error::{Error, Result};
use crate::quadrature::golden_section;

/// Cell masses of a measure on `n` equal cells of `[0, length)`.
#[derive(Debug, Clone)]
pub struct CircleCells {
    length: f64,
    /// cumulative masses at the cell edges, `cdf[0] = 0`, `cdf[n] = 1`
    cdf: Vec<f64>,
    masses: Vec<f64>,
}

impl CircleCells {
    pub fn new(masses: &[f64], length: f64) -> Result<Self> {
        if masses.is_empty() {
            return Err(Error::InvalidInput("no cells".into()));
        }
        if let Some((index, &value)) = masses.iter().enumerate().find(|(_, m)| !(**m >= 0.0)) {
            return Err(Error::NegativeMass { index, value });
        }
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidInput("cells carry no mass".into()));
        }
        let masses: Vec<f64> = masses.iter().map(|m| m / total).collect();
        let mut cdf = Vec::with_capacity(masses.len() + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for m in &masses {
            acc += m;
            cdf.push(acc);
        }
        *cdf.last_mut().unwrap() = 1.0;
        Ok(Self { length, cdf, masses })
    }

    fn cells(&self) -> usize {
        self.masses.len()
    }

    /// Quantile on `[0, 1]`, evaluated on the branch of cell `k`.
    fn quantile_in(&self, k: usize, u: f64) -> f64 {
        let h = self.length / self.cells() as f64;
        let m = self.masses[k];
        if m == 0.0 {
            return k as f64 * h;
        }
        k as f64 * h + (u - self.cdf[k]) / m * h
    }

    /// Cell whose cumulative interval contains `u` (interior point).
    fn cell_of(&self, u: f64) -> usize {
        // first edge strictly above u, minus one
        let k = self.cdf.partition_point(|&c| c <= u);
        k.clamp(1, self.cells()) - 1
    }
}

/// Exact squared cost for a fixed quantile shift θ.
fn shifted_cost(a: &CircleCells, b: &CircleCells, theta: f64) -> f64 {
    let l = a.length;
    // breakpoints of u ↦ F⁻¹(u) and of u ↦ G⁻¹(u + θ) on [0, 1]
    let mut cuts: Vec<f64> = a.cdf.clone();
    let shift = theta.floor();
    for m in [shift, shift + 1.0] {
        for &c in &b.cdf {
            let u = c + m - theta;
            if u > 0.0 && u < 1.0 {
                cuts.push(u);
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (u0, u1) = (w[0], w[1]);
        if u1 <= u0 {
            continue;
        }
        let mid = 0.5 * (u0 + u1);
        let ka = a.cell_of(mid);
        let v = mid + theta;
        let wrap = v.floor();
        let kb = b.cell_of(v - wrap);
        let diff = |u: f64| {
            let vb = u + theta - wrap;
            a.quantile_in(ka, u) - (b.quantile_in(kb, vb) + wrap * l)
        };
        let (d0, d1) = (diff(u0), diff(u1));
        total += (u1 - u0) * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0;
    }
    total
}

/// `W_2` between two probability measures given by their masses on the same
/// `n` uniform cells of a circle of length `length` (uniform density inside
/// each cell). Masses are normalised to unit total.
pub fn circle_w2_cells(a: &[f64], b: &[f64], length: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!("{} vs {} cells", a.len(), b.len())));
    }
    let (ta, tb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if (ta - tb).abs() > super::MASS_TOLERANCE * ta.max(tb).max(1.0) {
        return Err(Error::MassMismatch {
            source_mass: ta,
            target_mass: tb,
        });
    }
    let ca = CircleCells::new(a, length)?;
    let cb = CircleCells::new(b, length)?;
    let (_, cost) = golden_section(|t| shifted_cost(&ca, &cb, t), -1.0, 1.0, 1e-14);
    Ok(cost.max(0.0).sqrt())
}
