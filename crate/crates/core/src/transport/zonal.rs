//! Exact W_2 between zonal measures on the round sphere.
//!
//! Transporting along meridians is optimal for measures invariant under
//! rotation about the polar axis (the geodesic distance is at least
//! `r |θ_x − θ_y|`), so the cost reduces to the 1-D quantile formula for the
//! colatitude marginals. Heat-evolved zonal measures have Legendre series
//! densities whose distribution functions are available in closed form via
//! `∫_x^1 P_l = (P_{l−1}(x) − P_{l+1}(x)) / (2l + 1)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::heat::SphereKernel;
use crate::quadrature::gauss_legendre;

/// A probability measure on the sphere invariant under rotations about the
/// polar axis.
#[derive(Debug, Clone)]
pub enum ZonalMeasure {
    /// Uniform measures on latitude rings: `(colatitude, mass)`, sorted.
    Rings(Vec<(f64, f64)>),
    /// Density `Σ a_l P_l(cos θ)` with respect to area.
    Smooth { radius: f64, coefficients: Vec<f64> },
}

fn legendre_all(l_max: usize, x: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(l_max + 2);
    p.push(1.0);
    p.push(x);
    for l in 1..=l_max {
        let lf = l as f64;
        p.push(((2.0 * lf + 1.0) * x * p[l] - lf * p[l - 1]) / (lf + 1.0));
    }
    p
}

impl ZonalMeasure {
    /// Rings with the given colatitudes and masses, normalised to unit mass.
    pub fn rings(rings: &[(f64, f64)]) -> Result<Self> {
        if rings.is_empty() {
            return Err(Error::InvalidInput("no rings".into()));
        }
        for (index, &(theta, m)) in rings.iter().enumerate() {
            if !(0.0..=PI).contains(&theta) {
                return Err(Error::InvalidInput(format!("colatitude {theta} outside [0, π]")));
            }
            if !(m >= 0.0) {
                return Err(Error::NegativeMass { index, value: m });
            }
        }
        let total: f64 = rings.iter().map(|r| r.1).sum();
        if !(total > 0.0) {
            return Err(Error::InvalidInput("rings carry no mass".into()));
        }
        let mut r: Vec<(f64, f64)> = rings
            .iter()
            .filter(|r| r.1 > 0.0)
            .map(|&(t, m)| (t, m / total))
            .collect();
        r.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self::Rings(r))
    }

    /// The heat flow at time `t` (`t = 0` returns the measure itself).
    pub fn evolve(&self, kernel: &SphereKernel, t: f64) -> Result<Self> {
        crate::error::check_time(t)?;
        if t == 0.0 {
            return Ok(self.clone());
        }
        let c = kernel.coefficients(t)?;
        let l_max = c.len() - 1;
        let coefficients = match self {
            Self::Rings(rings) => {
                let mut a = vec![0.0; l_max + 1];
                for &(theta, m) in rings {
                    let p = legendre_all(l_max, theta.cos());
                    for l in 0..=l_max {
                        a[l] += m * c[l] * p[l];
                    }
                }
                a
            }
            Self::Smooth { coefficients, radius } => {
                if (radius - kernel.radius).abs() > 1e-12 * radius {
                    return Err(Error::InvalidInput("kernel radius differs from the measure's".into()));
                }
                let r2 = radius * radius;
                coefficients
                    .iter()
                    .enumerate()
                    .take(l_max + 1)
                    .map(|(l, a)| a * (-((l * (l + 1)) as f64) * t / r2).exp())
                    .collect()
            }
        };
        Ok(Self::Smooth {
            radius: kernel.radius,
            coefficients,
        })
    }

    /// Mass in the polar cap `{colatitude < θ}`.
    pub fn cdf(&self, theta: f64) -> f64 {
        match self {
            Self::Rings(rings) => rings.iter().filter(|r| r.0 < theta).map(|r| r.1).sum(),
            Self::Smooth { radius, coefficients } => {
                let x = theta.cos();
                let p = legendre_all(coefficients.len(), x);
                let mut s = coefficients[0] * (1.0 - x);
                for (l, a) in coefficients.iter().enumerate().skip(1) {
                    s += a * (p[l - 1] - p[l + 1]) / (2 * l + 1) as f64;
                }
                2.0 * PI * radius * radius * s
            }
        }
    }

    fn marginal_density(&self, theta: f64) -> f64 {
        match self {
            Self::Rings(_) => 0.0,
            Self::Smooth { radius, coefficients } => {
                let p = legendre_all(coefficients.len(), theta.cos());
                let s: f64 = coefficients.iter().zip(&p).map(|(a, p)| a * p).sum();
                2.0 * PI * radius * radius * theta.sin() * s
            }
        }
    }

    /// Left-continuous quantile of the colatitude marginal.
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            Self::Rings(rings) => {
                let mut acc = 0.0;
                for &(theta, m) in rings {
                    acc += m;
                    if u <= acc {
                        return theta;
                    }
                }
                rings.last().map_or(0.0, |r| r.0)
            }
            Self::Smooth { .. } => {
                let (mut lo, mut hi) = (0.0, PI);
                let mut x = 0.5 * PI;
                for _ in 0..200 {
                    let f = self.cdf(x) - u;
                    if f > 0.0 {
                        hi = x;
                    } else {
                        lo = x;
                    }
                    if hi - lo < 1e-15 || f.abs() < 1e-16 {
                        break;
                    }
                    let d = self.marginal_density(x);
                    let newton = x - f / d;
                    x = if d > 0.0 && newton > lo && newton < hi {
                        newton
                    } else {
                        0.5 * (lo + hi)
                    };
                }
                x
            }
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        match self {
            Self::Rings(rings) => {
                let mut acc = 0.0;
                rings
                    .iter()
                    .map(|r| {
                        acc += r.1;
                        acc
                    })
                    .collect()
            }
            Self::Smooth { .. } => Vec::new(),
        }
    }
}

/// `W_2(a, b)` on the sphere of radius `radius`.
pub fn zonal_w2(a: &ZonalMeasure, b: &ZonalMeasure, radius: f64) -> f64 {
    let mut cuts = vec![0.0, 1.0];
    cuts.extend(a.breakpoints());
    cuts.extend(b.breakpoints());
    cuts.retain(|u| (0.0..=1.0).contains(u));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|x, y| (*x - *y).abs() < 1e-15);
    let both_atomic = matches!((a, b), (ZonalMeasure::Rings(_), ZonalMeasure::Rings(_)));
    let (nodes, weights) = gauss_legendre(16);
    let panels = 48;
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (u0, u1) = (w[0], w[1]);
        if u1 <= u0 {
            continue;
        }
        if both_atomic {
            let m = 0.5 * (u0 + u1);
            total += (u1 - u0) * (a.quantile(m) - b.quantile(m)).powi(2);
            continue;
        }
        // u = u0 + (u1 − u0)(1 − cos πs)/2 smooths the √u behaviour at the poles
        for k in 0..panels {
            let (s0, s1) = (k as f64 / panels as f64, (k + 1) as f64 / panels as f64);
            for (x, wt) in nodes.iter().zip(&weights) {
                let s = 0.5 * (s0 + s1) + 0.5 * (s1 - s0) * x;
                let ds = 0.5 * (s1 - s0) * wt;
                let u = u0 + (u1 - u0) * 0.5 * (1.0 - (PI * s).cos());
                let du = (u1 - u0) * 0.5 * PI * (PI * s).sin();
                total += ds * du * (a.quantile(u) - b.quantile(u)).powi(2);
            }
        }
    }
    radius * total.max(0.0).sqrt()
}
