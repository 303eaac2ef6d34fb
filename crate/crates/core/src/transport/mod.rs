//! Quadratic optimal transport: exact network-simplex solver with certified
//! dual potentials, c-transforms, entropic (Sinkhorn) approximation and an
//! exact solvers for piecewise-constant densities on a circle and for zonal
//! measures on the sphere.

mod circle;
mod simplex;
mod sinkhorn;
mod zonal;

pub use circle::{circle_w2_cells, CircleCells};
pub use sinkhorn::{w2_sinkhorn, SinkhornResult, SinkhornSchedule};
pub use zonal::{zonal_w2, ZonalMeasure};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use simplex::{NetworkSimplex, Outcome};

/// Tolerance on the difference of total masses.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// A coupling between two measures on the same finite space.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub coupling: DMatrix<f64>,
    pub source: Vec<f64>,
    pub target: Vec<f64>,
}

impl TransportPlan {
    /// Largest deviation of the row / column sums from the marginals.
    pub fn marginal_error(&self) -> f64 {
        let n = self.coupling.nrows();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            worst = worst.max((self.coupling.row(i).sum() - self.source[i]).abs());
            worst = worst.max((self.coupling.column(i).sum() - self.target[i]).abs());
        }
        worst
    }

    /// `Σ γ_xy d²(x, y)`.
    pub fn cost(&self, dist: &DMatrix<f64>) -> f64 {
        self.coupling.iter().zip(dist.iter()).map(|(g, d)| g * d * d).sum()
    }
}

/// Kantorovich potentials for the cost `d²/2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualPotentials {
    pub phi: Vec<f64>,
    pub phi_c: Vec<f64>,
}

impl DualPotentials {
    /// `max_{x,y} φ(x) + φ^c(y) − d²(x,y)/2`; non-positive when feasible.
    pub fn violation(&self, dist: &DMatrix<f64>) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for (y, &b) in self.phi_c.iter().enumerate() {
            for (x, &a) in self.phi.iter().enumerate() {
                let d = dist[(x, y)];
                worst = worst.max(a + b - 0.5 * d * d);
            }
        }
        worst
    }
}

/// Output of [`w2_exact`].
#[derive(Debug, Clone)]
pub struct W2Solution {
    /// `W_2(μ, ν)`.
    pub value: f64,
    pub plan: TransportPlan,
    pub potentials: DualPotentials,
    /// `W_2²/2 − ⟨φ, μ⟩ − ⟨φ^c, ν⟩` for the returned potentials.
    pub duality_gap: f64,
    pub pivots: usize,
}

pub(crate) fn validate_marginals(mu: &[f64], nu: &[f64], n: usize) -> Result<()> {
    if mu.len() != n || nu.len() != n {
        return Err(Error::InvalidInput(format!(
            "marginals of length {} and {} on a space of {} points",
            mu.len(),
            nu.len(),
            n
        )));
    }
    for v in [mu, nu] {
        if let Some((index, &value)) = v.iter().enumerate().find(|(_, x)| !(**x >= 0.0 && x.is_finite())) {
            return Err(Error::NegativeMass { index, value });
        }
    }
    let (a, b): (f64, f64) = (mu.iter().sum(), nu.iter().sum());
    if (a - b).abs() > MASS_TOLERANCE {
        return Err(Error::MassMismatch {
            source_mass: a,
            target_mass: b,
        });
    }
    Ok(())
}

/// Exact `W_2(μ, ν)` on a finite space with distance matrix `dist`.
///
/// Zero-mass points are removed before solving. Pivoting is block search in
/// a fixed arc order, so ties between optimal plans break the same way on
/// every run. The dual potentials are cleaned by two c-transform passes,
/// which makes `φ` c-concave and the pair exactly feasible. For a symmetric
/// `dist` the pair is put in a canonical order first, so swapping the
/// arguments returns bit-identical values.
pub fn w2_exact(mu: &[f64], nu: &[f64], dist: &DMatrix<f64>) -> Result<W2Solution> {
    validate_marginals(mu, nu, dist.nrows())?;
    let swapped = nu.iter().zip(mu).map(|(a, b)| a.total_cmp(b)).find(|o| o.is_ne()) == Some(std::cmp::Ordering::Less);
    if !swapped || dist != &dist.transpose() {
        return solve_exact(mu, nu, dist);
    }
    let s = solve_exact(nu, mu, dist)?;
    Ok(W2Solution {
        value: s.value,
        plan: TransportPlan {
            coupling: s.plan.coupling.transpose(),
            source: mu.to_vec(),
            target: nu.to_vec(),
        },
        potentials: DualPotentials {
            phi: s.potentials.phi_c,
            phi_c: s.potentials.phi,
        },
        duality_gap: s.duality_gap,
        pivots: s.pivots,
    })
}

fn solve_exact(mu: &[f64], nu: &[f64], dist: &DMatrix<f64>) -> Result<W2Solution> {
    let n = dist.nrows();
    let src: Vec<usize> = (0..n).filter(|&i| mu[i] > 0.0).collect();
    let tgt: Vec<usize> = (0..n).filter(|&j| nu[j] > 0.0).collect();
    if src.is_empty() || tgt.is_empty() {
        return Err(Error::InvalidInput("marginals carry no mass".into()));
    }
    let (ms, mt) = (src.len(), tgt.len());

    let mut supply: Vec<f64> = src.iter().map(|&i| mu[i]).collect();
    supply.extend(tgt.iter().map(|&j| -nu[j]));
    let arcs = src.iter().enumerate().flat_map(|(a, &i)| {
        tgt.iter().enumerate().map(move |(b, &j)| {
            let d = dist[(i, j)];
            (a, ms + b, d * d)
        })
    });
    let mut ns = NetworkSimplex::new(&supply, arcs);
    match ns.run(1000 * (ms + mt) * (ms + mt) + 100_000) {
        Outcome::Optimal => {}
        Outcome::Infeasible(r) => {
            return Err(Error::SolverFailure(format!(
                "artificial flow {r:e} left at termination"
            )));
        }
        Outcome::Unbounded => return Err(Error::SolverFailure("unbounded pivot".into())),
        Outcome::IterationLimit => return Err(Error::SolverFailure("pivot limit reached".into())),
    }

    let mut coupling = DMatrix::zeros(n, n);
    let mut cost = 0.0;
    for (a, &i) in src.iter().enumerate() {
        for (b, &j) in tgt.iter().enumerate() {
            let f = ns.flow(a * mt + b);
            if f > 0.0 {
                coupling[(i, j)] = f;
                let d = dist[(i, j)];
                cost += f * d * d;
            }
        }
    }

    // reduced cost c + π_s − π_t ≥ 0, so f = −π_s and g = π_t satisfy
    // f + g ≤ d²; halve for the d²/2 convention
    let mut phi = vec![f64::NEG_INFINITY; n];
    for (a, &i) in src.iter().enumerate() {
        phi[i] = -0.5 * ns.potential(a);
    }
    let phi_c = c_transform(&phi, dist);
    let phi = c_transform(&phi_c, dist);
    let potentials = DualPotentials { phi, phi_c };
    let duality_gap = dual_objective_gap(mu, nu, cost, &potentials);

    Ok(W2Solution {
        value: cost.max(0.0).sqrt(),
        plan: TransportPlan {
            coupling,
            source: mu.to_vec(),
            target: nu.to_vec(),
        },
        potentials,
        duality_gap,
        pivots: ns.pivots,
    })
}

/// `φ^c(y) = min_x d²(x,y)/2 − φ(x)`. Entries of `φ` equal to `−∞` are
/// ignored, which restricts the minimum to a subset.
pub fn c_transform(phi: &[f64], dist: &DMatrix<f64>) -> Vec<f64> {
    let n = dist.ncols();
    (0..n)
        .map(|y| {
            let mut best = f64::INFINITY;
            for (x, &p) in phi.iter().enumerate() {
                if p == f64::NEG_INFINITY {
                    continue;
                }
                let d = dist[(x, y)];
                let v = 0.5 * d * d - p;
                if v < best {
                    best = v;
                }
            }
            best
        })
        .collect()
}

fn dual_objective_gap(mu: &[f64], nu: &[f64], cost: f64, p: &DualPotentials) -> f64 {
    let dual: f64 = mu
        .iter()
        .zip(&p.phi)
        .filter(|(m, _)| **m > 0.0)
        .map(|(m, f)| m * f)
        .sum::<f64>()
        + nu.iter()
            .zip(&p.phi_c)
            .filter(|(m, _)| **m > 0.0)
            .map(|(m, g)| m * g)
            .sum::<f64>();
    0.5 * cost - dual
}

/// `value²/2 − (⟨φ,μ⟩ + ⟨φ^c,ν⟩)` after checking that the potentials are
/// feasible for `d²/2` (within `1e-10`).
pub fn dual_gap(mu: &[f64], nu: &[f64], value: f64, potentials: &DualPotentials, dist: &DMatrix<f64>) -> Result<f64> {
    let v = potentials.violation(dist);
    if v > 1e-10 {
        return Err(Error::InfeasiblePotentials(v));
    }
    Ok(dual_objective_gap(mu, nu, value * value, potentials))
}
