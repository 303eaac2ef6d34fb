use nalgebra::DMatrix;

use super::validate_marginals;
use crate::error::{Error, Result};

/// ε-scaling schedule for [`w2_sinkhorn`].
#[derive(Debug, Clone, Copy)]
pub struct SinkhornSchedule {
    /// Geometric factor between consecutive ε values.
    pub factor: f64,
    /// Starting ε; `None` means `max d²`.
    pub eps_start: Option<f64>,
    /// Marginal tolerance on the intermediate stages.
    pub stage_tolerance: f64,
    /// Marginal tolerance (ℓ¹) at exit.
    pub tolerance: f64,
    /// Iteration cap per stage.
    pub max_iterations: usize,
}

impl Default for SinkhornSchedule {
    fn default() -> Self {
        Self {
            factor: 0.5,
            eps_start: None,
            stage_tolerance: 1e-6,
            tolerance: 1e-12,
            max_iterations: 200_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornResult {
    /// `√⟨γ_ε, d²⟩` for the entropic plan.
    pub value: f64,
    /// `⟨γ_ε, d²⟩ − W_2²` lies in `[0, cost_bias_bound]`, with the bound
    /// `ε · min(H(μ), H(ν))` (Shannon entropies of the marginals).
    pub cost_bias_bound: f64,
    pub eps: f64,
    pub iterations: usize,
    pub marginal_violation: f64,
}

/// Log-domain Sinkhorn iterations with ε-scaling down to `eps_final`.
pub fn w2_sinkhorn(
    mu: &[f64],
    nu: &[f64],
    dist: &DMatrix<f64>,
    eps_final: f64,
    schedule: &SinkhornSchedule,
) -> Result<SinkhornResult> {
    let n = dist.nrows();
    validate_marginals(mu, nu, n)?;
    if !(eps_final > 0.0) {
        return Err(Error::InvalidInput(format!("eps_final = {eps_final}")));
    }
    if !(schedule.factor > 0.0 && schedule.factor < 1.0) {
        return Err(Error::InvalidInput(format!("schedule factor {}", schedule.factor)));
    }
    let src: Vec<usize> = (0..n).filter(|&i| mu[i] > 0.0).collect();
    let tgt: Vec<usize> = (0..n).filter(|&j| nu[j] > 0.0).collect();
    let a: Vec<f64> = src.iter().map(|&i| mu[i]).collect();
    let b: Vec<f64> = tgt.iter().map(|&j| nu[j]).collect();
    let cost = DMatrix::from_fn(src.len(), tgt.len(), |i, j| dist[(src[i], tgt[j])].powi(2));
    let max_cost = cost.iter().copied().fold(0.0, f64::max);
    let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();

    let mut f = vec![0.0; a.len()];
    let mut g = vec![0.0; b.len()];
    let mut eps = schedule.eps_start.unwrap_or(max_cost).max(eps_final);
    let mut iterations = 0;
    loop {
        let last = eps <= eps_final;
        let tol = if last {
            schedule.tolerance
        } else {
            schedule.stage_tolerance
        };
        let mut violation = f64::INFINITY;
        let mut stage = 0;
        while violation > tol {
            if stage == schedule.max_iterations {
                if last {
                    return Err(Error::SinkhornNotConverged { iterations, violation });
                }
                break;
            }
            update(&mut f, &g, &cost, &log_b, eps, false);
            update(&mut g, &f, &cost, &log_a, eps, true);
            violation = row_violation(&f, &g, &cost, &a, &log_a, &log_b, eps);
            stage += 1;
            iterations += 1;
        }
        if last {
            let mut transport = 0.0;
            for (i, fi) in f.iter().enumerate() {
                for (j, gj) in g.iter().enumerate() {
                    let c = cost[(i, j)];
                    transport += ((fi + gj - c) / eps + log_a[i] + log_b[j]).exp() * c;
                }
            }
            let h = |p: &[f64]| -p.iter().map(|x| x * x.ln()).sum::<f64>();
            return Ok(SinkhornResult {
                value: transport.max(0.0).sqrt(),
                cost_bias_bound: eps * h(&a).min(h(&b)),
                eps,
                iterations,
                marginal_violation: violation,
            });
        }
        eps = (eps * schedule.factor).max(eps_final);
    }
}

// One half-step: new[i] = −ε log Σ_j exp((other_j − C)/ε + log w_j).
fn update(out: &mut [f64], other: &[f64], cost: &DMatrix<f64>, log_w: &[f64], eps: f64, columns: bool) {
    for (i, o) in out.iter_mut().enumerate() {
        let term = |j: usize| {
            let c = if columns { cost[(j, i)] } else { cost[(i, j)] };
            (other[j] - c) / eps + log_w[j]
        };
        let m = (0..other.len()).map(term).fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = (0..other.len()).map(|j| (term(j) - m).exp()).sum();
        *o = -eps * (m + s.ln());
    }
}

fn row_violation(f: &[f64], g: &[f64], cost: &DMatrix<f64>, a: &[f64], log_a: &[f64], log_b: &[f64], eps: f64) -> f64 {
    let mut v = 0.0;
    for (i, fi) in f.iter().enumerate() {
        let row: f64 = g
            .iter()
            .enumerate()
            .map(|(j, gj)| ((fi + gj - cost[(i, j)]) / eps + log_a[i] + log_b[j]).exp())
            .sum();
        v += (row - a[i]).abs();
    }
    v
}
