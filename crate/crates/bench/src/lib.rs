//! Inputs shared by the benchmarks.

use heatflow_core::{heat_apply, model_circle, spectral_decompose, FiniteMetricMeasureSpace, Result};

/// A circle of `n` nodes with two heat-evolved point masses at antipodes.
pub fn evolved_antipodes(n: usize, t: f64) -> Result<(FiniteMetricMeasureSpace, Vec<f64>, Vec<f64>)> {
    let (_, space) = model_circle(2.0 * std::f64::consts::PI, n)?;
    let hs = spectral_decompose(&space)?;
    let mu = heat_apply(&hs, t, &space.dirac(0))?;
    let nu = heat_apply(&hs, t, &space.dirac(n / 2))?;
    Ok((space, mu, nu))
}
