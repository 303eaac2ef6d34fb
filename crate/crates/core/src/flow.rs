//! The distances `d̃_t(x,y) = W_2(H_t δ_x, H_t δ_y)` and their length metric
//! `d_t` on finite spaces, with contraction, time-continuity and grid
//! refinement reports.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_time, Error, Result};
use crate::heat::{heat_apply, spectral_decompose, HeatSemigroup, HeatStructure, SphereKernel};
use crate::report::CheckRecord;
use crate::space::{close_triangles, model_circle, shortest_paths_weighted, FiniteMetricMeasureSpace, ModelGeometry};
use crate::transport::{w2_exact, zonal_w2, ZonalMeasure};

/// `d̃_t` and `d_t` at one time.
#[derive(Debug, Clone)]
pub struct FlowDistanceMatrix {
    pub t: f64,
    pub dtilde: DMatrix<f64>,
    pub dt: DMatrix<f64>,
    /// Largest duality gap over the OT solves behind `dtilde`.
    pub max_duality_gap: f64,
}

impl FlowDistanceMatrix {
    /// `max d(x,y) / d_t(x,y)` over distinct pairs.
    pub fn distortion(&self, space: &FiniteMetricMeasureSpace) -> f64 {
        let n = space.len();
        let mut worst: f64 = 1.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    worst = worst.max(space.dist(i, j) / self.dt[(i, j)]);
                }
            }
        }
        worst
    }
}

/// `H_t δ_x` for every point.
fn evolved_diracs(space: &FiniteMetricMeasureSpace, hs: &HeatStructure, t: f64) -> Result<Vec<Vec<f64>>> {
    (0..space.len())
        .into_par_iter()
        .map(|x| heat_apply(hs, t, &space.dirac(x)))
        .collect()
}

/// `d̃_t` together with the largest duality gap of its OT solves.
pub fn dtilde_with_gap(space: &FiniteMetricMeasureSpace, hs: &HeatStructure, t: f64) -> Result<(DMatrix<f64>, f64)> {
    check_time(t)?;
    if t == 0.0 {
        return Ok((space.distances().clone(), 0.0));
    }
    let n = space.len();
    let heat = evolved_diracs(space, hs, t)?;
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
    let solved: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|&(i, j)| w2_exact(&heat[i], &heat[j], space.distances()).map(|s| (s.value, s.duality_gap)))
        .collect::<Result<_>>()?;
    let mut d = DMatrix::zeros(n, n);
    let mut gap: f64 = 0.0;
    for (&(i, j), &(v, g)) in pairs.iter().zip(&solved) {
        d[(i, j)] = v;
        d[(j, i)] = v;
        gap = gap.max(g);
    }
    Ok((d, gap))
}

/// `d̃_t`; `t = 0` returns the original metric unchanged.
pub fn dtilde_matrix(space: &FiniteMetricMeasureSpace, hs: &HeatStructure, t: f64) -> Result<DMatrix<f64>> {
    dtilde_with_gap(space, hs, t).map(|(d, _)| d)
}

/// `d_t`: shortest paths over the original edges weighted by `d̃_t`.
pub fn dt_arc_matrix(space: &FiniteMetricMeasureSpace, dtilde: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = space.len();
    if dtilde.nrows() != n || dtilde.ncols() != n {
        return Err(Error::InvalidInput(format!(
            "{}x{} matrix for a space of {} points",
            dtilde.nrows(),
            dtilde.ncols(),
            n
        )));
    }
    if dtilde == space.distances() {
        return Ok(dtilde.clone());
    }
    let edges: Vec<(usize, usize, f64)> = space.edges().iter().map(|e| (e.i, e.j, dtilde[(e.i, e.j)])).collect();
    let mut d = shortest_paths_weighted(n, &edges);
    close_triangles(&mut d);
    Ok(d)
}

/// `d̃_t` and `d_t` at time `t`.
pub fn flow_distances(space: &FiniteMetricMeasureSpace, hs: &HeatStructure, t: f64) -> Result<FlowDistanceMatrix> {
    let (dtilde, max_duality_gap) = dtilde_with_gap(space, hs, t)?;
    let dt = dt_arc_matrix(space, &dtilde)?;
    Ok(FlowDistanceMatrix {
        t,
        dtilde,
        dt,
        max_duality_gap,
    })
}

/// Checks of the pseudo-distance axioms and of `d̃_t ≤ d_t`.
pub fn distance_axiom_checks(f: &FlowDistanceMatrix, space: &FiniteMetricMeasureSpace) -> Vec<CheckRecord> {
    let n = space.len();
    let t = Some(f.t);
    let (mut asym, mut diag, mut tri, mut order, mut minimum) =
        (0.0f64, 0.0f64, f64::NEG_INFINITY, 0.0f64, f64::INFINITY);
    for i in 0..n {
        diag = diag.max(f.dtilde[(i, i)].abs()).max(f.dt[(i, i)].abs());
        for j in 0..n {
            asym = asym.max((f.dtilde[(i, j)] - f.dtilde[(j, i)]).abs());
            order = order.max(f.dtilde[(i, j)] - f.dt[(i, j)]);
            if i != j {
                minimum = minimum.min(f.dtilde[(i, j)]);
            }
            for k in 0..n {
                tri = tri.max(f.dtilde[(i, k)] - f.dtilde[(i, j)] - f.dtilde[(j, k)]);
            }
        }
    }
    vec![
        CheckRecord::at_most("dtilde_symmetry", t, asym, 0.0),
        CheckRecord::at_most("zero_diagonal", t, diag, 0.0),
        CheckRecord::at_most("dtilde_triangle", t, tri, 1e-8),
        CheckRecord::at_most("dtilde_below_dt", t, order, 1e-8),
        CheckRecord::at_least(
            "dtilde_positive",
            t,
            if n > 1 { minimum } else { 1.0 },
            f64::MIN_POSITIVE,
        ),
        CheckRecord::at_most("duality_gap", t, f.max_duality_gap, 1e-8),
    ]
}

/// One row of a contraction report.
#[derive(Debug, Clone, Serialize)]
pub struct ContractionRow {
    pub t: f64,
    pub pair: usize,
    pub initial: f64,
    pub evolved: f64,
    pub ratio: f64,
    pub bound: f64,
    pub violation: bool,
    pub duality_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContractionReport {
    pub k: f64,
    pub rows: Vec<ContractionRow>,
}

impl ContractionReport {
    /// `max (ratio / bound − 1)` over all rows.
    pub fn max_excess(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.ratio / r.bound - 1.0)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| !r.violation)
    }

    pub fn max_duality_gap(&self) -> f64 {
        self.rows.iter().map(|r| r.duality_gap).fold(0.0, f64::max)
    }
}

/// Relative slack allowed before a contraction ratio counts as a violation.
pub const CONTRACTION_TOLERANCE: f64 = 1e-6;

/// `W_2(H_t μ, H_t ν) / W_2(μ, ν)` against `e^{−Kt}` for every time and pair.
/// `k` overrides the curvature bound declared on the space.
pub fn contraction_report<H: HeatSemigroup>(
    space: &FiniteMetricMeasureSpace,
    heat: &H,
    k: Option<f64>,
    times: &[f64],
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<ContractionReport> {
    let k = k.or(space.curvature_bound()).ok_or(Error::MissingCurvatureBound)?;
    if heat.size() != space.len() {
        return Err(Error::InvalidInput("heat semigroup and space differ in size".into()));
    }
    let dist = space.distances();
    let initial: Vec<f64> = pairs
        .par_iter()
        .map(|(mu, nu)| w2_exact(mu, nu, dist).map(|s| s.value))
        .collect::<Result<_>>()?;
    if let Some(p) = initial.iter().position(|w| *w == 0.0) {
        return Err(Error::InvalidInput(format!("pair {p} has identical measures")));
    }
    let jobs: Vec<(f64, usize)> = times
        .iter()
        .flat_map(|&t| (0..pairs.len()).map(move |p| (t, p)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(t, p)| {
            let (mu, nu) = &pairs[p];
            let (evolved, gap) = if t == 0.0 {
                (initial[p], 0.0)
            } else {
                let s = w2_exact(&heat.evolve(t, mu)?, &heat.evolve(t, nu)?, dist)?;
                (s.value, s.duality_gap)
            };
            let ratio = evolved / initial[p];
            let bound = (-k * t).exp();
            Ok(ContractionRow {
                t,
                pair: p,
                initial: initial[p],
                evolved,
                ratio,
                bound,
                violation: ratio > bound * (1.0 + CONTRACTION_TOLERANCE),
                duality_gap: gap,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ContractionReport { k, rows })
}

/// Contraction of the heat flow on the round sphere for pairs of zonal
/// measures, using the exact meridian W_2 (no duality gap to report).
pub fn zonal_contraction_report(
    kernel: &SphereKernel,
    times: &[f64],
    pairs: &[(ZonalMeasure, ZonalMeasure)],
) -> Result<ContractionReport> {
    let r = kernel.radius;
    let k = 1.0 / (r * r);
    let initial: Vec<f64> = pairs.iter().map(|(a, b)| zonal_w2(a, b, r)).collect();
    if let Some(p) = initial.iter().position(|w| *w == 0.0) {
        return Err(Error::InvalidInput(format!("pair {p} has identical measures")));
    }
    let jobs: Vec<(f64, usize)> = times
        .iter()
        .flat_map(|&t| (0..pairs.len()).map(move |p| (t, p)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(t, p)| {
            let (a, b) = &pairs[p];
            let evolved = zonal_w2(&a.evolve(kernel, t)?, &b.evolve(kernel, t)?, r);
            let ratio = evolved / initial[p];
            let bound = (-k * t).exp();
            Ok(ContractionRow {
                t,
                pair: p,
                initial: initial[p],
                evolved,
                ratio,
                bound,
                violation: ratio > bound * (1.0 + CONTRACTION_TOLERANCE),
                duality_gap: 0.0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ContractionReport { k, rows })
}

/// Point-mass pairs `(δ_x, δ_y)`.
pub fn dirac_pairs(space: &FiniteMetricMeasureSpace, pairs: &[(usize, usize)]) -> Vec<(Vec<f64>, Vec<f64>)> {
    pairs.iter().map(|&(x, y)| (space.dirac(x), space.dirac(y))).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuityRow {
    pub delta: f64,
    /// `‖d̃_{t+δ} − d̃_t‖_∞`.
    pub sup_difference: f64,
    /// `max (d_{t+δ} − e^{−Kδ} d_t)`; `None` when no K is available.
    pub dt_excess: Option<f64>,
    /// `max (d̃_{t+δ} − e^{−Kδ} d̃_t)`.
    pub dtilde_excess: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuityReport {
    pub t: f64,
    pub k: Option<f64>,
    pub rows: Vec<ContinuityRow>,
}

impl ContinuityReport {
    /// Differences are non-increasing along the (decreasing) δ sequence.
    pub fn differences_decrease(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].sup_difference <= w[0].sup_difference)
    }

    pub fn checks(&self) -> Vec<CheckRecord> {
        let mut out = Vec::new();
        for r in &self.rows {
            let t = Some(self.t + r.delta);
            if let Some(e) = r.dt_excess {
                out.push(CheckRecord::at_most(format!("dt_decay(delta={})", r.delta), t, e, 1e-8));
            }
            if let Some(e) = r.dtilde_excess {
                out.push(CheckRecord::at_most(
                    format!("dtilde_decay(delta={})", r.delta),
                    t,
                    e,
                    1e-8,
                ));
            }
        }
        let worst = self
            .rows
            .windows(2)
            .map(|w| w[1].sup_difference - w[0].sup_difference)
            .fold(0.0, f64::max);
        out.push(CheckRecord::at_most("differences_decrease", Some(self.t), worst, 0.0));
        out
    }
}

/// Right-continuity of `t ↦ d̃_t` and the decay `d_{t+δ} ≤ e^{−Kδ} d_t` along
/// a decreasing sequence of offsets.
pub fn time_continuity_report(
    space: &FiniteMetricMeasureSpace,
    hs: &HeatStructure,
    t: f64,
    deltas: &[f64],
    k: Option<f64>,
) -> Result<ContinuityReport> {
    check_time(t)?;
    if deltas.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(Error::InvalidInput("deltas must be finite and non-negative".into()));
    }
    let k = k.or(space.curvature_bound());
    let base = flow_distances(space, hs, t)?;
    let mut rows = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let next = if delta == 0.0 {
            base.clone()
        } else {
            flow_distances(space, hs, t + delta)?
        };
        let sup = (&next.dtilde - &base.dtilde).amax();
        let excess = |a: &DMatrix<f64>, b: &DMatrix<f64>, k: f64| {
            let f = (-k * delta).exp();
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| x - f * y)
                .fold(f64::NEG_INFINITY, f64::max)
        };
        rows.push(ContinuityRow {
            delta,
            sup_difference: sup,
            dt_excess: k.map(|k| excess(&next.dt, &base.dt, k)),
            dtilde_excess: k.map(|k| excess(&next.dtilde, &base.dtilde, k)),
        });
    }
    Ok(ContinuityReport { t, k, rows })
}

#[derive(Debug, Clone, Serialize)]
pub struct RefinementLevel {
    pub n: usize,
    /// `d̃_{n,t}(x_n, y_n)` per probe pair.
    pub values: Vec<f64>,
    pub max_duality_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RefinementReport {
    pub t: f64,
    pub probes: Vec<(f64, f64)>,
    pub levels: Vec<RefinementLevel>,
    /// `|v_{k+1} − v_k|` per probe, between consecutive levels.
    pub differences: Vec<Vec<f64>>,
    /// `log(diff_k / diff_{k+1}) / log(n_{k+2} / n_{k+1})` when defined.
    pub orders: Vec<Vec<Option<f64>>>,
}

/// Self-convergence of `d̃_t` on nested circle grids. Probe positions are
/// arc-length coordinates that must be nodes of every grid.
pub fn refinement_stability(
    geometry: &ModelGeometry,
    grid_sizes: &[usize],
    t: f64,
    probes: &[(f64, f64)],
) -> Result<RefinementReport> {
    let ModelGeometry::Circle { length, .. } = *geometry else {
        return Err(Error::InvalidInput("refinement runs on the circle only".into()));
    };
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidTime(t));
    }
    if grid_sizes.is_empty() || grid_sizes.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("grid sizes must be non-decreasing".into()));
    }
    let node = |x: f64, n: usize| -> Result<usize> {
        let k = x / length * n as f64;
        let r = k.round();
        if (k - r).abs() > 1e-9 || r < 0.0 || r >= n as f64 + 0.5 {
            return Err(Error::ProbeNotRepresentable(x));
        }
        Ok(r as usize % n)
    };
    for &n in grid_sizes {
        for &(x, y) in probes {
            node(x, n)?;
            node(y, n)?;
        }
    }
    let mut levels = Vec::with_capacity(grid_sizes.len());
    for &n in grid_sizes {
        let (_, space) = model_circle(length, n)?;
        let hs = spectral_decompose(&space)?;
        let solved: Vec<(f64, f64)> = probes
            .par_iter()
            .map(|&(x, y)| {
                let (i, j) = (node(x, n)?, node(y, n)?);
                let a = heat_apply(&hs, t, &space.dirac(i))?;
                let b = heat_apply(&hs, t, &space.dirac(j))?;
                let s = w2_exact(&a, &b, space.distances())?;
                Ok((s.value, s.duality_gap))
            })
            .collect::<Result<_>>()?;
        levels.push(RefinementLevel {
            n,
            values: solved.iter().map(|s| s.0).collect(),
            max_duality_gap: solved.iter().map(|s| s.1).fold(0.0, f64::max),
        });
    }
    let differences: Vec<Vec<f64>> = levels
        .windows(2)
        .map(|w| {
            w[0].values
                .iter()
                .zip(&w[1].values)
                .map(|(a, b)| (b - a).abs())
                .collect()
        })
        .collect();
    let orders = (0..differences.len().saturating_sub(1))
        .map(|k| {
            let ratio = levels[k + 2].n as f64 / levels[k + 1].n as f64;
            differences[k]
                .iter()
                .zip(&differences[k + 1])
                .map(|(a, b)| {
                    if *a > 0.0 && *b > 0.0 && ratio > 1.0 {
                        Some((a / b).ln() / ratio.ln())
                    } else {
                        None
                    }
                })
                .collect()
        })
        .collect();
    Ok(RefinementReport {
        t,
        probes: probes.to_vec(),
        levels,
        differences,
        orders,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_relative_eq;

    #[test]
    fn time_zero_is_the_metric() {
        for (_, s) in fixtures::small() {
            let hs = spectral_decompose(&s).unwrap();
            let f = flow_distances(&s, &hs, 0.0).unwrap();
            assert_eq!(&f.dtilde, s.distances());
            assert_eq!(&f.dt, s.distances());
        }
    }

    #[test]
    fn two_point_closed_form() {
        let a = 1.7;
        let s = fixtures::two_point(a);
        let hs = spectral_decompose(&s).unwrap();
        for t in [0.05, 0.5, 2.0] {
            let f = flow_distances(&s, &hs, t).unwrap();
            assert_relative_eq!(f.dtilde[(0, 1)], a * (-t).exp(), max_relative = 1e-12);
            assert_eq!(f.dt[(0, 1)], f.dtilde[(0, 1)]);
            assert_eq!(f.dtilde[(0, 0)], 0.0);
        }
    }

    #[test]
    fn path_dt_sums_edges() {
        let s = fixtures::path3();
        let hs = spectral_decompose(&s).unwrap();
        let f = flow_distances(&s, &hs, 0.3).unwrap();
        assert_relative_eq!(f.dt[(0, 2)], f.dtilde[(0, 1)] + f.dtilde[(1, 2)], max_relative = 1e-15);
        assert!(f.dtilde[(0, 2)] <= f.dt[(0, 2)]);
    }

    #[test]
    fn contraction_examples() {
        let s = fixtures::two_point(1.0);
        let hs = spectral_decompose(&s).unwrap();
        let pairs = dirac_pairs(&s, &[(0, 1)]);
        let r = contraction_report(&s, &hs, Some(0.0), &[0.0, 0.2, 1.0], &pairs).unwrap();
        assert_eq!(r.rows[0].ratio, 1.0);
        for row in &r.rows[1..] {
            assert_relative_eq!(row.ratio, (-row.t).exp(), max_relative = 1e-12);
            assert!(row.ratio < row.bound);
        }
        let missing = crate::space::build_space(2, &[(0, 1, 1.0)], vec![1.0, 1.0], None).unwrap();
        let hs = spectral_decompose(&missing).unwrap();
        assert!(matches!(
            contraction_report(&missing, &hs, None, &[0.1], &dirac_pairs(&missing, &[(0, 1)])),
            Err(Error::MissingCurvatureBound)
        ));
    }

    #[test]
    fn continuity_on_two_points() {
        let a = 1.0;
        let s = fixtures::two_point(a);
        let hs = spectral_decompose(&s).unwrap();
        let t = 0.3;
        let deltas = [0.08, 0.04, 0.02, 0.01, 0.0];
        let r = time_continuity_report(&s, &hs, t, &deltas, None).unwrap();
        for row in &r.rows {
            let expect = a * (-t).exp() * (1.0 - (-row.delta).exp());
            assert!((row.sup_difference - expect).abs() < 1e-12);
        }
        assert_eq!(r.rows.last().unwrap().sup_difference, 0.0);
        assert!(r.differences_decrease());
        let q = r.rows[2].sup_difference / r.rows[3].sup_difference;
        assert!((q - 2.0).abs() < 0.02);
        assert!(r.checks().iter().all(|c| c.pass));
    }

    #[test]
    fn refinement_identical_grids() {
        let g = ModelGeometry::circle(2.0 * std::f64::consts::PI, 32).unwrap();
        let l = 2.0 * std::f64::consts::PI;
        let r = refinement_stability(&g, &[32, 32], 0.2, &[(0.0, l / 2.0)]).unwrap();
        assert_eq!(r.differences[0][0], 0.0);
        assert!(matches!(
            refinement_stability(&g, &[32, 48], 0.2, &[(0.0, l / 64.0)]),
            Err(Error::ProbeNotRepresentable(_))
        ));
    }
}
