use std::f64::consts::PI;

use heatflow_core::fixtures;
use heatflow_core::flow::flow_distances;
use heatflow_core::heat::{heat_apply, heat_kernel_matrix, spectral_decompose};
use heatflow_core::tangent::metric_gt;
use heatflow_core::transport::{c_transform, w2_exact};
use heatflow_core::{build_space, curve_length, Curve, ModelGeometry};
use proptest::prelude::*;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

fn simplex(weights: &[f64]) -> Vec<f64> {
    let s: f64 = weights.iter().sum();
    weights.iter().map(|w| w / s).collect()
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn built_spaces_satisfy_triangle_exactly(
        n in 3usize..12,
        lengths in prop::collection::vec(0.01f64..10.0, 66),
        extra in prop::collection::vec((0usize..12, 0usize..12), 0..20),
    ) {
        // a spanning path plus random chords
        let mut edges: Vec<(usize, usize, f64)> = (0..n - 1).map(|i| (i, i + 1, lengths[i])).collect();
        for (k, &(a, b)) in extra.iter().enumerate() {
            let (a, b) = (a % n, b % n);
            if a != b {
                edges.push((a, b, lengths[20 + k]));
            }
        }
        let s = build_space(n, &edges, vec![1.0; n], None).unwrap();
        prop_assert!(s.triangle_defect() <= 0.0);
        for i in 0..n {
            prop_assert_eq!(s.dist(i, i), 0.0);
            for j in 0..n {
                prop_assert_eq!(s.dist(i, j), s.dist(j, i));
            }
        }
    }

    #[test]
    fn curve_length_grows_under_refinement(
        pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..12),
        insert in (-5.0f64..5.0, -5.0f64..5.0),
        at in 0usize..11,
    ) {
        let metric = |a: &(f64, f64), b: &(f64, f64)| (a.0 - b.0).hypot(a.1 - b.1);
        let base = curve_length(&Curve::uniform(pts.clone()).unwrap(), metric).unwrap();
        let mut finer = pts.clone();
        finer.insert(1 + at % (pts.len() - 1), insert);
        let refined = curve_length(&Curve::uniform(finer).unwrap(), metric).unwrap();
        prop_assert!(refined >= base - 1e-12 * base.max(1.0));
    }

    #[test]
    fn model_quadrature_sums_to_volume(l in 0.5f64..20.0, n in 8usize..200, r in 0.2f64..5.0, nt in 64usize..400) {
        for g in [
            ModelGeometry::circle(l, n).unwrap(),
            ModelGeometry::torus(l, 2.0 * l, n, n + 3).unwrap(),
            ModelGeometry::sphere(r, nt, 40).unwrap(),
        ] {
            let total: f64 = g.quadrature_weights().iter().sum();
            prop_assert!((total - g.total_volume()).abs() <= 1e-10 * g.total_volume());
        }
    }

    #[test]
    fn ricci_is_a_quadratic_form(
        r in 0.3f64..4.0,
        v in (-3.0f64..3.0, -3.0f64..3.0),
        w in (-3.0f64..3.0, -3.0f64..3.0),
        lambda in -4.0f64..4.0,
    ) {
        for g in [ModelGeometry::sphere(r, 64, 40).unwrap(), ModelGeometry::torus(1.0, 1.0, 8, 8).unwrap()] {
            let ric = |a: f64, b: f64| g.ricci(0, &[a, b]);
            let (v, w) = ([v.0, v.1], [w.0, w.1]);
            let scaled = ric(lambda * v[0], lambda * v[1]);
            prop_assert!((scaled - lambda * lambda * ric(v[0], v[1])).abs() <= 1e-12 * (1.0 + scaled.abs()));
            let lhs = ric(v[0] + w[0], v[1] + w[1]) + ric(v[0] - w[0], v[1] - w[1]);
            let rhs = 2.0 * ric(v[0], v[1]) + 2.0 * ric(w[0], w[1]);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }
    }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn w2_is_a_metric_on_measures(
        seed in 0u64..1000,
        a in prop::collection::vec(0.0f64..1.0, 9),
        b in prop::collection::vec(0.0f64..1.0, 9),
        c in prop::collection::vec(0.0f64..1.0, 9),
    ) {
        prop_assume!(a.iter().sum::<f64>() > 0.1 && b.iter().sum::<f64>() > 0.1 && c.iter().sum::<f64>() > 0.1);
        let (space, _, _) = fixtures::random_planar(seed, 9);
        let d = space.distances();
        let (a, b, c) = (simplex(&a), simplex(&b), simplex(&c));
        let ab = w2_exact(&a, &b, d).unwrap();
        let ba = w2_exact(&b, &a, d).unwrap();
        let ac = w2_exact(&a, &c, d).unwrap();
        let cb = w2_exact(&c, &b, d).unwrap();
        prop_assert_eq!(ab.value, ba.value);
        prop_assert!(ab.value <= ac.value + cb.value + 1e-8);
        for s in [&ab, &ba, &ac, &cb] {
            prop_assert!(s.duality_gap.abs() <= 1e-8);
            prop_assert!(s.plan.marginal_error() <= 1e-9);
            prop_assert!(s.potentials.violation(d) <= 1e-10);
        }
        prop_assert_eq!(w2_exact(&a, &a, d).unwrap().value, 0.0);
    }

    #[test]
    fn c_transforms_are_c_concave(psi in prop::collection::vec(-2.0f64..2.0, 24)) {
        let (_, circle) = heatflow_core::model_circle(2.0 * PI, 24).unwrap();
        let d = circle.distances();
        let once = c_transform(&psi, d);
        let thrice = c_transform(&c_transform(&once, d), d);
        for (x, y) in once.iter().zip(&thrice) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        // Fenchel–Young: ψ(x) + ψ^c(y) ≤ d²/2
        for i in 0..24 {
            for j in 0..24 {
                prop_assert!(psi[i] + once[j] <= 0.5 * d[(i, j)].powi(2) + 1e-12);
            }
        }
    }

    #[test]
    fn chapman_kolmogorov_on_fixtures(s in 0.01f64..1.0, t in 0.01f64..1.0, which in 0usize..5) {
        let (_, space) = fixtures::small().swap_remove(which);
        let hs = spectral_decompose(&space).unwrap();
        let (ks, kt, kst) = (
            heat_kernel_matrix(&hs, s).unwrap(),
            heat_kernel_matrix(&hs, t).unwrap(),
            heat_kernel_matrix(&hs, s + t).unwrap(),
        );
        let m = space.measure();
        let n = space.len();
        for x in 0..n {
            for y in 0..n {
                let composed: f64 = (0..n).map(|z| ks.values[(x, z)] * kt.values[(z, y)] * m[z]).sum();
                prop_assert!((composed - kst.values[(x, y)]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn heat_preserves_mass_and_sign(t in 0.0f64..3.0, which in 0usize..5, w in prop::collection::vec(0.0f64..1.0, 64)) {
        let (_, space) = fixtures::small().swap_remove(which);
        let hs = spectral_decompose(&space).unwrap();
        let mu: Vec<f64> = w.iter().take(space.len()).copied().collect();
        prop_assume!(mu.iter().sum::<f64>() > 0.0);
        let out = heat_apply(&hs, t, &mu).unwrap();
        prop_assert!(out.iter().all(|x| *x >= 0.0));
        let (a, b): (f64, f64) = (mu.iter().sum(), out.iter().sum());
        prop_assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn flow_distances_decay_along_the_semigroup(t in 0.0f64..0.8, h in 0.0f64..0.5, which in 0usize..4) {
        let (_, space) = fixtures::small().swap_remove(which);
        let hs = spectral_decompose(&space).unwrap();
        let k = space.curvature_bound().unwrap();
        let now = flow_distances(&space, &hs, t).unwrap();
        let later = flow_distances(&space, &hs, t + h).unwrap();
        let f = (-k * h).exp();
        for (a, b) in later.dtilde.iter().zip(now.dtilde.iter()) {
            prop_assert!(*a <= f * b + 1e-8);
        }
        for (a, d) in now.dtilde.iter().zip(space.distances().iter()) {
            prop_assert!(*a <= (-k * t).exp() * d + 1e-8);
        }
    }
}

proptest! {
    #![proptest_config(config(12))]

    #[test]
    fn metric_is_bilinear_and_decays(
        v in (-2.0f64..2.0, -2.0f64..2.0),
        w in (-2.0f64..2.0, -2.0f64..2.0),
        t in 0.05f64..0.6,
    ) {
        let geometries = [
            ModelGeometry::torus(2.0, 3.0, 24, 32).unwrap(),
            ModelGeometry::sphere(1.0, 256, 48).unwrap(),
        ];
        for g in &geometries {
            let gt = |a: f64, b: f64| metric_gt(g, t, 0, &[a, b]).unwrap();
            let (gv, gw) = (gt(v.0, v.1), gt(w.0, w.1));
            let lhs = gt(v.0 + w.0, v.1 + w.1) + gt(v.0 - w.0, v.1 - w.1);
            let rhs = 2.0 * gv + 2.0 * gw;
            prop_assert!((lhs - rhs).abs() <= 1e-8 * rhs.max(1e-300));
            let norm2 = v.0 * v.0 + v.1 * v.1;
            let k = g.curvature_bound();
            prop_assert!(gv <= (-2.0 * k * t).exp() * norm2 * (1.0 + 1e-6));
        }
        let c = ModelGeometry::circle(2.0, 64).unwrap();
        let lhs = metric_gt(&c, t, 5, &[v.0 + w.0]).unwrap() + metric_gt(&c, t, 5, &[v.0 - w.0]).unwrap();
        let rhs = 2.0 * metric_gt(&c, t, 5, &[v.0]).unwrap() + 2.0 * metric_gt(&c, t, 5, &[w.0]).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-8 * rhs.max(1e-300));
    }
}

#[test]
fn point_masses_recover_the_metric() {
    for (name, space) in fixtures::small() {
        let n = space.len();
        let d = space.distances();
        for x in 0..n {
            for y in 0..n {
                let s = w2_exact(&space.dirac(x), &space.dirac(y), d).unwrap();
                assert_eq!(s.value, d[(x, y)], "{name}: ({x}, {y})");
            }
        }
    }
}
