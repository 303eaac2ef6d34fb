//! Acceptance suite: one line per criterion, non-zero exit on any failure.

use std::f64::consts::PI;
use std::time::Instant;

use heatflow_core::fixtures;
use heatflow_core::flow::{
    contraction_report, dirac_pairs, distance_axiom_checks, flow_distances, zonal_contraction_report,
};
use heatflow_core::heat::{entropy, heat_apply, heat_kernel_matrix, CircleKernel, SphereKernel};
use heatflow_core::tangent::{bochner_check, metric_gt, metric_speed_check, tangency_experiment, RotationCurve};
use heatflow_core::transport::{c_transform, w2_exact, w2_sinkhorn, SinkhornSchedule, ZonalMeasure};
use heatflow_core::{
    model_circle, model_torus, refinement_stability, spectral_decompose, DMatrix, FiniteMetricMeasureSpace,
    ModelGeometry,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn step(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 50)
}

fn circle_oracle() -> Outcome {
    let start = Instant::now();
    let l = 2.0 * PI;
    let g = ModelGeometry::circle(l, 512).unwrap();
    let k = CircleKernel::new(l);
    let mut worst: f64 = 0.0;
    for &t in &[0.05, 0.1, 0.25] {
        let inv = |s: f64| 1.0 / k.value(t, s);
        // the integrand peaks at the antipode; integrate each half separately
        let scale = inv(PI);
        let i_t = 2.0 * adaptive_simpson(&inv, 0.0, PI, 1e-13 * scale);
        for &(x, v) in &[(0usize, 1.0), (77, -0.6)] {
            let expect = v * v * (1.0 - l * l / i_t);
            let got = metric_gt(&g, t, x, &[v]).unwrap();
            worst = worst.max((got - expect).abs() / expect);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: worst <= 1e-3 && secs < 10.0,
        detail: format!("max relative error {worst:.2e} (tol 1e-3), {secs:.2} s"),
    }
}

fn tangency() -> Outcome {
    let start = Instant::now();
    let grid = [0.2, 0.1, 0.05, 0.025, 0.0125];
    let sphere = ModelGeometry::sphere(1.0, 4096, 80).unwrap();
    let s = tangency_experiment(&sphere, 0, &[1.0, 0.0], &grid).unwrap();
    let torus = ModelGeometry::torus(2.0 * PI, 2.0 * PI, 128, 128).unwrap();
    let tr = tangency_experiment(&torus, 0, &[0.6, 0.8], &grid).unwrap();
    let circle = ModelGeometry::circle(2.0 * PI, 512).unwrap();
    let c = tangency_experiment(&circle, 0, &[1.0], &grid).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = s.pass
        && s.one_sided_pass
        && s.decay_pass
        && tr.extrapolated.abs() <= 0.05
        && c.extrapolated.abs() <= 0.05
        && tr.one_sided_pass
        && c.one_sided_pass
        && secs < 120.0;
    Outcome {
        pass,
        detail: format!(
            "sphere slope {:.4} (target -2, dev {:.2e}), torus {:.2e}, circle {:.2e}, one-sided {}/{}/{}, decay {}, {secs:.1} s",
            s.extrapolated, s.deviation, tr.extrapolated, c.extrapolated, s.one_sided_pass, tr.one_sided_pass,
            c.one_sided_pass, s.decay_pass
        ),
    }
}

fn bochner() -> Outcome {
    let circle = ModelGeometry::circle(2.0, 512).unwrap();
    let sphere = ModelGeometry::sphere(1.0, 2048, 80).unwrap();
    let mut worst: f64 = 0.0;
    let mut bound_ok = true;
    for &t in &[0.05, 0.1, 0.2, 0.3] {
        for (g, v) in [(&circle, vec![1.0]), (&sphere, vec![0.6, -0.8])] {
            let b = bochner_check(g, t, 0, &v).unwrap();
            worst = worst.max(b.relative_error);
            bound_ok &= b.bound_slack >= -1e-8;
        }
    }
    Outcome {
        pass: worst <= 0.01 && bound_ok,
        detail: format!("max relative error {worst:.2e} (tol 1e-2), derivative bound holds: {bound_ok}"),
    }
}

fn random_measure(rng: &mut ChaCha8Rng, n: usize, support: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    for _ in 0..support {
        v[rng.random_range(0..n)] += rng.random_range(0.1..1.0);
    }
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

fn pairs_for(
    space: &FiniteMetricMeasureSpace,
    rng: &mut ChaCha8Rng,
    diracs: &[(usize, usize)],
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let n = space.len();
    let mut pairs = dirac_pairs(space, diracs);
    for _ in 0..4 {
        pairs.push((random_measure(rng, n, 3), random_measure(rng, n, 3)));
    }
    pairs
}

fn contraction(gaps: &mut Vec<f64>) -> Outcome {
    let times = [0.05, 0.1, 0.2, 0.5];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut excess = Vec::new();
    let mut pass = true;
    let (_, circle) = model_circle(2.0 * PI, 32).unwrap();
    let (_, torus) = model_torus(1.0, 1.0, 8, 8).unwrap();
    for (name, space) in [("circle", &circle), ("torus", &torus)] {
        let hs = spectral_decompose(space).unwrap();
        let pairs = pairs_for(space, &mut rng, &[(0, 1), (0, 5), (3, 17), (2, 30)]);
        let r = contraction_report(space, &hs, Some(0.0), &times, &pairs).unwrap();
        pass &= r.passed();
        gaps.push(r.max_duality_gap());
        excess.push(format!("{name} {:.2e}", r.max_excess()));
    }
    // zonal measures: single rings (pole, equator neighbours) and mixtures
    let kernel = SphereKernel::new(1.0, 60);
    let ring = |r: &[(f64, f64)]| ZonalMeasure::rings(r).unwrap();
    let mut zpairs = vec![
        (ring(&[(0.0, 1.0)]), ring(&[(0.05, 1.0)])),
        (ring(&[(0.5 * PI - 0.01, 1.0)]), ring(&[(0.5 * PI + 0.01, 1.0)])),
        (ring(&[(0.1, 1.0)]), ring(&[(PI - 0.1, 1.0)])),
        (ring(&[(1.2, 1.0)]), ring(&[(1.5, 1.0)])),
    ];
    for _ in 0..4 {
        let mut draw = || -> Vec<(f64, f64)> {
            (0..3)
                .map(|_| (rng.random_range(0.0..PI), rng.random_range(0.1..1.0)))
                .collect()
        };
        let (a, b) = (draw(), draw());
        zpairs.push((ring(&a), ring(&b)));
    }
    let r = zonal_contraction_report(&kernel, &times, &zpairs).unwrap();
    pass &= r.passed();
    excess.push(format!("sphere {:.2e}", r.max_excess()));
    Outcome {
        pass,
        detail: format!("max ratio/bound - 1: {} (tol 1e-6)", excess.join(", ")),
    }
}

fn flow_axioms(gaps: &mut Vec<f64>) -> Outcome {
    let mut pass = true;
    let mut failures = Vec::new();
    for (name, space) in fixtures::small() {
        let hs = spectral_decompose(&space).unwrap();
        let k = space.curvature_bound().unwrap();
        for &t in &[0.0, 0.05, 0.2, 1.0] {
            let f = flow_distances(&space, &hs, t).unwrap();
            gaps.push(f.max_duality_gap);
            if t == 0.0 && &f.dtilde != space.distances() {
                pass = false;
                failures.push(format!("{name}: d~_0 != d"));
            }
            for c in distance_axiom_checks(&f, &space) {
                if !c.pass {
                    pass = false;
                    failures.push(format!("{name}: {c}"));
                }
            }
            let scale = (-k * t).exp();
            let excess =
                f.dt.iter()
                    .zip(space.distances().iter())
                    .map(|(a, d)| a - scale * d)
                    .fold(f64::NEG_INFINITY, f64::max);
            if excess > 1e-8 {
                pass = false;
                failures.push(format!("{name}: d_t exceeds e^(-Kt) d by {excess:e} at t={t}"));
            }
        }
    }
    let space = fixtures::two_point(1.7);
    let hs = spectral_decompose(&space).unwrap();
    let mut worst: f64 = 0.0;
    for &t in &[0.01, 0.1, 0.5, 2.0] {
        let f = flow_distances(&space, &hs, t).unwrap();
        worst = worst.max((f.dtilde[(0, 1)] - 1.7 * (-t).exp()).abs());
    }
    if worst > 1e-9 {
        pass = false;
    }
    Outcome {
        pass,
        detail: if failures.is_empty() {
            format!("all fixtures clean, two-point error {worst:.1e}")
        } else {
            failures.join("; ")
        },
    }
}

fn metric_speed() -> Outcome {
    let l = 2.0;
    let g = ModelGeometry::circle(l, 256).unwrap();
    let curve = RotationCurve { start: 0.3, speed: 1.0 };
    let r = metric_speed_check(&g, 0.2, &curve, &[0.0, 0.37, 1.1], 1e-3 * l).unwrap();
    let m = r.max_mismatch();
    let halving = r
        .rows
        .iter()
        .map(|x| (x.quotient - x.quotient_half).abs())
        .fold(0.0, f64::max);
    Outcome {
        pass: m <= 0.02,
        detail: format!(
            "g_t = {:.6}, max mismatch {m:.2e} (tol 2e-2), step-halving change {halving:.1e}",
            r.rows[0].g_t
        ),
    }
}

fn duality(gaps: &[f64]) -> Outcome {
    let worst_gap = gaps.iter().copied().fold(0.0, f64::max);
    let (_, circle) = model_circle(2.0 * PI, 128).unwrap();
    // small enough that φ(z) − φ(x) < d(x, z)²/2 between grid neighbours
    let phi: Vec<f64> = (0..128).map(|i| 0.01 * (2.0 * PI * i as f64 / 128.0).cos()).collect();
    let cc = |f: &[f64]| c_transform(&c_transform(f, circle.distances()), circle.distances());
    let mut involution = phi
        .iter()
        .zip(&cc(&phi))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    // and on genuinely c-concave functions ψ^c
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let psi: Vec<f64> = (0..128).map(|_| rng.random_range(-1.0..1.0)).collect();
    let concave = c_transform(&psi, circle.distances());
    involution = involution.max(
        concave
            .iter()
            .zip(&cc(&concave))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max),
    );
    let (space, mu, nu) = fixtures::random_planar(7, 16);
    let d = space.distances();
    let exact = w2_exact(&mu, &nu, d).unwrap();
    let max_d2 = d.iter().map(|x| x * x).fold(0.0, f64::max);
    let s = w2_sinkhorn(&mu, &nu, d, 1e-3 * max_d2, &SinkhornSchedule::default()).unwrap();
    let rel = (s.value - exact.value).abs() / exact.value;
    let worst_gap = worst_gap.max(exact.duality_gap.abs());
    Outcome {
        pass: worst_gap <= 1e-8 && involution <= 1e-9 && rel <= 0.01,
        detail: format!(
            "max gap {worst_gap:.1e} over {} solves, involution {involution:.1e}, sinkhorn {rel:.2e}",
            gaps.len() + 1
        ),
    }
}

fn refinement() -> Outcome {
    let l = 2.0 * PI;
    let g = ModelGeometry::circle(l, 64).unwrap();
    let probes = [(0.0, l / 2.0), (l / 4.0, 3.0 * l / 4.0)];
    let r = refinement_stability(&g, &[64, 128, 256, 512], 0.1, &probes).unwrap();
    let decreasing = r
        .differences
        .windows(2)
        .all(|w| w[0].iter().zip(&w[1]).all(|(a, b)| b <= a));
    let orders: Vec<f64> = r.orders.iter().flatten().map(|o| o.unwrap_or(f64::NAN)).collect();
    let min_order = orders.iter().copied().fold(f64::INFINITY, f64::min);
    Outcome {
        pass: decreasing && min_order >= 1.0,
        detail: format!("differences decrease: {decreasing}, min empirical order {min_order:.2}"),
    }
}

fn heat_sanity() -> Outcome {
    let (mut ck, mut mass, mut sv) = (0.0f64, 0.0f64, f64::INFINITY);
    let mut entropy_ok = true;
    for (_, space) in fixtures::small() {
        let hs = spectral_decompose(&space).unwrap();
        let m = space.measure();
        let n = space.len();
        for x in 0..n.min(6) {
            let d = space.dirac(x);
            let a = heat_apply(&hs, 0.3, &d).unwrap();
            let b = heat_apply(&hs, 0.2, &heat_apply(&hs, 0.1, &d).unwrap()).unwrap();
            ck = ck.max(a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max));
            let mut last = f64::INFINITY;
            for &t in &[0.0, 0.01, 0.05, 0.1, 0.5, 1.0, 4.0] {
                let e = entropy(&heat_apply(&hs, t, &d).unwrap(), m);
                entropy_ok &= e <= last + 1e-12;
                last = e;
            }
        }
        let lam_max = hs.eigenvalues().iter().copied().fold(0.0, f64::max);
        for &t in &[0.05, 0.5] {
            let k = heat_kernel_matrix(&hs, t).unwrap();
            for x in 0..n {
                let total: f64 = (0..n).map(|y| k.values[(x, y)] * m[y]).sum();
                mass = mass.max((total - 1.0).abs());
            }
            let sym = DMatrix::from_fn(n, n, |i, j| m[i].sqrt() * k.values[(i, j)] * m[j].sqrt());
            let smallest = sym.singular_values().iter().copied().fold(f64::INFINITY, f64::min);
            sv = sv.min(smallest - (-lam_max * t).exp());
        }
    }
    Outcome {
        pass: ck <= 1e-9 && mass <= 1e-8 && entropy_ok && sv >= -1e-12,
        detail: format!(
            "Chapman-Kolmogorov {ck:.1e}, mass {mass:.1e}, entropy monotone {entropy_ok}, singular value slack {sv:.1e}"
        ),
    }
}

fn main() {
    let mut gaps = Vec::new();
    let mut results = vec![
        ("circle closed form", circle_oracle()),
        ("ricci tangency", tangency()),
        ("bochner identity", bochner()),
        ("contraction", contraction(&mut gaps)),
        ("flow axioms", flow_axioms(&mut gaps)),
        ("metric speed", metric_speed()),
    ];
    results.push(("duality", duality(&gaps)));
    results.push(("refinement", refinement()));
    results.push(("heat sanity", heat_sanity()));
    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!(
            "criterion {} {name}: {} ({})",
            i + 1,
            if o.pass { "pass" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
