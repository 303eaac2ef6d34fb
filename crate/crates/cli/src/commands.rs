use std::f64::consts::PI;
use std::str::FromStr;

use heatflow_core::flow::{dirac_pairs, distance_axiom_checks, zonal_contraction_report};
use heatflow_core::transport::{w2_sinkhorn, SinkhornSchedule, ZonalMeasure};
use heatflow_core::{
    c_transform, contraction_report, fixtures, flow_distances, heat_apply, model_circle, model_torus,
    refinement_stability, spectral_decompose, tangency_experiment, time_continuity_report, w2_exact, CheckRecord,
    ContractionReport, FiniteMetricMeasureSpace, FlowDistanceMatrix, HeatStructure, ModelGeometry, SphereKernel,
};

use crate::args::{
    ContinuityArgs, ContractionArgs, FlowArgs, GeometryArgs, GeometryKind, RefineArgs, SelftestArgs, SourceArgs,
    TangencyArgs,
};
use crate::output::{checks_csv, matrix_csv, num, table_csv, Outputs, Tolerances};
use crate::InputError;

/// Largest space for which full n × n distance matrices are assembled.
pub const FULL_MATRIX_CAP: usize = 256;

pub struct Report {
    pub checks: Vec<CheckRecord>,
    pub outputs: Outputs,
}

type Run = Result<Report, InputError>;

fn parse_list<T: FromStr>(what: &str, s: &str) -> Result<Vec<T>, InputError> {
    s.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| InputError(format!("{what}: cannot parse {x:?}")))
        })
        .collect()
}

fn parse_pairs<T: FromStr>(what: &str, s: &str) -> Result<Vec<(T, T)>, InputError> {
    s.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|p| {
            let (a, b) = p
                .split_once(':')
                .ok_or_else(|| InputError(format!("{what}: {p:?} is not a:b")))?;
            let parse = |x: &str| {
                x.trim()
                    .parse()
                    .map_err(|_| InputError(format!("{what}: cannot parse {x:?}")))
            };
            Ok((parse(a)?, parse(b)?))
        })
        .collect()
}

fn check_time(what: &str, t: f64) -> Result<(), InputError> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(InputError(format!("{what} must be finite and non-negative, got {t}")))
    }
}

fn parse_times(s: &str) -> Result<Vec<f64>, InputError> {
    let times: Vec<f64> = parse_list("--times", s)?;
    if times.is_empty() {
        return Err(InputError("--times is empty".into()));
    }
    for &t in &times {
        check_time("every time", t)?;
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(InputError("--times must be sorted".into()));
    }
    Ok(times)
}

fn finite_space(src: &SourceArgs, default_n: usize) -> Result<FiniteMetricMeasureSpace, InputError> {
    let g = &src.geometry;
    match (&src.space, g.geometry) {
        (Some(path), None) => Ok(
            FiniteMetricMeasureSpace::from_file(path).map_err(|e| InputError(format!("{}: {e}", path.display())))?
        ),
        (None, Some(GeometryKind::Circle)) => Ok(model_circle(g.length, g.n.unwrap_or(default_n))?.1),
        (None, Some(GeometryKind::Torus)) => {
            let n = g.n.unwrap_or(8);
            Ok(model_torus(g.length, g.width.unwrap_or(g.length), n, g.n2.unwrap_or(n))?.1)
        }
        (None, Some(GeometryKind::Sphere)) => Err(InputError(
            "this command needs a finite space; the sphere is not one".into(),
        )),
        _ => Err(InputError("give exactly one of --space or --geometry".into())),
    }
}

fn model_geometry(g: &GeometryArgs) -> Result<ModelGeometry, InputError> {
    Ok(match g.geometry {
        Some(GeometryKind::Circle) => ModelGeometry::circle(g.length, g.n.unwrap_or(512))?,
        Some(GeometryKind::Torus) => {
            let n = g.n.unwrap_or(128);
            ModelGeometry::torus(g.length, g.width.unwrap_or(g.length), n, g.n2.unwrap_or(n))?
        }
        Some(GeometryKind::Sphere) => ModelGeometry::sphere(g.r, g.ntheta, g.lmax)?,
        None => return Err(InputError("--geometry is required".into())),
    })
}

fn cap(space: &FiniteMetricMeasureSpace) -> Result<(), InputError> {
    if space.len() > FULL_MATRIX_CAP {
        return Err(InputError(format!(
            "{} points exceed the full-matrix cap of {FULL_MATRIX_CAP}; pass --pairs",
            space.len()
        )));
    }
    Ok(())
}

fn max_excess(a: &heatflow_core::DMatrix<f64>, b: &heatflow_core::DMatrix<f64>, factor: f64) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x - factor * y)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Axiom checks plus `d̃_t ≤ d_t ≤ e^{−Kt} d` when a bound is declared.
fn flow_checks(f: &FlowDistanceMatrix, space: &FiniteMetricMeasureSpace, tol: &Tolerances) -> Vec<CheckRecord> {
    let mut checks = distance_axiom_checks(f, space);
    if let Some(k) = space.curvature_bound() {
        let factor = (-k * f.t).exp();
        let t = Some(f.t);
        checks.push(CheckRecord::at_most(
            "dtilde_percont",
            t,
            max_excess(&f.dtilde, space.distances(), factor),
            1e-8,
        ));
        checks.push(CheckRecord::at_most(
            "dt_percont",
            t,
            max_excess(&f.dt, space.distances(), factor),
            1e-8,
        ));
    }
    if f.t == 0.0 {
        let exact = &f.dtilde == space.distances();
        checks.push(CheckRecord::at_most(
            "dtilde_zero_is_metric",
            Some(0.0),
            if exact { 0.0 } else { 1.0 },
            0.0,
        ));
    }
    tol.apply(&mut checks);
    for c in checks.iter_mut().filter(|c| c.name.ends_with("_percont")) {
        c.bound = tol.get("decay");
        c.pass = c.value <= c.bound;
    }
    checks
}

pub fn flow(a: &FlowArgs, tol: &Tolerances) -> Run {
    let times = parse_times(&a.times)?;
    let space = finite_space(&a.source, 32)?;
    let n = space.len();
    let pairs: Option<Vec<(usize, usize)>> = a.pairs.as_deref().map(|p| parse_pairs("--pairs", p)).transpose()?;
    if let Some(p) = &pairs {
        if let Some(&(i, j)) = p.iter().find(|(i, j)| *i >= n || *j >= n) {
            return Err(InputError(format!("pair {i}:{j} outside the {n} points")));
        }
    } else {
        cap(&space)?;
    }
    let hs = spectral_decompose(&space)?;
    let mut out = Outputs::default();
    let mut checks = Vec::new();
    for &t in &times {
        match &pairs {
            None => {
                let f = flow_distances(&space, &hs, t)?;
                checks.extend(flow_checks(&f, &space, tol));
                out.add(format!("dtilde_t{t}.csv"), matrix_csv(&f.dtilde));
                out.add(format!("dt_t{t}.csv"), matrix_csv(&f.dt));
            }
            Some(p) => {
                let (rows, gap, excess) = pair_distances(&space, &hs, t, p)?;
                checks.push(CheckRecord::at_most("duality_gap", Some(t), gap, tol.get("duality")));
                if let Some(e) = excess {
                    checks.push(CheckRecord::at_most("dtilde_percont", Some(t), e, tol.get("decay")));
                }
                out.add(
                    format!("pairs_t{t}.csv"),
                    table_csv(&["x", "y", "dtilde", "duality_gap"], rows),
                );
            }
        }
    }
    Ok(Report { checks, outputs: out })
}

type PairRows = (Vec<Vec<String>>, f64, Option<f64>);

fn pair_distances(
    space: &FiniteMetricMeasureSpace,
    hs: &HeatStructure,
    t: f64,
    pairs: &[(usize, usize)],
) -> Result<PairRows, InputError> {
    let mut rows = Vec::with_capacity(pairs.len());
    let (mut gap, mut excess) = (0.0f64, f64::NEG_INFINITY);
    let factor = space.curvature_bound().map(|k| (-k * t).exp());
    for &(x, y) in pairs {
        let (value, g) = if t == 0.0 || x == y {
            (space.dist(x, y), 0.0)
        } else {
            let s = w2_exact(
                &heat_apply(hs, t, &space.dirac(x))?,
                &heat_apply(hs, t, &space.dirac(y))?,
                space.distances(),
            )?;
            (s.value, s.duality_gap)
        };
        gap = gap.max(g);
        if let Some(f) = factor {
            excess = excess.max(value - f * space.dist(x, y));
        }
        rows.push(vec![x.to_string(), y.to_string(), num(value), num(g)]);
    }
    Ok((rows, gap, factor.map(|_| excess)))
}

fn bool_check(name: &str, ok: bool) -> CheckRecord {
    CheckRecord::at_least(name, None, if ok { 1.0 } else { 0.0 }, 1.0)
}

pub fn tangency(a: &TangencyArgs, tol: &Tolerances) -> Run {
    let geometry = model_geometry(&a.geometry)?;
    let v: Vec<f64> = match &a.v {
        Some(s) => parse_list("--v", s)?,
        None if geometry.dim() == 1 => vec![1.0],
        None => vec![1.0, 0.0],
    };
    if !(a.tmin > 0.0 && a.tmax.is_finite() && a.tmax > a.tmin) {
        return Err(InputError("need 0 < tmin < tmax".into()));
    }
    let steps = (a.tmax / a.tmin).log2();
    if (steps - steps.round()).abs() > 1e-9 || steps.round() < 2.0 {
        return Err(InputError("tmax / tmin must be 2^k with k >= 2".into()));
    }
    let grid: Vec<f64> = (0..=steps.round() as i32).map(|k| a.tmax / 2f64.powi(k)).collect();
    let report = tangency_experiment(&geometry, a.x, &v, &grid)?;
    let checks = vec![
        CheckRecord::at_most(
            "extrapolated_slope_deviation",
            None,
            report.deviation,
            tol.get("tangency"),
        ),
        bool_check("one_sided_slope", report.one_sided_pass),
        bool_check("decay_bound", report.decay_pass),
    ];
    let mut out = Outputs::default();
    out.add("tangency.csv", report.to_csv());
    Ok(Report { checks, outputs: out })
}

fn contraction_csv(r: &ContractionReport, tol: f64) -> (String, f64) {
    let mut worst = f64::NEG_INFINITY;
    let rows = r.rows.iter().map(|row| {
        worst = worst.max(row.ratio / row.bound - 1.0);
        vec![
            num(row.t),
            row.pair.to_string(),
            num(row.initial),
            num(row.evolved),
            num(row.ratio),
            num(row.bound),
            (row.ratio > row.bound * (1.0 + tol)).to_string(),
            num(row.duality_gap),
        ]
    });
    let header = [
        "t",
        "pair",
        "initial",
        "evolved",
        "ratio",
        "bound",
        "violation",
        "duality_gap",
    ];
    let csv = table_csv(&header, rows.collect::<Vec<_>>());
    (csv, worst)
}

pub fn contraction(a: &ContractionArgs, tol: &Tolerances) -> Run {
    let times = parse_times(&a.times)?;
    let report = if a.source.geometry.geometry == Some(GeometryKind::Sphere) && a.source.space.is_none() {
        if a.k.is_some() || a.pairs.is_some() {
            return Err(InputError(
                "on the sphere K = 1/r² and pairs are given with --rings".into(),
            ));
        }
        let g = &a.source.geometry;
        let rings: Vec<(f64, f64)> = match &a.rings {
            Some(s) => parse_pairs("--rings", s)?,
            None => vec![
                (0.0, 0.05),
                (0.5 * PI - 0.01, 0.5 * PI + 0.01),
                (0.1, PI - 0.1),
                (1.2, 1.5),
            ],
        };
        let pairs = rings
            .iter()
            .map(|&(p, q)| Ok((ZonalMeasure::rings(&[(p, 1.0)])?, ZonalMeasure::rings(&[(q, 1.0)])?)))
            .collect::<Result<Vec<_>, heatflow_core::Error>>()?;
        zonal_contraction_report(&SphereKernel::new(g.r, g.lmax), &times, &pairs)?
    } else {
        if a.rings.is_some() {
            return Err(InputError("--rings applies to the sphere only".into()));
        }
        let space = finite_space(&a.source, 32)?;
        let n = space.len();
        let pairs: Vec<(usize, usize)> = match &a.pairs {
            Some(s) => parse_pairs("--pairs", s)?,
            None => {
                let mut p = vec![(0, n / 2), (1 % n, n - 1)];
                p.retain(|(i, j)| i != j);
                p.dedup();
                p
            }
        };
        if let Some(&(i, j)) = pairs.iter().find(|(i, j)| *i >= n || *j >= n || i == j) {
            return Err(InputError(format!("pair {i}:{j} is not two distinct points of {n}")));
        }
        let hs = spectral_decompose(&space)?;
        contraction_report(&space, &hs, a.k, &times, &dirac_pairs(&space, &pairs))?
    };
    let (csv, worst) = contraction_csv(&report, tol.get("contraction"));
    let checks = vec![
        CheckRecord::at_most("contraction_excess", None, worst, tol.get("contraction")),
        CheckRecord::at_most("duality_gap", None, report.max_duality_gap(), tol.get("duality")),
    ];
    let mut out = Outputs::default();
    out.add("contraction.csv", csv);
    Ok(Report { checks, outputs: out })
}

pub fn continuity(a: &ContinuityArgs, tol: &Tolerances) -> Run {
    check_time("--t", a.t)?;
    let deltas: Vec<f64> = parse_list("--deltas", &a.deltas)?;
    if deltas.is_empty() || deltas.windows(2).any(|w| w[1] > w[0]) {
        return Err(InputError("--deltas must be a non-empty decreasing list".into()));
    }
    for &d in &deltas {
        check_time("every delta", d)?;
    }
    let space = finite_space(&a.source, 32)?;
    cap(&space)?;
    let hs = spectral_decompose(&space)?;
    let report = time_continuity_report(&space, &hs, a.t, &deltas, a.k)?;
    let mut checks = report.checks();
    tol.apply(&mut checks);
    let opt = |x: Option<f64>| x.map_or_else(String::new, num);
    let rows = report.rows.iter().map(|r| {
        vec![
            num(r.delta),
            num(r.sup_difference),
            opt(r.dt_excess),
            opt(r.dtilde_excess),
        ]
    });
    let mut out = Outputs::default();
    out.add(
        "continuity.csv",
        table_csv(
            &["delta", "sup_difference", "dt_excess", "dtilde_excess"],
            rows.collect::<Vec<_>>(),
        ),
    );
    Ok(Report { checks, outputs: out })
}

pub fn refine(a: &RefineArgs, tol: &Tolerances) -> Run {
    let sizes: Vec<usize> = parse_list("--sizes", &a.sizes)?;
    let first = *sizes.first().ok_or_else(|| InputError("--sizes is empty".into()))?;
    let probes: Vec<(f64, f64)> = parse_pairs("--probes", &a.probes)?;
    if probes.is_empty() {
        return Err(InputError("--probes is empty".into()));
    }
    if probes
        .iter()
        .any(|&(x, y)| !(0.0..1.0).contains(&x) || !(0.0..1.0).contains(&y))
    {
        return Err(InputError("probe fractions must lie in [0, 1)".into()));
    }
    let geometry = ModelGeometry::circle(a.length, first)?;
    let positions: Vec<(f64, f64)> = probes.iter().map(|&(x, y)| (x * a.length, y * a.length)).collect();
    let report = refinement_stability(&geometry, &sizes, a.t, &positions)?;

    let mut checks = Vec::new();
    for p in 0..probes.len() {
        let worst = report
            .differences
            .windows(2)
            .map(|w| w[1][p] - w[0][p])
            .fold(f64::NEG_INFINITY, f64::max);
        if worst.is_finite() {
            checks.push(CheckRecord::at_most(
                format!("differences_decrease(probe {p})"),
                Some(a.t),
                worst,
                0.0,
            ));
        }
        let order = report.orders.iter().filter_map(|o| o[p]).fold(f64::INFINITY, f64::min);
        if order.is_finite() {
            checks.push(CheckRecord::at_least(
                format!("empirical_order(probe {p})"),
                Some(a.t),
                order,
                1.0,
            ));
        }
    }
    let gap = report.levels.iter().map(|l| l.max_duality_gap).fold(0.0, f64::max);
    checks.push(CheckRecord::at_most("duality_gap", Some(a.t), gap, tol.get("duality")));

    let mut header = vec!["n".to_string()];
    header.extend((0..probes.len()).map(|p| format!("probe{p}")));
    header.push("max_duality_gap".into());
    let rows = report.levels.iter().map(|l| {
        let mut r = vec![l.n.to_string()];
        r.extend(l.values.iter().map(|v| num(*v)));
        r.push(num(l.max_duality_gap));
        r
    });
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut out = Outputs::default();
    out.add("refine.csv", table_csv(&header, rows.collect::<Vec<_>>()));
    Ok(Report { checks, outputs: out })
}

pub fn selftest(a: &SelftestArgs, tol: &Tolerances) -> Run {
    let mut checks = Vec::new();
    for (name, space) in fixtures::small() {
        let hs = spectral_decompose(&space)?;
        for &t in &[0.0, 0.05, 0.2, 1.0] {
            let f = flow_distances(&space, &hs, t)?;
            checks.extend(flow_checks(&f, &space, tol).into_iter().map(|mut c| {
                c.name = format!("{name}/{}", c.name);
                c
            }));
            let mass = (0..space.len())
                .map(|x| heat_apply(&hs, t, &space.dirac(x)).map(|m| (m.iter().sum::<f64>() - 1.0).abs()))
                .collect::<Result<Vec<f64>, _>>()?
                .into_iter()
                .fold(0.0, f64::max);
            checks.push(CheckRecord::at_most(format!("{name}/heat_mass"), Some(t), mass, 1e-8));
        }
    }

    let a_len = 1.0;
    let two = fixtures::two_point(a_len);
    let hs = spectral_decompose(&two)?;
    for &t in &[0.05, 0.5, 2.0] {
        let f = flow_distances(&two, &hs, t)?;
        let err = (f.dtilde[(0, 1)] - a_len * (-t).exp()).abs();
        checks.push(CheckRecord::at_most(
            "two_point/closed_form",
            Some(t),
            err,
            tol.get("closed_form"),
        ));
    }

    for space in [fixtures::circle32(), fixtures::torus8()] {
        let n = space.len();
        let hs = spectral_decompose(&space)?;
        let pairs = dirac_pairs(&space, &[(0, n / 2), (0, 1), (3, n - 2)]);
        let r = contraction_report(&space, &hs, None, &[0.05, 0.1, 0.2, 0.5], &pairs)?;
        checks.push(CheckRecord::at_most(
            format!("contraction_excess(n={n})"),
            None,
            r.max_excess(),
            tol.get("contraction"),
        ));
    }

    let (_, circle) = model_circle(2.0 * PI, 128)?;
    let d = circle.distances();
    let phi: Vec<f64> = (0..128).map(|i| 0.01 * (2.0 * PI * i as f64 / 128.0).cos()).collect();
    let cc = c_transform(&c_transform(&phi, d), d);
    let inv = phi.iter().zip(&cc).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    checks.push(CheckRecord::at_most(
        "c_transform_involution",
        None,
        inv,
        tol.get("involution"),
    ));

    let (space, mu, nu) = fixtures::random_planar(a.seed, 16);
    let d = space.distances();
    let exact = w2_exact(&mu, &nu, d)?;
    let max_d2 = d.iter().map(|x| x * x).fold(0.0, f64::max);
    let s = w2_sinkhorn(&mu, &nu, d, 1e-3 * max_d2, &SinkhornSchedule::default())?;
    checks.push(CheckRecord::at_most(
        "random16/duality_gap",
        None,
        exact.duality_gap,
        tol.get("duality"),
    ));
    checks.push(CheckRecord::at_most(
        "random16/sinkhorn_relative_error",
        None,
        (s.value - exact.value).abs() / exact.value,
        tol.get("sinkhorn"),
    ));

    let mut out = Outputs::default();
    out.add("selftest.csv", checks_csv(&checks));
    Ok(Report { checks, outputs: out })
}
