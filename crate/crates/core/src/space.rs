//! Finite metric-measure spaces, the three model geometries and curve lengths.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Above this size the exact triangle-closure sweep is skipped (it is cubic).
const CLOSURE_LIMIT: usize = 1024;

/// Dense all-pairs computations (distance matrices, eigendecompositions)
/// are refused beyond this point count.
pub const MAX_DENSE_POINTS: usize = 4096;

/// An undirected edge. `length` feeds the path metric, `conductance` the
/// heat generator. The two are independent on purpose: the torus grid uses
/// diagonal edges for distances but not for diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub length: f64,
    pub conductance: f64,
}

/// A finite set of points with a shortest-path metric and a positive measure.
#[derive(Debug, Clone)]
pub struct FiniteMetricMeasureSpace {
    edges: Vec<Edge>,
    dist: DMatrix<f64>,
    measure: Vec<f64>,
    curvature_bound: Option<f64>,
}

impl FiniteMetricMeasureSpace {
    /// Builds a space from explicit edges (lengths and conductances).
    pub fn new(points: usize, edges: Vec<Edge>, measure: Vec<f64>, curvature_bound: Option<f64>) -> Result<Self> {
        validate(points, &edges, &measure)?;
        if points > MAX_DENSE_POINTS {
            return Err(Error::TooLarge {
                n: points,
                max: MAX_DENSE_POINTS,
            });
        }
        let mut dist = all_pairs_shortest_paths(points, &edges);
        close_triangles(&mut dist);
        Ok(Self {
            edges,
            dist,
            measure,
            curvature_bound,
        })
    }

    /// Builds from a precomputed distance matrix (used by the model grids,
    /// whose geodesic distances have closed forms).
    pub(crate) fn with_distances(
        edges: Vec<Edge>,
        mut dist: DMatrix<f64>,
        measure: Vec<f64>,
        curvature_bound: Option<f64>,
    ) -> Result<Self> {
        let n = measure.len();
        validate(n, &edges, &measure)?;
        close_triangles(&mut dist);
        Ok(Self {
            edges,
            dist,
            measure,
            curvature_bound,
        })
    }

    pub fn len(&self) -> usize {
        self.measure.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measure.is_empty()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn distances(&self) -> &DMatrix<f64> {
        &self.dist
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.dist[(i, j)]
    }

    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    pub fn total_mass(&self) -> f64 {
        self.measure.iter().sum()
    }

    pub fn curvature_bound(&self) -> Option<f64> {
        self.curvature_bound
    }

    /// The measure rescaled to a probability vector.
    pub fn normalized_measure(&self) -> Vec<f64> {
        let total = self.total_mass();
        self.measure.iter().map(|m| m / total).collect()
    }

    /// Unit point mass at `x`.
    pub fn dirac(&self, x: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        v[x] = 1.0;
        v
    }

    /// Largest violation of the triangle inequality over all triples.
    /// Zero or negative for every space this module builds.
    pub fn triangle_defect(&self) -> f64 {
        let n = self.len();
        let d = &self.dist;
        let mut worst = f64::NEG_INFINITY;
        for j in 0..n {
            for i in 0..n {
                let dij = d[(i, j)];
                for k in 0..n {
                    worst = worst.max(d[(i, k)] - (dij + d[(j, k)]));
                }
            }
        }
        worst
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SpaceFile = serde_json::from_str(text)?;
        file.build()
    }
}

/// The on-disk description of a finite space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpaceFile {
    pub points: usize,
    pub edges: Vec<(usize, usize, f64)>,
    pub measure: Vec<f64>,
    #[serde(default, rename = "K", skip_serializing_if = "Option::is_none")]
    pub curvature_bound: Option<f64>,
    /// Optional per-edge conductances overriding the default rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conductances: Option<Vec<f64>>,
}

impl SpaceFile {
    pub fn build(&self) -> Result<FiniteMetricMeasureSpace> {
        match &self.conductances {
            None => build_space(self.points, &self.edges, self.measure.clone(), self.curvature_bound),
            Some(c) => {
                if c.len() != self.edges.len() {
                    return Err(Error::InvalidInput(format!(
                        "{} conductances for {} edges",
                        c.len(),
                        self.edges.len()
                    )));
                }
                let edges = self
                    .edges
                    .iter()
                    .zip(c)
                    .map(|(&(i, j, length), &conductance)| Edge {
                        i,
                        j,
                        length,
                        conductance,
                    })
                    .collect();
                FiniteMetricMeasureSpace::new(self.points, edges, self.measure.clone(), self.curvature_bound)
            }
        }
    }
}

/// Builds a space from weighted edges with the default conductance
/// `min(m_i, m_j) / length²`.
pub fn build_space(
    points: usize,
    edges: &[(usize, usize, f64)],
    measure: Vec<f64>,
    curvature_bound: Option<f64>,
) -> Result<FiniteMetricMeasureSpace> {
    if measure.len() != points {
        return Err(Error::InvalidInput(format!(
            "measure has {} entries for {} points",
            measure.len(),
            points
        )));
    }
    let mut full = Vec::with_capacity(edges.len());
    for &(i, j, length) in edges {
        let conductance = if i < points && j < points {
            measure[i].min(measure[j]) / (length * length)
        } else {
            0.0
        };
        full.push(Edge {
            i,
            j,
            length,
            conductance,
        });
    }
    FiniteMetricMeasureSpace::new(points, full, measure, curvature_bound)
}

fn validate(points: usize, edges: &[Edge], measure: &[f64]) -> Result<()> {
    if points == 0 {
        return Err(Error::InvalidInput("space has no points".into()));
    }
    if measure.len() != points {
        return Err(Error::InvalidInput(format!(
            "measure has {} entries for {} points",
            measure.len(),
            points
        )));
    }
    for (index, &value) in measure.iter().enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::NonpositiveWeight { index, value });
        }
    }
    for e in edges {
        if e.i >= points || e.j >= points || e.i == e.j {
            return Err(Error::InvalidInput(format!(
                "edge ({}, {}) is not between two distinct points",
                e.i, e.j
            )));
        }
        if !(e.length > 0.0 && e.length.is_finite()) {
            return Err(Error::InvalidEdgeLength {
                i: e.i,
                j: e.j,
                length: e.length,
            });
        }
        if !(e.conductance >= 0.0 && e.conductance.is_finite()) {
            return Err(Error::InvalidConductance {
                i: e.i,
                j: e.j,
                conductance: e.conductance,
            });
        }
    }
    if !connected(points, edges.iter().map(|e| (e.i, e.j))) {
        return Err(Error::DisconnectedGraph("metric edges"));
    }
    let diffusive = edges.iter().filter(|e| e.conductance > 0.0).map(|e| (e.i, e.j));
    if !connected(points, diffusive) {
        return Err(Error::DisconnectedGraph("positive-conductance edges"));
    }
    Ok(())
}

fn connected(points: usize, edges: impl Iterator<Item = (usize, usize)>) -> bool {
    let mut parent: Vec<usize> = (0..points).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut components = points;
    for (i, j) in edges {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a] = b;
            components -= 1;
        }
    }
    components == 1
}

#[derive(PartialEq)]
struct Tentative(f64, usize);

impl Eq for Tentative {}

impl Ord for Tentative {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Tentative {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra from every source over edge lengths.
pub(crate) fn all_pairs_shortest_paths(points: usize, edges: &[Edge]) -> DMatrix<f64> {
    let weights: Vec<(usize, usize, f64)> = edges.iter().map(|e| (e.i, e.j, e.length)).collect();
    shortest_paths_weighted(points, &weights)
}

pub(crate) fn shortest_paths_weighted(points: usize, edges: &[(usize, usize, f64)]) -> DMatrix<f64> {
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); points];
    for &(i, j, w) in edges {
        adj[i].push((j, w));
        adj[j].push((i, w));
    }
    let mut dist = DMatrix::from_element(points, points, f64::INFINITY);
    let mut row = vec![f64::INFINITY; points];
    let mut heap = BinaryHeap::new();
    for s in 0..points {
        row.fill(f64::INFINITY);
        row[s] = 0.0;
        heap.push(Tentative(0.0, s));
        while let Some(Tentative(d, u)) = heap.pop() {
            if d > row[u] {
                continue;
            }
            for &(v, w) in &adj[u] {
                let nd = d + w;
                if nd < row[v] {
                    row[v] = nd;
                    heap.push(Tentative(nd, v));
                }
            }
        }
        for (t, &d) in row.iter().enumerate() {
            dist[(s, t)] = d;
        }
    }
    // Floating-point sums along different paths may disagree by an ulp.
    for i in 0..points {
        for j in (i + 1)..points {
            let m = dist[(i, j)].min(dist[(j, i)]);
            dist[(i, j)] = m;
            dist[(j, i)] = m;
        }
    }
    dist
}

/// Relaxes `d(i,j) <- min(d(i,j), d(i,k) + d(k,j))` until nothing moves, so
/// that the triangle inequality holds exactly in floating point, not merely
/// up to rounding of the path sums.
pub(crate) fn close_triangles(dist: &mut DMatrix<f64>) {
    let n = dist.nrows();
    if n > CLOSURE_LIMIT {
        return;
    }
    loop {
        let mut changed = false;
        for k in 0..n {
            for j in 0..n {
                let dkj = dist[(k, j)];
                for i in 0..n {
                    let via = dist[(i, k)] + dkj;
                    if via < dist[(i, j)] {
                        dist[(i, j)] = via;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
}

/// The three smooth model geometries together with their grids.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelGeometry {
    /// Circle of length `length`, `n` equispaced nodes at `i·h`.
    Circle { length: f64, n: usize },
    /// Flat torus `[0,l1) × [0,l2)` with an `n1 × n2` node grid.
    FlatTorus { l1: f64, l2: f64, n1: usize, n2: usize },
    /// Round sphere of radius `radius`; colatitude midpoint grid of `n_theta`
    /// nodes, Legendre series truncated at `l_max`.
    Sphere { radius: f64, n_theta: usize, l_max: usize },
}

impl ModelGeometry {
    pub fn circle(length: f64, n: usize) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::InvalidInput(format!("circle length {length}")));
        }
        if n < 8 {
            return Err(Error::GridTooSmall(format!("circle needs n >= 8, got {n}")));
        }
        Ok(Self::Circle { length, n })
    }

    pub fn torus(l1: f64, l2: f64, n1: usize, n2: usize) -> Result<Self> {
        for l in [l1, l2] {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidInput(format!("torus side {l}")));
            }
        }
        if n1 < 8 || n2 < 8 {
            return Err(Error::GridTooSmall(format!("torus needs n1, n2 >= 8, got {n1} x {n2}")));
        }
        Ok(Self::FlatTorus { l1, l2, n1, n2 })
    }

    pub fn sphere(radius: f64, n_theta: usize, l_max: usize) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidInput(format!("sphere radius {radius}")));
        }
        if n_theta < 64 {
            return Err(Error::GridTooSmall(format!(
                "sphere needs n_theta >= 64, got {n_theta}"
            )));
        }
        if l_max < 40 {
            return Err(Error::GridTooSmall(format!("sphere needs l_max >= 40, got {l_max}")));
        }
        Ok(Self::Sphere { radius, n_theta, l_max })
    }

    /// Intrinsic dimension (length of tangent vectors).
    pub fn dim(&self) -> usize {
        match self {
            Self::Circle { .. } => 1,
            _ => 2,
        }
    }

    /// Lower Ricci bound K.
    pub fn curvature_bound(&self) -> f64 {
        match self {
            Self::Sphere { radius, .. } => 1.0 / (radius * radius),
            _ => 0.0,
        }
    }

    /// Ric(v, v). The model geometries are homogeneous so the base point
    /// does not matter.
    pub fn ricci(&self, _point: usize, v: &[f64]) -> f64 {
        match self {
            Self::Sphere { radius, .. } => norm_sq(v) / (radius * radius),
            _ => 0.0,
        }
    }

    pub fn total_volume(&self) -> f64 {
        match *self {
            Self::Circle { length, .. } => length,
            Self::FlatTorus { l1, l2, .. } => l1 * l2,
            Self::Sphere { radius, .. } => 4.0 * PI * radius * radius,
        }
    }

    /// Node count of the grid.
    pub fn node_count(&self) -> usize {
        match *self {
            Self::Circle { n, .. } => n,
            Self::FlatTorus { n1, n2, .. } => n1 * n2,
            Self::Sphere { n_theta, .. } => n_theta,
        }
    }

    /// Smallest grid step (arc length).
    pub fn grid_step(&self) -> f64 {
        match *self {
            Self::Circle { length, n } => length / n as f64,
            Self::FlatTorus { l1, l2, n1, n2 } => (l1 / n1 as f64).min(l2 / n2 as f64),
            Self::Sphere { radius, n_theta, .. } => radius * PI / n_theta as f64,
        }
    }

    /// Node coordinates: arc-length positions (circle), row-major `(y1, y2)`
    /// pairs flattened (torus) or colatitudes (sphere).
    pub fn nodes(&self) -> Vec<f64> {
        match *self {
            Self::Circle { length, n } => (0..n).map(|i| i as f64 * length / n as f64).collect(),
            Self::FlatTorus { l1, l2, n1, n2 } => {
                let mut v = Vec::with_capacity(2 * n1 * n2);
                for i in 0..n1 {
                    for j in 0..n2 {
                        v.push(i as f64 * l1 / n1 as f64);
                        v.push(j as f64 * l2 / n2 as f64);
                    }
                }
                v
            }
            Self::Sphere { n_theta, .. } => colatitudes(n_theta),
        }
    }

    /// Quadrature weights against the volume measure. On the sphere these
    /// are Fejér weights in `cos θ` scaled by `2πr²`, which integrate the
    /// smooth zonal functions used here to spectral accuracy.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        match *self {
            Self::Circle { length, n } => vec![length / n as f64; n],
            Self::FlatTorus { l1, l2, n1, n2 } => {
                vec![l1 * l2 / (n1 * n2) as f64; n1 * n2]
            }
            Self::Sphere { radius, n_theta, .. } => {
                let s = 2.0 * PI * radius * radius;
                fejer_weights(n_theta).into_iter().map(|w| w * s).collect()
            }
        }
    }
}

/// Colatitude midpoints `(i + 1/2) π / n`.
pub fn colatitudes(n: usize) -> Vec<f64> {
    let dt = PI / n as f64;
    (0..n).map(|i| (i as f64 + 0.5) * dt).collect()
}

/// Exact areas (unit sphere, divided by 2π) of the colatitude zones around
/// the midpoint nodes: `cos θ_{i-1/2} − cos θ_{i+1/2}`.
pub fn zone_areas(n: usize) -> Vec<f64> {
    let dt = PI / n as f64;
    let half = (0.5 * dt).sin();
    colatitudes(n).into_iter().map(|t| 2.0 * t.sin() * half).collect()
}

/// Fejér's first rule on `x = cos θ`, nodes at the colatitude midpoints.
/// The weights sum to 2.
pub fn fejer_weights(n: usize) -> Vec<f64> {
    let theta = colatitudes(n);
    theta
        .iter()
        .map(|&t| {
            let mut s = 0.0;
            for j in 1..=n / 2 {
                let j = j as f64;
                s += (2.0 * j * t).cos() / (4.0 * j * j - 1.0);
            }
            2.0 / n as f64 * (1.0 - 2.0 * s)
        })
        .collect()
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Circle geometry plus its nearest-neighbour graph (arc metric, weights
/// `L/n`, conductances `m̄/h²`).
pub fn model_circle(length: f64, n: usize) -> Result<(ModelGeometry, FiniteMetricMeasureSpace)> {
    let geometry = ModelGeometry::circle(length, n)?;
    if n > MAX_DENSE_POINTS {
        return Err(Error::TooLarge {
            n,
            max: MAX_DENSE_POINTS,
        });
    }
    let h = length / n as f64;
    let edges = (0..n)
        .map(|i| Edge {
            i,
            j: (i + 1) % n,
            length: h,
            conductance: h / (h * h),
        })
        .collect();
    let dist = DMatrix::from_fn(n, n, |i, j| h * cyclic_gap(i, j, n) as f64);
    let space = FiniteMetricMeasureSpace::with_distances(edges, dist, vec![h; n], Some(0.0))?;
    Ok((geometry, space))
}

/// Flat torus plus its 8-neighbour graph. Distances are the octile path
/// metric; diffusion runs along the axis edges only (the diagonal edges have
/// zero conductance) so the generator is the 5-point Laplacian.
pub fn model_torus(l1: f64, l2: f64, n1: usize, n2: usize) -> Result<(ModelGeometry, FiniteMetricMeasureSpace)> {
    let geometry = ModelGeometry::torus(l1, l2, n1, n2)?;
    let n = n1 * n2;
    if n > MAX_DENSE_POINTS {
        return Err(Error::TooLarge {
            n,
            max: MAX_DENSE_POINTS,
        });
    }
    let (h1, h2) = (l1 / n1 as f64, l2 / n2 as f64);
    let diag = h1.hypot(h2);
    let m = h1 * h2;
    let id = |i: usize, j: usize| (i % n1) * n2 + (j % n2);
    let mut edges = Vec::with_capacity(4 * n);
    for i in 0..n1 {
        for j in 0..n2 {
            let a = id(i, j);
            edges.push(Edge {
                i: a,
                j: id(i + 1, j),
                length: h1,
                conductance: m / (h1 * h1),
            });
            edges.push(Edge {
                i: a,
                j: id(i, j + 1),
                length: h2,
                conductance: m / (h2 * h2),
            });
            edges.push(Edge {
                i: a,
                j: id(i + 1, j + 1),
                length: diag,
                conductance: 0.0,
            });
            edges.push(Edge {
                i: a,
                j: id(i + 1, j + n2 - 1),
                length: diag,
                conductance: 0.0,
            });
        }
    }
    let dist = DMatrix::from_fn(n, n, |a, b| {
        let (dx, dy) = (cyclic_gap(a / n2, b / n2, n1), cyclic_gap(a % n2, b % n2, n2));
        let k = dx.min(dy);
        k as f64 * diag + (dx - k) as f64 * h1 + (dy - k) as f64 * h2
    });
    let space = FiniteMetricMeasureSpace::with_distances(edges, dist, vec![m; n], Some(0.0))?;
    Ok((geometry, space))
}

pub fn model_sphere(radius: f64, n_theta: usize, l_max: usize) -> Result<ModelGeometry> {
    ModelGeometry::sphere(radius, n_theta, l_max)
}

fn cyclic_gap(i: usize, j: usize, n: usize) -> usize {
    let d = i.abs_diff(j);
    d.min(n - d)
}

/// A sampled curve: points with strictly increasing parameters in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve<P> {
    pub points: Vec<P>,
    pub params: Vec<f64>,
}

impl<P> Curve<P> {
    pub fn new(points: Vec<P>, params: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCurve);
        }
        if points.len() != params.len() {
            return Err(Error::InvalidInput(format!(
                "{} points but {} parameters",
                points.len(),
                params.len()
            )));
        }
        let ordered = params.windows(2).all(|w| w[0] < w[1]);
        let inside = params.iter().all(|s| (0.0..=1.0).contains(s));
        if !ordered || !inside {
            return Err(Error::InvalidInput(
                "curve parameters must increase strictly inside [0, 1]".into(),
            ));
        }
        Ok(Self { points, params })
    }

    /// Uniform parameters `s_i = i / N`.
    pub fn uniform(points: Vec<P>) -> Result<Self> {
        let n = points.len();
        let params = if n == 1 {
            vec![0.0]
        } else {
            (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
        };
        Self::new(points, params)
    }
}

/// Sum of `metric` over consecutive samples.
pub fn curve_length<P>(curve: &Curve<P>, mut metric: impl FnMut(&P, &P) -> f64) -> Result<f64> {
    if curve.points.is_empty() {
        return Err(Error::EmptyCurve);
    }
    Ok(curve.points.windows(2).map(|w| metric(&w[0], &w[1])).sum())
}
