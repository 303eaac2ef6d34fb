//! Heat semigroups: the spectral semigroup of a finite space, analytic kernels
//! on the circle and the sphere, and the entropy / ultracontractivity
//! diagnostics.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_time, Error, Result};
use crate::space::{colatitudes, fejer_weights, Edge, FiniteMetricMeasureSpace, MAX_DENSE_POINTS};

/// Anything that moves measures forward in time.
pub trait HeatSemigroup: Sync {
    /// Number of points the measures live on.
    fn size(&self) -> usize;
    /// `H_t μ`.
    fn evolve(&self, t: f64, mu: &[f64]) -> Result<Vec<f64>>;
}

/// Spectral data of the generator `(Lf)_i = (1/m_i) Σ_j w_ij (f_i − f_j)`.
///
/// `eigenvectors` holds `u_k` in column `k`, orthonormal for the
/// `m`-weighted inner product.
#[derive(Debug, Clone)]
pub struct HeatStructure {
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
    measure: Vec<f64>,
}

impl HeatStructure {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    pub fn len(&self) -> usize {
        self.measure.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measure.is_empty()
    }

    /// Spectral gap λ_1 (zero for a one-point space).
    pub fn spectral_gap(&self) -> f64 {
        self.eigenvalues.get(1).copied().unwrap_or(0.0)
    }
}

impl HeatSemigroup for HeatStructure {
    fn size(&self) -> usize {
        self.len()
    }

    fn evolve(&self, t: f64, mu: &[f64]) -> Result<Vec<f64>> {
        heat_apply(self, t, mu)
    }
}

/// Full eigendecomposition of the heat generator of `space`.
pub fn spectral_decompose(space: &FiniteMetricMeasureSpace) -> Result<HeatStructure> {
    decompose(space.measure(), space.edges())
}

pub(crate) fn decompose(measure: &[f64], edges: &[Edge]) -> Result<HeatStructure> {
    let n = measure.len();
    if n > MAX_DENSE_POINTS {
        return Err(Error::TooLarge {
            n,
            max: MAX_DENSE_POINTS,
        });
    }
    let inv_sqrt: Vec<f64> = measure.iter().map(|m| 1.0 / m.sqrt()).collect();
    // M^{-1/2} Λ M^{-1/2}, Λ the conductance Laplacian
    let mut s: DMatrix<f64> = DMatrix::zeros(n, n);
    for e in edges {
        let w = e.conductance;
        if w == 0.0 {
            continue;
        }
        let off = w * inv_sqrt[e.i] * inv_sqrt[e.j];
        s[(e.i, e.j)] -= off;
        s[(e.j, e.i)] -= off;
        s[(e.i, e.i)] += w * inv_sqrt[e.i] * inv_sqrt[e.i];
        s[(e.j, e.j)] += w * inv_sqrt[e.j] * inv_sqrt[e.j];
    }
    let eig: SymmetricEigen<f64, nalgebra::Dyn> =
        SymmetricEigen::try_new(s, f64::EPSILON, 100_000 * n.max(1)).ok_or(Error::EigenFailure)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let total: f64 = measure.iter().sum();
    let mut eigenvalues = Vec::with_capacity(n);
    let mut u = DMatrix::zeros(n, n);
    for (k, &src) in order.iter().enumerate() {
        if k == 0 {
            // the kernel of a connected generator is exactly the constants
            eigenvalues.push(0.0);
            u.column_mut(0).fill(1.0 / total.sqrt());
            continue;
        }
        eigenvalues.push(eig.eigenvalues[src].max(0.0));
        let e = eig.eigenvectors.column(src);
        for i in 0..n {
            u[(i, k)] = e[i] * inv_sqrt[i];
        }
    }
    Ok(HeatStructure {
        eigenvalues,
        eigenvectors: u,
        measure: measure.to_vec(),
    })
}

/// `H_t μ`. Round-off can leave entries of order `1e-17` slightly negative
/// in the far tails; those are set to zero and the mass restored.
pub fn heat_apply(hs: &HeatStructure, t: f64, mu: &[f64]) -> Result<Vec<f64>> {
    check_time(t)?;
    let n = hs.len();
    if mu.len() != n {
        return Err(Error::InvalidInput(format!(
            "measure has {} entries for {} points",
            mu.len(),
            n
        )));
    }
    if let Some((index, &value)) = mu.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::NegativeMass { index, value });
    }
    if t == 0.0 {
        return Ok(mu.to_vec());
    }
    let mass: f64 = mu.iter().sum();
    let u = &hs.eigenvectors;
    let mut c = u.tr_mul(&DVector::from_column_slice(mu));
    for (k, ck) in c.iter_mut().enumerate() {
        *ck *= (-hs.eigenvalues[k] * t).exp();
    }
    let density = u * c;
    let mut nu: Vec<f64> = density.iter().zip(&hs.measure).map(|(r, m)| (r * m).max(0.0)).collect();
    let now: f64 = nu.iter().sum();
    if now > 0.0 {
        let scale = mass / now;
        nu.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(nu)
}

/// Kernel densities `ρ(t, x, y)` with respect to the reference measure.
#[derive(Debug, Clone)]
pub struct HeatKernel {
    pub t: f64,
    pub values: DMatrix<f64>,
}

pub fn heat_kernel_matrix(hs: &HeatStructure, t: f64) -> Result<HeatKernel> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidTime(t));
    }
    let mut scaled = hs.eigenvectors.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= (-hs.eigenvalues[k] * t).exp();
    }
    let values = &scaled * hs.eigenvectors.transpose();
    Ok(HeatKernel { t, values })
}

/// `max_{x,y} ρ(t,x,y)`, the sharp L¹ → L^∞ constant of `H_t`.
pub fn ultracontractivity_constant(hs: &HeatStructure, t: f64) -> Result<f64> {
    let k = heat_kernel_matrix(hs, t)?;
    Ok(k.values.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// `Σ ρ_i log ρ_i m_i` with `ρ = μ/m` and `0 log 0 = 0`. Returns `+∞` when
/// `μ` charges a point of zero reference weight.
pub fn entropy(mu: &[f64], m: &[f64]) -> f64 {
    let mut s = 0.0;
    for (&p, &w) in mu.iter().zip(m) {
        if p <= 0.0 {
            continue;
        }
        if w <= 0.0 {
            return f64::INFINITY;
        }
        let rho = p / w;
        s += p * rho.ln();
    }
    s
}

/// Periodic heat kernel on a circle of length `length`, as a function of
/// the arc offset `s`.
#[derive(Debug, Clone, Copy)]
pub struct CircleKernel {
    pub length: f64,
}

impl CircleKernel {
    pub fn new(length: f64) -> Self {
        Self { length }
    }

    /// Time above which the Fourier series is used.
    pub fn crossover(&self) -> f64 {
        self.length * self.length / (4.0 * PI)
    }

    pub fn value(&self, t: f64, s: f64) -> f64 {
        self.eval(t, s).0
    }

    /// `∂_s ρ`.
    pub fn ds(&self, t: f64, s: f64) -> f64 {
        self.eval(t, s).1
    }

    /// `∂_s² ρ`, which is also `∂_t ρ`.
    pub fn dss(&self, t: f64, s: f64) -> f64 {
        self.eval(t, s).2
    }

    /// Value and first two `s`-derivatives.
    pub fn eval(&self, t: f64, s: f64) -> (f64, f64, f64) {
        if t >= self.crossover() {
            self.fourier(t, s)
        } else {
            self.images(t, s)
        }
    }

    pub fn fourier(&self, t: f64, s: f64) -> (f64, f64, f64) {
        let l = self.length;
        let base = 2.0 * PI / l;
        let k_max = ((l / (2.0 * PI)) * (14.0 * 10f64.ln() / t).sqrt()).ceil() as usize + 1;
        let (mut v, mut d1, mut d2) = (1.0, 0.0, 0.0);
        for k in 1..=k_max {
            let w = base * k as f64;
            let e = 2.0 * (-w * w * t).exp();
            let (sn, cs) = (w * s).sin_cos();
            v += e * cs;
            d1 -= e * w * sn;
            d2 -= e * w * w * cs;
        }
        (v / l, d1 / l, d2 / l)
    }

    pub fn images(&self, t: f64, s: f64) -> (f64, f64, f64) {
        let l = self.length;
        let s = s - l * (s / l).round();
        let reach = (4.0 * t * 18.0 * 10f64.ln()).sqrt();
        let j_max = (reach / l).ceil() as i64 + 1;
        let norm = 1.0 / (4.0 * PI * t).sqrt();
        let (mut v, mut d1, mut d2) = (0.0, 0.0, 0.0);
        for j in -j_max..=j_max {
            let x = s + j as f64 * l;
            let g = norm * (-x * x / (4.0 * t)).exp();
            v += g;
            d1 -= x / (2.0 * t) * g;
            d2 += (x * x / (4.0 * t * t) - 1.0 / (2.0 * t)) * g;
        }
        (v, d1, d2)
    }
}

/// Value of the periodic heat kernel of a circle of length `length`.
pub fn circle_kernel(t: f64, length: f64, s: f64) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidTime(t));
    }
    Ok(CircleKernel::new(length).value(t, s))
}

/// Heat kernel of the round sphere as a function of the geodesic angle,
/// `Σ_l (2l+1)/(4πr²) e^{−l(l+1)t/r²} P_l(cos θ)`.
#[derive(Debug, Clone, Copy)]
pub struct SphereKernel {
    pub radius: f64,
    pub l_max: usize,
}

impl SphereKernel {
    pub fn new(radius: f64, l_max: usize) -> Self {
        Self { radius, l_max }
    }

    /// Smallest time for which the series is trusted: the last retained term
    /// `(2 l_max + 1) e^{−l_max(l_max+1)t/r²}` must be below `1e-12`.
    pub fn min_time(&self) -> f64 {
        let l = self.l_max as f64;
        ((2.0 * l + 1.0) * 1e12).ln() / (l * (l + 1.0)) * self.radius * self.radius
    }

    /// Series coefficients `c_l(t)` for `l = 0..=l_max`.
    pub fn coefficients(&self, t: f64) -> Result<Vec<f64>> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::InvalidTime(t));
        }
        let r2 = self.radius * self.radius;
        let l = self.l_max as f64;
        let tail = (2.0 * l + 1.0) * (-l * (l + 1.0) * t / r2).exp();
        if tail > 1e-12 {
            return Err(Error::SeriesNotConverged(format!(
                "last retained term {tail:e} at t = {t} with l_max = {}",
                self.l_max
            )));
        }
        Ok((0..=self.l_max)
            .map(|l| {
                let l = l as f64;
                (2.0 * l + 1.0) / (4.0 * PI * r2) * (-l * (l + 1.0) * t / r2).exp()
            })
            .collect())
    }

    pub fn value(&self, t: f64, theta: f64) -> Result<f64> {
        let c = self.coefficients(t)?;
        Ok(legendre_sum(&c, theta).0)
    }

    /// Value, `∂_θ` and `∂_t` at angle `theta`.
    pub fn eval(&self, t: f64, theta: f64) -> Result<(f64, f64, f64)> {
        let c = self.coefficients(t)?;
        let r2 = self.radius * self.radius;
        let ct: Vec<f64> = c
            .iter()
            .enumerate()
            .map(|(l, c)| -((l * (l + 1)) as f64) / r2 * c)
            .collect();
        let (v, d) = legendre_sum(&c, theta);
        let (dt, _) = legendre_sum(&ct, theta);
        Ok((v, d, dt))
    }
}

/// `Σ c_l P_l(cos θ)` and its θ-derivative.
pub(crate) fn legendre_sum(c: &[f64], theta: f64) -> (f64, f64) {
    let (sn, x) = theta.sin_cos();
    let (mut p0, mut p1) = (1.0, x);
    let (mut dp0, mut dp1) = (0.0, 1.0);
    let mut v = c[0];
    let mut dv = 0.0;
    if c.len() > 1 {
        v += c[1] * p1;
        dv += c[1] * dp1;
    }
    for l in 1..c.len().saturating_sub(1) {
        let lf = l as f64;
        let p2 = ((2.0 * lf + 1.0) * x * p1 - lf * p0) / (lf + 1.0);
        let dp2 = dp0 + (2.0 * lf + 1.0) * p1;
        v += c[l + 1] * p2;
        dv += c[l + 1] * dp2;
        p0 = p1;
        p1 = p2;
        dp0 = dp1;
        dp1 = dp2;
    }
    (v, -sn * dv)
}

/// Sphere heat kernel value at geodesic angle `theta`.
pub fn sphere_kernel(t: f64, theta: f64, r: f64, l_max: usize) -> Result<f64> {
    SphereKernel::new(r, l_max).value(t, theta)
}

/// Heat flow of zonal (rotation invariant about the polar axis) measures on
/// the round sphere, seen on the meridian quotient: node `i` stands for the
/// latitude ring at colatitude `θ_i`, carrying its total mass.
///
/// Masses are evolved through Legendre coefficients and read back with
/// Fejér weights, which are exact for the products involved as long as
/// `n_theta > 2 l_max`; the result is then an exact semigroup on the nodes.
#[derive(Debug, Clone)]
pub struct ZonalSphereHeat {
    kernel: SphereKernel,
    thetas: Vec<f64>,
    weights: Vec<f64>,
    legendre: DMatrix<f64>,
    space: FiniteMetricMeasureSpace,
}

impl ZonalSphereHeat {
    pub fn new(radius: f64, n_theta: usize, l_max: usize) -> Result<Self> {
        if n_theta <= 2 * l_max {
            return Err(Error::GridTooSmall(format!(
                "zonal heat needs n_theta > 2 l_max ({n_theta} vs {l_max})"
            )));
        }
        let thetas = colatitudes(n_theta);
        let area = 2.0 * PI * radius * radius;
        let weights: Vec<f64> = fejer_weights(n_theta).into_iter().map(|w| w * area).collect();
        let mut legendre = DMatrix::zeros(l_max + 1, n_theta);
        for (i, &t) in thetas.iter().enumerate() {
            let x = t.cos();
            let (mut p0, mut p1) = (1.0, x);
            legendre[(0, i)] = 1.0;
            if l_max >= 1 {
                legendre[(1, i)] = x;
            }
            for l in 1..l_max {
                let lf = l as f64;
                let p2 = ((2.0 * lf + 1.0) * x * p1 - lf * p0) / (lf + 1.0);
                legendre[(l + 1, i)] = p2;
                p0 = p1;
                p1 = p2;
            }
        }
        let dt = PI / n_theta as f64;
        let edges = (0..n_theta - 1)
            .map(|i| Edge {
                i,
                j: i + 1,
                length: radius * dt,
                conductance: 2.0 * PI * ((i + 1) as f64 * dt).sin() / dt,
            })
            .collect();
        let dist = DMatrix::from_fn(n_theta, n_theta, |i, j| radius * (thetas[i] - thetas[j]).abs());
        let space =
            FiniteMetricMeasureSpace::with_distances(edges, dist, weights.clone(), Some(1.0 / (radius * radius)))?;
        Ok(Self {
            kernel: SphereKernel::new(radius, l_max),
            thetas,
            weights,
            legendre,
            space,
        })
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    /// The meridian space: colatitude nodes, metric `r |θ_i − θ_j|`, ring
    /// areas as weights.
    pub fn space(&self) -> &FiniteMetricMeasureSpace {
        &self.space
    }
}

impl HeatSemigroup for ZonalSphereHeat {
    fn size(&self) -> usize {
        self.thetas.len()
    }

    fn evolve(&self, t: f64, mu: &[f64]) -> Result<Vec<f64>> {
        check_time(t)?;
        if mu.len() != self.size() {
            return Err(Error::InvalidInput(format!(
                "measure has {} entries for {} rings",
                mu.len(),
                self.size()
            )));
        }
        if t == 0.0 {
            return Ok(mu.to_vec());
        }
        let c = self.kernel.coefficients(t)?;
        let mass: f64 = mu.iter().sum();
        let moments = &self.legendre * DVector::from_column_slice(mu);
        let scaled = DVector::from_iterator(c.len(), moments.iter().zip(&c).map(|(m, c)| m * c));
        let density = self.legendre.tr_mul(&scaled);
        let mut nu: Vec<f64> = density
            .iter()
            .zip(&self.weights)
            .map(|(d, w)| (d * w).max(0.0))
            .collect();
        let now: f64 = nu.iter().sum();
        if now > 0.0 {
            nu.iter_mut().for_each(|v| *v *= mass / now);
        }
        Ok(nu)
    }
}

/// One sample of the Gaussian-envelope diagnostic.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct GaussianSample {
    pub t: f64,
    pub x: usize,
    pub y: usize,
    pub distance: f64,
    pub density: f64,
    /// `ρ` divided by the upper envelope with unit constant.
    pub upper_ratio: f64,
    /// `ρ` divided by the lower envelope `e^{−d²/4t}/√m(B)` with unit constant.
    pub lower_ratio: f64,
}

/// Ratios of the heat kernel to the two-sided Gaussian envelopes with unit
/// constants and doubling dimension `dim`. Reported only: the true constants
/// are not explicit.
pub fn gaussian_envelope_ratios(
    space: &FiniteMetricMeasureSpace,
    hs: &HeatStructure,
    times: &[f64],
    pairs: &[(usize, usize)],
    dim: f64,
) -> Result<Vec<GaussianSample>> {
    let mut out = Vec::new();
    for &t in times {
        let k = heat_kernel_matrix(hs, t)?;
        let r = t.sqrt();
        let ball = |x: usize| -> f64 {
            (0..space.len())
                .filter(|&z| space.dist(x, z) < r)
                .map(|z| space.measure()[z])
                .sum()
        };
        for &(x, y) in pairs {
            let d = space.dist(x, y);
            let rho = k.values[(x, y)];
            let g = (-d * d / (4.0 * t)).exp();
            let (bx, by) = (ball(x), ball(y));
            let upper = g / (bx * by).sqrt() * (1.0 + d * d / t).powf(dim / 2.0);
            let lower = g / bx.sqrt();
            out.push(GaussianSample {
                t,
                x,
                y,
                distance: d,
                density: rho,
                upper_ratio: rho / upper,
                lower_ratio: rho / lower,
            });
        }
    }
    Ok(out)
}
