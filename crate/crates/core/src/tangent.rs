//! Velocity potentials, the metric `g_t`, the Bochner derivative identity and
//! the Ricci tangency experiment on the model geometries.
//!
//! The potential `φ = φ_{t,x,v}` solves `div(ρ ∇φ) = η` with
//! `ρ = ρ(t, x, ·)` and `η = −∇_x ρ · v`, normalised to zero mean; then
//! `g_t(v, v) = ∫ ρ |∇φ|²`. All three geometries use finite volumes with the
//! density sampled at faces and the source integrated exactly (or by
//! Gauss–Legendre) over cells:
//!
//! * circle: a direct 1-D solve;
//! * flat torus: the 5-point scheme with face densities averaged along the
//!   face, solved by deflated Jacobi-preconditioned CG;
//! * sphere: with `x` at the north pole everything is an azimuthal `m = 1`
//!   mode, `φ = u(θ) cos ψ`, leaving a tridiagonal system in `θ`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::heat::{legendre_sum, CircleKernel, SphereKernel};
use crate::quadrature::Rule;
use crate::space::{colatitudes, fejer_weights, ModelGeometry};
use crate::transport::circle_w2_cells;

/// Sphere densities below this fraction of the peak are treated as outside
/// the domain: the Legendre sum cannot resolve them and a zero-flux wall is
/// placed there instead.
const SPHERE_CUTOFF: f64 = 1e-12;

/// Solution of a weighted Poisson problem on a model grid.
#[derive(Debug, Clone)]
pub struct VelocityPotential {
    /// φ at the nodes (circle, torus row-major) or the colatitude profile
    /// `u` of `φ = u(θ) cos(ψ − ψ_v)` (sphere).
    pub values: Vec<f64>,
    /// Density at the nodes (sphere: colatitude profile).
    pub density: Vec<f64>,
    /// `‖div(ρ∇φ) − η‖ / ‖η‖` in the cell-integrated discrete norm.
    pub residual: f64,
    /// `∫ ρ |∇φ|²` for the discrete gradient.
    pub energy: f64,
    layout: Layout,
}

#[derive(Debug, Clone)]
enum Layout {
    Circle {
        h: f64,
        face_rho: Vec<f64>,
        flux: Vec<f64>,
        source: Vec<f64>,
    },
    Torus {
        n1: usize,
        n2: usize,
        h1: f64,
        h2: f64,
        rho_x: Vec<f64>,
        rho_y: Vec<f64>,
        source: Vec<f64>,
    },
    Sphere {
        radius: f64,
        dtheta: f64,
        direction: f64,
        face: Vec<f64>,
        reaction: Vec<f64>,
        source: Vec<f64>,
        quadrature: Vec<f64>,
        n_total: usize,
    },
}

fn check_density(rho: &[f64]) -> Result<()> {
    if rho.iter().all(|r| *r > 0.0 && r.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonpositiveDensity)
    }
}

fn check_mean(source: &[f64]) -> Result<()> {
    let total: f64 = source.iter().sum();
    let scale: f64 = source.iter().map(|s| s.abs()).sum();
    if total.abs() > 1e-10 * scale.max(f64::MIN_POSITIVE) && scale > 0.0 {
        return Err(Error::NonzeroMeanSource(total));
    }
    Ok(())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn relative(res: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        res / scale
    } else {
        res
    }
}

/// 1-D periodic solve. `base_flux` is any particular flux with
/// `base_flux[i] − base_flux[i−1] = source[i]`; passing it instead of the
/// source avoids cancellation where the density is tiny.
fn solve_circle(
    h: f64,
    face_rho: Vec<f64>,
    base_flux: &[f64],
    source: Vec<f64>,
    density: Vec<f64>,
) -> VelocityPotential {
    let n = face_rho.len();
    let inv: f64 = face_rho.iter().map(|r| h / r).sum();
    let weighted: f64 = base_flux.iter().zip(&face_rho).map(|(p, r)| h * p / r).sum();
    let c = -weighted / inv;
    let flux: Vec<f64> = base_flux.iter().map(|p| p + c).collect();
    let mut phi = vec![0.0; n];
    for i in 0..n - 1 {
        phi[i + 1] = phi[i] + h * flux[i] / face_rho[i];
    }
    let mean = phi.iter().sum::<f64>() / n as f64;
    phi.iter_mut().for_each(|p| *p -= mean);
    // recompute fluxes from φ for an honest residual
    let mut res = 0.0;
    for i in 0..n {
        let f = |k: usize| face_rho[k] * (phi[(k + 1) % n] - phi[k]) / h;
        let r = f(i) - f((i + n - 1) % n) - source[i];
        res += r * r;
    }
    let energy = flux.iter().zip(&face_rho).map(|(f, r)| h * f * f / r).sum();
    VelocityPotential {
        values: phi,
        density,
        residual: relative(res.sqrt(), norm(&source)),
        energy,
        layout: Layout::Circle {
            h,
            face_rho,
            flux,
            source,
        },
    }
}

struct TorusOperator<'a> {
    n1: usize,
    n2: usize,
    cx: &'a [f64],
    cy: &'a [f64],
}

impl TorusOperator<'_> {
    // y = −A φ (positive semidefinite)
    fn apply(&self, phi: &[f64], out: &mut [f64]) {
        let (n1, n2) = (self.n1, self.n2);
        out.par_chunks_mut(n2).enumerate().for_each(|(i, row)| {
            let ip = (i + 1) % n1;
            let im = (i + n1 - 1) % n1;
            for (j, o) in row.iter_mut().enumerate() {
                let jp = (j + 1) % n2;
                let jm = (j + n2 - 1) % n2;
                let a = i * n2 + j;
                let p = phi[a];
                *o = self.cx[a] * (p - phi[ip * n2 + j])
                    + self.cx[im * n2 + j] * (p - phi[im * n2 + j])
                    + self.cy[a] * (p - phi[i * n2 + jp])
                    + self.cy[i * n2 + jm] * (p - phi[i * n2 + jm]);
            }
        });
    }

    fn diagonal(&self) -> Vec<f64> {
        let (n1, n2) = (self.n1, self.n2);
        (0..n1 * n2)
            .map(|a| {
                let (i, j) = (a / n2, a % n2);
                self.cx[a] + self.cx[((i + n1 - 1) % n1) * n2 + j] + self.cy[a] + self.cy[i * n2 + (j + n2 - 1) % n2]
            })
            .collect()
    }
}

fn deflate(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// 2-D periodic solve by preconditioned conjugate gradients on the
/// mean-zero subspace. `rho_x[a]` is the density on the face between node
/// `a = (i, j)` and `(i+1, j)`, `rho_y[a]` between `(i, j)` and `(i, j+1)`.
#[allow(clippy::too_many_arguments)]
fn solve_torus(
    n1: usize,
    n2: usize,
    h1: f64,
    h2: f64,
    rho_x: Vec<f64>,
    rho_y: Vec<f64>,
    source: Vec<f64>,
    density: Vec<f64>,
) -> Result<VelocityPotential> {
    let n = n1 * n2;
    let cx: Vec<f64> = rho_x.iter().map(|r| r * h2 / h1).collect();
    let cy: Vec<f64> = rho_y.iter().map(|r| r * h1 / h2).collect();
    let op = TorusOperator {
        n1,
        n2,
        cx: &cx,
        cy: &cy,
    };
    let diag = op.diagonal();
    // solve (−A) φ = −S
    let mut b: Vec<f64> = source.iter().map(|s| -s).collect();
    deflate(&mut b);
    let b_norm = norm(&b);
    let mut phi = vec![0.0; n];
    let mut q = vec![0.0; n];
    if b_norm > 0.0 {
        let mut r = b.clone();
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
        deflate(&mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let max_iter = 4 * n;
        let mut converged = false;
        for _ in 0..max_iter {
            op.apply(&p, &mut q);
            let pq = dot(&p, &q);
            if !(pq > 0.0) {
                return Err(Error::LinearSolverBreakdown(format!("non-positive curvature {pq:e}")));
            }
            let alpha = rz / pq;
            phi.iter_mut().zip(&p).for_each(|(x, p)| *x += alpha * p);
            r.iter_mut().zip(&q).for_each(|(r, q)| *r -= alpha * q);
            if norm(&r) <= 1e-12 * b_norm {
                converged = true;
                break;
            }
            z.iter_mut().zip(r.iter().zip(&diag)).for_each(|(z, (r, d))| *z = r / d);
            deflate(&mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            p.iter_mut().zip(&z).for_each(|(p, z)| *p = z + beta * *p);
        }
        deflate(&mut phi);
        op.apply(&phi, &mut q);
        let res = q.iter().zip(&b).map(|(q, b)| (q - b).powi(2)).sum::<f64>().sqrt();
        if !converged && res > 1e-8 * b_norm {
            return Err(Error::LinearSolverBreakdown(format!(
                "CG stalled at relative residual {:e}",
                res / b_norm
            )));
        }
    }
    Ok(torus_potential(n1, n2, h1, h2, rho_x, rho_y, source, density, phi))
}

/// Residual and energy of a torus potential.
#[allow(clippy::too_many_arguments)]
fn torus_potential(
    n1: usize,
    n2: usize,
    h1: f64,
    h2: f64,
    rho_x: Vec<f64>,
    rho_y: Vec<f64>,
    source: Vec<f64>,
    density: Vec<f64>,
    mut phi: Vec<f64>,
) -> VelocityPotential {
    let cx: Vec<f64> = rho_x.iter().map(|r| r * h2 / h1).collect();
    let cy: Vec<f64> = rho_y.iter().map(|r| r * h1 / h2).collect();
    let op = TorusOperator {
        n1,
        n2,
        cx: &cx,
        cy: &cy,
    };
    let mut q = vec![0.0; n1 * n2];
    deflate(&mut phi);
    op.apply(&phi, &mut q);
    let res = q.iter().zip(&source).map(|(q, s)| (q + s).powi(2)).sum::<f64>().sqrt();
    let mut energy = 0.0;
    for i in 0..n1 {
        for j in 0..n2 {
            let a = i * n2 + j;
            let gx = (phi[((i + 1) % n1) * n2 + j] - phi[a]) / h1;
            let gy = (phi[i * n2 + (j + 1) % n2] - phi[a]) / h2;
            energy += (rho_x[a] * gx * gx + rho_y[a] * gy * gy) * h1 * h2;
        }
    }
    VelocityPotential {
        values: phi,
        density,
        residual: relative(res, norm(&source)),
        energy,
        layout: Layout::Torus {
            n1,
            n2,
            h1,
            h2,
            rho_x,
            rho_y,
            source,
        },
    }
}

/// Solves `a_{i−1} u_{i−1} − (a_{i−1} + a_i + c_i) u_i + a_i u_{i+1} = s_i`
/// with `a_{−1} = a_{m−1} = 0` (Thomas algorithm; the system is strictly
/// diagonally dominant).
fn tridiagonal(face: &[f64], reaction: &[f64], source: &[f64]) -> Vec<f64> {
    let m = reaction.len();
    let lower = |i: usize| if i == 0 { 0.0 } else { face[i - 1] };
    let upper = |i: usize| if i + 1 < m { face[i] } else { 0.0 };
    let mut cp = vec![0.0; m];
    let mut dp = vec![0.0; m];
    for i in 0..m {
        let diag = -(lower(i) + upper(i) + reaction[i]);
        let denom = diag - if i > 0 { lower(i) * cp[i - 1] } else { 0.0 };
        cp[i] = upper(i) / denom;
        dp[i] = (source[i] - if i > 0 { lower(i) * dp[i - 1] } else { 0.0 }) / denom;
    }
    let mut u = vec![0.0; m];
    for i in (0..m).rev() {
        u[i] = dp[i] - if i + 1 < m { cp[i] * u[i + 1] } else { 0.0 };
    }
    u
}

#[allow(clippy::too_many_arguments)]
fn solve_sphere(
    radius: f64,
    dtheta: f64,
    direction: f64,
    face: Vec<f64>,
    reaction: Vec<f64>,
    source: Vec<f64>,
    density: Vec<f64>,
    quadrature: Vec<f64>,
    n_total: usize,
) -> VelocityPotential {
    let u = tridiagonal(&face, &reaction, &source);
    let m = u.len();
    let mut res = 0.0;
    for i in 0..m {
        let left = if i > 0 { face[i - 1] * (u[i - 1] - u[i]) } else { 0.0 };
        let right = if i + 1 < m { face[i] * (u[i + 1] - u[i]) } else { 0.0 };
        let r = left + right - reaction[i] * u[i] - source[i];
        res += r * r;
    }
    let mut energy = 0.0;
    for i in 0..m {
        energy += reaction[i] * u[i] * u[i];
        if i + 1 < m {
            energy += face[i] * (u[i + 1] - u[i]).powi(2);
        }
    }
    VelocityPotential {
        values: u,
        density,
        residual: relative(res.sqrt(), norm(&source)),
        energy: PI * energy,
        layout: Layout::Sphere {
            radius,
            dtheta,
            direction,
            face,
            reaction,
            source,
            quadrature,
            n_total,
        },
    }
}

/// Solves `div(ρ ∇φ) = η` from nodal samples. Face densities are averages
/// of the adjacent nodes and the source is integrated by the midpoint rule.
/// On the sphere `rho` and `eta` are colatitude profiles and `eta` is the
/// amplitude of a `cos ψ` mode.
pub fn solve_weighted_poisson(geometry: &ModelGeometry, rho: &[f64], eta: &[f64]) -> Result<VelocityPotential> {
    let nodes = geometry.node_count();
    if rho.len() != nodes || eta.len() != nodes {
        return Err(Error::InvalidInput(format!(
            "grid has {nodes} nodes, got {} densities and {} sources",
            rho.len(),
            eta.len()
        )));
    }
    check_density(rho)?;
    match *geometry {
        ModelGeometry::Circle { length, n } => {
            let h = length / n as f64;
            let source: Vec<f64> = eta.iter().map(|e| e * h).collect();
            check_mean(&source)?;
            let face: Vec<f64> = (0..n).map(|i| 0.5 * (rho[i] + rho[(i + 1) % n])).collect();
            let mut base = Vec::with_capacity(n);
            let mut acc = 0.0;
            for s in &source {
                acc += s;
                base.push(acc);
            }
            Ok(solve_circle(h, face, &base, source, rho.to_vec()))
        }
        ModelGeometry::FlatTorus { l1, l2, n1, n2 } => {
            let (h1, h2) = (l1 / n1 as f64, l2 / n2 as f64);
            let source: Vec<f64> = eta.iter().map(|e| e * h1 * h2).collect();
            check_mean(&source)?;
            let mut rx = vec![0.0; nodes];
            let mut ry = vec![0.0; nodes];
            for i in 0..n1 {
                for j in 0..n2 {
                    let a = i * n2 + j;
                    rx[a] = 0.5 * (rho[a] + rho[((i + 1) % n1) * n2 + j]);
                    ry[a] = 0.5 * (rho[a] + rho[i * n2 + (j + 1) % n2]);
                }
            }
            solve_torus(n1, n2, h1, h2, rx, ry, source, rho.to_vec())
        }
        ModelGeometry::Sphere { radius, n_theta, .. } => {
            let dt = PI / n_theta as f64;
            let th = colatitudes(n_theta);
            let face: Vec<f64> = (0..n_theta - 1)
                .map(|i| ((i + 1) as f64 * dt).sin() * 0.5 * (rho[i] + rho[i + 1]) / dt)
                .collect();
            let reaction: Vec<f64> = th.iter().zip(rho).map(|(t, r)| r * dt / t.sin()).collect();
            let source: Vec<f64> = th
                .iter()
                .zip(eta)
                .map(|(t, e)| radius * radius * e * t.sin() * dt)
                .collect();
            let quadrature = fejer_weights(n_theta);
            Ok(solve_sphere(
                radius,
                dt,
                0.0,
                face,
                reaction,
                source,
                rho.to_vec(),
                quadrature,
                n_theta,
            ))
        }
    }
}

fn ensure_resolved(geometry: &ModelGeometry, t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidTime(t));
    }
    let h = geometry.grid_step();
    let mut required = 4.0 * h * h;
    if let ModelGeometry::Sphere { radius, l_max, .. } = *geometry {
        let k = SphereKernel::new(radius, l_max);
        let l = l_max as f64;
        required = required.max(k.min_time()).max(25.0 * radius * radius / (l * (l + 1.0)));
    }
    if t < required {
        return Err(Error::UnresolvedTime { t, required });
    }
    Ok(())
}

fn check_vector(geometry: &ModelGeometry, v: &[f64]) -> Result<()> {
    if v.len() != geometry.dim() || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "tangent vector of length {} for a {}-dimensional geometry",
            v.len(),
            geometry.dim()
        )));
    }
    Ok(())
}

/// Cell averages `(1/h) ∫ k(y − x) dy` over the cells centred at the nodes.
fn cell_averages(kernel: &CircleKernel, t: f64, n: usize, h: f64, x: f64, rule: &Rule) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let c = i as f64 * h - x;
            rule.integrate(c - 0.5 * h, c + 0.5 * h, |s| kernel.value(t, s)) / h
        })
        .collect()
}

/// `φ_{t,x,v}` for the base point node `x` and tangent vector `v`. On the
/// sphere the base point is taken to be the north pole (the geometry is
/// homogeneous) and `v = (v_1, v_2)` in the frame `(e_{ψ=0}, e_{ψ=π/2})`.
pub fn velocity_potential(geometry: &ModelGeometry, t: f64, x: usize, v: &[f64]) -> Result<VelocityPotential> {
    ensure_resolved(geometry, t)?;
    check_vector(geometry, v)?;
    if x >= geometry.node_count() {
        return Err(Error::InvalidInput(format!("base point {x} is not a node")));
    }
    match *geometry {
        ModelGeometry::Circle { length, n } => {
            let h = length / n as f64;
            let x0 = x as f64 * h;
            let k = CircleKernel::new(length);
            let speed = v[0];
            let face: Vec<f64> = (0..n).map(|i| k.value(t, (i as f64 + 0.5) * h - x0)).collect();
            // η = −∂_x k(y − x) v = v k'(y − x): cell integrals are face differences
            let base: Vec<f64> = face.iter().map(|f| speed * f).collect();
            let source: Vec<f64> = (0..n).map(|i| base[i] - base[(i + n - 1) % n]).collect();
            let density: Vec<f64> = (0..n).map(|i| k.value(t, i as f64 * h - x0)).collect();
            check_density(&face)?;
            Ok(solve_circle(h, face, &base, source, density))
        }
        ModelGeometry::FlatTorus { l1, l2, n1, n2 } => {
            let (h1, h2) = (l1 / n1 as f64, l2 / n2 as f64);
            let (xi, xj) = (x / n2, x % n2);
            let (x1, x2) = (xi as f64 * h1, xj as f64 * h2);
            let (k1, k2) = (CircleKernel::new(l1), CircleKernel::new(l2));
            let rule = Rule::new(8);
            let f1: Vec<f64> = (0..n1).map(|i| k1.value(t, (i as f64 + 0.5) * h1 - x1)).collect();
            let f2: Vec<f64> = (0..n2).map(|j| k2.value(t, (j as f64 + 0.5) * h2 - x2)).collect();
            let a1 = cell_averages(&k1, t, n1, h1, x1, &rule);
            let a2 = cell_averages(&k2, t, n2, h2, x2, &rule);
            check_density(&f1)?;
            check_density(&f2)?;
            let nn = n1 * n2;
            let mut rx = vec![0.0; nn];
            let mut ry = vec![0.0; nn];
            let mut source = vec![0.0; nn];
            let mut density = vec![0.0; nn];
            for i in 0..n1 {
                let im = (i + n1 - 1) % n1;
                let node1 = k1.value(t, i as f64 * h1 - x1);
                for j in 0..n2 {
                    let jm = (j + n2 - 1) % n2;
                    let a = i * n2 + j;
                    rx[a] = f1[i] * a2[j];
                    ry[a] = a1[i] * f2[j];
                    source[a] = v[0] * (f1[i] - f1[im]) * h2 * a2[j] + v[1] * (f2[j] - f2[jm]) * h1 * a1[i];
                    density[a] = node1 * k2.value(t, j as f64 * h2 - x2);
                }
            }
            // the product density separates the problem exactly: φ = a(y_1) + b(y_2)
            // with a, b the circle potentials for the face densities f1, f2
            let side = |f: &[f64], h: f64, speed: f64| {
                let base: Vec<f64> = f.iter().map(|x| speed * x).collect();
                let m = f.len();
                let src = (0..m).map(|i| base[i] - base[(i + m - 1) % m]).collect();
                solve_circle(h, f.to_vec(), &base, src, Vec::new()).values
            };
            let (a, b) = (side(&f1, h1, v[0]), side(&f2, h2, v[1]));
            let phi = (0..nn).map(|k| a[k / n2] + b[k % n2]).collect();
            Ok(torus_potential(n1, n2, h1, h2, rx, ry, source, density, phi))
        }
        ModelGeometry::Sphere { radius, n_theta, l_max } => {
            let kernel = SphereKernel::new(radius, l_max);
            let c = kernel.coefficients(t)?;
            let dt = PI / n_theta as f64;
            let th = colatitudes(n_theta);
            let peak = legendre_sum(&c, 0.0).0;
            let all: Vec<f64> = th.iter().map(|&t| legendre_sum(&c, t).0).collect();
            let m = all.iter().position(|r| *r < SPHERE_CUTOFF * peak).unwrap_or(n_theta);
            if m < 2 {
                return Err(Error::GridTooSmall("sphere grid does not resolve the kernel".into()));
            }
            let density = all[..m].to_vec();
            let speed = v[0].hypot(v[1]);
            let direction = v[1].atan2(v[0]);
            let face: Vec<f64> = (0..m - 1)
                .map(|i| {
                    let f = (i + 1) as f64 * dt;
                    f.sin() * legendre_sum(&c, f).0 / dt
                })
                .collect();
            let reaction: Vec<f64> = (0..m).map(|i| density[i] * dt / th[i].sin()).collect();
            // (sinθ ρ u')' − ρ u / sinθ = r ρ_θ sinθ, integrated over cells
            let rule = Rule::new(4);
            let source: Vec<f64> = (0..m)
                .map(|i| {
                    let (a, b) = (i as f64 * dt, (i + 1) as f64 * dt);
                    speed * radius * rule.integrate(a, b, |s| legendre_sum(&c, s).1 * s.sin())
                })
                .collect();
            check_density(&density)?;
            let quadrature = fejer_weights(n_theta);
            Ok(solve_sphere(
                radius, dt, direction, face, reaction, source, density, quadrature, n_theta,
            ))
        }
    }
}

/// `g_t(v, v)`; `t = 0` returns `|v|²`.
pub fn metric_gt(geometry: &ModelGeometry, t: f64, x: usize, v: &[f64]) -> Result<f64> {
    check_vector(geometry, v)?;
    if t == 0.0 {
        return Ok(v.iter().map(|a| a * a).sum());
    }
    Ok(velocity_potential(geometry, t, x, v)?.energy)
}

/// `∫ |∇²φ|² ρ dvol` for a solved potential.
pub fn hessian_energy(p: &VelocityPotential) -> f64 {
    match &p.layout {
        Layout::Circle { h, face_rho, flux, .. } => {
            let n = flux.len();
            let grad: Vec<f64> = flux.iter().zip(face_rho).map(|(f, r)| f / r).collect();
            (0..n)
                .map(|i| {
                    let d2 = (grad[i] - grad[(i + n - 1) % n]) / h;
                    h * p.density[i] * d2 * d2
                })
                .sum()
        }
        Layout::Torus { n1, n2, h1, h2, .. } => {
            let (n1, n2, h1, h2) = (*n1, *n2, *h1, *h2);
            let phi = &p.values;
            let at = |i: usize, j: usize| phi[(i % n1) * n2 + (j % n2)];
            let mut total = 0.0;
            for i in 0..n1 {
                for j in 0..n2 {
                    let (ip, im, jp, jm) = (i + 1, i + n1 - 1, j + 1, j + n2 - 1);
                    let c = at(i, j);
                    let xx = (at(ip, j) - 2.0 * c + at(im, j)) / (h1 * h1);
                    let yy = (at(i, jp) - 2.0 * c + at(i, jm)) / (h2 * h2);
                    let xy = (at(ip, jp) - at(ip, jm) - at(im, jp) + at(im, jm)) / (4.0 * h1 * h2);
                    total += p.density[i * n2 + j] * (xx * xx + yy * yy + 2.0 * xy * xy) * h1 * h2;
                }
            }
            total
        }
        Layout::Sphere {
            radius,
            dtheta,
            quadrature,
            n_total,
            ..
        } => {
            let u = &p.values;
            let m = u.len();
            let dt = *dtheta;
            let th = colatitudes(*n_total);
            // odd reflection through the pole, zero flux at the far wall
            let get = |k: isize| -> f64 {
                if k < 0 {
                    -u[(-k - 1) as usize]
                } else if k as usize >= m {
                    if m == *n_total {
                        -u[2 * m - 1 - k as usize]
                    } else {
                        u[m - 1]
                    }
                } else {
                    u[k as usize]
                }
            };
            let mut total = 0.0;
            for i in 0..m {
                let k = i as isize;
                let (s, c) = th[i].sin_cos();
                let d1 = (get(k + 1) - get(k - 1)) / (2.0 * dt);
                let d2 = (get(k + 1) - 2.0 * u[i] + get(k - 1)) / (dt * dt);
                let cot = c / s;
                let a = cot * d1 - u[i] / (s * s);
                let b = (d1 - cot * u[i]) / s;
                total += p.density[i] * (d2 * d2 + a * a + 2.0 * b * b) * quadrature[i];
            }
            PI * total / (radius * radius)
        }
    }
}

/// `∫ Ric(∇φ, ∇φ) ρ dvol`.
pub fn ric_pairing_of(geometry: &ModelGeometry, p: &VelocityPotential) -> f64 {
    match geometry {
        ModelGeometry::Sphere { radius, .. } => p.energy / (radius * radius),
        _ => 0.0,
    }
}

pub fn ric_pairing(geometry: &ModelGeometry, t: f64, x: usize, v: &[f64]) -> Result<f64> {
    let p = velocity_potential(geometry, t, x, v)?;
    Ok(ric_pairing_of(geometry, &p))
}

/// `∫ (−|∇²φ|² − Ric(∇φ, ∇φ)) ρ dvol`, which equals `d/dt ½ g_t(v, v)`.
pub fn gt_derivative_bochner(geometry: &ModelGeometry, t: f64, x: usize, v: &[f64]) -> Result<f64> {
    if v.iter().all(|a| *a == 0.0) {
        check_vector(geometry, v)?;
        return Ok(0.0);
    }
    let p = velocity_potential(geometry, t, x, v)?;
    Ok(-hessian_energy(&p) - ric_pairing_of(geometry, &p))
}

/// Outcome of comparing the Bochner quadrature with a finite difference.
#[derive(Debug, Clone, Serialize)]
pub struct BochnerCheck {
    pub t: f64,
    pub g_t: f64,
    pub quadrature: f64,
    pub finite_difference: f64,
    pub relative_error: f64,
    /// `∫ |∇²φ|² ρ`, reported only.
    pub hessian_energy: f64,
    /// `−K g_t − quadrature`; non-negative when the derivative bound holds.
    pub bound_slack: f64,
}

/// `d/dt ½ g_t` by centred differences with step `t/8`, refined by two
/// Richardson levels, against the Bochner quadrature.
pub fn bochner_check(geometry: &ModelGeometry, t: f64, x: usize, v: &[f64]) -> Result<BochnerCheck> {
    let p = velocity_potential(geometry, t, x, v)?;
    let hess = hessian_energy(&p);
    let quadrature = -hess - ric_pairing_of(geometry, &p);
    let delta = t / 8.0;
    let steps = [delta, delta / 2.0, delta / 4.0];
    let diffs: Vec<f64> = steps
        .par_iter()
        .map(|&d| {
            let a = metric_gt(geometry, t + d, x, v)?;
            let b = metric_gt(geometry, t - d, x, v)?;
            Ok(0.25 * (a - b) / d)
        })
        .collect::<Result<_>>()?;
    let r1 = [(4.0 * diffs[1] - diffs[0]) / 3.0, (4.0 * diffs[2] - diffs[1]) / 3.0];
    let fd = (16.0 * r1[1] - r1[0]) / 15.0;
    Ok(BochnerCheck {
        t,
        g_t: p.energy,
        quadrature,
        finite_difference: fd,
        relative_error: (quadrature - fd).abs() / fd.abs().max(f64::MIN_POSITIVE),
        hessian_energy: hess,
        bound_slack: -geometry.curvature_bound() * p.energy - quadrature,
    })
}

/// One atom of the tangent plan: base point, weight `ρ · vol`, and `∇φ`.
#[derive(Debug, Clone, Serialize)]
pub struct PlanAtom {
    pub position: Vec<f64>,
    pub weight: f64,
    pub gradient: Vec<f64>,
}

/// Quadrature of `(Id, ∇φ)_♯ μ_{t,x}`.
#[derive(Debug, Clone, Serialize)]
pub struct TangentPlan {
    pub atoms: Vec<PlanAtom>,
}

impl TangentPlan {
    pub fn mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// `∫ |w|² dγ`.
    pub fn second_moment(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.weight * a.gradient.iter().map(|g| g * g).sum::<f64>())
            .sum()
    }
}

/// Tangent plan of a solved potential. On the circle atoms sit on the faces
/// where the discrete gradient lives, so the second moment is the discrete
/// energy exactly; on the torus and the sphere the staggered gradient is
/// averaged to the nodes and the match holds to discretisation accuracy.
pub fn tangent_plan(p: &VelocityPotential) -> TangentPlan {
    let atoms = match &p.layout {
        Layout::Circle { h, face_rho, flux, .. } => face_rho
            .iter()
            .zip(flux)
            .enumerate()
            .map(|(i, (r, f))| PlanAtom {
                position: vec![(i as f64 + 0.5) * h],
                weight: r * h,
                gradient: vec![f / r],
            })
            .collect(),
        Layout::Torus { n1, n2, h1, h2, .. } => {
            let (n1, n2, h1, h2) = (*n1, *n2, *h1, *h2);
            let phi = &p.values;
            let at = |i: usize, j: usize| phi[(i % n1) * n2 + (j % n2)];
            let mut atoms = Vec::with_capacity(n1 * n2);
            for i in 0..n1 {
                for j in 0..n2 {
                    let gx = (at(i + 1, j) - at(i + n1 - 1, j)) / (2.0 * h1);
                    let gy = (at(i, j + 1) - at(i, j + n2 - 1)) / (2.0 * h2);
                    atoms.push(PlanAtom {
                        position: vec![i as f64 * h1, j as f64 * h2],
                        weight: p.density[i * n2 + j] * h1 * h2,
                        gradient: vec![gx, gy],
                    });
                }
            }
            atoms
        }
        Layout::Sphere {
            radius,
            dtheta,
            direction,
            quadrature,
            n_total,
            ..
        } => {
            let u = &p.values;
            let m = u.len();
            let th = colatitudes(*n_total);
            let azimuths = 16;
            let mut atoms = Vec::with_capacity(m * azimuths);
            for i in 0..m {
                let up = if i + 1 < m { u[i + 1] } else { u[i] };
                let dn = if i > 0 { u[i - 1] } else { -u[0] };
                let d1 = (up - dn) / (2.0 * dtheta);
                let w = 2.0 * PI * radius * radius * quadrature[i] * p.density[i] / azimuths as f64;
                for k in 0..azimuths {
                    let psi = 2.0 * PI * k as f64 / azimuths as f64;
                    let a = psi - direction;
                    atoms.push(PlanAtom {
                        position: vec![th[i], psi],
                        weight: w,
                        gradient: vec![d1 * a.cos() / radius, -u[i] * a.sin() / (th[i].sin() * radius)],
                    });
                }
            }
            atoms
        }
    };
    TangentPlan { atoms }
}

/// Directional derivative of the discrete energy
/// `½ ∫ ρ |∇φ|² + ∫ η φ` at the solution along `direction`, relative to
/// the size of the two terms. Zero up to round-off at the solution.
pub fn energy_gradient_check(p: &VelocityPotential, direction: &[f64]) -> f64 {
    let psi = direction;
    let (quad, lin) = match &p.layout {
        Layout::Circle {
            h, face_rho, source, ..
        } => {
            let n = face_rho.len();
            let phi = &p.values;
            let mut quad = 0.0;
            for i in 0..n {
                let j = (i + 1) % n;
                quad += face_rho[i] * (phi[j] - phi[i]) * (psi[j] - psi[i]) / h;
            }
            (quad, dot(source, psi))
        }
        Layout::Torus {
            n1,
            n2,
            h1,
            h2,
            rho_x,
            rho_y,
            source,
        } => {
            let (n1, n2) = (*n1, *n2);
            let phi = &p.values;
            let mut quad = 0.0;
            for i in 0..n1 {
                for j in 0..n2 {
                    let a = i * n2 + j;
                    let bx = ((i + 1) % n1) * n2 + j;
                    let by = i * n2 + (j + 1) % n2;
                    quad += rho_x[a] * (phi[bx] - phi[a]) * (psi[bx] - psi[a]) * h2 / h1;
                    quad += rho_y[a] * (phi[by] - phi[a]) * (psi[by] - psi[a]) * h1 / h2;
                }
            }
            (quad, dot(source, psi))
        }
        Layout::Sphere {
            face, reaction, source, ..
        } => {
            let u = &p.values;
            let m = u.len();
            let mut quad = 0.0;
            for i in 0..m {
                quad += reaction[i] * u[i] * psi[i];
                if i + 1 < m {
                    quad += face[i] * (u[i + 1] - u[i]) * (psi[i + 1] - psi[i]);
                }
            }
            (quad, dot(&source[..m], &psi[..m]))
        }
    };
    (quad + lin).abs() / (quad.abs() + lin.abs()).max(f64::MIN_POSITIVE)
}

/// One row of a tangency report.
#[derive(Debug, Clone, Serialize)]
pub struct TangencyRow {
    pub t: f64,
    pub g_t: f64,
    pub slope: f64,
    pub target: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TangencyReport {
    pub rows: Vec<TangencyRow>,
    pub extrapolated: f64,
    pub target: f64,
    pub deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Slopes at `t <= SMALL_T` stay below `0.95 · target + 0.05 |v|²`.
    pub one_sided_pass: bool,
    /// `g_t(v, v) <= e^{−2Kt} |v|²` (relative slack 1e-6) on every row.
    pub decay_pass: bool,
}

/// Times at or below this are "small" for the one-sided slope check.
pub const SMALL_T: f64 = 0.05;

impl TangencyReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,g_t,slope,target,deviation\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},{}\n", r.t, r.g_t, r.slope, r.target, r.deviation));
        }
        s.push_str(&format!(
            "# extrapolated={},target={},deviation={},{}\n",
            self.extrapolated,
            self.target,
            self.deviation,
            if self.pass { "pass" } else { "FAIL" }
        ));
        s
    }
}

/// Slopes `(g_t − |v|²)/t` on a halving t-grid and their two-level
/// Richardson extrapolation (over the three smallest times) compared with
/// `−2 Ric(v, v)`.
pub fn tangency_experiment(geometry: &ModelGeometry, x: usize, v: &[f64], t_grid: &[f64]) -> Result<TangencyReport> {
    check_vector(geometry, v)?;
    if t_grid.len() < 3 {
        return Err(Error::InvalidInput("need at least three times".into()));
    }
    for w in t_grid.windows(2) {
        if ((w[1] / w[0]) - 0.5).abs() > 1e-9 {
            return Err(Error::InvalidInput("t-grid must halve at every step".into()));
        }
    }
    let t_min = *t_grid.last().unwrap();
    ensure_resolved(geometry, t_min)?;
    let norm2: f64 = v.iter().map(|a| a * a).sum();
    let target = -2.0 * geometry.ricci(x, v);
    let floor = norm2;
    let scale = target.abs().max(floor);
    let k = geometry.curvature_bound();
    let gs: Vec<f64> = t_grid
        .par_iter()
        .map(|&t| metric_gt(geometry, t, x, v))
        .collect::<Result<_>>()?;
    let rows: Vec<TangencyRow> = t_grid
        .iter()
        .zip(&gs)
        .map(|(&t, &g)| {
            let slope = (g - norm2) / t;
            TangencyRow {
                t,
                g_t: g,
                slope,
                target,
                deviation: (slope - target).abs() / scale,
            }
        })
        .collect();
    let m = rows.len();
    let (s0, s1, s2) = (rows[m - 3].slope, rows[m - 2].slope, rows[m - 1].slope);
    let (a, b) = (2.0 * s1 - s0, 2.0 * s2 - s1);
    let extrapolated = (4.0 * b - a) / 3.0;
    let deviation = (extrapolated - target).abs() / scale;
    let tolerance = 0.05;
    let one_sided_pass = rows
        .iter()
        .filter(|r| r.t <= SMALL_T + 1e-12)
        .all(|r| r.slope <= target * (1.0 - tolerance) + tolerance * norm2);
    let decay_pass = rows
        .iter()
        .all(|r| r.g_t <= (-2.0 * k * r.t).exp() * norm2 * (1.0 + 1e-6));
    Ok(TangencyReport {
        rows,
        extrapolated,
        target,
        deviation,
        tolerance,
        pass: deviation <= tolerance,
        one_sided_pass,
        decay_pass,
    })
}

/// Constant-speed rotation `s ↦ start + speed · s` of the circle.
#[derive(Debug, Clone, Copy)]
pub struct RotationCurve {
    pub start: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricSpeedRow {
    pub s: f64,
    pub g_t: f64,
    /// `(W_2(μ_{t,γ(s+h)}, μ_{t,γ(s)}) / h)²`.
    pub quotient: f64,
    /// Same with step `h/2`.
    pub quotient_half: f64,
    pub mismatch: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricSpeedReport {
    pub t: f64,
    pub h: f64,
    pub rows: Vec<MetricSpeedRow>,
}

impl MetricSpeedReport {
    pub fn max_mismatch(&self) -> f64 {
        self.rows.iter().map(|r| r.mismatch).fold(0.0, f64::max)
    }
}

/// Cell masses of `μ_{t,p}` on the cells centred at the circle nodes.
fn cell_masses(kernel: &CircleKernel, t: f64, n: usize, h: f64, p: f64, rule: &Rule) -> Vec<f64> {
    cell_averages(kernel, t, n, h, p, rule)
        .into_iter()
        .map(|a| a * h)
        .collect()
}

/// Compares `g_t(γ', γ')` with the squared W_2 difference quotient along a
/// rotation of the circle. The W_2 side transports the cell-averaged heat
/// kernels exactly (piecewise-constant densities) so sub-cell steps `h`
/// are meaningful.
pub fn metric_speed_check(
    geometry: &ModelGeometry,
    t: f64,
    curve: &RotationCurve,
    samples: &[f64],
    h: f64,
) -> Result<MetricSpeedReport> {
    let ModelGeometry::Circle { length, n } = *geometry else {
        return Err(Error::InvalidInput("metric speed check runs on the circle".into()));
    };
    ensure_resolved(geometry, t)?;
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("step h = {h}")));
    }
    let step = length / n as f64;
    let kernel = CircleKernel::new(length);
    let rule = Rule::new(8);
    let g = metric_gt(geometry, t, 0, &[curve.speed])?;
    let rows = samples
        .par_iter()
        .map(|&s| {
            let at = |s: f64| cell_masses(&kernel, t, n, step, curve.start + curve.speed * s, &rule);
            let base = at(s);
            let w = circle_w2_cells(&at(s + h), &base, length)?;
            let w_half = circle_w2_cells(&at(s + 0.5 * h), &base, length)?;
            let quotient = (w / h).powi(2);
            Ok(MetricSpeedRow {
                s,
                g_t: g,
                quotient,
                quotient_half: (w_half / (0.5 * h)).powi(2),
                mismatch: (quotient - g).abs() / g,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricSpeedReport { t, h, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn circle(l: f64, n: usize) -> ModelGeometry {
        ModelGeometry::circle(l, n).unwrap()
    }

    #[test]
    fn zero_source_zero_potential() {
        let g = circle(1.0, 64);
        let p = solve_weighted_poisson(&g, &vec![1.0; 64], &vec![0.0; 64]).unwrap();
        assert!(p.values.iter().all(|v| *v == 0.0));
        let p = velocity_potential(&g, 0.05, 3, &[0.0]).unwrap();
        assert!(p.values.iter().all(|v| *v == 0.0));
        assert_eq!(metric_gt(&g, 0.05, 3, &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn cosine_source_fourier_inversion() {
        let (l, n) = (3.0, 256);
        let g = circle(l, n);
        let h = l / n as f64;
        let w = 2.0 * PI / l;
        let eta: Vec<f64> = (0..n).map(|i| (w * i as f64 * h).cos()).collect();
        let p = solve_weighted_poisson(&g, &vec![1.0; n], &eta).unwrap();
        // the discrete symbol of the 3-point Laplacian is exact for this mode
        let lam = 2.0 / (h * h) * (1.0 - (w * h).cos());
        for i in 0..n {
            assert!((p.values[i] + eta[i] / lam).abs() < 1e-12);
            assert!((p.values[i] + eta[i] / (w * w)).abs() < 1e-4);
        }
        assert!(p.residual < 1e-12);
        let twice: Vec<f64> = eta.iter().map(|e| 2.5 * e).collect();
        let q = solve_weighted_poisson(&g, &vec![1.0; n], &twice).unwrap();
        for (a, b) in p.values.iter().zip(&q.values) {
            assert!((2.5 * a - b).abs() < 1e-12);
        }
        let bad = vec![1.0; n];
        assert!(matches!(
            solve_weighted_poisson(&g, &vec![1.0; n], &bad),
            Err(Error::NonzeroMeanSource(_))
        ));
        let mut rho = vec![1.0; n];
        rho[5] = 0.0;
        assert!(matches!(
            solve_weighted_poisson(&g, &rho, &eta),
            Err(Error::NonpositiveDensity)
        ));
    }

    #[test]
    fn circle_linear_in_v() {
        let g = circle(2.0, 128);
        let a = velocity_potential(&g, 0.1, 0, &[1.0]).unwrap();
        let b = velocity_potential(&g, 0.1, 0, &[-3.0]).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((-3.0 * x - y).abs() < 1e-12 * (1.0 + y.abs()));
        }
        assert_relative_eq!(b.energy, 9.0 * a.energy, max_relative = 1e-12);
        let mean: f64 = a.values.iter().sum();
        assert!(mean.abs() < 1e-10);
    }

    #[test]
    fn circle_plan_is_exact() {
        let g = circle(2.0, 256);
        let p = velocity_potential(&g, 0.07, 10, &[1.3]).unwrap();
        let plan = tangent_plan(&p);
        assert!((plan.mass() - 1.0).abs() < 1e-8);
        assert_relative_eq!(plan.second_moment(), p.energy, max_relative = 1e-12);
    }

    #[test]
    fn torus_separates_into_circles() {
        let (l, n) = (2.0, 32);
        let torus = ModelGeometry::torus(l, l, n, n).unwrap();
        let c = circle(l, n);
        let v = [0.7, -0.4];
        let t = 0.05;
        let g = metric_gt(&torus, t, 0, &v).unwrap();
        let expect = metric_gt(&c, t, 0, &[v[0]]).unwrap() + metric_gt(&c, t, 0, &[v[1]]).unwrap();
        assert_relative_eq!(g, expect, max_relative = 1e-9);
        let p = velocity_potential(&torus, t, 0, &v).unwrap();
        assert!(p.residual < 1e-8);
        let plan = tangent_plan(&p);
        assert!((plan.mass() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn sphere_large_time_closed_form() {
        // ρ ≈ (1 + 3 e^{−2t} cos θ)/4π gives u ≈ 1.5 e^{−2t} sin θ, g ≈ 1.5 e^{−4t}
        let s = ModelGeometry::sphere(1.0, 256, 60).unwrap();
        let t = 3.0;
        let g = metric_gt(&s, t, 0, &[1.0, 0.0]).unwrap();
        assert_relative_eq!(g, 1.5 * (-4.0 * t).exp(), max_relative = 1e-3);
    }

    #[test]
    fn sphere_source_matches_moving_base_point() {
        // finite difference of ρ(t, x_ε, y) along v at a sample (θ, ψ)
        let r = 1.7;
        let k = SphereKernel::new(r, 80);
        let t = 0.3;
        let (theta, psi) = (0.8_f64, 0.6_f64);
        let angle = |eps: f64| {
            // x_ε at colatitude ε/r along ψ = 0
            let a = eps / r;
            let c = a.sin() * theta.sin() * psi.cos() + a.cos() * theta.cos();
            c.clamp(-1.0, 1.0).acos()
        };
        let e = 1e-5;
        let fd = (k.value(t, angle(e)).unwrap() - k.value(t, angle(-e)).unwrap()) / (2.0 * e);
        let (_, d_theta, _) = k.eval(t, theta).unwrap();
        // ∇_x ρ · v = −(1/r) ρ_θ cos ψ
        assert_relative_eq!(fd, -d_theta * psi.cos() / r, max_relative = 1e-6);
    }

    #[test]
    fn gradient_of_energy_vanishes() {
        let g = circle(2.0, 128);
        let p = velocity_potential(&g, 0.1, 0, &[1.0]).unwrap();
        let dir: Vec<f64> = (0..128).map(|i| ((i * 37 % 17) as f64 - 8.0) / 8.0).collect();
        assert!(energy_gradient_check(&p, &dir) < 1e-8);
        let s = ModelGeometry::sphere(1.0, 256, 60).unwrap();
        let p = velocity_potential(&s, 0.1, 0, &[1.0, 0.0]).unwrap();
        let dir: Vec<f64> = (0..p.values.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        assert!(energy_gradient_check(&p, &dir) < 1e-8);
    }

    #[test]
    fn unresolved_times_are_rejected() {
        let g = circle(2.0 * PI, 64);
        assert!(matches!(
            velocity_potential(&g, 1e-3, 0, &[1.0]),
            Err(Error::UnresolvedTime { .. })
        ));
        let s = ModelGeometry::sphere(1.0, 512, 40).unwrap();
        assert!(matches!(
            velocity_potential(&s, 0.005, 0, &[1.0, 0.0]),
            Err(Error::UnresolvedTime { .. })
        ));
    }
}
