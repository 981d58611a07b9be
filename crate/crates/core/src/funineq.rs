//! Weighted functional inequalities on a box `U` with potential `Φ` (∫_U e^{−Φ} = 1):
//! divergence solvers (elliptic and Bogovskiǐ routes), covering, Poincaré–Lions, Korn,
//! Stokes and weighted Poincaré constants on a staggered (MAC) grid.

use crate::error::{invalid, Error, Result};
use crate::linalg::{
    conjugate_gradient, constrained_pencil, dense_solve, gauss_legendre, generalized_sym_eig, Csr, Dense,
};
use crate::phase::{Potential, PotentialSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;

/// Largest problem handed to dense eigensolvers here.
pub const DENSE_LIMIT: usize = 2500;

/// Bounded box `U`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoxDomain {
    Interval { a: f64, b: f64 },
    Rectangle { lo: [f64; 2], hi: [f64; 2] },
}

/// `U` with a potential, a MAC grid and weight tables.
#[derive(Clone, Debug)]
pub struct WeightedDomain {
    pub shape: BoxDomain,
    pub potential: Potential,
    pub dim: usize,
    /// Cells per axis (second entry 1 in 1D).
    pub n: [usize; 2],
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub h: [f64; 2],
    /// Added to the raw potential so that `∫_U e^{−Φ} = 1`.
    pub shift: f64,
    /// Φ at cell centres.
    pub phi: Vec<f64>,
    /// `⌊∇Φ⌉ = (1 + |∇Φ|²)^{1/2}` at cell centres.
    pub bracket: Vec<f64>,
    /// `sup |∇²Φ| / (1 + |∇Φ|)`.
    pub regularity: f64,
}

/// Normal or tangential face values of a vector field on the MAC grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FaceField {
    /// First component on x-faces, index `i·n₁ + j`, `i = 0..=n₀`.
    pub x: Vec<f64>,
    /// Second component on y-faces, index `i·(n₁+1) + j`, `j = 0..=n₁` (empty in 1D).
    pub y: Vec<f64>,
}

impl FaceField {
    pub fn zeros(dom: &WeightedDomain) -> Self {
        Self { x: vec![0.0; dom.n_xfaces()], y: vec![0.0; dom.n_yfaces()] }
    }

    fn axpy(&mut self, a: f64, o: &FaceField) {
        self.x.iter_mut().zip(&o.x).for_each(|(p, q)| *p += a * q);
        self.y.iter_mut().zip(&o.y).for_each(|(p, q)| *p += a * q);
    }
}

impl WeightedDomain {
    pub fn new(shape: BoxDomain, cells: [usize; 2], potential: Potential) -> Result<Self> {
        potential.validate()?;
        let (dim, lo, hi, n) = match &shape {
            BoxDomain::Interval { a, b } => (1, [*a, 0.0], [*b, 1.0], [cells[0], 1]),
            BoxDomain::Rectangle { lo, hi } => (2, *lo, *hi, cells),
        };
        if !(0..dim).all(|k| hi[k] > lo[k] && lo[k].is_finite() && hi[k].is_finite()) {
            return invalid("box must have positive finite extent");
        }
        if n[0] < 2 || (dim == 2 && n[1] < 2) {
            return invalid("need at least two cells per axis");
        }
        let h = [(hi[0] - lo[0]) / n[0] as f64, (hi[1] - lo[1]) / n[1] as f64];
        let mut dom = Self {
            shape,
            potential,
            dim,
            n,
            lo,
            hi,
            h,
            shift: 0.0,
            phi: vec![],
            bracket: vec![],
            regularity: 0.0,
        };
        let raw: Vec<PotentialSample> =
            (0..dom.cells()).map(|c| dom.potential.sample(&dom.center(c), dim)).collect::<Result<_>>()?;
        let z: f64 = raw.iter().map(|s| (-s.phi).exp()).sum::<f64>() * dom.vol();
        if !(z.is_finite() && z > 0.0) {
            return invalid("e^{−Φ} is not integrable on U");
        }
        dom.shift = z.ln();
        dom.phi = raw.iter().map(|s| s.phi + dom.shift).collect();
        dom.bracket = raw.iter().map(|s| (1.0 + s.grad[0].powi(2) + s.grad[1].powi(2)).sqrt()).collect();
        dom.regularity = raw
            .iter()
            .map(|s| s.hess / (1.0 + s.grad[0].hypot(s.grad[1])))
            .fold(0.0, f64::max);
        Ok(dom)
    }

    pub fn cells(&self) -> usize {
        self.n[0] * self.n[1]
    }

    pub fn vol(&self) -> f64 {
        if self.dim == 1 {
            self.h[0]
        } else {
            self.h[0] * self.h[1]
        }
    }

    pub fn center(&self, c: usize) -> [f64; 2] {
        let (i, j) = (c / self.n[1], c % self.n[1]);
        let y = if self.dim == 1 { 0.0 } else { self.lo[1] + (j as f64 + 0.5) * self.h[1] };
        [self.lo[0] + (i as f64 + 0.5) * self.h[0], y]
    }

    pub fn n_xfaces(&self) -> usize {
        (self.n[0] + 1) * self.n[1]
    }

    pub fn n_yfaces(&self) -> usize {
        if self.dim == 1 {
            0
        } else {
            self.n[0] * (self.n[1] + 1)
        }
    }

    pub fn xface_pos(&self, k: usize) -> [f64; 2] {
        let (i, j) = (k / self.n[1], k % self.n[1]);
        let y = if self.dim == 1 { 0.0 } else { self.lo[1] + (j as f64 + 0.5) * self.h[1] };
        [self.lo[0] + i as f64 * self.h[0], y]
    }

    pub fn yface_pos(&self, k: usize) -> [f64; 2] {
        let (i, j) = (k / (self.n[1] + 1), k % (self.n[1] + 1));
        [self.lo[0] + (i as f64 + 0.5) * self.h[0], self.lo[1] + j as f64 * self.h[1]]
    }

    fn xface_boundary(&self, k: usize) -> bool {
        let i = k / self.n[1];
        i == 0 || i == self.n[0]
    }

    fn yface_boundary(&self, k: usize) -> bool {
        let j = k % (self.n[1] + 1);
        j == 0 || j == self.n[1]
    }

    /// Normalized Φ, gradient and `⌊∇Φ⌉` at a point.
    pub fn pot(&self, x: &[f64; 2]) -> Result<(f64, [f64; 2], f64)> {
        let s = self.potential.sample(x, self.dim)?;
        Ok((s.phi + self.shift, s.grad, (1.0 + s.grad[0].powi(2) + s.grad[1].powi(2)).sqrt()))
    }

    fn exp_phi(&self, x: &[f64; 2], sign: f64) -> f64 {
        self.pot(x).map(|p| (sign * p.0).exp()).unwrap_or(f64::NAN)
    }

    /// Cell averages of `g` (4-point Gauss–Legendre per axis).
    pub fn cell_average(&self, g: impl Fn(&[f64; 2]) -> f64 + Sync) -> Vec<f64> {
        let (xs, ws) = gauss_legendre(4);
        (0..self.cells())
            .into_par_iter()
            .map(|c| {
                let m = self.center(c);
                let mut acc = 0.0;
                for (a, wa) in xs.iter().zip(&ws) {
                    if self.dim == 1 {
                        acc += 0.5 * wa * g(&[m[0] + 0.5 * a * self.h[0], 0.0]);
                    } else {
                        for (b, wb) in xs.iter().zip(&ws) {
                            acc += 0.25 * wa * wb * g(&[m[0] + 0.5 * a * self.h[0], m[1] + 0.5 * b * self.h[1]]);
                        }
                    }
                }
                acc
            })
            .collect()
    }

    /// Discrete divergence at cell centres.
    pub fn div(&self, f: &FaceField) -> Vec<f64> {
        let n1 = self.n[1];
        (0..self.cells())
            .map(|c| {
                let (i, j) = (c / n1, c % n1);
                let mut d = (f.x[(i + 1) * n1 + j] - f.x[i * n1 + j]) / self.h[0];
                if self.dim == 2 {
                    d += (f.y[i * (n1 + 1) + j + 1] - f.y[i * (n1 + 1) + j]) / self.h[1];
                }
                d
            })
            .collect()
    }

    /// `∫_U g`.
    pub fn integral(&self, g: &[f64]) -> f64 {
        g.iter().sum::<f64>() * self.vol()
    }

    /// `‖g‖_{L²(e^Φ)}` for cell data.
    pub fn norm_exp(&self, g: &[f64]) -> f64 {
        (g.iter().zip(&self.phi).map(|(a, p)| a * a * p.exp()).sum::<f64>() * self.vol()).sqrt()
    }

    /// `‖F‖_{L²(⌊∇Φ⌉² e^Φ)}` on faces (boundary faces carry half weight).
    pub fn norm_face_weighted(&self, f: &FaceField) -> f64 {
        let mut acc = 0.0;
        for (k, v) in f.x.iter().enumerate() {
            if *v != 0.0 {
                let (p, _, b) = self.pot(&self.xface_pos(k)).unwrap_or((0.0, [0.0; 2], 1.0));
                acc += v * v * b * b * p.exp() * if self.xface_boundary(k) { 0.5 } else { 1.0 };
            }
        }
        for (k, v) in f.y.iter().enumerate() {
            if *v != 0.0 {
                let (p, _, b) = self.pot(&self.yface_pos(k)).unwrap_or((0.0, [0.0; 2], 1.0));
                acc += v * v * b * b * p.exp() * if self.yface_boundary(k) { 0.5 } else { 1.0 };
            }
        }
        (acc * self.vol()).sqrt()
    }

    /// `‖∇F‖_{L²(e^Φ)}` with `F = 0` on `∂U` (mirror ghosts for tangential derivatives).
    pub fn norm_grad(&self, f: &FaceField) -> f64 {
        let (n0, n1) = (self.n[0], self.n[1]);
        let (hx, hy) = (self.h[0], self.h[1]);
        let mut acc = 0.0;
        for c in 0..self.cells() {
            let (i, j) = (c / n1, c % n1);
            let w = self.phi[c].exp();
            let dx = (f.x[(i + 1) * n1 + j] - f.x[i * n1 + j]) / hx;
            acc += w * dx * dx;
            if self.dim == 2 {
                let dy = (f.y[i * (n1 + 1) + j + 1] - f.y[i * (n1 + 1) + j]) / hy;
                acc += w * dy * dy;
            }
        }
        if self.dim == 2 {
            let corner = |i: usize, j: usize| [self.lo[0] + i as f64 * hx, self.lo[1] + j as f64 * hy];
            for i in 0..=n0 {
                for j in 0..=n1 {
                    let w = self.exp_phi(&corner(i, j), 1.0);
                    let edge_y = j == 0 || j == n1;
                    let edge_x = i == 0 || i == n0;
                    let fx = |jj: usize| f.x[i * n1 + jj];
                    let dyx = if j == 0 {
                        2.0 * fx(0) / hy
                    } else if j == n1 {
                        -2.0 * fx(n1 - 1) / hy
                    } else {
                        (fx(j) - fx(j - 1)) / hy
                    };
                    let fy = |ii: usize| f.y[ii * (n1 + 1) + j];
                    let dxy = if i == 0 {
                        2.0 * fy(0) / hx
                    } else if i == n0 {
                        -2.0 * fy(n0 - 1) / hx
                    } else {
                        (fy(i) - fy(i - 1)) / hx
                    };
                    let scale = if edge_x && edge_y {
                        0.25
                    } else if edge_x || edge_y {
                        0.5
                    } else {
                        1.0
                    };
                    acc += scale * w * (dyx * dyx + dxy * dxy);
                }
            }
        }
        (acc * self.vol()).sqrt()
    }

    /// `max ⌊∇Φ⌉ / min ⌊∇Φ⌉` over cells.
    pub fn bracket_variation(&self) -> f64 {
        let mx = self.bracket.iter().cloned().fold(0.0, f64::max);
        let mn = self.bracket.iter().cloned().fold(f64::INFINITY, f64::min);
        mx / mn
    }
}

/// Neumann cell Laplacian with face weights `w`: `uᵀKu = Σ_faces w |Δu/h|² vol`.
fn cell_laplacian(dom: &WeightedDomain, w: impl Fn(&[f64; 2]) -> f64) -> (Csr, FaceField) {
    let (n0, n1) = (dom.n[0], dom.n[1]);
    let mut t = Vec::new();
    let mut wf = FaceField::zeros(dom);
    let edge = |a: usize, b: usize, c: f64, t: &mut Vec<(usize, usize, f64)>| {
        t.push((a, a, c));
        t.push((b, b, c));
        t.push((a, b, -c));
        t.push((b, a, -c));
    };
    for i in 1..n0 {
        for j in 0..n1 {
            let k = i * n1 + j;
            let wk = w(&dom.xface_pos(k));
            wf.x[k] = wk;
            edge((i - 1) * n1 + j, i * n1 + j, wk * dom.vol() / (dom.h[0] * dom.h[0]), &mut t);
        }
    }
    if dom.dim == 2 {
        for i in 0..n0 {
            for j in 1..n1 {
                let k = i * (n1 + 1) + j;
                let wk = w(&dom.yface_pos(k));
                wf.y[k] = wk;
                edge(i * n1 + j - 1, i * n1 + j, wk * dom.vol() / (dom.h[1] * dom.h[1]), &mut t);
            }
        }
    }
    (Csr::from_triplets(dom.cells(), dom.cells(), t), wf)
}

/// Flux `w ∇u` on interior faces, zero on boundary faces.
fn face_flux(dom: &WeightedDomain, wf: &FaceField, u: &[f64]) -> FaceField {
    let (n0, n1) = (dom.n[0], dom.n[1]);
    let mut f = FaceField::zeros(dom);
    for i in 1..n0 {
        for j in 0..n1 {
            let k = i * n1 + j;
            f.x[k] = wf.x[k] * (u[i * n1 + j] - u[(i - 1) * n1 + j]) / dom.h[0];
        }
    }
    if dom.dim == 2 {
        for i in 0..n0 {
            for j in 1..n1 {
                let k = i * (n1 + 1) + j;
                f.y[k] = wf.y[k] * (u[i * n1 + j] - u[i * n1 + j - 1]) / dom.h[1];
            }
        }
    }
    f
}

fn check_mean_zero(dom: &WeightedDomain, g: &[f64]) -> Result<()> {
    if g.len() != dom.cells() {
        return Err(Error::GridMismatch(format!("{} values for {} cells", g.len(), dom.cells())));
    }
    let scale = g.iter().map(|x| x.abs()).sum::<f64>() * dom.vol();
    let m = dom.integral(g);
    if m.abs() > 1e-10 * scale.max(1.0) {
        return invalid(format!("right-hand side must have zero integral (∫g = {m:e})"));
    }
    Ok(())
}

/// `F₀ = ∇ψ + ψ∇Φ̃ = e^{−Φ̃}∇u`, `Φ̃ = Φ + 2 ln⌊∇Φ⌉`, with `∇·F₀ = g` and `F₀·n = 0` on `∂U`.
pub fn solve_divergence_l2(dom: &WeightedDomain, g: &[f64]) -> Result<FaceField> {
    check_mean_zero(dom, g)?;
    if g.iter().all(|x| *x == 0.0) {
        return Ok(FaceField::zeros(dom));
    }
    let (k, wf) = cell_laplacian(dom, |x| {
        dom.pot(x).map(|(p, _, b)| (-p).exp() / (b * b)).unwrap_or(f64::NAN)
    });
    let b: Vec<f64> = g.iter().map(|x| -x * dom.vol()).collect();
    let project = |v: &mut [f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter_mut().for_each(|x| *x -= m);
    };
    let sol = conjugate_gradient(|u| k.matvec(u), &b, 1e-13, 20 * dom.cells() + 100, project)?;
    Ok(face_flux(dom, &wf, &sol.x))
}

/// Unit-mass bump `C(1 − |z−c|²/R²)²/(4R)ⁿ` supported in the ball `B(c, R)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BumpBall {
    pub center: [f64; 2],
    pub radius: f64,
}

impl BumpBall {
    fn constant(dim: usize) -> f64 {
        if dim == 1 {
            15.0 / 4.0
        } else {
            48.0 / PI
        }
    }

    /// Bump value.
    pub fn eval(&self, dim: usize, z: &[f64; 2]) -> f64 {
        let r2 = (z[0] - self.center[0]).powi(2) + if dim == 2 { (z[1] - self.center[1]).powi(2) } else { 0.0 };
        let u = 1.0 - r2 / (self.radius * self.radius);
        if u <= 0.0 {
            0.0
        } else {
            Self::constant(dim) * (4.0 * self.radius).powi(-(dim as i32)) * u * u
        }
    }

    /// `(∫₀^∞ ψ(x − sθ) ds, ∫₀^∞ ψ(x − sθ) s ds)` from the exact chord and Gauss–Legendre.
    fn ray_moments(&self, dim: usize, x: &[f64; 2], th: &[f64; 2], gl: &(Vec<f64>, Vec<f64>)) -> (f64, f64) {
        let d = [x[0] - self.center[0], if dim == 2 { x[1] - self.center[1] } else { 0.0 }];
        let b = d[0] * th[0] + d[1] * th[1];
        let disc = b * b - (d[0] * d[0] + d[1] * d[1]) + self.radius * self.radius;
        if disc <= 0.0 {
            return (0.0, 0.0);
        }
        let sq = disc.sqrt();
        let (s1, s2) = ((b - sq).max(0.0), b + sq);
        if s2 <= s1 {
            return (0.0, 0.0);
        }
        let (mut a0, mut a1) = (0.0, 0.0);
        for (u, w) in gl.0.iter().zip(&gl.1) {
            let s = 0.5 * (s1 + s2) + 0.5 * (s2 - s1) * u;
            let v = self.eval(dim, &[x[0] - s * th[0], x[1] - s * th[1]]) * 0.5 * (s2 - s1) * w;
            a0 += v;
            a1 += v * s;
        }
        (a0, a1)
    }
}

/// `(∫ g(x+ρθ) dρ, ∫ g(x+ρθ) ρ dρ)` for piecewise-constant cell data.
fn ray_cell_moments(dom: &WeightedDomain, g: &[f64], x: &[f64; 2], th: &[f64; 2]) -> (f64, f64) {
    let (n0, n1) = (dom.n[0] as i64, dom.n[1] as i64);
    let nudge = 1e-9 * dom.h[0].min(if dom.dim == 2 { dom.h[1] } else { dom.h[0] });
    let p = [x[0] + nudge * th[0], x[1] + nudge * th[1]];
    let mut i = ((p[0] - dom.lo[0]) / dom.h[0]).floor() as i64;
    let mut j = if dom.dim == 2 { ((p[1] - dom.lo[1]) / dom.h[1]).floor() as i64 } else { 0 };
    let inside = |i: i64, j: i64| i >= 0 && i < n0 && j >= 0 && j < n1;
    if !inside(i, j) {
        return (0.0, 0.0);
    }
    let next = |k: i64, axis: usize| -> f64 {
        let t = th[axis];
        if t.abs() < 1e-300 || (axis == 1 && dom.dim == 1) {
            f64::INFINITY
        } else {
            let edge = dom.lo[axis] + (if t > 0.0 { k + 1 } else { k }) as f64 * dom.h[axis];
            (edge - x[axis]) / t
        }
    };
    let (mut tx, mut ty) = (next(i, 0), next(j, 1));
    let dtx = if th[0] != 0.0 { dom.h[0] / th[0].abs() } else { f64::INFINITY };
    let dty = if dom.dim == 2 && th[1] != 0.0 { dom.h[1] / th[1].abs() } else { f64::INFINITY };
    let (sx, sy) = (th[0].signum() as i64, th[1].signum() as i64);
    let mut rho = 0.0;
    let (mut m0, mut m1) = (0.0, 0.0);
    while inside(i, j) {
        let end = tx.min(ty);
        let gv = g[(i * n1 + j) as usize];
        if gv != 0.0 && end > rho {
            m0 += gv * (end - rho);
            m1 += gv * 0.5 * (end * end - rho * rho);
        }
        rho = end;
        if tx <= ty {
            i += sx;
            tx += dtx;
        } else {
            j += sy;
            ty += dty;
        }
    }
    (m0, m1)
}

/// Bogovskiǐ field `F(x) = ∫ g(y)(x−y)∫₁^∞ ψ(y+τ(x−y))τ^{n−1}dτ dy` evaluated on faces,
/// in polar form around each face point; `support` restricts evaluation to a ball.
pub fn bogovskii_local(
    dom: &WeightedDomain,
    g: &[f64],
    ball: &BumpBall,
    support: Option<([f64; 2], f64)>,
    angles: usize,
) -> Result<FaceField> {
    if g.len() != dom.cells() {
        return Err(Error::GridMismatch("cell data size differs from the grid".into()));
    }
    if angles < 2 {
        return invalid("need at least two angular nodes");
    }
    let dim = dom.dim;
    let gl4 = gauss_legendre(4);
    let gla = gauss_legendre(angles);
    let within = |x: &[f64; 2]| match support {
        Some((c, r)) => (x[0] - c[0]).hypot(if dim == 2 { x[1] - c[1] } else { 0.0 }) <= r,
        None => true,
    };
    let eval = |x: [f64; 2], comp: usize| -> f64 {
        if dim == 1 {
            let mut f = 0.0;
            for s in [1.0, -1.0] {
                let th = [s, 0.0];
                let (a0, _) = ball.ray_moments(1, &x, &th, &gl4);
                if a0 != 0.0 {
                    let (i0, _) = ray_cell_moments(dom, g, &x, &th);
                    f -= s * a0 * i0;
                }
            }
            return f;
        }
        let d = [x[0] - ball.center[0], x[1] - ball.center[1]];
        let dist = d[0].hypot(d[1]);
        let mut acc = 0.0;
        let mut add = |ang: f64, w: f64| {
            let th = [ang.cos(), ang.sin()];
            let (a0, a1) = ball.ray_moments(2, &x, &th, &gl4);
            if a0 != 0.0 || a1 != 0.0 {
                let (i0, i1) = ray_cell_moments(dom, g, &x, &th);
                acc -= w * th[comp] * (a0 * i1 + a1 * i0);
            }
        };
        if dist > ball.radius {
            let base = d[1].atan2(d[0]);
            let beta = (ball.radius / dist).asin();
            for (u, w) in gla.0.iter().zip(&gla.1) {
                let phi = 0.5 * PI * u;
                add(base + beta * phi.sin(), w * 0.5 * PI * beta * phi.cos());
            }
        } else {
            let m = 2 * angles;
            for k in 0..m {
                add(2.0 * PI * (k as f64 + 0.5) / m as f64, 2.0 * PI / m as f64);
            }
        }
        acc
    };
    let fx: Vec<f64> = (0..dom.n_xfaces())
        .into_par_iter()
        .map(|k| {
            let x = dom.xface_pos(k);
            if dom.xface_boundary(k) || !within(&x) {
                0.0
            } else {
                eval(x, 0)
            }
        })
        .collect();
    let fy: Vec<f64> = (0..dom.n_yfaces())
        .into_par_iter()
        .map(|k| {
            let x = dom.yface_pos(k);
            if dom.yface_boundary(k) || !within(&x) {
                0.0
            } else {
                eval(x, 1)
            }
        })
        .collect();
    Ok(FaceField { x: fx, y: fy })
}

/// Ball of the covering with its star-centre ball.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CoverBall {
    pub center: [f64; 2],
    pub radius: f64,
    /// Ball inside `U ∩ B_k` with respect to which the patch is star-shaped.
    pub inner: BumpBall,
    pub boundary: bool,
}

/// Covering of `U` by balls with radii `∝ ⌊∇Φ⌉⁻¹` and a subordinate partition of unity.
#[derive(Clone, Debug, Serialize)]
pub struct Cover {
    pub balls: Vec<CoverBall>,
    pub scale: f64,
    /// Largest number of balls containing a grid point.
    pub max_overlap: usize,
    /// `max |Σθ_k − 1|` on the grid.
    pub partition_defect: f64,
    /// `max_k r_k ‖∇θ_k‖_∞` estimated on the grid.
    pub gradient_constant: f64,
}

fn bump_profile(z2: f64) -> f64 {
    let u = 1.0 - z2;
    if u <= 0.0 {
        0.0
    } else {
        u * u * u
    }
}

impl Cover {
    /// `(k, θ_k(x))` for the balls containing `x`.
    pub fn partition(&self, dim: usize, x: &[f64; 2]) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = self
            .balls
            .iter()
            .enumerate()
            .filter_map(|(k, b)| {
                let dy = if dim == 2 { x[1] - b.center[1] } else { 0.0 };
                let z2 = ((x[0] - b.center[0]).powi(2) + dy * dy) / (b.radius * b.radius);
                let v = bump_profile(z2);
                (v > 0.0).then_some((k, v))
            })
            .collect();
        let s: f64 = out.iter().map(|p| p.1).sum();
        out.iter_mut().for_each(|p| p.1 /= s);
        out
    }
}

/// Quadtree covering: a leaf of side `s` is split while `s > scale/⌊∇Φ⌉(centre)`; leaves are
/// 2:1 balanced and each carries the ball of radius `s` at its centre.
pub fn build_covering(dom: &WeightedDomain, scale: Option<f64>) -> Result<Cover> {
    let ext = [dom.hi[0] - dom.lo[0], if dom.dim == 2 { dom.hi[1] - dom.lo[1] } else { f64::INFINITY }];
    let lmin = ext[0].min(ext[1]);
    let scale = scale.unwrap_or(0.5 * lmin / (1.0 + dom.regularity));
    if !(scale > 0.0 && scale.is_finite()) {
        return invalid("covering scale must be positive");
    }
    let minside = 2.0 * dom.h[0].max(if dom.dim == 2 { dom.h[1] } else { 0.0 });
    if scale / dom.bracket.iter().cloned().fold(1.0, f64::max) < 0.25 * minside {
        return Err(Error::Numerical("weight varies too fast for the grid: covering balls below the mesh size".into()));
    }
    // leaves as (lo, size)
    let mx = (ext[0] / lmin).round().max(1.0) as usize;
    let my = if dom.dim == 2 { (ext[1] / lmin).round().max(1.0) as usize } else { 1 };
    let s0 = [ext[0] / mx as f64, if dom.dim == 2 { ext[1] / my as f64 } else { 0.0 }];
    let mut leaves: Vec<([f64; 2], [f64; 2])> = (0..mx)
        .flat_map(|i| (0..my).map(move |j| ([dom.lo[0] + i as f64 * s0[0], dom.lo[1] + j as f64 * s0[1]], s0)))
        .collect();
    let side = |s: &[f64; 2]| s[0].max(s[1]);
    let split = |l: &([f64; 2], [f64; 2])| -> Vec<([f64; 2], [f64; 2])> {
        let (lo, s) = l;
        if dom.dim == 1 {
            let hs = [0.5 * s[0], 0.0];
            vec![(*lo, hs), ([lo[0] + hs[0], lo[1]], hs)]
        } else {
            let hs = [0.5 * s[0], 0.5 * s[1]];
            vec![
                (*lo, hs),
                ([lo[0] + hs[0], lo[1]], hs),
                ([lo[0], lo[1] + hs[1]], hs),
                ([lo[0] + hs[0], lo[1] + hs[1]], hs),
            ]
        }
    };
    for _ in 0..12 {
        let mut changed = false;
        let mut next = Vec::with_capacity(leaves.len());
        for l in &leaves {
            let c = [l.0[0] + 0.5 * l.1[0], l.0[1] + 0.5 * l.1[1]];
            let b = dom.pot(&c)?.2;
            if side(&l.1) > scale / b && side(&l.1) > minside {
                next.extend(split(l));
                changed = true;
            } else {
                next.push(*l);
            }
        }
        leaves = next;
        if !changed {
            break;
        }
    }
    // 2:1 balance
    for _ in 0..12 {
        let touching = |a: &([f64; 2], [f64; 2]), b: &([f64; 2], [f64; 2])| {
            let tol = 1e-12 * lmin;
            (0..dom.dim).all(|k| a.0[k] <= b.0[k] + b.1[k] + tol && b.0[k] <= a.0[k] + a.1[k] + tol)
        };
        let flags: Vec<bool> = leaves
            .par_iter()
            .map(|a| leaves.iter().any(|b| touching(a, b) && side(&b.1) < 0.5 * side(&a.1) * (1.0 - 1e-9)))
            .collect();
        if !flags.iter().any(|f| *f) {
            break;
        }
        leaves = leaves.iter().zip(&flags).flat_map(|(l, f)| if *f { split(l) } else { vec![*l] }).collect();
    }
    let balls: Vec<CoverBall> = leaves
        .iter()
        .map(|(lo, s)| {
            let c = [lo[0] + 0.5 * s[0], lo[1] + 0.5 * s[1]];
            let r = side(s);
            let small = if dom.dim == 2 { s[0].min(s[1]) } else { s[0] };
            let wall = (0..dom.dim).any(|k| c[k] - dom.lo[k] < r || dom.hi[k] - c[k] < r);
            CoverBall { center: c, radius: r, inner: BumpBall { center: c, radius: 0.5 * small }, boundary: wall }
        })
        .collect();
    let mut cover = Cover { balls, scale, max_overlap: 0, partition_defect: 0.0, gradient_constant: 0.0 };
    let mut pts: Vec<[f64; 2]> = (0..dom.n_xfaces()).map(|k| dom.xface_pos(k)).collect();
    pts.extend((0..dom.n_yfaces()).map(|k| dom.yface_pos(k)));
    pts.extend((0..dom.cells()).map(|c| dom.center(c)));
    let stats: Vec<(usize, f64, f64)> = pts
        .par_iter()
        .map(|x| {
            let p = cover.partition(dom.dim, x);
            let defect = (p.iter().map(|q| q.1).sum::<f64>() - 1.0).abs();
            let e = 1e-6 * dom.h[0];
            let mut g = 0.0f64;
            for ax in 0..dom.dim {
                let mut xp = *x;
                xp[ax] += e;
                let mut xm = *x;
                xm[ax] -= e;
                let (pp, pm) = (cover.partition(dom.dim, &xp), cover.partition(dom.dim, &xm));
                for (k, _) in &p {
                    let val = |v: &Vec<(usize, f64)>| v.iter().find(|q| q.0 == *k).map_or(0.0, |q| q.1);
                    g = g.max((val(&pp) - val(&pm)).abs() / (2.0 * e) * cover.balls[*k].radius);
                }
            }
            (p.len(), defect, g)
        })
        .collect();
    if stats.iter().any(|s| s.0 == 0) {
        return Err(Error::Numerical("covering leaves a grid point uncovered".into()));
    }
    cover.max_overlap = stats.iter().map(|s| s.0).max().unwrap_or(0);
    cover.partition_defect = stats.iter().map(|s| s.1).fold(0.0, f64::max);
    cover.gradient_constant = stats.iter().map(|s| s.2).fold(0.0, f64::max);
    Ok(cover)
}

/// Route taken by [`solve_divergence_h1`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceRoute {
    /// One Bogovskiǐ patch on the whole box.
    SinglePatch,
    /// Partition of unity over a covering applied to the elliptic solution.
    Covering,
}

/// Options for [`solve_divergence_h1`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DivergenceOptions {
    /// Gauss–Legendre nodes across the angular window of the bump ball.
    #[serde(default = "default_angles")]
    pub angles: usize,
    /// Force a route; by default the covering is used when `⌊∇Φ⌉` varies by more than 4.
    #[serde(default)]
    pub route: Option<DivergenceRoute>,
    #[serde(default)]
    pub scale: Option<f64>,
}

fn default_angles() -> usize {
    48
}

impl Default for DivergenceOptions {
    fn default() -> Self {
        Self { angles: default_angles(), route: None, scale: None }
    }
}

/// Divergence solution with its diagnostics.
#[derive(Clone, Debug, Serialize)]
pub struct DivergenceSolution {
    #[serde(skip)]
    pub field: FaceField,
    /// `‖∇·F − g‖/‖g‖` of the Bogovskiǐ stage before the elliptic correction.
    pub residual_raw: f64,
    /// Final `‖∇·F − g‖_{L²(e^Φ)}/‖g‖_{L²(e^Φ)}`.
    pub residual: f64,
    /// `max |F|` over boundary faces.
    pub boundary_max: f64,
    pub norm_weighted: f64,
    pub norm_grad: f64,
    pub norm_g: f64,
    /// `(‖F‖_{L²(⌊∇Φ⌉²e^Φ)} + ‖∇F‖_{L²(e^Φ)}) / ‖g‖_{L²(e^Φ)}`.
    pub c_d: f64,
    pub route: DivergenceRoute,
    pub patches: usize,
}

/// `∇·F = g`, `F = 0` on `∂U`: Bogovskiǐ patches (composed with the covering when the
/// weight varies strongly) plus an elliptic correction of the discrete residual.
pub fn solve_divergence_h1(dom: &WeightedDomain, g: &[f64], opts: &DivergenceOptions) -> Result<DivergenceSolution> {
    check_mean_zero(dom, g)?;
    let route = opts.route.unwrap_or(if dom.bracket_variation() > 4.0 {
        DivergenceRoute::Covering
    } else {
        DivergenceRoute::SinglePatch
    });
    let norm_g = dom.norm_exp(g);
    let (mut field, patches) = match route {
        DivergenceRoute::SinglePatch => {
            let c = [0.5 * (dom.lo[0] + dom.hi[0]), 0.5 * (dom.lo[1] + dom.hi[1])];
            let half = if dom.dim == 2 {
                0.5 * (dom.hi[0] - dom.lo[0]).min(dom.hi[1] - dom.lo[1])
            } else {
                0.5 * (dom.hi[0] - dom.lo[0])
            };
            let ball = BumpBall { center: c, radius: 0.5 * half };
            (bogovskii_local(dom, g, &ball, None, opts.angles)?, 1)
        }
        DivergenceRoute::Covering => {
            let cover = build_covering(dom, opts.scale)?;
            let f0 = solve_divergence_l2(dom, g)?;
            let tx: Vec<Vec<(usize, f64)>> =
                (0..dom.n_xfaces()).map(|k| cover.partition(dom.dim, &dom.xface_pos(k))).collect();
            let ty: Vec<Vec<(usize, f64)>> =
                (0..dom.n_yfaces()).map(|k| cover.partition(dom.dim, &dom.yface_pos(k))).collect();
            let parts: Vec<FaceField> = (0..cover.balls.len())
                .map(|kb| -> Result<FaceField> {
                    let mut loc = FaceField::zeros(dom);
                    for (k, p) in tx.iter().enumerate() {
                        if let Some(q) = p.iter().find(|q| q.0 == kb) {
                            loc.x[k] = q.1 * f0.x[k];
                        }
                    }
                    for (k, p) in ty.iter().enumerate() {
                        if let Some(q) = p.iter().find(|q| q.0 == kb) {
                            loc.y[k] = q.1 * f0.y[k];
                        }
                    }
                    let gk = dom.div(&loc);
                    if gk.iter().all(|v| *v == 0.0) {
                        return Ok(FaceField::zeros(dom));
                    }
                    let b = &cover.balls[kb];
                    let reach = b.radius + 2.0 * dom.h[0].max(dom.h[1]);
                    bogovskii_local(dom, &gk, &b.inner, Some((b.center, reach)), opts.angles)
                })
                .collect::<Result<_>>()?;
            let mut f = FaceField::zeros(dom);
            for p in &parts {
                f.axpy(1.0, p);
            }
            (f, cover.balls.len())
        }
    };
    let resid = |f: &FaceField| -> Vec<f64> { dom.div(f).iter().zip(g).map(|(a, b)| b - a).collect() };
    let r = resid(&field);
    let scale = if norm_g > 0.0 { norm_g } else { 1.0 };
    let residual_raw = dom.norm_exp(&r) / scale;
    let mut rm = r.clone();
    let m = dom.integral(&rm) / (dom.cells() as f64 * dom.vol());
    rm.iter_mut().for_each(|x| *x -= m);
    if rm.iter().any(|x| *x != 0.0) {
        let corr = solve_divergence_l2(dom, &rm)?;
        field.axpy(1.0, &corr);
    }
    let residual = dom.norm_exp(&resid(&field)) / scale;
    let boundary_max = (0..dom.n_xfaces())
        .filter(|k| dom.xface_boundary(*k))
        .map(|k| field.x[k].abs())
        .chain((0..dom.n_yfaces()).filter(|k| dom.yface_boundary(*k)).map(|k| field.y[k].abs()))
        .fold(0.0, f64::max);
    let norm_weighted = dom.norm_face_weighted(&field);
    let norm_grad = dom.norm_grad(&field);
    Ok(DivergenceSolution {
        c_d: if norm_g > 0.0 { (norm_weighted + norm_grad) / norm_g } else { 0.0 },
        field,
        residual_raw,
        residual,
        boundary_max,
        norm_weighted,
        norm_grad,
        norm_g,
        route,
        patches,
    })
}

/// Estimated inequality constant.
#[derive(Clone, Debug, Serialize)]
pub struct InequalityReport {
    pub name: String,
    pub constant: f64,
    #[serde(skip)]
    pub witness: Vec<f64>,
    pub resolution: [usize; 2],
    /// Independent dense estimate when available.
    pub oracle: Option<f64>,
    pub details: BTreeMap<String, f64>,
}

/// Face unknowns of a vector field with `F·n = 0` on `∂U`: interior x-faces, then interior y-faces.
struct FaceDofs {
    x: Vec<usize>,
    y: Vec<usize>,
    xmap: Vec<Option<usize>>,
    ymap: Vec<Option<usize>>,
}

impl FaceDofs {
    fn new(dom: &WeightedDomain) -> Self {
        let x: Vec<usize> = (0..dom.n_xfaces()).filter(|k| !dom.xface_boundary(*k)).collect();
        let y: Vec<usize> = (0..dom.n_yfaces()).filter(|k| !dom.yface_boundary(*k)).collect();
        let mut xmap = vec![None; dom.n_xfaces()];
        let mut ymap = vec![None; dom.n_yfaces()];
        for (a, k) in x.iter().enumerate() {
            xmap[*k] = Some(a);
        }
        for (a, k) in y.iter().enumerate() {
            ymap[*k] = Some(x.len() + a);
        }
        Self { x, y, xmap, ymap }
    }

    fn len(&self) -> usize {
        self.x.len() + self.y.len()
    }

    fn to_field(&self, dom: &WeightedDomain, u: &[f64]) -> FaceField {
        let mut f = FaceField::zeros(dom);
        for (a, k) in self.x.iter().enumerate() {
            f.x[*k] = u[a];
        }
        for (a, k) in self.y.iter().enumerate() {
            f.y[*k] = u[self.x.len() + a];
        }
        f
    }
}

/// Dirichlet vector Laplacian on face unknowns: `uᵀKu = Σ_comp ∫ w|∇u_comp|²` with mirror ghosts.
fn vector_laplacian(dom: &WeightedDomain, dofs: &FaceDofs, w: &(dyn Fn(&[f64; 2]) -> f64 + Sync)) -> Csr {
    let (n0, n1) = (dom.n[0], dom.n[1]);
    let (hx, hy) = (dom.h[0], dom.h[1]);
    let vol = dom.vol();
    let mut t = Vec::new();
    let mut edge = |a: Option<usize>, b: Option<usize>, c: f64| {
        if let Some(a) = a {
            t.push((a, a, c));
        }
        if let Some(b) = b {
            t.push((b, b, c));
        }
        if let (Some(a), Some(b)) = (a, b) {
            t.push((a, b, -c));
            t.push((b, a, -c));
        }
    };
    let corner = |i: usize, j: usize| [dom.lo[0] + i as f64 * hx, dom.lo[1] + j as f64 * hy];
    // x component
    for i in 0..n0 {
        for j in 0..n1 {
            let c = dom.center(i * n1 + j);
            edge(dofs.xmap[i * n1 + j], dofs.xmap[(i + 1) * n1 + j], w(&c) * vol / (hx * hx));
        }
    }
    if dom.dim == 2 {
        for i in 1..n0 {
            for j in 0..=n1 {
                let cw = w(&corner(i, j)) * vol / (hy * hy);
                if j == 0 {
                    edge(dofs.xmap[i * n1], None, 2.0 * cw);
                } else if j == n1 {
                    edge(dofs.xmap[i * n1 + n1 - 1], None, 2.0 * cw);
                } else {
                    edge(dofs.xmap[i * n1 + j - 1], dofs.xmap[i * n1 + j], cw);
                }
            }
        }
        // y component
        for i in 0..n0 {
            for j in 0..n1 {
                let c = dom.center(i * n1 + j);
                edge(dofs.ymap[i * (n1 + 1) + j], dofs.ymap[i * (n1 + 1) + j + 1], w(&c) * vol / (hy * hy));
            }
        }
        for j in 1..n1 {
            for i in 0..=n0 {
                let cw = w(&corner(i, j)) * vol / (hx * hx);
                if i == 0 {
                    edge(dofs.ymap[j], None, 2.0 * cw);
                } else if i == n0 {
                    edge(dofs.ymap[(n0 - 1) * (n1 + 1) + j], None, 2.0 * cw);
                } else {
                    edge(dofs.ymap[(i - 1) * (n1 + 1) + j], dofs.ymap[i * (n1 + 1) + j], cw);
                }
            }
        }
    }
    Csr::from_triplets(dofs.len(), dofs.len(), t)
}

/// `B`: face unknowns → cells, `(Bu)_c = vol · div(a·u)_c` with face multiplier `a`.
fn weighted_div(dom: &WeightedDomain, dofs: &FaceDofs, a: &FaceField) -> Csr {
    let n1 = dom.n[1];
    let vol = dom.vol();
    let mut t = Vec::new();
    for c in 0..dom.cells() {
        let (i, j) = (c / n1, c % n1);
        for (k, s) in [((i + 1) * n1 + j, 1.0), (i * n1 + j, -1.0)] {
            if let Some(d) = dofs.xmap[k] {
                t.push((c, d, s * vol * a.x[k] / dom.h[0]));
            }
        }
        if dom.dim == 2 {
            for (k, s) in [(i * (n1 + 1) + j + 1, 1.0), (i * (n1 + 1) + j, -1.0)] {
                if let Some(d) = dofs.ymap[k] {
                    t.push((c, d, s * vol * a.y[k] / dom.h[1]));
                }
            }
        }
    }
    Csr::from_triplets(dom.cells(), dofs.len(), t)
}

fn face_table(dom: &WeightedDomain, f: impl Fn(&[f64; 2]) -> f64) -> FaceField {
    FaceField {
        x: (0..dom.n_xfaces()).map(|k| f(&dom.xface_pos(k))).collect(),
        y: (0..dom.n_yfaces()).map(|k| f(&dom.yface_pos(k))).collect(),
    }
}

fn random_zero_mean(dom: &WeightedDomain, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut h: Vec<f64> = (0..dom.cells()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let m = h.iter().sum::<f64>() / h.len() as f64;
    h.iter_mut().for_each(|x| *x -= m);
    h
}

/// `C_PL = sup ‖h − (∫h)e^{−Φ}‖_{L²(e^Φ)} / ‖∇h + h∇Φ‖_{(H¹₀(e^Φ))′}`, the dual norm taken
/// against `‖∇w‖_{L²(e^Φ)}` through a weighted Dirichlet solve.
pub fn poincare_lions_constant(dom: &WeightedDomain, trials: usize, seed: u64) -> Result<InequalityReport> {
    let dofs = FaceDofs::new(dom);
    let k = vector_laplacian(dom, &dofs, &|x| dom.exp_phi(x, 1.0));
    let ones = face_table(dom, |_| 1.0);
    // b = vol · (e^{Φ_R}h_R − e^{Φ_L}h_L)/h  =  −Bᵀ(e^Φ h)
    let bdiv = weighted_div(dom, &dofs, &ones);
    let eh = |h: &[f64]| -> Vec<f64> { h.iter().zip(&dom.phi).map(|(a, p)| a * p.exp()).collect() };
    let rhs = |h: &[f64]| -> Vec<f64> { bdiv.transpose_matvec(&eh(h)).iter().map(|x| -x).collect() };
    let dual2 = |b: &[f64]| -> Result<f64> {
        let sol = conjugate_gradient(|u| k.matvec(u), b, 1e-12, 20 * dofs.len() + 100, |_| {})?;
        Ok(b.iter().zip(&sol.x).map(|(a, c)| a * c).sum::<f64>())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = (0.0f64, vec![]);
    let mut dual_over_l2 = 0.0f64;
    for _ in 0..trials {
        let h = random_zero_mean(dom, &mut rng);
        let b = rhs(&h);
        let d = dual2(&b)?.sqrt();
        let r = dom.norm_exp(&h) / d;
        // ‖G‖_{L²(e^Φ)} with G = e^{−Φ}∇(e^Φ h) on faces
        let g_l2: f64 = {
            let gf = dofs.to_field(dom, &b);
            let mut acc = 0.0;
            for (kk, v) in gf.x.iter().enumerate() {
                let p = dom.exp_phi(&dom.xface_pos(kk), 1.0);
                acc += (v / dom.vol()).powi(2) / p;
            }
            for (kk, v) in gf.y.iter().enumerate() {
                let p = dom.exp_phi(&dom.yface_pos(kk), 1.0);
                acc += (v / dom.vol()).powi(2) / p;
            }
            (acc * dom.vol()).sqrt()
        };
        dual_over_l2 = dual_over_l2.max(d / g_l2);
        if r > best.0 {
            best = (r, h);
        }
    }
    let mut oracle = None;
    let mut witness = best.1.clone();
    if dom.cells() <= DENSE_LIMIT && dofs.len() <= 2 * DENSE_LIMIT {
        let kd = k.to_dense();
        let bd = bdiv.to_dense();
        // columns of Bᵀ E for each cell basis vector
        let n = dom.cells();
        let mut cols = Vec::with_capacity(n);
        let kinv_cols: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|c| {
                let rhs: Vec<f64> = (0..dofs.len()).map(|d| -bd.get(c, d) * dom.phi[c].exp()).collect();
                dense_solve(&kd, &rhs)
            })
            .collect::<Result<_>>()?;
        for c in 0..n {
            cols.push((0..dofs.len()).map(|d| -bd.get(c, d) * dom.phi[c].exp()).collect::<Vec<f64>>());
        }
        let mut s = Dense::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                s.set(a, b, cols[a].iter().zip(&kinv_cols[b]).map(|(x, y)| x * y).sum());
            }
        }
        let d: Vec<f64> = dom.phi.iter().map(|p| p.exp() * dom.vol()).collect();
        let (vals, vecs) = constrained_pencil(&s, &d, &vec![dom.vol(); n])?;
        if vals[0] > 0.0 {
            oracle = Some(1.0 / vals[0].sqrt());
            witness = vecs[0].clone();
        }
    }
    let mut details = BTreeMap::new();
    details.insert("random_max".into(), best.0);
    details.insert("trials".into(), trials as f64);
    details.insert("max_dual_over_l2".into(), dual_over_l2);
    Ok(InequalityReport {
        name: "poincare_lions".into(),
        constant: oracle.unwrap_or(0.0).max(best.0),
        witness,
        resolution: dom.n,
        oracle,
        details,
    })
}

/// Smallest eigenvalue of `∫|∇ρ+ρ∇Φ|²e^Φ / ∫ρ²⌊∇Φ⌉²e^Φ` over `∫ρ = 0`; the detail
/// `boundary_ok` records whether `n·∇Φ ≥ 0` on `∂U`.
pub fn weighted_poincare_check(dom: &WeightedDomain) -> Result<InequalityReport> {
    if dom.cells() > DENSE_LIMIT {
        return Err(Error::Capacity(format!("{} cells exceed the dense limit {DENSE_LIMIT}", dom.cells())));
    }
    let (k, _) = cell_laplacian(dom, |x| dom.exp_phi(x, -1.0));
    let d: Vec<f64> = (0..dom.cells()).map(|c| dom.bracket[c].powi(2) * (-dom.phi[c]).exp() * dom.vol()).collect();
    let c: Vec<f64> = dom.phi.iter().map(|p| (-p).exp() * dom.vol()).collect();
    let (vals, vecs) = constrained_pencil(&k.to_dense(), &d, &c)?;
    let mut ok = true;
    let mut probe = |x: [f64; 2], n: [f64; 2]| -> Result<()> {
        let g = dom.pot(&x)?.1;
        if g[0] * n[0] + g[1] * n[1] < -1e-12 {
            ok = false;
        }
        Ok(())
    };
    let m = 64;
    for s in 0..=m {
        let t = s as f64 / m as f64;
        if dom.dim == 1 {
            probe([dom.lo[0], 0.0], [-1.0, 0.0])?;
            probe([dom.hi[0], 0.0], [1.0, 0.0])?;
            break;
        }
        let x = dom.lo[0] + t * (dom.hi[0] - dom.lo[0]);
        let y = dom.lo[1] + t * (dom.hi[1] - dom.lo[1]);
        probe([x, dom.lo[1]], [0.0, -1.0])?;
        probe([x, dom.hi[1]], [0.0, 1.0])?;
        probe([dom.lo[0], y], [-1.0, 0.0])?;
        probe([dom.hi[0], y], [1.0, 0.0])?;
    }
    let witness: Vec<f64> = vecs[0].iter().zip(&dom.phi).map(|(u, p)| u * (-p).exp()).collect();
    let mut details = BTreeMap::new();
    details.insert("boundary_ok".into(), f64::from(u8::from(ok)));
    Ok(InequalityReport {
        name: "weighted_poincare".into(),
        constant: vals[0],
        witness,
        resolution: dom.n,
        oracle: None,
        details,
    })
}

/// Side condition for the Korn quotient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KornConstraint {
    /// `∫(∂_i + ∂_iΦ)u_j = ∫(∂_j + ∂_jΦ)u_i`.
    Averages,
    /// `n·u = 0` on `∂U`.
    Boundary,
}

/// Quadrature-point rows: weight and, per component, the `(dof, ∂x, ∂y)` entries.
type QpRow = (f64, Vec<(usize, usize, f64, f64)>);

fn korn_forms(ndof: usize, qps: &[QpRow]) -> (Dense, Dense, Vec<f64>) {
    let mut full = Dense::zeros(ndof, ndof);
    let mut sym = Dense::zeros(ndof, ndof);
    let mut curl = vec![0.0; ndof];
    for (w, ents) in qps {
        // rows: ∂x ux, ∂y ux, ∂x uy, ∂y uy  and strains
        let mut rows: [Vec<(usize, f64)>; 4] = Default::default();
        for &(dof, comp, gx, gy) in ents {
            rows[2 * comp].push((dof, gx));
            rows[2 * comp + 1].push((dof, gy));
            if comp == 1 {
                curl[dof] += w * gx;
            } else {
                curl[dof] -= w * gy;
            }
        }
        for r in &rows {
            for &(a, va) in r {
                for &(b, vb) in r {
                    full.add(a, b, w * va * vb);
                }
            }
        }
        let shear: Vec<(usize, f64)> = rows[1]
            .iter()
            .chain(&rows[2])
            .map(|&(d, v)| (d, v / std::f64::consts::SQRT_2))
            .collect();
        for r in [&rows[0], &rows[3], &shear] {
            for &(a, va) in r.iter() {
                for &(b, vb) in r.iter() {
                    sym.add(a, b, w * va * vb);
                }
            }
        }
    }
    (full, sym, curl)
}

fn korn_solve(
    full: &Dense,
    sym: &Dense,
    mut constraints: Vec<Vec<f64>>,
) -> Result<(f64, Vec<f64>)> {
    constraints.retain(|c| c.iter().any(|x| *x != 0.0));
    let (vals, vecs) = generalized_sym_eig(sym, full, &constraints)?;
    let lam = vals[0];
    if !(lam > 0.0) {
        return Err(Error::Numerical(format!("Korn quotient has nonpositive minimum {lam:e}")));
    }
    Ok((1.0 / lam.sqrt(), vecs[0].clone()))
}

/// `C_K = (min ‖sym(∇+∇Φ)u‖² / ‖(∇+∇Φ)u‖²)^{−1/2}` with bilinear finite elements for `w = e^Φu`.
pub fn korn_constant(dom: &WeightedDomain, constraint: KornConstraint) -> Result<InequalityReport> {
    if dom.dim != 2 {
        return invalid("Korn constants are computed on rectangles");
    }
    let (n0, n1) = (dom.n[0], dom.n[1]);
    let nodes = (n0 + 1) * (n1 + 1);
    let ndof = 2 * nodes;
    if ndof > 2 * DENSE_LIMIT {
        return Err(Error::Capacity(format!("{ndof} Korn unknowns exceed the dense limit")));
    }
    let node = |i: usize, j: usize| i * (n1 + 1) + j;
    let (hx, hy) = (dom.h[0], dom.h[1]);
    let g = 0.5 / 3f64.sqrt();
    let mut qps: Vec<QpRow> = Vec::with_capacity(4 * n0 * n1);
    let mut means = [vec![0.0; ndof], vec![0.0; ndof]];
    for i in 0..n0 {
        for j in 0..n1 {
            for (xi, eta) in [(0.5 - g, 0.5 - g), (0.5 + g, 0.5 - g), (0.5 - g, 0.5 + g), (0.5 + g, 0.5 + g)] {
                let x = [dom.lo[0] + (i as f64 + xi) * hx, dom.lo[1] + (j as f64 + eta) * hy];
                let w = dom.exp_phi(&x, -1.0) * hx * hy / 4.0;
                let loc = [
                    (node(i, j), (1.0 - xi) * (1.0 - eta), -(1.0 - eta) / hx, -(1.0 - xi) / hy),
                    (node(i + 1, j), xi * (1.0 - eta), (1.0 - eta) / hx, -xi / hy),
                    (node(i, j + 1), (1.0 - xi) * eta, -eta / hx, (1.0 - xi) / hy),
                    (node(i + 1, j + 1), xi * eta, eta / hx, xi / hy),
                ];
                let mut ents = Vec::with_capacity(8);
                for (nd, val, gx, gy) in loc {
                    for comp in 0..2 {
                        ents.push((2 * nd + comp, comp, gx, gy));
                        means[comp][2 * nd + comp] += w * val;
                    }
                }
                qps.push((w, ents));
            }
        }
    }
    let (full, sym, curl) = korn_forms(ndof, &qps);
    let constraints = match constraint {
        KornConstraint::Averages => vec![curl, means[0].clone(), means[1].clone()],
        KornConstraint::Boundary => {
            let mut c = Vec::new();
            for i in 0..=n0 {
                for j in 0..=n1 {
                    let mut unit = |d: usize| {
                        let mut v = vec![0.0; ndof];
                        v[d] = 1.0;
                        c.push(v);
                    };
                    if i == 0 || i == n0 {
                        unit(2 * node(i, j));
                    }
                    if j == 0 || j == n1 {
                        unit(2 * node(i, j) + 1);
                    }
                }
            }
            c
        }
    };
    let (ck, witness) = korn_solve(&full, &sym, constraints)?;
    let mut details = BTreeMap::new();
    details.insert("unknowns".into(), ndof as f64);
    Ok(InequalityReport { name: "korn".into(), constant: ck, witness, resolution: dom.n, oracle: None, details })
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    let (mut d0, mut d1) = (0.0, 1.0);
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
        let d2 = d0 + (2.0 * kf + 1.0) * p1;
        p0 = p1;
        p1 = p2;
        d0 = d1;
        d1 = d2;
    }
    (p1, d1)
}

/// Rayleigh–Ritz Korn constant on tensor Legendre polynomials of total degree ≤ `degree`.
pub fn korn_polynomial_oracle(dom: &WeightedDomain, degree: usize, constraint: KornConstraint) -> Result<f64> {
    if dom.dim != 2 {
        return invalid("Korn constants are computed on rectangles");
    }
    let pairs: Vec<(usize, usize)> = (0..=degree).flat_map(|a| (0..=degree - a).map(move |b| (a, b))).collect();
    let nb = pairs.len();
    let ndof = 2 * nb;
    let (gx, gw) = gauss_legendre(degree + 8);
    let (lx, ly) = (dom.hi[0] - dom.lo[0], dom.hi[1] - dom.lo[1]);
    let mut qps = Vec::with_capacity(gx.len() * gx.len());
    let mut means = [vec![0.0; ndof], vec![0.0; ndof]];
    for (a, wa) in gx.iter().zip(&gw) {
        for (b, wb) in gx.iter().zip(&gw) {
            let x = [dom.lo[0] + 0.5 * (a + 1.0) * lx, dom.lo[1] + 0.5 * (b + 1.0) * ly];
            let w = wa * wb * 0.25 * lx * ly * dom.exp_phi(&x, -1.0);
            let mut ents = Vec::with_capacity(2 * nb);
            for (k, (p, q)) in pairs.iter().enumerate() {
                let (pa, da) = legendre(*p, *a);
                let (pb, db) = legendre(*q, *b);
                let (val, vx, vy) = (pa * pb, da * pb * 2.0 / lx, pa * db * 2.0 / ly);
                for comp in 0..2 {
                    let (f, fx, fy) = match constraint {
                        KornConstraint::Averages => (val, vx, vy),
                        KornConstraint::Boundary => {
                            // multiply by a bubble vanishing on the walls normal to `comp`
                            let (s, ds) = if comp == 0 { ((1.0 - a * a), -2.0 * a * 2.0 / lx) } else { ((1.0 - b * b), -2.0 * b * 2.0 / ly) };
                            if comp == 0 {
                                (val * s, vx * s + val * ds, vy * s)
                            } else {
                                (val * s, vx * s, vy * s + val * ds)
                            }
                        }
                    };
                    ents.push((2 * k + comp, comp, fx, fy));
                    means[comp][2 * k + comp] += w * f;
                }
            }
            qps.push((w, ents));
        }
    }
    let (full, sym, curl) = korn_forms(ndof, &qps);
    let constraints = match constraint {
        KornConstraint::Averages => vec![curl, means[0].clone(), means[1].clone()],
        KornConstraint::Boundary => vec![],
    };
    // constants are absent from the bubble space; in the average mode they are removed above
    Ok(korn_solve(&full, &sym, constraints)?.0)
}

/// Stokes solution on the MAC grid.
#[derive(Clone, Debug, Serialize)]
pub struct StokesSolution {
    #[serde(skip)]
    pub u: FaceField,
    #[serde(skip)]
    pub p: Vec<f64>,
    /// `max |∇·u|` over cells.
    pub div_max: f64,
    /// `∫p`.
    pub p_mean: f64,
    pub c_s: f64,
    pub outer_iterations: usize,
}

/// Solve `−∇·(∇+∇Φ)u + (∇+∇Φ)p = s`, `∇·u = 0`, `u = 0` on `∂U`, `∫p = 0` by conjugate
/// gradients on the pressure Schur complement (unknowns `ũ = e^Φu`).
pub fn stokes_solve(dom: &WeightedDomain, s: impl Fn(&[f64; 2]) -> [f64; 2] + Sync) -> Result<StokesSolution> {
    if dom.dim != 2 {
        return invalid("the Stokes solver works on rectangles");
    }
    let dofs = FaceDofs::new(dom);
    let a = vector_laplacian(dom, &dofs, &|x| dom.exp_phi(x, -1.0));
    let emf = face_table(dom, |x| dom.exp_phi(x, -1.0));
    let b = weighted_div(dom, &dofs, &emf);
    let vol = dom.vol();
    let mut rhs = vec![0.0; dofs.len()];
    for (k, d) in dofs.x.iter().enumerate() {
        rhs[k] = s(&dom.xface_pos(*d))[0] * vol;
    }
    for (k, d) in dofs.y.iter().enumerate() {
        rhs[dofs.x.len() + k] = s(&dom.yface_pos(*d))[1] * vol;
    }
    let s_norm = {
        let mut acc = 0.0;
        for (k, d) in dofs.x.iter().enumerate() {
            acc += (rhs[k] / vol).powi(2) * dom.exp_phi(&dom.xface_pos(*d), 1.0);
        }
        for (k, d) in dofs.y.iter().enumerate() {
            acc += (rhs[dofs.x.len() + k] / vol).powi(2) * dom.exp_phi(&dom.yface_pos(*d), 1.0);
        }
        (acc * vol).sqrt()
    };
    let n = dofs.len();
    let inner_tol = 1e-13;
    let solve_a = |r: &[f64]| -> Result<Vec<f64>> {
        Ok(conjugate_gradient(|u| a.matvec(u), r, inner_tol, 20 * n + 100, |_| {})?.x)
    };
    let project = |q: &mut [f64]| {
        let m = q.iter().sum::<f64>() / q.len() as f64;
        q.iter_mut().for_each(|x| *x -= m);
    };
    let a_inv_f = solve_a(&rhs)?;
    let g = b.matvec(&a_inv_f);
    let err = std::cell::RefCell::new(None);
    let schur = |q: &[f64]| -> Vec<f64> {
        match solve_a(&b.transpose_matvec(q)) {
            Ok(v) => b.matvec(&v),
            Err(e) => {
                *err.borrow_mut() = Some(e);
                vec![0.0; q.len()]
            }
        }
    };
    let outer = conjugate_gradient(schur, &g, 1e-11, 4 * dom.cells() + 100, project);
    if let Some(e) = err.into_inner() {
        return Err(e);
    }
    let outer = outer?;
    let q = outer.x;
    let bt_q = b.transpose_matvec(&q);
    let ut = solve_a(&rhs.iter().zip(&bt_q).map(|(f, c)| f - c).collect::<Vec<_>>())?;
    let div = b.matvec(&ut);
    let div_max = div.iter().map(|x| x.abs() / vol).fold(0.0, f64::max);
    // p̃ = e^Φ p = −q + κ with ∫p = 0
    let ew: Vec<f64> = dom.phi.iter().map(|p| (-p).exp()).collect();
    let kappa = q.iter().zip(&ew).map(|(a, e)| a * e).sum::<f64>() / ew.iter().sum::<f64>();
    let p: Vec<f64> = q.iter().zip(&ew).map(|(a, e)| -(a - kappa) * e).collect();
    let mut uf = dofs.to_field(dom, &ut);
    for (k, v) in uf.x.iter_mut().enumerate() {
        *v *= emf.x[k];
    }
    for (k, v) in uf.y.iter_mut().enumerate() {
        *v *= emf.y[k];
    }
    // ‖u − (∫u)e^{−Φ}‖_{⌊∇Φ⌉²e^Φ} + ‖(∇+∇Φ)u‖_{e^Φ} + ‖p‖_{e^Φ}
    let int_u = [uf.x.iter().sum::<f64>() * vol, uf.y.iter().sum::<f64>() * vol];
    let mut centered = uf.clone();
    for (k, v) in centered.x.iter_mut().enumerate() {
        *v -= int_u[0] * emf.x[k];
    }
    for (k, v) in centered.y.iter_mut().enumerate() {
        *v -= int_u[1] * emf.y[k];
    }
    let du = a.matvec(&ut).iter().zip(&ut).map(|(x, y)| x * y).sum::<f64>().max(0.0).sqrt();
    let pn = dom.norm_exp(&p);
    let c_s = if s_norm > 0.0 { (dom.norm_face_weighted(&centered) + du + pn) / s_norm } else { 0.0 };
    Ok(StokesSolution {
        u: uf,
        p_mean: dom.integral(&p),
        p,
        div_max,
        c_s,
        outer_iterations: outer.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square(n: usize, potential: Potential) -> WeightedDomain {
        WeightedDomain::new(BoxDomain::Rectangle { lo: [0.0, 0.0], hi: [1.0, 1.0] }, [n, n], potential).unwrap()
    }

    #[test]
    fn l2_route_matches_antiderivative_in_1d() {
        let dom = WeightedDomain::new(BoxDomain::Interval { a: 0.0, b: 1.0 }, [64, 1], Potential::Zero).unwrap();
        let g = dom.cell_average(|x| (2.0 * PI * x[0]).sin());
        let f = solve_divergence_l2(&dom, &g).unwrap();
        for (k, v) in f.x.iter().enumerate() {
            let x = dom.xface_pos(k)[0];
            assert!((v - (1.0 - (2.0 * PI * x).cos()) / (2.0 * PI)).abs() < 1e-10);
        }
    }

    #[test]
    fn bogovskii_1d_is_antiderivative() {
        let dom = WeightedDomain::new(BoxDomain::Interval { a: 0.0, b: 1.0 }, [50, 1], Potential::Zero).unwrap();
        let g = dom.cell_average(|x| (2.0 * PI * x[0]).sin());
        let ball = BumpBall { center: [0.5, 0.0], radius: 0.2 };
        let f = bogovskii_local(&dom, &g, &ball, None, 8).unwrap();
        for (k, v) in f.x.iter().enumerate() {
            let x = dom.xface_pos(k)[0];
            assert!((v - (1.0 - (2.0 * PI * x).cos()) / (2.0 * PI)).abs() < 1e-10, "{k}: {v}");
        }
    }

    #[test]
    fn radial_bump_gives_radial_field() {
        let dom = WeightedDomain::new(BoxDomain::Rectangle { lo: [-1.0, -1.0], hi: [1.0, 1.0] }, [48, 48], Potential::Zero)
            .unwrap();
        // radial zero-mean data
        let prof = |r: f64| if r < 0.8 { (PI * r / 0.8).cos() } else { 0.0 };
        let gfun = |x: &[f64; 2]| prof(x[0].hypot(x[1]));
        let mut g = dom.cell_average(gfun);
        let m = dom.integral(&g);
        let hump = |r: f64| (1.0 - r * r / 0.25).max(0.0).powi(2);
        let disc = dom.cell_average(|x| hump(x[0].hypot(x[1])));
        let dm = dom.integral(&disc);
        g.iter_mut().zip(&disc).for_each(|(a, d)| *a -= m / dm * d);
        let ball = BumpBall { center: [0.0, 0.0], radius: 0.25 };
        let f = bogovskii_local(&dom, &g, &ball, None, 32).unwrap();
        // radial ODE: F_r(r) = (1/r)∫₀^r g(s) s ds, with the cell data integrated radially
        let radial = |r: f64| {
            let n = 4000;
            let mut acc = 0.0;
            for k in 0..n {
                let s = (k as f64 + 0.5) * r / n as f64;
                let gv = prof(s) - m / dm * hump(s);
                acc += gv * s * r / n as f64;
            }
            acc / r
        };
        let mut err = 0.0f64;
        let mut scale = 0.0f64;
        for k in 0..dom.n_xfaces() {
            let x = dom.xface_pos(k);
            let r = x[0].hypot(x[1]);
            if r > 0.05 && r < 0.95 {
                let e = radial(r) * x[0] / r;
                err = err.max((f.x[k] - e).abs());
                scale = scale.max(e.abs());
            }
        }
        assert!(err < 0.05 * scale, "err {err}, scale {scale}");
    }

    #[test]
    fn h1_route_on_square() {
        let dom = unit_square(24, Potential::Zero);
        let g = dom.cell_average(|x| (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).sin());
        let sol = solve_divergence_h1(&dom, &g, &DivergenceOptions::default()).unwrap();
        assert!(sol.residual < 1e-6, "{sol:?}");
        assert_eq!(sol.boundary_max, 0.0);
        assert!(sol.residual_raw < 0.2, "{sol:?}");
        let zero = solve_divergence_h1(&dom, &vec![0.0; dom.cells()], &DivergenceOptions::default()).unwrap();
        assert!(zero.field.x.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn covering_for_quadratic_weight() {
        let dom = WeightedDomain::new(
            BoxDomain::Rectangle { lo: [-4.0, -4.0], hi: [4.0, 4.0] },
            [64, 64],
            Potential::Harmonic { omega: 1.0 },
        )
        .unwrap();
        let cover = build_covering(&dom, None).unwrap();
        assert!(cover.partition_defect < 1e-12);
        assert!(cover.max_overlap <= 16, "{}", cover.max_overlap);
        let near = cover.balls.iter().filter(|b| b.center[0].hypot(b.center[1]) < 1.0).map(|b| b.radius).fold(0.0, f64::max);
        let far = cover.balls.iter().filter(|b| b.center[0].hypot(b.center[1]) > 3.0).map(|b| b.radius).fold(f64::INFINITY, f64::min);
        assert!(far < near);
        let flat = build_covering(&unit_square(16, Potential::Zero), None).unwrap();
        assert!(flat.balls.iter().all(|b| (b.radius - flat.balls[0].radius).abs() < 1e-12));
    }

    #[test]
    fn poincare_lions_is_one_in_flat_1d() {
        let dom = WeightedDomain::new(BoxDomain::Interval { a: 0.0, b: 1.0 }, [40, 1], Potential::Zero).unwrap();
        let r = poincare_lions_constant(&dom, 10, 1).unwrap();
        assert!((r.oracle.unwrap() - 1.0).abs() < 1e-8);
        assert!((r.details["random_max"] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn weighted_poincare_flat_is_pi_squared() {
        let dom = WeightedDomain::new(BoxDomain::Interval { a: 0.0, b: 1.0 }, [200, 1], Potential::Zero).unwrap();
        let r = weighted_poincare_check(&dom).unwrap();
        assert!((r.constant / (PI * PI) - 1.0).abs() < 0.03);
        assert_eq!(r.details["boundary_ok"], 1.0);
    }

    #[test]
    fn korn_matches_polynomial_oracle() {
        let dom = unit_square(12, Potential::Zero);
        let fem = korn_constant(&dom, KornConstraint::Averages).unwrap();
        let poly = korn_polynomial_oracle(&dom, 8, KornConstraint::Averages).unwrap();
        assert!(fem.constant >= 1.0);
        assert!((fem.constant / poly - 1.0).abs() < 0.1, "{} vs {poly}", fem.constant);
    }

    #[test]
    fn stokes_manufactured_solution() {
        let errs: Vec<f64> = [16usize, 32]
            .iter()
            .map(|&n| {
                let dom = unit_square(n, Potential::Zero);
                let u = |x: &[f64; 2]| {
                    let (sx, sy) = ((PI * x[0]).sin(), (PI * x[1]).sin());
                    let (s2x, s2y) = ((2.0 * PI * x[0]).sin(), (2.0 * PI * x[1]).sin());
                    [PI * sx * sx * s2y, -PI * s2x * sy * sy]
                };
                let src = |x: &[f64; 2]| {
                    let (a, b) = (x[0], x[1]);
                    let (sa, sb) = ((PI * a).sin(), (PI * b).sin());
                    let (ca, cb) = ((PI * a).cos(), (PI * b).cos());
                    let (s2a, s2b) = ((2.0 * PI * a).sin(), (2.0 * PI * b).sin());
                    let (c2a, c2b) = ((2.0 * PI * a).cos(), (2.0 * PI * b).cos());
                    let p3 = PI.powi(3);
                    let lap_u = 4.0 * p3 * sa * sa * s2b - 2.0 * p3 * c2a * s2b;
                    let lap_v = 2.0 * p3 * s2a * c2b - 4.0 * p3 * s2a * sb * sb;
                    [lap_u - PI * sa * cb, lap_v - PI * ca * sb]
                };
                let sol = stokes_solve(&dom, src).unwrap();
                assert!(sol.div_max < 1e-8, "div {}", sol.div_max);
                assert!(sol.p_mean.abs() < 1e-10);
                let mut e = 0.0f64;
                for k in 0..dom.n_xfaces() {
                    e = e.max((sol.u.x[k] - u(&dom.xface_pos(k))[0]).abs());
                }
                for k in 0..dom.n_yfaces() {
                    e = e.max((sol.u.y[k] - u(&dom.yface_pos(k))[1]).abs());
                }
                let mut ep = 0.0f64;
                for c in 0..dom.cells() {
                    let x = dom.center(c);
                    ep = ep.max((sol.p[c] - (PI * x[0]).cos() * (PI * x[1]).cos()).abs());
                }
                assert!(ep < 0.2, "pressure error {ep}");
                e
            })
            .collect();
        assert!(errs[1] < 0.6 * errs[0] && errs[1] < 0.05, "{errs:?}");
    }
}
