//! Commutator chain for the hypoelliptic model `∂ₜh + ℬh = −𝒜*𝒜h` on `ℝ × ℝ` with
//! `𝒜 = κ∂_v`, `ℬ = v∂_x − φ′∂_v`, `f_∞ = e^{−φ−v²/2}`, and the degeneracy scan of the
//! generator gap.

use crate::collision::CollisionOperator;
use crate::error::{invalid, Error, Result};
use crate::evolve::{assemble_generator, generator_spectral_gap, Model};
use crate::funineq::InequalityReport;
use crate::linalg::constrained_pencil;
use crate::linalg::Dense;
use crate::phase::{DegeneracyWeight, PhaseGrid, Potential, SpatialDomain, VelocitySpace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;

/// Truncated Taylor jet `(f, f′, f″, f‴)` of a function of one variable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

impl Jet {
    pub fn constant(c: f64) -> Self {
        Self { v: c, d1: 0.0, d2: 0.0, d3: 0.0 }
    }

    pub fn var(x: f64) -> Self {
        Self { v: x, d1: 1.0, d2: 0.0, d3: 0.0 }
    }

    /// Derivative jet; the third derivative is lost.
    pub fn deriv(&self) -> Self {
        Self { v: self.d1, d1: self.d2, d2: self.d3, d3: f64::NAN }
    }

    pub fn add(&self, o: &Jet) -> Self {
        Self { v: self.v + o.v, d1: self.d1 + o.d1, d2: self.d2 + o.d2, d3: self.d3 + o.d3 }
    }

    pub fn sub(&self, o: &Jet) -> Self {
        self.add(&o.scale(-1.0))
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { v: c * self.v, d1: c * self.d1, d2: c * self.d2, d3: c * self.d3 }
    }

    pub fn mul(&self, o: &Jet) -> Self {
        Self {
            v: self.v * o.v,
            d1: self.d1 * o.v + self.v * o.d1,
            d2: self.d2 * o.v + 2.0 * self.d1 * o.d1 + self.v * o.d2,
            d3: self.d3 * o.v + 3.0 * self.d2 * o.d1 + 3.0 * self.d1 * o.d2 + self.v * o.d3,
        }
    }

    /// `h ∘ self` given `h, h′, h″, h‴` at `self.v`.
    pub fn compose(&self, h: [f64; 4]) -> Self {
        let (g1, g2, g3) = (self.d1, self.d2, self.d3);
        Self {
            v: h[0],
            d1: h[1] * g1,
            d2: h[2] * g1 * g1 + h[1] * g2,
            d3: h[3] * g1 * g1 * g1 + 3.0 * h[2] * g1 * g2 + h[1] * g3,
        }
    }

    pub fn recip(&self) -> Self {
        let y = self.v;
        self.compose([1.0 / y, -1.0 / (y * y), 2.0 / (y * y * y), -6.0 / (y * y * y * y)])
    }

    pub fn div(&self, o: &Jet) -> Self {
        self.mul(&o.recip())
    }

    pub fn exp(&self) -> Self {
        let e = self.v.exp();
        self.compose([e; 4])
    }

    pub fn tanh(&self) -> Self {
        let t = self.v.tanh();
        let s = 1.0 - t * t;
        self.compose([t, s, -2.0 * t * s, -2.0 * s * (1.0 - 3.0 * t * t)])
    }

    pub fn atan(&self) -> Self {
        let y = self.v;
        let q = 1.0 + y * y;
        self.compose([y.atan(), 1.0 / q, -2.0 * y / (q * q), (6.0 * y * y - 2.0) / (q * q * q)])
    }
}

/// Profile `κ` with `σ = κ²`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kappa {
    Tanh,
    Arctan,
    /// `tanh³`, whose derivative vanishes at the origin.
    TanhCubed,
}

impl Kappa {
    pub fn jet(&self, x: f64) -> Jet {
        let j = Jet::var(x);
        match self {
            Kappa::Tanh => j.tanh(),
            Kappa::Arctan => j.atan(),
            Kappa::TanhCubed => {
                let t = j.tanh();
                t.mul(&t).mul(&t)
            }
        }
    }
}

/// Smooth cutoff `γ(y)`: 1 for `|y| ≤ 1`, 0 for `|y| ≥ 2`, jets in `x` through `y = y(x)`.
fn cutoff(y: &Jet) -> Jet {
    let s = y.v.abs();
    if s <= 1.0 {
        return Jet::constant(1.0);
    }
    if s >= 2.0 {
        return Jet::constant(0.0);
    }
    let t = Jet::constant(2.0).sub(&y.scale(y.v.signum()));
    let u = Jet::constant(1.0).sub(&t);
    let e = |z: &Jet| z.recip().scale(-1.0).exp();
    let (et, eu) = (e(&t), e(&u));
    et.div(&et.add(&eu))
}

/// Confining potential `φ = ω²x²/2 + q x⁴/4`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Confinement {
    pub omega: f64,
    #[serde(default)]
    pub quartic: f64,
}

impl Confinement {
    pub fn jet(&self, x: f64) -> Jet {
        let (w2, q) = (self.omega * self.omega, self.quartic);
        Jet {
            v: 0.5 * w2 * x * x + 0.25 * q * x.powi(4),
            d1: w2 * x + q * x.powi(3),
            d2: w2 + 3.0 * q * x * x,
            d3: 6.0 * q * x,
        }
    }
}

/// Jets at a point `x`: `κ`, `γ_δ`, `w = γ_δκ′ + 1 − γ_δ`, `κ̃ = κ/w`, `φ`.
#[derive(Clone, Copy, Debug)]
pub struct LocalJets {
    pub kappa: Jet,
    pub gamma: Jet,
    pub w: Jet,
    pub kt: Jet,
    pub phi: Jet,
}

/// Operators of the chain: `C₀ = 𝒜`, `C₁ = κ̃∂_x − v∂_v`, `C₂ = −v∂_x − φ′∂_v`,
/// `C₃ = (φ″κ̃ − φ′)∂_x`, plus `𝒜* = κv − 𝒜` and `ℬ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Op {
    A,
    AStar,
    B,
    C(u8),
}

/// `a∂_x + b∂_v + c` coefficient values at a point.
pub type Coeffs = [f64; 3];

/// Value and partials `(·, ∂_x, ∂_v)`.
type J1 = [f64; 3];

#[derive(Clone, Debug, Serialize)]
pub struct CommutatorSystem {
    pub kappa: Kappa,
    pub confinement: Confinement,
    pub delta: f64,
    /// Half-width of the `(x, v)` box.
    pub half_width: f64,
    pub w_range: (f64, f64),
    pub kt_prime_min: f64,
    pub kt_sup: f64,
    /// `sup (1+|x|)|κ̃′|`.
    pub kt_prime_weighted_sup: f64,
    /// `sup |x κ′|`.
    pub x_kappa_prime_sup: f64,
    /// `sup |κ‴|`.
    pub kappa_third_sup: f64,
    pub z1_range: (f64, f64),
    pub z2_range: (f64, f64),
}

impl CommutatorSystem {
    pub fn local(&self, x: f64) -> LocalJets {
        local_jets(self.kappa, &self.confinement, self.delta, x)
    }

    /// Coefficients of `op` with their partial derivatives.
    fn coeff_jets(&self, op: Op, l: &LocalJets, v: f64) -> [J1; 3] {
        let (k, kt, p) = (&l.kappa, &l.kt, &l.phi);
        let zero = [0.0; 3];
        match op {
            Op::A | Op::C(0) => [zero, [k.v, k.d1, 0.0], zero],
            Op::AStar => [zero, [-k.v, -k.d1, 0.0], [k.v * v, k.d1 * v, k.v]],
            Op::B => [[v, 0.0, 1.0], [-p.d1, -p.d2, 0.0], zero],
            Op::C(1) => [[kt.v, kt.d1, 0.0], [-v, 0.0, -1.0], zero],
            Op::C(2) => [[-v, 0.0, -1.0], [-p.d1, -p.d2, 0.0], zero],
            Op::C(3) => [[p.d2 * kt.v - p.d1, p.d3 * kt.v + p.d2 * kt.d1 - p.d2, 0.0], zero, zero],
            Op::C(_) => [zero, zero, zero],
        }
    }

    pub fn coeffs(&self, op: Op, l: &LocalJets, v: f64) -> Coeffs {
        let c = self.coeff_jets(op, l, v);
        [c[0][0], c[1][0], c[2][0]]
    }

    /// `[P, Q]f = P(Qf) − Q(Pf)` at `(x, v)` from a 2-jet
    /// `f = (f, f_x, f_v, f_xx, f_xv, f_vv)`.
    pub fn commutator_exact(&self, p: Op, q: Op, x: f64, v: f64, f: &[f64; 6]) -> f64 {
        let l = self.local(x);
        let once = |op: Op| -> J1 {
            let [a, b, c] = self.coeff_jets(op, &l, v);
            [
                a[0] * f[1] + b[0] * f[2] + c[0] * f[0],
                a[1] * f[1] + a[0] * f[3] + b[1] * f[2] + b[0] * f[4] + c[1] * f[0] + c[0] * f[1],
                a[2] * f[1] + a[0] * f[4] + b[2] * f[2] + b[0] * f[5] + c[2] * f[0] + c[0] * f[2],
            ]
        };
        let outer = |op: Op, g: &J1| {
            let [a, b, c] = self.coeffs(op, &l, v);
            a * g[1] + b * g[2] + c * g[0]
        };
        outer(p, &once(q)) - outer(q, &once(p))
    }
}

fn local_jets(kappa: Kappa, conf: &Confinement, delta: f64, x: f64) -> LocalJets {
    let k = kappa.jet(x);
    let gamma = cutoff(&Jet::var(x).scale(1.0 / delta));
    let kp = k.deriv();
    let w = gamma.mul(&kp).add(&Jet::constant(1.0)).sub(&gamma);
    let kt = k.div(&w);
    LocalJets { kappa: k, gamma, w, kt, phi: conf.jet(x) }
}

/// Check the profile constraints and halve `δ` from `delta0` until `1/2 ≤ w ≤ 3/2` and
/// `κ̃′ ≥ −1/2` on the grid of `[−L, L]`.
pub fn build_system(kappa: Kappa, confinement: Confinement, delta0: f64) -> Result<CommutatorSystem> {
    const L: f64 = 8.0;
    const N: usize = 3200;
    if !(delta0 > 0.0 && delta0.is_finite()) || !(confinement.omega > 0.0) || confinement.quartic < 0.0 {
        return invalid("need δ > 0, ω > 0 and a nonnegative quartic coefficient");
    }
    let xs: Vec<f64> = (0..=N).map(|i| -L + 2.0 * L * i as f64 / N as f64).collect();
    let k0 = kappa.jet(0.0);
    if (k0.d1 - 1.0).abs() > 1e-12 {
        return invalid(format!("κ′(0) must equal 1 (got {:.3e})", k0.d1));
    }
    let ks: Vec<Jet> = xs.iter().map(|x| kappa.jet(*x)).collect();
    if ks.iter().any(|k| !(k.v.is_finite() && k.d1.is_finite() && k.d2.is_finite() && k.d3.is_finite())) {
        return Err(Error::Numerical("κ or one of its first three derivatives is not finite".into()));
    }
    let kp_min = ks.iter().map(|k| k.d1).fold(f64::INFINITY, f64::min);
    if kp_min < -0.25 {
        return invalid(format!("κ′ must be ≥ −1/4 (min {kp_min:.3})"));
    }
    let away = xs.iter().zip(&ks).filter(|(x, _)| x.abs() >= 0.5).map(|(_, k)| k.v.abs()).fold(f64::INFINITY, f64::min);
    if !(away > 1e-8) {
        return invalid("|κ| must stay away from zero outside a neighbourhood of the origin");
    }
    let x_kp = xs.iter().zip(&ks).map(|(x, k)| (x * k.d1).abs()).fold(0.0, f64::max);
    let k3 = ks.iter().map(|k| k.d3.abs()).fold(0.0, f64::max);
    let mut delta = delta0;
    for _ in 0..30 {
        let loc: Vec<LocalJets> = xs.iter().map(|x| local_jets(kappa, &confinement, delta, *x)).collect();
        let wmin = loc.iter().map(|l| l.w.v).fold(f64::INFINITY, f64::min);
        let wmax = loc.iter().map(|l| l.w.v).fold(f64::NEG_INFINITY, f64::max);
        let ktp_min = loc.iter().map(|l| l.kt.d1).fold(f64::INFINITY, f64::min);
        if wmin >= 0.5 && wmax <= 1.5 && ktp_min >= -0.5 {
            let kt_sup = loc.iter().map(|l| l.kt.v.abs()).fold(0.0, f64::max);
            let ktp_sup = loc.iter().map(|l| l.kt.d1.abs()).fold(0.0, f64::max);
            let ktpw = xs.iter().zip(&loc).map(|(x, l)| (1.0 + x.abs()) * l.kt.d1.abs()).fold(0.0, f64::max);
            let z2 = loc.iter().map(|l| 1.0 + l.kt.d1);
            let z2_range = z2.clone().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), z| (a.min(z), b.max(z)));
            if z2_range.0 < 0.5 || z2_range.1 > 1.0 + ktp_sup + 1e-12 {
                return Err(Error::Numerical("Z₂ leaves its band".into()));
            }
            return Ok(CommutatorSystem {
                kappa,
                confinement,
                delta,
                half_width: L,
                w_range: (wmin, wmax),
                kt_prime_min: ktp_min,
                kt_sup,
                kt_prime_weighted_sup: ktpw,
                x_kappa_prime_sup: x_kp,
                kappa_third_sup: k3,
                z1_range: (wmin, wmax),
                z2_range,
            });
        }
        delta *= 0.5;
    }
    invalid("no admissible δ found down to 2⁻³⁰ δ₀")
}

/// Chain identity `[C_j, ℬ] = Z_{j+1}C_{j+1} + R_{j+1}` or a bracket of the table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Family {
    Chain,
    Table,
}

/// An identity `[P, Q] = rhs` with the right side as explicit coefficients.
pub struct Identity {
    pub name: &'static str,
    pub family: Family,
    pub p: Op,
    pub q: Op,
    pub rhs: fn(&LocalJets, f64) -> Coeffs,
}

fn g3(l: &LocalJets) -> (f64, f64) {
    (l.phi.d2 * l.kt.v - l.phi.d1, l.phi.d3 * l.kt.v + l.phi.d2 * l.kt.d1 - l.phi.d2)
}

/// The four chain identities and the eight brackets with `𝒜` and `𝒜*`.
pub fn identities() -> Vec<Identity> {
    use Family::*;
    use Op::*;
    vec![
        Identity {
            name: "[C0,B] = Z1 C1 + R1",
            family: Chain,
            p: C(0),
            q: B,
            rhs: |l, v| {
                let r1 = (1.0 - l.gamma.v) * (1.0 - l.kappa.d1) * v;
                [l.w.v * l.kt.v, -l.w.v * v + r1, 0.0]
            },
        },
        Identity {
            name: "[C1,B] = Z2 C2 + R2",
            family: Chain,
            p: C(1),
            q: B,
            rhs: |l, v| {
                let z2 = 1.0 + l.kt.d1;
                let r2 = l.kt.d1 * l.phi.d1 - l.kt.v * l.phi.d2;
                [-z2 * v, -z2 * l.phi.d1 + r2, 0.0]
            },
        },
        Identity {
            name: "[C2,B] = 2 C3 + R3",
            family: Chain,
            p: C(2),
            q: B,
            rhs: |l, v| {
                let (g, _) = g3(l);
                let pp = l.phi.d2;
                [2.0 * g - 2.0 * pp * l.kt.v, 2.0 * pp * v, 0.0]
            },
        },
        Identity {
            name: "[C3,B] = R4",
            family: Chain,
            p: C(3),
            q: B,
            rhs: |l, v| {
                let (g, gp) = g3(l);
                [-v * gp, -g * l.phi.d2, 0.0]
            },
        },
        Identity { name: "[A,C0] = 0", family: Table, p: A, q: C(0), rhs: |_, _| [0.0; 3] },
        Identity {
            name: "[C0,A*] = kappa^2",
            family: Table,
            p: C(0),
            q: AStar,
            rhs: |l, _| [0.0, 0.0, l.kappa.v * l.kappa.v],
        },
        Identity {
            name: "[A,C1]",
            family: Table,
            p: A,
            q: C(1),
            rhs: |l, _| [0.0, -(l.kappa.v + l.kt.v * l.kappa.d1), 0.0],
        },
        Identity {
            name: "[C1,A*]",
            family: Table,
            p: C(1),
            q: AStar,
            rhs: |l, v| {
                let k = &l.kappa;
                [0.0, -(k.v + l.kt.v * k.d1), (l.kt.v * k.d1 - k.v) * v]
            },
        },
        Identity {
            name: "[A,C2]",
            family: Table,
            p: A,
            q: C(2),
            rhs: |l, v| [-l.kappa.v, v * l.kappa.d1, 0.0],
        },
        Identity {
            name: "[C2,A*]",
            family: Table,
            p: C(2),
            q: AStar,
            rhs: |l, v| {
                let k = &l.kappa;
                [-k.v, v * k.d1, -(v * v * k.d1 + l.phi.d1 * k.v)]
            },
        },
        Identity {
            name: "[A,C3]",
            family: Table,
            p: A,
            q: C(3),
            rhs: |l, _| [0.0, -g3(l).0 * l.kappa.d1, 0.0],
        },
        Identity {
            name: "[C3,A*]",
            family: Table,
            p: C(3),
            q: AStar,
            rhs: |l, v| {
                let g = g3(l).0;
                [0.0, -g * l.kappa.d1, g * l.kappa.d1 * v]
            },
        },
    ]
}

/// Smooth test function with an exact 2-jet.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunction {
    /// `e^{−x²−v²}`.
    Gaussian,
    /// `1 + 2x − v + x² − 3xv + v²/2`.
    Quadratic,
}

impl TestFunction {
    /// `(f, f_x, f_v, f_xx, f_xv, f_vv)`.
    pub fn jet(&self, x: f64, v: f64) -> [f64; 6] {
        match self {
            TestFunction::Gaussian => {
                let e = (-x * x - v * v).exp();
                [e, -2.0 * x * e, -2.0 * v * e, (4.0 * x * x - 2.0) * e, 4.0 * x * v * e, (4.0 * v * v - 2.0) * e]
            }
            TestFunction::Quadratic => {
                [1.0 + 2.0 * x - v + x * x - 3.0 * x * v + 0.5 * v * v, 2.0 + 2.0 * x - 3.0 * v, -1.0 - 3.0 * x + v, 2.0, -3.0, 1.0]
            }
        }
    }
}

/// Residuals of one identity.
#[derive(Clone, Debug, Serialize)]
pub struct IdentityResult {
    pub name: String,
    pub family: Family,
    /// `max |[P,Q]f − rhs f| / max |f|` with exact derivatives, over all test functions.
    pub exact_residual: f64,
    /// `(h, ‖[P,Q]f − rhs f‖/‖f‖)` with fourth-order differences on the Gaussian.
    pub fd: Vec<(f64, f64)>,
    /// `log₂` ratio of the two finest residuals.
    pub order: f64,
    pub pass: bool,
}

/// Residual table for all identities.
#[derive(Clone, Debug, Serialize)]
pub struct CommutatorReport {
    pub system: CommutatorSystem,
    pub identities: Vec<IdentityResult>,
    pub exact_tolerance: f64,
    pub min_order: f64,
    pub pass: bool,
}

impl CommutatorReport {
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "identity,family,exact_residual,h,fd_residual,order,pass")?;
        for r in &self.identities {
            for (h, e) in &r.fd {
                writeln!(w, "\"{}\",{:?},{:e},{h},{e:e},{:.4},{}", r.name, r.family, r.exact_residual, r.order, r.pass)?;
            }
        }
        Ok(())
    }
}

/// Grid of `[−L, L]²` with `n` intervals per axis.
struct FdGrid {
    n: usize,
    h: f64,
    l: f64,
}

impl FdGrid {
    fn coord(&self, i: usize) -> f64 {
        -self.l + i as f64 * self.h
    }

    fn deriv(&self, f: &[f64], axis: usize) -> Vec<f64> {
        let m = self.n + 1;
        let mut out = vec![f64::NAN; m * m];
        for i in 0..m {
            for j in 0..m {
                let k = if axis == 0 { i } else { j };
                if k < 2 || k + 2 > self.n {
                    continue;
                }
                let at = |d: isize| {
                    let (ii, jj) = if axis == 0 { ((i as isize + d) as usize, j) } else { (i, (j as isize + d) as usize) };
                    f[ii * m + jj]
                };
                out[i * m + j] = (-at(2) + 8.0 * at(1) - 8.0 * at(-1) + at(-2)) / (12.0 * self.h);
            }
        }
        out
    }

    fn apply(&self, sys: &CommutatorSystem, loc: &[LocalJets], op: Op, f: &[f64]) -> Vec<f64> {
        let m = self.n + 1;
        let (fx, fv) = (self.deriv(f, 0), self.deriv(f, 1));
        (0..m * m)
            .map(|k| {
                let [a, b, c] = sys.coeffs(op, &loc[k / m], self.coord(k % m));
                let mut r = c * f[k];
                if a != 0.0 {
                    r += a * fx[k];
                }
                if b != 0.0 {
                    r += b * fv[k];
                }
                r
            })
            .collect()
    }
}

/// Check every identity with exact jets on sample points and with fourth-order differences on
/// `[−L, L]²` for `n ∈ intervals`, measuring residuals on `[−L/2, L/2]²`.
pub fn verify_identities(sys: &CommutatorSystem, intervals: &[usize], seed: u64) -> Result<CommutatorReport> {
    if intervals.len() < 2 || intervals.iter().any(|n| *n < 16 || n % 4 != 0) {
        return invalid("need at least two resolutions, each a multiple of 4 and ≥ 16");
    }
    let exact_tolerance = 1e-10;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<(f64, f64)> = (0..200).map(|_| (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0))).collect();
    let ids = identities();
    let mut fd_tables = vec![Vec::new(); ids.len()];
    for &n in intervals {
        let g = FdGrid { n, h: 2.0 * sys.half_width / n as f64, l: sys.half_width };
        let m = n + 1;
        let loc: Vec<LocalJets> = (0..m).map(|i| sys.local(g.coord(i))).collect();
        let f: Vec<f64> = (0..m * m).map(|k| TestFunction::Gaussian.jet(g.coord(k / m), g.coord(k % m))[0]).collect();
        let inner = |k: usize| {
            let (i, j) = (k / m, k % m);
            i >= n / 4 && i <= 3 * n / 4 && j >= n / 4 && j <= 3 * n / 4
        };
        let fnorm: f64 = (0..m * m).filter(|k| inner(*k)).map(|k| f[k] * f[k]).sum::<f64>().sqrt();
        let res: Vec<f64> = ids
            .par_iter()
            .map(|id| {
                let pq = g.apply(sys, &loc, id.p, &g.apply(sys, &loc, id.q, &f));
                let qp = g.apply(sys, &loc, id.q, &g.apply(sys, &loc, id.p, &f));
                let (fx, fv) = (g.deriv(&f, 0), g.deriv(&f, 1));
                let mut acc = 0.0;
                for k in (0..m * m).filter(|k| inner(*k)) {
                    let [a, b, c] = (id.rhs)(&loc[k / m], g.coord(k % m));
                    let r = pq[k] - qp[k] - (a * fx[k] + b * fv[k] + c * f[k]);
                    acc += r * r;
                }
                acc.sqrt() / fnorm
            })
            .collect();
        for (t, r) in fd_tables.iter_mut().zip(res) {
            t.push((g.h, r));
        }
    }
    let mut results = Vec::with_capacity(ids.len());
    for (id, fd) in ids.iter().zip(fd_tables) {
        let mut exact: f64 = 0.0;
        for tf in [TestFunction::Quadratic, TestFunction::Gaussian] {
            let mut scale: f64 = 0.0;
            let mut worst: f64 = 0.0;
            for &(x, v) in &pts {
                let jf = tf.jet(x, v);
                let lhs = sys.commutator_exact(id.p, id.q, x, v, &jf);
                let [a, b, c] = (id.rhs)(&sys.local(x), v);
                worst = worst.max((lhs - (a * jf[1] + b * jf[2] + c * jf[0])).abs());
                scale = scale.max(jf[0].abs());
            }
            exact = exact.max(worst / scale);
        }
        let (h1, e1) = fd[fd.len() - 2];
        let (h2, e2) = fd[fd.len() - 1];
        // identically vanishing residuals (zero operators) converge trivially
        let order = if e1 < 1e-13 && e2 < 1e-13 { f64::INFINITY } else { (e1 / e2).ln() / (h1 / h2).ln() };
        results.push(IdentityResult {
            name: id.name.into(),
            family: id.family,
            exact_residual: exact,
            pass: exact <= exact_tolerance && order >= 2.0,
            fd,
            order,
        });
    }
    let min_order = results.iter().map(|r| r.order).fold(f64::INFINITY, f64::min);
    Ok(CommutatorReport {
        system: sys.clone(),
        pass: results.iter().all(|r| r.pass),
        identities: results,
        exact_tolerance,
        min_order,
    })
}

/// `|⟨ℬf, g⟩_{f_∞} + ⟨f, ℬg⟩_{f_∞}| / (‖ℬf‖‖g‖)` for the skew-split fourth-order ℬ on random
/// compactly supported pairs (worst over `pairs`).
pub fn transport_antisymmetry(conf: &Confinement, n: usize, pairs: usize, seed: u64) -> Result<f64> {
    if n < 16 {
        return invalid("grid too coarse");
    }
    let g = FdGrid { n, h: 16.0 / n as f64, l: 8.0 };
    let m = n + 1;
    let finf: Vec<f64> = (0..m * m)
        .map(|k| {
            let (x, v) = (g.coord(k / m), g.coord(k % m));
            (-conf.jet(x).v - 0.5 * v * v).exp()
        })
        .collect();
    let dphi: Vec<f64> = (0..m).map(|i| conf.jet(g.coord(i)).d1).collect();
    let naive = |f: &[f64]| -> Vec<f64> {
        let (fx, fv) = (g.deriv(f, 0), g.deriv(f, 1));
        (0..m * m).map(|k| g.coord(k % m) * fx[k] - dphi[k / m] * fv[k]).collect()
    };
    let skew = |f: &[f64]| -> Vec<f64> {
        let a = naive(f);
        let ff: Vec<f64> = f.iter().zip(&finf).map(|(x, e)| x * e).collect();
        let b = naive(&ff);
        a.iter().zip(b.iter().zip(&finf)).map(|(p, (q, e))| 0.5 * (p + q / e)).map(|x| if x.is_nan() { 0.0 } else { x }).collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let mut field = || -> Vec<f64> {
            let c: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            (0..m * m)
                .map(|k| {
                    let (x, v) = (g.coord(k / m), g.coord(k % m));
                    let bump = (1.0 - x * x / 16.0).max(0.0).powi(4) * (1.0 - v * v / 16.0).max(0.0).powi(4);
                    bump * (c[0] + c[1] * x + c[2] * v + c[3] * x * v + c[4] * x * x + c[5] * (x + 2.0 * v).sin())
                })
                .collect()
        };
        let (f, h) = (field(), field());
        let (bf, bh) = (skew(&f), skew(&h));
        let ip = |a: &[f64], b: &[f64]| a.iter().zip(b).zip(&finf).map(|((x, y), e)| x * y * e).sum::<f64>();
        let d = (ip(&bf, &h) + ip(&f, &bh)).abs() / (ip(&bf, &bf).sqrt() * ip(&h, &h).sqrt());
        worst = worst.max(d);
    }
    Ok(worst)
}

/// `inf ∫(x²+v²)|∇h|²f_∞ / ∫h²f_∞` over `∫h f_∞ = 0` on `[−L, L]²` with `n` cells per axis
/// and `f_∞ ∝ e^{−x²/2−v²/2}`.
pub fn weighted_poincare_2d_check(n: usize, half_width: f64, trials: usize, seed: u64) -> Result<InequalityReport> {
    if n < 4 || !(half_width > 0.0) {
        return invalid("need n ≥ 4 and a positive box");
    }
    let cells = n * n;
    if cells > crate::funineq::DENSE_LIMIT {
        return Err(Error::Capacity(format!("{cells} cells exceed the dense limit")));
    }
    let h = 2.0 * half_width / n as f64;
    let c = |i: usize| -half_width + (i as f64 + 0.5) * h;
    let finf = |x: f64, v: f64| (-0.5 * (x * x + v * v)).exp() / (2.0 * std::f64::consts::PI);
    let mut k = Dense::zeros(cells, cells);
    let mut edge = |a: usize, b: usize, x: f64, v: f64| {
        let w = (x * x + v * v) * finf(x, v);
        k.add(a, a, w);
        k.add(b, b, w);
        k.add(a, b, -w);
        k.add(b, a, -w);
    };
    for i in 0..n {
        for j in 0..n {
            if i + 1 < n {
                edge(i * n + j, (i + 1) * n + j, c(i) + 0.5 * h, c(j));
            }
            if j + 1 < n {
                edge(i * n + j, i * n + j + 1, c(i), c(j) + 0.5 * h);
            }
        }
    }
    let d: Vec<f64> = (0..cells).map(|q| finf(c(q / n), c(q % n)) * h * h).collect();
    let (vals, vecs) = constrained_pencil(&k, &d, &d)?;
    let lam = vals[0];
    if !(lam > 0.0) {
        return Err(Error::Numerical(format!("weighted quotient has nonpositive minimum {lam:e}")));
    }
    let quotient = |u: &[f64]| -> f64 {
        let m: f64 = u.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>() / d.iter().sum::<f64>();
        let u: Vec<f64> = u.iter().map(|a| a - m).collect();
        let ku = k.matvec(&u);
        u.iter().zip(&ku).map(|(a, b)| a * b).sum::<f64>() / u.iter().zip(&d).map(|(a, b)| a * a * b).sum::<f64>()
    };
    let hermite: Vec<f64> = (0..cells).map(|q| c(q / n)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rmin = f64::INFINITY;
    for _ in 0..trials {
        let u: Vec<f64> = (0..cells).map(|_| rng.gen_range(-1.0..1.0)).collect();
        rmin = rmin.min(quotient(&u));
    }
    let mut details = BTreeMap::new();
    details.insert("hermite_x_quotient".into(), quotient(&hermite));
    details.insert("random_min_quotient".into(), rmin);
    details.insert("trials".into(), trials as f64);
    Ok(InequalityReport {
        name: "weighted_poincare_2d".into(),
        constant: lam,
        witness: vecs[0].clone(),
        resolution: [n, n],
        oracle: None,
        details,
    })
}

/// Parameters of the degeneracy scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapScanConfig {
    /// Exponents `p` of `σ_p = min(1, |x|^{2p})`.
    pub exponents: Vec<f64>,
    /// `(N_x, N_v)` per resolution.
    pub resolutions: Vec<[usize; 2]>,
    pub half_width: f64,
    pub v_max: f64,
    pub omega: f64,
    /// Also compute the gap for `σ ≡ 1`.
    #[serde(default = "yes")]
    pub include_constant: bool,
}

fn yes() -> bool {
    true
}

/// One scan cell; `p = None` is `σ ≡ 1`.
#[derive(Clone, Debug, Serialize)]
pub struct GapCell {
    pub p: Option<f64>,
    pub nx: usize,
    pub nv: usize,
    pub gap: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GapScan {
    pub cells: Vec<GapCell>,
}

impl GapScan {
    pub fn gap(&self, p: Option<f64>, res: [usize; 2]) -> Option<f64> {
        self.cells.iter().find(|c| c.p == p && c.nx == res[0] && c.nv == res[1]).and_then(|c| c.gap)
    }

    /// Relative change of the gap between the two finest resolutions.
    pub fn variation(&self, p: Option<f64>, resolutions: &[[usize; 2]]) -> Option<f64> {
        let n = resolutions.len();
        if n < 2 {
            return None;
        }
        let a = self.gap(p, resolutions[n - 2])?;
        let b = self.gap(p, resolutions[n - 1])?;
        Some((a - b).abs() / b.abs().max(a.abs()))
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "p,nx,nv,gap,error")?;
        for c in &self.cells {
            let p = c.p.map_or("const".to_string(), |p| p.to_string());
            let g = c.gap.map_or(String::new(), |g| format!("{g:.10e}"));
            writeln!(w, "{p},{},{},{g},{}", c.nx, c.nv, c.error.clone().unwrap_or_default())?;
        }
        Ok(())
    }
}

/// Generator gap of the harmonic Fokker–Planck model on `[−L, L] × [−v_max, v_max]` with
/// reflecting walls and `σ_p = min(1, |x|^{2p})`.
pub fn degeneracy_gap(p: Option<f64>, nx: usize, nv: usize, cfg: &GapScanConfig) -> Result<f64> {
    let grid = PhaseGrid::new(
        SpatialDomain::Interval1D { a: -cfg.half_width, b: cfg.half_width },
        &[nx],
        VelocitySpace::TruncatedLine { v_max: cfg.v_max, n: nv },
        Potential::Harmonic { omega: cfg.omega },
    )?;
    let l = CollisionOperator::fokker_planck(&grid.vel)?;
    let sigma = match p {
        Some(p) => DegeneracyWeight::PowerLaw { p },
        None => DegeneracyWeight::Constant { value: 1.0 },
    };
    let model = Model::new(&grid, l, &sigma, Some(0.0))?;
    Ok(generator_spectral_gap(&assemble_generator(&model)?)?.gap)
}

/// Gaps for every `(p, resolution)` cell; failures are recorded per cell.
pub fn gap_vs_degeneracy(cfg: &GapScanConfig) -> Result<GapScan> {
    if cfg.exponents.iter().any(|p| !(*p > 0.0)) || cfg.resolutions.is_empty() {
        return invalid("exponents must be positive and at least one resolution is needed");
    }
    let mut jobs: Vec<(Option<f64>, [usize; 2])> = Vec::new();
    let mut ps: Vec<Option<f64>> = cfg.exponents.iter().map(|p| Some(*p)).collect();
    if cfg.include_constant {
        ps.push(None);
    }
    for p in &ps {
        for r in &cfg.resolutions {
            jobs.push((*p, *r));
        }
    }
    let cells = jobs
        .par_iter()
        .map(|(p, r)| match degeneracy_gap(*p, r[0], r[1], cfg) {
            Ok(g) => GapCell { p: *p, nx: r[0], nv: r[1], gap: Some(g), error: None },
            Err(e) => GapCell { p: *p, nx: r[0], nv: r[1], gap: None, error: Some(e.to_string()) },
        })
        .collect();
    Ok(GapScan { cells })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harmonic() -> Confinement {
        Confinement { omega: 1.0, quartic: 0.0 }
    }

    #[test]
    fn jet_arithmetic_matches_closed_forms() {
        let x = 0.37;
        let t = Jet::var(x).tanh();
        let s = 1.0 / x.cosh().powi(2);
        assert!((t.d1 - s).abs() < 1e-14);
        assert!((t.d2 + 2.0 * x.tanh() * s).abs() < 1e-14);
        let r = Jet::var(x).mul(&Jet::var(x)).recip();
        assert!((r.d3 + 24.0 / x.powi(5)).abs() < 1e-9);
    }

    #[test]
    fn tanh_is_admissible_and_flat_profile_rejected() {
        let sys = build_system(Kappa::Tanh, harmonic(), 1.0).unwrap();
        assert!(sys.w_range.0 >= 0.5 && sys.w_range.1 <= 1.5);
        assert!(sys.kt_prime_min >= -0.5);
        assert_eq!(sys.delta, 0.25);
        assert!(matches!(build_system(Kappa::TanhCubed, harmonic(), 1.0), Err(Error::Invalid(_))));
    }

    #[test]
    fn identities_hold() {
        let sys = build_system(Kappa::Tanh, Confinement { omega: 1.0, quartic: 0.1 }, 1.0).unwrap();
        let rep = verify_identities(&sys, &[256, 512, 1024, 2048], 3).unwrap();
        for r in &rep.identities {
            assert!(r.exact_residual < 1e-10, "{} exact {}", r.name, r.exact_residual);
            assert!(r.order >= 2.0, "{} order {} {:?} delta {}", r.name, r.order, r.fd, sys.delta);
        }
    }

    #[test]
    fn transport_is_skew() {
        assert!(transport_antisymmetry(&harmonic(), 64, 5, 1).unwrap() < 1e-10);
    }

    #[test]
    fn two_dimensional_weighted_poincare() {
        let r = weighted_poincare_2d_check(24, 6.0, 20, 2).unwrap();
        assert!(r.constant > 0.0);
        assert!(r.details["random_min_quotient"] >= r.constant * (1.0 - 1e-9));
        assert!((r.details["hermite_x_quotient"] - 2.0).abs() < 0.1);
    }
}
