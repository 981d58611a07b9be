//! Time evolution of `∂_t f + 𝒯f = σℒf` by operator splitting, dissipation
//! bookkeeping, decay fits, certified rates and generator spectra.

use crate::collision::CollisionOperator;
use crate::error::{invalid, Error, Result};
use crate::linalg::{eigenvalues, expm, inverse, line_fit, Csr, Dense};
use crate::phase::{build_equilibrium, DegeneracyWeight, Field, PhaseGrid};
use crate::transport::{BoundaryOperator, TransportScheme, TransportStepper};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

/// Largest generator handled by the dense eigensolver.
pub const DENSE_CAP: usize = 5000;

/// Splitting order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Splitting {
    Lie,
    #[default]
    Strang,
}

/// Collision substep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionSubstep {
    /// `exp(σ dt ℒ)`.
    #[default]
    Exact,
    /// `(I − σdtℒ/2)⁻¹(I + σdtℒ/2)`.
    CrankNicolson,
}

/// Time stepping parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub t_final: f64,
    #[serde(default)]
    pub splitting: Splitting,
    #[serde(default)]
    pub collision_substep: CollisionSubstep,
    /// Record every `stride` steps.
    #[serde(default = "one")]
    pub stride: usize,
    /// Fraction of the series, counted from the end, used for the rate fit.
    #[serde(default = "half")]
    pub fit_tail: f64,
    /// Horizon `T` of the decay criterion; defaults to `t_final`.
    #[serde(default)]
    pub eta_horizon: Option<f64>,
}

fn one() -> usize {
    1
}

fn half() -> f64 {
    0.5
}

impl EvolutionConfig {
    pub fn new(dt: f64, t_final: f64) -> Self {
        Self {
            dt,
            t_final,
            splitting: Splitting::Strang,
            collision_substep: CollisionSubstep::Exact,
            stride: 1,
            fit_tail: 0.5,
            eta_horizon: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return invalid("dt must be positive");
        }
        if !(self.t_final >= self.dt && self.t_final.is_finite()) {
            return invalid("T_final must be at least dt");
        }
        if self.stride == 0 {
            return invalid("record stride must be positive");
        }
        if !(self.fit_tail > 0.0 && self.fit_tail <= 1.0) {
            return invalid("fit tail fraction must lie in (0, 1]");
        }
        if let Some(t) = self.eta_horizon {
            if !(t >= self.dt && t <= self.t_final * (1.0 + 1e-12)) {
                return invalid("η horizon must lie in [dt, T_final]");
            }
        }
        Ok(())
    }

    fn steps(&self, horizon: f64) -> usize {
        (horizon / self.dt).round().max(1.0) as usize
    }
}

/// Full kinetic model on a phase grid.
#[derive(Clone, Debug)]
pub struct Model {
    pub grid: Arc<PhaseGrid>,
    pub collision: CollisionOperator,
    /// σ at cell centres.
    pub sigma: Vec<f64>,
    pub transport: TransportScheme,
}

impl Model {
    /// `alpha = None` means specular walls (or no walls on a torus).
    pub fn new(
        grid: &Arc<PhaseGrid>,
        collision: CollisionOperator,
        sigma: &DegeneracyWeight,
        alpha: Option<f64>,
    ) -> Result<Self> {
        let s = sigma.sample(&grid.space)?;
        Self::with_sigma(grid, collision, s, alpha)
    }

    pub fn with_sigma(
        grid: &Arc<PhaseGrid>,
        collision: CollisionOperator,
        sigma: Vec<f64>,
        alpha: Option<f64>,
    ) -> Result<Self> {
        if collision.nv() != grid.nv()
            || collision.vel.nodes.iter().zip(&grid.vel.nodes).any(|(a, b)| a != b)
        {
            return Err(Error::GridMismatch("collision operator velocities differ from the phase grid".into()));
        }
        if sigma.len() != grid.nx() {
            return Err(Error::GridMismatch(format!("{} σ values for {} cells", sigma.len(), grid.nx())));
        }
        if sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return invalid("σ must be finite and nonnegative");
        }
        let boundary = match alpha {
            Some(a) if !grid.boundary.is_empty() => Some(BoundaryOperator::uniform(grid, a)?),
            _ => None,
        };
        let transport = TransportScheme::new(grid, boundary)?;
        Ok(Self { grid: grid.clone(), collision, sigma, transport })
    }
}

/// Precomputed substeps for a fixed `dt`.
pub struct Evolver<'a> {
    model: &'a Model,
    cfg: EvolutionConfig,
    first: TransportStepper<'a>,
    last: Option<TransportStepper<'a>>,
    props: Vec<Dense>,
    cell_prop: Vec<usize>,
}

impl<'a> Evolver<'a> {
    pub fn new(model: &'a Model, cfg: &EvolutionConfig) -> Result<Self> {
        cfg.validate()?;
        let (first, last) = match cfg.splitting {
            Splitting::Lie => (model.transport.stepper(cfg.dt)?, None),
            Splitting::Strang => {
                (model.transport.stepper(0.5 * cfg.dt)?, Some(model.transport.stepper(0.5 * cfg.dt)?))
            }
        };
        let mut cache: HashMap<u64, usize> = HashMap::new();
        let mut props = Vec::new();
        let mut cell_prop = Vec::with_capacity(model.sigma.len());
        let symmetric = model.collision.symmetry_defect() <= 1e-9;
        for s in &model.sigma {
            let k = *cache.entry(s.to_bits()).or_insert_with(|| {
                props.push(*s);
                props.len() - 1
            });
            cell_prop.push(k);
        }
        let props = props
            .into_iter()
            .map(|s| collision_substep(&model.collision, s * cfg.dt, cfg.collision_substep, symmetric))
            .collect::<Result<_>>()?;
        Ok(Self { model, cfg: cfg.clone(), first, last, props, cell_prop })
    }

    /// One split step on raw values.
    pub fn step(&self, f: &mut [f64]) {
        self.first.apply(f);
        let nv = self.model.grid.nv();
        let mut buf = vec![0.0; nv];
        for (c, &k) in self.cell_prop.iter().enumerate() {
            let p = &self.props[k];
            let prof = &mut f[c * nv..(c + 1) * nv];
            for (i, b) in buf.iter_mut().enumerate() {
                *b = p.data[i * nv..(i + 1) * nv].iter().zip(prof.iter()).map(|(a, x)| a * x).sum();
            }
            prof.copy_from_slice(&buf);
        }
        if let Some(l) = &self.last {
            l.apply(f);
        }
    }

    pub fn config(&self) -> &EvolutionConfig {
        &self.cfg
    }
}

fn collision_substep(l: &CollisionOperator, tau: f64, kind: CollisionSubstep, symmetric: bool) -> Result<Dense> {
    let n = l.nv();
    if tau == 0.0 {
        return Ok(Dense::identity(n));
    }
    match kind {
        CollisionSubstep::Exact if symmetric => l.propagator(tau),
        CollisionSubstep::Exact => Ok(expm(l.matrix(), tau)),
        CollisionSubstep::CrankNicolson => {
            let mut a = Dense::identity(n);
            let mut b = Dense::identity(n);
            for (k, x) in l.matrix().data.iter().enumerate() {
                a.data[k] -= 0.5 * tau * x;
                b.data[k] += 0.5 * tau * x;
            }
            Ok(inverse(&a)?.matmul(&b))
        }
    }
}

fn norm_mu(grid: &PhaseGrid, f: &[f64]) -> f64 {
    f.iter().zip(&grid.mu).map(|(a, w)| a * a * w).sum::<f64>().sqrt()
}

fn mass(grid: &PhaseGrid, f: &[f64]) -> f64 {
    f.iter().zip(&grid.vol).map(|(a, w)| a * w).sum()
}

/// One checked step: mass conserved to 1e-8 and ‖f‖_{L²(dμ)} nonincreasing to 1e-8.
pub fn step(model: &Model, f: &Field, cfg: &EvolutionConfig) -> Result<Field> {
    f.check_grid(&model.grid)?;
    let ev = Evolver::new(model, cfg)?;
    let mut data = f.data.clone();
    ev.step(&mut data);
    let g = &model.grid;
    let (m0, m1) = (mass(g, &f.data), mass(g, &data));
    let (n0, n1) = (norm_mu(g, &f.data), norm_mu(g, &data));
    if (m1 - m0).abs() > 1e-8 * m0.abs().max(1.0) {
        return Err(Error::Numerical(format!("mass drift {:e} in one step", m1 - m0)));
    }
    if n1 > n0 * (1.0 + 1e-8) + 1e-300 {
        return Err(Error::Numerical(format!("norm grew from {n0:e} to {n1:e}: unstable step")));
    }
    Field::from_vec(g, data)
}

/// `D(f) = −2∫σfℒf dμ + ∫_{Γ₊}[(γ₊f)² − (ℛγ₊f)²] dν`.
pub fn dissipation_total(model: &Model, f: &Field) -> Result<f64> {
    f.check_grid(&model.grid)?;
    Ok(interior_dissipation(model, &f.data) + model.transport.boundary_dissipation(f)?)
}

fn interior_dissipation(model: &Model, f: &[f64]) -> f64 {
    let g = &model.grid;
    let nv = g.nv();
    let mut lf = vec![0.0; nv];
    let mut acc = 0.0;
    for (c, s) in model.sigma.iter().enumerate() {
        if *s == 0.0 {
            continue;
        }
        let prof = &f[c * nv..(c + 1) * nv];
        model.collision.apply_into(prof, &mut lf);
        let mu = &g.mu[c * nv..(c + 1) * nv];
        acc += s * prof.iter().zip(&lf).zip(mu).map(|((a, b), w)| a * b * w).sum::<f64>();
    }
    -2.0 * acc
}

/// Certificate `(C, Λ)` from the decay criterion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Certificate {
    pub c: f64,
    /// Rate for the squared norm.
    pub lambda: f64,
    pub eta: f64,
    pub horizon: f64,
}

/// `C = (1−η)⁻¹`, `Λ = −ln(1−η)/T`.
pub fn certified_rate(eta: f64, horizon: f64) -> Result<Certificate> {
    if !(horizon > 0.0) {
        return invalid("certificate horizon must be positive");
    }
    if !(eta > 0.0) {
        return invalid(format!("no certificate: measured η = {eta:e} shows no dissipation"));
    }
    if eta >= 1.0 {
        return invalid("η must be below 1");
    }
    Ok(Certificate { c: 1.0 / (1.0 - eta), lambda: -(1.0 - eta).ln() / horizon, eta, horizon })
}

/// Decay run summary.
#[derive(Clone, Debug, Serialize)]
pub struct DecayReport {
    pub times: Vec<f64>,
    /// `‖f_t − (∫f)f_∞‖_{L²(dμ)}`.
    pub norms: Vec<f64>,
    /// `D(f_t − (∫f)f_∞)`.
    pub dissipation: Vec<f64>,
    /// Rate of the norm, fitted on the tail window.
    pub lambda_fit: Option<f64>,
    /// Prefactor relative to the initial distance.
    pub c_fit: Option<f64>,
    pub r2: Option<f64>,
    pub fit_window: (f64, f64),
    /// `1 − ‖f_T‖²/‖f_0‖²` on the discrete flow.
    pub eta: f64,
    /// `∫₀ᵀ D dt / ‖f_0‖²` by the trapezoid rule.
    pub eta_quadrature: f64,
    pub eta_horizon: f64,
    pub certificate: Option<Certificate>,
    pub mass_drift: f64,
    pub steps: usize,
    /// Field values at `T_final`.
    #[serde(skip)]
    pub final_state: Vec<f64>,
}

impl DecayReport {
    /// CSV rows `t,norm,dissipation`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "t,norm,dissipation")?;
        for ((t, n), d) in self.times.iter().zip(&self.norms).zip(&self.dissipation) {
            writeln!(w, "{t:.10e},{n:.16e},{d:.16e}")?;
        }
        Ok(())
    }
}

/// Evolve `f_init` and fit `‖f_t − (∫f)f_∞‖ ≈ C e^{−Λt}` over the tail window
/// (the first 10% of the run is never used).
pub fn run_decay(model: &Model, f_init: &Field, cfg: &EvolutionConfig) -> Result<DecayReport> {
    f_init.check_grid(&model.grid)?;
    let ev = Evolver::new(model, cfg)?;
    let g = &model.grid;
    let finf = build_equilibrium(g);
    let m0 = mass(g, &f_init.data);
    let dev = |f: &[f64]| -> Vec<f64> { f.iter().zip(&finf.data).map(|(a, e)| a - m0 * e).collect() };
    let dist = |f: &[f64]| norm_mu(g, &dev(f));
    let diss = |f: &[f64]| -> Result<f64> {
        let u = Field::from_vec(g, dev(f))?;
        dissipation_total(model, &u)
    };
    let n_steps = cfg.steps(cfg.t_final);
    let eta_horizon = cfg.eta_horizon.unwrap_or(cfg.t_final);
    let eta_steps = cfg.steps(eta_horizon).min(n_steps);
    let mut f = f_init.data.clone();
    let d0 = dist(&f);
    let floor = 1e-12 * (d0 + m0.abs());
    let mut times = vec![0.0];
    let mut norms = vec![d0];
    let mut dissipation = vec![diss(&f)?];
    let mut prev = d0;
    let mut d_prev = dissipation[0];
    let mut eta_int = 0.0;
    let mut d_eta = d0;
    for k in 1..=n_steps {
        ev.step(&mut f);
        let d = dist(&f);
        if !d.is_finite() || d > prev * (1.0 + 1e-8) + floor {
            return Err(Error::Numerical(format!(
                "instability at step {k} (t = {:.4}): distance {prev:e} → {d:e}",
                k as f64 * cfg.dt
            )));
        }
        prev = d;
        if k <= eta_steps {
            let dk = diss(&f)?;
            eta_int += 0.5 * cfg.dt * (d_prev + dk);
            d_prev = dk;
            if k == eta_steps {
                d_eta = d;
            }
        }
        if k % cfg.stride == 0 || k == n_steps {
            times.push(k as f64 * cfg.dt);
            norms.push(d);
            dissipation.push(diss(&f)?);
        }
    }
    let mass_drift = (mass(g, &f) - m0).abs();
    let (eta, eta_quadrature) = if d0 > 0.0 {
        (1.0 - (d_eta / d0).powi(2), eta_int / (d0 * d0))
    } else {
        (0.0, 0.0)
    };
    let t_end = n_steps as f64 * cfg.dt;
    let start = t_end * (1.0 - cfg.fit_tail).max(0.1);
    let mut fit = (None, None, None);
    if d0 > 1e-14 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = times
            .iter()
            .zip(&norms)
            .filter(|(t, n)| **t >= start - 1e-12 && **n > 1e-12 * d0)
            .map(|(t, n)| (*t, n.ln()))
            .unzip();
        if xs.len() >= 3 {
            let (slope, intercept, r2) = line_fit(&xs, &ys);
            fit = (Some(-slope), Some(intercept.exp() / d0), Some(r2));
        }
    }
    let certificate = certified_rate(eta, eta_steps as f64 * cfg.dt).ok();
    Ok(DecayReport {
        times,
        norms,
        dissipation,
        lambda_fit: fit.0,
        c_fit: fit.1,
        r2: fit.2,
        fit_window: (start, t_end),
        eta,
        eta_quadrature,
        eta_horizon: eta_steps as f64 * cfg.dt,
        certificate,
        mass_drift,
        steps: n_steps,
        final_state: f,
    })
}

/// Worst-case η over a battery of zero-mass initial data.
#[derive(Clone, Debug, Serialize)]
pub struct BatteryReport {
    pub etas: Vec<f64>,
    pub eta_min: f64,
    pub worst: usize,
    pub certificate: Option<Certificate>,
}

/// `f = f_∞ r − (∫f_∞ r) f_∞` with `r` uniform in `[−1, 1]` per node.
pub fn random_zero_mass(grid: &Arc<PhaseGrid>, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data: Vec<f64> = grid.finf.iter().map(|e| e * rng.gen_range(-1.0..1.0)).collect();
    let m = mass(grid, &data);
    data.iter_mut().zip(&grid.finf).for_each(|(x, e)| *x -= m * e);
    Field::from_vec(grid, data).expect("finite by construction")
}

/// η over `[0, T]` for `count` seeded random data plus any `extra` fields.
pub fn eta_battery(
    model: &Model,
    dt: f64,
    splitting: Splitting,
    horizon: f64,
    count: usize,
    seed: u64,
    extra: &[Field],
) -> Result<BatteryReport> {
    let mut cfg = EvolutionConfig::new(dt, horizon);
    cfg.splitting = splitting;
    let ev = Evolver::new(model, &cfg)?;
    let g = &model.grid;
    let mut inits: Vec<Field> = (0..count).map(|k| random_zero_mass(g, seed.wrapping_add(k as u64))).collect();
    for e in extra {
        e.check_grid(g)?;
        let m = mass(g, &e.data);
        let mut d = e.data.clone();
        d.iter_mut().zip(&g.finf).for_each(|(x, f)| *x -= m * f);
        inits.push(Field::from_vec(g, d)?);
    }
    if inits.is_empty() {
        return invalid("empty η battery");
    }
    let n = cfg.steps(horizon);
    let etas: Vec<f64> = inits
        .par_iter()
        .map(|f0| {
            let mut f = f0.data.clone();
            let n0 = norm_mu(g, &f);
            for _ in 0..n {
                ev.step(&mut f);
            }
            if n0 == 0.0 {
                f64::NAN
            } else {
                1.0 - (norm_mu(g, &f) / n0).powi(2)
            }
        })
        .collect();
    let (worst, eta_min) = etas
        .iter()
        .cloned()
        .enumerate()
        .filter(|(_, e)| e.is_finite())
        .fold((0, f64::INFINITY), |a, (i, e)| if e < a.1 { (i, e) } else { a });
    Ok(BatteryReport {
        certificate: certified_rate(eta_min, n as f64 * dt).ok(),
        etas,
        eta_min,
        worst,
    })
}

/// Sparse matrix of `f ↦ −𝒯f + σℒf`.
#[derive(Clone, Debug)]
pub struct GeneratorMatrix {
    pub matrix: Csr,
    grid: Arc<PhaseGrid>,
}

impl GeneratorMatrix {
    pub fn grid(&self) -> &Arc<PhaseGrid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows == 0
    }

    pub fn apply(&self, f: &Field) -> Result<Field> {
        f.check_grid(&self.grid)?;
        Field::from_vec(&self.grid, self.matrix.matvec(&f.data))
    }

    /// `max |G f_∞| / max f_∞`.
    pub fn equilibrium_residual(&self) -> f64 {
        let r = self.matrix.matvec(&self.grid.finf);
        let s = self.grid.finf.iter().fold(0.0f64, |a, x| a.max(*x));
        r.iter().fold(0.0f64, |a, x| a.max(x.abs())) / s
    }

    /// `max_k |Σ_i vol_i G_ik| / vol_k`.
    pub fn mass_residual(&self) -> f64 {
        let c = self.matrix.transpose_matvec(&self.grid.vol);
        c.iter().zip(&self.grid.vol).fold(0.0f64, |a, (x, w)| a.max(x.abs() / w))
    }

    /// Remove the `(∫f) f_∞` component.
    pub fn project_mass_zero(&self, f: &mut [f64]) {
        let m = mass(&self.grid, f);
        f.iter_mut().zip(&self.grid.finf).for_each(|(x, e)| *x -= m * e);
    }

    /// Coordinate export `row col value`.
    pub fn write_coo(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "# {} {} {}", self.matrix.nrows, self.matrix.ncols, self.matrix.nnz())?;
        for (i, j, v) in self.matrix.triplets() {
            writeln!(w, "{i} {j} {v:.17e}")?;
        }
        Ok(())
    }
}

pub fn assemble_generator(model: &Model) -> Result<GeneratorMatrix> {
    let g = &model.grid;
    let nv = g.nv();
    let mut t: Vec<(usize, usize, f64)> = model.transport.generator()?.triplets().collect();
    let l = model.collision.matrix();
    let blocks: Vec<Vec<(usize, usize, f64)>> = model
        .sigma
        .par_iter()
        .enumerate()
        .map(|(c, s)| {
            let mut b = Vec::new();
            if *s != 0.0 {
                for i in 0..nv {
                    for j in 0..nv {
                        let v = l.get(i, j);
                        if v != 0.0 {
                            b.push((c * nv + i, c * nv + j, s * v));
                        }
                    }
                }
            }
            b
        })
        .collect();
    t.extend(blocks.into_iter().flatten());
    Ok(GeneratorMatrix { matrix: Csr::from_triplets(g.len(), g.len(), t), grid: g.clone() })
}

/// Rightmost part of the generator spectrum.
#[derive(Clone, Debug, Serialize)]
pub struct GapReport {
    /// `−max Re λ` over the spectrum without the conserved eigenvalue.
    pub gap: f64,
    pub rightmost: (f64, f64),
    /// The eigenvalue removed as the mass mode.
    pub kernel: (f64, f64),
    pub unknowns: usize,
}

/// Dense eigensolve of the generator restricted to mass-zero data.
pub fn generator_spectral_gap(gen: &GeneratorMatrix) -> Result<GapReport> {
    let n = gen.len();
    if n > DENSE_CAP {
        return Err(Error::Capacity(format!("generator has {n} unknowns; dense cap is {DENSE_CAP}")));
    }
    if n < 2 {
        return invalid("generator too small for a gap");
    }
    let ev = eigenvalues(&gen.matrix.to_dense())?;
    let k0 = (0..n)
        .min_by(|&a, &b| ev[a].0.hypot(ev[a].1).total_cmp(&ev[b].0.hypot(ev[b].1)))
        .expect("nonempty");
    let rightmost = ev
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != k0)
        .map(|(_, z)| *z)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .expect("n ≥ 2");
    let gap = -rightmost.0;
    if gap < -1e-8 {
        return Err(Error::Numerical(format!("generator has eigenvalue with Re = {:e} > 0", rightmost.0)));
    }
    Ok(GapReport { gap: gap.max(0.0), rightmost, kernel: ev[k0], unknowns: n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::{Potential, SpatialDomain, VelocitySpace};

    fn torus1d(nx: usize, sigma: DegeneracyWeight) -> Model {
        let g = PhaseGrid::new(
            SpatialDomain::Torus1D { length: 1.0 },
            &[nx],
            VelocitySpace::DiscreteSet { points: vec![vec![-1.0], vec![1.0]], weights: vec![0.5, 0.5] },
            Potential::Zero,
        )
        .unwrap();
        let l = CollisionOperator::bgk(&g.vel);
        Model::new(&g, l, &sigma, None).unwrap()
    }

    #[test]
    fn certificate_arithmetic() {
        let c = certified_rate(1.0 - (-1f64).exp(), 1.0).unwrap();
        assert!((c.c - std::f64::consts::E).abs() < 1e-12 && (c.lambda - 1.0).abs() < 1e-12);
        assert!(certified_rate(0.0, 1.0).is_err());
    }

    #[test]
    fn equilibrium_is_stationary() {
        let m = torus1d(16, DegeneracyWeight::Constant { value: 1.0 });
        let f = build_equilibrium(&m.grid);
        let cfg = EvolutionConfig::new(0.01, 0.01);
        let f1 = step(&m, &f, &cfg).unwrap();
        let e = f1.data.iter().zip(&f.data).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        assert!(e < 1e-12);
        assert!(dissipation_total(&m, &f).unwrap().abs() < 1e-14);
    }

    #[test]
    fn uniform_data_relax_at_unit_rate() {
        let m = torus1d(8, DegeneracyWeight::Constant { value: 1.0 });
        let f = Field::from_fn(&m.grid, |_, v| 0.5 * (1.0 + 0.3 * v[0]));
        let r = run_decay(&m, &f, &EvolutionConfig::new(1e-3, 2.0)).unwrap();
        let ratio = r.norms.last().unwrap() / r.norms[0];
        assert!((ratio / (-2f64).exp() - 1.0).abs() < 1e-2);
        assert!((r.lambda_fit.unwrap() - 1.0).abs() < 1e-2);
    }

    fn bumpy_model() -> Model {
        let m = torus1d(64, DegeneracyWeight::Constant { value: 1.0 });
        let s = m.grid.space.centers.iter().map(|x| 1.0 + (2.0 * std::f64::consts::PI * x[0]).sin()).collect();
        Model::with_sigma(&m.grid, m.collision.clone(), s, None).unwrap()
    }

    #[test]
    fn strang_second_order_lie_first() {
        let m = bumpy_model();
        let f0 = Field::from_fn(&m.grid, |x, v| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * x[0]).sin() * (1.0 + v[0]));
        let run = |dt: f64, s: Splitting| {
            let mut cfg = EvolutionConfig::new(dt, 1.0);
            cfg.splitting = s;
            let ev = Evolver::new(&m, &cfg).unwrap();
            let mut f = f0.data.clone();
            for _ in 0..(1.0 / dt).round() as usize {
                ev.step(&mut f);
            }
            f
        };
        let diff = |a: &[f64], b: &[f64]| norm_mu(&m.grid, &a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>());
        let h = 1.0 / 64.0;
        for (s, lo, hi) in [(Splitting::Strang, 1.6, 3.0), (Splitting::Lie, 0.8, 3.0)] {
            let reference = run(2.0 * h, s);
            let e1 = diff(&run(16.0 * h, s), &reference);
            let e2 = diff(&run(8.0 * h, s), &reference);
            let order = (e1 / e2).log2();
            assert!(order > lo && order < hi, "{s:?}: {order}");
        }
    }

    #[test]
    fn dissipation_matches_energy_loss() {
        let m = bumpy_model();
        let g = m.grid.clone();
        let f = Field::from_fn(&g, |x, v| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * x[0]).cos() * v[0]);
        let errs: Vec<f64> = [2.0 / 64.0, 1.0 / 64.0]
            .iter()
            .map(|&dt| {
                let mut cfg = EvolutionConfig::new(dt, dt);
                cfg.splitting = Splitting::Lie;
                let mut d = f.data.clone();
                Evolver::new(&m, &cfg).unwrap().step(&mut d);
                let (n0, n1) = (norm_mu(&g, &f.data).powi(2), norm_mu(&g, &d).powi(2));
                ((n0 - n1) / dt - dissipation_total(&m, &f).unwrap()).abs()
            })
            .collect();
        assert!(errs[1] < 0.6 * errs[0], "{errs:?}");
    }

    #[test]
    fn generator_kernel_mass_and_bgk_block() {
        let m = torus1d(6, DegeneracyWeight::Constant { value: 0.7 });
        let g = assemble_generator(&m).unwrap();
        assert!(g.equilibrium_residual() < 1e-12);
        assert!(g.mass_residual() < 1e-12);
        let f = Field::from_fn(&m.grid, |_, v| v[0]);
        let gf = g.apply(&f).unwrap();
        assert!(gf.data.iter().zip(&f.data).all(|(a, b)| (a + 0.7 * b).abs() < 1e-12));
        let gap = generator_spectral_gap(&g).unwrap();
        assert!(gap.gap > 0.0);
        let free = torus1d(6, DegeneracyWeight::Constant { value: 0.0 });
        let g0 = generator_spectral_gap(&assemble_generator(&free).unwrap()).unwrap();
        assert!(g0.gap < 1e-8);
    }

    #[test]
    fn oversized_generator_refused() {
        let m = torus1d(2600, DegeneracyWeight::Constant { value: 1.0 });
        let g = assemble_generator(&m).unwrap();
        assert!(matches!(generator_spectral_gap(&g), Err(Error::Capacity(_))));
    }
}
