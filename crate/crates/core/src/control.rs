//! Geometric control: deterministic and particle checks of
//! `∫₀ᵀ χ(X_t) w(V_t) dt ≥ c`, and the ψ weight built from the flow.

use crate::error::{invalid, Error, Result};
use crate::linalg::gauss_legendre;
use crate::phase::{Region, SpatialDomain, VelocitySpace};
use crate::transport::{monte_carlo_step, CharacteristicState, Flow, ParticleModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Axes carrying a smooth bump.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BumpAxes {
    X,
    Y,
    /// `1 − (1 − b(x))(1 − b(y))`.
    Cross,
}

/// Control function χ(x).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Chi {
    Constant { value: f64 },
    Indicator { region: Region },
    /// `b(s) = sin²(π(s − lo)/(hi − lo))` on `[lo, hi]`, zero elsewhere.
    Bump { lo: f64, hi: f64, axes: BumpAxes },
}

impl Chi {
    pub fn eval(&self, x: &[f64; 2]) -> Result<f64> {
        Ok(match self {
            Self::Constant { value } => *value,
            Self::Indicator { region } => f64::from(u8::from(region.contains(x)?)),
            Self::Bump { lo, hi, axes } => {
                let b = |s: f64| {
                    if s <= *lo || s >= *hi {
                        0.0
                    } else {
                        (PI * (s - lo) / (hi - lo)).sin().powi(2)
                    }
                };
                match axes {
                    BumpAxes::X => b(x[0]),
                    BumpAxes::Y => b(x[1]),
                    BumpAxes::Cross => 1.0 - (1.0 - b(x[0])) * (1.0 - b(x[1])),
                }
            }
        })
    }

    pub fn sup(&self) -> f64 {
        match self {
            Self::Constant { value } => value.abs(),
            _ => 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::Constant { value } if !(value.is_finite() && *value >= 0.0) => {
                invalid("χ must be finite and nonnegative")
            }
            Self::Bump { lo, hi, .. } if !(hi > lo) => invalid("bump needs lo < hi"),
            _ => Ok(()),
        }
    }
}

/// Velocity weight w(v).
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityWeight {
    #[default]
    One,
    OnePlusSpeed,
}

impl VelocityWeight {
    pub fn eval(&self, v: &[f64; 2]) -> f64 {
        match self {
            Self::One => 1.0,
            Self::OnePlusSpeed => 1.0 + v[0].hypot(v[1]),
        }
    }
}

/// Control-condition setup.
#[derive(Clone, Debug)]
pub struct ControlConfig {
    pub chi: Chi,
    /// Thermalisation region Σ that must contain supp χ.
    pub region: Region,
    pub w: VelocityWeight,
    pub horizon: f64,
    /// Time quadrature step.
    pub dt: f64,
    /// Sample positions per axis.
    pub positions: usize,
    pub velocities: Vec<[f64; 2]>,
    /// Extra low-discrepancy samples around the argmin.
    pub refine: usize,
    pub particles: usize,
    pub threshold: f64,
    pub seed: u64,
    /// Smallest admissible ψ denominator.
    pub floor: f64,
}

impl ControlConfig {
    /// Defaults: w ≡ 1, 64 positions per axis, threshold 1, 256 refinement samples.
    pub fn new(chi: Chi, region: Region, horizon: f64, dt: f64, velocities: Vec<[f64; 2]>) -> Self {
        Self {
            chi,
            region,
            w: VelocityWeight::One,
            horizon,
            dt,
            positions: 64,
            velocities,
            refine: 256,
            particles: 10_000,
            threshold: 1.0,
            seed: 0,
            floor: 1e-9,
        }
    }

    pub fn validate(&self, flow: &Flow) -> Result<()> {
        self.chi.validate()?;
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return invalid("control horizon T must be positive");
        }
        if !(self.dt > 0.0 && self.dt <= self.horizon) {
            return invalid("time step must lie in (0, T]");
        }
        if self.velocities.is_empty() || self.positions == 0 {
            return invalid("control sampling needs positions and velocities");
        }
        // supp χ ⊆ Σ on a fine probe grid
        for x in position_samples(&flow.domain, 96.max(self.positions)) {
            if self.chi.eval(&x)? > 0.0 && !self.region.contains(&x)? {
                return invalid(format!("supp χ leaves Σ at x = {x:?}"));
            }
        }
        Ok(())
    }

    fn integrand(&self, s: &CharacteristicState) -> Result<f64> {
        Ok(self.chi.eval(&s.x)? * self.w.eval(&s.v))
    }
}

/// Velocity samples: circle angles `2πk/n`, the nodes of a discrete set, or `n` points of a line.
pub fn velocity_samples(space: &VelocitySpace, n: usize) -> Vec<[f64; 2]> {
    match space {
        VelocitySpace::Circle { .. } => (0..n)
            .map(|k| {
                let th = 2.0 * PI * k as f64 / n as f64;
                [th.cos(), th.sin()]
            })
            .collect(),
        VelocitySpace::DiscreteSet { points, .. } => {
            points.iter().map(|p| [p[0], p.get(1).copied().unwrap_or(0.0)]).collect()
        }
        VelocitySpace::TruncatedLine { v_max, .. } => {
            (0..n).map(|k| [-v_max + (k as f64 + 0.5) * 2.0 * v_max / n as f64, 0.0]).collect()
        }
    }
}

/// Cell-centred sample positions, `n` per axis (disc: centres inside the disc).
pub fn position_samples(domain: &SpatialDomain, n: usize) -> Vec<[f64; 2]> {
    let c = |lo: f64, len: f64, i: usize| lo + (i as f64 + 0.5) * len / n as f64;
    match *domain {
        SpatialDomain::Torus1D { length } => (0..n).map(|i| [c(0.0, length, i), 0.0]).collect(),
        SpatialDomain::Interval1D { a, b } => (0..n).map(|i| [c(a, b - a, i), 0.0]).collect(),
        SpatialDomain::Torus2D { lengths } => (0..n)
            .flat_map(|i| (0..n).map(move |j| [c(0.0, lengths[0], i), c(0.0, lengths[1], j)]))
            .collect(),
        SpatialDomain::Disc2D { radius } => (0..n)
            .flat_map(|i| (0..n).map(move |j| [c(-radius, 2.0 * radius, i), c(-radius, 2.0 * radius, j)]))
            .filter(|x| x[0].hypot(x[1]) < radius)
            .collect(),
    }
}

/// Trapezoid rule for `∫₀ᵀ χ(X_t)w(V_t) dt` along the specular flow.
pub fn control_integral(cfg: &ControlConfig, flow: &Flow, x: [f64; 2], v: [f64; 2]) -> Result<f64> {
    let n = (cfg.horizon / cfg.dt).round().max(1.0) as usize;
    let h = cfg.horizon / n as f64;
    let mut st = CharacteristicState::new(x, v);
    let mut acc = 0.5 * cfg.integrand(&st)?;
    for k in 1..=n {
        flow.advance_specular(&mut st, h)?;
        let f = cfg.integrand(&st)?;
        acc += if k == n { 0.5 * f } else { f };
    }
    Ok(acc * h)
}

/// Mode of a control report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GccMode {
    Deterministic,
    Full,
}

/// Per-initial-condition result.
#[derive(Clone, Debug, Serialize)]
pub struct GccSample {
    pub x: [f64; 2],
    pub v: [f64; 2],
    pub integral: f64,
    pub stderr: f64,
}

/// Summary of a control check.
#[derive(Clone, Debug, Serialize)]
pub struct GccReport {
    pub mode: GccMode,
    pub c_min: f64,
    pub c_mean: f64,
    pub argmin_x: [f64; 2],
    pub argmin_v: [f64; 2],
    pub samples: usize,
    /// Samples whose trajectory could not be integrated.
    pub flagged: usize,
    /// 99% half-width at the argmin (particle mode).
    pub half_width: f64,
    /// `c_min − half_width`.
    pub lower_bound: f64,
    pub threshold: f64,
    pub pass: bool,
    #[serde(skip)]
    pub per_sample: Vec<GccSample>,
}

fn summarize(mode: GccMode, per: Vec<GccSample>, flagged: usize, threshold: f64) -> Result<GccReport> {
    if per.is_empty() {
        return Err(Error::Numerical("no control sample could be evaluated".into()));
    }
    let mut best = 0;
    for (i, s) in per.iter().enumerate() {
        let key = |s: &GccSample| s.integral - 2.576 * s.stderr;
        if key(s) < key(&per[best]) {
            best = i;
        }
    }
    let c_min = per.iter().map(|s| s.integral).fold(f64::INFINITY, f64::min);
    let c_mean = per.iter().map(|s| s.integral).sum::<f64>() / per.len() as f64;
    let half_width = 2.576 * per[best].stderr;
    let lower_bound = per[best].integral - half_width;
    let pass = flagged == 0 && lower_bound >= threshold && (mode == GccMode::Full || c_min >= threshold);
    Ok(GccReport {
        mode,
        c_min,
        c_mean,
        argmin_x: per[best].x,
        argmin_v: per[best].v,
        samples: per.len(),
        flagged,
        half_width,
        lower_bound,
        threshold,
        pass,
        per_sample: per,
    })
}

/// Halton radical inverse.
fn halton(mut i: usize, base: usize) -> f64 {
    let (mut f, mut r) = (1.0, 0.0);
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

fn inside(flow: &Flow, x: &[f64; 2]) -> bool {
    match flow.domain {
        SpatialDomain::Interval1D { a, b } => (a..=b).contains(&x[0]),
        SpatialDomain::Disc2D { radius } => x[0].hypot(x[1]) < radius,
        _ => true,
    }
}

fn wrap(flow: &Flow, mut x: [f64; 2]) -> [f64; 2] {
    match flow.domain {
        SpatialDomain::Torus1D { length } => x[0] = x[0].rem_euclid(length),
        SpatialDomain::Torus2D { lengths } => {
            x[0] = x[0].rem_euclid(lengths[0]);
            x[1] = x[1].rem_euclid(lengths[1]);
        }
        _ => {}
    }
    x
}

/// Deterministic control check over a tensor sample plus a refinement cloud near the argmin.
pub fn gcc_deterministic(cfg: &ControlConfig, flow: &Flow) -> Result<GccReport> {
    cfg.validate(flow)?;
    let xs = position_samples(&flow.domain, cfg.positions);
    let pts: Vec<([f64; 2], [f64; 2])> =
        xs.iter().flat_map(|x| cfg.velocities.iter().map(move |v| (*x, *v))).collect();
    let eval = |pts: &[([f64; 2], [f64; 2])]| -> (Vec<GccSample>, usize) {
        let res: Vec<Option<GccSample>> = pts
            .par_iter()
            .map(|(x, v)| {
                control_integral(cfg, flow, *x, *v)
                    .ok()
                    .map(|integral| GccSample { x: *x, v: *v, integral, stderr: 0.0 })
            })
            .collect();
        let flagged = res.iter().filter(|r| r.is_none()).count();
        (res.into_iter().flatten().collect(), flagged)
    };
    let (mut per, mut flagged) = eval(&pts);
    if cfg.refine > 0 && !per.is_empty() {
        let best = per.iter().min_by(|a, b| a.integral.total_cmp(&b.integral)).cloned().unwrap();
        let spacing: Vec<f64> = match flow.domain {
            SpatialDomain::Torus1D { length } => vec![length / cfg.positions as f64, 0.0],
            SpatialDomain::Interval1D { a, b } => vec![(b - a) / cfg.positions as f64, 0.0],
            SpatialDomain::Torus2D { lengths } => lengths.iter().map(|l| l / cfg.positions as f64).collect(),
            SpatialDomain::Disc2D { radius } => vec![2.0 * radius / cfg.positions as f64; 2],
        };
        let dth = 2.0 * PI / cfg.velocities.len().max(1) as f64;
        let extra: Vec<([f64; 2], [f64; 2])> = (1..=cfg.refine)
            .filter_map(|k| {
                let u = [halton(k, 2) - 0.5, halton(k, 3) - 0.5, halton(k, 5) - 0.5];
                let x = wrap(flow, [best.x[0] + 2.0 * u[0] * spacing[0], best.x[1] + 2.0 * u[1] * spacing[1]]);
                let v = if flow.dim() == 2 {
                    let (s, c) = (2.0 * u[2] * dth).sin_cos();
                    [c * best.v[0] - s * best.v[1], s * best.v[0] + c * best.v[1]]
                } else {
                    [best.v[0] * (1.0 + 0.2 * u[2]), 0.0]
                };
                inside(flow, &x).then_some((x, v))
            })
            .collect();
        let (more, fl) = eval(&extra);
        per.extend(more);
        flagged += fl;
    }
    summarize(GccMode::Deterministic, per, flagged, cfg.threshold)
}

/// Particle estimate of `E[∫₀ᵀ χ(X_t)w(V_t) dt]` for each initial condition, with
/// per-particle ChaCha streams so results do not depend on the thread count.
pub fn gcc_full_monte_carlo(
    cfg: &ControlConfig,
    model: &ParticleModel,
    initial: &[([f64; 2], [f64; 2])],
) -> Result<GccReport> {
    if cfg.particles == 0 {
        return invalid("particle estimate needs at least one particle");
    }
    if initial.is_empty() {
        return invalid("no initial conditions given");
    }
    cfg.chi.validate()?;
    let n = (cfg.horizon / cfg.dt).round().max(1.0) as usize;
    let h = cfg.horizon / n as f64;
    let mut per = Vec::with_capacity(initial.len());
    for (ic, (x0, v0)) in initial.iter().enumerate() {
        let vals: Vec<Result<f64>> = (0..cfg.particles)
            .into_par_iter()
            .map(|p| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream((ic * cfg.particles + p) as u64);
                let mut st = CharacteristicState::new(*x0, *v0);
                let mut acc = 0.5 * cfg.integrand(&st)?;
                for k in 1..=n {
                    monte_carlo_step(model, &mut st, h, &mut rng)?;
                    let f = cfg.integrand(&st)?;
                    if !f.is_finite() || !st.x.iter().all(|c| c.is_finite()) {
                        return Err(Error::Numerical("divergent particle trajectory".into()));
                    }
                    acc += if k == n { 0.5 * f } else { f };
                }
                Ok(acc * h)
            })
            .collect();
        let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
        let m = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / m;
        let var = if vals.len() > 1 { vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0) } else { 0.0 };
        per.push(GccSample { x: *x0, v: *v0, integral: mean, stderr: (var / m).sqrt() });
    }
    summarize(GccMode::Full, per, 0, cfg.threshold)
}

/// The weight `ψ(t,x,v) = χ(x)w(v) / ((1/T)∫₀ᵀ χ(X_{s−t})w(V_{s−t}) ds)`, evaluated pointwise
/// through the flow; the denominator uses the left Riemann rule with the configured step.
#[derive(Clone, Debug)]
pub struct PsiWeight {
    cfg: ControlConfig,
    flow: Flow,
    /// Denominators at the sample points at t = 0.
    pub denominators: Vec<f64>,
    pub sample_points: Vec<([f64; 2], [f64; 2])>,
    pub c_min: f64,
    /// `‖χw‖_∞ T / c_min`.
    pub bound: f64,
}

fn left_riemann(cfg: &ControlConfig, flow: &Flow, x: [f64; 2], v: [f64; 2]) -> Result<f64> {
    let n = (cfg.horizon / cfg.dt).round().max(1.0) as usize;
    let h = cfg.horizon / n as f64;
    let mut st = CharacteristicState::new(x, v);
    let mut acc = 0.0;
    for _ in 0..n {
        acc += cfg.integrand(&st)?;
        flow.advance_specular(&mut st, h)?;
    }
    Ok(acc * h / cfg.horizon)
}

/// `(X_{−t}, V_{−t})` via reversibility of the specular flow.
fn flow_back(flow: &Flow, x: [f64; 2], v: [f64; 2], t: f64) -> Result<CharacteristicState> {
    let mut st = CharacteristicState::new(x, [-v[0], -v[1]]);
    if t > 0.0 {
        flow.advance_specular(&mut st, t)?;
    }
    st.v = [-st.v[0], -st.v[1]];
    Ok(st)
}

impl PsiWeight {
    pub fn config(&self) -> &ControlConfig {
        &self.cfg
    }

    /// ψ at `(t, x, v)`.
    pub fn eval(&self, t: f64, x: [f64; 2], v: [f64; 2]) -> Result<f64> {
        let num = self.cfg.chi.eval(&x)? * self.cfg.w.eval(&v);
        if num == 0.0 {
            return Ok(0.0);
        }
        let start = flow_back(&self.flow, x, v, t)?;
        let den = left_riemann(&self.cfg, &self.flow, start.x, start.v)?;
        if den < self.cfg.floor {
            return Err(Error::Numerical(format!("ψ denominator {den:e} below floor at x = {x:?}, v = {v:?}")));
        }
        Ok(num / den)
    }

    /// ψ on `nt` equispaced times at every sample point: `(t, sample index, value)`.
    pub fn samples(&self, nt: usize) -> Result<Vec<(f64, usize, f64)>> {
        let mut out = vec![];
        for k in 0..nt {
            let t = self.cfg.horizon * k as f64 / nt.max(1) as f64;
            for (i, (x, v)) in self.sample_points.iter().enumerate() {
                out.push((t, i, self.eval(t, *x, *v)?));
            }
        }
        Ok(out)
    }
}

/// Build ψ, refusing when some sampled denominator falls below the floor.
pub fn build_psi(cfg: &ControlConfig, flow: &Flow) -> Result<PsiWeight> {
    cfg.validate(flow)?;
    let xs = position_samples(&flow.domain, cfg.positions);
    let pts: Vec<([f64; 2], [f64; 2])> =
        xs.iter().flat_map(|x| cfg.velocities.iter().map(move |v| (*x, *v))).collect();
    let dens: Vec<f64> = pts
        .par_iter()
        .map(|(x, v)| left_riemann(cfg, flow, *x, *v))
        .collect::<Result<_>>()?;
    let (imin, dmin) = dens
        .iter()
        .cloned()
        .enumerate()
        .fold((0, f64::INFINITY), |a, (i, d)| if d < a.1 { (i, d) } else { a });
    if dmin < cfg.floor {
        let (x, v) = pts[imin];
        return Err(Error::Numerical(format!(
            "ψ refused: denominator {dmin:e} at witness x = {x:?}, v = {v:?}"
        )));
    }
    let c_min = dmin * cfg.horizon;
    let sup_w = cfg.velocities.iter().map(|v| cfg.w.eval(v)).fold(0.0, f64::max);
    Ok(PsiWeight {
        cfg: cfg.clone(),
        flow: flow.clone(),
        denominators: dens,
        sample_points: pts,
        c_min,
        bound: cfg.chi.sup() * sup_w * cfg.horizon / c_min,
    })
}

/// Deviation of `(1/T)∫₀ᵀ ψ(t, X_t, V_t) dt` from 1.
#[derive(Clone, Debug, Serialize)]
pub struct NormalizationReport {
    pub max_deviation: f64,
    pub argmax_x: [f64; 2],
    pub argmax_v: [f64; 2],
    pub samples: usize,
}

/// Evaluate the normalization along forward trajectories. The outer time integral uses a
/// composite Gauss–Legendre rule fine enough to be exact at the reported precision; the ψ
/// denominator is shared by every point of one trajectory, so it is computed once per sample.
pub fn psi_normalization_check(
    psi: &PsiWeight,
    samples: &[([f64; 2], [f64; 2])],
) -> Result<NormalizationReport> {
    let cfg = &psi.cfg;
    let flow = &psi.flow;
    let panels = 4 * (cfg.horizon / cfg.dt).round().max(1.0) as usize;
    let (gx, gw) = gauss_legendre(4);
    let ph = cfg.horizon / panels as f64;
    let devs: Vec<f64> = samples
        .par_iter()
        .map(|(x, v)| -> Result<f64> {
            let den = left_riemann(cfg, flow, *x, *v)?;
            let mut st = CharacteristicState::new(*x, *v);
            let mut t = 0.0;
            let mut acc = 0.0;
            for p in 0..panels {
                for (xi, wi) in gx.iter().zip(&gw) {
                    let tn = (p as f64 + 0.5 * (1.0 + xi)) * ph;
                    flow.advance_specular(&mut st, tn - t)?;
                    t = tn;
                    acc += 0.5 * ph * wi * cfg.integrand(&st)?;
                }
            }
            if acc == 0.0 && den == 0.0 {
                return Ok(0.0);
            }
            if den < cfg.floor {
                return Err(Error::Numerical(format!("ψ undefined on the trajectory of x = {x:?}")));
            }
            Ok((acc / cfg.horizon / den - 1.0).abs())
        })
        .collect::<Result<_>>()?;
    let (imax, max_deviation) = devs
        .iter()
        .cloned()
        .enumerate()
        .fold((0, 0.0), |a, (i, d)| if d > a.1 { (i, d) } else { a });
    Ok(NormalizationReport {
        max_deviation,
        argmax_x: samples[imax].0,
        argmax_v: samples[imax].1,
        samples: samples.len(),
    })
}

/// `∫` of the control integrand along `t ↦ T − t` with reversed velocities.
pub fn reversed_integral(cfg: &ControlConfig, flow: &Flow, x: [f64; 2], v: [f64; 2]) -> Result<f64> {
    let mut st = CharacteristicState::new(x, v);
    flow.advance_specular(&mut st, cfg.horizon)?;
    control_integral(cfg, flow, st.x, [-st.v[0], -st.v[1]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::DegeneracyWeight;
    use crate::transport::VelocityLaw;

    fn torus() -> Flow {
        Flow::new(SpatialDomain::Torus2D { lengths: [1.0, 1.0] }, crate::phase::Potential::Zero).unwrap()
    }

    fn cross_cfg(positions: usize, nv: usize) -> ControlConfig {
        let mut c = ControlConfig::new(
            Chi::Bump { lo: 1.0 / 3.0, hi: 2.0 / 3.0, axes: BumpAxes::Cross },
            Region::Cross { lo: 1.0 / 3.0, hi: 2.0 / 3.0 },
            8.0,
            8.0 / 256.0,
            velocity_samples(&VelocitySpace::Circle { n: nv }, nv),
        );
        c.positions = positions;
        c.refine = 32;
        c
    }

    #[test]
    fn constant_chi_gives_horizon() {
        let mut c = cross_cfg(4, 4);
        c.chi = Chi::Constant { value: 1.0 };
        c.region = Region::All;
        let r = gcc_deterministic(&c, &torus()).unwrap();
        assert!((r.c_min - 8.0).abs() < 1e-12 && r.pass);
        let psi = build_psi(&c, &torus()).unwrap();
        assert!((psi.eval(1.3, [0.2, 0.7], [0.6, 0.8]).unwrap() - 1.0).abs() < 1e-14);
        let n = psi_normalization_check(&psi, &psi.sample_points[..8]).unwrap();
        assert!(n.max_deviation < 1e-13);
    }

    #[test]
    fn strip_has_zero_witness() {
        let mut c = cross_cfg(16, 16);
        c.chi = Chi::Bump { lo: 1.0 / 3.0, hi: 2.0 / 3.0, axes: BumpAxes::Y };
        c.region = Region::StripY { lo: 1.0 / 3.0, hi: 2.0 / 3.0 };
        let r = gcc_deterministic(&c, &torus()).unwrap();
        assert_eq!(r.c_min, 0.0);
        assert!(!r.pass);
        assert!(r.argmin_v[1].abs() < 1e-12);
        assert!(!(1.0 / 3.0..=2.0 / 3.0).contains(&r.argmin_x[1]));
        assert!(build_psi(&c, &torus()).is_err());
    }

    #[test]
    fn cross_passes_and_psi_bounded() {
        let c = cross_cfg(16, 16);
        let r = gcc_deterministic(&c, &torus()).unwrap();
        assert!(r.c_min >= 1.0, "c_min = {}", r.c_min);
        let psi = build_psi(&c, &torus()).unwrap();
        let vals = psi.samples(3).unwrap();
        assert!(vals.iter().all(|(_, _, p)| *p >= 0.0 && *p <= psi.bound * (1.0 + 1e-12)));
    }

    #[test]
    fn support_outside_region_rejected() {
        let mut c = cross_cfg(4, 4);
        c.region = Region::StripY { lo: 1.0 / 3.0, hi: 2.0 / 3.0 };
        assert!(gcc_deterministic(&c, &torus()).is_err());
    }

    #[test]
    fn reversal_and_monotonicity() {
        let c = cross_cfg(4, 8);
        let f = torus();
        let a = control_integral(&c, &f, [0.1, 0.2], [0.6, 0.8]).unwrap();
        let b = reversed_integral(&c, &f, [0.1, 0.2], [0.6, 0.8]).unwrap();
        assert!((a - b).abs() < 1e-10);
        let mut longer = c.clone();
        longer.horizon = 12.0;
        assert!(gcc_deterministic(&longer, &f).unwrap().c_min >= gcc_deterministic(&c, &f).unwrap().c_min);
    }

    #[test]
    fn particles_without_randomness_match_deterministic() {
        let flow = torus();
        let model = ParticleModel::new(flow.clone(), 0.0, DegeneracyWeight::Constant { value: 0.0 }, VelocityLaw::UnitSpeed).unwrap();
        let mut c = cross_cfg(4, 4);
        c.particles = 3;
        let ic = [([0.1, 0.05], [1.0, 0.0])];
        let r = gcc_full_monte_carlo(&c, &model, &ic).unwrap();
        let d = control_integral(&c, &flow, ic[0].0, ic[0].1).unwrap();
        assert!((r.c_min - d).abs() < 1e-12 && r.half_width == 0.0);
    }
}
