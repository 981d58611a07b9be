//! Task runners. Each returns a [`RunSummary`] whose artifacts are written only after the
//! whole run succeeded.

use crate::config::*;
use crate::hypotheses::{validate_hypotheses, Status};
use kinlab::collision::{
    cheeger_constant, gamma2_check, kernel_from_csv, random_kernel, random_reversible_kernel, spectral_gap,
};
use kinlab::control::{
    build_psi, control_integral, gcc_deterministic, gcc_full_monte_carlo, psi_normalization_check, velocity_samples,
    ControlConfig, GccMode, GccReport,
};
use kinlab::evolve::{assemble_generator, eta_battery, generator_spectral_gap, run_decay, DecayReport, Model};
use kinlab::funineq::{
    korn_constant, korn_polynomial_oracle, poincare_lions_constant, solve_divergence_h1, stokes_solve,
    weighted_poincare_check, BoxDomain, WeightedDomain,
};
use kinlab::hypo::{build_system, gap_vs_degeneracy, transport_antisymmetry, verify_identities, weighted_poincare_2d_check};
use kinlab::phase::{Field, PhaseGrid, SpatialDomain};
use kinlab::transport::{Flow, ParticleModel};
use kinlab::{CollisionOperator, Error, Result, VERSION};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

/// One declared check.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub bound: f64,
    pub detail: String,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub skipped: bool,
}

impl Check {
    pub fn label(&self) -> &'static str {
        match (self.skipped, self.pass) {
            (true, _) => "N/A ",
            (false, true) => "PASS",
            (false, false) => "FAIL",
        }
    }
}

/// A CSV produced by a run.
#[derive(Clone, Debug)]
pub struct Artifact {
    pub file: String,
    pub body: String,
}

/// Result of one invocation.
#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub task: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub wall_clock_s: f64,
    pub pass: bool,
    pub checks: Vec<Check>,
    pub reports: BTreeMap<String, Value>,
    #[serde(skip)]
    pub artifacts: Vec<Artifact>,
    #[serde(skip)]
    pub config: String,
}

impl RunSummary {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn report(&self, name: &str) -> Option<&Value> {
        self.reports.get(name)
    }

    /// `# kinlab <version> config_sha256=<hash> task=<task> seed=<seed>`.
    pub fn header(&self) -> String {
        format!(
            "# kinlab {} config_sha256={} task={} seed={}\n",
            self.version, self.config_hash, self.task, self.seed
        )
    }

    /// Write CSVs, the resolved config and `summary.toml` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let head = self.header();
        for a in &self.artifacts {
            std::fs::write(dir.join(&a.file), format!("{head}{}", a.body))?;
        }
        std::fs::write(dir.join("config.toml"), format!("{head}{}", self.config))?;
        let v = serde_json::to_value(self).map_err(|e| Error::Numerical(e.to_string()))?;
        let t = to_toml(&v).unwrap_or(toml::Value::Table(Default::default()));
        let body = toml::to_string(&t).map_err(|e| Error::Numerical(e.to_string()))?;
        std::fs::write(dir.join("summary.toml"), format!("{head}{body}"))?;
        Ok(())
    }
}

/// JSON → TOML, dropping nulls and long arrays (those live in the CSVs).
fn to_toml(v: &Value) -> Option<toml::Value> {
    Some(match v {
        Value::Null => return None,
        Value::Bool(b) => toml::Value::Boolean(*b),
        Value::Number(n) => match n.as_i64() {
            Some(i) => toml::Value::Integer(i),
            None => toml::Value::Float(n.as_f64().unwrap_or(f64::NAN)),
        },
        Value::String(s) => toml::Value::String(s.clone()),
        Value::Array(a) if a.len() > 64 => return None,
        Value::Array(a) => {
            let items: Vec<toml::Value> = a.iter().filter_map(to_toml).collect();
            if items.len() != a.len() {
                return None;
            }
            toml::Value::Array(items)
        }
        Value::Object(m) => toml::Value::Table(m.iter().filter_map(|(k, v)| Some((k.clone(), to_toml(v)?))).collect()),
    })
}

struct Ctx {
    checks: Vec<Check>,
    reports: BTreeMap<String, Value>,
    artifacts: Vec<Artifact>,
}

impl Ctx {
    fn new() -> Self {
        Self { checks: vec![], reports: BTreeMap::new(), artifacts: vec![] }
    }

    fn check(&mut self, name: &str, pass: bool, value: f64, bound: f64, detail: impl Into<String>) {
        self.checks.push(Check { name: name.into(), pass, value, bound, detail: detail.into(), skipped: false });
    }

    fn report(&mut self, name: &str, r: &impl Serialize) {
        self.reports.insert(name.into(), serde_json::to_value(r).unwrap_or(Value::Null));
    }

    fn artifact(&mut self, file: &str, body: String) {
        self.artifacts.push(Artifact { file: file.into(), body });
    }
}

/// Run `task` on `cfg`; relative paths in the config resolve against `base`.
pub fn run(cfg: &ExperimentConfig, task: Task, base: &Path) -> Result<RunSummary> {
    cfg.check()?;
    let t0 = Instant::now();
    let mut ctx = Ctx::new();
    match task {
        Task::Simulate => simulate(cfg, base, &mut ctx)?,
        Task::Gap => gap(cfg, base, &mut ctx)?,
        Task::Gcc => gcc(cfg, &mut ctx)?,
        Task::Cheeger => battery(cfg, &mut ctx)?,
        Task::Ineq => ineq(cfg, &mut ctx)?,
        Task::Hypo => hypo(cfg, &mut ctx)?,
        Task::Validate => {
            let list = validate_hypotheses(cfg, base)?;
            let mut csv = String::from("id,hypothesis,status,value,detail\n");
            for h in &list {
                let v = h.value.map_or(String::new(), |v| format!("{v:.10e}"));
                writeln!(csv, "{},{},{},{v},{}", h.id, h.name, h.status.as_str(), h.detail.replace(',', ";")).ok();
                ctx.check(h.id, h.status.ok(), h.value.unwrap_or(f64::NAN), f64::NAN, format!("{}: {}", h.status.as_str(), h.detail));
                if let (Status::NotApplicable, Some(c)) = (h.status, ctx.checks.last_mut()) {
                    c.skipped = true;
                }
            }
            ctx.report("hypotheses", &list);
            ctx.artifact("hypotheses.csv", csv);
        }
    }
    let pass = ctx.checks.iter().all(|c| c.pass);
    Ok(RunSummary {
        name: cfg.name.clone(),
        task: task.name().into(),
        version: VERSION.into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        wall_clock_s: t0.elapsed().as_secs_f64(),
        pass,
        checks: ctx.checks,
        reports: ctx.reports,
        artifacts: ctx.artifacts,
        config: cfg.resolved_toml(),
    })
}

fn need<'a, T>(block: &'a Option<T>, what: &str, task: Task) -> Result<&'a T> {
    block.as_ref().ok_or_else(|| Error::Invalid(format!("task `{}` needs a [{what}] block", task.name())))
}

/// Phase grid for a model block.
pub fn build_grid(m: &ModelBlock) -> Result<Arc<PhaseGrid>> {
    PhaseGrid::new(m.domain.clone(), &m.cells, m.velocity.clone(), m.potential.clone())
}

pub fn build_collision(m: &ModelBlock, grid: &PhaseGrid, base: &Path) -> Result<CollisionOperator> {
    match &m.collision {
        CollisionSpec::Bgk => Ok(CollisionOperator::bgk(&grid.vel)),
        CollisionSpec::FokkerPlanck => CollisionOperator::fokker_planck(&grid.vel),
        CollisionSpec::Kernel { path } => {
            let p: PathBuf = base.join(path);
            CollisionOperator::scattering(&grid.vel, kernel_from_csv(&p)?)
        }
    }
}

/// Model and initial datum.
pub fn build_model(m: &ModelBlock, base: &Path) -> Result<(Model, Field)> {
    if matches!(m.domain, SpatialDomain::Disc2D { .. }) {
        return Err(Error::Invalid("grid evolution is not available on the disc; use the particle control check".into()));
    }
    let grid = build_grid(m)?;
    let l = build_collision(m, &grid, base)?;
    let model = Model::new(&grid, l, &m.sigma, m.alpha)?;
    let f0 = initial_field(&grid, &m.initial)?;
    Ok((model, f0))
}

fn unit_box(domain: &SpatialDomain) -> ([f64; 2], [f64; 2]) {
    match *domain {
        SpatialDomain::Torus1D { length } => ([0.0, 0.0], [length, 1.0]),
        SpatialDomain::Interval1D { a, b } => ([a, 0.0], [b - a, 1.0]),
        SpatialDomain::Torus2D { lengths } => ([0.0, 0.0], lengths),
        SpatialDomain::Disc2D { radius } => ([-radius, -radius], [2.0 * radius, 2.0 * radius]),
    }
}

pub fn initial_field(grid: &Arc<PhaseGrid>, spec: &InitialSpec) -> Result<Field> {
    let nv = grid.nv();
    match spec {
        InitialSpec::Cosine { amplitude, mode } => {
            let (lo, len) = unit_box(&grid.space.domain);
            let mut data = vec![0.0; grid.len()];
            for (c, x) in grid.space.centers.iter().enumerate() {
                let xi = [(x[0] - lo[0]) / len[0], (x[1] - lo[1]) / len[1]];
                let wave = (2.0 * PI * (mode[0] * xi[0] + mode[1] * xi[1])).cos();
                for j in 0..nv {
                    let k = grid.idx(c, j);
                    data[k] = grid.finf[k] * (1.0 + amplitude * wave * (1.0 + grid.vel.nodes[j][0]));
                }
            }
            Field::from_vec(grid, data)
        }
        InitialSpec::Random { seed } => {
            let r = kinlab::evolve::random_zero_mass(grid, *seed);
            Field::from_vec(grid, r.data.iter().zip(&grid.finf).map(|(a, b)| a + b).collect())
        }
    }
}

fn simulate(cfg: &ExperimentConfig, base: &Path, ctx: &mut Ctx) -> Result<()> {
    let m = need(&cfg.model, "model", Task::Simulate)?;
    let evo = need(&cfg.evolution, "evolution", Task::Simulate)?;
    let num = &cfg.numerical;
    let (model, f0) = build_model(m, base)?;
    let rep = run_decay(&model, &f0, evo)?;
    let mut csv = Vec::new();
    rep.write_csv(&mut csv)?;
    ctx.artifact("decay.csv", String::from_utf8_lossy(&csv).into_owned());
    let lam = rep.lambda_fit.unwrap_or(f64::NAN);
    ctx.check("lambda_fit_positive", lam > 0.0, lam, 0.0, "fitted decay rate of the norm");
    let r2 = rep.r2.unwrap_or(f64::NAN);
    ctx.check("fit_r2", r2 >= num.r2_min, r2, num.r2_min, "goodness of the log-linear fit");
    let worst = monotonicity_defect(&rep);
    ctx.check("norm_monotone", worst <= 1e-8, worst, 1e-8, "largest relative norm increase between records");
    let mass0 = f0.mass().abs().max(1e-300);
    ctx.check("mass_drift", rep.mass_drift <= 1e-8 * mass0, rep.mass_drift / mass0, 1e-8, "relative mass change over the run");
    if num.battery > 0 {
        let horizon = num.battery_horizon.unwrap_or(rep.eta_horizon);
        let extra = if num.battery_tail { vec![Field::from_vec(&model.grid, rep.final_state.clone())?] } else { vec![] };
        let b = eta_battery(&model, evo.dt, evo.splitting, horizon, num.battery, cfg.seed, &extra)?;
        let mut bc = String::from("index,eta\n");
        for (k, e) in b.etas.iter().enumerate() {
            writeln!(bc, "{k},{e:.16e}").ok();
        }
        ctx.artifact("battery.csv", bc);
        let cert = b.certificate.map_or(f64::NAN, |c| c.lambda);
        // the certificate bounds the squared norm, the fit the norm itself
        let bound = (1.0 + num.certificate_tolerance) * 2.0 * lam;
        ctx.check(
            "certificate_vs_fit",
            cert.is_finite() && cert <= bound,
            cert,
            bound,
            format!("Λ_cert = {cert:.6} vs Λ_fit = {lam:.6} (squared-norm rate 2Λ_fit = {:.6}), η_min = {:.6}", 2.0 * lam, b.eta_min),
        );
        ctx.report("battery", &b);
    }
    if num.compute_gap {
        let g = generator_spectral_gap(&assemble_generator(&model)?)?;
        ctx.check("gap_positive", g.gap > 0.0, g.gap, 0.0, "generator gap on mass-zero data");
        let rel = (g.gap - lam).abs() / lam.abs();
        ctx.check(
            "gap_vs_fit",
            rel <= num.gap_tolerance,
            rel,
            num.gap_tolerance,
            format!("gap {:.6} vs Λ_fit {lam:.6}", g.gap),
        );
        ctx.report("gap", &g);
    }
    ctx.report("decay", &rep);
    Ok(())
}

/// Largest `‖f_{k+1}‖/‖f_k‖ − 1` over the recorded series.
pub fn monotonicity_defect(rep: &DecayReport) -> f64 {
    rep.norms.windows(2).map(|w| if w[0] > 0.0 { w[1] / w[0] - 1.0 } else { 0.0 }).fold(0.0, f64::max)
}

fn gap(cfg: &ExperimentConfig, base: &Path, ctx: &mut Ctx) -> Result<()> {
    let m = need(&cfg.model, "model", Task::Gap)?;
    let (model, _) = build_model(m, base)?;
    let gen = assemble_generator(&model)?;
    let g = generator_spectral_gap(&gen)?;
    ctx.check("gap_positive", g.gap > 0.0, g.gap, 0.0, "generator gap on mass-zero data");
    ctx.check(
        "equilibrium_in_kernel",
        gen.equilibrium_residual() <= 1e-8,
        gen.equilibrium_residual(),
        1e-8,
        "‖G f_∞‖",
    );
    ctx.check("mass_conserved", gen.mass_residual() <= 1e-8, gen.mass_residual(), 1e-8, "mass functional of G");
    ctx.artifact(
        "gap.csv",
        format!(
            "gap,rightmost_re,rightmost_im,unknowns\n{:.12e},{:.12e},{:.12e},{}\n",
            g.gap, g.rightmost.0, g.rightmost.1, g.unknowns
        ),
    );
    ctx.report("gap", &g);
    Ok(())
}

fn flow_of(m: &ModelBlock) -> Result<Flow> {
    Flow::new(m.domain.clone(), m.potential.clone())
}

/// Control configuration from the blocks; `scale` multiplies the sampling density.
pub fn control_config(c: &ControlBlock, m: &ModelBlock, seed: u64, scale: usize) -> ControlConfig {
    let mut cc = ControlConfig::new(
        c.chi.clone(),
        c.region.clone(),
        c.horizon,
        c.dt,
        velocity_samples(&m.velocity, c.velocities * scale),
    );
    cc.w = c.w;
    cc.positions = c.positions * scale;
    cc.refine = c.refine;
    cc.threshold = c.threshold;
    cc.particles = c.particles;
    cc.seed = seed;
    cc
}

/// Verdict of a control report: deterministic runs use the report's own flag, particle runs
/// require a lower confidence bound strictly above the threshold.
pub fn gcc_verdict(r: &GccReport) -> bool {
    match r.mode {
        GccMode::Deterministic => r.pass,
        GccMode::Full => r.flagged == 0 && r.lower_bound > r.threshold,
    }
}

pub fn run_control(c: &ControlBlock, m: &ModelBlock, seed: u64) -> Result<(GccReport, ControlConfig, Flow)> {
    let flow = flow_of(m)?;
    let cc = control_config(c, m, seed, 1);
    let r = match c.mode {
        GccMode::Deterministic => gcc_deterministic(&cc, &flow)?,
        GccMode::Full => {
            let pm = ParticleModel::new(flow.clone(), m.alpha.unwrap_or(0.0), m.sigma.clone(), c.law)?;
            let ics: Vec<([f64; 2], [f64; 2])> = c.initial.iter().map(|q| ([q[0], q[1]], [q[2], q[3]])).collect();
            gcc_full_monte_carlo(&cc, &pm, &ics)?
        }
    };
    Ok((r, cc, flow))
}

fn gcc(cfg: &ExperimentConfig, ctx: &mut Ctx) -> Result<()> {
    let m = need(&cfg.model, "model", Task::Gcc)?;
    let c = need(&cfg.control, "control", Task::Gcc)?;
    let (r, cc, flow) = run_control(c, m, cfg.seed)?;
    let verdict = gcc_verdict(&r);
    let expect = c.expect_pass.unwrap_or(true);
    ctx.check(
        "gcc",
        verdict == expect,
        r.c_min,
        r.threshold,
        format!("control condition {} (expected {})", pass_word(verdict), pass_word(expect)),
    );
    if !verdict && r.mode == GccMode::Deterministic {
        let w = control_integral(&cc, &flow, r.argmin_x, r.argmin_v)?;
        ctx.check(
            "witness",
            expect || w == 0.0,
            w,
            0.0,
            format!("x0 = {:?}, v0 = {:?}", r.argmin_x, r.argmin_v),
        );
    }
    if r.mode == GccMode::Full && !expect {
        let floor = r.half_width.max(1e-12);
        ctx.check(
            "below_noise_floor",
            r.c_min <= floor,
            r.c_min,
            floor,
            "particle estimate indistinguishable from zero",
        );
    }
    let mut csv = String::from("x1,x2,v1,v2,integral,stderr\n");
    for s in &r.per_sample {
        writeln!(csv, "{:.10e},{:.10e},{:.10e},{:.10e},{:.12e},{:.6e}", s.x[0], s.x[1], s.v[0], s.v[1], s.integral, s.stderr).ok();
    }
    ctx.artifact("gcc.csv", csv);
    if c.stability && r.mode == GccMode::Deterministic {
        let r2 = gcc_deterministic(&control_config(c, m, cfg.seed, 2), &flow)?;
        let rel = (r2.c_min - r.c_min).abs() / r.c_min.abs().max(1e-300);
        ctx.check("sampling_stability", rel <= 0.1, rel, 0.1, format!("c_min {:.6} → {:.6} under doubled sampling", r.c_min, r2.c_min));
    }
    if let (Some(p), true) = (&c.psi, verdict && r.mode == GccMode::Deterministic) {
        let mut rows = String::from("steps,dt,max_deviation\n");
        let mut devs = vec![];
        for (i, &n) in p.steps.iter().enumerate() {
            let mut cn = cc.clone();
            cn.dt = c.horizon / n as f64;
            cn.positions = p.positions;
            cn.velocities = velocity_samples(&m.velocity, p.velocities);
            let psi = build_psi(&cn, &flow)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let total = psi.sample_points.len();
            let pts: Vec<_> = rand::seq::index::sample(&mut rng, total, p.samples.min(total))
                .into_iter()
                .map(|i| psi.sample_points[i])
                .collect();
            let nr = psi_normalization_check(&psi, &pts)?;
            writeln!(rows, "{n},{:.10e},{:.10e}", cn.dt, nr.max_deviation).ok();
            ctx.check(
                &format!("psi_normalization_{n}"),
                nr.max_deviation <= p.tolerance,
                nr.max_deviation,
                p.tolerance,
                format!("max |(1/T)∫ψ − 1| at dt = T/{n}"),
            );
            if i == 0 {
                let top = psi.samples(4)?.iter().map(|s| s.2).fold(0.0, f64::max);
                ctx.check("psi_bound", top <= psi.bound * (1.0 + 1e-12), top, psi.bound, "0 ≤ ψ ≤ ‖χw‖_∞ T / c_min");
            }
            devs.push(nr.max_deviation);
        }
        for (k, w) in devs.windows(2).enumerate() {
            let ratio = w[1] / w[0];
            let halving = (p.steps[k + 1] as f64 / p.steps[k] as f64 - 2.0).abs() < 1e-12;
            if halving {
                ctx.check(
                    &format!("psi_first_order_{}", p.steps[k + 1]),
                    (0.35..=0.65).contains(&ratio),
                    ratio,
                    0.5,
                    "deviation ratio when dt halves (0.5 ± 30%)",
                );
            }
        }
        ctx.artifact("psi.csv", rows);
    }
    ctx.report("gcc", &r);
    Ok(())
}

fn pass_word(b: bool) -> &'static str {
    if b {
        "pass"
    } else {
        "fail"
    }
}

/// Positive profile `M(1 + r)`, `r ∈ (−0.9, 2)`.
fn positive_profile(l: &CollisionOperator, rng: &mut ChaCha8Rng) -> Vec<f64> {
    l.vel.m.iter().map(|m| m * (1.0 + rng.gen_range(-0.9..2.0))).collect()
}

fn battery(cfg: &ExperimentConfig, ctx: &mut Ctx) -> Result<()> {
    let b = need(&cfg.battery, "battery", Task::Cheeger)?;
    let span = b.m_max - b.m_min + 1;
    let rows: Vec<(usize, usize, u64, f64, f64, bool)> = (0..b.kernels)
        .into_par_iter()
        .map(|k| -> Result<_> {
            let m = b.m_min + k % span;
            let seed = cfg.seed.wrapping_add(k as u64);
            let l = if b.reversible { random_reversible_kernel(m, seed)? } else { random_kernel(m, seed)? };
            let reversible = kinlab::collision::detailed_balance_check(&l).pass;
            match b.check {
                BatteryCheck::Cheeger => {
                    let lam = spectral_gap(&l)?.lambda1;
                    let phi = cheeger_constant(&l)?.phi;
                    Ok((k, m, seed, lam, phi, reversible))
                }
                BatteryCheck::Gamma2 => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
                    let mut worst = f64::INFINITY;
                    for _ in 0..b.profiles {
                        worst = worst.min(gamma2_check(&l, &positive_profile(&l, &mut rng))?.min);
                    }
                    Ok((k, m, seed, worst, f64::NAN, reversible))
                }
            }
        })
        .collect::<Result<_>>()?;
    let mut csv = String::new();
    let applicable: Vec<_> = rows.iter().filter(|r| r.5).collect();
    match b.check {
        BatteryCheck::Cheeger => {
            csv.push_str("kernel,m,seed,lambda1,phi,margin,reversible\n");
            let mut worst = f64::INFINITY;
            for r in &rows {
                let margin = 2.0 * r.3 - r.4 * r.4;
                writeln!(csv, "{},{},{},{:.12e},{:.12e},{:.6e},{}", r.0, r.1, r.2, r.3, r.4, margin, r.5).ok();
                if r.5 {
                    worst = worst.min(margin);
                }
            }
            ctx.check(
                "cheeger",
                !applicable.is_empty() && worst >= -b.tolerance,
                worst,
                -b.tolerance,
                format!("min 2λ₁ − Φ² over {} reversible kernels ({} not applicable)", applicable.len(), rows.len() - applicable.len()),
            );
        }
        BatteryCheck::Gamma2 => {
            csv.push_str("kernel,m,seed,gamma2_min,reversible\n");
            let mut worst = f64::INFINITY;
            for r in &rows {
                writeln!(csv, "{},{},{},{:.6e},{}", r.0, r.1, r.2, r.3, r.5).ok();
                if r.5 {
                    worst = worst.min(r.3);
                }
            }
            ctx.check(
                "gamma2",
                !applicable.is_empty() && worst >= -b.tolerance,
                worst,
                -b.tolerance,
                format!("pointwise min of Mℒ(f²/M) − 2fℒf over {} reversible kernels ({} not applicable)", applicable.len(), rows.len() - applicable.len()),
            );
        }
    }
    ctx.artifact("battery.csv", csv);
    Ok(())
}

/// Cell averages of the configured right-hand side with the mean removed.
pub fn rhs_cells(dom: &WeightedDomain, rhs: &RhsSpec) -> Vec<f64> {
    let RhsSpec::SineProduct { k } = *rhs;
    let (lo, hi) = (dom.lo, dom.hi);
    let dim = dom.dim;
    let mut g = dom.cell_average(|x| {
        let mut v = (2.0 * PI * k * (x[0] - lo[0]) / (hi[0] - lo[0])).sin();
        if dim == 2 {
            v *= (2.0 * PI * k * (x[1] - lo[1]) / (hi[1] - lo[1])).sin();
        }
        v
    });
    let m = dom.integral(&g) / dom.integral(&vec![1.0; g.len()]);
    g.iter_mut().for_each(|x| *x -= m);
    g
}

fn spread(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    (max - min) / max.abs()
}

fn ineq(cfg: &ExperimentConfig, ctx: &mut Ctx) -> Result<()> {
    let q = need(&cfg.ineq, "ineq", Task::Ineq)?;
    let domains: Vec<WeightedDomain> = q
        .resolutions
        .iter()
        .map(|r| {
            let cells = if matches!(q.shape, BoxDomain::Interval { .. }) { [r[0], 1] } else { *r };
            WeightedDomain::new(q.shape.clone(), cells, q.potential.clone())
        })
        .collect::<Result<_>>()?;
    let mut csv = String::from("check,nx,ny,constant,residual,extra\n");
    for kind in &q.checks {
        match kind {
            IneqKind::Divergence => {
                let mut cds = vec![];
                for dom in &domains {
                    let g = rhs_cells(dom, &q.rhs);
                    let s = solve_divergence_h1(dom, &g, &q.divergence)?;
                    let tag = format!("{}x{}", dom.n[0], dom.n[1]);
                    ctx.check(&format!("divergence_residual_{tag}"), s.residual <= q.residual_tolerance, s.residual, q.residual_tolerance, "‖∇·F − g‖/‖g‖");
                    ctx.check(&format!("divergence_boundary_{tag}"), s.boundary_max == 0.0, s.boundary_max, 0.0, "max |F| on boundary faces");
                    writeln!(csv, "divergence,{},{},{:.10e},{:.6e},{:.6e}", dom.n[0], dom.n[1], s.c_d, s.residual, s.residual_raw).ok();
                    ctx.report(&format!("divergence_{tag}"), &s);
                    cds.push(s.c_d);
                }
                if cds.len() > 1 {
                    let sp = spread(&cds);
                    ctx.check("divergence_constant_spread", sp <= q.spread_tolerance, sp, q.spread_tolerance, format!("C_D across resolutions: {cds:.4?}"));
                }
            }
            IneqKind::PoincareLions => {
                let mut cs = vec![];
                for dom in &domains {
                    let r = poincare_lions_constant(dom, q.trials, cfg.seed)?;
                    let rmax = r.details.get("random_max").copied().unwrap_or(f64::NAN);
                    let tag = format!("{}x{}", dom.n[0], dom.n[1]);
                    ctx.check(
                        &format!("poincare_lions_{tag}"),
                        r.constant > 0.0 && rmax <= r.constant * (1.0 + 1e-8),
                        r.constant,
                        rmax,
                        "random quotients stay below the computed constant",
                    );
                    writeln!(csv, "poincare_lions,{},{},{:.10e},,{:.6e}", dom.n[0], dom.n[1], r.constant, rmax).ok();
                    ctx.report(&format!("poincare_lions_{tag}"), &r);
                    cs.push(r.constant);
                }
                if cs.len() > 1 {
                    let sp = spread(&cs);
                    ctx.check("poincare_lions_spread", sp <= q.spread_tolerance, sp, q.spread_tolerance, format!("C_PL across resolutions: {cs:.4?}"));
                }
            }
            IneqKind::WeightedPoincare => {
                for dom in &domains {
                    let r = weighted_poincare_check(dom)?;
                    let tag = format!("{}x{}", dom.n[0], dom.n[1]);
                    ctx.check(&format!("weighted_poincare_{tag}"), r.constant > 0.0, r.constant, 0.0, "smallest nonzero eigenvalue");
                    writeln!(csv, "weighted_poincare,{},{},{:.10e},,", dom.n[0], dom.n[1], r.constant).ok();
                    ctx.report(&format!("weighted_poincare_{tag}"), &r);
                }
            }
            IneqKind::Korn => {
                let mut cs = vec![];
                for dom in &domains {
                    let r = korn_constant(dom, q.korn_constraint)?;
                    let tag = format!("{}x{}", dom.n[0], dom.n[1]);
                    ctx.check(&format!("korn_{tag}"), r.constant >= 1.0 - 1e-9, r.constant, 1.0, "Korn constant is at least 1");
                    writeln!(csv, "korn,{},{},{:.10e},,", dom.n[0], dom.n[1], r.constant).ok();
                    ctx.report(&format!("korn_{tag}"), &r);
                    cs.push(r.constant);
                }
                if q.oracle_degree > 0 {
                    let dom = domains.last().expect("nonempty");
                    let poly = korn_polynomial_oracle(dom, q.oracle_degree, q.korn_constraint)?;
                    let c = *cs.last().expect("nonempty");
                    let rel = (c / poly - 1.0).abs();
                    ctx.check("korn_oracle", rel <= q.oracle_tolerance, rel, q.oracle_tolerance, format!("grid {c:.5} vs polynomial degree {} {poly:.5}", q.oracle_degree));
                }
            }
            IneqKind::Stokes => {
                for dom in &domains {
                    let (lo, hi) = (dom.lo, dom.hi);
                    let s = stokes_solve(dom, |x| {
                        let a = PI * (x[0] - lo[0]) / (hi[0] - lo[0]);
                        let b = PI * (x[1] - lo[1]) / (hi[1] - lo[1]);
                        [a.sin() * (2.0 * b).sin(), -(2.0 * a).sin() * b.sin()]
                    })?;
                    let tag = format!("{}x{}", dom.n[0], dom.n[1]);
                    ctx.check(&format!("stokes_divergence_{tag}"), s.div_max <= q.residual_tolerance, s.div_max, q.residual_tolerance, "max |∇·u|");
                    writeln!(csv, "stokes,{},{},{:.10e},{:.6e},{}", dom.n[0], dom.n[1], s.c_s, s.div_max, s.outer_iterations).ok();
                    ctx.report(&format!("stokes_{tag}"), &s);
                }
            }
        }
    }
    ctx.artifact("ineq.csv", csv);
    Ok(())
}

fn hypo(cfg: &ExperimentConfig, ctx: &mut Ctx) -> Result<()> {
    let h = need(&cfg.hypo, "hypo", Task::Hypo)?;
    if let Some(c) = &h.commutators {
        let sys = build_system(h.kappa, h.confinement, h.delta0)?;
        let rep = verify_identities(&sys, &c.intervals, cfg.seed)?;
        for r in &rep.identities {
            ctx.check(
                &format!("identity {}", r.name),
                r.pass,
                r.order,
                rep.min_order,
                format!("exact residual {:.2e} (≤ {:.0e}), observed order {:.2}", r.exact_residual, rep.exact_tolerance, r.order),
            );
        }
        let mut csv = Vec::new();
        rep.write_csv(&mut csv)?;
        ctx.artifact("commutators.csv", String::from_utf8_lossy(&csv).into_owned());
        let anti = transport_antisymmetry(&h.confinement, c.antisymmetry_n, c.antisymmetry_pairs, cfg.seed)?;
        ctx.check("transport_antisymmetry", anti <= 1e-10, anti, 1e-10, "max |⟨Bf,g⟩ + ⟨f,Bg⟩| relative to ‖f‖‖g‖");
        if c.poincare_n > 0 {
            let p = weighted_poincare_2d_check(c.poincare_n, sys.half_width, c.poincare_trials, cfg.seed)?;
            let herm = p.details["hermite_x_quotient"];
            let rmin = p.details["random_min_quotient"];
            ctx.check("poincare_2d_positive", p.constant > 0.0, p.constant, 0.0, "smallest weighted quotient");
            ctx.check("poincare_2d_hermite", (herm / 2.0 - 1.0).abs() <= 0.05, herm, 2.0, "quotient of h = x against its exact value 2");
            ctx.check("poincare_2d_random", rmin >= p.constant * (1.0 - 1e-9), rmin, p.constant, "random zero-mean data respect the constant");
            ctx.report("poincare_2d", &p);
        }
        ctx.report("commutators", &rep);
    }
    if let Some(scan) = &h.scan {
        let s = gap_vs_degeneracy(scan)?;
        let mut csv = Vec::new();
        s.write_csv(&mut csv)?;
        ctx.artifact("gap_scan.csv", String::from_utf8_lossy(&csv).into_owned());
        for c in &s.cells {
            if let Some(e) = &c.error {
                ctx.check(&format!("cell p={:?} {}x{}", c.p, c.nx, c.nv), false, f64::NAN, f64::NAN, e.clone());
            }
        }
        let mut ps: Vec<f64> = scan.exponents.clone();
        ps.sort_by(f64::total_cmp);
        if ps.first() == Some(&1.0) {
            for r in &scan.resolutions {
                let g = s.gap(Some(1.0), *r).unwrap_or(f64::NAN);
                ctx.check(&format!("gap_p1_positive_{}x{}", r[0], r[1]), g > 0.0, g, 0.0, "p = 1 gap");
            }
            if scan.resolutions.len() > 1 {
                let v = s.variation(Some(1.0), &scan.resolutions).unwrap_or(f64::NAN);
                ctx.check("gap_p1_stable", v <= h.variation_tolerance, v, h.variation_tolerance, "relative change between the two finest resolutions");
            }
        }
        for r in &scan.resolutions {
            let tag = format!("{}x{}", r[0], r[1]);
            for w in ps.windows(2) {
                let (a, b) = (s.gap(Some(w[0]), *r).unwrap_or(f64::NAN), s.gap(Some(w[1]), *r).unwrap_or(f64::NAN));
                ctx.check(&format!("gap_p{}_below_p{}_{tag}", w[1], w[0]), b < a, b, a, "gap decreases with the degeneracy exponent");
            }
            if scan.include_constant {
                let top = s.gap(None, *r).unwrap_or(f64::NAN);
                let best = ps.iter().filter_map(|p| s.gap(Some(*p), *r)).fold(f64::NEG_INFINITY, f64::max);
                ctx.check(&format!("gap_constant_max_{tag}"), top >= best, top, best, "σ ≡ 1 has the largest gap");
            }
        }
        ctx.report("scan", &s);
    }
    Ok(())
}
