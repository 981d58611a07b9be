//! Hypothesis battery H1–H6 plus the Γ₂ precondition for a model block.

use crate::config::{ControlBlock, ExperimentConfig, ModelBlock};
use crate::run::{build_collision, build_grid, gcc_verdict, run_control};
use kinlab::collision::{detailed_balance_check, gamma2_check, spectral_gap};
use kinlab::phase::{
    build_equilibrium, poincare_constant, regularity_check, Region, SpatialDomain, SpatialGrid, VelocityGrid,
};
use kinlab::transport::{transport_step, BoundaryOperator, TransportScheme};
use kinlab::{CollisionOperator, Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    NotApplicable,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pass => "pass",
            Self::Fail => "fail",
            Self::NotApplicable => "n/a",
        }
    }

    /// Failures are the only non-ok outcome.
    pub fn ok(self) -> bool {
        self != Self::Fail
    }

    fn of(b: bool) -> Self {
        if b {
            Self::Pass
        } else {
            Self::Fail
        }
    }
}

/// One line of the checklist.
#[derive(Clone, Debug, Serialize)]
pub struct Hypothesis {
    pub id: &'static str,
    pub name: &'static str,
    pub status: Status,
    pub value: Option<f64>,
    pub detail: String,
}

fn entry(id: &'static str, name: &'static str, status: Status, value: Option<f64>, detail: impl Into<String>) -> Hypothesis {
    Hypothesis { id, name, status, value, detail: detail.into() }
}

/// Numerical errors become failures of the hypothesis they belong to.
fn guarded(id: &'static str, name: &'static str, r: Result<Hypothesis>) -> Result<Hypothesis> {
    match r {
        Ok(h) => Ok(h),
        Err(Error::Numerical(m)) | Err(Error::Capacity(m)) => Ok(entry(id, name, Status::Fail, None, m)),
        Err(e) => Err(e),
    }
}

/// Per-hypothesis verdicts with the measured constants.
pub fn validate_hypotheses(cfg: &ExperimentConfig, base: &Path) -> Result<Vec<Hypothesis>> {
    let m = cfg
        .model
        .as_ref()
        .ok_or_else(|| Error::Invalid("validation needs a [model] block".into()))?;
    m.domain.validate()?;
    m.potential.validate()?;
    let disc = matches!(m.domain, SpatialDomain::Disc2D { .. });
    let vel = VelocityGrid::new(m.velocity.clone())?;
    let collision = if disc {
        match &m.collision {
            crate::config::CollisionSpec::Bgk => CollisionOperator::bgk(&vel),
            crate::config::CollisionSpec::FokkerPlanck => CollisionOperator::fokker_planck(&vel)?,
            crate::config::CollisionSpec::Kernel { path } => {
                CollisionOperator::scattering(&vel, kinlab::collision::kernel_from_csv(&base.join(path))?)?
            }
        }
    } else {
        let g = build_grid(m)?;
        build_collision(m, &g, base)?
    };
    let mut out = vec![guarded("H1", "geometry", h1(m))?];
    out.push(guarded("H2", "equilibrium", h2(m, &collision, disc))?);
    out.push(guarded("H3", "local spectral gap", h3(&collision))?);
    out.push(guarded("H4", "boundary contraction", h4(m, disc, cfg.seed))?);
    out.push(guarded("H5'", "control condition", h5(m, cfg.control.as_ref(), cfg.seed))?);
    out.push(guarded("H6", "macroscopic coercivity", h6(m, disc))?);
    out.push(guarded("G2", "Γ₂ condition", gamma2(&collision, cfg.seed))?);
    Ok(out)
}

fn h1(m: &ModelBlock) -> Result<Hypothesis> {
    if m.potential.is_zero() {
        return Ok(entry("H1", "geometry", Status::Pass, None, "domain valid, φ = 0"));
    }
    if matches!(m.domain, SpatialDomain::Disc2D { .. }) {
        return Ok(entry("H1", "geometry", Status::Pass, None, "disc with smooth boundary"));
    }
    let space = SpatialGrid::new(m.domain.clone(), &m.cells)?;
    let r = regularity_check(&space, &m.potential, &Region::All, 0.1, 10.0)?;
    Ok(entry(
        "H1",
        "geometry",
        Status::of(r.pass),
        Some(r.ratio),
        format!("sup|∇²φ|/(1+|∇φ|) = {:.4}, admissible ε = {:.3e}", r.ratio, r.eps_admissible),
    ))
}

fn h2(m: &ModelBlock, l: &CollisionOperator, disc: bool) -> Result<Hypothesis> {
    let res = l.equilibrium_residual();
    if disc {
        return Ok(entry("H2", "equilibrium", Status::of(res <= 1e-10), Some(res), "ℒM residual (no grid transport on the disc)"));
    }
    let g = build_grid(m)?;
    let b = match m.alpha {
        Some(a) if !g.boundary.is_empty() => Some(BoundaryOperator::uniform(&g, a)?),
        _ => None,
    };
    let scheme = TransportScheme::new(&g, b)?;
    let feq = build_equilibrium(&g);
    let dt = scheme.max_dt().min(0.01);
    let f1 = transport_step(&scheme, &feq, dt)?;
    let drift = f1.data.iter().zip(&feq.data).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    let worst = res.max(drift);
    Ok(entry(
        "H2",
        "equilibrium",
        Status::of(worst <= 1e-10),
        Some(worst),
        format!("ℒM residual {res:.2e}, transport drift of f_∞ {drift:.2e}"),
    ))
}

fn h3(l: &CollisionOperator) -> Result<Hypothesis> {
    let r = spectral_gap(l)?;
    Ok(entry("H3", "local spectral gap", Status::of(r.lambda1 > 1e-12), Some(r.lambda1), "λ₁ of ℒ"))
}

fn h4(m: &ModelBlock, disc: bool, seed: u64) -> Result<Hypothesis> {
    if !m.domain.has_boundary() {
        return Ok(entry("H4", "boundary contraction", Status::NotApplicable, None, "no boundary"));
    }
    let Some(alpha) = m.alpha else {
        return Ok(entry("H4", "boundary contraction", Status::Pass, Some(1.0), "specular reflection is an isometry"));
    };
    if disc {
        return Ok(entry(
            "H4",
            "boundary contraction",
            Status::NotApplicable,
            None,
            format!("disc walls (α = {alpha}) are sampled by particles only"),
        ));
    }
    let g = build_grid(m)?;
    let op = BoundaryOperator::uniform(&g, alpha)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = op.contraction_check(200, &mut rng)?;
    let compat = op.boundary_compatibility_check(200, &mut rng)?;
    let mass = op.mass_defect();
    let pass = c <= 1.0 + 1e-12 && compat.max_ratio <= 1.0 + 1e-6 && mass <= 1e-12;
    Ok(entry(
        "H4",
        "boundary contraction",
        Status::of(pass),
        Some(c),
        format!("‖R‖_ν ≤ {c:.6}, compatibility ratio {:.6}, mass defect {mass:.2e}", compat.max_ratio),
    ))
}

fn h5(m: &ModelBlock, c: Option<&ControlBlock>, seed: u64) -> Result<Hypothesis> {
    let Some(c) = c else {
        return Ok(entry("H5'", "control condition", Status::NotApplicable, None, "no [control] block"));
    };
    let (r, _, _) = run_control(c, m, seed)?;
    let ok = gcc_verdict(&r);
    let detail = if ok {
        format!("c_min = {:.4} ≥ {}", r.c_min, r.threshold)
    } else {
        format!("witness x0 = {:?}, v0 = {:?}, integral {:.3e}", r.argmin_x, r.argmin_v, r.c_min)
    };
    Ok(entry("H5'", "control condition", Status::of(ok), Some(r.c_min), detail))
}

fn h6(m: &ModelBlock, disc: bool) -> Result<Hypothesis> {
    if disc {
        return Ok(entry("H6", "macroscopic coercivity", Status::NotApplicable, None, "no spatial grid on the disc"));
    }
    let space = SpatialGrid::new(m.domain.clone(), &m.cells)?;
    let sigma = m.sigma.sample(&space)?;
    let mask: Vec<bool> = sigma.iter().map(|s| *s > 0.0).collect();
    if !mask.iter().any(|b| *b) {
        return Ok(entry("H6", "macroscopic coercivity", Status::Fail, Some(0.0), "σ vanishes everywhere"));
    }
    let r = poincare_constant(&space, &m.potential, &Region::Mask { cells: mask }, false);
    match r {
        Ok(p) => Ok(entry("H6", "macroscopic coercivity", Status::Pass, Some(p.lambda2), format!("Poincaré λ₂ on Σ over {} cells", p.cells))),
        Err(Error::Invalid(msg)) => Ok(entry("H6", "macroscopic coercivity", Status::Fail, None, msg)),
        Err(e) => Err(e),
    }
}

fn gamma2(l: &CollisionOperator, seed: u64) -> Result<Hypothesis> {
    let db = detailed_balance_check(l);
    if !db.pass {
        return Ok(entry(
            "G2",
            "Γ₂ condition",
            Status::NotApplicable,
            Some(db.violation),
            "kernel violates detailed balance",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..16 {
        let f: Vec<f64> = l.vel.m.iter().map(|m| m * (1.0 + rng.gen_range(-0.9..2.0))).collect();
        worst = worst.min(gamma2_check(l, &f)?.min);
    }
    Ok(entry("G2", "Γ₂ condition", Status::of(worst >= -1e-10), Some(worst), "min over 16 positive profiles"))
}
