use kinlab::collision::spectral_gap;
use kinlab::evolve::{run_decay, EvolutionConfig, Model, Splitting};
use kinlab::phase::{build_equilibrium, DegeneracyWeight, Field, PhaseGrid, Potential, SpatialDomain, VelocityGrid, VelocitySpace};
use kinlab::CollisionOperator;
use std::f64::consts::PI;

fn torus_circle(cells: usize, nv: usize) -> std::sync::Arc<PhaseGrid> {
    PhaseGrid::new(
        SpatialDomain::Torus2D { lengths: [1.0, 1.0] },
        &[cells, cells],
        VelocitySpace::Circle { n: nv },
        Potential::Zero,
    )
    .unwrap()
}

#[test]
fn x_uniform_data_relax_at_the_bgk_rate() {
    let grid = torus_circle(4, 8);
    let l = CollisionOperator::bgk(&grid.vel);
    let model = Model::new(&grid, l, &DegeneracyWeight::Constant { value: 1.0 }, None).unwrap();
    let f0 = Field::from_fn(&grid, |_, v| 1.0 + 0.4 * v[0] - 0.2 * v[1] * v[1]);
    let rep = run_decay(&model, &f0, &EvolutionConfig::new(1e-3, 2.0)).unwrap();
    for (t, n) in rep.times.iter().zip(&rep.norms) {
        let expect = rep.norms[0] * (-t).exp();
        assert!((n / expect - 1.0).abs() <= 0.01, "t = {t}: {n} vs {expect}");
    }
}

#[test]
fn harmonic_equilibrium_has_unit_mass() {
    let grid = PhaseGrid::new(
        SpatialDomain::Interval1D { a: -6.0, b: 6.0 },
        &[96],
        VelocitySpace::TruncatedLine { v_max: 6.0, n: 48 },
        Potential::Harmonic { omega: 1.0 },
    )
    .unwrap();
    let feq = build_equilibrium(&grid);
    assert!((feq.mass() - 1.0).abs() <= 1e-8);
    let peak = (0..grid.len()).map(|i| feq.data[i]).fold(0.0, f64::max);
    assert!(peak > 0.0);
}

#[test]
fn fokker_planck_gap_is_one_on_a_wide_grid() {
    let vel = VelocityGrid::new(VelocitySpace::TruncatedLine { v_max: 6.0, n: 128 }).unwrap();
    let lam = spectral_gap(&CollisionOperator::fokker_planck(&vel).unwrap()).unwrap().lambda1;
    assert!((lam - 1.0).abs() <= 0.02, "{lam}");
}

#[test]
fn free_transport_at_unit_cfl_is_exact() {
    let grid = PhaseGrid::new(
        SpatialDomain::Interval1D { a: 0.0, b: 1.0 },
        &[32],
        VelocitySpace::DiscreteSet { points: vec![vec![1.0], vec![-1.0]], weights: vec![0.5, 0.5] },
        Potential::Zero,
    )
    .unwrap();
    let l = CollisionOperator::bgk(&grid.vel);
    let model = Model::new(&grid, l, &DegeneracyWeight::Constant { value: 0.0 }, None).unwrap();
    let f0 = Field::from_fn(&grid, |x, v| 1.0 + 0.5 * (2.0 * PI * x[0]).sin() * v[0]);
    let mut cfg = EvolutionConfig::new(1.0 / 32.0, 1.0);
    cfg.splitting = Splitting::Lie;
    let rep = run_decay(&model, &f0, &cfg).unwrap();
    for n in &rep.norms {
        assert!((n / rep.norms[0] - 1.0).abs() <= 1e-12);
    }
    assert!(rep.mass_drift <= 1e-12);
}
