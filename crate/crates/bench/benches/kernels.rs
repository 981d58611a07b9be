use criterion::{black_box, criterion_group, criterion_main, Criterion};
use kinlab::collision::{random_reversible_kernel, spectral_gap};
use kinlab::control::{control_integral, velocity_samples, Chi, ControlConfig};
use kinlab::evolve::{random_zero_mass, EvolutionConfig, Evolver, Model};
use kinlab::funineq::{solve_divergence_l2, BoxDomain, WeightedDomain};
use kinlab::phase::{DegeneracyWeight, PhaseGrid, Potential, Region, SpatialDomain, VelocityGrid, VelocitySpace};
use kinlab::transport::Flow;
use kinlab::CollisionOperator;

fn collision(c: &mut Criterion) {
    let vel = VelocityGrid::new(VelocitySpace::TruncatedLine { v_max: 6.0, n: 128 }).unwrap();
    let fp = CollisionOperator::fokker_planck(&vel).unwrap();
    c.bench_function("fokker_planck_gap_128", |b| b.iter(|| spectral_gap(black_box(&fp)).unwrap()));
    let k = random_reversible_kernel(12, 1).unwrap();
    c.bench_function("scattering_gap_12", |b| b.iter(|| spectral_gap(black_box(&k)).unwrap()));
}

fn evolution(c: &mut Criterion) {
    let grid = PhaseGrid::new(
        SpatialDomain::Torus2D { lengths: [1.0, 1.0] },
        &[64, 64],
        VelocitySpace::Circle { n: 16 },
        Potential::Zero,
    )
    .unwrap();
    let sigma = DegeneracyWeight::Indicator { region: Region::Cross { lo: 1.0 / 3.0, hi: 2.0 / 3.0 }, inside: 1.0, outside: 0.0 };
    let model = Model::new(&grid, CollisionOperator::bgk(&grid.vel), &sigma, None).unwrap();
    let cfg = EvolutionConfig::new(0.01, 1.0);
    let ev = Evolver::new(&model, &cfg).unwrap();
    let mut f = random_zero_mass(&grid, 3).data;
    c.bench_function("split_step_64x64x16", |b| b.iter(|| ev.step(black_box(&mut f))));
}

fn control(c: &mut Criterion) {
    let flow = Flow::new(SpatialDomain::Torus2D { lengths: [1.0, 1.0] }, Potential::Zero).unwrap();
    let vs = velocity_samples(&VelocitySpace::Circle { n: 16 }, 16);
    let chi = Chi::Indicator { region: Region::Cross { lo: 1.0 / 3.0, hi: 2.0 / 3.0 } };
    let cfg = ControlConfig::new(chi, Region::All, 8.0, 0.03125, vs.clone());
    c.bench_function("control_integral_T8", |b| {
        b.iter(|| control_integral(&cfg, &flow, black_box([0.1, 0.2]), vs[3]).unwrap())
    });
}

fn divergence(c: &mut Criterion) {
    let dom = WeightedDomain::new(BoxDomain::Rectangle { lo: [0.0, 0.0], hi: [1.0, 1.0] }, [32, 32], Potential::Zero)
        .unwrap();
    let g = dom.cell_average(|x| (2.0 * std::f64::consts::PI * x[0]).sin() * (std::f64::consts::PI * x[1]).sin());
    c.bench_function("divergence_l2_32x32", |b| b.iter(|| solve_divergence_l2(&dom, black_box(&g)).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = collision, evolution, control, divergence
}
criterion_main!(benches);
