use kinlab::collision::{cheeger_constant, gamma2_check, random_reversible_kernel, spectral_gap};
use kinlab::control::{control_integral, gcc_deterministic, reversed_integral, velocity_samples, Chi, ControlConfig};
use kinlab::evolve::certified_rate;
use kinlab::funineq::{solve_divergence_l2, BoxDomain, WeightedDomain};
use kinlab::phase::{Field, PhaseGrid, Potential, Region, SpatialDomain, VelocitySpace};
use kinlab::transport::{transport_step, BoundaryOperator, Flow, TransportScheme};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn norm_mu(f: &Field) -> f64 {
    f.inner_mu(f).unwrap().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn reversible_kernels_satisfy_cheeger_and_gamma2(m in 2usize..10, seed in 0u64..10_000, bump in proptest::collection::vec(-0.9f64..3.0, 10)) {
        let l = random_reversible_kernel(m, seed).unwrap();
        prop_assert!(l.equilibrium_residual() <= 1e-12);
        prop_assert!(l.symmetry_defect() <= 1e-10);
        let lam = spectral_gap(&l).unwrap().lambda1;
        let phi = cheeger_constant(&l).unwrap().phi;
        prop_assert!(2.0 * lam >= phi * phi - 1e-9, "λ₁ = {lam}, Φ = {phi}");
        let f: Vec<f64> = l.vel.m.iter().zip(&bump).map(|(mj, b)| mj * (1.0 + b)).collect();
        prop_assert!(gamma2_check(&l, &f).unwrap().min >= -1e-10);
    }

    #[test]
    fn collision_dissipation_is_nonnegative(m in 2usize..10, seed in 0u64..10_000, g in proptest::collection::vec(-1.0f64..1.0, 10)) {
        let l = random_reversible_kernel(m, seed).unwrap();
        let d = l.dissipation_v(&g[..m]).unwrap();
        prop_assert!(d >= -1e-12);
    }

    #[test]
    fn maxwell_walls_conserve_mass_and_contract(alpha in 0.0f64..=1.0, seed in 0u64..1000) {
        let grid = PhaseGrid::new(
            SpatialDomain::Interval1D { a: 0.0, b: 1.0 },
            &[8],
            VelocitySpace::TruncatedLine { v_max: 4.0, n: 16 },
            Potential::Zero,
        ).unwrap();
        let op = BoundaryOperator::uniform(&grid, alpha).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert!(op.mass_defect() <= 1e-12);
        prop_assert!(op.contraction_check(20, &mut rng).unwrap() <= 1.0 + 1e-12);
    }

    #[test]
    fn transport_conserves_mass_without_growing_the_norm(seed in 0u64..1000, alpha in 0.0f64..=1.0) {
        let grid = PhaseGrid::new(
            SpatialDomain::Interval1D { a: -1.0, b: 1.0 },
            &[24],
            VelocitySpace::TruncatedLine { v_max: 3.0, n: 12 },
            Potential::Zero,
        ).unwrap();
        let b = BoundaryOperator::uniform(&grid, alpha).unwrap();
        let scheme = TransportScheme::new(&grid, Some(b)).unwrap();
        let f = kinlab::evolve::random_zero_mass(&grid, seed);
        let g = transport_step(&scheme, &f, scheme.max_dt()).unwrap();
        prop_assert!((g.mass() - f.mass()).abs() <= 1e-12 * (1.0 + norm_mu(&f)));
        prop_assert!(norm_mu(&g) <= norm_mu(&f) * (1.0 + 1e-12));
    }

    #[test]
    fn divergence_solution_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0, k in 1usize..4) {
        let dom = WeightedDomain::new(
            BoxDomain::Rectangle { lo: [0.0, 0.0], hi: [1.0, 1.0] },
            [12, 12],
            Potential::Zero,
        ).unwrap();
        let pi = std::f64::consts::PI;
        let g1 = dom.cell_average(|x| (2.0 * pi * k as f64 * x[0]).sin() * (pi * x[1]).cos());
        let g2 = dom.cell_average(|x| (2.0 * pi * x[1]).cos() * (pi * x[0]).sin().powi(2));
        let mean2 = dom.integral(&g2) / dom.vol();
        let g2: Vec<f64> = g2.iter().map(|v| v - mean2).collect();
        let mix: Vec<f64> = g1.iter().zip(&g2).map(|(x, y)| a * x + b * y).collect();
        let f1 = solve_divergence_l2(&dom, &g1).unwrap();
        let f2 = solve_divergence_l2(&dom, &g2).unwrap();
        let fm = solve_divergence_l2(&dom, &mix).unwrap();
        let scale = 1.0 + a.abs() + b.abs();
        for (i, v) in fm.x.iter().enumerate() {
            prop_assert!((v - a * f1.x[i] - b * f2.x[i]).abs() <= 1e-8 * scale);
        }
        for (i, v) in fm.y.iter().enumerate() {
            prop_assert!((v - a * f1.y[i] - b * f2.y[i]).abs() <= 1e-8 * scale);
        }
    }

    #[test]
    fn control_integral_is_reversal_consistent(x in 0.0f64..1.0, y in 0.0f64..1.0, k in 0usize..16) {
        let flow = Flow::new(SpatialDomain::Torus2D { lengths: [1.0, 1.0] }, Potential::Zero).unwrap();
        let vs = velocity_samples(&VelocitySpace::Circle { n: 16 }, 16);
        let chi = Chi::Indicator { region: Region::Cross { lo: 1.0 / 3.0, hi: 2.0 / 3.0 } };
        let cfg = ControlConfig::new(chi, Region::All, 3.0, 0.01, vs.clone());
        let fwd = control_integral(&cfg, &flow, [x, y], vs[k]).unwrap();
        let back = reversed_integral(&cfg, &flow, [x, y], vs[k]).unwrap();
        prop_assert!((fwd - back).abs() <= 0.03 * 3.0, "{fwd} vs {back}");
    }

    #[test]
    fn certificate_rate_is_monotone_in_eta(e1 in 0.01f64..0.98, e2 in 0.01f64..0.98, t in 0.1f64..10.0) {
        let (lo, hi) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
        let a = certified_rate(lo, t).unwrap();
        let b = certified_rate(hi, t).unwrap();
        prop_assert!(a.lambda <= b.lambda + 1e-15);
        prop_assert!(a.c <= b.c + 1e-12);
    }
}

#[test]
fn certificate_of_one_minus_inverse_e() {
    let c = certified_rate(1.0 - (-1.0f64).exp(), 1.0).unwrap();
    assert!((c.c - std::f64::consts::E).abs() < 1e-12);
    assert!((c.lambda - 1.0).abs() < 1e-12);
}

#[test]
fn c_min_grows_with_the_horizon() {
    let flow = Flow::new(SpatialDomain::Torus2D { lengths: [1.0, 1.0] }, Potential::Zero).unwrap();
    let vs = velocity_samples(&VelocitySpace::Circle { n: 8 }, 8);
    let chi = Chi::Indicator { region: Region::Cross { lo: 0.4, hi: 0.6 } };
    let mut last = 0.0;
    for t in [1.0, 2.0, 4.0, 8.0] {
        let mut cfg = ControlConfig::new(chi.clone(), Region::Cross { lo: 0.4, hi: 0.6 }, t, 0.01, vs.clone());
        cfg.positions = 12;
        cfg.refine = 0;
        let r = gcc_deterministic(&cfg, &flow).unwrap();
        assert!(r.c_min >= last - 1e-12, "T = {t}: {} < {last}", r.c_min);
        last = r.c_min;
    }
    assert!(last > 0.0);
}
