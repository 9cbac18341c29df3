use super::*;
use crate::energy::ContextOptions;
use crate::geometry::{generate_nodes, Point, Shape, ShapeSpec};
use crate::kernel::KernelSpec;
use crate::measures::{Atom, Condenser, Plate, SignedMeasure};
use crate::projection::equilibrium_measure;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sphere(n: usize, center: [f64; 3], radius: f64) -> Vec<Point> {
    generate_nodes(
        &ShapeSpec::new(
            Shape::SphereShell {
                center: center.to_vec(),
                radius,
            },
            n,
            0,
        ),
        3,
    )
    .unwrap()
}

fn ctx_of(c: Condenser, extra: Vec<Point>) -> EnergyContext {
    let opts = ContextOptions {
        extra_sites: extra,
        ..Default::default()
    };
    EnergyContext::with_options(&KernelSpec::newtonian3(), c, &opts).unwrap()
}

/// Positive sphere, negative sphere, external positive atom.
fn three_plate(rng: &mut ChaCha8Rng) -> EnergyContext {
    let c = Condenser::new(
        vec![
            Plate::new(sphere(24, [0.0, 0.0, 0.0], 1.0), Sign::Positive),
            Plate::new(sphere(30, [3.5, 0.0, 0.0], 1.0), Sign::Negative),
            Plate::new(sphere(20, [-3.0, 1.0, 0.0], 0.8), Sign::Negative),
        ],
        vec![1.0 + rng.gen::<f64>(), 0.5 + rng.gen::<f64>(), 0.3 + rng.gen::<f64>()],
    )
    .with_chi(SignedMeasure::atom(vec![0.0, 3.0, 0.0], 0.7));
    ctx_of(c, vec![])
}

#[test]
fn single_node_plate() {
    let c = Condenser::new(vec![Plate::new(vec![vec![0.0, 0.0, 0.0]], Sign::Positive)], vec![1.0]);
    let ctx = ctx_of(c, vec![vec![1.0, 0.0, 0.0]]);
    let r = solve_gauss(&ctx, &SolveOptions::default()).unwrap();
    assert!(r.converged);
    assert_eq!(r.minimizer.components[0].weights, vec![1.0]);
    assert!((r.value - ctx.form.diag(0)).abs() < 1e-15);
}

#[test]
fn symmetric_pair_splits_evenly() {
    let c = Condenser::new(
        vec![Plate::new(vec![vec![-1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]], Sign::Positive)],
        vec![1.0],
    );
    let ctx = ctx_of(c, vec![]);
    let r = solve_gauss(&ctx, &SolveOptions::default()).unwrap();
    for &w in &r.minimizer.components[0].weights {
        assert!((w - 0.5).abs() < 1e-8, "{w}");
    }
}

/// Exhaustive search over the barycentric grid of step `1/steps`.
fn grid_min(ctx: &EnergyContext, steps: usize) -> f64 {
    let g = &ctx.condenser.g_values[0];
    let a = ctx.condenser.a[0];
    let mut best = f64::INFINITY;
    let mut mu = VectorMeasure::zeros(&ctx.condenser);
    for i in 0..=steps {
        for j in 0..=steps - i {
            let l = [i as f64, j as f64, (steps - i - j) as f64].map(|x| x / steps as f64);
            for k in 0..3 {
                mu.components[0].weights[k] = a * l[k] / g[k];
            }
            best = best.min(ctx.gauss_value(&mu).unwrap());
        }
    }
    best
}

#[test]
fn three_nodes_match_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..3 {
        let nodes: Vec<Point> = (0..3).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let g: Vec<f64> = (0..3).map(|_| rng.gen_range(0.5..2.0)).collect();
        let c = Condenser::new(vec![Plate::new(nodes, Sign::Positive)], vec![rng.gen_range(0.5..2.0)])
            .with_g(vec![g])
            .with_chi(SignedMeasure::atom(vec![2.0, 2.0, 0.0], -1.5));
        let ctx = ctx_of(c, vec![]);
        let r = solve_gauss(&ctx, &SolveOptions::default()).unwrap();
        let grid = grid_min(&ctx, 400);
        assert!(r.value <= grid + 1e-12);
        assert!(grid - r.value < 1e-3 * (1.0 + grid.abs()));
    }
}

#[test]
fn frostman_conditions_match_equilibrium() {
    let a = 2.5;
    let c = Condenser::new(vec![Plate::new(sphere(80, [0.0; 3], 1.0), Sign::Positive)], vec![a]);
    let ctx = ctx_of(c, vec![]);
    let r = solve_gauss(&ctx, &SolveOptions::default()).unwrap();
    assert!(r.converged && r.kkt.passed, "{:?}", r.kkt);
    let eq = equilibrium_measure(&ctx, &ctx.plate_index[0]).unwrap();
    let scale = a / eq.capacity;
    for (w, t) in r.minimizer.components[0].weights.iter().zip(&eq.measure.weights) {
        assert!((w - t * scale).abs() < 1e-7 * a, "{w} vs {}", t * scale);
    }
}

#[test]
fn kkt_detects_non_minimizers() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ctx = three_plate(&mut rng);
    let r = solve_gauss(&ctx, &SolveOptions::default()).unwrap();
    assert!(r.converged);
    assert!(r.kkt.passed, "{:?}", r.kkt);
    for _ in 0..10 {
        let mut mu = VectorMeasure::zeros(&ctx.condenser);
        for (i, comp) in mu.components.iter_mut().enumerate() {
            let raw: Vec<f64> = comp.weights.iter().map(|_| rng.gen::<f64>()).collect();
            let total: f64 = raw.iter().sum();
            comp.weights = raw.iter().map(|x| x * ctx.condenser.a[i] / total).collect();
        }
        let k = verify_kkt(&ctx, &mu).unwrap();
        assert!(k.lower_violation > k.lower_tol);
        assert!(k.sum_rule_ok);
    }
}

#[test]
fn descent_is_monotone_and_identity_holds_along_the_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ctx = three_plate(&mut rng);
    let opts = SolveOptions {
        record_trace: true,
        ..Default::default()
    };
    let r = solve_gauss(&ctx, &opts).unwrap();
    assert!(r.trace.len() > 2);
    for pair in r.trace.windows(2) {
        assert!(pair[1].value <= pair[0].value + 1e-12 * (1.0 + pair[0].value.abs()));
    }
    for rec in &r.trace {
        assert!(gauss_identity_holds(&ctx, &rec.iterate).unwrap());
    }
}

#[test]
fn r_image_unique_for_overlapping_plates() {
    let shared = sphere(30, [0.0; 3], 1.0);
    let c = Condenser::new(
        vec![
            Plate::new(shared.clone(), Sign::Positive),
            Plate::new(shared[..20].to_vec(), Sign::Positive),
            Plate::new(sphere(25, [4.0, 0.0, 0.0], 1.0), Sign::Negative),
        ],
        vec![1.0, 0.5, 1.2],
    );
    let ctx = ctx_of(c, vec![]);
    let r1 = solve_gauss(&ctx, &SolveOptions::default()).unwrap();
    let mut init = VectorMeasure::zeros(&ctx.condenser);
    for comp in init.components.iter_mut() {
        comp.weights[0] = 1.0;
        comp.weights[3] = 0.5;
    }
    let r2 = solve_gauss(
        &ctx,
        &SolveOptions {
            initial: Some(init),
            ..Default::default()
        },
    )
    .unwrap();
    let d = ctx.strong_distance(&r1.minimizer, &r2.minimizer).unwrap();
    let norm = ctx.norm(&ctx.r_dense(&r1.minimizer).unwrap()).unwrap();
    assert!(d <= 1e-6 * (1.0 + norm), "{d}");
    for (e1, e2) in r1.kkt.etas().iter().zip(r2.kkt.etas()) {
        assert!((e1 - e2).abs() <= 1e-6 * (1.0 + e1.abs()), "{e1} {e2}");
    }
}

#[test]
fn fewer_constraints_give_smaller_values_and_respect_lower_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let ctx = three_plate(&mut rng);
    let chi_sq = ctx.form.quad(&ctx.chi_dense());
    let v0 = solve(&ctx, &ProblemSpec::auxiliary(vec![0]), &SolveOptions::default()).unwrap();
    let v01 = solve(&ctx, &ProblemSpec::auxiliary(vec![0, 1]), &SolveOptions::default()).unwrap();
    let full = solve(&ctx, &ProblemSpec::full(&ctx), &SolveOptions::default()).unwrap();
    assert_eq!(full.mode, Mode::Full);
    assert_eq!(v0.mode, Mode::Auxiliary);
    let tol = 1e-9 * (1.0 + full.value.abs());
    assert!(v0.value <= v01.value + tol && v01.value <= full.value + tol);
    for r in [&v0, &v01, &full] {
        assert!(r.converged);
        assert!(r.value >= -chi_sq - 1e-12);
        assert!(r.kkt.passed, "{:?}", r.kkt);
        assert!(r.feasible(&ctx));
        // reported value agrees with G_chi of the reconstructed minimizer
        let g = ctx.gauss_value(&r.minimizer).unwrap();
        assert!((g - r.value).abs() <= 1e-9 * (1.0 + g.abs()), "{g} vs {}", r.value);
    }
}

#[test]
fn far_unconstrained_plate_decouples() {
    let pos = sphere(30, [0.0; 3], 1.0);
    let c = Condenser::new(
        vec![
            Plate::new(pos.clone(), Sign::Positive),
            Plate::new(sphere(30, [1e3, 0.0, 0.0], 1.0), Sign::Negative),
        ],
        vec![1.0, 1.0],
    );
    let ctx = ctx_of(c, vec![]);
    let aux = solve_auxiliary(&ctx, &ProblemSpec::auxiliary(vec![0]), &SolveOptions::default()).unwrap();
    let alone = ctx_of(Condenser::new(vec![Plate::new(pos, Sign::Positive)], vec![1.0]), vec![]);
    let r = solve_gauss(&alone, &SolveOptions::default()).unwrap();
    assert!((aux.value - r.value).abs() <= 1e-5 * r.value, "{} vs {}", aux.value, r.value);
    assert!(aux.minimizer.components[1].mass() < 1e-2);
}

#[test]
fn direct_and_nested_auxiliary_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let ctx = three_plate(&mut rng);
    let spec = ProblemSpec::auxiliary(vec![0, 2]);
    let nested = solve_auxiliary(&ctx, &spec, &SolveOptions::default()).unwrap();
    let direct = solve_auxiliary_direct(&ctx, &spec, &SolveOptions::default()).unwrap();
    assert!(nested.converged && direct.converged);
    assert!(
        (nested.value - direct.value).abs() <= 1e-6 * nested.value.abs(),
        "{} vs {}",
        nested.value,
        direct.value
    );
    assert!(direct.minimizer.components[1].mass() <= mass_bound_h(&ctx, &spec).unwrap());
}

#[test]
fn routing_and_preconditions() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let ctx = three_plate(&mut rng);
    assert!(matches!(
        solve_auxiliary(&ctx, &ProblemSpec::full(&ctx), &SolveOptions::default()),
        Err(GvpError::Precondition(_))
    ));
    assert!(matches!(
        solve(&ctx, &ProblemSpec::auxiliary(vec![1, 2]), &SolveOptions::default()),
        Err(GvpError::Precondition(_))
    ));
    let a = solve(&ctx, &ProblemSpec::full(&ctx), &SolveOptions::default()).unwrap();
    let b = solve_gauss(&ctx, &SolveOptions::default()).unwrap();
    assert_eq!(a.value, b.value);
}

#[test]
fn iteration_cap_is_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let ctx = three_plate(&mut rng);
    let r = solve_gauss(
        &ctx,
        &SolveOptions {
            max_iters: Some(3),
            polish: false,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(!r.converged);
    assert!(matches!(r.require_converged(), Err(GvpError::NonConvergence { .. })));
}

#[test]
fn chi_atoms_shift_the_minimizer() {
    // an attracting negative atom pulls the positive plate's mass toward it
    let c = Condenser::new(vec![Plate::new(sphere(40, [0.0; 3], 1.0), Sign::Positive)], vec![1.0])
        .with_chi(SignedMeasure::new(vec![Atom {
            position: vec![2.0, 0.0, 0.0],
            weight: -1.0,
        }]));
    let ctx = ctx_of(c, vec![]);
    let r = solve_gauss(&ctx, &SolveOptions::default()).unwrap();
    assert!(r.kkt.passed);
    let w = &r.minimizer.components[0].weights;
    let near: f64 = ctx.condenser.plates[0].nodes.iter().zip(w).filter(|(p, _)| p[0] > 0.0).map(|(_, w)| w).sum();
    assert!(near > 0.5);
}
