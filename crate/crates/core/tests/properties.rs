use proptest::prelude::*;

use gvp::energy::EnergyContext;
use gvp::geometry::{generate_nodes, Point, Profile, Shape, ShapeSpec};
use gvp::kernel::KernelSpec;
use gvp::measures::{Atom, Condenser, Plate, Sign, SignedMeasure, VectorMeasure};
use gvp::nnls::ActiveSetNnls;
use gvp::projection::balayage;
use gvp::solver::{solve_gauss, SolveOptions};

fn cloud(seed: u64, n: usize, offset: f64) -> Vec<Point> {
    let shape = Shape::SphereShell {
        center: vec![offset, 0.0, 0.0],
        radius: 1.0,
    };
    generate_nodes(&ShapeSpec::new(shape, n, seed), 3).unwrap()
}

fn two_plates(n: usize, chi: SignedMeasure, a: [f64; 2]) -> EnergyContext {
    let c = Condenser::new(
        vec![
            Plate::new(cloud(1, n, 0.0), Sign::Positive),
            Plate::new(cloud(2, n, 3.0), Sign::Negative),
        ],
        a.to_vec(),
    )
    .with_chi(chi);
    EnergyContext::new(&KernelSpec::newtonian3(), c).unwrap()
}

fn exterior_atom() -> impl Strategy<Value = Atom> {
    (-1.0f64..1.0, 0.0f64..std::f64::consts::TAU, 1.5f64..3.0).prop_map(|(weight, t, r)| Atom {
        position: vec![1.5, r * t.cos(), r * t.sin()],
        weight,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gram_quadratic_form_is_nonnegative(w in prop::collection::vec(-1.0f64..1.0, 40)) {
        let ctx = two_plates(20, SignedMeasure::default(), [1.0, 1.0]);
        let v = nalgebra::DVector::from_vec(w);
        prop_assert!(ctx.form.quad(&v) >= -1e-10 * v.norm_squared());
    }

    #[test]
    fn nnls_solution_satisfies_kkt(b in prop::collection::vec(-2.0f64..2.0, 12)) {
        let ctx = two_plates(6, SignedMeasure::default(), [1.0, 1.0]);
        let q = ctx.form.gram.clone();
        let mut nnls = ActiveSetNnls::new(q.clone());
        let out = nnls.solve(&b);
        prop_assert!(out.converged);
        let w = nalgebra::DVector::from_column_slice(nnls.solution());
        let r = nalgebra::DVector::from_column_slice(&b) - &q * &w;
        let scale = 1e-9 * (1.0 + b.iter().fold(0.0f64, |m, x| m.max(x.abs())));
        for j in 0..w.len() {
            prop_assert!(w[j] >= 0.0);
            prop_assert!(r[j] <= scale);
            prop_assert!((w[j] * r[j]).abs() <= scale);
        }
    }

    #[test]
    fn gauss_value_matches_shifted_energy(
        weights in prop::collection::vec(0.0f64..1.0, 32),
        atom in exterior_atom(),
    ) {
        let ctx = two_plates(16, SignedMeasure::new(vec![atom]), [1.0, 1.0]);
        let mu = VectorMeasure::from_weights(vec![weights[..16].to_vec(), weights[16..].to_vec()]);
        let lhs = ctx.gauss_value(&mu).unwrap();
        let rhs = ctx.gauss_value_shifted(&mu).unwrap();
        let chi_sq = ctx.form.quad(&ctx.chi_dense());
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs() + chi_sq));
    }

    #[test]
    fn solver_output_is_feasible(a0 in 0.5f64..2.0, a1 in 0.5f64..2.0, atom in exterior_atom()) {
        let ctx = two_plates(12, SignedMeasure::new(vec![atom]), [a0, a1]);
        let r = solve_gauss(&ctx, &SolveOptions::default()).unwrap();
        prop_assert!(r.converged);
        prop_assert!(r.feasible(&ctx));
        prop_assert!(r.minimizer.components.iter().all(|c| c.weights.iter().all(|&w| w >= 0.0)));
    }

    #[test]
    fn exterior_balayage_respects_mass_bound(atoms in prop::collection::vec(exterior_atom(), 1..5)) {
        let c = Condenser::new(vec![Plate::new(cloud(1, 60, 0.0), Sign::Positive)], vec![1.0]);
        let sites = atoms.iter().map(|a| a.position.clone()).collect();
        let opts = gvp::energy::ContextOptions { extra_sites: sites, ..Default::default() };
        let ctx = EnergyContext::with_options(&KernelSpec::newtonian3(), c, &opts).unwrap();
        let nu = SignedMeasure::new(atoms);
        let b = balayage(&ctx, &nu, 0).unwrap();
        prop_assert_eq!(b.mass_bound_ok, Some(true));
        prop_assert!(b.projection.kkt_ok());
    }

    #[test]
    fn rotational_node_count_is_exact(n in 1usize..400) {
        let base = ShapeSpec::rotational(1.0, Profile::Exponential { s: 0.5 }, 5.0, 0.5);
        let rings = base.shape.rings().unwrap().len();
        let spec = ShapeSpec::new(base.shape, n, 0);
        match generate_nodes(&spec, 3) {
            Ok(nodes) => {
                prop_assert_eq!(nodes.len(), n);
                prop_assert!(nodes.iter().all(|p| spec.shape.residual(p) < 1e-9));
            }
            Err(_) => prop_assert!(n < rings),
        }
    }
}
