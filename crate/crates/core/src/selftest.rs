//! Built-in smoke suite: the small closed-form examples of every module,
//! runnable from the command line without a scenario.

use std::panic;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diagnostics::{coarse_bound_check, sigma_threshold, solvable_cone_scan, verdict, verdict_tol, Verdict};
use crate::energy::{ContextOptions, EnergyContext};
use crate::error::GvpError;
use crate::geometry::{generate_nodes, nearest_neighbor_distances, Point, Profile, Shape, ShapeSpec};
use crate::kernel::{assemble_gram, KernelSpec};
use crate::measures::{Atom, Condenser, Plate, Sign, SignedMeasure, VectorMeasure};
use crate::projection::{capacity, equilibrium_measure, green_energy, project_onto_cone};
use crate::scenario::{Scenario, ScenarioError};
use crate::solver::{solve, solve_gauss, solve_auxiliary, verify_kkt, ProblemSpec, SolveOptions};

type Outcome = std::result::Result<(), Box<dyn std::error::Error>>;

#[derive(Clone, Debug, Serialize)]
pub struct CaseResult {
    pub module: &'static str,
    pub name: &'static str,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SelftestReport {
    pub passed: usize,
    pub failed: usize,
    pub cases: Vec<CaseResult>,
}

impl SelftestReport {
    pub fn all_passed(&self) -> bool {
        self.failed == 0
    }
}

fn ensure(cond: bool, what: impl FnOnce() -> String) -> Outcome {
    if cond {
        Ok(())
    } else {
        Err(what().into())
    }
}

fn close(a: f64, b: f64, tol: f64) -> Outcome {
    ensure((a - b).abs() <= tol, || format!("{a} differs from {b} by more than {tol:e}"))
}

fn origin() -> Point {
    vec![0.0, 0.0, 0.0]
}

fn x(t: f64) -> Point {
    vec![t, 0.0, 0.0]
}

fn sphere(n: usize, center: Point, radius: f64) -> crate::Result<Vec<Point>> {
    generate_nodes(&ShapeSpec::new(Shape::SphereShell { center, radius }, n, 0), 3)
}

fn ctx(c: Condenser) -> crate::Result<EnergyContext> {
    EnergyContext::new(&KernelSpec::newtonian3(), c)
}

/// Positive node at the origin, negative node at distance `d`.
fn pair(d: f64, chi: SignedMeasure) -> crate::Result<EnergyContext> {
    ctx(Condenser::new(
        vec![Plate::new(vec![origin()], Sign::Positive), Plate::new(vec![x(d)], Sign::Negative)],
        vec![1.0, 1.0],
    )
    .with_chi(chi))
}

fn shell_pair() -> crate::Result<EnergyContext> {
    ctx(Condenser::new(
        vec![
            Plate::new(sphere(16, origin(), 1.0)?, Sign::Positive),
            Plate::new(sphere(24, x(3.0), 1.0)?, Sign::Negative),
        ],
        vec![1.0, 2.0],
    ))
}

fn sphere_shell_points() -> Outcome {
    let pts = sphere(4, origin(), 1.0)?;
    ensure(pts.len() == 4, || format!("{} points", pts.len()))?;
    for p in &pts {
        close(p.iter().map(|c| c * c).sum::<f64>().sqrt(), 1.0, 1e-12)?;
    }
    Ok(())
}

fn rotational_spec() -> ShapeSpec {
    ShapeSpec::new(
        Shape::RotationalBody {
            q: 1.0,
            profile: Profile::Power { s: 1.0 },
            truncation_radius: 10.0,
            ring_spacing: 0.5,
            ring_min: 8,
        },
        100,
        3,
    )
}

fn rotational_surface() -> Outcome {
    let pts = generate_nodes(&rotational_spec(), 3)?;
    ensure(pts.len() == 100, || format!("{} points", pts.len()))?;
    for p in &pts {
        ensure((1.0..=10.0).contains(&p[0]), || format!("x1 = {}", p[0]))?;
        close(p[1] * p[1] + p[2] * p[2], p[0].powi(-2), 1e-10)?;
    }
    Ok(())
}

fn generation_is_deterministic() -> Outcome {
    let a = generate_nodes(&rotational_spec(), 3)?;
    let b = generate_nodes(&rotational_spec(), 3)?;
    let same = a.iter().flatten().zip(b.iter().flatten()).all(|(u, v)| u.to_bits() == v.to_bits());
    ensure(same && a.len() == b.len(), || "point lists differ".into())
}

fn nearest_neighbors() -> Outcome {
    let d = nearest_neighbor_distances(&[origin(), x(1.0), x(3.0)])?;
    ensure(d == [1.0, 1.0, 2.0], || format!("{d:?}"))?;
    let dup = nearest_neighbor_distances(&[x(1.0), x(1.0)]);
    ensure(matches!(dup, Err(GvpError::DuplicatePoints(..))), || format!("{dup:?}"))
}

fn kernel_values() -> Outcome {
    let k = KernelSpec::newtonian3();
    ensure(k.of_distance(2.0) == 0.5, || "alpha = 2".into())?;
    ensure(KernelSpec::new(1.0, 3, None)?.of_distance(4.0) == 0.0625, || "alpha = 1".into())?;
    ensure(k.evaluate(&x(1.0), &x(1.0)) == f64::INFINITY, || "singularity".into())
}

fn gram_two_nodes() -> Outcome {
    let f = assemble_gram(&KernelSpec::newtonian3(), &[origin(), x(1.0)], &[1.0, 1.0], 0.5)?;
    close(f.gram[(0, 1)], 1.0, 1e-15)?;
    close(f.gram[(0, 0)], 2.0, 1e-9)?;
    close(f.gram[(1, 1)], 2.0, 1e-9)
}

fn gram_is_psd() -> Outcome {
    let nodes = sphere(30, origin(), 1.0)?;
    let nn = nearest_neighbor_distances(&nodes)?;
    let f = assemble_gram(&KernelSpec::newtonian3(), &nodes, &nn, 0.5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..100 {
        let w = DVector::from_fn(30, |_, _| rng.gen_range(-1.0..1.0));
        ensure(f.quad(&w) >= 0.0, || "negative quadratic form".into())?;
    }
    Ok(())
}

fn r_map() -> Outcome {
    let c = pair(2.0, SignedMeasure::default())?.condenser;
    let r = c.r_map(&VectorMeasure::from_weights(vec![vec![1.0], vec![1.0]]))?;
    ensure(r.positive_mass() == 1.0 && r.negative_mass() == 1.0, || format!("{r:?}"))?;
    ensure(r.atoms.iter().any(|a| a.position == x(2.0) && a.weight == -1.0), || format!("{r:?}"))?;
    ensure(c.r_map(&VectorMeasure::zeros(&c))?.is_empty(), || "zero image".into())?;
    let shared = Condenser::new(
        vec![Plate::new(vec![origin()], Sign::Positive), Plate::new(vec![origin()], Sign::Positive)],
        vec![1.0, 1.0],
    );
    let r = shared.r_map(&VectorMeasure::from_weights(vec![vec![0.5], vec![0.5]]))?;
    ensure(r.atoms.len() == 1 && r.atoms[0].weight == 1.0, || format!("{r:?}"))
}

fn g_moments() -> Outcome {
    let c = Condenser::new(vec![Plate::new(vec![origin(), x(1.0)], Sign::Positive)], vec![1.0]);
    close(c.g_moment(&VectorMeasure::from_weights(vec![vec![0.3, 0.4]]), 0)?, 0.7, 1e-15)?;
    ensure(c.g_moment(&VectorMeasure::zeros(&c), 0)? == 0.0, || "zero moment".into())?;
    let c = c.with_g(vec![vec![2.0, 3.0]]);
    close(c.g_moment(&VectorMeasure::from_weights(vec![vec![0.5, 0.5]]), 0)?, 2.5, 1e-15)
}

fn validation_codes() -> Outcome {
    let good = pair(2.0, SignedMeasure::default())?.condenser;
    ensure(good.validate().is_ok(), || "well-formed condenser rejected".into())?;
    let bad = good.clone().with_chi(SignedMeasure::atom(x(2.0), 1.0));
    let code = bad.validate().err().map(|f| f.code());
    ensure(code == Some("chi_plus_meets_negative_plates"), || format!("{code:?}"))?;
    let bad = good.with_g(vec![vec![0.0], vec![1.0]]);
    let code = bad.validate().err().map(|f| f.code());
    ensure(code == Some("g_inf_not_positive"), || format!("{code:?}"))
}

fn mutual_energy() -> Outcome {
    let c = pair(2.0, SignedMeasure::default())?;
    let p = SignedMeasure::atom(origin(), 1.0);
    let q = SignedMeasure::atom(x(2.0), 1.0);
    ensure(c.mutual_energy(&p, &q)? == 0.5, || "off-diagonal".into())?;
    ensure(c.mutual_energy(&SignedMeasure::default(), &q)? == 0.0, || "empty".into())?;
    let w = SignedMeasure::atom(origin(), 0.3);
    close(c.mutual_energy(&w, &w)?, 0.09 * c.form.diag(0), 1e-15)
}

fn vector_energy() -> Outcome {
    let d = 3.0;
    let c = pair(d, SignedMeasure::default())?;
    ensure(c.vector_energy(&VectorMeasure::zeros(&c.condenser))? == 0.0, || "zero".into())?;
    let one = VectorMeasure::from_weights(vec![vec![1.0], vec![0.0]]);
    ensure(c.vector_energy(&one)? == c.form.diag(0), || "single atom".into())?;
    let both = VectorMeasure::from_weights(vec![vec![1.0], vec![1.0]]);
    close(c.vector_energy(&both)?, c.form.diag(0) + c.form.diag(1) - 2.0 / d, 1e-14)
}

fn gauss_value() -> Outcome {
    let c = pair(2.0, SignedMeasure::atom(vec![0.0, 4.0, 0.0], 0.7))?;
    ensure(c.gauss_value(&VectorMeasure::zeros(&c.condenser))? == 0.0, || "zero".into())?;
    let c = pair(2.0, SignedMeasure::default())?;
    let mu = VectorMeasure::from_weights(vec![vec![0.3], vec![0.9]]);
    ensure(c.gauss_value(&mu)? == c.vector_energy(&mu)?, || "chi = 0".into())
}

fn weighted_potential() -> Outcome {
    let c = pair(5.0, SignedMeasure::default())?;
    let zero = VectorMeasure::zeros(&c.condenser);
    let w = c.weighted_potential_on_plate(&zero, 0)?;
    ensure(w == [0.0], || format!("{w:?}"))?;
    let mu = VectorMeasure::from_weights(vec![vec![1.0], vec![0.0]]);
    let w = c.weighted_potential(&mu, 0, &[vec![0.0, 0.0, 2.0]])?;
    ensure(w == [0.5], || format!("{w:?}"))?;
    let c = pair(5.0, SignedMeasure::atom(vec![0.0, 1.0, 0.0], 1.0))?;
    let w = c.weighted_potential(&zero, 1, &[vec![0.0, 2.0, 0.0]])?;
    ensure(w == [-1.0], || format!("{w:?}"))
}

fn strong_distance() -> Outcome {
    let c = shell_pair()?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut random = || {
        VectorMeasure::from_weights(
            c.condenser.plates.iter().map(|p| p.nodes.iter().map(|_| rng.gen_range(0.0..1.0)).collect()).collect(),
        )
    };
    let (m1, m2) = (random(), random());
    ensure(c.strong_distance(&m1, &m1)? == 0.0, || "self distance".into())?;
    ensure(c.strong_distance(&m1, &m2)? == c.strong_distance(&m2, &m1)?, || "asymmetric".into())
}

fn cone_projection() -> Outcome {
    let c = shell_pair()?;
    let target = c.plate_index[1].clone();
    let nodes = &c.condenser.plates[1].nodes;
    let on = SignedMeasure::new(
        nodes.iter().take(5).map(|p| Atom { position: p.clone(), weight: 0.2 }).collect(),
    );
    let r = project_onto_cone(&c, &on, &target)?;
    ensure(r.distance.abs() <= 1e-12, || format!("distance {}", r.distance))?;
    close(r.mass(), 1.0, 1e-12)?;
    let neg = SignedMeasure::atom(nodes[0].clone(), -1.0);
    ensure(project_onto_cone(&c, &neg, &target)?.mass() == 0.0, || "negative atom".into())?;
    let zero = project_onto_cone(&c, &SignedMeasure::default(), &target)?;
    ensure(zero.mass() == 0.0, || "zero source".into())
}

fn equilibrium_and_capacity() -> Outcome {
    let c = shell_pair()?;
    let one = [c.plate_index[0][0]];
    let eq = equilibrium_measure(&c, &one)?;
    let inv = 1.0 / c.form.diag(one[0]);
    close(eq.capacity, inv, 1e-12 * inv)?;
    close(eq.measure.weights[0], inv, 1e-12 * inv)?;
    close(capacity(&c, &one)?, inv, 1e-12 * inv)?;
    let all = &c.plate_index[0];
    let mut last = 0.0;
    for k in [4, 8, 16] {
        let cap = capacity(&c, &all[..k])?;
        ensure(cap >= last, || format!("capacity decreased at {k} nodes"))?;
        last = cap;
    }
    Ok(())
}

fn green_energy_bounds() -> Outcome {
    let c = shell_pair()?;
    ensure(green_energy(&c, &SignedMeasure::default(), 1)? == 0.0, || "zero source".into())?;
    let nu = SignedMeasure::atom(c.condenser.plates[0].nodes[0].clone(), 1.0);
    let e = green_energy(&c, &nu, 1)?;
    ensure(e <= c.mutual_energy(&nu, &nu)?, || "green energy exceeds energy".into())
}

fn single_node_solve() -> Outcome {
    let opts = ContextOptions {
        extra_sites: vec![x(1.0)],
        ..Default::default()
    };
    let plate = Plate::new(vec![origin()], Sign::Positive);
    let c = EnergyContext::with_options(&KernelSpec::newtonian3(), Condenser::new(vec![plate], vec![1.0]), &opts)?;
    let r = solve_gauss(&c, &SolveOptions::default())?;
    ensure(r.minimizer.components[0].weights == [1.0], || format!("{:?}", r.minimizer))?;
    close(r.value, c.form.diag(0), 1e-12 * c.form.diag(0))
}

fn symmetric_pair_solve() -> Outcome {
    let c = ctx(Condenser::new(vec![Plate::new(vec![x(-1.0), x(1.0)], Sign::Positive)], vec![1.0]))?;
    let w = solve_gauss(&c, &SolveOptions::default())?.minimizer.components[0].weights.clone();
    close(w[0], 0.5, 1e-8)?;
    close(w[1], 0.5, 1e-8)
}

fn routing() -> Outcome {
    let c = shell_pair()?;
    let full = ProblemSpec::full(&c);
    let aux = solve_auxiliary(&c, &full, &SolveOptions::default());
    ensure(matches!(aux, Err(GvpError::Precondition(_))), || "empty CJ accepted".into())?;
    let a = solve(&c, &full, &SolveOptions::default())?;
    let b = solve_gauss(&c, &SolveOptions::default())?;
    ensure(a.value == b.value, || "routed solve differs".into())
}

fn converged_solve_passes_kkt() -> Outcome {
    let c = shell_pair()?;
    let r = solve_gauss(&c, &SolveOptions::default())?.require_converged()?;
    let k = verify_kkt(&c, &r.minimizer)?;
    ensure(k.passed, || format!("{k:?}"))
}

fn sigma_for_unit_g() -> Outcome {
    let c = shell_pair()?;
    let s = sigma_threshold(&c, 1, &SolveOptions::default())?;
    close(s.sigma_ell, s.swept_measure.mass(), 1e-12)?;
    ensure(verdict(s.sigma_ell, s.sigma_ell, verdict_tol(s.sigma_ell)) == Verdict::Boundary, || {
        "equality is not boundary".into()
    })
}

fn coarse_bound() -> Outcome {
    let c = shell_pair()?;
    let b = coarse_bound_check(&c, 1)?;
    close(b.bound, 2.0, 1e-15)?;
    ensure(!b.triggered, || "a_ell = 2 must not exceed the bound 2".into())
}

fn cone_scan() -> Outcome {
    let c = shell_pair()?;
    let grid: Vec<f64> = (1..=8).map(|k| 0.25 * k as f64).collect();
    let scan = solvable_cone_scan(&c, 1, &grid, &SolveOptions::default())?;
    let rank = |v: Verdict| match v {
        Verdict::Solvable => 0,
        Verdict::Boundary => 1,
        _ => 2,
    };
    let ok = scan.entries.windows(2).all(|w| rank(w[0].verdict) <= rank(w[1].verdict));
    ensure(ok, || format!("{:?}", scan.entries))
}

const MINIMAL: &str = r#"{
    "kernel": {"alpha": 2.0, "dim": 3},
    "plates": [
        {"shape": {"kind": "sphere_shell", "center": [0, 0, 0], "radius": 1}, "sign": 1, "node_count": 8},
        {"shape": {"kind": "sphere_shell", "center": [3, 0, 0], "radius": 1}, "sign": -1, "node_count": 8}
    ],
    "a": [1.0, 0.0]
}"#;

fn scenario_code(text: &str) -> Option<String> {
    match Scenario::parse(text) {
        Err(ScenarioError::Invalid(v)) => v.first().map(|i| format!("{} {}", i.code, i.path)),
        _ => None,
    }
}

fn scenario_defaults() -> Outcome {
    let s = Scenario::parse(&MINIMAL.replace("0.0]", "1.0]"))?;
    ensure(s.solver.sigma == 0.5 && s.solver.gap_tol == 1e-9, || format!("{:?}", s.solver))?;
    let c = s.condenser()?;
    ensure(c.g_values.iter().flatten().all(|&g| g == 1.0), || "g is not 1".into())
}

fn scenario_errors() -> Outcome {
    let code = scenario_code(MINIMAL);
    ensure(code.as_deref() == Some("a_positive_violated $.a[1]"), || format!("{code:?}"))?;
    let valid = MINIMAL.replace("0.0]", "1.0]");
    let node = Scenario::parse(&valid)?.condenser()?.plates[1].nodes[0].clone();
    let mut v: serde_json::Value = serde_json::from_str(&valid)?;
    v["chi"] = serde_json::json!([{"position": node, "weight": 1.0}]);
    let code = scenario_code(&v.to_string());
    ensure(code.as_deref() == Some("chi_plus_meets_negative_plates $.chi[0]"), || format!("{code:?}"))
}

const CASES: &[(&str, &str, fn() -> Outcome)] = &[
    ("geometry", "sphere_shell_points", sphere_shell_points),
    ("geometry", "rotational_surface", rotational_surface),
    ("geometry", "generation_is_deterministic", generation_is_deterministic),
    ("geometry", "nearest_neighbors", nearest_neighbors),
    ("kernel", "kernel_values", kernel_values),
    ("kernel", "gram_two_nodes", gram_two_nodes),
    ("kernel", "gram_is_psd", gram_is_psd),
    ("measures", "r_map", r_map),
    ("measures", "g_moments", g_moments),
    ("measures", "validation_codes", validation_codes),
    ("energy", "mutual_energy", mutual_energy),
    ("energy", "vector_energy", vector_energy),
    ("energy", "gauss_value", gauss_value),
    ("energy", "weighted_potential", weighted_potential),
    ("energy", "strong_distance", strong_distance),
    ("projection", "cone_projection", cone_projection),
    ("projection", "equilibrium_and_capacity", equilibrium_and_capacity),
    ("projection", "green_energy_bounds", green_energy_bounds),
    ("solver", "single_node_solve", single_node_solve),
    ("solver", "symmetric_pair_solve", symmetric_pair_solve),
    ("solver", "routing", routing),
    ("solver", "converged_solve_passes_kkt", converged_solve_passes_kkt),
    ("diagnostics", "sigma_for_unit_g", sigma_for_unit_g),
    ("diagnostics", "coarse_bound", coarse_bound),
    ("diagnostics", "cone_scan", cone_scan),
    ("scenario", "scenario_defaults", scenario_defaults),
    ("scenario", "scenario_errors", scenario_errors),
];

pub fn run() -> SelftestReport {
    let cases: Vec<CaseResult> = CASES
        .iter()
        .map(|&(module, name, case)| {
            let detail = match panic::catch_unwind(case) {
                Ok(Ok(())) => None,
                Ok(Err(e)) => Some(e.to_string()),
                Err(_) => Some("panicked".into()),
            };
            CaseResult {
                module,
                name,
                passed: detail.is_none(),
                detail,
            }
        })
        .collect();
    let passed = cases.iter().filter(|c| c.passed).count();
    SelftestReport {
        passed,
        failed: cases.len() - passed,
        cases,
    }
}
