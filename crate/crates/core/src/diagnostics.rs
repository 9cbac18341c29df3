//! Solvability diagnostics for a condenser with one unbounded negative plate
//! `ell`: the threshold `Sigma_ell`, the coarse nonsolvability bound,
//! truncation sweeps and scans over `a_ell`.
//!
//! Every discrete problem is solvable. What these routines expose is the
//! continuum dichotomy: the problem is solvable iff `a_ell <= Sigma_ell`,
//! where `Sigma_ell = <g, P_ell nu*>` and `nu*` is the field of the
//! auxiliary minimizer with plate `ell` unconstrained.

use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

use crate::energy::{ContextOptions, EnergyContext};
use crate::error::{GvpError, Result};
use crate::geometry::{generate_nodes, dist, Shape};
use crate::kernel::KernelSpec;
use crate::measures::{Condenser, DiscreteMeasure, Sign};
use crate::projection::Projector;
use crate::solver::{solve_auxiliary, solve_gauss, ProblemSpec, SolveOptions};
use crate::tolerances::VERDICT_REL;

/// Default cap on the node count of a truncated plate.
pub const NODE_CAP: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Solvable,
    Boundary,
    Nonsolvable,
    /// Several unbounded plates with `a_ell < Sigma_ell`: not covered by the
    /// characterization.
    OutsideCharacterizedRegion,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Solvable => "solvable",
            Verdict::Boundary => "boundary",
            Verdict::Nonsolvable => "nonsolvable",
            Verdict::OutsideCharacterizedRegion => "outside_characterized_region",
        })
    }
}

/// Three-way verdict with band `tol` around `sigma`.
pub fn verdict(a_ell: f64, sigma: f64, tol: f64) -> Verdict {
    if (a_ell - sigma).abs() <= tol {
        Verdict::Boundary
    } else if a_ell < sigma {
        Verdict::Solvable
    } else {
        Verdict::Nonsolvable
    }
}

pub fn verdict_tol(a_ell: f64) -> f64 {
    VERDICT_REL * a_ell
}

#[derive(Clone, Debug, Serialize)]
pub struct SolvabilityReport {
    pub ell: usize,
    pub sigma_ell: f64,
    pub a_ell: f64,
    pub verdict: Verdict,
    pub verdict_tol: f64,
    pub aux_value: f64,
    pub aux_converged: bool,
    /// Projection of `nu*` onto plate `ell`.
    pub swept_measure: DiscreteMeasure,
    pub truncation_radius: Option<f64>,
}

fn check_ell(ctx: &EnergyContext, ell: usize) -> Result<()> {
    let c = &ctx.condenser;
    c.check_plate(ell)?;
    if c.plates[ell].sign != Sign::Negative {
        return Err(GvpError::Precondition(format!("plate {ell} must be negative")));
    }
    if c.plates.len() < 2 {
        return Err(GvpError::Precondition("need at least one plate besides ell".into()));
    }
    let own: std::collections::HashSet<usize> = ctx.plate_index[ell].iter().copied().collect();
    for (i, idx) in ctx.plate_index.iter().enumerate() {
        if i != ell && idx.iter().any(|g| own.contains(g)) {
            return Err(GvpError::Precondition(format!("plate {ell} must be disjoint from plate {i}")));
        }
    }
    Ok(())
}

/// `Sigma_ell` from the auxiliary problem with `J = I \ {ell}`.
pub fn sigma_threshold(ctx: &EnergyContext, ell: usize, opts: &SolveOptions) -> Result<SolvabilityReport> {
    check_ell(ctx, ell)?;
    let c = &ctx.condenser;
    let spec = ProblemSpec::without(ctx, ell);
    let aux = solve_auxiliary(ctx, &spec, opts)?;
    // nu* = chi + sum_{i != ell} alpha_i lambda^i
    let mut nu = ctx.chi_dense();
    for &i in &spec.constrained {
        let s = c.sign(i);
        for (&g, &w) in ctx.plate_index[i].iter().zip(&aux.minimizer.components[i].weights) {
            nu[g] += s * w;
        }
    }
    let mut projector = Projector::new(&ctx.form, &ctx.plate_index[ell])?.for_plate(ell);
    let swept = projector.project(&nu, &ctx.form)?;
    let sigma_ell: f64 = swept
        .projected
        .weights
        .iter()
        .zip(&c.g_values[ell])
        .map(|(w, g)| w * g)
        .sum();
    let a_ell = c.a[ell];
    let tol = verdict_tol(a_ell);
    let mut v = verdict(a_ell, sigma_ell, tol);
    if c.unbounded_plates().len() >= 2 && v == Verdict::Solvable {
        v = Verdict::OutsideCharacterizedRegion;
    }
    Ok(SolvabilityReport {
        ell,
        sigma_ell,
        a_ell,
        verdict: v,
        verdict_tol: tol,
        aux_value: aux.value,
        aux_converged: aux.converged,
        swept_measure: swept.projected,
        truncation_radius: c.plates[ell].truncation_radius,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CoarseBound {
    pub bound: f64,
    pub a_ell: f64,
    pub triggered: bool,
    pub h: f64,
    pub g_sup: f64,
    /// `g_sup` is a maximum over nodes; it bounds `g` on the continuum plates
    /// only if the scenario asserts that `g` is bounded.
    pub g_bounded_asserted: bool,
}

/// `h g_sup [chi+(X) + 2 |a_CL| / g_inf]`, with `CL = I \ {ell}`.
pub fn coarse_bound_check(ctx: &EnergyContext, ell: usize) -> Result<CoarseBound> {
    let c = &ctx.condenser;
    c.check_plate(ell)?;
    let h = ctx.kernel().require_h()?;
    let a_cl: f64 = (0..c.plates.len()).filter(|&i| i != ell).map(|i| c.a[i]).sum();
    let g_sup = c.g_sup();
    let bound = h * g_sup * (c.chi.consolidated().positive_mass() + 2.0 * a_cl / c.g_inf());
    Ok(CoarseBound {
        bound,
        a_ell: c.a[ell],
        triggered: c.a[ell] > bound,
        h,
        g_sup,
        g_bounded_asserted: c.g_bounded,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ExhaustionRecord {
    pub truncation_radius: f64,
    pub node_count: usize,
    /// `G_chi` of the truncated full problem.
    pub value: f64,
    pub aux_value: f64,
    pub sigma_estimate: f64,
    pub a_ell: f64,
    /// Mass of the `ell` component within the reference ball.
    pub plate_mass_in_window: f64,
    pub verdict: Option<Verdict>,
    pub converged: bool,
    pub kkt_passed: bool,
    pub error: Option<String>,
}

/// Inputs of a truncation sweep. Plate `ell` of `condenser` must carry a
/// rotational shape; its nodes are regenerated at every radius.
#[derive(Clone, Debug)]
pub struct SweepSetup {
    pub kernel: KernelSpec,
    pub condenser: Condenser,
    pub ell: usize,
    pub context: ContextOptions,
    pub solve: SolveOptions,
    pub node_cap: usize,
    /// Radius of the reference ball centred at the origin; defaults to the
    /// smallest truncation radius.
    pub window_radius: Option<f64>,
}

impl SweepSetup {
    pub fn new(kernel: KernelSpec, condenser: Condenser, ell: usize) -> Self {
        Self {
            kernel,
            condenser,
            ell,
            context: ContextOptions::default(),
            solve: SolveOptions::default(),
            node_cap: NODE_CAP,
            window_radius: None,
        }
    }

    fn check(&self, radii: &[f64]) -> Result<()> {
        let c = &self.condenser;
        c.check_plate(self.ell)?;
        let others = c.unbounded_plates().into_iter().filter(|&i| i != self.ell).count();
        if others > 0 {
            return Err(GvpError::Precondition("sweep needs exactly one unbounded plate".into()));
        }
        let Some(Shape::RotationalBody { q, .. }) = c.plates[self.ell].shape.as_ref().map(|s| &s.shape) else {
            return Err(GvpError::Precondition(format!(
                "plate {} must carry a rotational shape",
                self.ell
            )));
        };
        let g = &c.g_values[self.ell];
        if g.iter().any(|&x| x != g[0]) {
            return Err(GvpError::Precondition("sweeps need constant g on the truncated plate".into()));
        }
        if radii.is_empty() || radii.windows(2).any(|w| w[1] <= w[0]) || radii[0] <= *q {
            return Err(GvpError::Precondition(format!(
                "radii must be strictly increasing and exceed q = {q}"
            )));
        }
        Ok(())
    }

    /// Condenser with plate `ell` truncated at `radius`.
    pub fn truncated(&self, radius: f64) -> Result<Condenser> {
        let mut c = self.condenser.clone();
        let plate = &mut c.plates[self.ell];
        let mut spec = plate
            .shape
            .clone()
            .ok_or_else(|| GvpError::Precondition("missing shape".into()))?;
        if let Shape::RotationalBody { truncation_radius, .. } = &mut spec.shape {
            *truncation_radius = radius;
        }
        spec.node_count = spec.shape.natural_node_count().unwrap_or(spec.node_count);
        if spec.node_count > self.node_cap {
            return Err(GvpError::Precondition(format!(
                "truncation at R = {radius} needs {} nodes, cap is {}",
                spec.node_count, self.node_cap
            )));
        }
        let g0 = c.g_values[self.ell].first().copied().unwrap_or(1.0);
        plate.nodes = generate_nodes(&spec, self.kernel.dim)?;
        plate.truncation_radius = Some(radius);
        c.g_values[self.ell] = vec![g0; plate.nodes.len()];
        plate.shape = Some(spec);
        Ok(c)
    }

    fn record(&self, radius: f64, window: f64) -> Result<ExhaustionRecord> {
        let c = self.truncated(radius)?;
        let ctx = EnergyContext::with_options(&self.kernel, c, &self.context)?;
        let full = solve_gauss(&ctx, &self.solve)?;
        let sigma = sigma_threshold(&ctx, self.ell, &self.solve)?;
        let ell_w = &full.minimizer.components[self.ell].weights;
        let origin = vec![0.0; self.kernel.dim];
        let plate_mass_in_window = ctx.condenser.plates[self.ell]
            .nodes
            .iter()
            .zip(ell_w)
            .filter(|(p, _)| dist(p, &origin) <= window)
            .map(|(_, w)| w)
            .sum();
        Ok(ExhaustionRecord {
            truncation_radius: radius,
            node_count: ctx.condenser.plates[self.ell].nodes.len(),
            value: full.value,
            aux_value: sigma.aux_value,
            sigma_estimate: sigma.sigma_ell,
            a_ell: sigma.a_ell,
            plate_mass_in_window,
            verdict: Some(sigma.verdict),
            converged: full.converged && sigma.aux_converged,
            kkt_passed: full.kkt.passed,
            error: None,
        })
    }
}

/// Solves the truncated problems at every radius. Failures at one radius are
/// recorded in that entry and do not stop the sweep; entries are ordered by
/// radius.
pub fn exhaustion_sweep(setup: &SweepSetup, radii: &[f64]) -> Result<Vec<ExhaustionRecord>> {
    setup.check(radii)?;
    let window = setup.window_radius.unwrap_or(radii[0]);
    let a_ell = setup.condenser.a[setup.ell];
    Ok(radii
        .par_iter()
        .map(|&r| {
            setup.record(r, window).unwrap_or_else(|e| ExhaustionRecord {
                truncation_radius: r,
                node_count: 0,
                value: f64::NAN,
                aux_value: f64::NAN,
                sigma_estimate: f64::NAN,
                a_ell,
                plate_mass_in_window: f64::NAN,
                verdict: None,
                converged: false,
                kkt_passed: false,
                error: Some(e.to_string()),
            })
        })
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct ConeScanEntry {
    pub a_ell: f64,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConeScan {
    pub sigma_ell: f64,
    pub a_positive: f64,
    /// `Sigma_ell / a_1`, the slope of the solvable cone.
    pub ratio: f64,
    pub entries: Vec<ConeScanEntry>,
}

/// Verdicts across trial values of `a_ell` for a (positive, negative) pair
/// without external field. `Sigma_ell` does not depend on `a_ell`, so it is
/// computed once.
pub fn solvable_cone_scan(ctx: &EnergyContext, ell: usize, grid: &[f64], opts: &SolveOptions) -> Result<ConeScan> {
    let c = &ctx.condenser;
    if c.plates.len() != 2 || !c.chi.consolidated().is_empty() {
        return Err(GvpError::Precondition(
            "cone scan needs two plates and no external field".into(),
        ));
    }
    let report = sigma_threshold(ctx, ell, opts)?;
    let pos = 1 - ell;
    let a_positive = c.a[pos];
    let entries = grid
        .iter()
        .map(|&a| ConeScanEntry {
            a_ell: a,
            verdict: verdict(a, report.sigma_ell, verdict_tol(a)),
        })
        .collect();
    Ok(ConeScan {
        sigma_ell: report.sigma_ell,
        a_positive,
        ratio: report.sigma_ell / a_positive,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point, Profile, ShapeSpec};
    use crate::measures::{Plate, SignedMeasure};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shell(n: usize, center: [f64; 3], radius: f64) -> Vec<Point> {
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

    #[test]
    fn verdict_bands() {
        assert_eq!(verdict(1.0, 1.0, 1e-4), Verdict::Boundary);
        assert_eq!(verdict(0.5, 1.0, 1e-4), Verdict::Solvable);
        assert_eq!(verdict(1.5, 1.0, 1e-4), Verdict::Nonsolvable);
        assert_eq!(Verdict::Nonsolvable.to_string(), "nonsolvable");
    }

    #[test]
    fn coarse_bound_arithmetic() {
        let c = Condenser::new(
            vec![
                Plate::new(shell(10, [0.0; 3], 1.0), Sign::Positive),
                Plate::new(shell(10, [4.0, 0.0, 0.0], 1.0), Sign::Negative),
            ],
            vec![1.0, 3.0],
        );
        let ctx = EnergyContext::new(&KernelSpec::newtonian3(), c).unwrap();
        let b = coarse_bound_check(&ctx, 1).unwrap();
        assert_eq!(b.bound, 2.0);
        assert!(b.triggered);
        let riesz = KernelSpec::new(2.5, 3, None).unwrap();
        let ctx = EnergyContext::new(&riesz, ctx.condenser.clone()).unwrap();
        assert!(matches!(
            coarse_bound_check(&ctx, 1),
            Err(GvpError::MissingMaxPrincipleConstant(_))
        ));
    }

    #[test]
    fn sigma_is_the_swept_mass_for_unit_g() {
        let c = Condenser::new(
            vec![
                Plate::new(shell(20, [0.0; 3], 0.5), Sign::Positive),
                Plate::new(shell(120, [3.0, 0.0, 0.0], 1.0), Sign::Negative),
            ],
            vec![1.0, 0.2],
        );
        let ctx = EnergyContext::new(&KernelSpec::newtonian3(), c).unwrap();
        let r = sigma_threshold(&ctx, 1, &SolveOptions::default()).unwrap();
        assert!((r.sigma_ell - r.swept_measure.mass()).abs() < 1e-12);
        assert!(r.sigma_ell > 0.0 && r.sigma_ell <= 1.0 + 1e-9);
        assert_eq!(r.verdict, Verdict::Solvable);
    }

    #[test]
    fn sigma_requires_disjoint_negative_plate() {
        let nodes = shell(12, [0.0; 3], 1.0);
        let c = Condenser::new(
            vec![
                Plate::new(nodes.clone(), Sign::Negative),
                Plate::new(nodes[..6].to_vec(), Sign::Negative),
                Plate::new(shell(12, [5.0, 0.0, 0.0], 1.0), Sign::Positive),
            ],
            vec![1.0, 1.0, 1.0],
        );
        let ctx = EnergyContext::new(&KernelSpec::newtonian3(), c).unwrap();
        assert!(matches!(sigma_threshold(&ctx, 0, &SolveOptions::default()), Err(GvpError::Precondition(_))));
        assert!(matches!(sigma_threshold(&ctx, 2, &SolveOptions::default()), Err(GvpError::Precondition(_))));
    }

    #[test]
    fn coarse_bound_never_contradicts_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..4 {
            let a1 = rng.gen_range(0.2..1.0);
            let c = Condenser::new(
                vec![
                    Plate::new(shell(15, [0.0; 3], 0.5), Sign::Positive),
                    Plate::new(shell(40, [rng.gen_range(2.0..4.0), 0.0, 0.0], 1.0), Sign::Negative),
                ],
                vec![a1, rng.gen_range(0.1..4.0 * a1)],
            )
            .with_chi(SignedMeasure::atom(vec![0.0, -3.0, 0.0], rng.gen_range(-1.0..1.0)));
            let ctx = EnergyContext::new(&KernelSpec::newtonian3(), c).unwrap();
            let b = coarse_bound_check(&ctx, 1).unwrap();
            let s = sigma_threshold(&ctx, 1, &SolveOptions::default()).unwrap();
            assert!(s.sigma_ell <= b.bound);
            if b.triggered {
                assert_eq!(s.verdict, Verdict::Nonsolvable);
            }
        }
    }

    fn rotational_setup(profile: Profile, a: [f64; 2]) -> SweepSetup {
        let spec = ShapeSpec::rotational(1.0, profile, 3.0, 0.5);
        let mut plate = Plate::new(generate_nodes(&spec, 3).unwrap(), Sign::Negative);
        plate.shape = Some(spec);
        plate.truncation_radius = Some(3.0);
        let c = Condenser::new(vec![Plate::new(shell(20, [-1.0, 0.0, 0.0], 0.5), Sign::Positive), plate], a.to_vec());
        SweepSetup::new(KernelSpec::newtonian3(), c, 1)
    }

    #[test]
    fn sweep_orders_records_and_reports_failures() {
        let mut setup = rotational_setup(Profile::Power { s: 1.0 }, [1.0, 1.0]);
        setup.node_cap = 60;
        let recs = exhaustion_sweep(&setup, &[2.0, 3.0, 8.0]).unwrap();
        assert_eq!(recs.len(), 3);
        assert!(recs[0].error.is_none() && recs[1].error.is_none());
        assert!(recs[2].error.is_some());
        assert!(recs[1].value <= recs[0].value + 1e-8 * (1.0 + recs[0].value.abs()));
        assert!(exhaustion_sweep(&setup, &[3.0, 2.0]).is_err());
        assert!(exhaustion_sweep(&setup, &[0.5, 2.0]).is_err());
    }

    #[test]
    fn cone_scan_is_monotone() {
        let setup = rotational_setup(Profile::Power { s: 1.0 }, [1.0, 1.0]);
        let ctx = EnergyContext::new(&setup.kernel, setup.condenser.clone()).unwrap();
        let grid: Vec<f64> = (1..=12).map(|k| 0.1 * k as f64).collect();
        let scan = solvable_cone_scan(&ctx, 1, &grid, &SolveOptions::default()).unwrap();
        assert!(scan.ratio <= 1.0 + 1e-9);
        let first_non = scan.entries.iter().position(|e| e.verdict == Verdict::Nonsolvable);
        if let Some(k) = first_non {
            assert!(scan.entries[k..].iter().all(|e| e.verdict == Verdict::Nonsolvable));
            assert!(scan.entries[..k].iter().all(|e| e.verdict != Verdict::Nonsolvable));
        }
    }
}
