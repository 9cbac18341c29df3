//! Orthogonal projection onto the cone of nonnegative measures on a node set
//! (discrete balayage), equilibrium measures, capacities and Green energies.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::energy::EnergyContext;
use crate::error::{GvpError, Result};
use crate::kernel::EnergyForm;
use crate::measures::{DiscreteMeasure, SignedMeasure};
use crate::nnls::ActiveSetNnls;
use crate::tolerances::{EQUILIBRIUM_REL, KKT_REL, MASS_BOUND_SLACK};

#[derive(Clone, Debug, Serialize)]
pub struct ProjectionResult {
    /// Weights aligned with `target`.
    pub projected: DiscreteMeasure,
    /// Global indices of the target nodes.
    pub target: Vec<usize>,
    /// `||nu - P nu||`.
    pub distance: f64,
    /// `kappa(x_j, P nu - nu)` at every target node.
    pub kkt_residuals: Vec<f64>,
    /// `kappa(nu - P nu, P nu)`.
    pub complementarity_residual: f64,
    pub iterations: usize,
    /// Tolerance used for the residual checks, `KKT_REL * (1 + ||nu||)`.
    pub kkt_tol: f64,
}

impl ProjectionResult {
    pub fn mass(&self) -> f64 {
        self.projected.mass()
    }

    /// `min_j kappa(x_j, P nu - nu) >= -tol`.
    pub fn domination_ok(&self) -> bool {
        self.kkt_residuals.iter().all(|&r| r >= -self.kkt_tol)
    }

    /// Equality of potentials on the support of `P nu`.
    pub fn support_equality_ok(&self) -> bool {
        self.projected
            .weights
            .iter()
            .zip(&self.kkt_residuals)
            .all(|(&w, &r)| w == 0.0 || r.abs() <= self.kkt_tol)
    }

    pub fn kkt_ok(&self) -> bool {
        self.domination_ok() && self.support_equality_ok()
    }

    pub fn as_dense(&self, n_global: usize) -> DVector<f64> {
        let mut v = DVector::zeros(n_global);
        for (&g, &w) in self.target.iter().zip(&self.projected.weights) {
            v[g] += w;
        }
        v
    }
}

/// Projection onto a fixed target cone, reusing the active set across calls.
#[derive(Clone, Debug)]
pub struct Projector {
    target: Vec<usize>,
    solver: ActiveSetNnls,
    plate_index: Option<usize>,
}

impl Projector {
    pub fn new(form: &EnergyForm, target: &[usize]) -> Result<Self> {
        if target.is_empty() {
            return Err(GvpError::Precondition("projection target is empty".into()));
        }
        let mut t = target.to_vec();
        t.sort_unstable();
        t.dedup();
        if t.len() != target.len() || t.last().is_some_and(|&m| m >= form.len()) {
            return Err(GvpError::Precondition("target indices must be distinct and in range".into()));
        }
        let q = DMatrix::from_fn(target.len(), target.len(), |i, j| form.gram[(target[i], target[j])]);
        Ok(Self {
            target: target.to_vec(),
            solver: ActiveSetNnls::new(q),
            plate_index: None,
        })
    }

    pub fn for_plate(mut self, plate: usize) -> Self {
        self.plate_index = Some(plate);
        self
    }

    pub fn target(&self) -> &[usize] {
        &self.target
    }

    pub fn solver(&self) -> &ActiveSetNnls {
        &self.solver
    }

    pub fn set_max_iterations(&mut self, n: usize) {
        self.solver.max_iterations = n;
    }

    /// Projects the dense measure `x` given its potential `gx = G x`.
    pub fn project_with_potential(&mut self, x: &DVector<f64>, gx: &DVector<f64>) -> Result<ProjectionResult> {
        let b: Vec<f64> = self.target.iter().map(|&g| gx[g]).collect();
        let out = self.solver.solve(&b);
        let norm_sq = x.dot(gx);
        let kkt_tol = KKT_REL * (1.0 + norm_sq.max(0.0).sqrt());
        if !out.converged {
            return Err(GvpError::NonConvergence {
                what: "cone projection",
                iterations: out.iterations,
                residual: out.dual_violation,
            });
        }
        let w = self.solver.solution().to_vec();
        let q = self.solver.matrix();
        let qw = q * DVector::from_column_slice(&w);
        let kkt_residuals: Vec<f64> = qw.iter().zip(&b).map(|(a, bb)| a - bb).collect();
        let wqw: f64 = w.iter().zip(qw.iter()).map(|(a, b)| a * b).sum();
        let wb: f64 = w.iter().zip(&b).map(|(a, b)| a * b).sum();
        let dist_sq = norm_sq - 2.0 * wb + wqw;
        Ok(ProjectionResult {
            projected: DiscreteMeasure {
                plate_index: self.plate_index,
                weights: w,
            },
            target: self.target.clone(),
            distance: dist_sq.max(0.0).sqrt(),
            kkt_residuals,
            complementarity_residual: wb - wqw,
            iterations: out.iterations,
            kkt_tol,
        })
    }

    pub fn project(&mut self, x: &DVector<f64>, form: &EnergyForm) -> Result<ProjectionResult> {
        let gx = &form.gram * x;
        self.project_with_potential(x, &gx)
    }
}

/// Projects `nu` onto the nonnegative cone over the global `target` nodes.
pub fn project_onto_cone(ctx: &EnergyContext, nu: &SignedMeasure, target: &[usize]) -> Result<ProjectionResult> {
    let x = ctx.dense(nu)?;
    Projector::new(&ctx.form, target)?.project(&x, &ctx.form)
}

#[derive(Clone, Debug, Serialize)]
pub struct BalayageResult {
    pub projection: ProjectionResult,
    pub swept_mass: f64,
    pub source_positive_mass: f64,
    /// `h * nu+(X)` when `h` is known.
    pub mass_bound: Option<f64>,
    pub mass_bound_ok: Option<bool>,
}

fn reject_atoms_on(ctx: &EnergyContext, nu: &SignedMeasure, plate: usize) -> Result<()> {
    ctx.condenser.check_plate(plate)?;
    let on: std::collections::HashSet<usize> = ctx.plate_index[plate].iter().copied().collect();
    for a in &nu.atoms {
        match ctx.index_of(&a.position) {
            Some(g) if on.contains(&g) && a.weight != 0.0 => return Err(GvpError::AtomsOnTarget),
            Some(_) => {}
            None => return Err(GvpError::UnindexedAtom(a.position.clone())),
        }
    }
    Ok(())
}

/// Sweeps `nu` (with no atoms on the plate) onto plate `plate`.
pub fn balayage(ctx: &EnergyContext, nu: &SignedMeasure, plate: usize) -> Result<BalayageResult> {
    reject_atoms_on(ctx, nu, plate)?;
    let x = ctx.dense(nu)?;
    let projection = Projector::new(&ctx.form, &ctx.plate_index[plate])?
        .for_plate(plate)
        .project(&x, &ctx.form)?;
    let swept_mass = projection.mass();
    let source_positive_mass = nu.consolidated().positive_mass();
    let mass_bound = ctx.kernel().h().map(|h| h * source_positive_mass);
    let mass_bound_ok = mass_bound.map(|b| swept_mass <= b * (1.0 + MASS_BOUND_SLACK));
    Ok(BalayageResult {
        projection,
        swept_mass,
        source_positive_mass,
        mass_bound,
        mass_bound_ok,
    })
}

/// `||nu - P nu||^2` for the cone over plate `plate`.
pub fn green_energy(ctx: &EnergyContext, nu: &SignedMeasure, plate: usize) -> Result<f64> {
    reject_atoms_on(ctx, nu, plate)?;
    if nu.consolidated().is_empty() {
        return Ok(0.0);
    }
    let x = ctx.dense(nu)?;
    let p = Projector::new(&ctx.form, &ctx.plate_index[plate])?.project(&x, &ctx.form)?;
    Ok(p.distance * p.distance)
}

#[derive(Clone, Debug, Serialize)]
pub struct EquilibriumResult {
    pub measure: DiscreteMeasure,
    pub target: Vec<usize>,
    pub capacity: f64,
    /// `||theta||^2`.
    pub energy: f64,
    pub potential_at_nodes: Vec<f64>,
    pub iterations: usize,
}

impl EquilibriumResult {
    /// `theta(X) = ||theta||^2` within `EQUILIBRIUM_REL`.
    pub fn identity_ok(&self) -> bool {
        (self.capacity - self.energy).abs() <= EQUILIBRIUM_REL * self.capacity.abs().max(self.energy.abs())
    }

    pub fn potential_ok(&self, tol: f64) -> bool {
        self.potential_at_nodes
            .iter()
            .zip(&self.measure.weights)
            .all(|(&p, &w)| p >= 1.0 - tol && (w == 0.0 || p <= 1.0 + tol))
    }
}

/// Minimizes `||nu||^2` over `nu >= 0` on `target` with `kappa(x_j, nu) >= 1`
/// at every target node.
///
/// The dual of this problem is `max 2 * 1'l - l'Ql` over `l >= 0`, whose
/// solution is the equilibrium measure itself, so it is solved by the same
/// active-set machinery with right-hand side `1`.
pub fn equilibrium_measure(ctx: &EnergyContext, target: &[usize]) -> Result<EquilibriumResult> {
    let mut proj = Projector::new(&ctx.form, target)?;
    let ones = vec![1.0; target.len()];
    let out = proj.solver.solve(&ones);
    if !out.converged {
        return Err(GvpError::NonConvergence {
            what: "equilibrium measure",
            iterations: out.iterations,
            residual: out.dual_violation,
        });
    }
    let w = proj.solver.solution().to_vec();
    let q = proj.solver.matrix();
    let pot = q * DVector::from_column_slice(&w);
    let energy: f64 = w.iter().zip(pot.iter()).map(|(a, b)| a * b).sum();
    Ok(EquilibriumResult {
        capacity: w.iter().sum(),
        energy,
        potential_at_nodes: pot.iter().copied().collect(),
        measure: DiscreteMeasure {
            plate_index: None,
            weights: w,
        },
        target: target.to_vec(),
        iterations: out.iterations,
    })
}

pub fn capacity(ctx: &EnergyContext, target: &[usize]) -> Result<f64> {
    Ok(equilibrium_measure(ctx, target)?.capacity)
}
