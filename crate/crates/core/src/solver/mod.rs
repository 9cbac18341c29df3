//! Solvers for the Gauss variational problem and the auxiliary problem with
//! unconstrained (negative) plates, plus the weighted-potential certificate
//! of optimality.
//!
//! The full problem minimizes `G_chi(mu) = ||R mu||^2 + 2 kappa(chi, R mu)`
//! over vector measures with `<g, mu^i> = a_i`. In the auxiliary problem only
//! the plates in `J` carry that constraint; the remaining plates are optimized
//! out in closed form through a cone projection.

mod engine;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::energy::EnergyContext;
use crate::error::{GvpError, Result};
use crate::measures::{Sign, VectorMeasure};
use crate::projection::Projector;
use crate::tolerances::{GAP_REL, IDENTITY_REL, KKT_REL};

use engine::{EngineOptions, EngineOutcome, Layout, Objective, State, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Full,
    #[serde(alias = "aux")]
    Auxiliary,
}

/// Which plates carry the moment constraint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ProblemSpec {
    pub constrained: Vec<usize>,
}

impl ProblemSpec {
    pub fn full(ctx: &EnergyContext) -> Self {
        Self {
            constrained: (0..ctx.condenser.plates.len()).collect(),
        }
    }

    pub fn auxiliary(constrained: Vec<usize>) -> Self {
        let mut constrained = constrained;
        constrained.sort_unstable();
        constrained.dedup();
        Self { constrained }
    }

    /// `J = I \ {ell}`.
    pub fn without(ctx: &EnergyContext, ell: usize) -> Self {
        Self {
            constrained: (0..ctx.condenser.plates.len()).filter(|&i| i != ell).collect(),
        }
    }

    pub fn unconstrained(&self, ctx: &EnergyContext) -> Vec<usize> {
        (0..ctx.condenser.plates.len())
            .filter(|i| !self.constrained.contains(i))
            .collect()
    }

    pub fn mode(&self, ctx: &EnergyContext) -> Mode {
        if self.unconstrained(ctx).is_empty() {
            Mode::Full
        } else {
            Mode::Auxiliary
        }
    }

    pub fn check(&self, ctx: &EnergyContext) -> Result<()> {
        for &i in &self.constrained {
            ctx.condenser.check_plate(i)?;
        }
        for (i, p) in ctx.condenser.plates.iter().enumerate() {
            if p.sign == Sign::Positive && !self.constrained.contains(&i) {
                return Err(GvpError::Precondition(format!(
                    "positive plate {i} must be constrained"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    /// Stopping rule: gap <= `gap_tol_rel * (1 + |value|)`.
    pub gap_tol_rel: f64,
    /// Defaults to `200 * N_total`.
    pub max_iters: Option<usize>,
    pub polish: bool,
    pub record_trace: bool,
    /// Starting point for the constrained components (uniform by default).
    pub initial: Option<VectorMeasure>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            gap_tol_rel: GAP_REL,
            max_iters: None,
            polish: true,
            record_trace: false,
            initial: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PlateKkt {
    pub plate: usize,
    pub constrained: bool,
    /// `<W^i, mu^i>`.
    pub eta: f64,
    pub lower_violation: f64,
    pub support_violation: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct KktReport {
    pub plates: Vec<PlateKkt>,
    pub lower_violation: f64,
    pub support_violation: f64,
    /// Tolerance for `lower_violation`, `KKT_REL * (1 + max |W|)`.
    pub lower_tol: f64,
    /// Tolerance for `support_violation`, `KKT_REL * (1 + max a_i |W^i|)`.
    pub support_tol: f64,
    pub sum_eta: f64,
    /// `(||R mu||^2 + G_chi(mu)) / 2`.
    pub sum_rule_rhs: f64,
    pub sum_rule_ok: bool,
    pub passed: bool,
}

impl KktReport {
    pub fn etas(&self) -> Vec<f64> {
        self.plates.iter().map(|p| p.eta).collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IterateRecord {
    pub iteration: usize,
    pub step: &'static str,
    pub value: f64,
    pub gap: f64,
    #[serde(skip)]
    pub iterate: VectorMeasure,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub mode: Mode,
    pub constrained: Vec<usize>,
    pub minimizer: VectorMeasure,
    pub value: f64,
    pub duality_gap: f64,
    pub gap_tol: f64,
    pub converged: bool,
    /// `|<g, mu^i> - a_i|` for constrained plates, `None` otherwise.
    pub feasibility_residuals: Vec<Option<f64>>,
    pub kkt: KktReport,
    pub iterations: usize,
    pub wallclock_secs: f64,
    #[serde(skip)]
    pub trace: Vec<IterateRecord>,
}

impl SolveReport {
    pub fn feasible(&self, ctx: &EnergyContext) -> bool {
        self.feasibility_residuals
            .iter()
            .zip(&ctx.condenser.a)
            .all(|(r, a)| r.is_none_or(|r| r <= 1e-10 * a))
    }

    /// Error out when the solve hit the iteration cap.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(GvpError::NonConvergence {
                what: "Frank-Wolfe solve",
                iterations: self.iterations,
                residual: self.duality_gap,
            })
        }
    }
}

/// Constrained plates as blocks `(a_i / g_j) e_j`.
fn constrained_layout(ctx: &EnergyContext, plates: &[usize]) -> Layout {
    let mut layout = Layout::default();
    for &i in plates {
        let sign = ctx.condenser.sign(i);
        let a = ctx.condenser.a[i];
        let vars = ctx.plate_index[i]
            .iter()
            .zip(&ctx.condenser.g_values[i])
            .map(|(&global, &g)| Var {
                global,
                sign,
                scale: a / g,
            });
        layout.push_block(vars, false);
    }
    layout
}

fn initial_weights(ctx: &EnergyContext, plates: &[usize], initial: Option<&VectorMeasure>) -> Result<Vec<f64>> {
    let mut w = Vec::new();
    for &i in plates {
        let g = &ctx.condenser.g_values[i];
        match initial {
            Some(mu) => {
                ctx.condenser.check_conforms(mu)?;
                let c = &mu.components[i].weights;
                if c.iter().any(|&x| x < 0.0) || c.iter().all(|&x| x == 0.0) {
                    return Err(GvpError::Precondition(format!(
                        "initial component {i} must be nonnegative and nonzero"
                    )));
                }
                w.extend_from_slice(c);
            }
            None => {
                let total: f64 = g.iter().sum();
                w.extend(g.iter().map(|_| ctx.condenser.a[i] / total));
            }
        }
    }
    Ok(w)
}

fn split_weights(ctx: &EnergyContext, plates: &[usize], w: &[f64]) -> VectorMeasure {
    let mut mu = VectorMeasure::zeros(&ctx.condenser);
    let mut offset = 0;
    for &i in plates {
        let n = ctx.plate_index[i].len();
        mu.components[i].weights.copy_from_slice(&w[offset..offset + n]);
        offset += n;
    }
    mu
}

fn default_max_iters(n_vars: usize) -> usize {
    200 * n_vars.max(1)
}

/// Quadratic objective `||R w||^2 + 2 kappa(chi, R w)`.
struct Quadratic {
    gchi: DVector<f64>,
    value: f64,
    grad: Vec<f64>,
}

impl Quadratic {
    fn new(ctx: &EnergyContext) -> Self {
        Self {
            gchi: &ctx.form.gram * ctx.chi_dense(),
            value: 0.0,
            grad: Vec::new(),
        }
    }
}

impl Objective for Quadratic {
    fn refresh(&mut self, s: &State) -> Result<()> {
        self.value = s.rw.dot(&s.u) + 2.0 * s.rw.dot(&self.gchi);
        self.grad = s
            .layout
            .vars
            .iter()
            .map(|v| 2.0 * v.sign * (s.u[v.global] + self.gchi[v.global]))
            .collect();
        Ok(())
    }

    fn value(&self) -> f64 {
        self.value
    }

    fn gradient(&self) -> &[f64] {
        &self.grad
    }

    fn line_search(&mut self, s: &State, d: &[(usize, f64)], gv: &DVector<f64>, tmax: f64) -> Result<f64> {
        let slope: f64 = d.iter().map(|&(j, dj)| self.grad[j] * dj).sum();
        if slope >= 0.0 {
            return Ok(0.0);
        }
        let curv = s.curvature(d, gv);
        if curv <= 0.0 {
            return Ok(tmax);
        }
        Ok((-slope / (2.0 * curv)).min(tmax))
    }

    fn face_quadratic(&self, s: &State, support: &[usize]) -> Result<Option<(DMatrix<f64>, DVector<f64>)>> {
        let vars: Vec<&Var> = support.iter().map(|&j| &s.layout.vars[j]).collect();
        let h = DMatrix::from_fn(vars.len(), vars.len(), |p, q| {
            vars[p].sign * vars[q].sign * s.gram[(vars[p].global, vars[q].global)]
        });
        let c = DVector::from_iterator(vars.len(), vars.iter().map(|v| v.sign * self.gchi[v.global]));
        Ok(Some((h, c)))
    }
}

/// Composite objective `||x - P x||^2 - ||chi||^2` with `x = chi + R w` and
/// `P` the projection onto the cone over the unconstrained plates' nodes.
struct Composite {
    chi: DVector<f64>,
    gchi: DVector<f64>,
    chi_sq: f64,
    projector: Projector,
    /// Weights of the current projection, aligned with the target.
    tau: Vec<f64>,
    /// `G (x - P x)`.
    g_res: DVector<f64>,
    value: f64,
    grad: Vec<f64>,
}

impl Composite {
    fn new(ctx: &EnergyContext, target: &[usize]) -> Result<Self> {
        let chi = ctx.chi_dense();
        let gchi = &ctx.form.gram * &chi;
        Ok(Self {
            chi_sq: chi.dot(&gchi),
            chi,
            gchi,
            projector: Projector::new(&ctx.form, target)?,
            tau: Vec::new(),
            g_res: DVector::zeros(0),
            value: 0.0,
            grad: Vec::new(),
        })
    }

    fn point(&self, s: &State) -> (DVector<f64>, DVector<f64>) {
        (&self.chi + &s.rw, &self.gchi + &s.u)
    }

    /// Projects `x` and returns `(Gv)' (x - P x)`.
    fn directional(&mut self, x: &DVector<f64>, gx: &DVector<f64>, gv: &DVector<f64>) -> Result<f64> {
        let p = self.projector.project_with_potential(x, gx)?;
        let target = self.projector.target();
        let mut d = gv.dot(x);
        for (k, &wk) in p.projected.weights.iter().enumerate() {
            d -= gv[target[k]] * wk;
        }
        Ok(d)
    }

    fn passive_globals(&self) -> Vec<usize> {
        let target = self.projector.target();
        self.projector.solver().passive().iter().map(|&p| target[p]).collect()
    }

    /// `H_F^{-1} y_F` for the current passive set.
    fn passive_solve(&self, y: &DVector<f64>) -> (Vec<usize>, Vec<f64>) {
        let f = self.passive_globals();
        let rhs: Vec<f64> = f.iter().map(|&g| y[g]).collect();
        let z = if f.is_empty() {
            Vec::new()
        } else {
            self.projector.solver().solve_passive(&rhs)
        };
        (f, z)
    }
}

impl Objective for Composite {
    fn refresh(&mut self, s: &State) -> Result<()> {
        let (x, gx) = self.point(s);
        let p = self.projector.project_with_potential(&x, &gx)?;
        let target = self.projector.target().to_vec();
        let mut g_res = gx;
        let mut r = x;
        for (k, &wk) in p.projected.weights.iter().enumerate() {
            if wk != 0.0 {
                g_res.axpy(-wk, &s.gram.column(target[k]), 1.0);
                r[target[k]] -= wk;
            }
        }
        self.value = r.dot(&g_res) - self.chi_sq;
        self.grad = s
            .layout
            .vars
            .iter()
            .map(|v| 2.0 * v.sign * g_res[v.global])
            .collect();
        self.tau = p.projected.weights;
        self.g_res = g_res;
        Ok(())
    }

    fn value(&self) -> f64 {
        self.value
    }

    fn gradient(&self) -> &[f64] {
        &self.grad
    }

    fn line_search(&mut self, s: &State, d: &[(usize, f64)], gv: &DVector<f64>, tmax: f64) -> Result<f64> {
        let slope0: f64 = d.iter().map(|&(j, dj)| self.grad[j] * dj).sum();
        if slope0 >= 0.0 {
            return Ok(0.0);
        }
        // phi'(t) / 2 = (G v)' r(t), piecewise linear and nondecreasing
        let (x, gx) = self.point(s);
        let v = s.r_of(d);
        let eval = |t: f64, this: &mut Self| -> Result<f64> {
            let xt = &x + &v * t;
            let gxt = &gx + gv * t;
            this.directional(&xt, &gxt, gv)
        };
        let (f, z) = self.passive_solve(gv);
        let reduced: f64 = f.iter().zip(&z).map(|(&g, zk)| gv[g] * zk).sum();
        let curv = s.curvature(d, gv) - reduced;
        let d0 = slope0 / 2.0;
        let guess = if curv > 0.0 { (-d0 / curv).min(tmax) } else { tmax };
        let scale = d0.abs();
        let tol = 1e-12 * scale;

        let dg = eval(guess, self)?;
        if dg.abs() <= tol || (guess >= tmax && dg <= 0.0) {
            return Ok(guess);
        }
        let (mut lo, mut dlo, mut hi, mut dhi) = if dg > 0.0 {
            (0.0, d0, guess, dg)
        } else {
            let dt = eval(tmax, self)?;
            if dt <= 0.0 {
                return Ok(tmax);
            }
            (guess, dg, tmax, dt)
        };
        // Illinois regula falsi; exact once both ends lie on one linear piece.
        let mut side = 0i8;
        for _ in 0..100 {
            let t = lo - dlo * (hi - lo) / (dhi - dlo);
            let t = if t > lo && t < hi { t } else { 0.5 * (lo + hi) };
            let dt = eval(t, self)?;
            if dt.abs() <= tol || hi - lo <= 1e-15 * tmax {
                return Ok(t);
            }
            if dt < 0.0 {
                lo = t;
                dlo = dt;
                if side == -1 {
                    dhi *= 0.5;
                }
                side = -1;
            } else {
                hi = t;
                dhi = dt;
                if side == 1 {
                    dlo *= 0.5;
                }
                side = 1;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    fn face_quadratic(&self, s: &State, support: &[usize]) -> Result<Option<(DMatrix<f64>, DVector<f64>)>> {
        let f = self.passive_globals();
        let vars: Vec<&Var> = support.iter().map(|&j| &s.layout.vars[j]).collect();
        let ns = vars.len();
        // Y = G_FF^{-1} G_{F,S}
        let mut y: Vec<Vec<f64>> = Vec::with_capacity(ns);
        for v in &vars {
            if f.is_empty() {
                y.push(Vec::new());
            } else {
                let col: Vec<f64> = f.iter().map(|&g| s.gram[(g, v.global)]).collect();
                y.push(self.projector.solver().solve_passive(&col));
            }
        }
        let h = DMatrix::from_fn(ns, ns, |p, q| {
            let reduced: f64 = f.iter().zip(&y[q]).map(|(&g, yk)| s.gram[(g, vars[p].global)] * yk).sum();
            vars[p].sign * vars[q].sign * (s.gram[(vars[p].global, vars[q].global)] - reduced)
        });
        let (_, zchi) = self.passive_solve(&self.gchi);
        let c = DVector::from_iterator(
            ns,
            vars.iter().map(|v| {
                let reduced: f64 = f.iter().zip(&zchi).map(|(&g, zk)| s.gram[(g, v.global)] * zk).sum();
                v.sign * (self.gchi[v.global] - reduced)
            }),
        );
        Ok(Some((h, c)))
    }
}

fn engine_options(opts: &SolveOptions, n_vars: usize) -> EngineOptions {
    EngineOptions {
        gap_tol_rel: opts.gap_tol_rel,
        max_iters: opts.max_iters.unwrap_or_else(|| default_max_iters(n_vars)),
        polish: opts.polish,
        record_trace: opts.record_trace,
    }
}

fn feasibility(ctx: &EnergyContext, spec: &ProblemSpec, mu: &VectorMeasure) -> Result<Vec<Option<f64>>> {
    (0..ctx.condenser.plates.len())
        .map(|i| {
            if spec.constrained.contains(&i) {
                Ok(Some((ctx.condenser.g_moment(mu, i)? - ctx.condenser.a[i]).abs()))
            } else {
                Ok(None)
            }
        })
        .collect()
}

fn trace_records(
    ctx: &EnergyContext,
    plates: &[usize],
    out: &EngineOutcome,
    extra: impl Fn(&[f64], &mut VectorMeasure),
) -> Vec<IterateRecord> {
    out.trace
        .iter()
        .map(|t| {
            let mut iterate = split_weights(ctx, plates, &t.w);
            extra(&t.w, &mut iterate);
            IterateRecord {
                iteration: t.iteration,
                step: t.step,
                value: t.value,
                gap: t.gap,
                iterate,
            }
        })
        .collect()
}

fn report(
    ctx: &EnergyContext,
    spec: &ProblemSpec,
    minimizer: VectorMeasure,
    out: &EngineOutcome,
    trace: Vec<IterateRecord>,
    started: Instant,
) -> Result<SolveReport> {
    let unconstrained = spec.unconstrained(ctx);
    let kkt = verify_kkt_with(ctx, &minimizer, &unconstrained)?;
    Ok(SolveReport {
        mode: spec.mode(ctx),
        constrained: spec.constrained.clone(),
        feasibility_residuals: feasibility(ctx, spec, &minimizer)?,
        minimizer,
        value: out.value,
        duality_gap: out.gap,
        gap_tol: out.gap_tol,
        converged: out.converged,
        kkt,
        iterations: out.iterations,
        wallclock_secs: started.elapsed().as_secs_f64(),
        trace,
    })
}

/// Minimizes `G_chi` over the product of scaled simplices
/// `{w^i >= 0 : sum_j g_j w^i_j = a_i}`.
pub fn solve_gauss(ctx: &EnergyContext, opts: &SolveOptions) -> Result<SolveReport> {
    let started = Instant::now();
    let spec = ProblemSpec::full(ctx);
    let plates = spec.constrained.clone();
    let layout = constrained_layout(ctx, &plates);
    let n_vars = layout.n_vars();
    let w0 = initial_weights(ctx, &plates, opts.initial.as_ref())?;
    let mut state = State::new(&ctx.form.gram, layout, w0);
    let mut obj = Quadratic::new(ctx);
    let out = engine::run(&mut state, &mut obj, &engine_options(opts, n_vars))?;
    let minimizer = split_weights(ctx, &plates, &out.w);
    let trace = trace_records(ctx, &plates, &out, |_, _| {});
    report(ctx, &spec, minimizer, &out, trace, started)
}

/// Global target nodes of the unconstrained plates, each owned by the first
/// such plate containing it.
fn unconstrained_target(ctx: &EnergyContext, plates: &[usize]) -> (Vec<usize>, Vec<(usize, usize)>) {
    let mut target = Vec::new();
    let mut owner = Vec::new();
    for &i in plates {
        for (k, &g) in ctx.plate_index[i].iter().enumerate() {
            if !target.contains(&g) {
                target.push(g);
                owner.push((i, k));
            }
        }
    }
    (target, owner)
}

fn check_auxiliary(ctx: &EnergyContext, spec: &ProblemSpec) -> Result<Vec<usize>> {
    spec.check(ctx)?;
    let cj = spec.unconstrained(ctx);
    if cj.is_empty() {
        return Err(GvpError::Precondition(
            "auxiliary problem needs at least one unconstrained plate".into(),
        ));
    }
    if spec.constrained.is_empty() {
        return Err(GvpError::Precondition(
            "auxiliary problem needs at least one constrained plate".into(),
        ));
    }
    Ok(cj)
}

/// Auxiliary problem with the unconstrained plates eliminated by projection:
/// minimizes `||chi + R s - P(chi + R s)||^2 - ||chi||^2` over the
/// constrained simplices, then sets the unconstrained components to the
/// projection.
pub fn solve_auxiliary(ctx: &EnergyContext, spec: &ProblemSpec, opts: &SolveOptions) -> Result<SolveReport> {
    let started = Instant::now();
    let cj = check_auxiliary(ctx, spec)?;
    let plates = spec.constrained.clone();
    let (target, owner) = unconstrained_target(ctx, &cj);
    let layout = constrained_layout(ctx, &plates);
    let n_vars = layout.n_vars();
    let w0 = initial_weights(ctx, &plates, opts.initial.as_ref())?;
    let mut state = State::new(&ctx.form.gram, layout, w0);
    let mut obj = Composite::new(ctx, &target)?;
    let out = engine::run(&mut state, &mut obj, &engine_options(opts, n_vars))?;
    state.w.clone_from(&out.w);
    state.recompute();
    obj.refresh(&state)?;
    let mut minimizer = split_weights(ctx, &plates, &out.w);
    for (&(i, k), &w) in owner.iter().zip(&obj.tau) {
        minimizer.components[i].weights[k] = w;
    }
    let trace = trace_records(ctx, &plates, &out, |_, _| {});
    report(ctx, spec, minimizer, &out, trace, started)
}

/// Bound on the total mass of auxiliary minimizers,
/// `h [chi+(X) + 2 |a_J| / g_inf]`.
pub fn mass_bound_h(ctx: &EnergyContext, spec: &ProblemSpec) -> Result<f64> {
    let h = ctx.kernel().require_h()?;
    let a_j: f64 = spec.constrained.iter().map(|&i| ctx.condenser.a[i]).sum();
    Ok(h * (ctx.condenser.chi.consolidated().positive_mass() + 2.0 * a_j / ctx.condenser.g_inf()))
}

/// Auxiliary problem solved directly as one quadratic program: the
/// unconstrained plates form a single block of total mass at most `H`
/// (see [`mass_bound_h`]).
pub fn solve_auxiliary_direct(ctx: &EnergyContext, spec: &ProblemSpec, opts: &SolveOptions) -> Result<SolveReport> {
    let started = Instant::now();
    let cj = check_auxiliary(ctx, spec)?;
    let bound = mass_bound_h(ctx, spec)?;
    let plates = spec.constrained.clone();
    let (target, owner) = unconstrained_target(ctx, &cj);
    let mut layout = constrained_layout(ctx, &plates);
    let offset = layout.n_vars();
    layout.push_block(
        target.iter().map(|&global| Var {
            global,
            sign: -1.0,
            scale: bound,
        }),
        true,
    );
    let n_vars = layout.n_vars();
    let mut w0 = initial_weights(ctx, &plates, opts.initial.as_ref())?;
    w0.extend(std::iter::repeat_n(0.0, target.len()));
    let mut state = State::new(&ctx.form.gram, layout, w0);
    let mut obj = Quadratic::new(ctx);
    let out = engine::run(&mut state, &mut obj, &engine_options(opts, n_vars))?;
    let assign = |w: &[f64], mu: &mut VectorMeasure| {
        for (&(i, k), &x) in owner.iter().zip(&w[offset..]) {
            mu.components[i].weights[k] = x;
        }
    };
    let mut minimizer = split_weights(ctx, &plates, &out.w[..offset]);
    assign(&out.w, &mut minimizer);
    let trace = trace_records(ctx, &plates, &out, assign);
    report(ctx, spec, minimizer, &out, trace, started)
}

/// Routes to [`solve_gauss`] when every plate is constrained and to
/// [`solve_auxiliary`] otherwise.
pub fn solve(ctx: &EnergyContext, spec: &ProblemSpec, opts: &SolveOptions) -> Result<SolveReport> {
    spec.check(ctx)?;
    match spec.mode(ctx) {
        Mode::Full => solve_gauss(ctx, opts),
        Mode::Auxiliary => solve_auxiliary(ctx, spec, opts),
    }
}

/// Weighted-potential characterization with every plate constrained.
pub fn verify_kkt(ctx: &EnergyContext, mu: &VectorMeasure) -> Result<KktReport> {
    verify_kkt_with(ctx, mu, &[])
}

/// As [`verify_kkt`], treating the plates in `unconstrained` as free: there
/// the conditions read `W^i >= 0` with equality on the support.
pub fn verify_kkt_with(ctx: &EnergyContext, mu: &VectorMeasure, unconstrained: &[usize]) -> Result<KktReport> {
    let c = &ctx.condenser;
    let pot = ctx.field_potential(mu)?;
    let mut plates = Vec::with_capacity(c.plates.len());
    let mut max_w = 0.0f64;
    let mut max_aw = 0.0f64;
    let mut sum_eta = 0.0;
    for i in 0..c.plates.len() {
        let s = c.sign(i);
        let w: Vec<f64> = ctx.plate_index[i].iter().map(|&g| s * pot[g]).collect();
        let weights = &mu.components[i].weights;
        let eta: f64 = w.iter().zip(weights).map(|(a, b)| a * b).sum();
        sum_eta += eta;
        let wmax = weights.iter().fold(0.0f64, |m, &x| m.max(x));
        let constrained = !unconstrained.contains(&i);
        let a = c.a[i];
        let g = &c.g_values[i];
        let (mut lower, mut support) = (0.0f64, 0.0f64);
        for k in 0..w.len() {
            let (need, level) = if constrained {
                (eta * g[k] / a, eta * g[k])
            } else {
                (0.0, 0.0)
            };
            lower = lower.max(need - w[k]);
            if weights[k] > 1e-12 * wmax {
                let lhs = if constrained { a * w[k] } else { w[k] };
                support = support.max((lhs - level).abs());
            }
            max_w = max_w.max(w[k].abs());
            max_aw = max_aw.max(if constrained { a } else { 1.0 } * w[k].abs());
        }
        plates.push(PlateKkt {
            plate: i,
            constrained,
            eta,
            lower_violation: lower,
            support_violation: support,
        });
    }
    let r = ctx.r_dense(mu)?;
    let r_sq = ctx.form.quad(&r);
    let gauss = ctx.gauss_value(mu)?;
    let sum_rule_rhs = 0.5 * (r_sq + gauss);
    let sum_rule_ok = (sum_eta - sum_rule_rhs).abs() <= KKT_REL * sum_eta.abs().max(sum_rule_rhs.abs()) + 1e-13;
    let lower_violation = plates.iter().fold(0.0f64, |m, p| m.max(p.lower_violation));
    let support_violation = plates.iter().fold(0.0f64, |m, p| m.max(p.support_violation));
    let lower_tol = KKT_REL * (1.0 + max_w);
    let support_tol = KKT_REL * (1.0 + max_aw);
    Ok(KktReport {
        passed: lower_violation <= lower_tol && support_violation <= support_tol && sum_rule_ok,
        plates,
        lower_violation,
        support_violation,
        lower_tol,
        support_tol,
        sum_eta,
        sum_rule_rhs,
        sum_rule_ok,
    })
}

/// `G_chi` evaluated both ways agree within `IDENTITY_REL`.
pub fn gauss_identity_holds(ctx: &EnergyContext, mu: &VectorMeasure) -> Result<bool> {
    let a = ctx.gauss_value(mu)?;
    let b = ctx.gauss_value_shifted(mu)?;
    let chi_sq = ctx.form.quad(&ctx.chi_dense());
    Ok((a - b).abs() <= IDENTITY_REL * (a.abs().max(b.abs()).max(chi_sq)) + 1e-13)
}

#[cfg(test)]
mod tests;
