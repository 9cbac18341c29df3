//! Away-step Frank-Wolfe over a product of scaled simplices.
//!
//! Block `b` holds variables `w_j = scale_j * l_j` with barycentric weights
//! `l >= 0`. An equality block has `sum l_j = 1`; a slack block has
//! `sum l_j <= 1`, i.e. the origin is one more vertex. Every variable maps to
//! one global Gram index with a sign, so the block potentials
//! `z_b = G R w_b` are maintained in `O(N)` per step.
//!
//! Every few iterations a corrective step moves toward the minimizer of the
//! objective's local quadratic model on the affine hull of the current face.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;

#[derive(Clone, Debug)]
pub struct Var {
    pub global: usize,
    pub sign: f64,
    pub scale: f64,
}

#[derive(Clone, Debug)]
pub struct Block {
    pub start: usize,
    pub end: usize,
    pub slack: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Layout {
    pub vars: Vec<Var>,
    pub blocks: Vec<Block>,
}

impl Layout {
    pub fn push_block(&mut self, vars: impl IntoIterator<Item = Var>, slack: bool) {
        let start = self.vars.len();
        self.vars.extend(vars);
        self.blocks.push(Block {
            start,
            end: self.vars.len(),
            slack,
        });
    }

    pub fn n_vars(&self) -> usize {
        self.vars.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Dir {
    /// Towards a vertex (`None` is the origin of a slack block).
    Toward { block: usize, vertex: Option<usize> },
    /// Away from a vertex of the current active set.
    Away { block: usize, vertex: Option<usize> },
    /// Towards an arbitrary point.
    Segment { target: Vec<f64> },
}

/// Iterate plus the per-block potentials `z_b = G R w_b`.
pub struct State<'a> {
    pub gram: &'a DMatrix<f64>,
    pub layout: Layout,
    pub w: Vec<f64>,
    pub z: Vec<DVector<f64>>,
    /// `G R w`.
    pub u: DVector<f64>,
    /// `R w`.
    pub rw: DVector<f64>,
    block_of: Vec<usize>,
}

impl<'a> State<'a> {
    pub fn new(gram: &'a DMatrix<f64>, layout: Layout, w: Vec<f64>) -> Self {
        let n = gram.nrows();
        let nb = layout.blocks.len();
        let mut block_of = vec![0; layout.n_vars()];
        for (b, blk) in layout.blocks.iter().enumerate() {
            for slot in &mut block_of[blk.start..blk.end] {
                *slot = b;
            }
        }
        let mut s = Self {
            gram,
            layout,
            w,
            z: vec![DVector::zeros(n); nb],
            u: DVector::zeros(n),
            rw: DVector::zeros(n),
            block_of,
        };
        s.recompute();
        s
    }

    pub fn n(&self) -> usize {
        self.gram.nrows()
    }

    pub fn block_of(&self, j: usize) -> usize {
        self.block_of[j]
    }

    fn column_into(&self, target: &mut DVector<f64>, var: usize, coef: f64) {
        let v = &self.layout.vars[var];
        target.axpy(coef * v.sign, &self.gram.column(v.global), 1.0);
    }

    fn block_potential(&self, b: usize) -> DVector<f64> {
        let blk = &self.layout.blocks[b];
        let mut z = DVector::zeros(self.n());
        for j in blk.start..blk.end {
            if self.w[j] != 0.0 {
                self.column_into(&mut z, j, self.w[j]);
            }
        }
        z
    }

    fn used(&self, b: usize) -> f64 {
        let blk = &self.layout.blocks[b];
        (blk.start..blk.end).map(|j| self.w[j] / self.layout.vars[j].scale).sum()
    }

    /// Renormalizes blocks that drifted off their constraint and rebuilds all
    /// potentials from scratch.
    pub fn recompute(&mut self) {
        for b in 0..self.layout.blocks.len() {
            let blk = self.layout.blocks[b].clone();
            let lam = self.used(b);
            if (!blk.slack && lam > 0.0) || lam > 1.0 {
                for j in blk.start..blk.end {
                    self.w[j] /= lam;
                }
            }
        }
        for b in 0..self.layout.blocks.len() {
            self.z[b] = self.block_potential(b);
        }
        self.refresh_sums();
    }

    fn refresh_sums(&mut self) {
        let n = self.n();
        self.u = DVector::zeros(n);
        for z in &self.z {
            self.u += z;
        }
        self.rw = DVector::zeros(n);
        for (j, v) in self.layout.vars.iter().enumerate() {
            self.rw[v.global] += v.sign * self.w[j];
        }
    }

    /// Barycentric weight of the origin of block `b` (0 for equality blocks).
    pub fn slack_weight(&self, b: usize) -> f64 {
        if !self.layout.blocks[b].slack {
            return 0.0;
        }
        (1.0 - self.used(b)).max(0.0)
    }

    /// Sparse direction `d` in variable space.
    pub fn direction(&self, dir: &Dir) -> Vec<(usize, f64)> {
        let vertex_value = |j: usize, vertex: &Option<usize>| {
            if Some(j) == *vertex {
                self.layout.vars[j].scale
            } else {
                0.0
            }
        };
        match dir {
            Dir::Toward { block, vertex } => {
                let blk = &self.layout.blocks[*block];
                (blk.start..blk.end)
                    .filter_map(|j| {
                        let d = vertex_value(j, vertex) - self.w[j];
                        (d != 0.0).then_some((j, d))
                    })
                    .collect()
            }
            Dir::Away { block, vertex } => {
                let blk = &self.layout.blocks[*block];
                (blk.start..blk.end)
                    .filter_map(|j| {
                        let d = self.w[j] - vertex_value(j, vertex);
                        (d != 0.0).then_some((j, d))
                    })
                    .collect()
            }
            Dir::Segment { target } => target
                .iter()
                .zip(&self.w)
                .enumerate()
                .filter_map(|(j, (t, w))| {
                    let d = t - w;
                    (d != 0.0).then_some((j, d))
                })
                .collect(),
        }
    }

    /// `G R d` for a direction.
    pub fn potential_of(&self, dir: &Dir, d: &[(usize, f64)]) -> DVector<f64> {
        match dir {
            Dir::Toward { block, vertex } => {
                let mut g = -&self.z[*block];
                if let Some(s) = vertex {
                    self.column_into(&mut g, *s, self.layout.vars[*s].scale);
                }
                g
            }
            Dir::Away { block, vertex } => {
                let mut g = self.z[*block].clone();
                if let Some(s) = vertex {
                    self.column_into(&mut g, *s, -self.layout.vars[*s].scale);
                }
                g
            }
            Dir::Segment { .. } => {
                let mut g = DVector::zeros(self.n());
                for &(j, dj) in d {
                    self.column_into(&mut g, j, dj);
                }
                g
            }
        }
    }

    /// `R d` as a dense vector.
    pub fn r_of(&self, d: &[(usize, f64)]) -> DVector<f64> {
        let mut v = DVector::zeros(self.n());
        for &(j, dj) in d {
            let var = &self.layout.vars[j];
            v[var.global] += var.sign * dj;
        }
        v
    }

    /// `||R d||^2` given `gv = G R d`.
    pub fn curvature(&self, d: &[(usize, f64)], gv: &DVector<f64>) -> f64 {
        d.iter()
            .map(|&(j, dj)| {
                let v = &self.layout.vars[j];
                dj * v.sign * gv[v.global]
            })
            .sum()
    }

    /// Moves to `w + t d`. `full` marks a step that lands exactly on the
    /// boundary of the feasible set.
    pub fn apply(&mut self, dir: &Dir, d: &[(usize, f64)], t: f64, full: bool) {
        match dir {
            Dir::Toward { block, vertex } if full => {
                let blk = self.layout.blocks[*block].clone();
                for j in blk.start..blk.end {
                    self.w[j] = 0.0;
                }
                if let Some(s) = vertex {
                    self.w[*s] = self.layout.vars[*s].scale;
                }
                self.z[*block] = self.block_potential(*block);
            }
            Dir::Toward { block, vertex } => {
                for &(j, dj) in d {
                    self.w[j] = (self.w[j] + t * dj).max(0.0);
                }
                let mut z = &self.z[*block] * (1.0 - t);
                if let Some(s) = vertex {
                    self.column_into(&mut z, *s, t * self.layout.vars[*s].scale);
                }
                self.z[*block] = z;
            }
            Dir::Away { block, vertex } => {
                for &(j, dj) in d {
                    self.w[j] = (self.w[j] + t * dj).max(0.0);
                }
                if full {
                    if let Some(v) = vertex {
                        self.w[*v] = 0.0;
                    }
                }
                let mut z = &self.z[*block] * (1.0 + t);
                if let Some(s) = vertex {
                    self.column_into(&mut z, *s, -t * self.layout.vars[*s].scale);
                }
                self.z[*block] = z;
            }
            Dir::Segment { target } => {
                for &(j, dj) in d {
                    let next = if t == 1.0 { target[j] } else { self.w[j] + t * dj };
                    self.w[j] = next.max(0.0);
                }
                if full {
                    for &(j, dj) in d {
                        if dj < 0.0 && self.w[j] <= 1e-14 * self.layout.vars[j].scale {
                            self.w[j] = 0.0;
                        }
                    }
                }
                let mut touched: Vec<usize> = d.iter().map(|&(j, _)| self.block_of[j]).collect();
                touched.dedup();
                for b in touched {
                    self.z[b] = self.block_potential(b);
                }
            }
        }
        self.refresh_sums();
    }

    /// Largest feasible step along `d`.
    pub fn max_step(&self, d: &[(usize, f64)]) -> f64 {
        let mut tmax = f64::INFINITY;
        for &(j, dj) in d {
            if dj < 0.0 {
                tmax = tmax.min(self.w[j] / -dj);
            }
        }
        for (b, blk) in self.layout.blocks.iter().enumerate() {
            if !blk.slack {
                continue;
            }
            let dl: f64 = d
                .iter()
                .filter(|(j, _)| self.block_of[*j] == b)
                .map(|&(j, dj)| dj / self.layout.vars[j].scale)
                .sum();
            if dl > 0.0 {
                tmax = tmax.min(self.slack_weight(b) / dl);
            }
        }
        tmax
    }
}

/// Smooth convex objective over a layout.
pub trait Objective {
    /// Re-evaluates value and gradient at the state's current iterate.
    fn refresh(&mut self, state: &State) -> Result<()>;
    fn value(&self) -> f64;
    /// Gradient in variable space.
    fn gradient(&self) -> &[f64];
    /// Minimizes along `d` on `[0, tmax]`, where `gv = G R d`.
    fn line_search(&mut self, state: &State, d: &[(usize, f64)], gv: &DVector<f64>, tmax: f64) -> Result<f64>;
    /// Local model `w' H w + 2 c' w` restricted to the variables in
    /// `support`, or `None` when no reliable model is available.
    fn face_quadratic(&self, state: &State, support: &[usize]) -> Result<Option<(DMatrix<f64>, DVector<f64>)>>;
}

#[derive(Clone, Debug)]
pub struct EngineOptions {
    pub gap_tol_rel: f64,
    pub max_iters: usize,
    pub polish: bool,
    pub record_trace: bool,
}

#[derive(Clone, Debug)]
pub struct TraceEntry {
    pub iteration: usize,
    pub step: &'static str,
    pub value: f64,
    pub gap: f64,
    pub w: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct EngineOutcome {
    pub w: Vec<f64>,
    pub value: f64,
    pub gap: f64,
    pub gap_tol: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
}

struct Candidates {
    gap: f64,
    best: Option<Dir>,
}

fn candidates(state: &State, grad: &[f64]) -> Candidates {
    let mut total_gap = 0.0;
    let mut best: Option<(Dir, f64)> = None;
    for (b, blk) in state.layout.blocks.iter().enumerate() {
        let gw: f64 = (blk.start..blk.end).map(|j| grad[j] * state.w[j]).sum();
        // ties go to the lowest index; the origin of a slack block comes last
        let mut fw: (Option<usize>, f64) = (None, f64::INFINITY);
        for j in blk.start..blk.end {
            let v = grad[j] * state.layout.vars[j].scale;
            if v < fw.1 {
                fw = (Some(j), v);
            }
        }
        if blk.slack && fw.1 > 0.0 {
            fw = (None, 0.0);
        }
        let fw_gap = (gw - fw.1).max(0.0);
        total_gap += fw_gap;

        let mut away: (Option<usize>, f64) = (None, f64::NEG_INFINITY);
        for j in blk.start..blk.end {
            if state.w[j] > 0.0 {
                let v = grad[j] * state.layout.vars[j].scale;
                if v > away.1 {
                    away = (Some(j), v);
                }
            }
        }
        if blk.slack && state.slack_weight(b) > 0.0 && away.1 < 0.0 {
            away = (None, 0.0);
        }
        let away_gap = (away.1 - gw).max(0.0);

        let (dir, g) = if fw_gap >= away_gap {
            (Dir::Toward { block: b, vertex: fw.0 }, fw_gap)
        } else {
            (Dir::Away { block: b, vertex: away.0 }, away_gap)
        };
        if g > 0.0 && best.as_ref().is_none_or(|(_, bg)| g > *bg) {
            best = Some((dir, g));
        }
    }
    Candidates {
        gap: total_gap,
        best: best.map(|(d, _)| d),
    }
}

fn step_bound(state: &State, dir: &Dir) -> f64 {
    match dir {
        Dir::Away { block, vertex } => {
            let lam = match vertex {
                Some(v) => state.w[*v] / state.layout.vars[*v].scale,
                None => state.slack_weight(*block),
            };
            if lam >= 1.0 {
                0.0
            } else {
                lam / (1.0 - lam)
            }
        }
        _ => 1.0,
    }
}

fn support(state: &State) -> Vec<usize> {
    (0..state.w.len()).filter(|&j| state.w[j] > 0.0).collect()
}

/// Minimizer of the face model subject to the active block equalities.
fn face_target<O: Objective>(state: &State, obj: &O, s: &[usize]) -> Result<Option<Vec<f64>>> {
    let Some((h, c)) = obj.face_quadratic(state, s)? else {
        return Ok(None);
    };
    let mut rows: Vec<usize> = Vec::new();
    for &j in s {
        let b = state.block_of(j);
        let active = !state.layout.blocks[b].slack || state.slack_weight(b) <= 1e-14;
        if active && !rows.contains(&b) {
            rows.push(b);
        }
    }
    let ns = s.len();
    let m = ns + rows.len();
    let mut k = DMatrix::zeros(m, m);
    let mut rhs = DVector::zeros(m);
    for p in 0..ns {
        for q in 0..ns {
            k[(p, q)] = 2.0 * h[(p, q)];
        }
        rhs[p] = -2.0 * c[p];
    }
    for (r, &b) in rows.iter().enumerate() {
        for (p, &j) in s.iter().enumerate() {
            if state.block_of(j) == b {
                let v = 1.0 / state.layout.vars[j].scale;
                k[(ns + r, p)] = v;
                k[(p, ns + r)] = v;
            }
        }
        rhs[ns + r] = 1.0;
    }
    let Some(sol) = k.lu().solve(&rhs) else {
        return Ok(None);
    };
    if sol.iter().any(|v| !v.is_finite()) {
        return Ok(None);
    }
    let mut target = state.w.clone();
    for (p, &j) in s.iter().enumerate() {
        target[j] = sol[p];
    }
    Ok(Some(target))
}

/// Corrective steps toward face minimizers, dropping variables that block
/// the way. Returns the number of accepted steps.
fn polish<O: Objective>(state: &mut State, obj: &mut O) -> Result<usize> {
    let mut steps = 0;
    for _ in 0..64 {
        let s = support(state);
        if s.is_empty() {
            break;
        }
        let Some(target) = face_target(state, obj, &s)? else {
            break;
        };
        let dir = Dir::Segment { target };
        let d = state.direction(&dir);
        if d.is_empty() {
            break;
        }
        let tmax = state.max_step(&d).min(1.0);
        if tmax.is_nan() || tmax <= 0.0 {
            break;
        }
        let gv = state.potential_of(&dir, &d);
        let before = obj.value();
        let t = obj.line_search(state, &d, &gv, tmax)?;
        if t <= 0.0 {
            break;
        }
        let w_prev = state.w.clone();
        state.apply(&dir, &d, t, t >= tmax);
        obj.refresh(state)?;
        if obj.value() > before + 1e-15 * (1.0 + before.abs()) {
            state.w = w_prev;
            state.recompute();
            obj.refresh(state)?;
            break;
        }
        steps += 1;
        if t < tmax || tmax >= 1.0 {
            break;
        }
    }
    Ok(steps)
}

pub fn run<O: Objective>(state: &mut State, obj: &mut O, opts: &EngineOptions) -> Result<EngineOutcome> {
    obj.refresh(state)?;
    let mut trace = Vec::new();
    let record = |trace: &mut Vec<TraceEntry>, iteration, step, value, gap, w: &[f64]| {
        if opts.record_trace {
            trace.push(TraceEntry {
                iteration,
                step,
                value,
                gap,
                w: w.to_vec(),
            });
        }
    };
    let mut iterations = 0;
    let mut next_polish = 10usize;
    let mut since_recompute = 0usize;
    let mut polished_here = false;
    let mut stalls = 0usize;
    let mut cand = candidates(state, obj.gradient());
    record(&mut trace, 0, "init", obj.value(), cand.gap, &state.w);
    loop {
        let gap_tol = opts.gap_tol_rel * (1.0 + obj.value().abs());
        let done = cand.gap <= gap_tol || cand.best.is_none() || stalls >= 3 || iterations >= opts.max_iters;
        if done {
            if since_recompute > 0 {
                state.recompute();
                obj.refresh(state)?;
                since_recompute = 0;
                cand = candidates(state, obj.gradient());
                continue;
            }
            if opts.polish && !polished_here && iterations < opts.max_iters {
                polished_here = true;
                if polish(state, obj)? > 0 {
                    since_recompute += 1;
                    cand = candidates(state, obj.gradient());
                    record(&mut trace, iterations, "polish", obj.value(), cand.gap, &state.w);
                    continue;
                }
            }
            let gap_tol = opts.gap_tol_rel * (1.0 + obj.value().abs());
            return Ok(EngineOutcome {
                w: state.w.clone(),
                value: obj.value(),
                gap: cand.gap,
                gap_tol,
                iterations,
                converged: cand.gap <= gap_tol,
                trace,
            });
        }
        iterations += 1;
        since_recompute += 1;
        polished_here = false;

        if opts.polish && iterations >= next_polish {
            let steps = polish(state, obj)?;
            polished_here = true;
            next_polish = iterations + 10.max(support(state).len() / 4);
            if steps > 0 {
                cand = candidates(state, obj.gradient());
                record(&mut trace, iterations, "polish", obj.value(), cand.gap, &state.w);
                continue;
            }
        }

        let dir = cand.best.clone().expect("checked above");
        let d = state.direction(&dir);
        let tmax = step_bound(state, &dir);
        let step = if matches!(dir, Dir::Toward { .. }) { "fw" } else { "away" };
        let t = if d.is_empty() || tmax <= 0.0 {
            0.0
        } else {
            let gv = state.potential_of(&dir, &d);
            obj.line_search(state, &d, &gv, tmax)?
        };
        if t > 0.0 {
            state.apply(&dir, &d, t, t >= tmax);
        }
        if since_recompute >= 256 {
            state.recompute();
            since_recompute = 0;
        }
        obj.refresh(state)?;
        cand = candidates(state, obj.gradient());
        record(&mut trace, iterations, step, obj.value(), cand.gap, &state.w);
        stalls = if t <= 0.0 { stalls + 1 } else { 0 };
        if t <= 0.0 {
            // stalled on round-off: force a corrective step next
            next_polish = iterations + 1;
            if polished_here {
                cand.best = None;
            }
        }
    }
}
