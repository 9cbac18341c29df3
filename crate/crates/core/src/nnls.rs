//! Active-set solver for `min w'Qw - 2b'w` subject to `w >= 0`, with `Q`
//! symmetric positive definite.
//!
//! This is the Lawson-Hanson method in Gram form. The Cholesky factor of the
//! passive block `Q[F, F]` is kept up to date under insertions and deletions,
//! so a warm-started solve whose passive set barely changes costs `O(|F|^2)`
//! per step.

use nalgebra::DMatrix;

/// Lower-triangular Cholesky factor stored by rows, supporting appending a
/// row/column and deleting an arbitrary one.
#[derive(Clone, Debug, Default)]
pub struct IncrementalCholesky {
    rows: Vec<Vec<f64>>,
}

impl IncrementalCholesky {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn clear(&mut self) {
        self.rows.clear();
    }

    /// Appends the column `[col; diag]` of the factored matrix. Returns
    /// `false` (leaving the factor unchanged) when the pivot is not safely
    /// positive.
    pub fn append(&mut self, col: &[f64], diag: f64) -> bool {
        debug_assert_eq!(col.len(), self.rows.len());
        let l = self.forward(col);
        let d = diag - l.iter().map(|x| x * x).sum::<f64>();
        if !(d > 1e-13 * diag.abs()) {
            return false;
        }
        let mut row = l;
        row.push(d.sqrt());
        self.rows.push(row);
        true
    }

    /// Deletes row/column `k`, restoring the factor of the reduced matrix by
    /// a rank-one update of the trailing block.
    pub fn remove(&mut self, k: usize) {
        let m = self.rows.len();
        let mut x: Vec<f64> = (k + 1..m).map(|q| self.rows[q][k]).collect();
        for q in k + 1..m {
            self.rows[q].remove(k);
        }
        self.rows.remove(k);
        let m = m - 1;
        for p in k..m {
            let lpp = self.rows[p][p];
            let xp = x[p - k];
            let r = lpp.hypot(xp);
            let c = r / lpp;
            let s = xp / lpp;
            self.rows[p][p] = r;
            for q in p + 1..m {
                let v = (self.rows[q][p] + s * x[q - k]) / c;
                x[q - k] = c * x[q - k] - s * v;
                self.rows[q][p] = v;
            }
        }
    }

    /// Solves `L y = b`.
    pub fn forward(&self, b: &[f64]) -> Vec<f64> {
        let mut y = b.to_vec();
        for (i, row) in self.rows.iter().enumerate() {
            let s: f64 = row[..i].iter().zip(&y[..i]).map(|(l, v)| l * v).sum();
            y[i] = (y[i] - s) / row[i];
        }
        y
    }

    /// Solves `L L' z = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut z = self.forward(b);
        let m = self.rows.len();
        for i in (0..m).rev() {
            z[i] /= self.rows[i][i];
            let zi = z[i];
            for (j, l) in self.rows[i][..i].iter().enumerate() {
                z[j] -= l * zi;
            }
        }
        z
    }
}

#[derive(Clone, Debug)]
pub struct NnlsOutcome {
    pub iterations: usize,
    pub converged: bool,
    /// `max_j (b - Qw)_j` over the zero set, clipped at 0.
    pub dual_violation: f64,
}

/// Warm-startable active-set NNLS state.
#[derive(Clone, Debug)]
pub struct ActiveSetNnls {
    q: DMatrix<f64>,
    passive: Vec<usize>,
    factor: IncrementalCholesky,
    w: Vec<f64>,
    pub max_iterations: usize,
}

impl ActiveSetNnls {
    pub fn new(q: DMatrix<f64>) -> Self {
        let n = q.nrows();
        Self {
            q,
            passive: Vec::new(),
            factor: IncrementalCholesky::default(),
            w: vec![0.0; n],
            max_iterations: 10 * n.max(1),
        }
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn solution(&self) -> &[f64] {
        &self.w
    }

    /// Current passive set, in factor order.
    pub fn passive(&self) -> &[usize] {
        &self.passive
    }

    /// Solves `Q[F,F] z = rhs` with the current passive factor.
    pub fn solve_passive(&self, rhs: &[f64]) -> Vec<f64> {
        self.factor.solve(rhs)
    }

    pub fn reset(&mut self) {
        self.passive.clear();
        self.factor.clear();
        self.w.iter_mut().for_each(|x| *x = 0.0);
    }

    fn push_passive(&mut self, j: usize) -> bool {
        let col: Vec<f64> = self.passive.iter().map(|&p| self.q[(p, j)]).collect();
        if self.factor.append(&col, self.q[(j, j)]) {
            self.passive.push(j);
            true
        } else {
            false
        }
    }

    fn remove_passive(&mut self, pos: usize) {
        self.factor.remove(pos);
        let j = self.passive.remove(pos);
        self.w[j] = 0.0;
    }

    fn passive_solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs: Vec<f64> = self.passive.iter().map(|&p| b[p]).collect();
        self.factor.solve(&rhs)
    }

    fn residual(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut r = b.to_vec();
        for &p in &self.passive {
            let wp = self.w[p];
            if wp != 0.0 {
                for (i, ri) in r.iter_mut().enumerate().take(n) {
                    *ri -= self.q[(i, p)] * wp;
                }
            }
        }
        r
    }

    /// Solves for right-hand side `b`, starting from the previous passive set.
    pub fn solve(&mut self, b: &[f64]) -> NnlsOutcome {
        assert_eq!(b.len(), self.dim());
        let scale = 1.0 + b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let tol = 1e-13 * scale;
        self.w.iter_mut().for_each(|x| *x = 0.0);

        // Make the warm passive set consistent: drop indices whose
        // unconstrained passive solution is not positive.
        loop {
            if self.passive.is_empty() {
                break;
            }
            let z = self.passive_solve(b);
            match z.iter().position(|&v| v <= 0.0) {
                None => {
                    for (k, &p) in self.passive.iter().enumerate() {
                        self.w[p] = z[k];
                    }
                    break;
                }
                Some(_) => {
                    // remove the most negative entry
                    let pos = z
                        .iter()
                        .enumerate()
                        .fold((0, f64::INFINITY), |acc, (k, &v)| if v < acc.1 { (k, v) } else { acc })
                        .0;
                    self.remove_passive(pos);
                }
            }
        }

        let mut blocked = vec![false; self.dim()];
        let mut iterations = 0;
        loop {
            let r = self.residual(b);
            let mut best: Option<(usize, f64)> = None;
            for (j, &rj) in r.iter().enumerate() {
                if blocked[j] || self.passive.contains(&j) {
                    continue;
                }
                if rj > tol && best.is_none_or(|(_, v)| rj > v) {
                    best = Some((j, rj));
                }
            }
            let Some((j, _)) = best else {
                let dual_violation = r
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| !self.passive.contains(j))
                    .fold(0.0f64, |m, (_, &v)| m.max(v));
                return NnlsOutcome {
                    iterations,
                    converged: true,
                    dual_violation,
                };
            };
            iterations += 1;
            if iterations > self.max_iterations {
                return NnlsOutcome {
                    iterations,
                    converged: false,
                    dual_violation: r[j],
                };
            }
            if !self.push_passive(j) {
                blocked[j] = true;
                continue;
            }
            loop {
                let z = self.passive_solve(b);
                if z.iter().all(|&v| v > 0.0) {
                    for (k, &p) in self.passive.iter().enumerate() {
                        self.w[p] = z[k];
                    }
                    break;
                }
                let newest = self.passive.len() - 1;
                if self.passive[newest] == j && z[newest] <= 0.0 && self.w[j] == 0.0 {
                    // numerically the entering variable cannot grow
                    self.remove_passive(newest);
                    blocked[j] = true;
                    break;
                }
                let mut alpha = f64::INFINITY;
                let mut hit = 0;
                for (k, &p) in self.passive.iter().enumerate() {
                    if z[k] <= 0.0 {
                        let a = self.w[p] / (self.w[p] - z[k]);
                        if a < alpha {
                            alpha = a;
                            hit = k;
                        }
                    }
                }
                for (k, &p) in self.passive.iter().enumerate() {
                    self.w[p] += alpha * (z[k] - self.w[p]);
                }
                let wmax = self.passive.iter().fold(0.0f64, |m, &p| m.max(self.w[p]));
                self.w[self.passive[hit]] = 0.0;
                let mut k = self.passive.len();
                while k > 0 {
                    k -= 1;
                    let p = self.passive[k];
                    if self.w[p] <= 1e-15 * wmax {
                        self.remove_passive(k);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn incremental_factor_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random_spd(8, &mut rng);
        let mut f = IncrementalCholesky::default();
        let order = [3usize, 0, 5, 7, 1, 6];
        let mut set: Vec<usize> = Vec::new();
        for &j in &order {
            let col: Vec<f64> = set.iter().map(|&p| q[(p, j)]).collect();
            assert!(f.append(&col, q[(j, j)]));
            set.push(j);
        }
        f.remove(2);
        set.remove(2);
        f.remove(0);
        set.remove(0);
        let b: Vec<f64> = (0..set.len()).map(|i| i as f64 + 1.0).collect();
        let z = f.solve(&b);
        let sub = DMatrix::from_fn(set.len(), set.len(), |i, j| q[(set[i], set[j])]);
        let back = &sub * nalgebra::DVector::from_vec(z);
        for i in 0..set.len() {
            assert!((back[i] - b[i]).abs() < 1e-10);
        }
    }

    fn kkt_ok(q: &DMatrix<f64>, b: &[f64], w: &[f64]) -> bool {
        let n = b.len();
        (0..n).all(|j| {
            let g: f64 = (0..n).map(|i| q[(j, i)] * w[i]).sum::<f64>() - b[j];
            w[j] >= 0.0 && g >= -1e-9 && (w[j] == 0.0 || g.abs() <= 1e-9)
        })
    }

    #[test]
    fn random_problems_satisfy_kkt_cold_and_warm() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..30 {
            let n = rng.gen_range(1..25);
            let q = random_spd(n, &mut rng);
            let mut solver = ActiveSetNnls::new(q.clone());
            for _ in 0..4 {
                let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let out = solver.solve(&b);
                assert!(out.converged);
                assert!(kkt_ok(&q, &b, solver.solution()));
            }
        }
    }

    #[test]
    fn negative_rhs_gives_zero() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 2.0]);
        let mut s = ActiveSetNnls::new(q);
        s.solve(&[-1.0, -2.0]);
        assert_eq!(s.solution(), &[0.0, 0.0]);
    }
}
