//! Riesz kernels and the regularized Gram matrix of the discrete energy.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GvpError, Result};
use crate::geometry::{dist, Point};
use crate::tolerances::{RIDGE_CAP, RIDGE_START};

/// Riesz kernel `|x - y|^(alpha - n)` on `R^n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub alpha: f64,
    pub dim: usize,
    /// Constant of the generalized maximum principle. Defaults to 1 when
    /// `alpha <= 2`; must be supplied otherwise.
    #[serde(default, rename = "h", skip_serializing_if = "Option::is_none")]
    pub max_principle_h: Option<f64>,
}

impl KernelSpec {
    pub fn new(alpha: f64, dim: usize, max_principle_h: Option<f64>) -> Result<Self> {
        let k = Self {
            alpha,
            dim,
            max_principle_h,
        };
        k.check()?;
        Ok(k)
    }

    pub fn newtonian3() -> Self {
        Self {
            alpha: 2.0,
            dim: 3,
            max_principle_h: None,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(GvpError::InvalidKernel(format!("dimension must be >= 2, got {}", self.dim)));
        }
        if !(self.alpha > 0.0 && self.alpha < self.dim as f64) {
            return Err(GvpError::InvalidKernel(format!(
                "alpha must lie in (0, {}), got {}",
                self.dim, self.alpha
            )));
        }
        if let Some(h) = self.max_principle_h {
            if !(h >= 1.0 && h.is_finite()) {
                return Err(GvpError::InvalidKernel(format!("h must be >= 1, got {h}")));
            }
        }
        Ok(())
    }

    /// The maximum-principle constant, or `None` when unknown.
    pub fn h(&self) -> Option<f64> {
        match self.max_principle_h {
            Some(h) => Some(h),
            None if self.alpha <= 2.0 => Some(1.0),
            None => None,
        }
    }

    pub fn require_h(&self) -> Result<f64> {
        self.h().ok_or(GvpError::MissingMaxPrincipleConstant(self.alpha))
    }

    fn exponent(&self) -> f64 {
        self.alpha - self.dim as f64
    }

    /// Kernel as a function of distance; `+inf` at `r = 0`.
    pub fn of_distance(&self, r: f64) -> f64 {
        if r == 0.0 {
            f64::INFINITY
        } else {
            r.powf(self.exponent())
        }
    }

    pub fn evaluate(&self, x: &[f64], y: &[f64]) -> f64 {
        self.of_distance(dist(x, y))
    }
}

/// Gram matrix of the kernel on a global node list. Off-diagonal entries are
/// exact kernel values; the diagonal is `(sigma * d_i)^(alpha - n)` plus the
/// ridge applied by the positive-definiteness guard.
#[derive(Clone, Debug)]
pub struct EnergyForm {
    pub gram: DMatrix<f64>,
    pub nodes: Vec<Point>,
    pub ridge: f64,
    pub cholesky_ok: bool,
    pub kernel: KernelSpec,
    pub sigma: f64,
}

impl EnergyForm {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn quad(&self, w: &DVector<f64>) -> f64 {
        w.dot(&(&self.gram * w))
    }

    pub fn bilinear(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        u.dot(&(&self.gram * v))
    }

    /// Regularized self-energy of a unit atom at node `i`.
    pub fn diag(&self, i: usize) -> f64 {
        self.gram[(i, i)]
    }
}

/// Assembles the regularized Gram matrix and runs the ridge-escalation guard.
pub fn assemble_gram(kernel: &KernelSpec, nodes: &[Point], nn_dist: &[f64], sigma: f64) -> Result<EnergyForm> {
    assemble_gram_with_cap(kernel, nodes, nn_dist, sigma, RIDGE_CAP)
}

pub fn assemble_gram_with_cap(
    kernel: &KernelSpec,
    nodes: &[Point],
    nn_dist: &[f64],
    sigma: f64,
    ridge_cap: f64,
) -> Result<EnergyForm> {
    kernel.check()?;
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(GvpError::Precondition(format!("sigma must lie in (0, 1], got {sigma}")));
    }
    let n = nodes.len();
    if nn_dist.len() != n {
        return Err(GvpError::Precondition("one nearest-neighbour distance per node required".into()));
    }
    if let Some(p) = nodes.iter().find(|p| p.len() != kernel.dim) {
        return Err(GvpError::DimensionMismatch {
            expected: kernel.dim,
            found: p.len(),
        });
    }
    if let Some(i) = nn_dist.iter().position(|&d| !(d > 0.0)) {
        let j = (0..n).find(|&j| j != i && nodes[j] == nodes[i]).unwrap_or(i);
        return Err(GvpError::DuplicatePoints(i.min(j), i.max(j)));
    }

    // Column j depends only on (i, j): bitwise identical for any thread count.
    let columns: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            (0..n)
                .map(|i| {
                    if i == j {
                        kernel.of_distance(sigma * nn_dist[i])
                    } else {
                        kernel.evaluate(&nodes[i], &nodes[j])
                    }
                })
                .collect()
        })
        .collect();
    let mut gram = DMatrix::from_fn(n, n, |i, j| columns[j][i]);

    let mut ridge = 0.0;
    if gram.clone().cholesky().is_none() {
        let mean_diag = gram.trace() / n as f64;
        let base = gram.clone();
        let mut eps = RIDGE_START;
        loop {
            if eps > ridge_cap * (1.0 + 1e-9) {
                return Err(GvpError::IllConditioned { eps: ridge_cap });
            }
            let mut trial = base.clone();
            let r = eps * mean_diag;
            for i in 0..n {
                trial[(i, i)] += r;
            }
            if trial.clone().cholesky().is_some() {
                gram = trial;
                ridge = r;
                break;
            }
            eps *= 10.0;
        }
    }

    Ok(EnergyForm {
        gram,
        nodes: nodes.to_vec(),
        ridge,
        cholesky_ok: true,
        kernel: kernel.clone(),
        sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{generate_nodes, nearest_neighbor_distances, Shape, ShapeSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_values() {
        let k = KernelSpec::newtonian3();
        assert_eq!(k.evaluate(&[0.0, 0.0, 0.0], &[2.0, 0.0, 0.0]), 0.5);
        let k1 = KernelSpec::new(1.0, 3, None).unwrap();
        assert_eq!(k1.evaluate(&[0.0, 0.0, 0.0], &[0.0, 4.0, 0.0]), 0.0625);
        assert_eq!(k.evaluate(&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]), f64::INFINITY);
    }

    #[test]
    fn kernel_spec_validation() {
        assert!(KernelSpec::new(3.0, 3, None).is_err());
        assert!(KernelSpec::new(0.0, 3, None).is_err());
        assert!(KernelSpec::new(1.0, 1, None).is_err());
        assert!(KernelSpec::new(1.0, 3, Some(0.5)).is_err());
        assert_eq!(KernelSpec::new(2.5, 4, None).unwrap().h(), None);
        assert_eq!(KernelSpec::new(1.5, 3, None).unwrap().h(), Some(1.0));
        assert_eq!(KernelSpec::new(2.5, 4, Some(3.0)).unwrap().h(), Some(3.0));
    }

    #[test]
    fn two_node_gram() {
        let nodes = vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]];
        let nn = nearest_neighbor_distances(&nodes).unwrap();
        let form = assemble_gram(&KernelSpec::newtonian3(), &nodes, &nn, 0.5).unwrap();
        assert_eq!(form.gram[(0, 1)], 1.0);
        assert_eq!(form.gram[(1, 0)], 1.0);
        assert_eq!(form.gram[(0, 0)], 2.0);
        assert_eq!(form.gram[(1, 1)], 2.0);
        assert_eq!(form.ridge, 0.0);
        assert!(form.cholesky_ok);
    }

    #[test]
    fn duplicate_nodes_rejected() {
        let nodes = vec![vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]];
        let nn = vec![0.0, 0.0];
        assert!(matches!(
            assemble_gram(&KernelSpec::newtonian3(), &nodes, &nn, 0.5),
            Err(GvpError::DuplicatePoints(0, 1))
        ));
    }

    fn sphere_form(n: usize) -> EnergyForm {
        let spec = ShapeSpec::new(
            Shape::SphereShell {
                center: vec![0.0; 3],
                radius: 1.0,
            },
            n,
            0,
        );
        let nodes = generate_nodes(&spec, 3).unwrap();
        let nn = nearest_neighbor_distances(&nodes).unwrap();
        assemble_gram(&KernelSpec::newtonian3(), &nodes, &nn, 0.5).unwrap()
    }

    #[test]
    fn sphere_50_needs_no_ridge() {
        let form = sphere_form(50);
        assert!(form.cholesky_ok);
        assert_eq!(form.ridge, 0.0);
    }

    #[test]
    fn random_quadratic_forms_nonnegative() {
        let form = sphere_form(60);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let w = DVector::from_fn(form.len(), |_, _| rng.gen_range(-1.0..1.0));
            assert!(form.quad(&w) >= 0.0);
        }
    }

    #[test]
    fn gram_symmetric_and_dominant_diagonal() {
        let form = sphere_form(80);
        let n = form.len();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(form.gram[(i, j)], form.gram[(j, i)]);
                if i != j {
                    assert!(form.gram[(i, i)] > form.gram[(i, j)]);
                    assert_eq!(form.gram[(i, j)], form.kernel.evaluate(&form.nodes[i], &form.nodes[j]));
                }
            }
        }
    }

    #[test]
    fn ridge_escalation_cap() {
        // sigma = 1 on a dense cluster plus a tiny cap may fail; with the
        // default cap the guard must find a ridge or report ill-conditioning.
        let nodes: Vec<Point> = (0..30).map(|i| vec![i as f64 * 1e-3, 0.0, 0.0]).collect();
        let nn = nearest_neighbor_distances(&nodes).unwrap();
        match assemble_gram_with_cap(&KernelSpec::new(0.5, 3, None).unwrap(), &nodes, &nn, 1.0, 1e-3) {
            Ok(form) => assert!(form.gram.clone().cholesky().is_some()),
            Err(e) => assert!(matches!(e, GvpError::IllConditioned { .. })),
        }
    }

    #[test]
    fn thread_count_does_not_change_gram() {
        let spec = ShapeSpec::new(
            Shape::Ball {
                center: vec![0.0; 3],
                radius: 1.0,
            },
            120,
            3,
        );
        let nodes = generate_nodes(&spec, 3).unwrap();
        let nn = nearest_neighbor_distances(&nodes).unwrap();
        let k = KernelSpec::newtonian3();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| assemble_gram(&k, &nodes, &nn, 0.5).unwrap());
        let b = four.install(|| assemble_gram(&k, &nodes, &nn, 0.5).unwrap());
        assert_eq!(a.gram, b.gram);
    }
}
