//! Energies, the Gauss functional, weighted potentials and the strong
//! semimetric, all evaluated in one global node index space.

use std::collections::HashMap;

use nalgebra::DVector;

use crate::error::{GvpError, Result};
use crate::geometry::{nearest_neighbor_distances, Point};
use crate::kernel::{assemble_gram_with_cap, EnergyForm, KernelSpec};
use crate::measures::{Condenser, PointKey, SignedMeasure, VectorMeasure};
use crate::tolerances::{DEFAULT_SIGMA, NEG_RADICAND, RIDGE_CAP};

/// Gram form plus the maps from plate nodes and external-field atoms into
/// its index space.
#[derive(Clone, Debug)]
pub struct EnergyContext {
    pub form: EnergyForm,
    pub condenser: Condenser,
    /// `plate_index[i][k]` is the global index of node `k` of plate `i`.
    pub plate_index: Vec<Vec<usize>>,
    /// Global index of each atom of the external field.
    pub chi_index: Vec<usize>,
    lookup: HashMap<PointKey, usize>,
}

#[derive(Clone, Debug)]
pub struct ContextOptions {
    pub sigma: f64,
    pub ridge_cap: f64,
    /// Additional sites indexed in the Gram matrix (e.g. sources of measures
    /// to be swept onto a plate).
    pub extra_sites: Vec<Point>,
}

impl Default for ContextOptions {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_SIGMA,
            ridge_cap: RIDGE_CAP,
            extra_sites: Vec::new(),
        }
    }
}

impl EnergyContext {
    pub fn new(kernel: &KernelSpec, condenser: Condenser) -> Result<Self> {
        Self::with_options(kernel, condenser, &ContextOptions::default())
    }

    pub fn with_options(kernel: &KernelSpec, condenser: Condenser, opts: &ContextOptions) -> Result<Self> {
        condenser.validate()?;
        if condenser.dim() != kernel.dim {
            return Err(GvpError::DimensionMismatch {
                expected: kernel.dim,
                found: condenser.dim(),
            });
        }
        let mut nodes: Vec<Point> = Vec::new();
        let mut lookup: HashMap<PointKey, usize> = HashMap::new();
        let mut index_of = |p: &Point, nodes: &mut Vec<Point>| -> usize {
            *lookup.entry(PointKey::of(p)).or_insert_with(|| {
                nodes.push(p.clone());
                nodes.len() - 1
            })
        };
        let plate_index: Vec<Vec<usize>> = condenser
            .plates
            .iter()
            .map(|p| p.nodes.iter().map(|x| index_of(x, &mut nodes)).collect())
            .collect();
        let chi_index: Vec<usize> = condenser
            .chi
            .atoms
            .iter()
            .map(|a| index_of(&a.position, &mut nodes))
            .collect();
        for p in &opts.extra_sites {
            index_of(p, &mut nodes);
        }
        for (i, idx) in plate_index.iter().enumerate() {
            let mut sorted = idx.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != idx.len() {
                return Err(GvpError::Precondition(format!("plate {i} contains duplicate nodes")));
            }
        }
        let form = if nodes.len() == 1 {
            return Err(GvpError::Precondition(
                "a single global node has no nearest neighbour; add a second site".into(),
            ));
        } else {
            let nn = nearest_neighbor_distances(&nodes)?;
            assemble_gram_with_cap(kernel, &nodes, &nn, opts.sigma, opts.ridge_cap)?
        };
        let lookup = nodes.iter().enumerate().map(|(i, p)| (PointKey::of(p), i)).collect();
        Ok(Self {
            form,
            condenser,
            plate_index,
            chi_index,
            lookup,
        })
    }

    pub fn n_global(&self) -> usize {
        self.form.len()
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.form.kernel
    }

    pub fn index_of(&self, p: &[f64]) -> Option<usize> {
        self.lookup.get(&PointKey::of(p)).copied()
    }

    /// Signed measure as a dense vector over global indices.
    pub fn dense(&self, nu: &SignedMeasure) -> Result<DVector<f64>> {
        let mut v = DVector::zeros(self.n_global());
        for a in &nu.atoms {
            let i = self.index_of(&a.position).ok_or_else(|| GvpError::UnindexedAtom(a.position.clone()))?;
            v[i] += a.weight;
        }
        Ok(v)
    }

    /// Dense vector back to a signed measure (zero entries dropped).
    pub fn to_signed(&self, v: &DVector<f64>) -> SignedMeasure {
        SignedMeasure::new(
            v.iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(i, &w)| crate::measures::Atom {
                    position: self.form.nodes[i].clone(),
                    weight: w,
                })
                .collect(),
        )
    }

    pub fn chi_dense(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.n_global());
        for (a, &i) in self.condenser.chi.atoms.iter().zip(&self.chi_index) {
            v[i] += a.weight;
        }
        v
    }

    /// `R mu` as a dense vector.
    pub fn r_dense(&self, mu: &VectorMeasure) -> Result<DVector<f64>> {
        self.condenser.check_conforms(mu)?;
        let mut v = DVector::zeros(self.n_global());
        for (i, c) in mu.components.iter().enumerate() {
            let s = self.condenser.sign(i);
            for (&g, &w) in self.plate_index[i].iter().zip(&c.weights) {
                v[g] += s * w;
            }
        }
        Ok(v)
    }

    /// Component `i` of `mu` as a dense (unsigned) vector.
    pub fn component_dense(&self, mu: &VectorMeasure, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(self.n_global());
        for (&g, &w) in self.plate_index[i].iter().zip(&mu.components[i].weights) {
            v[g] += w;
        }
        v
    }

    pub fn mutual_energy(&self, nu: &SignedMeasure, nu1: &SignedMeasure) -> Result<f64> {
        let a = self.dense(nu)?;
        let b = self.dense(nu1)?;
        Ok(self.form.bilinear(&a, &b))
    }

    /// `sum_{i,j} alpha_i alpha_j kappa(mu^i, mu^j)`, evaluated pairwise over
    /// components.
    pub fn vector_energy(&self, mu: &VectorMeasure) -> Result<f64> {
        self.condenser.check_conforms(mu)?;
        let comps: Vec<DVector<f64>> = (0..mu.components.len()).map(|i| self.component_dense(mu, i)).collect();
        let potentials: Vec<DVector<f64>> = comps.iter().map(|c| &self.form.gram * c).collect();
        let mut total = 0.0;
        for (i, ci) in comps.iter().enumerate() {
            for (j, pj) in potentials.iter().enumerate() {
                total += self.condenser.sign(i) * self.condenser.sign(j) * ci.dot(pj);
            }
        }
        Ok(total)
    }

    /// `G_chi(mu) = ||R mu||^2 + 2 kappa(chi, R mu)`.
    pub fn gauss_value(&self, mu: &VectorMeasure) -> Result<f64> {
        let r = self.r_dense(mu)?;
        let gr = &self.form.gram * &r;
        Ok(r.dot(&gr) + 2.0 * self.chi_dense().dot(&gr))
    }

    /// `-||chi||^2 + ||chi + R mu||^2`, the shifted route to `G_chi`.
    pub fn gauss_value_shifted(&self, mu: &VectorMeasure) -> Result<f64> {
        let chi = self.chi_dense();
        let total = &chi + self.r_dense(mu)?;
        Ok(self.form.quad(&total) - self.form.quad(&chi))
    }

    /// `G (chi + R mu)` over all global nodes.
    pub fn field_potential(&self, mu: &VectorMeasure) -> Result<DVector<f64>> {
        Ok(&self.form.gram * (self.chi_dense() + self.r_dense(mu)?))
    }

    /// `W^i_mu = alpha_i kappa(., chi + R mu)` at the nodes of plate `i`.
    pub fn weighted_potential_on_plate(&self, mu: &VectorMeasure, i: usize) -> Result<Vec<f64>> {
        self.condenser.check_plate(i)?;
        let pot = self.field_potential(mu)?;
        let s = self.condenser.sign(i);
        Ok(self.plate_index[i].iter().map(|&g| s * pot[g]).collect())
    }

    /// `W^i_mu` at arbitrary points. Indexed points use the regularized Gram
    /// row; other points use the raw kernel, giving `+-inf` only on exact
    /// coincidence with a source atom.
    pub fn weighted_potential(&self, mu: &VectorMeasure, i: usize, eval_points: &[Point]) -> Result<Vec<f64>> {
        self.condenser.check_plate(i)?;
        let src = self.chi_dense() + self.r_dense(mu)?;
        let s = self.condenser.sign(i);
        let k = self.kernel();
        let support: Vec<usize> = (0..src.len()).filter(|&j| src[j] != 0.0).collect();
        Ok(eval_points
            .iter()
            .map(|x| match self.index_of(x) {
                Some(g) => s * self.form.gram.row(g).dot(&src.transpose()),
                None => s * support.iter().map(|&j| src[j] * k.evaluate(x, &self.form.nodes[j])).sum::<f64>(),
            })
            .collect())
    }

    /// `||R mu1 - R mu2||` in the Gram metric.
    pub fn strong_distance(&self, mu1: &VectorMeasure, mu2: &VectorMeasure) -> Result<f64> {
        let d = self.r_dense(mu1)? - self.r_dense(mu2)?;
        sqrt_clamped(self.form.quad(&d), self.form.quad(&d.abs()))
    }

    /// The same distance expanded as the double sum over components of
    /// `mu1 - mu2`.
    pub fn strong_distance_componentwise(&self, mu1: &VectorMeasure, mu2: &VectorMeasure) -> Result<f64> {
        self.condenser.check_conforms(mu1)?;
        self.condenser.check_conforms(mu2)?;
        let diffs: Vec<DVector<f64>> = (0..mu1.components.len())
            .map(|i| self.component_dense(mu1, i) - self.component_dense(mu2, i))
            .collect();
        let mut sq = 0.0;
        let mut scale = 0.0;
        for (i, di) in diffs.iter().enumerate() {
            for (j, dj) in diffs.iter().enumerate() {
                let s = self.condenser.sign(i) * self.condenser.sign(j);
                sq += s * self.form.bilinear(di, dj);
                scale += self.form.bilinear(&di.abs(), &dj.abs());
            }
        }
        sqrt_clamped(sq, scale)
    }

    /// `||nu||` for a dense vector.
    pub fn norm(&self, v: &DVector<f64>) -> Result<f64> {
        sqrt_clamped(self.form.quad(v), self.form.quad(&v.abs()))
    }
}

fn sqrt_clamped(sq: f64, scale: f64) -> Result<f64> {
    if sq >= 0.0 {
        Ok(sq.sqrt())
    } else if sq >= -NEG_RADICAND * scale.max(1.0) {
        Ok(0.0)
    } else {
        Err(GvpError::NegativeRadicand(sq))
    }
}
