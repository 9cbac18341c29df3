//! Atomic measures on a condenser: scalar, signed and vector measures, the
//! R-map and g-moments.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{GvpError, Result};
use crate::geometry::{dist, Point, ShapeSpec};
use crate::tolerances::DEFAULT_MIN_GAP;

/// Exact bitwise key of a point, with `-0.0` folded onto `0.0`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PointKey(Vec<u64>);

impl PointKey {
    pub fn of(p: &[f64]) -> Self {
        PointKey(p.iter().map(|x| if *x == 0.0 { 0 } else { x.to_bits() }).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Sign {
    Positive,
    Negative,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Positive => 1.0,
            Sign::Negative => -1.0,
        }
    }
}

impl TryFrom<i8> for Sign {
    type Error = String;
    fn try_from(v: i8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Sign::Positive),
            -1 => Ok(Sign::Negative),
            _ => Err(format!("sign must be +1 or -1, got {v}")),
        }
    }
}

impl From<Sign> for i8 {
    fn from(s: Sign) -> i8 {
        match s {
            Sign::Positive => 1,
            Sign::Negative => -1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plate {
    pub nodes: Vec<Point>,
    pub sign: Sign,
    pub shape: Option<ShapeSpec>,
    /// Present iff the plate stands for an unbounded set truncated at this radius.
    pub truncation_radius: Option<f64>,
}

impl Plate {
    pub fn new(nodes: Vec<Point>, sign: Sign) -> Self {
        Self {
            nodes,
            sign,
            shape: None,
            truncation_radius: None,
        }
    }

    pub fn is_unbounded(&self) -> bool {
        self.truncation_radius.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    pub position: Point,
    pub weight: f64,
}

/// Finite signed atomic measure.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SignedMeasure {
    pub atoms: Vec<Atom>,
}

impl SignedMeasure {
    pub fn new(atoms: Vec<Atom>) -> Self {
        Self { atoms }
    }

    pub fn atom(position: Point, weight: f64) -> Self {
        Self::new(vec![Atom { position, weight }])
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Positive part of the Hahn-Jordan split.
    pub fn positive_part(&self) -> SignedMeasure {
        SignedMeasure::new(self.atoms.iter().filter(|a| a.weight > 0.0).cloned().collect())
    }

    /// Negative part, as a measure with nonnegative weights.
    pub fn negative_part(&self) -> SignedMeasure {
        SignedMeasure::new(
            self.atoms
                .iter()
                .filter(|a| a.weight < 0.0)
                .map(|a| Atom {
                    position: a.position.clone(),
                    weight: -a.weight,
                })
                .collect(),
        )
    }

    pub fn positive_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight.max(0.0)).sum()
    }

    pub fn negative_mass(&self) -> f64 {
        self.atoms.iter().map(|a| (-a.weight).max(0.0)).sum()
    }

    pub fn total_variation(&self) -> f64 {
        self.positive_mass() + self.negative_mass()
    }

    /// Signed total mass `nu(X)`.
    pub fn total(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// Merges coincident atoms additively and drops zero weights, keeping
    /// first-occurrence order.
    pub fn consolidated(&self) -> SignedMeasure {
        let mut order: Vec<Atom> = Vec::new();
        let mut seen: HashMap<PointKey, usize> = HashMap::new();
        for a in &self.atoms {
            match seen.get(&PointKey::of(&a.position)) {
                Some(&k) => order[k].weight += a.weight,
                None => {
                    seen.insert(PointKey::of(&a.position), order.len());
                    order.push(a.clone());
                }
            }
        }
        SignedMeasure::new(order.into_iter().filter(|a| a.weight != 0.0).collect())
    }

    pub fn plus(&self, other: &SignedMeasure) -> SignedMeasure {
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().cloned());
        SignedMeasure::new(atoms).consolidated()
    }

    pub fn scaled(&self, c: f64) -> SignedMeasure {
        SignedMeasure::new(
            self.atoms
                .iter()
                .map(|a| Atom {
                    position: a.position.clone(),
                    weight: c * a.weight,
                })
                .collect(),
        )
    }
}

/// Nonnegative weights aligned with a plate's node list (`plate_index =
/// None` for measures not tied to a plate).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteMeasure {
    pub plate_index: Option<usize>,
    pub weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn zeros(plate_index: usize, n: usize) -> Self {
        Self {
            plate_index: Some(plate_index),
            weights: vec![0.0; n],
        }
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VectorMeasure {
    pub components: Vec<DiscreteMeasure>,
}

impl VectorMeasure {
    pub fn zeros(condenser: &Condenser) -> Self {
        Self {
            components: condenser
                .plates
                .iter()
                .enumerate()
                .map(|(i, p)| DiscreteMeasure::zeros(i, p.nodes.len()))
                .collect(),
        }
    }

    pub fn from_weights(weights: Vec<Vec<f64>>) -> Self {
        Self {
            components: weights
                .into_iter()
                .enumerate()
                .map(|(i, w)| DiscreteMeasure {
                    plate_index: Some(i),
                    weights: w,
                })
                .collect(),
        }
    }

    /// `sum_i mu^i(X)`.
    pub fn total_mass(&self) -> f64 {
        self.components.iter().map(DiscreteMeasure::mass).sum()
    }

    pub fn add(&self, other: &VectorMeasure) -> VectorMeasure {
        VectorMeasure {
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| DiscreteMeasure {
                    plate_index: a.plate_index,
                    weights: a.weights.iter().zip(&b.weights).map(|(x, y)| x + y).collect(),
                })
                .collect(),
        }
    }

    pub fn scale(&self, c: f64) -> VectorMeasure {
        VectorMeasure {
            components: self
                .components
                .iter()
                .map(|a| DiscreteMeasure {
                    plate_index: a.plate_index,
                    weights: a.weights.iter().map(|x| c * x).collect(),
                })
                .collect(),
        }
    }
}

/// First violated condenser condition.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ValidationFailure {
    NoPlates,
    PlateEmpty { plate: usize },
    DimensionMismatch { plate: usize },
    ALengthMismatch { expected: usize, found: usize },
    APositiveViolated { plate: usize },
    GShapeMismatch { plate: usize },
    GInfNotPositive { plate: usize, node: usize },
    PlatesNotSeparated { positive: usize, negative: usize, distance: f64 },
    ChiNotFinite { atom: usize },
    ChiPlusMeetsNegativePlates { atom: usize, plate: usize },
    ChiMinusMeetsPositivePlates { atom: usize, plate: usize },
    UnboundedPlateNotNegative { plate: usize },
}

impl ValidationFailure {
    pub fn code(&self) -> &'static str {
        match self {
            ValidationFailure::NoPlates => "no_plates",
            ValidationFailure::PlateEmpty { .. } => "plate_empty",
            ValidationFailure::DimensionMismatch { .. } => "dimension_mismatch",
            ValidationFailure::ALengthMismatch { .. } => "a_length_mismatch",
            ValidationFailure::APositiveViolated { .. } => "a_positive_violated",
            ValidationFailure::GShapeMismatch { .. } => "g_shape_mismatch",
            ValidationFailure::GInfNotPositive { .. } => "g_inf_not_positive",
            ValidationFailure::PlatesNotSeparated { .. } => "plates_not_separated",
            ValidationFailure::ChiNotFinite { .. } => "chi_not_finite",
            ValidationFailure::ChiPlusMeetsNegativePlates { .. } => "chi_plus_meets_negative_plates",
            ValidationFailure::ChiMinusMeetsPositivePlates { .. } => "chi_minus_meets_positive_plates",
            ValidationFailure::UnboundedPlateNotNegative { .. } => "unbounded_plate_not_negative",
        }
    }
}

impl fmt::Display for ValidationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())?;
        match self {
            ValidationFailure::NoPlates => Ok(()),
            ValidationFailure::PlateEmpty { plate }
            | ValidationFailure::DimensionMismatch { plate }
            | ValidationFailure::APositiveViolated { plate }
            | ValidationFailure::GShapeMismatch { plate }
            | ValidationFailure::UnboundedPlateNotNegative { plate } => write!(f, " (plate {plate})"),
            ValidationFailure::ALengthMismatch { expected, found } => {
                write!(f, " (expected {expected}, found {found})")
            }
            ValidationFailure::GInfNotPositive { plate, node } => write!(f, " (plate {plate}, node {node})"),
            ValidationFailure::PlatesNotSeparated {
                positive,
                negative,
                distance,
            } => write!(f, " (plates {positive} and {negative}, distance {distance:e})"),
            ValidationFailure::ChiNotFinite { atom } => write!(f, " (atom {atom})"),
            ValidationFailure::ChiPlusMeetsNegativePlates { atom, plate }
            | ValidationFailure::ChiMinusMeetsPositivePlates { atom, plate } => {
                write!(f, " (atom {atom}, plate {plate})")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Condenser {
    pub plates: Vec<Plate>,
    pub chi: SignedMeasure,
    pub a: Vec<f64>,
    pub g_values: Vec<Vec<f64>>,
    pub min_gap: f64,
    /// User assertion that `g` is bounded on the (continuum) plates.
    pub g_bounded: bool,
}

impl Condenser {
    /// Condenser with `g = 1` and no external field.
    pub fn new(plates: Vec<Plate>, a: Vec<f64>) -> Self {
        let g_values = plates.iter().map(|p| vec![1.0; p.nodes.len()]).collect();
        Self {
            plates,
            chi: SignedMeasure::default(),
            a,
            g_values,
            min_gap: DEFAULT_MIN_GAP,
            g_bounded: true,
        }
    }

    pub fn with_chi(mut self, chi: SignedMeasure) -> Self {
        self.chi = chi;
        self
    }

    pub fn with_g(mut self, g_values: Vec<Vec<f64>>) -> Self {
        self.g_values = g_values;
        self
    }

    pub fn sign(&self, i: usize) -> f64 {
        self.plates[i].sign.value()
    }

    pub fn dim(&self) -> usize {
        self.plates.first().and_then(|p| p.nodes.first()).map_or(0, Vec::len)
    }

    pub fn g_inf(&self) -> f64 {
        self.g_values.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn g_sup(&self) -> f64 {
        self.g_values.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn unbounded_plates(&self) -> Vec<usize> {
        (0..self.plates.len()).filter(|&i| self.plates[i].is_unbounded()).collect()
    }

    pub fn check_plate(&self, i: usize) -> Result<()> {
        if i < self.plates.len() {
            Ok(())
        } else {
            Err(GvpError::PlateIndex(i))
        }
    }

    pub fn check_conforms(&self, mu: &VectorMeasure) -> Result<()> {
        if mu.components.len() != self.plates.len() {
            return Err(GvpError::Precondition(format!(
                "vector measure has {} components, condenser has {} plates",
                mu.components.len(),
                self.plates.len()
            )));
        }
        for (i, (c, p)) in mu.components.iter().zip(&self.plates).enumerate() {
            if c.weights.len() != p.nodes.len() || c.plate_index.is_some_and(|k| k != i) {
                return Err(GvpError::Precondition(format!("component {i} does not match plate {i}")));
            }
        }
        Ok(())
    }

    /// Checks every standing assumption, returning the first violation.
    pub fn validate(&self) -> std::result::Result<(), ValidationFailure> {
        if self.plates.is_empty() {
            return Err(ValidationFailure::NoPlates);
        }
        let dim = self.dim();
        for (i, p) in self.plates.iter().enumerate() {
            if p.nodes.is_empty() {
                return Err(ValidationFailure::PlateEmpty { plate: i });
            }
            if p.nodes.iter().any(|x| x.len() != dim || x.iter().any(|c| !c.is_finite())) {
                return Err(ValidationFailure::DimensionMismatch { plate: i });
            }
        }
        if self.a.len() != self.plates.len() {
            return Err(ValidationFailure::ALengthMismatch {
                expected: self.plates.len(),
                found: self.a.len(),
            });
        }
        if let Some(i) = self.a.iter().position(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(ValidationFailure::APositiveViolated { plate: i });
        }
        if self.g_values.len() != self.plates.len() {
            return Err(ValidationFailure::GShapeMismatch { plate: self.g_values.len() });
        }
        for (i, (g, p)) in self.g_values.iter().zip(&self.plates).enumerate() {
            if g.len() != p.nodes.len() {
                return Err(ValidationFailure::GShapeMismatch { plate: i });
            }
            if let Some(node) = g.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(ValidationFailure::GInfNotPositive { plate: i, node });
            }
        }
        for (i, p) in self.plates.iter().enumerate() {
            if p.is_unbounded() && p.sign != Sign::Negative {
                return Err(ValidationFailure::UnboundedPlateNotNegative { plate: i });
            }
        }
        for (i, pi) in self.plates.iter().enumerate() {
            for (j, pj) in self.plates.iter().enumerate() {
                if pi.sign != Sign::Positive || pj.sign != Sign::Negative {
                    continue;
                }
                let d = min_distance(&pi.nodes, &pj.nodes);
                if d < self.min_gap {
                    return Err(ValidationFailure::PlatesNotSeparated {
                        positive: i,
                        negative: j,
                        distance: d,
                    });
                }
            }
        }
        for (k, atom) in self.chi.atoms.iter().enumerate() {
            if atom.position.len() != dim || atom.position.iter().chain([&atom.weight]).any(|c| !c.is_finite()) {
                return Err(ValidationFailure::ChiNotFinite { atom: k });
            }
            let against = if atom.weight > 0.0 {
                Sign::Negative
            } else if atom.weight < 0.0 {
                Sign::Positive
            } else {
                continue;
            };
            for (i, p) in self.plates.iter().enumerate() {
                if p.sign == against && min_distance(std::slice::from_ref(&atom.position), &p.nodes) < self.min_gap {
                    return Err(match against {
                        Sign::Negative => ValidationFailure::ChiPlusMeetsNegativePlates { atom: k, plate: i },
                        Sign::Positive => ValidationFailure::ChiMinusMeetsPositivePlates { atom: k, plate: i },
                    });
                }
            }
        }
        Ok(())
    }

    /// `R mu = sum_i alpha_i mu^i`, with coincident nodes of equally signed
    /// plates accumulated.
    pub fn r_map(&self, mu: &VectorMeasure) -> Result<SignedMeasure> {
        self.check_conforms(mu)?;
        let mut atoms = Vec::new();
        for (i, c) in mu.components.iter().enumerate() {
            let s = self.sign(i);
            for (x, &w) in self.plates[i].nodes.iter().zip(&c.weights) {
                if w != 0.0 {
                    atoms.push(Atom {
                        position: x.clone(),
                        weight: s * w,
                    });
                }
            }
        }
        Ok(SignedMeasure::new(atoms).consolidated())
    }

    /// `<g, mu^i>`.
    pub fn g_moment(&self, mu: &VectorMeasure, i: usize) -> Result<f64> {
        self.check_plate(i)?;
        self.check_conforms(mu)?;
        Ok(self.g_values[i].iter().zip(&mu.components[i].weights).map(|(g, w)| g * w).sum())
    }
}

fn min_distance(a: &[Point], b: &[Point]) -> f64 {
    a.iter()
        .flat_map(|x| b.iter().map(move |y| dist(x, y)))
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_plates() -> Condenser {
        Condenser::new(
            vec![
                Plate::new(vec![vec![0.0, 0.0, 0.0]], Sign::Positive),
                Plate::new(vec![vec![3.0, 0.0, 0.0]], Sign::Negative),
            ],
            vec![1.0, 1.0],
        )
    }

    #[test]
    fn r_map_of_opposite_unit_atoms() {
        let c = two_plates();
        let mu = VectorMeasure::from_weights(vec![vec![1.0], vec![1.0]]);
        let r = c.r_map(&mu).unwrap();
        assert_eq!(
            r.atoms,
            vec![
                Atom {
                    position: vec![0.0, 0.0, 0.0],
                    weight: 1.0
                },
                Atom {
                    position: vec![3.0, 0.0, 0.0],
                    weight: -1.0
                }
            ]
        );
        assert_eq!(r.positive_mass(), 1.0);
        assert_eq!(r.negative_mass(), 1.0);
        assert!(c.r_map(&VectorMeasure::zeros(&c)).unwrap().is_empty());
    }

    #[test]
    fn r_map_accumulates_shared_nodes() {
        let p = vec![vec![1.0, 1.0, 0.0]];
        let c = Condenser::new(
            vec![Plate::new(p.clone(), Sign::Positive), Plate::new(p, Sign::Positive)],
            vec![1.0, 1.0],
        );
        let mu = VectorMeasure::from_weights(vec![vec![0.5], vec![0.5]]);
        let r = c.r_map(&mu).unwrap();
        assert_eq!(r.atoms.len(), 1);
        assert_eq!(r.atoms[0].weight, 1.0);
    }

    #[test]
    fn r_map_rejects_mismatch() {
        let c = two_plates();
        let mu = VectorMeasure::from_weights(vec![vec![1.0]]);
        assert!(c.r_map(&mu).is_err());
    }

    #[test]
    fn g_moments() {
        let c = two_plates();
        let mu = VectorMeasure::from_weights(vec![vec![0.7], vec![0.0]]);
        assert_eq!(c.g_moment(&mu, 0).unwrap(), 0.7);
        assert_eq!(c.g_moment(&mu, 1).unwrap(), 0.0);
        let c2 = Condenser::new(
            vec![Plate::new(vec![vec![0.0, 0.0], vec![1.0, 0.0]], Sign::Positive)],
            vec![1.0],
        )
        .with_g(vec![vec![2.0, 3.0]]);
        let mu2 = VectorMeasure::from_weights(vec![vec![0.5, 0.5]]);
        assert_eq!(c2.g_moment(&mu2, 0).unwrap(), 2.5);
        assert!(c2.g_moment(&mu2, 3).is_err());
    }

    #[test]
    fn validation_failures_are_named() {
        assert!(two_plates().validate().is_ok());

        let c = two_plates().with_chi(SignedMeasure::atom(vec![3.0, 0.0, 0.0], 1.0));
        assert_eq!(c.validate().unwrap_err().code(), "chi_plus_meets_negative_plates");

        let c = two_plates().with_chi(SignedMeasure::atom(vec![0.0, 0.0, 0.0], -1.0));
        assert_eq!(c.validate().unwrap_err().code(), "chi_minus_meets_positive_plates");

        let c = two_plates().with_g(vec![vec![1.0], vec![0.0]]);
        assert_eq!(c.validate().unwrap_err().code(), "g_inf_not_positive");

        let mut c = two_plates();
        c.a[1] = 0.0;
        assert_eq!(c.validate().unwrap_err().code(), "a_positive_violated");

        let mut c = two_plates();
        c.plates[0].truncation_radius = Some(10.0);
        assert_eq!(c.validate().unwrap_err().code(), "unbounded_plate_not_negative");

        let mut c = two_plates();
        c.plates[1].nodes[0] = vec![0.0, 0.0, 1e-9];
        assert_eq!(c.validate().unwrap_err().code(), "plates_not_separated");

        let c = Condenser::new(vec![], vec![]);
        assert_eq!(c.validate().unwrap_err().code(), "no_plates");
    }

    #[test]
    fn hahn_jordan_split() {
        let nu = SignedMeasure::new(vec![
            Atom {
                position: vec![0.0],
                weight: 2.0,
            },
            Atom {
                position: vec![1.0],
                weight: -0.5,
            },
        ]);
        assert_eq!(nu.positive_part().total(), 2.0);
        assert_eq!(nu.negative_part().total(), 0.5);
        assert_eq!(nu.total_variation(), 2.5);
    }

    fn three_plate() -> Condenser {
        Condenser::new(
            vec![
                Plate::new(vec![vec![0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]], Sign::Positive),
                Plate::new(vec![vec![0.0, 1.0, 0.0], vec![0.0, 2.0, 0.0]], Sign::Positive),
                Plate::new(vec![vec![5.0, 0.0, 0.0], vec![6.0, 0.0, 0.0]], Sign::Negative),
            ],
            vec![1.0, 2.0, 3.0],
        )
        .with_g(vec![vec![1.0, 2.0], vec![0.5, 1.5], vec![1.0, 1.0]])
    }

    fn weight_vec() -> impl Strategy<Value = Vec<Vec<f64>>> {
        proptest::collection::vec(proptest::collection::vec(0.0f64..4.0, 2), 3)
    }

    fn atom_weight(r: &SignedMeasure, p: &[f64]) -> f64 {
        r.atoms.iter().filter(|a| a.position == p).map(|a| a.weight).sum()
    }

    proptest! {
        #[test]
        fn r_map_linear(w1 in weight_vec(), w2 in weight_vec(), c in 0.0f64..3.0) {
            let cond = three_plate();
            let m1 = VectorMeasure::from_weights(w1);
            let m2 = VectorMeasure::from_weights(w2);
            let sum = cond.r_map(&m1.add(&m2)).unwrap();
            let parts = cond.r_map(&m1).unwrap().plus(&cond.r_map(&m2).unwrap());
            let scaled = cond.r_map(&m1.scale(c)).unwrap();
            let r1 = cond.r_map(&m1).unwrap();
            for p in cond.plates.iter().flat_map(|p| p.nodes.iter()) {
                let lhs = atom_weight(&sum, p);
                let rhs = atom_weight(&parts, p);
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
                let s = atom_weight(&scaled, p);
                prop_assert!((s - c * atom_weight(&r1, p)).abs() <= 1e-12 * (1.0 + s.abs()));
            }
            prop_assert!((r1.total_variation() - m1.total_mass()).abs() <= 1e-12 * (1.0 + m1.total_mass()));
        }

        #[test]
        fn g_moment_bounds(w in weight_vec()) {
            let cond = three_plate();
            let mu = VectorMeasure::from_weights(w);
            for i in 0..3 {
                let m = cond.g_moment(&mu, i).unwrap();
                let mass = mu.components[i].mass();
                prop_assert!(m >= cond.g_inf() * mass - 1e-12);
                prop_assert!(m <= cond.g_sup() * mass + 1e-12);
            }
        }
    }
}
