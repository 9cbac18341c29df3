//! Deterministic point-cloud discretizations of plate geometries.
//!
//! Every generator is a pure function of its [`ShapeSpec`]. Sphere shells use
//! a Fibonacci spiral (regular polygon in the plane), balls use seeded
//! rejection sampling, and rotational bodies place rings of nodes on the
//! lateral surface `x2^2 + x3^2 = rho(x1)^2` at axially uniform spacing.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GvpError, Result};

pub type Point = Vec<f64>;

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

/// Tail profile of a rotational body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    /// `rho(r) = r^(-s)`, `s >= 0`.
    Power { s: f64 },
    /// `rho(r) = exp(-r^s)`, `s > 0`.
    Exponential { s: f64 },
}

/// Classification of a rotational body's behaviour at infinity, taken as
/// metadata from the profile family and never computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThinnessClass {
    NotThin,
    ThinInfiniteCapacity,
    FiniteCapacity,
}

impl Profile {
    pub fn radius(&self, x: f64) -> f64 {
        match *self {
            Profile::Power { s } => x.powf(-s),
            Profile::Exponential { s } => (-x.powf(s)).exp(),
        }
    }

    pub fn class(&self) -> ThinnessClass {
        match *self {
            Profile::Power { .. } => ThinnessClass::NotThin,
            Profile::Exponential { s } if s <= 1.0 => ThinnessClass::ThinInfiniteCapacity,
            Profile::Exponential { .. } => ThinnessClass::FiniteCapacity,
        }
    }

    fn check(&self) -> Result<()> {
        match *self {
            Profile::Power { s } if s.is_finite() && s >= 0.0 => Ok(()),
            Profile::Exponential { s } if s.is_finite() && s > 0.0 => Ok(()),
            _ => Err(GvpError::InvalidShape(format!("profile exponent out of range: {self:?}"))),
        }
    }
}

fn default_ring_spacing() -> f64 {
    0.5
}

fn default_ring_min() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    SphereShell {
        center: Point,
        radius: f64,
    },
    Ball {
        center: Point,
        radius: f64,
    },
    Segment {
        start: Point,
        end: Point,
    },
    /// Lateral surface of `{ q <= x1 <= R, x2^2 + x3^2 <= rho(x1)^2 }` in R^3.
    RotationalBody {
        q: f64,
        profile: Profile,
        truncation_radius: f64,
        #[serde(default = "default_ring_spacing")]
        ring_spacing: f64,
        #[serde(default = "default_ring_min")]
        ring_min: usize,
    },
}

impl Shape {
    /// Ambient dimension the shape lives in, if the shape fixes one.
    pub fn dim(&self) -> usize {
        match self {
            Shape::SphereShell { center, .. } | Shape::Ball { center, .. } => center.len(),
            Shape::Segment { start, .. } => start.len(),
            Shape::RotationalBody { .. } => 3,
        }
    }

    /// Node rings `(x1, count)` of a rotational body.
    pub fn rings(&self) -> Option<Vec<(f64, usize)>> {
        let Shape::RotationalBody {
            q,
            profile,
            truncation_radius,
            ring_spacing,
            ring_min,
        } = self
        else {
            return None;
        };
        let k_max = ((truncation_radius - q) / ring_spacing + 1e-9).floor() as usize;
        Some(
            (0..=k_max)
                .map(|k| {
                    let x = q + k as f64 * ring_spacing;
                    let circ = 2.0 * PI * profile.radius(x);
                    let m = ((circ / ring_spacing).ceil() as usize).max(*ring_min);
                    (x, m)
                })
                .collect(),
        )
    }

    /// The node count a rotational body's ring layout produces; `None` for
    /// shapes whose count is free.
    pub fn natural_node_count(&self) -> Option<usize> {
        self.rings().map(|r| r.iter().map(|&(_, m)| m).sum())
    }

    /// Residual of the shape's defining equation (or inequality) at `p`.
    pub fn residual(&self, p: &[f64]) -> f64 {
        match self {
            Shape::SphereShell { center, radius } => (dist(p, center) - radius).abs(),
            Shape::Ball { center, radius } => (dist(p, center) - radius).max(0.0),
            Shape::Segment { start, end } => {
                let len = dist(start, end);
                (dist(p, start) + dist(p, end) - len).abs()
            }
            Shape::RotationalBody {
                q,
                profile,
                truncation_radius,
                ..
            } => {
                let x = p[0];
                let out = (q - x).max(0.0) + (x - truncation_radius).max(0.0);
                let rho = profile.radius(x);
                out + (p[1] * p[1] + p[2] * p[2] - rho * rho).abs()
            }
        }
    }

    fn check(&self) -> Result<()> {
        match self {
            Shape::SphereShell { center, radius } | Shape::Ball { center, radius } => {
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(GvpError::InvalidShape(format!("radius must be positive, got {radius}")));
                }
                if center.is_empty() {
                    return Err(GvpError::InvalidShape("empty center".into()));
                }
            }
            Shape::Segment { start, end } => {
                if start.len() != end.len() {
                    return Err(GvpError::DimensionMismatch {
                        expected: start.len(),
                        found: end.len(),
                    });
                }
                if start == end {
                    return Err(GvpError::InvalidShape("degenerate segment".into()));
                }
            }
            Shape::RotationalBody {
                q,
                profile,
                truncation_radius,
                ring_spacing,
                ring_min,
            } => {
                profile.check()?;
                if !(*q > 0.0) {
                    return Err(GvpError::InvalidShape(format!("profile offset q must be positive, got {q}")));
                }
                if !(truncation_radius > q) {
                    return Err(GvpError::InvalidShape(format!(
                        "truncation radius {truncation_radius} must exceed q = {q}"
                    )));
                }
                if !(*ring_spacing > 0.0) || *ring_min < 3 {
                    return Err(GvpError::InvalidShape("ring spacing must be positive and ring_min >= 3".into()));
                }
            }
        }
        Ok(())
    }
}

fn default_node_count() -> usize {
    0
}

/// A shape together with its discretization parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSpec {
    pub shape: Shape,
    #[serde(default = "default_node_count")]
    pub node_count: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ShapeSpec {
    pub fn new(shape: Shape, node_count: usize, seed: u64) -> Self {
        Self { shape, node_count, seed }
    }

    /// Rotational body whose node count is taken from its ring layout.
    pub fn rotational(q: f64, profile: Profile, truncation_radius: f64, ring_spacing: f64) -> Self {
        let shape = Shape::RotationalBody {
            q,
            profile,
            truncation_radius,
            ring_spacing,
            ring_min: default_ring_min(),
        };
        let node_count = shape.natural_node_count().unwrap_or(0);
        Self::new(shape, node_count, 0)
    }
}

/// Generates exactly `spec.node_count` points in `R^dim`.
pub fn generate_nodes(spec: &ShapeSpec, dim: usize) -> Result<Vec<Point>> {
    spec.shape.check()?;
    if spec.shape.dim() != dim {
        return Err(GvpError::DimensionMismatch {
            expected: dim,
            found: spec.shape.dim(),
        });
    }
    let n = spec.node_count;
    if n == 0 {
        return Err(GvpError::InvalidShape("node_count must be at least 1".into()));
    }
    let points = match &spec.shape {
        Shape::SphereShell { center, radius } => sphere_shell(center, *radius, n, spec.seed),
        Shape::Ball { center, radius } => ball(center, *radius, n, spec.seed),
        Shape::Segment { start, end } => segment(start, end, n),
        Shape::RotationalBody { profile, .. } => {
            let rings = spec.shape.rings().expect("rotational body has rings");
            if n < rings.len() {
                return Err(GvpError::InvalidShape(format!(
                    "rotational body has {} rings but node_count is {n}",
                    rings.len()
                )));
            }
            rotational(profile, &apportion(&rings, n))
        }
    };
    debug_assert_eq!(points.len(), n);
    Ok(points)
}

fn sphere_shell(center: &[f64], radius: f64, n: usize, seed: u64) -> Vec<Point> {
    let dim = center.len();
    let unit: Vec<Point> = match dim {
        1 => (0..n).map(|i| vec![if i % 2 == 0 { 1.0 } else { -1.0 }]).collect(),
        2 => (0..n)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / n as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        3 => (0..n)
            .map(|i| {
                let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
                let r = (1.0 - z * z).max(0.0).sqrt();
                let phi = i as f64 * GOLDEN_ANGLE;
                vec![r * phi.cos(), r * phi.sin(), z]
            })
            .collect(),
        _ => {
            // No spiral in higher dimensions: normalized seeded Gaussians.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n)
                .map(|_| loop {
                    let v: Vec<f64> = (0..dim).map(|_| gaussian(&mut rng)).collect();
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm > 1e-8 {
                        break v.into_iter().map(|x| x / norm).collect();
                    }
                })
                .collect()
        }
    };
    unit.into_iter()
        .map(|u| u.iter().zip(center).map(|(ui, ci)| ci + radius * ui).collect())
        .collect()
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

fn ball(center: &[f64], radius: f64, n: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = center.len();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
            out.push(v.iter().zip(center).map(|(vi, ci)| ci + radius * vi).collect());
        }
    }
    out
}

fn segment(start: &[f64], end: &[f64], n: usize) -> Vec<Point> {
    (0..n)
        .map(|i| {
            let t = if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
            start.iter().zip(end).map(|(s, e)| s + t * (e - s)).collect()
        })
        .collect()
}

/// Redistributes `n` nodes over the rings in proportion to their natural
/// counts (largest remainder, at least one per ring). The natural layout is
/// returned unchanged.
fn apportion(rings: &[(f64, usize)], n: usize) -> Vec<(f64, usize)> {
    let natural: usize = rings.iter().map(|&(_, m)| m).sum();
    if natural == n {
        return rings.to_vec();
    }
    let spare = (n - rings.len()) as f64;
    let quota: Vec<f64> = rings.iter().map(|&(_, m)| spare * m as f64 / natural as f64).collect();
    let mut counts: Vec<usize> = quota.iter().map(|q| 1 + q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..rings.len()).collect();
    order.sort_by(|&i, &j| (quota[j] - quota[j].floor()).total_cmp(&(quota[i] - quota[i].floor())).then(i.cmp(&j)));
    let missing = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    rings.iter().zip(counts).map(|(&(x, _), m)| (x, m)).collect()
}

fn rotational(profile: &Profile, rings: &[(f64, usize)]) -> Vec<Point> {
    let mut out = Vec::new();
    for (k, &(x, m)) in rings.iter().enumerate() {
        let rho = profile.radius(x);
        let offset = k as f64 * GOLDEN_ANGLE;
        for j in 0..m {
            let t = offset + 2.0 * PI * j as f64 / m as f64;
            out.push(vec![x, rho * t.cos(), rho * t.sin()]);
        }
    }
    out
}

pub fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Distance from every point to its nearest other point.
pub fn nearest_neighbor_distances(points: &[Point]) -> Result<Vec<f64>> {
    if points.len() < 2 {
        return Err(GvpError::Precondition(
            "nearest-neighbour distances need at least two points".into(),
        ));
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(GvpError::DimensionMismatch {
            expected: dim,
            found: p.len(),
        });
    }
    let rows: Vec<(f64, Option<usize>)> = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut best = f64::INFINITY;
            for (j, q) in points.iter().enumerate() {
                if j == i {
                    continue;
                }
                let d = dist(p, q);
                if d == 0.0 {
                    return (0.0, Some(j));
                }
                best = best.min(d);
            }
            (best, None)
        })
        .collect();
    if let Some((i, j)) = rows
        .iter()
        .enumerate()
        .find_map(|(i, r)| r.1.map(|j| (i.min(j), i.max(j))))
    {
        return Err(GvpError::DuplicatePoints(i, j));
    }
    Ok(rows.into_iter().map(|r| r.0).collect())
}
