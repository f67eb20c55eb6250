//! Convex polytope domains `{x : g_m · x <= c_m}` and their boundary kernels.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::samplers::VelocityLaw;

/// Relative tolerance on constraint satisfaction: `g · x <= c + MEMBERSHIP_TOL (1 + |c|)`.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub g: Vec<f64>,
    pub c: f64,
}

impl Constraint {
    pub fn new(g: Vec<f64>, c: f64) -> Self {
        Constraint { g, c }
    }

    /// `c - g · x`; positive strictly inside.
    pub fn slack(&self, x: &[f64]) -> f64 {
        self.c - dot(&self.g, x)
    }

    fn tolerance(&self) -> f64 {
        MEMBERSHIP_TOL * (1.0 + self.c.abs())
    }

    /// Index of the single nonzero coefficient, if the face is axis-aligned.
    pub fn axis(&self) -> Option<usize> {
        let mut found = None;
        for (i, gi) in self.g.iter().enumerate() {
            if *gi != 0.0 {
                if found.is_some() {
                    return None;
                }
                found = Some(i);
            }
        }
        found
    }
}

/// Intersection of finitely many half-spaces. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolytopeRepr", into = "PolytopeRepr")]
pub struct Polytope {
    dim: usize,
    constraints: Vec<Constraint>,
}

#[derive(Serialize, Deserialize)]
struct PolytopeRepr {
    constraints: Vec<Constraint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
}

impl TryFrom<PolytopeRepr> for Polytope {
    type Error = Error;

    fn try_from(repr: PolytopeRepr) -> Result<Self> {
        match (repr.constraints.first(), repr.dim) {
            (Some(first), _) => {
                let dim = first.g.len();
                let poly = Polytope::new(dim, repr.constraints)?;
                if let Some(d) = repr.dim {
                    if d != dim {
                        return Err(Error::DimensionMismatch { expected: d, got: dim });
                    }
                }
                Ok(poly)
            }
            (None, Some(d)) => Ok(Polytope::unrestricted(d)),
            (None, None) => Err(Error::InvalidPolytope(
                "an empty constraint list needs an explicit \"dim\"".into(),
            )),
        }
    }
}

impl From<Polytope> for PolytopeRepr {
    fn from(p: Polytope) -> Self {
        PolytopeRepr {
            dim: p.constraints.is_empty().then_some(p.dim),
            constraints: p.constraints,
        }
    }
}

/// Time until the ray `x + u v` leaves the domain, and through which face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryHit {
    pub tau_b: f64,
    pub face: Option<usize>,
}

impl BoundaryHit {
    pub const NEVER: BoundaryHit = BoundaryHit {
        tau_b: f64::INFINITY,
        face: None,
    };
}

impl Polytope {
    pub fn new(dim: usize, constraints: Vec<Constraint>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidPolytope("dimension must be positive".into()));
        }
        for (m, con) in constraints.iter().enumerate() {
            if con.g.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: con.g.len(),
                });
            }
            if !con.c.is_finite() || con.g.iter().any(|g| !g.is_finite()) {
                return Err(Error::InvalidPolytope(format!(
                    "constraint {m} has non-finite coefficients"
                )));
            }
            if con.g.iter().all(|g| *g == 0.0) {
                return Err(Error::InvalidPolytope(format!(
                    "constraint {m} has a zero normal"
                )));
            }
        }
        Ok(Polytope { dim, constraints })
    }

    /// The whole space (no constraints).
    pub fn unrestricted(dim: usize) -> Self {
        Polytope {
            dim,
            constraints: Vec::new(),
        }
    }

    /// Axis-aligned box; `None` leaves that side open.
    pub fn boxed(lower: &[Option<f64>], upper: &[Option<f64>]) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        let dim = lower.len();
        let mut constraints = Vec::new();
        for i in 0..dim {
            if let (Some(lo), Some(hi)) = (lower[i], upper[i]) {
                if lo >= hi {
                    return Err(Error::InvalidPolytope(format!(
                        "empty interval [{lo}, {hi}] in coordinate {i}"
                    )));
                }
            }
            if let Some(lo) = lower[i] {
                let mut g = vec![0.0; dim];
                g[i] = -1.0;
                constraints.push(Constraint::new(g, -lo));
            }
            if let Some(hi) = upper[i] {
                let mut g = vec![0.0; dim];
                g[i] = 1.0;
                constraints.push(Constraint::new(g, hi));
            }
        }
        Polytope::new(dim, constraints)
    }

    /// `{x : x_j >= 0, Σ x_j <= total}`.
    pub fn simplex(dim: usize, total: f64) -> Result<Self> {
        if !(total > 0.0) {
            return Err(Error::InvalidPolytope(format!(
                "simplex budget must be positive, got {total}"
            )));
        }
        let mut constraints: Vec<Constraint> = (0..dim)
            .map(|i| {
                let mut g = vec![0.0; dim];
                g[i] = -1.0;
                Constraint::new(g, 0.0)
            })
            .collect();
        constraints.push(Constraint::new(vec![1.0; dim], total));
        Polytope::new(dim, constraints)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn is_box(&self) -> bool {
        self.constraints.iter().all(|c| c.axis().is_some())
    }

    /// First constraint violated beyond tolerance, with the size of the violation.
    pub fn first_violation(&self, x: &[f64]) -> Option<(usize, f64)> {
        self.constraints.iter().enumerate().find_map(|(m, con)| {
            let excess = -con.slack(x);
            (excess > con.tolerance()).then_some((m, excess))
        })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.first_violation(x).is_none()
    }

    /// Every constraint holds with strictly positive slack.
    pub fn strictly_contains(&self, x: &[f64]) -> bool {
        self.constraints.iter().all(|c| c.slack(x) > 0.0)
    }

    /// Confirms that `point` is strictly feasible, i.e. the interior is nonempty.
    pub fn check_interior(&self, point: &[f64]) -> Result<()> {
        if point.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: point.len(),
            });
        }
        match self.constraints.iter().position(|c| c.slack(point) <= 0.0) {
            None => Ok(()),
            Some(m) => Err(Error::InvalidPolytope(format!(
                "point is not strictly inside constraint {m}"
            ))),
        }
    }

    /// Time until `x + u v` first crosses a face. Ties go to the lower face index.
    pub fn hit_time(&self, x: &[f64], v: &[f64]) -> Result<BoundaryHit> {
        if let Some((constraint, excess)) = self.first_violation(x) {
            return Err(Error::OutsideDomain { constraint, excess });
        }
        Ok(self.hit_time_unchecked(x, v))
    }

    /// [`Polytope::hit_time`] without the membership check; slightly negative
    /// slacks produce a zero hit time.
    pub fn hit_time_unchecked(&self, x: &[f64], v: &[f64]) -> BoundaryHit {
        let mut best = BoundaryHit::NEVER;
        for (m, con) in self.constraints.iter().enumerate() {
            let rate = dot(&con.g, v);
            if rate <= 0.0 {
                continue;
            }
            let tau = (con.slack(x) / rate).max(0.0);
            if tau < best.tau_b {
                best = BoundaryHit {
                    tau_b: tau,
                    face: Some(m),
                };
            }
        }
        best
    }

    /// Outward unit normal of face `face`.
    pub fn outward_normal(&self, face: usize) -> Vec<f64> {
        let g = &self.constraints[face].g;
        let len = norm(g);
        g.iter().map(|gi| gi / len).collect()
    }

    /// Euclidean projection onto `{x : g_m · x <= c_m - margin ‖g_m‖}`.
    ///
    /// Boxes are clipped coordinate-wise; general polytopes use Dykstra's
    /// alternating projections.
    pub fn project(&self, x: &[f64], margin: f64) -> Vec<f64> {
        let shrunk: Vec<(Vec<f64>, f64, f64)> = self
            .constraints
            .iter()
            .map(|c| {
                let gg = dot(&c.g, &c.g);
                (c.g.clone(), c.c - margin * gg.sqrt(), gg)
            })
            .collect();
        let project_one = |y: &mut [f64], (g, c, gg): &(Vec<f64>, f64, f64)| {
            let excess = dot(g, y) - c;
            if excess > 0.0 {
                let s = excess / gg;
                for (yi, gi) in y.iter_mut().zip(g) {
                    *yi -= s * gi;
                }
            }
        };
        let mut y = x.to_vec();
        if self.is_box() {
            for h in &shrunk {
                project_one(&mut y, h);
            }
            return y;
        }
        let mut increments = vec![vec![0.0; self.dim]; shrunk.len()];
        for _ in 0..10_000 {
            let mut change = 0.0_f64;
            for (h, inc) in shrunk.iter().zip(increments.iter_mut()) {
                let mut z: Vec<f64> = y.iter().zip(inc.iter()).map(|(a, b)| a + b).collect();
                let before = z.clone();
                project_one(&mut z, h);
                for i in 0..self.dim {
                    inc[i] = before[i] - z[i];
                    change = change.max((z[i] - y[i]).abs());
                }
                y = z;
            }
            if change < 1e-15 {
                break;
            }
        }
        y
    }

    /// Maps the constraints through `x = C y`, giving `(Cᵀ g) · y <= c`.
    pub fn pull_back(&self, factor: &nalgebra::DMatrix<f64>) -> Result<Polytope> {
        let constraints = self
            .constraints
            .iter()
            .map(|con| {
                let g = factor.transpose() * nalgebra::DVector::from_column_slice(&con.g);
                Constraint::new(g.iter().copied().collect(), con.c)
            })
            .collect();
        Polytope::new(self.dim, constraints)
    }
}

/// Mirror image of `v` in the plane with unit normal `n`: `v - 2 (v · n) n`.
pub fn specular_reflect(v: &[f64], n: &[f64]) -> Vec<f64> {
    let s = 2.0 * dot(v, n);
    v.iter().zip(n).map(|(vi, ni)| vi - s * ni).collect()
}

/// Boundary kernel that ignores the incoming velocity and draws afresh from `law`.
///
/// Outward draws are left in place: the simulator then sees an immediate
/// second boundary event and redraws, up to its retry cap. Conditioning on an
/// inward draw this way is an approximation, so this kernel is experimental.
pub fn resample_boundary<R: Rng + ?Sized>(law: VelocityLaw, dim: usize, rng: &mut R) -> Vec<f64> {
    law.sample(dim, rng)
}
