//! Closed basic semialgebraic sets `{x : g_i(x) >= 0, h_j(x) = 0}`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::{MultiPoly, PolyError};

/// Tolerance used when filtering grid points by membership.
pub const GRID_MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SetError {
    #[error("box bounds must satisfy lo <= hi in every coordinate (coordinate {0})")]
    InvalidBox(usize),
    #[error("grid resolution must be at least 2, got {0}")]
    InvalidResolution(usize),
    #[error("grid sampling produced no points inside the set")]
    EmptyGrid,
    #[error("set has no bounding box; supply one explicitly")]
    Unbounded,
    #[error(transparent)]
    Poly(#[from] PolyError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Ineq,
    Eq,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TaggedPoly {
    role: Role,
    poly: MultiPoly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SetRepr {
    n: usize,
    constraints: Vec<TaggedPoly>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    archimedean_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bounds: Option<(Vec<f64>, Vec<f64>)>,
}

/// `inequalities` are read as `g >= 0`, `equalities` as `h = 0`.
///
/// When `archimedean_radius` is set, the ball polynomial `R^2 - |x|^2` is
/// appended to the inequality list only when a certificate is compiled; it
/// never affects membership. `bounds` is an optional axis-aligned box that
/// contains the set, used for grid sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SetRepr", into = "SetRepr")]
pub struct BasicSemialgebraicSet {
    n: usize,
    inequalities: Vec<MultiPoly>,
    equalities: Vec<MultiPoly>,
    archimedean_radius: Option<f64>,
    bounds: Option<(Vec<f64>, Vec<f64>)>,
}

impl BasicSemialgebraicSet {
    /// All of `R^n`.
    pub fn whole_space(n: usize) -> Self {
        Self { n, inequalities: Vec::new(), equalities: Vec::new(), archimedean_radius: None, bounds: None }
    }

    pub fn new(n: usize, inequalities: Vec<MultiPoly>, equalities: Vec<MultiPoly>) -> Result<Self, SetError> {
        for g in inequalities.iter().chain(&equalities) {
            if g.n() != n {
                return Err(PolyError::DimensionMismatch { expected: n, found: g.n() }.into());
            }
        }
        Ok(Self { n, inequalities, equalities, archimedean_radius: None, bounds: None })
    }

    /// The box `[lo, hi]` described by its `2n` affine facets `x_i - lo_i`
    /// and `hi_i - x_i`, with the circumscribed ball radius attached.
    /// Degenerate axes with `lo_i == hi_i` are allowed.
    pub fn box_set(lo: &[f64], hi: &[f64]) -> Result<Self, SetError> {
        let n = lo.len();
        if hi.len() != n {
            return Err(PolyError::DimensionMismatch { expected: n, found: hi.len() }.into());
        }
        let mut inequalities = Vec::with_capacity(2 * n);
        for i in 0..n {
            if !(lo[i] <= hi[i]) {
                return Err(SetError::InvalidBox(i));
            }
            let mut up = vec![0.0; n];
            up[i] = 1.0;
            inequalities.push(MultiPoly::affine(&up, -lo[i]));
            let mut down = vec![0.0; n];
            down[i] = -1.0;
            inequalities.push(MultiPoly::affine(&down, hi[i]));
        }
        let radius = lo
            .iter()
            .zip(hi)
            .map(|(l, h)| l.abs().max(h.abs()).powi(2))
            .sum::<f64>()
            .sqrt();
        Ok(Self {
            n,
            inequalities,
            equalities: Vec::new(),
            archimedean_radius: Some(radius),
            bounds: Some((lo.to_vec(), hi.to_vec())),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn inequalities(&self) -> &[MultiPoly] {
        &self.inequalities
    }

    pub fn equalities(&self) -> &[MultiPoly] {
        &self.equalities
    }

    pub fn archimedean_radius(&self) -> Option<f64> {
        self.archimedean_radius
    }

    pub fn bounds(&self) -> Option<(&[f64], &[f64])> {
        self.bounds.as_ref().map(|(l, h)| (l.as_slice(), h.as_slice()))
    }

    pub fn is_whole_space(&self) -> bool {
        self.inequalities.is_empty() && self.equalities.is_empty()
    }

    pub fn with_inequality(mut self, g: MultiPoly) -> Result<Self, SetError> {
        if g.n() != self.n {
            return Err(PolyError::DimensionMismatch { expected: self.n, found: g.n() }.into());
        }
        self.inequalities.push(g);
        Ok(self)
    }

    pub fn with_equality(mut self, h: MultiPoly) -> Result<Self, SetError> {
        if h.n() != self.n {
            return Err(PolyError::DimensionMismatch { expected: self.n, found: h.n() }.into());
        }
        self.equalities.push(h);
        Ok(self)
    }

    pub fn with_archimedean_radius(mut self, r: Option<f64>) -> Self {
        self.archimedean_radius = r;
        self
    }

    pub fn with_bounds(mut self, lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), self.n);
        assert_eq!(hi.len(), self.n);
        self.bounds = Some((lo, hi));
        self
    }

    /// `R^2 - Σ x_i^2`, if a radius is attached.
    pub fn ball_polynomial(&self) -> Option<MultiPoly> {
        self.archimedean_radius.map(|r| {
            let mut b = MultiPoly::constant(self.n, r * r);
            for j in 0..self.n {
                let xj = MultiPoly::var(self.n, j);
                b = &b - &(&xj * &xj);
            }
            b
        })
    }

    /// The inequality list used by certificate compilation: the defining
    /// inequalities followed by the ball polynomial when one is attached.
    pub fn certificate_inequalities(&self) -> Vec<MultiPoly> {
        let mut out = self.inequalities.clone();
        out.extend(self.ball_polynomial());
        out
    }

    pub fn membership(&self, x: &[f64], tol: f64) -> Result<bool, SetError> {
        if x.len() != self.n {
            return Err(PolyError::DimensionMismatch { expected: self.n, found: x.len() }.into());
        }
        for g in &self.inequalities {
            if g.evaluate(x)? < -tol {
                return Ok(false);
            }
        }
        for h in &self.equalities {
            if h.evaluate(x)?.abs() > tol {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Uniform grid over `[lo, hi]` filtered by membership at
    /// [`GRID_MEMBERSHIP_TOL`]. Axes with `lo == hi` contribute one value.
    pub fn grid_sample(&self, lo: &[f64], hi: &[f64], resolution: usize) -> Result<Grid, SetError> {
        if resolution < 2 {
            return Err(SetError::InvalidResolution(resolution));
        }
        if lo.len() != self.n || hi.len() != self.n {
            return Err(PolyError::DimensionMismatch { expected: self.n, found: lo.len().min(hi.len()) }.into());
        }
        let axes: Vec<Vec<f64>> = lo.iter().zip(hi).map(|(&l, &h)| axis(l, h, resolution)).collect();
        let mut points = Vec::new();
        for x in cartesian(&axes) {
            if self.membership(&x, GRID_MEMBERSHIP_TOL)? {
                points.push(x);
            }
        }
        if points.is_empty() {
            return Err(SetError::EmptyGrid);
        }
        Ok(Grid { points, resolution })
    }

    /// Grid over the attached bounds.
    pub fn grid(&self, resolution: usize) -> Result<Grid, SetError> {
        let (lo, hi) = self.bounds().ok_or(SetError::Unbounded)?;
        let (lo, hi) = (lo.to_vec(), hi.to_vec());
        self.grid_sample(&lo, &hi, resolution)
    }
}

impl TryFrom<SetRepr> for BasicSemialgebraicSet {
    type Error = SetError;
    fn try_from(r: SetRepr) -> Result<Self, SetError> {
        let mut ineq = Vec::new();
        let mut eq = Vec::new();
        for c in r.constraints {
            match c.role {
                Role::Ineq => ineq.push(c.poly),
                Role::Eq => eq.push(c.poly),
            }
        }
        let mut s = BasicSemialgebraicSet::new(r.n, ineq, eq)?;
        s.archimedean_radius = r.archimedean_radius;
        if let Some((lo, hi)) = r.bounds {
            if lo.len() != r.n || hi.len() != r.n {
                return Err(PolyError::DimensionMismatch { expected: r.n, found: lo.len() }.into());
            }
            s.bounds = Some((lo, hi));
        }
        Ok(s)
    }
}

impl From<BasicSemialgebraicSet> for SetRepr {
    fn from(s: BasicSemialgebraicSet) -> Self {
        let constraints = s
            .inequalities
            .into_iter()
            .map(|poly| TaggedPoly { role: Role::Ineq, poly })
            .chain(s.equalities.into_iter().map(|poly| TaggedPoly { role: Role::Eq, poly }))
            .collect();
        SetRepr { n: s.n, constraints, archimedean_radius: s.archimedean_radius, bounds: s.bounds }
    }
}

/// Grid points inside a set, in row-major order (first coordinate outermost).
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub points: Vec<Vec<f64>>,
    pub resolution: usize,
}

pub(crate) fn axis(lo: f64, hi: f64, resolution: usize) -> Vec<f64> {
    if lo == hi {
        return vec![lo];
    }
    let step = (hi - lo) / (resolution - 1) as f64;
    (0..resolution)
        .map(|k| if k + 1 == resolution { hi } else { lo + step * k as f64 })
        .collect()
}

pub(crate) fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::with_capacity(axes.len())];
    for ax in axes {
        let mut next = Vec::with_capacity(out.len() * ax.len());
        for prefix in &out {
            for &v in ax {
                let mut p = prefix.clone();
                p.push(v);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn unit_box_facets_and_radius() {
        let s = BasicSemialgebraicSet::box_set(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(s.inequalities().len(), 4);
        assert!(s.inequalities().iter().all(|g| g.degree() == 1));
        assert!((s.archimedean_radius().unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn experiment_domains() {
        let pi = std::f64::consts::PI;
        let pend = BasicSemialgebraicSet::box_set(&[-pi, -pi], &[pi, pi]).unwrap();
        assert!(pend.membership(&[pi, -pi], 0.0).unwrap());
        assert!(!pend.membership(&[3.2, 0.0], 0.0).unwrap());
        let tumor = BasicSemialgebraicSet::box_set(&[0.0, 0.0], &[2.0, 2.0]).unwrap();
        assert!(tumor.membership(&[2.0, 0.0], 0.0).unwrap());
        assert!(!tumor.membership(&[-0.1, 1.0], 0.0).unwrap());
    }

    #[test]
    fn invalid_box_is_rejected() {
        assert_eq!(BasicSemialgebraicSet::box_set(&[0.0, 1.5], &[1.0, 1.0]), Err(SetError::InvalidBox(1)));
        assert!(BasicSemialgebraicSet::box_set(&[0.0, 1.0], &[1.0, 1.0]).is_ok());
    }

    #[test]
    fn membership_examples() {
        let s = BasicSemialgebraicSet::box_set(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!(s.membership(&[0.5, 0.5], 0.0).unwrap());
        assert!(!s.membership(&[1.5, 0.0], 0.0).unwrap());
        assert!(s.membership(&[1.0, 0.0], 0.0).unwrap());
        assert!(s.membership(&[1.0], 0.0).is_err());
    }

    #[test]
    fn equality_membership_uses_tolerance() {
        let s = BasicSemialgebraicSet::whole_space(2).with_equality(MultiPoly::var(2, 1)).unwrap();
        assert!(s.membership(&[3.0, 1e-10], 1e-9).unwrap());
        assert!(!s.membership(&[3.0, 1e-8], 1e-9).unwrap());
    }

    #[test]
    fn grid_examples() {
        let line = BasicSemialgebraicSet::box_set(&[0.0], &[1.0]).unwrap();
        let g = line.grid_sample(&[0.0], &[1.0], 3).unwrap();
        assert_eq!(g.points, vec![vec![0.0], vec![0.5], vec![1.0]]);

        let sq = BasicSemialgebraicSet::box_set(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(sq.grid_sample(&[0.0, 0.0], &[1.0, 1.0], 2).unwrap().points.len(), 4);

        // x2 - x1 >= 0 inside the unit box.
        let half = sq.clone().with_inequality(MultiPoly::affine(&[-1.0, 1.0], 0.0)).unwrap();
        let g = half.grid_sample(&[0.0, 0.0], &[1.0, 1.0], 3).unwrap();
        assert_eq!(g.points.len(), 6);
        assert!(g.points.iter().all(|p| p[1] >= p[0]));

        assert_eq!(sq.grid_sample(&[0.0, 0.0], &[1.0, 1.0], 1), Err(SetError::InvalidResolution(1)));
        assert_eq!(sq.grid_sample(&[2.0, 2.0], &[3.0, 3.0], 4), Err(SetError::EmptyGrid));
    }

    #[test]
    fn grid_points_are_members() {
        let disk = BasicSemialgebraicSet::whole_space(2)
            .with_archimedean_radius(Some(1.0));
        let disk = disk.clone().with_inequality(disk.ball_polynomial().unwrap()).unwrap();
        let g = disk.grid_sample(&[-1.0, -1.0], &[1.0, 1.0], 21).unwrap();
        for p in &g.points {
            assert!(disk.membership(p, GRID_MEMBERSHIP_TOL).unwrap());
        }
    }

    #[test]
    fn box_membership_matches_interval_test() {
        let lo = [-0.5, 0.25, -2.0];
        let hi = [1.5, 0.75, 0.0];
        let s = BasicSemialgebraicSet::box_set(&lo, &hi).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let direct = x.iter().zip(lo.iter().zip(&hi)).all(|(v, (l, h))| l <= v && v <= h);
            assert_eq!(s.membership(&x, 0.0).unwrap(), direct);
        }
    }

    #[test]
    fn ball_is_redundant_inside() {
        let s = BasicSemialgebraicSet::box_set(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        let with_ball = s.clone().with_inequality(s.ball_polynomial().unwrap()).unwrap();
        let g = s.grid_sample(&[-1.0, -1.0], &[1.0, 1.0], 15).unwrap();
        for p in &g.points {
            assert_eq!(s.membership(p, 0.0).unwrap(), with_ball.membership(p, 1e-12).unwrap());
        }
    }

    #[test]
    fn serde_round_trip_with_roles() {
        let s = BasicSemialgebraicSet::box_set(&[0.0, 0.0], &[2.0, 2.0])
            .unwrap()
            .with_equality(MultiPoly::affine(&[1.0, -1.0], 0.0))
            .unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"ineq\"") && json.contains("\"eq\""));
        let back: BasicSemialgebraicSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }
}
