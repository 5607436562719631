use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::field::VectorField;
use crate::poly::{monomial_basis, MultiPoly, PolyVec};
use crate::semialg::{BasicSemialgebraicSet, SetError, GRID_MEMBERSHIP_TOL};

use super::compile::facet_set;
use super::{matrix, CompositeTerm, InterpPoint, MonRegion, Sign, SideInfo, SideInfoError, SignRegion, SymGenerator};

/// Potential degree used for non-polynomial fields under Grad/Ham.
const DEFAULT_POTENTIAL_DEGREE: u32 = 6;

/// Grid estimate of how far a field is from satisfying one side-information
/// item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub tag: String,
    pub value: f64,
    pub resolution: usize,
    pub worst_point: Option<Vec<f64>>,
}

#[derive(Default)]
struct Worst {
    value: f64,
    point: Option<Vec<f64>>,
}

impl Worst {
    fn offer(&mut self, v: f64, x: &[f64]) {
        if v > self.value || (self.point.is_none() && v >= self.value) {
            self.value = v;
            self.point = Some(x.to_vec());
        }
    }
}

/// Grid over `set`, using its own bounds or else `omega`'s. An empty sample
/// yields no points.
fn sample(set: &BasicSemialgebraicSet, omega: &BasicSemialgebraicSet, res: usize) -> Result<Vec<Vec<f64>>, SideInfoError> {
    let (lo, hi) = set.bounds().or(omega.bounds()).ok_or(SetError::Unbounded)?;
    let (lo, hi) = (lo.to_vec(), hi.to_vec());
    match set.grid_sample(&lo, &hi, res) {
        Ok(g) => Ok(g.points),
        Err(SetError::EmptyGrid) => Ok(Vec::new()),
        Err(e) => Err(e.into()),
    }
}

fn omega_points(omega: &BasicSemialgebraicSet, res: usize, tag: &str) -> Result<Vec<Vec<f64>>, SideInfoError> {
    match omega.grid(res) {
        Ok(g) => Ok(g.points),
        Err(SetError::EmptyGrid) => Err(SideInfoError::EmptyGrid(tag.to_string())),
        Err(e) => Err(e.into()),
    }
}

/// Estimates the residual functional of `info` for `f` on a grid with
/// `resolution` points per axis over `omega` (or over each region's bounds).
///
/// Grad and Ham take the infimum over potentials of degree `deg f + 1` (6
/// for non-polynomial fields) by a least-squares fit of the potential's
/// gradient on the grid, then report the max deviation of that fit.
pub fn residual_functional(
    f: &dyn VectorField,
    info: &SideInfo,
    omega: &BasicSemialgebraicSet,
    resolution: usize,
) -> Result<ResidualReport, SideInfoError> {
    let n = f.dim();
    info.validate(n)?;
    let tag = info.tag();
    let w = match info {
        SideInfo::Interp { points } => interp(f, points),
        SideInfo::Sym { generators } => sym(f, generators, &omega_points(omega, resolution, tag)?),
        SideInfo::Pos { regions } => pos(f, regions, omega, resolution)?,
        SideInfo::Mon { regions } => mon(f, regions, omega, resolution)?,
        SideInfo::Inv { sets } => inv(f, sets, omega, resolution)?,
        SideInfo::Grad => potential_fit(f, &omega_points(omega, resolution, tag)?, false)?,
        SideInfo::Ham => potential_fit(f, &omega_points(omega, resolution, tag)?, true)?,
        SideInfo::Composite { terms, offset, region, sign } => {
            composite(f, terms, offset.as_ref(), &sample(region, omega, resolution)?, *sign)?
        }
    };
    Ok(ResidualReport { tag: tag.to_string(), value: w.value, resolution, worst_point: w.point })
}

fn interp(f: &dyn VectorField, points: &[InterpPoint]) -> Worst {
    let mut w = Worst::default();
    for p in points {
        let v = f.eval(&p.x);
        let d = v.iter().zip(&p.y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        w.offer(d, &p.x);
    }
    w
}

fn sym(f: &dyn VectorField, gens: &[SymGenerator], grid: &[Vec<f64>]) -> Worst {
    let n = f.dim();
    let mut w = Worst::default();
    for g in gens {
        let sigma = matrix(&g.sigma, n).expect("validated");
        let rho = matrix(&g.rho, n).expect("validated");
        for x in grid {
            let sx = &sigma * DVector::from_column_slice(x);
            let lhs = f.eval(sx.as_slice());
            let rhs = &rho * DVector::from_vec(f.eval(x));
            let d = lhs.iter().zip(rhs.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            w.offer(d, x);
        }
    }
    w
}

fn signed_regions<'a>(
    nonneg: &'a Option<BasicSemialgebraicSet>,
    nonpos: &'a Option<BasicSemialgebraicSet>,
) -> impl Iterator<Item = (&'a BasicSemialgebraicSet, f64)> {
    nonneg.iter().map(|s| (s, 1.0)).chain(nonpos.iter().map(|s| (s, -1.0)))
}

fn pos(f: &dyn VectorField, regions: &[SignRegion], omega: &BasicSemialgebraicSet, res: usize) -> Result<Worst, SideInfoError> {
    let mut w = Worst::default();
    for r in regions {
        for (set, s) in signed_regions(&r.nonneg, &r.nonpos) {
            for x in sample(set, omega, res)? {
                w.offer(-s * f.eval(&x)[r.component], &x);
            }
        }
    }
    Ok(w)
}

fn mon(f: &dyn VectorField, regions: &[MonRegion], omega: &BasicSemialgebraicSet, res: usize) -> Result<Worst, SideInfoError> {
    let mut w = Worst::default();
    for r in regions {
        for (set, s) in signed_regions(&r.nonneg, &r.nonpos) {
            for x in sample(set, omega, res)? {
                w.offer(-s * f.jacobian(&x)[(r.component, r.variable)], &x);
            }
        }
    }
    Ok(w)
}

fn inv(
    f: &dyn VectorField,
    sets: &[BasicSemialgebraicSet],
    omega: &BasicSemialgebraicSet,
    res: usize,
) -> Result<Worst, SideInfoError> {
    let mut w = Worst::default();
    for b in sets {
        for (k, h) in b.inequalities().iter().enumerate() {
            let grad: Vec<MultiPoly> = (0..b.n()).map(|i| h.differentiate(i)).collect::<Result<_, _>>()?;
            let Some(facet) = facet_set(b, k)? else { continue };
            let points: Vec<Vec<f64>> = if facet.eliminated.is_some() {
                let mut pts = Vec::new();
                let base = if facet.set.bounds().is_some() {
                    sample(&facet.set, omega, res)?
                } else {
                    let (lo, hi) = omega.bounds().ok_or(SetError::Unbounded)?;
                    let (mut lo, mut hi) = (lo.to_vec(), hi.to_vec());
                    let j = facet.eliminated.unwrap();
                    lo[j] = 0.0;
                    hi[j] = 0.0;
                    match facet.set.grid_sample(&lo, &hi, res) {
                        Ok(g) => g.points,
                        Err(SetError::EmptyGrid) => Vec::new(),
                        Err(e) => return Err(e.into()),
                    }
                };
                for y in base {
                    let x: Vec<f64> = facet.subs.iter().map(|s| s.evaluate(&y)).collect::<Result<_, _>>()?;
                    if b.membership(&x, GRID_MEMBERSHIP_TOL)? {
                        pts.push(x);
                    }
                }
                pts
            } else {
                sample(&facet.set, omega, res)?
            };
            for x in points {
                let v = f.eval(&x);
                let mut flux = 0.0;
                for (vi, gi) in v.iter().zip(&grad) {
                    flux += vi * gi.evaluate(&x)?;
                }
                w.offer(-flux, &x);
            }
        }
    }
    Ok(w)
}

/// Least-squares potential fit. For Grad the model is `f = -∇V`; for Ham,
/// `fᵢ = ∂H/∂x_{m+i}` and `f_{m+i} = -∂H/∂xᵢ` with `m = n/2`.
/// Index of the component of `∇` that feeds component `i`, with its sign.
fn coupling(i: usize, n: usize, hamiltonian: bool) -> (usize, f64) {
    let m = n / 2;
    if !hamiltonian {
        (i, -1.0)
    } else if i < m {
        (m + i, 1.0)
    } else {
        (i - m, -1.0)
    }
}

/// Exact-arithmetic counterpart of the Grad/Ham residual for a polynomial
/// field: the least-squares potential in coefficient space (`f = -∇V`, or the
/// canonical equations for `H`) and the largest coefficient mismatch.
pub fn recover_potential(field: &PolyVec, hamiltonian: bool) -> Result<(MultiPoly, f64), SideInfoError> {
    let n = field.n();
    if hamiltonian && n % 2 != 0 {
        return Err(SideInfoError::OddDimension(n));
    }
    let d = field.degree();
    let basis: Vec<_> = monomial_basis(n, d + 1).into_iter().filter(|m| m.degree() > 0).collect();
    let target = monomial_basis(n, d);
    let index: std::collections::HashMap<_, _> = target.iter().enumerate().map(|(k, m)| (m.clone(), k)).collect();
    let t = target.len();
    let mut a = DMatrix::zeros(n * t, basis.len());
    let mut y = DVector::zeros(n * t);
    for i in 0..n {
        let (j, s) = coupling(i, n, hamiltonian);
        for (r, c) in field.component(i).coefficient_vector(&target)?.into_iter().enumerate() {
            y[i * t + r] = c;
        }
        for (k, mono) in basis.iter().enumerate() {
            if let Some((e, dm)) = mono.derivative(j) {
                a[(i * t + index[&dm], k)] = s * e as f64;
            }
        }
    }
    let svd = a.clone().svd(true, true);
    let coef = svd.solve(&y, 1e-12).map_err(|e| SideInfoError::Contradictory(e.to_string()))?;
    let mismatch = (&a * &coef - &y).amax();
    Ok((MultiPoly::from_coefficients(n, &basis, coef.as_slice()), mismatch))
}

fn potential_fit(f: &dyn VectorField, grid: &[Vec<f64>], hamiltonian: bool) -> Result<Worst, SideInfoError> {
    let n = f.dim();
    let deg = f.as_poly().map_or(DEFAULT_POTENTIAL_DEGREE, |p| p.degree() + 1);
    let basis: Vec<_> = monomial_basis(n, deg).into_iter().filter(|m| m.degree() > 0).collect();
    // Row (x, i) of the design matrix holds the i-th field component predicted
    // by each basis potential.
    let rows = grid.len() * n;
    let mut a = DMatrix::zeros(rows, basis.len());
    let mut y = DVector::zeros(rows);
    for (p, x) in grid.iter().enumerate() {
        let v = f.eval(x);
        for i in 0..n {
            let (j, s) = coupling(i, n, hamiltonian);
            let r = p * n + i;
            y[r] = v[i];
            for (k, mono) in basis.iter().enumerate() {
                if let Some((e, d)) = mono.derivative(j) {
                    a[(r, k)] = s * e as f64 * d.evaluate(x);
                }
            }
        }
    }
    let scale: Vec<f64> = (0..basis.len()).map(|k| a.column(k).norm().max(1e-300)).collect();
    for (k, &s) in scale.iter().enumerate() {
        a.column_mut(k).scale_mut(1.0 / s);
    }
    let svd = a.clone().svd(true, true);
    let coef = svd.solve(&y, 1e-12).map_err(|e| SideInfoError::Contradictory(e.to_string()))?;
    let fit = &a * coef;
    let mut w = Worst::default();
    for (p, x) in grid.iter().enumerate() {
        let d = (0..n).map(|i| (fit[p * n + i] - y[p * n + i]).abs()).fold(0.0, f64::max);
        w.offer(d, x);
    }
    Ok(w)
}

fn composite(
    f: &dyn VectorField,
    terms: &[CompositeTerm],
    offset: Option<&MultiPoly>,
    points: &[Vec<f64>],
    sign: Sign,
) -> Result<Worst, SideInfoError> {
    let mut w = Worst::default();
    for x in points {
        let v = f.eval(x);
        let jac = if terms.iter().any(|t| t.derivative.is_some()) { Some(f.jacobian(x)) } else { None };
        let mut q = offset.map_or(Ok(0.0), |o| o.evaluate(x))?;
        for t in terms {
            let base = match t.derivative {
                Some(j) => jac.as_ref().unwrap()[(t.component, j)],
                None => v[t.component],
            };
            q += t.weight.evaluate(x)? * base;
        }
        w.offer(-sign.factor() * q, x);
    }
    Ok(w)
}
