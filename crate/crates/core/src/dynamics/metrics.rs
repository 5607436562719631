use rayon::prelude::*;

use crate::field::VectorField;
use crate::semialg::BasicSemialgebraicSet;

use super::{integrate, DynamicsError, IntegrateOptions};

/// Factor applied to grid Lipschitz estimates before they enter
/// [`gronwall_bound`].
pub const LIPSCHITZ_SAFETY: f64 = 1.05;

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `max ‖f(x) - g(x)‖` over the grid of `omega`.
pub fn sup_distance(
    f: &(impl VectorField + ?Sized),
    g: &(impl VectorField + ?Sized),
    omega: &BasicSemialgebraicSet,
    resolution: usize,
) -> Result<f64, DynamicsError> {
    let grid = omega.grid(resolution)?;
    Ok(grid.points.iter().map(|x| norm_diff(&f.eval(x), &g.eval(x))).fold(0.0, f64::max))
}

/// Grid estimate of the trajectory distance on `[0, t_end]`: for each initial
/// state on the grid, both trajectories are integrated until either leaves
/// `omega`, and the largest state or derivative gap along the common prefix
/// is taken. Initial states run in parallel; the reduction follows grid order.
pub fn trajectory_distance<F, G>(
    f: &F,
    g: &G,
    omega: &BasicSemialgebraicSet,
    t_end: f64,
    resolution: usize,
    step: f64,
) -> Result<f64, DynamicsError>
where
    F: VectorField + ?Sized,
    G: VectorField + ?Sized,
{
    let grid = omega.grid(resolution)?;
    let opts = IntegrateOptions { step, domain: Some(omega.clone()), allow_outside: false, stop_on_exit: true };
    let gaps: Vec<Result<Option<f64>, DynamicsError>> = grid
        .points
        .par_iter()
        .map(|x0| {
            let a = integrate(f, x0, t_end, &opts)?;
            let b = integrate(g, x0, t_end, &opts)?;
            let len = a.admissible_len().min(b.admissible_len());
            if len == 0 {
                return Ok(None);
            }
            let mut worst = 0.0f64;
            for k in 0..len {
                let (xa, xb) = (&a.states[k], &b.states[k]);
                worst = worst.max(norm_diff(xa, xb)).max(norm_diff(&f.eval(xa), &g.eval(xb)));
            }
            Ok(Some(worst))
        })
        .collect();
    let mut best: Option<f64> = None;
    for r in gaps {
        if let Some(v) = r? {
            best = Some(best.map_or(v, |b| b.max(v)));
        }
    }
    // No admissible initial state: the supremum over an empty set is taken as 0.
    Ok(best.unwrap_or(0.0))
}

/// Largest spectral norm of the Jacobian over the grid.
pub fn lipschitz_estimate(
    f: &(impl VectorField + ?Sized),
    omega: &BasicSemialgebraicSet,
    resolution: usize,
) -> Result<f64, DynamicsError> {
    let grid = omega.grid(resolution)?;
    let mut best = 0.0f64;
    for x in &grid.points {
        let j = f.jacobian(x);
        let s = j.singular_values().max();
        best = best.max(s);
    }
    Ok(best)
}

/// `max{T e^{LT}, 1 + L T e^{LT}} · s`.
pub fn gronwall_bound(t: f64, l: f64, s: f64) -> f64 {
    let e = (l * t).exp();
    (t * e).max(1.0 + l * t * e) * s
}
