//! Sequential quadratic programming for box constraints.
//!
//! Each iteration solves `min gᵀd + ½dᵀBd` over `l − x ≤ d ≤ u − x`, `‖d‖∞ ≤ r` with a
//! damped BFGS matrix `B`, then backtracks along `d` until the Armijo condition holds.
//! The radius `r` doubles after a full step that reached it and shrinks to the length
//! of any step that needed backtracking.

use nalgebra::{DMatrix, DVector};

use super::{boxqp, Driver, MethodConfig, OptimOutcome, Problem, Termination};

pub(crate) const ARMIJO: f64 = 1e-4;
pub(crate) const MAX_HALVINGS: usize = 30;
const INITIAL_RADIUS: f64 = 1.0;

pub(crate) enum Search {
    Accepted(DVector<f64>, f64, DVector<f64>),
    /// Some trial points were evaluable but none decreased enough.
    NoDecrease,
    /// Every trial point was outside the domain.
    Domain,
}

/// Backtracking from `x` along `d`; trial points are projected into the bounds.
pub(crate) fn backtrack<P: Problem + ?Sized>(
    drv: &mut Driver<'_, P>,
    x: &DVector<f64>,
    f: f64,
    g: &DVector<f64>,
    d: &DVector<f64>,
    first_step: f64,
) -> Search {
    let mut alpha = first_step;
    let mut any_finite = false;
    for _ in 0..=MAX_HALVINGS {
        let xt = drv.project(&(x + d * alpha));
        if let Some((ft, gt)) = drv.eval(&xt) {
            any_finite = true;
            if ft <= f + ARMIJO * g.dot(&(&xt - x)) {
                return Search::Accepted(xt, ft, gt);
            }
        }
        alpha *= 0.5;
    }
    if any_finite {
        Search::NoDecrease
    } else {
        Search::Domain
    }
}

fn damped_bfgs(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) {
    let bs = &*b * s;
    let sbs = s.dot(&bs);
    if sbs <= 0.0 || !sbs.is_finite() {
        return;
    }
    let sy = s.dot(y);
    // Powell damping keeps B positive definite
    let r = if sy >= 0.2 * sbs {
        y.clone()
    } else {
        let t = 0.8 * sbs / (sbs - sy);
        y * t + &bs * (1.0 - t)
    };
    let sr = s.dot(&r);
    if sr <= 0.0 {
        return;
    }
    *b -= &bs * bs.transpose() / sbs;
    *b += &r * r.transpose() / sr;
}

pub(crate) fn run<P: Problem + ?Sized>(
    drv: &mut Driver<'_, P>,
    cfg: &MethodConfig,
    mut x: DVector<f64>,
    mut f: f64,
    mut g: DVector<f64>,
) -> OptimOutcome {
    let n = x.len();
    let mut b = DMatrix::identity(n, n);
    let mut fresh = true;
    let mut radius = INITIAL_RADIUS;
    for it in 0..cfg.max_iter {
        if drv.projected_gradient_norm(&x, &g) <= cfg.gtol {
            return drv.outcome(x, f, it, Termination::GradientTol);
        }
        let lo = (&drv.lower - &x).map(|v| v.max(-radius));
        let hi = (&drv.upper - &x).map(|v| v.min(radius));
        let mut d = boxqp::solve(&b, &g, &lo, &hi);
        if g.dot(&d) >= 0.0 {
            b = DMatrix::identity(n, n);
            fresh = true;
            d = boxqp::solve(&b, &g, &lo, &hi);
        }
        let (xt, ft, gt) = match backtrack(drv, &x, f, &g, &d, 1.0) {
            Search::Accepted(xt, ft, gt) => (xt, ft, gt),
            Search::NoDecrease if !fresh => {
                b = DMatrix::identity(n, n);
                fresh = true;
                continue;
            }
            Search::NoDecrease => return drv.outcome(x, f, it, Termination::FunctionTol),
            Search::Domain => return drv.outcome(x, f, it, Termination::DomainFailure),
        };
        let s = &xt - &x;
        let y = &gt - &g;
        let (taken, proposed) = (s.amax(), d.amax());
        if taken >= 0.999 * proposed && proposed >= 0.999 * radius {
            radius *= 2.0;
        } else if taken < 0.999 * proposed {
            radius = taken.max(1e-10);
        }
        let decrease = f - ft;
        x = xt;
        f = ft;
        g = gt;
        if decrease <= cfg.ftol * f.abs().max(1.0) {
            let term = if drv.projected_gradient_norm(&x, &g) <= cfg.gtol {
                Termination::GradientTol
            } else {
                Termination::FunctionTol
            };
            return drv.outcome(x, f, it + 1, term);
        }
        if fresh {
            let sy = s.dot(&y);
            if sy > 0.0 {
                b = DMatrix::identity(n, n) * (y.dot(&y) / sy);
            }
            fresh = false;
        }
        damped_bfgs(&mut b, &s, &y);
    }
    drv.outcome(x, f, cfg.max_iter, Termination::MaxIter)
}
