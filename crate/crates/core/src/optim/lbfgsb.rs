//! Projected limited-memory BFGS.
//!
//! Variables sitting on a bound with the gradient pushing outward are held fixed for
//! the iteration; the two-loop recursion acts on the rest and the step is projected
//! back into the box during the line search.

use std::collections::VecDeque;

use nalgebra::DVector;

use super::slsqp::{backtrack, Search};
use super::{Driver, MethodConfig, OptimOutcome, Problem, Termination};

fn direction(
    g: &DVector<f64>,
    free: &[bool],
    memory: &VecDeque<(DVector<f64>, DVector<f64>, f64)>,
) -> DVector<f64> {
    let mask = |v: &DVector<f64>| DVector::from_fn(v.len(), |i, _| if free[i] { v[i] } else { 0.0 });
    let mut q = mask(g);
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * s.dot(&q);
        q -= y * a;
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        q *= s.dot(y) / y.dot(y);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&q);
        q += s * (a - b);
    }
    -mask(&q)
}

pub(crate) fn run<P: Problem + ?Sized>(
    drv: &mut Driver<'_, P>,
    cfg: &MethodConfig,
    mut x: DVector<f64>,
    mut f: f64,
    mut g: DVector<f64>,
) -> OptimOutcome {
    let n = x.len();
    let mut memory: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();
    for it in 0..cfg.max_iter {
        if drv.projected_gradient_norm(&x, &g) <= cfg.gtol {
            return drv.outcome(x, f, it, Termination::GradientTol);
        }
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= drv.lower[i] && g[i] > 0.0) || (x[i] >= drv.upper[i] && g[i] < 0.0)))
            .collect();
        let mut d = direction(&g, &free, &memory);
        if g.dot(&d) >= 0.0 {
            memory.clear();
            d = direction(&g, &free, &memory);
        }
        let first = if memory.is_empty() {
            (1.0 / d.amax()).min(1.0)
        } else {
            1.0
        };
        let (xt, ft, gt) = match backtrack(drv, &x, f, &g, &d, first) {
            Search::Accepted(xt, ft, gt) => (xt, ft, gt),
            Search::NoDecrease if !memory.is_empty() => {
                memory.clear();
                continue;
            }
            Search::NoDecrease => return drv.outcome(x, f, it, Termination::FunctionTol),
            Search::Domain => return drv.outcome(x, f, it, Termination::DomainFailure),
        };
        let s = &xt - &x;
        let y = &gt - &g;
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
        let sy = s.dot(&y);
        if sy > 1e-12 * y.dot(&y) && sy > 0.0 {
            if memory.len() == cfg.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
    }
    drv.outcome(x, f, cfg.max_iter, Termination::MaxIter)
}
