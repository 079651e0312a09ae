//! Adam, Nesterov momentum and plain gradient descent with projection onto the box.
//!
//! A step that lands outside the domain is halved (up to 30 times); the optimizer
//! state is left as is.

use nalgebra::DVector;

use super::slsqp::MAX_HALVINGS;
use super::{rng_for, Driver, Method, MethodConfig, OptimOutcome, Problem, Termination};

pub(crate) fn run<P: Problem + ?Sized>(
    drv: &mut Driver<'_, P>,
    cfg: &MethodConfig,
    mut x: DVector<f64>,
    f0: f64,
    g0: DVector<f64>,
) -> OptimOutcome {
    let n = x.len();
    let mut rng = rng_for(cfg);
    let mut m = DVector::zeros(n);
    let mut v = DVector::zeros(n);
    let mut velocity = DVector::<f64>::zeros(n);
    // exact value and gradient at x, when known
    let mut exact = Some((f0, g0));
    let mut sampled: Option<DVector<f64>> = None;

    for it in 0..cfg.max_iter {
        if let Some((f, g)) = &exact {
            if drv.projected_gradient_norm(&x, g) <= cfg.gtol {
                let f = *f;
                return drv.outcome(x, f, it, Termination::GradientTol);
            }
        }
        let grad = match cfg.method {
            Method::Nesterov => {
                let ahead = drv.project(&(&x + &velocity * cfg.momentum));
                match drv.eval_sampled(&ahead, cfg.batch_size, &mut rng) {
                    Some((_, g)) => g,
                    None => match current_gradient(drv, cfg, &x, &exact, &mut sampled, &mut rng) {
                        Some(g) => g,
                        None => return finish(drv, x, it, Termination::DomainFailure),
                    },
                }
            }
            _ => match current_gradient(drv, cfg, &x, &exact, &mut sampled, &mut rng) {
                Some(g) => g,
                None => return finish(drv, x, it, Termination::DomainFailure),
            },
        };

        let step = match cfg.method {
            Method::Adam => {
                m = &m * cfg.beta1 + &grad * (1.0 - cfg.beta1);
                v = &v * cfg.beta2 + grad.component_mul(&grad) * (1.0 - cfg.beta2);
                let t = (it + 1) as i32;
                let mhat = &m / (1.0 - cfg.beta1.powi(t));
                let vhat = &v / (1.0 - cfg.beta2.powi(t));
                DVector::from_fn(n, |i, _| -cfg.learning_rate * mhat[i] / (vhat[i].sqrt() + cfg.epsilon))
            }
            Method::Nesterov => {
                velocity = &velocity * cfg.momentum - &grad * cfg.learning_rate;
                velocity.clone()
            }
            _ => -&grad * cfg.learning_rate,
        };

        let mut moved = false;
        let mut scale = 1.0;
        for _ in 0..=MAX_HALVINGS {
            let xt = drv.project(&(&x + &step * scale));
            let next = drv.eval_sampled(&xt, cfg.batch_size, &mut rng);
            if let Some((f, g)) = next {
                if cfg.batch_size.is_none() {
                    exact = Some((f, g));
                    sampled = None;
                } else {
                    exact = None;
                    sampled = Some(g);
                }
                x = xt;
                moved = true;
                break;
            }
            scale *= 0.5;
        }
        if !moved {
            return finish(drv, x, it, Termination::DomainFailure);
        }
    }
    finish(drv, x, cfg.max_iter, Termination::MaxIter)
}

fn current_gradient<P: Problem + ?Sized>(
    drv: &mut Driver<'_, P>,
    cfg: &MethodConfig,
    x: &DVector<f64>,
    exact: &Option<(f64, DVector<f64>)>,
    sampled: &mut Option<DVector<f64>>,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Option<DVector<f64>> {
    if let Some((_, g)) = exact {
        return Some(g.clone());
    }
    if let Some(g) = sampled.take() {
        return Some(g);
    }
    drv.eval_sampled(x, cfg.batch_size, rng).map(|(_, g)| g)
}

/// Final outcome with the exact objective at `x`.
fn finish<P: Problem + ?Sized>(
    drv: &mut Driver<'_, P>,
    x: DVector<f64>,
    iterations: usize,
    termination: Termination,
) -> OptimOutcome {
    match drv.eval(&x) {
        Some((f, _)) => drv.outcome(x, f, iterations, termination),
        None => drv.outcome(x, f64::NAN, iterations, Termination::DomainFailure),
    }
}
