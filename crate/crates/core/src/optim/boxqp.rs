//! Dense convex quadratic program with simple bounds, solved by a primal
//! active-set method:
//!
//! ```text
//! minimize    gᵀd + ½ dᵀHd
//! subject to  lo ≤ d ≤ hi        (lo ≤ 0 ≤ hi)
//! ```

use nalgebra::{Cholesky, DMatrix, DVector};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum State {
    Free,
    Lower,
    Upper,
}

fn solve_spd(h: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    if let Some(ch) = Cholesky::new(h.clone()) {
        return ch.solve(rhs);
    }
    let n = h.nrows();
    let scale = h.diagonal().amax().max(1.0);
    let mut shift = 1e-10 * scale;
    loop {
        let shifted = h + DMatrix::identity(n, n) * shift;
        if let Some(ch) = Cholesky::new(shifted) {
            return ch.solve(rhs);
        }
        shift *= 10.0;
    }
}

/// Minimizer of the bounded quadratic; `h` must be symmetric positive definite.
pub fn solve(h: &DMatrix<f64>, g: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    let n = g.len();
    let mut d = DVector::zeros(n);
    let mut state: Vec<State> = (0..n)
        .map(|i| {
            if lo[i] >= 0.0 && g[i] > 0.0 {
                State::Lower
            } else if hi[i] <= 0.0 && g[i] < 0.0 {
                State::Upper
            } else {
                State::Free
            }
        })
        .collect();

    for _ in 0..(10 * n + 20) {
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == State::Free).collect();
        if !free.is_empty() {
            let grad = g + h * &d;
            let hf = DMatrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
            let rhs = DVector::from_iterator(free.len(), free.iter().map(|&i| -grad[i]));
            let p = solve_spd(&hf, &rhs);
            if p.amax() > 1e-300 {
                let mut alpha = 1.0;
                let mut blocking = None;
                for (k, &i) in free.iter().enumerate() {
                    if p[k] < 0.0 && lo[i].is_finite() {
                        let t = (lo[i] - d[i]) / p[k];
                        if t < alpha {
                            alpha = t.max(0.0);
                            blocking = Some((i, State::Lower));
                        }
                    } else if p[k] > 0.0 && hi[i].is_finite() {
                        let t = (hi[i] - d[i]) / p[k];
                        if t < alpha {
                            alpha = t.max(0.0);
                            blocking = Some((i, State::Upper));
                        }
                    }
                }
                for (k, &i) in free.iter().enumerate() {
                    d[i] += alpha * p[k];
                }
                if let Some((i, s)) = blocking {
                    state[i] = s;
                    d[i] = if s == State::Lower { lo[i] } else { hi[i] };
                    continue;
                }
            }
        }
        // subspace minimum reached: release the bound with the worst multiplier
        let grad = g + h * &d;
        let mut worst = None;
        let mut worst_val = 0.0;
        for i in 0..n {
            let violation = match state[i] {
                State::Lower if grad[i] < 0.0 => -grad[i],
                State::Upper if grad[i] > 0.0 => grad[i],
                _ => 0.0,
            };
            if violation > worst_val {
                worst_val = violation;
                worst = Some(i);
            }
        }
        match worst {
            Some(i) => state[i] = State::Free,
            None => break,
        }
    }
    for i in 0..n {
        d[i] = d[i].clamp(lo[i], hi[i]);
    }
    d
}
