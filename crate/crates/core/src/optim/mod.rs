//! Bound-constrained minimization of SEM objectives.
//!
//! [`minimize`] works on any [`Problem`]; [`Optimizer`] wraps a [`Model`] and keeps
//! the current estimate between calls so successive fits chain (for example ULS to
//! get close, then MLW).

mod boxqp;
mod first_order;
mod lbfgsb;
mod slsqp;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{covariance_of, SampleCovariance};
use crate::error::{Error, Result};
use crate::model::{Model, ParamSystem};
use crate::objective::{self, ObjectiveKind};

/// Smallest variance used when the starting point has to be repaired.
pub const VARIANCE_FLOOR: f64 = 1e-4;

/// A smooth function with box bounds.
pub trait Problem {
    fn dim(&self) -> usize;
    fn lower(&self) -> DVector<f64>;
    fn upper(&self) -> DVector<f64>;

    /// Value and gradient. `Err` marks a point outside the domain.
    fn value_grad(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)>;

    /// Estimate from a random subsample of size `batch`. Problems without a notion of
    /// samples return the exact value.
    fn sampled_value_grad(
        &self,
        x: &DVector<f64>,
        _batch: usize,
        _rng: &mut ChaCha8Rng,
    ) -> Result<(f64, DVector<f64>)> {
        self.value_grad(x)
    }

    /// A nearby point to try when `x` is outside the domain.
    fn repair(&self, _x: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "SLSQP")]
    Slsqp,
    #[serde(rename = "L-BFGS-B", alias = "LBFGSB")]
    LBfgsB,
    Adam,
    Nesterov,
    #[serde(rename = "SGD")]
    Sgd,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Slsqp,
        Method::LBfgsB,
        Method::Adam,
        Method::Nesterov,
        Method::Sgd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Slsqp => "SLSQP",
            Method::LBfgsB => "L-BFGS-B",
            Method::Adam => "Adam",
            Method::Nesterov => "Nesterov",
            Method::Sgd => "SGD",
        }
    }

    pub fn is_line_search(self) -> bool {
        matches!(self, Method::Slsqp | Method::LBfgsB)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "").as_str() {
            "SLSQP" => Ok(Method::Slsqp),
            "LBFGSB" => Ok(Method::LBfgsB),
            "ADAM" => Ok(Method::Adam),
            "NESTEROV" => Ok(Method::Nesterov),
            "SGD" => Ok(Method::Sgd),
            _ => Err(Error::UnknownName {
                what: "optimization method",
                name: s.to_string(),
            }),
        }
    }
}

/// Method choice plus hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub method: Method,
    pub max_iter: usize,
    /// Stop when the projected gradient's largest component is below this.
    pub gtol: f64,
    /// Stop when an accepted step changes the value by less than `ftol·max(1, |f|)`.
    /// Line-search methods only.
    pub ftol: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub momentum: f64,
    /// L-BFGS memory.
    pub memory: usize,
    /// Minibatch size for the first-order methods; `None` uses all data.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl MethodConfig {
    pub fn new(method: Method) -> Self {
        let line_search = method.is_line_search();
        MethodConfig {
            method,
            max_iter: if line_search { 2000 } else { 10_000 },
            gtol: 1e-6,
            ftol: 1e-12,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            momentum: 0.9,
            memory: 10,
            batch_size: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Unsupported(format!("invalid optimizer setting: {what}")));
        if self.max_iter < 1 {
            return bad("max_iter must be at least 1");
        }
        if !(self.gtol > 0.0 && self.ftol > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.memory < 1 {
            return bad("memory must be at least 1");
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be positive");
        }
        Ok(())
    }
}

impl Default for MethodConfig {
    fn default() -> Self {
        MethodConfig::new(Method::Slsqp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    GradientTol,
    FunctionTol,
    MaxIter,
    DomainFailure,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::GradientTol => "gradient-tol",
            Termination::FunctionTol => "function-tol",
            Termination::MaxIter => "max-iter",
            Termination::DomainFailure => "domain-failure",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimOutcome {
    pub theta: DVector<f64>,
    /// Objective at `theta`; NaN if `theta` is outside the domain.
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub termination: Termination,
}

/// Evaluation counter and bound handling shared by all methods.
pub(crate) struct Driver<'a, P: Problem + ?Sized> {
    pub problem: &'a P,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub evaluations: usize,
}

impl<'a, P: Problem + ?Sized> Driver<'a, P> {
    fn new(problem: &'a P) -> Self {
        Driver {
            lower: problem.lower(),
            upper: problem.upper(),
            problem,
            evaluations: 0,
        }
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |i, _| x[i].clamp(self.lower[i], self.upper[i]))
    }

    /// Value and gradient, with non-finite results treated as outside the domain.
    pub fn eval(&mut self, x: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        self.evaluations += 1;
        match self.problem.value_grad(x) {
            Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => Some((f, g)),
            _ => None,
        }
    }

    pub fn eval_sampled(
        &mut self,
        x: &DVector<f64>,
        batch: Option<usize>,
        rng: &mut ChaCha8Rng,
    ) -> Option<(f64, DVector<f64>)> {
        let Some(b) = batch else {
            return self.eval(x);
        };
        self.evaluations += 1;
        match self.problem.sampled_value_grad(x, b, rng) {
            Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => Some((f, g)),
            _ => None,
        }
    }

    /// Largest component of `P(x − g) − x`.
    pub fn projected_gradient_norm(&self, x: &DVector<f64>, g: &DVector<f64>) -> f64 {
        (0..x.len())
            .map(|i| ((x[i] - g[i]).clamp(self.lower[i], self.upper[i]) - x[i]).abs())
            .fold(0.0, f64::max)
    }

    pub fn outcome(
        &self,
        theta: DVector<f64>,
        value: f64,
        iterations: usize,
        termination: Termination,
    ) -> OptimOutcome {
        OptimOutcome {
            theta,
            value,
            iterations,
            evaluations: self.evaluations,
            converged: matches!(
                termination,
                Termination::GradientTol | Termination::FunctionTol
            ),
            termination,
        }
    }
}

/// Minimizes `problem` from `x0` (projected into the bounds first). If the start is
/// outside the domain, [`Problem::repair`] gets one chance to supply a usable point.
pub fn minimize<P: Problem + ?Sized>(
    problem: &P,
    cfg: &MethodConfig,
    x0: &DVector<f64>,
) -> Result<OptimOutcome> {
    cfg.validate()?;
    if x0.len() != problem.dim() {
        return Err(Error::Dimension {
            expected: problem.dim(),
            got: x0.len(),
        });
    }
    let mut drv = Driver::new(problem);
    let mut x = drv.project(x0);
    let mut start = drv.eval(&x);
    if start.is_none() {
        if let Some(fixed) = problem.repair(&x) {
            x = drv.project(&fixed);
            start = drv.eval(&x);
        }
    }
    let Some((f, g)) = start else {
        return Ok(drv.outcome(x, f64::NAN, 0, Termination::DomainFailure));
    };
    if x.is_empty() {
        return Ok(drv.outcome(x, f, 0, Termination::GradientTol));
    }
    Ok(match cfg.method {
        Method::Slsqp => slsqp::run(&mut drv, cfg, x, f, g),
        Method::LBfgsB => lbfgsb::run(&mut drv, cfg, x, f, g),
        Method::Adam | Method::Nesterov | Method::Sgd => first_order::run(&mut drv, cfg, x, f, g),
    })
}

/// A SEM objective as a [`Problem`].
pub struct SemProblem<'a> {
    pub params: &'a ParamSystem,
    pub sample: &'a SampleCovariance,
    pub objective: ObjectiveKind,
}

impl<'a> SemProblem<'a> {
    pub fn new(params: &'a ParamSystem, sample: &'a SampleCovariance, objective: ObjectiveKind) -> Self {
        SemProblem {
            params,
            sample,
            objective,
        }
    }
}

impl Problem for SemProblem<'_> {
    fn dim(&self) -> usize {
        self.params.n_params()
    }

    fn lower(&self) -> DVector<f64> {
        self.params.lower()
    }

    fn upper(&self) -> DVector<f64> {
        self.params.upper()
    }

    fn value_grad(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let e = objective::evaluate(self.objective, self.params, x, self.sample)?;
        Ok((e.value, e.gradient))
    }

    fn sampled_value_grad(
        &self,
        x: &DVector<f64>,
        batch: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, DVector<f64>)> {
        let Some(rows) = self.sample.centered_rows() else {
            return self.value_grad(x);
        };
        let n = rows.nrows();
        if batch >= n || batch < 2 {
            return self.value_grad(x);
        }
        let picked = sample(rng, n, batch);
        let sub = DMatrix::from_fn(batch, rows.ncols(), |r, c| rows[(picked.index(r), c)]);
        let cov = covariance_of(&crate::dataset::center(sub));
        let s = SampleCovariance::from_covariance(self.sample.names.clone(), cov, batch)?;
        let e = objective::evaluate(self.objective, self.params, x, &s)?;
        Ok((e.value, e.gradient))
    }

    fn repair(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let mut y = x.clone();
        for (i, p) in self.params.params.iter().enumerate() {
            if p.is_variance() {
                y[i] = y[i].max(VARIANCE_FLOOR);
            }
        }
        Some(y)
    }
}

/// One completed optimization inside an [`Optimizer`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitRecord {
    pub objective: ObjectiveKind,
    pub method: Method,
    pub outcome: OptimOutcome,
}

/// A model together with its current estimate. Each call to
/// [`Optimizer::optimize`] starts from where the previous one stopped.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub model: Model,
    pub theta: DVector<f64>,
    pub history: Vec<FitRecord>,
}

impl Optimizer {
    pub fn new(model: Model) -> Self {
        let theta = model.start();
        Optimizer {
            model,
            theta,
            history: Vec::new(),
        }
    }

    /// Runs one optimization and returns the objective value reached.
    pub fn optimize(&mut self, objective: ObjectiveKind, cfg: &MethodConfig) -> Result<f64> {
        Ok(self.optimize_outcome(objective, cfg)?.value)
    }

    pub fn optimize_outcome(&mut self, objective: ObjectiveKind, cfg: &MethodConfig) -> Result<OptimOutcome> {
        if objective == ObjectiveKind::Gls {
            self.model.sample.inverse()?;
        }
        let problem = SemProblem::new(&self.model.params, &self.model.sample, objective);
        let outcome = minimize(&problem, cfg, &self.theta)?;
        self.theta = outcome.theta.clone();
        self.history.push(FitRecord {
            objective,
            method: cfg.method,
            outcome: outcome.clone(),
        });
        Ok(outcome)
    }

    /// Objective and method of the latest optimization.
    pub fn last(&self) -> Option<&FitRecord> {
        self.history.last()
    }

    pub fn estimates(&self) -> std::collections::BTreeMap<String, f64> {
        self.model.params.named(&self.theta)
    }
}

/// Seeded generator used by the stochastic methods.
pub(crate) fn rng_for(cfg: &MethodConfig) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(cfg.seed)
}
