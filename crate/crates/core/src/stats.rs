//! Standard errors, z-tests and fit indices for a fitted model.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::dataset::SampleCovariance;
use crate::error::{Error, Result};
use crate::model::{Implied, Model, ParamSystem};
use crate::objective::{self, ObjectiveKind};
use crate::optim::{minimize, MethodConfig, Optimizer, SemProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FimMode {
    #[default]
    Expected,
    Observed,
}

impl fmt::Display for FimMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FimMode::Expected => "expected",
            FimMode::Observed => "observed",
        })
    }
}

impl FromStr for FimMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "expected" => Ok(FimMode::Expected),
            "observed" => Ok(FimMode::Observed),
            _ => Err(Error::UnknownName {
                what: "information mode",
                name: s.to_string(),
            }),
        }
    }
}

/// Fisher information of the Wishart likelihood at θ.
///
/// Expected: `(n/2) tr[Σ⁻¹ ∂ᵢΣ Σ⁻¹ ∂ⱼΣ]`. Observed: `(n/2)` times the Hessian of the
/// Wishart discrepancy.
pub fn fisher_information(
    ps: &ParamSystem,
    theta: &DVector<f64>,
    sample: &SampleCovariance,
    mode: FimMode,
) -> Result<DMatrix<f64>> {
    let half_n = sample.n as f64 / 2.0;
    match mode {
        FimMode::Observed => {
            let e = objective::evaluate_with_hessian(ObjectiveKind::Mlw, ps, theta, sample)?;
            let h = e.hessian.expect("hessian requested");
            Ok(h * half_n)
        }
        FimMode::Expected => {
            let imp = Implied::new(ps, theta)?;
            let a = Cholesky::new(imp.sigma.clone())
                .ok_or(Error::NotPositiveDefinite)?
                .inverse();
            let x: Vec<DMatrix<f64>> = imp.sigma_derivatives(ps).iter().map(|d| &a * d).collect();
            let m = x.len();
            let mut fim = DMatrix::zeros(m, m);
            for i in 0..m {
                for j in i..m {
                    let v = half_n * x[i].component_mul(&x[j].transpose()).sum();
                    fim[(i, j)] = v;
                    fim[(j, i)] = v;
                }
            }
            Ok(fim)
        }
    }
}

/// Inverse (or pseudo-inverse) of an information matrix.
#[derive(Debug, Clone)]
pub struct FimInverse {
    pub covariance: DMatrix<f64>,
    /// True when the matrix was singular and a pseudo-inverse was used.
    pub pseudo: bool,
    /// Parameters involved in the null space of a singular matrix.
    pub unidentified: Vec<usize>,
}

/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-10;

pub fn invert_fim(fim: &DMatrix<f64>) -> FimInverse {
    let m = fim.nrows();
    if m == 0 {
        return FimInverse {
            covariance: DMatrix::zeros(0, 0),
            pseudo: false,
            unidentified: Vec::new(),
        };
    }
    let eig = SymmetricEigen::new(fim.clone());
    let largest = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = RANK_TOL * largest.max(f64::MIN_POSITIVE);
    let null: Vec<usize> = (0..m).filter(|&k| eig.eigenvalues[k] <= tol).collect();
    if null.is_empty() {
        if let Some(ch) = Cholesky::new(fim.clone()) {
            return FimInverse {
                covariance: ch.inverse(),
                pseudo: false,
                unidentified: Vec::new(),
            };
        }
    }
    let mut cov = DMatrix::zeros(m, m);
    for k in 0..m {
        if null.contains(&k) {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        cov += v * v.transpose() / eig.eigenvalues[k];
    }
    let unidentified = (0..m)
        .filter(|&i| null.iter().any(|&k| eig.eigenvectors[(i, k)].abs() > 1e-6))
        .collect();
    FimInverse {
        covariance: cov,
        pseudo: true,
        unidentified,
    }
}

/// Two-sided p-value of a standard normal test statistic.
pub fn p_value(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// Per-parameter standard errors and z-tests. Undefined entries are NaN.
#[derive(Debug, Clone, Serialize)]
pub struct Inference {
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    pub se: Vec<f64>,
    pub z: Vec<f64>,
    pub pvalues: Vec<f64>,
    pub fim_mode: FimMode,
    pub pseudo_inverse: bool,
    pub unidentified: Vec<String>,
}

/// `se = sqrt(diag(FIM⁻¹))`, `z = θ̂/se`, two-sided normal p-values.
pub fn p_values(
    names: Vec<String>,
    theta: &DVector<f64>,
    fim: &DMatrix<f64>,
    mode: FimMode,
) -> Inference {
    let inv = invert_fim(fim);
    let m = theta.len();
    let mut se = vec![f64::NAN; m];
    let mut z = vec![f64::NAN; m];
    let mut pvalues = vec![f64::NAN; m];
    for i in 0..m {
        let var = inv.covariance[(i, i)];
        if inv.unidentified.contains(&i) || !(var > 0.0) || !var.is_finite() {
            continue;
        }
        se[i] = var.sqrt();
        z[i] = theta[i] / se[i];
        pvalues[i] = p_value(z[i]);
    }
    let unidentified = inv.unidentified.iter().map(|&i| names[i].clone()).collect();
    Inference {
        names,
        estimates: theta.iter().copied().collect(),
        se,
        z,
        pvalues,
        fim_mode: mode,
        pseudo_inverse: inv.pseudo,
        unidentified,
    }
}

pub fn inference(model: &Model, theta: &DVector<f64>, mode: FimMode) -> Result<Inference> {
    let fim = fisher_information(&model.params, theta, &model.sample, mode)?;
    Ok(p_values(model.params.names(), theta, &fim, mode))
}

/// Objective value reached by a fit, with what is needed to turn it into χ².
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitValue {
    pub objective: ObjectiveKind,
    /// `F(θ̂)`
    pub value: f64,
    /// `F` at `Σ = S`
    pub saturated: f64,
    pub n_params: usize,
}

impl FitValue {
    /// `F(θ̂) − F(S)`, the part of the discrepancy χ² is built from.
    pub fn discrepancy(&self) -> f64 {
        self.value - self.saturated
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitIndices {
    pub objective: ObjectiveKind,
    pub n: usize,
    /// Observed variables.
    pub k: usize,
    /// Free parameters.
    pub m: usize,
    pub chi2: f64,
    pub dof: i64,
    pub chi2_baseline: f64,
    pub dof_baseline: i64,
    pub rmsea: Option<f64>,
    pub gfi: Option<f64>,
    pub agfi: Option<f64>,
    pub nfi: Option<f64>,
    pub tli: Option<f64>,
    pub cfi: Option<f64>,
    pub aic: f64,
    pub bic: f64,
    pub log_likelihood: f64,
    pub likelihood_convention: String,
}

/// How the default log-likelihood is defined.
pub const WISHART_CONVENTION: &str = "L = -(n/2) [tr(S Sigma^-1) + ln|Sigma|], constants dropped";

pub fn degrees_of_freedom(k: usize, m: usize) -> i64 {
    (k * (k + 1) / 2) as i64 - m as i64
}

/// Fit indices from the target and baseline fits. `log_likelihood` enters AIC and BIC.
pub fn fit_indices(
    fit: &FitValue,
    baseline: &FitValue,
    n: usize,
    k: usize,
    log_likelihood: f64,
    convention: &str,
) -> Result<FitIndices> {
    if fit.objective != baseline.objective {
        return Err(Error::ObjectiveMismatch(format!(
            "model fitted with {} but baseline with {}",
            fit.objective, baseline.objective
        )));
    }
    let nf = n as f64;
    let m = fit.n_params;
    let chi2 = nf * fit.discrepancy();
    let chi2_b = nf * baseline.discrepancy();
    let dof = degrees_of_freedom(k, m);
    let dof_b = degrees_of_freedom(k, baseline.n_params);
    let (df, df_b) = (dof as f64, dof_b as f64);

    let rmsea = (dof > 0 && n > 1).then(|| ((chi2 / df - 1.0) / (nf - 1.0)).max(0.0).sqrt());
    let gfi = (chi2_b != 0.0).then(|| 1.0 - chi2 / chi2_b);
    let nfi = (chi2_b != 0.0).then(|| (chi2_b - chi2) / chi2_b);
    if let (Some(g), Some(nv)) = (gfi, nfi) {
        debug_assert!((g - nv).abs() <= 1e-12 * g.abs().max(1.0));
    }
    let agfi = match (gfi, dof > 0) {
        (Some(g), true) => Some(1.0 - (k * (k + 1)) as f64 / (2.0 * df) * (1.0 - g)),
        _ => None,
    };
    let tli = if dof > 0 && dof_b > 0 {
        let denom = chi2_b / df_b - 1.0;
        (denom != 0.0).then(|| (chi2_b / df_b - chi2 / df) / denom)
    } else {
        None
    };
    let cfi = if dof > 0 && dof_b > 0 {
        let num = (chi2 - df).max(0.0);
        let denom = (chi2_b - df_b).max(chi2 - df).max(0.0);
        Some(if denom > 0.0 { 1.0 - num / denom } else { 1.0 })
    } else {
        None
    };
    let mf = m as f64;
    Ok(FitIndices {
        objective: fit.objective,
        n,
        k,
        m,
        chi2,
        dof,
        chi2_baseline: chi2_b,
        dof_baseline: dof_b,
        rmsea,
        gfi,
        agfi,
        nfi,
        tli,
        cfi,
        aic: 2.0 * (mf - log_likelihood),
        bic: nf.ln() * mf - 2.0 * log_likelihood,
        log_likelihood,
        likelihood_convention: convention.to_string(),
    })
}

/// Wishart log-likelihood with constants dropped: `−(n/2) F_MLW(θ)`.
pub fn wishart_log_likelihood(model: &Model, theta: &DVector<f64>) -> Result<f64> {
    let f = objective::value(ObjectiveKind::Mlw, &model.params, theta, &model.sample)?;
    Ok(-(model.sample.n as f64) / 2.0 * f)
}

/// Fits the independence model (free variances only) with `objective`.
pub fn baseline_model(
    sample: &SampleCovariance,
    objective: ObjectiveKind,
    cfg: &MethodConfig,
) -> Result<FitValue> {
    let ps = ParamSystem::independence(sample);
    let problem = SemProblem::new(&ps, sample, objective);
    let out = minimize(&problem, cfg, &ps.start())?;
    if !out.value.is_finite() {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(FitValue {
        objective,
        value: out.value,
        saturated: objective.saturated_value(sample)?,
        n_params: ps.n_params(),
    })
}

#[derive(Debug, Clone, Default)]
pub struct StatsOptions {
    pub fim_mode: FimMode,
    /// Replaces the default Wishart log-likelihood in AIC and BIC.
    pub log_likelihood: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Statistics {
    pub inference: Inference,
    pub fit: FitIndices,
}

/// Standard errors and fit indices for the latest fit of `opt`.
pub fn gather_statistics(opt: &Optimizer, options: &StatsOptions) -> Result<Statistics> {
    let last = opt
        .last()
        .ok_or_else(|| Error::Unsupported("model has not been fitted".into()))?;
    let model = &opt.model;
    let theta = &opt.theta;
    let objective = last.objective;
    let value = objective::value(objective, &model.params, theta, &model.sample)?;
    let fit = FitValue {
        objective,
        value,
        saturated: objective.saturated_value(&model.sample)?,
        n_params: model.n_params(),
    };
    let baseline = baseline_model(&model.sample, objective, &MethodConfig::new(last.method))?;
    let (ll, convention) = match options.log_likelihood {
        Some(l) => (l, "user supplied"),
        None => (wishart_log_likelihood(model, theta)?, WISHART_CONVENTION),
    };
    let fit = fit_indices(&fit, &baseline, model.sample.n, model.n_observed(), ll, convention)?;
    let inference = inference(model, theta, options.fim_mode)?;
    Ok(Statistics { inference, fit })
}
