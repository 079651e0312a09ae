//! Discrepancy functions between the sample covariance `S` and Σ(θ).
//!
//! Every gradient here has the form `∂F/∂θᵢ = tr[W ∂Σ/∂θᵢ]` for a symmetric weight
//! `W`, so the per-objective work is computing `W`; the chain rule through Σ lives in
//! [`Implied::weighted_gradient`].

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::SampleCovariance;
use crate::error::{Error, Result};
use crate::model::{Implied, ParamSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectiveKind {
    /// Unweighted least squares: `tr[(Σ − S)(Σ − S)ᵀ]`
    #[serde(rename = "ULS")]
    Uls,
    /// Generalized least squares: `tr[(I − Σ S⁻¹)²]`
    #[serde(rename = "GLS")]
    Gls,
    /// Wishart likelihood: `tr[S Σ⁻¹] + ln|Σ|`
    #[serde(rename = "MLW")]
    Mlw,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 3] = [ObjectiveKind::Uls, ObjectiveKind::Gls, ObjectiveKind::Mlw];

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectiveKind::Uls => "ULS",
            ObjectiveKind::Gls => "GLS",
            ObjectiveKind::Mlw => "MLW",
        }
    }

    /// Value attained when Σ(θ) = S. Subtracting it gives a discrepancy that is zero
    /// at perfect fit, which is what χ² = n·F needs.
    pub fn saturated_value(self, sample: &SampleCovariance) -> Result<f64> {
        match self {
            ObjectiveKind::Uls | ObjectiveKind::Gls => Ok(0.0),
            ObjectiveKind::Mlw => Ok(sample.dim() as f64 + sample.ln_det()?),
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ULS" => Ok(ObjectiveKind::Uls),
            "GLS" => Ok(ObjectiveKind::Gls),
            "MLW" => Ok(ObjectiveKind::Mlw),
            _ => Err(Error::UnknownName {
                what: "objective",
                name: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: Option<DMatrix<f64>>,
}

/// Value and the weight `W` with `∂F/∂θᵢ = tr[W ∂Σ/∂θᵢ]`.
fn value_and_weight(
    kind: ObjectiveKind,
    sigma: &DMatrix<f64>,
    sample: &SampleCovariance,
) -> Result<(f64, DMatrix<f64>)> {
    let s = &sample.cov;
    match kind {
        ObjectiveKind::Uls => {
            let d = sigma - s;
            Ok((d.norm_squared(), d * 2.0))
        }
        ObjectiveKind::Gls => {
            let w = sample.inverse()?;
            let r = DMatrix::identity(s.nrows(), s.nrows()) - sigma * w;
            let value = (&r * &r).trace();
            // −2 W R = −2 (W − W Σ W), symmetric
            let mut weight = w * &r * -2.0;
            crate::dataset::symmetrize(&mut weight);
            Ok((value, weight))
        }
        ObjectiveKind::Mlw => {
            let ch = Cholesky::new(sigma.clone()).ok_or(Error::NotPositiveDefinite)?;
            let ln_det = 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let a = ch.inverse();
            let sa = s * &a;
            let value = sa.trace() + ln_det;
            let mut weight = &a - &a * &sa;
            crate::dataset::symmetrize(&mut weight);
            Ok((value, weight))
        }
    }
}

fn finite(value: f64, grad: &DVector<f64>) -> Result<()> {
    if value.is_finite() && grad.iter().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(Error::NotPositiveDefinite)
    }
}

/// Objective value only.
pub fn value(
    kind: ObjectiveKind,
    ps: &ParamSystem,
    theta: &DVector<f64>,
    sample: &SampleCovariance,
) -> Result<f64> {
    let imp = Implied::new(ps, theta)?;
    let (v, _) = value_and_weight(kind, &imp.sigma, sample)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NotPositiveDefinite)
    }
}

/// Value and analytic gradient.
pub fn evaluate(
    kind: ObjectiveKind,
    ps: &ParamSystem,
    theta: &DVector<f64>,
    sample: &SampleCovariance,
) -> Result<ObjectiveEval> {
    let imp = Implied::new(ps, theta)?;
    let (value, w) = value_and_weight(kind, &imp.sigma, sample)?;
    let gradient = imp.weighted_gradient(ps, &w);
    finite(value, &gradient)?;
    Ok(ObjectiveEval {
        value,
        gradient,
        hessian: None,
    })
}

/// Value, gradient and analytic Hessian.
pub fn evaluate_with_hessian(
    kind: ObjectiveKind,
    ps: &ParamSystem,
    theta: &DVector<f64>,
    sample: &SampleCovariance,
) -> Result<ObjectiveEval> {
    let imp = Implied::new(ps, theta)?;
    let (value, w) = value_and_weight(kind, &imp.sigma, sample)?;
    let gradient = imp.weighted_gradient(ps, &w);
    finite(value, &gradient)?;
    let hessian = hessian_from(kind, ps, &imp, &w, sample)?;
    Ok(ObjectiveEval {
        value,
        gradient,
        hessian: Some(hessian),
    })
}

pub fn eval_uls(
    ps: &ParamSystem,
    theta: &DVector<f64>,
    sample: &SampleCovariance,
) -> Result<ObjectiveEval> {
    evaluate(ObjectiveKind::Uls, ps, theta, sample)
}

pub fn eval_gls(
    ps: &ParamSystem,
    theta: &DVector<f64>,
    sample: &SampleCovariance,
) -> Result<ObjectiveEval> {
    evaluate(ObjectiveKind::Gls, ps, theta, sample)
}

/// Wishart discrepancy with its Hessian (used for the observed information).
pub fn eval_mlw(
    ps: &ParamSystem,
    theta: &DVector<f64>,
    sample: &SampleCovariance,
) -> Result<ObjectiveEval> {
    evaluate_with_hessian(ObjectiveKind::Mlw, ps, theta, sample)
}

fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    // tr(AB) = Σᵢⱼ Aᵢⱼ Bⱼᵢ
    a.component_mul(&b.transpose()).sum()
}

fn hessian_from(
    kind: ObjectiveKind,
    ps: &ParamSystem,
    imp: &Implied,
    weight: &DMatrix<f64>,
    sample: &SampleCovariance,
) -> Result<DMatrix<f64>> {
    let m = ps.n_params();
    let first = imp.sigma_derivatives(ps);
    let second = imp.sigma_second_derivatives(ps);
    let mut h = DMatrix::zeros(m, m);

    // Curvature of F in Σ, contracted with first derivatives.
    let curvature: Box<dyn Fn(usize, usize) -> f64> = match kind {
        ObjectiveKind::Uls => Box::new(|i, j| 2.0 * trace_product(&first[i], &first[j])),
        ObjectiveKind::Gls => {
            let w = sample.inverse()?;
            let ws: Vec<DMatrix<f64>> = first.iter().map(|d| w * d).collect();
            Box::new(move |i, j| 2.0 * trace_product(&ws[i], &ws[j]))
        }
        ObjectiveKind::Mlw => {
            let ch = Cholesky::new(imp.sigma.clone()).ok_or(Error::NotPositiveDefinite)?;
            let a = ch.inverse();
            let q = &a * &sample.cov * &a;
            let x: Vec<DMatrix<f64>> = first.iter().map(|d| &a * d).collect();
            let y: Vec<DMatrix<f64>> = first.iter().map(|d| &q * d).collect();
            Box::new(move |i, j| {
                -trace_product(&x[j], &x[i]) + trace_product(&x[j], &y[i]) + trace_product(&y[j], &x[i])
            })
        }
    };

    for i in 0..m {
        for j in i..m {
            let mut v = curvature(i, j);
            if let Some(d2) = second.get(i, j) {
                v += trace_product(weight, d2);
            }
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Model;
    use crate::syntax::parse;

    fn scalar(s: f64) -> Model {
        Model::from_covariance(
            parse("x1 ~~ x1").unwrap(),
            &["x1".to_string()],
            &DMatrix::from_element(1, 1, s),
            100,
        )
        .unwrap()
    }

    fn at(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    #[test]
    fn scalar_uls() {
        let m = scalar(2.0);
        for t in [0.5, 2.0, 3.7] {
            let e = eval_uls(&m.params, &at(t), &m.sample).unwrap();
            assert!((e.value - (t - 2.0).powi(2)).abs() < 1e-14);
            assert!((e.gradient[0] - 2.0 * (t - 2.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn scalar_gls() {
        let m = scalar(2.0);
        for t in [0.5, 2.0, 3.7] {
            let e = eval_gls(&m.params, &at(t), &m.sample).unwrap();
            assert!((e.value - (1.0 - t / 2.0).powi(2)).abs() < 1e-14);
            assert!((e.gradient[0] + (1.0 - t / 2.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn scalar_mlw() {
        let m = scalar(2.0);
        for t in [0.5, 2.0, 3.7] {
            let e = eval_mlw(&m.params, &at(t), &m.sample).unwrap();
            assert!((e.value - (2.0 / t + t.ln())).abs() < 1e-14);
            assert!((e.gradient[0] - (-2.0 / (t * t) + 1.0 / t)).abs() < 1e-14);
            let h = e.hessian.unwrap()[(0, 0)];
            assert!((h - (4.0 / t.powi(3) - 1.0 / (t * t))).abs() < 1e-12);
        }
        let e = eval_mlw(&m.params, &at(2.0), &m.sample).unwrap();
        assert!(e.gradient[0].abs() < 1e-15);
    }

    #[test]
    fn mlw_rejects_non_positive_definite() {
        let m = scalar(2.0);
        assert!(matches!(
            evaluate(ObjectiveKind::Mlw, &m.params, &at(-1.0), &m.sample),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn names_round_trip() {
        for k in ObjectiveKind::ALL {
            assert_eq!(k.as_str().parse::<ObjectiveKind>().unwrap(), k);
        }
        assert!("WLS".parse::<ObjectiveKind>().is_err());
    }
}
