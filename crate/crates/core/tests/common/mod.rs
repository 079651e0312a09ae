//! Reference computations shared by the integration tests. They rebuild Σ and the
//! discrepancy functions from the model matrices directly, without the library's
//! derivative code.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semforge::generator::{generate, GenConfig, GeneratedCase};
use semforge::model::ParamSystem;
use semforge::{parse, Model, ObjectiveKind};

/// `Σ = Λ (I − B)⁻¹ Ψ (I − B)⁻ᵀ Λᵀ + Θ`
pub fn oracle_sigma(ps: &ParamSystem, theta: &DVector<f64>) -> DMatrix<f64> {
    let m = ps.matrices(theta).unwrap();
    let q = m.beta.nrows();
    let c = (DMatrix::identity(q, q) - &m.beta).try_inverse().expect("I - B invertible");
    &m.lambda * &c * &m.psi * c.transpose() * m.lambda.transpose() + &m.theta
}

pub fn oracle_value(kind: ObjectiveKind, sigma: &DMatrix<f64>, s: &DMatrix<f64>) -> f64 {
    match kind {
        ObjectiveKind::Uls => {
            let d = sigma - s;
            (&d * d.transpose()).trace()
        }
        ObjectiveKind::Gls => {
            let p = s.nrows();
            let d = DMatrix::identity(p, p) - sigma * s.clone().try_inverse().unwrap();
            (&d * &d).trace()
        }
        ObjectiveKind::Mlw => {
            let inv = sigma.clone().try_inverse().unwrap();
            (s * inv).trace() + sigma.determinant().ln()
        }
    }
}

pub fn oracle_objective(kind: ObjectiveKind, model: &Model, theta: &DVector<f64>) -> f64 {
    oracle_value(kind, &oracle_sigma(&model.params, theta), &model.sample.cov)
}

/// Central differences of `f`.
pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let mut a = x.clone();
        let mut b = x.clone();
        a[i] += h;
        b[i] -= h;
        (f(&a) - f(&b)) / (2.0 * h)
    })
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    diff / scale.max(1e-8)
}

/// `count` seeds drawn from a master seed.
pub fn seeds(master: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    (0..count).map(|_| rng.random()).collect()
}

pub fn case(set: usize, seed: u64) -> GeneratedCase {
    generate(&GenConfig::preset(set).unwrap().with_seed(seed)).unwrap()
}

pub fn model_of(case: &GeneratedCase) -> Model {
    Model::new(parse(&case.model_text).unwrap(), &case.dataset).unwrap()
}

/// Model start with the generated structural and loading values filled in.
pub fn truth_start(model: &Model, truth: &std::collections::BTreeMap<String, f64>) -> DVector<f64> {
    let mut theta = model.start();
    for (i, p) in model.params.params.iter().enumerate() {
        if let Some(v) = truth.get(&p.name()) {
            theta[i] = *v;
        } else if p.is_structural_or_loading() {
            theta[i] = 0.0;
        }
    }
    theta
}

pub const FIG1: &str = "\
# Structural part
eta3 ~ x1 + x2
eta4 ~ x3
x3 ~ eta1 + eta2 + x1 + x4
x4 ~ eta4
x5 ~ x4
# Measurement part
eta1 =~ y1 + y2 + y3
eta2 =~ y3
eta3 =~ y4 + y5
eta4 =~ y4 + y6
# Additional covariances
eta2 ~~ x2
y5 ~~ y6
";
