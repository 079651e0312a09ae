mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use semforge::bench::delta;
use semforge::{parse, Method, MethodConfig, Model, ObjectiveKind, Optimizer};

fn scalar(s: f64) -> Model {
    let names = vec!["y1".to_string()];
    Model::from_covariance(parse("eta =~ y1\ny1 ~~ 0*y1").unwrap(), &names, &DMatrix::from_element(1, 1, s), 50).unwrap()
}

#[test]
fn scalar_wishart_minimum() {
    for method in [Method::Slsqp, Method::LBfgsB] {
        let mut opt = Optimizer::new(scalar(2.0));
        opt.theta = DVector::from_element(1, 1.0);
        let out = opt.optimize_outcome(ObjectiveKind::Mlw, &MethodConfig::new(method)).unwrap();
        assert!(out.converged);
        assert!((out.theta[0] - 2.0).abs() < 1e-6, "{method}: {}", out.theta[0]);
    }
}

#[test]
fn adam_scalar_minimum() {
    let mut opt = Optimizer::new(scalar(2.0));
    opt.theta = DVector::from_element(1, 1.0);
    let mut cfg = MethodConfig::new(Method::Adam);
    cfg.max_iter = 10_000;
    cfg.learning_rate = 1e-2;
    opt.optimize(ObjectiveKind::Mlw, &cfg).unwrap();
    assert!((opt.theta[0] - 2.0).abs() < 1e-2, "{}", opt.theta[0]);
}

#[test]
fn chained_least_squares_then_wishart() {
    let mut good = 0;
    for seed in seeds(61, 100) {
        let case = case(3, seed);
        let mut opt = Optimizer::new(model_of(&case));
        let cfg = MethodConfig::default();
        let ok = opt.optimize(ObjectiveKind::Uls, &cfg).is_ok() && opt.optimize(ObjectiveKind::Mlw, &cfg).is_ok();
        assert_eq!(opt.history.len(), if ok { 2 } else { opt.history.len() });
        if ok && delta(&case.params, &opt.estimates()).is_ok_and(|d| d < 0.3) {
            good += 1;
        }
    }
    assert!(good >= 90, "{good}/100");
}

#[test]
fn estimates_respect_bounds_and_line_search_is_monotone() {
    for seed in seeds(71, 10) {
        let case = case(1, seed);
        for method in Method::ALL {
            let mut opt = Optimizer::new(model_of(&case));
            let mut cfg = MethodConfig::new(method);
            cfg.max_iter = cfg.max_iter.min(2000);
            let start = semforge::objective::value(ObjectiveKind::Mlw, &opt.model.params, &opt.theta, &opt.model.sample);
            let Ok(out) = opt.optimize_outcome(ObjectiveKind::Mlw, &cfg) else { continue };
            for (t, p) in out.theta.iter().zip(&opt.model.params.params) {
                assert!(*t >= p.lower && *t <= p.upper, "{method} {}", p.name());
            }
            if method.is_line_search() {
                if let Ok(f0) = start {
                    assert!(out.value <= f0 + 1e-12, "{method}");
                }
            }
            if out.converged {
                let v = semforge::objective::value(ObjectiveKind::Mlw, &opt.model.params, &out.theta, &opt.model.sample).unwrap();
                assert_eq!(v, out.value);
            }
        }
    }
}
