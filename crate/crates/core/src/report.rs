//! Human-readable and JSON summaries of a fitted model.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::Result;
use crate::objective::ObjectiveKind;
use crate::optim::{Method, Optimizer, Termination};
use crate::stats::{FimMode, FitIndices, Statistics};

#[derive(Debug, Clone, Serialize)]
pub struct ParameterRow {
    pub lval: String,
    pub op: String,
    pub rval: String,
    pub estimate: f64,
    pub se: Option<f64>,
    pub z: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub objective: Option<ObjectiveKind>,
    pub method: Option<Method>,
    pub termination: Option<Termination>,
    pub converged: bool,
    pub iterations: usize,
    pub value: Option<f64>,
    pub parameters: Vec<ParameterRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fim_mode: Option<FimMode>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub unidentified: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitIndices>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl Report {
    pub fn new(opt: &Optimizer, stats: Option<&Statistics>) -> Self {
        let last = opt.last();
        let parameters = opt
            .model
            .params
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let pick = |f: fn(&Statistics) -> &Vec<f64>| stats.and_then(|s| finite(f(s)[i]));
                ParameterRow {
                    lval: p.lval.clone(),
                    op: p.op.as_str().to_string(),
                    rval: p.rval.clone(),
                    estimate: opt.theta[i],
                    se: pick(|s| &s.inference.se),
                    z: pick(|s| &s.inference.z),
                    p: pick(|s| &s.inference.pvalues),
                }
            })
            .collect();
        Report {
            objective: last.map(|r| r.objective),
            method: last.map(|r| r.method),
            termination: last.map(|r| r.outcome.termination),
            converged: last.is_some_and(|r| r.outcome.converged),
            iterations: last.map_or(0, |r| r.outcome.iterations),
            value: last.and_then(|r| finite(r.outcome.value)),
            parameters,
            fim_mode: stats.map(|s| s.inference.fim_mode),
            unidentified: stats.map(|s| s.inference.unidentified.clone()).unwrap_or_default(),
            fit: stats.map(|s| s.fit.clone()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned table of estimates followed by the fit-index block.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let opt_str = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "objective {}  method {}  termination {}  iterations {}  F {}",
            opt_str(self.objective.map(|o| o.to_string())),
            opt_str(self.method.map(|m| m.to_string())),
            opt_str(self.termination.map(|t| t.to_string())),
            self.iterations,
            opt_str(self.value.map(|v| format!("{v:.6}"))),
        );
        let num = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        let rows: Vec<[String; 7]> = self
            .parameters
            .iter()
            .map(|p| {
                [
                    p.lval.clone(),
                    p.op.clone(),
                    p.rval.clone(),
                    format!("{:.4}", p.estimate),
                    num(p.se),
                    num(p.z),
                    num(p.p),
                ]
            })
            .collect();
        let header = ["lval", "op", "rval", "Estimate", "Std. Err", "z-value", "p-value"];
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for r in &rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
                if i > 0 {
                    s.push_str("  ");
                }
                if i < 3 {
                    let _ = write!(s, "{c:<w$}");
                } else {
                    let _ = write!(s, "{c:>w$}");
                }
            }
            s.trim_end().to_string()
        };
        let header: Vec<String> = header.iter().map(|h| h.to_string()).collect();
        let _ = writeln!(out, "{}", line(&header));
        for r in &rows {
            let _ = writeln!(out, "{}", line(r));
        }
        if !self.unidentified.is_empty() {
            let _ = writeln!(
                out,
                "warning: information matrix is singular; not identified: {}",
                self.unidentified.join(", ")
            );
        }
        if let Some(f) = &self.fit {
            let _ = writeln!(out);
            let _ = writeln!(out, "n {}  k {}  m {}  objective {}", f.n, f.k, f.m, f.objective);
            let rows = [
                ("chi2", Some(f.chi2)),
                ("dof", Some(f.dof as f64)),
                ("chi2 baseline", Some(f.chi2_baseline)),
                ("dof baseline", Some(f.dof_baseline as f64)),
                ("RMSEA", f.rmsea),
                ("GFI", f.gfi),
                ("AGFI", f.agfi),
                ("NFI", f.nfi),
                ("TLI", f.tli),
                ("CFI", f.cfi),
                ("AIC", Some(f.aic)),
                ("BIC", Some(f.bic)),
                ("L", Some(f.log_likelihood)),
            ];
            for (name, v) in rows {
                let _ = writeln!(out, "{name:<14}{}", v.map_or("undefined".to_string(), |x| format!("{x:.4}")));
            }
            let _ = writeln!(out, "L convention: {}", f.likelihood_convention);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Model;
    use crate::optim::MethodConfig;
    use crate::stats::{gather_statistics, StatsOptions};
    use crate::syntax::parse;
    use nalgebra::DMatrix;

    #[test]
    fn text_and_json() {
        let names: Vec<String> = ["y1", "y2", "y3"].iter().map(|s| s.to_string()).collect();
        let cov = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.4, 0.5, 1.2, 0.45, 0.4, 0.45, 0.9]);
        let model = Model::from_covariance(parse("eta =~ y1 + y2 + y3").unwrap(), &names, &cov, 300).unwrap();
        let mut opt = Optimizer::new(model);
        opt.optimize(ObjectiveKind::Mlw, &MethodConfig::default()).unwrap();
        let stats = gather_statistics(&opt, &StatsOptions::default()).unwrap();
        let report = Report::new(&opt, Some(&stats));
        let text = report.to_text();
        let widths: Vec<usize> = text.lines().skip(1).take(7).map(|l| l.len()).collect();
        assert!(widths.windows(2).all(|w| w[0] == w[1]), "{text}");
        let row = text.lines().find(|l| l.contains("y2") && l.contains("=~")).unwrap();
        assert_eq!(row.split_whitespace().collect::<Vec<_>>()[..4], ["eta", "=~", "y2", "1.1250"]);
        assert!(text.contains("RMSEA"));
        // three indicators leave zero degrees of freedom
        assert!(text.contains("undefined"));
        let json: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        assert_eq!(json["parameters"].as_array().unwrap().len(), 6);
        assert_eq!(json["fit"]["dof"], 0);
    }
}
