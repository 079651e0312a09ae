//! Estimator-versus-generator campaigns.
//!
//! Each case is a generated model with known `B` and `Λ`; every (method, objective)
//! pair in the grid fits it from the default start, and the fit is classified as a
//! success or one of three failure kinds.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{generate, GenConfig, GeneratedCase};
use crate::model::Model;
use crate::objective::ObjectiveKind;
use crate::optim::{Method, MethodConfig, Optimizer, Termination};
use crate::syntax::parse;

/// Mean relative error above which a fit counts as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Failure {
    None,
    NanParam,
    NanObjective,
    Diverged,
}

impl Failure {
    pub fn is_failure(self) -> bool {
        self != Failure::None
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Failure::None => "none",
            Failure::NanParam => "nan-param",
            Failure::NanObjective => "nan-objective",
            Failure::Diverged => "diverged",
        })
    }
}

/// Mean relative error `(1/n) Σ |θ̂ᵢ − θᵢ| / |θᵢ|` over the names in `truth`.
pub fn delta(truth: &BTreeMap<String, f64>, estimate: &BTreeMap<String, f64>) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::Delta("no parameters to compare".into()));
    }
    let mut sum = 0.0;
    for (name, &t) in truth {
        let e = estimate
            .get(name)
            .ok_or_else(|| Error::Delta(format!("`{name}` has no estimate")))?;
        if t == 0.0 {
            return Err(Error::Delta(format!("true value of `{name}` is zero")));
        }
        sum += (e - t).abs() / t.abs();
    }
    Ok(sum / truth.len() as f64)
}

pub fn classify_failure(estimates: &[f64], objective: f64, domain_failure: bool, delta: f64) -> Failure {
    if estimates.iter().any(|v| !v.is_finite()) {
        Failure::NanParam
    } else if domain_failure || !objective.is_finite() {
        Failure::NanObjective
    } else if !(delta <= DIVERGENCE_THRESHOLD) {
        Failure::Diverged
    } else {
        Failure::None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub case_id: String,
    pub set: String,
    pub replicate: usize,
    pub seed: u64,
    pub objective: ObjectiveKind,
    pub method: Method,
    pub delta: f64,
    pub value: f64,
    pub iterations: usize,
    pub termination: Option<Termination>,
    pub wall_time: f64,
    pub failure: Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSet {
    pub name: String,
    pub config: GenConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    pub sets: Vec<CampaignSet>,
    pub replications: usize,
    pub methods: Vec<Method>,
    pub objectives: Vec<ObjectiveKind>,
    #[serde(default)]
    pub seed: u64,
}

impl Campaign {
    /// The fifteen preset sets with one method and objective.
    pub fn presets(replications: usize, method: Method, objective: ObjectiveKind) -> Self {
        Campaign {
            sets: (1..=15)
                .map(|i| CampaignSet {
                    name: i.to_string(),
                    config: GenConfig::preset(i).expect("preset exists"),
                })
                .collect(),
            replications,
            methods: vec![method],
            objectives: vec![objective],
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Unsupported(format!("invalid campaign: {m}")));
        if self.replications < 1 {
            return bad("replications must be at least 1");
        }
        if self.sets.is_empty() || self.methods.is_empty() || self.objectives.is_empty() {
            return bad("sets, methods and objectives must be non-empty");
        }
        for s in &self.sets {
            s.config.validate()?;
        }
        Ok(())
    }

    /// Per-case generator seeds, drawn in (set, replicate) order from the master seed.
    pub fn case_seeds(&self) -> Vec<Vec<u64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        self.sets
            .iter()
            .map(|_| (0..self.replications).map(|_| rng.random()).collect())
            .collect()
    }
}

/// Fits one generated case with every (method, objective) pair.
pub fn run_case(
    case: &GeneratedCase,
    set: &str,
    replicate: usize,
    methods: &[Method],
    objectives: &[ObjectiveKind],
) -> Vec<BenchRecord> {
    let case_id = format!("{set}-{replicate}");
    let model = parse(&case.model_text).and_then(|d| Model::new(d, &case.dataset));
    let mut out = Vec::new();
    for &objective in objectives {
        for &method in methods {
            let mut record = BenchRecord {
                case_id: case_id.clone(),
                set: set.to_string(),
                replicate,
                seed: case.config.seed,
                objective,
                method,
                delta: f64::NAN,
                value: f64::NAN,
                iterations: 0,
                termination: None,
                wall_time: 0.0,
                failure: Failure::NanObjective,
            };
            if let Ok(model) = &model {
                let mut opt = Optimizer::new(model.clone());
                let cfg = MethodConfig::new(method);
                let start = Instant::now();
                let outcome = opt.optimize_outcome(objective, &cfg);
                record.wall_time = start.elapsed().as_secs_f64();
                if let Ok(outcome) = outcome {
                    let estimates = opt.estimates();
                    record.delta = delta(&case.params, &estimates).unwrap_or(f64::NAN);
                    record.value = outcome.value;
                    record.iterations = outcome.iterations;
                    record.termination = Some(outcome.termination);
                    record.failure = classify_failure(
                        outcome.theta.as_slice(),
                        outcome.value,
                        outcome.termination == Termination::DomainFailure,
                        record.delta,
                    );
                }
            }
            out.push(record);
        }
    }
    out
}

/// Failure counts and timing for one set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetSummary {
    pub set: String,
    pub cases: usize,
    /// Keyed `"method/objective"`.
    pub failures: BTreeMap<String, usize>,
    pub wall_time: BTreeMap<String, f64>,
}

/// `counts[i][j]`: cases where method `i` failed and method `j` did not;
/// `counts[i][i]`: cases where method `i` failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseMatrix {
    pub objective: ObjectiveKind,
    pub methods: Vec<Method>,
    pub counts: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub sets: Vec<SetSummary>,
    pub pairwise: Vec<PairwiseMatrix>,
}

#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub records: Vec<BenchRecord>,
    pub summary: CampaignSummary,
}

fn key(method: Method, objective: ObjectiveKind) -> String {
    format!("{method}/{objective}")
}

pub fn pairwise_matrix(records: &[BenchRecord], methods: &[Method], objective: ObjectiveKind) -> PairwiseMatrix {
    let mut by_case: BTreeMap<&str, BTreeMap<Method, bool>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.objective == objective) {
        by_case
            .entry(r.case_id.as_str())
            .or_default()
            .insert(r.method, r.failure.is_failure());
    }
    let k = methods.len();
    let mut counts = vec![vec![0; k]; k];
    for failed in by_case.values() {
        for (i, mi) in methods.iter().enumerate() {
            if !failed.get(mi).copied().unwrap_or(false) {
                continue;
            }
            counts[i][i] += 1;
            for (j, mj) in methods.iter().enumerate() {
                if j != i && failed.get(mj) == Some(&false) {
                    counts[i][j] += 1;
                }
            }
        }
    }
    PairwiseMatrix {
        objective,
        methods: methods.to_vec(),
        counts,
    }
}

pub fn summarize(c: &Campaign, records: &[BenchRecord]) -> CampaignSummary {
    let sets = c
        .sets
        .iter()
        .map(|s| {
            let mut failures = BTreeMap::new();
            let mut wall_time = BTreeMap::new();
            for &o in &c.objectives {
                for &m in &c.methods {
                    failures.insert(key(m, o), 0);
                    wall_time.insert(key(m, o), 0.0);
                }
            }
            for r in records.iter().filter(|r| r.set == s.name) {
                let k = key(r.method, r.objective);
                if r.failure.is_failure() {
                    *failures.get_mut(&k).expect("grid key") += 1;
                }
                *wall_time.get_mut(&k).expect("grid key") += r.wall_time;
            }
            SetSummary {
                set: s.name.clone(),
                cases: c.replications,
                failures,
                wall_time,
            }
        })
        .collect();
    let pairwise = c
        .objectives
        .iter()
        .map(|&o| pairwise_matrix(records, &c.methods, o))
        .collect();
    CampaignSummary { sets, pairwise }
}

/// Generates and fits every case, in parallel. Records come back in
/// (set, replicate, objective, method) order regardless of scheduling.
pub fn run_campaign(c: &Campaign) -> Result<CampaignResult> {
    c.validate()?;
    let seeds = c.case_seeds();
    let jobs: Vec<(usize, usize, u64)> = seeds
        .iter()
        .enumerate()
        .flat_map(|(s, reps)| reps.iter().enumerate().map(move |(r, &seed)| (s, r, seed)))
        .collect();
    let records: Vec<BenchRecord> = jobs
        .par_iter()
        .map(|&(s, r, seed)| {
            let set = &c.sets[s];
            match generate(&set.config.clone().with_seed(seed)) {
                Ok(case) => run_case(&case, &set.name, r, &c.methods, &c.objectives),
                Err(_) => failed_generation(&set.name, r, seed, c),
            }
        })
        .flatten_iter()
        .collect();
    let summary = summarize(c, &records);
    Ok(CampaignResult { records, summary })
}

fn failed_generation(set: &str, replicate: usize, seed: u64, c: &Campaign) -> Vec<BenchRecord> {
    let mut out = Vec::new();
    for &objective in &c.objectives {
        for &method in &c.methods {
            out.push(BenchRecord {
                case_id: format!("{set}-{replicate}"),
                set: set.to_string(),
                replicate,
                seed,
                objective,
                method,
                delta: f64::NAN,
                value: f64::NAN,
                iterations: 0,
                termination: None,
                wall_time: 0.0,
                failure: Failure::NanObjective,
            });
        }
    }
    out
}

impl CampaignResult {
    /// Writes `records.csv` and `summary.json` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("records.csv"))?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        let mut json = serde_json::to_string_pretty(&self.summary)?;
        json.push('\n');
        fs::write(dir.join("summary.json"), json)?;
        Ok(())
    }
}

/// Appends a regression between two structural variables that are not linked in the
/// generated structure, in topological order so no cycle is introduced. The true value
/// of the new path is zero. Returns the new model text and the parameter name.
pub fn add_null_path(case: &GeneratedCase, rng: &mut impl Rng) -> Option<(String, String)> {
    let linked = |a: &str, b: &str| {
        case.structure
            .iter()
            .any(|e| (e.parent == a && e.child == b) || (e.parent == b && e.child == a))
    };
    let mut pairs = Vec::new();
    for (i, a) in case.order.iter().enumerate() {
        for b in &case.order[i + 1..] {
            if !linked(a, b) {
                pairs.push((a.clone(), b.clone()));
            }
        }
    }
    if pairs.is_empty() {
        return None;
    }
    let (parent, child) = pairs.swap_remove(rng.random_range(0..pairs.len()));
    let mut text = case.model_text.clone();
    text.push_str(&format!("{child} ~ {parent}\n"));
    Some((text, format!("{child} ~ {parent}")))
}
