//! Random SEM models with known parameters and data drawn from them.
//!
//! Generation runs in four steps:
//!
//! 1. a random DAG over the structural variables, plus back edges that close cycles,
//!    with some nodes marked latent;
//! 2. manifest variables for every latent, some of them merged so they measure two
//!    or more latents;
//! 3. `B` and `Λ` values drawn uniformly from `[-1, -0.1] ∪ [0.1, 1]` times `scale`;
//! 4. data generated from the exogenous variables down to the manifests, each
//!    variable with additive `N(0, 0.1)` noise; latent columns are then dropped.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Variance of the noise added to every generated variable.
pub const NOISE_VARIANCE: f64 = 0.1;
const DET_FLOOR: f64 = 1e-3;
const MAX_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Variables in the structural part, latent ones included.
    pub n_obs: usize,
    /// How many of them are latent.
    pub n_lat: usize,
    /// Inclusive range for the number of manifests per latent.
    pub n_manif: (usize, usize),
    /// Fraction of manifests removed by merging.
    pub p_manif: f64,
    pub n_cycles: usize,
    pub scale: f64,
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

impl GenConfig {
    /// One of the fifteen benchmark sets (`1..=15`).
    pub fn preset(set: usize) -> Option<GenConfig> {
        let (n_obs, n_lat, n_cycles, scale) = match set {
            1..=5 => (5, 2, 0, [0.5, 0.75, 1.0, 1.5, 2.0][set - 1]),
            6..=10 => (10, [0, 1, 2, 4, 8][set - 6], 0, 1.0),
            11..=15 => (10, [0, 1, 2, 4, 8][set - 11], 1, 1.0),
            _ => return None,
        };
        Some(GenConfig {
            n_obs,
            n_lat,
            n_manif: (2, 2),
            p_manif: 0.1,
            n_cycles,
            scale,
            n_samples: 500,
            seed: 0,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Generator(m));
        if self.n_obs == 0 {
            return bad("n_obs must be positive".into());
        }
        if self.n_lat > self.n_obs {
            return bad(format!("n_lat = {} exceeds n_obs = {}", self.n_lat, self.n_obs));
        }
        let (l, u) = self.n_manif;
        if l < 1 || l > u {
            return bad(format!("manifest range ({l}, {u}) must satisfy 1 <= l <= u"));
        }
        if !(0.0..1.0).contains(&self.p_manif) {
            return bad("p_manif must lie in [0, 1)".into());
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return bad("scale must be positive".into());
        }
        if self.n_samples < 2 {
            return bad("n_samples must be at least 2".into());
        }
        Ok(())
    }
}

/// Directed edge `parent → child` of the structural part.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub parent: String,
    pub child: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCase {
    pub config: GenConfig,
    pub model_text: String,
    /// True values of every sampled `B` and `Λ` parameter, keyed `"child ~ parent"`
    /// and `"latent =~ manifest"`.
    pub params: BTreeMap<String, f64>,
    pub dataset: Dataset,
    pub structure: Vec<Edge>,
    pub latents: Vec<String>,
    /// `latent → manifests` after merging.
    pub measurement: BTreeMap<String, Vec<String>>,
    /// Topological order of the acyclic part, by variable name.
    pub order: Vec<String>,
}

impl GeneratedCase {
    /// Writes `model.txt`, `params.json` and `data.csv` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("model.txt"), &self.model_text)?;
        let mut json = serde_json::to_string_pretty(&self.params)?;
        json.push('\n');
        fs::write(dir.join("params.json"), json)?;
        let file = fs::File::create(dir.join("data.csv"))?;
        self.dataset.write_csv(std::io::BufWriter::new(file))?;
        Ok(())
    }
}

fn magnitude(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    let v = rng.random_range(0.1..=1.0);
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    sign * v * scale
}

fn reachable(adj: &[Vec<usize>], from: usize, to: usize) -> bool {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![from];
    while let Some(v) = stack.pop() {
        if v == to {
            return true;
        }
        if std::mem::replace(&mut seen[v], true) {
            continue;
        }
        stack.extend(adj[v].iter().copied());
    }
    false
}

/// Generates one case; identical configs (seed included) give identical cases.
pub fn generate(cfg: &GenConfig) -> Result<GeneratedCase> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_obs;

    // Step 1: DAG along a random topological order, then cycle-closing back edges.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let p_edge = (2.0 / n as f64).min(1.0);
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            if rng.random_bool(p_edge) {
                edges.push((order[a], order[b]));
            }
        }
    }
    let position: Vec<usize> = {
        let mut pos = vec![0; n];
        for (i, &v) in order.iter().enumerate() {
            pos[v] = i;
        }
        pos
    };
    if n > 1 {
        for v in 0..n {
            if edges.iter().any(|&(a, b)| a == v || b == v) {
                continue;
            }
            let mut other = rng.random_range(0..n - 1);
            if other >= v {
                other += 1;
            }
            edges.push(if position[v] < position[other] {
                (v, other)
            } else {
                (other, v)
            });
        }
    }
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in &edges {
        adj[a].push(b);
    }
    for _ in 0..cfg.n_cycles {
        let candidates: Vec<(usize, usize)> = (0..n)
            .flat_map(|a| (0..n).map(move |b| (a, b)))
            .filter(|&(a, b)| {
                a != b
                    && position[a] < position[b]
                    && !edges.contains(&(b, a))
                    && reachable(&adj, a, b)
            })
            .collect();
        let Some(&(a, b)) = candidates.as_slice().choose(&mut rng) else {
            return Err(Error::Generator(format!(
                "cannot add {} cycle edge(s): no remaining pair is joined by a path",
                cfg.n_cycles
            )));
        };
        edges.push((b, a));
        adj[b].push(a);
    }

    let mut connected: Vec<usize> = (0..n)
        .filter(|&v| edges.iter().any(|&(a, b)| a == v || b == v))
        .collect();
    if connected.len() < cfg.n_lat {
        return Err(Error::Generator(format!(
            "only {} structural variables have edges, {} latents requested",
            connected.len(),
            cfg.n_lat
        )));
    }
    connected.shuffle(&mut rng);
    let mut is_latent = vec![false; n];
    for &v in &connected[..cfg.n_lat] {
        is_latent[v] = true;
    }
    let mut names = Vec::with_capacity(n);
    let (mut n_eta, mut n_x) = (0, 0);
    for &lat in &is_latent {
        if lat {
            n_eta += 1;
            names.push(format!("eta{n_eta}"));
        } else {
            n_x += 1;
            names.push(format!("x{n_x}"));
        }
    }
    let latent_nodes: Vec<usize> = (0..n).filter(|&v| is_latent[v]).collect();

    // Step 2: manifests per latent, then merges across distinct latents.
    let (l, u) = cfg.n_manif;
    let mut manifests: Vec<Vec<usize>> = Vec::new();
    for &v in &latent_nodes {
        for _ in 0..rng.random_range(l..=u) {
            manifests.push(vec![v]);
        }
    }
    let initial = manifests.len();
    let target = ((1.0 - cfg.p_manif) * initial as f64 - 1e-9).ceil() as usize;
    for _ in target..initial {
        let pairs: Vec<(usize, usize)> = (0..manifests.len())
            .flat_map(|i| ((i + 1)..manifests.len()).map(move |j| (i, j)))
            .filter(|&(i, j)| manifests[i].iter().all(|v| !manifests[j].contains(v)))
            .collect();
        let Some(&(i, j)) = pairs.as_slice().choose(&mut rng) else {
            return Err(Error::Generator(format!(
                "p_manif = {} needs {} merges but no two remaining manifests measure disjoint latents",
                cfg.p_manif,
                initial - target
            )));
        };
        let absorbed = manifests.remove(j);
        manifests[i].extend(absorbed);
        manifests[i].sort_unstable();
    }
    let manifest_names: Vec<String> = (1..=manifests.len()).map(|k| format!("y{k}")).collect();

    // Step 3: parameter values.
    edges.sort_by_key(|&(a, b)| (b, a));
    let mut beta = DMatrix::zeros(n, n);
    let mut lambda = DMatrix::zeros(manifests.len(), n);
    let mut params = BTreeMap::new();
    let mut measurement: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for &v in &latent_nodes {
        let mut ind: Vec<usize> = (0..manifests.len()).filter(|&j| manifests[j].contains(&v)).collect();
        ind.sort_by(|&a, &b| manifest_names[a].as_bytes().cmp(manifest_names[b].as_bytes()));
        for (k, &j) in ind.iter().enumerate() {
            let value = if k == 0 { 1.0 } else { magnitude(&mut rng, cfg.scale) };
            lambda[(j, v)] = value;
            if k > 0 {
                params.insert(format!("{} =~ {}", names[v], manifest_names[j]), value);
            }
        }
        measurement.insert(names[v].clone(), ind.iter().map(|&j| manifest_names[j].clone()).collect());
    }
    let mut resamples = 0;
    loop {
        for &(a, b) in &edges {
            beta[(b, a)] = magnitude(&mut rng, cfg.scale);
        }
        let det = (DMatrix::identity(n, n) - &beta).determinant();
        if det.abs() >= DET_FLOOR {
            break;
        }
        resamples += 1;
        if resamples >= MAX_RESAMPLES {
            return Err(Error::Generator("could not draw a nonsingular I - B".into()));
        }
    }
    for &(a, b) in &edges {
        params.insert(format!("{} ~ {}", names[b], names[a]), beta[(b, a)]);
    }

    // Step 4: data.
    let noise = Normal::new(0.0, NOISE_VARIANCE.sqrt()).expect("valid normal");
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let exogenous: Vec<bool> = (0..n).map(|v| !edges.iter().any(|&(_, b)| b == v)).collect();
    let c = (DMatrix::identity(n, n) - &beta)
        .try_inverse()
        .ok_or(Error::SingularStructure)?;
    let x_nodes: Vec<usize> = (0..n).filter(|&v| !is_latent[v]).collect();
    let mut col_names: Vec<String> = x_nodes.iter().map(|&v| names[v].clone()).collect();
    col_names.extend(manifest_names.iter().cloned());
    let width = col_names.len();
    let mut rows = DMatrix::zeros(cfg.n_samples, width);
    for r in 0..cfg.n_samples {
        let e = DVector::from_fn(n, |v, _| {
            let base = if exogenous[v] { unit.sample(&mut rng) } else { 0.0 };
            base + noise.sample(&mut rng)
        });
        let omega = &c * e;
        for (k, &v) in x_nodes.iter().enumerate() {
            rows[(r, k)] = omega[v];
        }
        for j in 0..manifests.len() {
            let mean: f64 = (0..n).map(|v| lambda[(j, v)] * omega[v]).sum();
            rows[(r, x_nodes.len() + j)] = mean + noise.sample(&mut rng);
        }
    }
    let dataset = Dataset::new(col_names, rows)?;

    let mut text = String::new();
    let mut children: Vec<usize> = edges.iter().map(|&(_, b)| b).collect();
    children.dedup();
    for &child in &children {
        let parents: Vec<&str> = edges
            .iter()
            .filter(|&&(_, b)| b == child)
            .map(|&(a, _)| names[a].as_str())
            .collect();
        text.push_str(&format!("{} ~ {}\n", names[child], parents.join(" + ")));
    }
    for (lat, inds) in &measurement {
        text.push_str(&format!("{lat} =~ {}\n", inds.join(" + ")));
    }

    let structure = {
        let mut s: Vec<Edge> = edges
            .iter()
            .map(|&(a, b)| Edge {
                parent: names[a].clone(),
                child: names[b].clone(),
            })
            .collect();
        s.sort();
        s
    };
    Ok(GeneratedCase {
        config: cfg.clone(),
        model_text: text,
        params,
        dataset,
        structure,
        latents: latent_nodes.iter().map(|&v| names[v].clone()).collect(),
        measurement,
        order: order.iter().map(|&v| names[v].clone()).collect(),
    })
}

/// [`generate`] with the seed replaced.
pub fn seeded_replay(cfg: &GenConfig, seed: u64) -> Result<GeneratedCase> {
    generate(&cfg.clone().with_seed(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{parse, Statement};

    fn set3(seed: u64) -> GenConfig {
        GenConfig::preset(3).unwrap().with_seed(seed)
    }

    fn has_cycle(edges: &[Edge]) -> bool {
        let names: Vec<&String> = edges.iter().flat_map(|e| [&e.parent, &e.child]).collect();
        let idx = |s: &String| names.iter().position(|n| *n == s).unwrap();
        let mut adj = vec![Vec::new(); names.len()];
        for e in edges {
            adj[idx(&e.parent)].push(idx(&e.child));
        }
        // 0 unvisited, 1 on stack, 2 done
        fn dfs(v: usize, adj: &[Vec<usize>], state: &mut [u8]) -> bool {
            state[v] = 1;
            for &w in &adj[v] {
                if state[w] == 1 || (state[w] == 0 && dfs(w, adj, state)) {
                    return true;
                }
            }
            state[v] = 2;
            false
        }
        let mut state = vec![0u8; names.len()];
        (0..names.len()).any(|v| state[v] == 0 && dfs(v, &adj, &mut state))
    }

    #[test]
    fn set3_shape() {
        for seed in 0..20 {
            let case = generate(&set3(seed)).unwrap();
            let desc = parse(&case.model_text).unwrap();
            assert_eq!(case.latents.len(), 2);
            let xs = case.dataset.names().iter().filter(|c| c.starts_with('x')).count();
            assert_eq!(xs, 3);
            assert_eq!(case.dataset.n_samples(), 500);
            assert!(case.dataset.names().iter().all(|c| !c.starts_with("eta")));
            assert!(!desc.is_empty());
        }
    }

    #[test]
    fn sampled_values_respect_scale() {
        for seed in 0..10 {
            let mut cfg = GenConfig::preset(4).unwrap().with_seed(seed);
            cfg.n_obs = 8;
            cfg.n_lat = 3;
            let case = generate(&cfg).unwrap();
            for (name, v) in &case.params {
                assert!(v.abs() >= 0.1 * 1.5 - 1e-12 && v.abs() <= 1.5 + 1e-12, "{name} = {v}");
            }
        }
    }

    #[test]
    fn no_latents_means_no_loadings() {
        let mut cfg = set3(5);
        cfg.n_lat = 0;
        let case = generate(&cfg).unwrap();
        let desc = parse(&case.model_text).unwrap();
        assert!(desc.statements.iter().all(|s| !matches!(s, Statement::Loading { .. })));
        assert!(!case.model_text.contains("=~"));
    }

    #[test]
    fn cycles_are_closed() {
        for seed in 0..10 {
            let case = generate(&GenConfig::preset(13).unwrap().with_seed(seed)).unwrap();
            assert!(has_cycle(&case.structure), "seed {seed}");
        }
        for seed in 0..10 {
            let case = generate(&GenConfig::preset(8).unwrap().with_seed(seed)).unwrap();
            assert!(!has_cycle(&case.structure), "seed {seed}");
        }
    }

    #[test]
    fn merging_hits_target_count() {
        for seed in 0..20 {
            let cfg = GenConfig {
                n_obs: 6,
                n_lat: 4,
                n_manif: (2, 4),
                p_manif: 0.3,
                n_cycles: 0,
                scale: 1.0,
                n_samples: 50,
                seed,
            };
            let case = generate(&cfg).unwrap();
            let k = case.dataset.names().iter().filter(|c| c.starts_with('y')).count();
            let mut owned: usize = 0;
            for inds in case.measurement.values() {
                assert!(!inds.is_empty());
                owned += inds.len();
            }
            // each merge makes one manifest load on one more latent
            let initial = owned;
            assert_eq!(k, ((1.0 - 0.3) * initial as f64 - 1e-9).ceil() as usize);
        }
    }

    #[test]
    fn infeasible_merge_is_reported() {
        let cfg = GenConfig {
            n_obs: 3,
            n_lat: 1,
            n_manif: (3, 3),
            p_manif: 0.5,
            n_cycles: 0,
            scale: 1.0,
            n_samples: 10,
            seed: 1,
        };
        let err = generate(&cfg).unwrap_err();
        assert!(err.to_string().contains("disjoint latents"), "{err}");
    }

    #[test]
    fn replay_is_deterministic() {
        let a = seeded_replay(&set3(0), 42).unwrap();
        let b = seeded_replay(&set3(0), 42).unwrap();
        assert_eq!(a, b);
        let c = seeded_replay(&set3(0), 43).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn presets() {
        assert!(GenConfig::preset(0).is_none());
        assert!(GenConfig::preset(16).is_none());
        let s = GenConfig::preset(15).unwrap();
        assert_eq!((s.n_obs, s.n_lat, s.n_cycles), (10, 8, 1));
    }
}
