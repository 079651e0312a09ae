use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::syntax::ModelDescription;

/// Role of a variable in the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarKind {
    /// Latent, never regressed on anything (η¹).
    LatentExogenous,
    /// Latent with at least one regression (η²).
    LatentEndogenous,
    /// Observed structural variable, never regressed (x¹).
    ObservedExogenous,
    /// Observed structural variable with at least one regression (x²).
    ObservedEndogenous,
    /// Indicator of one or more latents (y).
    Manifest,
}

impl VarKind {
    pub fn is_structural(self) -> bool {
        self != VarKind::Manifest
    }

    pub fn is_endogenous(self) -> bool {
        matches!(self, VarKind::LatentEndogenous | VarKind::ObservedEndogenous)
    }
}

/// Partition of model variables. Each list is sorted byte-wise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableTaxonomy {
    pub latent_exogenous: Vec<String>,
    pub latent_endogenous: Vec<String>,
    pub observed_exogenous: Vec<String>,
    pub observed_endogenous: Vec<String>,
    pub manifest: Vec<String>,
    /// Variables on the right-hand side of some regression.
    pub regressors: BTreeSet<String>,
}

impl VariableTaxonomy {
    pub fn classify(desc: &ModelDescription) -> Result<Self> {
        let latents: BTreeSet<String> = desc.loadings().map(|(l, _)| l.to_string()).collect();
        let manifests: BTreeSet<String> =
            desc.loadings().map(|(_, t)| t.name.clone()).collect();

        if let Some(v) = latents.intersection(&manifests).next() {
            return Err(Error::Contradiction {
                variable: v.clone(),
                message: "appears both as a latent variable and as its indicator".into(),
            });
        }

        let mut structural = BTreeSet::new();
        let mut dependents = BTreeSet::new();
        let mut regressors = BTreeSet::new();
        for (lhs, term) in desc.regressions() {
            if lhs == term.name {
                return Err(Error::Contradiction {
                    variable: lhs.to_string(),
                    message: "is regressed on itself".into(),
                });
            }
            for v in [lhs, term.name.as_str()] {
                if manifests.contains(v) {
                    return Err(Error::Contradiction {
                        variable: v.to_string(),
                        message: "is a manifest variable and cannot enter a regression".into(),
                    });
                }
                structural.insert(v.to_string());
            }
            dependents.insert(lhs.to_string());
            regressors.insert(term.name.clone());
        }
        for (lhs, term) in desc.covariances() {
            let a_manifest = manifests.contains(lhs);
            let b_manifest = manifests.contains(&term.name);
            if a_manifest != b_manifest {
                let v = if a_manifest { lhs } else { term.name.as_str() };
                return Err(Error::Contradiction {
                    variable: v.to_string(),
                    message: format!(
                        "covariance `{lhs} ~~ {}` mixes a manifest and a structural variable",
                        term.name
                    ),
                });
            }
            if !a_manifest {
                structural.insert(lhs.to_string());
                structural.insert(term.name.clone());
            }
        }
        structural.extend(latents.iter().cloned());

        let mut t = VariableTaxonomy {
            latent_exogenous: Vec::new(),
            latent_endogenous: Vec::new(),
            observed_exogenous: Vec::new(),
            observed_endogenous: Vec::new(),
            manifest: manifests.into_iter().collect(),
            regressors,
        };
        for v in structural {
            let list = match (latents.contains(&v), dependents.contains(&v)) {
                (true, false) => &mut t.latent_exogenous,
                (true, true) => &mut t.latent_endogenous,
                (false, false) => &mut t.observed_exogenous,
                (false, true) => &mut t.observed_endogenous,
            };
            list.push(v);
        }
        Ok(t)
    }

    /// Latent variables in ω order (byte-wise alphabetical).
    pub fn latents(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .latent_exogenous
            .iter()
            .chain(&self.latent_endogenous)
            .cloned()
            .collect();
        v.sort();
        v
    }

    /// Observed structural variables in ω order: endogenous first, then exogenous.
    pub fn observed(&self) -> Vec<String> {
        self.observed_endogenous
            .iter()
            .chain(&self.observed_exogenous)
            .cloned()
            .collect()
    }

    /// ω = [η; x]
    pub fn omega(&self) -> Vec<String> {
        let mut v = self.latents();
        v.extend(self.observed());
        v
    }

    /// z = [y; x]: the observed variables, in the row order of Σ.
    pub fn z(&self) -> Vec<String> {
        let mut v = self.manifest.clone();
        v.extend(self.observed());
        v
    }

    pub fn n_eta(&self) -> usize {
        self.latent_exogenous.len() + self.latent_endogenous.len()
    }

    pub fn n_x(&self) -> usize {
        self.observed_exogenous.len() + self.observed_endogenous.len()
    }

    pub fn n_y(&self) -> usize {
        self.manifest.len()
    }

    pub fn kind_of(&self, name: &str) -> Option<VarKind> {
        let has = |v: &Vec<String>| v.binary_search_by(|s| s.as_str().cmp(name)).is_ok();
        if has(&self.latent_exogenous) {
            Some(VarKind::LatentExogenous)
        } else if has(&self.latent_endogenous) {
            Some(VarKind::LatentEndogenous)
        } else if has(&self.observed_exogenous) {
            Some(VarKind::ObservedExogenous)
        } else if has(&self.observed_endogenous) {
            Some(VarKind::ObservedEndogenous)
        } else if has(&self.manifest) {
            Some(VarKind::Manifest)
        } else {
            None
        }
    }
}
