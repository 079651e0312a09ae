//! Variable classification, parameter layout and the implied covariance.

mod implied;
mod params;
mod taxonomy;

use nalgebra::{DMatrix, DVector};

pub use implied::{Implied, SecondDerivatives};
pub use params::{
    Cell, Matrices, MatrixId, Operator, ParamSystem, Parameter, Placement, Slot,
    PSI_VARIANCE_START,
};
pub use taxonomy::{VarKind, VariableTaxonomy};

use crate::dataset::{Dataset, SampleCovariance};
use crate::error::Result;
use crate::syntax::ModelDescription;

/// A model description bound to data: parameter layout plus the sample covariance.
#[derive(Debug, Clone)]
pub struct Model {
    pub desc: ModelDescription,
    pub taxonomy: VariableTaxonomy,
    pub params: ParamSystem,
    pub sample: SampleCovariance,
}

impl Model {
    /// Classifies variables, picks the observed columns from `data` and computes
    /// starting values.
    pub fn new(desc: ModelDescription, data: &Dataset) -> Result<Self> {
        let taxonomy = VariableTaxonomy::classify(&desc)?;
        let sample = SampleCovariance::from_dataset(data, &taxonomy.z())?;
        Self::with_sample(desc, taxonomy, sample)
    }

    /// Same as [`Model::new`] but from a covariance matrix over `names` (any order).
    pub fn from_covariance(
        desc: ModelDescription,
        names: &[String],
        cov: &DMatrix<f64>,
        n: usize,
    ) -> Result<Self> {
        let taxonomy = VariableTaxonomy::classify(&desc)?;
        let z = taxonomy.z();
        let idx = z
            .iter()
            .map(|v| {
                names
                    .iter()
                    .position(|n| n == v)
                    .ok_or_else(|| crate::Error::MissingColumn(v.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let s = DMatrix::from_fn(z.len(), z.len(), |i, j| cov[(idx[i], idx[j])]);
        let sample = SampleCovariance::from_covariance(z, s, n)?;
        Self::with_sample(desc, taxonomy, sample)
    }

    fn with_sample(
        desc: ModelDescription,
        taxonomy: VariableTaxonomy,
        sample: SampleCovariance,
    ) -> Result<Self> {
        let params = ParamSystem::build(&desc, &taxonomy, &sample)?;
        Ok(Model {
            desc,
            taxonomy,
            params,
            sample,
        })
    }

    pub fn n_params(&self) -> usize {
        self.params.n_params()
    }

    /// Number of observed variables `k`.
    pub fn n_observed(&self) -> usize {
        self.params.n_z()
    }

    pub fn start(&self) -> DVector<f64> {
        self.params.start()
    }

    /// Σ(θ) = Λ (I−B)⁻¹ Ψ (I−B)⁻ᵀ Λᵀ + Θ
    pub fn sigma(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(Implied::new(&self.params, theta)?.sigma)
    }
}

/// Σ(θ) for a parameter system.
pub fn sigma(ps: &ParamSystem, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    Ok(Implied::new(ps, theta)?.sigma)
}
