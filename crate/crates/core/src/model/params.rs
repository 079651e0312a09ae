use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::taxonomy::{VarKind, VariableTaxonomy};
use crate::dataset::SampleCovariance;
use crate::error::{Error, Result};
use crate::syntax::{ModelDescription, Term};

/// Starting value for free variances in Ψ.
pub const PSI_VARIANCE_START: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum MatrixId {
    Beta,
    Lambda,
    Psi,
    Theta,
}

impl MatrixId {
    pub fn is_symmetric(self) -> bool {
        matches!(self, MatrixId::Psi | MatrixId::Theta)
    }
}

/// What occupies a matrix cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Zero,
    Fixed(f64),
    Free(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slot {
    Param(usize),
    Fixed(f64),
}

/// A non-zero cell. For Ψ and Θ only `row <= col` is stored; the mirror is implied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub matrix: MatrixId,
    pub row: usize,
    pub col: usize,
    pub slot: Slot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Operator {
    #[serde(rename = "~")]
    Regression,
    #[serde(rename = "=~")]
    Loading,
    #[serde(rename = "~~")]
    Covariance,
}

impl Operator {
    pub fn as_str(self) -> &'static str {
        match self {
            Operator::Regression => "~",
            Operator::Loading => "=~",
            Operator::Covariance => "~~",
        }
    }
}

/// A free parameter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Parameter {
    pub lval: String,
    pub op: Operator,
    pub rval: String,
    pub matrix: MatrixId,
    pub row: usize,
    pub col: usize,
    pub start: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Parameter {
    /// `lval op rval`, e.g. `eta3 ~ x1`.
    pub fn name(&self) -> String {
        format!("{} {} {}", self.lval, self.op.as_str(), self.rval)
    }

    pub fn is_variance(&self) -> bool {
        self.matrix.is_symmetric() && self.row == self.col
    }

    /// Regression coefficients and loadings: the parameters a generator samples.
    pub fn is_structural_or_loading(&self) -> bool {
        matches!(self.matrix, MatrixId::Beta | MatrixId::Lambda)
    }
}

/// The four model matrices evaluated at some θ.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrices {
    pub beta: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub theta: DMatrix<f64>,
}

impl Matrices {
    fn get_mut(&mut self, id: MatrixId) -> &mut DMatrix<f64> {
        match id {
            MatrixId::Beta => &mut self.beta,
            MatrixId::Lambda => &mut self.lambda,
            MatrixId::Psi => &mut self.psi,
            MatrixId::Theta => &mut self.theta,
        }
    }

    pub fn get(&self, id: MatrixId) -> &DMatrix<f64> {
        match id {
            MatrixId::Beta => &self.beta,
            MatrixId::Lambda => &self.lambda,
            MatrixId::Psi => &self.psi,
            MatrixId::Theta => &self.theta,
        }
    }
}

/// Parameter layout: matrices B (ω×ω), Λ (z×ω), Ψ (ω×ω), Θ (z×z), plus the free
/// parameter vector θ and where each entry lives.
#[derive(Debug, Clone)]
pub struct ParamSystem {
    pub omega: Vec<String>,
    pub z: Vec<String>,
    pub n_eta: usize,
    pub n_x: usize,
    pub n_y: usize,
    pub placements: Vec<Placement>,
    pub params: Vec<Parameter>,
}

struct Builder<'a> {
    omega: &'a [String],
    z: &'a [String],
    cells: Vec<((MatrixId, usize, usize), SlotSpec)>,
    index: HashMap<(MatrixId, usize, usize), usize>,
}

impl Builder<'_> {
    /// Sets a cell, replacing whatever was there but keeping its position.
    fn set(&mut self, matrix: MatrixId, row: usize, col: usize, slot: SlotSpec) {
        let key = if matrix.is_symmetric() && row > col {
            (matrix, col, row)
        } else {
            (matrix, row, col)
        };
        match self.index.get(&key) {
            Some(&i) => self.cells[i].1 = slot,
            None => {
                self.index.insert(key, self.cells.len());
                self.cells.push((key, slot));
            }
        }
    }

    fn finish(self) -> (Vec<Placement>, Vec<Parameter>) {
        let mut placements = Vec::with_capacity(self.cells.len());
        let mut params = Vec::new();
        for ((matrix, row, col), spec) in self.cells {
            let slot = match spec {
                SlotSpec::Fixed(v) => Slot::Fixed(v),
                SlotSpec::Free { start, lower } => {
                    let (lval, op, rval) = match matrix {
                        MatrixId::Beta => (&self.omega[row], Operator::Regression, &self.omega[col]),
                        MatrixId::Lambda => (&self.omega[col], Operator::Loading, &self.z[row]),
                        MatrixId::Psi => (&self.omega[row], Operator::Covariance, &self.omega[col]),
                        MatrixId::Theta => (&self.z[row], Operator::Covariance, &self.z[col]),
                    };
                    params.push(Parameter {
                        lval: lval.clone(),
                        op,
                        rval: rval.clone(),
                        matrix,
                        row,
                        col,
                        start,
                        lower,
                        upper: f64::INFINITY,
                    });
                    Slot::Param(params.len() - 1)
                }
            };
            placements.push(Placement {
                matrix,
                row,
                col,
                slot,
            });
        }
        (placements, params)
    }
}

#[derive(Debug, Clone, Copy)]
enum SlotSpec {
    Fixed(f64),
    Free { start: f64, lower: f64 },
}

impl SlotSpec {
    fn from_term(term: &Term, start: f64, lower: f64) -> Self {
        match term.fixed {
            Some(v) => SlotSpec::Fixed(v),
            None => SlotSpec::Free { start, lower },
        }
    }
}

fn index_of(names: &[String]) -> BTreeMap<&str, usize> {
    names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect()
}

impl ParamSystem {
    /// Lays out parameters for `desc` with starting values derived from the sample
    /// covariance, whose names must be in `taxonomy.z()` order.
    pub fn build(
        desc: &ModelDescription,
        taxonomy: &VariableTaxonomy,
        sample: &SampleCovariance,
    ) -> Result<Self> {
        if let Some((vars, tag)) = desc.type_decls().next() {
            return Err(Error::Unsupported(format!(
                "{} variables ({}) are not supported; only continuous data can be estimated",
                tag.as_str(),
                vars.join(", ")
            )));
        }
        let omega = taxonomy.omega();
        let z = taxonomy.z();
        if sample.names != z {
            return Err(Error::Data(
                "sample covariance is not in model variable order".into(),
            ));
        }
        let s = &sample.cov;
        let n_eta = taxonomy.n_eta();
        let n_y = taxonomy.n_y();
        let n_x = taxonomy.n_x();
        let om = index_of(&omega);
        let zi = index_of(&z);

        let mut b = Builder {
            omega: &omega,
            z: &z,
            cells: Vec::new(),
            index: HashMap::new(),
        };

        // B: one entry per regression edge, row = dependent, col = regressor.
        for (lhs, term) in desc.regressions() {
            b.set(
                MatrixId::Beta,
                om[lhs],
                om[term.name.as_str()],
                SlotSpec::from_term(term, 0.0, f64::NEG_INFINITY),
            );
        }

        // Λ: identity for observed structural variables.
        for k in 0..n_x {
            b.set(MatrixId::Lambda, n_y + k, n_eta + k, SlotSpec::Fixed(1.0));
        }
        for latent in taxonomy.latents() {
            let col = om[latent.as_str()];
            let mut terms: Vec<&Term> = desc
                .loadings()
                .filter(|(l, _)| *l == latent)
                .map(|(_, t)| t)
                .collect();
            if terms.is_empty() {
                return Err(Error::Contradiction {
                    variable: latent.clone(),
                    message: "latent variable has no manifest variables".into(),
                });
            }
            terms.sort_by(|a, b| a.name.as_bytes().cmp(b.name.as_bytes()));
            let user_fixed = terms.iter().find(|t| t.fixed.is_some());
            let (reference, scale) = match user_fixed {
                Some(t) => (t.name.as_str(), t.fixed.unwrap_or(1.0)),
                None => (terms[0].name.as_str(), 1.0),
            };
            let r = zi[reference];
            for t in &terms {
                let row = zi[t.name.as_str()];
                let spec = if user_fixed.is_none() && t.name == reference {
                    SlotSpec::Fixed(1.0)
                } else {
                    let start = if s[(r, r)] > 0.0 {
                        scale * s[(row, r)] / s[(r, r)]
                    } else {
                        0.0
                    };
                    SlotSpec::from_term(t, start, f64::NEG_INFINITY)
                };
                b.set(MatrixId::Lambda, row, col, spec);
            }
        }

        // Ψ default blocks.
        let kinds: Vec<VarKind> = omega
            .iter()
            .map(|v| taxonomy.kind_of(v).expect("omega variables are classified"))
            .collect();
        let zx = |i: usize| n_y + (i - n_eta);
        for i in 0..omega.len() {
            for j in i..omega.len() {
                let (ki, kj) = (kinds[i], kinds[j]);
                let both_x1 =
                    ki == VarKind::ObservedExogenous && kj == VarKind::ObservedExogenous;
                let spec = if both_x1 {
                    Some(SlotSpec::Fixed(s[(zx(i), zx(j))]))
                } else if i == j {
                    Some(SlotSpec::Free {
                        start: PSI_VARIANCE_START,
                        lower: 0.0,
                    })
                } else if (ki == VarKind::LatentExogenous && kj == VarKind::LatentExogenous)
                    || (ki.is_endogenous()
                        && kj.is_endogenous()
                        && !taxonomy.regressors.contains(&omega[i])
                        && !taxonomy.regressors.contains(&omega[j]))
                {
                    Some(SlotSpec::Free {
                        start: 0.0,
                        lower: f64::NEG_INFINITY,
                    })
                } else {
                    None
                };
                if let Some(spec) = spec {
                    b.set(MatrixId::Psi, i, j, spec);
                }
            }
        }

        // Θ̃: free manifest residual variances.
        for k in 0..n_y {
            b.set(
                MatrixId::Theta,
                k,
                k,
                SlotSpec::Free {
                    start: 0.5 * s[(k, k)],
                    lower: 0.0,
                },
            );
        }

        // user covariances override the defaults
        for (lhs, term) in desc.covariances() {
            let rhs = term.name.as_str();
            let diag = lhs == rhs;
            let lower = if diag { 0.0 } else { f64::NEG_INFINITY };
            match (om.get(lhs), om.get(rhs)) {
                (Some(&i), Some(&j)) => {
                    let start = if diag && kinds[i] == VarKind::ObservedExogenous {
                        s[(zx(i), zx(i))]
                    } else if diag {
                        PSI_VARIANCE_START
                    } else {
                        0.0
                    };
                    b.set(MatrixId::Psi, i, j, SlotSpec::from_term(term, start, lower));
                }
                _ => {
                    let (i, j) = (zi[lhs], zi[rhs]);
                    let start = if diag { 0.5 * s[(i, i)] } else { 0.0 };
                    b.set(MatrixId::Theta, i, j, SlotSpec::from_term(term, start, lower));
                }
            }
        }

        let (placements, params) = b.finish();
        Ok(ParamSystem {
            omega,
            z,
            n_eta,
            n_x,
            n_y,
            placements,
            params,
        })
    }

    /// Independence model over `names`: a free variance per observed variable, all
    /// coefficients, loadings and covariances zero.
    pub fn independence(sample: &SampleCovariance) -> Self {
        let names = sample.names.clone();
        let k = names.len();
        let mut placements = Vec::new();
        let mut params = Vec::new();
        for i in 0..k {
            placements.push(Placement {
                matrix: MatrixId::Lambda,
                row: i,
                col: i,
                slot: Slot::Fixed(1.0),
            });
            placements.push(Placement {
                matrix: MatrixId::Psi,
                row: i,
                col: i,
                slot: Slot::Param(params.len()),
            });
            params.push(Parameter {
                lval: names[i].clone(),
                op: Operator::Covariance,
                rval: names[i].clone(),
                matrix: MatrixId::Psi,
                row: i,
                col: i,
                start: sample.cov[(i, i)],
                lower: 0.0,
                upper: f64::INFINITY,
            });
        }
        ParamSystem {
            omega: names.clone(),
            z: names,
            n_eta: 0,
            n_x: k,
            n_y: 0,
            placements,
            params,
        }
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn n_omega(&self) -> usize {
        self.omega.len()
    }

    pub fn n_z(&self) -> usize {
        self.z.len()
    }

    pub fn start(&self) -> DVector<f64> {
        DVector::from_iterator(self.params.len(), self.params.iter().map(|p| p.start))
    }

    pub fn lower(&self) -> DVector<f64> {
        DVector::from_iterator(self.params.len(), self.params.iter().map(|p| p.lower))
    }

    pub fn upper(&self) -> DVector<f64> {
        DVector::from_iterator(self.params.len(), self.params.iter().map(|p| p.upper))
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(Parameter::name).collect()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name() == name)
    }

    /// Shape of a matrix.
    pub fn shape(&self, id: MatrixId) -> (usize, usize) {
        let (q, p) = (self.n_omega(), self.n_z());
        match id {
            MatrixId::Beta | MatrixId::Psi => (q, q),
            MatrixId::Lambda => (p, q),
            MatrixId::Theta => (p, p),
        }
    }

    pub fn cell(&self, id: MatrixId, row: usize, col: usize) -> Cell {
        let (row, col) = if id.is_symmetric() && row > col {
            (col, row)
        } else {
            (row, col)
        };
        self.placements
            .iter()
            .find(|p| p.matrix == id && p.row == row && p.col == col)
            .map(|p| match p.slot {
                Slot::Fixed(v) => Cell::Fixed(v),
                Slot::Param(i) => Cell::Free(i),
            })
            .unwrap_or(Cell::Zero)
    }

    /// Writes θ into the matrices.
    pub fn matrices(&self, theta: &DVector<f64>) -> Result<Matrices> {
        if theta.len() != self.params.len() {
            return Err(Error::Dimension {
                expected: self.params.len(),
                got: theta.len(),
            });
        }
        let (q, p) = (self.n_omega(), self.n_z());
        let mut m = Matrices {
            beta: DMatrix::zeros(q, q),
            lambda: DMatrix::zeros(p, q),
            psi: DMatrix::zeros(q, q),
            theta: DMatrix::zeros(p, p),
        };
        for pl in &self.placements {
            let v = match pl.slot {
                Slot::Fixed(v) => v,
                Slot::Param(i) => theta[i],
            };
            let mat = m.get_mut(pl.matrix);
            mat[(pl.row, pl.col)] = v;
            if pl.matrix.is_symmetric() {
                mat[(pl.col, pl.row)] = v;
            }
        }
        Ok(m)
    }

    /// Reads θ back out of matrices produced by [`ParamSystem::matrices`].
    pub fn read_back(&self, m: &Matrices) -> DVector<f64> {
        let mut theta = DVector::zeros(self.params.len());
        for pl in &self.placements {
            if let Slot::Param(i) = pl.slot {
                theta[i] = m.get(pl.matrix)[(pl.row, pl.col)];
            }
        }
        theta
    }

    /// Clamps θ into the parameter bounds.
    pub fn project(&self, theta: &mut DVector<f64>) {
        for (t, p) in theta.iter_mut().zip(&self.params) {
            *t = t.clamp(p.lower, p.upper);
        }
    }

    /// θ as a name → value map.
    pub fn named(&self, theta: &DVector<f64>) -> BTreeMap<String, f64> {
        self.params
            .iter()
            .zip(theta.iter())
            .map(|(p, v)| (p.name(), *v))
            .collect()
    }
}
