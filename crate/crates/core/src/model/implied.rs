//! Model-implied covariance and its derivatives with respect to θ.
//!
//! With `C = (I - B)⁻¹` and `M = Λ C`, the implied covariance of `z` is
//! `Σ = M Ψ Mᵀ + Θ`. A free parameter in cell `(r, c)` perturbs exactly one of the
//! four matrices, which gives closed forms for `∂Σ/∂θᵢ`:
//!
//! * `B`: `∂M = M E_rc C`, so `∂Σ = M[:,r] G[c,:] + (·)ᵀ` with `G = C Ψ Mᵀ`
//! * `Λ`: `∂M = E_rc C`, so `∂Σ = e_r G[c,:] + (·)ᵀ`
//! * `Ψ`: `∂Σ = M (E_rc + E_cr) Mᵀ`
//! * `Θ`: `∂Σ = E_rc + E_cr`
//!
//! Diagonal cells of the symmetric matrices use a single `E_rr`.

use nalgebra::{DMatrix, DVector};

use super::params::{Matrices, MatrixId, ParamSystem, Slot};
use crate::dataset::symmetrize;
use crate::error::{Error, Result};

/// Σ(θ) together with the intermediates needed for derivatives.
#[derive(Debug, Clone)]
pub struct Implied {
    pub matrices: Matrices,
    /// `(I - B)⁻¹`
    pub c: DMatrix<f64>,
    /// `Λ (I - B)⁻¹`
    pub m: DMatrix<f64>,
    /// `C Ψ Mᵀ`
    pub g: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

fn structure_inverse(beta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let q = beta.nrows();
    let a = DMatrix::identity(q, q) - beta;
    let lu = a.lu();
    let pivots = lu.u().diagonal();
    let max = pivots.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if pivots.iter().any(|v| !(v.abs() > 1e-12 * max)) {
        return Err(Error::SingularStructure);
    }
    lu.try_inverse().ok_or(Error::SingularStructure)
}

impl Implied {
    pub fn new(ps: &ParamSystem, theta: &DVector<f64>) -> Result<Self> {
        let matrices = ps.matrices(theta)?;
        let c = structure_inverse(&matrices.beta)?;
        let m = &matrices.lambda * &c;
        let g = &c * &matrices.psi * m.transpose();
        let mut sigma = &m * &matrices.psi * m.transpose() + &matrices.theta;
        symmetrize(&mut sigma);
        Ok(Implied {
            matrices,
            c,
            m,
            g,
            sigma,
        })
    }

    /// `∂/∂θᵢ tr[W Σ(θ)]` for every free parameter, given a symmetric weight `W`.
    ///
    /// All three discrepancy functions have gradients of this form.
    pub fn weighted_gradient(&self, ps: &ParamSystem, w: &DMatrix<f64>) -> DVector<f64> {
        let mt_w = self.m.transpose() * w;
        let beta_part = &mt_w * self.g.transpose();
        let lambda_part = w * self.g.transpose();
        let psi_part = &mt_w * &self.m;
        let mut grad = DVector::zeros(ps.n_params());
        for pl in &ps.placements {
            let Slot::Param(i) = pl.slot else { continue };
            let (r, c) = (pl.row, pl.col);
            grad[i] += match pl.matrix {
                MatrixId::Beta => 2.0 * beta_part[(r, c)],
                MatrixId::Lambda => 2.0 * lambda_part[(r, c)],
                MatrixId::Psi if r == c => psi_part[(r, r)],
                MatrixId::Psi => 2.0 * psi_part[(r, c)],
                MatrixId::Theta if r == c => w[(r, r)],
                MatrixId::Theta => 2.0 * w[(r, c)],
            };
        }
        grad
    }

    /// Pieces of the first derivative of `M` and `Ψ` for one parameter cell.
    fn first_order(&self, matrix: MatrixId, r: usize, c: usize) -> FirstOrder {
        let p = self.m.nrows();
        let q = self.c.nrows();
        match matrix {
            MatrixId::Beta => FirstOrder {
                dm: Some(self.m.column(r) * self.c.row(c)),
                dpsi: None,
                dtheta: None,
            },
            MatrixId::Lambda => {
                let mut dm = DMatrix::zeros(p, q);
                dm.row_mut(r).copy_from(&self.c.row(c));
                FirstOrder {
                    dm: Some(dm),
                    dpsi: None,
                    dtheta: None,
                }
            }
            MatrixId::Psi => FirstOrder {
                dm: None,
                dpsi: Some(sym_unit(q, r, c)),
                dtheta: None,
            },
            MatrixId::Theta => FirstOrder {
                dm: None,
                dpsi: None,
                dtheta: Some(sym_unit(p, r, c)),
            },
        }
    }

    /// Dense `∂Σ/∂θᵢ` for every free parameter.
    pub fn sigma_derivatives(&self, ps: &ParamSystem) -> Vec<DMatrix<f64>> {
        let p = self.m.nrows();
        let mut out = vec![DMatrix::zeros(p, p); ps.n_params()];
        for pl in &ps.placements {
            let Slot::Param(i) = pl.slot else { continue };
            let fo = self.first_order(pl.matrix, pl.row, pl.col);
            out[i] += self.sigma_first(&fo);
        }
        out
    }

    fn sigma_first(&self, fo: &FirstOrder) -> DMatrix<f64> {
        let p = self.m.nrows();
        let mut d = DMatrix::zeros(p, p);
        if let Some(dm) = &fo.dm {
            let x = dm * &self.matrices.psi * self.m.transpose();
            d += &x + x.transpose();
        }
        if let Some(dpsi) = &fo.dpsi {
            d += &self.m * dpsi * self.m.transpose();
        }
        if let Some(dt) = &fo.dtheta {
            d += dt;
        }
        d
    }

    /// Dense second derivatives `∂²Σ/∂θᵢ∂θⱼ`, returned as a lookup over pairs with
    /// `i <= j`. Pairs whose second derivative vanishes are `None`.
    pub fn sigma_second_derivatives(&self, ps: &ParamSystem) -> SecondDerivatives {
        let m = ps.n_params();
        let cells: Vec<Vec<(MatrixId, usize, usize)>> = {
            let mut v = vec![Vec::new(); m];
            for pl in &ps.placements {
                if let Slot::Param(i) = pl.slot {
                    v[i].push((pl.matrix, pl.row, pl.col));
                }
            }
            v
        };
        let firsts: Vec<Vec<FirstOrder>> = cells
            .iter()
            .map(|cs| cs.iter().map(|&(mx, r, c)| self.first_order(mx, r, c)).collect())
            .collect();
        let mut table = vec![None; m * (m + 1) / 2];
        for i in 0..m {
            for j in i..m {
                let mut acc: Option<DMatrix<f64>> = None;
                for (a, fa) in cells[i].iter().zip(&firsts[i]) {
                    for (b, fb) in cells[j].iter().zip(&firsts[j]) {
                        if let Some(d) = self.sigma_second(*a, fa, *b, fb) {
                            match &mut acc {
                                Some(x) => *x += d,
                                None => acc = Some(d),
                            }
                        }
                    }
                }
                table[pair_index(m, i, j)] = acc;
            }
        }
        SecondDerivatives { m, table }
    }

    fn second_m(
        &self,
        a: (MatrixId, usize, usize),
        b: (MatrixId, usize, usize),
    ) -> Option<DMatrix<f64>> {
        let p = self.m.nrows();
        let q = self.c.nrows();
        let c = &self.c;
        match (a, b) {
            ((MatrixId::Beta, r1, c1), (MatrixId::Beta, r2, c2)) => {
                // M E₂ C E₁ C + M E₁ C E₂ C
                let x = self.m.column(r2) * c.row(c1) * c[(c2, r1)]
                    + self.m.column(r1) * c.row(c2) * c[(c1, r2)];
                Some(x)
            }
            ((MatrixId::Lambda, r1, c1), (MatrixId::Beta, r2, c2))
            | ((MatrixId::Beta, r2, c2), (MatrixId::Lambda, r1, c1)) => {
                // E₁ C E₂ C
                let mut x = DMatrix::zeros(p, q);
                x.row_mut(r1).copy_from(&(c.row(c2) * c[(c1, r2)]));
                Some(x)
            }
            _ => None,
        }
    }

    fn sigma_second(
        &self,
        a: (MatrixId, usize, usize),
        fa: &FirstOrder,
        b: (MatrixId, usize, usize),
        fb: &FirstOrder,
    ) -> Option<DMatrix<f64>> {
        let mt = self.m.transpose();
        let psi = &self.matrices.psi;
        let mut acc: Option<DMatrix<f64>> = None;
        let mut add = |x: DMatrix<f64>| {
            let s = &x + x.transpose();
            match &mut acc {
                Some(a) => *a += s,
                None => acc = Some(s),
            }
        };
        if let Some(d2m) = self.second_m(a, b) {
            add(d2m * psi * &mt);
        }
        if let (Some(dmi), Some(dmj)) = (&fa.dm, &fb.dm) {
            add(dmi * psi * dmj.transpose());
        }
        if let (Some(dmi), Some(dpj)) = (&fa.dm, &fb.dpsi) {
            add(dmi * dpj * &mt);
        }
        if let (Some(dmj), Some(dpi)) = (&fb.dm, &fa.dpsi) {
            add(dmj * dpi * &mt);
        }
        acc
    }
}

struct FirstOrder {
    dm: Option<DMatrix<f64>>,
    dpsi: Option<DMatrix<f64>>,
    dtheta: Option<DMatrix<f64>>,
}

fn sym_unit(n: usize, r: usize, c: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(n, n);
    e[(r, c)] = 1.0;
    e[(c, r)] = 1.0;
    e
}

fn pair_index(m: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * m - i * (i + 1) / 2 + j
}

/// Symmetric table of `∂²Σ/∂θᵢ∂θⱼ`.
pub struct SecondDerivatives {
    m: usize,
    table: Vec<Option<DMatrix<f64>>>,
}

impl SecondDerivatives {
    pub fn get(&self, i: usize, j: usize) -> Option<&DMatrix<f64>> {
        self.table[pair_index(self.m, i, j)].as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SampleCovariance;
    use crate::model::taxonomy::VariableTaxonomy;
    use crate::syntax::parse;

    fn system(text: &str) -> ParamSystem {
        let desc = parse(text).unwrap();
        let tax = VariableTaxonomy::classify(&desc).unwrap();
        let z = tax.z();
        let p = z.len();
        let cov = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 + i as f64 * 0.1 } else { 0.3 });
        let s = SampleCovariance::from_covariance(z, cov, 100).unwrap();
        ParamSystem::build(&desc, &tax, &s).unwrap()
    }

    fn perturbed(ps: &ParamSystem) -> DVector<f64> {
        DVector::from_iterator(
            ps.n_params(),
            ps.params.iter().enumerate().map(|(i, p)| {
                let wiggle = ((i * 7919) % 13) as f64 / 13.0 - 0.5;
                if p.is_variance() {
                    0.5 + wiggle.abs()
                } else {
                    0.3 * wiggle + p.start
                }
            }),
        )
    }

    const MODEL: &str = "eta1 =~ y1 + y2 + y3\neta2 =~ y4 + y5\neta2 ~ eta1 + x1\nx2 ~ eta2\nx1 ~ x3\ny1 ~~ y4";

    #[test]
    fn identity_measurement_gives_psi() {
        let ps = system("x1 ~~ x2\nx1 ~~ x1\nx2 ~~ x2");
        let theta = DVector::from_vec(vec![0.7, 2.0, 3.0]);
        let imp = Implied::new(&ps, &theta).unwrap();
        assert_eq!(imp.sigma, imp.matrices.psi);
    }

    #[test]
    fn first_derivatives_match_differences() {
        let ps = system(MODEL);
        let theta = perturbed(&ps);
        let imp = Implied::new(&ps, &theta).unwrap();
        let d = imp.sigma_derivatives(&ps);
        let h = 1e-6;
        for i in 0..ps.n_params() {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[i] += h;
            tm[i] -= h;
            let fd = (Implied::new(&ps, &tp).unwrap().sigma
                - Implied::new(&ps, &tm).unwrap().sigma)
                / (2.0 * h);
            assert!((&fd - &d[i]).amax() < 1e-7, "param {}", ps.params[i].name());
        }
    }

    #[test]
    fn second_derivatives_match_differences() {
        let ps = system(MODEL);
        let theta = perturbed(&ps);
        let imp = Implied::new(&ps, &theta).unwrap();
        let second = imp.sigma_second_derivatives(&ps);
        let h = 1e-5;
        let m = ps.n_params();
        for j in 0..m {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[j] += h;
            tm[j] -= h;
            let dp = Implied::new(&ps, &tp).unwrap().sigma_derivatives(&ps);
            let dm = Implied::new(&ps, &tm).unwrap().sigma_derivatives(&ps);
            for i in 0..m {
                let fd = (&dp[i] - &dm[i]) / (2.0 * h);
                let an = second
                    .get(i, j)
                    .cloned()
                    .unwrap_or_else(|| DMatrix::zeros(fd.nrows(), fd.ncols()));
                assert!(
                    (&fd - &an).amax() < 1e-6,
                    "pair {} / {}",
                    ps.params[i].name(),
                    ps.params[j].name()
                );
            }
        }
    }

    #[test]
    fn weighted_gradient_matches_dense_traces() {
        let ps = system(MODEL);
        let theta = perturbed(&ps);
        let imp = Implied::new(&ps, &theta).unwrap();
        let p = ps.n_z();
        let w = DMatrix::from_fn(p, p, |i, j| ((i + 1) * (j + 1)) as f64 / 10.0 - 0.4);
        let g = imp.weighted_gradient(&ps, &w);
        for (i, d) in imp.sigma_derivatives(&ps).iter().enumerate() {
            let tr = (&w * d).trace();
            assert!((tr - g[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn singular_structure_is_an_error() {
        let ps = system("x1 ~ x2\nx2 ~ x1");
        let mut theta = ps.start();
        for (i, p) in ps.params.iter().enumerate() {
            if p.matrix == MatrixId::Beta {
                theta[i] = 1.0;
            }
        }
        assert!(matches!(
            Implied::new(&ps, &theta),
            Err(Error::SingularStructure)
        ));
    }
}
