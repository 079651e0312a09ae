mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use semforge::model::{Cell, MatrixId};
use semforge::{parse, Dataset, Model};

fn dataset(names: &[&str], rows: usize, seed: u64, mix: &[(usize, usize, f64)]) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut m = DMatrix::from_fn(rows, names.len(), |_, _| normal.sample(&mut rng));
    for &(to, from, w) in mix {
        let col = m.column(from) * w;
        let mut target = m.column_mut(to);
        target += col;
    }
    Dataset::new(names.iter().map(|s| s.to_string()).collect(), m).unwrap()
}

#[test]
fn loading_start_is_the_ols_slope() {
    let data = dataset(&["y1", "y2"], 300, 1, &[(1, 0, 0.7)]);
    let model = Model::new(parse("eta =~ y1 + y2").unwrap(), &data).unwrap();
    let (y1, y2) = (data.rows().column(0), data.rows().column(1));
    let (m1, m2) = (y1.mean(), y2.mean());
    let slope = y1.iter().zip(y2.iter()).map(|(a, b)| (a - m1) * (b - m2)).sum::<f64>()
        / y1.iter().map(|a| (a - m1).powi(2)).sum::<f64>();
    let ps = &model.params;
    let (r1, r2, c) = (ps.z.iter().position(|z| z == "y1").unwrap(), ps.z.iter().position(|z| z == "y2").unwrap(), 0);
    assert_eq!(ps.cell(MatrixId::Lambda, r1, c), Cell::Fixed(1.0));
    let Cell::Free(i) = ps.cell(MatrixId::Lambda, r2, c) else { panic!() };
    assert!((model.start()[i] - slope).abs() < 1e-12);
    let Cell::Free(t) = ps.cell(MatrixId::Theta, r1, r1) else { panic!() };
    let var1 = y1.iter().map(|a| (a - m1).powi(2)).sum::<f64>() / 299.0;
    assert!((model.start()[t] - var1 / 2.0).abs() < 1e-12);
}

#[test]
fn smallest_model() {
    let data = dataset(&["x1", "x2"], 100, 2, &[(0, 1, 0.5)]);
    let model = Model::new(parse("x1 ~ x2").unwrap(), &data).unwrap();
    let ps = &model.params;
    let beta_free = ps.params.iter().filter(|p| p.matrix == MatrixId::Beta).count();
    assert_eq!(beta_free, 1);
    let j = ps.omega.iter().position(|v| v == "x2").unwrap();
    let s = ps.z.iter().position(|v| v == "x2").unwrap();
    assert_eq!(ps.cell(MatrixId::Psi, j, j), Cell::Fixed(model.sample.cov[(s, s)]));
}

#[test]
fn missing_column_is_an_error() {
    let data = dataset(&["y1", "y2"], 50, 3, &[]);
    assert!(Model::new(parse("eta =~ y1 + y2 + y3").unwrap(), &data).is_err());
}

#[test]
fn csv_ingestion_skips_index_column() {
    let csv = "idx,a,b\nr1,1.0,2.0\nr2,2.0,1.0\nr3,4.0,4.5\n";
    let d = Dataset::from_csv_reader(csv.as_bytes()).unwrap();
    assert_eq!(d.names(), ["a", "b"]);
    assert_eq!(d.n_samples(), 3);
    assert!(Dataset::from_csv_reader("i,a\n0,x\n".as_bytes()).is_err());
    let mut out = Vec::new();
    d.write_csv(&mut out).unwrap();
    assert_eq!(Dataset::from_csv_reader(out.as_slice()).unwrap(), d);
}

#[test]
fn sigma_matches_large_sample_covariance() {
    let mut cfg = semforge::generator::GenConfig::preset(3).unwrap().with_seed(11);
    cfg.n_samples = 100_000;
    let case = semforge::generator::generate(&cfg).unwrap();
    let model = model_of(&case);
    let mut theta = truth_start(&model, &case.params);
    // residual variances are the generator's noise plus the unit exogenous draws
    for (i, p) in model.params.params.iter().enumerate() {
        if p.is_variance() {
            let exo = p.matrix == MatrixId::Psi && model.taxonomy.kind_of(&p.lval).is_some_and(|k| !k.is_endogenous());
            theta[i] = semforge::generator::NOISE_VARIANCE + if exo { 1.0 } else { 0.0 };
        }
    }
    let sigma = model.sigma(&theta).unwrap();
    let s = &model.sample.cov;
    let n = model.sample.n as f64;
    for i in 0..s.nrows() {
        for j in 0..s.ncols() {
            // Wishart variance of a sample covariance entry
            let se = ((sigma[(i, j)].powi(2) + sigma[(i, i)] * sigma[(j, j)]) / n).sqrt();
            assert!((s[(i, j)] - sigma[(i, j)]).abs() < 5.0 * se, "({i},{j}) {} vs {}", s[(i, j)], sigma[(i, j)]);
        }
    }
}

#[test]
fn example_model_start_is_positive_semidefinite() {
    let names: Vec<String> = ["y1", "y2", "y3", "y4", "y5", "y6", "x1", "x2", "x3", "x4", "x5"].iter().map(|s| s.to_string()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let a = DMatrix::from_fn(11, 11, |_, _| normal.sample(&mut rng));
    let cov = &a * a.transpose() / 11.0 + DMatrix::identity(11, 11) * 0.1;
    let model = Model::from_covariance(parse(FIG1).unwrap(), &names, &cov, 300).unwrap();
    let sigma = model.sigma(&model.start()).unwrap();
    assert!((&sigma - sigma.transpose()).amax() < 1e-12);
    let min = sigma.symmetric_eigenvalues().min();
    assert!(min >= -1e-10, "{min}");
}

#[test]
fn structural_invariants_over_generated_models() {
    for (k, seed) in seeds(12, 30).into_iter().enumerate() {
        let case = case(1 + k % 15, seed);
        let model = model_of(&case);
        let ps = &model.params;
        let (ny, nx, ne) = (ps.n_y, ps.n_x, ps.n_eta);
        // Λ: identity over the x block, nothing else in the x rows or x columns
        for r in 0..ny + nx {
            for c in 0..ne + nx {
                let cell = ps.cell(MatrixId::Lambda, r, c);
                if r >= ny || c >= ne {
                    let want = if r >= ny && c >= ne && r - ny == c - ne { Cell::Fixed(1.0) } else { Cell::Zero };
                    assert_eq!(cell, want, "Λ[{r},{c}]");
                }
            }
        }
        // each latent column has exactly one loading fixed at 1
        for c in 0..ne {
            let ones = (0..ny).filter(|&r| ps.cell(MatrixId::Lambda, r, c) == Cell::Fixed(1.0)).count();
            assert_eq!(ones, 1);
        }
        // Θ only in the manifest block
        for r in 0..ny + nx {
            for c in 0..ny + nx {
                if r >= ny || c >= ny {
                    assert_eq!(ps.cell(MatrixId::Theta, r, c), Cell::Zero);
                }
            }
        }
        for p in &ps.params {
            if p.is_variance() {
                assert_eq!(p.lower, 0.0, "{}", p.name());
            }
        }
        // write-back round trip and symmetry
        let theta = DVector::from_fn(ps.n_params(), |i, _| 0.1 + 0.01 * i as f64);
        let m = ps.matrices(&theta).unwrap();
        assert_eq!(ps.read_back(&m), theta);
        assert_eq!(m.psi, m.psi.transpose());
        assert_eq!(m.theta, m.theta.transpose());
        if let Ok(sigma) = model.sigma(&theta) {
            assert!((&sigma - sigma.transpose()).amax() <= 1e-12 * sigma.amax().max(1.0));
        }
        // statement order does not change the parameter count
        let mut desc = model.desc.clone();
        desc.statements.reverse();
        let reordered = Model::new(desc, &case.dataset).unwrap();
        assert_eq!(reordered.n_params(), model.n_params());
    }
}
