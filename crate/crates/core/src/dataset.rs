//! Column-named sample data and the sample covariance derived from it.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix};

use crate::error::{Error, Result};

/// Samples in rows, variables in named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    rows: DMatrix<f64>,
}

impl Dataset {
    pub fn new(names: Vec<String>, rows: DMatrix<f64>) -> Result<Self> {
        if names.len() != rows.ncols() {
            return Err(Error::Data(format!(
                "{} column names for {} columns",
                names.len(),
                rows.ncols()
            )));
        }
        for (i, a) in names.iter().enumerate() {
            if names[..i].contains(a) {
                return Err(Error::Data(format!("duplicate column `{a}`")));
            }
        }
        if let Some(pos) = rows.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos % rows.nrows(), pos / rows.nrows());
            return Err(Error::Data(format!(
                "non-finite value in row {}, column `{}`",
                r + 1,
                names[c]
            )));
        }
        Ok(Dataset { names, rows })
    }

    /// Reads CSV with a header row; the first column is a row index and is ignored.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() < 2 {
            return Err(Error::Data(
                "expected an index column followed by at least one data column".into(),
            ));
        }
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut values = Vec::new();
        let mut n = 0;
        for (r, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != header.len() {
                return Err(Error::Data(format!(
                    "row {} has {} fields, header has {}",
                    r + 1,
                    record.len(),
                    header.len()
                )));
            }
            for (c, cell) in record.iter().skip(1).enumerate() {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::Data(format!(
                        "non-numeric value `{cell}` in row {}, column `{}`",
                        r + 1,
                        names[c]
                    ))
                })?;
                values.push(v);
            }
            n += 1;
        }
        let rows = DMatrix::from_row_slice(n, names.len(), &values);
        Dataset::new(names, rows)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(std::io::BufReader::new(file))
    }

    /// Writes the CSV layout accepted by [`Dataset::from_csv_reader`]. Values use the
    /// shortest representation that round-trips, so output is reproducible byte for byte.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![String::new()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for r in 0..self.rows.nrows() {
            let mut record = vec![r.to_string()];
            record.extend(self.rows.row(r).iter().map(|v| v.to_string()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn n_samples(&self) -> usize {
        self.rows.nrows()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Data restricted to `names`, in that order.
    pub fn select(&self, names: &[String]) -> Result<DMatrix<f64>> {
        let idx = names
            .iter()
            .map(|n| self.column_index(n).ok_or_else(|| Error::MissingColumn(n.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(self.rows.nrows(), idx.len(), |r, c| {
            self.rows[(r, idx[c])]
        }))
    }

    /// Unbiased (divide by n - 1) covariance of the named columns.
    pub fn covariance(&self, names: &[String]) -> Result<DMatrix<f64>> {
        if self.rows.nrows() < 2 {
            return Err(Error::Data("at least two rows are needed".into()));
        }
        Ok(covariance_of(&center(self.select(names)?)))
    }
}

pub(crate) fn center(mut data: DMatrix<f64>) -> DMatrix<f64> {
    for mut col in data.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    data
}

/// Covariance of already-centered rows.
pub(crate) fn covariance_of(centered: &DMatrix<f64>) -> DMatrix<f64> {
    let n = centered.nrows();
    let mut s = centered.tr_mul(centered) / (n as f64 - 1.0);
    symmetrize(&mut s);
    s
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Sample covariance `S` of the observed variables in model (`z`) order.
#[derive(Debug, Clone)]
pub struct SampleCovariance {
    pub names: Vec<String>,
    pub cov: DMatrix<f64>,
    pub n: usize,
    inverse: Option<DMatrix<f64>>,
    ln_det: Option<f64>,
    /// Centered rows in `names` order; present when built from raw data.
    centered: Option<DMatrix<f64>>,
}

impl SampleCovariance {
    pub fn from_dataset(data: &Dataset, names: &[String]) -> Result<Self> {
        if data.n_samples() < 2 {
            return Err(Error::Data("at least two rows are needed".into()));
        }
        let centered = center(data.select(names)?);
        let cov = covariance_of(&centered);
        let mut s = Self::from_covariance(names.to_vec(), cov, data.n_samples())?;
        s.centered = Some(centered);
        Ok(s)
    }

    pub fn from_covariance(names: Vec<String>, cov: DMatrix<f64>, n: usize) -> Result<Self> {
        if !cov.is_square() || cov.nrows() != names.len() {
            return Err(Error::Data("covariance shape does not match names".into()));
        }
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("covariance has non-finite entries".into()));
        }
        if (0..cov.nrows()).any(|i| cov[(i, i)] < 0.0) {
            return Err(Error::Data("covariance has a negative variance".into()));
        }
        let mut cov = cov;
        symmetrize(&mut cov);
        let (inverse, ln_det) = match Cholesky::new(cov.clone()) {
            Some(ch) => {
                let ln_det = 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                (Some(ch.inverse()), Some(ln_det))
            }
            None => (None, None),
        };
        Ok(SampleCovariance {
            names,
            cov,
            n,
            inverse,
            ln_det,
            centered: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    /// `S⁻¹`, or [`Error::SingularSample`] when `S` is not positive definite.
    pub fn inverse(&self) -> Result<&DMatrix<f64>> {
        self.inverse.as_ref().ok_or(Error::SingularSample)
    }

    pub fn ln_det(&self) -> Result<f64> {
        self.ln_det.ok_or(Error::SingularSample)
    }

    pub fn centered_rows(&self) -> Option<&DMatrix<f64>> {
        self.centered.as_ref()
    }
}
