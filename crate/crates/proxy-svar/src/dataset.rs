//! Input data: endogenous series, proxy columns, and their sample windows.

use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Endogenous observations with optional proxy series.
///
/// Proxies may cover a shorter window than the endogenous sample (ragged
/// samples): `window_u` is the row range used to fit the VAR and estimate
/// the innovation covariance, `window_w` / `window_z` are the row ranges on
/// which the respective proxies are observed. Proxy entries outside their
/// window are ignored (NaN allowed there, nowhere else).
#[derive(Debug, Clone)]
pub struct TimeSeriesDataset {
    /// Endogenous observations, T x n.
    pub y: DMatrix<f64>,
    /// Proxies for non-target shocks, T x s.
    pub w: Option<DMatrix<f64>>,
    /// Proxies for target shocks, T x r.
    pub z: Option<DMatrix<f64>>,
    pub window_u: Range<usize>,
    pub window_w: Range<usize>,
    pub window_z: Range<usize>,
    pub names: Vec<String>,
    pub w_names: Vec<String>,
    pub z_names: Vec<String>,
}

impl TimeSeriesDataset {
    /// Dataset covering the full sample for every series.
    pub fn new(y: DMatrix<f64>, w: Option<DMatrix<f64>>, z: Option<DMatrix<f64>>) -> Result<Self> {
        let t = y.nrows();
        let ds = TimeSeriesDataset {
            window_u: 0..t,
            window_w: 0..if w.is_some() { t } else { 0 },
            window_z: 0..if z.is_some() { t } else { 0 },
            names: (0..y.ncols()).map(|i| format!("y{}", i + 1)).collect(),
            w_names: w
                .iter()
                .flat_map(|m| (0..m.ncols()).map(|i| format!("w{}", i + 1)))
                .collect(),
            z_names: z
                .iter()
                .flat_map(|m| (0..m.ncols()).map(|i| format!("z{}", i + 1)))
                .collect(),
            y,
            w,
            z,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn t_rows(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_vars(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_w(&self) -> usize {
        self.w.as_ref().map_or(0, |m| m.ncols())
    }

    pub fn n_z(&self) -> usize {
        self.z.as_ref().map_or(0, |m| m.ncols())
    }

    fn validate(&self) -> Result<()> {
        let t = self.y.nrows();
        if self.window_u.end > t || self.window_u.is_empty() {
            return Err(Error::Invalid("window_u out of range".into()));
        }
        for r in self.window_u.clone() {
            for c in 0..self.y.ncols() {
                if !self.y[(r, c)].is_finite() {
                    return Err(Error::Invalid(format!(
                        "non-finite endogenous value at row {r}, column {c}"
                    )));
                }
            }
        }
        for (mat, win, label) in [
            (&self.w, &self.window_w, "w"),
            (&self.z, &self.window_z, "z"),
        ] {
            if let Some(m) = mat {
                if m.nrows() != t {
                    return Err(Error::Dimension(format!(
                        "{label} has {} rows, expected {t}",
                        m.nrows()
                    )));
                }
                if win.end > t || win.is_empty() {
                    return Err(Error::Invalid(format!("window_{label} out of range")));
                }
                for r in win.clone() {
                    for c in 0..m.ncols() {
                        if !m[(r, c)].is_finite() {
                            return Err(Error::Invalid(format!(
                                "non-finite {label} value at row {r}, column {c}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Read a dataset from a headed CSV file, assigning columns to roles.
    ///
    /// Empty cells in proxy columns mark unobserved rows; the observed rows
    /// of each proxy block must form one contiguous window. Empty cells in
    /// endogenous columns are rejected.
    pub fn from_csv(
        path: &Path,
        endogenous: &[String],
        proxy_w: &[String],
        proxy_z: &[String],
    ) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let col_idx = |name: &String| -> Result<usize> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Config(format!("column '{name}' not found in CSV header")))
        };
        let e_idx: Vec<usize> = endogenous.iter().map(col_idx).collect::<Result<_>>()?;
        let w_idx: Vec<usize> = proxy_w.iter().map(col_idx).collect::<Result<_>>()?;
        let z_idx: Vec<usize> = proxy_z.iter().map(col_idx).collect::<Result<_>>()?;

        let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let parsed: Vec<Option<f64>> = record
                .iter()
                .map(|cell| {
                    let cell = cell.trim();
                    if cell.is_empty() {
                        Ok(None)
                    } else {
                        cell.parse::<f64>().map(Some).map_err(|_| {
                            Error::Invalid(format!("cannot parse '{cell}' as a number"))
                        })
                    }
                })
                .collect::<Result<_>>()?;
            rows.push(parsed);
        }
        let t = rows.len();
        if t == 0 {
            return Err(Error::InsufficientSample("CSV has no data rows".into()));
        }

        let mut y = DMatrix::zeros(t, e_idx.len());
        for (r, row) in rows.iter().enumerate() {
            for (c, &ci) in e_idx.iter().enumerate() {
                y[(r, c)] = row.get(ci).copied().flatten().ok_or_else(|| {
                    Error::Invalid(format!("missing endogenous value at row {}", r + 1))
                })?;
            }
        }

        let read_block = |idx: &[usize], label: &str| -> Result<(Option<DMatrix<f64>>, Range<usize>)> {
            if idx.is_empty() {
                return Ok((None, 0..0));
            }
            let observed: Vec<bool> = rows
                .iter()
                .map(|row| idx.iter().all(|&ci| row.get(ci).copied().flatten().is_some()))
                .collect();
            let start = observed.iter().position(|&b| b).ok_or_else(|| {
                Error::Invalid(format!("proxy block '{label}' has no observed rows"))
            })?;
            let end = t - observed.iter().rev().position(|&b| b).unwrap();
            if observed[start..end].iter().any(|&b| !b) {
                return Err(Error::Invalid(format!(
                    "proxy block '{label}' has interior gaps; its window must be contiguous"
                )));
            }
            let mut m = DMatrix::from_element(t, idx.len(), f64::NAN);
            for r in start..end {
                for (c, &ci) in idx.iter().enumerate() {
                    m[(r, c)] = rows[r][ci].unwrap();
                }
            }
            Ok((Some(m), start..end))
        };

        let (w, window_w) = read_block(&w_idx, "w")?;
        let (z, window_z) = read_block(&z_idx, "z")?;

        let ds = TimeSeriesDataset {
            y,
            w,
            z,
            window_u: 0..t,
            window_w,
            window_z,
            names: endogenous.to_vec(),
            w_names: proxy_w.to_vec(),
            z_names: proxy_z.to_vec(),
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Write the dataset to a headed CSV file; proxy rows outside their
    /// window are left empty.
    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = self.names.clone();
        header.extend(self.w_names.iter().cloned());
        header.extend(self.z_names.iter().cloned());
        wtr.write_record(&header)?;
        for r in 0..self.t_rows() {
            let mut row: Vec<String> = Vec::with_capacity(header.len());
            for c in 0..self.n_vars() {
                row.push(format!("{:.17e}", self.y[(r, c)]));
            }
            if let Some(w) = &self.w {
                for c in 0..w.ncols() {
                    if self.window_w.contains(&r) {
                        row.push(format!("{:.17e}", w[(r, c)]));
                    } else {
                        row.push(String::new());
                    }
                }
            }
            if let Some(z) = &self.z {
                for c in 0..z.ncols() {
                    if self.window_z.contains(&r) {
                        row.push(format!("{:.17e}", z[(r, c)]));
                    } else {
                        row.push(String::new());
                    }
                }
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}
