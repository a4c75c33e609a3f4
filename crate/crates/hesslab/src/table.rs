//! Clamped linear and bilinear lookup tables.
//!
//! Breakpoints must be strictly increasing and finite. Queries outside the
//! breakpoint range are clamped to the nearest edge rather than extrapolated,
//! which is the conventional behavior for measured device maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One-dimensional lookup table with linear interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1D {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Table1D {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() < 2 || x.len() != y.len() {
            return Err(Error::InvalidArgument(format!(
                "table needs at least two breakpoints and matching value count, got {} x {} y",
                x.len(),
                y.len()
            )));
        }
        check_axis(&x, "x")?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("table values must be finite".into()));
        }
        Ok(Table1D { x, y })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// True when every value is at least `min`.
    pub fn values_at_least(&self, min: f64) -> bool {
        self.y.iter().all(|&v| v >= min)
    }

    /// True when values never decrease along the x axis.
    pub fn is_nondecreasing(&self) -> bool {
        self.y.windows(2).all(|w| w[1] >= w[0])
    }

    pub fn interp(&self, xq: f64) -> f64 {
        let x = &self.x;
        let y = &self.y;
        if xq <= x[0] {
            return y[0];
        }
        if xq >= x[x.len() - 1] {
            return y[y.len() - 1];
        }
        let i = partition(x, xq);
        let t = (xq - x[i]) / (x[i + 1] - x[i]);
        y[i] + t * (y[i + 1] - y[i])
    }
}

/// Two-dimensional lookup table with bilinear interpolation.
///
/// `z` is stored row-major: `z[i][j]` pairs with `(rows[i], cols[j])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2D {
    rows: Vec<f64>,
    cols: Vec<f64>,
    z: Vec<Vec<f64>>,
}

impl Table2D {
    pub fn new(rows: Vec<f64>, cols: Vec<f64>, z: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() < 2 || cols.len() < 2 {
            return Err(Error::InvalidArgument(
                "2-D table needs at least two breakpoints per axis".into(),
            ));
        }
        check_axis(&rows, "row")?;
        check_axis(&cols, "column")?;
        if z.len() != rows.len() || z.iter().any(|r| r.len() != cols.len()) {
            return Err(Error::InvalidArgument(
                "2-D table value grid does not match breakpoint counts".into(),
            ));
        }
        if z.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("table values must be finite".into()));
        }
        Ok(Table2D { rows, cols, z })
    }

    pub fn interp(&self, rq: f64, cq: f64) -> f64 {
        let rq = rq.clamp(self.rows[0], self.rows[self.rows.len() - 1]);
        let cq = cq.clamp(self.cols[0], self.cols[self.cols.len() - 1]);
        let i = partition(&self.rows, rq).min(self.rows.len() - 2);
        let j = partition(&self.cols, cq).min(self.cols.len() - 2);
        let tr = (rq - self.rows[i]) / (self.rows[i + 1] - self.rows[i]);
        let tc = (cq - self.cols[j]) / (self.cols[j + 1] - self.cols[j]);
        let z00 = self.z[i][j];
        let z01 = self.z[i][j + 1];
        let z10 = self.z[i + 1][j];
        let z11 = self.z[i + 1][j + 1];
        let low = z00 + tc * (z01 - z00);
        let high = z10 + tc * (z11 - z10);
        low + tr * (high - low)
    }
}

fn check_axis(x: &[f64], name: &str) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "{name} breakpoints must be finite"
        )));
    }
    if x.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(format!(
            "{name} breakpoints must be strictly increasing"
        )));
    }
    Ok(())
}

/// Index of the interval containing `xq`, assuming `x[0] < xq < x[last]`.
fn partition(x: &[f64], xq: f64) -> usize {
    match x.binary_search_by(|v| v.partial_cmp(&xq).unwrap()) {
        Ok(i) => i.min(x.len() - 2),
        Err(i) => i - 1,
    }
}
