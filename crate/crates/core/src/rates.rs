//! Rate tables: `(parameter, value, stderr)` rows with a least-squares
//! log-log slope fit, the unit of experimental evidence everywhere in the
//! crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateRow {
    pub param: f64,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// RMS residual in log-log coordinates.
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    pub fit: Option<RateFit>,
}

/// Least-squares line through `(log param, log value)`.
pub fn fit_loglog_slope(rows: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    if rows.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "slope fit needs ≥ 3 rows, got {}",
            rows.len()
        )));
    }
    if rows.iter().any(|&(p, v)| !(p > 0.0) || !(v > 0.0)) {
        return Err(Error::InvalidParameter(
            "log-log fit needs strictly positive parameters and values".into(),
        ));
    }
    let n = rows.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(p, v) in rows {
        let (x, y) = (p.ln(), v.ln());
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-14 {
        return Err(Error::Numerical("degenerate abscissae in slope fit".into()));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let residual = (rows
        .iter()
        .map(|&(p, v)| {
            let r = v.ln() - (intercept + slope * p.ln());
            r * r
        })
        .sum::<f64>()
        / n)
        .sqrt();
    Ok((slope, intercept, residual))
}

impl RateTable {
    /// Build a table; parameters must be strictly increasing. The fit is
    /// attached when ≥ 3 rows carry positive values.
    pub fn from_rows(rows: Vec<RateRow>) -> Result<Self> {
        if rows.windows(2).any(|w| w[1].param <= w[0].param) {
            return Err(Error::InvalidParameter(
                "rate table parameters must be strictly increasing".into(),
            ));
        }
        let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.param, r.value)).collect();
        let fit = fit_loglog_slope(&pairs)
            .ok()
            .map(|(slope, intercept, residual)| RateFit { slope, intercept, residual });
        Ok(RateTable { rows, fit })
    }

    pub fn slope(&self) -> Option<f64> {
        self.fit.map(|f| f.slope)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("param,value,stderr\n");
        for r in &self.rows {
            s.push_str(&format!("{:.12e},{:.12e},{:.12e}\n", r.param, r.value, r.stderr));
        }
        s
    }
}
