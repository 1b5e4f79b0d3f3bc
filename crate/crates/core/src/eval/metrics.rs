use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Error metrics of a fine-level prediction against the truth. Percentage
/// metrics are fractions (0.25 means 25%).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mape: f64,
    pub mae: f64,
    pub rmse: f64,
    pub rmspe: f64,
    pub ape_per_region: Vec<f64>,
    /// Standard error of the mean APE over regions.
    pub std_error_ape: f64,
}

pub fn mape(truth: &[f64], pred: &[f64]) -> Result<MetricReport> {
    let names: Vec<String> = (0..truth.len()).map(|k| format!("#{k}")).collect();
    metrics(truth, pred, &names)
}

/// Like [`mape`], naming regions by id in errors.
pub fn metrics<S: AsRef<str>>(truth: &[f64], pred: &[f64], region_ids: &[S]) -> Result<MetricReport> {
    if truth.len() != pred.len() || truth.len() != region_ids.len() {
        return Err(Error::Shape(format!(
            "{} truth values, {} predictions, {} region ids",
            truth.len(),
            pred.len(),
            region_ids.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Validation("no regions to evaluate".into()));
    }
    if let Some(k) = truth.iter().position(|t| *t == 0.0) {
        return Err(Error::ZeroTruth(region_ids[k].as_ref().to_string()));
    }
    if let Some(k) = truth
        .iter()
        .zip(pred)
        .position(|(t, p)| !t.is_finite() || !p.is_finite())
    {
        return Err(Error::Validation(format!(
            "non-finite value for region `{}`",
            region_ids[k].as_ref()
        )));
    }
    let n = truth.len() as f64;
    let ape: Vec<f64> = truth.iter().zip(pred).map(|(t, p)| ((t - p) / t).abs()).collect();
    let mape = ape.iter().sum::<f64>() / n;
    let mae = truth.iter().zip(pred).map(|(t, p)| (t - p).abs()).sum::<f64>() / n;
    let rmse = (truth.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum::<f64>() / n).sqrt();
    let rmspe = (ape.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let std_error_ape = if ape.len() > 1 {
        (ape.iter().map(|e| (e - mape).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
    } else {
        0.0
    };
    Ok(MetricReport {
        mape,
        mae,
        rmse,
        rmspe,
        ape_per_region: ape,
        std_error_ape,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Significance {
    None,
    P05,
    P01,
}

impl Significance {
    pub fn from_p(p: f64) -> Self {
        if p < 0.01 {
            Significance::P01
        } else if p < 0.05 {
            Significance::P05
        } else {
            Significance::None
        }
    }

    pub fn stars(&self) -> &'static str {
        match self {
            Significance::None => "",
            Significance::P05 => "★",
            Significance::P01 => "★★",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    pub significance: Significance,
    /// Differences had zero variance; `t` is 0 or infinite and `p` is 1 or 0.
    pub degenerate: bool,
}

/// Two-sided paired t-test on `a - b`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "paired samples of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 3 {
        return Err(Error::Validation(format!(
            "paired t-test needs at least 3 pairs, got {}",
            a.len()
        )));
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let df = a.len() - 1;
    if !(sd > 0.0) {
        let (t, p) = if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        };
        return Ok(TTest {
            t,
            p,
            df,
            significance: Significance::from_p(p),
            degenerate: true,
        });
    }
    let t = mean / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 2");
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest {
        t,
        p,
        df,
        significance: Significance::from_p(p),
        degenerate: false,
    })
}
