use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{metrics, paired_ttest, MetricReport, Significance, TTest};
use crate::error::Result;
use crate::pipeline::{run_methods, Bundle, Method, MethodOutput, PipelineOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub report: MetricReport,
    /// Paired t-test of this method's APEs against the reference's; `None`
    /// for the reference itself or with fewer than 3 regions.
    pub vs_reference: Option<TTest>,
    pub significance: Significance,
}

/// Metric table with the first row as the reference method. Other rows carry
/// the significance of their difference from the reference; the reference
/// row carries the weakest of those levels when it has the lowest MAPE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn build(results: Vec<(String, MetricReport)>) -> Result<Self> {
        let Some((_, reference)) = results.first() else {
            return Ok(ComparisonTable { rows: Vec::new() });
        };
        let ref_ape = reference.ape_per_region.clone();
        let ref_mape = reference.mape;
        let mut rows = Vec::with_capacity(results.len());
        for (k, (method, report)) in results.into_iter().enumerate() {
            let vs_reference = if k > 0 && ref_ape.len() >= 3 {
                Some(paired_ttest(&report.ape_per_region, &ref_ape)?)
            } else {
                None
            };
            let significance = vs_reference.map_or(Significance::None, |t| t.significance);
            rows.push(ComparisonRow {
                method,
                report,
                vs_reference,
                significance,
            });
        }
        let others = &rows[1..];
        if !others.is_empty()
            && others
                .iter()
                .all(|r| r.report.mape > ref_mape && r.vs_reference.is_some())
        {
            rows[0].significance = others
                .iter()
                .map(|r| r.significance)
                .min()
                .unwrap_or(Significance::None);
        }
        Ok(ComparisonTable { rows })
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("method,mape,std_error_ape,mae,rmse,rmspe,t_vs_reference,p_vs_reference,significance\n");
        for r in &self.rows {
            let (t, p) = match r.vs_reference {
                Some(t) => (t.t.to_string(), t.p.to_string()),
                None => (String::new(), String::new()),
            };
            let m = &r.report;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.method,
                m.mape,
                m.std_error_ape,
                m.mae,
                m.rmse,
                m.rmspe,
                t,
                p,
                r.significance.stars()
            )
            .expect("writing to a String");
        }
        out
    }

    /// Aligned table for terminals; MAPE as "mean ± standard error".
    pub fn to_text(&self) -> String {
        let header = ["method", "MAPE", "MAE", "RMSE", "RMSPE", "p vs ref"];
        let mut cells: Vec<[String; 6]> = vec![header.map(String::from)];
        for r in &self.rows {
            let m = &r.report;
            cells.push([
                r.method.clone(),
                format!("{:.4} ± {:.4}{}", m.mape, m.std_error_ape, r.significance.stars()),
                format!("{:.4}", m.mae),
                format!("{:.4}", m.rmse),
                format!("{:.4}", m.rmspe),
                r.vs_reference.map_or("-".into(), |t| format!("{:.3e}", t.p)),
            ]);
        }
        let widths: Vec<usize> = (0..6)
            .map(|c| cells.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &cells {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, w))| {
                    let pad = w - s.chars().count();
                    if c == 0 {
                        format!("{s}{}", " ".repeat(pad))
                    } else {
                        format!("{}{s}", " ".repeat(pad))
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out.push_str("standard errors are over regions; ★ p < 0.05, ★★ p < 0.01 (paired t-test on per-region APE)\n");
        out
    }
}

#[derive(Debug, Clone)]
pub struct ComparisonOutcome {
    pub table: ComparisonTable,
    pub outputs: Vec<MethodOutput>,
}

/// Runs `methods` on the bundle and scores them against the fine-level truth.
pub fn run_comparison(
    bundle: &Bundle,
    truth: &[f64],
    methods: &[Method],
    opts: &PipelineOptions,
) -> Result<ComparisonOutcome> {
    let outputs = run_methods(bundle, methods, opts)?;
    let ids: Vec<&str> = bundle.fine.ids().collect();
    let results = outputs
        .iter()
        .map(|o| Ok((o.method.name().to_string(), metrics(truth, o.mean.as_slice(), &ids)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ComparisonOutcome {
        table: ComparisonTable::build(results)?,
        outputs,
    })
}
