use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dof::{dofaic, naive_aic, DofEstimate};
use crate::error::Result;

pub const CSV_HEADER: [&str; 18] = [
    "model_id",
    "width",
    "depth",
    "dropout",
    "corruption",
    "weight_decay",
    "param_count",
    "df",
    "df_stderr",
    "train_deviance",
    "dofaic",
    "naive_aic",
    "cv_mean_deviance",
    "optimism",
    "epsilon",
    "replicates",
    "df_negative",
    "error",
];

/// One model's line in `report.csv`. Missing values (a failed fit, or a
/// quantity the experiment does not compute) are empty fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model_id: String,
    pub width: usize,
    pub depth: usize,
    pub dropout: f64,
    pub corruption: f64,
    pub weight_decay: f64,
    pub param_count: usize,
    pub df: Option<f64>,
    pub df_stderr: Option<f64>,
    pub train_deviance: Option<f64>,
    pub dofaic: Option<f64>,
    pub naive_aic: Option<f64>,
    pub cv_mean_deviance: Option<f64>,
    pub optimism: Option<f64>,
    pub epsilon: f64,
    pub replicates: usize,
    pub df_negative: bool,
    pub error: Option<String>,
}

impl ReportRow {
    pub fn new(model_id: impl Into<String>, param_count: usize, epsilon: f64, replicates: usize) -> Self {
        Self {
            model_id: model_id.into(),
            width: 0,
            depth: 0,
            dropout: 0.0,
            corruption: 0.0,
            weight_decay: 0.0,
            param_count,
            df: None,
            df_stderr: None,
            train_deviance: None,
            dofaic: None,
            naive_aic: None,
            cv_mean_deviance: None,
            optimism: None,
            epsilon,
            replicates,
            df_negative: false,
            error: None,
        }
    }

    /// Fills df, the deviance and both criteria from one estimate.
    pub fn with_estimate(mut self, estimate: &DofEstimate, train_deviance: f64) -> Self {
        self.df = Some(estimate.df);
        self.df_stderr = Some(estimate.stderr);
        self.df_negative = estimate.df < 0.0;
        self.train_deviance = Some(train_deviance);
        self.dofaic = Some(dofaic(train_deviance, estimate.df));
        self.naive_aic = Some(naive_aic(train_deviance, self.param_count));
        self
    }

    pub fn failed(mut self, error: impl std::fmt::Display) -> Self {
        self.error = Some(error.to_string());
        self
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub rows: Vec<ReportRow>,
    pub seeds: BTreeMap<String, u64>,
    pub epsilon: f64,
    pub replicates: usize,
    /// Experiment-level results (correlations, argmins, ...).
    pub summary: BTreeMap<String, serde_json::Value>,
    pub flags: serde_json::Value,
    /// Kept out of the CSV so reruns compare byte-identically.
    pub wall_time_secs: f64,
}

impl ExperimentReport {
    pub fn new(experiment: impl Into<String>, epsilon: f64, replicates: usize) -> Self {
        Self {
            experiment: experiment.into(),
            rows: Vec::new(),
            seeds: BTreeMap::new(),
            epsilon,
            replicates,
            summary: BTreeMap::new(),
            flags: serde_json::Value::Null,
            wall_time_secs: 0.0,
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.into(), value);
        self
    }

    pub fn set_summary(&mut self, key: &str, value: impl Serialize) {
        let value = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.summary.insert(key.into(), value);
    }

    pub fn summary_f64(&self, key: &str) -> Option<f64> {
        self.summary.get(key).and_then(serde_json::Value::as_f64)
    }

    pub fn ok_rows(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| r.is_ok())
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            wtr.write_record(CSV_HEADER)?;
        }
        for row in &self.rows {
            wtr.serialize(row)?;
        }
        Ok(wtr.into_inner().map_err(|e| e.into_error())?)
    }

    pub fn manifest_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            experiment: &'a str,
            seeds: &'a BTreeMap<String, u64>,
            epsilon: f64,
            replicates: usize,
            rows: usize,
            failed_rows: usize,
            summary: &'a BTreeMap<String, serde_json::Value>,
            flags: &'a serde_json::Value,
            wall_time_secs: f64,
        }
        Ok(serde_json::to_string_pretty(&Manifest {
            experiment: &self.experiment,
            seeds: &self.seeds,
            epsilon: self.epsilon,
            replicates: self.replicates,
            rows: self.rows.len(),
            failed_rows: self.rows.iter().filter(|r| !r.is_ok()).count(),
            summary: &self.summary,
            flags: &self.flags,
            wall_time_secs: self.wall_time_secs,
        })?)
    }

    /// Writes `report.csv` and `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.csv"), self.to_csv()?)?;
        fs::write(dir.join("manifest.json"), self.manifest_json()? + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dof::{CrnContext, DofEstimate};

    fn estimate(df: f64) -> DofEstimate {
        let ctx = CrnContext::default();
        DofEstimate {
            df,
            per_replicate: vec![df],
            stderr: 0.0,
            epsilon: ctx.epsilon,
            replicates: 1,
            model_seed: 0,
            perturbation_seed: 1,
            perturbation: ctx.perturbation,
        }
    }

    #[test]
    fn row_identities_hold() {
        let row = ReportRow::new("m", 9, 1e-5, 1).with_estimate(&estimate(4.0), 10.0);
        assert_eq!(row.dofaic, Some(18.0));
        assert_eq!(row.naive_aic, Some(28.0));
        assert!(!row.df_negative);
        assert!(ReportRow::new("m", 9, 1e-5, 1).with_estimate(&estimate(-0.5), 1.0).df_negative);
    }

    #[test]
    fn csv_has_header_and_empty_missing_fields() {
        let mut report = ExperimentReport::new("t", 1e-5, 1);
        report.rows.push(ReportRow::new("ok", 3, 1e-5, 1).with_estimate(&estimate(1.5), 2.0));
        report.rows.push(ReportRow::new("bad", 3, 1e-5, 1).failed("diverged"));
        let text = String::from_utf8(report.to_csv().unwrap()).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with(
            "model_id,width,depth,dropout,corruption,weight_decay,param_count,df,df_stderr,train_deviance,dofaic,naive_aic,cv_mean_deviance,optimism"
        ));
        assert!(lines.next().unwrap().starts_with("ok,"));
        assert!(lines.next().unwrap().ends_with(",,0.00001,1,false,diverged"));
    }

    #[test]
    fn empty_report_still_has_header() {
        let text = String::from_utf8(ExperimentReport::new("t", 1e-5, 1).to_csv().unwrap()).unwrap();
        assert_eq!(text.trim_end(), CSV_HEADER.join(","));
        let mut one = ExperimentReport::new("t", 1e-5, 1);
        one.rows.push(ReportRow::new("m", 1, 1e-5, 1));
        let text = String::from_utf8(one.to_csv().unwrap()).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
    }

    #[test]
    fn wall_time_stays_out_of_csv() {
        let mut a = ExperimentReport::new("t", 1e-5, 1);
        a.rows.push(ReportRow::new("m", 1, 1e-5, 1));
        let mut b = a.clone();
        b.wall_time_secs = 12.5;
        assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
        assert_ne!(a.manifest_json().unwrap(), b.manifest_json().unwrap());
    }
}
