use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Zsl,
    Gzsl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GzslMetrics {
    pub u: f64,
    pub s: f64,
    #[serde(rename = "H")]
    pub h: f64,
    pub gamma: f64,
}

/// Evaluation summary written as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub mode: EvalMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zsl_t1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gzsl: Option<GzslMetrics>,
    pub per_class: BTreeMap<String, f64>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Fixed-width T1 or u/s/H table.
    pub fn table(&self) -> String {
        match (&self.zsl_t1, &self.gzsl) {
            (_, Some(g)) => format!(
                "{:>8} {:>8} {:>8} {:>10}\n{:>8.1} {:>8.1} {:>8.1} {:>10.4}\n",
                "u",
                "s",
                "H",
                "gamma",
                100.0 * g.u,
                100.0 * g.s,
                100.0 * g.h,
                g.gamma
            ),
            (Some(t1), None) => format!("{:>8}\n{:>8.1}\n", "T1", 100.0 * t1),
            (None, None) => String::new(),
        }
    }
}

pub fn save_report(path: impl AsRef<Path>, report: &MetricReport) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, report.to_json() + "\n").map_err(|e| Error::io(path, e))
}
