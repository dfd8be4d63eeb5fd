use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::roc::{RocCurve, SmearBand};
use crate::error::Result;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySummary {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    /// Mean predictive std per group (e.g. `normal`, `anomaly_a`, `ood`).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub class_means: BTreeMap<String, f64>,
}

/// JSON evaluation summary with top-level keys `roc`, `band`,
/// `uncertainty`, `metrics`, `config` and `seed`. Absent optional parts are
/// omitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roc: Option<RocCurve>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<SmearBand>,
    pub uncertainty: UncertaintySummary,
    /// Named scalar results such as `auc` or `mape_in_distribution`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, f64>,
    pub config: serde_json::Value,
    pub seed: u64,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::RngStream;
    use crate::evalkit::{roc_curve, roc_with_smearing};

    #[test]
    fn minimal_report_omits_optionals() {
        let r = EvalReport {
            roc: None,
            band: None,
            uncertainty: Default::default(),
            metrics: BTreeMap::new(),
            config: serde_json::json!({}),
            seed: 3,
        };
        let text = r.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(v.get("roc").is_none() && v.get("band").is_none());
        assert_eq!(v["seed"], 3);
        assert_eq!(EvalReport::from_json(&text).unwrap(), r);
    }

    #[test]
    fn full_round_trip() {
        let mut rng = RngStream::new(2);
        let means: Vec<f64> = (0..50).map(|_| rng.uniform()).collect();
        let labels: Vec<u8> = means.iter().map(|&m| u8::from(m + 0.3 * rng.normal() > 0.5)).collect();
        let stds = vec![0.1; 50];
        let mut cm = BTreeMap::new();
        cm.insert("normal".to_string(), 0.123456789012345);
        let r = EvalReport {
            roc: Some(roc_curve(&means, &labels).unwrap()),
            band: Some(roc_with_smearing(&means, &stds, &labels, 10, &rng).unwrap()),
            uncertainty: UncertaintySummary { ratio: Some(2.0 / 3.0), class_means: cm },
            metrics: BTreeMap::from([("auc".to_string(), 0.1 + 0.2)]),
            config: serde_json::json!({"epochs": 3}),
            seed: 99,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        r.save(&p).unwrap();
        assert_eq!(EvalReport::load(&p).unwrap(), r);
    }
}
