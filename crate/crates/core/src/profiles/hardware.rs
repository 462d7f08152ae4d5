use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{from_versioned_json, to_versioned_json};
use crate::error::{Error, Result};

const GB: f64 = 1e9;

/// Aggregate rates for `n` cooperating processes, in bytes/second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEntry {
    /// GPU-GPU bandwidth; absent for a single process.
    pub b_g2g: Option<f64>,
    pub b_c2g: f64,
    pub b_g2c: f64,
    /// Optimizer update velocity on GPU, as profiled (bytes/second).
    pub v_g: f64,
    /// Optimizer update velocity on CPU, as profiled (bytes/second).
    pub v_c: f64,
}

impl RateEntry {
    fn validate(&self, n: u32) -> Result<()> {
        let named = [
            ("b_c2g", Some(self.b_c2g)),
            ("b_g2c", Some(self.b_g2c)),
            ("v_g", Some(self.v_g)),
            ("v_c", Some(self.v_c)),
            ("b_g2g", self.b_g2g),
        ];
        for (field, value) in named {
            if let Some(v) = value {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Validation(format!(
                        "rate `{field}` for n={n} must be strictly positive, got {v}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardwareProfile {
    pub gpu_count: u32,
    pub gpu_capacity_bytes: u64,
    pub tables: BTreeMap<u32, RateEntry>,
}

// On-disk form: rates in GB/s, keyed by process-count strings.
#[derive(Serialize, Deserialize)]
struct RateEntryDoc {
    #[serde(default)]
    b_g2g: Option<f64>,
    b_c2g: f64,
    b_g2c: f64,
    v_g: f64,
    v_c: f64,
}

#[derive(Serialize, Deserialize)]
struct HardwareDoc {
    gpu_count: u32,
    gpu_capacity_bytes: u64,
    tables: BTreeMap<String, RateEntryDoc>,
}

impl HardwareProfile {
    pub fn validate(&self) -> Result<()> {
        if self.gpu_count == 0 {
            return Err(Error::Validation("gpu_count must be at least 1".into()));
        }
        if self.gpu_capacity_bytes == 0 {
            return Err(Error::Validation(
                "gpu_capacity_bytes must be positive".into(),
            ));
        }
        for (&n, entry) in &self.tables {
            if n == 0 {
                return Err(Error::Validation(
                    "table key 0 is not a process count".into(),
                ));
            }
            entry.validate(n)?;
        }
        if !self.tables.contains_key(&self.gpu_count) {
            return Err(Error::MissingRateEntry(self.gpu_count));
        }
        Ok(())
    }

    pub fn rates(&self, n: u32) -> Result<&RateEntry> {
        self.tables.get(&n).ok_or(Error::MissingRateEntry(n))
    }

    /// Rates for the configured process count.
    pub fn active_rates(&self) -> Result<&RateEntry> {
        self.rates(self.gpu_count)
    }

    /// Same machine, planning for `n` processes instead of all of them.
    pub fn with_gpu_count(&self, n: u32) -> Result<Self> {
        let hw = Self {
            gpu_count: n,
            ..self.clone()
        };
        hw.validate()?;
        Ok(hw)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = HardwareDoc {
            gpu_count: self.gpu_count,
            gpu_capacity_bytes: self.gpu_capacity_bytes,
            tables: self
                .tables
                .iter()
                .map(|(n, e)| {
                    (
                        n.to_string(),
                        RateEntryDoc {
                            b_g2g: e.b_g2g.map(|v| v / GB),
                            b_c2g: e.b_c2g / GB,
                            b_g2c: e.b_g2c / GB,
                            v_g: e.v_g / GB,
                            v_c: e.v_c / GB,
                        },
                    )
                })
                .collect(),
        };
        to_versioned_json(&doc)
    }

    /// Four-GPU development server with PCIe-attached A100 80GB cards.
    pub fn dev_server() -> Self {
        load_hardware_profile(include_str!("../../fixtures/dev_server.json"))
            .expect("bundled fixture is valid")
    }

    /// AWS p4d.24xlarge slice with four A100 40GB cards.
    pub fn aws_p4d() -> Self {
        load_hardware_profile(include_str!("../../fixtures/aws_p4d.json"))
            .expect("bundled fixture is valid")
    }
}

/// Parses a hardware document (GB/s) into bytes/second and validates it.
pub fn load_hardware_profile(text: &str) -> Result<HardwareProfile> {
    let doc: HardwareDoc = from_versioned_json(text)?;
    let mut tables = BTreeMap::new();
    for (key, e) in doc.tables {
        let n: u32 = key
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("table key `{key}` is not a process count")))?;
        let entry = RateEntry {
            b_g2g: e.b_g2g.map(|v| v * GB),
            b_c2g: e.b_c2g * GB,
            b_g2c: e.b_g2c * GB,
            v_g: e.v_g * GB,
            v_c: e.v_c * GB,
        };
        if tables.insert(n, entry).is_some() {
            return Err(Error::Validation(format!(
                "duplicate table entry for n={n}"
            )));
        }
    }
    let hw = HardwareProfile {
        gpu_count: doc.gpu_count,
        gpu_capacity_bytes: doc.gpu_capacity_bytes,
        tables,
    };
    hw.validate()?;
    Ok(hw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dev_server_rates_in_bytes_per_second() {
        let hw = HardwareProfile::dev_server();
        let r1 = hw.rates(1).unwrap();
        assert_eq!(r1.b_c2g, 22e9);
        assert_eq!(r1.b_g2c, 16e9);
        assert_eq!(r1.v_g, 50e9);
        assert_eq!(r1.v_c, 5e9);
        assert_eq!(r1.b_g2g, None);
        assert_eq!(hw.rates(2).unwrap().v_c, 6.5e9);
    }

    #[test]
    fn aws_rates() {
        let hw = HardwareProfile::aws_p4d();
        let r4 = hw.rates(4).unwrap();
        assert_eq!(r4.b_c2g, 25e9);
        assert_eq!(r4.v_c, 5e9);
        assert_eq!(r4.b_g2g, Some(214e9));
    }

    #[test]
    fn missing_entry_for_gpu_count() {
        let text = r#"{"format_version": 1, "gpu_count": 4, "gpu_capacity_bytes": 100,
            "tables": {"1": {"b_g2g": null, "b_c2g": 1, "b_g2c": 1, "v_g": 1, "v_c": 1}}}"#;
        assert_eq!(
            load_hardware_profile(text).unwrap_err(),
            Error::MissingRateEntry(4)
        );
    }

    #[test]
    fn non_positive_rate_rejected() {
        let text = r#"{"format_version": 1, "gpu_count": 1, "gpu_capacity_bytes": 100,
            "tables": {"1": {"b_c2g": 0, "b_g2c": 1, "v_g": 1, "v_c": 1}}}"#;
        let err = load_hardware_profile(text).unwrap_err();
        assert!(err.to_string().contains("b_c2g"), "{err}");
    }

    #[test]
    fn json_round_trip() {
        let hw = HardwareProfile::dev_server();
        assert_eq!(load_hardware_profile(&hw.to_json().unwrap()).unwrap(), hw);
    }

    #[test]
    fn narrower_process_count() {
        let hw = HardwareProfile::dev_server().with_gpu_count(1).unwrap();
        assert_eq!(hw.active_rates().unwrap().b_g2c, 16e9);
        assert!(HardwareProfile::dev_server().with_gpu_count(3).is_err());
    }
}
