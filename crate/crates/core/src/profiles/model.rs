use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{from_versioned_json, to_versioned_json};
use crate::error::{Error, Result};

/// Byte widths used for compute state and optimizer state.
///
/// `compute_bytes` is the width of parameters/gradients during forward and
/// backward (FP16 → 2). `optimizer_bytes` is the width of the optimizer's
/// element (FP32 → 4) and `optimizer_factor` the number of such tensors per
/// parameter (master weight + two Adam moments → 3).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrecisionSpec {
    pub compute_bytes: u64,
    pub optimizer_bytes: u64,
    pub optimizer_factor: u64,
}

impl Default for PrecisionSpec {
    fn default() -> Self {
        Self {
            compute_bytes: 2,
            optimizer_bytes: 4,
            optimizer_factor: 3,
        }
    }
}

impl PrecisionSpec {
    pub fn new(compute_bytes: u64, optimizer_bytes: u64, optimizer_factor: u64) -> Result<Self> {
        let spec = Self {
            compute_bytes,
            optimizer_bytes,
            optimizer_factor,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.compute_bytes == 0 || self.optimizer_bytes == 0 || self.optimizer_factor == 0 {
            return Err(Error::Validation(format!(
                "precision widths must be strictly positive, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Optimizer-state bytes per element (`L_os * F_os`).
    pub fn optimizer_state_bytes(&self) -> u64 {
        self.optimizer_bytes * self.optimizer_factor
    }

    /// Bytes per element of a parameter chunk plus its optimizer chunk.
    pub fn chunk_state_bytes(&self) -> u64 {
        self.compute_bytes + self.optimizer_state_bytes()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub id: String,
    pub numel: u64,
    /// Used more than once per forward pass (e.g. tied embedding weight).
    pub shared: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorNode {
    pub name: String,
    pub param_ids: Vec<String>,
    /// Activation-checkpointing function enclosing this operator, if any.
    #[serde(default)]
    pub ac_group: Option<u64>,
}

/// Pre-runtime profile of one training step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub name: String,
    pub parameters: Vec<ParameterSpec>,
    /// Forward execution order.
    pub operators: Vec<OperatorNode>,
    pub activation_bytes: u64,
    pub buffer_bytes: u64,
}

impl ModelProfile {
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::with_capacity(self.parameters.len());
        for p in &self.parameters {
            if p.id.is_empty() {
                return Err(Error::Validation("parameter with empty id".into()));
            }
            if p.numel == 0 {
                return Err(Error::Validation(format!(
                    "parameter `{}` has numel 0",
                    p.id
                )));
            }
            if !ids.insert(p.id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate parameter id `{}`",
                    p.id
                )));
            }
        }

        let mut used = HashSet::new();
        for op in &self.operators {
            for id in &op.param_ids {
                if !ids.contains(id.as_str()) {
                    return Err(Error::Validation(format!(
                        "operator `{}` references unknown parameter `{}`",
                        op.name, id
                    )));
                }
                used.insert(id.as_str());
            }
        }

        if let Some(unused) = self
            .parameters
            .iter()
            .find(|p| !p.shared && !used.contains(p.id.as_str()))
        {
            return Err(Error::Validation(format!(
                "parameter `{}` is not read by any operator",
                unused.id
            )));
        }
        Ok(())
    }

    pub fn total_elements(&self) -> u64 {
        self.parameters.iter().map(|p| p.numel).sum()
    }

    pub fn shared_elements(&self) -> u64 {
        self.parameters
            .iter()
            .filter(|p| p.shared)
            .map(|p| p.numel)
            .sum()
    }

    pub fn numel_by_id(&self) -> HashMap<&str, u64> {
        self.parameters
            .iter()
            .map(|p| (p.id.as_str(), p.numel))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        to_versioned_json(self)
    }
}

/// Parses and validates a model profile document.
pub fn load_model_profile(text: &str) -> Result<ModelProfile> {
    let profile: ModelProfile = from_versioned_json(text)?;
    profile.validate()?;
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"{
            "format_version": 1,
            "name": "tiny",
            "parameters": [{"id": "w", "numel": 10, "shared": false}],
            "operators": [{"name": "linear", "param_ids": ["w"], "ac_group": null}],
            "activation_bytes": 0,
            "buffer_bytes": 0
        }"#
    }

    #[test]
    fn loads_minimal_profile() {
        let p = load_model_profile(minimal()).unwrap();
        assert_eq!(p.parameters.len(), 1);
        assert_eq!(p.operators[0].param_ids, vec!["w".to_string()]);
        assert_eq!(load_model_profile(&p.to_json().unwrap()).unwrap(), p);
    }

    #[test]
    fn dangling_param_names_it() {
        let text = minimal().replace(r#""param_ids": ["w"]"#, r#""param_ids": ["w", "p9"]"#);
        let err = load_model_profile(&text).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("p9"), "{err}");
    }

    #[test]
    fn duplicate_id_rejected() {
        let text = minimal().replace(
            r#"[{"id": "w", "numel": 10, "shared": false}]"#,
            r#"[{"id": "w", "numel": 10, "shared": false}, {"id": "w", "numel": 3, "shared": false}]"#,
        );
        let err = load_model_profile(&text).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn schema_violation_names_field() {
        let text = minimal().replace(r#""numel": 10, "#, "");
        let err = load_model_profile(&text).unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
        assert!(err.to_string().contains("numel"), "{err}");
    }

    #[test]
    fn version_gate() {
        let text = minimal().replace(r#""format_version": 1"#, r#""format_version": 2"#);
        assert_eq!(
            load_model_profile(&text).unwrap_err(),
            Error::UnsupportedVersion {
                found: 2,
                expected: 1
            }
        );
        let text = minimal().replace(r#""format_version": 1,"#, "");
        assert!(load_model_profile(&text)
            .unwrap_err()
            .to_string()
            .contains("format_version"));
    }

    #[test]
    fn unused_non_shared_parameter_rejected() {
        let text = minimal().replace(
            r#"[{"id": "w", "numel": 10, "shared": false}]"#,
            r#"[{"id": "w", "numel": 10, "shared": false}, {"id": "orphan", "numel": 3, "shared": false}]"#,
        );
        assert!(load_model_profile(&text)
            .unwrap_err()
            .to_string()
            .contains("orphan"));
    }

    #[test]
    fn zero_numel_rejected() {
        let text = minimal().replace(r#""numel": 10"#, r#""numel": 0"#);
        assert!(matches!(
            load_model_profile(&text),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn precision_defaults() {
        let p = PrecisionSpec::default();
        assert_eq!(p.optimizer_state_bytes(), 12);
        assert_eq!(p.chunk_state_bytes(), 14);
        assert!(PrecisionSpec::new(0, 4, 3).is_err());
    }
}
