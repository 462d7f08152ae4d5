//! Closed-form memory and communication costs of data-parallel strategies.
//!
//! Byte counts are exact integers; every division by the GPU count rounds up
//! because partition shards are padded to equal size.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiles::PrecisionSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyName {
    #[serde(rename = "DDP")]
    Ddp,
    #[serde(rename = "ZeRO-1")]
    Zero1,
    #[serde(rename = "ZeRO-2")]
    Zero2,
    #[serde(rename = "ZeRO-3")]
    Zero3,
    #[serde(rename = "rCache-max")]
    RCacheMax,
    #[serde(rename = "rCache-min")]
    RCacheMin,
}

impl StrategyName {
    pub const ALL: [StrategyName; 6] = [
        StrategyName::Ddp,
        StrategyName::Zero1,
        StrategyName::Zero2,
        StrategyName::Zero3,
        StrategyName::RCacheMax,
        StrategyName::RCacheMin,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            StrategyName::Ddp => "DDP",
            StrategyName::Zero1 => "ZeRO-1",
            StrategyName::Zero2 => "ZeRO-2",
            StrategyName::Zero3 => "ZeRO-3",
            StrategyName::RCacheMax => "rCache-max",
            StrategyName::RCacheMin => "rCache-min",
        }
    }

    /// DDP and ZeRO-1 have no offloaded variant.
    pub fn has_offload_variant(&self) -> bool {
        !matches!(self, StrategyName::Ddp | StrategyName::Zero1)
    }
}

impl fmt::Display for StrategyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyName::ALL
            .into_iter()
            .find(|n| n.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UndefinedStrategy(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StrategySpec {
    pub name: StrategyName,
    pub offload: bool,
    /// Gathered-parameter buffer; only meaningful for offloaded ZeRO-3.
    pub epsilon_bytes: Option<u64>,
}

impl StrategySpec {
    pub fn new(name: StrategyName, offload: bool) -> Self {
        Self {
            name,
            offload,
            epsilon_bytes: None,
        }
    }

    /// The ten defined (strategy, offload) combinations in table order.
    pub fn table_rows(epsilon_bytes: Option<u64>) -> Vec<StrategySpec> {
        StrategyName::ALL
            .into_iter()
            .flat_map(|name| {
                let offloads: &[bool] = if name.has_offload_variant() {
                    &[false, true]
                } else {
                    &[false]
                };
                offloads.iter().map(move |&offload| StrategySpec {
                    name,
                    offload,
                    epsilon_bytes,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostRow {
    pub gpu_mem_per_gpu: u64,
    pub g2c_comm: u64,
    pub g2g_comm: u64,
}

/// Size inputs shared by every strategy row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostInputs {
    /// Model size in elements (M).
    pub model_elements: u64,
    /// Data-parallel GPU count (N).
    pub gpus: u64,
    pub precision: PrecisionSpec,
    /// Aggregate chunk length in elements (S).
    pub aggregate_chunk_elements: u64,
    /// Chunk length in elements (C).
    pub chunk_length: u64,
}

fn checked(a: u64, b: u64) -> Result<u64> {
    a.checked_mul(b)
        .ok_or_else(|| Error::InvalidArgument("byte count overflows u64".into()))
}

pub fn strategy_costs(inputs: &CostInputs, strategy: &StrategySpec) -> Result<CostRow> {
    let CostInputs {
        model_elements: m,
        gpus: n,
        precision,
        aggregate_chunk_elements: s,
        chunk_length: c,
    } = *inputs;
    for (name, v) in [("M", m), ("N", n), ("S", s), ("C", c)] {
        if v == 0 {
            return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
        }
    }
    precision.validate()?;
    let lc = precision.compute_bytes;
    let os = precision.optimizer_state_bytes();

    let row = |mem: u64, g2c: u64, g2g: u64| CostRow {
        gpu_mem_per_gpu: mem,
        g2c_comm: g2c,
        g2g_comm: g2g,
    };

    let undefined = || Error::UndefinedStrategy(format!("{} with offload", strategy.name));

    let cost = match (strategy.name, strategy.offload) {
        (StrategyName::Ddp, false) => row(checked(2 * lc + os, m)?, 0, checked(2 * lc, m)?),
        (StrategyName::Zero1, false) => row(
            checked(2 * lc, m)? + checked(os, m)?.div_ceil(n),
            0,
            checked(2 * lc, m)?,
        ),
        (StrategyName::Zero2, false) => row(
            checked(lc, m)? + checked(lc + os, m)?.div_ceil(n),
            0,
            checked(2 * lc, m)?,
        ),
        (StrategyName::Zero2, true) => {
            row(checked(lc, m)?, checked(2 * lc, m)?, checked(2 * lc, m)?)
        }
        (StrategyName::Zero3, false) => {
            row(checked(2 * lc + os, m)?.div_ceil(n), 0, checked(4 * lc, m)?)
        }
        (StrategyName::Zero3, true) => {
            let eps = strategy.epsilon_bytes.filter(|&e| e > 0).ok_or_else(|| {
                Error::InvalidArgument("ZeRO-3 offload needs a positive epsilon buffer size".into())
            })?;
            row(eps, checked(4 * lc, m)?, checked(4 * lc, m)?)
        }
        (StrategyName::RCacheMax, false) => row(
            checked(lc, s)? + checked(lc + os, s)?.div_ceil(n),
            0,
            checked(2 * lc, s)?,
        ),
        (StrategyName::RCacheMax, true) => {
            row(checked(lc, s)?, checked(2 * lc, s)?, checked(2 * lc, s)?)
        }
        (StrategyName::RCacheMin, false) => row(
            checked(lc, c)? + checked(lc + os, s)?.div_ceil(n),
            0,
            checked(4 * lc, s)?,
        ),
        (StrategyName::RCacheMin, true) => {
            row(checked(lc, c)?, checked(4 * lc, s)?, checked(4 * lc, s)?)
        }
        (StrategyName::Ddp | StrategyName::Zero1, true) => return Err(undefined()),
    };
    Ok(cost)
}

/// Per-GPU bytes of one partitioned parameter chunk plus its optimizer chunk.
pub fn chunk_footprint(chunk_length: u64, gpus: u64, precision: PrecisionSpec) -> u64 {
    (precision.chunk_state_bytes() * chunk_length).div_ceil(gpus.max(1))
}

/// Bytes of (parameters, gradients, optimizer states) under mixed precision.
pub fn mixed_precision_states(model_elements: u64, precision: PrecisionSpec) -> (u64, u64, u64) {
    (
        precision.compute_bytes * model_elements,
        precision.compute_bytes * model_elements,
        precision.optimizer_state_bytes() * model_elements,
    )
}

/// Training throughput in TFLOPS counting `8 * M * D` floating-point operations.
pub fn tflops_metric(model_elements: f64, tokens: f64, elapsed_seconds: f64) -> Result<f64> {
    if elapsed_seconds.is_nan() || elapsed_seconds <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "elapsed time must be positive, got {elapsed_seconds}"
        )));
    }
    Ok(8.0 * model_elements * tokens / elapsed_seconds / 1e12)
}

/// Inputs of the `compare` table; absent values leave dependent cells empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompareInputs {
    pub model_elements: u64,
    pub gpus: u64,
    pub precision: PrecisionSpec,
    /// Defaults to `model_elements`.
    pub aggregate_chunk_elements: Option<u64>,
    pub chunk_length: Option<u64>,
    pub epsilon_bytes: Option<u64>,
}

/// Renders the ten defined rows as CSV.
///
/// The memory cell of offloaded ZeRO-3 needs ε and the rCache-min memory
/// cells need the chunk length; without them those cells are left empty.
pub fn comparison_csv(inputs: &CompareInputs) -> Result<String> {
    let cost_inputs = CostInputs {
        model_elements: inputs.model_elements,
        gpus: inputs.gpus,
        precision: inputs.precision,
        aggregate_chunk_elements: inputs
            .aggregate_chunk_elements
            .unwrap_or(inputs.model_elements),
        chunk_length: inputs.chunk_length.unwrap_or(1),
    };
    let mut out = String::from("strategy,offload,gpu_mem_bytes,g2c_bytes,g2g_bytes\n");
    for mut spec in StrategySpec::table_rows(inputs.epsilon_bytes) {
        let missing = match (spec.name, spec.offload) {
            (StrategyName::Zero3, true) => inputs.epsilon_bytes.is_none(),
            (StrategyName::RCacheMin, _) => inputs.chunk_length.is_none(),
            _ => false,
        };
        spec.epsilon_bytes = spec.epsilon_bytes.or(Some(1));
        let row = strategy_costs(&cost_inputs, &spec)?;
        let mem = if missing {
            String::new()
        } else {
            row.gpu_mem_per_gpu.to_string()
        };
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            spec.name, spec.offload, mem, row.g2c_comm, row.g2g_comm
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inputs(m: u64, n: u64) -> CostInputs {
        CostInputs {
            model_elements: m,
            gpus: n,
            precision: PrecisionSpec::default(),
            aggregate_chunk_elements: m,
            chunk_length: 1 << 20,
        }
    }

    fn cost(m: u64, n: u64, name: StrategyName, offload: bool) -> CostRow {
        strategy_costs(
            &inputs(m, n),
            &StrategySpec {
                name,
                offload,
                epsilon_bytes: Some(1),
            },
        )
        .unwrap()
    }

    #[test]
    fn zero3_four_gpus() {
        let r = cost(1_000_000_000, 4, StrategyName::Zero3, false);
        assert_eq!(
            r,
            CostRow {
                gpu_mem_per_gpu: 4_000_000_000,
                g2c_comm: 0,
                g2g_comm: 8_000_000_000
            }
        );
    }

    #[test]
    fn ddp_independent_of_n() {
        for n in [1, 2, 4, 8] {
            let r = cost(1_000_000_000, n, StrategyName::Ddp, false);
            assert_eq!(r.gpu_mem_per_gpu, 16_000_000_000);
            assert_eq!(r.g2g_comm, 4_000_000_000);
        }
    }

    #[test]
    fn zero2_arithmetic() {
        assert_eq!(
            cost(1_000_000_000, 4, StrategyName::Zero2, false).gpu_mem_per_gpu,
            5_500_000_000
        );
    }

    #[test]
    fn offload_undefined_for_ddp() {
        let err = strategy_costs(&inputs(10, 2), &StrategySpec::new(StrategyName::Ddp, true))
            .unwrap_err();
        assert!(matches!(err, Error::UndefinedStrategy(_)));
        assert!("zero-9".parse::<StrategyName>().is_err());
        assert_eq!(
            "rcache-MAX".parse::<StrategyName>().unwrap(),
            StrategyName::RCacheMax
        );
    }

    #[test]
    fn zero3_offload_requires_epsilon() {
        let spec = StrategySpec::new(StrategyName::Zero3, true);
        assert!(strategy_costs(&inputs(10, 2), &spec).is_err());
    }

    #[test]
    fn footprint_examples() {
        let d = PrecisionSpec::default();
        assert_eq!(chunk_footprint(1_000_000_000, 4, d), 3_500_000_000);
        assert_eq!(chunk_footprint(1_000_000_000, 1, d), 14_000_000_000);
        assert_eq!(chunk_footprint(14, 7, d), 28);
    }

    #[test]
    fn mixed_precision_examples() {
        let d = PrecisionSpec::default();
        assert_eq!(
            mixed_precision_states(1_000_000_000, d),
            (2_000_000_000, 2_000_000_000, 12_000_000_000)
        );
        assert_eq!(mixed_precision_states(1, d), (2, 2, 12));
        let fp32 = PrecisionSpec::new(4, 4, 2).unwrap();
        assert_eq!(mixed_precision_states(7, fp32), (28, 28, 56));
    }

    #[test]
    fn tflops_examples() {
        assert_eq!(tflops_metric(1e9, 1000.0, 1.0).unwrap(), 8.0);
        let v = tflops_metric(4e9, 8.0 * 1024.0, 1.0).unwrap();
        assert!((v - 262.144).abs() < 1e-9);
        assert!(tflops_metric(1e9, 1.0, 0.0).is_err());
    }

    #[test]
    fn csv_has_ten_rows_and_blank_epsilon() {
        let mut c = CompareInputs {
            model_elements: 1_000_000_000,
            gpus: 4,
            precision: PrecisionSpec::default(),
            aggregate_chunk_elements: None,
            chunk_length: None,
            epsilon_bytes: None,
        };
        let csv = comparison_csv(&c).unwrap();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 11);
        assert!(lines.contains(&"ZeRO-3,false,4000000000,0,8000000000"));
        assert!(lines.contains(&"ZeRO-3,true,,8000000000,8000000000"));
        assert!(lines.contains(&"rCache-min,false,,0,8000000000"));
        c.epsilon_bytes = Some(123);
        c.chunk_length = Some(1000);
        let csv = comparison_csv(&c).unwrap();
        assert!(csv.contains("ZeRO-3,true,123,8000000000,8000000000"));
        assert!(csv.contains("rCache-min,true,2000,8000000000,8000000000"));
    }

    proptest! {
        #[test]
        fn single_gpu_collapses_to_ddp(m in 1u64..1_000_000_000_000) {
            let ddp = cost(m, 1, StrategyName::Ddp, false).gpu_mem_per_gpu;
            for name in [StrategyName::Zero1, StrategyName::Zero2, StrategyName::Zero3] {
                prop_assert_eq!(cost(m, 1, name, false).gpu_mem_per_gpu, ddp);
            }
        }

        #[test]
        fn partitioning_orders_memory(m in 1u64..1_000_000_000_000, n in 2u64..64) {
            let mem = |s| cost(m, n, s, false).gpu_mem_per_gpu;
            prop_assert!(mem(StrategyName::Zero3) <= mem(StrategyName::Zero2));
            prop_assert!(mem(StrategyName::Zero2) <= mem(StrategyName::Zero1));
            prop_assert!(mem(StrategyName::Zero1) <= mem(StrategyName::Ddp));
        }

        #[test]
        fn rcache_max_equals_zero2_when_s_is_m(m in 1u64..1_000_000_000_000, n in 1u64..64) {
            prop_assert_eq!(
                cost(m, n, StrategyName::RCacheMax, false).gpu_mem_per_gpu,
                cost(m, n, StrategyName::Zero2, false).gpu_mem_per_gpu
            );
        }

        #[test]
        fn offload_keeps_gpu_gpu_volume(m in 1u64..1_000_000_000_000, n in 1u64..64) {
            for name in StrategyName::ALL.into_iter().filter(StrategyName::has_offload_variant) {
                prop_assert_eq!(cost(m, n, name, false).g2g_comm, cost(m, n, name, true).g2g_comm);
            }
        }
    }
}
