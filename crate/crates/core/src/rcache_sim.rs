//! Trace-driven rCache simulation.
//!
//! The rCache holds `n_block` chunk-sized blocks on every GPU. A chunk must be
//! resident (gathered) before any coarse operator touching it runs. Because
//! the whole access order is known ahead of time, replacement uses Belady's
//! rule: evict the resident chunk whose next use lies farthest in the future.
//!
//! During the backward pass a chunk is pinned from its first backward access
//! until its last gradient is produced; at that point the gradient chunk is
//! reduce-scattered (and offloaded if the chunk lives on CPU) and its block is
//! released.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::chunking::ChunkTrace;
use crate::error::{Error, Result};
use crate::profiles::{from_versioned_json, to_versioned_json, PrecisionSpec, RateEntry};

/// Home device of a chunk's partitioned shards and its optimizer chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Device {
    Gpu,
    Cpu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplacementPolicy {
    /// Farthest next use; ties broken by lowest chunk id.
    Belady,
    /// Least recently used; ties broken by lowest chunk id. Test foil only.
    Lru,
}

#[derive(Debug, Clone)]
pub struct CachePolicyInput<'a> {
    pub trace: &'a ChunkTrace,
    pub n_block: usize,
    pub chunk_length: u64,
    /// Indexed by chunk id.
    pub placement: &'a [Device],
    pub precision: PrecisionSpec,
    pub gpu_count: u32,
    /// Rates for `gpu_count` processes; without them the time estimates are zero.
    pub rates: Option<RateEntry>,
    /// Bytes per optimizer element used to turn profiled velocities into
    /// elements/second. Defaults to `precision.optimizer_bytes`.
    pub velocity_element_bytes: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub n_block: usize,
    pub n_chunks: usize,
    pub gather_ops: u64,
    pub gather_bytes: u64,
    pub reduce_bytes: u64,
    /// `gather_bytes + reduce_bytes`.
    pub g2g_bytes: u64,
    pub g2c_bytes: u64,
    pub c2g_bytes: u64,
    /// Per-GPU share of `g2c_bytes` (partitioned shards).
    pub g2c_shard_bytes: u64,
    /// Per-GPU share of `c2g_bytes`.
    pub c2g_shard_bytes: u64,
    pub replaced_bytes: u64,
    pub peak_rcache_blocks: usize,
    pub estimated_offload_seconds: f64,
    pub estimated_update_seconds: f64,
}

impl SimReport {
    pub fn estimated_seconds(&self) -> f64 {
        self.estimated_offload_seconds + self.estimated_update_seconds
    }

    pub fn to_json(&self) -> Result<String> {
        to_versioned_json(self)
    }
}

pub fn load_sim_report(text: &str) -> Result<SimReport> {
    let report: SimReport = from_versioned_json(text)?;
    if report.gather_bytes > 0 && report.gather_ops == 0 {
        return Err(Error::Validation("gather_bytes without gather_ops".into()));
    }
    Ok(report)
}

#[derive(Debug, Clone, Default)]
struct Step {
    required: Vec<usize>,
    pin: Vec<usize>,
    release: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
struct ReplayStats {
    gathers: Vec<u64>,
    gather_ops: u64,
    refetches: u64,
    peak_resident: usize,
}

fn replay(
    steps: &[Step],
    n_chunks: usize,
    n_block: usize,
    policy: ReplacementPolicy,
) -> Result<ReplayStats> {
    if n_block == 0 {
        return Err(Error::InvalidArgument("n_block must be at least 1".into()));
    }

    // Upcoming use positions per chunk, consumed front to back.
    let mut uses: Vec<std::collections::VecDeque<usize>> = vec![Default::default(); n_chunks];
    for (t, step) in steps.iter().enumerate() {
        for &c in &step.required {
            uses[c].push_back(t);
        }
    }

    let mut resident = vec![false; n_chunks];
    let mut pinned = vec![false; n_chunks];
    let mut evicted = vec![false; n_chunks];
    let mut last_touch = vec![0usize; n_chunks];
    let mut resident_count = 0usize;
    let mut pinned_count = 0usize;
    let mut stats = ReplayStats {
        gathers: vec![0; n_chunks],
        ..Default::default()
    };

    for (t, step) in steps.iter().enumerate() {
        for &c in &step.required {
            while uses[c].front().is_some_and(|&p| p <= t) {
                uses[c].pop_front();
            }
        }
        for &c in &step.pin {
            if !pinned[c] {
                pinned[c] = true;
                pinned_count += 1;
            }
        }
        if pinned_count > n_block {
            return Err(Error::InfeasibleCache(format!(
                "{pinned_count} chunks await gradient reduction at step {t} but rCache has {n_block} blocks"
            )));
        }
        if step.required.len() > n_block {
            return Err(Error::InfeasibleCache(format!(
                "step {t} needs {} chunks resident but rCache has {n_block} blocks",
                step.required.len()
            )));
        }

        for &c in &step.required {
            last_touch[c] = t + 1;
            if resident[c] {
                continue;
            }
            if resident_count == n_block {
                let victim = (0..n_chunks)
                    .filter(|&v| resident[v] && !pinned[v] && !step.required.contains(&v))
                    .max_by_key(|&v| match policy {
                        ReplacementPolicy::Belady => {
                            let next = uses[v].front().copied().unwrap_or(usize::MAX);
                            (next, std::cmp::Reverse(v))
                        }
                        ReplacementPolicy::Lru => {
                            (usize::MAX - last_touch[v], std::cmp::Reverse(v))
                        }
                    })
                    .ok_or_else(|| {
                        Error::InfeasibleCache(format!(
                            "no evictable block at step {t}: all {n_block} blocks are pinned or in use"
                        ))
                    })?;
                resident[victim] = false;
                evicted[victim] = true;
                resident_count -= 1;
            }
            resident[c] = true;
            resident_count += 1;
            stats.gathers[c] += 1;
            stats.gather_ops += 1;
            if evicted[c] {
                stats.refetches += 1;
                evicted[c] = false;
            }
        }
        stats.peak_resident = stats.peak_resident.max(resident_count);

        for &c in &step.release {
            if pinned[c] {
                pinned[c] = false;
                pinned_count -= 1;
            }
            if resident[c] {
                resident[c] = false;
                resident_count -= 1;
            }
        }
    }
    Ok(stats)
}

fn training_steps(trace: &ChunkTrace) -> Vec<Step> {
    let mut steps: Vec<Step> = trace
        .forward
        .iter()
        .map(|node| Step {
            required: node.clone(),
            ..Default::default()
        })
        .collect();

    let mut release_at: HashMap<usize, Vec<usize>> = HashMap::new();
    for (&chunk, &pos) in &trace.reduce_after {
        release_at.entry(pos).or_default().push(chunk);
    }
    let mut seen = vec![false; trace.n_chunks()];
    for (pos, node) in trace.backward.iter().enumerate() {
        let pin = node
            .iter()
            .copied()
            .filter(|&c| !std::mem::replace(&mut seen[c], true))
            .collect();
        let mut release = release_at.remove(&pos).unwrap_or_default();
        release.sort_unstable();
        steps.push(Step {
            required: node.clone(),
            pin,
            release,
        });
    }
    steps
}

/// Replays one training step (forward then backward) through the rCache.
pub fn simulate(input: &CachePolicyInput<'_>) -> Result<SimReport> {
    let trace = input.trace;
    let n_chunks = trace.n_chunks();
    if input.chunk_length == 0 {
        return Err(Error::InvalidArgument(
            "chunk length must be positive".into(),
        ));
    }
    if input.gpu_count == 0 {
        return Err(Error::InvalidArgument(
            "gpu_count must be at least 1".into(),
        ));
    }
    if input.n_block == 0 {
        return Err(Error::InvalidArgument("n_block must be at least 1".into()));
    }
    if input.placement.len() != n_chunks {
        return Err(Error::Consistency(format!(
            "placement covers {} chunks, trace has {n_chunks}",
            input.placement.len()
        )));
    }
    if trace
        .forward
        .iter()
        .chain(&trace.backward)
        .flatten()
        .chain(trace.reduce_after.keys())
        .any(|&c| c >= n_chunks)
    {
        return Err(Error::Consistency(
            "trace references chunk ids outside 0..n_chunks".into(),
        ));
    }
    let working_set = trace.working_set_blocks();
    if input.n_block < working_set {
        return Err(Error::InfeasibleCache(format!(
            "n_block {} is below the working set of {working_set} blocks",
            input.n_block
        )));
    }

    let stats = replay(
        &training_steps(trace),
        n_chunks,
        input.n_block,
        ReplacementPolicy::Belady,
    )?;

    let chunk_bytes = input.precision.compute_bytes * input.chunk_length;
    let n = input.gpu_count as u64;
    let mut c2g_bytes = 0;
    let mut g2c_bytes = 0;
    for (c, &home) in input.placement.iter().enumerate() {
        if home == Device::Cpu {
            c2g_bytes += stats.gathers[c] * chunk_bytes;
            g2c_bytes += chunk_bytes;
        }
    }
    let gather_bytes = stats.gather_ops * chunk_bytes;
    let reduce_bytes = n_chunks as u64 * chunk_bytes;

    let (offload_s, update_s) = match input.rates {
        Some(r) => {
            let elem = input
                .velocity_element_bytes
                .unwrap_or(input.precision.optimizer_bytes) as f64;
            let offload = g2c_bytes as f64 / r.b_g2c + c2g_bytes as f64 / r.b_c2g;
            let c = input.chunk_length as f64;
            let update: f64 = input
                .placement
                .iter()
                .map(|home| match home {
                    Device::Gpu => c * elem / r.v_g,
                    Device::Cpu => c * elem / r.v_c,
                })
                .sum();
            (offload, update)
        }
        None => (0.0, 0.0),
    };

    Ok(SimReport {
        n_block: input.n_block,
        n_chunks,
        gather_ops: stats.gather_ops,
        gather_bytes,
        reduce_bytes,
        g2g_bytes: gather_bytes + reduce_bytes,
        g2c_bytes,
        c2g_bytes,
        g2c_shard_bytes: g2c_bytes.div_ceil(n),
        c2g_shard_bytes: c2g_bytes.div_ceil(n),
        replaced_bytes: stats.refetches * chunk_bytes,
        peak_rcache_blocks: stats.peak_resident,
        estimated_offload_seconds: offload_s,
        estimated_update_seconds: update_s,
    })
}

/// Bytes re-gathered after a Belady eviction during one training step.
pub fn replaced_bytes(
    trace: &ChunkTrace,
    n_block: usize,
    chunk_length: u64,
    precision: PrecisionSpec,
) -> Result<u64> {
    let placement = vec![Device::Gpu; trace.n_chunks()];
    let report = simulate(&CachePolicyInput {
        trace,
        n_block,
        chunk_length,
        placement: &placement,
        precision,
        gpu_count: 1,
        rates: None,
        velocity_element_bytes: None,
    })?;
    Ok(report.replaced_bytes)
}

/// Miss statistics for a flat access sequence (one chunk per access, no pinning).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceStats {
    pub misses: u64,
    /// Misses on chunks that had been evicted earlier.
    pub refetches: u64,
}

pub fn simulate_sequence(
    sequence: &[usize],
    n_block: usize,
    policy: ReplacementPolicy,
) -> Result<SequenceStats> {
    let n_chunks = sequence.iter().copied().max().map_or(0, |m| m + 1);
    let steps: Vec<Step> = sequence
        .iter()
        .map(|&c| Step {
            required: vec![c],
            ..Default::default()
        })
        .collect();
    let stats = replay(&steps, n_chunks, n_block, policy)?;
    Ok(SequenceStats {
        misses: stats.gather_ops,
        refetches: stats.refetches,
    })
}

pub const ORACLE_MAX_ACCESSES: usize = 20;
pub const ORACLE_MAX_DISTINCT: usize = 8;

/// Minimum achievable miss count over every possible eviction schedule.
///
/// Exhaustive search with memoisation on (position, resident set); only
/// meant for tiny instances.
pub fn oracle_min_misses(sequence: &[usize], n_block: usize) -> Result<u64> {
    if n_block == 0 {
        return Err(Error::InvalidArgument("n_block must be at least 1".into()));
    }
    let mut index: HashMap<usize, u32> = HashMap::new();
    for &c in sequence {
        let next = index.len() as u32;
        index.entry(c).or_insert(next);
    }
    if sequence.len() > ORACLE_MAX_ACCESSES || index.len() > ORACLE_MAX_DISTINCT {
        return Err(Error::OracleLimit(format!(
            "{} accesses over {} chunks exceeds {ORACLE_MAX_ACCESSES} accesses / {ORACLE_MAX_DISTINCT} chunks",
            sequence.len(),
            index.len()
        )));
    }
    let bits: Vec<u32> = sequence.iter().map(|c| 1u32 << index[c]).collect();
    let mut memo = HashMap::new();
    Ok(min_misses_from(&bits, 0, 0, n_block as u32, &mut memo))
}

fn min_misses_from(
    bits: &[u32],
    pos: usize,
    resident: u32,
    n_block: u32,
    memo: &mut HashMap<(usize, u32), u64>,
) -> u64 {
    if pos == bits.len() {
        return 0;
    }
    if let Some(&m) = memo.get(&(pos, resident)) {
        return m;
    }
    let want = bits[pos];
    let best = if resident & want != 0 {
        min_misses_from(bits, pos + 1, resident, n_block, memo)
    } else if resident.count_ones() < n_block {
        1 + min_misses_from(bits, pos + 1, resident | want, n_block, memo)
    } else {
        (0..32)
            .map(|b| 1u32 << b)
            .filter(|v| resident & v != 0)
            .map(|v| 1 + min_misses_from(bits, pos + 1, (resident & !v) | want, n_block, memo))
            .min()
            .expect("full cache has a victim")
    };
    memo.insert((pos, resident), best);
    best
}
