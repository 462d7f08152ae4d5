//! Packing parameters into fixed-length chunks and deriving the chunk-level access trace.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiles::{AccessTrace, ModelProfile};

/// A parameter ready to be packed, in first-use order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequencedParam {
    pub id: String,
    pub numel: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkMember {
    pub param_id: String,
    pub offset: u64,
    pub numel: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: usize,
    pub length: u64,
    pub members: Vec<ChunkMember>,
    pub used_elements: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkLayout {
    pub chunk_length: u64,
    pub chunks: Vec<Chunk>,
    pub param_to_chunk: BTreeMap<String, usize>,
    pub total_elements: u64,
    /// `n_chunks * chunk_length`.
    pub aggregate_length: u64,
}

impl ChunkLayout {
    pub fn n_chunks(&self) -> usize {
        self.chunks.len()
    }
}

/// Chunk ids touched by each coarse operator, forward then backward.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkTrace {
    pub forward: Vec<Vec<usize>>,
    pub backward: Vec<Vec<usize>>,
    /// Chunk id → backward position after which all of its gradients exist.
    pub reduce_after: BTreeMap<usize, usize>,
}

impl ChunkTrace {
    pub fn n_chunks(&self) -> usize {
        self.reduce_after.len()
    }

    /// Largest number of chunks a single coarse operator needs resident at once.
    pub fn working_set_blocks(&self) -> usize {
        self.forward.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Splits off multi-use parameters and orders the rest by first forward use.
///
/// Returns the total element count of the shared parameters and the
/// single-use sequence. Parameters first used by the same operator keep
/// their declaration order.
pub fn partition_multiuse(profile: &ModelProfile) -> (u64, Vec<SequencedParam>) {
    let mut first_use: HashMap<&str, usize> = HashMap::new();
    for (pos, op) in profile.operators.iter().enumerate() {
        for id in &op.param_ids {
            first_use.entry(id.as_str()).or_insert(pos);
        }
    }

    let mut shared_elements = 0;
    let mut single: Vec<(usize, usize, SequencedParam)> = Vec::new();
    for (decl, p) in profile.parameters.iter().enumerate() {
        if p.shared {
            shared_elements += p.numel;
            continue;
        }
        let pos = first_use.get(p.id.as_str()).copied().unwrap_or(usize::MAX);
        single.push((
            pos,
            decl,
            SequencedParam {
                id: p.id.clone(),
                numel: p.numel,
            },
        ));
    }
    single.sort_by_key(|&(pos, decl, _)| (pos, decl));
    (
        shared_elements,
        single.into_iter().map(|(_, _, p)| p).collect(),
    )
}

/// Greedy in-order grouping: a parameter joins the open chunk if it fits,
/// otherwise the chunk is closed and a new one opened.
pub fn pack_chunks(sequence: &[SequencedParam], chunk_length: u64) -> Result<ChunkLayout> {
    if chunk_length == 0 {
        return Err(Error::InvalidArgument(
            "chunk length must be positive".into(),
        ));
    }
    let mut chunks: Vec<Chunk> = Vec::new();
    let mut param_to_chunk = BTreeMap::new();
    let mut total_elements = 0;

    for p in sequence {
        if p.numel > chunk_length {
            return Err(Error::ChunkTooSmall {
                param: p.id.clone(),
                numel: p.numel,
                chunk_length,
            });
        }
        let needs_new = chunks
            .last()
            .is_none_or(|c| c.used_elements + p.numel > chunk_length);
        if needs_new {
            chunks.push(Chunk {
                id: chunks.len(),
                length: chunk_length,
                members: Vec::new(),
                used_elements: 0,
            });
        }
        let chunk = chunks.last_mut().expect("just ensured");
        chunk.members.push(ChunkMember {
            param_id: p.id.clone(),
            offset: chunk.used_elements,
            numel: p.numel,
        });
        chunk.used_elements += p.numel;
        total_elements += p.numel;
        if param_to_chunk.insert(p.id.clone(), chunk.id).is_some() {
            return Err(Error::Consistency(format!(
                "parameter `{}` appears twice in the packing sequence",
                p.id
            )));
        }
    }

    let aggregate_length = chunks.len() as u64 * chunk_length;
    Ok(ChunkLayout {
        chunk_length,
        chunks,
        param_to_chunk,
        total_elements,
        aggregate_length,
    })
}

/// Fraction of the aggregate chunk length left as padding.
pub fn waste_rate(layout: &ChunkLayout) -> f64 {
    if layout.aggregate_length == 0 {
        return 0.0;
    }
    (layout.aggregate_length - layout.total_elements) as f64 / layout.aggregate_length as f64
}

/// Maps each coarse operator onto the chunks owning its parameters.
pub fn build_chunk_trace(trace: &AccessTrace, layout: &ChunkLayout) -> Result<ChunkTrace> {
    let mut forward = Vec::with_capacity(trace.coarse_ops.len());
    for node in &trace.coarse_ops {
        let mut ids = BTreeSet::new();
        for param in node {
            let chunk = layout.param_to_chunk.get(param).ok_or_else(|| {
                Error::Consistency(format!("parameter `{param}` is not mapped to any chunk"))
            })?;
            ids.insert(*chunk);
        }
        forward.push(ids.into_iter().collect::<Vec<_>>());
    }
    let backward: Vec<Vec<usize>> = forward.iter().rev().cloned().collect();

    let mut reduce_after = BTreeMap::new();
    for (pos, node) in backward.iter().enumerate() {
        for &c in node {
            reduce_after.insert(c, pos);
        }
    }
    if let Some(missing) = (0..layout.n_chunks()).find(|c| !reduce_after.contains_key(c)) {
        return Err(Error::Consistency(format!(
            "chunk {missing} is never accessed by the trace"
        )));
    }

    Ok(ChunkTrace {
        forward,
        backward,
        reduce_after,
    })
}
