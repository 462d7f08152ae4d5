use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::model::ModelProfile;
use crate::error::{Error, Result};

/// Forward-order parameter access at the granularity of checkpointed functions.
///
/// Each element of `coarse_ops` is the parameter set of one coarse operator:
/// either a whole activation-checkpointing function or a bare operator. Every
/// non-shared parameter occurs in exactly one coarse operator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessTrace {
    pub coarse_ops: Vec<Vec<String>>,
    pub shared_param_ids: Vec<String>,
}

impl AccessTrace {
    pub fn param_count(&self) -> usize {
        self.coarse_ops.iter().map(Vec::len).sum()
    }
}

/// Collapses each activation-checkpointing function into a single operator.
///
/// Operators of one `ac_group` must be contiguous. Shared parameters are
/// removed from every node and coarse nodes left empty are dropped.
pub fn coarsen_graph(profile: &ModelProfile) -> Result<AccessTrace> {
    let shared: HashSet<&str> = profile
        .parameters
        .iter()
        .filter(|p| p.shared)
        .map(|p| p.id.as_str())
        .collect();

    let mut nodes: Vec<Vec<&str>> = Vec::new();
    let mut open_group: Option<u64> = None;
    let mut closed_groups = HashSet::new();

    for op in &profile.operators {
        match op.ac_group {
            Some(g) if open_group == Some(g) => {
                nodes
                    .last_mut()
                    .expect("open group has a node")
                    .extend(op.param_ids.iter().map(String::as_str));
            }
            Some(g) => {
                if let Some(prev) = open_group.take() {
                    closed_groups.insert(prev);
                }
                if closed_groups.contains(&g) {
                    return Err(Error::Validation(format!(
                        "activation-checkpointing group {g} is not contiguous (operator `{}`)",
                        op.name
                    )));
                }
                open_group = Some(g);
                nodes.push(op.param_ids.iter().map(String::as_str).collect());
            }
            None => {
                if let Some(prev) = open_group.take() {
                    closed_groups.insert(prev);
                }
                nodes.push(op.param_ids.iter().map(String::as_str).collect());
            }
        }
    }

    let mut coarse_ops: Vec<Vec<String>> = Vec::with_capacity(nodes.len());
    let mut owner: HashMap<&str, usize> = HashMap::new();
    for node in nodes {
        let mut seen = HashSet::new();
        let params: Vec<&str> = node
            .into_iter()
            .filter(|id| !shared.contains(id) && seen.insert(*id))
            .collect();
        if params.is_empty() {
            continue;
        }
        let idx = coarse_ops.len();
        for id in &params {
            if let Some(&first) = owner.get(id) {
                return Err(Error::UncommonGraph {
                    param: id.to_string(),
                    first,
                    second: idx,
                });
            }
            owner.insert(id, idx);
        }
        coarse_ops.push(params.into_iter().map(str::to_string).collect());
    }

    let shared_param_ids = profile
        .parameters
        .iter()
        .filter(|p| p.shared)
        .map(|p| p.id.clone())
        .collect();

    Ok(AccessTrace {
        coarse_ops,
        shared_param_ids,
    })
}

/// Largest element count touched by a single coarse operator.
pub fn ac_buffer_size(trace: &AccessTrace, profile: &ModelProfile) -> u64 {
    let numel = profile.numel_by_id();
    trace
        .coarse_ops
        .iter()
        .map(|node| {
            node.iter()
                .map(|id| numel.get(id.as_str()).copied().unwrap_or(0))
                .sum::<u64>()
        })
        .max()
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::{
        synthesize_transformer_profile, OperatorNode, ParameterSpec, TransformerShape,
    };

    fn profile(params: &[(&str, u64, bool)], ops: &[(&[&str], Option<u64>)]) -> ModelProfile {
        ModelProfile {
            name: "t".into(),
            parameters: params
                .iter()
                .map(|&(id, numel, shared)| ParameterSpec {
                    id: id.into(),
                    numel,
                    shared,
                })
                .collect(),
            operators: ops
                .iter()
                .enumerate()
                .map(|(i, (ids, g))| OperatorNode {
                    name: format!("op{i}"),
                    param_ids: ids.iter().map(|s| s.to_string()).collect(),
                    ac_group: *g,
                })
                .collect(),
            activation_bytes: 0,
            buffer_bytes: 0,
        }
    }

    #[test]
    fn same_group_merges() {
        let p = profile(
            &[("a", 1, false), ("b", 1, false)],
            &[(&["a"], Some(0)), (&["b"], Some(0))],
        );
        let t = coarsen_graph(&p).unwrap();
        assert_eq!(t.coarse_ops, vec![vec!["a".to_string(), "b".to_string()]]);
    }

    #[test]
    fn reuse_across_nodes_is_uncommon() {
        let p = profile(&[("a", 1, false)], &[(&["a"], Some(0)), (&["a"], Some(1))]);
        match coarsen_graph(&p).unwrap_err() {
            Error::UncommonGraph {
                param,
                first,
                second,
            } => {
                assert_eq!(param, "a");
                assert_eq!((first, second), (0, 1));
            }
            e => panic!("unexpected {e}"),
        }
        assert!(coarsen_graph(&p)
            .unwrap_err()
            .to_string()
            .contains("shared"));
    }

    #[test]
    fn reuse_inside_one_group_is_fine() {
        // recompute inside a checkpointed function reads the weight twice
        let p = profile(&[("a", 1, false)], &[(&["a"], Some(3)), (&["a"], Some(3))]);
        assert_eq!(
            coarsen_graph(&p).unwrap().coarse_ops,
            vec![vec!["a".to_string()]]
        );
    }

    #[test]
    fn non_contiguous_group_rejected() {
        let p = profile(
            &[("a", 1, false), ("b", 1, false), ("c", 1, false)],
            &[(&["a"], Some(0)), (&["b"], None), (&["c"], Some(0))],
        );
        assert!(matches!(coarsen_graph(&p), Err(Error::Validation(_))));
    }

    #[test]
    fn shared_removed_and_empty_nodes_dropped() {
        let p = profile(
            &[("emb", 10, true), ("w", 5, false)],
            &[(&["emb"], None), (&["w"], None), (&["emb"], None)],
        );
        let t = coarsen_graph(&p).unwrap();
        assert_eq!(t.coarse_ops, vec![vec!["w".to_string()]]);
        assert_eq!(t.shared_param_ids, vec!["emb".to_string()]);
    }

    #[test]
    fn ac_buffer_examples() {
        let p = profile(
            &[("a", 3, false), ("b", 4, false), ("c", 5, false)],
            &[(&["a", "b"], Some(0)), (&["c"], Some(1))],
        );
        let t = coarsen_graph(&p).unwrap();
        assert_eq!(ac_buffer_size(&t, &p), 7);
        let empty = AccessTrace {
            coarse_ops: vec![],
            shared_param_ids: vec![],
        };
        assert_eq!(ac_buffer_size(&empty, &p), 0);
    }

    #[test]
    fn gpt2_coarse_structure() {
        let shape = TransformerShape::preset("gpt2-4b").unwrap();
        let p = synthesize_transformer_profile(&shape).unwrap();
        let t = coarsen_graph(&p).unwrap();
        // embedding node + one node per layer + final layer norm
        assert_eq!(t.coarse_ops.len() as u64, shape.layers + 2);
        assert_eq!(t.param_count(), p.parameters.len() - 1);
        let h = shape.hidden;
        let per_layer = 12 * h * h + 13 * h;
        assert_eq!(ac_buffer_size(&t, &p), per_layer);
    }
}
