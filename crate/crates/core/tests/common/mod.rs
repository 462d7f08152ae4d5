//! Seeded generators shared by the integration tests.
#![allow(dead_code)]

use chunkplan::profiles::{ModelProfile, OperatorNode, ParameterSpec, RateEntry};
use rand::Rng;

/// A random valid profile: contiguous checkpoint groups, at most one shared parameter.
pub fn random_profile<R: Rng>(rng: &mut R, max_ops: usize, max_numel: u64) -> ModelProfile {
    let n_ops = rng.gen_range(1..=max_ops);
    let mut parameters = Vec::new();
    let mut operators = Vec::new();
    let mut group: Option<u64> = None;
    let mut next_group = 0;

    for op in 0..n_ops {
        let mut ids = Vec::new();
        for k in 0..rng.gen_range(1..=3) {
            let id = format!("op{op}.p{k}");
            parameters.push(ParameterSpec {
                id: id.clone(),
                numel: rng.gen_range(1..=max_numel),
                shared: false,
            });
            ids.push(id);
        }
        group = match rng.gen_range(0..3) {
            0 => None,
            1 if group.is_some() => group,
            _ => {
                next_group += 1;
                Some(next_group)
            }
        };
        operators.push(OperatorNode {
            name: format!("op{op}"),
            param_ids: ids,
            ac_group: group,
        });
    }

    if rng.gen_bool(0.3) {
        parameters.push(ParameterSpec {
            id: "tied".into(),
            numel: rng.gen_range(1..=max_numel),
            shared: true,
        });
        operators[0].param_ids.push("tied".into());
        operators.last_mut().unwrap().param_ids.push("tied".into());
    }

    ModelProfile {
        name: "random".into(),
        parameters,
        operators,
        activation_bytes: 0,
        buffer_bytes: 0,
    }
}

/// Random rates in bytes/s; GPU-GPU bandwidth present only for n > 1.
pub fn random_rates<R: Rng>(rng: &mut R, n: u32) -> RateEntry {
    let gbps = |rng: &mut R, lo: f64, hi: f64| rng.gen_range(lo..hi) * 1e9;
    RateEntry {
        b_g2g: (n > 1).then(|| gbps(rng, 10.0, 400.0)),
        b_c2g: gbps(rng, 5.0, 100.0),
        b_g2c: gbps(rng, 5.0, 100.0),
        v_g: gbps(rng, 10.0, 500.0),
        v_c: gbps(rng, 1.0, 20.0),
    }
}
