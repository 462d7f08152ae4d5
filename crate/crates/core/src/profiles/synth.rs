use super::model::{ModelProfile, OperatorNode, ParameterSpec};
use crate::error::{Error, Result};

/// Bytes per element of the activations kept under checkpointing (FP16).
const ACTIVATION_ELEMENT_BYTES: u64 = 2;
/// Checkpointed tensors per layer: the saved layer input plus the recompute peak.
const ACTIVATION_TENSORS_PER_LAYER: u64 = 2;

/// GPT-2 style decoder shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformerShape {
    pub hidden: u64,
    pub layers: u64,
    pub heads: u64,
    pub vocab: u64,
    pub seq_len: u64,
    pub batch: u64,
}

pub const DEFAULT_VOCAB: u64 = 50257;
pub const DEFAULT_SEQ_LEN: u64 = 1024;
pub const DEFAULT_BATCH: u64 = 4;

impl TransformerShape {
    pub fn new(hidden: u64, layers: u64, heads: u64) -> Self {
        Self {
            hidden,
            layers,
            heads,
            vocab: DEFAULT_VOCAB,
            seq_len: DEFAULT_SEQ_LEN,
            batch: DEFAULT_BATCH,
        }
    }

    /// Named GPT-2 configurations: `gpt2-4b`, `gpt2-10b`, `gpt2-15b`, `gpt2-20b`.
    pub fn preset(name: &str) -> Option<Self> {
        let (hidden, layers, heads) = match name.to_ascii_lowercase().as_str() {
            "gpt2-4b" => (3072, 32, 24),
            "gpt2-10b" => (4096, 48, 32),
            "gpt2-15b" => (8192, 18, 64),
            "gpt2-20b" => (8192, 24, 64),
            _ => return None,
        };
        Some(Self::new(hidden, layers, heads))
    }

    pub const PRESETS: [&'static str; 4] = ["gpt2-4b", "gpt2-10b", "gpt2-15b", "gpt2-20b"];

    fn validate(&self) -> Result<()> {
        let fields = [
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("heads", self.heads),
            ("vocab", self.vocab),
            ("seq_len", self.seq_len),
            ("batch", self.batch),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Checkpointed activation estimate in bytes.
    pub fn activation_bytes(&self) -> u64 {
        ACTIVATION_ELEMENT_BYTES
            * self.batch
            * self.seq_len
            * self.hidden
            * self.layers
            * ACTIVATION_TENSORS_PER_LAYER
    }

    /// Causal attention masks, one byte per entry, one mask per layer.
    pub fn buffer_bytes(&self) -> u64 {
        self.layers * self.seq_len * self.seq_len
    }
}

struct Builder {
    parameters: Vec<ParameterSpec>,
    operators: Vec<OperatorNode>,
}

impl Builder {
    fn param(&mut self, id: String, numel: u64, shared: bool) -> String {
        self.parameters.push(ParameterSpec {
            id: id.clone(),
            numel,
            shared,
        });
        id
    }

    fn op(&mut self, name: String, param_ids: Vec<String>, ac_group: Option<u64>) {
        self.operators.push(OperatorNode {
            name,
            param_ids,
            ac_group,
        });
    }

    /// Weight + bias pair read by a single operator.
    fn affine(&mut self, prefix: &str, weight: u64, bias: u64, group: Option<u64>) {
        let w = self.param(format!("{prefix}.weight"), weight, false);
        let b = self.param(format!("{prefix}.bias"), bias, false);
        self.op(prefix.to_string(), vec![w, b], group);
    }
}

/// Builds a GPT-2 profile with one checkpointed function per decoder layer.
///
/// The token embedding is tied to the LM head and is therefore declared shared.
pub fn synthesize_transformer_profile(shape: &TransformerShape) -> Result<ModelProfile> {
    shape.validate()?;
    let h = shape.hidden;
    let mut b = Builder {
        parameters: Vec::new(),
        operators: Vec::new(),
    };

    let wte = b.param("wte.weight".into(), shape.vocab * h, true);
    let wpe = b.param("wpe.weight".into(), shape.seq_len * h, false);
    b.op("embed".into(), vec![wte.clone(), wpe], None);

    for layer in 0..shape.layers {
        let g = Some(layer);
        let p = format!("h.{layer}");
        b.affine(&format!("{p}.ln_1"), h, h, g);
        b.affine(&format!("{p}.attn.c_attn"), 3 * h * h, 3 * h, g);
        b.affine(&format!("{p}.attn.c_proj"), h * h, h, g);
        b.affine(&format!("{p}.ln_2"), h, h, g);
        b.affine(&format!("{p}.mlp.c_fc"), 4 * h * h, 4 * h, g);
        b.affine(&format!("{p}.mlp.c_proj"), 4 * h * h, h, g);
    }

    b.affine("ln_f", h, h, None);
    b.op("lm_head".into(), vec![wte], None);

    let profile = ModelProfile {
        name: format!(
            "gpt2-h{}-l{}-a{}-b{}",
            shape.hidden, shape.layers, shape.heads, shape.batch
        ),
        parameters: b.parameters,
        operators: b.operators,
        activation_bytes: shape.activation_bytes(),
        buffer_bytes: shape.buffer_bytes(),
    };
    profile.validate()?;
    Ok(profile)
}
