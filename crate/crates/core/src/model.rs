//! Full model assembly: gated graph recurrence → temporal convolution stack
//! → per-node prediction head, plus the loss, optimizer, training loop, and
//! checkpoint plumbing in the submodules.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::init;
use crate::recurrent::{encode_sequence, Encoder};
use crate::substrate::{
    fmt_shape, ParamId, ParamSet, Scalar, SubstrateError, Tape, Tensor, Var,
};
use crate::tcn::TemporalStack;

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod train;

/// Dilation schedule of the temporal stack: with kernel 2 this covers a
/// 31-step receptive field, comfortably over the default 12-step window.
pub const DILATIONS: [usize; 4] = [1, 2, 4, 8];

#[derive(Error, Debug)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: SubstrateError,
    },
    #[error(transparent)]
    Substrate(#[from] SubstrateError),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: training diverged")]
    Diverged { epoch: usize, batch: usize },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
}

/// Everything that determines the computation graph and the training run.
/// `nodes` has no default — it comes from the dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub nodes: usize,
    pub features: usize,
    pub window: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub heads: usize,
    pub head_hidden: usize,
    pub kernel: usize,
    pub dropout: f64,
    pub lr: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub no_node_embedding: bool,
    pub no_resnet: bool,
    pub no_reverse_gru: bool,
    pub no_tcn: bool,
}

impl ModelConfig {
    pub fn default_for(nodes: usize) -> Self {
        ModelConfig {
            nodes,
            features: 1,
            window: 12,
            embed_dim: 10,
            hidden: 64,
            heads: 3,
            head_hidden: 512,
            kernel: 2,
            dropout: 0.1,
            lr: 0.001,
            batch: 64,
            max_epochs: 300,
            patience: 15,
            seed: 0,
            no_node_embedding: false,
            no_resnet: false,
            no_reverse_gru: false,
            no_tcn: false,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let extents = [
            ("nodes", self.nodes),
            ("features", self.features),
            ("window", self.window),
            ("embed_dim", self.embed_dim),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("head_hidden", self.head_hidden),
            ("kernel", self.kernel),
            ("batch", self.batch),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
        ];
        for (name, v) in extents {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be at least 1")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(ModelError::Config(format!("lr {} must be finite and >= 0", self.lr)));
        }
        Ok(())
    }

    /// Key-sorted `key=value` lines. This text is the hashed identity of a
    /// configuration: checkpoints embed it and the resolved-config artifact
    /// prints it, so its byte layout must stay stable.
    pub fn canonical_text(&self) -> String {
        let mut pairs: BTreeMap<&str, String> = BTreeMap::new();
        pairs.insert("batch", self.batch.to_string());
        pairs.insert("dropout", self.dropout.to_string());
        pairs.insert("embed_dim", self.embed_dim.to_string());
        pairs.insert("features", self.features.to_string());
        pairs.insert("head_hidden", self.head_hidden.to_string());
        pairs.insert("heads", self.heads.to_string());
        pairs.insert("hidden", self.hidden.to_string());
        pairs.insert("kernel", self.kernel.to_string());
        pairs.insert("lr", self.lr.to_string());
        pairs.insert("max_epochs", self.max_epochs.to_string());
        pairs.insert("no_node_embedding", self.no_node_embedding.to_string());
        pairs.insert("no_resnet", self.no_resnet.to_string());
        pairs.insert("no_reverse_gru", self.no_reverse_gru.to_string());
        pairs.insert("no_tcn", self.no_tcn.to_string());
        pairs.insert("nodes", self.nodes.to_string());
        pairs.insert("patience", self.patience.to_string());
        pairs.insert("seed", self.seed.to_string());
        pairs.insert("window", self.window.to_string());
        let mut out = String::new();
        for (k, v) in pairs {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// FNV-1a over the canonical text.
    pub fn hash(&self) -> u64 {
        fnv1a(self.canonical_text().as_bytes())
    }

    /// Applies one `key=value` assignment; unknown keys and unparsable
    /// values are configuration errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ModelError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ModelError> {
            value.trim().parse().map_err(|_| {
                ModelError::Config(format!("cannot parse {key}={value:?}"))
            })
        }
        match key {
            "nodes" => self.nodes = parse(key, value)?,
            "features" => self.features = parse(key, value)?,
            "window" => self.window = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "head_hidden" => self.head_hidden = parse(key, value)?,
            "kernel" => self.kernel = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "no_node_embedding" => self.no_node_embedding = parse(key, value)?,
            "no_resnet" => self.no_resnet = parse(key, value)?,
            "no_reverse_gru" => self.no_reverse_gru = parse(key, value)?,
            "no_tcn" => self.no_tcn = parse(key, value)?,
            other => {
                return Err(ModelError::Config(format!("unknown configuration key {other:?}")))
            }
        }
        Ok(())
    }

    /// Parses a complete canonical text (the checkpoint-embedded form).
    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let mut cfg = ModelConfig::default_for(1);
        let mut seen = 0usize;
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ModelError::Config(format!("line {}: expected key=value, got {line:?}", ln + 1))
            })?;
            cfg.set(key.trim(), value)?;
            seen += 1;
        }
        if seen == 0 {
            return Err(ModelError::Config("empty configuration text".to_string()));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Clone, Copy, Debug)]
pub struct Head {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Head {
    fn register<T: Scalar>(
        params: &mut ParamSet<T>,
        rng: &mut ChaCha8Rng,
        flat_width: usize,
        hidden: usize,
        out_width: usize,
    ) -> Result<Self, SubstrateError> {
        Ok(Head {
            w1: params.add("head.w1", init::weight(rng, &[flat_width, hidden], flat_width))?,
            b1: params.add("head.b1", Tensor::zeros(&[hidden]))?,
            w2: params.add("head.w2", init::weight(rng, &[hidden, out_width], hidden))?,
            b2: params.add("head.b2", Tensor::zeros(&[out_width]))?,
        })
    }
}

/// The wiring of one configuration: which parameters exist and how a forward
/// pass composes them. Holds no parameter values — those live in a
/// `ParamSet` built alongside it.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub tcn: Option<TemporalStack>,
    pub head: Head,
    /// Row-normalized predefined adjacency; present exactly when the learned
    /// node embedding is ablated.
    pub fixed_adjacency: Option<Tensor<f64>>,
}

impl Model {
    /// Builds the wiring and draws initial parameters. Draw order is fixed:
    /// encoder (forward cell, then backward), temporal stack, head.
    pub fn build<T: Scalar>(
        config: &ModelConfig,
        adjacency: Option<&Tensor<f64>>,
    ) -> Result<(Model, ParamSet<T>), ModelError> {
        config.validate()?;
        let adaptive = !config.no_node_embedding;
        let fixed_adjacency = if adaptive {
            None
        } else {
            let a = adjacency.ok_or_else(|| {
                ModelError::Config(
                    "the no_node_embedding variant needs a predefined adjacency (edge list)"
                        .to_string(),
                )
            })?;
            if a.shape() != [config.nodes, config.nodes] {
                return Err(ModelError::Config(format!(
                    "predefined adjacency is {}, expected [{n} x {n}]",
                    fmt_shape(a.shape()),
                    n = config.nodes
                )));
            }
            Some(a.clone())
        };

        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

        let encoder = Encoder::register(
            &mut params,
            &mut rng,
            config.nodes,
            config.features,
            config.hidden,
            config.heads,
            config.embed_dim,
            adaptive,
            !config.no_reverse_gru,
            !config.no_resnet,
        )?;
        let channels = encoder.output_width();
        let tcn = if config.no_tcn {
            None
        } else {
            Some(TemporalStack::register(
                &mut params,
                &mut rng,
                "tcn",
                channels,
                config.kernel,
                &DILATIONS,
                config.dropout,
            )?)
        };
        let head = Head::register(
            &mut params,
            &mut rng,
            config.window * channels,
            config.head_hidden,
            config.window * config.features,
        )?;
        Ok((
            Model {
                config: config.clone(),
                encoder,
                tcn,
                head,
                fixed_adjacency,
            },
            params,
        ))
    }

    /// `x: [B, N, T, F]` → predictions `[B, N, T, F]` for the next window.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        param_vars: &[Var],
        x: Var,
        training: bool,
    ) -> Result<Var, ModelError> {
        let cfg = &self.config;
        let shape = tape.value(x).shape().to_vec();
        let want = [cfg.nodes, cfg.window, cfg.features];
        if shape.len() != 4 || shape[1..] != want {
            return Err(ModelError::Config(format!(
                "input is {}, expected [B x {} x {} x {}]",
                fmt_shape(&shape),
                cfg.nodes,
                cfg.window,
                cfg.features
            )));
        }
        let batch = shape[0];

        let stage = |stage: &'static str| move |source| ModelError::Stage { stage, source };

        let fixed = match &self.fixed_adjacency {
            Some(a) => Some(tape.leaf(a.cast::<T>()).map_err(stage("encoder"))?),
            None => None,
        };
        let prep = self
            .encoder
            .prepare(tape, param_vars, fixed)
            .map_err(stage("encoder"))?;
        let h = encode_sequence(tape, &prep, x).map_err(stage("encoder"))?;

        let o = match &self.tcn {
            Some(stack) => stack
                .forward(tape, param_vars, h, training)
                .map_err(stage("temporal stack"))?,
            None => h,
        };

        let channels = self.encoder.output_width();
        let head = |r| ModelError::Stage {
            stage: "head",
            source: r,
        };
        let flat = tape
            .reshape(o, &[batch, cfg.nodes, cfg.window * channels])
            .map_err(head)?;
        let pre = tape.matmul(flat, param_vars[self.head.w1.0]).map_err(head)?;
        let pre = tape.add(pre, param_vars[self.head.b1.0]).map_err(head)?;
        let act = tape.relu(pre).map_err(head)?;
        let out = tape.matmul(act, param_vars[self.head.w2.0]).map_err(head)?;
        let out = tape.add(out, param_vars[self.head.b2.0]).map_err(head)?;
        tape.reshape(out, &[batch, cfg.nodes, cfg.window, cfg.features])
            .map_err(head)
    }
}

/// Mean absolute error over every element. Requires exactly matching shapes
/// so a silently broadcast target can never deflate the loss.
pub fn l1_loss<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    target: Var,
) -> Result<Var, SubstrateError> {
    if tape.value(pred).shape() != tape.value(target).shape() {
        return Err(SubstrateError::ShapeMismatch {
            op: "l1_loss",
            lhs: fmt_shape(tape.value(pred).shape()),
            rhs: fmt_shape(tape.value(target).shape()),
        });
    }
    let diff = tape.sub(pred, target)?;
    let mag = tape.abs(diff)?;
    tape.mean_all(mag)
}

/// Closed-form parameter count for a configuration, written out from the
/// layer shapes rather than asking the layers, so wiring bugs cannot hide.
pub fn parameter_count(config: &ModelConfig) -> usize {
    let n = config.nodes;
    let d = config.embed_dim;
    let f = config.features;
    let fh = config.hidden;
    let q = config.heads;
    let gate_in = f + fh;

    let gate = if config.no_node_embedding {
        q * (gate_in * fh + 2 * fh) + (q * fh) * fh + 2 * fh
    } else {
        n * d + q * (d * gate_in * fh + 2 * fh) + n * d + d * (q * fh) * fh + 2 * fh
    };
    let residual = if config.no_resnet { 0 } else { f * fh + fh * fh };
    let cell = 3 * gate + residual;
    let directions = if config.no_reverse_gru { 1 } else { 2 };
    let encoder = directions * cell;

    let channels = directions * fh;
    let tcn = if config.no_tcn {
        0
    } else {
        DILATIONS.len() * 2 * (channels * channels * config.kernel + channels)
    };

    let flat = config.window * channels;
    let out = config.window * f;
    let head = flat * config.head_hidden + config.head_hidden + config.head_hidden * out + out;

    encoder + tcn + head
}
