//! Encoder-decoder attention model for per-step CFA prediction.
//!
//! The encoder reads the KC token sequence; the decoder emits one CFA
//! logit per step, attending causally over previously observed outcomes
//! and over the encoder states. Attention is softmax(QYᵀ/√d_k)V per head;
//! the encoder-decoder attention of the final decoder layer is what the
//! mastery scores are distilled from.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::nn::{
    causal_mask, glorot_init, Adam, Checkpoint, NnError, ParamId, ParamSet, Tape, Var,
};
use crate::rng::{derive_seed, rng_from_seed};
use crate::symmetry::positional_encoding;

use super::{MasteryError, OpportunitySequence};

/// Decoder input token for the first position.
const START_TOKEN: usize = 2;
/// Decoder token vocabulary: CFA 0, CFA 1, start.
const DEC_VOCAB: usize = 3;

/// Hyperparameters for the CFA attention model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionParams {
    pub model_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub key_dim: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl AttentionParams {
    /// Small configuration for desk-scale corpora.
    pub fn desk() -> Self {
        AttentionParams {
            model_dim: 32,
            num_layers: 1,
            num_heads: 2,
            key_dim: 16,
            max_seq_len: 150,
            dropout: 0.1,
            learning_rate: 0.005,
            epochs: 30,
            batch_size: 8,
            seed: 0,
        }
    }

    /// Full-size configuration (dimension 512, 6 layers, 8 heads, d_k 64).
    pub fn full() -> Self {
        AttentionParams {
            model_dim: 512,
            num_layers: 6,
            num_heads: 8,
            key_dim: 64,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<(), MasteryError> {
        if self.model_dim == 0 || self.num_layers == 0 || self.num_heads == 0 {
            return Err(MasteryError::Config("model dimensions must be positive".into()));
        }
        if self.key_dim * self.num_heads != self.model_dim {
            return Err(MasteryError::Config(format!(
                "key_dim ({}) × num_heads ({}) must equal model_dim ({})",
                self.key_dim, self.num_heads, self.model_dim
            )));
        }
        if self.model_dim % 2 != 0 {
            return Err(MasteryError::Config("model_dim must be even".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(MasteryError::Config("dropout must be in [0, 1)".into()));
        }
        if self.max_seq_len == 0 || self.batch_size == 0 {
            return Err(MasteryError::Config("max_seq_len and batch_size must be ≥ 1".into()));
        }
        Ok(())
    }
}

struct HeadIds {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
}

struct AttnIds {
    heads: Vec<HeadIds>,
    wo: ParamId,
}

struct FfnIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

struct EncIds {
    attn: AttnIds,
    ln1: (ParamId, ParamId),
    ffn: FfnIds,
    ln2: (ParamId, ParamId),
}

struct DecIds {
    self_attn: AttnIds,
    ln1: (ParamId, ParamId),
    cross: AttnIds,
    ln2: (ParamId, ParamId),
    ffn: FfnIds,
    ln3: (ParamId, ParamId),
}

struct Layout {
    kc_emb: ParamId,
    dec_emb: ParamId,
    enc: Vec<EncIds>,
    dec: Vec<DecIds>,
    out_w: ParamId,
    out_b: ParamId,
}

/// Trained CFA model.
pub struct CfaModel {
    pub hp: AttentionParams,
    pub num_kcs: usize,
    pub params: ParamSet,
    layout: Layout,
}

/// Per-epoch mean training loss, plus the loss of the untrained model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
}

/// Output of [`CfaModel::predict`].
#[derive(Debug, Clone)]
pub struct CfaPrediction {
    pub predictions: Vec<bool>,
    pub probabilities: Vec<f64>,
    /// Encoder-decoder attention, `[layer][head]`, each decoder-step ×
    /// encoder-step and row-stochastic.
    pub attention: Vec<Vec<Array2<f64>>>,
}

fn attn_ids(params: &mut ParamSet, prefix: &str, hp: &AttentionParams, init: &mut dyn FnMut(usize, usize) -> Array2<f64>) -> AttnIds {
    let heads = (0..hp.num_heads)
        .map(|h| HeadIds {
            wq: params.add(format!("{prefix}.h{h}.wq"), init(hp.model_dim, hp.key_dim)),
            wk: params.add(format!("{prefix}.h{h}.wk"), init(hp.model_dim, hp.key_dim)),
            wv: params.add(format!("{prefix}.h{h}.wv"), init(hp.model_dim, hp.key_dim)),
        })
        .collect();
    AttnIds { heads, wo: params.add(format!("{prefix}.wo"), init(hp.model_dim, hp.model_dim)) }
}

fn ffn_ids(params: &mut ParamSet, prefix: &str, hp: &AttentionParams, init: &mut dyn FnMut(usize, usize) -> Array2<f64>) -> FfnIds {
    let hidden = 4 * hp.model_dim;
    FfnIds {
        w1: params.add(format!("{prefix}.w1"), init(hp.model_dim, hidden)),
        b1: params.add(format!("{prefix}.b1"), Array2::zeros((1, hidden))),
        w2: params.add(format!("{prefix}.w2"), init(hidden, hp.model_dim)),
        b2: params.add(format!("{prefix}.b2"), Array2::zeros((1, hp.model_dim))),
    }
}

fn ln_ids(params: &mut ParamSet, prefix: &str, d: usize) -> (ParamId, ParamId) {
    (
        params.add(format!("{prefix}.g"), Array2::ones((1, d))),
        params.add(format!("{prefix}.b"), Array2::zeros((1, d))),
    )
}

fn build(num_kcs: usize, hp: &AttentionParams, rng: &mut ChaCha8Rng) -> (ParamSet, Layout) {
    let mut params = ParamSet::new();
    let mut init = |r: usize, c: usize| glorot_init(r, c, rng);
    let kc_emb = params.add("kc_emb", init(num_kcs, hp.model_dim));
    let dec_emb = params.add("dec_emb", init(DEC_VOCAB, hp.model_dim));
    let enc = (0..hp.num_layers)
        .map(|l| EncIds {
            attn: attn_ids(&mut params, &format!("enc{l}.self"), hp, &mut init),
            ln1: ln_ids(&mut params, &format!("enc{l}.ln1"), hp.model_dim),
            ffn: ffn_ids(&mut params, &format!("enc{l}.ffn"), hp, &mut init),
            ln2: ln_ids(&mut params, &format!("enc{l}.ln2"), hp.model_dim),
        })
        .collect();
    let dec = (0..hp.num_layers)
        .map(|l| DecIds {
            self_attn: attn_ids(&mut params, &format!("dec{l}.self"), hp, &mut init),
            ln1: ln_ids(&mut params, &format!("dec{l}.ln1"), hp.model_dim),
            cross: attn_ids(&mut params, &format!("dec{l}.cross"), hp, &mut init),
            ln2: ln_ids(&mut params, &format!("dec{l}.ln2"), hp.model_dim),
            ffn: ffn_ids(&mut params, &format!("dec{l}.ffn"), hp, &mut init),
            ln3: ln_ids(&mut params, &format!("dec{l}.ln3"), hp.model_dim),
        })
        .collect();
    let out_w = params.add("out.w", init(hp.model_dim, 1));
    let out_b = params.add("out.b", Array2::zeros((1, 1)));
    (params, Layout { kc_emb, dec_emb, enc, dec, out_w, out_b })
}

/// Sinusoidal position matrix, one row per position.
fn position_matrix(len: usize, d: usize) -> Array2<f64> {
    let mut m = Array2::zeros((len, d));
    for pos in 0..len {
        let row = positional_encoding(pos, d).expect("even model_dim");
        m.row_mut(pos).assign(&row);
    }
    m
}

struct SeqGraph {
    logits: Var,
    cross_attn: Vec<Vec<Var>>,
}

impl CfaModel {
    pub fn new(num_kcs: usize, hp: AttentionParams) -> Result<Self, MasteryError> {
        hp.validate()?;
        let mut rng = rng_from_seed(derive_seed(hp.seed, "cfa-init"));
        let (params, layout) = build(num_kcs, &hp, &mut rng);
        Ok(CfaModel { hp, num_kcs, params, layout })
    }

    fn mha(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        ids: &AttnIds,
        q_in: Var,
        kv_in: Var,
        mask: Option<&Array2<f64>>,
    ) -> (Var, Vec<Var>) {
        let scale = 1.0 / (self.hp.key_dim as f64).sqrt();
        let mut head_outs = Vec::with_capacity(ids.heads.len());
        let mut attns = Vec::with_capacity(ids.heads.len());
        for h in &ids.heads {
            let q = tape.matmul(q_in, vars[h.wq.index()]);
            let k = tape.matmul(kv_in, vars[h.wk.index()]);
            let v = tape.matmul(kv_in, vars[h.wv.index()]);
            let kt = tape.transpose(k);
            let scores = tape.matmul(q, kt);
            let scores = tape.scale(scores, scale);
            let a = tape.softmax_rows(scores, mask.cloned());
            attns.push(a);
            head_outs.push(tape.matmul(a, v));
        }
        let concat = head_outs
            .into_iter()
            .reduce(|acc, h| tape.concat_cols(acc, h))
            .expect("at least one head");
        (tape.matmul(concat, vars[ids.wo.index()]), attns)
    }

    fn dropout(
        &self,
        tape: &mut Tape,
        x: Var,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Var {
        match rng {
            Some(rng) if self.hp.dropout > 0.0 => {
                let keep = 1.0 - self.hp.dropout;
                let shape = tape.value(x).raw_dim();
                let mask = Array2::from_shape_fn(shape, |_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                let mask = tape.leaf(mask);
                tape.mul(x, mask)
            }
            _ => x,
        }
    }

    fn ffn(&self, tape: &mut Tape, vars: &[Var], ids: &FfnIds, x: Var) -> Var {
        let h = tape.matmul(x, vars[ids.w1.index()]);
        let h = tape.add_row(h, vars[ids.b1.index()]);
        let h = tape.relu(h);
        let out = tape.matmul(h, vars[ids.w2.index()]);
        tape.add_row(out, vars[ids.b2.index()])
    }

    /// Build the forward graph for one sequence with teacher-forced
    /// decoder inputs.
    fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        kc_tokens: &[usize],
        dec_tokens: &[usize],
        mut drop_rng: Option<&mut ChaCha8Rng>,
    ) -> SeqGraph {
        let len = kc_tokens.len();
        let d = self.hp.model_dim;
        let emb_scale = (d as f64).sqrt();
        let positions = tape.leaf(position_matrix(len, d));

        // encoder
        let mut x = tape.gather_rows(vars[self.layout.kc_emb.index()], kc_tokens);
        x = tape.scale(x, emb_scale);
        x = tape.add(x, positions);
        x = self.dropout(tape, x, drop_rng.as_deref_mut());
        for layer in &self.layout.enc {
            let (attn_out, _) = self.mha(tape, vars, &layer.attn, x, x, None);
            let attn_out = self.dropout(tape, attn_out, drop_rng.as_deref_mut());
            let sum = tape.add(x, attn_out);
            x = tape.layer_norm(sum, vars[layer.ln1.0.index()], vars[layer.ln1.1.index()]);
            let f = self.ffn(tape, vars, &layer.ffn, x);
            let f = self.dropout(tape, f, drop_rng.as_deref_mut());
            let sum = tape.add(x, f);
            x = tape.layer_norm(sum, vars[layer.ln2.0.index()], vars[layer.ln2.1.index()]);
        }
        let enc_out = x;

        // decoder
        let mask = causal_mask(len);
        let mut y = tape.gather_rows(vars[self.layout.dec_emb.index()], dec_tokens);
        y = tape.scale(y, emb_scale);
        y = tape.add(y, positions);
        y = self.dropout(tape, y, drop_rng.as_deref_mut());
        let mut cross_attn = Vec::with_capacity(self.layout.dec.len());
        for layer in &self.layout.dec {
            let (self_out, _) = self.mha(tape, vars, &layer.self_attn, y, y, Some(&mask));
            let self_out = self.dropout(tape, self_out, drop_rng.as_deref_mut());
            let sum = tape.add(y, self_out);
            y = tape.layer_norm(sum, vars[layer.ln1.0.index()], vars[layer.ln1.1.index()]);
            let (cross_out, attns) = self.mha(tape, vars, &layer.cross, y, enc_out, None);
            cross_attn.push(attns);
            let cross_out = self.dropout(tape, cross_out, drop_rng.as_deref_mut());
            let sum = tape.add(y, cross_out);
            y = tape.layer_norm(sum, vars[layer.ln2.0.index()], vars[layer.ln2.1.index()]);
            let f = self.ffn(tape, vars, &layer.ffn, y);
            let f = self.dropout(tape, f, drop_rng.as_deref_mut());
            let sum = tape.add(y, f);
            y = tape.layer_norm(sum, vars[layer.ln3.0.index()], vars[layer.ln3.1.index()]);
        }

        let logits = tape.matmul(y, vars[self.layout.out_w.index()]);
        let logits = tape.add_row(logits, vars[self.layout.out_b.index()]);
        SeqGraph { logits, cross_attn }
    }

    fn check_len(&self, seq: &OpportunitySequence) -> Result<(), MasteryError> {
        if seq.tokens.len() > self.hp.max_seq_len {
            return Err(MasteryError::Nn(NnError::SequenceTooLong {
                got: seq.tokens.len(),
                max: self.hp.max_seq_len,
            }));
        }
        if seq.tokens.is_empty() {
            return Err(MasteryError::Config("empty opportunity sequence".into()));
        }
        Ok(())
    }

    fn seq_inputs(seq: &OpportunitySequence) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
        let kc_tokens: Vec<usize> = seq.tokens.iter().map(|t| t.kc.0).collect();
        let mut dec_tokens = Vec::with_capacity(seq.targets.len());
        dec_tokens.push(START_TOKEN);
        dec_tokens.extend(seq.targets.iter().take(seq.targets.len() - 1).map(|&t| t as usize));
        let targets: Vec<f64> = seq.targets.iter().map(|&t| f64::from(u8::from(t))).collect();
        (kc_tokens, dec_tokens, targets)
    }

    /// Mean BCE loss of one sequence under `params` (no dropout).
    pub fn loss_with(&self, params: &ParamSet, seq: &OpportunitySequence) -> f64 {
        let (kc_tokens, dec_tokens, targets) = Self::seq_inputs(seq);
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let graph = self.forward(&mut tape, &vars, &kc_tokens, &dec_tokens, None);
        let loss = tape.bce_with_logits(graph.logits, &targets);
        tape.value(loss)[(0, 0)]
    }

    /// Loss and analytic gradients for one sequence (no dropout), aligned
    /// with the parameter set's order.
    pub fn loss_and_grads(&self, seq: &OpportunitySequence) -> (f64, Vec<Array2<f64>>) {
        let (kc_tokens, dec_tokens, targets) = Self::seq_inputs(seq);
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let graph = self.forward(&mut tape, &vars, &kc_tokens, &dec_tokens, None);
        let loss = tape.bce_with_logits(graph.logits, &targets);
        let value = tape.value(loss)[(0, 0)];
        let mut grads = tape.backward(loss);
        (value, self.params.collect_grads(&vars, &mut grads))
    }

    /// Per-step CFA predictions plus attention matrices.
    ///
    /// The decoder is conditioned on the observed outcome history
    /// (teacher forcing), mirroring how the model is trained; dropout is
    /// disabled.
    pub fn predict(&self, seq: &OpportunitySequence) -> Result<CfaPrediction, MasteryError> {
        self.check_len(seq)?;
        let (kc_tokens, dec_tokens, _) = Self::seq_inputs(seq);
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let graph = self.forward(&mut tape, &vars, &kc_tokens, &dec_tokens, None);
        let probabilities: Vec<f64> = tape
            .value(graph.logits)
            .column(0)
            .iter()
            .map(|&z| 1.0 / (1.0 + (-z).exp()))
            .collect();
        let predictions = probabilities.iter().map(|&p| p > 0.5).collect();
        let attention = graph
            .cross_attn
            .iter()
            .map(|layer| layer.iter().map(|&a| tape.value(a).clone()).collect())
            .collect();
        Ok(CfaPrediction { predictions, probabilities, attention })
    }

    /// Serialize to a self-describing checkpoint.
    pub fn checkpoint(&self, vocab_hash: &str) -> Checkpoint {
        Checkpoint {
            kind: "cfa-attention".into(),
            metadata: json!({
                "hyperparams": self.hp,
                "num_kcs": self.num_kcs,
                "vocab_hash": vocab_hash,
            }),
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(cp: &Checkpoint) -> Result<Self, MasteryError> {
        if cp.kind != "cfa-attention" {
            return Err(MasteryError::Config(format!("checkpoint kind {:?}", cp.kind)));
        }
        let hp: AttentionParams = serde_json::from_value(cp.metadata["hyperparams"].clone())
            .map_err(|e| MasteryError::Config(e.to_string()))?;
        let num_kcs = cp.metadata["num_kcs"]
            .as_u64()
            .ok_or_else(|| MasteryError::Config("missing num_kcs".into()))?
            as usize;
        let mut model = CfaModel::new(num_kcs, hp)?;
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = model.params.name(id).to_string();
            let source = cp
                .params
                .id_by_name(&name)
                .ok_or_else(|| MasteryError::Config(format!("checkpoint missing {name}")))?;
            if cp.params.get(source).raw_dim() != model.params.get(id).raw_dim() {
                return Err(MasteryError::Config(format!("shape mismatch for {name}")));
            }
            *model.params.get_mut(id) = cp.params.get(source).clone();
        }
        Ok(model)
    }
}

/// Train the CFA model on opportunity sequences.
pub fn train_cfa_model(
    sequences: &[OpportunitySequence],
    num_kcs: usize,
    hp: &AttentionParams,
) -> Result<(CfaModel, TrainReport), MasteryError> {
    if sequences.is_empty() {
        return Err(MasteryError::Config("no training sequences".into()));
    }
    let model = CfaModel::new(num_kcs, hp.clone())?;
    for seq in sequences {
        model.check_len(seq)?;
    }
    let mut model = model;
    let initial_loss = sequences.iter().map(|s| model.loss_with(&model.params, s)).sum::<f64>()
        / sequences.len() as f64;

    let mut adam = Adam::new(hp.learning_rate, &model.params);
    let mut shuffle_rng = rng_from_seed(derive_seed(hp.seed, "cfa-shuffle"));
    let mut drop_rng = rng_from_seed(derive_seed(hp.seed, "cfa-dropout"));
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let mut epoch_losses = Vec::with_capacity(hp.epochs);

    for epoch in 0..hp.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(hp.batch_size).enumerate() {
            let mut accum: Option<Vec<Array2<f64>>> = None;
            let mut batch_loss = 0.0;
            for &si in batch {
                let seq = &sequences[si];
                let (kc_tokens, dec_tokens, targets) = CfaModel::seq_inputs(seq);
                let mut tape = Tape::new();
                let vars = model.params.bind(&mut tape);
                let graph =
                    model.forward(&mut tape, &vars, &kc_tokens, &dec_tokens, Some(&mut drop_rng));
                let loss = tape.bce_with_logits(graph.logits, &targets);
                let value = tape.value(loss)[(0, 0)];
                if !value.is_finite() {
                    return Err(MasteryError::Nn(NnError::Diverged { epoch, batch: batch_idx }));
                }
                batch_loss += value;
                let mut grads = tape.backward(loss);
                let seq_grads = model.params.collect_grads(&vars, &mut grads);
                match &mut accum {
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(seq_grads) {
                            *a += &g;
                        }
                    }
                    None => accum = Some(seq_grads),
                }
            }
            let mut grads = accum.expect("nonempty batch");
            let inv = 1.0 / batch.len() as f64;
            for g in &mut grads {
                *g *= inv;
            }
            adam.step(&mut model.params, &grads);
            epoch_loss += batch_loss;
        }
        epoch_losses.push(epoch_loss / sequences.len() as f64);
    }

    Ok((model, TrainReport { initial_loss, epoch_losses }))
}
