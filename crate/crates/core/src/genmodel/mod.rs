//! The instruction generator: a plan/state encoder that builds an attention
//! set over rotated crops, and an autoregressive decoder that cross-attends
//! to it.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffkit::{
    log_softmax, AdamW, DiffError, Graph, Matrix, NamedArray, ParamId, ParamStore, Var,
};
use crate::hexworld::{WorldState, NUM_PROPERTIES};
use crate::planner::{actions_along, Plan};
use crate::seed;
use crate::synthlang::{Instruction, Vocabulary, MAX_INSTRUCTION_LEN};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("plan does not fit the state: {0}")]
    PlanMismatch(String),
    #[error("token `{0}` is not in the vocabulary")]
    OutOfVocabulary(String),
    #[error("instruction has {len} tokens, the model stops at {max}")]
    TooLong { len: usize, max: usize },
    #[error("ensemble has no members")]
    EmptyEnsemble,
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Property embedding width.
    pub prop_dim: usize,
    /// Encoded crop-cell width.
    pub cell_dim: usize,
    /// Crop side, odd.
    pub crop: usize,
    pub orient_dim: usize,
    /// Decoder width; also the width of the bidirectional plan-step encoding.
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn: usize,
    /// Decoding steps, EOS included.
    pub max_len: usize,
    pub vocab: Vec<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            prop_dim: 16,
            cell_dim: 16,
            crop: 3,
            orient_dim: 8,
            width: 32,
            heads: 2,
            layers: 1,
            ffn: 64,
            max_len: MAX_INSTRUCTION_LEN,
            vocab: Vocabulary::standard().tokens,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.crop.is_multiple_of(2) {
            return bad("crop side must be odd");
        }
        let widths = [
            self.prop_dim,
            self.cell_dim,
            self.crop,
            self.orient_dim,
            self.width,
        ];
        if widths.contains(&0)
            || self.heads == 0
            || self.layers == 0
            || self.ffn == 0
            || self.max_len == 0
        {
            return bad("widths must be positive");
        }
        if !self.width.is_multiple_of(2) {
            return bad("width must be even");
        }
        if !self.width.is_multiple_of(self.heads) {
            return bad("width must be divisible by heads");
        }
        if self.vocab.len() < 2
            || self.vocab[Vocabulary::BOS_ID as usize] != crate::synthlang::BOS
            || self.vocab[Vocabulary::EOS_ID as usize] != crate::synthlang::EOS
        {
            return bad("vocabulary must start with BOS and EOS");
        }
        Ok(())
    }

    fn cells(&self) -> usize {
        self.crop * self.crop
    }

    /// Width of one attention-set row.
    pub fn set_width(&self) -> usize {
        self.width + self.cell_dim
    }
}

/// Context vectors the decoder attends to, one row per (plan step, crop cell).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionSet {
    pub steps: usize,
    pub vectors: Matrix,
}

impl AttentionSet {
    pub fn len(&self) -> usize {
        self.vectors.rows
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows == 0
    }
}

/// Which probability a sample records for importance weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BehaviorProb {
    #[default]
    Untempered,
    Tempered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledInstruction {
    pub tokens: Instruction,
    /// Sampled ids, EOS included unless truncated.
    pub ids: Vec<u32>,
    pub logprob_model: f64,
    pub logprob_tempered: f64,
    pub logprob_behavior: f64,
    pub model_index: usize,
    pub truncated: bool,
}

struct Layer {
    self_q: Vec<ParamId>,
    self_k: Vec<ParamId>,
    self_v: Vec<ParamId>,
    self_o: ParamId,
    cross_q: Vec<ParamId>,
    cross_k: Vec<ParamId>,
    cross_v: Vec<ParamId>,
    cross_o: ParamId,
    ff1: ParamId,
    ff1_b: ParamId,
    ff2: ParamId,
    ff2_b: ParamId,
}

struct Ids {
    phi_s: ParamId,
    cell_w: ParamId,
    cell_pos: ParamId,
    cell_b: ParamId,
    cell_mix: ParamId,
    phi_a: ParamId,
    rnn: [(ParamId, ParamId, ParamId); 2],
    mem_w: ParamId,
    mem_b: ParamId,
    tok_emb: ParamId,
    pos_emb: ParamId,
    layers: Vec<Layer>,
    out_w: ParamId,
    out_b: ParamId,
}

pub struct Model {
    config: ModelConfig,
    vocab: Vocabulary,
    pub params: ParamStore,
    ids: Ids,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        let mut m = Model::new(self.config.clone(), 0).expect("config already validated");
        m.params = self.params.clone();
        m
    }
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("config", &self.config)
            .field("scalars", &self.params.num_scalars())
            .finish()
    }
}

fn init(
    store: &mut ParamStore,
    rng: &mut impl Rng,
    name: &str,
    rows: usize,
    cols: usize,
) -> ParamId {
    let bound = (1.0 / rows as f64).sqrt();
    store.add(name, Matrix::uniform(rows, cols, bound, rng))
}

fn zeros(store: &mut ParamStore, name: &str, cols: usize) -> ParamId {
    store.add(name, Matrix::zeros(1, cols))
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = seed::rng(seed);
        let mut s = ParamStore::new();
        let c = &config;
        let k = c.cells();
        let half = c.width / 2;
        let dh = c.width / c.heads;
        let phi_s = s.add(
            "phi_s",
            Matrix::uniform(NUM_PROPERTIES, c.prop_dim, 0.5, &mut rng),
        );
        let cell_w = init(&mut s, &mut rng, "cell_w", c.prop_dim, c.cell_dim);
        let cell_pos = s.add("cell_pos", Matrix::uniform(k, c.cell_dim, 0.1, &mut rng));
        let cell_b = zeros(&mut s, "cell_b", c.cell_dim);
        let cell_mix = init(&mut s, &mut rng, "cell_mix", k, k);
        let phi_a = s.add("phi_a", Matrix::uniform(6, c.orient_dim, 0.5, &mut rng));
        let step_in = k * c.cell_dim + c.orient_dim;
        let mut rnn = Vec::new();
        for dir in ["fwd", "bwd"] {
            let w = init(&mut s, &mut rng, &format!("rnn_{dir}_in"), step_in, half);
            let u = init(&mut s, &mut rng, &format!("rnn_{dir}_rec"), half, half);
            let b = zeros(&mut s, &format!("rnn_{dir}_b"), half);
            rnn.push((w, u, b));
        }
        let mem_w = init(&mut s, &mut rng, "mem_w", c.set_width(), c.width);
        let mem_b = zeros(&mut s, "mem_b", c.width);
        let tok_emb = s.add(
            "tok_emb",
            Matrix::uniform(c.vocab.len(), c.width, 0.5, &mut rng),
        );
        let pos_emb = s.add(
            "pos_emb",
            Matrix::uniform(c.max_len, c.width, 0.1, &mut rng),
        );
        let mut layers = Vec::new();
        for l in 0..c.layers {
            let heads = |s: &mut ParamStore, rng: &mut ChaCha8Rng, what: &str| -> Vec<ParamId> {
                (0..c.heads)
                    .map(|h| init(s, rng, &format!("l{l}.{what}{h}"), c.width, dh))
                    .collect()
            };
            let self_q = heads(&mut s, &mut rng, "self_q");
            let self_k = heads(&mut s, &mut rng, "self_k");
            let self_v = heads(&mut s, &mut rng, "self_v");
            let cross_q = heads(&mut s, &mut rng, "cross_q");
            let cross_k = heads(&mut s, &mut rng, "cross_k");
            let cross_v = heads(&mut s, &mut rng, "cross_v");
            layers.push(Layer {
                self_q,
                self_k,
                self_v,
                self_o: init(&mut s, &mut rng, &format!("l{l}.self_o"), c.width, c.width),
                cross_q,
                cross_k,
                cross_v,
                cross_o: init(&mut s, &mut rng, &format!("l{l}.cross_o"), c.width, c.width),
                ff1: init(&mut s, &mut rng, &format!("l{l}.ff1"), c.width, c.ffn),
                ff1_b: zeros(&mut s, &format!("l{l}.ff1_b"), c.ffn),
                ff2: init(&mut s, &mut rng, &format!("l{l}.ff2"), c.ffn, c.width),
                ff2_b: zeros(&mut s, &format!("l{l}.ff2_b"), c.width),
            });
        }
        // Small output weights keep an untrained model close to uniform.
        let out_w = s.add(
            "out_w",
            Matrix::uniform(c.width, c.vocab.len(), 0.01, &mut rng),
        );
        let out_b = zeros(&mut s, "out_b", c.vocab.len());
        let ids = Ids {
            phi_s,
            cell_w,
            cell_pos,
            cell_b,
            cell_mix,
            phi_a,
            rnn: [rnn[0], rnn[1]],
            mem_w,
            mem_b,
            tok_emb,
            pos_emb,
            layers,
            out_w,
            out_b,
        };
        let vocab = Vocabulary::from_tokens(config.vocab.clone());
        Ok(Self {
            config,
            vocab,
            params: s,
            ids,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn check_plan(&self, state: &WorldState, plan: &Plan) -> Result<(), ModelError> {
        let mismatch = |m: String| Err(ModelError::PlanMismatch(m));
        let Some(first) = plan.poses.first() else {
            return mismatch("plan has no poses".into());
        };
        if *first != state.follower || plan.start != state.follower {
            return mismatch(format!(
                "plan starts at {first:?}, follower is at {:?}",
                state.follower
            ));
        }
        if let Some(p) = plan
            .poses
            .iter()
            .find(|p| !state.in_bounds(p.cell()) || p.alpha >= 6)
        {
            return mismatch(format!("pose {p:?} is off the board"));
        }
        if actions_along(&plan.poses).is_none() {
            return mismatch("consecutive poses are not one action apart".into());
        }
        Ok(())
    }

    /// Builds the attention set inside `g` so gradients reach the encoder.
    pub fn encode_in(
        &self,
        g: &mut Graph,
        state: &WorldState,
        plan: &Plan,
    ) -> Result<Var, ModelError> {
        self.check_plan(state, plan)?;
        let c = &self.config;
        let ids = &self.ids;
        let k = c.cells();
        let n = plan.poses.len();
        let mut bags = Vec::with_capacity(n * k);
        for pose in &plan.poses {
            let crop = state.rotate_crop(*pose, c.crop);
            for v in &crop.values {
                bags.push(
                    v.iter()
                        .enumerate()
                        .filter(|(_, &b)| b != 0)
                        .map(|(i, _)| i)
                        .collect(),
                );
            }
        }
        let phi_s = g.param(ids.phi_s);
        let e = g.embed_bag(phi_s, bags);
        let w = g.param(ids.cell_w);
        let x = g.matmul(e, w);
        let pos = g.param(ids.cell_pos);
        let pos = g.select_rows(pos, (0..n * k).map(|i| i % k).collect());
        let x = g.add(x, pos);
        let b = g.param(ids.cell_b);
        let x = g.add_row(x, b);
        let cells = g.tanh(x);
        let mix = g.param(ids.cell_mix);
        let mixed = g.block_mix(mix, cells);
        let mixed = g.add(mixed, cells);
        let cells = g.tanh(mixed);

        let flat = g.reshape(cells, n, k * c.cell_dim);
        let phi_a = g.param(ids.phi_a);
        let orient = g.select_rows(phi_a, plan.poses.iter().map(|p| p.alpha as usize).collect());
        let steps = g.concat_cols(&[flat, orient]);
        let mut both = Vec::new();
        for (dir, &(w_in, w_rec, bias)) in ids.rnn.iter().enumerate() {
            let w_in = g.param(w_in);
            let w_rec = g.param(w_rec);
            let bias = g.param(bias);
            let pre = g.matmul(steps, w_in);
            let pre = g.add_row(pre, bias);
            let order: Vec<usize> = if dir == 0 {
                (0..n).collect()
            } else {
                (0..n).rev().collect()
            };
            let mut hs: Vec<Option<Var>> = vec![None; n];
            let mut prev: Option<Var> = None;
            for t in order {
                let mut a = g.select_rows(pre, vec![t]);
                if let Some(h) = prev {
                    let r = g.matmul(h, w_rec);
                    a = g.add(a, r);
                }
                let h = g.tanh(a);
                hs[t] = Some(h);
                prev = Some(h);
            }
            let hs: Vec<Var> = hs
                .into_iter()
                .map(|h| h.expect("every step visited"))
                .collect();
            both.push(g.concat_rows(&hs));
        }
        let h = g.concat_cols(&both);
        let h = g.select_rows(h, (0..n * k).map(|i| i / k).collect());
        Ok(g.concat_cols(&[h, cells]))
    }

    pub fn encode(&self, state: &WorldState, plan: &Plan) -> Result<AttentionSet, ModelError> {
        let mut g = Graph::new(&self.params);
        let set = self.encode_in(&mut g, state, plan)?;
        Ok(AttentionSet {
            steps: plan.poses.len(),
            vectors: g.value(set).clone(),
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn attend(
        &self,
        g: &mut Graph,
        x: Var,
        ctx: Var,
        q: &[ParamId],
        k: &[ParamId],
        v: &[ParamId],
        o: ParamId,
        causal: bool,
    ) -> Var {
        let dh = self.config.width / self.config.heads;
        let mut heads = Vec::new();
        for h in 0..q.len() {
            let (wq, wk, wv) = (g.param(q[h]), g.param(k[h]), g.param(v[h]));
            let qh = g.matmul(x, wq);
            let kh = g.matmul(ctx, wk);
            let vh = g.matmul(ctx, wv);
            let s = g.matmul_nt(qh, kh);
            let s = g.scale(s, 1.0 / (dh as f64).sqrt());
            let a = g.softmax_rows(s, causal);
            heads.push(g.matmul(a, vh));
        }
        let cat = g.concat_cols(&heads);
        let wo = g.param(o);
        g.matmul(cat, wo)
    }

    /// Logits for every position of `prefix` (which starts with BOS).
    pub fn decode_in(&self, g: &mut Graph, set: Var, prefix: &[u32]) -> Var {
        let ids = &self.ids;
        let t = prefix.len();
        assert!(t >= 1 && t <= self.config.max_len, "prefix length {t}");
        let tok = g.param(ids.tok_emb);
        let tok = g.select_rows(tok, prefix.iter().map(|&i| i as usize).collect());
        let pos = g.param(ids.pos_emb);
        let pos = g.select_rows(pos, (0..t).collect());
        let mut x = g.add(tok, pos);
        let mem_w = g.param(ids.mem_w);
        let mem = g.matmul(set, mem_w);
        let mem_b = g.param(ids.mem_b);
        let mem = g.add_row(mem, mem_b);
        for l in &ids.layers {
            let a = g.layer_norm_rows(x);
            let sa = self.attend(g, a, a, &l.self_q, &l.self_k, &l.self_v, l.self_o, true);
            x = g.add(x, sa);
            let b = g.layer_norm_rows(x);
            let ca = self.attend(
                g, b, mem, &l.cross_q, &l.cross_k, &l.cross_v, l.cross_o, false,
            );
            x = g.add(x, ca);
            let c = g.layer_norm_rows(x);
            let w1 = g.param(l.ff1);
            let h = g.matmul(c, w1);
            let b1 = g.param(l.ff1_b);
            let h = g.add_row(h, b1);
            let h = g.relu(h);
            let w2 = g.param(l.ff2);
            let h = g.matmul(h, w2);
            let b2 = g.param(l.ff2_b);
            let h = g.add_row(h, b2);
            x = g.add(x, h);
        }
        let x = g.layer_norm_rows(x);
        let w = g.param(ids.out_w);
        let logits = g.matmul(x, w);
        let b = g.param(ids.out_b);
        g.add_row(logits, b)
    }

    fn last_logits(&self, set: &AttentionSet, prefix: &[u32]) -> Vec<f64> {
        let mut g = Graph::new(&self.params);
        let s = g.input(set.vectors.clone());
        let logits = self.decode_in(&mut g, s, prefix);
        let m = g.value(logits);
        m.row(m.rows - 1).to_vec()
    }

    /// Distribution of the token after `prefix`.
    pub fn next_token_dist(&self, set: &AttentionSet, prefix: &[u32]) -> Vec<f64> {
        assert_eq!(
            prefix.first(),
            Some(&Vocabulary::BOS_ID),
            "prefix must start with BOS"
        );
        log_softmax(&self.last_logits(set, prefix))
            .into_iter()
            .map(f64::exp)
            .collect()
    }

    /// Ids the model scores for `x`: its tokens, then EOS unless `x` fills
    /// the whole decoding budget.
    pub fn target_ids(&self, x: &Instruction) -> Result<Vec<u32>, ModelError> {
        let max = self.config.max_len;
        if x.len() > max {
            return Err(ModelError::TooLong { len: x.len(), max });
        }
        let mut ids = x
            .tokens
            .iter()
            .map(|t| {
                self.vocab
                    .lookup(t)
                    .ok_or_else(|| ModelError::OutOfVocabulary(t.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if ids.len() < max {
            ids.push(Vocabulary::EOS_ID);
        }
        Ok(ids)
    }

    /// Weighted negative log-likelihood of `targets` as a graph node.
    pub fn nll_in(&self, g: &mut Graph, set: Var, targets: &[u32], weight: f64) -> Var {
        let mut prefix = vec![Vocabulary::BOS_ID];
        prefix.extend_from_slice(&targets[..targets.len() - 1]);
        let logits = self.decode_in(g, set, &prefix);
        g.nll_rows(
            logits,
            targets.iter().map(|&i| i as usize).collect(),
            vec![weight; targets.len()],
        )
    }

    pub fn ids_logprob(&self, set: &AttentionSet, targets: &[u32]) -> f64 {
        let mut g = Graph::new(&self.params);
        let s = g.input(set.vectors.clone());
        let nll = self.nll_in(&mut g, s, targets, 1.0);
        -g.value(nll).data[0]
    }

    pub fn sequence_logprob(
        &self,
        state: &WorldState,
        plan: &Plan,
        x: &Instruction,
    ) -> Result<f64, ModelError> {
        let targets = self.target_ids(x)?;
        let set = self.encode(state, plan)?;
        Ok(self.ids_logprob(&set, &targets))
    }

    /// Ancestral sampling with logits divided by `tau`.
    pub fn sample(
        &self,
        set: &AttentionSet,
        tau: f64,
        seed: u64,
        behavior: BehaviorProb,
    ) -> SampledInstruction {
        assert!(tau > 0.0 && tau <= 1.0, "temperature {tau} outside (0, 1]");
        let mut rng = seed::rng(seed);
        let mut prefix = vec![Vocabulary::BOS_ID];
        let (mut lp_model, mut lp_tempered) = (0.0, 0.0);
        let mut truncated = true;
        for _ in 0..self.config.max_len {
            let logits = self.last_logits(set, &prefix);
            let lp = log_softmax(&logits);
            let scaled: Vec<f64> = logits.iter().map(|l| l / tau).collect();
            let lq = log_softmax(&scaled);
            let tok = draw(&lq, &mut rng);
            lp_model += lp[tok];
            lp_tempered += lq[tok];
            prefix.push(tok as u32);
            if tok as u32 == Vocabulary::EOS_ID {
                truncated = false;
                break;
            }
        }
        let ids = prefix[1..].to_vec();
        let tokens = Instruction::new(
            ids.iter()
                .filter(|&&i| i != Vocabulary::EOS_ID)
                .map(|&i| self.vocab.token(i).to_string()),
        );
        let logprob_behavior = match behavior {
            BehaviorProb::Untempered => lp_model,
            BehaviorProb::Tempered => lp_tempered,
        };
        SampledInstruction {
            tokens,
            ids,
            logprob_model: lp_model,
            logprob_tempered: lp_tempered,
            logprob_behavior,
            model_index: 0,
            truncated,
        }
    }

    pub fn checkpoint(&self, optimizer: Option<&AdamW>) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            params: self.params.to_named(),
            optimizer: optimizer.cloned(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<(Self, Option<AdamW>), ModelError> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported version {}",
                ckpt.version
            )));
        }
        let mut model = Model::new(ckpt.config, 0)?;
        model.params.load_named(&ckpt.params)?;
        if let Some(opt) = &ckpt.optimizer {
            let n = model.params.len();
            if opt.m.len() != n || opt.v.len() != n {
                return Err(ModelError::Checkpoint(
                    "optimizer state does not match parameters".into(),
                ));
            }
            for id in model.params.ids() {
                let shape = model.params.get(id).shape();
                if opt.m[id.0].shape() != shape || opt.v[id.0].shape() != shape {
                    return Err(ModelError::Checkpoint(format!(
                        "optimizer moments for `{}` have the wrong shape",
                        model.params.name(id)
                    )));
                }
            }
        }
        Ok((model, ckpt.optimizer))
    }

    pub fn save(&self, path: &Path, optimizer: Option<&AdamW>) -> Result<(), ModelError> {
        std::fs::write(path, serde_json::to_vec(&self.checkpoint(optimizer))?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, Option<AdamW>), ModelError> {
        let ckpt: Checkpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        Self::from_checkpoint(ckpt)
    }
}

fn draw(logp: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, l) in logp.iter().enumerate() {
        acc += l.exp();
        if u < acc {
            return i;
        }
    }
    // Rounding left a sliver above the cumulative sum.
    logp.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub params: Vec<NamedArray>,
    pub optimizer: Option<AdamW>,
}

/// Picks a member uniformly and samples from it.
pub fn ensemble_sample(
    members: &[Model],
    state: &WorldState,
    plan: &Plan,
    tau: f64,
    seed: u64,
    behavior: BehaviorProb,
) -> Result<SampledInstruction, ModelError> {
    let mut rng = seed::rng(seed::derive(seed, &[seed::tag("member")]));
    let indices: Vec<usize> = (0..members.len()).collect();
    let &index = indices.choose(&mut rng).ok_or(ModelError::EmptyEnsemble)?;
    let model = &members[index];
    let set = model.encode(state, plan)?;
    let mut out = model.sample(
        &set,
        tau,
        seed::derive(seed, &[seed::tag("tokens")]),
        behavior,
    );
    out.model_index = index;
    Ok(out)
}
