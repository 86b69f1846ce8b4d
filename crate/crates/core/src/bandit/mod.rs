//! Learning signals from follower feedback, the supervised and
//! importance-weighted policy-gradient objectives, and the per-round
//! training schedules.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffkit::{clip_global_norm, AdamW, AdamWConfig, DiffError, Grads, Graph};
use crate::follower::Execution;
use crate::genmodel::{Model, ModelConfig, ModelError};
use crate::hexworld::{Cell, WorldState};
use crate::orchestrator::InteractionRecord;
use crate::planner::Plan;
use crate::seed;
use crate::synthlang::Instruction;

#[derive(Debug, Error)]
pub enum BanditError {
    #[error("supervised loss got a negative example ({0})")]
    NegativeLabel(RecordId),
    #[error("no examples to train on")]
    Empty,
    #[error("non-finite objective on example {0}")]
    NonFinite(RecordId),
    #[error("{0} members but {1} seeds")]
    SeedCount(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("dataset line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
}

/// Which interaction an example came from. Bootstrap examples use round 0.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
pub struct RecordId {
    pub round: u32,
    pub interaction: u32,
    pub index: u32,
}

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}-i{}-x{}", self.round, self.interaction, self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }
}

impl From<Label> for i8 {
    fn from(l: Label) -> i8 {
        l.sign() as i8
    }
}

impl TryFrom<i8> for Label {
    type Error = String;

    fn try_from(v: i8) -> Result<Self, String> {
        match v {
            1 => Ok(Label::Positive),
            -1 => Ok(Label::Negative),
            _ => Err(format!("label must be 1 or -1, got {v}")),
        }
    }
}

/// One `(s₁, ρ̄, x̄, y)` tuple with the probability the instruction was
/// sampled with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub provenance: RecordId,
    pub state: WorldState,
    pub rho: Plan,
    pub instruction: Instruction,
    pub label: Label,
    pub behavior_logprob: f64,
    /// `rho` is the follower's execution rather than the system plan.
    pub from_execution: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoundDataset {
    pub round: u32,
    pub examples: Vec<Example>,
}

impl RoundDataset {
    pub fn count(&self, label: Label) -> usize {
        self.examples.iter().filter(|e| e.label == label).count()
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<(), BanditError> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for e in &self.examples {
            serde_json::to_writer(&mut out, e)
                .map_err(|source| BanditError::Json { line: 0, source })?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load_jsonl(round: u32, path: &Path) -> Result<Self, BanditError> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut examples = Vec::new();
        for (i, line) in file.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            examples.push(
                serde_json::from_str(&line).map_err(|source| BanditError::Json {
                    line: i + 1,
                    source,
                })?,
            );
        }
        Ok(Self { round, examples })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Full,
    PosOnly,
    TcOnly,
    NoEnsemble,
    FineTune,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Self::Full,
        Self::PosOnly,
        Self::TcOnly,
        Self::NoEnsemble,
        Self::FineTune,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::PosOnly => "pos-only",
            Variant::TcOnly => "tc-only",
            Variant::NoEnsemble => "no-ensemble",
            Variant::FineTune => "fine-tune",
        }
    }

    pub fn mode(self) -> TrainMode {
        match self {
            Variant::FineTune => TrainMode::FinetuneRehearsal,
            _ => TrainMode::Retrain,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant `{s}` (expected full, pos-only, tc-only, no-ensemble or fine-tune)"))
    }
}

/// Start-state card cells that `exec` entered an odd number of times.
pub fn toggled_cards(state: &WorldState, exec: &Execution) -> BTreeSet<Cell> {
    let mut out = BTreeSet::new();
    for pair in exec.poses.windows(2) {
        let c = pair[1].cell();
        if c != pair[0].cell() && state.card_at(c).is_some() && !out.remove(&c) {
            out.insert(c);
        }
    }
    out
}

/// Card plans match when the execution toggles exactly the target cards;
/// a plan with no cards matches when the follower ends where it started.
pub fn plan_match(plan: &Plan, exec: &Execution, state: &WorldState) -> bool {
    if plan.target_cards.is_empty() {
        return exec.end().map(|p| p.cell()) == Some(plan.start.cell());
    }
    toggled_cards(state, exec) == plan.target_set()
}

fn example(
    rec: &InteractionRecord,
    rho: Plan,
    label: Label,
    from_execution: bool,
    index: u32,
) -> Example {
    Example {
        provenance: RecordId { index, ..rec.id },
        state: rec.start_state.clone(),
        rho,
        instruction: rec.sample.tokens.clone(),
        label,
        behavior_logprob: rec.sample.logprob_behavior,
        from_execution,
    }
}

fn execution_plan(rec: &InteractionRecord) -> Plan {
    Plan {
        start: rec.plan.start,
        poses: rec.execution.poses.clone(),
        target_cards: toggled_cards(&rec.start_state, &rec.execution)
            .into_iter()
            .collect(),
    }
}

/// Positive examples for an execution judged correct: the execution as a
/// plan, plus the system plan when the two agree on the cards.
fn positives(rec: &InteractionRecord, matched: bool) -> Vec<Example> {
    let mut out = vec![example(rec, execution_plan(rec), Label::Positive, true, 0)];
    if matched && rec.execution.poses != rec.plan.poses {
        out.push(example(rec, rec.plan.clone(), Label::Positive, false, 1));
    }
    out
}

/// Examples from one interaction under the feedback heuristics.
pub fn construct_examples(rec: &InteractionRecord) -> Vec<Example> {
    let f = rec.feedback;
    if !(f.perceived_correct && f.grammatical) {
        return vec![example(rec, rec.plan.clone(), Label::Negative, false, 0)];
    }
    positives(rec, plan_match(&rec.plan, &rec.execution, &rec.start_state))
}

pub fn variant_examples(rec: &InteractionRecord, variant: Variant) -> Vec<Example> {
    match variant {
        Variant::PosOnly => construct_examples(rec)
            .into_iter()
            .filter(|e| e.label == Label::Positive)
            .collect(),
        Variant::TcOnly => {
            if plan_match(&rec.plan, &rec.execution, &rec.start_state) {
                positives(rec, true)
            } else {
                vec![example(rec, rec.plan.clone(), Label::Negative, false, 0)]
            }
        }
        Variant::Full | Variant::NoEnsemble | Variant::FineTune => construct_examples(rec),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Objective {
    /// Weight negatives by the probability ratio; off gives the unweighted
    /// ablation.
    pub ips: bool,
    pub ips_clip: Option<f64>,
}

impl Default for Objective {
    fn default() -> Self {
        Self {
            ips: true,
            ips_clip: None,
        }
    }
}

/// Coefficient of an example in the policy-gradient objective.
pub fn ips_weight(model: &Model, ex: &Example, clip: Option<f64>) -> Result<f64, BanditError> {
    if ex.label == Label::Positive {
        return Ok(1.0);
    }
    let lp = model.sequence_logprob(&ex.state, &ex.rho, &ex.instruction)?;
    Ok(ratio(lp, ex.behavior_logprob, clip))
}

fn ratio(logprob: f64, behavior: f64, clip: Option<f64>) -> f64 {
    let w = (logprob - behavior).exp();
    clip.map_or(w, |c| w.min(c))
}

/// Mean negative log-likelihood over an all-positive dataset.
pub fn supervised_loss(model: &Model, examples: &[Example]) -> Result<f64, BanditError> {
    if examples.is_empty() {
        return Err(BanditError::Empty);
    }
    let mut total = 0.0;
    for ex in examples {
        if ex.label == Label::Negative {
            return Err(BanditError::NegativeLabel(ex.provenance));
        }
        total -= model.sequence_logprob(&ex.state, &ex.rho, &ex.instruction)?;
    }
    Ok(total / examples.len() as f64)
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    /// `−(1/B) Σ ℓ·y·log P`, the quantity gradient descent minimizes.
    pub loss: f64,
    pub grads: Grads,
    /// `Σ_{y=−1} ℓ·|log P|` over the batch.
    pub negative_term: f64,
}

/// Loss and its gradient for one batch; `ℓ` is evaluated at the current
/// parameters and then held fixed.
pub fn batch_gradient(
    model: &Model,
    batch: &[&Example],
    obj: &Objective,
) -> Result<BatchOutcome, BanditError> {
    if batch.is_empty() {
        return Err(BanditError::Empty);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut g = Graph::new(&model.params);
    let mut terms = Vec::with_capacity(batch.len());
    let mut negative_term = 0.0;
    for ex in batch {
        let targets = model.target_ids(&ex.instruction)?;
        let set = model.encode_in(&mut g, &ex.state, &ex.rho)?;
        let nll = model.nll_in(&mut g, set, &targets, 1.0);
        let logprob = -g.value(nll).data[0];
        let weight = match ex.label {
            Label::Positive => 1.0,
            Label::Negative if obj.ips => ratio(logprob, ex.behavior_logprob, obj.ips_clip),
            Label::Negative => 1.0,
        };
        if !weight.is_finite() || !logprob.is_finite() {
            return Err(BanditError::NonFinite(ex.provenance));
        }
        if ex.label == Label::Negative {
            negative_term += weight * logprob.abs();
        }
        terms.push(g.scale(nll, weight * ex.label.sign() * scale));
    }
    let mut loss = terms[0];
    for &t in &terms[1..] {
        loss = g.add(loss, t);
    }
    let value = g.value(loss).data[0];
    let grads = g.backward(loss)?;
    Ok(BatchOutcome {
        loss: value,
        grads,
        negative_term,
    })
}

/// `(1/|D|) Σ ℓ·y·∇log P`, the ascent direction of the objective.
pub fn bandit_grad(
    model: &Model,
    dataset: &[Example],
    obj: &Objective,
) -> Result<Grads, BanditError> {
    let batch: Vec<&Example> = dataset.iter().collect();
    let mut out = batch_gradient(model, &batch, obj)?;
    out.grads.scale(-1.0);
    Ok(out.grads)
}

/// Sum of `ℓ·|log P|` over the negative examples.
pub fn negative_term(
    model: &Model,
    examples: &[Example],
    obj: &Objective,
) -> Result<f64, BanditError> {
    let mut total = 0.0;
    for ex in examples.iter().filter(|e| e.label == Label::Negative) {
        let lp = model.sequence_logprob(&ex.state, &ex.rho, &ex.instruction)?;
        let w = if obj.ips {
            ratio(lp, ex.behavior_logprob, obj.ips_clip)
        } else {
            1.0
        };
        total += w * lp.abs();
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    Retrain,
    FinetuneRehearsal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub grad_clip: Option<f64>,
    pub schedule: LrSchedule,
    pub objective: Objective,
}

/// Learning rate over the course of one training call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from `lr` down to zero.
    Cosine,
}

impl LrSchedule {
    /// Multiplier at `progress` in `[0, 1]`.
    pub fn factor(self, progress: f64) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => {
                0.5 * (1.0 + (std::f64::consts::PI * progress.clamp(0.0, 1.0)).cos())
            }
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            lr: 3e-3,
            weight_decay: 0.01,
            grad_clip: Some(5.0),
            schedule: LrSchedule::default(),
            objective: Objective::default(),
        }
    }
}

impl TrainConfig {
    fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

/// Where a batch slot was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pick {
    New(usize),
    Old(usize),
}

/// One epoch of shuffled batches over `n` examples.
pub fn epoch_batches(n: usize, batch: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed));
    idx.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

/// One epoch over the new examples, each batch topped up with as many
/// examples drawn uniformly from the old ones.
pub fn rehearsal_batches(n_new: usize, n_old: usize, batch: usize, seed: u64) -> Vec<Vec<Pick>> {
    let half = (batch / 2).max(1);
    let mut rng = seed::rng(seed::derive(seed, &[seed::tag("rehearsal")]));
    let old: Vec<usize> = (0..n_old).collect();
    epoch_batches(n_new, half, seed)
        .into_iter()
        .map(|b| {
            let k = b.len();
            let mut out: Vec<Pick> = b.into_iter().map(Pick::New).collect();
            for _ in 0..k {
                if let Some(&i) = old.choose(&mut rng) {
                    out.push(Pick::Old(i));
                }
            }
            out
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub steps: usize,
    pub final_loss: f64,
    pub mean_loss_last_epoch: f64,
}

/// Runs `cfg.epochs` epochs of `batches(epoch)` on one member.
fn train_loop<'e>(
    model: &mut Model,
    opt: &mut AdamW,
    cfg: &TrainConfig,
    mut batches: impl FnMut(usize) -> Vec<Vec<&'e Example>>,
) -> Result<TrainStats, BanditError> {
    let mut stats = TrainStats::default();
    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        let mut n = 0;
        let epoch_batches = batches(epoch);
        let nb = epoch_batches.len().max(1) as f64;
        for (b, batch) in epoch_batches.into_iter().enumerate() {
            let mut out = batch_gradient(model, &batch, &cfg.objective)?;
            if let Some(c) = cfg.grad_clip {
                clip_global_norm(&mut out.grads, c);
            }
            let progress = (epoch as f64 + b as f64 / nb) / cfg.epochs as f64;
            opt.config.lr = cfg.lr * cfg.schedule.factor(progress);
            opt.step(&mut model.params, &out.grads)?;
            stats.steps += 1;
            stats.final_loss = out.loss;
            sum += out.loss;
            n += 1;
        }
        stats.mean_loss_last_epoch = if n > 0 { sum / n as f64 } else { 0.0 };
    }
    Ok(stats)
}

/// Trains a freshly initialized model on `examples`.
pub fn train_fresh(
    config: &ModelConfig,
    examples: &[&Example],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Model, TrainStats), BanditError> {
    if examples.is_empty() {
        return Err(BanditError::Empty);
    }
    let mut model = Model::new(config.clone(), seed::derive(seed, &[seed::tag("init")]))?;
    let mut opt = AdamW::new(cfg.adamw(), &model.params);
    let stats = train_loop(&mut model, &mut opt, cfg, |epoch| {
        epoch_batches(
            examples.len(),
            cfg.batch_size,
            seed::derive(seed, &[seed::tag("epoch"), epoch as u64]),
        )
        .into_iter()
        .map(|b| b.into_iter().map(|i| examples[i]).collect())
        .collect()
    })?;
    Ok((model, stats))
}

/// Continues training `model` on `new` with rehearsal from `old`.
pub fn finetune(
    model: &mut Model,
    new: &[&Example],
    old: &[&Example],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainStats, BanditError> {
    if new.is_empty() {
        return Err(BanditError::Empty);
    }
    let mut opt = AdamW::new(cfg.adamw(), &model.params);
    train_loop(model, &mut opt, cfg, |epoch| {
        rehearsal_batches(
            new.len(),
            old.len(),
            cfg.batch_size,
            seed::derive(seed, &[seed::tag("epoch"), epoch as u64]),
        )
        .into_iter()
        .map(|b| {
            b.into_iter()
                .map(|p| match p {
                    Pick::New(i) => new[i],
                    Pick::Old(i) => old[i],
                })
                .collect()
        })
        .collect()
    })
}

/// Produces the next ensemble from datasets `D₀..D_r` (the last one is the
/// newest). Each member trains with its own seed.
pub fn train_round(
    mode: TrainMode,
    datasets: &[RoundDataset],
    members: &[Model],
    config: &ModelConfig,
    cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<(Vec<Model>, Vec<TrainStats>), BanditError> {
    if mode == TrainMode::FinetuneRehearsal && seeds.len() != members.len() {
        return Err(BanditError::SeedCount(members.len(), seeds.len()));
    }
    let mut out = Vec::new();
    let mut stats = Vec::new();
    match mode {
        TrainMode::Retrain => {
            let all: Vec<&Example> = datasets.iter().flat_map(|d| &d.examples).collect();
            for &s in seeds {
                let (m, st) = train_fresh(config, &all, cfg, s)?;
                out.push(m);
                stats.push(st);
            }
        }
        TrainMode::FinetuneRehearsal => {
            let (last, earlier) = datasets.split_last().ok_or(BanditError::Empty)?;
            let new: Vec<&Example> = last.examples.iter().collect();
            let old: Vec<&Example> = earlier.iter().flat_map(|d| &d.examples).collect();
            for (m, &s) in members.iter().zip(seeds) {
                let mut m = m.clone();
                let st = if new.is_empty() {
                    TrainStats::default()
                } else {
                    finetune(&mut m, &new, &old, cfg, s)?
                };
                out.push(m);
                stats.push(st);
            }
        }
    }
    Ok((out, stats))
}

#[cfg(test)]
mod tests;
