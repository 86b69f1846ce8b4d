use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;

use super::game::{play_simulated, Game, Speaker};
use super::{ExperimentConfig, FollowerSource, InteractionRecord, OrchestratorError};
use crate::bandit::{
    self, BanditError, Example, Label, RecordId, RoundDataset, TrainStats, Variant,
};
use crate::diffkit::DiffError;
use crate::follower::CompetenceProfile;
use crate::genmodel::Model;
use crate::metrics::{self, RoundReport};
use crate::seed;

/// Paths inside a run directory, `runs/<name>/<variant>/` by default.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn round_dir(&self, r: u32) -> PathBuf {
        self.root.join(format!("round-{r}"))
    }

    pub fn records(&self, r: u32) -> PathBuf {
        self.round_dir(r).join("records.jsonl")
    }

    pub fn dataset(&self, r: u32) -> PathBuf {
        self.round_dir(r).join("dataset.jsonl")
    }

    pub fn checkpoints(&self, r: u32) -> PathBuf {
        self.round_dir(r).join("checkpoints")
    }

    pub fn report(&self, r: u32) -> PathBuf {
        self.round_dir(r).join("report.csv")
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("report.csv")
    }

    /// Rounds with a directory on disk, in order.
    pub fn rounds(&self) -> Result<Vec<u32>, OrchestratorError> {
        let mut out = Vec::new();
        if !self.root.is_dir() {
            return Ok(out);
        }
        for entry in std::fs::read_dir(&self.root)? {
            let name = entry?.file_name();
            if let Some(r) = name
                .to_str()
                .and_then(|n| n.strip_prefix("round-"))
                .and_then(|n| n.parse().ok())
            {
                out.push(r);
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    pub fn save_members(&self, r: u32, members: &[Model]) -> Result<(), OrchestratorError> {
        let dir = self.checkpoints(r);
        std::fs::create_dir_all(&dir)?;
        for (k, m) in members.iter().enumerate() {
            m.save(&dir.join(format!("member-{k}.json")), None)?;
        }
        Ok(())
    }

    pub fn load_members(&self, r: u32) -> Result<Vec<Model>, OrchestratorError> {
        load_members(&self.checkpoints(r))
    }
}

/// Loads every `member-<k>.json` in a checkpoint directory.
pub fn load_members(dir: &Path) -> Result<Vec<Model>, OrchestratorError> {
    let mut members = Vec::new();
    for k in 0.. {
        let path = dir.join(format!("member-{k}.json"));
        if !path.exists() {
            break;
        }
        members.push(Model::load(&path)?.0);
    }
    if members.is_empty() {
        return Err(OrchestratorError::Missing(dir.to_path_buf()));
    }
    Ok(members)
}

pub fn save_records(path: &Path, records: &[InteractionRecord]) -> Result<(), OrchestratorError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_records(path: &Path) -> Result<Vec<InteractionRecord>, OrchestratorError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in file.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

fn write_report(path: &Path, reports: &[RoundReport]) -> Result<(), OrchestratorError> {
    metrics::write_csv(std::fs::File::create(path)?, reports)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<Vec<RoundReport>, OrchestratorError> {
    Ok(metrics::read_csv(std::fs::File::open(path)?)?)
}

/// Bootstrap data: planner plans described by the verbalizer, taken from
/// games played by a noiseless follower in fresh worlds.
pub fn bootstrap_d0(
    count: usize,
    base_seed: u64,
    world: &crate::hexworld::WorldConfig,
) -> Result<RoundDataset, OrchestratorError> {
    let d0_seed = seed::derive(base_seed, &[seed::tag("d0")]);
    let mut examples = Vec::with_capacity(count);
    let mut game_index = 0u32;
    while examples.len() < count {
        let mut game = Game::new(d0_seed, 0, game_index, world)?;
        for rec in play_simulated(
            &mut game,
            &Speaker::Verbalizer,
            &CompetenceProfile::NOISELESS,
        )? {
            if examples.len() == count {
                break;
            }
            examples.push(Example {
                provenance: rec.id,
                state: rec.start_state,
                rho: rec.plan,
                instruction: rec.sample.tokens,
                label: Label::Positive,
                behavior_logprob: 0.0,
                from_execution: false,
            });
        }
        game_index += 1;
    }
    Ok(RoundDataset { round: 0, examples })
}

/// Plays `games` simulated games of `round` with a frozen ensemble.
pub fn collect_simulated(
    config: &ExperimentConfig,
    members: &[Model],
    round: u32,
    games: u32,
) -> Result<Vec<InteractionRecord>, OrchestratorError> {
    let profile = config.profile()?;
    let speaker = Speaker::Ensemble {
        members,
        tau: config.tau,
        behavior: config.behavior,
    };
    let mut records = Vec::new();
    for i in 0..games {
        let mut game = Game::new(config.seed, round, i, &config.world)?;
        records.extend(play_simulated(&mut game, &speaker, &profile)?);
    }
    Ok(records)
}

/// Frozen-checkpoint evaluation on the worlds of `round`.
pub fn evaluate(
    config: &ExperimentConfig,
    members: &[Model],
    round: u32,
    games: u32,
) -> Result<(Vec<InteractionRecord>, RoundReport), OrchestratorError> {
    let records = collect_simulated(config, members, round, games)?;
    let report = metrics::round_report(round, config.variant.name(), &records, 0, 0);
    Ok((records, report))
}

/// Seed of member `k` when training after `round`.
pub fn member_seed(base: u64, k: usize, round: u32) -> u64 {
    seed::derive(base, &[seed::tag("member"), k as u64, round as u64])
}

/// Trains the initial ensemble on `D₀` with the supervised objective.
pub fn train_initial(
    config: &ExperimentConfig,
    d0: &RoundDataset,
) -> Result<Vec<Model>, OrchestratorError> {
    let seeds: Vec<u64> = (0..config.ensemble)
        .map(|k| member_seed(config.seed, k, 0))
        .collect();
    let (members, stats) = bandit::train_round(
        bandit::TrainMode::Retrain,
        std::slice::from_ref(d0),
        &[],
        &config.model,
        &config.train,
        &seeds,
    )?;
    check_finite(&stats, 0)?;
    Ok(members)
}

fn check_finite(stats: &[TrainStats], round: u32) -> Result<(), OrchestratorError> {
    for (k, s) in stats.iter().enumerate() {
        if !s.final_loss.is_finite() {
            return Err(OrchestratorError::Diverged {
                round,
                detail: format!("member {k} final loss {}", s.final_loss),
            });
        }
    }
    Ok(())
}

/// Outcome of one deploy, collect and train cycle.
#[derive(Debug)]
pub struct RoundOutcome {
    pub records: Vec<InteractionRecord>,
    pub dataset: RoundDataset,
    pub report: RoundReport,
    /// Ensemble to deploy next; the deployed one if training diverged.
    pub members: Vec<Model>,
    pub stats: Vec<TrainStats>,
    pub diverged: Option<String>,
    /// Whether `members` came out of training this round.
    pub trained: bool,
}

/// Builds `D_r` from collected records and, if `train`, trains the next
/// ensemble.
pub fn learn_from(
    config: &ExperimentConfig,
    round: u32,
    records: Vec<InteractionRecord>,
    prior: &[RoundDataset],
    members: &[Model],
    train: bool,
) -> Result<RoundOutcome, OrchestratorError> {
    let examples: Vec<Example> = records
        .iter()
        .flat_map(|r| bandit::variant_examples(r, config.variant))
        .collect();
    let dataset = RoundDataset { round, examples };
    let report = metrics::round_report(
        round,
        config.variant.name(),
        &records,
        dataset.count(Label::Positive),
        dataset.count(Label::Negative),
    );
    if !train {
        return Ok(RoundOutcome {
            records,
            dataset,
            report,
            members: members.to_vec(),
            stats: Vec::new(),
            diverged: None,
            trained: false,
        });
    }
    let seeds: Vec<u64> = (0..config.ensemble)
        .map(|k| member_seed(config.seed, k, round))
        .collect();
    let mut all = prior.to_vec();
    all.push(dataset.clone());
    let trained = bandit::train_round(
        config.variant.mode(),
        &all,
        members,
        &config.model,
        &config.train,
        &seeds,
    )
    .map_err(OrchestratorError::from)
    .and_then(|(m, stats)| check_finite(&stats, round).map(|_| (m, stats)));
    let (next, stats, diverged) = match trained {
        Ok((m, stats)) => (m, stats, None),
        Err(
            e @ (OrchestratorError::Diverged { .. }
            | OrchestratorError::Bandit(
                BanditError::NonFinite(_) | BanditError::Diff(DiffError::NonFinite { .. }),
            )),
        ) => {
            warn!("round {round}: training diverged ({e}); keeping the deployed ensemble");
            (members.to_vec(), Vec::new(), Some(e.to_string()))
        }
        Err(e) => return Err(e),
    };
    Ok(RoundOutcome {
        records,
        dataset,
        report,
        members: next,
        stats,
        diverged,
        trained: true,
    })
}

#[derive(Serialize)]
struct Diagnostics<'a> {
    round: u32,
    diverged: &'a Option<String>,
    stats: &'a [TrainStats],
}

/// Writes a finished round to `round-<r>/`.
pub fn persist_round(layout: &RunLayout, outcome: &RoundOutcome) -> Result<(), OrchestratorError> {
    let r = outcome.report.round;
    std::fs::create_dir_all(layout.round_dir(r))?;
    save_records(&layout.records(r), &outcome.records)?;
    outcome.dataset.save_jsonl(&layout.dataset(r))?;
    write_report(&layout.report(r), std::slice::from_ref(&outcome.report))?;
    let diag = Diagnostics {
        round: r,
        diverged: &outcome.diverged,
        stats: &outcome.stats,
    };
    std::fs::write(
        layout.round_dir(r).join("training.json"),
        serde_json::to_vec_pretty(&diag)?,
    )?;
    if outcome.trained && outcome.diverged.is_none() {
        layout.save_members(r, &outcome.members)?;
    }
    Ok(())
}

/// A run directory plus the configuration that produced it.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub layout: RunLayout,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self, OrchestratorError> {
        config.validate()?;
        let layout = RunLayout::new(config.run_dir());
        Ok(Self { config, layout })
    }

    fn write_config(&self) -> Result<(), OrchestratorError> {
        let path = self.layout.config();
        if path.exists() && ExperimentConfig::load(&path)? != self.config {
            return Err(OrchestratorError::Config(format!(
                "{} belongs to a different configuration; pick another name or output directory",
                self.layout.root.display()
            )));
        }
        std::fs::create_dir_all(&self.layout.root)?;
        std::fs::write(self.layout.config(), self.config.to_toml())?;
        Ok(())
    }

    /// Builds and persists `D₀`.
    pub fn init_data(&self) -> Result<RoundDataset, OrchestratorError> {
        self.write_config()?;
        let d0 = bootstrap_d0(self.config.d0_size, self.config.seed, &self.config.world)?;
        std::fs::create_dir_all(self.layout.round_dir(0))?;
        d0.save_jsonl(&self.layout.dataset(0))?;
        info!("wrote {} bootstrap examples", d0.examples.len());
        Ok(d0)
    }

    /// Trains and persists the initial ensemble from the stored `D₀`.
    pub fn train_init(&self) -> Result<Vec<Model>, OrchestratorError> {
        let d0 = RoundDataset::load_jsonl(0, &self.layout.dataset(0))?;
        let members = train_initial(&self.config, &d0)?;
        self.layout.save_members(0, &members)?;
        Ok(members)
    }

    /// Loads `D₀` and the initial ensemble, creating whichever is missing.
    fn initial_state(&self) -> Result<(RoundDataset, Vec<Model>), OrchestratorError> {
        let d0 = if self.layout.dataset(0).exists() {
            RoundDataset::load_jsonl(0, &self.layout.dataset(0))?
        } else {
            self.init_data()?
        };
        let members = match self.layout.load_members(0) {
            Ok(m) if m.len() == self.config.ensemble => m,
            _ => {
                let m = train_initial(&self.config, &d0)?;
                self.layout.save_members(0, &m)?;
                m
            }
        };
        Ok((d0, members))
    }

    /// Runs every round and returns their reports.
    pub fn run(&self) -> Result<Vec<RoundReport>, OrchestratorError> {
        self.write_config()?;
        let (d0, mut members) = self.initial_state()?;
        let mut datasets = vec![d0];
        let mut reports = Vec::new();
        for r in 1..=self.config.rounds {
            let records = match self.config.follower {
                FollowerSource::Sim => {
                    collect_simulated(&self.config, &members, r, self.config.interactions)?
                }
                FollowerSource::Human => super::service::collect_human(&self.config, &members, r)?,
            };
            let train = r < self.config.rounds || self.config.final_training;
            let outcome = learn_from(&self.config, r, records, &datasets, &members, train)?;
            persist_round(&self.layout, &outcome)?;
            let rep = &outcome.report;
            info!(
                "round {r}: {} instructions, completion {:.3}, emd {:.3}, positives {}, negatives {}",
                rep.instructions, rep.completion, rep.mean_emd, rep.positives, rep.negatives
            );
            reports.push(outcome.report);
            datasets.push(outcome.dataset);
            members = outcome.members;
        }
        write_report(&self.layout.summary(), &reports)?;
        Ok(reports)
    }
}

/// Recomputes each persisted round's report from its records and dataset.
/// Returns `(stored, recomputed)` pairs.
pub fn replay(layout: &RunLayout) -> Result<Vec<(RoundReport, RoundReport)>, OrchestratorError> {
    let mut out = Vec::new();
    for r in layout.rounds()?.into_iter().filter(|&r| r > 0) {
        if !layout.report(r).exists() {
            continue;
        }
        let stored = read_report(&layout.report(r))?
            .pop()
            .ok_or_else(|| OrchestratorError::Missing(layout.report(r)))?;
        let records = load_records(&layout.records(r))?;
        let dataset = RoundDataset::load_jsonl(r, &layout.dataset(r))?;
        let variant: Variant = stored.variant.parse().map_err(OrchestratorError::Config)?;
        check_provenance(&records, &dataset)?;
        let rebuilt: Vec<Example> = records
            .iter()
            .flat_map(|rec| bandit::variant_examples(rec, variant))
            .collect();
        if rebuilt != dataset.examples {
            return Err(OrchestratorError::Inconsistent(format!(
                "round {r}: dataset does not follow from its records"
            )));
        }
        let recomputed = metrics::round_report(
            r,
            variant.name(),
            &records,
            dataset.count(Label::Positive),
            dataset.count(Label::Negative),
        );
        out.push((stored, recomputed));
    }
    Ok(out)
}

fn check_provenance(
    records: &[InteractionRecord],
    dataset: &RoundDataset,
) -> Result<(), OrchestratorError> {
    let ids: std::collections::BTreeSet<RecordId> = records.iter().map(|r| r.id).collect();
    if ids.len() != records.len() {
        return Err(OrchestratorError::Inconsistent(
            "duplicate record ids".into(),
        ));
    }
    match dataset
        .examples
        .iter()
        .find(|e| !ids.contains(&e.provenance))
    {
        Some(e) => Err(OrchestratorError::Inconsistent(format!(
            "example from unknown record {}",
            e.provenance
        ))),
        None => Ok(()),
    }
}

/// Concatenates the per-run summaries of several run directories.
pub fn aggregate(runs: &[PathBuf]) -> Result<Vec<RoundReport>, OrchestratorError> {
    let mut out = Vec::new();
    for dir in runs {
        let layout = RunLayout::new(dir);
        for r in layout.rounds()? {
            if layout.report(r).exists() {
                out.extend(read_report(&layout.report(r))?);
            }
        }
    }
    Ok(out)
}

/// Per-variant curves keyed by metric name, ready for plotting.
pub fn series(reports: &[RoundReport]) -> serde_json::Value {
    let mut by: std::collections::BTreeMap<&str, Vec<&RoundReport>> = Default::default();
    for r in reports {
        by.entry(r.variant.as_str()).or_default().push(r);
    }
    let curves = by
        .into_iter()
        .map(|(variant, rows)| {
            let col = |f: fn(&RoundReport) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let v = serde_json::json!({
                "round": rows.iter().map(|r| r.round).collect::<Vec<_>>(),
                "completion": col(|r| r.completion),
                "mean_emd": col(|r| r.mean_emd),
                "perceived_correct_rate": col(|r| r.perceived_correct_rate),
                "grammatical_rate": col(|r| r.grammatical_rate),
                "mean_score": col(|r| r.mean_score),
                "mean_length": col(|r| r.mean_length),
                "vocabulary": col(|r| r.vocabulary as f64),
            });
            (variant.to_string(), v)
        })
        .collect::<serde_json::Map<_, _>>();
    serde_json::Value::Object(curves)
}
