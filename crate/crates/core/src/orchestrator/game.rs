use super::{InteractionRecord, OrchestratorError, Timing};
use crate::bandit::RecordId;
use crate::follower::{self, CompetenceProfile, Execution, Feedback};
use crate::genmodel::{ensemble_sample, BehaviorProb, Model, SampledInstruction};
use crate::hexworld::{Action, WorldConfig, WorldState};
use crate::planner::{make_plan, Plan};
use crate::seed;
use crate::synthlang::{verbalize, FailureReason, Vocabulary};

/// Where instructions come from.
#[derive(Clone, Copy)]
pub enum Speaker<'a> {
    Ensemble {
        members: &'a [Model],
        tau: f64,
        behavior: BehaviorProb,
    },
    /// The rule-based verbalizer; samples carry log-probability 0.
    Verbalizer,
}

impl Speaker<'_> {
    pub fn speak(
        &self,
        state: &WorldState,
        plan: &Plan,
        seed: u64,
    ) -> Result<SampledInstruction, OrchestratorError> {
        match *self {
            Speaker::Ensemble {
                members,
                tau,
                behavior,
            } => Ok(ensemble_sample(members, state, plan, tau, seed, behavior)?),
            Speaker::Verbalizer => {
                let tokens = verbalize(state, plan, seed);
                let mut ids = Vocabulary::standard().encode(&tokens);
                ids.push(Vocabulary::EOS_ID);
                Ok(SampledInstruction {
                    tokens,
                    ids,
                    logprob_model: 0.0,
                    logprob_tempered: 0.0,
                    logprob_behavior: 0.0,
                    model_index: 0,
                    truncated: false,
                })
            }
        }
    }
}

/// World and stream seeds of game `interaction` in `round`.
pub fn game_seeds(base: u64, round: u32, interaction: u32) -> (u64, u64) {
    let (r, i) = (round as u64, interaction as u64);
    (
        seed::derive(base, &[seed::tag("world"), r, i]),
        seed::derive(base, &[seed::tag("game"), r, i]),
    )
}

/// An instruction handed to the follower and not yet resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingTurn {
    pub id: RecordId,
    pub start_state: WorldState,
    pub plan: Plan,
    pub leader_actions: Vec<Action>,
    pub sample: SampledInstruction,
    pub start_tick: u64,
}

/// One game, advanced one instruction at a time. Both the simulated loop and
/// the session service drive it.
#[derive(Debug, Clone)]
pub struct Game {
    pub round: u32,
    pub interaction: u32,
    pub world_seed: u64,
    stream: u64,
    pub state: WorldState,
    index: u32,
    tick: u64,
    over: bool,
}

impl Game {
    pub fn new(
        base_seed: u64,
        round: u32,
        interaction: u32,
        world: &WorldConfig,
    ) -> Result<Self, OrchestratorError> {
        let (world_seed, stream) = game_seeds(base_seed, round, interaction);
        let state = WorldState::new(world_seed, world)?;
        Ok(Self {
            round,
            interaction,
            world_seed,
            stream,
            state,
            index: 0,
            tick: 0,
            over: false,
        })
    }

    pub fn is_over(&self) -> bool {
        self.over || self.state.turns_exhausted()
    }

    pub fn score(&self) -> u32 {
        self.state.score
    }

    pub fn instructions(&self) -> u32 {
        self.index
    }

    /// Plans, moves the leader and generates the next instruction; `None`
    /// once the game has ended.
    pub fn next_turn(
        &mut self,
        speaker: &Speaker,
    ) -> Result<Option<PendingTurn>, OrchestratorError> {
        if self.is_over() {
            return Ok(None);
        }
        let Ok(outcome) = make_plan(&self.state) else {
            self.over = true;
            return Ok(None);
        };
        let sample_seed = seed::derive(self.stream, &[seed::tag("sample"), self.index as u64]);
        let sample = speaker.speak(&outcome.follower_state, &outcome.plan, sample_seed)?;
        let start_tick = self.tick;
        self.tick += outcome.leader_actions.len() as u64;
        Ok(Some(PendingTurn {
            id: RecordId {
                round: self.round,
                interaction: self.interaction,
                index: self.index,
            },
            start_state: outcome.follower_state,
            plan: outcome.plan,
            leader_actions: outcome.leader_actions,
            sample,
            start_tick,
        }))
    }

    /// Seed of the simulated follower for the pending instruction.
    pub fn follower_seed(&self) -> u64 {
        seed::derive(self.stream, &[seed::tag("follower"), self.index as u64])
    }

    /// Closes the follower's turn from the world it left behind.
    pub fn finish(
        &mut self,
        turn: PendingTurn,
        execution: Execution,
        feedback: Feedback,
        terminated: bool,
        failure: Option<FailureReason>,
        end_state: &WorldState,
    ) -> InteractionRecord {
        self.tick += execution.actions.len() as u64;
        self.state = end_state.end_turn();
        self.index += 1;
        InteractionRecord {
            id: turn.id,
            world_seed: self.world_seed,
            start_state: turn.start_state,
            plan: turn.plan,
            leader_actions: turn.leader_actions,
            sample: turn.sample,
            execution,
            feedback,
            terminated,
            failure,
            score_after: self.state.score,
            timing: Timing {
                start_tick: turn.start_tick,
                end_tick: self.tick,
            },
        }
    }
}

/// Plays a whole game against the simulated follower.
pub fn play_simulated(
    game: &mut Game,
    speaker: &Speaker,
    profile: &CompetenceProfile,
) -> Result<Vec<InteractionRecord>, OrchestratorError> {
    let mut out = Vec::new();
    while let Some(turn) = game.next_turn(speaker)? {
        let run = follower::execute(
            &turn.start_state,
            &turn.sample.tokens,
            profile,
            game.follower_seed(),
        );
        out.push(game.finish(
            turn,
            run.execution,
            run.feedback,
            run.terminated,
            run.failure,
            &run.state,
        ));
    }
    Ok(out)
}

/// Re-applies a record's follower actions to its start state.
pub fn replay_execution(
    rec: &InteractionRecord,
) -> Result<Execution, crate::hexworld::IllegalMove> {
    let mut state = rec.start_state.clone();
    let mut poses = vec![state.follower];
    for &a in &rec.execution.actions {
        state.step(crate::hexworld::Agent::Follower, a)?;
        poses.push(state.follower);
    }
    Ok(Execution {
        poses,
        actions: rec.execution.actions.clone(),
    })
}
