use serde::{Deserialize, Serialize};

use crate::bandit::RecordId;
use crate::follower::{Execution, Feedback};
use crate::genmodel::SampledInstruction;
use crate::hexworld::{Action, WorldState};
use crate::planner::Plan;
use crate::synthlang::FailureReason;

/// Logical clock readings; one tick per game action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Timing {
    pub start_tick: u64,
    pub end_tick: u64,
}

/// Everything observed about one generated instruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub id: RecordId,
    pub world_seed: u64,
    /// State the follower starts from, after the leader's moves.
    pub start_state: WorldState,
    pub plan: Plan,
    pub leader_actions: Vec<Action>,
    pub sample: SampledInstruction,
    pub execution: Execution,
    pub feedback: Feedback,
    pub terminated: bool,
    pub failure: Option<FailureReason>,
    /// Game score once the follower's turn ended.
    pub score_after: u32,
    pub timing: Timing,
}
