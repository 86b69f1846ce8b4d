//! Simulated followers that execute instructions and give feedback.
//!
//! A follower reads the instruction, grounds each clause against its own
//! view at its current pose, and walks shortest paths to the cards it
//! resolves. Noise enters in four places, all controlled by a
//! [`CompetenceProfile`]. The follower never sees the system's plan.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hexworld::{Action, Agent, CardColor, Cell, Pose, Shape, WorldState};
use crate::planner::toggle_path;
use crate::seed;
use crate::synthlang::{
    self, read_clauses, resolve, Clause, Descriptor, FailureReason, Instruction, Turn,
};

/// Right turns tried when a referent cannot be found.
pub const EXPLORE_TURNS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompetenceProfile {
    /// Chance of misreading one attribute of each card description.
    pub parse_noise: f64,
    /// Chance that any single step is a uniformly random legal action.
    pub move_noise: f64,
    /// Chance of stopping, rather than looking around, when a description
    /// matches nothing in view.
    pub give_up: f64,
    /// Chance of flipping each feedback answer.
    pub feedback_noise: f64,
}

#[derive(Debug, Error, PartialEq)]
#[error("profile field `{field}` = {value} is not a probability")]
pub struct ProfileError {
    pub field: &'static str,
    pub value: f64,
}

impl CompetenceProfile {
    pub const NOISELESS: Self = Self {
        parse_noise: 0.0,
        move_noise: 0.0,
        give_up: 1.0,
        feedback_noise: 0.0,
    };

    pub fn expert() -> Self {
        Self {
            parse_noise: 0.02,
            move_noise: 0.02,
            give_up: 0.2,
            feedback_noise: 0.02,
        }
    }

    pub fn typical() -> Self {
        Self {
            parse_noise: 0.08,
            move_noise: 0.05,
            give_up: 0.5,
            feedback_noise: 0.08,
        }
    }

    pub fn noisy() -> Self {
        Self {
            parse_noise: 0.2,
            move_noise: 0.15,
            give_up: 0.7,
            feedback_noise: 0.2,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "expert" => Some(Self::expert()),
            "typical" => Some(Self::typical()),
            "noisy" => Some(Self::noisy()),
            "noiseless" => Some(Self::NOISELESS),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        for (field, value) in [
            ("parse_noise", self.parse_noise),
            ("move_noise", self.move_noise),
            ("give_up", self.give_up),
            ("feedback_noise", self.feedback_noise),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ProfileError { field, value });
            }
        }
        Ok(())
    }
}

impl Default for CompetenceProfile {
    fn default() -> Self {
        Self::typical()
    }
}

/// The follower's two answers after executing an instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub perceived_correct: bool,
    pub grammatical: bool,
}

/// What the follower did: its pose sequence (starting pose first) and the
/// actions between consecutive poses.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Execution {
    pub poses: Vec<Pose>,
    pub actions: Vec<Action>,
}

impl Execution {
    pub fn start(&self) -> Option<Pose> {
        self.poses.first().copied()
    }

    pub fn end(&self) -> Option<Pose> {
        self.poses.last().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowerRun {
    pub execution: Execution,
    pub feedback: Feedback,
    /// The follower stopped before carrying out every clause.
    pub terminated: bool,
    /// Why it stopped early, if it did.
    pub failure: Option<FailureReason>,
    /// The move budget ran out mid-instruction.
    pub out_of_moves: bool,
    /// World after the follower's last move (still the follower's turn).
    pub state: WorldState,
}

enum Stop {
    Failed(FailureReason),
    OutOfMoves,
}

struct Walker<'a> {
    state: WorldState,
    exec: Execution,
    rng: ChaCha8Rng,
    profile: &'a CompetenceProfile,
}

impl Walker<'_> {
    fn legal_actions(&self) -> Vec<Action> {
        Action::ALL
            .into_iter()
            .filter(|a| self.state.check_action(Agent::Follower, *a).is_ok())
            .collect()
    }

    /// Takes `intended`, or a random legal action with probability ε.
    /// Returns whether the step entered `target`.
    fn act(&mut self, intended: Action, target: Option<Cell>) -> Result<bool, Stop> {
        if self.state.moves_left == 0 {
            return Err(Stop::OutOfMoves);
        }
        let action =
            if self.profile.move_noise > 0.0 && self.rng.random_bool(self.profile.move_noise) {
                *self
                    .legal_actions()
                    .choose(&mut self.rng)
                    .expect("turns are always legal")
            } else {
                intended
            };
        let before = self.state.follower.cell();
        self.state
            .step(Agent::Follower, action)
            .expect("intended and sampled actions are legal");
        let after = self.state.follower;
        self.exec.actions.push(action);
        self.exec.poses.push(after);
        Ok(after.cell() != before && Some(after.cell()) == target)
    }

    fn turn(&mut self, t: Turn) -> Result<(), Stop> {
        let (action, n) = match t {
            Turn::Left => (Action::TurnLeft, 1),
            Turn::Right => (Action::TurnRight, 1),
            Turn::Around => (Action::TurnLeft, 3),
        };
        for _ in 0..n {
            self.act(action, None)?;
        }
        Ok(())
    }

    fn misread(&mut self, mut d: Descriptor) -> Descriptor {
        let mut slots = Vec::new();
        if d.count.is_some() {
            slots.push(0);
        }
        if d.color.is_some() {
            slots.push(1);
        }
        if d.shape.is_some() {
            slots.push(2);
        }
        let Some(&slot) = slots.choose(&mut self.rng) else {
            return d;
        };
        match slot {
            0 => {
                let n = d.count.unwrap();
                let others: Vec<u8> = [1, 2, 3].into_iter().filter(|m| *m != n).collect();
                d.count = others.choose(&mut self.rng).copied();
            }
            1 => {
                let c = d.color.unwrap();
                let others: Vec<CardColor> =
                    CardColor::ALL.into_iter().filter(|x| *x != c).collect();
                d.color = others.choose(&mut self.rng).copied();
            }
            _ => {
                let s = d.shape.unwrap();
                let others: Vec<Shape> = Shape::ALL.into_iter().filter(|x| *x != s).collect();
                d.shape = others.choose(&mut self.rng).copied();
            }
        }
        d
    }

    fn find(&mut self, clause: &Clause) -> Result<Cell, Stop> {
        let Clause::Fetch { card, anchor } = clause else {
            unreachable!()
        };
        let card =
            if self.profile.parse_noise > 0.0 && self.rng.random_bool(self.profile.parse_noise) {
                self.misread(*card)
            } else {
                *card
            };
        let mut last = match resolve(&self.state.follower_view(), &card, anchor.as_ref()) {
            Ok(c) => return Ok(c),
            Err(r) => r,
        };
        if self.rng.random_bool(self.profile.give_up) {
            return Err(Stop::Failed(last));
        }
        for _ in 0..EXPLORE_TURNS {
            self.act(Action::TurnRight, None)?;
            match resolve(&self.state.follower_view(), &card, anchor.as_ref()) {
                Ok(c) => return Ok(c),
                Err(r) => last = r,
            }
        }
        Err(Stop::Failed(last))
    }

    fn fetch(&mut self, clause: &Clause) -> Result<(), Stop> {
        let target = self.find(clause)?;
        loop {
            let path = toggle_path(&self.state, self.state.follower, &[target])
                .map_err(|_| Stop::Failed(FailureReason::UnresolvableReferent))?;
            let intended =
                crate::planner::action_between(path[0], path[1]).expect("adjacent poses");
            if self.act(intended, Some(target))? {
                return Ok(());
            }
        }
    }

    fn run(&mut self, clauses: &[Clause]) -> Result<(), Stop> {
        for c in clauses {
            match c {
                Clause::Wait => {}
                Clause::Turn { turn } => self.turn(*turn)?,
                Clause::Fetch { .. } => self.fetch(c)?,
            }
        }
        Ok(())
    }
}

/// Executes `x` as the follower in `state`, deterministically given `seed`.
///
/// The state must be at the follower's turn. Failures never error: they end
/// the execution early and show up in the returned run.
pub fn execute(
    state: &WorldState,
    x: &Instruction,
    profile: &CompetenceProfile,
    seed: u64,
) -> FollowerRun {
    debug_assert_eq!(state.turn, Agent::Follower);
    let mut w = Walker {
        state: state.clone(),
        exec: Execution {
            poses: vec![state.follower],
            actions: Vec::new(),
        },
        rng: seed::rng(seed),
        profile,
    };
    let grammatical = synthlang::grammar_check(x);
    let result = if grammatical {
        let toks: Vec<&str> = x.tokens.iter().map(String::as_str).collect();
        let clauses = read_clauses(&toks).expect("grammatical input reads");
        w.run(&clauses)
    } else {
        Err(Stop::Failed(FailureReason::Ungrammatical))
    };
    let (failure, out_of_moves) = match result {
        Ok(()) => (None, false),
        Err(Stop::Failed(r)) => (Some(r), false),
        Err(Stop::OutOfMoves) => (None, true),
    };
    let done = failure.is_none() && !out_of_moves;
    let mut flip = |answer: bool| {
        answer ^ (profile.feedback_noise > 0.0 && w.rng.random_bool(profile.feedback_noise))
    };
    let feedback = Feedback {
        perceived_correct: flip(done),
        grammatical: flip(grammatical),
    };
    FollowerRun {
        execution: w.exec,
        feedback,
        terminated: failure.is_some(),
        failure,
        out_of_moves,
        state: w.state,
    }
}

#[cfg(test)]
mod tests;
