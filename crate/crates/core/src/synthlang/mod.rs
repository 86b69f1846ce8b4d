//! Synthetic instruction language: grammar, vocabulary, a grounded parser
//! and the canonical verbalizer.
//!
//! Referring expressions are resolved against what the follower would see.
//! A fetch clause is grounded at the pose reached after all earlier clauses:
//! among visible cards matching the descriptor (and, with an anchor, lying
//! within [`ANCHOR_RADIUS`] of a matching visible landmark), the one with the
//! smallest hex distance wins, then the smallest cell.

use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hexworld::{hex_distance, Cell, FollowerView, Pose, WorldState};
use crate::planner;

pub mod grammar;
mod syntax;
mod verbalize;

pub use grammar::{Grammar, GrammarError};
pub use syntax::{read_clauses, Anchor, Clause, Descriptor, Turn};
pub use verbalize::verbalize;

/// Source of the instruction grammar.
pub const GRAMMAR_SOURCE: &str = include_str!("instruction.ebnf");

/// Longest instruction, counting the end-of-sequence token.
pub const MAX_INSTRUCTION_LEN: usize = 25;

/// Landmarks farther than this from a card cannot anchor it.
pub const ANCHOR_RADIUS: u32 = 2;

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

pub fn grammar() -> &'static Grammar {
    static G: OnceLock<Grammar> = OnceLock::new();
    G.get_or_init(|| Grammar::parse(GRAMMAR_SOURCE).expect("bundled grammar is valid"))
}

/// A tokenized instruction, without BOS/EOS.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub struct Instruction {
    pub tokens: Vec<String>,
}

impl Instruction {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        Self {
            tokens: tokens.into_iter().map(Into::into).collect(),
        }
    }

    /// Splits on whitespace.
    pub fn from_text(text: &str) -> Self {
        Self::new(text.split_whitespace())
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn strs(&self) -> Vec<&str> {
        self.tokens.iter().map(String::as_str).collect()
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

impl From<String> for Instruction {
    fn from(s: String) -> Self {
        Self::from_text(&s)
    }
}

impl From<Instruction> for String {
    fn from(x: Instruction) -> Self {
        x.text()
    }
}

/// Token inventory shared by the verbalizer and the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub const BOS_ID: u32 = 0;
    pub const EOS_ID: u32 = 1;
    pub const UNK_ID: u32 = 2;

    /// Special tokens followed by the grammar's terminals in file order.
    pub fn standard() -> Self {
        let mut tokens: Vec<String> = [BOS, EOS, UNK].map(String::from).to_vec();
        tokens.extend(grammar().terminals.iter().cloned());
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(Self::UNK_ID)
    }

    /// Strict lookup, `None` for tokens outside the vocabulary.
    pub fn lookup(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or(UNK, String::as_str)
    }

    /// Token ids followed by EOS.
    pub fn encode(&self, x: &Instruction) -> Vec<u32> {
        let mut ids: Vec<u32> = x.tokens.iter().map(|t| self.id(t)).collect();
        ids.push(Self::EOS_ID);
        ids
    }

    /// Reads ids up to the first EOS, dropping BOS.
    pub fn decode(&self, ids: &[u32]) -> Instruction {
        Instruction::new(
            ids.iter()
                .take_while(|&&i| i != Self::EOS_ID)
                .filter(|&&i| i != Self::BOS_ID)
                .map(|&i| self.token(i).to_string()),
        )
    }

    /// Rebuilds the lookup table after deserialization.
    pub fn reindex(&mut self) {
        *self = Self::from_tokens(std::mem::take(&mut self.tokens));
    }
}

/// Whether `x` is a sentence of the instruction grammar.
pub fn grammar_check(x: &Instruction) -> bool {
    grammar().recognizes(&x.tokens)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureReason {
    Ungrammatical,
    UnresolvableReferent,
    Contradictory,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{reason:?} at clause {clause}")]
pub struct ParseFailure {
    pub reason: FailureReason,
    /// Index of the clause that failed (0 for ungrammatical input).
    pub clause: usize,
}

/// A clause plus the pose it was grounded at and, for fetches, the card.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundedClause {
    pub clause: Clause,
    pub pose: Pose,
    pub target: Option<Cell>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParsedIntent {
    pub clauses: Vec<GroundedClause>,
}

impl ParsedIntent {
    pub fn targets(&self) -> Vec<Cell> {
        self.clauses.iter().filter_map(|c| c.target).collect()
    }
}

/// What a follower can find out about its surroundings: the view from a
/// pose and where walking onto a cell would leave it.
pub trait Surroundings {
    fn view(&self, pose: Pose) -> FollowerView;
    /// Pose after entering `target` from `from` by a shortest path, if any.
    fn arrival(&self, from: Pose, target: Cell) -> Option<Pose>;
}

impl Surroundings for WorldState {
    fn view(&self, pose: Pose) -> FollowerView {
        self.view_from(pose)
    }

    fn arrival(&self, from: Pose, target: Cell) -> Option<Pose> {
        let mut s = self.clone();
        s.follower = from;
        planner::toggle_path(&s, from, &[target])
            .ok()
            .and_then(|p| p.last().copied())
    }
}

/// Resolves a fetch clause against one view.
pub fn resolve(
    view: &FollowerView,
    card: &Descriptor,
    anchor: Option<&Anchor>,
) -> Result<Cell, FailureReason> {
    let here = view.pose.cell();
    let mut found: Vec<Cell> = view
        .cards()
        .filter(|(_, p)| card.matches(p))
        .map(|(c, _)| c)
        .collect();
    if found.is_empty() {
        return Err(FailureReason::UnresolvableReferent);
    }
    if let Some(a) = anchor {
        let marks: Vec<Cell> = view
            .landmarks()
            .filter(|(_, l)| {
                a.color.is_none_or(|c| c == l.color) && a.kind.is_none_or(|k| k == l.kind)
            })
            .map(|(c, _)| c)
            .collect();
        found.retain(|c| marks.iter().any(|m| hex_distance(*m, *c) <= ANCHOR_RADIUS));
        if found.is_empty() {
            return Err(FailureReason::Contradictory);
        }
    }
    Ok(found
        .into_iter()
        .min_by_key(|c| (hex_distance(here, *c), *c))
        .expect("non-empty"))
}

/// Parses and grounds `x` for a follower at `pose`.
///
/// Clauses are grounded in order at imagined poses: turns rotate the pose
/// and a fetch moves it to the arrival pose on the resolved card.
pub fn parse(
    world: &impl Surroundings,
    pose: Pose,
    x: &Instruction,
) -> Result<ParsedIntent, ParseFailure> {
    let ungrammatical = ParseFailure {
        reason: FailureReason::Ungrammatical,
        clause: 0,
    };
    if !grammar_check(x) {
        return Err(ungrammatical);
    }
    let clauses = read_clauses(&x.strs()).ok_or(ungrammatical)?;
    let mut here = pose;
    let mut out = ParsedIntent::default();
    for (i, clause) in clauses.into_iter().enumerate() {
        let fail = |reason| ParseFailure { reason, clause: i };
        let grounded_at = here;
        let target = match &clause {
            Clause::Wait => None,
            Clause::Turn { turn } => {
                here = Pose::at(here.cell(), here.alpha + turn.steps());
                None
            }
            Clause::Fetch { card, anchor } => {
                let cell = resolve(&world.view(here), card, anchor.as_ref()).map_err(fail)?;
                here = world
                    .arrival(here, cell)
                    .ok_or_else(|| fail(FailureReason::UnresolvableReferent))?;
                Some(cell)
            }
        };
        out.clauses.push(GroundedClause {
            clause,
            pose: grounded_at,
            target,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
