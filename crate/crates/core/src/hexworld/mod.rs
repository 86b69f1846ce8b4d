//! Deterministic hex-grid card game.
//!
//! Two agents, a leader and a follower, move on a hex board and step onto
//! cards to toggle their selection. Three selected cards with pairwise
//! distinct counts, colors and shapes form a valid set: the score goes up by
//! one, every card on the board disappears and a fresh layout is dealt from
//! the world's seeded generator.
//!
//! All operations are pure: they borrow a [`WorldState`] and return a new
//! one, so states can be cloned freely and shared across threads.

mod generate;
pub mod geometry;
mod serial;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use geometry::{hex_distance, rotate_cell_about, Cell, CropWindow, Pose, ViewCone};
pub use serial::WORLD_SCHEMA_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CardColor {
    Red,
    Green,
    Black,
    Orange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Plus,
    Heart,
    Diamond,
    Triangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LandmarkKind {
    House,
    Tree,
    Tower,
    Rock,
    Well,
    Windmill,
    Tent,
    Lamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LandmarkColor {
    Blue,
    Yellow,
    White,
}

impl CardColor {
    pub const ALL: [CardColor; 4] = [Self::Red, Self::Green, Self::Black, Self::Orange];
}

impl Shape {
    pub const ALL: [Shape; 4] = [Self::Plus, Self::Heart, Self::Diamond, Self::Triangle];
}

impl LandmarkKind {
    pub const ALL: [LandmarkKind; 8] = [
        Self::House,
        Self::Tree,
        Self::Tower,
        Self::Rock,
        Self::Well,
        Self::Windmill,
        Self::Tent,
        Self::Lamp,
    ];
}

impl LandmarkColor {
    pub const ALL: [LandmarkColor; 3] = [Self::Blue, Self::Yellow, Self::White];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Landmark {
    pub kind: LandmarkKind,
    pub color: LandmarkColor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Terrain {
    Grass,
    Water,
}

/// Card attributes. `count` is always 1, 2 or 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CardProps {
    pub count: u8,
    pub color: CardColor,
    pub shape: Shape,
    pub selected: bool,
}

impl CardProps {
    pub fn new(count: u8, color: CardColor, shape: Shape) -> Self {
        assert!(
            (1..=3).contains(&count),
            "card count must be 1..=3, got {count}"
        );
        Self {
            count,
            color,
            shape,
            selected: false,
        }
    }

    /// Same card ignoring selection.
    pub fn same_kind(&self, other: &CardProps) -> bool {
        self.count == other.count && self.color == other.color && self.shape == other.shape
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Card {
    pub cell: Cell,
    pub props: CardProps,
}

/// True iff counts, colors and shapes are each pairwise distinct.
pub fn is_valid_set(a: &CardProps, b: &CardProps, c: &CardProps) -> bool {
    fn distinct<T: PartialEq>(x: T, y: T, z: T) -> bool {
        x != y && y != z && x != z
    }
    distinct(a.count, b.count, c.count)
        && distinct(a.color, b.color, c.color)
        && distinct(a.shape, b.shape, c.shape)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Agent {
    Leader,
    Follower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    Forward,
    Back,
    TurnLeft,
    TurnRight,
}

impl Action {
    /// Fixed expansion order used for every tie-break in the crate.
    pub const ALL: [Action; 4] = [Self::Forward, Self::Back, Self::TurnLeft, Self::TurnRight];

    /// Pose after the action, ignoring legality.
    pub fn apply_to(self, pose: Pose) -> Pose {
        match self {
            Action::Forward => Pose::at(pose.ahead(), pose.alpha),
            Action::Back => Pose::at(pose.behind(), pose.alpha),
            Action::TurnLeft => pose.turned_left(),
            Action::TurnRight => pose.turned_right(),
        }
    }

    pub fn moves_cell(self) -> bool {
        matches!(self, Action::Forward | Action::Back)
    }
}

/// Board and rule parameters. All have documented defaults; nothing about
/// them is fixed by the game itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub height: i32,
    pub width: i32,
    pub num_cards: usize,
    pub num_landmarks: usize,
    /// Number of small lakes scattered on the board.
    pub num_lakes: usize,
    pub leader_moves: u32,
    pub follower_moves: u32,
    /// Follower turns (one instruction each) before the game ends.
    pub turn_limit: u32,
    pub view: ViewCone,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            height: 12,
            width: 12,
            num_cards: 12,
            num_landmarks: 10,
            num_lakes: 3,
            leader_moves: 40,
            follower_moves: 40,
            turn_limit: 6,
            view: ViewCone::default(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("infeasible world config: {0}")]
    Infeasible(String),
    #[error("world schema: {0}")]
    Schema(String),
}

#[derive(Debug, Clone, Copy, Error, PartialEq, Eq, Serialize, Deserialize)]
pub enum IllegalMove {
    #[error("it is not the {0:?}'s turn")]
    NotYourTurn(Agent),
    #[error("no moves left this turn")]
    NoMovesLeft,
    #[error("cell ({}, {}) is out of bounds", .0.h, .0.w)]
    OutOfBounds(Cell),
    #[error("cell ({}, {}) is blocked", .0.h, .0.w)]
    Blocked(Cell),
}

/// Number of binary properties per cell in the state tensor.
pub const NUM_PROPERTIES: usize = 29;

/// Property indices of the binary state tensor.
pub mod prop {
    pub const GRASS: usize = 0;
    pub const WATER: usize = 1;
    pub const LANDMARK: usize = 2; // 8 kinds
    pub const LANDMARK_COLOR: usize = 10; // 3 colors
    pub const CARD: usize = 13;
    pub const COUNT: usize = 14; // counts 1..=3
    pub const CARD_COLOR: usize = 17; // 4 colors
    pub const SHAPE: usize = 21; // 4 shapes
    pub const SELECTED: usize = 25;
    pub const LEADER: usize = 26;
    pub const FOLLOWER: usize = 27;
    /// Marks crop entries outside the board or outside the hexagonal window.
    pub const PAD: usize = 28;
}

/// Full game state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "serial::WorldRecord", try_from = "serial::WorldRecord")]
pub struct WorldState {
    pub config: WorldConfig,
    /// Seed of the card-dealing stream; together with `deals` it is the
    /// complete generator state.
    pub seed: u64,
    pub deals: u64,
    pub terrain: Vec<Terrain>,
    pub landmarks: Vec<Option<Landmark>>,
    /// Kept sorted by cell.
    pub cards: Vec<Card>,
    pub leader: Pose,
    pub follower: Pose,
    pub score: u32,
    pub turn: Agent,
    pub moves_left: u32,
    /// Completed follower turns.
    pub turns_taken: u32,
}

/// What happened when an action was applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepEvent {
    pub toggled: Option<Cell>,
    pub set_completed: bool,
}

impl WorldState {
    /// Builds a random world. Deterministic in `seed`.
    pub fn new(seed: u64, config: &WorldConfig) -> Result<Self, WorldError> {
        generate::new_world(seed, config)
    }

    pub fn height(&self) -> i32 {
        self.config.height
    }

    pub fn width(&self) -> i32 {
        self.config.width
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.h >= 0 && c.w >= 0 && c.h < self.config.height && c.w < self.config.width
    }

    fn index(&self, c: Cell) -> usize {
        (c.h * self.config.width + c.w) as usize
    }

    pub fn terrain_at(&self, c: Cell) -> Option<Terrain> {
        self.in_bounds(c).then(|| self.terrain[self.index(c)])
    }

    pub fn landmark_at(&self, c: Cell) -> Option<Landmark> {
        if self.in_bounds(c) {
            self.landmarks[self.index(c)]
        } else {
            None
        }
    }

    /// Grass without a landmark. Agents and cards are ignored.
    pub fn is_open(&self, c: Cell) -> bool {
        self.in_bounds(c)
            && self.terrain[self.index(c)] == Terrain::Grass
            && self.landmarks[self.index(c)].is_none()
    }

    pub fn card_at(&self, c: Cell) -> Option<&Card> {
        self.cards
            .binary_search_by(|card| card.cell.cmp(&c))
            .ok()
            .map(|i| &self.cards[i])
    }

    pub fn pose_of(&self, agent: Agent) -> Pose {
        match agent {
            Agent::Leader => self.leader,
            Agent::Follower => self.follower,
        }
    }

    pub fn other(agent: Agent) -> Agent {
        match agent {
            Agent::Leader => Agent::Follower,
            Agent::Follower => Agent::Leader,
        }
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        let w = self.config.width;
        (0..self.config.height).flat_map(move |h| (0..w).map(move |x| Cell::new(h, x)))
    }

    /// Active property indices of a cell (binary tensor column).
    pub fn properties(&self, c: Cell) -> Vec<usize> {
        let mut out = Vec::with_capacity(8);
        if !self.in_bounds(c) {
            out.push(prop::PAD);
            return out;
        }
        match self.terrain[self.index(c)] {
            Terrain::Grass => out.push(prop::GRASS),
            Terrain::Water => out.push(prop::WATER),
        }
        if let Some(l) = self.landmarks[self.index(c)] {
            out.push(prop::LANDMARK + l.kind as usize);
            out.push(prop::LANDMARK_COLOR + l.color as usize);
        }
        if let Some(card) = self.card_at(c) {
            out.push(prop::CARD);
            out.push(prop::COUNT + card.props.count as usize - 1);
            out.push(prop::CARD_COLOR + card.props.color as usize);
            out.push(prop::SHAPE + card.props.shape as usize);
            if card.props.selected {
                out.push(prop::SELECTED);
            }
        }
        if self.leader.cell() == c {
            out.push(prop::LEADER);
        }
        if self.follower.cell() == c {
            out.push(prop::FOLLOWER);
        }
        out
    }

    /// Binary property vector of length [`NUM_PROPERTIES`].
    pub fn property_vector(&self, c: Cell) -> Vec<u8> {
        let mut v = vec![0u8; NUM_PROPERTIES];
        for p in self.properties(c) {
            v[p] = 1;
        }
        v
    }

    /// Legality check shared by the engine and the planner.
    pub fn check_action(&self, agent: Agent, action: Action) -> Result<Pose, IllegalMove> {
        if self.turn != agent {
            return Err(IllegalMove::NotYourTurn(self.turn));
        }
        if self.moves_left == 0 {
            return Err(IllegalMove::NoMovesLeft);
        }
        let pose = self.pose_of(agent);
        let next = action.apply_to(pose);
        if action.moves_cell() {
            let c = next.cell();
            if !self.in_bounds(c) {
                return Err(IllegalMove::OutOfBounds(c));
            }
            if !self.is_open(c) || self.pose_of(Self::other(agent)).cell() == c {
                return Err(IllegalMove::Blocked(c));
            }
        }
        Ok(next)
    }

    /// Applies one action for `agent`, returning the successor state.
    pub fn apply_action(&self, agent: Agent, action: Action) -> Result<WorldState, IllegalMove> {
        let mut next = self.clone();
        next.step(agent, action)?;
        Ok(next)
    }

    /// In-place variant of [`WorldState::apply_action`]. On error the state
    /// is untouched.
    pub fn step(&mut self, agent: Agent, action: Action) -> Result<StepEvent, IllegalMove> {
        let pose = self.check_action(agent, action)?;
        self.moves_left -= 1;
        match agent {
            Agent::Leader => self.leader = pose,
            Agent::Follower => self.follower = pose,
        }
        let mut event = StepEvent::default();
        if action.moves_cell() {
            let c = pose.cell();
            if let Ok(i) = self.cards.binary_search_by(|card| card.cell.cmp(&c)) {
                self.cards[i].props.selected = !self.cards[i].props.selected;
                event.toggled = Some(c);
                if self.selected_form_valid_set() {
                    self.score += 1;
                    self.deal();
                    event.set_completed = true;
                }
            }
        }
        Ok(event)
    }

    fn selected_form_valid_set(&self) -> bool {
        let sel: Vec<&CardProps> = self
            .cards
            .iter()
            .map(|c| &c.props)
            .filter(|p| p.selected)
            .collect();
        sel.len() == 3 && is_valid_set(sel[0], sel[1], sel[2])
    }

    /// Replaces every card with a fresh deal.
    fn deal(&mut self) {
        self.deals += 1;
        self.cards = generate::deal_cards(self);
    }

    /// Passes the turn to the other agent and refills its moves.
    pub fn end_turn(&self) -> WorldState {
        let mut next = self.clone();
        if next.turn == Agent::Follower {
            next.turns_taken += 1;
        }
        next.turn = Self::other(next.turn);
        next.moves_left = match next.turn {
            Agent::Leader => next.config.leader_moves,
            Agent::Follower => next.config.follower_moves,
        };
        next
    }

    pub fn turns_exhausted(&self) -> bool {
        self.turns_taken >= self.config.turn_limit
    }

    /// True if some three unselected cards form a valid set.
    pub fn has_unselected_valid_set(&self) -> bool {
        let open: Vec<&CardProps> = self
            .cards
            .iter()
            .map(|c| &c.props)
            .filter(|p| !p.selected)
            .collect();
        any_valid_triple(&open)
    }

    /// Crop of binary property vectors around `pose`, rotated by its
    /// orientation. Out-of-board cells and masked window corners carry only
    /// the padding property.
    pub fn rotate_crop(&self, pose: Pose, side: usize) -> Crop {
        let window = CropWindow::new(side);
        let cells = window.cells(pose);
        let values = cells
            .iter()
            .map(|c| match c {
                Some(c) => self.property_vector(*c),
                None => {
                    let mut v = vec![0u8; NUM_PROPERTIES];
                    v[prop::PAD] = 1;
                    v
                }
            })
            .collect();
        Crop {
            side,
            pose,
            cells,
            values,
        }
    }

    /// What the follower sees: cells inside its view cone.
    pub fn follower_view(&self) -> FollowerView {
        self.view_from(self.follower)
    }

    /// The view cone evaluated from an arbitrary pose.
    pub fn view_from(&self, pose: Pose) -> FollowerView {
        let cone = self.config.view;
        let mut cells = BTreeMap::new();
        for c in self.cells() {
            if cone.contains(pose, c) {
                cells.insert(
                    c,
                    CellView {
                        open: self.is_open(c),
                        terrain: self.terrain[self.index(c)],
                        landmark: self.landmarks[self.index(c)],
                        card: self.card_at(c).map(|card| card.props),
                        leader: self.leader.cell() == c,
                    },
                );
            }
        }
        FollowerView { pose, cells }
    }

    /// Rotates the whole world about `center` by `steps` counter-clockwise
    /// sixths. Cells whose preimage is off the board become plain grass, and
    /// cards or agents that would leave the board are dropped or kept in
    /// place respectively; callers that need exactness should stay well
    /// inside the board.
    pub fn rotated_about(&self, center: Cell, steps: u8) -> WorldState {
        let mut next = self.clone();
        let back = (6 - steps % 6) % 6;
        for c in self.cells() {
            let src = rotate_cell_about(c, center, back);
            let i = next.index(c);
            if self.in_bounds(src) {
                next.terrain[i] = self.terrain[self.index(src)];
                next.landmarks[i] = self.landmarks[self.index(src)];
            } else {
                next.terrain[i] = Terrain::Grass;
                next.landmarks[i] = None;
            }
        }
        let rot_pose = |p: Pose| {
            let c = rotate_cell_about(p.cell(), center, steps);
            Pose::at(c, (p.alpha + steps) % 6)
        };
        let lp = rot_pose(self.leader);
        if self.in_bounds(lp.cell()) {
            next.leader = lp;
        }
        let fp = rot_pose(self.follower);
        if self.in_bounds(fp.cell()) {
            next.follower = fp;
        }
        next.cards = self
            .cards
            .iter()
            .map(|c| Card {
                cell: rotate_cell_about(c.cell, center, steps),
                props: c.props,
            })
            .filter(|c| next.in_bounds(c.cell))
            .collect();
        next.cards.sort_by_key(|c| c.cell);
        next
    }
}

pub(crate) fn any_valid_triple(cards: &[&CardProps]) -> bool {
    let n = cards.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                if is_valid_set(cards[i], cards[j], cards[k]) {
                    return true;
                }
            }
        }
    }
    false
}

/// Rotated property patch around a pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Crop {
    pub side: usize,
    pub pose: Pose,
    /// World cell behind each entry (`None` for masked corners).
    pub cells: Vec<Option<Cell>>,
    /// Binary property vector per entry, `side * side` entries.
    pub values: Vec<Vec<u8>>,
}

/// One visible cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellView {
    pub open: bool,
    pub terrain: Terrain,
    pub landmark: Option<Landmark>,
    pub card: Option<CardProps>,
    pub leader: bool,
}

/// Partial observation available to the follower.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowerView {
    pub pose: Pose,
    #[serde(with = "serial::cell_map")]
    pub cells: BTreeMap<Cell, CellView>,
}

impl FollowerView {
    pub fn contains(&self, c: Cell) -> bool {
        self.cells.contains_key(&c)
    }

    pub fn cards(&self) -> impl Iterator<Item = (Cell, CardProps)> + '_ {
        self.cells
            .iter()
            .filter_map(|(c, v)| v.card.map(|p| (*c, p)))
    }

    pub fn landmarks(&self) -> impl Iterator<Item = (Cell, Landmark)> + '_ {
        self.cells
            .iter()
            .filter_map(|(c, v)| v.landmark.map(|l| (*c, l)))
    }
}
