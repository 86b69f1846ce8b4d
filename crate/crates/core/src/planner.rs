//! Deterministic planner: picks the next valid set, splits the needed card
//! toggles between leader and follower, and produces shortest paths.
//!
//! Cost model: every action, including a turn in place, costs 1. Paths never
//! step on a card cell other than the one currently being targeted, so a
//! plan toggles exactly its target cards.

use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hexworld::{is_valid_set, Action, Agent, Cell, IllegalMove, Pose, WorldState};

/// Intended follower behavior: a pose sequence starting at `start`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub start: Pose,
    /// Includes `start` as the first pose.
    pub poses: Vec<Pose>,
    /// Cards the follower must toggle, in visiting order.
    pub target_cards: Vec<Cell>,
}

impl Plan {
    pub fn hold_still(start: Pose) -> Self {
        Self {
            start,
            poses: vec![start],
            target_cards: Vec::new(),
        }
    }

    pub fn target_set(&self) -> BTreeSet<Cell> {
        self.target_cards.iter().copied().collect()
    }

    pub fn num_cards(&self) -> usize {
        self.target_cards.len()
    }

    pub fn actions(&self) -> Vec<Action> {
        actions_along(&self.poses).expect("plan poses are connected")
    }
}

/// Which cards make the next set and who toggles what.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetAssignment {
    /// Sorted cells of the chosen valid triple.
    pub chosen_triple: [Cell; 3],
    /// Unselected triple cards assigned to the follower.
    pub follower_cards: Vec<Cell>,
    /// Unselected triple cards assigned to the leader.
    pub leader_cards: Vec<Cell>,
    /// Selected cards outside the triple, with the agent that toggles them off.
    pub deselections: Vec<(Cell, Agent)>,
    /// Total greedy path cost of the split.
    pub cost: u32,
}

impl SetAssignment {
    pub fn cells_for(&self, agent: Agent) -> Vec<Cell> {
        let mut out = match agent {
            Agent::Leader => self.leader_cards.clone(),
            Agent::Follower => self.follower_cards.clone(),
        };
        out.extend(
            self.deselections
                .iter()
                .filter(|(_, a)| *a == agent)
                .map(|(c, _)| *c),
        );
        out.sort();
        out
    }
}

#[derive(Debug, Clone, Copy, Error, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanError {
    #[error("no reachable valid set remains")]
    NoValidSet,
    #[error("cell ({}, {}) is unreachable", .0.h, .0.w)]
    Unreachable(Cell),
    #[error("leader action rejected: {0}")]
    Leader(IllegalMove),
}

/// Output of [`make_plan`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub assignment: SetAssignment,
    pub leader_actions: Vec<Action>,
    pub plan: Plan,
    /// State after the leader's actions with the turn passed to the
    /// follower; `plan` starts here.
    pub follower_state: WorldState,
}

/// The action that moves `a` to `b`, if any.
pub fn action_between(a: Pose, b: Pose) -> Option<Action> {
    Action::ALL.into_iter().find(|act| act.apply_to(a) == b)
}

pub fn actions_along(poses: &[Pose]) -> Option<Vec<Action>> {
    poses
        .windows(2)
        .map(|w| action_between(w[0], w[1]))
        .collect()
}

/// Cells any pathing agent may not enter (terrain, landmarks, agents other
/// than the one starting at `from`).
fn blocked_for(state: &WorldState, from: Pose) -> Vec<bool> {
    let w = state.width();
    let mut blocked: Vec<bool> = state.cells().map(|c| !state.is_open(c)).collect();
    for p in [state.leader, state.follower] {
        if p.cell() != from.cell() {
            blocked[(p.h * w + p.w) as usize] = true;
        }
    }
    blocked
}

fn node(state: &WorldState, p: Pose) -> usize {
    ((p.h * state.width() + p.w) as usize) * 6 + p.alpha as usize
}

/// Breadth-first search over `(cell, α, targets reached)`.
///
/// Card cells are impassable except the next target, which is entered to
/// advance a layer. With `entry_required == false` a first target under the
/// start pose counts as already visited.
fn layered_search(
    state: &WorldState,
    from: Pose,
    targets: &[Cell],
    entry_required: bool,
) -> Result<Vec<Pose>, PlanError> {
    let mut k0 = 0;
    if !entry_required && targets.first() == Some(&from.cell()) {
        k0 = 1;
    }
    if k0 == targets.len() {
        return Ok(vec![from]);
    }
    for t in targets {
        if !state.in_bounds(*t) {
            return Err(PlanError::Unreachable(*t));
        }
    }
    let blocked = blocked_for(state, from);
    let w = state.width();
    let cell_idx = |c: Cell| (c.h * w + c.w) as usize;
    let layers = targets.len() + 1;
    let per_layer = (state.height() * w) as usize * 6;
    let mut parent: Vec<u32> = vec![u32::MAX; per_layer * layers];
    const ROOT: u32 = u32::MAX - 1;
    let start = k0 * per_layer + node(state, from);
    parent[start] = ROOT;
    let mut queue = VecDeque::from([(from, k0)]);
    let mut best_layer = k0;
    while let Some((pose, k)) = queue.pop_front() {
        let here = k * per_layer + node(state, pose);
        for act in Action::ALL {
            let next = act.apply_to(pose);
            let mut nk = k;
            if act.moves_cell() {
                let c = next.cell();
                if !state.in_bounds(c) || blocked[cell_idx(c)] {
                    continue;
                }
                if c == targets[k] {
                    nk = k + 1;
                } else if state.card_at(c).is_some() {
                    continue;
                }
            }
            let id = nk * per_layer + node(state, next);
            if parent[id] != u32::MAX {
                continue;
            }
            parent[id] = here as u32;
            best_layer = best_layer.max(nk);
            if nk == targets.len() {
                let mut out = vec![next];
                let mut cur = here;
                while cur != start {
                    let layer_pos = cur % per_layer;
                    let cell = layer_pos / 6;
                    out.push(Pose::new(
                        (cell / w as usize) as i32,
                        (cell % w as usize) as i32,
                        (layer_pos % 6) as u8,
                    ));
                    cur = parent[cur] as usize;
                }
                out.push(from);
                out.reverse();
                return Ok(out);
            }
            queue.push_back((next, nk));
        }
    }
    Err(PlanError::Unreachable(targets[best_layer]))
}

/// Minimal-action pose sequence from `from` that visits `targets` in order.
///
/// Other agents, landmarks, water and non-target cards are obstacles. A
/// target under the start pose counts as visited. The first pose of the
/// result is `from`; ties are broken by expanding actions in
/// [`Action::ALL`] order.
pub fn shortest_path(
    state: &WorldState,
    from: Pose,
    targets: &[Cell],
) -> Result<Vec<Pose>, PlanError> {
    layered_search(state, from, targets, false)
}

/// Like [`shortest_path`] but every target must be entered by a move, so
/// its card is toggled even when the agent starts on it.
pub fn toggle_path(
    state: &WorldState,
    from: Pose,
    targets: &[Cell],
) -> Result<Vec<Pose>, PlanError> {
    layered_search(state, from, targets, true)
}

/// Entry cost and arrival pose for every card, from one source pose, with
/// all cards treated as obstacles except as final destinations.
#[derive(Debug, Clone)]
struct CardField {
    entry: Vec<Option<(u32, Pose)>>,
}

fn card_field(state: &WorldState, from: Pose, blocked: &[bool]) -> CardField {
    let w = state.width();
    let cell_idx = |c: Cell| (c.h * w + c.w) as usize;
    let card_index: HashMap<Cell, usize> = state
        .cards
        .iter()
        .enumerate()
        .map(|(i, c)| (c.cell, i))
        .collect();
    let mut entry = vec![None; state.cards.len()];
    let mut dist = vec![u32::MAX; (state.height() * w) as usize * 6];
    dist[node(state, from)] = 0;
    let mut queue = VecDeque::from([from]);
    while let Some(pose) = queue.pop_front() {
        let d = dist[node(state, pose)];
        for act in Action::ALL {
            let next = act.apply_to(pose);
            if act.moves_cell() {
                let c = next.cell();
                if !state.in_bounds(c) || blocked[cell_idx(c)] {
                    continue;
                }
                if let Some(&i) = card_index.get(&c) {
                    if entry[i].is_none() {
                        entry[i] = Some((d + 1, next));
                    }
                    continue;
                }
            }
            let id = node(state, next);
            if dist[id] == u32::MAX {
                dist[id] = d + 1;
                queue.push_back(next);
            }
        }
    }
    CardField { entry }
}

struct FieldCache<'a> {
    state: &'a WorldState,
    blocked: Vec<bool>,
    fields: HashMap<Pose, CardField>,
    card_index: HashMap<Cell, usize>,
}

impl<'a> FieldCache<'a> {
    fn new(state: &'a WorldState) -> Self {
        let w = state.width();
        let mut blocked: Vec<bool> = state.cells().map(|c| !state.is_open(c)).collect();
        for p in [state.leader, state.follower] {
            blocked[(p.h * w + p.w) as usize] = true;
        }
        let card_index = state
            .cards
            .iter()
            .enumerate()
            .map(|(i, c)| (c.cell, i))
            .collect();
        Self {
            state,
            blocked,
            fields: HashMap::new(),
            card_index,
        }
    }

    /// Cost and arrival pose of entering card cell `target` from `from`.
    fn entry(&mut self, from: Pose, target: Cell) -> Option<(u32, Pose)> {
        let state = self.state;
        let w = state.width();
        let blocked = &mut self.blocked;
        let field = self.fields.entry(from).or_insert_with(|| {
            // The mover's own cell must not block itself.
            let i = (from.h * w + from.w) as usize;
            let saved = blocked[i];
            blocked[i] = !state.is_open(from.cell());
            let f = card_field(state, from, blocked);
            blocked[i] = saved;
            f
        });
        field.entry[self.card_index[&target]]
    }
}

/// Most cards a single follower plan may toggle, so one instruction can
/// describe them all.
pub const MAX_FOLLOWER_TARGETS: usize = 3;

/// Greedy split of `required` cells between the two agents.
///
/// Repeatedly assigns the (agent, card) pair with the smallest entry cost
/// from that agent's current end pose; the leader wins ties, then the
/// smaller cell. The follower takes at most [`MAX_FOLLOWER_TARGETS`] cards.
/// Returns `None` if some card is unreachable for both.
fn greedy_split(
    cache: &mut FieldCache<'_>,
    required: &[Cell],
) -> Option<(u32, Vec<(Cell, Agent)>)> {
    let mut ends = [cache.state.leader, cache.state.follower];
    let agents = [Agent::Leader, Agent::Follower];
    let mut remaining: Vec<Cell> = required.to_vec();
    remaining.sort();
    let mut total = 0;
    let mut taken_by_follower = 0;
    let mut out = Vec::new();
    while !remaining.is_empty() {
        let mut best: Option<(u32, usize, usize, Pose)> = None;
        for (ai, end) in ends.iter().enumerate() {
            if agents[ai] == Agent::Follower && taken_by_follower >= MAX_FOLLOWER_TARGETS {
                continue;
            }
            for (ci, c) in remaining.iter().enumerate() {
                if let Some((cost, arrive)) = cache.entry(*end, *c) {
                    let better = match best {
                        None => true,
                        Some((bc, ba, bi, _)) => (cost, ai, *c) < (bc, ba, remaining[bi]),
                    };
                    if better {
                        best = Some((cost, ai, ci, arrive));
                    }
                }
            }
        }
        let (cost, ai, ci, arrive) = best?;
        taken_by_follower += (agents[ai] == Agent::Follower) as usize;
        total += cost;
        ends[ai] = arrive;
        out.push((remaining.remove(ci), agents[ai]));
    }
    Some((total, out))
}

/// Chooses the valid triple with the cheapest greedy split.
///
/// Ties are broken by the lexicographically smallest sorted cell triple.
pub fn choose_assignment(state: &WorldState) -> Result<SetAssignment, PlanError> {
    let cards = &state.cards;
    let selected: Vec<Cell> = cards
        .iter()
        .filter(|c| c.props.selected)
        .map(|c| c.cell)
        .collect();
    let mut cache = FieldCache::new(state);
    let mut best: Option<SetAssignment> = None;
    // cards are sorted by cell, so triples come out sorted too
    for i in 0..cards.len() {
        for j in i + 1..cards.len() {
            for k in j + 1..cards.len() {
                if !is_valid_set(&cards[i].props, &cards[j].props, &cards[k].props) {
                    continue;
                }
                let triple = [cards[i].cell, cards[j].cell, cards[k].cell];
                let mut required: Vec<Cell> = triple
                    .iter()
                    .zip([i, j, k])
                    .filter(|(_, idx)| !cards[*idx].props.selected)
                    .map(|(c, _)| *c)
                    .collect();
                required.extend(selected.iter().filter(|c| !triple.contains(c)));
                let Some((cost, split)) = greedy_split(&mut cache, &required) else {
                    continue;
                };
                if best
                    .as_ref()
                    .is_some_and(|b| (b.cost, b.chosen_triple) <= (cost, triple))
                {
                    continue;
                }
                let mut a = SetAssignment {
                    chosen_triple: triple,
                    follower_cards: Vec::new(),
                    leader_cards: Vec::new(),
                    deselections: Vec::new(),
                    cost,
                };
                for (cell, agent) in split {
                    if triple.contains(&cell) {
                        match agent {
                            Agent::Leader => a.leader_cards.push(cell),
                            Agent::Follower => a.follower_cards.push(cell),
                        }
                    } else {
                        a.deselections.push((cell, agent));
                    }
                }
                a.leader_cards.sort();
                a.follower_cards.sort();
                a.deselections.sort();
                best = Some(a);
            }
        }
    }
    best.ok_or(PlanError::NoValidSet)
}

/// Orders `cells` by repeatedly visiting the nearest remaining one (entry
/// cost, then cell order). Unreachable cells go last in cell order.
fn greedy_order(state: &WorldState, from: Pose, cells: &[Cell]) -> Vec<Cell> {
    let mut cache = FieldCache::new(state);
    let mut remaining: Vec<Cell> = cells.to_vec();
    remaining.sort();
    let mut end = from;
    let mut out = Vec::new();
    while !remaining.is_empty() {
        let best = remaining
            .iter()
            .enumerate()
            .filter_map(|(i, c)| {
                cache
                    .entry(end, *c)
                    .map(|(cost, arrive)| (cost, *c, i, arrive))
            })
            .min_by_key(|(cost, c, _, _)| (*cost, *c));
        match best {
            Some((_, _, i, arrive)) => {
                out.push(remaining.remove(i));
                end = arrive;
            }
            None => {
                out.append(&mut remaining);
            }
        }
    }
    out
}

/// Plans the next set: leader actions to execute now and the follower plan
/// that starts once the leader is done.
///
/// `state` must be at the start of the leader's turn.
pub fn make_plan(state: &WorldState) -> Result<PlanOutcome, PlanError> {
    let assignment = choose_assignment(state)?;
    let leader_targets = greedy_order(state, state.leader, &assignment.cells_for(Agent::Leader));
    let leader_path = toggle_path(state, state.leader, &leader_targets)?;
    let leader_actions = actions_along(&leader_path).expect("search emits connected poses");
    let mut after = state.clone();
    for act in &leader_actions {
        after.step(Agent::Leader, *act).map_err(PlanError::Leader)?;
    }
    let follower_state = after.end_turn();
    let set_done = follower_state.score > state.score;
    let plan = if set_done {
        Plan::hold_still(follower_state.follower)
    } else {
        let targets = greedy_order(
            &follower_state,
            follower_state.follower,
            &assignment.cells_for(Agent::Follower),
        );
        if targets.is_empty() {
            Plan::hold_still(follower_state.follower)
        } else {
            let poses = toggle_path(&follower_state, follower_state.follower, &targets)?;
            Plan {
                start: follower_state.follower,
                poses,
                target_cards: targets,
            }
        }
    };
    Ok(PlanOutcome {
        assignment,
        leader_actions,
        plan,
        follower_state,
    })
}
