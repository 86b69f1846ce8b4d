use std::collections::VecDeque;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use super::{
    any_valid_triple, Agent, Card, CardColor, CardProps, Cell, Landmark, LandmarkColor,
    LandmarkKind, Pose, Shape, Terrain, WorldConfig, WorldError, WorldState,
};
use crate::seed;

const MAX_DEAL_ATTEMPTS: usize = 1000;

pub(super) fn new_world(world_seed: u64, config: &WorldConfig) -> Result<WorldState, WorldError> {
    if config.height < 6 || config.width < 6 {
        return Err(WorldError::Infeasible(format!(
            "board must be at least 6x6, got {}x{}",
            config.height, config.width
        )));
    }
    if config.num_cards < 9 {
        return Err(WorldError::Infeasible(format!(
            "need at least 9 cards, got {}",
            config.num_cards
        )));
    }
    if config.num_cards > 48 {
        return Err(WorldError::Infeasible(
            "at most 48 distinct cards exist".into(),
        ));
    }
    let mut rng = seed::rng(seed::derive(world_seed, &[seed::tag("terrain")]));
    let (hh, ww) = (config.height, config.width);
    let n = (hh * ww) as usize;
    let idx = |c: Cell| (c.h * ww + c.w) as usize;
    let in_bounds = |c: Cell| c.h >= 0 && c.w >= 0 && c.h < hh && c.w < ww;

    let mut terrain = vec![Terrain::Grass; n];
    for _ in 0..config.num_lakes {
        let mut c = Cell::new(rng.random_range(0..hh), rng.random_range(0..ww));
        let size = rng.random_range(3..=5);
        for _ in 0..size {
            terrain[idx(c)] = Terrain::Water;
            let next = c.neighbor(rng.random_range(0..6));
            if in_bounds(next) {
                c = next;
            }
        }
    }
    let mut landmarks: Vec<Option<Landmark>> = vec![None; n];
    let mut placed = 0;
    let mut attempts = 0;
    while placed < config.num_landmarks && attempts < 100 * (config.num_landmarks + 1) {
        attempts += 1;
        let c = Cell::new(rng.random_range(0..hh), rng.random_range(0..ww));
        if terrain[idx(c)] == Terrain::Grass && landmarks[idx(c)].is_none() {
            landmarks[idx(c)] = Some(Landmark {
                kind: LandmarkKind::ALL[rng.random_range(0..LandmarkKind::ALL.len())],
                color: LandmarkColor::ALL[rng.random_range(0..LandmarkColor::ALL.len())],
            });
            placed += 1;
        }
    }

    // Keep only the largest connected open region walkable.
    let open = |terrain: &[Terrain], landmarks: &[Option<Landmark>], c: Cell| {
        terrain[idx(c)] == Terrain::Grass && landmarks[idx(c)].is_none()
    };
    let mut component = vec![usize::MAX; n];
    let mut sizes = Vec::new();
    for h in 0..hh {
        for w in 0..ww {
            let start = Cell::new(h, w);
            if component[idx(start)] != usize::MAX || !open(&terrain, &landmarks, start) {
                continue;
            }
            let id = sizes.len();
            let mut size = 0;
            let mut queue = VecDeque::from([start]);
            component[idx(start)] = id;
            while let Some(c) = queue.pop_front() {
                size += 1;
                for nb in c.neighbors() {
                    if in_bounds(nb)
                        && component[idx(nb)] == usize::MAX
                        && open(&terrain, &landmarks, nb)
                    {
                        component[idx(nb)] = id;
                        queue.push_back(nb);
                    }
                }
            }
            sizes.push(size);
        }
    }
    let largest = (0..sizes.len()).max_by_key(|&i| (sizes[i], std::cmp::Reverse(i)));
    let Some(largest) = largest else {
        return Err(WorldError::Infeasible("no open cells".into()));
    };
    for i in 0..n {
        if terrain[i] == Terrain::Grass && landmarks[i].is_none() && component[i] != largest {
            terrain[i] = Terrain::Water;
        }
    }
    if sizes[largest] < config.num_cards + 8 {
        return Err(WorldError::Infeasible(format!(
            "only {} walkable cells for {} cards",
            sizes[largest], config.num_cards
        )));
    }

    let mut free: Vec<Cell> = (0..hh)
        .flat_map(|h| (0..ww).map(move |w| Cell::new(h, w)))
        .filter(|c| component[idx(*c)] == largest)
        .collect();
    free.shuffle(&mut rng);
    let leader = Pose::at(free[0], rng.random_range(0..6));
    let follower = Pose::at(free[1], rng.random_range(0..6));

    let mut state = WorldState {
        config: config.clone(),
        seed: world_seed,
        deals: 0,
        terrain,
        landmarks,
        cards: Vec::new(),
        leader,
        follower,
        score: 0,
        turn: Agent::Leader,
        moves_left: config.leader_moves,
        turns_taken: 0,
    };
    state.cards = deal_cards(&state);
    if state.cards.is_empty() {
        return Err(WorldError::Infeasible(
            "could not deal a layout with a valid set".into(),
        ));
    }
    Ok(state)
}

/// Deals a full layout of distinct cards on open cells away from both agents.
/// The layout always contains a valid set. Deterministic in `(seed, deals)`.
pub(super) fn deal_cards(state: &WorldState) -> Vec<Card> {
    let mut rng = seed::rng(seed::derive(state.seed, &[seed::tag("deal"), state.deals]));
    let free: Vec<Cell> = state
        .cells()
        .filter(|c| state.is_open(*c) && *c != state.leader.cell() && *c != state.follower.cell())
        .collect();
    let mut kinds = Vec::with_capacity(48);
    for count in 1..=3u8 {
        for color in CardColor::ALL {
            for shape in Shape::ALL {
                kinds.push(CardProps::new(count, color, shape));
            }
        }
    }
    let n = state.config.num_cards.min(free.len());
    for _ in 0..MAX_DEAL_ATTEMPTS {
        let picked: Vec<CardProps> = kinds.choose_multiple(&mut rng, n).copied().collect();
        let refs: Vec<&CardProps> = picked.iter().collect();
        if !any_valid_triple(&refs) {
            continue;
        }
        let cells: Vec<Cell> = free.choose_multiple(&mut rng, n).copied().collect();
        let mut cards: Vec<Card> = cells
            .into_iter()
            .zip(picked)
            .map(|(cell, props)| Card { cell, props })
            .collect();
        cards.sort_by_key(|c| c.cell);
        return cards;
    }
    Vec::new()
}
