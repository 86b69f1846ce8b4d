//! Versioned JSON form of [`WorldState`].
//!
//! The static board is run-length encoded in row-major order. Each run is
//! `[length, code]` where `code` is `"g"` (grass), `"w"` (water) or
//! `"<kind>:<color>"` for a landmark, e.g. `"house:blue"`.

use serde::{Deserialize, Serialize};

use super::{
    Agent, Card, Landmark, LandmarkColor, LandmarkKind, Pose, Terrain, WorldConfig, WorldError,
    WorldState,
};

pub const WORLD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct WorldRecord {
    version: u32,
    config: WorldConfig,
    seed: u64,
    deals: u64,
    grid: Vec<(u32, String)>,
    cards: Vec<Card>,
    leader: Pose,
    follower: Pose,
    score: u32,
    turn: Agent,
    moves_left: u32,
    turns_taken: u32,
}

fn code(terrain: Terrain, landmark: Option<Landmark>) -> String {
    match (terrain, landmark) {
        (_, Some(l)) => format!("{}:{}", kind_name(l.kind), color_name(l.color)),
        (Terrain::Grass, None) => "g".into(),
        (Terrain::Water, None) => "w".into(),
    }
}

fn kind_name(k: LandmarkKind) -> String {
    serde_json::to_value(k)
        .unwrap()
        .as_str()
        .unwrap()
        .to_string()
}

fn color_name(c: LandmarkColor) -> String {
    serde_json::to_value(c)
        .unwrap()
        .as_str()
        .unwrap()
        .to_string()
}

fn decode(code: &str) -> Result<(Terrain, Option<Landmark>), WorldError> {
    match code {
        "g" => Ok((Terrain::Grass, None)),
        "w" => Ok((Terrain::Water, None)),
        other => {
            let (k, c) = other
                .split_once(':')
                .ok_or_else(|| WorldError::Schema(format!("bad cell code {other:?}")))?;
            let kind: LandmarkKind = serde_json::from_value(serde_json::Value::from(k))
                .map_err(|_| WorldError::Schema(format!("unknown landmark {k:?}")))?;
            let color: LandmarkColor = serde_json::from_value(serde_json::Value::from(c))
                .map_err(|_| WorldError::Schema(format!("unknown landmark color {c:?}")))?;
            Ok((Terrain::Grass, Some(Landmark { kind, color })))
        }
    }
}

impl From<WorldState> for WorldRecord {
    fn from(s: WorldState) -> Self {
        let mut grid: Vec<(u32, String)> = Vec::new();
        for (t, l) in s.terrain.iter().zip(&s.landmarks) {
            let c = code(*t, *l);
            match grid.last_mut() {
                Some((n, last)) if *last == c => *n += 1,
                _ => grid.push((1, c)),
            }
        }
        WorldRecord {
            version: WORLD_SCHEMA_VERSION,
            config: s.config,
            seed: s.seed,
            deals: s.deals,
            grid,
            cards: s.cards,
            leader: s.leader,
            follower: s.follower,
            score: s.score,
            turn: s.turn,
            moves_left: s.moves_left,
            turns_taken: s.turns_taken,
        }
    }
}

impl TryFrom<WorldRecord> for WorldState {
    type Error = WorldError;

    fn try_from(r: WorldRecord) -> Result<Self, Self::Error> {
        if r.version != WORLD_SCHEMA_VERSION {
            return Err(WorldError::Schema(format!(
                "unsupported world schema version {}",
                r.version
            )));
        }
        let n = (r.config.height * r.config.width) as usize;
        let mut terrain = Vec::with_capacity(n);
        let mut landmarks = Vec::with_capacity(n);
        for (run, c) in &r.grid {
            let (t, l) = decode(c)?;
            for _ in 0..*run {
                terrain.push(t);
                landmarks.push(l);
            }
        }
        if terrain.len() != n {
            return Err(WorldError::Schema(format!(
                "grid has {} cells, expected {n}",
                terrain.len()
            )));
        }
        let mut cards = r.cards;
        cards.sort_by_key(|c| c.cell);
        Ok(WorldState {
            config: r.config,
            seed: r.seed,
            deals: r.deals,
            terrain,
            landmarks,
            cards,
            leader: r.leader,
            follower: r.follower,
            score: r.score,
            turn: r.turn,
            moves_left: r.moves_left,
            turns_taken: r.turns_taken,
        })
    }
}

/// Serializes a `BTreeMap<Cell, V>` as a list of `[cell, value]` pairs.
pub(crate) mod cell_map {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::hexworld::Cell;

    pub fn serialize<V: Serialize, S: Serializer>(
        map: &BTreeMap<Cell, V>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        s.collect_seq(map.iter())
    }

    pub fn deserialize<'de, V: Deserialize<'de>, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<Cell, V>, D::Error> {
        let pairs: Vec<(Cell, V)> = Vec::deserialize(d)?;
        Ok(pairs.into_iter().collect())
    }
}
