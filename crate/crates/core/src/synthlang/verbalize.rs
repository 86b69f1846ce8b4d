//! The canonical instruction writer.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::syntax::{color_word, kind_word, landmark_color_word, shape_word, Turn};
use super::{Instruction, Surroundings, ANCHOR_RADIUS, MAX_INSTRUCTION_LEN};
use crate::hexworld::{hex_distance, CardProps, Landmark, Pose, WorldState};
use crate::planner::Plan;
use crate::seed;

const WAITS: [&[&str]; 4] = [
    &["hold", "still"],
    &["wait", "here"],
    &["stay", "put"],
    &["do", "not", "move"],
];
const VERBS: [&[&str]; 8] = [
    &["get"],
    &["grab"],
    &["collect"],
    &["take"],
    &["select"],
    &["pick", "up"],
    &["go", "to"],
    &["walk", "to"],
];
const SEPS: [&[&str]; 4] = [&["then"], &["and", "then"], &[","], &[",", "then"]];

struct Step {
    turn: Option<Turn>,
    card: CardProps,
    landmark: Option<Landmark>,
}

/// Surface choices drawn once per step, so shortening keeps the rest.
struct Style {
    verb: usize,
    the: bool,
    with_form: bool,
    word_number: u8,
    card_suffix: bool,
    anchor: bool,
    anchor_form: u8,
    turn_joined: bool,
    sep: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Level {
    Free,
    NoAnchors,
    Compact,
}

fn turn_word(t: Turn) -> &'static str {
    match t {
        Turn::Left => "left",
        Turn::Right => "right",
        Turn::Around => "around",
    }
}

fn number(count: u8, form: u8) -> &'static str {
    match (count, form % 3) {
        (1, 0) => "1",
        (1, 1) => "one",
        (1, _) => "single",
        (2, 0) => "2",
        (2, _) => "two",
        (_, 0) => "3",
        _ => "three",
    }
}

fn plan_steps(state: &WorldState, plan: &Plan) -> Vec<Step> {
    let cone = state.config.view;
    let mut here = plan.start;
    let mut steps = Vec::new();
    for &t in &plan.target_cards {
        let card = state.card_at(t).expect("plan targets are cards").props;
        let turn = if cone.contains(here, t) {
            None
        } else {
            [Turn::Left, Turn::Right, Turn::Around]
                .into_iter()
                .find(|tn| cone.contains(Pose::at(here.cell(), here.alpha + tn.steps()), t))
        };
        if let Some(tn) = turn {
            here = Pose::at(here.cell(), here.alpha + tn.steps());
        }
        let landmark = state
            .view_from(here)
            .landmarks()
            .filter(|(c, _)| hex_distance(*c, t) <= ANCHOR_RADIUS)
            .min_by_key(|(c, _)| (hex_distance(*c, t), *c))
            .map(|(_, l)| l);
        steps.push(Step {
            turn,
            card,
            landmark,
        });
        here = state.arrival(here, t).unwrap_or(here);
    }
    steps
}

fn render(steps: &[Step], styles: &[Style], level: Level) -> Vec<&'static str> {
    let compact = level == Level::Compact;
    let mut out: Vec<&'static str> = Vec::new();
    for (i, (step, style)) in steps.iter().zip(styles).enumerate() {
        if i > 0 {
            out.extend_from_slice(if compact { SEPS[2] } else { SEPS[style.sep] });
        }
        if let Some(t) = step.turn {
            out.extend(["turn", turn_word(t)]);
            if compact || style.turn_joined {
                out.push("and");
            } else {
                out.extend_from_slice(SEPS[style.sep]);
            }
        }
        out.extend_from_slice(if compact { VERBS[0] } else { VERBS[style.verb] });
        if style.the && !compact {
            out.push("the");
        }
        let c = step.card;
        let plural = c.count > 1;
        let form = if compact { 0 } else { style.word_number };
        if style.with_form && !compact {
            out.extend(["card", "with"]);
        }
        out.extend([
            number(c.count, form),
            color_word(c.color),
            shape_word(c.shape, plural),
        ]);
        if !plural && style.card_suffix && !style.with_form && !compact {
            out.push("card");
        }
        if let (Some(l), true, Level::Free) = (step.landmark, style.anchor, level) {
            out.extend_from_slice(if style.anchor_form < 2 {
                &["near"]
            } else {
                &["next", "to"]
            });
            out.push("the");
            match style.anchor_form {
                0 | 2 => out.extend([landmark_color_word(l.color), kind_word(l.kind)]),
                1 => out.extend([landmark_color_word(l.color), "landmark"]),
                _ => out.push(kind_word(l.kind)),
            }
        }
    }
    out
}

/// Writes an instruction for `plan`, which must start at the follower's pose
/// in `state`.
///
/// Before each card that is not in view from the imagined pose, a turn
/// clause (left, then right, then around) brings it into view. `style_seed`
/// only changes the wording; if a wording would exceed
/// [`MAX_INSTRUCTION_LEN`] tokens, anchors are dropped and then a compact
/// wording is used.
pub fn verbalize(state: &WorldState, plan: &Plan, style_seed: u64) -> Instruction {
    let mut rng = seed::rng(style_seed);
    if plan.target_cards.is_empty() {
        return Instruction::new(WAITS.choose(&mut rng).expect("non-empty").iter().copied());
    }
    let steps = plan_steps(state, plan);
    let styles: Vec<Style> = steps
        .iter()
        .map(|_| Style {
            verb: rng.random_range(0..VERBS.len()),
            the: rng.random_bool(0.7),
            with_form: rng.random_bool(0.25),
            word_number: rng.random_range(0..3),
            card_suffix: rng.random_bool(0.4),
            anchor: rng.random_bool(0.5),
            anchor_form: rng.random_range(0..4),
            turn_joined: rng.random_bool(0.6),
            sep: rng.random_range(0..SEPS.len()),
        })
        .collect();
    let mut tokens = Vec::new();
    for level in [Level::Free, Level::NoAnchors, Level::Compact] {
        tokens = render(&steps, &styles, level);
        if tokens.len() < MAX_INSTRUCTION_LEN {
            break;
        }
    }
    Instruction::new(tokens)
}
