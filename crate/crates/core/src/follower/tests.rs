use std::collections::{BTreeSet, HashSet};

use proptest::prelude::*;

use super::*;
use crate::hexworld::WorldConfig;
use crate::planner::{make_plan, Plan};
use crate::synthlang::verbalize;

fn episode(seed: u64) -> Option<(WorldState, Plan)> {
    let w = WorldState::new(seed, &WorldConfig::default()).ok()?;
    let o = make_plan(&w).ok()?;
    Some((o.follower_state, o.plan))
}

/// Start-state card cells entered an odd number of times.
fn toggled(start: &WorldState, exec: &Execution) -> BTreeSet<Cell> {
    let cards: HashSet<Cell> = start.cards.iter().map(|c| c.cell).collect();
    let mut out = BTreeSet::new();
    for pair in exec.poses.windows(2) {
        let c = pair[1].cell();
        if c != pair[0].cell() && cards.contains(&c) && !out.remove(&c) {
            out.insert(c);
        }
    }
    out
}

#[test]
fn noiseless_follower_completes_verbalized_plans() {
    let mut n = 0;
    let mut seed = 0;
    while n < 200 {
        seed += 1;
        let Some((state, plan)) = episode(seed) else {
            continue;
        };
        let x = verbalize(&state, &plan, seed);
        let run = execute(&state, &x, &CompetenceProfile::NOISELESS, seed);
        assert_eq!(
            toggled(&state, &run.execution),
            plan.target_set(),
            "seed {seed}: {x}"
        );
        assert_eq!(
            run.feedback,
            Feedback {
                perceived_correct: true,
                grammatical: true
            }
        );
        assert!(!run.terminated && !run.out_of_moves);
        if plan.target_cards.is_empty() {
            assert_eq!(run.execution.poses, vec![plan.start]);
        }
        n += 1;
    }
}

#[test]
fn ungrammatical_instruction_terminates() {
    let (state, _) = episode(3).unwrap();
    let x = Instruction::from_text("red red get");
    let run = execute(&state, &x, &CompetenceProfile::NOISELESS, 1);
    assert!(run.terminated);
    assert_eq!(run.failure, Some(FailureReason::Ungrammatical));
    assert_eq!(
        run.feedback,
        Feedback {
            perceived_correct: false,
            grammatical: false
        }
    );
    assert_eq!(run.execution.poses, vec![state.follower]);
}

#[test]
fn exploring_follower_turns_before_giving_up() {
    let (state, _) = episode(5).unwrap();
    let profile = CompetenceProfile {
        give_up: 0.0,
        ..CompetenceProfile::NOISELESS
    };
    let absent = crate::hexworld::CardProps::new(1, CardColor::Red, Shape::Plus);
    let x = if state.cards.iter().any(|c| c.props.same_kind(&absent)) {
        Instruction::from_text("get 2 red pluses")
    } else {
        Instruction::from_text("get 1 red plus")
    };
    let run = execute(&state, &x, &profile, 2);
    if run.terminated {
        assert_eq!(
            run.execution.actions,
            vec![Action::TurnRight; EXPLORE_TURNS]
        );
        assert_eq!(run.failure, Some(FailureReason::UnresolvableReferent));
    }
    let quitter = execute(&state, &x, &CompetenceProfile::NOISELESS, 2);
    if quitter.terminated {
        assert!(quitter.execution.actions.is_empty());
    }
}

/// Chi-square of action counts against a uniform choice among the legal
/// actions at each step.
#[test]
fn full_move_noise_is_a_uniform_random_walk() {
    let profile = CompetenceProfile {
        move_noise: 1.0,
        ..CompetenceProfile::NOISELESS
    };
    let mut observed = [0f64; 4];
    let mut expected = [0f64; 4];
    let mut steps = 0;
    let mut seed = 0;
    while steps < 1000 {
        seed += 1;
        let Some((mut state, plan)) = episode(seed) else {
            continue;
        };
        if plan.target_cards.is_empty() {
            continue;
        }
        state.moves_left = 300;
        let x = verbalize(&state, &plan, seed);
        let run = execute(&state, &x, &profile, seed);
        let mut s = state.clone();
        for a in &run.execution.actions {
            let legal: Vec<Action> = Action::ALL
                .into_iter()
                .filter(|b| s.check_action(Agent::Follower, *b).is_ok())
                .collect();
            for b in &legal {
                expected[*b as usize] += 1.0 / legal.len() as f64;
            }
            observed[*a as usize] += 1.0;
            s.step(Agent::Follower, *a).unwrap();
            steps += 1;
        }
    }
    let chi2: f64 = (0..4)
        .map(|i| (observed[i] - expected[i]).powi(2) / expected[i])
        .sum();
    // df = 3, p = 0.001
    assert!(
        chi2 < 16.27,
        "chi2 = {chi2}, observed {observed:?}, expected {expected:?}"
    );
}

#[test]
fn feedback_noise_flips_answers() {
    let profile = CompetenceProfile {
        feedback_noise: 1.0,
        ..CompetenceProfile::NOISELESS
    };
    let (state, plan) = episode(8).unwrap();
    let run = execute(&state, &verbalize(&state, &plan, 0), &profile, 0);
    assert_eq!(
        run.feedback,
        Feedback {
            perceived_correct: false,
            grammatical: false
        }
    );
}

#[test]
fn presets_are_probabilities() {
    for name in ["expert", "typical", "noisy", "noiseless"] {
        CompetenceProfile::preset(name).unwrap().validate().unwrap();
    }
    assert!(CompetenceProfile::preset("oracle").is_none());
    let bad = CompetenceProfile {
        give_up: 1.5,
        ..CompetenceProfile::expert()
    };
    assert_eq!(
        bad.validate(),
        Err(ProfileError {
            field: "give_up",
            value: 1.5
        })
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn executions_are_legal_and_deterministic(seed in 0u64..5000, style in 0u64..100, preset in 0usize..3) {
        let profile = [CompetenceProfile::expert(), CompetenceProfile::typical(), CompetenceProfile::noisy()][preset];
        if let Some((state, plan)) = episode(seed) {
            let x = verbalize(&state, &plan, style);
            let run = execute(&state, &x, &profile, seed ^ style);
            prop_assert_eq!(&run, &execute(&state, &x, &profile, seed ^ style));
            let mut s = state.clone();
            prop_assert_eq!(run.execution.poses[0], state.follower);
            for (a, p) in run.execution.actions.iter().zip(&run.execution.poses[1..]) {
                s.step(Agent::Follower, *a).unwrap();
                prop_assert_eq!(s.follower, *p);
            }
            prop_assert!(run.execution.actions.len() as u32 <= state.moves_left);
        }
    }
}
