use super::*;
use crate::diffkit::{Matrix, ParamStore};
use crate::follower::Feedback;
use crate::genmodel::{BehaviorProb, SampledInstruction};
use crate::hexworld::{Action, Agent, Pose, WorldConfig};
use crate::orchestrator::Timing;
use crate::planner::{make_plan, toggle_path};
use crate::synthlang::{verbalize, Vocabulary};

fn episodes(n: usize, min_cards: usize) -> Vec<(WorldState, Plan)> {
    (1..)
        .filter_map(|s| {
            let w = WorldState::new(s, &WorldConfig::default()).ok()?;
            let o = make_plan(&w).ok()?;
            (o.plan.num_cards() >= min_cards).then_some((o.follower_state, o.plan))
        })
        .take(n)
        .collect()
}

fn exec_of(poses: Vec<Pose>) -> Execution {
    let actions = crate::planner::actions_along(&poses).unwrap();
    Execution { poses, actions }
}

fn record(
    state: &WorldState,
    plan: &Plan,
    exec: Execution,
    feedback: Feedback,
) -> InteractionRecord {
    let x = verbalize(state, plan, 0);
    InteractionRecord {
        id: RecordId {
            round: 2,
            interaction: 7,
            index: 0,
        },
        world_seed: 1,
        start_state: state.clone(),
        plan: plan.clone(),
        leader_actions: vec![],
        sample: SampledInstruction {
            ids: vec![],
            tokens: x,
            logprob_model: -3.0,
            logprob_tempered: -2.0,
            logprob_behavior: -3.0,
            model_index: 0,
            truncated: false,
        },
        execution: exec,
        feedback,
        terminated: false,
        failure: None,
        score_after: 0,
        timing: Timing::default(),
    }
}

/// A plan with two cards and an execution that visits them in the other order.
fn two_card_case() -> (WorldState, Plan, Execution) {
    for (state, plan) in episodes(50, 2) {
        let mut rev = plan.target_cards.clone();
        rev.reverse();
        if let Ok(poses) = toggle_path(&state, state.follower, &rev) {
            if poses != plan.poses && poses.len() <= state.moves_left as usize + 1 {
                return (state, plan, exec_of(poses));
            }
        }
    }
    panic!("no two-card episode found");
}

#[test]
fn plan_match_cases() {
    let (state, plan, other_route) = two_card_case();
    assert!(plan_match(&plan, &exec_of(plan.poses.clone()), &state));
    assert!(plan_match(&plan, &other_route, &state));
    let stay = exec_of(vec![plan.start]);
    assert!(!plan_match(&plan, &stay, &state));

    let still = Plan::hold_still(state.follower);
    let turned = exec_of(vec![state.follower, state.follower.turned_left()]);
    assert!(plan_match(&still, &turned, &state));
    let step = Action::ALL
        .into_iter()
        .find_map(|a| {
            state
                .check_action(Agent::Follower, a)
                .ok()
                .filter(|p| p.cell() != state.follower.cell())
        })
        .unwrap();
    assert!(!plan_match(
        &still,
        &exec_of(vec![state.follower, step]),
        &state
    ));
}

/// Expected labels for each (perceived_correct, grammatical, plan_match)
/// row, with `same_route` telling whether execution and plan coincide.
fn oracle(pc: bool, gr: bool, matched: bool, same_route: bool) -> Vec<(Label, bool)> {
    if !pc || !gr {
        vec![(Label::Negative, false)]
    } else if matched && !same_route {
        vec![(Label::Positive, true), (Label::Positive, false)]
    } else {
        vec![(Label::Positive, true)]
    }
}

#[test]
fn heuristics_truth_table() {
    let (state, plan, other_route) = two_card_case();
    let miss = exec_of(vec![plan.start]);
    for pc in [false, true] {
        for gr in [false, true] {
            for (exec, matched, same) in [
                (miss.clone(), false, false),
                (other_route.clone(), true, false),
                (exec_of(plan.poses.clone()), true, true),
            ] {
                let rec = record(
                    &state,
                    &plan,
                    exec.clone(),
                    Feedback {
                        perceived_correct: pc,
                        grammatical: gr,
                    },
                );
                assert_eq!(plan_match(&rec.plan, &rec.execution, &state), matched);
                let got = construct_examples(&rec);
                let labels: Vec<(Label, bool)> =
                    got.iter().map(|e| (e.label, e.from_execution)).collect();
                assert_eq!(
                    labels,
                    oracle(pc, gr, matched, same),
                    "pc={pc} gr={gr} matched={matched}"
                );
                for e in &got {
                    assert_eq!(e.behavior_logprob, -3.0);
                    assert_eq!(e.provenance.round, 2);
                    assert_eq!(e.instruction, rec.sample.tokens);
                    if e.from_execution {
                        assert_eq!(e.rho.poses, exec.poses);
                        assert_eq!(e.rho.target_set(), toggled_cards(&state, &exec));
                    } else {
                        assert_eq!(e.rho, plan);
                    }
                    assert!(!(e.label == Label::Negative && e.from_execution));
                }
            }
        }
    }
}

#[test]
fn variant_filters() {
    let (state, plan, other_route) = two_card_case();
    let miss = exec_of(vec![plan.start]);
    for pc in [false, true] {
        for gr in [false, true] {
            let f = Feedback {
                perceived_correct: pc,
                grammatical: gr,
            };
            for exec in [miss.clone(), other_route.clone()] {
                let rec = record(&state, &plan, exec.clone(), f);
                let pos = variant_examples(&rec, Variant::PosOnly);
                assert!(pos.iter().all(|e| e.label == Label::Positive));
                let matched = plan_match(&plan, &exec, &state);
                let tc = variant_examples(&rec, Variant::TcOnly);
                let blind = record(
                    &state,
                    &plan,
                    exec,
                    Feedback {
                        perceived_correct: true,
                        grammatical: true,
                    },
                );
                assert_eq!(tc, variant_examples(&blind, Variant::TcOnly));
                assert!(tc.iter().all(|e| (e.label == Label::Positive) == matched));
                assert_eq!(
                    variant_examples(&rec, Variant::Full),
                    construct_examples(&rec)
                );
                assert_eq!(
                    variant_examples(&rec, Variant::FineTune),
                    construct_examples(&rec)
                );
            }
        }
    }
    assert_eq!("pos-only".parse::<Variant>().unwrap(), Variant::PosOnly);
    assert!("everything".parse::<Variant>().is_err());
}

fn tiny_config(max_len: usize, vocab: Vec<String>) -> ModelConfig {
    ModelConfig {
        prop_dim: 3,
        cell_dim: 3,
        orient_dim: 2,
        width: 4,
        heads: 2,
        ffn: 4,
        max_len,
        vocab,
        ..ModelConfig::default()
    }
}

fn positive(state: &WorldState, plan: &Plan, style: u64) -> Example {
    Example {
        provenance: RecordId {
            round: 0,
            interaction: style as u32,
            index: 0,
        },
        state: state.clone(),
        rho: plan.clone(),
        instruction: verbalize(state, plan, style),
        label: Label::Positive,
        behavior_logprob: 0.0,
        from_execution: false,
    }
}

#[test]
fn supervised_loss_basics() {
    let eps = episodes(3, 1);
    let model = Model::new(ModelConfig::default(), 1).unwrap();
    let data: Vec<Example> = eps.iter().map(|(s, p)| positive(s, p, 1)).collect();
    let loss = supervised_loss(&model, &data).unwrap();
    assert!(loss >= 0.0);
    let one = supervised_loss(&model, &data[..1]).unwrap();
    let lp = model
        .sequence_logprob(&data[0].state, &data[0].rho, &data[0].instruction)
        .unwrap();
    assert!((one + lp).abs() < 1e-12);
    let mut neg = data.clone();
    neg[1].label = Label::Negative;
    assert!(matches!(
        supervised_loss(&model, &neg),
        Err(BanditError::NegativeLabel(_))
    ));
    assert!(matches!(
        supervised_loss(&model, &[]),
        Err(BanditError::Empty)
    ));

    // A model that always stops immediately is certain about the empty instruction.
    let vocab = ["<bos>", "<eos>", "a", "b"].map(String::from).to_vec();
    let mut sure = Model::new(tiny_config(1, vocab), 2).unwrap();
    let b = sure.params.id("out_b").unwrap();
    sure.params.get_mut(b).data[Vocabulary::EOS_ID as usize] = 60.0;
    let mut empty = data[0].clone();
    empty.instruction = Instruction::default();
    assert!(supervised_loss(&sure, &[empty]).unwrap() < 1e-20);
}

#[test]
fn ips_weight_cases() {
    let (state, plan) = episodes(1, 1).pop().unwrap();
    let model = Model::new(ModelConfig::default(), 3).unwrap();
    let mut ex = positive(&state, &plan, 0);
    assert_eq!(ips_weight(&model, &ex, None).unwrap(), 1.0);
    ex.label = Label::Negative;
    let lp = model
        .sequence_logprob(&state, &plan, &ex.instruction)
        .unwrap();
    ex.behavior_logprob = lp;
    assert!((ips_weight(&model, &ex, None).unwrap() - 1.0).abs() < 1e-12);
    ex.behavior_logprob = lp + 2f64.ln();
    assert!((ips_weight(&model, &ex, None).unwrap() - 0.5).abs() < 1e-12);
    ex.behavior_logprob = lp - 10.0;
    assert!((ips_weight(&model, &ex, Some(3.0)).unwrap() - 3.0).abs() < 1e-12);
}

fn grad_norm(g: &Grads) -> f64 {
    g.global_norm()
}

#[test]
fn positive_gradient_is_the_supervised_gradient() {
    let eps = episodes(4, 0);
    let model = Model::new(tiny_config(25, Vocabulary::standard().tokens), 4).unwrap();
    let data: Vec<Example> = eps.iter().map(|(s, p)| positive(s, p, 2)).collect();
    let ascent = bandit_grad(&model, &data, &Objective::default()).unwrap();
    let mut g = Graph::new(&model.params);
    let mut total = None;
    for ex in &data {
        let set = model.encode_in(&mut g, &ex.state, &ex.rho).unwrap();
        let nll = model.nll_in(
            &mut g,
            set,
            &model.target_ids(&ex.instruction).unwrap(),
            1.0 / data.len() as f64,
        );
        total = Some(match total {
            None => nll,
            Some(t) => g.add(t, nll),
        });
    }
    let sup = g.backward(total.unwrap()).unwrap();
    for id in model.params.ids() {
        for (a, b) in ascent.get(id).data.iter().zip(&sup.get(id).data) {
            assert!((a + b).abs() < 1e-12);
        }
    }
}

/// Frozen-weight objective `ℓ₀·y·log P(θ)` against central differences.
pub(crate) fn negative_fd_error(model: &Model, ex: &Example) -> f64 {
    let w0 = ips_weight(model, ex, None).unwrap();
    let ascent = bandit_grad(model, std::slice::from_ref(ex), &Objective::default()).unwrap();
    let f = |store: &ParamStore| {
        let mut g = Graph::new(store);
        let set = model.encode_in(&mut g, &ex.state, &ex.rho).unwrap();
        let nll = model.nll_in(
            &mut g,
            set,
            &model.target_ids(&ex.instruction).unwrap(),
            1.0,
        );
        -w0 * ex.label.sign() * g.value(nll).data[0]
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for id in model.params.ids() {
        for k in 0..model.params.get(id).data.len() {
            let mut plus = model.params.clone();
            plus.get_mut(id).data[k] += h;
            let mut minus = model.params.clone();
            minus.get_mut(id).data[k] -= h;
            let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
            let a = ascent.get(id).data[k];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
    }
    worst
}

#[test]
fn negative_gradient_passes_finite_differences() {
    let (state, plan) = episodes(1, 1).pop().unwrap();
    let mut model = Model::new(tiny_config(25, Vocabulary::standard().tokens), 5).unwrap();
    let w = model.params.id("out_w").unwrap();
    *model.params.get_mut(w) = Matrix::uniform(4, 66, 1.0, &mut seed::rng(5));
    let mut ex = positive(&state, &plan, 3);
    ex.label = Label::Negative;
    ex.behavior_logprob = model
        .sequence_logprob(&state, &plan, &ex.instruction)
        .unwrap()
        + 0.7;
    let err = negative_fd_error(&model, &ex);
    assert!(err < 1e-3, "{err}");
}

#[test]
fn negative_term_shrinks_with_its_probability() {
    let (state, plan) = episodes(1, 1).pop().unwrap();
    let mut model = Model::new(ModelConfig::default(), 6).unwrap();
    let mut ex = positive(&state, &plan, 4);
    ex.label = Label::Negative;
    let lp0 = model
        .sequence_logprob(&state, &plan, &ex.instruction)
        .unwrap();
    ex.behavior_logprob = lp0;
    let before =
        grad_norm(&bandit_grad(&model, std::slice::from_ref(&ex), &Objective::default()).unwrap());
    // Lower the first token's logit until the sequence is ten times less likely.
    let first = model.vocab().id(&ex.instruction.tokens[0]) as usize;
    let b = model.params.id("out_b").unwrap();
    let (mut lo, mut hi) = (0.0, 50.0);
    for _ in 0..100 {
        let mid = (lo + hi) / 2.0;
        let mut m = model.clone();
        m.params.get_mut(b).data[first] -= mid;
        let lp = m.sequence_logprob(&state, &plan, &ex.instruction).unwrap();
        if lp0 - lp < 10f64.ln() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    model.params.get_mut(b).data[first] -= hi;
    let lp1 = model
        .sequence_logprob(&state, &plan, &ex.instruction)
        .unwrap();
    assert!((lp0 - lp1 - 10f64.ln()).abs() < 1e-6);
    let after =
        grad_norm(&bandit_grad(&model, std::slice::from_ref(&ex), &Objective::default()).unwrap());
    let ratio = before / after;
    assert!((5.0..20.0).contains(&ratio), "norm ratio {ratio}");
}

/// Training against negatives alone: without the weight the objective keeps
/// rewarding lower probabilities; with it the term stays put.
pub(crate) fn negative_growth(ips: bool, steps: usize) -> (f64, f64) {
    let eps = episodes(6, 1);
    let config = ModelConfig::default();
    let model0 = Model::new(config, 7).unwrap();
    let mut data = Vec::new();
    for (i, (s, p)) in eps.iter().enumerate() {
        let mut ex = positive(s, p, i as u64);
        if i % 2 == 0 {
            ex.label = Label::Negative;
            ex.behavior_logprob = model0.sequence_logprob(s, p, &ex.instruction).unwrap();
        }
        data.push(ex);
    }
    let obj = Objective {
        ips,
        ips_clip: None,
    };
    let mut model = model0.clone();
    let initial = negative_term(
        &model,
        &data,
        &Objective {
            ips: false,
            ips_clip: None,
        },
    )
    .unwrap();
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: 0.01,
            ..AdamWConfig::default()
        },
        &model.params,
    );
    let batch: Vec<&Example> = data.iter().collect();
    let mut worst: f64 = initial;
    for _ in 0..steps {
        let out = batch_gradient(&model, &batch, &obj).unwrap();
        opt.step(&mut model.params, &out.grads).unwrap();
        worst = worst.max(negative_term(&model, &data, &obj).unwrap());
    }
    (initial, worst)
}

#[test]
fn unweighted_negatives_grow_without_bound() {
    let (init, worst) = negative_growth(false, 200);
    assert!(worst > 10.0 * init, "{init} -> {worst}");
    let (init, worst) = negative_growth(true, 200);
    assert!(worst <= 2.0 * init, "{init} -> {worst}");
}

#[test]
fn retraining_is_deterministic_per_seed() {
    let eps = episodes(40, 0);
    let d0 = RoundDataset {
        round: 0,
        examples: eps.iter().map(|(s, p)| positive(s, p, 0)).collect(),
    };
    let config = tiny_config(25, Vocabulary::standard().tokens);
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let (a, _) = train_round(
        TrainMode::Retrain,
        std::slice::from_ref(&d0),
        &[],
        &config,
        &cfg,
        &[1, 2],
    )
    .unwrap();
    let (b, stats) = train_round(
        TrainMode::Retrain,
        std::slice::from_ref(&d0),
        &[],
        &config,
        &cfg,
        &[1, 2],
    )
    .unwrap();
    assert_eq!(a.len(), 2);
    assert_eq!(stats[0].steps, 10);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.params, y.params);
    }
    assert_ne!(a[0].params, a[1].params);

    let d1 = RoundDataset {
        round: 1,
        examples: d0.examples[..10].to_vec(),
    };
    let (c, _) = train_round(
        TrainMode::FinetuneRehearsal,
        &[d0.clone(), d1.clone()],
        &a,
        &config,
        &cfg,
        &[3, 4],
    )
    .unwrap();
    let (d, _) = train_round(
        TrainMode::FinetuneRehearsal,
        &[d0, d1],
        &a,
        &config,
        &cfg,
        &[3, 4],
    )
    .unwrap();
    assert_eq!(c[0].params, d[0].params);
    assert_ne!(c[0].params, a[0].params);
}

#[test]
fn rehearsal_batches_are_half_historical() {
    let mut old = 0usize;
    let mut total = 0usize;
    let mut seed = 0;
    let mut batches = 0;
    while batches < 1000 {
        for b in rehearsal_batches(100, 500, 32, seed) {
            old += b.iter().filter(|p| matches!(p, Pick::Old(_))).count();
            total += b.len();
            batches += 1;
        }
        seed += 1;
    }
    let frac = old as f64 / total as f64;
    assert!((frac - 0.5).abs() < 0.01, "{frac}");
    let covered: BTreeSet<usize> = rehearsal_batches(100, 500, 32, 9)
        .iter()
        .flatten()
        .filter_map(|p| match p {
            Pick::New(i) => Some(*i),
            Pick::Old(_) => None,
        })
        .collect();
    assert_eq!(covered.len(), 100);
}

#[test]
fn datasets_round_trip_through_jsonl() {
    let eps = episodes(3, 0);
    let mut examples: Vec<Example> = eps.iter().map(|(s, p)| positive(s, p, 5)).collect();
    examples[1].label = Label::Negative;
    examples[1].behavior_logprob = -4.25;
    let d = RoundDataset { round: 3, examples };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dataset.jsonl");
    d.save_jsonl(&path).unwrap();
    assert_eq!(RoundDataset::load_jsonl(3, &path).unwrap(), d);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(1).unwrap().contains("\"label\":-1"));
}

#[test]
fn sampled_examples_carry_their_behavior_probability() {
    let (state, plan) = episodes(1, 1).pop().unwrap();
    let model = Model::new(ModelConfig::default(), 8).unwrap();
    let set = model.encode(&state, &plan).unwrap();
    let s = model.sample(&set, 0.5, 1, BehaviorProb::Untempered);
    let mut rec = record(
        &state,
        &plan,
        exec_of(vec![plan.start]),
        Feedback {
            perceived_correct: false,
            grammatical: true,
        },
    );
    rec.sample = s.clone();
    let ex = construct_examples(&rec).pop().unwrap();
    assert_eq!(ex.behavior_logprob, s.logprob_model);
    assert!((ips_weight(&model, &ex, None).unwrap() - 1.0).abs() < 1e-9);
}
