use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::grammar::Symbol;
use super::*;
use crate::hexworld::{Card, CardColor, CardProps, Shape, WorldConfig};
use crate::planner::{make_plan, toggle_path, Plan};
use crate::seed;

/// Membership by CYK over a binarized, ε-free copy of the grammar, closing
/// each chart cell under unit rules.
struct Cyk {
    binary: Vec<(usize, usize, usize)>,
    unit: Vec<(usize, usize)>,
    lexical: HashMap<String, Vec<usize>>,
    start: usize,
    start_nullable: bool,
}

impl Cyk {
    fn new(g: &Grammar) -> Self {
        let mut names = g.nonterminals.len();
        let mut fresh = || {
            names += 1;
            names - 1
        };
        // terminals become their own nonterminals
        let term_nt: Vec<usize> = (0..g.terminals.len()).map(|_| fresh()).collect();
        let sym = |s: &Symbol| match s {
            Symbol::T(t) => term_nt[*t],
            Symbol::N(n) => *n,
        };
        let mut rules: Vec<(usize, Vec<usize>)> = Vec::new();
        for (lhs, rhs) in &g.rules {
            let mut rhs: Vec<usize> = rhs.iter().map(sym).collect();
            let mut lhs = *lhs;
            while rhs.len() > 2 {
                let head = rhs.remove(0);
                let rest = fresh();
                rules.push((lhs, vec![head, rest]));
                lhs = rest;
            }
            rules.push((lhs, rhs));
        }
        let mut nullable = HashSet::new();
        loop {
            let before = nullable.len();
            for (lhs, rhs) in &rules {
                if rhs.iter().all(|s| nullable.contains(s)) {
                    nullable.insert(*lhs);
                }
            }
            if nullable.len() == before {
                break;
            }
        }
        let mut binary = Vec::new();
        let mut unit = HashSet::new();
        for (lhs, rhs) in &rules {
            match rhs.as_slice() {
                [] => {}
                [a] => {
                    unit.insert((*lhs, *a));
                }
                [a, b] => {
                    binary.push((*lhs, *a, *b));
                    if nullable.contains(a) {
                        unit.insert((*lhs, *b));
                    }
                    if nullable.contains(b) {
                        unit.insert((*lhs, *a));
                    }
                }
                _ => unreachable!(),
            }
        }
        let mut lexical: HashMap<String, Vec<usize>> = HashMap::new();
        for (t, name) in g.terminals.iter().enumerate() {
            lexical.entry(name.clone()).or_default().push(term_nt[t]);
        }
        Self {
            binary,
            unit: unit.into_iter().collect(),
            lexical,
            start: g.start,
            start_nullable: nullable.contains(&g.start),
        }
    }

    fn close(&self, set: &mut HashSet<usize>) {
        loop {
            let before = set.len();
            for (a, b) in &self.unit {
                if set.contains(b) {
                    set.insert(*a);
                }
            }
            if set.len() == before {
                return;
            }
        }
    }

    fn accepts(&self, toks: &[&str]) -> bool {
        let n = toks.len();
        if n == 0 {
            return self.start_nullable;
        }
        let mut chart = vec![vec![HashSet::new(); n + 1]; n];
        for (i, t) in toks.iter().enumerate() {
            let Some(nts) = self.lexical.get(*t) else {
                return false;
            };
            chart[i][i + 1].extend(nts.iter().copied());
            self.close(&mut chart[i][i + 1]);
        }
        for len in 2..=n {
            for i in 0..=n - len {
                let j = i + len;
                let mut set = HashSet::new();
                for k in i + 1..j {
                    for (a, b, c) in &self.binary {
                        if chart[i][k].contains(b) && chart[k][j].contains(c) {
                            set.insert(*a);
                        }
                    }
                }
                self.close(&mut set);
                chart[i][j] = set;
            }
        }
        chart[0][n].contains(&self.start)
    }
}

/// Random sentence by expanding rules, preferring short rules when deep.
fn sample_sentence(g: &Grammar, rng: &mut ChaCha8Rng) -> Vec<String> {
    fn expand(g: &Grammar, nt: usize, depth: usize, rng: &mut ChaCha8Rng, out: &mut Vec<String>) {
        let rules: Vec<&Vec<Symbol>> = g
            .rules
            .iter()
            .filter(|(l, _)| *l == nt)
            .map(|(_, r)| r)
            .collect();
        let rhs = if depth > 6 {
            rules.iter().min_by_key(|r| r.len()).unwrap()
        } else {
            rules.choose(rng).unwrap()
        };
        for s in rhs.iter() {
            match s {
                Symbol::T(t) => out.push(g.terminals[*t].clone()),
                Symbol::N(n) => expand(g, *n, depth + 1, rng, out),
            }
        }
    }
    let mut out = Vec::new();
    expand(g, g.start, 0, rng, &mut out);
    out
}

fn mutate(toks: &[String], vocab: &[String], rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut t = toks.to_vec();
    match rng.random_range(0..4) {
        0 if !t.is_empty() => {
            let i = rng.random_range(0..t.len());
            t.remove(i);
        }
        1 => {
            let i = rng.random_range(0..=t.len());
            t.insert(i, vocab.choose(rng).unwrap().clone());
        }
        2 if t.len() > 1 => {
            let i = rng.random_range(0..t.len() - 1);
            t.swap(i, i + 1);
        }
        _ if !t.is_empty() => {
            let i = rng.random_range(0..t.len());
            t[i] = vocab.choose(rng).unwrap().clone();
        }
        _ => {}
    }
    t
}

fn agree(cyk: &Cyk, toks: &[String]) -> bool {
    let strs: Vec<&str> = toks.iter().map(String::as_str).collect();
    let x = Instruction::new(toks.iter().cloned());
    let ours = grammar_check(&x);
    assert_eq!(ours, cyk.accepts(&strs), "disagree on {:?}", x.text());
    assert_eq!(
        ours,
        read_clauses(&strs).is_some(),
        "reader disagrees on {:?}",
        x.text()
    );
    ours
}

#[test]
fn grammar_matches_cyk_oracle() {
    let g = grammar();
    let cyk = Cyk::new(g);
    let vocab = g.terminals.clone();
    let mut rng = seed::rng(5);
    let mut accepted = 0;
    for _ in 0..1000 {
        let n = rng.random_range(0..10);
        let soup: Vec<String> = (0..n)
            .map(|_| vocab.choose(&mut rng).unwrap().clone())
            .collect();
        agree(&cyk, &soup);
        let s = sample_sentence(g, &mut rng);
        assert!(agree(&cyk, &s), "sampled sentence rejected: {s:?}");
        accepted += agree(&cyk, &mutate(&s, &vocab, &mut rng)) as usize;
    }
    // mutations land on both sides of the boundary
    assert!(accepted >= 20 && accepted < 950, "{accepted}");
}

#[test]
fn token_soup_is_ungrammatical() {
    let vocab = Vocabulary::standard();
    let mut rng = seed::rng(9);
    let mut rejected = 0;
    for _ in 0..2000 {
        let n = rng.random_range(1..=24);
        let x = Instruction::new((0..n).map(|_| vocab.tokens.choose(&mut rng).unwrap().clone()));
        rejected += !grammar_check(&x) as usize;
    }
    assert!(rejected >= 1990, "{rejected}");
}

#[test]
fn simple_membership() {
    assert!(!grammar_check(&Instruction::default()));
    for ok in [
        "hold still",
        "get the 2 red hearts",
        "turn left and pick up one green plus card near the blue house",
        "turn around , then grab the card with three black diamonds",
        "take the red card then select the heart card next to the tent",
        "turn right and then walk to 1 orange triangle",
    ] {
        assert!(grammar_check(&Instruction::from_text(ok)), "{ok}");
    }
    for bad in [
        "get the 2 red heart",
        "get the one red hearts",
        "hold still then get 2 red hearts",
        "turn left and",
        "get the red",
        "get 2 red hearts near the",
        "get 2 red hearts near the blue",
    ] {
        assert!(!grammar_check(&Instruction::from_text(bad)), "{bad}");
    }
}

#[test]
fn reader_builds_clauses() {
    let x = [
        "turn", "left", "and", "get", "the", "card", "with", "2", "hearts", "by", "the", "lamp",
    ];
    let c = read_clauses(&x).unwrap();
    assert_eq!(
        c,
        vec![
            Clause::Turn { turn: Turn::Left },
            Clause::Fetch {
                card: Descriptor {
                    count: Some(2),
                    color: None,
                    shape: Some(Shape::Heart)
                },
                anchor: Some(Anchor {
                    color: None,
                    kind: Some(crate::hexworld::LandmarkKind::Lamp)
                }),
            },
        ]
    );
    let y = ["turn", "left", "and", "then", "grab", "red", "card"];
    assert_eq!(read_clauses(&y).unwrap().len(), 2);
}

#[test]
fn grammar_file_declares_a_version() {
    assert_eq!(grammar().version, 1);
}

#[test]
fn vocabulary_size_and_codec() {
    let v = Vocabulary::standard();
    assert!((60..=150).contains(&v.len()), "{}", v.len());
    let x = Instruction::from_text("get the 2 red hearts");
    let ids = v.encode(&x);
    assert_eq!(*ids.last().unwrap(), Vocabulary::EOS_ID);
    assert_eq!(v.decode(&ids), x);
    assert_eq!(v.id("zebra"), Vocabulary::UNK_ID);
    let json = serde_json::to_string(&v).unwrap();
    let mut back: Vocabulary = serde_json::from_str(&json).unwrap();
    back.reindex();
    assert_eq!(back, v);
}

fn sample_pairs(n: usize) -> Vec<(WorldState, Plan)> {
    let mut out = Vec::new();
    let mut s = 0;
    let mut rng = seed::rng(77);
    while out.len() < n {
        s += 1;
        let w = WorldState::new(s, &WorldConfig::default()).unwrap();
        let Ok(o) = make_plan(&w) else { continue };
        out.push((o.follower_state.clone(), o.plan));
        // plus a plan to a random subset of cards
        let st = o.follower_state;
        let k = rng.random_range(1..=3);
        let cells: Vec<_> = st
            .cards
            .choose_multiple(&mut rng, k)
            .map(|c| c.cell)
            .collect();
        if let Ok(poses) = toggle_path(&st, st.follower, &cells) {
            out.push((
                st.clone(),
                Plan {
                    start: st.follower,
                    poses,
                    target_cards: cells,
                },
            ));
        }
    }
    out.truncate(n);
    out
}

/// Walks each grounded fetch with a fresh shortest path and returns the
/// cells toggled an odd number of times.
fn execute_intent(state: &WorldState, intent: &ParsedIntent) -> BTreeSet<Cell> {
    let mut s = state.clone();
    let start_cards: HashSet<Cell> = s.cards.iter().map(|c| c.cell).collect();
    let mut toggled = BTreeSet::new();
    for c in &intent.clauses {
        match (c.clause, c.target) {
            (Clause::Turn { turn }, _) => {
                s.follower = Pose::at(s.follower.cell(), s.follower.alpha + turn.steps());
            }
            (Clause::Fetch { .. }, Some(t)) => {
                assert_eq!(s.follower, c.pose);
                let path = toggle_path(&s, s.follower, &[t]).unwrap();
                for p in &path[1..] {
                    if p.cell() != s.follower.cell() && start_cards.contains(&p.cell()) {
                        if !toggled.remove(&p.cell()) {
                            toggled.insert(p.cell());
                        }
                    }
                    s.follower = *p;
                }
            }
            _ => {}
        }
    }
    toggled
}

#[test]
fn verbalizer_round_trips() {
    let vocab = Vocabulary::standard();
    for (i, (state, plan)) in sample_pairs(500).iter().enumerate() {
        let x = verbalize(state, plan, i as u64);
        assert!(grammar_check(&x), "{x}");
        assert!(x.len() < MAX_INSTRUCTION_LEN, "too long: {x}");
        assert!(vocab.encode(&x).iter().all(|&t| t != Vocabulary::UNK_ID));
        let intent = parse(state, plan.start, &x).unwrap_or_else(|e| panic!("{x}: {e}"));
        assert_eq!(intent.targets(), plan.target_cards, "{x}");
        assert_eq!(execute_intent(state, &intent), plan.target_set(), "{x}");
    }
}

#[test]
fn style_seed_changes_wording_only() {
    let pairs = sample_pairs(40);
    let mut differs = 0;
    for (state, plan) in &pairs {
        let a = verbalize(state, plan, 1);
        let b = verbalize(state, plan, 2);
        differs += (a != b) as usize;
        let ta = parse(state, plan.start, &a).unwrap().targets();
        assert_eq!(ta, parse(state, plan.start, &b).unwrap().targets());
        assert_eq!(a, verbalize(state, plan, 1));
    }
    assert!(differs > 20);
}

#[test]
fn zero_and_one_card_plans() {
    let w = WorldState::new(4, &WorldConfig::default()).unwrap();
    let x = verbalize(&w, &Plan::hold_still(w.follower), 3);
    let waits = ["hold still", "wait here", "stay put", "do not move"];
    assert!(waits.contains(&x.text().as_str()), "{x}");
    let intent = parse(&w, w.follower, &x).unwrap();
    assert_eq!(intent.clauses.len(), 1);
    assert!(intent.targets().is_empty());

    let card = w.cards[0];
    let poses = toggle_path(&w, w.follower, &[card.cell]).unwrap();
    let plan = Plan {
        start: w.follower,
        poses,
        target_cards: vec![card.cell],
    };
    for style in 0..20 {
        let x = verbalize(&w, &plan, style);
        let t = &x.tokens;
        let plural = card.props.count > 1;
        assert!(
            t.iter().any(|s| s == syntax::color_word(card.props.color)),
            "{x}"
        );
        assert!(
            t.iter()
                .any(|s| s == syntax::shape_word(card.props.shape, plural)),
            "{x}"
        );
        let n = card.props.count;
        let number_words: &[&str] = match n {
            1 => &["1", "one", "single"],
            2 => &["2", "two"],
            _ => &["3", "three"],
        };
        assert!(t.iter().any(|s| number_words.contains(&s.as_str())), "{x}");
    }
}

fn board_with(cards: Vec<Card>) -> WorldState {
    let mut w = WorldState::new(2, &WorldConfig::default()).unwrap();
    w.cards = cards;
    w.cards.sort_by_key(|c| c.cell);
    w
}

#[test]
fn failure_reasons() {
    let w = WorldState::new(2, &WorldConfig::default()).unwrap();
    let absent = (1..=3)
        .flat_map(|n| CardColor::ALL.map(move |c| (n, c)))
        .flat_map(|(n, c)| Shape::ALL.map(move |s| CardProps::new(n, c, s)))
        .find(|p| !w.cards.iter().any(|c| c.props.same_kind(p)))
        .unwrap();
    let d = |p: CardProps| {
        let plural = p.count > 1;
        format!(
            "get {} {} {}",
            p.count,
            syntax::color_word(p.color),
            syntax::shape_word(p.shape, plural)
        )
    };
    let x = Instruction::from_text(&d(absent));
    let err = parse(&w, w.follower, &x).unwrap_err();
    assert_eq!(err.reason, FailureReason::UnresolvableReferent);

    let err = parse(&w, w.follower, &Instruction::from_text("get get")).unwrap_err();
    assert_eq!(err.reason, FailureReason::Ungrammatical);

    // an anchor no visible landmark can satisfy
    let visible = w.follower_view();
    let (cell, props) = visible.cards().next().expect("some card in view");
    let mut lone = board_with(vec![Card { cell, props }]);
    lone.landmarks.iter_mut().for_each(|l| *l = None);
    let x = Instruction::from_text(&format!("{} near the tent", d(props)));
    let err = parse(&lone, lone.follower, &x).unwrap_err();
    assert_eq!(
        err,
        ParseFailure {
            reason: FailureReason::Contradictory,
            clause: 0
        }
    );
}

#[test]
fn partial_descriptors_take_the_nearest_match() {
    let w = WorldState::new(12, &WorldConfig::default()).unwrap();
    let view = w.follower_view();
    let here = w.follower.cell();
    let reds: Vec<Cell> = view
        .cards()
        .filter(|(_, p)| p.color == CardColor::Red)
        .map(|(c, _)| c)
        .collect();
    let desc = Descriptor {
        color: Some(CardColor::Red),
        ..Descriptor::default()
    };
    match reds.iter().min_by_key(|c| (hex_distance(here, **c), **c)) {
        Some(best) => assert_eq!(resolve(&view, &desc, None), Ok(*best)),
        None => assert_eq!(
            resolve(&view, &desc, None),
            Err(FailureReason::UnresolvableReferent)
        ),
    }
}

#[test]
fn parse_is_deterministic() {
    for (i, (state, plan)) in sample_pairs(20).iter().enumerate() {
        let x = verbalize(state, plan, i as u64 + 100);
        assert_eq!(parse(state, plan.start, &x), parse(state, plan.start, &x));
    }
}

#[test]
fn instruction_serializes_as_text() {
    let x = Instruction::from_text("turn left and get 1 red plus");
    let json = serde_json::to_string(&x).unwrap();
    assert_eq!(json, "\"turn left and get 1 red plus\"");
    assert_eq!(serde_json::from_str::<Instruction>(&json).unwrap(), x);
}
