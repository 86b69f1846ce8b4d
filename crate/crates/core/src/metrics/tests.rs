use rand::Rng;

use super::*;
use crate::seed;

fn random_dist(rng: &mut impl Rng, max_support: usize, radius: i32) -> PathDistribution {
    let k = rng.random_range(1..=max_support);
    let mut cells = BTreeSet::new();
    while cells.len() < k {
        cells.insert(Cell::new(
            rng.random_range(0..radius),
            rng.random_range(0..radius),
        ));
    }
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    PathDistribution {
        support: cells.into_iter().collect(),
        weights: raw.iter().map(|w| w / total).collect(),
    }
}

/// Minimum cost over every basic feasible solution: each spanning tree of
/// the complete bipartite graph fixes a unique flow, obtained by peeling
/// leaves; the optimum sits at one of the feasible ones.
fn brute_force(a: &PathDistribution, b: &PathDistribution) -> f64 {
    let (n, m) = (a.weights.len(), b.weights.len());
    let edges: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    let need = n + m - 1;
    let mut best = f64::INFINITY;
    let mut chosen = Vec::new();
    fn find(parent: &mut Vec<usize>, x: usize) -> usize {
        if parent[x] != x {
            let r = find(parent, parent[x]);
            parent[x] = r;
        }
        parent[x]
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(
        start: usize,
        edges: &[(usize, usize)],
        need: usize,
        chosen: &mut Vec<(usize, usize)>,
        parent: Vec<usize>,
        n: usize,
        a: &PathDistribution,
        b: &PathDistribution,
        best: &mut f64,
    ) {
        if chosen.len() == need {
            if let Some(cost) = tree_cost(chosen, n, a, b) {
                *best = best.min(cost);
            }
            return;
        }
        if edges.len() - start < need - chosen.len() {
            return;
        }
        for k in start..edges.len() {
            let (i, j) = edges[k];
            let mut p = parent.clone();
            let (ri, rj) = (find(&mut p, i), find(&mut p, n + j));
            if ri == rj {
                continue;
            }
            p[ri] = rj;
            chosen.push((i, j));
            rec(k + 1, edges, need, chosen, p, n, a, b, best);
            chosen.pop();
        }
    }
    let parent: Vec<usize> = (0..n + m).collect();
    rec(0, &edges, need, &mut chosen, parent, n, a, b, &mut best);
    best
}

fn tree_cost(
    tree: &[(usize, usize)],
    n: usize,
    a: &PathDistribution,
    b: &PathDistribution,
) -> Option<f64> {
    let m = b.weights.len();
    let mut rest: Vec<f64> = a.weights.iter().chain(&b.weights).copied().collect();
    let mut alive: Vec<bool> = vec![true; tree.len()];
    let mut cost = 0.0;
    for _ in 0..tree.len() {
        let mut degree = vec![0; n + m];
        for (e, &(i, j)) in tree.iter().enumerate() {
            if alive[e] {
                degree[i] += 1;
                degree[n + j] += 1;
            }
        }
        let (e, leaf) = tree
            .iter()
            .enumerate()
            .filter(|(e, _)| alive[*e])
            .find_map(|(e, &(i, j))| {
                if degree[i] == 1 {
                    Some((e, i))
                } else if degree[n + j] == 1 {
                    Some((e, n + j))
                } else {
                    None
                }
            })?;
        let (i, j) = tree[e];
        let other = if leaf == i { n + j } else { i };
        let f = rest[leaf];
        if f < -1e-12 {
            return None;
        }
        rest[leaf] = 0.0;
        rest[other] -= f;
        cost += f * hex_distance(a.support[i], b.support[j]) as f64;
        alive[e] = false;
    }
    rest.iter().all(|r| r.abs() < 1e-9).then_some(cost)
}

#[test]
fn emd_matches_basis_enumeration_on_small_supports() {
    let mut rng = seed::rng(1);
    for _ in 0..300 {
        let a = random_dist(&mut rng, 5, 6);
        let b = random_dist(&mut rng, 5, 6);
        let fast = emd(&a, &b);
        let slow = brute_force(&a, &b);
        assert!((fast - slow).abs() < 1e-6, "{fast} vs {slow}\n{a:?}\n{b:?}");
    }
}

#[test]
fn emd_simple_cases() {
    let a = path_to_distribution(&[Pose::new(2, 2, 0)]);
    let b = path_to_distribution(&[Pose::new(5, 1, 3)]);
    assert_eq!(
        emd(&a, &b),
        hex_distance(Cell::new(2, 2), Cell::new(5, 1)) as f64
    );
    assert_eq!(emd(&a, &a), 0.0);
    let p = [
        Pose::new(1, 1, 0),
        Pose::new(1, 2, 0),
        Pose::new(1, 2, 1),
        Pose::new(2, 2, 1),
    ];
    let d = path_to_distribution(&p);
    assert_eq!(d.weights, vec![0.25, 0.5, 0.25]);
    assert_eq!(emd(&d, &d), 0.0);
}

fn random_path(rng: &mut impl Rng) -> Vec<Pose> {
    let mut p = Pose::new(
        rng.random_range(3..12),
        rng.random_range(3..12),
        rng.random_range(0..6),
    );
    let mut out = vec![p];
    for _ in 0..rng.random_range(0..20) {
        p = match rng.random_range(0..4) {
            0 => Pose::at(p.ahead(), p.alpha),
            1 => Pose::at(p.behind(), p.alpha),
            2 => p.turned_left(),
            _ => p.turned_right(),
        };
        out.push(p);
    }
    out
}

#[test]
fn emd_is_a_metric_on_paths() {
    let mut rng = seed::rng(2);
    for _ in 0..1000 {
        let (x, y, z) = (
            random_path(&mut rng),
            random_path(&mut rng),
            random_path(&mut rng),
        );
        let (a, b, c) = (
            path_to_distribution(&x),
            path_to_distribution(&y),
            path_to_distribution(&z),
        );
        let ab = emd(&a, &b);
        assert!(ab >= -1e-12);
        assert!((ab - emd(&b, &a)).abs() < 1e-9);
        assert!(ab <= emd(&a, &c) + emd(&c, &b) + 1e-9);
        assert!(emd(&a, &a).abs() < 1e-12);
        if a != b {
            assert!(ab > 1e-9);
        }
        let total: f64 = a.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn completion_rules() {
    let plan = Plan {
        start: Pose::new(3, 3, 0),
        poses: vec![Pose::new(3, 3, 0), Pose::new(3, 4, 0), Pose::new(3, 5, 0)],
        target_cards: vec![Cell::new(3, 5)],
    };
    let exec = |poses: Vec<Pose>| Execution {
        actions: crate::planner::actions_along(&poses).unwrap(),
        poses,
    };
    assert!(task_completion(&plan, &exec(plan.poses.clone())));
    let mut longer = plan.poses.clone();
    longer.push(Pose::new(3, 6, 0));
    assert!(task_completion(&plan, &exec(longer)));
    assert!(!task_completion(&plan, &exec(plan.poses[..2].to_vec())));
    let still = Plan::hold_still(plan.start);
    assert!(task_completion(
        &still,
        &exec(vec![plan.start, plan.start.turned_left()])
    ));
    assert!(!task_completion(&still, &exec(plan.poses[..2].to_vec())));
}

#[test]
fn language_stats_count_tokens_and_types() {
    let x = Instruction::from_text("get 2 red hearts get");
    assert_eq!(language_stats([&x]), (5.0, 4));
    let corpus = [x.clone(), x.clone(), Instruction::from_text("wait")];
    assert_eq!(language_stats(&corpus), (11.0 / 3.0, 5));
    assert_eq!(language_stats(&corpus[..2]), language_stats([&x]));
    assert_eq!(language_stats(&[]), (0.0, 0));
}

#[test]
fn reports_round_trip_through_csv() {
    let r = RoundReport {
        round: 2,
        variant: "full".into(),
        completion: 0.5,
        completion_2: Some(0.25),
        vocabulary: 31,
        ..Default::default()
    };
    let mut buf = Vec::new();
    write_csv(&mut buf, &[r.clone(), r.clone()]).unwrap();
    assert_eq!(read_csv(&buf[..]).unwrap(), vec![r.clone(), r]);
}
