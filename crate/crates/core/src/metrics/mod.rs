//! Task completion, earth mover's distance between plan and execution, and
//! language statistics, aggregated into per-round reports.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::follower::Execution;
use crate::hexworld::{hex_distance, Cell, Pose};
use crate::orchestrator::InteractionRecord;
use crate::planner::Plan;
use crate::synthlang::Instruction;

/// Card plans are complete when every target cell was visited; a plan with
/// no cards is complete when the follower ends where it started.
pub fn task_completion(plan: &Plan, exec: &Execution) -> bool {
    if plan.target_cards.is_empty() {
        return exec.end().map(|p| p.cell()) == Some(plan.start.cell());
    }
    let visited: BTreeSet<Cell> = exec.poses.iter().map(|p| p.cell()).collect();
    plan.target_cards.iter().all(|c| visited.contains(c))
}

/// Probability mass on grid cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathDistribution {
    pub support: Vec<Cell>,
    pub weights: Vec<f64>,
}

/// Uniform mass per pose, accumulated per cell; orientation is dropped.
pub fn path_to_distribution(poses: &[Pose]) -> PathDistribution {
    assert!(!poses.is_empty(), "path must have at least one pose");
    let mut mass: BTreeMap<Cell, usize> = BTreeMap::new();
    for p in poses {
        *mass.entry(p.cell()).or_default() += 1;
    }
    let n = poses.len() as f64;
    PathDistribution {
        support: mass.keys().copied().collect(),
        weights: mass.values().map(|&k| k as f64 / n).collect(),
    }
}

const EPS: f64 = 1e-12;

/// Exact optimal transport cost under the hex distance, by successive
/// shortest augmenting paths on the bipartite transport network.
pub fn emd(a: &PathDistribution, b: &PathDistribution) -> f64 {
    let cost = |i: usize, j: usize| hex_distance(a.support[i], b.support[j]) as f64;
    transport(&a.weights, &b.weights, cost)
}

/// Min-cost transport between `supply` and `demand` (equal totals).
pub fn transport(supply: &[f64], demand: &[f64], cost: impl Fn(usize, usize) -> f64) -> f64 {
    let (n, m) = (supply.len(), demand.len());
    let mut flow = vec![0.0; n * m];
    let mut left = supply.to_vec();
    let mut need = demand.to_vec();
    let c: Vec<f64> = (0..n * m).map(|k| cost(k / m, k % m)).collect();
    loop {
        // Bellman-Ford over sources (0..n) and sinks (n..n+m) from every
        // source with remaining supply.
        let mut dist = vec![f64::INFINITY; n + m];
        let mut prev = vec![usize::MAX; n + m];
        for i in 0..n {
            if left[i] > EPS {
                dist[i] = 0.0;
            }
        }
        for _ in 0..n + m {
            let mut changed = false;
            for i in 0..n {
                if dist[i].is_finite() {
                    for j in 0..m {
                        let d = dist[i] + c[i * m + j];
                        if d < dist[n + j] - EPS {
                            dist[n + j] = d;
                            prev[n + j] = i;
                            changed = true;
                        }
                    }
                }
            }
            for j in 0..m {
                if dist[n + j].is_finite() {
                    for i in 0..n {
                        if flow[i * m + j] > EPS {
                            let d = dist[n + j] - c[i * m + j];
                            if d < dist[i] - EPS {
                                dist[i] = d;
                                prev[i] = n + j;
                                changed = true;
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let Some(sink) = (0..m)
            .filter(|&j| need[j] > EPS && dist[n + j].is_finite())
            .min_by(|&x, &y| dist[n + x].total_cmp(&dist[n + y]))
        else {
            break;
        };
        // Walk back to a root source.
        let mut path = Vec::new();
        let mut v = n + sink;
        while prev[v] != usize::MAX {
            path.push((prev[v], v));
            v = prev[v];
        }
        let source = v;
        let mut amount = left[source].min(need[sink]);
        for &(u, w) in &path {
            if u >= n {
                // backward arc: sink u-n to source w
                amount = amount.min(flow[w * m + (u - n)]);
            }
        }
        for &(u, w) in &path {
            if u < n {
                flow[u * m + (w - n)] += amount;
            } else {
                flow[w * m + (u - n)] -= amount;
            }
        }
        left[source] -= amount;
        need[sink] -= amount;
    }
    flow.iter().zip(&c).map(|(f, c)| f * c).sum()
}

/// Mean token count and number of distinct token types.
pub fn language_stats<'a>(instructions: impl IntoIterator<Item = &'a Instruction>) -> (f64, usize) {
    let mut types = BTreeSet::new();
    let (mut tokens, mut n) = (0usize, 0usize);
    for x in instructions {
        n += 1;
        tokens += x.len();
        types.extend(x.tokens.iter().map(String::as_str));
    }
    let mean = if n == 0 {
        0.0
    } else {
        tokens as f64 / n as f64
    };
    (mean, types.len())
}

/// One row of the per-round summary.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub variant: String,
    pub games: usize,
    pub instructions: usize,
    pub completion: f64,
    pub completion_0: Option<f64>,
    pub completion_1: Option<f64>,
    pub completion_2: Option<f64>,
    pub completion_3: Option<f64>,
    pub plans_0: usize,
    pub plans_1: usize,
    pub plans_2: usize,
    pub plans_3: usize,
    pub mean_emd: f64,
    pub perceived_correct_rate: f64,
    pub grammatical_rate: f64,
    pub mean_score: f64,
    pub mean_length: f64,
    pub vocabulary: usize,
    pub positives: usize,
    pub negatives: usize,
}

fn rate(hits: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        hits as f64 / n as f64
    }
}

/// Summarizes one round's records. Game scores are the `score_after` of the
/// last record of each game.
pub fn round_report(
    round: u32,
    variant: &str,
    records: &[InteractionRecord],
    positives: usize,
    negatives: usize,
) -> RoundReport {
    let n = records.len();
    let mut by_cards = [(0usize, 0usize); 4];
    let mut done = 0;
    let mut emd_sum = 0.0;
    let (mut pc, mut gr) = (0, 0);
    for r in records {
        let ok = task_completion(&r.plan, &r.execution);
        done += ok as usize;
        let k = r.plan.num_cards().min(3);
        by_cards[k].0 += ok as usize;
        by_cards[k].1 += 1;
        emd_sum += emd(
            &path_to_distribution(&r.plan.poses),
            &path_to_distribution(&r.execution.poses),
        );
        pc += r.feedback.perceived_correct as usize;
        gr += r.feedback.grammatical as usize;
    }
    let mut games: BTreeMap<u64, u32> = BTreeMap::new();
    for r in records {
        games.insert(r.world_seed, r.score_after);
    }
    let (mean_length, vocabulary) = language_stats(records.iter().map(|r| &r.sample.tokens));
    let by = |k: usize| (by_cards[k].1 > 0).then(|| rate(by_cards[k].0, by_cards[k].1));
    RoundReport {
        round,
        variant: variant.to_string(),
        games: games.len(),
        instructions: n,
        completion: rate(done, n),
        completion_0: by(0),
        completion_1: by(1),
        completion_2: by(2),
        completion_3: by(3),
        plans_0: by_cards[0].1,
        plans_1: by_cards[1].1,
        plans_2: by_cards[2].1,
        plans_3: by_cards[3].1,
        mean_emd: if n == 0 { 0.0 } else { emd_sum / n as f64 },
        perceived_correct_rate: rate(pc, n),
        grammatical_rate: rate(gr, n),
        mean_score: if games.is_empty() {
            0.0
        } else {
            games.values().map(|&s| s as f64).sum::<f64>() / games.len() as f64
        },
        mean_length,
        vocabulary,
        positives,
        negatives,
    }
}

/// Writes reports as CSV with a header row.
pub fn write_csv<W: std::io::Write>(out: W, reports: &[RoundReport]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<RoundReport>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}

#[cfg(test)]
mod tests;
