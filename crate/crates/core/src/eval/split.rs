use serde::{Deserialize, Serialize};

use super::stats::{anova_from_samples, AnovaResult};
use super::EvalError;

/// Partitions with at most this many candidates are searched exhaustively.
pub const EXHAUSTIVE_LIMIT: f64 = 5.0e6;
const MAX_EXHAUSTIVE_PARTICIPANTS: usize = 18;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantRecord {
    pub id: String,
    /// Upper extremity motor subscore, 0..=50.
    pub uems: u32,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    /// Participant ids per group, each sorted; groups ordered by their first id.
    pub groups: Vec<Vec<String>>,
    pub group_means: Vec<f64>,
    pub group_frames: Vec<usize>,
    /// Population variance of the group mean UEMS (the minimized quantity).
    pub objective: f64,
    pub method: String,
    /// Absent when the test is undefined (a single group, singleton groups
    /// only, or no spread inside any group while the means differ).
    pub anova: Option<AnovaResult>,
}

fn objective(sums: &[f64], counts: &[usize]) -> f64 {
    let means: Vec<f64> = sums.iter().zip(counts).map(|(s, &c)| s / c as f64).collect();
    let m = means.iter().sum::<f64>() / means.len() as f64;
    means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / means.len() as f64
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// Number of set partitions of `n` items into `g` unlabeled groups of balanced sizes.
fn balanced_partition_count(n: usize, g: usize) -> f64 {
    let (lo, r) = (n / g, n % g);
    let ln = ln_factorial(n)
        - r as f64 * ln_factorial(lo + 1)
        - (g - r) as f64 * ln_factorial(lo)
        - ln_factorial(r)
        - ln_factorial(g - r);
    ln.exp()
}

struct Search<'a> {
    values: &'a [f64],
    hi: usize,
    max_full: usize,
    assign: Vec<usize>,
    sums: Vec<f64>,
    counts: Vec<usize>,
    best: Option<(f64, Vec<usize>)>,
}

impl Search<'_> {
    /// Each item joins an existing group or the first empty one, so every
    /// unlabeled partition is visited exactly once, in a fixed order. Only a
    /// strictly better objective replaces the incumbent.
    fn descend(&mut self, item: usize, full: usize) {
        if item == self.values.len() {
            let obj = objective(&self.sums, &self.counts);
            if self.best.as_ref().is_none_or(|(b, _)| obj < *b) {
                self.best = Some((obj, self.assign.clone()));
            }
            return;
        }
        let groups = self.counts.len();
        for g in 0..groups {
            let empty = self.counts[g] == 0;
            if self.counts[g] == self.hi {
                continue;
            }
            let becomes_full = self.counts[g] + 1 == self.hi;
            if becomes_full && full == self.max_full {
                continue;
            }
            self.counts[g] += 1;
            self.sums[g] += self.values[item];
            self.assign[item] = g;
            self.descend(item + 1, full + becomes_full as usize);
            self.counts[g] -= 1;
            self.sums[g] -= self.values[item];
            if empty {
                break;
            }
        }
    }
}

fn exhaustive(values: &[f64], groups: usize) -> Vec<usize> {
    let n = values.len();
    let (hi, max_full) = if n.is_multiple_of(groups) { (n / groups, groups) } else { (n / groups + 1, n % groups) };
    let mut search = Search {
        values,
        hi,
        max_full,
        assign: vec![0; n],
        sums: vec![0.0; groups],
        counts: vec![0; groups],
        best: None,
    };
    search.descend(0, 0);
    search.best.expect("a balanced partition exists").1
}

/// Snake draft by descending score, then pairwise swaps while any strictly improves.
fn greedy(values: &[f64], groups: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut assign = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        let (round, pos) = (rank / groups, rank % groups);
        assign[i] = if round % 2 == 0 { pos } else { groups - 1 - pos };
    }
    let mut sums = vec![0.0; groups];
    let mut counts = vec![0; groups];
    for (i, &g) in assign.iter().enumerate() {
        sums[g] += values[i];
        counts[g] += 1;
    }
    let mut current = objective(&sums, &counts);
    loop {
        let mut improved = false;
        for i in 0..n {
            for j in i + 1..n {
                let (gi, gj) = (assign[i], assign[j]);
                if gi == gj {
                    continue;
                }
                let delta = values[j] - values[i];
                sums[gi] += delta;
                sums[gj] -= delta;
                let candidate = objective(&sums, &counts);
                if candidate < current - 1e-12 {
                    assign.swap(i, j);
                    current = candidate;
                    improved = true;
                } else {
                    sums[gi] -= delta;
                    sums[gj] += delta;
                }
            }
        }
        if !improved {
            return assign;
        }
    }
}

/// Splits participants into `groups` groups of near-equal size (sizes differ by
/// at most one) whose mean UEMS scores are as close as possible.
///
/// Participants are first ordered by id, so the result does not depend on the
/// input order. Small instances are solved exactly; ties keep the first optimum
/// in enumeration order.
pub fn split_participants(records: &[ParticipantRecord], groups: usize) -> Result<Split, EvalError> {
    if groups == 0 || records.len() < groups {
        return Err(EvalError::InvalidInput(format!(
            "cannot split {} participants into {groups} groups",
            records.len()
        )));
    }
    if let Some(r) = records.iter().find(|r| r.uems > 50) {
        return Err(EvalError::InvalidInput(format!("participant {} has UEMS {} outside 0..=50", r.id, r.uems)));
    }
    let mut sorted: Vec<&ParticipantRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(EvalError::InvalidInput(format!("duplicate participant id {}", w[0].id)));
    }
    let values: Vec<f64> = sorted.iter().map(|r| r.uems as f64).collect();
    let n = values.len();
    let use_exhaustive = n <= MAX_EXHAUSTIVE_PARTICIPANTS && balanced_partition_count(n, groups) <= EXHAUSTIVE_LIMIT;
    let assign = if use_exhaustive { exhaustive(&values, groups) } else { greedy(&values, groups) };

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); groups];
    for (i, &g) in assign.iter().enumerate() {
        members[g].push(i);
    }
    members.sort_by_key(|m| m[0]);
    let samples: Vec<Vec<f64>> = members.iter().map(|m| m.iter().map(|&i| values[i]).collect()).collect();
    let sums: Vec<f64> = samples.iter().map(|s| s.iter().sum()).collect();
    let counts: Vec<usize> = samples.iter().map(Vec::len).collect();
    Ok(Split {
        groups: members.iter().map(|m| m.iter().map(|&i| sorted[i].id.clone()).collect()).collect(),
        group_means: sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect(),
        group_frames: members.iter().map(|m| m.iter().map(|&i| sorted[i].frames).sum()).collect(),
        objective: objective(&sums, &counts),
        method: if use_exhaustive { "exhaustive" } else { "greedy" }.to_string(),
        anova: if groups >= 2 { anova_from_samples(&samples).ok() } else { None },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn people(scores: &[u32]) -> Vec<ParticipantRecord> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &u)| ParticipantRecord { id: format!("P{i:02}"), uems: u, frames: 100 + i })
            .collect()
    }

    #[test]
    fn partition_counts() {
        assert!((balanced_partition_count(4, 2) - 3.0).abs() < 1e-6);
        assert!((balanced_partition_count(5, 2) - 10.0).abs() < 1e-6);
        assert!((balanced_partition_count(17, 3) - 2_858_856.0).abs() < 1.0);
    }

    /// Brute force over labeled assignments, for tiny inputs.
    fn brute_force_best(values: &[f64], groups: usize) -> f64 {
        let n = values.len();
        let mut best = f64::INFINITY;
        for code in 0..groups.pow(n as u32) {
            let mut c = code;
            let mut sums = vec![0.0; groups];
            let mut counts = vec![0; groups];
            for v in values {
                sums[c % groups] += v;
                counts[c % groups] += 1;
                c /= groups;
            }
            let (mn, mx) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            if *mn == 0 || mx - mn > 1 {
                continue;
            }
            best = best.min(objective(&sums, &counts));
        }
        best
    }

    #[test]
    fn exhaustive_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let n = rng.gen_range(3..9);
            let g = rng.gen_range(2..=3.min(n));
            let scores: Vec<u32> = (0..n).map(|_| rng.gen_range(0..=50)).collect();
            let split = split_participants(&people(&scores), g).unwrap();
            let values: Vec<f64> = scores.iter().map(|&s| s as f64).collect();
            assert!((split.objective - brute_force_best(&values, g)).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_scores() {
        let split = split_participants(&people(&[20; 9]), 3).unwrap();
        assert_eq!(split.anova.unwrap().f_statistic, 0.0);
        assert!(split.groups.iter().all(|g| g.len() == 3));
    }

    fn random_balanced_objective(values: &[f64], groups: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let mut idx: Vec<usize> = (0..values.len()).collect();
        idx.shuffle(rng);
        let mut out = vec![Vec::new(); groups];
        for (k, i) in idx.into_iter().enumerate() {
            out[k % groups].push(values[i]);
        }
        out
    }

    #[test]
    fn seventeen_participants_beat_random_partitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let scores: Vec<u32> = (0..17).map(|_| rng.gen_range(5..=45)).collect();
        let split = split_participants(&people(&scores), 3).unwrap();
        assert_eq!(split.method, "exhaustive");
        let mut sizes: Vec<usize> = split.groups.iter().map(Vec::len).collect();
        sizes.sort();
        assert_eq!(sizes, vec![5, 6, 6]);
        let f = split.anova.unwrap().f_statistic;
        let values: Vec<f64> = scores.iter().map(|&s| s as f64).collect();
        for _ in 0..1000 {
            let groups = random_balanced_objective(&values, 3, &mut rng);
            let other = anova_from_samples(&groups).unwrap();
            assert!(f <= other.f_statistic + 1e-9);
        }
    }

    #[test]
    fn independent_of_input_order() {
        let mut records = people(&[10, 40, 22, 35, 18, 27, 31, 12]);
        let a = split_participants(&records, 2).unwrap();
        records.reverse();
        let b = split_participants(&records, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn greedy_path_is_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scores: Vec<u32> = (0..40).map(|_| rng.gen_range(0..=50)).collect();
        let split = split_participants(&people(&scores), 3).unwrap();
        assert_eq!(split.method, "greedy");
        let sizes: Vec<usize> = split.groups.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert!(split.objective < 1.0, "objective {}", split.objective);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(split_participants(&people(&[1, 2]), 3).is_err());
        assert!(split_participants(&people(&[1, 51, 3]), 2).is_err());
    }
}
