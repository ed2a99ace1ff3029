//! State abstraction and Monte Carlo control over rule conflicts.
//!
//! Game states are summarized by a handful of numbers, normalized and
//! mapped to the nearest of `k` centroids. The value table keeps, per
//! `(state, family, rule)`, the visit count and the running mean of the
//! episode rewards credited to it; rules are then picked ε-greedily.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{tile_yield, total_game_output, GameState};
use crate::error::{Error, Result};
use crate::features::Normalization;
use crate::rulekb::{Choice, ConflictSet, FamilyId, RuleId};
use crate::world::PlayerId;

pub const STATE_FEATURES: [&str; 8] = [
    "turn",
    "cities",
    "citizens",
    "tgo",
    "settlers",
    "mean_owned_tile_score",
    "specials_owned",
    "coast_cities",
];

/// The default state summary of `player`, in [`STATE_FEATURES`] order.
pub fn state_features(state: &GameState, player: PlayerId) -> Vec<f64> {
    let cities: Vec<_> = state.player_cities(player).collect();
    let citizens: u32 = cities.iter().map(|c| c.citizens).sum();
    let tgo = total_game_output(state, player, state.turn.saturating_sub(1));
    let settlers = state.players.get(player as usize).map_or(0, |p| p.settlers.len());
    let (mut owned, mut weight, mut specials) = (0u64, 0u64, 0u64);
    for t in state.map.tiles() {
        if t.owner == Some(player) {
            owned += 1;
            weight += tile_yield(t, &state.config.ruleset).output_weight();
            if t.special.is_some() {
                specials += 1;
            }
        }
    }
    let coast = cities
        .iter()
        .filter(|c| {
            crate::world::cluster_at(&state.map, c.location)
                .map(|cl| cl.tiles.iter().any(|co| state.map.tile(*co).is_some_and(|t| t.terrain.is_water())))
                .unwrap_or(false)
        })
        .count();
    vec![
        f64::from(state.turn),
        cities.len() as f64,
        f64::from(citizens),
        tgo as f64,
        settlers as f64,
        if owned == 0 { 0.0 } else { weight as f64 / owned as f64 },
        specials as f64,
        coast as f64,
    ]
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid, ties to the lowest index.
fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterModel {
    pub centroids: Vec<Vec<f64>>,
    pub normalization: Normalization,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.normalization.dim()
    }
}

/// Lloyd's algorithm with k-means++ seeding on min-max normalized points.
/// Stops when no point changes cluster or after `max_iter` iterations. A
/// point only moves to a strictly closer centroid and an emptied cluster
/// keeps its centroid, so inertia never increases.
pub fn kmeans_fit(points: &[Vec<f64>], k: usize, max_iter: usize, seed: u64) -> Result<ClusterModel> {
    if k == 0 {
        return Err(Error::config("k must be at least 1"));
    }
    if points.len() < k {
        return Err(Error::InsufficientData(format!("{} points for k = {k}", points.len())));
    }
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::config("non-finite point"));
    }
    let normalization = Normalization::fit(points.iter().map(Vec::as_slice))?;
    let xs: Vec<Vec<f64>> = points.iter().map(|p| normalization.apply(p)).collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centroids = vec![xs[rng.random_range(0..xs.len())].clone()];
    let mut d2: Vec<f64> = xs.iter().map(|x| sq_dist(x, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = d2.iter().rposition(|d| *d > 0.0).expect("positive total");
            for (i, d) in d2.iter().enumerate() {
                if *d > 0.0 && r < *d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            idx
        } else {
            rng.random_range(0..xs.len())
        };
        centroids.push(xs[pick].clone());
        for (i, x) in xs.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, &centroids[centroids.len() - 1]));
        }
    }

    let mut assign: Vec<usize> = xs.iter().map(|x| nearest(&centroids, x).0).collect();
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        history.push(xs.iter().zip(&assign).map(|(x, &a)| sq_dist(x, &centroids[a])).sum::<f64>());
        if iterations == max_iter {
            break;
        }
        iterations += 1;
        let dim = xs[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (x, &a) in xs.iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(x) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let mut changed = false;
        for (x, a) in xs.iter().zip(assign.iter_mut()) {
            let (best, d) = nearest(&centroids, x);
            if best != *a && d < sq_dist(x, &centroids[*a]) {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            history.push(xs.iter().zip(&assign).map(|(x, &a)| sq_dist(x, &centroids[a])).sum::<f64>());
            break;
        }
    }
    Ok(ClusterModel { centroids, normalization, inertia: *history.last().expect("at least one entry"), inertia_history: history, iterations })
}

/// Nearest centroid to the normalized features, ties to the lowest id.
pub fn assign_state(model: &ClusterModel, features: &[f64]) -> Result<usize> {
    let x = model.normalization.apply(features)?;
    Ok(nearest(&model.centroids, &x).0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QEntry {
    pub count: u64,
    pub mean: f64,
}

impl QEntry {
    pub fn credit(&mut self, reward: f64) {
        self.count += 1;
        self.mean += (reward - self.mean) / self.count as f64;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueTable {
    pub k: usize,
    pub features: Vec<String>,
    pub epsilon: f64,
    q: BTreeMap<(usize, FamilyId, RuleId), QEntry>,
    v: BTreeMap<usize, QEntry>,
}

impl ValueTable {
    pub fn new(k: usize, features: Vec<String>, epsilon: f64) -> Self {
        ValueTable { k, features, epsilon, q: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn q(&self, state: usize, family: FamilyId, rule: RuleId) -> Option<QEntry> {
        self.q.get(&(state, family, rule)).copied()
    }

    pub fn v(&self, state: usize) -> Option<QEntry> {
        self.v.get(&state).copied()
    }

    pub fn q_entries(&self) -> impl Iterator<Item = (&(usize, FamilyId, RuleId), &QEntry)> {
        self.q.iter()
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("value-table v1\n");
        s.push_str(&format!("k {}\nfeatures {}\nepsilon {}\n", self.k, self.features.join(","), self.epsilon));
        s.push_str(&format!("entries {} {}\n", self.q.len(), self.v.len()));
        for ((st, f, r), e) in &self.q {
            s.push_str(&format!("q {st} {f} {r} {} {}\n", e.count, e.mean));
        }
        for (st, e) in &self.v {
            s.push_str(&format!("v {st} {} {}\n", e.count, e.mean));
        }
        s.push_str("end\n");
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.split_whitespace().collect::<Vec<_>>()));
        let mut next = |what: &str| lines.next().ok_or_else(|| Error::parse(0, format!("missing {what} (truncated file?)")));
        let (n, l) = next("header")?;
        if l != ["value-table", "v1"] {
            return Err(Error::parse(n, "expected `value-table v1`"));
        }
        fn num<T: std::str::FromStr>(n: usize, s: &str) -> Result<T> {
            s.parse().map_err(|_| Error::parse(n, format!("bad number {s:?}")))
        }
        let (n, l) = next("k")?;
        let k = match l[..] {
            ["k", v] => num(n, v)?,
            _ => return Err(Error::parse(n, "expected `k <n>`")),
        };
        let (n, l) = next("features")?;
        let features = match l[..] {
            ["features"] => Vec::new(),
            ["features", v] => v.split(',').map(String::from).collect(),
            _ => return Err(Error::parse(n, "expected `features a,b,...`")),
        };
        let (n, l) = next("epsilon")?;
        let epsilon = match l[..] {
            ["epsilon", v] => num(n, v)?,
            _ => return Err(Error::parse(n, "expected `epsilon <x>`")),
        };
        let (n, l) = next("entries")?;
        let (nq, nv): (usize, usize) = match l[..] {
            ["entries", a, b] => (num(n, a)?, num(n, b)?),
            _ => return Err(Error::parse(n, "expected `entries <q> <v>`")),
        };
        let mut table = ValueTable::new(k, features, epsilon);
        for _ in 0..nq {
            let (n, l) = next("q entry")?;
            match l[..] {
                ["q", s, f, r, c, m] => {
                    table.q.insert((num(n, s)?, num(n, f)?, num(n, r)?), QEntry { count: num(n, c)?, mean: num(n, m)? });
                }
                _ => return Err(Error::parse(n, "expected `q state family rule count mean`")),
            }
        }
        for _ in 0..nv {
            let (n, l) = next("v entry")?;
            match l[..] {
                ["v", s, c, m] => {
                    table.v.insert(num(n, s)?, QEntry { count: num(n, c)?, mean: num(n, m)? });
                }
                _ => return Err(Error::parse(n, "expected `v state count mean`")),
            }
        }
        let (n, l) = next("end")?;
        if l != ["end"] {
            return Err(Error::parse(n, "expected `end`"));
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecisionRecord {
    pub state: usize,
    pub family: FamilyId,
    pub rule: RuleId,
    pub turn: u32,
}

#[derive(Clone, Debug)]
pub struct Policy {
    pub epsilon: f64,
    /// Multiplied into ε after every episode.
    pub decay: f64,
    pub min_epsilon: f64,
    rng: ChaCha8Rng,
}

impl Policy {
    pub fn new(epsilon: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::config(format!("epsilon {epsilon} outside [0, 1]")));
        }
        Ok(Policy { epsilon, decay: 1.0, min_epsilon: 0.0, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn with_decay(mut self, decay: f64, min_epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&decay) || !(0.0..=1.0).contains(&min_epsilon) {
            return Err(Error::config("decay and min_epsilon must lie in [0, 1]"));
        }
        self.decay = decay;
        self.min_epsilon = min_epsilon;
        Ok(self)
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn end_episode(&mut self) {
        self.epsilon = (self.epsilon * self.decay).max(self.min_epsilon.min(self.epsilon));
    }
}

/// The greedy member: highest mean, unvisited members first, ties to the
/// lowest rule id.
pub fn greedy(table: &ValueTable, state: usize, set: &ConflictSet) -> Result<RuleId> {
    let value = |r: RuleId| table.q(state, set.family, r).map_or(f64::INFINITY, |e| e.mean);
    let mut ids: Vec<RuleId> = set.rules.iter().map(|r| r.id).collect();
    ids.sort_unstable();
    let mut best = *ids.first().ok_or_else(|| Error::config("empty conflict set"))?;
    for &r in &ids[1..] {
        if value(r) > value(best) {
            best = r;
        }
    }
    Ok(best)
}

/// ε-greedy pick from `set` in `state`.
pub fn choose(table: &ValueTable, policy: &mut Policy, state: usize, set: &ConflictSet, turn: u32) -> Result<(Choice, DecisionRecord)> {
    let g = greedy(table, state, set)?;
    let n = set.rules.len() as f64;
    let rule = if policy.epsilon > 0.0 && policy.rng.random::<f64>() < policy.epsilon {
        set.rules.choose(&mut policy.rng).expect("non-empty").id
    } else {
        g
    };
    let probabilities = set
        .rules
        .iter()
        .map(|r| policy.epsilon / n + if r.id == g { 1.0 - policy.epsilon } else { 0.0 })
        .collect();
    Ok((Choice { rule, probabilities }, DecisionRecord { state, family: set.family, rule, turn }))
}

/// Every-visit update: each record's `(state, family, rule)` gets the
/// reward once per occurrence; each distinct state's V once per episode.
pub fn update_from_episode(table: &mut ValueTable, records: &[DecisionRecord], reward: f64) -> Result<()> {
    if !(reward >= 0.0 && reward.is_finite()) {
        return Err(Error::config(format!("reward {reward} must be finite and non-negative")));
    }
    for r in records {
        table.q.entry((r.state, r.family, r.rule)).or_default().credit(reward);
    }
    let states: BTreeSet<usize> = records.iter().map(|r| r.state).collect();
    for s in states {
        table.v.entry(s).or_default().credit(reward);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rulekb::default_kb;

    fn pts(v: &[&[f64]]) -> Vec<Vec<f64>> {
        v.iter().map(|p| p.to_vec()).collect()
    }

    #[test]
    fn separable_pair() {
        let m = kmeans_fit(&pts(&[&[0.0], &[10.0]]), 2, 300, 1).unwrap();
        assert_eq!(m.inertia, 0.0);
        let mut c: Vec<f64> = m.centroids.iter().map(|c| c[0]).collect();
        c.sort_by(f64::total_cmp);
        // normalized coordinates
        assert_eq!(c, vec![0.0, 1.0]);
        assert_eq!(assign_state(&m, &[10.0]).unwrap(), m.centroids.iter().position(|c| c[0] == 1.0).unwrap());
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let m = kmeans_fit(&pts(&[&[0.0, 0.0], &[4.0, 2.0], &[2.0, 4.0]]), 1, 300, 3).unwrap();
        assert_eq!(m.centroids[0].len(), 2);
        for (c, want) in m.centroids[0].iter().zip([0.5, 0.5]) {
            assert!((c - want).abs() < 1e-12);
        }
    }

    #[test]
    fn too_few_points() {
        assert!(kmeans_fit(&pts(&[&[1.0]]), 2, 300, 0).is_err());
        assert!(kmeans_fit(&pts(&[&[1.0]]), 0, 300, 0).is_err());
    }

    #[test]
    fn tie_goes_to_lowest_index() {
        let m = ClusterModel {
            centroids: vec![vec![0.0], vec![0.0], vec![1.0]],
            normalization: Normalization { mins: vec![0.0], maxs: vec![1.0] },
            inertia: 0.0,
            inertia_history: vec![],
            iterations: 0,
        };
        assert_eq!(assign_state(&m, &[0.4]).unwrap(), 0);
        assert_eq!(assign_state(&m, &[0.5]).unwrap(), 0);
        assert_eq!(assign_state(&m, &[0.6]).unwrap(), 2);
        assert!(assign_state(&m, &[0.6, 1.0]).is_err());
    }

    #[test]
    fn greedy_rules() {
        let kb = default_kb();
        let set = kb.family(0).unwrap();
        let mut table = ValueTable::new(1, vec![], 0.0);
        let mut policy = Policy::new(0.0, 1).unwrap();
        // all unvisited: lowest id
        assert_eq!(choose(&table, &mut policy, 0, set, 1).unwrap().0.rule, set.rules[0].id);
        for (i, r) in set.rules.iter().enumerate() {
            table.q.insert((0, set.family, r.id), QEntry { count: 1, mean: [10.0, 20.0, 5.0, 20.0][i] });
        }
        let (c, rec) = choose(&table, &mut policy, 0, set, 7).unwrap();
        assert_eq!(c.rule, set.rules[1].id);
        assert_eq!(c.probabilities, vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(rec, DecisionRecord { state: 0, family: set.family, rule: set.rules[1].id, turn: 7 });
    }

    #[test]
    fn probabilities_sum_to_one() {
        let kb = default_kb();
        let table = ValueTable::new(1, vec![], 0.3);
        let mut policy = Policy::new(0.3, 1).unwrap();
        let (c, _) = choose(&table, &mut policy, 0, kb.family(3).unwrap(), 1).unwrap();
        assert!((c.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((c.probabilities[0] - (0.7 + 0.075)).abs() < 1e-12);
    }

    #[test]
    fn running_mean() {
        let mut t = ValueTable::new(1, vec![], 0.1);
        let rec = DecisionRecord { state: 0, family: 2, rule: 9, turn: 1 };
        update_from_episode(&mut t, std::slice::from_ref(&rec), 10.0).unwrap();
        update_from_episode(&mut t, std::slice::from_ref(&rec), 20.0).unwrap();
        assert_eq!(t.q(0, 2, 9), Some(QEntry { count: 2, mean: 15.0 }));
        assert_eq!(t.v(0), Some(QEntry { count: 2, mean: 15.0 }));
        let before = t.clone();
        update_from_episode(&mut t, &[], 5.0).unwrap();
        assert_eq!(t, before);
        assert!(update_from_episode(&mut t, &[rec], -1.0).is_err());
    }

    #[test]
    fn table_text_round_trip() {
        let mut t = ValueTable::new(4, STATE_FEATURES.iter().map(|s| s.to_string()).collect(), 0.1);
        assert_eq!(ValueTable::from_text(&t.to_text()).unwrap(), t);
        update_from_episode(&mut t, &[DecisionRecord { state: 3, family: 1, rule: 5, turn: 2 }], 1.0 / 3.0).unwrap();
        let text = t.to_text();
        assert_eq!(ValueTable::from_text(&text).unwrap(), t);
        let cut: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(ValueTable::from_text(&cut).is_err());
    }

    #[test]
    fn decay_schedule() {
        let mut p = Policy::new(0.5, 0).unwrap().with_decay(0.5, 0.1).unwrap();
        p.end_episode();
        assert_eq!(p.epsilon, 0.25);
        p.end_episode();
        p.end_episode();
        assert_eq!(p.epsilon, 0.1);
        assert!(Policy::new(1.5, 0).is_err());
    }
}
