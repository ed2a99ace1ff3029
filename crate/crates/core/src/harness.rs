//! Experiments: evaluators plugged into one settlement agent, training
//! runs, metrics and comparisons between runs.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{run_episode, tile_yield, Agent, EpisodeLog, GameConfig, GameState, Settler, SiteChoice};
use crate::error::{Error, Result};
use crate::features::{extract_features, Dataset};
use crate::mlp::{kfold_cv, train, MlpConfig, MlpModel, TrainReport};
use crate::rl::{assign_state, choose, kmeans_fit, state_features, update_from_episode, ClusterModel, DecisionRecord, Policy, ValueTable, STATE_FEATURES};
use crate::rulekb::{default_kb, score_cluster, Choice, Chooser, ClusterFacts, ConflictSet, KnowledgeBase, ScoreTrace};
use crate::seed::derive;
use crate::world::{cluster_at, generate_map, Coord, GameMap, MapGenConfig, PlayerId, TerrainKind};

/// Seed streams, xor-ed into the base seed.
const MAP_STREAM: u64 = 0x6d61_7073;
const WARMUP_STREAM: u64 = 0x7761_726d;

/// Scores candidate city centers.
pub trait Evaluator {
    fn name(&self) -> String;

    fn begin_episode(&mut self, _episode: usize, _seed: u64) -> Result<()> {
        Ok(())
    }

    fn begin_turn(&mut self, _state: &GameState, _player: PlayerId) -> Result<()> {
        Ok(())
    }

    fn score(&mut self, state: &GameState, player: PlayerId, center: Coord) -> Result<(f64, Option<ScoreTrace>)>;

    fn end_episode(&mut self, _log: &EpisodeLog) -> Result<()> {
        Ok(())
    }
}

/// Sends every settler to the best-scored candidate; ties go to the first
/// candidate in row-major order.
pub struct SettlementAgent<'a> {
    pub evaluator: &'a mut dyn Evaluator,
}

impl Agent for SettlementAgent<'_> {
    fn begin_turn(&mut self, state: &GameState, player: PlayerId) -> Result<()> {
        self.evaluator.begin_turn(state, player)
    }

    fn choose_site(&mut self, state: &GameState, player: PlayerId, _settler: &Settler, candidates: &[Coord]) -> Result<Option<SiteChoice>> {
        let mut best: Option<SiteChoice> = None;
        for &c in candidates {
            let (score, trace) = self.evaluator.score(state, player, c)?;
            if !score.is_finite() {
                return Err(Error::Simulation(format!("{} gave a non-finite score at {c}", self.evaluator.name())));
            }
            if best.as_ref().is_none_or(|b| score > b.score) {
                best = Some(SiteChoice { center: c, score, trace });
            }
        }
        Ok(best)
    }
}

/// Every legal site of `player`, best first, ties row-major.
pub fn evaluate_placements(evaluator: &mut dyn Evaluator, state: &GameState, player: PlayerId) -> Result<Vec<(Coord, f64)>> {
    let mut out = Vec::new();
    for c in state.legal_sites(player) {
        out.push((c, evaluator.score(state, player, c)?.0));
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(out)
}

struct RlChooser<'a> {
    table: &'a ValueTable,
    policy: &'a mut Policy,
    records: &'a mut Vec<DecisionRecord>,
    state: usize,
    turn: u32,
}

impl Chooser for RlChooser<'_> {
    fn choose(&mut self, set: &ConflictSet) -> Result<Choice> {
        let (c, rec) = choose(self.table, self.policy, self.state, set, self.turn)?;
        self.records.push(rec);
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RlConfig {
    pub k: usize,
    pub epsilon: f64,
    pub epsilon_decay: f64,
    pub min_epsilon: f64,
    pub warmup_episodes: usize,
    pub max_iter: usize,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig { k: 32, epsilon: 0.1, epsilon_decay: 1.0, min_epsilon: 0.0, warmup_episodes: 50, max_iter: 300 }
    }
}

/// Rule base scoring with conflicts resolved by the learned policy. The
/// game state is abstracted once per turn, when the player's settlers start
/// acting.
pub struct RuleEvaluator {
    pub kb: KnowledgeBase,
    pub model: ClusterModel,
    pub table: ValueTable,
    pub policy: Policy,
    /// Credit the episode reward to the table after each episode.
    pub learning: bool,
    records: Vec<DecisionRecord>,
    state: usize,
}

impl RuleEvaluator {
    pub fn new(kb: KnowledgeBase, model: ClusterModel, table: ValueTable, policy: Policy) -> Self {
        RuleEvaluator { kb, model, table, policy, learning: true, records: Vec::new(), state: 0 }
    }

    /// Fits the state abstraction on states visited by a random agent and
    /// starts from an empty table.
    pub fn warm_up(config: &ExperimentConfig, rl: &RlConfig) -> Result<Self> {
        let points = warmup_states(config, rl.warmup_episodes)?;
        let model = kmeans_fit(&points, rl.k, rl.max_iter, config.seed ^ WARMUP_STREAM)?;
        let table = ValueTable::new(rl.k, STATE_FEATURES.iter().map(|s| s.to_string()).collect(), rl.epsilon);
        let policy = Policy::new(rl.epsilon, config.seed)?.with_decay(rl.epsilon_decay, rl.min_epsilon)?;
        Ok(RuleEvaluator::new(default_kb(), model, table, policy))
    }

    pub fn pending_records(&self) -> &[DecisionRecord] {
        &self.records
    }
}

impl Evaluator for RuleEvaluator {
    fn name(&self) -> String {
        "kb".into()
    }

    fn begin_episode(&mut self, _episode: usize, seed: u64) -> Result<()> {
        self.policy.reseed(seed);
        self.records.clear();
        Ok(())
    }

    fn begin_turn(&mut self, state: &GameState, player: PlayerId) -> Result<()> {
        self.state = assign_state(&self.model, &state_features(state, player))?;
        Ok(())
    }

    fn score(&mut self, state: &GameState, _player: PlayerId, center: Coord) -> Result<(f64, Option<ScoreTrace>)> {
        let facts = ClusterFacts::at(&state.map, center)?;
        let mut chooser = RlChooser { table: &self.table, policy: &mut self.policy, records: &mut self.records, state: self.state, turn: state.turn };
        let (score, trace) = score_cluster(&self.kb, &facts, &mut chooser)?;
        Ok((score as f64, Some(trace)))
    }

    fn end_episode(&mut self, log: &EpisodeLog) -> Result<()> {
        if self.learning {
            update_from_episode(&mut self.table, &self.records, log.tgo() as f64)?;
        }
        self.records.clear();
        self.policy.end_episode();
        Ok(())
    }
}

/// Scores with a trained regressor; the predicted label is the score.
pub struct NnEvaluator {
    pub model: MlpModel,
}

impl Evaluator for NnEvaluator {
    fn name(&self) -> String {
        "nn".into()
    }

    fn score(&mut self, state: &GameState, player: PlayerId, center: Coord) -> Result<(f64, Option<ScoreTrace>)> {
        let cities: Vec<(Coord, PlayerId)> = state.cities.iter().map(|c| (c.location, c.owner)).collect();
        let x = extract_features(&state.map, center, player, &cities)?;
        Ok((self.model.predict(&x)?, None))
    }
}

/// Uniform random scores; reseeded every episode.
pub struct RandomEvaluator {
    rng: ChaCha8Rng,
}

impl RandomEvaluator {
    pub fn new(seed: u64) -> Self {
        RandomEvaluator { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Evaluator for RandomEvaluator {
    fn name(&self) -> String {
        "random".into()
    }

    fn begin_episode(&mut self, _episode: usize, seed: u64) -> Result<()> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(())
    }

    fn score(&mut self, _: &GameState, _: PlayerId, _: Coord) -> Result<(f64, Option<ScoreTrace>)> {
        Ok((self.rng.random(), None))
    }
}

/// Sum of the tile output weights of the cluster, ignoring tiles another
/// player owns. The fixed opponent.
pub struct YieldSumEvaluator;

impl Evaluator for YieldSumEvaluator {
    fn name(&self) -> String {
        "yield-sum".into()
    }

    fn score(&mut self, state: &GameState, player: PlayerId, center: Coord) -> Result<(f64, Option<ScoreTrace>)> {
        let cluster = cluster_at(&state.map, center)?;
        let mut sum = 0;
        for c in &cluster.tiles {
            let t = state.map.tile(*c).expect("cluster in bounds");
            if t.owner.is_none_or(|o| o == player) {
                sum += tile_yield(t, &state.config.ruleset).output_weight();
            }
        }
        Ok((sum as f64, None))
    }
}

pub struct ConstantEvaluator(pub f64);

impl Evaluator for ConstantEvaluator {
    fn name(&self) -> String {
        "constant".into()
    }

    fn score(&mut self, _: &GameState, _: PlayerId, _: Coord) -> Result<(f64, Option<ScoreTrace>)> {
        Ok((self.0, None))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MapMode {
    /// Every episode starts on this map.
    Fixed(GameMap),
    /// Episode `i` plays a map generated from `derive(seed ^ MAP_STREAM, i)`.
    PerEpisode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub episodes: usize,
    pub game: GameConfig,
    pub mapgen: MapGenConfig,
    pub map: MapMode,
    pub seed: u64,
    /// Share of episodes in each improvement window.
    pub window: f64,
}

impl ExperimentConfig {
    /// `episodes` on the map generated from `map_seed`, every episode
    /// lasting `turns` turns.
    pub fn fixed_map(episodes: usize, turns: u32, map_seed: u64, seed: u64) -> Result<Self> {
        let mapgen = MapGenConfig::default();
        let map = generate_map(&mapgen, map_seed)?;
        Ok(ExperimentConfig {
            episodes,
            game: GameConfig { turn_limit: turns, ..Default::default() },
            mapgen,
            map: MapMode::Fixed(map),
            seed,
            window: 0.1,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::config("episodes must be at least 1"));
        }
        if !(self.window > 0.0 && self.window <= 0.5) {
            return Err(Error::config("window must lie in (0, 0.5]"));
        }
        self.game.validate()?;
        self.mapgen.validate()
    }

    pub fn episode_seed(&self, episode: usize) -> u64 {
        derive(self.seed, episode as u64)
    }

    /// Depends only on the base seed and the episode index.
    pub fn episode_map(&self, episode: usize) -> Result<GameMap> {
        match &self.map {
            MapMode::Fixed(m) => Ok(m.clone()),
            MapMode::PerEpisode => generate_map(&self.mapgen, derive(self.seed ^ MAP_STREAM, episode as u64)),
        }
    }
}

/// Per-episode TGO of the learning player.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub tgo: Vec<u64>,
}

impl RunMetrics {
    pub fn from_logs(logs: &[EpisodeLog]) -> Self {
        RunMetrics { tgo: logs.iter().map(EpisodeLog::tgo).collect() }
    }

    pub fn len(&self) -> usize {
        self.tgo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tgo.is_empty()
    }

    /// Mean TGO of the episodes so far, after each episode.
    pub fn running_avg(&self) -> Vec<f64> {
        let mut sum = 0u64;
        self.tgo
            .iter()
            .enumerate()
            .map(|(i, t)| {
                sum += t;
                sum as f64 / (i + 1) as f64
            })
            .collect()
    }

    pub fn window_len(&self, window: f64) -> usize {
        ((self.len() as f64 * window).round() as usize).clamp(1, self.len().max(1))
    }

    pub fn first_window_mean(&self, window: f64) -> Option<f64> {
        let w = self.window_len(window);
        (!self.is_empty()).then(|| self.tgo[..w].iter().sum::<u64>() as f64 / w as f64)
    }

    pub fn last_window_mean(&self, window: f64) -> Option<f64> {
        let w = self.window_len(window);
        (!self.is_empty()).then(|| self.tgo[self.len() - w..].iter().sum::<u64>() as f64 / w as f64)
    }

    /// `(last - first) / first` over the two windows.
    pub fn improvement(&self, window: f64) -> Option<f64> {
        let first = self.first_window_mean(window)?;
        let last = self.last_window_mean(window)?;
        (first > 0.0).then(|| (last - first) / first)
    }

    /// `episode,tgo,running_avg`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("episode,tgo,running_avg\n");
        for (i, (t, a)) in self.tgo.iter().zip(self.running_avg()).enumerate() {
            s.push_str(&format!("{i},{t},{a}\n"));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = rd.headers().map_err(csv_err)?.iter().map(String::from).collect();
        if header != ["episode", "tgo", "running_avg"] {
            return Err(Error::parse(1, "expected header `episode,tgo,running_avg`"));
        }
        let mut tgo = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let ep: usize = rec[0].parse().map_err(|_| Error::parse(i + 2, "bad episode"))?;
            if ep != i {
                return Err(Error::parse(i + 2, format!("episode {ep} out of sequence")));
            }
            tgo.push(rec[1].parse().map_err(|_| Error::parse(i + 2, "bad tgo"))?);
        }
        Ok(RunMetrics { tgo })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::parse(e.position().map_or(0, |p| p.line() as usize), e.to_string())
}

pub struct RunOutcome {
    pub metrics: RunMetrics,
    pub logs: Vec<EpisodeLog>,
}

pub fn log_path(dir: &Path, episode: usize) -> PathBuf {
    dir.join("logs").join(format!("episode_{episode:05}.jsonl"))
}

/// Plays the episodes in order with `evaluator` driving player 0 and the
/// yield-sum evaluator driving everyone else. The evaluator sees each
/// finished episode before the next starts. With `out`, logs go to
/// `out/logs/` and metrics to `out/metrics.csv`.
pub fn run_experiment(config: &ExperimentConfig, evaluator: &mut dyn Evaluator, out: Option<&Path>) -> Result<RunOutcome> {
    config.validate()?;
    if let Some(dir) = out {
        fs::create_dir_all(dir.join("logs"))?;
    }
    let mut metrics = RunMetrics::default();
    let mut logs = Vec::with_capacity(config.episodes);
    for i in 0..config.episodes {
        let map = config.episode_map(i)?;
        let seed = config.episode_seed(i);
        evaluator.begin_episode(i, seed)?;
        let log = play(&map, &config.game, seed, i, evaluator)?;
        evaluator.end_episode(&log)?;
        metrics.tgo.push(log.tgo());
        if let Some(dir) = out {
            log.write_jsonl(std::io::BufWriter::new(fs::File::create(log_path(dir, i))?))?;
        }
        logs.push(log);
    }
    if let Some(dir) = out {
        fs::write(dir.join("metrics.csv"), metrics.to_csv())?;
    }
    Ok(RunOutcome { metrics, logs })
}

fn play(map: &GameMap, game: &GameConfig, seed: u64, episode: usize, evaluator: &mut dyn Evaluator) -> Result<EpisodeLog> {
    let mut names = vec![evaluator.name()];
    let mut me = SettlementAgent { evaluator };
    let mut opponents: Vec<YieldSumEvaluator> = (1..game.players).map(|_| YieldSumEvaluator).collect();
    let mut opp_agents: Vec<SettlementAgent> = opponents.iter_mut().map(|e| SettlementAgent { evaluator: e }).collect();
    names.extend(opp_agents.iter().map(|a| a.evaluator.name()));
    let mut agents: Vec<&mut dyn Agent> = vec![&mut me];
    agents.extend(opp_agents.iter_mut().map(|a| a as &mut dyn Agent));
    run_episode(map, game, seed, Some(episode), names, &mut agents)
}

struct StateRecorder<'a> {
    inner: SettlementAgent<'a>,
    points: &'a mut Vec<Vec<f64>>,
}

impl Agent for StateRecorder<'_> {
    fn begin_turn(&mut self, state: &GameState, player: PlayerId) -> Result<()> {
        self.points.push(state_features(state, player));
        self.inner.begin_turn(state, player)
    }

    fn choose_site(&mut self, state: &GameState, player: PlayerId, settler: &Settler, candidates: &[Coord]) -> Result<Option<SiteChoice>> {
        self.inner.choose_site(state, player, settler, candidates)
    }
}

/// State features of player 0 at every turn of random-agent episodes.
pub fn warmup_states(config: &ExperimentConfig, episodes: usize) -> Result<Vec<Vec<f64>>> {
    let mut points = Vec::new();
    let mut random = RandomEvaluator::new(0);
    for i in 0..episodes {
        let seed = derive(config.seed ^ WARMUP_STREAM, i as u64);
        random.begin_episode(i, seed)?;
        let map = config.episode_map(i)?;
        let mut rec = StateRecorder { inner: SettlementAgent { evaluator: &mut random }, points: &mut points };
        let mut agents: Vec<&mut dyn Agent> = vec![&mut rec];
        let mut others: Vec<YieldSumEvaluator> = (1..config.game.players).map(|_| YieldSumEvaluator).collect();
        let mut other_agents: Vec<SettlementAgent> = others.iter_mut().map(|e| SettlementAgent { evaluator: e }).collect();
        agents.extend(other_agents.iter_mut().map(|a| a as &mut dyn Agent));
        run_episode(&map, &config.game, seed, Some(i), vec![], &mut agents)?;
    }
    Ok(points)
}

/// Random-agent episodes on per-episode maps: the corpus the regressor
/// learns from.
pub fn bootstrap_corpus(mapgen: &MapGenConfig, game: &GameConfig, episodes: usize, seed: u64) -> Result<Vec<EpisodeLog>> {
    let config = ExperimentConfig { episodes, game: game.clone(), mapgen: mapgen.clone(), map: MapMode::PerEpisode, seed, window: 0.1 };
    let mut random = RandomEvaluator::new(seed);
    Ok(run_experiment(&config, &mut random, None)?.logs)
}

/// Cross-validates `config` on the corpus dataset, then trains on all of it.
pub fn train_regressor(dataset: &Dataset, config: &MlpConfig, folds: usize) -> Result<(MlpModel, TrainReport)> {
    let cv = kfold_cv(dataset, config, folds, config.seed)?;
    let norm = dataset.minmax_fit()?;
    let (model, full) = train(&dataset.normalized(&norm)?, config)?;
    Ok((model, TrainReport { epoch_loss: full.epoch_loss, ..cv }))
}

/// `(category, share)` rows; shares sum to one.
pub type Distribution = Vec<(String, f64)>;

fn shares(counts: &BTreeMap<TerrainKind, u64>, kinds: &[TerrainKind]) -> Result<Distribution> {
    let total: u64 = counts.values().sum();
    if total == 0 {
        return Err(Error::InsufficientData("no cities to build a terrain distribution from".into()));
    }
    Ok(kinds.iter().map(|k| (k.name().to_string(), counts.get(k).copied().unwrap_or(0) as f64 / total as f64)).collect())
}

/// Terrain of the center tile of every city player 0 founded.
pub fn center_terrain_distribution(logs: &[EpisodeLog]) -> Result<Distribution> {
    let mut counts = BTreeMap::new();
    for log in logs {
        let map = log.map()?;
        for f in log.foundings().filter(|f| f.player == 0) {
            *counts.entry(map.tile(f.center).expect("logged center in bounds").terrain).or_insert(0) += 1;
        }
    }
    shares(&counts, &TerrainKind::BUILDABLE)
}

/// Terrain of every tile player 0 owns at the end of an episode.
pub fn occupied_terrain_distribution(logs: &[EpisodeLog]) -> Result<Distribution> {
    let mut counts = BTreeMap::new();
    for log in logs {
        let map = log.map()?;
        for (c, p) in &log.footer.territory {
            if *p == 0 {
                *counts.entry(map.tile(*c).expect("logged tile in bounds").terrain).or_insert(0) += 1;
            }
        }
    }
    shares(&counts, &TerrainKind::ALL)
}

pub fn distribution_csv(d: &Distribution) -> String {
    let mut s = String::from("category,share\n");
    for (c, v) in d {
        s.push_str(&format!("{c},{v}\n"));
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmSummary {
    pub name: String,
    pub metrics: RunMetrics,
    pub first_window: f64,
    pub last_window: f64,
    pub improvement: f64,
    pub center_terrain: Distribution,
    pub occupied_terrain: Distribution,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    pub window: f64,
    pub a: ArmSummary,
    pub b: ArmSummary,
}

impl ComparisonReport {
    /// Relative difference of the last-window means, `(b - a) / a`.
    pub fn last_window_delta(&self) -> f64 {
        (self.b.last_window - self.a.last_window) / self.a.last_window
    }

    pub fn summary(&self) -> String {
        let mut s = format!("window {:.0}% of episodes\n", self.window * 100.0);
        for arm in [&self.a, &self.b] {
            s.push_str(&format!(
                "{}: episodes {} first {:.1} last {:.1} improvement {:+.2}%\n",
                arm.name,
                arm.metrics.len(),
                arm.first_window,
                arm.last_window,
                arm.improvement * 100.0
            ));
        }
        s.push_str(&format!("last-window delta ({} vs {}): {:+.2}%\n", self.b.name, self.a.name, self.last_window_delta() * 100.0));
        s
    }

    /// Writes `summary.txt`, the two metrics files and the four
    /// distribution tables into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("summary.txt"), self.summary())?;
        for (tag, arm) in [("a", &self.a), ("b", &self.b)] {
            fs::write(dir.join(format!("metrics_{tag}.csv")), arm.metrics.to_csv())?;
            fs::write(dir.join(format!("center_terrain_{tag}.csv")), distribution_csv(&arm.center_terrain))?;
            fs::write(dir.join(format!("occupied_terrain_{tag}.csv")), distribution_csv(&arm.occupied_terrain))?;
        }
        Ok(())
    }
}

fn arm(name: String, metrics: &RunMetrics, logs: &[EpisodeLog], window: f64) -> Result<ArmSummary> {
    let first = metrics.first_window_mean(window).ok_or_else(|| Error::InsufficientData(format!("run {name} has no episodes")))?;
    let last = metrics.last_window_mean(window).expect("non-empty");
    Ok(ArmSummary {
        improvement: if first > 0.0 { (last - first) / first } else { 0.0 },
        first_window: first,
        last_window: last,
        center_terrain: center_terrain_distribution(logs)?,
        occupied_terrain: occupied_terrain_distribution(logs)?,
        metrics: metrics.clone(),
        name,
    })
}

/// Compares two runs played under the same game config on the same maps.
pub fn compare(metrics_a: &RunMetrics, metrics_b: &RunMetrics, logs_a: &[EpisodeLog], logs_b: &[EpisodeLog], window: f64) -> Result<ComparisonReport> {
    for (la, lb) in logs_a.iter().zip(logs_b) {
        if la.header.config != lb.header.config {
            return Err(Error::config("runs use different game configs"));
        }
        if la.header.map != lb.header.map {
            return Err(Error::config(format!("runs play different maps in episode {:?}", la.header.episode)));
        }
    }
    let name = |logs: &[EpisodeLog], d: &str| logs.first().and_then(|l| l.header.agents.first().cloned()).unwrap_or_else(|| d.into());
    Ok(ComparisonReport {
        window,
        a: arm(name(logs_a, "a"), metrics_a, logs_a, window)?,
        b: arm(name(logs_b, "b"), metrics_b, logs_b, window)?,
    })
}

/// Logs of a run directory, in episode order.
pub fn load_run(dir: &Path) -> Result<Vec<EpisodeLog>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir.join("logs"))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "jsonl"));
    paths.sort();
    paths.iter().map(|p| EpisodeLog::read_jsonl(BufReader::new(fs::File::open(p)?))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(episodes: usize) -> ExperimentConfig {
        ExperimentConfig::fixed_map(episodes, 30, 1, 7).unwrap()
    }

    #[test]
    fn single_episode_metrics() {
        let out = run_experiment(&quick(1), &mut RandomEvaluator::new(0), None).unwrap();
        assert_eq!(out.metrics.len(), 1);
        assert_eq!(out.metrics, RunMetrics::from_logs(&out.logs));
    }

    #[test]
    fn placements_sorted_permutation() {
        let cfg = quick(1);
        let MapMode::Fixed(map) = &cfg.map else { unreachable!() };
        let state = GameState::new(map, &cfg.game).unwrap();
        let ranked = evaluate_placements(&mut YieldSumEvaluator, &state, 0).unwrap();
        let mut centers: Vec<Coord> = ranked.iter().map(|r| r.0).collect();
        centers.sort();
        assert_eq!(centers, state.legal_sites(0));
        assert!(ranked.windows(2).all(|w| w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0)));
        let best = state.legal_sites(0).into_iter().map(|c| YieldSumEvaluator.score(&state, 0, c).unwrap().0).fold(f64::MIN, f64::max);
        assert_eq!(ranked[0].1, best);
    }

    #[test]
    fn no_legal_sites_gives_empty_list() {
        let map = GameMap::filled(12, 12, 0, TerrainKind::Grassland);
        let cfg = GameConfig { players: 1, ..Default::default() };
        let mut state = GameState::new(&map, &cfg).unwrap();
        for t in state.map.coords().collect::<Vec<_>>() {
            state.map.tile_mut(t).unwrap().owner = Some(1);
        }
        assert!(evaluate_placements(&mut ConstantEvaluator(1.0), &state, 0).unwrap().is_empty());
    }

    #[test]
    fn metrics_windows_and_csv() {
        let m = RunMetrics { tgo: vec![10, 10, 20, 30, 40, 50, 60, 70, 80, 100] };
        assert_eq!(m.first_window_mean(0.1), Some(10.0));
        assert_eq!(m.last_window_mean(0.2), Some(90.0));
        assert_eq!(m.improvement(0.1), Some(9.0));
        let back = RunMetrics::from_csv(&m.to_csv()).unwrap();
        assert_eq!(back, m);
        let empty = RunMetrics::default();
        assert_eq!(empty.to_csv(), "episode,tgo,running_avg\n");
        assert_eq!(RunMetrics::from_csv(&empty.to_csv()).unwrap(), empty);
        assert_eq!(RunMetrics { tgo: vec![1, 2, 3] }.to_csv().lines().count(), 4);
    }

    #[test]
    fn compare_with_itself() {
        let out = run_experiment(&quick(4), &mut RandomEvaluator::new(0), None).unwrap();
        let r = compare(&out.metrics, &out.metrics, &out.logs, &out.logs, 0.25).unwrap();
        assert_eq!(r.a.improvement, r.b.improvement);
        assert_eq!(r.last_window_delta(), 0.0);
        for d in [&r.a.center_terrain, &r.a.occupied_terrain] {
            assert!((d.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn compare_rejects_other_maps() {
        let a = run_experiment(&quick(1), &mut RandomEvaluator::new(0), None).unwrap();
        let other = ExperimentConfig::fixed_map(1, 30, 2, 7).unwrap();
        let b = run_experiment(&other, &mut RandomEvaluator::new(0), None).unwrap();
        assert!(compare(&a.metrics, &b.metrics, &a.logs, &b.logs, 0.1).is_err());
    }

    #[test]
    fn constant_stubs_play_identically() {
        let cfg = quick(2);
        let a = run_experiment(&cfg, &mut ConstantEvaluator(3.0), None).unwrap();
        let b = run_experiment(&cfg, &mut ConstantEvaluator(-1.0), None).unwrap();
        for (x, y) in a.logs.iter().zip(&b.logs) {
            assert_eq!(x.turns.len(), y.turns.len());
            assert_eq!(x.foundings().map(|f| f.center).collect::<Vec<_>>(), y.foundings().map(|f| f.center).collect::<Vec<_>>());
            assert_eq!(x.footer, y.footer);
        }
    }

    #[test]
    fn per_episode_maps_depend_on_index_only() {
        let mut cfg = quick(3);
        cfg.map = MapMode::PerEpisode;
        let m2 = cfg.episode_map(2).unwrap();
        cfg.episodes = 10;
        assert_eq!(cfg.episode_map(2).unwrap(), m2);
        assert_ne!(cfg.episode_map(1).unwrap(), m2);
    }
}
