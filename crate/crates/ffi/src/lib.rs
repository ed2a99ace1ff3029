//! C ABI over the settlebench core.
//!
//! Objects are opaque handles created by `sb_*_new`/`sb_*_load`-style calls
//! and released with the matching `sb_*_free`. Every fallible call returns an
//! [`SbStatus`]; on failure `sb_last_error_message` describes the problem
//! for the calling thread. Strings handed out by the library must be
//! released with `sb_string_free`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use settlebench::engine::OutputPoints;
use settlebench::harness::{run_experiment, ExperimentConfig, MapMode, RandomEvaluator, RlConfig, RuleEvaluator, RunMetrics};
use settlebench::mlp::MlpModel;
use settlebench::rl::ValueTable;
use settlebench::rulekb::{default_kb, score_cluster, ClusterFacts, KnowledgeBase, MaxChooser};
use settlebench::world::{decode_map, encode_map, generate_map, Coord, GameMap, MapGenConfig};
use settlebench::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    NotFound = 5,
    Runtime = 6,
    Panic = 7,
}

pub struct SbMap(GameMap);
pub struct SbKnowledgeBase(KnowledgeBase);
pub struct SbValueTable(ValueTable);
pub struct SbMlp(MlpModel);
pub struct SbMetrics(RunMetrics);

/// The six point kinds a city produces in one turn.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct SbOutputPoints {
    pub gold: u64,
    pub luxury: u64,
    pub science: u64,
    pub food: u64,
    pub production: u64,
    pub trade: u64,
}

/// Evaluator driving player 0 in [`sb_experiment_run`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SbEvaluator {
    RuleBase = 0,
    Random = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct SbExperimentParams {
    pub evaluator: SbEvaluator,
    pub episodes: u32,
    pub turns: u32,
    pub map_seed: u64,
    pub seed: u64,
    /// Zero plays every episode on the map from `map_seed`; non-zero
    /// generates a map per episode.
    pub per_episode_maps: u8,
    pub epsilon: f64,
    /// Output directory for logs and metrics; may be null.
    pub out_dir: *const c_char,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SbStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) => SbStatus::Io,
            Error::Parse { .. } | Error::Json(_) => SbStatus::Parse,
            Error::InvalidConfig(_) | Error::ClusterOutOfBounds { .. } | Error::DimensionMismatch { .. } => SbStatus::InvalidArgument,
            Error::NotFound(_) => SbStatus::NotFound,
            _ => SbStatus::Runtime,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> SbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SbStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SbStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure(SbStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure(SbStatus::NullPointer, format!("{what} is null")))
}

unsafe fn string_arg(p: *const c_char, what: &str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(Failure(SbStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map(str::to_owned).map_err(|_| Failure(SbStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s).map(CString::into_raw).map_err(|_| Failure(SbStatus::Runtime, "string contains NUL".into()))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn sb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub unsafe extern "C" fn sb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub unsafe extern "C" fn sb_map_generate(width: u32, height: u32, seed: u64, out_map: *mut *mut SbMap) -> SbStatus {
    guard(|| {
        let slot = out(out_map, "out_map")?;
        let map = generate_map(&MapGenConfig { width, height, ..Default::default() }, seed)?;
        *slot = boxed(SbMap(map));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sb_map_from_text(text: *const c_char, out_map: *mut *mut SbMap) -> SbStatus {
    guard(|| {
        let slot = out(out_map, "out_map")?;
        let map = decode_map(&string_arg(text, "text")?)?;
        *slot = boxed(SbMap(map));
        Ok(())
    })
}

/// Writes a newly allocated string; free it with `sb_string_free`.
#[no_mangle]
pub unsafe extern "C" fn sb_map_to_text(map: *const SbMap, out_text: *mut *mut c_char) -> SbStatus {
    guard(|| {
        let map = get(map, "map")?;
        let slot = out(out_text, "out_text")?;
        *slot = c_string(encode_map(&map.0))?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sb_map_size(map: *const SbMap, out_width: *mut u32, out_height: *mut u32) -> SbStatus {
    guard(|| {
        let map = get(map, "map")?;
        *out(out_width, "out_width")? = map.0.width;
        *out(out_height, "out_height")? = map.0.height;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sb_map_buildable_fraction(map: *const SbMap, out_fraction: *mut f64) -> SbStatus {
    guard(|| {
        let map = get(map, "map")?;
        *out(out_fraction, "out_fraction")? = map.0.buildable_fraction();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sb_map_free(map: *mut SbMap) {
    free(map);
}

#[no_mangle]
pub unsafe extern "C" fn sb_kb_default(out_kb: *mut *mut SbKnowledgeBase) -> SbStatus {
    guard(|| {
        *out(out_kb, "out_kb")? = boxed(SbKnowledgeBase(default_kb()));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sb_kb_from_text(text: *const c_char, out_kb: *mut *mut SbKnowledgeBase) -> SbStatus {
    guard(|| {
        let slot = out(out_kb, "out_kb")?;
        let kb = KnowledgeBase::from_text(&string_arg(text, "text")?)?;
        *slot = boxed(SbKnowledgeBase(kb));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sb_kb_to_text(kb: *const SbKnowledgeBase, out_text: *mut *mut c_char) -> SbStatus {
    guard(|| {
        let kb = get(kb, "kb")?;
        *out(out_text, "out_text")? = c_string(kb.0.to_text())?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sb_kb_rule_count(kb: *const SbKnowledgeBase, out_count: *mut usize) -> SbStatus {
    guard(|| {
        let kb = get(kb, "kb")?;
        *out(out_count, "out_count")? = kb.0.rule_count();
        Ok(())
    })
}

/// Score of the cluster centered at `(x, y)` taking the highest alternative
/// of every fired family.
#[no_mangle]
pub unsafe extern "C" fn sb_kb_score_max(kb: *const SbKnowledgeBase, map: *const SbMap, x: i32, y: i32, out_score: *mut i64) -> SbStatus {
    guard(|| {
        let kb = get(kb, "kb")?;
        let map = get(map, "map")?;
        let slot = out(out_score, "out_score")?;
        let facts = ClusterFacts::at(&map.0, Coord::new(x, y))?;
        *slot = score_cluster(&kb.0, &facts, &mut MaxChooser)?.0;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sb_kb_free(kb: *mut SbKnowledgeBase) {
    free(kb);
}

#[no_mangle]
pub unsafe extern "C" fn sb_value_table_load(path: *const c_char, out_table: *mut *mut SbValueTable) -> SbStatus {
    guard(|| {
        let slot = out(out_table, "out_table")?;
        let table = ValueTable::load(&PathBuf::from(string_arg(path, "path")?))?;
        *slot = boxed(SbValueTable(table));
        Ok(())
    })
}

/// Number of stored action values.
#[no_mangle]
pub unsafe extern "C" fn sb_value_table_len(table: *const SbValueTable, out_len: *mut usize) -> SbStatus {
    guard(|| {
        let table = get(table, "table")?;
        *out(out_len, "out_len")? = table.0.len();
        Ok(())
    })
}

/// Mean reward and visit count of one rule in one state; `NotFound` if the
/// rule was never chosen there.
#[no_mangle]
pub unsafe extern "C" fn sb_value_table_q(
    table: *const SbValueTable,
    state: usize,
    family: usize,
    rule: usize,
    out_mean: *mut f64,
    out_count: *mut u64,
) -> SbStatus {
    guard(|| {
        let table = get(table, "table")?;
        let q = table.0.q(state, family, rule).ok_or_else(|| Failure(SbStatus::NotFound, format!("no value for state {state} rule {rule}")))?;
        *out(out_mean, "out_mean")? = q.mean;
        *out(out_count, "out_count")? = q.count;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sb_value_table_free(table: *mut SbValueTable) {
    free(table);
}

#[no_mangle]
pub unsafe extern "C" fn sb_mlp_load(path: *const c_char, out_model: *mut *mut SbMlp) -> SbStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let model = MlpModel::load(&PathBuf::from(string_arg(path, "path")?))?;
        *slot = boxed(SbMlp(model));
        Ok(())
    })
}

/// Predicted label for a raw (unnormalized) feature vector.
#[no_mangle]
pub unsafe extern "C" fn sb_mlp_predict(model: *const SbMlp, features: *const f64, len: usize, out_value: *mut f64) -> SbStatus {
    guard(|| {
        let model = get(model, "model")?;
        let x = get(features, "features")?;
        let x = std::slice::from_raw_parts(x, len);
        *out(out_value, "out_value")? = model.0.predict(x)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sb_mlp_free(model: *mut SbMlp) {
    free(model);
}

/// `gold + luxury + science + food + 2 * production + trade`
#[no_mangle]
pub unsafe extern "C" fn sb_city_output(points: *const SbOutputPoints, out_weight: *mut u64) -> SbStatus {
    guard(|| {
        let p = get(points, "points")?;
        let points =
            OutputPoints { gold: p.gold, luxury: p.luxury, science: p.science, food: p.food, production: p.production, trade: p.trade };
        *out(out_weight, "out_weight")? = points.weight();
        Ok(())
    })
}

/// Runs a training experiment and returns its per-episode metrics.
#[no_mangle]
pub unsafe extern "C" fn sb_experiment_run(params: *const SbExperimentParams, out_metrics: *mut *mut SbMetrics) -> SbStatus {
    guard(|| {
        let p = *get(params, "params")?;
        let slot = out(out_metrics, "out_metrics")?;
        let out_dir = if p.out_dir.is_null() { None } else { Some(PathBuf::from(string_arg(p.out_dir, "out_dir")?)) };
        let mut config = ExperimentConfig::fixed_map(p.episodes as usize, p.turns, p.map_seed, p.seed)?;
        if p.per_episode_maps != 0 {
            config.map = MapMode::PerEpisode;
        }
        let metrics = match p.evaluator {
            SbEvaluator::RuleBase => {
                let rl = RlConfig { epsilon: p.epsilon, ..Default::default() };
                let mut kb = RuleEvaluator::warm_up(&config, &rl)?;
                run_experiment(&config, &mut kb, out_dir.as_deref())?.metrics
            }
            SbEvaluator::Random => run_experiment(&config, &mut RandomEvaluator::new(p.seed), out_dir.as_deref())?.metrics,
        };
        *slot = boxed(SbMetrics(metrics));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sb_metrics_len(metrics: *const SbMetrics, out_len: *mut usize) -> SbStatus {
    guard(|| {
        let m = get(metrics, "metrics")?;
        *out(out_len, "out_len")? = m.0.len();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sb_metrics_tgo(metrics: *const SbMetrics, episode: usize, out_tgo: *mut u64) -> SbStatus {
    guard(|| {
        let m = get(metrics, "metrics")?;
        let v = *m.0.tgo.get(episode).ok_or_else(|| Failure(SbStatus::InvalidArgument, format!("episode {episode} out of range")))?;
        *out(out_tgo, "out_tgo")? = v;
        Ok(())
    })
}

/// Relative change between the first and last `window` share of episodes.
#[no_mangle]
pub unsafe extern "C" fn sb_metrics_improvement(metrics: *const SbMetrics, window: f64, out_improvement: *mut f64) -> SbStatus {
    guard(|| {
        let m = get(metrics, "metrics")?;
        let v = m.0.improvement(window).ok_or_else(|| Failure(SbStatus::InvalidArgument, "no episodes".into()))?;
        *out(out_improvement, "out_improvement")? = v;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sb_metrics_free(metrics: *mut SbMetrics) {
    free(metrics);
}
