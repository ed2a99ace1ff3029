//! Multi-expert scoring knowledge base.
//!
//! Each family holds rules with one shared condition and different point
//! values. When a family's condition holds for a cluster, exactly one of its
//! rules fires; which one is decided by a [`Chooser`] (the learned policy in
//! the rule-based arm). Families contribute independently, so the cluster
//! score is the plain sum of the chosen rules' points.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{cluster_at, Coord, GameMap, MapCluster, SpecialKind, TerrainKind};

pub type FamilyId = usize;
pub type RuleId = usize;

pub const POINTS_MIN: i32 = -20;
pub const POINTS_MAX: i32 = 20;

/// Cluster-local predicate shared by all rules of a family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    CenterTerrain(TerrainKind),
    SpecialOnCenter,
    /// At least one special on the 20 non-center tiles.
    SpecialsAround,
    /// At least one Ocean or DeepOcean tile in the cluster.
    WaterAccess,
    DeepOceanAccess,
    WhalePresence,
}

impl Condition {
    pub fn holds(&self, facts: &ClusterFacts) -> bool {
        match *self {
            Condition::CenterTerrain(t) => facts.center_terrain == t,
            Condition::SpecialOnCenter => facts.center_special.is_some(),
            Condition::SpecialsAround => facts.specials_around > 0,
            Condition::WaterAccess => facts.water_tiles > 0,
            Condition::DeepOceanAccess => facts.deep_ocean_tiles > 0,
            Condition::WhalePresence => facts.whales > 0,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Condition::CenterTerrain(t) => format!("center tile is {}", t.name()),
            Condition::SpecialOnCenter => "special resource on the center tile".into(),
            Condition::SpecialsAround => "special resources on surrounding tiles".into(),
            Condition::WaterAccess => "ocean tiles within the cluster".into(),
            Condition::DeepOceanAccess => "deep ocean within the cluster".into(),
            Condition::WhalePresence => "whales within the cluster".into(),
        }
    }

    fn key(&self) -> String {
        match self {
            Condition::CenterTerrain(t) => format!("center-terrain:{}", t.name()),
            Condition::SpecialOnCenter => "special-on-center".into(),
            Condition::SpecialsAround => "specials-around".into(),
            Condition::WaterAccess => "water-access".into(),
            Condition::DeepOceanAccess => "deep-ocean-access".into(),
            Condition::WhalePresence => "whale-presence".into(),
        }
    }

    fn from_key(key: &str) -> Option<Condition> {
        if let Some(name) = key.strip_prefix("center-terrain:") {
            return TerrainKind::ALL.into_iter().find(|t| t.name() == name).map(Condition::CenterTerrain);
        }
        Some(match key {
            "special-on-center" => Condition::SpecialOnCenter,
            "specials-around" => Condition::SpecialsAround,
            "water-access" => Condition::WaterAccess,
            "deep-ocean-access" => Condition::DeepOceanAccess,
            "whale-presence" => Condition::WhalePresence,
            _ => return None,
        })
    }
}

/// What the rule conditions can see of a cluster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterFacts {
    pub center: Coord,
    pub center_terrain: TerrainKind,
    pub center_special: Option<SpecialKind>,
    pub specials_around: usize,
    pub water_tiles: usize,
    pub deep_ocean_tiles: usize,
    pub whales: usize,
}

impl ClusterFacts {
    pub fn from_cluster(map: &GameMap, cluster: &MapCluster) -> Self {
        let tile = |c: Coord| map.tile(c).expect("cluster tiles are in bounds");
        let center = tile(cluster.center);
        let mut facts = ClusterFacts {
            center: cluster.center,
            center_terrain: center.terrain,
            center_special: center.special,
            specials_around: 0,
            water_tiles: 0,
            deep_ocean_tiles: 0,
            whales: 0,
        };
        for c in &cluster.tiles {
            let t = tile(*c);
            if *c != cluster.center && t.special.is_some() {
                facts.specials_around += 1;
            }
            if t.terrain.is_water() {
                facts.water_tiles += 1;
            }
            if t.terrain == TerrainKind::DeepOcean {
                facts.deep_ocean_tiles += 1;
            }
            if t.special == Some(SpecialKind::Whales) {
                facts.whales += 1;
            }
        }
        facts
    }

    pub fn at(map: &GameMap, center: Coord) -> Result<Self> {
        Ok(Self::from_cluster(map, &cluster_at(map, center)?))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScoringRule {
    pub id: RuleId,
    pub family: FamilyId,
    pub condition: Condition,
    pub points: i32,
}

/// Rules with an identical condition and pairwise distinct points.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConflictSet {
    pub family: FamilyId,
    pub name: String,
    pub condition: Condition,
    pub rules: Vec<ScoringRule>,
}

impl ConflictSet {
    pub fn rule(&self, id: RuleId) -> Option<&ScoringRule> {
        self.rules.iter().find(|r| r.id == id)
    }

    pub fn position(&self, id: RuleId) -> Option<usize> {
        self.rules.iter().position(|r| r.id == id)
    }

    pub fn max_points(&self) -> i32 {
        self.rules.iter().map(|r| r.points).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnowledgeBase {
    families: Vec<ConflictSet>,
}

/// The shipped point table. Each family's alternatives run from a penalty to
/// a strong bonus, so the experts genuinely disagree and the learner has
/// something to arbitrate. The center-special family keeps the 1/5/10 trio,
/// desert never scores above zero, and alternatives are in ascending order.
pub const DEFAULT_TABLE: [(&str, Condition, [i32; 4]); 14] = [
    ("TerrainDesert", Condition::CenterTerrain(TerrainKind::Desert), [-10, -6, -3, 0]),
    ("TerrainForest", Condition::CenterTerrain(TerrainKind::Forest), [-6, 0, 6, 12]),
    ("TerrainGrassland", Condition::CenterTerrain(TerrainKind::Grassland), [-4, 4, 10, 16]),
    ("TerrainHills", Condition::CenterTerrain(TerrainKind::Hills), [-6, 0, 6, 12]),
    ("TerrainJungle", Condition::CenterTerrain(TerrainKind::Jungle), [-10, -4, 4, 10]),
    ("TerrainMountains", Condition::CenterTerrain(TerrainKind::Mountains), [-12, -6, 2, 8]),
    ("TerrainPlains", Condition::CenterTerrain(TerrainKind::Plains), [-4, 4, 10, 16]),
    ("TerrainSwamp", Condition::CenterTerrain(TerrainKind::Swamp), [-12, -6, 2, 8]),
    ("TerrainTundra", Condition::CenterTerrain(TerrainKind::Tundra), [-12, -6, 2, 8]),
    ("ResourceOnTile", Condition::SpecialOnCenter, [-6, 1, 5, 10]),
    ("ResourcesAround", Condition::SpecialsAround, [-4, 2, 6, 12]),
    ("OceanTileBonus", Condition::WaterAccess, [-8, 0, 6, 12]),
    ("DeepOceanAccess", Condition::DeepOceanAccess, [-8, -3, 2, 6]),
    ("WhaleBonus", Condition::WhalePresence, [-4, 2, 6, 12]),
];

pub fn default_kb() -> KnowledgeBase {
    let mut next = 0;
    let families = DEFAULT_TABLE
        .iter()
        .enumerate()
        .map(|(family, (name, condition, points))| {
            let rules = points
                .iter()
                .map(|&p| {
                    let r = ScoringRule { id: next, family, condition: *condition, points: p };
                    next += 1;
                    r
                })
                .collect();
            ConflictSet { family, name: (*name).to_string(), condition: *condition, rules }
        })
        .collect();
    KnowledgeBase { families }
}

impl KnowledgeBase {
    /// Builds a knowledge base, checking conflict-set structure: family ids
    /// match positions, every family has at least two rules sharing its
    /// condition, points are pairwise distinct, rule ids are unique.
    pub fn new(families: Vec<ConflictSet>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for (i, f) in families.iter().enumerate() {
            if f.family != i {
                return Err(Error::config(format!("family {} stored at position {i}", f.family)));
            }
            if f.rules.len() < 2 {
                return Err(Error::config(format!("family {} has fewer than two rules", f.name)));
            }
            let mut pts = Vec::new();
            for r in &f.rules {
                if r.family != i || r.condition != f.condition {
                    return Err(Error::config(format!("rule {} does not share family {} condition", r.id, f.name)));
                }
                if !seen.insert(r.id) {
                    return Err(Error::config(format!("duplicate rule id {}", r.id)));
                }
                if pts.contains(&r.points) {
                    return Err(Error::config(format!("family {} repeats {} points", f.name, r.points)));
                }
                pts.push(r.points);
            }
        }
        Ok(KnowledgeBase { families })
    }

    pub fn validate_point_range(&self) -> Result<()> {
        for r in self.rules() {
            if !(POINTS_MIN..=POINTS_MAX).contains(&r.points) {
                return Err(Error::config(format!("rule {} points {} outside [{POINTS_MIN}, {POINTS_MAX}]", r.id, r.points)));
            }
        }
        Ok(())
    }

    pub fn families(&self) -> &[ConflictSet] {
        &self.families
    }

    pub fn family(&self, id: FamilyId) -> Option<&ConflictSet> {
        self.families.get(id)
    }

    pub fn rules(&self) -> impl Iterator<Item = &ScoringRule> {
        self.families.iter().flat_map(|f| f.rules.iter())
    }

    pub fn rule_count(&self) -> usize {
        self.families.iter().map(|f| f.rules.len()).sum()
    }

    /// Same structure with every point value multiplied by `factor`. The
    /// result is not range-checked.
    pub fn scaled(&self, factor: i32) -> KnowledgeBase {
        let mut kb = self.clone();
        for f in &mut kb.families {
            for r in &mut f.rules {
                r.points *= factor;
            }
        }
        kb
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("knowledge-base v1\n");
        for f in &self.families {
            let _ = writeln!(out, "family {} {} {}", f.family, f.name, f.condition.key());
            for r in &f.rules {
                let _ = writeln!(out, "rule {} {}", r.id, r.points);
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "knowledge-base v1")) => {}
            _ => return Err(Error::parse(1, "expected `knowledge-base v1` header")),
        }
        let mut families: Vec<ConflictSet> = Vec::new();
        let mut ended = false;
        for (i, line) in lines {
            let ln = i + 1;
            if ended {
                if line.trim().is_empty() {
                    continue;
                }
                return Err(Error::parse(ln, "content after `end`"));
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.as_slice() {
                ["family", id, name, key] => {
                    let family: usize = id.parse().map_err(|_| Error::parse(ln, "bad family id"))?;
                    let condition = Condition::from_key(key).ok_or_else(|| Error::parse(ln, format!("unknown condition {key:?}")))?;
                    families.push(ConflictSet { family, name: name.to_string(), condition, rules: Vec::new() });
                }
                ["rule", id, points] => {
                    let set = families.last_mut().ok_or_else(|| Error::parse(ln, "rule before any family"))?;
                    let id: usize = id.parse().map_err(|_| Error::parse(ln, "bad rule id"))?;
                    let points: i32 = points.parse().map_err(|_| Error::parse(ln, "bad points"))?;
                    set.rules.push(ScoringRule { id, family: set.family, condition: set.condition, points });
                }
                ["end"] => ended = true,
                _ => return Err(Error::parse(ln, format!("unrecognized line {line:?}"))),
            }
        }
        if !ended {
            return Err(Error::parse(text.lines().count() + 1, "missing `end` (truncated file?)"));
        }
        let kb = KnowledgeBase::new(families)?;
        kb.validate_point_range()?;
        Ok(kb)
    }
}

/// The applicable conflict sets for a cluster, in family order.
pub fn match_rules<'a>(kb: &'a KnowledgeBase, facts: &ClusterFacts) -> Vec<&'a ConflictSet> {
    kb.families.iter().filter(|f| f.condition.holds(facts)).collect()
}

/// A chooser's pick from one conflict set, with the selection probability
/// of every member (aligned with `set.rules`) at decision time.
#[derive(Clone, Debug, PartialEq)]
pub struct Choice {
    pub rule: RuleId,
    pub probabilities: Vec<f64>,
}

impl Choice {
    pub fn certain(set: &ConflictSet, rule: RuleId) -> Self {
        let probabilities = set.rules.iter().map(|r| if r.id == rule { 1.0 } else { 0.0 }).collect();
        Choice { rule, probabilities }
    }
}

pub trait Chooser {
    fn choose(&mut self, set: &ConflictSet) -> Result<Choice>;
}

impl<F> Chooser for F
where
    F: FnMut(&ConflictSet) -> Choice,
{
    fn choose(&mut self, set: &ConflictSet) -> Result<Choice> {
        Ok(self(set))
    }
}

/// Always the highest-points member.
#[derive(Clone, Copy, Debug, Default)]
pub struct MaxChooser;

impl Chooser for MaxChooser {
    fn choose(&mut self, set: &ConflictSet) -> Result<Choice> {
        let best = set.rules.iter().max_by_key(|r| r.points).ok_or_else(|| Error::config("empty conflict set"))?;
        Ok(Choice::certain(set, best.id))
    }
}

/// Picks the member at a fixed position per family (position 0 otherwise).
#[derive(Clone, Debug, Default)]
pub struct PositionChooser(pub std::collections::BTreeMap<FamilyId, usize>);

impl Chooser for PositionChooser {
    fn choose(&mut self, set: &ConflictSet) -> Result<Choice> {
        let pos = self.0.get(&set.family).copied().unwrap_or(0);
        let rule = set.rules.get(pos).ok_or_else(|| Error::config(format!("family {} has no position {pos}", set.family)))?;
        Ok(Choice::certain(set, rule.id))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alternative {
    pub rule: RuleId,
    pub points: i32,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub family: FamilyId,
    pub family_name: String,
    pub condition: String,
    pub rule: RuleId,
    pub points: i32,
    pub alternatives: Vec<Alternative>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTrace {
    pub entries: Vec<TraceEntry>,
    pub total: i64,
}

impl ScoreTrace {
    pub fn contributed(&self) -> i64 {
        self.entries.iter().map(|e| i64::from(e.points)).sum()
    }
}

pub fn score_cluster<C: Chooser + ?Sized>(kb: &KnowledgeBase, facts: &ClusterFacts, chooser: &mut C) -> Result<(i64, ScoreTrace)> {
    let mut trace = ScoreTrace::default();
    for set in match_rules(kb, facts) {
        let choice = chooser.choose(set)?;
        let rule = set.rule(choice.rule).ok_or(Error::NotAMember { family: set.family, rule: choice.rule })?;
        if choice.probabilities.len() != set.rules.len() {
            return Err(Error::DimensionMismatch { expected: set.rules.len(), got: choice.probabilities.len() });
        }
        let alternatives = set
            .rules
            .iter()
            .zip(&choice.probabilities)
            .map(|(r, p)| Alternative { rule: r.id, points: r.points, probability: *p })
            .collect();
        trace.total += i64::from(rule.points);
        trace.entries.push(TraceEntry {
            family: set.family,
            family_name: set.name.clone(),
            condition: set.condition.describe(),
            rule: rule.id,
            points: rule.points,
            alternatives,
        });
    }
    Ok((trace.total, trace))
}

/// One line per fired family, ordered by family id.
pub fn explain(trace: &ScoreTrace) -> Vec<String> {
    if trace.entries.is_empty() {
        return vec!["no rules fired".to_string()];
    }
    let mut entries: Vec<&TraceEntry> = trace.entries.iter().collect();
    entries.sort_by_key(|e| e.family);
    entries
        .into_iter()
        .map(|e| {
            let alts: Vec<String> = e
                .alternatives
                .iter()
                .map(|a| format!("r{}:{:+}@{:.4}", a.rule, a.points, a.probability))
                .collect();
            format!("{} [{}] rule r{} {:+} points; alternatives {}", e.family_name, e.condition, e.rule, e.points, alts.join(" "))
        })
        .collect()
}
