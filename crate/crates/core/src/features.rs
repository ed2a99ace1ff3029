//! Cluster feature vectors, city labels and the regression dataset.
//!
//! Layout (D = 60, version 1):
//!
//! | block                        | dim |
//! |------------------------------|-----|
//! | center terrain one-hot       |  9  |
//! | surrounding terrain counts   | 11  |
//! | center special one-hot       | 17  |
//! | surrounding special counts   | 17  |
//! | river on center              |  1  |
//! | ocean access                 |  1  |
//! | deep ocean access            |  1  |
//! | whale count                  |  1  |
//! | own cities in the band       |  1  |
//! | enemy cities in the band     |  1  |
//!
//! The band is the 9x9 block around the center minus the cluster: a two
//! tile wide ring outside the city border.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::engine::{EpisodeLog, OutputPoints};
use crate::error::{Error, Result};
use crate::world::{cluster_at, decode_map, CityId, Coord, GameMap, PlayerId, SpecialKind, TerrainKind};

pub const FEATURE_DIM: usize = 60;
pub const LAYOUT_VERSION: u32 = 1;
/// Turns of a city's life that count towards its label.
pub const LABEL_HORIZON: usize = 100;

const CENTER_TERRAIN: usize = 0;
const AROUND_TERRAIN: usize = 9;
const CENTER_SPECIAL: usize = 20;
const AROUND_SPECIAL: usize = 37;
const RIVER: usize = 54;
const OCEAN: usize = 55;
const DEEP_OCEAN: usize = 56;
const WHALES: usize = 57;
const MY_NEIGHB: usize = 58;
const ENEMY_NEIGHB: usize = 59;

fn snake(name: &str) -> String {
    let mut out = String::new();
    for (i, ch) in name.chars().enumerate() {
        if ch.is_uppercase() && i > 0 {
            out.push('_');
        }
        out.push(ch.to_ascii_lowercase());
    }
    out
}

/// Column names of the layout, in order.
pub fn feature_names() -> Vec<String> {
    let mut names = Vec::with_capacity(FEATURE_DIM);
    names.extend(TerrainKind::BUILDABLE.iter().map(|t| format!("center_terrain_{}", snake(t.name()))));
    names.extend(TerrainKind::ALL.iter().map(|t| format!("around_terrain_{}", snake(t.name()))));
    names.extend(SpecialKind::ALL.iter().map(|s| format!("center_special_{}", snake(s.name()))));
    names.extend(SpecialKind::ALL.iter().map(|s| format!("around_special_{}", snake(s.name()))));
    names.extend(["center_river", "ocean_access", "deep_ocean_access", "whale_count", "my_neighb", "enemy_neighb"].map(String::from));
    debug_assert_eq!(names.len(), FEATURE_DIM);
    names
}

/// Feature vector of the cluster at `center` as seen by `player`, with
/// `cities` the existing cities as `(location, owner)`.
pub fn extract_features(map: &GameMap, center: Coord, player: PlayerId, cities: &[(Coord, PlayerId)]) -> Result<Vec<f64>> {
    let cluster = cluster_at(map, center)?;
    let mut v = vec![0.0; FEATURE_DIM];
    let c = map.tile(center).expect("cluster center in bounds");
    let ti = TerrainKind::BUILDABLE
        .iter()
        .position(|t| *t == c.terrain)
        .ok_or_else(|| Error::InvalidConfig(format!("{} is not a buildable center", c.terrain.name())))?;
    v[CENTER_TERRAIN + ti] = 1.0;
    if let Some(s) = c.special {
        v[CENTER_SPECIAL + s.index()] = 1.0;
    }
    if c.river {
        v[RIVER] = 1.0;
    }
    for co in &cluster.tiles {
        let t = map.tile(*co).expect("cluster in bounds");
        if *co != center {
            v[AROUND_TERRAIN + t.terrain.index()] += 1.0;
            if let Some(s) = t.special {
                v[AROUND_SPECIAL + s.index()] += 1.0;
            }
        }
        if t.terrain.is_water() {
            v[OCEAN] = 1.0;
        }
        if t.terrain == TerrainKind::DeepOcean {
            v[DEEP_OCEAN] = 1.0;
        }
        if t.special == Some(SpecialKind::Whales) {
            v[WHALES] += 1.0;
        }
    }
    for (loc, owner) in cities {
        if center.distance(*loc) <= 4 && !cluster.contains(*loc) {
            if *owner == player {
                v[MY_NEIGHB] += 1.0;
            } else {
                v[ENEMY_NEIGHB] += 1.0;
            }
        }
    }
    Ok(v)
}

fn city_points(log: &EpisodeLog, city: CityId) -> impl Iterator<Item = OutputPoints> + '_ {
    log.turns.iter().filter_map(move |t| t.cities.iter().find(|c| c.id == city).map(|c| c.points))
}

/// Output of the city over its first 100 turns; turns past the end of the
/// log count as zero.
pub fn city_label(log: &EpisodeLog, city: CityId) -> Result<u64> {
    if !log.foundings().any(|f| f.city == city) {
        return Err(Error::NotFound(format!("city {city} in log")));
    }
    Ok(city_points(log, city).take(LABEL_HORIZON).map(|p| p.weight()).sum())
}

/// Feature rows of every city in a log (all players), with labels. Each
/// city is described as its cluster looked when it was founded: only cities
/// with a lower id count as neighbors.
pub fn log_rows(log: &EpisodeLog) -> Result<Vec<(Vec<f64>, u64)>> {
    let map = decode_map(&log.header.map)?;
    let foundings: Vec<_> = log.foundings().cloned().collect();
    let mut rows = Vec::with_capacity(foundings.len());
    for f in &foundings {
        let earlier: Vec<(Coord, PlayerId)> = foundings.iter().filter(|o| o.city < f.city).map(|o| (o.center, o.player)).collect();
        rows.push((extract_features(&map, f.center, f.player, &earlier)?, city_label(log, f.city)?));
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEntry {
    pub features: Vec<f64>,
    pub label: f64,
}

/// Per-column min and max.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl Normalization {
    pub fn fit<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut it = rows.into_iter();
        let first = it.next().ok_or_else(|| Error::InsufficientData("min-max fit needs at least one row".into()))?;
        let mut mins = first.to_vec();
        let mut maxs = first.to_vec();
        for row in it {
            if row.len() != mins.len() {
                return Err(Error::DimensionMismatch { expected: mins.len(), got: row.len() });
            }
            for (i, x) in row.iter().enumerate() {
                mins[i] = mins[i].min(*x);
                maxs[i] = maxs[i].max(*x);
            }
        }
        Ok(Normalization { mins, maxs })
    }

    pub fn dim(&self) -> usize {
        self.mins.len()
    }

    /// `(x - min) / (max - min)` per column; constant columns give 0 and
    /// values outside the fitted range are not clamped.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(x.iter()
            .zip(self.mins.iter().zip(&self.maxs))
            .map(|(v, (lo, hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
            .collect())
    }

    pub fn to_text(&self, names: &[String]) -> String {
        let mut s = format!("minmax v{LAYOUT_VERSION} {}\n", self.dim());
        for i in 0..self.dim() {
            let name = names.get(i).map(String::as_str).unwrap_or("-");
            s.push_str(&format!("{name} {} {}\n", self.mins[i], self.maxs[i]));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, head) = lines.next().ok_or_else(|| Error::parse(1, "empty normalization file"))?;
        let dim: usize = match head.split_whitespace().collect::<Vec<_>>()[..] {
            ["minmax", v, d] if v == format!("v{LAYOUT_VERSION}") => d.parse().map_err(|_| Error::parse(1, "bad dimension"))?,
            _ => return Err(Error::parse(1, "expected `minmax v1 <dim>`")),
        };
        let mut mins = Vec::with_capacity(dim);
        let mut maxs = Vec::with_capacity(dim);
        for (i, line) in lines {
            let parts: Vec<_> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(Error::parse(i + 1, "expected `name min max`"));
            }
            let p = |s: &str| s.parse::<f64>().map_err(|_| Error::parse(i + 1, format!("bad number {s:?}")));
            mins.push(p(parts[1])?);
            maxs.push(p(parts[2])?);
        }
        if mins.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: mins.len() });
        }
        Ok(Normalization { mins, maxs })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    pub entries: Vec<DatasetEntry>,
    /// Set when `entries` hold normalized features.
    pub normalization: Option<Normalization>,
}

impl Dataset {
    pub fn new(entries: Vec<DatasetEntry>) -> Self {
        Dataset { names: feature_names(), entries, normalization: None }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.entries.first().map_or(self.names.len(), |e| e.features.len())
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            names: self.names.clone(),
            entries: idx.iter().map(|&i| self.entries[i].clone()).collect(),
            normalization: self.normalization.clone(),
        }
    }

    pub fn minmax_fit(&self) -> Result<Normalization> {
        Normalization::fit(self.entries.iter().map(|e| e.features.as_slice()))
    }

    /// Applies `norm` to every row.
    pub fn normalized(&self, norm: &Normalization) -> Result<Dataset> {
        if self.normalization.is_some() {
            return Err(Error::config("dataset is already normalized"));
        }
        let entries = self
            .entries
            .iter()
            .map(|e| Ok(DatasetEntry { features: norm.apply(&e.features)?, label: e.label }))
            .collect::<Result<_>>()?;
        Ok(Dataset { names: self.names.clone(), entries, normalization: Some(norm.clone()) })
    }

    pub fn label_variance(&self) -> f64 {
        let n = self.len() as f64;
        let mean = self.entries.iter().map(|e| e.label).sum::<f64>() / n;
        self.entries.iter().map(|e| (e.label - mean).powi(2)).sum::<f64>() / n
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = self.names.clone();
        header.push("label".into());
        wr.write_record(&header).map_err(csv_err)?;
        for e in &self.entries {
            let mut row: Vec<String> = e.features.iter().map(f64::to_string).collect();
            row.push(e.label.to_string());
            wr.write_record(&row).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Dataset> {
        let mut rd = csv::Reader::from_reader(r);
        let header: Vec<String> = rd.headers().map_err(csv_err)?.iter().map(String::from).collect();
        if header.last().map(String::as_str) != Some("label") {
            return Err(Error::parse(1, "last column must be `label`"));
        }
        let names = header[..header.len() - 1].to_vec();
        let mut entries = Vec::new();
        for (i, rec) in rd.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let vals = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| Error::parse(i + 2, format!("bad number {s:?}"))))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != header.len() {
                return Err(Error::parse(i + 2, "wrong column count"));
            }
            let (features, label) = vals.split_at(names.len());
            entries.push(DatasetEntry { features: features.to_vec(), label: label[0] });
        }
        Ok(Dataset { names, entries, normalization: None })
    }

    /// Writes `<path>` (CSV) and, when normalized, `<path>.norm`.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)?;
        if let Some(n) = &self.normalization {
            std::fs::write(norm_path(path), n.to_text(&self.names))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let mut ds = Dataset::read_csv(std::fs::File::open(path)?)?;
        let np = norm_path(path);
        if np.exists() {
            ds.normalization = Some(Normalization::from_text(&std::fs::read_to_string(np)?)?);
        }
        Ok(ds)
    }
}

fn norm_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".norm");
    s.into()
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::parse(line, e.to_string())
}

/// Merges rows with identical features, averaging their labels. Rows come
/// out sorted by feature vector, so the result does not depend on input
/// order.
pub fn dedup_rows<I>(rows: I) -> Vec<DatasetEntry>
where
    I: IntoIterator<Item = (Vec<f64>, f64)>,
{
    let mut groups: BTreeMap<Vec<u64>, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (f, label) in rows {
        // Non-negative floats order like their bit patterns.
        let key: Vec<u64> = f.iter().map(|x| x.to_bits()).collect();
        groups.entry(key).or_insert_with(|| (f, Vec::new())).1.push(label);
    }
    groups
        .into_values()
        .map(|(features, mut labels)| {
            labels.sort_by(f64::total_cmp);
            let label = labels.iter().sum::<f64>() / labels.len() as f64;
            DatasetEntry { features, label }
        })
        .collect()
}

/// One row per distinct cluster across all cities in `logs`.
pub fn build_dataset(logs: &[EpisodeLog]) -> Result<Dataset> {
    let mut rows = Vec::new();
    for log in logs {
        rows.extend(log_rows(log)?.into_iter().map(|(f, l)| (f, l as f64)));
    }
    Ok(Dataset::new(dedup_rows(rows)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Tile;

    fn grass() -> GameMap {
        GameMap::filled(12, 12, 0, TerrainKind::Grassland)
    }

    #[test]
    fn names_match_dimension() {
        let n = feature_names();
        assert_eq!(n.len(), FEATURE_DIM);
        assert_eq!(n[0], "center_terrain_desert");
        assert_eq!(n[AROUND_TERRAIN + TerrainKind::DeepOcean.index()], "around_terrain_deep_ocean");
        assert_eq!(n[ENEMY_NEIGHB], "enemy_neighb");
    }

    #[test]
    fn plain_grassland_cluster() {
        let v = extract_features(&grass(), Coord::new(5, 5), 0, &[]).unwrap();
        let g = TerrainKind::BUILDABLE.iter().position(|t| *t == TerrainKind::Grassland).unwrap();
        for (i, x) in v.iter().enumerate() {
            let want = if i == CENTER_TERRAIN + g {
                1.0
            } else if i == AROUND_TERRAIN + TerrainKind::Grassland.index() {
                20.0
            } else {
                0.0
            };
            assert_eq!(*x, want, "column {i}");
        }
    }

    #[test]
    fn example_cluster_features() {
        let mut map = grass();
        let c = Coord::new(5, 5);
        map.tile_mut(c).unwrap().special = Some(SpecialKind::Bull);
        map.tile_mut(c.offset(1, 0)).unwrap().special = Some(SpecialKind::Resources);
        map.tile_mut(c.offset(-1, 1)).unwrap().special = Some(SpecialKind::Wheat);
        for d in [(2, 1), (2, -1)] {
            *map.tile_mut(c.offset(d.0, d.1)).unwrap() = Tile::new(c.offset(d.0, d.1), TerrainKind::Ocean);
        }
        let v = extract_features(&map, c, 0, &[]).unwrap();
        assert_eq!(v[CENTER_SPECIAL + SpecialKind::Bull.index()], 1.0);
        assert_eq!(v[AROUND_SPECIAL..AROUND_SPECIAL + 17].iter().sum::<f64>(), 2.0);
        assert_eq!(v[OCEAN], 1.0);
        assert_eq!(v[DEEP_OCEAN], 0.0);
        assert_eq!(v[AROUND_TERRAIN..AROUND_TERRAIN + 11].iter().sum::<f64>(), 20.0);
    }

    #[test]
    fn neighbour_band() {
        let c = Coord::new(5, 5);
        let cities = [(c.offset(4, 0), 0), (c.offset(2, 2), 1), (c.offset(2, 1), 0), (c.offset(5, 0), 0)];
        let v = extract_features(&grass(), c, 0, &cities).unwrap();
        // (4,0) is in the band, (2,2) is a cluster corner so in the band too,
        // (2,1) is inside the cluster, (5,0) is beyond the band.
        assert_eq!((v[MY_NEIGHB], v[ENEMY_NEIGHB]), (1.0, 1.0));
    }

    #[test]
    fn invalid_cluster_rejected() {
        assert!(extract_features(&grass(), Coord::new(0, 0), 0, &[]).is_err());
    }

    #[test]
    fn minmax_rules() {
        let rows = [vec![0.0, 3.0], vec![5.0, 3.0], vec![10.0, 3.0]];
        let n = Normalization::fit(rows.iter().map(|r| r.as_slice())).unwrap();
        let out: Vec<_> = rows.iter().map(|r| n.apply(r).unwrap()).collect();
        assert_eq!(out, vec![vec![0.0, 0.0], vec![0.5, 0.0], vec![1.0, 0.0]]);
        assert_eq!(n.apply(&[20.0, 3.0]).unwrap()[0], 2.0);
        assert!(n.apply(&[1.0]).is_err());
        let empty: [&[f64]; 0] = [];
        assert!(Normalization::fit(empty).is_err());
        let back = Normalization::from_text(&n.to_text(&["a".into(), "b".into()])).unwrap();
        assert_eq!(back, n);
    }

    #[test]
    fn duplicate_rows_are_averaged() {
        let d = dedup_rows(vec![(vec![1.0, 2.0], 100.0), (vec![1.0, 2.0], 200.0)]);
        assert_eq!(d, vec![DatasetEntry { features: vec![1.0, 2.0], label: 150.0 }]);
        let distinct = dedup_rows(vec![(vec![1.0], 1.0), (vec![2.0], 2.0), (vec![3.0], 3.0)]);
        assert_eq!(distinct.len(), 3);
        assert!(build_dataset(&[]).unwrap().is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let ds = Dataset::new(dedup_rows(vec![(vec![0.5; FEATURE_DIM], 3.25), (vec![1.0; FEATURE_DIM], 7.0)]));
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("center_terrain_desert,"));
        assert_eq!(Dataset::read_csv(buf.as_slice()).unwrap(), ds);
    }
}
