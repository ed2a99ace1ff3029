//! Tile map, procedural generation, map clusters and the layered text map format.
//!
//! The map is a bounded rectangle (no wraparound). Generation grows land blobs
//! from one seed per continent, paints terrain from weighted Voronoi patches,
//! then samples rivers and specials independently per tile.

use std::cmp::Ordering;
use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest width or height accepted by [`generate_map`].
pub const MIN_GENERATED_DIMENSION: u32 = 12;

/// Number of tiles in a map cluster (5x5 block minus its four corners).
pub const CLUSTER_SIZE: usize = 21;

/// Cluster offsets in row-major order; index 10 is the center.
pub const CLUSTER_OFFSETS: [(i32, i32); CLUSTER_SIZE] = [
    (-1, -2),
    (0, -2),
    (1, -2),
    (-2, -1),
    (-1, -1),
    (0, -1),
    (1, -1),
    (2, -1),
    (-2, 0),
    (-1, 0),
    (0, 0),
    (1, 0),
    (2, 0),
    (-2, 1),
    (-1, 1),
    (0, 1),
    (1, 1),
    (2, 1),
    (-1, 2),
    (0, 2),
    (1, 2),
];

/// Grid position. Ordering is row-major: by `y`, then by `x`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Coord {
    pub x: i32,
    pub y: i32,
}

impl Coord {
    pub const fn new(x: i32, y: i32) -> Self {
        Coord { x, y }
    }

    pub fn offset(self, dx: i32, dy: i32) -> Coord {
        Coord::new(self.x + dx, self.y + dy)
    }

    /// Chebyshev (king-move) distance.
    pub fn distance(self, other: Coord) -> u32 {
        (self.x - other.x).unsigned_abs().max((self.y - other.y).unsigned_abs())
    }
}

impl Ord for Coord {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.y, self.x).cmp(&(other.y, other.x))
    }
}

impl PartialOrd for Coord {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl std::fmt::Display for Coord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TerrainKind {
    Desert,
    Forest,
    Grassland,
    Hills,
    Jungle,
    Mountains,
    Plains,
    Swamp,
    Tundra,
    Ocean,
    DeepOcean,
}

impl TerrainKind {
    pub const COUNT: usize = 11;

    pub const ALL: [TerrainKind; 11] = [
        TerrainKind::Desert,
        TerrainKind::Forest,
        TerrainKind::Grassland,
        TerrainKind::Hills,
        TerrainKind::Jungle,
        TerrainKind::Mountains,
        TerrainKind::Plains,
        TerrainKind::Swamp,
        TerrainKind::Tundra,
        TerrainKind::Ocean,
        TerrainKind::DeepOcean,
    ];

    /// The nine kinds a city may be founded on, in `ALL` order.
    pub const BUILDABLE: [TerrainKind; 9] = [
        TerrainKind::Desert,
        TerrainKind::Forest,
        TerrainKind::Grassland,
        TerrainKind::Hills,
        TerrainKind::Jungle,
        TerrainKind::Mountains,
        TerrainKind::Plains,
        TerrainKind::Swamp,
        TerrainKind::Tundra,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_buildable(self) -> bool {
        !self.is_water()
    }

    pub fn is_water(self) -> bool {
        matches!(self, TerrainKind::Ocean | TerrainKind::DeepOcean)
    }

    /// Map-file symbol. Land kinds are lowercase, water is `o` / `O`.
    pub fn symbol(self) -> char {
        match self {
            TerrainKind::Desert => 'd',
            TerrainKind::Forest => 'f',
            TerrainKind::Grassland => 'g',
            TerrainKind::Hills => 'h',
            TerrainKind::Jungle => 'j',
            TerrainKind::Mountains => 'm',
            TerrainKind::Plains => 'p',
            TerrainKind::Swamp => 's',
            TerrainKind::Tundra => 't',
            TerrainKind::Ocean => 'o',
            TerrainKind::DeepOcean => 'O',
        }
    }

    pub fn from_symbol(c: char) -> Option<Self> {
        TerrainKind::ALL.into_iter().find(|t| t.symbol() == c)
    }

    pub fn name(self) -> &'static str {
        match self {
            TerrainKind::Desert => "Desert",
            TerrainKind::Forest => "Forest",
            TerrainKind::Grassland => "Grassland",
            TerrainKind::Hills => "Hills",
            TerrainKind::Jungle => "Jungle",
            TerrainKind::Mountains => "Mountains",
            TerrainKind::Plains => "Plains",
            TerrainKind::Swamp => "Swamp",
            TerrainKind::Tundra => "Tundra",
            TerrainKind::Ocean => "Ocean",
            TerrainKind::DeepOcean => "DeepOcean",
        }
    }
}

/// Special resources. Each kind may only appear on the terrains listed by
/// [`SpecialKind::terrains`]; the generator enforces this, the decoder only
/// enforces the Whales-on-Ocean rule.
///
/// | kind      | sym | terrain          |
/// |-----------|-----|------------------|
/// | Oasis     | a   | Desert           |
/// | Oil       | o   | Desert, Tundra   |
/// | Pheasant  | p   | Forest           |
/// | Silk      | k   | Forest           |
/// | Bull      | b   | Grassland, Plains|
/// | Resources | r   | Grassland        |
/// | Coal      | c   | Hills            |
/// | Wine      | v   | Hills            |
/// | Fruit     | f   | Jungle           |
/// | Gems      | g   | Jungle           |
/// | Gold      | y   | Mountains        |
/// | Iron      | i   | Mountains        |
/// | Wheat     | w   | Plains           |
/// | Peat      | t   | Swamp            |
/// | Spices    | s   | Swamp            |
/// | Furs      | u   | Tundra           |
/// | Whales    | h   | Ocean            |
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpecialKind {
    Oasis,
    Oil,
    Pheasant,
    Silk,
    Bull,
    Resources,
    Coal,
    Wine,
    Fruit,
    Gems,
    Gold,
    Iron,
    Wheat,
    Peat,
    Spices,
    Furs,
    Whales,
}

impl SpecialKind {
    pub const COUNT: usize = 17;

    pub const ALL: [SpecialKind; 17] = [
        SpecialKind::Oasis,
        SpecialKind::Oil,
        SpecialKind::Pheasant,
        SpecialKind::Silk,
        SpecialKind::Bull,
        SpecialKind::Resources,
        SpecialKind::Coal,
        SpecialKind::Wine,
        SpecialKind::Fruit,
        SpecialKind::Gems,
        SpecialKind::Gold,
        SpecialKind::Iron,
        SpecialKind::Wheat,
        SpecialKind::Peat,
        SpecialKind::Spices,
        SpecialKind::Furs,
        SpecialKind::Whales,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> char {
        match self {
            SpecialKind::Oasis => 'a',
            SpecialKind::Oil => 'o',
            SpecialKind::Pheasant => 'p',
            SpecialKind::Silk => 'k',
            SpecialKind::Bull => 'b',
            SpecialKind::Resources => 'r',
            SpecialKind::Coal => 'c',
            SpecialKind::Wine => 'v',
            SpecialKind::Fruit => 'f',
            SpecialKind::Gems => 'g',
            SpecialKind::Gold => 'y',
            SpecialKind::Iron => 'i',
            SpecialKind::Wheat => 'w',
            SpecialKind::Peat => 't',
            SpecialKind::Spices => 's',
            SpecialKind::Furs => 'u',
            SpecialKind::Whales => 'h',
        }
    }

    pub fn from_symbol(c: char) -> Option<Self> {
        SpecialKind::ALL.into_iter().find(|s| s.symbol() == c)
    }

    pub fn name(self) -> &'static str {
        match self {
            SpecialKind::Oasis => "Oasis",
            SpecialKind::Oil => "Oil",
            SpecialKind::Pheasant => "Pheasant",
            SpecialKind::Silk => "Silk",
            SpecialKind::Bull => "Bull",
            SpecialKind::Resources => "Resources",
            SpecialKind::Coal => "Coal",
            SpecialKind::Wine => "Wine",
            SpecialKind::Fruit => "Fruit",
            SpecialKind::Gems => "Gems",
            SpecialKind::Gold => "Gold",
            SpecialKind::Iron => "Iron",
            SpecialKind::Wheat => "Wheat",
            SpecialKind::Peat => "Peat",
            SpecialKind::Spices => "Spices",
            SpecialKind::Furs => "Furs",
            SpecialKind::Whales => "Whales",
        }
    }

    pub fn terrains(self) -> &'static [TerrainKind] {
        use TerrainKind::*;
        match self {
            SpecialKind::Oasis => &[Desert],
            SpecialKind::Oil => &[Desert, Tundra],
            SpecialKind::Pheasant | SpecialKind::Silk => &[Forest],
            SpecialKind::Bull => &[Grassland, Plains],
            SpecialKind::Resources => &[Grassland],
            SpecialKind::Coal | SpecialKind::Wine => &[Hills],
            SpecialKind::Fruit | SpecialKind::Gems => &[Jungle],
            SpecialKind::Gold | SpecialKind::Iron => &[Mountains],
            SpecialKind::Wheat => &[Plains],
            SpecialKind::Peat | SpecialKind::Spices => &[Swamp],
            SpecialKind::Furs => &[Tundra],
            SpecialKind::Whales => &[Ocean],
        }
    }

    pub fn allowed_on(self, terrain: TerrainKind) -> bool {
        self.terrains().contains(&terrain)
    }
}

pub type PlayerId = u8;
pub type CityId = u32;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tile {
    pub coord: Coord,
    pub terrain: TerrainKind,
    pub special: Option<SpecialKind>,
    pub river: bool,
    pub owner: Option<PlayerId>,
    pub worked_by: Option<CityId>,
}

impl Tile {
    pub fn new(coord: Coord, terrain: TerrainKind) -> Self {
        Tile { coord, terrain, special: None, river: false, owner: None, worked_by: None }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GameMap {
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    tiles: Vec<Tile>,
}

impl GameMap {
    /// A map filled with one terrain kind.
    pub fn filled(width: u32, height: u32, seed: u64, terrain: TerrainKind) -> Self {
        let mut tiles = Vec::with_capacity((width * height) as usize);
        for y in 0..height as i32 {
            for x in 0..width as i32 {
                tiles.push(Tile::new(Coord::new(x, y), terrain));
            }
        }
        GameMap { width, height, seed, tiles }
    }

    pub fn in_bounds(&self, c: Coord) -> bool {
        c.x >= 0 && c.y >= 0 && (c.x as u32) < self.width && (c.y as u32) < self.height
    }

    fn index(&self, c: Coord) -> Option<usize> {
        self.in_bounds(c).then(|| c.y as usize * self.width as usize + c.x as usize)
    }

    pub fn tile(&self, c: Coord) -> Option<&Tile> {
        self.index(c).map(|i| &self.tiles[i])
    }

    pub fn tile_mut(&mut self, c: Coord) -> Option<&mut Tile> {
        self.index(c).map(move |i| &mut self.tiles[i])
    }

    pub fn tiles(&self) -> &[Tile] {
        &self.tiles
    }

    pub fn coords(&self) -> impl Iterator<Item = Coord> + '_ {
        self.tiles.iter().map(|t| t.coord)
    }

    pub fn buildable_fraction(&self) -> f64 {
        let n = self.tiles.iter().filter(|t| t.terrain.is_buildable()).count();
        n as f64 / self.tiles.len() as f64
    }

    pub fn special_count(&self) -> usize {
        self.tiles.iter().filter(|t| t.special.is_some()).count()
    }

    /// Drop all ownership and worked-tile marks.
    pub fn clear_claims(&mut self) {
        for t in &mut self.tiles {
            t.owner = None;
            t.worked_by = None;
        }
    }

    /// Whether the full 5x5 block around `center` lies inside the map.
    pub fn cluster_fits(&self, center: Coord) -> bool {
        self.in_bounds(center.offset(-2, -2)) && self.in_bounds(center.offset(2, 2))
    }

    /// Checks the per-tile invariants (river only on land, Whales only on
    /// Ocean, worked implies owned).
    pub fn validate(&self) -> Result<()> {
        for t in &self.tiles {
            if t.river && t.terrain.is_water() {
                return Err(Error::config(format!("river on water tile {}", t.coord)));
            }
            if t.special == Some(SpecialKind::Whales) && t.terrain != TerrainKind::Ocean {
                return Err(Error::config(format!("whales off-ocean at {}", t.coord)));
            }
            if t.worked_by.is_some() && t.owner.is_none() {
                return Err(Error::config(format!("worked tile {} has no owner", t.coord)));
            }
        }
        Ok(())
    }
}

/// The 21-tile region a city can work.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MapCluster {
    pub center: Coord,
    /// Row-major; `tiles[10] == center`.
    pub tiles: Vec<Coord>,
}

impl MapCluster {
    pub fn contains(&self, c: Coord) -> bool {
        self.center.distance(c) <= 2 && !((c.x - self.center.x).abs() == 2 && (c.y - self.center.y).abs() == 2)
    }

    /// The 20 non-center tiles.
    pub fn surrounding(&self) -> impl Iterator<Item = Coord> + '_ {
        self.tiles.iter().copied().filter(move |c| *c != self.center)
    }
}

pub fn cluster_at(map: &GameMap, center: Coord) -> Result<MapCluster> {
    if !map.cluster_fits(center) {
        return Err(Error::ClusterOutOfBounds { center, width: map.width, height: map.height });
    }
    let tiles = CLUSTER_OFFSETS.iter().map(|&(dx, dy)| center.offset(dx, dy)).collect();
    Ok(MapCluster { center, tiles })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapGenConfig {
    pub width: u32,
    pub height: u32,
    /// Target share of land tiles.
    pub land_fraction: f64,
    pub min_buildable_fraction: f64,
    pub continents: u32,
    /// Patch weights over [`TerrainKind::BUILDABLE`].
    pub terrain_weights: [f64; 9],
    /// Mean land tiles per terrain patch.
    pub patch_size: u32,
    /// Probability that a tile receives a special (if its terrain allows one).
    pub special_frequency: f64,
    pub special_weights: [f64; 17],
    pub river_frequency: f64,
    /// Water at this Chebyshev distance from land or further becomes DeepOcean.
    pub deep_ocean_distance: u32,
}

impl Default for MapGenConfig {
    fn default() -> Self {
        MapGenConfig {
            width: 20,
            height: 20,
            land_fraction: 0.6,
            min_buildable_fraction: 0.4,
            continents: 2,
            //               Des  For  Gra  Hil  Jun  Mou  Pla  Swa  Tun
            terrain_weights: [1.0, 1.5, 2.0, 1.0, 0.7, 0.7, 2.0, 0.7, 0.7],
            patch_size: 5,
            special_frequency: 0.12,
            special_weights: [1.0; 17],
            river_frequency: 0.12,
            deep_ocean_distance: 2,
        }
    }
}

impl MapGenConfig {
    /// The 80x50 configuration.
    pub fn large() -> Self {
        MapGenConfig { width: 80, height: 50, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < MIN_GENERATED_DIMENSION || self.height < MIN_GENERATED_DIMENSION {
            return Err(Error::config(format!(
                "map dimensions {}x{} below minimum {MIN_GENERATED_DIMENSION}x{MIN_GENERATED_DIMENSION}",
                self.width, self.height
            )));
        }
        let frac_ok = |f: f64| f.is_finite() && (0.0..=1.0).contains(&f);
        if !frac_ok(self.land_fraction) || self.land_fraction == 0.0 {
            return Err(Error::config("land_fraction must be in (0, 1]"));
        }
        if !frac_ok(self.min_buildable_fraction) || self.min_buildable_fraction > self.land_fraction {
            return Err(Error::config("min_buildable_fraction must be in [0, land_fraction]"));
        }
        if self.continents == 0 || self.patch_size == 0 {
            return Err(Error::config("continents and patch_size must be positive"));
        }
        if !weights_ok(&self.terrain_weights) {
            return Err(Error::config("terrain weights must be non-negative with positive sum"));
        }
        if !frac_ok(self.special_frequency) || !frac_ok(self.river_frequency) {
            return Err(Error::config("special/river frequencies must be in [0, 1]"));
        }
        if self.special_frequency > 0.0 && !weights_ok(&self.special_weights) {
            return Err(Error::config("special weights must be non-negative with positive sum"));
        }
        if self.deep_ocean_distance == 0 {
            return Err(Error::config("deep_ocean_distance must be at least 1"));
        }
        Ok(())
    }
}

fn weights_ok(w: &[f64]) -> bool {
    w.iter().all(|x| x.is_finite() && *x >= 0.0) && w.iter().sum::<f64>() > 0.0
}

const DIRS4: [(i32, i32); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

pub fn generate_map(config: &MapGenConfig, seed: u64) -> Result<GameMap> {
    config.validate()?;
    let (w, h) = (config.width as i32, config.height as i32);
    let area = (w * h) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let min_land = (config.min_buildable_fraction * area as f64).ceil() as usize;
    let target = ((config.land_fraction * area as f64).round() as usize).max(min_land).clamp(1, area);

    // Continent blobs, grown round-robin from evenly spaced seeds.
    let mut land = vec![false; area];
    let idx = |c: Coord| c.y as usize * w as usize + c.x as usize;
    let n_cont = config.continents as usize;
    let mut blobs: Vec<Vec<Coord>> = Vec::with_capacity(n_cont);
    let mut land_count = 0;
    for i in 0..n_cont {
        let jitter = (w / 8).max(1);
        let x = ((2 * i as i32 + 1) * w / (2 * n_cont as i32) + rng.random_range(-jitter..=jitter)).clamp(2, w - 3);
        let y = (h / 2 + rng.random_range(-(h / 8).max(1)..=(h / 8).max(1))).clamp(2, h - 3);
        let c = Coord::new(x, y);
        if !land[idx(c)] && land_count < target {
            land[idx(c)] = true;
            land_count += 1;
        }
        blobs.push(vec![c]);
    }
    let mut attempts = 0usize;
    let max_attempts = 200 * area;
    let mut turn = 0usize;
    while land_count < target && attempts < max_attempts {
        attempts += 1;
        let blob = &mut blobs[turn % n_cont];
        turn += 1;
        let from = blob[rng.random_range(0..blob.len())];
        let (dx, dy) = DIRS4[rng.random_range(0..4)];
        let c = from.offset(dx, dy);
        if c.x < 0 || c.y < 0 || c.x >= w || c.y >= h || land[idx(c)] {
            continue;
        }
        land[idx(c)] = true;
        land_count += 1;
        blob.push(c);
    }
    // Growth can stall only on pathological configs; fill row-major.
    for cell in land.iter_mut() {
        if land_count >= target {
            break;
        }
        if !*cell {
            *cell = true;
            land_count += 1;
        }
    }

    // Water depth by multi-source BFS (8-neighborhood) from land.
    let mut dist = vec![u32::MAX; area];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            let c = Coord::new(x, y);
            if land[idx(c)] {
                dist[idx(c)] = 0;
                queue.push_back(c);
            }
        }
    }
    while let Some(c) = queue.pop_front() {
        for dy in -1..=1 {
            for dx in -1..=1 {
                let n = c.offset(dx, dy);
                if n.x < 0 || n.y < 0 || n.x >= w || n.y >= h {
                    continue;
                }
                if dist[idx(n)] == u32::MAX {
                    dist[idx(n)] = dist[idx(c)] + 1;
                    queue.push_back(n);
                }
            }
        }
    }

    // Terrain patches: weighted kinds at random land seeds, nearest-seed fill.
    let land_coords: Vec<Coord> =
        (0..h).flat_map(|y| (0..w).map(move |x| Coord::new(x, y))).filter(|c| land[idx(*c)]).collect();
    let n_patches = (land_coords.len() / config.patch_size as usize).max(1);
    let terrain_pick = WeightedIndex::new(config.terrain_weights).map_err(|e| Error::config(e.to_string()))?;
    let patches: Vec<(Coord, TerrainKind)> = (0..n_patches)
        .map(|_| {
            let at = land_coords[rng.random_range(0..land_coords.len())];
            (at, TerrainKind::BUILDABLE[terrain_pick.sample(&mut rng)])
        })
        .collect();

    let mut map = GameMap::filled(config.width, config.height, seed, TerrainKind::Ocean);
    for c in &land_coords {
        let mut best = (i32::MAX, TerrainKind::Grassland);
        for (at, kind) in &patches {
            let d = (at.x - c.x).pow(2) + (at.y - c.y).pow(2);
            if d < best.0 {
                best = (d, *kind);
            }
        }
        map.tiles[idx(*c)].terrain = best.1;
    }
    for (i, t) in map.tiles.iter_mut().enumerate() {
        if !land[i] && dist[i] >= config.deep_ocean_distance {
            t.terrain = TerrainKind::DeepOcean;
        }
    }

    // Rivers and specials, row-major, independent per tile.
    for t in map.tiles.iter_mut() {
        if t.terrain.is_buildable() && rng.random::<f64>() < config.river_frequency {
            t.river = true;
        }
        if rng.random::<f64>() < config.special_frequency {
            let allowed: Vec<(SpecialKind, f64)> = SpecialKind::ALL
                .into_iter()
                .filter(|s| s.allowed_on(t.terrain))
                .map(|s| (s, config.special_weights[s.index()]))
                .filter(|(_, w)| *w > 0.0)
                .collect();
            if !allowed.is_empty() {
                let pick = WeightedIndex::new(allowed.iter().map(|(_, w)| *w))
                    .map_err(|e| Error::config(e.to_string()))?;
                t.special = Some(allowed[pick.sample(&mut rng)].0);
            }
        }
    }

    if map.buildable_fraction() + 1e-12 < config.min_buildable_fraction {
        return Err(Error::config("generated map misses min_buildable_fraction"));
    }
    Ok(map)
}

/// Serializes a map to the layered text format:
///
/// ```text
/// W H SEED
/// <H terrain rows, one symbol per tile>
///
/// <H special rows, '.' = none>
///
/// <H river rows, 'r' or '.'>
/// ```
///
/// If any tile is owned, a blank line, a `claims` line and one
/// `X Y OWNER CITY` line per owned tile follow (`CITY` is `-` when unworked).
pub fn encode_map(map: &GameMap) -> String {
    let mut out = String::with_capacity(map.tiles.len() * 3 + 64);
    let _ = writeln!(out, "{} {} {}", map.width, map.height, map.seed);
    let rows = |out: &mut String, f: &dyn Fn(&Tile) -> char| {
        for row in map.tiles.chunks(map.width as usize) {
            out.extend(row.iter().map(f));
            out.push('\n');
        }
    };
    rows(&mut out, &|t| t.terrain.symbol());
    out.push('\n');
    rows(&mut out, &|t| t.special.map_or('.', SpecialKind::symbol));
    out.push('\n');
    rows(&mut out, &|t| if t.river { 'r' } else { '.' });
    let claimed: Vec<&Tile> = map.tiles.iter().filter(|t| t.owner.is_some() || t.worked_by.is_some()).collect();
    if !claimed.is_empty() {
        out.push_str("\nclaims\n");
        for t in claimed {
            let owner = t.owner.map_or_else(|| "-".to_string(), |o| o.to_string());
            let city = t.worked_by.map_or_else(|| "-".to_string(), |c| c.to_string());
            let _ = writeln!(out, "{} {} {} {}", t.coord.x, t.coord.y, owner, city);
        }
    }
    out
}

pub fn decode_map(text: &str) -> Result<GameMap> {
    let lines: Vec<&str> = text.lines().collect();
    let header = lines.first().ok_or_else(|| Error::parse(1, "empty map text"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(Error::parse(1, "header must be `W H SEED`"));
    }
    let num = |s: &str| s.parse::<u64>().map_err(|e| Error::parse(1, format!("bad header field {s:?}: {e}")));
    let (width, height, seed) = (num(fields[0])? as u32, num(fields[1])? as u32, num(fields[2])?);
    if width == 0 || height == 0 {
        return Err(Error::parse(1, "map dimensions must be positive"));
    }
    let h = height as usize;
    let mut map = GameMap::filled(width, height, seed, TerrainKind::Ocean);

    let layer = |start: usize| -> Result<&[&str]> {
        let end = start + h;
        if lines.len() < end {
            return Err(Error::parse(lines.len() + 1, "unexpected end of map text"));
        }
        for (i, row) in lines[start..end].iter().enumerate() {
            if row.chars().count() != width as usize {
                return Err(Error::parse(start + i + 1, format!("row has {} symbols, expected {width}", row.chars().count())));
            }
        }
        Ok(&lines[start..end])
    };
    let separator = |at: usize| -> Result<()> {
        match lines.get(at) {
            Some(&"") => Ok(()),
            Some(_) => Err(Error::parse(at + 1, "expected blank line between layers (inconsistent layer height?)")),
            None => Err(Error::parse(at + 1, "unexpected end of map text")),
        }
    };

    let terrain = layer(1)?;
    separator(1 + h)?;
    let specials = layer(2 + h)?;
    separator(2 + 2 * h)?;
    let rivers = layer(3 + 2 * h)?;
    let w = width as usize;
    for y in 0..h {
        for (x, ((tc, sc), rc)) in terrain[y].chars().zip(specials[y].chars()).zip(rivers[y].chars()).enumerate() {
            let t = &mut map.tiles[y * w + x];
            t.terrain = TerrainKind::from_symbol(tc)
                .ok_or_else(|| Error::parse(2 + y, format!("unknown terrain symbol {tc:?}")))?;
            t.special = match sc {
                '.' => None,
                c => Some(SpecialKind::from_symbol(c).ok_or_else(|| Error::parse(3 + h + y, format!("unknown special symbol {c:?}")))?),
            };
            t.river = match rc {
                '.' => false,
                'r' => true,
                c => return Err(Error::parse(4 + 2 * h + y, format!("unknown river symbol {c:?}"))),
            };
        }
    }

    let mut rest = 3 + 3 * h;
    if rest < lines.len() {
        separator(rest)?;
        if lines.get(rest + 1) != Some(&"claims") {
            return Err(Error::parse(rest + 2, "expected `claims` section"));
        }
        rest += 2;
        for (i, line) in lines[rest..].iter().enumerate() {
            let ln = rest + i + 1;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(Error::parse(ln, "claim must be `X Y OWNER CITY`"));
            }
            let x: i32 = f[0].parse().map_err(|_| Error::parse(ln, "bad claim x"))?;
            let y: i32 = f[1].parse().map_err(|_| Error::parse(ln, "bad claim y"))?;
            let opt = |s: &str| -> Result<Option<u32>> {
                if s == "-" {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| Error::parse(ln, format!("bad claim field {s:?}")))
                }
            };
            let owner = opt(f[2])?.map(|o| u8::try_from(o).map_err(|_| Error::parse(ln, "owner out of range"))).transpose()?;
            let city = opt(f[3])?;
            let t = map.tile_mut(Coord::new(x, y)).ok_or_else(|| Error::parse(ln, "claim outside map"))?;
            t.owner = owner;
            t.worked_by = city;
        }
    }
    map.validate().map_err(|e| Error::parse(0, e.to_string()))?;
    Ok(map)
}
