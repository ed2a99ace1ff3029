//! Feed-forward regressor: ReLU hidden layers with inverted dropout, one
//! linear output, MSE loss, ADAM, k-fold cross-validation and grid search.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::features::{extract_features, Dataset, Normalization, FEATURE_DIM, LAYOUT_VERSION};
use crate::world::{Coord, GameMap, PlayerId};

#[derive(Clone, Debug, PartialEq)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub init_std: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            input_dim: FEATURE_DIM,
            hidden: vec![95],
            dropout: 0.5,
            init_std: 0.0005,
            learning_rate: 0.002,
            batch_size: 30,
            epochs: 200,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::config("layer sizes must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        let positive = self.learning_rate > 0.0 && self.init_std >= 0.0;
        if !positive {
            return Err(Error::config("learning rate must be positive and init std non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        Ok(())
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(1);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Dense layer, `w` row-major `outputs x inputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Min-max scaling of the label; a constant label maps to 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelScale {
    pub min: f64,
    pub max: f64,
}

impl LabelScale {
    pub fn fit(labels: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut it = labels.into_iter();
        let first = it.next().ok_or_else(|| Error::InsufficientData("no labels".into()))?;
        let (min, max) = it.fold((first, first), |(lo, hi), y| (lo.min(y), hi.max(y)));
        Ok(LabelScale { min, max })
    }

    fn range(&self) -> f64 {
        if self.max > self.min {
            self.max - self.min
        } else {
            1.0
        }
    }

    pub fn apply(&self, y: f64) -> f64 {
        (y - self.min) / self.range()
    }

    pub fn invert(&self, y: f64) -> f64 {
        y * self.range() + self.min
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    pub config: MlpConfig,
    pub layers: Vec<Layer>,
    /// Feature scaling the model was trained under.
    pub feature_norm: Option<Normalization>,
    pub label_scale: Option<LabelScale>,
}

/// Normal(0, std) weights, zero biases.
pub fn init(config: &MlpConfig, seed: u64) -> Result<MlpModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, config.init_std).map_err(|e| Error::config(e.to_string()))?;
    let layers = config
        .shapes()
        .into_iter()
        .map(|(i, o)| Layer { inputs: i, outputs: o, w: (0..i * o).map(|_| normal.sample(&mut rng)).collect(), b: vec![0.0; o] })
        .collect();
    Ok(MlpModel { config: config.clone(), layers, feature_norm: None, label_scale: None })
}

/// Activations kept by a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct Cache {
    /// Input of every layer (after ReLU and dropout for hidden layers).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
    /// Dropout factor per hidden unit: 0 or 1 / (1 - p).
    masks: Vec<Vec<f64>>,
    pub output: f64,
}

fn affine(l: &Layer, x: &[f64]) -> Vec<f64> {
    (0..l.outputs)
        .map(|o| l.b[o] + l.w[o * l.inputs..(o + 1) * l.inputs].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        .collect()
}

impl MlpModel {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Parameters in order: per layer, weights then biases.
    pub fn params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(&l.b).copied()).collect()
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(Error::DimensionMismatch { expected: self.param_count(), got: p.len() });
        }
        let mut it = p.iter();
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// `ŷ = W_out · dropout(relu(W · x + b)) + b_out`; dropout only when
    /// `train_rng` is given.
    pub fn forward(&self, x: &[f64], mut train_rng: Option<&mut ChaCha8Rng>) -> Result<(f64, Cache)> {
        if x.len() != self.config.input_dim {
            return Err(Error::DimensionMismatch { expected: self.config.input_dim, got: x.len() });
        }
        let p = self.config.dropout;
        let keep = 1.0 / (1.0 - p);
        let mut cache = Cache { inputs: Vec::new(), pre: Vec::new(), masks: Vec::new(), output: 0.0 };
        let mut a = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let z = affine(l, &a);
            cache.inputs.push(std::mem::take(&mut a));
            if i == last {
                cache.output = z[0];
                break;
            }
            let mask: Vec<f64> = match train_rng.as_deref_mut() {
                Some(rng) if p > 0.0 => z.iter().map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect(),
                _ => vec![1.0; z.len()],
            };
            a = z.iter().zip(&mask).map(|(v, m)| v.max(0.0) * m).collect();
            cache.pre.push(z);
            cache.masks.push(mask);
        }
        Ok((cache.output, cache))
    }

    pub fn predict_normalized(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward(x, None)?.0)
    }

    /// Prediction for raw (unnormalized) features, in label units.
    pub fn predict(&self, raw: &[f64]) -> Result<f64> {
        let x = match &self.feature_norm {
            Some(n) => n.apply(raw)?,
            None => raw.to_vec(),
        };
        let y = self.predict_normalized(&x)?;
        Ok(self.label_scale.map_or(y, |s| s.invert(y)))
    }
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    if pred.len() != target.len() {
        return Err(Error::DimensionMismatch { expected: pred.len(), got: target.len() });
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

/// Gradient of the batch MSE with respect to every parameter, in
/// [`MlpModel::params`] order.
pub fn backward(model: &MlpModel, caches: &[Cache], targets: &[f64]) -> Result<Vec<f64>> {
    if caches.is_empty() || caches.len() != targets.len() {
        return Err(Error::DimensionMismatch { expected: caches.len(), got: targets.len() });
    }
    let n = caches.len() as f64;
    let mut grads: Vec<(Vec<f64>, Vec<f64>)> = model.layers.iter().map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()])).collect();
    for (cache, y) in caches.iter().zip(targets) {
        if cache.inputs.len() != model.layers.len() || cache.inputs.iter().zip(&model.layers).any(|(a, l)| a.len() != l.inputs) {
            return Err(Error::Simulation("cache does not match the model (stale forward pass?)".into()));
        }
        let mut delta = vec![2.0 * (cache.output - y) / n];
        for li in (0..model.layers.len()).rev() {
            let l = &model.layers[li];
            let a = &cache.inputs[li];
            let (gw, gb) = &mut grads[li];
            for o in 0..l.outputs {
                gb[o] += delta[o];
                for i in 0..l.inputs {
                    gw[o * l.inputs + i] += delta[o] * a[i];
                }
            }
            if li == 0 {
                break;
            }
            let (pre, mask) = (&cache.pre[li - 1], &cache.masks[li - 1]);
            delta = (0..l.inputs)
                .map(|i| {
                    if pre[i] <= 0.0 || mask[i] == 0.0 {
                        return 0.0;
                    }
                    mask[i] * (0..l.outputs).map(|o| l.w[o * l.inputs + i] * delta[o]).sum::<f64>()
                })
                .collect();
        }
    }
    Ok(grads.into_iter().flat_map(|(w, b)| w.into_iter().chain(b)).collect())
}

/// First and second moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One bias-corrected ADAM step on a flat parameter slice.
pub fn adam_update(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, beta1: f64, beta2: f64, eps: f64) {
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= lr * mh / (vh.sqrt() + eps);
    }
}

pub fn adam_step(model: &mut MlpModel, grads: &[f64], state: &mut AdamState) -> Result<()> {
    let mut p = model.params();
    if grads.len() != p.len() || state.m.len() != p.len() {
        return Err(Error::DimensionMismatch { expected: p.len(), got: grads.len() });
    }
    let c = &model.config;
    adam_update(&mut p, grads, state, c.learning_rate, c.beta1, c.beta2, c.adam_eps);
    model.set_params(&p)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean training-mode batch loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Validation MSE per fold (cross-validation only).
    pub fold_mse: Vec<f64>,
    /// Validation MSE of predicting the training-split label mean, per fold.
    pub fold_baseline_mse: Vec<f64>,
}

impl TrainReport {
    pub fn mean_cv_mse(&self) -> Option<f64> {
        (!self.fold_mse.is_empty()).then(|| self.fold_mse.iter().sum::<f64>() / self.fold_mse.len() as f64)
    }

    pub fn mean_baseline_mse(&self) -> Option<f64> {
        (!self.fold_baseline_mse.is_empty()).then(|| self.fold_baseline_mse.iter().sum::<f64>() / self.fold_baseline_mse.len() as f64)
    }
}

fn scaled_targets(model: &MlpModel, data: &Dataset) -> Vec<f64> {
    let s = model.label_scale.expect("trained model has a label scale");
    data.entries.iter().map(|e| s.apply(e.label)).collect()
}

/// Inference-mode MSE on a normalized dataset, in scaled label units.
pub fn dataset_mse(model: &MlpModel, data: &Dataset) -> Result<f64> {
    let pred = data.entries.iter().map(|e| model.predict_normalized(&e.features)).collect::<Result<Vec<_>>>()?;
    mse(&pred, &scaled_targets(model, data))
}

/// Untrained model carrying the dataset's scalings, as `train` starts from.
pub fn initial_model(data: &Dataset, config: &MlpConfig) -> Result<MlpModel> {
    let norm = data.normalization.clone().ok_or_else(|| Error::config("dataset must be min-max normalized before training"))?;
    if data.dim() != config.input_dim {
        return Err(Error::DimensionMismatch { expected: config.input_dim, got: data.dim() });
    }
    let mut model = init(config, config.seed)?;
    model.feature_norm = Some(norm);
    model.label_scale = Some(LabelScale::fit(data.entries.iter().map(|e| e.label))?);
    Ok(model)
}

/// Mini-batch ADAM on a normalized dataset; batches are reshuffled every
/// epoch from a generator seeded by `config.seed`.
pub fn train(data: &Dataset, config: &MlpConfig) -> Result<(MlpModel, TrainReport)> {
    let mut model = initial_model(data, config)?;
    if data.len() < 2 * config.batch_size {
        return Err(Error::InsufficientData(format!("{} rows, need at least {}", data.len(), 2 * config.batch_size)));
    }
    let targets = scaled_targets(&model, data);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_7a1e);
    let mut adam = AdamState::new(model.param_count());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut caches = Vec::with_capacity(batch.len());
            let mut ys = Vec::with_capacity(batch.len());
            let mut loss = 0.0;
            for &i in batch {
                let (y, c) = model.forward(&data.entries[i].features, Some(&mut rng))?;
                loss += (y - targets[i]).powi(2);
                caches.push(c);
                ys.push(targets[i]);
            }
            total += loss;
            let g = backward(&model, &caches, &ys)?;
            adam_step(&mut model, &g, &mut adam)?;
        }
        report.epoch_loss.push(total / data.len() as f64);
    }
    Ok((model, report))
}

/// `folds` balanced, disjoint index sets covering `0..n`, after a seeded
/// shuffle.
pub fn fold_indices(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || folds > n {
        return Err(Error::InsufficientData(format!("{folds} folds over {n} rows")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / folds, n % folds);
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

/// k-fold cross-validation on a raw dataset. Each fold fits min-max on its
/// training split only, trains, and scores the held-out split in the
/// training split's label scale.
pub fn kfold_cv(data: &Dataset, config: &MlpConfig, folds: usize, seed: u64) -> Result<TrainReport> {
    if data.normalization.is_some() {
        return Err(Error::config("cross-validation expects a raw dataset"));
    }
    let parts = fold_indices(data.len(), folds, seed)?;
    let mut report = TrainReport::default();
    for (f, val_idx) in parts.iter().enumerate() {
        let train_idx: Vec<usize> = parts.iter().enumerate().filter(|(g, _)| *g != f).flat_map(|(_, p)| p.iter().copied()).collect();
        let train_raw = data.subset(&train_idx);
        let norm = train_raw.minmax_fit()?;
        let train_ds = train_raw.normalized(&norm)?;
        let val_ds = data.subset(val_idx).normalized(&norm)?;
        let (model, r) = train(&train_ds, config)?;
        let scale = model.label_scale.expect("set by train");
        let mean = train_ds.entries.iter().map(|e| scale.apply(e.label)).sum::<f64>() / train_ds.len() as f64;
        let val_targets = scaled_targets(&model, &val_ds);
        report.fold_mse.push(dataset_mse(&model, &val_ds)?);
        report.fold_baseline_mse.push(mse(&vec![mean; val_targets.len()], &val_targets)?);
        report.epoch_loss.extend(r.epoch_loss.last());
    }
    Ok(report)
}

/// Cross-validates every config; the lowest mean MSE wins, ties to the
/// earlier entry.
pub fn grid_search(data: &Dataset, grid: &[MlpConfig], folds: usize, seed: u64) -> Result<(MlpConfig, Vec<TrainReport>)> {
    if grid.is_empty() {
        return Err(Error::config("empty grid"));
    }
    let mut reports = Vec::with_capacity(grid.len());
    let mut best = 0;
    for (i, c) in grid.iter().enumerate() {
        let r = kfold_cv(data, c, folds, seed)?;
        let m = r.mean_cv_mse().unwrap_or(f64::INFINITY);
        let m = if m.is_nan() { f64::INFINITY } else { m };
        if i == 0 || m < reports_mean(&reports, best) {
            best = i;
        }
        reports.push(r);
    }
    Ok((grid[best].clone(), reports))
}

fn reports_mean(reports: &[TrainReport], i: usize) -> f64 {
    reports.get(i).and_then(TrainReport::mean_cv_mse).filter(|m| !m.is_nan()).unwrap_or(f64::INFINITY)
}

/// The default grid: hidden width by learning rate.
pub fn default_grid(base: &MlpConfig) -> Vec<MlpConfig> {
    let mut grid = Vec::new();
    for hidden in [vec![32], vec![95]] {
        for lr in [0.002, 0.01] {
            grid.push(MlpConfig { hidden: hidden.clone(), learning_rate: lr, ..base.clone() });
        }
    }
    grid
}

/// Predicted score of every buildable center whose cluster fits the map.
pub fn predict_scores(model: &MlpModel, map: &GameMap, player: PlayerId, cities: &[(Coord, PlayerId)]) -> Result<BTreeMap<Coord, f64>> {
    if model.config.input_dim != FEATURE_DIM {
        return Err(Error::DimensionMismatch { expected: FEATURE_DIM, got: model.config.input_dim });
    }
    let mut out = BTreeMap::new();
    for t in map.tiles() {
        if t.terrain.is_buildable() && map.cluster_fits(t.coord) {
            out.insert(t.coord, model.predict(&extract_features(map, t.coord, player, cities)?)?);
        }
    }
    Ok(out)
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

impl MlpModel {
    /// Text layout: header, config lines, one `layer IN OUT` block per layer
    /// (`w` row per output unit, then `b`), optional `norm-min`/`norm-max`
    /// and `label` lines, `end`. Floats use shortest round-trip formatting.
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut s = format!("mlp v1\nlayout {LAYOUT_VERSION} {}\n", c.input_dim);
        s.push_str(&format!("hidden {}\n", c.hidden.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")));
        s.push_str(&format!(
            "train {} {} {} {} {} {} {} {} {}\n",
            c.dropout, c.init_std, c.learning_rate, c.batch_size, c.epochs, c.seed, c.beta1, c.beta2, c.adam_eps
        ));
        for l in &self.layers {
            s.push_str(&format!("layer {} {}\n", l.inputs, l.outputs));
            for o in 0..l.outputs {
                s.push_str(&format!("w {}\n", join(&l.w[o * l.inputs..(o + 1) * l.inputs])));
            }
            s.push_str(&format!("b {}\n", join(&l.b)));
        }
        if let Some(n) = &self.feature_norm {
            s.push_str(&format!("norm-min {}\nnorm-max {}\n", join(&n.mins), join(&n.maxs)));
        }
        if let Some(l) = &self.label_scale {
            s.push_str(&format!("label {} {}\n", l.min, l.max));
        }
        s.push_str("end\n");
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.split_whitespace().collect::<Vec<_>>())).peekable();
        let mut next = |what: &str| lines.next().ok_or_else(|| Error::parse(0, format!("missing {what} (truncated file?)")));
        fn nums<T: std::str::FromStr>(n: usize, v: &[&str]) -> Result<Vec<T>> {
            v.iter().map(|s| s.parse().map_err(|_| Error::parse(n, format!("bad number {s:?}")))).collect()
        }
        let (n, l) = next("header")?;
        if l != ["mlp", "v1"] {
            return Err(Error::parse(n, "expected `mlp v1`"));
        }
        let (n, l) = next("layout")?;
        let input_dim = match l[..] {
            ["layout", v, d] if v == LAYOUT_VERSION.to_string() => nums::<usize>(n, &[d])?[0],
            _ => return Err(Error::parse(n, format!("expected `layout {LAYOUT_VERSION} <dim>`"))),
        };
        let (n, l) = next("hidden")?;
        if l.first() != Some(&"hidden") {
            return Err(Error::parse(n, "expected `hidden ...`"));
        }
        let hidden = nums::<usize>(n, &l[1..])?;
        let (n, l) = next("train")?;
        if l.len() != 10 || l[0] != "train" {
            return Err(Error::parse(n, "expected `train` with 9 values"));
        }
        let f = nums::<f64>(n, &l[1..])?;
        let config = MlpConfig {
            input_dim,
            hidden,
            dropout: f[0],
            init_std: f[1],
            learning_rate: f[2],
            batch_size: nums::<usize>(n, &l[4..5])?[0],
            epochs: nums::<usize>(n, &l[5..6])?[0],
            seed: nums::<u64>(n, &l[6..7])?[0],
            beta1: f[6],
            beta2: f[7],
            adam_eps: f[8],
        };
        config.validate()?;
        let mut layers = Vec::new();
        for (i, o) in config.shapes() {
            let (n, l) = next("layer")?;
            if l != ["layer", i.to_string().as_str(), o.to_string().as_str()] {
                return Err(Error::parse(n, format!("expected `layer {i} {o}`")));
            }
            let mut w = Vec::with_capacity(i * o);
            for _ in 0..o {
                let (n, l) = next("weights")?;
                if l.first() != Some(&"w") || l.len() != i + 1 {
                    return Err(Error::parse(n, format!("expected `w` with {i} values")));
                }
                w.extend(nums::<f64>(n, &l[1..])?);
            }
            let (n, l) = next("biases")?;
            if l.first() != Some(&"b") || l.len() != o + 1 {
                return Err(Error::parse(n, format!("expected `b` with {o} values")));
            }
            layers.push(Layer { inputs: i, outputs: o, w, b: nums(n, &l[1..])? });
        }
        let mut model = MlpModel { config, layers, feature_norm: None, label_scale: None };
        loop {
            let (n, l) = next("end")?;
            match l.first().copied() {
                Some("norm-min") => {
                    let mins = nums(n, &l[1..])?;
                    let (n2, l2) = next("norm-max")?;
                    if l2.first() != Some(&"norm-max") {
                        return Err(Error::parse(n2, "expected `norm-max`"));
                    }
                    let maxs: Vec<f64> = nums(n2, &l2[1..])?;
                    if mins.len() != input_dim || maxs.len() != input_dim {
                        return Err(Error::DimensionMismatch { expected: input_dim, got: mins.len().min(maxs.len()) });
                    }
                    model.feature_norm = Some(Normalization { mins, maxs });
                }
                Some("label") if l.len() == 3 => {
                    let v = nums::<f64>(n, &l[1..])?;
                    model.label_scale = Some(LabelScale { min: v[0], max: v[1] });
                }
                Some("end") => return Ok(model),
                _ => return Err(Error::parse(n, "unexpected line")),
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::DatasetEntry;

    fn small(input: usize, hidden: Vec<usize>, dropout: f64) -> MlpConfig {
        MlpConfig { input_dim: input, hidden, dropout, init_std: 1.0, ..Default::default() }
    }

    #[test]
    fn init_is_deterministic() {
        let c = MlpConfig::default();
        assert_eq!(init(&c, 4).unwrap(), init(&c, 4).unwrap());
        assert_ne!(init(&c, 4).unwrap(), init(&c, 5).unwrap());
        let m = init(&c, 4).unwrap();
        assert!(m.layers.iter().all(|l| l.b.iter().all(|b| *b == 0.0)));
        let zero = init(&MlpConfig { init_std: 0.0, ..c }, 4).unwrap();
        assert!(zero.params().iter().all(|p| *p == 0.0));
    }

    #[test]
    fn init_std_close_to_target() {
        let m = init(&MlpConfig::default(), 11).unwrap();
        let w = &m.layers[0].w;
        assert_eq!(w.len(), 95 * 60);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let sd = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64).sqrt();
        assert!((sd / 0.0005 - 1.0).abs() < 0.2, "{sd}");
    }

    #[test]
    fn zero_network_outputs_zero() {
        let m = init(&MlpConfig { init_std: 0.0, ..Default::default() }, 0).unwrap();
        assert_eq!(m.forward(&[1.0; 60], None).unwrap().0, 0.0);
        assert!(m.forward(&[1.0; 3], None).is_err());
    }

    #[test]
    fn no_dropout_matches_inference() {
        let m = init(&small(4, vec![6], 0.0), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = [0.3, -0.2, 0.9, 0.1];
        assert_eq!(m.forward(&x, Some(&mut rng)).unwrap().0, m.forward(&x, None).unwrap().0);
    }

    #[test]
    fn hand_computed_2_2_1() {
        let mut m = init(&small(2, vec![2], 0.0), 0).unwrap();
        m.layers[0].w = vec![1.0, -1.0, 0.5, 2.0];
        m.layers[0].b = vec![0.0, -1.0];
        m.layers[1].w = vec![3.0, -2.0];
        m.layers[1].b = vec![0.5];
        // h = relu([1 - 2, 0.5 + 4 - 1]) = [0, 3.5]; y = 0 - 7 + 0.5
        assert_eq!(m.forward(&[1.0, 2.0], None).unwrap().0, -6.5);
    }

    #[test]
    fn mse_definition() {
        assert_eq!(mse(&[0.0], &[2.0]).unwrap(), 4.0);
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn zero_error_zero_gradient_and_output_bias() {
        let m = init(&small(3, vec![4], 0.0), 1).unwrap();
        let xs = [[0.1, 0.2, 0.3], [0.5, -0.4, 0.2]];
        let caches: Vec<Cache> = xs.iter().map(|x| m.forward(x, None).unwrap().1).collect();
        let exact: Vec<f64> = caches.iter().map(|c| c.output).collect();
        assert!(backward(&m, &caches, &exact).unwrap().iter().all(|g| *g == 0.0));
        let ys = [1.0, -1.0];
        let g = backward(&m, &caches, &ys).unwrap();
        let want = exact.iter().zip(ys).map(|(p, y)| 2.0 * (p - y)).sum::<f64>() / 2.0;
        assert!((g.last().unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn stale_cache_rejected() {
        let a = init(&small(3, vec![4], 0.0), 1).unwrap();
        let b = init(&small(5, vec![4], 0.0), 1).unwrap();
        let (_, c) = a.forward(&[0.0; 3], None).unwrap();
        assert!(backward(&b, &[c], &[0.0]).is_err());
    }

    #[test]
    fn adam_first_step_and_trace() {
        let mut p = [1.0];
        let mut s = AdamState::new(1);
        adam_update(&mut p, &[0.5], &mut s, 0.002, 0.9, 0.999, 1e-8);
        assert!((p[0] - (1.0 - 0.002)).abs() < 1e-9);
        let mut z = [1.0];
        let mut s0 = AdamState::new(1);
        adam_update(&mut z, &[0.0], &mut s0, 0.002, 0.9, 0.999, 1e-8);
        assert_eq!(z[0], 1.0);

        // Three steps with gradients 1, -2, 0.5, traced by hand.
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
        let mut q = [0.0];
        let mut st = AdamState::new(1);
        let (mut m, mut v, mut want) = (0.0f64, 0.0f64, 0.0f64);
        for (t, g) in [1.0f64, -2.0, 0.5].into_iter().enumerate() {
            adam_update(&mut q, &[g], &mut st, lr, b1, b2, eps);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let k = t as i32 + 1;
            want -= lr * (m / (1.0 - b1.powi(k))) / ((v / (1.0 - b2.powi(k))).sqrt() + eps);
            assert!((q[0] - want).abs() < 1e-12);
        }
    }

    fn linear_dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
                let y = 3.0 * x[0] - 2.0 * x[1] + x[2] + 0.5 * x[3] + 1.0;
                DatasetEntry { features: x, label: y }
            })
            .collect();
        Dataset { names: (0..4).map(|i| format!("x{i}")).collect(), entries, normalization: None }
    }

    #[test]
    fn folds_partition() {
        let f = fold_indices(23, 10, 3).unwrap();
        let mut all: Vec<usize> = f.iter().flatten().copied().collect();
        all.sort();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        let sizes: Vec<usize> = f.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let loo = fold_indices(10, 10, 0).unwrap();
        assert!(loo.iter().all(|p| p.len() == 1));
        assert!(fold_indices(5, 10, 0).is_err());
    }

    #[test]
    fn train_requires_normalized_data() {
        let ds = linear_dataset(100, 0);
        let c = MlpConfig { input_dim: 4, epochs: 1, ..Default::default() };
        assert!(train(&ds, &c).is_err());
        let small = linear_dataset(40, 0);
        let n = small.minmax_fit().unwrap();
        assert!(train(&small.normalized(&n).unwrap(), &c).is_err());
    }

    #[test]
    fn zero_epochs_returns_init_and_runs_repeat() {
        let ds = linear_dataset(100, 1);
        let ds = ds.normalized(&ds.minmax_fit().unwrap()).unwrap();
        let c = MlpConfig { input_dim: 4, epochs: 0, seed: 9, ..Default::default() };
        let (m, r) = train(&ds, &c).unwrap();
        assert_eq!(m.layers, init(&c, 9).unwrap().layers);
        assert!(r.epoch_loss.is_empty());
        let c5 = MlpConfig { epochs: 5, ..c };
        assert_eq!(train(&ds, &c5).unwrap().1, train(&ds, &c5).unwrap().1);
    }

    #[test]
    fn model_text_round_trip() {
        let ds = linear_dataset(100, 2);
        let ds = ds.normalized(&ds.minmax_fit().unwrap()).unwrap();
        let c = MlpConfig { input_dim: 4, hidden: vec![5], epochs: 2, ..Default::default() };
        let (m, _) = train(&ds, &c).unwrap();
        let back = MlpModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
        let cut: String = m.to_text().lines().take(6).map(|l| format!("{l}\n")).collect();
        assert!(MlpModel::from_text(&cut).is_err());
    }

    #[test]
    fn grid_picks_lowest_and_keeps_order_on_ties() {
        let ds = linear_dataset(120, 3);
        let c = MlpConfig { input_dim: 4, hidden: vec![8], epochs: 30, init_std: 0.1, ..Default::default() };
        let (best, reports) = grid_search(&ds, &[c.clone(), c.clone()], 3, 0).unwrap();
        assert_eq!(best, c);
        assert_eq!(reports.len(), 2);
        assert!(grid_search(&ds, &[], 3, 0).is_err());
    }
}
