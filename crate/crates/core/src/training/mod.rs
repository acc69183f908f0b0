//! Loss, gradients, optimizer, cross-validation and the training loop.

mod folds;
mod optim;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use folds::{make_folds, FoldSplit};
pub use optim::{adamw_step, adamw_update, lr_schedule, LrScheduler, OptimizerState, IMPROVEMENT_TOL};

use crate::encoding::encode_anthro_z;
use crate::error::{shape_err, Error, Result};
use crate::geometry::{neighborhood_indices, sample_neighbor_indices, Position, SampleMode};
use crate::network::{
    anthro_z_for, backward_from_output, forward_cached, forward_raw, ModelInput, ModelParams,
    Tensor1d, Variant,
};
use crate::parallel::par_map;
use crate::spectra::{lsd_slices, Dataset, Hrtf};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub patience_epochs: usize,
    pub lr_halving: f64,
    pub max_epochs: usize,
    /// Neighborhood radius, meters.
    pub delta: f64,
    pub n_neighbors: usize,
    pub seed: u64,
    pub folds: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            lr0: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            patience_epochs: 3,
            lr_halving: 0.5,
            max_epochs: 100,
            delta: 0.3,
            n_neighbors: 8,
            seed: 0,
            folds: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 {
            return err("batch_size must be positive");
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return err("lr must be finite and non-negative");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return err("beta1 and beta2 must lie in (0, 1)");
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return err("eps must be positive and weight_decay non-negative");
        }
        if self.patience_epochs == 0 || !(self.lr_halving > 0.0 && self.lr_halving <= 1.0) {
            return err("patience must be positive and lr_halving in (0, 1]");
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return err("delta must be positive");
        }
        if self.n_neighbors == 0 {
            return err("n_neighbors must be positive");
        }
        if self.folds < 2 {
            return err("folds must be at least 2");
        }
        Ok(())
    }
}

/// LSD between `pred` and `target` and its gradient with respect to `pred`.
pub fn loss_lsd(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(shape_err(format!(
            "loss inputs have lengths {} and {}",
            pred.len(),
            target.len()
        )));
    }
    let value = lsd_slices(pred, target);
    let k = pred.len() as f64;
    let grad = if value > 1e-12 {
        pred.iter().zip(target).map(|(p, t)| (p - t) / (k * value)).collect()
    } else {
        vec![0.0; pred.len()]
    };
    Ok((value, grad))
}

/// Loss of one example and its gradient over the flat parameter view.
pub fn backward(input: &ModelInput, params: &ModelParams, target: &Hrtf) -> Result<(f64, Vec<f64>)> {
    let (pred, cache) = forward_cached(input, params)?;
    let (loss, g_out) = loss_lsd(&pred, target.bins())?;
    if !loss.is_finite() {
        let name = params
            .tensors()
            .iter()
            .find(|t| t.data.iter().any(|v| !v.is_finite()))
            .map_or_else(|| "loss".to_string(), |t| t.name.clone());
        return Err(Error::NonFinite { name });
    }
    let mut grad = vec![0.0; params.num_params()];
    backward_from_output(input, params, &cache, &g_out, &mut grad)?;
    Ok((loss, grad))
}

/// Mean loss and mean gradient over a batch. Items may run in parallel; the
/// sum is always taken in item order.
pub fn batch_gradient(items: &[(ModelInput, Hrtf)], params: &ModelParams) -> Result<(f64, Vec<f64>)> {
    if items.is_empty() {
        return Err(shape_err("empty batch"));
    }
    let per_item = par_map(items, |_, (input, target)| backward(input, params, target));
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.num_params()];
    for r in per_item {
        let (l, g) = r?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let inv = 1.0 / items.len() as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((loss * inv, grad))
}

/// SplitMix64 finalizer over a sequence of words.
pub(crate) fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x243f_6a88_85a3_08d3;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

/// Supervised targets of a set of subjects with their candidate neighbors.
pub(crate) struct TargetPool<'d> {
    subjects: Vec<PoolSubject<'d>>,
    /// (subject, measurement) pairs with a nonempty neighborhood.
    pub targets: Vec<(usize, usize)>,
    pub skipped: usize,
}

struct PoolSubject<'d> {
    id: &'d str,
    positions: Vec<Position>,
    spectra: Vec<&'d Hrtf>,
    anthro: Tensor1d,
    candidates: std::sync::Arc<Vec<Vec<usize>>>,
}

impl<'d> TargetPool<'d> {
    pub fn new(dataset: &'d Dataset, ids: &[String], params: &ModelParams, delta: f64) -> Result<Self> {
        let mut subjects: Vec<PoolSubject<'d>> = Vec::with_capacity(ids.len());
        let mut targets = Vec::new();
        let mut skipped = 0;
        for id in ids {
            let s = dataset
                .subject(id)
                .ok_or_else(|| Error::Domain(format!("unknown subject {id}")))?;
            let positions = s.positions();
            let candidates = match subjects.iter().find(|o| o.positions == positions) {
                Some(o) => o.candidates.clone(),
                None => std::sync::Arc::new(
                    positions
                        .iter()
                        .map(|p| neighborhood_indices(&positions, p, delta))
                        .collect(),
                ),
            };
            let si = subjects.len();
            for (mi, c) in candidates.iter().enumerate() {
                if c.is_empty() {
                    skipped += 1;
                } else {
                    targets.push((si, mi));
                }
            }
            subjects.push(PoolSubject {
                id: s.id(),
                spectra: s.measurements().iter().map(|(_, h)| h).collect(),
                positions,
                anthro: encode_anthro_z(&anthro_z_for(params, s.anthropometry())?),
                candidates,
            });
        }
        Ok(Self {
            subjects,
            targets,
            skipped,
        })
    }

    pub fn subject_id(&self, target: (usize, usize)) -> &'d str {
        self.subjects[target.0].id
    }

    pub fn example(&self, target: (usize, usize), n: usize, mode: SampleMode, seed: u64) -> Result<(ModelInput, Hrtf)> {
        let s = &self.subjects[target.0];
        let cands = &s.candidates[target.1];
        let picks = sample_neighbor_indices(cands.len(), n, mode, seed)?;
        let neighbors: Vec<Position> = picks.iter().map(|&i| s.positions[cands[i]]).collect();
        let spectra: Vec<&[f64]> = picks.iter().map(|&i| s.spectra[cands[i]].bins()).collect();
        let input = ModelInput::assemble(&s.positions[target.1], &neighbors, &spectra, s.anthro.clone())?;
        Ok((input, s.spectra[target.1].clone()))
    }

    /// Mean test-mode LSD over every target, or `None` if there are none.
    pub fn mean_lsd(&self, params: &ModelParams) -> Result<Option<f64>> {
        if self.targets.is_empty() {
            return Ok(None);
        }
        let n = params.n_neighbors();
        let losses = par_map(&self.targets, |_, &t| -> Result<f64> {
            let (input, target) = self.example(t, n, SampleMode::Test, 0)?;
            Ok(lsd_slices(&forward_raw(&input, params)?, target.bins()))
        });
        let mut sum = 0.0;
        for l in losses {
            sum += l?;
        }
        Ok(Some(sum / self.targets.len() as f64))
    }
}

/// One row of the per-epoch log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub fold: usize,
    pub train_lsd: f64,
    /// `None` when the fold holds out no subjects.
    pub val_lsd: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub split: FoldSplit,
    /// Parameters at the best monitored epoch (initialization if none ran).
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    /// Best monitored loss: validation LSD, or training LSD without a
    /// validation set.
    pub best_loss: f64,
    pub best_epoch: usize,
    /// Test-mode LSD of the returned parameters over the training targets.
    pub final_train_lsd: f64,
    pub final_val_lsd: Option<f64>,
    pub skipped_targets: usize,
    /// Examples that contributed gradients, per subject id.
    pub gradient_items: BTreeMap<String, usize>,
}

/// Trains one fold from a fresh initialization.
pub fn train_fold(dataset: &Dataset, split: &FoldSplit, variant: Variant, cfg: &TrainConfig) -> Result<FoldResult> {
    let init_seed = derive_seed(&[cfg.seed, split.fold_index as u64, 0x1]);
    let mut params = ModelParams::init(variant, cfg.n_neighbors, init_seed)?;
    let norm = split
        .train_subjects
        .first()
        .and_then(|id| dataset.subject(id))
        .and_then(|s| s.anthropometry().norm().copied());
    params.set_anthro_norm(norm);
    train_fold_from(dataset, split, params, cfg)
}

/// Trains one fold starting from `params`.
pub fn train_fold_from(
    dataset: &Dataset,
    split: &FoldSplit,
    mut params: ModelParams,
    cfg: &TrainConfig,
) -> Result<FoldResult> {
    cfg.validate()?;
    if params.n_neighbors() != cfg.n_neighbors {
        return Err(Error::Config(format!(
            "model has N = {}, configuration N = {}",
            params.n_neighbors(),
            cfg.n_neighbors
        )));
    }
    if split.val_subjects.iter().any(|v| split.train_subjects.contains(v)) {
        return Err(Error::Config("training and validation subjects overlap".into()));
    }
    let train_pool = TargetPool::new(dataset, &split.train_subjects, &params, cfg.delta)?;
    let val_pool = TargetPool::new(dataset, &split.val_subjects, &params, cfg.delta)?;
    if train_pool.targets.is_empty() {
        return Err(Error::Uncoverable(format!(
            "no training target has one within delta = {}",
            cfg.delta
        )));
    }

    let n = cfg.n_neighbors;
    let fold = split.fold_index as u64;
    let mut state = OptimizerState::new(params.num_params());
    let mut scheduler = LrScheduler::new(cfg);
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut log = Vec::with_capacity(cfg.max_epochs);
    let mut gradient_items: BTreeMap<String, usize> = BTreeMap::new();

    for epoch in 1..=cfg.max_epochs {
        let lr = scheduler.lr();
        let mut order = train_pool.targets.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, fold, epoch as u64])));
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = chunk
                .iter()
                .enumerate()
                .map(|(i, &t)| {
                    let item = (b * cfg.batch_size + i) as u64;
                    let seed = derive_seed(&[cfg.seed, fold, epoch as u64, item]);
                    *gradient_items.entry(train_pool.subject_id(t).to_string()).or_default() += 1;
                    train_pool.example(t, n, SampleMode::Train, seed)
                })
                .collect::<Result<Vec<_>>>()?;
            let (loss, grad) = batch_gradient(&batch, &params)?;
            loss_sum += loss * batch.len() as f64;
            adamw_step(&mut params, &grad, &mut state, lr, cfg)?;
        }
        let train_lsd = loss_sum / order.len() as f64;
        let val_lsd = val_pool.mean_lsd(&params)?;
        let monitored = val_lsd.unwrap_or(train_lsd);
        if !monitored.is_finite() {
            return Err(Error::NonFinite {
                name: "epoch loss".into(),
            });
        }
        if scheduler.observe(monitored) {
            best = params.clone();
            best_epoch = epoch;
        }
        log.push(EpochLog {
            epoch,
            fold: split.fold_index,
            train_lsd,
            val_lsd,
            lr,
        });
    }

    let final_train_lsd = train_pool.mean_lsd(&best)?.unwrap_or(f64::NAN);
    let final_val_lsd = val_pool.mean_lsd(&best)?;
    let best_loss = if best_epoch == 0 {
        final_val_lsd.unwrap_or(final_train_lsd)
    } else {
        scheduler.best()
    };
    Ok(FoldResult {
        split: split.clone(),
        params: best,
        log,
        best_loss,
        best_epoch,
        final_train_lsd,
        final_val_lsd,
        skipped_targets: train_pool.skipped + val_pool.skipped,
        gradient_items,
    })
}

/// Cross-validated training: one model per fold.
pub fn train(dataset: &Dataset, variant: Variant, cfg: &TrainConfig) -> Result<Vec<FoldResult>> {
    cfg.validate()?;
    let splits = make_folds(&dataset.subject_ids(), cfg.folds, cfg.seed)?;
    splits.iter().map(|s| train_fold(dataset, s, variant, cfg)).collect()
}

/// Trains a single model on every subject of the dataset.
pub fn train_all(dataset: &Dataset, variant: Variant, cfg: &TrainConfig) -> Result<FoldResult> {
    train_fold(dataset, &FoldSplit::all_train(&dataset.subject_ids()), variant, cfg)
}

pub const LOG_HEADER: &str = "epoch,fold,train_lsd,val_lsd,lr";

pub fn write_log_csv(w: &mut impl Write, rows: &[EpochLog]) -> Result<()> {
    writeln!(w, "{LOG_HEADER}")?;
    for r in rows {
        let val = r.val_lsd.map_or_else(String::new, |v| v.to_string());
        writeln!(w, "{},{},{},{},{}", r.epoch, r.fold, r.train_lsd, val, r.lr)?;
    }
    Ok(())
}

/// Plain `key = value` summary of a training run.
pub fn run_summary(variant: Variant, cfg: &TrainConfig, folds: &[FoldResult]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "variant = {variant}");
    let _ = writeln!(s, "n_neighbors = {}", cfg.n_neighbors);
    let _ = writeln!(s, "delta = {}", cfg.delta);
    let _ = writeln!(s, "epochs = {}", cfg.max_epochs);
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(s, "folds = {}", folds.len());
    for f in folds {
        let k = f.split.fold_index;
        let _ = writeln!(s, "fold{k}.best_epoch = {}", f.best_epoch);
        let _ = writeln!(s, "fold{k}.best_loss = {}", f.best_loss);
        let _ = writeln!(s, "fold{k}.train_lsd = {}", f.final_train_lsd);
        if let Some(v) = f.final_val_lsd {
            let _ = writeln!(s, "fold{k}.val_lsd = {v}");
        }
        let _ = writeln!(s, "fold{k}.skipped_targets = {}", f.skipped_targets);
    }
    let vals: Vec<f64> = folds.iter().filter_map(|f| f.final_val_lsd).collect();
    if !vals.is_empty() {
        let _ = writeln!(s, "mean_val_lsd = {}", vals.iter().sum::<f64>() / vals.len() as f64);
    }
    s
}
