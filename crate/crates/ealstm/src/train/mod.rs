//! Training: objectives (plain MSE and the basin-averaged NSE* loss),
//! mini-batching across basins, the optimizer loop, seed ensembling, and
//! hyperparameter grid search with basin-wise k-fold cross validation.

mod adam;
mod backward;

pub use adam::Adam;
pub use backward::{backward, prediction_gradient, GradientSet};

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array1;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{init_parameters, predict, CellParameters, CellVariant, SequenceInput};
use crate::checkpoint::{save_checkpoint, ModelBundle};
use crate::data::{
    basin_discharge_std, materialize_window, standardize, window_end_indices, BasinDataset,
    PeriodSplit,
};
use crate::error::{Error, Result};

/// Distinct stream from parameter initialization, which consumes `seed`
/// directly.
const TRAIN_RNG_SALT: u64 = 0xA076_1D64_78BD_642F;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    BasinNse,
}

/// Objective choice. `epsilon` guards the per-basin normalization of the
/// basin-averaged loss against low-variance basins; it shares the units of
/// s(b), the per-basin discharge standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub epsilon: f64,
}

impl LossSpec {
    pub fn mse() -> Self {
        LossSpec {
            kind: LossKind::Mse,
            epsilon: 0.1,
        }
    }

    pub fn basin_nse() -> Self {
        LossSpec {
            kind: LossKind::BasinNse,
            epsilon: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config(format!(
                "loss epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Per-sample weight: 1 for MSE, `1/(s(b)+eps)^2` for the
    /// basin-averaged loss.
    pub fn sample_weight(&self, basin_std: f64) -> f64 {
        match self.kind {
            LossKind::Mse => 1.0,
            LossKind::BasinNse => {
                let denom = basin_std + self.epsilon;
                1.0 / (denom * denom)
            }
        }
    }
}

/// Batch loss over `(basin_id, predicted, observed)` triples: the mean of
/// per-sample squared errors, each weighted by its basin's normalization.
/// The mean (rather than a bare double sum) keeps the value independent of
/// batch size.
pub fn loss_value(
    predictions: &[(&str, f64, f64)],
    spec: &LossSpec,
    basin_stats: &HashMap<String, f64>,
) -> Result<f64> {
    spec.validate()?;
    if predictions.is_empty() {
        return Err(Error::Config("loss over an empty batch".into()));
    }
    let mut total = 0.0;
    for (idx, (basin_id, predicted, observed)) in predictions.iter().enumerate() {
        if !predicted.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite prediction for sample {} (basin {})",
                idx, basin_id
            )));
        }
        if !observed.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite observation for sample {} (basin {})",
                idx, basin_id
            )));
        }
        let weight = match spec.kind {
            LossKind::Mse => 1.0,
            LossKind::BasinNse => {
                let s = basin_stats.get(*basin_id).ok_or_else(|| {
                    Error::Data(format!("basin {} missing from basin_stats", basin_id))
                })?;
                spec.sample_weight(*s)
            }
        };
        let r = predicted - observed;
        total += weight * r * r;
    }
    Ok(total / predictions.len() as f64)
}

/// The three model configurations: a plain LSTM ignoring static
/// attributes, an LSTM with the attributes concatenated to every step's
/// input, and the entity-aware cell feeding them to its input gate only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    Lstm,
    LstmStatic,
    Ealstm,
}

impl ModelVariant {
    pub fn uses_static(&self) -> bool {
        !matches!(self, ModelVariant::Lstm)
    }

    pub fn cell_variant(&self) -> CellVariant {
        match self {
            ModelVariant::Lstm | ModelVariant::LstmStatic => CellVariant::Lstm,
            ModelVariant::Ealstm => CellVariant::Ealstm,
        }
    }

    pub fn arch_dims(&self, dynamic_dim: usize, n_attributes: usize) -> crate::cell::ArchDims {
        crate::cell::ArchDims {
            variant: self.cell_variant(),
            hidden_size: 0, // caller fills in
            dynamic_dim,
            static_dim: if self.uses_static() { n_attributes } else { 0 },
        }
    }

    /// Recover the configuration from checkpointed dimensions.
    pub fn from_dims(dims: &crate::cell::ArchDims) -> Self {
        match (dims.variant, dims.static_dim) {
            (CellVariant::Ealstm, _) => ModelVariant::Ealstm,
            (CellVariant::Lstm, 0) => ModelVariant::Lstm,
            (CellVariant::Lstm, _) => ModelVariant::LstmStatic,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelVariant::Lstm => "lstm",
            ModelVariant::LstmStatic => "lstm_static",
            ModelVariant::Ealstm => "ealstm",
        }
    }
}

/// Drop the static vector from a window input when the variant ignores it.
pub fn input_for_variant(variant: ModelVariant, mut input: SequenceInput) -> SequenceInput {
    if !variant.uses_static() {
        input.static_attrs = None;
    }
    input
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub variant: ModelVariant,
    pub loss: LossSpec,
    pub hidden_size: usize,
    pub dropout: f64,
    pub sequence_length: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Mini-batch steps per epoch; defaults to pool_size / batch_size
    /// rounded up.
    pub steps_per_epoch: Option<usize>,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub seed: u64,
    /// Periodic checkpoint interval in epochs; 0 disables.
    pub save_every: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            variant: ModelVariant::Ealstm,
            loss: LossSpec::basin_nse(),
            hidden_size: 256,
            dropout: 0.4,
            sequence_length: 270,
            epochs: 30,
            batch_size: 256,
            steps_per_epoch: None,
            learning_rate: 1e-3,
            clip_norm: 1.0,
            seed: 0,
            save_every: 0,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.hidden_size == 0 {
            return Err(Error::Config("hidden_size must be positive".into()));
        }
        if self.sequence_length == 0 {
            return Err(Error::Config("sequence_length must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// Base learning rate halved at one and two thirds of the run.
pub fn scheduled_learning_rate(base: f64, epoch: usize, total_epochs: usize) -> f64 {
    let b1 = total_epochs.div_ceil(3);
    let b2 = (2 * total_epochs).div_ceil(3);
    if epoch >= b2 {
        base / 4.0
    } else if epoch >= b1 {
        base / 2.0
    } else {
        base
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<TrainRecord>,
    pub epoch_losses: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub log: TrainingLog,
}

/// Train one model. Standardization happens inside: pooled training-period
/// moments transform every feature, discharge targets included, and the
/// per-basin s(b) of the basin-averaged loss is computed from the
/// standardized training-period discharge. Deterministic given
/// `opts.seed`: initialization, batch sampling and dropout masks all
/// derive from it.
pub fn train(
    datasets: &[BasinDataset],
    split: &PeriodSplit,
    opts: &TrainOptions,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    opts.validate()?;
    let (std_datasets, stats) = standardize(datasets, split)?;
    let mut log = TrainingLog::default();

    // Pooled index of valid training windows.
    let mut pool: Vec<(usize, usize)> = Vec::new();
    for (b, ds) in std_datasets.iter().enumerate() {
        let ends = window_end_indices(ds, opts.sequence_length, &split.training);
        if ends.is_empty() {
            log.warnings.push(format!(
                "basin {} excluded: no usable training windows",
                ds.basin_id
            ));
            continue;
        }
        pool.extend(ends.into_iter().map(|e| (b, e)));
    }
    if pool.is_empty() {
        return Err(Error::Config(
            "all basins excluded: no usable training windows".into(),
        ));
    }

    // Per-basin loss weights from the standardized training discharge.
    let weights: Vec<f64> = std_datasets
        .iter()
        .map(|ds| basin_discharge_std(ds, &split.training).map(|s| opts.loss.sample_weight(s)))
        .collect::<Result<_>>()?;

    let mut dims = opts.variant.arch_dims(
        crate::data::FORCING_NAMES.len(),
        std_datasets[0].attributes.len(),
    );
    dims.hidden_size = opts.hidden_size;
    let mut params = init_parameters(dims, opts.seed)?;
    let mut optimizer = Adam::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ TRAIN_RNG_SALT);

    let steps_per_epoch = opts
        .steps_per_epoch
        .unwrap_or_else(|| pool.len().div_ceil(opts.batch_size))
        .max(1);

    for epoch in 0..opts.epochs {
        let lr = scheduled_learning_rate(opts.learning_rate, epoch, opts.epochs);
        let mut epoch_loss_sum = 0.0;
        for step in 0..steps_per_epoch {
            // Uniform draws from the pooled window index, plus per-sample
            // dropout masks, all taken from the training stream in sample
            // order so the run is reproducible.
            let batch: Vec<(usize, usize)> = (0..opts.batch_size)
                .map(|_| pool[rng.random_range(0..pool.len())])
                .collect();
            let masks: Vec<Option<Array1<f64>>> = (0..opts.batch_size)
                .map(|_| {
                    if opts.dropout > 0.0 {
                        let keep = 1.0 - opts.dropout;
                        Some(Array1::from_shape_fn(opts.hidden_size, |_| {
                            if rng.random::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        }))
                    } else {
                        None
                    }
                })
                .collect();

            // Per-sample gradients in parallel; the reduction below runs in
            // fixed index order so results do not depend on thread timing.
            let per_sample: Vec<(GradientSet, f64)> = batch
                .par_iter()
                .zip(masks.par_iter())
                .map(|((b, end), mask)| {
                    let ds = &std_datasets[*b];
                    let window = materialize_window(ds, *end, opts.sequence_length);
                    let input = input_for_variant(opts.variant, window.input);
                    backward(&params, &input, window.target, weights[*b], mask.as_ref())
                })
                .collect::<Result<_>>()?;

            let mut grads = GradientSet::zeros(&params, opts.sequence_length);
            let mut batch_loss = 0.0;
            for (g, l) in &per_sample {
                grads.accumulate(g);
                batch_loss += l;
            }
            let scale = 1.0 / opts.batch_size as f64;
            grads.scale(scale);
            batch_loss *= scale;
            if !grads.all_finite() || !batch_loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite batch gradient at epoch {} step {}",
                    epoch + 1,
                    step + 1
                )));
            }
            grads.clip_global_norm(opts.clip_norm);
            optimizer.step(&mut params, &grads, lr);

            epoch_loss_sum += batch_loss;
            log.records.push(TrainRecord {
                epoch: epoch + 1,
                step: step + 1,
                loss: batch_loss,
                learning_rate: lr,
            });
        }
        log.epoch_losses
            .push(epoch_loss_sum / steps_per_epoch as f64);

        if opts.save_every > 0 && (epoch + 1) % opts.save_every == 0 {
            if let Some(dir) = checkpoint_dir {
                let bundle = ModelBundle {
                    params: params.clone(),
                    stats: stats.clone(),
                    attribute_names: datasets[0].attribute_names.clone(),
                    seed: opts.seed,
                };
                save_checkpoint(
                    &dir.join(format!("seed{}_epoch{:04}.ck", opts.seed, epoch + 1)),
                    &bundle,
                )?;
            }
        }
    }

    Ok(TrainOutcome {
        bundle: ModelBundle {
            params,
            stats,
            attribute_names: datasets[0].attribute_names.clone(),
            seed: opts.seed,
        },
        log,
    })
}

/// Mean prediction over an ensemble of trained models, one value per input
/// window. All models must share architecture dimensions.
pub fn ensemble_predict(models: &[&CellParameters], inputs: &[SequenceInput]) -> Result<Vec<f64>> {
    let first = models
        .first()
        .ok_or_else(|| Error::Config("ensemble of zero models".into()))?;
    for m in models {
        if m.dims != first.dims {
            return Err(Error::Config(
                "ensemble members have mismatched architecture dimensions".into(),
            ));
        }
    }
    inputs
        .iter()
        .map(|input| {
            let mut sum = 0.0;
            for m in models {
                sum += predict(m, input)?;
            }
            Ok(sum / models.len() as f64)
        })
        .collect()
}

/// One grid-search point. Unset fields inherit from the base options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub hidden_size: Option<usize>,
    pub dropout: Option<f64>,
    pub sequence_length: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
}

impl Candidate {
    pub fn apply(&self, base: &TrainOptions) -> TrainOptions {
        let mut opts = base.clone();
        if let Some(v) = self.hidden_size {
            opts.hidden_size = v;
        }
        if let Some(v) = self.dropout {
            opts.dropout = v;
        }
        if let Some(v) = self.sequence_length {
            opts.sequence_length = v;
        }
        if let Some(v) = self.epochs {
            opts.epochs = v;
        }
        if let Some(v) = self.batch_size {
            opts.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            opts.learning_rate = v;
        }
        opts
    }

    pub fn describe(&self, base: &TrainOptions) -> String {
        let o = self.apply(base);
        format!(
            "hidden={} dropout={} seq_len={} epochs={} batch={} lr={}",
            o.hidden_size, o.dropout, o.sequence_length, o.epochs, o.batch_size, o.learning_rate
        )
    }
}

#[derive(Debug, Clone)]
pub struct GridSearchRow {
    pub candidate: Candidate,
    pub median_nse: f64,
    pub evaluations: usize,
}

/// Split basins (not time) into `k` near-equal folds in basin order.
pub fn basin_folds(n_basins: usize, k: usize) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    if n_basins < k {
        return Err(Error::Config(format!(
            "{n_basins} basins cannot be split into {k} folds"
        )));
    }
    let base = n_basins / k;
    let rem = n_basins % k;
    let mut folds = Vec::with_capacity(k);
    let mut next = 0;
    for f in 0..k {
        let size = base + usize::from(f < rem);
        folds.push((next..next + size).collect());
        next += size;
    }
    Ok(folds)
}

fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).expect("no NaN medians"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Basin-wise k-fold grid search: for each candidate and each fold, train
/// on the training-period data of the in-fold basins and score NSE on the
/// held-out basins' training-period data; the winner has the highest
/// median NSE over all held-out evaluations.
pub fn grid_search(
    datasets: &[BasinDataset],
    split: &PeriodSplit,
    base: &TrainOptions,
    candidates: &[Candidate],
    k: usize,
) -> Result<(Candidate, Vec<GridSearchRow>)> {
    if candidates.is_empty() {
        return Err(Error::Config("empty grid-search space".into()));
    }
    let folds = basin_folds(datasets.len(), k)?;

    let mut rows = Vec::with_capacity(candidates.len());
    for candidate in candidates {
        let opts = candidate.apply(base);
        opts.validate()?;
        let mut nses: Vec<f64> = Vec::new();
        for heldout in &folds {
            let train_set: Vec<BasinDataset> = datasets
                .iter()
                .enumerate()
                .filter(|(i, _)| !heldout.contains(i))
                .map(|(_, ds)| ds.clone())
                .collect();
            let outcome = train(&train_set, split, &opts, None)?;
            for &b in heldout {
                let series = crate::evaluate::predict_interval(
                    &outcome.bundle,
                    &datasets[b],
                    &split.training,
                    opts.sequence_length,
                )?;
                if series.simulated.len() >= 2 {
                    if let Ok(score) = crate::metrics::nse(&crate::metrics::FlowSeries::new(
                        series.simulated.clone(),
                        series.observed.clone(),
                    )?) {
                        nses.push(score);
                    }
                }
            }
        }
        if nses.is_empty() {
            return Err(Error::Data(
                "grid search produced no held-out evaluations".into(),
            ));
        }
        let evaluations = nses.len();
        rows.push(GridSearchRow {
            candidate: candidate.clone(),
            median_nse: median(&mut nses),
            evaluations,
        });
    }

    let best = rows
        .iter()
        .max_by(|a, b| {
            a.median_nse
                .partial_cmp(&b.median_nse)
                .expect("median NSE is finite")
        })
        .expect("non-empty rows")
        .candidate
        .clone();
    Ok((best, rows))
}
