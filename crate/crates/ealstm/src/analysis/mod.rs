//! Model analysis: analytic sensitivity to static attributes (elementary
//! effects from exact gradients), the attribute-noise robustness protocol,
//! catchment-embedding extraction, clustering, and statistical model
//! comparison.

mod kmeans;
mod stats;

pub use kmeans::{adjusted_rand_index, kmeans, silhouette, variance_reduction, ClusterResult};
pub use stats::{compare_models, ComparisonResult, EXACT_LIMIT};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::cell::{CellParameters, CellVariant, SequenceInput};
use crate::checkpoint::ModelBundle;
use crate::data::{
    apply_standardization, materialize_window, window_end_indices, BasinDataset, DateInterval,
};
use crate::error::{Error, Result};
use crate::metrics::{nse, FlowSeries};
use crate::train::{input_for_variant, prediction_gradient, ModelVariant};

/// Anything that exposes the gradient of its scalar output with respect to
/// the static input vector. Lets the sensitivity machinery run on linear
/// surrogates in tests as well as real cells.
pub trait SensitivityModel: Sync {
    fn static_gradient(&self, input: &SequenceInput) -> Result<Array1<f64>>;
}

impl SensitivityModel for CellParameters {
    fn static_gradient(&self, input: &SequenceInput) -> Result<Array1<f64>> {
        let (grads, _) = prediction_gradient(self, input)?;
        Ok(grads.d_static)
    }
}

/// Per-basin mean absolute prediction gradients, plus the global score and
/// ranking: per-basin rows are min-max normalized to (0,1) and averaged
/// across basins, and ranks order attributes by descending global score.
#[derive(Debug, Clone)]
pub struct SensitivityTable {
    pub attribute_names: Vec<String>,
    pub basin_ids: Vec<String>,
    /// basins x attributes; mean over evaluated days of |d prediction /
    /// d attribute|.
    pub per_basin: Array2<f64>,
    pub global_score: Vec<f64>,
    /// 1-based; rank[j] = 1 marks the most sensitive attribute.
    pub rank: Vec<usize>,
}

/// Elementary-effect sensitivities over every valid window in `period`.
/// `datasets` must already be in the model's input space (standardized).
pub fn morris_sensitivity<M: SensitivityModel>(
    model: &M,
    datasets: &[BasinDataset],
    t_len: usize,
    period: &DateInterval,
) -> Result<SensitivityTable> {
    if datasets.is_empty() {
        return Err(Error::Config("sensitivity over zero basins".into()));
    }
    let n_attrs = datasets[0].attributes.len();
    let mut per_basin = Array2::zeros((datasets.len(), n_attrs));
    for (b, ds) in datasets.iter().enumerate() {
        let ends = window_end_indices_ignoring_targets(ds, t_len, period);
        if ends.is_empty() {
            return Err(Error::Data(format!(
                "basin {}: no evaluation days in the period",
                ds.basin_id
            )));
        }
        let sums: Vec<Array1<f64>> = ends
            .par_iter()
            .map(|end| {
                let window = materialize_window_any_target(ds, *end, t_len);
                model.static_gradient(&window)
            })
            .collect::<Result<_>>()?;
        let mut acc = Array1::<f64>::zeros(n_attrs);
        for g in &sums {
            acc += &g.mapv(f64::abs);
        }
        acc /= ends.len() as f64;
        per_basin.row_mut(b).assign(&acc);
    }

    // Global score: min-max normalize each basin's row to (0,1), then
    // average over basins. A flat row normalizes to 0.5 everywhere.
    let mut global_score = vec![0.0; n_attrs];
    for b in 0..datasets.len() {
        let row = per_basin.row(b);
        let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (j, v) in row.iter().enumerate() {
            let norm = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            global_score[j] += norm;
        }
    }
    for v in global_score.iter_mut() {
        *v /= datasets.len() as f64;
    }

    let mut order: Vec<usize> = (0..n_attrs).collect();
    order.sort_by(|&a, &b| {
        global_score[b]
            .partial_cmp(&global_score[a])
            .expect("finite scores")
    });
    let mut rank = vec![0usize; n_attrs];
    for (pos, &attr) in order.iter().enumerate() {
        rank[attr] = pos + 1;
    }

    Ok(SensitivityTable {
        attribute_names: datasets[0].attribute_names.clone(),
        basin_ids: datasets.iter().map(|d| d.basin_id.clone()).collect(),
        per_basin,
        global_score,
        rank,
    })
}

/// Sensitivity is evaluated on the model output for every day, observed
/// discharge or not, so the window index ignores the target.
fn window_end_indices_ignoring_targets(
    ds: &BasinDataset,
    t_len: usize,
    interval: &DateInterval,
) -> Vec<usize> {
    ds.rows_in(interval).filter(|&d| d + 1 >= t_len).collect()
}

fn materialize_window_any_target(ds: &BasinDataset, end: usize, t_len: usize) -> SequenceInput {
    let lo = end + 1 - t_len;
    SequenceInput {
        dynamic: ds.forcings.slice(ndarray::s![lo..=end, ..]).to_owned(),
        static_attrs: Some(ds.attributes.clone()),
    }
}

/// Sensitivity table for a trained checkpoint over raw (unstandardized)
/// datasets. Defined for the entity-aware variant, whose input gate the
/// method was designed around.
pub fn morris_for_bundle(
    bundle: &ModelBundle,
    raw_datasets: &[BasinDataset],
    t_len: usize,
    period: &DateInterval,
) -> Result<SensitivityTable> {
    if bundle.params.dims.variant != CellVariant::Ealstm {
        return Err(Error::Config(
            "sensitivity analysis requires an ealstm checkpoint".into(),
        ));
    }
    let std_datasets: Vec<BasinDataset> = raw_datasets
        .iter()
        .map(|ds| apply_standardization(ds, &bundle.stats))
        .collect::<Result<_>>()?;
    morris_sensitivity(&bundle.params, &std_datasets, t_len, period)
}

/// NSE distribution under additive Gaussian noise on the standardized
/// static attributes: one entry per (draw, basin) at each noise level.
#[derive(Debug, Clone)]
pub struct NoiseLevelResult {
    pub sigma: f64,
    /// Flattened draw-major: `nses[draw * n_basins + basin]`.
    pub nses: Vec<f64>,
}

impl NoiseLevelResult {
    pub fn median_nse(&self) -> f64 {
        let mut v = self.nses.clone();
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite NSE"));
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }
}

pub fn default_noise_sigmas() -> Vec<f64> {
    (1..=10).map(|k| k as f64 / 10.0).collect()
}

/// Re-run validation with perturbed attributes. Noise is drawn in
/// standardized units; each (sigma, draw) pair has its own deterministic
/// substream, and draws run in parallel.
pub fn noise_robustness(
    bundle: &ModelBundle,
    raw_datasets: &[BasinDataset],
    period: &DateInterval,
    t_len: usize,
    sigmas: &[f64],
    draws: usize,
    seed: u64,
) -> Result<Vec<NoiseLevelResult>> {
    if bundle.params.dims.static_dim == 0 {
        return Err(Error::Config(
            "noise robustness requires a model with static attributes".into(),
        ));
    }
    if draws == 0 {
        return Err(Error::Config("draws must be positive".into()));
    }
    let variant = ModelVariant::from_dims(&bundle.params.dims);
    let std_datasets: Vec<BasinDataset> = raw_datasets
        .iter()
        .map(|ds| apply_standardization(ds, &bundle.stats))
        .collect::<Result<_>>()?;

    // Window indices and observed values are shared by all draws.
    let per_basin_ends: Vec<Vec<usize>> = std_datasets
        .iter()
        .map(|ds| window_end_indices(ds, t_len, period))
        .collect();
    for (ds, ends) in raw_datasets.iter().zip(&per_basin_ends) {
        if ends.len() < 2 {
            return Err(Error::Data(format!(
                "basin {}: fewer than 2 evaluation windows in the period",
                ds.basin_id
            )));
        }
    }

    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut results = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        if sigma < 0.0 {
            return Err(Error::Config(format!("negative noise sigma {sigma}")));
        }
        let draw_seeds: Vec<u64> = (0..draws).map(|_| master.random()).collect();
        let per_draw: Vec<Vec<f64>> = draw_seeds
            .par_iter()
            .map(|ds_seed| -> Result<Vec<f64>> {
                let mut rng = ChaCha8Rng::seed_from_u64(*ds_seed);
                let normal = Normal::new(0.0, 1.0).expect("unit normal");
                let mut out = Vec::with_capacity(std_datasets.len());
                for (b, ds) in std_datasets.iter().enumerate() {
                    // sigma = 0 must reproduce the unperturbed attributes
                    // bit for bit, so the noise term is skipped entirely.
                    let attrs = if sigma == 0.0 {
                        ds.attributes.clone()
                    } else {
                        let noise = Array1::from_shape_fn(ds.attributes.len(), |_| {
                            sigma * normal.sample(&mut rng)
                        });
                        &ds.attributes + &noise
                    };
                    let mut sim = Vec::with_capacity(per_basin_ends[b].len());
                    let mut obs = Vec::with_capacity(per_basin_ends[b].len());
                    for &end in &per_basin_ends[b] {
                        let mut window = materialize_window(ds, end, t_len);
                        window.input.static_attrs = Some(attrs.clone());
                        let input = input_for_variant(variant, window.input);
                        let yhat = crate::cell::predict(&bundle.params, &input)?;
                        sim.push(bundle.stats.destandardize_discharge(yhat));
                        obs.push(raw_datasets[b].discharge[end]);
                    }
                    out.push(nse(&FlowSeries::new(sim, obs)?)?);
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        let mut nses = Vec::with_capacity(draws * std_datasets.len());
        for draw in per_draw {
            nses.extend(draw);
        }
        results.push(NoiseLevelResult { sigma, nses });
    }
    Ok(results)
}

/// The learned catchment embedding: one input-gate activation row per
/// basin, entries strictly inside (0,1).
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    pub basin_ids: Vec<String>,
    /// basins x hidden_size.
    pub matrix: Array2<f64>,
}

pub fn extract_embedding(
    bundle: &ModelBundle,
    raw_datasets: &[BasinDataset],
) -> Result<EmbeddingMatrix> {
    if bundle.params.dims.variant != CellVariant::Ealstm {
        return Err(Error::Config(
            "embedding extraction requires an ealstm checkpoint".into(),
        ));
    }
    if raw_datasets.is_empty() {
        return Err(Error::Config("embedding over zero basins".into()));
    }
    let h = bundle.params.dims.hidden_size;
    let mut matrix = Array2::zeros((raw_datasets.len(), h));
    for (b, ds) in raw_datasets.iter().enumerate() {
        let std_ds = apply_standardization(ds, &bundle.stats)?;
        let mut a = bundle.params.w_i.dot(&std_ds.attributes);
        a += &bundle.params.b_i;
        matrix.row_mut(b).assign(&a.mapv(crate::cell::sigmoid));
    }
    Ok(EmbeddingMatrix {
        basin_ids: raw_datasets.iter().map(|d| d.basin_id.clone()).collect(),
        matrix,
    })
}
