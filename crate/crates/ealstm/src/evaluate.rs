//! Running trained models over an evaluation period and assembling the
//! per-basin metric reports. Predictions happen in standardized space and
//! are mapped back to mm/day with the checkpoint's training moments before
//! any metric is computed.

use chrono::NaiveDate;

use crate::cell::predict;
use crate::checkpoint::ModelBundle;
use crate::data::{
    apply_standardization, materialize_window, window_end_indices, BasinDataset, DateInterval,
};
use crate::error::{Error, Result};
use crate::metrics::{signatures, AggregateReport, FlowSeries, MetricReport};
use crate::train::{ensemble_predict, input_for_variant, ModelVariant};

/// Simulated vs. observed discharge for one basin, physical units.
#[derive(Debug, Clone)]
pub struct BasinSeries {
    pub basin_id: String,
    pub dates: Vec<NaiveDate>,
    pub simulated: Vec<f64>,
    pub observed: Vec<f64>,
}

fn check_bundle_against(bundle: &ModelBundle, ds: &BasinDataset) -> Result<()> {
    if bundle.attribute_names != ds.attribute_names {
        return Err(Error::Data(format!(
            "basin {}: attribute schema does not match the checkpoint (expected [{}])",
            ds.basin_id,
            bundle.attribute_names.join(", ")
        )));
    }
    Ok(())
}

/// Predict one basin over `interval` with a single model; one value per
/// valid window end-day.
pub fn predict_interval(
    bundle: &ModelBundle,
    raw: &BasinDataset,
    interval: &DateInterval,
    t_len: usize,
) -> Result<BasinSeries> {
    check_bundle_against(bundle, raw)?;
    let variant = ModelVariant::from_dims(&bundle.params.dims);
    let std_ds = apply_standardization(raw, &bundle.stats)?;
    let ends = window_end_indices(&std_ds, t_len, interval);
    let mut series = BasinSeries {
        basin_id: raw.basin_id.clone(),
        dates: Vec::with_capacity(ends.len()),
        simulated: Vec::with_capacity(ends.len()),
        observed: Vec::with_capacity(ends.len()),
    };
    for end in ends {
        let window = materialize_window(&std_ds, end, t_len);
        let input = input_for_variant(variant, window.input);
        let yhat = predict(&bundle.params, &input)?;
        series.dates.push(window.date);
        series
            .simulated
            .push(bundle.stats.destandardize_discharge(yhat));
        series.observed.push(raw.discharge[end]);
    }
    Ok(series)
}

/// Predict one basin with the mean of an ensemble of models. All bundles
/// must share architecture and standardization provenance.
pub fn ensemble_interval(
    bundles: &[&ModelBundle],
    raw: &BasinDataset,
    interval: &DateInterval,
    t_len: usize,
) -> Result<BasinSeries> {
    let first = bundles
        .first()
        .ok_or_else(|| Error::Config("ensemble of zero checkpoints".into()))?;
    for b in bundles {
        if b.stats != first.stats {
            return Err(Error::Data(
                "ensemble members carry different standardization stats".into(),
            ));
        }
        check_bundle_against(b, raw)?;
    }
    let variant = ModelVariant::from_dims(&first.params.dims);
    let std_ds = apply_standardization(raw, &first.stats)?;
    let ends = window_end_indices(&std_ds, t_len, interval);
    let inputs: Vec<_> = ends
        .iter()
        .map(|end| {
            let window = materialize_window(&std_ds, *end, t_len);
            input_for_variant(variant, window.input)
        })
        .collect();
    let models: Vec<&crate::cell::CellParameters> = bundles.iter().map(|b| &b.params).collect();
    let mean_std = ensemble_predict(&models, &inputs)?;
    Ok(BasinSeries {
        basin_id: raw.basin_id.clone(),
        dates: ends.iter().map(|e| std_ds.dates[*e]).collect(),
        simulated: mean_std
            .into_iter()
            .map(|v| first.stats.destandardize_discharge(v))
            .collect(),
        observed: ends.iter().map(|e| raw.discharge[*e]).collect(),
    })
}

/// Metric row for one basin's series. Signatures are computed from the
/// observed discharge over the evaluation interval when requested; basins
/// whose record cannot support them get `None`.
pub fn report_for_series(
    series: &BasinSeries,
    raw: &BasinDataset,
    interval: &DateInterval,
    with_signatures: bool,
) -> Result<MetricReport> {
    let flow = FlowSeries::new(series.simulated.clone(), series.observed.clone())?;
    let mut report = MetricReport::from_series(&series.basin_id, &flow)?;
    if with_signatures {
        let rows = raw.rows_in(interval);
        let dates = &raw.dates[rows.clone()];
        let discharge = &raw.discharge[rows.clone()];
        let precip: Vec<f64> = raw.forcings.column(0).to_vec()[rows].to_vec();
        report.signatures = signatures(dates, discharge, &precip).ok();
    }
    Ok(report)
}

/// Per-basin rows plus the aggregate for one model (or ensemble) over an
/// interval. Basins that cannot be scored are skipped with a warning.
pub struct Evaluation {
    pub rows: Vec<MetricReport>,
    pub aggregate: AggregateReport,
    pub warnings: Vec<String>,
}

pub fn evaluate_bundles(
    bundles: &[&ModelBundle],
    datasets: &[BasinDataset],
    interval: &DateInterval,
    t_len: usize,
    with_signatures: bool,
) -> Result<Evaluation> {
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for ds in datasets {
        let series = if bundles.len() == 1 {
            predict_interval(bundles[0], ds, interval, t_len)?
        } else {
            ensemble_interval(bundles, ds, interval, t_len)?
        };
        if series.simulated.len() < 2 {
            warnings.push(format!(
                "basin {} skipped: fewer than 2 evaluation windows",
                ds.basin_id
            ));
            continue;
        }
        match report_for_series(&series, ds, interval, with_signatures) {
            Ok(report) => rows.push(report),
            Err(e) => warnings.push(format!("basin {} skipped: {}", ds.basin_id, e)),
        }
    }
    if rows.is_empty() {
        return Err(Error::Data(
            "no basin could be evaluated over the requested interval".into(),
        ));
    }
    let aggregate = AggregateReport::from_rows(&rows)?;
    Ok(Evaluation {
        rows,
        aggregate,
        warnings,
    })
}
