//! Per-basin datasets: ingestion, period splitting, standardization,
//! training-window extraction, and a synthetic linear-reservoir generator
//! used as a desk-scale verification oracle.

mod load;
mod synth;

pub use load::{load_attribute_table, load_basin, load_data_root, AttributeSchema, AttributeTable};
pub use synth::{synth_basins, synth_basins_with, SynthOptions, SynthTruth};

use chrono::{Days, NaiveDate};
use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::cell::SequenceInput;
use crate::error::{Error, Result};

/// The five dynamic forcing columns, in canonical order.
pub const FORCING_NAMES: [&str; 5] = ["prcp", "tmin", "tmax", "srad", "vp"];

/// The 27 catchment attributes of the CAMELS schema, in canonical order.
pub const CAMELS_ATTRIBUTE_NAMES: [&str; 27] = [
    "p_mean",
    "pet_mean",
    "aridity",
    "p_seasonality",
    "frac_snow_daily",
    "high_prec_freq",
    "high_prec_dur",
    "low_prec_freq",
    "low_prec_dur",
    "elev_mean",
    "slope_mean",
    "area_gages2",
    "forest_frac",
    "lai_max",
    "lai_diff",
    "gvf_max",
    "gvf_diff",
    "soil_depth_pelletier",
    "soil_depth_statsgo",
    "soil_porosity",
    "soil_conductivity",
    "max_water_content",
    "sand_frac",
    "silt_frac",
    "clay_frac",
    "carb_rocks_frac",
    "geol_permeability",
];

/// Sentinel for missing discharge in source files; held as NaN in memory.
pub const MISSING_DISCHARGE_SENTINEL: f64 = -999.0;

pub fn is_missing(v: f64) -> bool {
    v.is_nan()
}

/// Inclusive date interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateInterval {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateInterval {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if end < start {
            return Err(Error::Config(format!(
                "interval end {end} precedes start {start}"
            )));
        }
        Ok(DateInterval { start, end })
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }

    pub fn overlaps(&self, other: &DateInterval) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// Training/validation period boundaries. The intervals must be disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodSplit {
    pub training: DateInterval,
    pub validation: DateInterval,
}

impl PeriodSplit {
    pub fn new(training: DateInterval, validation: DateInterval) -> Result<Self> {
        if training.overlaps(&validation) {
            return Err(Error::Config(
                "training and validation intervals overlap".into(),
            ));
        }
        Ok(PeriodSplit {
            training,
            validation,
        })
    }
}

/// One basin: a gap-free daily record of forcings and discharge plus a
/// named static attribute vector.
#[derive(Debug, Clone)]
pub struct BasinDataset {
    pub basin_id: String,
    /// Strictly increasing, daily, no gaps.
    pub dates: Vec<NaiveDate>,
    /// days x 5, columns in `FORCING_NAMES` order.
    pub forcings: Array2<f64>,
    pub attribute_names: Vec<String>,
    pub attributes: Array1<f64>,
    /// mm/day; NaN marks missing observations.
    pub discharge: Vec<f64>,
}

impl BasinDataset {
    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    /// Row index of `date`, if inside the record. Dates are contiguous, so
    /// this is a constant-time offset from the first day.
    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let first = *self.dates.first()?;
        if date < first || date > *self.dates.last()? {
            return None;
        }
        Some((date - first).num_days() as usize)
    }

    /// Row range intersecting `interval` (empty when disjoint).
    pub fn rows_in(&self, interval: &DateInterval) -> std::ops::Range<usize> {
        if self.dates.is_empty() {
            return 0..0;
        }
        let first = self.dates[0];
        let last = *self.dates.last().unwrap();
        if interval.end < first || interval.start > last {
            return 0..0;
        }
        let lo = if interval.start <= first {
            0
        } else {
            (interval.start - first).num_days() as usize
        };
        let hi = if interval.end >= last {
            self.dates.len()
        } else {
            (interval.end - first).num_days() as usize + 1
        };
        lo..hi
    }

    fn check_internal(&self) -> Result<()> {
        if self.forcings.nrows() != self.dates.len() || self.discharge.len() != self.dates.len() {
            return Err(Error::Data(format!(
                "basin {}: row counts disagree (dates {}, forcings {}, discharge {})",
                self.basin_id,
                self.dates.len(),
                self.forcings.nrows(),
                self.discharge.len()
            )));
        }
        if self.forcings.ncols() != FORCING_NAMES.len() {
            return Err(Error::Data(format!(
                "basin {}: expected {} forcing columns, got {}",
                self.basin_id,
                FORCING_NAMES.len(),
                self.forcings.ncols()
            )));
        }
        for w in self.dates.windows(2) {
            if w[1] != w[0] + Days::new(1) {
                return Err(Error::Data(format!(
                    "basin {}: non-daily cadence between {} and {}",
                    self.basin_id, w[0], w[1]
                )));
            }
        }
        if self.attributes.len() != self.attribute_names.len() {
            return Err(Error::Data(format!(
                "basin {}: {} attribute values for {} names",
                self.basin_id,
                self.attributes.len(),
                self.attribute_names.len()
            )));
        }
        Ok(())
    }
}

/// Pooled training-period moments for the three feature classes. Carries
/// its provenance so consumers can verify validation data was never used.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizationStats {
    pub dynamic_mean: Array1<f64>,
    pub dynamic_std: Array1<f64>,
    pub static_mean: Array1<f64>,
    pub static_std: Array1<f64>,
    pub discharge_mean: f64,
    pub discharge_std: f64,
    /// Interval the moments were computed on.
    pub training: DateInterval,
}

impl StandardizationStats {
    pub fn standardize_discharge(&self, v: f64) -> f64 {
        (v - self.discharge_mean) / self.discharge_std
    }

    pub fn destandardize_discharge(&self, v: f64) -> f64 {
        v * self.discharge_std + self.discharge_mean
    }
}

fn population_moments(values: impl Iterator<Item = f64> + Clone) -> Option<(f64, f64)> {
    let mut n = 0usize;
    let mut sum = 0.0;
    for v in values.clone() {
        n += 1;
        sum += v;
    }
    if n == 0 {
        return None;
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    Some((mean, var.sqrt()))
}

/// Population standard deviation of a basin's non-missing discharge over
/// `interval`; the s(b) entering the basin-averaged loss.
pub fn basin_discharge_std(ds: &BasinDataset, interval: &DateInterval) -> Result<f64> {
    let rows = ds.rows_in(interval);
    let values: Vec<f64> = ds.discharge[rows]
        .iter()
        .copied()
        .filter(|v| !is_missing(*v))
        .collect();
    let (_, std) = population_moments(values.iter().copied()).ok_or_else(|| {
        Error::Data(format!(
            "basin {}: no discharge observations in {}..{}",
            ds.basin_id, interval.start, interval.end
        ))
    })?;
    Ok(std)
}

/// Standardize all feature classes with pooled moments computed on the
/// training interval only: dynamic features over all basins' training
/// rows, static attributes over the basin population, discharge over all
/// non-missing training observations. Every row (training and validation
/// alike) is transformed with these training moments.
pub fn standardize(
    datasets: &[BasinDataset],
    split: &PeriodSplit,
) -> Result<(Vec<BasinDataset>, StandardizationStats)> {
    if datasets.is_empty() {
        return Err(Error::Config("no basins to standardize".into()));
    }
    let n_attrs = datasets[0].attributes.len();
    for ds in datasets {
        ds.check_internal()?;
        if ds.attributes.len() != n_attrs {
            return Err(Error::Data(format!(
                "basin {}: attribute count {} differs from {}",
                ds.basin_id,
                ds.attributes.len(),
                n_attrs
            )));
        }
        if ds.rows_in(&split.training).is_empty() {
            return Err(Error::Data(format!(
                "basin {}: no rows in the training interval",
                ds.basin_id
            )));
        }
    }

    let n_dyn = FORCING_NAMES.len();
    let mut dynamic_mean = Array1::zeros(n_dyn);
    let mut dynamic_std = Array1::zeros(n_dyn);
    for col in 0..n_dyn {
        let values: Vec<f64> = datasets
            .iter()
            .flat_map(|ds| {
                let rows = ds.rows_in(&split.training);
                ds.forcings.slice(s![rows, col]).to_vec()
            })
            .collect();
        let (mean, std) = population_moments(values.iter().copied()).expect("nonempty");
        if std <= 0.0 {
            return Err(Error::Data(format!(
                "dynamic feature '{}' is constant over the training period",
                FORCING_NAMES[col]
            )));
        }
        dynamic_mean[col] = mean;
        dynamic_std[col] = std;
    }

    let mut static_mean = Array1::zeros(n_attrs);
    let mut static_std = Array1::zeros(n_attrs);
    for a in 0..n_attrs {
        let values: Vec<f64> = datasets.iter().map(|ds| ds.attributes[a]).collect();
        let (mean, std) = population_moments(values.iter().copied()).expect("nonempty");
        if std <= 0.0 {
            return Err(Error::Data(format!(
                "static attribute '{}' is constant across basins",
                datasets[0].attribute_names[a]
            )));
        }
        static_mean[a] = mean;
        static_std[a] = std;
    }

    let q_values: Vec<f64> = datasets
        .iter()
        .flat_map(|ds| {
            let rows = ds.rows_in(&split.training);
            ds.discharge[rows]
                .iter()
                .copied()
                .filter(|v| !is_missing(*v))
                .collect::<Vec<_>>()
        })
        .collect();
    let (discharge_mean, discharge_std) = population_moments(q_values.iter().copied())
        .ok_or_else(|| Error::Data("no discharge observations in the training period".into()))?;
    if discharge_std <= 0.0 {
        return Err(Error::Data(
            "discharge is constant over the training period".into(),
        ));
    }

    let stats = StandardizationStats {
        dynamic_mean,
        dynamic_std,
        static_mean,
        static_std,
        discharge_mean,
        discharge_std,
        training: split.training,
    };

    let transformed = datasets
        .iter()
        .map(|ds| {
            let mut out = ds.clone();
            for col in 0..n_dyn {
                out.forcings
                    .column_mut(col)
                    .mapv_inplace(|v| (v - stats.dynamic_mean[col]) / stats.dynamic_std[col]);
            }
            for a in 0..n_attrs {
                out.attributes[a] = (ds.attributes[a] - stats.static_mean[a]) / stats.static_std[a];
            }
            for v in out.discharge.iter_mut() {
                if !is_missing(*v) {
                    *v = stats.standardize_discharge(*v);
                }
            }
            out
        })
        .collect();

    Ok((transformed, stats))
}

/// Transform one basin with previously computed moments (used at
/// inference, where the checkpoint carries the training-period stats).
pub fn apply_standardization(
    ds: &BasinDataset,
    stats: &StandardizationStats,
) -> Result<BasinDataset> {
    ds.check_internal()?;
    if ds.attributes.len() != stats.static_mean.len() {
        return Err(Error::Data(format!(
            "basin {}: {} attributes but stats describe {}",
            ds.basin_id,
            ds.attributes.len(),
            stats.static_mean.len()
        )));
    }
    let mut out = ds.clone();
    for col in 0..FORCING_NAMES.len() {
        out.forcings
            .column_mut(col)
            .mapv_inplace(|v| (v - stats.dynamic_mean[col]) / stats.dynamic_std[col]);
    }
    for a in 0..ds.attributes.len() {
        out.attributes[a] = (ds.attributes[a] - stats.static_mean[a]) / stats.static_std[a];
    }
    for v in out.discharge.iter_mut() {
        if !is_missing(*v) {
            *v = stats.standardize_discharge(*v);
        }
    }
    Ok(out)
}

/// One sequence-to-value sample: a window of `T` forcing days ending on
/// `date`, whose target is that day's discharge.
#[derive(Debug, Clone)]
pub struct Window {
    pub date: NaiveDate,
    pub input: SequenceInput,
    pub target: f64,
}

/// End-row indices of every valid window: the end day lies in `interval`,
/// its discharge is observed, and the preceding `t_len - 1` days exist.
pub fn window_end_indices(ds: &BasinDataset, t_len: usize, interval: &DateInterval) -> Vec<usize> {
    assert!(t_len >= 1, "sequence length must be >= 1");
    let rows = ds.rows_in(interval);
    rows.filter(|&d| d + 1 >= t_len && !is_missing(ds.discharge[d]))
        .collect()
}

/// Materialize the window ending at row `end`; `end` must come from
/// `window_end_indices`.
pub fn materialize_window(ds: &BasinDataset, end: usize, t_len: usize) -> Window {
    let lo = end + 1 - t_len;
    Window {
        date: ds.dates[end],
        input: SequenceInput {
            dynamic: ds.forcings.slice(s![lo..=end, ..]).to_owned(),
            static_attrs: Some(ds.attributes.clone()),
        },
        target: ds.discharge[end],
    }
}

/// Iterator over all valid windows of a basin within `interval`.
pub fn windows<'a>(
    ds: &'a BasinDataset,
    t_len: usize,
    interval: &DateInterval,
) -> impl Iterator<Item = Window> + 'a {
    window_end_indices(ds, t_len, interval)
        .into_iter()
        .map(move |end| materialize_window(ds, end, t_len))
}

#[cfg(test)]
pub(crate) fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}
