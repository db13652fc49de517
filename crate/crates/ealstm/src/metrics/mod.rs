//! Per-basin evaluation metrics on simulated vs. observed discharge: NSE,
//! its alpha/beta decomposition, and the three flow-duration-curve biases
//! (top-2% peak flows, midsegment slope, 30% low flows), plus the
//! hydrologic signature suite in [`signatures`].

mod signatures;

pub use signatures::{signatures, SignatureSet, SIGNATURE_NAMES};

use crate::error::{Error, Result};

/// Flow epsilon substituted for non-positive values before logarithms in
/// the FDC metrics (mm/day).
pub const LOG_FLOW_EPSILON: f64 = 1e-6;

/// Exceedance probabilities bounding the FDC midsegment.
pub const FMS_M1: f64 = 0.2;
pub const FMS_M2: f64 = 0.7;

/// Paired simulated/observed series; days with missing observations are
/// dropped pairwise at construction.
#[derive(Debug, Clone)]
pub struct FlowSeries {
    sim: Vec<f64>,
    obs: Vec<f64>,
}

impl FlowSeries {
    pub fn new(sim: Vec<f64>, obs: Vec<f64>) -> Result<Self> {
        if sim.len() != obs.len() {
            return Err(Error::Metric(format!(
                "simulated ({}) and observed ({}) lengths differ",
                sim.len(),
                obs.len()
            )));
        }
        let (sim, obs): (Vec<f64>, Vec<f64>) = sim
            .into_iter()
            .zip(obs)
            .filter(|(_, o)| !o.is_nan())
            .unzip();
        if sim.len() < 2 {
            return Err(Error::Metric(format!(
                "need at least 2 paired observations, got {}",
                sim.len()
            )));
        }
        if let Some(idx) = sim.iter().position(|v| !v.is_finite()) {
            return Err(Error::Metric(format!(
                "non-finite simulated value at paired index {idx}"
            )));
        }
        Ok(FlowSeries { sim, obs })
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn simulated(&self) -> &[f64] {
        &self.sim
    }

    pub fn observed(&self) -> &[f64] {
        &self.obs
    }
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation, matching the s(b) convention of the
/// training loss.
pub(crate) fn pop_std(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Nash-Sutcliffe efficiency: 1 minus squared error normalized by the
/// observed variance. 1 for an exact match, 0 for the observed-mean
/// predictor.
pub fn nse(series: &FlowSeries) -> Result<f64> {
    let obs_mean = mean(series.observed());
    let den: f64 = series
        .observed()
        .iter()
        .map(|o| (o - obs_mean) * (o - obs_mean))
        .sum();
    if den <= 0.0 {
        return Err(Error::Metric(
            "nse undefined: observed variance is zero".into(),
        ));
    }
    let num: f64 = series
        .sim
        .iter()
        .zip(&series.obs)
        .map(|(s, o)| (s - o) * (s - o))
        .sum();
    Ok(1.0 - num / den)
}

/// Variability ratio of the NSE decomposition: sigma_sim / sigma_obs.
pub fn alpha_nse(series: &FlowSeries) -> Result<f64> {
    let so = pop_std(series.observed());
    if so <= 0.0 {
        return Err(Error::Metric(
            "alpha_nse undefined: observed variance is zero".into(),
        ));
    }
    Ok(pop_std(series.simulated()) / so)
}

/// Bias term of the NSE decomposition: (mu_sim - mu_obs) / sigma_obs.
pub fn beta_nse(series: &FlowSeries) -> Result<f64> {
    let so = pop_std(series.observed());
    if so <= 0.0 {
        return Err(Error::Metric(
            "beta_nse undefined: observed variance is zero".into(),
        ));
    }
    Ok((mean(series.simulated()) - mean(series.observed())) / so)
}

fn sorted_descending(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.partial_cmp(a).expect("finite flows"));
    v
}

/// Flow at exceedance probability `p` on a descending-sorted flow duration
/// curve, linearly interpolated between ranks.
pub(crate) fn fdc_value(sorted_desc: &[f64], p: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p));
    let n = sorted_desc.len();
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted_desc[lo]
    } else {
        let frac = pos - lo as f64;
        sorted_desc[lo] * (1.0 - frac) + sorted_desc[hi] * frac
    }
}

/// Top-2% peak flow bias in percent. Both series are sorted descending
/// independently and paired by exceedance rank; the peak set holds the
/// `ceil(0.02 n)` largest observed flows.
pub fn fhv(series: &FlowSeries) -> Result<f64> {
    let n = series.len();
    let h = ((0.02 * n as f64).ceil() as usize).max(1);
    let sim = sorted_descending(series.simulated());
    let obs = sorted_descending(series.observed());
    let obs_sum: f64 = obs[..h].iter().sum();
    if obs_sum <= 0.0 {
        return Err(Error::Metric(
            "fhv undefined: observed peak flows sum to zero".into(),
        ));
    }
    let diff: f64 = sim[..h].iter().zip(&obs[..h]).map(|(s, o)| s - o).sum();
    Ok(diff / obs_sum * 100.0)
}

fn log_flow(v: f64) -> f64 {
    if v <= 0.0 {
        LOG_FLOW_EPSILON.ln()
    } else {
        v.ln()
    }
}

/// Bias of the FDC midsegment slope in percent, between the 20% and 70%
/// exceedance points.
pub fn fms(series: &FlowSeries) -> Result<f64> {
    let sim = sorted_descending(series.simulated());
    let obs = sorted_descending(series.observed());
    let qs_m1 = fdc_value(&sim, FMS_M1).max(LOG_FLOW_EPSILON);
    let qs_m2 = fdc_value(&sim, FMS_M2).max(LOG_FLOW_EPSILON);
    let qo_m1 = fdc_value(&obs, FMS_M1).max(LOG_FLOW_EPSILON);
    let qo_m2 = fdc_value(&obs, FMS_M2).max(LOG_FLOW_EPSILON);
    for (name, v) in [
        ("QS_m1", qs_m1),
        ("QS_m2", qs_m2),
        ("QO_m1", qo_m1),
        ("QO_m2", qo_m2),
    ] {
        if v <= 0.0 {
            return Err(Error::Metric(format!(
                "fms undefined: {name} non-positive after epsilon substitution"
            )));
        }
    }
    let obs_slope = qo_m1.ln() - qo_m2.ln();
    if obs_slope == 0.0 {
        return Err(Error::Metric(
            "fms undefined: observed midsegment slope is zero".into(),
        ));
    }
    let sim_slope = qs_m1.ln() - qs_m2.ln();
    Ok((sim_slope - obs_slope) / obs_slope * 100.0)
}

/// 30% low-flow bias in percent: sums of log distances to the minimum flow
/// over the lowest 30% of the FDC, `Q_L` being the minimum of the
/// respective series.
pub fn flv(series: &FlowSeries) -> Result<f64> {
    let n = series.len();
    let l = ((0.3 * n as f64).ceil() as usize).max(1);
    let sim = sorted_descending(series.simulated());
    let obs = sorted_descending(series.observed());
    let sim_low = &sim[n - l..];
    let obs_low = &obs[n - l..];
    let qs_min = log_flow(*sim.last().unwrap());
    let qo_min = log_flow(*obs.last().unwrap());
    let sim_sum: f64 = sim_low.iter().map(|v| log_flow(*v) - qs_min).sum();
    let obs_sum: f64 = obs_low.iter().map(|v| log_flow(*v) - qo_min).sum();
    if obs_sum == 0.0 {
        return Err(Error::Metric(
            "flv undefined: observed low-flow segment is degenerate (all equal)".into(),
        ));
    }
    Ok((sim_sum - obs_sum) / obs_sum * 100.0)
}

/// Per-basin row of the evaluation report.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub basin_id: String,
    pub nse: f64,
    pub alpha_nse: f64,
    pub beta_nse: f64,
    pub fhv_pct: f64,
    pub fms_pct: f64,
    pub flv_pct: f64,
    pub signatures: Option<SignatureSet>,
}

impl MetricReport {
    pub fn from_series(basin_id: &str, series: &FlowSeries) -> Result<Self> {
        Ok(MetricReport {
            basin_id: basin_id.to_string(),
            nse: nse(series)?,
            alpha_nse: alpha_nse(series)?,
            beta_nse: beta_nse(series)?,
            fhv_pct: fhv(series)?,
            fms_pct: fms(series)?,
            flv_pct: flv(series)?,
            signatures: None,
        })
    }
}

/// The aggregate statistics reported for a model run: NSE mean and median,
/// the count of catastrophic failures (NSE <= 0), and medians of the
/// remaining metrics.
#[derive(Debug, Clone)]
pub struct AggregateReport {
    pub n_basins: usize,
    pub nse_mean: f64,
    pub nse_median: f64,
    pub n_nse_nonpositive: usize,
    pub alpha_nse_median: f64,
    pub beta_nse_median: f64,
    pub fhv_median: f64,
    pub fms_median: f64,
    pub flv_median: f64,
}

fn median_of(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite metric"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl AggregateReport {
    pub fn from_rows(rows: &[MetricReport]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Metric("aggregate over zero basins".into()));
        }
        let nses: Vec<f64> = rows.iter().map(|r| r.nse).collect();
        Ok(AggregateReport {
            n_basins: rows.len(),
            nse_mean: mean(&nses),
            nse_median: median_of(&nses),
            n_nse_nonpositive: nses.iter().filter(|v| **v <= 0.0).count(),
            alpha_nse_median: median_of(&rows.iter().map(|r| r.alpha_nse).collect::<Vec<_>>()),
            beta_nse_median: median_of(&rows.iter().map(|r| r.beta_nse).collect::<Vec<_>>()),
            fhv_median: median_of(&rows.iter().map(|r| r.fhv_pct).collect::<Vec<_>>()),
            fms_median: median_of(&rows.iter().map(|r| r.fms_pct).collect::<Vec<_>>()),
            flv_median: median_of(&rows.iter().map(|r| r.flv_pct).collect::<Vec<_>>()),
        })
    }
}
