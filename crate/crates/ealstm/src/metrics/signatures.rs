//! The thirteen hydrologic signatures summarizing discharge behavior,
//! computed per basin from daily discharge (and precipitation where the
//! definition needs it). Conventions follow the large-sample catchment
//! attribute literature; exact choices are documented per signature.

use chrono::{Datelike, NaiveDate};

use crate::error::{Error, Result};

pub const SIGNATURE_NAMES: [&str; 13] = [
    "q_mean",
    "runoff_ratio",
    "slope_fdc",
    "baseflow_index",
    "stream_elas",
    "q5",
    "q95",
    "high_q_freq",
    "high_q_dur",
    "low_q_freq",
    "low_q_dur",
    "zero_q_freq",
    "mean_hfd",
];

/// The thirteen signature values for one basin.
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureSet {
    /// Mean daily discharge, mm/day.
    pub q_mean: f64,
    /// Mean discharge over mean precipitation.
    pub runoff_ratio: f64,
    /// Slope of the log flow duration curve between 33% and 66% exceedance.
    pub slope_fdc: f64,
    /// Baseflow fraction from a single-parameter recursive digital filter
    /// (alpha = 0.925, three alternating passes).
    pub baseflow_index: f64,
    /// Streamflow-precipitation elasticity: median over hydrological years
    /// of the ratio of relative discharge and precipitation anomalies.
    pub stream_elas: f64,
    /// 5th percentile of daily flow (low-flow magnitude).
    pub q5: f64,
    /// 95th percentile of daily flow (high-flow magnitude).
    pub q95: f64,
    /// Days per year with flow above 9 times the median.
    pub high_q_freq: f64,
    /// Mean length (days) of consecutive high-flow runs; 0 without events.
    pub high_q_dur: f64,
    /// Days per year with flow below 0.2 times the mean.
    pub low_q_freq: f64,
    /// Mean length (days) of consecutive low-flow runs; 0 without events.
    pub low_q_dur: f64,
    /// Fraction of days with zero flow.
    pub zero_q_freq: f64,
    /// Mean day of hydrological year (starting 1 October) by which half of
    /// the annual flow has passed.
    pub mean_hfd: f64,
}

impl SignatureSet {
    pub fn values(&self) -> [f64; 13] {
        [
            self.q_mean,
            self.runoff_ratio,
            self.slope_fdc,
            self.baseflow_index,
            self.stream_elas,
            self.q5,
            self.q95,
            self.high_q_freq,
            self.high_q_dur,
            self.low_q_freq,
            self.low_q_dur,
            self.zero_q_freq,
            self.mean_hfd,
        ]
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        SIGNATURE_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|idx| self.values()[idx])
    }
}

fn ascending_quantile(sorted_asc: &[f64], p: f64) -> f64 {
    let n = sorted_asc.len();
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted_asc[lo]
    } else {
        let frac = pos - lo as f64;
        sorted_asc[lo] * (1.0 - frac) + sorted_asc[hi] * frac
    }
}

/// Mean length of maximal runs of `true` values; 0 when none occur.
fn mean_run_length(flags: &[bool]) -> f64 {
    let mut runs = 0usize;
    let mut total = 0usize;
    let mut current = 0usize;
    for &f in flags {
        if f {
            current += 1;
        } else if current > 0 {
            runs += 1;
            total += current;
            current = 0;
        }
    }
    if current > 0 {
        runs += 1;
        total += current;
    }
    if runs == 0 {
        0.0
    } else {
        total as f64 / runs as f64
    }
}

/// One forward or backward pass of the Lyne-Hollick quickflow filter; the
/// returned series is the baseflow component, clamped to [0, q].
fn baseflow_pass(q: &[f64], alpha: f64, reverse: bool) -> Vec<f64> {
    let n = q.len();
    let idx: Vec<usize> = if reverse {
        (0..n).rev().collect()
    } else {
        (0..n).collect()
    };
    let mut base = vec![0.0; n];
    let mut quick_prev = 0.0;
    let mut q_prev = q[idx[0]];
    for (step, &t) in idx.iter().enumerate() {
        let quick = if step == 0 {
            0.0
        } else {
            alpha * quick_prev + 0.5 * (1.0 + alpha) * (q[t] - q_prev)
        };
        let quick = quick.max(0.0).min(q[t]);
        base[t] = q[t] - quick;
        quick_prev = quick;
        q_prev = q[t];
    }
    base
}

fn baseflow_index(q: &[f64]) -> Result<f64> {
    let total: f64 = q.iter().sum();
    if total <= 0.0 {
        return Err(Error::Metric(
            "baseflow_index undefined: total flow is zero".into(),
        ));
    }
    let alpha = 0.925;
    let pass1 = baseflow_pass(q, alpha, false);
    let pass2 = baseflow_pass(&pass1, alpha, true);
    let pass3 = baseflow_pass(&pass2, alpha, false);
    Ok(pass3.iter().sum::<f64>() / total)
}

/// Hydrological year of a date under the 1 October convention: the HY
/// labeled Y runs 1 Oct (Y-1) through 30 Sep Y.
fn hydro_year(d: NaiveDate) -> i32 {
    if d.month() >= 10 {
        d.year() + 1
    } else {
        d.year()
    }
}

fn hydro_year_len(hy: i32) -> usize {
    let start = NaiveDate::from_ymd_opt(hy - 1, 10, 1).unwrap();
    let end = NaiveDate::from_ymd_opt(hy, 9, 30).unwrap();
    (end - start).num_days() as usize + 1
}

struct HydroYear {
    /// Row range of the full hydrological year.
    rows: std::ops::Range<usize>,
}

fn full_hydro_years(dates: &[NaiveDate]) -> Vec<HydroYear> {
    let mut out = Vec::new();
    if dates.is_empty() {
        return out;
    }
    let mut start = 0usize;
    let mut hy = hydro_year(dates[0]);
    for (i, d) in dates.iter().enumerate() {
        let y = hydro_year(*d);
        if y != hy {
            if i - start == hydro_year_len(hy) {
                out.push(HydroYear { rows: start..i });
            }
            start = i;
            hy = y;
        }
    }
    if dates.len() - start == hydro_year_len(hy) {
        out.push(HydroYear {
            rows: start..dates.len(),
        });
    }
    out
}

/// Compute all thirteen signatures. Missing discharge days are excluded
/// from means, quantiles and frequencies, break event runs, and disqualify
/// a hydrological year from the annual signatures. Any signature whose
/// data requirement fails produces a named error.
pub fn signatures(
    dates: &[NaiveDate],
    discharge: &[f64],
    precipitation: &[f64],
) -> Result<SignatureSet> {
    if dates.len() != discharge.len() || dates.len() != precipitation.len() {
        return Err(Error::Metric(
            "signature inputs have mismatched lengths".into(),
        ));
    }
    let paired: Vec<(f64, f64)> = discharge
        .iter()
        .zip(precipitation)
        .filter(|(q, _)| !q.is_nan())
        .map(|(q, p)| (*q, *p))
        .collect();
    if paired.len() < 2 {
        return Err(Error::Metric(
            "signatures undefined: fewer than 2 discharge observations".into(),
        ));
    }
    let q_obs: Vec<f64> = paired.iter().map(|(q, _)| *q).collect();
    let p_obs: Vec<f64> = paired.iter().map(|(_, p)| *p).collect();
    let n_obs = q_obs.len() as f64;
    let years_observed = n_obs / 365.25;

    let q_mean = q_obs.iter().sum::<f64>() / n_obs;
    let p_mean = p_obs.iter().sum::<f64>() / n_obs;
    if p_mean <= 0.0 {
        return Err(Error::Metric(
            "runoff_ratio undefined: mean precipitation is zero".into(),
        ));
    }
    let runoff_ratio = q_mean / p_mean;

    let mut asc = q_obs.clone();
    asc.sort_by(|a, b| a.partial_cmp(b).expect("finite discharge"));
    let q5 = ascending_quantile(&asc, 0.05);
    let q95 = ascending_quantile(&asc, 0.95);

    // Flow duration curve slope between 33% and 66% exceedance; zero flows
    // are substituted before the logarithms.
    let eps = super::LOG_FLOW_EPSILON;
    let q33 = ascending_quantile(&asc, 1.0 - 0.33).max(eps);
    let q66 = ascending_quantile(&asc, 1.0 - 0.66).max(eps);
    let slope_fdc = (q33.ln() - q66.ln()) / (0.66 - 0.33);

    let median_q = ascending_quantile(&asc, 0.5);
    let high_flags: Vec<bool> = discharge
        .iter()
        .map(|q| !q.is_nan() && *q > 9.0 * median_q)
        .collect();
    let low_flags: Vec<bool> = discharge
        .iter()
        .map(|q| !q.is_nan() && *q < 0.2 * q_mean)
        .collect();
    let high_q_freq = high_flags.iter().filter(|f| **f).count() as f64 / years_observed;
    let low_q_freq = low_flags.iter().filter(|f| **f).count() as f64 / years_observed;
    let high_q_dur = mean_run_length(&high_flags);
    let low_q_dur = mean_run_length(&low_flags);
    let zero_q_freq = q_obs.iter().filter(|q| **q <= 0.0).count() as f64 / n_obs;

    let bfi_input: Vec<f64> = q_obs.clone();
    let baseflow_index = baseflow_index(&bfi_input)?;

    // Annual signatures need complete hydrological years without missing
    // discharge.
    let years: Vec<HydroYear> = full_hydro_years(dates)
        .into_iter()
        .filter(|y| discharge[y.rows.clone()].iter().all(|q| !q.is_nan()))
        .collect();
    if years.is_empty() {
        return Err(Error::Metric(
            "mean_hfd undefined: no complete hydrological year in the record".into(),
        ));
    }

    let mut hfd_days = Vec::with_capacity(years.len());
    for y in &years {
        let q_year = &discharge[y.rows.clone()];
        let total: f64 = q_year.iter().sum();
        if total <= 0.0 {
            continue;
        }
        let mut cum = 0.0;
        for (day, q) in q_year.iter().enumerate() {
            cum += q;
            if cum >= 0.5 * total {
                hfd_days.push((day + 1) as f64);
                break;
            }
        }
    }
    if hfd_days.is_empty() {
        return Err(Error::Metric(
            "mean_hfd undefined: every hydrological year has zero flow".into(),
        ));
    }
    let mean_hfd = hfd_days.iter().sum::<f64>() / hfd_days.len() as f64;

    // Elasticity over annual anomalies; needs at least two complete years.
    let stream_elas = if years.len() < 2 {
        return Err(Error::Metric(
            "stream_elas undefined: fewer than 2 complete hydrological years".into(),
        ));
    } else {
        let annual: Vec<(f64, f64)> = years
            .iter()
            .map(|y| {
                let q: f64 = discharge[y.rows.clone()].iter().sum::<f64>() / y.rows.len() as f64;
                let p: f64 =
                    precipitation[y.rows.clone()].iter().sum::<f64>() / y.rows.len() as f64;
                (q, p)
            })
            .collect();
        let qbar = annual.iter().map(|(q, _)| q).sum::<f64>() / annual.len() as f64;
        let pbar = annual.iter().map(|(_, p)| p).sum::<f64>() / annual.len() as f64;
        if qbar <= 0.0 || pbar <= 0.0 {
            return Err(Error::Metric(
                "stream_elas undefined: zero mean annual flow or precipitation".into(),
            ));
        }
        let mut ratios: Vec<f64> = annual
            .iter()
            .filter(|(_, p)| ((p - pbar) / pbar).abs() > 1e-12)
            .map(|(q, p)| ((q - qbar) / qbar) / ((p - pbar) / pbar))
            .collect();
        if ratios.is_empty() {
            return Err(Error::Metric(
                "stream_elas undefined: precipitation anomalies are all zero".into(),
            ));
        }
        ratios.sort_by(|a, b| a.partial_cmp(b).expect("finite elasticity"));
        let n = ratios.len();
        if n % 2 == 1 {
            ratios[n / 2]
        } else {
            0.5 * (ratios[n / 2 - 1] + ratios[n / 2])
        }
    };

    Ok(SignatureSet {
        q_mean,
        runoff_ratio,
        slope_fdc,
        baseflow_index,
        stream_elas,
        q5,
        q95,
        high_q_freq,
        high_q_dur,
        low_q_freq,
        low_q_dur,
        zero_q_freq,
        mean_hfd,
    })
}
