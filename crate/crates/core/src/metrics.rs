//! Statistics over coupling-efficiency series.

use crate::io::{csv_document, fmt_f64};
use crate::{Error, Result};

pub fn mean(series: &[f64]) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::UndefinedMetric("empty series".into()));
    }
    Ok(series.iter().sum::<f64>() / series.len() as f64)
}

/// Sample (n − 1) standard deviation.
pub fn sample_std(series: &[f64]) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::UndefinedMetric("standard deviation needs two samples".into()));
    }
    // shifted by the first sample so a constant series gives exactly zero
    let d: Vec<f64> = series.iter().map(|x| x - series[0]).collect();
    let m = mean(&d)?;
    let ss: f64 = d.iter().map(|x| (x - m).powi(2)).sum();
    Ok((ss / (series.len() - 1) as f64).sqrt())
}

/// `10·log10(mean_closed / mean_open)`.
pub fn improvement_db(open: &[f64], closed: &[f64]) -> Result<f64> {
    let (mo, mc) = (mean(open)?, mean(closed)?);
    if !(mo > 0.0) || !(mc > 0.0) {
        return Err(Error::UndefinedMetric(format!(
            "dB improvement needs positive means, got {mo} and {mc}"
        )));
    }
    Ok(10.0 * (mc / mo).log10())
}

/// Relative standard deviation in percent, `100·stdev/mean`.
pub fn rsd(series: &[f64]) -> Result<f64> {
    let m = mean(series)?;
    if !(m > 0.0) {
        return Err(Error::UndefinedMetric(format!("RSD needs a positive mean, got {m}")));
    }
    Ok(100.0 * sample_std(series)? / m)
}

/// Counts in `bins` uniform bins over `[0, max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Two-column CSV: bin centre, count.
    pub fn to_csv(&self) -> String {
        csv_document(
            &["bin_center".into(), "count".into()],
            self.counts.iter().enumerate().map(|(i, c)| {
                vec![fmt_f64(0.5 * (self.edges[i] + self.edges[i + 1])), c.to_string()]
            }),
        )
    }
}

/// Histogram with edges uniform over `[0, max(series)]`; the maximum falls in
/// the last bin. Negative values clamp into the first bin.
pub fn histogram(series: &[f64], bins: usize) -> Result<Histogram> {
    if bins < 2 {
        return Err(Error::config("histogram needs at least two bins"));
    }
    let top = series.iter().cloned().fold(0.0, f64::max);
    let width = if top > 0.0 { top / bins as f64 } else { 1.0 / bins as f64 };
    let edges = (0..=bins).map(|i| i as f64 * width).collect();
    let mut counts = vec![0; bins];
    for &x in series {
        let k = ((x / width).floor().max(0.0) as usize).min(bins - 1);
        counts[k] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// Linear-interpolated quantile `q ∈ [0, 1]`.
pub fn quantile(series: &[f64], q: f64) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::UndefinedMetric("empty series".into()));
    }
    let mut v = series.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

pub fn interquartile_range(series: &[f64]) -> Result<f64> {
    Ok(quantile(series, 0.75)? - quantile(series, 0.25)?)
}

pub fn median(series: &[f64]) -> Result<f64> {
    quantile(series, 0.5)
}

/// Published values to print beside simulated ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceValues {
    pub improvement_db: f64,
    pub rsd_open: f64,
    pub rsd_closed: f64,
}

/// Open- vs closed-loop statistics of one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub scenario: String,
    pub d_over_r0: f64,
    pub mean_eta_open: f64,
    pub mean_eta_closed: f64,
    pub improvement_db: f64,
    pub rsd_open: f64,
    pub rsd_closed: f64,
    pub histogram_open: Histogram,
    pub histogram_closed: Histogram,
    pub duration: f64,
    pub seeds: Vec<u64>,
    pub reference: Option<ReferenceValues>,
}

pub const HISTOGRAM_BINS: usize = 20;

impl RunSummary {
    /// Every field recomputed from the raw series.
    pub fn from_series(
        scenario: &str,
        d_over_r0: f64,
        open: &[f64],
        closed: &[f64],
        duration: f64,
        seeds: Vec<u64>,
    ) -> Result<Self> {
        Ok(RunSummary {
            scenario: scenario.to_string(),
            d_over_r0,
            mean_eta_open: mean(open)?,
            mean_eta_closed: mean(closed)?,
            improvement_db: improvement_db(open, closed)?,
            rsd_open: rsd(open)?,
            rsd_closed: rsd(closed)?,
            histogram_open: histogram(open, HISTOGRAM_BINS)?,
            histogram_closed: histogram(closed, HISTOGRAM_BINS)?,
            duration,
            seeds,
            reference: None,
        })
    }

    fn fields(&self) -> Vec<(&'static str, String)> {
        let seeds = self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";");
        let mut f = vec![
            ("scenario", self.scenario.clone()),
            ("d_over_r0", fmt_f64(self.d_over_r0)),
            ("mean_eta_open", fmt_f64(self.mean_eta_open)),
            ("mean_eta_closed", fmt_f64(self.mean_eta_closed)),
            ("improvement_db", fmt_f64(self.improvement_db)),
            ("rsd_open", fmt_f64(self.rsd_open)),
            ("rsd_closed", fmt_f64(self.rsd_closed)),
            ("duration_s", fmt_f64(self.duration)),
            ("seeds", seeds),
        ];
        if let Some(r) = self.reference {
            f.push(("reference_improvement_db", fmt_f64(r.improvement_db)));
            f.push(("reference_rsd_open", fmt_f64(r.rsd_open)));
            f.push(("reference_rsd_closed", fmt_f64(r.rsd_closed)));
        }
        f
    }

    /// `key = value` lines.
    pub fn to_key_value(&self) -> String {
        self.fields()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Header line plus one data row.
    pub fn to_csv(&self) -> String {
        let f = self.fields();
        csv_document(
            &f.iter().map(|(k, _)| k.to_string()).collect::<Vec<_>>(),
            [f.into_iter().map(|(_, v)| v).collect()],
        )
    }
}
