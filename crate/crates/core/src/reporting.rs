//! Rate percentiles, backhaul histograms, utility traces and scheme
//! comparisons over finished campaigns.
//!
//! Percentiles use linear interpolation between order statistics: the value
//! at level `p` sits at fractional rank `(n - 1) * p / 100`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::CampaignResult;
use crate::topology::Tier;
use crate::units;

pub const REPORT_PERCENTILES: [f64; 3] = [10.0, 50.0, 90.0];

/// Linearly interpolated empirical percentile, `0 < p < 100`.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("percentile of no samples"));
    }
    if !(p > 0.0 && p < 100.0) {
        return Err(Error::InvalidArgument(format!("percentile level must be in (0, 100), got {p}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Ok(sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Percentile of the users' long-term rates, Mbps.
pub fn rate_percentile(result: &CampaignResult, p: f64) -> Result<f64> {
    percentile(&result.long_term_rate, p)
}

/// `(rate, fraction of samples <= rate)` steps of the empirical CDF.
pub fn cdf_points(values: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, (i + 1) as f64 / n))
        .collect()
}

/// `sum_k ln(max(r_k, floor))`.
pub fn sum_log(rates: &[f64], floor: f64) -> f64 {
    rates.iter().map(|r| r.max(floor).ln()).sum()
}

/// Per-slot `sum_k ln(R_bar_k)` recorded by the campaign.
pub fn log_utility(result: &CampaignResult) -> Vec<f64> {
    result.utility_trace.clone()
}

/// Equal-width histogram normalized to unit area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
    pub density: Vec<f64>,
}

impl Histogram {
    /// `range` defaults to the sample span; a degenerate span is widened to
    /// one unit around the value.
    pub fn new(samples: &[f64], bins: usize, range: Option<(f64, f64)>) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
        }
        let (mut lo, mut hi) = range.unwrap_or_else(|| {
            samples
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
        });
        if samples.is_empty() && range.is_none() {
            lo = 0.0;
            hi = 1.0;
        }
        if !(hi > lo) {
            lo -= 0.5;
            hi += 0.5;
        }
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        for &x in samples {
            if x < lo || x > hi {
                continue;
            }
            let i = (((x - lo) / width) as usize).min(bins - 1);
            counts[i] += 1;
        }
        let total: usize = counts.iter().sum();
        let density = counts
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / (total as f64 * width) })
            .collect();
        Ok(Histogram { lo, hi, counts, density })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.bins() as f64
    }

    pub fn edges(&self, i: usize) -> (f64, f64) {
        let w = self.bin_width();
        (self.lo + i as f64 * w, self.lo + (i + 1) as f64 * w)
    }

    pub fn area(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.bin_width()
    }

    /// Index of the most populated bin (lowest index on ties).
    pub fn modal_bin(&self) -> usize {
        let mut best = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = i;
            }
        }
        best
    }

    pub fn modal_center(&self) -> f64 {
        let (a, b) = self.edges(self.modal_bin());
        0.5 * (a + b)
    }
}

/// Fraction of samples in `[lo, hi]`.
pub fn mass_between(samples: &[f64], lo: f64, hi: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().filter(|&&x| x >= lo && x <= hi).count() as f64 / samples.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierHistograms {
    pub macro_bs: Histogram,
    pub pico_bs: Histogram,
}

/// Per-slot per-BS consumption samples of one tier, Mbps.
pub fn tier_backhaul_mbps(result: &CampaignResult, tier: Tier) -> Vec<f64> {
    result
        .tier_backhaul(tier)
        .into_iter()
        .map(|b| units::bps_hz_to_mbps(b, result.bandwidth_hz))
        .collect()
}

/// Tier-pooled consumption histograms in Mbps, each spanning `[0, max]` of
/// its samples.
pub fn backhaul_histogram(result: &CampaignResult, bins: usize) -> Result<TierHistograms> {
    let build = |tier| {
        let samples = tier_backhaul_mbps(result, tier);
        let top = samples.iter().copied().fold(0.0, f64::max);
        Histogram::new(&samples, bins, Some((0.0, if top > 0.0 { top } else { 1.0 })))
    };
    Ok(TierHistograms {
        macro_bs: build(Tier::Macro)?,
        pico_bs: build(Tier::Pico)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: String,
    pub seeds: Vec<u64>,
    pub num_users: usize,
    /// Long-term rate percentiles at [`REPORT_PERCENTILES`], Mbps.
    pub percentiles: Vec<f64>,
    /// Percent change of each percentile against the baseline; `None` when
    /// the baseline percentile is zero.
    pub gains_pct: Vec<Option<f64>>,
    pub mean_rate: f64,
    pub backhaul_mbps: (Option<f64>, Option<f64>),
    pub backhaul: TierHistograms,
    /// Seed-averaged utility trace.
    pub utility_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub baseline: String,
    pub schemes: Vec<SchemeSummary>,
}

fn percent_gain(value: f64, reference: f64) -> Option<f64> {
    (reference != 0.0).then(|| 100.0 * (value - reference) / reference)
}

fn file_label(scheme: &str) -> String {
    scheme
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect()
}

impl ComparisonReport {
    /// Groups results by scheme label, pooling users across seeds. The
    /// `baseline` label must be among them.
    pub fn build(results: &[CampaignResult], baseline: &str, bins: usize) -> Result<Self> {
        let mut labels: Vec<&str> = Vec::new();
        for r in results {
            if !labels.contains(&r.scheme.as_str()) {
                labels.push(&r.scheme);
            }
        }
        if !labels.contains(&baseline) {
            return Err(Error::Mismatch(format!("baseline `{baseline}` not among results")));
        }

        let mut schemes = Vec::with_capacity(labels.len());
        for label in &labels {
            let group: Vec<&CampaignResult> = results.iter().filter(|r| r.scheme == *label).collect();
            let rates: Vec<f64> = group.iter().flat_map(|r| r.long_term_rate.iter().copied()).collect();
            let percentiles = REPORT_PERCENTILES
                .iter()
                .map(|&p| percentile(&rates, p))
                .collect::<Result<Vec<_>>>()?;

            let mut pooled = group[0].clone();
            pooled.per_slot_backhaul = group.iter().flat_map(|r| r.per_slot_backhaul.iter().cloned()).collect();
            let backhaul = backhaul_histogram(&pooled, bins)?;

            let len = group.iter().map(|r| r.utility_trace.len()).min().unwrap_or(0);
            let utility_trace = (0..len)
                .map(|t| group.iter().map(|r| r.utility_trace[t]).sum::<f64>() / group.len() as f64)
                .collect();
            let finite = |x: f64| x.is_finite().then_some(x);

            schemes.push(SchemeSummary {
                scheme: label.to_string(),
                seeds: group.iter().map(|r| r.seed).collect(),
                num_users: rates.len(),
                mean_rate: rates.iter().sum::<f64>() / rates.len() as f64,
                percentiles,
                gains_pct: Vec::new(),
                backhaul_mbps: (finite(group[0].backhaul_mbps.0), finite(group[0].backhaul_mbps.1)),
                backhaul,
                utility_trace,
            });
        }

        let reference = schemes
            .iter()
            .find(|s| s.scheme == baseline)
            .map(|s| s.percentiles.clone())
            .expect("baseline present");
        for s in &mut schemes {
            s.gains_pct = s
                .percentiles
                .iter()
                .zip(&reference)
                .map(|(&v, &r)| percent_gain(v, r))
                .collect();
        }
        Ok(ComparisonReport {
            baseline: baseline.to_string(),
            schemes,
        })
    }

    pub fn scheme(&self, label: &str) -> Option<&SchemeSummary> {
        self.schemes.iter().find(|s| s.scheme == label)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["scheme".to_string(), "users".into(), "mean_mbps".into()];
        for p in REPORT_PERCENTILES {
            header.push(format!("p{p}_mbps"));
        }
        for p in REPORT_PERCENTILES {
            header.push(format!("p{p}_gain_pct"));
        }
        header.extend(["c_macro_mbps".into(), "c_pico_mbps".into()]);
        w.write_record(&header)?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for s in &self.schemes {
            let mut row = vec![s.scheme.clone(), s.num_users.to_string(), s.mean_rate.to_string()];
            row.extend(s.percentiles.iter().map(|p| p.to_string()));
            row.extend(s.gains_pct.iter().map(|g| opt(*g)));
            row.push(opt(s.backhaul_mbps.0));
            row.push(opt(s.backhaul_mbps.1));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut f, self)?;
        f.flush()?;
        Ok(())
    }

    /// Writes report.csv, report.json and one `cdf_<scheme>.csv` per scheme
    /// from the results the report was built from.
    pub fn write_all(&self, results: &[CampaignResult], dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.write_csv(dir.join("report.csv"))?;
        self.write_json(dir.join("report.json"))?;
        for s in &self.schemes {
            let rates: Vec<f64> = results
                .iter()
                .filter(|r| r.scheme == s.scheme)
                .flat_map(|r| r.long_term_rate.iter().copied())
                .collect();
            let mut w = csv::Writer::from_path(dir.join(format!("cdf_{}.csv", file_label(&s.scheme))))?;
            w.write_record(["rate_mbps", "cumulative_fraction"])?;
            for (x, f) in cdf_points(&rates) {
                w.write_record([x.to_string(), f.to_string()])?;
            }
            w.flush()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolated_percentiles() {
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 50.0).unwrap(), 2.5);
        assert_eq!(percentile(&[4.0, 1.0, 3.0, 2.0], 50.0).unwrap(), 2.5);
        for p in [1.0, 37.5, 99.0] {
            assert_eq!(percentile(&[7.0; 5], p).unwrap(), 7.0);
        }
        assert!(percentile(&[], 50.0).is_err());
        assert!(percentile(&[1.0], 0.0).is_err());
        assert!(percentile(&[1.0], 100.0).is_err());
    }

    #[test]
    fn constant_samples_fill_one_bin() {
        let h = Histogram::new(&[3.0; 10], 20, None).unwrap();
        let occupied: Vec<usize> = (0..20).filter(|&i| h.counts[i] > 0).collect();
        assert_eq!(occupied.len(), 1);
        let (a, b) = h.edges(occupied[0]);
        assert!(a <= 3.0 && 3.0 <= b);
        assert!((h.area() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn histogram_area_and_mode() {
        let samples: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 / 7.0).collect();
        let h = Histogram::new(&samples, 13, None).unwrap();
        assert!((h.area() - 1.0).abs() < 1e-9);
        assert_eq!(h.counts.iter().sum::<usize>(), 1000);
        let h = Histogram::new(&[0.1, 0.2, 0.24, 0.9], 4, Some((0.0, 1.0))).unwrap();
        assert_eq!(h.modal_bin(), 0);
        assert_eq!(h.counts, vec![3, 0, 0, 1]);
    }

    #[test]
    fn log_sum_rules() {
        assert_eq!(sum_log(&[1.0; 6], 1e-3), 0.0);
        let r = [0.5, 2.0, 3.5];
        let doubled: Vec<f64> = r.iter().map(|x| 2.0 * x).collect();
        assert!((sum_log(&doubled, 1e-3) - sum_log(&r, 1e-3) - 3.0 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(sum_log(&[0.0], 1e-3), 1e-3f64.ln());
    }

    #[test]
    fn cdf_steps() {
        let c = cdf_points(&[3.0, 1.0, 2.0, 2.0]);
        assert_eq!(c, vec![(1.0, 0.25), (2.0, 0.5), (2.0, 0.75), (3.0, 1.0)]);
    }
}
