//! Multi-slot proportional-fair campaigns.
//!
//! The network seed fixes the layout, shadowing and every slot's fading, so
//! campaigns of different schemes on the same seed see identical channels.
//! Slots run sequentially because the priority weights carry over.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_channel, sample_large_scale, LargeScaleGains};
use crate::clustering::{self, ClusterAssignment, ClusterPolicy};
use crate::error::{Error, Result};
use crate::qcqp::QcqpOptions;
use crate::topology::{build_layout, NetworkConfig, NetworkLayout, Tier};
use crate::units;
use crate::wmmse::{self, EngineOptions, EngineRun};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "policy", rename_all = "snake_case")]
pub enum Scheme {
    /// Algorithm with per-link sparsity over the strongest `L_c` BSs.
    Dynamic,
    /// Fixed clusters with backhaul constraints.
    Static(ClusterPolicy),
    /// Fixed clusters, no backhaul constraints (WMMSE only).
    Baseline(ClusterPolicy),
}

impl Scheme {
    pub fn label(&self) -> String {
        match self {
            Scheme::Dynamic => "dynamic".into(),
            Scheme::Static(p) => format!("static:{}", p.label()),
            Scheme::Baseline(p) => format!("baseline:{}", p.label()),
        }
    }

    pub fn backhaul_enabled(&self) -> bool {
        !matches!(self, Scheme::Baseline(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PfMode {
    /// `alpha_k = 1 / max(R_bar_k, eps)`.
    #[default]
    InverseMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub link_prune_dbm_hz: f64,
    pub pool_shrink_bps_hz: f64,
    pub sched_indicator_dbm_hz: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            link_prune_dbm_hz: -100.0,
            pool_shrink_bps_hz: 0.01,
            sched_indicator_dbm_hz: -100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
    pub scheme: Scheme,
    pub num_slots: usize,
    pub pf_mode: PfMode,
    /// `(C_macro, C_pico)` in Mbps; the network config's budgets otherwise.
    pub backhaul_override: Option<(f64, f64)>,
    pub thresholds: Thresholds,
    pub link_pruning: bool,
    pub pool_shrinking: bool,
    /// Averaging window `T_c` of the long-term rate, in slots.
    pub averaging_window: f64,
    /// Rate floor `eps` in bps/Hz.
    pub rate_floor: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub qcqp: QcqpOptions,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Dynamic,
            num_slots: 50,
            pf_mode: PfMode::InverseMean,
            backhaul_override: None,
            thresholds: Thresholds::default(),
            link_pruning: true,
            pool_shrinking: true,
            averaging_window: 20.0,
            rate_floor: 1e-3,
            max_iters: 100,
            rel_tol: 1e-3,
            qcqp: QcqpOptions::default(),
        }
    }
}

impl CampaignConfig {
    pub fn new(scheme: Scheme, num_slots: usize) -> Self {
        Self {
            scheme,
            num_slots,
            ..Self::default()
        }
    }

    pub fn validate(&self, network: &NetworkConfig) -> Result<()> {
        if self.num_slots == 0 {
            return Err(Error::InvalidArgument("num_slots must be >= 1".into()));
        }
        if !(self.averaging_window >= 1.0) {
            return Err(Error::InvalidArgument("averaging_window must be >= 1".into()));
        }
        if !(self.rate_floor > 0.0) {
            return Err(Error::InvalidArgument("rate_floor must be > 0".into()));
        }
        if let Some((m, p)) = self.backhaul_override {
            if !(m >= 0.0 && p >= 0.0) {
                return Err(Error::InvalidArgument(format!("backhaul budgets must be >= 0, got ({m}, {p})")));
            }
        }
        match &self.scheme {
            Scheme::Static(p) | Scheme::Baseline(p) => p.validate(network.num_bs()),
            Scheme::Dynamic => Ok(()),
        }
    }

    pub fn engine_options(&self) -> EngineOptions {
        let backhaul = self.scheme.backhaul_enabled();
        EngineOptions {
            max_iters: self.max_iters,
            rel_tol: self.rel_tol,
            prune_threshold: self
                .link_pruning
                .then(|| units::dbm_hz_to_mw_hz(self.thresholds.link_prune_dbm_hz)),
            shrink_threshold: self.pool_shrinking.then_some(self.thresholds.pool_shrink_bps_hz),
            indicator_threshold: units::dbm_hz_to_mw_hz(self.thresholds.sched_indicator_dbm_hz),
            backhaul_enabled: backhaul,
            freeze_reweighting: false,
            tau: None,
            repair: backhaul,
            qcqp: self.qcqp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotError {
    pub slot: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub scheme: String,
    pub seed: u64,
    /// Mean per-slot rate of each user over the campaign, Mbps.
    pub long_term_rate: Vec<f64>,
    /// `[slot][k]`, bps/Hz.
    pub per_slot_rates: Vec<Vec<f64>>,
    /// `[slot][l]`, bps/Hz, thresholded-indicator consumption.
    pub per_slot_backhaul: Vec<Vec<f64>>,
    /// `sum_k ln(R_bar_k)` after each slot, with `R_bar` in Mbps.
    pub utility_trace: Vec<f64>,
    /// Mean number of serving BSs per user in each slot.
    pub cluster_size_stats: Vec<f64>,
    pub engine_iterations: Vec<usize>,
    pub converged: Vec<bool>,
    /// `(user, bs)` links cut by the backhaul repair, per slot.
    pub repaired_links: Vec<Vec<(usize, usize)>>,
    /// Largest per-BS power ratio `sum_k ||w_k^l||^2 / P_l` per slot.
    pub max_power_ratio: Vec<f64>,
    pub slot_seconds: Vec<f64>,
    /// Wall-clock seconds of every engine iteration, per slot.
    pub iteration_seconds: Vec<Vec<f64>>,
    pub errors: Vec<SlotError>,
    pub bs_tiers: Vec<Tier>,
    /// C_l in bps/Hz (infinite for unconstrained schemes, `null` in JSON).
    #[serde(with = "unbounded")]
    pub backhaul_budgets: Vec<f64>,
    /// Budgets the scheme was run against, `(C_macro, C_pico)` in Mbps.
    #[serde(with = "unbounded")]
    pub backhaul_mbps: (f64, f64),
    pub bandwidth_hz: f64,
}

/// JSON has no infinity: unbounded budgets travel as `null`.
mod unbounded {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    fn wrap(x: f64) -> Option<f64> {
        x.is_finite().then_some(x)
    }

    fn unwrap(x: Option<f64>) -> f64 {
        x.unwrap_or(f64::INFINITY)
    }

    pub trait Unbounded: Sized {
        fn ser<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error>;
        fn de<'de, D: Deserializer<'de>>(d: D) -> Result<Self, D::Error>;
    }

    impl Unbounded for Vec<f64> {
        fn ser<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
            self.iter().map(|x| wrap(*x)).collect::<Vec<_>>().serialize(s)
        }
        fn de<'de, D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
            Ok(Vec::<Option<f64>>::deserialize(d)?.into_iter().map(unwrap).collect())
        }
    }

    impl Unbounded for (f64, f64) {
        fn ser<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
            (wrap(self.0), wrap(self.1)).serialize(s)
        }
        fn de<'de, D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
            let (a, b) = <(Option<f64>, Option<f64>)>::deserialize(d)?;
            Ok((unwrap(a), unwrap(b)))
        }
    }

    pub fn serialize<T: Unbounded, S: Serializer>(value: &T, s: S) -> Result<S::Ok, S::Error> {
        value.ser(s)
    }

    pub fn deserialize<'de, T: Unbounded, D: Deserializer<'de>>(d: D) -> Result<T, D::Error> {
        T::de(d)
    }
}

impl CampaignResult {
    pub fn num_slots(&self) -> usize {
        self.per_slot_rates.len()
    }

    pub fn num_users(&self) -> usize {
        self.long_term_rate.len()
    }

    /// Per-slot consumption samples of one tier, bps/Hz.
    pub fn tier_backhaul(&self, tier: Tier) -> Vec<f64> {
        self.per_slot_backhaul
            .iter()
            .flat_map(|row| {
                row.iter()
                    .zip(&self.bs_tiers)
                    .filter(move |(_, t)| **t == tier)
                    .map(|(b, _)| *b)
            })
            .collect()
    }

    /// Writes rates.csv, backhaul.csv, utility.csv and base_stations.csv.
    pub fn write_outputs(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;

        let mut w = csv::Writer::from_path(dir.join("rates.csv"))?;
        w.write_record(["user_id", "long_term_mbps"])?;
        for (k, r) in self.long_term_rate.iter().enumerate() {
            w.write_record([k.to_string(), r.to_string()])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("backhaul.csv"))?;
        w.write_record(["slot", "bs_id", "bps_hz"])?;
        for (t, row) in self.per_slot_backhaul.iter().enumerate() {
            for (l, b) in row.iter().enumerate() {
                w.write_record([t.to_string(), l.to_string(), b.to_string()])?;
            }
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("utility.csv"))?;
        w.write_record(["slot", "value"])?;
        for (t, u) in self.utility_trace.iter().enumerate() {
            w.write_record([t.to_string(), u.to_string()])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("base_stations.csv"))?;
        w.write_record(["bs_id", "tier", "backhaul_budget_bps_hz"])?;
        for (l, (tier, c)) in self.bs_tiers.iter().zip(&self.backhaul_budgets).enumerate() {
            w.write_record([l.to_string(), tier.to_string(), c.to_string()])?;
        }
        w.flush()?;

        let mut f = BufWriter::new(File::create(dir.join("result.json"))?);
        serde_json::to_writer(&mut f, self)?;
        f.flush()?;
        Ok(())
    }

    /// Reads a result directory written by [`CampaignResult::write_outputs`].
    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(dir.as_ref().join("result.json"))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// Bias-corrected moving average: the weight of the new sample is
/// `max(1/slot_index, 1/window)`, so early slots average arithmetically and
/// the floor `eps` only matters before the first slot.
pub fn update_avg_rate(avg: &mut [f64], slot_rates: &[f64], slot_index: usize, window: f64) {
    let weight = (1.0 / slot_index.max(1) as f64).max(1.0 / window);
    for (a, r) in avg.iter_mut().zip(slot_rates) {
        *a = (1.0 - weight) * *a + weight * r;
    }
}

/// Plain exponential moving average with weight `1/window`.
pub fn update_ema(avg: &mut [f64], slot_rates: &[f64], window: f64) {
    for (a, r) in avg.iter_mut().zip(slot_rates) {
        *a = (1.0 - 1.0 / window) * *a + r / window;
    }
}

/// True per-BS backhaul of a converged engine run, bps/Hz.
pub fn backhaul_consumption(
    run: &EngineRun,
    layout: &NetworkLayout,
    clusters: Option<&ClusterAssignment>,
    indicator_threshold: f64,
) -> Vec<f64> {
    wmmse::actual_backhaul(&run.state.w, &run.state.rates, &layout.blocks, clusters, indicator_threshold)
}

/// Layout and large-scale gains of a seeded network.
pub fn build_network(network: &NetworkConfig) -> Result<(NetworkLayout, LargeScaleGains)> {
    network.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(network.rng_seed);
    let layout = build_layout(network, &mut rng)?;
    let gains = sample_large_scale(&layout, network.shadowing_std_db, &mut rng);
    Ok((layout, gains))
}

/// Serving clusters for fixed-cluster schemes, candidate sets for dynamic.
pub fn scheme_clusters(
    scheme: &Scheme,
    network: &NetworkConfig,
    layout: &NetworkLayout,
    gains: &LargeScaleGains,
) -> ClusterAssignment {
    let strengths = gains.strengths_dbm(layout);
    match scheme {
        Scheme::Dynamic => clustering::strongest_s_clusters(&strengths, network.candidate_limit.min(layout.num_bs())),
        Scheme::Static(p) | Scheme::Baseline(p) => clustering::build_clusters(p, &strengths, layout),
    }
}

pub fn run_campaign(config: &CampaignConfig, network: &NetworkConfig) -> Result<CampaignResult> {
    config.validate(network)?;
    let (layout, gains) = build_network(network)?;
    let layout = match (config.scheme.backhaul_enabled(), config.backhaul_override) {
        (false, _) => layout.with_backhaul_mbps(f64::INFINITY, f64::INFINITY),
        (true, Some((m, p))) => layout.with_backhaul_mbps(m, p),
        (true, None) => layout.with_backhaul_mbps(network.macro_backhaul_mbps, network.pico_backhaul_mbps),
    };
    let backhaul_mbps = if config.scheme.backhaul_enabled() {
        config
            .backhaul_override
            .unwrap_or((network.macro_backhaul_mbps, network.pico_backhaul_mbps))
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    let clusters = scheme_clusters(&config.scheme, network, &layout, &gains);
    let options = config.engine_options();
    let num_users = layout.num_users();
    let bw = layout.bandwidth_hz;

    let mut avg = vec![config.rate_floor; num_users];
    let mut result = CampaignResult {
        scheme: config.scheme.label(),
        seed: network.rng_seed,
        long_term_rate: vec![0.0; num_users],
        per_slot_rates: Vec::with_capacity(config.num_slots),
        per_slot_backhaul: Vec::with_capacity(config.num_slots),
        utility_trace: Vec::with_capacity(config.num_slots),
        cluster_size_stats: Vec::with_capacity(config.num_slots),
        engine_iterations: Vec::with_capacity(config.num_slots),
        converged: Vec::with_capacity(config.num_slots),
        repaired_links: Vec::with_capacity(config.num_slots),
        max_power_ratio: Vec::with_capacity(config.num_slots),
        slot_seconds: Vec::with_capacity(config.num_slots),
        iteration_seconds: Vec::with_capacity(config.num_slots),
        errors: Vec::new(),
        bs_tiers: layout.base_stations.iter().map(|b| b.tier).collect(),
        backhaul_budgets: layout.backhaul_budgets(),
        backhaul_mbps,
        bandwidth_hz: bw,
    };

    for slot in 0..config.num_slots {
        let started = Instant::now();
        let channel = sample_channel(&layout, &gains, network.rng_seed, slot as u64);
        let alpha: Vec<f64> = avg.iter().map(|a| 1.0 / a.max(config.rate_floor)).collect();
        let run = match &config.scheme {
            Scheme::Dynamic => wmmse::run_dynamic(&channel, &layout, &alpha, &clusters.serving, &options),
            Scheme::Static(_) | Scheme::Baseline(_) => {
                wmmse::run_static(&channel, &layout, &clusters, &alpha, &options)
            }
        };
        let static_clusters = match config.scheme {
            Scheme::Dynamic => None,
            _ => Some(&clusters),
        };
        match run {
            Ok(run) => {
                let backhaul = backhaul_consumption(&run, &layout, static_clusters, options.indicator_threshold);
                let served: usize = (0..num_users)
                    .map(|k| match static_clusters {
                        None => (0..layout.num_bs())
                            .filter(|&l| run.state.block_power(k, l, &layout.blocks) >= options.indicator_threshold)
                            .count(),
                        Some(c) if run.state.w[k].norm_squared() > options.indicator_threshold => c.serving[k].len(),
                        Some(_) => 0,
                    })
                    .sum();
                let power_ratio = (0..layout.num_bs())
                    .map(|l| {
                        let p: f64 = (0..num_users).map(|k| run.state.block_power(k, l, &layout.blocks)).sum();
                        p / layout.base_stations[l].power_budget
                    })
                    .fold(0.0, f64::max);
                result.per_slot_rates.push(run.state.rates.clone());
                result.per_slot_backhaul.push(backhaul);
                result.cluster_size_stats.push(served as f64 / num_users.max(1) as f64);
                result.engine_iterations.push(run.trace.records.len());
                result
                    .iteration_seconds
                    .push(run.trace.records.iter().map(|r| r.iteration_seconds).collect());
                result.converged.push(run.trace.converged);
                result.repaired_links.push(run.trace.repaired_links);
                result.max_power_ratio.push(power_ratio);
            }
            Err(e) => {
                result.errors.push(SlotError {
                    slot,
                    message: e.to_string(),
                });
                result.per_slot_rates.push(vec![0.0; num_users]);
                result.per_slot_backhaul.push(vec![0.0; layout.num_bs()]);
                result.cluster_size_stats.push(0.0);
                result.engine_iterations.push(0);
                result.iteration_seconds.push(Vec::new());
                result.converged.push(false);
                result.repaired_links.push(Vec::new());
                result.max_power_ratio.push(0.0);
            }
        }
        let rates = result.per_slot_rates.last().expect("slot recorded");
        update_avg_rate(&mut avg, rates, slot + 1, config.averaging_window);
        result.utility_trace.push(
            avg.iter()
                .map(|a| units::bps_hz_to_mbps(a.max(config.rate_floor), bw).ln())
                .sum(),
        );
        result.slot_seconds.push(started.elapsed().as_secs_f64());
    }

    let n = config.num_slots as f64;
    for k in 0..num_users {
        let total: f64 = result.per_slot_rates.iter().map(|r| r[k]).sum();
        result.long_term_rate[k] = units::bps_hz_to_mbps(total / n, bw);
    }
    Ok(result)
}

/// Tier-averaged mean per-slot backhaul of an unconstrained fixed-cluster
/// run, `(C_macro, C_pico)` in Mbps.
pub fn calibrate_backhaul(policy: &ClusterPolicy, network: &NetworkConfig, num_slots: usize) -> Result<(f64, f64)> {
    let config = CampaignConfig::new(Scheme::Baseline(policy.clone()), num_slots);
    let result = run_campaign(&config, network)?;
    Ok(calibrated_budgets(&result, network.bandwidth_hz))
}

/// Tier means of a result's per-slot backhaul, in Mbps.
pub fn calibrated_budgets(result: &CampaignResult, bandwidth_hz: f64) -> (f64, f64) {
    let mean = |tier| {
        let samples = result.tier_backhaul(tier);
        if samples.is_empty() {
            0.0
        } else {
            units::bps_hz_to_mbps(samples.iter().sum::<f64>() / samples.len() as f64, bandwidth_hz)
        }
    };
    (mean(Tier::Macro), mean(Tier::Pico))
}
