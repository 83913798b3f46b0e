//! Reweighted-l1 WMMSE loops for dynamic and static BS clustering.
//!
//! One outer iteration: MMSE receivers and MSEs, MSE weights, the beamformer
//! QCQP, rates, then the reweighting update (`beta` from the new block powers,
//! `R_hat` from the new rates). Static clustering reuses the same routines on
//! network-wide beamformers that are zero outside each user's cluster.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVec, C64};
use crate::qcqp::{self, DualVariables, QcqpOptions, SolveStatus};
use crate::topology::{BlockMap, NetworkLayout};

/// Relative true-backhaul excess tolerated when declaring convergence.
pub const SETTLE_SLACK: f64 = 1e-2;

/// Reweighting regularizer `tau`, in watts of whole-band transmit power.
pub const TAU_WATTS: f64 = 1e-10;

/// `tau` on the engine's mW/Hz power scale.
pub fn tau_mw_per_hz(bandwidth_hz: f64) -> f64 {
    TAU_WATTS * 1e3 / bandwidth_hz
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// BS ids serving each user.
    pub serving: Vec<Vec<usize>>,
    /// Users served by each BS.
    pub served: Vec<Vec<usize>>,
}

impl ClusterAssignment {
    pub fn from_serving(mut serving: Vec<Vec<usize>>, num_bs: usize) -> Self {
        let mut served = vec![Vec::new(); num_bs];
        for (k, set) in serving.iter_mut().enumerate() {
            set.sort_unstable();
            set.dedup();
            for &l in set.iter() {
                served[l].push(k);
            }
        }
        Self { serving, served }
    }

    /// Every user served by every BS.
    pub fn full(num_users: usize, num_bs: usize) -> Self {
        Self::from_serving(vec![(0..num_bs).collect(); num_users], num_bs)
    }

    pub fn num_users(&self) -> usize {
        self.serving.len()
    }

    pub fn num_bs(&self) -> usize {
        self.served.len()
    }

    pub fn is_consistent(&self) -> bool {
        let fwd = self
            .serving
            .iter()
            .enumerate()
            .all(|(k, s)| s.iter().all(|&l| l < self.served.len() && self.served[l].contains(&k)));
        let back = self
            .served
            .iter()
            .enumerate()
            .all(|(l, s)| s.iter().all(|&k| k < self.serving.len() && self.serving[k].contains(&l)));
        fwd && back
    }

    pub fn mean_cluster_size(&self) -> f64 {
        if self.serving.is_empty() {
            return 0.0;
        }
        self.serving.iter().map(Vec::len).sum::<usize>() as f64 / self.serving.len() as f64
    }

    /// `user_id,bs_id` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["user_id", "bs_id"])?;
        for (k, set) in self.serving.iter().enumerate() {
            for l in set {
                wtr.write_record([k.to_string(), l.to_string()])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R, num_users: usize, num_bs: usize) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut serving = vec![Vec::new(); num_users];
        for row in rdr.deserialize() {
            let (k, l): (usize, usize) = row?;
            if k >= num_users || l >= num_bs {
                return Err(Error::InvalidArgument(format!("cluster link ({k}, {l}) out of range")));
            }
            serving[k].push(l);
        }
        Ok(Self::from_serving(serving, num_bs))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingState {
    pub w: Vec<CVec>,
    pub u: Vec<CVec>,
    pub rho: Vec<f64>,
    /// Indexed `[l][k]`.
    pub beta_dyn: Vec<Vec<f64>>,
    pub beta_stat: Vec<f64>,
    pub rate_hat: Vec<f64>,
    pub alpha: Vec<f64>,
    pub active: Vec<bool>,
    pub candidate_links: Vec<Vec<usize>>,
    pub tau: f64,
    /// Rates of the current `w`, bps/Hz.
    pub rates: Vec<f64>,
    pub duals: DualVariables,
}

impl BeamformingState {
    pub fn num_users(&self) -> usize {
        self.w.len()
    }

    pub fn weighted_sum_rate(&self) -> f64 {
        self.alpha.iter().zip(&self.rates).map(|(a, r)| a * r).sum()
    }

    pub fn block_power(&self, k: usize, l: usize, blocks: &BlockMap) -> f64 {
        blocks.range(l).map(|i| self.w[k][i].norm_sqr()).sum()
    }

    pub fn mean_candidate_size(&self) -> f64 {
        let n = self.candidate_links.len();
        if n == 0 {
            return 0.0;
        }
        self.candidate_links.iter().map(Vec::len).sum::<usize>() as f64 / n as f64
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }
}

fn is_zero(v: &CVec) -> bool {
    v.iter().all(|x| x.re == 0.0 && x.im == 0.0)
}

/// `H_k w_j` for every `j` (zero vectors for zero beamformers).
fn received(h: &CMat, w: &[CVec]) -> Vec<CVec> {
    w.iter()
        .map(|wj| if is_zero(wj) { CVec::zeros(h.nrows()) } else { h * wj })
        .collect()
}

fn covariance(y: &[CVec], skip: Option<usize>, noise: f64) -> CMat {
    let n = y.first().map_or(0, |v| v.len());
    let mut c = CMat::identity(n, n) * C64::new(noise, 0.0);
    for (j, yj) in y.iter().enumerate() {
        if Some(j) == skip || is_zero(yj) {
            continue;
        }
        c.gerc(C64::new(1.0, 0.0), yj, yj, C64::new(1.0, 0.0));
    }
    c
}

fn rate_from_received(y: &[CVec], k: usize, noise: f64) -> f64 {
    if is_zero(&y[k]) {
        return 0.0;
    }
    let j = covariance(y, Some(k), noise);
    let x = linalg::hermitian_solve(j, &y[k]);
    let sinr = y[k].dotc(&x).re.max(0.0);
    (1.0 + sinr).log2()
}

/// Achievable rate of user `k` in bps/Hz.
pub fn rate(k: usize, w: &[CVec], channel: &ChannelRealization) -> f64 {
    let y = received(&channel.h[k], w);
    rate_from_received(&y, k, channel.noise_power)
}

pub fn rates(w: &[CVec], channel: &ChannelRealization) -> Vec<f64> {
    (0..w.len()).map(|k| rate(k, w, channel)).collect()
}

/// `u_k = (sum_j H_k w_j w_j^H H_k^H + sigma^2 I)^{-1} H_k w_k`.
pub fn mmse_receiver(k: usize, w: &[CVec], channel: &ChannelRealization) -> CVec {
    let y = received(&channel.h[k], w);
    let c = covariance(&y, None, channel.noise_power);
    linalg::hermitian_solve(c, &y[k])
}

/// MSE of user `k` with receiver `u`.
pub fn mse(k: usize, u: &CVec, w: &[CVec], channel: &ChannelRealization) -> f64 {
    let y = received(&channel.h[k], w);
    let c = covariance(&y, None, channel.noise_power);
    linalg::quad_form(&c, u) - 2.0 * u.dotc(&y[k]).re + 1.0
}

pub fn mse_weight(e: f64) -> Result<f64> {
    if e > 0.0 && e.is_finite() {
        Ok(1.0 / e)
    } else {
        Err(Error::NonPositiveMse(e))
    }
}

/// `beta_k^l = 1 / (||w_k^l||^2 + tau)`.
pub fn update_beta_dynamic(state: &mut BeamformingState, blocks: &BlockMap) {
    for l in 0..blocks.num_blocks() {
        for k in 0..state.num_users() {
            state.beta_dyn[l][k] = 1.0 / (state.block_power(k, l, blocks) + state.tau);
        }
    }
}

/// `beta_k = 1 / (||w_k^{L_k}||^2 + tau)`; `w_k` is zero outside its cluster.
pub fn update_beta_static(state: &mut BeamformingState, clusters: &ClusterAssignment, blocks: &BlockMap) {
    for k in 0..state.num_users() {
        let p: f64 = clusters.serving[k]
            .iter()
            .map(|&l| state.block_power(k, l, blocks))
            .sum();
        state.beta_stat[k] = 1.0 / (p + state.tau);
    }
}

/// Removes BS `l` from user `k`'s candidates when `||w_k^l||^2 < threshold`
/// (mW/Hz) and zeroes that block. Users left without candidates become inactive.
pub fn prune_links(state: &mut BeamformingState, blocks: &BlockMap, threshold: f64) -> usize {
    let mut removed = 0;
    for k in 0..state.num_users() {
        let before = state.candidate_links[k].len();
        let powers: Vec<(usize, f64)> = state.candidate_links[k]
            .iter()
            .map(|&l| (l, state.block_power(k, l, blocks)))
            .collect();
        for (l, p) in powers {
            if p < threshold {
                state.candidate_links[k].retain(|&x| x != l);
                for i in blocks.range(l) {
                    state.w[k][i] = C64::new(0.0, 0.0);
                }
            }
        }
        removed += before - state.candidate_links[k].len();
        if state.candidate_links[k].is_empty() {
            deactivate(state, k);
        }
    }
    removed
}

/// Drops active users whose rate is below `threshold` (bps/Hz) for the rest
/// of the run.
pub fn shrink_user_pool(state: &mut BeamformingState, threshold: f64) -> usize {
    let mut dropped = 0;
    for k in 0..state.num_users() {
        if state.active[k] && state.rates[k] < threshold {
            deactivate(state, k);
            dropped += 1;
        }
    }
    dropped
}

fn deactivate(state: &mut BeamformingState, k: usize) {
    state.active[k] = false;
    state.w[k].fill(C64::new(0.0, 0.0));
    state.u[k].fill(C64::new(0.0, 0.0));
    state.candidate_links[k].clear();
    state.rates[k] = 0.0;
}

/// True per-BS backhaul with thresholded indicators: per block for dynamic
/// clustering, whole-cluster power for static clustering.
pub fn actual_backhaul(
    w: &[CVec],
    rates: &[f64],
    blocks: &BlockMap,
    clusters: Option<&ClusterAssignment>,
    threshold: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; blocks.num_blocks()];
    for (k, wk) in w.iter().enumerate() {
        match clusters {
            None => {
                for (l, b) in out.iter_mut().enumerate() {
                    let p: f64 = blocks.range(l).map(|i| wk[i].norm_sqr()).sum();
                    if p >= threshold {
                        *b += rates[k];
                    }
                }
            }
            Some(c) => {
                if wk.norm_squared() > threshold {
                    for &l in &c.serving[k] {
                        out[l] += rates[k];
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineOptions {
    pub max_iters: usize,
    /// Stop when the relative weighted-sum-rate change falls below this.
    pub rel_tol: f64,
    /// Link-pruning threshold in mW/Hz (dynamic clustering only).
    pub prune_threshold: Option<f64>,
    /// User-pool shrinking threshold in bps/Hz.
    pub shrink_threshold: Option<f64>,
    /// Scheduling indicator threshold for true backhaul, mW/Hz.
    pub indicator_threshold: f64,
    pub backhaul_enabled: bool,
    /// Keep `beta` and `R_hat` at their initial values.
    pub freeze_reweighting: bool,
    /// Overrides the bandwidth-derived `tau` (mW/Hz).
    pub tau: Option<f64>,
    /// Drop users after convergence until the true backhaul fits.
    pub repair: bool,
    pub qcqp: QcqpOptions,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            rel_tol: 1e-3,
            prune_threshold: Some(1e-10),
            shrink_threshold: Some(0.01),
            indicator_threshold: 1e-10,
            backhaul_enabled: true,
            freeze_reweighting: false,
            tau: None,
            repair: true,
            qcqp: QcqpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub weighted_sum_rate: f64,
    /// WMMSE objective `sum_k alpha_k (rho_k e_k - ln rho_k)` after the
    /// receiver/weight updates, before the beamformer update.
    pub objective_before: f64,
    /// Same objective after the beamformer update.
    pub objective: f64,
    pub power: Vec<f64>,
    pub surrogate_backhaul: Vec<f64>,
    pub actual_backhaul: Vec<f64>,
    pub active_users: usize,
    pub mean_candidate_size: f64,
    pub qcqp_iterations: usize,
    pub qcqp_status: SolveStatus,
    pub solve_seconds: f64,
    pub iteration_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsTrace {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    /// `(user, bs)` links cut by the post-convergence backhaul repair.
    pub repaired_links: Vec<(usize, usize)>,
}

impl DiagnosticsTrace {
    /// One row per (iteration, BS).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record([
            "iteration",
            "weighted_sum_rate",
            "objective",
            "bs_id",
            "power",
            "surrogate_backhaul",
            "actual_backhaul",
            "active_users",
            "mean_candidate_size",
            "solve_seconds",
        ])?;
        for r in &self.records {
            for l in 0..r.power.len() {
                wtr.write_record([
                    r.iteration.to_string(),
                    r.weighted_sum_rate.to_string(),
                    r.objective.to_string(),
                    l.to_string(),
                    r.power[l].to_string(),
                    r.surrogate_backhaul[l].to_string(),
                    r.actual_backhaul[l].to_string(),
                    r.active_users.to_string(),
                    r.mean_candidate_size.to_string(),
                    r.solve_seconds.to_string(),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EngineRun {
    pub state: BeamformingState,
    pub trace: DiagnosticsTrace,
}

/// Initial state: matched-filter blocks on every candidate link, each BS's
/// power split evenly over its candidate users.
pub fn initial_state(
    channel: &ChannelRealization,
    layout: &NetworkLayout,
    alpha: &[f64],
    candidates: &[Vec<usize>],
    tau: f64,
) -> BeamformingState {
    let num_users = channel.num_users();
    let num_bs = layout.num_bs();
    let blocks = &layout.blocks;
    let active: Vec<bool> = (0..num_users)
        .map(|k| alpha[k] > 0.0 && !candidates[k].is_empty())
        .collect();
    let candidate_links: Vec<Vec<usize>> = (0..num_users)
        .map(|k| if active[k] { candidates[k].clone() } else { Vec::new() })
        .collect();
    let mut load = vec![0usize; num_bs];
    for links in &candidate_links {
        for &l in links {
            load[l] += 1;
        }
    }
    let budgets = layout.power_budgets();
    let mut w = vec![CVec::zeros(blocks.total()); num_users];
    for (k, links) in candidate_links.iter().enumerate() {
        for &l in links {
            let range = blocks.range(l);
            let block = channel.h[k].columns(range.start, range.len()).into_owned();
            if let Some(v) = linalg::principal_right_singular_vector(&block) {
                let scale = (budgets[l] / load[l] as f64).sqrt();
                for (i, idx) in range.enumerate() {
                    w[k][idx] = v[i] * scale;
                }
            }
        }
    }
    let rates = rates(&w, channel);
    let mut state = BeamformingState {
        u: channel.h.iter().map(|h| CVec::zeros(h.nrows())).collect(),
        rho: vec![1.0; num_users],
        beta_dyn: vec![vec![0.0; num_users]; num_bs],
        beta_stat: vec![0.0; num_users],
        rate_hat: rates.clone(),
        alpha: alpha.to_vec(),
        active,
        candidate_links,
        tau,
        rates,
        duals: DualVariables::zeros(num_bs),
        w,
    };
    update_beta_dynamic(&mut state, blocks);
    state
}

/// Dynamic clustering: candidates are typically the strongest `L_c` BSs.
pub fn run_dynamic(
    channel: &ChannelRealization,
    layout: &NetworkLayout,
    alpha: &[f64],
    candidates: &[Vec<usize>],
    options: &EngineOptions,
) -> Result<EngineRun> {
    let tau = options.tau.unwrap_or_else(|| tau_mw_per_hz(layout.bandwidth_hz));
    let state = initial_state(channel, layout, alpha, candidates, tau);
    run_loop(state, channel, layout, None, options)
}

/// Static clustering over fixed clusters.
pub fn run_static(
    channel: &ChannelRealization,
    layout: &NetworkLayout,
    clusters: &ClusterAssignment,
    alpha: &[f64],
    options: &EngineOptions,
) -> Result<EngineRun> {
    let tau = options.tau.unwrap_or_else(|| tau_mw_per_hz(layout.bandwidth_hz));
    let mut state = initial_state(channel, layout, alpha, &clusters.serving, tau);
    update_beta_static(&mut state, clusters, &layout.blocks);
    let options = EngineOptions {
        prune_threshold: None,
        ..*options
    };
    run_loop(state, channel, layout, Some(clusters), &options)
}

fn wmmse_objective(state: &BeamformingState, mses: &[f64]) -> f64 {
    (0..state.num_users())
        .filter(|&k| state.active[k])
        .map(|k| state.alpha[k] * (state.rho[k] * mses[k] - state.rho[k].ln()))
        .sum()
}

/// Continues the outer loop from `state`.
pub fn run_loop(
    mut state: BeamformingState,
    channel: &ChannelRealization,
    layout: &NetworkLayout,
    clusters: Option<&ClusterAssignment>,
    options: &EngineOptions,
) -> Result<EngineRun> {
    let blocks = &layout.blocks;
    let num_users = state.num_users();
    let mut trace = DiagnosticsTrace::default();
    // start from a feasible point so every pass is a descent step
    let start = qcqp::assemble(&state, channel, layout, clusters, options.backhaul_enabled);
    if start.max_violation(&state.w) > 0.0 {
        start.project_feasible(&mut state.w);
        state.rates = rates(&state.w, channel);
    }
    let mut prev_wsr = state.weighted_sum_rate();

    for iteration in 1..=options.max_iters {
        let started = Instant::now();
        // receivers, MSEs, weights
        let mut mses = vec![1.0; num_users];
        for k in 0..num_users {
            if !state.active[k] {
                continue;
            }
            state.u[k] = mmse_receiver(k, &state.w, channel);
            mses[k] = mse(k, &state.u[k], &state.w, channel);
            state.rho[k] = mse_weight(mses[k]).map_err(|e| Error::Solver {
                iteration,
                message: e.to_string(),
            })?;
        }
        let objective_before = wmmse_objective(&state, &mses);

        // beamformers
        let solve_started = Instant::now();
        let problem = qcqp::assemble(&state, channel, layout, clusters, options.backhaul_enabled);
        let solution = problem.solve(&options.qcqp, Some(&state.duals));
        let solve_seconds = solve_started.elapsed().as_secs_f64();
        if solution.w.iter().any(|wk| wk.iter().any(|v| !v.re.is_finite() || !v.im.is_finite())) {
            return Err(Error::Solver {
                iteration,
                message: "non-finite beamformer".into(),
            });
        }
        let old_objective = problem.objective(&state.w);
        let keep_old = solution.objective > old_objective && problem.max_violation(&state.w) == 0.0;
        if !keep_old {
            state.w = solution.w;
        }
        state.duals = solution.duals;
        for k in 0..num_users {
            if state.active[k] {
                mses[k] = mse(k, &state.u[k], &state.w, channel);
            }
        }
        let objective = wmmse_objective(&state, &mses);

        // rates and complexity reduction
        state.rates = rates(&state.w, channel);
        let mut changed = false;
        if let Some(threshold) = options.shrink_threshold {
            changed |= shrink_user_pool(&mut state, threshold) > 0;
        }
        if let Some(threshold) = options.prune_threshold {
            changed |= prune_links(&mut state, blocks, threshold) > 0;
        }
        if changed {
            state.rates = rates(&state.w, channel);
        }

        // reweighting
        if !options.freeze_reweighting {
            state.rate_hat = state.rates.clone();
            match clusters {
                None => update_beta_dynamic(&mut state, blocks),
                Some(c) => update_beta_static(&mut state, c, blocks),
            }
        }

        let surrogate = problem.backhaul_usage(&state.w);
        let wsr = state.weighted_sum_rate();
        trace.records.push(IterationRecord {
            iteration,
            weighted_sum_rate: wsr,
            objective_before,
            objective,
            power: problem.power_usage(&state.w),
            surrogate_backhaul: surrogate,
            actual_backhaul: actual_backhaul(&state.w, &state.rates, blocks, clusters, options.indicator_threshold),
            active_users: state.active_count(),
            mean_candidate_size: state.mean_candidate_size(),
            qcqp_iterations: solution.iterations,
            qcqp_status: solution.status,
            solve_seconds,
            iteration_seconds: started.elapsed().as_secs_f64(),
        });

        let change = (wsr - prev_wsr).abs();
        prev_wsr = wsr;
        // the surrogate lags the true backhaul while links are still decaying
        let settled = !options.backhaul_enabled || {
            let record = trace.records.last().expect("record pushed");
            record
                .actual_backhaul
                .iter()
                .zip(&problem.backhaul_budget)
                .all(|(a, c)| *a <= c * (1.0 + SETTLE_SLACK))
        };
        if (change <= options.rel_tol * wsr.abs() && settled) || wsr == 0.0 {
            trace.converged = true;
            break;
        }
    }

    if options.backhaul_enabled && options.repair {
        trace.repaired_links = repair(&mut state, channel, layout, clusters, options.indicator_threshold);
    }
    Ok(EngineRun { state, trace })
}

/// While some BS's true backhaul exceeds its budget, removes the served
/// user with the smallest `alpha_k R_k` from the most violated BS: the single
/// block `w_k^l` for dynamic clustering, the whole beamformer for static
/// clustering (where the indicator covers the cluster). Rates of the
/// remaining users are held at their pre-repair values.
pub fn repair(
    state: &mut BeamformingState,
    channel: &ChannelRealization,
    layout: &NetworkLayout,
    clusters: Option<&ClusterAssignment>,
    threshold: f64,
) -> Vec<(usize, usize)> {
    let budgets = layout.backhaul_budgets();
    let blocks = &layout.blocks;
    let mut dropped = Vec::new();
    loop {
        let usage = actual_backhaul(&state.w, &state.rates, blocks, clusters, threshold);
        let worst = (0..usage.len())
            .filter(|&l| usage[l] > budgets[l] * (1.0 + SETTLE_SLACK))
            .max_by(|&a, &b| {
                let ra = usage[a] / budgets[a].max(f64::MIN_POSITIVE);
                let rb = usage[b] / budgets[b].max(f64::MIN_POSITIVE);
                ra.total_cmp(&rb)
            });
        let Some(l) = worst else { break };
        let served = (0..state.num_users()).filter(|&k| match clusters {
            None => state.block_power(k, l, blocks) >= threshold,
            Some(c) => c.serving[k].contains(&l) && state.w[k].norm_squared() > threshold,
        });
        let victim = served.min_by(|&a, &b| {
            (state.alpha[a] * state.rates[a])
                .total_cmp(&(state.alpha[b] * state.rates[b]))
                .then(a.cmp(&b))
        });
        let Some(k) = victim else { break };
        match clusters {
            None => {
                for i in blocks.range(l) {
                    state.w[k][i] = C64::new(0.0, 0.0);
                }
                state.candidate_links[k].retain(|&x| x != l);
                if state.candidate_links[k].is_empty() {
                    deactivate(state, k);
                }
            }
            Some(_) => deactivate(state, k),
        }
        // surviving users keep their scheduled rate: removing a link only
        // lowers interference, so the scheduled rate stays decodable
        let fresh = rates(&state.w, channel);
        for (r, f) in state.rates.iter_mut().zip(fresh) {
            *r = r.min(f);
        }
        dropped.push((k, l));
    }
    dropped
}
