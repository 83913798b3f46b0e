//! The per-iteration beamformer subproblem
//!
//! ```text
//! minimize    sum_k  w_k^H A w_k - 2 Re{b_k^H w_k}
//! subject to  sum_k ||w_k^l||^2                   <= P_l   for every BS l
//!             sum_k c_{l,k} ||w_k^(scope)||^2     <= C_l   for every BS l
//! ```
//!
//! where `w_k` is supported on the blocks of its candidate (or fixed) cluster
//! and the backhaul scope is either the single block `l` (dynamic clustering)
//! or the whole cluster beamformer (static clustering).
//!
//! The Lagrangian separates over users: for multipliers `nu = (mu, lambda)`,
//! `w_k(nu) = (A + D_k(nu))^{-1} b_k` with `D_k` diagonal per block. The dual
//! has only `2L` variables regardless of the number of users, so it is solved
//! directly by a projected Newton method on `nu >= 0`: the gradient is the
//! constraint violation and the Hessian comes from the derivative of the
//! closed-form primal. Constraints are normalized by their budgets so
//! tolerances are relative.

use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::linalg::{self, czero, CMat, CVec, C64};
use crate::topology::{BlockMap, NetworkLayout};
use crate::wmmse::{BeamformingState, ClusterAssignment};

/// Relative diagonal loading of the per-user systems.
const RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackhaulScope {
    /// `c_{l,k}` weights `||w_k^l||^2` only (dynamic clustering).
    PerBlock,
    /// `c_{l,k}` weights the whole cluster power `||w_k||^2` (static clustering).
    WholeCluster,
}

#[derive(Debug, Clone)]
pub struct QcqpSubproblem {
    /// Shared Hermitian PSD quadratic form, `M_t x M_t`.
    pub a: CMat,
    /// Per-user linear terms, length `M_t`.
    pub b: Vec<CVec>,
    /// BS ids each user's beamformer may use.
    pub support: Vec<Vec<usize>>,
    pub blocks: BlockMap,
    pub power_budget: Vec<f64>,
    /// `f64::INFINITY` drops the constraint.
    pub backhaul_budget: Vec<f64>,
    /// Indexed `[l][k]`.
    pub backhaul_coeff: Vec<Vec<f64>>,
    pub scope: BackhaulScope,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DualVariables {
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl DualVariables {
    pub fn zeros(num_bs: usize) -> Self {
        Self {
            mu: vec![0.0; num_bs],
            lambda: vec![0.0; num_bs],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QcqpOptions {
    /// Relative constraint violation and stationarity tolerance.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for QcqpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 5000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    /// Iteration cap hit or the line search stalled before reaching `tol`.
    Inexact,
}

#[derive(Debug, Clone)]
pub struct QcqpSolution {
    pub w: Vec<CVec>,
    pub duals: DualVariables,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Relative stationarity residual reached by the dual iterations.
    pub residual: f64,
    /// Relative violation of the dual-recovered primal, before projection.
    pub violation_before_projection: f64,
    /// True when the feasibility projection rescaled some blocks.
    pub projected: bool,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy)]
enum Span {
    Block(usize),
    All,
}

#[derive(Debug, Clone, Copy)]
struct Term {
    con: usize,
    /// Coefficient already divided by the constraint budget.
    coeff: f64,
    span: Span,
}

struct UserSystem {
    k: usize,
    /// Global antenna indices of the support, block by block.
    idx: Vec<usize>,
    /// `(bs, local range)` per support block.
    spans: Vec<(usize, Range<usize>)>,
    a: CMat,
    b: CVec,
    terms: Vec<Term>,
}

impl UserSystem {
    fn range(&self, span: Span) -> Range<usize> {
        match span {
            Span::Block(j) => self.spans[j].1.clone(),
            Span::All => 0..self.idx.len(),
        }
    }
}

struct Prepared {
    systems: Vec<UserSystem>,
    /// Constraint indices that take part in the dual (finite, positive budget).
    live: Vec<usize>,
    num_bs: usize,
}

struct Evaluation {
    value: f64,
    usage: Vec<f64>,
    w: Vec<CVec>,
    factors: Vec<Option<Cholesky<C64, Dyn>>>,
}

fn norm_sqr(v: &CVec, r: Range<usize>) -> f64 {
    r.map(|i| v[i].norm_sqr()).sum()
}

impl QcqpSubproblem {
    pub fn num_users(&self) -> usize {
        self.b.len()
    }

    pub fn num_bs(&self) -> usize {
        self.blocks.num_blocks()
    }

    pub fn objective(&self, w: &[CVec]) -> f64 {
        w.iter()
            .zip(&self.b)
            .map(|(wk, bk)| {
                if wk.iter().all(|v| *v == czero()) {
                    0.0
                } else {
                    linalg::quad_form(&self.a, wk) - 2.0 * bk.dotc(wk).re
                }
            })
            .sum()
    }

    /// `sum_k ||w_k^l||^2` per BS.
    pub fn power_usage(&self, w: &[CVec]) -> Vec<f64> {
        (0..self.num_bs())
            .map(|l| w.iter().map(|wk| norm_sqr(wk, self.blocks.range(l))).sum())
            .collect()
    }

    /// Left-hand side of the weighted-power (backhaul) constraints per BS.
    pub fn backhaul_usage(&self, w: &[CVec]) -> Vec<f64> {
        (0..self.num_bs())
            .map(|l| {
                w.iter()
                    .enumerate()
                    .map(|(k, wk)| {
                        let c = self.backhaul_coeff[l][k];
                        if c == 0.0 {
                            return 0.0;
                        }
                        match self.scope {
                            BackhaulScope::PerBlock => c * norm_sqr(wk, self.blocks.range(l)),
                            BackhaulScope::WholeCluster if self.support[k].contains(&l) => {
                                c * wk.norm_squared()
                            }
                            BackhaulScope::WholeCluster => 0.0,
                        }
                    })
                    .sum()
            })
            .collect()
    }

    /// Largest relative constraint violation, `max(usage/budget - 1, 0)`.
    pub fn max_violation(&self, w: &[CVec]) -> f64 {
        let p = self.power_usage(w);
        let c = self.backhaul_usage(w);
        let mut worst: f64 = 0.0;
        for l in 0..self.num_bs() {
            worst = worst.max(relative_excess(p[l], self.power_budget[l]));
            worst = worst.max(relative_excess(c[l], self.backhaul_budget[l]));
        }
        worst
    }

    fn prepare(&self) -> Prepared {
        let num_bs = self.num_bs();
        let power_live: Vec<bool> = self.power_budget.iter().map(|&p| p.is_finite() && p > 0.0).collect();
        let bh_live: Vec<bool> = self.backhaul_budget.iter().map(|&c| c.is_finite() && c > 0.0).collect();

        let mut systems = Vec::new();
        for k in 0..self.num_users() {
            let bk = &self.b[k];
            if bk.iter().all(|v| *v == czero()) {
                continue;
            }
            // blocks forced to zero by zero budgets
            let mut drop_user = false;
            let mut support = Vec::new();
            for &l in &self.support[k] {
                if self.power_budget[l] <= 0.0 {
                    continue;
                }
                let c = self.backhaul_coeff[l][k];
                if self.backhaul_budget[l] <= 0.0 && c > 0.0 {
                    match self.scope {
                        BackhaulScope::PerBlock => continue,
                        BackhaulScope::WholeCluster => {
                            drop_user = true;
                            break;
                        }
                    }
                }
                support.push(l);
            }
            if drop_user || support.is_empty() {
                continue;
            }
            let mut idx = Vec::new();
            let mut spans = Vec::new();
            for &l in &support {
                let start = idx.len();
                idx.extend(self.blocks.range(l));
                spans.push((l, start..idx.len()));
            }
            let mut a = CMat::from_fn(idx.len(), idx.len(), |r, c| self.a[(idx[r], idx[c])]);
            // A is often rank deficient on a support; the ridge picks the
            // minimum-norm minimizer when no multiplier is active
            let ridge = RIDGE * (0..idx.len()).map(|i| a[(i, i)].re).fold(0.0, f64::max);
            for i in 0..idx.len() {
                a[(i, i)] += C64::new(ridge, 0.0);
            }
            let b = CVec::from_fn(idx.len(), |r, _| bk[idx[r]]);

            let mut terms = Vec::new();
            for (j, &(l, _)) in spans.iter().enumerate() {
                if power_live[l] {
                    terms.push(Term {
                        con: l,
                        coeff: 1.0 / self.power_budget[l],
                        span: Span::Block(j),
                    });
                }
            }
            match self.scope {
                BackhaulScope::PerBlock => {
                    for (j, &(l, _)) in spans.iter().enumerate() {
                        let c = self.backhaul_coeff[l][k];
                        if bh_live[l] && c > 0.0 {
                            terms.push(Term {
                                con: num_bs + l,
                                coeff: c / self.backhaul_budget[l],
                                span: Span::Block(j),
                            });
                        }
                    }
                }
                BackhaulScope::WholeCluster => {
                    for &l in &self.support[k] {
                        let c = self.backhaul_coeff[l][k];
                        if bh_live[l] && c > 0.0 {
                            terms.push(Term {
                                con: num_bs + l,
                                coeff: c / self.backhaul_budget[l],
                                span: Span::All,
                            });
                        }
                    }
                }
            }
            systems.push(UserSystem {
                k,
                idx,
                spans,
                a,
                b,
                terms,
            });
        }

        let mut used = vec![false; 2 * num_bs];
        for s in &systems {
            for t in &s.terms {
                used[t.con] = true;
            }
        }
        let live = (0..2 * num_bs)
            .filter(|&i| {
                used[i] && if i < num_bs { power_live[i] } else { bh_live[i - num_bs] }
            })
            .collect();
        Prepared {
            systems,
            live,
            num_bs,
        }
    }

    fn evaluate(&self, prep: &Prepared, nu: &[f64], keep_factors: bool) -> Evaluation {
        let mut usage = vec![0.0; 2 * prep.num_bs];
        let mut value = -nu.iter().sum::<f64>();
        let mut w = Vec::with_capacity(prep.systems.len());
        let mut factors = Vec::with_capacity(if keep_factors { prep.systems.len() } else { 0 });
        for sys in &prep.systems {
            let mut m = sys.a.clone();
            for t in &sys.terms {
                let shift = t.coeff * nu[t.con];
                if shift != 0.0 {
                    for i in sys.range(t.span) {
                        m[(i, i)] += C64::new(shift, 0.0);
                    }
                }
            }
            let factor = linalg::hermitian_cholesky(m);
            let wk = match &factor {
                Some(f) => f.solve(&sys.b),
                None => CVec::zeros(sys.b.len()),
            };
            value -= sys.b.dotc(&wk).re;
            for t in &sys.terms {
                usage[t.con] += t.coeff * norm_sqr(&wk, sys.range(t.span));
            }
            w.push(wk);
            if keep_factors {
                factors.push(factor);
            }
        }
        Evaluation {
            value,
            usage,
            w,
            factors,
        }
    }

    /// Dual Hessian restricted to the live constraints (negative semidefinite).
    fn hessian(&self, prep: &Prepared, eval: &Evaluation, pos: &[Option<usize>]) -> DMatrix<f64> {
        let n = prep.live.len();
        let mut h = DMatrix::<f64>::zeros(n, n);
        for ((sys, wk), factor) in prep.systems.iter().zip(&eval.w).zip(&eval.factors) {
            let Some(factor) = factor else { continue };
            let vs: Vec<(usize, CVec)> = sys
                .terms
                .iter()
                .filter_map(|t| {
                    let p = pos[t.con]?;
                    let mut v = CVec::zeros(wk.len());
                    for i in sys.range(t.span) {
                        v[i] = wk[i] * t.coeff;
                    }
                    Some((p, v))
                })
                .collect();
            let zs: Vec<CVec> = vs.iter().map(|(_, v)| factor.solve(v)).collect();
            for (s, (ps, vs_)) in vs.iter().enumerate() {
                for (t, (pt, _)) in vs.iter().enumerate().skip(s) {
                    let val = -2.0 * vs_.dotc(&zs[t]).re;
                    h[(*ps, *pt)] += val;
                    if s != t {
                        h[(*pt, *ps)] += val;
                    }
                }
            }
        }
        h
    }

    fn assemble_w(&self, prep: &Prepared, local: &[CVec]) -> Vec<CVec> {
        let total = self.blocks.total();
        let mut w = vec![CVec::zeros(total); self.num_users()];
        for (sys, wl) in prep.systems.iter().zip(local) {
            for (i, &g) in sys.idx.iter().enumerate() {
                w[sys.k][g] = wl[i];
            }
        }
        w
    }

    fn nu_from_duals(&self, duals: &DualVariables) -> Vec<f64> {
        let mut nu = Vec::with_capacity(2 * self.num_bs());
        nu.extend(duals.mu.iter().map(|v| v.max(0.0)));
        nu.extend(duals.lambda.iter().map(|v| v.max(0.0)));
        nu.resize(2 * self.num_bs(), 0.0);
        nu
    }

    /// Closed-form minimizer of the Lagrangian for fixed multipliers.
    pub fn primal_from_duals(&self, duals: &DualVariables) -> Vec<CVec> {
        let prep = self.prepare();
        let nu = self.scaled_nu(&self.nu_from_duals(duals));
        let eval = self.evaluate(&prep, &nu, false);
        self.assemble_w(&prep, &eval.w)
    }

    /// Multipliers of the raw constraints -> multipliers of the normalized ones.
    fn scaled_nu(&self, raw: &[f64]) -> Vec<f64> {
        let n = self.num_bs();
        raw.iter()
            .enumerate()
            .map(|(i, &v)| {
                let budget = if i < n { self.power_budget[i] } else { self.backhaul_budget[i - n] };
                if budget.is_finite() && budget > 0.0 {
                    v * budget
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn unscaled_duals(&self, nu: &[f64]) -> DualVariables {
        let n = self.num_bs();
        let raw: Vec<f64> = nu
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let budget = if i < n { self.power_budget[i] } else { self.backhaul_budget[i - n] };
                if v > 0.0 {
                    v / budget
                } else {
                    0.0
                }
            })
            .collect();
        DualVariables {
            mu: raw[..n].to_vec(),
            lambda: raw[n..].to_vec(),
        }
    }

    pub fn solve(&self, options: &QcqpOptions, warm_start: Option<&DualVariables>) -> QcqpSolution {
        let prep = self.prepare();
        let n_con = 2 * self.num_bs();
        let mut pos = vec![None; n_con];
        for (p, &i) in prep.live.iter().enumerate() {
            pos[i] = Some(p);
        }
        let mut nu = vec![0.0; n_con];
        if let Some(d) = warm_start {
            let scaled = self.scaled_nu(&self.nu_from_duals(d));
            for &i in &prep.live {
                nu[i] = scaled[i];
            }
        }

        let mut eval = self.evaluate(&prep, &nu, true);
        let mut status = SolveStatus::Inexact;
        let mut iterations = 0;
        let mut residual = f64::INFINITY;
        while iterations < options.max_iters {
            let grad: Vec<f64> = prep.live.iter().map(|&i| eval.usage[i] - 1.0).collect();
            residual = prep
                .live
                .iter()
                .zip(&grad)
                .map(|(&i, &g)| if nu[i] > 0.0 { g.abs() } else { g.max(0.0) })
                .fold(0.0, f64::max);
            if residual <= options.tol {
                status = SolveStatus::Optimal;
                break;
            }
            iterations += 1;

            let h = self.hessian(&prep, &eval, &pos);
            let free: Vec<usize> = (0..prep.live.len())
                .filter(|&p| nu[prep.live[p]] > 0.0 || grad[p] > 0.0)
                .collect();
            // Newton on 1 - usage^{-1/2}, which is nearly linear in nu for a
            // single active constraint; plain Newton and scaled gradient back it up.
            let secular: Vec<f64> = prep
                .live
                .iter()
                .zip(&grad)
                .map(|(&i, &g)| {
                    let u = eval.usage[i];
                    if u > 0.0 {
                        2.0 * u * (u.sqrt() - 1.0)
                    } else {
                        g
                    }
                })
                .collect();
            let accepted = self
                .line_search(&prep, &nu, &eval, &grad, &newton_direction(&h, &secular, &free))
                .or_else(|| self.line_search(&prep, &nu, &eval, &grad, &newton_direction(&h, &grad, &free)))
                .or_else(|| {
                    let scaled: Vec<f64> = (0..prep.live.len())
                        .map(|p| {
                            let curv = (-h[(p, p)]).max(1e-300);
                            if free.contains(&p) {
                                grad[p] / curv
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    self.line_search(&prep, &nu, &eval, &grad, &scaled)
                });
            match accepted {
                Some((new_nu, new_eval)) => {
                    nu = new_nu;
                    eval = new_eval;
                }
                None => break,
            }
        }

        let w_local = eval.w;
        let mut w = self.assemble_w(&prep, &w_local);
        let violation_before_projection = self.max_violation(&w);
        let projected = violation_before_projection > 0.0;
        if projected {
            self.project_feasible(&mut w);
        }
        let objective = self.objective(&w);
        QcqpSolution {
            w,
            duals: self.unscaled_duals(&nu),
            status,
            iterations,
            residual,
            violation_before_projection,
            projected,
            objective,
        }
    }

    /// Armijo search along the projection arc `max(0, nu + s d)`.
    fn line_search(
        &self,
        prep: &Prepared,
        nu: &[f64],
        eval: &Evaluation,
        grad: &[f64],
        direction: &[f64],
    ) -> Option<(Vec<f64>, Evaluation)> {
        if direction.iter().all(|d| *d == 0.0) {
            return None;
        }
        let mut step = 1.0;
        for _ in 0..60 {
            let mut trial = nu.to_vec();
            let mut gain = 0.0;
            let mut moved = false;
            for (p, &i) in prep.live.iter().enumerate() {
                let v = (nu[i] + step * direction[p]).max(0.0);
                if v != nu[i] {
                    moved = true;
                }
                gain += grad[p] * (v - nu[i]);
                trial[i] = v;
            }
            if !moved {
                return None;
            }
            let next = self.evaluate(prep, &trial, true);
            let scale = eval.value.abs().max(1.0);
            if gain <= 0.0 {
                // not an ascent direction along the arc
                return None;
            }
            if next.value.is_finite()
                && next.value >= eval.value + 1e-4 * gain - 1e-15 * scale
                && next.value >= eval.value - 1e-15 * scale
            {
                return Some((trial, next));
            }
            step *= 0.5;
        }
        None
    }

    /// Rescales blocks until every constraint holds. Each constraint is
    /// homogeneous quadratic in the blocks it touches, and shrinking blocks
    /// never increases another constraint, so one ordered pass suffices.
    pub fn project_feasible(&self, w: &mut [CVec]) {
        let n = self.num_bs();
        for l in 0..n {
            let usage: f64 = w.iter().map(|wk| norm_sqr(wk, self.blocks.range(l))).sum();
            if usage > self.power_budget[l] {
                let f = C64::new((self.power_budget[l] / usage).sqrt() * (1.0 - 1e-15), 0.0);
                for wk in w.iter_mut() {
                    for i in self.blocks.range(l) {
                        wk[i] *= f;
                    }
                }
            }
        }
        for l in 0..n {
            let budget = self.backhaul_budget[l];
            if !budget.is_finite() {
                continue;
            }
            let usage = self.backhaul_usage(w)[l];
            if usage <= budget {
                continue;
            }
            let f = C64::new((budget / usage).sqrt() * (1.0 - 1e-15), 0.0);
            for (k, wk) in w.iter_mut().enumerate() {
                if self.backhaul_coeff[l][k] == 0.0 {
                    continue;
                }
                match self.scope {
                    BackhaulScope::PerBlock => {
                        for i in self.blocks.range(l) {
                            wk[i] *= f;
                        }
                    }
                    BackhaulScope::WholeCluster => {
                        if self.support[k].contains(&l) {
                            *wk *= f;
                        }
                    }
                }
            }
        }
    }
}

fn relative_excess(usage: f64, budget: f64) -> f64 {
    if !budget.is_finite() {
        0.0
    } else if budget > 0.0 {
        (usage / budget - 1.0).max(0.0)
    } else if usage > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Regularized Newton ascent direction on the free coordinates.
fn newton_direction(h: &DMatrix<f64>, grad: &[f64], free: &[usize]) -> Vec<f64> {
    let mut d = vec![0.0; grad.len()];
    if free.is_empty() {
        return d;
    }
    let n = free.len();
    let max_diag = free.iter().map(|&p| -h[(p, p)]).fold(0.0, f64::max);
    let mut delta = 1e-10 * max_diag.max(1e-300);
    let rhs = DVector::from_iterator(n, free.iter().map(|&p| grad[p]));
    for _ in 0..8 {
        let m = DMatrix::from_fn(n, n, |r, c| -h[(free[r], free[c])] + if r == c { delta } else { 0.0 });
        if let Some(chol) = m.cholesky() {
            let step = chol.solve(&rhs);
            for (j, &p) in free.iter().enumerate() {
                d[p] = step[j];
            }
            return d;
        }
        delta *= 1e3;
    }
    for &p in free {
        d[p] = grad[p] / (-h[(p, p)]).max(1e-300);
    }
    d
}

/// Builds the beamformer subproblem for the current iterate: `A` and `b`
/// from the receivers, MSE weights and priority weights of active users;
/// backhaul coefficients `beta * R_hat` per the clustering mode.
pub fn assemble(
    state: &BeamformingState,
    channel: &ChannelRealization,
    layout: &NetworkLayout,
    clusters: Option<&ClusterAssignment>,
    backhaul_enabled: bool,
) -> QcqpSubproblem {
    let total = layout.blocks.total();
    let num_users = channel.num_users();
    let num_bs = layout.num_bs();
    let mut a = CMat::zeros(total, total);
    let mut b = vec![CVec::zeros(total); num_users];
    for k in 0..num_users {
        if !state.active[k] {
            continue;
        }
        let g = channel.h[k].adjoint() * &state.u[k];
        let weight = state.alpha[k] * state.rho[k];
        a.gerc(C64::new(weight, 0.0), &g, &g, C64::new(1.0, 0.0));
        b[k] = g * C64::new(weight, 0.0);
    }
    let support = (0..num_users)
        .map(|k| if state.active[k] { state.candidate_links[k].clone() } else { Vec::new() })
        .collect();
    let mut backhaul_coeff = vec![vec![0.0; num_users]; num_bs];
    let scope = match clusters {
        None => {
            for (l, row) in backhaul_coeff.iter_mut().enumerate() {
                for (k, c) in row.iter_mut().enumerate() {
                    *c = state.beta_dyn[l][k] * state.rate_hat[k];
                }
            }
            BackhaulScope::PerBlock
        }
        Some(clusters) => {
            for (k, serving) in clusters.serving.iter().enumerate() {
                for &l in serving {
                    backhaul_coeff[l][k] = state.beta_stat[k] * state.rate_hat[k];
                }
            }
            BackhaulScope::WholeCluster
        }
    };
    let backhaul_budget = if backhaul_enabled {
        layout.backhaul_budgets()
    } else {
        vec![f64::INFINITY; num_bs]
    };
    QcqpSubproblem {
        a,
        b,
        support,
        blocks: layout.blocks.clone(),
        power_budget: layout.power_budgets(),
        backhaul_budget,
        backhaul_coeff,
        scope,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_cvec(rng: &mut ChaCha8Rng, n: usize) -> CVec {
        CVec::from_fn(n, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    /// `num_users` random rank-one terms over `sizes` blocks.
    fn random_problem(rng: &mut ChaCha8Rng, sizes: Vec<usize>, num_users: usize) -> QcqpSubproblem {
        let blocks = BlockMap::new(sizes);
        let total = blocks.total();
        let num_bs = blocks.num_blocks();
        let mut a = CMat::zeros(total, total);
        let mut b = Vec::new();
        for _ in 0..num_users {
            let g = random_cvec(rng, total);
            let weight = rng.random_range(0.5..2.0);
            a.gerc(c(weight, 0.0), &g, &g, c(1.0, 0.0));
            b.push(g * c(weight, 0.0));
        }
        QcqpSubproblem {
            a,
            b,
            support: vec![(0..num_bs).collect(); num_users],
            blocks,
            power_budget: (0..num_bs).map(|_| rng.random_range(0.05..0.5)).collect(),
            backhaul_budget: (0..num_bs).map(|_| rng.random_range(0.05..0.5)).collect(),
            backhaul_coeff: (0..num_bs)
                .map(|_| (0..num_users).map(|_| rng.random_range(0.2..3.0)).collect())
                .collect(),
            scope: BackhaulScope::PerBlock,
        }
    }

    fn scalar_problem(a: f64, b: f64, p: f64) -> QcqpSubproblem {
        QcqpSubproblem {
            a: CMat::from_element(1, 1, c(a, 0.0)),
            b: vec![CVec::from_element(1, c(b, 0.0))],
            support: vec![vec![0]],
            blocks: BlockMap::new(vec![1]),
            power_budget: vec![p],
            backhaul_budget: vec![f64::INFINITY],
            backhaul_coeff: vec![vec![0.0]],
            scope: BackhaulScope::PerBlock,
        }
    }

    #[test]
    fn zero_linear_term_gives_zero_beamformer() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = random_problem(&mut rng, vec![2, 2], 3);
        p.b[1] = CVec::zeros(4);
        let sol = p.solve(&QcqpOptions::default(), None);
        assert_eq!(sol.w[1].norm(), 0.0);
        let w = p.primal_from_duals(&DualVariables {
            mu: vec![0.3, 0.1],
            lambda: vec![0.0, 0.2],
        });
        assert_eq!(w[1].norm(), 0.0);
    }

    #[test]
    fn scalar_kkt_primal() {
        // w = b / (a + mu + lambda * beta * R_hat)
        let (a, b, mu, lambda, coeff) = (2.0, 3.0, 0.5, 0.25, 4.0);
        let mut p = scalar_problem(a, b, 1.0);
        p.backhaul_budget = vec![1.0];
        p.backhaul_coeff = vec![vec![coeff]];
        let w = p.primal_from_duals(&DualVariables {
            mu: vec![mu],
            lambda: vec![lambda],
        });
        let expected = b / (a + mu + lambda * coeff);
        assert!((w[0][0].re - expected).abs() < 1e-9);
        assert!(w[0][0].im.abs() < 1e-15);
    }

    #[test]
    fn primal_norm_nonincreasing_in_mu() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let p = random_problem(&mut rng, vec![2, 1], 3);
            let base = DualVariables {
                mu: vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
                lambda: vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
            };
            for l in 0..2 {
                let mut prev = f64::INFINITY;
                for step in 0..10 {
                    let mut d = base.clone();
                    d.mu[l] += step as f64 * 0.3;
                    let w = p.primal_from_duals(&d);
                    for wk in &w {
                        let _ = wk;
                    }
                    let blk: f64 = w.iter().map(|wk| norm_sqr(wk, p.blocks.range(l))).sum();
                    assert!(blk <= prev * (1.0 + 1e-12) + 1e-15);
                    prev = blk;
                }
            }
        }
    }

    #[test]
    fn inactive_power_constraint() {
        // unconstrained optimum a^-1 b = 0.5 has power 0.25 < 1
        let p = scalar_problem(2.0, 1.0, 1.0);
        let sol = p.solve(&QcqpOptions::default(), None);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_eq!(sol.duals.mu[0], 0.0);
        assert!((sol.w[0][0].re - 0.5).abs() < 1e-9);
    }

    #[test]
    fn tight_scalar_power_constraint() {
        // unconstrained optimum 5 has power 25 > P = 2
        let p = scalar_problem(1.0, 5.0, 2.0);
        let sol = p.solve(&QcqpOptions::default(), None);
        assert!((sol.w[0][0].norm_sqr() - 2.0).abs() < 1e-6 * 2.0);
        // KKT: mu = b/sqrt(P) - a
        assert!((sol.duals.mu[0] - (5.0 / 2f64.sqrt() - 1.0)).abs() < 1e-5);
    }

    #[test]
    fn zero_budget_forces_zero_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = random_problem(&mut rng, vec![2, 2], 3);
        p.backhaul_budget = vec![0.0, 0.0];
        let sol = p.solve(&QcqpOptions::default(), None);
        assert!(sol.w.iter().all(|w| w.norm() == 0.0));

        let mut p = random_problem(&mut rng, vec![2, 2], 3);
        p.power_budget[1] = 0.0;
        let sol = p.solve(&QcqpOptions::default(), None);
        for wk in &sol.w {
            assert_eq!(norm_sqr(wk, p.blocks.range(1)), 0.0);
        }
        assert!(sol.w.iter().any(|w| w.norm() > 0.0));
    }

    #[test]
    fn random_instances_feasible_and_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for scope in [BackhaulScope::PerBlock, BackhaulScope::WholeCluster] {
            for _ in 0..30 {
                let mut p = random_problem(&mut rng, vec![2, 1, 2], 4);
                p.scope = scope;
                let sol = p.solve(&QcqpOptions::default(), None);
                assert_eq!(sol.status, SolveStatus::Optimal, "{scope:?} it {} res {} duals {:?}", sol.iterations, sol.residual, sol.duals);
                assert!(p.max_violation(&sol.w) <= 1e-12);
                assert!(sol.duals.mu.iter().chain(&sol.duals.lambda).all(|v| *v >= 0.0));
                // complementary slackness in relative units
                let pu = p.power_usage(&sol.w);
                let bu = p.backhaul_usage(&sol.w);
                for l in 0..3 {
                    let ps = 1.0 - pu[l] / p.power_budget[l];
                    let bs = 1.0 - bu[l] / p.backhaul_budget[l];
                    assert!(sol.duals.mu[l] * p.power_budget[l] * ps <= 1e-6 * sol.objective.abs().max(1.0));
                    assert!(sol.duals.lambda[l] * p.backhaul_budget[l] * bs <= 1e-6 * sol.objective.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn warm_start_agrees_with_cold_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_problem(&mut rng, vec![4, 2, 2], 5);
        let cold = p.solve(&QcqpOptions::default(), None);
        let warm = p.solve(&QcqpOptions::default(), Some(&cold.duals));
        assert!(warm.iterations <= 1);
        assert!((warm.objective - cold.objective).abs() <= 1e-8 * cold.objective.abs());
    }

    #[test]
    fn common_scaling_of_weights_leaves_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_problem(&mut rng, vec![2, 2], 3);
        let mut q = p.clone();
        q.a *= c(7.5, 0.0);
        for bk in &mut q.b {
            *bk *= c(7.5, 0.0);
        }
        let sp = p.solve(&QcqpOptions::default(), None);
        let sq = q.solve(&QcqpOptions::default(), None);
        for (x, y) in sp.w.iter().zip(&sq.w) {
            assert!((x - y).norm() <= 1e-5 * x.norm().max(1e-12));
        }
    }

    #[test]
    fn projection_restores_feasibility() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for scope in [BackhaulScope::PerBlock, BackhaulScope::WholeCluster] {
            let mut p = random_problem(&mut rng, vec![2, 2], 3);
            p.scope = scope;
            let mut w: Vec<CVec> = (0..3).map(|_| random_cvec(&mut rng, 4) * c(3.0, 0.0)).collect();
            assert!(p.max_violation(&w) > 0.0);
            p.project_feasible(&mut w);
            assert_eq!(p.max_violation(&w), 0.0);
        }
    }
}
