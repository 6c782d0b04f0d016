//! Augmented-Lagrangian training: maximize revenue subject to zero empirical
//! regret, with misreports found by enumerating bid multipliers.

use jam_autodiff::{Graph, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{build_forward, forward_values, InstanceContext, ModelParams, SortMode};
use crate::{presets, BidProfile, Error, Result};

/// Penalty weight `min(initial * growth^(t / period), max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RhoSchedule {
    pub initial: f64,
    pub growth: f64,
    pub period: usize,
    pub max: f64,
}

impl Default for RhoSchedule {
    fn default() -> Self {
        Self {
            initial: 1.0,
            growth: 2.0,
            period: 2000,
            max: 64.0,
        }
    }
}

impl RhoSchedule {
    pub fn at(&self, iteration: usize) -> f64 {
        let steps = (iteration / self.period.max(1)).min(64) as i32;
        (self.initial * self.growth.powi(steps)).min(self.max)
    }
}

/// Geometric interpolation of the sort temperature from `start` to `end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauSchedule {
    pub start: f64,
    pub end: f64,
}

impl Default for TauSchedule {
    fn default() -> Self {
        Self { start: 1.0, end: 1.0 }
    }
}

impl TauSchedule {
    pub fn at(&self, iteration: usize, total: usize) -> f64 {
        if total <= 1 || self.start == self.end {
            return self.start;
        }
        let frac = (iteration as f64 / (total - 1) as f64).min(1.0);
        self.start * (self.end / self.start).powf(frac)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub rho: RhoSchedule,
    /// Multipliers are updated after every `lambda_period` steps.
    pub lambda_period: usize,
    pub misreport_grid: Vec<f64>,
    pub tau: TauSchedule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            iterations: 20_000,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            rho: RhoSchedule::default(),
            lambda_period: 100,
            misreport_grid: presets::misreport_grid(),
            tau: TauSchedule::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || self.epsilon.is_nan()
            || self.epsilon <= 0.0
        {
            return bad("optimizer moments need betas in [0, 1) and positive epsilon");
        }
        if !(self.rho.initial > 0.0 && self.rho.growth > 0.0 && self.rho.max > 0.0) || self.rho.period == 0 {
            return bad("penalty schedule must be positive with a nonzero period");
        }
        if self.lambda_period == 0 {
            return bad("multiplier period must be at least 1");
        }
        if self.misreport_grid.is_empty() || !self.misreport_grid.contains(&1.0) {
            return bad("misreport grid must be nonempty and contain 1.0");
        }
        if self.misreport_grid.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return bad("misreport multipliers must be finite and non-negative");
        }
        if !(self.tau.start > 0.0 && self.tau.end > 0.0) {
            return bad("temperatures must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    /// Flat multipliers, brands then stores.
    pub lambda: Vec<f64>,
    pub adam: AdamState,
    pub iteration: usize,
}

impl TrainState {
    pub fn new(params: ModelParams, num_bidders: usize) -> Self {
        let zeros = |p: &ModelParams| p.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        Self {
            adam: AdamState {
                m: zeros(&params),
                v: zeros(&params),
                steps: 0,
            },
            params,
            lambda: vec![0.0; num_bidders],
            iteration: 0,
        }
    }

    pub fn lambda_brand(&self, num_brands: usize) -> &[f64] {
        &self.lambda[..num_brands]
    }

    pub fn lambda_store(&self, num_brands: usize) -> &[f64] {
        &self.lambda[num_brands..]
    }
}

/// Best multiplier per `(sample, bidder)`, row-major `N x B`.
#[derive(Debug, Clone, PartialEq)]
pub struct MisreportTable {
    pub num_bidders: usize,
    pub coeffs: Vec<f64>,
    /// Utility gain of the chosen misreport over truth-telling.
    pub gains: Vec<f64>,
}

impl MisreportTable {
    pub fn coeff(&self, sample: usize, bidder: usize) -> f64 {
        self.coeffs[sample * self.num_bidders + bidder]
    }

    /// The misreported profile of `bidder` in `sample`.
    pub fn profile(&self, values: &[BidProfile], sample: usize, bidder: usize) -> BidProfile {
        misreport_profile(&values[sample], bidder, self.coeff(sample, bidder))
    }
}

/// `values` with the flat-indexed bidder's entry replaced by `r * value`.
pub fn misreport_profile(values: &BidProfile, bidder: usize, r: f64) -> BidProfile {
    let mut p = values.clone();
    p.set(bidder, r * values.get(bidder));
    p
}

/// Utilities from row-major `N x B` expected CTRs and payments at true values.
pub fn utilities(values: &[BidProfile], expected_ctr: &[f64], payments: &[f64]) -> Vec<f64> {
    let nb = values.first().map_or(0, BidProfile::num_bidders);
    let mut u = Vec::with_capacity(values.len() * nb);
    for (s, v) in values.iter().enumerate() {
        for x in 0..nb {
            u.push(v.get(x) * expected_ctr[s * nb + x] - payments[s * nb + x]);
        }
    }
    u
}

/// Enumerates every multiplier in `grid` for every bidder of every sample and
/// keeps the utility-maximizing one. Starts from `r = 1` and only replaces it
/// on a strict improvement, scanning `grid` in order.
pub fn best_misreports(
    params: &ModelParams,
    ctx: &InstanceContext,
    values: &[BidProfile],
    grid: &[f64],
    mode: SortMode,
) -> Result<MisreportTable> {
    let n = values.len();
    let nb = ctx.config().num_bidders();
    let (g0, p0) = forward_values(params, ctx, values, mode)?;
    let truthful = utilities(values, &g0, &p0);
    let mut best_u = truthful.clone();
    let mut coeffs = vec![1.0; n * nb];
    for &r in grid {
        if r == 1.0 {
            continue;
        }
        // One profile per (sample, bidder) at this multiplier.
        let profiles: Vec<BidProfile> = values
            .iter()
            .flat_map(|v| (0..nb).map(move |x| misreport_profile(v, x, r)))
            .collect();
        let (g, p) = forward_values(params, ctx, &profiles, mode)?;
        for s in 0..n {
            for x in 0..nb {
                let row = s * nb + x;
                let u = values[s].get(x) * g[row * nb + x] - p[row * nb + x];
                if u > best_u[row] {
                    best_u[row] = u;
                    coeffs[row] = r;
                }
            }
        }
    }
    let gains = best_u.iter().zip(&truthful).map(|(b, t)| b - t).collect();
    Ok(MisreportTable {
        num_bidders: nb,
        coeffs,
        gains,
    })
}

/// Per-bidder empirical regret: mean over samples of the clipped gain.
pub fn empirical_regret(table: &MisreportTable) -> Vec<f64> {
    let nb = table.num_bidders;
    let n = table.gains.len() / nb.max(1);
    let mut out = vec![0.0; nb];
    for s in 0..n {
        for x in 0..nb {
            out[x] += table.gains[s * nb + x].max(0.0);
        }
    }
    out.iter_mut().for_each(|r| *r /= n.max(1) as f64);
    out
}

/// `-revenue + sum_x lambda_x rgt_x + rho / 2 sum_x rgt_x^2`.
pub fn lagrangian_value(revenue: f64, regrets: &[f64], lambda: &[f64], rho: f64) -> f64 {
    let linear: f64 = regrets.iter().zip(lambda).map(|(r, l)| r * l).sum();
    let quad: f64 = regrets.iter().map(|r| r * r).sum();
    -revenue + linear + 0.5 * rho * quad
}

/// Graph handles of the differentiable training objective.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub loss: Var,
    /// `1 x 1` mean revenue.
    pub revenue: Var,
    /// `1 x B` regrets.
    pub regrets: Var,
}

/// Builds the soft-mode Lagrangian for a batch on `g` using parameter handles
/// from [`ModelParams::register`].
#[allow(clippy::too_many_arguments)]
pub fn build_lagrangian(
    g: &mut Graph,
    vars: &[Var],
    params: &ModelParams,
    ctx: &InstanceContext,
    values: &[BidProfile],
    table: &MisreportTable,
    lambda: &[f64],
    rho: f64,
    tau: f64,
) -> Result<LossVars> {
    let n = values.len();
    let nb = ctx.config().num_bidders();
    if lambda.len() != nb || table.coeffs.len() != n * nb {
        return Err(Error::Shape(
            "multipliers or misreport table do not match the batch".into(),
        ));
    }
    let mode = SortMode::Soft { tau };
    let arch = params.arch();
    let truth = build_forward(g, vars, arch, ctx, values, mode)?;

    let total = g.sum_all(truth.payments)?;
    let revenue = g.scale(total, 1.0 / n as f64)?;

    let value_mat = g.constant(Tensor::new(n, nb, values.iter().flat_map(BidProfile::flat).collect())?);
    let welfare = g.mul(value_mat, truth.expected_ctr)?;
    let u_truth = g.sub(welfare, truth.payments)?;

    let mis: Vec<BidProfile> = (0..n)
        .flat_map(|s| (0..nb).map(move |x| (s, x)))
        .map(|(s, x)| table.profile(values, s, x))
        .collect();
    let dev = build_forward(g, vars, arch, ctx, &mis, mode)?;
    // Row (s, x) holds the full outcome of sample s with x misreporting; only
    // column x matters, evaluated at x's true value.
    let mut mask = Tensor::zeros(n * nb, nb);
    let mut true_vals = Tensor::zeros(n * nb, nb);
    for s in 0..n {
        for x in 0..nb {
            mask.set(s * nb + x, x, 1.0);
            true_vals.set(s * nb + x, x, values[s].get(x));
        }
    }
    let true_vals = g.constant(true_vals);
    let mask = g.constant(mask);
    let dev_welfare = g.mul(true_vals, dev.expected_ctr)?;
    let dev_pay = g.mul(mask, dev.payments)?;
    let dev_u = g.sub(dev_welfare, dev_pay)?;
    let dev_u = g.row_sums(dev_u)?;
    let dev_u = g.reshape(dev_u, n, nb)?;
    let gain = g.sub(dev_u, u_truth)?;
    let gain = g.relu(gain)?;
    let regrets = g.col_sums(gain)?;
    let regrets = g.scale(regrets, 1.0 / n as f64)?;

    let lambda_row = g.constant(Tensor::row(lambda.to_vec()));
    let weighted = g.mul(regrets, lambda_row)?;
    let linear = g.sum_all(weighted)?;
    let sq = g.mul(regrets, regrets)?;
    let quad = g.sum_all(sq)?;
    let quad = g.scale(quad, 0.5 * rho)?;
    let neg_rev = g.scale(revenue, -1.0)?;
    let loss = g.add(neg_rev, linear)?;
    let loss = g.add(loss, quad)?;
    Ok(LossVars { loss, revenue, regrets })
}

/// Loss value and its parameter gradients.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    pub revenue: f64,
    pub regrets: Vec<f64>,
    pub grads: Vec<Tensor>,
}

#[allow(clippy::too_many_arguments)]
pub fn lagrangian_loss(
    params: &ModelParams,
    ctx: &InstanceContext,
    values: &[BidProfile],
    table: &MisreportTable,
    lambda: &[f64],
    rho: f64,
    tau: f64,
) -> Result<LossEval> {
    let mut g = Graph::new();
    let vars = params.register(&mut g, true);
    let lv = build_lagrangian(&mut g, &vars, params, ctx, values, table, lambda, rho, tau)?;
    g.backward(lv.loss)?;
    let grads = vars.iter().map(|&v| g.grad(v)).collect::<std::result::Result<_, _>>()?;
    Ok(LossEval {
        loss: g.value(lv.loss).data()[0],
        revenue: g.value(lv.revenue).data()[0],
        regrets: g.value(lv.regrets).data().to_vec(),
        grads,
    })
}

/// One adaptive-moment update.
pub fn adam_update(state: &mut TrainState, grads: &[Tensor], config: &TrainConfig) -> Result<()> {
    if grads.len() != state.params.tensors().len() {
        return Err(Error::Shape("gradient count does not match parameters".into()));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite gradient for parameter {} at iteration {}",
            state.params.arch().layout()[i].0,
            state.iteration
        )));
    }
    let adam = &mut state.adam;
    adam.steps += 1;
    let t = adam.steps as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, g), m), v) in state
        .params
        .tensors_mut()
        .iter_mut()
        .zip(grads)
        .zip(adam.m.iter_mut())
        .zip(adam.v.iter_mut())
    {
        for i in 0..p.len() {
            let gi = g.data()[i];
            let mi = b1 * m.data()[i] + (1.0 - b1) * gi;
            let vi = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            p.data_mut()[i] -= config.learning_rate * (mi / c1) / ((vi / c2).sqrt() + config.epsilon);
        }
    }
    Ok(())
}

/// Summary of one optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub iteration: usize,
    pub loss: f64,
    pub revenue: f64,
    pub mean_regret: f64,
    pub lambda_norm: f64,
    pub rho: f64,
    pub tau: f64,
    /// Set on iterations where the multipliers were updated.
    pub lambda_updated: bool,
}

/// Misreport search, loss gradient and parameter update on one minibatch.
pub fn train_step(
    state: &mut TrainState,
    ctx: &InstanceContext,
    batch: &[BidProfile],
    config: &TrainConfig,
) -> Result<StepLog> {
    let tau = config.tau.at(state.iteration, config.iterations);
    let rho = config.rho.at(state.iteration);
    let mode = SortMode::Soft { tau };
    let table = best_misreports(&state.params, ctx, batch, &config.misreport_grid, mode)?;
    let eval = lagrangian_loss(&state.params, ctx, batch, &table, &state.lambda, rho, tau)?;
    if !eval.loss.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss at iteration {}",
            state.iteration
        )));
    }
    adam_update(state, &eval.grads, config)?;
    state.iteration += 1;
    Ok(StepLog {
        iteration: state.iteration,
        loss: eval.loss,
        revenue: eval.revenue,
        mean_regret: eval.regrets.iter().sum::<f64>() / eval.regrets.len() as f64,
        lambda_norm: state.lambda.iter().map(|l| l * l).sum::<f64>().sqrt(),
        rho,
        tau,
        lambda_updated: false,
    })
}

/// `lambda += rho * regrets` when the iteration count is a multiple of the
/// period; returns whether an update happened.
pub fn update_lambda(state: &mut TrainState, regrets: &[f64], rho: f64, period: usize) -> bool {
    if period == 0 || !state.iteration.is_multiple_of(period) {
        return false;
    }
    for (l, r) in state.lambda.iter_mut().zip(regrets) {
        *l += rho * r;
    }
    true
}

/// Regrets of the current parameters on a batch, with a fresh misreport search.
pub fn batch_regrets(
    params: &ModelParams,
    ctx: &InstanceContext,
    batch: &[BidProfile],
    grid: &[f64],
    tau: f64,
) -> Result<Vec<f64>> {
    let table = best_misreports(params, ctx, batch, grid, SortMode::Soft { tau })?;
    Ok(empirical_regret(&table))
}

/// Train step followed by the periodic multiplier update on the same batch.
pub fn train_iteration(
    state: &mut TrainState,
    ctx: &InstanceContext,
    batch: &[BidProfile],
    config: &TrainConfig,
) -> Result<StepLog> {
    let mut log = train_step(state, ctx, batch, config)?;
    if state.iteration.is_multiple_of(config.lambda_period) {
        let regrets = batch_regrets(&state.params, ctx, batch, &config.misreport_grid, log.tau)?;
        log.lambda_updated = update_lambda(state, &regrets, log.rho, config.lambda_period);
        log.lambda_norm = state.lambda.iter().map(|l| l * l).sum::<f64>().sqrt();
    }
    Ok(log)
}

/// Seeded minibatch order: reshuffles the dataset at every epoch.
pub struct MinibatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl MinibatchSampler {
    pub fn new(len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        Self { rng, order, pos: 0 }
    }

    pub fn next_batch(&mut self, data: &[BidProfile], size: usize) -> Vec<BidProfile> {
        (0..size).map(|_| data[self.next_index()].clone()).collect()
    }

    /// Advances past one batch without materializing it.
    pub fn skip(&mut self, size: usize) {
        for _ in 0..size {
            self.next_index();
        }
    }

    fn next_index(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub log: Vec<StepLog>,
}

/// Runs `config.iterations` iterations from `params`. `on_step` sees every log
/// entry and the state right after it.
pub fn train(
    params: ModelParams,
    ctx: &InstanceContext,
    dataset: &[BidProfile],
    config: &TrainConfig,
    on_step: impl FnMut(&StepLog, &TrainState),
) -> Result<TrainOutcome> {
    let state = TrainState::new(params, ctx.config().num_bidders());
    resume(state, ctx, dataset, config, on_step)
}

/// Continues from `state` until `config.iterations` iterations are done. The
/// minibatch sequence is replayed up to `state.iteration`, so a resumed run
/// matches an uninterrupted one.
pub fn resume(
    mut state: TrainState,
    ctx: &InstanceContext,
    dataset: &[BidProfile],
    config: &TrainConfig,
    mut on_step: impl FnMut(&StepLog, &TrainState),
) -> Result<TrainOutcome> {
    config.validate()?;
    if state.lambda.len() != ctx.config().num_bidders() {
        return Err(Error::Shape(format!(
            "{} multipliers for {} bidders",
            state.lambda.len(),
            ctx.config().num_bidders()
        )));
    }
    if dataset.is_empty() && config.iterations > state.iteration {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut sampler = MinibatchSampler::new(dataset.len(), config.seed);
    for _ in 0..state.iteration.min(config.iterations) {
        sampler.skip(config.batch_size);
    }
    let mut log = Vec::with_capacity(config.iterations.saturating_sub(state.iteration));
    while state.iteration < config.iterations {
        let batch = sampler.next_batch(dataset, config.batch_size);
        let entry = train_iteration(&mut state, ctx, &batch, config)?;
        on_step(&entry, &state);
        log.push(entry);
    }
    Ok(TrainOutcome { state, log })
}
