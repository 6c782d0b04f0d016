//! Test-time auditing of mechanisms: revenue, welfare and regret on held-out
//! profiles, plus the determinism, IR and anonymity checks.

use std::borrow::Cow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{forward, forward_values, InstanceContext, ModelParams, SortMode};
use crate::stats::{mean_se, MeanSe};
use crate::trainer::misreport_profile;
use crate::vcg::vcg_auction;
use crate::{enumerate_bundles, hard_violation, AuctionConfig, BidProfile, Error, Outcome, Result};

/// IR tolerance on truthful utilities.
pub const IR_TOL: f64 = 1e-12;

/// Anything that maps reported profiles on an instance to outcomes.
pub trait Mechanism {
    fn name(&self) -> &str;

    fn run(&self, config: &AuctionConfig, bids: &[BidProfile]) -> Result<Vec<Outcome>>;

    /// Row-major `N x B` expected CTRs and payments.
    fn values(&self, config: &AuctionConfig, bids: &[BidProfile]) -> Result<(Vec<f64>, Vec<f64>)> {
        let outs = self.run(config, bids)?;
        let mut ctr = Vec::new();
        let mut pay = Vec::new();
        for o in outs {
            ctr.extend(o.expected_ctr);
            pay.extend(o.payments);
        }
        Ok((ctr, pay))
    }
}

/// A trained network used as a mechanism.
#[derive(Debug, Clone)]
pub struct LearnedMechanism {
    pub params: ModelParams,
    pub mode: SortMode,
    ctx: Option<InstanceContext>,
}

impl LearnedMechanism {
    pub fn new(params: ModelParams, mode: SortMode) -> Self {
        Self {
            params,
            mode,
            ctx: None,
        }
    }

    /// Caches the constant matrices for `config` so repeated calls skip rebuilding them.
    pub fn with_instance(mut self, config: &AuctionConfig) -> Result<Self> {
        self.ctx = Some(InstanceContext::new(config, self.params.arch().width)?);
        Ok(self)
    }

    fn context(&self, config: &AuctionConfig) -> Result<Cow<'_, InstanceContext>> {
        match &self.ctx {
            Some(ctx) if ctx.config() == config => Ok(Cow::Borrowed(ctx)),
            _ => Ok(Cow::Owned(InstanceContext::new(config, self.params.arch().width)?)),
        }
    }
}

impl Mechanism for LearnedMechanism {
    fn name(&self) -> &str {
        "JTransNet"
    }

    fn run(&self, config: &AuctionConfig, bids: &[BidProfile]) -> Result<Vec<Outcome>> {
        let ctx = self.context(config)?;
        forward(&self.params, &ctx, bids, self.mode)
    }

    fn values(&self, config: &AuctionConfig, bids: &[BidProfile]) -> Result<(Vec<f64>, Vec<f64>)> {
        let ctx = self.context(config)?;
        forward_values(&self.params, &ctx, bids, self.mode)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct VcgMechanism;

impl Mechanism for VcgMechanism {
    fn name(&self) -> &str {
        "VCG"
    }

    fn run(&self, config: &AuctionConfig, bids: &[BidProfile]) -> Result<Vec<Outcome>> {
        let idx = enumerate_bundles(config)?;
        bids.iter().map(|b| vcg_auction(config, &idx, b)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mechanism: String,
    pub samples: usize,
    pub revenue: MeanSe,
    pub welfare: MeanSe,
    /// Mean over bidders of the per-bidder empirical regret.
    pub regret: f64,
    pub per_bidder_regret: Vec<f64>,
    pub ir_violations: usize,
    pub anonymity_max_dev: Option<f64>,
    pub determinism_pass: bool,
    /// Revenue of every test profile, for paired comparisons.
    pub per_sample_revenue: Vec<f64>,
}

/// Revenue, welfare, regret over `grid`, IR and determinism on `test_set`.
pub fn evaluate(
    mech: &dyn Mechanism,
    config: &AuctionConfig,
    test_set: &[BidProfile],
    grid: &[f64],
) -> Result<EvalReport> {
    if test_set.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    for p in test_set {
        p.check_shape(config)?;
    }
    let outcomes = mech.run(config, test_set)?;
    let determinism = check_deterministic(&outcomes);
    let ir_violations = check_ir(&outcomes, test_set)?;
    let per_sample_revenue: Vec<f64> = outcomes.iter().map(Outcome::revenue).collect();
    let welfare: Vec<f64> = outcomes
        .iter()
        .zip(test_set)
        .map(|(o, v)| v.flat().iter().zip(&o.expected_ctr).map(|(v, g)| v * g).sum())
        .collect();
    let per_bidder_regret = regret_over_grid(mech, config, test_set, &outcomes, grid)?;
    let regret = per_bidder_regret.iter().sum::<f64>() / per_bidder_regret.len() as f64;
    Ok(EvalReport {
        mechanism: mech.name().to_string(),
        samples: test_set.len(),
        revenue: mean_se(&per_sample_revenue),
        welfare: mean_se(&welfare),
        regret,
        per_bidder_regret,
        ir_violations,
        anonymity_max_dev: None,
        determinism_pass: determinism.pass,
        per_sample_revenue,
    })
}

/// Per-bidder mean over samples of `max(0, max_r u(r v_x) - u(v_x))`.
pub fn regret_over_grid(
    mech: &dyn Mechanism,
    config: &AuctionConfig,
    values: &[BidProfile],
    truthful: &[Outcome],
    grid: &[f64],
) -> Result<Vec<f64>> {
    let nb = config.num_bidders();
    let n = values.len();
    let mut best_gain = vec![0.0f64; n * nb];
    for &r in grid {
        if r == 1.0 {
            continue;
        }
        let profiles: Vec<BidProfile> = values
            .iter()
            .flat_map(|v| (0..nb).map(move |x| misreport_profile(v, x, r)))
            .collect();
        let (g, p) = mech.values(config, &profiles)?;
        for s in 0..n {
            for x in 0..nb {
                let row = s * nb + x;
                let u = values[s].get(x) * g[row * nb + x] - p[row * nb + x];
                let gain = u - truthful[s].utility_of(x, values[s].get(x));
                best_gain[row] = best_gain[row].max(gain);
            }
        }
    }
    let mut out = vec![0.0; nb];
    for s in 0..n {
        for x in 0..nb {
            out[x] += best_gain[s * nb + x];
        }
    }
    Ok(out.into_iter().map(|v| v / n as f64).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeterminismReport {
    pub pass: bool,
    /// `(outcome index, reason)` for every failing outcome.
    pub failures: Vec<(usize, String)>,
}

/// Every allocation binary with one bundle per slot and at most one slot per bundle.
pub fn check_deterministic(outcomes: &[Outcome]) -> DeterminismReport {
    let failures: Vec<(usize, String)> = outcomes
        .iter()
        .enumerate()
        .filter_map(|(i, o)| {
            let s = &o.alloc_bundle;
            hard_violation(s.num_bundles(), s.num_slots(), s.weights()).map(|why| (i, why))
        })
        .collect();
    DeterminismReport {
        pass: failures.is_empty(),
        failures,
    }
}

/// Number of (profile, bidder) pairs with truthful utility below `-IR_TOL`.
pub fn check_ir(outcomes: &[Outcome], values: &[BidProfile]) -> Result<usize> {
    if outcomes.len() != values.len() {
        return Err(Error::Shape(format!(
            "{} outcomes for {} profiles",
            outcomes.len(),
            values.len()
        )));
    }
    Ok(outcomes
        .iter()
        .zip(values)
        .map(|(o, v)| o.utilities_at(v).into_iter().filter(|&u| u < -IR_TOL).count())
        .sum())
}

/// Runs `num_permutations` random brand/store relabellings, each on a profile
/// drawn from `samples`, and returns the largest deviation between the
/// relabelled outcome and the outcome of the relabelled input, over payments,
/// expected CTRs and bundle allocation rows.
pub fn check_anonymity(
    mech: &dyn Mechanism,
    config: &AuctionConfig,
    samples: &[BidProfile],
    num_permutations: usize,
    seed: u64,
) -> Result<f64> {
    if num_permutations == 0 {
        return Err(Error::InvalidArgument("at least one permutation is needed".into()));
    }
    if samples.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, n) = (config.num_brands(), config.num_stores());
    let mut worst: f64 = 0.0;
    for t in 0..num_permutations {
        let mut bp: Vec<usize> = (0..m).collect();
        let mut sp: Vec<usize> = (0..n).collect();
        bp.shuffle(&mut rng);
        sp.shuffle(&mut rng);
        let profile = &samples[t % samples.len()];
        worst = worst.max(permutation_deviation(mech, config, profile, &bp, &sp)?);
    }
    Ok(worst)
}

/// Deviation for a single relabelling `(brand_perm, store_perm)`.
pub fn permutation_deviation(
    mech: &dyn Mechanism,
    config: &AuctionConfig,
    profile: &BidProfile,
    brand_perm: &[usize],
    store_perm: &[usize],
) -> Result<f64> {
    let pconfig = config.permuted(brand_perm, store_perm)?;
    let pprofile = profile.permuted(brand_perm, store_perm);
    let base = mech.run(config, std::slice::from_ref(profile))?.remove(0);
    let moved = mech.run(&pconfig, std::slice::from_ref(&pprofile))?.remove(0);
    let m = config.num_brands();
    // New bidder x corresponds to old bidder `old_of(x)`.
    let old_of = |x: usize| {
        if x < m {
            brand_perm[x]
        } else {
            m + store_perm[x - m]
        }
    };
    let mut dev: f64 = 0.0;
    for x in 0..config.num_bidders() {
        let o = old_of(x);
        dev = dev
            .max((moved.payments[x] - base.payments[o]).abs())
            .max((moved.expected_ctr[x] - base.expected_ctr[o]).abs());
    }
    let idx = enumerate_bundles(config)?;
    let pidx = enumerate_bundles(&pconfig)?;
    for (c, &(i, j)) in pidx.bundles().iter().enumerate() {
        let oc = idx
            .position(brand_perm[i], store_perm[j])
            .ok_or_else(|| Error::InvalidInstance("relabelled bundle missing from the original graph".into()))?;
        for k in 0..config.num_slots() {
            dev = dev.max((moved.alloc_bundle.get(c, k) - base.alloc_bundle.get(oc, k)).abs());
        }
    }
    Ok(dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ArchConfig;
    use crate::presets::misreport_grid;
    use crate::{BundleAllocation, Setting};

    /// Hands slot 1 to the first bundle and charges `factor` times its CTR.
    struct Planted {
        factor: f64,
    }

    impl Mechanism for Planted {
        fn name(&self) -> &str {
            "planted"
        }

        fn run(&self, config: &AuctionConfig, bids: &[BidProfile]) -> Result<Vec<Outcome>> {
            let idx = enumerate_bundles(config)?;
            let winners: Vec<usize> = (0..config.num_slots()).collect();
            bids.iter()
                .map(|b| {
                    let alloc = BundleAllocation::from_winners(idx.len(), &winners)?;
                    let pay = vec![self.factor; config.num_bidders()];
                    Outcome::new(config, &idx, alloc, pay, b)
                })
                .collect()
        }
    }

    fn profiles(config: &AuctionConfig, n: usize) -> Vec<BidProfile> {
        crate::data::generate_profiles(config, &Default::default(), n, 5).unwrap()
    }

    #[test]
    fn zero_payments_give_zero_revenue() {
        let config = Setting::A.config();
        let r = evaluate(&Planted { factor: 0.0 }, &config, &profiles(&config, 20), &[0.5, 1.0]).unwrap();
        assert_eq!(r.revenue.mean, 0.0);
        assert!(r.determinism_pass);
        assert_eq!(r.ir_violations, 0);
    }

    #[test]
    fn planted_overcharge_counts_ir_violations() {
        let config = Setting::A.config();
        let test = profiles(&config, 10);
        let outs = Planted { factor: 5.0 }.run(&config, &test).unwrap();
        assert_eq!(check_ir(&outs, &test).unwrap(), 10 * config.num_bidders());
    }

    #[test]
    fn planted_index_bias_breaks_anonymity() {
        let config = Setting::A.config();
        let dev = check_anonymity(&Planted { factor: 0.0 }, &config, &profiles(&config, 5), 20, 1).unwrap();
        assert!(dev > 0.5);
        let ident =
            permutation_deviation(&VcgMechanism, &config, &profiles(&config, 1)[0], &[0, 1, 2, 3], &[0, 1]).unwrap();
        assert_eq!(ident, 0.0);
    }

    #[test]
    fn empty_test_set_is_rejected() {
        let config = Setting::A.config();
        assert!(matches!(
            evaluate(&VcgMechanism, &config, &[], &[1.0]),
            Err(Error::EmptyTestSet)
        ));
    }

    #[test]
    fn vcg_has_no_regret() {
        let config = Setting::B.config();
        let r = evaluate(&VcgMechanism, &config, &profiles(&config, 40), &misreport_grid()).unwrap();
        assert!(r.regret <= 1e-9, "{}", r.regret);
        assert_eq!(r.ir_violations, 0);
        assert!(r.revenue.mean <= r.welfare.mean + 1e-12);
    }

    #[test]
    fn learned_mechanism_is_deterministic_and_ir() {
        let config = Setting::D.config();
        let arch = ArchConfig {
            depth: 1,
            width: 8,
            heads: 2,
            ff_width: 16,
            tau: 1.0,
        };
        let mech = LearnedMechanism::new(ModelParams::init(arch, 3).unwrap(), SortMode::Hard)
            .with_instance(&config)
            .unwrap();
        let test = profiles(&config, 30);
        let r = evaluate(&mech, &config, &test, &[0.0, 0.5, 1.2]).unwrap();
        assert!(r.determinism_pass);
        assert_eq!(r.ir_violations, 0);
        assert!(r.per_bidder_regret.iter().all(|&g| g >= 0.0));
        let dev = check_anonymity(&mech, &config, &test, 10, 2).unwrap();
        assert!(dev < 1e-6, "{dev}");
    }

    #[test]
    fn determinism_flags_fractional_and_doubled_columns() {
        let config = Setting::A.config();
        let test = profiles(&config, 1);
        let mut outs = VcgMechanism.run(&config, &test).unwrap();
        assert!(check_deterministic(&outs).pass);
        let idx = enumerate_bundles(&config).unwrap();
        let mut w = vec![0.0; idx.len()];
        w[0] = 0.5;
        w[1] = 0.5;
        let soft = BundleAllocation::new(idx.len(), 1, w, crate::AllocationMode::Soft).unwrap();
        outs[0] = Outcome::new(&config, &idx, soft, vec![0.0; 6], &test[0]).unwrap();
        let rep = check_deterministic(&outs);
        assert!(!rep.pass);
        assert_eq!(rep.failures[0].0, 0);
        assert!(rep.failures[0].1.contains("(0, 0)"));
        assert!(hard_violation(3, 1, &[1.0, 1.0, 0.0]).is_some());
    }
}
