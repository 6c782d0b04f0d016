//! Welfare-maximizing joint auction with Clarke pivot payments charged to
//! each brand and store individually.

use crate::assignment::{assignment_value, optimal_assignment};
use crate::{
    bundle_bids, enumerate_bundles, AuctionConfig, BidProfile, BundleAllocation, BundleIndex, Outcome, Result,
};

#[derive(Debug, Clone, PartialEq)]
pub struct VcgOutcome {
    pub alloc: BundleAllocation,
    /// Winning bundle of each slot.
    pub winners: Vec<usize>,
    /// `sum_k ctr_k * e_{winner(k)}` under the reported bids.
    pub welfare: f64,
    /// Flat payments, brands then stores.
    pub payments: Vec<f64>,
}

pub fn vcg_allocate(config: &AuctionConfig, bids: &BidProfile) -> Result<BundleAllocation> {
    let idx = enumerate_bundles(config)?;
    let e = bundle_bids(bids, &idx)?;
    let winners = optimal_assignment(&e, config.ctrs())?;
    BundleAllocation::from_winners(idx.len(), &winners)
}

pub fn vcg_payments(config: &AuctionConfig, bids: &BidProfile) -> Result<Vec<f64>> {
    Ok(vcg_outcome(config, bids)?.payments)
}

pub fn vcg_outcome(config: &AuctionConfig, bids: &BidProfile) -> Result<VcgOutcome> {
    let idx = enumerate_bundles(config)?;
    vcg_with_index(config, &idx, bids)
}

pub(crate) fn vcg_with_index(config: &AuctionConfig, idx: &BundleIndex, bids: &BidProfile) -> Result<VcgOutcome> {
    bids.check_shape(config)?;
    bids.validate()?;
    let ctrs = config.ctrs();
    let e = bundle_bids(bids, idx)?;
    let winners = optimal_assignment(&e, ctrs)?;
    let welfare = assignment_value(&e, ctrs, &winners);

    let mut payments = vec![0.0; config.num_bidders()];
    for (x, pay) in payments.iter_mut().enumerate() {
        if !winners.iter().any(|&c| idx.contains(c, x)) {
            continue;
        }
        let own = bids.get(x);
        let others_present: f64 = winners
            .iter()
            .zip(ctrs)
            .map(|(&c, a)| a * (e[c] - if idx.contains(c, x) { own } else { 0.0 }))
            .sum();
        // Best welfare the others could reach if x bid nothing. Every bundle
        // stays available, so partners of x still count.
        let without: Vec<f64> = (0..idx.len())
            .map(|c| if idx.contains(c, x) { e[c] - own } else { e[c] })
            .collect();
        let alt = optimal_assignment(&without, ctrs)?;
        let others_absent = assignment_value(&without, ctrs, &alt);
        // Nonnegative up to rounding: `alt` is optimal for the others.
        *pay = (others_absent - others_present).max(0.0);
    }

    Ok(VcgOutcome {
        alloc: BundleAllocation::from_winners(idx.len(), &winners)?,
        winners,
        welfare,
        payments,
    })
}

/// Full [`Outcome`] for the reported bids.
pub fn vcg_auction(config: &AuctionConfig, idx: &BundleIndex, bids: &BidProfile) -> Result<Outcome> {
    let v = vcg_with_index(config, idx, bids)?;
    Outcome::new(config, idx, v.alloc, v.payments, bids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::AuctionConfig;

    fn diagonal() -> AuctionConfig {
        AuctionConfig::new(2, 2, vec![0.6], vec![vec![true, false], vec![false, true]]).unwrap()
    }

    #[test]
    fn clarke_pivot_example() {
        let bids = BidProfile::new(vec![0.3, 0.2], vec![0.5, 0.3]).unwrap();
        let out = vcg_outcome(&diagonal(), &bids).unwrap();
        assert_eq!(out.winners, vec![0]);
        assert!(out.payments[0].abs() < 1e-12, "brand 1 pays {}", out.payments[0]);
        assert!(
            (out.payments[2] - 0.12).abs() < 1e-12,
            "store 1 pays {}",
            out.payments[2]
        );
        assert_eq!(out.payments[1], 0.0);
        assert_eq!(out.payments[3], 0.0);
    }

    #[test]
    fn best_bundle_wins_single_slot() {
        let c = AuctionConfig::new(1, 2, vec![0.6], vec![vec![true, true]]).unwrap();
        let bids = BidProfile::new(vec![0.3], vec![0.5, 0.2]).unwrap();
        let s = vcg_allocate(&c, &bids).unwrap();
        assert_eq!(s.winner(0), Some(0));
    }

    #[test]
    fn no_competitor_means_no_payment() {
        // Brand 0 sits in every bundle; without its bid the stores alone still
        // compete, and the winning store faces the other one.
        let c = AuctionConfig::new(1, 2, vec![0.6], vec![vec![true, true]]).unwrap();
        let bids = BidProfile::new(vec![0.4], vec![0.5, 0.5]).unwrap();
        let out = vcg_outcome(&c, &bids).unwrap();
        assert_eq!(out.winners, vec![0]);
        // Brand: others reach 0.6*0.5 either way.
        assert_eq!(out.payments[0], 0.0);
        assert!((out.payments[1] - 0.6 * 0.5).abs() < 1e-12);
    }

    #[test]
    fn payments_within_value() {
        let c = crate::Setting::D.config();
        let idx = enumerate_bundles(&c).unwrap();
        let bids = BidProfile::new(vec![0.9, 0.1, 0.5, 0.33], vec![0.2, 0.8, 0.7, 0.05]).unwrap();
        let out = vcg_auction(&c, &idx, &bids).unwrap();
        assert!(out.utilities.iter().all(|&u| u >= -1e-12));
        assert!(out.payments.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn sparse_graph_stays_truthful() {
        // Brand 1 pairs with every store and can win both slots. Dropping its
        // bundles outright would undercharge it; zeroing its bid does not.
        let c = AuctionConfig::new(
            2,
            3,
            vec![0.6245, 0.5005],
            vec![vec![true, true, false], vec![true, true, true]],
        )
        .unwrap();
        let bids = BidProfile::new(vec![0.5076, 0.4557], vec![0.8292, 0.0140, 0.4817]).unwrap();
        let idx = enumerate_bundles(&c).unwrap();
        let truth = vcg_auction(&c, &idx, &bids).unwrap();
        for x in 0..c.num_bidders() {
            let v = bids.get(x);
            for step in 0..=29 {
                let mut lie = bids.clone();
                lie.set(x, v * step as f64 * 0.05);
                let out = vcg_auction(&c, &idx, &lie).unwrap();
                assert!(
                    out.utility_of(x, v) <= truth.utility_of(x, v) + 1e-9,
                    "bidder {x} at {step}"
                );
            }
        }
    }
}
