//! Joint ad auction domain model.
//!
//! Every ad slot is won by a *bundle*: one brand plus one store that are allowed
//! to appear together by the relation matrix. Bidders are numbered brands
//! first (`0..m`) and then stores (`m..m+n`) whenever a flat index is used.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Structural checks on allocation matrices use this tolerance.
pub const STRUCT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Bidder {
    Brand(usize),
    Store(usize),
}

impl Bidder {
    pub fn flat(self, num_brands: usize) -> usize {
        match self {
            Bidder::Brand(i) => i,
            Bidder::Store(j) => num_brands + j,
        }
    }

    pub fn from_flat(index: usize, num_brands: usize) -> Self {
        if index < num_brands {
            Bidder::Brand(index)
        } else {
            Bidder::Store(index - num_brands)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawConfig", into = "RawConfig")]
pub struct AuctionConfig {
    num_brands: usize,
    num_stores: usize,
    ctrs: Vec<f64>,
    relation: Vec<Vec<bool>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    num_brands: usize,
    num_stores: usize,
    ctrs: Vec<f64>,
    relation: Vec<Vec<u8>>,
}

impl TryFrom<RawConfig> for AuctionConfig {
    type Error = Error;

    fn try_from(raw: RawConfig) -> Result<Self> {
        if raw.relation.iter().flatten().any(|&v| v > 1) {
            return Err(Error::InvalidInstance("relation entries must be 0 or 1".into()));
        }
        let relation = raw
            .relation
            .iter()
            .map(|row| row.iter().map(|&v| v == 1).collect())
            .collect();
        AuctionConfig::new(raw.num_brands, raw.num_stores, raw.ctrs, relation)
    }
}

impl From<AuctionConfig> for RawConfig {
    fn from(c: AuctionConfig) -> Self {
        RawConfig {
            num_brands: c.num_brands,
            num_stores: c.num_stores,
            ctrs: c.ctrs,
            relation: c
                .relation
                .iter()
                .map(|row| row.iter().map(|&b| u8::from(b)).collect())
                .collect(),
        }
    }
}

impl AuctionConfig {
    /// Validates `1 > ctr_1 >= ... >= ctr_K > 0`, the `m x n` relation shape, and
    /// that the relation admits more bundles than slots.
    pub fn new(num_brands: usize, num_stores: usize, ctrs: Vec<f64>, relation: Vec<Vec<bool>>) -> Result<Self> {
        if num_brands == 0 || num_stores == 0 || ctrs.is_empty() {
            return Err(Error::InvalidInstance(
                "need at least one brand, one store and one slot".into(),
            ));
        }
        if relation.len() != num_brands || relation.iter().any(|r| r.len() != num_stores) {
            return Err(Error::InvalidInstance(format!(
                "relation must be {num_brands}x{num_stores}"
            )));
        }
        if !ctrs.iter().all(|&a| a > 0.0 && a < 1.0) {
            return Err(Error::InvalidInstance("click-through rates must lie in (0, 1)".into()));
        }
        if ctrs.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidInstance(
                "click-through rates must be non-increasing".into(),
            ));
        }
        let config = Self {
            num_brands,
            num_stores,
            ctrs,
            relation,
        };
        let c = config.num_bundles();
        if c <= config.num_slots() {
            return Err(Error::InvalidInstance(format!(
                "{c} bundles for {} slots; need more bundles than slots",
                config.num_slots()
            )));
        }
        Ok(config)
    }

    /// Every brand may pair with every store.
    pub fn full(num_brands: usize, num_stores: usize, ctrs: Vec<f64>) -> Result<Self> {
        Self::new(num_brands, num_stores, ctrs, vec![vec![true; num_stores]; num_brands])
    }

    pub fn num_brands(&self) -> usize {
        self.num_brands
    }

    pub fn num_stores(&self) -> usize {
        self.num_stores
    }

    pub fn num_bidders(&self) -> usize {
        self.num_brands + self.num_stores
    }

    pub fn num_slots(&self) -> usize {
        self.ctrs.len()
    }

    pub fn ctrs(&self) -> &[f64] {
        &self.ctrs
    }

    pub fn relation(&self) -> &[Vec<bool>] {
        &self.relation
    }

    pub fn num_bundles(&self) -> usize {
        self.relation.iter().flatten().filter(|&&b| b).count()
    }

    /// The instance seen after relabelling: new brand `i` is old brand
    /// `brand_perm[i]`, new store `j` is old store `store_perm[j]`.
    pub fn permuted(&self, brand_perm: &[usize], store_perm: &[usize]) -> Result<Self> {
        check_perm(brand_perm, self.num_brands)?;
        check_perm(store_perm, self.num_stores)?;
        let relation = brand_perm
            .iter()
            .map(|&i| store_perm.iter().map(|&j| self.relation[i][j]).collect())
            .collect();
        Self::new(self.num_brands, self.num_stores, self.ctrs.clone(), relation)
    }
}

fn check_perm(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::InvalidArgument(format!(
            "permutation of length {} for {n} items",
            perm.len()
        )));
    }
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::InvalidArgument(format!("{perm:?} is not a permutation")));
        }
    }
    Ok(())
}

/// Bundles in canonical row-major order of the relation matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleIndex {
    bundles: Vec<(usize, usize)>,
    by_brand: Vec<Vec<usize>>,
    by_store: Vec<Vec<usize>>,
}

pub fn enumerate_bundles(config: &AuctionConfig) -> Result<BundleIndex> {
    let mut bundles = Vec::new();
    let mut by_brand = vec![Vec::new(); config.num_brands];
    let mut by_store = vec![Vec::new(); config.num_stores];
    for (i, row) in config.relation.iter().enumerate() {
        for (j, &linked) in row.iter().enumerate() {
            if linked {
                by_brand[i].push(bundles.len());
                by_store[j].push(bundles.len());
                bundles.push((i, j));
            }
        }
    }
    if bundles.len() <= config.num_slots() {
        return Err(Error::InvalidInstance(format!(
            "{} bundles for {} slots",
            bundles.len(),
            config.num_slots()
        )));
    }
    Ok(BundleIndex {
        bundles,
        by_brand,
        by_store,
    })
}

impl BundleIndex {
    pub fn len(&self) -> usize {
        self.bundles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bundles.is_empty()
    }

    pub fn bundles(&self) -> &[(usize, usize)] {
        &self.bundles
    }

    pub fn bundle(&self, c: usize) -> (usize, usize) {
        self.bundles[c]
    }

    pub fn by_brand(&self, i: usize) -> &[usize] {
        &self.by_brand[i]
    }

    pub fn by_store(&self, j: usize) -> &[usize] {
        &self.by_store[j]
    }

    pub fn num_brands(&self) -> usize {
        self.by_brand.len()
    }

    pub fn num_stores(&self) -> usize {
        self.by_store.len()
    }

    /// Bundles containing the flat-indexed bidder.
    pub fn containing(&self, bidder: usize) -> &[usize] {
        let m = self.by_brand.len();
        if bidder < m {
            &self.by_brand[bidder]
        } else {
            &self.by_store[bidder - m]
        }
    }

    pub fn contains(&self, c: usize, bidder: usize) -> bool {
        let (i, j) = self.bundles[c];
        let m = self.by_brand.len();
        bidder == i || bidder == m + j
    }

    /// Canonical position of the bundle `(brand, store)`, if it exists.
    pub fn position(&self, brand: usize, store: usize) -> Option<usize> {
        self.by_brand
            .get(brand)?
            .iter()
            .copied()
            .find(|&c| self.bundles[c].1 == store)
    }
}

/// Brand and store bids (or values), in currency per click.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidProfile {
    pub brands: Vec<f64>,
    pub stores: Vec<f64>,
}

impl BidProfile {
    pub fn new(brands: Vec<f64>, stores: Vec<f64>) -> Result<Self> {
        let profile = Self { brands, stores };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .brands
            .iter()
            .chain(&self.stores)
            .all(|v| v.is_finite() && *v >= 0.0)
        {
            Ok(())
        } else {
            Err(Error::InvalidArgument("bids must be finite and non-negative".into()))
        }
    }

    pub fn check_shape(&self, config: &AuctionConfig) -> Result<()> {
        if self.brands.len() != config.num_brands() || self.stores.len() != config.num_stores() {
            return Err(Error::Shape(format!(
                "profile has {} brands and {} stores, instance has {} and {}",
                self.brands.len(),
                self.stores.len(),
                config.num_brands(),
                config.num_stores()
            )));
        }
        Ok(())
    }

    pub fn num_bidders(&self) -> usize {
        self.brands.len() + self.stores.len()
    }

    /// Flat bidder lookup: brands first, then stores.
    pub fn get(&self, bidder: usize) -> f64 {
        let m = self.brands.len();
        if bidder < m {
            self.brands[bidder]
        } else {
            self.stores[bidder - m]
        }
    }

    pub fn set(&mut self, bidder: usize, value: f64) {
        let m = self.brands.len();
        if bidder < m {
            self.brands[bidder] = value;
        } else {
            self.stores[bidder - m] = value;
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.brands.iter().chain(&self.stores).copied().collect()
    }

    /// Relabelled profile consistent with [`AuctionConfig::permuted`].
    pub fn permuted(&self, brand_perm: &[usize], store_perm: &[usize]) -> Self {
        Self {
            brands: brand_perm.iter().map(|&i| self.brands[i]).collect(),
            stores: store_perm.iter().map(|&j| self.stores[j]).collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            brands: self.brands.iter().map(|v| v * factor).collect(),
            stores: self.stores.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Bundle bids `e_c = b_brand + b_store` in canonical bundle order.
pub fn bundle_bids(bids: &BidProfile, idx: &BundleIndex) -> Result<Vec<f64>> {
    if bids.brands.len() != idx.num_brands() || bids.stores.len() != idx.num_stores() {
        return Err(Error::Shape("bid profile does not match bundle index".into()));
    }
    Ok(idx
        .bundles()
        .iter()
        .map(|&(i, j)| bids.brands[i] + bids.stores[j])
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AllocationMode {
    Soft,
    Hard,
}

/// `C x K` bundle-to-slot allocation weights, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleAllocation {
    num_bundles: usize,
    num_slots: usize,
    weights: Vec<f64>,
    mode: AllocationMode,
}

impl BundleAllocation {
    /// Builds and validates an allocation. Hard mode requires a 0/1 matrix with unit
    /// column sums and row sums at most one; soft mode requires entries in `[0, 1]`
    /// and unit column sums.
    pub fn new(num_bundles: usize, num_slots: usize, weights: Vec<f64>, mode: AllocationMode) -> Result<Self> {
        let alloc = Self {
            num_bundles,
            num_slots,
            weights,
            mode,
        };
        if alloc.weights.len() != num_bundles * num_slots {
            return Err(Error::Shape(format!(
                "{} weights for a {num_bundles}x{num_slots} allocation",
                alloc.weights.len()
            )));
        }
        alloc.validate()?;
        Ok(alloc)
    }

    /// Hard allocation where slot `k` goes to bundle `winners[k]`.
    pub fn from_winners(num_bundles: usize, winners: &[usize]) -> Result<Self> {
        let k = winners.len();
        let mut weights = vec![0.0; num_bundles * k];
        for (slot, &c) in winners.iter().enumerate() {
            if c >= num_bundles {
                return Err(Error::Shape(format!("bundle {c} out of range")));
            }
            weights[c * k + slot] = 1.0;
        }
        Self::new(num_bundles, k, weights, AllocationMode::Hard)
    }

    /// Hard allocation that may leave slots empty (`None`). Used for welfare
    /// bookkeeping when fewer bundles than slots remain.
    pub fn partial(num_bundles: usize, winners: &[Option<usize>]) -> Self {
        let k = winners.len();
        let mut weights = vec![0.0; num_bundles * k];
        for (slot, c) in winners.iter().enumerate() {
            if let Some(c) = *c {
                weights[c * k + slot] = 1.0;
            }
        }
        Self {
            num_bundles,
            num_slots: k,
            weights,
            mode: AllocationMode::Hard,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let violation = match self.mode {
            AllocationMode::Hard => hard_violation(self.num_bundles, self.num_slots, &self.weights),
            AllocationMode::Soft => soft_violation(self.num_bundles, self.num_slots, &self.weights),
        };
        match violation {
            Some(msg) => Err(Error::InvalidArgument(msg)),
            None => Ok(()),
        }
    }

    pub fn num_bundles(&self) -> usize {
        self.num_bundles
    }

    pub fn num_slots(&self) -> usize {
        self.num_slots
    }

    pub fn mode(&self) -> AllocationMode {
        self.mode
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, c: usize, k: usize) -> f64 {
        self.weights[c * self.num_slots + k]
    }

    /// Bundle holding slot `k` in a hard allocation.
    pub fn winner(&self, k: usize) -> Option<usize> {
        (0..self.num_bundles).find(|&c| self.get(c, k) == 1.0)
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// First structural violation of the hard-allocation invariants, if any.
pub fn hard_violation(c: usize, k: usize, w: &[f64]) -> Option<String> {
    for (pos, &v) in w.iter().enumerate() {
        if v != 0.0 && v != 1.0 {
            return Some(format!("entry ({}, {}) = {v} is not binary", pos / k, pos % k));
        }
    }
    for slot in 0..k {
        let sum: f64 = (0..c).map(|b| w[b * k + slot]).sum();
        if sum != 1.0 {
            return Some(format!("slot {slot} column sums to {sum}"));
        }
    }
    for b in 0..c {
        let sum: f64 = w[b * k..(b + 1) * k].iter().sum();
        if sum > 1.0 {
            return Some(format!("bundle {b} row sums to {sum}"));
        }
    }
    None
}

fn soft_violation(c: usize, k: usize, w: &[f64]) -> Option<String> {
    if let Some(pos) = w.iter().position(|&v| !(-STRUCT_TOL..=1.0 + STRUCT_TOL).contains(&v)) {
        return Some(format!("entry ({}, {}) = {} outside [0, 1]", pos / k, pos % k, w[pos]));
    }
    for slot in 0..k {
        let sum: f64 = (0..c).map(|b| w[b * k + slot]).sum();
        if (sum - 1.0).abs() > STRUCT_TOL {
            return Some(format!("slot {slot} column sums to {sum}"));
        }
    }
    None
}

/// Per-bidder slot allocation, `m x K` for brands and `n x K` for stores.
#[derive(Debug, Clone, PartialEq)]
pub struct BidderAllocation {
    pub num_slots: usize,
    pub brand: Vec<f64>,
    pub store: Vec<f64>,
}

impl BidderAllocation {
    pub fn brand_slot(&self, i: usize, k: usize) -> f64 {
        self.brand[i * self.num_slots + k]
    }

    pub fn store_slot(&self, j: usize, k: usize) -> f64 {
        self.store[j * self.num_slots + k]
    }

    /// Expected click-through `sum_k a_xk * ctr_k`, brands then stores.
    pub fn expected_ctr(&self, ctrs: &[f64]) -> Vec<f64> {
        let k = self.num_slots;
        self.brand
            .chunks(k)
            .chain(self.store.chunks(k))
            .map(|row| row.iter().zip(ctrs).map(|(a, c)| a * c).sum())
            .collect()
    }
}

/// Sums bundle allocation over the bundles containing each bidder.
pub fn bidder_alloc(s: &BundleAllocation, idx: &BundleIndex) -> Result<BidderAllocation> {
    if s.num_bundles() != idx.len() {
        return Err(Error::Shape(format!(
            "allocation has {} bundles, index has {}",
            s.num_bundles(),
            idx.len()
        )));
    }
    let k = s.num_slots();
    let mut brand = vec![0.0; idx.num_brands() * k];
    let mut store = vec![0.0; idx.num_stores() * k];
    for (c, &(i, j)) in idx.bundles().iter().enumerate() {
        for slot in 0..k {
            let w = s.get(c, slot);
            brand[i * k + slot] += w;
            store[j * k + slot] += w;
        }
    }
    Ok(BidderAllocation {
        num_slots: k,
        brand,
        store,
    })
}

/// Result of one auction. Bidder vectors are flat: brands then stores.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub alloc_bundle: BundleAllocation,
    pub alloc_bidder: BidderAllocation,
    pub payments: Vec<f64>,
    pub expected_ctr: Vec<f64>,
    /// Utilities taking the reported bids as values.
    pub utilities: Vec<f64>,
}

impl Outcome {
    pub fn new(
        config: &AuctionConfig,
        idx: &BundleIndex,
        alloc_bundle: BundleAllocation,
        payments: Vec<f64>,
        bids: &BidProfile,
    ) -> Result<Self> {
        if payments.len() != config.num_bidders() {
            return Err(Error::Shape(format!(
                "{} payments for {} bidders",
                payments.len(),
                config.num_bidders()
            )));
        }
        let alloc_bidder = bidder_alloc(&alloc_bundle, idx)?;
        let expected_ctr = alloc_bidder.expected_ctr(config.ctrs());
        let mut out = Self {
            alloc_bundle,
            alloc_bidder,
            payments,
            expected_ctr,
            utilities: Vec::new(),
        };
        out.utilities = out.utilities_at(bids);
        Ok(out)
    }

    pub fn num_brands(&self) -> usize {
        self.alloc_bidder.brand.len() / self.alloc_bidder.num_slots.max(1)
    }

    pub fn brand_payments(&self) -> &[f64] {
        &self.payments[..self.num_brands()]
    }

    pub fn store_payments(&self) -> &[f64] {
        &self.payments[self.num_brands()..]
    }

    /// `u_x = v_x * g_x - p_x` for every bidder.
    pub fn utilities_at(&self, values: &BidProfile) -> Vec<f64> {
        values
            .brands
            .iter()
            .chain(&values.stores)
            .zip(self.expected_ctr.iter().zip(&self.payments))
            .map(|(v, (g, p))| v * g - p)
            .collect()
    }

    pub fn utility_of(&self, bidder: usize, value: f64) -> f64 {
        value * self.expected_ctr[bidder] - self.payments[bidder]
    }

    pub fn revenue(&self) -> f64 {
        self.payments.iter().sum()
    }
}

/// `(revenue, welfare)` of an outcome evaluated at a value profile.
pub fn outcome_metrics(values: &BidProfile, out: &Outcome) -> Result<(f64, f64)> {
    if values.num_bidders() != out.payments.len() {
        return Err(Error::Shape("value profile does not match outcome".into()));
    }
    let welfare = values
        .brands
        .iter()
        .chain(&values.stores)
        .zip(&out.expected_ctr)
        .map(|(v, g)| v * g)
        .sum();
    Ok((out.revenue(), welfare))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(m: usize, n: usize, ctrs: Vec<f64>, rel: &[&[u8]]) -> Result<AuctionConfig> {
        AuctionConfig::new(
            m,
            n,
            ctrs,
            rel.iter().map(|r| r.iter().map(|&v| v == 1).collect()).collect(),
        )
    }

    #[test]
    fn full_two_by_two() {
        let c = AuctionConfig::full(2, 2, vec![0.5]).unwrap();
        let idx = enumerate_bundles(&c).unwrap();
        assert_eq!(idx.bundles(), &[(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert_eq!(idx.by_brand(0), &[0, 1]);
        assert_eq!(idx.by_store(1), &[1, 3]);
    }

    #[test]
    fn sparse_row() {
        let c = cfg(1, 3, vec![0.5], &[&[1, 0, 1]]).unwrap();
        let idx = enumerate_bundles(&c).unwrap();
        assert_eq!(idx.bundles(), &[(0, 0), (0, 2)]);
        assert_eq!(idx.len(), 2);
        assert!(idx.by_store(1).is_empty());
    }

    #[test]
    fn setting_a_shape_is_valid() {
        let c = AuctionConfig::full(2, 4, vec![0.6]).unwrap();
        assert_eq!(enumerate_bundles(&c).unwrap().len(), 8);
    }

    #[test]
    fn instance_validation() {
        assert!(cfg(1, 1, vec![0.5], &[&[1]]).is_err(), "C = K");
        assert!(AuctionConfig::full(2, 2, vec![0.2, 0.5]).is_err(), "increasing ctrs");
        assert!(AuctionConfig::full(2, 2, vec![1.0]).is_err());
        assert!(AuctionConfig::full(2, 2, vec![]).is_err());
        assert!(cfg(2, 2, vec![0.5], &[&[1, 1]]).is_err(), "wrong shape");
    }

    #[test]
    fn config_json_roundtrip_validates() {
        let c = cfg(2, 2, vec![0.6, 0.2], &[&[1, 0], &[1, 1]]).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<AuctionConfig>(&s).unwrap(), c);
        let bad = r#"{"num_brands":1,"num_stores":1,"ctrs":[0.5],"relation":[[1]]}"#;
        assert!(serde_json::from_str::<AuctionConfig>(bad).is_err());
    }

    #[test]
    fn bundle_bid_sums() {
        let c = AuctionConfig::full(2, 1, vec![0.5]).unwrap();
        let idx = enumerate_bundles(&c).unwrap();
        let e = bundle_bids(&BidProfile::new(vec![0.2, 0.7], vec![0.1]).unwrap(), &idx).unwrap();
        assert!((e[0] - 0.3).abs() < 1e-15 && (e[1] - 0.8).abs() < 1e-15);
        let zero = bundle_bids(&BidProfile::new(vec![0.0; 2], vec![0.0]).unwrap(), &idx).unwrap();
        assert_eq!(zero, vec![0.0, 0.0]);
        let single = AuctionConfig::full(1, 2, vec![0.5]).unwrap();
        let e = bundle_bids(
            &BidProfile::new(vec![0.3], vec![0.5, 0.0]).unwrap(),
            &enumerate_bundles(&single).unwrap(),
        )
        .unwrap();
        assert_eq!(e[0], 0.8);
    }

    #[test]
    fn bidder_allocation_single_winner() {
        let c = AuctionConfig::full(2, 2, vec![0.5]).unwrap();
        let idx = enumerate_bundles(&c).unwrap();
        let s = BundleAllocation::from_winners(4, &[1]).unwrap();
        let a = bidder_alloc(&s, &idx).unwrap();
        assert_eq!(a.brand, vec![1.0, 0.0]);
        assert_eq!(a.store, vec![0.0, 1.0]);
    }

    #[test]
    fn bidder_allocation_soft_column() {
        let c = cfg(2, 2, vec![0.5], &[&[1, 1], &[1, 0]]).unwrap();
        let idx = enumerate_bundles(&c).unwrap();
        let s = BundleAllocation::new(3, 1, vec![0.2, 0.3, 0.5], AllocationMode::Soft).unwrap();
        let a = bidder_alloc(&s, &idx).unwrap();
        assert!((a.brand_slot(0, 0) - 0.5).abs() < 1e-15);
        assert!((a.brand_slot(1, 0) - 0.5).abs() < 1e-15);
        assert!((a.store_slot(0, 0) - 0.7).abs() < 1e-15);
        assert!((a.store_slot(1, 0) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn empty_allocation_maps_to_zero() {
        let c = AuctionConfig::full(2, 2, vec![0.5]).unwrap();
        let idx = enumerate_bundles(&c).unwrap();
        let s = BundleAllocation::partial(4, &[None]);
        let a = bidder_alloc(&s, &idx).unwrap();
        assert!(a.brand.iter().chain(&a.store).all(|&v| v == 0.0));
    }

    #[test]
    fn hard_invariants_enforced() {
        assert!(BundleAllocation::new(2, 1, vec![0.5, 0.5], AllocationMode::Hard).is_err());
        assert!(BundleAllocation::new(2, 1, vec![1.0, 1.0], AllocationMode::Hard).is_err());
        assert!(BundleAllocation::new(2, 2, vec![1.0, 1.0, 0.0, 0.0], AllocationMode::Hard).is_err());
        assert!(BundleAllocation::new(2, 1, vec![0.5, 0.5], AllocationMode::Soft).is_ok());
        assert!(BundleAllocation::new(2, 1, vec![0.5, 0.4], AllocationMode::Soft).is_err());
    }

    #[test]
    fn metrics_direct_evaluation() {
        let c = cfg(1, 1, vec![0.6], &[&[1]]);
        assert!(c.is_err());
        // One brand and one store sharing a single winning bundle out of two.
        let c = AuctionConfig::full(1, 2, vec![0.6]).unwrap();
        let idx = enumerate_bundles(&c).unwrap();
        let bids = BidProfile::new(vec![0.5], vec![0.5, 0.0]).unwrap();
        let s = BundleAllocation::from_winners(2, &[0]).unwrap();
        let out = Outcome::new(&c, &idx, s, vec![0.2, 0.1, 0.0], &bids).unwrap();
        let (rev, sw) = outcome_metrics(&bids, &out).unwrap();
        assert!((rev - 0.3).abs() < 1e-12);
        assert!((sw - 0.6).abs() < 1e-12);
        assert!((out.utilities[0] - 0.1).abs() < 1e-12);
        assert_eq!(out.brand_payments(), &[0.2]);
        assert_eq!(out.store_payments(), &[0.1, 0.0]);
    }

    #[test]
    fn permutation_relabels_relation() {
        let c = cfg(2, 2, vec![0.5], &[&[1, 0], &[1, 1]]).unwrap();
        let p = c.permuted(&[1, 0], &[1, 0]).unwrap();
        assert_eq!(p.relation(), &[vec![true, true], vec![false, true]]);
        assert!(c.permuted(&[0, 0], &[0, 1]).is_err());
    }
}
