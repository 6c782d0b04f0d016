//! Joint ad auctions where every slot is won by a (brand, store) bundle:
//! the domain model, a learned sort-based mechanism and its trainer, a
//! welfare-maximizing baseline, auditing tools and a lottery feasibility
//! oracle for probabilistic allocations.

pub mod assignment;
mod auction;
pub mod data;
mod error;
pub mod evaluator;
pub mod feasibility;
pub mod lp;
pub mod model;
pub mod presets;
pub mod stats;
pub mod trainer;
pub mod vcg;

pub use auction::{
    bidder_alloc, bundle_bids, enumerate_bundles, hard_violation, outcome_metrics, AllocationMode, AuctionConfig,
    BidProfile, Bidder, BidderAllocation, BundleAllocation, BundleIndex, Outcome, STRUCT_TOL,
};
pub use error::{Error, Result};
pub use presets::Setting;
