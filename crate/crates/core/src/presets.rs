//! Simulated instance families. Every preset uses the full bipartite relation;
//! pass an explicit relation to [`AuctionConfig::new`] to model sparser graphs.

use serde::{Deserialize, Serialize};

use crate::{AuctionConfig, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Setting {
    A,
    B,
    C,
    D,
}

impl Setting {
    pub const ALL: [Setting; 4] = [Setting::A, Setting::B, Setting::C, Setting::D];

    /// `(brands, stores, ctrs)`.
    pub fn shape(self) -> (usize, usize, &'static [f64]) {
        match self {
            Setting::A => (4, 2, &[0.6]),
            Setting::B => (3, 3, &[0.6, 0.2]),
            Setting::C => (4, 4, &[0.6, 0.2]),
            Setting::D => (4, 4, &[0.6, 0.2, 0.06]),
        }
    }

    pub fn config(self) -> AuctionConfig {
        let (m, n, ctrs) = self.shape();
        AuctionConfig::full(m, n, ctrs.to_vec()).expect("preset instances are valid")
    }

    pub fn name(self) -> &'static str {
        match self {
            Setting::A => "A",
            Setting::B => "B",
            Setting::C => "C",
            Setting::D => "D",
        }
    }
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Setting::A),
            "B" => Ok(Setting::B),
            "C" => Ok(Setting::C),
            "D" => Ok(Setting::D),
            other => Err(Error::InvalidArgument(format!("unknown setting {other:?}"))),
        }
    }
}

/// Test-set size used for the simulated settings.
pub const DEFAULT_TEST_SIZE: usize = 9984;

/// Misreport multipliers `0, 0.05, ..., 1.45`.
pub fn misreport_grid() -> Vec<f64> {
    (0..30).map(|i| i as f64 * 0.05).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enumerate_bundles;

    #[test]
    fn preset_shapes() {
        let a = Setting::A.config();
        assert_eq!((a.num_brands(), a.num_stores(), a.ctrs()), (4, 2, &[0.6][..]));
        let d = Setting::D.config();
        assert_eq!(d.ctrs(), &[0.6, 0.2, 0.06]);
        assert_eq!(enumerate_bundles(&d).unwrap().len(), 16);
        assert_eq!(enumerate_bundles(&Setting::B.config()).unwrap().len(), 9);
    }

    #[test]
    fn grid_contains_truth() {
        let g = misreport_grid();
        assert_eq!(g.len(), 30);
        assert!(g.contains(&1.0));
        assert!((g[29] - 1.45).abs() < 1e-12);
    }
}
