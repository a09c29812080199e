//! Bundled example scenarios.

use crate::scenario::{load_scenario, Scenario};

pub const CLS_DEFAULT_TOML: &str = include_str!("../scenarios/cls_default.toml");
pub const CLS_PUMPED_TOML: &str = include_str!("../scenarios/cls_pumped.toml");

/// 150-channel C+L+S link, 10 × 100 km, flat 0 dBm, no pumps.
pub fn cls_default() -> Scenario {
    load_scenario(CLS_DEFAULT_TOML).expect("bundled scenario is valid")
}

/// [`cls_default`] plus pumps at 212, 214 and 217 THz (21, 21, 24 dBm).
pub fn cls_pumped() -> Scenario {
    load_scenario(CLS_PUMPED_TOML).expect("bundled scenario is valid")
}
