//! Shared fixtures for the benchmarks.

use triband_core::{presets, Scenario};

/// The unpumped 150-channel link at a flat 2 dBm launch.
pub fn unpumped() -> Scenario {
    let s = presets::cls_default();
    s.with_launch_dbm(vec![2.0; s.channel_count()]).expect("valid launch")
}

/// The same link with its three backward pumps.
pub fn pumped() -> Scenario {
    let s = presets::cls_pumped();
    s.with_launch_dbm(vec![2.0; s.channel_count()]).expect("valid launch")
}
