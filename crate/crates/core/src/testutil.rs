//! Shared fixtures for unit tests.

use crate::scenario::{
    generate_geometry, generate_instance_with_pilots, generate_pilots, substream, Instance,
    ScenarioConfig, STREAM_PILOTS,
};

/// Noise-free 6-UE scenario small enough for exact-recovery checks.
pub fn tiny_cfg(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        n_ue: 6,
        n_ap: 2,
        ant_per_ap: 2,
        pilot_len: 6,
        data_len: 8,
        activity_prob: 0.5,
        noise_scale: 0.0,
        rng_seed: seed,
        ..ScenarioConfig::paper_profile()
    }
}

pub fn tiny_instance(seed: u64) -> Instance {
    instance_for(&tiny_cfg(seed), seed)
}

pub fn instance_for(cfg: &ScenarioConfig, seed: u64) -> Instance {
    let geo = generate_geometry(cfg, &mut substream(seed, 2)).unwrap();
    let pilots = generate_pilots(cfg, &mut substream(cfg.rng_seed, STREAM_PILOTS)).unwrap();
    generate_instance_with_pilots(cfg, &geo, &pilots, &mut substream(seed, 3)).unwrap()
}
