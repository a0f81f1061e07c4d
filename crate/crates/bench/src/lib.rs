//! Shared fixtures for the benchmarks.

use intent_core::encoders::{generate_synthetic, SynthParams};
use intent_core::{ModelParams, PipelineConfig, SampleRecord};

/// Default-width configuration with a fixed seed.
pub fn config() -> PipelineConfig {
    PipelineConfig {
        seed: 1,
        learning_rate: 1e-3,
        epochs: 1,
        ..Default::default()
    }
}

/// `count` synthetic samples and freshly initialised parameters for `cfg`.
pub fn fixture(cfg: &PipelineConfig, count: usize) -> (Vec<SampleRecord>, ModelParams) {
    let data = generate_synthetic(
        cfg,
        &SynthParams {
            count,
            ..Default::default()
        },
    )
    .expect("synthetic data");
    let params = ModelParams::init(cfg, &data[0].schema(), cfg.seed);
    (data, params)
}
