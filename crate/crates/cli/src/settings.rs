//! Layered configuration: base values, then a JSON file, then flags.

use std::path::Path;

use clap::Args;
use intent_core::{HeadKind, PipelineConfig};
use serde_json::Value;

use crate::commands::CliError;

#[derive(Args, Debug, Default, Clone)]
pub struct ConfigOverrides {
    /// Observation length T.
    #[arg(long)]
    frames: Option<usize>,
    /// Events per branch M.
    #[arg(long)]
    clusters: Option<usize>,
    /// Density neighbours K.
    #[arg(long)]
    neighbors: Option<usize>,
    #[arg(long)]
    d_v: Option<usize>,
    #[arg(long)]
    d1: Option<usize>,
    #[arg(long)]
    d_nv: Option<usize>,
    #[arg(long)]
    d_f: Option<usize>,
    #[arg(long, value_parser = parse_head)]
    head: Option<HeadKind>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    l2_lambda: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Drop the non-visual branch.
    #[arg(long)]
    no_nonvisual: bool,
    /// Use every frame as its own event.
    #[arg(long)]
    no_tmm: bool,
    /// Replace attention with plain means and fixed fusion weights.
    #[arg(long)]
    no_cab: bool,
}

fn parse_head(s: &str) -> Result<HeadKind, String> {
    match s {
        "camera" => Ok(HeadKind::Camera),
        "draft" => Ok(HeadKind::Draft),
        other => Err(format!("unknown head `{other}`, expected camera or draft")),
    }
}

impl ConfigOverrides {
    fn apply(&self, cfg: &mut PipelineConfig) {
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            )*};
        }
        set!(
            frames,
            clusters,
            neighbors,
            d_v,
            d1,
            d_nv,
            d_f,
            head,
            learning_rate,
            l2_lambda,
            batch_size,
            epochs,
            val_fraction,
            threshold
        );
        if self.no_nonvisual {
            cfg.use_nonvisual = false;
        }
        if self.no_tmm {
            cfg.use_tmm = false;
        }
        if self.no_cab {
            cfg.use_cab = false;
        }
    }
}

/// `base`, overlaid with the fields present in `file`, then `overrides` and `seed`.
pub fn resolve(
    base: &PipelineConfig,
    file: Option<&Path>,
    overrides: &ConfigOverrides,
    seed: Option<u64>,
) -> Result<PipelineConfig, CliError> {
    let mut cfg = match file {
        None => base.clone(),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let overlay: Value =
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
            let Value::Object(fields) = overlay else {
                return Err(CliError::Usage(format!(
                    "config {} must be a JSON object",
                    path.display()
                )));
            };
            let mut merged = serde_json::to_value(base).map_err(intent_core::Error::from)?;
            if let Value::Object(target) = &mut merged {
                target.extend(fields);
            }
            serde_json::from_value(merged).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?
        }
    };
    overrides.apply(&mut cfg);
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}
