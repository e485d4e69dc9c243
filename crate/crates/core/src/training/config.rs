use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::losses::LossConfig;

use super::synth::SynthParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub triplane_res: usize,
    pub triplane_channels: usize,
    /// Half-width of the uniform plane initialisation.
    pub triplane_init_scale: f64,
    /// Canonical bounding boxes are padded by this much on every side (meters).
    pub triplane_padding: f64,
    pub hidden: Vec<usize>,
    /// Let body splats occlude the cloth in the matte pass.
    pub matte_includes_body: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            triplane_res: 64,
            triplane_channels: 16,
            triplane_init_scale: 1e-2,
            triplane_padding: 0.1,
            hidden: vec![128, 128],
            matte_includes_body: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr_position_init: f64,
    pub lr_position_final: f64,
    /// Iterations over which the position rate decays; 0 means the run length.
    pub lr_position_horizon: usize,
    pub lr_rotation: f64,
    pub lr_scale: f64,
    pub lr_opacity: f64,
    pub lr_sh: f64,
    pub lr_triplane: f64,
    pub lr_decoder: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_position_init: 1.6e-4,
            lr_position_final: 1.6e-6,
            lr_position_horizon: 0,
            lr_rotation: 1e-3,
            lr_scale: 5e-3,
            lr_opacity: 5e-2,
            lr_sh: 2.5e-3,
            lr_triplane: 1e-3,
            lr_decoder: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Write a checkpoint every this many iterations (0: only at the end).
    pub checkpoint_every: usize,
    pub background: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { iterations: 2000, checkpoint_every: 500, background: [0.0, 0.0, 0.0] }
    }
}

/// Complete experiment configuration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub synth: SynthParams,
    pub model: ModelConfig,
    pub losses: LossConfig,
    pub optim: OptimConfig,
    pub train: TrainConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.losses.validate()?;
        let m = &self.model;
        if m.triplane_res < 2 || m.triplane_channels == 0 {
            return Err(Error::InvalidConfig("model.triplane_res must be ≥ 2 and triplane_channels ≥ 1".into()));
        }
        if m.hidden.contains(&0) {
            return Err(Error::InvalidConfig("model.hidden widths must be positive".into()));
        }
        let o = &self.optim;
        if !(o.lr_position_init >= o.lr_position_final && o.lr_position_final > 0.0) {
            return Err(Error::InvalidConfig("optim.lr_position_init must be ≥ lr_position_final > 0".into()));
        }
        let rates = [o.lr_rotation, o.lr_scale, o.lr_opacity, o.lr_sh, o.lr_triplane, o.lr_decoder];
        if rates.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return Err(Error::InvalidConfig("optim learning rates must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return Err(Error::InvalidConfig("optim.beta1/beta2 must lie in [0, 1) and eps be positive".into()));
        }
        Ok(())
    }

    /// Apply `key=value` with a dotted key naming an existing field. The value
    /// is parsed as JSON, falling back to a plain string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        let value: Value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
        let mut root = serde_json::to_value(&*self)?;
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = match slot {
                Value::Object(map) => map.get_mut(part),
                Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
                _ => None,
            }
            .ok_or_else(|| Error::InvalidConfig(format!("unknown config key `{key}`")))?;
        }
        *slot = value;
        let updated: Self =
            serde_json::from_value(root).map_err(|e| Error::InvalidConfig(format!("bad value for `{key}`: {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_use_dotted_keys() {
        let mut c = Config::default();
        c.apply_override("losses.lambda_sim=2.0").unwrap();
        assert_eq!(c.losses.lambda_sim, 2.0);
        c.apply_override("train.iterations=7").unwrap();
        assert_eq!(c.train.iterations, 7);
        c.apply_override("model.hidden=[16,8]").unwrap();
        assert_eq!(c.model.hidden, vec![16, 8]);
        c.apply_override("train.background.1=0.5").unwrap();
        assert_eq!(c.train.background[1], 0.5);
    }

    #[test]
    fn bad_overrides_rejected() {
        let mut c = Config::default();
        assert!(c.apply_override("losses.lambda_nope=1").is_err());
        assert!(c.apply_override("losses.lambda_sim").is_err());
        assert!(c.apply_override("train.iterations=fast").is_err());
        assert!(c.apply_override("losses.ssim_window=4").is_err());
        assert_eq!(c, Config::default());
    }

    #[test]
    fn json_roundtrip() {
        let c = Config::default();
        let back: Config = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }
}
