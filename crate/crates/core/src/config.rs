//! Run configuration: one strict JSON document covering model dimensions,
//! pre-training weights, optimizer settings, fine-tuning, and the corpus
//! profile. Unknown keys are rejected; flags may override fields after
//! loading.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::CorpusProfile;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Width of every node embedding and the fusion transformer.
    pub d_f: usize,
    pub heads: usize,
    /// Text-encoder transformer layers.
    pub text_layers: usize,
    /// Output channels of each stride-2 conv layer in the visual encoder.
    pub conv_channels: Vec<usize>,
    /// Fusion transformer layers.
    pub fusion_layers: usize,
    /// Feed-forward width as a multiple of `d_f`.
    pub ff_mult: usize,
    /// Distance buckets per axis in the relative position bias.
    pub bias_buckets: usize,
    pub max_seg_tokens: usize,
    pub max_segments: usize,
    pub max_pages: usize,
    pub crop_h: usize,
    pub crop_w: usize,
    /// Per-side box enlargement before cropping.
    pub enlarge_proportion: f64,
    pub vocab_max: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_f: 64,
            heads: 4,
            text_layers: 2,
            conv_channels: vec![8, 16],
            fusion_layers: 2,
            ff_mult: 4,
            bias_buckets: 16,
            max_seg_tokens: 32,
            max_segments: 256,
            max_pages: 8,
            crop_h: 32,
            crop_w: 96,
            enlarge_proportion: 0.10,
            vocab_max: 8192,
        }
    }
}

impl ModelConfig {
    pub fn ff_width(&self) -> usize {
        self.ff_mult * self.d_f
    }

    pub fn head_dim(&self) -> usize {
        self.d_f / self.heads
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub lambda_mlm: f64,
    pub lambda_vpa: f64,
    pub lambda_msp: f64,
    /// MSP temperature.
    pub tau: f64,
    /// MSP negatives per masked term (clamped to |S|/2 per document).
    pub n_neg: usize,
    pub mlm_rate: f64,
    pub msp_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            lambda_mlm: 1.0,
            lambda_vpa: 1.0,
            lambda_msp: 0.6,
            tau: 2.0,
            n_neg: 8,
            mlm_rate: 0.15,
            msp_rate: 0.15,
            steps: 2000,
            batch_size: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    /// Rate for encoder/fusion parameters.
    pub lr_encoder: f64,
    /// Rate for task heads.
    pub lr_heads: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr_encoder: 5e-5,
            lr_heads: 1e-3,
            weight_decay: 0.01,
            clip_norm: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub max_epochs: usize,
    /// Early-stop patience in epochs without a validation-F1 improvement.
    pub patience: usize,
    pub batch_size: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            max_epochs: 30,
            patience: 5,
            batch_size: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub finetune: FinetuneConfig,
    #[serde(default = "default_profile")]
    pub profile: CorpusProfile,
}

fn default_profile() -> CorpusProfile {
    CorpusProfile::desk(0)
}

impl RunConfig {
    /// Desk preset: dimensions sized so the full pipeline (generate,
    /// pre-train, fine-tune, evaluate) runs in minutes on a laptop CPU.
    /// The trunk trains from scratch here, so it uses a faster rate than
    /// the pretrained-initialization default.
    pub fn desk(seed: u64) -> Self {
        RunConfig {
            seed,
            model: ModelConfig {
                d_f: 48,
                ff_mult: 2,
                conv_channels: vec![6, 12],
                crop_h: 16,
                crop_w: 48,
                ..ModelConfig::default()
            },
            pretrain: PretrainConfig::default(),
            optim: OptimConfig {
                lr_encoder: 3e-4,
                ..OptimConfig::default()
            },
            finetune: FinetuneConfig::default(),
            profile: CorpusProfile::desk(seed),
        }
    }

    /// Minimal dimensions for finite-difference verification.
    pub fn tiny(seed: u64) -> Self {
        RunConfig {
            seed,
            model: ModelConfig {
                d_f: 16,
                heads: 2,
                text_layers: 1,
                conv_channels: vec![2, 2],
                fusion_layers: 1,
                ff_mult: 2,
                bias_buckets: 4,
                max_seg_tokens: 8,
                max_segments: 256,
                max_pages: 8,
                crop_h: 8,
                crop_w: 24,
                enlarge_proportion: 0.10,
                vocab_max: 50,
            },
            pretrain: PretrainConfig {
                n_neg: 2,
                steps: 4,
                batch_size: 2,
                ..PretrainConfig::default()
            },
            optim: OptimConfig::default(),
            finetune: FinetuneConfig {
                max_epochs: 2,
                patience: 1,
                batch_size: 2,
            },
            profile: CorpusProfile {
                target_avg_segments: 14.0,
                crop_h: 8,
                crop_w: 24,
                ..CorpusProfile::desk(seed)
            },
        }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_slice(bytes)
            .map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn sha256_hex(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(self).expect("config serializes"));
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.d_f == 0 || m.heads == 0 || !m.d_f.is_multiple_of(m.heads) {
            return Err(Error::Config(format!(
                "d_f {} must be a positive multiple of heads {}",
                m.d_f, m.heads
            )));
        }
        if m.text_layers == 0 || m.fusion_layers == 0 || m.ff_mult == 0 || m.bias_buckets < 2 {
            return Err(Error::Config("layer/width settings must be positive".into()));
        }
        if m.conv_channels.is_empty() {
            return Err(Error::Config("need at least one conv layer".into()));
        }
        if m.max_seg_tokens < 4 || m.max_segments == 0 || m.max_pages == 0 {
            return Err(Error::Config("sequence caps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&m.enlarge_proportion) {
            return Err(Error::Config("enlarge_proportion must be in [0, 1]".into()));
        }
        if m.vocab_max <= crate::vocab::SPECIALS.len() {
            return Err(Error::Config("vocab_max too small".into()));
        }
        let p = &self.pretrain;
        if p.lambda_mlm < 0.0 || p.lambda_vpa < 0.0 || p.lambda_msp < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if p.tau <= 0.0 {
            return Err(Error::Config("tau must be positive".into()));
        }
        if !(0.0..=1.0).contains(&p.mlm_rate) || !(0.0..=1.0).contains(&p.msp_rate) {
            return Err(Error::Config("masking rates must be in [0, 1]".into()));
        }
        if p.n_neg == 0 || p.batch_size == 0 {
            return Err(Error::Config("n_neg and batch_size must be positive".into()));
        }
        let o = &self.optim;
        if o.lr_encoder <= 0.0 || o.lr_heads <= 0.0 || o.weight_decay < 0.0 || o.clip_norm <= 0.0 {
            return Err(Error::Config("optimizer settings out of range".into()));
        }
        if self.finetune.batch_size == 0 || self.finetune.max_epochs == 0 {
            return Err(Error::Config("finetune settings out of range".into()));
        }
        self.profile.validate()?;
        if self.profile.crop_h != m.crop_h || self.profile.crop_w != m.crop_w {
            return Err(Error::Config(format!(
                "profile crop {}x{} disagrees with model crop {}x{}",
                self.profile.crop_h, self.profile.crop_w, m.crop_h, m.crop_w
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        RunConfig::desk(1).validate().unwrap();
        RunConfig::tiny(1).validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let json = serde_json::to_vec(&serde_json::json!({
            "seed": 1,
            "model": {"d_f": 32, "heds": 4}
        }))
        .unwrap();
        let err = RunConfig::from_json(&json).unwrap_err();
        assert!(err.to_string().contains("heds"), "{err}");
    }

    #[test]
    fn head_divisibility_is_enforced() {
        let mut cfg = RunConfig::desk(1);
        cfg.model.d_f = 30;
        cfg.model.heads = 4;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn json_round_trip_is_stable() {
        let cfg = RunConfig::desk(9);
        let bytes = serde_json::to_vec(&cfg).unwrap();
        let back = RunConfig::from_json(&bytes).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.sha256_hex(), back.sha256_hex());
    }
}
