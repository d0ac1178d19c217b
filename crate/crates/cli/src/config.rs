//! Experiment configuration: one JSON file per run, schema-validated with
//! unknown keys rejected. All randomness is derived from `master_seed` by
//! stage-keyed hashing.

use anyhow::{bail, Context, Result};
use limber_core::encoders::{ClassifierConfig, ContrastiveConfig, RandomConfig, SslConfig};
use limber_core::lm::DecodeMode;
use limber_core::world::WorldConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmSection {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub context_len: usize,
    /// Dropout applied inside the LM during projection training.
    pub dropout: f64,
    pub corpus_lines: usize,
    pub val_lines: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub final_lr_frac: f64,
    pub ppl_gate: Option<f64>,
}

impl Default for LmSection {
    fn default() -> Self {
        LmSection {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            context_len: 128,
            dropout: 0.1,
            corpus_lines: 8000,
            val_lines: 300,
            steps: 1500,
            batch_size: 12,
            lr: 3e-3,
            warmup_steps: 50,
            final_lr_frac: 1.0,
            ppl_gate: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            n_train: 50_000,
            n_val: 2_000,
            n_test: 2_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodersSection {
    pub contrastive: ContrastiveConfig,
    pub classifier: ClassifierConfig,
    pub ssl: SslConfig,
    pub random: RandomConfig,
}

impl Default for EncodersSection {
    fn default() -> Self {
        EncodersSection {
            contrastive: ContrastiveConfig::default(),
            classifier: ClassifierConfig::default(),
            ssl: SslConfig::default(),
            random: RandomConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimberSection {
    pub steps: usize,
    pub batch_size: usize,
    pub lr_p: f64,
    pub lr_e: Option<f64>,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub dropout: f64,
    pub grad_clip: f64,
    pub eval_every: usize,
}

impl Default for LimberSection {
    fn default() -> Self {
        LimberSection {
            steps: 3000,
            batch_size: 32,
            lr_p: 8e-4,
            lr_e: None,
            betas: (0.9, 0.95),
            weight_decay: 0.0,
            dropout: 0.1,
            grad_clip: 1.0,
            eval_every: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TasksSection {
    /// Number of test-split examples used for caption generation (0 = all).
    pub caption_eval: usize,
    pub vqa_eval: usize,
    pub vqa_pool: usize,
    pub shots: Vec<usize>,
    #[serde(flatten)]
    pub decode: DecodeSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeSection {
    pub decode: DecodeMode,
    pub max_len: usize,
}

impl Default for TasksSection {
    fn default() -> Self {
        TasksSection {
            caption_eval: 0,
            vqa_eval: 300,
            vqa_pool: 60,
            shots: vec![0, 1, 2, 4],
            decode: DecodeSection {
                decode: DecodeMode::Greedy,
                max_len: 16,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    pub lexicon_top: usize,
    pub purity_k: usize,
    pub probe_epochs: usize,
    pub probe_lr: f64,
    pub probe_batch: usize,
    pub probe_examples: usize,
    /// Minimum confusions for a category to enter the top-confusion
    /// property-overlap average.
    pub min_confusions: usize,
    /// Items sampled for the RSA and purity analyses.
    pub analysis_examples: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection {
            lexicon_top: 50,
            purity_k: 10,
            probe_epochs: 300,
            probe_lr: 1e-4,
            probe_batch: 32,
            probe_examples: 1000,
            min_confusions: 3,
            analysis_examples: 500,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub lm: LmSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub encoders: EncodersSection,
    #[serde(default)]
    pub limber: LimberSection,
    #[serde(default)]
    pub tasks: TasksSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    /// Worker threads (overridden by --threads / LIMBER_THREADS).
    #[serde(default = "one")]
    pub threads: usize,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lm.d_model == 0 || self.lm.d_model % self.lm.n_heads != 0 {
            bail!("lm.d_model must be a positive multiple of lm.n_heads");
        }
        let obs = self.world.grid * self.world.grid * self.world.d_patch;
        for (name, dim) in [
            ("contrastive", self.encoders.contrastive.input_dim),
            ("classifier", self.encoders.classifier.input_dim),
            ("random", self.encoders.random.input_dim),
        ] {
            if dim != obs {
                bail!("encoders.{name}.input_dim {dim} != observation dim {obs}");
            }
        }
        if self.encoders.ssl.n_patches != self.world.grid * self.world.grid
            || self.encoders.ssl.d_patch != self.world.d_patch
        {
            bail!("encoders.ssl patch geometry does not match the world");
        }
        // context must cover prompts + caption + prefix text
        let k_max = self
            .encoders
            .ssl
            .n_patches
            .max(self.encoders.contrastive.prompt_len)
            .max(self.encoders.classifier.prompt_len)
            .max(self.encoders.random.prompt_len);
        let needed = k_max + 16 + 4;
        if self.lm.context_len < needed {
            bail!(
                "lm.context_len {} too small: need at least {needed} for prompts plus a caption",
                self.lm.context_len
            );
        }
        Ok(())
    }

    /// Stage seed derivation, recorded in every manifest.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        limber_core::rng::derive_seed(self.master_seed, stage)
    }
}
