//! Run configuration: a flat key=value text format where every key is also
//! a command-line flag. Unknown keys are rejected; missing keys fall back
//! to defaults so partial configs stay valid.

use crate::ehr::Fnv;
use crate::fusion::FusionMode;

use super::TrainError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub embed_dim: usize,
    pub rgat_layers: usize,
    pub num_heads: usize,
    pub num_blocks: usize,
    pub max_len: usize,
    pub diff_steps: usize,
    pub noise_scale: f64,
    pub alpha_low: f64,
    pub alpha_up: f64,
    pub rebuild_k: usize,
    pub gate_epsilon: f64,
    pub gate_window: usize,
    pub l2_lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub rounds: usize,
    pub batch_size: usize,
    pub t_inf: usize,
    pub dropout: f64,
    pub train_negatives: usize,
    pub eval_negatives: usize,
    pub use_diffusion: bool,
    pub use_rgat: bool,
    pub use_kansformer: bool,
    pub use_task_adaptive: bool,
    pub fusion_mode: FusionMode,
    pub stage1_reset: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            embed_dim: 32,
            rgat_layers: 2,
            num_heads: 2,
            num_blocks: 2,
            max_len: 64,
            diff_steps: 50,
            noise_scale: 0.5,
            alpha_low: 0.05,
            alpha_up: 0.8,
            rebuild_k: 40,
            gate_epsilon: 0.2,
            gate_window: 5,
            l2_lambda: 1e-5,
            learning_rate: 1e-3,
            epochs: 20,
            rounds: 3,
            batch_size: 256,
            t_inf: 5,
            dropout: 0.1,
            train_negatives: 4,
            eval_negatives: 99,
            use_diffusion: true,
            use_rgat: true,
            use_kansformer: true,
            use_task_adaptive: true,
            fusion_mode: FusionMode::SpatialQuery,
            stage1_reset: false,
        }
    }
}

macro_rules! config_keys {
    ($self:expr, $f:expr) => {
        $f("seed", $self.seed.to_string());
        $f("embed_dim", $self.embed_dim.to_string());
        $f("rgat_layers", $self.rgat_layers.to_string());
        $f("num_heads", $self.num_heads.to_string());
        $f("num_blocks", $self.num_blocks.to_string());
        $f("max_len", $self.max_len.to_string());
        $f("diff_steps", $self.diff_steps.to_string());
        $f("noise_scale", $self.noise_scale.to_string());
        $f("alpha_low", $self.alpha_low.to_string());
        $f("alpha_up", $self.alpha_up.to_string());
        $f("rebuild_k", $self.rebuild_k.to_string());
        $f("gate_epsilon", $self.gate_epsilon.to_string());
        $f("gate_window", $self.gate_window.to_string());
        $f("l2_lambda", $self.l2_lambda.to_string());
        $f("learning_rate", $self.learning_rate.to_string());
        $f("epochs", $self.epochs.to_string());
        $f("rounds", $self.rounds.to_string());
        $f("batch_size", $self.batch_size.to_string());
        $f("t_inf", $self.t_inf.to_string());
        $f("dropout", $self.dropout.to_string());
        $f("train_negatives", $self.train_negatives.to_string());
        $f("eval_negatives", $self.eval_negatives.to_string());
        $f("use_diffusion", $self.use_diffusion.to_string());
        $f("use_rgat", $self.use_rgat.to_string());
        $f("use_kansformer", $self.use_kansformer.to_string());
        $f("use_task_adaptive", $self.use_task_adaptive.to_string());
        $f("fusion_mode", $self.fusion_mode.as_str().to_string());
        $f("stage1_reset", $self.stage1_reset.to_string());
    };
}

impl RunConfig {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        config_keys!(self, push);
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TrainError> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| TrainError::Config {
                key: format!("line {}", i + 1),
                msg: format!("expected key=value, got {line:?}"),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Set one key from its text form; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, TrainError> {
            value.parse().map_err(|_| TrainError::Config {
                key: key.to_string(),
                msg: format!("cannot parse {value:?}"),
            })
        }
        match key {
            "seed" => self.seed = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "rgat_layers" => self.rgat_layers = parse(key, value)?,
            "num_heads" => self.num_heads = parse(key, value)?,
            "num_blocks" => self.num_blocks = parse(key, value)?,
            "max_len" => self.max_len = parse(key, value)?,
            "diff_steps" => self.diff_steps = parse(key, value)?,
            "noise_scale" => self.noise_scale = parse(key, value)?,
            "alpha_low" => self.alpha_low = parse(key, value)?,
            "alpha_up" => self.alpha_up = parse(key, value)?,
            "rebuild_k" => self.rebuild_k = parse(key, value)?,
            "gate_epsilon" => self.gate_epsilon = parse(key, value)?,
            "gate_window" => self.gate_window = parse(key, value)?,
            "l2_lambda" => self.l2_lambda = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "rounds" => self.rounds = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "t_inf" => self.t_inf = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "train_negatives" => self.train_negatives = parse(key, value)?,
            "eval_negatives" => self.eval_negatives = parse(key, value)?,
            "use_diffusion" => self.use_diffusion = parse(key, value)?,
            "use_rgat" => self.use_rgat = parse(key, value)?,
            "use_kansformer" => self.use_kansformer = parse(key, value)?,
            "use_task_adaptive" => self.use_task_adaptive = parse(key, value)?,
            "fusion_mode" => {
                self.fusion_mode = FusionMode::parse(value).ok_or_else(|| TrainError::Config {
                    key: key.to_string(),
                    msg: format!(
                        "unknown fusion mode {value:?}, expected spatial_query, \
                         temporal_query, linear, or pooled"
                    ),
                })?;
            }
            "stage1_reset" => self.stage1_reset = parse(key, value)?,
            other => {
                return Err(TrainError::Config {
                    key: other.to_string(),
                    msg: "unknown configuration key".into(),
                })
            }
        }
        Ok(())
    }

    /// Stable hash over the canonical text form, recorded in artifacts.
    pub fn hash(&self) -> u64 {
        let mut h = Fnv::new();
        h.push_bytes(self.to_text().as_bytes());
        h.finish()
    }

    /// Check ranges; returns human-readable warnings for values that are
    /// legal but outside the studied ranges.
    pub fn validate(&self) -> Result<Vec<String>, TrainError> {
        let mut warnings = Vec::new();
        let err = |key: &str, msg: String| -> Result<Vec<String>, TrainError> {
            Err(TrainError::Config {
                key: key.into(),
                msg,
            })
        };
        if self.embed_dim < 2 {
            return err("embed_dim", "must be >= 2".into());
        }
        if self.num_heads == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return err(
                "num_heads",
                format!("{} must divide embed_dim {}", self.num_heads, self.embed_dim),
            );
        }
        if self.rgat_layers == 0 {
            return err("rgat_layers", "must be >= 1".into());
        }
        if self.rgat_layers > 4 {
            warnings.push(format!(
                "rgat_layers = {} exceeds the studied range 1..=4",
                self.rgat_layers
            ));
        }
        if self.max_len == 0 {
            return err("max_len", "must be >= 1".into());
        }
        crate::diffusion::make_schedule(
            self.noise_scale,
            self.alpha_low,
            self.alpha_up,
            self.diff_steps,
        )
        .map_err(|e| TrainError::Config {
            key: "noise_scale/alpha_low/alpha_up/diff_steps".into(),
            msg: e.to_string(),
        })?;
        if self.t_inf > self.diff_steps {
            return err(
                "t_inf",
                format!("{} exceeds diff_steps {}", self.t_inf, self.diff_steps),
            );
        }
        if self.rebuild_k == 0 {
            return err("rebuild_k", "must be >= 1".into());
        }
        if !(self.gate_epsilon > 0.0 && self.gate_epsilon <= 1.0) {
            return err("gate_epsilon", format!("{} outside (0, 1]", self.gate_epsilon));
        }
        if self.gate_window <= 1 {
            return err("gate_window", "must exceed 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err("dropout", format!("{} outside [0, 1)", self.dropout));
        }
        if self.rounds == 0 {
            return err("rounds", "must be >= 1".into());
        }
        if self.batch_size == 0 {
            return err("batch_size", "must be >= 1".into());
        }
        if self.train_negatives == 0 {
            return err("train_negatives", "must be >= 1".into());
        }
        if self.eval_negatives == 0 {
            return err("eval_negatives", "must be >= 1".into());
        }
        if self.l2_lambda < 0.0 {
            return err("l2_lambda", "must be >= 0".into());
        }
        if self.learning_rate < 0.0 {
            return err("learning_rate", "must be >= 0".into());
        }
        Ok(warnings)
    }
}
