use std::fmt::Write as _;
use std::path::PathBuf;

use crate::encoder::EncoderKind;
use crate::error::{QtError, Result};
use crate::objective::{ContextConfig, ObjectiveKind};
use crate::optim::AdamConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub encoder: EncoderKind,
    pub emb_dim: usize,
    pub hidden_dim: usize,
    /// Maximum vocabulary size, reserved ids included.
    pub vocab_size: usize,
    pub batch_size: usize,
    pub context: ContextConfig,
    pub objective: ObjectiveKind,
    pub margin: f64,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub seed: u64,
    pub val_fraction: f64,
    pub max_sentence_len: usize,
    pub log_interval: u64,
    pub pretrained: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            encoder: EncoderKind::Gru,
            emb_dim: 300,
            hidden_dim: 1200,
            vocab_size: 50_000,
            batch_size: 400,
            context: ContextConfig::default(),
            objective: ObjectiveKind::Qt,
            margin: 1.0,
            adam: AdamConfig::default(),
            epochs: 1,
            seed: 0,
            val_fraction: 0.05,
            max_sentence_len: crate::corpus::DEFAULT_MAX_SENTENCE_LEN,
            log_interval: 100,
            pretrained: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(QtError::Config(m));
        if self.batch_size < 2 {
            return bad(format!("batch size must be >= 2, got {}", self.batch_size));
        }
        if self.emb_dim == 0 || self.hidden_dim == 0 {
            return bad("embedding and hidden dimensions must be >= 1".into());
        }
        if self.vocab_size < 3 {
            return bad(format!("vocabulary size must be >= 3, got {}", self.vocab_size));
        }
        if self.objective == ObjectiveKind::Margin && !(self.margin > 0.0) {
            return bad(format!("margin must be positive, got {}", self.margin));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("validation fraction must be in (0, 1), got {}", self.val_fraction));
        }
        if self.max_sentence_len == 0 || self.log_interval == 0 {
            return bad("maximum sentence length and log interval must be >= 1".into());
        }
        self.adam.validate()
    }

    /// Canonical `key=value` lines in a fixed order.
    pub fn to_kv(&self) -> String {
        let offsets: Vec<String> = self.context.offsets().iter().map(|o| o.to_string()).collect();
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("encoder", &self.encoder);
        kv("emb_dim", &self.emb_dim);
        kv("hidden_dim", &self.hidden_dim);
        kv("vocab_size", &self.vocab_size);
        kv("batch_size", &self.batch_size);
        kv("context", &offsets.join(","));
        kv("objective", &self.objective);
        kv("margin", &self.margin);
        kv("lr", &self.adam.lr);
        kv("beta1", &self.adam.beta1);
        kv("beta2", &self.adam.beta2);
        kv("eps", &self.adam.eps);
        kv("clip", &self.adam.clip.map_or("off".to_string(), |c| c.to_string()));
        kv("epochs", &self.epochs);
        kv("seed", &self.seed);
        kv("val_fraction", &self.val_fraction);
        kv("max_sentence_len", &self.max_sentence_len);
        kv("log_interval", &self.log_interval);
        kv("pretrained", &self.pretrained.as_ref().map_or(String::new(), |p| p.display().to_string()));
        s
    }

    /// Parses [`TrainConfig::to_kv`] output. Missing keys keep their defaults.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let line_no = n + 1;
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| QtError::Parse { line: line_no, msg: "expected key=value".into() })?;
            let num_err = || QtError::Parse { line: line_no, msg: format!("bad value for {key}: {value:?}") };
            macro_rules! num {
                () => {
                    value.parse().map_err(|_| num_err())?
                };
            }
            match key {
                "encoder" => c.encoder = value.parse()?,
                "emb_dim" => c.emb_dim = num!(),
                "hidden_dim" => c.hidden_dim = num!(),
                "vocab_size" => c.vocab_size = num!(),
                "batch_size" => c.batch_size = num!(),
                "context" => {
                    let offsets = value
                        .split(',')
                        .map(|o| o.trim().parse::<isize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| QtError::Parse { line: line_no, msg: "bad context offsets".into() })?;
                    c.context = ContextConfig::new(offsets)?;
                }
                "objective" => c.objective = value.parse()?,
                "margin" => c.margin = num!(),
                "lr" => c.adam.lr = num!(),
                "beta1" => c.adam.beta1 = num!(),
                "beta2" => c.adam.beta2 = num!(),
                "eps" => c.adam.eps = num!(),
                "clip" => c.adam.clip = if value == "off" { None } else { Some(num!()) },
                "epochs" => c.epochs = num!(),
                "seed" => c.seed = num!(),
                "val_fraction" => c.val_fraction = num!(),
                "max_sentence_len" => c.max_sentence_len = num!(),
                "log_interval" => c.log_interval = num!(),
                "pretrained" => c.pretrained = (!value.is_empty()).then(|| PathBuf::from(value)),
                _ => return Err(QtError::Parse { line: line_no, msg: format!("unknown key {key:?}") }),
            }
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_training_recipe() {
        let c = TrainConfig::default();
        assert_eq!(c.batch_size, 400);
        assert_eq!(c.context.offsets(), &[-1, 1]);
        assert_eq!(c.adam.lr, 5e-4);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn kv_round_trip() {
        let c = TrainConfig {
            encoder: EncoderKind::MultiChannel,
            context: ContextConfig::from_window(7).unwrap(),
            objective: ObjectiveKind::Margin,
            margin: 0.25,
            adam: AdamConfig { clip: Some(5.0), lr: 1e-3, ..Default::default() },
            pretrained: Some(PathBuf::from("/tmp/vectors.txt")),
            seed: u64::MAX,
            ..Default::default()
        };
        let text = c.to_kv();
        assert_eq!(TrainConfig::from_kv(&text).unwrap(), c);
        assert_eq!(TrainConfig::from_kv(&text).unwrap().to_kv(), text);
    }

    #[test]
    fn kv_errors() {
        assert!(matches!(TrainConfig::from_kv("bogus=1"), Err(QtError::Parse { line: 1, .. })));
        assert!(matches!(TrainConfig::from_kv("emb_dim=1\nbatch_size=x"), Err(QtError::Parse { line: 2, .. })));
        assert!(TrainConfig::from_kv("no equals sign").is_err());
        let c = TrainConfig { batch_size: 1, ..Default::default() };
        assert!(matches!(c.validate(), Err(QtError::Config(_))));
    }
}
