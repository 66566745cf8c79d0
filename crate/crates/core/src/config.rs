use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every tunable of the pipeline. TOML files deserialise into this with
/// missing keys taking the defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Token representation width `d_T`.
    pub text_dim: usize,
    /// Raw object feature width `d_I`.
    pub visual_dim: usize,
    /// Edge-type embedding width `d_z`.
    pub edge_dim: usize,
    /// Word-pair channel embedding width `d_l`.
    pub channel_dim: usize,
    pub max_tokens: usize,
    pub max_objects: usize,
    pub sinkhorn_inner: usize,
    pub sinkhorn_outer: usize,
    pub epsilon: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub heads: usize,
    /// Attribute-transformer layers per modality.
    pub encoder_layers: usize,
    /// Hidden layers in the channel-fusion MLP.
    pub fusion_hidden_layers: usize,
    pub sd_cap: i64,
    pub co_cap: i64,
    pub seed: u64,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub patience: usize,
    pub max_epochs: usize,
    /// Entity/relation inventory; the built-in entity list with no relations
    /// when absent.
    pub labels: Option<PathBuf>,
    /// Precomputed node embeddings; hashed embeddings when absent.
    pub embeddings: Option<PathBuf>,
    /// Co-occurrence statistics cache; counted from the input corpus when absent.
    pub pmi_cache: Option<PathBuf>,
    /// Trained prediction head checkpoint; seeded initialisation when absent.
    pub head: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            text_dim: 768,
            visual_dim: 4096,
            edge_dim: 100,
            channel_dim: 100,
            max_tokens: 70,
            max_objects: 10,
            sinkhorn_inner: 20,
            sinkhorn_outer: 5,
            epsilon: 0.1,
            alpha: 0.4,
            lambda: 0.6,
            heads: 8,
            encoder_layers: 1,
            fusion_hidden_layers: 0,
            sd_cap: 32,
            co_cap: 16,
            seed: 0,
            learning_rate: 2e-5,
            lr_decay: 0.5,
            patience: 5,
            max_epochs: 50,
            labels: None,
            embeddings: None,
            pmi_cache: None,
            head: None,
        }
    }
}

impl PipelineConfig {
    pub fn parse_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))
    }

    /// Reads a TOML file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse_toml(&text)?;
        if let Some(base) = path.parent() {
            for p in [
                &mut config.labels,
                &mut config.embeddings,
                &mut config.pmi_cache,
                &mut config.head,
            ]
            .into_iter()
            .flatten()
            {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        for (field, value) in [
            ("text_dim", self.text_dim),
            ("visual_dim", self.visual_dim),
            ("edge_dim", self.edge_dim),
            ("channel_dim", self.channel_dim),
            ("max_tokens", self.max_tokens),
            ("max_objects", self.max_objects),
            ("sinkhorn_inner", self.sinkhorn_inner),
            ("sinkhorn_outer", self.sinkhorn_outer),
            ("heads", self.heads),
            ("encoder_layers", self.encoder_layers),
            ("patience", self.patience),
        ] {
            if value == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.text_dim % self.heads != 0 {
            return Err(Error::config(
                "heads",
                format!("{} does not divide text_dim {}", self.heads, self.text_dim),
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("alpha", format!("must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", format!("must be non-negative, got {}", self.lambda)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("epsilon", format!("must be positive, got {}", self.epsilon)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(
                "learning_rate",
                format!("must be non-negative, got {}", self.learning_rate),
            ));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::config("lr_decay", format!("must lie in (0, 1], got {}", self.lr_decay)));
        }
        if self.sd_cap < 1 {
            return Err(Error::config("sd_cap", "must be at least 1"));
        }
        if self.co_cap < 0 {
            return Err(Error::config("co_cap", "must be non-negative"));
        }
        Ok(())
    }

    pub fn train_options(&self) -> crate::train::TrainOptions {
        crate::train::TrainOptions {
            learning_rate: self.learning_rate,
            lr_decay: self.lr_decay,
            patience: self.patience,
            max_epochs: self.max_epochs,
        }
    }

    pub fn align_params(&self) -> crate::ot::AlignParams {
        crate::ot::AlignParams {
            alpha: self.alpha,
            epsilon: self.epsilon,
            outer_iterations: self.sinkhorn_outer,
            inner_iterations: self.sinkhorn_inner,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!((c.text_dim, c.visual_dim, c.edge_dim, c.channel_dim), (768, 4096, 100, 100));
        assert_eq!((c.alpha, c.lambda, c.learning_rate, c.patience), (0.4, 0.6, 2e-5, 5));
    }

    #[test]
    fn toml_overrides_defaults() {
        let c = PipelineConfig::parse_toml("alpha = 1.0\nseed = 9\n").unwrap();
        assert_eq!(c.alpha, 1.0);
        assert_eq!(c.seed, 9);
        assert_eq!(c.text_dim, 768);
        let err = PipelineConfig::parse_toml("alpah = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("alpah"), "{err}");
    }

    #[test]
    fn violations_name_the_field() {
        let cases: Vec<(&str, Box<dyn Fn(&mut PipelineConfig)>)> = vec![
            ("alpha", Box::new(|c| c.alpha = 1.5)),
            ("alpha", Box::new(|c| c.alpha = f64::NAN)),
            ("lambda", Box::new(|c| c.lambda = -0.1)),
            ("heads", Box::new(|c| c.heads = 7)),
            ("text_dim", Box::new(|c| c.text_dim = 0)),
            ("epsilon", Box::new(|c| c.epsilon = 0.0)),
            ("lr_decay", Box::new(|c| c.lr_decay = 0.0)),
            ("patience", Box::new(|c| c.patience = 0)),
        ];
        for (field, mutate) in cases {
            let mut c = PipelineConfig::default();
            mutate(&mut c);
            let err = c.validate().unwrap_err();
            assert!(matches!(err, Error::Config { field: f, .. } if f == field), "{err}");
        }
    }

    #[test]
    fn relative_paths_resolve_against_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eega.toml");
        std::fs::write(&path, "labels = \"labels.txt\"\nhead = \"/abs/head.bin\"\n").unwrap();
        let c = PipelineConfig::load(&path).unwrap();
        assert_eq!(c.labels.unwrap(), dir.path().join("labels.txt"));
        assert_eq!(c.head.unwrap(), PathBuf::from("/abs/head.bin"));
    }
}
