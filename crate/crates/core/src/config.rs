// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run configuration and its plain-text `key=value` file form.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cluster::DEFAULT_TEMPLATE_ID;
use crate::error::{Error, Result};

/// Smallest group size for which Kruskal-Wallis is run.
pub const KRUSKAL_MIN_GROUP: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileMethod {
    /// Order-statistic interpolation at h = (n - 1)q + 1.
    LinearInterpolation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusteringBackend {
    EmbeddingHclust,
    Prompt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segmentation {
    Quartile,
    Hclust,
}

macro_rules! str_enum {
    ($ty:ty { $($variant:ident => [$($name:literal),+]),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($($name)|+ => Ok(<$ty>::$variant),)+
                    other => Err(Error::InvalidArgument(format!(
                        "unknown {} {other:?}", stringify!($ty)
                    ))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let name = match self {
                    $(<$ty>::$variant => [$($name),+][0],)+
                };
                f.write_str(name)
            }
        }
    };
}

str_enum!(QuantileMethod { LinearInterpolation => ["linear_interpolation", "linear"] });
str_enum!(ClusteringBackend {
    EmbeddingHclust => ["embedding_hclust", "embedding"],
    Prompt => ["prompt"],
});
str_enum!(Segmentation { Quartile => ["quartile"], Hclust => ["hclust"] });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub alpha: f64,
    pub k_categorical: usize,
    pub k_activation: usize,
    pub min_cluster_size: usize,
    pub quantile_method: QuantileMethod,
    pub seed: u64,
    pub clustering_backend: ClusteringBackend,
    pub activation_segmentation: Segmentation,
    /// Monte Carlo replicates for Lilliefors p-values.
    pub lilliefors_replicates: usize,
    /// Sign-flip replicates for the bottom-up rise test.
    pub rise_permutations: usize,
    pub prompt_template: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            k_categorical: 5,
            k_activation: 4,
            min_cluster_size: KRUSKAL_MIN_GROUP,
            quantile_method: QuantileMethod::LinearInterpolation,
            seed: 0,
            clustering_backend: ClusteringBackend::EmbeddingHclust,
            activation_segmentation: Segmentation::Quartile,
            lilliefors_replicates: 10_000,
            rise_permutations: 2_000,
            prompt_template: DEFAULT_TEMPLATE_ID.to_string(),
        }
    }
}

impl RunConfig {
    /// Post-hoc per-comparison threshold, alpha / (k(k-1)).
    pub fn adjusted_alpha(&self) -> f64 {
        let k = self.k_categorical as f64;
        self.alpha / (k * (k - 1.0))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.k_categorical < 2 {
            return bad(format!("k_categorical must be >= 2, got {}", self.k_categorical));
        }
        if self.k_activation < 2 {
            return bad(format!("k_activation must be >= 2, got {}", self.k_activation));
        }
        if self.min_cluster_size < KRUSKAL_MIN_GROUP {
            return bad(format!(
                "min_cluster_size must be >= {KRUSKAL_MIN_GROUP} for Kruskal-Wallis, got {}",
                self.min_cluster_size
            ));
        }
        if self.lilliefors_replicates < 10_000 {
            return bad(format!(
                "lilliefors_replicates must be >= 10000, got {}",
                self.lilliefors_replicates
            ));
        }
        if self.rise_permutations == 0 {
            return bad("rise_permutations must be positive".into());
        }
        Ok(())
    }

    /// Parses `key=value` lines. Blank lines and `#` comments are ignored;
    /// keys not present keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: line_no,
                message: format!("expected key=value, got {line:?}"),
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| Error::Config {
                line: line_no,
                message: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::InvalidArgument(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "alpha" => self.alpha = num(key, value)?,
            "k_categorical" => self.k_categorical = num(key, value)?,
            "k_activation" => self.k_activation = num(key, value)?,
            "min_cluster_size" => self.min_cluster_size = num(key, value)?,
            "quantile_method" => self.quantile_method = value.parse()?,
            "seed" => self.seed = num(key, value)?,
            "clustering_backend" => self.clustering_backend = value.parse()?,
            "activation_segmentation" => self.activation_segmentation = value.parse()?,
            "lilliefors_replicates" => self.lilliefors_replicates = num(key, value)?,
            "rise_permutations" => self.rise_permutations = num(key, value)?,
            "prompt_template" => self.prompt_template = value.to_string(),
            other => return Err(Error::InvalidArgument(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Canonical `key=value` rendering; parsing it yields the same config.
    pub fn to_kv_string(&self) -> String {
        format!(
            "alpha={}\nk_categorical={}\nk_activation={}\nmin_cluster_size={}\n\
             quantile_method={}\nseed={}\nclustering_backend={}\n\
             activation_segmentation={}\nlilliefors_replicates={}\n\
             rise_permutations={}\nprompt_template={}\n",
            self.alpha,
            self.k_categorical,
            self.k_activation,
            self.min_cluster_size,
            self.quantile_method,
            self.seed,
            self.clustering_backend,
            self.activation_segmentation,
            self.lilliefors_replicates,
            self.rise_permutations,
            self.prompt_template,
        )
    }
}
