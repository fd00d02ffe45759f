//! TOML representation of HMM mixtures for `hmm check`.
//!
//! ```toml
//! max_seq_len = 4          # optional, certificate query length
//!
//! [[hmm]]
//! name = "a"               # optional
//! pi = [1.0]
//! emission_x = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5]]
//! emission_y = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5]]
//!
//! [[hmm.components]]
//! transition = [[0.9, 0.1], [0.2, 0.8]]
//! start = [0.5, 0.5]       # optional, uniform by default
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmissionParams, HmmMixture, HmmParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSection {
    pub transition: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub pi: Vec<f64>,
    pub emission_x: Vec<Vec<f64>>,
    pub emission_y: Vec<Vec<f64>>,
    pub components: Vec<ComponentSection>,
}

impl MixtureSection {
    pub fn build(&self) -> Result<HmmMixture> {
        let components = self
            .components
            .iter()
            .map(|c| match &c.start {
                Some(s) => HmmParams::new(c.transition.clone(), s.clone()),
                None => HmmParams::with_uniform_start(c.transition.clone()),
            })
            .collect::<Result<Vec<_>>>()?;
        HmmMixture::new(
            components,
            self.pi.clone(),
            EmissionParams::new(self.emission_x.clone())?,
            EmissionParams::new(self.emission_y.clone())?,
        )
    }

    pub fn from_mixture(name: Option<String>, mix: &HmmMixture) -> Self {
        Self {
            name,
            pi: mix.pi().to_vec(),
            emission_x: mix.emission_x().matrix().to_vec(),
            emission_y: mix.emission_y().matrix().to_vec(),
            components: mix
                .components()
                .iter()
                .map(|c| ComponentSection { transition: c.transition().to_vec(), start: Some(c.start().to_vec()) })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmmFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_seq_len: Option<usize>,
    pub hmm: Vec<MixtureSection>,
}

impl HmmFile {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("HMM file serializes")
    }

    /// Builds every mixture with its display name (`mixture_<i>` when unnamed).
    pub fn mixtures(&self) -> Result<Vec<(String, HmmMixture)>> {
        self.hmm
            .iter()
            .enumerate()
            .map(|(i, s)| Ok((s.name.clone().unwrap_or_else(|| format!("mixture_{i}")), s.build()?)))
            .collect()
    }
}
