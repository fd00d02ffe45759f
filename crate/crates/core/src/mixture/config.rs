//! TOML representation of a [`LatentConceptSystem`].
//!
//! ```toml
//! [system]
//! k = 2
//! x_dim = 1
//! pi_p = [0.6, 0.4]
//! pi_q = [0.1, 0.9]
//!
//! [gating]
//! kind = "gaussian"        # or "constant"
//! variance = 1.0
//! eta = [[-1.0], [1.0]]
//!
//! [experts.strong]
//! beta = [[1.0], [-1.0]]
//! noise_sd = 0.3
//!
//! [experts.weak_p]
//! beta = [[1.5], [-1.5]]
//! noise_sd = 0.3
//!
//! [experts.weak_q]
//! beta = [[1.7], [-1.3]]
//! noise_sd = 0.3
//! ```
//!
//! `[system.x_law]` is optional and defaults to `kind = "standard_normal"`;
//! `kind = "isotropic_normal"` takes `mean` and `sd`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CovariateLaw, ExpertParams, GatingKind, GatingParams, LatentConceptSystem};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub k: usize,
    pub x_dim: usize,
    pub pi_p: Vec<f64>,
    pub pi_q: Vec<f64>,
    #[serde(default)]
    pub x_law: CovariateLaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatingFile {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertsFile {
    pub strong: ExpertParams,
    pub weak_p: ExpertParams,
    pub weak_q: ExpertParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    pub system: SystemSection,
    pub gating: GatingFile,
    pub experts: ExpertsFile,
}

impl SystemFile {
    pub fn into_system(self) -> Result<LatentConceptSystem> {
        let SystemFile { system, gating, experts } = self;
        let gating = match gating.kind.as_str() {
            "constant" => {
                if gating.eta.is_some() || gating.variance.is_some() {
                    return Err(Error::Config("constant gating takes no eta or variance".into()));
                }
                GatingParams::constant(system.k, system.x_dim)
            }
            "gaussian" => {
                let variance =
                    gating.variance.ok_or_else(|| Error::Config("gaussian gating needs `variance`".into()))?;
                let eta = gating.eta.ok_or_else(|| Error::Config("gaussian gating needs `eta`".into()))?;
                GatingParams::new(GatingKind::Gaussian { variance }, eta)?
            }
            other => return Err(Error::Config(format!("unknown gating kind {other:?}"))),
        };
        if gating.k() != system.k {
            return Err(Error::Config(format!("k = {} but gating has {} components", system.k, gating.k())));
        }
        let strong = ExpertParams::new(experts.strong.beta, experts.strong.noise_sd)?;
        let weak_p = ExpertParams::new(experts.weak_p.beta, experts.weak_p.noise_sd)?;
        let weak_q = ExpertParams::new(experts.weak_q.beta, experts.weak_q.noise_sd)?;
        if strong.dim() != system.x_dim {
            return Err(Error::Config(format!(
                "x_dim = {} but strong experts have dimension {}",
                system.x_dim,
                strong.dim()
            )));
        }
        LatentConceptSystem::new(gating, system.pi_p, system.pi_q, strong, weak_p, weak_q, system.x_law)
    }

    pub fn from_system(s: &LatentConceptSystem) -> Self {
        let gating = match s.gating().kind() {
            GatingKind::Constant => GatingFile { kind: "constant".into(), variance: None, eta: None },
            GatingKind::Gaussian { variance } => {
                GatingFile { kind: "gaussian".into(), variance: Some(variance), eta: Some(s.gating().eta().to_vec()) }
            }
        };
        SystemFile {
            system: SystemSection {
                k: s.k(),
                x_dim: s.x_dim(),
                pi_p: s.pi_p().to_vec(),
                pi_q: s.pi_q().to_vec(),
                x_law: s.x_law().clone(),
            },
            gating,
            experts: ExpertsFile { strong: s.strong().clone(), weak_p: s.weak_p().clone(), weak_q: s.weak_q().clone() },
        }
    }
}

impl LatentConceptSystem {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SystemFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        file.into_system()
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&SystemFile::from_system(self)).expect("system serializes to TOML")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&text)
    }
}
