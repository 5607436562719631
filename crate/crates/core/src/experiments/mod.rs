//! Named ground truths, the shipped experiment configurations, the batch
//! runner that writes models and diagnostics to disk, and the constant-control
//! grid search on the contagion model.

mod config;
mod control;
mod grid;
mod run;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{ClosedForm, DynamicsError, FieldHandle};
use crate::learn::LearnError;
use crate::semialg::{BasicSemialgebraicSet, SetError};
use crate::sideinfo::SideInfoError;

pub use config::{
    BoxDomain, ExperimentConfig, MetricSpec, NoiseSpec, ScheduleSpec, StackSpec,
};
pub use control::{
    monotone_quality, optimal_control_search, run_control, ControlConfig, ControlOutcome, ControlProblem, ControlRow,
    ControlTable,
};
pub use grid::{export_field_grid, read_field_grid, FieldGrid};
pub use run::{
    learn_stack, prepare, run_experiment, ExperimentReport, FailureRecord, ManifestEntry, ModelReport, Prepared,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<ExperimentError>,
    },
    #[error("every control grid point diverged under the planning field")]
    NoAdmissibleControl,
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    SideInfo(#[from] SideInfoError),
    #[error(transparent)]
    Set(#[from] SetError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ExperimentError {
    /// The error behind any stage wrappers.
    pub fn root(&self) -> &ExperimentError {
        match self {
            ExperimentError::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub(crate) fn at(stage: impl Into<String>) -> impl FnOnce(ExperimentError) -> ExperimentError {
        let stage = stage.into();
        move |e| ExperimentError::Stage { stage, source: Box::new(e) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelId {
    Disease,
    Pendulum,
    Tumor,
    DiseaseControlled,
}

impl ModelId {
    pub const ALL: [ModelId; 4] = [ModelId::Disease, ModelId::Pendulum, ModelId::Tumor, ModelId::DiseaseControlled];

    pub fn name(self) -> &'static str {
        match self {
            ModelId::Disease => "disease",
            ModelId::Pendulum => "pendulum",
            ModelId::Tumor => "tumor",
            ModelId::DiseaseControlled => "disease_controlled",
        }
    }

    fn defaults(self) -> &'static [(&'static str, f64)] {
        match self {
            ModelId::Disease => &[("a1", 0.05), ("b1", 0.1), ("a2", 0.05), ("b2", 0.1)],
            ModelId::DiseaseControlled => &[("a1", 0.05), ("b1", 0.1), ("a2", 0.05), ("b2", 0.1), ("u1", 0.0), ("u2", 0.0)],
            ModelId::Pendulum => &[("g", 1.0), ("l", 1.0), ("m", 1.0)],
            ModelId::Tumor => &[("mu", 0.1), ("nu", 0.5), ("gamma", 0.1), ("omega", 0.2)],
        }
    }

    /// Ω for the model: `[0,1]²` for the contagion models, `[-π,π]²` for the
    /// pendulum and `[0,2]²` for the tumor.
    pub fn domain(self) -> BasicSemialgebraicSet {
        let (lo, hi) = match self {
            ModelId::Disease | ModelId::DiseaseControlled => ([0.0, 0.0], [1.0, 1.0]),
            ModelId::Pendulum => ([-PI, -PI], [PI, PI]),
            ModelId::Tumor => ([0.0, 0.0], [2.0, 2.0]),
        };
        BasicSemialgebraicSet::box_set(&lo, &hi).expect("valid box")
    }
}

impl std::str::FromStr for ModelId {
    type Err = ExperimentError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelId::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| ExperimentError::Config(format!("unknown model id '{s}'")))
    }
}

/// A ground-truth model with parameter overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthModel {
    pub id: ModelId,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
}

impl GroundTruthModel {
    pub fn new(id: ModelId) -> Self {
        Self { id, params: BTreeMap::new() }
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    /// Defaults merged with the overrides, after validation.
    pub fn resolved_params(&self) -> Result<BTreeMap<String, f64>, ExperimentError> {
        let mut out: BTreeMap<String, f64> = self.id.defaults().iter().map(|&(k, v)| (k.to_string(), v)).collect();
        for (k, &v) in &self.params {
            if !out.contains_key(k) {
                return Err(ExperimentError::Config(format!("model '{}' has no parameter '{k}'", self.id.name())));
            }
            if !v.is_finite() {
                return Err(ExperimentError::Config(format!("parameter '{k}' = {v} is not finite")));
            }
            out.insert(k.clone(), v);
        }
        for (k, &v) in &out {
            let controls = k == "u1" || k == "u2";
            if controls && v < 0.0 || !controls && v <= 0.0 {
                let need = if controls { "nonnegative" } else { "positive" };
                return Err(ExperimentError::Config(format!("parameter '{k}' = {v} must be {need}")));
            }
        }
        Ok(out)
    }

    pub fn closed_form(&self) -> Result<ClosedForm, ExperimentError> {
        let p = self.resolved_params()?;
        Ok(match self.id {
            ModelId::Disease | ModelId::DiseaseControlled => ClosedForm::Disease {
                a1: p["a1"],
                b1: p["b1"],
                a2: p["a2"],
                b2: p["b2"],
                u1: p.get("u1").copied().unwrap_or(0.0),
                u2: p.get("u2").copied().unwrap_or(0.0),
            },
            ModelId::Pendulum => ClosedForm::Pendulum { g: p["g"], l: p["l"], m: p["m"] },
            ModelId::Tumor => ClosedForm::Tumor { mu: p["mu"], nu: p["nu"], gamma: p["gamma"], omega: p["omega"] },
        })
    }
}

/// Closed-form evaluator of a named model and its domain Ω.
pub fn ground_truth(
    id: ModelId,
    overrides: &BTreeMap<String, f64>,
) -> Result<(FieldHandle, BasicSemialgebraicSet), ExperimentError> {
    let model = GroundTruthModel { id, params: overrides.clone() };
    Ok((FieldHandle::Closed(model.closed_form()?), id.domain()))
}

#[cfg(test)]
mod tests;
