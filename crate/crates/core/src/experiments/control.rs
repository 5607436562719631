use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate_at, Controlled, FieldHandle, IntegrateOptions};
use crate::field::VectorField;

use super::{learn_stack, prepare, ExperimentConfig, ExperimentError, GroundTruthModel, ModelId};

/// Constant controls `(u₁, u₂) ∈ [0,1]²` on the contagion model with cost
/// `x₁(T) + x₂(T) + α(u₁ + u₂)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlProblem {
    pub truth: GroundTruthModel,
    pub horizon: f64,
    pub alpha: f64,
    pub x_init: Vec<f64>,
    /// Grid points per control axis.
    pub resolution: usize,
    /// RK4 step for every simulation.
    pub step: f64,
}

impl Default for ControlProblem {
    fn default() -> Self {
        Self {
            truth: GroundTruthModel::new(ModelId::Disease),
            horizon: 20.0,
            alpha: 0.4,
            x_init: vec![0.5, 0.4],
            resolution: 101,
            step: 1e-2,
        }
    }
}

impl ControlProblem {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.truth.id != ModelId::Disease {
            return bad(format!("control requires the disease model, got '{}'", self.truth.id.name()));
        }
        self.truth.resolved_params()?;
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon {} must be positive", self.horizon));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("cost weight {} must be nonnegative", self.alpha));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad(format!("step {} must be positive", self.step));
        }
        if self.resolution < 2 {
            return bad(format!("control grid resolution {} must be at least 2", self.resolution));
        }
        let omega = self.truth.id.domain();
        if self.x_init.len() != omega.n() || !omega.membership(&self.x_init, 0.0)? {
            return bad(format!("initial state {:?} is not in the model domain", self.x_init));
        }
        Ok(())
    }

    fn controls(&self) -> Vec<[f64; 2]> {
        let r = self.resolution;
        let at = |i: usize| i as f64 / (r - 1) as f64;
        (0..r).flat_map(|i| (0..r).map(move |j| [at(i), at(j)])).collect()
    }

    fn final_state(&self, f: &(impl VectorField + ?Sized), u: [f64; 2]) -> Option<Vec<f64>> {
        let c = Controlled { base: f, u: u.to_vec() };
        let opts = IntegrateOptions { step: self.step, ..IntegrateOptions::default() };
        let tr = integrate_at(&c, &self.x_init, &[self.horizon], &opts).ok()?;
        let x = tr.final_state().to_vec();
        x.iter().all(|v| v.is_finite()).then_some(x)
    }

    fn cost(&self, x: &[f64], u: [f64; 2]) -> f64 {
        x[0] + x[1] + self.alpha * (u[0] + u[1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlOutcome {
    pub u: [f64; 2],
    pub planned_cost: f64,
    /// `x(T)` under the true field with the chosen controls.
    pub realized_state: Vec<f64>,
    pub realized_cost: f64,
    /// Grid points whose planning simulation diverged.
    pub skipped: usize,
}

/// Exhaustive grid argmin of the planned cost under `planner`, ties broken
/// by the smaller `u₁ + u₂`, then the smaller `u₁`.
pub fn optimal_control_search(
    cp: &ControlProblem,
    planner: &(impl VectorField + Sync + ?Sized),
) -> Result<ControlOutcome, ExperimentError> {
    cp.validate()?;
    if planner.dim() != 2 {
        return Err(ExperimentError::Config(format!("planning field has dimension {}, expected 2", planner.dim())));
    }
    let costs: Vec<Option<f64>> = cp
        .controls()
        .into_par_iter()
        .map(|u| cp.final_state(planner, u).map(|x| cp.cost(&x, u)).filter(|c| c.is_finite()))
        .collect();
    let controls = cp.controls();
    let mut best: Option<(f64, [f64; 2])> = None;
    for (c, u) in costs.iter().zip(&controls) {
        let Some(c) = *c else { continue };
        let better = match best {
            None => true,
            Some((bc, bu)) => (c, u[0] + u[1], u[0]) < (bc, bu[0] + bu[1], bu[0]),
        };
        if better {
            best = Some((c, *u));
        }
    }
    let skipped = costs.iter().filter(|c| c.is_none()).count();
    let (planned_cost, u) = best.ok_or(ExperimentError::NoAdmissibleControl)?;
    let realized = GroundTruthModel { id: ModelId::DiseaseControlled, params: cp.truth.params.clone() }
        .with_param("u1", u[0])
        .with_param("u2", u[1]);
    let truth = FieldHandle::Closed(realized.closed_form()?);
    let opts = IntegrateOptions { step: cp.step, ..IntegrateOptions::default() };
    let tr = integrate_at(&truth, &cp.x_init, &[cp.horizon], &opts)?;
    let realized_state = tr.final_state().to_vec();
    let realized_cost = cp.cost(&realized_state, u);
    Ok(ControlOutcome { u, planned_cost, realized_state, realized_cost, skipped })
}

/// Control study: plan with models learned on each stack and with the truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlConfig {
    #[serde(default)]
    pub problem: ControlProblem,
    pub experiment: ExperimentConfig,
    /// Candidate degree of the planning models.
    pub degree: u32,
    /// Stacks to plan with, in order; every stack of `experiment` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stacks: Option<Vec<String>>,
}

impl ControlConfig {
    pub fn shipped() -> Self {
        Self { problem: ControlProblem::default(), experiment: ExperimentConfig::disease(), degree: 3, stacks: None }
    }

    pub fn from_json(s: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs serialize")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.problem.validate()?;
        self.experiment.validate()?;
        if self.experiment.model.id != ModelId::Disease {
            return Err(ExperimentError::Config("control experiments learn the disease model".into()));
        }
        for name in self.stack_names() {
            if self.experiment.stack(&name).is_none() {
                return Err(ExperimentError::Config(format!("unknown stack '{name}'")));
            }
        }
        Ok(())
    }

    fn stack_names(&self) -> Vec<String> {
        match &self.stacks {
            Some(s) => s.clone(),
            None => self.experiment.stacks.iter().map(|s| s.name.clone()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlRow {
    /// Stack name, or `truth` for planning with the true field.
    pub label: String,
    pub truth: bool,
    pub outcome: ControlOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlTable {
    pub rows: Vec<ControlRow>,
}

impl ControlTable {
    pub fn row(&self, label: &str) -> Option<&ControlRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// One line per row: label, controls, planned cost and realized state.
    pub fn to_text(&self) -> String {
        let mut s = String::from("planner,u1,u2,planned_cost,x1_T,x2_T\n");
        for r in &self.rows {
            let o = &r.outcome;
            s.push_str(&format!(
                "{},{:.2},{:.2},{:.4},{:.4},{:.4}\n",
                r.label, o.u[0], o.u[1], o.planned_cost, o.realized_state[0], o.realized_state[1]
            ));
        }
        s
    }
}

/// Learns one planning model per stack, searches controls with each and with
/// the true field (last row).
pub fn run_control(cfg: &ControlConfig) -> Result<ControlTable, ExperimentError> {
    cfg.validate()?;
    let prepared = prepare(&cfg.experiment).map_err(ExperimentError::at("dataset"))?;
    let mut rows = Vec::new();
    for name in cfg.stack_names() {
        let stack = cfg.experiment.stack(&name).expect("validated");
        let model = learn_stack(&cfg.experiment, &prepared, stack, cfg.degree)
            .map_err(ExperimentError::at(format!("learn {name}")))?;
        let planner = FieldHandle::poly(model.field);
        let outcome =
            optimal_control_search(&cfg.problem, &planner).map_err(ExperimentError::at(format!("control {name}")))?;
        rows.push(ControlRow { label: name, truth: false, outcome });
    }
    let truth = FieldHandle::Closed(cfg.problem.truth.closed_form()?);
    let outcome = optimal_control_search(&cfg.problem, &truth).map_err(ExperimentError::at("control truth"))?;
    rows.push(ControlRow { label: "truth".into(), truth: true, outcome });
    Ok(ControlTable { rows })
}

/// Whether the realized `x₁(T) + x₂(T)` of the learned rows, in order, never
/// increases by more than `slack`.
pub fn monotone_quality(rows: &[ControlRow], slack: f64) -> bool {
    let sums: Vec<f64> =
        rows.iter().filter(|r| !r.truth).map(|r| r.outcome.realized_state.iter().sum()).collect();
    sums.windows(2).all(|w| w[1] <= w[0] + slack)
}
