use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conic::SolverOptions;
use crate::dynamics::{DerivativeSource, NoiseModel, Schedule};
use crate::learn::learn_solver_options;
use crate::poly::MultiPoly;
use crate::semialg::BasicSemialgebraicSet;
use crate::sideinfo::{
    CompositeTerm, InterpPoint, MonRegion, Sign, SideInfo, SideInfoItem, SignRegion, SymGenerator,
};

use super::{ExperimentError, GroundTruthModel, ModelId};

/// An axis-aligned box `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn to_set(&self) -> Result<BasicSemialgebraicSet, ExperimentError> {
        Ok(BasicSemialgebraicSet::box_set(&self.lo, &self.hi)?)
    }
}

/// Where the training trajectories start and when they are sampled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleSpec {
    Explicit { trajectories: Vec<Schedule> },
    /// `count` initial states drawn uniformly from `[lo, hi]` with their own
    /// seed, all sampled at `times`.
    Uniform { count: usize, lo: Vec<f64>, hi: Vec<f64>, times: Vec<f64>, seed: u64 },
}

impl ScheduleSpec {
    pub fn resolve(&self) -> Result<Vec<Schedule>, ExperimentError> {
        match self {
            ScheduleSpec::Explicit { trajectories } => Ok(trajectories.clone()),
            ScheduleSpec::Uniform { count, lo, hi, times, seed } => {
                if lo.len() != hi.len() || lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
                    return Err(ExperimentError::Config("uniform schedule needs lo < hi on every axis".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Ok((0..*count)
                    .map(|_| Schedule {
                        x0: lo.iter().zip(hi).map(|(&l, &h)| rng.random_range(l..h)).collect(),
                        times: times.clone(),
                    })
                    .collect())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    #[serde(default)]
    pub model: NoiseModel,
    #[serde(default)]
    pub derivative: DerivativeSource,
}

/// A named intersection of side-information items.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackSpec {
    pub name: String,
    pub items: Vec<String>,
}

fn default_sup_resolution() -> usize {
    50
}
fn default_traj_resolution() -> usize {
    11
}
fn default_step() -> f64 {
    crate::dynamics::DEFAULT_STEP
}
fn default_grid_resolution() -> usize {
    25
}

/// How learned models are compared with the ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    /// Horizon `T` of the trajectory distance.
    pub horizon: f64,
    #[serde(default = "default_sup_resolution")]
    pub sup_resolution: usize,
    #[serde(default = "default_traj_resolution")]
    pub traj_resolution: usize,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_grid_resolution")]
    pub grid_resolution: usize,
    /// Region for distances and field grids; Ω when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<BoxDomain>,
}

fn yes() -> bool {
    true
}

/// A full learning experiment: ground truth, training data, candidate
/// degrees, side-information stacks and diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: GroundTruthModel,
    /// Ω for learning; the model's own domain when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<BoxDomain>,
    pub schedule: ScheduleSpec,
    pub noise: NoiseSpec,
    /// Noise seed.
    pub seed: u64,
    pub degrees: Vec<u32>,
    /// Components pinned to known polynomials.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fixed: Vec<Option<MultiPoly>>,
    #[serde(default)]
    pub side_info: BTreeMap<String, SideInfoItem>,
    pub stacks: Vec<StackSpec>,
    #[serde(default = "learn_solver_options")]
    pub solver: SolverOptions,
    #[serde(default = "yes")]
    pub strict: bool,
    pub metrics: MetricSpec,
}

fn safe_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs serialize")
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn domain_set(&self) -> Result<BasicSemialgebraicSet, ExperimentError> {
        match &self.domain {
            Some(b) => b.to_set(),
            None => Ok(self.model.id.domain()),
        }
    }

    pub fn metric_domain(&self) -> Result<BasicSemialgebraicSet, ExperimentError> {
        match &self.metrics.domain {
            Some(b) => b.to_set(),
            None => self.domain_set(),
        }
    }

    pub fn n(&self) -> usize {
        self.model.id.domain().n()
    }

    pub fn stack(&self, name: &str) -> Option<&StackSpec> {
        self.stacks.iter().find(|s| s.name == name)
    }

    pub fn stack_items(&self, stack: &StackSpec) -> Result<Vec<SideInfoItem>, ExperimentError> {
        stack
            .items
            .iter()
            .map(|k| {
                self.side_info
                    .get(k)
                    .cloned()
                    .ok_or_else(|| ExperimentError::Config(format!("stack '{}' uses unknown item '{k}'", stack.name)))
            })
            .collect()
    }

    /// Checks everything that can be checked without solving.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if !safe_name(&self.name) {
            return bad(format!("experiment name '{}' must be alphanumeric, '_' or '-'", self.name));
        }
        self.model.resolved_params()?;
        let n = self.n();
        let domain = self.domain_set()?;
        if domain.n() != n {
            return bad(format!("domain has dimension {}, model has {n}", domain.n()));
        }
        self.metric_domain()?;
        let schedule = self.schedule.resolve()?;
        if schedule.is_empty() {
            return bad("schedule is empty".into());
        }
        for s in &schedule {
            if s.x0.len() != n {
                return bad(format!("initial state {:?} does not have dimension {n}", s.x0));
            }
        }
        if !(self.noise.sigma >= 0.0 && self.noise.sigma.is_finite()) {
            return bad(format!("noise scale {} must be a nonnegative number", self.noise.sigma));
        }
        if self.degrees.is_empty() {
            return bad("at least one candidate degree is required".into());
        }
        if !self.fixed.is_empty() && self.fixed.len() != n {
            return bad(format!("'fixed' lists {} components, expected {n}", self.fixed.len()));
        }
        for (key, item) in &self.side_info {
            if !safe_name(key) {
                return bad(format!("side-information key '{key}' must be alphanumeric, '_' or '-'"));
            }
            item.info.validate(n).map_err(|e| ExperimentError::Config(format!("side information '{key}': {e}")))?;
            if item.degree() % 2 != 0 {
                return bad(format!("side information '{key}' has odd multiplier degree {}", item.degree()));
            }
        }
        if self.stacks.is_empty() {
            return bad("at least one stack is required".into());
        }
        let mut seen = BTreeSet::new();
        for s in &self.stacks {
            if !safe_name(&s.name) {
                return bad(format!("stack name '{}' must be alphanumeric, '_' or '-'", s.name));
            }
            if !seen.insert(&s.name) {
                return bad(format!("duplicate stack name '{}'", s.name));
            }
            self.stack_items(s)?;
        }
        let m = &self.metrics;
        if !(m.horizon > 0.0 && m.horizon.is_finite()) || !(m.step > 0.0 && m.step.is_finite()) {
            return bad("metric horizon and step must be positive".into());
        }
        if m.sup_resolution < 2 || m.traj_resolution < 2 || m.grid_resolution < 2 {
            return bad("metric resolutions must be at least 2".into());
        }
        Ok(())
    }

    /// The shipped configuration with the given name.
    pub fn shipped(name: &str) -> Option<Self> {
        match name {
            "disease" => Some(Self::disease()),
            "pendulum" => Some(Self::pendulum()),
            "tumor" => Some(Self::tumor()),
            _ => None,
        }
    }

    /// Contagion model: one trajectory from (0.7, 0.3) sampled at t = 1..20,
    /// derivative noise 1e-4, degrees 3 and 2, stacks growing from none to
    /// Interp ∩ Inv ∩ Mon.
    pub fn disease() -> Self {
        let unit = BasicSemialgebraicSet::box_set(&[0.0, 0.0], &[1.0, 1.0]).expect("valid box");
        let mut side_info = BTreeMap::new();
        side_info.insert("interp".to_string(), origin_equilibrium().into());
        side_info.insert("inv".to_string(), SideInfo::Inv { sets: vec![unit.clone()] }.into());
        side_info.insert(
            "mon".to_string(),
            SideInfo::Mon {
                regions: vec![
                    MonRegion { component: 1, variable: 0, nonneg: Some(unit.clone()), nonpos: None },
                    MonRegion { component: 0, variable: 1, nonneg: Some(unit), nonpos: None },
                ],
            }
            .into(),
        );
        Self {
            name: "disease".into(),
            model: GroundTruthModel::new(ModelId::Disease),
            domain: None,
            schedule: ScheduleSpec::Explicit {
                trajectories: vec![Schedule { x0: vec![0.7, 0.3], times: (1..=20).map(f64::from).collect() }],
            },
            noise: NoiseSpec { sigma: 1e-4, model: NoiseModel::Derivative, derivative: DerivativeSource::Exact },
            seed: 0,
            degrees: vec![3, 2],
            fixed: Vec::new(),
            side_info,
            stacks: stacks(&[
                ("none", &[]),
                ("interp", &["interp"]),
                ("interp_inv", &["interp", "inv"]),
                ("interp_inv_mon", &["interp", "inv", "mon"]),
            ]),
            solver: learn_solver_options(),
            strict: true,
            metrics: MetricSpec {
                horizon: 20.0,
                sup_resolution: default_sup_resolution(),
                traj_resolution: default_traj_resolution(),
                step: default_step(),
                grid_resolution: default_grid_resolution(),
                domain: None,
            },
        }
    }

    /// Pendulum: two trajectories from (π/4, 0) and (9π/10, 0) sampled at
    /// t = 3i/5, noise 1e-2 on the (θ, θ̇, θ̈) triplets, degree 5 with
    /// p₁ = θ̇ pinned.
    pub fn pendulum() -> Self {
        let times: Vec<f64> = (0..5).map(|i| 3.0 * f64::from(i) / 5.0).collect();
        let neg = vec![vec![-1.0, 0.0], vec![0.0, -1.0]];
        let mut side_info = BTreeMap::new();
        side_info.insert(
            "sym".to_string(),
            SideInfo::Sym { generators: vec![SymGenerator { sigma: neg.clone(), rho: neg }] }.into(),
        );
        side_info.insert(
            "pos".to_string(),
            SideInfoItem::with_degree(
                SideInfo::Pos {
                    regions: vec![SignRegion {
                        component: 1,
                        nonneg: Some(BasicSemialgebraicSet::box_set(&[-PI, -PI], &[0.0, PI]).expect("valid box")),
                        nonpos: Some(BasicSemialgebraicSet::box_set(&[0.0, -PI], &[PI, PI]).expect("valid box")),
                    }],
                },
                4,
            ),
        );
        side_info.insert("ham".to_string(), SideInfo::Ham.into());
        Self {
            name: "pendulum".into(),
            model: GroundTruthModel::new(ModelId::Pendulum),
            domain: None,
            schedule: ScheduleSpec::Explicit {
                trajectories: vec![
                    Schedule { x0: vec![PI / 4.0, 0.0], times: times.clone() },
                    Schedule { x0: vec![9.0 * PI / 10.0, 0.0], times },
                ],
            },
            noise: NoiseSpec { sigma: 1e-2, model: NoiseModel::Triplet, derivative: DerivativeSource::Exact },
            seed: 0,
            degrees: vec![5],
            fixed: vec![Some(MultiPoly::var(2, 1)), None],
            side_info,
            stacks: stacks(&[
                ("none", &[]),
                ("sym", &["sym"]),
                ("sym_pos", &["sym", "pos"]),
                ("sym_pos_ham", &["sym", "pos", "ham"]),
            ]),
            solver: learn_solver_options(),
            strict: true,
            metrics: MetricSpec {
                horizon: 3.0,
                sup_resolution: default_sup_resolution(),
                traj_resolution: default_traj_resolution(),
                step: default_step(),
                grid_resolution: default_grid_resolution(),
                domain: None,
            },
        }
    }

    /// Tumor growth: three trajectories from uniform initial states in
    /// [0.1, 1.9]² sampled at t = i/20, i < 20, derivative noise 1e-4,
    /// degree 5. Distances are measured on [0.1, 2]², away from the
    /// singularity of the true field at K = 0.
    pub fn tumor() -> Self {
        let omega = BasicSemialgebraicSet::box_set(&[0.0, 0.0], &[2.0, 2.0]).expect("valid box");
        let (n, k) = (MultiPoly::var(2, 0), MultiPoly::var(2, 1));
        let mut side_info = BTreeMap::new();
        // N ∂p₁/∂N - p₁ ≤ 0: the specific growth rate decreases in N.
        side_info.insert(
            "posmon".to_string(),
            SideInfoItem::with_degree(
                SideInfo::Composite {
                    terms: vec![
                        CompositeTerm { weight: n.clone(), component: 0, derivative: Some(0) },
                        CompositeTerm { weight: MultiPoly::constant(2, -1.0), component: 0, derivative: None },
                    ],
                    offset: None,
                    region: omega.clone(),
                    sign: Sign::Nonpos,
                },
                4,
            ),
        );
        // Invariance of the nonnegative orthant, certified on the two facets
        // inside Ω; the radius-2 ball cuts each facet to its segment in Ω.
        let orthant = BasicSemialgebraicSet::new(2, vec![n.clone(), k.clone()], vec![])
            .expect("valid set")
            .with_archimedean_radius(Some(2.0))
            .with_bounds(vec![0.0, 0.0], vec![2.0, 2.0]);
        side_info.insert("inv".to_string(), SideInfoItem::with_degree(SideInfo::Inv { sets: vec![orthant] }, 4));
        let above = omega.clone().with_inequality(&k - &n).expect("same dimension");
        let below = omega.with_inequality(&n - &k).expect("same dimension");
        side_info.insert(
            "pos".to_string(),
            SideInfoItem::with_degree(
                SideInfo::Pos { regions: vec![SignRegion { component: 0, nonneg: Some(above), nonpos: Some(below) }] },
                4,
            ),
        );
        side_info.insert("interp".to_string(), origin_equilibrium().into());
        Self {
            name: "tumor".into(),
            model: GroundTruthModel::new(ModelId::Tumor),
            domain: None,
            schedule: ScheduleSpec::Uniform {
                count: 3,
                lo: vec![0.1, 0.1],
                hi: vec![1.9, 1.9],
                times: (0..20).map(|i| f64::from(i) / 20.0).collect(),
                seed: 0,
            },
            noise: NoiseSpec { sigma: 1e-4, model: NoiseModel::Derivative, derivative: DerivativeSource::Exact },
            seed: 0,
            degrees: vec![5],
            fixed: Vec::new(),
            side_info,
            stacks: stacks(&[
                ("none", &[]),
                ("posmon", &["posmon"]),
                ("posmon_inv", &["posmon", "inv"]),
                ("posmon_inv_pos", &["posmon", "inv", "pos"]),
                ("posmon_inv_pos_interp", &["posmon", "inv", "pos", "interp"]),
            ]),
            solver: learn_solver_options(),
            strict: true,
            metrics: MetricSpec {
                horizon: 1.0,
                sup_resolution: default_sup_resolution(),
                traj_resolution: default_traj_resolution(),
                step: default_step(),
                grid_resolution: default_grid_resolution(),
                domain: Some(BoxDomain { lo: vec![0.1, 0.1], hi: vec![2.0, 2.0] }),
            },
        }
    }
}

fn origin_equilibrium() -> SideInfo {
    SideInfo::Interp { points: vec![InterpPoint { x: vec![0.0, 0.0], y: vec![0.0, 0.0] }] }
}

fn stacks(list: &[(&str, &[&str])]) -> Vec<StackSpec> {
    list.iter()
        .map(|(name, items)| StackSpec { name: name.to_string(), items: items.iter().map(|s| s.to_string()).collect() })
        .collect()
}
