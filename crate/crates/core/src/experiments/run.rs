use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conic::SolveStatus;
use crate::dynamics::{
    sample_dataset, sup_distance, trajectory_distance, write_dataset_csv, Dataset, FieldHandle, IntegrateOptions,
    SampleOptions, Schedule,
};
use crate::learn::{fit, FitOptions, LearnedModel, LearningProblem, Loss, ModelFile};
use crate::semialg::BasicSemialgebraicSet;
use crate::sideinfo::ResidualReport;
use crate::sos::VerificationReport;

use super::{export_field_grid, ExperimentConfig, ExperimentError, StackSpec};

/// Ground truth and training data for one configuration.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub truth: FieldHandle,
    pub domain: BasicSemialgebraicSet,
    pub metric_domain: BasicSemialgebraicSet,
    pub schedule: Vec<Schedule>,
    pub dataset: Dataset,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, ExperimentError> {
    cfg.validate()?;
    let truth = FieldHandle::Closed(cfg.model.closed_form()?);
    let schedule = cfg.schedule.resolve()?;
    let opts = SampleOptions {
        noise: cfg.noise.model,
        derivative: cfg.noise.derivative,
        integrate: IntegrateOptions::default(),
    };
    let dataset = sample_dataset(&truth, cfg.model.id.name(), &schedule, cfg.noise.sigma, cfg.seed, &opts)?;
    Ok(Prepared { truth, domain: cfg.domain_set()?, metric_domain: cfg.metric_domain()?, schedule, dataset })
}

/// Fits one stack at one degree.
pub fn learn_stack(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    stack: &StackSpec,
    degree: u32,
) -> Result<LearnedModel, ExperimentError> {
    let problem = LearningProblem {
        data: prepared.dataset.clone(),
        n: cfg.n(),
        degree,
        fixed: cfg.fixed.clone(),
        side_infos: cfg.stack_items(stack)?,
        loss: Loss::L2Squared,
        domain: prepared.domain.clone(),
        l1_penalty: 0.0,
    };
    let opts = FitOptions { solver: cfg.solver.clone(), strict: cfg.strict, ..FitOptions::default() };
    Ok(fit(&problem, &opts)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateSummary {
    pub name: String,
    #[serde(flatten)]
    pub report: VerificationReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub stack: String,
    pub degree: u32,
    pub items: Vec<String>,
    pub model_file: String,
    pub grid_file: String,
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub residuals: Vec<ResidualReport>,
    pub certificates: Vec<CertificateSummary>,
    pub sup_distance: f64,
    pub trajectory_distance: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the output directory.
    pub path: String,
    pub kind: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub stage: String,
    pub message: String,
}

/// Written to `report.json` in the output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub seed: u64,
    pub config_sha256: String,
    pub models: Vec<ModelReport>,
    pub files: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureRecord>,
}

pub const REPORT_FILE: &str = "report.json";

impl ExperimentReport {
    pub fn load(dir: &Path) -> Result<Self, ExperimentError> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join(REPORT_FILE))?)?)
    }

    /// Checks that every listed file exists with the recorded digest.
    pub fn verify_files(&self, dir: &Path) -> Result<(), ExperimentError> {
        for f in &self.files {
            let bytes = fs::read(dir.join(&f.path))?;
            if sha256_hex(&bytes) != f.sha256 {
                return Err(ExperimentError::Config(format!("{} does not match its recorded digest", f.path)));
            }
        }
        Ok(())
    }

    pub fn model(&self, stack: &str, degree: u32) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.stack == stack && m.degree == degree)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Output<'a> {
    dir: &'a Path,
}

impl Output<'_> {
    fn write(&self, rel: &str, kind: &str, bytes: &[u8]) -> Result<ManifestEntry, ExperimentError> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        Ok(ManifestEntry { path: rel.to_string(), kind: kind.to_string(), sha256: sha256_hex(bytes) })
    }
}

struct JobOutput {
    report: ModelReport,
    files: Vec<ManifestEntry>,
}

fn run_job(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    out: &Output,
    stack: &StackSpec,
    degree: u32,
) -> Result<JobOutput, ExperimentError> {
    let tag = format!("{}_deg{degree}", stack.name);
    let model = learn_stack(cfg, prepared, stack, degree).map_err(ExperimentError::at(format!("learn {tag}")))?;
    let field = FieldHandle::poly(model.field.clone());
    let m = &cfg.metrics;
    let (sup, traj) = (|| -> Result<(f64, f64), ExperimentError> {
        let sup = sup_distance(&field, &prepared.truth, &prepared.metric_domain, m.sup_resolution)?;
        let traj =
            trajectory_distance(&field, &prepared.truth, &prepared.metric_domain, m.horizon, m.traj_resolution, m.step)?;
        Ok((sup, traj))
    })()
    .map_err(ExperimentError::at(format!("distances {tag}")))?;

    let mut files = Vec::new();
    let model_file = format!("models/{tag}.json");
    let json = serde_json::to_vec_pretty(&ModelFile::from(&model))?;
    files.push(out.write(&model_file, "model", &json).map_err(ExperimentError::at(format!("write {tag}")))?);
    let grid_file = format!("grids/{tag}.csv");
    let mut buf = Vec::new();
    export_field_grid(&field, &prepared.metric_domain, m.grid_resolution, &mut buf)
        .map_err(ExperimentError::at(format!("grid {tag}")))?;
    files.push(out.write(&grid_file, "field_grid", &buf).map_err(ExperimentError::at(format!("write {tag}")))?);

    let report = ModelReport {
        stack: stack.name.clone(),
        degree,
        items: stack.items.clone(),
        model_file,
        grid_file,
        objective: model.objective,
        status: model.status,
        iterations: model.iterations,
        residuals: model.residuals.clone(),
        certificates: model
            .certificates
            .iter()
            .map(|c| CertificateSummary { name: c.name.clone(), report: c.report.clone() })
            .collect(),
        sup_distance: sup,
        trajectory_distance: traj,
        warnings: model.warnings.clone(),
    };
    Ok(JobOutput { report, files })
}

/// Runs every (degree, stack) pair of `cfg` and writes, under `out_dir`:
/// the configuration, the dataset, a truth field grid, one model file and
/// one field grid per pair, and `report.json` with residuals, certificate
/// checks and distances. On failure the report records the failed stage and
/// what completed before it.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport, ExperimentError> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let out = Output { dir: out_dir };
    let config_json = cfg.to_json();
    let mut report = ExperimentReport {
        name: cfg.name.clone(),
        seed: cfg.seed,
        config_sha256: sha256_hex(config_json.as_bytes()),
        models: Vec::new(),
        files: Vec::new(),
        failure: None,
    };
    let result = run_into(cfg, &out, &config_json, &mut report);
    if let Err(e) = &result {
        let stage = match e {
            ExperimentError::Stage { stage, .. } => stage.clone(),
            _ => "setup".to_string(),
        };
        report.failure = Some(FailureRecord { stage, message: e.root().to_string() });
    }
    fs::write(out_dir.join(REPORT_FILE), serde_json::to_vec_pretty(&report)?)?;
    result.map(|()| report)
}

fn run_into(
    cfg: &ExperimentConfig,
    out: &Output,
    config_json: &str,
    report: &mut ExperimentReport,
) -> Result<(), ExperimentError> {
    report.files.push(out.write("config.json", "config", config_json.as_bytes())?);
    let prepared = prepare(cfg).map_err(ExperimentError::at("dataset"))?;
    let mut buf = Vec::new();
    write_dataset_csv(&prepared.dataset, &mut buf).map_err(|e| ExperimentError::at("dataset")(e.into()))?;
    report.files.push(out.write("dataset.csv", "dataset", &buf)?);
    let mut buf = Vec::new();
    export_field_grid(&prepared.truth, &prepared.metric_domain, cfg.metrics.grid_resolution, &mut buf)
        .map_err(ExperimentError::at("truth grid"))?;
    report.files.push(out.write("grids/truth.csv", "field_grid", &buf)?);

    let jobs: Vec<(u32, &StackSpec)> =
        cfg.degrees.iter().flat_map(|&d| cfg.stacks.iter().map(move |s| (d, s))).collect();
    let results: Vec<Result<JobOutput, ExperimentError>> =
        jobs.par_iter().map(|&(d, s)| run_job(cfg, &prepared, out, s, d)).collect();
    for r in results {
        let job = r?;
        report.models.push(job.report);
        report.files.extend(job.files);
    }
    Ok(())
}
