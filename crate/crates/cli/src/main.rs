mod exit;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use sidefit::dynamics::{
    integrate, integrate_at, sup_distance, trajectory_distance, write_trajectory_csv, IntegrateOptions, DEFAULT_STEP,
};
use sidefit::experiments::{ground_truth, run_control, run_experiment, BoxDomain, ControlConfig};
use sidefit::conic::SolveStatus;
use sidefit::learn::{certify, FitOptions};
use sidefit::{ExperimentConfig, ExperimentError, FieldHandle, ModelFile, ModelId, SideInfoItem};

use exit::{exit_code, CliError};

#[derive(Parser)]
#[command(name = "sidefit", version, about = "Learn polynomial vector fields under side information")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrates a named ground-truth model and writes `t,x1..xn` rows.
    Simulate {
        #[arg(long)]
        model: ModelId,
        /// Initial state, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        x0: Vec<f64>,
        #[arg(long = "T")]
        horizon: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
        /// Output only these times instead of every step.
        #[arg(long, value_delimiter = ',')]
        times: Option<Vec<f64>>,
        /// Parameter override `name=value`; repeatable.
        #[arg(long = "param", value_parser = parse_param)]
        params: Vec<(String, f64)>,
    },
    /// Runs an experiment configuration and writes models, grids and a report.
    Learn {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Overrides the noise seed of the configuration.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Distance between a learned model and a ground truth.
    Evaluate {
        #[arg(long)]
        model_file: PathBuf,
        #[arg(long)]
        truth: ModelId,
        #[arg(long, value_enum)]
        metric: Metric,
        /// Grid points per axis; 50 for `sup`, 11 for `traj` by default.
        #[arg(long)]
        resolution: Option<usize>,
        /// Horizon for `traj`.
        #[arg(long = "T", default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
        /// Box `lo1,..,lon:hi1,..,hin`; the truth's domain by default.
        #[arg(long, value_parser = parse_box, allow_hyphen_values = true)]
        domain: Option<BoxDomain>,
    },
    /// Plans constant controls with learned models and with the truth.
    Control {
        #[arg(long)]
        config: PathBuf,
        /// Also write the table as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Searches certificates that a fixed model satisfies given side information.
    Certify {
        #[arg(long)]
        model_file: PathBuf,
        #[arg(long)]
        sideinfo: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Sup,
    Traj,
}

/// Contents of a `--sideinfo` file.
#[derive(Deserialize)]
struct SideInfoFile {
    domain: BoxDomain,
    items: Vec<SideInfoItem>,
}

#[derive(Serialize)]
struct CertifyItem {
    name: String,
    max_residual: f64,
    min_eigenvalue: f64,
    valid: bool,
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected name=value, got '{s}'"))?;
    let v = v.parse::<f64>().map_err(|e| format!("bad value in '{s}': {e}"))?;
    Ok((k.trim().to_string(), v))
}

fn parse_box(s: &str) -> Result<BoxDomain, String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected lo1,..:hi1,.., got '{s}'"))?;
    let nums = |t: &str| -> Result<Vec<f64>, String> {
        t.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| format!("bad bound '{x}': {e}"))).collect()
    };
    Ok(BoxDomain { lo: nums(lo)?, hi: nums(hi)? })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn model_field(path: &Path) -> Result<(ModelFile, FieldHandle), CliError> {
    let file: ModelFile = read_json(path)?;
    let field = file.field().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok((file, FieldHandle::poly(field)))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn simulate(
    model: ModelId,
    x0: &[f64],
    horizon: f64,
    out: &Path,
    step: f64,
    times: Option<&[f64]>,
    params: &[(String, f64)],
) -> Result<(), CliError> {
    let overrides: BTreeMap<String, f64> = params.iter().cloned().collect();
    let (f, _) = ground_truth(model, &overrides)?;
    let opts = IntegrateOptions { step, ..IntegrateOptions::default() };
    let traj = match times {
        Some(t) => integrate_at(&f, x0, t, &opts),
        None => integrate(&f, x0, horizon, &opts),
    }
    .map_err(ExperimentError::from)?;
    let mut w = create(out)?;
    write_trajectory_csv(&traj, &mut w).map_err(ExperimentError::from)?;
    w.flush()?;
    eprintln!("wrote {} samples to {}", traj.times.len(), out.display());
    Ok(())
}

fn learn(config: &Path, out_dir: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    let report = run_experiment(&cfg, out_dir)?;
    let mut out = io::stdout().lock();
    writeln!(out, "stack,degree,status,objective,sup_distance,trajectory_distance,warnings")?;
    for m in &report.models {
        writeln!(
            out,
            "{},{},{:?},{:e},{:.6},{:.6},{}",
            m.stack,
            m.degree,
            m.status,
            m.objective,
            m.sup_distance,
            m.trajectory_distance,
            m.warnings.len()
        )?;
    }
    eprintln!("report written to {}", out_dir.join("report.json").display());
    let unconverged: Vec<String> = report
        .models
        .iter()
        .filter(|m| m.status != SolveStatus::Optimal && !m.warnings.is_empty())
        .map(|m| format!("{}_deg{}", m.stack, m.degree))
        .collect();
    if !unconverged.is_empty() {
        return Err(CliError::Solver(format!("solver did not converge for {}", unconverged.join(", "))));
    }
    Ok(())
}

fn evaluate(
    model_file: &Path,
    truth: ModelId,
    metric: Metric,
    resolution: Option<usize>,
    horizon: f64,
    step: f64,
    domain: Option<&BoxDomain>,
) -> Result<(), CliError> {
    let (_, learned) = model_field(model_file)?;
    let (truth_field, omega) = ground_truth(truth, &BTreeMap::new())?;
    let omega = match domain {
        Some(b) => b.to_set()?,
        None => omega,
    };
    let (name, value) = match metric {
        Metric::Sup => ("sup", sup_distance(&learned, &truth_field, &omega, resolution.unwrap_or(50))),
        Metric::Traj => (
            "traj",
            trajectory_distance(&learned, &truth_field, &omega, horizon, resolution.unwrap_or(11), step),
        ),
    };
    let value = value.map_err(ExperimentError::from)?;
    writeln!(io::stdout(), "{}", serde_json::json!({ "metric": name, "truth": truth.name(), "value": value }))?;
    Ok(())
}

fn control(config: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let cfg = ControlConfig::load(config)?;
    let table = run_control(&cfg)?;
    write!(io::stdout(), "{}", table.to_text())?;
    if let Some(p) = out {
        let mut w = create(p)?;
        serde_json::to_writer_pretty(&mut w, &table).map_err(ExperimentError::from)?;
        w.flush()?;
    }
    Ok(())
}

fn certify_cmd(model_file: &Path, sideinfo: &Path) -> Result<(), CliError> {
    let (_, field) = model_field(model_file)?;
    let FieldHandle::Poly(pf) = &field else { unreachable!("model files hold polynomials") };
    let request: SideInfoFile = read_json(sideinfo)?;
    let domain = request.domain.to_set()?;
    let model = certify(pf.poly(), &request.items, &domain, &FitOptions::default()).map_err(ExperimentError::from)?;
    let items: Vec<CertifyItem> = model
        .certificates
        .iter()
        .map(|c| CertifyItem {
            name: c.name.clone(),
            max_residual: c.report.max_residual,
            min_eigenvalue: c.report.min_eigenvalue,
            valid: c.report.valid,
        })
        .collect();
    let report = serde_json::json!({
        "status": model.status,
        "certificates": items,
        "residuals": model.residuals,
        "warnings": model.warnings,
    });
    writeln!(io::stdout(), "{}", serde_json::to_string_pretty(&report).map_err(ExperimentError::from)?)?;
    if !model.warnings.is_empty() {
        return Err(CliError::Solver(format!("certificates not established: {}", model.warnings.join("; "))));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { model, x0, horizon, out, step, times, params } => {
            simulate(model, &x0, horizon, &out, step, times.as_deref(), &params)
        }
        Command::Learn { config, out_dir, seed } => learn(&config, &out_dir, seed),
        Command::Evaluate { model_file, truth, metric, resolution, horizon, step, domain } => {
            evaluate(&model_file, truth, metric, resolution, horizon, step, domain.as_ref())
        }
        Command::Control { config, out } => control(&config, out.as_deref()),
        Command::Certify { model_file, sideinfo } => certify_cmd(&model_file, &sideinfo),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
