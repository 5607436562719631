use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::field::VectorField;

use super::{integrate_at, DynamicsError, IntegrateOptions, Trajectory};

/// One trajectory to sample: its initial state and the sample times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub x0: Vec<f64>,
    pub times: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub sigma: f64,
    pub seed: u64,
}

/// Pairs `(xᵢ, yᵢ)` with `yᵢ ≈ f(xᵢ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
    pub provenance: Provenance,
}

impl Dataset {
    /// State dimension, if the dataset is nonempty.
    pub fn n(&self) -> Option<usize> {
        self.pairs.first().map(|(x, _)| x.len())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Where the noise goes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// `yᵢ = f(xᵢ) + σε`, exact states.
    #[default]
    Derivative,
    /// Independent noise on both `xᵢ` and `yᵢ`.
    State,
    /// Second-order systems in `(q, q̇)`: noise on the triplet
    /// `(q, q̇, q̈)`, so the perturbed `q̇` appears in both `x` and `y`.
    Triplet,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DerivativeSource {
    /// Evaluate the generating field.
    #[default]
    Exact,
    /// `(x(t + h) - x(t - h)) / 2h` from the simulated trajectory.
    CentralDifference { h: f64 },
}

#[derive(Clone, Debug, Default)]
pub struct SampleOptions {
    pub noise: NoiseModel,
    pub derivative: DerivativeSource,
    pub integrate: IntegrateOptions,
}

fn derivative_at(
    f: &(impl VectorField + ?Sized),
    x: &[f64],
    opts: &SampleOptions,
) -> Result<Vec<f64>, DynamicsError> {
    match opts.derivative {
        DerivativeSource::Exact => Ok(f.eval(x)),
        DerivativeSource::CentralDifference { h } => {
            if !(h > 0.0) {
                return Err(DynamicsError::InvalidTime(format!("finite-difference step {h}")));
            }
            let free = IntegrateOptions { step: opts.integrate.step, ..IntegrateOptions::default() };
            let back = Reversed(f);
            let fwd = integrate_at(f, x, &[h], &free)?;
            let bwd = integrate_at(&back, x, &[h], &free)?;
            Ok(fwd.states[0].iter().zip(&bwd.states[0]).map(|(a, b)| (a - b) / (2.0 * h)).collect())
        }
    }
}

/// `-f`, for integrating backwards in time.
struct Reversed<'a, F: ?Sized>(&'a F);

impl<F: VectorField + ?Sized> VectorField for Reversed<'_, F> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        self.0.eval_into(x, out);
        for o in out.iter_mut() {
            *o = -*o;
        }
    }

    fn jacobian(&self, x: &[f64]) -> nalgebra::DMatrix<f64> {
        -self.0.jacobian(x)
    }
}

/// Integrates each schedule entry and records noisy derivative samples.
///
/// Noise comes from a ChaCha8 stream seeded with `seed`, drawn in schedule
/// order, sample by sample. For [`NoiseModel::Triplet`] the draws per sample
/// are `(q, q̇, q̈)`.
pub fn sample_dataset(
    f: &(impl VectorField + ?Sized),
    generator: &str,
    schedule: &[Schedule],
    sigma: f64,
    seed: u64,
    opts: &SampleOptions,
) -> Result<Dataset, DynamicsError> {
    if schedule.is_empty() {
        return Err(DynamicsError::EmptySchedule);
    }
    let n = f.dim();
    if opts.noise == NoiseModel::Triplet && n != 2 {
        return Err(DynamicsError::Dimension { expected: 2, found: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = move || -> f64 { StandardNormal.sample(&mut rng) };
    let mut pairs = Vec::new();
    for s in schedule {
        let traj: Trajectory = integrate_at(f, &s.x0, &s.times, &opts.integrate)?;
        for x in traj.states {
            let y = derivative_at(f, &x, opts)?;
            let pair = match opts.noise {
                NoiseModel::Derivative => {
                    let y = y.iter().map(|v| v + sigma * normal()).collect();
                    (x, y)
                }
                NoiseModel::State => {
                    let xn: Vec<f64> = x.iter().map(|v| v + sigma * normal()).collect();
                    let yn = y.iter().map(|v| v + sigma * normal()).collect();
                    (xn, yn)
                }
                NoiseModel::Triplet => {
                    let q = x[0] + sigma * normal();
                    let qd = x[1] + sigma * normal();
                    let qdd = y[1] + sigma * normal();
                    (vec![q, qd], vec![qd, qdd])
                }
            };
            pairs.push(pair);
        }
    }
    Ok(Dataset { pairs, provenance: Provenance { generator: generator.to_string(), sigma, seed } })
}

pub(crate) fn header(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

pub(crate) fn parse_row(rec: &csv::StringRecord, width: usize) -> Result<Vec<f64>, DynamicsError> {
    if rec.len() != width {
        return Err(DynamicsError::Format(format!("expected {width} fields, found {}", rec.len())));
    }
    rec.iter()
        .map(|s| s.trim().parse::<f64>().map_err(|e| DynamicsError::Format(format!("bad number '{s}': {e}"))))
        .collect()
}

/// CSV with header `t,x1,…,xn`, one row per sample.
pub fn write_trajectory_csv(traj: &Trajectory, out: impl Write) -> Result<(), DynamicsError> {
    let n = traj.states.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(std::iter::once("t".to_string()).chain(header("x", n)))?;
    for (t, x) in traj.times.iter().zip(&traj.states) {
        w.write_record(std::iter::once(t.to_string()).chain(x.iter().map(f64::to_string)))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trajectory file; the exit time is not stored and comes back `None`.
pub fn read_trajectory_csv(input: impl std::io::Read) -> Result<Trajectory, DynamicsError> {
    let mut r = csv::Reader::from_reader(input);
    let width = r.headers()?.len();
    if width < 2 || r.headers()?.get(0) != Some("t") {
        return Err(DynamicsError::Format("trajectory header must start with 't' and name at least one state".into()));
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    for rec in r.records() {
        let row = parse_row(&rec?, width)?;
        times.push(row[0]);
        states.push(row[1..].to_vec());
    }
    Ok(Trajectory { times, states, exited_at: None })
}

/// CSV with a `# generator=… sigma=… seed=…` comment line followed by the
/// header `x1,…,xn,y1,…,yn`.
pub fn write_dataset_csv(data: &Dataset, mut out: impl Write) -> Result<(), DynamicsError> {
    let p = &data.provenance;
    if p.generator.chars().any(char::is_whitespace) {
        return Err(DynamicsError::Format(format!("generator id '{}' contains whitespace", p.generator)));
    }
    writeln!(out, "# generator={} sigma={} seed={}", p.generator, p.sigma, p.seed)?;
    let n = data.n().unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header("x", n).chain(header("y", n)))?;
    for (x, y) in &data.pairs {
        w.write_record(x.iter().chain(y).map(f64::to_string))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv(input: impl std::io::Read) -> Result<Dataset, DynamicsError> {
    let mut input = std::io::BufReader::new(input);
    let mut first = String::new();
    input.read_line(&mut first)?;
    let meta = first
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| DynamicsError::Format("missing provenance comment line".into()))?;
    let mut generator = None;
    let mut sigma = None;
    let mut seed = None;
    for kv in meta.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| DynamicsError::Format(format!("bad provenance entry '{kv}'")))?;
        let bad = |e: &dyn std::fmt::Display| DynamicsError::Format(format!("bad provenance value '{v}': {e}"));
        match k {
            "generator" => generator = Some(v.to_string()),
            "sigma" => sigma = Some(v.parse::<f64>().map_err(|e| bad(&e))?),
            "seed" => seed = Some(v.parse::<u64>().map_err(|e| bad(&e))?),
            _ => return Err(DynamicsError::Format(format!("unknown provenance key '{k}'"))),
        }
    }
    let provenance = match (generator, sigma, seed) {
        (Some(generator), Some(sigma), Some(seed)) => Provenance { generator, sigma, seed },
        _ => return Err(DynamicsError::Format("provenance needs generator, sigma and seed".into())),
    };
    let mut r = csv::Reader::from_reader(input);
    let width = r.headers()?.len();
    if width % 2 != 0 {
        return Err(DynamicsError::Format(format!("dataset header has an odd number ({width}) of columns")));
    }
    let n = width / 2;
    let expected: Vec<String> = header("x", n).chain(header("y", n)).collect();
    if r.headers()?.iter().ne(expected.iter().map(String::as_str)) {
        return Err(DynamicsError::Format(format!("dataset header must be {}", expected.join(","))));
    }
    let mut pairs = Vec::new();
    for rec in r.records() {
        let row = parse_row(&rec?, width)?;
        pairs.push((row[..n].to_vec(), row[n..].to_vec()));
    }
    Ok(Dataset { pairs, provenance })
}
