//! Benchmark models and the server wrapper that registers them through a
//! text file.

pub mod eigen;
pub mod gp;
pub mod linalg;
pub mod synthetic;

use std::fs::{self, File};
use std::io::Write;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clients::lhs::{lhs_sample, ParameterBox};
use crate::dist::Distribution;
use crate::protocol::{
    serve_models, Config, Model, ModelDescriptor, ModelError, ProtocolError, ServeOptions,
    ServerHandle,
};

pub use eigen::{
    eigen_solve, eigen_solve_full, jacobi, random_symmetric, Eigen, EigenError, EigenTask,
};
pub use gp::{gp_fit, GpError, GpModel, SeKernel};
pub use synthetic::{synthetic_evaluate, SyntheticTask};

/// Name the benchmark servers answer to unless told otherwise.
pub const DEFAULT_MODEL_NAME: &str = "modelname";

#[derive(Debug, thiserror::Error)]
pub enum ModelsError {
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error("no free port: {0}")]
    PortExhausted(String),
    #[error("training data: {0}")]
    TrainingData(String),
    #[error("invalid model parameters: {0}")]
    Invalid(String),
    #[error(transparent)]
    Protocol(ProtocolError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ModelsError + '_ {
    move |source| ModelsError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Which benchmark model to build, with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BenchmarkModel {
    /// Eigenvalues of a seeded `n × n` symmetric matrix. The matrix is the
    /// same for every evaluation; the single input value is ignored.
    Eigen { n: usize, seed: u64 },
    /// GP surrogate, one independent GP per output column.
    Gp {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_data: Option<PathBuf>,
        #[serde(default = "default_input_dim")]
        input_dim: usize,
        #[serde(default = "default_train_points")]
        train_points: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_signal_variance")]
        signal_variance: f64,
        /// Lengthscale as a fraction of each input column's range.
        #[serde(default = "default_lengthscale")]
        lengthscale: f64,
        #[serde(default = "default_noise_sd")]
        noise_sd: f64,
    },
    /// Sleeps for a duration drawn from `(seed, input)`.
    Synthetic {
        duration: Distribution,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_input_dim")]
        input_dim: usize,
    },
    /// Returns its input unchanged.
    Identity { size: usize },
}

fn default_input_dim() -> usize {
    7
}
fn default_train_points() -> usize {
    200
}
fn default_signal_variance() -> f64 {
    1.0
}
fn default_lengthscale() -> f64 {
    0.5
}
fn default_noise_sd() -> f64 {
    1e-3
}

impl BenchmarkModel {
    pub fn gp_default(seed: u64) -> Self {
        BenchmarkModel::Gp {
            train_data: None,
            input_dim: default_input_dim(),
            train_points: default_train_points(),
            seed,
            signal_variance: default_signal_variance(),
            lengthscale: default_lengthscale(),
            noise_sd: default_noise_sd(),
        }
    }

    pub fn build(&self, name: &str) -> Result<Arc<dyn Model>, ModelsError> {
        Ok(match self {
            BenchmarkModel::Eigen { n, seed } => {
                if *n == 0 {
                    return Err(ModelsError::Invalid("eigen n must be >= 1".into()));
                }
                Arc::new(EigenModel::new(name, EigenTask::new(*n, *seed)))
            }
            BenchmarkModel::Gp {
                train_data,
                input_dim,
                train_points,
                seed,
                signal_variance,
                lengthscale,
                noise_sd,
            } => {
                let (x, y) = match train_data {
                    Some(path) => load_training_csv(path, *input_dim)?,
                    None => synthetic_training_set(*train_points, *seed),
                };
                Arc::new(GpSurrogate::fit(
                    name,
                    x,
                    y,
                    *signal_variance,
                    *lengthscale,
                    *noise_sd,
                )?)
            }
            BenchmarkModel::Synthetic {
                duration,
                seed,
                input_dim,
            } => {
                duration
                    .validate()
                    .map_err(|e| ModelsError::Invalid(e.to_string()))?;
                Arc::new(SyntheticModel::new(
                    name,
                    SyntheticTask {
                        duration: duration.clone(),
                        seed: *seed,
                    },
                    *input_dim,
                ))
            }
            BenchmarkModel::Identity { size } => Arc::new(Identity::new(name, *size)),
        })
    }
}

pub struct EigenModel {
    desc: ModelDescriptor,
    task: EigenTask,
}

impl EigenModel {
    pub fn new(name: &str, task: EigenTask) -> Self {
        EigenModel {
            desc: ModelDescriptor::new(name, vec![1], vec![task.n]),
            task,
        }
    }
}

impl Model for EigenModel {
    fn descriptor(&self) -> &ModelDescriptor {
        &self.desc
    }

    fn evaluate(
        &self,
        _inputs: &[Vec<f64>],
        _config: &Config,
    ) -> Result<Vec<Vec<f64>>, ModelError> {
        eigen_solve(&self.task)
            .map(|v| vec![v])
            .map_err(|e| ModelError(e.to_string()))
    }
}

/// Independent GPs sharing one set of training inputs; outputs the
/// posterior means.
pub struct GpSurrogate {
    desc: ModelDescriptor,
    gps: Vec<GpModel>,
}

impl GpSurrogate {
    /// `targets[i]` holds the outputs for row `i` of `inputs`.
    pub fn fit(
        name: &str,
        inputs: Vec<Vec<f64>>,
        targets: Vec<Vec<f64>>,
        signal_variance: f64,
        lengthscale: f64,
        noise_sd: f64,
    ) -> Result<Self, ModelsError> {
        let d = inputs
            .first()
            .map(Vec::len)
            .ok_or_else(|| ModelsError::TrainingData("no rows".into()))?;
        let outputs = targets.first().map(Vec::len).unwrap_or(0);
        if outputs == 0 {
            return Err(ModelsError::TrainingData("no output columns".into()));
        }
        let lengthscales: Vec<f64> = (0..d)
            .map(|q| {
                let (lo, hi) = inputs
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                        (lo.min(r[q]), hi.max(r[q]))
                    });
                let range = hi - lo;
                lengthscale * if range > 0.0 { range } else { 1.0 }
            })
            .collect();
        let kernel = SeKernel::new(signal_variance, lengthscales);
        let gps = (0..outputs)
            .map(|j| {
                let y = targets.iter().map(|t| t[j]).collect();
                gp_fit(inputs.clone(), y, kernel.clone(), noise_sd)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(GpSurrogate {
            desc: ModelDescriptor::new(name, vec![d], vec![outputs]),
            gps,
        })
    }

    pub fn gps(&self) -> &[GpModel] {
        &self.gps
    }
}

impl Model for GpSurrogate {
    fn descriptor(&self) -> &ModelDescriptor {
        &self.desc
    }

    fn evaluate(&self, inputs: &[Vec<f64>], _config: &Config) -> Result<Vec<Vec<f64>>, ModelError> {
        let means = self
            .gps
            .iter()
            .map(|gp| gp.predict(&inputs[0]).map(|(m, _)| m))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ModelError(e.to_string()))?;
        Ok(vec![means])
    }
}

pub struct SyntheticModel {
    desc: ModelDescriptor,
    task: SyntheticTask,
}

impl SyntheticModel {
    pub fn new(name: &str, task: SyntheticTask, input_dim: usize) -> Self {
        SyntheticModel {
            desc: ModelDescriptor::new(name, vec![input_dim.max(1)], vec![1]),
            task,
        }
    }
}

impl Model for SyntheticModel {
    fn descriptor(&self) -> &ModelDescriptor {
        &self.desc
    }

    fn evaluate(&self, inputs: &[Vec<f64>], _config: &Config) -> Result<Vec<Vec<f64>>, ModelError> {
        Ok(vec![synthetic_evaluate(&self.task, &inputs[0])])
    }
}

pub struct Identity {
    desc: ModelDescriptor,
}

impl Identity {
    pub fn new(name: &str, size: usize) -> Self {
        Identity {
            desc: ModelDescriptor::new(name, vec![size], vec![size]),
        }
    }
}

impl Model for Identity {
    fn descriptor(&self) -> &ModelDescriptor {
        &self.desc
    }

    fn evaluate(&self, inputs: &[Vec<f64>], _config: &Config) -> Result<Vec<Vec<f64>>, ModelError> {
        Ok(inputs.to_vec())
    }
}

/// Wraps a closure `f(x) -> y` as a one-input, one-output model.
pub struct FnModel<F> {
    desc: ModelDescriptor,
    f: F,
}

impl<F> FnModel<F>
where
    F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
{
    pub fn new(name: &str, input_size: usize, output_size: usize, f: F) -> Self {
        FnModel {
            desc: ModelDescriptor::new(name, vec![input_size], vec![output_size]),
            f,
        }
    }
}

impl<F> Model for FnModel<F>
where
    F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
{
    fn descriptor(&self) -> &ModelDescriptor {
        &self.desc
    }

    fn evaluate(&self, inputs: &[Vec<f64>], _config: &Config) -> Result<Vec<Vec<f64>>, ModelError> {
        Ok(vec![(self.f)(&inputs[0])])
    }
}

/// Two smooth responses over the GS2 parameter box: a sum of sines and a
/// sum of cosines of the normalized coordinates.
pub fn sum_of_sines(bx: &ParameterBox, x: &[f64]) -> Vec<f64> {
    let u: Vec<f64> = bx.normalize(x);
    let s = u
        .iter()
        .enumerate()
        .map(|(q, v)| (std::f64::consts::PI * v * (1.0 + q as f64 / 3.0)).sin())
        .sum();
    let c = u
        .iter()
        .enumerate()
        .map(|(q, v)| 0.5 * (std::f64::consts::PI * v * (1.0 + q as f64 / 5.0)).cos())
        .sum();
    vec![s, c]
}

/// LHS design over the GS2 box with [`sum_of_sines`] targets.
pub fn synthetic_training_set(points: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let bx = ParameterBox::gs2();
    let x = lhs_sample(&bx, points.max(1), seed, false);
    let y = x.iter().map(|p| sum_of_sines(&bx, p)).collect();
    (x, y)
}

/// Reads a CSV with a header row, `input_dim` input columns, then one column
/// per output.
pub fn load_training_csv(
    path: &Path,
    input_dim: usize,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), ModelsError> {
    let bad = |m: String| ModelsError::TrainingData(format!("{}: {m}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let width = reader.headers().map_err(|e| bad(e.to_string()))?.len();
    if width <= input_dim {
        return Err(bad(format!(
            "{width} columns leave no outputs after {input_dim} inputs"
        )));
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let values = record
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("row {}: {e}", line + 2)))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(bad(format!("row {} holds a non-finite value", line + 2)));
        }
        y.push(values[input_dim..].to_vec());
        x.push(values[..input_dim].to_vec());
    }
    if x.is_empty() {
        return Err(bad("no data rows".into()));
    }
    Ok((x, y))
}

/// Writes `contents` plus a newline to `path` via a temporary file in the
/// same directory, then renames and syncs the directory so readers never
/// observe a partial file.
pub fn write_registration(path: &Path, contents: &str) -> Result<(), ModelsError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("registration");
    let tmp = dir.join(format!(".{file_name}.{}.tmp", std::process::id()));
    {
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(contents.as_bytes()).map_err(io_err(&tmp))?;
        f.write_all(b"\n").map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))?;
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}

/// Parses `host:port` from registration file contents.
pub fn parse_registration(text: &str) -> Option<String> {
    let line = text.lines().next()?.trim();
    let (host, port) = line.rsplit_once(':')?;
    if host.is_empty() || port.parse::<u16>().ok()? == 0 {
        return None;
    }
    Some(line.to_owned())
}

/// Host written to registration files when the server binds a wildcard.
pub fn advertised_host(bind: IpAddr) -> IpAddr {
    if bind.is_unspecified() {
        IpAddr::V4(Ipv4Addr::LOCALHOST)
    } else {
        bind
    }
}

/// Builds the model, serves it on a free port of `host`, and registers the
/// address in `reg_file` before returning.
pub async fn serve_benchmark(
    model: &BenchmarkModel,
    name: &str,
    host: IpAddr,
    reg_file: &Path,
) -> Result<ServerHandle, ModelsError> {
    let model = model.build(name)?;
    let opts = ServeOptions {
        host,
        ..ServeOptions::default()
    };
    let handle = serve_models(vec![model], SocketAddr::new(host, 0), opts)
        .await
        .map_err(|e| match e {
            ProtocolError::PortInUse(_) => ModelsError::PortExhausted(e.to_string()),
            ProtocolError::Io(io) if io.kind() == std::io::ErrorKind::AddrNotAvailable => {
                ModelsError::PortExhausted(io.to_string())
            }
            other => ModelsError::Protocol(other),
        })?;
    let addr = SocketAddr::new(advertised_host(host), handle.addr().port());
    if let Err(e) = write_registration(reg_file, &addr.to_string()) {
        handle.kill();
        return Err(e);
    }
    Ok(handle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registration_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("server.addr");
        write_registration(&path, "127.0.0.1:5555").unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "127.0.0.1:5555\n");
        assert_eq!(parse_registration(&text).as_deref(), Some("127.0.0.1:5555"));
        // no temp files left behind
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn registration_parse_rejects_garbage() {
        assert_eq!(parse_registration(""), None);
        assert_eq!(parse_registration("localhost"), None);
        assert_eq!(parse_registration("host:notaport"), None);
        assert_eq!(parse_registration(":80"), None);
        assert_eq!(
            parse_registration("node7:4242\n").as_deref(),
            Some("node7:4242")
        );
    }

    #[test]
    fn training_csv_loads_inputs_then_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.csv");
        fs::write(&path, "a,b,y1,y2\n0,1,2,3\n4,5,6,7\n").unwrap();
        let (x, y) = load_training_csv(&path, 2).unwrap();
        assert_eq!(x, vec![vec![0.0, 1.0], vec![4.0, 5.0]]);
        assert_eq!(y, vec![vec![2.0, 3.0], vec![6.0, 7.0]]);
        assert!(matches!(
            load_training_csv(&path, 4),
            Err(ModelsError::TrainingData(_))
        ));
    }

    #[test]
    fn gp_surrogate_interpolates_its_training_data() {
        let (x, y) = synthetic_training_set(30, 5);
        let gp = GpSurrogate::fit("gp", x.clone(), y.clone(), 1.0, 0.5, 0.0).unwrap();
        assert_eq!(gp.descriptor().input_sizes, vec![7]);
        assert_eq!(gp.descriptor().output_sizes, vec![2]);
        let out = gp.evaluate(&[x[3].clone()], &Config::new()).unwrap();
        assert!((out[0][0] - y[3][0]).abs() < 1e-6);
        assert!((out[0][1] - y[3][1]).abs() < 1e-6);
    }

    #[test]
    fn eigen_model_shape() {
        let m = BenchmarkModel::Eigen { n: 4, seed: 1 }
            .build("modelname")
            .unwrap();
        let out = m.evaluate(&[vec![0.0]], &Config::new()).unwrap();
        assert_eq!(out[0].len(), 4);
        assert!(out[0].windows(2).all(|w| w[0] >= w[1]));
    }
}
