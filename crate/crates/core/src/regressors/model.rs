//! Estimator dispatch and the checkpoint format.
//!
//! A checkpoint is UTF-8 header lines of the form `key=value`, starting with
//! `gazekit-model 1` and ending with a line `---`. The binary payload follows
//! immediately: `values` little-endian IEEE-754 numbers of type `dtype`, then
//! `bytes` raw bytes.
//!
//! | kind   | values                                                      | bytes  |
//! |--------|-------------------------------------------------------------|--------|
//! | cnn    | the flat parameter vector (see `ParamLayout`)                | none   |
//! | knn    | heads `2n`, gazes `2n`, centroids `2c`, assignment `n` or 0 | pixels |
//! | linear | weights `dim x 2` row-major, then the 2 intercepts           | none   |
//! | mean   | yaw, pitch                                                  | none   |

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::adam::TrainConfig;
use super::cnn::{Cnn, CnnArchitecture};
use super::knn::{knn_fit, KnnModel};
use super::linear::{linear_fit, LinearModel};
use super::real::Real;
use super::train::{train_cnn, CnnModel};
use super::{FeatureConfig, RegressorError};
use crate::dataset::NormalizedSample;
use crate::geometry::{angles_to_vector, vector_to_angles, GazeAngles};

const MAGIC: &str = "gazekit-model 1";
const SEPARATOR: &[u8] = b"\n---\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Cnn,
    Knn,
    Linear,
    Mean,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cnn => "cnn",
            Self::Knn => "knn",
            Self::Linear => "linear",
            Self::Mean => "mean",
        })
    }
}

impl FromStr for EstimatorKind {
    type Err = RegressorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cnn" => Ok(Self::Cnn),
            "knn" => Ok(Self::Knn),
            "linear" => Ok(Self::Linear),
            "mean" => Ok(Self::Mean),
            _ => Err(RegressorError::InvalidConfig(format!("unknown estimator '{s}'"))),
        }
    }
}

/// Everything needed to fit any estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    pub features: FeatureConfig,
    /// `train.seed` is replaced by `seed` when fitting.
    pub train: TrainConfig,
    pub knn_k: usize,
    pub knn_clusters: Option<usize>,
    pub ridge_lambda: f64,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            kind: EstimatorKind::Cnn,
            features: FeatureConfig::default(),
            train: TrainConfig::default(),
            knn_k: 5,
            knn_clusters: Some(8),
            ridge_lambda: 1.0,
            seed: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn describe(&self) -> String {
        let clusters = self
            .knn_clusters
            .map_or_else(|| "none".to_string(), |c| c.to_string());
        match self.kind {
            EstimatorKind::Cnn => format!(
                "estimator=cnn features={} seed={} {}",
                self.features.describe(),
                self.seed,
                self.train.describe()
            ),
            EstimatorKind::Knn => format!(
                "estimator=knn k={} clusters={clusters} seed={}",
                self.knn_k, self.seed
            ),
            EstimatorKind::Linear => format!(
                "estimator=linear features={} lambda={:?}",
                self.features.describe(),
                self.ridge_lambda
            ),
            EstimatorKind::Mean => "estimator=mean".to_string(),
        }
    }
}

/// Always predicts the training set's mean gaze direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanModel {
    pub gaze: GazeAngles,
}

/// Mean of the unit gaze vectors, converted back to angles.
pub fn mean_predictor(samples: &[NormalizedSample]) -> Result<MeanModel, RegressorError> {
    if samples.is_empty() {
        return Err(RegressorError::EmptyTrainingSet);
    }
    let sum = samples
        .iter()
        .map(|s| angles_to_vector(&s.gaze))
        .fold(nalgebra::Vector3::zeros(), |a, b| a + b);
    let gaze = vector_to_angles(&(sum / samples.len() as f64))
        .map_err(|e| RegressorError::InvalidConfig(format!("mean gaze undefined: {e}")))?;
    Ok(MeanModel { gaze })
}

#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorModel {
    Cnn(CnnModel),
    Knn(KnnModel),
    Linear(LinearModel),
    Mean(MeanModel),
}

/// Fits the configured estimator. The loss trace is empty for everything
/// except the CNN.
pub fn fit_estimator(
    samples: &[NormalizedSample],
    config: &EstimatorConfig,
) -> Result<(EstimatorModel, Vec<f64>), RegressorError> {
    Ok(match config.kind {
        EstimatorKind::Cnn => {
            let train = TrainConfig {
                seed: config.seed,
                ..config.train
            };
            let out = train_cnn(samples, config.features, &train)?;
            (EstimatorModel::Cnn(out.model), out.loss_trace)
        }
        EstimatorKind::Knn => (
            EstimatorModel::Knn(knn_fit(samples, config.knn_k, config.knn_clusters, config.seed)?),
            Vec::new(),
        ),
        EstimatorKind::Linear => (
            EstimatorModel::Linear(linear_fit(samples, config.features, config.ridge_lambda)?),
            Vec::new(),
        ),
        EstimatorKind::Mean => (EstimatorModel::Mean(mean_predictor(samples)?), Vec::new()),
    })
}

fn put<T: Real>(values: impl IntoIterator<Item = T>, out: &mut Vec<u8>) -> usize {
    let mut n = 0;
    for v in values {
        v.write_le(out);
        n += 1;
    }
    n
}

fn size_text((w, h): (usize, usize)) -> String {
    format!("{w}x{h}")
}

struct Header {
    lines: Vec<(String, String)>,
}

impl Header {
    fn get(&self, key: &str) -> Result<&str, RegressorError> {
        self.lines
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| RegressorError::Checkpoint(format!("missing header field '{key}'")))
    }

    fn num<T: FromStr>(&self, key: &str) -> Result<T, RegressorError> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| RegressorError::Checkpoint(format!("bad value '{v}' for '{key}'")))
    }

    fn size(&self, key: &str) -> Result<(usize, usize), RegressorError> {
        let v = self.get(key)?;
        v.split_once('x')
            .and_then(|(w, h)| Some((w.parse().ok()?, h.parse().ok()?)))
            .ok_or_else(|| RegressorError::Checkpoint(format!("bad size '{v}'")))
    }
}

fn read_values<T: Real>(payload: &[u8], count: usize) -> Result<(Vec<T>, &[u8]), RegressorError> {
    let len = count
        .checked_mul(T::BYTES)
        .filter(|&l| l <= payload.len())
        .ok_or_else(|| RegressorError::Checkpoint("payload shorter than declared".into()))?;
    let values = payload[..len].chunks_exact(T::BYTES).map(T::read_le).collect();
    Ok((values, &payload[len..]))
}

impl EstimatorModel {
    pub fn kind(&self) -> EstimatorKind {
        match self {
            Self::Cnn(_) => EstimatorKind::Cnn,
            Self::Knn(_) => EstimatorKind::Knn,
            Self::Linear(_) => EstimatorKind::Linear,
            Self::Mean(_) => EstimatorKind::Mean,
        }
    }

    /// Patch size the model consumes; `None` when it ignores the patch.
    pub fn input_size(&self) -> Option<(usize, usize)> {
        match self {
            Self::Cnn(m) => Some(m.input_size()),
            Self::Knn(m) => Some((m.width, m.height)),
            Self::Linear(m) => Some((m.width, m.height)),
            Self::Mean(_) => None,
        }
    }

    pub fn predict(&self, samples: &[NormalizedSample]) -> Result<Vec<GazeAngles>, RegressorError> {
        match self {
            Self::Cnn(m) => m.predict(samples),
            Self::Knn(m) => m.predict(samples),
            Self::Linear(m) => m.predict(samples),
            Self::Mean(m) => Ok(vec![m.gaze; samples.len()]),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = vec![MAGIC.to_string(), format!("kind={}", self.kind())];
        let mut payload = Vec::new();
        let mut extra: &[u8] = &[];
        let (dtype, values) = match self {
            Self::Cnn(m) => {
                head.push(format!("seed={}", m.config.seed));
                head.push(format!("features={}", m.features.describe()));
                head.push(format!("architecture={}", m.net.arch.describe()));
                head.push(format!("train={}", m.config.describe()));
                (f32::DTYPE, put(m.net.params.iter().copied(), &mut payload))
            }
            Self::Knn(m) => {
                head.push(format!("seed={}", m.seed));
                head.push(format!("k={}", m.k));
                head.push(format!("size={}", size_text((m.width, m.height))));
                head.push(format!("samples={}", m.len()));
                head.push(format!("clusters={}", m.centroids.len()));
                let floats = m
                    .heads
                    .iter()
                    .chain(&m.gazes)
                    .chain(&m.centroids)
                    .flat_map(|p| p.iter().copied())
                    .chain(m.assignment.iter().map(|&a| a as f64));
                extra = &m.patches;
                (f64::DTYPE, put(floats, &mut payload))
            }
            Self::Linear(m) => {
                head.push(format!("features={}", m.features.describe()));
                head.push(format!("size={}", size_text((m.width, m.height))));
                head.push(format!("lambda={:?}", m.lambda));
                let floats = m.weights.iter().chain(&m.intercept).copied();
                (f64::DTYPE, put(floats, &mut payload))
            }
            Self::Mean(m) => (f64::DTYPE, put([m.gaze.yaw, m.gaze.pitch], &mut payload)),
        };
        head.push(format!("dtype={dtype}"));
        head.push(format!("values={values}"));
        head.push(format!("bytes={}", extra.len()));
        let mut out = head.join("\n").into_bytes();
        out.extend_from_slice(SEPARATOR);
        out.extend_from_slice(&payload);
        out.extend_from_slice(extra);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RegressorError> {
        let cut = bytes
            .windows(SEPARATOR.len())
            .position(|w| w == SEPARATOR)
            .ok_or_else(|| RegressorError::Checkpoint("no header separator".into()))?;
        let text = std::str::from_utf8(&bytes[..cut])
            .map_err(|_| RegressorError::Checkpoint("header is not UTF-8".into()))?;
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(RegressorError::Checkpoint("not a gazekit model".into()));
        }
        let header = Header {
            lines: lines
                .map(|l| {
                    l.split_once('=')
                        .map(|(k, v)| (k.to_string(), v.to_string()))
                        .ok_or_else(|| RegressorError::Checkpoint(format!("bad header line '{l}'")))
                })
                .collect::<Result<_, _>>()?,
        };
        let payload = &bytes[cut + SEPARATOR.len()..];
        let kind: EstimatorKind = header
            .get("kind")?
            .parse()
            .map_err(|_| RegressorError::Checkpoint("unknown kind".into()))?;
        let count: usize = header.num("values")?;
        let extra_len: usize = header.num("bytes")?;
        let dtype = header.get("dtype")?;
        let expected = match kind {
            EstimatorKind::Cnn => f32::DTYPE,
            _ => f64::DTYPE,
        };
        if dtype != expected {
            return Err(RegressorError::Checkpoint(format!("dtype {dtype} for {kind}")));
        }

        let model = match kind {
            EstimatorKind::Cnn => {
                let (params, rest) = read_values::<f32>(payload, count)?;
                check_tail(rest, extra_len, 0)?;
                let arch = CnnArchitecture::parse(header.get("architecture")?)?;
                if params.len() != arch.param_count() {
                    return Err(RegressorError::Checkpoint(format!(
                        "{} parameters, architecture needs {}",
                        params.len(),
                        arch.param_count()
                    )));
                }
                let config = TrainConfig::parse(header.get("train")?)?;
                Self::Cnn(CnnModel {
                    net: Cnn { arch, params },
                    features: FeatureConfig::parse(header.get("features")?)?,
                    config,
                })
            }
            EstimatorKind::Knn => {
                let n: usize = header.num("samples")?;
                let c: usize = header.num("clusters")?;
                let (w, h) = header.size("size")?;
                let want = 4 * n + 2 * c + if c > 0 { n } else { 0 };
                if count != want {
                    return Err(RegressorError::Checkpoint(format!("{count} values, expected {want}")));
                }
                let (v, rest) = read_values::<f64>(payload, count)?;
                check_tail(rest, extra_len, n * w * h)?;
                let pairs = |s: &[f64]| s.chunks_exact(2).map(|p| [p[0], p[1]]).collect::<Vec<_>>();
                let assignment = v[4 * n + 2 * c..].iter().map(|&a| a as u32).collect();
                Self::Knn(KnnModel::from_parts(
                    header.num("k")?,
                    w,
                    h,
                    header.num("seed")?,
                    rest.to_vec(),
                    pairs(&v[..2 * n]),
                    pairs(&v[2 * n..4 * n]),
                    pairs(&v[4 * n..4 * n + 2 * c]),
                    assignment,
                )?)
            }
            EstimatorKind::Linear => {
                let features = FeatureConfig::parse(header.get("features")?)?;
                let (w, h) = header.size("size")?;
                let dim = w * h + features.dim();
                if count != 2 * dim + 2 {
                    return Err(RegressorError::Checkpoint(format!("{count} values for dim {dim}")));
                }
                let (v, rest) = read_values::<f64>(payload, count)?;
                check_tail(rest, extra_len, 0)?;
                Self::Linear(LinearModel {
                    width: w,
                    height: h,
                    features,
                    lambda: header.num("lambda")?,
                    weights: v[..2 * dim].to_vec(),
                    intercept: [v[2 * dim], v[2 * dim + 1]],
                })
            }
            EstimatorKind::Mean => {
                if count != 2 {
                    return Err(RegressorError::Checkpoint(format!("{count} values for mean")));
                }
                let (v, rest) = read_values::<f64>(payload, count)?;
                check_tail(rest, extra_len, 0)?;
                Self::Mean(MeanModel {
                    gaze: GazeAngles::new(v[0], v[1]),
                })
            }
        };
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RegressorError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|source| RegressorError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RegressorError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| RegressorError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

fn check_tail(rest: &[u8], declared: usize, expected: usize) -> Result<(), RegressorError> {
    if rest.len() != declared || declared != expected {
        return Err(RegressorError::Checkpoint(format!(
            "trailing payload of {} bytes, header says {declared}, expected {expected}",
            rest.len()
        )));
    }
    Ok(())
}
