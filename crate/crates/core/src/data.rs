//! Dataset ingestion, chronological splitting, Z-score normalization, and
//! sliding-window extraction.
//!
//! Two interchangeable on-disk forms:
//!
//! * binary (`.stds`): magic `STDS`, version u16, then u32 N / total_steps /
//!   F / unit_minutes, then N·total_steps·F 32-bit reals, node-major, then
//!   time, then feature — all little-endian;
//! * CSV: header line `N,total_steps,F,unit_minutes`, then one line per time
//!   step carrying N·F comma-separated values (node-major within the line).
//!
//! An optional edge-list file (`i,j` per line, undirected, duplicates
//! ignored) supplies the predefined adjacency used when the learned node
//! embedding is ablated.

use std::collections::BTreeSet;
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::substrate::{Scalar, Tensor};

pub const STDS_MAGIC: [u8; 4] = *b"STDS";
pub const STDS_VERSION: u16 = 1;

#[derive(Error, Debug)]
pub enum DataError {
    #[error("{path} at byte {offset}: {msg}")]
    Binary {
        path: String,
        offset: usize,
        msg: String,
    },
    #[error("{path} line {line}: {msg}")]
    Text {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("invalid data configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// `std::fs::read` with the path attached to the error; a bare
/// "No such file" helps nobody when three files are in play.
pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::File {
        path: path.display().to_string(),
        source,
    })
}

pub(crate) fn read_text(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|source| DataError::File {
        path: path.display().to_string(),
        source,
    })
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    std::fs::write(path, bytes).map_err(|source| DataError::File {
        path: path.display().to_string(),
        source,
    })
}

/// What to do with missing readings (NaN in either format).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MissingPolicy {
    Reject,
    ForwardFill,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Binary,
    Csv,
}

impl Format {
    /// `.stds` files are binary, everything else is treated as CSV.
    pub fn infer(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("stds") => Format::Binary,
            _ => Format::Csv,
        }
    }
}

/// A fully ingested series: `readings[node, step, feature]`.
#[derive(Clone, Debug)]
pub struct RawDataset {
    pub readings: Tensor<f64>,
    pub unit_minutes: u32,
}

impl RawDataset {
    pub fn nodes(&self) -> usize {
        self.readings.shape()[0]
    }

    pub fn total_steps(&self) -> usize {
        self.readings.shape()[1]
    }

    pub fn features(&self) -> usize {
        self.readings.shape()[2]
    }
}

pub fn ingest(path: &Path, format: Format, missing: MissingPolicy) -> Result<RawDataset, DataError> {
    match format {
        Format::Binary => ingest_stds(path, missing),
        Format::Csv => ingest_csv(path, missing),
    }
}

pub fn ingest_stds(path: &Path, missing: MissingPolicy) -> Result<RawDataset, DataError> {
    let shown = path.display().to_string();
    let bytes = read_bytes(path)?;
    let bad = |offset: usize, msg: String| DataError::Binary {
        path: shown.clone(),
        offset,
        msg,
    };

    if bytes.len() < 22 {
        return Err(bad(bytes.len(), "file shorter than the 22-byte header".to_string()));
    }
    if bytes[0..4] != STDS_MAGIC {
        return Err(bad(0, format!("wrong magic bytes {:02x?}, not a dataset", &bytes[0..4])));
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != STDS_VERSION {
        return Err(bad(4, format!("unsupported format version {version}")));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (n, steps, features) = (word(6), word(10), word(14));
    let unit_minutes = word(18) as u32;
    if n == 0 || steps == 0 || features == 0 {
        return Err(bad(6, format!("degenerate header: N={n}, total_steps={steps}, F={features}")));
    }
    let numel = n
        .checked_mul(steps)
        .and_then(|v| v.checked_mul(features))
        .ok_or_else(|| bad(6, "header extents overflow".to_string()))?;
    let want = 22 + numel * 4;
    if bytes.len() != want {
        return Err(bad(
            bytes.len().min(want),
            format!(
                "payload holds {} bytes, header N={n} × steps={steps} × F={features} needs {}",
                bytes.len() - 22,
                numel * 4
            ),
        ));
    }

    let mut values = Vec::with_capacity(numel);
    for i in 0..numel {
        let at = 22 + i * 4;
        values.push(f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64);
    }
    let mut readings = Tensor::new(vec![n, steps, features], values)
        .map_err(|e| bad(22, e.to_string()))?;
    fill_missing(&mut readings, missing, |node, step, feature| {
        bad(
            22 + ((node * steps + step) * features + feature) * 4,
            format!("missing reading at node {node}, step {step}, feature {feature}"),
        )
    })?;
    Ok(RawDataset {
        readings,
        unit_minutes,
    })
}

pub fn ingest_csv(path: &Path, missing: MissingPolicy) -> Result<RawDataset, DataError> {
    let shown = path.display().to_string();
    let text = read_text(path)?;
    let bad = |line: usize, msg: String| DataError::Text {
        path: shown.clone(),
        line,
        msg,
    };

    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| bad(1, "empty file, expected `N,total_steps,F,unit_minutes`".to_string()))?;
    let head: Vec<&str> = header.split(',').map(str::trim).collect();
    if head.len() != 4 {
        return Err(bad(1, format!(
            "header has {} fields, expected `N,total_steps,F,unit_minutes`",
            head.len()
        )));
    }
    let parse_head = |i: usize, what: &str| -> Result<usize, DataError> {
        head[i]
            .parse::<usize>()
            .map_err(|_| bad(1, format!("cannot parse {what} from {:?}", head[i])))
    };
    let n = parse_head(0, "N")?;
    let steps = parse_head(1, "total_steps")?;
    let features = parse_head(2, "F")?;
    let unit_minutes = parse_head(3, "unit_minutes")? as u32;
    if n == 0 || steps == 0 || features == 0 {
        return Err(bad(1, format!("degenerate header: N={n}, total_steps={steps}, F={features}")));
    }

    let mut values = vec![0.0f64; n * steps * features];
    let mut rows = 0usize;
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        if rows == steps {
            return Err(bad(line_no, format!("more than the {steps} data rows the header promises")));
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != n * features {
            return Err(bad(line_no, format!(
                "{} fields, expected N·F = {}",
                fields.len(),
                n * features
            )));
        }
        for (k, field) in fields.iter().enumerate() {
            let v: f64 = if field.is_empty() {
                f64::NAN
            } else {
                field.parse().map_err(|_| {
                    bad(line_no, format!("cannot parse reading {:?} (field {})", field, k + 1))
                })?
            };
            let (node, feature) = (k / features, k % features);
            values[(node * steps + rows) * features + feature] = v;
        }
        rows += 1;
    }
    if rows != steps {
        return Err(bad(
            text.lines().count(),
            format!("{rows} data rows, header promises {steps}"),
        ));
    }

    let mut readings = Tensor::new(vec![n, steps, features], values).map_err(|e| bad(1, e.to_string()))?;
    fill_missing(&mut readings, missing, |node, step, feature| {
        bad(
            step + 2,
            format!("missing reading at node {node}, step {step}, feature {feature}"),
        )
    })?;
    Ok(RawDataset {
        readings,
        unit_minutes,
    })
}

/// Resolves NaN readings: rejected outright, or copied from the previous
/// step of the same node/feature. A missing value at step 0 has no
/// predecessor and is always an error.
fn fill_missing(
    readings: &mut Tensor<f64>,
    policy: MissingPolicy,
    err: impl Fn(usize, usize, usize) -> DataError,
) -> Result<(), DataError> {
    let [n, steps, features] = [readings.shape()[0], readings.shape()[1], readings.shape()[2]];
    for node in 0..n {
        for step in 0..steps {
            for feature in 0..features {
                if readings.at(&[node, step, feature]).is_nan() {
                    if policy == MissingPolicy::Reject || step == 0 {
                        return Err(err(node, step, feature));
                    }
                    let prev = readings.at(&[node, step - 1, feature]);
                    *readings.at_mut(&[node, step, feature]) = prev;
                }
            }
        }
    }
    Ok(())
}

pub fn write_stds(path: &Path, dataset: &RawDataset) -> Result<(), DataError> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(&STDS_MAGIC);
    out.extend_from_slice(&STDS_VERSION.to_le_bytes());
    for extent in [dataset.nodes(), dataset.total_steps(), dataset.features()] {
        out.extend_from_slice(&(extent as u32).to_le_bytes());
    }
    out.extend_from_slice(&dataset.unit_minutes.to_le_bytes());
    for &v in dataset.readings.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write_bytes(path, &out)
}

/// Chronological 60/20/20 split. Floor division on the first two; the
/// remainder lands in the test range.
pub fn split(total_steps: usize, window: usize) -> Result<(Range<usize>, Range<usize>, Range<usize>), DataError> {
    let need = 5 * 2 * window;
    if total_steps < need {
        return Err(DataError::Config(format!(
            "{total_steps} steps cannot be split 60/20/20 with window {window}: need at least {need}"
        )));
    }
    let train = total_steps * 6 / 10;
    let val = total_steps * 2 / 10;
    Ok((0..train, train..train + val, train + val..total_steps))
}

/// Per-feature Z-score statistics, 64-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn denormalize(&self, x: f64, feature: usize) -> f64 {
        x * self.std[feature] + self.mean[feature]
    }

    /// Applies these statistics to a raw series in place — used when scoring
    /// or predicting with a checkpoint, whose training-time statistics must
    /// be reused rather than recomputed from the new data.
    pub fn apply(&self, readings: &mut Tensor<f64>) -> Result<(), DataError> {
        let features = *readings.shape().last().unwrap_or(&0);
        if features != self.mean.len() {
            return Err(DataError::Config(format!(
                "statistics cover {} features, data has {features}",
                self.mean.len()
            )));
        }
        let data = readings.data_mut();
        for (i, v) in data.iter_mut().enumerate() {
            let f = i % features;
            *v = (*v - self.mean[f]) / self.std[f];
        }
        Ok(())
    }
}

/// Computes per-feature mean/std over the training steps only, then
/// transforms every step in place with those statistics.
pub fn normalize(readings: &mut Tensor<f64>, train: &Range<usize>) -> Result<NormStats, DataError> {
    let [n, steps, features] = [readings.shape()[0], readings.shape()[1], readings.shape()[2]];
    if train.end > steps || train.is_empty() {
        return Err(DataError::Config(format!(
            "training range {train:?} outside the {steps}-step series"
        )));
    }
    let count = (n * train.len()) as f64;
    let mut mean = vec![0.0f64; features];
    let mut std = vec![0.0f64; features];
    for f in 0..features {
        let mut sum = 0.0;
        for node in 0..n {
            for t in train.clone() {
                sum += readings.at(&[node, t, f]);
            }
        }
        mean[f] = sum / count;
        let mut sq = 0.0;
        for node in 0..n {
            for t in train.clone() {
                let d = readings.at(&[node, t, f]) - mean[f];
                sq += d * d;
            }
        }
        std[f] = (sq / count).sqrt();
        if std[f] < 1e-12 {
            return Err(DataError::Config(format!(
                "feature {f} is constant over the training slice (std {:.3e})",
                std[f]
            )));
        }
    }
    for node in 0..n {
        for t in 0..steps {
            for f in 0..features {
                let v = readings.at(&[node, t, f]);
                *readings.at_mut(&[node, t, f]) = (v - mean[f]) / std[f];
            }
        }
    }
    Ok(NormStats { mean, std })
}

/// One split's readings plus the sliding-window bookkeeping. Each window
/// start `s` pairs inputs `readings[:, s..s+T, :]` with targets
/// `readings[:, s+T..s+2T, :]`.
#[derive(Clone, Debug)]
pub struct WindowSet<T: Scalar> {
    readings: Tensor<T>,
    window: usize,
}

impl<T: Scalar> WindowSet<T> {
    pub fn new(readings: Tensor<T>, window: usize) -> Result<Self, DataError> {
        if readings.shape().len() != 3 {
            return Err(DataError::Config(format!(
                "window source must be [N x steps x F], got rank {}",
                readings.shape().len()
            )));
        }
        let steps = readings.shape()[1];
        if window == 0 || steps < 2 * window {
            return Err(DataError::Config(format!(
                "{steps} steps cannot carry a single {window}-in/{window}-out window"
            )));
        }
        Ok(WindowSet { readings, window })
    }

    /// Extracts the steps in `range` from a full series and builds the set.
    pub fn from_slice(readings: &Tensor<T>, range: &Range<usize>, window: usize) -> Result<Self, DataError> {
        let [n, steps, features] = [readings.shape()[0], readings.shape()[1], readings.shape()[2]];
        if range.end > steps {
            return Err(DataError::Config(format!(
                "split range {range:?} outside the {steps}-step series"
            )));
        }
        let mut slice = Tensor::zeros(&[n, range.len(), features]);
        for node in 0..n {
            for (i, t) in range.clone().enumerate() {
                for f in 0..features {
                    *slice.at_mut(&[node, i, f]) = readings.at(&[node, t, f]);
                }
            }
        }
        WindowSet::new(slice, window)
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn nodes(&self) -> usize {
        self.readings.shape()[0]
    }

    pub fn features(&self) -> usize {
        self.readings.shape()[2]
    }

    /// Number of admissible window starts: steps − 2T + 1.
    pub fn len(&self) -> usize {
        self.readings.shape()[1] - 2 * self.window + 1
    }

    pub fn is_empty(&self) -> bool {
        false // construction requires at least one window
    }

    /// Stacks the windows at `starts` into `[B, N, T, F]` input and target
    /// tensors, in the order given.
    pub fn batch(&self, starts: &[usize]) -> (Tensor<T>, Tensor<T>) {
        let (n, t, f) = (self.nodes(), self.window, self.features());
        let mut inputs = Tensor::zeros(&[starts.len(), n, t, f]);
        let mut targets = Tensor::zeros(&[starts.len(), n, t, f]);
        for (b, &s) in starts.iter().enumerate() {
            debug_assert!(s < self.len(), "window start {s} out of range");
            for node in 0..n {
                for step in 0..t {
                    for feat in 0..f {
                        *inputs.at_mut(&[b, node, step, feat]) =
                            self.readings.at(&[node, s + step, feat]);
                        *targets.at_mut(&[b, node, step, feat]) =
                            self.readings.at(&[node, s + t + step, feat]);
                    }
                }
            }
        }
        (inputs, targets)
    }

    pub fn cast<U: Scalar>(&self) -> WindowSet<U> {
        WindowSet {
            readings: self.readings.cast::<U>(),
            window: self.window,
        }
    }
}

/// Every admissible start, shuffled in place by the caller's generator.
pub fn shuffled_starts(count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(rng);
    order
}

/// Reads an `i,j` edge list; indices must be below `n`. Undirected
/// duplicates and repeated lines collapse to one edge.
pub fn ingest_edges(path: &Path, n: usize) -> Result<Vec<(usize, usize)>, DataError> {
    let shown = path.display().to_string();
    let text = read_text(path)?;
    let bad = |line: usize, msg: String| DataError::Text {
        path: shown.clone(),
        line,
        msg,
    };
    let mut seen = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (a, b) = trimmed
            .split_once(',')
            .ok_or_else(|| bad(line_no, format!("expected `i,j`, got {trimmed:?}")))?;
        let parse = |s: &str| -> Result<usize, DataError> {
            s.trim()
                .parse()
                .map_err(|_| bad(line_no, format!("cannot parse node index {s:?}")))
        };
        let (i, j) = (parse(a)?, parse(b)?);
        if i >= n || j >= n {
            return Err(bad(line_no, format!("edge ({i},{j}) out of range for {n} nodes")));
        }
        seen.insert((i.min(j), i.max(j)));
    }
    Ok(seen.into_iter().collect())
}

/// Symmetric binary adjacency from an edge list, plus self-loops, rows
/// normalized to sum to 1. This is the predefined graph used when the
/// learned node embedding is ablated.
pub fn predefined_adjacency(edges: &[(usize, usize)], n: usize) -> Result<Tensor<f64>, DataError> {
    let mut a = Tensor::<f64>::zeros(&[n, n]);
    for i in 0..n {
        *a.at_mut(&[i, i]) = 1.0;
    }
    for &(i, j) in edges {
        if i >= n || j >= n {
            return Err(DataError::Config(format!(
                "edge ({i},{j}) out of range for {n} nodes"
            )));
        }
        *a.at_mut(&[i, j]) = 1.0;
        *a.at_mut(&[j, i]) = 1.0;
    }
    for i in 0..n {
        let row_sum: f64 = (0..n).map(|j| a.at(&[i, j])).sum();
        for j in 0..n {
            *a.at_mut(&[i, j]) /= row_sum;
        }
    }
    Ok(a)
}

#[cfg(test)]
mod tests;
