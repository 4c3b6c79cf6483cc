//! Forecast quality: absolute, squared, and percentage error broken out per
//! prediction horizon, the historical-average baseline, and report emission
//! as CSV and a plain-text summary.
//!
//! All metrics are computed on denormalized values. The aggregate row pools
//! every residual rather than averaging the per-horizon figures — the two
//! agree for the absolute error (horizons carry equal counts) but not for
//! the root-mean-square, where averaging roots understates the error.

use std::fmt::Write as _;

use thiserror::Error;

use crate::data::{NormStats, WindowSet};
use crate::model::{Model, ModelError};
use crate::substrate::{fmt_shape, ParamSet, Scalar, Tape, Tensor};

/// Targets with magnitude at or below this (in raw units) are excluded from
/// the percentage error: sensors report genuine zeros, and dividing by them
/// makes the metric meaningless.
pub const MAPE_ZERO_THRESHOLD: f64 = 1e-4;

#[derive(Error, Debug)]
pub enum EvalError {
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("{op}: {left} values against {right}")]
    Mismatch {
        op: &'static str,
        left: String,
        right: String,
    },
    #[error(
        "percentage error is undefined: all {masked} targets sit within \
         {threshold} of zero"
    )]
    AllMasked { masked: usize, threshold: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Running error sums over one stream of (truth, prediction) pairs.
#[derive(Clone, Copy, Debug, Default)]
struct Accum {
    abs_sum: f64,
    sq_sum: f64,
    pct_sum: f64,
    count: usize,
    masked: usize,
}

impl Accum {
    fn add(&mut self, truth: f64, pred: f64) {
        let r = truth - pred;
        self.abs_sum += r.abs();
        self.sq_sum += r * r;
        self.count += 1;
        if truth.abs() > MAPE_ZERO_THRESHOLD {
            self.pct_sum += (r / truth).abs();
        } else {
            self.masked += 1;
        }
    }

    fn merge(&mut self, other: &Accum) {
        self.abs_sum += other.abs_sum;
        self.sq_sum += other.sq_sum;
        self.pct_sum += other.pct_sum;
        self.count += other.count;
        self.masked += other.masked;
    }

    fn metrics(&self, op: &'static str) -> Result<Metrics, EvalError> {
        if self.count == 0 {
            return Err(EvalError::Empty { op });
        }
        let unmasked = self.count - self.masked;
        if unmasked == 0 {
            return Err(EvalError::AllMasked {
                masked: self.masked,
                threshold: MAPE_ZERO_THRESHOLD,
            });
        }
        Ok(Metrics {
            mae: self.abs_sum / self.count as f64,
            rmse: (self.sq_sum / self.count as f64).sqrt(),
            mape: 100.0 * self.pct_sum / unmasked as f64,
            count: self.count,
            masked: self.masked,
        })
    }
}

fn paired<'a>(
    op: &'static str,
    truth: &'a [f64],
    pred: &'a [f64],
) -> Result<impl Iterator<Item = (&'a f64, &'a f64)>, EvalError> {
    if truth.len() != pred.len() {
        return Err(EvalError::Mismatch {
            op,
            left: truth.len().to_string(),
            right: pred.len().to_string(),
        });
    }
    if truth.is_empty() {
        return Err(EvalError::Empty { op });
    }
    Ok(truth.iter().zip(pred.iter()))
}

/// Mean absolute error over all elements.
pub fn mae(truth: &[f64], pred: &[f64]) -> Result<f64, EvalError> {
    let mut acc = Accum::default();
    for (&t, &p) in paired("mae", truth, pred)? {
        acc.add(t, p);
    }
    Ok(acc.abs_sum / acc.count as f64)
}

/// Root of the mean squared error; never below [`mae`] on the same pair.
pub fn rmse(truth: &[f64], pred: &[f64]) -> Result<f64, EvalError> {
    let mut acc = Accum::default();
    for (&t, &p) in paired("rmse", truth, pred)? {
        acc.add(t, p);
    }
    Ok((acc.sq_sum / acc.count as f64).sqrt())
}

/// Mean absolute percentage error, in percent, over the targets that clear
/// [`MAPE_ZERO_THRESHOLD`]. Returns the value and the masked count.
pub fn mape(truth: &[f64], pred: &[f64]) -> Result<(f64, usize), EvalError> {
    let mut acc = Accum::default();
    for (&t, &p) in paired("mape", truth, pred)? {
        acc.add(t, p);
    }
    let unmasked = acc.count - acc.masked;
    if unmasked == 0 {
        return Err(EvalError::AllMasked {
            masked: acc.masked,
            threshold: MAPE_ZERO_THRESHOLD,
        });
    }
    Ok((100.0 * acc.pct_sum / unmasked as f64, acc.masked))
}

/// The historical-average forecast: every horizon step repeats the per-node,
/// per-feature mean of the input window.
pub fn ha_baseline<T: Scalar>(inputs: &Tensor<T>) -> Result<Tensor<T>, EvalError> {
    let shape = inputs.shape();
    if shape.len() != 4 {
        return Err(EvalError::Mismatch {
            op: "ha_baseline",
            left: fmt_shape(shape),
            right: "[B x N x T x F]".to_string(),
        });
    }
    let (bs, n, t, f) = (shape[0], shape[1], shape[2], shape[3]);
    let mut out = Tensor::zeros(shape);
    for b in 0..bs {
        for node in 0..n {
            for feat in 0..f {
                let mut sum = 0.0;
                for step in 0..t {
                    sum += inputs.at(&[b, node, step, feat]).to_f64();
                }
                let mean = T::from_f64(sum / t as f64);
                for step in 0..t {
                    *out.at_mut(&[b, node, step, feat]) = mean;
                }
            }
        }
    }
    Ok(out)
}

/// One row of a report: error figures plus how many pairs produced them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
    pub count: usize,
    pub masked: usize,
}

/// Per-horizon rows (index `i` holds horizon `i + 1`) plus the pooled
/// aggregate.
#[derive(Clone, Debug)]
pub struct MetricReport {
    pub per_horizon: Vec<Metrics>,
    pub aggregate: Metrics,
}

impl MetricReport {
    /// Builds a report from matching `[B x N x T x F]` tensors of raw
    /// (denormalized) values.
    pub fn from_pairs(truth: &Tensor<f64>, pred: &Tensor<f64>) -> Result<Self, EvalError> {
        if truth.shape() != pred.shape() || truth.shape().len() != 4 {
            return Err(EvalError::Mismatch {
                op: "report",
                left: fmt_shape(truth.shape()),
                right: fmt_shape(pred.shape()),
            });
        }
        let (bs, n, t, f) = {
            let s = truth.shape();
            (s[0], s[1], s[2], s[3])
        };
        let mut accums = vec![Accum::default(); t];
        for b in 0..bs {
            for node in 0..n {
                for step in 0..t {
                    for feat in 0..f {
                        let idx = [b, node, step, feat];
                        accums[step].add(truth.at(&idx), pred.at(&idx));
                    }
                }
            }
        }
        Self::from_accums(accums)
    }

    fn from_accums(accums: Vec<Accum>) -> Result<Self, EvalError> {
        let mut pooled = Accum::default();
        for acc in &accums {
            pooled.merge(acc);
        }
        let per_horizon = accums
            .iter()
            .map(|a| a.metrics("report"))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(MetricReport {
            per_horizon,
            aggregate: pooled.metrics("report")?,
        })
    }

    /// Machine-readable form: one row per horizon, then the pooled row.
    pub fn csv(&self) -> String {
        let mut out = String::from("horizon,mae,rmse,mape,count,masked\n");
        let row = |out: &mut String, label: &str, m: &Metrics| {
            writeln!(
                out,
                "{label},{:.6},{:.6},{:.6},{},{}",
                m.mae, m.rmse, m.mape, m.count, m.masked
            )
            .expect("writing to a string");
        };
        for (i, m) in self.per_horizon.iter().enumerate() {
            row(&mut out, &(i + 1).to_string(), m);
        }
        row(&mut out, "all", &self.aggregate);
        out
    }

    /// Human-readable table over the customary reporting horizons (every
    /// third step up to the window, so 15/30/45/60 minutes on 5-minute
    /// data), plus the pooled row.
    pub fn summary(&self, unit_minutes: u32) -> String {
        let t = self.per_horizon.len();
        let highlights: Vec<usize> = if t >= 3 {
            (1..=t).filter(|h| h % 3 == 0).collect()
        } else {
            vec![t]
        };
        let mut out = String::new();
        writeln!(out, "{:>9} {:>8} {:>10} {:>10} {:>9}", "horizon", "minutes", "mae", "rmse", "mape%")
            .expect("writing to a string");
        for &h in &highlights {
            let m = &self.per_horizon[h - 1];
            writeln!(
                out,
                "{:>9} {:>8} {:>10.3} {:>10.3} {:>9.2}",
                h,
                h as u32 * unit_minutes,
                m.mae,
                m.rmse,
                m.mape
            )
            .expect("writing to a string");
        }
        let m = &self.aggregate;
        writeln!(
            out,
            "{:>9} {:>8} {:>10.3} {:>10.3} {:>9.2}",
            "aggregate", "-", m.mae, m.rmse, m.mape
        )
        .expect("writing to a string");
        writeln!(
            out,
            "masked zero targets: {} of {}",
            m.masked, m.count
        )
        .expect("writing to a string");
        out
    }
}

fn check_windows(model: &Model, windows_nodes: usize, windows_window: usize, windows_features: usize) -> Result<(), EvalError> {
    let cfg = &model.config;
    if windows_nodes != cfg.nodes || windows_window != cfg.window || windows_features != cfg.features {
        return Err(EvalError::Model(ModelError::Config(format!(
            "dataset windows are {} nodes x {} steps x {} features, model expects {} x {} x {}",
            windows_nodes, windows_window, windows_features, cfg.nodes, cfg.window, cfg.features
        ))));
    }
    Ok(())
}

/// Runs the model over every window in order and scores the denormalized
/// predictions against the denormalized targets.
pub fn evaluate<T: Scalar>(
    model: &Model,
    params: &ParamSet<T>,
    windows: &WindowSet<T>,
    stats: &NormStats,
) -> Result<MetricReport, EvalError> {
    check_windows(model, windows.nodes(), windows.window(), windows.features())?;
    let starts: Vec<usize> = (0..windows.len()).collect();
    let mut accums = vec![Accum::default(); windows.window()];
    for chunk in starts.chunks(model.config.batch.max(1)) {
        let (inputs, targets) = windows.batch(chunk);
        let mut tape = Tape::new();
        let vars = params.register_on(&mut tape).map_err(ModelError::from)?;
        let x = tape.leaf(inputs).map_err(ModelError::from)?;
        let y = model.forward(&mut tape, &vars, x, false)?;
        score_batch(&mut accums, &targets, tape.value(y), stats);
    }
    MetricReport::from_accums(accums)
}

/// Scores the historical-average baseline over the same windows, in the
/// same order, with the same denormalization.
pub fn evaluate_ha<T: Scalar>(
    windows: &WindowSet<T>,
    stats: &NormStats,
) -> Result<MetricReport, EvalError> {
    let starts: Vec<usize> = (0..windows.len()).collect();
    let mut accums = vec![Accum::default(); windows.window()];
    for chunk in starts.chunks(64) {
        let (inputs, targets) = windows.batch(chunk);
        let pred = ha_baseline(&inputs)?;
        score_batch(&mut accums, &targets, &pred, stats);
    }
    MetricReport::from_accums(accums)
}

fn score_batch<T: Scalar>(
    accums: &mut [Accum],
    targets: &Tensor<T>,
    pred: &Tensor<T>,
    stats: &NormStats,
) {
    let shape = targets.shape();
    let (bs, n, t, f) = (shape[0], shape[1], shape[2], shape[3]);
    debug_assert_eq!(pred.shape(), shape);
    for b in 0..bs {
        for node in 0..n {
            for step in 0..t {
                for feat in 0..f {
                    let idx = [b, node, step, feat];
                    let truth = stats.denormalize(targets.at(&idx).to_f64(), feat);
                    let guess = stats.denormalize(pred.at(&idx).to_f64(), feat);
                    accums[step].add(truth, guess);
                }
            }
        }
    }
}
