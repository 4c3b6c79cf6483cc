//! Synthetic traffic-like series for desk-scale runs: a random geometric
//! graph, one daily sinusoid per node, and neighbor-coupled first-order
//! autoregressive noise on top. Small enough to train against in seconds,
//! structured enough that spatial and temporal modules both have signal to
//! find.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{write_stds, DataError, RawDataset};
use crate::substrate::Tensor;

/// Steps per synthetic day; at the 5-minute cadence this is 24 hours.
pub const DAILY_PERIOD: usize = 288;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub nodes: usize,
    pub steps: usize,
    pub seed: u64,
    /// Strength of the neighbor term in the noise recursion.
    pub coupling: f64,
    /// Autoregressive memory of each node's own noise.
    pub rho: f64,
    /// Standard deviation of the per-step innovations.
    pub noise_sigma: f64,
    /// Sinusoid amplitude, in raw units.
    pub amp: f64,
    /// Connection radius of the geometric graph on the unit square.
    pub radius: f64,
    pub unit_minutes: u32,
}

impl SynthConfig {
    pub fn new(nodes: usize, steps: usize, seed: u64) -> Self {
        SynthConfig {
            nodes,
            steps,
            seed,
            coupling: 0.2,
            rho: 0.7,
            noise_sigma: 0.02,
            amp: 1.0,
            radius: 0.6,
            unit_minutes: 5,
        }
    }

    /// Sorted `key=value` lines covering every flag, mirroring the model
    /// config format so a resolved file can be fed back through `set`.
    pub fn canonical_text(&self) -> String {
        format!(
            "amp={}\ncoupling={}\nnodes={}\nnoise_sigma={}\nradius={}\nrho={}\nseed={}\nsteps={}\nunit_minutes={}\n",
            self.amp,
            self.coupling,
            self.nodes,
            self.noise_sigma,
            self.radius,
            self.rho,
            self.seed,
            self.steps,
            self.unit_minutes
        )
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), DataError> {
        let bad = |what: &str| {
            DataError::Config(format!("synthesis key {what} cannot take {value:?}"))
        };
        match key {
            "amp" => self.amp = value.parse().map_err(|_| bad(key))?,
            "coupling" => self.coupling = value.parse().map_err(|_| bad(key))?,
            "nodes" => self.nodes = value.parse().map_err(|_| bad(key))?,
            "noise_sigma" => self.noise_sigma = value.parse().map_err(|_| bad(key))?,
            "radius" => self.radius = value.parse().map_err(|_| bad(key))?,
            "rho" => self.rho = value.parse().map_err(|_| bad(key))?,
            "seed" => self.seed = value.parse().map_err(|_| bad(key))?,
            "steps" => self.steps = value.parse().map_err(|_| bad(key))?,
            "unit_minutes" => self.unit_minutes = value.parse().map_err(|_| bad(key))?,
            other => {
                return Err(DataError::Config(format!(
                    "unknown synthesis key {other:?}"
                )))
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), DataError> {
        if self.nodes == 0 || self.steps == 0 {
            return Err(DataError::Config(
                "synthesis needs at least one node and one step".to_string(),
            ));
        }
        for (name, v) in [
            ("coupling", self.coupling),
            ("rho", self.rho),
            ("noise-sigma", self.noise_sigma),
            ("amp", self.amp),
            ("radius", self.radius),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(DataError::Config(format!(
                    "synthesis flag {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if self.rho + self.coupling >= 1.0 {
            return Err(DataError::Config(format!(
                "rho + coupling must stay below 1 for a stable recursion, got {}",
                self.rho + self.coupling
            )));
        }
        Ok(())
    }
}

/// A generated series plus the graph it was diffused over.
#[derive(Clone, Debug)]
pub struct SynthData {
    /// `[nodes, steps, 1]`, raw units.
    pub readings: Tensor<f64>,
    /// Undirected edges `(i, j)` with `i < j`, from the geometric graph.
    pub edges: Vec<(usize, usize)>,
    /// Text sidecar describing exactly how the series was produced.
    pub meta: String,
}

/// Generates the series. Draw order is fixed (positions, phases, bases,
/// then innovations step by step), so one seed always yields one dataset,
/// bit for bit.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData, DataError> {
    cfg.validate()?;
    let n = cfg.nodes;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let positions: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
        .collect();
    let phases: Vec<f64> = (0..n)
        .map(|_| rng.random::<f64>() * std::f64::consts::TAU)
        .collect();
    // Base levels sit well away from zero so percentage metrics never mask.
    let bases: Vec<f64> = (0..n).map(|_| 5.0 + 5.0 * rng.random::<f64>()).collect();

    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (dx, dy) = (positions[i].0 - positions[j].0, positions[i].1 - positions[j].1);
            if (dx * dx + dy * dy).sqrt() < cfg.radius {
                edges.push((i, j));
            }
        }
    }
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(i, j) in &edges {
        neighbors[i].push(j);
        neighbors[j].push(i);
    }

    let mut readings = Tensor::zeros(&[n, cfg.steps, 1]);
    let mut noise = vec![0.0f64; n];
    for t in 0..cfg.steps {
        let prev = noise.clone();
        for (i, level) in noise.iter_mut().enumerate() {
            let neighbor_mean = if neighbors[i].is_empty() {
                0.0
            } else {
                neighbors[i].iter().map(|&j| prev[j]).sum::<f64>() / neighbors[i].len() as f64
            };
            let eps: f64 = rng.sample(StandardNormal);
            *level = cfg.rho * prev[i] + cfg.coupling * neighbor_mean + cfg.noise_sigma * eps;
        }
        for i in 0..n {
            let angle = std::f64::consts::TAU * (t % DAILY_PERIOD) as f64 / DAILY_PERIOD as f64;
            *readings.at_mut(&[i, t, 0]) =
                bases[i] + cfg.amp * (angle + phases[i]).sin() + noise[i];
        }
    }

    let meta = format!(
        "synthetic traffic series\n\
         seed={}\n\
         nodes={n}\n\
         steps={}\n\
         unit_minutes={}\n\
         graph: random geometric on the unit square, edge iff distance < {}\n\
         value[i,t] = base[i] + {} * sin(2*pi*(t mod {DAILY_PERIOD})/{DAILY_PERIOD} + phase[i]) + noise[i,t]\n\
         noise[i,t] = {} * noise[i,t-1] + {} * mean_over_neighbors(noise[j,t-1]) + {} * eps,  eps ~ N(0,1)\n\
         base[i] ~ U[5,10), phase[i] ~ U[0,2*pi)\n\
         edges={}\n",
        cfg.seed,
        cfg.steps,
        cfg.unit_minutes,
        cfg.radius,
        cfg.amp,
        cfg.rho,
        cfg.coupling,
        cfg.noise_sigma,
        edges.len(),
    );

    Ok(SynthData {
        readings,
        edges,
        meta,
    })
}

/// The three files a generation run leaves behind.
#[derive(Clone, Debug)]
pub struct SynthPaths {
    pub dataset: PathBuf,
    pub edges: PathBuf,
    pub meta: PathBuf,
}

/// Generates and writes `<out>` (binary series), `<out stem>.edges`, and
/// `<out stem>.meta`.
pub fn write(cfg: &SynthConfig, out: &Path) -> Result<SynthPaths, DataError> {
    let data = generate(cfg)?;
    write_stds(
        out,
        &RawDataset {
            readings: data.readings.clone(),
            unit_minutes: cfg.unit_minutes,
        },
    )?;

    let edges_path = out.with_extension("edges");
    let mut edge_text = String::from("# i,j undirected, generated with the dataset\n");
    for (i, j) in &data.edges {
        edge_text.push_str(&format!("{i},{j}\n"));
    }
    crate::data::write_bytes(&edges_path, edge_text.as_bytes())?;

    let meta_path = out.with_extension("meta");
    crate::data::write_bytes(&meta_path, data.meta.as_bytes())?;

    Ok(SynthPaths {
        dataset: out.to_path_buf(),
        edges: edges_path,
        meta: meta_path,
    })
}

#[cfg(test)]
mod tests;
