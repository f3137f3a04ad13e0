//! Flat `key=value` experiment configuration.
//!
//! One entry per line, keys prefixed by their block (`model.rho=0.3`),
//! `#` starts a comment. Lists are comma separated. Unknown keys and
//! duplicate keys are rejected so typos never silently fall back to a
//! default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{build_toeplitz_cov, GaussianMeanModel};
use crate::network::{generate_geometric_network, SensorNetwork};

pub const DEFAULT_GRID_SIZE: usize = 201;
pub const DEFAULT_DEFLECTION_RHOS: [f64; 4] = [0.0, 0.3, 0.5, 0.8];

const KNOWN_KEYS: &[&str] = &[
    "model.n_sensors",
    "model.rho",
    "model.cov",
    "model.theta0",
    "model.theta1",
    "model.cov_known",
    "model.L",
    "network.target_edges",
    "network.side",
    "network.seed",
    "network.file",
    "consensus.n_it",
    "mc.n_trials",
    "mc.base_seed",
    "output.dir",
    "output.grid_size",
    "croc.statistics",
    "deflection.rhos",
    "deflection.phis",
    "deflection.norm",
    "deflection.L",
];

#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceSpec {
    Toeplitz(f64),
    Explicit(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_sensors: usize,
    pub covariance: CovarianceSpec,
    pub theta0: Vec<f64>,
    pub theta1: Vec<f64>,
    pub cov_known: bool,
    pub n_slots: usize,
}

impl ModelConfig {
    pub fn build(&self) -> Result<GaussianMeanModel> {
        let cov = match &self.covariance {
            CovarianceSpec::Toeplitz(rho) => build_toeplitz_cov(*rho, self.n_sensors)?,
            CovarianceSpec::Explicit(c) => c.clone(),
        };
        GaussianMeanModel::new(
            DVector::from_column_slice(&self.theta0),
            DVector::from_column_slice(&self.theta1),
            cov,
            self.cov_known,
        )
    }

    pub fn rho(&self) -> Option<f64> {
        match self.covariance {
            CovarianceSpec::Toeplitz(rho) => Some(rho),
            CovarianceSpec::Explicit(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NetworkSource {
    Generate {
        target_edges: usize,
        side: f64,
        seed: u64,
    },
    File(PathBuf),
}

impl NetworkSource {
    pub fn build(&self, n_nodes: usize) -> Result<SensorNetwork> {
        let network = match self {
            NetworkSource::Generate {
                target_edges,
                side,
                seed,
            } => generate_geometric_network(n_nodes, *target_edges, *side, *seed)?,
            NetworkSource::File(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
                SensorNetwork::from_text(&text)?
            }
        };
        if network.n_nodes() != n_nodes {
            return Err(Error::DimensionMismatch {
                expected: n_nodes,
                actual: network.n_nodes(),
            });
        }
        Ok(network)
    }
}

/// Inclusive-start, exclusive-stop angle grid in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl AngleGrid {
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(':').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::InvalidParameter(format!(
                "angle grid must be start:stop:step, got {text:?}"
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("bad number {s:?} in angle grid")))
        };
        let grid = Self {
            start: num(parts[0])?,
            stop: num(parts[1])?,
            step: num(parts[2])?,
        };
        if !(grid.step > 0.0)
            || !(grid.stop > grid.start)
            || !grid.stop.is_finite()
            || !grid.start.is_finite()
        {
            return Err(Error::InvalidParameter(format!(
                "empty or invalid angle grid {text:?}"
            )));
        }
        Ok(grid)
    }

    /// `start + i step` for every `i` with value below `stop`.
    pub fn values(&self) -> Vec<f64> {
        let count = ((self.stop - self.start) / self.step - 1e-9)
            .ceil()
            .max(0.0) as usize;
        (0..count)
            .map(|i| self.start + i as f64 * self.step)
            .collect()
    }
}

impl Default for AngleGrid {
    fn default() -> Self {
        Self {
            start: 0.0,
            stop: 360.0,
            step: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeflectionConfig {
    pub rhos: Vec<f64>,
    pub phis: AngleGrid,
    pub norm: f64,
    pub n_slots: usize,
}

impl Default for DeflectionConfig {
    fn default() -> Self {
        Self {
            rhos: DEFAULT_DEFLECTION_RHOS.to_vec(),
            phis: AngleGrid::default(),
            norm: 1.0,
            n_slots: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatisticFamily {
    Glr,
    Lmp,
}

impl StatisticFamily {
    pub fn parse(text: &str) -> Result<Self> {
        match text.trim().to_ascii_lowercase().as_str() {
            "glr" => Ok(Self::Glr),
            "lmp" => Ok(Self::Lmp),
            other => Err(Error::InvalidParameter(format!(
                "unknown statistic {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: Option<ModelConfig>,
    pub network: Option<NetworkSource>,
    pub n_it: usize,
    pub n_trials: usize,
    pub base_seed: u64,
    pub output_dir: Option<PathBuf>,
    pub grid_size: usize,
    pub statistics: Vec<StatisticFamily>,
    pub deflection: DeflectionConfig,
}

struct Entries {
    values: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.values.remove(key)
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, raw)) => raw.parse::<T>().map(Some).map_err(|_| Error::Parse {
                line,
                message: format!("cannot parse {key}={raw}"),
            }),
        }
    }

    fn list(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, raw)) => raw
                .split(',')
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|_| Error::Parse {
                        line,
                        message: format!("bad number {s:?} in {key}"),
                    })
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }
}

fn missing(key: &str) -> Error {
    Error::InvalidParameter(format!("missing required key {key}"))
}

impl ExperimentConfig {
    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
                line,
                message: format!("expected key=value, got {content:?}"),
            })?;
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown key {key:?}"),
                });
            }
            if values
                .insert(key.to_string(), (line, value.trim().to_string()))
                .is_some()
            {
                return Err(Error::Parse {
                    line,
                    message: format!("duplicate key {key:?}"),
                });
            }
        }
        let mut e = Entries { values };
        let model = parse_model(&mut e)?;
        let network = parse_network(&mut e, base_dir)?;

        let n_it = e.parsed::<usize>("consensus.n_it")?.unwrap_or(20);
        let n_trials = e.parsed::<usize>("mc.n_trials")?.unwrap_or(10_000);
        let base_seed = e.parsed::<u64>("mc.base_seed")?.unwrap_or(0);
        let output_dir = e.take("output.dir").map(|(_, v)| base_dir.join(v));
        let grid_size = e
            .parsed::<usize>("output.grid_size")?
            .unwrap_or(DEFAULT_GRID_SIZE);
        let statistics = match e.take("croc.statistics") {
            None => vec![StatisticFamily::Glr, StatisticFamily::Lmp],
            Some((_, raw)) => raw
                .split(',')
                .map(StatisticFamily::parse)
                .collect::<Result<_>>()?,
        };

        let mut deflection = DeflectionConfig::default();
        if let Some(rhos) = e.list("deflection.rhos")? {
            deflection.rhos = rhos;
        }
        if let Some((_, raw)) = e.take("deflection.phis") {
            deflection.phis = AngleGrid::parse(&raw)?;
        }
        if let Some(norm) = e.parsed::<f64>("deflection.norm")? {
            deflection.norm = norm;
        }
        if let Some(l) = e.parsed::<usize>("deflection.L")? {
            deflection.n_slots = l;
        }
        debug_assert!(e.values.is_empty());

        let config = Self {
            model,
            network,
            n_it,
            n_trials,
            base_seed,
            output_dir,
            grid_size,
            statistics,
            deflection,
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        if self.n_it == 0 {
            return Err(Error::InvalidParameter(
                "consensus.n_it must be positive".into(),
            ));
        }
        if self.n_trials == 0 {
            return Err(Error::InvalidParameter(
                "mc.n_trials must be positive".into(),
            ));
        }
        if self.grid_size < 2 {
            return Err(Error::InvalidParameter(
                "output.grid_size must be at least 2".into(),
            ));
        }
        if self.statistics.is_empty() {
            return Err(Error::InvalidParameter("croc.statistics is empty".into()));
        }
        let d = &self.deflection;
        if d.rhos.iter().any(|r| !(r.abs() < 1.0)) {
            return Err(Error::InvalidParameter(
                "deflection.rhos must lie in (-1, 1)".into(),
            ));
        }
        if !(d.norm > 0.0) || !d.norm.is_finite() || d.n_slots == 0 {
            return Err(Error::InvalidParameter(
                "deflection.norm and deflection.L must be positive".into(),
            ));
        }
        if let Some(m) = &self.model {
            m.build()?;
        }
        Ok(())
    }

    pub fn model(&self) -> Result<&ModelConfig> {
        self.model.as_ref().ok_or_else(|| missing("model.theta1"))
    }

    pub fn network(&self) -> Result<&NetworkSource> {
        self.network
            .as_ref()
            .ok_or_else(|| missing("network.target_edges or network.file"))
    }
}

fn parse_model(e: &mut Entries) -> Result<Option<ModelConfig>> {
    let n_sensors = e.parsed::<usize>("model.n_sensors")?;
    let rho = e.parsed::<f64>("model.rho")?;
    let cov = e.list("model.cov")?;
    let theta0 = e.list("model.theta0")?;
    let theta1 = e.list("model.theta1")?;
    let cov_known = e.parsed::<bool>("model.cov_known")?;
    let n_slots = e.parsed::<usize>("model.L")?;
    let any = n_sensors.is_some()
        || rho.is_some()
        || cov.is_some()
        || theta0.is_some()
        || theta1.is_some()
        || cov_known.is_some()
        || n_slots.is_some();
    if !any {
        return Ok(None);
    }
    let theta1 = theta1.ok_or_else(|| missing("model.theta1"))?;
    let n = n_sensors.unwrap_or(theta1.len());
    if theta1.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: theta1.len(),
        });
    }
    let theta0 = theta0.unwrap_or_else(|| vec![0.0; n]);
    if theta0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: theta0.len(),
        });
    }
    let covariance = match (rho, cov) {
        (Some(_), Some(_)) => {
            return Err(Error::InvalidParameter(
                "give model.rho or model.cov, not both".into(),
            ))
        }
        (Some(rho), None) => CovarianceSpec::Toeplitz(rho),
        (None, Some(entries)) => {
            if entries.len() != n * n {
                return Err(Error::DimensionMismatch {
                    expected: n * n,
                    actual: entries.len(),
                });
            }
            CovarianceSpec::Explicit(DMatrix::from_row_slice(n, n, &entries))
        }
        (None, None) => return Err(missing("model.rho or model.cov")),
    };
    Ok(Some(ModelConfig {
        n_sensors: n,
        covariance,
        theta0,
        theta1,
        cov_known: cov_known.unwrap_or(true),
        n_slots: n_slots.ok_or_else(|| missing("model.L"))?,
    }))
}

fn parse_network(e: &mut Entries, base_dir: &Path) -> Result<Option<NetworkSource>> {
    let file = e.take("network.file");
    let target_edges = e.parsed::<usize>("network.target_edges")?;
    let side = e.parsed::<f64>("network.side")?;
    let seed = e.parsed::<u64>("network.seed")?;
    match (file, target_edges) {
        (Some(_), Some(_)) => Err(Error::InvalidParameter(
            "give network.file or network.target_edges, not both".into(),
        )),
        (Some((_, path)), None) => Ok(Some(NetworkSource::File(base_dir.join(path)))),
        (None, Some(target_edges)) => Ok(Some(NetworkSource::Generate {
            target_edges,
            side: side.unwrap_or(100.0),
            seed: seed.unwrap_or(0),
        })),
        (None, None) => Ok(None),
    }
}
