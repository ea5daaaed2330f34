//! Outcome environments: synthetic Scenarios I-IV, a blob-image renderer and
//! a CSV covariate pool with the same synthetic outcome overlay.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeModel {
    Cosine,
    Linear,
    Sigmoid,
}

impl OutcomeModel {
    pub fn eval(self, z: f64) -> f64 {
        match self {
            OutcomeModel::Cosine => z.cos(),
            OutcomeModel::Linear => z,
            // sign(0) = 0, unlike f64::signum
            OutcomeModel::Sigmoid => {
                let s = if z > 0.5 {
                    1.0
                } else if z < 0.5 {
                    -1.0
                } else {
                    0.0
                };
                ((16.0 * z - 8.0).abs() + 1.0).ln() * s
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    I,
    II,
    III,
    IV,
}

impl Scenario {
    pub fn is_null(self) -> bool {
        self == Scenario::I
    }

    /// Treatment effect `delta_t`, redrawn every round.
    pub fn draw_delta<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            Scenario::I => 0.0,
            Scenario::II => 2.0,
            Scenario::III => {
                if rng.gen::<bool>() {
                    2.0
                } else {
                    -2.0
                }
            }
            Scenario::IV => rng.gen_range(-4.0..=4.0),
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(Scenario::I),
            "II" | "2" => Ok(Scenario::II),
            "III" | "3" => Ok(Scenario::III),
            "IV" | "4" => Ok(Scenario::IV),
            _ => Err(Error::Input(format!("unknown scenario '{s}' (expected I, II, III or IV)"))),
        }
    }
}

pub const DEFAULT_BETA: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub model: OutcomeModel,
    pub scenario: Scenario,
    pub d: usize,
    pub beta: Vec<f64>,
    pub noise_sd: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            model: OutcomeModel::Cosine,
            scenario: Scenario::I,
            d: 5,
            beta: DEFAULT_BETA.to_vec(),
            noise_sd: 0.5f64.sqrt(),
        }
    }
}

impl ScenarioSpec {
    pub fn new(model: OutcomeModel, scenario: Scenario) -> Self {
        Self { model, scenario, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Input("covariate dimension must be positive".into()));
        }
        if self.beta.len() != self.d {
            return Err(Error::Input(format!("beta has length {}, expected d = {}", self.beta.len(), self.d)));
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Input(format!("noise_sd must be positive, got {}", self.noise_sd)));
        }
        Ok(())
    }

    pub fn baseline(&self, x: &[f64]) -> f64 {
        let z: f64 = self.beta.iter().zip(x).map(|(b, v)| b * v).sum();
        self.model.eval(z)
    }

    /// `(Y(0), Y(1))` sharing one noise draw and one `delta_t`.
    pub fn draw_outcomes<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> (f64, f64) {
        let f = self.baseline(x);
        let eps: f64 = rng.sample::<f64, _>(StandardNormal) * self.noise_sd;
        let delta = self.scenario.draw_delta(rng);
        (f + eps, f + delta + eps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Blob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageEnvSpec {
    pub grid: usize,
    pub shift_delta: f64,
    pub pixel_noise_sd: f64,
    pub shape: Shape,
    /// Blob standard deviation as a fraction of the image side.
    pub blob_sd: f64,
    /// Latent position `p` is drawn at `placement_offset + placement_span * p`
    /// (fractions of the image side).
    pub placement_offset: f64,
    pub placement_span: f64,
}

impl Default for ImageEnvSpec {
    fn default() -> Self {
        Self {
            grid: 32,
            shift_delta: 0.0,
            pixel_noise_sd: 0.1,
            shape: Shape::Blob,
            blob_sd: 0.06,
            placement_offset: 0.2,
            placement_span: 0.5,
        }
    }
}

impl ImageEnvSpec {
    pub fn null(grid: usize) -> Self {
        Self { grid, ..Self::default() }
    }

    pub fn shifted(grid: usize) -> Self {
        Self { grid, shift_delta: 0.15, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid < 8 {
            return Err(Error::Input(format!("image grid must be at least 8, got {}", self.grid)));
        }
        if !(self.pixel_noise_sd >= 0.0
            && self.blob_sd > 0.0
            && self.shift_delta.is_finite()
            && self.placement_span > 0.0
            && self.placement_offset.is_finite())
        {
            return Err(Error::Input("invalid image noise, blob size or shift".into()));
        }
        Ok(())
    }

    /// Noise-free rendering of arm `arm` at latent position `x`. Pixels outside
    /// the image are dropped, so a shape pushed past a border is clipped.
    pub fn render(&self, x: &[f64], arm: u8) -> Vec<f64> {
        let g = self.grid;
        let shift = if arm == 1 { self.shift_delta } else { 0.0 };
        let cx = self.placement_offset + self.placement_span * (x[0] + shift);
        let cy = self.placement_offset + self.placement_span * x[1];
        let inv = 1.0 / (2.0 * self.blob_sd * self.blob_sd);
        let mut img = Vec::with_capacity(g * g);
        for row in 0..g {
            let py = (row as f64 + 0.5) / g as f64 - cy;
            for col in 0..g {
                let px = (col as f64 + 0.5) / g as f64 - cx;
                img.push((-(px * px + py * py) * inv).exp());
            }
        }
        img
    }

    pub fn draw_outcomes<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let noise: Vec<f64> =
            (0..self.grid * self.grid).map(|_| rng.sample::<f64, _>(StandardNormal) * self.pixel_noise_sd).collect();
        let finish = |img: Vec<f64>| -> Vec<f64> {
            img.into_iter().zip(&noise).map(|(v, e)| (v + e).clamp(0.0, 1.0)).collect()
        };
        (finish(self.render(x, 0)), finish(self.render(x, 1)))
    }
}

/// Rectangular numeric covariate table.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariatePool {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CovariatePool {
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Centers and scales each column to unit population sd. Constant columns
    /// are only centered.
    pub fn standardize(&mut self) {
        let n = self.rows.len() as f64;
        for j in 0..self.dim() {
            let mean = self.rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let sd = (self.rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n).sqrt();
            let scale = if sd > 0.0 { 1.0 / sd } else { 1.0 };
            for r in &mut self.rows {
                r[j] = (r[j] - mean) * scale;
            }
        }
    }
}

pub fn parse_covariate_pool<R: std::io::Read>(reader: R, standardize: bool) -> Result<CovariatePool> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let columns: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse { row: 1, col: 0, msg: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    if columns.is_empty() {
        return Err(Error::Parse { row: 1, col: 0, msg: "missing header".into() });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse { row: line, col: 0, msg: e.to_string() })?;
        if rec.len() != columns.len() {
            return Err(Error::Parse {
                row: line,
                col: rec.len().min(columns.len()) + 1,
                msg: format!("expected {} fields, found {}", columns.len(), rec.len()),
            });
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, cell)| match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse { row: line, col: j + 1, msg: format!("non-numeric cell '{cell}'") }),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse { row: 2, col: 0, msg: "no data rows".into() });
    }
    let mut pool = CovariatePool { columns, rows };
    if standardize {
        pool.standardize();
    }
    Ok(pool)
}

pub fn load_covariate_pool(path: &Path, standardize: bool) -> Result<CovariatePool> {
    let file = std::fs::File::open(path)?;
    parse_covariate_pool(std::io::BufReader::new(file), standardize)
}

/// Context sampler plus potential-outcome sampler.
#[derive(Debug, Clone)]
pub enum Environment {
    Synthetic(ScenarioSpec),
    Image(ImageEnvSpec),
    /// Pool rows as contexts (without replacement) with a synthetic overlay.
    Pool { pool: Arc<CovariatePool>, overlay: ScenarioSpec },
}

impl Environment {
    pub fn synthetic(spec: ScenarioSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Environment::Synthetic(spec))
    }

    pub fn image(spec: ImageEnvSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Environment::Image(spec))
    }

    /// Pool overlay with `beta = (1, ..., 1)`.
    pub fn pool(pool: Arc<CovariatePool>, model: OutcomeModel, scenario: Scenario) -> Result<Self> {
        let d = pool.dim();
        let overlay = ScenarioSpec { model, scenario, d, beta: vec![1.0; d], ..ScenarioSpec::default() };
        overlay.validate()?;
        Ok(Environment::Pool { pool, overlay })
    }

    pub fn context_dim(&self) -> usize {
        match self {
            Environment::Synthetic(s) => s.d,
            Environment::Image(_) => 2,
            Environment::Pool { pool, .. } => pool.dim(),
        }
    }

    pub fn is_null(&self) -> bool {
        match self {
            Environment::Synthetic(s) => s.scenario.is_null(),
            Environment::Image(s) => s.shift_delta == 0.0,
            Environment::Pool { overlay, .. } => overlay.scenario.is_null(),
        }
    }

    pub fn draw_contexts<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        match self {
            Environment::Synthetic(s) => {
                Ok((0..n).map(|_| (0..s.d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect())
            }
            Environment::Image(_) => {
                let u = Uniform::new(0.0, 1.0);
                Ok((0..n).map(|_| vec![u.sample(rng), u.sample(rng)]).collect())
            }
            Environment::Pool { pool, .. } => {
                if n > pool.len() {
                    return Err(Error::Input(format!("requested {n} contexts from a pool of {}", pool.len())));
                }
                let picked: Vec<&Vec<f64>> = pool.rows.choose_multiple(rng, n).collect();
                Ok(picked.into_iter().cloned().collect())
            }
        }
    }

    pub fn potential_outcomes<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        match self {
            Environment::Synthetic(s) | Environment::Pool { overlay: s, .. } => {
                let (y0, y1) = s.draw_outcomes(x, rng);
                (vec![y0], vec![y1])
            }
            Environment::Image(s) => s.draw_outcomes(x, rng),
        }
    }

    pub fn descriptor(&self) -> serde_json::Value {
        match self {
            Environment::Synthetic(s) => serde_json::json!({ "kind": "synthetic", "spec": s }),
            Environment::Image(s) => serde_json::json!({ "kind": "image", "spec": s }),
            Environment::Pool { pool, overlay } => serde_json::json!({
                "kind": "pool",
                "rows": pool.len(),
                "columns": pool.columns,
                "overlay": overlay,
            }),
        }
    }
}
