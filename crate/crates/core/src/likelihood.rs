//! Gaussian observation density, sample log-likelihood, density ratios
//! against a reference network, and the normalized score direction.
//!
//! The input density `q(x)` never appears: every quantity here is a
//! difference or ratio in which it cancels, so the code works for any
//! (unknown) input law.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::mlp::{MlpParams, ParamFile};
use crate::simulate::{draw_observations, InputDistribution};
use crate::transfer::TransferFunction;

/// Known Gaussian noise variance σ².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NoiseRepr", into = "NoiseRepr")]
pub struct NoiseModel {
    sigma2: f64,
}

#[derive(Serialize, Deserialize)]
struct NoiseRepr {
    sigma2: f64,
}

impl TryFrom<NoiseRepr> for NoiseModel {
    type Error = Error;
    fn try_from(r: NoiseRepr) -> Result<Self> {
        NoiseModel::new(r.sigma2)
    }
}

impl From<NoiseModel> for NoiseRepr {
    fn from(n: NoiseModel) -> Self {
        NoiseRepr { sigma2: n.sigma2 }
    }
}

impl NoiseModel {
    pub fn new(sigma2: f64) -> Result<Self> {
        if sigma2 > 0.0 && sigma2.is_finite() {
            Ok(Self { sigma2 })
        } else {
            Err(Error::InvalidNoise(sigma2))
        }
    }

    pub fn from_sd(sigma: f64) -> Result<Self> {
        Self::new(sigma * sigma)
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    /// `−½ log(2πσ²)`
    pub fn log_norm_const(&self) -> f64 {
        -0.5 * (2.0 * PI * self.sigma2).ln()
    }
}

/// Provenance of a simulated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationMeta {
    pub theta0: ParamFile,
    /// Variance actually used to draw the noise (zero for noiseless data).
    pub sigma2: f64,
    pub input: InputDistribution,
    pub seed: u64,
}

/// `n` observations `(x_t, y_t)` with a common input dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    pub meta: Option<GenerationMeta>,
}

impl Dataset {
    pub fn new(xs: Vec<Vec<f64>>, ys: Vec<f64>) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::InvalidInput("dataset must contain at least one observation".into()));
        }
        if xs.len() != ys.len() {
            return Err(Error::InvalidInput(format!("{} inputs but {} responses", xs.len(), ys.len())));
        }
        let d = xs[0].len();
        if d == 0 {
            return Err(Error::InvalidInput("input dimension must be at least 1".into()));
        }
        for x in &xs {
            check_dim(d, x.len())?;
        }
        Ok(Self { xs, ys, meta: None })
    }

    pub fn with_meta(mut self, meta: GenerationMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn n(&self) -> usize {
        self.ys.len()
    }

    pub fn d(&self) -> usize {
        self.xs[0].len()
    }

    pub fn xs(&self) -> &[Vec<f64>] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.xs.iter().map(Vec::as_slice).zip(self.ys.iter().copied())
    }

    /// Reads a CSV with header `x1,...,xd,y`.
    pub fn read_csv(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let cols = headers.len();
        let expected: Vec<String> = (1..cols).map(|j| format!("x{j}")).chain(["y".to_string()]).collect();
        if cols < 2 || headers.iter().zip(&expected).any(|(h, e)| h.trim() != e) {
            return Err(Error::InvalidInput(format!(
                "dataset header must be {}, found {}",
                expected.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let values = record
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::InvalidInput(format!("row {}: {e}", line + 1)))?;
            let (y, x) = values.split_last().expect("csv enforces column count");
            xs.push(x.to_vec());
            ys.push(*y);
        }
        Self::new(xs, ys)
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = (1..=self.d()).map(|j| format!("x{j}")).chain(["y".to_string()]).collect();
        w.write_record(&header)?;
        for (x, y) in self.iter() {
            w.write_record(x.iter().chain([&y]).map(|v| format!("{v:?}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `log f_θ(z)` without the `log q(x)` term: `−½log(2πσ²) − (y − F_θ(x))²/(2σ²)`.
pub fn log_density_term(
    theta: &MlpParams,
    phi: TransferFunction,
    noise: &NoiseModel,
    x: &[f64],
    y: f64,
) -> Result<f64> {
    let r = y - theta.forward(phi, x)?;
    Ok(noise.log_norm_const() - r * r / (2.0 * noise.sigma2))
}

fn check_data(theta: &MlpParams, data: &Dataset) -> Result<()> {
    check_dim(theta.d(), data.d())
}

/// Residual sum of squares `Σ (y_t − F_θ(x_t))²`.
pub fn rss(theta: &MlpParams, phi: TransferFunction, data: &Dataset) -> Result<f64> {
    check_data(theta, data)?;
    Ok(data
        .iter()
        .map(|(x, y)| {
            let r = y - theta.forward_unchecked(phi, x);
            r * r
        })
        .sum())
}

/// `l_n = −(n/2)log(2πσ²) − RSS/(2σ²)`.
pub fn loglik_from_rss(n: usize, rss: f64, noise: &NoiseModel) -> f64 {
    n as f64 * noise.log_norm_const() - rss / (2.0 * noise.sigma2)
}

/// `l_n(θ) = Σ_t log f_θ(z_t)`, up to the θ-free `Σ log q(x_t)`.
pub fn log_likelihood(theta: &MlpParams, phi: TransferFunction, noise: &NoiseModel, data: &Dataset) -> Result<f64> {
    check_data(theta, data)?;
    let c = noise.log_norm_const();
    let s2 = 2.0 * noise.sigma2;
    Ok(data
        .iter()
        .map(|(x, y)| {
            let r = y - theta.forward_unchecked(phi, x);
            c - r * r / s2
        })
        .sum())
}

/// Plug-in variance `RSS/n` for data where σ² is unknown.
///
/// The selection theory treats σ² as known; this estimate is a practical
/// convenience only.
pub fn plugin_sigma2(rss: f64, n: usize) -> Result<NoiseModel> {
    if n == 0 {
        return Err(Error::InvalidInput("plug-in variance needs n >= 1".into()));
    }
    NoiseModel::new(rss / n as f64)
}

/// `log(f_θ/f_θ⁰)(z)`; the `q(x)` factors cancel.
pub fn log_density_ratio(
    theta: &MlpParams,
    theta0: &MlpParams,
    phi: TransferFunction,
    noise: &NoiseModel,
    x: &[f64],
    y: f64,
) -> Result<f64> {
    check_dim(theta0.d(), theta.d())?;
    let r = y - theta.forward(phi, x)?;
    let r0 = y - theta0.forward_unchecked(phi, x);
    // (r0² − r²)/(2σ²) factored to avoid cancellation when θ ≈ θ⁰
    Ok((r0 - r) * (r0 + r) / (2.0 * noise.sigma2))
}

/// `f_θ/f_θ⁰(z)`.
pub fn density_ratio(
    theta: &MlpParams,
    theta0: &MlpParams,
    phi: TransferFunction,
    noise: &NoiseModel,
    x: &[f64],
    y: f64,
) -> Result<f64> {
    Ok(log_density_ratio(theta, theta0, phi, noise, x, y)?.exp())
}

/// `f_θ/f_θ⁰(z) − 1`, accurate when the ratio is close to one.
pub fn density_ratio_m1(
    theta: &MlpParams,
    theta0: &MlpParams,
    phi: TransferFunction,
    noise: &NoiseModel,
    x: &[f64],
    y: f64,
) -> Result<f64> {
    Ok(log_density_ratio(theta, theta0, phi, noise, x, y)?.exp_m1())
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

/// Monte-Carlo integration against the true density `f = f_θ⁰`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloQuadrature {
    pub samples: usize,
    pub seed: u64,
    pub input: InputDistribution,
}

impl MonteCarloQuadrature {
    pub const DEFAULT_SAMPLES: usize = 100_000;

    pub fn new(input: InputDistribution, samples: usize, seed: u64) -> Self {
        Self { samples, seed, input }
    }

    /// Draws `z = (x, y)` from the model `y = F_θ⁰(x) + ε`.
    pub fn draw(&self, theta0: &MlpParams, phi: TransferFunction, noise: &NoiseModel) -> Result<Vec<(Vec<f64>, f64)>> {
        check_dim(theta0.d(), self.input.dim())?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok(draw_observations(theta0, phi, noise.sigma(), &self.input, self.samples, &mut rng))
    }

    /// `‖g‖₂` in `L²(f)` estimated over `sample`, with a delta-method
    /// standard error.
    pub fn l2_norm<F>(sample: &[(Vec<f64>, f64)], mut g: F) -> Result<Estimate>
    where
        F: FnMut(&[f64], f64) -> Result<f64>,
    {
        if sample.is_empty() {
            return Err(Error::InvalidInput("quadrature needs at least one sample".into()));
        }
        let n = sample.len() as f64;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for (x, y) in sample {
            let v = g(x, *y)?;
            let v2 = v * v;
            sum += v2;
            sum_sq += v2 * v2;
        }
        let mean = sum / n;
        let var = (sum_sq / n - mean * mean).max(0.0);
        let value = mean.sqrt();
        let se_mean = (var / n).sqrt();
        let std_error = if value > 0.0 { se_mean / (2.0 * value) } else { 0.0 };
        Ok(Estimate { value, std_error })
    }
}

/// `s_θ(z) = (f_θ/f(z) − 1) / ‖f_θ/f − 1‖₂`.
#[derive(Debug, Clone)]
pub struct NormalizedScore {
    theta: MlpParams,
    theta0: MlpParams,
    phi: TransferFunction,
    noise: NoiseModel,
    norm: Estimate,
}

impl NormalizedScore {
    pub const DEGENERATE_NORM: f64 = 1e-10;

    pub fn norm(&self) -> Estimate {
        self.norm
    }

    pub fn eval(&self, x: &[f64], y: f64) -> Result<f64> {
        Ok(density_ratio_m1(&self.theta, &self.theta0, self.phi, &self.noise, x, y)? / self.norm.value)
    }
}

pub fn normalized_score(
    theta: &MlpParams,
    theta0: &MlpParams,
    phi: TransferFunction,
    noise: &NoiseModel,
    quad: &MonteCarloQuadrature,
) -> Result<NormalizedScore> {
    check_dim(theta0.d(), theta.d())?;
    let sample = quad.draw(theta0, phi, noise)?;
    let norm = MonteCarloQuadrature::l2_norm(&sample, |x, y| density_ratio_m1(theta, theta0, phi, noise, x, y))?;
    if norm.value < NormalizedScore::DEGENERATE_NORM {
        return Err(Error::DegenerateDirection {
            norm: norm.value,
            threshold: NormalizedScore::DEGENERATE_NORM,
        });
    }
    Ok(NormalizedScore {
        theta: theta.clone(),
        theta0: theta0.clone(),
        phi,
        noise: *noise,
        norm,
    })
}
