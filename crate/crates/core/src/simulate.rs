//! Data generation from the regression model `y = F_θ⁰(x) + ε` and the
//! two Monte-Carlo experiments: consistency of `k̂` and tightness of the
//! likelihood-ratio statistic.
//!
//! Every replication cell `(n, r)` draws from generators seeded by
//! `derive_seed(master_seed, [n, r])`, so cells can run in any order and
//! on any number of threads with identical results.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::likelihood::{Dataset, GenerationMeta, NoiseModel};
use crate::mlp::{MlpParams, ParamFile};
use crate::optimizer::{embed_extra_unit, fit_mle_with_starts, FitConfig, ParamSpace};
use crate::seeding::derive_seed;
use crate::selection::{Penalty, SelectMode, Selector};
use crate::transfer::TransferFunction;

/// Law of the inputs `x ∈ ℝ^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputDistribution {
    /// i.i.d. N(0, 1) coordinates.
    StandardNormal { d: usize },
    /// i.i.d. U(lo, hi) coordinates. Its density vanishes outside the box,
    /// so it does not satisfy the everywhere-positive input density the
    /// consistency theory assumes; provided as a convenience.
    Uniform { lo: f64, hi: f64, d: usize },
}

impl InputDistribution {
    pub fn standard_normal(d: usize) -> Self {
        InputDistribution::StandardNormal { d }
    }

    pub fn dim(&self) -> usize {
        match *self {
            InputDistribution::StandardNormal { d } | InputDistribution::Uniform { d, .. } => d,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(Error::InvalidInput("input dimension must be at least 1".into()));
        }
        if let InputDistribution::Uniform { lo, hi, .. } = *self {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::InvalidInput(format!("uniform inputs need lo < hi, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn tag(&self) -> String {
        match *self {
            InputDistribution::StandardNormal { d } => format!("standard_normal(d={d})"),
            InputDistribution::Uniform { lo, hi, d } => format!("uniform(lo={lo},hi={hi},d={d})"),
        }
    }

    #[inline]
    pub fn sample_into(&self, rng: &mut impl Rng, x: &mut [f64]) {
        match *self {
            InputDistribution::StandardNormal { .. } => x.iter_mut().for_each(|v| *v = rng.sample(StandardNormal)),
            InputDistribution::Uniform { lo, hi, .. } => {
                x.iter_mut().for_each(|v| *v = lo + (hi - lo) * rng.random::<f64>())
            }
        }
    }
}

/// Draws `n` observations `(x, F_θ⁰(x) + σ ε)`; `x` first, then `ε`.
pub fn draw_observations(
    theta0: &MlpParams,
    phi: TransferFunction,
    sigma: f64,
    input: &InputDistribution,
    n: usize,
    rng: &mut impl Rng,
) -> Vec<(Vec<f64>, f64)> {
    let d = input.dim();
    (0..n)
        .map(|_| {
            let mut x = vec![0.0; d];
            input.sample_into(rng, &mut x);
            let eps: f64 = rng.sample(StandardNormal);
            let y = theta0.forward_unchecked(phi, &x) + sigma * eps;
            (x, y)
        })
        .collect()
}

/// Simulates `n` observations of the model with noise standard deviation
/// `noise_sd` (zero gives noiseless data).
pub fn generate_dataset(
    theta0: &MlpParams,
    phi: TransferFunction,
    noise_sd: f64,
    input: &InputDistribution,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    input.validate()?;
    check_dim(theta0.d(), input.dim())?;
    if n == 0 {
        return Err(Error::InvalidInput("n must be at least 1".into()));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::InvalidInput(format!("noise standard deviation must be >= 0, got {noise_sd}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (xs, ys) = draw_observations(theta0, phi, noise_sd, input, n, &mut rng).into_iter().unzip();
    let meta = GenerationMeta {
        theta0: ParamFile::from_params(theta0, phi),
        sigma2: noise_sd * noise_sd,
        input: input.clone(),
        seed,
    };
    Ok(Dataset::new(xs, ys)?.with_meta(meta))
}

/// Settings shared by both experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub theta0: MlpParams,
    pub transfer: TransferFunction,
    /// σ² assumed by the likelihood.
    pub noise: NoiseModel,
    /// Noise standard deviation used to simulate; defaults to `noise.sigma()`.
    pub data_sd: Option<f64>,
    pub input: InputDistribution,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub max_units: usize,
    pub penalty: Penalty,
    pub fit: FitConfig,
    pub box_bound: f64,
    pub eta: f64,
    pub master_seed: u64,
}

impl ExperimentPlan {
    /// One tanh unit `(β, a, b, w) = (0, 2, 1, 1.5)` on N(0, 1) inputs,
    /// σ = 0.3, n ∈ {100, 500, 2000, 5000}, 50 replications, M = 3, BIC.
    pub fn default_plan() -> Self {
        let theta0 = MlpParams::new(0.0, vec![crate::mlp::HiddenUnit::new(2.0, 1.0, vec![1.5])]).expect("valid");
        Self {
            theta0,
            transfer: TransferFunction::Tanh,
            noise: NoiseModel::from_sd(0.3).expect("positive"),
            data_sd: None,
            input: InputDistribution::standard_normal(1),
            n_grid: vec![100, 500, 2000, 5000],
            replications: 50,
            max_units: 3,
            penalty: Penalty::Bic,
            fit: FitConfig::default(),
            box_bound: ParamSpace::DEFAULT_BOX_BOUND,
            eta: ParamSpace::DEFAULT_ETA,
            master_seed: 20_240_601,
        }
    }

    pub fn k0(&self) -> usize {
        self.theta0.k()
    }

    pub fn validate(&self) -> Result<()> {
        self.input.validate()?;
        check_dim(self.theta0.d(), self.input.dim())?;
        self.fit.validate()?;
        ParamSpace::new(self.max_units, self.theta0.d(), self.box_bound, self.eta)?;
        if self.replications == 0 {
            return Err(Error::InvalidInput("replications must be at least 1".into()));
        }
        if self.n_grid.is_empty() || self.n_grid[0] == 0 || self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(format!("n_grid must be positive and strictly increasing: {:?}", self.n_grid)));
        }
        if let Some(sd) = self.data_sd {
            if !(sd >= 0.0 && sd.is_finite()) {
                return Err(Error::InvalidInput(format!("data_sd must be >= 0, got {sd}")));
            }
        }
        Ok(())
    }

    pub fn data_sd(&self) -> f64 {
        self.data_sd.unwrap_or_else(|| self.noise.sigma())
    }

    fn cell_seed(&self, n: usize, r: usize) -> u64 {
        derive_seed(self.master_seed, &[n as u64, r as u64])
    }

    fn cell_data(&self, seed: u64, n: usize) -> Result<Dataset> {
        generate_dataset(&self.theta0, self.transfer, self.data_sd(), &self.input, n, derive_seed(seed, &[0]))
    }

    fn cells(&self) -> Vec<(usize, usize)> {
        self.n_grid.iter().flat_map(|&n| (0..self.replications).map(move |r| (n, r))).collect()
    }
}

/// Fraction of failed replications above which a cell is marked invalid.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub n: usize,
    pub replication: usize,
    pub seed: u64,
    pub k_hat: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub n: usize,
    /// `counts[k-1]` replications selected k units.
    pub counts: Vec<usize>,
    pub failures: usize,
    pub valid: bool,
    /// Fraction of successful replications with `k̂ = k⁰`.
    pub freq_correct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub k0: usize,
    pub rows: Vec<ConsistencyRow>,
    pub records: Vec<ReplicationRecord>,
}

impl ConsistencyReport {
    /// Long format: `n,statistic,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,statistic,value\n");
        for row in &self.rows {
            let n = row.n;
            writeln!(out, "{n},freq_k_hat_eq_k0,{:?}", row.freq_correct).unwrap();
            for (i, c) in row.counts.iter().enumerate() {
                writeln!(out, "{n},count_k_hat_{},{c}", i + 1).unwrap();
            }
            writeln!(out, "{n},failures,{}", row.failures).unwrap();
            writeln!(out, "{n},valid,{}", u8::from(row.valid)).unwrap();
        }
        out
    }

    pub fn records_csv(&self) -> String {
        let mut out = String::from("n,replication,seed,k_hat,error\n");
        for r in &self.records {
            let k = r.k_hat.map(|k| k.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{k},{}", r.n, r.replication, r.seed, csv_text(r.error.as_deref())).unwrap();
        }
        out
    }
}

fn csv_text(s: Option<&str>) -> String {
    match s {
        Some(s) => format!("\"{}\"", s.replace('"', "\"\"")),
        None => String::new(),
    }
}

/// Frequency with which `k̂ = k⁰` across replications, per sample size.
pub fn consistency_experiment(plan: &ExperimentPlan) -> Result<ConsistencyReport> {
    plan.validate()?;
    if plan.k0() > plan.max_units {
        return Err(Error::InvalidInput(format!("k0 = {} exceeds M = {}", plan.k0(), plan.max_units)));
    }
    let records: Vec<ReplicationRecord> = plan
        .cells()
        .into_par_iter()
        .map(|(n, r)| {
            let seed = plan.cell_seed(n, r);
            let outcome = plan.cell_data(seed, n).and_then(|data| {
                let selector = Selector {
                    max_units: plan.max_units,
                    penalty: plan.penalty.clone(),
                    transfer: plan.transfer,
                    noise: plan.noise,
                    box_bound: plan.box_bound,
                    eta: plan.eta,
                    fit: FitConfig { seed: derive_seed(seed, &[1]), ..plan.fit.clone() },
                    mode: SelectMode::WarmChain,
                };
                selector.select(&data)
            });
            match outcome {
                Ok(sel) => ReplicationRecord { n, replication: r, seed, k_hat: Some(sel.k_hat), error: None },
                Err(e) => {
                    log::warn!("replication {r} at n = {n} failed: {e}");
                    ReplicationRecord { n, replication: r, seed, k_hat: None, error: Some(e.to_string()) }
                }
            }
        })
        .collect();

    let rows = plan
        .n_grid
        .iter()
        .map(|&n| {
            let mut counts = vec![0; plan.max_units];
            let mut failures = 0;
            for rec in records.iter().filter(|rec| rec.n == n) {
                match rec.k_hat {
                    Some(k) => counts[k - 1] += 1,
                    None => failures += 1,
                }
            }
            let ok = plan.replications - failures;
            let freq_correct = if ok == 0 { 0.0 } else { counts[plan.k0() - 1] as f64 / ok as f64 };
            ConsistencyRow {
                n,
                counts,
                failures,
                valid: failures as f64 <= MAX_FAILURE_FRACTION * plan.replications as f64,
                freq_correct,
            }
        })
        .collect();
    Ok(ConsistencyReport { k0: plan.k0(), rows, records })
}

/// Linear-interpolation quantile of an unsorted sample.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrsRecord {
    pub condition: String,
    pub n: usize,
    pub replication: usize,
    pub seed: u64,
    /// `2(max_{Θ_k_over} l_n − max_{Θ_k⁰} l_n)` before clamping.
    pub lrs_raw: Option<f64>,
    pub lrs: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrsRow {
    pub n: usize,
    pub median: f64,
    pub q90: f64,
    pub min_raw: f64,
    /// Replications whose raw statistic was negative.
    pub clamped: usize,
    pub failures: usize,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrsCondition {
    pub label: String,
    pub box_bound: f64,
    pub rows: Vec<LrsRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrsReport {
    pub k0: usize,
    pub k_over: usize,
    pub conditions: Vec<LrsCondition>,
    pub records: Vec<LrsRecord>,
}

impl LrsReport {
    /// Long format: `condition,n,statistic,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("condition,box_bound,n,statistic,value\n");
        for c in &self.conditions {
            for r in &c.rows {
                let prefix = format!("{},{:?},{}", c.label, c.box_bound, r.n);
                writeln!(out, "{prefix},median,{:?}", r.median).unwrap();
                writeln!(out, "{prefix},q90,{:?}", r.q90).unwrap();
                writeln!(out, "{prefix},min_raw,{:?}", r.min_raw).unwrap();
                writeln!(out, "{prefix},clamped,{}", r.clamped).unwrap();
                writeln!(out, "{prefix},failures,{}", r.failures).unwrap();
                writeln!(out, "{prefix},valid,{}", u8::from(r.valid)).unwrap();
            }
        }
        out
    }

    pub fn records_csv(&self) -> String {
        let mut out = String::from("condition,n,replication,seed,lrs_raw,lrs,error\n");
        let fmt = |v: Option<f64>| v.map(|v| format!("{v:?}")).unwrap_or_default();
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.condition,
                r.n,
                r.replication,
                r.seed,
                fmt(r.lrs_raw),
                fmt(r.lrs),
                csv_text(r.error.as_deref())
            )
            .unwrap();
        }
        out
    }

    pub fn condition(&self, label: &str) -> Option<&LrsCondition> {
        self.conditions.iter().find(|c| c.label == label)
    }
}

/// Label of the main (plan box bound) condition.
pub const BOUNDED: &str = "bounded";
/// Label of the enlarged-box contrast condition.
pub const LOOSE: &str = "loose";

/// Distribution of `LRS_n = 2(max_{Θ_k_over} l_n − max_{Θ_k⁰} l_n)` per n.
///
/// The overparameterized fit is warm-started from the k⁰ optimum padded
/// with zero-output units, so the raw statistic is nonnegative up to
/// optimizer slack; negatives are clamped to 0 and counted. With
/// `loose_factor = Some(c)` the experiment is repeated on the same data
/// with the box bound multiplied by `c`.
pub fn lrs_tightness_experiment(plan: &ExperimentPlan, k_over: usize, loose_factor: Option<f64>) -> Result<LrsReport> {
    plan.validate()?;
    let k0 = plan.k0();
    if k_over < k0 {
        return Err(Error::InvalidInput(format!("k_over = {k_over} is below k0 = {k0}")));
    }
    let mut conditions = vec![(BOUNDED.to_string(), plan.box_bound)];
    if let Some(c) = loose_factor {
        if !(c > 1.0 && c.is_finite()) {
            return Err(Error::InvalidInput(format!("loose factor must exceed 1, got {c}")));
        }
        conditions.push((LOOSE.to_string(), plan.box_bound * c));
    }
    let d = plan.theta0.d();
    // validates every box up front
    for (_, b) in &conditions {
        ParamSpace::new(k_over, d, *b, plan.eta)?;
    }

    let jobs: Vec<(usize, usize, usize)> = (0..conditions.len())
        .flat_map(|c| plan.cells().into_iter().map(move |(n, r)| (c, n, r)))
        .collect();
    let records: Vec<LrsRecord> = jobs
        .into_par_iter()
        .map(|(c, n, r)| {
            let (label, bound) = &conditions[c];
            let seed = plan.cell_seed(n, r);
            let outcome = lrs_cell(plan, k_over, *bound, seed, n);
            match outcome {
                Ok(raw) => {
                    if raw < 0.0 {
                        log::info!("{label} n = {n} replication {r}: LRS {raw:e} clamped to 0");
                    }
                    LrsRecord {
                        condition: label.clone(),
                        n,
                        replication: r,
                        seed,
                        lrs_raw: Some(raw),
                        lrs: Some(raw.max(0.0)),
                        error: None,
                    }
                }
                Err(e) => {
                    log::warn!("{label} n = {n} replication {r} failed: {e}");
                    LrsRecord { condition: label.clone(), n, replication: r, seed, lrs_raw: None, lrs: None, error: Some(e.to_string()) }
                }
            }
        })
        .collect();

    let conditions = conditions
        .into_iter()
        .map(|(label, box_bound)| {
            let rows = plan
                .n_grid
                .iter()
                .map(|&n| {
                    let cell: Vec<&LrsRecord> = records.iter().filter(|r| r.condition == label && r.n == n).collect();
                    let lrs: Vec<f64> = cell.iter().filter_map(|r| r.lrs).collect();
                    let raw: Vec<f64> = cell.iter().filter_map(|r| r.lrs_raw).collect();
                    let failures = cell.len() - lrs.len();
                    LrsRow {
                        n,
                        median: quantile(&lrs, 0.5),
                        q90: quantile(&lrs, 0.9),
                        min_raw: raw.iter().copied().fold(f64::INFINITY, f64::min),
                        clamped: raw.iter().filter(|&&v| v < 0.0).count(),
                        failures,
                        valid: failures as f64 <= MAX_FAILURE_FRACTION * plan.replications as f64,
                    }
                })
                .collect();
            LrsCondition { label, box_bound, rows }
        })
        .collect();
    Ok(LrsReport { k0, k_over, conditions, records })
}

fn lrs_cell(plan: &ExperimentPlan, k_over: usize, box_bound: f64, seed: u64, n: usize) -> Result<f64> {
    let data = plan.cell_data(seed, n)?;
    let k0 = plan.k0();
    let d = plan.theta0.d();
    let small_space = ParamSpace::new(k0, d, box_bound, plan.eta)?;
    let small_cfg = FitConfig { seed: derive_seed(seed, &[1]), ..plan.fit.clone() };
    let small = fit_mle_with_starts(&small_space, plan.transfer, &plan.noise, &data, &small_cfg, &[])
        .map_err(|e| Error::FitFailed { k: k0, source: Box::new(e) })?;
    if k_over == k0 {
        return Ok(0.0);
    }
    let big_space = ParamSpace::new(k_over, d, box_bound, plan.eta)?;
    let warm = (k0..k_over).fold(small.theta_hat.clone(), |t, _| embed_extra_unit(&t, plan.eta));
    let big_cfg = FitConfig { seed: derive_seed(seed, &[2]), ..plan.fit.clone() };
    let big = fit_mle_with_starts(&big_space, plan.transfer, &plan.noise, &data, &big_cfg, &[warm])
        .map_err(|e| Error::FitFailed { k: k_over, source: Box::new(e) })?;
    Ok(2.0 * (big.loglik - small.loglik))
}
