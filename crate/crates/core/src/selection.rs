//! Penalties, the penalized criterion `T_n(k) = max_{Θ_k} l_n − p_n(k)`
//! and the architecture estimator `k̂ = argmax_k T_n(k)`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{Dataset, NoiseModel};
use crate::mlp::flat_dim;
use crate::optimizer::{embed_extra_unit, fit_mle_with_starts, FitConfig, FitResult, ParamSpace};
use crate::seeding::derive_seed;
use crate::transfer::TransferFunction;

/// Penalty `p_n(k)` on the number of hidden units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Penalty {
    /// `(dim_k / 2) · ln n`
    Bic,
    /// `dim_k`, constant in n; violates the divergence condition.
    Aic,
    /// `c · dim_k · n^alpha`
    Power { c: f64, alpha: f64 },
    /// `weights[k-1] · n^exponent`
    Table { weights: Vec<f64>, exponent: f64 },
}

/// Number of free coordinates of a k-unit network on d inputs.
pub fn model_dim(k: usize, d: usize) -> usize {
    flat_dim(k, d)
}

pub fn penalty_value(pen: &Penalty, k: usize, n: usize, d: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidInput(format!("penalty needs n >= 1 (n = {n})")));
    }
    penalty_value_at(pen, k, n as f64, d)
}

/// [`penalty_value`] at a real-valued sample size `n ≥ 1`.
pub fn penalty_value_at(pen: &Penalty, k: usize, n: f64, d: usize) -> Result<f64> {
    if k == 0 || !(n >= 1.0) || !n.is_finite() {
        return Err(Error::InvalidInput(format!("penalty needs k >= 1 and n >= 1 (k = {k}, n = {n})")));
    }
    let dim = model_dim(k, d) as f64;
    Ok(match pen {
        Penalty::Bic => 0.5 * dim * n.ln(),
        Penalty::Aic => dim,
        Penalty::Power { c, alpha } => c * dim * n.powf(*alpha),
        Penalty::Table { weights, exponent } => {
            let w = weights.get(k - 1).ok_or_else(|| {
                Error::InvalidInput(format!("penalty table has {} entries, k = {k} requested", weights.len()))
            })?;
            w * n.powf(*exponent)
        }
    })
}

/// Outcome of one numeric penalty growth condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub passed: bool,
    pub counterexample: Option<String>,
}

impl ConditionCheck {
    fn pass() -> Self {
        Self { passed: true, counterexample: None }
    }

    fn fail(msg: String) -> Self {
        Self { passed: false, counterexample: Some(msg) }
    }
}

/// Grid evaluation of the penalty growth conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H4Report {
    /// (i) `p_n(k)` strictly increasing in k for every n.
    pub increasing_in_k: ConditionCheck,
    /// (ii) `p_n(k1) − p_n(k2)` strictly increasing along the grid, k1 > k2.
    pub diverging_gaps: ConditionCheck,
    /// (iii) `p_n(k)/n` strictly decreasing along the grid.
    pub vanishing_rate: ConditionCheck,
}

impl H4Report {
    pub fn passed(&self) -> bool {
        self.increasing_in_k.passed && self.diverging_gaps.passed && self.vanishing_rate.passed
    }
}

pub fn check_h4(pen: &Penalty, k_max: usize, n_grid: &[usize], d: usize) -> Result<H4Report> {
    if k_max == 0 || n_grid.is_empty() {
        return Err(Error::InvalidInput("check_h4 needs k_max >= 1 and a nonempty grid".into()));
    }
    if n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput(format!("n_grid must be strictly increasing: {n_grid:?}")));
    }
    // values[g][k-1]
    let values = n_grid
        .iter()
        .map(|&n| (1..=k_max).map(|k| penalty_value(pen, k, n, d)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;

    let mut increasing_in_k = ConditionCheck::pass();
    'outer: for (g, row) in values.iter().enumerate() {
        for k in 1..k_max {
            if row[k] <= row[k - 1] {
                increasing_in_k = ConditionCheck::fail(format!(
                    "n = {}: p({}) = {} <= p({}) = {}",
                    n_grid[g],
                    k + 1,
                    row[k],
                    k,
                    row[k - 1]
                ));
                break 'outer;
            }
        }
    }

    let mut diverging_gaps = ConditionCheck::pass();
    'outer: for k2 in 1..=k_max {
        for k1 in k2 + 1..=k_max {
            for g in 1..n_grid.len() {
                let before = values[g - 1][k1 - 1] - values[g - 1][k2 - 1];
                let after = values[g][k1 - 1] - values[g][k2 - 1];
                if after <= before {
                    diverging_gaps = ConditionCheck::fail(format!(
                        "p({k1}) - p({k2}) = {before} at n = {} but {after} at n = {}",
                        n_grid[g - 1],
                        n_grid[g]
                    ));
                    break 'outer;
                }
            }
        }
    }

    let mut vanishing_rate = ConditionCheck::pass();
    'outer: for k in 1..=k_max {
        for g in 1..n_grid.len() {
            let before = values[g - 1][k - 1] / n_grid[g - 1] as f64;
            let after = values[g][k - 1] / n_grid[g] as f64;
            if after >= before {
                vanishing_rate = ConditionCheck::fail(format!(
                    "k = {k}: p/n = {before} at n = {} but {after} at n = {}",
                    n_grid[g - 1],
                    n_grid[g]
                ));
                break 'outer;
            }
        }
    }

    Ok(H4Report { increasing_in_k, diverging_gaps, vanishing_rate })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectMode {
    /// Fit k = 1..M in order, warm-starting each fit from the previous optimum.
    #[default]
    WarmChain,
    /// Independent fits in parallel; no nesting guarantee on the maxima.
    Independent,
}

/// Settings for [`select_architecture`] beyond the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selector {
    pub max_units: usize,
    pub penalty: Penalty,
    pub transfer: TransferFunction,
    pub noise: NoiseModel,
    pub box_bound: f64,
    pub eta: f64,
    pub fit: FitConfig,
    pub mode: SelectMode,
}

impl Selector {
    pub fn new(max_units: usize, penalty: Penalty, transfer: TransferFunction, noise: NoiseModel, fit: FitConfig) -> Self {
        Self {
            max_units,
            penalty,
            transfer,
            noise,
            box_bound: ParamSpace::DEFAULT_BOX_BOUND,
            eta: ParamSpace::DEFAULT_ETA,
            fit,
            mode: SelectMode::WarmChain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub k: usize,
    pub loglik: f64,
    pub penalty: f64,
    pub t_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub per_k: Vec<SelectionRow>,
    pub k_hat: usize,
    /// `T_n` still increased between `M − 1` and `M`; M may be too small.
    pub increasing_at_max: bool,
    pub fits: Vec<FitResult>,
}

/// Relative slack under which two criterion values count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Smallest index attaining the maximum of `values` up to [`TIE_TOLERANCE`].
pub fn argmax_smallest(values: &[f64]) -> usize {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slack = TIE_TOLERANCE * best.abs().max(1.0);
    values.iter().position(|&v| v >= best - slack).unwrap_or(0)
}

impl SelectionResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,loglik,penalty,T_n\n");
        for r in &self.per_k {
            writeln!(out, "{},{:?},{:?},{:?}", r.k, r.loglik, r.penalty, r.t_n).unwrap();
        }
        writeln!(out, "# k_hat={}", self.k_hat).unwrap();
        out
    }
}

/// `k̂` for `data` with the given penalty, using default box bound and η.
pub fn select_architecture(
    data: &Dataset,
    max_units: usize,
    pen: &Penalty,
    phi: TransferFunction,
    noise: &NoiseModel,
    cfg: &FitConfig,
) -> Result<SelectionResult> {
    Selector::new(max_units, pen.clone(), phi, *noise, cfg.clone()).select(data)
}

impl Selector {
    pub fn select(&self, data: &Dataset) -> Result<SelectionResult> {
        if self.max_units == 0 {
            return Err(Error::InvalidInput("M must be at least 1".into()));
        }
        let d = data.d();
        let space_for = |k: usize| ParamSpace::new(k, d, self.box_bound, self.eta);
        let cfg_for = |k: usize| FitConfig { seed: derive_seed(self.fit.seed, &[k as u64]), ..self.fit.clone() };
        let wrap = |k: usize| move |e: Error| Error::FitFailed { k, source: Box::new(e) };

        let fits: Vec<FitResult> = match self.mode {
            SelectMode::WarmChain => {
                let mut fits: Vec<FitResult> = Vec::with_capacity(self.max_units);
                for k in 1..=self.max_units {
                    let space = space_for(k)?;
                    let warm: Vec<_> = fits.last().map(|f| embed_extra_unit(&f.theta_hat, self.eta)).into_iter().collect();
                    let fit = fit_mle_with_starts(&space, self.transfer, &self.noise, data, &cfg_for(k), &warm).map_err(wrap(k))?;
                    fits.push(fit);
                }
                fits
            }
            SelectMode::Independent => (1..=self.max_units)
                .into_par_iter()
                .map(|k| fit_mle_with_starts(&space_for(k)?, self.transfer, &self.noise, data, &cfg_for(k), &[]).map_err(wrap(k)))
                .collect::<Result<Vec<_>>>()?,
        };

        let per_k = fits
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let k = i + 1;
                let penalty = penalty_value(&self.penalty, k, data.n(), d)?;
                Ok(SelectionRow { k, loglik: f.loglik, penalty, t_n: f.loglik - penalty })
            })
            .collect::<Result<Vec<_>>>()?;
        let t: Vec<f64> = per_k.iter().map(|r| r.t_n).collect();
        let k_hat = argmax_smallest(&t) + 1;
        let increasing_at_max = t.len() >= 2 && t[t.len() - 1] > t[t.len() - 2];
        if increasing_at_max {
            log::warn!("T_n is still increasing at k = M = {}; consider a larger M", self.max_units);
        }
        Ok(SelectionResult { per_k, k_hat, increasing_at_max, fits })
    }
}
