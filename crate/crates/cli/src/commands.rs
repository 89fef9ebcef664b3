use std::path::{Path, PathBuf};

use log::{info, warn};
use mlpsel::identifiability::gram_test_h3;
use mlpsel::optimizer::{fit_mle, ParamSpace};
use mlpsel::reparam::{decompose, expansion_check};
use mlpsel::seeding::derive_seed;
use mlpsel::selection::{check_h4, penalty_value, Selector};
use mlpsel::simulate::{consistency_experiment, generate_dataset, lrs_tightness_experiment};
use mlpsel::Dataset;
use serde::Serialize;

use crate::config::*;
use crate::error::{CliError, CliResult};
use crate::output::{csv_header, sibling, write_atomic, VERSION};

/// Where a command reads its config from and writes its result to.
pub struct Io {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

impl Io {
    fn base(&self) -> &Path {
        match self.config.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        }
    }
}

fn observations(data: &Dataset) -> Vec<(Vec<f64>, f64)> {
    data.iter().map(|(x, y)| (x.to_vec(), y)).collect()
}

pub fn generate(io: &Io) -> CliResult<()> {
    let mut cfg: GenerateConfig = load(&io.config)?;
    cfg.seed = io.seed.unwrap_or(cfg.seed);
    let (theta0, phi) = cfg.theta0.load(io.base())?;
    let data = generate_dataset(&theta0, phi, cfg.noise_sd, &cfg.input, cfg.n, cfg.seed)?;
    let mut body = Vec::new();
    data.write_csv(&mut body)?;
    let body = String::from_utf8(body).expect("csv output is utf-8");
    write_atomic(&io.out, &(csv_header("generate", &cfg) + &body))?;
    info!("wrote {} observations to {}", data.n(), io.out.display());
    Ok(())
}

#[derive(Serialize)]
struct FitOutput<'a, T: Serialize> {
    version: &'static str,
    config: &'a FitCommandConfig,
    result: T,
}

pub fn fit(io: &Io) -> CliResult<()> {
    let mut cfg: FitCommandConfig = load(&io.config)?;
    cfg.fit.seed = io.seed.unwrap_or(cfg.fit.seed);
    let data = load_dataset(io.base(), &cfg.data)?;
    let space = ParamSpace::new(cfg.k, data.d(), cfg.box_bound, cfg.eta)?;
    let result = fit_mle(&space, cfg.transfer, &noise(cfg.sigma2)?, &data, &cfg.fit)?;
    if result.near_boundary {
        warn!("the estimate lies near the boundary of the parameter space");
    }
    let out = FitOutput { version: VERSION, config: &cfg, result };
    let json = serde_json::to_string_pretty(&out).expect("fit result serializes");
    write_atomic(&io.out, &(json + "\n"))
}

pub fn select(io: &Io) -> CliResult<()> {
    let mut cfg: SelectConfig = load(&io.config)?;
    cfg.fit.seed = io.seed.unwrap_or(cfg.fit.seed);
    let data = load_dataset(io.base(), &cfg.data)?;
    let selector = Selector {
        max_units: cfg.max_units,
        penalty: cfg.penalty.clone(),
        transfer: cfg.transfer,
        noise: noise(cfg.sigma2)?,
        box_bound: cfg.box_bound,
        eta: cfg.eta,
        fit: cfg.fit.clone(),
        mode: cfg.mode,
    };
    let result = selector.select(&data)?;
    if result.increasing_at_max {
        warn!("criterion still increasing at k = {}; consider a larger max_units", cfg.max_units);
    }
    info!("selected k = {}", result.k_hat);
    write_atomic(&io.out, &(csv_header("select", &cfg) + &result.to_csv()))
}

pub fn simulate(io: &Io) -> CliResult<()> {
    let mut cfg: PlanConfig = load(&io.config)?;
    cfg.master_seed = io.seed.unwrap_or(cfg.master_seed);
    let plan = cfg.plan(io.base())?;
    let report = consistency_experiment(&plan)?;
    let header = csv_header("simulate", &cfg);
    write_atomic(&io.out, &(header.clone() + &report.to_csv()))?;
    write_atomic(&sibling(&io.out, "records"), &(header + &report.records_csv()))
}

pub fn lrs(io: &Io) -> CliResult<()> {
    let mut cfg: LrsConfig = load(&io.config)?;
    cfg.plan.master_seed = io.seed.unwrap_or(cfg.plan.master_seed);
    let plan = cfg.plan.plan(io.base())?;
    let report = lrs_tightness_experiment(&plan, cfg.k_over, cfg.loose_factor)?;
    let header = csv_header("lrs", &cfg);
    write_atomic(&io.out, &(header.clone() + &report.to_csv()))?;
    write_atomic(&sibling(&io.out, "records"), &(header + &report.records_csv()))
}

pub fn expand_check(io: &Io) -> CliResult<()> {
    let mut cfg: ExpandCheckConfig = load(&io.config)?;
    cfg.seed = io.seed.unwrap_or(cfg.seed);
    let (theta0, phi) = cfg.theta0.load(io.base())?;
    let (theta, phi_theta) = cfg.theta.load(io.base())?;
    if phi != phi_theta {
        return Err(CliError::Config("theta and theta0 use different transfer functions".into()));
    }
    let noise = noise(cfg.sigma2)?;
    let dec = decompose(&theta, &theta0, cfg.cluster_tol)?;
    let norm = cfg.direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(CliError::Config("direction must be nonzero".into()));
    }
    let direction: Vec<f64> = cfg.direction.iter().map(|v| v / norm).collect();
    let sd = noise.sigma();
    let norm_sample = generate_dataset(&theta0, phi, sd, &cfg.input, cfg.mc_samples, derive_seed(cfg.seed, &[0]))?;
    let points = generate_dataset(&theta0, phi, sd, &cfg.input, cfg.points, derive_seed(cfg.seed, &[1]))?;
    let rows = expansion_check(&dec, &theta0, phi, &noise, &direction, &cfg.hs, &observations(&norm_sample), &observations(&points))?;
    let mut out = csv_header("expand-check", &cfg) + "h,D,remainder,relative\n";
    for r in &rows {
        out += &format!("{:?},{:?},{:?},{:?}\n", r.h, r.d, r.remainder, r.relative);
    }
    write_atomic(&io.out, &out)
}

pub fn gram_check(io: &Io) -> CliResult<()> {
    let mut cfg: GramConfig = load(&io.config)?;
    cfg.seed = io.seed.unwrap_or(cfg.seed);
    let (theta0, phi) = cfg.theta0.load(io.base())?;
    let report = gram_test_h3(&theta0, phi, &cfg.input, cfg.mc_samples, cfg.seed)?;
    write_atomic(&io.out, &(csv_header("gram-check", &cfg) + &report.to_csv()))?;
    if !report.supports_independence(cfg.threshold) {
        return Err(CliError::Diagnostic(format!(
            "minimum eigenvalue {:e} (se {:e}) is not above {:e}",
            report.min_eigenvalue, report.min_eigenvalue_se, cfg.threshold
        )));
    }
    Ok(())
}

pub fn check_penalty(io: &Io) -> CliResult<()> {
    let cfg: PenaltyConfig = load(&io.config)?;
    let report = check_h4(&cfg.penalty, cfg.k_max, &cfg.n_grid, cfg.d)?;
    let mut out = csv_header("check-penalty", &cfg) + "n,k,penalty\n";
    for &n in &cfg.n_grid {
        for k in 1..=cfg.k_max {
            out += &format!("{n},{k},{:?}\n", penalty_value(&cfg.penalty, k, n, cfg.d)?);
        }
    }
    let checks = [
        ("increasing_in_k", &report.increasing_in_k),
        ("diverging_gaps", &report.diverging_gaps),
        ("vanishing_rate", &report.vanishing_rate),
    ];
    for (name, c) in checks {
        out += &format!("# {name}={}\n", c.passed);
        if let Some(msg) = &c.counterexample {
            out += &format!("# {name} counterexample: {msg}\n");
        }
    }
    write_atomic(&io.out, &out)?;
    if !report.passed() {
        let failed: Vec<&str> = checks.iter().filter(|(_, c)| !c.passed).map(|(n, _)| *n).collect();
        return Err(CliError::Diagnostic(format!("penalty fails: {}", failed.join(", "))));
    }
    Ok(())
}
