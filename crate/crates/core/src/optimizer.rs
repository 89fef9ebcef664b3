//! Constrained maximum likelihood over the compact set Θ_k.
//!
//! With σ² fixed, maximizing `l_n` is minimizing the residual sum of
//! squares. Each start runs a projected Levenberg–Marquardt iteration: a
//! Gauss–Newton step damped by the diagonal of `JᵀJ`, followed by
//! projection onto Θ_k, accepted only if the RSS decreases. Large damping
//! degrades the step to a diagonally scaled projected gradient step, so
//! the damping update plays the role of the backtracking line search.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::likelihood::{loglik_from_rss, Dataset, NoiseModel};
use crate::mlp::{flat_dim, HiddenUnit, Layout, MlpParams};
use crate::transfer::TransferFunction;

/// The compact parameter set Θ_k: every coordinate in `[-B, B]` and
/// `‖w_i‖₂ ≥ η` for every unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    pub k: usize,
    pub d: usize,
    pub box_bound: f64,
    pub eta: f64,
}

impl ParamSpace {
    pub const DEFAULT_BOX_BOUND: f64 = 20.0;
    pub const DEFAULT_ETA: f64 = 0.1;

    pub fn new(k: usize, d: usize, box_bound: f64, eta: f64) -> Result<Self> {
        if k == 0 || d == 0 {
            return Err(Error::InvalidInput(format!("k = {k} and d = {d} must both be positive")));
        }
        if !(box_bound > 0.0 && eta > 0.0 && box_bound.is_finite()) {
            return Err(Error::InvalidInput(format!("need B > 0 and eta > 0, got B = {box_bound}, eta = {eta}")));
        }
        if eta >= box_bound * (d as f64).sqrt() {
            return Err(Error::InvalidInput(format!(
                "eta = {eta} leaves no feasible weight vector inside the box B = {box_bound} (d = {d})"
            )));
        }
        Ok(Self { k, d, box_bound, eta })
    }

    pub fn with_defaults(k: usize, d: usize) -> Result<Self> {
        Self::new(k, d, Self::DEFAULT_BOX_BOUND, Self::DEFAULT_ETA)
    }

    pub fn with_k(&self, k: usize) -> Result<Self> {
        Self::new(k, self.d, self.box_bound, self.eta)
    }

    pub fn dim(&self) -> usize {
        flat_dim(self.k, self.d)
    }

    /// Membership predicate for Θ_k.
    pub fn contains(&self, theta: &MlpParams) -> bool {
        let bound = self.box_bound;
        theta.k() == self.k
            && theta.d() == self.d
            && theta.to_flat().iter().all(|c| c.abs() <= bound)
            && theta.units().iter().all(|u| u.weight_norm() >= self.eta)
    }

    /// True if some coordinate lies within `1e-3·B` of the box boundary.
    pub fn near_boundary(&self, theta: &MlpParams) -> bool {
        let limit = self.box_bound * (1.0 - 1e-3);
        theta.to_flat().iter().any(|c| c.abs() >= limit)
    }
}

/// Maps θ into Θ_k: clip every coordinate to `[-B, B]`, then push any
/// `w_i` with `‖w_i‖ < η` radially out to norm η (`w_i = 0` goes to `η·e_1`).
pub fn project(theta: &MlpParams, space: &ParamSpace) -> Result<MlpParams> {
    check_dim(space.k, theta.k())?;
    check_dim(space.d, theta.d())?;
    let mut out = theta.clone();
    project_in_place(&mut out, space);
    Ok(out)
}

pub(crate) fn project_in_place(theta: &mut MlpParams, space: &ParamSpace) {
    let bound = space.box_bound;
    let clip = |v: f64| v.clamp(-bound, bound);
    theta.set_beta(clip(theta.beta()));
    for u in theta.units_mut() {
        u.a = clip(u.a);
        u.b = clip(u.b);
        u.w.iter_mut().for_each(|w| *w = clip(*w));
        project_weights(&mut u.w, space);
    }
}

fn project_weights(w: &mut [f64], space: &ParamSpace) {
    let eta = space.eta;
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm >= eta {
        return;
    }
    if norm == 0.0 {
        w.iter_mut().for_each(|v| *v = 0.0);
        w[0] = eta;
    } else {
        // nudged up so rounding cannot leave the norm just below η
        let scale = eta / norm * (1.0 + 4.0 * f64::EPSILON);
        w.iter_mut().for_each(|v| *v *= scale);
    }
    // Only reachable when η > B, i.e. d ≥ 2 and a nearly empty annulus.
    if w.iter().any(|v| v.abs() > space.box_bound) {
        let c = eta / (w.len() as f64).sqrt() * (1.0 + 4.0 * f64::EPSILON);
        w.iter_mut().for_each(|v| *v = if *v < 0.0 { -c } else { c });
    }
}

/// Appends a zero-output unit (`a = 0`, `b = 0`, `w = η·e_1`), which leaves
/// `F_θ` and therefore `l_n` unchanged.
pub fn embed_extra_unit(theta: &MlpParams, eta: f64) -> MlpParams {
    let d = theta.d();
    let mut w = vec![0.0; d];
    w[0] = eta;
    let mut units = theta.units().to_vec();
    units.push(HiddenUnit::new(0.0, 0.0, w));
    MlpParams::new(theta.beta(), units).expect("dimensions already consistent")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub restarts: usize,
    pub max_iters: usize,
    /// Threshold on the projected-gradient norm of `RSS/(2n)`.
    pub grad_tol: f64,
    pub init_scale: f64,
    pub seed: u64,
    /// A start also stops when ten consecutive accepted steps reduce the
    /// RSS by less than this relative amount in total.
    pub stall_tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            restarts: 20,
            max_iters: 5000,
            grad_tol: 1e-8,
            init_scale: 2.0,
            seed: 0,
            stall_tol: 1e-8,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::InvalidInput("restarts must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be at least 1".into()));
        }
        if !(self.grad_tol > 0.0 && self.init_scale > 0.0 && self.stall_tol > 0.0) {
            return Err(Error::InvalidInput("grad_tol, init_scale and stall_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: MlpParams,
    pub loglik: f64,
    pub rss: f64,
    /// Starts that met the projected-gradient tolerance.
    pub converged_restarts: usize,
    /// Fresh restarts are numbered `0..restarts`, supplied warm starts follow.
    pub best_restart_index: usize,
    pub starts: usize,
    pub near_boundary: bool,
}

/// Outcome of a single start.
#[derive(Debug, Clone)]
pub struct StartOutcome {
    pub theta: MlpParams,
    pub rss: f64,
    pub converged: bool,
    pub iterations: usize,
    /// RSS after each accepted step, starting with the initial point.
    pub trace: Vec<f64>,
}

/// Maximizes `l_n` over Θ_k from `cfg.restarts` random starts.
pub fn fit_mle(
    space: &ParamSpace,
    phi: TransferFunction,
    noise: &NoiseModel,
    data: &Dataset,
    cfg: &FitConfig,
) -> Result<FitResult> {
    fit_mle_with_starts(space, phi, noise, data, cfg, &[])
}

/// As [`fit_mle`], with additional caller-supplied starting points.
pub fn fit_mle_with_starts(
    space: &ParamSpace,
    phi: TransferFunction,
    noise: &NoiseModel,
    data: &Dataset,
    cfg: &FitConfig,
    warm_starts: &[MlpParams],
) -> Result<FitResult> {
    cfg.validate()?;
    check_dim(space.d, data.d())?;
    for w in warm_starts {
        check_dim(space.k, w.k())?;
        check_dim(space.d, w.d())?;
    }
    let total = cfg.restarts + warm_starts.len();
    let outcomes: Vec<StartOutcome> = (0..total)
        .into_par_iter()
        .map(|i| {
            let init = if i < cfg.restarts {
                random_start(space, cfg, i)
            } else {
                warm_starts[i - cfg.restarts].clone()
            };
            run_start(init, space, phi, data, cfg)
        })
        .collect();

    let mut best: Option<usize> = None;
    for (i, o) in outcomes.iter().enumerate() {
        if !o.rss.is_finite() {
            continue;
        }
        // strict improvement keeps the lowest index on ties
        if best.is_none_or(|b| o.rss < outcomes[b].rss) {
            best = Some(i);
        }
    }
    let Some(best) = best else {
        return Err(Error::OptimizationFailure {
            restarts: total,
            detail: format!("n = {}, k = {}", data.n(), space.k),
        });
    };
    let converged_restarts = outcomes.iter().filter(|o| o.converged && o.rss.is_finite()).count();
    let o = outcomes.into_iter().nth(best).expect("index in range");
    let near_boundary = space.near_boundary(&o.theta);
    if near_boundary {
        log::warn!(
            "fitted k = {} network has a coordinate within 1e-3*B of the box bound B = {}; the true parameter may lie outside the box",
            space.k,
            space.box_bound
        );
    }
    Ok(FitResult {
        loglik: loglik_from_rss(data.n(), o.rss, noise),
        rss: o.rss,
        theta_hat: o.theta,
        converged_restarts,
        best_restart_index: best,
        starts: total,
        near_boundary,
    })
}

fn random_start(space: &ParamSpace, cfg: &FitConfig, index: usize) -> MlpParams {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ index as u64);
    let s = cfg.init_scale;
    let flat: Vec<f64> = (0..space.dim()).map(|_| rng.random_range(-s..=s)).collect();
    let mut theta = MlpParams::from_flat(space.k, space.d, &flat).expect("space has positive k and d");
    project_in_place(&mut theta, space);
    theta
}

/// Normal equations of the Gauss–Newton model at one point.
struct Linearization {
    jtj: DMatrix<f64>,
    jtr: DVector<f64>,
    rss: f64,
}

fn linearize(theta: &MlpParams, phi: TransferFunction, data: &Dataset, row: &mut [f64]) -> Linearization {
    let p = row.len();
    let n = data.n();
    // column-major Jacobian, residual stored as an extra column
    let mut cols = vec![0.0; n * (p + 1)];
    for (t, (x, y)) in data.iter().enumerate() {
        cols[p * n + t] = y - theta.grad_into(phi, x, row);
        for (a, &v) in row.iter().enumerate() {
            cols[a * n + t] = v;
        }
    }
    let col = |a: usize| &cols[a * n..(a + 1) * n];
    let mut jtj = DMatrix::zeros(p, p);
    let mut jtr = DVector::zeros(p);
    for a in 0..p {
        for b in a..p {
            let v = dot4(col(a), col(b));
            jtj[(a, b)] = v;
            jtj[(b, a)] = v;
        }
        jtr[a] = dot4(col(a), col(p));
    }
    Linearization { jtj, jtr, rss: dot4(col(p), col(p)) }
}

/// Dot product with four independent accumulators.
fn dot4(u: &[f64], v: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (uc, vc) = (u.chunks_exact(4), v.chunks_exact(4));
    let tail: f64 = uc.remainder().iter().zip(vc.remainder()).map(|(a, b)| a * b).sum();
    for (a, b) in uc.zip(vc) {
        for i in 0..4 {
            acc[i] += a[i] * b[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn rss_of(theta: &MlpParams, phi: TransferFunction, data: &Dataset) -> f64 {
    data.iter()
        .map(|(x, y)| {
            let r = y - theta.forward_unchecked(phi, x);
            r * r
        })
        .sum()
}

/// Norm of `θ − P(θ − ∇)` for the objective `RSS/(2n)`.
fn projected_gradient_norm(theta: &MlpParams, jtr: &DVector<f64>, n: usize, space: &ParamSpace, scratch: &mut MlpParams) -> f64 {
    let flat = theta.to_flat();
    // ∇(RSS/2n) = −Jᵀr/n
    let moved: Vec<f64> = flat.iter().zip(jtr.iter()).map(|(t, g)| t + g / n as f64).collect();
    scratch.read_flat(&moved);
    project_in_place(scratch, space);
    flat.iter()
        .zip(scratch.to_flat())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Projector onto the directions that may move: box coordinates pinned at
/// `±B` and weight vectors pinned at `‖w‖ = η` are frozen whenever the descent
/// direction `Jᵀr` points out of Θ_k. `None` when nothing is pinned.
fn free_projector(flat: &[f64], descent: &DVector<f64>, space: &ParamSpace) -> Option<DMatrix<f64>> {
    let p = flat.len();
    let layout = Layout::new(space.k, space.d);
    let pinned_box = |j: usize| flat[j].abs() >= space.box_bound * (1.0 - 1e-12) && flat[j] * descent[j] > 0.0;
    let mut frozen: Vec<DVector<f64>> = (0..p).filter(|&j| pinned_box(j)).map(|j| DVector::from_fn(p, |i, _| f64::from(i == j))).collect();
    for i in 0..space.k {
        let w = layout.w(i, 0)..layout.w(i, 0) + space.d;
        let norm = flat[w.clone()].iter().map(|v| v * v).sum::<f64>().sqrt();
        let radial: f64 = w.clone().map(|j| flat[j] * descent[j]).sum();
        if norm <= space.eta * (1.0 + 1e-9) && radial < 0.0 && !w.clone().any(pinned_box) {
            let mut v = DVector::zeros(p);
            w.for_each(|j| v[j] = flat[j] / norm);
            frozen.push(v);
        }
    }
    if frozen.is_empty() {
        return None;
    }
    let mut q = DMatrix::identity(p, p);
    for v in &frozen {
        q -= v * v.transpose();
    }
    Some(q)
}

const STALL_WINDOW: usize = 10;
const MAX_DAMPING: f64 = 1e16;

/// Projected Levenberg–Marquardt descent from one starting point.
pub fn run_start(
    init: MlpParams,
    space: &ParamSpace,
    phi: TransferFunction,
    data: &Dataset,
    cfg: &FitConfig,
) -> StartOutcome {
    let n = data.n();
    let p = space.dim();
    let mut theta = init;
    project_in_place(&mut theta, space);
    let mut candidate = theta.clone();
    let mut row = vec![0.0; p];
    let mut lin = linearize(&theta, phi, data, &mut row);
    let mut trace = vec![lin.rss];
    if !lin.rss.is_finite() {
        return StartOutcome { theta, rss: f64::NAN, converged: false, iterations: 0, trace };
    }
    let mut damping = 1e-3;
    let mut growth = 2.0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        if projected_gradient_norm(&theta, &lin.jtr, n, space, &mut candidate) < cfg.grad_tol {
            converged = true;
            break;
        }
        let diag_floor = 1e-12 * (lin.jtj.trace() / p as f64).max(1e-300);
        let current = theta.to_flat();
        let free = free_projector(&current, &lin.jtr, space);
        let rhs = match &free {
            Some(q) => q * &lin.jtr,
            None => lin.jtr.clone(),
        };
        let mut accepted = None;
        while damping <= MAX_DAMPING {
            let mut lhs = lin.jtj.clone();
            for i in 0..p {
                lhs[(i, i)] += damping * lin.jtj[(i, i)].max(diag_floor);
            }
            if let Some(q) = &free {
                lhs = q * lhs * q;
                for i in 0..p {
                    lhs[(i, i)] += 1.0 - q[(i, i)];
                }
            }
            if let Some(chol) = lhs.cholesky() {
                let step = chol.solve(&rhs);
                let moved: Vec<f64> = current.iter().zip(step.iter()).map(|(t, s)| t + s).collect();
                candidate.read_flat(&moved);
                project_in_place(&mut candidate, space);
                let trial = rss_of(&candidate, phi, data);
                if trial.is_finite() && trial < lin.rss {
                    let taken = DVector::from_iterator(p, candidate.to_flat().iter().zip(&current).map(|(a, b)| a - b));
                    let predicted = 2.0 * taken.dot(&lin.jtr) - (&lin.jtj * &taken).dot(&taken);
                    accepted = Some((trial, (lin.rss - trial) / predicted));
                    break;
                }
            }
            damping *= growth;
            growth *= 2.0;
        }
        let Some((_, gain)) = accepted else {
            // no descent at any damping: a (constrained) stationary point
            break;
        };
        let shrink = if gain.is_finite() && gain > 0.0 { (1.0 - (2.0 * gain - 1.0).powi(3)).max(1.0 / 3.0) } else { 1.0 };
        damping = (damping * shrink).max(1e-12);
        growth = 2.0;
        std::mem::swap(&mut theta, &mut candidate);
        lin = linearize(&theta, phi, data, &mut row);
        trace.push(lin.rss);
        if trace.len() > STALL_WINDOW {
            let old = trace[trace.len() - 1 - STALL_WINDOW];
            if (old - lin.rss) <= cfg.stall_tol * old.max(f64::MIN_POSITIVE) {
                break;
            }
        }
    }
    StartOutcome { rss: lin.rss, theta, converged, iterations, trace }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::log_likelihood;
    use crate::testutil::random_params;

    const TANH: TransferFunction = TransferFunction::Tanh;

    fn true_net() -> MlpParams {
        MlpParams::new(0.0, vec![HiddenUnit::new(2.0, 1.0, vec![1.5])]).unwrap()
    }

    fn noiseless(theta0: &MlpParams, n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = theta0.d();
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.5..2.5)).collect()).collect();
        let ys = xs.iter().map(|x| theta0.forward(TANH, x).unwrap()).collect();
        Dataset::new(xs, ys).unwrap()
    }

    #[test]
    fn projection_rules() {
        let space = ParamSpace::new(1, 2, 10.0, 0.1).unwrap();
        let inside = MlpParams::new(1.0, vec![HiddenUnit::new(-3.0, 2.0, vec![0.5, -0.2])]).unwrap();
        assert_eq!(project(&inside, &space).unwrap(), inside);

        let zero = MlpParams::new(0.0, vec![HiddenUnit::new(0.0, 0.0, vec![0.0, 0.0])]).unwrap();
        assert_eq!(project(&zero, &space).unwrap().units()[0].w, vec![0.1, 0.0]);

        let space1 = ParamSpace::new(1, 1, 10.0, 0.1).unwrap();
        let small = MlpParams::new(15.0, vec![HiddenUnit::new(-12.0, 3.0, vec![0.03])]).unwrap();
        let p = project(&small, &space1).unwrap();
        assert_eq!(p.beta(), 10.0);
        assert_eq!(p.units()[0].a, -10.0);
        assert!((p.units()[0].w[0] - 0.1).abs() < 1e-15);
        let neg = MlpParams::new(0.0, vec![HiddenUnit::new(0.0, 0.0, vec![-0.02])]).unwrap();
        assert!((project(&neg, &space1).unwrap().units()[0].w[0] + 0.1).abs() < 1e-15);
        assert!(space1.contains(&p));

        assert!(project(&small, &space).is_err());
    }

    #[test]
    fn projection_handles_eta_larger_than_box() {
        let space = ParamSpace::new(1, 4, 1.0, 1.5).unwrap();
        let theta = MlpParams::new(0.0, vec![HiddenUnit::new(0.0, 0.0, vec![0.1, 0.0, 0.0, 0.0])]).unwrap();
        let p = project(&theta, &space).unwrap();
        assert!(space.contains(&p), "{p:?}");
    }

    #[test]
    fn param_space_validation() {
        assert!(ParamSpace::new(0, 1, 1.0, 0.1).is_err());
        assert!(ParamSpace::new(1, 1, 1.0, 1.0).is_err());
        assert!(ParamSpace::new(1, 1, -1.0, 0.1).is_err());
        assert!(ParamSpace::new(1, 4, 1.0, 1.9).is_ok());
    }

    #[test]
    fn projection_lands_in_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..200 {
            let k = rng.random_range(1..4);
            let d = rng.random_range(1..4);
            let space = ParamSpace::new(k, d, 5.0, 0.5).unwrap();
            let theta = random_params(&mut rng, k, d, 8.0);
            let p = project(&theta, &space).unwrap();
            assert!(space.contains(&p));
            assert_eq!(project(&p, &space).unwrap(), p);
        }
    }

    #[test]
    fn recovers_noiseless_truth() {
        let theta0 = true_net();
        let data = noiseless(&theta0, 200, 1);
        let space = ParamSpace::with_defaults(1, 1).unwrap();
        let noise = NoiseModel::new(0.09).unwrap();
        let fit = fit_mle(&space, TANH, &noise, &data, &FitConfig::default()).unwrap();
        assert!(fit.rss <= 1e-6 * data.n() as f64, "rss = {}", fit.rss);
        assert!(space.contains(&fit.theta_hat));
        let l = log_likelihood(&fit.theta_hat, TANH, &noise, &data).unwrap();
        assert!((l - fit.loglik).abs() <= 1e-9 * l.abs());
    }

    #[test]
    fn fits_constant_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<Vec<f64>> = (0..100).map(|_| vec![rng.random_range(-2.0..2.0)]).collect();
        let data = Dataset::new(xs, vec![1.7; 100]).unwrap();
        let space = ParamSpace::with_defaults(1, 1).unwrap();
        let fit = fit_mle(&space, TANH, &NoiseModel::new(1.0).unwrap(), &data, &FitConfig::default()).unwrap();
        // any target: 1e-3 · n · (variance floor of 1)
        assert!(fit.rss <= 1e-3 * 100.0, "rss = {}", fit.rss);
        for x in [-1.5, 0.0, 1.5] {
            assert!((fit.theta_hat.forward(TANH, &[x]).unwrap() - 1.7).abs() < 1e-2);
        }
    }

    fn noisy(n: usize, seed: u64) -> Dataset {
        let theta0 = true_net();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-2.5..2.5)]).collect();
        let ys = xs.iter().map(|x| theta0.forward(TANH, x).unwrap() + rng.random_range(-0.5..0.5)).collect();
        Dataset::new(xs, ys).unwrap()
    }

    #[test]
    fn warm_started_larger_model_is_no_worse() {
        let data = noisy(300, 7);
        let noise = NoiseModel::new(0.09).unwrap();
        let cfg = FitConfig { restarts: 5, ..FitConfig::default() };
        let s1 = ParamSpace::with_defaults(1, 1).unwrap();
        let f1 = fit_mle(&s1, TANH, &noise, &data, &cfg).unwrap();
        let embedded = embed_extra_unit(&f1.theta_hat, s1.eta);
        assert_eq!(
            log_likelihood(&embedded, TANH, &noise, &data).unwrap(),
            log_likelihood(&f1.theta_hat, TANH, &noise, &data).unwrap()
        );
        let s2 = s1.with_k(2).unwrap();
        assert!(s2.contains(&embedded));
        let f2 = fit_mle_with_starts(&s2, TANH, &noise, &data, &cfg, &[embedded]).unwrap();
        assert!(f2.loglik >= f1.loglik - 1e-6);
        assert_eq!(f2.starts, 6);
    }

    #[test]
    fn descent_is_monotone_and_fit_is_deterministic() {
        let data = noisy(200, 3);
        let space = ParamSpace::with_defaults(2, 1).unwrap();
        let cfg = FitConfig { restarts: 4, seed: 42, ..FitConfig::default() };
        for i in 0..4 {
            let o = run_start(random_start(&space, &cfg, i), &space, TANH, &data, &cfg);
            assert!(o.trace.windows(2).all(|w| w[1] <= w[0]));
            assert!(space.contains(&o.theta));
        }
        let noise = NoiseModel::new(0.1).unwrap();
        let a = fit_mle(&space, TANH, &noise, &data, &cfg).unwrap();
        let b = fit_mle(&space, TANH, &noise, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rss.to_bits(), b.rss.to_bits());
    }

    #[test]
    fn rejects_bad_config_and_shapes() {
        let data = noisy(10, 1);
        let noise = NoiseModel::new(0.1).unwrap();
        let space = ParamSpace::with_defaults(1, 2).unwrap();
        assert!(matches!(fit_mle(&space, TANH, &noise, &data, &FitConfig::default()), Err(Error::InputShape { .. })));
        let space = ParamSpace::with_defaults(1, 1).unwrap();
        let cfg = FitConfig { restarts: 0, ..FitConfig::default() };
        assert!(fit_mle(&space, TANH, &noise, &data, &cfg).is_err());
    }

    #[test]
    fn non_finite_data_fails_cleanly() {
        let data = Dataset::new(vec![vec![0.0], vec![1.0]], vec![f64::INFINITY, 1.0]).unwrap();
        let space = ParamSpace::with_defaults(1, 1).unwrap();
        let cfg = FitConfig { restarts: 3, ..FitConfig::default() };
        let err = fit_mle(&space, TANH, &NoiseModel::new(1.0).unwrap(), &data, &cfg).unwrap_err();
        assert!(matches!(err, Error::OptimizationFailure { restarts: 3, .. }));
    }
}
