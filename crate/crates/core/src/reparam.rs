//! Split of an overparameterized network θ (k units) relative to a true
//! network θ⁰ (k⁰ ≤ k units) into an identifiable block Φ_t and an
//! unidentifiable block ψ_t, and the second-order expansion of the density
//! ratio `f_θ/f` around `Φ_t⁰`.
//!
//! After permuting θ's units, cluster `i` holds units `t_{i-1}..t_i`
//! (0-based, half open) whose `(b_j, w_j)` sit near `(b_i⁰, w_i⁰)`; the
//! remaining `k − t_{k⁰}` units are unmatched. With `T = t_{k⁰}`:
//!
//! ```text
//! Φ_t = (β, b_1..b_T, w_1..w_T, s_1..s_k⁰, a_{T+1}..a_k)
//! ψ_t = (q_1..q_T, b_{T+1}..b_k, w_{T+1}..w_k)
//! s_i = Σ_{j∈i} a_j − a_i⁰,   q_j = a_j / Σ_{j'∈i} a_j'
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::likelihood::{density_ratio_m1, Estimate, MonteCarloQuadrature, NoiseModel};
use crate::mlp::{dot, HiddenUnit, MlpParams};
use crate::transfer::TransferFunction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReparamDecomposition {
    /// Cluster ends `t_1 < … < t_k⁰ ≤ k` (`t_0 = 0` implicit).
    pub t: Vec<usize>,
    /// Unit `i` of the permuted network is unit `perm[i]` of θ.
    pub perm: Vec<usize>,
    pub k: usize,
    pub d: usize,
    /// Output weights `a_i⁰` of the reference network.
    pub a0: Vec<f64>,
    pub phi_t: Vec<f64>,
    pub psi_t: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Number of Φ_t coordinates.
pub fn phi_dim(k0: usize, k: usize, matched: usize, d: usize) -> usize {
    1 + matched * (1 + d) + k0 + (k - matched)
}

/// Number of ψ_t coordinates.
pub fn psi_dim(k: usize, matched: usize, d: usize) -> usize {
    matched + (k - matched) * (1 + d)
}

impl ReparamDecomposition {
    pub fn k0(&self) -> usize {
        self.t.len()
    }

    /// `t_{k⁰}`, the number of matched units.
    pub fn matched(&self) -> usize {
        *self.t.last().expect("at least one cluster")
    }

    /// Units of cluster `i` as a range over permuted indices.
    pub fn cluster(&self, i: usize) -> std::ops::Range<usize> {
        let start = if i == 0 { 0 } else { self.t[i - 1] };
        start..self.t[i]
    }

    /// Which cluster each matched (permuted) unit belongs to.
    fn cluster_of(&self) -> Vec<usize> {
        (0..self.k0()).flat_map(|i| std::iter::repeat_n(i, self.cluster(i).len())).collect()
    }

    pub fn beta(&self) -> f64 {
        self.phi_t[0]
    }

    pub fn b(&self, j: usize) -> f64 {
        self.phi_t[1 + j]
    }

    pub fn w(&self, j: usize) -> &[f64] {
        let start = 1 + self.matched() + j * self.d;
        &self.phi_t[start..start + self.d]
    }

    pub fn s(&self, i: usize) -> f64 {
        self.phi_t[1 + self.matched() * (1 + self.d) + i]
    }

    /// Output weight of unmatched unit `m` (permuted index `T + m`).
    pub fn extra_a(&self, m: usize) -> f64 {
        self.phi_t[1 + self.matched() * (1 + self.d) + self.k0() + m]
    }

    pub fn q(&self, j: usize) -> f64 {
        self.psi_t[j]
    }

    pub fn extra_b(&self, m: usize) -> f64 {
        self.psi_t[self.matched() + m]
    }

    pub fn extra_w(&self, m: usize) -> &[f64] {
        let unmatched = self.k - self.matched();
        let start = self.matched() + unmatched + m * self.d;
        &self.psi_t[start..start + self.d]
    }

    /// Same split with Φ_t replaced.
    pub fn with_phi(&self, phi_t: Vec<f64>) -> Result<Self> {
        check_dim(self.phi_t.len(), phi_t.len())?;
        Ok(Self { phi_t, ..self.clone() })
    }

    /// Same split with ψ_t replaced.
    pub fn with_psi(&self, psi_t: Vec<f64>) -> Result<Self> {
        check_dim(self.psi_t.len(), psi_t.len())?;
        Ok(Self { psi_t, ..self.clone() })
    }

    fn check_dims(&self) -> Result<()> {
        let (k0, t) = (self.k0(), self.matched());
        if k0 == 0 || self.a0.len() != k0 || self.perm.len() != self.k || t > self.k {
            return Err(Error::InvalidDecomposition("inconsistent cluster bookkeeping".into()));
        }
        if self.t.windows(2).any(|w| w[1] <= w[0]) || self.t[0] == 0 {
            return Err(Error::InvalidDecomposition(format!("t = {:?} is not strictly increasing from 1", self.t)));
        }
        check_dim(phi_dim(k0, self.k, t, self.d), self.phi_t.len())?;
        check_dim(psi_dim(self.k, t, self.d), self.psi_t.len())
    }
}

/// Pairs θ's units with the true units of θ⁰ and builds `(t, Φ_t, ψ_t)`.
///
/// A unit joins cluster `i` when `‖(b_j, w_j) − (b_i⁰, w_i⁰)‖ ≤ cluster_tol`;
/// every true unit needs at least one member.
pub fn decompose(theta: &MlpParams, theta0: &MlpParams, cluster_tol: f64) -> Result<ReparamDecomposition> {
    check_dim(theta0.d(), theta.d())?;
    let (k, k0, d) = (theta.k(), theta0.k(), theta.d());
    if k < k0 {
        return Err(Error::InvalidInput(format!("θ has {k} units, fewer than the {k0} of θ⁰")));
    }
    if !(cluster_tol > 0.0) {
        return Err(Error::InvalidInput(format!("cluster_tol must be positive, got {cluster_tol}")));
    }
    let loc = |u: &HiddenUnit, v: &HiddenUnit| {
        let db = u.b - v.b;
        (db * db + u.w.iter().zip(&v.w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).sqrt()
    };
    let truth = theta0.units();
    for i in 0..k0 {
        for j in i + 1..k0 {
            let distance = loc(&truth[i], &truth[j]);
            if distance < 2.0 * cluster_tol {
                return Err(Error::AmbiguousClustering { first: i, second: j, distance });
            }
        }
    }

    let mut warnings = Vec::new();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k0];
    let mut unmatched = Vec::new();
    for (j, u) in theta.units().iter().enumerate() {
        let dists: Vec<f64> = truth.iter().map(|v| loc(u, v)).collect();
        let close = dists.iter().filter(|&&dist| dist <= cluster_tol).count();
        if close == 0 {
            unmatched.push(j);
            continue;
        }
        let nearest = dists
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("k0 >= 1");
        if close > 1 {
            let msg = format!("unit {j} is within tolerance of {close} true units; assigned to nearest ({nearest})");
            log::warn!("{msg}");
            warnings.push(msg);
        }
        members[nearest].push(j);
    }
    if let Some(i) = members.iter().position(Vec::is_empty) {
        return Err(Error::UnmatchedTrueUnit(i));
    }

    let perm: Vec<usize> = members.iter().flatten().copied().chain(unmatched.iter().copied()).collect();
    let mut t = Vec::with_capacity(k0);
    let mut end = 0;
    for m in &members {
        end += m.len();
        t.push(end);
    }
    let matched = end;

    let units = theta.units();
    let mut phi_t = Vec::with_capacity(phi_dim(k0, k, matched, d));
    let mut psi_t = Vec::with_capacity(psi_dim(k, matched, d));
    phi_t.push(theta.beta());
    phi_t.extend(perm[..matched].iter().map(|&j| units[j].b));
    for &j in &perm[..matched] {
        phi_t.extend_from_slice(&units[j].w);
    }
    for (i, m) in members.iter().enumerate() {
        let total: f64 = m.iter().map(|&j| units[j].a).sum();
        phi_t.push(total - truth[i].a);
        if total == 0.0 {
            let msg = format!("cluster {i} has zero total output weight; mixing proportions set uniform");
            log::warn!("{msg}");
            warnings.push(msg);
            psi_t.extend(std::iter::repeat_n(1.0 / m.len() as f64, m.len()));
        } else {
            psi_t.extend(m.iter().map(|&j| units[j].a / total));
        }
    }
    phi_t.extend(unmatched.iter().map(|&j| units[j].a));
    psi_t.extend(unmatched.iter().map(|&j| units[j].b));
    for &j in &unmatched {
        psi_t.extend_from_slice(&units[j].w);
    }

    let dec = ReparamDecomposition {
        t,
        perm,
        k,
        d,
        a0: truth.iter().map(|u| u.a).collect(),
        phi_t,
        psi_t,
        warnings,
    };
    dec.check_dims()?;
    debug_assert_eq!(dec.phi_t.len() + dec.psi_t.len(), theta.dim() + k0);
    Ok(dec)
}

/// Inverse of [`decompose`]: rebuilds θ in its original unit order.
pub fn reconstruct(dec: &ReparamDecomposition) -> Result<MlpParams> {
    dec.check_dims()?;
    let matched = dec.matched();
    let mut permuted = Vec::with_capacity(dec.k);
    for i in 0..dec.k0() {
        let range = dec.cluster(i);
        let qsum: f64 = range.clone().map(|j| dec.q(j)).sum();
        if (qsum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDecomposition(format!("mixing proportions of cluster {i} sum to {qsum}")));
        }
        let total = dec.s(i) + dec.a0[i];
        for j in range {
            permuted.push(HiddenUnit::new(dec.q(j) * total, dec.b(j), dec.w(j).to_vec()));
        }
    }
    for m in 0..dec.k - matched {
        permuted.push(HiddenUnit::new(dec.extra_a(m), dec.extra_b(m), dec.extra_w(m).to_vec()));
    }
    let mut units = vec![None; dec.k];
    for (unit, &orig) in permuted.into_iter().zip(&dec.perm) {
        units[orig] = Some(unit);
    }
    let units = units
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::InvalidDecomposition(format!("{:?} is not a permutation", dec.perm)))?;
    MlpParams::new(dec.beta(), units)
}

/// `Φ_t⁰`: the identifiable block at which `F_(Φ_t, ψ_t) = F_θ⁰` for every ψ_t.
pub fn phi0_reference(theta0: &MlpParams, t: &[usize], k: usize) -> Result<Vec<f64>> {
    let k0 = theta0.k();
    if t.len() != k0 || t.first().is_none_or(|&t1| t1 == 0) || t.windows(2).any(|w| w[1] <= w[0]) || t[k0 - 1] > k {
        return Err(Error::InvalidInput(format!("t = {t:?} is not valid for k0 = {k0}, k = {k}")));
    }
    let d = theta0.d();
    let matched = t[k0 - 1];
    let truth = theta0.units();
    let counts: Vec<usize> = (0..k0).map(|i| t[i] - if i == 0 { 0 } else { t[i - 1] }).collect();
    let mut out = Vec::with_capacity(phi_dim(k0, k, matched, d));
    out.push(theta0.beta());
    for (u, &c) in truth.iter().zip(&counts) {
        out.extend(std::iter::repeat_n(u.b, c));
    }
    for (u, &c) in truth.iter().zip(&counts) {
        for _ in 0..c {
            out.extend_from_slice(&u.w);
        }
    }
    out.extend(std::iter::repeat_n(0.0, k0 + (k - matched)));
    Ok(out)
}

/// Expansion of `f_θ/f(z)` at one observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionTerms {
    /// `(Φ_t − Φ_t⁰)ᵀ f′(z)`
    pub first: f64,
    /// `(Φ_t − Φ_t⁰)ᵀ f″(z) (Φ_t − Φ_t⁰)`
    pub second: f64,
    /// `D(Φ_t, ψ_t) = ‖f_θ/f − 1‖₂`, estimated by Monte Carlo.
    pub d: f64,
    /// `f_θ/f(z)`
    pub ratio_exact: f64,
    /// `f_θ/f(z) − 1` without cancellation.
    pub ratio_m1: f64,
}

impl ExpansionTerms {
    /// `f_θ/f − 1 − first − ½ second`
    pub fn remainder(&self) -> f64 {
        self.ratio_m1 - self.first - 0.5 * self.second
    }
}

/// Evaluates [`ExpansionTerms`] for a fixed decomposition; `D` is estimated
/// once at construction.
#[derive(Debug, Clone)]
pub struct ExpansionEvaluator {
    dec: ReparamDecomposition,
    theta: MlpParams,
    theta0: MlpParams,
    phi: TransferFunction,
    noise: NoiseModel,
    delta: Vec<f64>,
    cluster_of: Vec<usize>,
    d_norm: Estimate,
}

impl ExpansionEvaluator {
    pub fn new(
        dec: &ReparamDecomposition,
        theta0: &MlpParams,
        phi: TransferFunction,
        noise: &NoiseModel,
        quad: &MonteCarloQuadrature,
    ) -> Result<Self> {
        let sample = quad.draw(theta0, phi, noise)?;
        Self::with_sample(dec, theta0, phi, noise, &sample)
    }

    /// Uses a pre-drawn sample from the true model for `D`.
    pub fn with_sample(
        dec: &ReparamDecomposition,
        theta0: &MlpParams,
        phi: TransferFunction,
        noise: &NoiseModel,
        sample: &[(Vec<f64>, f64)],
    ) -> Result<Self> {
        check_dim(theta0.d(), dec.d)?;
        check_dim(theta0.k(), dec.k0())?;
        if dec.a0.iter().zip(theta0.units()).any(|(a, u)| *a != u.a) {
            return Err(Error::InvalidDecomposition("decomposition was built against a different θ⁰".into()));
        }
        let theta = reconstruct(dec)?;
        let reference = phi0_reference(theta0, &dec.t, dec.k)?;
        let delta: Vec<f64> = dec.phi_t.iter().zip(&reference).map(|(p, r)| p - r).collect();
        let d_norm = MonteCarloQuadrature::l2_norm(sample, |x, y| density_ratio_m1(&theta, theta0, phi, noise, x, y))?;
        Ok(Self {
            cluster_of: dec.cluster_of(),
            dec: dec.clone(),
            theta,
            theta0: theta0.clone(),
            phi,
            noise: *noise,
            delta,
            d_norm,
        })
    }

    pub fn d_norm(&self) -> Estimate {
        self.d_norm
    }

    pub fn theta(&self) -> &MlpParams {
        &self.theta
    }

    pub fn at(&self, x: &[f64], y: f64) -> Result<ExpansionTerms> {
        check_dim(self.dec.d, x.len())?;
        let (first, second) = self.derivative_terms(x, y);
        let ratio_m1 = density_ratio_m1(&self.theta, &self.theta0, self.phi, &self.noise, x, y)?;
        Ok(ExpansionTerms {
            first,
            second,
            d: self.d_norm.value,
            ratio_exact: 1.0 + ratio_m1,
            ratio_m1,
        })
    }

    /// First and second directional derivatives of `Φ ↦ f_(Φ,ψ)/f(z)` at
    /// `Φ_t⁰` along `Φ_t − Φ_t⁰`.
    ///
    /// With `g = F_(Φ,ψ) − F_θ⁰` and `e = (y − F_θ⁰(x))/σ²`, the ratio is
    /// `exp(e·g − g²/(2σ²))`, so at `g = 0` the first derivative is `e·Dg`
    /// and the second is `(e² − 1/σ²)(Dg)² + e·D²g`.
    fn derivative_terms(&self, x: &[f64], y: f64) -> (f64, f64) {
        let dec = &self.dec;
        let (d, matched) = (dec.d, dec.matched());
        let sigma2 = self.noise.sigma2();
        let truth = self.theta0.units();
        let e = (y - self.theta0.forward_unchecked(self.phi, x)) / sigma2;

        let derivs: Vec<_> = truth.iter().map(|u| self.phi.derivs(u.activation(x))).collect();
        let ds = |i: usize| self.delta[1 + matched * (1 + d) + i];

        // Dg: linear part of F in the Φ-direction
        let mut lin = self.delta[0];
        for (i, dv) in derivs.iter().enumerate() {
            lin += ds(i) * dv.value;
        }
        // D²g: only the cluster locations curve
        let mut quad = 0.0;
        for j in 0..matched {
            let i = self.cluster_of[j];
            let dv = &derivs[i];
            let db = self.delta[1 + j];
            let dw = &self.delta[1 + matched + j * d..1 + matched + (j + 1) * d];
            let shift = db + dot(dw, x);
            let q = dec.q(j);
            lin += q * shift * dec.a0[i] * dv.d1;
            quad += q * (dec.a0[i] * dv.d2 * shift * shift + 2.0 * ds(i) * dv.d1 * shift);
        }
        for m in 0..dec.k - matched {
            let a = self.delta[1 + matched * (1 + d) + dec.k0() + m];
            lin += a * self.phi.value(dec.extra_b(m) + dot(dec.extra_w(m), x));
        }
        let first = e * lin;
        let second = (e * e - 1.0 / sigma2) * lin * lin + e * quad;
        (first, second)
    }
}

/// [`ExpansionTerms`] at a single observation.
pub fn expansion_terms(
    dec: &ReparamDecomposition,
    theta0: &MlpParams,
    phi: TransferFunction,
    noise: &NoiseModel,
    quad: &MonteCarloQuadrature,
    x: &[f64],
    y: f64,
) -> Result<ExpansionTerms> {
    ExpansionEvaluator::new(dec, theta0, phi, noise, quad)?.at(x, y)
}

/// One row of a shrinking-path check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionCheckRow {
    pub h: f64,
    pub d: f64,
    pub remainder: f64,
    pub relative: f64,
}

/// Walks `Φ_t = Φ_t⁰ + h·direction` (ψ_t from `dec`) and reports the mean
/// absolute remainder over `points` relative to `D`.
pub fn expansion_check(
    dec: &ReparamDecomposition,
    theta0: &MlpParams,
    phi: TransferFunction,
    noise: &NoiseModel,
    direction: &[f64],
    hs: &[f64],
    norm_sample: &[(Vec<f64>, f64)],
    points: &[(Vec<f64>, f64)],
) -> Result<Vec<ExpansionCheckRow>> {
    check_dim(dec.phi_t.len(), direction.len())?;
    if points.is_empty() {
        return Err(Error::InvalidInput("expansion check needs at least one evaluation point".into()));
    }
    let reference = phi0_reference(theta0, &dec.t, dec.k)?;
    hs.iter()
        .map(|&h| {
            let phi_h = reference.iter().zip(direction).map(|(r, u)| r + h * u).collect();
            let eval = ExpansionEvaluator::with_sample(&dec.with_phi(phi_h)?, theta0, phi, noise, norm_sample)?;
            let mut total = 0.0;
            for (x, y) in points {
                total += eval.at(x, *y)?.remainder().abs();
            }
            let remainder = total / points.len() as f64;
            let d = eval.d_norm().value;
            Ok(ExpansionCheckRow { h, d, remainder, relative: remainder / d })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::density_ratio;
    use crate::simulate::InputDistribution;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TANH: TransferFunction = TransferFunction::Tanh;

    fn net(beta: f64, units: &[(f64, f64, &[f64])]) -> MlpParams {
        MlpParams::new(beta, units.iter().map(|(a, b, w)| HiddenUnit::new(*a, *b, w.to_vec())).collect()).unwrap()
    }

    fn max_forward_gap(a: &MlpParams, b: &MlpParams, rng: &mut ChaCha8Rng) -> f64 {
        (0..100)
            .map(|_| {
                let x: Vec<f64> = (0..a.d()).map(|_| rng.random_range(-3.0..3.0)).collect();
                (a.forward(TANH, &x).unwrap() - b.forward(TANH, &x).unwrap()).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn overparameterized_net_with_silent_unit() {
        let theta0 = net(0.0, &[(1.3, 0.0, &[0.8])]);
        let theta = net(0.0, &[(1.3, 0.0, &[0.8]), (0.0, 0.0, &[5.0])]);
        let dec = decompose(&theta, &theta0, 0.005).unwrap();
        assert_eq!(dec.t, vec![1]);
        assert_eq!(dec.perm, vec![0, 1]);
        assert_eq!(dec.s(0), 0.0);
        assert_eq!(dec.q(0), 1.0);
        assert_eq!(dec.extra_a(0), 0.0);
        assert_eq!(dec.phi_t, phi0_reference(&theta0, &dec.t, 2).unwrap());
    }

    #[test]
    fn exact_truth_decomposes_trivially() {
        let theta0 = net(0.4, &[(1.0, 0.5, &[1.0, -1.0]), (-2.0, 1.5, &[0.3, 0.7])]);
        let dec = decompose(&theta0, &theta0, 0.01).unwrap();
        assert_eq!(dec.t, vec![1, 2]);
        assert!(dec.psi_t.iter().all(|&q| q == 1.0));
        assert_eq!(dec.s(0), 0.0);
        assert_eq!(dec.s(1), 0.0);
        assert_eq!(dec.phi_t, phi0_reference(&theta0, &dec.t, 2).unwrap());
        assert_eq!(reconstruct(&dec).unwrap(), theta0);
    }

    #[test]
    fn split_unit_cluster() {
        let theta0 = net(0.0, &[(2.0, 1.0, &[1.5])]);
        let theta = net(0.0, &[(-0.5, 3.0, &[-2.0]), (0.5, 1.0, &[1.5]), (1.5, 1.0, &[1.5])]);
        let dec = decompose(&theta, &theta0, 0.01).unwrap();
        assert_eq!(dec.t, vec![2]);
        assert_eq!(dec.perm, vec![1, 2, 0]);
        assert_eq!(dec.s(0), 0.0);
        assert_eq!(dec.q(0), 0.25);
        assert_eq!(dec.q(1), 0.75);
        assert_eq!(reconstruct(&dec).unwrap(), theta);
    }

    #[test]
    fn phi0_layout() {
        let theta0 = net(0.7, &[(2.0, 1.0, &[1.5])]);
        assert_eq!(phi0_reference(&theta0, &[2], 2).unwrap(), vec![0.7, 1.0, 1.0, 1.5, 1.5, 0.0]);
        assert_eq!(phi0_reference(&theta0, &[1], 3).unwrap(), vec![0.7, 1.0, 1.5, 0.0, 0.0, 0.0]);
        let theta0 = net(0.7, &[(2.0, 1.0, &[1.5]), (3.0, -1.0, &[0.5])]);
        assert_eq!(phi0_reference(&theta0, &[1, 2], 2).unwrap(), vec![0.7, 1.0, -1.0, 1.5, 0.5, 0.0, 0.0]);
        assert!(phi0_reference(&theta0, &[2, 2], 3).is_err());
        assert!(phi0_reference(&theta0, &[1, 4], 3).is_err());
        assert!(phi0_reference(&theta0, &[0, 1], 3).is_err());
    }

    #[test]
    fn reconstruct_equal_split_and_degenerate_cluster() {
        let theta0 = net(0.1, &[(2.0, 1.0, &[1.5])]);
        let base = decompose(&net(0.1, &[(1.0, 1.0, &[1.5]), (1.0, 1.0, &[1.5])]), &theta0, 0.01).unwrap();
        let rebuilt = reconstruct(&base.with_psi(vec![0.5, 0.5]).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(max_forward_gap(&rebuilt, &theta0, &mut rng) < 1e-15);

        let mut phi = base.phi_t.clone();
        phi[5] = -2.0; // s_1 = −a_1⁰
        let zeroed = reconstruct(&base.with_phi(phi).unwrap()).unwrap();
        assert!(zeroed.units().iter().all(|u| u.a == 0.0));

        assert!(matches!(reconstruct(&base.with_psi(vec![0.5, 0.6]).unwrap()), Err(Error::InvalidDecomposition(_))));
    }

    #[test]
    fn clustering_errors() {
        let close = net(0.0, &[(1.0, 0.0, &[1.0]), (1.0, 0.05, &[1.0])]);
        assert!(matches!(decompose(&close, &close, 0.05), Err(Error::AmbiguousClustering { .. })));
        let theta0 = net(0.0, &[(1.0, 0.0, &[1.0]), (1.0, 2.0, &[1.0])]);
        let theta = net(0.0, &[(1.0, 0.0, &[1.0]), (1.0, 5.0, &[1.0])]);
        assert!(matches!(decompose(&theta, &theta0, 0.05), Err(Error::UnmatchedTrueUnit(1))));
        assert!(decompose(&net(0.0, &[(1.0, 0.0, &[1.0])]), &theta0, 0.05).is_err());
    }

    #[test]
    fn zero_cluster_sum_warns() {
        let theta0 = net(0.0, &[(1.0, 0.0, &[1.0])]);
        let theta = net(0.0, &[(0.0, 0.0, &[1.0])]);
        let dec = decompose(&theta, &theta0, 0.05).unwrap();
        assert_eq!(dec.warnings.len(), 1);
        assert_eq!(reconstruct(&dec).unwrap(), theta);
    }

    /// θ⁰ plus a random near-truth θ with `extra_per_unit` duplicates per
    /// cluster and `unmatched` free units.
    fn random_pair(rng: &mut ChaCha8Rng, k0: usize, d: usize, extra: usize, unmatched: usize) -> (MlpParams, MlpParams) {
        let truth: Vec<HiddenUnit> = (0..k0)
            .map(|i| {
                let mut w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                w[0] += 2.0;
                HiddenUnit::new(rng.random_range(0.5..2.0) * if i % 2 == 0 { 1.0 } else { -1.0 }, 2.0 * i as f64, w)
            })
            .collect();
        let theta0 = MlpParams::new(rng.random_range(-1.0..1.0), truth.clone()).unwrap();
        let mut units = Vec::new();
        for u in &truth {
            for _ in 0..=extra {
                let b = u.b + rng.random_range(-0.01..0.01);
                let w = u.w.iter().map(|w| w + rng.random_range(-0.01..0.01)).collect();
                units.push(HiddenUnit::new(u.a / (extra + 1) as f64 + rng.random_range(-0.2..0.2), b, w));
            }
        }
        for _ in 0..unmatched {
            let w = (0..d).map(|_| rng.random_range(-3.0..-1.0)).collect();
            units.push(HiddenUnit::new(rng.random_range(-0.3..0.3), rng.random_range(-6.0..-4.0), w));
        }
        // shuffle to exercise the permutation
        for i in (1..units.len()).rev() {
            units.swap(i, rng.random_range(0..=i));
        }
        let theta = MlpParams::new(theta0.beta() + rng.random_range(-0.1..0.1), units).unwrap();
        (theta, theta0)
    }

    #[test]
    fn round_trip_and_bookkeeping_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let k0 = rng.random_range(1..=2);
            let d = rng.random_range(1..=3);
            let (extra, split) = (rng.random_range(0..=2), rng.random_range(0..=2));
            let (theta, theta0) = random_pair(&mut rng, k0, d, extra, split);
            let dec = decompose(&theta, &theta0, 0.1).unwrap();
            let t = dec.matched();
            assert_eq!(dec.phi_t.len(), 1 + t * (1 + d) + k0 + (theta.k() - t));
            assert_eq!(dec.psi_t.len(), t + (theta.k() - t) * (1 + d));
            assert_eq!(dec.phi_t.len() + dec.psi_t.len(), theta.dim() + k0);
            assert_eq!(phi0_reference(&theta0, &dec.t, theta.k()).unwrap().len(), dec.phi_t.len());
            let back = reconstruct(&dec).unwrap();
            let gap = theta.to_flat().iter().zip(back.to_flat()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(gap <= 1e-12, "{gap}");
            assert!(max_forward_gap(&theta, &back, &mut rng) <= 1e-12);
        }
    }

    fn split_setup() -> (ReparamDecomposition, MlpParams, NoiseModel) {
        let theta0 = net(0.2, &[(2.0, 1.0, &[1.5])]);
        let theta = net(0.2, &[(0.8, 1.0, &[1.5]), (1.2, 1.0, &[1.5]), (0.0, -2.0, &[0.7])]);
        let dec = decompose(&theta, &theta0, 0.01).unwrap();
        (dec, theta0, NoiseModel::from_sd(0.5).unwrap())
    }

    #[test]
    fn terms_vanish_at_reference() {
        let (dec, theta0, noise) = split_setup();
        let quad = MonteCarloQuadrature::new(InputDistribution::standard_normal(1), 2000, 1);
        let eval = ExpansionEvaluator::new(&dec, &theta0, TANH, &noise, &quad).unwrap();
        for (x, y) in [(0.3, 1.0), (-1.0, -0.4)] {
            let t = eval.at(&[x], y).unwrap();
            assert_eq!(t.first, 0.0);
            assert_eq!(t.second, 0.0);
            assert!((t.ratio_exact - 1.0).abs() < 1e-15);
        }
        assert!(eval.d_norm().value < 1e-12);
    }

    #[test]
    fn psi_is_unidentifiable_at_reference() {
        let (dec, theta0, noise) = split_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let q0: f64 = rng.random_range(-1.0..2.0);
            let psi = vec![q0, 1.0 - q0, rng.random_range(-5.0..5.0), rng.random_range(-3.0..3.0)];
            let theta = reconstruct(&dec.with_psi(psi).unwrap()).unwrap();
            for _ in 0..20 {
                let x = [rng.random_range(-3.0..3.0)];
                let y = rng.random_range(-3.0..3.0);
                assert!((density_ratio(&theta, &theta0, TANH, &noise, &x, y).unwrap() - 1.0).abs() < 1e-12);
            }
        }
    }

    /// Finite-difference derivatives of `h ↦ f_(Φ⁰ + h u, ψ)/f(z) − 1` at 0.
    fn fd_derivatives(dec: &ReparamDecomposition, theta0: &MlpParams, noise: &NoiseModel, u: &[f64], x: f64, y: f64) -> (f64, f64) {
        let reference = phi0_reference(theta0, &dec.t, dec.k).unwrap();
        let at = |h: f64| {
            let phi: Vec<f64> = reference.iter().zip(u).map(|(r, v)| r + h * v).collect();
            let theta = reconstruct(&dec.with_phi(phi).unwrap()).unwrap();
            density_ratio_m1(&theta, theta0, TANH, noise, &[x], y).unwrap()
        };
        let h = 1e-4;
        let (p, m) = (at(h), at(-h));
        ((p - m) / (2.0 * h), (p + m) / (h * h))
    }

    #[test]
    fn beta_perturbation_matches_closed_form() {
        let (dec, theta0, noise) = split_setup();
        let quad = MonteCarloQuadrature::new(InputDistribution::standard_normal(1), 1000, 2);
        let h = 1e-2;
        let mut phi = phi0_reference(&theta0, &dec.t, dec.k).unwrap();
        phi[0] += h;
        let eval = ExpansionEvaluator::new(&dec.with_phi(phi).unwrap(), &theta0, TANH, &noise, &quad).unwrap();
        let mut u = vec![0.0; dec.phi_t.len()];
        u[0] = 1.0;
        for (x, y) in [(0.5, 1.2), (-0.7, 0.1), (2.0, -1.0)] {
            let e = (y - theta0.forward(TANH, &[x]).unwrap()) / noise.sigma2();
            let t = eval.at(&[x], y).unwrap();
            assert!((t.first - e * h).abs() < 1e-14);
            assert!((t.second - (e * e - 1.0 / noise.sigma2()) * h * h).abs() < 1e-12);
            let (d1, d2) = fd_derivatives(&dec, &theta0, &noise, &u, x, y);
            // central differences with step 1e-4 are accurate to O(1e-8·scale³)
            let scale = e.abs() + 1.0 / noise.sigma();
            assert!((d1 - e).abs() < 1e-8 * scale.powi(3), "{d1} vs {e}");
            assert!((d2 - (e * e - 1.0 / noise.sigma2())).abs() < 1e-8 * scale.powi(4));
            // remainder is third order in h
            assert!(t.remainder().abs() < 10.0 * h * h * h * (e.abs() + 1.0).powi(3) / noise.sigma2().powi(2));
        }
    }

    #[test]
    fn second_order_term_matches_finite_differences_in_random_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let quad = MonteCarloQuadrature::new(InputDistribution::standard_normal(1), 500, 2);
        for _ in 0..20 {
            let (theta, theta0) = random_pair(&mut rng, 2, 1, 1, 1);
            let noise = NoiseModel::from_sd(0.6).unwrap();
            let dec = decompose(&theta, &theta0, 0.1).unwrap();
            let u: Vec<f64> = (0..dec.phi_t.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let reference = phi0_reference(&theta0, &dec.t, dec.k).unwrap();
            let phi_u: Vec<f64> = reference.iter().zip(&u).map(|(r, v)| r + v).collect();
            let eval = ExpansionEvaluator::new(&dec.with_phi(phi_u).unwrap(), &theta0, TANH, &noise, &quad).unwrap();
            let x = rng.random_range(-2.0..2.0);
            let y = theta0.forward(TANH, &[x]).unwrap() + rng.random_range(-1.0..1.0);
            let t = eval.at(&[x], y).unwrap();
            let (d1, d2) = fd_derivatives(&dec, &theta0, &noise, &u, x, y);
            assert!((t.first - d1).abs() < 1e-6 * (1.0 + d1.abs()), "{} vs {d1}", t.first);
            assert!((t.second - d2).abs() < 1e-3 * (1.0 + d2.abs()), "{} vs {d2}", t.second);
        }
    }

    #[test]
    fn first_order_term_has_mean_zero() {
        let (dec, theta0, noise) = split_setup();
        let mut phi = dec.phi_t.clone();
        for (i, v) in phi.iter_mut().enumerate() {
            *v += 0.05 * (i as f64 + 1.0).sin();
        }
        let quad = MonteCarloQuadrature::new(InputDistribution::standard_normal(1), 1000, 5);
        let eval = ExpansionEvaluator::new(&dec.with_phi(phi).unwrap(), &theta0, TANH, &noise, &quad).unwrap();
        let sample = MonteCarloQuadrature::new(InputDistribution::standard_normal(1), 100_000, 6)
            .draw(&theta0, TANH, &noise)
            .unwrap();
        let firsts: Vec<f64> = sample.iter().map(|(x, y)| eval.at(x, *y).unwrap().first).collect();
        let n = firsts.len() as f64;
        let mean = firsts.iter().sum::<f64>() / n;
        let sd = (firsts.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 4.0 * sd / n.sqrt(), "mean {mean}, se {}", sd / n.sqrt());
    }

    #[test]
    fn remainder_shrinks_relative_to_d() {
        let (dec, theta0, noise) = split_setup();
        let input = InputDistribution::standard_normal(1);
        let norm_sample = MonteCarloQuadrature::new(input.clone(), 20_000, 1).draw(&theta0, TANH, &noise).unwrap();
        let points = MonteCarloQuadrature::new(input, 500, 2).draw(&theta0, TANH, &noise).unwrap();
        let u = vec![0.3, -0.5, 0.4, 0.2, -0.1, 0.6, 0.1];
        assert_eq!(u.len(), dec.phi_t.len());
        let rows = expansion_check(&dec, &theta0, TANH, &noise, &u, &[1e-1, 1e-2, 1e-3], &norm_sample, &points).unwrap();
        assert!(rows.windows(2).all(|w| w[1].relative < w[0].relative), "{rows:?}");
        assert!(rows[2].relative < 1e-3, "{rows:?}");
    }
}
