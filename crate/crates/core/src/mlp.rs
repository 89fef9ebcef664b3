//! One-hidden-layer MLP parameters, forward evaluation and analytic
//! parameter derivatives.
//!
//! The flat parameter layout is fixed throughout the crate:
//!
//! ```text
//! (β, a_1..a_k, b_1..b_k, w_11..w_1d, ..., w_k1..w_kd)
//! ```
//!
//! giving `2k + 1 + k·d` coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::transfer::TransferFunction;

/// One term `a φ(b + wᵀx)` of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenUnit {
    pub a: f64,
    pub b: f64,
    pub w: Vec<f64>,
}

impl HiddenUnit {
    pub fn new(a: f64, b: f64, w: Vec<f64>) -> Self {
        Self { a, b, w }
    }

    #[inline]
    pub fn activation(&self, x: &[f64]) -> f64 {
        self.b + dot(&self.w, x)
    }

    pub fn weight_norm(&self) -> f64 {
        dot(&self.w, &self.w).sqrt()
    }
}

/// Parameter vector θ of a k-unit network on d inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    beta: f64,
    units: Vec<HiddenUnit>,
}

impl MlpParams {
    pub fn new(beta: f64, units: Vec<HiddenUnit>) -> Result<Self> {
        let Some(first) = units.first() else {
            return Err(Error::InvalidInput("a network needs at least one hidden unit".into()));
        };
        let d = first.w.len();
        if d == 0 {
            return Err(Error::InvalidInput("input dimension must be at least 1".into()));
        }
        for u in &units {
            check_dim(d, u.w.len())?;
        }
        Ok(Self { beta, units })
    }

    /// Network with `k` units whose parameters are all zero.
    pub fn zeros(k: usize, d: usize) -> Result<Self> {
        Self::new(0.0, vec![HiddenUnit::new(0.0, 0.0, vec![0.0; d]); k])
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn set_beta(&mut self, beta: f64) {
        self.beta = beta;
    }

    pub fn units(&self) -> &[HiddenUnit] {
        &self.units
    }

    /// Mutable access to the units. Callers must keep every `w` at length `d`.
    pub fn units_mut(&mut self) -> &mut [HiddenUnit] {
        &mut self.units
    }

    pub fn into_parts(self) -> (f64, Vec<HiddenUnit>) {
        (self.beta, self.units)
    }

    pub fn k(&self) -> usize {
        self.units.len()
    }

    pub fn d(&self) -> usize {
        self.units[0].w.len()
    }

    pub fn dim(&self) -> usize {
        flat_dim(self.k(), self.d())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let (k, d) = (self.k(), self.d());
        let mut out = vec![0.0; flat_dim(k, d)];
        self.write_flat(&mut out);
        out
    }

    pub(crate) fn write_flat(&self, out: &mut [f64]) {
        let (k, d) = (self.k(), self.d());
        let layout = Layout::new(k, d);
        out[0] = self.beta;
        for (i, u) in self.units.iter().enumerate() {
            out[layout.a(i)] = u.a;
            out[layout.b(i)] = u.b;
            out[layout.w(i, 0)..layout.w(i, 0) + d].copy_from_slice(&u.w);
        }
    }

    pub fn from_flat(k: usize, d: usize, flat: &[f64]) -> Result<Self> {
        if k == 0 || d == 0 {
            return Err(Error::InvalidInput(format!("k = {k} and d = {d} must both be positive")));
        }
        check_dim(flat_dim(k, d), flat.len())?;
        let layout = Layout::new(k, d);
        let units = (0..k)
            .map(|i| {
                let w0 = layout.w(i, 0);
                HiddenUnit::new(flat[layout.a(i)], flat[layout.b(i)], flat[w0..w0 + d].to_vec())
            })
            .collect();
        Ok(Self { beta: flat[0], units })
    }

    /// Overwrites the coordinates from `flat`, which must have `self.dim()` entries.
    pub(crate) fn read_flat(&mut self, flat: &[f64]) {
        let d = self.d();
        let layout = Layout::new(self.k(), d);
        self.beta = flat[0];
        for (i, u) in self.units.iter_mut().enumerate() {
            u.a = flat[layout.a(i)];
            u.b = flat[layout.b(i)];
            let w0 = layout.w(i, 0);
            u.w.copy_from_slice(&flat[w0..w0 + d]);
        }
    }

    /// `F_θ(x) = β + Σ a_i φ(b_i + w_iᵀx)`.
    pub fn forward(&self, phi: TransferFunction, x: &[f64]) -> Result<f64> {
        check_dim(self.d(), x.len())?;
        Ok(self.forward_unchecked(phi, x))
    }

    #[inline]
    pub(crate) fn forward_unchecked(&self, phi: TransferFunction, x: &[f64]) -> f64 {
        self.units
            .iter()
            .fold(self.beta, |acc, u| acc + u.a * phi.value(u.activation(x)))
    }

    /// `∂F_θ(x)/∂θ` in the flat layout.
    pub fn grad_params(&self, phi: TransferFunction, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.d(), x.len())?;
        let mut g = vec![0.0; self.dim()];
        self.grad_into(phi, x, &mut g);
        Ok(g)
    }

    /// Writes the gradient into `g` and returns `F_θ(x)`.
    #[inline]
    pub(crate) fn grad_into(&self, phi: TransferFunction, x: &[f64], g: &mut [f64]) -> f64 {
        let (k, d) = (self.k(), self.d());
        let layout = Layout::new(k, d);
        let mut f = self.beta;
        g[0] = 1.0;
        for (i, u) in self.units.iter().enumerate() {
            let (v, dv) = phi.value_d1(u.activation(x));
            f += u.a * v;
            g[layout.a(i)] = v;
            let s = u.a * dv;
            g[layout.b(i)] = s;
            let w0 = layout.w(i, 0);
            for (gj, xj) in g[w0..w0 + d].iter_mut().zip(x) {
                *gj = s * xj;
            }
        }
        f
    }

    /// Matrix of second partial derivatives of `F_θ(x)` in the flat layout,
    /// row-major `dim × dim`.
    pub fn hessian_params(&self, phi: TransferFunction, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_dim(self.d(), x.len())?;
        let (k, d) = (self.k(), self.d());
        let p = self.dim();
        let layout = Layout::new(k, d);
        let mut h = vec![vec![0.0; p]; p];
        for (i, u) in self.units.iter().enumerate() {
            let dv = phi.derivs(u.activation(x));
            let (ia, ib, w0) = (layout.a(i), layout.b(i), layout.w(i, 0));
            // (a, b) and (a, w) mix the output weight with the activation.
            h[ia][ib] = dv.d1;
            h[ib][ia] = dv.d1;
            for j in 0..d {
                h[ia][w0 + j] = x[j] * dv.d1;
                h[w0 + j][ia] = x[j] * dv.d1;
            }
            let c = u.a * dv.d2;
            h[ib][ib] = c;
            for j in 0..d {
                h[ib][w0 + j] = c * x[j];
                h[w0 + j][ib] = c * x[j];
                for l in 0..=j {
                    let v = c * x[j] * x[l];
                    h[w0 + j][w0 + l] = v;
                    h[w0 + l][w0 + j] = v;
                }
            }
        }
        Ok(h)
    }

    /// Same function with the units reordered: unit `i` of the result is
    /// unit `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.k()];
        if perm.len() != self.k() || perm.iter().any(|&p| p >= self.k() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidInput(format!("{perm:?} is not a permutation of 0..{}", self.k())));
        }
        Ok(Self {
            beta: self.beta,
            units: perm.iter().map(|&p| self.units[p].clone()).collect(),
        })
    }

    /// `|β| + Σ|a_i|·sup|φ|`, an upper bound on `|F_θ(x)|`.
    pub fn output_bound(&self, phi: TransferFunction) -> f64 {
        self.beta.abs() + self.units.iter().map(|u| u.a.abs()).sum::<f64>() * phi.sup_abs()
    }
}

pub fn flat_dim(k: usize, d: usize) -> usize {
    2 * k + 1 + k * d
}

/// Index arithmetic for the flat parameter layout.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    k: usize,
    d: usize,
}

impl Layout {
    pub(crate) fn new(k: usize, d: usize) -> Self {
        Self { k, d }
    }
    #[inline]
    pub(crate) fn a(&self, i: usize) -> usize {
        1 + i
    }
    #[inline]
    pub(crate) fn b(&self, i: usize) -> usize {
        1 + self.k + i
    }
    #[inline]
    pub(crate) fn w(&self, i: usize, j: usize) -> usize {
        1 + 2 * self.k + i * self.d + j
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// On-disk parameter document: `{k, d, transfer, flat_theta}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamFile {
    pub k: usize,
    pub d: usize,
    pub transfer: TransferFunction,
    pub flat_theta: Vec<f64>,
}

impl ParamFile {
    pub fn from_params(theta: &MlpParams, transfer: TransferFunction) -> Self {
        Self {
            k: theta.k(),
            d: theta.d(),
            transfer,
            flat_theta: theta.to_flat(),
        }
    }

    pub fn params(&self) -> Result<MlpParams> {
        MlpParams::from_flat(self.k, self.d, &self.flat_theta)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: Self = serde_json::from_str(text)?;
        file.params()?;
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("parameter file serializes")
    }
}
