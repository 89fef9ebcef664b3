//! Executable versions of the identifiability assumptions: a
//! function-preserving canonical form removing the sign and permutation
//! symmetries, the sixth-moment diagnostic on the inputs, and the
//! Monte-Carlo Gram test for linear independence of the derivative family.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::mlp::{HiddenUnit, MlpParams};
use crate::simulate::InputDistribution;
use crate::transfer::TransferFunction;

/// Function-preserving normal form.
///
/// A unit is flipped when `b < 0`, or `b = 0` and the first nonzero weight
/// is negative. For tanh the flip is `(a, b, w) → (−a, −b, −w)`; for the
/// logistic it uses `a σ(z) = a − a σ(−z)` and moves `a` into β. Units are
/// then sorted by `(b, w, a)`.
pub fn canonicalize(theta: &MlpParams, phi: TransferFunction) -> MlpParams {
    let mut beta = theta.beta();
    let mut units: Vec<HiddenUnit> = theta.units().to_vec();
    for u in &mut units {
        let first_nonzero = u.w.iter().copied().find(|&v| v != 0.0).unwrap_or(0.0);
        if u.b < 0.0 || (u.b == 0.0 && first_nonzero < 0.0) {
            if phi == TransferFunction::Logistic {
                beta += u.a;
            }
            u.a = -u.a;
            // + 0.0 turns a negated zero back into +0
            u.b = -u.b + 0.0;
            u.w.iter_mut().for_each(|v| *v = -*v + 0.0);
        }
    }
    units.sort_by(|x, y| {
        x.b.total_cmp(&y.b)
            .then_with(|| x.w.iter().zip(&y.w).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal))
            .then_with(|| x.a.total_cmp(&y.a))
    });
    MlpParams::new(beta, units).expect("same shape as input")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    /// `(1/n) Σ ‖x_t‖⁶`
    pub sixth_moment: f64,
    pub first_half: f64,
    pub second_half: f64,
    /// Half-sample estimates agree within a factor of two.
    pub stable: bool,
}

/// Empirical sixth absolute moment of the inputs with a split-half
/// stability flag.
pub fn moment_diagnostic(xs: &[Vec<f64>]) -> Result<MomentReport> {
    if xs.is_empty() {
        return Err(Error::InvalidInput("moment diagnostic needs a nonempty sample".into()));
    }
    let m6 = |s: &[Vec<f64>]| {
        if s.is_empty() {
            return 0.0;
        }
        s.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>().powi(3)).sum::<f64>() / s.len() as f64
    };
    let mid = xs.len() / 2;
    let sixth_moment = m6(xs);
    let first_half = m6(&xs[..mid]);
    let second_half = m6(&xs[mid..]);
    let stable = if first_half == 0.0 && second_half == 0.0 {
        true
    } else {
        let ratio = first_half / second_half;
        (0.5..=2.0).contains(&ratio)
    };
    Ok(MomentReport { sixth_moment, first_half, second_half, stable })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramReport {
    /// Gram matrix of the unit-normalized family, row-major.
    pub matrix: Vec<Vec<f64>>,
    pub min_eigenvalue: f64,
    /// Delete-a-block jackknife standard error of `min_eigenvalue`.
    pub min_eigenvalue_se: f64,
    pub function_count: usize,
    pub mc_samples: usize,
    pub seed: u64,
    /// Estimated `L²(q)` norms of the unnormalized family.
    pub norms: Vec<f64>,
}

impl GramReport {
    pub const DEFAULT_THRESHOLD: f64 = 1e-3;

    pub fn supports_independence(&self, threshold: f64) -> bool {
        self.min_eigenvalue > threshold
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = (0..self.function_count).map(|j| format!("f{j}")).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for row in &self.matrix {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out.push_str(&format!("# min_eigenvalue={:?}\n# min_eigenvalue_se={:?}\n", self.min_eigenvalue, self.min_eigenvalue_se));
        out
    }
}

/// Functions per true unit: `d(d+1)/2 + 1 + d + 1`.
pub fn family_size(d: usize) -> usize {
    d * (d + 1) / 2 + d + 2
}

/// Evaluates the derivative family of every unit of θ⁰ at `x`, in the order
/// `x_k x_l φ″` (l ≤ k), `φ″`, `x_k φ′`, `φ′` per unit.
fn family_at(theta0: &MlpParams, phi: TransferFunction, x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    for u in theta0.units() {
        let dv = phi.derivs(u.activation(x));
        for k in 0..x.len() {
            for l in 0..=k {
                out.push(x[k] * x[l] * dv.d2);
            }
        }
        out.push(dv.d2);
        out.extend(x.iter().map(|xk| xk * dv.d1));
        out.push(dv.d1);
    }
}

const JACKKNIFE_BLOCKS: usize = 20;

fn normalized_min_eig(raw: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, f64) {
    let m = raw.nrows();
    let norms: Vec<f64> = (0..m).map(|i| raw[(i, i)].sqrt()).collect();
    let gram = DMatrix::from_fn(m, m, |i, j| raw[(i, j)] / (norms[i] * norms[j]));
    let min = SymmetricEigen::new(gram.clone()).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    (gram, norms, min)
}

/// Monte-Carlo Gram matrix of the unit-normalized derivative family in
/// `L²(q)`, with `x ~ input`.
pub fn gram_test_h3(
    theta0: &MlpParams,
    phi: TransferFunction,
    input: &InputDistribution,
    mc_samples: usize,
    seed: u64,
) -> Result<GramReport> {
    check_dim(theta0.d(), input.dim())?;
    if mc_samples < JACKKNIFE_BLOCKS {
        return Err(Error::InvalidInput(format!("need at least {JACKKNIFE_BLOCKS} Monte-Carlo samples")));
    }
    let m = theta0.k() * family_size(theta0.d());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = vec![DMatrix::<f64>::zeros(m, m); JACKKNIFE_BLOCKS];
    let mut values = Vec::with_capacity(m);
    let mut x = vec![0.0; theta0.d()];
    for t in 0..mc_samples {
        input.sample_into(&mut rng, &mut x);
        family_at(theta0, phi, &x, &mut values);
        let block = &mut blocks[t * JACKKNIFE_BLOCKS / mc_samples];
        for i in 0..m {
            for j in i..m {
                block[(i, j)] += values[i] * values[j];
            }
        }
    }
    let symmetrize = |mut a: DMatrix<f64>, count: f64| {
        for i in 0..m {
            for j in 0..i {
                a[(i, j)] = a[(j, i)];
            }
        }
        a / count
    };
    let total_sum = blocks.iter().fold(DMatrix::zeros(m, m), |acc, b| acc + b);
    let raw = symmetrize(total_sum.clone(), mc_samples as f64);
    for i in 0..m {
        let norm = raw[(i, i)].sqrt();
        if !(norm >= 1e-12) {
            return Err(Error::DegenerateFunction { index: i, norm });
        }
    }
    let (gram, norms, min_eigenvalue) = normalized_min_eig(&raw);

    let mut leave_out = Vec::with_capacity(JACKKNIFE_BLOCKS);
    for (b, block) in blocks.iter().enumerate() {
        let count = mc_samples - block_len(b, mc_samples);
        let (_, _, v) = normalized_min_eig(&symmetrize(&total_sum - block, count as f64));
        leave_out.push(v);
    }
    let g = JACKKNIFE_BLOCKS as f64;
    let mean = leave_out.iter().sum::<f64>() / g;
    let min_eigenvalue_se = ((g - 1.0) / g * leave_out.iter().map(|v| (v - mean).powi(2)).sum::<f64>()).sqrt();

    Ok(GramReport {
        matrix: (0..m).map(|i| gram.row(i).iter().copied().collect()).collect(),
        min_eigenvalue,
        min_eigenvalue_se,
        function_count: m,
        mc_samples,
        seed,
        norms,
    })
}

fn block_len(b: usize, n: usize) -> usize {
    (0..n).filter(|t| t * JACKKNIFE_BLOCKS / n == b).count()
}
