//! Bounded, three-times differentiable transfer functions.

use serde::{Deserialize, Serialize};

/// Hidden-unit activation. All derivatives are closed form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferFunction {
    /// `1 / (1 + exp(-z))`
    Logistic,
    #[default]
    Tanh,
}

/// `φ` and its first three derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivs {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

impl TransferFunction {
    pub fn name(self) -> &'static str {
        match self {
            TransferFunction::Logistic => "logistic",
            TransferFunction::Tanh => "tanh",
        }
    }

    #[inline]
    pub fn value(self, z: f64) -> f64 {
        match self {
            TransferFunction::Logistic => logistic(z),
            TransferFunction::Tanh => tanh(z),
        }
    }

    #[inline]
    pub fn d1(self, z: f64) -> f64 {
        let p = self.value(z);
        match self {
            TransferFunction::Logistic => p * (1.0 - p),
            TransferFunction::Tanh => 1.0 - p * p,
        }
    }

    #[inline]
    pub fn d2(self, z: f64) -> f64 {
        self.derivs(z).d2
    }

    #[inline]
    pub fn d3(self, z: f64) -> f64 {
        self.derivs(z).d3
    }

    /// Value and first derivative from a single evaluation.
    #[inline]
    pub fn value_d1(self, z: f64) -> (f64, f64) {
        let p = self.value(z);
        let d1 = match self {
            TransferFunction::Logistic => p * (1.0 - p),
            TransferFunction::Tanh => 1.0 - p * p,
        };
        (p, d1)
    }

    #[inline]
    pub fn derivs(self, z: f64) -> Derivs {
        let p = self.value(z);
        match self {
            TransferFunction::Logistic => {
                let d1 = p * (1.0 - p);
                let d2 = d1 * (1.0 - 2.0 * p);
                let d3 = d1 * (1.0 - 6.0 * d1);
                Derivs { value: p, d1, d2, d3 }
            }
            TransferFunction::Tanh => {
                let d1 = 1.0 - p * p;
                let d2 = -2.0 * p * d1;
                let d3 = -2.0 * d1 * (1.0 - 3.0 * p * p);
                Derivs { value: p, d1, d2, d3 }
            }
        }
    }

    /// `sup |φ|` over the reals.
    pub fn sup_abs(self) -> f64 {
        1.0
    }
}

#[inline]
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `tanh` through one `exp` (or `exp_m1` near zero), a few ulp from `f64::tanh`.
#[inline]
fn tanh(z: f64) -> f64 {
    let a = z.abs();
    let t = if a < 0.5 {
        let m = (2.0 * a).exp_m1();
        m / (m + 2.0)
    } else {
        let e = (-2.0 * a).exp();
        (1.0 - e) / (1.0 + e)
    };
    t.copysign(z)
}
