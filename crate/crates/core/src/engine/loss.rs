use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const LAMBDA_CYCLE: f64 = 10.0;
pub const LAMBDA_IDENTITY: f64 = 5.0;
pub const LAMBDA_ADV: f64 = 1.0;

/// Multipliers on the baseline loss coefficients. Baseline is all ones.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub cycle: f64,
    pub identity: f64,
    pub adv: f64,
    /// Scales the discriminators' objective.
    pub disc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::BASELINE
    }
}

impl LossWeights {
    pub const BASELINE: Self = Self { cycle: 1.0, identity: 1.0, adv: 1.0, disc: 1.0 };
    pub const ZERO_GENERATOR: Self = Self { cycle: 0.0, identity: 0.0, adv: 0.0, disc: 1.0 };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("cycle", self.cycle), ("identity", self.identity), ("adv", self.adv), ("disc", self.disc)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("loss weight {name} must be finite and ≥ 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Effective coefficient on `cycle_A + cycle_B`.
    pub fn cycle_coef(&self) -> f64 {
        self.cycle * LAMBDA_CYCLE
    }

    pub fn identity_coef(&self) -> f64 {
        self.identity * LAMBDA_IDENTITY
    }

    pub fn adv_coef(&self) -> f64 {
        self.adv * LAMBDA_ADV
    }
}

/// Per-step loss values. Field order is the loss-log column order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub cycle_a: f64,
    pub cycle_b: f64,
    pub identity_a: f64,
    pub identity_b: f64,
    pub adv_g_a: f64,
    pub adv_g_b: f64,
    pub disc_a: f64,
    pub disc_b: f64,
    pub total_g: f64,
    pub total_d: f64,
}

impl LossReport {
    pub const COLUMNS: [&'static str; 10] = [
        "cycle_A",
        "cycle_B",
        "identity_A",
        "identity_B",
        "adv_G_A",
        "adv_G_B",
        "disc_A",
        "disc_B",
        "total_G",
        "total_D",
    ];

    pub fn values(&self) -> [f64; 10] {
        [
            self.cycle_a,
            self.cycle_b,
            self.identity_a,
            self.identity_b,
            self.adv_g_a,
            self.adv_g_b,
            self.disc_a,
            self.disc_b,
            self.total_g,
            self.total_d,
        ]
    }

    pub fn from_values(v: [f64; 10]) -> Self {
        Self {
            cycle_a: v[0],
            cycle_b: v[1],
            identity_a: v[2],
            identity_b: v[3],
            adv_g_a: v[4],
            adv_g_b: v[5],
            disc_a: v[6],
            disc_b: v[7],
            total_g: v[8],
            total_d: v[9],
        }
    }

    /// Fills both totals from the components.
    pub fn with_totals(mut self, w: &LossWeights) -> Result<Self> {
        self.total_g = composite_generator_objective(&self, w)?;
        self.total_d = composite_discriminator_objective(&self, w)?;
        Ok(self)
    }

    /// Name of the first non-finite entry.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        Self::COLUMNS.iter().zip(self.values()).find(|(_, v)| !v.is_finite()).map(|(n, _)| *n)
    }
}

fn finite_components(r: &LossReport) -> Result<()> {
    match r.values()[..8].iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(LossReport::COLUMNS[i].to_string())),
        None => Ok(()),
    }
}

/// `total_G` from the six generator-side components of `r`.
pub fn composite_generator_objective(r: &LossReport, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    finite_components(r)?;
    Ok(w.adv_coef() * (r.adv_g_a + r.adv_g_b)
        + w.cycle_coef() * (r.cycle_a + r.cycle_b)
        + w.identity_coef() * (r.identity_a + r.identity_b))
}

/// `total_D = w_disc · (disc_A + disc_B)`.
pub fn composite_discriminator_objective(r: &LossReport, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    finite_components(r)?;
    Ok(w.disc * (r.disc_a + r.disc_b))
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn count<T: Scalar>(t: &Tensor<T>) -> T {
    T::from_usize(t.len()).expect("tensor length")
}

fn mean_abs_diff<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<T> {
    a.ensure_same_shape(b, what)?;
    if a.is_empty() {
        return Err(Error::ShapeMismatch(format!("{what}: empty tensors")));
    }
    Ok(a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y).abs()).sum::<T>() / count(a))
}

fn ensure_finite<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} logits")))
    }
}

/// Mean absolute difference between an image and its round trip.
pub fn cycle_loss<T: Scalar>(x: &Tensor<T>, cycled: &Tensor<T>) -> Result<T> {
    mean_abs_diff(x, cycled, "cycle loss")
}

/// Mean absolute difference between an image and its same-domain translation.
pub fn identity_loss<T: Scalar>(x: &Tensor<T>, same: &Tensor<T>) -> Result<T> {
    mean_abs_diff(x, same, "identity loss")
}

/// Mean binary cross-entropy of the logits against target 1.
pub fn generator_adv_loss<T: Scalar>(fake_logits: &Tensor<T>) -> Result<T> {
    ensure_finite(fake_logits, "generator")?;
    Ok(fake_logits.data().iter().map(|&z| softplus(-z)).sum::<T>() / count(fake_logits))
}

/// `0.5 · (BCE(real, 1) + BCE(fake, 0))`, each averaged over the grid.
pub fn discriminator_loss<T: Scalar>(real_logits: &Tensor<T>, fake_logits: &Tensor<T>) -> Result<T> {
    real_logits.ensure_same_shape(fake_logits, "discriminator loss")?;
    ensure_finite(real_logits, "real")?;
    ensure_finite(fake_logits, "fake")?;
    let real = real_logits.data().iter().map(|&z| softplus(-z)).sum::<T>() / count(real_logits);
    let fake = fake_logits.data().iter().map(|&z| softplus(z)).sum::<T>() / count(fake_logits);
    Ok(T::from_f64_lossy(0.5) * (real + fake))
}

/// `coef · ∂ mean|x − y| / ∂y`, with the subgradient 0 at equality.
pub(crate) fn l1_grad<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, coef: T) -> Tensor<T> {
    let k = coef / count(y);
    let mut g = y.clone();
    g.data_mut().iter_mut().zip(x.data()).for_each(|(v, &xv)| {
        let d = *v - xv;
        *v = if d > T::zero() {
            k
        } else if d < T::zero() {
            -k
        } else {
            T::zero()
        };
    });
    g
}

/// `coef · ∂ mean softplus(sign·z) / ∂z`.
pub(crate) fn softplus_grad<T: Scalar>(z: &Tensor<T>, sign: T, coef: T) -> Tensor<T> {
    let k = coef / count(z);
    z.map(|v| k * sign * sigmoid(sign * v))
}
