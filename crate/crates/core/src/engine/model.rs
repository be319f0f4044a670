use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::ParamStore;
use super::loss::{self, LossReport, LossWeights};
use super::network::{net_rng, Discriminator, Generator, ModelConfig};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Both generators and both discriminators.
///
/// `g_a` produces domain-A images (from B), `g_b` produces domain-B images;
/// `d_a` judges domain A and `d_b` domain B.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle<T> {
    pub config: ModelConfig,
    pub init_seed: u64,
    pub g_a: Generator<T>,
    pub g_b: Generator<T>,
    pub d_a: Discriminator<T>,
    pub d_b: Discriminator<T>,
}

/// Identifies one of the four networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NetId {
    GA,
    GB,
    DA,
    DB,
}

impl NetId {
    pub const ALL: [NetId; 4] = [NetId::GA, NetId::GB, NetId::DA, NetId::DB];

    pub fn name(self) -> &'static str {
        match self {
            NetId::GA => "g_A",
            NetId::GB => "g_B",
            NetId::DA => "d_A",
            NetId::DB => "d_B",
        }
    }
}

/// Standard bundle for a power-of-two image size ≥ 32.
pub fn init_models<T: Scalar>(image_size: usize, base_filters: usize, seed: u64) -> Result<ModelBundle<T>> {
    Ok(ModelBundle::from_config(ModelConfig::new(image_size, base_filters)?, seed))
}

impl<T: Scalar> ModelBundle<T> {
    /// Initializes all four networks; each draws from its own seeded stream.
    pub fn from_config(config: ModelConfig, seed: u64) -> Self {
        Self {
            config,
            init_seed: seed,
            g_a: Generator::new(config, &mut net_rng(seed, 0)),
            g_b: Generator::new(config, &mut net_rng(seed, 1)),
            d_a: Discriminator::new(config, &mut net_rng(seed, 2)),
            d_b: Discriminator::new(config, &mut net_rng(seed, 3)),
        }
    }

    pub fn params(&self, id: NetId) -> &ParamStore<T> {
        match id {
            NetId::GA => &self.g_a.params,
            NetId::GB => &self.g_b.params,
            NetId::DA => &self.d_a.params,
            NetId::DB => &self.d_b.params,
        }
    }

    pub fn params_mut(&mut self, id: NetId) -> &mut ParamStore<T> {
        match id {
            NetId::GA => &mut self.g_a.params,
            NetId::GB => &mut self.g_b.params,
            NetId::DA => &mut self.d_a.params,
            NetId::DB => &mut self.d_b.params,
        }
    }

    pub fn zero_grads(&mut self) {
        for id in NetId::ALL {
            self.params_mut(id).zero_grads();
        }
    }

    /// Same architecture and values in another precision.
    pub fn cast<U: Scalar>(&self) -> ModelBundle<U> {
        let mut out = ModelBundle::<U>::from_config(self.config, self.init_seed);
        for id in NetId::ALL {
            *out.params_mut(id) = self.params(id).cast();
        }
        out
    }

    /// Raw little-endian parameter bytes of all four networks.
    pub fn param_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for id in NetId::ALL {
            for v in self.params(id).values.iter().flatten() {
                v.write_le(&mut out);
            }
        }
        out
    }
}

/// Which objective's gradients [`accumulate_gradients`] computes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// `∂total_G` into all four networks (discriminators included).
    Generator,
    /// `∂total_D` into the discriminators only.
    Discriminator,
    /// Each network gets the gradient of its own objective.
    Training,
}

/// Forward-only evaluation of every loss term.
pub fn evaluate<T: Scalar>(
    bundle: &ModelBundle<T>,
    x_a: &Tensor<T>,
    x_b: &Tensor<T>,
    weights: &LossWeights,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<LossReport> {
    Pass::run(bundle, x_a, x_b, rng)?.report(x_a, x_b, weights)
}

/// Signs of every piecewise-linear argument in one forward pass: rectifier
/// inputs and the residuals inside the absolute-difference losses.
///
/// Two parameter settings with equal patterns lie on the same smooth piece of
/// the objectives, which is what finite-difference checks need.
pub fn kink_pattern<T: Scalar>(
    bundle: &ModelBundle<T>,
    x_a: &Tensor<T>,
    x_b: &Tensor<T>,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Vec<bool>> {
    let p = Pass::run(bundle, x_a, x_b, rng)?;
    let c = &p.caches;
    let mut out = Vec::new();
    for g in [&c.fake_a, &c.fake_b, &c.cyc_a, &c.cyc_b, &c.same_a, &c.same_b] {
        g.push_signs(&mut out);
    }
    for d in [&c.d_fake_a, &c.d_fake_b, &c.d_real_a, &c.d_real_b] {
        d.push_signs(&mut out);
    }
    for (x, y) in [(x_a, &p.cyc_a), (x_b, &p.cyc_b), (x_a, &p.same_a), (x_b, &p.same_b)] {
        out.extend(x.data().iter().zip(y.data()).map(|(&u, &v)| v > u));
    }
    Ok(out)
}

/// Runs one full forward pass and accumulates gradients for `objective`.
///
/// Gradients add to whatever the parameter stores already hold.
pub fn accumulate_gradients<T: Scalar>(
    bundle: &mut ModelBundle<T>,
    x_a: &Tensor<T>,
    x_b: &Tensor<T>,
    weights: &LossWeights,
    rng: Option<&mut ChaCha8Rng>,
    objective: Objective,
) -> Result<LossReport> {
    weights.validate()?;
    let pass = Pass::run(bundle, x_a, x_b, rng)?;
    let report = pass.report(x_a, x_b, weights)?;
    pass.backward(bundle, x_a, x_b, weights, objective)?;
    Ok(report)
}

/// Activations and caches of one full forward pass.
struct Pass<T> {
    cyc_a: Tensor<T>,
    cyc_b: Tensor<T>,
    same_a: Tensor<T>,
    same_b: Tensor<T>,
    z_fake_a: Tensor<T>,
    z_fake_b: Tensor<T>,
    z_real_a: Tensor<T>,
    z_real_b: Tensor<T>,
    caches: PassCaches<T>,
}

struct PassCaches<T> {
    fake_a: super::network::GeneratorCache<T>,
    fake_b: super::network::GeneratorCache<T>,
    cyc_a: super::network::GeneratorCache<T>,
    cyc_b: super::network::GeneratorCache<T>,
    same_a: super::network::GeneratorCache<T>,
    same_b: super::network::GeneratorCache<T>,
    d_fake_a: super::network::DiscriminatorCache<T>,
    d_fake_b: super::network::DiscriminatorCache<T>,
    d_real_a: super::network::DiscriminatorCache<T>,
    d_real_b: super::network::DiscriminatorCache<T>,
}

impl<T: Scalar> Pass<T> {
    fn run(b: &ModelBundle<T>, x_a: &Tensor<T>, x_b: &Tensor<T>, mut rng: Option<&mut ChaCha8Rng>) -> Result<Self> {
        let (fake_b, c_fake_b) = b.g_b.forward(x_a, rng.as_deref_mut())?;
        let (fake_a, c_fake_a) = b.g_a.forward(x_b, rng.as_deref_mut())?;
        let (cyc_a, c_cyc_a) = b.g_a.forward(&fake_b, rng.as_deref_mut())?;
        let (cyc_b, c_cyc_b) = b.g_b.forward(&fake_a, rng.as_deref_mut())?;
        let (same_a, c_same_a) = b.g_a.forward(x_a, rng.as_deref_mut())?;
        let (same_b, c_same_b) = b.g_b.forward(x_b, rng)?;
        let (z_fake_a, d_fake_a) = b.d_a.forward(&fake_a)?;
        let (z_fake_b, d_fake_b) = b.d_b.forward(&fake_b)?;
        let (z_real_a, d_real_a) = b.d_a.forward(x_a)?;
        let (z_real_b, d_real_b) = b.d_b.forward(x_b)?;
        Ok(Self {
            cyc_a,
            cyc_b,
            same_a,
            same_b,
            z_fake_a,
            z_fake_b,
            z_real_a,
            z_real_b,
            caches: PassCaches {
                fake_a: c_fake_a,
                fake_b: c_fake_b,
                cyc_a: c_cyc_a,
                cyc_b: c_cyc_b,
                same_a: c_same_a,
                same_b: c_same_b,
                d_fake_a,
                d_fake_b,
                d_real_a,
                d_real_b,
            },
        })
    }

    /// All loss terms; a non-finite term is an [`Error::NonFinite`].
    fn report(&self, x_a: &Tensor<T>, x_b: &Tensor<T>, w: &LossWeights) -> Result<LossReport> {
        let f = |v: T| v.as_f64();
        let r = LossReport {
            cycle_a: f(loss::cycle_loss(x_a, &self.cyc_a)?),
            cycle_b: f(loss::cycle_loss(x_b, &self.cyc_b)?),
            identity_a: f(loss::identity_loss(x_a, &self.same_a)?),
            identity_b: f(loss::identity_loss(x_b, &self.same_b)?),
            adv_g_a: f(loss::generator_adv_loss(&self.z_fake_a)?),
            adv_g_b: f(loss::generator_adv_loss(&self.z_fake_b)?),
            disc_a: f(loss::discriminator_loss(&self.z_real_a, &self.z_fake_a)?),
            disc_b: f(loss::discriminator_loss(&self.z_real_b, &self.z_fake_b)?),
            total_g: 0.0,
            total_d: 0.0,
        };
        r.with_totals(w)
    }

    fn backward(
        self,
        b: &mut ModelBundle<T>,
        x_a: &Tensor<T>,
        x_b: &Tensor<T>,
        w: &LossWeights,
        objective: Objective,
    ) -> Result<()> {
        let c = &self.caches;
        let coef = T::from_f64_lossy;
        if objective != Objective::Discriminator {
            // The generator objective reaches the discriminators only through
            // the fakes; their parameter gradients are kept only when asked for.
            let keep_d = objective == Objective::Generator;
            let one = T::one();
            let adv = coef(w.adv_coef());
            let cyc = coef(w.cycle_coef());
            let idt = coef(w.identity_coef());

            let mut d_fake_a = b.d_a.backward(&c.d_fake_a, loss::softplus_grad(&self.z_fake_a, -one, adv), keep_d)?;
            let mut d_fake_b = b.d_b.backward(&c.d_fake_b, loss::softplus_grad(&self.z_fake_b, -one, adv), keep_d)?;
            d_fake_b.add_assign(&b.g_a.backward(&c.cyc_a, loss::l1_grad(x_a, &self.cyc_a, cyc), true)?);
            d_fake_a.add_assign(&b.g_b.backward(&c.cyc_b, loss::l1_grad(x_b, &self.cyc_b, cyc), true)?);
            b.g_a.backward(&c.fake_a, d_fake_a, true)?;
            b.g_b.backward(&c.fake_b, d_fake_b, true)?;
            b.g_a.backward(&c.same_a, loss::l1_grad(x_a, &self.same_a, idt), true)?;
            b.g_b.backward(&c.same_b, loss::l1_grad(x_b, &self.same_b, idt), true)?;
        }
        if objective != Objective::Generator {
            let half = coef(0.5 * w.disc);
            let one = T::one();
            b.d_a.backward(&c.d_real_a, loss::softplus_grad(&self.z_real_a, -one, half), true)?;
            b.d_a.backward(&c.d_fake_a, loss::softplus_grad(&self.z_fake_a, one, half), true)?;
            b.d_b.backward(&c.d_real_b, loss::softplus_grad(&self.z_real_b, -one, half), true)?;
            b.d_b.backward(&c.d_fake_b, loss::softplus_grad(&self.z_fake_b, one, half), true)?;
        }
        Ok(())
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 2e-4, beta1: 0.5, beta2: 0.999, epsilon: 1e-7 }
    }
}

/// First and second moment estimates for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn for_params(p: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<T>> = p.values.iter().map(|b| vec![T::zero(); b.len()]).collect();
        Self { t: 0, m: zeros.clone(), v: zeros }
    }

    /// Applies one update from the accumulated gradients, then clears them.
    pub fn step(&mut self, p: &mut ParamStore<T>, cfg: &AdamConfig) {
        self.t += 1;
        let t = self.t as i32;
        let lr_t = cfg.learning_rate * (1.0 - cfg.beta2.powi(t)).sqrt() / (1.0 - cfg.beta1.powi(t));
        let (b1, b2) = (T::from_f64_lossy(cfg.beta1), T::from_f64_lossy(cfg.beta2));
        let (lr, eps) = (T::from_f64_lossy(lr_t), T::from_f64_lossy(cfg.epsilon));
        for (((w, g), m), v) in p.values.iter_mut().zip(&mut p.grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..w.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                w[i] -= lr * m[i] / (v[i].sqrt() + eps);
                g[i] = T::zero();
            }
        }
    }
}

/// Everything that evolves during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub bundle: ModelBundle<T>,
    pub adam: AdamConfig,
    /// Optimizer state per network, in [`NetId::ALL`] order.
    pub optimizers: [Adam<T>; 4],
    /// Drives dropout masks.
    pub rng: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed steps over the whole run.
    pub global_step: u64,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(bundle: ModelBundle<T>, adam: AdamConfig, dropout_seed: u64) -> Self {
        let optimizers = NetId::ALL.map(|id| Adam::for_params(bundle.params(id)));
        Self { bundle, adam, optimizers, rng: ChaCha8Rng::seed_from_u64(dropout_seed), epoch: 0, global_step: 0 }
    }

    /// One joint update of all four networks on a single pair.
    ///
    /// A non-finite loss aborts the step before any parameter changes and is
    /// reported as [`Error::Divergence`].
    pub fn train_step(&mut self, x_a: &Tensor<T>, x_b: &Tensor<T>, weights: &LossWeights) -> Result<LossReport> {
        self.bundle.zero_grads();
        let report = match accumulate_gradients(&mut self.bundle, x_a, x_b, weights, Some(&mut self.rng), Objective::Training) {
            Ok(r) => r,
            Err(Error::NonFinite(what)) => {
                self.bundle.zero_grads();
                return Err(Error::Divergence { epoch: self.epoch, step: self.global_step as usize, what });
            }
            Err(e) => return Err(e),
        };
        for (i, id) in NetId::ALL.into_iter().enumerate() {
            self.optimizers[i].step(self.bundle.params_mut(id), &self.adam);
        }
        self.global_step += 1;
        Ok(report)
    }
}
