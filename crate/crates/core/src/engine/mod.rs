//! CycleGAN networks, losses, optimizer and checkpoints.

pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod model;
pub mod network;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use loss::{
    composite_discriminator_objective, composite_generator_objective, cycle_loss, discriminator_loss,
    generator_adv_loss, identity_loss, LossReport, LossWeights,
};
pub use model::{accumulate_gradients, evaluate, init_models, kink_pattern, Adam, AdamConfig, ModelBundle, NetId, Objective, TrainState};
pub use network::{Discriminator, Generator, ModelConfig};
pub use tensor::{from_tensor, to_tensor, Tensor};
