//! Feed-forward networks with reverse-mode gradients, batch norm, Xavier
//! initialisation, Adam, checkpoints and the exact pointwise-max construction.

mod adam;
mod checkpoint;
mod init;
mod maxnet;
mod network;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_networks, save_networks, CHECKPOINT_FORMAT};
pub use init::{xavier_normal, xavier_normal_with, xavier_std};
pub use maxnet::max_network;
pub use network::{time_state_input, Activation, BatchNorm, Layer, MlpSpec, Mode, Network, Tape};

#[cfg(test)]
mod gradcheck;
