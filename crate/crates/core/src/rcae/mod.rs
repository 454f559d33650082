mod arch;
mod layers;
mod lstm;
mod model;
mod params;
mod train;

pub use arch::Architecture;
pub use layers::{ConvLayer, Direction, LayerCache};
pub use lstm::{dropout_mask, ConvLstmCell, SequenceCache, SequenceOutput};
pub use model::{reconstruction_loss, ConvAutoencoder, LatentCode, Mode, RcaeModel};
pub use params::Parameters;
pub use train::{train_layerwise, train_on, TrainConfig, TrainTrace};

#[cfg(test)]
mod gradcheck;
