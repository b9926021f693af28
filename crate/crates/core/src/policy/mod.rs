pub mod checkpoint;
pub mod decode;
pub mod model;
pub mod net;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader};
pub use decode::{beam_search, decode, greedy, sample, DecodeMode, SamplerConfig};
pub use model::{entropy, log_softmax, PolicyModel, StepModel};
pub use net::{BatchOutputs, NetConfig, RecurrentState, SeqNet, ARCHITECTURE};
