pub mod seq;
pub mod tasks;
pub mod toy;
pub mod vocab;

pub use seq::{
    load_dataset, read_dataset, save_dataset, trajectory_to_transitions,
    transitions_to_trajectory, write_dataset, SeqMdp, Trajectory, Transition,
};
pub use tasks::{SyntheticTask, TaskKind, TaskParams};
pub use toy::{ToyAction, ToyEpisode, ToyMdp, ToyState, ToyTransition};
pub use vocab::{TokenId, Vocabulary, BOS, EOS, PAD};
