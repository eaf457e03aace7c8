//! Objective, optimizer, training loop and checkpoints.

mod adamw;
mod checkpoint;
mod loss;
mod split;
mod trainer;

pub use adamw::{adamw_step, adamw_update, AdamWConfig, AdamWState, Moments};
pub use checkpoint::{
    load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, MAGIC, VERSION,
};
pub use loss::mse_loss;
pub use split::{leave_one_out_split, Yearly};
pub use trainer::{checkpoint_path, tile_pairs, train, EpochLog, TilePair, TrainConfig, Trainer};
