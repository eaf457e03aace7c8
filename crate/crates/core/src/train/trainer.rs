use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adamw::{adamw_step, AdamWConfig, AdamWState};
use super::checkpoint::{save_checkpoint, Checkpoint};
use super::loss::mse_loss;
use crate::data::{tile, DocumentPair, GrayImage};
use crate::error::{Error, Result};
use crate::model::{forward_pass, tokenize_batch, ModelConfig, TlVit};
use crate::tensor::{Tape, Tensor};

/// Stream of the shuffle generator; stream 0 of the same seed initialises
/// the weights.
const SHUFFLE_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: u64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: u64,
    /// Stop after this many optimizer steps in total, if set.
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let opt = AdamWConfig::default();
        TrainConfig {
            learning_rate: opt.learning_rate,
            adam_beta1: opt.beta1,
            adam_beta2: opt.beta2,
            adam_eps: opt.eps,
            weight_decay: opt.weight_decay,
            batch_size: 16,
            epochs: 200,
            seed: 0,
            checkpoint_every: 0,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer().validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// A model-sized input tile with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct TilePair {
    pub input: GrayImage,
    pub target: GrayImage,
}

/// Cuts every document into `size`-square tiles, padding with paper.
pub fn tile_pairs(pairs: &[DocumentPair], size: usize) -> Result<Vec<TilePair>> {
    let mut out = Vec::new();
    for p in pairs {
        let input = tile(&p.degraded, size, 1.0)?;
        let target = tile(&p.ground_truth, size, 1.0)?;
        out.extend(
            input
                .tiles
                .into_iter()
                .zip(target.tiles)
                .map(|(input, target)| TilePair { input, target }),
        );
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: u64,
    pub step_losses: Vec<f32>,
}

impl EpochLog {
    pub fn mean_loss(&self) -> f32 {
        if self.step_losses.is_empty() {
            return f32::NAN;
        }
        let sum: f64 = self.step_losses.iter().map(|&l| l as f64).sum();
        (sum / self.step_losses.len() as f64) as f32
    }
}

/// Model, optimizer and shuffle state for one training run.
pub struct Trainer {
    model: TlVit<f32>,
    optimizer: AdamWState<f32>,
    config: TrainConfig,
    rng: ChaCha8Rng,
    epoch: u64,
}

impl Trainer {
    pub fn new(model_config: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = TlVit::init(model_config, config.seed)?;
        let optimizer = AdamWState::for_params(model.params());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(SHUFFLE_STREAM);
        Ok(Trainer {
            model,
            optimizer,
            config,
            rng,
            epoch: 0,
        })
    }

    /// Continues the run saved in `checkpoint`.
    pub fn resume(checkpoint: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = checkpoint.model()?;
        let optimizer = match checkpoint.optimizer.moments {
            Some(_) => checkpoint.optimizer,
            None => AdamWState {
                step: checkpoint.optimizer.step,
                ..AdamWState::for_params(model.params())
            },
        };
        Ok(Trainer {
            model,
            optimizer,
            config,
            rng: checkpoint.rng,
            epoch: checkpoint.epoch,
        })
    }

    pub fn model(&self) -> &TlVit<f32> {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn steps(&self) -> u64 {
        self.optimizer.step
    }

    fn steps_exhausted(&self) -> bool {
        self.config
            .max_steps
            .is_some_and(|m| self.optimizer.step >= m)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: *self.model.config(),
            params: self.model.params().clone(),
            optimizer: self.optimizer.clone(),
            epoch: self.epoch,
            rng: self.rng.clone(),
        }
    }

    /// One forward/backward pass and AdamW update on `batch`. Returns the
    /// batch loss before the update.
    pub fn train_step(&mut self, batch: &[&TilePair]) -> Result<f32> {
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let cfg = *self.model.config();
        let tape = Tape::new();
        let params = self.model.params().bind(&tape, true);
        let inputs: Vec<GrayImage> = batch.iter().map(|p| p.input.clone()).collect();
        let (patches, subpatches) = tokenize_batch(&tape, &cfg, &inputs)?;
        let pass = forward_pass(&tape, &cfg, &params, patches, subpatches)?;
        let mut target = Vec::with_capacity(batch.len() * cfg.height * cfg.width);
        for p in batch {
            if p.target.width() != cfg.width || p.target.height() != cfg.height {
                return Err(Error::Dimension(format!(
                    "target is {}x{}, model expects {}x{}",
                    p.target.width(),
                    p.target.height(),
                    cfg.width,
                    cfg.height
                )));
            }
            target.extend_from_slice(p.target.pixels());
        }
        let target = tape.constant(Tensor::new([batch.len(), cfg.height, cfg.width], target)?);
        let loss = mse_loss(&tape, &pass.output, &target)?;
        let value = loss.value().item()?;
        let grads = tape.backward(&loss)?;
        let grads = params.map(|_, _, v| grads.wrt(v));
        adamw_step(
            self.model.params_mut(),
            &grads,
            &mut self.optimizer,
            &self.config.optimizer(),
        )?;
        Ok(value)
    }

    /// Shuffles `data` and runs one pass over it in batches.
    pub fn run_epoch(&mut self, data: &[TilePair]) -> Result<EpochLog> {
        if data.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut step_losses = Vec::new();
        for chunk in order.chunks(self.config.batch_size) {
            if self.steps_exhausted() {
                break;
            }
            let batch: Vec<&TilePair> = chunk.iter().map(|&i| &data[i]).collect();
            step_losses.push(self.train_step(&batch)?);
        }
        self.epoch += 1;
        Ok(EpochLog {
            epoch: self.epoch,
            step_losses,
        })
    }

    /// Trains until `epochs` are complete or the step budget runs out,
    /// calling `on_epoch` after each epoch.
    pub fn fit(
        &mut self,
        data: &[TilePair],
        mut on_epoch: impl FnMut(&EpochLog, &Trainer) -> Result<()>,
    ) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::new();
        while self.epoch < self.config.epochs && !self.steps_exhausted() {
            let log = self.run_epoch(data)?;
            on_epoch(&log, self)?;
            logs.push(log);
        }
        Ok(logs)
    }
}

pub fn checkpoint_path(dir: &Path, epoch: u64) -> PathBuf {
    dir.join(format!("epoch_{epoch:04}.ckpt"))
}

/// Tiles `dataset` to the model size and trains from scratch. When
/// `checkpoint_dir` is given, checkpoints are written there every
/// `checkpoint_every` epochs and once at the end as `final.ckpt`.
pub fn train(
    dataset: &[DocumentPair],
    model_config: ModelConfig,
    config: TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(Checkpoint, Vec<EpochLog>)> {
    if dataset.is_empty() {
        return Err(Error::Data("dataset is empty".into()));
    }
    if model_config.width != model_config.height {
        return Err(Error::Config("training needs square tiles".into()));
    }
    let tiles = tile_pairs(dataset, model_config.height)?;
    let mut trainer = Trainer::new(model_config, config)?;
    let every = trainer.config.checkpoint_every;
    let logs = trainer.fit(&tiles, |log, t| match checkpoint_dir {
        Some(dir) if every > 0 && log.epoch % every == 0 => {
            save_checkpoint(&t.checkpoint(), checkpoint_path(dir, log.epoch))
        }
        _ => Ok(()),
    })?;
    let ckpt = trainer.checkpoint();
    if let Some(dir) = checkpoint_dir {
        save_checkpoint(&ckpt, dir.join("final.ckpt"))?;
    }
    Ok((ckpt, logs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> Vec<TilePair> {
        (0..3)
            .map(|i| TilePair {
                input: GrayImage::from_fn(16, 16, |x, y| ((x + y + i) % 5) as f32 / 4.0),
                target: GrayImage::from_fn(16, 16, |x, _| if (x + i) % 4 == 0 { 0.0 } else { 1.0 }),
            })
            .collect()
    }

    fn config() -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 2,
            epochs: 3,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn step_counter_and_epoch_advance() {
        let mut t = Trainer::new(ModelConfig::tiny(), config()).unwrap();
        let log = t.run_epoch(&data()).unwrap();
        assert_eq!(log.step_losses.len(), 2);
        assert_eq!(t.steps(), 2);
        assert_eq!(t.epoch(), 1);
    }

    #[test]
    fn max_steps_caps_training() {
        let cfg = TrainConfig {
            max_steps: Some(3),
            epochs: 10,
            ..config()
        };
        let mut t = Trainer::new(ModelConfig::tiny(), cfg).unwrap();
        let logs = t.fit(&data(), |_, _| Ok(())).unwrap();
        assert_eq!(t.steps(), 3);
        assert_eq!(logs.len(), 2);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let err = train(&[], ModelConfig::tiny(), config(), None);
        assert!(matches!(err, Err(Error::Data(_))));
        let mut t = Trainer::new(ModelConfig::tiny(), config()).unwrap();
        assert!(t.run_epoch(&[]).is_err());
    }

    #[test]
    fn zero_batch_size_is_rejected() {
        let cfg = TrainConfig {
            batch_size: 0,
            ..config()
        };
        assert!(matches!(
            Trainer::new(ModelConfig::tiny(), cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn tile_pairs_pads_partial_tiles() {
        let pair = DocumentPair::new(
            "a",
            2011,
            GrayImage::filled(20, 10, 0.5),
            GrayImage::filled(20, 10, 0.0),
        )
        .unwrap();
        let tiles = tile_pairs(&[pair], 16).unwrap();
        assert_eq!(tiles.len(), 2);
        assert_eq!(tiles[1].target.get(15, 15), 1.0);
        assert_eq!(tiles[1].target.get(0, 0), 0.0);
    }
}
