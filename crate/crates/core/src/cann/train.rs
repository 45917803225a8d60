use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arch::NnArchitecture;
use super::network::{derive_seed, Network};
use super::CannModel;
use crate::data::{NnEncoding, SplitDataset, DEFAULT_ONEHOT_THRESHOLD};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::glm::GlmModel;
use crate::poisson;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for RmsProp {
    fn default() -> Self {
        RmsProp {
            learning_rate: 1e-3,
            rho: 0.9,
            epsilon: 1e-7,
        }
    }
}

impl RmsProp {
    /// `s ← ρ·s + (1−ρ)·g²`, `θ ← θ − lr·g / (√s + ε)`
    pub fn step(&self, params: &mut [f64], grad: &[f64], state: &mut [f64]) {
        for ((p, g), s) in params.iter_mut().zip(grad).zip(state.iter_mut()) {
            *s = self.rho * *s + (1.0 - self.rho) * g * g;
            *p -= self.learning_rate * g / (s.sqrt() + self.epsilon);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub optimizer: RmsProp,
    pub onehot_threshold: usize,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 1000,
            max_epochs: 100,
            patience: 5,
            optimizer: RmsProp::default(),
            onehot_threshold: DEFAULT_ONEHOT_THRESHOLD,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 {
            return Err(Error::InvalidArgument(
                "batch_size and patience must be at least 1".into(),
            ));
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && (0.0..1.0).contains(&o.rho) && o.epsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!("invalid optimizer {o:?}")));
        }
        Ok(())
    }
}

/// Mean Poisson deviances after an epoch; epoch 0 is the untrained network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_deviance: f64,
    pub validation_deviance: f64,
}

/// Trains the network half of a CANN on the training split with the benchmark
/// predictions as modified exposure, stopping early on the validation split.
/// Returns the weights of the best validation epoch.
pub fn train(
    data: &SplitDataset,
    benchmark: &GlmModel,
    arch: NnArchitecture,
    cfg: &TrainConfig,
) -> Result<CannModel> {
    let v_train = benchmark.predict_counts(&data.train)?;
    let v_val = benchmark.predict_counts(&data.validation)?;
    train_with_exposure(data, &v_train, &v_val, arch, cfg)
}

/// As [`train`], with the benchmark predictions for the training and
/// validation splits supplied directly. Every column of `data` becomes a
/// network input.
pub fn train_with_exposure(
    data: &SplitDataset,
    v_train: &[f64],
    v_val: &[f64],
    arch: NnArchitecture,
    cfg: &TrainConfig,
) -> Result<CannModel> {
    cfg.validate()?;
    if v_train.len() != data.train.len() || v_val.len() != data.validation.len() {
        return Err(Error::InvalidArgument(
            "modified exposure does not match the splits".into(),
        ));
    }
    let encoding = NnEncoding::fit(&data.train, cfg.onehot_threshold)?;
    let x_train = encoding.encode(&data.train)?;
    let x_val = encoding.encode(&data.validation)?;
    let y_train = data.train.claims();
    let y_val = data.validation.claims();
    let exec = cfg.exec;

    let mut net = Network::new(&encoding, arch, derive_seed(&[cfg.seed, 1]))?;
    let val_dev = |net: &Network| -> Result<f64> {
        let pred = net.predict(&x_val, v_val, exec)?;
        Ok(poisson::mean_deviance(exec, y_val, &pred))
    };

    let init_train = poisson::mean_deviance(exec, y_train, &net.predict(&x_train, v_train, exec)?);
    let init_val = val_dev(&net)?;
    let mut log = vec![EpochRecord {
        epoch: 0,
        train_deviance: init_train,
        validation_deviance: init_val,
    }];
    let mut best = (init_val, net.weights.params.clone(), 0usize);
    let mut since_best = 0;
    let mut state = vec![0.0; net.weights.layout.total];
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut stopped_epoch = 0;

    for epoch in 1..=cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, 2, epoch as u64]));
        order.shuffle(&mut rng);
        let mut train_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let dropout_seed = derive_seed(&[cfg.seed, 3, epoch as u64, b as u64]);
            let (loss, grad) =
                net.loss_and_gradient(&x_train, batch, y_train, v_train, Some(dropout_seed), exec)?;
            train_sum += loss * batch.len() as f64;
            cfg.optimizer
                .step(&mut net.weights.params, &grad, &mut state);
        }
        let validation_deviance = val_dev(&net)?;
        let record = EpochRecord {
            epoch,
            train_deviance: train_sum / order.len().max(1) as f64,
            validation_deviance,
        };
        log.push(record);
        stopped_epoch = epoch;
        log::debug!(
            "epoch {epoch}: train {:.6} validation {:.6}",
            record.train_deviance,
            validation_deviance
        );
        if !validation_deviance.is_finite() || !record.train_deviance.is_finite() {
            return Err(Error::Diverged { epoch, log });
        }
        if validation_deviance < best.0 {
            best = (validation_deviance, net.weights.params.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    net.weights.params = best.1;
    Ok(CannModel {
        encoding,
        network: net,
        training_log: log,
        stopped_epoch,
        best_epoch: best.2,
    })
}
