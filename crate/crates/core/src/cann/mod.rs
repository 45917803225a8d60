//! Combined actuarial neural network: a feed-forward network whose output is
//! added on the log scale to a fixed benchmark GLM prediction.

mod arch;
mod network;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use arch::{
    Activation, EmbeddingSpec, InputLayout, InputNeuron, NnArchitecture, DEFAULT_LRELU_ALPHA,
};
pub use network::{derive_seed, MatrixSlot, Network, NnWeights, ParamLayout, BATCH_CHUNK};
pub use train::{train, train_with_exposure, EpochRecord, RmsProp, TrainConfig};

use crate::data::{Dataset, NnEncoding};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::glm::GlmModel;

#[derive(Clone, Debug, PartialEq)]
pub struct CannModel {
    pub encoding: NnEncoding,
    pub network: Network,
    pub training_log: Vec<EpochRecord>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
}

/// One exported tensor. Matrices are row-major with the shape given; hidden
/// weights use the `q_l × q_{l−1}` orientation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CannFile {
    encoding: NnEncoding,
    architecture: NnArchitecture,
    tensors: Vec<NamedTensor>,
    training_log: Vec<EpochRecord>,
    stopped_epoch: usize,
    best_epoch: usize,
}

impl CannModel {
    /// Untrained CANN; the zero output layer makes it reproduce the benchmark.
    pub fn initialize(encoding: NnEncoding, arch: NnArchitecture, seed: u64) -> Result<Self> {
        let network = Network::new(&encoding, arch, seed)?;
        Ok(CannModel {
            encoding,
            network,
            training_log: Vec::new(),
            stopped_epoch: 0,
            best_epoch: 0,
        })
    }

    pub fn architecture(&self) -> &NnArchitecture {
        &self.network.arch
    }

    pub fn weights(&self) -> &NnWeights {
        &self.network.weights
    }

    /// Expected counts for `data`, using `benchmark` for the modified exposure.
    pub fn predict(&self, data: &Dataset, benchmark: &GlmModel, exec: Exec) -> Result<Vec<f64>> {
        let modified = benchmark.predict_counts(data)?;
        self.predict_with_exposure(data, &modified, exec)
    }

    pub fn predict_with_exposure(
        &self,
        data: &Dataset,
        modified_exposure: &[f64],
        exec: Exec,
    ) -> Result<Vec<f64>> {
        let x = self.encoding.encode(data)?;
        self.network.predict(&x, modified_exposure, exec)
    }

    /// Embeddings, then `W^(l)`, `b^(l)` per hidden layer, then `w^y`, `b^y`,
    /// then the fixed skip-connection weight, head weight and output bias.
    pub fn export_weights(&self) -> Vec<NamedTensor> {
        let w = &self.network.weights;
        let lay = &w.layout;
        let tensor = |name: String, slot: MatrixSlot, shape: Vec<usize>| NamedTensor {
            name,
            shape,
            trainable: true,
            values: w.slice(slot).to_vec(),
        };
        let mut out = Vec::new();
        for (slot, spec) in lay.embeddings.iter().zip(&self.network.arch.embeddings) {
            out.push(tensor(
                format!("embedding_{}", spec.feature),
                *slot,
                vec![slot.rows, slot.cols],
            ));
        }
        for l in 0..lay.weights.len() {
            let ws = lay.weights[l];
            out.push(tensor(format!("W{}", l + 1), ws, vec![ws.rows, ws.cols]));
            out.push(tensor(format!("b{}", l + 1), lay.biases[l], vec![ws.rows]));
        }
        let wy = lay.output_weights;
        out.push(tensor("w_y".into(), wy, vec![wy.rows, 1]));
        out.push(tensor("b_y".into(), lay.output_bias, vec![1]));
        for (name, shape, value) in [
            ("skip_weight", vec![1, 1], 1.0),
            ("head_weight", vec![1, 1], 1.0),
            ("output_bias", vec![1], 0.0),
        ] {
            out.push(NamedTensor {
                name: name.into(),
                shape,
                trainable: false,
                values: vec![value],
            });
        }
        out
    }

    pub fn import_weights(
        encoding: NnEncoding,
        arch: NnArchitecture,
        tensors: &[NamedTensor],
    ) -> Result<Self> {
        let mut model = Self::initialize(encoding, arch, 0)?;
        let trainable: Vec<&NamedTensor> = tensors.iter().filter(|t| t.trainable).collect();
        let lay = model.network.weights.layout.clone();
        let mut slots: Vec<MatrixSlot> = lay.embeddings.clone();
        for l in 0..lay.weights.len() {
            slots.push(lay.weights[l]);
            slots.push(lay.biases[l]);
        }
        slots.push(lay.output_weights);
        slots.push(lay.output_bias);
        if trainable.len() != slots.len() {
            return Err(Error::Layout(format!(
                "{} trainable tensors, architecture needs {}",
                trainable.len(),
                slots.len()
            )));
        }
        for (t, slot) in trainable.iter().zip(&slots) {
            if t.values.len() != slot.len() {
                return Err(Error::Layout(format!(
                    "tensor '{}' has {} values, expected {}",
                    t.name,
                    t.values.len(),
                    slot.len()
                )));
            }
            model
                .network
                .weights
                .slice_mut(*slot)
                .copy_from_slice(&t.values);
        }
        for t in tensors.iter().filter(|t| !t.trainable) {
            let expected = if t.name == "output_bias" { 0.0 } else { 1.0 };
            if t.values != [expected] {
                return Err(Error::Layout(format!(
                    "fixed tensor '{}' must equal {expected}",
                    t.name
                )));
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_json(
            path,
            &CannFile {
                encoding: self.encoding.clone(),
                architecture: self.network.arch.clone(),
                tensors: self.export_weights(),
                training_log: self.training_log.clone(),
                stopped_epoch: self.stopped_epoch,
                best_epoch: self.best_epoch,
            },
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: CannFile = crate::io::read_json(path)?;
        let mut model = Self::import_weights(file.encoding, file.architecture, &file.tensors)?;
        model.training_log = file.training_log;
        model.stopped_epoch = file.stopped_epoch;
        model.best_epoch = file.best_epoch;
        Ok(model)
    }

    /// Epoch log as CSV `epoch,train_dev,val_dev`.
    pub fn epoch_log_csv(&self) -> String {
        let mut s = String::from("epoch,train_dev,val_dev\n");
        for r in &self.training_log {
            s.push_str(&format!(
                "{},{},{}\n",
                r.epoch,
                crate::io::fmt_f64(r.train_deviance),
                crate::io::fmt_f64(r.validation_deviance)
            ));
        }
        s
    }
}
