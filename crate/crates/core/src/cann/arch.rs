use serde::{Deserialize, Serialize};

use crate::data::{Encoding, NnEncoding};
use crate::error::{Error, Result};

pub const DEFAULT_LRELU_ALPHA: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Activation {
    /// `max(w, α·w)`
    Lrelu {
        alpha: f64,
    },
    Sigmoid,
    Tanh,
}

impl Default for Activation {
    fn default() -> Self {
        Activation::Lrelu {
            alpha: DEFAULT_LRELU_ALPHA,
        }
    }
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Lrelu { alpha } => {
                if x >= 0.0 {
                    x
                } else {
                    alpha * x
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Lrelu { alpha } => {
                if x >= 0.0 {
                    1.0
                } else {
                    alpha
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub fn is_one_lipschitz(self) -> bool {
        match self {
            Activation::Lrelu { alpha } => alpha.abs() <= 1.0,
            Activation::Sigmoid | Activation::Tanh => true,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Lrelu { .. } => "lrelu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub feature: String,
    pub categories: usize,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NnArchitecture {
    pub hidden_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub embeddings: Vec<EmbeddingSpec>,
    pub dropout_rate: f64,
}

impl NnArchitecture {
    /// One embedding of dimension `embedding_dim` per embedding-input column of
    /// the encoding, and the same activation in every hidden layer.
    pub fn for_encoding(
        encoding: &NnEncoding,
        hidden_sizes: &[usize],
        activation: Activation,
        embedding_dim: usize,
        dropout_rate: f64,
    ) -> Result<Self> {
        let arch = NnArchitecture {
            hidden_sizes: hidden_sizes.to_vec(),
            activations: vec![activation; hidden_sizes.len()],
            embeddings: encoding
                .embedding_inputs()
                .into_iter()
                .map(|(feature, categories)| EmbeddingSpec {
                    feature,
                    categories,
                    dim: embedding_dim,
                })
                .collect(),
            dropout_rate,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Default network: hidden layers 20-15-10, LReLU(0.3), 2-dimensional
    /// embeddings, 5% dropout.
    pub fn default_for(encoding: &NnEncoding) -> Result<Self> {
        Self::for_encoding(encoding, &[20, 15, 10], Activation::default(), 2, 0.05)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::InvalidArgument(
                "need at least one non-empty hidden layer".into(),
            ));
        }
        if self.activations.len() != self.hidden_sizes.len() {
            return Err(Error::InvalidArgument(
                "one activation per hidden layer required".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if let Some(e) = self
            .embeddings
            .iter()
            .find(|e| e.dim == 0 || e.categories < 2)
        {
            return Err(Error::InvalidArgument(format!(
                "invalid embedding for '{}'",
                e.feature
            )));
        }
        Ok(())
    }
}

/// Where each first-layer input neuron comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputNeuron {
    pub feature: String,
    pub label: String,
}

/// Maps encoded columns onto the network's input neurons: dense columns in
/// encoding order followed by the outputs of each embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct InputLayout {
    pub encoded_width: usize,
    pub dense: Vec<usize>,
    pub embedding_columns: Vec<usize>,
    pub neurons: Vec<InputNeuron>,
}

impl InputLayout {
    pub fn new(encoding: &NnEncoding, arch: &NnArchitecture) -> Result<Self> {
        let mut dense = Vec::new();
        let mut embedding_columns = Vec::new();
        let mut neurons = Vec::new();
        for (j, col) in encoding.columns.iter().enumerate() {
            match &col.encoding {
                Encoding::EmbeddingIndex { cardinality } => {
                    arch.embeddings
                        .get(embedding_columns.len())
                        .filter(|s| s.feature == col.source && s.categories == *cardinality)
                        .ok_or_else(|| {
                            Error::Layout(format!("no matching embedding for '{}'", col.source))
                        })?;
                    embedding_columns.push(j);
                }
                Encoding::ScaledNumeric { .. } => {
                    dense.push(j);
                    neurons.push(InputNeuron {
                        feature: col.source.clone(),
                        label: col.source.clone(),
                    });
                }
                Encoding::OneHot { label, .. } => {
                    dense.push(j);
                    neurons.push(InputNeuron {
                        feature: col.source.clone(),
                        label: format!("{}={label}", col.source),
                    });
                }
            }
        }
        if embedding_columns.len() != arch.embeddings.len() {
            return Err(Error::Layout(format!(
                "architecture has {} embeddings, encoding {}",
                arch.embeddings.len(),
                embedding_columns.len()
            )));
        }
        for e in &arch.embeddings {
            for d in 0..e.dim {
                neurons.push(InputNeuron {
                    feature: e.feature.clone(),
                    label: format!("{}[emb{d}]", e.feature),
                });
            }
        }
        Ok(InputLayout {
            encoded_width: encoding.width(),
            dense,
            embedding_columns,
            neurons,
        })
    }

    /// Width of the first-layer input `q₀`.
    pub fn input_width(&self) -> usize {
        self.neurons.len()
    }
}
