//! Feed-forward network with embeddings and its CANN output
//! `v^GLM · exp(λ^NN(x))`, stored as one flat parameter vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arch::{InputLayout, NnArchitecture};
use crate::data::{EncodedMatrix, NnEncoding};
use crate::error::{Error, Result};
use crate::exec::{map_chunks, Exec};
use crate::poisson::unit_deviance;

/// Rows per gradient work unit inside a mini-batch.
pub const BATCH_CHUNK: usize = 250;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixSlot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl MatrixSlot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    /// `k × g` per embedding
    pub embeddings: Vec<MatrixSlot>,
    /// `W^(l)`: `q_l × q_{l−1}`
    pub weights: Vec<MatrixSlot>,
    /// `b^(l)`: `q_l × 1`
    pub biases: Vec<MatrixSlot>,
    /// `w^y`: `q_d × 1`
    pub output_weights: MatrixSlot,
    /// `b^y`: `1 × 1`
    pub output_bias: MatrixSlot,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(arch: &NnArchitecture, input_width: usize) -> Self {
        let mut offset = 0;
        let mut slot = |rows: usize, cols: usize| {
            let s = MatrixSlot { offset, rows, cols };
            offset += rows * cols;
            s
        };
        let embeddings = arch
            .embeddings
            .iter()
            .map(|e| slot(e.categories, e.dim))
            .collect();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut prev = input_width;
        for &q in &arch.hidden_sizes {
            weights.push(slot(q, prev));
            biases.push(slot(q, 1));
            prev = q;
        }
        let output_weights = slot(prev, 1);
        let output_bias = slot(1, 1);
        ParamLayout {
            embeddings,
            weights,
            biases,
            output_weights,
            output_bias,
            total: offset,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NnWeights {
    pub layout: ParamLayout,
    pub params: Vec<f64>,
}

impl NnWeights {
    /// Glorot-uniform hidden weights, zero biases, embeddings uniform in
    /// `[−0.05, 0.05]`, and zero output weight and bias.
    pub fn initialize(arch: &NnArchitecture, input_width: usize, seed: u64) -> Self {
        let layout = ParamLayout::new(arch, input_width);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for e in &layout.embeddings {
            for p in &mut params[e.range()] {
                *p = rng.random_range(-0.05..=0.05);
            }
        }
        for w in &layout.weights {
            let limit = (6.0 / (w.rows + w.cols) as f64).sqrt();
            for p in &mut params[w.range()] {
                *p = rng.random_range(-limit..=limit);
            }
        }
        NnWeights { layout, params }
    }

    pub fn slice(&self, slot: MatrixSlot) -> &[f64] {
        &self.params[slot.range()]
    }

    pub fn slice_mut(&mut self, slot: MatrixSlot) -> &mut [f64] {
        &mut self.params[slot.range()]
    }

    pub fn embedding(&self, e: usize) -> &[f64] {
        self.slice(self.layout.embeddings[e])
    }

    pub fn layer_weights(&self, l: usize) -> &[f64] {
        self.slice(self.layout.weights[l])
    }

    pub fn layer_bias(&self, l: usize) -> &[f64] {
        self.slice(self.layout.biases[l])
    }

    pub fn output_weights(&self) -> &[f64] {
        self.slice(self.layout.output_weights)
    }

    pub fn output_bias(&self) -> f64 {
        self.params[self.layout.output_bias.offset]
    }

    pub fn depth(&self) -> usize {
        self.layout.weights.len()
    }

    pub fn input_width(&self) -> usize {
        self.layout.weights[0].cols
    }
}

/// Per-thread buffers for one forward/backward pass.
struct Scratch {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    /// activations before the dropout mask
    raw: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    mask: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
    input_delta: Vec<f64>,
}

impl Scratch {
    fn new(net: &Network) -> Self {
        let sizes = &net.arch.hidden_sizes;
        Scratch {
            input: vec![0.0; net.layout.input_width()],
            pre: sizes.iter().map(|&q| vec![0.0; q]).collect(),
            raw: sizes.iter().map(|&q| vec![0.0; q]).collect(),
            post: sizes.iter().map(|&q| vec![0.0; q]).collect(),
            mask: sizes.iter().map(|&q| vec![1.0; q]).collect(),
            delta: sizes.iter().map(|&q| vec![0.0; q]).collect(),
            input_delta: vec![0.0; net.layout.input_width()],
        }
    }
}

fn mix_seed(parts: &[u64]) -> u64 {
    // splitmix64 over the parts
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// Deterministic seed derived from a list of integers.
pub fn derive_seed(parts: &[u64]) -> u64 {
    mix_seed(parts)
}

/// The network half of a CANN together with its input layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub arch: NnArchitecture,
    pub layout: InputLayout,
    pub weights: NnWeights,
}

impl Network {
    pub fn new(encoding: &NnEncoding, arch: NnArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layout = InputLayout::new(encoding, &arch)?;
        let weights = NnWeights::initialize(&arch, layout.input_width(), seed);
        Ok(Network {
            arch,
            layout,
            weights,
        })
    }

    pub fn with_weights(
        encoding: &NnEncoding,
        arch: NnArchitecture,
        weights: NnWeights,
    ) -> Result<Self> {
        arch.validate()?;
        let layout = InputLayout::new(encoding, &arch)?;
        if weights.layout != ParamLayout::new(&arch, layout.input_width()) {
            return Err(Error::Layout(
                "weights do not match the architecture".into(),
            ));
        }
        Ok(Network {
            arch,
            layout,
            weights,
        })
    }

    fn check_inputs(&self, inputs: &EncodedMatrix) -> Result<()> {
        if inputs.width() != self.layout.encoded_width {
            return Err(Error::Layout(format!(
                "encoded width {} but network expects {}",
                inputs.width(),
                self.layout.encoded_width
            )));
        }
        Ok(())
    }

    fn load_input(&self, row: &[f64], s: &mut Scratch) {
        let mut k = 0;
        for &j in &self.layout.dense {
            s.input[k] = row[j];
            k += 1;
        }
        for (e, &j) in self.layout.embedding_columns.iter().enumerate() {
            let slot = self.weights.layout.embeddings[e];
            let cat = row[j] as usize;
            let start = slot.offset + cat * slot.cols;
            s.input[k..k + slot.cols]
                .copy_from_slice(&self.weights.params[start..start + slot.cols]);
            k += slot.cols;
        }
    }

    /// Network head `λ^NN` for one encoded row; draws dropout masks when `rng` is given.
    fn forward_row(&self, row: &[f64], s: &mut Scratch, rng: Option<&mut ChaCha8Rng>) -> f64 {
        self.load_input(row, s);
        let w = &self.weights;
        let keep = 1.0 - self.arch.dropout_rate;
        let mut rng = rng;
        for l in 0..w.depth() {
            let slot = w.layout.weights[l];
            let wm = &w.params[slot.range()];
            let b = w.layer_bias(l);
            let act = self.arch.activations[l];
            let prev: &[f64] = if l == 0 { &s.input } else { &s.post[l - 1] };
            let pre = &mut s.pre[l];
            for r in 0..slot.rows {
                let wr = &wm[r * slot.cols..(r + 1) * slot.cols];
                pre[r] = b[r] + wr.iter().zip(prev).map(|(a, x)| a * x).sum::<f64>();
            }
            let mask = &mut s.mask[l];
            match rng.as_deref_mut() {
                Some(g) if self.arch.dropout_rate > 0.0 => {
                    for m in mask.iter_mut() {
                        *m = if g.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        };
                    }
                }
                _ => mask.iter_mut().for_each(|m| *m = 1.0),
            }
            for r in 0..slot.rows {
                let y = act.apply(s.pre[l][r]);
                s.raw[l][r] = y;
                s.post[l][r] = y * s.mask[l][r];
            }
        }
        let last = &s.post[w.depth() - 1];
        w.output_bias()
            + w.output_weights()
                .iter()
                .zip(last)
                .map(|(a, z)| a * z)
                .sum::<f64>()
    }

    /// Adds `d_out · ∂λ^NN/∂θ` to `grad`, using the buffers of the last forward pass.
    fn backward_row(&self, row: &[f64], d_out: f64, s: &mut Scratch, grad: &mut [f64]) {
        let w = &self.weights;
        let lay = &w.layout;
        let d = w.depth();
        grad[lay.output_bias.offset] += d_out;
        {
            let gw = &mut grad[lay.output_weights.range()];
            for (g, z) in gw.iter_mut().zip(&s.post[d - 1]) {
                *g += d_out * z;
            }
        }
        // δ at the last hidden layer, w.r.t. pre-activations
        {
            let wy = w.output_weights();
            let act = self.arch.activations[d - 1];
            for (r, w_r) in wy.iter().enumerate() {
                let m = s.mask[d - 1][r];
                s.delta[d - 1][r] =
                    d_out * w_r * m * act.derivative(s.pre[d - 1][r], s.raw[d - 1][r]);
            }
        }
        for l in (0..d).rev() {
            let slot = lay.weights[l];
            let wm = &w.params[slot.range()];
            // weight and bias gradients
            {
                let prev: &[f64] = if l == 0 { &s.input } else { &s.post[l - 1] };
                let gw = &mut grad[slot.range()];
                for r in 0..slot.rows {
                    let dr = s.delta[l][r];
                    if dr == 0.0 {
                        continue;
                    }
                    let gr = &mut gw[r * slot.cols..(r + 1) * slot.cols];
                    for (g, x) in gr.iter_mut().zip(prev) {
                        *g += dr * x;
                    }
                }
                let gb = &mut grad[lay.biases[l].range()];
                for (g, dr) in gb.iter_mut().zip(&s.delta[l]) {
                    *g += dr;
                }
            }
            // propagate δ to the layer below
            let (below, here) = s.delta.split_at_mut(l);
            let target: &mut [f64] = if l == 0 {
                &mut s.input_delta
            } else {
                &mut below[l - 1]
            };
            target.iter_mut().for_each(|t| *t = 0.0);
            for (r, &dr) in here[0].iter().enumerate() {
                if dr == 0.0 {
                    continue;
                }
                let wr = &wm[r * slot.cols..(r + 1) * slot.cols];
                for (t, a) in target.iter_mut().zip(wr) {
                    *t += dr * a;
                }
            }
            if l > 0 {
                let act = self.arch.activations[l - 1];
                for r in 0..s.delta[l - 1].len() {
                    let m = s.mask[l - 1][r];
                    s.delta[l - 1][r] *= m * act.derivative(s.pre[l - 1][r], s.raw[l - 1][r]);
                }
            }
        }
        // embedding rows receive the input gradient of their output neurons
        let mut k = self.layout.dense.len();
        for (e, &j) in self.layout.embedding_columns.iter().enumerate() {
            let slot = lay.embeddings[e];
            let cat = row[j] as usize;
            let start = slot.offset + cat * slot.cols;
            for c in 0..slot.cols {
                grad[start + c] += s.input_delta[k + c];
            }
            k += slot.cols;
        }
    }

    /// Network head `λ^NN` for every row, without dropout.
    pub fn head(&self, inputs: &EncodedMatrix, exec: Exec) -> Result<Vec<f64>> {
        self.check_inputs(inputs)?;
        let parts = map_chunks(exec, inputs.n_rows, 4 * BATCH_CHUNK, |rows| {
            let mut s = Scratch::new(self);
            rows.map(|i| self.forward_row(inputs.row(i), &mut s, None))
                .collect::<Vec<_>>()
        });
        Ok(parts.into_iter().flatten().collect())
    }

    /// CANN expected counts `v^GLM_i · exp(λ^NN(x_i))`.
    pub fn predict(
        &self,
        inputs: &EncodedMatrix,
        modified_exposure: &[f64],
        exec: Exec,
    ) -> Result<Vec<f64>> {
        if modified_exposure.len() != inputs.n_rows {
            return Err(Error::Layout("modified exposure length differs".into()));
        }
        Ok(self
            .head(inputs, exec)?
            .into_iter()
            .zip(modified_exposure)
            .map(|(h, v)| v * h.exp())
            .collect())
    }

    /// Mean Poisson deviance over `rows` and its gradient w.r.t. every
    /// parameter. With `dropout_seed`, masks are drawn per fixed-size chunk of
    /// rows from a stream derived from the seed and chunk index.
    pub fn loss_and_gradient(
        &self,
        inputs: &EncodedMatrix,
        rows: &[usize],
        claims: &[u32],
        modified_exposure: &[f64],
        dropout_seed: Option<u64>,
        exec: Exec,
    ) -> Result<(f64, Vec<f64>)> {
        self.check_inputs(inputs)?;
        let total = self.weights.layout.total;
        if rows.is_empty() {
            return Ok((0.0, vec![0.0; total]));
        }
        let scale = 1.0 / rows.len() as f64;
        let parts = map_chunks(exec, rows.len(), BATCH_CHUNK, |range| {
            let mut s = Scratch::new(self);
            let mut grad = vec![0.0; total];
            let mut rng = dropout_seed
                .map(|seed| ChaCha8Rng::seed_from_u64(mix_seed(&[seed, range.start as u64])));
            let mut dev = 0.0;
            for &i in &rows[range] {
                let row = inputs.row(i);
                let h = self.forward_row(row, &mut s, rng.as_mut());
                let mu = modified_exposure[i] * h.exp();
                let y = claims[i] as f64;
                dev += unit_deviance(y, mu);
                self.backward_row(row, 2.0 * (mu - y) * scale, &mut s, &mut grad);
            }
            (dev, grad)
        });
        let mut grad = vec![0.0; total];
        let mut dev = 0.0;
        for (d, g) in parts {
            dev += d;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        Ok((dev * scale, grad))
    }
}
