//! Feed-forward descriptor encoder with analytic gradients.
//!
//! Hidden layers apply `tanh`; the final layer is linear followed by L2
//! normalization, so every output is a unit-norm [`Descriptor`]. The backward
//! pass differentiates the whole chain, including the normalization Jacobian
//! `(I - y y^T) / n`.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::descriptor::{dot, norm_slice, Descriptor, ImageRecord, Raster};
use crate::math;

/// Norms below this are padded before dividing so the forward pass stays
/// finite for arbitrary parameters.
pub const NORM_EPS: f64 = 1e-12;

/// Default pooling grid for raster featurization (rows, cols); the flattened
/// grid is the encoder input.
pub const DEFAULT_GRID: (usize, usize) = (16, 64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderError {
    /// Shape list shorter than two entries or containing a zero width.
    BadShape,
    /// Input or gradient length does not match the parameter shapes.
    ShapeMismatch { expected: usize, got: usize },
    /// A value became NaN or infinite.
    NonFinite,
    /// Record carries neither features nor pixels.
    MissingInput,
}

impl fmt::Display for EncoderError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EncoderError::BadShape => {
                write!(f, "encoder shape needs at least input and output widths, all nonzero")
            }
            EncoderError::ShapeMismatch { expected, got } => {
                write!(f, "length {got} does not match expected {expected}")
            }
            EncoderError::NonFinite => write!(f, "non-finite value in encoder computation"),
            EncoderError::MissingInput => {
                write!(f, "record has neither features nor pixels to encode")
            }
        }
    }
}

impl core::error::Error for EncoderError {}

/// One dense layer: `rows x cols` row-major weights plus `rows` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Layer {
    pub fn new(rows: usize, cols: usize, weights: Vec<f64>, biases: Vec<f64>) -> Result<Layer, EncoderError> {
        if rows == 0 || cols == 0 {
            return Err(EncoderError::BadShape);
        }
        if weights.len() != rows * cols {
            return Err(EncoderError::ShapeMismatch { expected: rows * cols, got: weights.len() });
        }
        if biases.len() != rows {
            return Err(EncoderError::ShapeMismatch { expected: rows, got: biases.len() });
        }
        Ok(Layer { rows, cols, weights, biases })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    /// `out = W x + b`.
    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.rows {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            out.push(dot(row, x) + self.biases[r]);
        }
    }
}

/// Full parameter set of the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    layers: Vec<Layer>,
}

impl EncoderParams {
    /// Assemble from explicit layers, checking that widths chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<EncoderParams, EncoderError> {
        if layers.is_empty() {
            return Err(EncoderError::BadShape);
        }
        for pair in layers.windows(2) {
            if pair[1].cols != pair[0].rows {
                return Err(EncoderError::ShapeMismatch {
                    expected: pair[0].rows,
                    got: pair[1].cols,
                });
            }
        }
        Ok(EncoderParams { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Widths as `[input, hidden.., output]`.
    pub fn shape(&self) -> Vec<usize> {
        let mut shape = vec![self.layers[0].cols];
        shape.extend(self.layers.iter().map(|l| l.rows));
        shape
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").rows
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|x| x.is_finite()))
    }
}

/// Gradients with the same layout as [`EncoderParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub layers: Vec<LayerGradient>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl ParamGradients {
    fn zeros_like(params: &EncoderParams) -> ParamGradients {
        ParamGradients {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }
}

/// Initialize parameters for the widths `shape = [input, hidden.., output]`.
///
/// Weights draw from a uniform distribution over `(-1/sqrt(fan_in),
/// 1/sqrt(fan_in))`, biases start at zero. Draws happen layer by layer in
/// row-major order, so a seed pins every parameter.
pub fn encoder_init(shape: &[usize], seed: u64) -> Result<EncoderParams, EncoderError> {
    if shape.len() < 2 || shape.contains(&0) {
        return Err(EncoderError::BadShape);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(shape.len() - 1);
    for pair in shape.windows(2) {
        let (cols, rows) = (pair[0], pair[1]);
        let bound = 1.0 / math::sqrt(cols as f64);
        let weights = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        layers.push(Layer { rows, cols, weights, biases: vec![0.0; rows] });
    }
    Ok(EncoderParams { layers })
}

struct ForwardTrace {
    /// Activations entering each layer: `[input, h_1, .., h_{L-1}]`.
    inputs: Vec<Vec<f64>>,
    /// Effective norm used as divisor (padded when degenerate).
    norm: f64,
    output: Vec<f64>,
}

fn forward_trace(params: &EncoderParams, input: &[f64]) -> Result<ForwardTrace, EncoderError> {
    if input.len() != params.input_dim() {
        return Err(EncoderError::ShapeMismatch { expected: params.input_dim(), got: input.len() });
    }
    let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(params.layers.len());
    inputs.push(input.to_vec());
    let mut buf = Vec::new();
    let last = params.layers.len() - 1;
    for (li, layer) in params.layers.iter().enumerate() {
        layer.affine(inputs.last().expect("nonempty"), &mut buf);
        if li < last {
            inputs.push(buf.iter().map(|&z| math::tanh(z)).collect());
        }
    }
    let mut norm = norm_slice(&buf);
    if !norm.is_finite() {
        return Err(EncoderError::NonFinite);
    }
    if norm < NORM_EPS {
        norm += NORM_EPS;
    }
    let output: Vec<f64> = buf.iter().map(|&v| v / norm).collect();
    Ok(ForwardTrace { inputs, norm, output })
}

/// Encode one feature vector to a unit-norm descriptor.
pub fn encoder_forward(params: &EncoderParams, input: &[f64]) -> Result<Descriptor, EncoderError> {
    Ok(Descriptor::from_unit(forward_trace(params, input)?.output))
}

/// Gradient of `sum_i upstream_i . output(input_i)` with respect to every
/// weight and bias; contributions over the batch add up.
pub fn encoder_backward(
    params: &EncoderParams,
    inputs: &[Vec<f64>],
    upstream: &[Vec<f64>],
) -> Result<ParamGradients, EncoderError> {
    if inputs.len() != upstream.len() {
        return Err(EncoderError::ShapeMismatch { expected: inputs.len(), got: upstream.len() });
    }
    let mut grads = ParamGradients::zeros_like(params);
    let out_dim = params.output_dim();
    for (input, up) in inputs.iter().zip(upstream) {
        if up.len() != out_dim {
            return Err(EncoderError::ShapeMismatch { expected: out_dim, got: up.len() });
        }
        let trace = forward_trace(params, input)?;
        // Through y = v / n: g_v = (g - (g . y) y) / n.
        let gy_dot_y = dot(up, &trace.output);
        let mut g: Vec<f64> = up
            .iter()
            .zip(&trace.output)
            .map(|(&gu, &y)| (gu - gy_dot_y * y) / trace.norm)
            .collect();
        for li in (0..params.layers.len()).rev() {
            let layer = &params.layers[li];
            let x = &trace.inputs[li];
            let lg = &mut grads.layers[li];
            for (r, &gz) in g.iter().enumerate() {
                lg.biases[r] += gz;
                let wrow = &mut lg.weights[r * layer.cols..(r + 1) * layer.cols];
                for (w, &xk) in wrow.iter_mut().zip(x.iter()) {
                    *w += gz * xk;
                }
            }
            if li > 0 {
                // Back through the weights, then the tanh of the layer below.
                let mut gx = vec![0.0; layer.cols];
                for (r, &gz) in g.iter().enumerate() {
                    let wrow = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                    for (gxk, &w) in gx.iter_mut().zip(wrow) {
                        *gxk += gz * w;
                    }
                }
                let h = &trace.inputs[li];
                g = gx.iter().zip(h).map(|(&gk, &hk)| gk * (1.0 - hk * hk)).collect();
            }
        }
    }
    Ok(grads)
}

/// One plain gradient-descent update: `theta -= lr * g`.
pub fn sgd_step(
    params: &mut EncoderParams,
    grads: &ParamGradients,
    learning_rate: f64,
) -> Result<(), EncoderError> {
    if !learning_rate.is_finite() || learning_rate < 0.0 {
        return Err(EncoderError::NonFinite);
    }
    if grads.layers.len() != params.layers.len() {
        return Err(EncoderError::ShapeMismatch {
            expected: params.layers.len(),
            got: grads.layers.len(),
        });
    }
    for (layer, lg) in params.layers.iter_mut().zip(&grads.layers) {
        if lg.weights.len() != layer.weights.len() || lg.biases.len() != layer.biases.len() {
            return Err(EncoderError::ShapeMismatch {
                expected: layer.weights.len(),
                got: lg.weights.len(),
            });
        }
        for (w, &g) in layer.weights.iter_mut().zip(&lg.weights) {
            *w -= learning_rate * g;
        }
        for (b, &g) in layer.biases.iter_mut().zip(&lg.biases) {
            *b -= learning_rate * g;
        }
    }
    Ok(())
}

/// Average-pool a raster onto `grid_rows x grid_cols` and scale intensities
/// to `[0, 1]`, flattened row-major. Cells cover proportional pixel blocks;
/// when the raster is smaller than the grid a cell samples its nearest pixel.
pub fn featurize(raster: &Raster, grid_rows: usize, grid_cols: usize) -> Vec<f64> {
    let (rows, cols) = (raster.rows(), raster.cols());
    let mut features = Vec::with_capacity(grid_rows * grid_cols);
    for gr in 0..grid_rows {
        // r0 < rows and r0 + 1 <= rows hold because gr < grid_rows, so every
        // cell covers at least one pixel even when the grid is finer than the
        // raster.
        let r0 = gr * rows / grid_rows;
        let r1 = ((gr + 1) * rows / grid_rows).max(r0 + 1);
        for gc in 0..grid_cols {
            let c0 = gc * cols / grid_cols;
            let c1 = ((gc + 1) * cols / grid_cols).max(c0 + 1);
            let mut sum = 0.0;
            let mut count = 0.0;
            for r in r0..r1 {
                for c in c0..c1 {
                    sum += raster.get(r, c) as f64;
                    count += 1.0;
                }
            }
            features.push(sum / (count * 255.0));
        }
    }
    features
}

/// Input vector for a record: stored features if present, otherwise the
/// featurized raster.
pub fn input_features(
    record: &ImageRecord,
    grid: (usize, usize),
) -> Result<Vec<f64>, EncoderError> {
    if let Some(f) = &record.features {
        return Ok(f.clone());
    }
    if let Some(px) = &record.pixels {
        return Ok(featurize(px, grid.0, grid.1));
    }
    Err(EncoderError::MissingInput)
}
