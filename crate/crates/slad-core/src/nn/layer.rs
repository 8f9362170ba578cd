use serde::{Deserialize, Serialize};

use super::{Matrix, NnError};
use crate::scalar::Scalar;

/// Negative-side slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    LeakyRelu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Identity => z,
            // max(z, slope*z) selects z for z > 0 and slope*z otherwise,
            // bit-for-bit (including -0.0 and NaN), without the data-value
            // branch that mispredicts on every other element.
            Activation::LeakyRelu => z.max(S::of(LEAKY_SLOPE) * z),
            Activation::Sigmoid => {
                // Evaluate on the non-overflowing side.
                if z >= S::zero() {
                    S::one() / (S::one() + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (S::one() + e)
                }
            }
        }
    }

    /// Derivative as a function of the pre-activation.
    #[inline]
    pub fn derivative<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Identity => S::one(),
            Activation::LeakyRelu => {
                if z > S::zero() {
                    S::one()
                } else {
                    S::of(LEAKY_SLOPE)
                }
            }
            Activation::Sigmoid => {
                let a = self.apply(z);
                a * (S::one() - a)
            }
        }
    }

    /// delta[i] *= derivative(z[i]), written per variant so the backward
    /// hot loop blends instead of branching on data values.
    fn mul_derivative_slice<S: Scalar>(self, z: &[S], delta: &mut [S]) {
        match self {
            // Multiplying by exactly 1 never changes a value.
            Activation::Identity => {}
            Activation::LeakyRelu => {
                let slope = S::of(LEAKY_SLOPE);
                for (d, &zv) in delta.iter_mut().zip(z) {
                    let scaled = *d * slope;
                    *d = if zv > S::zero() { *d } else { scaled };
                }
            }
            Activation::Sigmoid => {
                for (d, &zv) in delta.iter_mut().zip(z) {
                    *d = *d * self.derivative(zv);
                }
            }
        }
    }
}

/// Fully connected layer; weights are (out_dim, in_dim) row-major.
#[derive(Clone, Debug)]
pub struct DenseLayer<S> {
    pub weights: Matrix<S>,
    pub bias: Vec<S>,
    pub activation: Activation,
}

impl<S: Scalar> DenseLayer<S> {
    pub fn new(weights: Matrix<S>, bias: Vec<S>, activation: Activation) -> Result<Self, NnError> {
        if bias.len() != weights.rows() {
            return Err(NnError::DimMismatch(format!(
                "bias length {} does not match output dimension {}",
                bias.len(),
                weights.rows()
            )));
        }
        Ok(DenseLayer {
            weights,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }
}

/// Feed-forward stack of dense layers.
#[derive(Clone, Debug)]
pub struct MlpNet<S> {
    layers: Vec<DenseLayer<S>>,
}

/// Per-layer inputs and pre-activations saved by a forward pass; consumed
/// by `backward`. The recorded shape signature guards against replaying a
/// cache through a different network or batch.
pub struct ForwardCache<S> {
    inputs: Vec<Matrix<S>>,
    preacts: Vec<Matrix<S>>,
}

/// Reusable buffers for a repeated forward/backward cycle. Training loops
/// hit these paths thousands of times per epoch; fresh megabyte
/// allocations per step would otherwise rival the gemm cost.
pub struct Workspace<S> {
    cache: ForwardCache<S>,
    out: Matrix<S>,
    deltas: Vec<Matrix<S>>,
    grads: Vec<LayerGrads<S>>,
}

impl<S: Scalar> Workspace<S> {
    pub fn new() -> Self {
        Workspace {
            cache: ForwardCache {
                inputs: Vec::new(),
                preacts: Vec::new(),
            },
            out: Matrix::zeros(0, 0),
            deltas: Vec::new(),
            grads: Vec::new(),
        }
    }
}

impl<S: Scalar> Default for Workspace<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Parameter gradients for one layer, shaped like the layer itself.
#[derive(Clone, Debug)]
pub struct LayerGrads<S> {
    pub dw: Matrix<S>,
    pub db: Vec<S>,
}

impl<S: Scalar> MlpNet<S> {
    pub fn new(layers: Vec<DenseLayer<S>>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::EmptyInput);
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(NnError::DimMismatch(format!(
                    "layer {} emits {} features but layer {} expects {}",
                    l,
                    pair[0].out_dim(),
                    l + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(MlpNet { layers })
    }

    pub fn layers(&self) -> &[DenseLayer<S>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer<S>] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum()
    }

    fn apply_layer(layer: &DenseLayer<S>, x: &Matrix<S>) -> Matrix<S> {
        let mut z = Matrix::zeros(x.rows(), layer.out_dim());
        Matrix::gemm_into(S::one(), x, false, &layer.weights, true, S::zero(), &mut z);
        for r in 0..z.rows() {
            let row = z.row_mut(r);
            for (v, b) in row.iter_mut().zip(&layer.bias) {
                *v += *b;
            }
        }
        z
    }

    /// Forward pass over a (batch, in_dim) matrix, retaining what backward
    /// needs.
    pub fn forward(&self, batch: &Matrix<S>) -> Result<(Matrix<S>, ForwardCache<S>), NnError> {
        self.check_input(batch)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for layer in &self.layers {
            let z = Self::apply_layer(layer, &x);
            let mut a = z.clone();
            for v in a.data_mut() {
                *v = layer.activation.apply(*v);
            }
            inputs.push(x);
            preacts.push(z);
            x = a;
        }
        Ok((x, ForwardCache { inputs, preacts }))
    }

    /// Forward pass without gradient bookkeeping (scoring hot path).
    pub fn forward_only(&self, batch: &Matrix<S>) -> Result<Matrix<S>, NnError> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        for layer in &self.layers {
            let mut z = Self::apply_layer(layer, &x);
            for v in z.data_mut() {
                *v = layer.activation.apply(*v);
            }
            x = z;
        }
        Ok(x)
    }

    fn check_input(&self, batch: &Matrix<S>) -> Result<(), NnError> {
        if batch.rows() == 0 {
            return Err(NnError::EmptyInput);
        }
        if batch.cols() != self.in_dim() {
            return Err(NnError::DimMismatch(format!(
                "input has {} features, network expects {}",
                batch.cols(),
                self.in_dim()
            )));
        }
        Ok(())
    }

    fn check_cache(&self, cache: &ForwardCache<S>, out_grad: &Matrix<S>) -> Result<usize, NnError> {
        if cache.inputs.len() != self.layers.len() {
            return Err(NnError::StaleCache(format!(
                "cache holds {} layers, network has {}",
                cache.inputs.len(),
                self.layers.len()
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if cache.inputs[l].cols() != layer.in_dim() || cache.preacts[l].cols() != layer.out_dim()
            {
                return Err(NnError::StaleCache(format!(
                    "cache shapes at layer {l} do not match the network"
                )));
            }
        }
        let batch = cache.inputs[0].rows();
        if out_grad.rows() != batch || out_grad.cols() != self.out_dim() {
            return Err(NnError::DimMismatch(format!(
                "output gradient is {}x{}, expected {}x{}",
                out_grad.rows(),
                out_grad.cols(),
                batch,
                self.out_dim()
            )));
        }
        Ok(batch)
    }

    /// Backpropagate a loss gradient with respect to the network output.
    /// `out_grad` is (batch, out_dim); returns per-layer parameter grads.
    pub fn backward(
        &self,
        cache: &ForwardCache<S>,
        out_grad: &Matrix<S>,
    ) -> Result<Vec<LayerGrads<S>>, NnError> {
        self.check_cache(cache, out_grad)?;

        let mut grads: Vec<LayerGrads<S>> = self
            .layers
            .iter()
            .map(|l| LayerGrads {
                dw: Matrix::zeros(l.out_dim(), l.in_dim()),
                db: vec![S::zero(); l.out_dim()],
            })
            .collect();

        // delta = dL/dz for the current layer.
        let mut delta = out_grad.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let z = &cache.preacts[l];
            layer.activation.mul_derivative_slice(z.data(), delta.data_mut());
            Matrix::gemm_into(
                S::one(),
                &delta,
                true,
                &cache.inputs[l],
                false,
                S::zero(),
                &mut grads[l].dw,
            );
            for r in 0..delta.rows() {
                for (acc, &d) in grads[l].db.iter_mut().zip(delta.row(r)) {
                    *acc += d;
                }
            }
            if l > 0 {
                delta = Matrix::matmul(&delta, false, &layer.weights, false);
            }
        }
        Ok(grads)
    }

    /// `forward`, but reusing the workspace's buffers. Arithmetic and
    /// outputs are bit-identical to the allocating path.
    pub fn forward_ws<'w>(
        &self,
        batch: &Matrix<S>,
        ws: &'w mut Workspace<S>,
    ) -> Result<&'w Matrix<S>, NnError> {
        self.check_input(batch)?;
        let n_layers = self.layers.len();
        let b = batch.rows();
        let Workspace { cache, out, .. } = ws;
        if cache.inputs.len() != n_layers {
            cache.inputs = (0..n_layers).map(|_| Matrix::zeros(0, 0)).collect();
            cache.preacts = (0..n_layers).map(|_| Matrix::zeros(0, 0)).collect();
        }
        let ForwardCache { inputs, preacts } = cache;
        inputs[0].resize(b, batch.cols());
        inputs[0].data_mut().copy_from_slice(batch.data());
        for (l, layer) in self.layers.iter().enumerate() {
            preacts[l].resize(b, layer.out_dim());
            Matrix::gemm_into(
                S::one(),
                &inputs[l],
                false,
                &layer.weights,
                true,
                S::zero(),
                &mut preacts[l],
            );
            for r in 0..b {
                for (v, bias) in preacts[l].row_mut(r).iter_mut().zip(&layer.bias) {
                    *v = *v + *bias;
                }
            }
            let target: &mut Matrix<S> = if l + 1 < n_layers {
                &mut inputs[l + 1]
            } else {
                &mut *out
            };
            target.resize(b, layer.out_dim());
            for (t, &z) in target.data_mut().iter_mut().zip(preacts[l].data()) {
                *t = layer.activation.apply(z);
            }
        }
        Ok(&*out)
    }

    /// `backward` against the cache left by the last `forward_ws` on this
    /// workspace, reusing its gradient buffers. Bit-identical results.
    pub fn backward_ws<'w>(
        &self,
        out_grad: &Matrix<S>,
        ws: &'w mut Workspace<S>,
    ) -> Result<&'w [LayerGrads<S>], NnError> {
        let b = self.check_cache(&ws.cache, out_grad)?;
        let n_layers = self.layers.len();
        let Workspace {
            cache,
            deltas,
            grads,
            ..
        } = ws;
        if grads.len() != n_layers {
            *grads = self
                .layers
                .iter()
                .map(|l| LayerGrads {
                    dw: Matrix::zeros(l.out_dim(), l.in_dim()),
                    db: vec![S::zero(); l.out_dim()],
                })
                .collect();
        }
        if deltas.len() != n_layers {
            *deltas = (0..n_layers).map(|_| Matrix::zeros(0, 0)).collect();
        }
        for (g, layer) in grads.iter_mut().zip(&self.layers) {
            g.dw.resize(layer.out_dim(), layer.in_dim());
            g.db.clear();
            g.db.resize(layer.out_dim(), S::zero());
        }
        deltas[n_layers - 1].resize(b, self.out_dim());
        deltas[n_layers - 1]
            .data_mut()
            .copy_from_slice(out_grad.data());
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let z = &cache.preacts[l];
            layer.activation.mul_derivative_slice(z.data(), deltas[l].data_mut());
            Matrix::gemm_into(
                S::one(),
                &deltas[l],
                true,
                &cache.inputs[l],
                false,
                S::zero(),
                &mut grads[l].dw,
            );
            for r in 0..b {
                for (acc, &d) in grads[l].db.iter_mut().zip(deltas[l].row(r)) {
                    *acc += d;
                }
            }
            if l > 0 {
                let (below, level) = deltas.split_at_mut(l);
                below[l - 1].resize(b, layer.in_dim());
                Matrix::gemm_into(
                    S::one(),
                    &level[0],
                    false,
                    &layer.weights,
                    false,
                    S::zero(),
                    &mut below[l - 1],
                );
            }
        }
        Ok(&*grads)
    }
}
