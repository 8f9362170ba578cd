use super::{LayerGrads, Matrix, MlpNet, NnError};
use crate::scalar::Scalar;

/// Adam with bias correction; first/second moments mirror the network's
/// parameter shapes.
#[derive(Clone, Debug)]
pub struct AdamState<S> {
    t: u64,
    m: Vec<LayerGrads<S>>,
    v: Vec<LayerGrads<S>>,
    beta1: S,
    beta2: S,
    eps: S,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(net: &MlpNet<S>) -> Self {
        Self::with_hyperparams(net, S::of(0.9), S::of(0.999), S::of(1e-8))
    }

    pub fn with_hyperparams(net: &MlpNet<S>, beta1: S, beta2: S, eps: S) -> Self {
        let zeros = |net: &MlpNet<S>| {
            net.layers()
                .iter()
                .map(|l| LayerGrads {
                    dw: Matrix::zeros(l.out_dim(), l.in_dim()),
                    db: vec![S::zero(); l.out_dim()],
                })
                .collect::<Vec<_>>()
        };
        AdamState {
            t: 0,
            m: zeros(net),
            v: zeros(net),
            beta1,
            beta2,
            eps,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over all parameters. Rejects non-finite gradients with a
    /// diagnostic naming the offending layer.
    pub fn step(
        &mut self,
        net: &mut MlpNet<S>,
        grads: &[LayerGrads<S>],
        lr: S,
    ) -> Result<(), NnError> {
        if grads.len() != self.m.len() {
            return Err(NnError::DimMismatch(format!(
                "gradient set covers {} layers, optimizer tracks {}",
                grads.len(),
                self.m.len()
            )));
        }
        for (l, g) in grads.iter().enumerate() {
            if !g.dw.is_finite() || g.db.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFinite(format!(
                    "gradient at layer {l} is not finite"
                )));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = S::one() - self.beta1.powi(t);
        let bc2 = S::one() - self.beta2.powi(t);
        let one = S::one();
        for (l, g) in grads.iter().enumerate() {
            let layer = &mut net.layers_mut()[l];
            let (mw, vw) = (self.m[l].dw.data_mut(), self.v[l].dw.data_mut());
            for (i, w) in layer.weights.data_mut().iter_mut().enumerate() {
                let gi = g.dw.data()[i];
                mw[i] = self.beta1 * mw[i] + (one - self.beta1) * gi;
                vw[i] = self.beta2 * vw[i] + (one - self.beta2) * gi * gi;
                *w = *w - lr * (mw[i] / bc1) / ((vw[i] / bc2).sqrt() + self.eps);
            }
            let (mb, vb) = (&mut self.m[l].db, &mut self.v[l].db);
            for (i, b) in layer.bias.iter_mut().enumerate() {
                let gi = g.db[i];
                mb[i] = self.beta1 * mb[i] + (one - self.beta1) * gi;
                vb[i] = self.beta2 * vb[i] + (one - self.beta2) * gi * gi;
                *b = *b - lr * (mb[i] / bc1) / ((vb[i] / bc2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseLayer};

    fn scalar_net(w: f64) -> MlpNet<f64> {
        MlpNet::new(vec![DenseLayer::new(
            Matrix::from_vec(1, 1, vec![w]),
            vec![0.0],
            Activation::Identity,
        )
        .unwrap()])
        .unwrap()
    }

    #[test]
    fn zero_gradient_on_fresh_state_leaves_params_unchanged() {
        // 0/(sqrt(0)+eps) must stay 0
        let mut net = scalar_net(0.37);
        let mut adam = AdamState::new(&net);
        let grads = vec![LayerGrads {
            dw: Matrix::zeros(1, 1),
            db: vec![0.0],
        }];
        adam.step(&mut net, &grads, 0.001).unwrap();
        assert_eq!(net.layers()[0].weights.get(0, 0), 0.37);
        assert_eq!(net.layers()[0].bias[0], 0.0);
    }

    #[test]
    fn converges_on_one_dimensional_quadratic() {
        // minimize (w - 0.5)^2 from w = 3; grad = 2(w - 0.5).
        // Adam's per-step movement is capped near lr, so give it enough
        // steps to cross the 2.5 gap and settle.
        let mut net = scalar_net(3.0);
        let mut adam = AdamState::new(&net);
        for _ in 0..400 {
            let w = net.layers()[0].weights.get(0, 0);
            let grads = vec![LayerGrads {
                dw: Matrix::from_vec(1, 1, vec![2.0 * (w - 0.5)]),
                db: vec![0.0],
            }];
            adam.step(&mut net, &grads, 0.1).unwrap();
        }
        let w = net.layers()[0].weights.get(0, 0);
        assert!((w - 0.5).abs() < 1e-3, "ended at {w}");
    }

    #[test]
    fn non_finite_gradient_is_rejected_with_layer_index() {
        let mut net = scalar_net(1.0);
        let mut adam = AdamState::new(&net);
        let grads = vec![LayerGrads {
            dw: Matrix::from_vec(1, 1, vec![f64::NAN]),
            db: vec![0.0],
        }];
        let err = adam.step(&mut net, &grads, 0.01).unwrap_err();
        assert!(err.to_string().contains("layer 0"));
    }

    #[test]
    fn step_is_deterministic_for_identical_inputs() {
        let run = || {
            let mut net = scalar_net(2.0);
            let mut adam = AdamState::new(&net);
            for k in 0..10 {
                let g = (k as f64 + 1.0) * 0.3;
                let grads = vec![LayerGrads {
                    dw: Matrix::from_vec(1, 1, vec![g]),
                    db: vec![-g],
                }];
                adam.step(&mut net, &grads, 0.05).unwrap();
            }
            (
                net.layers()[0].weights.get(0, 0).to_bits(),
                net.layers()[0].bias[0].to_bits(),
            )
        };
        assert_eq!(run(), run());
    }
}
