use super::{Matrix, MlpNet, NnError};
use crate::scalar::Scalar;

/// Compare backprop against central differences for an arbitrary loss on
/// the network output.
///
/// `loss` maps the output matrix to (loss value, dLoss/dOutput); the same
/// closure seeds the analytic backward pass and supplies the scalar loss
/// for numeric differencing, so a corrupted gradient component shows up as
/// a large relative error. Returns the maximum relative error over every
/// weight and bias, with relative error defined as
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
pub fn finite_diff_check<S, F>(
    net: &MlpNet<S>,
    input: &Matrix<S>,
    loss: F,
    eps: S,
) -> Result<S, NnError>
where
    S: Scalar,
    F: Fn(&Matrix<S>) -> (S, Matrix<S>),
{
    assert!(
        eps > S::zero() && eps <= S::of(1e-2),
        "step size must lie in (0, 1e-2]"
    );
    let (out, cache) = net.forward(input)?;
    let (_, out_grad) = loss(&out);
    let analytic = net.backward(&cache, &out_grad)?;

    let numeric_loss = |n: &MlpNet<S>| -> Result<S, NnError> {
        let o = n.forward_only(input)?;
        Ok(loss(&o).0)
    };

    let floor = S::of(1e-8);
    let two = S::of(2.0);
    let mut worst = S::zero();
    let mut scratch = net.clone();
    for l in 0..net.layers().len() {
        let nw = net.layers()[l].weights.data().len();
        for i in 0..nw + net.layers()[l].bias.len() {
            let read = |n: &MlpNet<S>| {
                if i < nw {
                    n.layers()[l].weights.data()[i]
                } else {
                    n.layers()[l].bias[i - nw]
                }
            };
            let write = |n: &mut MlpNet<S>, v: S| {
                if i < nw {
                    n.layers_mut()[l].weights.data_mut()[i] = v;
                } else {
                    n.layers_mut()[l].bias[i - nw] = v;
                }
            };
            let orig = read(net);
            write(&mut scratch, orig + eps);
            let up = numeric_loss(&scratch)?;
            write(&mut scratch, orig - eps);
            let down = numeric_loss(&scratch)?;
            write(&mut scratch, orig);
            let numeric = (up - down) / (two * eps);
            let a = if i < nw {
                analytic[l].dw.data()[i]
            } else {
                analytic[l].db[i - nw]
            };
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
