use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Rows with a norm below this count as directionless: they add the neutral
/// distance 1 and a zero gradient instead of dividing by almost zero.
const NORM_FLOOR: f64 = 1e-12;

/// Layer-wise cosine distance between two gradient lists.
///
/// Each tensor is split into rows along its first axis (1-d tensors form a
/// single row) and every row pair adds one minus its cosine similarity.
/// The distance is invariant to positive per-row rescaling of either side,
/// which is what makes matching robust to the clipping and batch-size
/// factors on the sanitized side.
pub fn matching_loss<S: Scalar>(target: &[Tensor<S>], synth: &[Tensor<S>]) -> Result<S> {
    Ok(cosine_pass(target, synth, false)?.0)
}

/// Matching loss plus its gradient with respect to `synth`.
pub fn matching_loss_and_grad<S: Scalar>(
    target: &[Tensor<S>],
    synth: &[Tensor<S>],
) -> Result<(S, Vec<Tensor<S>>)> {
    let (loss, grads) = cosine_pass(target, synth, true)?;
    Ok((loss, grads.unwrap()))
}

fn cosine_pass<S: Scalar>(
    target: &[Tensor<S>],
    synth: &[Tensor<S>],
    want_grad: bool,
) -> Result<(S, Option<Vec<Tensor<S>>>)> {
    if target.len() != synth.len() {
        return Err(Error::ShapeMismatch {
            what: "matching loss tensor count".into(),
            expected: vec![target.len()],
            got: vec![synth.len()],
        });
    }
    let mut loss = S::ZERO;
    let mut grads = if want_grad { Some(Vec::with_capacity(synth.len())) } else { None };
    for (a_t, b_t) in target.iter().zip(synth.iter()) {
        if a_t.shape() != b_t.shape() {
            return Err(Error::ShapeMismatch {
                what: "matching loss tensor".into(),
                expected: a_t.shape().to_vec(),
                got: b_t.shape().to_vec(),
            });
        }
        let (rows, cols) = row_layout(a_t.shape());
        let mut grad = grads.as_ref().map(|_| Tensor::<S>::zeros(b_t.shape()));
        for r in 0..rows {
            let a = &a_t.as_slice()[r * cols..(r + 1) * cols];
            let b = &b_t.as_slice()[r * cols..(r + 1) * cols];
            let mut dot = S::ZERO;
            let mut na2 = S::ZERO;
            let mut nb2 = S::ZERO;
            for (&x, &y) in a.iter().zip(b.iter()) {
                dot += x * y;
                na2 += x * x;
                nb2 += y * y;
            }
            let na = na2.sqrt();
            let nb = nb2.sqrt();
            if na.value() < NORM_FLOOR || nb.value() < NORM_FLOOR {
                loss += S::ONE;
                continue;
            }
            let inv = S::ONE / (na * nb);
            loss += S::ONE - dot * inv;
            if let Some(g) = grad.as_mut() {
                // d/db [1 - a.b/(|a||b|)] = (a.b) b / (|a||b|^3) - a/(|a||b|)
                let coeff_b = dot * inv / nb2;
                let gr = &mut g.as_mut_slice()[r * cols..(r + 1) * cols];
                for ((o, &x), &y) in gr.iter_mut().zip(a.iter()).zip(b.iter()) {
                    *o = coeff_b * y - inv * x;
                }
            }
        }
        if let (Some(gs), Some(g)) = (grads.as_mut(), grad) {
            gs.push(g);
        }
    }
    Ok((loss, grads))
}

/// Row decomposition: the first axis indexes rows for rank >= 2 (output
/// neurons for linear and conv weights), rank-1 tensors are one row.
fn row_layout(shape: &[usize]) -> (usize, usize) {
    if shape.len() >= 2 {
        (shape[0], shape[1..].iter().product())
    } else {
        (1, shape.iter().product())
    }
}
