use crate::error::{Error, Result};
use crate::nn::{dot, sigmoid, Tensor2};

/// Cached result of weighted-sum-and-max pooling over node embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooling {
    /// Per-node gate `α_i = sigmoid(θ_i · g)`.
    pub gates: Vec<f64>,
    /// Winning node for each feature of the max branch.
    pub argmax: Vec<usize>,
    /// `[Σ α_i θ_i, max_i θ_i]` as a `1 x 2H` row.
    pub pooled: Tensor2,
}

/// Concatenates a gated weighted sum and an elementwise max of the rows of
/// `theta`. `gate` is an `H x 1` column. Ties in the max go to the lowest
/// node index.
pub fn weighted_sum_max_pool(theta: &Tensor2, gate: &Tensor2) -> Result<Pooling> {
    let (n, h) = theta.shape();
    if n == 0 {
        return Err(Error::invalid("pooling over an empty graph"));
    }
    if gate.shape() != (h, 1) {
        return Err(Error::shape("weighted_sum_max_pool", format!("gate {h}x1"), format!("{:?}", gate.shape())));
    }
    let g = gate.data();
    let gates: Vec<f64> = (0..n).map(|i| sigmoid(dot(theta.row(i), g))).collect();
    let mut pooled = Tensor2::zeros(1, 2 * h);
    let mut argmax = vec![0usize; h];
    {
        let out = pooled.row_mut(0);
        for (i, &a) in gates.iter().enumerate() {
            for (o, v) in out[..h].iter_mut().zip(theta.row(i)) {
                *o += a * v;
            }
        }
        for (k, best) in argmax.iter_mut().enumerate() {
            let mut best_val = theta.get(0, k);
            for i in 1..n {
                let v = theta.get(i, k);
                if v > best_val {
                    best_val = v;
                    *best = i;
                }
            }
            out[h + k] = best_val;
        }
    }
    Ok(Pooling { gates, argmax, pooled })
}

/// Backward of [`weighted_sum_max_pool`]: returns `(dθ, dg)` for an upstream
/// gradient `d_pooled` of shape `1 x 2H`.
pub fn pool_backward(theta: &Tensor2, gate: &Tensor2, pooling: &Pooling, d_pooled: &Tensor2) -> (Tensor2, Tensor2) {
    let (n, h) = theta.shape();
    let d_sum = &d_pooled.data()[..h];
    let d_max = &d_pooled.data()[h..];
    let g = gate.data();
    let mut d_theta = Tensor2::zeros(n, h);
    let mut d_gate = Tensor2::zeros(h, 1);
    for i in 0..n {
        let a = pooling.gates[i];
        let row = theta.row(i);
        // ∂/∂s_i of Σ α_i θ_i · d_sum, with s_i = θ_i · g.
        let ds = dot(d_sum, row) * a * (1.0 - a);
        let dst = d_theta.row_mut(i);
        for k in 0..h {
            dst[k] += a * d_sum[k] + ds * g[k];
        }
        for (dg, v) in d_gate.data_mut().iter_mut().zip(row) {
            *dg += ds * v;
        }
    }
    for (k, &i) in pooling.argmax.iter().enumerate() {
        let v = d_theta.get(i, k) + d_max[k];
        d_theta.set(i, k, v);
    }
    (d_theta, d_gate)
}
