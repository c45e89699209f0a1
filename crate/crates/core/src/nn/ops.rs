//! Forward/backward kernels. Every backward here is derived by hand for the
//! fixed op set the model uses.

use serde::{Deserialize, Serialize};

use super::tensor::{dot, Tensor2};
use crate::error::{Error, Result};

/// Epsilon guarding vector norms in [`cosine_similarity`].
pub const COSINE_EPS: f64 = 1e-8;

/// A trainable tensor together with its gradient and Adam moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSlot {
    pub name: String,
    pub value: Tensor2,
    pub grad: Tensor2,
    pub adam_m: Tensor2,
    pub adam_v: Tensor2,
}

impl ParamSlot {
    pub fn new(name: impl Into<String>, value: Tensor2) -> Self {
        let (r, c) = value.shape();
        Self {
            name: name.into(),
            grad: Tensor2::zeros(r, c),
            adam_m: Tensor2::zeros(r, c),
            adam_v: Tensor2::zeros(r, c),
            value,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// `Y = X·W + b`, with `b` broadcast over rows.
pub fn affine(x: &Tensor2, w: &ParamSlot, b: &ParamSlot) -> Result<Tensor2> {
    affine_forward(x, &w.value, &b.value)
}

/// Accumulates `dW`, `db` into the slots and returns `dX`.
pub fn affine_backward(
    x: &Tensor2,
    w: &mut ParamSlot,
    b: &mut ParamSlot,
    dy: &Tensor2,
) -> Result<Tensor2> {
    let (dx, dw, db) = affine_grads(x, &w.value, dy)?;
    w.grad.add_assign(&dw);
    b.grad.add_assign(&db);
    Ok(dx)
}

pub(crate) fn affine_forward(x: &Tensor2, w: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    if b.shape() != (1, w.cols()) {
        return Err(Error::shape("affine", format!("bias 1x{}", w.cols()), format!("{:?}", b.shape())));
    }
    let mut y = x.matmul(w)?;
    for r in 0..y.rows() {
        for (v, bias) in y.row_mut(r).iter_mut().zip(b.data()) {
            *v += bias;
        }
    }
    Ok(y)
}

/// Returns `(dX, dW, db)` for `Y = X·W + b`.
pub(crate) fn affine_grads(x: &Tensor2, w: &Tensor2, dy: &Tensor2) -> Result<(Tensor2, Tensor2, Tensor2)> {
    if dy.shape() != (x.rows(), w.cols()) {
        return Err(Error::shape(
            "affine_backward",
            format!("{}x{}", x.rows(), w.cols()),
            format!("{:?}", dy.shape()),
        ));
    }
    let dx = dy.matmul_t(w)?;
    let dw = x.t_matmul(dy)?;
    Ok((dx, dw, dy.col_sums()))
}

pub fn relu(x: &Tensor2) -> Tensor2 {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Gradient of [`relu`] given the pre-activation input.
pub fn relu_backward(pre: &Tensor2, dy: &Tensor2) -> Tensor2 {
    assert_eq!(pre.shape(), dy.shape(), "relu_backward shape mismatch");
    let mut dx = dy.clone();
    for (d, &p) in dx.data_mut().iter_mut().zip(pre.data()) {
        if p <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Tensor2) -> Tensor2 {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

pub(crate) fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Mean cross-entropy over labelled rows; `None` rows are masked out.
///
/// Returns the loss and `dL/dlogits`, which is `(softmax - onehot) / n`
/// on labelled rows and zero elsewhere.
pub fn softmax_cross_entropy(logits: &Tensor2, labels: &[Option<usize>]) -> Result<(f64, Tensor2)> {
    let (sum, count, mut grad) = cross_entropy_sum(logits, labels)?;
    if count == 0 {
        return Err(Error::invalid("cross-entropy over an empty mask"));
    }
    grad.scale(1.0 / count as f64);
    Ok((sum / count as f64, grad))
}

/// Summed cross-entropy, the number of labelled rows, and the gradient of the sum.
pub(crate) fn cross_entropy_sum(logits: &Tensor2, labels: &[Option<usize>]) -> Result<(f64, usize, Tensor2)> {
    if labels.len() != logits.rows() {
        return Err(Error::shape("softmax_cross_entropy", logits.rows(), labels.len()));
    }
    let width = logits.cols();
    let mut grad = Tensor2::zeros(logits.rows(), width);
    let mut total = 0.0;
    let mut count = 0;
    for (r, label) in labels.iter().enumerate() {
        let Some(label) = *label else { continue };
        if label >= width {
            return Err(Error::invalid(format!("label {label} outside head width {width}")));
        }
        let logp = log_softmax(logits.row(r));
        total -= logp[label];
        count += 1;
        let g = grad.row_mut(r);
        for (gv, lp) in g.iter_mut().zip(&logp) {
            *gv = lp.exp();
        }
        g[label] -= 1.0;
    }
    Ok((total, count, grad))
}

/// `u·v / (max(‖u‖,ε)·max(‖v‖,ε))`, clamped to `[-1, 1]`.
///
/// The denominator is evaluated as `sqrt(max(‖u‖²,ε²)·max(‖v‖²,ε²))` so that
/// `cos(u, u)` is exactly `1.0`. Two vectors both inside the ε-ball have no
/// usable direction and count as aligned: the value is `1.0` with zero
/// gradient.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> f64 {
    cosine_parts(u, v).value
}

/// Cosine value with gradients w.r.t. both inputs.
pub fn cosine_with_grad(u: &[f64], v: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let p = cosine_parts(u, v);
    if p.degenerate {
        return (p.value, vec![0.0; u.len()], vec![0.0; v.len()]);
    }
    let denom = p.nu * p.nv;
    // Below ε the norm is a constant, so its derivative vanishes.
    let cu = if p.uu > COSINE_EPS * COSINE_EPS { p.raw / p.uu } else { 0.0 };
    let cv = if p.vv > COSINE_EPS * COSINE_EPS { p.raw / p.vv } else { 0.0 };
    let du = u.iter().zip(v).map(|(a, b)| b / denom - cu * a).collect();
    let dv = u.iter().zip(v).map(|(a, b)| a / denom - cv * b).collect();
    (p.value, du, dv)
}

struct CosineParts {
    value: f64,
    degenerate: bool,
    raw: f64,
    uu: f64,
    vv: f64,
    nu: f64,
    nv: f64,
}

fn cosine_parts(u: &[f64], v: &[f64]) -> CosineParts {
    assert_eq!(u.len(), v.len(), "cosine of vectors with different lengths");
    let eps2 = COSINE_EPS * COSINE_EPS;
    let uu = dot(u, u);
    let vv = dot(v, v);
    let uv = dot(u, v);
    let su = uu.max(eps2);
    let sv = vv.max(eps2);
    let degenerate = uu <= eps2 && vv <= eps2;
    let raw = if degenerate { 1.0 } else { uv / (su * sv).sqrt() };
    CosineParts {
        value: raw.clamp(-1.0, 1.0),
        degenerate,
        raw,
        uu,
        vv,
        nu: su.sqrt(),
        nv: sv.sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_identity_input() {
        let x = Tensor2::identity(2);
        let w = ParamSlot::new("w", Tensor2::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let b = ParamSlot::new("b", Tensor2::zeros(1, 2));
        assert_eq!(affine(&x, &w, &b).unwrap(), w.value);
    }

    #[test]
    fn affine_bias_only() {
        let x = Tensor2::zeros(3, 2);
        let w = ParamSlot::new("w", Tensor2::filled(2, 4, 0.7));
        let b = ParamSlot::new("b", Tensor2::row_vector(&[1.0, -2.0, 3.0, 0.5]));
        let y = affine(&x, &w, &b).unwrap();
        for r in 0..3 {
            assert_eq!(y.row(r), b.value.data());
        }
    }

    #[test]
    fn affine_shape_mismatch_rejected() {
        let x = Tensor2::zeros(3, 3);
        let w = ParamSlot::new("w", Tensor2::zeros(2, 4));
        let b = ParamSlot::new("b", Tensor2::zeros(1, 4));
        assert!(matches!(affine(&x, &w, &b), Err(Error::Shape { .. })));
    }

    #[test]
    fn relu_extremes() {
        let neg = Tensor2::filled(2, 3, -1.5);
        assert_eq!(relu(&neg), Tensor2::zeros(2, 3));
        let pos = Tensor2::from_rows(&[vec![0.5, 2.0], vec![3.0, 1e-3]]).unwrap();
        assert_eq!(relu(&pos), pos);
        let dy = Tensor2::filled(2, 3, 1.0);
        assert_eq!(relu_backward(&neg, &dy), Tensor2::zeros(2, 3));
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_c() {
        for c in [2usize, 3, 7] {
            let logits = Tensor2::filled(4, c, 0.3);
            let labels: Vec<_> = (0..4).map(|i| Some(i % c)).collect();
            let (loss, _) = softmax_cross_entropy(&logits, &labels).unwrap();
            assert!((loss - (c as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_confident_correct_is_near_zero() {
        let logits = Tensor2::from_rows(&[vec![200.0, 0.0, 0.0]]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[Some(0)]).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn cross_entropy_rows_sum_to_zero_and_mask() {
        let logits = Tensor2::from_rows(&[vec![0.1, 2.0, -1.0], vec![3.0, 0.0, 1.0], vec![0.0, 0.0, 5.0]]).unwrap();
        let (_, grad) = softmax_cross_entropy(&logits, &[Some(2), None, Some(0)]).unwrap();
        assert!(grad.row(0).iter().sum::<f64>().abs() < 1e-15);
        assert!(grad.row(2).iter().sum::<f64>().abs() < 1e-15);
        assert!(grad.row(1).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn cross_entropy_rejects_empty_mask_and_bad_label() {
        let logits = Tensor2::zeros(2, 3);
        assert!(softmax_cross_entropy(&logits, &[None, None]).is_err());
        assert!(softmax_cross_entropy(&logits, &[Some(3), None]).is_err());
    }

    #[test]
    fn cosine_identities() {
        let u = [0.3, -1.2, 4.5, 1e-3];
        assert_eq!(cosine_similarity(&u, &u), 1.0);
        let neg: Vec<f64> = u.iter().map(|v| -v).collect();
        assert_eq!(cosine_similarity(&u, &neg), -1.0);
        assert_eq!(cosine_similarity(&[0.0; 4], &u), 0.0);
        let tiny = [1e-10, -3e-11, 0.0, 2e-12];
        assert_eq!(cosine_similarity(&tiny, &tiny), 1.0);
        assert_eq!(cosine_similarity(&[0.0; 4], &[0.0; 4]), 1.0);
        let (_, du, dv) = cosine_with_grad(&tiny, &[0.0; 4]);
        assert!(du.iter().chain(&dv).all(|&g| g == 0.0));
    }
}
