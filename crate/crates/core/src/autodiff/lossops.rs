//! Fused loss kernels with analytic backward rules.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mean binary cross-entropy with the prediction clamped to `[eps, 1-eps]`.
pub(super) fn bce_forward<S: Scalar>(p: &Tensor<S>, t: &Tensor<S>, eps: S) -> Tensor<S> {
    assert_eq!(p.shape(), t.shape(), "bce: prediction/target shape mismatch");
    let hi = S::one() - eps;
    let mut acc = S::zero();
    for (&pv, &tv) in p.data().iter().zip(t.data()) {
        let pc = pv.max(eps).min(hi);
        acc += -(tv * pc.ln() + (S::one() - tv) * (S::one() - pc).ln());
    }
    Tensor::scalar(acc / S::from_f64(p.len() as f64))
}

pub(super) fn bce_backward<S: Scalar>(g: &Tensor<S>, p: &Tensor<S>, t: &Tensor<S>, eps: S) -> Tensor<S> {
    let hi = S::one() - eps;
    let scale = g.data()[0] / S::from_f64(p.len() as f64);
    let mut gp = Tensor::zeros(p.shape());
    for ((gv, &pv), &tv) in gp.data_mut().iter_mut().zip(p.data()).zip(t.data()) {
        let pc = pv.max(eps).min(hi);
        *gv = scale * (pc - tv) / (pc * (S::one() - pc));
    }
    gp
}

/// Soft IoU loss averaged over the batch: per image,
/// `1 - sum(p*t) / sum(p + t - p*t)`; an image with an empty union
/// contributes zero.
pub(super) fn iou_forward<S: Scalar>(p: &Tensor<S>, t: &Tensor<S>) -> Tensor<S> {
    assert_eq!(p.shape(), t.shape(), "iou: prediction/target shape mismatch");
    let [n, c, h, w] = p.shape();
    let plane = c * h * w;
    let mut acc = S::zero();
    for ni in 0..n {
        let (inter, union) = image_sums(p, t, ni, plane);
        if union > S::zero() {
            acc += S::one() - inter / union;
        }
    }
    Tensor::scalar(acc / S::from_f64(n as f64))
}

pub(super) fn iou_backward<S: Scalar>(g: &Tensor<S>, p: &Tensor<S>, t: &Tensor<S>) -> Tensor<S> {
    let [n, c, h, w] = p.shape();
    let plane = c * h * w;
    let scale = g.data()[0] / S::from_f64(n as f64);
    let mut gp = Tensor::zeros(p.shape());
    for ni in 0..n {
        let (inter, union) = image_sums(p, t, ni, plane);
        if union <= S::zero() {
            continue;
        }
        let u2 = union * union;
        let base = ni * plane;
        for i in 0..plane {
            let tv = t.data()[base + i];
            // d(1 - I/U)/dp = -(t*U - I*(1 - t)) / U^2
            gp.data_mut()[base + i] = -scale * (tv * union - inter * (S::one() - tv)) / u2;
        }
    }
    gp
}

fn image_sums<S: Scalar>(p: &Tensor<S>, t: &Tensor<S>, ni: usize, plane: usize) -> (S, S) {
    let base = ni * plane;
    let mut inter = S::zero();
    let mut union = S::zero();
    for i in 0..plane {
        let pv = p.data()[base + i];
        let tv = t.data()[base + i];
        inter += pv * tv;
        union += pv + tv - pv * tv;
    }
    (inter, union)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_on_known_grid() {
        // P = [[0.9, 0.1], [0.8, 0.2]], G = [[1, 0], [1, 0]]:
        // mean(-ln 0.9, -ln 0.9, -ln 0.8, -ln 0.8) = 0.16425203...
        let p = Tensor::from_vec([1, 1, 2, 2], vec![0.9f64, 0.1, 0.8, 0.2]).unwrap();
        let g = Tensor::from_vec([1, 1, 2, 2], vec![1.0f64, 0.0, 1.0, 0.0]).unwrap();
        let loss = bce_forward(&p, &g, 1e-7);
        assert!((loss.data()[0] - 0.164_252_033_486_018_3).abs() < 1e-9);
    }

    #[test]
    fn iou_of_perfect_binary_match_is_zero() {
        let g = Tensor::from_vec([1, 1, 2, 2], vec![1.0f64, 0.0, 1.0, 1.0]).unwrap();
        let loss = iou_forward(&g, &g);
        assert!(loss.data()[0].abs() < 1e-12);
    }

    #[test]
    fn iou_of_empty_prediction_and_target_is_zero() {
        let z = Tensor::<f64>::zeros([2, 1, 3, 3]);
        let loss = iou_forward(&z, &z);
        assert_eq!(loss.data()[0], 0.0);
    }

    #[test]
    fn iou_half_overlap_hand_case() {
        // P = G on half the foreground: I = 1, U = 2 -> loss 0.5.
        let p = Tensor::from_vec([1, 1, 1, 4], vec![1.0f64, 0.0, 0.0, 0.0]).unwrap();
        let t = Tensor::from_vec([1, 1, 1, 4], vec![1.0f64, 1.0, 0.0, 0.0]).unwrap();
        let loss = iou_forward(&p, &t);
        assert!((loss.data()[0] - 0.5).abs() < 1e-12);
    }
}
