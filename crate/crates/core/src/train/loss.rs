use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BCE_EPS: f32 = 1e-7;

/// Mean binary cross-entropy of scores in (0, 1) against a binary target,
/// with scores clamped to `[eps, 1 - eps]`. The gradient w.r.t. the scores is
/// evaluated at the clamped value, so saturated wrong predictions still get a
/// corrective signal.
pub fn bce_loss(scores: &Tensor, gt: &Tensor) -> Result<(f64, Tensor)> {
    if scores.shape() != gt.shape() {
        return Err(Error::ShapeMismatch {
            op: "bce_loss",
            left: scores.shape(),
            right: gt.shape(),
        });
    }
    let n = scores.numel() as f64;
    let lo = BCE_EPS as f64;
    let hi = 1.0 - BCE_EPS as f64;
    let mut loss = 0.0f64;
    let mut grad = Vec::with_capacity(scores.numel());
    for (&s, &y) in scores.data().iter().zip(gt.data()) {
        let s = (s as f64).clamp(lo, hi);
        let y = y as f64;
        loss -= y * s.ln() + (1.0 - y) * (1.0 - s).ln();
        grad.push(((s - y) / (s * (1.0 - s)) / n) as f32);
    }
    Ok((loss / n, Tensor::from_parts(scores.shape(), grad)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn half_scores_give_ln2() {
        let s = Tensor::full(Shape::new(1, 1, 3, 3), 0.5);
        let g = Tensor::from_fn(Shape::new(1, 1, 3, 3), |_, _, y, x| ((x + y) % 2) as f32);
        let (l, _) = bce_loss(&s, &g).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_is_near_zero() {
        let s = Tensor::full(Shape::new(1, 1, 2, 2), 1.0);
        let (l, _) = bce_loss(&s, &Tensor::full(Shape::new(1, 1, 2, 2), 1.0)).unwrap();
        assert!((0.0..2e-7).contains(&l), "{l}");
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let shape = Shape::new(1, 1, 4, 4);
            let s = Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(0.05..0.95));
            let g = Tensor::from_fn(shape, |_, _, _, _| if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
            let (_, grad) = bce_loss(&s, &g).unwrap();
            for i in 0..16 {
                let h = 1e-4f32;
                let mut p = s.clone();
                p.data_mut()[i] += h;
                let mut m = s.clone();
                m.data_mut()[i] -= h;
                let fd =
                    (bce_loss(&p, &g).unwrap().0 - bce_loss(&m, &g).unwrap().0) / ((p.data()[i] - m.data()[i]) as f64);
                let a = grad.data()[i] as f64;
                assert!((fd - a).abs() / a.abs().max(1e-3) < 1e-4, "{fd} vs {a}");
            }
        }
    }

    #[test]
    fn shape_mismatch() {
        let a = Tensor::zeros(Shape::new(1, 1, 2, 2));
        let b = Tensor::zeros(Shape::new(1, 1, 2, 3));
        assert!(matches!(bce_loss(&a, &b), Err(Error::ShapeMismatch { .. })));
    }
}
