use crate::arch::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// SGD with momentum: `v = mu * v + g`, `w = w - lr * v`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f32,
    pub momentum: f32,
}

/// Per-parameter velocity, created lazily.
#[derive(Clone, Debug, Default)]
pub struct SgdState {
    velocity: Vec<Option<Tensor>>,
}

impl SgdState {
    pub fn velocity(&self, id: ParamId) -> Option<&Tensor> {
        self.velocity.get(id.index()).and_then(Option::as_ref)
    }
}

impl Sgd {
    pub fn step(&self, params: &mut ParamStore, grads: &[(ParamId, Tensor)], state: &mut SgdState) -> Result<()> {
        if state.velocity.len() < params.len() {
            state.velocity.resize(params.len(), None);
        }
        for (id, g) in grads {
            let w = params.tensor_mut(*id);
            if w.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "sgd",
                    left: w.shape(),
                    right: g.shape(),
                });
            }
            let v = state.velocity[id.index()].get_or_insert_with(|| Tensor::zeros(g.shape()));
            for ((w, v), &g) in w.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *v = self.momentum * *v + g;
                *w -= self.lr * *v;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn store(w: &[f32]) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert("w", Tensor::vector(w.to_vec()), true).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_weights() {
        let (mut s, id) = store(&[1.0, -2.0]);
        let before = s.get(id).clone();
        let opt = Sgd { lr: 0.1, momentum: 0.9 };
        opt.step(
            &mut s,
            &[(id, Tensor::vector(vec![0.0, 0.0]))],
            &mut SgdState::default(),
        )
        .unwrap();
        assert!(s.get(id).bitwise_eq(&before));
    }

    #[test]
    fn first_step_is_plain_sgd() {
        let (mut s, id) = store(&[1.0, -2.0]);
        let opt = Sgd { lr: 0.1, momentum: 0.9 };
        opt.step(
            &mut s,
            &[(id, Tensor::vector(vec![0.5, 1.0]))],
            &mut SgdState::default(),
        )
        .unwrap();
        assert_eq!(s.get(id).data(), &[1.0 - 0.1 * 0.5, -2.0 - 0.1 * 1.0]);
    }

    #[test]
    fn two_momentum_steps() {
        let (mut s, id) = store(&[0.0]);
        let opt = Sgd { lr: 0.1, momentum: 0.9 };
        let mut st = SgdState::default();
        let g = Tensor::vector(vec![2.0]);
        opt.step(&mut s, &[(id, g.clone())], &mut st).unwrap();
        opt.step(&mut s, &[(id, g)], &mut st).unwrap();
        let want = -0.1 * 2.0 * (1.0 + 1.9);
        assert!((s.get(id).data()[0] - want).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch() {
        let (mut s, id) = store(&[0.0]);
        let opt = Sgd { lr: 0.1, momentum: 0.0 };
        let g = Tensor::zeros(Shape::new(1, 2, 1, 1));
        assert!(opt.step(&mut s, &[(id, g)], &mut SgdState::default()).is_err());
    }
}
