//! Dueling value/advantage streams over the flattened graph readout.

use crate::error::{Error, Result};
use crate::labels::N_CLASSES;
use crate::ndiff::{relu, relu_backward, Affine, Params, Real, Tensor};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DuelingHeads {
    pub value_hidden: Affine,
    pub value_out: Affine,
    pub adv_hidden: Affine,
    pub adv_out: Affine,
    pub state_dim: usize,
}

#[derive(Debug, Clone)]
pub struct HeadsCache<T> {
    state: Tensor<T>,
    value_h: Tensor<T>,
    adv_h: Tensor<T>,
}

/// Q values together with the two streams they were built from.
#[derive(Debug, Clone, PartialEq)]
pub struct DuelingOutput<T> {
    pub q: Vec<T>,
    pub value: T,
    pub advantages: Vec<T>,
}

/// `Q(a) = V + A(a) − mean(A)`.
pub fn dueling_combine<T: Real>(value: T, advantages: &[T]) -> Vec<T> {
    let mean = advantages.iter().fold(T::zero(), |s, &a| s + a) / T::c(advantages.len() as f64);
    advantages.iter().map(|&a| value + a - mean).collect()
}

impl DuelingHeads {
    pub fn new(state_dim: usize, hidden: usize) -> Self {
        DuelingHeads {
            value_hidden: Affine::new("heads.value.hidden", state_dim, hidden),
            value_out: Affine::new("heads.value.out", hidden, 1),
            adv_hidden: Affine::new("heads.advantage.hidden", state_dim, hidden),
            adv_out: Affine::new("heads.advantage.out", hidden, N_CLASSES),
            state_dim,
        }
    }

    pub fn init<T: Real>(&self, p: &mut Params<T>, rng: &mut Rng) -> Result<()> {
        for l in [&self.value_hidden, &self.value_out, &self.adv_hidden, &self.adv_out] {
            l.init(p, rng)?;
        }
        Ok(())
    }

    /// `state` is a 1 × S row vector.
    pub fn forward<T: Real>(&self, p: &Params<T>, state: &Tensor<T>) -> Result<(DuelingOutput<T>, HeadsCache<T>)> {
        if state.shape() != [1, self.state_dim] {
            return Err(Error::shape(
                "dueling heads",
                format!("state {:?}, expected [1, {}]", state.shape(), self.state_dim),
            ));
        }
        let value_h = relu(&self.value_hidden.forward(p, state)?);
        let value = self.value_out.forward(p, &value_h)?.data()[0];
        let adv_h = relu(&self.adv_hidden.forward(p, state)?);
        let advantages = self.adv_out.forward(p, &adv_h)?.into_data();
        let q = dueling_combine(value, &advantages);
        Ok((
            DuelingOutput { q, value, advantages },
            HeadsCache {
                state: state.clone(),
                value_h,
                adv_h,
            },
        ))
    }

    /// Returns the gradient w.r.t. the state row.
    pub fn backward<T: Real>(
        &self,
        p: &Params<T>,
        cache: &HeadsCache<T>,
        dq: &[T],
        g: &mut Params<T>,
    ) -> Result<Tensor<T>> {
        if dq.len() != N_CLASSES {
            return Err(Error::shape("dueling heads", format!("{} Q gradients", dq.len())));
        }
        let dv = dq.iter().fold(T::zero(), |s, &d| s + d);
        let mean = dv / T::c(N_CLASSES as f64);
        let da = Tensor::row_vector(dq.iter().map(|&d| d - mean).collect());

        let dvh = self
            .value_out
            .backward(p, &cache.value_h, &Tensor::row_vector(vec![dv]), g)?;
        let dvh = relu_backward(&cache.value_h, &dvh);
        let mut ds = self.value_hidden.backward(p, &cache.state, &dvh, g)?;

        let dah = self.adv_out.backward(p, &cache.adv_h, &da, g)?;
        let dah = relu_backward(&cache.adv_h, &dah);
        ds.add_assign(&self.adv_hidden.backward(p, &cache.state, &dah, g)?)?;
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng as _, SeedableRng};

    use super::*;
    use crate::ndiff::grad_check;

    #[test]
    fn constant_advantages_leave_value() {
        let q = dueling_combine(0.7, &[3.0; 6]);
        assert!(q.iter().all(|&v| (v - 0.7f64).abs() < 1e-12));
    }

    #[test]
    fn mean_q_is_value() {
        let mut rng = Rng::seed_from_u64(5);
        let heads = DuelingHeads::new(5, 4);
        let mut p = Params::<f64>::new();
        heads.init(&mut p, &mut rng).unwrap();
        for _ in 0..50 {
            let s = Tensor::row_vector((0..5).map(|_| rng.random_range(-2.0..2.0)).collect());
            let (out, _) = heads.forward(&p, &s).unwrap();
            let mean = out.q.iter().sum::<f64>() / 6.0;
            assert!((mean - out.value).abs() < 1e-12);
        }
        assert!(heads.forward(&p, &Tensor::row_vector(vec![0.0; 4])).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..10 {
            let mut rng = Rng::seed_from_u64(40 + seed);
            let heads = DuelingHeads::new(4, 3);
            let mut p = Params::<f64>::new();
            heads.init(&mut p, &mut rng).unwrap();
            p.insert(
                "s",
                Tensor::row_vector((0..4).map(|_| rng.random_range(-1.0..1.0)).collect()),
            )
            .unwrap();
            let coef: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f = |p: &Params<f64>| {
                let (o, _) = heads.forward(p, p.get("s").unwrap()).unwrap();
                o.q.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>()
            };
            let (_, c) = heads.forward(&p, p.get("s").unwrap()).unwrap();
            let mut g = p.zeros_like();
            let ds = heads.backward(&p, &c, &coef, &mut g).unwrap();
            g.set("s", ds).unwrap();
            let r = grad_check(f, &p, &g, 1e-5, 1e-4).unwrap();
            assert!(r.passed(), "seed {seed}: {r}");
        }
    }
}
