use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::params::Params;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// `y = x·W + b` for `x` of shape n×d_in, `W` d_in×d_out, `b` of length d_out.
pub fn affine_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if b.len() != w.cols() {
        return Err(Error::shape(
            "affine",
            format!("bias of length {} for {} outputs", b.len(), w.cols()),
        ));
    }
    let mut y = x.matmul(w)?;
    for i in 0..y.rows() {
        for (v, &bv) in y.row_mut(i).iter_mut().zip(b.data()) {
            *v += bv;
        }
    }
    Ok(y)
}

/// Returns `(∂x, ∂W, ∂b)` for upstream gradient `dy`.
pub fn affine_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let dx = dy.matmul_nt(w)?;
    let dw = x.matmul_tn(dy)?;
    let mut db = Tensor::zeros(&[dy.cols()]);
    for i in 0..dy.rows() {
        for (a, &g) in db.data_mut().iter_mut().zip(dy.row(i)) {
            *a += g;
        }
    }
    Ok((dx, dw, db))
}

/// Dense layer whose weights live in a [`Params`] under `<prefix>.W` / `<prefix>.b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Affine {
    pub w: String,
    pub b: String,
    pub d_in: usize,
    pub d_out: usize,
}

impl Affine {
    pub fn new(prefix: &str, d_in: usize, d_out: usize) -> Self {
        Affine {
            w: format!("{prefix}.W"),
            b: format!("{prefix}.b"),
            d_in,
            d_out,
        }
    }

    pub fn init<T: Real>(&self, p: &mut Params<T>, rng: &mut Rng) -> Result<()> {
        p.init_uniform(&self.w, &[self.d_in, self.d_out], self.d_in, rng)?;
        p.init_uniform(&self.b, &[self.d_out], self.d_in, rng)
    }

    pub fn forward<T: Real>(&self, p: &Params<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        affine_forward(x, p.get(&self.w)?, p.get(&self.b)?)
    }

    pub fn backward<T: Real>(
        &self,
        p: &Params<T>,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        g: &mut Params<T>,
    ) -> Result<Tensor<T>> {
        let (dx, dw, db) = affine_backward(x, p.get(&self.w)?, dy)?;
        g.get_mut(&self.w)?.add_assign(&dw)?;
        g.get_mut(&self.b)?.add_assign(&db)?;
        Ok(dx)
    }
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Gradient through ReLU given its *output* `y`.
pub fn relu_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (g, &v) in dx.data_mut().iter_mut().zip(y.data()) {
        if v <= T::zero() {
            *g = T::zero();
        }
    }
    dx
}

/// Max-subtracted softmax.
pub fn softmax<T: Real>(x: &[T]) -> Vec<T> {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = out.iter().copied().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Gradient through softmax given its output `y`.
pub fn softmax_backward<T: Real>(y: &[T], dy: &[T]) -> Vec<T> {
    let inner: T = y.iter().zip(dy).map(|(&a, &b)| a * b).sum();
    y.iter().zip(dy).map(|(&a, &b)| a * (b - inner)).collect()
}

/// Inverted dropout: kept entries are scaled by `1/(1-rate)` so the expectation
/// is unchanged. Returns the mask (0 or the scale) in training mode.
pub fn dropout_apply<T: Real>(
    x: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0,1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = T::c(1.0 / (1.0 - rate));
    let mut mask = Tensor::zeros(x.shape());
    for m in mask.data_mut() {
        if rng.random::<f64>() >= rate {
            *m = keep;
        }
    }
    let mut y = x.clone();
    for (v, &m) in y.data_mut().iter_mut().zip(mask.data()) {
        *v *= m;
    }
    Ok((y, Some(mask)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn backward<T: Real>(mask: &Option<Tensor<T>>, dy: &Tensor<T>) -> Tensor<T> {
        match mask {
            None => dy.clone(),
            Some(m) => {
                let mut dx = dy.clone();
                for (g, &k) in dx.data_mut().iter_mut().zip(m.data()) {
                    *g *= k;
                }
                dx
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::ndiff::grad_check;

    fn rng(seed: u64) -> Rng {
        Rng::seed_from_u64(seed)
    }

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn affine_hand_values() {
        let x = Tensor::row_vector(vec![1.0, 2.0]);
        let b = Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        let y = affine_forward(&x, &Tensor::identity(2), &b).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0]);

        let y0 = affine_forward(&x, &Tensor::identity(2), &Tensor::zeros(&[2])).unwrap();
        assert_eq!(y0, x);

        assert!(affine_forward(&x, &Tensor::<f64>::zeros(&[3, 2]), &b).is_err());
    }

    #[test]
    fn affine_gradients_match_finite_differences() {
        for seed in 0..10 {
            let mut r = rng(seed);
            let (n, din, dout) = (1 + seed as usize % 3, 2 + seed as usize % 4, 1 + seed as usize % 5);
            let layer = Affine::new("fc", din, dout);
            let mut p = Params::new();
            layer.init(&mut p, &mut r).unwrap();
            p.insert("x", random(&[n, din], &mut r)).unwrap();
            let coef = random(&[n, dout], &mut r);
            let loss = |p: &Params<f64>| {
                let y = layer.forward(p, p.get("x").unwrap()).unwrap();
                y.data().iter().zip(coef.data()).map(|(a, b)| a * b).sum::<f64>()
            };
            let mut g = p.zeros_like();
            let dx = layer.backward(&p, p.get("x").unwrap(), &coef, &mut g).unwrap();
            g.set("x", dx).unwrap();
            let report = grad_check(loss, &p, &g, 1e-5, 1e-6).unwrap();
            assert!(report.passed(), "{report}");
        }
    }

    #[test]
    fn softmax_is_stable_and_normalized() {
        let y = softmax(&[1000.0f64, 1000.0, -1000.0]);
        assert!((y[0] - 0.5).abs() < 1e-12 && y[2] == 0.0);
        let y = softmax(&[0.3f32, -0.2, 0.9]);
        assert!((y.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let mut r = rng(3);
        let x = random(&[6], &mut r);
        let coef = random(&[6], &mut r);
        let f = |p: &Params<f64>| {
            let y = softmax(p.get("x").unwrap().data());
            y.iter().zip(coef.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut p = Params::new();
        p.insert("x", x.clone()).unwrap();
        let y = softmax(x.data());
        let mut g = Params::new();
        g.insert("x", Tensor::from_vec(&[6], softmax_backward(&y, coef.data())).unwrap())
            .unwrap();
        assert!(grad_check(f, &p, &g, 1e-5, 1e-7).unwrap().passed());
    }

    #[test]
    fn dropout_modes() {
        let mut r = rng(0);
        let x = random(&[10, 10], &mut r);
        let (y, mask) = dropout_apply(&x, 0.3, Mode::Eval, &mut r).unwrap();
        assert_eq!(y, x);
        assert!(mask.is_none());
        let (y, _) = dropout_apply(&x, 0.0, Mode::Train, &mut r).unwrap();
        assert_eq!(y, x);
        assert!(dropout_apply(&x, 1.0, Mode::Train, &mut r).is_err());
    }

    #[test]
    fn dropout_statistics() {
        let mut r = rng(42);
        let n = 100_000;
        let x = Tensor::from_vec(&[n], vec![1.0f64; n]).unwrap();
        let (y, _) = dropout_apply(&x, 0.3, Mode::Train, &mut r).unwrap();
        let zeroed = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
        assert!((zeroed - 0.3).abs() < 0.01, "zeroed fraction {zeroed}");
        let mean = y.sum() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn relu_backward_masks_inactive_units() {
        let x = Tensor::from_vec(&[4], vec![-1.0f64, 0.5, 0.0, 2.0]).unwrap();
        let y = relu(&x);
        assert_eq!(y.data(), &[0.0, 0.5, 0.0, 2.0]);
        let dy = Tensor::from_vec(&[4], vec![1.0; 4]).unwrap();
        assert_eq!(relu_backward(&y, &dy).data(), &[0.0, 1.0, 0.0, 1.0]);
    }
}
