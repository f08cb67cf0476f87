use super::params::Params;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[inline]
fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// `out += x · W` for a row vector `x` and row-major `W` (len(x) × len(out)).
#[inline]
fn vecmat_acc<T: Real>(x: &[T], w: &Tensor<T>, out: &mut [T]) {
    let n = out.len();
    let wd = w.data();
    for (i, &xv) in x.iter().enumerate() {
        if xv == T::zero() {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(&wd[i * n..(i + 1) * n]) {
            *o += xv * wv;
        }
    }
}

/// Backward of `y = x · W`: `dW += xᵀ dy`, `dx += W dy`.
#[inline]
fn vecmat_back<T: Real>(x: &[T], w: &Tensor<T>, dy: &[T], dw: &mut Tensor<T>, dx: &mut [T]) {
    let n = dy.len();
    let wd = w.data();
    let dwd = dw.data_mut();
    for (i, &xv) in x.iter().enumerate() {
        let row = &wd[i * n..(i + 1) * n];
        let drow = &mut dwd[i * n..(i + 1) * n];
        let mut acc = T::zero();
        for j in 0..n {
            drow[j] += xv * dy[j];
            acc += row[j] * dy[j];
        }
        dx[i] += acc;
    }
}

/// Standard GRU cell:
/// `z = σ(xW_z + hU_z + b_z)`, `r = σ(xW_r + hU_r + b_r)`,
/// `ĥ = tanh(xW_h + (r⊙h)U_h + b_h)`, `h' = (1−z)⊙h + z⊙ĥ`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GruCell {
    prefix: String,
    pub d_in: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
pub struct GruStepCache<T> {
    x: Vec<T>,
    h_prev: Vec<T>,
    z: Vec<T>,
    r: Vec<T>,
    cand: Vec<T>,
    rh: Vec<T>,
}

const GATES: [&str; 3] = ["z", "r", "h"];

impl GruCell {
    pub fn new(prefix: impl Into<String>, d_in: usize, hidden: usize) -> Self {
        GruCell {
            prefix: prefix.into(),
            d_in,
            hidden,
        }
    }

    fn name(&self, kind: &str, gate: &str) -> String {
        format!("{}.{kind}{gate}", self.prefix)
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(9);
        for g in GATES {
            for k in ["W", "U", "b"] {
                out.push(self.name(k, g));
            }
        }
        out
    }

    pub fn init<T: Real>(&self, p: &mut Params<T>, rng: &mut Rng) -> Result<()> {
        // fan-in is the hidden size, matching the usual recurrent-layer convention
        let h = self.hidden;
        for g in GATES {
            p.init_uniform(self.name("W", g), &[self.d_in, h], h, rng)?;
            p.init_uniform(self.name("U", g), &[h, h], h, rng)?;
            p.init_uniform(self.name("b", g), &[h], h, rng)?;
        }
        Ok(())
    }

    pub fn step<T: Real>(&self, p: &Params<T>, x: &[T], h_prev: &[T]) -> Result<(Vec<T>, GruStepCache<T>)> {
        let h = self.hidden;
        if x.len() != self.d_in || h_prev.len() != h {
            return Err(Error::shape(
                "gru_cell",
                format!(
                    "{}: input {} (want {}), state {} (want {h})",
                    self.prefix,
                    x.len(),
                    self.d_in,
                    h_prev.len()
                ),
            ));
        }
        let gate = |g: &str, hin: &[T]| -> Result<Vec<T>> {
            let mut a = p.get(&self.name("b", g))?.data().to_vec();
            vecmat_acc(x, p.get(&self.name("W", g))?, &mut a);
            vecmat_acc(hin, p.get(&self.name("U", g))?, &mut a);
            Ok(a)
        };
        let z: Vec<T> = gate("z", h_prev)?.into_iter().map(sigmoid).collect();
        let r: Vec<T> = gate("r", h_prev)?.into_iter().map(sigmoid).collect();
        let rh: Vec<T> = r.iter().zip(h_prev).map(|(&a, &b)| a * b).collect();
        let cand: Vec<T> = gate("h", &rh)?.into_iter().map(T::tanh).collect();
        let h_new: Vec<T> = (0..h).map(|i| (T::one() - z[i]) * h_prev[i] + z[i] * cand[i]).collect();
        Ok((
            h_new,
            GruStepCache {
                x: x.to_vec(),
                h_prev: h_prev.to_vec(),
                z,
                r,
                cand,
                rh,
            },
        ))
    }

    /// Returns `(∂x, ∂h_prev)` and accumulates parameter gradients into `g`.
    pub fn step_backward<T: Real>(
        &self,
        p: &Params<T>,
        c: &GruStepCache<T>,
        dh: &[T],
        g: &mut Params<T>,
    ) -> Result<(Vec<T>, Vec<T>)> {
        let h = self.hidden;
        let one = T::one();
        let mut dx = vec![T::zero(); self.d_in];
        let mut dh_prev: Vec<T> = (0..h).map(|i| dh[i] * (one - c.z[i])).collect();

        // candidate branch
        let da_h: Vec<T> = (0..h).map(|i| dh[i] * c.z[i] * (one - c.cand[i] * c.cand[i])).collect();
        let mut d_rh = vec![T::zero(); h];
        vecmat_back(
            &c.x,
            p.get(&self.name("W", "h"))?,
            &da_h,
            g.get_mut(&self.name("W", "h"))?,
            &mut dx,
        );
        vecmat_back(
            &c.rh,
            p.get(&self.name("U", "h"))?,
            &da_h,
            g.get_mut(&self.name("U", "h"))?,
            &mut d_rh,
        );
        g.get_mut(&self.name("b", "h"))?
            .add_assign(&Tensor::from_vec(&[h], da_h)?)?;
        for i in 0..h {
            dh_prev[i] += d_rh[i] * c.r[i];
        }

        // update gate
        let da_z: Vec<T> = (0..h)
            .map(|i| dh[i] * (c.cand[i] - c.h_prev[i]) * c.z[i] * (one - c.z[i]))
            .collect();
        // reset gate
        let da_r: Vec<T> = (0..h)
            .map(|i| d_rh[i] * c.h_prev[i] * c.r[i] * (one - c.r[i]))
            .collect();
        for (gname, da) in [("z", da_z), ("r", da_r)] {
            vecmat_back(
                &c.x,
                p.get(&self.name("W", gname))?,
                &da,
                g.get_mut(&self.name("W", gname))?,
                &mut dx,
            );
            vecmat_back(
                &c.h_prev,
                p.get(&self.name("U", gname))?,
                &da,
                g.get_mut(&self.name("U", gname))?,
                &mut dh_prev,
            );
            g.get_mut(&self.name("b", gname))?
                .add_assign(&Tensor::from_vec(&[h], da)?)?;
        }
        Ok((dx, dh_prev))
    }
}

/// Stacked bidirectional GRU. Row `t` of the output is `[→h_t ; ←h_t]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BiGru {
    pub d_in: usize,
    pub hidden: usize,
    layers: Vec<(GruCell, GruCell)>,
}

#[derive(Debug, Clone)]
pub struct BiGruCache<T> {
    /// per layer: (forward-direction step caches in time order,
    /// backward-direction step caches in processing order)
    layers: Vec<(Vec<GruStepCache<T>>, Vec<GruStepCache<T>>)>,
    len: usize,
}

impl BiGru {
    pub fn new(prefix: &str, d_in: usize, hidden: usize, layers: usize) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let din = if l == 0 { d_in } else { 2 * hidden };
                (
                    GruCell::new(format!("{prefix}.l{l}.fwd"), din, hidden),
                    GruCell::new(format!("{prefix}.l{l}.bwd"), din, hidden),
                )
            })
            .collect();
        BiGru { d_in, hidden, layers }
    }

    pub fn out_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn cells(&self) -> impl Iterator<Item = &GruCell> {
        self.layers.iter().flat_map(|(f, b)| [f, b])
    }

    pub fn init<T: Real>(&self, p: &mut Params<T>, rng: &mut Rng) -> Result<()> {
        for cell in self.cells() {
            cell.init(p, rng)?;
        }
        Ok(())
    }

    pub fn forward<T: Real>(&self, p: &Params<T>, seq: &Tensor<T>) -> Result<(Tensor<T>, BiGruCache<T>)> {
        let len = seq.rows();
        if seq.is_empty() || len == 0 {
            return Err(Error::shape("bigru", "empty sequence"));
        }
        if seq.cols() != self.d_in {
            return Err(Error::shape(
                "bigru",
                format!("input width {} (want {})", seq.cols(), self.d_in),
            ));
        }
        let h = self.hidden;
        let mut input = seq.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for (fwd, bwd) in &self.layers {
            let mut out = Tensor::zeros(&[len, 2 * h]);
            let mut fc = Vec::with_capacity(len);
            let mut state = vec![T::zero(); h];
            for t in 0..len {
                let (next, c) = fwd.step(p, input.row(t), &state)?;
                out.row_mut(t)[..h].copy_from_slice(&next);
                state = next;
                fc.push(c);
            }
            let mut bc = Vec::with_capacity(len);
            let mut state = vec![T::zero(); h];
            for t in (0..len).rev() {
                let (next, c) = bwd.step(p, input.row(t), &state)?;
                out.row_mut(t)[h..].copy_from_slice(&next);
                state = next;
                bc.push(c);
            }
            caches.push((fc, bc));
            input = out;
        }
        Ok((input, BiGruCache { layers: caches, len }))
    }

    /// Backpropagates `dout` (len × 2H) and returns the gradient w.r.t. the input sequence.
    pub fn backward<T: Real>(
        &self,
        p: &Params<T>,
        cache: &BiGruCache<T>,
        dout: &Tensor<T>,
        g: &mut Params<T>,
    ) -> Result<Tensor<T>> {
        let len = cache.len;
        let h = self.hidden;
        if dout.rows() != len || dout.cols() != 2 * h {
            return Err(Error::shape("bigru_backward", format!("{:?}", dout.shape())));
        }
        let mut upstream = dout.clone();
        for ((fwd, bwd), (fc, bc)) in self.layers.iter().zip(&cache.layers).rev() {
            let mut din = Tensor::zeros(&[len, fwd.d_in]);
            let mut carry = vec![T::zero(); h];
            for t in (0..len).rev() {
                let dh: Vec<T> = upstream.row(t)[..h].iter().zip(&carry).map(|(&a, &b)| a + b).collect();
                let (dx, dprev) = fwd.step_backward(p, &fc[t], &dh, g)?;
                for (a, b) in din.row_mut(t).iter_mut().zip(dx) {
                    *a += b;
                }
                carry = dprev;
            }
            let mut carry = vec![T::zero(); h];
            for k in (0..len).rev() {
                let t = len - 1 - k;
                let dh: Vec<T> = upstream.row(t)[h..].iter().zip(&carry).map(|(&a, &b)| a + b).collect();
                let (dx, dprev) = bwd.step_backward(p, &bc[k], &dh, g)?;
                for (a, b) in din.row_mut(t).iter_mut().zip(dx) {
                    *a += b;
                }
                carry = dprev;
            }
            upstream = din;
        }
        Ok(upstream)
    }
}
