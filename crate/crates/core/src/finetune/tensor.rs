//! Row-major dense kernels used by the model. Matrices are `rows x cols` slices.

use crate::scalar::Scalar;

/// Fully connected layer `y = x W^T + b` with `W` of shape `out x inp`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Linear<T> {
    pub w: Vec<T>,
    pub b: Vec<T>,
    pub inp: usize,
    pub out: usize,
}

/// Low-rank factors `A` (`rank x inp`) and `B` (`out x rank`) applied as `scale (x A^T) B^T`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LowRank<'a, T> {
    pub a: &'a [T],
    pub b: &'a [T],
    pub rank: usize,
    pub scale: T,
}

/// Gradient sinks for a [`LowRank`] pair.
pub(crate) struct LowRankGrad<'a, T> {
    pub a: &'a mut [T],
    pub b: &'a mut [T],
}

/// `x A^T`, `n x rank`.
fn down<T: Scalar>(x: &[T], n: usize, inp: usize, lr: &LowRank<'_, T>) -> Vec<T> {
    let mut u = vec![T::zero(); n * lr.rank];
    for i in 0..n {
        let xi = &x[i * inp..(i + 1) * inp];
        for j in 0..lr.rank {
            u[i * lr.rank + j] = dot(xi, &lr.a[j * inp..(j + 1) * inp]);
        }
    }
    u
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

impl<T: Scalar> Linear<T> {
    /// Returns the output and, with an adapter, the cached `x A^T`.
    pub fn forward(&self, x: &[T], n: usize, lora: Option<&LowRank<'_, T>>) -> (Vec<T>, Vec<T>) {
        let mut y = vec![T::zero(); n * self.out];
        for i in 0..n {
            let xi = &x[i * self.inp..(i + 1) * self.inp];
            for o in 0..self.out {
                y[i * self.out + o] = self.b[o] + dot(xi, &self.w[o * self.inp..(o + 1) * self.inp]);
            }
        }
        let u = match lora {
            Some(lr) => {
                let u = down(x, n, self.inp, lr);
                for i in 0..n {
                    for o in 0..self.out {
                        let s = dot(&u[i * lr.rank..(i + 1) * lr.rank], &lr.b[o * lr.rank..(o + 1) * lr.rank]);
                        y[i * self.out + o] = y[i * self.out + o] + lr.scale * s;
                    }
                }
                u
            }
            None => Vec::new(),
        };
        (y, u)
    }

    /// Input gradient; accumulates adapter gradients when `lora` is given.
    pub fn backward(
        &self,
        x: &[T],
        dy: &[T],
        n: usize,
        lora: Option<(&LowRank<'_, T>, &[T], LowRankGrad<'_, T>)>,
    ) -> Vec<T> {
        let mut dx = vec![T::zero(); n * self.inp];
        for i in 0..n {
            let dxi = &mut dx[i * self.inp..(i + 1) * self.inp];
            for o in 0..self.out {
                let g = dy[i * self.out + o];
                if g.is_zero() {
                    continue;
                }
                for (d, w) in dxi.iter_mut().zip(&self.w[o * self.inp..(o + 1) * self.inp]) {
                    *d = *d + g * *w;
                }
            }
        }
        if let Some((lr, u, grad)) = lora {
            let r = lr.rank;
            let mut du = vec![T::zero(); n * r];
            for i in 0..n {
                for o in 0..self.out {
                    let g = dy[i * self.out + o] * lr.scale;
                    for j in 0..r {
                        du[i * r + j] = du[i * r + j] + g * lr.b[o * r + j];
                        grad.b[o * r + j] = grad.b[o * r + j] + g * u[i * r + j];
                    }
                }
            }
            for i in 0..n {
                let xi = &x[i * self.inp..(i + 1) * self.inp];
                let dxi = &mut dx[i * self.inp..(i + 1) * self.inp];
                for j in 0..r {
                    let g = du[i * r + j];
                    let aj = &lr.a[j * self.inp..(j + 1) * self.inp];
                    let gaj = &mut grad.a[j * self.inp..(j + 1) * self.inp];
                    for k in 0..self.inp {
                        dxi[k] = dxi[k] + g * aj[k];
                        gaj[k] = gaj[k] + g * xi[k];
                    }
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerNorm<T> {
    pub g: Vec<T>,
    pub b: Vec<T>,
}

pub(crate) struct LnCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

const LN_EPS: f64 = 1e-5;

impl<T: Scalar> LayerNorm<T> {
    pub fn forward(&self, x: &[T], n: usize) -> (Vec<T>, LnCache<T>) {
        let d = self.g.len();
        let mut y = vec![T::zero(); n * d];
        let mut xhat = vec![T::zero(); n * d];
        let mut rstd = vec![T::zero(); n];
        let df = T::of_usize(d);
        for i in 0..n {
            let row = &x[i * d..(i + 1) * d];
            let mu = row.iter().copied().sum::<T>() / df;
            let var = row.iter().map(|v| (*v - mu) * (*v - mu)).sum::<T>() / df;
            let r = T::one() / (var + T::of(LN_EPS)).sqrt();
            rstd[i] = r;
            for k in 0..d {
                let h = (row[k] - mu) * r;
                xhat[i * d + k] = h;
                y[i * d + k] = h * self.g[k] + self.b[k];
            }
        }
        (y, LnCache { xhat, rstd })
    }

    pub fn backward(&self, cache: &LnCache<T>, dy: &[T], n: usize) -> Vec<T> {
        let d = self.g.len();
        let df = T::of_usize(d);
        let mut dx = vec![T::zero(); n * d];
        for i in 0..n {
            let xh = &cache.xhat[i * d..(i + 1) * d];
            let dxh: Vec<T> = (0..d).map(|k| dy[i * d + k] * self.g[k]).collect();
            let m1 = dxh.iter().copied().sum::<T>() / df;
            let m2 = dxh.iter().zip(xh).map(|(a, b)| *a * *b).sum::<T>() / df;
            for k in 0..d {
                dx[i * d + k] = cache.rstd[i] * (dxh[k] - m1 - xh[k] * m2);
            }
        }
        dx
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_K: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub(crate) fn gelu<T: Scalar>(u: T) -> T {
    let t = (T::of(GELU_C) * (u + T::of(GELU_K) * u * u * u)).tanh();
    T::of(0.5) * u * (T::one() + t)
}

pub(crate) fn gelu_grad<T: Scalar>(u: T) -> T {
    let c = T::of(GELU_C);
    let k = T::of(GELU_K);
    let t = (c * (u + k * u * u * u)).tanh();
    let half = T::of(0.5);
    half * (T::one() + t) + half * u * (T::one() - t * t) * c * (T::one() + T::of(3.0) * k * u * u)
}

/// In-place softmax, returning log-sum-exp.
pub(crate) fn softmax_in_place<T: Scalar>(v: &mut [T]) -> T {
    let m = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s = s + *x;
    }
    for x in v.iter_mut() {
        *x = *x / s;
    }
    m + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_derivative_matches_difference() {
        for u in [-3.0f64, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(u + h) - gelu(u - h)) / (2.0 * h);
            assert!((fd - gelu_grad(u)).abs() < 1e-8);
        }
    }

    #[test]
    fn layer_norm_backward_matches_difference() {
        let ln = LayerNorm { g: vec![1.5, -0.5, 2.0], b: vec![0.1, 0.0, -0.2] };
        let x = vec![0.3, -1.2, 0.8];
        let w = [0.7, -0.4, 1.1];
        let loss = |x: &[f64]| dot(&ln.forward(x, 1).0, &w);
        let (_, cache) = ln.forward(&x, 1);
        let dx = ln.backward(&cache, &w, 1);
        for k in 0..3 {
            let mut p = x.clone();
            p[k] += 1e-6;
            let mut m = x.clone();
            m[k] -= 1e-6;
            assert!(((loss(&p) - loss(&m)) / 2e-6 - dx[k]).abs() < 1e-7);
        }
    }
}
