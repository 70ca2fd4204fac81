use super::params::{NamedArray, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Adam with bias correction; the learning rate is supplied per step so a
/// schedule can live with the caller.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>, eps: f64) -> Self {
        let zeros = || -> Vec<Tensor<T>> {
            (0..store.len())
                .map(|i| {
                    let (r, c) = store.value(i).shape();
                    Tensor::zeros(r, c)
                })
                .collect()
        };
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn update(&mut self, store: &mut ParamStore<T>, lr: f64) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let step = T::from_f64(lr * c2.sqrt() / c1);
        let eps = T::from_f64(self.eps * c2.sqrt());
        let (tb1, tb2) = (T::from_f64(b1), T::from_f64(b2));
        let (ob1, ob2) = (T::from_f64(1.0 - b1), T::from_f64(1.0 - b2));
        for id in 0..store.len() {
            let (value, grad) = store.value_and_grad_mut(id);
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            for k in 0..value.data.len() {
                let gk = grad.data[k];
                m.data[k] = tb1 * m.data[k] + ob1 * gk;
                v.data[k] = tb2 * v.data[k] + ob2 * gk * gk;
                value.data[k] -= step * m.data[k] / (v.data[k].sqrt() + eps);
            }
        }
    }

    /// Moments as `adam.m.<param>` / `adam.v.<param>` arrays plus the step count.
    pub fn to_arrays(&self, store: &ParamStore<T>) -> Vec<NamedArray> {
        let mut out = Vec::with_capacity(2 * store.len() + 1);
        for id in 0..store.len() {
            out.push(NamedArray::from_tensor(format!("adam.m.{}", store.name(id)), &self.m[id]));
            out.push(NamedArray::from_tensor(format!("adam.v.{}", store.name(id)), &self.v[id]));
        }
        out.push(NamedArray {
            name: "adam.step".into(),
            dtype: super::tensor::DType::F64,
            shape: vec![1, 1],
            data: vec![self.step as f64],
        });
        out
    }

    pub fn load_arrays(&mut self, store: &ParamStore<T>, arrays: &[NamedArray]) -> Result<()> {
        let find = |n: &str| {
            arrays
                .iter()
                .find(|a| a.name == n)
                .ok_or_else(|| Error::Checkpoint(format!("missing optimizer state {n}")))
        };
        for id in 0..store.len() {
            let name = store.name(id);
            for (slot, prefix) in [(&mut self.m[id], "adam.m."), (&mut self.v[id], "adam.v.")] {
                let t = find(&format!("{prefix}{name}"))?.to_tensor::<T>()?;
                if t.shape() != slot.shape() {
                    return Err(Error::Checkpoint(format!("{prefix}{name}: shape mismatch")));
                }
                *slot = t;
            }
        }
        self.step = find("adam.step")?.data[0] as u64;
        Ok(())
    }
}
