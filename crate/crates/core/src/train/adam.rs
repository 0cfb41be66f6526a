//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::net::NetParams;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    /// Completed update count.
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// First moments, shaped like the parameters.
    pub m: Vec<Tensor>,
    /// Second moments, shaped like the parameters.
    pub v: Vec<Tensor>,
}

impl AdamState {
    /// Zero moments for `params` with the standard hyperparameters.
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn for_net(params: &NetParams) -> Self {
        Self::new(params.tensors())
    }

    /// Applies one update. `grads[i]` belongs to `params[i]`; a missing
    /// gradient is reported with `names[i]` and leaves everything untouched.
    pub fn update(
        &mut self,
        params: &mut [Tensor],
        grads: &[Option<Tensor>],
        names: &[String],
        lr: f64,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::State(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let name = names.get(i).map_or("<unnamed>", String::as_str);
            let g = g
                .as_ref()
                .ok_or_else(|| Error::State(format!("no gradient for parameter {name}")))?;
            if g.shape() != p.shape() || self.m[i].shape() != p.shape() {
                return Err(Error::State(format!(
                    "gradient shape {:?} does not match parameter {name} {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powf(self.t as f64);
        let c2 = 1.0 - b2.powf(self.t as f64);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].as_ref().expect("checked above").data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, theta) in p.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *theta -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// One Adam update of every network parameter.
pub fn adam_step(
    params: &mut NetParams,
    grads: &[Option<Tensor>],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    let names = params.names();
    state.update(params.tensors_mut(), grads, &names, lr)
}
