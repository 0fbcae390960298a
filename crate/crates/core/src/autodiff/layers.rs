use rand::Rng;

use super::graph::{BatchStats, Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::{Scalar, Tensor};
use crate::error::Result;

pub const LEAKY_SLOPE: f64 = 0.01;
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn uniform_fan_in<T: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of(rng.random_range(-bound..bound)))
        .collect();
    Tensor::new(shape, data).expect("shape matches generated length")
}

/// Dense layer `y = x W + b` with `W` stored as `[in, out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            uniform_fan_in(rng, &[inputs, outputs], inputs),
            true,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]), true);
        Self {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let h = g.matmul(x, w)?;
        g.add_bias(h, b)
    }
}

/// Same-padded 1-D convolution, weight `[out, in, kernel]`.
#[derive(Clone, Copy, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv1d {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            uniform_fan_in(rng, &[c_out, c_in, kernel], c_in * kernel),
            true,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]), true);
        Self { weight, bias }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv1d(x, w, b)
    }
}

/// Batch normalization over axis 1 with learnable scale/shift and running
/// statistics kept as non-trainable buffers.
#[derive(Clone, Copy, Debug)]
pub struct BatchNorm1d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

/// Running-statistics update produced by a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct PendingStats<T> {
    layer: BatchNorm1d,
    stats: BatchStats<T>,
}

impl BatchNorm1d {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], T::one()), true),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels]), true),
            running_mean: store.add(
                format!("{name}.running_mean"),
                Tensor::zeros(&[channels]),
                false,
            ),
            running_var: store.add(
                format!("{name}.running_var"),
                Tensor::full(&[channels], T::one()),
                false,
            ),
        }
    }

    /// Train mode normalizes with batch statistics and, when `pending` is
    /// given, queues the running-statistics update; eval mode uses the
    /// running statistics.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        mode: Mode,
        pending: Option<&mut Vec<PendingStats<T>>>,
    ) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let eps = T::of(BN_EPS);
        match mode {
            Mode::Train => {
                let (y, stats) = g.batch_norm_train(x, gamma, beta, eps)?;
                if let Some(p) = pending {
                    p.push(PendingStats { layer: *self, stats });
                }
                Ok(y)
            }
            Mode::Eval => g.batch_norm_eval(
                x,
                gamma,
                beta,
                store.get(self.running_mean).data(),
                store.get(self.running_var).data(),
                eps,
            ),
        }
    }
}

impl<T: Scalar> PendingStats<T> {
    /// `running = (1 - momentum) * running + momentum * batch`.
    pub fn apply(&self, store: &mut ParamStore<T>) {
        let m = T::of(BN_MOMENTUM);
        let keep = T::one() - m;
        for (id, batch) in [
            (self.layer.running_mean, &self.stats.mean),
            (self.layer.running_var, &self.stats.var),
        ] {
            for (r, &b) in store.get_mut(id).data_mut().iter_mut().zip(batch) {
                *r = keep * *r + m * b;
            }
        }
    }
}
