//! Parameter update rules.

use ndarray::{Array1, Array2, Zip};

use crate::network::{Gradients, NetworkParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: i32,
    moments: Vec<(Array2<f64>, Array1<f64>, Array2<f64>, Array1<f64>)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &NetworkParams) -> Self {
        let moments = match kind {
            OptimizerKind::Sgd => Vec::new(),
            OptimizerKind::Adam { .. } => params
                .layers
                .iter()
                .map(|l| {
                    (
                        Array2::zeros(l.weight.raw_dim()),
                        Array1::zeros(l.bias.len()),
                        Array2::zeros(l.weight.raw_dim()),
                        Array1::zeros(l.bias.len()),
                    )
                })
                .collect(),
        };
        Self {
            kind,
            lr,
            step: 0,
            moments,
        }
    }

    pub fn step(&mut self, params: &mut NetworkParams, grads: &Gradients) {
        self.step += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                for (layer, (dw, db)) in params.layers.iter_mut().zip(&grads.layers) {
                    layer.weight.scaled_add(-lr, dw);
                    layer.bias.scaled_add(-lr, db);
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.step);
                let c2 = 1.0 - beta2.powi(self.step);
                let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                };
                for ((layer, (dw, db)), (mw, mb, vw, vb)) in params
                    .layers
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(self.moments.iter_mut())
                {
                    Zip::from(&mut layer.weight)
                        .and(mw)
                        .and(vw)
                        .and(dw)
                        .for_each(|p, m, v, &g| update(p, m, v, g));
                    Zip::from(&mut layer.bias)
                        .and(mb)
                        .and(vb)
                        .and(db)
                        .for_each(|p, m, v, &g| update(p, m, v, g));
                }
            }
        }
        params.bump_version();
    }
}
