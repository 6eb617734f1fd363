use serde::{Deserialize, Serialize};

use crate::gradcore::{Gradients, NodeId};
use crate::models::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Optimizer state over the trainable entries of a parameter store.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.params().iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self { kind, m: zeros.clone(), v: zeros, t: 0 }
    }

    /// One update. `nodes[i]` is the graph node of store entry `i`; entries
    /// without a gradient (running statistics) are left alone.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, nodes: &[NodeId], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            if !p.role.trainable() {
                continue;
            }
            let Some(g) = grads.get(nodes[i]) else {
                continue;
            };
            let w = p.value.data_mut();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, g) in w.iter_mut().zip(g.data()) {
                        *w -= lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for j in 0..w.len() {
                        let gj = g.data()[j];
                        m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * gj;
                        v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * gj * gj;
                        let mh = m[j] / bc1;
                        let vh = v[j] / bc2;
                        w[j] -= lr * mh / (vh.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}
