//! First-order optimizers over the model's flat parameter blocks.

use crate::config::OptimizerKind;
use crate::model::Model;

#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd { learning_rate: f64 },
    Adam(Adam),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, model: &Model) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { learning_rate },
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(learning_rate, model)),
        }
    }

    pub fn step(&mut self, model: &mut Model, grad: &Model) {
        match self {
            Optimizer::Sgd { learning_rate } => {
                for (p, g) in model.blocks_mut().into_iter().zip(grad.blocks()) {
                    for (pi, gi) in p.iter_mut().zip(g) {
                        *pi -= *learning_rate * gi;
                    }
                }
            }
            Optimizer::Adam(adam) => adam.step(model, grad),
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: i32,
}

impl Adam {
    pub fn new(learning_rate: f64, model: &Model) -> Self {
        let n = model.num_params();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first: vec![0.0; n],
            second: vec![0.0; n],
            steps: 0,
        }
    }

    pub fn step(&mut self, model: &mut Model, grad: &Model) {
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps);
        let c2 = 1.0 - self.beta2.powi(self.steps);
        let params = model.blocks_mut().into_iter().flat_map(|b| b.iter_mut());
        let grads = grad.blocks().into_iter().flatten();
        for (((p, g), m), v) in params
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}
