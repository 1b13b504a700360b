use super::graph::Mat;
use super::params::{ParamId, ParamSet};

/// Adam with optional global-norm gradient clipping.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    step: u64,
    first: Vec<Option<Mat>>,
    second: Vec<Option<Mat>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn with_clip(mut self, clip: Option<f64>) -> Self {
        self.clip_norm = clip;
        self
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[(ParamId, Mat)]) {
        self.step += 1;
        if self.first.len() < params.len() {
            self.first.resize(params.len(), None);
            self.second.resize(params.len(), None);
        }
        let scale = match self.clip_norm {
            Some(max) => {
                let norm = grads.iter().map(|(_, g)| g.mapv(|x| x * x).sum()).sum::<f64>().sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (id, g) in grads {
            let idx = id.index();
            let m = self.first[idx].get_or_insert_with(|| Mat::zeros(g.raw_dim()));
            m.zip_mut_with(g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g * scale);
            let v = self.second[idx].get_or_insert_with(|| Mat::zeros(g.raw_dim()));
            v.zip_mut_with(g, |v, &g| {
                let gs = g * scale;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gs * gs
            });
            let m = self.first[idx].as_ref().unwrap();
            let v = self.second[idx].as_ref().unwrap();
            let (lr, eps) = (self.lr, self.eps);
            let w = params.get_mut(*id);
            ndarray::Zip::from(w).and(m).and(v).for_each(|w, &m, &v| {
                *w -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
            });
        }
    }
}
