use super::{Gradients, Network, NnError};

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: u64,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
    },
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Result<Self, NnError> {
        check_lr(lr)?;
        Ok(Optimizer::Sgd { lr })
    }

    pub fn adam(lr: f64) -> Result<Self, NnError> {
        check_lr(lr)?;
        Ok(Optimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn learning_rate(&self) -> f64 {
        match self {
            Optimizer::Sgd { lr } | Optimizer::Adam { lr, .. } => *lr,
        }
    }

    /// Number of updates applied so far (SGD keeps no counter).
    pub fn steps(&self) -> u64 {
        match self {
            Optimizer::Sgd { .. } => 0,
            Optimizer::Adam { step, .. } => *step,
        }
    }

    /// Applies one update. Non-finite gradients abort without touching the
    /// parameters.
    pub fn apply(&mut self, net: &mut Network, grads: &Gradients) -> Result<(), NnError> {
        if !grads.all_finite() {
            return Err(NnError::NonFinite {
                what: "gradient".into(),
                step: self.steps() + 1,
            });
        }
        let mut params = net.params_mut();
        if params.len() != grads.0.len() || params.iter().zip(&grads.0).any(|(p, g)| p.len() != g.len()) {
            return Err(NnError::Shape("gradients do not match network parameters".into()));
        }
        match self {
            Optimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(&grads.0) {
                    for (pv, gv) in p.iter_mut().zip(g) {
                        *pv -= *lr * gv;
                    }
                }
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                step,
                m,
                v,
            } => {
                if m.is_empty() {
                    *m = grads.0.iter().map(|g| vec![0.0; g.len()]).collect();
                    *v = m.clone();
                }
                *step += 1;
                let bc1 = 1.0 - beta1.powi(*step as i32);
                let bc2 = 1.0 - beta2.powi(*step as i32);
                for (((p, g), mt), vt) in params.iter_mut().zip(&grads.0).zip(m.iter_mut()).zip(v.iter_mut()) {
                    for i in 0..p.len() {
                        mt[i] = *beta1 * mt[i] + (1.0 - *beta1) * g[i];
                        vt[i] = *beta2 * vt[i] + (1.0 - *beta2) * g[i] * g[i];
                        let mhat = mt[i] / bc1;
                        let vhat = vt[i] / bc2;
                        p[i] -= *lr * mhat / (vhat.sqrt() + *eps);
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_lr(lr: f64) -> Result<(), NnError> {
    if lr > 0.0 && lr.is_finite() {
        Ok(())
    } else {
        Err(NnError::InvalidParameter(format!("learning rate must be > 0, got {lr}")))
    }
}

/// Best-weights snapshot plus patience counter.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    higher_is_better: bool,
    best: Option<f64>,
    best_epoch: usize,
    best_net: Option<Network>,
    since_best: usize,
    epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, higher_is_better: bool) -> Self {
        Self {
            patience,
            higher_is_better,
            best: None,
            best_epoch: 0,
            best_net: None,
            since_best: 0,
            epochs: 0,
        }
    }

    /// Records one epoch's validation metric; returns `true` once `patience`
    /// epochs have passed without improvement.
    pub fn observe(&mut self, metric: f64, net: &Network) -> bool {
        self.epochs += 1;
        let improved = match self.best {
            None => metric.is_finite(),
            Some(b) => {
                if self.higher_is_better {
                    metric > b
                } else {
                    metric < b
                }
            }
        };
        if improved {
            self.best = Some(metric);
            self.best_epoch = self.epochs;
            self.best_net = Some(net.clone());
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.since_best >= self.patience
    }

    pub fn best_metric(&self) -> Option<f64> {
        self.best
    }

    /// 1-based epoch of the best metric.
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn into_best(self) -> Option<Network> {
        self.best_net
    }
}
