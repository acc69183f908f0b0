use crate::error::{shape_err, Error, Result};
use crate::network::ModelParams;

use super::TrainConfig;

/// Scheduler tolerance: a loss must beat the best so far by more than this.
pub const IMPROVEMENT_TOL: f64 = 1e-9;

/// Adam moments over the flat parameter view.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(n_params: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }
}

/// One AdamW update of the flat vector `w` with decoupled weight decay.
/// Nothing is modified if any updated value would be non-finite; the error
/// then carries the flat index.
pub fn adamw_update(
    w: &mut [f64],
    g: &[f64],
    state: &mut OptimizerState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if g.len() != w.len() || state.m.len() != w.len() || state.v.len() != w.len() {
        return Err(shape_err(format!(
            "optimizer sizes differ: params {}, grads {}, moments {}/{}",
            w.len(),
            g.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    let t = state.step + 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powf(t as f64);
    let c2 = 1.0 - b2.powf(t as f64);
    let mut m = state.m.clone();
    let mut v = state.v.clone();
    let mut out = w.to_vec();
    for i in 0..w.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        out[i] = w[i] - lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * w[i]);
        if !out[i].is_finite() {
            return Err(Error::NonFinite {
                name: format!("flat[{i}]"),
            });
        }
    }
    w.copy_from_slice(&out);
    state.m = m;
    state.v = v;
    state.step = t;
    Ok(())
}

/// [`adamw_update`] applied to a model's flat view.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &[f64],
    state: &mut OptimizerState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    let mut w = params.flat();
    adamw_update(&mut w, grads, state, lr, cfg).map_err(|e| match e {
        Error::NonFinite { name } => {
            let index = name
                .trim_start_matches("flat[")
                .trim_end_matches(']')
                .parse::<usize>()
                .ok();
            Error::NonFinite {
                name: index
                    .and_then(|i| params.name_of_flat(i))
                    .unwrap_or(&name)
                    .to_string(),
            }
        }
        other => other,
    })?;
    params.set_flat(&w)
}

/// Learning-rate state: halves after every `patience` consecutive epochs
/// without a strict improvement of the monitored loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LrScheduler {
    lr: f64,
    best: f64,
    stagnant: usize,
    patience: usize,
    factor: f64,
}

impl LrScheduler {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.lr0,
            best: f64::INFINITY,
            stagnant: 0,
            patience: cfg.patience_epochs,
            factor: cfg.lr_halving,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Records one epoch's loss; returns true if it is a new best.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best - IMPROVEMENT_TOL {
            self.best = loss;
            self.stagnant = 0;
            return true;
        }
        self.stagnant += 1;
        if self.stagnant >= self.patience {
            self.lr *= self.factor;
            self.stagnant = 0;
        }
        false
    }
}

/// Learning rate after replaying a loss history.
pub fn lr_schedule(history: &[f64], cfg: &TrainConfig) -> f64 {
    let mut s = LrScheduler::new(cfg);
    for &l in history {
        s.observe(l);
    }
    s.lr()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Variant;

    #[test]
    fn single_step_by_hand() {
        let cfg = TrainConfig::default();
        let mut w = [1.0];
        let mut s = OptimizerState::new(1);
        adamw_update(&mut w, &[1.0], &mut s, 1e-4, &cfg).unwrap();
        let expected = 1.0 - 1e-4 * (1.0 / (1.0 + 1e-8) + 0.01);
        assert!((w[0] - expected).abs() <= 1e-12);
        assert!((w[0] - 0.999899000001).abs() <= 1e-12);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut p = ModelParams::random(Variant::C1, 2, 3, 0.5).unwrap();
        let before = p.clone();
        let mut s = OptimizerState::new(p.num_params());
        let zeros = vec![0.0; p.num_params()];
        for _ in 0..3 {
            adamw_step(&mut p, &zeros, &mut s, 1e-3, &cfg).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn non_finite_update_leaves_params_alone() {
        let cfg = TrainConfig::default();
        let mut p = ModelParams::init(Variant::A, 2, 0).unwrap();
        let before = p.clone();
        let mut g = vec![0.0; p.num_params()];
        g[2] = f64::NAN;
        let mut s = OptimizerState::new(p.num_params());
        match adamw_step(&mut p, &g, &mut s, 1e-3, &cfg) {
            Err(Error::NonFinite { name }) => assert_eq!(name, "pc.bias"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(p, before);
        assert_eq!(s.step, 0);
    }

    #[test]
    fn schedule_traces() {
        let cfg = TrainConfig::default();
        let lr0 = cfg.lr0;
        assert_eq!(lr_schedule(&[5.0, 4.0, 3.0, 2.0, 1.0, 0.5], &cfg), lr0);
        assert_eq!(lr_schedule(&[1.0, 1.0, 1.0], &cfg), lr0);
        assert_eq!(lr_schedule(&[1.0, 1.0, 1.0, 1.0], &cfg), lr0 / 2.0);
        let trace = [1.0, 0.9, 1.0, 1.0, 1.0, 0.8];
        let lrs: Vec<f64> = (1..=trace.len()).map(|e| lr_schedule(&trace[..e], &cfg)).collect();
        assert_eq!(lrs, vec![lr0, lr0, lr0, lr0, lr0 / 2.0, lr0 / 2.0]);
        assert_eq!(lr_schedule(&[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0], &cfg), lr0 / 4.0);
        assert_eq!(lr_schedule(&[1.0, 1.0 - 1e-10, 1.0 - 2e-10, 1.0 - 3e-10], &cfg), lr0 / 2.0);
    }
}
