use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Gradients, ModelParams, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub peak_lr: f64,
    pub warmup_frac: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub eps: f64,
    /// Give every stage its own warm-up and decay; otherwise one schedule
    /// spans the whole arm.
    pub restart_per_stage: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            peak_lr: 5e-4,
            warmup_frac: 0.05,
            beta1: 0.9,
            beta2: 0.98,
            weight_decay: 0.1,
            grad_clip_norm: 1.0,
            eps: 1e-8,
            restart_per_stage: true,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("optim: {m}")));
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("betas must lie in (0, 1)");
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad("grad_clip_norm must be positive");
        }
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return bad("warmup_frac must lie in (0, 1)");
        }
        if !(self.peak_lr > 0.0) || !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("peak_lr and eps must be positive, weight_decay non-negative");
        }
        Ok(())
    }

    pub fn warmup_steps(&self, total_steps: u64) -> u64 {
        // the epsilon keeps 0.05·100 from rounding up to 6
        let w = (self.warmup_frac * total_steps as f64 - 1e-9).ceil() as u64;
        w.clamp(1, total_steps.max(1))
    }

    /// Linear warm-up to `peak_lr` over `w` steps, then linear decay to zero
    /// at `total_steps`. Steps are 1-based.
    pub fn lr_at(&self, step: u64, total_steps: u64) -> Result<f64> {
        if step == 0 || step > total_steps {
            return Err(Error::StepOutOfRange {
                step,
                total: total_steps,
            });
        }
        let w = self.warmup_steps(total_steps);
        Ok(if step <= w {
            self.peak_lr * step as f64 / w as f64
        } else {
            self.peak_lr * (total_steps - step) as f64 / (total_steps - w) as f64
        })
    }
}

/// Rescales `grads` to global L2 norm `max_norm` if it is larger. Returns
/// the norm before clipping.
pub fn clip_gradients<F: Scalar>(grads: &mut Gradients<F>, max_norm: f64) -> Result<f64> {
    if let Some(i) = grads.data.iter().position(|g| !g.is_finite()) {
        let t = grads.layout().tensor_at(i);
        return Err(Error::NonFiniteGradient {
            tensor: t.name.clone(),
            index: i - t.offset,
        });
    }
    let norm = grads.l2_norm();
    if norm > max_norm {
        grads.scale(F::from_f64(max_norm / norm).unwrap());
    }
    Ok(norm)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F> {
    pub step: u64,
    pub m: Vec<F>,
    pub v: Vec<F>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(params: &ModelParams<F>) -> Self {
        AdamState {
            step: 0,
            m: vec![F::zero(); params.data.len()],
            v: vec![F::zero(); params.data.len()],
        }
    }
}

/// One bias-corrected Adam update with decoupled weight decay
/// (`p ← p − lr·wd·p` before the adaptive step). Normalization gains are
/// not decayed.
pub fn adam_step<F: Scalar>(
    params: &mut ModelParams<F>,
    grads: &Gradients<F>,
    state: &mut AdamState<F>,
    lr: f64,
    cfg: &OptimConfig,
) -> Result<()> {
    let n = params.data.len();
    if grads.data.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Shape("optimizer buffers do not match parameters".into()));
    }
    state.step += 1;
    let f = |x: f64| F::from_f64(x).unwrap();
    let (b1, b2) = (f(cfg.beta1), f(cfg.beta2));
    let c1 = f(1.0 / (1.0 - cfg.beta1.powi(state.step as i32)));
    let c2 = f(1.0 / (1.0 - cfg.beta2.powi(state.step as i32)));
    let (lr_f, eps, shrink) = (f(lr), f(cfg.eps), f(1.0 - lr * cfg.weight_decay));
    let layout = params.layout().clone();
    for t in layout.tensors() {
        let r = t.range();
        let p = &mut params.data[r.clone()];
        let (g, m, v) = (&grads.data[r.clone()], &mut state.m[r.clone()], &mut state.v[r]);
        for i in 0..p.len() {
            if t.decay {
                p[i] *= shrink;
            }
            m[i] = b1 * m[i] + (F::one() - b1) * g[i];
            v[i] = b2 * v[i] + (F::one() - b2) * g[i] * g[i];
            let mhat = m[i] * c1;
            let vhat = v[i] * c2;
            p[i] -= lr_f * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};

    #[test]
    fn schedule_anchors() {
        let c = OptimConfig::default();
        assert_eq!(c.warmup_steps(100), 5);
        assert!((c.lr_at(5, 100).unwrap() - 5e-4).abs() < 1e-15);
        assert_eq!(c.lr_at(100, 100).unwrap(), 0.0);
        assert!((c.lr_at(1, 100).unwrap() - 1e-4).abs() < 1e-15);
        assert!(c.lr_at(0, 100).is_err());
        assert!(c.lr_at(101, 100).is_err());
        assert_eq!(c.lr_at(1, 1).unwrap(), 5e-4);
    }

    #[test]
    fn clipping() {
        let p = init_params::<f64>(&ModelConfig::tiny(11)).unwrap();
        let mut g = Gradients::zeros_like(&p);
        g.data[0] = 2.0;
        assert_eq!(clip_gradients(&mut g, 1.0).unwrap(), 2.0);
        assert_eq!(g.data[0], 1.0);
        g.data[0] = 0.3;
        clip_gradients(&mut g, 1.0).unwrap();
        assert_eq!(g.data[0], 0.3);
        let last = g.data.len() - 1;
        g.data[last] = f64::NAN;
        let err = clip_gradients(&mut g, 1.0).unwrap_err();
        assert!(err.to_string().contains("unembed"), "{err}");
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = init_params::<f64>(&ModelConfig::tiny(11)).unwrap();
        let before = p.clone();
        let g = Gradients::zeros_like(&p);
        let mut s = AdamState::new(&p);
        let cfg = OptimConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        adam_step(&mut p, &g, &mut s, 1e-3, &cfg).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn gains_are_not_decayed() {
        let mut p = init_params::<f64>(&ModelConfig::tiny(11)).unwrap();
        let g = Gradients::zeros_like(&p);
        let mut s = AdamState::new(&p);
        let before = p.clone();
        adam_step(&mut p, &g, &mut s, 0.1, &OptimConfig::default()).unwrap();
        assert_eq!(p.tensor("final_norm"), before.tensor("final_norm"));
        let (a, b) = (p.tensor("unembed").unwrap()[0], before.tensor("unembed").unwrap()[0]);
        assert!((a - b * (1.0 - 0.1 * 0.1)).abs() < 1e-15);
    }
}
