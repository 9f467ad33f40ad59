//! AdamW with decoupled weight decay, and the warmup + cosine schedule.

use crate::error::{Error, Result};

use super::train::TrainConfig;
use super::HeadParams;

/// Moment buffers for every head tensor plus the shared timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl AdamWState {
    pub fn new(params: &HeadParams) -> Self {
        AdamWState {
            step: 0,
            moments: params
                .tensors()
                .into_iter()
                .map(|(_, t)| (vec![0.0; t.len()], vec![0.0; t.len()]))
                .collect(),
        }
    }
}

/// One tensor update. `t` is the 1-based timestep used for bias correction:
/// `w -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * w)`.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update(
    w: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
) {
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for i in 0..w.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        w[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * w[i]);
    }
}

/// Applies one step to every tensor of `params`. Gradients must have the
/// same layout (use a zeroed clone of the head).
pub fn adamw_step(
    params: &mut HeadParams,
    grads: &HeadParams,
    state: &mut AdamWState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    let grad_tensors = grads.tensors();
    for (name, g) in &grad_tensors {
        if let Some(i) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}[{i}]")));
        }
    }
    state.step += 1;
    let t = state.step;
    for (((_, w), (_, g)), (m, v)) in params
        .tensors_mut()
        .into_iter()
        .zip(grad_tensors)
        .zip(state.moments.iter_mut())
    {
        adamw_update(
            w,
            g,
            m,
            v,
            t,
            lr,
            cfg.beta1,
            cfg.beta2,
            cfg.adam_eps,
            cfg.weight_decay,
        );
    }
    Ok(())
}

/// Number of warmup steps, `ceil(warmup_ratio * total_steps)`. The small
/// slack keeps products like `0.1 * 70` from rounding up to an extra step.
pub fn warmup_steps(total_steps: u64, warmup_ratio: f64) -> u64 {
    (warmup_ratio * total_steps as f64 - 1e-9).ceil().max(0.0) as u64
}

/// Linear warmup from 0 to `peak_lr`, then half-cosine decay to 0 at
/// `total_steps`. When there are no post-warmup steps the peak is held.
pub fn cosine_warmup_lr(step: u64, total_steps: u64, cfg: &TrainConfig) -> f64 {
    let total = total_steps.max(1);
    let step = step.min(total);
    let warm = warmup_steps(total, cfg.warmup_ratio);
    if step < warm {
        return cfg.peak_lr * step as f64 / warm as f64;
    }
    if total == warm {
        return cfg.peak_lr;
    }
    let progress = (step - warm) as f64 / (total - warm) as f64;
    cfg.peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn upd(w: f64, g: f64, lr: f64, wd: f64) -> f64 {
        let mut w = [w];
        let (mut m, mut v) = ([0.0], [0.0]);
        adamw_update(&mut w, &[g], &mut m, &mut v, 1, lr, 0.9, 0.999, 1e-8, wd);
        w[0]
    }

    #[test]
    fn first_step_hand_values() {
        // m_hat = v_hat = 1 on the first step.
        assert!((upd(1.0, 1.0, 0.1, 0.0) - 0.9).abs() < 1e-6);
        assert!((upd(1.0, 0.0, 0.1, 0.01) - 0.999).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_is_named() {
        let mut head = HeadParams::zeros(3, 4, 0);
        let mut grads = head.zeroed();
        grads.output.weight[5] = f64::NAN;
        let mut state = AdamWState::new(&head);
        let err = adamw_step(&mut head, &grads, &mut state, 0.1, &TrainConfig::default()).unwrap_err();
        assert!(err.to_string().contains("output.weight[5]"), "{err}");
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let run = || {
            let mut head = HeadParams::init(8, 4, 0, 9);
            let mut state = AdamWState::new(&head);
            let cfg = TrainConfig::default();
            for s in 0..10 {
                let mut g = head.zeroed();
                for (i, w) in g.output.weight.iter_mut().enumerate() {
                    *w = ((i + s) as f64 * 0.37).sin();
                }
                adamw_step(&mut head, &g, &mut state, 1e-3, &cfg).unwrap();
            }
            head
        };
        assert_eq!(run(), run());
    }

    fn cfg() -> TrainConfig {
        TrainConfig::default()
    }

    #[test]
    fn schedule_landmarks() {
        let c = cfg();
        assert_eq!(cosine_warmup_lr(0, 100, &c), 0.0);
        assert!((cosine_warmup_lr(10, 100, &c) - 5e-5).abs() <= 1e-12 * 5e-5);
        assert!((cosine_warmup_lr(55, 100, &c) - 2.5e-5).abs() <= 1e-12 * 2.5e-5);
        assert_eq!(cosine_warmup_lr(100, 100, &c), 0.0);
    }

    #[test]
    fn warmup_count_rounds_up_without_float_slop() {
        assert_eq!(warmup_steps(100, 0.1), 10);
        assert_eq!(warmup_steps(70, 0.1), 7);
        assert_eq!(warmup_steps(75, 0.1), 8);
        assert_eq!(warmup_steps(5, 0.0), 0);
    }

    #[test]
    fn degenerate_schedule_holds_peak() {
        let c = TrainConfig {
            warmup_ratio: 0.99,
            ..cfg()
        };
        assert_eq!(warmup_steps(1, 0.99), 1);
        assert_eq!(cosine_warmup_lr(1, 1, &c), c.peak_lr);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn schedule_is_nonnegative_and_continuous(total in 1u64..5000, ratio in 0.0f64..0.9) {
                let c = TrainConfig { warmup_ratio: ratio, ..cfg() };
                for s in 0..=total.min(400) {
                    prop_assert!(cosine_warmup_lr(s, total, &c) >= 0.0);
                }
                let w = warmup_steps(total, ratio);
                if w > 0 && w < total {
                    prop_assert!((cosine_warmup_lr(w, total, &c) - c.peak_lr).abs() < 1e-18);
                    // The warmup ramp reaches the peak at the boundary.
                    prop_assert!((c.peak_lr * w as f64 / w as f64 - c.peak_lr).abs() < 1e-18);
                }
            }
        }
    }
}
