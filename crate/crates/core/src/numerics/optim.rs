use crate::error::{Error, Result};

use super::real::Real;
use super::store::ParamStore;

/// Maps parameter names to learning rates by longest matching prefix.
///
/// The trunk (encoders, position MLPs, fusion) and the task heads train at
/// different rates; a name that matches no pattern is an error rather than
/// a silent skip.
#[derive(Debug, Clone)]
pub struct LrMap {
    patterns: Vec<(String, f64)>,
}

impl LrMap {
    pub fn new(patterns: Vec<(String, f64)>) -> Self {
        LrMap { patterns }
    }

    /// The standard two-group map: `enc.*`/`fusion.*` at `lr_encoder`,
    /// `head.*` at `lr_heads`.
    pub fn standard(lr_encoder: f64, lr_heads: f64) -> Self {
        LrMap::new(vec![
            ("enc.".into(), lr_encoder),
            ("fusion.".into(), lr_encoder),
            ("head.".into(), lr_heads),
        ])
    }

    pub fn rate_for(&self, name: &str) -> Result<f64> {
        let mut best: Option<(usize, f64)> = None;
        for (prefix, rate) in &self.patterns {
            if name.starts_with(prefix.as_str())
                && best.is_none_or(|(len, _)| prefix.len() > len)
            {
                best = Some((prefix.len(), *rate));
            }
        }
        best.map(|(_, r)| r).ok_or_else(|| {
            Error::Config(format!("no learning rate pattern matches parameter `{name}`"))
        })
    }

    /// Scales every rate, e.g. for warmup.
    pub fn scaled(&self, factor: f64) -> Self {
        LrMap::new(
            self.patterns
                .iter()
                .map(|(p, r)| (p.clone(), r * factor))
                .collect(),
        )
    }
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamW {
    /// One update over every parameter, using the per-name rate map.
    /// Gradients are consumed as-is; callers zero them afterwards.
    pub fn step<F: Real>(&self, store: &mut ParamStore<F>, lr_map: &LrMap) -> Result<()> {
        let t = store.bump_step();
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        let (b1, b2) = (F::from_f64(self.beta1), F::from_f64(self.beta2));
        let (ob1, ob2) = (F::from_f64(1.0 - self.beta1), F::from_f64(1.0 - self.beta2));
        let eps = F::from_f64(self.eps);
        let rates: Vec<f64> = (0..store.len())
            .map(|i| lr_map.rate_for(store.name(super::store::ParamId(i))))
            .collect::<Result<_>>()?;
        for (i, &lr) in rates.iter().enumerate() {
            let decay = F::from_f64(1.0 - lr * self.weight_decay);
            let step1 = F::from_f64(lr / bc1);
            let inv_bc2 = F::from_f64(1.0 / bc2);
            let (value, grad, m1, m2) = store.state_mut(i);
            let v = value.data_mut();
            let g = grad.data();
            let m = m1.data_mut();
            let s = m2.data_mut();
            for j in 0..v.len() {
                m[j] = b1 * m[j] + ob1 * g[j];
                s[j] = b2 * s[j] + ob2 * g[j] * g[j];
                let denom = (s[j] * inv_bc2).sqrt() + eps;
                v[j] = v[j] * decay - step1 * m[j] / denom;
            }
        }
        Ok(())
    }
}

/// Global-norm gradient clipping. Returns the pre-clip norm.
pub fn clip_grad_norm<F: Real>(store: &mut ParamStore<F>, max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for i in 0..store.len() {
        for v in store.grad(super::store::ParamId(i)).data() {
            let x = v.to_f64();
            sq += x * x;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        store.scale_grads(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Init, Tensor};

    fn scalar_store(value: f64, grad: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new(0);
        let id = s.register("head.w", vec![1], Init::Zeros);
        *s.value_mut(id) = Tensor::scalar(value);
        s.accumulate_grads(&[Some(Tensor::scalar(grad))]);
        s
    }

    #[test]
    fn zero_grad_zero_decay_leaves_params_unchanged() {
        let mut s = scalar_store(1.5, 0.0);
        let opt = AdamW {
            weight_decay: 0.0,
            ..AdamW::default()
        };
        opt.step(&mut s, &LrMap::standard(5e-5, 1e-3)).unwrap();
        let id = s.id_of("head.w").unwrap();
        assert_eq!(s.value(id).item(), 1.5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // Bias correction makes the very first update ~lr for unit gradient.
        let mut s = scalar_store(1.0, 1.0);
        let opt = AdamW {
            weight_decay: 0.0,
            ..AdamW::default()
        };
        let lr = LrMap::new(vec![("head.".into(), 0.1)]);
        opt.step(&mut s, &lr).unwrap();
        let id = s.id_of("head.w").unwrap();
        let v = s.value(id).item();
        assert!((v - 0.9).abs() < 1e-6, "got {v}");
    }

    #[test]
    fn decoupled_decay_shrinks_by_lr_times_wd() {
        let mut s = scalar_store(2.0, 0.0);
        let opt = AdamW::default(); // wd = 0.01
        let lr = LrMap::new(vec![("head.".into(), 0.5)]);
        opt.step(&mut s, &lr).unwrap();
        let id = s.id_of("head.w").unwrap();
        let v = s.value(id).item();
        assert!((v - 2.0 * (1.0 - 0.5 * 0.01)).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn unmatched_name_fails_loudly() {
        let mut s = ParamStore::<f64>::new(0);
        s.register("mystery.w", vec![1], Init::Zeros);
        let err = AdamW::default()
            .step(&mut s, &LrMap::standard(5e-5, 1e-3))
            .unwrap_err();
        assert!(err.to_string().contains("mystery.w"));
    }

    #[test]
    fn clip_rescales_to_max_norm() {
        let mut s = ParamStore::<f64>::new(0);
        s.register("head.w", vec![2], Init::Zeros);
        s.accumulate_grads(&[Some(Tensor::from_f64_slice(vec![2], &[3.0, 4.0]))]);
        let pre = clip_grad_norm(&mut s, 1.0);
        assert!((pre - 5.0).abs() < 1e-12);
        let id = s.id_of("head.w").unwrap();
        let g = s.grad(id);
        let post = (g.data()[0].powi(2) + g.data()[1].powi(2)).sqrt();
        assert!((post - 1.0).abs() < 1e-12);
    }
}
