use std::collections::HashMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::real::Real;
use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Index of a named parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Initialization scheme for a registered parameter.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Gaussian with the given standard deviation.
    Normal(f64),
    /// Gaussian scaled by `1/sqrt(fan_in)`.
    XavierIn(usize),
}

/// Named parameter tensors with gradient accumulators and AdamW state.
///
/// Registration order is the canonical order: checkpoints serialize it and
/// tape binding reproduces it.
pub struct ParamStore<F: Real> {
    names: Vec<String>,
    values: Vec<Tensor<F>>,
    grads: Vec<Tensor<F>>,
    moment1: Vec<Tensor<F>>,
    moment2: Vec<Tensor<F>>,
    step: u64,
    index: HashMap<String, usize>,
    rng: ChaCha8Rng,
}

impl<F: Real> ParamStore<F> {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            moment1: Vec::new(),
            moment2: Vec::new(),
            step: 0,
            index: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn register(&mut self, name: &str, shape: Vec<usize>, init: Init) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        let n: usize = shape.iter().product();
        let data: Vec<F> = match init {
            Init::Zeros => vec![F::ZERO; n],
            Init::Ones => vec![F::ONE; n],
            Init::Normal(std) => (0..n)
                .map(|_| F::from_f64(sample_normal(&mut self.rng) * std))
                .collect(),
            Init::XavierIn(fan_in) => {
                let std = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n)
                    .map(|_| F::from_f64(sample_normal(&mut self.rng) * std))
                    .collect()
            }
        };
        let t = Tensor::new(shape.clone(), data);
        let id = self.values.len();
        self.names.push(name.to_string());
        self.values.push(t);
        self.grads.push(Tensor::zeros(shape.clone()));
        self.moment1.push(Tensor::zeros(shape.clone()));
        self.moment2.push(Tensor::zeros(shape));
        self.index.insert(name.to_string(), id);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub(crate) fn bump_step(&mut self) -> u64 {
        self.step += 1;
        self.step
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(|s| s.as_str())
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<F> {
        &self.grads[id.0]
    }

    pub(crate) fn state_mut(
        &mut self,
        i: usize,
    ) -> (&mut Tensor<F>, &Tensor<F>, &mut Tensor<F>, &mut Tensor<F>) {
        let (v, g, m1, m2) = (
            &mut self.values[i],
            &self.grads[i],
            &mut self.moment1[i],
            &mut self.moment2[i],
        );
        (v, g, m1, m2)
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            for v in g.data_mut() {
                *v = F::ZERO;
            }
        }
    }

    /// Total parameter count across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|t| t.numel()).sum()
    }

    /// Binds every parameter onto `tape` as a grad-tracked leaf, in
    /// registration order. `vars[id.0]` is the leaf for `id`.
    pub fn bind(&self, tape: &mut Tape<F>) -> Vec<Var> {
        self.values
            .iter()
            .map(|t| tape.leaf(t.clone(), true))
            .collect()
    }

    /// Adds the tape gradients of bound leaves into the store accumulators.
    pub fn accumulate_from_tape(&mut self, tape: &Tape<F>, vars: &[Var]) {
        assert_eq!(vars.len(), self.values.len(), "bind/accumulate mismatch");
        for (i, &v) in vars.iter().enumerate() {
            if let Some(g) = tape.grad(v) {
                let dst = self.grads[i].data_mut();
                for (d, s) in dst.iter_mut().zip(g.data()) {
                    *d += *s;
                }
            }
        }
    }

    /// Adds raw gradient tensors, in registration order (used when batches
    /// are evaluated on worker tapes and reduced in a fixed order).
    pub fn accumulate_grads(&mut self, grads: &[Option<Tensor<F>>]) {
        assert_eq!(grads.len(), self.values.len(), "gradient list mismatch");
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                let dst = self.grads[i].data_mut();
                for (d, s) in dst.iter_mut().zip(g.data()) {
                    *d += *s;
                }
            }
        }
    }

    pub fn scale_grads(&mut self, c: f64) {
        let fc = F::from_f64(c);
        for g in &mut self.grads {
            for v in g.data_mut() {
                *v *= fc;
            }
        }
    }

    /// Casts values into a store of another precision (optimizer state and
    /// the RNG are reset; intended for eval/grad-check copies).
    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        let mut out = ParamStore::new(0);
        for (name, value) in self.names.iter().zip(&self.values) {
            let id = out.register(name, value.shape().to_vec(), Init::Zeros);
            *out.value_mut(id) = value.cast();
        }
        out
    }
}

fn sample_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; two uniforms per normal, second draw discarded.
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registration_is_seed_deterministic() {
        let mut a = ParamStore::<f32>::new(42);
        let mut b = ParamStore::<f32>::new(42);
        let ia = a.register("w", vec![4, 4], Init::Normal(0.02));
        let ib = b.register("w", vec![4, 4], Init::Normal(0.02));
        assert_eq!(a.value(ia).data(), b.value(ib).data());
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new(0);
        s.register("w", vec![1], Init::Zeros);
        s.register("w", vec![1], Init::Zeros);
    }

    #[test]
    fn bind_and_accumulate_round_trip() {
        let mut s = ParamStore::<f64>::new(1);
        let w = s.register("w", vec![2, 2], Init::Ones);
        let mut tape = Tape::new();
        let vars = s.bind(&mut tape);
        let loss = tape.sum_all(vars[w.0]);
        tape.backward(loss);
        s.accumulate_from_tape(&tape, &vars);
        assert_eq!(s.grad(w).data(), &[1.0; 4]);
    }
}
