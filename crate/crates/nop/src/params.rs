//! Named parameter storage, initialization and per-pass binding to a tape.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::norm::BatchStats;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub value: Tensor,
    /// Buffers (running statistics) are stored and checkpointed but not
    /// optimized.
    pub trainable: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(self.entries.iter().all(|e| e.name != name), "duplicate parameter {name}");
        self.entries.push(Entry { name, value, trainable: true });
        ParamId(self.entries.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let id = self.add(name, value);
        self.entries[id.0].trainable = false;
        id
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Entry] {
        &mut self.entries
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.value)
    }

    /// Number of trainable scalars.
    pub fn count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }

    /// `(name, shape)` of every entry, in registration order.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        self.entries.iter().map(|e| (e.name.clone(), e.value.shape.clone())).collect()
    }

    /// Applies running-statistics updates collected during a training pass.
    pub fn apply_stats(&mut self, updates: &[(ParamId, ParamId, BatchStats)]) {
        for (mean, var, stats) in updates {
            let mut m = self.get(*mean).clone();
            let mut v = self.get(*var).clone();
            stats.blend_into(&mut m, &mut v);
            *self.get_mut(*mean) = m;
            *self.get_mut(*var) = v;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward pass: the tape, every stored tensor bound as a leaf, the mode
/// and the batch statistics gathered on the way.
pub struct Ctx<'a> {
    pub tape: Tape,
    pub params: &'a ParamStore,
    vars: Vec<Var>,
    pub mode: Mode,
    pub stats: Vec<(ParamId, ParamId, BatchStats)>,
}

impl<'a> Ctx<'a> {
    pub fn new(params: &'a ParamStore, mode: Mode) -> Self {
        let mut tape = Tape::new();
        let vars = params.entries.iter().map(|e| tape.leaf(e.value.clone())).collect();
        Self { tape, params, vars, mode, stats: Vec::new() }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients of every entry after `tape.backward` (zeros for buffers).
    pub fn grads(&self) -> Vec<Tensor> {
        self.vars.iter().map(|&v| self.tape.grad(v)).collect()
    }
}

/// Kaiming-uniform: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-bound..bound)).collect())
}

/// Complex-normal spectral weights scaled by `1 / (C_in * modes)`; returns
/// the real and imaginary parts of `[modes, C_in, C_out]`.
pub fn spectral_init(modes: usize, cin: usize, cout: usize, rng: &mut impl Rng) -> (Tensor, Tensor) {
    let s = 1.0 / (cin * modes).max(1) as f64;
    let n = modes * cin * cout;
    let mut draw = || -> Vec<f64> {
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                s * z
            })
            .collect()
    };
    let re = draw();
    let im = draw();
    (Tensor::new(vec![modes, cin, cout], re), Tensor::new(vec![modes, cin, cout], im))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buffers_are_not_counted() {
        let mut p = ParamStore::new();
        p.add("w", Tensor::zeros(&[3, 4]));
        p.add_buffer("running_mean", Tensor::zeros(&[4]));
        assert_eq!(p.count(), 12);
        assert_eq!(p.manifest().len(), 2);
    }

    #[test]
    fn kaiming_bound_holds() {
        let mut rng = pwt_core::rng::seeded(1, 0);
        let w = kaiming_uniform(&[8, 3, 3, 3], 27, &mut rng);
        let b = (6.0f64 / 27.0).sqrt();
        assert!(w.data.iter().all(|v| v.abs() <= b));
        assert!(w.data.iter().any(|v| v.abs() > 0.5 * b));
    }
}
