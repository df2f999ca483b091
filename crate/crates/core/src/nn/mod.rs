//! Dense feed-forward networks with hand-written reverse-mode gradients.
//!
//! Hidden layers use ReLU; the output layer is identity or tanh. Parameters
//! live in one flat buffer (per layer: row-major weights `out×in`, then
//! biases), which keeps Adam, Polyak averaging and checkpointing trivial.
//!
//! Batched inputs and outputs are flat row-major buffers of shape
//! `batch × dim`.

mod adam;
mod checkpoint;
pub mod linalg;
pub mod loss;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
pub use adam::Adam;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use linalg::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    Tanh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T: Real = f32> {
    sizes: Vec<usize>,
    output: OutputActivation,
    params: Vec<T>,
    /// Start of each layer's weight block in `params`.
    offsets: Vec<usize>,
}

/// Activations recorded by [`Mlp::forward_tape`] for a later backward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape<T: Real = f32> {
    batch: usize,
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { batch: 0, acts: Vec::new() }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn output(&self) -> &[T] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

fn layout(sizes: &[usize]) -> (Vec<usize>, usize) {
    let mut offsets = Vec::with_capacity(sizes.len().saturating_sub(1));
    let mut total = 0;
    for pair in sizes.windows(2) {
        offsets.push(total);
        total += pair[0] * pair[1] + pair[1];
    }
    (offsets, total)
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::config(format!(
            "a network needs at least an input and an output size, got {sizes:?}"
        )));
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::config(format!("layer sizes must be positive, got {sizes:?}")));
    }
    Ok(())
}

impl<T: Real> Mlp<T> {
    /// Weights uniform in `±1/sqrt(fan_in)`, zero biases, deterministic in `seed`.
    pub fn new(sizes: &[usize], output: OutputActivation, seed: u64) -> Result<Self> {
        validate_sizes(sizes)?;
        let (offsets, total) = layout(sizes);
        let mut params = vec![T::zero(); total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (l, pair) in sizes.windows(2).enumerate() {
            let (fan_in, out) = (pair[0], pair[1]);
            let limit = 1.0 / (fan_in as f64).sqrt();
            let start = offsets[l];
            for w in &mut params[start..start + fan_in * out] {
                *w = T::lit(rng.random_range(-limit..limit));
            }
        }
        Ok(Self { sizes: sizes.to_vec(), output, params, offsets })
    }

    pub fn from_params(sizes: &[usize], output: OutputActivation, params: Vec<T>) -> Result<Self> {
        validate_sizes(sizes)?;
        let (offsets, total) = layout(sizes);
        if params.len() != total {
            return Err(Error::shape(format!(
                "architecture {sizes:?} needs {total} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self { sizes: sizes.to_vec(), output, params, offsets })
    }

    /// Same architecture and parameters in another float type.
    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            sizes: self.sizes.clone(),
            output: self.output,
            params: self.params.iter().map(|p| U::from(*p).expect("finite parameter")).collect(),
            offsets: self.offsets.clone(),
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("validated non-empty")
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn same_architecture(&self, other: &Mlp<T>) -> bool {
        self.sizes == other.sizes && self.output == other.output
    }

    fn weight_range(&self, layer: usize) -> std::ops::Range<usize> {
        let start = self.offsets[layer];
        start..start + self.sizes[layer] * self.sizes[layer + 1]
    }

    fn bias_range(&self, layer: usize) -> std::ops::Range<usize> {
        let w = self.weight_range(layer);
        w.end..w.end + self.sizes[layer + 1]
    }

    /// Row-major `out×in` weight matrix of `layer`.
    pub fn weights(&self, layer: usize) -> &[T] {
        &self.params[self.weight_range(layer)]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [T] {
        let r = self.weight_range(layer);
        &mut self.params[r]
    }

    pub fn biases(&self, layer: usize) -> &[T] {
        &self.params[self.bias_range(layer)]
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut [T] {
        let r = self.bias_range(layer);
        &mut self.params[r]
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Single-sample forward pass with a dimension check.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "network expects input of dimension {}, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        Ok(self.forward_batch(x, 1))
    }

    /// Batched forward pass. Panics if `x.len() != batch * input_dim`.
    pub fn forward_batch(&self, x: &[T], batch: usize) -> Vec<T> {
        let mut tape = Tape::new();
        self.forward_tape(x, batch, &mut tape);
        tape.acts.pop().unwrap_or_default()
    }

    /// Batched forward pass that keeps every activation for [`Mlp::backward`].
    pub fn forward_tape<'t>(&self, x: &[T], batch: usize, tape: &'t mut Tape<T>) -> &'t [T] {
        assert_eq!(x.len(), batch * self.input_dim(), "input buffer does not match batch × input_dim");
        tape.batch = batch;
        tape.acts.resize_with(self.sizes.len(), Vec::new);
        tape.acts[0].clear();
        tape.acts[0].extend_from_slice(x);
        let last = self.num_layers() - 1;
        for l in 0..self.num_layers() {
            let (inp, out) = (self.sizes[l], self.sizes[l + 1]);
            let (before, after) = tape.acts.split_at_mut(l + 1);
            let z = &mut after[0];
            z.resize(batch * out, T::zero());
            linalg::affine(&before[l], self.weights(l), self.biases(l), z, batch, inp, out);
            if l < last {
                for v in z.iter_mut() {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
            } else if self.output == OutputActivation::Tanh {
                for v in z.iter_mut() {
                    *v = v.tanh();
                }
            }
        }
        tape.output()
    }

    /// Reverse pass from `d_out = dL/d(output)`.
    ///
    /// Parameter gradients are *added* into `param_grads` when given. The
    /// gradient with respect to the network input is returned when
    /// `want_input` is set.
    pub fn backward(
        &self,
        tape: &Tape<T>,
        d_out: &[T],
        mut param_grads: Option<&mut [T]>,
        want_input: bool,
    ) -> Option<Vec<T>> {
        let batch = tape.batch;
        assert_eq!(tape.acts.len(), self.sizes.len(), "tape was recorded by a different network");
        assert_eq!(d_out.len(), batch * self.output_dim());
        if let Some(g) = param_grads.as_deref() {
            assert_eq!(g.len(), self.params.len());
        }

        let last = self.num_layers() - 1;
        let mut dz: Vec<T> = d_out.to_vec();
        if self.output == OutputActivation::Tanh {
            for (d, y) in dz.iter_mut().zip(&tape.acts[last + 1]) {
                *d *= T::one() - *y * *y;
            }
        }
        for l in (0..self.num_layers()).rev() {
            let (inp, out) = (self.sizes[l], self.sizes[l + 1]);
            let x = &tape.acts[l];
            if let Some(g) = param_grads.as_deref_mut() {
                let wr = self.weight_range(l);
                linalg::accumulate_weight_grad(&dz, x, &mut g[wr], batch, inp, out);
                let br = self.bias_range(l);
                let gb = &mut g[br];
                for row in dz.chunks_exact(out) {
                    for (acc, d) in gb.iter_mut().zip(row) {
                        *acc += *d;
                    }
                }
            }
            if l == 0 && !want_input {
                return None;
            }
            let mut dx = vec![T::zero(); batch * inp];
            linalg::input_grad(&dz, self.weights(l), &mut dx, batch, inp, out);
            if l > 0 {
                // Hidden activations are post-ReLU; zero means the unit was off.
                for (d, a) in dx.iter_mut().zip(x) {
                    if *a <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            dz = dx;
        }
        Some(dz)
    }

    /// Evaluates a scalar loss on the batch outputs and returns it with the
    /// parameter gradient.
    ///
    /// `loss` maps the `batch × output_dim` outputs to `(value, dvalue/doutputs)`.
    pub fn loss_and_grad<F>(&self, x: &[T], batch: usize, loss: F) -> Result<(T, Vec<T>)>
    where
        F: FnOnce(&[T]) -> (T, Vec<T>),
    {
        if batch == 0 {
            return Err(Error::usage("loss gradient needs a non-empty batch"));
        }
        if x.len() != batch * self.input_dim() {
            return Err(Error::shape(format!(
                "batch of {batch} needs {} inputs, got {}",
                batch * self.input_dim(),
                x.len()
            )));
        }
        let mut tape = Tape::new();
        let out = self.forward_tape(x, batch, &mut tape);
        let (value, d_out) = loss(out);
        if d_out.len() != out.len() {
            return Err(Error::shape(format!(
                "loss returned {} output gradients for {} outputs",
                d_out.len(),
                out.len()
            )));
        }
        let mut grads = vec![T::zero(); self.params.len()];
        self.backward(&tape, &d_out, Some(&mut grads), false);
        Ok((value, grads))
    }
}

/// `target ← (1 − rate)·target + rate·online`, parameter by parameter.
pub fn polyak_update<T: Real>(target: &mut Mlp<T>, online: &Mlp<T>, rate: T) -> Result<()> {
    if !target.same_architecture(online) {
        return Err(Error::shape(format!(
            "Polyak update between architectures {:?} and {:?}",
            target.sizes, online.sizes
        )));
    }
    if !(rate >= T::zero() && rate <= T::one()) {
        return Err(Error::usage("Polyak rate must lie in [0, 1]"));
    }
    let keep = T::one() - rate;
    for (t, o) in target.params.iter_mut().zip(&online.params) {
        *t = keep * *t + rate * *o;
    }
    Ok(())
}
