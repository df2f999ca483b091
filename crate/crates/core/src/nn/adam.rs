use super::{Mlp, Real};
use crate::error::{Error, Result};

/// Adam with bias correction. Moments mirror the flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T: Real = f32> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<T>,
    v: Vec<T>,
    step: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(num_params: usize, lr: T) -> Self {
        Self {
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            m: vec![T::zero(); num_params],
            v: vec![T::zero(); num_params],
            step: 0,
        }
    }

    pub fn for_net(net: &Mlp<T>, lr: T) -> Self {
        Self::new(net.num_params(), lr)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[T], &[T]) {
        (&self.m, &self.v)
    }

    /// One update. Non-finite gradients leave both the network and the
    /// optimizer state untouched.
    pub fn step(&mut self, net: &mut Mlp<T>, grads: &[T]) -> Result<()> {
        if grads.len() != net.num_params() || self.m.len() != grads.len() {
            return Err(Error::shape(format!(
                "Adam state for {} parameters got {} gradients for a {}-parameter network",
                self.m.len(),
                grads.len(),
                net.num_params()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient at parameter {i}")));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for ((p, &g), (m, v)) in net
            .params_mut()
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
