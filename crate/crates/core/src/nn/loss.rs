//! Scalar losses over batched network outputs, returned together with their
//! gradient with respect to those outputs.

use super::Real;

/// Mean over the batch of the squared L2 error of each row.
pub fn mse<T: Real>(pred: &[T], target: &[T], dim: usize) -> (T, Vec<T>) {
    assert_eq!(pred.len(), target.len());
    assert!(dim > 0 && pred.len() % dim == 0);
    let batch = T::from(pred.len() / dim).expect("batch fits");
    let two = T::lit(2.0);
    let mut value = T::zero();
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            value += d * d;
            two * d / batch
        })
        .collect();
    (value / batch, grad)
}

/// Squared L2 error per row, accumulated in `f64`.
pub fn row_squared_errors(pred: &[f32], target: &[f32], dim: usize) -> Vec<f64> {
    assert_eq!(pred.len(), target.len());
    pred.chunks_exact(dim)
        .zip(target.chunks_exact(dim))
        .map(|(p, t)| p.iter().zip(t).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_value_and_gradient() {
        let (l, g) = mse(&[1.0f64, 2.0, 3.0, 5.0], &[0.0, 2.0, 1.0, 5.0], 2);
        // rows: (1, 0) -> 1, (2, 0) -> 4; mean 2.5
        assert_eq!(l, 2.5);
        assert_eq!(g, vec![1.0, 0.0, 2.0, 0.0]);
    }
}
