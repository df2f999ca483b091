use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stc_core::nn::{loss::mse, Mlp, OutputActivation};

fn loss_at(net: &Mlp<f64>, x: &[f64], t: &[f64], batch: usize) -> f64 {
    mse(&net.forward_batch(x, batch), t, net.output_dim()).0
}

#[test]
fn reverse_mode_matches_central_differences() {
    let h = 1e-4;
    let mut worst = 0.0f64;
    for trial in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let depth = rng.random_range(1..4);
        let mut sizes = vec![rng.random_range(1..6)];
        sizes.extend((0..depth).map(|_| rng.random_range(2..9)));
        sizes.push(rng.random_range(1..4));
        let head = if trial % 2 == 0 { OutputActivation::Identity } else { OutputActivation::Tanh };
        // Random biases too: zero biases can park pre-activations on the ReLU kink.
        let mut net = Mlp::<f64>::new(&sizes, head, trial).unwrap();
        for p in net.params_mut() {
            *p = rng.random_range(-1.0..1.0);
        }
        let batch = rng.random_range(1..9);
        let x: Vec<f64> = (0..batch * sizes[0]).map(|_| rng.random_range(-1.5..1.5)).collect();
        let t: Vec<f64> = (0..batch * net.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dim = net.output_dim();
        let (_, grad) = net.loss_and_grad(&x, batch, |out| mse(out, &t, dim)).unwrap();
        for i in 0..net.num_params() {
            let orig = net.params()[i];
            net.params_mut()[i] = orig + h;
            let up = loss_at(&net, &x, &t, batch);
            net.params_mut()[i] = orig - h;
            let down = loss_at(&net, &x, &t, batch);
            net.params_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-3, "max relative error {worst:e}");
}
