//! Times one forward+backward pass over a 128-sample batch and projects
//! the wall-clock cost of a 20k-sample training epoch.
use std::time::Instant;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vswarm_core::nn::network::{BatchInput, Network, loss_and_grads};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut net = Network::standard();
    net.init_weights(&mut rng);
    net.pixel_mean = 180.0;
    net.pixel_std = 60.0;

    let batch = 128usize;
    let len = 64 * 384;
    let x: Vec<f32> = (0..batch * len).map(|i| ((i % 251) as f32 - 125.0) / 60.0).collect();
    let targets: Vec<f32> = (0..batch * 3).map(|i| (i % 7) as f32 * 0.1).collect();
    let masks: Vec<bool> = (0..batch * 3072).map(|i| i % 2 == 0).collect();

    // warmup
    let input = BatchInput { x: &x, targets: &targets, masks: Some(&masks), batch };
    let _ = loss_and_grads(&net, &input, 5e-4).unwrap();

    let t0 = Instant::now();
    let reps = 3;
    for _ in 0..reps {
        let _ = loss_and_grads(&net, &input, 5e-4).unwrap();
    }
    let per_batch = t0.elapsed().as_secs_f64() / reps as f64;
    let per_epoch_20k = per_batch * (20_000.0 / batch as f64);
    println!("batch(128) fwd+bwd: {per_batch:.3} s  -> epoch(20k): {per_epoch_20k:.1} s");
}
