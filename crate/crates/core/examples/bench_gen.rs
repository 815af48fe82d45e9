use std::time::Instant;
use vswarm_core::dataset::{generate_run, run_rng, GenConfig};

fn main() {
    let gen = GenConfig::default();
    // warmup
    let _ = generate_run(0, &gen, &mut run_rng(0, 0)).unwrap();
    let t0 = Instant::now();
    let mut samples = 0usize;
    let mut runs = 0u32;
    while t0.elapsed().as_secs_f64() < 10.0 {
        let (s, _) = generate_run(runs, &gen, &mut run_rng(0, runs)).unwrap();
        samples += s.len();
        runs += 1;
    }
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "{} runs, {} samples in {:.1} s -> {:.0} samples/s, 24k in {:.1} min",
        runs, samples, dt,
        samples as f64 / dt,
        24_000.0 / (samples as f64 / dt) / 60.0
    );
}
