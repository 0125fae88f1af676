//! 1-D Gaussian location model with a conjugate prior, sampled by SGLD.

use distill_core::rng::{substream, Stream};
use distill_core::sgld::{run_chain, GaussianLocation, GaussianNoise, NoiseScale, SgldError, TeacherConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub struct Moments {
    pub mean: f64,
    pub var: f64,
}

/// y_i ~ N(θ, 1), θ ~ N(0, 1/λ): posterior N(Σy/(λ+N), 1/(λ+N)).
pub fn conjugate_run(seed: u64, noise: NoiseScale) -> (Moments, Moments) {
    let (n, lambda) = (100, 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y: Vec<f64> = Normal::new(1.5, 1.0).unwrap().sample_iter(&mut rng).take(n).collect();
    let analytic = Moments { mean: y.iter().sum::<f64>() / (lambda + n as f64), var: 1.0 / (lambda + n as f64) };
    let cfg = TeacherConfig {
        eta: 1e-4,
        lambda,
        n_total: n,
        batch_size: n,
        burn_in: 10_000,
        thinning: 1,
        total_iters: 200_000,
        seed,
        noise,
    };
    let mut samples = Vec::with_capacity(cfg.retained_count() as usize);
    run_chain::<f64, _, _, _, _, SgldError>(
        &GaussianLocation,
        vec![0.0],
        std::iter::repeat(y.clone()),
        &cfg,
        GaussianNoise::new(substream(seed, Stream::Langevin)),
        |e| {
            if e.retained {
                samples.push(e.theta[0]);
            }
            Ok(())
        },
    )
    .unwrap();
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (samples.len() - 1) as f64;
    (Moments { mean, var }, analytic)
}
