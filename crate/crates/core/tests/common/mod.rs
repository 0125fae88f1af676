#![allow(dead_code)]

pub mod conjugate;
pub mod gradcheck;

use distill_core::data::{synthetic_blobs, UnlabeledPool};
use distill_core::distill::{distill_online, eval_distill_loss, Divergence, StudentConfig};
use distill_core::nn::{mlp, Layer, NetworkSpec, ParamVector};
use distill_core::rng::{substream, Stream};
use distill_core::Tensor;

/// Fixed two-class teacher: logits (1.5 x₀ + 0.5 x₁, −1.5 x₀ − 0.5 x₁).
pub fn toy_teacher() -> (NetworkSpec, ParamVector<f64>) {
    let spec = NetworkSpec::new(vec![2], vec![Layer::Dense { inputs: 2, outputs: 2 }]).unwrap();
    let theta = ParamVector::from_values(&spec, vec![1.5, -1.5, 0.5, -0.5, 0.0, 0.0]).unwrap();
    (spec, theta)
}

/// 25×25 points on [−6, 6]².
pub fn held_out_grid() -> Tensor<f64> {
    let ticks: Vec<f64> = (0..25).map(|i| -6.0 + 0.5 * i as f64).collect();
    let data = ticks.iter().flat_map(|&a| ticks.iter().flat_map(move |&b| [a, b])).collect();
    Tensor::new(vec![625, 2], data).unwrap()
}

pub fn toy_pool(seed: u64) -> UnlabeledPool<f64> {
    synthetic_blobs::<f64>(2, 2, 500, 3.0, seed).unwrap().to_pool()
}

pub fn toy_student() -> NetworkSpec {
    mlp(2, 16, 1.0, 2, Some(0.5)).unwrap()
}

/// Mean KL(teacher ‖ student) on the held-out grid before and after `iters`
/// online distillation steps against the fixed teacher.
pub fn toy_distillation(seed: u64, iters: usize) -> (f64, f64) {
    let (tspec, theta) = toy_teacher();
    let sspec = toy_student();
    let grid = held_out_grid();
    let omega0 = ParamVector::init(&sspec, &mut substream(seed, Stream::StudentInit));
    let cfg = StudentConfig { seed, ..StudentConfig::default() };
    let rows = grid.batch_size() as f64;
    let before = eval_distill_loss(&sspec, &omega0, &tspec, &theta, &grid, Divergence::ForwardKl).unwrap() / rows;
    let omega =
        distill_online(&tspec, std::iter::repeat_n(theta.clone(), iters), &sspec, omega0, &toy_pool(seed), 50, &cfg)
            .unwrap();
    let after = eval_distill_loss(&sspec, &omega, &tspec, &theta, &grid, Divergence::ForwardKl).unwrap() / rows;
    (before, after)
}
