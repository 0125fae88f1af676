//! Independent loss oracles and central finite differences.

use distill_core::distill::{distill_loss, Divergence};
use distill_core::nn::{
    backward, forward, forward_trace, nll_loss, softmax, ForwardMode, Layer, NetworkSpec, ParamVector,
};
use distill_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn log_softmax_row(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

pub fn oracle_nll(logits: &Tensor<f64>, labels: &[u8]) -> f64 {
    logits.rows().zip(labels).map(|(z, &y)| -log_softmax_row(z)[y as usize]).sum()
}

pub fn oracle_forward_kl(logits: &Tensor<f64>, teacher: &Tensor<f64>) -> f64 {
    logits
        .rows()
        .zip(teacher.rows())
        .map(|(z, t)| {
            let ls = log_softmax_row(z);
            t.iter().zip(&ls).filter(|(&tk, _)| tk > 0.0).map(|(&tk, &lk)| tk * (tk.ln() - lk)).sum::<f64>()
        })
        .sum()
}

pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6)).fold(0.0, f64::max)
}

pub fn numeric_grad(params: &ParamVector<f64>, loss: impl Fn(&ParamVector<f64>) -> f64) -> Vec<f64> {
    let mut p = params.clone();
    (0..params.len())
        .map(|i| {
            let orig = p.values()[i];
            p.values_mut()[i] = orig + H;
            let up = loss(&p);
            p.values_mut()[i] = orig - H;
            let down = loss(&p);
            p.values_mut()[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

pub fn small_fcnn(dropout: bool) -> NetworkSpec {
    let mut layers = vec![Layer::Dense { inputs: 2, outputs: 5 }, Layer::Relu];
    if dropout {
        layers.push(Layer::Dropout { rate: 0.3 });
    }
    layers.push(Layer::Dense { inputs: 5, outputs: 3 });
    NetworkSpec::new(vec![2], layers).unwrap()
}

pub fn small_cnn() -> NetworkSpec {
    NetworkSpec::new(
        vec![1, 8, 8],
        vec![
            Layer::Conv2d { in_channels: 1, kernels: 2, kernel_size: 3, stride: 1 },
            Layer::Relu,
            Layer::MaxPool2d { kernel_size: 2 },
            Layer::Flatten,
            Layer::Dense { inputs: 18, outputs: 3 },
        ],
    )
    .unwrap()
}

pub struct Case {
    pub spec: NetworkSpec,
    pub params: ParamVector<f64>,
    pub inputs: Tensor<f64>,
    pub labels: Vec<u8>,
    pub teacher: Tensor<f64>,
    pub mode: ForwardMode,
}

pub fn case(spec: NetworkSpec, seed: u64, mode: ForwardMode) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ParamVector::init(&spec, &mut rng);
    // non-zero biases so the bias gradients are exercised away from init
    let mut params = params;
    for v in params.values_mut() {
        *v += rng.gen_range(-0.1..0.1);
    }
    let batch = 4;
    let inputs: Vec<f64> = (0..batch * spec.input_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut shape = vec![batch];
    shape.extend_from_slice(spec.input_shape());
    let inputs = Tensor::new(shape, inputs).unwrap();
    let labels = (0..batch).map(|_| rng.gen_range(0..3u8)).collect();
    let raw: Vec<f64> = (0..batch * 3).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let teacher = softmax(&Tensor::new(vec![batch, 3], raw).unwrap());
    Case { spec, params, inputs, labels, teacher, mode }
}

pub fn check_nll(c: &Case) -> f64 {
    let trace = forward_trace(&c.spec, &c.params, &c.inputs, c.mode).unwrap();
    let (_, upstream) = nll_loss(trace.logits(), &c.labels);
    let analytic = backward(&c.spec, &c.params, &trace, &upstream).unwrap();
    let numeric = numeric_grad(&c.params, |p| oracle_nll(&forward(&c.spec, p, &c.inputs, c.mode).unwrap(), &c.labels));
    max_rel_error(analytic.values(), &numeric)
}

pub fn check_forward_kl(c: &Case) -> f64 {
    let trace = forward_trace(&c.spec, &c.params, &c.inputs, c.mode).unwrap();
    let (_, upstream) = distill_loss(&softmax(trace.logits()), &c.teacher, Divergence::ForwardKl).unwrap();
    let analytic = backward(&c.spec, &c.params, &trace, &upstream).unwrap();
    let numeric =
        numeric_grad(&c.params, |p| oracle_forward_kl(&forward(&c.spec, p, &c.inputs, c.mode).unwrap(), &c.teacher));
    max_rel_error(analytic.values(), &numeric)
}
