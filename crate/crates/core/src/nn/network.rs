//! Forward evaluation and exact reverse-mode gradients for [`NetworkSpec`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::conv::{ConvGeometry, PoolGeometry};
use super::params::ParamVector;
use super::spec::{Layer, NetworkSpec};
use super::NnError;
use crate::real::{gemm, MatRef, Real};
use crate::tensor::Tensor;

/// Whether dropout is active. `Train` carries the seed for the dropout masks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardMode {
    Train(u64),
    Eval,
}

enum Cache<T> {
    None,
    Input(Vec<T>),
    /// Multiplier applied by ReLU (0 or 1) or dropout (0 or 1/(1-p)).
    Mask(Vec<T>),
    Argmax(Vec<usize>),
}

/// Everything `backward` needs from a forward pass.
pub struct Trace<T> {
    spec: NetworkSpec,
    param_len: usize,
    batch: usize,
    caches: Vec<Cache<T>>,
    logits: Tensor<T>,
}

impl<T: Real> Trace<T> {
    pub fn logits(&self) -> &Tensor<T> {
        &self.logits
    }

    pub fn into_logits(self) -> Tensor<T> {
        self.logits
    }
}

fn check_inputs<T: Real>(spec: &NetworkSpec, params: &ParamVector<T>, batch: &Tensor<T>) -> Result<(), NnError> {
    if !params.matches(spec) {
        return Err(NnError::Shape(format!(
            "parameter vector of length {} does not match the architecture ({} parameters)",
            params.len(),
            spec.parameter_count()
        )));
    }
    if batch.shape().len() != spec.input_shape().len() + 1 || &batch.shape()[1..] != spec.input_shape() {
        return Err(NnError::Shape(format!(
            "layer 0 ({}): batch shape {:?} does not match input shape {:?} with a leading batch dimension",
            spec.layers()[0],
            batch.shape(),
            spec.input_shape()
        )));
    }
    Ok(())
}

fn run<T: Real>(
    spec: &NetworkSpec,
    params: &ParamVector<T>,
    batch: &Tensor<T>,
    mode: ForwardMode,
    keep: bool,
) -> Result<(Vec<Cache<T>>, Tensor<T>), NnError> {
    check_inputs(spec, params, batch)?;
    let n = batch.batch_size();
    let mut dropout_rng = match mode {
        ForwardMode::Train(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        ForwardMode::Eval => None,
    };
    let mut act = batch.data().to_vec();
    let mut caches = Vec::with_capacity(spec.layers().len());
    for (i, layer) in spec.layers().iter().enumerate() {
        let in_shape = &spec.shapes()[i];
        let (next, cache) = match *layer {
            Layer::Dense { inputs, outputs } => {
                let (w, b) = params.layout().layer_blocks(i).expect("dense layer has parameters");
                let bias = params.block(b);
                let mut out = Vec::with_capacity(n * outputs);
                for _ in 0..n {
                    out.extend_from_slice(bias);
                }
                gemm(MatRef::new(&act, n, inputs), MatRef::new(params.block(w), inputs, outputs), T::one(), &mut out);
                (out, Cache::Input(act))
            }
            Layer::Conv2d { in_channels, kernels, kernel_size, stride } => {
                let g = ConvGeometry {
                    channels: in_channels,
                    height: in_shape[1],
                    width: in_shape[2],
                    kernels,
                    kernel: kernel_size,
                    stride,
                };
                let (w, b) = params.layout().layer_blocks(i).expect("conv layer has parameters");
                let out = g.forward(&act, params.block(w), params.block(b), n);
                (out, Cache::Input(act))
            }
            Layer::MaxPool2d { kernel_size } => {
                let g = PoolGeometry {
                    channels: in_shape[0],
                    height: in_shape[1],
                    width: in_shape[2],
                    kernel: kernel_size,
                };
                let (out, argmax) = g.forward(&act, n);
                (out, Cache::Argmax(argmax))
            }
            Layer::Relu => {
                let mask: Vec<T> = act.iter().map(|&v| if v > T::zero() { T::one() } else { T::zero() }).collect();
                for v in act.iter_mut() {
                    if *v <= T::zero() {
                        *v = T::zero();
                    }
                }
                (act, Cache::Mask(mask))
            }
            Layer::Dropout { rate } => match dropout_rng.as_mut() {
                Some(rng) if rate > 0.0 => {
                    let scale = T::from_f64_lossy(1.0 / (1.0 - rate));
                    let mask: Vec<T> =
                        (0..act.len()).map(|_| if rng.gen::<f64>() < rate { T::zero() } else { scale }).collect();
                    for (v, &m) in act.iter_mut().zip(&mask) {
                        *v *= m;
                    }
                    (act, Cache::Mask(mask))
                }
                _ => (act, Cache::None),
            },
            Layer::Flatten => (act, Cache::None),
        };
        act = next;
        caches.push(if keep { cache } else { Cache::None });
    }
    let logits = Tensor::new(vec![n, spec.classes()], act)?;
    Ok((caches, logits))
}

/// Logits of shape (batch, classes).
pub fn forward<T: Real>(
    spec: &NetworkSpec,
    params: &ParamVector<T>,
    batch: &Tensor<T>,
    mode: ForwardMode,
) -> Result<Tensor<T>, NnError> {
    run(spec, params, batch, mode, false).map(|(_, logits)| logits)
}

/// Forward pass that records what `backward` needs.
pub fn forward_trace<T: Real>(
    spec: &NetworkSpec,
    params: &ParamVector<T>,
    batch: &Tensor<T>,
    mode: ForwardMode,
) -> Result<Trace<T>, NnError> {
    let (caches, logits) = run(spec, params, batch, mode, true)?;
    Ok(Trace { spec: spec.clone(), param_len: params.len(), batch: batch.batch_size(), caches, logits })
}

/// Gradient of `Σ upstream ⊙ logits` with respect to every parameter.
pub fn backward<T: Real>(
    spec: &NetworkSpec,
    params: &ParamVector<T>,
    trace: &Trace<T>,
    upstream: &Tensor<T>,
) -> Result<ParamVector<T>, NnError> {
    if trace.spec != *spec || trace.param_len != params.len() {
        return Err(NnError::Usage("backward called with a trace recorded for a different network".into()));
    }
    if upstream.shape() != trace.logits.shape() {
        return Err(NnError::Shape(format!(
            "upstream gradient shape {:?} does not match logits {:?}",
            upstream.shape(),
            trace.logits.shape()
        )));
    }
    let n = trace.batch;
    let mut grad = params.zeros_like();
    let mut delta = upstream.data().to_vec();
    // The first parameterized layer does not need an input gradient.
    let first_param = spec.layers().iter().position(|l| l.param_shapes().is_some()).unwrap_or(0);
    for i in (0..spec.layers().len()).rev() {
        if i < first_param {
            break;
        }
        let in_shape = &spec.shapes()[i];
        let want_input_grad = i > first_param;
        match (&spec.layers()[i], &trace.caches[i]) {
            (&Layer::Dense { inputs, outputs }, Cache::Input(x)) => {
                let (w, b) = params.layout().layer_blocks(i).unwrap();
                let (w, b) = (w.clone(), b.clone());
                {
                    let gv = grad.values_mut();
                    gemm(MatRef::new(x, n, inputs).t(), MatRef::new(&delta, n, outputs), T::zero(), &mut gv[w.range()]);
                    let gb = &mut gv[b.range()];
                    for row in delta.chunks_exact(outputs) {
                        for (acc, &d) in gb.iter_mut().zip(row) {
                            *acc += d;
                        }
                    }
                }
                if want_input_grad {
                    let mut dx = vec![T::zero(); n * inputs];
                    gemm(
                        MatRef::new(&delta, n, outputs),
                        MatRef::new(params.block(&w), inputs, outputs).t(),
                        T::zero(),
                        &mut dx,
                    );
                    delta = dx;
                }
            }
            (&Layer::Conv2d { in_channels, kernels, kernel_size, stride }, Cache::Input(x)) => {
                let g = ConvGeometry {
                    channels: in_channels,
                    height: in_shape[1],
                    width: in_shape[2],
                    kernels,
                    kernel: kernel_size,
                    stride,
                };
                let (w, b) = params.layout().layer_blocks(i).unwrap();
                let (w, b) = (w.clone(), b.clone());
                let gv = grad.values_mut();
                let (head, tail) = gv.split_at_mut(b.offset);
                let dx = g.backward(
                    x,
                    params.block(&w),
                    &delta,
                    &mut head[w.range()],
                    &mut tail[..b.len()],
                    want_input_grad,
                );
                if let Some(dx) = dx {
                    delta = dx;
                }
            }
            (Layer::MaxPool2d { .. }, Cache::Argmax(argmax)) => {
                let in_len = n * in_shape.iter().product::<usize>();
                delta = PoolGeometry::backward(argmax, &delta, in_len);
            }
            (Layer::Relu | Layer::Dropout { .. }, Cache::Mask(mask)) => {
                for (d, &m) in delta.iter_mut().zip(mask) {
                    *d *= m;
                }
            }
            (Layer::Dropout { .. } | Layer::Flatten, Cache::None) => {}
            (layer, _) => {
                return Err(NnError::Usage(format!("layer {i} ({layer}): trace has no cached activations")));
            }
        }
    }
    Ok(grad)
}
