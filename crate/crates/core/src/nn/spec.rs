//! Architecture descriptions and their line-oriented text form.
//!
//! ```text
//! input 1 28 28
//! flatten
//! dense 784 400
//! relu
//! dropout 0.5
//! dense 400 10
//! ```

use std::fmt;
use std::str::FromStr;

use super::NnError;

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Dense { inputs: usize, outputs: usize },
    Conv2d { in_channels: usize, kernels: usize, kernel_size: usize, stride: usize },
    MaxPool2d { kernel_size: usize },
    Relu,
    Dropout { rate: f64 },
    Flatten,
}

impl Layer {
    /// Output shape for a single example, or an error explaining why `input` does not fit.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        match *self {
            Layer::Dense { inputs, outputs } => match input {
                [n] if *n == inputs => Ok(vec![outputs]),
                _ => Err(format!("expects input [{inputs}], got {input:?}")),
            },
            Layer::Conv2d { in_channels, kernels, kernel_size, stride } => match *input {
                [c, h, w] if c == in_channels && h >= kernel_size && w >= kernel_size => {
                    Ok(vec![kernels, (h - kernel_size) / stride + 1, (w - kernel_size) / stride + 1])
                }
                _ => Err(format!("expects [{in_channels}, >={kernel_size}, >={kernel_size}], got {input:?}")),
            },
            Layer::MaxPool2d { kernel_size } => match *input {
                [c, h, w] if h >= kernel_size && w >= kernel_size => Ok(vec![c, h / kernel_size, w / kernel_size]),
                _ => Err(format!("expects a [c, h, w] map of at least {kernel_size}x{kernel_size}, got {input:?}")),
            },
            Layer::Relu | Layer::Dropout { .. } => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Shapes of the weight and bias blocks, if the layer has parameters.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            Layer::Dense { inputs, outputs } => Some((vec![inputs, outputs], vec![outputs])),
            Layer::Conv2d { in_channels, kernels, kernel_size, .. } => {
                Some((vec![kernels, in_channels, kernel_size, kernel_size], vec![kernels]))
            }
            _ => None,
        }
    }

    fn validate(&self) -> Result<(), String> {
        match *self {
            Layer::Dense { inputs, outputs } if inputs == 0 || outputs == 0 => {
                Err("dense layer with zero width".into())
            }
            Layer::Conv2d { in_channels, kernels, kernel_size, stride }
                if in_channels == 0 || kernels == 0 || kernel_size == 0 || stride == 0 =>
            {
                Err("conv layer with a zero channel, kernel or stride".into())
            }
            Layer::MaxPool2d { kernel_size: 0 } => Err("maxpool with zero kernel".into()),
            Layer::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                Err(format!("dropout rate {rate} outside [0, 1)"))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layer::Dense { inputs, outputs } => write!(f, "dense {inputs} {outputs}"),
            Layer::Conv2d { in_channels, kernels, kernel_size, stride } => {
                write!(f, "conv {in_channels} {kernels} {kernel_size} {stride}")
            }
            Layer::MaxPool2d { kernel_size } => write!(f, "maxpool {kernel_size}"),
            Layer::Relu => write!(f, "relu"),
            Layer::Dropout { rate } => write!(f, "dropout {rate}"),
            Layer::Flatten => write!(f, "flatten"),
        }
    }
}

/// A validated feed-forward architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    shapes: Vec<Vec<usize>>,
}

impl NetworkSpec {
    /// Runs shape inference; fails naming the first layer that does not fit.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self, NnError> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(NnError::Spec(format!("invalid input shape {input_shape:?}")));
        }
        if layers.is_empty() {
            return Err(NnError::Spec("network has no layers".into()));
        }
        let mut shapes = vec![input_shape.clone()];
        for (i, layer) in layers.iter().enumerate() {
            let at = |msg: String| NnError::Spec(format!("layer {i} ({layer}): {msg}"));
            layer.validate().map_err(at)?;
            let next = layer.output_shape(shapes.last().unwrap()).map_err(at)?;
            if next.contains(&0) {
                return Err(at(format!("produces an empty output {next:?}")));
            }
            shapes.push(next);
        }
        let out = shapes.last().unwrap();
        if out.len() != 1 {
            return Err(NnError::Spec(format!("network output must be a logit vector, got shape {out:?}")));
        }
        Ok(Self { input_shape, layers, shapes })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Per-example shape after each layer (index 0 is the input).
    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn classes(&self) -> usize {
        self.shapes.last().unwrap()[0]
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(Layer::param_shapes)
            .map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .sum()
    }

    pub fn has_dropout(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::Dropout { .. }))
    }

    /// Same architecture with every dropout layer removed.
    pub fn without_dropout(&self) -> Self {
        let layers = self.layers.iter().filter(|l| !matches!(l, Layer::Dropout { .. })).cloned().collect();
        Self::new(self.input_shape.clone(), layers).expect("dropout removal preserves shapes")
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "input")?;
        for d in &self.input_shape {
            write!(f, " {d}")?;
        }
        writeln!(f)?;
        for layer in &self.layers {
            writeln!(f, "{layer}")?;
        }
        Ok(())
    }
}

impl FromStr for NetworkSpec {
    type Err = NnError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut input_shape = None;
        let mut layers = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| NnError::Spec(format!("line {}: {msg}: `{line}`", lineno + 1));
            let mut words = line.split_whitespace();
            let keyword = words.next().unwrap();
            let args: Vec<&str> = words.collect();
            let ints = || -> Result<Vec<usize>, NnError> {
                args.iter().map(|a| a.parse::<usize>().map_err(|_| bad("expected integer arguments"))).collect()
            };
            let arity = |n: usize| if args.len() == n { Ok(()) } else { Err(bad(&format!("expected {n} arguments"))) };
            match keyword {
                "input" => input_shape = Some(ints()?),
                "dense" => {
                    arity(2)?;
                    let v = ints()?;
                    layers.push(Layer::Dense { inputs: v[0], outputs: v[1] });
                }
                "conv" => {
                    arity(4)?;
                    let v = ints()?;
                    layers.push(Layer::Conv2d { in_channels: v[0], kernels: v[1], kernel_size: v[2], stride: v[3] });
                }
                "maxpool" => {
                    arity(1)?;
                    layers.push(Layer::MaxPool2d { kernel_size: ints()?[0] });
                }
                "relu" => {
                    arity(0)?;
                    layers.push(Layer::Relu);
                }
                "flatten" => {
                    arity(0)?;
                    layers.push(Layer::Flatten);
                }
                "dropout" => {
                    arity(1)?;
                    let rate = args[0].parse::<f64>().map_err(|_| bad("expected a real rate"))?;
                    layers.push(Layer::Dropout { rate });
                }
                _ => return Err(bad("unknown layer")),
            }
        }
        let input_shape = input_shape.ok_or_else(|| NnError::Spec("missing `input` line".into()))?;
        NetworkSpec::new(input_shape, layers)
    }
}

/// MNIST image shape used by the built-in architectures.
pub const MNIST_SHAPE: [usize; 3] = [1, 28, 28];
const MNIST_CLASSES: usize = 10;

// Guards floor() against products like 100 * 0.29 = 28.999999999999996.
fn scaled_width(base: usize, factor: f64) -> usize {
    (base as f64 * factor + 1e-9).floor() as usize
}

/// 784-⌊w·k⌋-⌊w·k⌋-10 with ReLU hiddens, optionally followed by dropout.
pub fn fcnn(base_width: usize, k: f64, dropout: Option<f64>) -> Result<NetworkSpec, NnError> {
    if !(k.is_finite() && k > 0.0) {
        return Err(NnError::Spec(format!("capacity factor must be positive, got {k}")));
    }
    let width = scaled_width(base_width, k);
    if width == 0 {
        return Err(NnError::Spec(format!("capacity factor {k} gives a zero-width hidden layer")));
    }
    let input = MNIST_SHAPE.iter().product();
    let mut layers = vec![Layer::Flatten];
    for inputs in [input, width] {
        layers.push(Layer::Dense { inputs, outputs: width });
        layers.push(Layer::Relu);
        if let Some(rate) = dropout {
            layers.push(Layer::Dropout { rate });
        }
    }
    layers.push(Layer::Dense { inputs: width, outputs: MNIST_CLASSES });
    NetworkSpec::new(MNIST_SHAPE.to_vec(), layers)
}

/// inputs-⌊w·k⌋-⌊w·k⌋-classes ReLU network over flat feature vectors.
pub fn mlp(
    inputs: usize,
    base_width: usize,
    k: f64,
    classes: usize,
    dropout: Option<f64>,
) -> Result<NetworkSpec, NnError> {
    let image = fcnn(base_width, k, dropout)?;
    let mut layers: Vec<Layer> = image.layers()[1..].to_vec();
    if let Some(Layer::Dense { inputs: first, .. }) = layers.first_mut() {
        *first = inputs;
    }
    if let Some(Layer::Dense { outputs, .. }) = layers.last_mut() {
        *outputs = classes;
    }
    NetworkSpec::new(vec![inputs], layers)
}

/// Conv(⌊10c⌋,4,1)-MaxPool(2)-Conv(⌊20c⌋,4,1)-MaxPool(2)-FC(⌊80c⌋)-FC(10).
///
/// ReLU follows each convolution and the hidden FC layer; dropout, when requested,
/// follows the hidden FC activation only.
pub fn cnn(c: f64, dropout: Option<f64>) -> Result<NetworkSpec, NnError> {
    if !(c.is_finite() && c > 0.0) {
        return Err(NnError::Spec(format!("capacity factor must be positive, got {c}")));
    }
    let (k1, k2, hidden) = (scaled_width(10, c), scaled_width(20, c), scaled_width(80, c));
    if k1 == 0 || k2 == 0 || hidden == 0 {
        return Err(NnError::Spec(format!("capacity factor {c} gives zero kernels or units")));
    }
    let mut layers = vec![
        Layer::Conv2d { in_channels: 1, kernels: k1, kernel_size: 4, stride: 1 },
        Layer::Relu,
        Layer::MaxPool2d { kernel_size: 2 },
        Layer::Conv2d { in_channels: k1, kernels: k2, kernel_size: 4, stride: 1 },
        Layer::Relu,
        Layer::MaxPool2d { kernel_size: 2 },
        Layer::Flatten,
        Layer::Dense { inputs: k2 * 4 * 4, outputs: hidden },
        Layer::Relu,
    ];
    if let Some(rate) = dropout {
        layers.push(Layer::Dropout { rate });
    }
    layers.push(Layer::Dense { inputs: hidden, outputs: MNIST_CLASSES });
    NetworkSpec::new(MNIST_SHAPE.to_vec(), layers)
}

/// Student FCNN at capacity `k` relative to the 784-400-400-10 base, dropout 0.5.
pub fn scale_fcnn(k: f64) -> Result<NetworkSpec, NnError> {
    fcnn(400, k, Some(0.5))
}

/// Student CNN at capacity `c` relative to the base CNN, dropout 0.5.
pub fn scale_cnn(c: f64) -> Result<NetworkSpec, NnError> {
    cnn(c, Some(0.5))
}
