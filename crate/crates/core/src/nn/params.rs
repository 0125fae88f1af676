use rand::Rng;

use super::spec::NetworkSpec;
use super::NnError;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Weight,
    Bias,
}

/// One contiguous tensor inside a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamBlock {
    pub layer: usize,
    pub kind: BlockKind,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of every weight and bias block, in layer order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    blocks: Vec<ParamBlock>,
    total: usize,
}

impl ParamLayout {
    pub fn for_spec(spec: &NetworkSpec) -> Self {
        let mut blocks = Vec::new();
        let mut offset = 0;
        for (layer, l) in spec.layers().iter().enumerate() {
            if let Some((w, b)) = l.param_shapes() {
                for (kind, shape) in [(BlockKind::Weight, w), (BlockKind::Bias, b)] {
                    let block = ParamBlock { layer, kind, offset, shape };
                    offset += block.len();
                    blocks.push(block);
                }
            }
        }
        Self { blocks, total: offset }
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// (weight, bias) blocks of a parameterized layer.
    pub fn layer_blocks(&self, layer: usize) -> Option<(&ParamBlock, &ParamBlock)> {
        let i = self.blocks.iter().position(|b| b.layer == layer)?;
        Some((&self.blocks[i], &self.blocks[i + 1]))
    }
}

/// Flat parameter vector with the layout it was built for.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector<T> {
    values: Vec<T>,
    layout: ParamLayout,
}

impl<T: Real> ParamVector<T> {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let layout = ParamLayout::for_spec(spec);
        Self { values: vec![T::zero(); layout.total()], layout }
    }

    pub fn from_values(spec: &NetworkSpec, values: Vec<T>) -> Result<Self, NnError> {
        let layout = ParamLayout::for_spec(spec);
        if values.len() != layout.total() {
            return Err(NnError::Shape(format!(
                "architecture needs {} parameters, got {}",
                layout.total(),
                values.len()
            )));
        }
        Ok(Self { values, layout })
    }

    /// Glorot-uniform weights in ±√(6/(fan_in+fan_out)), zero biases.
    pub fn init<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Self {
        let mut params = Self::zeros(spec);
        for block in params.layout.blocks.clone() {
            if block.kind != BlockKind::Weight {
                continue;
            }
            let (fan_in, fan_out) = match block.shape.as_slice() {
                [inputs, outputs] => (*inputs, *outputs),
                [kernels, channels, kh, kw] => (channels * kh * kw, kernels * kh * kw),
                other => unreachable!("unexpected weight shape {other:?}"),
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in &mut params.values[block.range()] {
                *v = T::from_f64_lossy(rng.gen_range(-limit..limit));
            }
        }
        params
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, b: &ParamBlock) -> &[T] {
        &self.values[b.range()]
    }

    /// Zero vector with the same layout.
    pub fn zeros_like(&self) -> Self {
        Self { values: vec![T::zero(); self.values.len()], layout: self.layout.clone() }
    }

    pub fn matches(&self, spec: &NetworkSpec) -> bool {
        self.layout == ParamLayout::for_spec(spec)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl<T: Real> AsRef<[T]> for ParamVector<T> {
    fn as_ref(&self) -> &[T] {
        &self.values
    }
}

impl<T: Real> AsMut<[T]> for ParamVector<T> {
    fn as_mut(&mut self) -> &mut [T] {
        &mut self.values
    }
}
