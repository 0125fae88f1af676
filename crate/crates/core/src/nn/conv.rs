//! Valid (unpadded) convolution via im2col, and non-overlapping max pooling.

use crate::real::{gemm, MatRef, Real};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.height - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width - self.kernel) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    pub fn in_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn out_len(&self) -> usize {
        self.kernels * self.positions()
    }

    /// Unrolls one image into a (patch_len × positions) matrix.
    fn im2col<T: Real>(&self, image: &[T], cols: &mut [T]) {
        let (oh, ow, k, s) = (self.out_h(), self.out_w(), self.kernel, self.stride);
        let positions = oh * ow;
        for c in 0..self.channels {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut cols[row * positions..(row + 1) * positions];
                    for oy in 0..oh {
                        let src = (c * self.height + oy * s + ki) * self.width + kj;
                        for ox in 0..ow {
                            dst[oy * ow + ox] = image[src + ox * s];
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a (patch_len × positions) gradient back onto an image.
    fn col2im<T: Real>(&self, cols: &[T], image: &mut [T]) {
        let (oh, ow, k, s) = (self.out_h(), self.out_w(), self.kernel, self.stride);
        let positions = oh * ow;
        for c in 0..self.channels {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &cols[row * positions..(row + 1) * positions];
                    for oy in 0..oh {
                        let dst = (c * self.height + oy * s + ki) * self.width + kj;
                        for ox in 0..ow {
                            image[dst + ox * s] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }

    pub fn forward<T: Real>(&self, input: &[T], weight: &[T], bias: &[T], batch: usize) -> Vec<T> {
        let (p, q) = (self.patch_len(), self.positions());
        let mut cols = vec![T::zero(); p * q];
        let mut out = vec![T::zero(); batch * self.out_len()];
        for (image, dst) in input.chunks_exact(self.in_len()).zip(out.chunks_exact_mut(self.out_len())) {
            self.im2col(image, &mut cols);
            for (kernel_out, &b) in dst.chunks_exact_mut(q).zip(bias) {
                kernel_out.fill(b);
            }
            gemm(MatRef::new(weight, self.kernels, p), MatRef::new(&cols, p, q), T::one(), dst);
        }
        out
    }

    /// Accumulates weight/bias gradients and, if requested, returns the input gradient.
    pub fn backward<T: Real>(
        &self,
        input: &[T],
        weight: &[T],
        upstream: &[T],
        grad_weight: &mut [T],
        grad_bias: &mut [T],
        want_input_grad: bool,
    ) -> Option<Vec<T>> {
        let (p, q) = (self.patch_len(), self.positions());
        let mut cols = vec![T::zero(); p * q];
        let mut dcols = vec![T::zero(); p * q];
        let mut dinput = want_input_grad.then(|| vec![T::zero(); input.len()]);
        for (b, (image, dout)) in
            input.chunks_exact(self.in_len()).zip(upstream.chunks_exact(self.out_len())).enumerate()
        {
            self.im2col(image, &mut cols);
            gemm(MatRef::new(dout, self.kernels, q), MatRef::new(&cols, p, q).t(), T::one(), grad_weight);
            for (gb, row) in grad_bias.iter_mut().zip(dout.chunks_exact(q)) {
                *gb += row.iter().copied().sum::<T>();
            }
            if let Some(dx) = dinput.as_mut() {
                gemm(
                    MatRef::new(weight, self.kernels, p).t(),
                    MatRef::new(dout, self.kernels, q),
                    T::zero(),
                    &mut dcols,
                );
                self.col2im(&dcols, &mut dx[b * self.in_len()..(b + 1) * self.in_len()]);
            }
        }
        dinput
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PoolGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
}

impl PoolGeometry {
    fn out_h(&self) -> usize {
        self.height / self.kernel
    }

    fn out_w(&self) -> usize {
        self.width / self.kernel
    }

    /// Returns pooled values and, per output, the flat input index of the chosen maximum.
    /// Ties go to the first element in row-major window order.
    pub fn forward<T: Real>(&self, input: &[T], batch: usize) -> (Vec<T>, Vec<usize>) {
        let (oh, ow, k) = (self.out_h(), self.out_w(), self.kernel);
        let in_len = self.channels * self.height * self.width;
        let out_len = self.channels * oh * ow;
        let mut out = Vec::with_capacity(batch * out_len);
        let mut argmax = Vec::with_capacity(batch * out_len);
        for b in 0..batch {
            for c in 0..self.channels {
                let plane = b * in_len + c * self.height * self.width;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = plane + oy * k * self.width + ox * k;
                        for ki in 0..k {
                            for kj in 0..k {
                                let idx = plane + (oy * k + ki) * self.width + ox * k + kj;
                                if input[idx] > input[best] {
                                    best = idx;
                                }
                            }
                        }
                        out.push(input[best]);
                        argmax.push(best);
                    }
                }
            }
        }
        (out, argmax)
    }

    pub fn backward<T: Real>(argmax: &[usize], upstream: &[T], input_len: usize) -> Vec<T> {
        let mut dx = vec![T::zero(); input_len];
        for (&idx, &g) in argmax.iter().zip(upstream) {
            dx[idx] += g;
        }
        dx
    }
}
