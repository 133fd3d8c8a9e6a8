//! Valid (unpadded, stride 1) 2-D convolution over `[C, H, W]` inputs.

use super::real::{axpy, dot};
use super::{NeuralError, Real, Tensor};

/// Geometry of one convolution, shared by the slice kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        self.height - self.kernel_h + 1
    }

    pub fn out_w(&self) -> usize {
        self.width - self.kernel_w + 1
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn output_len(&self) -> usize {
        self.filters * self.out_h() * self.out_w()
    }

    fn resolve<T: Real>(
        input: &Tensor<T>,
        filters: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        op: &'static str,
    ) -> Result<Self, NeuralError> {
        let (channels, height, width) = input.dims3(op)?;
        let [f, fc, kh, kw] = filters.shape()[..] else {
            return Err(NeuralError::shape(op, format!("filters must be rank 4, got {:?}", filters.shape())));
        };
        if fc != channels {
            return Err(NeuralError::shape(op, format!("input has {channels} channels, filters expect {fc}")));
        }
        if height < kh || width < kw {
            return Err(NeuralError::shape(
                op,
                format!("input {height}x{width} smaller than {kh}x{kw} filter"),
            ));
        }
        if let Some(b) = bias {
            if b.shape() != [f] {
                return Err(NeuralError::shape(op, format!("bias shape {:?} != [{f}]", b.shape())));
            }
        }
        Ok(Self { channels, height, width, filters: f, kernel_h: kh, kernel_w: kw })
    }
}

pub(crate) fn forward_into<T: Real>(g: &ConvGeometry, input: &[T], filters: &[T], bias: &[T], out: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    for f in 0..g.filters {
        let out_f = &mut out[f * plane..(f + 1) * plane];
        out_f.fill(bias[f]);
        for c in 0..g.channels {
            let in_c = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
            for a in 0..g.kernel_h {
                for b in 0..g.kernel_w {
                    let w = filters[((f * g.channels + c) * g.kernel_h + a) * g.kernel_w + b];
                    for i in 0..oh {
                        let src = &in_c[(i + a) * g.width + b..(i + a) * g.width + b + ow];
                        axpy(w, src, &mut out_f[i * ow..(i + 1) * ow]);
                    }
                }
            }
        }
    }
}

/// Accumulates filter and bias gradients into `grad_filters` / `grad_bias`, and
/// writes (overwrites) the input gradient when `grad_input` is given.
pub(crate) fn backward_into<T: Real>(
    g: &ConvGeometry,
    input: &[T],
    filters: &[T],
    upstream: &[T],
    grad_input: Option<&mut [T]>,
    grad_filters: &mut [T],
    grad_bias: &mut [T],
) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    let hw = g.height * g.width;
    for f in 0..g.filters {
        let up_f = &upstream[f * plane..(f + 1) * plane];
        grad_bias[f] = grad_bias[f] + up_f.iter().copied().sum::<T>();
        for c in 0..g.channels {
            let in_c = &input[c * hw..(c + 1) * hw];
            for a in 0..g.kernel_h {
                for b in 0..g.kernel_w {
                    let mut acc = T::zero();
                    for i in 0..oh {
                        let src = &in_c[(i + a) * g.width + b..(i + a) * g.width + b + ow];
                        acc = acc + dot(&up_f[i * ow..(i + 1) * ow], src);
                    }
                    let idx = ((f * g.channels + c) * g.kernel_h + a) * g.kernel_w + b;
                    grad_filters[idx] = grad_filters[idx] + acc;
                }
            }
        }
    }
    if let Some(grad_input) = grad_input {
        grad_input.fill(T::zero());
        for f in 0..g.filters {
            let up_f = &upstream[f * plane..(f + 1) * plane];
            for c in 0..g.channels {
                let gin_c = &mut grad_input[c * hw..(c + 1) * hw];
                for a in 0..g.kernel_h {
                    for b in 0..g.kernel_w {
                        let w = filters[((f * g.channels + c) * g.kernel_h + a) * g.kernel_w + b];
                        for i in 0..oh {
                            let dst = &mut gin_c[(i + a) * g.width + b..(i + a) * g.width + b + ow];
                            axpy(w, &up_f[i * ow..(i + 1) * ow], dst);
                        }
                    }
                }
            }
        }
    }
}

/// `out[f,i,j] = bias[f] + Σ_{c,a,b} input[c,i+a,j+b] · filters[f,c,a,b]`.
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, NeuralError> {
    let g = ConvGeometry::resolve(input, filters, Some(bias), "conv2d_forward")?;
    let mut out = vec![T::zero(); g.output_len()];
    forward_into(&g, input.data(), filters.data(), bias.data(), &mut out);
    Tensor::from_parts(vec![g.filters, g.out_h(), g.out_w()], out).ensure_finite("conv2d_forward")
}

/// Gradients of the convolution with respect to its input, filters and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dGrads<T = f32> {
    pub input: Tensor<T>,
    pub filters: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<Conv2dGrads<T>, NeuralError> {
    let g = ConvGeometry::resolve(input, filters, None, "conv2d_backward")?;
    if upstream.shape() != [g.filters, g.out_h(), g.out_w()] {
        return Err(NeuralError::shape(
            "conv2d_backward",
            format!(
                "upstream {:?} != forward output [{}, {}, {}]",
                upstream.shape(),
                g.filters,
                g.out_h(),
                g.out_w()
            ),
        ));
    }
    let mut gin = vec![T::zero(); g.input_len()];
    let mut gf = vec![T::zero(); filters.len()];
    let mut gb = vec![T::zero(); g.filters];
    backward_into(&g, input.data(), filters.data(), upstream.data(), Some(&mut gin), &mut gf, &mut gb);
    Ok(Conv2dGrads {
        input: Tensor::from_parts(input.shape().to_vec(), gin).ensure_finite("conv2d_backward")?,
        filters: Tensor::from_parts(filters.shape().to_vec(), gf).ensure_finite("conv2d_backward")?,
        bias: Tensor::from_parts(vec![g.filters], gb).ensure_finite("conv2d_backward")?,
    })
}
