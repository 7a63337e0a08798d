//! Raw numerical kernels: strided SAME convolution, its transpose, dense
//! layers and activations, each with the vector-Jacobian product needed for
//! training. All functions are pure; outputs are freshly allocated.

use crate::error::{Error, Result};
use crate::tensor::{expect_same_shape, Scalar, Tensor};

/// Geometry of a SAME-padded strided convolution.
///
/// SAME is the only supported padding mode: the output spatial size is
/// `ceil(input / stride)` and the required zero padding is split with the
/// smaller half on the top/left.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvGeometry {
    pub fn new(
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        in_channels: usize,
        out_channels: usize,
    ) -> Result<Self> {
        for (name, v) in [
            ("kernel_h", kernel_h),
            ("kernel_w", kernel_w),
            ("stride", stride),
            ("in_channels", in_channels),
            ("out_channels", out_channels),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("ConvGeometry.{name} must be >= 1")));
            }
        }
        Ok(ConvGeometry {
            kernel_h,
            kernel_w,
            stride,
            in_channels,
            out_channels,
        })
    }

    /// SAME output size along one spatial axis.
    pub fn out_size(&self, input: usize) -> usize {
        input.div_ceil(self.stride)
    }

    /// `(low, high)` zero padding along one axis for the given input size and
    /// kernel extent. The high side receives the odd element.
    pub fn pads(&self, input: usize, kernel: usize) -> (usize, usize) {
        let out = self.out_size(input);
        let total = ((out - 1) * self.stride + kernel).saturating_sub(input);
        (total / 2, total - total / 2)
    }
}

fn expect_rank<T: Scalar>(what: &str, t: &Tensor<T>, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::dimension(
            format!("{what} rank"),
            rank,
            t.rank(),
        ));
    }
    Ok(())
}

fn expect_dim<T: Scalar>(what: &str, t: &Tensor<T>, axis: usize, expected: usize) -> Result<()> {
    if t.shape()[axis] != expected {
        return Err(Error::dimension(
            format!("{what} axis {axis}"),
            expected,
            t.shape()[axis],
        ));
    }
    Ok(())
}

fn check_conv_args<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    geom: &ConvGeometry,
    transposed: bool,
) -> Result<()> {
    expect_rank("input", input, 4)?;
    expect_rank("kernel", kernel, 4)?;
    expect_rank("bias", bias, 1)?;
    expect_dim("kernel", kernel, 0, geom.kernel_h)?;
    expect_dim("kernel", kernel, 1, geom.kernel_w)?;
    if transposed {
        // transposed kernels are stored [kh, kw, out_channels, in_channels]
        expect_dim("kernel", kernel, 2, geom.out_channels)?;
        expect_dim("kernel", kernel, 3, geom.in_channels)?;
    } else {
        expect_dim("kernel", kernel, 2, geom.in_channels)?;
        expect_dim("kernel", kernel, 3, geom.out_channels)?;
    }
    expect_dim("input channels", input, 3, geom.in_channels)?;
    expect_dim("bias", bias, 0, geom.out_channels)?;
    input.check_finite("conv input")?;
    kernel.check_finite("conv kernel")?;
    bias.check_finite("conv bias")?;
    Ok(())
}

/// Strided SAME convolution over `[batch, height, width, channels]` input
/// with a `[kh, kw, in_channels, out_channels]` kernel.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    geom: &ConvGeometry,
) -> Result<Tensor<T>> {
    check_conv_args(input, kernel, bias, geom, false)?;
    let [n, h, w, cin]: [usize; 4] = input.shape().try_into().unwrap();
    let (oh, ow) = (geom.out_size(h), geom.out_size(w));
    let (pad_top, _) = geom.pads(h, geom.kernel_h);
    let (pad_left, _) = geom.pads(w, geom.kernel_w);
    let cout = geom.out_channels;
    let s = geom.stride;

    let x = input.data();
    let k = kernel.data();
    let b = bias.data();
    let mut out = Tensor::zeros(&[n, oh, ow, cout]);
    let o = out.data_mut();
    let mut acc = vec![T::zero(); cout];

    for bn in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                acc.copy_from_slice(b);
                for a in 0..geom.kernel_h {
                    let ih = (i * s + a) as isize - pad_top as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    for bb in 0..geom.kernel_w {
                        let iw = (j * s + bb) as isize - pad_left as isize;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        let x_base = ((bn * h + ih as usize) * w + iw as usize) * cin;
                        let k_base = (a * geom.kernel_w + bb) * cin * cout;
                        for ci in 0..cin {
                            let xv = x[x_base + ci];
                            let k_row = k_base + ci * cout;
                            for (co, a_co) in acc.iter_mut().enumerate() {
                                *a_co += xv * k[k_row + co];
                            }
                        }
                    }
                }
                let o_base = ((bn * oh + i) * ow + j) * cout;
                o[o_base..o_base + cout].copy_from_slice(&acc);
            }
        }
    }
    Ok(out)
}

/// Gradients of `sum(grad_out * conv2d_forward(input, kernel, bias))` with
/// respect to input, kernel and bias.
pub fn conv2d_vjp<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    geom: &ConvGeometry,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let bias = Tensor::zeros(&[geom.out_channels]);
    check_conv_args(input, kernel, &bias, geom, false)?;
    let [n, h, w, cin]: [usize; 4] = input.shape().try_into().unwrap();
    let (oh, ow) = (geom.out_size(h), geom.out_size(w));
    let cout = geom.out_channels;
    expect_rank("grad_out", grad_out, 4)?;
    expect_same_shape("grad_out", grad_out, &Tensor::zeros(&[n, oh, ow, cout]))?;
    grad_out.check_finite("conv grad_out")?;

    let (pad_top, _) = geom.pads(h, geom.kernel_h);
    let (pad_left, _) = geom.pads(w, geom.kernel_w);
    let s = geom.stride;

    let x = input.data();
    let k = kernel.data();
    let g = grad_out.data();

    let mut grad_input = Tensor::zeros(input.shape());
    let mut grad_kernel = Tensor::zeros(kernel.shape());
    let mut grad_bias = Tensor::zeros(&[cout]);
    let gi = grad_input.data_mut();
    let gk = grad_kernel.data_mut();
    let gb = grad_bias.data_mut();

    for bn in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                let g_base = ((bn * oh + i) * ow + j) * cout;
                let g_row = &g[g_base..g_base + cout];
                for (co, &gv) in g_row.iter().enumerate() {
                    gb[co] += gv;
                }
                for a in 0..geom.kernel_h {
                    let ih = (i * s + a) as isize - pad_top as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    for bb in 0..geom.kernel_w {
                        let iw = (j * s + bb) as isize - pad_left as isize;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        let x_base = ((bn * h + ih as usize) * w + iw as usize) * cin;
                        let k_base = (a * geom.kernel_w + bb) * cin * cout;
                        for ci in 0..cin {
                            let xv = x[x_base + ci];
                            let k_row = k_base + ci * cout;
                            let mut gx = T::zero();
                            for (co, &gv) in g_row.iter().enumerate() {
                                gk[k_row + co] += xv * gv;
                                gx += k[k_row + co] * gv;
                            }
                            gi[x_base + ci] += gx;
                        }
                    }
                }
            }
        }
    }
    Ok((grad_input, grad_kernel, grad_bias))
}

/// Transposed strided convolution: the linear adjoint of [`conv2d_forward`]
/// with the same geometry, plus a bias. Input `[n, h, w, in_channels]` maps
/// to `[n, h*stride, w*stride, out_channels]`; the kernel is stored
/// `[kh, kw, out_channels, in_channels]`.
pub fn conv_transpose2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    geom: &ConvGeometry,
) -> Result<Tensor<T>> {
    check_conv_args(input, kernel, bias, geom, true)?;
    let [n, h, w, cin]: [usize; 4] = input.shape().try_into().unwrap();
    let s = geom.stride;
    let (oh, ow) = (h * s, w * s);
    let cout = geom.out_channels;
    // Pads of the underlying forward convolution that maps [oh, ow] -> [h, w].
    let (pad_top, _) = geom.pads(oh, geom.kernel_h);
    let (pad_left, _) = geom.pads(ow, geom.kernel_w);

    let x = input.data();
    let k = kernel.data();
    let mut out = Tensor::zeros(&[n, oh, ow, cout]);
    let o = out.data_mut();

    for bn in 0..n {
        for i in 0..h {
            for j in 0..w {
                let x_base = ((bn * h + i) * w + j) * cin;
                let x_row = &x[x_base..x_base + cin];
                for a in 0..geom.kernel_h {
                    let out_i = (i * s + a) as isize - pad_top as isize;
                    if out_i < 0 || out_i >= oh as isize {
                        continue;
                    }
                    for bb in 0..geom.kernel_w {
                        let out_j = (j * s + bb) as isize - pad_left as isize;
                        if out_j < 0 || out_j >= ow as isize {
                            continue;
                        }
                        let o_base = ((bn * oh + out_i as usize) * ow + out_j as usize) * cout;
                        let k_base = (a * geom.kernel_w + bb) * cout * cin;
                        for co in 0..cout {
                            let k_row = k_base + co * cin;
                            let mut acc = T::zero();
                            for (ci, &xv) in x_row.iter().enumerate() {
                                acc += k[k_row + ci] * xv;
                            }
                            o[o_base + co] += acc;
                        }
                    }
                }
            }
        }
    }
    // bias broadcast over every output position
    let b = bias.data();
    for pos in 0..(n * oh * ow) {
        let o_base = pos * cout;
        for co in 0..cout {
            o[o_base + co] += b[co];
        }
    }
    Ok(out)
}

/// Gradients of `sum(grad_out * conv_transpose2d_forward(..))` with respect
/// to input, kernel and bias. The input gradient is itself a strided SAME
/// convolution of `grad_out` with the kernel.
pub fn conv_transpose2d_vjp<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    geom: &ConvGeometry,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let bias = Tensor::zeros(&[geom.out_channels]);
    check_conv_args(input, kernel, &bias, geom, true)?;
    let [n, h, w, cin]: [usize; 4] = input.shape().try_into().unwrap();
    let s = geom.stride;
    let (oh, ow) = (h * s, w * s);
    let cout = geom.out_channels;
    expect_rank("grad_out", grad_out, 4)?;
    expect_same_shape("grad_out", grad_out, &Tensor::zeros(&[n, oh, ow, cout]))?;
    grad_out.check_finite("conv_transpose grad_out")?;

    let (pad_top, _) = geom.pads(oh, geom.kernel_h);
    let (pad_left, _) = geom.pads(ow, geom.kernel_w);

    let x = input.data();
    let k = kernel.data();
    let g = grad_out.data();

    let mut grad_input = Tensor::zeros(input.shape());
    let mut grad_kernel = Tensor::zeros(kernel.shape());
    let mut grad_bias = Tensor::zeros(&[cout]);
    let gi = grad_input.data_mut();
    let gk = grad_kernel.data_mut();
    let gb = grad_bias.data_mut();

    for (pos, g_row) in g.chunks_exact(cout).enumerate() {
        let _ = pos;
        for (co, &gv) in g_row.iter().enumerate() {
            gb[co] += gv;
        }
    }
    for bn in 0..n {
        for i in 0..h {
            for j in 0..w {
                let x_base = ((bn * h + i) * w + j) * cin;
                for a in 0..geom.kernel_h {
                    let out_i = (i * s + a) as isize - pad_top as isize;
                    if out_i < 0 || out_i >= oh as isize {
                        continue;
                    }
                    for bb in 0..geom.kernel_w {
                        let out_j = (j * s + bb) as isize - pad_left as isize;
                        if out_j < 0 || out_j >= ow as isize {
                            continue;
                        }
                        let g_base = ((bn * oh + out_i as usize) * ow + out_j as usize) * cout;
                        let k_base = (a * geom.kernel_w + bb) * cout * cin;
                        for co in 0..cout {
                            let gv = g[g_base + co];
                            let k_row = k_base + co * cin;
                            for ci in 0..cin {
                                gk[k_row + ci] += gv * x[x_base + ci];
                                gi[x_base + ci] += gv * k[k_row + ci];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((grad_input, grad_kernel, grad_bias))
}

/// Affine map `out = input . weights + bias` over a `[batch, d_in]` input.
pub fn dense_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    expect_rank("input", input, 2)?;
    expect_rank("weights", weights, 2)?;
    expect_rank("bias", bias, 1)?;
    let (n, d_in) = (input.shape()[0], input.shape()[1]);
    let d_out = weights.shape()[1];
    expect_dim("weights", weights, 0, d_in)?;
    expect_dim("bias", bias, 0, d_out)?;
    input.check_finite("dense input")?;
    weights.check_finite("dense weights")?;
    bias.check_finite("dense bias")?;

    let x = input.data();
    let wd = weights.data();
    let b = bias.data();
    let mut out = Tensor::zeros(&[n, d_out]);
    let o = out.data_mut();
    for bn in 0..n {
        let o_row = &mut o[bn * d_out..(bn + 1) * d_out];
        o_row.copy_from_slice(b);
        for d in 0..d_in {
            let xv = x[bn * d_in + d];
            let w_row = &wd[d * d_out..(d + 1) * d_out];
            for (oo, &wv) in o_row.iter_mut().zip(w_row) {
                *oo += xv * wv;
            }
        }
    }
    Ok(out)
}

/// Gradients of `sum(grad_out * dense_forward(..))`: `grad_input = grad_out . W^T`,
/// `grad_weights = input^T . grad_out`, `grad_bias` = column sums of `grad_out`.
pub fn dense_vjp<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    expect_rank("input", input, 2)?;
    expect_rank("weights", weights, 2)?;
    expect_rank("grad_out", grad_out, 2)?;
    let (n, d_in) = (input.shape()[0], input.shape()[1]);
    let d_out = weights.shape()[1];
    expect_dim("weights", weights, 0, d_in)?;
    expect_dim("grad_out", grad_out, 0, n)?;
    expect_dim("grad_out", grad_out, 1, d_out)?;
    input.check_finite("dense input")?;
    weights.check_finite("dense weights")?;
    grad_out.check_finite("dense grad_out")?;

    let x = input.data();
    let wd = weights.data();
    let g = grad_out.data();
    let mut grad_input = Tensor::zeros(&[n, d_in]);
    let mut grad_weights = Tensor::zeros(&[d_in, d_out]);
    let mut grad_bias = Tensor::zeros(&[d_out]);
    let gi = grad_input.data_mut();
    let gw = grad_weights.data_mut();
    let gb = grad_bias.data_mut();

    for bn in 0..n {
        let g_row = &g[bn * d_out..(bn + 1) * d_out];
        for (co, &gv) in g_row.iter().enumerate() {
            gb[co] += gv;
        }
        for d in 0..d_in {
            let w_row = &wd[d * d_out..(d + 1) * d_out];
            let xv = x[bn * d_in + d];
            let gw_row = &mut gw[d * d_out..(d + 1) * d_out];
            let mut acc = T::zero();
            for ((&gv, &wv), gwv) in g_row.iter().zip(w_row).zip(gw_row.iter_mut()) {
                acc += gv * wv;
                *gwv += xv * gv;
            }
            gi[bn * d_in + d] = acc;
        }
    }
    Ok((grad_input, grad_weights, grad_bias))
}

/// Elementwise nonlinearities used by the autoencoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ActivationKind {
    Relu,
    Sigmoid,
}

impl std::fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ActivationKind::Relu => write!(f, "ReLU"),
            ActivationKind::Sigmoid => write!(f, "Sigmoid"),
        }
    }
}

/// Numerically stable logistic function, clamped so the result stays
/// strictly inside (0, 1) even where the exact value would round to 0 or 1.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    let one = T::one();
    let y = if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    };
    y.max(T::min_positive_value()).min(one - T::epsilon())
}

pub fn activation_forward<T: Scalar>(input: &Tensor<T>, kind: ActivationKind) -> Result<Tensor<T>> {
    input.check_finite("activation input")?;
    Ok(match kind {
        ActivationKind::Relu => input.map(|x| x.max(T::zero())),
        ActivationKind::Sigmoid => input.map(sigmoid),
    })
}

/// Backward pass of an activation given its forward *input*. The ReLU
/// subgradient at exactly 0 is 0.
pub fn activation_vjp<T: Scalar>(
    input: &Tensor<T>,
    kind: ActivationKind,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    expect_same_shape("grad_out", grad_out, input)?;
    input.check_finite("activation input")?;
    grad_out.check_finite("activation grad_out")?;
    let mut out = Tensor::zeros(input.shape());
    let o = out.data_mut();
    match kind {
        ActivationKind::Relu => {
            for ((ov, &x), &g) in o.iter_mut().zip(input.data()).zip(grad_out.data()) {
                *ov = if x > T::zero() { g } else { T::zero() };
            }
        }
        ActivationKind::Sigmoid => {
            for ((ov, &x), &g) in o.iter_mut().zip(input.data()).zip(grad_out.data()) {
                let s = sigmoid(x);
                *ov = g * s * (T::one() - s);
            }
        }
    }
    Ok(out)
}
