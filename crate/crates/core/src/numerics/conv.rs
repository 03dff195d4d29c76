use serde::{Deserialize, Serialize};

use super::FeatureMap;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, values: &mut [f64]) {
        if self == Activation::Relu {
            for v in values {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }
}

/// Convolution weights laid out `[ky][kx][in_channel][out_channel]`.
///
/// For a transposed convolution the same tensor is used as for the forward
/// convolution it is the adjoint of, so it maps `out_channels` back to
/// `in_channels`.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    pub size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub weights: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, in_channels: usize, out_channels: usize, weights: Vec<f64>) -> Result<Self> {
        let expected = size * size * in_channels * out_channels;
        if weights.len() != expected {
            return Err(Error::Dimension(format!(
                "kernel {size}x{size}x{in_channels}x{out_channels} needs {expected} weights, got {}",
                weights.len()
            )));
        }
        Ok(Kernel {
            size,
            in_channels,
            out_channels,
            weights,
        })
    }

    pub fn zeros(size: usize, in_channels: usize, out_channels: usize) -> Self {
        Kernel {
            size,
            in_channels,
            out_channels,
            weights: vec![0.0; size * size * in_channels * out_channels],
        }
    }

    #[inline]
    pub fn index(&self, ky: usize, kx: usize, ci: usize, co: usize) -> usize {
        ((ky * self.size + kx) * self.in_channels + ci) * self.out_channels + co
    }

    fn validate(&self) -> Result<()> {
        if self.size.is_multiple_of(2) || self.size == 0 {
            return Err(Error::Dimension(format!("kernel size {} must be odd", self.size)));
        }
        if !self.weights.iter().all(|w| w.is_finite()) {
            return Err(Error::NonFinite("convolution kernel".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    pad_top: isize,
    pad_left: isize,
    stride: usize,
    k: usize,
}

fn axis(input: usize, k: usize, stride: usize, padding: Padding, name: &str) -> Result<(usize, isize)> {
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out.saturating_sub(1)) * stride + k).saturating_sub(input);
            Ok((out, (total / 2) as isize))
        }
        Padding::Valid => {
            if input < k {
                return Err(Error::Dimension(format!(
                    "{name} axis of length {input} is smaller than kernel {k} under valid padding"
                )));
            }
            Ok(((input - k) / stride + 1, 0))
        }
    }
}

fn geometry(in_h: usize, in_w: usize, k: usize, stride: usize, padding: Padding) -> Result<Geometry> {
    if stride == 0 {
        return Err(Error::Dimension("stride must be at least 1".into()));
    }
    let (out_h, pad_top) = axis(in_h, k, stride, padding, "height")?;
    let (out_w, pad_left) = axis(in_w, k, stride, padding, "width")?;
    Ok(Geometry {
        in_h,
        in_w,
        out_h,
        out_w,
        pad_top,
        pad_left,
        stride,
        k,
    })
}

impl Geometry {
    /// Input coordinate touched by output `o` and kernel tap `t`, if inside the image.
    #[inline]
    fn source(&self, o: usize, t: usize, pad: isize, len: usize) -> Option<usize> {
        let pos = (o * self.stride + t) as isize - pad;
        (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
    }
}

/// Linear part of the forward convolution (cross-correlation).
fn correlate(input: &FeatureMap, kernel: &Kernel, g: &Geometry) -> FeatureMap {
    let (cin, cout) = (kernel.in_channels, kernel.out_channels);
    let mut out = FeatureMap::zeros(input.batch, g.out_h, g.out_w, cout);
    for n in 0..input.batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let ob = out.index(n, oy, ox, 0);
                for ky in 0..g.k {
                    let Some(iy) = g.source(oy, ky, g.pad_top, g.in_h) else { continue };
                    for kx in 0..g.k {
                        let Some(ix) = g.source(ox, kx, g.pad_left, g.in_w) else { continue };
                        let ib = input.index(n, iy, ix, 0);
                        for ci in 0..cin {
                            let xv = input.data[ib + ci];
                            if xv == 0.0 {
                                continue;
                            }
                            let kb = kernel.index(ky, kx, ci, 0);
                            let krow = &kernel.weights[kb..kb + cout];
                            let orow = &mut out.data[ob..ob + cout];
                            for (o, w) in orow.iter_mut().zip(krow) {
                                *o += xv * w;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`correlate`]: spreads an output-shaped map back onto the input grid.
fn scatter(output: &FeatureMap, kernel: &Kernel, g: &Geometry) -> FeatureMap {
    let (cin, cout) = (kernel.in_channels, kernel.out_channels);
    let mut res = FeatureMap::zeros(output.batch, g.in_h, g.in_w, cin);
    for n in 0..output.batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let ob = output.index(n, oy, ox, 0);
                let yrow = &output.data[ob..ob + cout];
                if yrow.iter().all(|v| *v == 0.0) {
                    continue;
                }
                for ky in 0..g.k {
                    let Some(iy) = g.source(oy, ky, g.pad_top, g.in_h) else { continue };
                    for kx in 0..g.k {
                        let Some(ix) = g.source(ox, kx, g.pad_left, g.in_w) else { continue };
                        let rb = res.index(n, iy, ix, 0);
                        for ci in 0..cin {
                            let kb = kernel.index(ky, kx, ci, 0);
                            let krow = &kernel.weights[kb..kb + cout];
                            let acc: f64 = krow.iter().zip(yrow).map(|(w, y)| w * y).sum();
                            res.data[rb + ci] += acc;
                        }
                    }
                }
            }
        }
    }
    res
}

/// Gradient of `<correlate(input, K), grad>` with respect to `K`.
fn kernel_grad(input: &FeatureMap, grad: &FeatureMap, kernel: &Kernel, g: &Geometry) -> Vec<f64> {
    let (cin, cout) = (kernel.in_channels, kernel.out_channels);
    let mut gk = vec![0.0; kernel.weights.len()];
    for n in 0..input.batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let ob = grad.index(n, oy, ox, 0);
                let grow = &grad.data[ob..ob + cout];
                if grow.iter().all(|v| *v == 0.0) {
                    continue;
                }
                for ky in 0..g.k {
                    let Some(iy) = g.source(oy, ky, g.pad_top, g.in_h) else { continue };
                    for kx in 0..g.k {
                        let Some(ix) = g.source(ox, kx, g.pad_left, g.in_w) else { continue };
                        let ib = input.index(n, iy, ix, 0);
                        for ci in 0..cin {
                            let xv = input.data[ib + ci];
                            if xv == 0.0 {
                                continue;
                            }
                            let kb = kernel.index(ky, kx, ci, 0);
                            for (gw, gv) in gk[kb..kb + cout].iter_mut().zip(grow) {
                                *gw += xv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    gk
}

fn add_bias(map: &mut FeatureMap, bias: &[f64]) {
    let c = map.channels;
    for px in map.data.chunks_mut(c) {
        for (v, b) in px.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn bias_grad(grad: &FeatureMap) -> Vec<f64> {
    let mut gb = vec![0.0; grad.channels];
    for px in grad.data.chunks(grad.channels) {
        for (g, v) in gb.iter_mut().zip(px) {
            *g += v;
        }
    }
    gb
}

fn check_bias(bias: &[f64], expected: usize) -> Result<()> {
    if bias.len() != expected {
        return Err(Error::Dimension(format!(
            "bias has {} entries, channel axis has {expected}",
            bias.len()
        )));
    }
    if !bias.iter().all(|b| b.is_finite()) {
        return Err(Error::NonFinite("convolution bias".into()));
    }
    Ok(())
}

/// 2-D convolution (cross-correlation) of an NHWC batch.
pub fn conv2d(
    input: &FeatureMap,
    kernel: &Kernel,
    bias: &[f64],
    stride: usize,
    padding: Padding,
    activation: Activation,
) -> Result<FeatureMap> {
    kernel.validate()?;
    if input.channels != kernel.in_channels {
        return Err(Error::Dimension(format!(
            "channel axis: input has {}, kernel expects {}",
            input.channels, kernel.in_channels
        )));
    }
    check_bias(bias, kernel.out_channels)?;
    input.ensure_finite("conv2d input")?;
    let g = geometry(input.height, input.width, kernel.size, stride, padding)?;
    let mut out = correlate(input, kernel, &g);
    add_bias(&mut out, bias);
    activation.apply(&mut out.data);
    Ok(out)
}

/// Transposed convolution: the adjoint of [`conv2d`] with the same kernel,
/// mapping `kernel.out_channels` to `kernel.in_channels` and producing an
/// `output_hw` spatial grid.
pub fn conv2d_transpose(
    input: &FeatureMap,
    kernel: &Kernel,
    bias: &[f64],
    stride: usize,
    padding: Padding,
    output_hw: (usize, usize),
    activation: Activation,
) -> Result<FeatureMap> {
    kernel.validate()?;
    if input.channels != kernel.out_channels {
        return Err(Error::Dimension(format!(
            "channel axis: input has {}, transposed kernel expects {}",
            input.channels, kernel.out_channels
        )));
    }
    check_bias(bias, kernel.in_channels)?;
    input.ensure_finite("conv2d_transpose input")?;
    let g = transpose_geometry(input, kernel, stride, padding, output_hw)?;
    let mut out = scatter(input, kernel, &g);
    add_bias(&mut out, bias);
    activation.apply(&mut out.data);
    Ok(out)
}

fn transpose_geometry(
    input: &FeatureMap,
    kernel: &Kernel,
    stride: usize,
    padding: Padding,
    output_hw: (usize, usize),
) -> Result<Geometry> {
    let g = geometry(output_hw.0, output_hw.1, kernel.size, stride, padding)?;
    if g.out_h != input.height || g.out_w != input.width {
        return Err(Error::Dimension(format!(
            "output shape {}x{} with stride {stride} maps to {}x{}, but input is {}x{}",
            output_hw.0, output_hw.1, g.out_h, g.out_w, input.height, input.width
        )));
    }
    Ok(g)
}

/// Gradients of a convolution layer with respect to its input, kernel and bias.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Option<FeatureMap>,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Backward pass of [`conv2d`]. `grad_out` is the gradient with respect to the
/// pre-activation output; apply [`relu_backward`] first when needed.
pub fn conv2d_backward(
    input: &FeatureMap,
    kernel: &Kernel,
    stride: usize,
    padding: Padding,
    grad_out: &FeatureMap,
    need_input: bool,
) -> Result<ConvGrads> {
    let g = geometry(input.height, input.width, kernel.size, stride, padding)?;
    if grad_out.shape() != (input.batch, g.out_h, g.out_w, kernel.out_channels) {
        return Err(Error::Dimension(format!(
            "gradient shape {:?} does not match convolution output",
            grad_out.shape()
        )));
    }
    Ok(ConvGrads {
        input: need_input.then(|| scatter(grad_out, kernel, &g)),
        kernel: kernel_grad(input, grad_out, kernel, &g),
        bias: bias_grad(grad_out),
    })
}

/// Backward pass of [`conv2d_transpose`], `grad_out` taken before the activation.
pub fn conv2d_transpose_backward(
    input: &FeatureMap,
    kernel: &Kernel,
    stride: usize,
    padding: Padding,
    grad_out: &FeatureMap,
    need_input: bool,
) -> Result<ConvGrads> {
    let output_hw = (grad_out.height, grad_out.width);
    let g = transpose_geometry(input, kernel, stride, padding, output_hw)?;
    if grad_out.channels != kernel.in_channels || grad_out.batch != input.batch {
        return Err(Error::Dimension(format!(
            "gradient shape {:?} does not match transposed convolution output",
            grad_out.shape()
        )));
    }
    Ok(ConvGrads {
        input: need_input.then(|| correlate(grad_out, kernel, &g)),
        kernel: kernel_grad(grad_out, input, kernel, &g),
        bias: bias_grad(grad_out),
    })
}

/// Masks `grad` in place where the ReLU output was not positive.
pub fn relu_backward(output: &FeatureMap, grad: &mut FeatureMap) {
    for (g, o) in grad.data.iter_mut().zip(&output.data) {
        if *o <= 0.0 {
            *g = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize, c: usize) -> FeatureMap {
        let data = (0..n * h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        FeatureMap::from_vec(n, h, w, c, data).unwrap()
    }

    fn random_kernel(rng: &mut ChaCha8Rng, k: usize, cin: usize, cout: usize) -> Kernel {
        let w = (0..k * k * cin * cout).map(|_| rng.random_range(-1.0..1.0)).collect();
        Kernel::new(k, cin, cout, w).unwrap()
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_map(&mut rng, 2, 4, 5, 1);
        let k = Kernel::new(1, 1, 1, vec![1.0]).unwrap();
        let y = conv2d(&x, &k, &[0.0], 1, Padding::Same, Activation::Identity).unwrap();
        assert_eq!(y, x);
        let z = conv2d_transpose(&x, &k, &[0.0], 1, Padding::Same, (4, 5), Activation::Identity).unwrap();
        assert_eq!(z, x);
    }

    #[test]
    fn zero_input_gives_rectified_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = FeatureMap::zeros(1, 3, 3, 2);
        let k = random_kernel(&mut rng, 3, 2, 3);
        let y = conv2d(&x, &k, &[0.5, -0.2, 0.0], 1, Padding::Same, Activation::Relu).unwrap();
        for px in y.data.chunks(3) {
            assert_eq!(px, &[0.5, 0.0, 0.0]);
        }
        let t = conv2d_transpose(&FeatureMap::zeros(1, 3, 3, 3), &k, &[0.25, -1.0], 1, Padding::Same, (3, 3), Activation::Identity)
            .unwrap();
        for px in t.data.chunks(2) {
            assert_eq!(px, &[0.25, -1.0]);
        }
    }

    #[test]
    fn valid_padding_and_stride_shapes() {
        let x = FeatureMap::zeros(1, 7, 6, 1);
        let k = Kernel::zeros(3, 1, 2);
        let y = conv2d(&x, &k, &[0.0; 2], 2, Padding::Valid, Activation::Identity).unwrap();
        assert_eq!(y.shape(), (1, 3, 2, 2));
        let y = conv2d(&x, &k, &[0.0; 2], 2, Padding::Same, Activation::Identity).unwrap();
        assert_eq!(y.shape(), (1, 4, 3, 2));
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let x = FeatureMap::zeros(1, 3, 3, 2);
        let k = Kernel::zeros(3, 1, 1);
        let err = conv2d(&x, &k, &[0.0], 1, Padding::Same, Activation::Identity).unwrap_err();
        assert!(err.to_string().contains("channel axis"));
    }

    #[test]
    fn even_kernel_rejected() {
        let x = FeatureMap::zeros(1, 3, 3, 1);
        let k = Kernel::zeros(2, 1, 1);
        assert!(conv2d(&x, &k, &[0.0], 1, Padding::Same, Activation::Identity).is_err());
    }

    #[test]
    fn inconsistent_transpose_shape() {
        let x = FeatureMap::zeros(1, 3, 3, 1);
        let k = Kernel::zeros(3, 1, 1);
        let err = conv2d_transpose(&x, &k, &[0.0], 2, Padding::Same, (8, 8), Activation::Identity);
        assert!(matches!(err, Err(Error::Dimension(_))));
        assert!(conv2d_transpose(&x, &k, &[0.0], 2, Padding::Same, (6, 5), Activation::Identity).is_ok());
    }

    #[test]
    fn nan_rejected() {
        let mut x = FeatureMap::zeros(1, 3, 3, 1);
        x.data[4] = f64::NAN;
        let k = Kernel::new(1, 1, 1, vec![1.0]).unwrap();
        assert!(matches!(
            conv2d(&x, &k, &[0.0], 1, Padding::Same, Activation::Identity),
            Err(Error::NonFinite(_))
        ));
        let k = Kernel::new(1, 1, 1, vec![f64::INFINITY]).unwrap();
        assert!(conv2d(&FeatureMap::zeros(1, 3, 3, 1), &k, &[0.0], 1, Padding::Same, Activation::Identity).is_err());
    }

    #[test]
    fn strided_adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &(stride, padding) in &[(2, Padding::Same), (2, Padding::Valid), (3, Padding::Same)] {
            let x = random_map(&mut rng, 2, 7, 6, 2);
            let k = random_kernel(&mut rng, 3, 2, 3);
            let y = conv2d(&x, &k, &[0.0; 3], stride, padding, Activation::Identity).unwrap();
            let v = random_map(&mut rng, 2, y.height, y.width, 3);
            let xt = conv2d_transpose(&v, &k, &[0.0; 2], stride, padding, (7, 6), Activation::Identity).unwrap();
            assert!((y.dot(&v) - x.dot(&xt)).abs() < 1e-10);
        }
    }
}
