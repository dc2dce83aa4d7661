//! 2-D cross-correlation: dense (`groups = 1`) and depthwise (`groups = C`).

use rand::Rng;

use super::gemm::{gemm_acc, transpose};
use super::param::{join, Module, Param, Slot};
use super::{for_each_image, kaiming_uniform};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub const POINTWISE: ConvSpec = ConvSpec {
        stride: 1,
        padding: 0,
        groups: 1,
    };

    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        ConvSpec {
            stride,
            padding,
            groups,
        }
    }
}

/// `floor((size + 2·pad − k)/stride) + 1`, or `None` when not positive.
pub fn conv_out_size(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || size + 2 * pad < k {
        return None;
    }
    Some((size + 2 * pad - k) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
enum Kernel {
    Pointwise,
    Depthwise,
    Dense,
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

fn geometry(x: &[usize], w: &[usize], spec: ConvSpec) -> Result<(Geometry, Kernel)> {
    let (&[n, ci, h, wd], &[co, cig, kh, kw]) = (x, w) else {
        return Err(Error::shape("conv2d", x, w));
    };
    let g = spec.groups;
    if g == 0 || ci % g != 0 || co % g != 0 || cig * g != ci {
        return Err(Error::ShapeMismatch {
            op: "conv2d channels",
            lhs: x.to_vec(),
            rhs: w.to_vec(),
        });
    }
    let (Some(ho), Some(wo)) = (
        conv_out_size(h, kh, spec.stride, spec.padding),
        conv_out_size(wd, kw, spec.stride, spec.padding),
    ) else {
        return Err(Error::InvalidShape {
            shape: x.to_vec(),
            reason: format!(
                "conv output would be empty for kernel {kh}×{kw}, stride {}, pad {}",
                spec.stride, spec.padding
            ),
        });
    };
    let kernel = if g == 1 {
        if kh == 1 && kw == 1 && spec.stride == 1 && spec.padding == 0 {
            Kernel::Pointwise
        } else {
            Kernel::Dense
        }
    } else if g == ci && co == ci {
        Kernel::Depthwise
    } else {
        return Err(Error::arg(format!(
            "grouped convolution with groups={g}, in={ci}, out={co} is not supported \
             (only groups=1 or depthwise)"
        )));
    };
    let geo = Geometry {
        n,
        ci,
        h,
        w: wd,
        co,
        kh,
        kw,
        ho,
        wo,
        stride: spec.stride,
        pad: spec.padding,
    };
    Ok((geo, kernel))
}

fn im2col<T: Scalar>(g: &Geometry, x: &[T], cols: &mut [T]) {
    let howo = g.ho * g.wo;
    for c in 0..g.ci {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * howo..(row + 1) * howo];
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    for ow in 0..g.wo {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        dst[oh * g.wo + ow] = if ih >= 0
                            && (ih as usize) < g.h
                            && iw >= 0
                            && (iw as usize) < g.w
                        {
                            plane[ih as usize * g.w + iw as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(g: &Geometry, cols: &[T], dx: &mut [T]) {
    let howo = g.ho * g.wo;
    for c in 0..g.ci {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * howo..(row + 1) * howo];
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih as usize >= g.h {
                        continue;
                    }
                    for ow in 0..g.wo {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        if iw >= 0 && (iw as usize) < g.w {
                            plane[ih as usize * g.w + iw as usize] += src[oh * g.wo + ow];
                        }
                    }
                }
            }
        }
    }
}

/// Start/end of output positions whose tap `k` lands inside `[0, size)`.
#[inline]
fn valid_range(k: usize, size: usize, out: usize, stride: usize, pad: usize) -> (usize, usize) {
    // o·stride + k − pad ∈ [0, size)
    let lo = if k >= pad {
        0
    } else {
        (pad - k).div_ceil(stride)
    };
    let hi = if size + pad > k {
        ((size + pad - k - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

fn depthwise_plane<T: Scalar>(g: &Geometry, x: &[T], wk: &[T], y: &mut [T]) {
    for ki in 0..g.kh {
        let (oh0, oh1) = valid_range(ki, g.h, g.ho, g.stride, g.pad);
        for kj in 0..g.kw {
            let wv = wk[ki * g.kw + kj];
            let (ow0, ow1) = valid_range(kj, g.w, g.wo, g.stride, g.pad);
            for oh in oh0..oh1 {
                let ih = oh * g.stride + ki - g.pad;
                let xrow = &x[ih * g.w..(ih + 1) * g.w];
                let yrow = &mut y[oh * g.wo..(oh + 1) * g.wo];
                if g.stride == 1 {
                    let off = ow0 + kj - g.pad;
                    for (yv, &xv) in yrow[ow0..ow1].iter_mut().zip(&xrow[off..off + (ow1 - ow0)]) {
                        *yv += wv * xv;
                    }
                } else {
                    for ow in ow0..ow1 {
                        yrow[ow] += wv * xrow[ow * g.stride + kj - g.pad];
                    }
                }
            }
        }
    }
}

fn depthwise_plane_backward<T: Scalar>(
    g: &Geometry,
    x: &[T],
    wk: &[T],
    dy: &[T],
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
) {
    if let Some(dx) = dx {
        for ki in 0..g.kh {
            let (oh0, oh1) = valid_range(ki, g.h, g.ho, g.stride, g.pad);
            for kj in 0..g.kw {
                let wv = wk[ki * g.kw + kj];
                let (ow0, ow1) = valid_range(kj, g.w, g.wo, g.stride, g.pad);
                for oh in oh0..oh1 {
                    let ih = oh * g.stride + ki - g.pad;
                    for ow in ow0..ow1 {
                        dx[ih * g.w + ow * g.stride + kj - g.pad] += wv * dy[oh * g.wo + ow];
                    }
                }
            }
        }
    }
    if let Some(dw) = dw {
        for ki in 0..g.kh {
            let (oh0, oh1) = valid_range(ki, g.h, g.ho, g.stride, g.pad);
            for kj in 0..g.kw {
                let (ow0, ow1) = valid_range(kj, g.w, g.wo, g.stride, g.pad);
                let mut acc = T::zero();
                for oh in oh0..oh1 {
                    let ih = oh * g.stride + ki - g.pad;
                    for ow in ow0..ow1 {
                        acc += x[ih * g.w + ow * g.stride + kj - g.pad] * dy[oh * g.wo + ow];
                    }
                }
                dw[ki * g.kw + kj] += acc;
            }
        }
    }
}

fn forward_value<T: Scalar>(g: &Geometry, kernel: Kernel, x: &[T], w: &[T]) -> Vec<T> {
    let in_per = g.ci * g.h * g.w;
    let out_per = g.co * g.ho * g.wo;
    let howo = g.ho * g.wo;
    let mut y = vec![T::zero(); g.n * out_per];
    match kernel {
        Kernel::Pointwise => for_each_image(&mut y, out_per, |n, yn| {
            gemm_acc(g.co, g.ci, howo, w, &x[n * in_per..(n + 1) * in_per], yn);
        }),
        Kernel::Dense => {
            let rows = g.ci * g.kh * g.kw;
            for_each_image(&mut y, out_per, |n, yn| {
                let mut cols = vec![T::zero(); rows * howo];
                im2col(g, &x[n * in_per..(n + 1) * in_per], &mut cols);
                gemm_acc(g.co, rows, howo, w, &cols, yn);
            });
        }
        Kernel::Depthwise => {
            let (hw, k) = (g.h * g.w, g.kh * g.kw);
            for_each_image(&mut y, out_per, |n, yn| {
                for c in 0..g.ci {
                    let x0 = (n * g.ci + c) * hw;
                    depthwise_plane(
                        g,
                        &x[x0..x0 + hw],
                        &w[c * k..(c + 1) * k],
                        &mut yn[c * howo..(c + 1) * howo],
                    );
                }
            });
        }
    }
    y
}

/// Differentiable convolution; `weight` is `OutC×InC/groups×KH×KW`.
pub fn conv2d<T: Scalar>(
    x: &Var<T>,
    weight: &Var<T>,
    bias: Option<&Var<T>>,
    spec: ConvSpec,
) -> Result<Var<T>> {
    let (g, kernel) = geometry(x.shape(), weight.shape(), spec)?;
    if let Some(b) = bias {
        if b.shape() != [g.co] {
            return Err(Error::shape("conv2d bias", b.shape(), &[g.co]));
        }
    }
    let mut y = forward_value(&g, kernel, x.value().data(), weight.value().data());
    let howo = g.ho * g.wo;
    if let Some(b) = bias {
        let bd = b.value().data();
        for (plane, chunk) in y.chunks_mut(howo).enumerate() {
            let bv = bd[plane % g.co];
            for v in chunk {
                *v += bv;
            }
        }
    }
    let value = Tensor::from_parts(vec![g.n, g.co, g.ho, g.wo], y);
    let mut parents = vec![x.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    Var::from_op(
        "conv2d",
        value,
        parents,
        Box::new(move |gy, ps| conv_backward(&g, kernel, gy.data(), ps)),
    )
}

fn conv_backward<T: Scalar>(
    g: &Geometry,
    kernel: Kernel,
    dy: &[T],
    ps: &[Var<T>],
) -> Result<Vec<Option<Tensor<T>>>> {
    let x = ps[0].value().data();
    let w = ps[1].value().data();
    let want_x = ps[0].requires_grad();
    let want_w = ps[1].requires_grad();
    let in_per = g.ci * g.h * g.w;
    let howo = g.ho * g.wo;
    let out_per = g.co * howo;

    let mut dx = want_x.then(|| vec![T::zero(); g.n * in_per]);
    let mut dw = want_w.then(|| vec![T::zero(); w.len()]);

    match kernel {
        Kernel::Pointwise => {
            if let Some(dx) = dx.as_mut() {
                let wt = transpose(g.co, g.ci, w);
                for_each_image(dx, in_per, |n, dxn| {
                    gemm_acc(g.ci, g.co, howo, &wt, &dy[n * out_per..(n + 1) * out_per], dxn);
                });
            }
            if let Some(dw) = dw.as_mut() {
                for n in 0..g.n {
                    let xt = transpose(g.ci, howo, &x[n * in_per..(n + 1) * in_per]);
                    gemm_acc(g.co, howo, g.ci, &dy[n * out_per..(n + 1) * out_per], &xt, dw);
                }
            }
        }
        Kernel::Dense => {
            let rows = g.ci * g.kh * g.kw;
            let wt = want_x.then(|| transpose(g.co, rows, w));
            let mut cols = vec![T::zero(); rows * howo];
            let mut dcols = vec![T::zero(); rows * howo];
            for n in 0..g.n {
                let dyn_ = &dy[n * out_per..(n + 1) * out_per];
                if let Some(dw) = dw.as_mut() {
                    im2col(g, &x[n * in_per..(n + 1) * in_per], &mut cols);
                    let ct = transpose(rows, howo, &cols);
                    gemm_acc(g.co, howo, rows, dyn_, &ct, dw);
                }
                if let (Some(dx), Some(wt)) = (dx.as_mut(), wt.as_ref()) {
                    dcols.iter_mut().for_each(|v| *v = T::zero());
                    gemm_acc(rows, g.co, howo, wt, dyn_, &mut dcols);
                    col2im_add(g, &dcols, &mut dx[n * in_per..(n + 1) * in_per]);
                }
            }
        }
        Kernel::Depthwise => {
            let (hw, k) = (g.h * g.w, g.kh * g.kw);
            for n in 0..g.n {
                for c in 0..g.ci {
                    let x0 = (n * g.ci + c) * hw;
                    let y0 = (n * g.co + c) * howo;
                    depthwise_plane_backward(
                        g,
                        &x[x0..x0 + hw],
                        &w[c * k..(c + 1) * k],
                        &dy[y0..y0 + howo],
                        dx.as_mut().map(|d| &mut d[x0..x0 + hw]),
                        dw.as_mut().map(|d| &mut d[c * k..(c + 1) * k]),
                    );
                }
            }
        }
    }

    let mut grads = vec![
        dx.map(|d| Tensor::from_parts(ps[0].shape().to_vec(), d)),
        dw.map(|d| Tensor::from_parts(ps[1].shape().to_vec(), d)),
    ];
    if ps.len() == 3 {
        grads.push(ps[2].requires_grad().then(|| {
            let mut db = vec![T::zero(); g.co];
            for (plane, chunk) in dy.chunks(howo).enumerate() {
                let mut acc = T::zero();
                for &v in chunk {
                    acc += v;
                }
                db[plane % g.co] += acc;
            }
            Tensor::from_parts(vec![g.co], db)
        }));
    }
    Ok(grads)
}

/// Convolution layer with its own weights.
#[derive(Debug)]
pub struct Conv2dLayer<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub spec: ConvSpec,
}

impl<T: Scalar> Conv2dLayer<T> {
    /// Kaiming-uniform (fan-in) initialised layer.
    pub fn new<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        spec: ConvSpec,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if spec.groups == 0 || in_ch % spec.groups != 0 || out_ch % spec.groups != 0 {
            return Err(Error::InvalidConfig(format!(
                "conv {in_ch}->{out_ch} not divisible by groups {}",
                spec.groups
            )));
        }
        let shape = [out_ch, in_ch / spec.groups, kernel, kernel];
        let fan_in = in_ch / spec.groups * kernel * kernel;
        let weight = kaiming_uniform(&shape, fan_in, rng);
        Ok(Conv2dLayer {
            weight: Param::new(weight),
            bias: bias.then(|| Param::new(Tensor::zeros(&[out_ch]))),
            spec,
        })
    }

    pub fn from_weights(weight: Tensor<T>, bias: Option<Tensor<T>>, spec: ConvSpec) -> Self {
        Conv2dLayer {
            weight: Param::new(weight),
            bias: bias.map(Param::new),
            spec,
        }
    }

    pub fn pointwise<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, rng: &mut R) -> Result<Self> {
        Self::new(in_ch, out_ch, 1, ConvSpec::POINTWISE, false, rng)
    }

    /// 3×3 depthwise convolution with padding 1.
    pub fn depthwise<R: Rng + ?Sized>(ch: usize, stride: usize, rng: &mut R) -> Result<Self> {
        Self::new(ch, ch, 3, ConvSpec::new(stride, 1, ch), false, rng)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1] * self.spec.groups
    }

    pub fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        if x.shape().len() == 4 && x.shape()[1] != self.in_channels() {
            return Err(Error::ShapeMismatch {
                op: "conv2d input channels",
                lhs: x.shape().to_vec(),
                rhs: self.weight.shape(),
            });
        }
        let bias = self.bias.as_ref().map(Param::var);
        conv2d(x, &self.weight.var(), bias.as_ref(), self.spec)
    }

    /// Depthwise entry point; rejects layers that mix channels.
    pub fn forward_depthwise(&self, x: &Var<T>) -> Result<Var<T>> {
        let w = self.weight.shape();
        if self.spec.groups != self.in_channels() || w[0] != self.in_channels() || w[1] != 1 {
            return Err(Error::arg(
                "depthwise forward requires groups == in_channels == out_channels",
            ));
        }
        self.forward(x)
    }
}

impl<T: Scalar> Module<T> for Conv2dLayer<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'a, T>)) {
        f(&join(prefix, "weight"), Slot::Param(&self.weight));
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), Slot::Param(b));
        }
    }
}
