//! Convolutions lowered to GEMM through im2col.
//!
//! 2D convolution is handled as the 3D case with a unit depth axis, so one
//! pair of `im2col`/`col2im` routines serves conv2d, conv3d and deconv2d.

use super::{Tensor, Var};
use crate::error::{ensure, invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub const fn new(stride: usize, padding: usize) -> Self {
        Self { stride, padding }
    }

    /// Stride 1 with padding that keeps the spatial size for odd kernels.
    pub const fn same(kernel: usize) -> Self {
        Self { stride: 1, padding: kernel / 2 }
    }
}

/// Geometry of a convolution reading `input` extents and writing `output`.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    output: [usize; 3],
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kernel.iter().product::<usize>()
    }

    fn cols(&self) -> usize {
        self.output.iter().product()
    }

    fn input_len(&self) -> usize {
        self.channels * self.input.iter().product::<usize>()
    }
}

fn conv_extent(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = n + 2 * pad;
    if padded < k {
        None
    } else {
        Some((padded - k) / stride + 1)
    }
}

/// Visits every (row, col) of the unfolded matrix whose source is inside the
/// input, passing (row, col, input offset).
#[inline]
fn for_each_tap(g: &Geometry, mut f: impl FnMut(usize, usize, usize)) {
    let [id, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let [od, oh, ow] = g.output;
    let mut row = 0;
    for c in 0..g.channels {
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    for oz in 0..od {
                        let iz = (oz * sd + kz) as isize - pd as isize;
                        if iz < 0 || iz >= id as isize {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy * sh + ky) as isize - ph as isize;
                            if iy < 0 || iy >= ih as isize {
                                continue;
                            }
                            let src_row = ((c * id + iz as usize) * ih + iy as usize) * iw;
                            let dst_row = (oz * oh + oy) * ow;
                            // ox range with ix = ox*sw + kx - pw inside [0, iw)
                            let lo = if kx >= pw { 0 } else { (pw - kx).div_ceil(sw) };
                            let hi = if iw + pw > kx { ((iw + pw - kx - 1) / sw + 1).min(ow) } else { 0 };
                            for ox in lo..hi {
                                let ix = ox * sw + kx - pw;
                                f(row, dst_row + ox, src_row + ix);
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn im2col(x: &[f64], g: &Geometry) -> Vec<f64> {
    debug_assert_eq!(x.len(), g.input_len());
    let cols = g.cols();
    let mut out = vec![0.0; g.rows() * cols];
    for_each_tap(g, |r, c, src| out[r * cols + c] = x[src]);
    out
}

fn col2im(cols_buf: &[f64], g: &Geometry, x: &mut [f64]) {
    debug_assert_eq!(x.len(), g.input_len());
    let cols = g.cols();
    for_each_tap(g, |r, c, dst| x[dst] += cols_buf[r * cols + c]);
}

/// Strided view of a row-major matrix for GEMM.
#[derive(Clone, Copy)]
struct Mat<'a> {
    data: &'a [f64],
    rs: isize,
    cs: isize,
}

impl<'a> Mat<'a> {
    fn rows(data: &'a [f64], ncols: usize) -> Self {
        Self { data, rs: ncols as isize, cs: 1 }
    }

    /// Transposed view of a row-major matrix with `ncols` columns.
    fn transposed(data: &'a [f64], ncols: usize) -> Self {
        Self { data, rs: 1, cs: ncols as isize }
    }
}

/// c (m×n, row-major) = a (m×k) · b (k×n) + beta · c
fn gemm(m: usize, k: usize, n: usize, a: Mat, b: Mat, beta: f64, c: &mut [f64]) {
    assert!(a.data.len() >= m * k && b.data.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above bound every index dgemm touches given the
    // strides, which describe dense m×k, k×n and m×n matrices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn check_bias(bias: Option<&Var>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        ensure!(
            b.shape() == [channels],
            "bias shape {:?} does not match {channels} output channels",
            b.shape()
        );
    }
    Ok(())
}

fn bias_grad(g: &[f64], batch: usize, channels: usize, plane: usize) -> Tensor {
    let mut gb = vec![0.0; channels];
    for n in 0..batch {
        for (c, acc) in gb.iter_mut().enumerate() {
            let off = (n * channels + c) * plane;
            *acc += g[off..off + plane].iter().sum::<f64>();
        }
    }
    Tensor::from_parts(vec![channels], gb)
}

fn add_bias(out: &mut [f64], bias: Option<&Var>, batch: usize, channels: usize, plane: usize) {
    if let Some(b) = bias {
        let bd = b.value().data();
        for n in 0..batch {
            for (c, &bv) in bd.iter().enumerate() {
                let off = (n * channels + c) * plane;
                out[off..off + plane].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
}

fn with_bias(mut inputs: Vec<Var>, bias: Option<&Var>) -> Vec<Var> {
    if let Some(b) = bias {
        inputs.push(b.clone());
    }
    inputs
}

/// Shared forward/backward for conv2d and conv3d.
fn conv_nd(
    name: &'static str,
    x: &Var,
    weight: &Var,
    bias: Option<&Var>,
    batch: usize,
    c_out: usize,
    geom: Geometry,
    out_shape: Vec<usize>,
) -> Result<Var> {
    check_bias(bias, c_out)?;
    let rows = geom.rows();
    let plane = geom.cols();
    let in_len = geom.input_len();
    let xd = x.value().data();
    let wd = weight.value().data();
    let mut out = vec![0.0; batch * c_out * plane];
    for n in 0..batch {
        let cols = im2col(&xd[n * in_len..(n + 1) * in_len], &geom);
        gemm(
            c_out,
            rows,
            plane,
            Mat::rows(wd, rows),
            Mat::rows(&cols, plane),
            0.0,
            &mut out[n * c_out * plane..(n + 1) * c_out * plane],
        );
    }
    add_bias(&mut out, bias, batch, c_out, plane);

    Var::from_op(
        name,
        Tensor::from_parts(out_shape, out),
        with_bias(vec![x.clone(), weight.clone()], bias),
        Box::new(move |g, inputs, _| {
            let gd = g.data();
            let xd = inputs[0].value().data();
            let wd = inputs[1].value().data();
            let need_x = inputs[0].requires_grad();
            let mut gx = need_x.then(|| vec![0.0; xd.len()]);
            let mut gw = vec![0.0; wd.len()];
            for n in 0..batch {
                let gn = &gd[n * c_out * plane..(n + 1) * c_out * plane];
                let cols = im2col(&xd[n * in_len..(n + 1) * in_len], &geom);
                gemm(
                    c_out,
                    plane,
                    rows,
                    Mat::rows(gn, plane),
                    Mat::transposed(&cols, plane),
                    1.0,
                    &mut gw,
                );
                if let Some(gx) = gx.as_mut() {
                    let mut gcols = cols;
                    gemm(
                        rows,
                        c_out,
                        plane,
                        Mat::transposed(wd, rows),
                        Mat::rows(gn, plane),
                        0.0,
                        &mut gcols,
                    );
                    col2im(&gcols, &geom, &mut gx[n * in_len..(n + 1) * in_len]);
                }
            }
            let mut grads = vec![
                gx.map(|d| Tensor::from_parts(inputs[0].shape().to_vec(), d)),
                Some(Tensor::from_parts(inputs[1].shape().to_vec(), gw)),
            ];
            if inputs.len() == 3 {
                grads.push(Some(bias_grad(gd, batch, c_out, plane)));
            }
            Ok(grads)
        }),
    )
}

/// 2D cross-correlation with zero padding.
///
/// `input: [N, C_in, H, W]`, `weight: [C_out, C_in, k, k]`, `bias: [C_out]`.
pub fn conv2d(input: &Var, weight: &Var, bias: Option<&Var>, spec: ConvSpec) -> Result<Var> {
    let (xs, ws) = (input.shape(), weight.shape());
    ensure!(xs.len() == 4, "conv2d input must be 4D, got {xs:?}");
    ensure!(ws.len() == 4 && ws[2] == ws[3], "conv2d weight must be [C_out,C_in,k,k], got {ws:?}");
    ensure!(ws[1] == xs[1], "conv2d: input has {} channels, weight expects {}", xs[1], ws[1]);
    ensure!(ws[2] >= 1 && spec.stride >= 1, "conv2d: kernel and stride must be positive");
    let k = ws[2];
    let oh = conv_extent(xs[2], k, spec.stride, spec.padding)
        .ok_or_else(|| invalid!("conv2d: output height < 1 for input {xs:?}, kernel {k}"))?;
    let ow = conv_extent(xs[3], k, spec.stride, spec.padding)
        .ok_or_else(|| invalid!("conv2d: output width < 1 for input {xs:?}, kernel {k}"))?;
    let geom = Geometry {
        channels: xs[1],
        input: [1, xs[2], xs[3]],
        kernel: [1, k, k],
        stride: [1, spec.stride, spec.stride],
        pad: [0, spec.padding, spec.padding],
        output: [1, oh, ow],
    };
    conv_nd("conv2d", input, weight, bias, xs[0], ws[0], geom, vec![xs[0], ws[0], oh, ow])
}

/// 3D cross-correlation with zero padding over `(D, H, W)`.
///
/// `input: [N, C_in, D, H, W]`, `weight: [C_out, C_in, k, k, k]`.
pub fn conv3d(input: &Var, weight: &Var, bias: Option<&Var>, spec: ConvSpec) -> Result<Var> {
    let (xs, ws) = (input.shape(), weight.shape());
    ensure!(xs.len() == 5, "conv3d input must be 5D, got {xs:?}");
    ensure!(
        ws.len() == 5 && ws[2] == ws[3] && ws[3] == ws[4],
        "conv3d weight must be [C_out,C_in,k,k,k], got {ws:?}"
    );
    ensure!(ws[1] == xs[1], "conv3d: input has {} channels, weight expects {}", xs[1], ws[1]);
    ensure!(ws[2] >= 1 && spec.stride >= 1, "conv3d: kernel and stride must be positive");
    let k = ws[2];
    let mut out = [0; 3];
    for (o, &n) in out.iter_mut().zip(&xs[2..]) {
        *o = conv_extent(n, k, spec.stride, spec.padding)
            .ok_or_else(|| invalid!("conv3d: output extent < 1 for input {xs:?}, kernel {k}"))?;
    }
    let geom = Geometry {
        channels: xs[1],
        input: [xs[2], xs[3], xs[4]],
        kernel: [k; 3],
        stride: [spec.stride; 3],
        pad: [spec.padding; 3],
        output: out,
    };
    conv_nd(
        "conv3d",
        input,
        weight,
        bias,
        xs[0],
        ws[0],
        geom,
        vec![xs[0], ws[0], out[0], out[1], out[2]],
    )
}

/// Transposed 2D convolution, the adjoint of [`conv2d`] with the same
/// geometry. `weight: [C_in, C_out, k, k]`; output extent is
/// `(H - 1)·stride - 2·padding + k`.
pub fn deconv2d(input: &Var, weight: &Var, bias: Option<&Var>, spec: ConvSpec) -> Result<Var> {
    let (xs, ws) = (input.shape(), weight.shape());
    ensure!(xs.len() == 4, "deconv2d input must be 4D, got {xs:?}");
    ensure!(ws.len() == 4 && ws[2] == ws[3], "deconv2d weight must be [C_in,C_out,k,k], got {ws:?}");
    ensure!(ws[0] == xs[1], "deconv2d: input has {} channels, weight expects {}", xs[1], ws[0]);
    ensure!(spec.stride >= 1, "deconv2d: stride must be positive");
    let (batch, c_in, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (c_out, k) = (ws[1], ws[2]);
    let extent = |n: usize| -> Result<usize> {
        let e = (n as isize - 1) * spec.stride as isize - 2 * spec.padding as isize + k as isize;
        if e < 1 {
            Err(invalid!("deconv2d: output extent {e} < 1 for input {xs:?}"))
        } else {
            Ok(e as usize)
        }
    };
    let (oh, ow) = (extent(h)?, extent(w)?);
    check_bias(bias, c_out)?;
    // the conv that maps the deconv output back onto the deconv input
    let geom = Geometry {
        channels: c_out,
        input: [1, oh, ow],
        kernel: [1, k, k],
        stride: [1, spec.stride, spec.stride],
        pad: [0, spec.padding, spec.padding],
        output: [1, h, w],
    };
    let rows = geom.rows();
    let plane_in = h * w;
    let plane_out = oh * ow;
    let xd = input.value().data();
    let wd = weight.value().data();
    let mut out = vec![0.0; batch * c_out * plane_out];
    let mut cols = vec![0.0; rows * plane_in];
    for n in 0..batch {
        gemm(
            rows,
            c_in,
            plane_in,
            Mat::transposed(wd, rows),
            Mat::rows(&xd[n * c_in * plane_in..(n + 1) * c_in * plane_in], plane_in),
            0.0,
            &mut cols,
        );
        col2im(&cols, &geom, &mut out[n * c_out * plane_out..(n + 1) * c_out * plane_out]);
    }
    add_bias(&mut out, bias, batch, c_out, plane_out);

    Var::from_op(
        "deconv2d",
        Tensor::from_parts(vec![batch, c_out, oh, ow], out),
        with_bias(vec![input.clone(), weight.clone()], bias),
        Box::new(move |g, inputs, _| {
            let gd = g.data();
            let xd = inputs[0].value().data();
            let wd = inputs[1].value().data();
            let need_x = inputs[0].requires_grad();
            let mut gx = need_x.then(|| vec![0.0; xd.len()]);
            let mut gw = vec![0.0; wd.len()];
            for n in 0..batch {
                let gcols = im2col(&gd[n * c_out * plane_out..(n + 1) * c_out * plane_out], &geom);
                let xn = &xd[n * c_in * plane_in..(n + 1) * c_in * plane_in];
                gemm(
                    c_in,
                    plane_in,
                    rows,
                    Mat::rows(xn, plane_in),
                    Mat::transposed(&gcols, plane_in),
                    1.0,
                    &mut gw,
                );
                if let Some(gx) = gx.as_mut() {
                    gemm(
                        c_in,
                        rows,
                        plane_in,
                        Mat::rows(wd, rows),
                        Mat::rows(&gcols, plane_in),
                        0.0,
                        &mut gx[n * c_in * plane_in..(n + 1) * c_in * plane_in],
                    );
                }
            }
            let mut grads = vec![
                gx.map(|d| Tensor::from_parts(inputs[0].shape().to_vec(), d)),
                Some(Tensor::from_parts(inputs[1].shape().to_vec(), gw)),
            ];
            if inputs.len() == 3 {
                grads.push(Some(bias_grad(gd, batch, c_out, plane_out)));
            }
            Ok(grads)
        }),
    )
}
