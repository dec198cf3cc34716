//! Elementwise maps, reductions, shape ops and the smooth-L1 penalty.

use super::{Tensor, Var};
use crate::error::{ensure, Result};

/// Negative-side slope of every hidden activation.
pub const LEAKY_SLOPE: f64 = 0.1;

fn same_shape(op: &str, a: &Var, b: &Var) -> Result<()> {
    ensure!(
        a.shape() == b.shape(),
        "{op}: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
    Ok(())
}

pub fn add(a: &Var, b: &Var) -> Result<Var> {
    same_shape("add", a, b)?;
    let out = a.value().zip_map(b.value(), |x, y| x + y)?;
    Var::from_op(
        "add",
        out,
        vec![a.clone(), b.clone()],
        Box::new(|g, _, _| Ok(vec![Some(g.clone()), Some(g.clone())])),
    )
}

pub fn sub(a: &Var, b: &Var) -> Result<Var> {
    same_shape("sub", a, b)?;
    let out = a.value().zip_map(b.value(), |x, y| x - y)?;
    Var::from_op(
        "sub",
        out,
        vec![a.clone(), b.clone()],
        Box::new(|g, _, _| Ok(vec![Some(g.clone()), Some(g.map(|v| -v))])),
    )
}

pub fn mul(a: &Var, b: &Var) -> Result<Var> {
    same_shape("mul", a, b)?;
    let out = a.value().zip_map(b.value(), |x, y| x * y)?;
    Var::from_op(
        "mul",
        out,
        vec![a.clone(), b.clone()],
        Box::new(|g, inputs, _| {
            let ga = g.zip_map(inputs[1].value(), |g, y| g * y)?;
            let gb = g.zip_map(inputs[0].value(), |g, x| g * x)?;
            Ok(vec![Some(ga), Some(gb)])
        }),
    )
}

pub fn scale(a: &Var, factor: f64) -> Result<Var> {
    Var::from_op(
        "scale",
        a.value().map(|v| v * factor),
        vec![a.clone()],
        Box::new(move |g, _, _| Ok(vec![Some(g.map(|v| v * factor))])),
    )
}

/// |x|, with derivative 0 at x = 0.
pub fn abs(a: &Var) -> Result<Var> {
    Var::from_op(
        "abs",
        a.value().map(f64::abs),
        vec![a.clone()],
        Box::new(|g, inputs, _| {
            let gx = g.zip_map(inputs[0].value(), |g, x| {
                if x > 0.0 {
                    g
                } else if x < 0.0 {
                    -g
                } else {
                    0.0
                }
            })?;
            Ok(vec![Some(gx)])
        }),
    )
}

pub fn sum(a: &Var) -> Result<Var> {
    Var::from_op(
        "sum",
        Tensor::scalar(a.value().sum()),
        vec![a.clone()],
        Box::new(|g, inputs, _| Ok(vec![Some(Tensor::full(inputs[0].shape(), g.data()[0]))])),
    )
}

pub fn mean(a: &Var) -> Result<Var> {
    let n = a.value().numel();
    ensure!(n > 0, "mean of empty tensor");
    scale(&sum(a)?, 1.0 / n as f64)
}

pub fn leaky_relu(a: &Var, slope: f64) -> Result<Var> {
    Var::from_op(
        "leaky_relu",
        a.value().map(|v| if v > 0.0 { v } else { slope * v }),
        vec![a.clone()],
        Box::new(move |g, inputs, _| {
            let gx = g.zip_map(inputs[0].value(), |g, x| if x > 0.0 { g } else { slope * g })?;
            Ok(vec![Some(gx)])
        }),
    )
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(a: &Var) -> Result<Var> {
    Var::from_op(
        "sigmoid",
        a.value().map(sigmoid_scalar),
        vec![a.clone()],
        Box::new(|g, _, out| Ok(vec![Some(g.zip_map(out, |g, s| g * s * (1.0 - s))?)])),
    )
}

/// Piecewise penalty: 0.5·x² inside the unit interval, |x| − 0.5 outside.
pub fn smooth_l1_value(x: f64) -> f64 {
    let ax = x.abs();
    if ax < 1.0 {
        0.5 * x * x
    } else {
        ax - 0.5
    }
}

fn smooth_l1_slope(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// Mean smooth-L1 penalty of `pred - target` over all elements.
pub fn smooth_l1(pred: &Var, target: &Var) -> Result<Var> {
    same_shape("smooth_l1", pred, target)?;
    let n = pred.value().numel() as f64;
    let total: f64 = pred
        .value()
        .data()
        .iter()
        .zip(target.value().data())
        .map(|(p, t)| smooth_l1_value(p - t))
        .sum();
    Var::from_op(
        "smooth_l1",
        Tensor::scalar(total / n),
        vec![pred.clone(), target.clone()],
        Box::new(move |g, inputs, _| {
            let k = g.data()[0] / n;
            let gp = inputs[0]
                .value()
                .zip_map(inputs[1].value(), |p, t| k * smooth_l1_slope(p - t))?;
            let gt = gp.map(|v| -v);
            Ok(vec![Some(gp), Some(gt)])
        }),
    )
}

/// Mean smooth-L1 penalty over the elements where `mask > 0`.
pub fn smooth_l1_masked(pred: &Var, target: &Tensor, mask: &Tensor) -> Result<Var> {
    ensure!(
        pred.shape() == target.shape() && pred.shape() == mask.shape(),
        "smooth_l1_masked: shapes {:?}, {:?}, {:?} differ",
        pred.shape(),
        target.shape(),
        mask.shape()
    );
    let count = mask.data().iter().filter(|&&m| m > 0.0).count();
    ensure!(count > 0, "smooth_l1_masked: mask selects no element");
    let n = count as f64;
    let total: f64 = pred
        .value()
        .data()
        .iter()
        .zip(target.data())
        .zip(mask.data())
        .filter(|(_, &m)| m > 0.0)
        .map(|((p, t), _)| smooth_l1_value(p - t))
        .sum();
    let target = target.clone();
    let mask = mask.clone();
    Var::from_op(
        "smooth_l1_masked",
        Tensor::scalar(total / n),
        vec![pred.clone()],
        Box::new(move |g, inputs, _| {
            let k = g.data()[0] / n;
            let data = inputs[0]
                .value()
                .data()
                .iter()
                .zip(target.data())
                .zip(mask.data())
                .map(|((p, t), &m)| if m > 0.0 { k * smooth_l1_slope(p - t) } else { 0.0 })
                .collect();
            Ok(vec![Some(Tensor::from_parts(target.shape().to_vec(), data))])
        }),
    )
}

/// Multiplies every channel of `x: [N,C,...]` by the single channel of
/// `gate: [N,1,...]`.
pub fn mul_channel_broadcast(x: &Var, gate: &Var) -> Result<Var> {
    let xs = x.shape();
    let gs = gate.shape();
    ensure!(
        xs.len() >= 2 && gs.len() == xs.len() && gs[0] == xs[0] && gs[1] == 1 && gs[2..] == xs[2..],
        "mul_channel_broadcast: {:?} cannot gate {:?}",
        gs,
        xs
    );
    let (n, c) = (xs[0], xs[1]);
    let plane: usize = xs[2..].iter().product();
    let xd = x.value().data();
    let gd = gate.value().data();
    let mut out = vec![0.0; xd.len()];
    for b in 0..n {
        let gp = &gd[b * plane..(b + 1) * plane];
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            for ((o, &v), &g) in out[off..off + plane].iter_mut().zip(&xd[off..off + plane]).zip(gp) {
                *o = v * g;
            }
        }
    }
    Var::from_op(
        "mul_channel_broadcast",
        Tensor::from_parts(xs.to_vec(), out),
        vec![x.clone(), gate.clone()],
        Box::new(move |g, inputs, _| {
            let xd = inputs[0].value().data();
            let gd = inputs[1].value().data();
            let gout = g.data();
            let mut gx = vec![0.0; xd.len()];
            let mut gg = vec![0.0; gd.len()];
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * plane;
                    for i in 0..plane {
                        gx[off + i] = gout[off + i] * gd[b * plane + i];
                        gg[b * plane + i] += gout[off + i] * xd[off + i];
                    }
                }
            }
            Ok(vec![
                Some(Tensor::from_parts(inputs[0].shape().to_vec(), gx)),
                Some(Tensor::from_parts(inputs[1].shape().to_vec(), gg)),
            ])
        }),
    )
}

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, inner)
}

/// Joins tensors along `axis`; all other extents must agree.
pub fn concat(parts: &[Var], axis: usize) -> Result<Var> {
    ensure!(!parts.is_empty(), "concat of zero tensors");
    let first = parts[0].shape();
    ensure!(axis < first.len(), "concat axis {axis} out of range for {first:?}");
    for p in parts {
        let s = p.shape();
        ensure!(
            s.len() == first.len()
                && s.iter().zip(first).enumerate().all(|(i, (a, b))| i == axis || a == b),
            "concat: incompatible shapes {:?} and {:?} along axis {axis}",
            first,
            s
        );
    }
    let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
    let total: usize = extents.iter().sum();
    let (outer, inner) = split_at_axis(first, axis);
    let mut shape = first.to_vec();
    shape[axis] = total;
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (p, &e) in parts.iter().zip(&extents) {
            let block = e * inner;
            out.extend_from_slice(&p.value().data()[o * block..(o + 1) * block]);
        }
    }
    Var::from_op(
        "concat",
        Tensor::from_parts(shape, out),
        parts.to_vec(),
        Box::new(move |g, inputs, _| {
            let gd = g.data();
            let mut grads: Vec<Vec<f64>> =
                extents.iter().map(|e| Vec::with_capacity(outer * e * inner)).collect();
            let mut pos = 0;
            for _ in 0..outer {
                for (gi, &e) in grads.iter_mut().zip(&extents) {
                    let block = e * inner;
                    gi.extend_from_slice(&gd[pos..pos + block]);
                    pos += block;
                }
            }
            Ok(grads
                .into_iter()
                .zip(inputs)
                .map(|(d, inp)| Some(Tensor::from_parts(inp.shape().to_vec(), d)))
                .collect())
        }),
    )
}

/// The half-open range `[start, end)` of `axis`.
pub fn slice_axis(x: &Var, axis: usize, start: usize, end: usize) -> Result<Var> {
    let shape = x.shape();
    ensure!(axis < shape.len(), "slice axis {axis} out of range for {shape:?}");
    ensure!(
        start < end && end <= shape[axis],
        "slice [{start},{end}) invalid for extent {}",
        shape[axis]
    );
    let (outer, inner) = split_at_axis(shape, axis);
    let full = shape[axis] * inner;
    let len = (end - start) * inner;
    let mut out = Vec::with_capacity(outer * len);
    for o in 0..outer {
        let base = o * full + start * inner;
        out.extend_from_slice(&x.value().data()[base..base + len]);
    }
    let mut out_shape = shape.to_vec();
    out_shape[axis] = end - start;
    Var::from_op(
        "slice",
        Tensor::from_parts(out_shape, out),
        vec![x.clone()],
        Box::new(move |g, inputs, _| {
            let mut gx = vec![0.0; inputs[0].value().numel()];
            for o in 0..outer {
                let base = o * full + start * inner;
                gx[base..base + len].copy_from_slice(&g.data()[o * len..(o + 1) * len]);
            }
            Ok(vec![Some(Tensor::from_parts(inputs[0].shape().to_vec(), gx))])
        }),
    )
}

pub fn reshape(x: &Var, shape: &[usize]) -> Result<Var> {
    let out = x.value().reshape(shape)?;
    Var::from_op(
        "reshape",
        out,
        vec![x.clone()],
        Box::new(|g, inputs, _| Ok(vec![Some(g.reshape(inputs[0].shape())?)])),
    )
}
