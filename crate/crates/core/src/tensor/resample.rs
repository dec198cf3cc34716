use super::{Tensor, Var};
use crate::error::{ensure, Result};

/// Per output index: (lower source index, upper source index, upper weight).
fn align_corners_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            if dst == 1 || src == 1 {
                return (0, 0, 0.0);
            }
            let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Bilinear resize of `[N, C, H, W]` to a larger grid with align-corners
/// sampling (corner pixels of input and output coincide).
pub fn bilinear_upsample(x: &Var, out_h: usize, out_w: usize) -> Result<Var> {
    let s = x.shape();
    ensure!(s.len() == 4, "bilinear_upsample expects [N,C,H,W], got {s:?}");
    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
    ensure!(
        out_h >= h && out_w >= w,
        "bilinear_upsample cannot downsample {h}x{w} to {out_h}x{out_w}"
    );
    if out_h == h && out_w == w {
        return Var::from_op(
            "bilinear_upsample",
            x.value().clone(),
            vec![x.clone()],
            Box::new(|g, _, _| Ok(vec![Some(g.clone())])),
        );
    }
    let ty = align_corners_taps(h, out_h);
    let tx = align_corners_taps(w, out_w);
    let xd = x.value().data();
    let mut out = vec![0.0; planes * out_h * out_w];
    for p in 0..planes {
        let src = &xd[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * out_h * out_w..(p + 1) * out_h * out_w];
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - wx) + src[y0 * w + x1] * wx;
                let bottom = src[y1 * w + x0] * (1.0 - wx) + src[y1 * w + x1] * wx;
                dst[oy * out_w + ox] = top * (1.0 - wy) + bottom * wy;
            }
        }
    }
    let shape = vec![s[0], s[1], out_h, out_w];
    Var::from_op(
        "bilinear_upsample",
        Tensor::from_parts(shape, out),
        vec![x.clone()],
        Box::new(move |g, inputs, _| {
            let gd = g.data();
            let mut gx = vec![0.0; planes * h * w];
            for p in 0..planes {
                let gsrc = &gd[p * out_h * out_w..(p + 1) * out_h * out_w];
                let gdst = &mut gx[p * h * w..(p + 1) * h * w];
                for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                        let v = gsrc[oy * out_w + ox];
                        gdst[y0 * w + x0] += v * (1.0 - wy) * (1.0 - wx);
                        gdst[y0 * w + x1] += v * (1.0 - wy) * wx;
                        gdst[y1 * w + x0] += v * wy * (1.0 - wx);
                        gdst[y1 * w + x1] += v * wy * wx;
                    }
                }
            }
            Ok(vec![Some(Tensor::from_parts(inputs[0].shape().to_vec(), gx))])
        }),
    )
}

/// Mean over non-overlapping `factor × factor` blocks of `[N, C, H, W]`.
pub fn avg_pool2d(x: &Var, factor: usize) -> Result<Var> {
    let s = x.shape();
    ensure!(s.len() == 4, "avg_pool2d expects [N,C,H,W], got {s:?}");
    ensure!(factor >= 1, "avg_pool2d factor must be positive");
    ensure!(
        s[2] % factor == 0 && s[3] % factor == 0,
        "avg_pool2d: {}x{} not divisible by {factor}",
        s[2],
        s[3]
    );
    if factor == 1 {
        return Var::from_op(
            "avg_pool2d",
            x.value().clone(),
            vec![x.clone()],
            Box::new(|g, _, _| Ok(vec![Some(g.clone())])),
        );
    }
    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
    let (oh, ow) = (h / factor, w / factor);
    let norm = 1.0 / (factor * factor) as f64;
    let xd = x.value().data();
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        for y in 0..h {
            for xx in 0..w {
                out[(p * oh + y / factor) * ow + xx / factor] += xd[(p * h + y) * w + xx] * norm;
            }
        }
    }
    Var::from_op(
        "avg_pool2d",
        Tensor::from_parts(vec![s[0], s[1], oh, ow], out),
        vec![x.clone()],
        Box::new(move |g, inputs, _| {
            let gd = g.data();
            let mut gx = vec![0.0; planes * h * w];
            for p in 0..planes {
                for y in 0..h {
                    for xx in 0..w {
                        gx[(p * h + y) * w + xx] = gd[(p * oh + y / factor) * ow + xx / factor] * norm;
                    }
                }
            }
            Ok(vec![Some(Tensor::from_parts(inputs[0].shape().to_vec(), gx))])
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cst(shape: &[usize], f: impl FnMut(usize) -> f64) -> Var {
        Var::constant(Tensor::from_fn(shape, f))
    }

    #[test]
    fn upsample_constant_stays_constant() {
        let y = bilinear_upsample(&cst(&[1, 2, 3, 4], |_| 1.75), 6, 9).unwrap();
        assert!(y.value().data().iter().all(|&v| (v - 1.75).abs() < 1e-15));
    }

    #[test]
    fn upsample_row_align_corners() {
        let y = bilinear_upsample(&cst(&[1, 1, 1, 2], |i| [0.0, 2.0][i]), 1, 4).unwrap();
        let expected = [0.0, 2.0 / 3.0, 4.0 / 3.0, 2.0];
        for (a, b) in y.value().data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn upsample_identity_and_downsample_error() {
        let x = cst(&[1, 1, 3, 3], |i| i as f64);
        assert_eq!(bilinear_upsample(&x, 3, 3).unwrap().value(), x.value());
        assert!(bilinear_upsample(&x, 2, 3).is_err());
    }

    #[test]
    fn pool_mean() {
        let y = avg_pool2d(&cst(&[1, 1, 2, 2], |i| [1.0, 3.0, 5.0, 7.0][i]), 2).unwrap();
        assert_eq!(y.value().data(), &[4.0]);
    }
}
