//! Direct-loop reference implementations and random instance generators.

use ednet::cost_volume::{concat_volume, correlation_volume};
use ednet::tensor::{conv2d as conv2d_op, conv3d as conv3d_op, deconv2d as deconv2d_op, ConvSpec};
use ednet::warp::warp_right_to_left;
use ednet::{Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::uniform;

fn cst(t: &Tensor) -> Var {
    Var::constant(t.clone())
}

fn set(t: &mut Tensor, index: &[usize], v: f64) {
    let off = t.offset(index);
    t.data_mut()[off] = v;
}

pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (n, ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros(&[n, co, oh, ow]);
    for b_ in 0..n {
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[o];
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x.at(&[b_, c, iy as usize, ix as usize]) * w.at(&[o, c, ky, kx]);
                                }
                            }
                        }
                    }
                    set(&mut out, &[b_, o, oy, ox], acc);
                }
            }
        }
    }
    out
}

pub fn conv3d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let s = x.shape();
    let (n, ci) = (s[0], s[1]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let o = |e: usize| (e + 2 * pad - k) / stride + 1;
    let (od, oh, ow) = (o(s[2]), o(s[3]), o(s[4]));
    let mut out = Tensor::zeros(&[n, co, od, oh, ow]);
    for b_ in 0..n {
        for oc in 0..co {
            for z in 0..od {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = b.data()[oc];
                        for c in 0..ci {
                            for kz in 0..k {
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let p = [z * stride + kz, y * stride + ky, xx * stride + kx];
                                        let i = p.map(|v| v as isize - pad as isize);
                                        if i.iter().zip(&s[2..]).all(|(&v, &e)| v >= 0 && (v as usize) < e) {
                                            acc += x.at(&[b_, c, i[0] as usize, i[1] as usize, i[2] as usize])
                                                * w.at(&[oc, c, kz, ky, kx]);
                                        }
                                    }
                                }
                            }
                        }
                        set(&mut out, &[b_, oc, z, y, xx], acc);
                    }
                }
            }
        }
    }
    out
}

/// Scatter form: every input pixel adds its kernel-weighted footprint.
pub fn deconv2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (n, ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, k) = (w.shape()[1], w.shape()[2]);
    let oh = (h - 1) * stride + k - 2 * pad;
    let ow = (wd - 1) * stride + k - 2 * pad;
    let mut out = Tensor::from_fn(&[n, co, oh, ow], |i| b.data()[i / (oh * ow) % co]);
    for b_ in 0..n {
        for c in 0..ci {
            for iy in 0..h {
                for ix in 0..wd {
                    for o in 0..co {
                        for ky in 0..k {
                            for kx in 0..k {
                                let y = (iy * stride + ky) as isize - pad as isize;
                                let xx = (ix * stride + kx) as isize - pad as isize;
                                if y >= 0 && xx >= 0 && (y as usize) < oh && (xx as usize) < ow {
                                    let idx = [b_, o, y as usize, xx as usize];
                                    let v = out.at(&idx) + x.at(&[b_, c, iy, ix]) * w.at(&[c, o, ky, kx]);
                                    set(&mut out, &idx, v);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn correlation(fl: &Tensor, fr: &Tensor, levels: usize) -> Tensor {
    let s = fl.shape();
    let mut out = Tensor::zeros(&[s[0], levels, s[2], s[3]]);
    for n in 0..s[0] {
        for d in 0..levels {
            for y in 0..s[2] {
                for x in d..s[3] {
                    let mut acc = 0.0;
                    for c in 0..s[1] {
                        acc += fl.at(&[n, c, y, x - d]) * fr.at(&[n, c, y, x]);
                    }
                    set(&mut out, &[n, d, y, x], acc / s[1] as f64);
                }
            }
        }
    }
    out
}

pub fn concatenation(fl: &Tensor, fr: &Tensor, levels: usize) -> Tensor {
    let s = fl.shape();
    let c = s[1];
    let mut out = Tensor::zeros(&[s[0], 2 * c, levels, s[2], s[3]]);
    for n in 0..s[0] {
        for ch in 0..c {
            for d in 0..levels {
                for y in 0..s[2] {
                    for x in d..s[3] {
                        set(&mut out, &[n, ch, d, y, x], fl.at(&[n, ch, y, x - d]));
                        set(&mut out, &[n, c + ch, d, y, x], fr.at(&[n, ch, y, x]));
                    }
                }
            }
        }
    }
    out
}

/// `(warped, mask)` sampling `img` at `x - disp` with linear interpolation.
pub fn warp(img: &Tensor, disp: &Tensor) -> (Tensor, Tensor) {
    let s = img.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let mut out = Tensor::zeros(s);
    let mut mask = Tensor::zeros(&[n, 1, h, w]);
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let u = x as f64 - disp.at(&[b, 0, y, x]);
                if u < 0.0 || u > (w - 1) as f64 {
                    continue;
                }
                set(&mut mask, &[b, 0, y, x], 1.0);
                let x0 = u.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let a = u - x0 as f64;
                for ch in 0..c {
                    set(&mut out, &[b, ch, y, x], (1.0 - a) * img.at(&[b, ch, y, x0]) + a * img.at(&[b, ch, y, x1]));
                }
            }
        }
    }
    (out, mask)
}

/// Largest deviation of the library operator from its loop oracle on one
/// random instance with every extent at most 8.
pub type OracleCase = fn(&mut ChaCha8Rng) -> f64;

pub const ORACLE_CASES: [(&str, OracleCase); 6] = [
    ("conv2d", conv2d_case),
    ("conv3d", conv3d_case),
    ("deconv2d", deconv2d_case),
    ("correlation_volume", correlation_case),
    ("concat_volume", concat_case),
    ("warp_right_to_left", warp_case),
];

fn conv2d_case(r: &mut ChaCha8Rng) -> f64 {
    let k = r.gen_range(1..=3);
    let stride = r.gen_range(1..=2);
    let pad = r.gen_range(0..=k / 2 + 1);
    let (h, w) = (r.gen_range(k..=8), r.gen_range(k..=8));
    let (n, ci, co) = (r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=4));
    let x = uniform(r, &[n, ci, h, w], -1.0, 1.0);
    let wt = uniform(r, &[co, ci, k, k], -1.0, 1.0);
    let b = uniform(r, &[co], -1.0, 1.0);
    let got = conv2d_op(&cst(&x), &cst(&wt), Some(&cst(&b)), ConvSpec::new(stride, pad)).unwrap();
    let want = conv2d(&x, &wt, &b, stride, pad);
    assert_eq!(got.shape(), want.shape());
    got.value().max_abs_diff(&want)
}

fn conv3d_case(r: &mut ChaCha8Rng) -> f64 {
    let k = r.gen_range(1..=3);
    let stride = r.gen_range(1..=2);
    let pad = r.gen_range(0..=k / 2);
    let shape = [r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(k..=6), r.gen_range(k..=6), r.gen_range(k..=6)];
    let co = r.gen_range(1..=3);
    let x = uniform(r, &shape, -1.0, 1.0);
    let wt = uniform(r, &[co, shape[1], k, k, k], -1.0, 1.0);
    let b = uniform(r, &[co], -1.0, 1.0);
    let got = conv3d_op(&cst(&x), &cst(&wt), Some(&cst(&b)), ConvSpec::new(stride, pad)).unwrap();
    let want = conv3d(&x, &wt, &b, stride, pad);
    assert_eq!(got.shape(), want.shape());
    got.value().max_abs_diff(&want)
}

fn deconv2d_case(r: &mut ChaCha8Rng) -> f64 {
    let k = r.gen_range(1..=4);
    let stride = r.gen_range(1..=2);
    let pad = r.gen_range(0..=(k - 1) / 2);
    let (n, ci, co) = (r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=3));
    let (h, w) = (r.gen_range(1..=6), r.gen_range(1..=6));
    let x = uniform(r, &[n, ci, h, w], -1.0, 1.0);
    let wt = uniform(r, &[ci, co, k, k], -1.0, 1.0);
    let b = uniform(r, &[co], -1.0, 1.0);
    let got = deconv2d_op(&cst(&x), &cst(&wt), Some(&cst(&b)), ConvSpec::new(stride, pad)).unwrap();
    let want = deconv2d(&x, &wt, &b, stride, pad);
    assert_eq!(got.shape(), want.shape());
    got.value().max_abs_diff(&want)
}

fn features(r: &mut ChaCha8Rng) -> (Tensor, Tensor, usize) {
    let (n, c, h, w) = (r.gen_range(1..=2), r.gen_range(1..=5), r.gen_range(1..=6), r.gen_range(2..=8));
    let d = r.gen_range(1..=w);
    (uniform(r, &[n, c, h, w], -1.0, 1.0), uniform(r, &[n, c, h, w], -1.0, 1.0), d)
}

fn correlation_case(r: &mut ChaCha8Rng) -> f64 {
    let (fl, fr, levels) = features(r);
    let got = correlation_volume(&cst(&fl), &cst(&fr), levels).unwrap();
    got.data.value().max_abs_diff(&correlation(&fl, &fr, levels))
}

fn concat_case(r: &mut ChaCha8Rng) -> f64 {
    let (fl, fr, levels) = features(r);
    let got = concat_volume(&cst(&fl), &cst(&fr), levels).unwrap();
    got.data.value().max_abs_diff(&concatenation(&fl, &fr, levels))
}

fn warp_case(r: &mut ChaCha8Rng) -> f64 {
    let (n, c, h, w) = (r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=6), r.gen_range(2..=8));
    let img = uniform(r, &[n, c, h, w], 0.0, 1.0);
    let disp = uniform(r, &[n, 1, h, w], -1.0, w as f64);
    let (got, mask) = warp_right_to_left(&cst(&img), &cst(&disp)).unwrap();
    let (want, want_mask) = warp(&img, &disp);
    assert_eq!(mask, want_mask);
    got.value().max_abs_diff(&want)
}
