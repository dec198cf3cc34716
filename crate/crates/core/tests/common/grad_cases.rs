//! Finite-difference gradient cases shared by the gradient and acceptance
//! suites.

use ednet::attention::{apply_attention, attention_vector, compose_disparity, hourglass2d, AttentionParams, HourglassParams};
use ednet::cost_volume::{combine, concat_volume, correlation_volume, squeeze_aggregate, SqueezeParams};
use ednet::layers::{Conv2dLayer, Conv3dLayer, Deconv2dLayer};
use ednet::model::{forward, BoundParams, ModelConfig, ModelParams};
use ednet::tensor::*;
use ednet::train::{multiscale_loss, LossWeights, ScaledTargets};
use ednet::warp::{error_map, warp_right_to_left};
use ednet::{Result, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{away_from_zero, grad_check, grad_check_detail, rng, uniform};

pub const SEEDS: u64 = 20;
pub const TOL: f64 = 1e-4;

type Op = Box<dyn Fn(&[Var]) -> Result<Var>>;
type Make = Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor>>;

pub struct GradCase {
    pub name: &'static str,
    pub op: Op,
    pub make: Make,
    /// Inputs held constant (targets, masks).
    pub fixed: &'static [usize],
}

impl GradCase {
    /// Worst relative error over all seeds.
    pub fn worst(&self, seeds: u64) -> f64 {
        (0..seeds)
            .map(|seed| {
                let mut r = rng(seed * 7919 + self.name.len() as u64);
                let inputs = (self.make)(&mut r);
                let wrt: Vec<usize> = (0..inputs.len()).filter(|i| !self.fixed.contains(i)).collect();
                grad_check(&*self.op, &inputs, &wrt, seed, 60)
            })
            .fold(0.0, f64::max)
    }
}

fn case(name: &'static str, op: impl Fn(&[Var]) -> Result<Var> + 'static, make: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor> + 'static) -> GradCase {
    GradCase { name, op: Box::new(op), make: Box::new(make), fixed: &[] }
}

fn u(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    uniform(r, shape, -1.0, 1.0)
}

fn conv_layer(v: &[Var], i: usize) -> Conv2dLayer {
    Conv2dLayer { weight: v[i].clone(), bias: v[i + 1].clone() }
}

/// Disparities whose source column stays off integer grid points and inside
/// the image, so the interpolation weights are locally smooth.
fn smooth_disparity(r: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> Tensor {
    Tensor::from_fn(&[n, 1, h, w], |i| {
        let x = i % w;
        let frac = r.gen_range(0.1..0.9);
        if x == 0 {
            -frac
        } else {
            r.gen_range(0..x) as f64 + frac
        }
    })
}

pub fn operator_cases() -> Vec<GradCase> {
    const S: [usize; 3] = [2, 3, 4];
    let mut cases = vec![
        case("add", |v| add(&v[0], &v[1]), |r| vec![u(r, &S), u(r, &S)]),
        case("sub", |v| sub(&v[0], &v[1]), |r| vec![u(r, &S), u(r, &S)]),
        case("mul", |v| mul(&v[0], &v[1]), |r| vec![u(r, &S), u(r, &S)]),
        case("scale", |v| scale(&v[0], -2.5), |r| vec![u(r, &S)]),
        case("abs", |v| abs(&v[0]), |r| vec![away_from_zero(r, &S, 0.01, 1.0)]),
        case("sum", |v| sum(&v[0]), |r| vec![u(r, &S)]),
        case("mean", |v| mean(&v[0]), |r| vec![u(r, &S)]),
        case("leaky_relu", |v| leaky_relu(&v[0], LEAKY_SLOPE), |r| vec![away_from_zero(r, &S, 0.01, 1.0)]),
        case("sigmoid", |v| sigmoid(&v[0]), |r| vec![uniform(r, &S, -4.0, 4.0)]),
        case("smooth_l1", |v| smooth_l1(&v[0], &v[1]), |r| vec![uniform(r, &S, -3.0, 3.0), u(r, &S)]),
        case("concat", |v| concat(&[v[0].clone(), v[1].clone()], 1), |r| vec![u(r, &[2, 2, 3]), u(r, &[2, 3, 3])]),
        case("slice_axis", |v| slice_axis(&v[0], 1, 1, 3), |r| vec![u(r, &[2, 4, 3])]),
        case("reshape", |v| reshape(&v[0], &[6, 4]), |r| vec![u(r, &[2, 3, 4])]),
        case("mul_channel_broadcast", |v| mul_channel_broadcast(&v[0], &v[1]), |r| vec![u(r, &[2, 3, 4, 5]), u(r, &[2, 1, 4, 5])]),
        case("bilinear_upsample", |v| bilinear_upsample(&v[0], 7, 9), |r| vec![u(r, &[1, 2, 3, 4])]),
        case("avg_pool2d", |v| avg_pool2d(&v[0], 2), |r| vec![u(r, &[1, 2, 4, 6])]),
        case(
            "conv2d",
            |v| conv2d(&v[0], &v[1], Some(&v[2]), ConvSpec::new(2, 1)),
            |r| vec![u(r, &[2, 3, 6, 7]), u(r, &[4, 3, 3, 3]), u(r, &[4])],
        ),
        case(
            "conv3d",
            |v| conv3d(&v[0], &v[1], Some(&v[2]), ConvSpec::new(1, 1)),
            |r| vec![u(r, &[1, 2, 3, 4, 4]), u(r, &[2, 2, 3, 3, 3]), u(r, &[2])],
        ),
        case(
            "deconv2d",
            |v| deconv2d(&v[0], &v[1], Some(&v[2]), ConvSpec::new(2, 1)),
            |r| vec![u(r, &[1, 3, 3, 4]), u(r, &[3, 2, 4, 4]), u(r, &[2])],
        ),
        case("correlation_volume", |v| Ok(correlation_volume(&v[0], &v[1], 3)?.data), |r| vec![u(r, &[2, 4, 3, 5]), u(r, &[2, 4, 3, 5])]),
        case("concat_volume", |v| Ok(concat_volume(&v[0], &v[1], 3)?.data), |r| vec![u(r, &[1, 3, 2, 5]), u(r, &[1, 3, 2, 5])]),
        case(
            "squeeze_aggregate+combine",
            |v| {
                let layer = |i: usize| Conv3dLayer { weight: v[2 + 2 * i].clone(), bias: v[3 + 2 * i].clone() };
                let params = SqueezeParams { layers: [layer(0), layer(1), layer(2)] };
                let corr = correlation_volume(&v[0], &v[1], 3)?;
                let sq = squeeze_aggregate(&concat_volume(&v[0], &v[1], 3)?, &params)?;
                Ok(combine(&corr, &sq)?.data)
            },
            |r| {
                let c = 4;
                vec![
                    u(r, &[1, c, 2, 5]),
                    u(r, &[1, c, 2, 5]),
                    u(r, &[c, 2 * c, 3, 3, 3]),
                    // nonzero biases keep the zero-filled volume region off the activation kink
                    away_from_zero(r, &[c], 0.05, 0.5),
                    u(r, &[c / 2, c, 3, 3, 3]),
                    away_from_zero(r, &[c / 2], 0.05, 0.5),
                    u(r, &[1, c / 2, 3, 3, 3]),
                    u(r, &[1]),
                ]
            },
        ),
        case(
            "warp_right_to_left+error_map",
            |v| {
                let (warped, mask) = warp_right_to_left(&v[0], &v[1])?;
                Ok(error_map(&warped, &v[2], &mask, 0)?.data)
            },
            |r| {
                let right = uniform(r, &[2, 3, 3, 6], 0.0, 1.0);
                let disp = smooth_disparity(r, 2, 3, 6);
                let left = uniform(r, &[2, 3, 3, 6], 0.0, 1.0);
                vec![right, disp, left]
            },
        ),
        case(
            "attention_vector+apply_attention",
            |v| {
                let p = AttentionParams { reduce: conv_layer(v, 2), spatial: conv_layer(v, 4), project: conv_layer(v, 6) };
                apply_attention(&v[1], &attention_vector(&v[0], &p)?)
            },
            |r| {
                vec![
                    u(r, &[1, 10, 4, 4]),
                    u(r, &[1, 3, 4, 4]),
                    u(r, &[4, 10, 1, 1]),
                    u(r, &[4]),
                    u(r, &[4, 4, 3, 3]),
                    u(r, &[4]),
                    u(r, &[1, 4, 1, 1]),
                    u(r, &[1]),
                ]
            },
        ),
        case(
            "hourglass2d+compose_disparity",
            |v| {
                let de = |i: usize| Deconv2dLayer { weight: v[i].clone(), bias: v[i + 1].clone() };
                let p = HourglassParams {
                    down1: conv_layer(v, 1),
                    down2: conv_layer(v, 3),
                    up1: de(5),
                    up2: de(7),
                    head: conv_layer(v, 9),
                    out: conv_layer(v, 11),
                };
                compose_disparity(&v[13], &hourglass2d(&v[0], &p)?)
            },
            |r| {
                let c = 2;
                let mut v = vec![u(r, &[1, c, 4, 8])];
                let layers = [([c, c, 3, 3], c), ([c, c, 3, 3], c), ([c, c, 4, 4], c), ([c, c, 4, 4], c), ([c, c, 3, 3], c), ([1, c, 3, 3], 1)];
                for (shape, bias) in layers {
                    v.push(u(r, &shape));
                    v.push(u(r, &[bias]));
                }
                v.push(u(r, &[1, 1, 2, 4]));
                v
            },
        ),
        case(
            "conv2d+sigmoid+smooth_l1",
            |v| smooth_l1(&sigmoid(&conv2d(&v[0], &v[1], Some(&v[2]), ConvSpec::same(3))?)?, &v[3]),
            |r| vec![u(r, &[1, 3, 4, 4]), u(r, &[2, 3, 3, 3]), u(r, &[2]), uniform(r, &[1, 2, 4, 4], 0.0, 1.0)],
        ),
    ];
    cases.push(GradCase {
        name: "smooth_l1_masked",
        op: Box::new(|v| smooth_l1_masked(&v[0], v[1].value(), v[2].value())),
        make: Box::new(|r| {
            let pred = uniform(r, &[2, 1, 3, 4], 0.0, 3.0);
            let target = uniform(r, &[2, 1, 3, 4], 0.0, 3.0);
            let mask = Tensor::from_fn(&[2, 1, 3, 4], |i| if i % 3 == 0 { 0.0 } else { 1.0 });
            vec![pred, target, mask]
        }),
        fixed: &[1, 2],
    });
    cases
}

/// Finite-difference check of the multi-scale loss of a small full network
/// on a 16×32 crop w.r.t. sampled entries of every parameter tensor and both
/// input images. Returns descriptions of the failing entries.
///
/// Warp sampling and its validity mask are piecewise in the disparity, so
/// an entry failing at `h` is re-probed at `h / 100`: a probe that straddled
/// an interpolation breakpoint no longer does.
pub fn end_to_end_failures(seed: u64) -> Vec<String> {
    let config = ModelConfig { input_height: 16, input_width: 32, width_multiplier: 0.1, seed, ..ModelConfig::desk() };
    let mut r = rng(300 + seed);
    let mut params = ModelParams::build(&config).unwrap();
    // nonzero residual heads so every layer carries gradient; nonzero biases
    // so zero regions of the cost volume do not sit on an activation kink
    for (name, t) in params.tensors().clone() {
        if name.ends_with(".hg.out.weight") {
            *params.get_mut(&name).unwrap() = uniform(&mut r, t.shape(), -0.1, 0.1);
        } else if name.ends_with(".bias") {
            *params.get_mut(&name).unwrap() = away_from_zero(&mut r, t.shape(), 0.01, 0.05);
        }
    }
    let names: Vec<String> = params.tensors().keys().cloned().collect();
    let left = uniform(&mut r, &[1, 3, 16, 32], -1.0, 1.0);
    let right = uniform(&mut r, &[1, 3, 16, 32], -1.0, 1.0);
    let gt = uniform(&mut r, &[1, 1, 16, 32], 0.0, 6.0);
    let mask = Tensor::from_fn(&[1, 1, 16, 32], |i| if i % 32 < 6 { 0.0 } else { 1.0 });
    let targets = ScaledTargets::new(&gt, &mask).unwrap();
    let f = |v: &[Var]| -> Result<Var> {
        let n = names.len();
        let vars = names.iter().cloned().zip(v[..n].iter().cloned()).collect();
        let bound = BoundParams::from_vars(&config, vars)?;
        let pyramid = forward(&bound, &v[n], &v[n + 1])?;
        Ok(multiscale_loss(&pyramid, &targets, &LossWeights::SCENE_FLOW)?.total)
    };
    let mut inputs: Vec<Tensor> = names.iter().map(|k| params.get(k).unwrap().clone()).collect();
    inputs.push(left);
    inputs.push(right);
    let wrt: Vec<usize> = (0..inputs.len()).collect();
    grad_check_detail(&f, &inputs, &wrt, seed, 3)
        .into_iter()
        .filter(|s| s.best_rel() > TOL)
        .map(|s| {
            let name = names.get(s.input).map_or("image", String::as_str);
            format!("{name}[{}] analytic {:e} rel {:e} fine {:?}", s.element, s.analytic, s.rel, s.rel_fine)
        })
        .collect()
}
