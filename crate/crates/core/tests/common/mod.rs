#![allow(dead_code)]

pub mod grad_cases;
pub mod loops;

use ednet::tensor::{mul, sum};
use ednet::{Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Uniform in ±[margin, hi]: keeps values away from kinks at zero.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], margin: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(margin..hi);
        if rng.gen::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

/// Largest relative error between analytic and central-difference
/// gradients of `Σ f(inputs) ⊙ R` for a fixed random projection `R`, over
/// every input listed in `wrt` (all elements, or `max_per_input` sampled).
pub fn grad_check(
    f: &dyn Fn(&[Var]) -> Result<Var>,
    inputs: &[Tensor],
    wrt: &[usize],
    seed: u64,
    max_per_input: usize,
) -> f64 {
    grad_check_detail(f, inputs, wrt, seed, max_per_input).into_iter().map(|m| m.rel).fold(0.0, f64::max)
}

pub struct GradSample {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub rel: f64,
    /// Relative error of a re-probe with `h / 100`, taken when `rel` exceeds
    /// 1e-4. A probe that straddles a kink of a piecewise operator stops
    /// straddling it once the step is small enough.
    pub rel_fine: Option<f64>,
}

impl GradSample {
    pub fn best_rel(&self) -> f64 {
        self.rel_fine.map_or(self.rel, |f| f.min(self.rel))
    }
}

/// Per-element comparison underlying [`grad_check`].
pub fn grad_check_detail(
    f: &dyn Fn(&[Var]) -> Result<Var>,
    inputs: &[Tensor],
    wrt: &[usize],
    seed: u64,
    max_per_input: usize,
) -> Vec<GradSample> {
    let h = 1e-5;
    let mut r = rng(seed ^ 0xabcdef);
    let leaves: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| if wrt.contains(&i) { Var::leaf(t.clone()) } else { Var::constant(t.clone()) })
        .collect();
    let out = f(&leaves).unwrap();
    let proj = uniform(&mut r, out.shape(), -1.0, 1.0);
    let objective = |vars: &[Var]| -> f64 {
        let o = f(vars).unwrap();
        o.value().data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
    };
    let loss = sum(&mul(&out, &Var::constant(proj.clone())).unwrap()).unwrap();
    ednet::tensor::backward(&loss).unwrap();
    let mut out_rows = Vec::new();
    for &i in wrt {
        let g = leaves[i].grad().unwrap();
        let n = inputs[i].numel();
        let picks: Vec<usize> = if n <= max_per_input { (0..n).collect() } else { (0..max_per_input).map(|_| r.gen_range(0..n)).collect() };
        for k in picks {
            let eval = |delta: f64| {
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        let mut t = t.clone();
                        if j == i {
                            t.data_mut()[k] += delta;
                        }
                        Var::constant(t)
                    })
                    .collect();
                objective(&vars)
            };
            let central = |h: f64| (eval(h) - eval(-h)) / (2.0 * h);
            let analytic = g.data()[k];
            let rel = rel_err(analytic, central(h));
            let rel_fine = (rel > 1e-4).then(|| rel_err(analytic, central(h / 100.0)));
            out_rows.push(GradSample { input: i, element: k, analytic, rel, rel_fine });
        }
    }
    out_rows
}
