//! Random-dot stereo pairs with exact dense ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct StereoSample {
    /// `[1,3,H,W]` in [0,1].
    pub left: Tensor,
    pub right: Tensor,
    /// `[1,1,H,W]` in pixels.
    pub gt_disparity: Tensor,
    /// `[1,1,H,W]`, 1 where the ground truth is usable.
    pub valid_mask: Tensor,
}

/// `d(x, y) = base + dx·x + dy·y` in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane {
    pub base: f64,
    pub dx: f64,
    pub dy: f64,
}

impl Plane {
    pub fn constant(d: f64) -> Self {
        Self { base: d, dx: 0.0, dy: 0.0 }
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.base + self.dx * x as f64 + self.dy * y as f64
    }
}

/// Axis-aligned rectangle `[x0, x1) × [y0, y1)` carrying its own plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Patch {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub plane: Plane,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DisparitySpec {
    Constant(f64),
    Ramp(Plane),
    /// Later patches cover earlier ones.
    Patches { background: Plane, patches: Vec<Patch> },
}

impl DisparitySpec {
    /// Dense ground-truth field, row-major `H × W`.
    pub fn field(&self, height: usize, width: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                let d = match self {
                    DisparitySpec::Constant(c) => *c,
                    DisparitySpec::Ramp(p) => p.at(x, y),
                    DisparitySpec::Patches { background, patches } => patches
                        .iter()
                        .rev()
                        .find(|p| (p.x0..p.x1).contains(&x) && (p.y0..p.y1).contains(&y))
                        .map_or(background.at(x, y), |p| p.plane.at(x, y)),
                };
                out.push(d);
            }
        }
        out
    }

    /// A random field with values in `[0, max_disparity)`.
    pub fn random<R: Rng>(rng: &mut R, height: usize, width: usize, max_disparity: f64) -> Self {
        let slanted = |rng: &mut R, lo: f64, hi: f64, w: usize, h: usize| {
            let span = hi - lo;
            let dx = rng.gen_range(-1.0..1.0) * 0.2 * span / width as f64;
            let dy = rng.gen_range(-1.0..1.0) * 0.2 * span / height as f64;
            let reach = dx.abs() * (w.max(1) - 1) as f64 + dy.abs() * (h.max(1) - 1) as f64;
            let base = rng.gen_range(lo..(hi - reach).max(lo + 1e-6));
            // anchor the plane so its minimum over the region sits at `base`
            let shift = dx.min(0.0) * (w.max(1) - 1) as f64 + dy.min(0.0) * (h.max(1) - 1) as f64;
            (base - shift, dx, dy)
        };
        match rng.gen_range(0..10) {
            0..=1 => DisparitySpec::Constant(rng.gen_range(0.0..max_disparity)),
            2..=4 => {
                let (base, dx, dy) = slanted(rng, 0.0, max_disparity, width, height);
                DisparitySpec::Ramp(Plane { base, dx, dy })
            }
            _ => {
                let (base, dx, dy) = slanted(rng, 0.0, 0.6 * max_disparity, width, height);
                let background = Plane { base, dx, dy };
                let count = rng.gen_range(1..=4);
                let patches = (0..count)
                    .map(|_| {
                        let pw = rng.gen_range(width / 8..=width / 3).max(1);
                        let ph = rng.gen_range(height / 6..=height / 2).max(1);
                        let x0 = rng.gen_range(0..=width - pw);
                        let y0 = rng.gen_range(0..=height - ph);
                        let (b, dx, dy) = slanted(rng, 0.0, max_disparity, pw, ph);
                        // express the plane in image coordinates
                        let plane = Plane { base: b - dx * x0 as f64 - dy * y0 as f64, dx, dy };
                        Patch { x0, y0, x1: x0 + pw, y1: y0 + ph, plane }
                    })
                    .collect();
                DisparitySpec::Patches { background, patches }
            }
        }
    }
}

/// Multi-octave random-dot texture, `[1,3,H,W]` in [0,1].
fn random_dots(rng: &mut ChaCha8Rng, height: usize, width: usize) -> Tensor {
    const OCTAVES: [(usize, f64); 4] = [(1, 0.4), (2, 0.3), (4, 0.2), (8, 0.1)];
    let plane = height * width;
    let mut data = vec![0.0; 3 * plane];
    for (cell, weight) in OCTAVES {
        let gw = width.div_ceil(cell);
        let gh = height.div_ceil(cell);
        let grid: Vec<[f64; 3]> = (0..gw * gh)
            .map(|_| {
                let grey: f64 = rng.gen();
                [0, 1, 2].map(|_| 0.8 * grey + 0.2 * rng.gen::<f64>())
            })
            .collect();
        for y in 0..height {
            for x in 0..width {
                let dot = grid[(y / cell) * gw + x / cell];
                for c in 0..3 {
                    data[c * plane + y * width + x] += weight * dot[c];
                }
            }
        }
    }
    Tensor::new(&[1, 3, height, width], data).expect("sized above")
}

/// Random-dot stereo pair under the ground-truth field of `spec`.
///
/// The right view is a random-dot texture; the left view samples it at
/// `x - d(x, y)` with linear interpolation, so that warping the right view
/// by the ground truth reproduces the left view at every valid pixel.
/// Pixels whose match falls outside the right view, or is hidden behind a
/// nearer surface, are invalid and show fresh dots.
pub fn generate_rds(seed: u64, height: usize, width: usize, spec: &DisparitySpec) -> Result<StereoSample> {
    ensure!(height > 0 && width > 1, "image extent {height}x{width} too small");
    let field = spec.field(height, width);
    let bound = width as f64 / 4.0;
    let (lo, hi) = field.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    ensure!(lo.is_finite() && hi.is_finite(), "disparity spec produces non-finite values");
    ensure!(lo >= 0.0, "disparity spec reaches negative value {lo}");
    ensure!(hi < bound, "disparity spec reaches {hi}, bound is W/4 = {bound}");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let right = random_dots(&mut rng, height, width);
    let filler = random_dots(&mut rng, height, width);
    let plane = height * width;
    let mut left = vec![0.0; 3 * plane];
    let mut mask = vec![0.0; plane];
    let (rd, fd) = (right.data(), filler.data());
    for y in 0..height {
        let row = y * width;
        let mut nearest_from_right = f64::INFINITY;
        for x in (0..width).rev() {
            let u = x as f64 - field[row + x];
            let visible = u >= 0.0 && u <= (width - 1) as f64 && nearest_from_right > u;
            nearest_from_right = nearest_from_right.min(u);
            if visible {
                mask[row + x] = 1.0;
                let x0 = (u.floor() as usize).min(width - 1);
                let x1 = (x0 + 1).min(width - 1);
                let a = u - x0 as f64;
                for c in 0..3 {
                    let base = c * plane + row;
                    left[base + x] = (1.0 - a) * rd[base + x0] + a * rd[base + x1];
                }
            } else {
                for c in 0..3 {
                    left[c * plane + row + x] = fd[c * plane + row + x];
                }
            }
        }
    }
    Ok(StereoSample {
        left: Tensor::new(&[1, 3, height, width], left)?,
        right,
        gt_disparity: Tensor::new(&[1, 1, height, width], field)?,
        valid_mask: Tensor::new(&[1, 1, height, width], mask)?,
    })
}

/// Deterministic, index-addressable stream of random stereo pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub seed: u64,
    pub len: usize,
    pub height: usize,
    pub width: usize,
    pub max_disparity: f64,
}

/// Samples stacked along the batch axis.
#[derive(Clone, Debug)]
pub struct Batch {
    pub left: Tensor,
    pub right: Tensor,
    pub gt_disparity: Tensor,
    pub valid_mask: Tensor,
}

impl Batch {
    pub fn stack(samples: &[StereoSample]) -> Result<Batch> {
        ensure!(!samples.is_empty(), "cannot stack an empty batch");
        let join = |f: fn(&StereoSample) -> &Tensor| -> Result<Tensor> {
            let first = f(&samples[0]).shape();
            let mut shape = first.to_vec();
            shape[0] = samples.len();
            let mut data = Vec::with_capacity(shape.iter().product());
            for s in samples {
                ensure!(f(s).shape() == first, "batch samples differ in shape");
                data.extend_from_slice(f(s).data());
            }
            Tensor::new(&shape, data)
        };
        Ok(Batch {
            left: join(|s| &s.left)?,
            right: join(|s| &s.right)?,
            gt_disparity: join(|s| &s.gt_disparity)?,
            valid_mask: join(|s| &s.valid_mask)?,
        })
    }

    pub fn len(&self) -> usize {
        self.left.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SyntheticDataset {
    pub fn new(seed: u64, len: usize, height: usize, width: usize, max_disparity: f64) -> Result<Self> {
        ensure!(len > 0, "dataset must not be empty");
        ensure!(
            max_disparity > 0.0 && max_disparity < width as f64 / 4.0,
            "max disparity {max_disparity} must lie in (0, W/4) for width {width}"
        );
        Ok(Self { seed, len, height, width, max_disparity })
    }

    /// Disjoint-stream companion set, used for validation.
    pub fn companion(&self, len: usize) -> Result<Self> {
        Self::new(self.seed ^ 0x5eed_0f_ba11, len, self.height, self.width, self.max_disparity)
    }

    pub fn sample(&self, index: usize) -> Result<StereoSample> {
        ensure!(index < self.len, "sample index {index} out of range 0..{}", self.len);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let spec = DisparitySpec::random(&mut rng, self.height, self.width, self.max_disparity);
        generate_rds(rng.gen(), self.height, self.width, &spec)
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let samples = indices.iter().map(|&i| self.sample(i)).collect::<Result<Vec<_>>>()?;
        Batch::stack(&samples)
    }
}

/// FNV-1a digest over the bit patterns of a sequence of tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamChecksum(pub u64);

impl Default for StreamChecksum {
    fn default() -> Self {
        StreamChecksum(0xcbf2_9ce4_8422_2325)
    }
}

impl StreamChecksum {
    pub fn update(&mut self, t: &Tensor) {
        for v in t.data() {
            for byte in v.to_bits().to_le_bytes() {
                self.0 ^= u64::from(byte);
                self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_disparity_copies_the_view() {
        let s = generate_rds(3, 8, 16, &DisparitySpec::Constant(0.0)).unwrap();
        assert_eq!(s.left, s.right);
        assert!(s.valid_mask.data().iter().all(|&m| m == 1.0));
    }

    #[test]
    fn rejects_large_or_negative_disparity() {
        assert!(generate_rds(0, 8, 16, &DisparitySpec::Constant(4.0)).is_err());
        assert!(generate_rds(0, 8, 16, &DisparitySpec::Constant(-0.5)).is_err());
        assert!(generate_rds(0, 8, 16, &DisparitySpec::Constant(3.9)).is_ok());
    }

    #[test]
    fn constant_shift_invalidates_left_border() {
        let s = generate_rds(1, 4, 32, &DisparitySpec::Constant(3.0)).unwrap();
        for y in 0..4 {
            for x in 0..32 {
                assert_eq!(s.valid_mask.data()[y * 32 + x], if x < 3 { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn foreground_patch_occludes_background() {
        let spec = DisparitySpec::Patches {
            background: Plane::constant(1.0),
            patches: vec![Patch { x0: 10, y0: 0, x1: 20, y1: 4, plane: Plane::constant(5.0) }],
        };
        let s = generate_rds(2, 4, 32, &spec).unwrap();
        let m = &s.valid_mask.data()[..32];
        // x = 6..=9 land at 5..=8, behind the patch which covers 5..=14
        assert_eq!(&m[4..12], &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn random_specs_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let spec = DisparitySpec::random(&mut rng, 64, 128, 16.0);
            let f = spec.field(64, 128);
            assert!(f.iter().all(|&d| (0.0..16.0).contains(&d)), "{spec:?}");
        }
    }

    #[test]
    fn dataset_is_deterministic() {
        let ds = SyntheticDataset::new(4, 10, 16, 32, 6.0).unwrap();
        let (a, b) = (ds.sample(3).unwrap(), ds.sample(3).unwrap());
        assert_eq!(a.left, b.left);
        assert_eq!(a.gt_disparity, b.gt_disparity);
        assert_ne!(ds.sample(4).unwrap().left, a.left);
        assert!(ds.sample(10).is_err());
    }
}
