//! Analytic multiply-add, FLOP and activation-memory accounting for the
//! network, next to a reference path that aggregates the 4D concatenation
//! volume with 3D convolutions and regresses disparity from a
//! full-resolution cost volume.

use std::fmt::Write as _;
use std::time::Duration;

use crate::error::{ensure, Result};
use crate::model::{ModelConfig, ResidualMode, FEATURE_STRIDE};

/// Bytes per activation element of this implementation.
pub const ELEMENT_BYTES: u64 = 8;

/// FLOPs charged per output element for non-convolution operators.
const BILINEAR_FLOPS: u64 = 7;
const TRILINEAR_FLOPS: u64 = 15;
const SOFTMAX_FLOPS: u64 = 3;
const WARP_FLOPS: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostPath {
    /// Correlation + squeezed concatenation volume with 2D aggregation.
    Combined,
    /// 4D concatenation volume with 3D aggregation.
    Reference3d,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub macs: u64,
    pub flops: u64,
    pub output_elements: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub path: CostPath,
    pub height: usize,
    pub width: usize,
    pub batch: usize,
    pub layers: Vec<LayerCost>,
    pub total_macs: u64,
    pub total_flops: u64,
    /// Largest sum of simultaneously live activations along the schedule.
    pub peak_activation_bytes: u64,
    pub measured_peak_bytes: Option<u64>,
    pub wall_time: Option<Duration>,
}

impl CostReport {
    pub fn layer(&self, name: &str) -> Option<&LayerCost> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn flops_per_sample(&self) -> f64 {
        self.total_flops as f64 / self.batch as f64
    }

    pub fn peak_bytes_per_sample(&self) -> f64 {
        self.peak_activation_bytes as f64 / self.batch as f64
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "path {:?} at {}x{} batch {}: {:.3} GFLOPs, peak activations {:.3} GB",
            self.path,
            self.height,
            self.width,
            self.batch,
            self.total_flops as f64 / 1e9,
            self.peak_activation_bytes as f64 / 1e9
        );
        if let Some(b) = self.measured_peak_bytes {
            let _ = write!(s, ", measured peak {:.3} GB", b as f64 / 1e9);
        }
        if let Some(t) = self.wall_time {
            let _ = write!(s, ", wall time {:.3} s", t.as_secs_f64());
        }
        s
    }

    pub fn layer_table(&self) -> String {
        let mut out = String::new();
        for l in &self.layers {
            let _ = writeln!(out, "{:<28} {:>16} MAC {:>16} FLOP", l.name, l.macs, l.flops);
        }
        out
    }
}

/// FLOPs of a convolution: two per multiply-add.
pub fn conv_flops(c_in: usize, c_out: usize, kernel_volume: usize, output_positions: usize) -> u64 {
    2 * (c_in * c_out * kernel_volume * output_positions) as u64
}

#[derive(Clone, Copy, Debug)]
struct Act {
    id: usize,
    c: usize,
    d: usize,
    h: usize,
    w: usize,
}

impl Act {
    fn positions(&self) -> usize {
        self.d * self.h * self.w
    }
}

/// Operator schedule with buffer lifetimes.
struct Schedule {
    batch: usize,
    sizes: Vec<u64>,
    born: Vec<usize>,
    last_use: Vec<usize>,
    layers: Vec<LayerCost>,
}

impl Schedule {
    fn new(batch: usize) -> Self {
        Self { batch, sizes: Vec::new(), born: Vec::new(), last_use: Vec::new(), layers: Vec::new() }
    }

    fn buffer(&mut self, c: usize, d: usize, h: usize, w: usize) -> Act {
        self.sizes.push((self.batch * c * d * h * w) as u64);
        self.born.push(self.layers.len());
        self.last_use.push(self.layers.len());
        Act { id: self.sizes.len() - 1, c, d, h, w }
    }

    fn input(&mut self, c: usize, h: usize, w: usize) -> Act {
        self.buffer(c, 1, h, w)
    }

    /// Keeps `a` alive until the end of the schedule.
    fn hold(&mut self, a: Act) {
        self.last_use[a.id] = usize::MAX;
    }

    fn op(&mut self, name: impl Into<String>, macs: usize, flops: u64, inputs: &[Act], out: (usize, usize, usize, usize)) -> Act {
        let step = self.layers.len();
        for a in inputs {
            self.last_use[a.id] = self.last_use[a.id].max(step);
        }
        let b = self.batch as u64;
        let (c, d, h, w) = out;
        self.layers.push(LayerCost {
            name: name.into(),
            macs: b * macs as u64,
            flops: b * flops,
            output_elements: (self.batch * c * d * h * w) as u64,
        });
        let a = self.buffer(c, d, h, w);
        self.born[a.id] = step;
        self.last_use[a.id] = step;
        a
    }

    fn conv2d(&mut self, name: &str, x: Act, c_out: usize, k: usize, stride: usize) -> Act {
        let p = k / 2;
        let h = (x.h + 2 * p - k) / stride + 1;
        let w = (x.w + 2 * p - k) / stride + 1;
        let macs = x.c * c_out * k * k * h * w;
        self.op(name, macs, 2 * macs as u64, &[x], (c_out, 1, h, w))
    }

    fn conv3d(&mut self, name: &str, x: Act, c_out: usize) -> Act {
        let macs = x.c * c_out * 27 * x.positions();
        self.op(name, macs, 2 * macs as u64, &[x], (c_out, x.d, x.h, x.w))
    }

    /// Kernel 4, stride 2, padding 1: every input position scatters k² taps.
    fn deconv2d(&mut self, name: &str, x: Act, c_out: usize) -> Act {
        let macs = x.c * c_out * 16 * x.h * x.w;
        self.op(name, macs, 2 * macs as u64, &[x], (c_out, 1, 2 * x.h, 2 * x.w))
    }

    fn elementwise(&mut self, name: &str, inputs: &[Act], out: (usize, usize, usize, usize), per_element: u64) -> Act {
        let n = out.0 * out.1 * out.2 * out.3;
        self.op(name, 0, per_element * n as u64, inputs, out)
    }

    fn concat(&mut self, name: &str, parts: &[Act]) -> Act {
        let c = parts.iter().map(|p| p.c).sum();
        let p = parts[0];
        self.op(name, 0, 0, parts, (c, p.d, p.h, p.w))
    }

    fn peak_bytes(&self) -> u64 {
        (0..self.layers.len())
            .map(|step| {
                (0..self.sizes.len())
                    .filter(|&i| self.born[i] <= step && step <= self.last_use[i])
                    .map(|i| self.sizes[i])
                    .sum::<u64>()
            })
            .max()
            .unwrap_or(0)
            * ELEMENT_BYTES
    }

    fn finish(self, path: CostPath, height: usize, width: usize) -> CostReport {
        let peak_activation_bytes = self.peak_bytes();
        CostReport {
            path,
            height,
            width,
            batch: self.batch,
            total_macs: self.layers.iter().map(|l| l.macs).sum(),
            total_flops: self.layers.iter().map(|l| l.flops).sum(),
            layers: self.layers,
            peak_activation_bytes,
            measured_peak_bytes: None,
            wall_time: None,
        }
    }
}

fn check_resolution(config: &ModelConfig, height: usize, width: usize, batch: usize) -> Result<()> {
    ensure!(batch > 0, "batch must be positive");
    ensure!(
        height % FEATURE_STRIDE == 0 && width % FEATURE_STRIDE == 0 && height > 0 && width > 0,
        "resolution {height}x{width} must be divisible by {FEATURE_STRIDE}"
    );
    config.validate_extent(height, width)?;
    config.variant.validate()
}

struct Encoded {
    conv1: Act,
    conv2: Act,
    conv3: Act,
}

fn encoder(s: &mut Schedule, config: &ModelConfig, image: Act, view: &str) -> Encoded {
    let w = config.widths();
    let c1 = s.conv2d(&format!("enc.conv1[{view}]"), image, w.conv1, 7, 2);
    let c1 = s.conv2d(&format!("enc.conv1b[{view}]"), c1, w.conv1, 3, 1);
    let c2 = s.conv2d(&format!("enc.conv2[{view}]"), c1, w.conv2, 5, 2);
    let c2 = s.conv2d(&format!("enc.conv2b[{view}]"), c2, w.conv2, 3, 1);
    let c3 = s.conv2d(&format!("enc.conv3[{view}]"), c2, w.conv3, 3, 2);
    let c3 = s.conv2d(&format!("enc.conv3b[{view}]"), c3, w.conv3, 3, 1);
    Encoded { conv1: c1, conv2: c2, conv3: c3 }
}

/// Inputs, both encoders and the raw concatenation volume shared by both paths.
fn front(s: &mut Schedule, config: &ModelConfig, height: usize, width: usize) -> (Act, Act, Encoded, Encoded) {
    let left = s.input(3, height, width);
    let right = s.input(3, height, width);
    let fl = encoder(s, config, left, "left");
    let fr = encoder(s, config, right, "right");
    (left, right, fl, fr)
}

fn concat_volume(s: &mut Schedule, fl: &Encoded, fr: &Encoded, levels: usize) -> Act {
    let f = fl.conv3;
    s.op("concat_volume", 0, 0, &[fl.conv3, fr.conv3], (2 * f.c, levels, f.h, f.w))
}

/// Cost of one forward pass of the configured network.
pub fn flops_count(config: &ModelConfig, height: usize, width: usize) -> Result<CostReport> {
    flops_count_batched(config, height, width, 1)
}

pub fn flops_count_batched(config: &ModelConfig, height: usize, width: usize, batch: usize) -> Result<CostReport> {
    check_resolution(config, height, width, batch)?;
    let mut s = Schedule::new(batch);
    let levels = config.disparity_levels();
    let wd = config.widths();
    let v = config.variant;
    let (left, right, fl, fr) = front(&mut s, config, height, width);
    let (fh, fw) = (fl.conv3.h, fl.conv3.w);

    let mut volume_parts = Vec::new();
    if v.correlation {
        let c = fl.conv3.c;
        let flops = 2 * (c * levels * fh * fw) as u64;
        volume_parts.push(s.op("correlation", c * levels * fh * fw, flops, &[fl.conv3, fr.conv3], (levels, 1, fh, fw)));
    }
    if v.squeezed_concat {
        let vol = concat_volume(&mut s, &fl, &fr, levels);
        let c = wd.conv3;
        let x = s.conv3d("squeeze.0", vol, c);
        let x = s.conv3d("squeeze.1", x, (c / 2).max(1));
        let x = s.conv3d("squeeze.2", x, 1);
        volume_parts.push(Act { c: levels, d: 1, ..x });
    }
    let volume = if volume_parts.len() == 2 { s.concat("combine", &volume_parts) } else { volume_parts[0] };
    let x = s.conv2d("agg.0", volume, wd.aggregation, 3, 1);
    let mut features = s.conv2d("agg.1", x, wd.aggregation, 3, 1);
    let mut disparity = s.conv2d("agg.pred", features, 1, 3, 1);

    let residual = wd.residual();
    for scale in (0..3).rev() {
        let n = ["dec0", "dec1", "dec2"][scale];
        let (h, w) = (height >> scale, width >> scale);
        let left_s = if scale == 0 { left } else { s.elementwise(&format!("{n}.pool_left"), &[left], (3, 1, h, w), 1) };
        let right_s = if scale == 0 { right } else { s.elementwise(&format!("{n}.pool_right"), &[right], (3, 1, h, w), 1) };
        let up = s.deconv2d(&format!("{n}.up"), features, wd.upconv[scale]);
        let d_up = s.elementwise(&format!("{n}.upsample_disparity"), &[disparity], (1, 1, h, w), BILINEAR_FLOPS);
        let warped = s.elementwise(&format!("{n}.warp"), &[right_s, d_up], (3, 1, h, w), WARP_FLOPS);
        let err = s.elementwise(&format!("{n}.error_map"), &[warped, left_s], (3, 1, h, w), 2);
        let att_in = s.concat(&format!("{n}.attention_input"), &[left_s, right_s, err, d_up]);
        let mut parts = vec![up];
        match scale {
            2 => parts.push(fl.conv2),
            1 => parts.push(fl.conv1),
            _ => {}
        }
        parts.push(att_in);
        let f_r = s.concat(&format!("{n}.residual_features"), &parts);
        debug_assert_eq!(f_r.c, residual[scale]);
        let hg_in = if v.residual == ResidualMode::Attention {
            let a = s.conv2d(&format!("{n}.att.reduce"), att_in, wd.attention, 1, 1);
            let a = s.conv2d(&format!("{n}.att.spatial"), a, wd.attention, 3, 1);
            let a = s.conv2d(&format!("{n}.att.project"), a, 1, 1, 1);
            s.elementwise(&format!("{n}.att.gate"), &[f_r, a], (f_r.c, 1, h, w), 1)
        } else {
            f_r
        };
        let c = hg_in.c;
        let e1 = s.conv2d(&format!("{n}.hg.down1"), hg_in, c, 3, 2);
        let e2 = s.conv2d(&format!("{n}.hg.down2"), e1, c, 3, 2);
        let u1 = s.deconv2d(&format!("{n}.hg.up1"), e2, c);
        let d1 = s.elementwise(&format!("{n}.hg.skip1"), &[u1, e1], (c, 1, e1.h, e1.w), 1);
        let u2 = s.deconv2d(&format!("{n}.hg.up2"), d1, c);
        let d0 = s.elementwise(&format!("{n}.hg.skip0"), &[u2, hg_in], (c, 1, h, w), 1);
        let head = s.conv2d(&format!("{n}.hg.head"), d0, c, 3, 1);
        let r = s.conv2d(&format!("{n}.hg.out"), head, 1, 3, 1);
        disparity = if v.residual == ResidualMode::None {
            r
        } else {
            s.elementwise(&format!("{n}.compose"), &[d_up, r], (1, 1, h, w), 1)
        };
        features = d0;
        s.hold(disparity);
    }
    Ok(s.finish(CostPath::Combined, height, width))
}

/// Reference path on the same encoder and the same 4D concatenation volume:
/// the squeeze convolutions keep their widths but stop short of collapsing
/// the feature axis, the two aggregation layers become 3D convolutions, and
/// disparity is regressed by a soft argmin over the cost volume upsampled
/// to full resolution and full disparity range.
pub fn reference_flops_count(config: &ModelConfig, height: usize, width: usize) -> Result<CostReport> {
    check_resolution(config, height, width, 1)?;
    let mut s = Schedule::new(1);
    let levels = config.disparity_levels();
    let wd = config.widths();
    let (_, _, fl, fr) = front(&mut s, config, height, width);
    let vol = concat_volume(&mut s, &fl, &fr, levels);
    let c = wd.conv3;
    let half = (c / 2).max(1);
    let x = s.conv3d("ref.conv3d.0", vol, c);
    let x = s.conv3d("ref.conv3d.1", x, half);
    let x = s.conv3d("ref.agg3d.0", x, half);
    let x = s.conv3d("ref.agg3d.1", x, half);
    let cost = s.conv3d("ref.cost", x, 1);
    let full = (1, config.max_disparity, height, width);
    let up = s.elementwise("ref.upsample_volume", &[cost], full, TRILINEAR_FLOPS);
    let prob = s.elementwise("ref.softmax", &[up], full, SOFTMAX_FLOPS);
    let n = config.max_disparity * height * width;
    let d = s.op("ref.soft_argmin", n, 2 * n as u64, &[prob], (1, 1, height, width));
    s.hold(d);
    Ok(s.finish(CostPath::Reference3d, height, width))
}
