//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::cost::{flops_count_batched, reference_flops_count, CostReport};
use crate::error::{ensure, invalid, Error, Result};
use crate::io::{
    load_checkpoint, read_kitti_png, read_mask, read_pfm, read_rgb, save_checkpoint, write_kitti_png, write_mask,
    write_pfm, write_rgb, KeyValues,
};
use crate::model::{infer, ModelConfig, ModelParams, Variant};
use crate::tensor::{memory, Tensor};
use crate::train::{
    error_map_study, evaluate, normalize_colors, run_ablation, standard_variants, train, zero_baseline, Batch,
    LossWeights, MetricAccumulator, Metrics, ScheduleMode, StereoSample, SyntheticDataset, TrainConfig,
};

#[derive(Parser, Debug)]
#[command(name = "ednet", version, about = "Stereo disparity estimation on the CPU")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on synthetic random-dot stereo and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on synthetic data or a sample directory.
    Eval(EvalArgs),
    /// Predict a disparity map for one stereo pair.
    Infer(InferArgs),
    /// Report FLOPs and activation memory against the 3D-convolution reference.
    Bench(BenchArgs),
    /// Train the ablation variants on one data stream and tabulate them.
    Ablate(AblateArgs),
    /// Write synthetic stereo samples to disk.
    GenData(GenDataArgs),
}

/// Flags shared by every command that trains. Each may also come from the
/// `--config` file under the same name with underscores.
#[derive(Args, Debug, Clone, Default)]
struct TrainFlags {
    /// key = value file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds parameter initialization and the data stream [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Optimizer steps [default: 3000].
    #[arg(long)]
    steps: Option<usize>,
    /// [default: 1]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Base learning rate [default: 0.001].
    #[arg(long)]
    lr: Option<f64>,
    /// sceneflow | kitti [default: sceneflow].
    #[arg(long)]
    schedule: Option<String>,
    /// Loss-weight preset: sceneflow | kitti [default: sceneflow].
    #[arg(long)]
    lambda: Option<String>,
    /// Channel width multiplier [default: 0.25].
    #[arg(long)]
    width: Option<f64>,
    /// Input extent HxW [default: 64x128].
    #[arg(long)]
    resolution: Option<String>,
    /// Model disparity range in pixels [default: 32].
    #[arg(long)]
    max_disparity: Option<usize>,
    /// Largest generated disparity [default: 16].
    #[arg(long)]
    data_max_disparity: Option<f64>,
    /// [default: 2000]
    #[arg(long)]
    train_samples: Option<usize>,
    /// [default: 200]
    #[arg(long)]
    val_samples: Option<usize>,
    /// Log validation EPE every this many steps [default: 250].
    #[arg(long)]
    eval_every: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    flags: TrainFlags,
    /// Model variant name, e.g. EDNet-F or EDNet-NR [default: EDNet-F].
    #[arg(long)]
    variant: Option<String>,
    /// Checkpoint destination.
    #[arg(long)]
    out: PathBuf,
    /// Line-delimited JSON metrics log; stdout when absent.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of sample folders holding left.png, right.png and
    /// disp.pfm (+ optional mask.png) or disp.png (16-bit).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Synthetic evaluation stream seed, when --data is absent.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = 16.0)]
    data_max_disparity: f64,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    right: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// `.pfm` for float output, `.png` for 16-bit fixed point.
    #[arg(long)]
    out: PathBuf,
    /// Accepted for interface uniformity; inference is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// HxW
    #[arg(long, default_value = "384x1248")]
    resolution: String,
    #[arg(long, default_value_t = 1.0)]
    width: f64,
    #[arg(long, default_value_t = 192)]
    max_disparity: usize,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    /// Also run a timed forward pass with the allocation tracker.
    #[arg(long)]
    measure: bool,
    /// Print per-layer counts.
    #[arg(long)]
    layers: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    flags: TrainFlags,
    /// Comma-separated variant names [default: all six].
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    /// Compare error maps at every refinement scale with full resolution
    /// only, for each of these seeds, instead of the variant table.
    #[arg(long, value_delimiter = ',')]
    error_map_seeds: Vec<u64>,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "64x128")]
    resolution: String,
    #[arg(long, default_value_t = 16.0)]
    max_disparity: f64,
}

/// Fully validated settings of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn parse_resolution(s: &str) -> Result<(usize, usize)> {
    let (h, w) = s.split_once('x').ok_or_else(|| invalid!("resolution `{s}` must look like HxW"))?;
    let dim = |v: &str| v.trim().parse::<usize>().map_err(|_| invalid!("bad resolution `{s}`"));
    Ok((dim(h)?, dim(w)?))
}

fn pick<T: FromStr>(flag: Option<T>, file: &KeyValues, key: &str, default: T) -> Result<T> {
    if let Some(v) = flag {
        return Ok(v);
    }
    file.parsed(key).map(|v| v.unwrap_or(default)).map_err(|e| invalid!("config file: {e}"))
}

impl RunConfig {
    fn resolve(flags: &TrainFlags, variant: Variant) -> Result<RunConfig> {
        let file = match &flags.config {
            Some(p) => KeyValues::read(p)?,
            None => KeyValues::default(),
        };
        const KEYS: [&str; 13] = [
            "seed", "steps", "batch_size", "lr", "schedule", "lambda", "width", "resolution", "max_disparity",
            "data_max_disparity", "train_samples", "val_samples", "eval_every",
        ];
        if let Some(k) = file.keys().find(|k| !KEYS.contains(k)) {
            return Err(invalid!("config file: unknown key `{k}`"));
        }
        let seed = pick(flags.seed, &file, "seed", 0)?;
        let (h, w) = parse_resolution(&pick(flags.resolution.clone(), &file, "resolution", "64x128".into())?)?;
        let schedule: ScheduleMode = pick(flags.schedule.clone(), &file, "schedule", "sceneflow".into())?.parse()?;
        let model = ModelConfig {
            max_disparity: pick(flags.max_disparity, &file, "max_disparity", 32)?,
            width_multiplier: pick(flags.width, &file, "width", 0.25)?,
            input_height: h,
            input_width: w,
            seed,
            variant,
        };
        let train = TrainConfig {
            steps: pick(flags.steps, &file, "steps", 3000)?,
            batch_size: pick(flags.batch_size, &file, "batch_size", 1)?,
            base_lr: pick(flags.lr, &file, "lr", schedule.default_base_lr())?,
            schedule,
            weights: LossWeights::preset(&pick(flags.lambda.clone(), &file, "lambda", "sceneflow".into())?)?,
            data_seed: seed,
            train_samples: pick(flags.train_samples, &file, "train_samples", 2000)?,
            val_samples: pick(flags.val_samples, &file, "val_samples", 200)?,
            data_max_disparity: pick(flags.data_max_disparity, &file, "data_max_disparity", 16.0)?,
            eval_every: pick(flags.eval_every, &file, "eval_every", 250)?,
            log_batch: 8,
        };
        model.validate()?;
        train.validate()?;
        train.datasets(&model)?;
        Ok(RunConfig { model, train })
    }
}

fn print_metrics(label: &str, m: &Metrics) {
    println!(
        "{label}: EPE {:.4} px, >1px {:.2}%, >3px {:.2}%, D1-all {:.2}%",
        m.epe, m.px1, m.px3, m.d1_all
    );
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let variant = Variant::named(args.variant.as_deref().unwrap_or("EDNet-F"))?;
    let run = RunConfig::resolve(&args.flags, variant)?;
    let mut sink: Box<dyn Write> = match &args.log {
        Some(p) => Box::new(std::io::BufWriter::new(fs::File::create(p)?)),
        None => Box::new(std::io::stdout()),
    };
    let outcome = train(&run.model, &run.train, |r| {
        writeln!(sink, "{}", r.to_json_line())?;
        Ok(())
    })?;
    sink.flush()?;
    drop(sink);
    save_checkpoint(&args.out, &outcome.params)?;
    let (_, val) = run.train.datasets(&run.model)?;
    print_metrics("validation", &evaluate(&outcome.params, &val, 4)?);
    print_metrics("zero baseline", &zero_baseline(&val)?);
    eprintln!("trained {} steps in {:.1} s", run.train.steps, outcome.elapsed.as_secs_f64());
    Ok(())
}

fn load_sample_dir(dir: &Path) -> Result<StereoSample> {
    let left = read_rgb(dir.join("left.png"))?;
    let right = read_rgb(dir.join("right.png"))?;
    let (gt, mask) = if dir.join("disp.pfm").exists() {
        let gt = read_pfm(dir.join("disp.pfm"))?;
        let mask = if dir.join("mask.png").exists() {
            read_mask(dir.join("mask.png"))?
        } else {
            gt.map(|d| if d.is_finite() && d > 0.0 { 1.0 } else { 0.0 })
        };
        (gt, mask)
    } else {
        read_kitti_png(dir.join("disp.png"))?
    };
    ensure!(
        left.shape() == right.shape() && gt.shape()[2..] == left.shape()[2..] && mask.shape() == gt.shape(),
        "sample `{}` has inconsistent extents",
        dir.display()
    );
    Ok(StereoSample { left, right, gt_disparity: gt, valid_mask: mask })
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let params = load_checkpoint(&args.checkpoint)?;
    match &args.data {
        Some(dir) => {
            let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            entries.retain(|p| p.is_dir());
            entries.sort();
            ensure!(!entries.is_empty(), "no sample folders in `{}`", dir.display());
            let mut acc = MetricAccumulator::default();
            for e in &entries {
                let b = Batch::stack(&[load_sample_dir(e)?])?;
                let pred = infer(&params, &normalize_colors(&b.left)?, &normalize_colors(&b.right)?)?;
                acc.add(&pred, &b.gt_disparity, &b.valid_mask)?;
            }
            print_metrics(&format!("{} samples", entries.len()), &acc.finish()?);
        }
        None => {
            let c = params.config();
            let ds = SyntheticDataset::new(args.seed, args.samples, c.input_height, c.input_width, args.data_max_disparity)?;
            print_metrics(&format!("{} synthetic samples", args.samples), &evaluate(&params, &ds, 4)?);
            print_metrics("zero baseline", &zero_baseline(&ds)?);
        }
    }
    Ok(())
}

fn cmd_infer(args: InferArgs) -> Result<()> {
    let params = load_checkpoint(&args.checkpoint)?;
    let left = read_rgb(&args.left)?;
    let right = read_rgb(&args.right)?;
    ensure!(left.shape() == right.shape(), "left and right images differ in size");
    let disp = infer(&params, &normalize_colors(&left)?, &normalize_colors(&right)?)?;
    match args.out.extension().and_then(|e| e.to_str()) {
        Some("pfm") => write_pfm(&args.out, &disp),
        Some("png") => write_kitti_png(&args.out, &disp.map(|d| d.max(0.0)), None),
        _ => Err(invalid!("output `{}` must end in .pfm or .png", args.out.display())),
    }
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let (h, w) = parse_resolution(&args.resolution)?;
    let config = ModelConfig {
        max_disparity: args.max_disparity,
        width_multiplier: args.width,
        input_height: h,
        input_width: w,
        seed: args.seed,
        variant: Variant::FULL,
    };
    config.validate()?;
    let mut ours = flops_count_batched(&config, h, w, args.batch)?;
    let reference = reference_flops_count(&config, h, w)?;
    if args.measure {
        let params = ModelParams::build(&config)?;
        let input = Tensor::from_fn(&[args.batch, 3, h, w], |i| ((i * 7919) % 255) as f64 / 255.0);
        let (l, r) = (normalize_colors(&input)?, normalize_colors(&input)?);
        memory::reset_peak();
        let base = memory::live_bytes();
        let start = Instant::now();
        infer(&params, &l, &r)?;
        ours.wall_time = Some(start.elapsed());
        ours.measured_peak_bytes = Some((memory::peak_bytes() - base) as u64);
    }
    println!("conditions: batch {}, 64-bit floats, single process, analytic counts per forward pass", args.batch);
    println!("{}", ours.summary());
    println!("{}", reference.summary());
    report_ratio(&ours, &reference);
    if args.layers {
        print!("{}", ours.layer_table());
        print!("{}", reference.layer_table());
    }
    Ok(())
}

fn report_ratio(ours: &CostReport, reference: &CostReport) {
    println!(
        "reference / combined: FLOPs x{:.3}, peak activation memory x{:.3}",
        reference.flops_per_sample() / ours.flops_per_sample(),
        reference.peak_bytes_per_sample() / ours.peak_bytes_per_sample()
    );
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let run = RunConfig::resolve(&args.flags, Variant::FULL)?;
    if !args.error_map_seeds.is_empty() {
        for cmp in error_map_study(&run.model, &run.train, &args.error_map_seeds)? {
            for (label, curve) in [("multi_scale", &cmp.multi_scale), ("full_res_only", &cmp.full_res_only)] {
                for r in curve.iter().filter(|r| r.val_epe.is_some()) {
                    println!(
                        "{{\"seed\":{},\"error_maps\":\"{label}\",\"step\":{},\"loss\":{},\"val_epe\":{}}}",
                        cmp.seed,
                        r.step,
                        r.loss,
                        r.val_epe.unwrap_or(f64::NAN)
                    );
                }
            }
            println!(
                "seed {}: validation EPE multi-scale {:.4} vs full-resolution only {:.4} ({})",
                cmp.seed,
                cmp.multi_scale_epe,
                cmp.full_res_only_epe,
                if cmp.multi_scale_wins() { "multi-scale lower" } else { "multi-scale not lower" }
            );
        }
        return Ok(());
    }
    let variants = if args.variants.is_empty() {
        standard_variants()
    } else {
        args.variants
            .iter()
            .map(|n| Ok((n.clone(), Variant::named(n)?)))
            .collect::<Result<Vec<_>>>()?
    };
    let report = run_ablation(&run.model, &run.train, &variants)?;
    print!("{}", report.to_table());
    println!("data stream checksum {:016x}", report.rows[0].checksum.0);
    Ok(())
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let (h, w) = parse_resolution(&args.resolution)?;
    let ds = SyntheticDataset::new(args.seed, args.count, h, w, args.max_disparity)?;
    fs::create_dir_all(&args.out)?;
    for i in 0..args.count {
        let s = ds.sample(i)?;
        let dir = args.out.join(format!("{i:06}"));
        fs::create_dir_all(&dir)?;
        write_rgb(dir.join("left.png"), &s.left)?;
        write_rgb(dir.join("right.png"), &s.right)?;
        write_pfm(dir.join("disp.pfm"), &s.gt_disparity)?;
        write_mask(dir.join("mask.png"), &s.valid_mask)?;
    }
    println!("wrote {} samples to {}", args.count, args.out.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::GenData(a) => cmd_gen_data(a),
    }
}

/// Parses `argv` and runs the command. Returns the process exit code:
/// 0 on success, 2 for usage errors, 1 for every other failure.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidArgument(_) => 2,
                _ => 1,
            }
        }
    }
}
