//! `neuvox`: synthesize scenes, train, render, evaluate, and inspect models.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;
use neuvox::checkpoint::Checkpoint;
use neuvox::config::TrainConfig;
use neuvox::dataset::{load_dnerf, Split, DEFAULT_NEAR, DEFAULT_FAR};
use neuvox::gradcheck::{self, GradCheckOptions};
use neuvox::raster::write_atomic;
use neuvox::render::{render_image, Camera};
use neuvox::synth::{look_at_origin, synth_scene, SceneSpec, SynthOptions, DEFAULT_CAMERA_ANGLE_X, DEFAULT_CAMERA_RADIUS};
use neuvox::train::{evaluate, Trainer, RENDER_CHUNK};
use neuvox::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_STATE: u8 = 4;

#[derive(Parser)]
#[command(name = "neuvox", version, about = "Time-aware neural voxel radiance fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene description into a dataset directory.
    Synth(SynthArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Render frames from a checkpoint across poses and times.
    Render(RenderArgs),
    /// Score a checkpoint against one split of a dataset.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients on a tiny model.
    Gradcheck(GradcheckArgs),
    /// Dump per-stride gradient magnitudes and deformation samples.
    Diag(DiagArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    cameras: usize,
    /// Image size as WIDTHxHEIGHT.
    #[arg(long, default_value = "64x64")]
    res: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Continue from this checkpoint; its stored config is used.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Split file (`camera_angle_x` plus `frames[].transform_matrix`) giving the poses.
    #[arg(long, conflicts_with = "orbit", required_unless_present = "orbit")]
    pose: Option<PathBuf>,
    /// Number of evenly spaced cameras on a circle around the scene.
    #[arg(long)]
    orbit: Option<usize>,
    /// Inclusive time range START:END:STEPS.
    #[arg(long, default_value = "0:1:5")]
    time: String,
    #[arg(long)]
    out: PathBuf,
    /// Image size as WIDTHxHEIGHT.
    #[arg(long, default_value = "64x64")]
    res: String,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Encoding and loss settings; sizes are fixed to the tiny check model.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DiagArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_USAGE);
    }
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Numerical { .. }) => EXIT_NUMERICAL,
        Some(Error::State(_)) => EXIT_STATE,
        _ => EXIT_USAGE,
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("TNV_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| anyhow!("TNV_THREADS must be a positive integer, got `{v}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn dispatch(cmd: Command) -> anyhow::Result<ExitCode> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Render(a) => render(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => return grad_check(a),
        Command::Diag(a) => diag(a),
    }
    .map(|()| ExitCode::SUCCESS)
}

fn parse_res(s: &str) -> anyhow::Result<(usize, usize)> {
    let (w, h) = s.split_once('x').ok_or_else(|| anyhow!("resolution must look like 64x64, got `{s}`"))?;
    let (w, h) = (w.parse::<usize>()?, h.parse::<usize>()?);
    if w == 0 || h == 0 {
        bail!("resolution must be nonzero, got `{s}`");
    }
    Ok((w, h))
}

/// `START:END:STEPS`, inclusive of both ends.
fn parse_times(s: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, n] = parts[..] else {
        bail!("time range must be START:END:STEPS, got `{s}`");
    };
    let (a, b, n): (f64, f64, usize) = (a.parse()?, b.parse()?, n.parse()?);
    if n == 0 || !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
        bail!("time range `{s}` needs STEPS > 0 and endpoints in [0, 1]");
    }
    Ok(if n == 1 {
        vec![a]
    } else {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    })
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let spec = SceneSpec::load(&a.spec)?;
    let (width, height) = parse_res(&a.res)?;
    let ds = synth_scene(&spec, &SynthOptions { cameras: a.cameras, width, height, seed: a.seed }, &a.out)?;
    info!(
        "wrote {} train, {} val, {} test frames to {}",
        ds.train.len(),
        ds.val.len(),
        ds.test.len(),
        a.out.display()
    );
    Ok(())
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let mut config = TrainConfig::load(&a.config)?;
    let ckpt = a.resume.as_deref().map(Checkpoint::load).transpose()?;
    if let Some(c) = &ckpt {
        config = c.config.clone();
    }
    let ds = load_dnerf(&a.data, config.background)?;
    let mut trainer = match ckpt {
        Some(c) => Trainer::resume(c, &ds)?,
        None => Trainer::new(config.clone(), &ds)?,
    };
    trainer.run(Some(&a.out))?;
    if !ds.val.is_empty() {
        let report = evaluate(&trainer.model, &trainer.config, &ds.val, trainer.near, trainer.far)?;
        write_atomic(&a.out.join("eval_val.csv"), report.to_csv().as_bytes())?;
        info!("validation: PSNR {:.2} dB, SSIM {:.4}", report.mean_psnr(), report.mean_ssim());
    }
    Ok(())
}

fn clip_range(config: &TrainConfig, bbox: &neuvox::voxels::Bbox, radius: Option<f64>) -> (f64, f64) {
    match (config.near, config.far, radius) {
        (Some(n), Some(f), _) => (n, f),
        (_, _, Some(r)) => {
            let half = 0.5 * bbox.diagonal();
            ((r - half).max(1e-3), r + half)
        }
        _ => (config.near.unwrap_or(DEFAULT_NEAR), config.far.unwrap_or(DEFAULT_FAR)),
    }
}

fn render(a: RenderArgs) -> anyhow::Result<()> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let times = parse_times(&a.time)?;
    let (width, height) = parse_res(&a.res)?;
    let model = &ckpt.model;

    let (poses, angle, radius) = match (&a.pose, a.orbit) {
        (Some(path), _) => {
            let (poses, angle) = read_poses(path)?;
            (poses, angle, None)
        }
        (None, Some(n)) if n > 0 => {
            let r = DEFAULT_CAMERA_RADIUS;
            let poses = (0..n)
                .map(|i| {
                    let phi = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                    look_at_origin([r * 0.95 * phi.cos(), r * 0.95 * phi.sin(), r * 0.3])
                })
                .collect();
            (poses, DEFAULT_CAMERA_ANGLE_X, Some(r))
        }
        _ => bail!("--orbit needs at least one camera"),
    };
    let (near, far) = clip_range(&ckpt.config, model.bbox(), radius);
    let focal = 0.5 * width as f64 / (0.5 * angle).tan();
    let opts = ckpt.config.render_options();
    std::fs::create_dir_all(&a.out)?;
    for (pi, pose) in poses.iter().enumerate() {
        let cam = Camera { pose: *pose, focal, width, height };
        for (ti, &t) in times.iter().enumerate() {
            let img = render_image(model, &cam, t, near, far, &opts, RENDER_CHUNK)?;
            img.save_png(&a.out.join(format!("frame_{pi:03}_{ti:03}.png")))?;
        }
    }
    info!("rendered {} frames to {}", poses.len() * times.len(), a.out.display());
    Ok(())
}

fn read_poses(path: &Path) -> anyhow::Result<(Vec<[[f64; 4]; 4]>, f64)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let angle = v.get("camera_angle_x").and_then(|x| x.as_f64()).unwrap_or(DEFAULT_CAMERA_ANGLE_X);
    let frames = v
        .get("frames")
        .and_then(|f| f.as_array())
        .ok_or_else(|| anyhow!("{}: no `frames` list", path.display()))?;
    let poses = frames
        .iter()
        .map(|f| {
            let m = f.get("transform_matrix").ok_or_else(|| anyhow!("frame without transform_matrix"))?;
            Ok(serde_json::from_value::<[[f64; 4]; 4]>(m.clone())?)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    if poses.is_empty() {
        bail!("{}: no poses", path.display());
    }
    Ok((poses, angle))
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let split: Split = a.split.parse()?;
    let ds = load_dnerf(&a.data, ckpt.config.background)?;
    let frames = ds.split(split);
    if frames.is_empty() {
        bail!("split `{}` has no frames", split.name());
    }
    let (near, far) = ds.clip_range(ckpt.config.near, ckpt.config.far);
    let report = evaluate(&ckpt.model, &ckpt.config, frames, near, far)?;
    write_atomic(&a.out, report.to_csv().as_bytes())?;
    println!("{}: PSNR {:.3} dB, SSIM {:.4}", split.name(), report.mean_psnr(), report.mean_ssim());
    Ok(())
}

fn grad_check(a: GradcheckArgs) -> anyhow::Result<ExitCode> {
    let config = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::small(),
    };
    let mut opts = GradCheckOptions::tiny(a.seed, &config.net);
    opts.weights = config.loss_weights();
    opts.background = config.background;
    let report = gradcheck::run(&opts)?;
    let worst = report.worst.as_ref().ok_or_else(|| anyhow!("no parameters checked"))?;
    println!(
        "checked {} parameters in {:.1}s; max relative error {:.3e} at {}[{}]",
        report.checked,
        report.elapsed.as_secs_f64(),
        worst.rel_error,
        worst.tensor,
        worst.index
    );
    if report.passed() {
        return Ok(ExitCode::SUCCESS);
    }
    for f in report.failures.iter().take(20) {
        println!("  {}[{}]: analytic {:e}, numeric {:e}, rel {:.3e}", f.tensor, f.index, f.analytic, f.numeric, f.rel_error);
    }
    println!("{} parameters exceed {}", report.failures.len(), opts.tolerance);
    Ok(ExitCode::from(EXIT_NUMERICAL))
}

fn diag(a: DiagArgs) -> anyhow::Result<()> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let report = ckpt
        .diagnostics
        .as_ref()
        .ok_or_else(|| Error::State("checkpoint holds no gradients; train before running diag".into()))?;
    std::fs::create_dir_all(&a.out)?;

    let mut norms = String::from("stride,grad_norm\n");
    for (s, n) in report.strides.iter().zip(&report.norms) {
        let _ = writeln!(norms, "{s},{n:e}");
    }
    write_atomic(&a.out.join("stride_grads.csv"), norms.as_bytes())?;

    let d = report.dims;
    for (s, field) in report.strides.iter().zip(&report.fields) {
        let mut csv = String::from("x,y,z,magnitude\n");
        for (i, m) in field.iter().enumerate() {
            let _ = writeln!(csv, "{},{},{},{m:e}", i / (d[1] * d[2]), (i / d[2]) % d[1], i % d[2]);
        }
        write_atomic(&a.out.join(format!("stride_{s}_field.csv")), csv.as_bytes())?;
    }

    let model = &ckpt.model;
    let bbox = *model.bbox();
    let e = bbox.extent();
    let n = 8;
    let mut csv = String::from("t,x,y,z,dx,dy,dz\n");
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let embed = model.encode_time(t)?;
        for i in 0..n * n * n {
            let idx = [i / (n * n), (i / n) % n, i % n];
            let p: [f64; 3] = std::array::from_fn(|k| bbox.min[k] + e[k] * (idx[k] as f64 + 0.5) / n as f64);
            let q = model.deform(p, &embed)?;
            let _ = writeln!(
                csv,
                "{t},{:.6},{:.6},{:.6},{:e},{:e},{:e}",
                p[0], p[1], p[2], q[0] - p[0], q[1] - p[1], q[2] - p[2]
            );
        }
    }
    write_atomic(&a.out.join("deformation.csv"), csv.as_bytes())?;
    info!("wrote diagnostics for strides {:?} to {}", report.strides, a.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_ranges_are_inclusive() {
        assert_eq!(parse_times("0:1:5").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(parse_times("0:0:1").unwrap(), vec![0.0]);
        assert_eq!(parse_times("0.2:0.4:2").unwrap(), vec![0.2, 0.4]);
        for bad in ["0:1", "0:1:0", "0:2:3", "a:1:2"] {
            assert!(parse_times(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn resolutions_parse() {
        assert_eq!(parse_res("64x32").unwrap(), (64, 32));
        assert!(parse_res("64").is_err());
        assert!(parse_res("0x4").is_err());
    }
}
