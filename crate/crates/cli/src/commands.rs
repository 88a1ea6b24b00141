use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use datc::container::{load_mask, load_tensor, save_mask, save_tensor};
use datc::engine::{run_with_reference, write_trace_csv, CompletionResult, GibbsConfig};
use datc::metrics::{psnr, rre, ssim, MetricReport};
use datc::synth::{ResidualSpec, SyntheticProblem};
use datc::tensor::{DenseTensor, ObservationMask};
use serde::Serialize;

use crate::args::{Cli, Command, CompleteArgs, InpaintArgs, MaskArgs, ReplayArgs, SamplerArgs, SynthArgs, VideoArgs};
use crate::error::{CliError, CliResult};
use crate::imageio;
use crate::manifest::{FileDigest, RunManifest};

/// Default initial rank for general tensors and for images/video.
const TENSOR_RANK_INIT: usize = 20;
const VISUAL_RANK_INIT: usize = 100;

/// Files read and written by one command.
#[derive(Default)]
struct Io {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Io {
    fn output(&mut self, path: PathBuf) -> PathBuf {
        self.outputs.push(path.clone());
        path
    }
}

fn runtime(path: &Path, err: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {err}", path.display()))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| runtime(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| runtime(path, e))?;
    fs::write(path, json + "\n").map_err(|e| runtime(path, e))
}

fn write_metrics(path: &Path, report: &MetricReport) -> CliResult<()> {
    let mut buf = Vec::new();
    writeln!(buf, "{}", MetricReport::CSV_HEADER).map_err(|e| runtime(path, e))?;
    report.write_csv_row(&mut buf)?;
    fs::write(path, buf).map_err(|e| runtime(path, e))
}

fn print_metrics(report: &MetricReport) {
    let ssim = report.ssim.map(|s| format!(" ssim={s:.4}")).unwrap_or_default();
    println!("rre={:.6} psnr={:.3}{ssim}", report.rre, report.psnr);
}

/// Runs a parsed command and writes its manifest; `argv` excludes the program name.
pub fn dispatch(cli: Cli, argv: &[String]) -> CliResult<()> {
    let start = Instant::now();
    let cwd = std::env::current_dir().map_err(|e| CliError::Runtime(e.to_string()))?;
    let (name, out, config, io) = match cli.command {
        Command::Synth(a) => ("synth", a.out.clone(), None, synth(&a)?),
        Command::Complete(a) => {
            let (config, io) = complete(&a)?;
            ("complete", a.out.clone(), Some(config), io)
        }
        Command::Inpaint(a) => {
            let (config, io) = inpaint(&a)?;
            ("inpaint", a.out.clone(), Some(config), io)
        }
        Command::Video(a) => {
            let (config, io) = video(&a)?;
            ("video", a.out.clone(), Some(config), io)
        }
        Command::Replay(a) => return replay(&a),
    };
    let digests = |paths: &[PathBuf]| paths.iter().map(|p| FileDigest::of(p)).collect::<CliResult<Vec<_>>>();
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").into(),
        command: name.into(),
        args: argv.to_vec(),
        cwd,
        config,
        inputs: digests(&io.inputs)?,
        outputs: digests(&io.outputs)?,
        seconds: start.elapsed().as_secs_f64(),
    };
    manifest.write(&out)?;
    Ok(())
}

#[derive(Serialize)]
struct GroundTruth<'a> {
    dims: &'a [usize],
    true_rank: usize,
    lambda: &'a [f64],
    residual: &'a str,
    mixture: &'a ResidualSpec,
    /// Population index of every entry, row-major.
    assignments: &'a [u8],
    noise_var: f64,
    missing_ratio: f64,
    seed: u64,
}

fn synth(a: &SynthArgs) -> CliResult<Io> {
    if a.rank == 0 || a.dims.iter().any(|&d| a.rank > d) {
        return Err(CliError::Usage(format!(
            "rank {} must lie in 1..=min(dims) for {:?}",
            a.rank, a.dims
        )));
    }
    if !(a.noise_var >= 0.0 && a.noise_var.is_finite()) {
        return Err(CliError::Usage(format!(
            "noise variance must be non-negative, got {}",
            a.noise_var
        )));
    }
    let spec = ResidualSpec::preset(a.residual);
    let problem = SyntheticProblem::generate(&a.dims, a.rank, spec, a.noise_var, a.missing, a.seed)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    create_dir(&a.out)?;
    let mut io = Io::default();
    save_tensor(io.output(a.out.join("truth.dtc")), &problem.latent)?;
    save_tensor(io.output(a.out.join("observed.dtc")), &problem.observed)?;
    save_mask(io.output(a.out.join("mask.dtm")), &problem.mask)?;
    let truth = GroundTruth {
        dims: &a.dims,
        true_rank: a.rank,
        lambda: problem.cp.lambda(),
        residual: a.residual.name(),
        mixture: &problem.spec,
        assignments: &problem.residual.assignments,
        noise_var: a.noise_var,
        missing_ratio: a.missing,
        seed: a.seed,
    };
    write_json(&io.output(a.out.join("ground_truth.json")), &truth)?;
    println!(
        "wrote {} observed of {} entries to {}",
        problem.mask.observed_count(),
        problem.mask.flags().len(),
        a.out.display()
    );
    Ok(io)
}

fn check_mask(y: &DenseTensor, mask: &ObservationMask) -> CliResult<()> {
    if y.shape() != mask.shape() {
        return Err(CliError::Input(format!(
            "observation shape {:?} differs from mask shape {:?}",
            y.dims(),
            mask.shape().dims()
        )));
    }
    if mask.observed_count() == 0 {
        return Err(CliError::Input("mask has no observed entries".into()));
    }
    Ok(())
}

/// Completion from one or more chains plus the files it wrote.
struct Completion {
    completed: DenseTensor,
    seconds: f64,
}

#[derive(Serialize)]
struct ChainReport {
    chain: usize,
    seed: u64,
    estimated_rank: usize,
    rre: Option<f64>,
}

/// Writes the per-run artefacts of one chain into `dir`.
fn write_chain(dir: &Path, result: &CompletionResult, trace_path: &Path, spatial: bool, io: &mut Io) -> CliResult<()> {
    create_dir(dir)?;
    save_tensor(io.output(dir.join("completed.dtc")), &result.completed)?;
    if let Some(u) = &result.entry_uncertainty {
        save_tensor(io.output(dir.join("uncertainty.dtc")), u)?;
    }
    let lambda: String = result
        .lowrank_mean
        .lambda()
        .iter()
        .map(|v| format!("{v:.17e}\n"))
        .collect();
    let path = io.output(dir.join("lambda.csv"));
    fs::write(&path, format!("lambda\n{lambda}")).map_err(|e| runtime(&path, e))?;
    write_json(&io.output(dir.join("mixture.json")), &result.mixture_summary)?;
    let mut buf = Vec::new();
    writeln!(buf, "# spatial={spatial}").map_err(|e| runtime(trace_path, e))?;
    write_trace_csv(&mut buf, &result.trace)?;
    if let Some(parent) = trace_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(trace_path, buf).map_err(|e| runtime(trace_path, e))?;
    io.outputs.push(trace_path.to_path_buf());
    Ok(())
}

/// Runs `chains` chains (seeds `seed, seed + 1, ...`) concurrently and writes
/// their outputs; with several chains each gets a `chain_<c>` directory and
/// the top level holds the pooled completion.
fn run_completion(
    y: &DenseTensor,
    mask: &ObservationMask,
    config: &GibbsConfig,
    truth: Option<&DenseTensor>,
    chains: usize,
    out: &Path,
    trace: Option<&Path>,
    io: &mut Io,
) -> CliResult<Completion> {
    if chains == 0 {
        return Err(CliError::Usage("--chains must be at least 1".into()));
    }
    create_dir(out)?;
    let start = Instant::now();
    let configs: Vec<GibbsConfig> = (0..chains)
        .map(|c| GibbsConfig {
            seed: config.seed.wrapping_add(c as u64),
            ..config.clone()
        })
        .collect();
    let results: Vec<CompletionResult> = std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .map(|cfg| s.spawn(move || run_with_reference(y, mask, cfg, truth)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain thread panicked"))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let seconds = start.elapsed().as_secs_f64();
    let spatial = config.spatial.is_some();
    let default_trace = out.join("trace.csv");
    let trace = trace.unwrap_or(&default_trace);
    if chains == 1 {
        let result = &results[0];
        write_chain(out, result, trace, spatial, io)?;
        println!("estimated rank: {}", result.estimated_rank);
        return Ok(Completion {
            completed: result.completed.clone(),
            seconds,
        });
    }

    let mut reports = Vec::with_capacity(chains);
    for (c, (result, cfg)) in results.iter().zip(&configs).enumerate() {
        let dir = out.join(format!("chain_{c}"));
        let chain_trace = dir.join(trace.file_name().unwrap_or("trace.csv".as_ref()));
        write_chain(&dir, result, &chain_trace, spatial, io)?;
        let err = truth.map(|t| rre(t, &result.completed)).transpose()?;
        println!(
            "chain {c} (seed {}): estimated rank {}",
            cfg.seed, result.estimated_rank
        );
        reports.push(ChainReport {
            chain: c,
            seed: cfg.seed,
            estimated_rank: result.estimated_rank,
            rre: err,
        });
    }
    let n = chains as f64;
    let len = y.len();
    let mut mean = vec![0.0; len];
    for r in &results {
        for (m, v) in mean.iter_mut().zip(r.completed.values()) {
            *m += v / n;
        }
    }
    let completed = DenseTensor::new(y.shape().clone(), mean.clone())?;
    save_tensor(io.output(out.join("completed.dtc")), &completed)?;
    // Pooled spread: within-chain variance plus between-chain variance of the means.
    if results.iter().all(|r| r.entry_uncertainty.is_some()) {
        let mut var = vec![0.0; len];
        for r in &results {
            let sd = r.entry_uncertainty.as_ref().expect("checked above");
            for (i, v) in var.iter_mut().enumerate() {
                let d = r.completed.values()[i] - mean[i];
                *v += (sd.values()[i].powi(2) + d * d) / n;
            }
        }
        let sd = DenseTensor::new(y.shape().clone(), var.into_iter().map(f64::sqrt).collect())?;
        save_tensor(io.output(out.join("uncertainty.dtc")), &sd)?;
    }
    let mut ranks: Vec<usize> = results.iter().map(|r| r.estimated_rank).collect();
    ranks.sort_unstable();
    let estimated_rank = ranks[(chains - 1) / 2];
    write_json(&io.output(out.join("chains.json")), &reports)?;
    println!("estimated rank: {estimated_rank} (median of {chains} chains)");
    Ok(Completion { completed, seconds })
}

fn complete(a: &CompleteArgs) -> CliResult<(GibbsConfig, Io)> {
    let mut io = Io::default();
    let y = load_tensor(&a.observed).map_err(|e| CliError::input(a.observed.display(), e))?;
    io.inputs.push(a.observed.clone());
    let mask = load_mask(&a.mask).map_err(|e| CliError::input(a.mask.display(), e))?;
    io.inputs.push(a.mask.clone());
    check_mask(&y, &mask)?;
    let truth = match &a.truth {
        Some(path) => {
            let t = load_tensor(path).map_err(|e| CliError::input(path.display(), e))?;
            if t.shape() != y.shape() {
                return Err(CliError::Input(format!(
                    "truth shape {:?} differs from {:?}",
                    t.dims(),
                    y.dims()
                )));
            }
            io.inputs.push(path.clone());
            Some(t)
        }
        None => None,
    };
    let config = a.sampler.config(y.shape().order(), TENSOR_RANK_INIT)?;
    let done = run_completion(
        &y,
        &mask,
        &config,
        truth.as_ref(),
        a.chains,
        &a.out,
        a.sampler.trace.as_deref(),
        &mut io,
    )?;
    if let Some(t) = &truth {
        let report = MetricReport {
            dataset: a
                .observed
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            missing_ratio: 1.0 - mask.observed_fraction(),
            rre: rre(t, &done.completed)?,
            psnr: psnr(t, &done.completed, 1.0)?,
            ssim: None,
            seconds: done.seconds,
            seed: config.seed,
        };
        print_metrics(&report);
        write_metrics(&io.output(a.out.join("metrics.csv")), &report)?;
    }
    Ok((config, io))
}

/// Per-pixel missing flags (pixel-major, frame fastest) for `frames`
/// images of `h × w` pixels.
fn missing_pixels(m: &MaskArgs, images: &[DenseTensor], seed: u64, io: &mut Io) -> CliResult<Vec<bool>> {
    let dims = images[0].dims();
    let (h, w) = (dims[0], dims[1]);
    let frames = images.len();
    let per_frame: Vec<Vec<bool>> = if let Some(ratio) = m.missing {
        let flat = imageio::random_pixels(h * w * frames, ratio, seed)?;
        return Ok(flat);
    } else if let Some(path) = &m.mask {
        let files = if path.is_dir() {
            imageio::list_frames(path)?
        } else {
            vec![path.clone()]
        };
        if files.len() != 1 && files.len() != frames {
            return Err(CliError::Input(format!(
                "{} mask images for {frames} frames",
                files.len()
            )));
        }
        let masks = files
            .iter()
            .map(|f| imageio::mask_image_pixels(f, h, w))
            .collect::<CliResult<Vec<_>>>()?;
        io.inputs.extend(files);
        (0..frames).map(|t| masks[t.min(masks.len() - 1)].clone()).collect()
    } else {
        let marker = imageio::parse_marker(m.marker.as_deref().expect("clap requires one mask option"))?;
        images
            .iter()
            .map(|img| imageio::marker_pixels(img, marker))
            .collect::<CliResult<Vec<_>>>()?
    };
    let mut flat = vec![false; h * w * frames];
    for (t, f) in per_frame.iter().enumerate() {
        for (p, &missing) in f.iter().enumerate() {
            flat[p * frames + t] = missing;
        }
    }
    Ok(flat)
}

fn visual_report(
    name: &str,
    truth: &DenseTensor,
    done: &Completion,
    mask: &ObservationMask,
    seed: u64,
) -> CliResult<MetricReport> {
    Ok(MetricReport {
        dataset: name.into(),
        missing_ratio: 1.0 - mask.observed_fraction(),
        rre: rre(truth, &done.completed)?,
        psnr: psnr(truth, &done.completed, 1.0)?,
        ssim: Some(ssim(truth, &done.completed)?),
        seconds: done.seconds,
        seed,
    })
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Shared body of `inpaint` and `video`: `images` are the frames (one for
/// an image), `truths` the optional clean references.
#[allow(clippy::too_many_arguments)]
fn complete_visual(
    name: &str,
    images: &[DenseTensor],
    truths: Option<Vec<DenseTensor>>,
    m: &MaskArgs,
    sampler: &SamplerArgs,
    out: &Path,
    io: &mut Io,
) -> CliResult<GibbsConfig> {
    let y = if images.len() == 1 {
        images[0].clone()
    } else {
        imageio::stack_frames(images)?
    };
    let missing = missing_pixels(m, images, sampler.seed, io)?;
    let mask = imageio::pixel_mask(y.shape(), &missing)?;
    check_mask(&y, &mask)?;
    let truth = match truths {
        Some(t) if t.len() == 1 => Some(t[0].clone()),
        Some(t) => Some(imageio::stack_frames(&t)?),
        None => None,
    };
    if let Some(t) = &truth {
        if t.shape() != y.shape() {
            return Err(CliError::Input(format!(
                "reference shape {:?} differs from {:?}",
                t.dims(),
                y.dims()
            )));
        }
    }
    let config = sampler.config(y.shape().order(), VISUAL_RANK_INIT)?;
    let done = run_completion(&y, &mask, &config, truth.as_ref(), 1, out, sampler.trace.as_deref(), io)?;
    let observed = imageio::masked(&y, &mask)?;
    if images.len() == 1 {
        imageio::save_image(&io.output(out.join("completed.png")), &done.completed)?;
        imageio::save_image(&io.output(out.join("observed.png")), &observed)?;
    } else {
        for (dir, tensor) in [("frames", &done.completed), ("observed", &observed)] {
            let dir = out.join(dir);
            create_dir(&dir)?;
            for t in 0..images.len() {
                let path = io.output(dir.join(format!("frame_{t:04}.png")));
                imageio::save_image(&path, &imageio::frame(tensor, t)?)?;
            }
        }
    }
    if let Some(t) = &truth {
        let report = visual_report(name, t, &done, &mask, config.seed)?;
        print_metrics(&report);
        write_metrics(&io.output(out.join("metrics.csv")), &report)?;
    }
    Ok(config)
}

fn inpaint(a: &InpaintArgs) -> CliResult<(GibbsConfig, Io)> {
    let mut io = Io::default();
    let img = imageio::load_image(&a.input)?;
    io.inputs.push(a.input.clone());
    let truths = match &a.truth {
        Some(path) => {
            io.inputs.push(path.clone());
            Some(vec![imageio::load_image(path)?])
        }
        None if a.mask.marker.is_none() => Some(vec![img.clone()]),
        None => None,
    };
    let config = complete_visual(&stem(&a.input), &[img], truths, &a.mask, &a.sampler, &a.out, &mut io)?;
    Ok((config, io))
}

fn video(a: &VideoArgs) -> CliResult<(GibbsConfig, Io)> {
    let mut io = Io::default();
    let files = imageio::list_frames(&a.frames)?;
    let frames = files
        .iter()
        .map(|f| imageio::load_image(f))
        .collect::<CliResult<Vec<_>>>()?;
    io.inputs.extend(files);
    let truths = match &a.truth {
        Some(dir) => {
            let files = imageio::list_frames(dir)?;
            let t = files
                .iter()
                .map(|f| imageio::load_image(f))
                .collect::<CliResult<Vec<_>>>()?;
            io.inputs.extend(files);
            Some(t)
        }
        None if a.mask.marker.is_none() => Some(frames.clone()),
        None => None,
    };
    let config = complete_visual(&stem(&a.frames), &frames, truths, &a.mask, &a.sampler, &a.out, &mut io)?;
    Ok((config, io))
}

/// `args` with any `--out` value replaced by `out`.
fn replace_out(args: &[String], out: &Path) -> Vec<String> {
    let mut result = Vec::with_capacity(args.len() + 2);
    let mut skip = false;
    for arg in args {
        if skip {
            skip = false;
            continue;
        }
        if arg == "--out" {
            skip = true;
            continue;
        }
        if arg.starts_with("--out=") {
            continue;
        }
        result.push(arg.clone());
    }
    result.push("--out".into());
    result.push(out.to_string_lossy().into_owned());
    result
}

fn replay(a: &ReplayArgs) -> CliResult<()> {
    let manifest = RunManifest::read(&a.manifest)?;
    manifest.verify_inputs()?;
    let mut args = manifest.args.clone();
    if let Some(out) = &a.out {
        let here = std::env::current_dir().map_err(|e| CliError::Runtime(e.to_string()))?;
        args = replace_out(&args, &here.join(out));
    }
    std::env::set_current_dir(&manifest.cwd).map_err(|e| CliError::input(manifest.cwd.display(), e))?;
    let cli = crate::parse(&args).map_err(|e| CliError::Input(format!("recorded arguments: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(CliError::Input("manifest records a replay".into()));
    }
    dispatch(cli, &args)
}
