//! The `bkws` command-line front end.
//!
//! Every verb reads and writes plain files (WAV, JSON, CSV, `BKT1` tensors)
//! and prints a short JSON summary on stdout. Exit codes: 0 on success, 1 on
//! usage or validation errors, 2 on I/O errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::error::{Error, Result};
use crate::fusion::{
    fuse_forward, golden_inputs, golden_params, grad_check, FuseForwardProbe, FusionBranch, FusionTrace,
    GradCheckReport,
};
use crate::geometry::{majority_region, region_center_angle, ArrayGeometry, BeamGrid, RoiTrack};
use crate::io::{read_wav, write_wav, TensorFile, WavEncoding};
use crate::masks::{load_mask, oracle_irm, save_mask, IrmForm, MaskKind};
use crate::mvdr::{enhance, MvdrConfig};
use crate::scoring::{best_operating_point, score, sweep, write_sweep_csv, LabeledScores, ScoreReport};
use crate::simulator::{si_snr_slices, simulate, SceneSpec};
use crate::spatial::{angle_feature, assemble_input, mean_over_top_energy, PairSet};
use crate::stft::{magnitude, stft, StftConfig, Waveform};

/// Frozen trace of the golden fusion configuration.
pub const GOLDEN_TRACE: &[u8] = include_bytes!("../data/golden_fusion_trace.bkt");
pub const GOLDEN_TOLERANCE: f64 = 1e-10;
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(
    name = "bkws",
    version,
    about = "Lip-guided multichannel front end, fusion checks and wake-word scoring"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a multichannel scene to WAV files.
    Simulate(SimulateArgs),
    /// Compute magnitude + angle features for the lip-selected beam region.
    Features(FeaturesArgs),
    /// Mask-based MVDR enhancement.
    Enhance(EnhanceArgs),
    /// Oracle ideal ratio masks from clean and noise images.
    OracleMasks(OracleMasksArgs),
    /// Golden-trace and finite-difference checks of the fusion model.
    FusionCheck(FusionCheckArgs),
    /// FRR / FAR / score of a labelled score file.
    Score(ScoreArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scene JSON; `default` uses the built-in scene.
    pub scene: String,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Overrides the scene seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub wav: PathBuf,
    #[arg(long)]
    pub geometry: PathBuf,
    /// Per-frame lip boxes; the majority region picks the steering angle.
    #[arg(long)]
    pub roi: PathBuf,
    /// Steering angle in degrees, overriding the ROI region.
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<f64>,
    /// Fraction of highest-energy bins used for the reported mean AF.
    #[arg(long, default_value_t = 0.1)]
    pub top_fraction: f64,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub wav: PathBuf,
    #[arg(long)]
    pub geometry: PathBuf,
    #[arg(long)]
    pub speech_mask: PathBuf,
    #[arg(long)]
    pub noise_mask: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Also write the per-bin weights (`bins × channels × [re, im]`).
    #[arg(long)]
    pub emit_weights: Option<PathBuf>,
    /// Clean target image; when given, SI-SNR before and after is reported.
    #[arg(long)]
    pub reference_clean: Option<PathBuf>,
    #[arg(long, default_value_t = crate::mvdr::DEFAULT_DIAGONAL_LOADING)]
    pub diagonal_loading: f64,
}

#[derive(Debug, Args)]
pub struct OracleMasksArgs {
    #[arg(long)]
    pub mix: PathBuf,
    #[arg(long)]
    pub clean: PathBuf,
    #[arg(long)]
    pub noise: PathBuf,
    /// Output prefix; writes `<prefix>.speech.bkt` and `<prefix>.noise.bkt`.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Microphone number (1-based) the masks are computed on.
    #[arg(long, default_value_t = 1)]
    pub channel: usize,
    #[arg(long, value_enum, default_value_t = IrmFormArg::Magnitude)]
    pub form: IrmFormArg,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum IrmFormArg {
    Magnitude,
    SqrtEnergy,
}

#[derive(Debug, Args)]
pub struct FusionCheckArgs {
    /// Trace file to compare against; defaults to the built-in frozen trace.
    #[arg(long)]
    pub golden: Option<PathBuf>,
    /// Run the finite-difference gradient check of the full model.
    #[arg(long)]
    pub grad: bool,
    #[arg(long, default_value_t = 20)]
    pub probes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the trace of the golden configuration.
    #[arg(long)]
    pub emit_trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// CSV with header `id,label,score`, label `wake` or `non-wake`.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, conflicts_with = "sweep")]
    pub threshold: Option<f64>,
    /// Evaluate every distinct threshold; the table goes to `<report>.sweep.csv`.
    #[arg(long)]
    pub sweep: bool,
    #[arg(short, long)]
    pub out: PathBuf,
}

/// Parses `argv` and runs the verb, printing to stdout / stderr. Returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match execute(cli.command, &mut out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("bkws: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    let summary = match command {
        Command::Simulate(a) => cmd_simulate(&a)?,
        Command::Features(a) => cmd_features(&a)?,
        Command::Enhance(a) => cmd_enhance(&a)?,
        Command::OracleMasks(a) => cmd_oracle_masks(&a)?,
        Command::FusionCheck(a) => {
            let (report, passed) = cmd_fusion_check(&a)?;
            print_json(out, &report)?;
            if !passed {
                return Err(Error::Validation("fusion check failed".into()));
            }
            return Ok(());
        }
        Command::Score(a) => cmd_score(&a)?,
    };
    print_json(out, &summary)
}

fn print_json(out: &mut dyn Write, v: &serde_json::Value) -> Result<()> {
    writeln!(out, "{}", serde_json::to_string_pretty(v)?)?;
    Ok(())
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<serde_json::Value> {
    let mut scene = if a.scene == "default" {
        SceneSpec::default_scene()
    } else {
        SceneSpec::from_json_file(&a.scene)?
    };
    if let Some(seed) = a.seed {
        scene.seed = seed;
    }
    let sim = simulate(&scene)?;
    fs::create_dir_all(&a.out)?;
    let enc = WavEncoding::Float32;
    let mut files = vec!["mix.wav", "target.wav", "noise.wav", "noise_image.wav", "geometry.json"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    write_wav(a.out.join("mix.wav"), &sim.mixture, enc)?;
    write_wav(a.out.join("target.wav"), &sim.source_images[0], enc)?;
    write_wav(a.out.join("noise.wav"), &sim.interference()?, enc)?;
    write_wav(a.out.join("noise_image.wav"), &sim.noise_image, enc)?;
    for (k, img) in sim.source_images.iter().enumerate() {
        let name = format!("source_{k}.wav");
        write_wav(a.out.join(&name), img, enc)?;
        files.push(name);
    }
    let geometry = sim.geometry.to_json_file();
    write_json(&a.out.join("geometry.json"), &serde_json::to_value(&geometry)?)?;
    let meta = json!({
        "sample_rate": sim.mixture.sample_rate(),
        "num_samples": sim.mixture.num_samples(),
        "num_channels": sim.mixture.num_channels(),
        "seed": scene.seed,
        "angles_deg": sim.angles_deg,
        "target_angle_deg": sim.angles_deg[0],
        "geometry": geometry,
        "files": files,
    });
    write_json(&a.out.join("meta.json"), &meta)?;
    Ok(meta)
}

fn cmd_features(a: &FeaturesArgs) -> Result<serde_json::Value> {
    if !(a.top_fraction > 0.0 && a.top_fraction <= 1.0) {
        return Err(Error::input("--top-fraction must be in (0, 1]"));
    }
    let wav = read_wav(&a.wav)?;
    let geom = ArrayGeometry::from_json_file(&a.geometry)?;
    let track = RoiTrack::from_json_file(&a.roi)?;
    let grid = BeamGrid::default();
    let regions = track.frame_regions(&grid)?;
    let region = majority_region(&regions).ok_or_else(|| Error::input("ROI file has no boxes"))?;
    let theta = match a.theta {
        Some(t) => t,
        None => region_center_angle(region, &grid)?,
    };
    let spec = stft(&wav, StftConfig::default_for(wav.sample_rate())?)?;
    let pairs = PairSet::default();
    pairs.validate_for(&geom)?;
    let feature = assemble_input(&spec, &geom, &pairs, theta)?;
    feature.to_tensor().write(&a.out)?;

    let energy = magnitude(&spec, geom.reference_mic())?.mapv(|m| m * m);
    let afs = angle_feature(&spec, &geom, &pairs, theta)?;
    let per_pair = afs
        .iter()
        .map(|af| mean_over_top_energy(af, &energy, a.top_fraction))
        .collect::<Result<Vec<_>>>()?;
    let mean = per_pair.iter().sum::<f64>() / per_pair.len() as f64;
    Ok(json!({
        "roi_region": region,
        "theta_deg": theta,
        "theta_source": if a.theta.is_some() { "argument" } else { "roi" },
        "frames": spec.num_frames(),
        "bins": spec.num_bins(),
        "top_fraction": a.top_fraction,
        "mean_af_per_pair": per_pair,
        "mean_af": mean,
    }))
}

fn cmd_enhance(a: &EnhanceArgs) -> Result<serde_json::Value> {
    let wav = read_wav(&a.wav)?;
    let geom = ArrayGeometry::from_json_file(&a.geometry)?;
    let mut config = MvdrConfig::default_for(wav.sample_rate())?;
    if !(a.diagonal_loading >= 0.0 && a.diagonal_loading.is_finite()) {
        return Err(Error::input("--diagonal-loading must be finite and non-negative"));
    }
    config.diagonal_loading = a.diagonal_loading;
    let shape = (config.stft.num_frames(wav.num_samples()), config.stft.num_bins());
    let speech = load_mask(&a.speech_mask, shape, MaskKind::Speech)?;
    let noise = load_mask(&a.noise_mask, shape, MaskKind::Noise)?;
    let result = enhance(&wav, &geom, &speech, &noise, &config)?;
    write_wav(&a.out, &result.waveform, WavEncoding::Float32)?;
    if let Some(path) = &a.emit_weights {
        result.weights.to_tensor().write(path)?;
    }
    let degenerate = result.weights.degenerate.iter().filter(|&&d| d).count();
    let mut summary = json!({
        "num_bins": result.weights.num_bins(),
        "num_channels": result.weights.num_channels(),
        "reference_mic": geom.reference_mic() + 1,
        "degenerate_bins": degenerate,
    });
    if let Some(path) = &a.reference_clean {
        let clean = read_wav(path)?;
        if clean.num_samples() != wav.num_samples() || clean.sample_rate() != wav.sample_rate() {
            return Err(Error::input(
                "reference clean file does not match the input length / rate",
            ));
        }
        let r = geom.reference_mic();
        let clean_ref = if clean.num_channels() == 1 {
            clean.channel(0)?
        } else {
            clean.channel(r)?
        };
        let clean_ref = clean_ref.to_vec();
        let before = si_snr_slices(&wav.channel(r)?.to_vec(), &clean_ref)?;
        let after = si_snr_slices(&result.waveform.channel(0)?.to_vec(), &clean_ref)?;
        summary["si_snr_input_db"] = json!(before);
        summary["si_snr_output_db"] = json!(after);
        summary["si_snr_improvement_db"] = json!(after - before);
    }
    Ok(summary)
}

fn check_same_layout(a: &Waveform, b: &Waveform, what: &str) -> Result<()> {
    if a.num_channels() != b.num_channels() || a.num_samples() != b.num_samples() || a.sample_rate() != b.sample_rate()
    {
        return Err(Error::input(format!(
            "{what}: {}ch/{} samples/{} Hz vs {}ch/{} samples/{} Hz",
            a.num_channels(),
            a.num_samples(),
            a.sample_rate(),
            b.num_channels(),
            b.num_samples(),
            b.sample_rate()
        )));
    }
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_oracle_masks(a: &OracleMasksArgs) -> Result<serde_json::Value> {
    let mix = read_wav(&a.mix)?;
    let clean = read_wav(&a.clean)?;
    let noise = read_wav(&a.noise)?;
    check_same_layout(&mix, &clean, "mix and clean differ")?;
    check_same_layout(&mix, &noise, "mix and noise differ")?;
    if a.channel == 0 || a.channel > mix.num_channels() {
        return Err(Error::input(format!(
            "--channel {} out of range 1..={}",
            a.channel,
            mix.num_channels()
        )));
    }
    let config = StftConfig::default_for(mix.sample_rate())?;
    let form = match a.form {
        IrmFormArg::Magnitude => IrmForm::Magnitude,
        IrmFormArg::SqrtEnergy => IrmForm::SqrtEnergy,
    };
    let (speech, noise_mask) = oracle_irm(&stft(&clean, config)?, &stft(&noise, config)?, a.channel - 1, form)?;
    let speech_path = with_suffix(&a.out, ".speech.bkt");
    let noise_path = with_suffix(&a.out, ".noise.bkt");
    save_mask(&speech, &speech_path)?;
    save_mask(&noise_mask, &noise_path)?;
    let (frames, bins) = speech.shape();
    Ok(json!({
        "frames": frames,
        "bins": bins,
        "channel": a.channel,
        "speech_mask": speech_path.file_name().map(|n| n.to_string_lossy().into_owned()),
        "noise_mask": noise_path.file_name().map(|n| n.to_string_lossy().into_owned()),
        "mean_speech_mask": speech.values().mean().unwrap_or(0.0),
    }))
}

/// Golden comparison, zero-weight residual identity and (optionally) the
/// gradient check. Returns the report and whether every check passed.
pub fn cmd_fusion_check(a: &FusionCheckArgs) -> Result<(serde_json::Value, bool)> {
    let (audio, visual) = golden_inputs();
    let params = golden_params();
    let trace = fuse_forward(&audio, &visual, &params)?;
    if let Some(path) = &a.emit_trace {
        trace.to_tensor().write(path)?;
    }
    let golden = match &a.golden {
        Some(path) => TensorFile::read(path)?,
        None => TensorFile::from_bytes(GOLDEN_TRACE)?,
    };
    let diff = trace.max_abs_diff(&FusionTrace::from_tensor(&golden)?)?;
    let golden_ok = diff <= GOLDEN_TOLERANCE;

    let mut zero = params.clone();
    let c = zero.config;
    zero.audio = FusionBranch::zeros(c.dim, c.hidden_dim, c.tokens);
    zero.visual = FusionBranch::zeros(c.dim, c.hidden_dim, c.tokens);
    let zt = fuse_forward(&audio, &visual, &zero)?;
    let residual_ok = zt.fused_audio == zt.attended_audio && zt.fused_visual == zt.attended_visual;

    let mut report = json!({
        "config": c,
        "logit": trace.logit,
        "probability": trace.probability,
        "golden": {
            "source": a.golden.as_ref().map_or("built-in".to_string(), |p| p.display().to_string()),
            "max_abs_diff": diff,
            "tolerance": GOLDEN_TOLERANCE,
            "pass": golden_ok,
        },
        "residual_identity": { "pass": residual_ok },
    });
    let mut passed = golden_ok && residual_ok;
    if a.grad {
        let probe = FuseForwardProbe {
            audio: audio.values().clone(),
            visual: visual.values().clone(),
            params,
        };
        let r: GradCheckReport = grad_check(&probe, a.probes, a.seed)?;
        let ok = r.checked.len() >= a.probes && r.passes(GRAD_TOLERANCE);
        passed &= ok;
        report["grad"] = json!({
            "probe": r.probe,
            "step": r.step,
            "checked": r.checked.len(),
            "skipped": r.skipped,
            "max_rel_error": r.max_rel_error,
            "worst": r.worst(),
            "tolerance": GRAD_TOLERANCE,
            "pass": ok,
        });
    }
    report["pass"] = json!(passed);
    Ok((report, passed))
}

fn cmd_score(a: &ScoreArgs) -> Result<serde_json::Value> {
    let scores = LabeledScores::from_csv_file(&a.input)?;
    let summary = if a.sweep {
        let points = sweep(&scores)?;
        let best = best_operating_point(&points).ok_or_else(|| Error::input("no operating points"))?;
        let csv_path = a.out.with_extension("sweep.csv");
        write_sweep_csv(&points, fs::File::create(&csv_path)?)?;
        json!({
            "best": ScoreReport::from(best),
            "best_percent": best.render_percent(),
            "num_points": points.len(),
            "sweep_csv": csv_path.file_name().map(|n| n.to_string_lossy().into_owned()),
        })
    } else {
        let p = score(&scores, a.threshold.unwrap_or(0.5))?;
        let mut v = serde_json::to_value(ScoreReport::from(p))?;
        v["percent"] = json!(p.render_percent());
        v
    };
    write_json(&a.out, &summary)?;
    Ok(summary)
}
