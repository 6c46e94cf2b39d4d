use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use favs_core::fixtures::{gen_scene, stage_name, AnyTensor, Motion, SceneSpec, TensorFile, Texture};
use favs_core::pipeline::{frame_counts, ModelConfig, ModelParams, Pipeline, PipelineOutput, RouterInit};
use favs_core::scmc::RoutingDecision;
use favs_core::spectral::{self, residual_decompose, ThresholdLadder};
use favs_core::{ComplexTensor, RealTensor};

use crate::output::{self, num, write_csv, write_text};
use crate::{CliError, CliResult, CommandResult};

const BAND_NAMES: [&str; 4] = ["high", "mid", "low", "residual"];

fn say(out: &mut dyn Write, line: impl AsRef<str>) -> CliResult<()> {
    writeln!(out, "{}", line.as_ref()).map_err(|e| CliError::io("cannot write to stdout", e))
}

fn read_ften(path: &Path) -> CliResult<TensorFile> {
    TensorFile::read(path).map_err(|e| CliError::core(format!("cannot load {}", path.display()), e))
}

fn write_ften(file: &TensorFile, path: &Path) -> CliResult<PathBuf> {
    file.write(path)
        .map_err(|e| CliError::core(format!("cannot write {}", path.display()), e))?;
    Ok(path.to_path_buf())
}

fn real<'a>(file: &'a TensorFile, name: &str, path: &Path) -> CliResult<&'a RealTensor> {
    file.real(name)
        .map_err(|e| CliError::core(format!("{}", path.display()), e))
}

fn manifest_path(out: &Path) -> PathBuf {
    out.with_extension("manifest")
}

#[derive(Debug, Clone, Args)]
pub struct GenFixtureArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub frames: usize,
    /// Frame height and width; a power of two, at least 32.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value = "checkerboard")]
    pub texture: Texture,
    #[arg(long, default_value = "linear")]
    pub motion: Motion,
    /// Width of the derived stage and audio features.
    #[arg(long, default_value_t = 32)]
    pub channels: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_gen_fixture(args: &GenFixtureArgs, out: &mut dyn Write) -> CliResult<CommandResult> {
    let spec = SceneSpec::new(
        args.seed,
        args.frames,
        args.size,
        args.channels,
        args.texture,
        args.motion,
    );
    let scene = gen_scene(spec).map_err(|e| CliError::core("invalid fixture parameters", e))?;
    let file = scene.to_ften().map_err(|e| CliError::core("fixture", e))?;
    let mut artifacts = vec![write_ften(&file, &args.out)?];
    artifacts.push(write_text(&manifest_path(&args.out), &scene.manifest())?);
    say(out, format!("wrote {} ({} tensors)", args.out.display(), file.len()))?;
    Ok(CommandResult::ok(artifacts))
}

#[derive(Debug, Clone, Args)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Four comma-separated thresholds.
    #[arg(long, default_value = "1.0,0.6,0.3,0.1")]
    pub tau: String,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Tensor to decompose; its last two axes are the spatial plane.
    #[arg(long, default_value = "frames")]
    pub tensor: String,
    /// `[T, H, W]` mask used for the object/background density split.
    #[arg(long, default_value = "gt_masks")]
    pub mask: String,
}

/// Object and background mean high-band energy per pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Density {
    pub object_pixels: usize,
    pub background_pixels: usize,
    pub object: f64,
    pub background: f64,
}

impl Density {
    pub fn ratio(&self) -> f64 {
        self.object / self.background
    }
}

/// Spatial energy of the high band, summed over channels, split by `mask`.
pub fn high_band_density(high: &ComplexTensor, mask: &RealTensor) -> favs_core::Result<Density> {
    let (t, c, h, w) = high.dims4("high_band_density")?;
    if mask.shape() != [t, h, w] {
        return Err(favs_core::Error::ShapeMismatch {
            op: "high_band_density",
            left: high.shape().into(),
            right: mask.shape().into(),
        });
    }
    let spatial = spectral::ifft2(high)?;
    let plane = h * w;
    let (mut eo, mut eb, mut no, mut nb) = (0.0, 0.0, 0usize, 0usize);
    for f in 0..t {
        for i in 0..plane {
            let e: f64 = (0..c)
                .map(|ch| spatial.data()[(f * c + ch) * plane + i].re.powi(2))
                .sum();
            if mask.data()[f * plane + i] > 0.5 {
                eo += e;
                no += 1;
            } else {
                eb += e;
                nb += 1;
            }
        }
    }
    let mean = |e: f64, n: usize| if n == 0 { 0.0 } else { e / n as f64 };
    Ok(Density {
        object_pixels: no,
        background_pixels: nb,
        object: mean(eo, no),
        background: mean(eb, nb),
    })
}

fn band_heatmap(band: &ComplexTensor, path: &Path) -> CliResult<PathBuf> {
    let shape = band.shape();
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let planes = band.len() / (h * w).max(1);
    let mut power = vec![0.0; h * w];
    for plane in band.data().chunks(h * w) {
        power.iter_mut().zip(plane).for_each(|(p, z)| *p += z.norm_sqr());
    }
    let mags: Vec<f64> = power.iter().map(|p| (p / planes as f64).sqrt()).collect();
    write_text(
        path,
        &output::pgm_string(&output::log_magnitude_display(&mags, h, w), h, w),
    )
}

pub fn cmd_decompose(args: &DecomposeArgs, out: &mut dyn Write) -> CliResult<CommandResult> {
    let ladder = ThresholdLadder::parse(&args.tau).map_err(|e| CliError::core("--tau", e))?;
    let file = read_ften(&args.input)?;
    let spectrum = match file.get(&args.tensor) {
        Some(AnyTensor::Real(t)) if t.rank() >= 2 => spectral::fft2(t),
        Some(AnyTensor::Complex(t)) if t.shape().len() >= 2 => spectral::fft2_complex(t),
        Some(t) => {
            return Err(CliError::Validation(format!(
                "tensor {:?} has shape {:?}; at least two axes are needed",
                args.tensor,
                t.shape()
            )))
        }
        None => {
            return Err(CliError::Validation(format!(
                "{} has no tensor named {:?}",
                args.input.display(),
                args.tensor
            )))
        }
    }
    .map_err(|e| CliError::core("fft2", e))?;
    let bands = residual_decompose(&spectrum, &ladder).map_err(|e| CliError::core("decompose", e))?;
    output::ensure_dir(&args.out_dir)?;

    let mut artifacts = vec![band_heatmap(&spectrum, &args.out_dir.join("spectrum.pgm"))?];
    for (name, band) in BAND_NAMES.iter().zip(bands.bands()) {
        artifacts.push(band_heatmap(band, &args.out_dir.join(format!("band_{name}.pgm")))?);
    }

    let total = spectral::band_energy(&spectrum);
    let energies = bands.energies();
    let rows: Vec<Vec<String>> = BAND_NAMES
        .iter()
        .zip(energies)
        .map(|(name, e)| {
            let share = if total > 0.0 { e / total } else { 0.0 };
            vec![name.to_string(), num(e), num(share)]
        })
        .collect();
    let header = ["band", "energy", "fraction"].map(String::from);
    artifacts.push(write_csv(&args.out_dir.join("band_energies.csv"), &header, &rows)?);

    let exact = bands.recombine().bit_eq(&spectrum);
    let sum: f64 = energies.iter().sum();
    let rel = if total > 0.0 {
        (sum - total).abs() / total
    } else {
        sum.abs()
    };
    say(out, format!("ladder {ladder}"))?;
    for (name, e) in BAND_NAMES.iter().zip(energies) {
        let share = if total > 0.0 { e / total } else { 0.0 };
        say(out, format!("{name:>8}: {:6.2}%  {}", 100.0 * share, num(e)))?;
    }
    say(
        out,
        format!("total energy {} (band sum relative error {rel:.3e})", num(total)),
    )?;
    say(
        out,
        format!(
            "partition check: {}",
            if exact { "exact (bit-identical)" } else { "FAILED" }
        ),
    )?;

    match file.get(&args.mask) {
        Some(AnyTensor::Real(mask)) if spectrum.shape().len() == 4 => {
            let d = high_band_density(&bands.high, mask).map_err(|e| CliError::core("density", e))?;
            let header = [
                "object_pixels",
                "background_pixels",
                "object_density",
                "background_density",
                "ratio",
            ]
            .map(String::from);
            let row = vec![
                d.object_pixels.to_string(),
                d.background_pixels.to_string(),
                num(d.object),
                num(d.background),
                num(d.ratio()),
            ];
            artifacts.push(write_csv(&args.out_dir.join("density.csv"), &header, &[row])?);
            say(out, format!("high-band density object/background: {}", num(d.ratio())))?;
        }
        _ => log::info!("no {:?} mask for a [T, C, H, W] tensor; density skipped", args.mask),
    }

    if !exact || rel > 1e-9 {
        return Err(CliError::Validation("band partition is not exact".into()));
    }
    Ok(CommandResult::ok(artifacts))
}

#[derive(Debug, Clone, Args)]
pub struct InitParamsArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "random")]
    pub router: RouterInit,
}

fn load_config(path: &Path) -> CliResult<ModelConfig> {
    let text = output::read_text(path)?;
    ModelConfig::parse(&text).map_err(|e| CliError::core(format!("{}", path.display()), e))
}

pub fn cmd_init_params(args: &InitParamsArgs, out: &mut dyn Write) -> CliResult<CommandResult> {
    let cfg = load_config(&args.config)?;
    let params = ModelParams::init(&cfg, args.router).map_err(|e| CliError::core("init", e))?;
    let file = params.to_ften().map_err(|e| CliError::core("params", e))?;
    let path = write_ften(&file, &args.out)?;
    say(out, format!("wrote {} ({} tensors)", path.display(), file.len()))?;
    Ok(CommandResult::ok(vec![path]))
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub fixture: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Score the ground-truth masks instead of the prediction.
    #[arg(long)]
    pub oracle_mask: bool,
}

struct Loaded {
    pipeline: Pipeline,
    features: Vec<RealTensor>,
    audio: RealTensor,
    gt: RealTensor,
}

impl Loaded {
    fn run(&self) -> CliResult<PipelineOutput> {
        self.pipeline
            .run_features(&self.features, &self.audio)
            .map_err(|e| CliError::core("pipeline", e))
    }
}

/// Loads and cross-checks config, parameters and fixture before any compute.
fn load(config: &Path, params: &Path, fixture: &Path) -> CliResult<Loaded> {
    let cfg = load_config(config)?;
    let pfile = read_ften(params)?;
    let p = ModelParams::from_ften(&pfile, &cfg)
        .map_err(|e| CliError::core(format!("{} does not match {}", params.display(), config.display()), e))?;
    let fx = read_ften(fixture)?;
    let gt = real(&fx, "gt_masks", fixture)?.clone();
    if gt.shape()[1..] != [cfg.height, cfg.width] {
        return Err(CliError::Validation(format!(
            "fixture masks are {:?}, config expects {}x{}",
            gt.shape(),
            cfg.height,
            cfg.width
        )));
    }
    let features = (1..=cfg.stages)
        .map(|i| real(&fx, &stage_name(i), fixture).cloned())
        .collect::<CliResult<Vec<_>>>()?;
    let audio = real(&fx, "audio_features", fixture)?.clone();
    for (i, f) in features.iter().enumerate() {
        let (h, w) = cfg.stage_resolution(i + 1);
        if f.rank() != 4 || f.shape()[1..] != [cfg.channels, h, w] || f.shape()[0] != gt.shape()[0] {
            return Err(CliError::Validation(format!(
                "fixture {} has shape {:?}, config expects [{}, {}, {h}, {w}]",
                stage_name(i + 1),
                f.shape(),
                gt.shape()[0],
                cfg.channels
            )));
        }
    }
    if audio.rank() != 4 || audio.shape()[1] != cfg.channels {
        return Err(CliError::Validation(format!(
            "fixture audio_features has shape {:?}, config expects {} channels",
            audio.shape(),
            cfg.channels
        )));
    }
    let pipeline = Pipeline::new(cfg, p).map_err(|e| CliError::core("parameters", e))?;
    Ok(Loaded {
        pipeline,
        features,
        audio,
        gt,
    })
}

fn routing_header(ne: usize, prefix: &[&str]) -> Vec<String> {
    let mut h: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
    h.extend(["entropy_v", "k_eff_v", "entropy_a", "k_eff_a"].map(String::from));
    h.extend((0..ne).map(|e| format!("w_v{e}")));
    h.extend((0..ne).map(|e| format!("w_a{e}")));
    h
}

fn routing_row(f: usize, rv: &RoutingDecision, ra: &RoutingDecision, prefix: Vec<String>) -> Vec<String> {
    let mut row = prefix;
    row.extend([
        num(rv.entropy[f]),
        rv.k_eff[f].to_string(),
        num(ra.entropy[f]),
        ra.k_eff[f].to_string(),
    ]);
    row.extend(rv.dense_row(f).iter().map(|&w| num(w)));
    row.extend(ra.dense_row(f).iter().map(|&w| num(w)));
    row
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> CliResult<CommandResult> {
    let loaded = load(&args.config, &args.params, &args.fixture)?;
    let result = loaded.run()?;
    output::ensure_dir(&args.out)?;
    let pred = &result.prediction;
    let mask = if args.oracle_mask {
        loaded.gt.clone()
    } else {
        pred.binary_mask.clone()
    };

    let mut file = TensorFile::new();
    let tensors = [
        ("mask_logits", &pred.mask_logits),
        ("class_logits", &pred.class_logits),
        ("binary_mask", &mask),
    ];
    for (name, t) in tensors {
        file.insert(name, t.clone())
            .map_err(|e| CliError::core("prediction", e))?;
    }
    let mut artifacts = vec![write_ften(&file, &args.out.join("prediction.ften"))?];

    let (t, h, w) = (mask.shape()[0], mask.shape()[1], mask.shape()[2]);
    for f in 0..t {
        let path = args.out.join(format!("mask_t{f}.pgm"));
        artifacts.push(write_text(
            &path,
            &output::pgm_string(&mask.data()[f * h * w..(f + 1) * h * w], h, w),
        )?);
    }

    let counts = frame_counts(&mask, &loaded.gt).map_err(|e| CliError::core("metrics", e))?;
    let mut rows: Vec<Vec<String>> = counts
        .iter()
        .enumerate()
        .map(|(f, c)| vec![f.to_string(), num(c.jaccard()), num(c.fscore())])
        .collect();
    let mj = counts.iter().map(|c| c.jaccard()).sum::<f64>() / counts.len() as f64;
    let mf = counts.iter().map(|c| c.fscore()).sum::<f64>() / counts.len() as f64;
    rows.push(vec!["mean".into(), num(mj), num(mf)]);
    let header = ["frame", "jaccard", "fscore"].map(String::from);
    artifacts.push(write_csv(&args.out.join("metrics.csv"), &header, &rows)?);

    let ne = loaded.pipeline.config().experts;
    for s in &result.stages {
        let rows: Vec<Vec<String>> = (0..s.routing_v.frames())
            .map(|f| routing_row(f, &s.routing_v, &s.routing_a, vec![f.to_string()]))
            .collect();
        let path = args.out.join(format!("routing_stage{}.csv", s.index));
        artifacts.push(write_csv(&path, &routing_header(ne, &["frame"]), &rows)?);
    }

    for s in &result.stages {
        say(
            out,
            format!(
                "stage {}: visual {:?}, audio {:?}",
                s.index,
                s.v_feat.shape(),
                s.a_feat.shape()
            ),
        )?;
    }
    say(out, format!("M_J={} M_F={}", num(mj), num(mf)))?;
    Ok(CommandResult::ok(artifacts))
}

#[derive(Debug, Clone, Args)]
pub struct RouteStatsArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub fixture: PathBuf,
    /// CSV destination.
    #[arg(long, default_value = "route_stats.csv")]
    pub out: PathBuf,
}

/// Mean sparse weight per expert across frames.
pub fn utilization(r: &RoutingDecision) -> Vec<f64> {
    let (t, ne) = (r.frames(), r.experts());
    (0..ne)
        .map(|e| (0..t).map(|f| r.sparse_row(f)[e]).sum::<f64>() / t.max(1) as f64)
        .collect()
}

pub fn cmd_route_stats(args: &RouteStatsArgs, out: &mut dyn Write) -> CliResult<CommandResult> {
    let loaded = load(&args.config, &args.params, &args.fixture)?;
    let result = loaded.run()?;
    let ne = loaded.pipeline.config().experts;
    let mut rows = Vec::new();
    for s in &result.stages {
        say(out, format!("stage {}", s.index))?;
        for (tag, r) in [("visual", &s.routing_v), ("audio", &s.routing_a)] {
            let ent = &r.entropy;
            let mean = ent.iter().sum::<f64>() / ent.len() as f64;
            let min = ent.iter().copied().fold(f64::INFINITY, f64::min);
            let max = ent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let kmean = r.k_eff.iter().sum::<usize>() as f64 / r.k_eff.len() as f64;
            say(
                out,
                format!("  {tag}: entropy mean {mean:.4} min {min:.4} max {max:.4}, mean k_eff {kmean:.2}"),
            )?;
            for (e, u) in utilization(r).iter().enumerate() {
                say(out, format!("    expert {e} {} {u:.4}", output::histogram_bar(*u, 40)))?;
            }
        }
        for f in 0..s.routing_v.frames() {
            rows.push(routing_row(
                f,
                &s.routing_v,
                &s.routing_a,
                vec![s.index.to_string(), f.to_string()],
            ));
        }
    }
    let path = write_csv(&args.out, &routing_header(ne, &["stage", "frame"]), &rows)?;
    Ok(CommandResult::ok(vec![path]))
}
