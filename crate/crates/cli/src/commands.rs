use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use multiscan::accumulate::AccumMode;
use multiscan::downsample::{preprocess_sequence, FrameStats};
use multiscan::evaluate::{evaluate_sequence, voxel_distribution, EvalPaths, RangeReport, VoxelDistribution};
use multiscan::postproc::{postprocess_sequence, PostprocessPaths, DEFAULT_BOUNDARY};
use multiscan::seqio::{self, load_masks, load_sequence, MovingMask, SequenceManifest};
use multiscan::synth::{self, LabelerSpec, SceneSpec};
use rayon::prelude::*;
use tracing::info;

use crate::profile::{Overrides, Profile, Settings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Kv,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Sequence directory or manifest file.
    #[arg(long)]
    pub input: PathBuf,
    /// Output root; frames go to `<out>/<seq>/{points,labels,prov}`.
    #[arg(long)]
    pub out: PathBuf,
    /// Sequence name under `--out`; defaults to the input directory name.
    #[arg(long)]
    pub seq: Option<String>,
    /// Carry ground-truth labels onto fused points and write frame labels.
    #[arg(long)]
    pub training: bool,
    #[command(flatten)]
    pub settings: Overrides,
}

fn sequence_name(input: &Path) -> String {
    let dir = if input.is_dir() { Some(input) } else { input.parent() };
    dir.and_then(|d| d.canonicalize().ok())
        .and_then(|d| d.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "sequence".into())
}

pub fn preprocess(args: &PreprocessArgs) -> Result<Vec<FrameStats>> {
    let manifest = SequenceManifest::open(&args.input)?;
    let settings = Settings::resolve(&args.settings, manifest.profile.as_deref())?;
    info!(profile = %settings.profile.name, mode = ?settings.mode, seed = settings.seed, "preprocessing");
    let scans = load_sequence(&manifest)?;
    let has_labels = scans.iter().all(|s| s.labels.is_some());
    if args.training && !has_labels {
        bail!("--training needs ground-truth labels, but the sequence has none");
    }
    let masks = match load_masks(&manifest, &scans)? {
        Some(m) => Some(m),
        None if settings.mode == AccumMode::NonSmearing && has_labels && !settings.profile.moving_classes.is_empty() => {
            info!("deriving moving masks from labels");
            let moving = &settings.profile.moving_classes;
            Some(
                scans
                    .iter()
                    .map(|s| MovingMask::from_labels(s.labels.as_deref().unwrap_or_default(), moving))
                    .collect(),
            )
        }
        None => None,
    };
    let seq = args.seq.clone().unwrap_or_else(|| sequence_name(&args.input));
    let out = args.out.join(seq);
    let stats = preprocess_sequence(&scans, masks.as_deref(), &settings.preprocess_config(args.training), &out)?;
    let worst = stats.iter().map(|s| s.voxel_count).max().unwrap_or(0);
    println!("frames={} max_voxels={} out={}", stats.len(), worst, out.display());
    Ok(stats)
}

#[derive(Debug, Args)]
pub struct PostprocessArgs {
    /// Single-scan predictions, one file per scan.
    #[arg(long)]
    pub single: PathBuf,
    /// Multi-scan predictions, one file per frame.
    #[arg(long)]
    pub multi: PathBuf,
    /// Provenance sidecars of the frames.
    #[arg(long)]
    pub prov: PathBuf,
    /// Frame point files; defaults to `points/` next to `--prov`.
    #[arg(long)]
    pub points: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Radius below which reference points take the single-scan label.
    #[arg(long, default_value_t = DEFAULT_BOUNDARY)]
    pub boundary: f64,
}

pub fn postprocess(args: &PostprocessArgs) -> Result<()> {
    if !args.prov.is_dir() {
        bail!("provenance directory {} not found", args.prov.display());
    }
    let points = match &args.points {
        Some(p) => p.clone(),
        None => args
            .prov
            .parent()
            .map(|p| p.join(multiscan::downsample::POINTS_DIR))
            .context("cannot derive the points directory from --prov; pass --points")?,
    };
    let paths = PostprocessPaths {
        single: args.single.clone(),
        multi: args.multi.clone(),
        prov: args.prov.clone(),
        points,
        out: args.out.clone(),
    };
    let summary = postprocess_sequence(&paths, args.boundary)?;
    info!(frames = summary.frames, points = summary.points, observations = summary.observations, "voting done");
    println!("frames={} points={} observations={}", summary.frames, summary.points, summary.observations);
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Ground-truth labels of the original scans.
    #[arg(long)]
    pub gt: PathBuf,
    /// Original scan point files.
    #[arg(long)]
    pub points: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    /// Treat `--pred` as multi-scan frame predictions with these sidecars.
    #[arg(long)]
    pub prov: Option<PathBuf>,
    /// Leave out points beyond this radius.
    #[arg(long)]
    pub max_range: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub settings: Overrides,
}

pub fn evaluate(args: &EvaluateArgs) -> Result<RangeReport> {
    let settings = Settings::resolve(&args.settings, None)?;
    let config = settings.profile.eval_config();
    let paths = EvalPaths {
        gt: args.gt.clone(),
        points: args.points.clone(),
        pred: args.pred.clone(),
        prov: args.prov.clone(),
    };
    let conf = evaluate_sequence(&paths, &config, args.max_range)?;
    let report = RangeReport::from_confusion(&conf, &config);
    let names = settings.profile.name_refs();
    let text = match args.format {
        Format::Table => report.to_table(names.as_deref()),
        Format::Kv => report.to_kv(names.as_deref()),
    };
    emit(args.out.as_deref(), &text)?;
    Ok(report)
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Directory of `.bin` point files.
    #[arg(long)]
    pub points: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub settings: Overrides,
}

/// Per-range voxel shares, averaged over files.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsReport {
    pub files: usize,
    pub pooled: VoxelDistribution,
    pub mean_shares: [f64; 3],
}

impl StatsReport {
    pub fn to_kv(&self) -> String {
        let [c, m, f] = self.mean_shares;
        let [pc, pm, pf] = self.pooled.counts;
        format!(
            "files={}\nvoxels={}\nclose.voxels={pc}\nmedium.voxels={pm}\nfar.voxels={pf}\nclose.share={c:.4}\nmedium.share={m:.4}\nfar.share={f:.4}\n",
            self.files,
            self.pooled.total()
        )
    }
}

pub fn stats(args: &StatsArgs) -> Result<StatsReport> {
    let settings = Settings::resolve(&args.settings, None)?;
    let size = settings.profile.voxel_size;
    let files = seqio::list_files(&args.points, "bin")?;
    let per_file: Vec<VoxelDistribution> = files
        .par_iter()
        .map(|f| Ok(voxel_distribution(&seqio::read_points(f)?, size)?))
        .collect::<Result<_>>()?;
    let mut pooled = VoxelDistribution::default();
    let mut mean_shares = [0.0; 3];
    for d in &per_file {
        pooled.add(d);
        for (m, s) in mean_shares.iter_mut().zip(d.shares()) {
            *m += s / per_file.len() as f64;
        }
    }
    let report = StatsReport {
        files: files.len(),
        pooled,
        mean_shares,
    };
    emit(args.out.as_deref(), &report.to_kv())?;
    Ok(report)
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene description (TOML); defaults to the built-in street scene.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of scans (overrides the scene file).
    #[arg(long)]
    pub scans: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn synth(args: &SynthArgs) -> Result<SceneSpec> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SceneSpec::street(0, 40),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(n) = args.scans {
        spec.trajectory.scans = n;
    }
    synth::generate_sequence(&spec, &args.out)?;
    info!(scans = spec.trajectory.scans, out = %args.out.display(), "synthetic sequence written");
    Ok(spec)
}

#[derive(Debug, Args)]
pub struct MockPredictArgs {
    /// Directory of `.bin` point files to label.
    #[arg(long)]
    pub points: PathBuf,
    /// Ground-truth labels matching `--points` by file name.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.95)]
    pub p_close: f64,
    #[arg(long, default_value_t = 0.8)]
    pub p_medium: f64,
    #[arg(long, default_value_t = 0.55)]
    pub p_far: f64,
    /// Profile whose classes the wrong labels are drawn from.
    #[arg(long, default_value = crate::profile::DEFAULT_PROFILE)]
    pub profile: String,
    #[arg(long)]
    pub class_count: Option<u16>,
}

pub fn mock_predict(args: &MockPredictArgs) -> Result<usize> {
    let mut profile = Profile::builtin(&args.profile)?;
    if let Some(c) = args.class_count {
        profile.class_count = c;
    }
    let classes = profile.classes();
    let spec = LabelerSpec {
        p_close: args.p_close,
        p_medium: args.p_medium,
        p_far: args.p_far,
        seed: args.seed,
    };
    spec.validate()?;
    let files = seqio::list_files(&args.points, "bin")?;
    files.par_iter().enumerate().try_for_each(|(i, path)| -> Result<()> {
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let points = seqio::read_points(path)?;
        let gt = seqio::read_labels(args.labels.join(format!("{stem}.label")))?;
        let radii: Vec<f64> = points.iter().map(multiscan::geom::radius).collect();
        let stream = seqio::parse_frame_name(path).map_or(i as u64, u64::from);
        let pred = synth::mock_predict(&gt, &radii, &spec, &classes, stream)?;
        seqio::write_labels(args.out.join(format!("{stem}.label")), &pred)?;
        Ok(())
    })?;
    Ok(files.len())
}
