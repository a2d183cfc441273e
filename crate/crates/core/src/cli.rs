//! The `dlharmonize` command line: train, harmonize, alter, metrics, eval, plus
//! a phantom generator for trying the pipeline without scanner data.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::alteration::{alter_volume, make_phantom, TensorField};
use crate::config::{resolve_threads, RunConfig, THREADS_ENV};
use crate::dictionary::{batch_objective, split_holdout, Dictionary, Trainer};
use crate::error::{arg_err, Error, Result};
use crate::evaluation::{evaluate, MetricInputs};
use crate::harmonizer::{harmonize, parse_ratio, pooled_patches, Dataset, Downsample};
use crate::lasso::Selection;
use crate::metrics::{compute_all, MetricMaps};
use crate::volume::{
    load_map, load_mask, load_volume, save_map, save_mask, save_volume, BrainMask, DiffusionVolume, GradientTable, Region,
};

#[derive(Debug, Parser)]
#[command(name = "dlharmonize", version, about = "Diffusion MRI harmonization by dictionary learning")]
pub struct Cli {
    /// JSON run configuration; explicit flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: $DLH_THREADS, else all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a target dictionary from one or more datasets.
    Train(TrainArgs),
    /// Reconstruct a dataset with a fixed dictionary.
    Harmonize(HarmonizeArgs),
    /// Add free water to a region.
    Alter(AlterArgs),
    /// Write ADC, FA, RISH0 and RISH2 maps.
    Metrics(MetricsArgs),
    /// Compare metric maps and write the statistics report.
    Eval(EvalArgs),
    /// Write a synthetic phantom with gradient table and mask.
    Phantom(PhantomArgs),
}

#[derive(Debug, Args)]
pub struct PatchArgs {
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub neighbors: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// 4D volume; repeat the four dataset flags to pool several datasets.
    #[arg(long, required = true)]
    pub input: Vec<PathBuf>,
    #[arg(long, required = true)]
    pub bvals: Vec<PathBuf>,
    #[arg(long, required = true)]
    pub bvecs: Vec<PathBuf>,
    #[arg(long, required = true)]
    pub mask: Vec<PathBuf>,
    #[command(flatten)]
    pub patch: PatchArgs,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub atoms: Option<usize>,
    /// aic or cv
    #[arg(long)]
    pub select: Option<Selection>,
    /// Patches held out to report the objective with --verbose.
    #[arg(long)]
    pub holdout: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct HarmonizeArgs {
    #[arg(long)]
    pub dictionary: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub bvals: PathBuf,
    #[arg(long)]
    pub bvecs: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[command(flatten)]
    pub patch: PatchArgs,
    /// aic or cv
    #[arg(long)]
    pub select: Option<Selection>,
    /// "5/3", "1.5" or per axis "rx,ry,rz".
    #[arg(long)]
    pub upsample_ratio: Option<String>,
    /// trilinear or mean
    #[arg(long)]
    pub downsample: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AlterArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub bvals: PathBuf,
    #[arg(long)]
    pub bvecs: PathBuf,
    /// "x,y,z:sx,sy,sz" (offset and shape in voxels).
    #[arg(long)]
    pub region: Option<String>,
    #[arg(long)]
    pub f_low: Option<f64>,
    #[arg(long)]
    pub f_high: Option<f64>,
    #[arg(long)]
    pub d_csf: Option<f64>,
    /// Output volume; the JSON sidecar goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub bvals: PathBuf,
    #[arg(long)]
    pub bvecs: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub sh_order: Option<usize>,
    /// Maps are written as <prefix>_adc.nii.gz and so on.
    #[arg(long)]
    pub out_prefix: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Map from the harmonized data; repeat with --acquired and --metric.
    #[arg(long, required = true)]
    pub predicted: Vec<PathBuf>,
    /// Map from the acquired (reference) data.
    #[arg(long, required = true)]
    pub acquired: Vec<PathBuf>,
    /// Metric names, one per pair (default: file stems).
    #[arg(long)]
    pub metric: Vec<String>,
    #[arg(long)]
    pub mask: PathBuf,
    /// Maps of the altered data, one per pair.
    #[arg(long)]
    pub predicted_altered: Vec<PathBuf>,
    #[arg(long)]
    pub acquired_altered: Vec<PathBuf>,
    /// "x,y,z:sx,sy,sz", or taken from --sidecar.
    #[arg(long)]
    pub region: Option<String>,
    /// JSON sidecar written by `alter`.
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
    #[arg(long, default_value = "subject")]
    pub subject: String,
    #[arg(long, default_value = "harmonized-vs-acquired")]
    pub comparison: String,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub fdr_alpha: Option<f64>,
    /// JSON report.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional CSV copy of the report.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// "nx,ny,nz"
    #[arg(long, default_value = "24,24,24")]
    pub shape: String,
    #[arg(long, default_value_t = 1)]
    pub b0: usize,
    #[arg(long, default_value_t = 12)]
    pub dirs: usize,
    #[arg(long, default_value_t = 1000.0)]
    pub bval: f64,
    /// Rician noise sigma in signal units.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Global intensity gain applied before the noise.
    #[arg(long, default_value_t = 1.0)]
    pub gain: f64,
    /// Writes <prefix>.nii.gz, .bval, .bvec and _mask.nii.gz.
    #[arg(long)]
    pub out_prefix: PathBuf,
}

/// Parses `"x,y,z:sx,sy,sz"`.
pub fn parse_region(text: &str) -> Result<Region> {
    let (o, s) = text
        .split_once(':')
        .ok_or_else(|| arg_err!("region {text:?} must look like x,y,z:sx,sy,sz"))?;
    Region::new(parse_triple(o)?, parse_triple(s)?)
}

pub fn parse_triple(text: &str) -> Result<[usize; 3]> {
    let v: Vec<usize> = text
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| arg_err!("expected three integers, got {text:?}"))?;
    v.try_into().map_err(|_| arg_err!("expected three integers, got {text:?}"))
}

/// File name without any `.nii.gz`-style extensions.
fn stem(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    for ext in [".nii.gz", ".nii", ".json", ".dld"] {
        if let Some(s) = name.strip_suffix(ext) {
            return s.to_string();
        }
    }
    name
}

/// `dir/name.nii.gz` → `dir/name<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_file_name(format!("{}{suffix}", stem(path)))
}

fn prefixed(prefix: &Path, suffix: &str) -> PathBuf {
    let name = prefix.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    prefix.with_file_name(format!("{name}{suffix}"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn apply_patch(cfg: &mut RunConfig, p: &PatchArgs) {
    if let Some(s) = p.patch_size {
        cfg.patch.spatial_size = s;
    }
    if let Some(a) = p.neighbors {
        cfg.patch.n_neighbors = a;
    }
    if let Some(s) = p.stride {
        cfg.patch.stride = s;
    }
}

/// Defaults, then the config file, then the global flags.
pub fn base_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let env = std::env::var(THREADS_ENV).ok();
    cfg.thread_count = resolve_threads(cli.threads, env.as_deref())?.or(cfg.thread_count);
    Ok(cfg)
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = base_config(&cli)?;
    match &cli.command {
        Command::Train(a) => {
            apply_patch(&mut cfg, &a.patch);
            if let Some(v) = a.iters {
                cfg.train.n_iterations = v;
            }
            if let Some(v) = a.batch {
                cfg.train.batch_size = v;
            }
            if a.atoms.is_some() {
                cfg.train.n_atoms = a.atoms;
            }
            if let Some(s) = a.select {
                cfg.train.path_cfg.selection = s;
            }
            if let Some(h) = a.holdout {
                cfg.holdout = h;
            }
        }
        Command::Harmonize(a) => {
            apply_patch(&mut cfg, &a.patch);
            if let Some(s) = a.select {
                cfg.coding.selection = s;
            }
            if let Some(r) = &a.upsample_ratio {
                cfg.upsample_ratio = Some(parse_ratio(r)?);
            }
            if let Some(d) = &a.downsample {
                cfg.downsample = d.parse::<Downsample>()?;
            }
        }
        Command::Alter(a) => {
            if let Some(r) = &a.region {
                cfg.alteration.region = parse_region(r)?;
            }
            if let Some(v) = a.f_low {
                cfg.alteration.f_low = v;
            }
            if let Some(v) = a.f_high {
                cfg.alteration.f_high = v;
            }
            if let Some(v) = a.d_csf {
                cfg.alteration.d_csf = v;
            }
        }
        Command::Metrics(a) => {
            if let Some(v) = a.sh_order {
                cfg.metrics.sh_order = v;
            }
        }
        Command::Eval(a) => {
            if let Some(v) = a.bins {
                cfg.eval.bins = v;
            }
            if let Some(v) = a.fdr_alpha {
                cfg.eval.fdr_alpha = v;
            }
        }
        Command::Phantom(_) => {}
    }
    let cfg = cfg.seeded();
    cfg.validate()?;

    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cfg.thread_count {
            b = b.num_threads(n);
        }
        b.build().map_err(|e| arg_err!("thread pool: {e}"))?
    };
    pool.install(|| match &cli.command {
        Command::Train(a) => cmd_train(a, &cfg, cli.verbose),
        Command::Harmonize(a) => cmd_harmonize(a, &cfg),
        Command::Alter(a) => cmd_alter(a, &cfg),
        Command::Metrics(a) => cmd_metrics(a, &cfg),
        Command::Eval(a) => cmd_eval(a, &cfg),
        Command::Phantom(a) => cmd_phantom(a, &cfg),
    })
}

fn load_dataset(input: &Path, bvals: &Path, bvecs: &Path, mask: &Path) -> Result<Dataset> {
    let (volume, gtab) = load_volume(input, bvals, bvecs)?;
    let mask = load_mask(mask, &volume)?;
    Ok(Dataset {
        id: stem(input),
        volume,
        gtab,
        mask,
    })
}

pub fn cmd_train(a: &TrainArgs, cfg: &RunConfig, verbose: bool) -> Result<()> {
    let n = a.input.len();
    if a.bvals.len() != n || a.bvecs.len() != n || a.mask.len() != n {
        return Err(arg_err!(
            "need one --bvals, --bvecs and --mask per --input ({n} inputs, {} bvals, {} bvecs, {} masks)",
            a.bvals.len(),
            a.bvecs.len(),
            a.mask.len()
        ));
    }
    let datasets = (0..n)
        .map(|i| load_dataset(&a.input[i], &a.bvals[i], &a.bvecs[i], &a.mask[i]))
        .collect::<Result<Vec<_>>>()?;
    let (omega, shape) = pooled_patches(&datasets, &cfg.patch)?;
    let (omega, held) = if cfg.holdout > 0 {
        let (t, h) = split_holdout(&omega, cfg.holdout, cfg.seed)?;
        (t, Some(h))
    } else {
        (omega, None)
    };
    let sources = datasets.iter().map(|d| d.id.clone()).collect();
    let mut trainer = Trainer::new(&omega, shape, cfg.train)?.with_sources(sources);
    while !trainer.is_done() {
        let s = trainer.step()?;
        if verbose {
            let held_obj = match &held {
                Some(h) => format!(" heldout_objective={:.6e}", batch_objective(trainer.atoms(), h, &cfg.train.path_cfg)?),
                None => String::new(),
            };
            eprintln!(
                "iter={} batch_objective={:.6e} mean_df={:.2} replaced={}{held_obj}",
                s.iteration, s.batch_objective, s.mean_df, s.replaced_atoms
            );
        }
    }
    trainer.into_dictionary()?.write(&a.out)
}

pub fn cmd_harmonize(a: &HarmonizeArgs, cfg: &RunConfig) -> Result<()> {
    let d = Dictionary::read(&a.dictionary)?;
    let source = load_dataset(&a.input, &a.bvals, &a.bvecs, &a.mask)?;
    let out = harmonize(&source, &d, &cfg.harmonize_config())?;
    save_volume(&out, &a.out)?;
    let (bvals, bvecs) = source.gtab.to_fsl_text();
    write_text(&sibling(&a.out, ".bval"), &bvals)?;
    write_text(&sibling(&a.out, ".bvec"), &bvecs)
}

pub fn cmd_alter(a: &AlterArgs, cfg: &RunConfig) -> Result<()> {
    let (vol, gtab) = load_volume(&a.input, &a.bvals, &a.bvecs)?;
    let (altered, record) = alter_volume(&vol, &gtab, &cfg.alteration)?;
    save_volume(&altered, &a.out)?;
    let json = serde_json::to_string_pretty(&record).expect("record serializes");
    write_text(&sibling(&a.out, ".json"), &json)
}

pub fn metric_paths(prefix: &Path) -> Vec<(&'static str, PathBuf)> {
    MetricMaps::NAMES
        .iter()
        .map(|&n| (n, prefixed(prefix, &format!("_{n}.nii.gz"))))
        .collect()
}

pub fn cmd_metrics(a: &MetricsArgs, cfg: &RunConfig) -> Result<()> {
    let (vol, gtab) = load_volume(&a.input, &a.bvals, &a.bvecs)?;
    let mask = load_mask(&a.mask, &vol)?;
    let maps = compute_all(&vol, &gtab, &mask, cfg.metrics.sh_order, cfg.metrics.laplace_beltrami)?;
    for (name, path) in metric_paths(&a.out_prefix) {
        save_map(maps.get(name).expect("known metric"), &vol, path)?;
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs, cfg: &RunConfig) -> Result<()> {
    let n = a.predicted.len();
    if a.acquired.len() != n {
        return Err(arg_err!("{n} --predicted maps but {} --acquired", a.acquired.len()));
    }
    if !a.metric.is_empty() && a.metric.len() != n {
        return Err(arg_err!("{n} map pairs but {} --metric names", a.metric.len()));
    }
    let altered = !a.predicted_altered.is_empty() || !a.acquired_altered.is_empty();
    if altered && (a.predicted_altered.len() != n || a.acquired_altered.len() != n) {
        return Err(arg_err!("need one --predicted-altered and --acquired-altered per pair"));
    }
    let region = match (&a.region, &a.sidecar) {
        (Some(r), _) => Some(parse_region(r)?),
        (None, Some(p)) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let rec: crate::alteration::AlterationRecord =
                serde_json::from_str(&text).map_err(|e| Error::Format(format!("sidecar: {e}")))?;
            Some(rec.region)
        }
        (None, None) => None,
    };
    if altered && region.is_none() {
        return Err(arg_err!("altered maps need --region or --sidecar"));
    }
    let load = |ps: &[PathBuf]| ps.iter().map(load_map).collect::<Result<Vec<_>>>();
    let (pred, acq) = (load(&a.predicted)?, load(&a.acquired)?);
    let (pred_alt, acq_alt) = (load(&a.predicted_altered)?, load(&a.acquired_altered)?);
    let mask_map = load_map(&a.mask)?;
    let mask = BrainMask::new(mask_map.mapv(|v| v != 0.0))?;
    let inputs: Vec<MetricInputs<'_>> = (0..n)
        .map(|i| MetricInputs {
            metric: a.metric.get(i).cloned().unwrap_or_else(|| stem(&a.predicted[i])),
            subject: a.subject.clone(),
            comparison: a.comparison.clone(),
            predicted: &pred[i],
            acquired: &acq[i],
            altered: if altered {
                Some((&pred_alt[i], &acq_alt[i], region.expect("checked above")))
            } else {
                None
            },
        })
        .collect();
    let report = evaluate(&inputs, &mask, &cfg.eval)?;
    write_text(&a.out, &report.to_json())?;
    if let Some(csv) = &a.csv {
        write_text(csv, &report.to_csv())?;
    }
    Ok(())
}

pub fn cmd_phantom(a: &PhantomArgs, cfg: &RunConfig) -> Result<()> {
    let shape = parse_triple(&a.shape)?;
    if !(a.gain > 0.0 && a.gain.is_finite()) {
        return Err(arg_err!("gain must be positive"));
    }
    let gtab = GradientTable::single_shell(a.b0, a.dirs, a.bval)?;
    let mut field = TensorField::smooth_brain(shape);
    field.s0.mapv_inplace(|s| s * a.gain);
    let vol: DiffusionVolume = make_phantom(&field, &gtab, a.noise, cfg.seed)?;
    save_volume(&vol, prefixed(&a.out_prefix, ".nii.gz"))?;
    gtab.write_fsl(prefixed(&a.out_prefix, ".bval"), prefixed(&a.out_prefix, ".bvec"))?;
    save_mask(&BrainMask::full(shape), &vol, prefixed(&a.out_prefix, "_mask.nii.gz"))
}
