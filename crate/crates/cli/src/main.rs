use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fusion_core::detect::{format_boxes, read_boxes, Difficulty, GroundTruth};
use fusion_core::eval::evaluate;
use fusion_core::numerics::io as tensor_io;
use fusion_core::pipeline::{
    grad_suite, init_pipeline_params, oracle_params, run_scene, GradSuiteOptions, PipelineConfig, RunOptions,
};
use fusion_core::scene::{read_bundle, read_labels, synth_scene, write_bundle, CLOUD_FILE};
use fusion_core::ParamSet;
use rayon::prelude::*;

/// CLI-side failure carrying the fields of the single-line error report.
#[derive(Debug)]
struct Failure {
    kind: &'static str,
    module: &'static str,
    msg: String,
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for Failure {}

fn fail(kind: &'static str, module: &'static str, msg: impl Into<String>) -> anyhow::Error {
    Failure {
        kind,
        module,
        msg: msg.into(),
    }
    .into()
}

/// Tags a core error with `module` unless a pipeline stage already did.
fn tag(module: &'static str) -> impl Fn(fusion_core::Error) -> anyhow::Error {
    move |e| {
        let msg = match &e {
            fusion_core::Error::Stage { source, .. } => source.to_string(),
            other => other.to_string(),
        };
        fail(e.kind(), e.module().unwrap_or(module), msg)
    }
}

const MANIFEST_FILE: &str = "manifest.txt";
const DETECTIONS_FILE: &str = "detections.txt";

#[derive(Parser)]
#[command(name = "fusion3d", version, about = "Desk-scale LiDAR-camera 3D detection pipeline")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Global {
    /// INI configuration file; missing keys keep their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides `[pipeline] seed`.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads; only independent scenes run in parallel.
    #[arg(long, global = true, value_name = "N", default_value_t = 1)]
    jobs: usize,
    /// Output file or directory (defaults under `[pipeline] out_dir`).
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write N synthetic scene bundles and a manifest.
    Synth {
        #[arg(value_name = "N")]
        n: usize,
    },
    /// Run the pipeline on a scene bundle, or on every bundle in a manifest.
    Run {
        #[arg(value_name = "SCENE")]
        scene: PathBuf,
        /// Also write intermediate tensors and voxel grids.
        #[arg(long)]
        dump_stages: bool,
    },
    /// Finite-difference check of every differentiable block.
    GradCheck {
        #[arg(long, hide = true)]
        corrupt_backward: Option<f64>,
    },
    /// Score detections against ground truth.
    Eval {
        /// Detections in box format.
        dets: PathBuf,
        /// Ground truth: a box file or a scene bundle directory.
        gt: PathBuf,
        /// Difficulty labels for a ground-truth box file.
        #[arg(long, value_name = "PATH")]
        labels: Option<PathBuf>,
        /// Also write the precision/recall curve as CSV.
        #[arg(long, value_name = "PATH")]
        pr_csv: Option<PathBuf>,
    },
}

fn load_config(g: &Global) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p).map_err(tag("config"))?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(tag("config"))?;
    Ok(cfg)
}

fn pool(jobs: usize) -> anyhow::Result<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(fail("usage", "cli", "--jobs must be at least 1"));
    }
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| tag("cli")(fusion_core::Error::io(dir, e)))?;
    }
    fs::write(path, contents).map_err(|e| tag("cli")(fusion_core::Error::io(path, e)))?;
    Ok(())
}

fn cmd_synth(g: &Global, n: usize) -> anyhow::Result<()> {
    let cfg = load_config(g)?;
    let out = g.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    let names: Vec<String> = (0..n).map(|i| format!("scene_{i:04}")).collect();
    pool(g.jobs)?.install(|| {
        names
            .par_iter()
            .enumerate()
            .try_for_each(|(i, name)| -> anyhow::Result<()> {
                let scene = synth_scene(&cfg.scene, cfg.seed + i as u64).map_err(tag("scene"))?;
                write_bundle(&out.join(name), &scene).map_err(tag("scene"))?;
                Ok(())
            })
    })?;
    let manifest: String = names.iter().map(|n| format!("{n}\n")).collect();
    write(&out.join(MANIFEST_FILE), manifest)?;
    println!("wrote {n} scenes to {}", out.display());
    Ok(())
}

fn run_one(
    scene_dir: &Path,
    out: &Path,
    dump_stages: bool,
    cfg: &PipelineConfig,
    params: &ParamSet,
) -> anyhow::Result<usize> {
    let scene = read_bundle(scene_dir).map_err(tag("scene"))?;
    let res = run_scene(
        &scene,
        cfg,
        params,
        RunOptions {
            collect_stages: dump_stages,
        },
    )
    .map_err(tag("cli"))?;
    write(out, format_boxes(&res.detections))?;
    if dump_stages {
        let dir = out.with_extension("stages");
        for (name, t) in &res.tensors {
            let path = dir.join(format!("{name}.aydt"));
            let mut bytes = Vec::new();
            tensor_io::write_to(t, &mut bytes).map_err(|e| tag("numerics")(fusion_core::Error::io(&path, e)))?;
            write(&path, bytes)?;
        }
        for (name, grid) in &res.grids {
            write(&dir.join(format!("{name}.grid.txt")), grid.to_text())?;
        }
    }
    Ok(res.detections.len())
}

fn read_manifest(path: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let text = fs::read_to_string(path).map_err(|e| tag("cli")(fusion_core::Error::io(path, e)))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect())
}

fn cmd_run(g: &Global, scene: &Path, dump_stages: bool) -> anyhow::Result<()> {
    let cfg = load_config(g)?;
    let mut params = init_pipeline_params(&cfg).map_err(tag("config"))?;
    if cfg.oracle_assist {
        params = oracle_params(&params).map_err(tag("detect"))?;
    }
    if scene.join(CLOUD_FILE).is_file() {
        let out = g.out.clone().unwrap_or_else(|| cfg.out_dir.join(DETECTIONS_FILE));
        let n = run_one(scene, &out, dump_stages, &cfg, &params)?;
        println!("wrote {n} detections to {}", out.display());
        return Ok(());
    }
    if !scene.is_file() {
        return Err(fail(
            "input",
            "scene",
            format!("{}: neither a scene bundle nor a manifest", scene.display()),
        ));
    }
    let scenes = read_manifest(scene)?;
    let out = g.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    let total: usize = pool(g.jobs)?.install(|| {
        scenes
            .par_iter()
            .map(|dir| {
                let name = dir
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                run_one(dir, &out.join(name).join(DETECTIONS_FILE), dump_stages, &cfg, &params)
            })
            .sum::<anyhow::Result<usize>>()
    })?;
    println!(
        "wrote {total} detections for {} scenes to {}",
        scenes.len(),
        out.display()
    );
    Ok(())
}

fn cmd_grad_check(g: &Global, corrupt_backward: Option<f64>) -> anyhow::Result<()> {
    let cfg = load_config(g)?;
    let report = grad_suite(&GradSuiteOptions {
        seed: cfg.seed,
        corrupt_backward,
    })
    .map_err(tag("numerics"))?;
    let text = report.to_text();
    match &g.out {
        Some(p) => write(p, &text)?,
        None => print!("{text}"),
    }
    if !report.passes() {
        let (block, r) = report
            .blocks
            .iter()
            .max_by(|a, b| a.1.max_rel_error.total_cmp(&b.1.max_rel_error))
            .expect("suite has blocks");
        let module = match block.as_str() {
            "gda" => "gcfat",
            "sffa" => "sffa",
            "vga" => "vga",
            _ => "pipeline",
        };
        return Err(fail(
            "numeric",
            module,
            format!(
                "{block}: max relative error {:e} at parameter {}",
                r.max_rel_error,
                r.worst.as_deref().unwrap_or("?")
            ),
        ));
    }
    Ok(())
}

fn load_gt(path: &Path, labels: Option<&Path>) -> anyhow::Result<Vec<GroundTruth>> {
    if path.is_dir() {
        return Ok(read_bundle(path).map_err(tag("scene"))?.gt);
    }
    let boxes = read_boxes(path).map_err(tag("eval"))?;
    let labels = match labels {
        Some(p) => read_labels(p).map_err(tag("eval"))?,
        None => vec![(Difficulty::L1, usize::MAX); boxes.len()],
    };
    if labels.len() != boxes.len() {
        return Err(fail(
            "input",
            "eval",
            format!("{} labels for {} ground-truth boxes", labels.len(), boxes.len()),
        ));
    }
    Ok(boxes
        .into_iter()
        .zip(labels)
        .map(|(bbox, (difficulty, num_points))| GroundTruth {
            bbox,
            difficulty,
            num_points,
        })
        .collect())
}

fn cmd_eval(g: &Global, dets: &Path, gt: &Path, labels: Option<&Path>, pr_csv: Option<&Path>) -> anyhow::Result<()> {
    let cfg = load_config(g)?;
    let d = read_boxes(dets).map_err(tag("eval"))?;
    let gt = load_gt(gt, labels)?;
    let report = evaluate(&[(d, gt)], &cfg.eval).map_err(tag("eval"))?;
    let text = report.to_text();
    match &g.out {
        Some(p) => write(p, &text)?,
        None => print!("{text}"),
    }
    if let Some(p) = pr_csv {
        write(p, report.pr_csv())?;
    }
    Ok(())
}

/// `error[kind] module: message` on one line.
fn error_line(e: &anyhow::Error) -> String {
    let (kind, module, msg) = match e.downcast_ref::<Failure>() {
        Some(f) => (f.kind, f.module, f.msg.clone()),
        None => ("internal", "cli", format!("{e:#}")),
    };
    format!("error[{kind}] {module}: {}", msg.replace(['\n', '\r'], " "))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = &cli.global;
    let res = match &cli.cmd {
        Command::Synth { n } => cmd_synth(g, *n),
        Command::Run { scene, dump_stages } => cmd_run(g, scene, *dump_stages),
        Command::GradCheck { corrupt_backward } => cmd_grad_check(g, *corrupt_backward),
        Command::Eval {
            dets,
            gt,
            labels,
            pr_csv,
        } => cmd_eval(g, dets, gt, labels.as_deref(), pr_csv.as_deref()),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
