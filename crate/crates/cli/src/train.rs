use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::Context;

use otvm::clipsim::read_clip;
use otvm::losses::Targets;
use otvm::trainer::{run_stage, Stage, StageIo};
use otvm::{Config, Otvm, Preset};

use crate::{require_dir, require_file, usage};

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    stage: Stage,
    /// TOML config; defaults to the chosen preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "toy")]
    preset: Preset,
    /// Directory of clip folders written by `otvm datagen`.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to continue from; fresh weights otherwise.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Override the configured iteration count for this stage.
    #[arg(long)]
    iterations: Option<usize>,
    /// JSON-lines step log; defaults to `<out>.log.jsonl`.
    #[arg(long)]
    log: Option<PathBuf>,
}

fn load_clips(dir: &std::path::Path) -> anyhow::Result<Vec<Targets>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(usage(format!("no clips under `{}`", dir.display())));
    }
    dirs.iter()
        .map(|d| {
            read_clip(d)
                .map(|c| Targets::from_clip(&c))
                .with_context(|| format!("reading clip {}", d.display()))
        })
        .collect()
}

pub fn run(a: Args) -> anyhow::Result<()> {
    require_dir(&a.data, "data directory")?;
    let cfg = match &a.config {
        Some(p) => Config::load(p)?,
        None => Config::for_preset(a.preset),
    };
    let mut model = match &a.resume {
        Some(p) => {
            require_file(p, "checkpoint")?;
            let m = Otvm::load(p)?;
            if m.cfg != cfg.model {
                return Err(usage(format!(
                    "checkpoint `{}` was built for a different model config (preset {:?}, requested {:?})",
                    p.display(),
                    m.cfg.preset,
                    cfg.model.preset
                )));
            }
            m
        }
        None => Otvm::new(&cfg.model),
    };
    let data = load_clips(&a.data)?;
    let iterations = a
        .iterations
        .unwrap_or_else(|| cfg.train.iterations.get(a.stage));
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log.jsonl");
        p.into()
    });
    if let Some(dir) = log_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut log = BufWriter::new(File::create(&log_path)?);
    let out = a.out.clone();
    let mut save = |m: &Otvm, step: usize| {
        log::info!("checkpoint at step {step}");
        m.save(&out)
    };
    let report = run_stage(
        &mut model,
        a.stage,
        &data,
        &cfg.train,
        iterations,
        StageIo {
            log: Some(&mut log),
            checkpoint: Some(&mut save),
        },
    )?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    model.save(&a.out)?;
    let totals = report.totals();
    if let (Some(first), Some(last)) = (totals.first(), totals.last()) {
        println!(
            "stage {}: {} steps, loss {first:.5} -> {last:.5}, {} skipped",
            a.stage,
            totals.len(),
            report.skipped
        );
    }
    Ok(())
}
