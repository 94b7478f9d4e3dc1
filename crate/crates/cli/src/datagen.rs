use std::path::{Path, PathBuf};

use anyhow::Context;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use otvm::clipsim::{simulate_clip, write_clip, ClipSimConfig};
use otvm::imageio::{list_pngs, load_alpha, load_frame};
use otvm::{Config, Preset};

use crate::{require_dir, usage};

#[derive(clap::Args)]
pub struct Args {
    /// Directory with `fg/` and `alpha/` subfolders of same-named PNGs.
    #[arg(long)]
    fg_dir: PathBuf,
    /// Directory of background PNGs.
    #[arg(long)]
    bg_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    frames: usize,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// TOML config; its `[clipsim]` table overrides the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "toy")]
    preset: Preset,
}

#[derive(Serialize)]
struct ClipEntry {
    dir: String,
    fg: String,
    bg: String,
    seed: u64,
}

#[derive(Serialize)]
struct DatagenManifest {
    seed: u64,
    frames: usize,
    clipsim: ClipSimConfig,
    clips: Vec<ClipEntry>,
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn run(a: Args) -> anyhow::Result<()> {
    require_dir(&a.fg_dir, "foreground directory")?;
    require_dir(&a.bg_dir, "background directory")?;
    let (fg_sub, alpha_sub) = (a.fg_dir.join("fg"), a.fg_dir.join("alpha"));
    require_dir(&fg_sub, "foreground folder")?;
    require_dir(&alpha_sub, "alpha folder")?;
    let fgs = list_pngs(&fg_sub)?;
    let bgs = list_pngs(&a.bg_dir)?;
    if fgs.is_empty() {
        return Err(usage(format!(
            "no foreground PNGs in `{}`",
            fg_sub.display()
        )));
    }
    if bgs.is_empty() {
        return Err(usage(format!(
            "no background PNGs in `{}`",
            a.bg_dir.display()
        )));
    }
    for f in &fgs {
        if !alpha_sub.join(file_name(f)).is_file() {
            return Err(usage(format!(
                "foreground `{}` has no matching alpha",
                f.display()
            )));
        }
    }
    if a.frames == 0 || a.count == 0 {
        return Err(usage("--frames and --count must be positive"));
    }
    let cfg = match &a.config {
        Some(p) => Config::load(p)?,
        None => Config::for_preset(a.preset),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut clips = Vec::with_capacity(a.count);
    for i in 0..a.count {
        let fg_path = &fgs[rng.random_range(0..fgs.len())];
        let bg_path = &bgs[rng.random_range(0..bgs.len())];
        let clip_seed: u64 = rng.random();
        let fg = load_frame(fg_path).with_context(|| format!("reading {}", fg_path.display()))?;
        let alpha = load_alpha(&alpha_sub.join(file_name(fg_path)))?;
        let bg = load_frame(bg_path).with_context(|| format!("reading {}", bg_path.display()))?;
        let clip = simulate_clip(&fg, &alpha, &bg, a.frames, clip_seed, &cfg.clipsim)
            .with_context(|| format!("simulating clip {i} from {}", fg_path.display()))?;
        let dir = format!("clip_{i:04}");
        write_clip(&a.out.join(&dir), &clip)?;
        log::info!("wrote {dir}");
        clips.push(ClipEntry {
            dir,
            fg: file_name(fg_path),
            bg: file_name(bg_path),
            seed: clip_seed,
        });
    }
    let manifest = DatagenManifest {
        seed: a.seed,
        frames: a.frames,
        clipsim: cfg.clipsim,
        clips,
    };
    std::fs::write(
        a.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}
