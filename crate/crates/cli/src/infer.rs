use std::fs::File;
use std::path::PathBuf;

use otvm::engine::{
    run_sequence_with, uses_memory_extras, write_frame_outputs, OutputOptions, RunManifest,
    TimingLog,
};
use otvm::imageio::{list_pngs, load_frame, load_trimap};
use otvm::Otvm;

use crate::{require_dir, require_file, usage};

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    weights: PathBuf,
    /// Directory of frame PNGs, processed in file-name order.
    #[arg(long)]
    frames: PathBuf,
    /// First-frame trimap PNG (0 background, 128 unknown, 255 foreground).
    #[arg(long)]
    trimap: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    save_fgbg: bool,
    /// Write 16-bit alpha PNGs.
    #[arg(long)]
    sixteen_bit: bool,
    /// Per-frame timing CSV.
    #[arg(long)]
    timing: Option<PathBuf>,
}

pub fn run(a: Args) -> anyhow::Result<()> {
    require_file(&a.weights, "weights file")?;
    require_dir(&a.frames, "frame directory")?;
    require_file(&a.trimap, "trimap")?;
    let model = Otvm::load(&a.weights)?;
    let paths = list_pngs(&a.frames)?;
    if paths.is_empty() {
        return Err(usage(format!("no PNG frames in `{}`", a.frames.display())));
    }
    let frames = paths
        .iter()
        .map(|p| load_frame(p))
        .collect::<otvm::Result<Vec<_>>>()?;
    let trimap = load_trimap(&a.trimap)?;
    if trimap.size() != frames[0].size() {
        return Err(usage(format!(
            "trimap is {:?} but frames are {:?}",
            trimap.size(),
            frames[0].size()
        )));
    }
    std::fs::create_dir_all(&a.out)?;
    let mut timing = a
        .timing
        .as_ref()
        .map(|p| {
            File::create(p)
                .map_err(anyhow::Error::from)
                .and_then(|f| Ok(TimingLog::new(f)?))
        })
        .transpose()?;
    let opts = OutputOptions {
        sixteen_bit: a.sixteen_bit,
        save_fgbg: a.save_fgbg,
    };
    let mut files = Vec::with_capacity(frames.len());
    run_sequence_with(&model, &frames, &trimap, |t, out, dt| {
        files.push(write_frame_outputs(&a.out, t, out, opts)?);
        if let Some(tl) = timing.as_mut() {
            tl.record(t, dt)?;
        }
        log::info!("frame {t}: {:.3}s", dt.as_secs_f64());
        Ok(())
    })?;
    let (h, w) = frames[0].size();
    RunManifest {
        frames: paths,
        trimap: a.trimap.clone(),
        weights: a.weights.clone(),
        stages: model.stages_done.clone(),
        height: h,
        width: w,
        memory_extras: uses_memory_extras(&model),
        outputs: files,
    }
    .write(&a.out.join("manifest.json"))?;
    println!("wrote {} frames to {}", frames.len(), a.out.display());
    Ok(())
}
