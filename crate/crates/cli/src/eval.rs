use std::fs::File;
use std::path::{Path, PathBuf};

use otvm::clipsim::{eval_trimap_set, EvalSetting};
use otvm::imageio::{list_pngs, load_alpha, load_trimap};
use otvm::metrics::{
    alpha_metrics, trimap_quality, write_csv, write_json, MetricScales, Region, ReportRow,
};
use otvm::{AlphaMap, TrimapSoft};

use crate::{require_dir, usage};

#[derive(clap::Args)]
pub struct Args {
    /// Predicted alpha PNGs (`alpha_*` files if present, else every PNG).
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth alpha PNGs, same selection rule.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value = "medium")]
    setting: EvalSetting,
    #[arg(long, default_value = "unknown")]
    region: Region,
    /// Also score `trimap_*` PNGs in the prediction directory.
    #[arg(long)]
    trimap_quality: bool,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
    /// Sequence name for the report row; defaults to the ground-truth folder name.
    #[arg(long)]
    name: Option<String>,
}

fn prefixed(dir: &Path, prefix: &str) -> anyhow::Result<Vec<PathBuf>> {
    let all = list_pngs(dir)?;
    let with: Vec<PathBuf> = all
        .iter()
        .filter(|p| {
            p.file_name()
                .is_some_and(|n| n.to_string_lossy().starts_with(prefix))
        })
        .cloned()
        .collect();
    Ok(if with.is_empty() { all } else { with })
}

pub fn run(a: Args) -> anyhow::Result<()> {
    require_dir(&a.pred, "prediction directory")?;
    require_dir(&a.gt, "ground-truth directory")?;
    let (pp, gp) = (prefixed(&a.pred, "alpha")?, prefixed(&a.gt, "alpha")?);
    if gp.is_empty() {
        return Err(usage(format!(
            "no ground-truth PNGs in `{}`",
            a.gt.display()
        )));
    }
    if pp.len() != gp.len() {
        return Err(otvm::OtvmError::InvalidArgument(format!(
            "{} predicted frames but {} ground-truth frames",
            pp.len(),
            gp.len()
        ))
        .into());
    }
    let pred = pp
        .iter()
        .map(|p| load_alpha(p))
        .collect::<otvm::Result<Vec<AlphaMap>>>()?;
    let gt = gp
        .iter()
        .map(|p| load_alpha(p))
        .collect::<otvm::Result<Vec<AlphaMap>>>()?;
    let trimaps = gt
        .iter()
        .map(|g| eval_trimap_set(g, a.setting))
        .collect::<otvm::Result<Vec<TrimapSoft>>>()?;
    let report = alpha_metrics(
        &pred,
        &gt,
        Some(&trimaps),
        a.region,
        MetricScales::default(),
    )?;
    let quality = if a.trimap_quality {
        let tp: Vec<PathBuf> = list_pngs(&a.pred)?
            .into_iter()
            .filter(|p| {
                p.file_name()
                    .is_some_and(|n| n.to_string_lossy().starts_with("trimap"))
            })
            .collect();
        if tp.len() != gt.len() {
            return Err(usage(format!(
                "--trimap-quality needs {} trimap_* PNGs in the prediction directory, found {}",
                gt.len(),
                tp.len()
            )));
        }
        let pt = tp
            .iter()
            .map(|p| load_trimap(p))
            .collect::<otvm::Result<Vec<_>>>()?;
        Some(trimap_quality(&pt, &gt)?)
    } else {
        None
    };
    let name = a.name.clone().unwrap_or_else(|| {
        a.gt.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let rows = vec![ReportRow::new(&name, a.setting.name(), &report, quality)];
    write_csv(&rows, std::io::stdout().lock())?;
    if let Some(p) = &a.csv {
        write_csv(&rows, File::create(p)?)?;
    }
    if let Some(p) = &a.json {
        write_json(&rows, File::create(p)?)?;
    }
    Ok(())
}
