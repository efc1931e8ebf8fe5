//! Collate run directories into a stable figure-ready layout:
//!
//! ```text
//! <out>/curves/cumprod_curve.csv     diag
//! <out>/curves/learning_curve.csv    train: step,metric,mean,std,seeds
//! <out>/tables/{prop3,prop4,prop5}.csv
//! <out>/heatmaps/heatmap_{M,C}_t<step>.csv
//! <out>/reports/report_seed<s>.csv
//! ```

use crate::manifest::Manifest;
use crate::{out_dir, Failure};
use clap::Args;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// Directory written by `diag` or `train`.
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn copy_into(src: &Path, dst_dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dst_dir)?;
    std::fs::copy(src, dst_dir.join(src.file_name().expect("file path")))?;
    Ok(())
}

fn require(run: &Path, names: &[&str]) -> Result<(), Failure> {
    let missing: Vec<&str> = names.iter().copied().filter(|n| !run.join(n).exists()).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{} is missing: {}", run.display(), missing.join(", "))))
    }
}

fn sorted_entries(dir: &Path, prefix: &str) -> std::io::Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with(prefix) && n.ends_with(".csv")))
        .collect();
    v.sort();
    Ok(v)
}

/// Mean and population std per (step, metric) across report files.
pub fn learning_curve(reports: &[String]) -> Result<String, Failure> {
    let mut acc: BTreeMap<(u64, String), Vec<f64>> = BTreeMap::new();
    for text in reports {
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() < 3 {
                return Err(Failure::Usage(format!("malformed report row {line:?}")));
            }
            let step: u64 = f[0].parse().map_err(|_| Failure::Usage(format!("bad step in {line:?}")))?;
            let value: f64 = f[2].parse().map_err(|_| Failure::Usage(format!("bad value in {line:?}")))?;
            acc.entry((step, f[1].to_string())).or_default().push(value);
        }
    }
    let mut s = String::from("step,metric,mean,std,seeds\n");
    for ((step, metric), vals) in acc {
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        writeln!(s, "{step},{metric},{mean:.17e},{std:.17e},{}", vals.len()).expect("writing to a String");
    }
    Ok(s)
}

pub fn run(a: &ExportArgs) -> Result<(), Failure> {
    let manifest = Manifest::read(&a.run)?.ok_or_else(|| {
        Failure::Usage(format!("{}: empty manifest (no {} found); nothing to export", a.run.display(), crate::manifest::FILE))
    })?;
    let out = out_dir(&a.out, "export");
    match manifest.get("command") {
        Some("diag") => {
            require(&a.run, &["cumprod_curve.csv", "prop3.csv", "prop4.csv", "prop5.csv", "heatmaps"])?;
            copy_into(&a.run.join("cumprod_curve.csv"), &out.join("curves"))?;
            for t in ["prop3.csv", "prop4.csv", "prop5.csv"] {
                copy_into(&a.run.join(t), &out.join("tables"))?;
            }
            for f in sorted_entries(&a.run.join("heatmaps"), "heatmap_")? {
                copy_into(&f, &out.join("heatmaps"))?;
            }
        }
        Some("train") => {
            let reports = sorted_entries(&a.run, "report_seed")?;
            if reports.is_empty() {
                return Err(Failure::Usage(format!("{} is missing: report_seed*.csv", a.run.display())));
            }
            let texts = reports.iter().map(std::fs::read_to_string).collect::<std::io::Result<Vec<_>>>()?;
            std::fs::create_dir_all(out.join("curves"))?;
            std::fs::write(out.join("curves").join("learning_curve.csv"), learning_curve(&texts)?)?;
            for r in &reports {
                copy_into(r, &out.join("reports"))?;
            }
        }
        other => {
            return Err(Failure::Usage(format!(
                "cannot export a run of command {:?}; expected diag or train",
                other.unwrap_or("<none>")
            )))
        }
    }
    println!("exported {} to {}", a.run.display(), out.display());
    Ok(())
}
