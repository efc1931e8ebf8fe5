//! Sequential against scan wall-clock sweep.

use crate::manifest::Manifest;
use crate::{out_dir, Failure};
use clap::Args;
use rand::Rng;
use rand_distr::StandardNormal;
use shm_core::calibration::{init_params, update_matrix, variant_calibration, CalibrationVariant, Dims};
use shm_core::memory::{unroll_sequential, ContextInput, MemoryState};
use shm_core::rng::SeedTree;
use shm_core::scan::{ceil_log2, parallel_scan};
use shm_core::Real;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Sequence lengths (powers of two from 64 to 4096 by default).
    #[arg(long = "t", value_delimiter = ',', default_values_t = [64usize, 128, 256, 512, 1024, 2048, 4096])]
    lengths: Vec<usize>,
    /// Memory sizes.
    #[arg(long = "h", value_delimiter = ',', default_values_t = [24usize, 72, 128, 156])]
    sizes: Vec<usize>,
    /// Timed repetitions per cell; the minimum is reported.
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// Skip cells whose working set would exceed this many MiB.
    #[arg(long = "mem-budget-mb", default_value_t = 1536)]
    mem_budget_mb: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Matrices held at once by a scan over `t` steps: inputs, two prefix
/// arrays, outputs and scratch.
const LIVE_ARRAYS: usize = 6;

fn best_of<T>(reps: usize, mut f: impl FnMut() -> T) -> (f64, T) {
    let mut best = f64::INFINITY;
    let mut last = None;
    for _ in 0..reps.max(1) {
        let start = Instant::now();
        let out = f();
        best = best.min(start.elapsed().as_secs_f64());
        last = Some(out);
    }
    (best, last.expect("at least one repetition"))
}

pub fn run(a: &BenchArgs, threads: usize) -> Result<(), Failure> {
    if cfg!(debug_assertions) {
        eprintln!("warning: unoptimized build; timings are not representative (use --release)");
    }
    let dir = out_dir(&a.out, "bench");
    std::fs::create_dir_all(&dir)?;
    let tree = SeedTree::new(a.seed);
    let mut csv = String::from("t,h,seq_seconds,scan_seconds,speedup,depth,product_depth,fallback_steps,status\n");
    for &h in &a.sizes {
        for &t in &a.lengths {
            let bytes = t * h * h * std::mem::size_of::<Real>() * LIVE_ARRAYS;
            if bytes > a.mem_budget_mb << 20 {
                writeln!(csv, "{t},{h},,,,{},,,skipped_memory", ceil_log2(t + 1)).expect("writing to a String");
                println!("T={t:>5} H={h:>3} skipped (needs ~{} MiB)", bytes >> 20);
                continue;
            }
            let d = 8;
            let mut rng = tree.stream("bench", (h * 100_000 + t) as u64);
            let params = init_params(Dims::new(d, h, 128)?, CalibrationVariant::ShmRandomTheta, &mut rng)?;
            let mut cs = Vec::with_capacity(t);
            let mut us = Vec::with_capacity(t);
            for _ in 0..t {
                let x = ContextInput((0..d).map(|_| rng.sample::<Real, _>(StandardNormal)).collect());
                cs.push(variant_calibration(&params, &x, &mut rng)?.c);
                us.push(update_matrix(&params, &x));
            }
            let m0 = MemoryState::zeros(h);
            let (seq_s, seq) = best_of(a.reps, || unroll_sequential(&m0, &cs, &us));
            let seq = seq?;
            let (scan_s, scan) = best_of(a.reps, || parallel_scan(&m0, &cs, &us));
            let (states, stats) = scan?;
            std::hint::black_box((&seq, &states));
            let speedup = seq_s / scan_s;
            writeln!(
                csv,
                "{t},{h},{seq_s:.6e},{scan_s:.6e},{speedup:.4},{},{},{},ok",
                stats.levels, stats.product_levels, stats.fallback_steps
            )
            .expect("writing to a String");
            println!(
                "T={t:>5} H={h:>3} sequential {seq_s:.4e}s scan {scan_s:.4e}s speedup {speedup:.3} depth {}",
                stats.levels
            );
        }
    }
    std::fs::write(dir.join("bench.csv"), csv)?;
    let mut m = Manifest::new("bench", threads);
    m.set("seed", a.seed);
    m.set("reps", a.reps);
    m.set("release", !cfg!(debug_assertions));
    m.write(&dir)?;
    Ok(())
}
