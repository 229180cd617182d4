use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde::Serialize;
use serde_json::json;

use splatlab::init::InitMode;
use splatlab::schedule::LpfMode;
use splatlab::train::{fit_observed, FitResult, RunLog, TrainConfig};

use super::config::{resolve, Overrides};
use super::out::{read_image, Manifest, OutDir};
use super::{CliError, FileConfig, GlobalArgs};

/// Training flags shared by `fit` and `ablate`.
#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lpf_update_every: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    /// Turn off clone/split/prune.
    #[arg(long)]
    pub no_densify: bool,
    #[arg(long)]
    pub extent_factor: Option<f64>,
}

impl TrainFlags {
    pub fn apply(&self, o: &mut Overrides) {
        o.set("steps", self.steps)
            .set("lpf.update_every", self.lpf_update_every)
            .set("eval_every", self.eval_every)
            .set("snapshot_every", self.snapshot_every)
            .set("init.extent_factor", self.extent_factor)
            .set("densify.enabled", self.no_densify.then_some(false));
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Target PNG (overrides `target` in the config file).
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long)]
    pub init: Option<InitMode>,
    #[arg(long)]
    pub n_init: Option<usize>,
    #[arg(long)]
    pub lpf: Option<LpfMode>,
    #[command(flatten)]
    pub train: TrainFlags,
}

/// Defaults ← `[train]` ← flags ← global seed/determinism.
pub fn resolve_train(global: &GlobalArgs, file: &FileConfig, flags: Overrides) -> Result<TrainConfig> {
    let mut o = flags;
    o.set("seed", global.seed);
    o.set("deterministic", global.deterministic.then_some(true));
    let cfg: TrainConfig = resolve(&TrainConfig::default(), file.section("train"), o.into_value())?;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

pub fn target_path(flag: Option<PathBuf>, file: &FileConfig) -> Result<PathBuf> {
    flag.or_else(|| file.target.clone())
        .ok_or_else(|| CliError::Usage("no target image: pass --target or set `target` in the config".into()).into())
}

pub fn run(global: &GlobalArgs, file: &FileConfig, args: FitArgs) -> Result<()> {
    let mut o = Overrides::default();
    o.set("init.mode", args.init).set("init.n_init", args.n_init).set("lpf.mode", args.lpf);
    args.train.apply(&mut o);
    let cfg = resolve_train(global, file, o)?;
    let path = target_path(args.target, file)?;
    let (target, digest) = read_image(&path)?;

    let started = std::time::Instant::now();
    let result = fit_observed(&target, &cfg, &mut |r| {
        let psnr = r.psnr.unwrap_or(f64::NAN);
        let t = started.elapsed().as_secs_f64();
        eprintln!("step {:>6}: loss {:.5}, psnr {psnr:.3} dB, {} gaussians, s {:.3}, {t:.1}s", r.step, r.loss, r.n, r.s);
    })?;

    let mut out = OutDir::create(&global.out_dir)?;
    write_fit_outputs(&mut out, &result)?;
    let mut manifest = Manifest::new(
        "fit",
        cfg.seed,
        cfg.deterministic,
        json!({ "target": path.display().to_string(), "train": cfg }),
    );
    manifest.inputs.push(digest);
    out.finish(manifest)?;

    let s = result.log.summary.as_ref().expect("summary");
    eprintln!(
        "fit: psnr {:.3} dB, ssim {:.4}, {} gaussians, s {:.3}, {:.1}s",
        s.psnr, s.ssim, s.n, s.s, s.wall_time_s
    );
    Ok(())
}

#[derive(Serialize)]
struct RunLogJson<'a> {
    records: &'a [splatlab::train::StepRecord],
    densify_events: &'a [splatlab::train::DensifyEvent],
}

fn densify_csv(log: &RunLog) -> String {
    let mut out = String::from("step,cloned,split,pruned,capped,n_after\n");
    for e in &log.densify_events {
        let r = &e.report;
        writeln!(out, "{},{},{},{},{},{}", e.step, r.cloned, r.split, r.pruned, r.capped, e.n_after).unwrap();
    }
    out
}

/// Run log, densification events, snapshots and final render. Wall time only
/// goes to `summary.json`, so every other file is reproducible byte for byte.
pub fn write_fit_outputs(out: &mut OutDir, r: &FitResult) -> Result<()> {
    out.write("runlog.csv", r.log.to_csv().as_bytes())?;
    out.write_json(
        "runlog.json",
        &RunLogJson {
            records: &r.log.records,
            densify_events: &r.log.densify_events,
        },
    )?;
    out.write("densify.csv", densify_csv(&r.log).as_bytes())?;
    out.write_json("summary.json", &r.log.summary)?;
    for snap in &r.snapshots {
        let stem = format!("snapshots/step_{:06}", snap.step);
        out.write_png(&format!("{stem}.png"), &snap.rgb, r.width, r.height)?;
        out.write_json(&format!("{stem}.json"), &snap.digest)?;
    }
    let last = r.snapshots.last().expect("fit always keeps the final render");
    out.write_png("final.png", &last.rgb, r.width, r.height)?;
    Ok(())
}
