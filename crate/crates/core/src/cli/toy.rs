use std::fmt::Write as _;

use anyhow::Result;
use clap::{Args, ValueEnum};
use serde_json::json;

use splatlab::toy1d::{toy_fit, ToyConfig, ToyMode, ToyResult};

use super::config::{resolve, Overrides};
use super::out::{Manifest, OutDir};
use super::{CliError, FileConfig, GlobalArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Dsv,
    Dlv,
    Slv,
    All,
}

impl ModeArg {
    fn modes(self) -> Vec<ToyMode> {
        match self {
            ModeArg::Dsv => vec![ToyMode::Dsv],
            ModeArg::Dlv => vec![ToyMode::Dlv],
            ModeArg::Slv => vec![ToyMode::Slv],
            ModeArg::All => ToyMode::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub mode: ModeArg,
    /// Number of seeds, counting up from `--seed`.
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

/// One file per run: the target and the fitted signal at each snapshot step.
pub fn signal_csv(r: &ToyResult) -> String {
    let mut out = String::from("x,target");
    for s in &r.snapshots {
        write!(out, ",step_{}", s.step).unwrap();
    }
    out.push('\n');
    for (x, t) in r.target.iter().enumerate() {
        write!(out, "{x},{t}").unwrap();
        for s in &r.snapshots {
            write!(out, ",{}", s.signal[x]).unwrap();
        }
        out.push('\n');
    }
    out
}

/// One row per run.
pub fn summary_csv(results: &[ToyResult]) -> String {
    let mut out = String::from("mode,seed,n,final_l1");
    if let Some(r) = results.first() {
        for s in &r.snapshots {
            write!(out, ",l1_step_{0},hf_step_{0}", s.step).unwrap();
        }
    }
    out.push('\n');
    for r in results {
        write!(out, "{},{},{},{}", r.mode, r.seed, r.n, r.final_l1).unwrap();
        for s in &r.snapshots {
            write!(out, ",{},{}", s.l1, s.hf_energy_fraction).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn run(global: &GlobalArgs, file: &FileConfig, args: ToyArgs) -> Result<()> {
    if args.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()).into());
    }
    let mut o = Overrides::default();
    o.set("steps", args.steps).set("lr", args.lr).set("seed", global.seed);
    let base: ToyConfig = resolve(&ToyConfig::default(), file.section("toy"), o.into_value())?;
    base.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let mut results = Vec::new();
    for mode in args.mode.modes() {
        for k in 0..args.seeds as u64 {
            let cfg = ToyConfig {
                mode,
                seed: base.seed + k,
                ..base.clone()
            };
            let r = toy_fit(&cfg)?;
            eprintln!("toy1d: {} seed {} final L1 {:.4}", mode, cfg.seed, r.final_l1);
            results.push(r);
        }
    }

    let mut out = OutDir::create(&global.out_dir)?;
    for r in &results {
        out.write(&format!("toy_{}_seed{}.csv", r.mode, r.seed), signal_csv(r).as_bytes())?;
    }
    out.write("toy_summary.csv", summary_csv(&results).as_bytes())?;
    let components: Vec<_> = results
        .iter()
        .filter(|r| r.mode == results[0].mode)
        .map(|r| json!({ "seed": r.seed, "components": r.target_components }))
        .collect();
    out.write_json("toy_targets.json", &components)?;
    let config = json!({
        "toy": base,
        "modes": args.mode.modes(),
        "seeds": args.seeds,
    });
    out.finish(Manifest::new("toy1d", base.seed, global.deterministic, config))
}
