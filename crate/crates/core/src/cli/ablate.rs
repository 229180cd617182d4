use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde_json::json;

use splatlab::ablate::{grid_cells, outcomes_csv, run_cell, CellOutcome, GridSpec};
use splatlab::init::InitMode;
use splatlab::schedule::LpfMode;

use super::config::{resolve, Overrides};
use super::fit::{resolve_train, target_path, TrainFlags};
use super::out::{read_image, Manifest, OutDir};
use super::{CliError, FileConfig, GlobalArgs};

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Comma-separated init modes.
    #[arg(long, value_delimiter = ',')]
    pub inits: Option<Vec<InitMode>>,
    /// Comma-separated low-pass schedules.
    #[arg(long, value_delimiter = ',')]
    pub lpfs: Option<Vec<LpfMode>>,
    /// Comma-separated initial counts; default is each mode's usual count.
    #[arg(long, value_delimiter = ',')]
    pub n_init: Option<Vec<usize>>,
    #[arg(long)]
    pub seeds: Option<usize>,
    #[command(flatten)]
    pub train: TrainFlags,
}

pub fn run(global: &GlobalArgs, file: &FileConfig, args: AblateArgs) -> Result<()> {
    let mut o = Overrides::default();
    args.train.apply(&mut o);
    let base = resolve_train(global, file, o)?;
    let mut g = Overrides::default();
    g.set("inits", args.inits)
        .set("lpfs", args.lpfs)
        .set("n_init", args.n_init)
        .set("seeds", args.seeds);
    let spec: GridSpec = resolve(&GridSpec::default(), file.section("grid"), g.into_value())?;
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let path = target_path(args.target, file)?;
    let (target, digest) = read_image(&path)?;

    let cells = grid_cells(&spec, base.seed);
    let mut outcomes = Vec::with_capacity(cells.len());
    let mut numerical = false;
    for cell in &cells {
        let res = run_cell(&target, &base, cell);
        if let Err(e) = &res {
            numerical |= matches!(e, splatlab::Error::NonFiniteLoss { .. });
        }
        let o = CellOutcome::from_result(*cell, &res);
        match (&o.psnr, &o.error) {
            (Some(p), _) => eprintln!("ablate: {} n={} {} seed {}: {p:.3} dB", cell.init, cell.n_init, cell.lpf, cell.seed),
            (_, Some(e)) => eprintln!("ablate: {} n={} {} seed {}: {e}", cell.init, cell.n_init, cell.lpf, cell.seed),
            _ => {}
        }
        outcomes.push(o);
    }

    let mut out = OutDir::create(&global.out_dir)?;
    out.write("ablation.csv", outcomes_csv(&outcomes).as_bytes())?;
    let mut manifest = Manifest::new(
        "ablate",
        base.seed,
        base.deterministic,
        json!({ "target": path.display().to_string(), "train": base, "grid": spec }),
    );
    manifest.inputs.push(digest);
    out.finish(manifest)?;

    let failed = outcomes.iter().filter(|o| o.error.is_some()).count();
    if failed > 0 {
        return Err(CliError::CellsFailed {
            failed,
            total: outcomes.len(),
            numerical,
        }
        .into());
    }
    Ok(())
}
