//! Initialization × schedule (× count) experiment grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::InitMode;
use crate::model::TargetImage;
use crate::schedule::LpfMode;
use crate::train::{fit, FitResult, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub inits: Vec<InitMode>,
    pub lpfs: Vec<LpfMode>,
    /// Initial counts to sweep; empty → each mode's conventional count.
    pub n_init: Vec<usize>,
    /// Seeds `base_seed, base_seed + 1, …`.
    pub seeds: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            inits: vec![InitMode::Dsv, InitMode::Slv],
            lpfs: vec![LpfMode::Constant, LpfMode::Progressive],
            n_init: Vec::new(),
            seeds: 3,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.inits.is_empty() {
            return Err(Error::config("grid.inits", "must list at least one init mode"));
        }
        if self.lpfs.is_empty() {
            return Err(Error::config("grid.lpfs", "must list at least one schedule"));
        }
        if self.seeds == 0 {
            return Err(Error::config("grid.seeds", "must be at least 1"));
        }
        if self.n_init.contains(&0) {
            return Err(Error::config("grid.n_init", "counts must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub init: InitMode,
    pub n_init: usize,
    pub lpf: LpfMode,
    pub seed: u64,
}

impl Cell {
    /// `base` with this cell's init mode, count, schedule and seed.
    pub fn config(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.init.mode = self.init;
        cfg.init.n_init = self.n_init;
        cfg.lpf.mode = self.lpf;
        cfg.seed = self.seed;
        cfg
    }
}

/// Cells in row order: init, then count, then schedule, then seed.
pub fn grid_cells(spec: &GridSpec, base_seed: u64) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &init in &spec.inits {
        let counts = if spec.n_init.is_empty() {
            vec![init.default_count()]
        } else {
            spec.n_init.clone()
        };
        for &n_init in &counts {
            for &lpf in &spec.lpfs {
                for k in 0..spec.seeds as u64 {
                    cells.push(Cell {
                        init,
                        n_init,
                        lpf,
                        seed: base_seed + k,
                    });
                }
            }
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub cell: Cell,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub n_final: Option<usize>,
    pub error: Option<String>,
}

impl CellOutcome {
    pub fn from_result(cell: Cell, res: &Result<FitResult>) -> Self {
        match res {
            Ok(r) => {
                let s = r.log.summary.as_ref().expect("finished fit has a summary");
                Self {
                    cell,
                    psnr: Some(s.psnr),
                    ssim: Some(s.ssim),
                    n_final: Some(s.n),
                    error: None,
                }
            }
            Err(e) => Self {
                cell,
                psnr: None,
                ssim: None,
                n_final: None,
                error: Some(e.to_string()),
            },
        }
    }
}

pub fn run_cell(target: &TargetImage, base: &TrainConfig, cell: &Cell) -> Result<FitResult> {
    fit(target, &cell.config(base))
}

/// One CSV row per cell; failed cells carry their error message.
pub fn outcomes_csv(outcomes: &[CellOutcome]) -> String {
    let mut out = String::from("init,n_init,lpf,seed,psnr,ssim,n_final,status\n");
    for o in outcomes {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let status = match &o.error {
            None => "ok".to_string(),
            Some(e) => format!("\"error: {}\"", e.replace('"', "'")),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            o.cell.init,
            o.cell.n_init,
            o.cell.lpf,
            o.cell.seed,
            f(o.psnr),
            f(o.ssim),
            o.n_final.map(|n| n.to_string()).unwrap_or_default(),
            status
        ));
    }
    out
}
