use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use splatlab::spectrum::{psnr, spectrum_report, SpectrumReport};
use splatlab::ssim::ssim_rgb;
use splatlab::Error;

use super::out::{read_image, Manifest, OutDir};
use super::{CliError, GlobalArgs};

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    /// Reference image (the "target" columns).
    #[arg(long)]
    pub image_a: PathBuf,
    /// Compared image (the "render" columns).
    #[arg(long)]
    pub image_b: PathBuf,
    /// Scanline; defaults to a row drawn from `--seed`.
    #[arg(long)]
    pub row: Option<usize>,
    /// First high-frequency bin; defaults to width/8.
    #[arg(long)]
    pub cutoff: Option<usize>,
}

/// Scanline drawn uniformly from `seed`.
pub fn default_row(seed: u64, height: usize) -> usize {
    ChaCha8Rng::seed_from_u64(seed).random_range(0..height)
}

pub fn intensity_csv(r: &SpectrumReport) -> String {
    let mut out = String::from("x,intensity_target,intensity_render\n");
    for (x, (a, b)) in r.intensity_target.iter().zip(&r.intensity_render).enumerate() {
        writeln!(out, "{x},{a},{b}").unwrap();
    }
    out
}

pub fn magnitude_csv(r: &SpectrumReport) -> String {
    let mut out = String::from("bin,mag_target,mag_render\n");
    for (k, (a, b)) in r.dft_magnitude_target.iter().zip(&r.dft_magnitude_render).enumerate() {
        writeln!(out, "{k},{a},{b}").unwrap();
    }
    out
}

#[derive(Serialize)]
struct Summary {
    row_index: usize,
    cutoff_bin: usize,
    hf_energy_fraction_target: f64,
    hf_energy_fraction_render: f64,
    psnr: f64,
    /// Absent for images smaller than the SSIM window.
    ssim: Option<f64>,
}

pub fn run(global: &GlobalArgs, args: SpectrumArgs) -> Result<()> {
    let (a, da) = read_image(&args.image_a)?;
    let (b, db) = read_image(&args.image_b)?;
    if (a.width, a.height) != (b.width, b.height) {
        return Err(CliError::Usage(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        ))
        .into());
    }
    let seed = global.seed.unwrap_or(0);
    let row = args.row.unwrap_or_else(|| default_row(seed, a.height));
    let report = spectrum_report(&a.rgb, &b.rgb, a.width, a.height, row, args.cutoff)?;
    let ssim = match ssim_rgb(&a.rgb, &b.rgb, a.width, a.height) {
        Ok(v) => Some(v),
        Err(Error::ImageTooSmall { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let summary = Summary {
        row_index: report.row_index,
        cutoff_bin: report.cutoff_bin,
        hf_energy_fraction_target: report.hf_energy_fraction_target,
        hf_energy_fraction_render: report.hf_energy_fraction_render,
        psnr: psnr(&a.rgb, &b.rgb)?,
        ssim,
    };

    let mut out = OutDir::create(&global.out_dir)?;
    out.write("spectrum_intensity.csv", intensity_csv(&report).as_bytes())?;
    out.write("spectrum_magnitude.csv", magnitude_csv(&report).as_bytes())?;
    out.write_json("spectrum_summary.json", &summary)?;
    let config = json!({
        "image_a": args.image_a.display().to_string(),
        "image_b": args.image_b.display().to_string(),
        "row": row,
        "cutoff": report.cutoff_bin,
    });
    let mut manifest = Manifest::new("spectrum", seed, global.deterministic, config);
    manifest.inputs = vec![da, db];
    out.finish(manifest)
}
