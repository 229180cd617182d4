//! Scanline Fourier instrumentation and image-quality metrics.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PSNR_CAP_DB: f64 = 100.0;

/// Luminance of one image row.
pub fn luminance_row(rgb: &[f64], width: usize, height: usize, row: usize) -> Result<Vec<f64>> {
    if row >= height {
        return Err(Error::RowOutOfRange { row, height });
    }
    if rgb.len() != 3 * width * height {
        return Err(Error::InvalidInput(format!(
            "buffer of {} values is not {width}x{height} RGB",
            rgb.len()
        )));
    }
    Ok(rgb[3 * row * width..3 * (row + 1) * width]
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect())
}

/// Complex DFT `X_k = Σ x_n e^{−2πi kn/N}`.
pub fn dft(signal: &[f64]) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v, 0.0)).collect();
    if buf.is_empty() {
        return buf;
    }
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

/// `|X_k|` scaled so the largest bin is 1 (all zeros stay zero).
pub fn normalized_magnitude(signal: &[f64]) -> Vec<f64> {
    let mut mags: Vec<f64> = dft(signal).iter().map(|c| c.norm()).collect();
    let max = mags.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        mags.iter_mut().for_each(|m| *m /= max);
    }
    mags
}

/// Normalized DFT magnitude of a row's luminance.
pub fn scanline_spectrum(rgb: &[f64], width: usize, height: usize, row: usize) -> Result<Vec<f64>> {
    Ok(normalized_magnitude(&luminance_row(rgb, width, height, row)?))
}

pub fn default_cutoff(n: usize) -> usize {
    (n / 8).max(1)
}

/// Share of non-DC energy in bins whose frequency `min(k, n − k)` is at least `cutoff_bin`.
pub fn hf_energy_fraction(magnitudes: &[f64], cutoff_bin: usize) -> Result<f64> {
    let n = magnitudes.len();
    if cutoff_bin == 0 || cutoff_bin > n / 2 {
        return Err(Error::InvalidInput(format!(
            "cutoff bin {cutoff_bin} outside 1..={} for {n} bins",
            n / 2
        )));
    }
    let mut total = 0.0;
    let mut high = 0.0;
    for (k, m) in magnitudes.iter().enumerate().skip(1) {
        let e = m * m;
        total += e;
        if k.min(n - k) >= cutoff_bin {
            high += e;
        }
    }
    Ok(if total > 0.0 { high / total } else { 0.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub row_index: usize,
    pub cutoff_bin: usize,
    pub intensity_target: Vec<f64>,
    pub intensity_render: Vec<f64>,
    pub dft_magnitude_target: Vec<f64>,
    pub dft_magnitude_render: Vec<f64>,
    pub hf_energy_fraction_target: f64,
    pub hf_energy_fraction_render: f64,
}

/// Compare one scanline of two equally sized images.
pub fn spectrum_report(
    target: &[f64],
    render: &[f64],
    width: usize,
    height: usize,
    row: usize,
    cutoff_bin: Option<usize>,
) -> Result<SpectrumReport> {
    if target.len() != render.len() {
        return Err(Error::InvalidInput(format!(
            "image buffers differ in length: {} vs {}",
            target.len(),
            render.len()
        )));
    }
    let intensity_target = luminance_row(target, width, height, row)?;
    let intensity_render = luminance_row(render, width, height, row)?;
    let cutoff_bin = cutoff_bin.unwrap_or_else(|| default_cutoff(width));
    let dft_magnitude_target = normalized_magnitude(&intensity_target);
    let dft_magnitude_render = normalized_magnitude(&intensity_render);
    Ok(SpectrumReport {
        row_index: row,
        cutoff_bin,
        hf_energy_fraction_target: hf_energy_fraction(&dft_magnitude_target, cutoff_bin)?,
        hf_energy_fraction_render: hf_energy_fraction(&dft_magnitude_render, cutoff_bin)?,
        intensity_target,
        intensity_render,
        dft_magnitude_target,
        dft_magnitude_render,
    })
}

/// `10·log10(1/MSE)`, capped at [`PSNR_CAP_DB`] when MSE < 1e−10.
pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidInput(format!(
            "psnr needs equal non-empty buffers, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    Ok(if mse < 1e-10 {
        PSNR_CAP_DB
    } else {
        -10.0 * mse.log10()
    })
}

pub use crate::ssim::ssim_rgb as ssim;
