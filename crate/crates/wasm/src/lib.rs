//! Browser bindings for three small CUE experiments. Every export returns a
//! flat `Float64Array` of rows `[grid, measured, error, predicted]`.
//!
//! Build with `wasm-pack build crates/wasm --target web --out-dir www/pkg`.

use floquet_lab::eth::{DensityMatrix, RhoKernel};
use floquet_lab::haar::sample_cue_indexed;
use floquet_lab::spectral::{
    diagonalize, run_kernel, OmegaGrid, R2Kernel, SffKernel, SpectralData,
};
use floquet_lab::stats::DEFAULT_BLOCKS;
use floquet_lab::theory::{rho_entry_rmt, sff_cue};
use floquet_lab::Result;
use num_complex::Complex64;
use wasm_bindgen::prelude::*;

/// Keeps the page responsive.
pub const MAX_DIM: usize = 128;
pub const MAX_SAMPLES: usize = 20_000;

fn ensemble(n: usize, samples: usize, seed: u32) -> Result<Vec<SpectralData>> {
    if !(2..=MAX_DIM).contains(&n) || !(2 * DEFAULT_BLOCKS..=MAX_SAMPLES).contains(&samples) {
        return Err(floquet_lab::Error::InvalidParameter(format!(
            "need 2 <= N <= {MAX_DIM} and {} <= samples <= {MAX_SAMPLES}",
            2 * DEFAULT_BLOCKS
        )));
    }
    (0..samples as u64)
        .map(|i| diagonalize(sample_cue_indexed(n, seed as u64, i)?.matrix()))
        .collect()
}

fn rows(grid: &[f64], measured: &[f64], error: &[f64], predicted: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(4 * grid.len());
    for k in 0..grid.len() {
        out.extend([grid[k], measured[k], error[k], predicted[k]]);
    }
    out
}

/// `K(t)` for `t = 0..=t_max` against `min(t, N) + N^2 [t = 0]`.
pub fn sff_rows(n: usize, samples: usize, t_max: usize, seed: u32) -> Result<Vec<f64>> {
    let ens = ensemble(n, samples, seed)?;
    let e = run_kernel(&SffKernel::new(t_max)?, &ens, DEFAULT_BLOCKS)?;
    let pred: Vec<f64> = e.grid.iter().map(|&t| sff_cue(t as i64, n)).collect();
    Ok(rows(&e.grid, &e.mean, &e.error, &pred))
}

/// Binned pair density (diagonal pairs included) against the CUE bin averages.
pub fn r2_rows(n: usize, samples: usize, bins: usize, seed: u32) -> Result<Vec<f64>> {
    let ens = ensemble(n, samples, seed)?;
    let e = run_kernel(
        &R2Kernel {
            n,
            grid: OmegaGrid::histogram(bins)?,
        },
        &ens,
        DEFAULT_BLOCKS,
    )?;
    let pred = e.cue_prediction(n);
    Ok(rows(
        &e.estimate.grid,
        &e.estimate.mean,
        &e.estimate.error,
        &pred,
    ))
}

/// `<rho_00(t)>` for `rho0 = |0><0|`, `t = 0..=t_max`.
pub fn rho_rows(n: usize, samples: usize, t_max: usize, seed: u32) -> Result<Vec<f64>> {
    let ens = ensemble(n, samples, seed)?;
    let times: Vec<i64> = (0..=t_max as i64).collect();
    let kernel = RhoKernel::new(
        DensityMatrix::basis_state(n, 0)?,
        times.clone(),
        vec![(0, 0)],
        Vec::new(),
    )?;
    let e = run_kernel(&kernel, &ens, DEFAULT_BLOCKS)?;
    let pred: Vec<f64> = times
        .iter()
        .map(|&t| rho_entry_rmt(Complex64::new(1.0, 0.0), true, t, n).re)
        .collect();
    Ok(rows(&e.re[0].grid, &e.re[0].mean, &e.re[0].error, &pred))
}

fn js(r: Result<Vec<f64>>) -> std::result::Result<Vec<f64>, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn sff(
    n: usize,
    samples: usize,
    t_max: usize,
    seed: u32,
) -> std::result::Result<Vec<f64>, JsError> {
    js(sff_rows(n, samples, t_max, seed))
}

#[wasm_bindgen]
pub fn r2(
    n: usize,
    samples: usize,
    bins: usize,
    seed: u32,
) -> std::result::Result<Vec<f64>, JsError> {
    js(r2_rows(n, samples, bins, seed))
}

#[wasm_bindgen]
pub fn rho(
    n: usize,
    samples: usize,
    t_max: usize,
    seed: u32,
) -> std::result::Result<Vec<f64>, JsError> {
    js(rho_rows(n, samples, t_max, seed))
}
