//! Quasienergy spectra and spectral statistics.
//!
//! Eigenvalues of a Floquet operator are written `e^{-i E}` with `E` in
//! `(-pi, pi]`; pair separations `E_v - E_m` are wrapped into the same range
//! before binning.

use std::borrow::Borrow;
use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::haar::unitarity_residual;
use crate::lattice::QuditSpace;
use crate::stats::{Accumulator, Estimate, DEFAULT_BLOCKS};
use crate::theory::{self, wrap_angle};
use crate::CMatrix;

pub use crate::theory::{psff_rmt, r2_cue, sff_cue};

/// Largest `|U v - e^{-iE} v|` and `|V^dag V - I|` accepted from the eigensolver.
pub const EIGEN_TOL: f64 = 1e-8;

/// Quasienergies closer than this are treated as one degenerate cluster.
pub const DEGENERACY_TOL: f64 = 1e-10;

const SCHUR_MAX_ITER: usize = 10_000;

/// Eigendecomposition `U = V diag(e^{-iE}) V^dag`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralData {
    quasienergies: Vec<f64>,
    eigenvectors: CMatrix,
    residual: f64,
}

impl SpectralData {
    /// Assembles spectral data from stored parts, checking sortedness, range
    /// and orthonormality.
    pub fn from_parts(
        quasienergies: Vec<f64>,
        eigenvectors: CMatrix,
        residual: f64,
    ) -> Result<Self> {
        let n = quasienergies.len();
        if n == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if eigenvectors.nrows() != n || eigenvectors.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: eigenvectors.nrows(),
            });
        }
        if quasienergies.iter().any(|e| !(*e > -PI && *e <= PI))
            || quasienergies.windows(2).any(|w| w[0] > w[1])
        {
            return Err(Error::InvalidParameter(
                "quasienergies must be sorted and lie in (-pi, pi]".into(),
            ));
        }
        let orth = unitarity_residual(&eigenvectors);
        if orth > EIGEN_TOL {
            return Err(Error::NotUnitary {
                residual: orth,
                tolerance: EIGEN_TOL,
            });
        }
        Ok(Self {
            quasienergies,
            eigenvectors,
            residual,
        })
    }

    pub fn dim(&self) -> usize {
        self.quasienergies.len()
    }

    pub fn quasienergies(&self) -> &[f64] {
        &self.quasienergies
    }

    /// Columns are eigenstates; `V[(n, v)] = <n|v>`.
    pub fn eigenvectors(&self) -> &CMatrix {
        &self.eigenvectors
    }

    /// `max_v |U v - e^{-iE_v} v|_2` measured at decomposition time.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn orthonormality(&self) -> f64 {
        unitarity_residual(&self.eigenvectors)
    }

    /// `U(t) = V diag(e^{-iEt}) V^dag`.
    pub fn evolution(&self, t: i64) -> CMatrix {
        let mut vd = self.eigenvectors.clone();
        for (k, mut col) in vd.column_iter_mut().enumerate() {
            col *= Complex64::cis(-self.quasienergies[k] * t as f64);
        }
        vd * self.eigenvectors.adjoint()
    }

    /// `N x (t_max + 1)` table of `e^{-i E_v t}`.
    pub fn phase_table(&self, t_max: usize) -> CMatrix {
        DMatrix::from_fn(self.dim(), t_max + 1, |v, t| {
            Complex64::cis(-self.quasienergies[v] * t as f64)
        })
    }

    /// Applies `e^{i phi_v}` to each eigenvector (gauge change).
    pub fn with_phases(&self, phases: &[f64]) -> Self {
        let mut v = self.eigenvectors.clone();
        for (k, mut col) in v.column_iter_mut().enumerate() {
            col *= Complex64::cis(phases[k]);
        }
        Self {
            eigenvectors: v,
            ..self.clone()
        }
    }
}

/// Diagonalizes a unitary matrix through its complex Schur form. For a normal
/// matrix the Schur vectors are eigenvectors.
pub fn diagonalize(u: &CMatrix) -> Result<SpectralData> {
    let n = u.nrows();
    if n == 0 {
        return Err(Error::InvalidDimension(0));
    }
    if u.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: u.ncols(),
        });
    }
    let unit = unitarity_residual(u);
    if unit > EIGEN_TOL {
        return Err(Error::NotUnitary {
            residual: unit,
            tolerance: EIGEN_TOL,
        });
    }
    let schur = nalgebra::linalg::Schur::try_new(u.clone(), f64::EPSILON, SCHUR_MAX_ITER).ok_or(
        Error::Eigensolver {
            residual: f64::INFINITY,
        },
    )?;
    let (q, t) = schur.unpack();

    let raw: Vec<f64> = (0..n).map(|k| wrap_angle(-t[(k, k)].arg())).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]));
    let quasienergies: Vec<f64> = order.iter().map(|&k| raw[k]).collect();
    let mut v = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        v.set_column(dst, &q.column(src));
    }

    for cluster in degenerate_clusters(&quasienergies) {
        reorthonormalize(&mut v, &cluster);
    }

    let uv = u * &v;
    let mut residual = 0.0f64;
    for k in 0..n {
        let lambda = Complex64::cis(-quasienergies[k]);
        let r = (uv.column(k) - v.column(k) * lambda).norm();
        residual = residual.max(r);
    }
    let orth = unitarity_residual(&v);
    if residual > EIGEN_TOL || orth > EIGEN_TOL {
        return Err(Error::Eigensolver {
            residual: residual.max(orth),
        });
    }
    Ok(SpectralData {
        quasienergies,
        eigenvectors: v,
        residual,
    })
}

/// Index sets of sorted quasienergies within [`DEGENERACY_TOL`] of a
/// neighbour, including across the `pi / -pi` seam.
fn degenerate_clusters(e: &[f64]) -> Vec<Vec<usize>> {
    let n = e.len();
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut current = vec![0];
    for k in 1..n {
        if e[k] - e[k - 1] <= DEGENERACY_TOL {
            current.push(k);
        } else {
            clusters.push(std::mem::replace(&mut current, vec![k]));
        }
    }
    clusters.push(current);
    if clusters.len() > 1 && e[0] + TAU - e[n - 1] <= DEGENERACY_TOL {
        let last = clusters.pop().expect("non-empty");
        clusters[0].extend(last);
    }
    clusters.retain(|c| c.len() > 1);
    clusters
}

fn reorthonormalize(v: &mut CMatrix, cols: &[usize]) {
    let n = v.nrows();
    let block = CMatrix::from_fn(n, cols.len(), |r, c| v[(r, cols[c])]);
    let q = block.qr().q();
    for (c, &col) in cols.iter().enumerate() {
        v.set_column(col, &q.column(c));
    }
}

/// How ω-resolved quantities are estimated.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum GridMode {
    Histogram,
    /// Each pair contributes the periodic Lorentzian `sum_{|t|<=t_max} e^{i w t - |t| eta} / 2 pi`;
    /// `t_max = None` keeps every order.
    Lorentzian {
        eta: f64,
        t_max: Option<usize>,
    },
}

/// Frequency grid on `(-pi, pi]`: `bins` points `c_j = (j - (bins - 1) / 2) * 2pi / bins`,
/// so `omega = 0` is a bin center.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OmegaGrid {
    pub bins: usize,
    pub mode: GridMode,
}

impl OmegaGrid {
    pub fn histogram(bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidParameter(
                "omega grid needs at least one bin".into(),
            ));
        }
        Ok(Self {
            bins,
            mode: GridMode::Histogram,
        })
    }

    pub fn lorentzian(points: usize, eta: f64, t_max: Option<usize>) -> Result<Self> {
        if points == 0 {
            return Err(Error::InvalidParameter(
                "omega grid needs at least one point".into(),
            ));
        }
        if !(eta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "eta = {eta} must be positive"
            )));
        }
        Ok(Self {
            bins: points,
            mode: GridMode::Lorentzian { eta, t_max },
        })
    }

    pub fn width(&self) -> f64 {
        TAU / self.bins as f64
    }

    /// Index of the bin centered on `omega = 0`.
    pub fn central_bin(&self) -> usize {
        (self.bins - 1) / 2
    }

    pub fn centers(&self) -> Vec<f64> {
        let o = self.central_bin() as f64;
        (0..self.bins)
            .map(|j| (j as f64 - o) * self.width())
            .collect()
    }

    /// Bin `[c_j - w/2, c_j + w/2)` containing `omega` (taken mod 2 pi).
    pub fn bin_of(&self, omega: f64) -> usize {
        let k = (wrap_angle(omega) / self.width()).round() as i64 + self.central_bin() as i64;
        k.rem_euclid(self.bins as i64) as usize
    }

    pub fn is_histogram(&self) -> bool {
        matches!(self.mode, GridMode::Histogram)
    }

    fn kernel(&self, x: f64) -> f64 {
        match self.mode {
            GridMode::Histogram => unreachable!("histogram grids bin instead"),
            GridMode::Lorentzian {
                eta,
                t_max: Some(tm),
            } => theory::truncated_lorentzian(x, eta, tm),
            GridMode::Lorentzian { eta, t_max: None } => theory::lorentzian(x, eta),
        }
    }
}

/// Per-sample assignment of ordered eigenvalue pairs `(v, m)` to grid points.
pub struct PairTable<'a> {
    grid: &'a OmegaGrid,
    n: usize,
    /// Histogram: bin of each off-diagonal pair, row-major `v * n + m`.
    bins: Vec<u32>,
    /// Lorentzian: kernel value of every pair (including `v = m`) at every point.
    kernel: Vec<f64>,
}

impl<'a> PairTable<'a> {
    pub fn new(energies: &[f64], grid: &'a OmegaGrid) -> Self {
        let n = energies.len();
        match grid.mode {
            GridMode::Histogram => {
                let mut bins = vec![0u32; n * n];
                for v in 0..n {
                    for m in 0..n {
                        bins[v * n + m] = grid.bin_of(energies[v] - energies[m]) as u32;
                    }
                }
                Self {
                    grid,
                    n,
                    bins,
                    kernel: Vec::new(),
                }
            }
            GridMode::Lorentzian { .. } => {
                let centers = grid.centers();
                let mut kernel = Vec::with_capacity(n * n * centers.len());
                for v in 0..n {
                    for m in 0..n {
                        let d = energies[v] - energies[m];
                        kernel.extend(centers.iter().map(|&w| grid.kernel(w - d)));
                    }
                }
                Self {
                    grid,
                    n,
                    bins: Vec::new(),
                    kernel,
                }
            }
        }
    }

    /// Adds the density of pair weights `w(v, m)` to `out` (one value per grid
    /// point). In histogram mode diagonal pairs are skipped unless
    /// `include_diagonal`; in Lorentzian mode every pair is smoothed.
    pub fn accumulate<T, F>(&self, weight: F, include_diagonal: bool, out: &mut [T])
    where
        T: Copy + std::ops::AddAssign + std::ops::Mul<f64, Output = T>,
        F: Fn(usize, usize) -> T,
    {
        let n = self.n;
        if self.grid.is_histogram() {
            let inv = 1.0 / self.grid.width();
            for v in 0..n {
                for m in 0..n {
                    if v == m && !include_diagonal {
                        continue;
                    }
                    out[self.bins[v * n + m] as usize] += weight(v, m) * inv;
                }
            }
        } else {
            let p = self.grid.bins;
            for v in 0..n {
                for m in 0..n {
                    let w = weight(v, m);
                    let k = &self.kernel[(v * n + m) * p..(v * n + m + 1) * p];
                    for (o, &kv) in out.iter_mut().zip(k) {
                        *o += w * kv;
                    }
                }
            }
        }
    }
}

/// Bin average (histogram) or Lorentzian-weighted value (Lorentzian grid) of
/// `(1/2pi) sum_t x(t) e^{i w t}` from the listed time points.
pub fn fourier_to_grid(times: &[i64], values: &[Complex64], grid: &OmegaGrid) -> Vec<Complex64> {
    let centers = grid.centers();
    centers
        .iter()
        .map(|&w| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (&t, &x) in times.iter().zip(values) {
                let tf = t as f64;
                let weight = match grid.mode {
                    GridMode::Histogram => sinc(tf * grid.width() / 2.0),
                    GridMode::Lorentzian { eta, .. } => (-tf.abs() * eta).exp(),
                };
                acc += x * Complex64::cis(w * tf) * weight;
            }
            acc / TAU
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Per-sample `|sum_v e^{-i E_v t}|^2` for `t = 0..=t_max`.
pub fn sff_sample(s: &SpectralData, t_max: usize) -> Vec<f64> {
    (0..=t_max)
        .map(|t| {
            let z: Complex64 = s
                .quasienergies
                .iter()
                .map(|e| Complex64::cis(-e * t as f64))
                .sum();
            z.norm_sqr()
        })
        .collect()
}

/// Per-sample pair density on `grid`. Histogram mode includes `v = m` pairs,
/// so the central bin carries `N / dw`.
pub fn r2_sample(s: &SpectralData, grid: &OmegaGrid) -> Vec<f64> {
    let table = PairTable::new(&s.quasienergies, grid);
    let mut out = vec![0.0; grid.bins];
    table.accumulate(|_, _| 1.0, true, &mut out);
    out
}

/// A per-sample statistic: each spectrum maps to a fixed-width vector whose
/// ensemble sums determine the output.
pub trait Kernel: Sync {
    type Output;
    fn width(&self) -> usize;
    fn sample(&self, s: &SpectralData) -> Result<Vec<f64>>;
    /// Needs at least two populated jackknife blocks.
    fn finish(&self, acc: &Accumulator) -> Result<Self::Output>;
}

/// Accumulates `kernel` over `ensemble` (sample index = position) and finishes it.
pub fn run_kernel<K, I>(kernel: &K, ensemble: I, blocks: usize) -> Result<K::Output>
where
    K: Kernel,
    I: IntoIterator,
    I::Item: Borrow<SpectralData>,
{
    let mut acc = Accumulator::new(kernel.width(), blocks);
    for (i, s) in ensemble.into_iter().enumerate() {
        acc.push(i as u64, &kernel.sample(s.borrow())?)?;
    }
    if acc.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if acc.count() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: acc.count() as usize,
        });
    }
    kernel.finish(&acc)
}

fn time_grid(t_max: usize) -> Vec<f64> {
    (0..=t_max).map(|t| t as f64).collect()
}

/// `K(t)`, `t = 0..=t_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct SffKernel {
    pub t_max: usize,
}

impl SffKernel {
    pub fn new(t_max: usize) -> Result<Self> {
        if t_max < 1 {
            return Err(Error::InvalidParameter("t_max must be >= 1".into()));
        }
        Ok(Self { t_max })
    }
}

impl Kernel for SffKernel {
    type Output = Estimate;

    fn width(&self) -> usize {
        self.t_max + 1
    }

    fn sample(&self, s: &SpectralData) -> Result<Vec<f64>> {
        Ok(sff_sample(s, self.t_max))
    }

    fn finish(&self, acc: &Accumulator) -> Result<Estimate> {
        Estimate::from_accumulator(time_grid(self.t_max), acc)
    }
}

/// Ensemble SFF `K(t)`, `t = 0..=t_max`.
pub fn sff_estimate<I>(ensemble: I, t_max: usize) -> Result<Estimate>
where
    I: IntoIterator,
    I::Item: Borrow<SpectralData>,
{
    run_kernel(&SffKernel::new(t_max)?, ensemble, DEFAULT_BLOCKS)
}

/// Binned two-level function. `delta_weight` is the exact `v = m` mass `N`,
/// already contained in the central bin for histogram grids.
#[derive(Debug, Clone, PartialEq)]
pub struct R2Estimate {
    pub estimate: Estimate,
    pub delta_weight: f64,
    pub grid: OmegaGrid,
}

impl R2Estimate {
    /// CUE prediction on the same grid: bin averages plus the delta mass in
    /// the central bin (histogram), or the Lorentzian resummation.
    pub fn cue_prediction(&self, n: usize) -> Vec<f64> {
        let form = theory::TimeForm {
            constant: 0.0,
            sff: 1.0,
            t0: 0.0,
        };
        let centers = self.grid.centers();
        match self.grid.mode {
            GridMode::Histogram => {
                let h = self.grid.width() / 2.0;
                let mut out: Vec<f64> = centers
                    .iter()
                    .map(|&c| form.frequency_bin(c - h, c + h, n).0)
                    .collect();
                out[self.grid.central_bin()] += n as f64 / self.grid.width();
                out
            }
            GridMode::Lorentzian { eta, t_max } => centers
                .iter()
                .map(|&w| form.lorentzian(w, n, eta, t_max))
                .collect(),
        }
    }
}

/// Pair density of dimension-`n` spectra on `grid`.
#[derive(Debug, Clone, PartialEq)]
pub struct R2Kernel {
    pub n: usize,
    pub grid: OmegaGrid,
}

impl Kernel for R2Kernel {
    type Output = R2Estimate;

    fn width(&self) -> usize {
        self.grid.bins
    }

    fn sample(&self, s: &SpectralData) -> Result<Vec<f64>> {
        if s.dim() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: s.dim(),
            });
        }
        Ok(r2_sample(s, &self.grid))
    }

    fn finish(&self, acc: &Accumulator) -> Result<R2Estimate> {
        Ok(R2Estimate {
            estimate: Estimate::from_accumulator(self.grid.centers(), acc)?,
            delta_weight: self.n as f64,
            grid: self.grid.clone(),
        })
    }
}

pub fn r2_estimate<I>(ensemble: I, grid: &OmegaGrid) -> Result<R2Estimate>
where
    I: IntoIterator,
    I::Item: Borrow<SpectralData>,
{
    let mut it = ensemble.into_iter().peekable();
    let n = it
        .peek()
        .map(|s| s.borrow().dim())
        .ok_or(Error::EmptyEnsemble)?;
    run_kernel(
        &R2Kernel {
            n,
            grid: grid.clone(),
        },
        it,
        DEFAULT_BLOCKS,
    )
}

/// Bipartition of a qudit register into `A` (the listed sites) and its complement.
#[derive(Debug, Clone, PartialEq)]
pub struct Subsystem {
    space: QuditSpace,
    sites: Vec<usize>,
    dim_a: usize,
    dim_b: usize,
    /// Basis index of `|a> (x) |b>` at `a * dim_b + b`.
    index: Vec<usize>,
}

impl Subsystem {
    pub fn new(space: QuditSpace, mut sites: Vec<usize>) -> Result<Self> {
        sites.sort_unstable();
        sites.dedup();
        if sites.is_empty() {
            return Err(Error::InvalidSubsystem(
                "subsystem is empty; K_A reduces to |Tr U|^2 scaled, use the sff statistic".into(),
            ));
        }
        if sites.len() >= space.sites {
            return Err(Error::InvalidSubsystem(
                "subsystem covers every site; use the sff statistic".into(),
            ));
        }
        if let Some(&bad) = sites.iter().find(|&&s| s >= space.sites) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                dim: space.sites,
            });
        }
        let complement: Vec<usize> = (0..space.sites).filter(|s| !sites.contains(s)).collect();
        let dim_a = space.q.pow(sites.len() as u32);
        let dim_b = space.dim() / dim_a;
        let mut index = vec![0; space.dim()];
        for n in 0..space.dim() {
            let a = sites
                .iter()
                .fold(0, |acc, &s| acc * space.q + space.digit(n, s));
            let b = complement
                .iter()
                .fold(0, |acc, &s| acc * space.q + space.digit(n, s));
            index[a * dim_b + b] = n;
        }
        Ok(Self {
            space,
            sites,
            dim_a,
            dim_b,
            index,
        })
    }

    /// The first `sites` sites of `space`.
    pub fn leading(space: QuditSpace, sites: usize) -> Result<Self> {
        Self::new(space, (0..sites).collect())
    }

    /// Subsystem of dimension `n_a` inside an unstructured space of dimension
    /// `n`, factored as qudits of size `q`.
    pub fn for_dims(n: usize, n_a: usize, q: usize) -> Result<Self> {
        let space = QuditSpace::from_dim(n, q)
            .ok_or_else(|| Error::InvalidSubsystem(format!("N = {n} is not a power of q = {q}")))?;
        let a = QuditSpace::from_dim(n_a, q).ok_or_else(|| {
            Error::InvalidSubsystem(format!("N_A = {n_a} is not a power of q = {q}"))
        })?;
        Self::leading(space, a.sites)
    }

    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub fn dim_a(&self) -> usize {
        self.dim_a
    }

    pub fn dim_complement(&self) -> usize {
        self.dim_b
    }

    pub fn space(&self) -> QuditSpace {
        self.space
    }

    /// `Tr_A M` as a `dim_b x dim_b` matrix.
    pub fn partial_trace(&self, m: &CMatrix) -> CMatrix {
        let (da, db) = (self.dim_a, self.dim_b);
        CMatrix::from_fn(db, db, |b, b2| {
            (0..da)
                .map(|a| m[(self.index[a * db + b], self.index[a * db + b2])])
                .sum()
        })
    }
}

/// Per-sample `|Tr_A U(t)|_F^2` for `t = 0..=t_max`.
pub fn psff_sample(s: &SpectralData, sub: &Subsystem, t_max: usize) -> Result<Vec<f64>> {
    let n = s.dim();
    if n != sub.space.dim() {
        return Err(Error::DimensionMismatch {
            expected: sub.space.dim(),
            actual: n,
        });
    }
    let (da, db) = (sub.dim_a, sub.dim_b);
    let v = &s.eigenvectors;
    // rows (b, b'), columns v: (Tr_A |v><v|)_{b b'}
    let p = CMatrix::from_fn(db * db, n, |row, nu| {
        let (b, b2) = (row / db, row % db);
        (0..da)
            .map(|a| v[(sub.index[a * db + b], nu)] * v[(sub.index[a * db + b2], nu)].conj())
            .sum()
    });
    let series = p * s.phase_table(t_max);
    Ok(series.column_iter().map(|c| c.norm_squared()).collect())
}

/// `K_A(t)`, `t = 0..=t_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsffKernel {
    pub sub: Subsystem,
    pub t_max: usize,
}

impl Kernel for PsffKernel {
    type Output = Estimate;

    fn width(&self) -> usize {
        self.t_max + 1
    }

    fn sample(&self, s: &SpectralData) -> Result<Vec<f64>> {
        psff_sample(s, &self.sub, self.t_max)
    }

    fn finish(&self, acc: &Accumulator) -> Result<Estimate> {
        Estimate::from_accumulator(time_grid(self.t_max), acc)
    }
}

/// Ensemble partial SFF `K_A(t)`, `t = 0..=t_max`.
pub fn psff_estimate<I>(ensemble: I, sub: &Subsystem, t_max: usize) -> Result<Estimate>
where
    I: IntoIterator,
    I::Item: Borrow<SpectralData>,
{
    run_kernel(
        &PsffKernel {
            sub: sub.clone(),
            t_max,
        },
        ensemble,
        DEFAULT_BLOCKS,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haar::sample_cue_indexed;

    fn cue_spectrum(n: usize, seed: u64, k: u64) -> SpectralData {
        diagonalize(sample_cue_indexed(n, seed, k).unwrap().matrix()).unwrap()
    }

    #[test]
    fn identity_spectrum() {
        let s = diagonalize(&CMatrix::identity(6, 6)).unwrap();
        assert!(s.quasienergies().iter().all(|&e| e == 0.0));
        assert_eq!(s.residual(), 0.0);
        assert!(s.orthonormality() < 1e-15);
    }

    #[test]
    fn diagonal_phases() {
        let i = Complex64::i();
        let one = Complex64::new(1.0, 0.0);
        let u = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![one, i, -one, -i]));
        let s = diagonalize(&u).unwrap();
        let want = [-PI / 2.0, 0.0, PI / 2.0, PI];
        for (e, w) in s.quasienergies().iter().zip(want) {
            assert!((e - w).abs() < 1e-14, "{e} vs {w}");
        }
    }

    #[test]
    fn reconstruction() {
        for k in 0..5 {
            let u = sample_cue_indexed(8, 11, k).unwrap();
            let s = diagonalize(u.matrix()).unwrap();
            let r = s.evolution(1);
            let diff = (r - u.matrix())
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            assert!(diff <= 1e-8, "{diff}");
            assert!(s.residual() <= 1e-8 && s.orthonormality() <= 1e-8);
            assert!(s.quasienergies().windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn degenerate_spectrum_reorthonormalized() {
        // W diag(1, 1, 1, -1, -1) W^dag has two degenerate clusters
        let w = sample_cue_indexed(5, 2, 0).unwrap().into_matrix();
        let d: Vec<Complex64> = [1.0, 1.0, 1.0, -1.0, -1.0]
            .iter()
            .map(|&x| Complex64::new(x, 0.0))
            .collect();
        let u = &w * CMatrix::from_diagonal(&nalgebra::DVector::from_vec(d)) * w.adjoint();
        let s = diagonalize(&u).unwrap();
        assert!(s.orthonormality() < 1e-12);
        assert!((s.evolution(1) - &u).iter().all(|z| z.norm() < 1e-10));
        assert_eq!(
            degenerate_clusters(&[-PI + 1e-12, 0.0, PI]),
            vec![vec![0, 2]]
        );
        assert_eq!(
            degenerate_clusters(&[0.0, 0.0, 1.0, 1.0, 1.0]),
            vec![vec![0, 1], vec![2, 3, 4]]
        );
    }

    #[test]
    fn rejects_non_unitary() {
        let m = CMatrix::from_element(3, 3, Complex64::new(1.0, 0.0));
        assert!(matches!(diagonalize(&m), Err(Error::NotUnitary { .. })));
        assert!(matches!(
            diagonalize(&CMatrix::zeros(0, 0)),
            Err(Error::InvalidDimension(0))
        ));
    }

    #[test]
    fn grid_layout() {
        for bins in [1, 2, 7, 8, 64] {
            let g = OmegaGrid::histogram(bins).unwrap();
            let c = g.centers();
            assert_eq!(c[g.central_bin()], 0.0);
            for (j, &cj) in c.iter().enumerate() {
                assert_eq!(g.bin_of(cj), j);
                assert_eq!(g.bin_of(cj + 0.49 * g.width()), j);
            }
            // edges tile the circle: the top edge wraps to the bottom bin
            assert_eq!(g.bin_of(PI), g.bin_of(-PI));
            assert!(c.iter().all(|&x| x > -PI - 1e-12 && x <= PI + 1e-12));
        }
        assert!(OmegaGrid::histogram(0).is_err());
        assert!(OmegaGrid::lorentzian(8, 0.0, None).is_err());
    }

    #[test]
    fn per_sample_exact_identities() {
        let s = cue_spectrum(16, 5, 0);
        let n = 16.0;
        let k = sff_sample(&s, 4);
        assert_eq!(k[0], n * n);
        for bins in [5, 16, 33] {
            let g = OmegaGrid::histogram(bins).unwrap();
            let r2 = r2_sample(&s, &g);
            let total: f64 = r2.iter().sum::<f64>() * g.width();
            assert!((total - n * n).abs() < 1e-10);
            assert!(r2[g.central_bin()] * g.width() >= n - 1e-12);
        }
        // 32 equally spaced points integrate trig polynomials of degree < 32 exactly
        let g = OmegaGrid::lorentzian(32, 0.3, Some(20)).unwrap();
        let r2 = r2_sample(&s, &g);
        let total: f64 = r2.iter().sum::<f64>() * g.width();
        assert!((total - n * n).abs() < 1e-10 * n * n);
    }

    #[test]
    fn lorentzian_r2_is_damped_fourier_of_sff() {
        let s = cue_spectrum(8, 9, 3);
        let tm = 12;
        let g = OmegaGrid::lorentzian(9, 0.2, Some(tm)).unwrap();
        let r2 = r2_sample(&s, &g);
        let k = sff_sample(&s, tm);
        let times: Vec<i64> = (-(tm as i64)..=tm as i64).collect();
        let vals: Vec<Complex64> = times
            .iter()
            .map(|t| Complex64::new(k[t.unsigned_abs() as usize], 0.0))
            .collect();
        let f = fourier_to_grid(&times, &vals, &g);
        for (a, b) in r2.iter().zip(f) {
            assert!((a - b.re).abs() < 1e-10 * a.abs().max(1.0) && b.im.abs() < 1e-10);
        }
    }

    #[test]
    fn subsystem_partial_trace() {
        let space = QuditSpace::new(2, 3).unwrap();
        assert!(Subsystem::new(space, vec![]).is_err());
        assert!(Subsystem::new(space, vec![0, 1, 2]).is_err());
        assert!(Subsystem::new(space, vec![5]).is_err());
        // A = site 0 (most significant): Tr_A (X (x) Y) = Tr X * Y
        let x = CMatrix::from_fn(2, 2, |r, c| Complex64::new((r * 2 + c) as f64 + 1.0, 0.0));
        let y = CMatrix::from_fn(4, 4, |r, c| Complex64::new(r as f64, c as f64));
        let sub = Subsystem::new(space, vec![0]).unwrap();
        let got = sub.partial_trace(&x.kronecker(&y));
        let tr_x = x[(0, 0)] + x[(1, 1)];
        assert!((got - y.map(|z| z * tr_x)).iter().all(|z| z.norm() < 1e-14));
        // A = site 2 (least significant): Tr_A (Y (x) X) = Tr X * Y
        let sub = Subsystem::new(space, vec![2]).unwrap();
        let got = sub.partial_trace(&y.kronecker(&x));
        assert!((got - y.map(|z| z * tr_x)).iter().all(|z| z.norm() < 1e-14));
    }

    #[test]
    fn psff_matches_direct_partial_trace() {
        let s = cue_spectrum(16, 4, 1);
        let space = QuditSpace::new(2, 4).unwrap();
        for sites in [vec![0], vec![1, 3], vec![0, 1, 2]] {
            let sub = Subsystem::new(space, sites).unwrap();
            let ka = psff_sample(&s, &sub, 6).unwrap();
            assert!((ka[0] - (16 * sub.dim_a()) as f64).abs() < 1e-10);
            for (t, &val) in ka.iter().enumerate() {
                let direct = sub.partial_trace(&s.evolution(t as i64)).norm_squared();
                assert!((val - direct).abs() < 1e-10 * direct.max(1.0), "t = {t}");
            }
        }
    }

    #[test]
    fn estimators_need_samples() {
        let s = cue_spectrum(4, 1, 0);
        assert!(matches!(
            sff_estimate(Vec::<SpectralData>::new(), 3),
            Err(Error::EmptyEnsemble)
        ));
        assert!(matches!(
            sff_estimate(vec![s.clone()], 3),
            Err(Error::TooFewSamples { .. })
        ));
        assert!(sff_estimate(vec![s.clone(), s], 0).is_err());
    }

    #[test]
    fn sff_and_r2_fourier_consistent() {
        // E[K(t) - N] = 0 for t >= N, so the truncated transform of K - N
        // reproduces the off-diagonal R2 bins up to noise
        let n = 8;
        let tm = 3 * n;
        let g = OmegaGrid::histogram(9).unwrap();
        let times: Vec<i64> = (-(tm as i64)..=tm as i64).collect();
        let mut acc = Accumulator::new(g.bins, 20);
        for k in 0..400 {
            let s = cue_spectrum(n, 21, k);
            let mut r2 = r2_sample(&s, &g);
            r2[g.central_bin()] -= n as f64 / g.width();
            let ks = sff_sample(&s, tm);
            let vals: Vec<Complex64> = times
                .iter()
                .map(|t| Complex64::new(ks[t.unsigned_abs() as usize] - n as f64, 0.0))
                .collect();
            let f = fourier_to_grid(&times, &vals, &g);
            let d: Vec<f64> = r2.iter().zip(&f).map(|(a, b)| a - b.re).collect();
            acc.push(k, &d).unwrap();
        }
        let (m, e) = acc.mean_with_error().unwrap();
        for (mj, ej) in m.iter().zip(&e) {
            assert!(mj.abs() <= 4.0 * ej, "{mj} +- {ej}");
        }
    }
}
