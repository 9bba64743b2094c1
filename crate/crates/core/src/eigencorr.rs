//! Eigenstate correlation function `C_{nn'm'm}` in time and frequency.
//!
//! Per sample, with `V[(n, v)] = <n|v>`:
//! `C(t) = U_{nn'}(t) conj(U_{mm'}(t))` and
//! `C(w) = sum_{v m} <n|v><v|n'><m'|m><m|m> delta(w - E_v + E_m)`.
//! Each eigenvector enters with its conjugate, so values do not depend on
//! eigenvector phases.

use std::borrow::Borrow;
use std::collections::{BTreeSet, HashMap};
use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, Domain};
use crate::spectral::{
    fourier_to_grid, run_kernel, GridMode, Kernel, OmegaGrid, PairTable, SpectralData,
};
use crate::stats::{Accumulator, DEFAULT_BLOCKS};
use crate::CMatrix;

pub use crate::theory::{corr_freq_rmt, corr_time_rmt, Category, Variant};

/// Default number of tuples drawn from a category too large to enumerate.
pub const DEFAULT_TUPLE_BUDGET: usize = 256;

/// Index tuple `(n, n', m', m)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tuple {
    pub n: usize,
    pub n_prime: usize,
    pub m_prime: usize,
    pub m: usize,
}

impl Tuple {
    pub const fn new(n: usize, n_prime: usize, m_prime: usize, m: usize) -> Self {
        Self {
            n,
            n_prime,
            m_prime,
            m,
        }
    }

    /// Most specific category; `Diagonal` is never returned.
    pub fn category(&self) -> Category {
        let d1 = self.n == self.n_prime && self.m_prime == self.m;
        let d2 = self.n == self.m && self.n_prime == self.m_prime;
        match (d1, d2) {
            (true, true) => Category::AllEqual,
            (true, false) => Category::DiagonalDistinct,
            (false, true) => Category::Exchange,
            (false, false) => Category::Other,
        }
    }

    pub fn in_category(&self, cat: Category) -> bool {
        match cat {
            Category::Diagonal => self.n == self.n_prime && self.m_prime == self.m,
            other => self.category() == other,
        }
    }

    fn max_index(&self) -> usize {
        self.n.max(self.n_prime).max(self.m_prime).max(self.m)
    }

    pub fn label(&self) -> String {
        format!("({},{},{},{})", self.n, self.n_prime, self.m_prime, self.m)
    }
}

/// Which correlators to measure.
#[derive(Debug, Clone, PartialEq)]
pub enum IndexProbe {
    Tuples(Vec<Tuple>),
    Category(Category),
}

/// All tuples of a category in lexicographic order.
pub fn enumerate_category(cat: Category, n: usize) -> Vec<Tuple> {
    let mut out = Vec::new();
    match cat {
        Category::Diagonal | Category::DiagonalDistinct | Category::AllEqual => {
            for a in 0..n {
                for b in 0..n {
                    let t = Tuple::new(a, a, b, b);
                    if t.in_category(cat) {
                        out.push(t);
                    }
                }
            }
        }
        Category::Exchange => {
            for a in 0..n {
                for b in 0..n {
                    if a != b {
                        out.push(Tuple::new(a, b, b, a));
                    }
                }
            }
        }
        Category::Other => {
            for a in 0..n {
                for b in 0..n {
                    for c in 0..n {
                        for d in 0..n {
                            let t = Tuple::new(a, b, c, d);
                            if t.category() == Category::Other {
                                out.push(t);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Uniform subsample of `budget` distinct tuples, or every tuple when the
/// category is no larger than the budget. Returns the tuples and whether the
/// category was enumerated exhaustively.
pub fn sample_category(
    cat: Category,
    n: usize,
    budget: usize,
    seed: u64,
) -> Result<(Vec<Tuple>, bool)> {
    if budget == 0 {
        return Err(Error::InvalidParameter("tuple budget must be >= 1".into()));
    }
    let size = cat.count(n);
    if size == 0 {
        return Err(Error::InvalidParameter(format!(
            "category {} is empty for N = {n}",
            cat.name()
        )));
    }
    if size <= budget as u128 {
        return Ok((enumerate_category(cat, n), true));
    }
    let mut rng = rng::stream(seed, Domain::Tuples, &[n as u64, cat as u64]);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(budget);
    while out.len() < budget {
        let t = match cat {
            Category::Diagonal => {
                let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
                Tuple::new(a, a, b, b)
            }
            Category::DiagonalDistinct | Category::Exchange => {
                let a = rng.random_range(0..n);
                let b = (a + rng.random_range(1..n)) % n;
                if cat == Category::Exchange {
                    Tuple::new(a, b, b, a)
                } else {
                    Tuple::new(a, a, b, b)
                }
            }
            Category::AllEqual => {
                let a = rng.random_range(0..n);
                Tuple::new(a, a, a, a)
            }
            Category::Other => {
                let t = Tuple::new(
                    rng.random_range(0..n),
                    rng.random_range(0..n),
                    rng.random_range(0..n),
                    rng.random_range(0..n),
                );
                if t.category() != Category::Other {
                    continue;
                }
                t
            }
        };
        if seen.insert(t) {
            out.push(t);
        }
    }
    Ok((out, false))
}

fn check_tuples(tuples: &[Tuple], n: usize) -> Result<()> {
    if let Some(t) = tuples.iter().find(|t| t.max_index() >= n) {
        return Err(Error::IndexOutOfRange {
            index: t.max_index(),
            dim: n,
        });
    }
    Ok(())
}

/// Per-sample `C(t)` for `t = -t_max..=t_max`, tuple-major.
pub fn corr_time_sample(
    s: &SpectralData,
    tuples: &[Tuple],
    t_max: usize,
) -> Result<Vec<Complex64>> {
    let n = s.dim();
    check_tuples(tuples, n)?;
    // U(t)_{ab} for t >= 0 is needed for (n, n'), (m, m') and, through
    // U(-t)_{ab} = conj(U(t)_{ba}), for the transposed entries
    let mut entries: HashMap<(usize, usize), usize> = HashMap::new();
    for t in tuples {
        for e in [
            (t.n, t.n_prime),
            (t.m, t.m_prime),
            (t.n_prime, t.n),
            (t.m_prime, t.m),
        ] {
            let next = entries.len();
            entries.entry(e).or_insert(next);
        }
    }
    let v = s.eigenvectors();
    let mut weights = CMatrix::zeros(entries.len(), n);
    for (&(a, b), &row) in &entries {
        for nu in 0..n {
            weights[(row, nu)] = v[(a, nu)] * v[(b, nu)].conj();
        }
    }
    let series = weights * s.phase_table(t_max);
    let width = 2 * t_max + 1;
    let mut out = vec![Complex64::new(0.0, 0.0); tuples.len() * width];
    for (k, t) in tuples.iter().enumerate() {
        let nn = entries[&(t.n, t.n_prime)];
        let mm = entries[&(t.m, t.m_prime)];
        let nn_t = entries[&(t.n_prime, t.n)];
        let mm_t = entries[&(t.m_prime, t.m)];
        for step in 0..=t_max {
            out[k * width + t_max + step] = series[(nn, step)] * series[(mm, step)].conj();
            out[k * width + t_max - step] = series[(nn_t, step)].conj() * series[(mm_t, step)];
        }
    }
    Ok(out)
}

/// Per-sample `C(w)` on `grid` (tuple-major) and the exact `v = m` mass of
/// each tuple. Histogram bins exclude `v = m`; Lorentzian points include it.
pub fn corr_freq_sample(
    s: &SpectralData,
    tuples: &[Tuple],
    grid: &OmegaGrid,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let n = s.dim();
    check_tuples(tuples, n)?;
    let v = s.eigenvectors();
    let table = PairTable::new(s.quasienergies(), grid);
    let g = grid.bins;
    let mut out = vec![Complex64::new(0.0, 0.0); tuples.len() * g];
    let mut delta = Vec::with_capacity(tuples.len());
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    let mut y = vec![Complex64::new(0.0, 0.0); n];
    for (k, t) in tuples.iter().enumerate() {
        for nu in 0..n {
            x[nu] = v[(t.n, nu)] * v[(t.n_prime, nu)].conj();
            y[nu] = v[(t.m_prime, nu)] * v[(t.m, nu)].conj();
        }
        table.accumulate(|a, b| x[a] * y[b], false, &mut out[k * g..(k + 1) * g]);
        delta.push((0..n).map(|nu| x[nu] * y[nu]).sum());
    }
    Ok((out, delta))
}

/// Where correlators are evaluated.
#[derive(Debug, Clone, PartialEq)]
pub enum CorrGrid {
    /// `t = -t_max..=t_max`.
    Time {
        t_max: usize,
    },
    Frequency(OmegaGrid),
}

impl CorrGrid {
    pub fn points(&self) -> Vec<f64> {
        match self {
            Self::Time { t_max } => (-(*t_max as i64)..=*t_max as i64)
                .map(|t| t as f64)
                .collect(),
            Self::Frequency(g) => g.centers(),
        }
    }

    fn has_delta(&self) -> bool {
        matches!(self, Self::Frequency(g) if g.is_histogram())
    }
}

/// One measured correlator (a single tuple or a category average).
#[derive(Debug, Clone, PartialEq)]
pub struct CorrRow {
    pub label: String,
    pub tuples: Vec<Tuple>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub err_re: Vec<f64>,
    pub err_im: Vec<f64>,
    /// `(re, im, error)` of the `v = m` delta mass (histogram grids only).
    pub delta: Option<(f64, f64, f64)>,
}

impl CorrRow {
    pub fn max_abs_z(&self, predicted: &[f64]) -> f64 {
        crate::stats::Estimate {
            grid: Vec::new(),
            mean: self.re.clone(),
            error: self.err_re.clone(),
            samples: 0,
        }
        .max_abs_z(predicted)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationEstimate {
    pub grid: CorrGrid,
    pub points: Vec<f64>,
    pub rows: Vec<CorrRow>,
    pub samples: usize,
}

fn per_sample(
    s: &SpectralData,
    tuples: &[Tuple],
    grid: &CorrGrid,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    match grid {
        CorrGrid::Time { t_max } => Ok((corr_time_sample(s, tuples, *t_max)?, Vec::new())),
        CorrGrid::Frequency(g) => corr_freq_sample(s, tuples, g),
    }
}

/// Flat per-sample layout shared by every tuple: `re(G), im(G), delta re, delta im`.
fn row_width(grid: &CorrGrid) -> usize {
    2 * grid.points().len() + 2
}

fn push_row(dst: &mut Vec<f64>, vals: &[Complex64], delta: Option<Complex64>) {
    dst.extend(vals.iter().map(|z| z.re));
    dst.extend(vals.iter().map(|z| z.im));
    let d = delta.unwrap_or_default();
    dst.push(d.re);
    dst.push(d.im);
}

fn row_from(
    label: String,
    tuples: Vec<Tuple>,
    g: usize,
    mean: &[f64],
    err: &[f64],
    has_delta: bool,
) -> CorrRow {
    CorrRow {
        label,
        tuples,
        re: mean[..g].to_vec(),
        im: mean[g..2 * g].to_vec(),
        err_re: err[..g].to_vec(),
        err_im: err[g..2 * g].to_vec(),
        delta: has_delta.then(|| {
            (
                mean[2 * g],
                mean[2 * g + 1],
                err[2 * g].hypot(err[2 * g + 1]),
            )
        }),
    }
}

/// Explicit tuples, one row per tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct TupleKernel {
    pub tuples: Vec<Tuple>,
    pub grid: CorrGrid,
}

impl Kernel for TupleKernel {
    type Output = CorrelationEstimate;

    fn width(&self) -> usize {
        row_width(&self.grid) * self.tuples.len()
    }

    fn sample(&self, s: &SpectralData) -> Result<Vec<f64>> {
        let g = self.grid.points().len();
        let (vals, delta) = per_sample(s, &self.tuples, &self.grid)?;
        let mut row = Vec::with_capacity(self.width());
        for k in 0..self.tuples.len() {
            push_row(&mut row, &vals[k * g..(k + 1) * g], delta.get(k).copied());
        }
        Ok(row)
    }

    fn finish(&self, acc: &Accumulator) -> Result<CorrelationEstimate> {
        let g = self.grid.points().len();
        let w = row_width(&self.grid);
        let (mean, err) = acc.mean_with_error()?;
        let rows = self
            .tuples
            .iter()
            .enumerate()
            .map(|(k, t)| {
                row_from(
                    t.label(),
                    vec![*t],
                    g,
                    &mean[k * w..(k + 1) * w],
                    &err[k * w..(k + 1) * w],
                    self.grid.has_delta(),
                )
            })
            .collect();
        Ok(CorrelationEstimate {
            points: self.grid.points(),
            grid: self.grid.clone(),
            rows,
            samples: acc.count() as usize,
        })
    }
}

/// Ensemble estimate of explicit tuples, one row per tuple.
pub fn corr_tuples<I>(ensemble: I, tuples: &[Tuple], grid: &CorrGrid) -> Result<CorrelationEstimate>
where
    I: IntoIterator,
    I::Item: Borrow<SpectralData>,
{
    run_kernel(
        &TupleKernel {
            tuples: tuples.to_vec(),
            grid: grid.clone(),
        },
        ensemble,
        DEFAULT_BLOCKS,
    )
}

/// Time-domain correlator on `t = -t_max..=t_max`.
pub fn corr_time<I>(
    ensemble: I,
    probe: &IndexProbe,
    t_max: usize,
    n: usize,
) -> Result<CorrelationEstimate>
where
    I: IntoIterator,
    I::Item: Borrow<SpectralData>,
{
    let grid = CorrGrid::Time { t_max };
    match probe {
        IndexProbe::Tuples(t) => corr_tuples(ensemble, t, &grid),
        IndexProbe::Category(c) => {
            category_aggregate(ensemble, *c, n, &grid, DEFAULT_TUPLE_BUDGET, 0)
        }
    }
}

/// Frequency-domain correlator on `grid`.
pub fn corr_freq<I>(
    ensemble: I,
    probe: &IndexProbe,
    grid: &OmegaGrid,
    n: usize,
) -> Result<CorrelationEstimate>
where
    I: IntoIterator,
    I::Item: Borrow<SpectralData>,
{
    let grid = CorrGrid::Frequency(grid.clone());
    match probe {
        IndexProbe::Tuples(t) => corr_tuples(ensemble, t, &grid),
        IndexProbe::Category(c) => {
            category_aggregate(ensemble, *c, n, &grid, DEFAULT_TUPLE_BUDGET, 0)
        }
    }
}

/// Where a closed form is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorrPoint {
    Time(i64),
    /// Smooth part at `omega`; the delta mass is returned by [`corr_freq_rmt`].
    Omega(f64),
}

pub fn corr_rmt(at: CorrPoint, n: usize, category: Category, variant: Variant) -> Result<f64> {
    match at {
        CorrPoint::Time(t) => corr_time_rmt(t, n, category, variant),
        CorrPoint::Omega(w) => corr_freq_rmt(w, n, category, variant).map(|(s, _)| s),
    }
}

/// Category average over a uniform tuple subsample (every tuple if the
/// category fits in the budget). Errors combine the Monte Carlo error of the
/// average with the tuple-sampling error
/// `tau^2 / J (1 - J / |cat|)`, where `tau^2` is the between-tuple variance
/// net of each tuple's own Monte Carlo variance.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryKernel {
    pub category: Category,
    pub n: usize,
    pub grid: CorrGrid,
    tuples: Vec<Tuple>,
    exhaustive: bool,
}

impl CategoryKernel {
    pub fn new(
        category: Category,
        n: usize,
        grid: CorrGrid,
        budget: usize,
        seed: u64,
    ) -> Result<Self> {
        let (tuples, exhaustive) = sample_category(category, n, budget, seed)?;
        Ok(Self {
            category,
            n,
            grid,
            tuples,
            exhaustive,
        })
    }

    pub fn tuples(&self) -> &[Tuple] {
        &self.tuples
    }

    pub fn exhaustive(&self) -> bool {
        self.exhaustive
    }

    // layout: category mean row, then per-tuple real parts (subsampled only)
    fn per_tuple(&self) -> usize {
        if self.exhaustive {
            0
        } else {
            self.tuples.len() * self.grid.points().len()
        }
    }
}

impl Kernel for CategoryKernel {
    type Output = CorrelationEstimate;

    fn width(&self) -> usize {
        row_width(&self.grid) + self.per_tuple()
    }

    fn sample(&self, s: &SpectralData) -> Result<Vec<f64>> {
        if s.dim() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: s.dim(),
            });
        }
        let j = self.tuples.len();
        let g = self.grid.points().len();
        let (vals, delta) = per_sample(s, &self.tuples, &self.grid)?;
        let inv = 1.0 / j as f64;
        let mut mean = vec![Complex64::new(0.0, 0.0); g];
        for k in 0..j {
            for (m, v) in mean.iter_mut().zip(&vals[k * g..(k + 1) * g]) {
                *m += v * inv;
            }
        }
        let dmean = (!delta.is_empty()).then(|| delta.iter().sum::<Complex64>() * inv);
        let mut row = Vec::with_capacity(self.width());
        push_row(&mut row, &mean, dmean);
        if !self.exhaustive {
            row.extend(vals.iter().map(|z| z.re));
        }
        Ok(row)
    }

    fn finish(&self, acc: &Accumulator) -> Result<CorrelationEstimate> {
        let j = self.tuples.len();
        let g = self.grid.points().len();
        let w = row_width(&self.grid);
        let (mean, mut err) = acc.mean_with_error()?;
        if !self.exhaustive {
            let fpc = 1.0 - j as f64 / self.category.count(self.n) as f64;
            for p in 0..g {
                let xs: Vec<f64> = (0..j).map(|k| mean[w + k * g + p]).collect();
                let xbar = xs.iter().sum::<f64>() / j as f64;
                let sb2 =
                    xs.iter().map(|x| (x - xbar).powi(2)).sum::<f64>() / (j as f64 - 1.0).max(1.0);
                let mc2 = (0..j).map(|k| err[w + k * g + p].powi(2)).sum::<f64>() / j as f64;
                let tau2 = (sb2 - mc2).max(0.0);
                err[p] = (err[p].powi(2) + tau2 / j as f64 * fpc).sqrt();
            }
        }
        let name = self.category.name();
        let label = if self.exhaustive {
            name.to_string()
        } else {
            format!("{name} ({j} sampled)")
        };
        let row = row_from(
            label,
            self.tuples.clone(),
            g,
            &mean[..w],
            &err[..w],
            self.grid.has_delta(),
        );
        Ok(CorrelationEstimate {
            points: self.grid.points(),
            grid: self.grid.clone(),
            rows: vec![row],
            samples: acc.count() as usize,
        })
    }
}

/// Category average; see [`CategoryKernel`].
pub fn category_aggregate<I>(
    ensemble: I,
    category: Category,
    n: usize,
    grid: &CorrGrid,
    budget: usize,
    seed: u64,
) -> Result<CorrelationEstimate>
where
    I: IntoIterator,
    I::Item: Borrow<SpectralData>,
{
    run_kernel(
        &CategoryKernel::new(category, n, grid.clone(), budget, seed)?,
        ensemble,
        DEFAULT_BLOCKS,
    )
}

/// Outcome of comparing a time-domain estimate, Fourier transformed onto the
/// frequency grid, with a direct frequency-domain estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierReport {
    /// `max |F[C(t)] - C(w)|` over rows and grid points (real and imaginary parts).
    pub max_abs_diff: f64,
    /// Estimated contribution of `|t| > t_max`.
    pub tail_bound: f64,
    /// Largest `max(0, |diff| - tail) / error`.
    pub max_z: f64,
    /// `(row label, transformed values, direct values)`.
    pub rows: Vec<(String, Vec<Complex64>, Vec<Complex64>)>,
}

/// Compares `(1/2pi) sum_{|t| <= t_max} (C(t) - w) e^{iwt}`, bin-averaged,
/// against the frequency estimate (`w` is the delta mass). On a Lorentzian grid
/// whose truncation order equals `t_max` the two agree identically.
pub fn fourier_check(
    time_est: &CorrelationEstimate,
    freq_est: &CorrelationEstimate,
) -> Result<FourierReport> {
    let t_max = match time_est.grid {
        CorrGrid::Time { t_max } => t_max,
        _ => {
            return Err(Error::ProbeMismatch(
                "first estimate must be time-domain".into(),
            ))
        }
    };
    let grid = match &freq_est.grid {
        CorrGrid::Frequency(g) => g,
        _ => {
            return Err(Error::ProbeMismatch(
                "second estimate must be frequency-domain".into(),
            ))
        }
    };
    if let GridMode::Lorentzian { t_max: tm, .. } = grid.mode {
        if tm != Some(t_max) {
            return Err(Error::ProbeMismatch(format!(
                "Lorentzian truncation {tm:?} differs from time range {t_max}"
            )));
        }
    }
    if time_est.rows.len() != freq_est.rows.len()
        || time_est
            .rows
            .iter()
            .zip(&freq_est.rows)
            .any(|(a, b)| a.tuples != b.tuples)
    {
        return Err(Error::ProbeMismatch(
            "estimates cover different tuples".into(),
        ));
    }
    let times: Vec<i64> = (-(t_max as i64)..=t_max as i64).collect();
    let centers = grid.centers();
    let half = grid.width() / 2.0;
    let mut report = FourierReport {
        max_abs_diff: 0.0,
        tail_bound: 0.0,
        max_z: 0.0,
        rows: Vec::new(),
    };
    for (tr, fr) in time_est.rows.iter().zip(&freq_est.rows) {
        let w = fr
            .delta
            .map(|(re, im, _)| Complex64::new(re, im))
            .unwrap_or_default();
        let w_err = fr.delta.map(|d| d.2).unwrap_or(0.0);
        let series: Vec<Complex64> = tr
            .re
            .iter()
            .zip(&tr.im)
            .map(|(&a, &b)| Complex64::new(a, b) - w)
            .collect();
        let transformed = fourier_to_grid(&times, &series, grid);

        let tail = if grid.is_histogram() {
            let quarter = (t_max / 4).max(1);
            let rms = (series[series.len() - quarter..]
                .iter()
                .map(|z| z.norm_sqr())
                .sum::<f64>()
                / quarter as f64)
                .sqrt();
            let weight: f64 = (t_max + 1..=2 * t_max)
                .map(|t| (t as f64 * half).sin().abs() / (t as f64 * half))
                .sum();
            rms * weight / std::f64::consts::PI
        } else {
            0.0
        };
        report.tail_bound = report.tail_bound.max(tail);

        let direct: Vec<Complex64> = fr
            .re
            .iter()
            .zip(&fr.im)
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect();
        for (p, &c) in centers.iter().enumerate() {
            let mut var_t = 0.0;
            let mut kernel_sum = Complex64::new(0.0, 0.0);
            for (k, &t) in times.iter().enumerate() {
                let tf = t as f64;
                let weight = match grid.mode {
                    GridMode::Histogram => {
                        if t == 0 {
                            1.0
                        } else {
                            (tf * half).sin() / (tf * half)
                        }
                    }
                    GridMode::Lorentzian { eta, .. } => (-tf.abs() * eta).exp(),
                };
                var_t += (tr.err_re[k].powi(2) + tr.err_im[k].powi(2)) * weight * weight;
                kernel_sum += Complex64::cis(c * tf) * weight;
            }
            let err_transformed = (var_t.sqrt() + w_err * kernel_sum.norm()) / TAU;
            let err = err_transformed.hypot(fr.err_re[p].hypot(fr.err_im[p]));
            let diff = (transformed[p] - direct[p]).norm();
            report.max_abs_diff = report.max_abs_diff.max(diff);
            let excess = (diff - tail).max(0.0);
            if excess > 0.0 {
                report.max_z = report.max_z.max(if err > 0.0 {
                    excess / err
                } else {
                    f64::INFINITY
                });
            }
        }
        report.rows.push((tr.label.clone(), transformed, direct));
    }
    Ok(report)
}
