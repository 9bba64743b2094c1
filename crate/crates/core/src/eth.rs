//! Observables in the quasienergy eigenbasis: matrix-element statistics,
//! operator correlators and density-matrix relaxation.

use std::borrow::Borrow;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::eigencorr::{CorrGrid, CorrRow, CorrelationEstimate};
use crate::error::{Error, Result};
use crate::lattice::QuditSpace;
use crate::spectral::{run_kernel, Kernel, OmegaGrid, PairTable, SpectralData};
use crate::stats::{Accumulator, Estimate, DEFAULT_BLOCKS};
use crate::theory;
use crate::CMatrix;

pub use crate::theory::{eth_rmt_prediction, EthPrediction};

pub const HERMITIAN_TOL: f64 = 1e-12;

fn hermiticity_residual(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut r = 0.0f64;
    for i in 0..n {
        for j in 0..=i {
            r = r.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    r
}

/// Hermitian operator with cached `Tr O` and `Tr O^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableOp {
    matrix: CMatrix,
    support: Vec<usize>,
    trace: f64,
    trace_sq: f64,
}

impl ObservableOp {
    pub fn new(matrix: CMatrix, support: Vec<usize>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                actual: matrix.ncols(),
            });
        }
        let residual = hermiticity_residual(&matrix);
        if residual > HERMITIAN_TOL {
            return Err(Error::NotHermitian { residual });
        }
        let trace = matrix.diagonal().iter().map(|z| z.re).sum();
        let trace_sq = matrix.iter().map(|z| z.norm_sqr()).sum();
        Ok(Self {
            matrix,
            support,
            trace,
            trace_sq,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            matrix: CMatrix::identity(n, n),
            support: Vec::new(),
            trace: n as f64,
            trace_sq: n as f64,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }

    pub fn trace_sq(&self) -> f64 {
        self.trace_sq
    }
}

/// Named local operators. `Z` is `diag(1, ..., -1)` with equally spaced
/// entries; `X` and `Y` act on the two lowest levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Template {
    Identity,
    Z,
    X,
    Y,
    Zz,
    /// Row-major `[re, im]` entries of a `q x q` or `q^2 x q^2` matrix.
    Custom {
        matrix: Vec<Vec<[f64; 2]>>,
    },
}

impl Template {
    /// Local matrix and the number of sites it acts on.
    pub fn local_matrix(&self, q: usize) -> Result<(CMatrix, usize)> {
        let c = |re: f64| Complex64::new(re, 0.0);
        let z = CMatrix::from_fn(q, q, |r, k| {
            if r == k {
                c(1.0 - 2.0 * r as f64 / (q - 1) as f64)
            } else {
                c(0.0)
            }
        });
        Ok(match self {
            Self::Identity => (CMatrix::identity(q, q), 1),
            Self::Z => (z, 1),
            Self::X => {
                let mut m = CMatrix::zeros(q, q);
                m[(0, 1)] = c(1.0);
                m[(1, 0)] = c(1.0);
                (m, 1)
            }
            Self::Y => {
                let mut m = CMatrix::zeros(q, q);
                m[(0, 1)] = Complex64::new(0.0, -1.0);
                m[(1, 0)] = Complex64::new(0.0, 1.0);
                (m, 1)
            }
            Self::Zz => (z.kronecker(&z), 2),
            Self::Custom { matrix } => {
                let d = matrix.len();
                if matrix.iter().any(|row| row.len() != d) {
                    return Err(Error::InvalidParameter(
                        "custom template must be square".into(),
                    ));
                }
                let sites = if d == q {
                    1
                } else if d == q * q {
                    2
                } else {
                    return Err(Error::DimensionMismatch {
                        expected: q,
                        actual: d,
                    });
                };
                (
                    CMatrix::from_fn(d, d, |r, k| {
                        Complex64::new(matrix[r][k][0], matrix[r][k][1])
                    }),
                    sites,
                )
            }
        })
    }
}

/// Embeds a template acting on `sites` (first site = most significant local digit).
pub fn build_local_observable(
    template: &Template,
    sites: &[usize],
    space: QuditSpace,
) -> Result<ObservableOp> {
    let n = space.dim();
    if *template == Template::Identity {
        return Ok(ObservableOp::identity(n));
    }
    let (local, arity) = template.local_matrix(space.q)?;
    let residual = hermiticity_residual(&local);
    if residual > HERMITIAN_TOL {
        return Err(Error::NotHermitian { residual });
    }
    if sites.len() != arity {
        return Err(Error::InvalidParameter(format!(
            "template acts on {arity} site(s), got {}",
            sites.len()
        )));
    }
    if let Some(&s) = sites.iter().find(|&&s| s >= space.sites) {
        return Err(Error::IndexOutOfRange {
            index: s,
            dim: space.sites,
        });
    }
    if arity == 2 && sites[0] == sites[1] {
        return Err(Error::InvalidParameter(
            "two-site template needs distinct sites".into(),
        ));
    }
    let q = space.q;
    let d = local.nrows();
    let strides: Vec<usize> = sites.iter().map(|&s| space.stride(s)).collect();
    let mut m = CMatrix::zeros(n, n);
    for col in 0..n {
        let digits: Vec<usize> = sites.iter().map(|&s| space.digit(col, s)).collect();
        let l = digits.iter().fold(0, |acc, &x| acc * q + x);
        let base = col
            - digits
                .iter()
                .zip(&strides)
                .map(|(x, st)| x * st)
                .sum::<usize>();
        for lp in 0..d {
            let v = local[(lp, l)];
            if v == Complex64::new(0.0, 0.0) {
                continue;
            }
            let mut row = base;
            let mut rest = lp;
            for k in (0..arity).rev() {
                row += (rest % q) * strides[k];
                rest /= q;
            }
            m[(row, col)] = v;
        }
    }
    ObservableOp::new(m, sites.to_vec())
}

/// `O_{vm} = <v|O|m>`, i.e. `V^dag O V`.
pub fn matrix_elements(o: &ObservableOp, s: &SpectralData) -> Result<CMatrix> {
    if o.dim() != s.dim() {
        return Err(Error::DimensionMismatch {
            expected: s.dim(),
            actual: o.dim(),
        });
    }
    let v = s.eigenvectors();
    Ok(v.adjoint() * o.matrix() * v)
}

/// Value and jackknife error.
pub type Measured = (f64, f64);

#[derive(Debug, Clone, PartialEq)]
pub struct EthStatistics {
    /// `<O_vv>` pooled over `v`.
    pub diag_mean: Measured,
    /// `<|O_vv|^2>`.
    pub diag_second_moment: Measured,
    /// `<|O_vv|^2> - <O_vv>^2`.
    pub diag_variance: Measured,
    /// `<|O_vm|^2>` pooled over `v != m`.
    pub offdiag_variance: Measured,
    /// `<|O_vm|^2>` in each `omega` bin (`v != m`).
    pub offdiag_by_omega: Estimate,
    /// `f(w) = sqrt(N <|O_vm|^2>(w))`; equals `N sqrt(C_O(w) / R2(w))` with the
    /// measured two-level function.
    pub f_omega: Estimate,
    /// Excess kurtosis of `Re O_vm` (`v < m`); zero for Gaussian elements.
    pub excess_kurtosis: Measured,
    /// Pearson correlation of `|O_{v,v+1}|^2` and `|O_{v+1,v+2}|^2`.
    pub neighbour_correlation: Measured,
    pub samples: usize,
}

const ETH_SCALARS: usize = 10;

fn eth_sample(o: &ObservableOp, s: &SpectralData, grid: &OmegaGrid) -> Result<Vec<f64>> {
    let n = s.dim();
    let m = matrix_elements(o, s)?;
    let nf = n as f64;
    let diag_mean = (0..n).map(|k| m[(k, k)].re).sum::<f64>() / nf;
    let diag_sq = (0..n).map(|k| m[(k, k)].norm_sqr()).sum::<f64>() / nf;
    let mut off = 0.0;
    let (mut m2, mut m4) = (0.0, 0.0);
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            off += m[(a, b)].norm_sqr();
            if a < b {
                let re = m[(a, b)].re;
                m2 += re * re;
                m4 += re.powi(4);
            }
        }
    }
    let pairs = nf * (nf - 1.0);
    off /= pairs;
    m2 /= pairs / 2.0;
    m4 /= pairs / 2.0;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let trip = n.saturating_sub(2);
    for k in 0..trip {
        let x = m[(k, k + 1)].norm_sqr();
        let y = m[(k + 1, k + 2)].norm_sqr();
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
    }
    let tf = trip.max(1) as f64;
    let mut out = vec![
        diag_mean,
        diag_sq,
        off,
        m2,
        m4,
        sx / tf,
        sy / tf,
        sxx / tf,
        syy / tf,
        sxy / tf,
    ];
    let table = PairTable::new(s.quasienergies(), grid);
    let mut sums = vec![0.0; grid.bins];
    let mut counts = vec![0.0; grid.bins];
    table.accumulate(|a, b| m[(a, b)].norm_sqr(), false, &mut sums);
    table.accumulate(|_, _| 1.0, false, &mut counts);
    out.extend(sums);
    out.extend(counts);
    Ok(out)
}

/// Matrix-element statistics of a fixed observable.
#[derive(Debug, Clone, PartialEq)]
pub struct EthKernel {
    pub observable: ObservableOp,
    pub grid: OmegaGrid,
}

impl EthKernel {
    pub fn new(observable: ObservableOp, grid: OmegaGrid) -> Result<Self> {
        if !grid.is_histogram() {
            return Err(Error::InvalidParameter(
                "matrix-element statistics use histogram grids".into(),
            ));
        }
        Ok(Self { observable, grid })
    }
}

impl Kernel for EthKernel {
    type Output = EthStatistics;

    fn width(&self) -> usize {
        ETH_SCALARS + 2 * self.grid.bins
    }

    fn sample(&self, s: &SpectralData) -> Result<Vec<f64>> {
        eth_sample(&self.observable, s, &self.grid)
    }

    fn finish(&self, acc: &Accumulator) -> Result<EthStatistics> {
        let b = self.grid.bins;
        let n = self.observable.dim() as f64;
        let (v, e) = acc.jackknife(|m| {
            let kurt = m[4] / (m[3] * m[3]) - 3.0;
            let cov = m[9] - m[5] * m[6];
            let corr = cov / ((m[7] - m[5] * m[5]) * (m[8] - m[6] * m[6])).sqrt();
            vec![m[0], m[1], m[1] - m[0] * m[0], m[2], kurt, corr]
        })?;
        let (ratio, ratio_err) = acc.jackknife(|m| {
            (0..b)
                .map(|j| m[ETH_SCALARS + j] / m[ETH_SCALARS + b + j])
                .collect()
        })?;
        let (f, f_err) = acc.jackknife(|m| {
            (0..b)
                .map(|j| (n * m[ETH_SCALARS + j] / m[ETH_SCALARS + b + j]).sqrt())
                .collect()
        })?;
        let samples = acc.count() as usize;
        let centers = self.grid.centers();
        Ok(EthStatistics {
            diag_mean: (v[0], e[0]),
            diag_second_moment: (v[1], e[1]),
            diag_variance: (v[2], e[2]),
            offdiag_variance: (v[3], e[3]),
            offdiag_by_omega: Estimate {
                grid: centers.clone(),
                mean: ratio,
                error: ratio_err,
                samples,
            },
            f_omega: Estimate {
                grid: centers,
                mean: f,
                error: f_err,
                samples,
            },
            excess_kurtosis: (v[4], e[4]),
            neighbour_correlation: (v[5], e[5]),
            samples,
        })
    }
}

/// Matrix-element statistics of a fixed observable over an ensemble.
pub fn eth_statistics<I>(o: &ObservableOp, ensemble: I, grid: &OmegaGrid) -> Result<EthStatistics>
where
    I: IntoIterator,
    I::Item: Borrow<SpectralData>,
{
    run_kernel(
        &EthKernel::new(o.clone(), grid.clone())?,
        ensemble,
        DEFAULT_BLOCKS,
    )
}

/// Per-sample `C_{OO'}` on `grid`: `(1/N) sum_{vm} O_{mv} O'_{vm} e^{-i(E_v - E_m) t}`.
/// Frequency grids also return the `v = m` delta mass.
pub fn dyn_corr_sample(
    o: &ObservableOp,
    o2: &ObservableOp,
    s: &SpectralData,
    grid: &CorrGrid,
) -> Result<(Vec<Complex64>, Complex64)> {
    if o.dim() != o2.dim() {
        return Err(Error::DimensionMismatch {
            expected: o.dim(),
            actual: o2.dim(),
        });
    }
    let a = matrix_elements(o, s)?;
    let b = matrix_elements(o2, s)?;
    let n = s.dim();
    let inv = 1.0 / n as f64;
    // w[(v, m)] = O_{mv} O'_{vm} / N
    let w = CMatrix::from_fn(n, n, |v, m| a[(m, v)] * b[(v, m)] * inv);
    match grid {
        CorrGrid::Time { t_max } => {
            let tm = *t_max;
            let p = s.phase_table(tm);
            let wp = &w * &p;
            let wpc = &w * p.map(|z| z.conj());
            let mut out = vec![Complex64::new(0.0, 0.0); 2 * tm + 1];
            for t in 0..=tm {
                let mut pos = Complex64::new(0.0, 0.0);
                let mut neg = Complex64::new(0.0, 0.0);
                for v in 0..n {
                    pos += p[(v, t)] * wpc[(v, t)];
                    neg += p[(v, t)].conj() * wp[(v, t)];
                }
                out[tm + t] = pos;
                out[tm - t] = neg;
            }
            Ok((out, Complex64::new(0.0, 0.0)))
        }
        CorrGrid::Frequency(g) => {
            let table = PairTable::new(s.quasienergies(), g);
            let mut out = vec![Complex64::new(0.0, 0.0); g.bins];
            table.accumulate(|v, m| w[(v, m)], false, &mut out);
            let delta = if g.is_histogram() {
                (0..n).map(|v| w[(v, v)]).sum()
            } else {
                Complex64::new(0.0, 0.0)
            };
            Ok((out, delta))
        }
    }
}

/// `C_{OO'}` as a single-row correlation estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct DynCorrKernel {
    pub o: ObservableOp,
    pub o2: ObservableOp,
    pub grid: CorrGrid,
}

impl Kernel for DynCorrKernel {
    type Output = CorrelationEstimate;

    fn width(&self) -> usize {
        2 * self.grid.points().len() + 2
    }

    fn sample(&self, s: &SpectralData) -> Result<Vec<f64>> {
        let (vals, delta) = dyn_corr_sample(&self.o, &self.o2, s, &self.grid)?;
        let mut row: Vec<f64> = vals.iter().map(|z| z.re).collect();
        row.extend(vals.iter().map(|z| z.im));
        row.push(delta.re);
        row.push(delta.im);
        Ok(row)
    }

    fn finish(&self, acc: &Accumulator) -> Result<CorrelationEstimate> {
        let g = self.grid.points().len();
        let (m, e) = acc.mean_with_error()?;
        let has_delta = matches!(&self.grid, CorrGrid::Frequency(gr) if gr.is_histogram());
        let row = CorrRow {
            label: "C_OO'".into(),
            tuples: Vec::new(),
            re: m[..g].to_vec(),
            im: m[g..2 * g].to_vec(),
            err_re: e[..g].to_vec(),
            err_im: e[g..2 * g].to_vec(),
            delta: has_delta.then(|| (m[2 * g], m[2 * g + 1], e[2 * g].hypot(e[2 * g + 1]))),
        };
        Ok(CorrelationEstimate {
            grid: self.grid.clone(),
            points: self.grid.points(),
            rows: vec![row],
            samples: acc.count() as usize,
        })
    }
}

/// Ensemble `C_{OO'}` as a single-row correlation estimate.
pub fn dyn_corr<I>(
    o: &ObservableOp,
    o2: &ObservableOp,
    ensemble: I,
    grid: &CorrGrid,
) -> Result<CorrelationEstimate>
where
    I: IntoIterator,
    I::Item: Borrow<SpectralData>,
{
    let kernel = DynCorrKernel {
        o: o.clone(),
        o2: o2.clone(),
        grid: grid.clone(),
    };
    run_kernel(&kernel, ensemble, DEFAULT_BLOCKS)
}

/// Traces entering the operator-correlator closed forms.
pub fn operator_traces(o: &ObservableOp, o2: &ObservableOp) -> theory::OperatorTraces {
    let tr_ab = (o.matrix() * o2.matrix()).trace().re;
    theory::OperatorTraces {
        trace_a: o.trace(),
        trace_b: o2.trace(),
        trace_ab: tr_ab,
    }
}

pub const TRACE_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = 1e-10;

/// Hermitian, unit-trace, positive semidefinite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(CMatrix);

impl DensityMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        let residual = hermiticity_residual(&m);
        if residual > HERMITIAN_TOL {
            return Err(Error::NotHermitian { residual });
        }
        let tr = m.trace();
        if (tr - 1.0).norm() > TRACE_TOL {
            return Err(Error::InvalidParameter(format!(
                "density matrix trace {tr} != 1"
            )));
        }
        let min = m
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min < -POSITIVITY_TOL {
            return Err(Error::InvalidParameter(format!(
                "density matrix has negative eigenvalue {min}"
            )));
        }
        Ok(Self(m))
    }

    /// `|psi><psi|` for a normalized state.
    pub fn pure(psi: &[Complex64]) -> Result<Self> {
        let v = nalgebra::DVector::from_column_slice(psi);
        Self::new(&v * v.adjoint())
    }

    /// `|k><k|` in an `n`-dimensional space.
    pub fn basis_state(n: usize, k: usize) -> Result<Self> {
        if k >= n {
            return Err(Error::IndexOutOfRange { index: k, dim: n });
        }
        let mut m = CMatrix::zeros(n, n);
        m[(k, k)] = Complex64::new(1.0, 0.0);
        Ok(Self(m))
    }

    /// Infinite-temperature state `I / N`.
    pub fn thermal(n: usize) -> Self {
        Self(CMatrix::identity(n, n) / Complex64::new(n as f64, 0.0))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }
}

/// Entries tracked by [`rho_evolve`] when none are given: the diagonal and the first row.
pub fn default_probes(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .map(|k| (k, k))
        .chain((1..n).map(|k| (0, k)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhoEstimate {
    pub times: Vec<i64>,
    pub probes: Vec<(usize, usize)>,
    /// Real and imaginary parts of each probe over `times`.
    pub re: Vec<Estimate>,
    pub im: Vec<Estimate>,
    /// `<Tr(O rho(t))>` for each observable.
    pub tracks: Vec<Estimate>,
    pub samples: usize,
}

/// Per-sample `rho(t) = U(t) rho0 U(t)^dag`.
pub fn evolve_sample(rho0: &DensityMatrix, s: &SpectralData, t: i64) -> CMatrix {
    let u = s.evolution(t);
    &u * rho0.matrix() * u.adjoint()
}

/// `rho_{nm}(t)` at fixed probes plus observable tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoKernel {
    pub rho0: DensityMatrix,
    pub times: Vec<i64>,
    pub probes: Vec<(usize, usize)>,
    pub observables: Vec<ObservableOp>,
}

impl RhoKernel {
    pub fn new(
        rho0: DensityMatrix,
        times: Vec<i64>,
        probes: Vec<(usize, usize)>,
        observables: Vec<ObservableOp>,
    ) -> Result<Self> {
        let n = rho0.dim();
        if let Some(&(a, b)) = probes.iter().find(|&&(a, b)| a >= n || b >= n) {
            return Err(Error::IndexOutOfRange {
                index: a.max(b),
                dim: n,
            });
        }
        if let Some(o) = observables.iter().find(|o| o.dim() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: o.dim(),
            });
        }
        Ok(Self {
            rho0,
            times,
            probes,
            observables,
        })
    }
}

impl Kernel for RhoKernel {
    type Output = RhoEstimate;

    fn width(&self) -> usize {
        self.times.len() * (2 * self.probes.len() + self.observables.len())
    }

    fn sample(&self, s: &SpectralData) -> Result<Vec<f64>> {
        let n = self.rho0.dim();
        if s.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: s.dim(),
            });
        }
        let (nt, np) = (self.times.len(), self.probes.len());
        let mut row = vec![0.0; self.width()];
        for (k, &t) in self.times.iter().enumerate() {
            let rho = evolve_sample(&self.rho0, s, t);
            for (p, &(a, b)) in self.probes.iter().enumerate() {
                row[p * nt + k] = rho[(a, b)].re;
                row[(np + p) * nt + k] = rho[(a, b)].im;
            }
            for (j, o) in self.observables.iter().enumerate() {
                row[(2 * np + j) * nt + k] = (o.matrix() * &rho).trace().re;
            }
        }
        Ok(row)
    }

    fn finish(&self, acc: &Accumulator) -> Result<RhoEstimate> {
        let (nt, np, no) = (self.times.len(), self.probes.len(), self.observables.len());
        let (m, e) = acc.mean_with_error()?;
        let samples = acc.count() as usize;
        let grid: Vec<f64> = self.times.iter().map(|&t| t as f64).collect();
        let slice = |k: usize| Estimate {
            grid: grid.clone(),
            mean: m[k * nt..(k + 1) * nt].to_vec(),
            error: e[k * nt..(k + 1) * nt].to_vec(),
            samples,
        };
        Ok(RhoEstimate {
            times: self.times.clone(),
            probes: self.probes.clone(),
            re: (0..np).map(slice).collect(),
            im: (np..2 * np).map(slice).collect(),
            tracks: (2 * np..2 * np + no).map(slice).collect(),
            samples,
        })
    }
}

/// Ensemble-averaged `rho_{nm}(t)` at `probes` plus observable tracks.
pub fn rho_evolve<I>(
    rho0: &DensityMatrix,
    ensemble: I,
    times: &[i64],
    probes: &[(usize, usize)],
    observables: &[ObservableOp],
) -> Result<RhoEstimate>
where
    I: IntoIterator,
    I::Item: Borrow<SpectralData>,
{
    let kernel = RhoKernel::new(
        rho0.clone(),
        times.to_vec(),
        probes.to_vec(),
        observables.to_vec(),
    )?;
    run_kernel(&kernel, ensemble, DEFAULT_BLOCKS)
}

/// CUE prediction `rho_th (N^2 - K)/(N^2 - 1) + rho0 (K - 1)/(N^2 - 1)`.
pub fn rho_rmt(rho0: &DensityMatrix, t: i64) -> CMatrix {
    let n = rho0.dim();
    CMatrix::from_fn(n, n, |a, b| {
        theory::rho_entry_rmt(rho0.matrix()[(a, b)], a == b, t, n)
    })
}
