//! Closed-form random-matrix predictions for the CUE.
//!
//! Every prediction the estimators are compared against lives here. Values
//! that contain a periodic delta function at `omega = 0` are split into a
//! smooth part and an explicit delta mass.

use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::spectral::{GridMode, OmegaGrid};

/// Which closed form to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Exact finite-N CUE result.
    Exact,
    /// Leading order in 1/N (the circuit-family result).
    Leading,
    /// Standard-saddle-point smoothed form.
    Smoothed,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "leading" => Ok(Self::Leading),
            "smoothed" => Ok(Self::Smoothed),
            other => Err(Error::UnknownVariant(other.to_string())),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Exact => "exact",
            Self::Leading => "leading",
            Self::Smoothed => "smoothed",
        })
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(x: f64) -> f64 {
    let y = x.rem_euclid(TAU);
    if y > PI {
        y - TAU
    } else {
        y
    }
}

/// `sin^2(N w / 2) / sin^2(w / 2)`, with the limit `N^2` at `w = 0 mod 2 pi`.
pub fn fejer(omega: f64, n: usize) -> f64 {
    let nf = n as f64;
    let s = (omega / 2.0).sin();
    if s.abs() < 1e-7 {
        // second-order expansion around the removable singularity
        let w = wrap_angle(omega);
        return nf * nf * (1.0 - (nf * nf - 1.0) * w * w / 12.0);
    }
    let num = (nf * omega / 2.0).sin();
    num * num / (s * s)
}

/// Exact integral of [`fejer`] over `[a, b]`, from
/// `sin^2(Nw/2)/sin^2(w/2) = N + 2 sum_{k=1}^{N-1} (N - k) cos(k w)`.
pub fn fejer_integral(a: f64, b: f64, n: usize) -> f64 {
    let nf = n as f64;
    let mut acc = nf * (b - a);
    for k in 1..n {
        let kf = k as f64;
        acc += 2.0 * (nf - kf) * ((kf * b).sin() - (kf * a).sin()) / kf;
    }
    acc
}

/// CUE spectral form factor `min(|t|, N) + N^2 [t = 0]`.
pub fn sff_cue(t: i64, n: usize) -> f64 {
    let nf = n as f64;
    let base = (t.unsigned_abs() as f64).min(nf);
    if t == 0 {
        base + nf * nf
    } else {
        base
    }
}

/// Smooth part of the CUE two-level correlation function,
/// `N^2/2pi - sin^2(N w/2) / (2 pi sin^2(w/2))`. The full function adds
/// `N delta(w)`, see [`r2_cue_delta_weight`].
pub fn r2_cue(omega: f64, n: usize) -> f64 {
    let nf = n as f64;
    (nf * nf - fejer(omega, n)) / TAU
}

/// Mass of the `delta(w)` term of the CUE two-level function.
pub fn r2_cue_delta_weight(n: usize) -> f64 {
    n as f64
}

/// Average of [`r2_cue`] over `[a, b]`.
pub fn r2_cue_bin_average(a: f64, b: f64, n: usize) -> f64 {
    let nf = n as f64;
    (nf * nf - fejer_integral(a, b, n) / (b - a)) / TAU
}

/// Smoothed two-level function `N^2/2pi - 1/(4 pi sin^2(w/2))`.
pub fn r2_smoothed(omega: f64, n: usize) -> f64 {
    let nf = n as f64;
    let s = (omega / 2.0).sin();
    nf * nf / TAU - 1.0 / (2.0 * TAU * s * s)
}

/// 2pi-periodic Lorentzian `sum_k e^{ikw - |k| eta} / 2pi`.
pub fn lorentzian(omega: f64, eta: f64) -> f64 {
    eta.sinh() / (TAU * (eta.cosh() - omega.cos()))
}

/// `sum_{|k| <= t_max} e^{ikw - |k| eta} / 2pi`.
pub fn truncated_lorentzian(omega: f64, eta: f64, t_max: usize) -> f64 {
    let r = (-eta).exp();
    let (s, c) = omega.sin_cos();
    let z = num_complex::Complex64::new(r * c, r * s);
    let one = num_complex::Complex64::new(1.0, 0.0);
    let tail = if (one - z).norm() < 1e-9 {
        // z ~ 1: sum_{k=1}^{T} z^k ~ T
        num_complex::Complex64::new(t_max as f64, 0.0)
    } else {
        z * (one - z.powu(t_max as u32)) / (one - z)
    };
    (1.0 + 2.0 * tail.re) / TAU
}

/// CUE partial spectral form factor for a subsystem of dimension `n_a`.
pub fn psff_rmt(t: i64, n: usize, n_a: usize, exactness: Variant) -> Result<f64> {
    if n_a <= 1 || n_a >= n || !n.is_multiple_of(n_a) {
        return Err(Error::InvalidParameter(format!(
            "subsystem dimension {n_a} must satisfy 1 < N_A < N and divide N = {n}"
        )));
    }
    let (nf, na) = (n as f64, n_a as f64);
    let k = sff_cue(t, n);
    match exactness {
        Variant::Exact => {
            Ok(((nf * na - nf / na) * k + nf.powi(3) / na - nf * na) / (nf * nf - 1.0))
        }
        Variant::Leading => {
            let step = if t == 0 { 0.0 } else { 1.0 };
            Ok(na / nf * k + (nf / na - na / nf) * step)
        }
        Variant::Smoothed => Err(Error::UnknownVariant("smoothed psff".into())),
    }
}

/// Index categories of a tuple `(n, n', m', m)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    /// `n = n'` and `m' = m` (all `n`, `m`).
    Diagonal,
    /// `n = n'`, `m' = m`, `n != m`.
    DiagonalDistinct,
    /// `n = n' = m' = m`.
    AllEqual,
    /// `n = m`, `n' = m'`, `n != n'`.
    Exchange,
    /// Everything else.
    Other,
}

impl Category {
    /// Values of `(delta_{nn'} delta_{mm'}, delta_{nm} delta_{n'm'})`.
    /// `Diagonal` mixes two cases and has no single answer.
    pub fn deltas(self) -> Option<(f64, f64)> {
        match self {
            Self::DiagonalDistinct => Some((1.0, 0.0)),
            Self::AllEqual => Some((1.0, 1.0)),
            Self::Exchange => Some((0.0, 1.0)),
            Self::Other => Some((0.0, 0.0)),
            Self::Diagonal => None,
        }
    }

    /// Number of tuples in the category for dimension `n`.
    pub fn count(self, n: usize) -> u128 {
        let n = n as u128;
        match self {
            Self::Diagonal => n * n,
            Self::DiagonalDistinct | Self::Exchange => n * (n - 1),
            Self::AllEqual => n,
            Self::Other => n.pow(4) - 2 * n * n + n,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Diagonal => "diagonal",
            Self::DiagonalDistinct => "diagonal_distinct",
            Self::AllEqual => "all_equal",
            Self::Exchange => "exchange",
            Self::Other => "other",
        }
    }
}

impl std::str::FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diagonal" | "1" => Ok(Self::Diagonal),
            "diagonal_distinct" | "1_offdiag" | "1a" => Ok(Self::DiagonalDistinct),
            "all_equal" | "1b" => Ok(Self::AllEqual),
            "exchange" | "2" => Ok(Self::Exchange),
            "other" | "3" => Ok(Self::Other),
            _ => Err(Error::InvalidParameter(format!("unknown category `{s}`"))),
        }
    }
}

/// Time-domain form `constant + sff * K(t) + t0 * [t = 0]` with the CUE `K`.
/// Every discrete-time prediction in this module has this shape.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TimeForm {
    pub constant: f64,
    pub sff: f64,
    pub t0: f64,
}

impl TimeForm {
    pub fn eval(&self, t: i64, n: usize) -> f64 {
        self.constant + self.sff * sff_cue(t, n) + if t == 0 { self.t0 } else { 0.0 }
    }

    fn add_scaled(self, other: TimeForm, s: f64) -> TimeForm {
        TimeForm {
            constant: self.constant + s * other.constant,
            sff: self.sff + s * other.sff,
            t0: self.t0 + s * other.t0,
        }
    }

    /// Fourier dual `(1/2pi) sum_t X(t) e^{i w t}`: smooth part at `omega`
    /// (from `K <-> R2`) and delta mass at zero.
    pub fn frequency(&self, omega: f64, n: usize) -> (f64, f64) {
        let smooth = self.sff * r2_cue(omega, n) + self.t0 / TAU;
        let delta = self.constant + self.sff * r2_cue_delta_weight(n);
        (smooth, delta)
    }

    /// Bin average of the smooth part over `[a, b]`; delta mass unchanged.
    pub fn frequency_bin(&self, a: f64, b: f64, n: usize) -> (f64, f64) {
        let smooth = self.sff * r2_cue_bin_average(a, b, n) + self.t0 / TAU;
        (smooth, self.constant + self.sff * r2_cue_delta_weight(n))
    }

    /// Lorentzian-weighted resummation `(1/2pi) sum_{|t|<=T} X(t) e^{-|t| eta} e^{i w t}`;
    /// `t_max = None` sums all `t` in closed form.
    pub fn lorentzian(&self, omega: f64, n: usize, eta: f64, t_max: Option<usize>) -> f64 {
        let nf = n as f64;
        // K(t) = N + N^2 [t=0] - max(N - |t|, 0)
        let plateau = self.constant + self.sff * nf;
        let at_zero = self.sff * nf * nf + self.t0;
        let kernel = match t_max {
            Some(tm) => truncated_lorentzian(omega, eta, tm),
            None => lorentzian(omega, eta),
        };
        let cutoff = t_max.unwrap_or(usize::MAX).min(n.saturating_sub(1));
        let mut ramp = nf; // k = 0 term of sum (N - |k|) e^{-|k| eta} e^{ikw}
        for k in 1..=cutoff {
            let kf = k as f64;
            ramp += 2.0 * (nf - kf) * (-kf * eta).exp() * (kf * omega).cos();
        }
        plateau * kernel + at_zero / TAU - self.sff * ramp / TAU
    }
}

/// Coefficients `(a, b)` of `C_{nn'm'm} = a delta_{nn'} delta_{mm'} + b delta_{nm} delta_{n'm'}`
/// in the time domain.
pub fn corr_time_forms(n: usize, variant: Variant) -> Result<(TimeForm, TimeForm)> {
    let nf = n as f64;
    match variant {
        Variant::Exact => {
            let d = nf * nf - 1.0;
            Ok((
                TimeForm {
                    constant: -1.0 / d,
                    sff: 1.0 / d,
                    t0: 0.0,
                },
                TimeForm {
                    constant: nf / d,
                    sff: -1.0 / (nf * d),
                    t0: 0.0,
                },
            ))
        }
        Variant::Leading => Ok((
            TimeForm {
                constant: -1.0 / (nf * nf),
                sff: 1.0 / (nf * nf),
                t0: 1.0 / (nf * nf),
            },
            TimeForm {
                constant: 1.0 / nf,
                sff: 0.0,
                t0: -1.0 / nf,
            },
        )),
        Variant::Smoothed => Err(Error::UnknownVariant(
            "smoothed has no time-domain form".into(),
        )),
    }
}

fn combine(forms: (TimeForm, TimeForm), deltas: (f64, f64)) -> TimeForm {
    TimeForm::default()
        .add_scaled(forms.0, deltas.0)
        .add_scaled(forms.1, deltas.1)
}

fn category_deltas(category: Category) -> Result<(f64, f64)> {
    category.deltas().ok_or_else(|| {
        Error::InvalidParameter(
            "category `diagonal` mixes n = m and n != m; pick a sub-category".into(),
        )
    })
}

/// Time-domain eigenstate correlation for a tuple category.
pub fn corr_time_rmt(t: i64, n: usize, category: Category, variant: Variant) -> Result<f64> {
    Ok(combine(corr_time_forms(n, variant)?, category_deltas(category)?).eval(t, n))
}

/// Frequency-domain eigenstate correlation: `(smooth part at omega, delta mass at 0)`.
pub fn corr_freq_rmt(
    omega: f64,
    n: usize,
    category: Category,
    variant: Variant,
) -> Result<(f64, f64)> {
    let (d1, d2) = category_deltas(category)?;
    let nf = n as f64;
    let d = nf * nf - 1.0;
    Ok(match variant {
        Variant::Exact => {
            let r2 = r2_cue(omega, n);
            let smooth = r2 / d * (d1 - d2 / nf);
            let delta = r2_cue_delta_weight(n) / d * (d1 - d2 / nf) + (nf * d2 - d1) / d;
            (smooth, delta)
        }
        Variant::Leading => {
            let smooth = (1.0 / TAU - fejer(omega, n) / (nf * nf * TAU) + 1.0 / (nf * nf * TAU))
                * d1
                - d2 / (nf * TAU);
            let delta = (1.0 / nf - 1.0 / (nf * nf)) * d1 + d2 / nf;
            (smooth, delta)
        }
        Variant::Smoothed => {
            let s = (omega / 2.0).sin();
            let smooth = d1 / TAU * (1.0 + (1.0 - 0.5 / (s * s)) / (nf * nf)) - d2 / (nf * TAU);
            (smooth, 0.0)
        }
    })
}

/// Observable matrix-element statistics in the quasienergy eigenbasis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EthPrediction {
    /// `<O_{vv}> = Tr O / N`.
    pub mean_coefficient: f64,
    /// `<|O_{vm}|^2>` for `v != m`.
    pub offdiag_variance: f64,
    /// `<|O_{vv}|^2>`.
    pub diag_second_moment: f64,
    /// `<|O_{vv}|^2> - <O_{vv}>^2`.
    pub diag_variance: f64,
    /// Leading-order `sigma = sqrt(Tr O^2 / N^2 - Tr^2 O / N^3)`.
    pub leading_sigma: f64,
}

pub fn eth_rmt_prediction(trace: f64, trace_sq: f64, n: usize) -> Result<EthPrediction> {
    if n < 2 {
        return Err(Error::InvalidParameter(
            "eigenbasis statistics need N >= 2".into(),
        ));
    }
    let nf = n as f64;
    let d = nf * nf - 1.0;
    let offdiag = trace_sq / d - trace * trace / (nf * d);
    let diag_extra = trace * trace / d - trace_sq / (nf * d);
    let mean = trace / nf;
    Ok(EthPrediction {
        mean_coefficient: mean,
        offdiag_variance: offdiag,
        diag_second_moment: offdiag + diag_extra,
        diag_variance: offdiag + diag_extra - mean * mean,
        leading_sigma: (trace_sq / (nf * nf) - trace * trace / nf.powi(3))
            .max(0.0)
            .sqrt(),
    })
}

/// Ensemble-averaged density-matrix entry
/// `rho_th (N^2 - K)/(N^2 - 1) + rho0 (K - 1)/(N^2 - 1)`.
pub fn rho_entry_rmt(
    rho0_entry: num_complex::Complex64,
    diagonal: bool,
    t: i64,
    n: usize,
) -> num_complex::Complex64 {
    let nf = n as f64;
    let k = sff_cue(t, n);
    let d = nf * nf - 1.0;
    let th = if diagonal { 1.0 / nf } else { 0.0 };
    rho0_entry * ((k - 1.0) / d) + num_complex::Complex64::new(th * (nf * nf - k) / d, 0.0)
}

/// `<Tr(O rho(t))>` for `<Tr O>` and the initial expectation `Tr(O rho0)`.
pub fn observable_track_rmt(trace: f64, initial: f64, t: i64, n: usize) -> f64 {
    let nf = n as f64;
    let k = sff_cue(t, n);
    trace / nf * (nf * nf - k) / (nf * nf - 1.0) + initial * (k - 1.0) / (nf * nf - 1.0)
}

/// Traces entering the operator correlator `C_{OO'}`.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct OperatorTraces {
    pub trace_a: f64,
    pub trace_b: f64,
    /// `Tr(O O')`.
    pub trace_ab: f64,
}

/// Time form of `C_{OO'}(t) = <Tr(O(t) O')> / N`.
pub fn op_corr_time_form(tr: OperatorTraces, n: usize, variant: Variant) -> Result<TimeForm> {
    let nf = n as f64;
    let prod = tr.trace_a * tr.trace_b;
    match variant {
        Variant::Exact => {
            let x = tr.trace_ab / nf - prod / (nf * nf);
            let d = nf * nf - 1.0;
            // (R2 - delta)/(N^2-1) X + delta Tr O Tr O' / N^2
            Ok(TimeForm {
                constant: -x / d + prod / (nf * nf),
                sff: x / d,
                t0: 0.0,
            })
        }
        Variant::Leading => {
            // (R2 - delta + 1/2pi) Tr(OO')/N^3 + (delta - 1/2pi) Tr O Tr O'/N^2
            let c = tr.trace_ab / nf.powi(3);
            let p = prod / (nf * nf);
            Ok(TimeForm {
                constant: -c + p,
                sff: c,
                t0: c - p,
            })
        }
        Variant::Smoothed => Err(Error::UnknownVariant("smoothed operator correlator".into())),
    }
}

/// Operator correlator in frequency: `(smooth, delta mass)`.
pub fn op_corr_freq_rmt(
    omega: f64,
    tr: OperatorTraces,
    n: usize,
    variant: Variant,
) -> Result<(f64, f64)> {
    let nf = n as f64;
    let prod = tr.trace_a * tr.trace_b;
    match variant {
        Variant::Exact => {
            let x = tr.trace_ab / nf - prod / (nf * nf);
            let d = nf * nf - 1.0;
            let smooth = r2_cue(omega, n) * x / d;
            let delta = (r2_cue_delta_weight(n) - 1.0) * x / d + prod / (nf * nf);
            Ok((smooth, delta))
        }
        Variant::Leading => {
            let c = tr.trace_ab / nf.powi(3);
            let p = prod / (nf * nf);
            let smooth = (r2_cue(omega, n) + 1.0 / TAU) * c - p / TAU;
            let delta = (r2_cue_delta_weight(n) - 1.0) * c + p;
            Ok((smooth, delta))
        }
        Variant::Smoothed => Err(Error::UnknownVariant("smoothed operator correlator".into())),
    }
}

/// Parameters of a prediction request. Only the fields a statistic needs are read.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct Params {
    pub n: usize,
    #[serde(default)]
    pub n_a: Option<usize>,
    #[serde(default)]
    pub category: Option<Category>,
    #[serde(default)]
    pub trace: Option<f64>,
    #[serde(default)]
    pub trace_sq: Option<f64>,
    #[serde(default)]
    pub traces: Option<OperatorTraces>,
    /// `rho0_{nm}` (real and imaginary part) for `rho_entry`.
    #[serde(default)]
    pub rho0_entry: Option<[f64; 2]>,
    #[serde(default)]
    pub rho_diagonal: Option<bool>,
    /// `Tr(O rho0)` for `obs_track`.
    #[serde(default)]
    pub initial_expectation: Option<f64>,
    #[serde(default)]
    pub eta: Option<f64>,
}

impl Params {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            ..Self::default()
        }
    }

    fn need<T: Copy>(v: Option<T>, name: &str) -> Result<T> {
        v.ok_or_else(|| Error::InvalidParameter(format!("missing parameter `{name}`")))
    }
}

/// Where a prediction is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictGrid {
    /// Integer times or plain frequency points.
    Points(Vec<f64>),
    /// Histogram bins: smooth parts are bin-averaged.
    Bins(OmegaGrid),
}

impl PredictGrid {
    pub fn times(range: std::ops::RangeInclusive<i64>) -> Self {
        Self::Points(range.map(|t| t as f64).collect())
    }

    fn values(&self) -> Vec<f64> {
        match self {
            Self::Points(p) => p.clone(),
            Self::Bins(g) => g.centers(),
        }
    }
}

/// A prediction evaluated on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    pub statistic: String,
    pub variant: Variant,
    pub params: Params,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// `(location, mass)` of delta terms not included in `values`.
    pub deltas: Vec<(f64, f64)>,
}

/// Names accepted by [`predict`].
pub const STATISTICS: &[&str] = &[
    "sff",
    "r2",
    "r2_smoothed",
    "psff",
    "corr_time",
    "corr_freq",
    "eth_offdiag",
    "eth_f",
    "rho_entry",
    "obs_track",
    "op_corr_time",
    "op_corr_freq",
];

fn to_time(x: f64) -> Result<i64> {
    if x.fract() != 0.0 {
        return Err(Error::InvalidParameter(format!(
            "time grid value {x} is not an integer"
        )));
    }
    Ok(x as i64)
}

/// Evaluates the smooth part of a frequency-domain form on the grid, bin-averaged
/// for histogram grids.
fn freq_values(form: TimeForm, grid: &PredictGrid, n: usize) -> (Vec<f64>, f64) {
    let values = match grid {
        PredictGrid::Points(p) => p.iter().map(|&w| form.frequency(w, n).0).collect(),
        PredictGrid::Bins(g) => {
            let h = g.width() / 2.0;
            g.centers()
                .iter()
                .map(|&c| form.frequency_bin(c - h, c + h, n).0)
                .collect()
        }
    };
    (values, form.constant + form.sff * r2_cue_delta_weight(n))
}

/// Closed-form table for a registered statistic.
pub fn predict(
    statistic: &str,
    variant: Variant,
    params: &Params,
    grid: &PredictGrid,
) -> Result<PredictionTable> {
    let n = params.n;
    if n < 2 {
        return Err(Error::InvalidParameter(format!("N = {n} must be >= 2")));
    }
    let points = grid.values();
    let mut deltas = Vec::new();
    let times = || {
        points
            .iter()
            .map(|&x| to_time(x))
            .collect::<Result<Vec<_>>>()
    };
    let values: Vec<f64> = match statistic {
        "sff" => times()?.into_iter().map(|t| sff_cue(t, n)).collect(),
        "r2" | "r2_smoothed" => {
            if statistic == "r2_smoothed" || variant == Variant::Smoothed {
                points.iter().map(|&w| r2_smoothed(w, n)).collect()
            } else {
                deltas.push((0.0, r2_cue_delta_weight(n)));
                freq_values(
                    TimeForm {
                        constant: 0.0,
                        sff: 1.0,
                        t0: 0.0,
                    },
                    grid,
                    n,
                )
                .0
            }
        }
        "psff" => {
            let n_a = Params::need(params.n_a, "n_a")?;
            times()?
                .into_iter()
                .map(|t| psff_rmt(t, n, n_a, variant))
                .collect::<Result<_>>()?
        }
        "corr_time" => {
            let cat = Params::need(params.category, "category")?;
            times()?
                .into_iter()
                .map(|t| corr_time_rmt(t, n, cat, variant))
                .collect::<Result<_>>()?
        }
        "corr_freq" => {
            let cat = Params::need(params.category, "category")?;
            if variant == Variant::Smoothed {
                points
                    .iter()
                    .map(|&w| corr_freq_rmt(w, n, cat, variant).map(|v| v.0))
                    .collect::<Result<_>>()?
            } else {
                let form = combine(corr_time_forms(n, variant)?, category_deltas(cat)?);
                let (v, d) = freq_values(form, grid, n);
                deltas.push((0.0, d));
                v
            }
        }
        "eth_offdiag" | "eth_f" => {
            let p = eth_rmt_prediction(
                Params::need(params.trace, "trace")?,
                Params::need(params.trace_sq, "trace_sq")?,
                n,
            )?;
            let var = match variant {
                Variant::Leading => p.leading_sigma * p.leading_sigma,
                _ => p.offdiag_variance,
            };
            let v = if statistic == "eth_f" {
                (n as f64 * var).sqrt()
            } else {
                var
            };
            vec![v; points.len()]
        }
        "rho_entry" => {
            let [re, im] = Params::need(params.rho0_entry, "rho0_entry")?;
            let diag = Params::need(params.rho_diagonal, "rho_diagonal")?;
            let z = num_complex::Complex64::new(re, im);
            times()?
                .into_iter()
                .map(|t| rho_entry_rmt(z, diag, t, n).re)
                .collect()
        }
        "obs_track" => {
            let tr = Params::need(params.trace, "trace")?;
            let init = Params::need(params.initial_expectation, "initial_expectation")?;
            times()?
                .into_iter()
                .map(|t| observable_track_rmt(tr, init, t, n))
                .collect()
        }
        "op_corr_time" => {
            let form = op_corr_time_form(Params::need(params.traces, "traces")?, n, variant)?;
            times()?.into_iter().map(|t| form.eval(t, n)).collect()
        }
        "op_corr_freq" => {
            let form = op_corr_time_form(Params::need(params.traces, "traces")?, n, variant)?;
            let (v, d) = freq_values(form, grid, n);
            deltas.push((0.0, d));
            v
        }
        other => return Err(Error::UnknownStatistic(other.to_string())),
    };
    Ok(PredictionTable {
        statistic: statistic.to_string(),
        variant,
        params: params.clone(),
        grid: points,
        values,
        deltas,
    })
}

/// Lorentzian-smoothed frequency prediction: delta terms become the periodic
/// Lorentzian of width `eta` and the oscillatory terms are damped by
/// `e^{-|t| eta}` (optionally truncated at `|t| <= t_max`).
pub fn smoothed_variant(
    statistic: &str,
    variant: Variant,
    params: &Params,
    grid: &[f64],
    eta: f64,
    t_max: Option<usize>,
) -> Result<PredictionTable> {
    if !(eta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eta = {eta} must be positive"
        )));
    }
    let n = params.n;
    let form = match statistic {
        "delta" => TimeForm {
            constant: 1.0,
            sff: 0.0,
            t0: 0.0,
        },
        "r2" => TimeForm {
            constant: 0.0,
            sff: 1.0,
            t0: 0.0,
        },
        "corr_freq" => combine(
            corr_time_forms(n, variant)?,
            category_deltas(Params::need(params.category, "category")?)?,
        ),
        "op_corr_freq" => op_corr_time_form(Params::need(params.traces, "traces")?, n, variant)?,
        other => return Err(Error::UnknownStatistic(other.to_string())),
    };
    let values = grid
        .iter()
        .map(|&w| form.lorentzian(w, n, eta, t_max))
        .collect();
    Ok(PredictionTable {
        statistic: format!("{statistic}_lorentzian"),
        variant,
        params: Params {
            eta: Some(eta),
            ..params.clone()
        },
        grid: grid.to_vec(),
        values,
        deltas: Vec::new(),
    })
}

/// Grid helper used by callers that only hold an [`OmegaGrid`].
pub fn grid_for(grid: &OmegaGrid) -> PredictGrid {
    match grid.mode {
        GridMode::Histogram => PredictGrid::Bins(grid.clone()),
        GridMode::Lorentzian { .. } => PredictGrid::Points(grid.centers()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    /// Midpoint quadrature of a periodic function over one period.
    fn quad(f: impl Fn(f64) -> f64, points: usize) -> f64 {
        let h = TAU / points as f64;
        (0..points)
            .map(|k| f(-PI + (k as f64 + 0.5) * h))
            .sum::<f64>()
            * h
    }

    #[test]
    fn sff_values() {
        assert_eq!(sff_cue(0, 16), 256.0);
        assert_eq!(sff_cue(5, 16), 5.0);
        assert_eq!(sff_cue(40, 16), 16.0);
        assert_eq!(sff_cue(-5, 16), 5.0);
        let table = predict(
            "sff",
            Variant::Exact,
            &Params::new(16),
            &PredictGrid::times(0..=48),
        )
        .unwrap();
        for (t, v) in table.grid.iter().zip(&table.values) {
            assert_eq!(*v, (*t).min(16.0) + if *t == 0.0 { 256.0 } else { 0.0 });
        }
    }

    #[test]
    fn r2_values() {
        let n = 8;
        for k in 1..8 {
            let w = TAU * k as f64 / n as f64;
            assert!(close(r2_cue(wrap_angle(w), n), 64.0 / TAU, 1e-12));
        }
        assert!(close(r2_cue(PI, 2), 2.0 / PI, 1e-14));
        assert!(r2_cue(1e-9, 32).abs() < 1e-9);
        assert_eq!(r2_cue(0.0, 32), 0.0);
    }

    #[test]
    fn fejer_integral_matches_quadrature() {
        let n = 7;
        let (a, b) = (-0.3, 1.1);
        let m = 20000;
        let h = (b - a) / m as f64;
        let q: f64 = (0..m)
            .map(|k| fejer(a + (k as f64 + 0.5) * h, n))
            .sum::<f64>()
            * h;
        assert!(close(fejer_integral(a, b, n), q, 1e-7));
    }

    #[test]
    fn full_period_integrals() {
        let n = 12;
        let nf = n as f64;
        // R2 -> N^2
        let r2 = quad(|w| r2_cue(w, n), 4096) + r2_cue_delta_weight(n);
        assert!(close(r2, nf * nf, 1e-10));
        // category 1 (n'=n, m'=m) -> 1 and category 2 -> 0
        for (cat, target) in [
            (Category::DiagonalDistinct, 1.0),
            (Category::Exchange, 0.0),
            (Category::AllEqual, 1.0),
        ] {
            for variant in [Variant::Exact, Variant::Leading] {
                let smooth = quad(|w| corr_freq_rmt(w, n, cat, variant).unwrap().0, 4096);
                let delta = corr_freq_rmt(0.3, n, cat, variant).unwrap().1;
                assert!(
                    (smooth + delta - target).abs() < 1e-10,
                    "{cat:?} {variant:?}: {}",
                    smooth + delta
                );
            }
        }
    }

    #[test]
    fn exact_freq_formula_is_fourier_dual_of_time_formula() {
        let n = 9;
        for cat in [
            Category::DiagonalDistinct,
            Category::AllEqual,
            Category::Exchange,
            Category::Other,
        ] {
            for variant in [Variant::Exact, Variant::Leading] {
                let form = combine(corr_time_forms(n, variant).unwrap(), cat.deltas().unwrap());
                for w in [-2.9, -0.4, 0.2, 1.7, PI] {
                    let (s, d) = corr_freq_rmt(w, n, cat, variant).unwrap();
                    let (s2, d2) = form.frequency(w, n);
                    assert!(
                        close(s, s2, 1e-13) && close(d, d2, 1e-13),
                        "{cat:?} {variant:?} {w}"
                    );
                }
            }
        }
    }

    #[test]
    fn corr_time_values() {
        let n = 32;
        let nf = 32.0;
        let d = nf * nf - 1.0;
        let k8 = sff_cue(8, n);
        assert!(close(
            corr_time_rmt(8, n, Category::DiagonalDistinct, Variant::Exact).unwrap(),
            7.0 / 1023.0,
            1e-14
        ));
        assert!(close(
            corr_time_rmt(8, n, Category::Exchange, Variant::Exact).unwrap(),
            (nf - k8 / nf) / d,
            1e-14
        ));
        assert!(close(
            corr_time_rmt(40, n, Category::AllEqual, Variant::Exact).unwrap(),
            2.0 / 33.0,
            1e-14
        ));
        assert_eq!(
            corr_time_rmt(5, n, Category::Other, Variant::Exact).unwrap(),
            0.0
        );
        assert_eq!(
            corr_time_rmt(0, n, Category::AllEqual, Variant::Exact).unwrap(),
            1.0
        );
        assert!(corr_time_rmt(0, n, Category::Diagonal, Variant::Exact).is_err());
        // sum over n, m of C_{nnmm}(t) = K(t)
        for t in [0, 3, 31, 50] {
            let s = nf
                * (nf - 1.0)
                * corr_time_rmt(t, n, Category::DiagonalDistinct, Variant::Exact).unwrap()
                + nf * corr_time_rmt(t, n, Category::AllEqual, Variant::Exact).unwrap();
            assert!(close(s, sff_cue(t, n), 1e-12));
            let s = nf
                * (nf - 1.0)
                * corr_time_rmt(t, n, Category::DiagonalDistinct, Variant::Leading).unwrap()
                + nf * corr_time_rmt(t, n, Category::AllEqual, Variant::Leading).unwrap();
            assert!(close(s, sff_cue(t, n), 1e-12));
        }
    }

    #[test]
    fn corr_leading_vs_exact_at_pi() {
        let n = 64;
        let e = corr_freq_rmt(PI, n, Category::DiagonalDistinct, Variant::Exact)
            .unwrap()
            .0;
        let l = corr_freq_rmt(PI, n, Category::DiagonalDistinct, Variant::Leading)
            .unwrap()
            .0;
        assert!(((e - l) / e).abs() <= 3.0 / (n * n) as f64);
        assert_eq!(
            corr_freq_rmt(1.0, n, Category::Other, Variant::Exact).unwrap(),
            (0.0, 0.0)
        );
    }

    #[test]
    fn psff_values() {
        let (n, na) = (64usize, 8usize);
        let (nf, naf) = (64.0, 8.0);
        for nn in [8, 27, 64] {
            let a = if nn == 27 { 3 } else { 4.min(nn / 2) };
            assert!(close(
                psff_rmt(0, nn, a, Variant::Exact).unwrap(),
                (nn * a) as f64,
                1e-13
            ));
        }
        assert!(close(
            psff_rmt(70, n, na, Variant::Exact).unwrap(),
            nf * (naf + nf / naf) / (nf + 1.0),
            1e-13
        ));
        let e = psff_rmt(10, n, na, Variant::Exact).unwrap();
        let l = psff_rmt(10, n, na, Variant::Leading).unwrap();
        assert!((e - l).abs() <= 2.0 / nf * e);
        assert!(psff_rmt(3, 64, 6, Variant::Exact).is_err());
        assert!(psff_rmt(3, 64, 64, Variant::Exact).is_err());
    }

    #[test]
    fn eth_values() {
        let p = eth_rmt_prediction(0.0, 2.0, 2).unwrap();
        assert!(close(p.offdiag_variance, 2.0 / 3.0, 1e-15));
        let id = eth_rmt_prediction(8.0, 8.0, 8).unwrap();
        assert!(id.offdiag_variance.abs() < 1e-15);
        assert!(close(id.diag_second_moment, 1.0, 1e-14));
        assert!(id.diag_variance.abs() < 1e-14);
        let n = 64;
        let p = eth_rmt_prediction(0.0, 64.0, n).unwrap();
        let lead = p.leading_sigma.powi(2);
        assert!(((lead - p.offdiag_variance) / p.offdiag_variance).abs() <= 2.0 / (n * n) as f64);
        assert!(close(p.diag_second_moment, 1.0 / 65.0, 1e-14));
        assert!(eth_rmt_prediction(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn rho_values() {
        let n = 32;
        let z = num_complex::Complex64::new(1.0, 0.0);
        assert!((rho_entry_rmt(z, true, 0, n) - z).norm() < 1e-15);
        let late = rho_entry_rmt(z, true, 1000, n).re;
        assert!(close(late, 2.0 / 33.0, 1e-14));
        // fixed point: rho0 = rho_th
        for t in [0, 5, 40] {
            let th = num_complex::Complex64::new(1.0 / 32.0, 0.0);
            assert!((rho_entry_rmt(th, true, t, n) - th).norm() < 1e-15);
            assert!(
                rho_entry_rmt(num_complex::Complex64::new(0.0, 0.0), false, t, n).norm() == 0.0
            );
        }
        assert!(close(
            observable_track_rmt(0.0, 1.0, 100, n),
            1.0 / 33.0,
            1e-14
        ));
    }

    #[test]
    fn operator_correlator_forms() {
        let n = 16;
        let nf = 16.0;
        // identity: delta weight 1 at w = 0 and nothing else
        let id = OperatorTraces {
            trace_a: nf,
            trace_b: nf,
            trace_ab: nf,
        };
        let (s, d) = op_corr_freq_rmt(0.7, id, n, Variant::Exact).unwrap();
        assert!(s.abs() < 1e-14 && close(d, 1.0, 1e-14));
        // t = 0 gives Tr(OO')/N
        let tr = OperatorTraces {
            trace_a: 3.0,
            trace_b: -1.0,
            trace_ab: 5.0,
        };
        assert!(close(
            op_corr_time_form(tr, n, Variant::Exact).unwrap().eval(0, n),
            5.0 / nf,
            1e-14
        ));
        // traceless leading form: R2 Tr(OO')/N^3
        let tl = OperatorTraces {
            trace_a: 0.0,
            trace_b: 0.0,
            trace_ab: nf,
        };
        for w in [0.4, 2.0] {
            let (s, _) = op_corr_freq_rmt(w, tl, n, Variant::Leading).unwrap();
            let (s2, _) = op_corr_time_form(tl, n, Variant::Leading)
                .unwrap()
                .frequency(w, n);
            assert!(close(s, s2, 1e-13));
            let (ex, _) = op_corr_freq_rmt(w, tl, n, Variant::Exact).unwrap();
            assert!(close(ex, r2_cue(w, n) * nf / (nf * (nf * nf - 1.0)), 1e-13));
        }
    }

    #[test]
    fn lorentzian_normalized_and_limits() {
        for eta in [0.05, 0.5, 3.0] {
            assert!(close(quad(|w| lorentzian(w, eta), 20000), 1.0, 1e-8));
            assert!(close(
                quad(|w| truncated_lorentzian(w, eta, 7), 64),
                1.0,
                1e-12
            ));
        }
        // large eta: flat 1/2pi
        assert!(close(lorentzian(1.0, 40.0), 1.0 / TAU, 1e-12));
        // truncated sum agrees with brute force
        let brute: f64 = (-5i32..=5)
            .map(|k| ((k as f64) * 0.9).cos() * (-(k.abs() as f64) * 0.3).exp())
            .sum::<f64>()
            / TAU;
        assert!(close(truncated_lorentzian(0.9, 0.3, 5), brute, 1e-13));
        assert!(
            smoothed_variant("r2", Variant::Exact, &Params::new(8), &[0.1], 0.0, None).is_err()
        );
    }

    #[test]
    fn lorentzian_resum_matches_brute_force() {
        let n = 6;
        let form = combine(corr_time_forms(n, Variant::Exact).unwrap(), (1.0, 0.0));
        for (eta, tmax) in [(0.2, Some(9usize)), (0.4, Some(3)), (0.3, None)] {
            let tm = tmax.unwrap_or(400) as i64;
            for w in [-1.0, 0.0, 2.5] {
                let brute: f64 = (-tm..=tm)
                    .map(|t| {
                        form.eval(t, n) * (-(t.abs() as f64) * eta).exp() * (w * t as f64).cos()
                    })
                    .sum::<f64>()
                    / TAU;
                assert!(
                    close(form.lorentzian(w, n, eta, tmax), brute, 1e-12),
                    "{eta} {tmax:?} {w}"
                );
            }
        }
    }

    #[test]
    fn smoothed_r2_forms() {
        let n = 32;
        let nf = 32.0;
        let grid = vec![0.5, 1.0, 2.0];
        let t = predict(
            "r2_smoothed",
            Variant::Smoothed,
            &Params::new(n),
            &PredictGrid::Points(grid.clone()),
        )
        .unwrap();
        for (w, v) in grid.iter().zip(&t.values) {
            assert!(close(
                *v,
                nf * nf / TAU - 1.0 / (4.0 * PI * (w / 2.0).sin().powi(2)),
                1e-14
            ));
        }
        // bins much wider than 2 pi / N: bin-averaged exact R2 agrees with R2^(s)
        let g = OmegaGrid::histogram(9).unwrap();
        for c in g.centers() {
            if c.abs() < 1e-12 {
                continue;
            }
            let h = g.width() / 2.0;
            let avg = r2_cue_bin_average(c - h, c + h, n);
            let m = 4000;
            let smooth: f64 = (0..m)
                .map(|k| r2_smoothed(c - h + (k as f64 + 0.5) * 2.0 * h / m as f64, n))
                .sum::<f64>()
                / m as f64;
            assert!(((avg - smooth) / avg).abs() <= 2.0 / nf, "{c}");
        }
        // large eta: delta mass spreads flat
        let d = smoothed_variant(
            "delta",
            Variant::Exact,
            &Params::new(n),
            &[0.0, 1.0, 3.0],
            50.0,
            None,
        )
        .unwrap();
        for v in d.values {
            assert!(close(v, 1.0 / TAU, 1e-12));
        }
    }

    #[test]
    fn predict_is_pure_and_validates() {
        let p = Params {
            n: 64,
            n_a: Some(8),
            ..Params::default()
        };
        let g = PredictGrid::times(0..=128);
        let a = predict("psff", Variant::Exact, &p, &g).unwrap();
        let b = predict("psff", Variant::Exact, &p, &g).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            predict("nope", Variant::Exact, &p, &g),
            Err(Error::UnknownStatistic(_))
        ));
        assert!(predict("psff", Variant::Exact, &Params::new(64), &g).is_err());
        assert!(predict(
            "sff",
            Variant::Exact,
            &Params::new(64),
            &PredictGrid::Points(vec![0.5])
        )
        .is_err());
        assert!("weird".parse::<Variant>().is_err());
        let rho = Params {
            n: 32,
            rho0_entry: Some([1.0, 0.0]),
            rho_diagonal: Some(true),
            ..Params::default()
        };
        let t = predict(
            "rho_entry",
            Variant::Exact,
            &rho,
            &PredictGrid::Points(vec![1e6]),
        )
        .unwrap();
        assert!(close(
            t.values[0],
            1.0 / 32.0 * 32.0 / 33.0 + 1.0 / 33.0,
            1e-13
        ));
    }

    /// Exact and leading variants at N = 64. Gap constants: corr (category 1,
    /// n != m) and ETH off-diagonal agree to 2/N^2; exchange-category
    /// correlations, the density matrix plateau and the partial form factor
    /// differ at O(1/N) and O(1/N_A^2) respectively.
    #[test]
    fn exact_vs_leading_gaps() {
        let n = 64;
        let nf = 64.0;
        for t in 1..200 {
            let e = corr_time_rmt(t, n, Category::DiagonalDistinct, Variant::Exact).unwrap();
            let l = corr_time_rmt(t, n, Category::DiagonalDistinct, Variant::Leading).unwrap();
            assert!((e - l).abs() <= 2.0 / (nf * nf) * e.abs(), "t = {t}");
            let e = corr_time_rmt(t, n, Category::Exchange, Variant::Exact).unwrap();
            let l = corr_time_rmt(t, n, Category::Exchange, Variant::Leading).unwrap();
            assert!((e - l).abs() <= (1.0 / nf + 1e-12) * e.abs(), "t = {t}");
            let e = psff_rmt(t, n, 8, Variant::Exact).unwrap();
            let l = psff_rmt(t, n, 8, Variant::Leading).unwrap();
            assert!((e - l).abs() <= e.abs() / 64.0, "t = {t}");
        }
        for w in [0.3, 1.0, 2.0, PI] {
            let e = corr_freq_rmt(w, n, Category::DiagonalDistinct, Variant::Exact)
                .unwrap()
                .0;
            let l = corr_freq_rmt(w, n, Category::DiagonalDistinct, Variant::Leading)
                .unwrap()
                .0;
            assert!(((e - l) / e).abs() <= 2.0 / (nf * nf), "w = {w}");
        }
    }

    #[test]
    fn category_counts() {
        assert_eq!(Category::Exchange.count(4), 12);
        assert_eq!(Category::DiagonalDistinct.count(4), 12);
        assert_eq!(Category::Other.count(4), 228);
        assert_eq!(Category::AllEqual.count(4), 4);
    }
}
