//! End-to-end ensemble runs: configuration, deterministic chunked sampling,
//! accumulation and CSV reports.
//!
//! Samples are processed in fixed contiguous chunks whose partial accumulators
//! are merged in ascending order, so outputs are bit-identical for any worker
//! count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::eigencorr::{
    CategoryKernel, CorrGrid, CorrRow, CorrelationEstimate, DEFAULT_TUPLE_BUDGET,
};
use crate::error::{Error, Result};
use crate::eth::{
    build_local_observable, operator_traces, DensityMatrix, DynCorrKernel, EthKernel, ObservableOp,
    RhoKernel, Template,
};
use crate::haar::{sample_cue_indexed, unitarity_residual};
use crate::lattice::{
    build_floquet, CircuitSpec, QuditSpace, ValidatedSpec, FLOQUET_UNITARITY_TOL,
};
use crate::spectral::{
    diagonalize, Kernel, OmegaGrid, PsffKernel, R2Kernel, SffKernel, SpectralData, Subsystem,
};
use crate::stats::{z_score, Accumulator, EnsembleAccumulator, CHUNK, DEFAULT_BLOCKS};
use crate::theory::{self, Category, Params, PredictGrid, Variant};
use crate::{io, CMatrix};

pub const DEFAULT_Z_GATE: f64 = 4.0;
/// Largest tolerated fraction of samples failing numerical checks.
pub const DEFAULT_MAX_FAILURE_RATE: f64 = 0.01;
/// Chunks sampled concurrently before their accumulators are merged.
const WAVE: u64 = 32;

fn default_blocks() -> usize {
    DEFAULT_BLOCKS
}

fn default_gate() -> f64 {
    DEFAULT_Z_GATE
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_failure_rate() -> f64 {
    DEFAULT_MAX_FAILURE_RATE
}

fn default_q() -> usize {
    2
}

fn default_budget() -> usize {
    DEFAULT_TUPLE_BUDGET
}

fn default_variant() -> Variant {
    Variant::Exact
}

/// Source of Floquet operators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnsembleSpec {
    /// Haar-random `N x N` unitaries. `q` factors `N` into qudits for
    /// subsystems and local observables.
    Cue {
        n: usize,
        #[serde(default = "default_q")]
        q: usize,
    },
    Circuit(CircuitSpec),
}

/// A local observable: template name plus the sites it acts on (defaults to
/// the leading sites).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableSpec {
    #[serde(flatten)]
    pub template: Template,
    #[serde(default)]
    pub sites: Vec<usize>,
}

/// One requested statistic. Frequency grids are histograms of `bins` bins,
/// or Lorentzian grids of `bins` points when `eta` is set (`cutoff` truncates
/// the Lorentzian resummation at `|t| <= cutoff`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum StatisticSpec {
    Sff {
        t_max: usize,
    },
    R2 {
        bins: usize,
        #[serde(default)]
        eta: Option<f64>,
        #[serde(default)]
        cutoff: Option<usize>,
    },
    Psff {
        t_max: usize,
        subsystem: Vec<usize>,
        #[serde(default = "default_variant")]
        variant: Variant,
    },
    CorrTime {
        category: Category,
        t_max: usize,
        #[serde(default = "default_budget")]
        budget: usize,
        #[serde(default = "default_variant")]
        variant: Variant,
    },
    CorrFreq {
        category: Category,
        bins: usize,
        #[serde(default)]
        eta: Option<f64>,
        #[serde(default)]
        cutoff: Option<usize>,
        #[serde(default = "default_budget")]
        budget: usize,
        #[serde(default = "default_variant")]
        variant: Variant,
    },
    Eth {
        observable: ObservableSpec,
        bins: usize,
    },
    OpCorrTime {
        observable: ObservableSpec,
        #[serde(default)]
        observable_b: Option<ObservableSpec>,
        t_max: usize,
        #[serde(default = "default_variant")]
        variant: Variant,
    },
    OpCorrFreq {
        observable: ObservableSpec,
        #[serde(default)]
        observable_b: Option<ObservableSpec>,
        bins: usize,
        #[serde(default)]
        eta: Option<f64>,
        #[serde(default)]
        cutoff: Option<usize>,
        #[serde(default = "default_variant")]
        variant: Variant,
    },
    Rho {
        times: Vec<i64>,
        /// Basis state `|initial>` at `t = 0`.
        #[serde(default)]
        initial: usize,
        #[serde(default)]
        probes: Option<Vec<[usize; 2]>>,
        #[serde(default)]
        observables: Vec<ObservableSpec>,
    },
    /// `<|U_ij|^2>` for every entry of the Floquet operator.
    UnitaryMoment2,
}

impl StatisticSpec {
    fn base_name(&self) -> String {
        match self {
            Self::Sff { .. } => "sff".into(),
            Self::R2 { .. } => "r2".into(),
            Self::Psff { .. } => "psff".into(),
            Self::CorrTime { category, .. } => format!("corr_time_{}", category.name()),
            Self::CorrFreq { category, .. } => format!("corr_freq_{}", category.name()),
            Self::Eth { .. } => "eth".into(),
            Self::OpCorrTime { .. } => "op_corr_time".into(),
            Self::OpCorrFreq { .. } => "op_corr_freq".into(),
            Self::Rho { .. } => "rho".into(),
            Self::UnitaryMoment2 => "unitary_moment2".into(),
        }
    }
}

/// A complete run description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub ensemble: EnsembleSpec,
    /// Ensemble size `M`.
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Jackknife blocks; `samples >= 2 * blocks`.
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_gate")]
    pub z_gate: f64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Also write every sample's spectrum under `out/spectra`.
    #[serde(default)]
    pub persist_spectra: bool,
    #[serde(default = "default_failure_rate")]
    pub max_failure_rate: f64,
    #[serde(default)]
    pub statistics: Vec<StatisticSpec>,
}

impl RunConfig {
    pub fn cue(n: usize, samples: usize, statistics: Vec<StatisticSpec>) -> Self {
        Self {
            ensemble: EnsembleSpec::Cue { n, q: 2 },
            samples,
            seed: 0,
            blocks: DEFAULT_BLOCKS,
            workers: 0,
            z_gate: DEFAULT_Z_GATE,
            out: default_out(),
            persist_spectra: false,
            max_failure_rate: DEFAULT_MAX_FAILURE_RATE,
            statistics,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks the config and resolves every statistic.
    pub fn plan(&self) -> Result<Plan> {
        Plan::new(self)
    }
}

enum Source {
    Cue { n: usize },
    Circuit(ValidatedSpec),
}

enum Prepared {
    Sff(SffKernel),
    R2(R2Kernel),
    Psff {
        kernel: PsffKernel,
        n_a: usize,
        variant: Variant,
    },
    Corr {
        kernel: CategoryKernel,
        variant: Variant,
        grid_eta: Option<(f64, Option<usize>)>,
    },
    Eth(EthKernel),
    OpCorr {
        kernel: DynCorrKernel,
        traces: theory::OperatorTraces,
        variant: Variant,
        grid_eta: Option<(f64, Option<usize>)>,
    },
    Rho {
        kernel: RhoKernel,
        initial: Vec<f64>,
    },
    Moment2 {
        n: usize,
    },
}

impl Prepared {
    fn width(&self) -> usize {
        match self {
            Self::Sff(k) => k.width(),
            Self::R2(k) => k.width(),
            Self::Psff { kernel, .. } => kernel.width(),
            Self::Corr { kernel, .. } => kernel.width(),
            Self::Eth(k) => k.width(),
            Self::OpCorr { kernel, .. } => kernel.width(),
            Self::Rho { kernel, .. } => kernel.width(),
            Self::Moment2 { n } => n * n,
        }
    }

    fn needs_spectrum(&self) -> bool {
        !matches!(self, Self::Moment2 { .. })
    }

    fn sample(&self, u: &CMatrix, s: Option<&SpectralData>) -> Result<Vec<f64>> {
        let s = || s.ok_or_else(|| Error::InvalidParameter("statistic needs a spectrum".into()));
        match self {
            Self::Sff(k) => k.sample(s()?),
            Self::R2(k) => k.sample(s()?),
            Self::Psff { kernel, .. } => kernel.sample(s()?),
            Self::Corr { kernel, .. } => kernel.sample(s()?),
            Self::Eth(k) => k.sample(s()?),
            Self::OpCorr { kernel, .. } => kernel.sample(s()?),
            Self::Rho { kernel, .. } => kernel.sample(s()?),
            Self::Moment2 { n } => {
                if u.nrows() != *n {
                    return Err(Error::DimensionMismatch {
                        expected: *n,
                        actual: u.nrows(),
                    });
                }
                let mut out = Vec::with_capacity(n * n);
                for i in 0..*n {
                    for j in 0..*n {
                        out.push(u[(i, j)].norm_sqr());
                    }
                }
                Ok(out)
            }
        }
    }
}

/// A validated config, ready to sample.
pub struct Plan {
    config: RunConfig,
    source: Source,
    n: usize,
    labels: Vec<String>,
    stats: Vec<Prepared>,
    warnings: Vec<String>,
}

fn omega_grid(bins: usize, eta: Option<f64>, cutoff: Option<usize>) -> Result<OmegaGrid> {
    match eta {
        None => OmegaGrid::histogram(bins),
        Some(eta) => OmegaGrid::lorentzian(bins, eta, cutoff),
    }
}

impl Plan {
    fn new(config: &RunConfig) -> Result<Self> {
        let mut problems = Vec::new();
        if config.samples == 0 {
            problems.push("samples must be positive".to_string());
        }
        if config.blocks < 2 {
            problems.push(format!("blocks = {} must be at least 2", config.blocks));
        } else if config.samples < 2 * config.blocks {
            problems.push(format!(
                "samples = {} must be at least 2 * blocks = {}",
                config.samples,
                2 * config.blocks
            ));
        }
        if !(config.z_gate > 0.0) {
            problems.push(format!("z_gate = {} must be positive", config.z_gate));
        }
        if !(0.0..=1.0).contains(&config.max_failure_rate) {
            problems.push(format!(
                "max_failure_rate = {} must lie in [0, 1]",
                config.max_failure_rate
            ));
        }
        let mut warnings = Vec::new();
        let (source, n, space) = match &config.ensemble {
            EnsembleSpec::Cue { n, q } => {
                if *n < 2 {
                    problems.push(format!("CUE dimension {n} must be at least 2"));
                }
                (Source::Cue { n: *n }, *n, QuditSpace::from_dim(*n, *q))
            }
            EnsembleSpec::Circuit(spec) => {
                let spec = spec.clone().with_seed(config.seed);
                let v = spec.validate()?;
                warnings.extend(v.warnings().iter().cloned());
                let (n, space) = (v.dim(), v.space());
                (Source::Circuit(v), n, Some(space))
            }
        };
        if !problems.is_empty() {
            return Err(Error::Config(problems.join("; ")));
        }
        let need_space = || {
            space.ok_or_else(|| {
                Error::Config(format!(
                    "N = {n} has no qudit factorization for subsystems or observables"
                ))
            })
        };
        let observable = |o: &ObservableSpec| -> Result<ObservableOp> {
            let space = need_space()?;
            let sites = if o.sites.is_empty() {
                let (_, arity) = o.template.local_matrix(space.q)?;
                (0..arity).collect()
            } else {
                o.sites.clone()
            };
            build_local_observable(&o.template, &sites, space)
        };
        let mut labels: Vec<String> = Vec::new();
        let mut stats = Vec::new();
        for (k, spec) in config.statistics.iter().enumerate() {
            let prepared = (|| -> Result<Prepared> {
                Ok(match spec {
                    StatisticSpec::Sff { t_max } => Prepared::Sff(SffKernel::new(*t_max)?),
                    StatisticSpec::R2 { bins, eta, cutoff } => Prepared::R2(R2Kernel {
                        n,
                        grid: omega_grid(*bins, *eta, *cutoff)?,
                    }),
                    StatisticSpec::Psff {
                        t_max,
                        subsystem,
                        variant,
                    } => {
                        let sub = Subsystem::new(need_space()?, subsystem.clone())?;
                        theory::psff_rmt(1, n, sub.dim_a(), *variant)?;
                        Prepared::Psff {
                            n_a: sub.dim_a(),
                            kernel: PsffKernel { sub, t_max: *t_max },
                            variant: *variant,
                        }
                    }
                    StatisticSpec::CorrTime {
                        category,
                        t_max,
                        budget,
                        variant,
                    } => {
                        theory::corr_time_rmt(1, n, *category, *variant)?;
                        let grid = CorrGrid::Time { t_max: *t_max };
                        let kernel = CategoryKernel::new(*category, n, grid, *budget, config.seed)?;
                        Prepared::Corr {
                            kernel,
                            variant: *variant,
                            grid_eta: None,
                        }
                    }
                    StatisticSpec::CorrFreq {
                        category,
                        bins,
                        eta,
                        cutoff,
                        budget,
                        variant,
                    } => {
                        theory::corr_freq_rmt(0.1, n, *category, *variant)?;
                        let grid = CorrGrid::Frequency(omega_grid(*bins, *eta, *cutoff)?);
                        let kernel = CategoryKernel::new(*category, n, grid, *budget, config.seed)?;
                        Prepared::Corr {
                            kernel,
                            variant: *variant,
                            grid_eta: eta.map(|e| (e, *cutoff)),
                        }
                    }
                    StatisticSpec::Eth {
                        observable: o,
                        bins,
                    } => Prepared::Eth(EthKernel::new(
                        observable(o)?,
                        OmegaGrid::histogram(*bins)?,
                    )?),
                    StatisticSpec::OpCorrTime {
                        observable: o,
                        observable_b,
                        t_max,
                        variant,
                    } => {
                        let a = observable(o)?;
                        let b = observable_b
                            .as_ref()
                            .map(&observable)
                            .transpose()?
                            .unwrap_or_else(|| a.clone());
                        let traces = operator_traces(&a, &b);
                        theory::op_corr_time_form(traces, n, *variant)?;
                        let kernel = DynCorrKernel {
                            o: a,
                            o2: b,
                            grid: CorrGrid::Time { t_max: *t_max },
                        };
                        Prepared::OpCorr {
                            kernel,
                            traces,
                            variant: *variant,
                            grid_eta: None,
                        }
                    }
                    StatisticSpec::OpCorrFreq {
                        observable: o,
                        observable_b,
                        bins,
                        eta,
                        cutoff,
                        variant,
                    } => {
                        let a = observable(o)?;
                        let b = observable_b
                            .as_ref()
                            .map(&observable)
                            .transpose()?
                            .unwrap_or_else(|| a.clone());
                        let traces = operator_traces(&a, &b);
                        theory::op_corr_time_form(traces, n, *variant)?;
                        let grid = CorrGrid::Frequency(omega_grid(*bins, *eta, *cutoff)?);
                        let kernel = DynCorrKernel { o: a, o2: b, grid };
                        Prepared::OpCorr {
                            kernel,
                            traces,
                            variant: *variant,
                            grid_eta: eta.map(|e| (e, *cutoff)),
                        }
                    }
                    StatisticSpec::Rho {
                        times,
                        initial,
                        probes,
                        observables,
                    } => {
                        let rho0 = DensityMatrix::basis_state(n, *initial)?;
                        let probes = match probes {
                            Some(p) => p.iter().map(|&[a, b]| (a, b)).collect(),
                            None => crate::eth::default_probes(n),
                        };
                        let obs = observables
                            .iter()
                            .map(&observable)
                            .collect::<Result<Vec<_>>>()?;
                        let initial = obs
                            .iter()
                            .map(|o| o.matrix()[(*initial, *initial)].re)
                            .collect();
                        Prepared::Rho {
                            kernel: RhoKernel::new(rho0, times.clone(), probes, obs)?,
                            initial,
                        }
                    }
                    StatisticSpec::UnitaryMoment2 => Prepared::Moment2 { n },
                })
            })();
            match prepared {
                Ok(p) => {
                    let base = spec.base_name();
                    let mut label = base.clone();
                    let mut k2 = 2;
                    while labels.contains(&label) {
                        label = format!("{base}_{k2}");
                        k2 += 1;
                    }
                    labels.push(label);
                    stats.push(p);
                }
                Err(e) => problems.push(format!("statistic {} ({}): {e}", k + 1, spec.base_name())),
            }
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems.join("; ")));
        }
        Ok(Self {
            config: config.clone(),
            source,
            n,
            labels,
            stats,
            warnings,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Names of the accumulators, one per statistic.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Empty accumulators with this plan's schema.
    pub fn empty_accumulators(&self) -> EnsembleAccumulator {
        let mut acc = EnsembleAccumulator::new();
        for (label, st) in self.labels.iter().zip(&self.stats) {
            acc.insert(
                label.clone(),
                Accumulator::new(st.width(), self.config.blocks),
            );
        }
        acc
    }

    /// Floquet operator of sample `index`.
    pub fn operator(&self, index: u64) -> Result<CMatrix> {
        Ok(match &self.source {
            Source::Cue { n } => sample_cue_indexed(*n, self.config.seed, index)?.into_matrix(),
            Source::Circuit(v) => build_floquet(v, index)?.into_matrix(),
        })
    }

    fn needs_spectrum(&self) -> bool {
        self.config.persist_spectra || self.stats.iter().any(Prepared::needs_spectrum)
    }
}

/// Hooks for exercising failure handling.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Samples for which the operator is replaced by a non-unitary matrix.
    pub inject_non_unitary: Option<fn(u64) -> bool>,
}

/// One CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    /// Row labels (first CSV column) when the table stacks several series.
    pub ids: Option<Vec<String>>,
    pub grid: Vec<f64>,
    pub measured: Vec<f64>,
    pub error: Vec<f64>,
    /// NaN where no prediction applies; such rows are not gated.
    pub predicted: Vec<f64>,
    pub z: Vec<f64>,
    pub samples: u64,
    pub extra: Vec<(String, Vec<f64>)>,
}

impl Table {
    fn new(
        name: impl Into<String>,
        grid: Vec<f64>,
        measured: Vec<f64>,
        error: Vec<f64>,
        predicted: Vec<f64>,
        samples: u64,
    ) -> Self {
        let z = measured
            .iter()
            .zip(&error)
            .zip(&predicted)
            .map(|((m, e), p)| {
                if p.is_finite() {
                    z_score(*m, *e, *p)
                } else {
                    f64::NAN
                }
            })
            .collect();
        Self {
            name: name.into(),
            ids: None,
            grid,
            measured,
            error,
            predicted,
            z,
            samples,
            extra: Vec::new(),
        }
    }

    fn with_ids(mut self, ids: Vec<String>) -> Self {
        self.ids = Some(ids);
        self
    }

    fn with_extra(mut self, name: &str, values: Vec<f64>) -> Self {
        self.extra.push((name.to_string(), values));
        self
    }

    fn append(&mut self, other: Table, id: &str) {
        let ids = self.ids.get_or_insert_with(Vec::new);
        ids.extend(std::iter::repeat_n(id.to_string(), other.grid.len()));
        self.grid.extend(other.grid);
        self.measured.extend(other.measured);
        self.error.extend(other.error);
        self.predicted.extend(other.predicted);
        self.z.extend(other.z);
    }

    /// Largest finite `|z|` (0 if none).
    pub fn max_abs_z(&self) -> f64 {
        self.z
            .iter()
            .filter(|z| z.is_finite())
            .fold(0.0, |a, z| a.max(z.abs()))
    }

    pub fn gated_points(&self) -> usize {
        self.z.iter().filter(|z| z.is_finite()).count()
    }

    pub fn to_csv(&self) -> String {
        let mut header: Vec<&str> = Vec::new();
        if self.ids.is_some() {
            header.push("id");
        }
        header.extend(["grid", "measured", "error", "predicted", "z", "samples"]);
        header.extend(self.extra.iter().map(|(name, _)| name.as_str()));
        let rows = (0..self.grid.len()).map(|r| {
            let mut row: Vec<String> = self.ids.iter().map(|ids| ids[r].clone()).collect();
            row.extend(
                [
                    self.grid[r],
                    self.measured[r],
                    self.error[r],
                    self.predicted[r],
                    self.z[r],
                ]
                .map(sci),
            );
            row.push(self.samples.to_string());
            row.extend(self.extra.iter().map(|(_, col)| sci(col[r])));
            row
        });
        csv_string(&header, rows)
    }
}

/// 17 significant digits in scientific notation.
fn sci(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_string(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory CSV");
    for row in rows {
        w.write_record(&row).expect("in-memory CSV");
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("CSV fields are UTF-8")
}

fn corr_tables(
    label: &str,
    est: &CorrelationEstimate,
    predicted: Vec<f64>,
    predicted_delta: Option<f64>,
    samples: u64,
) -> Vec<Table> {
    let row: &CorrRow = &est.rows[0];
    let mut t = Table::new(
        label,
        est.points.clone(),
        row.re.clone(),
        row.err_re.clone(),
        predicted,
        samples,
    )
    .with_ids(vec![row.label.clone(); est.points.len()])
    .with_extra("imag", row.im.clone())
    .with_extra("imag_error", row.err_im.clone());
    if let (Some((re, im, err)), Some(pd)) = (row.delta, predicted_delta) {
        let g = est.points.len();
        t = t
            .with_extra("delta_measured", vec![re; g])
            .with_extra("delta_imag", vec![im; g])
            .with_extra("delta_error", vec![err; g])
            .with_extra("delta_predicted", vec![pd; g]);
        let mut d = Table::new(
            format!("{label}_delta"),
            vec![0.0],
            vec![re],
            vec![err],
            vec![pd],
            samples,
        );
        d.ids = Some(vec![row.label.clone()]);
        return vec![t, d];
    }
    vec![t]
}

fn freq_prediction(
    statistic: &str,
    variant: Variant,
    params: &Params,
    grid: &OmegaGrid,
    grid_eta: Option<(f64, Option<usize>)>,
) -> Result<(Vec<f64>, Option<f64>)> {
    match grid_eta {
        Some((eta, cutoff)) => {
            let t =
                theory::smoothed_variant(statistic, variant, params, &grid.centers(), eta, cutoff)?;
            Ok((t.values, None))
        }
        None => {
            let t = theory::predict(statistic, variant, params, &PredictGrid::Bins(grid.clone()))?;
            Ok((t.values, t.deltas.first().map(|d| d.1)))
        }
    }
}

impl Prepared {
    fn finish(&self, label: &str, acc: &Accumulator, n: usize) -> Result<Vec<Table>> {
        let samples = acc.count();
        Ok(match self {
            Self::Sff(k) => {
                let e = k.finish(acc)?;
                let p = theory::predict(
                    "sff",
                    Variant::Exact,
                    &Params::new(n),
                    &PredictGrid::Points(e.grid.clone()),
                )?;
                vec![Table::new(
                    label, e.grid, e.mean, e.error, p.values, samples,
                )]
            }
            Self::R2(k) => {
                let e = k.finish(acc)?;
                let p = e.cue_prediction(n);
                let t = Table::new(
                    label,
                    e.estimate.grid,
                    e.estimate.mean,
                    e.estimate.error,
                    p,
                    samples,
                );
                vec![t.with_extra("delta_weight", vec![e.delta_weight; k.grid.bins])]
            }
            Self::Psff {
                kernel,
                n_a,
                variant,
            } => {
                let e = kernel.finish(acc)?;
                let pred = |v| {
                    e.grid
                        .iter()
                        .map(|&t| theory::psff_rmt(t as i64, n, *n_a, v))
                        .collect::<Result<Vec<_>>>()
                };
                let p = pred(*variant)?;
                let leading = pred(Variant::Leading)?;
                vec![Table::new(label, e.grid, e.mean, e.error, p, samples)
                    .with_extra("predicted_leading", leading)]
            }
            Self::Corr {
                kernel,
                variant,
                grid_eta,
            } => {
                let est = kernel.finish(acc)?;
                let cat = kernel.category;
                let params = Params {
                    category: Some(cat),
                    ..Params::new(n)
                };
                let (p, d) = match &kernel.grid {
                    CorrGrid::Time { .. } => {
                        let p = theory::predict(
                            "corr_time",
                            *variant,
                            &params,
                            &PredictGrid::Points(est.points.clone()),
                        )?;
                        (p.values, None)
                    }
                    CorrGrid::Frequency(g) => {
                        freq_prediction("corr_freq", *variant, &params, g, *grid_eta)?
                    }
                };
                corr_tables(label, &est, p, d, samples)
            }
            Self::Eth(k) => {
                let e = k.finish(acc)?;
                let o = &k.observable;
                let pred = theory::eth_rmt_prediction(o.trace(), o.trace_sq(), n)?;
                let f_pred = (n as f64 * pred.offdiag_variance).sqrt();
                let bins = e.f_omega.grid.len();
                let f = Table::new(
                    label,
                    e.f_omega.grid.clone(),
                    e.f_omega.mean,
                    e.f_omega.error,
                    vec![f_pred; bins],
                    samples,
                )
                .with_extra("offdiag_measured", e.offdiag_by_omega.mean)
                .with_extra("offdiag_error", e.offdiag_by_omega.error)
                .with_extra("offdiag_predicted", vec![pred.offdiag_variance; bins]);
                let rows = [
                    ("diag_mean", e.diag_mean, pred.mean_coefficient),
                    (
                        "diag_second_moment",
                        e.diag_second_moment,
                        pred.diag_second_moment,
                    ),
                    ("diag_variance", e.diag_variance, pred.diag_variance),
                    (
                        "offdiag_variance",
                        e.offdiag_variance,
                        pred.offdiag_variance,
                    ),
                    ("excess_kurtosis", e.excess_kurtosis, f64::NAN),
                    ("neighbour_correlation", e.neighbour_correlation, f64::NAN),
                ];
                let scalars = Table::new(
                    format!("{label}_scalars"),
                    vec![0.0; rows.len()],
                    rows.iter().map(|r| r.1 .0).collect(),
                    rows.iter().map(|r| r.1 .1).collect(),
                    rows.iter().map(|r| r.2).collect(),
                    samples,
                )
                .with_ids(rows.iter().map(|r| r.0.to_string()).collect());
                vec![f, scalars]
            }
            Self::OpCorr {
                kernel,
                traces,
                variant,
                grid_eta,
            } => {
                let est = kernel.finish(acc)?;
                let params = Params {
                    traces: Some(*traces),
                    ..Params::new(n)
                };
                let (p, d) = match &kernel.grid {
                    CorrGrid::Time { .. } => {
                        let form = theory::op_corr_time_form(*traces, n, *variant)?;
                        (
                            est.points.iter().map(|&t| form.eval(t as i64, n)).collect(),
                            None,
                        )
                    }
                    CorrGrid::Frequency(g) => {
                        freq_prediction("op_corr_freq", *variant, &params, g, *grid_eta)?
                    }
                };
                corr_tables(label, &est, p, d, samples)
            }
            Self::Rho { kernel, initial } => {
                let e = kernel.finish(acc)?;
                let rho0 = kernel.rho0.matrix();
                let mut table: Option<Table> = None;
                let mut push = |t: Table, id: String| match table.as_mut() {
                    None => {
                        let len = t.grid.len();
                        table = Some(t.with_ids(vec![id; len]));
                    }
                    Some(tab) => tab.append(t, &id),
                };
                for (p, &(a, b)) in e.probes.iter().enumerate() {
                    let pred: Vec<Complex64> = e
                        .times
                        .iter()
                        .map(|&t| theory::rho_entry_rmt(rho0[(a, b)], a == b, t, n))
                        .collect();
                    let re = &e.re[p];
                    let im = &e.im[p];
                    push(
                        Table::new(
                            label,
                            re.grid.clone(),
                            re.mean.clone(),
                            re.error.clone(),
                            pred.iter().map(|z| z.re).collect(),
                            samples,
                        ),
                        format!("re_{a}_{b}"),
                    );
                    push(
                        Table::new(
                            label,
                            im.grid.clone(),
                            im.mean.clone(),
                            im.error.clone(),
                            pred.iter().map(|z| z.im).collect(),
                            samples,
                        ),
                        format!("im_{a}_{b}"),
                    );
                }
                for (j, (track, o)) in e.tracks.iter().zip(&kernel.observables).enumerate() {
                    let pred = e
                        .times
                        .iter()
                        .map(|&t| theory::observable_track_rmt(o.trace(), initial[j], t, n))
                        .collect();
                    push(
                        Table::new(
                            label,
                            track.grid.clone(),
                            track.mean.clone(),
                            track.error.clone(),
                            pred,
                            samples,
                        ),
                        format!("observable_{j}"),
                    );
                }
                table.into_iter().collect()
            }
            Self::Moment2 { n } => {
                let (m, e) = acc.mean_with_error()?;
                let grid = (0..n * n).map(|k| k as f64).collect();
                vec![Table::new(
                    label,
                    grid,
                    m,
                    e,
                    vec![1.0 / *n as f64; n * n],
                    samples,
                )]
            }
        })
    }
}

/// Outcome of a run: accumulators plus the finished tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub config: RunConfig,
    pub accumulators: EnsembleAccumulator,
    pub tables: Vec<Table>,
    pub failures: usize,
    pub warnings: Vec<String>,
}

impl Bundle {
    /// Largest `|z|` over every table.
    pub fn max_abs_z(&self) -> f64 {
        self.tables.iter().fold(0.0, |a, t| a.max(t.max_abs_z()))
    }

    pub fn passed(&self) -> bool {
        self.max_abs_z() <= self.config.z_gate
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Per-table verdicts.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "samples: {}", self.config.samples);
        let _ = writeln!(s, "failed samples: {}", self.failures);
        let _ = writeln!(s, "z gate: {}", self.config.z_gate);
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        for t in &self.tables {
            let z = t.max_abs_z();
            let verdict = if z <= self.config.z_gate {
                "PASS"
            } else {
                "FAIL"
            };
            let _ = writeln!(
                s,
                "[{}] max |z| = {z:.3} over {} points: {verdict}",
                t.name,
                t.gated_points()
            );
        }
        let _ = writeln!(
            s,
            "overall: {}",
            if self.passed() { "PASS" } else { "FAIL" }
        );
        s
    }
}

fn is_numerical_failure(e: &Error) -> bool {
    matches!(e, Error::NotUnitary { .. } | Error::Eigensolver { .. })
}

struct ChunkOutput {
    acc: EnsembleAccumulator,
    failures: usize,
}

fn run_chunk(
    plan: &Plan,
    range: std::ops::Range<u64>,
    options: &RunOptions,
) -> Result<ChunkOutput> {
    let mut acc = plan.empty_accumulators();
    let mut failures = 0;
    let spectrum_needed = plan.needs_spectrum();
    for i in range {
        let mut u = plan.operator(i)?;
        if options.inject_non_unitary.is_some_and(|f| f(i)) {
            u *= Complex64::new(1.5, 0.0);
        }
        let checked = (|| -> Result<Option<SpectralData>> {
            let residual = unitarity_residual(&u);
            if residual > FLOQUET_UNITARITY_TOL {
                return Err(Error::NotUnitary {
                    residual,
                    tolerance: FLOQUET_UNITARITY_TOL,
                });
            }
            spectrum_needed.then(|| diagonalize(&u)).transpose()
        })();
        let spectrum = match checked {
            Ok(s) => s,
            Err(e) if is_numerical_failure(&e) => {
                failures += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        if plan.config.persist_spectra {
            if let Some(s) = &spectrum {
                io::save_spectral(
                    &plan
                        .config
                        .out
                        .join("spectra")
                        .join(format!("sample_{i:08}.fqlb")),
                    s,
                )?;
            }
        }
        for (label, st) in plan.labels.iter().zip(&plan.stats) {
            let v = st.sample(&u, spectrum.as_ref())?;
            acc.get_mut(label).expect("plan label").push(i, &v)?;
        }
    }
    Ok(ChunkOutput { acc, failures })
}

fn par_map<T: Send>(items: Vec<u64>, f: impl Fn(u64) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.into_iter().map(f).collect()
    }
}

/// Samples the ensemble and accumulates every statistic.
pub fn sample(plan: &Plan, options: &RunOptions) -> Result<(EnsembleAccumulator, usize)> {
    let m = plan.config.samples as u64;
    if plan.config.persist_spectra {
        fs::create_dir_all(plan.config.out.join("spectra"))?;
    }
    let chunks = m.div_ceil(CHUNK);
    let work = || -> Result<(EnsembleAccumulator, usize)> {
        let mut total = plan.empty_accumulators();
        let mut failures = 0;
        let mut start = 0;
        while start < chunks {
            let wave: Vec<u64> = (start..(start + WAVE).min(chunks)).collect();
            start += WAVE;
            let parts = par_map(wave, |c| {
                run_chunk(plan, c * CHUNK..((c + 1) * CHUNK).min(m), options)
            });
            for part in parts {
                let part = part?;
                total.merge(&part.acc)?;
                failures += part.failures;
            }
        }
        Ok((total, failures))
    };
    #[cfg(feature = "parallel")]
    let (acc, failures) = if plan.config.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(plan.config.workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work)?
    } else {
        work()?
    };
    #[cfg(not(feature = "parallel"))]
    let (acc, failures) = work()?;
    let limit = plan.config.max_failure_rate;
    if failures as f64 > limit * m as f64 {
        return Err(Error::FailureRate {
            failed: failures,
            total: m as usize,
            limit: 100.0 * limit,
        });
    }
    Ok((acc, failures))
}

/// Turns accumulators (from [`sample`] or merged partial runs) into tables.
pub fn finish(plan: &Plan, accumulators: EnsembleAccumulator, failures: usize) -> Result<Bundle> {
    let mut tables = Vec::new();
    for (label, st) in plan.labels.iter().zip(&plan.stats) {
        let acc = accumulators
            .get(label)
            .ok_or_else(|| Error::SchemaMismatch(format!("no accumulator for `{label}`")))?;
        if acc.len() != st.width() {
            return Err(Error::SchemaMismatch(format!(
                "`{label}` has width {}, expected {}",
                acc.len(),
                st.width()
            )));
        }
        tables.extend(st.finish(label, acc, plan.n)?);
    }
    Ok(Bundle {
        config: plan.config.clone(),
        accumulators,
        tables,
        failures,
        warnings: plan.warnings.clone(),
    })
}

pub fn run(config: &RunConfig) -> Result<Bundle> {
    run_with(config, &RunOptions::default())
}

pub fn run_with(config: &RunConfig, options: &RunOptions) -> Result<Bundle> {
    let plan = config.plan()?;
    let (acc, failures) = sample(&plan, options)?;
    finish(&plan, acc, failures)
}

/// Adds the samples of `b` to `a`; both must come from the same plan.
pub fn merge(a: &EnsembleAccumulator, b: &EnsembleAccumulator) -> Result<EnsembleAccumulator> {
    let mut out = a.clone();
    out.merge(b)?;
    Ok(out)
}

/// Files written by [`write_bundle`].
pub const SUMMARY_FILE: &str = "summary.txt";
pub const ACCUMULATOR_FILE: &str = "accumulators.bin";
pub const CONFIG_FILE: &str = "config.toml";

/// Writes one CSV per table, the summary, the resolved config and the raw
/// accumulators into `dir`.
pub fn write_bundle(bundle: &Bundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for t in &bundle.tables {
        fs::write(dir.join(format!("{}.csv", t.name)), t.to_csv())?;
    }
    fs::write(dir.join(SUMMARY_FILE), bundle.summary())?;
    fs::write(dir.join(CONFIG_FILE), bundle.config.to_toml()?)?;
    io::save_accumulators(&dir.join(ACCUMULATOR_FILE), &bundle.accumulators)?;
    Ok(())
}

/// Prediction tables for every statistic of a config, without sampling.
pub fn predictions(plan: &Plan) -> Result<Vec<(String, Vec<f64>, Vec<f64>)>> {
    let n = plan.n;
    let mut out = Vec::new();
    for (label, st) in plan.labels.iter().zip(&plan.stats) {
        let times = |t_max: usize| (0..=t_max).map(|t| t as f64).collect::<Vec<_>>();
        let sym = |t_max: usize| {
            (-(t_max as i64)..=t_max as i64)
                .map(|t| t as f64)
                .collect::<Vec<_>>()
        };
        match st {
            Prepared::Sff(k) => {
                let g = times(k.t_max);
                out.push((
                    label.clone(),
                    g.clone(),
                    g.iter().map(|&t| theory::sff_cue(t as i64, n)).collect(),
                ));
            }
            Prepared::R2(k) => {
                let est = crate::spectral::R2Estimate {
                    estimate: crate::stats::Estimate {
                        grid: k.grid.centers(),
                        mean: Vec::new(),
                        error: Vec::new(),
                        samples: 0,
                    },
                    delta_weight: n as f64,
                    grid: k.grid.clone(),
                };
                out.push((label.clone(), k.grid.centers(), est.cue_prediction(n)));
            }
            Prepared::Psff {
                kernel,
                n_a,
                variant,
            } => {
                let g = times(kernel.t_max);
                let v = g
                    .iter()
                    .map(|&t| theory::psff_rmt(t as i64, n, *n_a, *variant))
                    .collect::<Result<_>>()?;
                out.push((label.clone(), g, v));
            }
            Prepared::Corr {
                kernel,
                variant,
                grid_eta,
            } => {
                let params = Params {
                    category: Some(kernel.category),
                    ..Params::new(n)
                };
                match &kernel.grid {
                    CorrGrid::Time { t_max } => {
                        let p = theory::predict(
                            "corr_time",
                            *variant,
                            &params,
                            &PredictGrid::Points(sym(*t_max)),
                        )?;
                        out.push((label.clone(), p.grid, p.values));
                    }
                    CorrGrid::Frequency(g) => {
                        let (v, _) = freq_prediction("corr_freq", *variant, &params, g, *grid_eta)?;
                        out.push((label.clone(), g.centers(), v));
                    }
                }
            }
            Prepared::Eth(k) => {
                let o = &k.observable;
                let p = theory::eth_rmt_prediction(o.trace(), o.trace_sq(), n)?;
                let g = k.grid.centers();
                let f = (n as f64 * p.offdiag_variance).sqrt();
                out.push((label.clone(), g.clone(), vec![f; g.len()]));
            }
            Prepared::OpCorr {
                kernel,
                traces,
                variant,
                grid_eta,
            } => match &kernel.grid {
                CorrGrid::Time { t_max } => {
                    let form = theory::op_corr_time_form(*traces, n, *variant)?;
                    let g = sym(*t_max);
                    out.push((
                        label.clone(),
                        g.clone(),
                        g.iter().map(|&t| form.eval(t as i64, n)).collect(),
                    ));
                }
                CorrGrid::Frequency(g) => {
                    let params = Params {
                        traces: Some(*traces),
                        ..Params::new(n)
                    };
                    let (v, _) = freq_prediction("op_corr_freq", *variant, &params, g, *grid_eta)?;
                    out.push((label.clone(), g.centers(), v));
                }
            },
            Prepared::Rho { kernel, .. } => {
                let rho0 = kernel.rho0.matrix();
                for &(a, b) in &kernel.probes {
                    let g: Vec<f64> = kernel.times.iter().map(|&t| t as f64).collect();
                    let v = kernel
                        .times
                        .iter()
                        .map(|&t| theory::rho_entry_rmt(rho0[(a, b)], a == b, t, n).re)
                        .collect();
                    out.push((format!("{label}_re_{a}_{b}"), g, v));
                }
            }
            Prepared::Moment2 { n } => {
                out.push((
                    label.clone(),
                    (0..n * n).map(|k| k as f64).collect(),
                    vec![1.0 / *n as f64; n * n],
                ));
            }
        }
    }
    Ok(out)
}

/// CSV with columns `(grid, predicted)`.
pub fn prediction_csv(grid: &[f64], values: &[f64]) -> String {
    csv_string(
        &["grid", "predicted"],
        grid.iter().zip(values).map(|(&g, &v)| vec![sci(g), sci(v)]),
    )
}

/// A parsed run CSV, keyed by `(id, grid)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub rows: Vec<(String, f64, f64, f64)>,
}

pub fn parse_csv(text: &str) -> Result<CsvTable> {
    let bad = |e: csv::Error| Error::Config(format!("CSV: {e}"));
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(bad)?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("CSV lacks column `{name}`")))
    };
    let (g, m, e) = (col("grid")?, col("measured")?, col("error")?);
    let id = header.iter().position(|h| h == "id");
    let mut rows = Vec::new();
    for (k, record) in r.records().enumerate() {
        let record = record.map_err(bad)?;
        let num = |i: usize| -> Result<f64> {
            record
                .get(i)
                .ok_or_else(|| Error::Config(format!("row {} is short", k + 2)))?
                .parse()
                .map_err(|e| Error::Config(format!("row {}: {e}", k + 2)))
        };
        let label = id
            .and_then(|i| record.get(i))
            .unwrap_or_default()
            .to_string();
        rows.push((label, num(g)?, num(m)?, num(e)?));
    }
    Ok(CsvTable { rows })
}

/// Two-run comparison of one statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub name: String,
    /// `(id, grid, measured_a, error_a, measured_b, error_b, z)`.
    pub rows: Vec<(String, f64, f64, f64, f64, f64, f64)>,
    /// Rows present in only one run.
    pub unmatched: usize,
}

impl Comparison {
    pub fn max_abs_z(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.6)
            .filter(|z| z.is_finite())
            .fold(0.0, |a, z| a.max(z.abs()))
    }

    pub fn to_csv(&self) -> String {
        let header = [
            "id",
            "grid",
            "measured_a",
            "error_a",
            "measured_b",
            "error_b",
            "z",
        ];
        let rows = self.rows.iter().map(|(id, g, ma, ea, mb, eb, z)| {
            let mut row = vec![id.clone()];
            row.extend([*g, *ma, *ea, *mb, *eb, *z].map(sci));
            row
        });
        csv_string(&header, rows)
    }
}

/// `(a - b) / sqrt(ea^2 + eb^2)` on the shared rows of two tables.
pub fn compare_tables(name: &str, a: &CsvTable, b: &CsvTable) -> Comparison {
    let key = |id: &str, g: f64| (id.to_string(), g.to_bits());
    let bmap: BTreeMap<_, _> = b
        .rows
        .iter()
        .map(|(id, g, m, e)| (key(id, *g), (*m, *e)))
        .collect();
    let mut rows = Vec::new();
    for (id, g, ma, ea) in &a.rows {
        if let Some(&(mb, eb)) = bmap.get(&key(id, *g)) {
            let z = z_score(*ma, ea.hypot(eb), mb);
            rows.push((id.clone(), *g, *ma, *ea, mb, eb, z));
        }
    }
    let unmatched = a.rows.len() + b.rows.len() - 2 * rows.len();
    Comparison {
        name: name.to_string(),
        rows,
        unmatched,
    }
}

/// Joins every CSV present in both run directories.
pub fn compare_dirs(a: &Path, b: &Path) -> Result<Vec<Comparison>> {
    let mut names: Vec<String> = fs::read_dir(a)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.ends_with(".csv") && b.join(n).is_file())
        .collect();
    names.sort();
    names
        .iter()
        .map(|n| {
            let ta = parse_csv(&fs::read_to_string(a.join(n))?)?;
            let tb = parse_csv(&fs::read_to_string(b.join(n))?)?;
            Ok(compare_tables(n.trim_end_matches(".csv"), &ta, &tb))
        })
        .collect()
}
