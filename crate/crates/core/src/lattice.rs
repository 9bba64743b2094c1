//! Qudit lattices, gate schedules and dense Floquet operators.
//!
//! Sites are enumerated row-major over `lattice_dims` (last axis fastest).
//! The computational basis index is `n = sum_s digit_s * q^(L - 1 - s)`, so
//! site 0 is the most significant digit and an operator `A_0 (x) A_1 (x) ...`
//! has the usual Kronecker layout. A two-site gate on `(a, b)` sees the local
//! index `digit_a * q + digit_b`.

use std::collections::HashSet;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::haar::{self, UnitaryMatrix};
use crate::rng::{self, Domain};
use crate::CMatrix;

pub const DEFAULT_DIM_CAP: usize = 4096;
pub const FLOQUET_UNITARITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Open,
    Periodic,
}

/// Local dimension and number of sites of a qudit register.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuditSpace {
    pub q: usize,
    pub sites: usize,
}

impl QuditSpace {
    pub fn new(q: usize, sites: usize) -> Result<Self> {
        if q < 2 {
            return Err(Error::InvalidParameter(format!(
                "local dimension q = {q} must be >= 2"
            )));
        }
        checked_pow(q, sites)
            .ok_or_else(|| Error::InvalidParameter("Hilbert dimension overflows".into()))?;
        Ok(Self { q, sites })
    }

    /// Total Hilbert dimension `q^sites`.
    pub fn dim(&self) -> usize {
        self.q.pow(self.sites as u32)
    }

    /// Basis-index weight of `site`.
    pub fn stride(&self, site: usize) -> usize {
        self.q.pow((self.sites - 1 - site) as u32)
    }

    pub fn digit(&self, n: usize, site: usize) -> usize {
        (n / self.stride(site)) % self.q
    }

    /// Interprets a plain dimension `n` as `sites` qudits of size `q` if it is an exact power.
    pub fn from_dim(n: usize, q: usize) -> Option<Self> {
        let mut sites = 0;
        let mut d = 1usize;
        while d < n {
            d = d.checked_mul(q)?;
            sites += 1;
        }
        (d == n && q >= 2).then_some(Self { q, sites })
    }
}

fn checked_pow(q: usize, k: usize) -> Option<usize> {
    let mut d = 1usize;
    for _ in 0..k {
        d = d.checked_mul(q)?;
    }
    Some(d)
}

/// Built-in gate orderings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NamedSchedule {
    /// Per axis: even-offset bonds, then odd-offset bonds (then the wrap bond
    /// of an odd periodic axis).
    Brickwork,
    /// Every bond in its own substep.
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleSpec {
    Named(NamedSchedule),
    Explicit(Vec<Vec<[usize; 2]>>),
}

/// Complete description of one Floquet random-circuit ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitSpec {
    pub lattice_dims: Vec<usize>,
    pub q: usize,
    /// One entry per axis; a single entry applies to all axes.
    pub boundary: Vec<Boundary>,
    pub schedule: ScheduleSpec,
    #[serde(default = "default_ensemble_size")]
    pub ensemble_size: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_dim_cap")]
    pub dim_cap: usize,
}

fn default_ensemble_size() -> usize {
    1
}

fn default_dim_cap() -> usize {
    DEFAULT_DIM_CAP
}

impl CircuitSpec {
    /// 1D chain of `sites` qudits.
    pub fn chain(sites: usize, q: usize, boundary: Boundary, schedule: ScheduleSpec) -> Self {
        Self {
            lattice_dims: vec![sites],
            q,
            boundary: vec![boundary],
            schedule,
            ensemble_size: 1,
            master_seed: 0,
            dim_cap: DEFAULT_DIM_CAP,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    pub fn num_sites(&self) -> usize {
        self.lattice_dims.iter().product()
    }

    fn boundary_of(&self, axis: usize) -> Boundary {
        match self.boundary.as_slice() {
            [single] => *single,
            many => many.get(axis).copied().unwrap_or(Boundary::Open),
        }
    }

    fn coords(&self, site: usize) -> Vec<usize> {
        let mut c = vec![0; self.lattice_dims.len()];
        let mut rest = site;
        for (axis, &len) in self.lattice_dims.iter().enumerate().rev() {
            c[axis] = rest % len;
            rest /= len;
        }
        c
    }

    fn site_of(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .zip(&self.lattice_dims)
            .fold(0, |acc, (&c, &len)| acc * len + c)
    }

    /// Nearest neighbours under the declared boundary conditions.
    pub fn are_neighbors(&self, a: usize, b: usize) -> bool {
        let n = self.num_sites();
        if a >= n || b >= n || a == b {
            return false;
        }
        let (ca, cb) = (self.coords(a), self.coords(b));
        let mut differing = ca.iter().zip(&cb).enumerate().filter(|(_, (x, y))| x != y);
        let Some((axis, (&x, &y))) = differing.next() else {
            return false;
        };
        if differing.next().is_some() {
            return false;
        }
        let d = x.abs_diff(y);
        let len = self.lattice_dims[axis];
        d == 1 || (self.boundary_of(axis) == Boundary::Periodic && len > 2 && d == len - 1)
    }

    /// Bonds along `axis` whose lower coordinate has the given parity; the
    /// wrap bond is included for even-length periodic axes.
    fn axis_bonds(&self, axis: usize) -> Vec<(usize, [usize; 2])> {
        let len = self.lattice_dims[axis];
        let periodic = self.boundary_of(axis) == Boundary::Periodic && len > 2;
        let mut out = Vec::new();
        for site in 0..self.num_sites() {
            let c = self.coords(site);
            if c[axis] + 1 < len {
                let mut nb = c.clone();
                nb[axis] += 1;
                out.push((c[axis], [site, self.site_of(&nb)]));
            } else if periodic {
                let mut nb = c.clone();
                nb[axis] = 0;
                out.push((c[axis], [site, self.site_of(&nb)]));
            }
        }
        out
    }

    /// Resolves the schedule to explicit substeps.
    pub fn substeps(&self) -> Vec<Vec<[usize; 2]>> {
        match &self.schedule {
            ScheduleSpec::Explicit(s) => s.clone(),
            ScheduleSpec::Named(NamedSchedule::Sequential) => (0..self.lattice_dims.len())
                .flat_map(|axis| self.axis_bonds(axis))
                .map(|(_, bond)| vec![bond])
                .collect(),
            ScheduleSpec::Named(NamedSchedule::Brickwork) => {
                let mut layers = Vec::new();
                for axis in 0..self.lattice_dims.len() {
                    let len = self.lattice_dims[axis];
                    let bonds = self.axis_bonds(axis);
                    let even: Vec<_> = bonds
                        .iter()
                        .filter(|(c, _)| c % 2 == 0 && c + 1 < len)
                        .map(|b| b.1)
                        .collect();
                    let odd: Vec<_> = bonds
                        .iter()
                        .filter(|(c, _)| c % 2 == 1 && (c + 1 < len || len.is_multiple_of(2)))
                        .map(|b| b.1)
                        .collect();
                    // odd periodic axis: the wrap bond starts at an even coordinate
                    let wrap: Vec<_> = bonds
                        .iter()
                        .filter(|(c, _)| c % 2 == 0 && c + 1 == len)
                        .map(|b| b.1)
                        .collect();
                    layers.extend([even, odd, wrap].into_iter().filter(|l| !l.is_empty()));
                }
                layers
            }
        }
    }

    pub fn space(&self) -> Result<QuditSpace> {
        QuditSpace::new(self.q, self.num_sites())
    }

    /// Checks every invariant, collecting all violations.
    pub fn validate(self) -> Result<ValidatedSpec> {
        let mut errors = Vec::new();
        let mut warnings = Vec::new();
        if self.lattice_dims.is_empty() || self.lattice_dims.contains(&0) {
            errors.push(format!(
                "lattice_dims {:?} must be non-empty positive integers",
                self.lattice_dims
            ));
        }
        if self.q < 2 {
            errors.push(format!("q = {} must be >= 2", self.q));
        }
        if self.boundary.is_empty()
            || (self.boundary.len() != 1 && self.boundary.len() != self.lattice_dims.len())
        {
            errors.push(format!(
                "boundary has {} entries; expected 1 or {}",
                self.boundary.len(),
                self.lattice_dims.len()
            ));
        }
        if self.ensemble_size == 0 {
            errors.push("ensemble_size must be positive".into());
        }
        if !errors.is_empty() {
            return Err(Error::InvalidSpec(errors));
        }
        let sites = self.num_sites();
        match checked_pow(self.q, sites) {
            Some(n) if n <= self.dim_cap => {}
            _ => errors.push(format!(
                "Hilbert dimension {}^{} exceeds the dense-matrix cap {}",
                self.q, sites, self.dim_cap
            )),
        }
        let mut seen_pairs = HashSet::new();
        for (s, substep) in self.substeps().iter().enumerate() {
            let mut used = HashSet::new();
            for &[a, b] in substep {
                if a >= sites || b >= sites {
                    errors.push(format!(
                        "substep {s}: pair ({a},{b}) references a site outside 0..{sites}"
                    ));
                    continue;
                }
                if !self.are_neighbors(a, b) {
                    errors.push(format!(
                        "substep {s}: pair ({a},{b}) is not a nearest-neighbour bond"
                    ));
                }
                for site in [a, b] {
                    if !used.insert(site) {
                        errors.push(format!(
                            "substep {s}: site {site} appears in two pairs (overlap)"
                        ));
                    }
                }
                if !seen_pairs.insert((a.min(b), a.max(b))) {
                    warnings.push(format!(
                        "substep {s}: bond ({a},{b}) already gated earlier in the period"
                    ));
                }
            }
        }
        if errors.is_empty() {
            let substeps = self.substeps();
            Ok(ValidatedSpec {
                spec: self,
                substeps,
                warnings,
            })
        } else {
            Err(Error::InvalidSpec(errors))
        }
    }
}

/// A [`CircuitSpec`] that passed validation, with its resolved substeps.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedSpec {
    spec: CircuitSpec,
    substeps: Vec<Vec<[usize; 2]>>,
    warnings: Vec<String>,
}

impl ValidatedSpec {
    pub fn spec(&self) -> &CircuitSpec {
        &self.spec
    }

    pub fn substeps(&self) -> &[Vec<[usize; 2]>] {
        &self.substeps
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn space(&self) -> QuditSpace {
        QuditSpace {
            q: self.spec.q,
            sites: self.spec.num_sites(),
        }
    }

    pub fn dim(&self) -> usize {
        self.space().dim()
    }
}

impl std::ops::Deref for ValidatedSpec {
    type Target = CircuitSpec;

    fn deref(&self) -> &CircuitSpec {
        &self.spec
    }
}

/// Dense unitary for one period of the drive.
#[derive(Debug, Clone, PartialEq)]
pub struct FloquetOperator(CMatrix);

impl FloquetOperator {
    pub fn new(m: CMatrix) -> Result<Self> {
        Ok(Self(
            UnitaryMatrix::new(m, FLOQUET_UNITARITY_TOL)?.into_matrix(),
        ))
    }

    /// Skips the unitarity check; downstream consumers re-check residuals.
    pub fn new_unchecked(m: CMatrix) -> Self {
        Self(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }
}

impl From<UnitaryMatrix> for FloquetOperator {
    fn from(u: UnitaryMatrix) -> Self {
        Self(u.into_matrix())
    }
}

impl fmt::Display for FloquetOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FloquetOperator(N = {})", self.dim())
    }
}

/// Left-multiplies `target` by the gate acting on sites `(site_a, site_b)`,
/// i.e. applies the gate to every column of `target`.
pub fn embed_two_site_gate(
    gate: &UnitaryMatrix,
    site_a: usize,
    site_b: usize,
    space: QuditSpace,
    target: &mut CMatrix,
) -> Result<()> {
    let q = space.q;
    let n = space.dim();
    if gate.dim() != q * q {
        return Err(Error::DimensionMismatch {
            expected: q * q,
            actual: gate.dim(),
        });
    }
    if target.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: target.nrows(),
        });
    }
    for s in [site_a, site_b] {
        if s >= space.sites {
            return Err(Error::IndexOutOfRange {
                index: s,
                dim: space.sites,
            });
        }
    }
    if site_a == site_b {
        return Err(Error::InvalidParameter(format!(
            "gate sites must differ (got {site_a} twice)"
        )));
    }
    let (sa, sb) = (space.stride(site_a), space.stride(site_b));
    let offsets: Vec<usize> = (0..q * q).map(|g| (g / q) * sa + (g % q) * sb).collect();
    let bases: Vec<usize> = (0..n)
        .filter(|&i| space.digit(i, site_a) == 0 && space.digit(i, site_b) == 0)
        .collect();
    let g = gate.matrix();
    let d = q * q;
    let mut buf = vec![Complex64::new(0.0, 0.0); d];
    for c in 0..target.ncols() {
        let mut col = target.column_mut(c);
        let col = col.as_mut_slice();
        for &base in &bases {
            for (x, &o) in buf.iter_mut().zip(&offsets) {
                *x = col[base + o];
            }
            for (r, &o) in offsets.iter().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for (k, x) in buf.iter().enumerate() {
                    acc += g[(r, k)] * x;
                }
                col[base + o] = acc;
            }
        }
    }
    Ok(())
}

/// Floquet operator of sample `sample_index`: the time-ordered product of the
/// substeps (first substep acts first), each gate an independent CUE(q^2)
/// drawn from the stream `(master_seed, sample_index, substep, pair)`.
pub fn build_floquet(spec: &ValidatedSpec, sample_index: u64) -> Result<FloquetOperator> {
    let space = spec.space();
    let n = space.dim();
    let mut f = CMatrix::identity(n, n);
    for (s, substep) in spec.substeps().iter().enumerate() {
        for (p, &[a, b]) in substep.iter().enumerate() {
            let mut stream = rng::stream(
                spec.master_seed,
                Domain::Gate,
                &[sample_index, s as u64, p as u64],
            );
            let gate = haar::sample_cue(space.q * space.q, &mut stream)?;
            embed_two_site_gate(&gate, a, b, space, &mut f)?;
        }
    }
    FloquetOperator::new(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brickwork4() -> CircuitSpec {
        CircuitSpec::chain(
            4,
            2,
            Boundary::Open,
            ScheduleSpec::Explicit(vec![vec![[0, 1], [2, 3]], vec![[1, 2]]]),
        )
    }

    fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
        let (ra, ca) = a.shape();
        let (rb, cb) = b.shape();
        CMatrix::from_fn(ra * rb, ca * cb, |i, j| {
            a[(i / rb, j / cb)] * b[(i % rb, j % cb)]
        })
    }

    fn max_diff(a: &CMatrix, b: &CMatrix) -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn canonical_brickwork_is_valid() {
        let v = brickwork4().validate().unwrap();
        assert!(v.warnings().is_empty());
        let named = CircuitSpec::chain(
            4,
            2,
            Boundary::Open,
            ScheduleSpec::Named(NamedSchedule::Brickwork),
        );
        assert_eq!(named.substeps(), v.substeps());
    }

    #[test]
    fn overlap_reported() {
        let spec = CircuitSpec::chain(
            4,
            2,
            Boundary::Open,
            ScheduleSpec::Explicit(vec![vec![[0, 1], [1, 2]]]),
        );
        match spec.validate() {
            Err(Error::InvalidSpec(errs)) => assert!(errs
                .iter()
                .any(|e| e.contains("site 1") && e.contains("overlap"))),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_neighbor_reported() {
        let spec = CircuitSpec::chain(
            4,
            2,
            Boundary::Open,
            ScheduleSpec::Explicit(vec![vec![[0, 3]]]),
        );
        match spec.validate() {
            Err(Error::InvalidSpec(errs)) => assert!(errs.iter().any(|e| e.contains("(0,3)"))),
            other => panic!("{other:?}"),
        }
        // periodic wrap makes it a bond
        let spec = CircuitSpec::chain(
            4,
            2,
            Boundary::Periodic,
            ScheduleSpec::Explicit(vec![vec![[0, 3]]]),
        );
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn every_violation_listed() {
        let mut spec = CircuitSpec::chain(
            13,
            2,
            Boundary::Open,
            ScheduleSpec::Explicit(vec![vec![[0, 1], [1, 5]]]),
        );
        spec.dim_cap = 4096;
        match spec.validate() {
            Err(Error::InvalidSpec(errs)) => assert_eq!(errs.len(), 3, "{errs:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn repeated_bond_is_warning() {
        let spec = CircuitSpec::chain(
            3,
            2,
            Boundary::Open,
            ScheduleSpec::Explicit(vec![vec![[0, 1]], vec![[1, 0]]]),
        );
        let v = spec.validate().unwrap();
        assert_eq!(v.warnings().len(), 1);
    }

    #[test]
    fn periodic_and_2d_schedules() {
        let ring = CircuitSpec::chain(
            5,
            2,
            Boundary::Periodic,
            ScheduleSpec::Named(NamedSchedule::Brickwork),
        );
        let steps = ring.substeps();
        assert_eq!(steps.iter().map(Vec::len).sum::<usize>(), 5);
        ring.clone().validate().unwrap();
        let mut grid = ring;
        grid.lattice_dims = vec![2, 3];
        grid.boundary = vec![Boundary::Open];
        let v = grid.clone().validate().unwrap();
        // 3 vertical + 4 horizontal bonds
        assert_eq!(v.substeps().iter().map(Vec::len).sum::<usize>(), 7);
        grid.schedule = ScheduleSpec::Named(NamedSchedule::Sequential);
        assert_eq!(grid.validate().unwrap().substeps().len(), 7);
    }

    #[test]
    fn identity_gate_leaves_matrix() {
        let space = QuditSpace::new(2, 3).unwrap();
        let mut m = haar::sample_cue_indexed(8, 1, 0).unwrap().into_matrix();
        let before = m.clone();
        embed_two_site_gate(&UnitaryMatrix::identity(4), 0, 1, space, &mut m).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn two_site_system_is_the_gate() {
        let space = QuditSpace::new(2, 2).unwrap();
        let g = haar::sample_cue_indexed(4, 2, 0).unwrap();
        let mut m = CMatrix::identity(4, 4);
        embed_two_site_gate(&g, 0, 1, space, &mut m).unwrap();
        assert!(max_diff(&m, g.matrix()) < 1e-15);
    }

    #[test]
    fn embedding_matches_kronecker_oracle() {
        let space = QuditSpace::new(2, 3).unwrap();
        let g = haar::sample_cue_indexed(4, 3, 0).unwrap();
        let id2 = CMatrix::identity(2, 2);
        let mut m = CMatrix::identity(8, 8);
        embed_two_site_gate(&g, 0, 1, space, &mut m).unwrap();
        assert!(max_diff(&m, &kron(g.matrix(), &id2)) < 1e-14);
        let mut m = CMatrix::identity(8, 8);
        embed_two_site_gate(&g, 1, 2, space, &mut m).unwrap();
        assert!(max_diff(&m, &kron(&id2, g.matrix())) < 1e-14);
        // reversed site order swaps the gate's tensor factors
        let swap = CMatrix::from_fn(4, 4, |i, j| {
            if j == (i % 2) * 2 + i / 2 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let mut m = CMatrix::identity(8, 8);
        embed_two_site_gate(&g, 1, 0, space, &mut m).unwrap();
        let swapped = &swap * g.matrix() * &swap;
        assert!(max_diff(&m, &kron(&swapped, &id2)) < 1e-14);
    }

    #[test]
    fn embedding_is_left_multiplication() {
        let space = QuditSpace::new(3, 3).unwrap();
        let g = haar::sample_cue_indexed(9, 4, 0).unwrap();
        let x = haar::sample_cue_indexed(27, 4, 1).unwrap().into_matrix();
        let mut m = x.clone();
        embed_two_site_gate(&g, 1, 2, space, &mut m).unwrap();
        let full = kron(&CMatrix::identity(3, 3), g.matrix());
        assert!(max_diff(&m, &(full * x)) < 1e-13);
    }

    #[test]
    fn gate_dimension_checked() {
        let space = QuditSpace::new(2, 3).unwrap();
        let mut m = CMatrix::identity(8, 8);
        let g = haar::sample_cue_indexed(9, 4, 0).unwrap();
        assert!(matches!(
            embed_two_site_gate(&g, 0, 1, space, &mut m),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn empty_schedule_is_identity() {
        let spec = CircuitSpec::chain(3, 2, Boundary::Open, ScheduleSpec::Explicit(vec![]))
            .validate()
            .unwrap();
        assert_eq!(
            build_floquet(&spec, 0).unwrap().matrix(),
            &CMatrix::identity(8, 8)
        );
    }

    #[test]
    fn build_is_deterministic_and_unitary() {
        let spec = brickwork4().with_seed(5).validate().unwrap();
        let a = build_floquet(&spec, 3).unwrap();
        let b = build_floquet(&spec, 3).unwrap();
        assert_eq!(a, b);
        assert!(haar::unitarity_residual(a.matrix()) <= FLOQUET_UNITARITY_TOL);
        assert_ne!(a, build_floquet(&spec, 4).unwrap());
    }

    #[test]
    fn build_composes_in_schedule_order() {
        let spec = brickwork4().with_seed(8).validate().unwrap();
        let space = spec.space();
        let gate = |s: u64, p: u64| {
            haar::sample_cue(4, &mut rng::stream(8, Domain::Gate, &[0, s, p])).unwrap()
        };
        let id2 = CMatrix::identity(2, 2);
        let layer1 = kron(gate(0, 0).matrix(), gate(0, 1).matrix());
        let layer2 = kron(&kron(&id2, gate(1, 0).matrix()), &id2);
        let f = build_floquet(&spec, 0).unwrap();
        assert_eq!(space.dim(), 16);
        assert!(max_diff(f.matrix(), &(layer2 * layer1)) < 1e-13);
    }

    #[test]
    fn ordering_changes_operator() {
        let a = CircuitSpec::chain(
            3,
            2,
            Boundary::Open,
            ScheduleSpec::Explicit(vec![vec![[0, 1]], vec![[1, 2]]]),
        );
        let b = CircuitSpec::chain(
            3,
            2,
            Boundary::Open,
            ScheduleSpec::Explicit(vec![vec![[1, 2]], vec![[0, 1]]]),
        );
        let fa = build_floquet(&a.validate().unwrap(), 0).unwrap();
        let fb = build_floquet(&b.validate().unwrap(), 0).unwrap();
        assert!(max_diff(fa.matrix(), fb.matrix()) > 1e-3);
    }

    #[test]
    fn qudit_space_from_dim() {
        assert_eq!(
            QuditSpace::from_dim(64, 2),
            Some(QuditSpace { q: 2, sites: 6 })
        );
        assert_eq!(
            QuditSpace::from_dim(64, 4),
            Some(QuditSpace { q: 4, sites: 3 })
        );
        assert_eq!(QuditSpace::from_dim(48, 2), None);
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let text = r#"
            lattice_dims = [4]
            q = 2
            boundary = ["open"]
            schedule = "brickwork"
            ensemble_size = 10
            master_seed = 3
        "#;
        let spec: CircuitSpec = toml::from_str(text).unwrap();
        assert_eq!(spec.schedule, ScheduleSpec::Named(NamedSchedule::Brickwork));
        let explicit: CircuitSpec =
            toml::from_str(&text.replace("\"brickwork\"", "[[[0,1],[2,3]],[[1,2]]]")).unwrap();
        assert_eq!(explicit.substeps(), spec.substeps());
        let back: CircuitSpec = toml::from_str(&toml::to_string(&explicit).unwrap()).unwrap();
        assert_eq!(back, explicit);
    }
}
