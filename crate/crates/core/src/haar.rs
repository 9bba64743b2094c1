//! Haar-random (CUE) unitaries and exact Haar-moment oracles.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{self, Domain, Stream};
use crate::CMatrix;

/// Tolerance on `max |U^dag U - I|` for freshly sampled matrices.
pub const SAMPLE_UNITARITY_TOL: f64 = 1e-12;

/// A square unitary matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryMatrix(CMatrix);

impl UnitaryMatrix {
    /// Wraps `m` after checking `max |m^dag m - I| <= tol`.
    pub fn new(m: CMatrix, tol: f64) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                actual: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidDimension(0));
        }
        let residual = unitarity_residual(&m);
        if residual > tol {
            return Err(Error::NotUnitary {
                residual,
                tolerance: tol,
            });
        }
        Ok(Self(m))
    }

    pub fn new_unchecked(m: CMatrix) -> Self {
        Self(m)
    }

    pub fn identity(dim: usize) -> Self {
        Self(CMatrix::identity(dim, dim))
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

    pub fn residual(&self) -> f64 {
        unitarity_residual(&self.0)
    }
}

impl std::ops::Index<(usize, usize)> for UnitaryMatrix {
    type Output = Complex64;

    fn index(&self, idx: (usize, usize)) -> &Complex64 {
        &self.0[idx]
    }
}

/// `max_{ij} |(M^dag M - I)_{ij}|`.
pub fn unitarity_residual(m: &CMatrix) -> f64 {
    let g = m.adjoint() * m;
    let mut worst = 0.0f64;
    for ((i, j), z) in g
        .iter()
        .enumerate()
        .map(|(k, z)| ((k % g.nrows(), k / g.nrows()), z))
    {
        let target = if i == j {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        };
        worst = worst.max((z - target).norm());
    }
    worst
}

/// Draws a CUE matrix: complex Ginibre -> QR -> Q times the phases of diag(R).
pub fn sample_cue(dim: usize, stream: &mut Stream) -> Result<UnitaryMatrix> {
    if dim == 0 {
        return Err(Error::InvalidDimension(0));
    }
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let z = DMatrix::from_fn(dim, dim, |_, _| {
        let re: f64 = stream.sample(StandardNormal);
        let im: f64 = stream.sample(StandardNormal);
        Complex64::new(re * scale, im * scale)
    });
    let qr = z.qr();
    let r = qr.r();
    let mut q = qr.q();
    for k in 0..dim {
        let d = r[(k, k)];
        let norm = d.norm();
        // A zero pivot has probability zero; leave the column alone if it happens.
        let phase = if norm > 0.0 {
            d / norm
        } else {
            Complex64::new(1.0, 0.0)
        };
        for i in 0..dim {
            q[(i, k)] *= phase;
        }
    }
    Ok(UnitaryMatrix(q))
}

/// CUE sample number `index` of the ensemble seeded by `seed`.
pub fn sample_cue_indexed(dim: usize, seed: u64, index: u64) -> Result<UnitaryMatrix> {
    sample_cue(dim, &mut rng::stream(seed, Domain::Cue, &[index]))
}

fn check_index(index: usize, dim: usize) -> Result<()> {
    if index >= dim {
        Err(Error::IndexOutOfRange { index, dim })
    } else {
        Ok(())
    }
}

fn delta(a: usize, b: usize) -> f64 {
    if a == b {
        1.0
    } else {
        0.0
    }
}

/// `<V_{ij} V^dag_{j'i'}> = delta_{ii'} delta_{jj'} / N`.
pub fn haar_moment2(i: usize, i_adj: usize, j: usize, j_adj: usize, dim: usize) -> Result<f64> {
    if dim == 0 {
        return Err(Error::InvalidDimension(0));
    }
    for k in [i, i_adj, j, j_adj] {
        check_index(k, dim)?;
    }
    Ok(delta(i, i_adj) * delta(j, j_adj) / dim as f64)
}

/// Index tuple of the fourth moment
/// `<V_{i1 j1} V_{i2 j2} V^dag_{j1' i1'} V^dag_{j2' i2'}>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Moment4Index {
    pub rows: [usize; 2],
    pub cols: [usize; 2],
    pub rows_adj: [usize; 2],
    pub cols_adj: [usize; 2],
}

impl Moment4Index {
    fn all(&self) -> [usize; 8] {
        let [a, b] = self.rows;
        let [c, d] = self.cols;
        let [e, f] = self.rows_adj;
        let [g, h] = self.cols_adj;
        [a, b, c, d, e, f, g, h]
    }

    /// The monomial as four matrix-entry factors.
    pub fn monomial(&self) -> Monomial {
        Monomial(vec![
            Factor::entry(self.rows[0], self.cols[0]),
            Factor::entry(self.rows[1], self.cols[1]),
            Factor::adjoint(self.cols_adj[0], self.rows_adj[0]),
            Factor::adjoint(self.cols_adj[1], self.rows_adj[1]),
        ])
    }

    /// Every index tuple for dimension `dim` (`dim^8` of them).
    pub fn exhaustive(dim: usize) -> impl Iterator<Item = Moment4Index> {
        let total = dim.pow(8);
        (0..total).map(move |mut k| {
            let mut d = [0usize; 8];
            for slot in d.iter_mut() {
                *slot = k % dim;
                k /= dim;
            }
            Moment4Index {
                rows: [d[0], d[1]],
                cols: [d[2], d[3]],
                rows_adj: [d[4], d[5]],
                cols_adj: [d[6], d[7]],
            }
        })
    }
}

/// Two-permutation Weingarten sum for the fourth moment. Singular at `dim == 1`.
pub fn haar_moment4(idx: &Moment4Index, dim: usize) -> Result<f64> {
    if dim == 0 {
        return Err(Error::InvalidDimension(0));
    }
    for k in idx.all() {
        check_index(k, dim)?;
    }
    if dim == 1 {
        return Err(Error::SingularMoment);
    }
    Ok(weingarten4(idx, dim))
}

/// [`haar_moment4`] extended to `dim == 1`, where `U(1)` moments with matched
/// pairings are exactly 1.
pub fn haar_moment4_any_dim(idx: &Moment4Index, dim: usize) -> Result<f64> {
    match haar_moment4(idx, dim) {
        Err(Error::SingularMoment) => Ok(1.0),
        other => other,
    }
}

fn weingarten4(idx: &Moment4Index, dim: usize) -> f64 {
    let n = dim as f64;
    let [i1, i2] = idx.rows;
    let [j1, j2] = idx.cols;
    let [k1, k2] = idx.rows_adj;
    let [l1, l2] = idx.cols_adj;
    let row_id = delta(i1, k1) * delta(i2, k2);
    let row_swap = delta(i1, k2) * delta(i2, k1);
    let col_id = delta(j1, l1) * delta(j2, l2);
    let col_swap = delta(j1, l2) * delta(j2, l1);
    (row_id * col_id + row_swap * col_swap) / (n * n - 1.0)
        - (row_id * col_swap + row_swap * col_id) / (n * (n * n - 1.0))
}

/// One factor of a monomial in the entries of `V`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Factor {
    pub row: usize,
    pub col: usize,
    /// `true` for an entry of `V^dag`, i.e. `conj(V_{col,row})`.
    pub adjoint: bool,
}

impl Factor {
    pub fn entry(row: usize, col: usize) -> Self {
        Self {
            row,
            col,
            adjoint: false,
        }
    }

    pub fn adjoint(row: usize, col: usize) -> Self {
        Self {
            row,
            col,
            adjoint: true,
        }
    }

    fn eval(&self, v: &CMatrix) -> Complex64 {
        if self.adjoint {
            v[(self.col, self.row)].conj()
        } else {
            v[(self.row, self.col)]
        }
    }
}

/// Product of entries of `V` and `V^dag`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Monomial(pub Vec<Factor>);

impl Monomial {
    pub fn eval(&self, v: &CMatrix) -> Complex64 {
        self.0
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, f| acc * f.eval(v))
    }

    fn max_index(&self) -> usize {
        self.0.iter().map(|f| f.row.max(f.col)).max().unwrap_or(0)
    }
}

/// Monte Carlo mean of a complex monomial with its standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub mean: Complex64,
    pub err_re: f64,
    pub err_im: f64,
    pub samples: usize,
}

impl MomentEstimate {
    /// Distance to `target` in units of the total standard error
    /// `sqrt(err_re^2 + err_im^2)`.
    pub fn z_score(&self, target: f64) -> f64 {
        let diff = (self.mean - Complex64::new(target, 0.0)).norm();
        let err = self.err_re.hypot(self.err_im);
        if err == 0.0 {
            if diff <= 1e-14 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            diff / err
        }
    }
}

#[derive(Default, Clone)]
struct ComplexMoments {
    sum_re: f64,
    sum_im: f64,
    sq_re: f64,
    sq_im: f64,
}

impl ComplexMoments {
    fn push(&mut self, z: Complex64) {
        self.sum_re += z.re;
        self.sum_im += z.im;
        self.sq_re += z.re * z.re;
        self.sq_im += z.im * z.im;
    }

    fn finish(&self, m: usize) -> MomentEstimate {
        let mf = m as f64;
        let mean_re = self.sum_re / mf;
        let mean_im = self.sum_im / mf;
        let var_re = ((self.sq_re / mf - mean_re * mean_re) * mf / (mf - 1.0)).max(0.0);
        let var_im = ((self.sq_im / mf - mean_im * mean_im) * mf / (mf - 1.0)).max(0.0);
        MomentEstimate {
            mean: Complex64::new(mean_re, mean_im),
            err_re: (var_re / mf).sqrt(),
            err_im: (var_im / mf).sqrt(),
            samples: m,
        }
    }
}

/// Estimates several monomials from the same `samples` draws of `sample_fn`
/// (called with sample indices `0..samples`).
pub fn estimate_moments<F>(
    mut sample_fn: F,
    monomials: &[Monomial],
    samples: usize,
) -> Result<Vec<MomentEstimate>>
where
    F: FnMut(usize) -> Result<UnitaryMatrix>,
{
    if samples < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: samples,
        });
    }
    let mut acc = vec![ComplexMoments::default(); monomials.len()];
    for k in 0..samples {
        let u = sample_fn(k)?;
        if let Some(bad) = monomials
            .iter()
            .map(Monomial::max_index)
            .find(|&m| m >= u.dim())
        {
            return Err(Error::IndexOutOfRange {
                index: bad,
                dim: u.dim(),
            });
        }
        for (a, mono) in acc.iter_mut().zip(monomials) {
            a.push(mono.eval(u.matrix()));
        }
    }
    Ok(acc.iter().map(|a| a.finish(samples)).collect())
}

pub fn estimate_moment<F>(
    sample_fn: F,
    monomial: &Monomial,
    samples: usize,
) -> Result<MomentEstimate>
where
    F: FnMut(usize) -> Result<UnitaryMatrix>,
{
    Ok(estimate_moments(sample_fn, std::slice::from_ref(monomial), samples)?.remove(0))
}

/// Every fourth moment of a `dim`-dimensional CUE over all `dim^8` index
/// tuples, estimated from `samples` draws. Uses pair-product tables so the
/// cost per sample is `dim^8` complex multiplies.
pub fn estimate_all_moment4(
    dim: usize,
    seed: u64,
    samples: usize,
) -> Result<Vec<(Moment4Index, MomentEstimate)>> {
    if samples < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: samples,
        });
    }
    let d2 = dim * dim;
    let pairs = d2 * d2;
    let mut acc = vec![ComplexMoments::default(); pairs * pairs];
    let mut prod = vec![Complex64::new(0.0, 0.0); pairs];
    for k in 0..samples {
        let u = sample_cue(dim, &mut rng::stream(seed, Domain::Moment, &[k as u64]))?;
        let v = u.matrix();
        // prod[(a1, a2)] = V_{a1} V_{a2}, entries flattened as a = i + dim * j.
        for a1 in 0..d2 {
            let x1 = v[(a1 % dim, a1 / dim)];
            for a2 in 0..d2 {
                prod[a1 + d2 * a2] = x1 * v[(a2 % dim, a2 / dim)];
            }
        }
        for b in 0..pairs {
            let conj_b = prod[b].conj();
            let row = &mut acc[b * pairs..(b + 1) * pairs];
            for (slot, p) in row.iter_mut().zip(&prod) {
                slot.push(p * conj_b);
            }
        }
    }
    let mut out = Vec::with_capacity(pairs * pairs);
    for b in 0..pairs {
        // b encodes the adjoint pair: V^dag_{j1' i1'} = conj(V_{i1' j1'}).
        let (b1, b2) = (b % d2, b / d2);
        for a in 0..pairs {
            let (a1, a2) = (a % d2, a / d2);
            let idx = Moment4Index {
                rows: [a1 % dim, a2 % dim],
                cols: [a1 / dim, a2 / dim],
                rows_adj: [b1 % dim, b2 % dim],
                cols_adj: [b1 / dim, b2 / dim],
            };
            out.push((idx, acc[b * pairs + a].finish(samples)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det_modulus(u: &UnitaryMatrix) -> f64 {
        u.matrix().clone().determinant().norm()
    }

    #[test]
    fn sampled_matrices_are_unitary() {
        for dim in [1, 2, 3, 5, 16, 33] {
            for k in 0..4 {
                let u = sample_cue_indexed(dim, 11, k).unwrap();
                assert!(
                    u.residual() <= SAMPLE_UNITARITY_TOL,
                    "dim {dim}: {}",
                    u.residual()
                );
                assert!((det_modulus(&u) - 1.0).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn dim_one_is_a_phase() {
        let u = sample_cue_indexed(1, 3, 0).unwrap();
        assert!((u[(0, 0)].norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_dim_rejected() {
        assert!(matches!(
            sample_cue_indexed(0, 1, 0),
            Err(Error::InvalidDimension(0))
        ));
    }

    #[test]
    fn reproducible_per_index() {
        let a = sample_cue_indexed(6, 99, 17).unwrap();
        let b = sample_cue_indexed(6, 99, 17).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_cue_indexed(6, 99, 18).unwrap());
    }

    #[test]
    fn moment2_values() {
        assert_eq!(haar_moment2(0, 0, 0, 0, 4).unwrap(), 0.25);
        assert_eq!(haar_moment2(0, 1, 0, 0, 4).unwrap(), 0.0);
        assert_eq!(haar_moment2(2, 2, 3, 3, 8).unwrap(), 0.125);
        assert!(matches!(
            haar_moment2(4, 0, 0, 0, 4),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn moment4_values() {
        let all_zero = Moment4Index {
            rows: [0, 0],
            cols: [0, 0],
            rows_adj: [0, 0],
            cols_adj: [0, 0],
        };
        assert!((haar_moment4(&all_zero, 2).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let split = Moment4Index {
            rows: [0, 0],
            cols: [0, 1],
            rows_adj: [0, 0],
            cols_adj: [0, 1],
        };
        assert!((haar_moment4(&split, 2).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        // column multiset {0,1} vs {0,0}: no pairing survives
        let unmatched = Moment4Index {
            rows: [0, 1],
            cols: [0, 1],
            rows_adj: [0, 1],
            cols_adj: [0, 0],
        };
        assert_eq!(haar_moment4(&unmatched, 3).unwrap(), 0.0);
        // |V_11|^4 at N = 3 is 2/(N(N+1)) = 1/6
        assert!((haar_moment4(&all_zero, 3).unwrap() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn moment4_dim_one() {
        let z = Moment4Index {
            rows: [0, 0],
            cols: [0, 0],
            rows_adj: [0, 0],
            cols_adj: [0, 0],
        };
        assert!(matches!(haar_moment4(&z, 1), Err(Error::SingularMoment)));
        assert_eq!(haar_moment4_any_dim(&z, 1).unwrap(), 1.0);
    }

    #[test]
    fn exhaustive_tuple_count() {
        assert_eq!(Moment4Index::exhaustive(2).count(), 256);
    }

    #[test]
    fn monomial_matches_moment_layout() {
        let u = sample_cue_indexed(3, 5, 0).unwrap();
        let v = u.matrix();
        let idx = Moment4Index {
            rows: [0, 2],
            cols: [1, 1],
            rows_adj: [2, 0],
            cols_adj: [1, 0],
        };
        let direct = v[(0, 1)] * v[(2, 1)] * v[(2, 1)].conj() * v[(0, 0)].conj();
        assert!((idx.monomial().eval(v) - direct).norm() < 1e-15);
    }

    #[test]
    fn fast_table_agrees_with_monomials() {
        let fast = estimate_all_moment4(2, 4, 50).unwrap();
        let monos: Vec<Monomial> = fast.iter().map(|(i, _)| i.monomial()).collect();
        let slow = estimate_moments(
            |k| sample_cue(2, &mut rng::stream(4, Domain::Moment, &[k as u64])),
            &monos,
            50,
        )
        .unwrap();
        for ((_, f), s) in fast.iter().zip(&slow) {
            assert!((f.mean - s.mean).norm() < 1e-13);
        }
    }

    #[test]
    fn estimate_moment_needs_two_samples() {
        let m = Monomial(vec![Factor::entry(0, 0)]);
        assert!(estimate_moment(|k| sample_cue_indexed(2, 0, k as u64), &m, 1).is_err());
    }

    #[test]
    fn second_moment_mc() {
        // |V_11|^2 at N = 2 -> 1/2
        let m = Monomial(vec![Factor::entry(0, 0), Factor::adjoint(0, 0)]);
        let est = estimate_moment(|k| sample_cue_indexed(2, 21, k as u64), &m, 100_000).unwrap();
        assert!(est.z_score(0.5) <= 3.0, "{est:?}");
    }

    #[test]
    fn fourth_moment_mc() {
        // |V_11|^4 at N = 3 -> 1/6, at N = 2 -> 1/3
        let m = Monomial(vec![
            Factor::entry(0, 0),
            Factor::entry(0, 0),
            Factor::adjoint(0, 0),
            Factor::adjoint(0, 0),
        ]);
        let est3 = estimate_moment(|k| sample_cue_indexed(3, 22, k as u64), &m, 100_000).unwrap();
        assert!(est3.z_score(1.0 / 6.0) <= 3.0, "{est3:?}");
        let est2 = estimate_moment(|k| sample_cue_indexed(2, 23, k as u64), &m, 100_000).unwrap();
        assert!(est2.z_score(1.0 / 3.0) <= 3.0, "{est2:?}");
    }

    #[test]
    fn vanishing_moment_mc() {
        // V_11 conj(V_11) V_12 conj(V_21): row multiset {1,1} vs conjugated rows {1,2}
        let m = Monomial(vec![
            Factor::entry(0, 0),
            Factor::adjoint(0, 0),
            Factor::entry(0, 1),
            Factor::adjoint(0, 1),
        ]);
        let est = estimate_moment(|k| sample_cue_indexed(3, 24, k as u64), &m, 20_000).unwrap();
        assert!(est.z_score(0.0) <= 3.0, "{est:?}");
    }
}
