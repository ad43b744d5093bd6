//! Streaming accumulation of the empirical moment tensors of consecutive
//! observation triples, plus exact population tensors for oracle testing.
//!
//! For a sequence `Y_1, ..., Y_{n+2}` and basis functions `phi`, the tensors
//! are averages over the `n` triples `(Y_s, Y_{s+1}, Y_{s+2})`:
//!
//! * `l(a)    = mean_s phi_a(Y_s)`                         (edge_dim)
//! * `n(a,b)  = mean_s phi_a(Y_s)   phi_b(Y_{s+1})`        (edge_dim x center_dim)
//! * `p(a,c)  = mean_s phi_a(Y_s)   phi_c(Y_{s+2})`        (edge_dim x edge_dim)
//! * `t(a,b,c)= mean_s phi_a(Y_s) phi_b(Y_{s+1}) phi_c(Y_{s+2})`
//!
//! The first/third slots run over the small "edge" dimension, the middle
//! slot over the large "center" dimension, so tensors for every nested
//! center dimension are slices of the largest one.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;

use crate::bases::Basis;
use crate::error::{Error, Result};
use crate::spectral::HmmParams;

const BATCH: usize = 512;
const STATIONARITY_TOL: f64 = 1e-10;

/// Empirical or population moment tensors of observation triples.
#[derive(Debug, Clone)]
pub struct MomentTensors {
    /// Dimension used for the first and third triple slots.
    pub edge_dim: usize,
    /// Dimension used for the middle triple slot.
    pub center_dim: usize,
    /// Number of accumulated triples (0 for the neutral element).
    pub n_triples: usize,
    pub l: Array1<f64>,
    pub n: Array2<f64>,
    pub p: Array2<f64>,
    /// Triple tensor indexed `(a, b, c)` = (edge, center, edge).
    pub t: Array3<f64>,
}

impl MomentTensors {
    /// Neutral element for [`merge_moments`].
    pub fn empty(edge_dim: usize, center_dim: usize) -> Self {
        MomentTensors {
            edge_dim,
            center_dim,
            n_triples: 0,
            l: Array1::zeros(edge_dim),
            n: Array2::zeros((edge_dim, center_dim)),
            p: Array2::zeros((edge_dim, edge_dim)),
            t: Array3::zeros((edge_dim, center_dim, edge_dim)),
        }
    }

    /// The `m x m` slice `t(., b, .)`.
    pub fn t_slice(&self, b: usize) -> ArrayView2<'_, f64> {
        self.t.index_axis(Axis(1), b)
    }

    /// Restriction to a smaller center dimension (nested models share the
    /// leading entries).
    pub fn restrict_center(&self, center_dim: usize) -> Result<MomentTensors> {
        if center_dim == 0 || center_dim > self.center_dim {
            return Err(Error::invalid(format!(
                "center dimension {center_dim} outside 1..={}",
                self.center_dim
            )));
        }
        Ok(MomentTensors {
            edge_dim: self.edge_dim,
            center_dim,
            n_triples: self.n_triples,
            l: self.l.clone(),
            n: self.n.slice(s![.., ..center_dim]).to_owned(),
            p: self.p.clone(),
            t: self.t.slice(s![.., ..center_dim, ..]).to_owned(),
        })
    }

    fn same_shape(&self, other: &MomentTensors) -> bool {
        self.edge_dim == other.edge_dim && self.center_dim == other.center_dim
    }
}

/// Accumulates the empirical tensors over all consecutive triples of
/// `observations` in a single pass. Cost `O(n * center_dim * edge_dim^2)`.
pub fn accumulate_moments(
    observations: &[f64],
    basis: &Basis,
    edge_dim: usize,
    center_dim: usize,
) -> Result<MomentTensors> {
    check_dims(basis, edge_dim, center_dim)?;
    if observations.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 observations for one triple, got {}",
            observations.len()
        )));
    }
    for (i, &y) in observations.iter().enumerate() {
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::Domain(format!(
                "observation {y} at index {i} outside [0, 1]"
            )));
        }
    }
    Ok(accumulate_checked(observations, basis, edge_dim, center_dim))
}

/// Parallel accumulation over fixed-size chunks. Chunk boundaries are
/// stitched exactly: every chunk reads two observations past its end, so no
/// triple is dropped and the result matches [`accumulate_moments`] up to
/// floating-point reassociation (1e-12 relative). Deterministic for a given
/// `chunk_len` regardless of worker count.
pub fn accumulate_moments_chunked(
    observations: &[f64],
    basis: &Basis,
    edge_dim: usize,
    center_dim: usize,
    chunk_len: usize,
) -> Result<MomentTensors> {
    check_dims(basis, edge_dim, center_dim)?;
    if chunk_len == 0 {
        return Err(Error::invalid("chunk_len must be positive"));
    }
    if observations.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 observations for one triple, got {}",
            observations.len()
        )));
    }
    for (i, &y) in observations.iter().enumerate() {
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::Domain(format!(
                "observation {y} at index {i} outside [0, 1]"
            )));
        }
    }
    let n = observations.len() - 2;
    let starts: Vec<usize> = (0..n).step_by(chunk_len).collect();
    let parts: Vec<MomentTensors> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + chunk_len).min(n);
            accumulate_checked(&observations[start..end + 2], basis, edge_dim, center_dim)
        })
        .collect();
    let mut acc = MomentTensors::empty(edge_dim, center_dim);
    for part in parts {
        acc = merge_moments(&acc, &part)?;
    }
    Ok(acc)
}

fn check_dims(basis: &Basis, edge_dim: usize, center_dim: usize) -> Result<()> {
    if edge_dim == 0 || center_dim == 0 {
        return Err(Error::invalid("tensor dimensions must be positive"));
    }
    if center_dim > basis.max_dim || edge_dim > basis.max_dim {
        return Err(Error::invalid(format!(
            "tensor dimensions ({edge_dim}, {center_dim}) exceed basis max_dim {}",
            basis.max_dim
        )));
    }
    Ok(())
}

/// Unnormalized running sums of the four tensors, the streaming core behind
/// single-pass, chunked and prefix-snapshot accumulation.
struct RawSums {
    edge_dim: usize,
    center_dim: usize,
    n_triples: usize,
    l: Array1<f64>,
    n: Array2<f64>,
    p: Array2<f64>,
    /// `(a, c) x b` layout for a contiguous GEMM target.
    t_unfolded: Array2<f64>,
}

impl RawSums {
    fn new(edge_dim: usize, center_dim: usize) -> Self {
        RawSums {
            edge_dim,
            center_dim,
            n_triples: 0,
            l: Array1::zeros(edge_dim),
            n: Array2::zeros((edge_dim, center_dim)),
            p: Array2::zeros((edge_dim, edge_dim)),
            t_unfolded: Array2::zeros((edge_dim * edge_dim, center_dim)),
        }
    }

    /// Adds the triples starting at `observations[triples.start..triples.end]`.
    ///
    /// Per batch the triple update is a rank-`B` GEMM: with `E1`, `C`, `E2`
    /// the per-triple basis rows at the three slots, the unfolded tensor
    /// over `(a, c) x b` receives `(E1 (x) E2)^T C`.
    fn add_triples(
        &mut self,
        observations: &[f64],
        basis: &Basis,
        triples: std::ops::Range<usize>,
    ) {
        let edge_dim = self.edge_dim;
        let center_dim = self.center_dim;
        let eval_dim = edge_dim.max(center_dim);
        let mut phi = vec![0.0; eval_dim];
        let mut e_rows: Array2<f64> = Array2::zeros((BATCH + 2, edge_dim));
        let mut c_rows: Array2<f64> = Array2::zeros((BATCH + 2, center_dim));
        let mut kron = Array2::zeros((BATCH, edge_dim * edge_dim));

        let mut start = triples.start;
        while start < triples.end {
            let len = (triples.end - start).min(BATCH);
            for i in 0..len + 2 {
                basis.evaluate_into(observations[start + i], &mut phi);
                e_rows
                    .row_mut(i)
                    .assign(&ndarray::ArrayView1::from(&phi[..edge_dim]));
                c_rows
                    .row_mut(i)
                    .assign(&ndarray::ArrayView1::from(&phi[..center_dim]));
            }
            let e1 = e_rows.slice(s![..len, ..]);
            let c = c_rows.slice(s![1..len + 1, ..]);
            let e2 = e_rows.slice(s![2..len + 2, ..]);

            self.l += &e1.sum_axis(Axis(0));
            general_mat_mul(1.0, &e1.t(), &c, 1.0, &mut self.n);
            general_mat_mul(1.0, &e1.t(), &e2, 1.0, &mut self.p);

            let mut kron_batch = kron.slice_mut(s![..len, ..]);
            for i in 0..len {
                let u = e1.row(i);
                let w = e2.row(i);
                let mut row = kron_batch.row_mut(i);
                for a in 0..edge_dim {
                    for cc in 0..edge_dim {
                        row[a * edge_dim + cc] = u[a] * w[cc];
                    }
                }
            }
            general_mat_mul(
                1.0,
                &kron.slice(s![..len, ..]).t(),
                &c,
                1.0,
                &mut self.t_unfolded,
            );
            start += len;
            self.n_triples += len;
        }
    }

    fn snapshot(&self) -> MomentTensors {
        let n = self.n_triples.max(1);
        let scale = 1.0 / n as f64;
        let edge_dim = self.edge_dim;
        let center_dim = self.center_dim;
        let mut t = Array3::zeros((edge_dim, center_dim, edge_dim));
        for a in 0..edge_dim {
            for b in 0..center_dim {
                for c in 0..edge_dim {
                    t[(a, b, c)] = self.t_unfolded[(a * edge_dim + c, b)] * scale;
                }
            }
        }
        MomentTensors {
            edge_dim,
            center_dim,
            n_triples: self.n_triples,
            l: &self.l * scale,
            n: &self.n * scale,
            p: &self.p * scale,
            t,
        }
    }
}

/// Single-pass accumulation; inputs already validated.
fn accumulate_checked(
    observations: &[f64],
    basis: &Basis,
    edge_dim: usize,
    center_dim: usize,
) -> MomentTensors {
    let n = observations.len() - 2;
    let mut sums = RawSums::new(edge_dim, center_dim);
    sums.add_triples(observations, basis, 0..n);
    sums.snapshot()
}

/// Normalized tensors over every prefix `observations[..cut]`, produced in
/// one streaming pass. Cuts must be increasing and lie in
/// `[3, observations.len()]` (at least one triple per prefix).
pub fn prefix_moments(
    observations: &[f64],
    basis: &Basis,
    edge_dim: usize,
    center_dim: usize,
    cuts: &[usize],
) -> Result<Vec<MomentTensors>> {
    check_dims(basis, edge_dim, center_dim)?;
    if observations.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 observations for one triple, got {}",
            observations.len()
        )));
    }
    if !cuts.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::invalid("cuts must be strictly increasing"));
    }
    if cuts.iter().any(|&c| c < 3 || c > observations.len()) {
        return Err(Error::invalid(format!(
            "cuts must lie in [3, {}]",
            observations.len()
        )));
    }
    for (i, &y) in observations.iter().enumerate() {
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::Domain(format!(
                "observation {y} at index {i} outside [0, 1]"
            )));
        }
    }
    let mut sums = RawSums::new(edge_dim, center_dim);
    let mut out = Vec::with_capacity(cuts.len());
    let mut done = 0usize;
    for &cut in cuts {
        // the prefix [0, cut) contains the triples [0, cut - 2)
        let end = cut - 2;
        sums.add_triples(observations, basis, done..end);
        done = end;
        out.push(sums.snapshot());
    }
    Ok(out)
}

/// Removes sub-accumulations from a whole: the result covers the triples of
/// `whole` not covered by any part (the caller guarantees the parts are
/// disjoint sub-ranges of the whole).
pub fn subtract_moments(whole: &MomentTensors, parts: &[&MomentTensors]) -> Result<MomentTensors> {
    let mut removed = 0usize;
    for part in parts {
        if !whole.same_shape(part) {
            return Err(Error::invalid("tensor shape mismatch in subtraction"));
        }
        removed += part.n_triples;
    }
    if removed > whole.n_triples {
        return Err(Error::invalid(format!(
            "parts cover {removed} triples, whole has {}",
            whole.n_triples
        )));
    }
    let remaining = whole.n_triples - removed;
    if remaining == 0 {
        return Ok(MomentTensors::empty(whole.edge_dim, whole.center_dim));
    }
    let scale = 1.0 / remaining as f64;
    let wn = whole.n_triples as f64;
    let mut l = &whole.l * wn;
    let mut n = &whole.n * wn;
    let mut p = &whole.p * wn;
    let mut t = &whole.t * wn;
    for part in parts {
        let pn = part.n_triples as f64;
        l -= &(&part.l * pn);
        n -= &(&part.n * pn);
        p -= &(&part.p * pn);
        t -= &(&part.t * pn);
    }
    Ok(MomentTensors {
        edge_dim: whole.edge_dim,
        center_dim: whole.center_dim,
        n_triples: remaining,
        l: l * scale,
        n: n * scale,
        p: p * scale,
        t: t * scale,
    })
}

/// Triple-count-weighted average of two tensor sets; commutative and
/// associative up to floating-point reassociation. `empty` is neutral.
pub fn merge_moments(a: &MomentTensors, b: &MomentTensors) -> Result<MomentTensors> {
    if !a.same_shape(b) {
        return Err(Error::invalid(format!(
            "tensor shape mismatch: ({}, {}) vs ({}, {})",
            a.edge_dim, a.center_dim, b.edge_dim, b.center_dim
        )));
    }
    let total = a.n_triples + b.n_triples;
    if total == 0 {
        return Ok(MomentTensors::empty(a.edge_dim, a.center_dim));
    }
    let wa = a.n_triples as f64 / total as f64;
    let wb = b.n_triples as f64 / total as f64;
    Ok(MomentTensors {
        edge_dim: a.edge_dim,
        center_dim: a.center_dim,
        n_triples: total,
        l: wa * &a.l + wb * &b.l,
        n: wa * &a.n + wb * &b.n,
        p: wa * &a.p + wb * &b.p,
        t: wa * &a.t + wb * &b.t,
    })
}

/// Exact population tensors for HMM parameters whose emission coefficients
/// are given on the same basis:
///
/// * `L = O_e pi`
/// * `N = O_e Diag[pi] Q O_c^T`
/// * `P = O_e Diag[pi] Q^2 O_e^T`
/// * `T(., b, .) = O_e Diag[pi] Q Diag[O_c(b, .)] Q O_e^T`
///
/// where `O_e`, `O_c` are the first `edge_dim` / `center_dim` rows of the
/// emission coefficient matrix.
pub fn population_moments(
    params: &HmmParams,
    edge_dim: usize,
    center_dim: usize,
) -> Result<MomentTensors> {
    params.validate()?;
    let dim = params.dim();
    if edge_dim == 0 || center_dim == 0 || edge_dim > dim || center_dim > dim {
        return Err(Error::invalid(format!(
            "tensor dimensions ({edge_dim}, {center_dim}) exceed coefficient rows {dim}"
        )));
    }
    let pi_q = params.pi.dot(&params.q);
    let drift = pi_q
        .iter()
        .zip(params.pi.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0_f64, f64::max);
    if drift > STATIONARITY_TOL {
        return Err(Error::invalid(format!(
            "pi is not stationary for Q (residual {drift:.3e})"
        )));
    }

    let o_e = params.o.slice(s![..edge_dim, ..]);
    let o_c = params.o.slice(s![..center_dim, ..]);
    let diag_pi = Array2::from_diag(&params.pi);
    let front = o_e.dot(&diag_pi).dot(&params.q); // edge x K

    let l = o_e.dot(&params.pi);
    let n = front.dot(&o_c.t());
    let p = front.dot(&params.q).dot(&o_e.t());

    let k = params.k();
    let mut t = Array3::zeros((edge_dim, center_dim, edge_dim));
    for b in 0..center_dim {
        // Diag[O_c(b, .)] Q
        let mut mid = Array2::zeros((k, k));
        for k2 in 0..k {
            for k3 in 0..k {
                mid[(k2, k3)] = o_c[(b, k2)] * params.q[(k2, k3)];
            }
        }
        let slice = front.dot(&mid).dot(&o_e.t());
        let mut t_b = t.index_axis_mut(Axis(1), b);
        t_b.assign(&slice);
    }

    Ok(MomentTensors {
        edge_dim,
        center_dim,
        n_triples: 0,
        l,
        n,
        p,
        t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bases::{make_basis, BasisKind};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_moments(
        observations: &[f64],
        basis: &Basis,
        edge_dim: usize,
        center_dim: usize,
    ) -> MomentTensors {
        let n = observations.len() - 2;
        let mut out = MomentTensors::empty(edge_dim, center_dim);
        out.n_triples = n;
        let eval = |y: f64, d: usize| basis.evaluate(d, y).unwrap();
        for s in 0..n {
            let u = eval(observations[s], edge_dim);
            let v = eval(observations[s + 1], center_dim);
            let w = eval(observations[s + 2], edge_dim);
            for a in 0..edge_dim {
                out.l[a] += u[a];
                for b in 0..center_dim {
                    out.n[(a, b)] += u[a] * v[b];
                    for c in 0..edge_dim {
                        out.t[(a, b, c)] += u[a] * v[b] * w[c];
                    }
                }
                for c in 0..edge_dim {
                    out.p[(a, c)] += u[a] * w[c];
                }
            }
        }
        let scale = 1.0 / n as f64;
        out.l *= scale;
        out.n *= scale;
        out.p *= scale;
        out.t *= scale;
        out
    }

    fn max_rel_gap(a: &MomentTensors, b: &MomentTensors) -> f64 {
        let gap = |x: f64, y: f64| (x - y).abs() / x.abs().max(y.abs()).max(1.0);
        let mut worst = 0.0_f64;
        for (x, y) in a.l.iter().zip(b.l.iter()) {
            worst = worst.max(gap(*x, *y));
        }
        for (x, y) in a.n.iter().zip(b.n.iter()) {
            worst = worst.max(gap(*x, *y));
        }
        for (x, y) in a.p.iter().zip(b.p.iter()) {
            worst = worst.max(gap(*x, *y));
        }
        for (x, y) in a.t.iter().zip(b.t.iter()) {
            worst = worst.max(gap(*x, *y));
        }
        worst
    }

    #[test]
    fn single_triple_constant_basis() {
        let basis = make_basis(BasisKind::Trig, 1).unwrap();
        let t = accumulate_moments(&[0.3, 0.7, 0.1], &basis, 1, 1).unwrap();
        assert_eq!(t.n_triples, 1);
        assert_abs_diff_eq!(t.t[(0, 0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t.n[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t.p[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t.l[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn constant_observations_give_rank_one_tensor() {
        let basis = make_basis(BasisKind::Trig, 3).unwrap();
        let obs = vec![0.25; 12];
        let t = accumulate_moments(&obs, &basis, 3, 3).unwrap();
        let phi = basis.evaluate(3, 0.25).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    assert_abs_diff_eq!(
                        t.t[(a, b, c)],
                        phi[a] * phi[b] * phi[c],
                        epsilon = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn matches_naive_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let obs: Vec<f64> = (0..1700).map(|_| rng.gen::<f64>()).collect();
        let basis = make_basis(BasisKind::Trig, 9).unwrap();
        let fast = accumulate_moments(&obs, &basis, 4, 9).unwrap();
        let slow = naive_moments(&obs, &basis, 4, 9);
        assert!(max_rel_gap(&fast, &slow) < 1e-12);
    }

    #[test]
    fn rejects_short_sequences_and_bad_values() {
        let basis = make_basis(BasisKind::Trig, 2).unwrap();
        assert!(matches!(
            accumulate_moments(&[0.1, 0.2], &basis, 1, 2),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(
            accumulate_moments(&[0.1, 1.2, 0.3], &basis, 1, 2),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn merge_with_empty_is_identity() {
        let basis = make_basis(BasisKind::Trig, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let obs: Vec<f64> = (0..40).map(|_| rng.gen::<f64>()).collect();
        let t = accumulate_moments(&obs, &basis, 2, 3).unwrap();
        let merged = merge_moments(&t, &MomentTensors::empty(2, 3)).unwrap();
        assert!(max_rel_gap(&t, &merged) < 1e-15);
        assert_eq!(merged.n_triples, t.n_triples);
    }

    #[test]
    fn merge_of_self_preserves_values() {
        let basis = make_basis(BasisKind::Trig, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let obs: Vec<f64> = (0..40).map(|_| rng.gen::<f64>()).collect();
        let t = accumulate_moments(&obs, &basis, 2, 3).unwrap();
        let merged = merge_moments(&t, &t).unwrap();
        assert!(max_rel_gap(&t, &merged) < 1e-15);
        assert_eq!(merged.n_triples, 2 * t.n_triples);
    }

    #[test]
    fn split_halves_recover_whole_after_boundary_fix() {
        let basis = make_basis(BasisKind::Trig, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let obs: Vec<f64> = (0..101).map(|_| rng.gen::<f64>()).collect();
        let whole = accumulate_moments(&obs, &basis, 3, 4).unwrap();
        // split with no triple straddling the cut: halves lose the 2 boundary triples
        let cut = 50;
        let left = accumulate_moments(&obs[..cut], &basis, 3, 4).unwrap();
        let right = accumulate_moments(&obs[cut..], &basis, 3, 4).unwrap();
        let boundary = accumulate_moments(&obs[cut - 2..cut + 2], &basis, 3, 4).unwrap();
        assert_eq!(
            left.n_triples + right.n_triples + boundary.n_triples,
            whole.n_triples
        );
        let merged = merge_moments(&merge_moments(&left, &right).unwrap(), &boundary).unwrap();
        assert!(max_rel_gap(&whole, &merged) < 1e-12);
    }

    #[test]
    fn chunked_accumulation_matches_single_pass() {
        let basis = make_basis(BasisKind::Trig, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let obs: Vec<f64> = (0..2003).map(|_| rng.gen::<f64>()).collect();
        let single = accumulate_moments(&obs, &basis, 3, 5).unwrap();
        for chunk in [64, 500, 5000] {
            let chunked = accumulate_moments_chunked(&obs, &basis, 3, 5, chunk).unwrap();
            assert!(max_rel_gap(&single, &chunked) < 1e-12);
            assert_eq!(chunked.n_triples, single.n_triples);
        }
    }

    #[test]
    fn prefix_snapshots_match_direct_accumulation() {
        let basis = make_basis(BasisKind::Trig, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let obs: Vec<f64> = (0..500).map(|_| rng.gen::<f64>()).collect();
        let cuts = [3usize, 120, 121, 499, 500];
        let prefixes = prefix_moments(&obs, &basis, 2, 4, &cuts).unwrap();
        for (&cut, prefix) in cuts.iter().zip(&prefixes) {
            let direct = accumulate_moments(&obs[..cut], &basis, 2, 4).unwrap();
            assert!(max_rel_gap(prefix, &direct) < 1e-12, "cut {cut}");
            assert_eq!(prefix.n_triples, cut - 2);
        }
    }

    #[test]
    fn subtraction_recovers_suffix() {
        let basis = make_basis(BasisKind::Trig, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let obs: Vec<f64> = (0..400).map(|_| rng.gen::<f64>()).collect();
        let whole = accumulate_moments(&obs, &basis, 3, 4).unwrap();
        let cut = 157;
        let prefix = accumulate_moments(&obs[..cut], &basis, 3, 4).unwrap();
        // triples straddling the cut use observations cut-2..cut+2
        let straddle = accumulate_moments(&obs[cut - 2..cut + 2], &basis, 3, 4).unwrap();
        let suffix = subtract_moments(&whole, &[&prefix, &straddle]).unwrap();
        let direct = accumulate_moments(&obs[cut..], &basis, 3, 4).unwrap();
        assert!(max_rel_gap(&suffix, &direct) < 1e-10);
        assert_eq!(suffix.n_triples, direct.n_triples);
    }

    #[test]
    fn merge_shape_mismatch_is_rejected() {
        let a = MomentTensors::empty(2, 3);
        let b = MomentTensors::empty(2, 4);
        assert!(merge_moments(&a, &b).is_err());
    }

    #[test]
    fn population_single_state_is_rank_one() {
        let params = HmmParams {
            pi: array![1.0],
            q: array![[1.0]],
            o: array![[1.0], [0.0], [0.0]],
        };
        let t = population_moments(&params, 3, 3).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    let expected = if a == 0 && b == 0 && c == 0 { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(t.t[(a, b, c)], expected, epsilon = 1e-14);
                }
            }
        }
        assert_abs_diff_eq!(t.l[0], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn population_requires_stationary_pi() {
        let params = HmmParams {
            pi: array![0.9, 0.1],
            q: array![[0.5, 0.5], [0.5, 0.5]],
            o: array![[1.0, 1.0], [0.5, -0.5]],
        };
        assert!(matches!(
            population_moments(&params, 2, 2),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn population_invariant_under_state_relabeling() {
        let params = HmmParams {
            pi: array![0.4, 0.6],
            q: array![[0.7, 0.3], [0.2, 0.8]],
            o: array![[1.0, 1.0], [0.5, -0.3], [0.1, 0.2]],
        };
        // stationary pi for this q is (0.4, 0.6)
        let perm = params.permuted(&[1, 0]);
        let t1 = population_moments(&params, 3, 3).unwrap();
        let t2 = population_moments(&perm, 3, 3).unwrap();
        assert!(max_rel_gap(&t1, &t2) < 1e-12);
    }

    #[test]
    fn restrict_center_is_a_slice() {
        let basis = make_basis(BasisKind::Trig, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let obs: Vec<f64> = (0..200).map(|_| rng.gen::<f64>()).collect();
        let big = accumulate_moments(&obs, &basis, 3, 6).unwrap();
        let small = accumulate_moments(&obs, &basis, 3, 4).unwrap();
        let cut = big.restrict_center(4).unwrap();
        assert!(max_rel_gap(&small, &cut) < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        /// merge is commutative and associative up to reassociation error.
        #[test]
        fn merge_is_commutative_and_associative(seed in 0u64..1000, na in 3usize..40, nb in 3usize..40, nc in 3usize..40) {
            let basis = make_basis(BasisKind::Trig, 3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.gen::<f64>()).collect() };
            let ta = accumulate_moments(&draw(na), &basis, 2, 3).unwrap();
            let tb = accumulate_moments(&draw(nb), &basis, 2, 3).unwrap();
            let tc = accumulate_moments(&draw(nc), &basis, 2, 3).unwrap();

            let ab = merge_moments(&ta, &tb).unwrap();
            let ba = merge_moments(&tb, &ta).unwrap();
            prop_assert!(max_rel_gap(&ab, &ba) < 1e-12);

            let ab_c = merge_moments(&ab, &tc).unwrap();
            let a_bc = merge_moments(&ta, &merge_moments(&tb, &tc).unwrap()).unwrap();
            prop_assert!(max_rel_gap(&ab_c, &a_bc) < 1e-12);
        }
    }
}
