//! Rank-supervised contrastive loss.
//!
//! For an anchor `a` and a positive `p` (same label, `p != a`), the rank of
//! the pair counts the negatives (different label) that are at least as close
//! to the anchor as the positive:
//!
//! ```text
//! hard_rank(a, p) = |{ n : d(a, n) <= d(a, p) }|
//! soft_rank(a, p) = Σ_n σ((d(a, p) − d(a, n)) / τ)
//! loss            = norm · Σ_(a,p) arctan(soft_rank(a, p))
//! ```
//!
//! `norm` is `1/P` over the `P` anchor–positive pairs in mean mode and 1 in
//! sum mode. Since `d/dR arctan R = 1/(1+R²)` shrinks as the rank grows,
//! positives with many closer negatives receive smaller weight.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;

/// Added under the square root so coincident points have finite gradients.
pub const DISTANCE_EPS: f64 = 1e-12;

/// Largest `|x|` for which `exp(x)` is finite and normal in `f32`.
const EXP_SAFE: f64 = 80.0;

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix<S> {
    /// Euclidean distances, `[B, B]`.
    pub d: Tensor<S>,
    /// Squared distances, `[B, B]`, clamped at zero.
    pub d_sq: Tensor<S>,
}

impl<S: Scalar> DistanceMatrix<S> {
    pub fn size(&self) -> usize {
        self.d.shape()[0]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        self.d.data()[i * self.size() + j]
    }

    /// Builds a matrix directly from distances (e.g. for tests on abstract
    /// metric data). `d_sq` is filled with the squares.
    pub fn from_distances(d: Tensor<S>) -> Result<Self> {
        d.expect_ndim("distance matrix", 2)?;
        if d.shape()[0] != d.shape()[1] {
            return Err(Error::dim("distance matrix", format!("not square: {:?}", d.shape())));
        }
        let d_sq = d.map(|v| v * v);
        Ok(Self { d, d_sq })
    }
}

/// Euclidean distance matrix of the rows of `z` via the Gram identity.
pub fn pairwise_distances<S: Scalar>(z: &Tensor<S>) -> Result<DistanceMatrix<S>> {
    z.expect_ndim("pairwise_distances", 2)?;
    let (b, dim) = (z.shape()[0], z.shape()[1]);
    let zm = MatRef::row_major(z.data(), b, dim);
    let mut gram = vec![S::zero(); b * b];
    gemm(S::one(), zm, zm.t(), S::zero(), &mut gram);
    let norms: Vec<S> = (0..b).map(|i| gram[i * b + i]).collect();
    let eps = S::lit(DISTANCE_EPS);
    let root_eps = eps.sqrt();
    let mut d_sq = vec![S::zero(); b * b];
    let mut d = vec![S::zero(); b * b];
    for i in 0..b {
        for j in 0..b {
            if i == j {
                continue;
            }
            let q = (norms[i] + norms[j] - S::lit(2.0) * gram[i * b + j]).max(S::zero());
            d_sq[i * b + j] = q;
            d[i * b + j] = (q + eps).sqrt() - root_eps;
        }
    }
    Ok(DistanceMatrix { d: Tensor::new(&[b, b], d)?, d_sq: Tensor::new(&[b, b], d_sq)? })
}

/// Gradient w.r.t. `z` given the gradient w.r.t. every entry of `dist.d`.
pub fn pairwise_distances_backward<S: Scalar>(
    z: &Tensor<S>,
    dist: &DistanceMatrix<S>,
    grad_d: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (b, dim) = (z.shape()[0], z.shape()[1]);
    if grad_d.shape() != [b, b] {
        return Err(Error::dim("pairwise_distances_backward", format!("{:?} vs [{b}, {b}]", grad_d.shape())));
    }
    let eps = S::lit(DISTANCE_EPS);
    let two = S::lit(2.0);
    // symmetric weight on each squared distance
    let mut sym = vec![S::zero(); b * b];
    for i in 0..b {
        for j in 0..b {
            if i == j {
                continue;
            }
            let q = dist.d_sq.data()[i * b + j];
            if q > S::zero() {
                let g = grad_d.data()[i * b + j] / (two * (q + eps).sqrt());
                sym[i * b + j] += g;
                sym[j * b + i] += g;
            }
        }
    }
    // grad_i = 2 Σ_j sym_ij (z_i − z_j)
    let mut out = vec![S::zero(); b * dim];
    gemm(
        -two,
        MatRef::row_major(&sym, b, b),
        MatRef::row_major(z.data(), b, dim),
        S::zero(),
        &mut out,
    );
    for i in 0..b {
        let rowsum: S = sym[i * b..(i + 1) * b].iter().copied().sum();
        for (o, &zv) in out[i * dim..(i + 1) * dim].iter_mut().zip(z.row(i)) {
            *o += two * rowsum * zv;
        }
    }
    Tensor::new(&[b, dim], out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TripletSet {
    /// Sorted lexicographically by (anchor, positive, negative).
    pub triplets: Vec<Triplet>,
}

impl TripletSet {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn to_set(&self) -> BTreeSet<Triplet> {
        self.triplets.iter().copied().collect()
    }
}

/// All `(a, p, n)` with `y_a = y_p`, `a != p`, `y_n != y_a` and the negative
/// strictly closer to the anchor than the positive.
pub fn valid_triplets<S: Scalar>(dist: &DistanceMatrix<S>, labels: &[usize]) -> Result<TripletSet> {
    check_labels(dist, labels)?;
    let b = dist.size();
    let mut triplets = Vec::new();
    for a in 0..b {
        for p in (0..b).filter(|&p| p != a && labels[p] == labels[a]) {
            let dap = dist.get(a, p);
            for n in (0..b).filter(|&n| labels[n] != labels[a]) {
                if dist.get(a, n) < dap {
                    triplets.push(Triplet { anchor: a, positive: p, negative: n });
                }
            }
        }
    }
    Ok(TripletSet { triplets })
}

fn check_labels<S: Scalar>(dist: &DistanceMatrix<S>, labels: &[usize]) -> Result<()> {
    if labels.len() != dist.size() {
        return Err(Error::dim("rank", format!("{} labels for {} rows", labels.len(), dist.size())));
    }
    Ok(())
}

fn check_pair<S: Scalar>(dist: &DistanceMatrix<S>, labels: &[usize], a: usize, p: usize) -> Result<()> {
    check_labels(dist, labels)?;
    if a >= labels.len() || p >= labels.len() {
        return Err(Error::Contract(format!("pair ({a}, {p}) out of range for batch of {}", labels.len())));
    }
    if a == p {
        return Err(Error::Contract(format!("anchor and positive are the same row {a}")));
    }
    if labels[a] != labels[p] {
        return Err(Error::Contract(format!(
            "rows {a} and {p} have different labels ({} vs {})",
            labels[a], labels[p]
        )));
    }
    Ok(())
}

/// Number of negatives at distance `<=` the anchor–positive distance.
pub fn hard_rank<S: Scalar>(dist: &DistanceMatrix<S>, labels: &[usize], a: usize, p: usize) -> Result<usize> {
    check_pair(dist, labels, a, p)?;
    let dap = dist.get(a, p);
    Ok((0..labels.len()).filter(|&n| labels[n] != labels[a] && dist.get(a, n) <= dap).count())
}

/// Which negatives enter the soft rank sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NegativeDomain {
    /// Every negative of the anchor.
    #[default]
    All,
    /// Only negatives strictly closer than the positive.
    ValidOnly,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossNormalization {
    /// Average over anchor–positive pairs.
    #[default]
    Mean,
    /// Plain double sum.
    Sum,
}

#[inline]
pub fn sigmoid<S: Scalar>(k: S) -> S {
    if k >= S::zero() {
        S::one() / (S::one() + (-k).exp())
    } else {
        let e = k.exp();
        e / (S::one() + e)
    }
}

/// Sigmoid-relaxed rank at temperature 1.
pub fn soft_rank<S: Scalar>(
    dist: &DistanceMatrix<S>,
    labels: &[usize],
    a: usize,
    p: usize,
    domain: NegativeDomain,
) -> Result<S> {
    soft_rank_with_temperature(dist, labels, a, p, domain, S::one())
}

/// `Σ_n σ((d(a,p) − d(a,n)) / τ)`; as `τ → 0⁺` this approaches
/// [`hard_rank`] whenever no negative ties the positive.
pub fn soft_rank_with_temperature<S: Scalar>(
    dist: &DistanceMatrix<S>,
    labels: &[usize],
    a: usize,
    p: usize,
    domain: NegativeDomain,
    temperature: S,
) -> Result<S> {
    check_pair(dist, labels, a, p)?;
    if !(temperature > S::zero()) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    let dap = dist.get(a, p);
    Ok((0..labels.len())
        .filter(|&n| labels[n] != labels[a])
        .map(|n| dist.get(a, n))
        .filter(|&dan| domain == NegativeDomain::All || dan < dap)
        .map(|dan| sigmoid((dap - dan) / temperature))
        .sum())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankLossConfig {
    pub negative_domain: NegativeDomain,
    pub normalization: LossNormalization,
    pub temperature: f64,
}

impl Default for RankLossConfig {
    fn default() -> Self {
        Self { negative_domain: NegativeDomain::All, normalization: LossNormalization::Mean, temperature: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairRank<S> {
    pub anchor: usize,
    pub positive: usize,
    pub soft: S,
    pub hard: usize,
}

/// Loss value, per-pair ranks and the gradient w.r.t. the embeddings.
#[derive(Clone, Debug)]
pub struct RankComputation<S> {
    pub pairs: Vec<PairRank<S>>,
    pub loss: S,
    pub grad_z: Tensor<S>,
    pub distances: DistanceMatrix<S>,
}

impl<S: Scalar> RankComputation<S> {
    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }
}

/// Per-anchor scratch for the soft-rank sums.
struct AnchorScratch<S> {
    negatives: Vec<usize>,
    neg_dist: Vec<S>,
    /// `exp((d(a,n) − c) / τ)` when the factorized path is usable.
    neg_factor: Vec<S>,
    slope: Vec<S>,
    neg_grad: Vec<S>,
}

pub fn rank_loss<S: Scalar>(z: &Tensor<S>, labels: &[usize], config: &RankLossConfig) -> Result<RankComputation<S>> {
    z.expect_ndim("rank_loss", 2)?;
    z.check_finite("rank_loss embeddings")?;
    if !(config.temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {}", config.temperature)));
    }
    let b = z.shape()[0];
    if labels.len() != b {
        return Err(Error::dim("rank_loss", format!("{} labels for {b} rows", labels.len())));
    }
    let dist = pairwise_distances(z)?;
    let tau = S::lit(config.temperature);
    let inv_tau = S::one() / tau;

    let mut grad_d = vec![S::zero(); b * b];
    let mut pairs = Vec::new();
    let mut total = S::zero();
    let mut scratch = AnchorScratch {
        negatives: Vec::with_capacity(b),
        neg_dist: Vec::with_capacity(b),
        neg_factor: Vec::with_capacity(b),
        slope: vec![S::zero(); b],
        neg_grad: vec![S::zero(); b],
    };

    for a in 0..b {
        let row = &dist.d.data()[a * b..(a + 1) * b];
        scratch.negatives.clear();
        scratch.neg_dist.clear();
        for n in (0..b).filter(|&n| labels[n] != labels[a]) {
            scratch.negatives.push(n);
            scratch.neg_dist.push(row[n]);
        }
        let positives: Vec<usize> = (0..b).filter(|&p| p != a && labels[p] == labels[a]).collect();
        if positives.is_empty() {
            continue;
        }
        let nn = scratch.negatives.len();
        for g in &mut scratch.neg_grad[..nn] {
            *g = S::zero();
        }

        // σ((d_ap − d_an)/τ) = 1 / (1 + exp((d_an − c)/τ) · exp((c − d_ap)/τ))
        // factorizes when both exponents stay in range.
        let (lo, hi) = positives
            .iter()
            .map(|&p| row[p])
            .chain(scratch.neg_dist.iter().copied())
            .fold((S::infinity(), S::neg_infinity()), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let center = (lo + hi) / S::lit(2.0);
        let factorized = config.negative_domain == NegativeDomain::All
            && nn > 0
            && ((hi - lo) * inv_tau).as_f64() <= 2.0 * EXP_SAFE;
        if factorized {
            scratch.neg_factor.clear();
            scratch.neg_factor.extend(scratch.neg_dist.iter().map(|&d| ((d - center) * inv_tau).exp()));
        }

        for &p in &positives {
            let dap = row[p];
            let mut rank = S::zero();
            let mut slope_sum = S::zero();
            let slope = &mut scratch.slope[..nn];
            if factorized {
                let w = ((center - dap) * inv_tau).exp();
                for (s_out, &u) in slope.iter_mut().zip(&scratch.neg_factor) {
                    let s = S::one() / (S::one() + u * w);
                    rank += s;
                    let ds = s - s * s;
                    *s_out = ds;
                    slope_sum += ds;
                }
            } else {
                for (s_out, &dan) in slope.iter_mut().zip(&scratch.neg_dist) {
                    if config.negative_domain == NegativeDomain::ValidOnly && !(dan < dap) {
                        *s_out = S::zero();
                        continue;
                    }
                    let s = sigmoid((dap - dan) * inv_tau);
                    rank += s;
                    let ds = s - s * s;
                    *s_out = ds;
                    slope_sum += ds;
                }
            }
            let hard = scratch.neg_dist.iter().filter(|&&dan| dan <= dap).count();
            total += rank.atan();
            pairs.push(PairRank { anchor: a, positive: p, soft: rank, hard });

            // d arctan(R)/dR, the norm factor is applied at the end
            let weight = S::one() / (S::one() + rank * rank) * inv_tau;
            grad_d[a * b + p] += weight * slope_sum;
            for (g, &ds) in scratch.neg_grad[..nn].iter_mut().zip(slope.iter()) {
                *g += weight * ds;
            }
        }
        for (&n, &g) in scratch.negatives.iter().zip(&scratch.neg_grad[..nn]) {
            grad_d[a * b + n] -= g;
        }
    }

    let norm = match config.normalization {
        LossNormalization::Mean if !pairs.is_empty() => S::one() / S::from_usize(pairs.len()),
        _ => S::one(),
    };
    for g in &mut grad_d {
        *g *= norm;
    }
    let grad_z = pairwise_distances_backward(z, &dist, &Tensor::new(&[b, b], grad_d)?)?;
    let loss = total * norm;
    if !loss.is_finite() {
        return Err(Error::numeric("rank_loss", format!("loss evaluated to {loss}")));
    }
    Ok(RankComputation { pairs, loss, grad_z, distances: dist })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{max_rel_err, numeric_grad, rand_tensor};

    fn naive_distances(z: &Tensor<f64>) -> Vec<f64> {
        let (b, d) = (z.shape()[0], z.shape()[1]);
        let mut out = vec![0.0; b * b];
        for i in 0..b {
            for j in 0..b {
                out[i * b + j] = (0..d).map(|k| (z.row(i)[k] - z.row(j)[k]).powi(2)).sum::<f64>().sqrt();
            }
        }
        out
    }

    fn dist_from(rows: &[&[f64]]) -> DistanceMatrix<f64> {
        let b = rows.len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        DistanceMatrix::from_distances(Tensor::new(&[b, b], flat).unwrap()).unwrap()
    }

    #[test]
    fn basis_vectors_are_root_two_apart() {
        let z = Tensor::<f64>::from_f64(&[2, 3], &[1., 0., 0., 0., 1., 0.]).unwrap();
        let d = pairwise_distances(&z).unwrap();
        assert!((d.get(0, 1) - 2f64.sqrt()).abs() < 1e-5);
        assert_eq!(d.get(0, 0), 0.0);
    }

    #[test]
    fn duplicate_rows_have_zero_distance() {
        let z = Tensor::<f64>::from_f64(&[2, 2], &[0.6, 0.8, 0.6, 0.8]).unwrap();
        assert_eq!(pairwise_distances(&z).unwrap().get(0, 1), 0.0);
    }

    #[test]
    fn matches_naive_double_loop() {
        for seed in 0..20 {
            let z = rand_tensor(&[7, 5], seed);
            let d = pairwise_distances(&z).unwrap();
            for (a, b) in d.d.data().iter().zip(naive_distances(&z)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn four_point_triplet_example() {
        // rows 0,1 are class 0; rows 2,3 class 1 (1-based (1,2,3) -> (0,1,2))
        let d = dist_from(&[
            &[0.0, 1.0, 0.5, 2.0],
            &[1.0, 0.0, 1.5, 1.5],
            &[0.5, 1.5, 0.0, 1.0],
            &[2.0, 1.5, 1.0, 0.0],
        ]);
        let t = valid_triplets(&d, &[0, 0, 1, 1]).unwrap().to_set();
        assert!(t.contains(&Triplet { anchor: 0, positive: 1, negative: 2 }));
        assert!(!t.contains(&Triplet { anchor: 0, positive: 1, negative: 3 }));
    }

    #[test]
    fn separated_batch_has_no_triplets() {
        let z = Tensor::<f64>::from_f64(&[4, 1], &[0.0, 0.1, 5.0, 5.1]).unwrap();
        let d = pairwise_distances(&z).unwrap();
        assert!(valid_triplets(&d, &[0, 0, 1, 1]).unwrap().is_empty());
        assert!(valid_triplets(&d, &[0, 0, 0, 0]).unwrap().is_empty());
    }

    #[test]
    fn hard_and_soft_rank_examples() {
        // anchor 0, positive 1 at 1.0, negatives at 0.8 and 1.2
        let d = dist_from(&[&[0.0, 1.0, 0.8, 1.2], &[1.0, 0.0, 1.0, 1.0], &[0.8, 1.0, 0.0, 1.0], &[1.2, 1.0, 1.0, 0.0]]);
        let y = [0, 0, 1, 1];
        assert_eq!(hard_rank(&d, &y, 0, 1).unwrap(), 1);
        let s = soft_rank(&d, &y, 0, 1, NegativeDomain::All).unwrap();
        assert!((s - 1.0).abs() < 1e-6);
        let v = soft_rank(&d, &y, 0, 1, NegativeDomain::ValidOnly).unwrap();
        assert!((v - 0.549834).abs() < 1e-6);

        let tie = dist_from(&[&[0.0, 0.7, 0.7], &[0.7, 0.0, 1.0], &[0.7, 1.0, 0.0]]);
        assert_eq!(soft_rank(&tie, &[0, 0, 1], 0, 1, NegativeDomain::All).unwrap(), 0.5);
        assert_eq!(hard_rank(&tie, &[0, 0, 1], 0, 1).unwrap(), 1);

        let far = dist_from(&[&[0.0, 0.1, 1e6], &[0.1, 0.0, 1e6], &[1e6, 1e6, 0.0]]);
        assert_eq!(hard_rank(&far, &[0, 0, 1], 0, 1).unwrap(), 0);
        assert!(soft_rank(&far, &[0, 0, 1], 0, 1, NegativeDomain::All).unwrap() < 1e-300);
    }

    #[test]
    fn rank_contract_errors() {
        let d = dist_from(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert!(matches!(hard_rank(&d, &[0, 1], 0, 1), Err(Error::Contract(_))));
        assert!(matches!(soft_rank(&d, &[0, 0], 1, 1, NegativeDomain::All), Err(Error::Contract(_))));
    }

    #[test]
    fn equidistant_negatives_give_unit_rank() {
        // anchor at the origin, positive and both negatives on the unit circle
        let z = Tensor::<f64>::from_f64(&[4, 2], &[0., 0., 1., 0., -1., 0., 0., 1.]).unwrap();
        let labels = [0, 0, 1, 2];
        let out = rank_loss(&z, &labels, &RankLossConfig::default()).unwrap();
        assert_eq!(out.num_pairs(), 2);
        let first = out.pairs.iter().find(|p| p.anchor == 0).unwrap();
        assert!((first.soft - 1.0).abs() < 1e-12);
        assert_eq!(first.hard, 2);
        let expected: f64 = out
            .pairs
            .iter()
            .map(|p| soft_rank(&out.distances, &labels, p.anchor, p.positive, NegativeDomain::All).unwrap().atan())
            .sum::<f64>()
            / 2.0;
        assert!((out.loss - expected).abs() < 1e-12);
        let sum = rank_loss(&z, &labels, &RankLossConfig { normalization: LossNormalization::Sum, ..Default::default() });
        assert!((sum.unwrap().loss - 2.0 * expected).abs() < 1e-12);
    }

    #[test]
    fn no_pairs_means_zero_loss() {
        let z = rand_tensor(&[3, 4], 1);
        let out = rank_loss(&z, &[0, 1, 2], &RankLossConfig::default()).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad_z.data().iter().all(|&g| g == 0.0));
        let single_class = rank_loss(&z, &[1, 1, 1], &RankLossConfig::default()).unwrap();
        assert_eq!(single_class.loss, 0.0);
        assert!(single_class.grad_z.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn non_finite_embeddings_rejected() {
        let mut z = rand_tensor(&[3, 2], 1);
        z.data_mut()[0] = f64::INFINITY;
        assert!(matches!(rank_loss(&z, &[0, 0, 1], &RankLossConfig::default()), Err(Error::Numeric { .. })));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..12u64 {
            let b = 4 + (seed as usize % 7);
            let dim = 2 + (seed as usize % 6);
            let z = rand_tensor(&[b, dim], seed);
            let labels: Vec<usize> = (0..b).map(|i| (i * 7 + seed as usize) % 3).collect();
            for cfg in [
                RankLossConfig::default(),
                RankLossConfig { normalization: LossNormalization::Sum, ..Default::default() },
                RankLossConfig { temperature: 0.3, ..Default::default() },
                RankLossConfig { temperature: 0.05, ..Default::default() },
            ] {
                let out = rank_loss(&z, &labels, &cfg).unwrap();
                let num = numeric_grad(&z, |z| rank_loss(z, &labels, &cfg).unwrap().loss);
                assert!(max_rel_err(&out.grad_z, &num) < 1e-5, "seed {seed} {cfg:?}");
            }
        }
    }

    #[test]
    fn factorized_and_direct_paths_agree() {
        let z = rand_tensor(&[9, 4], 3);
        let labels = [0, 1, 2, 0, 1, 2, 0, 1, 2];
        let out = rank_loss(&z, &labels, &RankLossConfig::default()).unwrap();
        for pr in &out.pairs {
            let direct = soft_rank(&out.distances, &labels, pr.anchor, pr.positive, NegativeDomain::All).unwrap();
            assert!((direct - pr.soft).abs() < 1e-12);
            assert_eq!(hard_rank(&out.distances, &labels, pr.anchor, pr.positive).unwrap(), pr.hard);
        }
    }

    #[test]
    fn valid_only_mode_sums_closer_negatives() {
        let z = rand_tensor(&[8, 3], 4);
        let labels = [0, 0, 0, 1, 1, 1, 2, 2];
        let cfg = RankLossConfig { negative_domain: NegativeDomain::ValidOnly, ..Default::default() };
        let out = rank_loss(&z, &labels, &cfg).unwrap();
        for pr in &out.pairs {
            let v = soft_rank(&out.distances, &labels, pr.anchor, pr.positive, NegativeDomain::ValidOnly).unwrap();
            assert!((v - pr.soft).abs() < 1e-12);
        }
        let num = numeric_grad(&z, |z| rank_loss(z, &labels, &cfg).unwrap().loss);
        assert!(max_rel_err(&out.grad_z, &num) < 1e-6);
    }

    #[test]
    fn arctan_weight_decreases_with_rank() {
        let w = |r: f64| 1.0 / (1.0 + r * r);
        assert!(w(0.0) > w(1.0) && w(1.0) > w(5.0));
        assert_eq!(w(0.0), 1.0);
        assert_eq!(w(1.0), 0.5);
    }
}
