//! Soft-margin RBF support vector machines trained with SMO.

use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;

/// Stand-in for an unbounded penalty.
pub const C_INFINITY: f64 = 1e8;

/// `{1e-4, ..., 1e4} ∪ {∞}`.
pub fn default_c_grid() -> Vec<f64> {
    (-4..=4).map(|i| 10f64.powi(i)).chain(std::iter::once(C_INFINITY)).collect()
}

/// `K[i, j] = exp(−γ ‖a_i − b_j‖²)`.
pub fn rbf_kernel<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, gamma: S) -> Result<Tensor<S>> {
    a.expect_ndim("rbf_kernel", 2)?;
    b.expect_ndim("rbf_kernel", 2)?;
    if a.shape()[1] != b.shape()[1] {
        return Err(Error::dim("rbf_kernel", format!("feature widths {} and {}", a.shape()[1], b.shape()[1])));
    }
    if !(gamma > S::zero()) {
        return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
    }
    let (na, nb, d) = (a.shape()[0], b.shape()[0], a.shape()[1]);
    let mut k = vec![S::zero(); na * nb];
    gemm(
        S::one(),
        MatRef::row_major(a.data(), na, d),
        MatRef::row_major(b.data(), nb, d).t(),
        S::zero(),
        &mut k,
    );
    let sq = |t: &Tensor<S>, i: usize| t.row(i).iter().map(|&v| v * v).sum::<S>();
    let an: Vec<S> = (0..na).map(|i| sq(a, i)).collect();
    let bn: Vec<S> = (0..nb).map(|j| sq(b, j)).collect();
    for i in 0..na {
        for j in 0..nb {
            let dist = (an[i] + bn[j] - S::lit(2.0) * k[i * nb + j]).max(S::zero());
            k[i * nb + j] = (-gamma * dist).exp();
        }
    }
    Tensor::new(&[na, nb], k)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoParams {
    pub c: f64,
    /// KKT violation tolerance.
    pub tol: f64,
    /// Consecutive sweeps without progress before stopping.
    pub max_passes: usize,
    /// Hard cap on sweeps.
    pub max_sweeps: usize,
}

impl Default for SmoParams {
    fn default() -> Self {
        Self { c: 1.0, tol: 1e-3, max_passes: 3, max_sweeps: 20_000 }
    }
}

/// Dual solution on a precomputed kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub sweeps: usize,
    pub converged: bool,
}

impl DualSolution {
    /// `Σ α − ½ Σ_ij α_i α_j y_i y_j K_ij`.
    pub fn objective(&self, kernel: &[f64], y: &[f64]) -> f64 {
        dual_objective(&self.alpha, kernel, y)
    }
}

pub fn dual_objective(alpha: &[f64], kernel: &[f64], y: &[f64]) -> f64 {
    let n = alpha.len();
    let mut quad = 0.0;
    for i in 0..n {
        if alpha[i] == 0.0 {
            continue;
        }
        let row = &kernel[i * n..(i + 1) * n];
        let inner: f64 = (0..n).map(|j| alpha[j] * y[j] * row[j]).sum();
        quad += alpha[i] * y[i] * inner;
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

struct Smo<'a> {
    k: &'a [f64],
    n: usize,
    y: &'a [f64],
    c: f64,
    tol: f64,
    alpha: Vec<f64>,
    /// `f(x_i) − y_i`.
    err: Vec<f64>,
    b: f64,
}

impl Smo<'_> {
    #[inline]
    fn kij(&self, i: usize, j: usize) -> f64 {
        self.k[i * self.n + j]
    }

    fn is_free(&self, i: usize) -> bool {
        self.alpha[i] > 0.0 && self.alpha[i] < self.c
    }

    fn violates(&self, i: usize) -> bool {
        let r = self.y[i] * self.err[i];
        (r < -self.tol && self.alpha[i] < self.c) || (r > self.tol && self.alpha[i] > 0.0)
    }

    fn take_step(&mut self, i: usize, j: usize) -> bool {
        if i == j {
            return false;
        }
        let (ai, aj, yi, yj) = (self.alpha[i], self.alpha[j], self.y[i], self.y[j]);
        let (ei, ej) = (self.err[i], self.err[j]);
        let (lo, hi) = if yi != yj {
            ((aj - ai).max(0.0), (self.c + aj - ai).min(self.c))
        } else {
            ((ai + aj - self.c).max(0.0), (ai + aj).min(self.c))
        };
        if hi - lo <= 1e-12 * self.c.max(1.0) {
            return false;
        }
        let (kii, kjj, kij) = (self.kij(i, i), self.kij(j, j), self.kij(i, j));
        let eta = 2.0 * kij - kii - kjj;
        let aj_new = if eta < -1e-12 {
            (aj - yj * (ei - ej) / eta).clamp(lo, hi)
        } else {
            // flat direction, move to the better end
            let f = |a: f64| yj * (ei - ej) * a - 0.5 * eta * a * a;
            let (gl, gh) = (f(lo - aj), f(hi - aj));
            if gl > gh + 1e-12 {
                lo
            } else if gh > gl + 1e-12 {
                hi
            } else {
                aj
            }
        };
        if (aj_new - aj).abs() < 1e-12 * (aj_new + aj + 1e-12) {
            return false;
        }
        let snap = |a: f64| {
            if a < 1e-12 * self.c {
                0.0
            } else if a > self.c * (1.0 - 1e-12) {
                self.c
            } else {
                a
            }
        };
        let aj_new = snap(aj_new);
        let ai_new = snap(ai + yi * yj * (aj - aj_new));
        let (dai, daj) = (ai_new - ai, aj_new - aj);
        let b1 = self.b - ei - yi * dai * kii - yj * daj * kij;
        let b2 = self.b - ej - yi * dai * kij - yj * daj * kjj;
        let b_new = if ai_new > 0.0 && ai_new < self.c {
            b1
        } else if aj_new > 0.0 && aj_new < self.c {
            b2
        } else {
            0.5 * (b1 + b2)
        };
        let db = b_new - self.b;
        let n = self.n;
        let (ri, rj) = (&self.k[i * n..(i + 1) * n], &self.k[j * n..(j + 1) * n]);
        for ((e, &ki), &kj) in self.err.iter_mut().zip(ri).zip(rj) {
            *e += yi * dai * ki + yj * daj * kj + db;
        }
        self.alpha[i] = ai_new;
        self.alpha[j] = aj_new;
        self.b = b_new;
        true
    }

    fn examine(&mut self, i: usize) -> bool {
        if !self.violates(i) {
            return false;
        }
        // second choice: largest |E_i − E_j| among free multipliers
        let ei = self.err[i];
        let best = (0..self.n)
            .filter(|&j| self.is_free(j))
            .max_by(|&a, &b| (ei - self.err[a]).abs().total_cmp(&(ei - self.err[b]).abs()));
        if let Some(j) = best {
            if self.take_step(i, j) {
                return true;
            }
        }
        let n = self.n;
        for off in 1..n {
            let j = (i + off) % n;
            if self.is_free(j) && self.take_step(i, j) {
                return true;
            }
        }
        for off in 1..n {
            let j = (i + off) % n;
            if !self.is_free(j) && self.take_step(i, j) {
                return true;
            }
        }
        false
    }

    fn finalize_bias(&mut self) {
        let free: Vec<usize> = (0..self.n).filter(|&i| self.is_free(i)).collect();
        if !free.is_empty() {
            let shift = free.iter().map(|&i| self.err[i]).sum::<f64>() / free.len() as f64;
            self.b -= shift;
            return;
        }
        // b bracketed by the bound multipliers: b = f_i − g_i with g_i fixed
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..self.n {
            let g = self.err[i] + self.y[i] - self.b;
            let edge = self.y[i] - g;
            let lower = (self.alpha[i] == 0.0) == (self.y[i] > 0.0);
            if lower {
                lo = lo.max(edge);
            } else {
                hi = hi.min(edge);
            }
        }
        let b = match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            (true, false) => lo,
            (false, true) => hi,
            _ => self.b,
        };
        self.b = b;
    }
}

/// SMO on a row-major `n × n` kernel with labels in `{−1, +1}`.
pub fn smo_solve(kernel: &[f64], y: &[f64], params: &SmoParams) -> Result<DualSolution> {
    let n = y.len();
    if kernel.len() != n * n {
        return Err(Error::dim("smo_solve", format!("kernel of {} entries for {n} points", kernel.len())));
    }
    if let Some(v) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(Error::Contract(format!("binary labels must be ±1, got {v}")));
    }
    if !y.contains(&1.0) || !y.contains(&-1.0) {
        return Err(Error::Contract("binary SVM needs both classes".into()));
    }
    if !(params.c > 0.0) {
        return Err(Error::Config(format!("penalty C must be positive, got {}", params.c)));
    }
    let mut smo = Smo {
        k: kernel,
        n,
        y,
        c: params.c,
        tol: params.tol,
        alpha: vec![0.0; n],
        err: y.iter().map(|&v| -v).collect(),
        b: 0.0,
    };
    let mut passes = 0;
    let mut sweeps = 0;
    let mut examine_all = true;
    while passes < params.max_passes && sweeps < params.max_sweeps {
        sweeps += 1;
        let mut changed = 0;
        for i in 0..n {
            if (examine_all || smo.is_free(i)) && smo.examine(i) {
                changed += 1;
            }
        }
        if examine_all {
            if changed == 0 {
                passes += 1;
            } else {
                passes = 0;
                examine_all = false;
            }
        } else if changed == 0 {
            examine_all = true;
        }
    }
    smo.finalize_bias();
    Ok(DualSolution { alpha: smo.alpha, bias: smo.b, sweeps, converged: passes >= params.max_passes })
}

/// A trained two-class machine, `f(x) = Σ α_i y_i K(x_i, x) + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMachine {
    pub support_vectors: Tensor<f64>,
    /// `α_i y_i` per support vector.
    pub dual_coef: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    pub c: f64,
    /// All multipliers, one per training row.
    pub alpha: Vec<f64>,
    pub converged: bool,
}

impl BinaryMachine {
    pub fn decision<S: Scalar>(&self, x: &Tensor<S>) -> Result<Vec<f64>> {
        let k = rbf_kernel(&x.cast::<f64>(), &self.support_vectors, self.gamma)?;
        let s = self.dual_coef.len();
        Ok((0..x.shape()[0])
            .map(|i| k.data()[i * s..(i + 1) * s].iter().zip(&self.dual_coef).map(|(a, b)| a * b).sum::<f64>() + self.bias)
            .collect())
    }
}

pub fn svm_fit_binary<S: Scalar>(reps: &Tensor<S>, y: &[f64], gamma: f64, params: &SmoParams) -> Result<BinaryMachine> {
    reps.expect_ndim("svm_fit_binary", 2)?;
    if y.len() != reps.shape()[0] {
        return Err(Error::dim("svm_fit_binary", format!("{} labels for {} rows", y.len(), reps.shape()[0])));
    }
    let x = reps.cast::<f64>();
    let k = rbf_kernel(&x, &x, gamma)?;
    let sol = smo_solve(k.data(), y, params)?;
    let sv: Vec<usize> = (0..y.len()).filter(|&i| sol.alpha[i] > 0.0).collect();
    let d = x.shape()[1];
    let support_vectors = if sv.is_empty() {
        Tensor::zeros(&[1, d])
    } else {
        x.select_rows(&sv)?
    };
    let dual_coef = if sv.is_empty() { vec![0.0] } else { sv.iter().map(|&i| sol.alpha[i] * y[i]).collect() };
    Ok(BinaryMachine {
        support_vectors,
        dual_coef,
        bias: sol.bias,
        gamma,
        c: params.c,
        alpha: sol.alpha,
        converged: sol.converged,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GammaRule {
    /// `1 / (D · var)` over all entries of the training representations.
    Scale,
    Fixed(f64),
}

impl GammaRule {
    pub fn resolve<S: Scalar>(&self, reps: &Tensor<S>) -> f64 {
        match *self {
            GammaRule::Fixed(g) => g,
            GammaRule::Scale => {
                let d = reps.shape()[1] as f64;
                let n = reps.len() as f64;
                let mean = reps.data().iter().map(|v| v.as_f64()).sum::<f64>() / n;
                let var = reps.data().iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    1.0 / (d * var)
                } else {
                    1.0 / d
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectConfig {
    pub c_grid: Vec<f64>,
    pub gamma: GammaRule,
    pub folds: usize,
    pub smo: SmoParams,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self { c_grid: default_c_grid(), gamma: GammaRule::Scale, folds: 5, smo: SmoParams::default() }
    }
}

/// One-vs-rest multiclass machine. Coefficients are stored over the union
/// of support vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel {
    pub support_vectors: Tensor<f64>,
    /// `[class][support vector]` of `α_i y_i`.
    pub dual_coef: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub gamma: f64,
    pub c: f64,
    pub num_classes: usize,
    /// Mean cross-validated accuracy per grid value, empty if CV was skipped.
    pub cv_scores: Vec<(f64, f64)>,
}

impl SvmModel {
    pub fn decision_values<S: Scalar>(&self, reps: &Tensor<S>) -> Result<Vec<Vec<f64>>> {
        reps.expect_ndim("predict", 2)?;
        if reps.shape()[1] != self.support_vectors.shape()[1] {
            return Err(Error::dim(
                "predict",
                format!("representation width {} vs {} at training", reps.shape()[1], self.support_vectors.shape()[1]),
            ));
        }
        let k = rbf_kernel(&reps.cast::<f64>(), &self.support_vectors, self.gamma)?;
        let s = self.support_vectors.shape()[0];
        Ok((0..reps.shape()[0])
            .map(|i| {
                let row = &k.data()[i * s..(i + 1) * s];
                self.dual_coef
                    .iter()
                    .zip(&self.bias)
                    .map(|(coef, b)| row.iter().zip(coef).map(|(a, c)| a * c).sum::<f64>() + b)
                    .collect()
            })
            .collect())
    }
}

/// Argmax of the per-class decision values; ties go to the smaller index.
pub fn predict<S: Scalar>(model: &SvmModel, reps: &Tensor<S>) -> Result<Vec<usize>> {
    Ok(model.decision_values(reps)?.iter().map(|v| argmax_first(v)).collect())
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// OvR training on the rows `idx` of a precomputed kernel over `n` points.
fn fit_ovr(
    kernel: &[f64],
    n: usize,
    idx: &[usize],
    labels: &[usize],
    num_classes: usize,
    params: &SmoParams,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let m = idx.len();
    let mut sub = vec![0.0; m * m];
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            sub[a * m + b] = kernel[i * n + j];
        }
    }
    let mut coefs = Vec::with_capacity(num_classes);
    let mut biases = Vec::with_capacity(num_classes);
    for class in 0..num_classes {
        let y: Vec<f64> = idx.iter().map(|&i| if labels[i] == class { 1.0 } else { -1.0 }).collect();
        let present = y.contains(&1.0);
        if !present || !y.contains(&-1.0) {
            // constant decision: +1 if every row is this class, else −1
            coefs.push(vec![0.0; m]);
            biases.push(if present { 1.0 } else { -1.0 });
            continue;
        }
        let sol = smo_solve(&sub, &y, params)?;
        coefs.push(sol.alpha.iter().zip(&y).map(|(a, y)| a * y).collect());
        biases.push(sol.bias);
    }
    Ok((coefs, biases))
}

/// Deterministic stratified fold assignment: the `r`-th member of each class
/// goes to fold `r mod k`.
pub fn stratified_folds(labels: &[usize], k: usize) -> Vec<usize> {
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut seen = vec![0usize; classes];
    labels
        .iter()
        .map(|&l| {
            let f = seen[l] % k;
            seen[l] += 1;
            f
        })
        .collect()
}

/// Fits a one-vs-rest machine, choosing C by stratified cross-validation.
pub fn svm_fit_select<S: Scalar>(reps: &Tensor<S>, labels: &[usize], config: &SelectConfig) -> Result<SvmModel> {
    reps.expect_ndim("svm_fit_select", 2)?;
    let n = reps.shape()[0];
    if labels.len() != n {
        return Err(Error::dim("svm_fit_select", format!("{} labels for {n} rows", labels.len())));
    }
    if config.c_grid.is_empty() {
        return Err(Error::Config("empty C grid".into()));
    }
    if let Some(c) = config.c_grid.iter().find(|c| !(**c > 0.0)) {
        return Err(Error::Config(format!("C values must be positive, got {c}")));
    }
    if n == 0 {
        return Err(Error::InvalidInput("no training representations".into()));
    }
    let x = reps.cast::<f64>();
    x.check_finite("svm training representations")?;
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let gamma = config.gamma.resolve(&x);
    let kernel = rbf_kernel(&x, &x, gamma)?;
    let k = kernel.data();

    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        counts[l] += 1;
    }
    let min_count = counts.iter().copied().filter(|&c| c > 0).min().unwrap_or(0);
    let folds = config.folds.min(min_count);
    let distinct = counts.iter().filter(|&&c| c > 0).count();

    let mut cv_scores = Vec::new();
    let c = if config.c_grid.len() == 1 {
        config.c_grid[0]
    } else if folds < 2 || distinct < 2 {
        1.0
    } else {
        let assign = stratified_folds(labels, folds);
        let mut best = (f64::NEG_INFINITY, config.c_grid[0]);
        let mut grid = config.c_grid.clone();
        grid.sort_by(f64::total_cmp);
        for &c in &grid {
            let params = SmoParams { c, ..config.smo };
            let mut correct = 0usize;
            for fold in 0..folds {
                let train: Vec<usize> = (0..n).filter(|&i| assign[i] != fold).collect();
                let test: Vec<usize> = (0..n).filter(|&i| assign[i] == fold).collect();
                let (coefs, biases) = fit_ovr(k, n, &train, labels, num_classes, &params)?;
                for &t in &test {
                    let scores: Vec<f64> = coefs
                        .iter()
                        .zip(&biases)
                        .map(|(coef, b)| train.iter().zip(coef).map(|(&j, a)| k[t * n + j] * a).sum::<f64>() + b)
                        .collect();
                    if argmax_first(&scores) == labels[t] {
                        correct += 1;
                    }
                }
            }
            let acc = correct as f64 / n as f64;
            cv_scores.push((c, acc));
            // strict improvement keeps the smaller C on ties
            if acc > best.0 {
                best = (acc, c);
            }
        }
        best.1
    };

    let all: Vec<usize> = (0..n).collect();
    let params = SmoParams { c, ..config.smo };
    let (coefs, bias) = fit_ovr(k, n, &all, labels, num_classes, &params)?;
    let sv: Vec<usize> = (0..n).filter(|&i| coefs.iter().any(|c| c[i] != 0.0)).collect();
    let (support_vectors, dual_coef) = if sv.is_empty() {
        (Tensor::zeros(&[1, x.shape()[1]]), coefs.iter().map(|_| vec![0.0]).collect())
    } else {
        (x.select_rows(&sv)?, coefs.iter().map(|c| sv.iter().map(|&i| c[i]).collect()).collect())
    };
    Ok(SvmModel { support_vectors, dual_coef, bias, gamma, c, num_classes, cv_scores })
}
