//! Gaussian-mixture measure algebra.
//!
//! Every probability measure handled by the crate is a finite mixture of
//! (possibly degenerate) Gaussians. The class is closed under affine
//! pushforward and under convex combination, which is all the causal
//! machinery needs. Densities are never evaluated, so zero-variance
//! coordinates (point masses from hard interventions) are fine.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transport;

/// Structural tolerance: symmetry, weight sums, component merging.
pub const STRUCTURAL_TOL: f64 = 1e-12;
/// Tolerance for algebraic identities (axioms, naturality).
pub const ALGEBRAIC_TOL: f64 = 1e-10;
/// Default tolerance for user-facing comparisons.
pub const DEFAULT_COMPARE_TOL: f64 = 1e-9;
/// Most negative eigenvalue accepted for a covariance.
pub const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianComponent {
    /// Validates symmetry and positive semidefiniteness; the stored
    /// covariance is the exact symmetrization of `cov`.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::dims("covariance", n, cov.nrows().max(cov.ncols())));
        }
        if mean.iter().chain(cov.iter()).any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite entry in Gaussian component"));
        }
        let asym = (&cov - cov.transpose()).amax();
        if asym > STRUCTURAL_TOL {
            return Err(Error::invalid(format!(
                "covariance not symmetric (max asymmetry {asym:e})"
            )));
        }
        let cov = symmetrize(cov);
        let scale = cov.amax().max(1.0);
        if n > 0 {
            let min_eig = SymmetricEigen::new(cov.clone()).eigenvalues.min();
            if min_eig < -PSD_TOL * scale {
                return Err(Error::invalid(format!(
                    "covariance not positive semidefinite (eigenvalue {min_eig:e})"
                )));
            }
        }
        Ok(Self { mean, cov })
    }

    pub(crate) fn from_parts_unchecked(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self {
            mean,
            cov: symmetrize(cov),
        }
    }

    /// `N(0, I_n)`.
    pub fn standard(n: usize) -> Self {
        Self {
            mean: DVector::zeros(n),
            cov: DMatrix::identity(n, n),
        }
    }

    /// Dirac mass at `point`.
    pub fn point_mass(point: DVector<f64>) -> Self {
        let n = point.len();
        Self {
            mean: point,
            cov: DMatrix::zeros(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    fn max_abs_diff(&self, other: &Self) -> f64 {
        let dm = (&self.mean - &other.mean).amax();
        let dc = (&self.cov - &other.cov).amax();
        dm.max(dc)
    }

    fn lex_cmp(&self, other: &Self) -> Ordering {
        // Column-major storage of a symmetric matrix reads the same as row-major.
        let a = self.mean.iter().chain(self.cov.iter());
        let b = other.mean.iter().chain(other.cov.iter());
        for (x, y) in a.zip(b) {
            match x.partial_cmp(y) {
                Some(Ordering::Equal) | None => continue,
                Some(ord) => return ord,
            }
        }
        Ordering::Equal
    }
}

/// Finite convex combination of Gaussian components sharing one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureDoc", into = "MixtureDoc")]
pub struct GaussianMixture {
    weights: Vec<f64>,
    components: Vec<GaussianComponent>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, components: Vec<GaussianComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        if weights.len() != components.len() {
            return Err(Error::dims(
                "mixture weights",
                components.len(),
                weights.len(),
            ));
        }
        let n = components[0].dim();
        if let Some(c) = components.iter().find(|c| c.dim() != n) {
            return Err(Error::dims("mixture component", n, c.dim()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid(
                "mixture weights must be finite and nonnegative",
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > STRUCTURAL_TOL {
            return Err(Error::invalid(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        Ok(Self {
            weights,
            components,
        })
    }

    pub fn gaussian(component: GaussianComponent) -> Self {
        Self {
            weights: vec![1.0],
            components: vec![component],
        }
    }

    /// Single-component mixture from a mean and covariance.
    pub fn normal(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Ok(Self::gaussian(GaussianComponent::new(mean, cov)?))
    }

    pub fn point_mass(point: DVector<f64>) -> Self {
        Self::gaussian(GaussianComponent::point_mass(point))
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Overall mean of the mixture.
    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim());
        for (w, c) in self.weights.iter().zip(&self.components) {
            m += c.mean() * *w;
        }
        m
    }

    /// Overall covariance (law of total covariance).
    pub fn covariance(&self) -> DMatrix<f64> {
        let mu = self.mean();
        let n = self.dim();
        let mut s = DMatrix::zeros(n, n);
        for (w, c) in self.weights.iter().zip(&self.components) {
            let d = c.mean() - &mu;
            s += (c.cov() + &d * d.transpose()) * *w;
        }
        symmetrize(s)
    }

    /// Drops zero-weight components, merges components equal within
    /// [`STRUCTURAL_TOL`] entrywise (summing weights) and sorts the rest
    /// lexicographically by mean, then covariance entries.
    pub fn canonical(&self) -> Self {
        let mut order: Vec<usize> = (0..self.len()).filter(|&k| self.weights[k] > 0.0).collect();
        order.sort_by(|&a, &b| self.components[a].lex_cmp(&self.components[b]));

        let mut weights: Vec<f64> = Vec::new();
        let mut components: Vec<GaussianComponent> = Vec::new();
        for k in order {
            let c = &self.components[k];
            match components
                .iter()
                .position(|kept| kept.max_abs_diff(c) < STRUCTURAL_TOL)
            {
                Some(pos) => weights[pos] += self.weights[k],
                None => {
                    weights.push(self.weights[k]);
                    components.push(c.clone());
                }
            }
        }
        if components.is_empty() {
            // All weights were zero; cannot happen for a valid mixture.
            return self.clone();
        }
        Self {
            weights,
            components,
        }
    }
}

/// Affine map `x -> matrix * x + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AffineDoc", into = "AffineDoc")]
pub struct AffineMap {
    matrix: DMatrix<f64>,
    offset: DVector<f64>,
}

impl AffineMap {
    pub fn new(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if matrix.nrows() != offset.len() {
            return Err(Error::dims("affine offset", matrix.nrows(), offset.len()));
        }
        if matrix.iter().chain(offset.iter()).any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite entry in affine map"));
        }
        Ok(Self { matrix, offset })
    }

    pub fn linear(matrix: DMatrix<f64>) -> Self {
        let m = matrix.nrows();
        Self {
            matrix,
            offset: DVector::zeros(m),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::linear(DMatrix::identity(n, n))
    }

    /// Builds a linear map from row-major rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Ok(Self::linear(matrix_from_rows(rows)?))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn in_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::dims("affine map input", self.in_dim(), x.len()));
        }
        Ok(&self.matrix * x + &self.offset)
    }

    /// `self ∘ inner`: first `inner`, then `self`.
    pub fn after(&self, inner: &AffineMap) -> Result<AffineMap> {
        if inner.out_dim() != self.in_dim() {
            return Err(Error::dims(
                "affine composition",
                self.in_dim(),
                inner.out_dim(),
            ));
        }
        Ok(AffineMap {
            matrix: &self.matrix * &inner.matrix,
            offset: &self.matrix * &inner.offset + &self.offset,
        })
    }
}

/// Pushes every component through `map`; weights are unchanged.
pub fn pushforward(map: &AffineMap, mu: &GaussianMixture) -> Result<GaussianMixture> {
    if map.in_dim() != mu.dim() {
        return Err(Error::dims("pushforward", map.in_dim(), mu.dim()));
    }
    let a = map.matrix();
    let at = a.transpose();
    let components = mu
        .components
        .iter()
        .map(|c| {
            GaussianComponent::from_parts_unchecked(a * c.mean() + map.offset(), a * c.cov() * &at)
        })
        .collect();
    Ok(GaussianMixture {
        weights: mu.weights.clone(),
        components,
    })
}

/// The convex-space operation `cc_λ(χ₁, χ₂) = λχ₁ + (1 − λ)χ₂`, kept as an
/// exact mixture and canonically reduced.
pub fn convex_combine(
    lambda: f64,
    chi1: &GaussianMixture,
    chi2: &GaussianMixture,
) -> Result<GaussianMixture> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!(
            "convex weight {lambda} outside [0, 1]"
        )));
    }
    if chi1.dim() != chi2.dim() {
        return Err(Error::dims("convex combination", chi1.dim(), chi2.dim()));
    }
    let weights = chi1
        .weights
        .iter()
        .map(|w| lambda * w)
        .chain(chi2.weights.iter().map(|w| (1.0 - lambda) * w))
        .collect();
    let components = chi1
        .components
        .iter()
        .chain(&chi2.components)
        .cloned()
        .collect();
    Ok(GaussianMixture {
        weights,
        components,
    }
    .canonical())
}

/// Closed-form 2-Wasserstein distance between two Gaussians.
///
/// The Bures term `tr(S₁ + S₂ − 2(S₂^{½} S₁ S₂^{½})^{½})` is evaluated as
/// `min_Q ‖S₁^{½} − S₂^{½} Q‖_F²` over orthogonal `Q`, with the optimal `Q`
/// taken from the SVD of `S₁^{½} S₂^{½}`. Same quantity, but it is a sum of
/// squares, so equal covariances give a residual at rounding level instead of
/// the square root of one.
pub fn w2_gaussian(g1: &GaussianComponent, g2: &GaussianComponent) -> Result<f64> {
    if g1.dim() != g2.dim() {
        return Err(Error::dims("w2_gaussian", g1.dim(), g2.dim()));
    }
    check_psd(g1.cov())?;
    check_psd(g2.cov())?;
    Ok(w2_squared_unchecked(g1, g2).sqrt())
}

fn check_psd(cov: &DMatrix<f64>) -> Result<()> {
    if cov.nrows() == 0 {
        return Ok(());
    }
    let min_eig = SymmetricEigen::new(cov.clone()).eigenvalues.min();
    if min_eig < -PSD_TOL * cov.amax().max(1.0) {
        return Err(Error::invalid(format!(
            "covariance not positive semidefinite (eigenvalue {min_eig:e})"
        )));
    }
    Ok(())
}

fn w2_squared_unchecked(g1: &GaussianComponent, g2: &GaussianComponent) -> f64 {
    let mean_term = (g1.mean() - g2.mean()).norm_squared();
    if g1.cov() == g2.cov() {
        return mean_term;
    }
    let r1 = psd_sqrt(g1.cov());
    let r2 = psd_sqrt(g2.cov());
    let bures = if g1.dim() == 1 {
        (r1[(0, 0)] - r2[(0, 0)]).powi(2)
    } else {
        let (u, v) = jacobi_svd(&r1 * &r2);
        let q = v * u.transpose();
        (&r1 - &r2 * q).norm_squared()
    };
    mean_term + bures
}

/// `(U, V)` with `a = U Σ Vᵀ` for square `a`, by one-sided Jacobi rotations.
///
/// nalgebra 0.35's SVD with singular vectors can return factors that do not
/// reconstruct the input for nearly rank-deficient matrices (seen at 2e-2
/// relative error), which is exactly the case for products of singular
/// covariance roots. Jacobi keeps high relative accuracy there.
fn jacobi_svd(mut a: DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.ncols();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..64 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut a, &mut v] {
                    for i in 0..m.nrows() {
                        let (x, y) = (m[(i, p)], m[(i, q)]);
                        m[(i, p)] = c * x - s * y;
                        m[(i, q)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    // Columns of `a` are now `σ_j u_j`. Null directions get an arbitrary
    // orthonormal completion; they do not affect the Procrustes cost.
    let norms: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    let floor = n as f64 * f64::EPSILON * norms.iter().cloned().fold(0.0, f64::max);
    let mut u = DMatrix::<f64>::zeros(n, n);
    let mut filled = vec![false; n];
    for j in 0..n {
        if norms[j] > floor {
            u.set_column(j, &(a.column(j) / norms[j]));
            filled[j] = true;
        }
    }
    let mut candidate = 0;
    for j in 0..n {
        if filled[j] {
            continue;
        }
        while candidate < n {
            let mut e = DVector::<f64>::zeros(n);
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for k in (0..n).filter(|&k| filled[k]) {
                    let proj = u.column(k).dot(&e);
                    e -= u.column(k) * proj;
                }
            }
            let norm = e.norm();
            if norm > 0.5 {
                u.set_column(j, &(e / norm));
                filled[j] = true;
                break;
            }
        }
    }
    (u, v)
}

/// Exact optimal transport between the component lists with squared
/// Gaussian W2 ground cost; returns the square root of the optimal cost.
pub fn mixture_distance(mu1: &GaussianMixture, mu2: &GaussianMixture) -> Result<f64> {
    if mu1.dim() != mu2.dim() {
        return Err(Error::dims("mixture_distance", mu1.dim(), mu2.dim()));
    }
    for c in mu1.components.iter().chain(&mu2.components) {
        check_psd(c.cov())?;
    }
    let cost: Vec<Vec<f64>> = mu1
        .components
        .iter()
        .map(|a| {
            mu2.components
                .iter()
                .map(|b| w2_squared_unchecked(a, b))
                .collect()
        })
        .collect();
    if mu1.len() == 1 && mu2.len() == 1 {
        return Ok(cost[0][0].sqrt());
    }
    let plan = transport::solve(&mu1.weights, &mu2.weights, &cost);
    Ok(plan.cost.max(0.0).sqrt())
}

/// Structural equality after canonical reduction: same component count and
/// matched components within `tol` in weight, mean and covariance entries.
pub fn measures_equal(mu1: &GaussianMixture, mu2: &GaussianMixture, tol: f64) -> bool {
    if mu1.dim() != mu2.dim() {
        return false;
    }
    let a = mu1.canonical();
    let b = mu2.canonical();
    if a.len() != b.len() {
        return false;
    }
    let close = |i: usize, j: usize| {
        (a.weights[i] - b.weights[j]).abs() < tol
            && a.components[i].max_abs_diff(&b.components[j]) < tol
    };
    if (0..a.len()).all(|k| close(k, k)) {
        return true;
    }
    // Sorted order can flip when means tie up to rounding; fall back to matching.
    let mut used = vec![false; b.len()];
    for i in 0..a.len() {
        match (0..b.len()).find(|&j| !used[j] && close(i, j)) {
            Some(j) => used[j] = true,
            None => return false,
        }
    }
    true
}

/// Draws `count` rows from `mu`, deterministic in `seed`.
pub fn sample(mu: &GaussianMixture, count: usize, seed: u64) -> DMatrix<f64> {
    let n = mu.dim();
    let factors: Vec<DMatrix<f64>> = mu.components.iter().map(|c| psd_factor(c.cov())).collect();
    let mut cumulative = Vec::with_capacity(mu.len());
    let mut acc = 0.0;
    for w in &mu.weights {
        acc += w;
        cumulative.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(count, n);
    let mut z = DVector::zeros(n);
    for row in 0..count {
        let k = if mu.len() == 1 {
            0
        } else {
            let u: f64 = rng.random::<f64>() * acc;
            cumulative
                .iter()
                .position(|&c| u < c)
                .unwrap_or(mu.len() - 1)
        };
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let x = &factors[k] * &z + mu.components[k].mean();
        out.row_mut(row).copy_from(&x.transpose());
    }
    out
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Square roots of the eigenvalues, with those at rounding level relative to
/// the largest set to zero. A singular covariance comes back with eigenvalues
/// of order ±1e-16 in its null space; their square roots would be 1e-8.
fn sqrt_spectrum(eigenvalues: &DVector<f64>) -> DVector<f64> {
    let floor = eigenvalues.len() as f64 * f64::EPSILON * eigenvalues.amax();
    eigenvalues.map(|l| if l > floor { l.sqrt() } else { 0.0 })
}

/// `V diag(√λ) Vᵀ`.
pub fn psd_sqrt(s: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(s.clone());
    let d = sqrt_spectrum(&eig.eigenvalues);
    symmetrize(&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose())
}

/// `L` with `L Lᵀ = S`, from the eigendecomposition; valid for singular `S`.
fn psd_factor(s: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(s.clone());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_spectrum(&eig.eigenvalues))
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(r) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::dims("matrix row length", ncols, r.len()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentDoc {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixtureDoc {
    weights: Vec<f64>,
    components: Vec<ComponentDoc>,
}

impl TryFrom<MixtureDoc> for GaussianMixture {
    type Error = Error;

    fn try_from(doc: MixtureDoc) -> Result<Self> {
        let components = doc
            .components
            .into_iter()
            .map(|c| GaussianComponent::new(DVector::from_vec(c.mean), matrix_from_rows(&c.cov)?))
            .collect::<Result<Vec<_>>>()?;
        GaussianMixture::new(doc.weights, components)
    }
}

impl From<GaussianMixture> for MixtureDoc {
    fn from(m: GaussianMixture) -> Self {
        MixtureDoc {
            weights: m.weights,
            components: m
                .components
                .into_iter()
                .map(|c| ComponentDoc {
                    mean: c.mean.iter().copied().collect(),
                    cov: matrix_to_rows(&c.cov),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AffineDoc {
    matrix: Vec<Vec<f64>>,
    offset: Vec<f64>,
}

impl TryFrom<AffineDoc> for AffineMap {
    type Error = Error;

    fn try_from(doc: AffineDoc) -> Result<Self> {
        let mut matrix = matrix_from_rows(&doc.matrix)?;
        if doc.matrix.is_empty() {
            matrix = DMatrix::zeros(0, 0);
        }
        AffineMap::new(matrix, DVector::from_vec(doc.offset))
    }
}

impl From<AffineMap> for AffineDoc {
    fn from(m: AffineMap) -> Self {
        AffineDoc {
            matrix: matrix_to_rows(&m.matrix),
            offset: m.offset.iter().copied().collect(),
        }
    }
}
