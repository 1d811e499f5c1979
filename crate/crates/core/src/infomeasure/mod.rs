//! Information-theoretic ground truth on Gaussian flow models.
//!
//! Closed-form entropies, mutual information and the information reduction
//! rate `gamma(x | y) = I(x; y) / H(x)`, plus exhaustive mask enumeration on
//! tiny lattices.

mod lattice;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DMatrix;
#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::seq::index::sample;

pub use lattice::{brute_force_object, BruteForce, LatticeFlowSamples, OracleRow};

use crate::error::{Error, Result};
use crate::rng::seeded;

/// `ln(2 pi e)`.
const LN_2PIE: f64 = 2.837_877_066_409_345_5;

/// Symmetry tolerance for covariance matrices.
const SYMMETRY_TOL: f64 = 1e-9;

/// A conditional covariance whose log-determinant falls this far below the
/// marginal one is treated as singular.
const SINGULAR_LOG_GAP: f64 = 30.0;

/// Row-major dense covariance, checked symmetric positive definite.
#[derive(Clone, Debug, PartialEq)]
pub struct Covariance {
    dim: usize,
    data: Vec<f64>,
}

impl Covariance {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim || dim == 0 {
            return Err(Error::shape("covariance", format!("{} entries for dimension {dim}", data.len())));
        }
        for i in 0..dim {
            for j in 0..i {
                let (a, b) = (data[i * dim + j], data[j * dim + i]);
                if !((a - b).abs() <= SYMMETRY_TOL * a.abs().max(b.abs()).max(1.0)) {
                    return Err(Error::NotPositiveDefinite(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        let c = Self { dim, data };
        c.log_det()?;
        Ok(c)
    }

    /// `sigma * sigma * I`.
    pub fn isotropic(dim: usize, variance: f64) -> Result<Self> {
        let mut data = alloc::vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = variance;
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn matrix(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(idx.len(), idx.len(), |r, c| self.get(idx[r], idx[c]))
    }

    fn log_det_of(m: DMatrix<f64>, what: &str) -> Result<f64> {
        let chol = m.cholesky().ok_or_else(|| Error::NotPositiveDefinite(String::from(what)))?;
        let l = chol.l();
        let mut s = 0.0;
        for i in 0..l.nrows() {
            let d = l[(i, i)];
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite(String::from(what)));
            }
            s += 2.0 * d.ln();
        }
        Ok(s)
    }

    pub fn log_det(&self) -> Result<f64> {
        let all: Vec<usize> = (0..self.dim).collect();
        Self::log_det_of(self.matrix(&all), "full matrix")
    }

    /// Log-determinant of the principal block on `idx`.
    pub fn block_log_det(&self, idx: &[usize]) -> Result<f64> {
        check_indices(idx, self.dim)?;
        Self::log_det_of(self.matrix(idx), "principal block")
    }

    /// Log-determinant of the Schur complement
    /// `S_xx - S_xy S_yy^-1 S_yx`, the covariance of `x` given `y`.
    pub fn conditional_log_det(&self, x: &[usize], y: &[usize]) -> Result<f64> {
        check_indices(x, self.dim)?;
        check_indices(y, self.dim)?;
        if y.is_empty() {
            return self.block_log_det(x);
        }
        let sxx = self.matrix(x);
        let syy = self.matrix(y);
        let sxy = DMatrix::from_fn(x.len(), y.len(), |r, c| self.get(x[r], y[c]));
        let chol = syy.cholesky().ok_or_else(|| Error::NotPositiveDefinite("conditioning block".into()))?;
        let solved = chol.solve(&sxy.transpose());
        let schur = sxx.clone() - &sxy * solved;
        let schur = (&schur + schur.transpose()) * 0.5;
        let marginal = Self::log_det_of(sxx, "principal block")?;
        match Self::log_det_of(schur, "conditional") {
            Ok(v) if v > marginal - SINGULAR_LOG_GAP * x.len() as f64 => Ok(v),
            _ => Err(Error::SingularConditional),
        }
    }
}

fn check_indices(idx: &[usize], dim: usize) -> Result<()> {
    for (k, &i) in idx.iter().enumerate() {
        if i >= dim || idx[..k].contains(&i) {
            return Err(Error::Invalid(format!("index set {idx:?} is not a set of distinct indices below {dim}")));
        }
    }
    Ok(())
}

/// Differential entropy of a Gaussian, `0.5 * ln((2 pi e)^d det cov)`.
pub fn gaussian_entropy(cov: &Covariance) -> Result<f64> {
    Ok(0.5 * (cov.dim() as f64 * LN_2PIE + cov.log_det()?))
}

fn block_entropy(cov: &Covariance, idx: &[usize]) -> Result<f64> {
    Ok(0.5 * (idx.len() as f64 * LN_2PIE + cov.block_log_det(idx)?))
}

/// Jointly Gaussian per-pixel flow components, split into foreground and
/// background variables.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBlockModel {
    pub cov: Covariance,
    pub mean: Vec<f64>,
    pub foreground: Vec<usize>,
    pub background: Vec<usize>,
}

impl GaussianBlockModel {
    pub fn new(cov: Covariance, mean: Vec<f64>, foreground: Vec<usize>, background: Vec<usize>) -> Result<Self> {
        let d = cov.dim();
        if mean.len() != d {
            return Err(Error::shape("gaussian model", format!("mean of length {} for dimension {d}", mean.len())));
        }
        let mut all: Vec<usize> = foreground.iter().chain(&background).copied().collect();
        check_indices(&all, d)?;
        all.sort_unstable();
        if all.len() != d {
            return Err(Error::Invalid("foreground and background must partition the variables".into()));
        }
        Ok(Self { cov, mean, foreground, background })
    }

    /// Foreground variables with pairwise covariance `rho * var`, background
    /// likewise with `rho_bg`, and `cross` between every fg/bg pair.
    pub fn equicorrelated(n_fg: usize, n_bg: usize, var: f64, rho_fg: f64, rho_bg: f64, cross: f64) -> Result<Self> {
        let d = n_fg + n_bg;
        let mut data = alloc::vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                data[i * d + j] = if i == j {
                    var
                } else if i < n_fg && j < n_fg {
                    rho_fg * var
                } else if i >= n_fg && j >= n_fg {
                    rho_bg * var
                } else {
                    cross * var
                };
            }
        }
        Self::new(Covariance::new(d, data)?, alloc::vec![0.0; d], (0..n_fg).collect(), (n_fg..d).collect())
    }

    pub fn entropy(&self, x: &[usize]) -> Result<f64> {
        block_entropy(&self.cov, x)
    }

    /// `H(x | y)`; `y` may be empty.
    pub fn conditional_entropy(&self, x: &[usize], y: &[usize]) -> Result<f64> {
        disjoint(x, y)?;
        Ok(0.5 * (x.len() as f64 * LN_2PIE + self.cov.conditional_log_det(x, y)?))
    }

    /// `I(x; y) = 0.5 * (ln det S_xx - ln det S_x|y)`.
    pub fn mutual_information(&self, x: &[usize], y: &[usize]) -> Result<f64> {
        disjoint(x, y)?;
        if x.is_empty() || y.is_empty() {
            return Ok(0.0);
        }
        Ok(0.5 * (self.cov.block_log_det(x)? - self.cov.conditional_log_det(x, y)?))
    }
}

fn disjoint(x: &[usize], y: &[usize]) -> Result<()> {
    if x.iter().any(|i| y.contains(i)) {
        return Err(Error::Invalid("variable sets must be disjoint".into()));
    }
    Ok(())
}

/// Information reduction rate `gamma(x | y) = I(x; y) / H(x)`.
///
/// Fails when the sets overlap or are empty, when `H(x) <= 0` (the ratio is
/// then meaningless), and when `y` determines `x` (singular conditional).
pub fn gaussian_irr(model: &GaussianBlockModel, x: &[usize], y: &[usize]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Invalid("both variable sets must be nonempty".into()));
    }
    let hx = model.entropy(x)?;
    if !(hx > 0.0) {
        return Err(Error::Invalid(format!("marginal entropy {hx} is not positive; rescale the model")));
    }
    Ok(model.mutual_information(x, y)? / hx)
}

/// Which appendix statement a check exercises.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Statement {
    /// Part of the object informs the rest of the object.
    WithinObject,
    /// Part of the object does not inform part of the background.
    AcrossBoundary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StatementCheck {
    pub statement: Statement,
    pub subset: Vec<usize>,
    pub other: Vec<usize>,
    pub mutual_information: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StatementReport {
    pub checks: Vec<StatementCheck>,
    /// Reasons for checks that could not be formed.
    pub skipped: Vec<String>,
}

impl StatementReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn count(&self, statement: Statement) -> usize {
        self.checks.iter().filter(|c| c.statement == statement).count()
    }
}

/// Thresholds of [`verify_statements`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StatementTolerances {
    /// Within-object mutual information must exceed this.
    pub min_within: f64,
    /// Cross-boundary mutual information must not exceed this.
    pub max_across: f64,
    /// Number of random (fg subset, bg subset) pairs.
    pub across_pairs: usize,
    pub seed: u64,
}

impl Default for StatementTolerances {
    fn default() -> Self {
        Self { min_within: 0.01, max_across: 1e-9, across_pairs: 64, seed: 0 }
    }
}

fn subset_of(set: &[usize], bits: u64) -> Vec<usize> {
    set.iter().enumerate().filter(|(k, _)| bits >> k & 1 == 1).map(|(_, &v)| v).collect()
}

/// Checks both appendix statements in closed form.
///
/// Within the object every nonempty proper subset must share information
/// with the rest of the object (up to 12 foreground variables are
/// enumerated exhaustively). Across the boundary, random nonempty subsets of
/// foreground and background must share none.
pub fn verify_statements(model: &GaussianBlockModel, tol: &StatementTolerances) -> Result<StatementReport> {
    let mut report = StatementReport::default();
    let fg = &model.foreground;
    let bg = &model.background;
    if fg.len() < 2 {
        report.skipped.push(format!("within-object checks need two foreground variables, found {}", fg.len()));
    } else if fg.len() > 12 {
        return Err(Error::Invalid("at most 12 foreground variables can be enumerated".into()));
    } else {
        let full = (1u64 << fg.len()) - 1;
        for bits in 1..full {
            let subset = subset_of(fg, bits);
            let other = subset_of(fg, full ^ bits);
            let mi = model.mutual_information(&subset, &other)?;
            report.checks.push(StatementCheck {
                statement: Statement::WithinObject,
                passed: mi > tol.min_within,
                subset,
                other,
                mutual_information: mi,
            });
        }
    }
    if fg.is_empty() || bg.is_empty() {
        report.skipped.push("cross-boundary checks need foreground and background variables".into());
        return Ok(report);
    }
    let mut rng = seeded(tol.seed, 0);
    let pick = |rng: &mut rand_chacha::ChaCha8Rng, set: &[usize]| -> Vec<usize> {
        use rand::Rng;
        let k = rng.random_range(1..=set.len());
        let mut idx: Vec<usize> = sample(rng, set.len(), k).into_iter().map(|i| set[i]).collect();
        idx.sort_unstable();
        idx
    };
    for _ in 0..tol.across_pairs {
        let subset = pick(&mut rng, fg);
        let other = pick(&mut rng, bg);
        let mi = model.mutual_information(&subset, &other)?;
        report.checks.push(StatementCheck {
            statement: Statement::AcrossBoundary,
            passed: mi.abs() <= tol.max_across,
            subset,
            other,
            mutual_information: mi,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests;
