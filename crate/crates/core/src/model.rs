//! Feature models, posterior arithmetic and the quantized belief grid.
//!
//! Every stage of a detection system observes a discrete feature `y` drawn from
//! `p(y | x)`, `x ∈ {0, 1}`. The belief `π = P(X = 1 | y_1..y_i)` is the state
//! carried between stages; value functions are tabulated on a uniform grid of
//! beliefs and evaluated off-grid by linear interpolation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on PMF normalization accepted by [`FeatureModel::new`].
pub const PMF_TOLERANCE: f64 = 1e-9;

/// Conditional PMF pair `p(y|0)`, `p(y|1)` over a finite alphabet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureModel {
    p0: Vec<f64>,
    p1: Vec<f64>,
}

impl FeatureModel {
    pub fn new(p0: Vec<f64>, p1: Vec<f64>) -> Result<Self> {
        if p0.len() != p1.len() {
            return Err(Error::Input(format!(
                "PMF lengths differ ({} vs {})",
                p0.len(),
                p1.len()
            )));
        }
        if p0.len() < 2 {
            return Err(Error::Input("alphabet size must be at least 2".into()));
        }
        for (name, pmf) in [("p0", &p0), ("p1", &p1)] {
            if pmf.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::Input(format!("{name} has a negative or non-finite entry")));
            }
            let total: f64 = pmf.iter().sum();
            if (total - 1.0).abs() > PMF_TOLERANCE {
                return Err(Error::Input(format!("{name} sums to {total}, expected 1")));
            }
        }
        Ok(Self { p0, p1 })
    }

    /// Builds a model from unnormalized nonnegative weights.
    pub fn from_weights(w0: &[f64], w1: &[f64]) -> Result<Self> {
        let norm = |w: &[f64]| -> Result<Vec<f64>> {
            let total: f64 = w.iter().sum();
            if total.is_nan() || total <= 0.0 || w.iter().any(|x| *x < 0.0 || !x.is_finite()) {
                return Err(Error::Input("weights must be nonnegative with positive sum".into()));
            }
            Ok(w.iter().map(|x| x / total).collect())
        };
        Self::new(norm(w0)?, norm(w1)?)
    }

    /// Two identical PMFs; observing such a feature never moves the belief.
    pub fn uninformative(alphabet: usize) -> Result<Self> {
        let w = vec![1.0; alphabet];
        Self::from_weights(&w, &w)
    }

    pub fn alphabet_size(&self) -> usize {
        self.p0.len()
    }

    pub fn p0(&self) -> &[f64] {
        &self.p0
    }

    pub fn p1(&self) -> &[f64] {
        &self.p1
    }

    /// `p1[y] / p0[y]` with `0/0 = 1` and `x/0 = ∞`. Panics if `y` is out of range.
    #[inline]
    pub fn ratio(&self, y: usize) -> f64 {
        let (a, b) = (self.p1[y], self.p0[y]);
        if b == 0.0 {
            if a == 0.0 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            a / b
        }
    }

    /// Smallest and largest likelihood ratio over symbols with nonzero mass.
    pub fn ratio_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for y in 0..self.alphabet_size() {
            if self.p0[y] == 0.0 && self.p1[y] == 0.0 {
                continue;
            }
            let l = self.ratio(y);
            lo = lo.min(l);
            hi = hi.max(l);
        }
        (lo, hi)
    }

    /// True when the likelihood ratio is nondecreasing in the symbol index.
    pub fn has_monotone_ratio(&self) -> bool {
        let mut last = 0.0f64;
        for y in 0..self.alphabet_size() {
            if self.p0[y] == 0.0 && self.p1[y] == 0.0 {
                continue;
            }
            let l = self.ratio(y);
            if l < last {
                return false;
            }
            last = l;
        }
        true
    }

    /// Posterior after observing `y` from prior `pi`.
    #[inline]
    pub fn posterior(&self, pi: f64, y: usize) -> f64 {
        posterior_from_ratio(pi, self.ratio(y))
    }

    /// Predictive probability of `y` under prior `pi`.
    #[inline]
    pub fn evidence(&self, pi: f64, y: usize) -> f64 {
        self.p1[y] * pi + self.p0[y] * (1.0 - pi)
    }

    fn check_index(&self, y: usize) -> Result<()> {
        if y >= self.alphabet_size() {
            Err(Error::IndexOutOfRange {
                index: y,
                size: self.alphabet_size(),
            })
        } else {
            Ok(())
        }
    }
}

/// Bayes update of a belief by a likelihood ratio.
#[inline]
pub fn posterior_from_ratio(pi: f64, l: f64) -> f64 {
    if pi <= 0.0 {
        0.0
    } else if pi >= 1.0 || l == f64::INFINITY {
        1.0
    } else if l == 0.0 {
        0.0
    } else {
        let num = l * pi;
        num / (num + (1.0 - pi))
    }
}

/// Contamination parameters `(ε0, ε1, ν0, ν1)` of one stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UncertaintyParams {
    pub eps0: f64,
    pub eps1: f64,
    pub nu0: f64,
    pub nu1: f64,
}

impl UncertaintyParams {
    pub fn new(eps0: f64, eps1: f64, nu0: f64, nu1: f64) -> Result<Self> {
        let u = Self { eps0, eps1, nu0, nu1 };
        u.validate()?;
        Ok(u)
    }

    /// Same value for all four parameters.
    pub fn uniform(level: f64) -> Result<Self> {
        Self::new(level, level, level, level)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eps0", self.eps0),
            ("eps1", self.eps1),
            ("nu0", self.nu0),
            ("nu1", self.nu1),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Input(format!("{name}={v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.eps0 == 0.0 && self.eps1 == 0.0 && self.nu0 == 0.0 && self.nu1 == 0.0
    }
}

/// Probability that the target is present.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Belief(f64);

impl Belief {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::Input(format!("belief {value} outside [0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Likelihood ratio `l(y) = p(y|1) / p(y|0)`.
pub fn likelihood_ratio(model: &FeatureModel, y: usize) -> Result<f64> {
    model.check_index(y)?;
    Ok(model.ratio(y))
}

/// Posterior `P(X=1 | y, prior)`.
pub fn posterior_update(prior: Belief, model: &FeatureModel, y: usize) -> Result<Belief> {
    model.check_index(y)?;
    Ok(Belief(model.posterior(prior.0, y)))
}

/// Predictive probability `p(y | prior)`.
pub fn evidence(prior: Belief, model: &FeatureModel, y: usize) -> Result<f64> {
    model.check_index(y)?;
    Ok(model.evidence(prior.0, y))
}

/// Uniform grid `[0, 1/(M-1), ..., 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeliefGrid {
    size: usize,
}

impl BeliefGrid {
    pub const DEFAULT_SIZE: usize = 1001;

    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::Input(format!("grid size {size} must be at least 2")));
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn step(&self) -> f64 {
        1.0 / (self.size - 1) as f64
    }

    #[inline]
    pub fn point(&self, j: usize) -> f64 {
        j as f64 / (self.size - 1) as f64
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.size).map(|j| self.point(j))
    }

    /// Index of the grid point nearest to `pi`.
    pub fn nearest(&self, pi: f64) -> usize {
        let x = (pi.clamp(0.0, 1.0) * (self.size - 1) as f64).round();
        x as usize
    }

    /// Tabulates `f` at every grid point.
    pub fn tabulate(&self, f: impl FnMut(f64) -> f64) -> BeliefTable {
        BeliefTable {
            grid: *self,
            values: self.points().map(f).collect(),
        }
    }
}

impl Default for BeliefGrid {
    fn default() -> Self {
        Self {
            size: Self::DEFAULT_SIZE,
        }
    }
}

/// A function of the belief sampled on a [`BeliefGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefTable {
    grid: BeliefGrid,
    values: Vec<f64>,
}

impl BeliefTable {
    pub fn new(grid: BeliefGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.size() {
            return Err(Error::Input(format!(
                "table has {} values for a grid of {}",
                values.len(),
                grid.size()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> BeliefGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Piecewise-linear interpolation; exact at grid points.
    #[inline]
    pub fn interpolate(&self, pi: f64) -> f64 {
        let n = self.values.len();
        let x = pi.clamp(0.0, 1.0) * (n - 1) as f64;
        let r = x.round();
        if (x - r).abs() < 1e-9 {
            return self.values[r as usize];
        }
        let j = (x.floor() as usize).min(n - 2);
        let t = x - j as f64;
        (1.0 - t) * self.values[j] + t * self.values[j + 1]
    }

    /// Discrete concavity: every interior value is at least the mean of its neighbours.
    pub fn is_concave(&self, tol: f64) -> bool {
        self.values.windows(3).all(|w| w[1] >= 0.5 * (w[0] + w[2]) - tol)
    }
}

/// Free-function form of [`BeliefTable::interpolate`].
pub fn interpolate(table: &BeliefTable, pi: Belief) -> f64 {
    table.interpolate(pi.value())
}
