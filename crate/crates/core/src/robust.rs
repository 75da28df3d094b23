//! Least-favorable (Huber-type) feature models under ε-contamination.
//!
//! Intermediate stages use cheap, imperfect features. Their nominal PMFs are
//! replaced by a least-favorable pair whose likelihood ratio is clipped to a band
//! `[l_L, l_U]`. The band is fixed by requiring both transformed PMFs to be
//! normalized; it is found with a nested bisection (outer on `l_U`, inner on
//! `l_L`), with a zooming grid search as fallback.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{posterior_from_ratio, FeatureModel, UncertaintyParams};

/// Normalization tolerance the band solver aims for.
pub const BAND_TOLERANCE: f64 = 1e-8;

/// Residuals above this are reported as an infeasible band instead of renormalized away.
const BAND_HARD_LIMIT: f64 = 1e-6;

/// Clip points of the likelihood ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustBand {
    pub lower: f64,
    pub upper: f64,
}

impl RobustBand {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower >= 0.0 && upper >= lower) {
            return Err(Error::Input(format!("invalid band [{lower}, {upper}]")));
        }
        Ok(Self { lower, upper })
    }

    /// The range of likelihood ratios a model can actually produce.
    pub fn of_model(model: &FeatureModel) -> Self {
        let (lower, upper) = model.ratio_range();
        Self { lower, upper }
    }
}

/// Interval `[π_L, π_U]` of reachable posteriors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeliefInterval {
    pub lo: f64,
    pub hi: f64,
}

impl BeliefInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Input(format!("invalid belief interval [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn point(pi: f64) -> Self {
        Self { lo: pi, hi: pi }
    }

    pub fn full() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    pub fn contains(&self, pi: f64) -> bool {
        self.lo <= pi && pi <= self.hi
    }

    pub fn union(&self, other: &Self) -> Self {
        Self {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.max(self.lo).min(self.hi)
    }
}

/// Propagates a prior interval through one stage: the low end through `l_L`,
/// the high end through `l_U`.
pub fn posterior_bounds(prior: BeliefInterval, band: RobustBand) -> BeliefInterval {
    BeliefInterval {
        lo: posterior_from_ratio(prior.lo, band.lower),
        hi: posterior_from_ratio(prior.hi, band.upper),
    }
}

/// Output of [`least_favorable`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeastFavorable {
    pub model: FeatureModel,
    pub band: RobustBand,
    /// `|Σ q0 − 1|` before the final renormalization.
    pub residual_null: f64,
    /// `|Σ q1 − 1|` before the final renormalization.
    pub residual_target: f64,
}

#[derive(Debug, Clone, Copy)]
struct Coefficients {
    v_low: f64,
    w_low: f64,
    v_high: f64,
    w_high: f64,
    keep0: f64,
    keep1: f64,
}

impl Coefficients {
    fn new(u: &UncertaintyParams) -> Result<Self> {
        u.validate()?;
        if u.eps0 >= 1.0 || u.eps1 >= 1.0 {
            return Err(Error::DegenerateContamination {
                eps0: u.eps0,
                eps1: u.eps1,
            });
        }
        let keep0 = 1.0 - u.eps0;
        let keep1 = 1.0 - u.eps1;
        Ok(Self {
            v_low: (u.eps1 + u.nu1) / keep1,
            w_low: u.nu0 / keep0,
            v_high: (u.eps0 + u.nu0) / keep0,
            w_high: u.nu1 / keep1,
            keep0,
            keep1,
        })
    }

    fn low_active(&self) -> bool {
        self.v_low + self.w_low > 0.0
    }

    fn high_active(&self) -> bool {
        self.v_high + self.w_high > 0.0
    }

    /// Transformed masses `(q0(y), q1(y))` for one symbol.
    #[inline]
    fn masses(&self, p0: f64, p1: f64, l: f64, lower: f64, upper: f64) -> (f64, f64) {
        if self.low_active() && l < lower {
            let m = (self.v_low * p0 + self.w_low * p1) / (self.v_low + self.w_low * lower);
            (self.keep0 * m, self.keep1 * lower * m)
        } else if self.high_active() && l > upper {
            let m = (self.w_high * p0 + self.v_high * p1) / (self.w_high + self.v_high * upper);
            (self.keep0 * m, self.keep1 * upper * m)
        } else {
            (self.keep0 * p0, self.keep1 * p1)
        }
    }
}

struct BandProblem<'a> {
    model: &'a FeatureModel,
    coef: Coefficients,
    lmin: f64,
    lmax: f64,
}

impl BandProblem<'_> {
    fn sums(&self, lower: f64, upper: f64) -> (f64, f64) {
        let (p0, p1) = (self.model.p0(), self.model.p1());
        let mut s = (0.0, 0.0);
        for y in 0..p0.len() {
            if p0[y] == 0.0 && p1[y] == 0.0 {
                continue;
            }
            let (a, b) = self.coef.masses(p0[y], p1[y], self.model.ratio(y), lower, upper);
            s.0 += a;
            s.1 += b;
        }
        s
    }

    fn residual(&self, lower: f64, upper: f64) -> f64 {
        let (s0, s1) = self.sums(lower, upper);
        (s0 - 1.0).abs().max((s1 - 1.0).abs())
    }

    fn upper_from(&self, s: f64) -> f64 {
        if s >= 1.0 {
            f64::INFINITY
        } else {
            s / (1.0 - s)
        }
    }

    fn s_range(&self) -> (f64, f64) {
        let hi = if self.lmax.is_finite() {
            self.lmax / (1.0 + self.lmax)
        } else {
            1.0 - 1e-15
        };
        (0.5, hi)
    }

    /// `l_L` solving the target normalization for fixed `l_U`.
    fn inner(&self, upper: f64) -> f64 {
        if !self.coef.low_active() {
            return self.lmin;
        }
        let f = |lower: f64| self.sums(lower, upper).1 - 1.0;
        let (mut a, mut b) = (self.lmin, upper.min(1.0));
        if f(a) >= 0.0 {
            return a;
        }
        if f(b) <= 0.0 {
            return b;
        }
        bisect(&mut a, &mut b, |x| f(x) < 0.0);
        0.5 * (a + b)
    }

    fn nested(&self) -> (f64, f64) {
        if !self.coef.high_active() {
            let upper = self.lmax;
            return (self.inner(upper), upper);
        }
        // S0 decreases as l_U grows.
        let g = |s: f64| {
            let upper = self.upper_from(s);
            let lower = self.inner(upper);
            self.sums(lower, upper).0 - 1.0
        };
        let (mut a, mut b) = self.s_range();
        if g(a) <= 0.0 {
            let upper = self.upper_from(a);
            return (self.inner(upper), upper);
        }
        if g(b) >= 0.0 {
            let upper = self.upper_from(b);
            return (self.inner(upper), upper);
        }
        bisect(&mut a, &mut b, |s| g(s) > 0.0);
        let upper = self.upper_from(0.5 * (a + b));
        (self.inner(upper), upper)
    }

    /// Zooming grid search minimizing the larger of the two residuals.
    fn scan(&self) -> (f64, f64) {
        const N: usize = 64;
        let (mut x0, mut x1) = (self.lmin, 1.0);
        let (mut s0, mut s1) = if self.coef.high_active() {
            self.s_range()
        } else {
            let s = self.lmax / (1.0 + self.lmax);
            (s, s)
        };
        if !self.coef.low_active() {
            x1 = x0;
        }
        let mut best = (x0, s0, f64::INFINITY);
        for _ in 0..40 {
            for i in 0..=N {
                let x = x0 + (x1 - x0) * i as f64 / N as f64;
                for j in 0..=N {
                    let s = s0 + (s1 - s0) * j as f64 / N as f64;
                    let upper = self.upper_from(s).min(self.lmax);
                    let r = self.residual(x, upper);
                    if r < best.2 {
                        best = (x, s, r);
                    }
                }
            }
            let (dx, ds) = ((x1 - x0) / N as f64 * 2.0, (s1 - s0) / N as f64 * 2.0);
            let (lo_x, hi_x) = (self.lmin, 1.0);
            x0 = (best.0 - dx).max(lo_x);
            x1 = (best.0 + dx).min(hi_x);
            let (lo_s, hi_s) = self.s_range();
            s0 = (best.1 - ds).max(lo_s.min(s0));
            s1 = (best.1 + ds).min(hi_s.max(s1));
            if best.2 <= BAND_TOLERANCE * 1e-3 {
                break;
            }
        }
        (best.0, self.upper_from(best.1).min(self.lmax))
    }
}

/// Shrinks `[a, b]` keeping `left(a) == true` and `left(b) == false`.
fn bisect(a: &mut f64, b: &mut f64, left: impl Fn(f64) -> bool) {
    for _ in 0..200 {
        let m = 0.5 * (*a + *b);
        if m <= *a || m >= *b {
            break;
        }
        if left(m) {
            *a = m;
        } else {
            *b = m;
        }
    }
}

/// Solves for the band `(l_L, l_U)` under which both transformed PMFs normalize.
pub fn solve_band(model: &FeatureModel, u: &UncertaintyParams) -> Result<RobustBand> {
    let coef = Coefficients::new(u)?;
    let (lmin, lmax) = model.ratio_range();
    if u.is_zero() || lmin >= lmax {
        return Ok(RobustBand {
            lower: lmin,
            upper: lmax,
        });
    }
    let problem = BandProblem {
        model,
        coef,
        lmin,
        lmax,
    };
    let (mut lower, mut upper) = problem.nested();
    if problem.residual(lower, upper) > BAND_TOLERANCE {
        log::debug!("nested bisection missed tolerance; falling back to grid search");
        let (l, h) = problem.scan();
        if problem.residual(l, h) < problem.residual(lower, upper) {
            lower = l;
            upper = h;
        }
    }
    let (s0, s1) = problem.sums(lower, upper);
    if (s0 - 1.0).abs().max((s1 - 1.0).abs()) > BAND_HARD_LIMIT {
        return Err(Error::InfeasibleBand {
            residual_null: (s0 - 1.0).abs(),
            residual_target: (s1 - 1.0).abs(),
        });
    }
    Ok(RobustBand { lower, upper })
}

/// Replaces a nominal model by its least-favorable pair.
pub fn least_favorable(model: &FeatureModel, u: &UncertaintyParams) -> Result<LeastFavorable> {
    let coef = Coefficients::new(u)?;
    let band = solve_band(model, u)?;
    let (lmin, lmax) = model.ratio_range();
    if u.is_zero() || lmin >= lmax {
        return Ok(LeastFavorable {
            model: model.clone(),
            band,
            residual_null: 0.0,
            residual_target: 0.0,
        });
    }
    let q = model.alphabet_size();
    let (mut q0, mut q1) = (vec![0.0; q], vec![0.0; q]);
    for y in 0..q {
        let (p0, p1) = (model.p0()[y], model.p1()[y]);
        if p0 == 0.0 && p1 == 0.0 {
            continue;
        }
        let (a, b) = coef.masses(p0, p1, model.ratio(y), band.lower, band.upper);
        q0[y] = a;
        q1[y] = b;
    }
    let s0: f64 = q0.iter().sum();
    let s1: f64 = q1.iter().sum();
    q0.iter_mut().for_each(|x| *x /= s0);
    q1.iter_mut().for_each(|x| *x /= s1);
    Ok(LeastFavorable {
        model: FeatureModel::new(q0, q1)?,
        band,
        residual_null: (s0 - 1.0).abs(),
        residual_target: (s1 - 1.0).abs(),
    })
}
