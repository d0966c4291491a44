//! Propensity (binary regression) and outcome (least squares) model fitting.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{Continuous, ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;

use crate::datagen::expit;
use crate::error::{Error, Result};
use crate::linalg::{weighted_least_squares, LeastSquares};

pub const MAX_ITERATIONS: usize = 100;
pub const CONVERGENCE_TOLERANCE: f64 = 1e-10;
/// Floor on `pi (1 - pi)` and on working weights inside the scoring loop only.
pub const WEIGHT_FLOOR: f64 = 1e-12;
/// Relative log-likelihood drop still accepted as a non-decrease.
const LL_ROUNDING: f64 = 1e-13;
const MAX_HALVINGS: usize = 40;

/// Inverse link for binary regression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Link {
    Logit,
    /// Student-t CDF with the given degrees of freedom.
    Robit(f64),
}

impl Link {
    fn t_dist(df: f64) -> StudentsT {
        StudentsT::new(0.0, 1.0, df).expect("robit degrees of freedom must be positive")
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Link::Logit => Ok(()),
            Link::Robit(df) if df > 0.0 && df.is_finite() => Ok(()),
            Link::Robit(df) => Err(Error::Config(format!("robit degrees of freedom {df}"))),
        }
    }

    /// P(t = 1) at linear predictor `eta`.
    pub fn inverse(&self, eta: f64) -> f64 {
        match *self {
            Link::Logit => expit(eta),
            Link::Robit(df) => Self::t_dist(df).cdf(eta),
        }
    }

    /// `(ln P(t=1), ln P(t=0), density)` at `eta`, computed from both tails.
    fn evaluate(&self, eta: f64, dist: Option<&StudentsT>) -> (f64, f64, f64) {
        match (self, dist) {
            (Link::Robit(_), Some(d)) => {
                let lo = d.cdf(eta);
                let hi = d.cdf(-eta);
                (lo.ln(), hi.ln(), d.pdf(eta))
            }
            _ => {
                // ln expit(eta) = -softplus(-eta)
                let lp = -softplus(-eta);
                let lq = -softplus(eta);
                let p = expit(eta);
                (lp, lq, p * (1.0 - p))
            }
        }
    }

    fn dist(&self) -> Option<StudentsT> {
        match *self {
            Link::Logit => None,
            Link::Robit(df) => Some(Self::t_dist(df)),
        }
    }
}

fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

#[derive(Debug, Clone)]
pub struct PropensityFit {
    /// Coefficients, one per design column; dropped columns hold 0.
    pub alpha: DVector<f64>,
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
    pub link: Link,
    pub eta: Vec<f64>,
    pub pi: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Log-likelihood after each accepted iteration, starting at alpha = 0.
    pub trace: Vec<f64>,
    /// Set when the fit failed to converge while `|alpha|` kept growing.
    pub diverging: bool,
    /// Inverse expected information over the kept columns.
    covariance: DMatrix<f64>,
}

impl PropensityFit {
    /// Standard errors aligned with `alpha`; dropped columns report NaN.
    pub fn std_errors(&self) -> Vec<f64> {
        let mut se = vec![f64::NAN; self.alpha.len()];
        for (pos, &col) in self.kept.iter().enumerate() {
            se[col] = self.covariance[(pos, pos)].sqrt();
        }
        se
    }

    /// `X^T (t - pi)` at the fitted coefficients.
    pub fn score(&self, x: &DMatrix<f64>, t: &[bool]) -> DVector<f64> {
        let resid = DVector::from_iterator(
            t.len(),
            t.iter().zip(&self.pi).map(|(&ti, &p)| f64::from(u8::from(ti)) - p),
        );
        x.transpose() * resid
    }
}

fn log_likelihood(link: &Link, dist: Option<&StudentsT>, eta: &[f64], t: &[bool]) -> f64 {
    eta.iter()
        .zip(t)
        .map(|(&e, &ti)| {
            let (lp, lq, _) = link.evaluate(e, dist);
            if ti {
                lp
            } else {
                lq
            }
        })
        .sum()
}

fn linear_predictor(x: &DMatrix<f64>, alpha: &DVector<f64>) -> Vec<f64> {
    (x * alpha).iter().copied().collect()
}

/// Maximum-likelihood binary regression of `t` on the columns of `x`.
///
/// `x` must already contain any intercept column. Iterations are Fisher
/// scoring steps solved as weighted least squares (for the logit link these
/// are exactly Newton steps), starting from `alpha = 0`, with step-halving
/// whenever the log-likelihood would decrease.
pub fn fit_binary(x: &DMatrix<f64>, t: &[bool], link: Link) -> Result<PropensityFit> {
    link.validate()?;
    let (n, p) = x.shape();
    if t.len() != n {
        return Err(Error::Dimension(format!("{n} design rows, {} indicators", t.len())));
    }
    let ones = t.iter().filter(|&&v| v).count();
    if ones == 0 {
        return Err(Error::SingleClass(0));
    }
    if ones == n {
        return Err(Error::SingleClass(1));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("propensity design".into()));
    }

    let all = vec![true; n];
    let rank = weighted_least_squares(x, &vec![0.0; n], &all, None)?;
    let kept = rank.kept.clone();
    let dropped = rank.dropped.clone();
    let xk = x.select_columns(&kept);
    let dist = link.dist();

    let mut alpha = DVector::<f64>::zeros(kept.len());
    let mut eta = vec![0.0; n];
    let mut ll = log_likelihood(&link, dist.as_ref(), &eta, t);
    let mut trace = vec![ll];
    let mut norms = vec![0.0];
    let mut converged = false;
    let mut settled = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (w, z) = working_quantities(&link, dist.as_ref(), &eta, t);
        let step = weighted_least_squares(&xk, &z, &all, Some(&w))?;
        let mut candidate = step.coef;
        let mut cand_eta = linear_predictor(&xk, &candidate);
        let mut cand_ll = log_likelihood(&link, dist.as_ref(), &cand_eta, t);
        let mut halvings = 0;
        // decreases at rounding level are not treated as overshoot
        let floor = ll - LL_ROUNDING * ll.abs();
        while !(cand_ll >= floor) && halvings < MAX_HALVINGS {
            candidate = (&alpha + &candidate) * 0.5;
            cand_eta = linear_predictor(&xk, &candidate);
            cand_ll = log_likelihood(&link, dist.as_ref(), &cand_eta, t);
            halvings += 1;
        }
        if !(cand_ll >= floor) {
            // no ascent found along the scoring direction
            converged = true;
            break;
        }
        if cand_ll == 0.0 {
            // likelihood saturated: fitted probabilities are exactly 0/1
            alpha = candidate;
            eta = cand_eta;
            ll = cand_ll;
            trace.push(ll);
            norms.push(alpha.norm());
            break;
        }
        let change = (cand_ll - ll).abs() / cand_ll.abs();
        alpha = candidate;
        eta = cand_eta;
        ll = cand_ll;
        trace.push(ll);
        norms.push(alpha.norm());
        // one extra scoring step after the first small change polishes the
        // score equation to rounding level
        if change < CONVERGENCE_TOLERANCE {
            if settled {
                converged = true;
                break;
            }
            settled = true;
        } else {
            settled = false;
        }
    }

    let diverging = !converged && {
        let tail = &norms[norms.len().saturating_sub(10)..];
        tail.windows(2).all(|w| w[1] > w[0])
    };

    let (w, _) = working_quantities(&link, dist.as_ref(), &eta, t);
    let info: LeastSquares = weighted_least_squares(&xk, &vec![0.0; n], &all, Some(&w))?;
    let covariance = info.unscaled_covariance();

    let mut full = DVector::<f64>::zeros(p);
    for (pos, &col) in kept.iter().enumerate() {
        full[col] = alpha[pos];
    }
    let pi = eta.iter().map(|&e| link.inverse(e)).collect();
    Ok(PropensityFit {
        alpha: full,
        kept,
        dropped,
        link,
        eta,
        pi,
        converged,
        iterations,
        log_likelihood: ll,
        trace,
        diverging,
        covariance,
    })
}

fn working_quantities(
    link: &Link,
    dist: Option<&StudentsT>,
    eta: &[f64],
    t: &[bool],
) -> (Vec<f64>, Vec<f64>) {
    let mut w = Vec::with_capacity(eta.len());
    let mut z = Vec::with_capacity(eta.len());
    for (&e, &ti) in eta.iter().zip(t) {
        let (lp, lq, dens) = link.evaluate(e, dist);
        let p = lp.exp();
        let var = (p * lq.exp()).max(WEIGHT_FLOOR);
        let dens = dens.max(WEIGHT_FLOOR);
        w.push((dens * dens / var).max(WEIGHT_FLOOR));
        z.push(e + (f64::from(u8::from(ti)) - p) / dens);
    }
    (w, z)
}

/// Linear predictors and probabilities for new rows.
pub fn predict_propensity(fit: &PropensityFit, x: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.ncols() != fit.alpha.len() {
        return Err(Error::Dimension(format!(
            "fit has {} coefficients, design has {} columns",
            fit.alpha.len(),
            x.ncols()
        )));
    }
    let eta = linear_predictor(x, &fit.alpha);
    let pi = eta.iter().map(|&e| fit.link.inverse(e)).collect();
    Ok((eta, pi))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkTest {
    pub coefficient: f64,
    pub std_error: f64,
    pub p_value: f64,
}

/// Refits with the centered squared linear predictor as an extra covariate
/// and returns the Wald test of its coefficient.
pub fn link_test(x: &DMatrix<f64>, t: &[bool], base_fit: &PropensityFit) -> Result<LinkTest> {
    if !base_fit.converged {
        return Err(Error::NotConverged("base propensity fit".into()));
    }
    let n = x.nrows();
    let mean = base_fit.eta.iter().sum::<f64>() / n as f64;
    let sq = DVector::from_iterator(n, base_fit.eta.iter().map(|e| (e - mean).powi(2)));
    let p = x.ncols();
    let augmented = x.clone().insert_column(p, 0.0);
    let mut augmented = augmented;
    augmented.set_column(p, &sq);
    let fit = fit_binary(&augmented, t, base_fit.link)?;
    if !fit.converged {
        return Err(Error::NotConverged("augmented propensity fit".into()));
    }
    if fit.dropped.contains(&p) {
        return Err(Error::Config("squared linear predictor is collinear with the design".into()));
    }
    let coefficient = fit.alpha[p];
    let std_error = fit.std_errors()[p];
    let z = coefficient / std_error;
    Ok(LinkTest {
        coefficient,
        std_error,
        p_value: erfc(z.abs() / std::f64::consts::SQRT_2),
    })
}

#[derive(Debug, Clone)]
pub struct LinearFit {
    pub beta: DVector<f64>,
    pub dropped: Vec<usize>,
    /// Predictions for every unit.
    pub fitted: Vec<f64>,
    /// `y - fitted` on the fitting subset, `None` elsewhere.
    pub residuals: Vec<Option<f64>>,
    pub r_squared: f64,
    pub weights: Option<Vec<f64>>,
}

/// Least squares of `y` on `x` over `subset`, optionally weighted.
pub fn fit_linear(
    x: &DMatrix<f64>,
    y: &[f64],
    subset: &[bool],
    weights: Option<&[f64]>,
) -> Result<LinearFit> {
    let ls = weighted_least_squares(x, y, subset, weights)?;
    let fitted: Vec<f64> = linear_predictor(x, &ls.coef);
    let residuals: Vec<Option<f64>> = (0..y.len())
        .map(|i| subset[i].then(|| y[i] - fitted[i]))
        .collect();
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let (mut sw, mut swy) = (0.0, 0.0);
    for i in (0..y.len()).filter(|&i| subset[i]) {
        sw += w(i);
        swy += w(i) * y[i];
    }
    let ybar = swy / sw;
    let tss: f64 = (0..y.len())
        .filter(|&i| subset[i])
        .map(|i| w(i) * (y[i] - ybar).powi(2))
        .sum();
    let r_squared = if tss > 0.0 { 1.0 - ls.rss / tss } else { 1.0 };
    Ok(LinearFit {
        beta: ls.coef,
        dropped: ls.dropped,
        fitted,
        residuals,
        r_squared,
        weights: weights.map(<[f64]>::to_vec),
    })
}
