//! Estimators of the population mean from a dataset with missing outcomes.
//!
//! Every estimator takes the observed data plus whatever model output it needs
//! (estimated propensities, an outcome fit, or an outcome design matrix) and
//! returns an [`EstimateResult`]. None of them trims or clamps weights; the
//! largest respondent weight is reported as a diagnostic instead.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::datagen::{logit, Dataset};
use crate::error::{Error, Result};
use crate::glm::{fit_linear, LinearFit};
use crate::linalg::weighted_least_squares;

/// Which population a stratified or weighted estimate targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// The full population.
    #[default]
    Pop,
    /// Nonrespondents, recombined with the respondent mean.
    Nr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcVariant {
    Pop,
    PopNormalized,
    Nr,
    Strat(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    QuintileDummies(usize),
    InversePropensity,
    LinearSplineQuartiles,
    QuadraticSplineMedian,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub max_weight: Option<f64>,
    pub min_respondent_pi: Option<f64>,
    /// Merges performed to give every occupied stratum a respondent.
    pub collapsed_strata: usize,
    /// Cross-classified cells whose mean was imputed.
    pub imputed_cells: usize,
    pub normalized: bool,
    /// Design columns dropped as collinear.
    pub dropped_columns: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub method: String,
    pub mu_hat: f64,
    pub mu0_hat: Option<f64>,
    pub diagnostics: Diagnostics,
}

impl EstimateResult {
    fn new(method: impl Into<String>, mu_hat: f64) -> Self {
        EstimateResult {
            method: method.into(),
            mu_hat,
            mu0_hat: None,
            diagnostics: Diagnostics::default(),
        }
    }
}

// ---------------------------------------------------------------------------
// Stratification

/// Quantile-based strata over a score.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumAssignment {
    pub strata: usize,
    pub cutpoints: Vec<f64>,
    /// Zero-based stratum of each unit.
    pub labels: Vec<usize>,
}

impl StratumAssignment {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.strata];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// Quantile by linear interpolation between order statistics of sorted data
/// (position `(n - 1) p`).
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * prob;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

fn sorted_copy(score: &[f64]) -> Result<Vec<f64>> {
    if score.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("stratifying score".into()));
    }
    let mut s = score.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Assigns unit `i` to stratum `s` iff `score_i` lies in `(q_{s-1}, q_s]`,
/// where `q_s` is the `s/S` sample quantile over all units.
pub fn make_strata(score: &[f64], strata: usize) -> Result<StratumAssignment> {
    if strata == 0 || score.len() < strata {
        return Err(Error::InvalidStrata(strata));
    }
    let sorted = sorted_copy(score)?;
    if strata > 1 && sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::DegenerateStratification { strata });
    }
    let cutpoints: Vec<f64> = (1..strata)
        .map(|s| quantile_sorted(&sorted, s as f64 / strata as f64))
        .collect();
    let labels = score
        .iter()
        .map(|&v| cutpoints.partition_point(|&q| q < v))
        .collect();
    Ok(StratumAssignment {
        strata,
        cutpoints,
        labels,
    })
}

/// Contiguous groups of strata after merging respondent-free strata.
#[derive(Debug, Clone)]
struct Grouping {
    /// Group index of each original stratum.
    group_of: Vec<usize>,
    groups: usize,
    merges: usize,
}

/// Merges every occupied stratum lacking respondents into its neighbour on
/// the side of the median stratum, repeating until none remain.
fn collapse_strata(assign: &StratumAssignment, t: &[bool]) -> Result<Grouping> {
    let s = assign.strata;
    let mut units = vec![0usize; s];
    let mut resp = vec![0usize; s];
    for (&l, &ti) in assign.labels.iter().zip(t) {
        units[l] += 1;
        resp[l] += usize::from(ti);
    }
    // ranges of original strata, inclusive
    let mut ranges: Vec<(usize, usize, usize, usize)> =
        (0..s).map(|k| (k, k, units[k], resp[k])).collect();
    let center = (s as f64 - 1.0) / 2.0;
    let mut merges = 0;
    loop {
        let Some(pos) = ranges.iter().position(|r| r.2 > 0 && r.3 == 0) else {
            break;
        };
        if ranges.len() == 1 {
            return Err(Error::EmptyStratum);
        }
        let (lo, hi, _, _) = ranges[pos];
        let mid = (lo + hi) as f64 / 2.0;
        let other = if pos + 1 < ranges.len() && (mid <= center || pos == 0) {
            pos + 1
        } else {
            pos - 1
        };
        let (a, b) = (pos.min(other), pos.max(other));
        let merged = (
            ranges[a].0,
            ranges[b].1,
            ranges[a].2 + ranges[b].2,
            ranges[a].3 + ranges[b].3,
        );
        ranges[a] = merged;
        ranges.remove(b);
        merges += 1;
    }
    let mut group_of = vec![0; s];
    for (g, r) in ranges.iter().enumerate() {
        for k in r.0..=r.1 {
            group_of[k] = g;
        }
    }
    Ok(Grouping {
        group_of,
        groups: ranges.len(),
        merges,
    })
}

/// Per-group unit counts, nonrespondent counts and respondent means of `values`.
struct GroupMeans {
    units: Vec<usize>,
    nonresp: Vec<usize>,
    mean: Vec<f64>,
}

fn group_means(labels: &[usize], grouping: &Grouping, t: &[bool], values: &[f64]) -> GroupMeans {
    let g = grouping.groups;
    let mut units = vec![0usize; g];
    let mut nonresp = vec![0usize; g];
    let mut resp = vec![0usize; g];
    let mut sum = vec![0.0; g];
    for i in 0..labels.len() {
        let k = grouping.group_of[labels[i]];
        units[k] += 1;
        if t[i] {
            resp[k] += 1;
            sum[k] += values[i];
        } else {
            nonresp[k] += 1;
        }
    }
    let mean = sum
        .iter()
        .zip(&resp)
        .map(|(&s, &r)| if r > 0 { s / r as f64 } else { 0.0 })
        .collect();
    GroupMeans {
        units,
        nonresp,
        mean,
    }
}

// ---------------------------------------------------------------------------
// Helpers

fn respondent_mean(data: &Dataset) -> Result<f64> {
    let (sum, count) = data
        .y
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        return Err(Error::NoRespondents);
    }
    Ok(sum / count as f64)
}

fn check_len(what: &str, len: usize, n: usize) -> Result<()> {
    if len != n {
        return Err(Error::Dimension(format!("{what} has length {len}, expected {n}")));
    }
    Ok(())
}

/// Inverse-propensity weights, zero for nonrespondents.
struct Weights {
    w: Vec<f64>,
    max: f64,
    min_pi: f64,
}

fn inverse_weights(data: &Dataset, pi_hat: &[f64]) -> Result<Weights> {
    check_len("pi_hat", pi_hat.len(), data.n())?;
    let mut w = vec![0.0; data.n()];
    let mut max = 0.0f64;
    let mut min_pi = f64::INFINITY;
    let mut any = false;
    for i in 0..data.n() {
        if !data.t[i] {
            continue;
        }
        any = true;
        let p = pi_hat[i];
        let wi = 1.0 / p;
        if !(p > 0.0) || !wi.is_finite() {
            return Err(Error::InfiniteWeight { index: i });
        }
        w[i] = wi;
        max = max.max(wi);
        min_pi = min_pi.min(p);
    }
    if !any {
        return Err(Error::NoRespondents);
    }
    Ok(Weights { w, max, min_pi })
}

fn weighted_respondent_mean(data: &Dataset, w: &[f64], values: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in (0..data.n()).filter(|&i| data.t[i]) {
        num += w[i] * values[i];
        den += w[i];
    }
    num / den
}

/// `r1 * ybar1 + r0 * mu0`, or `ybar1` when nobody is missing.
fn combine_nr(data: &Dataset, ybar1: f64, mu0: f64) -> f64 {
    let n = data.n() as f64;
    let r1 = data.n_respondents() as f64 / n;
    let r0 = data.n_nonrespondents() as f64 / n;
    if data.n_nonrespondents() == 0 {
        ybar1
    } else {
        r1 * ybar1 + r0 * mu0
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn residuals_or_zero(fit: &LinearFit) -> Vec<f64> {
    fit.residuals.iter().map(|r| r.unwrap_or(0.0)).collect()
}

// ---------------------------------------------------------------------------
// Estimators

/// Mean of the observed outcomes.
pub fn naive_mean(data: &Dataset) -> Result<EstimateResult> {
    Ok(EstimateResult::new("naive", respondent_mean(data)?))
}

/// Respondents reweighted by `1 / pi_hat`, weights normalized to sum to one.
pub fn ipw_pop(data: &Dataset, pi_hat: &[f64]) -> Result<EstimateResult> {
    let w = inverse_weights(data, pi_hat)?;
    let y = data.y_or_nan();
    let mut r = EstimateResult::new("ipw-pop", weighted_respondent_mean(data, &w.w, &y));
    r.diagnostics.max_weight = Some(w.max);
    r.diagnostics.min_respondent_pi = Some(w.min_pi);
    r.diagnostics.normalized = true;
    Ok(r)
}

/// Respondents reweighted by `(1 - pi_hat) / pi_hat` toward the nonrespondents.
pub fn ipw_nr(data: &Dataset, pi_hat: &[f64]) -> Result<EstimateResult> {
    let base = inverse_weights(data, pi_hat)?;
    let ybar1 = respondent_mean(data)?;
    if data.n_nonrespondents() == 0 {
        let mut r = EstimateResult::new("ipw-nr", ybar1);
        r.diagnostics.min_respondent_pi = Some(base.min_pi);
        return Ok(r);
    }
    let y = data.y_or_nan();
    let nr: Vec<f64> = (0..data.n()).map(|i| base.w[i] * (1.0 - pi_hat[i])).collect();
    let den: f64 = (0..data.n()).filter(|&i| data.t[i]).map(|i| nr[i]).sum();
    if !(den > 0.0) {
        return Err(Error::ZeroNonresponseWeights);
    }
    let mu0 = weighted_respondent_mean(data, &nr, &y);
    let mut r = EstimateResult::new("ipw-nr", combine_nr(data, ybar1, mu0));
    r.mu0_hat = Some(mu0);
    r.diagnostics.max_weight = Some(nr.iter().copied().fold(0.0, f64::max));
    r.diagnostics.min_respondent_pi = Some(base.min_pi);
    r.diagnostics.normalized = true;
    Ok(r)
}

/// Share-weighted respondent means over strata of `pi_hat`.
pub fn strat_pi(
    data: &Dataset,
    pi_hat: &[f64],
    strata: usize,
    target: Target,
) -> Result<EstimateResult> {
    check_len("pi_hat", pi_hat.len(), data.n())?;
    let ybar1 = respondent_mean(data)?;
    let assign = make_strata(pi_hat, strata)?;
    let grouping = collapse_strata(&assign, &data.t)?;
    let gm = group_means(&assign.labels, &grouping, &data.t, &data.y_or_nan());
    let n = data.n() as f64;
    let mut r = match target {
        Target::Pop => {
            let mu: f64 = (0..grouping.groups)
                .map(|g| gm.units[g] as f64 / n * gm.mean[g])
                .sum();
            EstimateResult::new("strat-pi", mu)
        }
        Target::Nr => {
            let n0 = data.n_nonrespondents();
            let mu0 = (n0 > 0).then(|| {
                (0..grouping.groups)
                    .map(|g| gm.nonresp[g] as f64 / n0 as f64 * gm.mean[g])
                    .sum::<f64>()
            });
            let mut r = EstimateResult::new(
                "strat-pi-nr",
                combine_nr(data, ybar1, mu0.unwrap_or(ybar1)),
            );
            r.mu0_hat = mu0;
            r
        }
    };
    r.diagnostics.collapsed_strata = grouping.merges;
    Ok(r)
}

/// Average of outcome-model predictions over all units.
pub fn ols_reg(data: &Dataset, y_fit: &LinearFit) -> Result<EstimateResult> {
    check_len("fitted values", y_fit.fitted.len(), data.n())?;
    let mut r = EstimateResult::new("ols", mean(&y_fit.fitted));
    r.diagnostics.dropped_columns = y_fit.dropped.len();
    Ok(r)
}

/// Axis strata for the cross-classification; a constant score is one stratum.
fn axis_strata(score: &[f64], strata: usize) -> Result<StratumAssignment> {
    match make_strata(score, strata) {
        Err(Error::DegenerateStratification { .. }) => make_strata(score, 1),
        other => other,
    }
}

/// Union-find root.
fn find(parent: &mut [usize], mut a: usize) -> usize {
    while parent[a] != a {
        parent[a] = parent[parent[a]];
        a = parent[a];
    }
    a
}

/// Share-weighted cell means over the cross-classification of `pi_hat` strata
/// (rows) and fitted-value strata (columns). Occupied cells without
/// respondents get their mean from an additive row + column model fitted to
/// the respondent cell means, weighted by respondent counts.
pub fn strat_pi_m(
    data: &Dataset,
    pi_hat: &[f64],
    y_fit: &LinearFit,
    strata: usize,
) -> Result<EstimateResult> {
    check_len("pi_hat", pi_hat.len(), data.n())?;
    check_len("fitted values", y_fit.fitted.len(), data.n())?;
    respondent_mean(data)?;
    let rows = axis_strata(pi_hat, strata)?;
    let cols = axis_strata(&y_fit.fitted, strata)?;
    let y = data.y_or_nan();
    let cells = cross_cells(&rows, &cols, &data.t, &y);
    let (mu, imputed) = cells.estimate(data.n())?;
    let mut r = EstimateResult::new("strat-pim", mu);
    r.diagnostics.imputed_cells = imputed;
    Ok(r)
}

/// Cell tallies for a two-way classification.
#[derive(Debug, Clone)]
pub struct CellTable {
    pub rows: usize,
    pub cols: usize,
    pub units: Vec<usize>,
    pub respondents: Vec<usize>,
    pub sums: Vec<f64>,
}

fn cross_cells(
    rows: &StratumAssignment,
    cols: &StratumAssignment,
    t: &[bool],
    y: &[f64],
) -> CellTable {
    let (nr, nc) = (rows.strata, cols.strata);
    let mut table = CellTable {
        rows: nr,
        cols: nc,
        units: vec![0; nr * nc],
        respondents: vec![0; nr * nc],
        sums: vec![0.0; nr * nc],
    };
    for i in 0..t.len() {
        let c = rows.labels[i] * nc + cols.labels[i];
        table.units[c] += 1;
        if t[i] {
            table.respondents[c] += 1;
            table.sums[c] += y[i];
        }
    }
    table
}

impl CellTable {
    /// Cell means for every occupied cell, imputing respondent-free ones.
    /// Returns the means (`None` for unoccupied cells) and the imputed count.
    pub fn cell_means(&self) -> Result<(Vec<Option<f64>>, usize)> {
        let (nr, nc) = (self.rows, self.cols);
        let mut means: Vec<Option<f64>> = (0..nr * nc)
            .map(|c| (self.respondents[c] > 0).then(|| self.sums[c] / self.respondents[c] as f64))
            .collect();
        let missing: Vec<usize> = (0..nr * nc)
            .filter(|&c| self.units[c] > 0 && self.respondents[c] == 0)
            .collect();
        if missing.is_empty() {
            return Ok((means, 0));
        }

        let observed: Vec<usize> = (0..nr * nc).filter(|&c| self.respondents[c] > 0).collect();
        let mut parent: Vec<usize> = (0..nr + nc).collect();
        for &c in &observed {
            let (a, b) = (find(&mut parent, c / nc), find(&mut parent, nr + c % nc));
            parent[a] = b;
        }
        for &c in &missing {
            let (r, k) = (c / nc, c % nc);
            if find(&mut parent, r) != find(&mut parent, nr + k) {
                return Err(Error::UnfittableCells { row: r, col: k });
            }
        }

        // intercept, row effects 1.., column effects 1.. (reference coding;
        // estimable cell predictions equal those under sum-to-zero coding)
        let p = 1 + (nr - 1) + (nc - 1);
        let design_row = |c: usize| {
            let mut v = vec![0.0; p];
            v[0] = 1.0;
            let (r, k) = (c / nc, c % nc);
            if r > 0 {
                v[r] = 1.0;
            }
            if k > 0 {
                v[nr - 1 + k] = 1.0;
            }
            v
        };
        let m = observed.len();
        let mut x = DMatrix::<f64>::zeros(m, p);
        let mut yv = Vec::with_capacity(m);
        let mut w = Vec::with_capacity(m);
        for (i, &c) in observed.iter().enumerate() {
            for (j, v) in design_row(c).into_iter().enumerate() {
                x[(i, j)] = v;
            }
            yv.push(means[c].unwrap_or_default());
            w.push(self.respondents[c] as f64);
        }
        let fit = weighted_least_squares(&x, &yv, &vec![true; m], Some(&w))?;
        for &c in &missing {
            let pred: f64 = design_row(c)
                .iter()
                .zip(fit.coef.iter())
                .map(|(a, b)| a * b)
                .sum();
            means[c] = Some(pred);
        }
        Ok((means, missing.len()))
    }

    fn estimate(&self, n: usize) -> Result<(f64, usize)> {
        let (means, imputed) = self.cell_means()?;
        let mu = means
            .iter()
            .zip(&self.units)
            .filter(|(_, &u)| u > 0)
            .map(|(m, &u)| u as f64 / n as f64 * m.unwrap_or_default())
            .sum();
        Ok((mu, imputed))
    }
}

/// Outcome-model prediction plus an estimate of the mean residual.
pub fn bc_ols(
    data: &Dataset,
    pi_hat: &[f64],
    y_fit: &LinearFit,
    variant: BcVariant,
) -> Result<EstimateResult> {
    check_len("fitted values", y_fit.fitted.len(), data.n())?;
    let n = data.n() as f64;
    let mu_ols = mean(&y_fit.fitted);
    let resid = residuals_or_zero(y_fit);
    let mut diag = Diagnostics {
        dropped_columns: y_fit.dropped.len(),
        ..Diagnostics::default()
    };
    let (method, mu, mu0) = match variant {
        BcVariant::Pop | BcVariant::PopNormalized => {
            let w = inverse_weights(data, pi_hat)?;
            diag.max_weight = Some(w.max);
            diag.min_respondent_pi = Some(w.min_pi);
            let correction = if variant == BcVariant::Pop {
                (0..data.n()).map(|i| w.w[i] * resid[i]).sum::<f64>() / n
            } else {
                diag.normalized = true;
                weighted_respondent_mean(data, &w.w, &resid)
            };
            let id = if variant == BcVariant::Pop { "bc-ols-pop" } else { "bc-ols-popn" };
            (id, mu_ols + correction, None)
        }
        BcVariant::Nr => {
            let base = inverse_weights(data, pi_hat)?;
            diag.min_respondent_pi = Some(base.min_pi);
            if data.n_nonrespondents() == 0 {
                return Ok(EstimateResult {
                    method: "bc-ols-nr".into(),
                    mu_hat: respondent_mean(data)?,
                    mu0_hat: None,
                    diagnostics: diag,
                });
            }
            let nr: Vec<f64> = (0..data.n()).map(|i| base.w[i] * (1.0 - pi_hat[i])).collect();
            let den: f64 = (0..data.n()).filter(|&i| data.t[i]).map(|i| nr[i]).sum();
            if !(den > 0.0) {
                return Err(Error::ZeroNonresponseWeights);
            }
            diag.max_weight = Some(nr.iter().copied().fold(0.0, f64::max));
            diag.normalized = true;
            let ybar1 = respondent_mean(data)?;
            let n0 = data.n_nonrespondents();
            let pred: f64 = (0..data.n())
                .filter(|&i| !data.t[i])
                .map(|i| y_fit.fitted[i])
                .sum::<f64>()
                / n0 as f64;
            let mu0 = pred + weighted_respondent_mean(data, &nr, &resid);
            ("bc-ols-nr", combine_nr(data, ybar1, mu0), Some(mu0))
        }
        BcVariant::Strat(s) => {
            check_len("pi_hat", pi_hat.len(), data.n())?;
            let assign = make_strata(pi_hat, s)?;
            let grouping = collapse_strata(&assign, &data.t)?;
            let gm = group_means(&assign.labels, &grouping, &data.t, &resid);
            let correction: f64 = (0..grouping.groups)
                .map(|g| gm.units[g] as f64 / n * gm.mean[g])
                .sum();
            diag.collapsed_strata = grouping.merges;
            ("bc-ols-strat", mu_ols + correction, None)
        }
    };
    Ok(EstimateResult {
        method: method.into(),
        mu_hat: mu,
        mu0_hat: mu0,
        diagnostics: diag,
    })
}

/// Prediction average from coefficients fitted with weights `1 / pi_hat`.
pub fn wls_reg(data: &Dataset, design: &DMatrix<f64>, pi_hat: &[f64]) -> Result<EstimateResult> {
    check_len("design", design.nrows(), data.n())?;
    let w = inverse_weights(data, pi_hat)?;
    let fit = fit_linear(design, &data.y_or_nan(), &data.t, Some(&w.w))?;
    let mut r = EstimateResult::new("wls", mean(&fit.fitted));
    r.diagnostics.max_weight = Some(w.max);
    r.diagnostics.min_respondent_pi = Some(w.min_pi);
    r.diagnostics.dropped_columns = fit.dropped.len();
    Ok(r)
}

/// Columns added to the outcome design for the propensity-covariate estimator.
pub fn basis_columns(
    data: &Dataset,
    pi_hat: &[f64],
    eta_hat: &[f64],
    basis: Basis,
) -> Result<(Vec<Vec<f64>>, usize)> {
    let n = data.n();
    check_len("pi_hat", pi_hat.len(), n)?;
    check_len("eta_hat", eta_hat.len(), n)?;
    let plus = |v: f64| v.max(0.0);
    let cols = match basis {
        Basis::QuintileDummies(s) => {
            let assign = make_strata(pi_hat, s)?;
            let grouping = collapse_strata(&assign, &data.t)?;
            let cols = (1..grouping.groups)
                .map(|g| {
                    assign
                        .labels
                        .iter()
                        .map(|&l| f64::from(u8::from(grouping.group_of[l] == g)))
                        .collect()
                })
                .collect();
            return Ok((cols, grouping.merges));
        }
        Basis::InversePropensity => {
            if let Some(i) = pi_hat.iter().position(|&p| !(p > 0.0) || !(1.0 / p).is_finite()) {
                return Err(Error::InfiniteWeight { index: i });
            }
            vec![pi_hat.iter().map(|p| 1.0 / p).collect()]
        }
        Basis::LinearSplineQuartiles => {
            let sorted = sorted_copy(eta_hat)?;
            let knots = [0.25, 0.5, 0.75].map(|q| quantile_sorted(&sorted, q));
            let mut cols = vec![eta_hat.to_vec()];
            for k in knots {
                cols.push(eta_hat.iter().map(|&e| plus(e - k)).collect());
            }
            cols
        }
        Basis::QuadraticSplineMedian => {
            let sorted = sorted_copy(eta_hat)?;
            let med = quantile_sorted(&sorted, 0.5);
            vec![
                eta_hat.to_vec(),
                eta_hat.iter().map(|e| e * e).collect(),
                eta_hat.iter().map(|&e| plus(e - med).powi(2)).collect(),
            ]
        }
    };
    Ok((cols, 0))
}

/// Prediction average from an outcome model augmented with functions of the
/// estimated propensity.
pub fn pi_cov_reg(
    data: &Dataset,
    design: &DMatrix<f64>,
    pi_hat: &[f64],
    eta_hat: &[f64],
    basis: Basis,
) -> Result<EstimateResult> {
    check_len("design", design.nrows(), data.n())?;
    let (extra, merges) = basis_columns(data, pi_hat, eta_hat, basis)?;
    let p = design.ncols();
    let mut aug = design.clone().resize_horizontally(p + extra.len(), 0.0);
    for (j, col) in extra.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            aug[(i, p + j)] = v;
        }
    }
    let fit = fit_linear(&aug, &data.y_or_nan(), &data.t, None)?;
    let id = match basis {
        Basis::QuintileDummies(_) => "pi-cov-dummies",
        Basis::InversePropensity => "pi-cov-invprop",
        Basis::LinearSplineQuartiles => "pi-cov-linspline",
        Basis::QuadraticSplineMedian => "pi-cov-quadspline",
    };
    let mut r = EstimateResult::new(id, mean(&fit.fitted));
    r.diagnostics.collapsed_strata = merges;
    r.diagnostics.dropped_columns = fit.dropped.len();
    if basis == Basis::InversePropensity {
        let w = inverse_weights(data, pi_hat)?;
        r.diagnostics.max_weight = Some(w.max);
        r.diagnostics.min_respondent_pi = Some(w.min_pi);
    }
    Ok(r)
}

// ---------------------------------------------------------------------------
// Configurable selection

fn default_strata() -> usize {
    5
}

/// An estimator with its options, as named in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorSpec {
    NaiveMean,
    IpwPop,
    IpwNr,
    StratPi {
        #[serde(default = "default_strata")]
        strata: usize,
        #[serde(default)]
        target: Target,
    },
    OlsReg,
    StratPiM {
        #[serde(default = "default_strata")]
        strata: usize,
    },
    BcOlsPop,
    BcOlsPopNormalized,
    BcOlsNr,
    BcOlsStrat {
        #[serde(default = "default_strata")]
        strata: usize,
    },
    WlsReg,
    PiCovDummies {
        #[serde(default = "default_strata")]
        strata: usize,
    },
    PiCovInversePropensity,
    PiCovLinearSpline,
    PiCovQuadraticSpline,
}

impl EstimatorSpec {
    /// Every estimator with default options.
    pub fn all() -> Vec<EstimatorSpec> {
        use EstimatorSpec::*;
        vec![
            NaiveMean,
            IpwPop,
            IpwNr,
            StratPi { strata: 5, target: Target::Pop },
            StratPi { strata: 5, target: Target::Nr },
            OlsReg,
            StratPiM { strata: 5 },
            BcOlsPop,
            BcOlsPopNormalized,
            BcOlsNr,
            BcOlsStrat { strata: 5 },
            WlsReg,
            PiCovDummies { strata: 5 },
            PiCovInversePropensity,
            PiCovLinearSpline,
            PiCovQuadraticSpline,
        ]
    }

    pub fn uses_propensity(&self) -> bool {
        !matches!(self, EstimatorSpec::NaiveMean | EstimatorSpec::OlsReg)
    }

    pub fn uses_outcome_model(&self) -> bool {
        !matches!(
            self,
            EstimatorSpec::NaiveMean
                | EstimatorSpec::IpwPop
                | EstimatorSpec::IpwNr
                | EstimatorSpec::StratPi { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        use EstimatorSpec::*;
        match *self {
            StratPi { strata, .. }
            | StratPiM { strata }
            | BcOlsStrat { strata }
            | PiCovDummies { strata }
                if strata == 0 =>
            {
                Err(Error::InvalidStrata(strata))
            }
            _ => Ok(()),
        }
    }

    pub fn evaluate(&self, inputs: &Inputs<'_>) -> Result<EstimateResult> {
        use EstimatorSpec::*;
        let data = inputs.data;
        let pi = || {
            inputs
                .pi_hat
                .ok_or_else(|| Error::Config(format!("{self} needs estimated propensities")))
        };
        let fit = || {
            inputs
                .y_fit
                .ok_or_else(|| Error::Config(format!("{self} needs an outcome fit")))
        };
        let design = || {
            inputs
                .y_design
                .ok_or_else(|| Error::Config(format!("{self} needs an outcome design")))
        };
        let eta = |pi: &[f64]| -> Vec<f64> {
            match inputs.eta_hat {
                Some(e) => e.to_vec(),
                None => pi.iter().map(|&p| logit(p)).collect(),
            }
        };
        match *self {
            NaiveMean => naive_mean(data),
            IpwPop => ipw_pop(data, pi()?),
            IpwNr => ipw_nr(data, pi()?),
            StratPi { strata, target } => strat_pi(data, pi()?, strata, target),
            OlsReg => ols_reg(data, fit()?),
            StratPiM { strata } => strat_pi_m(data, pi()?, fit()?, strata),
            BcOlsPop => bc_ols(data, pi()?, fit()?, BcVariant::Pop),
            BcOlsPopNormalized => bc_ols(data, pi()?, fit()?, BcVariant::PopNormalized),
            BcOlsNr => bc_ols(data, pi()?, fit()?, BcVariant::Nr),
            BcOlsStrat { strata } => bc_ols(data, pi()?, fit()?, BcVariant::Strat(strata)),
            WlsReg => wls_reg(data, design()?, pi()?),
            PiCovDummies { strata } => {
                let p = pi()?;
                pi_cov_reg(data, design()?, p, &eta(p), Basis::QuintileDummies(strata))
            }
            PiCovInversePropensity => {
                let p = pi()?;
                pi_cov_reg(data, design()?, p, &eta(p), Basis::InversePropensity)
            }
            PiCovLinearSpline => {
                let p = pi()?;
                pi_cov_reg(data, design()?, p, &eta(p), Basis::LinearSplineQuartiles)
            }
            PiCovQuadraticSpline => {
                let p = pi()?;
                pi_cov_reg(data, design()?, p, &eta(p), Basis::QuadraticSplineMedian)
            }
        }
    }
}

impl fmt::Display for EstimatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use EstimatorSpec::*;
        match *self {
            NaiveMean => write!(f, "naive"),
            IpwPop => write!(f, "IPW-POP"),
            IpwNr => write!(f, "IPW-NR"),
            StratPi { strata, target: Target::Pop } => write!(f, "strat-pi({strata})"),
            StratPi { strata, target: Target::Nr } => write!(f, "strat-pi-NR({strata})"),
            OlsReg => write!(f, "OLS"),
            StratPiM { strata } => write!(f, "strat-pim({strata})"),
            BcOlsPop => write!(f, "BC-OLS"),
            BcOlsPopNormalized => write!(f, "BC-OLS-norm"),
            BcOlsNr => write!(f, "BC-OLS-NR"),
            BcOlsStrat { strata } => write!(f, "BC-OLS-strat({strata})"),
            WlsReg => write!(f, "WLS"),
            PiCovDummies { strata } => write!(f, "pi-cov({strata})"),
            PiCovInversePropensity => write!(f, "1/pi-cov"),
            PiCovLinearSpline => write!(f, "pi-cov-linspline"),
            PiCovQuadraticSpline => write!(f, "pi-cov-quadspline"),
        }
    }
}

/// Model output available to an estimator.
#[derive(Debug, Clone, Copy)]
pub struct Inputs<'a> {
    pub data: &'a Dataset,
    pub pi_hat: Option<&'a [f64]>,
    pub eta_hat: Option<&'a [f64]>,
    /// Outcome-model design over all units, intercept included.
    pub y_design: Option<&'a DMatrix<f64>>,
    pub y_fit: Option<&'a LinearFit>,
}
