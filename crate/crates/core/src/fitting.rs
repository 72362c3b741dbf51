//! Two-stage (inference functions for margins) copula estimation: marginal
//! CDFs turn raw scores into pseudo-observations, then each family's
//! dependence parameters are estimated on those and compared by
//! log-likelihood, AIC or BIC.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::copula::tau::{clayton_theta, elliptical_rho, frank_theta, gumbel_theta};
use crate::copula::{
    clamp_unit, Copula, CopulaFamily, CopulaModel, CopulaParams, CorrelationMatrix,
};
use crate::error::{Error, Result};
use crate::marginals::KdeModel;
use crate::optimize::minimize_bounded;

/// Fits on fewer rows than this carry a `few-observations` flag.
pub const RECOMMENDED_MIN_ROWS: usize = 50;

const CLAYTON_RANGE: (f64, f64) = (1e-4, 50.0);
const FRANK_RANGE: (f64, f64) = (1e-4, 50.0);
const GUMBEL_EXCESS_RANGE: (f64, f64) = (1e-6, 49.0);
const NU_RANGE: (f64, f64) = (2.0, 50.0);
/// Selection scores closer than this are treated as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// `T × L` matrix of uniforms strictly inside `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoObservations {
    u: Array2<f64>,
}

impl PseudoObservations {
    pub fn new(u: Array2<f64>) -> Result<Self> {
        if u.ncols() < 2 {
            return Err(Error::usage(format!(
                "pseudo-observations need at least 2 columns, got {}",
                u.ncols()
            )));
        }
        if let Some(bad) = u.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
            return Err(Error::domain(format!(
                "pseudo-observation {bad} is not inside (0, 1)"
            )));
        }
        Ok(PseudoObservations { u })
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.u
    }

    pub fn into_array(self) -> Array2<f64> {
        self.u
    }

    /// Number of observations `T`.
    pub fn len(&self) -> usize {
        self.u.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.u.nrows() == 0
    }

    /// Number of columns `L`.
    pub fn dim(&self) -> usize {
        self.u.ncols()
    }
}

/// `u[t][i] = clamp(F_i(raw[t][i]))` with each KDE's CDF.
pub fn pseudo_observations(raw: &Array2<f64>, kdes: &[KdeModel]) -> Result<PseudoObservations> {
    if raw.ncols() != kdes.len() {
        return Err(Error::usage(format!(
            "{} score columns but {} marginal models",
            raw.ncols(),
            kdes.len()
        )));
    }
    if raw.nrows() < 10 {
        return Err(Error::usage(format!(
            "pseudo-observations need at least 10 rows, got {}",
            raw.nrows()
        )));
    }
    let mut u = raw.clone();
    for (mut col, kde) in u.columns_mut().into_iter().zip(kdes) {
        let grid = kde.grid();
        col.mapv_inplace(|x| clamp_unit(grid.cdf(x)));
    }
    PseudoObservations::new(u)
}

/// Kendall's tau-a, `(concordant − discordant) / (n(n−1)/2)` with ties
/// counted as neither, in `O(n log n)` (Knight's algorithm).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::usage(format!(
            "kendall tau needs equal lengths, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::usage("kendall tau needs at least 2 observations"));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::data("kendall tau input contains NaN"));
    }
    let counts = concordance(x.iter().copied().zip(y.iter().copied()).collect());
    Ok(counts.tau_a())
}

#[derive(Debug, Clone, Copy)]
struct Concordance {
    pairs: u64,
    tied_x: u64,
    tied_y: u64,
    tied_both: u64,
    discordant: u64,
}

impl Concordance {
    fn tau_a(&self) -> f64 {
        let net = self.pairs as i128 - self.tied_x as i128 - self.tied_y as i128
            + self.tied_both as i128
            - 2 * self.discordant as i128;
        net as f64 / self.pairs as f64
    }

    fn degenerate(&self) -> bool {
        self.tied_x == self.pairs || self.tied_y == self.pairs
    }
}

fn tie_pairs(run: u64) -> u64 {
    run * run.saturating_sub(1) / 2
}

fn concordance(mut pairs: Vec<(f64, f64)>) -> Concordance {
    let n = pairs.len() as u64;
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut tied_x = 0;
    let mut tied_both = 0;
    let mut run_x = 1u64;
    let mut run_xy = 1u64;
    for w in pairs.windows(2) {
        if w[0].0 == w[1].0 {
            run_x += 1;
            if w[0].1 == w[1].1 {
                run_xy += 1;
            } else {
                tied_both += tie_pairs(run_xy);
                run_xy = 1;
            }
        } else {
            tied_x += tie_pairs(run_x);
            tied_both += tie_pairs(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    tied_x += tie_pairs(run_x);
    tied_both += tie_pairs(run_xy);

    // Discordant pairs = inversions of y in x-order (ties in y excluded by
    // the stable, non-strict merge).
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; ys.len()];
    let discordant = merge_count(&mut ys, &mut buf);

    let mut tied_y = 0;
    let mut run_y = 1u64;
    for w in ys.windows(2) {
        if w[0] == w[1] {
            run_y += 1;
        } else {
            tied_y += tie_pairs(run_y);
            run_y = 1;
        }
    }
    tied_y += tie_pairs(run_y);

    Concordance {
        pairs: n * (n - 1) / 2,
        tied_x,
        tied_y,
        tied_both,
        discordant,
    }
}

/// Sort `v` ascending, returning the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(l, bl) + merge_count(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// `(aic, bic) = (2k − 2ll, k ln n − 2ll)`.
pub fn fit_statistics(k: usize, n: usize, ll: f64) -> (f64, f64) {
    let k = k as f64;
    (2.0 * k - 2.0 * ll, k * (n as f64).ln() - 2.0 * ll)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    #[default]
    Aic,
    Bic,
    Ll,
}

impl Criterion {
    pub fn name(self) -> &'static str {
        match self {
            Criterion::Aic => "aic",
            Criterion::Bic => "bic",
            Criterion::Ll => "ll",
        }
    }

    /// Lower is better.
    fn score(self, fit: &FitReport) -> f64 {
        match self {
            Criterion::Aic => fit.aic,
            Criterion::Bic => fit.bic,
            Criterion::Ll => -fit.log_likelihood,
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aic" => Ok(Criterion::Aic),
            "bic" => Ok(Criterion::Bic),
            "ll" | "loglik" => Ok(Criterion::Ll),
            other => Err(Error::usage(format!("unknown criterion '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub family: CopulaFamily,
    #[serde(rename = "ll")]
    pub log_likelihood: f64,
    pub k: usize,
    pub n: usize,
    pub aic: f64,
    pub bic: f64,
    pub params: CopulaParams,
    #[serde(default)]
    pub flags: Vec<String>,
}

impl FitReport {
    fn new(model: CopulaModel, log_likelihood: f64, n: usize, flags: Vec<String>) -> Self {
        let k = model.parameter_count();
        let (aic, bic) = fit_statistics(k, n, log_likelihood);
        FitReport {
            family: model.family,
            log_likelihood,
            k,
            n,
            aic,
            bic,
            params: model.params,
            flags,
        }
    }

    pub fn model(&self) -> CopulaModel {
        CopulaModel {
            family: self.family,
            params: self.params.clone(),
        }
    }
}

/// Pairwise Kendall taus of the columns, upper triangle in row order.
#[derive(Debug, Clone)]
struct TauTable {
    upper: Vec<f64>,
}

impl TauTable {
    fn compute(u: &PseudoObservations) -> Result<Self> {
        let a = u.as_array();
        let d = a.ncols();
        let pairs: Vec<(usize, usize)> = (0..d)
            .flat_map(|i| (i + 1..d).map(move |j| (i, j)))
            .collect();
        let upper = pairs
            .par_iter()
            .map(|&(i, j)| {
                let c = concordance(zip_columns(a.column(i), a.column(j)));
                if c.degenerate() {
                    let col = if c.tied_x == c.pairs { i } else { j };
                    Err(Error::Estimation(format!("column {col} has all values tied")))
                } else {
                    Ok(c.tau_a())
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(TauTable { upper })
    }

    fn mean(&self) -> f64 {
        self.upper.iter().sum::<f64>() / self.upper.len() as f64
    }
}

fn zip_columns(x: ArrayView1<f64>, y: ArrayView1<f64>) -> Vec<(f64, f64)> {
    x.iter().copied().zip(y.iter().copied()).collect()
}

/// Estimate `family`'s parameters on `u`.
pub fn fit_copula_ifm(family: CopulaFamily, u: &PseudoObservations) -> Result<FitReport> {
    if family == CopulaFamily::Independence {
        return fit_with_taus(family, u, None);
    }
    let taus = TauTable::compute(u)?;
    fit_with_taus(family, u, Some(&taus))
}

fn fit_with_taus(
    family: CopulaFamily,
    u: &PseudoObservations,
    taus: Option<&TauTable>,
) -> Result<FitReport> {
    let n = u.len();
    let d = u.dim();
    if !family.supports_density(d) {
        return Err(Error::Capability(format!(
            "{family} likelihood is not available at dim {d}"
        )));
    }
    let mut flags = Vec::new();
    if n < RECOMMENDED_MIN_ROWS {
        flags.push("few-observations".to_string());
    }
    if family == CopulaFamily::Independence {
        return Ok(FitReport::new(CopulaModel::independence(d)?, 0.0, n, flags));
    }
    let taus = taus.expect("taus are computed for dependent families");
    let data = u.as_array();
    let ll_of = |model: &CopulaModel| -> f64 {
        match Copula::new(model) {
            Ok(c) => c.log_likelihood_unchecked(data),
            Err(_) => f64::NEG_INFINITY,
        }
    };
    let model = match family {
        CopulaFamily::Independence => unreachable!(),
        CopulaFamily::Gaussian | CopulaFamily::StudentT => {
            let sigma = correlation_from_taus(d, taus, &mut flags)?;
            if family == CopulaFamily::Gaussian {
                CopulaModel::gaussian(sigma)?
            } else {
                let (lo, hi) = NU_RANGE;
                let best = minimize_bounded(
                    |ln_nu| {
                        CopulaModel::student_t(sigma.clone(), ln_nu.exp())
                            .map(|m| -ll_of(&m))
                            .unwrap_or(f64::INFINITY)
                    },
                    lo.ln(),
                    hi.ln(),
                    None,
                    1e-5,
                );
                if best.at_boundary {
                    flags.push("boundary".to_string());
                }
                let nu = best.x.exp().clamp(lo, hi);
                CopulaModel::student_t(sigma, nu)?
            }
        }
        CopulaFamily::Clayton | CopulaFamily::Frank | CopulaFamily::Gumbel => {
            let tau = taus.mean();
            let (theta, boundary) = fit_archimedean(family, d, tau, &ll_of)?;
            if boundary {
                flags.push("boundary".to_string());
            }
            CopulaModel::archimedean(family, d, theta)?
        }
    };
    let ll = ll_of(&model);
    if !ll.is_finite() {
        return Err(Error::Estimation(format!(
            "{family} log-likelihood is not finite at the estimate"
        )));
    }
    Ok(FitReport::new(model, ll, n, flags))
}

fn correlation_from_taus(
    d: usize,
    taus: &TauTable,
    flags: &mut Vec<String>,
) -> Result<CorrelationMatrix> {
    let mut full = vec![0.0; d * d];
    let mut k = 0;
    for i in 0..d {
        full[i * d + i] = 1.0;
        for j in i + 1..d {
            let rho = elliptical_rho(taus.upper[k]);
            full[i * d + j] = rho;
            full[j * d + i] = rho;
            k += 1;
        }
    }
    let (sigma, projected) = CorrelationMatrix::nearest(d, &full)?;
    if projected {
        flags.push("projected".to_string());
    }
    Ok(sigma)
}

/// Maximize the likelihood over a log-parameterized θ, starting from the
/// Kendall-tau inversion. Returns `(θ, hit_boundary)`.
fn fit_archimedean(
    family: CopulaFamily,
    d: usize,
    tau: f64,
    ll_of: &dyn Fn(&CopulaModel) -> f64,
) -> Result<(f64, bool)> {
    // map search variable s ↦ θ and the initial s
    let (lo, hi, start, to_theta): (f64, f64, Option<f64>, Box<dyn Fn(f64) -> f64>) = match family
    {
        CopulaFamily::Clayton => {
            let (a, b) = CLAYTON_RANGE;
            let init = (tau > 0.0).then(|| clayton_theta(tau).clamp(a, b).ln());
            (a.ln(), b.ln(), init, Box::new(f64::exp))
        }
        CopulaFamily::Gumbel => {
            let (a, b) = GUMBEL_EXCESS_RANGE;
            let init = (tau > 0.0).then(|| (gumbel_theta(tau) - 1.0).clamp(a, b).ln());
            (a.ln(), b.ln(), init, Box::new(|s: f64| 1.0 + s.exp()))
        }
        CopulaFamily::Frank => {
            let (a, b) = FRANK_RANGE;
            let sign = if tau < 0.0 && d == 2 { -1.0 } else { 1.0 };
            let init = (tau != 0.0).then(|| frank_theta(tau).abs().clamp(a, b).ln());
            (
                a.ln(),
                b.ln(),
                init,
                Box::new(move |s: f64| sign * s.exp()),
            )
        }
        other => unreachable!("{other} is not Archimedean"),
    };
    let objective = |s: f64| match CopulaModel::archimedean(family, d, to_theta(s)) {
        Ok(m) => -ll_of(&m),
        Err(_) => f64::INFINITY,
    };
    let best = minimize_bounded(objective, lo, hi, start, 1e-8);
    if !best.value.is_finite() {
        return Err(Error::Estimation(format!(
            "{family} likelihood is not finite anywhere on the search range"
        )));
    }
    Ok((to_theta(best.x), best.at_boundary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFailure {
    pub family: CopulaFamily,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub class: usize,
    pub criterion: Criterion,
    pub chosen: CopulaFamily,
    pub fits: Vec<FitReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<FitFailure>,
}

impl SelectionReport {
    pub fn chosen_fit(&self) -> &FitReport {
        self.fits
            .iter()
            .find(|f| f.family == self.chosen)
            .expect("chosen family has a fit")
    }

    pub fn csv_header() -> &'static str {
        "class,family,ll,aic,bic,chosen"
    }

    /// One CSV line per fitted family, without header.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for f in &self.fits {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.class,
                f.family,
                f.log_likelihood,
                f.aic,
                f.bic,
                f.family == self.chosen
            ));
        }
        out
    }
}

/// Fit every candidate and pick the best by `criterion`. Candidate order
/// does not matter: the list is deduplicated and sorted first, and ties
/// within [`TIE_TOLERANCE`] go to fewer parameters, then family order.
pub fn select_family(
    u: &PseudoObservations,
    candidates: &[CopulaFamily],
    criterion: Criterion,
) -> Result<SelectionReport> {
    if candidates.is_empty() {
        return Err(Error::usage("no candidate families given"));
    }
    let mut families = candidates.to_vec();
    families.sort();
    families.dedup();
    let taus = if families.iter().any(|f| *f != CopulaFamily::Independence) {
        Some(TauTable::compute(u).map_err(|e| Error::Selection(e.to_string()))?)
    } else {
        None
    };
    let results: Vec<(CopulaFamily, Result<FitReport>)> = families
        .par_iter()
        .map(|&f| (f, fit_with_taus(f, u, taus.as_ref())))
        .collect();
    let mut fits = Vec::new();
    let mut failures = Vec::new();
    for (family, r) in results {
        match r {
            Ok(fit) => fits.push(fit),
            Err(e) => failures.push(FitFailure {
                family,
                reason: e.to_string(),
            }),
        }
    }
    let chosen = choose(&fits, criterion).ok_or_else(|| {
        Error::Selection(format!(
            "every candidate fit failed: {}",
            failures
                .iter()
                .map(|f| format!("{}: {}", f.family, f.reason))
                .collect::<Vec<_>>()
                .join("; ")
        ))
    })?;
    Ok(SelectionReport {
        class: 0,
        criterion,
        chosen,
        fits,
        failures,
    })
}

/// `fits` must be in family order.
fn choose(fits: &[FitReport], criterion: Criterion) -> Option<CopulaFamily> {
    let mut best: Option<&FitReport> = None;
    for fit in fits {
        let score = criterion.score(fit);
        if score.is_nan() {
            continue;
        }
        best = match best {
            None => Some(fit),
            Some(b) => {
                let bs = criterion.score(b);
                if score < bs - TIE_TOLERANCE
                    || ((score - bs).abs() <= TIE_TOLERANCE && fit.k < b.k)
                {
                    Some(fit)
                } else {
                    Some(b)
                }
            }
        };
    }
    best.map(|f| f.family)
}
