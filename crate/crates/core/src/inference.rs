//! Standard errors, simulation and model selection.

use std::io::Write;

use itertools::Itertools;
use nalgebra::DMatrix;
use ndarray::{Array2, Array3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{LmError, Result};
use crate::fit::{FitConfig, FitResult};
use crate::fitted::{fit_variant, FittedModel};
use crate::model::{LatentModel, Variant};
use crate::prob::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeMethod {
    Numerical,
    Bootstrap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaturalSe {
    pub label: String,
    pub estimate: f64,
    pub se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeReport {
    pub method: SeMethod,
    pub labels: Vec<String>,
    pub theta: Vec<f64>,
    /// Standard errors of `theta`; `None` where the variance estimate was negative.
    pub se: Vec<Option<f64>>,
    /// Observed information matrix (numerical method).
    pub info: Option<Vec<Vec<f64>>>,
    /// Requested replicates (bootstrap).
    pub replicates: Option<usize>,
    /// Replicates dropped because the refit failed or did not converge.
    pub dropped: Option<usize>,
    pub natural: Vec<NaturalSe>,
    pub warnings: Vec<String>,
}

#[derive(Serialize)]
struct SeCsvRow<'a> {
    scale: &'a str,
    parameter: &'a str,
    estimate: f64,
    se: Option<f64>,
}

impl SeReport {
    /// One row per coordinate: unconstrained scale first, then natural scale.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for ((label, &estimate), &se) in self.labels.iter().zip(&self.theta).zip(&self.se) {
            w.serialize(SeCsvRow { scale: "theta", parameter: label, estimate, se })?;
        }
        for n in &self.natural {
            w.serialize(SeCsvRow {
                scale: "natural",
                parameter: &n.label,
                estimate: n.estimate,
                se: n.se,
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

fn fd_step(x: f64) -> f64 {
    (1e-5 * x.abs()).max(1e-5)
}

/// Inverse of a symmetric matrix; falls back to the pseudo-inverse.
fn invert_symmetric(m: &DMatrix<f64>, warnings: &mut Vec<String>) -> DMatrix<f64> {
    if let Some(ch) = m.clone().cholesky() {
        return ch.inverse();
    }
    warnings.push("information matrix is not positive definite; using the pseudo-inverse".into());
    let svd = m.clone().svd(true, true);
    let tol = 1e-10 * svd.singular_values.max();
    svd.pseudo_inverse(tol).unwrap_or_else(|_| DMatrix::zeros(m.nrows(), m.ncols()))
}

fn natural_values<M: LatentModel>(params: &M) -> Vec<f64> {
    params.natural().into_iter().map(|(_, v)| v).collect()
}

/// Standard errors from the observed information, obtained as minus the
/// central finite-difference derivative of the analytic score.
pub fn numerical_information<M: LatentModel>(params: &M, ds: &Dataset) -> Result<SeReport> {
    params.check_dataset(ds)?;
    let theta = params.pack();
    let n = theta.len();
    let columns: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|m| {
            let h = fd_step(theta[m]);
            let mut up = theta.clone();
            up[m] += h;
            let mut down = theta.clone();
            down[m] -= h;
            let su = params.unpack(&up)?.score(ds)?;
            let sd = params.unpack(&down)?.score(ds)?;
            Ok(su.iter().zip(&sd).map(|(a, b)| -(a - b) / (2.0 * h)).collect())
        })
        .collect::<Result<_>>()?;
    let mut info = DMatrix::from_fn(n, n, |r, c| columns[c][r]);
    info = (&info + info.transpose()) * 0.5;
    let mut warnings = Vec::new();
    let cov = invert_symmetric(&info, &mut warnings);
    let mut se = Vec::with_capacity(n);
    let mut negative = Vec::new();
    for m in 0..n {
        let v = cov[(m, m)];
        if v >= 0.0 {
            se.push(Some(v.sqrt()));
        } else {
            se.push(None);
            negative.push(m);
        }
    }
    let labels = params.theta_labels();
    if !negative.is_empty() {
        warnings.push(format!(
            "negative variance for {}",
            negative.iter().map(|&m| labels[m].as_str()).join(", ")
        ));
    }

    // Delta method through finite differences of the natural-scale map.
    let base = natural_values(params);
    let jac_cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|m| {
            let h = fd_step(theta[m]);
            let mut up = theta.clone();
            up[m] += h;
            let mut down = theta.clone();
            down[m] -= h;
            let vu = natural_values(&params.unpack(&up)?);
            let vd = natural_values(&params.unpack(&down)?);
            Ok(vu.iter().zip(&vd).map(|(a, b)| (a - b) / (2.0 * h)).collect())
        })
        .collect::<Result<_>>()?;
    let g = DMatrix::from_fn(base.len(), n, |r, c| jac_cols[c][r]);
    let vnat = &g * &cov * g.transpose();
    let natural = params
        .natural()
        .into_iter()
        .enumerate()
        .map(|(i, (label, estimate))| {
            let v = vnat[(i, i)];
            NaturalSe {
                label,
                estimate,
                se: (v >= -1e-14).then(|| v.max(0.0).sqrt()),
            }
        })
        .collect();

    Ok(SeReport {
        method: SeMethod::Numerical,
        labels,
        theta,
        se,
        info: Some((0..n).map(|r| (0..n).map(|c| info[(r, c)]).collect()).collect()),
        replicates: None,
        dropped: None,
        natural,
        warnings,
    })
}

/// Unit-level covariates for simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDesign {
    pub n_occasions: usize,
    /// `n x p1`.
    pub x1: Array2<f64>,
    /// `n x (T-1) x p2`.
    pub x2: Array3<f64>,
}

impl SimDesign {
    pub fn without_covariates(n_units: usize, n_occasions: usize) -> Self {
        Self {
            n_occasions,
            x1: Array2::zeros((n_units, 0)),
            x2: Array3::zeros((n_units, n_occasions.saturating_sub(1), 0)),
        }
    }

    /// One unit per sample member of `ds`, keeping its covariates.
    pub fn from_dataset(ds: &Dataset) -> Self {
        let units = ds.expand();
        Self {
            n_occasions: ds.n_occasions(),
            x1: units.x1,
            x2: units.x2,
        }
    }

    pub fn n_units(&self) -> usize {
        self.x1.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    /// Collapsed simulated data.
    pub dataset: Dataset,
    /// `n x T x r` unit-level responses.
    pub responses: Array3<usize>,
    /// `n x T` latent states, 1-based.
    pub states: Array2<usize>,
}

/// Draw one latent path and response trajectory per design unit.
pub fn simulate<M: LatentModel>(params: &M, design: &SimDesign, categories: &crate::data::CategorySpec, seed: u64) -> Result<Simulation> {
    let mut rng = RngStream::new(seed);
    let n = design.n_units();
    let t_len = design.n_occasions;
    if t_len == 0 {
        return Err(LmError::arg("at least one occasion is required"));
    }
    let r = categories.n_vars();
    let mut responses = Array3::zeros((n, t_len, r));
    let mut states = Array2::zeros((n, t_len));
    for i in 0..n {
        let (y, u) = params.simulate_config(
            design.x1.row(i),
            design.x2.index_axis(Axis(0), i),
            t_len,
            &mut rng,
        )?;
        responses.index_axis_mut(Axis(0), i).assign(&y);
        for t in 0..t_len {
            states[[i, t]] = u[t] + 1;
        }
    }
    let dataset = Dataset::from_arrays(
        responses.clone(),
        vec![1; n],
        Some(design.x1.clone()),
        Some(design.x2.clone()),
        categories.clone(),
    )?
    .collapse();
    Ok(Simulation {
        dataset,
        responses,
        states,
    })
}

/// Permutation of `candidate`'s states best matching `reference`, by total
/// variation between state profiles. Exhaustive up to 8 states, greedy above.
pub fn align_states(reference: &Array2<f64>, candidate: &Array2<f64>) -> Vec<usize> {
    let k = reference.nrows();
    let dist = |a: usize, b: usize| -> f64 {
        reference
            .row(a)
            .iter()
            .zip(candidate.row(b))
            .map(|(x, y)| (x - y).abs())
            .sum()
    };
    if k <= 8 {
        let mut best: (f64, Vec<usize>) = (f64::INFINITY, (0..k).collect());
        for perm in (0..k).permutations(k) {
            let d: f64 = perm.iter().enumerate().map(|(u, &v)| dist(u, v)).sum();
            if d < best.0 {
                best = (d, perm);
            }
        }
        best.1
    } else {
        let mut used = vec![false; k];
        (0..k)
            .map(|u| {
                let v = (0..k)
                    .filter(|&v| !used[v])
                    .min_by(|&a, &b| dist(u, a).total_cmp(&dist(u, b)))
                    .expect("a free state remains");
                used[v] = true;
                v
            })
            .collect()
    }
}

fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Parametric bootstrap standard errors: `b` datasets are simulated from the
/// fit with the observed covariates and frequencies, refitted from the
/// estimates, aligned to the fitted state labels and summarized by the
/// replicate standard deviation.
pub fn bootstrap_se<M: LatentModel>(
    fit: &FitResult<M>,
    ds: &Dataset,
    cfg: &FitConfig,
    b: usize,
    seed: u64,
) -> Result<SeReport> {
    if !matches!(M::VARIANT, Variant::Basic | Variant::CovLatent) {
        return Err(LmError::arg(format!(
            "bootstrap standard errors are available for the basic and covariate-in-latent models, not {}",
            M::VARIANT.name()
        )));
    }
    if b == 0 {
        return Err(LmError::arg("B must be positive"));
    }
    let params = &fit.params;
    params.check_dataset(ds)?;
    let design = SimDesign::from_dataset(ds);
    let base = RngStream::new(seed);
    let profile = params.state_profile();
    let reps: Vec<Option<(Vec<f64>, Vec<f64>)>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let sub_seed = {
                let mut s = base.substream(rep as u64);
                (s.uniform() * u64::MAX as f64) as u64
            };
            let sim = simulate(params, &design, &ds.categories, sub_seed).ok()?;
            let refit = params.refit(&sim.dataset, cfg).ok()?;
            if !refit.converged {
                return None;
            }
            let perm = align_states(&profile, &refit.params.state_profile());
            let aligned = refit.params.permute_states(&perm);
            Some((aligned.pack(), natural_values(&aligned)))
        })
        .collect();
    let kept: Vec<(Vec<f64>, Vec<f64>)> = reps.into_iter().flatten().collect();
    let dropped = b - kept.len();
    if kept.len() < 2 {
        return Err(LmError::numerical(format!(
            "only {} of {b} bootstrap replicates converged",
            kept.len()
        )));
    }
    let theta = params.pack();
    let se = (0..theta.len())
        .map(|m| Some(sample_sd(&kept.iter().map(|r| r.0[m]).collect::<Vec<_>>())))
        .collect();
    let natural = params
        .natural()
        .into_iter()
        .enumerate()
        .map(|(i, (label, estimate))| NaturalSe {
            label,
            estimate,
            se: Some(sample_sd(&kept.iter().map(|r| r.1[i]).collect::<Vec<_>>())),
        })
        .collect();
    let mut warnings = Vec::new();
    if dropped > 0 {
        warnings.push(format!("{dropped} of {b} replicates dropped"));
    }
    Ok(SeReport {
        method: SeMethod::Bootstrap,
        labels: params.theta_labels(),
        theta,
        se,
        info: None,
        replicates: Some(b),
        dropped: Some(dropped),
        natural,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    /// Latent classes (mixed model) or 1.
    pub k1: usize,
    pub k: usize,
    pub loglik: Option<f64>,
    pub np: Option<usize>,
    pub aic: Option<f64>,
    pub bic: Option<f64>,
    pub seed: u64,
    pub start_index: Option<usize>,
    pub converged: bool,
    pub best_aic: bool,
    pub best_bic: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTable {
    pub variant: Variant,
    pub n_total: u64,
    pub rows: Vec<SelectionRow>,
}

impl SelectionTable {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Row minimizing BIC.
    pub fn best_bic(&self) -> Option<&SelectionRow> {
        self.rows.iter().find(|r| r.best_bic)
    }

    pub fn best_aic(&self) -> Option<&SelectionRow> {
        self.rows.iter().find(|r| r.best_aic)
    }

    /// Mark the AIC and BIC minimizers (first row on ties).
    pub fn mark_minimizers(&mut self) {
        let pick = |f: &dyn Fn(&SelectionRow) -> Option<f64>| {
            let mut best: Option<(usize, f64)> = None;
            for (i, r) in self.rows.iter().enumerate() {
                if let Some(v) = f(r) {
                    if best.is_none_or(|(_, b)| v < b) {
                        best = Some((i, v));
                    }
                }
            }
            best.map(|b| b.0)
        };
        let a = pick(&|r| r.aic);
        let b = pick(&|r| r.bic);
        for (i, r) in self.rows.iter_mut().enumerate() {
            r.best_aic = Some(i) == a;
            r.best_bic = Some(i) == b;
        }
    }
}

/// Fit every size in `sizes` (pairs `(k1, k)`; `k1 = 1` outside the mixed
/// model) and tabulate the information criteria. Failed fits stay in the
/// table with their error message.
pub fn select_states(
    ds: &Dataset,
    variant: Variant,
    sizes: &[(usize, usize)],
    cfg: &FitConfig,
) -> SelectionTable {
    let rows: Vec<SelectionRow> = sizes
        .par_iter()
        .map(|&(k1, k)| {
            let c = FitConfig { k, k1, ..cfg.clone() };
            match fit_variant(ds, variant, &c) {
                Ok(f) => row_from(&f, k1, k),
                Err(e) => SelectionRow {
                    k1,
                    k,
                    loglik: None,
                    np: None,
                    aic: None,
                    bic: None,
                    seed: cfg.seed,
                    start_index: None,
                    converged: false,
                    best_aic: false,
                    best_bic: false,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let mut table = SelectionTable {
        variant,
        n_total: ds.n_total(),
        rows,
    };
    table.mark_minimizers();
    table
}

fn row_from(f: &FittedModel, k1: usize, k: usize) -> SelectionRow {
    SelectionRow {
        k1,
        k,
        loglik: Some(f.loglik()),
        np: Some(f.np()),
        aic: Some(f.aic()),
        bic: Some(f.bic()),
        seed: f.seed(),
        start_index: Some(f.start_index()),
        converged: f.converged(),
        best_aic: false,
        best_bic: false,
        error: None,
    }
}
