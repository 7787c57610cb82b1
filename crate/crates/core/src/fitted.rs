//! A fitted model of any variant, for code that picks the variant at run time.

use serde::{Deserialize, Serialize};

use crate::basic::{fit_basic, BasicParams};
use crate::cov_latent::{fit_cov_latent, CovLatentParams};
use crate::cov_manifest::{fit_cov_manifest, CovManifestParams};
use crate::data::Dataset;
use crate::decoding::{decode, DecodingResult};
use crate::error::Result;
use crate::fit::{Diagnostics, FitConfig};
use crate::inference::{bootstrap_se, numerical_information, simulate, SeReport, SimDesign, Simulation};
use crate::mixed::{fit_mixed, MixedParams};
use crate::model::{LatentModel, Variant};
use crate::fit::FitResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum FittedModel {
    Basic(FitResult<BasicParams>),
    CovManifest(FitResult<CovManifestParams>),
    CovLatent(FitResult<CovLatentParams>),
    Mixed(FitResult<MixedParams>),
}

macro_rules! each {
    ($self:expr, $f:ident => $body:expr) => {
        match $self {
            FittedModel::Basic($f) => $body,
            FittedModel::CovManifest($f) => $body,
            FittedModel::CovLatent($f) => $body,
            FittedModel::Mixed($f) => $body,
        }
    };
}

/// Fit the requested variant.
pub fn fit_variant(ds: &Dataset, variant: Variant, cfg: &FitConfig) -> Result<FittedModel> {
    Ok(match variant {
        Variant::Basic => FittedModel::Basic(fit_basic(ds, cfg)?),
        Variant::CovManifest => FittedModel::CovManifest(fit_cov_manifest(ds, cfg)?),
        Variant::CovLatent => FittedModel::CovLatent(fit_cov_latent(ds, cfg)?),
        Variant::Mixed => FittedModel::Mixed(fit_mixed(ds, cfg)?),
    })
}

impl FittedModel {
    pub fn variant(&self) -> Variant {
        match self {
            FittedModel::Basic(_) => Variant::Basic,
            FittedModel::CovManifest(_) => Variant::CovManifest,
            FittedModel::CovLatent(_) => Variant::CovLatent,
            FittedModel::Mixed(_) => Variant::Mixed,
        }
    }

    pub fn loglik(&self) -> f64 {
        each!(self, f => f.loglik)
    }

    pub fn np(&self) -> usize {
        each!(self, f => f.np)
    }

    pub fn aic(&self) -> f64 {
        each!(self, f => f.aic)
    }

    pub fn bic(&self) -> f64 {
        each!(self, f => f.bic)
    }

    pub fn converged(&self) -> bool {
        each!(self, f => f.converged)
    }

    pub fn iterations(&self) -> usize {
        each!(self, f => f.iterations)
    }

    pub fn seed(&self) -> u64 {
        each!(self, f => f.seed)
    }

    pub fn start_index(&self) -> usize {
        each!(self, f => f.start_index)
    }

    pub fn n_total(&self) -> u64 {
        each!(self, f => f.n_total)
    }

    pub fn n_states(&self) -> usize {
        each!(self, f => f.params.n_states())
    }

    pub fn trace(&self) -> &[f64] {
        each!(self, f => &f.trace)
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        each!(self, f => &f.diagnostics)
    }

    /// Natural-scale parameters as `(label, value)` pairs.
    pub fn natural(&self) -> Vec<(String, f64)> {
        each!(self, f => f.params.natural())
    }

    /// Log-likelihood of the fitted parameters on another dataset.
    pub fn loglik_on(&self, ds: &Dataset) -> Result<f64> {
        each!(self, f => f.params.loglik(ds))
    }

    pub fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        each!(self, f => f.params.check_dataset(ds))
    }

    pub fn decode(&self, ds: &Dataset) -> Result<DecodingResult> {
        each!(self, f => decode(&f.params, ds))
    }

    pub fn numerical_se(&self, ds: &Dataset) -> Result<SeReport> {
        each!(self, f => numerical_information(&f.params, ds))
    }

    pub fn bootstrap_se(&self, ds: &Dataset, cfg: &FitConfig, b: usize, seed: u64) -> Result<SeReport> {
        each!(self, f => bootstrap_se(f, ds, cfg, b, seed))
    }

    pub fn simulate(&self, design: &SimDesign, seed: u64) -> Result<Simulation> {
        match self {
            FittedModel::Basic(f) => simulate(&f.params, design, &f.params.categories, seed),
            FittedModel::CovLatent(f) => simulate(&f.params, design, &f.params.categories, seed),
            FittedModel::Mixed(f) => simulate(&f.params, design, &f.params.categories, seed),
            FittedModel::CovManifest(f) => {
                let cats = crate::data::CategorySpec::new(vec![f.params.n_categories()])?;
                simulate(&f.params, design, &cats, seed)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CategorySpec;
    use ndarray::Array3;

    #[test]
    fn json_round_trip_keeps_variant_tag() {
        let mut y = Array3::zeros((6, 3, 1));
        for i in 0..6 {
            for t in 0..3 {
                y[[i, t, 0]] = (i + t) % 2;
            }
        }
        let ds = Dataset::from_arrays(y, vec![3, 1, 2, 5, 1, 2], None, None, CategorySpec::new(vec![2]).unwrap())
            .unwrap();
        let f = fit_variant(&ds, Variant::Basic, &FitConfig::default()).unwrap();
        let text = serde_json::to_string(&f).unwrap();
        assert!(text.contains("\"variant\":\"basic\""));
        let back: FittedModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back.np(), f.np());
        assert_eq!(back.loglik(), f.loglik());
    }
}
