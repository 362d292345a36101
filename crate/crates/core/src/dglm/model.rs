use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::check_psd;
use crate::{Error, Result};

/// Built-in polynomial trend forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelForm {
    /// p = 1 random walk on the log rate.
    Level,
    /// p = 2 local linear growth: level and gradient.
    #[default]
    Llgm,
    /// p = 3 local quadratic: level, gradient and change in gradient.
    Quadratic,
}

impl ModelForm {
    pub fn dim(self) -> usize {
        match self {
            ModelForm::Level => 1,
            ModelForm::Llgm => 2,
            ModelForm::Quadratic => 3,
        }
    }

    /// Regression vector F = (1, 0, …, 0)ᵀ.
    pub fn regression(self) -> DVector<f64> {
        let mut f = DVector::zeros(self.dim());
        f[0] = 1.0;
        f
    }

    /// Upper-bidiagonal transition matrix with unit diagonal and superdiagonal.
    pub fn transition(self) -> DMatrix<f64> {
        let p = self.dim();
        DMatrix::from_fn(p, p, |r, c| if c == r || c == r + 1 { 1.0 } else { 0.0 })
    }
}

impl std::str::FromStr for ModelForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "level" => Ok(ModelForm::Level),
            "llgm" => Ok(ModelForm::Llgm),
            "quadratic" => Ok(ModelForm::Quadratic),
            other => Err(Error::Config(format!("unknown model form `{other}`"))),
        }
    }
}

/// A constant-F, constant-G DGLM with single-discount evolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub regression: DVector<f64>,
    pub transition: DMatrix<f64>,
    pub discount: f64,
    pub prior_mean: DVector<f64>,
    pub prior_cov: DMatrix<f64>,
}

impl ModelSpec {
    pub fn new(
        regression: DVector<f64>,
        transition: DMatrix<f64>,
        discount: f64,
        prior_mean: DVector<f64>,
        prior_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let p = regression.len();
        if p == 0 {
            return Err(Error::InvalidModel(
                "state dimension must be positive".into(),
            ));
        }
        if transition.shape() != (p, p) {
            return Err(Error::InvalidModel(format!(
                "transition matrix is {:?}, expected {p}x{p}",
                transition.shape()
            )));
        }
        if prior_mean.len() != p || prior_cov.shape() != (p, p) {
            return Err(Error::InvalidModel(
                "prior dimensions disagree with F".into(),
            ));
        }
        if !(discount > 0.0 && discount <= 1.0) {
            return Err(Error::InvalidModel(format!(
                "discount {discount} must lie in (0, 1]"
            )));
        }
        if regression
            .iter()
            .chain(transition.iter())
            .chain(prior_mean.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidModel("model entries must be finite".into()));
        }
        check_psd(&prior_cov, "prior covariance")
            .map_err(|e| Error::InvalidModel(e.to_string()))?;
        Ok(ModelSpec {
            regression,
            transition,
            discount,
            prior_mean,
            prior_cov,
        })
    }

    /// Built-in form with prior mean `(level, 0, …)` and prior covariance
    /// `variance · I`.
    pub fn builtin(form: ModelForm, level: f64, variance: f64, discount: f64) -> Result<Self> {
        let p = form.dim();
        let mut mean = DVector::zeros(p);
        mean[0] = level;
        ModelSpec::new(
            form.regression(),
            form.transition(),
            discount,
            mean,
            DMatrix::identity(p, p) * variance,
        )
    }

    pub fn local_level(level: f64, variance: f64, discount: f64) -> Result<Self> {
        Self::builtin(ModelForm::Level, level, variance, discount)
    }

    pub fn llgm(level: f64, variance: f64, discount: f64) -> Result<Self> {
        Self::builtin(ModelForm::Llgm, level, variance, discount)
    }

    pub fn local_quadratic(level: f64, variance: f64, discount: f64) -> Result<Self> {
        Self::builtin(ModelForm::Quadratic, level, variance, discount)
    }

    pub fn dim(&self) -> usize {
        self.regression.len()
    }

    /// Inverse of G, refusing ill-conditioned transitions.
    pub fn transition_inverse(&self) -> Result<DMatrix<f64>> {
        let sv = self.transition.clone().singular_values();
        let max = sv.max();
        let min = sv.min();
        if !(min > 0.0) || max / min >= 1e12 {
            return Err(Error::Unsupported(format!(
                "transition matrix is singular or ill-conditioned (condition number {:e})",
                max / min
            )));
        }
        self.transition
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Unsupported("transition matrix is not invertible".into()))
    }
}
