use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::Reduction;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// One Gaussian of a mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Row-major `d × d` covariance.
    pub covariance: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Factor {
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl Factor {
    fn new(c: &Component, index: usize) -> Result<Self> {
        let d = c.mean.len();
        let cov = DMatrix::from_row_slice(d, d, &c.covariance);
        let chol = Cholesky::new(cov).ok_or_else(|| {
            Error::Numerical(format!("covariance of component {index} is not positive definite"))
        })?;
        let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            chol,
            log_norm: c.weight.ln() - 0.5 * (d as f64 * LN_2PI + log_det),
        })
    }

    /// `ln W + ln N(x | μ, Σ)`.
    fn weighted_log_density(&self, mean: &[f64], x: &[f64]) -> f64 {
        let diff = DVector::from_iterator(x.len(), x.iter().zip(mean).map(|(a, b)| a - b));
        let y = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&diff)
            .expect("cholesky factor has a positive diagonal");
        self.log_norm - 0.5 * y.norm_squared()
    }
}

/// Gaussian mixture with full covariances for one block's latent vectors.
#[derive(Debug, Clone)]
pub struct GmmModel {
    pub bag_index: usize,
    pub reduction: Reduction,
    components: Vec<Component>,
    factors: Vec<Factor>,
}

impl PartialEq for GmmModel {
    fn eq(&self, other: &Self) -> bool {
        self.bag_index == other.bag_index && self.reduction == other.reduction && self.components == other.components
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl GmmModel {
    /// Validates the components and factors every covariance.
    pub fn new(bag_index: usize, reduction: Reduction, components: Vec<Component>) -> Result<Self> {
        let first = components.first().ok_or_else(|| Error::arg("mixture needs a component"))?;
        let d = first.mean.len();
        if d == 0 {
            return Err(Error::arg("mixture dimension must be positive"));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        for (m, c) in components.iter().enumerate() {
            if c.mean.len() != d || c.covariance.len() != d * d {
                return Err(Error::shape(format!("component {m} does not have dimension {d}")));
            }
            if !(c.weight > 0.0) || !c.weight.is_finite() {
                return Err(Error::arg(format!("component {m} has weight {}", c.weight)));
            }
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::arg(format!("mixture weights sum to {total}")));
        }
        let factors = components
            .iter()
            .enumerate()
            .map(|(m, c)| Factor::new(c, m))
            .collect::<Result<_>>()?;
        Ok(Self {
            bag_index,
            reduction,
            components,
            factors,
        })
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::shape(format!(
                "latent vector of length {} scored by a {}-dimensional mixture",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Per-component `ln W_m + ln N_m(x)`.
    pub(crate) fn component_log_densities(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.factors
                .iter()
                .zip(&self.components)
                .map(|(f, c)| f.weighted_log_density(&c.mean, x)),
        );
    }

    /// Mixture density `Σ W_m N(x | μ_m, Σ_m)`.
    pub fn density(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_likelihood(x)?.exp())
    }

    /// Log of the mixture density, evaluated with log-sum-exp.
    pub fn log_likelihood(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let mut parts = Vec::with_capacity(self.components.len());
        self.component_log_densities(x, &mut parts);
        Ok(log_sum_exp(&parts))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn standard(d: usize) -> Component {
        let mut cov = vec![0.0; d * d];
        (0..d).for_each(|i| cov[i * d + i] = 1.0);
        Component {
            weight: 1.0,
            mean: vec![0.0; d],
            covariance: cov,
        }
    }

    #[test]
    fn standard_normal_in_two_dimensions() {
        let g = GmmModel::new(0, Reduction::None, vec![standard(2)]).unwrap();
        assert!((g.density(&[0.0, 0.0]).unwrap() - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-12);
        assert!((g.log_likelihood(&[0.0, 0.0]).unwrap() + 1.837_877_066_409_345).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_density_integrates_to_one() {
        let comps = vec![
            Component {
                weight: 0.3,
                mean: vec![-1.0],
                covariance: vec![0.25],
            },
            Component {
                weight: 0.7,
                mean: vec![2.0],
                covariance: vec![1.5],
            },
        ];
        let g = GmmModel::new(0, Reduction::None, comps).unwrap();
        let h = 1e-3;
        let total: f64 = (0..30_000).map(|i| g.density(&[-15.0 + i as f64 * h]).unwrap() * h).sum();
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn log_path_matches_density_and_survives_underflow() {
        let g = GmmModel::new(0, Reduction::None, vec![standard(3)]).unwrap();
        let x = [0.3, -1.2, 2.0];
        assert!((g.log_likelihood(&x).unwrap() - g.density(&x).unwrap().ln()).abs() < 1e-9);
        let far = [60.0, 0.0, 0.0];
        assert_eq!(g.density(&far).unwrap(), 0.0);
        assert!(g.log_likelihood(&far).unwrap().is_finite());
    }

    #[test]
    fn bad_models_are_rejected() {
        let mut c = standard(2);
        c.covariance = vec![1.0, 2.0, 2.0, 1.0];
        assert!(matches!(GmmModel::new(0, Reduction::None, vec![c]), Err(Error::Numerical(_))));
        let mut c = standard(2);
        c.weight = 0.5;
        assert!(GmmModel::new(0, Reduction::None, vec![c]).is_err());
        let g = GmmModel::new(0, Reduction::None, vec![standard(2)]).unwrap();
        assert!(matches!(g.log_likelihood(&[0.0]), Err(Error::Shape(_))));
    }
}
