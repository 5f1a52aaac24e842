use crate::error::{Error, Result};
use crate::numcore::{lit, ChannelStats, Element, Tensor, EPS_STD};

/// Style code: channel means followed by channel standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleCode<T>(pub Vec<T>);

impl<T: Element> StyleCode<T> {
    pub fn from_stats(stats: &ChannelStats<T>) -> Self {
        let mut v = stats.mu.clone();
        v.extend_from_slice(&stats.sigma);
        StyleCode(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Recovers (mu, sigma) halves, flooring sigma at `EPS_STD`.
    pub fn split(&self) -> Result<ChannelStats<T>> {
        if self.0.len() % 2 != 0 || self.0.is_empty() {
            return Err(Error::shape(format!("style code of odd length {}", self.0.len())));
        }
        let c = self.0.len() / 2;
        let eps: T = lit(EPS_STD);
        ChannelStats::new(
            self.0[..c].to_vec(),
            self.0[c..].iter().map(|&s| s.max(eps)).collect(),
        )
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(&[1, self.0.len()], self.0.clone()).expect("non-empty code")
    }
}

/// Gaussian posterior N(psi, diag(xi^2)) over style latents.
#[derive(Debug, Clone, PartialEq)]
pub struct StylePosterior<T> {
    pub psi: Vec<T>,
    pub xi: Vec<T>,
}

impl<T: Element> StylePosterior<T> {
    pub fn new(psi: Vec<T>, xi: Vec<T>) -> Result<Self> {
        if psi.len() != xi.len() || psi.is_empty() {
            return Err(Error::shape(format!("posterior lengths {} / {}", psi.len(), xi.len())));
        }
        if let Some(bad) = xi.iter().find(|v| !(**v > T::zero() && v.is_finite())) {
            return Err(Error::contract(format!("posterior std must be positive and finite, got {bad}")));
        }
        if psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("posterior mean".into()));
        }
        Ok(StylePosterior { psi, xi })
    }

    /// The standard normal prior N(0, I).
    pub fn standard(dim: usize) -> Self {
        StylePosterior {
            psi: vec![T::zero(); dim],
            xi: vec![T::one(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.psi.len()
    }
}

/// A style latent vector, the variable that mining ascends.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleLatent<T> {
    pub epsilon: Vec<T>,
}

impl<T: Element> StyleLatent<T> {
    pub fn new(epsilon: Vec<T>) -> Result<Self> {
        if epsilon.is_empty() {
            return Err(Error::shape("empty style latent"));
        }
        if epsilon.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("style latent".into()));
        }
        Ok(StyleLatent { epsilon })
    }

    pub fn dim(&self) -> usize {
        self.epsilon.len()
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(&[1, self.epsilon.len()], self.epsilon.clone()).expect("non-empty latent")
    }
}

/// Loss weights of the generator objective (content weight is fixed at 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RainWeights {
    pub lambda_s: f64,
    pub lambda_k: f64,
    pub lambda_r: f64,
}

impl Default for RainWeights {
    fn default() -> Self {
        RainWeights {
            lambda_s: 1.0,
            lambda_k: 1.0,
            lambda_r: 5.0,
        }
    }
}

impl RainWeights {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in [("lambda_s", self.lambda_s), ("lambda_k", self.lambda_k), ("lambda_r", self.lambda_r)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(k, format!("must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}
