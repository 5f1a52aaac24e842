use crate::error::{Error, Result};
use crate::numcore::element::Element;
use crate::numcore::kernels::plane_moments;
use crate::numcore::tensor::Tensor;

/// Channel-wise mean and (floored) standard deviation of one feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats<T> {
    pub mu: Vec<T>,
    pub sigma: Vec<T>,
}

impl<T: Element> ChannelStats<T> {
    pub fn new(mu: Vec<T>, sigma: Vec<T>) -> Result<Self> {
        if mu.len() != sigma.len() || mu.is_empty() {
            return Err(Error::shape(format!(
                "channel stats lengths {} / {}",
                mu.len(),
                sigma.len()
            )));
        }
        if let Some(s) = sigma.iter().find(|s| !(**s > T::zero())) {
            return Err(Error::contract(format!("channel std must be positive, got {s}")));
        }
        Ok(ChannelStats { mu, sigma })
    }

    pub fn channels(&self) -> usize {
        self.mu.len()
    }
}

/// Per-item statistics of a (B, C, H, W) feature map.
pub fn channel_stats<T: Element>(f: &Tensor<T>) -> Result<Vec<ChannelStats<T>>> {
    let &[b, c, h, w] = f.shape() else {
        return Err(Error::shape(format!("channel_stats expects (B,C,H,W), got {:?}", f.shape())));
    };
    if h * w == 0 {
        return Err(Error::shape("empty spatial extent"));
    }
    let (mu, sd, _) = plane_moments(f.data(), h * w);
    Ok((0..b)
        .map(|i| ChannelStats {
            mu: mu[i * c..(i + 1) * c].to_vec(),
            sigma: sd[i * c..(i + 1) * c].to_vec(),
        })
        .collect())
}
