use std::ops::Index;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::numcore::element::{lit, Element};
use crate::numcore::graph::{Gradients, Graph, Var};
use crate::numcore::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    /// SGD momentum buffer, same shape as `value`.
    pub momentum: Tensor<T>,
}

/// Named, ordered parameter tensors with their gradients and momentum buffers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    params: IndexMap<String, Param<T>>,
}

/// Graph handles for the tensors of a [`ParamSet`], keyed by name.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

impl Index<&str> for Bound {
    type Output = Var;

    fn index(&self, name: &str) -> &Var {
        self.vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not bound"))
    }
}

impl<T: Element> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            params: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter `{name}`")));
        }
        let momentum = Tensor::zeros(value.shape());
        self.params.insert(
            name,
            Param {
                value,
                grad: None,
                momentum,
            },
        );
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.get_mut(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn set_grad(&mut self, name: &str, grad: Tensor<T>) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))?;
        if p.value.shape() != grad.shape() {
            return Err(Error::shape(format!(
                "gradient for `{name}` has shape {:?}, parameter {:?}",
                grad.shape(),
                p.value.shape()
            )));
        }
        p.grad = Some(grad);
        Ok(())
    }

    pub fn set_momentum(&mut self, name: &str, buf: Tensor<T>) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))?;
        if p.value.shape() != buf.shape() {
            return Err(Error::shape(format!("momentum for `{name}` has wrong shape")));
        }
        p.momentum = buf;
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        self.params.values_mut().for_each(|p| p.grad = None);
    }

    /// Places every parameter on the tape; `trainable` decides whether
    /// gradients flow into them.
    pub fn bind(&self, graph: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, p)| {
                let v = if trainable {
                    graph.variable(p.value.clone())
                } else {
                    graph.constant(p.value.clone())
                };
                (k.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    /// Stores the gradients of bound parameters; unreached ones get zeros.
    pub fn collect_grads(&mut self, bound: &Bound, grads: &mut Gradients<T>) -> Result<()> {
        for (name, var) in bound.iter() {
            let shape = self.value(name)?.shape().to_vec();
            let g = grads.take(var).unwrap_or_else(|| Tensor::zeros(&shape));
            self.set_grad(name, g)?;
        }
        Ok(())
    }

    pub fn cast<U: Element>(&self) -> ParamSet<U> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            value: p.value.cast(),
                            grad: p.grad.as_ref().map(Tensor::cast),
                            momentum: p.momentum.cast(),
                        },
                    )
                })
                .collect(),
        }
    }
}

/// SGD with momentum and L2 weight decay:
/// `v <- momentum * v + (g + weight_decay * p)`, `p <- p - lr * v`.
/// Gradients are consumed by the step.
pub fn sgd_step<T: Element>(params: &mut ParamSet<T>, lr: f64, momentum: f64, weight_decay: f64) -> Result<()> {
    if let Some((name, _)) = params.params.iter().find(|(_, p)| p.grad.is_none()) {
        return Err(Error::contract(format!("missing gradient for `{name}`")));
    }
    let (lr, mu, wd): (T, T, T) = (lit(lr), lit(momentum), lit(weight_decay));
    for p in params.params.values_mut() {
        let g = p.grad.take().expect("checked above");
        for ((w, v), &d) in p.value.data_mut().iter_mut().zip(p.momentum.data_mut()).zip(g.data()) {
            *v = mu * *v + d + wd * *w;
            *w = *w - lr * *v;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(p: f64, g: f64) -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        ps.insert("p", Tensor::scalar(p)).unwrap();
        ps.set_grad("p", Tensor::scalar(g)).unwrap();
        ps
    }

    #[test]
    fn plain_step() {
        let mut ps = single(1.0, 2.0);
        sgd_step(&mut ps, 0.1, 0.0, 0.0).unwrap();
        assert!((ps.value("p").unwrap().item().unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_only_step() {
        let mut ps = single(1.0, 0.0);
        sgd_step(&mut ps, 0.1, 0.0, 0.5).unwrap();
        assert!((ps.value("p").unwrap().item().unwrap() - 0.95).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let mut ps = single(1.5, 7.0);
        sgd_step(&mut ps, 0.0, 0.9, 5e-4).unwrap();
        assert_eq!(ps.value("p").unwrap().item().unwrap(), 1.5);
    }

    #[test]
    fn momentum_accumulates() {
        let mut ps = single(0.0, 1.0);
        sgd_step(&mut ps, 1.0, 0.5, 0.0).unwrap();
        ps.set_grad("p", Tensor::scalar(1.0)).unwrap();
        sgd_step(&mut ps, 1.0, 0.5, 0.0).unwrap();
        // v1 = 1, v2 = 1.5
        assert_eq!(ps.value("p").unwrap().item().unwrap(), -2.5);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut ps = ParamSet::<f32>::new();
        ps.insert("w", Tensor::zeros(&[2])).unwrap();
        assert!(matches!(sgd_step(&mut ps, 0.1, 0.9, 0.0), Err(Error::Contract(_))));
        assert!(ps.insert("w", Tensor::zeros(&[1])).is_err());
        assert!(ps.set_grad("w", Tensor::zeros(&[3])).is_err());
    }
}
