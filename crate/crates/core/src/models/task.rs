use crate::error::{Error, Result};
use crate::models::generator::{encoder_forward, same_layout};
use crate::models::{check_images, conv, fc, Generator, Init, NetConfig};
use crate::numcore::{Bound, Element, Graph, ParamSet, Tensor, Var};

/// Task classifier M: two strided conv layers, a hidden fully connected
/// layer whose ReLU output is the penultimate feature `z`, and a linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskModel<T> {
    pub cfg: NetConfig,
    pub params: ParamSet<T>,
}

impl<T: Element> TaskModel<T> {
    pub fn new(cfg: NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let m = cfg.task_channels;
        let flat = 2 * m * cfg.feature_side() * cfg.feature_side();
        let mut params = ParamSet::new();
        let mut init = Init::new(seed, 5);
        init.conv(&mut params, "task1", 3, m, 3)?;
        init.conv(&mut params, "task2", m, 2 * m, 3)?;
        init.fc(&mut params, "fc1", flat, cfg.feat_dim)?;
        init.fc(&mut params, "head", cfg.feat_dim, cfg.classes)?;
        Ok(TaskModel { cfg, params })
    }

    pub fn from_params(cfg: NetConfig, params: ParamSet<T>) -> Result<Self> {
        same_layout(&params, &Self::new(cfg, 0)?.params, "task model")?;
        Ok(TaskModel { cfg, params })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn cast<U: Element>(&self) -> TaskModel<U> {
        TaskModel {
            cfg: self.cfg,
            params: self.params.cast(),
        }
    }

    /// Returns (logits (B, K), z (B, F)).
    pub fn forward_graph(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<(Var, Var)> {
        check_images(&self.cfg, g.value(x))?;
        let h = conv(g, p, "task1", x, 2)?;
        let h = g.relu(h);
        let h = conv(g, p, "task2", h, 2)?;
        let h = g.relu(h);
        let b = g.shape(h)[0];
        let flat: usize = g.shape(h)[1..].iter().product();
        let h = g.reshape(h, &[b, flat])?;
        let h = fc(g, p, "fc1", h)?;
        let z = g.relu(h);
        let logits = fc(g, p, "head", z)?;
        Ok((logits, z))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let (logits, z) = self.forward_graph(&mut g, &p, xv)?;
        Ok((g.value(logits).clone(), g.value(z).clone()))
    }

    /// Arg-max class per image; ties go to the lowest index.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        let (logits, _) = self.forward(x)?;
        Ok(argmax_rows(&logits))
    }
}

pub fn argmax_rows<T: Element>(logits: &Tensor<T>) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Source-domain classifier whose conv trunk becomes the generator's frozen
/// encoder: the four encoder stages followed by one linear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceClassifier<T> {
    pub cfg: NetConfig,
    pub encoder: ParamSet<T>,
    pub head: ParamSet<T>,
}

impl<T: Element> SourceClassifier<T> {
    pub fn new(cfg: NetConfig, seed: u64) -> Result<Self> {
        let encoder = Generator::<T>::new(cfg, seed)?.encoder;
        let fs = cfg.feature_side();
        let mut head = ParamSet::new();
        Init::new(seed, 6).fc(&mut head, "cls", cfg.channels * fs * fs, cfg.classes)?;
        Ok(SourceClassifier { cfg, encoder, head })
    }

    pub fn forward_graph(&self, g: &mut Graph<T>, enc: &Bound, head: &Bound, x: Var) -> Result<Var> {
        let f = *encoder_forward(&self.cfg, g, enc, x)?.last().expect("four stages");
        self.head_graph(g, head, f)
    }

    /// Linear head on encoder features (B, C, H, W).
    pub fn head_graph(&self, g: &mut Graph<T>, head: &Bound, f: Var) -> Result<Var> {
        let b = g.shape(f)[0];
        let flat: usize = g.shape(f)[1..].iter().product();
        let f = g.reshape(f, &[b, flat])?;
        fc(g, head, "cls", f)
    }

    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        let mut g = Graph::new();
        let enc = self.encoder.bind(&mut g, false);
        let head = self.head.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let logits = self.forward_graph(&mut g, &enc, &head, xv)?;
        Ok(argmax_rows(g.value(logits)))
    }

    /// Fresh generator whose encoder is this classifier's trunk.
    pub fn into_generator(self, seed: u64) -> Result<Generator<T>> {
        let mut gen = Generator::new(self.cfg, seed)?;
        same_layout(&self.encoder, &gen.encoder, "encoder")?;
        gen.encoder = self.encoder;
        Ok(gen)
    }
}

/// Fraction of correct predictions.
pub fn accuracy(pred: &[usize], labels: &[usize]) -> Result<f64> {
    if pred.len() != labels.len() || pred.is_empty() {
        return Err(Error::contract(format!(
            "{} predictions for {} labels",
            pred.len(),
            labels.len()
        )));
    }
    let correct = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logits_and_features_have_contract_shapes() {
        let cfg = NetConfig::default();
        let m = TaskModel::<f32>::new(cfg, 1).unwrap();
        let x = Tensor::full(&[5, 3, 32, 32], 0.25f32);
        let (logits, z) = m.forward(&x).unwrap();
        assert_eq!(logits.shape(), &[5, 10]);
        assert_eq!(z.shape(), &[5, 128]);
        assert_eq!(m.predict(&x).unwrap().len(), 5);
    }

    #[test]
    fn parameter_count_is_stable() {
        let m = TaskModel::<f32>::new(NetConfig::default(), 0).unwrap();
        // 3*32*9+32 + 32*64*9+64 + 4096*128+128 + 128*10+10
        assert_eq!(m.num_params(), 896 + 18_496 + 524_416 + 1_290);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        let t = Tensor::<f64>::from_f64(&[2, 3], &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]).unwrap();
        assert_eq!(argmax_rows(&t), vec![0, 1]);
    }

    #[test]
    fn accuracy_fixtures() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 1, 2, 3], &[0, 1, 2, 0]).unwrap(), 0.75);
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn trunk_transfers_into_generator() {
        let cfg = NetConfig::default();
        let cls = SourceClassifier::<f32>::new(cfg, 9).unwrap();
        let enc = cls.encoder.clone();
        let gen = cls.into_generator(2).unwrap();
        assert_eq!(gen.encoder, enc);
    }
}
