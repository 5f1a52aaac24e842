use crate::error::{Error, Result};
use crate::miner::{GroupMode, MiningConfig, DIVERGENCE_LIMIT};
use crate::models::{Generator, GeneratorVars, TaskModel};
use crate::numcore::{lit, sgd_step, Bound, Element, Graph, Tensor, Var};
use crate::rain::{stylize_graph, StyleLatent};

/// Loss parts and the style-latent gradient from one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub l_task: f64,
    pub l_consist: f64,
    pub l_m: f64,
    pub grad_eps: Vec<f64>,
}

/// A min-max objective: parameters descend, the style latent ascends.
pub trait AdversarialObjective {
    /// Evaluates the loss at `eps` and keeps the parameter gradients of that
    /// same evaluation for `descend`.
    fn evaluate(&mut self, eps: &[f64]) -> Result<Evaluation>;

    /// Applies one descent step with the gradients of the last evaluation.
    fn descend(&mut self, lr: f64) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct MineOutcome {
    pub eval: Evaluation,
    pub eps_next: StyleLatent<f64>,
}

/// One mining step: a single evaluation, the descent step, then
/// `eps <- eps + beta * grad_eps`.
pub fn mine_step_with(
    obj: &mut dyn AdversarialObjective,
    eps: &StyleLatent<f64>,
    lr: f64,
    beta: f64,
) -> Result<MineOutcome> {
    let eval = obj.evaluate(&eps.epsilon)?;
    if !eval.l_m.is_finite() || eval.grad_eps.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("mining loss {} at eps {:?}", eval.l_m, eps.epsilon)));
    }
    if eval.l_m > DIVERGENCE_LIMIT {
        return Err(Error::Diverged(format!(
            "mining loss {} exceeds {DIVERGENCE_LIMIT} at eps {:?}",
            eval.l_m, eps.epsilon
        )));
    }
    obj.descend(lr)?;
    let next = eps
        .epsilon
        .iter()
        .zip(&eval.grad_eps)
        .map(|(e, g)| e + beta * g)
        .collect();
    Ok(MineOutcome {
        eps_next: StyleLatent::new(next)?,
        eval,
    })
}

/// Encoded content batch for mining: `E(x)` is fixed while G is frozen.
#[derive(Debug, Clone)]
pub struct MineBatch<T> {
    pub images: Tensor<T>,
    pub features: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Element> MineBatch<T> {
    pub fn new(gen: &Generator<T>, x: &Tensor<T>, labels: Vec<usize>) -> Result<Self> {
        if x.shape()[0] != labels.len() {
            return Err(Error::shape(format!("{} images, {} labels", x.shape()[0], labels.len())));
        }
        Ok(MineBatch {
            images: x.clone(),
            features: gen.encode(x)?,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// `L_M` of the task model on the batch stylized with the mined latent plus
/// `aux` companion latents, each content appearing once per latent.
pub struct TaskObjective<'a, T: Element> {
    pub model: &'a mut TaskModel<T>,
    pub gen: &'a Generator<T>,
    pub batch: &'a MineBatch<T>,
    pub aux: Vec<StyleLatent<f64>>,
    pub lambda: f64,
    pub groups: GroupMode,
    pub with_source: bool,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Number of forward evaluations performed so far.
    pub forward_evals: usize,
}

impl<'a, T: Element> TaskObjective<'a, T> {
    pub fn new(
        model: &'a mut TaskModel<T>,
        gen: &'a Generator<T>,
        batch: &'a MineBatch<T>,
        aux: Vec<StyleLatent<f64>>,
        cfg: &MiningConfig,
    ) -> Self {
        TaskObjective {
            model,
            gen,
            batch,
            aux,
            lambda: cfg.lambda,
            groups: cfg.groups,
            with_source: cfg.with_source,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
            forward_evals: 0,
        }
    }
}

/// Loss nodes of one mining evaluation.
#[derive(Debug, Clone, Copy)]
pub struct MiningLoss {
    pub l_task: Var,
    pub l_consist: Var,
    pub l_m: Var,
}

/// Builds `L_M` for content features `f` (P, C, h, w) and style latents
/// `e` (S, d): every content is stylized with every latent, rows ordered
/// latent-major (row `s * P + p`). When `source` holds the unstylized
/// images, their cross-entropy joins the task loss as one more replica;
/// consistency stays over the stylized replicas.
#[allow(clippy::too_many_arguments)]
pub fn mining_loss_graph<T: Element>(
    gen: &Generator<T>,
    model: &TaskModel<T>,
    g: &mut Graph<T>,
    vars: &GeneratorVars,
    theta: &Bound,
    f: Var,
    e: Var,
    source: Option<Var>,
    labels: &[usize],
    lambda: f64,
    groups: GroupMode,
) -> Result<MiningLoss> {
    let p = g.shape(f)[0];
    let styles = g.shape(e)[0];
    if labels.len() != p {
        return Err(Error::shape(format!("{} labels for {p} contents", labels.len())));
    }
    let style_rows: Vec<usize> = (0..styles).flat_map(|s| std::iter::repeat(s).take(p)).collect();
    let content_rows: Vec<usize> = (0..styles).flat_map(|_| 0..p).collect();
    let e_rows = g.gather_rows(e, &style_rows)?;
    let f_rows = g.gather_rows(f, &content_rows)?;
    let x_style = stylize_graph(gen, g, vars, f_rows, e_rows)?;
    let (logits, z) = model.forward_graph(g, theta, x_style)?;

    // Stylization never touches labels: replica s of content i keeps y_i.
    let replica_labels: Vec<usize> = content_rows.iter().map(|&i| labels[i]).collect();
    let mut l_task = g.softmax_cross_entropy(logits, &replica_labels)?;
    if let Some(x) = source {
        let (logits_src, _) = model.forward_graph(g, theta, x)?;
        let ce_src = g.softmax_cross_entropy(logits_src, labels)?;
        // Mean over all styles * P stylized rows plus P source rows.
        let styled = g.scale(l_task, lit(styles as f64 / (styles + 1) as f64));
        let plain = g.scale(ce_src, lit(1.0 / (styles + 1) as f64));
        l_task = g.add(styled, plain)?;
    }
    let n_groups = match groups {
        GroupMode::PerContent => p,
        GroupMode::WholeBatch => 1,
    };
    let l_consist = g.consistency(z, n_groups)?;
    let weighted = g.scale(l_consist, lit(lambda));
    let l_m = g.add(l_task, weighted)?;
    Ok(MiningLoss { l_task, l_consist, l_m })
}

impl<T: Element> AdversarialObjective for TaskObjective<'_, T> {
    fn evaluate(&mut self, eps: &[f64]) -> Result<Evaluation> {
        let d = self.gen.cfg.latent_dim;
        if eps.len() != d || self.aux.iter().any(|a| a.dim() != d) {
            return Err(Error::shape(format!("style latents must have length {d}")));
        }
        if self.aux.is_empty() {
            return Err(Error::contract("mining needs at least one companion latent"));
        }
        let styles = 1 + self.aux.len();
        let mut latents: Vec<T> = eps.iter().map(|&v| lit(v)).collect();
        for a in &self.aux {
            latents.extend(a.epsilon.iter().map(|&v| lit::<T>(v)));
        }

        let mut g = Graph::new();
        let vars = self.gen.bind(&mut g, false);
        let theta = self.model.params.bind(&mut g, true);
        let e = g.variable(Tensor::new(&[styles, d], latents)?);
        let f = g.constant(self.batch.features.clone());
        let source = self.with_source.then(|| g.constant(self.batch.images.clone()));
        let MiningLoss { l_task, l_consist, l_m } = mining_loss_graph(
            self.gen,
            self.model,
            &mut g,
            &vars,
            &theta,
            f,
            e,
            source,
            &self.batch.labels,
            self.lambda,
            self.groups,
        )?;
        self.forward_evals += 1;

        let mut grads = g.backward(l_m)?;
        let ge = grads.take(e).expect("latent is a variable");
        self.model.params.collect_grads(&theta, &mut grads)?;
        let f64_of = |v: crate::numcore::Var| -> Result<f64> { Ok(g.value(v).item()?.to_f64().expect("finite")) };
        Ok(Evaluation {
            l_task: f64_of(l_task)?,
            l_consist: f64_of(l_consist)?,
            l_m: f64_of(l_m)?,
            grad_eps: ge.data()[..d].iter().map(|v| v.to_f64().expect("finite")).collect(),
        })
    }

    fn descend(&mut self, lr: f64) -> Result<()> {
        sgd_step(&mut self.model.params, lr, self.momentum, self.weight_decay)
    }
}

/// One evaluation of `L_M` on the stylized batch, a descent step on the
/// task model, an ascent step of size `cfg.beta` on `eps`.
pub fn mine_step<T: Element>(
    model: &mut TaskModel<T>,
    gen: &Generator<T>,
    batch: &MineBatch<T>,
    eps: &StyleLatent<f64>,
    aux: Vec<StyleLatent<f64>>,
    lr: f64,
    cfg: &MiningConfig,
) -> Result<MineOutcome> {
    let mut obj = TaskObjective::new(model, gen, batch, aux, cfg);
    let out = mine_step_with(&mut obj, eps, lr, cfg.beta)?;
    debug_assert_eq!(obj.forward_evals, 1);
    Ok(out)
}
