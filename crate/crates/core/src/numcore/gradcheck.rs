//! Central finite-difference checks of the reverse-mode rules.
//!
//! The oracle here only ever calls forward evaluation; it never reads the
//! tape's gradients except to compare against them.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numcore::graph::{Graph, OpKind, Var};
use crate::numcore::tensor::Tensor;

/// Finite-difference step used throughout.
pub const FD_STEP: f64 = 1e-4;
/// Maximum tolerated relative error.
pub const FD_TOLERANCE: f64 = 1e-4;

/// Builds a scalar loss from the given input variables and integer side data.
pub type BuildFn<'a> = dyn Fn(&mut Graph<f64>, &[Var], &[usize]) -> Result<Var> + Sync + 'a;

/// One randomly drawn problem for a check.
#[derive(Debug, Clone)]
pub struct Instance {
    pub inputs: Vec<Tensor<f64>>,
    pub labels: Vec<usize>,
}

impl Instance {
    pub fn new(inputs: Vec<Tensor<f64>>) -> Self {
        Instance {
            inputs,
            labels: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub instances: usize,
    pub max_rel_err: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= FD_TOLERANCE
    }
}

/// Normwise relative error `|a - n|_inf / max(|a|_inf, |n|_inf, 1e-6)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(1e-6f64, |m, v| m.max(v.abs()));
    diff / scale
}

fn eval(build: &BuildFn, inputs: &[Tensor<f64>], labels: &[usize]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = build(&mut g, &vars, labels)?;
    g.value(loss).item()
}

/// Compares tape gradients of every (or `max_coords` sampled) coordinate of
/// every input against central differences. Inputs listed in `frozen` are
/// held constant and not checked.
pub fn check_instance(
    build: &BuildFn,
    inst: &Instance,
    max_coords: Option<usize>,
    frozen: &[usize],
    seed: u64,
) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inst
        .inputs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if frozen.contains(&i) {
                g.constant(t.clone())
            } else {
                g.variable(t.clone())
            }
        })
        .collect();
    let loss = build(&mut g, &vars, &inst.labels)?;
    let grads = g.grad(loss, &vars)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut inputs = inst.inputs.clone();
    for i in 0..inputs.len() {
        if frozen.contains(&i) {
            continue;
        }
        let n = inputs[i].numel();
        let coords: Vec<usize> = match max_coords {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for c in coords {
            let orig = inputs[i].data()[c];
            inputs[i].data_mut()[c] = orig + FD_STEP;
            let up = eval(build, &inputs, &inst.labels)?;
            inputs[i].data_mut()[c] = orig - FD_STEP;
            let down = eval(build, &inputs, &inst.labels)?;
            inputs[i].data_mut()[c] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
            analytic.push(grads[i].data()[c]);
        }
    }
    Ok(relative_error(&analytic, &numeric))
}

/// Runs `trials` instances drawn by `gen` and reports the worst error.
pub fn run_check(
    name: &str,
    trials: usize,
    seed: u64,
    gen: &(dyn Fn(&mut ChaCha8Rng) -> Instance + Sync),
    build: &BuildFn,
) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for t in 0..trials {
        let inst = gen(&mut rng);
        worst = worst.max(check_instance(build, &inst, None, &[], seed ^ t as u64)?);
    }
    Ok(CheckOutcome {
        name: name.to_string(),
        instances: trials,
        max_rel_err: worst,
    })
}

/// Weights every element by a fixed pseudo-random pattern and sums, turning
/// any tensor into a scalar with a non-degenerate gradient.
pub fn project(g: &mut Graph<f64>, v: Var) -> Result<Var> {
    let shape = g.shape(v).to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| (1.3 * i as f64 + 0.5).cos()).collect();
    let w = g.constant(Tensor::new(&shape, w)?);
    let p = g.mul(v, w)?;
    Ok(g.sum(p))
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("valid shape")
}

/// Uniform draw in `[-hi, -gap] U [gap, hi]`, away from kinks at zero.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(gap..hi);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).expect("valid shape")
}

type GenFn = fn(&mut ChaCha8Rng) -> Instance;
type PrimBuild = fn(&mut Graph<f64>, &[Var], &[usize]) -> Result<Var>;

/// The primitive checks: (op, instance generator, loss builder).
pub fn primitive_cases() -> Vec<(OpKind, GenFn, PrimBuild)> {
    fn pair(r: &mut ChaCha8Rng) -> Instance {
        Instance::new(vec![uniform(r, &[3, 4], -2.0, 2.0), uniform(r, &[3, 4], -2.0, 2.0)])
    }
    fn one(r: &mut ChaCha8Rng) -> Instance {
        Instance::new(vec![uniform(r, &[3, 4], -2.0, 2.0)])
    }
    fn kinked(r: &mut ChaCha8Rng) -> Instance {
        Instance::new(vec![away_from_zero(r, &[3, 4], 1e-2, 2.0)])
    }
    fn image(r: &mut ChaCha8Rng) -> Instance {
        Instance::new(vec![uniform(r, &[2, 3, 3, 4], -1.0, 2.0)])
    }
    vec![
        (OpKind::Add, pair, |g, v, _| {
            let y = g.add(v[0], v[1])?;
            project(g, y)
        }),
        (OpKind::Sub, pair, |g, v, _| {
            let y = g.sub(v[0], v[1])?;
            project(g, y)
        }),
        (OpKind::Mul, pair, |g, v, _| {
            let y = g.mul(v[0], v[1])?;
            project(g, y)
        }),
        (OpKind::Scale, one, |g, v, _| {
            let y = g.scale(v[0], -1.7);
            project(g, y)
        }),
        (OpKind::Relu, kinked, |g, v, _| {
            let y = g.relu(v[0]);
            project(g, y)
        }),
        (OpKind::Sigmoid, one, |g, v, _| {
            let y = g.sigmoid(v[0]);
            project(g, y)
        }),
        (OpKind::Exp, one, |g, v, _| {
            let y = g.exp(v[0]);
            project(g, y)
        }),
        (OpKind::Sum, one, |g, v, _| {
            let y = g.mul(v[0], v[0])?;
            Ok(g.sum(y))
        }),
        (OpKind::Mean, one, |g, v, _| {
            let y = g.exp(v[0]);
            Ok(g.mean(y))
        }),
        (OpKind::Reshape, one, |g, v, _| {
            let y = g.reshape(v[0], &[2, 6])?;
            let y = g.sigmoid(y);
            project(g, y)
        }),
        (
            OpKind::Conv2d,
            |r| {
                let stride = r.gen_range(1..=2);
                Instance {
                    inputs: vec![
                        uniform(r, &[2, 2, 5, 5], -1.0, 1.0),
                        uniform(r, &[3, 2, 3, 3], -1.0, 1.0),
                        uniform(r, &[3], -0.5, 0.5),
                    ],
                    labels: vec![stride],
                }
            },
            |g, v, l| {
                let y = g.conv2d(v[0], v[1], v[2], l[0], 1)?;
                project(g, y)
            },
        ),
        (
            OpKind::Upsample2,
            |r| Instance::new(vec![uniform(r, &[1, 2, 3, 3], -1.0, 1.0)]),
            |g, v, _| {
                let y = g.upsample2(v[0])?;
                project(g, y)
            },
        ),
        (
            OpKind::Linear,
            |r| {
                Instance::new(vec![
                    uniform(r, &[3, 4], -1.0, 1.0),
                    uniform(r, &[5, 4], -1.0, 1.0),
                    uniform(r, &[5], -0.5, 0.5),
                ])
            },
            |g, v, _| {
                let y = g.linear(v[0], v[1], v[2])?;
                project(g, y)
            },
        ),
        (OpKind::ChannelMean, image, |g, v, _| {
            let y = g.channel_mean(v[0])?;
            project(g, y)
        }),
        (OpKind::ChannelStd, image, |g, v, _| {
            let y = g.channel_std(v[0])?;
            project(g, y)
        }),
        (
            OpKind::Adain,
            |r| {
                Instance::new(vec![
                    uniform(r, &[2, 3, 2, 3], -1.0, 2.0),
                    uniform(r, &[2, 3], -1.0, 1.0),
                    uniform(r, &[2, 3], 0.2, 2.0),
                ])
            },
            |g, v, _| {
                let y = g.adain(v[0], v[1], v[2])?;
                project(g, y)
            },
        ),
        (OpKind::ConcatCols, pair, |g, v, _| {
            let y = g.concat_cols(&[v[0], v[1], v[0]])?;
            project(g, y)
        }),
        (OpKind::SliceCols, one, |g, v, _| {
            let y = g.slice_cols(v[0], 1, 2)?;
            project(g, y)
        }),
        (OpKind::GatherRows, one, |g, v, _| {
            let y = g.gather_rows(v[0], &[2, 0, 2, 1, 2])?;
            project(g, y)
        }),
        (
            OpKind::ClampMin,
            |r| Instance::new(vec![away_from_zero(r, &[3, 4], 1e-2, 2.0)]),
            |g, v, _| {
                let y = g.clamp_min(v[0], 0.0);
                project(g, y)
            },
        ),
        (OpKind::RowNorm, one, |g, v, _| {
            let y = g.row_norm(v[0])?;
            project(g, y)
        }),
        (OpKind::Mse, pair, |g, v, _| g.mse(v[0], v[1])),
        (
            OpKind::SoftmaxCe,
            |r| {
                let labels = (0..4).map(|_| r.gen_range(0..5)).collect();
                Instance {
                    inputs: vec![uniform(r, &[4, 5], -3.0, 3.0)],
                    labels,
                }
            },
            |g, v, l| g.softmax_cross_entropy(v[0], l),
        ),
        (
            OpKind::KlStdNormal,
            |r| Instance::new(vec![uniform(r, &[3, 4], -2.0, 2.0), uniform(r, &[3, 4], 0.3, 2.0)]),
            |g, v, _| g.kl_std_normal(v[0], v[1]),
        ),
        (
            OpKind::Consistency,
            |r| Instance::new(vec![uniform(r, &[6, 4], -2.0, 2.0)]),
            |g, v, _| g.consistency(v[0], 3),
        ),
    ]
}

/// Checks every primitive on `trials` random instances each.
pub fn check_primitives(trials: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    primitive_cases()
        .into_iter()
        .enumerate()
        .map(|(i, (kind, gen, build))| run_check(kind.name(), trials, seed.wrapping_add(i as u64), &gen, &build))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_kind_has_a_case() {
        let covered: Vec<OpKind> = primitive_cases().iter().map(|c| c.0).collect();
        for k in OpKind::ALL {
            assert!(covered.contains(&k), "{} has no gradient check", k.name());
        }
    }

    #[test]
    fn primitives_pass_on_a_few_instances() {
        for out in check_primitives(3, 7).unwrap() {
            assert!(out.passed(), "{} rel err {}", out.name, out.max_rel_err);
        }
    }

    #[test]
    fn relative_error_is_normwise() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((relative_error(&[1.0, 2.0], &[1.0, 2.2]) - 0.2 / 2.2).abs() < 1e-12);
    }
}
