//! Parallel vs single-threaded timing of the hot paths: a convolution
//! forward/backward pass and one full mining step.
//!
//! With the `parallel` feature each benchmark runs twice, once inside a
//! one-thread rayon pool and once on the global pool. Without the feature
//! only the sequential path exists.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use asm_core::miner::{mine_step, MineBatch, MiningConfig};
use asm_core::models::{Generator, NetConfig, TaskModel};
use asm_core::numcore::{Graph, Tensor};
use asm_core::rain::StyleLatent;

fn desk() -> NetConfig {
    NetConfig {
        side: 16,
        channels: 16,
        latent_dim: 8,
        feat_dim: 64,
        task_channels: 8,
        ..NetConfig::default()
    }
}

fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

fn conv_pass(x: &Tensor<f32>, w: &Tensor<f32>, b: &Tensor<f32>) -> f32 {
    let mut g = Graph::new();
    let (x, w, b) = (g.variable(x.clone()), g.variable(w.clone()), g.variable(b.clone()));
    let y = g.conv2d(x, w, b, 1, 1).unwrap();
    let loss = g.sum(y);
    let grads = g.grad(loss, &[w]).unwrap();
    grads[0].data()[0]
}

fn with_pools(c: &mut Criterion, name: &str, mut f: impl FnMut() + Send) {
    #[cfg(feature = "parallel")]
    {
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        c.bench_function(&format!("{name}/1-thread"), |bch| bch.iter(|| single.install(&mut f)));
        c.bench_function(&format!("{name}/pool"), |bch| bch.iter(&mut f));
    }
    #[cfg(not(feature = "parallel"))]
    c.bench_function(&format!("{name}/sequential"), |bch| bch.iter(&mut f));
}

fn bench_conv(c: &mut Criterion) {
    let x = random(&[32, 16, 16, 16], 1);
    let w = random(&[16, 16, 3, 3], 2);
    let b = random(&[16], 3);
    with_pools(c, "conv3x3_fwd_bwd", || {
        black_box(conv_pass(&x, &w, &b));
    });
}

fn bench_mine_step(c: &mut Criterion) {
    let cfg = desk();
    let mut gen = Generator::<f32>::new(cfg, 1).unwrap();
    gen.mark_trained();
    let mut model = TaskModel::<f32>::new(cfg, 2).unwrap();
    let x = random(&[8, 3, 16, 16], 4);
    let batch = MineBatch::new(&gen, &x, (0..8).map(|i| i % 10).collect()).unwrap();
    let mining = MiningConfig {
        batch_size: 16,
        ..MiningConfig::default()
    };
    let eps = StyleLatent::new(vec![0.1; cfg.latent_dim]).unwrap();
    let aux = StyleLatent::new(vec![-0.2; cfg.latent_dim]).unwrap();
    with_pools(c, "mine_step", || {
        let out = mine_step(&mut model, &gen, &batch, &eps, vec![aux.clone()], 1e-4, &mining).unwrap();
        black_box(out.eval.l_m);
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = bench_conv, bench_mine_step
}
criterion_main!(benches);
