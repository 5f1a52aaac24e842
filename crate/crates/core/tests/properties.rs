use proptest::prelude::*;

use asm_core::data::{decode_idx, encode_idx, BatchSampler};
use asm_core::io::{decode_checkpoint, encode_checkpoint};
use asm_core::numcore::{channel_stats, learning_rate, ChannelStats, Graph, ParamSet, ScheduleSpec, Tensor};
use asm_core::rain::{adain, kl_loss, rec_loss, sample_latent, StyleCode, StylePosterior};

fn feature_map() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>)> {
    (1usize..4, 1usize..5, 2usize..5).prop_flat_map(|(b, c, s)| {
        (Just(b), Just(c), Just(s), prop::collection::vec(-5.0f64..5.0, b * c * s * s))
    })
}

fn consistency(z: &[f64], groups: usize, dim: usize, scale: f64) -> f64 {
    let mut g = Graph::<f64>::new();
    let data: Vec<f64> = z.iter().map(|v| v * scale).collect();
    let v = g.constant(Tensor::new(&[z.len() / dim, dim], data).unwrap());
    let l = g.consistency(v, groups).unwrap();
    g.value(l).item().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn adain_output_carries_target_statistics(
        (b, c, s, data) in feature_map(),
        mu in prop::collection::vec(-3.0f64..3.0, 4),
        sigma in prop::collection::vec(0.1f64..3.0, 4),
    ) {
        let f = Tensor::new(&[b, c, s, s], data).unwrap();
        let stats = channel_stats(&f).unwrap();
        prop_assume!(stats.iter().all(|st| st.sigma.iter().all(|&v| v > 1e-3)));
        let target = ChannelStats::new(mu[..c].to_vec(), sigma[..c].to_vec()).unwrap();
        let out = adain(&f, &[target.clone()]).unwrap();
        for st in channel_stats(&out).unwrap() {
            for k in 0..c {
                prop_assert!((st.mu[k] - target.mu[k]).abs() < 1e-6);
                prop_assert!((st.sigma[k] - target.sigma[k]).abs() < 1e-5 * target.sigma[k].max(1.0));
            }
        }
    }

    #[test]
    fn kl_is_nonnegative_and_zero_only_at_the_prior(
        psi in prop::collection::vec(-3.0f64..3.0, 1..8),
        xi_raw in prop::collection::vec(0.05f64..4.0, 8),
    ) {
        let xi = xi_raw[..psi.len()].to_vec();
        let p = StylePosterior::new(psi.clone(), xi).unwrap();
        prop_assert!(kl_loss(&p).unwrap() >= 0.0);
        prop_assert!(kl_loss(&StylePosterior::<f64>::standard(psi.len())).unwrap().abs() < 1e-15);
    }

    #[test]
    fn rec_loss_is_a_symmetric_distance(
        a in prop::collection::vec(-4.0f64..4.0, 6),
        b in prop::collection::vec(-4.0f64..4.0, 6),
    ) {
        let (ca, cb) = (StyleCode(a.clone()), StyleCode(b));
        let ab = rec_loss(&ca, &cb).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, rec_loss(&cb, &ca).unwrap());
        prop_assert_eq!(rec_loss(&ca, &StyleCode(a)).unwrap(), 0.0);
    }

    #[test]
    fn reparameterized_draw_is_affine_in_noise(
        psi in prop::collection::vec(-2.0f64..2.0, 5),
        xi in prop::collection::vec(0.1f64..2.0, 5),
        eta in prop::collection::vec(-3.0f64..3.0, 5),
    ) {
        let p = StylePosterior::new(psi.clone(), xi.clone()).unwrap();
        let eps = sample_latent(&p, &eta).unwrap();
        for k in 0..5 {
            prop_assert!((eps.epsilon[k] - (psi[k] + xi[k] * eta[k])).abs() < 1e-12);
        }
        prop_assert!(sample_latent(&p, &eta[..4]).is_err());
    }

    #[test]
    fn consistency_scales_linearly_and_ignores_shared_offsets(
        groups in 1usize..4,
        members in 2usize..5,
        dim in 1usize..5,
        seed_vals in prop::collection::vec(-3.0f64..3.0, 64),
        offset in prop::collection::vec(-3.0f64..3.0, 4),
        scale in 0.1f64..10.0,
    ) {
        let n = groups * members;
        let z: Vec<f64> = seed_vals.iter().cycle().take(n * dim).copied().collect();
        let base = consistency(&z, groups, dim, 1.0);
        prop_assert!(base >= 0.0);
        let scaled = consistency(&z, groups, dim, scale);
        prop_assert!((scaled - scale * base).abs() < 1e-9 * (1.0 + scaled.abs()));
        let shifted: Vec<f64> = z
            .iter()
            .enumerate()
            .map(|(i, v)| v + offset[i % dim] + ((i / dim) % groups) as f64)
            .collect();
        prop_assert!((consistency(&shifted, groups, dim, 1.0) - base).abs() < 1e-9);
    }

    #[test]
    fn checkpoint_round_trip_is_exact(
        tensors in prop::collection::vec(prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 1..20), 1..5),
    ) {
        let mut params = ParamSet::<f32>::new();
        for (i, t) in tensors.iter().enumerate() {
            params.insert(format!("layer{i}.w"), Tensor::new(&[t.len()], t.clone()).unwrap()).unwrap();
        }
        let back = decode_checkpoint::<f32>(&encode_checkpoint(&params)).unwrap();
        prop_assert_eq!(back.len(), params.len());
        for (name, p) in params.iter() {
            let q = back.get(name).unwrap();
            prop_assert_eq!(q.value.shape(), p.value.shape());
            prop_assert!(q.value.data().iter().zip(p.value.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn sampler_epochs_visit_each_index_at_most_once(n in 1usize..60, batch_raw in 1usize..60, seed in any::<u64>()) {
        let batch = batch_raw.min(n);
        let mut s = BatchSampler::new(n, batch, seed).unwrap();
        let per = s.batches_per_epoch();
        prop_assert_eq!(per, n / batch);
        for _ in 0..2 {
            let mut seen = vec![false; n];
            for _ in 0..per {
                let b = s.next().unwrap();
                prop_assert_eq!(b.len(), batch);
                for i in b {
                    prop_assert!(!seen[i]);
                    seen[i] = true;
                }
            }
        }
        let again: Vec<Vec<usize>> = BatchSampler::new(n, batch, seed).unwrap().take(per).collect();
        let first: Vec<Vec<usize>> = BatchSampler::new(n, batch, seed).unwrap().take(per).collect();
        prop_assert_eq!(again, first);
    }

    #[test]
    fn idx_round_trip_preserves_pixels_and_labels(
        n in 1usize..6,
        side in 1usize..7,
        seed_px in prop::collection::vec(any::<u8>(), 256),
        seed_lbl in prop::collection::vec(0u8..10, 8),
    ) {
        let pixels: Vec<u8> = seed_px.iter().cycle().take(n * side * side).copied().collect();
        let labels = seed_lbl[..n].to_vec();
        let (img, lbl) = encode_idx(&pixels, side, side, &labels).unwrap();
        let ds = decode_idx(&img, &lbl, side).unwrap();
        let expected: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
        prop_assert_eq!(ds.labels(), expected.as_slice());
        let plane = side * side;
        for i in 0..n {
            for c in 0..3 {
                for p in 0..plane {
                    let v = ds.images().data()[(i * 3 + c) * plane + p];
                    prop_assert_eq!(v, pixels[i * plane + p] as f32 / 255.0);
                }
            }
        }
        prop_assert!(decode_idx(&img[..img.len() - 1], &lbl, side).is_err());
    }

    #[test]
    fn learning_rate_stays_within_bounds(
        base in 1e-6f64..1.0,
        warm in 0usize..50,
        extra in 1usize..500,
        power in 0.1f64..3.0,
        at in 0.0f64..1.0,
    ) {
        let max = warm + extra;
        let spec = ScheduleSpec::new(base, warm, max, power).unwrap();
        let iter = ((max as f64) * at) as usize;
        let lr = learning_rate(&spec, iter).unwrap();
        prop_assert!((0.0..=base).contains(&lr));
        if iter >= warm && iter < max {
            let next = learning_rate(&spec, iter + 1).unwrap();
            prop_assert!(next <= lr);
        }
        prop_assert_eq!(learning_rate(&spec, max).unwrap(), 0.0);
        prop_assert!(learning_rate(&spec, max + 1).is_err());
    }
}
