//! RAIN: AdaIN stylization driven by a style VAE, so new styles come from a
//! latent vector instead of a style image.

mod train;
mod types;

pub use train::{train_rain, RainLogRow, RainOptions, RAIN_LOG_HEADER};
pub use types::{RainWeights, StyleCode, StyleLatent, StylePosterior};

use crate::error::{Error, Result};
use crate::models::{Generator, GeneratorVars};
use crate::numcore::{kernels, lit, ChannelStats, Element, Graph, Tensor, Var, EPS_STD};

/// AdaIN of a (B, C, H, W) feature map: channel `c` of item `b` is
/// re-normalized to `target[b]` (or `target[0]` for every item when a single
/// target is given).
pub fn adain<T: Element>(f_c: &Tensor<T>, target: &[ChannelStats<T>]) -> Result<Tensor<T>> {
    let (b, c, plane) = match *f_c.shape() {
        [b, c, h, w] => (b, c, h * w),
        ref s => return Err(Error::shape(format!("adain expects (B,C,H,W), got {s:?}"))),
    };
    if target.len() != 1 && target.len() != b {
        return Err(Error::shape(format!("{} targets for a batch of {b}", target.len())));
    }
    if let Some(t) = target.iter().find(|t| t.channels() != c) {
        return Err(Error::shape(format!("target has {} channels, features {c}", t.channels())));
    }
    let pick = |i: usize| &target[if target.len() == 1 { 0 } else { i }];
    let mu: Vec<T> = (0..b).flat_map(|i| pick(i).mu.iter().copied()).collect();
    let sigma: Vec<T> = (0..b).flat_map(|i| pick(i).sigma.iter().copied()).collect();
    let (out, _) = kernels::adain_forward(f_c.data(), plane, &mu, &sigma);
    Tensor::new(f_c.shape(), out)
}

/// Mean squared error between decoded-image features and the AdaIN target.
pub fn content_loss<T: Element>(g: &mut Graph<T>, f_out: Var, t: Var) -> Result<Var> {
    g.mse(f_out, t)
}

/// Sum over layers of the batch-mean of `|mu_out - mu_style| + |sigma_out - sigma_style|`,
/// all statistics given as (B, C) nodes.
pub fn style_loss_from_stats<T: Element>(g: &mut Graph<T>, out: &[(Var, Var)], style: &[(Var, Var)]) -> Result<Var> {
    if out.len() != style.len() || out.is_empty() {
        return Err(Error::shape(format!("{} output layers vs {} style layers", out.len(), style.len())));
    }
    let mut total: Option<Var> = None;
    for (&(mo, so), &(ms, ss)) in out.iter().zip(style) {
        let dm = g.sub(mo, ms)?;
        let dm = g.row_norm(dm)?;
        let dm = g.mean(dm);
        let ds = g.sub(so, ss)?;
        let ds = g.row_norm(ds)?;
        let ds = g.mean(ds);
        let layer = g.add(dm, ds)?;
        total = Some(match total {
            Some(t) => g.add(t, layer)?,
            None => layer,
        });
    }
    Ok(total.expect("at least one layer"))
}

/// Channel statistics of each encoder stage.
pub fn stage_stats<T: Element>(g: &mut Graph<T>, stages: &[Var]) -> Result<Vec<(Var, Var)>> {
    stages
        .iter()
        .map(|&s| Ok((g.channel_mean(s)?, g.channel_std(s)?)))
        .collect()
}

/// Style loss of the decoded image's encoder stages against style statistics.
pub fn style_loss<T: Element>(g: &mut Graph<T>, out_stages: &[Var], style: &[(Var, Var)]) -> Result<Var> {
    let out = stage_stats(g, out_stages)?;
    style_loss_from_stats(g, &out, style)
}

/// KL[N(psi, xi) || N(0, I)], summed over dimensions.
pub fn kl_loss<T: Element>(p: &StylePosterior<T>) -> Result<f64> {
    let mut total = 0.0;
    for (&m, &s) in p.psi.iter().zip(&p.xi) {
        let (m, s) = (m.to_f64().expect("finite"), s.to_f64().expect("finite"));
        if !(s > 0.0) {
            return Err(Error::contract(format!("posterior std must be positive, got {s}")));
        }
        total += 0.5 * (m * m + s * s - 1.0 - 2.0 * s.ln());
    }
    Ok(total)
}

/// Euclidean distance between a style code and its reconstruction.
pub fn rec_loss<T: Element>(code: &StyleCode<T>, code_hat: &StyleCode<T>) -> Result<f64> {
    if code.len() != code_hat.len() {
        return Err(Error::contract(format!(
            "style codes of length {} and {}",
            code.len(),
            code_hat.len()
        )));
    }
    Ok(code
        .0
        .iter()
        .zip(&code_hat.0)
        .map(|(a, b)| (*a - *b).to_f64().expect("finite").powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Reparameterized draw `eps = psi + xi * eta`.
pub fn sample_latent<T: Element>(p: &StylePosterior<T>, eta: &[T]) -> Result<StyleLatent<T>> {
    if eta.len() != p.dim() {
        return Err(Error::shape(format!("noise of length {} for dimension {}", eta.len(), p.dim())));
    }
    StyleLatent::new(
        p.psi
            .iter()
            .zip(&p.xi)
            .zip(eta)
            .map(|((&m, &s), &e)| m + s * e)
            .collect(),
    )
}

/// Graph form of `sample_latent` over (N, d) nodes.
pub fn sample_latent_graph<T: Element>(g: &mut Graph<T>, psi: Var, xi: Var, eta: Var) -> Result<Var> {
    let spread = g.mul(xi, eta)?;
    g.add(psi, spread)
}

/// Splits (N, 2C) style codes into the AdaIN target (mu, floored sigma).
pub fn split_code<T: Element>(g: &mut Graph<T>, code: Var, channels: usize) -> Result<(Var, Var)> {
    let mu = g.slice_cols(code, 0, channels)?;
    let sd = g.slice_cols(code, channels, channels)?;
    Ok((mu, g.clamp_min(sd, lit(EPS_STD))))
}

/// `D(adain(f_c, split(D_vae(eps))))` with `eps` given as (B, d) rows, one per
/// content feature map.
pub fn stylize_graph<T: Element>(
    gen: &Generator<T>,
    g: &mut Graph<T>,
    vars: &GeneratorVars,
    f_c: Var,
    eps: Var,
) -> Result<Var> {
    let code = gen.vae_decode_graph(g, vars, eps)?;
    let (mu, sd) = split_code(g, code, gen.cfg.channels)?;
    let t = g.adain(f_c, mu, sd)?;
    gen.decode_graph(g, vars, t)
}

/// Stylizes every image of a content batch with the single latent `eps`.
pub fn stylize<T: Element>(gen: &Generator<T>, x: &Tensor<T>, eps: &StyleLatent<T>) -> Result<Tensor<T>> {
    gen.require_trained()?;
    if eps.dim() != gen.cfg.latent_dim {
        return Err(Error::shape(format!("latent length {} vs {}", eps.dim(), gen.cfg.latent_dim)));
    }
    let mut g = Graph::new();
    let vars = gen.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let f_c = *gen.encoder_stages(&mut g, &vars, xv)?.last().expect("four stages");
    let b = x.shape()[0];
    let e = g.constant(eps.to_tensor());
    let rows = g.gather_rows(e, &vec![0; b])?;
    let y = stylize_graph(gen, &mut g, &vars, f_c, rows)?;
    Ok(g.value(y).clone())
}

/// Style code (mu, sigma of `E(x)`) of each image in a batch.
pub fn style_codes<T: Element>(gen: &Generator<T>, x: &Tensor<T>) -> Result<Vec<StyleCode<T>>> {
    let f = gen.encode(x)?;
    Ok(crate::numcore::channel_stats(&f)?.iter().map(StyleCode::from_stats).collect())
}

/// Plain AdaIN stylization with a style image's own statistics, bypassing
/// the style VAE.
pub fn stylize_direct<T: Element>(gen: &Generator<T>, x: &Tensor<T>, style: &Tensor<T>) -> Result<Tensor<T>> {
    let f_c = gen.encode(x)?;
    let target = crate::numcore::channel_stats(&gen.encode(style)?)?;
    if target.len() != 1 {
        return Err(Error::shape("direct stylization takes exactly one style image"));
    }
    gen.decode(&adain(&f_c, &target)?)
}

/// Lays images out in a grid: `rows` rows of `(B / rows)` images each, as a
/// single (3, rows * H, cols * W) image.
pub fn tile<T: Element>(images: &Tensor<T>, rows: usize) -> Result<Tensor<T>> {
    let (b, h, w) = match *images.shape() {
        [b, 3, h, w] if rows > 0 && b % rows == 0 => (b, h, w),
        ref s => return Err(Error::shape(format!("cannot tile {s:?} into {rows} rows"))),
    };
    let cols = b / rows;
    let (gh, gw) = (rows * h, cols * w);
    let mut out = vec![T::zero(); 3 * gh * gw];
    for (i, img) in images.data().chunks(3 * h * w).enumerate() {
        let (r, c0) = (i / cols, i % cols);
        for ch in 0..3 {
            for y in 0..h {
                let src = &img[ch * h * w + y * w..ch * h * w + (y + 1) * w];
                let dst = ch * gh * gw + (r * h + y) * gw + c0 * w;
                out[dst..dst + w].copy_from_slice(src);
            }
        }
    }
    Tensor::new(&[3, gh, gw], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn stats(mu: &[f64], sigma: &[f64]) -> ChannelStats<f64> {
        ChannelStats::new(mu.to_vec(), sigma.to_vec()).unwrap()
    }

    #[test]
    fn adain_hand_example() {
        let f = Tensor::from_f64(&[1, 1, 1, 2], &[1.0, 3.0]).unwrap();
        let y = adain(&f, &[stats(&[5.0], &[2.0])]).unwrap();
        assert_abs_diff_eq!(y.data()[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y.data()[1], 7.0, epsilon = 1e-12);
    }

    #[test]
    fn adain_identity_and_floor() {
        let f = Tensor::from_f64(&[1, 2, 1, 3], &[0.1, 0.5, 0.9, 2.0, -1.0, 0.0]).unwrap();
        let own = crate::numcore::channel_stats(&f).unwrap();
        let y = adain(&f, &own).unwrap();
        assert!(y.data().iter().zip(f.data()).all(|(a, b): (&f64, &f64)| (a - b).abs() <= 1e-6));
        let flat = adain(&f, &[stats(&[4.0, -2.0], &[EPS_STD, EPS_STD])]).unwrap();
        assert!(flat.data()[..3].iter().all(|v| (v - 4.0).abs() < 1e-4));
        assert!(flat.data()[3..].iter().all(|v| (v + 2.0).abs() < 1e-4));
        assert!(adain(&f, &[stats(&[0.0], &[1.0])]).is_err());
    }

    #[test]
    fn loss_closed_forms() {
        let p = |psi: f64, xi: f64| StylePosterior::new(vec![psi], vec![xi]).unwrap();
        assert_eq!(kl_loss(&StylePosterior::<f64>::standard(4)).unwrap(), 0.0);
        assert_abs_diff_eq!(kl_loss(&p(1.0, 1.0)).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(kl_loss(&p(0.0, 2.0)).unwrap(), 0.5 * (3.0 - 2.0 * 2f64.ln()), epsilon = 1e-12);
        let a = StyleCode(vec![0.0, 0.0]);
        let b = StyleCode(vec![3.0, 4.0]);
        assert_eq!(rec_loss(&a, &b).unwrap(), 5.0);
        assert_eq!(rec_loss(&b, &a).unwrap(), 5.0);
        assert_eq!(rec_loss(&a, &a).unwrap(), 0.0);
        assert!(rec_loss(&a, &StyleCode(vec![1.0])).is_err());
    }

    #[test]
    fn style_loss_hand_example() {
        let mut g = Graph::<f64>::new();
        let mo = g.constant(Tensor::from_f64(&[1, 2], &[3.0, 4.0]).unwrap());
        let so = g.constant(Tensor::from_f64(&[1, 2], &[1.0, 1.0]).unwrap());
        let ms = g.constant(Tensor::zeros(&[1, 2]));
        let l = style_loss_from_stats(&mut g, &[(mo, so)], &[(ms, so)]).unwrap();
        assert_abs_diff_eq!(g.value(l).item().unwrap(), 5.0, epsilon = 1e-12);
        let same = style_loss_from_stats(&mut g, &[(mo, so)], &[(mo, so)]).unwrap();
        assert_eq!(g.value(same).item().unwrap(), 0.0);
        let c = content_loss(&mut g, mo, mo).unwrap();
        assert_eq!(g.value(c).item().unwrap(), 0.0);
    }

    #[test]
    fn sampling_examples() {
        let p = StylePosterior::new(vec![0.0, 1.0], vec![2.0, 0.5]).unwrap();
        assert_eq!(sample_latent(&p, &[0.0, 0.0]).unwrap().epsilon, p.psi);
        assert_eq!(sample_latent(&p, &[1.5, 0.0]).unwrap().epsilon[0], 3.0);
        assert!(sample_latent(&p, &[1.0]).is_err());
    }

    #[test]
    fn tile_places_images() {
        let imgs = Tensor::new(&[2, 3, 1, 1], vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let t = tile(&imgs, 1).unwrap();
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }
}
