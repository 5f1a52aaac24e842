use crate::error::{Error, Result};
use crate::models::{check_images, conv, fc, Init, NetConfig};
use crate::numcore::{Bound, Element, Graph, ParamSet, Tensor, Var};
use crate::rain::{StyleCode, StyleLatent, StylePosterior};

/// The stylized-image generator: encoder E, decoder D and the style VAE
/// (E_vae, D_vae). The encoder is frozen once pretrained; everything else is
/// trained by `rain::train_rain` and frozen afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T> {
    pub cfg: NetConfig,
    pub encoder: ParamSet<T>,
    pub decoder: ParamSet<T>,
    pub vae_enc: ParamSet<T>,
    pub vae_dec: ParamSet<T>,
    trained: bool,
}

/// Tape handles for a bound generator.
#[derive(Debug, Clone)]
pub struct GeneratorVars {
    pub enc: Bound,
    pub dec: Bound,
    pub vae_enc: Bound,
    pub vae_dec: Bound,
}

pub(crate) const ENC_LAYERS: [&str; 4] = ["enc1", "enc2", "enc3", "enc4"];
const ENC_STRIDES: [usize; 4] = [1, 2, 1, 2];

impl<T: Element> Generator<T> {
    /// Freshly initialized generator; deterministic in `seed`.
    pub fn new(cfg: NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (c, h) = (cfg.channels, cfg.half_channels());

        let mut encoder = ParamSet::new();
        let mut init = Init::new(seed, 1);
        init.conv(&mut encoder, "enc1", 3, h, 3)?;
        init.conv(&mut encoder, "enc2", h, c, 3)?;
        init.conv(&mut encoder, "enc3", c, c, 3)?;
        init.conv(&mut encoder, "enc4", c, c, 3)?;

        let mut decoder = ParamSet::new();
        let mut init = Init::new(seed, 2);
        init.conv(&mut decoder, "dec1", c, c, 3)?;
        init.conv(&mut decoder, "dec2", c, h, 3)?;
        init.conv(&mut decoder, "dec3", h, h, 3)?;
        init.conv(&mut decoder, "dec4", h, 3, 3)?;

        let mut vae_enc = ParamSet::new();
        let mut init = Init::new(seed, 3);
        init.fc(&mut vae_enc, "venc1", cfg.code_len(), cfg.vae_hidden)?;
        init.fc(&mut vae_enc, "venc2", cfg.vae_hidden, 2 * cfg.latent_dim)?;

        let mut vae_dec = ParamSet::new();
        let mut init = Init::new(seed, 4);
        init.fc(&mut vae_dec, "vdec1", cfg.latent_dim, cfg.vae_hidden)?;
        init.fc(&mut vae_dec, "vdec2", cfg.vae_hidden, cfg.code_len())?;

        Ok(Generator {
            cfg,
            encoder,
            decoder,
            vae_enc,
            vae_dec,
            trained: false,
        })
    }

    /// Reassembles a generator from stored parameter sets, checking every
    /// tensor against a fresh initialization of `cfg`.
    pub fn from_parts(
        cfg: NetConfig,
        parts: [ParamSet<T>; 4],
        trained: bool,
    ) -> Result<Self> {
        let reference = Self::new(cfg, 0)?;
        let [encoder, decoder, vae_enc, vae_dec] = parts;
        for (got, want, what) in [
            (&encoder, &reference.encoder, "encoder"),
            (&decoder, &reference.decoder, "decoder"),
            (&vae_enc, &reference.vae_enc, "style encoder"),
            (&vae_dec, &reference.vae_dec, "style decoder"),
        ] {
            same_layout(got, want, what)?;
        }
        Ok(Generator {
            cfg,
            encoder,
            decoder,
            vae_enc,
            vae_dec,
            trained,
        })
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    pub(crate) fn require_trained(&self) -> Result<()> {
        if !self.trained {
            return Err(Error::contract("generator has not been trained"));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.parts().iter().map(|(_, p)| p.num_scalars()).sum()
    }

    /// Parameter sets with their checkpoint prefixes.
    pub fn parts(&self) -> [(&'static str, &ParamSet<T>); 4] {
        [
            ("E", &self.encoder),
            ("D", &self.decoder),
            ("Evae", &self.vae_enc),
            ("Dvae", &self.vae_dec),
        ]
    }

    pub fn cast<U: Element>(&self) -> Generator<U> {
        Generator {
            cfg: self.cfg,
            encoder: self.encoder.cast(),
            decoder: self.decoder.cast(),
            vae_enc: self.vae_enc.cast(),
            vae_dec: self.vae_dec.cast(),
            trained: self.trained,
        }
    }

    /// Binds all parameters. The encoder is always constant; `train_rest`
    /// decides whether decoder and style VAE receive gradients.
    pub fn bind(&self, g: &mut Graph<T>, train_rest: bool) -> GeneratorVars {
        GeneratorVars {
            enc: self.encoder.bind(g, false),
            dec: self.decoder.bind(g, train_rest),
            vae_enc: self.vae_enc.bind(g, train_rest),
            vae_dec: self.vae_dec.bind(g, train_rest),
        }
    }

    /// Post-ReLU activations of the four encoder layers; the last one is the
    /// feature map `f = E(x)` of shape (B, C, side/4, side/4).
    pub fn encoder_stages(&self, g: &mut Graph<T>, vars: &GeneratorVars, x: Var) -> Result<Vec<Var>> {
        encoder_forward(&self.cfg, g, &vars.enc, x)
    }

    /// Decoder: feature map -> image in [0, 1].
    pub fn decode_graph(&self, g: &mut Graph<T>, vars: &GeneratorVars, f: Var) -> Result<Var> {
        decoder_forward(&self.cfg, g, &vars.dec, f)
    }

    /// Style codes (N, 2C) -> posterior (psi, xi), each (N, d), xi = exp(head).
    pub fn vae_encode_graph(&self, g: &mut Graph<T>, vars: &GeneratorVars, code: Var) -> Result<(Var, Var)> {
        let d = self.cfg.latent_dim;
        let h = fc(g, &vars.vae_enc, "venc1", code)?;
        let h = g.relu(h);
        let out = fc(g, &vars.vae_enc, "venc2", h)?;
        let psi = g.slice_cols(out, 0, d)?;
        let log_xi = g.slice_cols(out, d, d)?;
        Ok((psi, g.exp(log_xi)))
    }

    /// Latents (N, d) -> reconstructed style codes (N, 2C), unfloored.
    pub fn vae_decode_graph(&self, g: &mut Graph<T>, vars: &GeneratorVars, eps: Var) -> Result<Var> {
        let h = fc(g, &vars.vae_dec, "vdec1", eps)?;
        let h = g.relu(h);
        fc(g, &vars.vae_dec, "vdec2", h)
    }

    pub fn encode_stages(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let stages = self.encoder_stages(&mut g, &vars, xv)?;
        Ok(stages.into_iter().map(|v| g.value(v).clone()).collect())
    }

    /// `E(x)` for a batch of images.
    pub fn encode(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.encode_stages(x)?.pop().expect("four stages"))
    }

    /// `D(f)` for a batch of feature maps.
    pub fn decode(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let fv = g.constant(f.clone());
        let y = self.decode_graph(&mut g, &vars, fv)?;
        Ok(g.value(y).clone())
    }

    pub fn vae_encode(&self, code: &StyleCode<T>) -> Result<StylePosterior<T>> {
        if code.len() != self.cfg.code_len() {
            return Err(Error::shape(format!(
                "style code length {} vs {}",
                code.len(),
                self.cfg.code_len()
            )));
        }
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let cv = g.constant(code.to_tensor());
        let (psi, xi) = self.vae_encode_graph(&mut g, &vars, cv)?;
        StylePosterior::new(g.value(psi).data().to_vec(), g.value(xi).data().to_vec())
    }

    pub fn vae_decode(&self, eps: &StyleLatent<T>) -> Result<StyleCode<T>> {
        if eps.dim() != self.cfg.latent_dim {
            return Err(Error::shape(format!(
                "latent length {} vs {}",
                eps.dim(),
                self.cfg.latent_dim
            )));
        }
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let ev = g.constant(eps.to_tensor());
        let code = self.vae_decode_graph(&mut g, &vars, ev)?;
        Ok(StyleCode(g.value(code).data().to_vec()))
    }
}

/// Decoder layers applied to a bound decoder parameter set.
pub fn decoder_forward<T: Element>(cfg: &NetConfig, g: &mut Graph<T>, p: &Bound, f: Var) -> Result<Var> {
    let fs = cfg.feature_side();
    match *g.shape(f) {
        [_, c, h, w] if c == cfg.channels && h == fs && w == fs => {}
        ref s => return Err(Error::shape(format!("decoder input {s:?}"))),
    }
    let h = conv(g, p, "dec1", f, 1)?;
    let h = g.relu(h);
    let h = g.upsample2(h)?;
    let h = conv(g, p, "dec2", h, 1)?;
    let h = g.relu(h);
    let h = g.upsample2(h)?;
    let h = conv(g, p, "dec3", h, 1)?;
    let h = g.relu(h);
    let h = conv(g, p, "dec4", h, 1)?;
    Ok(g.sigmoid(h))
}

/// Four conv+ReLU stages, strides 1, 2, 1, 2, applied to a bound encoder
/// parameter set.
pub fn encoder_forward<T: Element>(cfg: &NetConfig, g: &mut Graph<T>, enc: &Bound, x: Var) -> Result<Vec<Var>> {
    check_images(cfg, g.value(x))?;
    let mut h = x;
    let mut stages = Vec::with_capacity(4);
    for (name, stride) in ENC_LAYERS.iter().zip(ENC_STRIDES) {
        let y = conv(g, enc, name, h, stride)?;
        h = g.relu(y);
        stages.push(h);
    }
    Ok(stages)
}

pub(crate) fn same_layout<T: Element>(got: &ParamSet<T>, want: &ParamSet<T>, what: &str) -> Result<()> {
    let names: Vec<&str> = got.names().collect();
    let expected: Vec<&str> = want.names().collect();
    if names != expected {
        return Err(Error::contract(format!(
            "{what} parameters {names:?} do not match expected {expected:?}"
        )));
    }
    for ((name, a), (_, b)) in got.iter().zip(want.iter()) {
        if a.value.shape() != b.value.shape() {
            return Err(Error::shape(format!(
                "{what} parameter `{name}` has shape {:?}, expected {:?}",
                a.value.shape(),
                b.value.shape()
            )));
        }
    }
    Ok(())
}
