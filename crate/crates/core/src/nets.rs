//! The five players: encoder, decoder, generator, discriminator, classifier.
//!
//! Encoder, discriminator and classifier share one feature extractor layout
//! (strided convolutions, then a dense projection to the latent width). The
//! decoder and generator mirror it with transposed convolutions.

use lpgan_autodiff::{exec, Bound, ConvGeom, Graph, ParamSet, Real, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::advtrain::GanFunctional;
use crate::rng::{self, streams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub const fn new(channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            channels,
            kernel,
            stride,
            padding,
        }
    }
}

/// Layer layout shared by all five networks.
///
/// Encoder layers are convolutions followed by leaky ReLU. Decoder layers are
/// transposed convolutions; `channels` is each layer's output width and the
/// last one ends in a logistic sigmoid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    /// `[height, width, channels]`.
    pub input_shape: [usize; 3],
    pub latent_dim: usize,
    pub encoder_layers: Vec<ConvSpec>,
    pub decoder_layers: Vec<ConvSpec>,
    pub leaky_slope: f64,
    pub classifier_dropout_rate: f64,
}

impl ArchitectureSpec {
    /// Decoder layers that invert `encoder_layers`.
    pub fn mirrored(input_shape: [usize; 3], latent_dim: usize, encoder_layers: Vec<ConvSpec>) -> Self {
        let mut inputs = vec![input_shape[2]];
        inputs.extend(encoder_layers.iter().map(|l| l.channels));
        let decoder_layers = encoder_layers
            .iter()
            .enumerate()
            .rev()
            .map(|(i, l)| ConvSpec { channels: inputs[i], ..*l })
            .collect();
        Self {
            input_shape,
            latent_dim,
            encoder_layers,
            decoder_layers,
            leaky_slope: 0.2,
            classifier_dropout_rate: 0.3,
        }
    }

    /// 28×28 grayscale: two stride-2 convolutions (16, 32 channels), q = 64.
    pub fn mnist() -> Self {
        Self::mirrored(
            [28, 28, 1],
            64,
            vec![ConvSpec::new(16, 4, 2, 1), ConvSpec::new(32, 4, 2, 1)],
        )
    }

    /// 8×8 grayscale for the synthetic blobs.
    pub fn synthetic() -> Self {
        Self::mirrored([8, 8, 1], 8, vec![ConvSpec::new(8, 4, 2, 1), ConvSpec::new(16, 4, 2, 1)])
    }

    /// 4×4 grayscale, under 40 parameters per network. Used for gradient checks.
    pub fn tiny() -> Self {
        Self::mirrored([4, 4, 1], 2, vec![ConvSpec::new(2, 2, 2, 0)])
    }

    /// Resolve layer geometry, rejecting layouts whose decoder does not
    /// reproduce the input shape.
    pub fn plan(&self) -> Result<Plan> {
        let [h0, w0, c0] = self.input_shape;
        if h0 == 0 || w0 == 0 || c0 == 0 {
            return Err(Error::Shape(format!("empty input shape {:?}", self.input_shape)));
        }
        if self.latent_dim == 0 {
            return Err(Error::Shape("latent_dim must be positive".into()));
        }
        if self.encoder_layers.is_empty() {
            return Err(Error::Shape("at least one encoder layer is required".into()));
        }
        if !(0.0..1.0).contains(&self.classifier_dropout_rate) {
            return Err(Error::Shape(format!(
                "dropout rate {} outside [0, 1)",
                self.classifier_dropout_rate
            )));
        }
        let (mut h, mut w, mut c) = (h0, w0, c0);
        let mut encoder = Vec::with_capacity(self.encoder_layers.len());
        for (i, l) in self.encoder_layers.iter().enumerate() {
            let geom = ConvGeom::new(1, h, w, c, l.kernel, l.stride, l.padding)
                .ok_or_else(|| Error::Shape(format!("encoder layer {i} does not fit a {h}x{w} input")))?;
            encoder.push(LayerPlan { geom, out_channels: l.channels });
            (h, w, c) = (geom.ho, geom.wo, l.channels);
        }
        let feature_shape = [h, w, c];
        let mut decoder = Vec::with_capacity(self.decoder_layers.len());
        for (i, l) in self.decoder_layers.iter().enumerate() {
            let ho = ((h - 1) * l.stride + l.kernel).checked_sub(2 * l.padding);
            let wo = ((w - 1) * l.stride + l.kernel).checked_sub(2 * l.padding);
            let geom = ho
                .zip(wo)
                .and_then(|(ho, wo)| ConvGeom::new(1, ho, wo, l.channels, l.kernel, l.stride, l.padding))
                .filter(|g| g.ho == h && g.wo == w)
                .ok_or_else(|| Error::Shape(format!("decoder layer {i} cannot upsample {h}x{w}")))?;
            decoder.push(LayerPlan { geom, out_channels: l.channels });
            (h, w, c) = (geom.h, geom.w, l.channels);
        }
        if [h, w, c] != self.input_shape {
            return Err(Error::Shape(format!(
                "decoder produces {:?}, expected input shape {:?}",
                [h, w, c],
                self.input_shape
            )));
        }
        Ok(Plan {
            encoder,
            decoder,
            feature_shape,
            latent_dim: self.latent_dim,
            input_shape: self.input_shape,
            slope: self.leaky_slope,
            dropout: self.classifier_dropout_rate,
        })
    }
}

/// One resolved layer. For transposed convolutions `geom` describes the
/// forward convolution over the layer's *output*.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerPlan {
    pub geom: ConvGeom,
    pub out_channels: usize,
}

/// Resolved geometry of an [`ArchitectureSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub encoder: Vec<LayerPlan>,
    pub decoder: Vec<LayerPlan>,
    pub feature_shape: [usize; 3],
    pub latent_dim: usize,
    pub input_shape: [usize; 3],
    pub slope: f64,
    pub dropout: f64,
}

impl Plan {
    pub fn feature_len(&self) -> usize {
        self.feature_shape.iter().product()
    }

    pub fn image_len(&self) -> usize {
        self.input_shape.iter().product()
    }
}

/// Parameters of all five networks.
///
/// `gen` has exactly the names and shapes of `dec`; `dis` and `clf` share
/// the feature-extractor names (`conv*`, `latent.*`) with `enc` and add a
/// `head.*` of width 1 and `num_classes` respectively.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkBundle<T = f32> {
    pub arch: ArchitectureSpec,
    pub num_classes: usize,
    pub seed: u64,
    pub enc: ParamSet<T>,
    pub dec: ParamSet<T>,
    pub gen: ParamSet<T>,
    pub dis: ParamSet<T>,
    pub clf: ParamSet<T>,
    plan: Plan,
}

fn uniform<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.gen_range(-bound..bound))).collect();
    Tensor::from_vec(shape, data).expect("init shape")
}

fn init_dense<T: Real>(set: &mut ParamSet<T>, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) {
    set.insert(format!("{name}.w"), uniform(rng, &[fan_in, fan_out], fan_in));
    set.insert(format!("{name}.b"), uniform(rng, &[fan_out], fan_in));
}

fn init_features<T: Real>(plan: &Plan, rng: &mut ChaCha8Rng) -> ParamSet<T> {
    let mut set = ParamSet::new();
    for (i, l) in plan.encoder.iter().enumerate() {
        let fan_in = l.geom.patch_len();
        set.insert(format!("conv{i}.w"), uniform(rng, &[l.out_channels, fan_in], fan_in));
        set.insert(format!("conv{i}.b"), uniform(rng, &[l.out_channels], fan_in));
    }
    init_dense(&mut set, "latent", plan.feature_len(), plan.latent_dim, rng);
    set
}

fn init_decoder<T: Real>(plan: &Plan, rng: &mut ChaCha8Rng) -> ParamSet<T> {
    let mut set = ParamSet::new();
    init_dense(&mut set, "fc", plan.latent_dim, plan.feature_len(), rng);
    let mut in_channels = plan.feature_shape[2];
    for (i, l) in plan.decoder.iter().enumerate() {
        let fan_in = l.geom.patch_len();
        set.insert(format!("deconv{i}.w"), uniform(rng, &[in_channels, fan_in], fan_in));
        set.insert(format!("deconv{i}.b"), uniform(rng, &[l.out_channels], fan_in));
        in_channels = l.out_channels;
    }
    set
}

fn init_head<T: Real>(set: &mut ParamSet<T>, name: &str, plan: &Plan, width: usize, rng: &mut ChaCha8Rng) {
    init_dense(set, name, plan.latent_dim, width, rng);
}

/// Seeded construction plus a zero-input dry run through every network.
pub fn build_networks<T: Real>(arch: &ArchitectureSpec, num_classes: usize, seed: u64) -> Result<NetworkBundle<T>> {
    if num_classes == 0 {
        return Err(Error::Shape("num_classes must be positive".into()));
    }
    let plan = arch.plan()?;
    let mut rng = rng::stream(seed, streams::INIT);
    let mut enc = init_features(&plan, &mut rng);
    init_head(&mut enc, "cls", &plan, num_classes, &mut rng);
    let dec = init_decoder(&plan, &mut rng);
    let gen = init_decoder(&plan, &mut rng);
    let mut dis = init_features(&plan, &mut rng);
    init_head(&mut dis, "head", &plan, 1, &mut rng);
    let mut clf = init_features(&plan, &mut rng);
    init_head(&mut clf, "head", &plan, num_classes, &mut rng);
    let bundle = NetworkBundle {
        arch: arch.clone(),
        num_classes,
        seed,
        enc,
        dec,
        gen,
        dis,
        clf,
        plan,
    };
    bundle.dry_run()?;
    Ok(bundle)
}

/// Copy pretrained decoder weights into the generator and pretrained encoder
/// feature layers into the discriminator and classifier; reseed both heads.
pub fn transfer_init<T: Real>(bundle: &NetworkBundle<T>) -> Result<NetworkBundle<T>> {
    let mut out = bundle.clone();
    copy_matching(&bundle.dec, &mut out.gen, |_| true)?;
    let is_feature = |name: &str| name.starts_with("conv") || name.starts_with("latent.");
    copy_matching(&bundle.enc, &mut out.dis, is_feature)?;
    copy_matching(&bundle.enc, &mut out.clf, is_feature)?;
    let mut rng = rng::stream(bundle.seed, streams::HEADS);
    init_head(&mut out.dis, "head", &bundle.plan, 1, &mut rng);
    init_head(&mut out.clf, "head", &bundle.plan, bundle.num_classes, &mut rng);
    Ok(out)
}

/// Overwrite every recipient parameter selected by `pick` with the donor's.
fn copy_matching<T: Real>(donor: &ParamSet<T>, recipient: &mut ParamSet<T>, pick: impl Fn(&str) -> bool) -> Result<()> {
    for (name, slot) in recipient.iter_mut().filter(|(n, _)| pick(n)) {
        let src = donor.get(name).ok_or_else(|| Error::Transfer {
            name: name.clone(),
            reason: "missing from donor".into(),
        })?;
        if src.shape() != slot.shape() {
            return Err(Error::Transfer {
                name: name.clone(),
                reason: format!("donor shape {:?} vs recipient {:?}", src.shape(), slot.shape()),
            });
        }
        *slot = src.clone();
    }
    Ok(())
}

/// Inverted dropout with its own random stream.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn apply<'g, T: Real>(&mut self, x: Var<'g, T>) -> Var<'g, T> {
        if self.rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - self.rate;
        let scale = T::of(1.0 / keep);
        let shape = x.shape();
        let n = shape.iter().product();
        let mask: Vec<T> = (0..n)
            .map(|_| if self.rng.gen_bool(keep) { scale } else { T::zero() })
            .collect();
        x.mul_const(std::rc::Rc::new(Tensor::from_vec(&shape, mask).expect("mask")))
    }
}

/// Graph-level forward passes.
pub mod forward {
    use super::*;

    fn conv<'g, T: Real>(x: Var<'g, T>, l: &LayerPlan, w: Var<'g, T>, b: Var<'g, T>) -> Var<'g, T> {
        let n = x.shape()[0];
        let geom = l.geom.with_batch(n);
        x.im2col(geom)
            .matmul_t(w, false, true)
            .add_bias(b)
            .reshape(&[n, geom.ho, geom.wo, l.out_channels])
    }

    fn deconv<'g, T: Real>(x: Var<'g, T>, l: &LayerPlan, w: Var<'g, T>, b: Var<'g, T>) -> Var<'g, T> {
        let shape = x.shape();
        let (n, h, wd, c) = (shape[0], shape[1], shape[2], shape[3]);
        let geom = l.geom.with_batch(n);
        x.reshape(&[n * h * wd, c]).matmul(w).col2im(geom).add_bias(b)
    }

    fn dense<'g, T: Real>(x: Var<'g, T>, p: &Bound<'g, T>, name: &str) -> Var<'g, T> {
        x.matmul(p.get(&format!("{name}.w"))).add_bias(p.get(&format!("{name}.b")))
    }

    /// Latent projection `[n, q]` of images `[n, h, w, c]`, before any activation.
    pub fn features<'g, T: Real>(
        plan: &Plan,
        p: &Bound<'g, T>,
        x: Var<'g, T>,
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Var<'g, T> {
        let n = x.shape()[0];
        let slope = T::of(plan.slope);
        let mut h = x;
        for (i, l) in plan.encoder.iter().enumerate() {
            h = conv(h, l, p.get(&format!("conv{i}.w")), p.get(&format!("conv{i}.b"))).leaky_relu(slope);
            if let Some(d) = dropout.as_deref_mut() {
                h = d.apply(h);
            }
        }
        dense(h.reshape(&[n, plan.feature_len()]), p, "latent")
    }

    /// `(z, log class probabilities)`.
    pub fn encode<'g, T: Real>(plan: &Plan, enc: &Bound<'g, T>, x: Var<'g, T>) -> (Var<'g, T>, Var<'g, T>) {
        let z = features(plan, enc, x, None);
        let logp = dense(z, enc, "cls").log_softmax();
        (z, logp)
    }

    /// Decoder and generator share this body.
    pub fn decode<'g, T: Real>(plan: &Plan, dec: &Bound<'g, T>, z: Var<'g, T>) -> Var<'g, T> {
        let n = z.shape()[0];
        let slope = T::of(plan.slope);
        let [fh, fw, fc] = plan.feature_shape;
        let mut h = dense(z, dec, "fc").leaky_relu(slope).reshape(&[n, fh, fw, fc]);
        let last = plan.decoder.len() - 1;
        for (i, l) in plan.decoder.iter().enumerate() {
            h = deconv(h, l, dec.get(&format!("deconv{i}.w")), dec.get(&format!("deconv{i}.b")));
            h = if i == last { h.sigmoid() } else { h.leaky_relu(slope) };
        }
        h
    }

    /// Discriminator score before the output nonlinearity, shape `[n]`.
    pub fn dis_logit<'g, T: Real>(plan: &Plan, dis: &Bound<'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        let n = x.shape()[0];
        let h = features(plan, dis, x, None).leaky_relu(T::of(plan.slope));
        dense(h, dis, "head").reshape(&[n])
    }

    /// Classifier log-probabilities `[n, C]`; dropout follows every activation when given.
    pub fn classify_logp<'g, T: Real>(
        plan: &Plan,
        clf: &Bound<'g, T>,
        x: Var<'g, T>,
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Var<'g, T> {
        let mut h = features(plan, clf, x, dropout.as_deref_mut()).leaky_relu(T::of(plan.slope));
        if let Some(d) = dropout {
            h = d.apply(h);
        }
        dense(h, clf, "head").log_softmax()
    }
}

impl<T: Real> NetworkBundle<T> {
    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    /// Same weights in another precision.
    pub fn cast<U: Real>(&self) -> NetworkBundle<U> {
        NetworkBundle {
            arch: self.arch.clone(),
            num_classes: self.num_classes,
            seed: self.seed,
            enc: self.enc.cast(),
            dec: self.dec.cast(),
            gen: self.gen.cast(),
            dis: self.dis.cast(),
            clf: self.clf.cast(),
            plan: self.plan.clone(),
        }
    }

    /// Assemble from parameter sets, checking names and shapes against `arch`.
    pub fn from_parts(
        arch: &ArchitectureSpec,
        num_classes: usize,
        seed: u64,
        sets: [ParamSet<T>; 5],
    ) -> Result<Self> {
        let reference: NetworkBundle<T> = build_networks(arch, num_classes, 0)?;
        let [enc, dec, gen, dis, clf] = sets;
        for (label, got, want) in [
            ("enc", &enc, &reference.enc),
            ("dec", &dec, &reference.dec),
            ("gen", &gen, &reference.gen),
            ("dis", &dis, &reference.dis),
            ("clf", &clf, &reference.clf),
        ] {
            if got.len() != want.len() {
                return Err(Error::Shape(format!(
                    "{label}: {} parameters, architecture needs {}",
                    got.len(),
                    want.len()
                )));
            }
            for (name, t) in want.iter() {
                let actual = got
                    .get(name)
                    .ok_or_else(|| Error::Shape(format!("{label}.{name} missing")))?;
                if actual.shape() != t.shape() {
                    return Err(Error::Shape(format!(
                        "{label}.{name}: shape {:?}, architecture needs {:?}",
                        actual.shape(),
                        t.shape()
                    )));
                }
            }
        }
        Ok(Self {
            arch: arch.clone(),
            num_classes,
            seed,
            enc,
            dec,
            gen,
            dis,
            clf,
            plan: reference.plan,
        })
    }

    fn dry_run(&self) -> Result<()> {
        let x = Tensor::zeros(&[1, self.plan.input_shape[0], self.plan.input_shape[1], self.plan.input_shape[2]]);
        let z = Tensor::zeros(&[1, self.plan.latent_dim]);
        let (zz, probs) = self.encode(&x)?;
        let outputs = [
            zz,
            probs,
            self.decode(&z)?,
            self.generate(&z)?,
            self.discriminate(&x, GanFunctional::Wgan)?,
            self.classify(&x, None)?,
        ];
        if outputs.iter().all(Tensor::all_finite) {
            Ok(())
        } else {
            Err(Error::Numerical("dry run produced non-finite outputs".into()))
        }
    }

    pub fn check_images(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        if s.len() != 4 || s[1..] != self.plan.input_shape {
            return Err(Error::Shape(format!(
                "expected images [n, {}, {}, {}], got {:?}",
                self.plan.input_shape[0], self.plan.input_shape[1], self.plan.input_shape[2], s
            )));
        }
        Ok(())
    }

    pub fn check_latents(&self, z: &Tensor<T>) -> Result<()> {
        let s = z.shape();
        if s.len() != 2 || s[1] != self.plan.latent_dim {
            return Err(Error::Shape(format!(
                "expected latents [n, {}], got {:?}",
                self.plan.latent_dim, s
            )));
        }
        Ok(())
    }

    /// Latent codes `[n, q]` and class probabilities `[n, C]`.
    pub fn encode(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        self.check_images(x)?;
        let g = Graph::new();
        let enc = self.enc.bind(&g);
        let (z, logp) = forward::encode(&self.plan, &enc, g.leaf(x.clone()));
        let probs = logp.exp().value();
        Ok(((*z.value()).clone(), (*probs).clone()))
    }

    pub fn decode(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        self.run_decoder(&self.dec, z)
    }

    pub fn generate(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        self.run_decoder(&self.gen, z)
    }

    fn run_decoder(&self, set: &ParamSet<T>, z: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_latents(z)?;
        let g = Graph::new();
        let p = set.bind(&g);
        Ok((*forward::decode(&self.plan, &p, g.leaf(z.clone())).value()).clone())
    }

    /// Scores `[n]`: sigmoid-bounded for vanilla, raw for WGAN.
    pub fn discriminate(&self, x: &Tensor<T>, functional: GanFunctional) -> Result<Tensor<T>> {
        self.check_images(x)?;
        let g = Graph::new();
        let p = self.dis.bind(&g);
        let logit = forward::dis_logit(&self.plan, &p, g.leaf(x.clone()));
        let out = match functional {
            GanFunctional::Vanilla => logit.sigmoid(),
            GanFunctional::Wgan => logit,
        };
        Ok((*out.value()).clone())
    }

    /// Class probabilities `[n, C]`. Dropout is active only with a seed.
    pub fn classify(&self, x: &Tensor<T>, dropout_seed: Option<u64>) -> Result<Tensor<T>> {
        self.check_images(x)?;
        let g = Graph::new();
        let p = self.clf.bind(&g);
        let xv = g.leaf(x.clone());
        let logp = match dropout_seed {
            Some(seed) => {
                let mut rng = rng::stream(seed, streams::TRAIN);
                let mut d = Dropout {
                    rate: self.plan.dropout,
                    rng: &mut rng,
                };
                forward::classify_logp(&self.plan, &p, xv, Some(&mut d))
            }
            None => forward::classify_logp(&self.plan, &p, xv, None),
        };
        Ok((*logp.exp().value()).clone())
    }

    /// Feature-extractor output of the discriminator or classifier (`which`
    /// is `"dis"` or `"clf"`), before their heads.
    pub fn head_features(&self, which: &str, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_images(x)?;
        let set = match which {
            "dis" => &self.dis,
            "clf" => &self.clf,
            other => return Err(Error::Shape(format!("no feature extractor named {other:?}"))),
        };
        let g = Graph::new();
        let p = set.bind(&g);
        Ok((*forward::features(&self.plan, &p, g.leaf(x.clone()), None).value()).clone())
    }

    /// Evaluation-mode argmax predictions over `images`, computed in
    /// independent chunks (in parallel with the `parallel` feature).
    pub fn predict(&self, images: &Tensor<T>, chunk: usize) -> Result<Vec<usize>> {
        self.check_images(images)?;
        let n = images.shape()[0];
        let chunk = chunk.max(1);
        let parts = exec::map_indices(n.div_ceil(chunk), |i| {
            let part = images.slice_rows(i * chunk, ((i + 1) * chunk).min(n));
            let g = Graph::new();
            let p = self.clf.bind(&g);
            let logp = forward::classify_logp(&self.plan, &p, g.leaf(part), None).value();
            logp.data()
                .chunks(self.num_classes)
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .fold((0, T::neg_infinity()), |best, (c, &v)| if v > best.1 { (c, v) } else { best })
                        .0
                })
                .collect::<Vec<_>>()
        });
        Ok(parts.into_iter().flatten().collect())
    }

    /// Encode `images` in chunks, returning latents `[n, q]`.
    pub fn encode_all(&self, images: &Tensor<T>, chunk: usize) -> Result<Tensor<T>> {
        self.check_images(images)?;
        let n = images.shape()[0];
        let chunk = chunk.max(1);
        let parts = exec::map_indices(n.div_ceil(chunk), |i| {
            let part = images.slice_rows(i * chunk, ((i + 1) * chunk).min(n));
            let g = Graph::new();
            let p = self.enc.bind(&g);
            (*forward::features(&self.plan, &p, g.leaf(part), None).value()).clone()
        });
        if parts.is_empty() {
            return Ok(Tensor::zeros(&[0, self.plan.latent_dim]));
        }
        let refs: Vec<&Tensor<T>> = parts.iter().collect();
        Ok(Tensor::concat_rows(&refs))
    }
}
