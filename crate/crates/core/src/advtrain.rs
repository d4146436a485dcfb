//! Three-player adversarial training (ADSO, AMO) and the oversampled
//! classifier-only baseline.

use std::fmt;
use std::str::FromStr;

use lpgan_autodiff::{Adam, AdamConfig, Bound, Graph, Real, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{batch_iter, make_balanced_by_repetition, Batch, ImbalancedDataset, LabeledImageSet, Samples};
use crate::metrics::{acsa, confusion};
use crate::nets::{forward, Dropout, NetworkBundle, Plan};
use crate::rng::{self, streams};
use crate::slppl::{class_nll, ClassPriors, PROB_FLOOR};
use crate::{Error, Result};

/// The functional `f` applied to discriminator scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GanFunctional {
    /// `f(s) = ln s`, with `Dis = sigmoid(logit)`.
    #[default]
    Vanilla,
    /// `f(s) = s`, with `Dis` the raw critic output.
    Wgan,
}

/// Scalar `f(s)`; vanilla clamps `s` at `1e-12`.
pub fn f_apply(functional: GanFunctional, s: f64) -> f64 {
    match functional {
        GanFunctional::Vanilla => s.max(PROB_FLOOR).ln(),
        GanFunctional::Wgan => s,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Adso,
    Amo,
    Dso,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Adso, Strategy::Amo, Strategy::Dso];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Adso => "adso",
            Strategy::Amo => "amo",
            Strategy::Dso => "dso",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adso" => Ok(Strategy::Adso),
            "amo" => Ok(Strategy::Amo),
            "dso" => Ok(Strategy::Dso),
            other => Err(Error::Config(format!("unknown strategy {other:?} (expected adso, amo or dso)"))),
        }
    }
}

/// Classifier term of the generator loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GClsTerm {
    /// `−ln Q_y(G(z))`.
    #[default]
    Ce,
    /// `ln(1 − Q_y(G(z)))`.
    Cce,
}

// Per-sample terms from discriminator scores. For vanilla the score is the
// logit `l`, so `ln σ(l) = −softplus(−l)` and `ln(1 − σ(l)) = −softplus(l)`.

/// Per-sample `f(Dis(x))`.
pub fn f_real<'g, T: Real>(functional: GanFunctional, score: Var<'g, T>) -> Var<'g, T> {
    match functional {
        GanFunctional::Vanilla => score.neg().softplus().neg(),
        GanFunctional::Wgan => score,
    }
}

/// Per-sample `f(1 − Dis(x))`.
pub fn f_fake<'g, T: Real>(functional: GanFunctional, score: Var<'g, T>) -> Var<'g, T> {
    match functional {
        GanFunctional::Vanilla => score.softplus().neg(),
        GanFunctional::Wgan => score.one_minus(),
    }
}

/// Mean complementary cross-entropy `−ln(1 − Q_y)`.
pub fn complement_nll<'g, T: Real>(logp: Var<'g, T>, labels: &[usize]) -> Var<'g, T> {
    logp.pick(labels).exp().one_minus().clamp_min(T::of(PROB_FLOOR)).ln().mean().neg()
}

/// `mean f(1 − Dis(G(z)))` plus the classifier term on the generated labels.
pub fn generator_objective<'g, T: Real>(
    functional: GanFunctional,
    term: GClsTerm,
    fake_score: Var<'g, T>,
    fake_logp: Var<'g, T>,
    labels: &[usize],
) -> Var<'g, T> {
    let adv = f_fake(functional, fake_score).mean();
    let cls = match term {
        GClsTerm::Ce => class_nll(fake_logp, labels),
        GClsTerm::Cce => complement_nll(fake_logp, labels).neg(),
    };
    adv.add(cls)
}

/// Classifier loss over a real and a generated batch.
///
/// ADSO and DSO push generated samples away from their labels; AMO treats
/// them as ordinary labelled data and rejects any `majority` label.
pub fn classifier_objective<'g, T: Real>(
    strategy: Strategy,
    real_logp: Var<'g, T>,
    real_labels: &[usize],
    gen: Option<(Var<'g, T>, &[usize])>,
    majority: usize,
) -> Result<Var<'g, T>> {
    let real = class_nll(real_logp, real_labels);
    let Some((gen_logp, gen_labels)) = gen else {
        return Ok(real);
    };
    if gen_labels.is_empty() {
        return Ok(real);
    }
    Ok(match strategy {
        Strategy::Amo => {
            if gen_labels.contains(&majority) {
                return Err(Error::Contract(format!(
                    "AMO classifier batch contains generated samples of majority class {majority}"
                )));
            }
            real.add(class_nll(gen_logp, gen_labels))
        }
        Strategy::Adso | Strategy::Dso => real.add(complement_nll(gen_logp, gen_labels)),
    })
}

/// `mean f(Dis(x)) + mean f(1 − Dis(G(z)))`, to be maximised.
pub fn discriminator_objective<'g, T: Real>(
    functional: GanFunctional,
    real_score: Var<'g, T>,
    fake_score: Var<'g, T>,
) -> Var<'g, T> {
    f_real(functional, real_score).mean().add(f_fake(functional, fake_score).mean())
}

/// Zero-centred penalty `(γ/2)·mean ‖∇_x s(x)‖²` for per-sample scores `score`
/// computed from the leaf `x`. The result stays differentiable.
pub fn gradient_penalty<'g, T: Real>(x: Var<'g, T>, score: Var<'g, T>, gamma: f64) -> Var<'g, T> {
    let n = x.shape()[0];
    let g = x.graph();
    let dx = g.grad(score.sum_all(), &[x]).remove(0);
    dx.flatten_rows(n).square().sum_last().mean().scale(T::of(gamma / 2.0))
}

/// Graph-level losses over bound networks.
pub struct Players<'a, 'g, T: Real> {
    pub plan: &'a Plan,
    pub gen: &'a Bound<'g, T>,
    pub dis: &'a Bound<'g, T>,
    pub clf: &'a Bound<'g, T>,
}

impl<'g, T: Real> Players<'_, 'g, T> {
    pub fn generator_loss(
        &self,
        functional: GanFunctional,
        term: GClsTerm,
        z: Var<'g, T>,
        labels: &[usize],
        dropout: Option<&mut Dropout<'_>>,
    ) -> Var<'g, T> {
        let fake = forward::decode(self.plan, self.gen, z);
        let score = forward::dis_logit(self.plan, self.dis, fake);
        let logp = forward::classify_logp(self.plan, self.clf, fake, dropout);
        generator_objective(functional, term, score, logp, labels)
    }

    pub fn classifier_loss(
        &self,
        strategy: Strategy,
        x: Var<'g, T>,
        labels: &[usize],
        gen: Option<(Var<'g, T>, &[usize])>,
        majority: usize,
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Var<'g, T>> {
        let real = forward::classify_logp(self.plan, self.clf, x, dropout.as_deref_mut());
        let gen = gen.map(|(images, y)| (forward::classify_logp(self.plan, self.clf, images, dropout), y));
        classifier_objective(strategy, real, labels, gen, majority)
    }

    pub fn discriminator_objective(&self, functional: GanFunctional, real: Var<'g, T>, fake: Var<'g, T>) -> Var<'g, T> {
        let rs = forward::dis_logit(self.plan, self.dis, real);
        let fs = forward::dis_logit(self.plan, self.dis, fake);
        discriminator_objective(functional, rs, fs)
    }

    pub fn gradient_penalty(&self, real: Var<'g, T>, gamma: f64) -> Var<'g, T> {
        gradient_penalty(real, forward::dis_logit(self.plan, self.dis, real), gamma)
    }
}

fn with_players<T: Real, R>(bundle: &NetworkBundle<T>, f: impl for<'g> FnOnce(&Graph<T>, Players<'_, '_, T>) -> R) -> R {
    let g = Graph::new();
    let (gen, dis, clf) = (bundle.gen.bind(&g), bundle.dis.bind(&g), bundle.clf.bind(&g));
    f(
        &g,
        Players {
            plan: bundle.plan(),
            gen: &gen,
            dis: &dis,
            clf: &clf,
        },
    )
}

fn finite(v: f64, phase: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergence { phase, epoch: 0 })
    }
}

pub fn loss_generator<T: Real>(
    bundle: &NetworkBundle<T>,
    functional: GanFunctional,
    term: GClsTerm,
    z: &Tensor<T>,
    labels: &[usize],
) -> Result<f64> {
    bundle.check_latents(z)?;
    check_labels(labels, bundle.num_classes)?;
    let v = with_players(bundle, |g, p| {
        p.generator_loss(functional, term, g.leaf(z.clone()), labels, None).item().as_f64()
    });
    finite(v, "generator")
}

/// Classifier loss with the generated batch given as images.
pub fn loss_classifier<T: Real>(
    bundle: &NetworkBundle<T>,
    strategy: Strategy,
    real: (&Tensor<T>, &[usize]),
    generated: Option<(&Tensor<T>, &[usize])>,
    majority: usize,
) -> Result<f64> {
    bundle.check_images(real.0)?;
    check_labels(real.1, bundle.num_classes)?;
    if let Some((x, y)) = generated {
        bundle.check_images(x)?;
        check_labels(y, bundle.num_classes)?;
    }
    let v = with_players(bundle, |g, p| {
        let gen = generated.map(|(x, y)| (g.leaf(x.clone()), y));
        p.classifier_loss(strategy, g.leaf(real.0.clone()), real.1, gen, majority, None)
            .map(|l| l.item().as_f64())
    })?;
    finite(v, "classifier")
}

pub fn loss_discriminator<T: Real>(
    bundle: &NetworkBundle<T>,
    functional: GanFunctional,
    real: &Tensor<T>,
    fake: &Tensor<T>,
) -> Result<f64> {
    bundle.check_images(real)?;
    bundle.check_images(fake)?;
    let v = with_players(bundle, |g, p| {
        p.discriminator_objective(functional, g.leaf(real.clone()), g.leaf(fake.clone()))
            .item()
            .as_f64()
    });
    finite(v, "discriminator")
}

pub fn gradient_penalty_0gp<T: Real>(bundle: &NetworkBundle<T>, real: &Tensor<T>, gamma: f64) -> Result<f64> {
    if gamma < 0.0 {
        return Err(Error::Config(format!("gp_gamma must be nonnegative, got {gamma}")));
    }
    bundle.check_images(real)?;
    Ok(with_players(bundle, |g, p| p.gradient_penalty(g.leaf(real.clone()), gamma).item().as_f64()))
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= classes) {
        Some(&label) => Err(Error::Domain { label, classes }),
        None => Ok(()),
    }
}

/// Labels uniform over the allowed classes and one prior draw per label.
pub fn draw_generator_batch<R: Rng + ?Sized>(
    priors: &ClassPriors,
    n: usize,
    rng: &mut R,
    exclude: Option<usize>,
) -> Result<(Tensor<f64>, Vec<usize>)> {
    let allowed: Vec<usize> = (0..priors.num_classes()).filter(|&c| Some(c) != exclude).collect();
    if allowed.is_empty() {
        return Err(Error::EmptySupport);
    }
    let q = priors.latent_dim();
    let mut z = vec![0.0; n * q];
    let mut labels = Vec::with_capacity(n);
    for row in 0..n {
        let c = allowed[rng.gen_range(0..allowed.len())];
        priors.draw_into(c, rng, &mut z[row * q..(row + 1) * q]);
        labels.push(c);
    }
    Ok((Tensor::from_vec(&[n, q], z)?, labels))
}

/// Seeded [`draw_generator_batch`]; `exclude` removes one class (the majority,
/// for the AMO classifier update) from the label support.
pub fn sample_generator_batch(
    priors: &ClassPriors,
    n: usize,
    seed: u64,
    exclude: Option<usize>,
) -> Result<(Tensor<f64>, Vec<usize>)> {
    draw_generator_batch(priors, n, &mut rng::stream(seed, streams::LATENT), exclude)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_dis: f64,
    pub lr_gen: f64,
    pub lr_clf: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub gp_gamma: f64,
    /// Discriminator, generator and classifier steps per iteration.
    pub ratio: [usize; 3],
    pub functional: GanFunctional,
    pub g_cls_term: GClsTerm,
}

impl Default for AdvConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            lr_dis: 2e-4,
            lr_gen: 2e-4,
            lr_clf: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            gp_gamma: 10.0,
            ratio: [1, 1, 1],
            functional: GanFunctional::Vanilla,
            g_cls_term: GClsTerm::Ce,
        }
    }
}

impl AdvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gp_gamma < 0.0 || !self.gp_gamma.is_finite() {
            return Err(Error::Config(format!("gp_gamma must be a nonnegative number, got {}", self.gp_gamma)));
        }
        if self.ratio.contains(&0) {
            return Err(Error::Config(format!("update ratios must be at least 1, got {:?}", self.ratio)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub l_g: f64,
    pub l_dis: f64,
    pub l_q: f64,
    pub gp: f64,
    pub acsa: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
}

impl TrainHistory {
    pub const CSV_HEADER: &'static str = "epoch,l_g,l_dis,l_q,gp,acsa";

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.8},{:.8},{:.8},{:.8},{:.6}\n",
                r.epoch, r.l_g, r.l_dis, r.l_q, r.gp, r.acsa
            ));
        }
        out
    }
}

/// Held-out sets used while training. `validation` picks the best epoch;
/// `test` is only recorded in the history.
#[derive(Debug, Clone, Copy)]
pub struct EvalSets<'a> {
    pub test: &'a LabeledImageSet,
    pub validation: Option<&'a LabeledImageSet>,
}

pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation ACSA (the last epoch
    /// without a validation set).
    pub best: NetworkBundle<f32>,
    pub best_epoch: usize,
    pub last: NetworkBundle<f32>,
    pub history: TrainHistory,
}

/// ACSA of the classifier on `set`.
pub fn evaluate_acsa(bundle: &NetworkBundle<f32>, set: &LabeledImageSet) -> Result<f64> {
    let pred = bundle.predict(set.images(), 256)?;
    acsa(&confusion(set.labels(), &pred, bundle.num_classes)?)
}

/// Called after every epoch with the history row and the current parameters.
pub type EpochHook<'h> = dyn FnMut(&HistoryRow, &NetworkBundle<f32>) -> Result<()> + 'h;

#[derive(Default)]
struct Means {
    sums: [f64; 4],
    counts: [usize; 4],
}

impl Means {
    fn push(&mut self, slot: usize, v: f64) {
        self.sums[slot] += v;
        self.counts[slot] += 1;
    }

    fn get(&self, slot: usize) -> f64 {
        if self.counts[slot] == 0 {
            0.0
        } else {
            self.sums[slot] / self.counts[slot] as f64
        }
    }
}

struct Optimizers {
    dis: Adam<f32>,
    gen: Adam<f32>,
    clf: Adam<f32>,
}

fn check_step(v: f32, phase: &'static str, epoch: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(f64::from(v))
    } else {
        Err(Error::Divergence { phase, epoch })
    }
}

/// One iteration of the three-player game on a real batch. Returns
/// `(l_dis, gp, l_g, l_q)` averaged over the configured steps.
#[allow(clippy::too_many_arguments)]
fn adversarial_iteration(
    strategy: Strategy,
    bundle: &mut NetworkBundle<f32>,
    priors: &ClassPriors,
    config: &AdvConfig,
    opt: &mut Optimizers,
    real: &Batch,
    majority: usize,
    latent_rng: &mut rand_chacha::ChaCha8Rng,
    dropout_rng: &mut rand_chacha::ChaCha8Rng,
    epoch: usize,
    means: &mut Means,
) -> Result<()> {
    let n = real.labels.len();
    let plan = bundle.plan().clone();

    for _ in 0..config.ratio[0] {
        let (z, _) = draw_generator_batch(priors, n, latent_rng, None)?;
        let fake = bundle.generate(&z.cast())?;
        let g = Graph::new();
        let dis = bundle.dis.bind(&g);
        let rx = g.leaf(real.images.clone());
        let rs = forward::dis_logit(&plan, &dis, rx);
        let fs = forward::dis_logit(&plan, &dis, g.leaf(fake));
        let objective = discriminator_objective(config.functional, rs, fs);
        let gp = gradient_penalty(rx, rs, config.gp_gamma);
        let loss = gp.sub(objective);
        means.push(0, check_step(objective.item(), "discriminator", epoch)?);
        means.push(1, check_step(gp.item(), "discriminator", epoch)?);
        let grads = dis.grads(loss);
        opt.dis.step(&mut bundle.dis, &grads);
    }

    for _ in 0..config.ratio[1] {
        let (z, labels) = draw_generator_batch(priors, n, latent_rng, None)?;
        let g = Graph::new();
        let (gen, dis, clf) = (bundle.gen.bind(&g), bundle.dis.bind(&g), bundle.clf.bind(&g));
        let players = Players {
            plan: &plan,
            gen: &gen,
            dis: &dis,
            clf: &clf,
        };
        let loss = players.generator_loss(config.functional, config.g_cls_term, g.leaf(z.cast()), &labels, None);
        means.push(2, check_step(loss.item(), "generator", epoch)?);
        let grads = gen.grads(loss);
        opt.gen.step(&mut bundle.gen, &grads);
    }

    for _ in 0..config.ratio[2] {
        let exclude = (strategy == Strategy::Amo).then_some(majority);
        let (z, labels) = draw_generator_batch(priors, n, latent_rng, exclude)?;
        let fake = bundle.generate(&z.cast())?;
        let g = Graph::new();
        let clf = bundle.clf.bind(&g);
        let mut dropout = Dropout {
            rate: plan.dropout,
            rng: &mut *dropout_rng,
        };
        let real_logp = forward::classify_logp(&plan, &clf, g.leaf(real.images.clone()), Some(&mut dropout));
        let gen_logp = forward::classify_logp(&plan, &clf, g.leaf(fake), Some(&mut dropout));
        let loss = classifier_objective(strategy, real_logp, &real.labels, Some((gen_logp, &labels)), majority)?;
        means.push(3, check_step(loss.item(), "classifier", epoch)?);
        let grads = clf.grads(loss);
        opt.clf.step(&mut bundle.clf, &grads);
    }
    Ok(())
}

/// Best-epoch bookkeeping shared by both training loops.
struct Selector {
    best: Option<(f64, usize, NetworkBundle<f32>)>,
}

impl Selector {
    fn offer(&mut self, score: f64, epoch: usize, bundle: &NetworkBundle<f32>) {
        if self.best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            self.best = Some((score, epoch, bundle.clone()));
        }
    }
}

fn finish_epoch(
    row: HistoryRow,
    bundle: &NetworkBundle<f32>,
    eval: &EvalSets<'_>,
    selector: &mut Selector,
    history: &mut TrainHistory,
    hook: &mut EpochHook<'_>,
) -> Result<()> {
    let score = match eval.validation {
        Some(v) => evaluate_acsa(bundle, v)?,
        None => row.epoch as f64,
    };
    selector.offer(score, row.epoch, bundle);
    history.rows.push(row);
    hook(&row, bundle)
}

fn outcome(bundle: NetworkBundle<f32>, selector: Selector, history: TrainHistory) -> TrainOutcome {
    let (best_epoch, best) = match selector.best {
        Some((_, e, b)) => (e, b),
        None => (0, bundle.clone()),
    };
    TrainOutcome {
        best,
        best_epoch,
        last: bundle,
        history,
    }
}

/// Alternating ADSO/AMO training: per real batch, discriminator ascent with
/// the 0-gp penalty, generator descent, then classifier descent with dropout.
pub fn train_adversarial(
    strategy: Strategy,
    data: &ImbalancedDataset,
    priors: &ClassPriors,
    bundle: NetworkBundle<f32>,
    config: &AdvConfig,
    seed: u64,
    eval: EvalSets<'_>,
    hook: &mut EpochHook<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if strategy == Strategy::Dso {
        return train_dso_baseline(data, bundle, config, seed, eval, hook);
    }
    if priors.num_classes() != bundle.num_classes || priors.latent_dim() != bundle.plan().latent_dim {
        return Err(Error::Shape(format!(
            "priors cover {} classes in {} dims but the networks expect {} classes in {} dims",
            priors.num_classes(),
            priors.latent_dim(),
            bundle.num_classes,
            bundle.plan().latent_dim
        )));
    }
    let majority = data.majority_class();
    let balanced = match strategy {
        Strategy::Adso => Some(make_balanced_by_repetition(data, seed)?),
        _ => None,
    };
    let mut bundle = bundle;
    let mut opt = Optimizers {
        dis: Adam::new(config.adam(config.lr_dis)),
        gen: Adam::new(config.adam(config.lr_gen)),
        clf: Adam::new(config.adam(config.lr_clf)),
    };
    let mut latent_rng = rng::stream(seed, streams::LATENT);
    let mut dropout_rng = rng::stream(seed, streams::DROPOUT);
    let mut history = TrainHistory::default();
    let mut selector = Selector { best: None };

    for epoch in 0..config.epochs {
        let mut means = Means::default();
        let batches: Box<dyn Iterator<Item = Batch>> = match &balanced {
            Some(view) => Box::new(batch_iter(view, config.batch_size, seed, epoch as u64)),
            None => Box::new(batch_iter(data, config.batch_size, seed, epoch as u64)),
        };
        for real in batches {
            adversarial_iteration(
                strategy,
                &mut bundle,
                priors,
                config,
                &mut opt,
                &real,
                majority,
                &mut latent_rng,
                &mut dropout_rng,
                epoch,
                &mut means,
            )?;
        }
        let row = HistoryRow {
            epoch: epoch + 1,
            l_g: means.get(2),
            l_dis: means.get(0),
            l_q: means.get(3),
            gp: means.get(1),
            acsa: evaluate_acsa(&bundle, eval.test)?,
        };
        finish_epoch(row, &bundle, &eval, &mut selector, &mut history, hook)?;
    }
    Ok(outcome(bundle, selector, history))
}

/// Classifier-only training with plain cross-entropy on the
/// repetition-balanced view.
pub fn train_dso_baseline(
    data: &ImbalancedDataset,
    bundle: NetworkBundle<f32>,
    config: &AdvConfig,
    seed: u64,
    eval: EvalSets<'_>,
    hook: &mut EpochHook<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let view = make_balanced_by_repetition(data, seed)?;
    let mut bundle = bundle;
    let plan = bundle.plan().clone();
    let mut opt = Adam::new(config.adam(config.lr_clf));
    let mut dropout_rng = rng::stream(seed, streams::DROPOUT);
    let mut history = TrainHistory::default();
    let mut selector = Selector { best: None };

    for epoch in 0..config.epochs {
        let (mut sum, mut seen) = (0.0, 0usize);
        for batch in batch_iter(&view, config.batch_size, seed, epoch as u64) {
            let g = Graph::new();
            let clf = bundle.clf.bind(&g);
            let mut dropout = Dropout {
                rate: plan.dropout,
                rng: &mut dropout_rng,
            };
            let logp = forward::classify_logp(&plan, &clf, g.leaf(batch.images), Some(&mut dropout));
            let loss = class_nll(logp, &batch.labels);
            let n = batch.labels.len();
            sum += check_step(loss.item(), "classifier", epoch)? * n as f64;
            seen += n;
            let grads = clf.grads(loss);
            opt.step(&mut bundle.clf, &grads);
        }
        let row = HistoryRow {
            epoch: epoch + 1,
            l_g: 0.0,
            l_dis: 0.0,
            l_q: if seen == 0 { 0.0 } else { sum / seen as f64 },
            gp: 0.0,
            acsa: evaluate_acsa(&bundle, eval.test)?,
        };
        finish_epoch(row, &bundle, &eval, &mut selector, &mut history, hook)?;
    }
    Ok(outcome(bundle, selector, history))
}

/// Plain cross-entropy of the classifier over a whole set, without dropout.
pub fn classifier_ce<S: Samples + ?Sized>(bundle: &NetworkBundle<f32>, set: &S) -> Result<f64> {
    let (mut sum, mut seen) = (0.0, 0usize);
    for batch in batch_iter(set, 256, 0, 0) {
        let g = Graph::new();
        let clf = bundle.clf.bind(&g);
        let logp = forward::classify_logp(bundle.plan(), &clf, g.leaf(batch.images), None);
        let n = batch.labels.len();
        sum += f64::from(class_nll(logp, &batch.labels).item()) * n as f64;
        seen += n;
    }
    Ok(if seen == 0 { 0.0 } else { sum / seen as f64 })
}
