//! Supervised autoencoder pretraining and per-class Gaussian latent priors.

use lpgan_autodiff::{Adam, AdamConfig, Graph, Real, Tensor, Var};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{batch_iter, ImbalancedDataset};
use crate::nets::{forward, NetworkBundle, Plan};
use crate::rng;
use crate::{Error, Result};

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean over the batch of the per-sample Euclidean norm `‖x − x̂‖₂`.
pub fn reconstruction_loss<'g, T: Real>(x: Var<'g, T>, recon: Var<'g, T>) -> Var<'g, T> {
    let n = x.shape()[0];
    x.sub(recon).flatten_rows(n).square().sum_last().sqrt().mean()
}

/// Mean negative log-likelihood of `labels` under row-wise log-probabilities,
/// with probabilities floored at [`PROB_FLOOR`].
pub fn class_nll<'g, T: Real>(logp: Var<'g, T>, labels: &[usize]) -> Var<'g, T> {
    logp.pick(labels).clamp_min(T::of(PROB_FLOOR.ln())).mean().neg()
}

/// `(L_rec, L_bce)` for one batch, recorded on `x`'s graph.
pub fn slppl_losses<'g, T: Real>(
    plan: &Plan,
    enc: &lpgan_autodiff::Bound<'g, T>,
    dec: &lpgan_autodiff::Bound<'g, T>,
    x: Var<'g, T>,
    labels: &[usize],
) -> (Var<'g, T>, Var<'g, T>) {
    let (z, logp) = forward::encode(plan, enc, x);
    let recon = forward::decode(plan, dec, z);
    (reconstruction_loss(x, recon), class_nll(logp, labels))
}

pub fn loss_rec<T: Real>(bundle: &NetworkBundle<T>, x: &Tensor<T>) -> Result<f64> {
    bundle.check_images(x)?;
    let g = Graph::new();
    let (enc, dec) = (bundle.enc.bind(&g), bundle.dec.bind(&g));
    let xv = g.leaf(x.clone());
    let (z, _) = forward::encode(bundle.plan(), &enc, xv);
    Ok(reconstruction_loss(xv, forward::decode(bundle.plan(), &dec, z)).item().as_f64())
}

pub fn loss_bce<T: Real>(bundle: &NetworkBundle<T>, x: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    bundle.check_images(x)?;
    if let Some(&label) = labels.iter().find(|&&l| l >= bundle.num_classes) {
        return Err(Error::Domain {
            label,
            classes: bundle.num_classes,
        });
    }
    let g = Graph::new();
    let enc = bundle.enc.bind(&g);
    let (_, logp) = forward::encode(bundle.plan(), &enc, g.leaf(x.clone()));
    Ok(class_nll(logp, labels).item().as_f64())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlpplConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for SlpplConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
        }
    }
}

impl SlpplConfig {
    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlpplEpoch {
    pub l_rec: f64,
    pub l_bce: f64,
    pub l_slppl: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SlpplHistory {
    pub epochs: Vec<SlpplEpoch>,
}

impl SlpplHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,l_rec,l_bce,l_slppl\n");
        for (i, e) in self.epochs.iter().enumerate() {
            out.push_str(&format!("{},{:.8},{:.8},{:.8}\n", i + 1, e.l_rec, e.l_bce, e.l_slppl));
        }
        out
    }
}

/// Minimise `L_rec + L_bce` over encoder and decoder with Adam. Epoch
/// records are sample-weighted means of the per-batch losses.
pub fn train_slppl(
    data: &ImbalancedDataset,
    mut bundle: NetworkBundle<f32>,
    config: &SlpplConfig,
    seed: u64,
) -> Result<(NetworkBundle<f32>, SlpplHistory)> {
    let mut enc_opt = Adam::new(config.adam());
    let mut dec_opt = Adam::new(config.adam());
    let mut history = SlpplHistory::default();
    let plan = bundle.plan().clone();
    for epoch in 0..config.epochs {
        let (mut rec_sum, mut bce_sum, mut seen) = (0.0, 0.0, 0usize);
        for batch in batch_iter(data, config.batch_size, seed, epoch as u64) {
            let g = Graph::new();
            let enc = bundle.enc.bind(&g);
            let dec = bundle.dec.bind(&g);
            let x = g.leaf(batch.images);
            let (rec, bce) = slppl_losses(&plan, &enc, &dec, x, &batch.labels);
            let total = rec.add(bce);
            let (r, b) = (f64::from(rec.item()), f64::from(bce.item()));
            if !(r.is_finite() && b.is_finite()) {
                return Err(Error::Divergence { phase: "slppl", epoch });
            }
            let enc_grads = enc.grads(total);
            let dec_grads = dec.grads(total);
            enc_opt.step(&mut bundle.enc, &enc_grads);
            dec_opt.step(&mut bundle.dec, &dec_grads);
            let n = batch.labels.len();
            rec_sum += r * n as f64;
            bce_sum += b * n as f64;
            seen += n;
        }
        let (l_rec, l_bce) = (rec_sum / seen as f64, bce_sum / seen as f64);
        history.epochs.push(SlpplEpoch {
            l_rec,
            l_bce,
            l_slppl: l_rec + l_bce,
        });
    }
    Ok((bundle, history))
}

/// Per-class multivariate normal over encoder latents.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPriors {
    pub means: Vec<Vec<f64>>,
    /// Row-major `q×q` biased covariances.
    pub covariances: Vec<Vec<f64>>,
    /// Lower-triangular factors of `Σ_c + εI`, row-major.
    pub cholesky: Vec<Vec<f64>>,
    pub epsilon: f64,
    latent_dim: usize,
}

impl ClassPriors {
    /// Fit from explicit latents, one list of `q`-vectors per class.
    pub fn fit(latents: &[Vec<Vec<f64>>], epsilon: f64, diagonal: bool) -> Result<Self> {
        let q = latents
            .iter()
            .flat_map(|c| c.first())
            .map(Vec::len)
            .next()
            .ok_or_else(|| Error::Dataset("no latents to fit".into()))?;
        let mut priors = Self {
            means: Vec::new(),
            covariances: Vec::new(),
            cholesky: Vec::new(),
            epsilon,
            latent_dim: q,
        };
        for (class, zs) in latents.iter().enumerate() {
            if zs.is_empty() {
                return Err(Error::UndefinedMetric {
                    metric: "class prior",
                    class,
                });
            }
            let n = zs.len() as f64;
            let mut mean = vec![0.0; q];
            for z in zs {
                if z.len() != q {
                    return Err(Error::Shape(format!("latent of length {} in a {q}-dim fit", z.len())));
                }
                for (m, v) in mean.iter_mut().zip(z) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut cov = vec![0.0; q * q];
            for z in zs {
                for i in 0..q {
                    let di = z[i] - mean[i];
                    for j in 0..=i {
                        cov[i * q + j] += di * (z[j] - mean[j]);
                    }
                }
            }
            for i in 0..q {
                for j in 0..=i {
                    let v = if diagonal && i != j { 0.0 } else { cov[i * q + j] / n };
                    cov[i * q + j] = v;
                    cov[j * q + i] = v;
                }
            }
            let mut loaded = cov.clone();
            for i in 0..q {
                loaded[i * q + i] += epsilon;
            }
            let chol = cholesky(&loaded, q)
                .ok_or_else(|| Error::Numerical(format!("class {class}: covariance is not positive definite")))?;
            priors.means.push(mean);
            priors.covariances.push(cov);
            priors.cholesky.push(chol);
        }
        Ok(priors)
    }

    /// Reassemble from stored moments, refactoring the covariances.
    pub fn from_moments(means: Vec<Vec<f64>>, covariances: Vec<Vec<f64>>, epsilon: f64) -> Result<Self> {
        let q = means.first().map(Vec::len).unwrap_or(0);
        let mut cholesky_factors = Vec::with_capacity(means.len());
        for (class, cov) in covariances.iter().enumerate() {
            if cov.len() != q * q {
                return Err(Error::Shape(format!("class {class}: covariance is not {q}x{q}")));
            }
            let mut loaded = cov.clone();
            for i in 0..q {
                loaded[i * q + i] += epsilon;
            }
            cholesky_factors.push(
                cholesky(&loaded, q)
                    .ok_or_else(|| Error::Numerical(format!("class {class}: covariance is not positive definite")))?,
            );
        }
        Ok(Self {
            means,
            covariances,
            cholesky: cholesky_factors,
            epsilon,
            latent_dim: q,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// One draw `μ_c + L_c·u` with `u ~ N(0, I)`, written into `out`.
    pub fn draw_into<R: rand::Rng + ?Sized>(&self, class: usize, rng: &mut R, out: &mut [f64]) {
        let q = self.latent_dim;
        let u: Vec<f64> = (0..q).map(|_| StandardNormal.sample(rng)).collect();
        let l = &self.cholesky[class];
        for i in 0..q {
            let row = &l[i * q..i * q + i + 1];
            out[i] = self.means[class][i] + row.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

/// Lower-triangular `L` with `L·Lᵀ = a`, or `None` if `a` is not positive definite.
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                let d = a[i * n + i] - s;
                if d <= 0.0 || !d.is_finite() {
                    return None;
                }
                l[i * n + i] = d.sqrt();
            } else {
                l[i * n + j] = (a[i * n + j] - s) / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Encode the training set and fit one Gaussian per class.
pub fn fit_class_priors(
    data: &ImbalancedDataset,
    bundle: &NetworkBundle<f32>,
    epsilon: f64,
    diagonal: bool,
) -> Result<ClassPriors> {
    let z = bundle.encode_all(data.base.images(), 256)?;
    let q = bundle.plan().latent_dim;
    let mut per_class = vec![Vec::new(); data.num_classes()];
    for (row, &label) in z.data().chunks(q).zip(data.base.labels()) {
        per_class[label].push(row.iter().map(|&v| f64::from(v)).collect());
    }
    ClassPriors::fit(&per_class, epsilon, diagonal)
}

/// `n` seeded draws from class `class`, shape `[n, q]`.
pub fn sample_prior(priors: &ClassPriors, class: usize, n: usize, seed: u64) -> Result<Tensor<f64>> {
    if class >= priors.num_classes() {
        return Err(Error::Domain {
            label: class,
            classes: priors.num_classes(),
        });
    }
    let q = priors.latent_dim();
    let mut rng = rng::stream(seed, class as u64);
    let mut data = vec![0.0; n * q];
    for row in data.chunks_mut(q.max(1)) {
        priors.draw_into(class, &mut rng, row);
    }
    Ok(Tensor::from_vec(&[n, q], data)?)
}
