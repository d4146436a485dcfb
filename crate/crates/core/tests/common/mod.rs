//! Oracle checks shared by the property suites and the acceptance target.
//! Each check returns `Err` with a description of the first violation.
#![allow(dead_code)]

use std::collections::BTreeMap;

use lpgan_autodiff::{Graph, ParamSet, Tensor};
use lpgan_core::advtrain::{
    self, gradient_penalty, gradient_penalty_0gp, loss_classifier, loss_discriminator, loss_generator,
    sample_generator_batch, train_adversarial, AdvConfig, EvalSets, GClsTerm, GanFunctional, Players, Strategy,
};
use lpgan_core::data::{
    make_balanced_by_repetition, make_imbalanced, synthetic_blobs, LabeledImageSet, TABLE_MNIST_COUNTS,
};
use lpgan_core::metrics::{acsa, confusion, f_macro, g_macro, p_maj, r_min, ConfusionMatrix};
use lpgan_core::nets::{build_networks, transfer_init, ArchitectureSpec, NetworkBundle};
use lpgan_core::slppl::{
    class_nll, loss_bce, loss_rec, reconstruction_loss, sample_prior, slppl_losses, train_slppl, ClassPriors,
    SlpplConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Check = Result<(), String>;

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn close(got: f64, want: f64, tol: f64, what: &str) -> Check {
    ensure((got - want).abs() <= tol, || format!("{what}: got {got}, expected {want} (tol {tol})"))
}

/// Run every check, collecting failures.
pub fn all(checks: &[(&str, fn() -> Check)]) -> Check {
    let failures: Vec<String> = checks
        .iter()
        .filter_map(|(name, f)| f().err().map(|e| format!("{name}: {e}")))
        .collect();
    ensure(failures.is_empty(), || failures.join("; "))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(0.05..0.95)).collect()).unwrap()
}

pub fn normal_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
}

// ---------------------------------------------------------------- losses

/// Tiny f64 networks with `classes` outputs, after transfer.
pub fn tiny(classes: usize, seed: u64) -> NetworkBundle<f64> {
    let b = build_networks::<f64>(&ArchitectureSpec::tiny(), classes, seed).unwrap();
    transfer_init(&b).unwrap()
}

/// Networks whose discriminator outputs the constant `dis` and whose
/// classifier outputs logits `clf` for every input.
pub fn stub(classes: usize, dis: f64, clf: &[f64]) -> NetworkBundle<f64> {
    let mut b = tiny(classes, 1);
    for (name, t) in b.dis.iter_mut() {
        let fill = if name == "head.b" { dis } else { 0.0 };
        t.data_mut().iter_mut().for_each(|v| *v = fill);
    }
    b.clf.get_mut("head.w").unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
    b.clf.get_mut("head.b").unwrap().data_mut().copy_from_slice(clf);
    b
}

fn images(n: usize, seed: u64) -> Tensor<f64> {
    uniform_tensor(&[n, 4, 4, 1], &mut rng(seed))
}

pub fn slppl_closed_forms() -> Check {
    let g = Graph::<f64>::new();
    // Residual norms 0.3 and 0.5 against a fixed stub reconstruction.
    let x = g.leaf(Tensor::zeros(&[2, 2, 2, 1]));
    let recon = g.leaf(Tensor::from_vec(&[2, 2, 2, 1], vec![0.3, 0.0, 0.0, 0.0, 0.3, 0.4, 0.0, 0.0]).unwrap());
    close(reconstruction_loss(x, recon).item(), 0.4, 1e-12, "L_rec of norms 0.3, 0.5")?;
    let logp = g.leaf(Tensor::from_vec(&[1, 2], vec![0.25f64.ln(), 0.75f64.ln()]).unwrap());
    close(class_nll(logp, &[0]).item(), 1.386294, 1e-6, "L_bce at p = 0.25")?;
    // Uniform encoder head: L_bce = ln C through the full network.
    let mut b = tiny(10, 3);
    for name in ["cls.w", "cls.b"] {
        b.enc.get_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let bce = loss_bce(&b, &images(3, 4), &[0, 5, 9]).map_err(|e| e.to_string())?;
    close(bce, 10f64.ln(), 1e-12, "L_bce uniform head")?;

    // Biased covariance against a brute-force pass over 100 latents.
    let mut r = rng(7);
    let zs: Vec<Vec<f64>> = (0..100).map(|_| (0..4).map(|_| r.gen_range(-2.0..2.0)).collect()).collect();
    let p = ClassPriors::fit(&[zs.clone()], 1e-4, false).map_err(|e| e.to_string())?;
    for i in 0..4 {
        let mi = zs.iter().map(|z| z[i]).sum::<f64>() / 100.0;
        close(p.means[0][i], mi, 1e-12, "prior mean")?;
        for j in 0..4 {
            let mj = zs.iter().map(|z| z[j]).sum::<f64>() / 100.0;
            let c = zs.iter().map(|z| (z[i] - mi) * (z[j] - mj)).sum::<f64>() / 100.0;
            close(p.covariances[0][i * 4 + j], c, 1e-6, "prior covariance")?;
            let s = &p.covariances[0];
            close(s[i * 4 + j], s[j * 4 + i], 1e-6, "covariance symmetry")?;
            let l = &p.cholesky[0];
            let llt: f64 = (0..4).map(|k| l[i * 4 + k] * l[j * 4 + k]).sum();
            let want = c + if i == j { 1e-4 } else { 0.0 };
            close(llt, want, 1e-5, "chol·cholᵀ = Σ + εI")?;
        }
    }
    Ok(())
}

pub fn adversarial_closed_forms() -> Check {
    use GanFunctional::{Vanilla, Wgan};
    close(advtrain::f_apply(Wgan, 0.3), 0.3, 0.0, "f wgan")?;
    close(advtrain::f_apply(Vanilla, 1.0), 0.0, 0.0, "f vanilla at 1")?;
    close(advtrain::f_apply(Vanilla, 0.5), -0.693147, 1e-6, "f vanilla at 0.5")?;

    let err = |e: lpgan_core::Error| e.to_string();
    let z = normal_tensor(&[4, 2], &mut rng(11));
    let x = images(4, 12);
    let xg = images(4, 13);
    let y = [1, 2, 3, 4];

    // Dis ≡ 0.5 (zero logit), Q uniform over 10 classes.
    let half = stub(10, 0.0, &[0.0; 10]);
    let lg = loss_generator(&half, Vanilla, GClsTerm::Ce, &z, &y).map_err(err)?;
    close(lg, 0.5f64.ln() + 10f64.ln(), 1e-6, "L_G stub")?;
    close(lg, 1.609438, 1e-6, "L_G stub value")?;
    let lq = loss_classifier(&half, Strategy::Adso, (&x, &y), Some((&xg, &y)), 0).map_err(err)?;
    close(lq, 10f64.ln() - 0.9f64.ln(), 1e-6, "L_Q ADSO stub")?;
    close(lq, 2.407946, 1e-6, "L_Q ADSO stub value")?;
    let ld = loss_discriminator(&half, Vanilla, &x, &xg).map_err(err)?;
    close(ld, -1.386294, 1e-6, "L_Dis vanilla stub")?;

    // Q certain of class 3, WGAN critic ≡ 1.
    let mut logits = [0.0; 10];
    logits[3] = 1e3;
    let sure = stub(10, 1.0, &logits);
    let same = [3; 4];
    close(loss_generator(&sure, Wgan, GClsTerm::Ce, &z, &same).map_err(err)?, 0.0, 1e-12, "L_G both terms vanish")?;
    close(
        loss_classifier(&sure, Strategy::Amo, (&x, &same), Some((&xg, &same)), 0).map_err(err)?,
        0.0,
        1e-12,
        "L_Q AMO perfect",
    )?;

    // Q_{y_g} = 0: the ADSO generated term contributes nothing.
    let mut logits = [0.0; 10];
    logits[5] = -1e3;
    let away = stub(10, 0.0, &logits);
    let gy = [5; 4];
    let with = loss_classifier(&away, Strategy::Adso, (&x, &y), Some((&xg, &gy)), 0).map_err(err)?;
    let without = loss_classifier(&away, Strategy::Adso, (&x, &y), None, 0).map_err(err)?;
    close(with - without, 0.0, 1e-12, "ADSO generated term at Q = 0")?;

    let crit = stub(10, 0.2, &[0.0; 10]);
    close(loss_discriminator(&crit, Wgan, &x, &xg).map_err(err)?, 1.0, 1e-12, "L_Dis wgan stub")?;

    // Optimal discriminator endpoint, through the score-level objective.
    let g = Graph::<f64>::new();
    let real = g.leaf(Tensor::full(&[3], 1e3));
    let fake = g.leaf(Tensor::full(&[3], -1e3));
    close(advtrain::discriminator_objective(Vanilla, real, fake).item(), 0.0, 1e-12, "L_Dis supremum")?;

    // Penalty: constant critic → 0; linear critic wᵀx → (γ/2)‖w‖².
    close(gradient_penalty_0gp(&crit, &x, 10.0).map_err(err)?, 0.0, 1e-12, "0-gp constant")?;
    let w = normal_tensor(&[16, 1], &mut rng(14));
    let w2: f64 = w.data().iter().map(|v| v * v).sum();
    let xv = g.leaf(x.clone());
    let score = xv.flatten_rows(4).matmul(g.leaf(w)).reshape(&[4]);
    close(gradient_penalty(xv, score, 10.0).item(), 5.0 * w2, 1e-10, "0-gp linear")?;

    // Penalty value against finite-difference input gradients.
    let b = tiny(3, 15);
    let h = 1e-6;
    let mut total = 0.0;
    for i in 0..4 {
        let xi = x.slice_rows(i, i + 1);
        let mut norm2 = 0.0;
        for k in 0..16 {
            let mut up = xi.clone();
            up.data_mut()[k] += h;
            let mut dn = xi.clone();
            dn.data_mut()[k] -= h;
            let d = (b.discriminate(&up, Wgan).unwrap().item() - b.discriminate(&dn, Wgan).unwrap().item()) / (2.0 * h);
            norm2 += d * d;
        }
        total += norm2;
    }
    let fd = 5.0 * total / 4.0;
    let gp = gradient_penalty_0gp(&b, &x, 10.0).map_err(err)?;
    ensure((gp - fd).abs() <= 1e-4 * fd.abs().max(1e-12), || format!("0-gp {gp} vs finite differences {fd}"))?;
    Ok(())
}

#[derive(Clone, Copy)]
pub enum Net {
    Enc,
    Dec,
    Gen,
    Dis,
    Clf,
}

fn set_mut(b: &mut NetworkBundle<f64>, net: Net) -> &mut ParamSet<f64> {
    match net {
        Net::Enc => &mut b.enc,
        Net::Dec => &mut b.dec,
        Net::Gen => &mut b.gen,
        Net::Dis => &mut b.dis,
        Net::Clf => &mut b.clf,
    }
}

/// Norm-wise relative error between `analytic` and central differences of
/// `f` over every parameter of `net`.
pub fn fd_error(
    bundle: &NetworkBundle<f64>,
    net: Net,
    analytic: &BTreeMap<String, Tensor<f64>>,
    f: impl Fn(&NetworkBundle<f64>) -> f64,
) -> f64 {
    let h = 1e-6;
    let mut work = bundle.clone();
    let names: Vec<String> = set_mut(&mut work, net).names().cloned().collect();
    let (mut diff, mut scale) = (0.0f64, 0.0f64);
    for name in names {
        let len = set_mut(&mut work, net).get(&name).unwrap().numel();
        for k in 0..len {
            let orig = set_mut(&mut work, net).get(&name).unwrap().data()[k];
            set_mut(&mut work, net).get_mut(&name).unwrap().data_mut()[k] = orig + h;
            let up = f(&work);
            set_mut(&mut work, net).get_mut(&name).unwrap().data_mut()[k] = orig - h;
            let dn = f(&work);
            set_mut(&mut work, net).get_mut(&name).unwrap().data_mut()[k] = orig;
            let num = (up - dn) / (2.0 * h);
            let ana = analytic[&name].data()[k];
            diff += (num - ana).powi(2);
            scale = scale.max(num.abs()).max(ana.abs());
        }
    }
    diff.sqrt() / scale.max(1e-8)
}

fn within(err: f64, what: &str) -> Check {
    ensure(err < 1e-4, || format!("{what}: relative gradient error {err:.3e}"))
}

pub fn slppl_gradients() -> Check {
    let b = tiny(3, 21);
    let x = images(5, 22);
    let y = [0, 1, 2, 1, 0];
    let g = Graph::new();
    let (enc, dec) = (b.enc.bind(&g), b.dec.bind(&g));
    let (rec, bce) = slppl_losses(b.plan(), &enc, &dec, g.leaf(x.clone()), &y);
    let rec_fd = |bb: &NetworkBundle<f64>| loss_rec(bb, &x).unwrap();
    let bce_fd = |bb: &NetworkBundle<f64>| loss_bce(bb, &x, &y).unwrap();
    within(fd_error(&b, Net::Enc, &enc.grads(rec), rec_fd), "L_rec wrt encoder")?;
    within(fd_error(&b, Net::Dec, &dec.grads(rec), rec_fd), "L_rec wrt decoder")?;
    within(fd_error(&b, Net::Enc, &enc.grads(bce), bce_fd), "L_bce wrt encoder")
}

/// Gradients of generator, classifier and discriminator losses for both
/// strategies and both functionals, and of the 0-gp penalty.
pub fn adversarial_gradients() -> Check {
    let classes = 3;
    let majority = 0;
    let b = tiny(classes, 31);
    let mut r = rng(32);
    let z = normal_tensor(&[4, 2], &mut r);
    let x = images(4, 33);
    let xg = images(4, 34);
    let y = [0, 1, 2, 1];
    let yg_all = [2, 0, 1, 2];
    let yg_minor = [1, 2, 2, 1];

    for strategy in [Strategy::Adso, Strategy::Amo] {
        let yg: &[usize] = if strategy == Strategy::Amo { &yg_minor } else { &yg_all };
        for functional in [GanFunctional::Vanilla, GanFunctional::Wgan] {
            for term in [GClsTerm::Ce, GClsTerm::Cce] {
                let g = Graph::new();
                let (gen, dis, clf) = (b.gen.bind(&g), b.dis.bind(&g), b.clf.bind(&g));
                let p = Players {
                    plan: b.plan(),
                    gen: &gen,
                    dis: &dis,
                    clf: &clf,
                };
                let lg = p.generator_loss(functional, term, g.leaf(z.clone()), yg, None);
                let err = fd_error(&b, Net::Gen, &gen.grads(lg), |bb| {
                    loss_generator(bb, functional, term, &z, yg).unwrap()
                });
                within(err, &format!("{strategy} L_G ({functional:?}, {term:?})"))?;
            }
            let g = Graph::new();
            let (gen, dis, clf) = (b.gen.bind(&g), b.dis.bind(&g), b.clf.bind(&g));
            let p = Players {
                plan: b.plan(),
                gen: &gen,
                dis: &dis,
                clf: &clf,
            };
            let ld = p.discriminator_objective(functional, g.leaf(x.clone()), g.leaf(xg.clone()));
            let err = fd_error(&b, Net::Dis, &dis.grads(ld), |bb| loss_discriminator(bb, functional, &x, &xg).unwrap());
            within(err, &format!("{strategy} L_Dis ({functional:?})"))?;
        }
        let g = Graph::new();
        let (gen, dis, clf) = (b.gen.bind(&g), b.dis.bind(&g), b.clf.bind(&g));
        let p = Players {
            plan: b.plan(),
            gen: &gen,
            dis: &dis,
            clf: &clf,
        };
        let lq = p
            .classifier_loss(strategy, g.leaf(x.clone()), &y, Some((g.leaf(xg.clone()), yg)), majority, None)
            .map_err(|e| e.to_string())?;
        let err = fd_error(&b, Net::Clf, &clf.grads(lq), |bb| {
            loss_classifier(bb, strategy, (&x, &y), Some((&xg, yg)), majority).unwrap()
        });
        within(err, &format!("{strategy} L_Q"))?;
    }

    let g = Graph::new();
    let (gen, dis, clf) = (b.gen.bind(&g), b.dis.bind(&g), b.clf.bind(&g));
    let p = Players {
        plan: b.plan(),
        gen: &gen,
        dis: &dis,
        clf: &clf,
    };
    let gp = p.gradient_penalty(g.leaf(x.clone()), 10.0);
    let err = fd_error(&b, Net::Dis, &dis.grads(gp), |bb| gradient_penalty_0gp(bb, &x, 10.0).unwrap());
    within(err, "0-gp wrt discriminator")
}

// ---------------------------------------------------------------- metrics

/// Recall, precision, F1 and friends straight from label lists.
pub fn brute_force(t: &[usize], p: &[usize], classes: usize, majority: usize, minority: usize) -> [f64; 5] {
    let count = |f: &dyn Fn(usize) -> bool| (0..t.len()).filter(|&i| f(i)).count() as f64;
    let mut recalls = Vec::new();
    let mut f1s = Vec::new();
    let mut maj_precision = 0.0;
    for c in 0..classes {
        let tp = count(&|i| t[i] == c && p[i] == c);
        let actual = count(&|i| t[i] == c);
        let predicted = count(&|i| p[i] == c);
        let recall = tp / actual;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        recalls.push(recall);
        f1s.push(if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 });
        if c == majority {
            maj_precision = precision;
        }
    }
    let n = classes as f64;
    let acsa = recalls.iter().sum::<f64>() / n;
    let g = if recalls.contains(&0.0) {
        0.0
    } else {
        (recalls.iter().map(|r| r.ln()).sum::<f64>() / n).exp()
    };
    [acsa, f1s.iter().sum::<f64>() / n, g, recalls[minority], maj_precision]
}

/// `sets` random prediction sets, each compared with the brute-force oracle.
pub fn metrics_oracle(sets: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    for s in 0..sets {
        let classes = r.gen_range(2..=10);
        let n = r.gen_range(classes..=400);
        // Every class present at least once so ACSA is defined.
        let t: Vec<usize> = (0..n).map(|i| if i < classes { i } else { r.gen_range(0..classes) }).collect();
        let skill = r.gen_range(0.0..1.0);
        let p: Vec<usize> = t
            .iter()
            .map(|&c| if r.gen_bool(skill) { c } else { r.gen_range(0..classes) })
            .collect();
        let training: Vec<usize> = (0..classes).map(|_| r.gen_range(1..5000)).collect();
        let cm = confusion(&t, &p, classes)
            .and_then(|c| c.with_class_order(&training))
            .map_err(|e| e.to_string())?;
        for a in 0..classes {
            for b in 0..classes {
                let want = (0..n).filter(|&i| t[i] == a && p[i] == b).count() as u64;
                ensure(cm.get(a, b) == want, || format!("set {s}: count[{a}][{b}] = {} vs {want}", cm.get(a, b)))?;
            }
        }
        let majority = lpgan_core::data::majority_class(&training);
        let minority = lpgan_core::data::minority_class(&training);
        let [oa, of, og, or, op] = brute_force(&t, &p, classes, majority, minority);
        let got = [
            acsa(&cm).map_err(|e| e.to_string())?,
            f_macro(&cm),
            g_macro(&cm),
            r_min(&cm).map_err(|e| e.to_string())?,
            p_maj(&cm),
        ];
        for (name, g, w) in [("acsa", got[0], oa), ("f_macro", got[1], of), ("g_macro", got[2], og), ("r_min", got[3], or), ("p_maj", got[4], op)] {
            close(g, w, 1e-12, &format!("set {s} {name}"))?;
        }
        ensure(got[2] <= got[0] + 1e-15, || format!("set {s}: g_macro {} > acsa {}", got[2], got[0]))?;
        permutation_invariant(&cm, &training, &mut r).map_err(|e| format!("set {s}: {e}"))?;
    }
    Ok(())
}

fn permutation_invariant(cm: &ConfusionMatrix, training: &[usize], r: &mut ChaCha8Rng) -> Check {
    let c = cm.classes();
    let mut perm: Vec<usize> = (0..c).collect();
    for i in (1..c).rev() {
        perm.swap(i, r.gen_range(0..=i));
    }
    let rows = cm.rows();
    let mut permuted = vec![vec![0u64; c]; c];
    let mut order = vec![0usize; c];
    for a in 0..c {
        order[perm[a]] = training[a];
        for b in 0..c {
            permuted[perm[a]][perm[b]] = rows[a][b];
        }
    }
    let pm = ConfusionMatrix::from_counts(permuted)
        .and_then(|m| m.with_class_order(&order))
        .map_err(|e| e.to_string())?;
    let vals = |m: &ConfusionMatrix| [acsa(m).unwrap(), f_macro(m), g_macro(m), r_min(m).unwrap(), p_maj(m)];
    let (a, b) = (vals(cm), vals(&pm));
    for k in 0..5 {
        close(a[k], b[k], 1e-12, "permutation invariance")?;
    }
    Ok(())
}

// ---------------------------------------------------------------- data and priors

/// A pool with at least 4000 small images per class for ten classes.
pub fn ten_class_pool() -> LabeledImageSet {
    synthetic_blobs(&[4100; 10], 4, 99)
}

pub fn table_histogram() -> Check {
    let pool = ten_class_pool();
    for seed in [1, 2, 3] {
        let ds = make_imbalanced(&pool, &TABLE_MNIST_COUNTS, seed).map_err(|e| e.to_string())?;
        ensure(ds.base.class_counts() == TABLE_MNIST_COUNTS, || format!("seed {seed}: histogram {:?}", ds.base.class_counts()))?;
        ensure(ds.len() == 9000, || format!("N = {}", ds.len()))?;
        close(ds.imbalance_ratio(), 100.0, 0.0, "IR")?;
    }
    Ok(())
}

pub fn balanced_uniform() -> Check {
    let pool = ten_class_pool();
    let ds = make_imbalanced(&pool, &TABLE_MNIST_COUNTS, 5).map_err(|e| e.to_string())?;
    let view = make_balanced_by_repetition(&ds, 5).map_err(|e| e.to_string())?;
    ensure(view.class_counts() == vec![4000; 10], || format!("balanced histogram {:?}", view.class_counts()))?;
    let mut hits = vec![0usize; ds.len()];
    view.indices.iter().for_each(|&i| hits[i] += 1);
    for (i, &h) in hits.iter().enumerate() {
        let p = TABLE_MNIST_COUNTS[ds.base.labels()[i]];
        ensure(h == 4000 / p || h == 4000usize.div_ceil(p), || format!("index {i}: {h} repetitions for class size {p}"))?;
    }
    // A 40-sample class divides 4000 evenly: exactly 100 repeats each.
    ensure(
        hits.iter().zip(ds.base.labels()).filter(|(_, &l)| l == 9).all(|(&h, _)| h == 100),
        || "minority indices not repeated exactly 100 times".into(),
    )?;
    // 3 samples to 7: multiplicities {3, 2, 2} for any seed.
    let tiny = synthetic_blobs(&[7, 3], 4, 1);
    let ds = make_imbalanced(&tiny, &[7, 3], 1).map_err(|e| e.to_string())?;
    for seed in 0..20 {
        let v = make_balanced_by_repetition(&ds, seed).map_err(|e| e.to_string())?;
        let mut m: Vec<usize> = (0..ds.len())
            .filter(|&i| ds.base.labels()[i] == 1)
            .map(|i| v.indices.iter().filter(|&&j| j == i).count())
            .collect();
        m.sort_unstable();
        ensure(m == [2, 2, 3], || format!("seed {seed}: multiplicities {m:?}"))?;
    }
    Ok(())
}

pub fn prior_moments() -> Check {
    let q = 3;
    let mut r = rng(41);
    // Correlated latents z = A u + b for two classes.
    let a = [[1.0, 0.0, 0.0], [0.6, 0.8, 0.0], [-0.3, 0.2, 0.5]];
    let latents: Vec<Vec<Vec<f64>>> = (0..2)
        .map(|c| {
            (0..500)
                .map(|_| {
                    let u: Vec<f64> = (0..q).map(|_| StandardNormal.sample(&mut r)).collect();
                    (0..q).map(|i| (0..q).map(|k| a[i][k] * u[k]).sum::<f64>() + c as f64 * 2.0).collect()
                })
                .collect()
        })
        .collect();
    let priors = ClassPriors::fit(&latents, 1e-4, false).map_err(|e| e.to_string())?;
    let n = 10_000;
    for c in 0..2 {
        let s = sample_prior(&priors, c, n, 77).map_err(|e| e.to_string())?;
        let d = s.data();
        let mut sigma = priors.covariances[c].clone();
        (0..q).for_each(|i| sigma[i * q + i] += 1e-4);
        let mean: Vec<f64> = (0..q).map(|i| (0..n).map(|k| d[k * q + i]).sum::<f64>() / n as f64).collect();
        for i in 0..q {
            let se = (sigma[i * q + i] / n as f64).sqrt();
            ensure((mean[i] - priors.means[c][i]).abs() <= 3.0 * se, || {
                format!("class {c} mean[{i}] {} vs {} (3σ = {})", mean[i], priors.means[c][i], 3.0 * se)
            })?;
            for j in 0..q {
                let cov = (0..n)
                    .map(|k| (d[k * q + i] - mean[i]) * (d[k * q + j] - mean[j]))
                    .sum::<f64>()
                    / n as f64;
                let want = sigma[i * q + j];
                let se = ((sigma[i * q + i] * sigma[j * q + j] + want * want) / n as f64).sqrt();
                ensure((cov - want).abs() <= 3.0 * se, || {
                    format!("class {c} cov[{i}][{j}] {cov} vs {want} (3σ = {})", 3.0 * se)
                })?;
            }
        }
    }
    Ok(())
}

pub fn transfer_equality() -> Check {
    for arch in [ArchitectureSpec::tiny(), ArchitectureSpec::synthetic(), ArchitectureSpec::mnist()] {
        let b = build_networks::<f32>(&arch, 4, 3).map_err(|e| e.to_string())?;
        let t = transfer_init(&b).map_err(|e| e.to_string())?;
        let z = normal_tensor(&[5, arch.latent_dim], &mut rng(3)).cast::<f32>();
        let (gen, dec) = (t.generate(&z).unwrap(), t.decode(&z).unwrap());
        ensure(gen.data() == dec.data(), || "generate(z) differs from decode(z)".into())?;
        let x = t.decode(&z).unwrap();
        ensure(
            t.head_features("dis", &x).unwrap() == t.head_features("clf", &x).unwrap(),
            || "dis and clf features differ after transfer".into(),
        )?;
    }
    Ok(())
}

pub fn generator_labels_uniform() -> Check {
    // χ² over 10⁵ draws; 8 degrees of freedom (9 allowed labels) at p = 0.001 is 26.12.
    let latents: Vec<Vec<Vec<f64>>> = (0..10).map(|c| vec![vec![c as f64], vec![c as f64 + 0.5]]).collect();
    let priors = ClassPriors::fit(&latents, 1e-4, false).map_err(|e| e.to_string())?;
    let (_, labels) = sample_generator_batch(&priors, 100_000, 5, Some(0)).map_err(|e| e.to_string())?;
    let mut counts = [0f64; 10];
    labels.iter().for_each(|&l| counts[l] += 1.0);
    ensure(counts[0] == 0.0, || "majority label sampled despite exclusion".into())?;
    let expected = 100_000.0 / 9.0;
    let chi2: f64 = counts[1..].iter().map(|o| (o - expected).powi(2) / expected).sum();
    ensure(chi2 < 26.12, || format!("χ² = {chi2:.2} over 9 labels"))
}

// ---------------------------------------------------------------- synthetic end to end

pub struct SyntheticRun {
    pub acsa: f64,
    pub history: Vec<(usize, f64)>,
    pub seconds: f64,
}

/// Two-class blobs with IR 10: pretraining, priors, then `epochs` of
/// `strategy`. Returns the test ACSA of the validation-selected epoch.
pub fn synthetic_run(strategy: Strategy, epochs: usize, seed: u64) -> Result<SyntheticRun, String> {
    let start = std::time::Instant::now();
    let pool = synthetic_blobs(&[250, 70], 8, seed);
    let train = make_imbalanced(&pool, &[200, 20], seed).map_err(|e| e.to_string())?;
    let val = lpgan_core::data::holdout_split(&pool, &train, 50, seed).map_err(|e| e.to_string())?;
    let test = synthetic_blobs(&[200, 200], 8, !seed);
    let bundle = build_networks::<f32>(&ArchitectureSpec::synthetic(), 2, seed).map_err(|e| e.to_string())?;
    let slppl = SlpplConfig {
        epochs: 50,
        batch_size: 32,
        ..SlpplConfig::default()
    };
    let (bundle, _) = train_slppl(&train, bundle, &slppl, seed).map_err(|e| e.to_string())?;
    let priors = lpgan_core::slppl::fit_class_priors(&train, &bundle, 1e-4, false).map_err(|e| e.to_string())?;
    let bundle = transfer_init(&bundle).map_err(|e| e.to_string())?;
    let config = AdvConfig {
        epochs,
        batch_size: 32,
        ..AdvConfig::default()
    };
    let eval = EvalSets {
        test: &test,
        validation: Some(&val),
    };
    let out = train_adversarial(strategy, &train, &priors, bundle, &config, seed, eval, &mut |_, _| Ok(()))
        .map_err(|e| e.to_string())?;
    let acsa = advtrain::evaluate_acsa(&out.best, &test).map_err(|e| e.to_string())?;
    Ok(SyntheticRun {
        acsa,
        history: out.history.rows.iter().map(|r| (r.epoch, r.acsa)).collect(),
        seconds: start.elapsed().as_secs_f64(),
    })
}
