//! `NBND1` binary parameter container.
//!
//! Layout: the 5-byte tag `NBND1`, then records until end of file. Each
//! record is a `u32` name length, the UTF-8 name, a `u32` rank, `rank`
//! dimensions as `u64`, and the `f32` payload, all little-endian.

use std::path::Path;

use lpgan_autodiff::{ParamSet, Tensor};

use crate::nets::{ArchitectureSpec, NetworkBundle};
use crate::slppl::ClassPriors;
use crate::{Error, Result};

pub const TAG: &[u8; 5] = b"NBND1";

const NETWORKS: [&str; 5] = ["enc", "dec", "gen", "dis", "clf"];

pub fn encode_records(records: &[(String, Tensor<f32>)]) -> Vec<u8> {
    let mut out = TAG.to_vec();
    for (name, t) in records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated {what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_records(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    if bytes.len() < TAG.len() || &bytes[..TAG.len()] != TAG {
        return Err(Error::Checkpoint("missing NBND1 header".into()));
    }
    let mut cur = Cursor {
        bytes,
        pos: TAG.len(),
    };
    let mut records = Vec::new();
    while cur.pos < bytes.len() {
        let len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(len, "name")?)
            .map_err(|_| Error::Checkpoint(format!("record name at byte {} is not UTF-8", cur.pos)))?
            .to_owned();
        let rank = cur.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(usize::try_from(cur.u64("dimension")?).map_err(|_| Error::Checkpoint(format!("{name}: dimension overflows")))?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Checkpoint(format!("{name}: payload size overflows")))?;
        let data = cur
            .take(numel, "payload")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push((name, Tensor::from_vec(&shape, data)?));
    }
    Ok(records)
}

pub fn write_records(path: &Path, records: &[(String, Tensor<f32>)]) -> Result<()> {
    std::fs::write(path, encode_records(records)).map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_records(&bytes)
}

/// Records for every network parameter (`enc.*` … `clf.*`) and, when given,
/// the priors (`prior.mu.{c}`, `prior.sigma.{c}`, `prior.eps`).
pub fn bundle_records(bundle: &NetworkBundle<f32>, priors: Option<&ClassPriors>) -> Vec<(String, Tensor<f32>)> {
    let sets = [&bundle.enc, &bundle.dec, &bundle.gen, &bundle.dis, &bundle.clf];
    let mut out = Vec::new();
    for (prefix, set) in NETWORKS.iter().zip(sets) {
        for (name, t) in set.iter() {
            out.push((format!("{prefix}.{name}"), t.clone()));
        }
    }
    if let Some(p) = priors {
        let q = p.latent_dim();
        for c in 0..p.num_classes() {
            let mu = p.means[c].iter().map(|&v| v as f32).collect();
            let sigma = p.covariances[c].iter().map(|&v| v as f32).collect();
            out.push((format!("prior.mu.{c}"), Tensor::from_vec(&[q], mu).expect("mean")));
            out.push((format!("prior.sigma.{c}"), Tensor::from_vec(&[q, q], sigma).expect("covariance")));
        }
        out.push(("prior.eps".into(), Tensor::scalar(p.epsilon as f32)));
    }
    out
}

pub fn save_checkpoint(path: &Path, bundle: &NetworkBundle<f32>, priors: Option<&ClassPriors>) -> Result<()> {
    write_records(path, &bundle_records(bundle, priors))
}

/// Rebuild a bundle (validated against `arch`) and any stored priors.
pub fn load_checkpoint(
    path: &Path,
    arch: &ArchitectureSpec,
    seed: u64,
) -> Result<(NetworkBundle<f32>, Option<ClassPriors>)> {
    bundle_from_records(read_records(path)?, arch, seed)
}

pub fn bundle_from_records(
    records: Vec<(String, Tensor<f32>)>,
    arch: &ArchitectureSpec,
    seed: u64,
) -> Result<(NetworkBundle<f32>, Option<ClassPriors>)> {
    let mut sets: [ParamSet<f32>; 5] = Default::default();
    let mut mus = Vec::new();
    let mut sigmas = Vec::new();
    let mut eps = None;
    for (name, t) in records {
        let (prefix, rest) = name
            .split_once('.')
            .ok_or_else(|| Error::Checkpoint(format!("unexpected record {name:?}")))?;
        if let Some(i) = NETWORKS.iter().position(|&p| p == prefix) {
            if sets[i].insert(rest, t).is_some() {
                return Err(Error::Checkpoint(format!("duplicate record {name:?}")));
            }
            continue;
        }
        match rest.split_once('.') {
            _ if prefix != "prior" => return Err(Error::Checkpoint(format!("unexpected record {name:?}"))),
            None if rest == "eps" => eps = Some(f64::from(t.item())),
            Some(("mu", c)) => mus.push((parse_class(c, &name)?, t)),
            Some(("sigma", c)) => sigmas.push((parse_class(c, &name)?, t)),
            _ => return Err(Error::Checkpoint(format!("unexpected record {name:?}"))),
        }
    }
    let num_classes = sets[4]
        .get("head.b")
        .map(|b| b.numel())
        .ok_or_else(|| Error::Checkpoint("no classifier head (clf.head.b)".into()))?;
    let bundle = NetworkBundle::from_parts(arch, num_classes, seed, sets)?;
    if mus.is_empty() && sigmas.is_empty() && eps.is_none() {
        return Ok((bundle, None));
    }
    let eps = eps.ok_or_else(|| Error::Checkpoint("priors without prior.eps".into()))?;
    mus.sort_by_key(|(c, _)| *c);
    sigmas.sort_by_key(|(c, _)| *c);
    let q = bundle.plan().latent_dim;
    let complete = |v: &[(usize, Tensor<f32>)], numel: usize| {
        v.len() == num_classes && v.iter().enumerate().all(|(i, (c, t))| *c == i && t.numel() == numel)
    };
    if !complete(&mus, q) || !complete(&sigmas, q * q) {
        return Err(Error::Checkpoint(format!(
            "priors must hold a {q}-mean and {q}x{q} covariance for each of {num_classes} classes"
        )));
    }
    let widen = |t: &Tensor<f32>| t.data().iter().map(|&v| f64::from(v)).collect::<Vec<_>>();
    let priors = ClassPriors::from_moments(
        mus.iter().map(|(_, t)| widen(t)).collect(),
        sigmas.iter().map(|(_, t)| widen(t)).collect(),
        eps,
    )?;
    Ok((bundle, Some(priors)))
}

fn parse_class(s: &str, name: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::Checkpoint(format!("bad class index in {name:?}")))
}
