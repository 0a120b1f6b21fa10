//! Synthetic descriptor sets with planted group structure.
//!
//! Group centers are uniform on the unit sphere. Each member is
//! `normalize(center + σ·g + a·h)` where `g` is isotropic Gaussian noise and
//! `h` is Gaussian noise restricted to the first `m` coordinate axes (the
//! nuisance subspace). With an intrinsic dimension `k`, all of this happens
//! in `k` dimensions and the result is embedded in `d` dimensions through a
//! random orthonormal basis.
//!
//! All randomness comes from one ChaCha8 seed, split into independent
//! streams for centers, members and the embedding.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::descriptor::DescriptorSet;
use crate::error::{Error, Result};
use crate::io;
use crate::math;
use crate::pairs::{sample_negatives, Pair, PairSet};
use crate::truth::{GroundTruth, GroupTruth};

const STREAM_CENTERS: u64 = 1;
const STREAM_MEMBERS: u64 = 2;
const STREAM_EMBED: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Nuisance {
    /// Number of leading axes that carry within-group nuisance.
    pub dim: usize,
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub groups: usize,
    pub size: usize,
    pub dim: usize,
    pub sigma: f64,
    pub nuisance: Option<Nuisance>,
    pub intrinsic_dim: Option<usize>,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(groups: usize, size: usize, dim: usize, sigma: f64, seed: u64) -> Self {
        Self {
            groups,
            size,
            dim,
            sigma,
            nuisance: None,
            intrinsic_dim: None,
            seed,
        }
    }

    pub fn with_nuisance(mut self, dim: usize, amplitude: f64) -> Self {
        self.nuisance = Some(Nuisance { dim, amplitude });
        self
    }

    pub fn with_intrinsic_dim(mut self, k: usize) -> Self {
        self.intrinsic_dim = Some(k);
        self
    }

    fn working_dim(&self) -> usize {
        self.intrinsic_dim.unwrap_or(self.dim)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.groups < 2 {
            return bad(format!("need at least 2 groups, got {}", self.groups));
        }
        if self.size < 2 {
            return bad(format!("need at least 2 members per group, got {}", self.size));
        }
        if self.dim < 2 {
            return bad(format!("dimension must be >= 2, got {}", self.dim));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be a finite value >= 0, got {}", self.sigma));
        }
        if let Some(k) = self.intrinsic_dim {
            if k < 2 || k > self.dim {
                return bad(format!("intrinsic dimension must lie in [2, {}], got {k}", self.dim));
            }
        }
        if let Some(n) = self.nuisance {
            if n.dim >= self.working_dim() {
                return bad(format!(
                    "nuisance dimension {} must be below {}",
                    n.dim,
                    self.working_dim()
                ));
            }
            if !(n.amplitude >= 0.0 && n.amplitude.is_finite()) {
                return bad(format!("nuisance amplitude must be >= 0, got {}", n.amplitude));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub descriptors: DescriptorSet,
    pub truth: GroupTruth,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit_gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v = gaussian(rng, n);
        if let Ok(u) = math::l2_normalize(&v) {
            return u;
        }
    }
}

/// `k` orthonormal rows of length `d` (Gram–Schmidt on Gaussian vectors).
fn random_basis(rng: &mut ChaCha8Rng, k: usize, d: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v = gaussian(rng, d);
        for _ in 0..2 {
            for b in &basis {
                let p = math::dot(b, &v);
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= p * y;
                }
            }
        }
        if let Ok(u) = math::l2_normalize(&v) {
            if math::norm(&v) > 1e-6 {
                basis.push(u);
            }
        }
    }
    basis
}

pub fn generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let w = spec.working_dim();
    let mut center_rng = rng_for(spec.seed, STREAM_CENTERS);
    let mut member_rng = rng_for(spec.seed, STREAM_MEMBERS);
    let centers: Vec<Vec<f64>> = (0..spec.groups)
        .map(|_| unit_gaussian(&mut center_rng, w))
        .collect();
    let basis = spec
        .intrinsic_dim
        .map(|k| random_basis(&mut rng_for(spec.seed, STREAM_EMBED), k, spec.dim));

    let n = spec.groups * spec.size;
    let mut ids = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * spec.dim);
    let mut group_of = BTreeMap::new();
    let mut v = vec![0.0; w];
    for (j, center) in centers.iter().enumerate() {
        for i in 0..spec.size {
            v.copy_from_slice(center);
            for x in v.iter_mut() {
                *x += spec.sigma * member_rng.sample::<f64, _>(StandardNormal);
            }
            if let Some(nu) = spec.nuisance {
                for x in v.iter_mut().take(nu.dim) {
                    *x += nu.amplitude * member_rng.sample::<f64, _>(StandardNormal);
                }
            }
            let id = format!("g{j}_{i}");
            let mut row = match &basis {
                Some(b) => {
                    let mut out = vec![0.0; spec.dim];
                    for (coef, axis) in v.iter().zip(b) {
                        for (o, a) in out.iter_mut().zip(axis) {
                            *o += coef * a;
                        }
                    }
                    out
                }
                None => v.clone(),
            };
            math::normalize_in_place(&mut row).map_err(|_| Error::ZeroVector {
                id: Some(id.clone()),
            })?;
            data.extend_from_slice(&row);
            group_of.insert(id.clone(), format!("g{j}"));
            ids.push(id);
        }
    }
    Ok(SynthDataset {
        descriptors: DescriptorSet::new(ids, data, spec.dim)?,
        truth: GroupTruth::new(group_of),
    })
}

/// Positives are all same-group pairs; negatives are as many cross-group
/// pairs, sampled with `seed`.
pub fn generate_nuisance_pairs(truth: &GroupTruth, seed: u64) -> Result<PairSet> {
    let mut positives = Vec::new();
    for members in truth.groups().values() {
        for (x, a) in members.iter().enumerate() {
            for b in &members[x + 1..] {
                positives.extend(Pair::new(*a, *b));
            }
        }
    }
    positives.sort();
    let negatives = sample_negatives(truth.group_of(), positives.len(), seed)?;
    Ok(PairSet {
        positives,
        negatives,
    })
}

/// Files written by [`write_dataset`] for an output prefix.
pub fn dataset_paths(prefix: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let with = |ext: &str| {
        let mut s = prefix.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".ncd"), with(".ids"), with(".gt.tsv"))
}

pub fn write_dataset(ds: &SynthDataset, prefix: &Path) -> Result<()> {
    let (ncd, ids, gt) = dataset_paths(prefix);
    io::write_ncd(&ds.descriptors, &ncd, &ids)?;
    io::write_ground_truth(&GroundTruth::Groups(ds.truth.clone()), &gt)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{evaluate_holidays, evaluate_ukb, HolidaysOptions};
    use crate::index::build_index;

    #[test]
    fn zero_noise_members_identical() {
        let ds = generate(&SynthSpec::new(5, 3, 8, 0.0, 1)).unwrap();
        let set = &ds.descriptors;
        assert_eq!(set.len(), 15);
        assert_eq!(set.ids()[4], "g1_1");
        for g in 0..5 {
            for i in 1..3 {
                assert_eq!(set.row(g * 3), set.row(g * 3 + i));
            }
        }
        assert!(set.is_normalized(1e-12));
        let idx = build_index(set, true).unwrap();
        assert_eq!(evaluate_holidays(&idx, &ds.truth, HolidaysOptions::default()).unwrap().aggregate, 1.0);
        let four = generate(&SynthSpec::new(6, 4, 8, 0.0, 2)).unwrap();
        let idx = build_index(&four.descriptors, true).unwrap();
        assert_eq!(evaluate_ukb(&idx, &four.truth).unwrap().aggregate, 4.0);
    }

    #[test]
    fn deterministic_bytes() {
        let spec = SynthSpec::new(7, 3, 16, 0.1, 99).with_nuisance(4, 0.3);
        let a = io::encode_ncd(&generate(&spec).unwrap().descriptors).unwrap();
        let b = io::encode_ncd(&generate(&spec).unwrap().descriptors).unwrap();
        assert_eq!(a, b);
        let other = SynthSpec { seed: 100, ..spec };
        assert_ne!(a, io::encode_ncd(&generate(&other).unwrap().descriptors).unwrap());
    }

    #[test]
    fn intrinsic_dimension_rank() {
        let spec = SynthSpec::new(30, 4, 20, 0.1, 3).with_intrinsic_dim(5);
        let ds = generate(&spec).unwrap();
        let pca = crate::pca::fit_pca(&ds.descriptors, 19, 0).unwrap();
        // centered data lives in a subspace of dimension <= 5
        assert!(pca.eigvals()[5..].iter().all(|&v| v < 1e-12));
        assert!(pca.eigvals()[4] > 1e-3);
    }

    #[test]
    fn spec_validation() {
        assert!(generate(&SynthSpec::new(1, 2, 4, 0.0, 0)).is_err());
        assert!(generate(&SynthSpec::new(2, 1, 4, 0.0, 0)).is_err());
        assert!(generate(&SynthSpec::new(2, 2, 1, 0.0, 0)).is_err());
        assert!(generate(&SynthSpec::new(2, 2, 4, -1.0, 0)).is_err());
        assert!(generate(&SynthSpec::new(2, 2, 4, 0.0, 0).with_nuisance(4, 0.1)).is_err());
        assert!(generate(&SynthSpec::new(2, 2, 4, 0.0, 0).with_intrinsic_dim(5)).is_err());
    }

    #[test]
    fn nuisance_pairs_counts() {
        let ds = generate(&SynthSpec::new(2, 2, 4, 0.1, 0).with_nuisance(1, 0.5)).unwrap();
        let pairs = generate_nuisance_pairs(&ds.truth, 0).unwrap();
        assert_eq!(pairs.positives.len(), 2);
        assert_eq!(pairs.negatives.len(), 2);

        let ds = generate(&SynthSpec::new(9, 5, 6, 0.1, 0)).unwrap();
        let pairs = generate_nuisance_pairs(&ds.truth, 4).unwrap();
        assert_eq!(pairs.positives.len(), 9 * 5 * 4 / 2);
        assert_eq!(pairs, generate_nuisance_pairs(&ds.truth, 4).unwrap());
        let groups = ds.truth.group_of();
        assert!(pairs.positives.iter().all(|p| groups[p.a()] == groups[p.b()]));
        assert!(pairs.negatives.iter().all(|p| groups[p.a()] != groups[p.b()]));
    }
}
