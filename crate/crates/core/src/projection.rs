//! Discriminative dimensionality reduction.
//!
//! Learns a low-rank linear map `W` (`D x d_in`) from labelled image pairs by
//! minimizing
//!
//! ```text
//! L(W) = Σ_pos max(0, ‖W(xᵢ−xⱼ)‖² − τ_pos) + Σ_neg max(0, τ_neg − ‖W(xᵢ−xⱼ)‖²)
//! ```
//!
//! with seeded mini-batch gradient descent. `W` starts at the top-`D` PCA
//! directions of the training codes, so zero epochs reproduces plain PCA.
//! For `D >= 64` the codes are first PCA-compressed to
//! [`PRE_PCA_DIM`] dimensions and `W` is learned on top of that.

use std::collections::{BTreeMap, HashMap};

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::descriptor::DescriptorSet;
use crate::error::{Error, Result};
use crate::math;
use crate::pairs::{PairLabel, PairSet};
use crate::pca::{apply_pca, fit_pca, ApplyOptions, PcaModel};

/// Output dimension at or above which the PCA pre-stage is used.
pub const TWO_STAGE_MIN_DIM: usize = 64;
/// Target dimension of the PCA pre-stage.
pub const PRE_PCA_DIM: usize = 1024;
/// Maximum number of step-size halvings over one training run.
pub const MAX_HALVINGS: u32 = 10;
/// Unit-norm tolerance for training inputs (they usually come from `f32` files).
pub const INPUT_NORM_TOL: f64 = 1e-5;

// pairs per gradient partial; fixed so the reduction order never depends on
// the thread count
const GRAD_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub tau_pos: f64,
    pub tau_neg: f64,
    pub eta0: f64,
    pub decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            tau_pos: 0.8,
            tau_neg: 1.4,
            eta0: 0.1,
            decay: 0.1,
            epochs: 30,
            batch_size: 256,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.dim == 0 {
            return bad("projection dimension must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1");
        }
        if !(self.tau_pos > 0.0 && self.tau_neg > 0.0) {
            return bad("margins must be positive");
        }
        if self.tau_pos >= self.tau_neg {
            return bad("tau_pos must be smaller than tau_neg");
        }
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return bad("step size must be positive");
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            return bad("decay must be non-negative");
        }
        Ok(())
    }

    /// Step size for `epoch` before any backoff.
    pub fn step_size(&self, epoch: usize) -> f64 {
        self.eta0 / (1.0 + self.decay * epoch as f64)
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("dim", self.dim.to_string()),
            ("tau_pos", self.tau_pos.to_string()),
            ("tau_neg", self.tau_neg.to_string()),
            ("eta0", self.eta0.to_string()),
            ("decay", self.decay.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    pub fn from_pairs(kv: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<T> {
            let raw = kv
                .get(key)
                .ok_or_else(|| Error::Validation(format!("manifest is missing {key}")))?;
            raw.parse()
                .map_err(|_| Error::Validation(format!("manifest {key}: bad value {raw:?}")))
        }
        Ok(Self {
            dim: get(kv, "dim")?,
            tau_pos: get(kv, "tau_pos")?,
            tau_neg: get(kv, "tau_neg")?,
            eta0: get(kv, "eta0")?,
            decay: get(kv, "decay")?,
            epochs: get(kv, "epochs")?,
            batch_size: get(kv, "batch_size")?,
            seed: get(kv, "seed")?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionModel {
    weights: Vec<f64>,
    d_in: usize,
    d_out: usize,
    pre_pca: Option<PcaModel>,
    config: Option<TrainConfig>,
}

impl ProjectionModel {
    pub fn from_parts(
        weights: Vec<f64>,
        d_in: usize,
        d_out: usize,
        pre_pca: Option<PcaModel>,
        config: Option<TrainConfig>,
    ) -> Result<Self> {
        if d_out == 0 || d_out > d_in {
            return Err(Error::Validation(format!(
                "projection must satisfy 1 <= D <= d_in (D={d_out}, d_in={d_in})"
            )));
        }
        if weights.len() != d_in * d_out {
            return Err(Error::DimensionMismatch {
                expected: d_in * d_out,
                actual: weights.len(),
            });
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { id: None });
        }
        if let Some(pre) = &pre_pca {
            if pre.output_dim() != d_in {
                return Err(Error::DimensionMismatch {
                    expected: d_in,
                    actual: pre.output_dim(),
                });
            }
        }
        Ok(Self {
            weights,
            d_in,
            d_out,
            pre_pca,
            config,
        })
    }

    /// Input dimension of `W` (after the pre-stage, if any).
    pub fn input_dim(&self) -> usize {
        self.d_in
    }

    pub fn output_dim(&self) -> usize {
        self.d_out
    }

    /// Dimension of the descriptors this model accepts.
    pub fn source_dim(&self) -> usize {
        self.pre_pca.as_ref().map_or(self.d_in, PcaModel::input_dim)
    }

    /// Row-major `D x d_in` matrix.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn pre_pca(&self) -> Option<&PcaModel> {
        self.pre_pca.as_ref()
    }

    pub fn config(&self) -> Option<&TrainConfig> {
        self.config.as_ref()
    }
}

/// A pair of row indices into a training set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainingPair {
    pub i: usize,
    pub j: usize,
    pub label: PairLabel,
}

fn pair_term(
    w: &[f64],
    d_out: usize,
    x: &DescriptorSet,
    p: &TrainingPair,
    cfg: &TrainConfig,
    delta: &mut [f64],
    proj: &mut [f64],
) -> (f64, f64) {
    let d_in = x.dim();
    for ((t, a), b) in delta.iter_mut().zip(x.row(p.i)).zip(x.row(p.j)) {
        *t = a - b;
    }
    for (k, o) in proj.iter_mut().enumerate().take(d_out) {
        *o = math::dot(&w[k * d_in..(k + 1) * d_in], delta);
    }
    let s = math::dot(proj, proj);
    // (loss, sign of dL/ds); ties at the margin take the inactive branch
    match p.label {
        PairLabel::Positive if s > cfg.tau_pos => (s - cfg.tau_pos, 1.0),
        PairLabel::Negative if s < cfg.tau_neg => (cfg.tau_neg - s, -1.0),
        _ => (0.0, 0.0),
    }
}

/// Batch loss and its gradient with respect to `W` (row-major `D x d`).
///
/// Each active positive pair contributes `2·WΔΔᵀ`, each active negative pair
/// `−2·WΔΔᵀ`. Pairs exactly on a margin count as inactive.
pub fn loss_and_gradient(
    w: &[f64],
    d_out: usize,
    x: &DescriptorSet,
    batch: &[TrainingPair],
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    let d_in = x.dim();
    if w.len() != d_out * d_in {
        return Err(Error::DimensionMismatch {
            expected: d_out * d_in,
            actual: w.len(),
        });
    }
    if batch.is_empty() {
        return Err(Error::EmptyPairs);
    }
    let partials: Vec<(f64, Vec<f64>)> = batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut delta = vec![0.0; d_in];
            let mut proj = vec![0.0; d_out];
            let mut grad = vec![0.0; d_out * d_in];
            let mut loss = 0.0;
            for p in chunk {
                let (l, sign) = pair_term(w, d_out, x, p, cfg, &mut delta, &mut proj);
                if sign == 0.0 {
                    continue;
                }
                loss += l;
                for (k, &pk) in proj.iter().enumerate() {
                    let scale = 2.0 * sign * pk;
                    for (g, t) in grad[k * d_in..(k + 1) * d_in].iter_mut().zip(&delta) {
                        *g += scale * t;
                    }
                }
            }
            (loss, grad)
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; d_out * d_in];
    for (l, g) in partials {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((loss, grad))
}

/// Loss over all `pairs`, summed in fixed chunk order.
pub fn total_loss(
    w: &[f64],
    d_out: usize,
    x: &DescriptorSet,
    pairs: &[TrainingPair],
    cfg: &TrainConfig,
) -> f64 {
    let d_in = x.dim();
    let partials: Vec<f64> = pairs
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut delta = vec![0.0; d_in];
            let mut proj = vec![0.0; d_out];
            chunk
                .iter()
                .map(|p| pair_term(w, d_out, x, p, cfg, &mut delta, &mut proj).0)
                .sum::<f64>()
        })
        .collect();
    partials.iter().sum()
}

/// Resolves a pair set against the rows of `x`.
pub fn resolve_pairs(x: &DescriptorSet, pairs: &PairSet) -> Result<Vec<TrainingPair>> {
    let index: HashMap<&str, usize> = x.id_index();
    pairs.validate(|id| index.contains_key(id))?;
    let mut out = Vec::with_capacity(pairs.len());
    for (list, label) in [
        (&pairs.positives, PairLabel::Positive),
        (&pairs.negatives, PairLabel::Negative),
    ] {
        for p in list {
            out.push(TrainingPair {
                i: index[p.a()],
                j: index[p.b()],
                label,
            });
        }
    }
    Ok(out)
}

/// Per-epoch record of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: f64,
    pub loss: f64,
    pub accepted: bool,
}

pub fn fit_projection(
    x: &DescriptorSet,
    pairs: &PairSet,
    cfg: &TrainConfig,
) -> Result<ProjectionModel> {
    fit_projection_logged(x, pairs, cfg).map(|(m, _)| m)
}

/// Like [`fit_projection`] but also returns the epoch-end losses. The
/// accepted losses form a non-increasing sequence: an epoch that raises the
/// loss is undone and retried at half the step size, up to
/// [`MAX_HALVINGS`] times in total, after which training stops.
pub fn fit_projection_logged(
    x: &DescriptorSet,
    pairs: &PairSet,
    cfg: &TrainConfig,
) -> Result<(ProjectionModel, Vec<EpochLog>)> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyPairs);
    }
    if !x.is_normalized(INPUT_NORM_TOL) {
        return Err(Error::Validation(
            "projection training expects L2-normalized descriptors".into(),
        ));
    }
    let resolved = resolve_pairs(x, pairs)?;

    let pre_pca = if cfg.dim >= TWO_STAGE_MIN_DIM {
        let pre_dim = PRE_PCA_DIM.min(x.dim()).min(x.len().saturating_sub(1));
        if pre_dim == 0 {
            return Err(Error::TooFewSamples {
                n: x.len(),
                required: 2,
            });
        }
        info!("fitting PCA pre-stage to {pre_dim} dimensions");
        Some(fit_pca(x, pre_dim, cfg.seed)?)
    } else {
        None
    };
    let train_x = match &pre_pca {
        Some(pre) => apply_pca(
            pre,
            x,
            ApplyOptions {
                renormalize: false,
                whiten: false,
            },
        )?,
        None => x.clone(),
    };
    let d_in = train_x.dim();
    if cfg.dim > d_in {
        return Err(Error::InvalidArgument(format!(
            "projection dimension {} exceeds input dimension {d_in}",
            cfg.dim
        )));
    }

    let init = fit_pca(&train_x, cfg.dim, cfg.seed)?;
    let mut w = init.components().to_vec();
    let mut loss = total_loss(&w, cfg.dim, &train_x, &resolved, cfg);
    if !loss.is_finite() {
        return Err(Error::DivergedLoss { epoch: 0 });
    }
    debug!("initial loss {loss}");

    let mut log = Vec::new();
    let mut backoff = 1.0;
    let mut halvings = 0;
    let mut order: Vec<usize> = (0..resolved.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    'epochs: for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.sort_unstable();
        order.shuffle(&mut rng);
        loop {
            let step = cfg.step_size(epoch) * backoff;
            let mut trial = w.clone();
            for idx in order.chunks(cfg.batch_size) {
                batch.clear();
                batch.extend(idx.iter().map(|&k| resolved[k]));
                let (_, grad) = loss_and_gradient(&trial, cfg.dim, &train_x, &batch, cfg)?;
                for (t, g) in trial.iter_mut().zip(&grad) {
                    *t -= step * g;
                }
            }
            let trial_loss = total_loss(&trial, cfg.dim, &train_x, &resolved, cfg);
            if !trial_loss.is_finite() || trial.iter().any(|v| !v.is_finite()) {
                return Err(Error::DivergedLoss { epoch });
            }
            let accepted = trial_loss <= loss;
            log.push(EpochLog {
                epoch,
                step,
                loss: trial_loss,
                accepted,
            });
            if accepted {
                debug!("epoch {epoch}: loss {trial_loss} (step {step})");
                w = trial;
                loss = trial_loss;
                break;
            }
            if halvings >= MAX_HALVINGS {
                info!("epoch {epoch}: loss rose after {MAX_HALVINGS} halvings, stopping");
                break 'epochs;
            }
            halvings += 1;
            backoff *= 0.5;
            debug!("epoch {epoch}: loss rose to {trial_loss}, halving step");
        }
    }

    let model = ProjectionModel::from_parts(w, d_in, cfg.dim, pre_pca, Some(cfg.clone()))?;
    Ok((model, log))
}

/// Applies the optional PCA pre-stage (without renormalization), then `W`.
pub fn apply_projection(
    model: &ProjectionModel,
    set: &DescriptorSet,
    renormalize: bool,
) -> Result<DescriptorSet> {
    if set.dim() != model.source_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.source_dim(),
            actual: set.dim(),
        });
    }
    let staged;
    let input = match &model.pre_pca {
        Some(pre) => {
            staged = apply_pca(
                pre,
                set,
                ApplyOptions {
                    renormalize: false,
                    whiten: false,
                },
            )?;
            &staged
        }
        None => set,
    };
    let (d_in, d_out) = (model.d_in, model.d_out);
    let mut out = vec![0.0; input.len() * d_out];
    out.par_chunks_mut(d_out)
        .zip(input.data().par_chunks(d_in))
        .for_each(|(dst, row)| {
            for (k, o) in dst.iter_mut().enumerate() {
                *o = math::dot(&model.weights[k * d_in..(k + 1) * d_in], row);
            }
        });
    let mut projected = set.with_data(out, d_out)?;
    if renormalize {
        projected.normalize_rows()?;
    }
    Ok(projected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pairs::Pair;
    use rand::Rng;

    fn unit_set(points: &[(f64, f64)]) -> DescriptorSet {
        let rows: Vec<Vec<f64>> = points
            .iter()
            .map(|&(x, y)| math::l2_normalize(&[x, y]).unwrap())
            .collect();
        let ids = (0..points.len()).map(|i| format!("p{i}")).collect();
        DescriptorSet::from_rows(ids, &rows).unwrap()
    }

    fn random_unit_set(n: usize, d: usize, seed: u64) -> DescriptorSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                math::l2_normalize(&v).unwrap()
            })
            .collect();
        let ids = (0..n).map(|i| format!("r{i:03}")).collect();
        DescriptorSet::from_rows(ids, &rows).unwrap()
    }

    fn pair(a: &str, b: &str) -> Pair {
        Pair::new(a, b).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            tau_pos: 1.5,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidArgument(_))));
        let bad = TrainConfig {
            dim: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let cfg = TrainConfig::default();
        let kv: BTreeMap<String, String> = cfg
            .to_pairs()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        assert_eq!(TrainConfig::from_pairs(&kv).unwrap(), cfg);
    }

    #[test]
    fn inactive_positive_hinge() {
        let x = unit_set(&[(1.0, 0.0), (0.9, 0.1)]);
        let w = vec![1.0, 0.0];
        let batch = [TrainingPair {
            i: 0,
            j: 1,
            label: PairLabel::Positive,
        }];
        let (loss, grad) = loss_and_gradient(&w, 1, &x, &batch, &TrainConfig::default()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn active_positive_gradient_closed_form() {
        let x = unit_set(&[(1.0, 0.0), (-1.0, 0.2)]);
        let w = vec![1.0, 0.5, -0.3, 0.8];
        let cfg = TrainConfig {
            tau_pos: 0.1,
            ..Default::default()
        };
        let batch = [TrainingPair {
            i: 0,
            j: 1,
            label: PairLabel::Positive,
        }];
        let (_, grad) = loss_and_gradient(&w, 2, &x, &batch, &cfg).unwrap();
        let delta: Vec<f64> = x.row(0).iter().zip(x.row(1)).map(|(a, b)| a - b).collect();
        for k in 0..2 {
            let wd = w[2 * k] * delta[0] + w[2 * k + 1] * delta[1];
            for j in 0..2 {
                let expected = 2.0 * wd * delta[j];
                assert!((grad[2 * k + j] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loss_is_additive_over_labels() {
        let x = random_unit_set(12, 5, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pos: Vec<TrainingPair> = (0..6)
            .map(|k| TrainingPair {
                i: k,
                j: k + 6,
                label: PairLabel::Positive,
            })
            .collect();
        let neg: Vec<TrainingPair> = (0..5)
            .map(|k| TrainingPair {
                i: k,
                j: k + 1,
                label: PairLabel::Negative,
            })
            .collect();
        let cfg = TrainConfig::default();
        let both: Vec<TrainingPair> = pos.iter().chain(&neg).copied().collect();
        let (lp, _) = loss_and_gradient(&w, 3, &x, &pos, &cfg).unwrap();
        let (ln, _) = loss_and_gradient(&w, 3, &x, &neg, &cfg).unwrap();
        let (lb, _) = loss_and_gradient(&w, 3, &x, &both, &cfg).unwrap();
        assert!((lb - (lp + ln)).abs() < 1e-12);
        assert!(matches!(
            loss_and_gradient(&w, 3, &x, &[], &cfg),
            Err(Error::EmptyPairs)
        ));
    }

    #[test]
    fn zero_epochs_is_pca() {
        let x = random_unit_set(30, 6, 4);
        let pairs = PairSet {
            positives: vec![pair("r000", "r001")],
            negatives: vec![pair("r002", "r003")],
        };
        let cfg = TrainConfig {
            dim: 3,
            epochs: 0,
            ..Default::default()
        };
        let model = fit_projection(&x, &pairs, &cfg).unwrap();
        let pca = fit_pca(&x, 3, cfg.seed).unwrap();
        assert_eq!(model.weights(), pca.components());
        assert!(model.pre_pca().is_none());
    }

    #[test]
    fn satisfied_margins_leave_w_unchanged() {
        // identical positives (distance 0) and opposite negatives (distance² 4)
        let x = unit_set(&[(1.0, 0.0), (1.0, 0.0001), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)]);
        let pairs = PairSet {
            positives: vec![pair("p0", "p1")],
            negatives: vec![pair("p0", "p2"), pair("p3", "p4")],
        };
        let cfg = TrainConfig {
            dim: 2,
            epochs: 5,
            ..Default::default()
        };
        let model = fit_projection(&x, &pairs, &cfg).unwrap();
        let init = fit_pca(&x, 2, cfg.seed).unwrap();
        for (a, b) in model.weights().iter().zip(init.components()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fit_errors() {
        let x = random_unit_set(10, 4, 5);
        let cfg = TrainConfig {
            dim: 2,
            ..Default::default()
        };
        assert!(matches!(
            fit_projection(&x, &PairSet::default(), &cfg),
            Err(Error::EmptyPairs)
        ));
        let pairs = PairSet {
            positives: vec![pair("r000", "zzz")],
            negatives: vec![],
        };
        assert!(matches!(
            fit_projection(&x, &pairs, &cfg),
            Err(Error::UnresolvableId(id)) if id == "zzz"
        ));
        let raw = DescriptorSet::from_rows(
            vec!["a".into(), "b".into()],
            &[[2.0, 0.0], [0.0, 1.0]],
        )
        .unwrap();
        let pairs = PairSet {
            positives: vec![pair("a", "b")],
            negatives: vec![],
        };
        assert!(matches!(
            fit_projection(&raw, &pairs, &TrainConfig { dim: 1, ..cfg }),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn diverging_step_is_reported() {
        let x = random_unit_set(20, 4, 6);
        let pairs = PairSet {
            positives: (0..10)
                .map(|k| pair(&format!("r{:03}", k), &format!("r{:03}", k + 10)))
                .collect(),
            negatives: vec![],
        };
        let cfg = TrainConfig {
            dim: 2,
            tau_pos: 1e-3,
            eta0: 1e300,
            epochs: 3,
            ..Default::default()
        };
        assert!(matches!(
            fit_projection(&x, &pairs, &cfg),
            Err(Error::DivergedLoss { .. })
        ));
    }

    #[test]
    fn accepted_losses_never_increase() {
        let x = random_unit_set(60, 8, 7);
        let positives = (0..20)
            .map(|k| pair(&format!("r{:03}", k), &format!("r{:03}", k + 20)))
            .collect();
        let negatives = (0..20)
            .map(|k| pair(&format!("r{:03}", k), &format!("r{:03}", k + 40)))
            .collect();
        let pairs = PairSet {
            positives,
            negatives,
        };
        let cfg = TrainConfig {
            dim: 3,
            eta0: 5.0,
            decay: 0.0,
            epochs: 20,
            batch_size: 8,
            ..Default::default()
        };
        let (model, log) = fit_projection_logged(&x, &pairs, &cfg).unwrap();
        let accepted: Vec<f64> = log.iter().filter(|e| e.accepted).map(|e| e.loss).collect();
        assert!(accepted.windows(2).all(|w| w[1] <= w[0]));
        assert!(log.iter().filter(|e| !e.accepted).count() <= MAX_HALVINGS as usize + 1);
        let (again, _) = fit_projection_logged(&x, &pairs, &cfg).unwrap();
        assert_eq!(model, again);
    }

    #[test]
    fn two_stage_rule() {
        let x = random_unit_set(90, 80, 8);
        let pairs = PairSet {
            positives: vec![pair("r000", "r001")],
            negatives: vec![pair("r002", "r003")],
        };
        let cfg = TrainConfig {
            dim: 64,
            epochs: 1,
            ..Default::default()
        };
        let model = fit_projection(&x, &pairs, &cfg).unwrap();
        let pre = model.pre_pca().expect("pre-stage present");
        assert_eq!(pre.output_dim(), 80);
        assert_eq!(model.source_dim(), 80);
        let out = apply_projection(&model, &x, true).unwrap();
        assert_eq!(out.dim(), 64);

        let small = TrainConfig { dim: 16, ..cfg };
        assert!(fit_projection(&x, &pairs, &small).unwrap().pre_pca().is_none());
    }

    #[test]
    fn apply_examples() {
        let x = random_unit_set(5, 3, 9);
        let eye = ProjectionModel::from_parts(
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            3,
            3,
            None,
            None,
        )
        .unwrap();
        assert_eq!(apply_projection(&eye, &x, false).unwrap(), x);
        let trunc =
            ProjectionModel::from_parts(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0], 3, 2, None, None)
                .unwrap();
        let out = apply_projection(&trunc, &x, false).unwrap();
        for i in 0..5 {
            assert_eq!(out.row(i), &x.row(i)[..2]);
        }
        let wrong = random_unit_set(2, 4, 1);
        assert!(matches!(
            apply_projection(&trunc, &wrong, false),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn apply_matches_triple_loop() {
        let x = random_unit_set(17, 7, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w: Vec<f64> = (0..28).map(|_| rng.random_range(-2.0..2.0)).collect();
        let model = ProjectionModel::from_parts(w.clone(), 7, 4, None, None).unwrap();
        let out = apply_projection(&model, &x, false).unwrap();
        for i in 0..17 {
            for k in 0..4 {
                let mut s = 0.0;
                for j in 0..7 {
                    s += w[k * 7 + j] * x.row(i)[j];
                }
                assert!((out.row(i)[k] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn toy_projection_finds_discriminative_axis() {
        // positives differ only along y, negatives only along x
        let mut points = Vec::new();
        for c in [0.1f64, 0.2, 0.3] {
            let s = (1.0 - c * c).sqrt();
            points.push((c, s));
            points.push((c, -s));
        }
        for c in [0.3f64, 0.4] {
            let s = (1.0 - c * c).sqrt();
            points.push((c, s));
            points.push((-c, s));
        }
        let x = unit_set(&points);
        let pairs = PairSet {
            positives: vec![pair("p0", "p1"), pair("p2", "p3"), pair("p4", "p5")],
            negatives: vec![pair("p6", "p7"), pair("p8", "p9")],
        };
        let cfg = TrainConfig {
            dim: 1,
            eta0: 0.5,
            decay: 0.0,
            epochs: 300,
            ..Default::default()
        };
        let init = fit_pca(&x, 1, cfg.seed).unwrap();
        assert!(init.components()[0].abs() > 1e-3, "initialization must not be axis-aligned");
        let model = fit_projection(&x, &pairs, &cfg).unwrap();
        let w = model.weights();
        let cos = w[0].abs() / (w[0] * w[0] + w[1] * w[1]).sqrt();
        assert!(cos > 0.9, "learned direction {w:?}");

        // brute force over 3600 directions, best scale per direction
        let deltas: Vec<(f64, f64, bool)> = pairs
            .positives
            .iter()
            .map(|p| (p, true))
            .chain(pairs.negatives.iter().map(|p| (p, false)))
            .map(|(p, pos)| {
                let a = x.row(x.ids().iter().position(|i| i == p.a()).unwrap());
                let b = x.row(x.ids().iter().position(|i| i == p.b()).unwrap());
                (a[0] - b[0], a[1] - b[1], pos)
            })
            .collect();
        let loss = |wx: f64, wy: f64| -> f64 {
            deltas
                .iter()
                .map(|&(dx, dy, pos)| {
                    let s = (wx * dx + wy * dy).powi(2);
                    if pos {
                        (s - cfg.tau_pos).max(0.0)
                    } else {
                        (cfg.tau_neg - s).max(0.0)
                    }
                })
                .sum()
        };
        let best_for = |ux: f64, uy: f64| {
            (0..=400)
                .map(|k| loss(ux * k as f64 * 0.02, uy * k as f64 * 0.02))
                .fold(f64::INFINITY, f64::min)
        };
        let per_dir: Vec<(f64, f64)> = (0..3600)
            .map(|k| {
                let t = (k as f64 / 10.0).to_radians();
                (t.cos(), best_for(t.cos(), t.sin()))
            })
            .collect();
        let global = per_dir.iter().map(|d| d.1).fold(f64::INFINITY, f64::min);
        let optimal: Vec<f64> = per_dir
            .iter()
            .filter(|d| d.1 <= global + 1e-9)
            .map(|d| d.0.abs())
            .collect();
        assert!(optimal.iter().all(|&c| c > 0.9), "oracle optimum is x-dominant");
        let min_cos = optimal.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(cos >= min_cos - 1e-3, "learned cos {cos} outside oracle optimum (>= {min_cos})");
        assert!(loss(w[0], w[1]) <= global + 1e-6, "learned loss {} vs oracle {global}", loss(w[0], w[1]));
    }
}
