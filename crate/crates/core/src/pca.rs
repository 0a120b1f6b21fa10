//! PCA compression of descriptor sets.
//!
//! The fit eigendecomposes the sample covariance `(1/(n-1)) Σ (x-μ)(x-μ)ᵀ`
//! when `n > d`, or the Gram matrix of the centered rows otherwise, and keeps
//! the top `D` directions. Output is byte-deterministic: eigenpairs are
//! sorted by eigenvalue and every component is signed so that its entry of
//! largest magnitude is positive.

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::descriptor::DescriptorSet;
use crate::error::{Error, Result};
use crate::math;

/// Number of rows sampled for fitting when a set is larger than this.
pub const DEFAULT_SAMPLE_CAP: usize = 100_000;

/// Eigenvalue floor used when whitening.
pub const WHITEN_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    eigvals: Vec<f64>,
    components: Vec<f64>,
    d_in: usize,
    d_out: usize,
}

impl PcaModel {
    /// Assembles a model from its parts, checking shapes, finiteness and
    /// eigenvalue ordering. Orthonormality of `components` is checked to
    /// `ortho_tol` in Frobenius norm.
    pub fn from_parts(
        mean: Vec<f64>,
        eigvals: Vec<f64>,
        components: Vec<f64>,
        ortho_tol: f64,
    ) -> Result<Self> {
        let d_in = mean.len();
        let d_out = eigvals.len();
        if d_in == 0 || d_out == 0 || d_out > d_in {
            return Err(Error::Validation(format!(
                "PCA model needs 1 <= D <= d, got d={d_in}, D={d_out}"
            )));
        }
        if components.len() != d_in * d_out {
            return Err(Error::DimensionMismatch {
                expected: d_in * d_out,
                actual: components.len(),
            });
        }
        if mean
            .iter()
            .chain(&eigvals)
            .chain(&components)
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite { id: None });
        }
        if eigvals.iter().any(|&v| v < 0.0) {
            return Err(Error::Validation("negative eigenvalue".into()));
        }
        if eigvals.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Validation(
                "eigenvalues must be stored in non-increasing order".into(),
            ));
        }
        let model = Self {
            mean,
            eigvals,
            components,
            d_in,
            d_out,
        };
        let err = model.orthonormality_error();
        if !(err <= ortho_tol) {
            return Err(Error::Validation(format!(
                "components are not orthonormal (Frobenius error {err:.3e})"
            )));
        }
        Ok(model)
    }

    pub fn input_dim(&self) -> usize {
        self.d_in
    }

    pub fn output_dim(&self) -> usize {
        self.d_out
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn eigvals(&self) -> &[f64] {
        &self.eigvals
    }

    /// Row-major `D x d` matrix whose rows are the principal directions.
    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn component(&self, k: usize) -> &[f64] {
        &self.components[k * self.d_in..(k + 1) * self.d_in]
    }

    /// `‖C·Cᵀ − I‖_F` for the component matrix `C`.
    pub fn orthonormality_error(&self) -> f64 {
        let c = DMatrix::from_row_slice(self.d_out, self.d_in, &self.components);
        let gram = &c * c.transpose();
        (gram - DMatrix::<f64>::identity(self.d_out, self.d_out)).norm()
    }

    /// The `d x d` orthogonal projector `Cᵀ·C`, row-major.
    pub fn projector(&self) -> Vec<f64> {
        let c = DMatrix::from_row_slice(self.d_out, self.d_in, &self.components);
        let p = c.transpose() * c;
        p.transpose().as_slice().to_vec()
    }

    /// Projects one centered row into `out` (length `D`).
    pub fn project_into(&self, x: &[f64], centered: &mut [f64], out: &mut [f64]) {
        for ((c, xi), mi) in centered.iter_mut().zip(x).zip(&self.mean) {
            *c = xi - mi;
        }
        for (k, o) in out.iter_mut().enumerate() {
            *o = math::dot(self.component(k), centered);
        }
    }

    /// Mean squared residual after reconstructing from `D` components,
    /// normalized by `n - 1` like the covariance. On the training set this
    /// equals the sum of the discarded eigenvalues.
    pub fn reconstruction_error(&self, set: &DescriptorSet) -> Result<f64> {
        check_dim(self.d_in, set)?;
        if set.len() < 2 {
            return Err(Error::TooFewSamples {
                n: set.len(),
                required: 2,
            });
        }
        let mut centered = vec![0.0; self.d_in];
        let mut coords = vec![0.0; self.d_out];
        let mut total = 0.0;
        for row in set.rows() {
            self.project_into(row, &mut centered, &mut coords);
            for (k, &y) in coords.iter().enumerate() {
                for (c, w) in centered.iter_mut().zip(self.component(k)) {
                    *c -= y * w;
                }
            }
            total += math::dot(&centered, &centered);
        }
        Ok(total / (set.len() - 1) as f64)
    }
}

#[derive(Clone, Debug)]
pub struct PcaOptions {
    pub seed: u64,
    /// Fit on at most this many rows, drawn uniformly without replacement.
    pub sample_cap: usize,
    /// Fail with `RankDeficient` instead of padding with null-space directions.
    pub strict_rank: bool,
}

impl Default for PcaOptions {
    fn default() -> Self {
        Self {
            seed: 42,
            sample_cap: DEFAULT_SAMPLE_CAP,
            strict_rank: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ApplyOptions {
    pub renormalize: bool,
    pub whiten: bool,
}

impl Default for ApplyOptions {
    fn default() -> Self {
        Self {
            renormalize: true,
            whiten: false,
        }
    }
}

pub fn fit_pca(set: &DescriptorSet, dim: usize, seed: u64) -> Result<PcaModel> {
    fit_pca_with(
        set,
        dim,
        &PcaOptions {
            seed,
            ..PcaOptions::default()
        },
    )
}

/// Rows drawn for fitting: all of them, or `cap` sorted indices sampled
/// without replacement from a generator seeded with `seed`.
pub fn training_rows(n: usize, cap: usize, seed: u64) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, n, cap).into_vec();
    picked.sort_unstable();
    picked
}

pub fn fit_pca_with(set: &DescriptorSet, dim: usize, opts: &PcaOptions) -> Result<PcaModel> {
    if dim == 0 {
        return Err(Error::InvalidArgument("PCA output dimension must be >= 1".into()));
    }
    if opts.sample_cap < 2 {
        return Err(Error::InvalidArgument("sample cap must be >= 2".into()));
    }
    let d = set.dim();
    let rows = training_rows(set.len(), opts.sample_cap, opts.seed);
    let n = rows.len();
    if n < 2 {
        return Err(Error::TooFewSamples { n, required: 2 });
    }
    if dim > d.min(n - 1) {
        return Err(Error::InvalidArgument(format!(
            "PCA output dimension {dim} exceeds min(d={d}, n-1={})",
            n - 1
        )));
    }

    let mut mean = vec![0.0; d];
    for &i in &rows {
        for (m, x) in mean.iter_mut().zip(set.row(i)) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let mut centered = DMatrix::<f64>::zeros(n, d);
    for (r, &i) in rows.iter().enumerate() {
        for (c, (x, m)) in set.row(i).iter().zip(&mean).enumerate() {
            centered[(r, c)] = x - m;
        }
    }
    let scale = 1.0 / (n - 1) as f64;

    let (mut eigvals, mut components) = if n > d {
        let cov = centered.tr_mul(&centered) * scale;
        covariance_route(cov, dim)
    } else {
        let gram = &centered * centered.transpose() * scale;
        gram_route(&centered, gram, dim)
    };

    let top = eigvals.first().copied().unwrap_or(0.0).max(0.0);
    let tol = top * (n.max(d) as f64) * f64::EPSILON;
    let rank = eigvals.iter().filter(|&&v| v > tol).count();
    if rank < dim {
        if opts.strict_rank {
            return Err(Error::RankDeficient {
                requested: dim,
                rank,
            });
        }
        warn!("PCA: requested {dim} components but data rank is {rank}; padding with null-space directions");
        if n <= d {
            complete_basis(&mut components, rank, dim, d);
        }
    }
    for v in eigvals.iter_mut() {
        if *v <= tol {
            *v = 0.0;
        }
    }
    for k in 0..dim {
        fix_sign(&mut components[k * d..(k + 1) * d]);
    }

    PcaModel::from_parts(mean, eigvals, components, 1e-8)
}

/// Eigenpairs sorted by decreasing eigenvalue, ties by original position.
fn sorted_eigen(eig: &SymmetricEigen<f64, nalgebra::Dyn>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    order
}

fn covariance_route(cov: DMatrix<f64>, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let d = cov.nrows();
    let eig = SymmetricEigen::new(cov);
    let order = sorted_eigen(&eig);
    let mut eigvals = Vec::with_capacity(dim);
    let mut components = Vec::with_capacity(dim * d);
    for &k in order.iter().take(dim) {
        eigvals.push(eig.eigenvalues[k]);
        components.extend(eig.eigenvectors.column(k).iter());
    }
    (eigvals, components)
}

/// Eigenvectors of the covariance recovered from the `n x n` Gram matrix:
/// `v = Xcᵀ u / ‖Xcᵀ u‖`. Directions with (numerically) zero eigenvalue
/// cannot be recovered this way and are left as zeros for `complete_basis`.
fn gram_route(centered: &DMatrix<f64>, gram: DMatrix<f64>, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let d = centered.ncols();
    let n = centered.nrows();
    let eig = SymmetricEigen::new(gram);
    let order = sorted_eigen(&eig);
    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = top * (n.max(d) as f64) * f64::EPSILON;
    let mut eigvals = Vec::with_capacity(dim);
    let mut components = vec![0.0; dim * d];
    for (slot, &k) in order.iter().take(dim).enumerate() {
        let lambda = eig.eigenvalues[k];
        eigvals.push(lambda);
        if lambda <= tol {
            continue;
        }
        let v = centered.tr_mul(&eig.eigenvectors.column(k).into_owned());
        let norm = v.norm();
        for (c, x) in components[slot * d..(slot + 1) * d].iter_mut().zip(v.iter()) {
            *c = x / norm;
        }
    }
    (eigvals, components)
}

/// Fills rows `from..dim` with unit vectors orthogonal to all earlier rows,
/// via Gram–Schmidt over the standard basis in index order.
fn complete_basis(components: &mut [f64], from: usize, dim: usize, d: usize) {
    let mut slot = from;
    let mut axis = 0;
    while slot < dim && axis < d {
        let mut v = vec![0.0; d];
        v[axis] = 1.0;
        axis += 1;
        // two passes for numerical orthogonality
        for _ in 0..2 {
            for k in 0..slot {
                let c = &components[k * d..(k + 1) * d];
                let p = math::dot(c, &v);
                for (vi, ci) in v.iter_mut().zip(c) {
                    *vi -= p * ci;
                }
            }
        }
        let norm = math::norm(&v);
        if norm < 1e-6 {
            continue;
        }
        for (dst, x) in components[slot * d..(slot + 1) * d].iter_mut().zip(&v) {
            *dst = x / norm;
        }
        slot += 1;
    }
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

fn check_dim(expected: usize, set: &DescriptorSet) -> Result<()> {
    if set.dim() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: set.dim(),
        });
    }
    Ok(())
}

/// Projects every row onto the model's components. With `whiten`, each
/// coordinate is divided by `sqrt(max(eigval, WHITEN_FLOOR))`; with
/// `renormalize`, output rows are scaled to unit length.
pub fn apply_pca(model: &PcaModel, set: &DescriptorSet, opts: ApplyOptions) -> Result<DescriptorSet> {
    check_dim(model.d_in, set)?;
    let d_out = model.d_out;
    let mut out = vec![0.0; set.len() * d_out];
    out.par_chunks_mut(d_out)
        .zip(set.data().par_chunks(set.dim()))
        .for_each_init(
            || vec![0.0; model.d_in],
            |buf, (dst, row)| {
                model.project_into(row, buf, dst);
                if opts.whiten {
                    for (y, l) in dst.iter_mut().zip(&model.eigvals) {
                        *y /= l.max(WHITEN_FLOOR).sqrt();
                    }
                }
            },
        );
    let mut projected = set.with_data(out, d_out)?;
    if opts.renormalize {
        projected.normalize_rows()?;
    }
    Ok(projected)
}
