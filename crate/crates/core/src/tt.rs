//! Tensor-train factorization by sequential truncated SVD.
//!
//! A d-way tensor with extents `n_1 … n_d` is represented by cores
//! `G_k ∈ R^{r_{k-1} × n_k × r_k}` with `r_0 = r_d = 1`. The first core
//! indexes the leading mode, which for convolution weights stored as
//! `[C_out, C_in, k, k]` is the output-channel mode.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::truncated_svd;
use crate::tensor::{mode1_contract, Tensor};

/// Ordered chain of 3-way cores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtCores {
    cores: Vec<Tensor>,
}

impl TtCores {
    /// Validate boundary ranks and rank chaining.
    pub fn new(cores: Vec<Tensor>) -> Result<Self> {
        if cores.is_empty() {
            return shape_err("TT chain needs at least one core");
        }
        for (k, c) in cores.iter().enumerate() {
            if c.order() != 3 {
                return shape_err(format!("core {} is not 3-way: {:?}", k + 1, c.shape()));
            }
        }
        if cores[0].shape()[0] != 1 {
            return shape_err(format!(
                "first core must have left rank 1, got {:?}",
                cores[0].shape()
            ));
        }
        let last = cores.last().expect("non-empty");
        if last.shape()[2] != 1 {
            return shape_err(format!(
                "last core must have right rank 1, got {:?}",
                last.shape()
            ));
        }
        for k in 1..cores.len() {
            let (l, r) = (cores[k - 1].shape()[2], cores[k].shape()[0]);
            if l != r {
                return shape_err(format!(
                    "rank mismatch between core {} (right {l}) and core {} (left {r})",
                    k,
                    k + 1
                ));
            }
        }
        Ok(Self { cores })
    }

    pub fn cores(&self) -> &[Tensor] {
        &self.cores
    }

    pub fn core(&self, k: usize) -> &Tensor {
        &self.cores[k]
    }

    pub fn len(&self) -> usize {
        self.cores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cores.is_empty()
    }

    /// Replace core `k` (0-based) with a tensor of identical shape.
    pub fn set_core(&mut self, k: usize, core: Tensor) -> Result<()> {
        if core.shape() != self.cores[k].shape() {
            return shape_err(format!(
                "core {} replacement has shape {:?}, expected {:?}",
                k + 1,
                core.shape(),
                self.cores[k].shape()
            ));
        }
        self.cores[k] = core;
        Ok(())
    }

    /// `(r_0, …, r_d)`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self.cores.iter().map(|c| c.shape()[0]).collect();
        r.push(1);
        r
    }

    pub fn mode_sizes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.shape()[1]).collect()
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.cores.iter().map(|c| c.shape().to_vec()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.cores.iter().map(Tensor::len).sum()
    }
}

/// TT-SVD of `w` with target rank `r_target`.
///
/// Step `k` unfolds the carried factor into `r_{k-1}·n_k` rows and keeps
/// `min(r_target, rows, cols)` singular triplets.
pub fn tt_svd(w: &Tensor, r_target: usize) -> Result<TtCores> {
    if w.order() < 2 {
        return shape_err(format!(
            "tt_svd needs at least a 2-way tensor, got {:?}",
            w.shape()
        ));
    }
    if r_target == 0 {
        return Err(Error::InvalidArgument(
            "tt_svd: target rank must be at least 1".into(),
        ));
    }
    if !w.is_finite() {
        return Err(Error::Numeric(
            "tt_svd: input has non-finite entries".into(),
        ));
    }
    let dims = w.shape().to_vec();
    let d = dims.len();
    let mut carry = w.clone();
    let mut r_prev = 1;
    let mut cores = Vec::with_capacity(d);
    for &n_k in &dims[..d - 1] {
        let rows = r_prev * n_k;
        let unfolded = carry.unfold_step(rows)?;
        let svd = truncated_svd(&unfolded, r_target)?;
        let rank = svd.rank();
        cores.push(svd.u.reshape(&[r_prev, n_k, rank])?);
        carry = svd.s_vt()?;
        r_prev = rank;
    }
    cores.push(carry.into_reshaped(&[r_prev, dims[d - 1], 1])?);
    TtCores::new(cores)
}

/// Contract every core left to right and reshape to `target_shape`.
pub fn tt_reconstruct(c: &TtCores, target_shape: &[usize]) -> Result<Tensor> {
    let total: usize = c.mode_sizes().iter().product();
    if total != target_shape.iter().product::<usize>() {
        return shape_err(format!(
            "TT cores hold {total} elements, target shape {target_shape:?} does not"
        ));
    }
    let mut acc = c.core(0).clone();
    for core in &c.cores()[1..] {
        let out = mode1_contract(&acc, core)?;
        let s = out.shape().to_vec();
        acc = out.into_reshaped(&[s[0], s[1] * s[2], s[3]])?;
    }
    acc.into_reshaped(target_shape)
}

/// Per-core and total element counts that [`tt_svd`] would produce.
pub fn tt_param_count(shape: &[usize], r_target: usize) -> (Vec<usize>, usize) {
    let ranks = tt_ranks(shape, r_target);
    let per_core: Vec<usize> = shape
        .iter()
        .enumerate()
        .map(|(k, &n)| ranks[k] * n * ranks[k + 1])
        .collect();
    let total = per_core.iter().sum();
    (per_core, total)
}

/// `(r_0, …, r_d)` under the TT-SVD truncation rule.
pub fn tt_ranks(shape: &[usize], r_target: usize) -> Vec<usize> {
    let d = shape.len();
    let total: usize = shape.iter().product();
    let mut ranks = vec![1; d + 1];
    let mut consumed = 1;
    for k in 0..d.saturating_sub(1) {
        let rows = ranks[k] * shape[k];
        consumed *= shape[k];
        let cols = total / consumed;
        ranks[k + 1] = r_target.min(rows).min(cols);
    }
    ranks
}

/// Gradients of `<grad_full, tt_reconstruct(c)>` with respect to the cores
/// listed in `which` (0-based). Other entries are `None`.
///
/// Core `k` enters the reconstruction as `L[a_left, a] · G_k[a, i, b] · R[b, a_right]`
/// where `L`/`R` are the contracted chains on either side, so its gradient is
/// `Σ L[left, a] · D[left, i, right] · R[b, right]`.
pub fn tt_core_grads(
    c: &TtCores,
    grad_full: &Tensor,
    which: &[usize],
) -> Result<Vec<Option<Tensor>>> {
    let sizes = c.mode_sizes();
    let total: usize = sizes.iter().product();
    if grad_full.len() != total {
        return shape_err(format!(
            "gradient has {} elements, TT chain reconstructs {total}",
            grad_full.len()
        ));
    }
    let d = c.len();
    let mut out = vec![None; d];
    for &k in which {
        if k >= d {
            return Err(Error::InvalidArgument(format!(
                "core index {} out of range for {d} cores",
                k + 1
            )));
        }
        let shape = c.core(k).shape();
        let (ra, n, rb) = (shape[0], shape[1], shape[2]);
        let left = left_chain(c, k)?; // [p_left, ra]
        let right = right_chain(c, k)?; // [rb, p_right]
        let p_left = left.shape()[0];
        let p_right = right.shape()[1];
        let dg = grad_full.data();
        let (ld, rd) = (left.data(), right.data());
        // T[left, i, b] = Σ_right D[left, i, right] · R[b, right]
        let mut t = vec![0.0; p_left * n * rb];
        for l in 0..p_left {
            for i in 0..n {
                let drow = &dg[(l * n + i) * p_right..(l * n + i + 1) * p_right];
                for b in 0..rb {
                    let rrow = &rd[b * p_right..(b + 1) * p_right];
                    t[(l * n + i) * rb + b] = drow.iter().zip(rrow).map(|(x, y)| x * y).sum();
                }
            }
        }
        let mut g = vec![0.0; ra * n * rb];
        for l in 0..p_left {
            for a in 0..ra {
                let lv = ld[l * ra + a];
                if lv == 0.0 {
                    continue;
                }
                for ib in 0..n * rb {
                    g[a * n * rb + ib] += lv * t[l * n * rb + ib];
                }
            }
        }
        out[k] = Some(Tensor::new(vec![ra, n, rb], g)?);
    }
    Ok(out)
}

/// Contraction of cores `0..k` as a `[Π n, r_k]` matrix (`[1, 1]` when empty).
fn left_chain(c: &TtCores, k: usize) -> Result<Tensor> {
    if k == 0 {
        return Tensor::new(vec![1, 1], vec![1.0]);
    }
    let mut acc = c.core(0).clone();
    for core in &c.cores()[1..k] {
        let out = mode1_contract(&acc, core)?;
        let s = out.shape().to_vec();
        acc = out.into_reshaped(&[s[0], s[1] * s[2], s[3]])?;
    }
    let s = acc.shape().to_vec();
    acc.into_reshaped(&[s[1], s[2]])
}

/// Contraction of cores `k+1..d` as a `[r_k, Π n]` matrix (`[1, 1]` when empty).
fn right_chain(c: &TtCores, k: usize) -> Result<Tensor> {
    let d = c.len();
    if k + 1 == d {
        return Tensor::new(vec![1, 1], vec![1.0]);
    }
    let mut acc = c.core(k + 1).clone();
    for core in &c.cores()[k + 2..] {
        let out = mode1_contract(&acc, core)?;
        let s = out.shape().to_vec();
        acc = out.into_reshaped(&[s[0], s[1] * s[2], s[3]])?;
    }
    let s = acc.shape().to_vec();
    acc.into_reshaped(&[s[0], s[1]])
}
