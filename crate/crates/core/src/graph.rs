//! Symmetric k-NN token graphs with Gaussian edge weights.
//!
//! Each node is a sampled token; an edge (i, j) carries weight
//! `exp(−‖Tᵢ−Tⱼ‖²/(2σ))` when either endpoint selects the other among its k
//! nearest neighbours, and 0 otherwise. The neighbour selection is discrete
//! and treated as constant under differentiation; the weights on selected
//! edges stay differentiable with respect to the tokens.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::token::TokenBatch;

/// How the Gaussian bandwidth is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaPolicy {
    /// Median of the masked squared distances; falls back to 1.0 when the
    /// median is zero (all selected pairs coincide).
    Median,
    Fixed(f64),
}

/// Turn the directed k-NN picks into an undirected edge set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SymmetrizeMode {
    /// Edge present if either endpoint selected the other.
    #[default]
    Union,
    /// Edge present only if both endpoints selected each other.
    Mutual,
}

/// k-NN adjacency over one token batch.
#[derive(Debug, Clone)]
pub struct TokenGraph {
    /// S×S weights; positive exactly on masked pairs.
    pub adjacency: Tensor,
    /// Symmetric neighbour mask, row-major S×S, false on the diagonal.
    pub neighbor_mask: Vec<bool>,
    pub k: usize,
    pub sigma: f64,
    pub tokens: TokenBatch,
}

/// Squared Euclidean distances between token rows (symmetric, zero diagonal).
pub fn pairwise_sq_distances(tokens: &Tensor) -> Result<Tensor> {
    tokens.pairwise_sq_dist()
}

/// Mark each node's k nearest neighbours (self excluded, ties to the lower
/// index) and symmetrize.
pub fn knn_select(dist2: &Tensor, k: usize, mode: SymmetrizeMode) -> Result<Vec<bool>> {
    let shape = dist2.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::shape(format!("knn_select expects S×S distances, got {shape:?}")));
    }
    let s = shape[0];
    if k == 0 || k >= s {
        return Err(Error::config(format!("k must satisfy 1 <= k < S (k={k}, S={s})")));
    }
    let d = dist2.data();
    let mut directed = vec![false; s * s];
    let mut order: Vec<usize> = Vec::with_capacity(s - 1);
    for i in 0..s {
        order.clear();
        order.extend((0..s).filter(|&j| j != i));
        order.sort_by(|&a, &b| {
            d[i * s + a]
                .partial_cmp(&d[i * s + b])
                .expect("finite distances")
                .then(a.cmp(&b))
        });
        for &j in order.iter().take(k) {
            directed[i * s + j] = true;
        }
    }
    let mut mask = vec![false; s * s];
    for i in 0..s {
        for j in 0..s {
            mask[i * s + j] = match mode {
                SymmetrizeMode::Union => directed[i * s + j] || directed[j * s + i],
                SymmetrizeMode::Mutual => directed[i * s + j] && directed[j * s + i],
            };
        }
    }
    Ok(mask)
}

/// Gaussian weights on masked pairs: `exp(−d²/(2σ))`, zero elsewhere.
pub fn gaussian_adjacency(dist2: &Tensor, mask: &[bool], sigma: f64) -> Result<Tensor> {
    if sigma <= 0.0 {
        return Err(Error::config(format!("sigma must be positive, got {sigma}")));
    }
    if mask.len() != dist2.numel() {
        return Err(Error::shape(format!(
            "mask has {} entries for {} distances",
            mask.len(),
            dist2.numel()
        )));
    }
    let mask_t = Tensor::from_vec(
        dist2.shape().to_vec(),
        mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
    )?;
    let weights = dist2.scale(-1.0).div_scalar(2.0 * sigma).exp();
    weights.mul(&mask_t)
}

/// Median of the masked squared distances (lower middle for even counts).
pub fn masked_median(dist2: &Tensor, mask: &[bool]) -> Option<f64> {
    let mut vals: Vec<f64> = dist2
        .data()
        .iter()
        .zip(mask)
        .filter_map(|(&d, &m)| m.then_some(d))
        .collect();
    if vals.is_empty() {
        return None;
    }
    vals.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    Some(vals[(vals.len() - 1) / 2])
}

/// Compose distances, neighbour selection, bandwidth choice, and weighting.
pub fn build_token_graph(
    batch: &TokenBatch,
    k: usize,
    sigma_policy: SigmaPolicy,
    mode: SymmetrizeMode,
) -> Result<TokenGraph> {
    let dist2 = pairwise_sq_distances(&batch.tokens)?;
    let mask = knn_select(&dist2, k, mode)?;
    let sigma = match sigma_policy {
        SigmaPolicy::Fixed(v) => {
            if v <= 0.0 {
                return Err(Error::config(format!("fixed sigma must be positive, got {v}")));
            }
            v
        }
        SigmaPolicy::Median => match masked_median(&dist2, &mask) {
            Some(med) if med > 0.0 => med,
            _ => 1.0,
        },
    };
    let adjacency = gaussian_adjacency(&dist2, &mask, sigma)?;
    Ok(TokenGraph {
        adjacency,
        neighbor_mask: mask,
        k,
        sigma,
        tokens: batch.clone(),
    })
}

impl TokenGraph {
    pub fn node_count(&self) -> usize {
        self.adjacency.shape()[0]
    }

    /// Undirected edge list as `i,j,weight` CSV rows (i < j), full f64 precision.
    pub fn edge_csv(&self) -> String {
        let s = self.node_count();
        let w = self.adjacency.data();
        let mut out = String::from("i,j,weight\n");
        for i in 0..s {
            for j in (i + 1)..s {
                if self.neighbor_mask[i * s + j] {
                    out.push_str(&format!("{i},{j},{:.17e}\n", w[i * s + j]));
                }
            }
        }
        out
    }

    pub fn write_edge_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.edge_csv().as_bytes())?;
        Ok(())
    }
}
