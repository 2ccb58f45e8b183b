//! Token patching and the shared random sampling plan.
//!
//! Images (or feature maps) are cut into non-overlapping P×P patches in
//! raster-scan order; each patch is flattened row-major with the channel
//! index fastest, giving `M = HW/P²` tokens of dimension `D = P²C`. One
//! [`SamplingPlan`] is drawn per batch and applied identically to teacher and
//! student so selected tokens correspond pair-for-pair.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::Tensor;

/// Which network a token batch came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenSource {
    Teacher,
    Student,
}

/// Sampled tokens with their instance of origin.
#[derive(Debug, Clone)]
pub struct TokenBatch {
    /// S×D token matrix; rows follow the plan's instance order.
    pub tokens: Tensor,
    /// For each row, the index of the source instance in the batch.
    pub instance_index: Vec<usize>,
    pub source: TokenSource,
}

impl TokenBatch {
    pub fn len(&self) -> usize {
        self.instance_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instance_index.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.tokens.shape()[1]
    }
}

/// Per-instance patch selections, drawn once and shared by both networks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingPlan {
    /// Sorted unique patch indices per instance.
    pub selected: Vec<Vec<usize>>,
    pub batch_size: usize,
    pub patches_per_instance: usize,
    pub total: usize,
    pub seed: u64,
}

fn patch_gather_indices(c: usize, h: usize, w: usize, p: usize) -> Vec<usize> {
    let (gh, gw) = (h / p, w / p);
    let mut idx = Vec::with_capacity(c * h * w);
    for gy in 0..gh {
        for gx in 0..gw {
            for py in 0..p {
                for px in 0..p {
                    for ch in 0..c {
                        idx.push(ch * h * w + (gy * p + py) * w + (gx * p + px));
                    }
                }
            }
        }
    }
    idx
}

fn check_patch_size(h: usize, w: usize, p: usize) -> Result<()> {
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::config(format!(
            "patch size {p} does not divide spatial extents {h}x{w}"
        )));
    }
    Ok(())
}

/// Cut one C×H×W image into M×D flattened patches.
pub fn patch_image(image: &Tensor, p: usize) -> Result<Tensor> {
    let [c, h, w] = image.shape() else {
        return Err(Error::shape(format!(
            "patch_image expects C×H×W, got {:?}",
            image.shape()
        )));
    };
    let (c, h, w) = (*c, *h, *w);
    check_patch_size(h, w, p)?;
    let m = (h * w) / (p * p);
    let d = p * p * c;
    image.gather_elems(&patch_gather_indices(c, h, w, p), vec![m, d])
}

/// Batched patching: B×C×H×W → (B·M)×D with instances contiguous.
pub fn patch_image_batch(images: &Tensor, p: usize) -> Result<Tensor> {
    let [b, c, h, w] = images.shape() else {
        return Err(Error::shape(format!(
            "patch_image_batch expects B×C×H×W, got {:?}",
            images.shape()
        )));
    };
    let (b, c, h, w) = (*b, *c, *h, *w);
    check_patch_size(h, w, p)?;
    let m = (h * w) / (p * p);
    let d = p * p * c;
    let per_image = patch_gather_indices(c, h, w, p);
    let mut idx = Vec::with_capacity(b * per_image.len());
    for bi in 0..b {
        let offset = bi * c * h * w;
        idx.extend(per_image.iter().map(|&i| i + offset));
    }
    images.gather_elems(&idx, vec![b * m, d])
}

/// Inverse of [`patch_image`]: reassemble M×D patches into C×H×W.
pub fn reassemble_image(patches: &Tensor, c: usize, h: usize, w: usize, p: usize) -> Result<Tensor> {
    check_patch_size(h, w, p)?;
    let m = (h * w) / (p * p);
    let d = p * p * c;
    if patches.shape() != [m, d] {
        return Err(Error::shape(format!(
            "reassemble_image: expected {m}x{d} patches, got {:?}",
            patches.shape()
        )));
    }
    // Invert the gather map: position k of the patch matrix came from idx[k].
    let idx = patch_gather_indices(c, h, w, p);
    let mut inverse = vec![0usize; idx.len()];
    for (k, &src) in idx.iter().enumerate() {
        inverse[src] = k;
    }
    patches.gather_elems(&inverse, vec![c, h, w])
}

/// Patch sizes usable on an Hℓ×Wℓ map, with the token count each yields.
pub fn feasible_patchings(h: usize, w: usize) -> Vec<(usize, usize)> {
    (1..=h.min(w))
        .filter(|p| h % p == 0 && w % p == 0)
        .map(|p| (p, (h * w) / (p * p)))
        .collect()
}

/// Patch size that makes an Hℓ×Wℓ map yield exactly `target_m` tokens.
pub fn patch_size_for(h: usize, w: usize, target_m: usize) -> Result<usize> {
    for (p, m) in feasible_patchings(h, w) {
        if m == target_m {
            return Ok(p);
        }
    }
    let feasible: Vec<usize> = feasible_patchings(h, w).iter().map(|&(_, m)| m).collect();
    Err(Error::config(format!(
        "no patch size turns a {h}x{w} map into {target_m} tokens; feasible token counts: {feasible:?}"
    )))
}

/// Cut one Cℓ×Hℓ×Wℓ feature map into exactly `target_m` tokens.
pub fn patch_feature_map(map: &Tensor, target_m: usize) -> Result<Tensor> {
    let [_, h, w] = map.shape() else {
        return Err(Error::shape(format!(
            "patch_feature_map expects C×H×W, got {:?}",
            map.shape()
        )));
    };
    let p = patch_size_for(*h, *w, target_m)?;
    patch_image(map, p)
}

/// Batched feature-map patching: B×Cℓ×Hℓ×Wℓ → (B·target_m)×D.
pub fn patch_feature_map_batch(maps: &Tensor, target_m: usize) -> Result<Tensor> {
    let [_, _, h, w] = maps.shape() else {
        return Err(Error::shape(format!(
            "patch_feature_map_batch expects B×C×H×W, got {:?}",
            maps.shape()
        )));
    };
    let p = patch_size_for(*h, *w, target_m)?;
    patch_image_batch(maps, p)
}

/// Draw the shared sampling plan: `S` tokens spread evenly over `B`
/// instances (the first `S mod B` instances take one extra), indices drawn
/// without replacement within each instance.
pub fn make_sampling_plan(b: usize, m: usize, s: usize, seed: u64) -> Result<SamplingPlan> {
    if b == 0 || m == 0 {
        return Err(Error::config(format!("sampling plan needs B>0, M>0 (got B={b}, M={m})")));
    }
    if s == 0 {
        return Err(Error::config("sampling plan needs a positive token budget".to_string()));
    }
    if s > b * m {
        return Err(Error::config(format!(
            "token budget S={s} exceeds available B*M={}",
            b * m
        )));
    }
    let base = s / b;
    let rem = s % b;
    let mut rng = stream(seed, &["sampling-plan"]);
    let mut selected = Vec::with_capacity(b);
    for bi in 0..b {
        let count = base + usize::from(bi < rem);
        // Partial Fisher-Yates, then sort for a canonical order.
        let mut pool: Vec<usize> = (0..m).collect();
        for i in 0..count {
            let j = rng.random_range(i..m);
            pool.swap(i, j);
        }
        let mut picks: Vec<usize> = pool[..count].to_vec();
        picks.sort_unstable();
        selected.push(picks);
    }
    Ok(SamplingPlan {
        selected,
        batch_size: b,
        patches_per_instance: m,
        total: s,
        seed,
    })
}

impl SamplingPlan {
    pub fn counts(&self) -> Vec<usize> {
        self.selected.iter().map(Vec::len).collect()
    }

    /// Flat row indices into a (B·M)×D token matrix, instance-major.
    pub fn row_indices(&self) -> Vec<usize> {
        let m = self.patches_per_instance;
        self.selected
            .iter()
            .enumerate()
            .flat_map(|(bi, picks)| picks.iter().map(move |&pi| bi * m + pi))
            .collect()
    }
}

/// Select the planned tokens out of a B×M×D tensor.
pub fn apply_plan(all_tokens: &Tensor, plan: &SamplingPlan, source: TokenSource) -> Result<TokenBatch> {
    let [b, m, d] = all_tokens.shape() else {
        return Err(Error::usage(format!(
            "apply_plan expects B×M×D tokens, got {:?}",
            all_tokens.shape()
        )));
    };
    if *b != plan.batch_size || *m != plan.patches_per_instance {
        return Err(Error::usage(format!(
            "plan is for B={} M={} but tokens have B={b} M={m}",
            plan.batch_size, plan.patches_per_instance
        )));
    }
    let d = *d;
    let rows = all_tokens.reshape(vec![b * m, d])?;
    let tokens = rows.gather_rows(&plan.row_indices())?;
    let mut instance_index = Vec::with_capacity(plan.total);
    for (bi, picks) in plan.selected.iter().enumerate() {
        instance_index.extend(std::iter::repeat(bi).take(picks.len()));
    }
    Ok(TokenBatch {
        tokens,
        instance_index,
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_counts_follow_the_arithmetic() {
        let img = Tensor::zeros(vec![3, 32, 32]);
        let patches = patch_image(&img, 4).unwrap();
        assert_eq!(patches.shape(), &[64, 48]);
    }

    #[test]
    fn single_patch_is_the_flattened_image() {
        let data: Vec<f64> = (0..25).map(|v| v as f64).collect();
        let img = Tensor::from_vec(vec![1, 5, 5], data.clone()).unwrap();
        let patches = patch_image(&img, 5).unwrap();
        assert_eq!(patches.shape(), &[1, 25]);
        assert_eq!(patches.data(), &data[..]);
    }

    #[test]
    fn patches_reassemble_to_the_input_bit_exactly() {
        let data: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let img = Tensor::from_vec(vec![1, 4, 4], data.clone()).unwrap();
        let patches = patch_image(&img, 2).unwrap();
        assert_eq!(patches.shape(), &[4, 4]);
        // raster-scan: top-left patch first
        assert_eq!(&patches.data()[0..4], &[0.0, 1.0, 4.0, 5.0]);
        let back = reassemble_image(&patches, 1, 4, 4, 2).unwrap();
        assert_eq!(back.data(), &data[..]);

        // multi-channel roundtrip
        let data: Vec<f64> = (0..2 * 6 * 4).map(|v| v as f64 * 0.5).collect();
        let img = Tensor::from_vec(vec![2, 6, 4], data.clone()).unwrap();
        let back = reassemble_image(&patch_image(&img, 2).unwrap(), 2, 6, 4, 2).unwrap();
        assert_eq!(back.data(), &data[..]);
    }

    #[test]
    fn indivisible_patch_size_is_rejected() {
        let img = Tensor::zeros(vec![1, 6, 6]);
        assert!(patch_image(&img, 4).is_err());
    }

    #[test]
    fn feature_map_patch_sizes_follow_target_m() {
        assert_eq!(patch_size_for(8, 8, 16).unwrap(), 2);
        assert_eq!(patch_size_for(4, 4, 16).unwrap(), 1);
        assert_eq!(patch_size_for(4, 4, 1).unwrap(), 4);
        let err = patch_size_for(4, 4, 3).unwrap_err().to_string();
        assert!(err.contains("feasible"), "{err}");
    }

    #[test]
    fn plan_counts_split_evenly_with_remainder_first() {
        let plan = make_sampling_plan(4, 16, 8, 1).unwrap();
        assert_eq!(plan.counts(), vec![2, 2, 2, 2]);
        let plan = make_sampling_plan(3, 16, 7, 1).unwrap();
        assert_eq!(plan.counts(), vec![3, 2, 2]);
        assert!(make_sampling_plan(2, 4, 9, 1).is_err());
    }

    #[test]
    fn plans_repeat_under_a_seed_and_vary_across_seeds() {
        let a = make_sampling_plan(4, 16, 9, 42).unwrap();
        let b = make_sampling_plan(4, 16, 9, 42).unwrap();
        assert_eq!(a, b);

        let mut distinct = 0;
        for seed in 0..100u64 {
            let x = make_sampling_plan(4, 16, 9, seed).unwrap();
            let y = make_sampling_plan(4, 16, 9, seed + 1000).unwrap();
            if x != y {
                distinct += 1;
            }
        }
        assert!(distinct > 90, "only {distinct}/100 seed pairs differed");
    }

    #[test]
    fn indices_are_unique_sorted_and_in_range() {
        for seed in 0..50u64 {
            let plan = make_sampling_plan(5, 7, 23, seed).unwrap();
            for picks in &plan.selected {
                let mut sorted = picks.clone();
                sorted.sort_unstable();
                sorted.dedup();
                assert_eq!(&sorted, picks);
                assert!(picks.iter().all(|&p| p < 7));
            }
        }
    }

    /// Encode (instance, patch) into token values, apply one plan to two
    /// tensors, and confirm both pick identical pairs.
    #[test]
    fn one_plan_selects_corresponding_tokens_from_both_networks() {
        let (b, m, d) = (3, 4, 2);
        let tagged = |scale: f64| {
            let mut v = Vec::new();
            for bi in 0..b {
                for mi in 0..m {
                    v.push(bi as f64);
                    v.push(mi as f64 * scale);
                }
            }
            Tensor::from_vec(vec![b, m, d], v).unwrap()
        };
        let plan = make_sampling_plan(b, m, 7, 9).unwrap();
        let teacher = apply_plan(&tagged(1.0), &plan, TokenSource::Teacher).unwrap();
        let student = apply_plan(&tagged(1.0), &plan, TokenSource::Student).unwrap();
        assert_eq!(teacher.instance_index, student.instance_index);
        assert_eq!(teacher.tokens.data(), student.tokens.data());
        assert_eq!(teacher.len(), 7);
    }

    #[test]
    fn full_budget_plan_reshapes_the_input() {
        let (b, m, d) = (2, 3, 2);
        let data: Vec<f64> = (0..b * m * d).map(|v| v as f64).collect();
        let t = Tensor::from_vec(vec![b, m, d], data.clone()).unwrap();
        let plan = make_sampling_plan(b, m, b * m, 3).unwrap();
        let batch = apply_plan(&t, &plan, TokenSource::Teacher).unwrap();
        assert_eq!(batch.tokens.data(), &data[..]);
        assert_eq!(batch.instance_index, vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn one_token_per_instance_tags_instances() {
        let t = Tensor::zeros(vec![2, 3, 2]);
        let plan = make_sampling_plan(2, 3, 2, 5).unwrap();
        let batch = apply_plan(&t, &plan, TokenSource::Student).unwrap();
        assert_eq!(batch.instance_index, vec![0, 1]);
    }

    #[test]
    fn plan_dimension_mismatch_is_a_usage_error() {
        let t = Tensor::zeros(vec![2, 3, 2]);
        let plan = make_sampling_plan(2, 4, 2, 5).unwrap();
        assert!(matches!(apply_plan(&t, &plan, TokenSource::Student), Err(Error::Usage(_))));
    }
}
