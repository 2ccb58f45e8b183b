//! Toy teacher/student networks.
//!
//! Two differentiable architectures small enough for finite-difference
//! verification:
//!
//! * `Mlp`: a per-patch MLP shared across image patches; the post-activation
//!   patch features are the tokens, mean-pooled into the classifier.
//! * `TinyConv`: a stack of 2×2 stride-2 convolutions (patch embedding form);
//!   the final activation map is the feature hook, flattened into the
//!   classifier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::Param;
use crate::rng::stream_indexed;
use crate::tensor::{Tape, Tensor};
use crate::token::{patch_feature_map_batch, patch_image_batch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Arch {
    /// Per-patch widths; the last entry is the token dimension.
    Mlp { patch_size: usize, hidden: Vec<usize> },
    /// Output channels of each 2×2 stride-2 convolution.
    TinyConv { channels: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub arch: Arch,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
}

impl NetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::config("input extents must be positive".to_string()));
        }
        match &self.arch {
            Arch::Mlp { patch_size, hidden } => {
                if hidden.is_empty() || hidden.iter().any(|&w| w == 0) {
                    return Err(Error::config(format!("invalid mlp widths {hidden:?}")));
                }
                if *patch_size == 0 || self.height % patch_size != 0 || self.width % patch_size != 0 {
                    return Err(Error::config(format!(
                        "patch size {patch_size} does not divide {}x{}",
                        self.height, self.width
                    )));
                }
            }
            Arch::TinyConv { channels } => {
                if channels.is_empty() || channels.iter().any(|&c| c == 0) {
                    return Err(Error::config(format!("invalid conv channels {channels:?}")));
                }
                let stages = channels.len() as u32;
                let div = 1usize << stages;
                if self.height % div != 0 || self.width % div != 0 {
                    return Err(Error::config(format!(
                        "{} stride-2 stages need extents divisible by {div}, got {}x{}",
                        stages, self.height, self.width
                    )));
                }
            }
        }
        Ok(())
    }

    /// Full token count per instance produced by the feature hook.
    pub fn native_token_count(&self) -> usize {
        match &self.arch {
            Arch::Mlp { patch_size, .. } => (self.height / patch_size) * (self.width / patch_size),
            Arch::TinyConv { channels } => {
                let div = 1usize << channels.len() as u32;
                (self.height / div) * (self.width / div)
            }
        }
    }

    /// Feature dimension of the native tokens.
    pub fn native_token_dim(&self) -> usize {
        match &self.arch {
            Arch::Mlp { hidden, .. } => *hidden.last().expect("validated"),
            Arch::TinyConv { channels } => *channels.last().expect("validated"),
        }
    }

    /// Shape of the penultimate feature map (tinyconv only).
    pub fn feature_map_shape(&self) -> Option<(usize, usize, usize)> {
        match &self.arch {
            Arch::Mlp { .. } => None,
            Arch::TinyConv { channels } => {
                let div = 1usize << channels.len() as u32;
                Some((*channels.last().unwrap(), self.height / div, self.width / div))
            }
        }
    }

    /// Token dimension after retargeting to `target_m` tokens per instance.
    pub fn token_dim_for(&self, target_m: usize) -> Result<usize> {
        match &self.arch {
            Arch::Mlp { .. } => {
                if self.native_token_count() != target_m {
                    return Err(Error::config(format!(
                        "mlp produces {} tokens per instance, cannot retarget to {target_m}",
                        self.native_token_count()
                    )));
                }
                Ok(self.native_token_dim())
            }
            Arch::TinyConv { .. } => {
                let (c, h, w) = self.feature_map_shape().expect("tinyconv");
                let p = crate::token::patch_size_for(h, w, target_m)?;
                Ok(p * p * c)
            }
        }
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        let mut total = 0;
        match &self.arch {
            Arch::Mlp { patch_size, hidden } => {
                let mut d_in = patch_size * patch_size * self.channels;
                for &w in hidden {
                    total += d_in * w + w;
                    d_in = w;
                }
                total += d_in * self.classes + self.classes;
            }
            Arch::TinyConv { channels } => {
                let mut c_in = self.channels;
                for &c_out in channels {
                    total += c_in * 4 * c_out + c_out;
                    c_in = c_out;
                }
                let (cl, hl, wl) = self.feature_map_shape().expect("tinyconv");
                total += cl * hl * wl * self.classes + self.classes;
            }
        }
        total
    }
}

/// Penultimate features exposed for distillation.
pub enum Features {
    /// (B·M)×D token matrix, instances contiguous.
    Tokens { tokens: Tensor, per_instance: usize },
    /// B×Cℓ×Hℓ×Wℓ activation maps.
    Map {
        maps: Tensor,
        channels: usize,
        height: usize,
        width: usize,
    },
}

pub struct NetOutput {
    pub features: Features,
    /// Feature vector feeding the classifier, B×D.
    pub head_input: Tensor,
    /// B×K class logits.
    pub logits: Tensor,
}

impl NetOutput {
    /// Tokenize the features to exactly `target_m` tokens per instance:
    /// identity for MLP tokens, feature-map patching for conv maps.
    pub fn tokens(&self, batch: usize, target_m: usize) -> Result<Tensor> {
        match &self.features {
            Features::Tokens { tokens, per_instance } => {
                if *per_instance != target_m {
                    return Err(Error::config(format!(
                        "mlp features provide {per_instance} tokens per instance, requested {target_m}"
                    )));
                }
                Ok(tokens.clone())
            }
            Features::Map { maps, .. } => {
                let _ = batch;
                patch_feature_map_batch(maps, target_m)
            }
        }
    }

    pub fn token_dim(&self, batch: usize, target_m: usize) -> Result<usize> {
        Ok(self.tokens(batch, target_m)?.shape()[1])
    }
}

/// A toy network: spec plus flat parameter list in declaration order.
#[derive(Debug, Clone)]
pub struct ToyNet {
    pub spec: NetSpec,
    pub params: Vec<Param>,
}

/// Seeded scaled-uniform initialization.
pub fn build_net(spec: &NetSpec, seed: u64) -> Result<ToyNet> {
    spec.validate()?;
    let mut params = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, fan_in: usize, index: u64| {
        let mut rng = stream_indexed(seed, "net-init", &[index]);
        if shape.len() == 1 {
            params.push(Param::zeros(name, shape));
        } else {
            params.push(Param::scaled_uniform(name, shape, fan_in, &mut rng));
        }
    };
    match &spec.arch {
        Arch::Mlp { patch_size, hidden } => {
            let mut d_in = patch_size * patch_size * spec.channels;
            for (li, &w) in hidden.iter().enumerate() {
                push(format!("mlp{li}.weight"), vec![d_in, w], d_in, 2 * li as u64);
                push(format!("mlp{li}.bias"), vec![w], d_in, 2 * li as u64 + 1);
                d_in = w;
            }
            let head = hidden.len();
            push("head.weight".to_string(), vec![d_in, spec.classes], d_in, 2 * head as u64);
            push("head.bias".to_string(), vec![spec.classes], d_in, 2 * head as u64 + 1);
        }
        Arch::TinyConv { channels } => {
            let mut c_in = spec.channels;
            for (li, &c_out) in channels.iter().enumerate() {
                let fan_in = c_in * 4;
                push(format!("conv{li}.weight"), vec![fan_in, c_out], fan_in, 2 * li as u64);
                push(format!("conv{li}.bias"), vec![c_out], fan_in, 2 * li as u64 + 1);
                c_in = c_out;
            }
            let (cl, hl, wl) = spec.feature_map_shape().expect("tinyconv");
            let flat = cl * hl * wl;
            let head = channels.len();
            push("head.weight".to_string(), vec![flat, spec.classes], flat, 2 * head as u64);
            push("head.bias".to_string(), vec![spec.classes], flat, 2 * head as u64 + 1);
        }
    }
    Ok(ToyNet {
        spec: spec.clone(),
        params,
    })
}

/// Rearrange token-major conv output rows into B×C×H×W layout.
fn rows_to_maps(rows: &Tensor, b: usize, c: usize, h: usize, w: usize) -> Result<Tensor> {
    // source row (bi*h*w + y*w + x), column ch → target (bi, ch, y, x)
    let mut idx = Vec::with_capacity(b * c * h * w);
    for bi in 0..b {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    idx.push((bi * h * w + y * w + x) * c + ch);
                }
            }
        }
    }
    rows.gather_elems(&idx, vec![b, c, h, w])
}

impl ToyNet {
    /// Bind parameters as trainable tape leaves, in declaration order.
    pub fn bind(&self, tape: &Tape) -> Result<Vec<Tensor>> {
        self.params.iter().map(|p| p.leaf(tape)).collect()
    }

    /// Bind parameters as constants: the frozen-teacher path.
    pub fn bind_frozen(&self) -> Vec<Tensor> {
        self.params.iter().map(Param::constant).collect()
    }

    /// Forward pass over a B×C×H×W batch with the given parameter binding.
    pub fn forward(&self, bound: &[Tensor], images: &Tensor) -> Result<NetOutput> {
        if bound.len() != self.params.len() {
            return Err(Error::usage(format!(
                "bound {} parameter tensors, net has {}",
                bound.len(),
                self.params.len()
            )));
        }
        let [b, c, h, w] = images.shape() else {
            return Err(Error::shape(format!(
                "forward expects B×C×H×W images, got {:?}",
                images.shape()
            )));
        };
        let (b, c) = (*b, *c);
        if (c, *h, *w) != (self.spec.channels, self.spec.height, self.spec.width) {
            return Err(Error::shape(format!(
                "images {:?} do not match the net input {}x{}x{}",
                images.shape(),
                self.spec.channels,
                self.spec.height,
                self.spec.width
            )));
        }
        // Center pixel inputs to [-1, 1]; saturating stacks train poorly on
        // all-positive data.
        let centered = images.scale(2.0).add(&Tensor::from_vec(
            images.shape().to_vec(),
            vec![-1.0; images.numel()],
        )?)?;
        let images = &centered;
        match &self.spec.arch {
            Arch::Mlp { patch_size, hidden } => {
                let mut x = patch_image_batch(images, *patch_size)?;
                for li in 0..hidden.len() {
                    x = x
                        .matmul(&bound[2 * li])?
                        .add_row_broadcast(&bound[2 * li + 1])?
                        .tanh();
                }
                let m = self.spec.native_token_count();
                let pooled = x.row_group_mean(m)?;
                let head = hidden.len();
                let logits = pooled
                    .matmul(&bound[2 * head])?
                    .add_row_broadcast(&bound[2 * head + 1])?;
                Ok(NetOutput {
                    features: Features::Tokens {
                        tokens: x,
                        per_instance: m,
                    },
                    head_input: pooled,
                    logits,
                })
            }
            Arch::TinyConv { channels } => {
                let mut maps = images.clone();
                let (mut ch, mut hh, mut ww) = (c, self.spec.height, self.spec.width);
                for (li, &c_out) in channels.iter().enumerate() {
                    let cols = patch_image_batch(&maps, 2)?;
                    let rows = cols
                        .matmul(&bound[2 * li])?
                        .add_row_broadcast(&bound[2 * li + 1])?
                        .tanh();
                    hh /= 2;
                    ww /= 2;
                    ch = c_out;
                    maps = rows_to_maps(&rows, b, ch, hh, ww)?;
                }
                let flat = maps.reshape(vec![b, ch * hh * ww])?;
                let head = channels.len();
                let logits = flat
                    .matmul(&bound[2 * head])?
                    .add_row_broadcast(&bound[2 * head + 1])?;
                Ok(NetOutput {
                    features: Features::Map {
                        maps,
                        channels: ch,
                        height: hh,
                        width: ww,
                    },
                    head_input: flat,
                    logits,
                })
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Param::numel).sum()
    }
}

/// The distillation pairing requires a strictly smaller student.
pub fn validate_pair(teacher: &NetSpec, student: &NetSpec) -> Result<()> {
    teacher.validate()?;
    student.validate()?;
    if (teacher.channels, teacher.height, teacher.width, teacher.classes)
        != (student.channels, student.height, student.width, student.classes)
    {
        return Err(Error::config(
            "teacher and student must share input dimensions and class count".to_string(),
        ));
    }
    if student.param_count() >= teacher.param_count() {
        return Err(Error::config(format!(
            "student ({} params) must be strictly smaller than the teacher ({} params)",
            student.param_count(),
            teacher.param_count()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    fn mlp_spec() -> NetSpec {
        NetSpec {
            arch: Arch::Mlp {
                patch_size: 4,
                hidden: vec![32, 24],
            },
            channels: 1,
            height: 8,
            width: 8,
            classes: 10,
        }
    }

    #[test]
    fn mlp_param_count_matches_closed_form() {
        // 16→32→24 per patch, then 24→10 head
        let expected = (16 * 32 + 32) + (32 * 24 + 24) + (24 * 10 + 10);
        let spec = mlp_spec();
        assert_eq!(spec.param_count(), expected);
        let net = build_net(&spec, 3).unwrap();
        assert_eq!(net.param_count(), expected);
    }

    #[test]
    fn tinyconv_feature_hook_shape() {
        let spec = NetSpec {
            arch: Arch::TinyConv { channels: vec![8] },
            channels: 1,
            height: 8,
            width: 8,
            classes: 4,
        };
        assert_eq!(spec.feature_map_shape(), Some((8, 4, 4)));
        let net = build_net(&spec, 1).unwrap();
        let images = Tensor::zeros(vec![2, 1, 8, 8]);
        let out = net.forward(&net.bind_frozen(), &images).unwrap();
        match out.features {
            Features::Map {
                channels,
                height,
                width,
                ref maps,
            } => {
                assert_eq!((channels, height, width), (8, 4, 4));
                assert_eq!(maps.shape(), &[2, 8, 4, 4]);
            }
            _ => panic!("tinyconv must expose a feature map"),
        }
        assert_eq!(out.logits.shape(), &[2, 4]);
    }

    #[test]
    fn same_seed_means_identical_forward() {
        let spec = mlp_spec();
        let a = build_net(&spec, 11).unwrap();
        let b = build_net(&spec, 11).unwrap();
        let c = build_net(&spec, 12).unwrap();
        let images = Tensor::from_vec(vec![1, 1, 8, 8], (0..64).map(|v| v as f64 / 64.0).collect()).unwrap();
        let za = a.forward(&a.bind_frozen(), &images).unwrap().logits;
        let zb = b.forward(&b.bind_frozen(), &images).unwrap().logits;
        let zc = c.forward(&c.bind_frozen(), &images).unwrap().logits;
        assert_eq!(za.data(), zb.data());
        assert_ne!(za.data(), zc.data());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = mlp_spec();
        spec.arch = Arch::Mlp {
            patch_size: 3,
            hidden: vec![8],
        };
        assert!(build_net(&spec, 0).is_err());
        spec.arch = Arch::Mlp {
            patch_size: 4,
            hidden: vec![],
        };
        assert!(build_net(&spec, 0).is_err());

        let conv = NetSpec {
            arch: Arch::TinyConv { channels: vec![4, 4, 4] },
            channels: 1,
            height: 4,
            width: 4,
            classes: 2,
        };
        assert!(conv.validate().is_err()); // 3 stages need divisibility by 8
    }

    #[test]
    fn pair_validation_requires_a_smaller_student() {
        let teacher = mlp_spec();
        let mut student = mlp_spec();
        assert!(validate_pair(&teacher, &student).is_err()); // equal size
        student.arch = Arch::Mlp {
            patch_size: 4,
            hidden: vec![8, 24],
        };
        validate_pair(&teacher, &student).unwrap();
    }

    #[test]
    fn both_architectures_are_differentiable_end_to_end() {
        for spec in [
            NetSpec {
                arch: Arch::Mlp {
                    patch_size: 2,
                    hidden: vec![5, 4],
                },
                channels: 1,
                height: 4,
                width: 4,
                classes: 3,
            },
            NetSpec {
                arch: Arch::TinyConv { channels: vec![3] },
                channels: 1,
                height: 4,
                width: 4,
                classes: 3,
            },
        ] {
            let net = build_net(&spec, 5).unwrap();
            let images = Tensor::from_vec(
                vec![2, 1, 4, 4],
                (0..32).map(|v| (v as f64 * 0.37).sin() * 0.5 + 0.5).collect(),
            )
            .unwrap();
            let labels = [0usize, 2];
            let shapes: Vec<(Vec<usize>, Vec<f64>)> = net
                .params
                .iter()
                .map(|p| (p.shape.clone(), p.value.clone()))
                .collect();
            let report = grad_check(&shapes, 1e-5, |bound| {
                net.forward(bound, &images)?.logits.cross_entropy_mean(&labels)
            })
            .unwrap();
            assert!(
                report.max_rel_error <= 1e-6,
                "net gradient check failed: {}",
                report.max_rel_error
            );
        }
    }
}
