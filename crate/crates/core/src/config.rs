//! Run configuration: a flat `key = value` text format.
//!
//! Every run directory receives the fully resolved config; parsing that file
//! reproduces the run. Unknown keys are errors, omitted keys take defaults,
//! and `parse(serialize(c)) == c` holds for any valid config.
//!
//! Schema (one key per line, `#` starts a comment):
//!
//! ```text
//! seed, data_seed, teacher_seed        u64
//! epochs, teacher_epochs, batch_size   usize
//! dataset                              synth | csv:PATH | bin:PATH
//! classes, channels, height, width     usize
//! per_class                            usize (synth images per class)
//! noise                                f64   (synth pixel noise)
//! imbalance_rate                       f64 ≥ 1
//! teacher_arch, student_arch           mlp | tinyconv
//! teacher_widths, student_widths       comma ints (mlp hidden / conv channels)
//! patch_size                           usize (mlp image patching)
//! target_tokens                        usize (0 = architecture native)
//! sampled_per_instance                 usize (token budget per instance)
//! k                                    usize (graph neighbours)
//! sigma                                median | positive float
//! lambda, alpha, beta, gamma           f64 ≥ 0
//! tau, tau_g_init                      f64 > 0
//! warmup_frac                          f64 (fraction of the epoch budget)
//! temperature_floor                    f64 > 0
//! lr, momentum, weight_decay           f64
//! lr_decay_factor                      f64 in (0,1]
//! lr_milestone_fracs                   comma floats
//! kd_tau_squared, knn_mutual,
//! local_softmax_neighbors              true | false
//! kl_epsilon                           f64 ≥ 0
//! ablate                               none | comma list of kd,inner,local,global
//! ```

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::graph::{SigmaPolicy, SymmetrizeMode};
use crate::loss::LocalSoftmax;
use crate::net::{Arch, NetSpec};
use crate::rng::fnv1a;
use crate::schedule::{LrSchedule, TemperatureSchedule};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSource {
    Synth,
    Csv(PathBuf),
    Binary(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchChoice {
    Mlp,
    TinyConv,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaChoice {
    Median,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AblateTerm {
    Kd,
    Inner,
    Local,
    Global,
}

impl AblateTerm {
    pub fn parse(s: &str) -> Result<AblateTerm> {
        match s {
            "kd" => Ok(AblateTerm::Kd),
            "inner" => Ok(AblateTerm::Inner),
            "local" => Ok(AblateTerm::Local),
            "global" => Ok(AblateTerm::Global),
            other => Err(Error::parse(format!(
                "unknown ablation term {other:?} (expected kd, inner, local, global)"
            ))),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            AblateTerm::Kd => "kd",
            AblateTerm::Inner => "inner",
            AblateTerm::Local => "local",
            AblateTerm::Global => "global",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data_seed: u64,
    pub teacher_seed: u64,
    pub epochs: usize,
    pub teacher_epochs: usize,
    pub batch_size: usize,

    pub dataset: DatasetSource,
    pub classes: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub per_class: usize,
    pub noise: f64,
    pub imbalance_rate: f64,

    pub teacher_arch: ArchChoice,
    pub teacher_widths: Vec<usize>,
    pub student_arch: ArchChoice,
    pub student_widths: Vec<usize>,
    pub patch_size: usize,
    pub target_tokens: usize,

    pub sampled_per_instance: usize,
    pub k: usize,
    pub sigma: SigmaChoice,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tau: f64,
    pub tau_g_init: f64,
    pub warmup_frac: f64,
    pub temperature_floor: f64,

    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay_factor: f64,
    pub lr_milestone_fracs: Vec<f64>,

    pub kd_tau_squared: bool,
    pub knn_mutual: bool,
    pub local_softmax_neighbors: bool,
    pub kl_epsilon: f64,
    pub ablate: Vec<AblateTerm>,
}

impl Default for RunConfig {
    /// Desk-scale recipe: the published hyperparameters (τ = 4,
    /// τ_g_init = 0.1, Nesterov momentum 0.9, weight decay 5e-4, decade LR
    /// drops at 62.5 / 75 / 87.5 % of the budget, warm-up 1/16 of the
    /// budget) on a 40-epoch synthetic run.
    fn default() -> Self {
        RunConfig {
            seed: 1,
            data_seed: 7,
            teacher_seed: 100,
            epochs: 40,
            teacher_epochs: 40,
            batch_size: 16,

            dataset: DatasetSource::Synth,
            classes: 10,
            channels: 1,
            height: 8,
            width: 8,
            per_class: 250,
            noise: 0.3,
            imbalance_rate: 1.0,

            teacher_arch: ArchChoice::Mlp,
            teacher_widths: vec![64, 32],
            student_arch: ArchChoice::Mlp,
            student_widths: vec![12, 24],
            patch_size: 4,
            target_tokens: 0,

            sampled_per_instance: 2,
            k: 3,
            sigma: SigmaChoice::Median,
            lambda: 1.0,
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.01,
            tau: 4.0,
            tau_g_init: 0.1,
            warmup_frac: 0.0625,
            temperature_floor: 1e-3,

            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_decay_factor: 0.1,
            lr_milestone_fracs: vec![0.625, 0.75, 0.875],

            kd_tau_squared: false,
            knn_mutual: false,
            local_softmax_neighbors: false,
            kl_epsilon: 1e-12,
            ablate: Vec::new(),
        }
    }
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let dataset = match &self.dataset {
            DatasetSource::Synth => "synth".to_string(),
            DatasetSource::Csv(p) => format!("csv:{}", p.display()),
            DatasetSource::Binary(p) => format!("bin:{}", p.display()),
        };
        let arch = |a: &ArchChoice| match a {
            ArchChoice::Mlp => "mlp",
            ArchChoice::TinyConv => "tinyconv",
        };
        let sigma = match self.sigma {
            SigmaChoice::Median => "median".to_string(),
            SigmaChoice::Fixed(v) => v.to_string(),
        };
        let ablate = if self.ablate.is_empty() {
            "none".to_string()
        } else {
            self.ablate.iter().map(|a| a.name()).collect::<Vec<_>>().join(",")
        };
        let pairs: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("data_seed", self.data_seed.to_string()),
            ("teacher_seed", self.teacher_seed.to_string()),
            ("epochs", self.epochs.to_string()),
            ("teacher_epochs", self.teacher_epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("dataset", dataset),
            ("classes", self.classes.to_string()),
            ("channels", self.channels.to_string()),
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("per_class", self.per_class.to_string()),
            ("noise", self.noise.to_string()),
            ("imbalance_rate", self.imbalance_rate.to_string()),
            ("teacher_arch", arch(&self.teacher_arch).to_string()),
            ("teacher_widths", join(&self.teacher_widths)),
            ("student_arch", arch(&self.student_arch).to_string()),
            ("student_widths", join(&self.student_widths)),
            ("patch_size", self.patch_size.to_string()),
            ("target_tokens", self.target_tokens.to_string()),
            ("sampled_per_instance", self.sampled_per_instance.to_string()),
            ("k", self.k.to_string()),
            ("sigma", sigma),
            ("lambda", self.lambda.to_string()),
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("gamma", self.gamma.to_string()),
            ("tau", self.tau.to_string()),
            ("tau_g_init", self.tau_g_init.to_string()),
            ("warmup_frac", self.warmup_frac.to_string()),
            ("temperature_floor", self.temperature_floor.to_string()),
            ("lr", self.lr.to_string()),
            ("momentum", self.momentum.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("lr_decay_factor", self.lr_decay_factor.to_string()),
            ("lr_milestone_fracs", join(&self.lr_milestone_fracs)),
            ("kd_tau_squared", self.kd_tau_squared.to_string()),
            ("knn_mutual", self.knn_mutual.to_string()),
            ("local_softmax_neighbors", self.local_softmax_neighbors.to_string()),
            ("kl_epsilon", self.kl_epsilon.to_string()),
            ("ablate", ablate),
        ];
        for (key, value) in pairs {
            let _ = writeln!(s, "{key} = {value}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::parse(format!(
                    "config line {}: expected `key = value`, got {raw:?}",
                    lineno + 1
                )));
            };
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::parse(format!("config line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }

    /// Apply one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse::<T>()
                .map_err(|_| Error::parse(format!("bad value for {key}: {value:?}")))
        }
        fn list_usize(key: &str, value: &str) -> Result<Vec<usize>> {
            if value.is_empty() || value == "none" {
                return Ok(Vec::new());
            }
            value.split(',').map(|v| num::<usize>(key, v.trim())).collect()
        }
        fn list_f64(key: &str, value: &str) -> Result<Vec<f64>> {
            if value.is_empty() || value == "none" {
                return Ok(Vec::new());
            }
            value.split(',').map(|v| num::<f64>(key, v.trim())).collect()
        }
        let arch = |value: &str| -> Result<ArchChoice> {
            match value {
                "mlp" => Ok(ArchChoice::Mlp),
                "tinyconv" => Ok(ArchChoice::TinyConv),
                other => Err(Error::parse(format!("unknown architecture {other:?}"))),
            }
        };
        match key {
            "seed" => self.seed = num(key, value)?,
            "data_seed" => self.data_seed = num(key, value)?,
            "teacher_seed" => self.teacher_seed = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "teacher_epochs" => self.teacher_epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "dataset" => {
                self.dataset = if value == "synth" {
                    DatasetSource::Synth
                } else if let Some(path) = value.strip_prefix("csv:") {
                    DatasetSource::Csv(PathBuf::from(path))
                } else if let Some(path) = value.strip_prefix("bin:") {
                    DatasetSource::Binary(PathBuf::from(path))
                } else {
                    return Err(Error::parse(format!(
                        "dataset must be synth, csv:PATH, or bin:PATH, got {value:?}"
                    )));
                }
            }
            "classes" => self.classes = num(key, value)?,
            "channels" => self.channels = num(key, value)?,
            "height" => self.height = num(key, value)?,
            "width" => self.width = num(key, value)?,
            "per_class" => self.per_class = num(key, value)?,
            "noise" => self.noise = num(key, value)?,
            "imbalance_rate" => self.imbalance_rate = num(key, value)?,
            "teacher_arch" => self.teacher_arch = arch(value)?,
            "teacher_widths" => self.teacher_widths = list_usize(key, value)?,
            "student_arch" => self.student_arch = arch(value)?,
            "student_widths" => self.student_widths = list_usize(key, value)?,
            "patch_size" => self.patch_size = num(key, value)?,
            "target_tokens" => self.target_tokens = num(key, value)?,
            "sampled_per_instance" => self.sampled_per_instance = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "sigma" => {
                self.sigma = if value == "median" {
                    SigmaChoice::Median
                } else {
                    SigmaChoice::Fixed(num(key, value)?)
                }
            }
            "lambda" => self.lambda = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "tau" => self.tau = num(key, value)?,
            "tau_g_init" => self.tau_g_init = num(key, value)?,
            "warmup_frac" => self.warmup_frac = num(key, value)?,
            "temperature_floor" => self.temperature_floor = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "lr_decay_factor" => self.lr_decay_factor = num(key, value)?,
            "lr_milestone_fracs" => self.lr_milestone_fracs = list_f64(key, value)?,
            "kd_tau_squared" => self.kd_tau_squared = num(key, value)?,
            "knn_mutual" => self.knn_mutual = num(key, value)?,
            "local_softmax_neighbors" => self.local_softmax_neighbors = num(key, value)?,
            "kl_epsilon" => self.kl_epsilon = num(key, value)?,
            "ablate" => {
                self.ablate = if value.is_empty() || value == "none" {
                    Vec::new()
                } else {
                    let mut terms = value
                        .split(',')
                        .map(|t| AblateTerm::parse(t.trim()))
                        .collect::<Result<Vec<_>>>()?;
                    terms.sort();
                    terms.dedup();
                    terms
                }
            }
            other => return Err(Error::parse(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.teacher_epochs == 0 {
            return Err(Error::config("epoch budgets must be positive".to_string()));
        }
        if self.batch_size < 2 {
            return Err(Error::config(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if self.imbalance_rate < 1.0 {
            return Err(Error::config(format!(
                "imbalance_rate must be >= 1, got {}",
                self.imbalance_rate
            )));
        }
        if self.tau <= 0.0 || self.tau_g_init <= 0.0 {
            return Err(Error::config("temperatures must be positive".to_string()));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if let SigmaChoice::Fixed(v) = self.sigma {
            if v <= 0.0 {
                return Err(Error::config(format!("fixed sigma must be positive, got {v}")));
            }
        }
        if self.sampled_per_instance == 0 {
            return Err(Error::config("sampled_per_instance must be positive".to_string()));
        }
        if self.kl_epsilon < 0.0 {
            return Err(Error::config("kl_epsilon must be >= 0".to_string()));
        }
        if !(0.0..=0.5).contains(&self.warmup_frac) {
            return Err(Error::config(format!(
                "warmup_frac must lie in [0, 0.5], got {}",
                self.warmup_frac
            )));
        }
        self.teacher_spec()?.validate()?;
        self.student_spec()?.validate()?;
        crate::net::validate_pair(&self.teacher_spec()?, &self.student_spec()?)?;
        let m = self.resolve_target_tokens()?;
        let min_batch_tokens = 2 * self.sampled_per_instance.min(m);
        if self.k >= min_batch_tokens.max(2) {
            // With the smallest legal batch (2 instances) the graph still
            // needs more nodes than k.
            return Err(Error::config(format!(
                "k = {} is too large for {} sampled tokens per instance at batch size 2",
                self.k, self.sampled_per_instance
            )));
        }
        if self.k == 0 {
            return Err(Error::config("k must be at least 1".to_string()));
        }
        Ok(())
    }

    fn spec_for(&self, arch: ArchChoice, widths: &[usize]) -> Result<NetSpec> {
        let arch = match arch {
            ArchChoice::Mlp => Arch::Mlp {
                patch_size: self.patch_size,
                hidden: widths.to_vec(),
            },
            ArchChoice::TinyConv => Arch::TinyConv {
                channels: widths.to_vec(),
            },
        };
        Ok(NetSpec {
            arch,
            channels: self.channels,
            height: self.height,
            width: self.width,
            classes: self.classes,
        })
    }

    pub fn teacher_spec(&self) -> Result<NetSpec> {
        self.spec_for(self.teacher_arch, &self.teacher_widths)
    }

    pub fn student_spec(&self) -> Result<NetSpec> {
        self.spec_for(self.student_arch, &self.student_widths)
    }

    /// Tokens per instance used by the distillation pipeline. Zero means
    /// "teacher native"; both networks must be able to produce the count.
    pub fn resolve_target_tokens(&self) -> Result<usize> {
        let teacher = self.teacher_spec()?;
        let student = self.student_spec()?;
        let target = if self.target_tokens == 0 {
            teacher.native_token_count()
        } else {
            self.target_tokens
        };
        for spec in [&teacher, &student] {
            match &spec.arch {
                Arch::Mlp { .. } => {
                    if spec.native_token_count() != target {
                        return Err(Error::config(format!(
                            "mlp produces {} tokens per instance, cannot retarget to {target}",
                            spec.native_token_count()
                        )));
                    }
                }
                Arch::TinyConv { .. } => {
                    let (_, h, w) = spec.feature_map_shape().expect("tinyconv");
                    crate::token::patch_size_for(h, w, target)?;
                }
            }
        }
        Ok(target)
    }

    pub fn ablated(&self, term: AblateTerm) -> bool {
        self.ablate.contains(&term)
    }

    /// Coefficients with ablations applied.
    pub fn effective_lambda(&self) -> f64 {
        if self.ablated(AblateTerm::Kd) {
            0.0
        } else {
            self.lambda
        }
    }

    pub fn effective_alpha(&self) -> f64 {
        if self.ablated(AblateTerm::Inner) {
            0.0
        } else {
            self.alpha
        }
    }

    pub fn effective_beta(&self) -> f64 {
        if self.ablated(AblateTerm::Local) {
            0.0
        } else {
            self.beta
        }
    }

    pub fn effective_gamma(&self) -> f64 {
        if self.ablated(AblateTerm::Global) {
            0.0
        } else {
            self.gamma
        }
    }

    fn warmup_epochs_for(&self, budget: usize) -> usize {
        ((self.warmup_frac * budget as f64).round() as usize).min(budget)
    }

    /// LR schedule scaled to an arbitrary epoch budget.
    pub fn lr_schedule(&self, budget: usize) -> Result<LrSchedule> {
        let milestones = self
            .lr_milestone_fracs
            .iter()
            .map(|f| (f * budget as f64).round() as usize)
            .collect();
        LrSchedule::new(self.lr, self.warmup_epochs_for(budget), milestones, self.lr_decay_factor)
    }

    /// Graph temperature schedule (warm-up spans at least 2 epochs).
    pub fn temperature_schedule(&self) -> Result<TemperatureSchedule> {
        let wu = self.warmup_epochs_for(self.epochs).max(2);
        TemperatureSchedule::with_floor(self.tau_g_init, wu, self.temperature_floor)
    }

    pub fn sigma_policy(&self) -> SigmaPolicy {
        match self.sigma {
            SigmaChoice::Median => SigmaPolicy::Median,
            SigmaChoice::Fixed(v) => SigmaPolicy::Fixed(v),
        }
    }

    pub fn symmetrize_mode(&self) -> SymmetrizeMode {
        if self.knn_mutual {
            SymmetrizeMode::Mutual
        } else {
            SymmetrizeMode::Union
        }
    }

    pub fn local_softmax(&self) -> LocalSoftmax {
        if self.local_softmax_neighbors {
            LocalSoftmax::NeighborsOnly
        } else {
            LocalSoftmax::FullRow
        }
    }

    /// Token budget for a batch of `b` instances.
    pub fn token_budget(&self, b: usize, m: usize) -> usize {
        (self.sampled_per_instance * b).min(b * m)
    }

    /// Fingerprint of the full resolved config.
    pub fn hash(&self) -> u64 {
        fnv1a(self.serialize().as_bytes())
    }

    /// Fingerprint of the fields a teacher checkpoint must agree on:
    /// data dimensions and the teacher network itself.
    pub fn teacher_signature(&self) -> u64 {
        let sig = format!(
            "classes={} channels={} height={} width={} arch={:?} widths={:?} patch={} seed={}",
            self.classes,
            self.channels,
            self.height,
            self.width,
            self.teacher_arch,
            self.teacher_widths,
            self.patch_size,
            self.teacher_seed,
        );
        fnv1a(sig.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_published_recipe() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.tau, 4.0);
        assert_eq!(cfg.tau_g_init, 0.1);
        assert_eq!(cfg.momentum, 0.9);
        assert_eq!(cfg.weight_decay, 5e-4);
        assert_eq!(cfg.warmup_frac, 0.0625);
        assert_eq!(cfg.lr_milestone_fracs, vec![0.625, 0.75, 0.875]);
        cfg.validate().unwrap();

        // At the published 240-epoch budget the fractions give 150/180/210
        // with a 15-epoch warm-up.
        let lr = cfg.lr_schedule(240).unwrap();
        assert_eq!(lr.milestones, vec![150, 180, 210]);
        assert_eq!(lr.warmup_epochs, 15);
    }

    #[test]
    fn roundtrip_is_exact() {
        let mut cfg = RunConfig::default();
        cfg.seed = 99;
        cfg.sigma = SigmaChoice::Fixed(0.37);
        cfg.ablate = vec![AblateTerm::Local, AblateTerm::Global];
        cfg.kl_epsilon = 1e-12;
        cfg.dataset = DatasetSource::Csv(PathBuf::from("/tmp/ds.csv"));
        let text = cfg.serialize();
        let parsed = RunConfig::parse(&text).unwrap();
        assert_eq!(parsed, cfg);
        assert_eq!(parsed.hash(), cfg.hash());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "# a comment\n\nseed = 5 # trailing\nepochs = 12\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.epochs, 12);
    }

    #[test]
    fn unknown_keys_and_bad_values_fail_with_context() {
        let err = RunConfig::parse("bogus = 1\n").unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
        let err = RunConfig::parse("epochs = soon\n").unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }

    #[test]
    fn validation_catches_structural_mistakes() {
        let mut cfg = RunConfig::default();
        cfg.batch_size = 1;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.student_widths = vec![128, 64];
        assert!(cfg.validate().is_err(), "student larger than teacher must fail");

        let mut cfg = RunConfig::default();
        cfg.imbalance_rate = 0.2;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.target_tokens = 3; // mlp native is 4
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn teacher_signature_tracks_teacher_fields_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.seed = 999;
        b.gamma = 0.0;
        assert_eq!(a.teacher_signature(), b.teacher_signature());
        b.teacher_widths = vec![48, 32];
        assert_ne!(a.teacher_signature(), b.teacher_signature());
    }
}
