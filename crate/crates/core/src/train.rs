//! End-to-end training: teacher pretraining, the token-graph distillation
//! loop, SGD with Nesterov momentum, evaluation, and diagnostics.
//!
//! Every randomized choice (shuffles, sampling plans, initializations) draws
//! from a stream derived from the master seed plus its indices, so runs are
//! reproducible, resumable at epoch boundaries, and unaffected by gating any
//! loss term off.

use std::path::Path;
use std::time::Instant;

use crate::checkpoint::{save_train_state, TrainStateBlob};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::graph::{build_token_graph, SigmaPolicy, TokenGraph};
use crate::loss::{
    contextual_similarity, global_loss, inner_loss, local_loss, logit_loss, total_loss,
    LossBreakdown, LossTerms, LossWeights, Projection,
};
use crate::metrics::{MetricRecord, MetricsWriter};
use crate::net::{build_net, ToyNet};
use crate::rng::{derive_seed, stream_indexed};
use crate::schedule::{graph_temperature, learning_rate};
use crate::tensor::{Tape, Tensor};
use crate::token::{apply_plan, make_sampling_plan, TokenBatch, TokenSource};

/// One Nesterov-momentum step with decoupled-from-nothing weight decay
/// folded into the gradient (the classic formulation):
///
/// ```text
/// g   ← grad + wd·θ
/// buf ← μ·buf + g
/// θ   ← θ − lr·(g + μ·buf)
/// ```
pub fn sgd_update(values: &mut [f64], grads: &[f64], buf: &mut [f64], lr: f64, momentum: f64, weight_decay: f64) {
    debug_assert_eq!(values.len(), grads.len());
    debug_assert_eq!(values.len(), buf.len());
    for i in 0..values.len() {
        let g = grads[i] + weight_decay * values[i];
        buf[i] = momentum * buf[i] + g;
        values[i] -= lr * (g + momentum * buf[i]);
    }
}

/// Argmax with ties broken toward the lowest class index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| argmax(&logits.data()[i * k..(i + 1) * k]) == y)
        .count()
}

fn shuffled_indices(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    use rand::Rng;
    let mut rng = stream_indexed(seed, "shuffle", &[epoch as u64]);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Top-1 accuracy of `net` over a dataset.
pub fn evaluate(net: &ToyNet, ds: &crate::data::LabeledDataset, batch_size: usize) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::usage("evaluate on an empty split".to_string()));
    }
    let bound = net.bind_frozen();
    let mut correct = 0;
    let indices: Vec<usize> = (0..ds.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (images, labels) = ds.batch(chunk)?;
        let out = net.forward(&bound, &images)?;
        correct += count_correct(&out.logits, &labels);
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Mean over instances of KL(student ‖ teacher) between softmax-normalized
/// flattened feature rows. Both matrices must be N×F with equal F.
pub fn mean_kld(teacher_rows: &Tensor, student_rows: &Tensor) -> Result<f64> {
    if teacher_rows.shape() != student_rows.shape() {
        return Err(Error::shape(format!(
            "mean_kld: feature shapes {:?} vs {:?}",
            teacher_rows.shape(),
            student_rows.shape()
        )));
    }
    let pt = teacher_rows.softmax_rows()?;
    let ps = student_rows.softmax_rows()?;
    Ok(Tensor::kl_rows(&ps, &pt, 1e-12)?.item())
}

/// Mean uniformity: sum of squared distances over ordered token pairs
/// (self-pairs contribute zero), divided by the token count.
pub fn mul(tokens: &TokenBatch) -> Result<f64> {
    let s = tokens.len();
    if s < 2 {
        return Err(Error::usage(format!("mul needs at least 2 tokens, got {s}")));
    }
    let d2 = tokens.tokens.pairwise_sq_dist()?;
    let total: f64 = d2.data().iter().sum();
    Ok(total / s as f64)
}

/// Penultimate features (classifier input) of every instance, as CSV:
/// header `label,f0..f(D−1)`, 17 significant digits per value.
pub fn export_embeddings(net: &ToyNet, ds: &crate::data::LabeledDataset, path: &Path) -> Result<()> {
    use std::io::Write;
    let bound = net.bind_frozen();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header_done = false;
    let indices: Vec<usize> = (0..ds.len()).collect();
    for chunk in indices.chunks(64) {
        let (images, labels) = ds.batch(chunk)?;
        let feats = net.forward(&bound, &images)?.head_input;
        let d = feats.shape()[1];
        if !header_done {
            write!(out, "label")?;
            for i in 0..d {
                write!(out, ",f{i}")?;
            }
            writeln!(out)?;
            header_done = true;
        }
        for (i, &label) in labels.iter().enumerate() {
            write!(out, "{label}")?;
            for v in &feats.data()[i * d..(i + 1) * d] {
                write!(out, ",{v:.16e}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

fn breakdown_mean(items: &[LossBreakdown]) -> LossBreakdown {
    let n = items.len().max(1) as f64;
    let mut acc = items.last().cloned().unwrap_or(LossBreakdown {
        logit: 0.0,
        inner: 0.0,
        local: 0.0,
        global: 0.0,
        total: 0.0,
        lambda: 0.0,
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
        tau: 0.0,
        tau_g: 0.0,
    });
    acc.logit = items.iter().map(|b| b.logit).sum::<f64>() / n;
    acc.inner = items.iter().map(|b| b.inner).sum::<f64>() / n;
    acc.local = items.iter().map(|b| b.local).sum::<f64>() / n;
    acc.global = items.iter().map(|b| b.global).sum::<f64>() / n;
    acc.total = items.iter().map(|b| b.total).sum::<f64>() / n;
    acc
}

/// Cross-entropy pretraining; the returned network is used frozen afterwards.
pub fn pretrain_teacher(
    cfg: &RunConfig,
    train: &crate::data::LabeledDataset,
    eval: Option<&crate::data::LabeledDataset>,
    metrics: &mut MetricsWriter,
) -> Result<ToyNet> {
    if train.is_empty() {
        return Err(Error::usage("teacher pretraining needs a nonempty dataset".to_string()));
    }
    let mut net = build_net(&cfg.teacher_spec()?, cfg.teacher_seed)?;
    let sched = cfg.lr_schedule(cfg.teacher_epochs)?;
    let mut momentum: Vec<Vec<f64>> = net.params.iter().map(|p| vec![0.0; p.numel()]).collect();
    for epoch in 1..=cfg.teacher_epochs {
        let start = Instant::now();
        let lr = learning_rate(&sched, epoch);
        let order = shuffled_indices(train.len(), cfg.teacher_seed, epoch);
        let mut correct = 0;
        let mut seen = 0;
        let mut losses = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let (images, labels) = train.batch(chunk)?;
            let tape = Tape::new();
            let bound = net.bind(&tape)?;
            let out = net.forward(&bound, &images)?;
            let loss = out.logits.cross_entropy_mean(&labels)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::numeric(format!(
                    "teacher pretraining diverged at epoch {epoch} (loss = {value})"
                )));
            }
            losses.push(value);
            correct += count_correct(&out.logits, &labels);
            seen += labels.len();
            loss.backward()?;
            for (i, leaf) in bound.iter().enumerate() {
                let grads = leaf.grad().expect("leaf gradient");
                sgd_update(&mut net.params[i].value, &grads, &mut momentum[i], lr, cfg.momentum, cfg.weight_decay);
            }
        }
        let mean_loss = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
        metrics.push(MetricRecord {
            epoch,
            split: "train".to_string(),
            accuracy: correct as f64 / seen.max(1) as f64,
            loss: Some(LossBreakdown {
                logit: mean_loss,
                inner: 0.0,
                local: 0.0,
                global: 0.0,
                total: mean_loss,
                lambda: 0.0,
                alpha: 0.0,
                beta: 0.0,
                gamma: 0.0,
                tau: cfg.tau,
                tau_g: cfg.tau_g_init,
            }),
            mean_kld: None,
            mul: None,
            tau_g: cfg.tau_g_init,
            lr,
        })?;
        if let Some(eval_ds) = eval {
            metrics.push(MetricRecord {
                epoch,
                split: "eval".to_string(),
                accuracy: evaluate(&net, eval_ds, cfg.batch_size)?,
                loss: None,
                mean_kld: None,
                mul: None,
                tau_g: cfg.tau_g_init,
                lr,
            })?;
        }
        metrics.push_timing(epoch, start.elapsed().as_secs_f64())?;
    }
    Ok(net)
}

/// The distillation driver: owns the student, projection, and optimizer
/// state; the teacher stays frozen throughout.
pub struct Distiller {
    pub cfg: RunConfig,
    pub teacher: ToyNet,
    pub student: ToyNet,
    pub projection: Projection,
    /// Momentum buffers: one per student parameter, then the projection.
    momentum: Vec<Vec<f64>>,
    pub epochs_done: usize,
    pub steps_done: u64,
    pub best_eval_accuracy: f64,
    target_m: usize,
}

impl Distiller {
    pub fn new(cfg: RunConfig, teacher: ToyNet) -> Result<Distiller> {
        cfg.validate()?;
        if teacher.spec != cfg.teacher_spec()? {
            return Err(Error::usage(
                "teacher network does not match the configured teacher spec".to_string(),
            ));
        }
        let student = build_net(&cfg.student_spec()?, cfg.seed)?;
        let target_m = cfg.resolve_target_tokens()?;
        let teacher_dim = teacher.spec.token_dim_for(target_m)?;
        let student_dim = student.spec.token_dim_for(target_m)?;
        let projection = Projection::new(student_dim, teacher_dim, cfg.seed);
        let momentum = student
            .params
            .iter()
            .map(|p| vec![0.0; p.numel()])
            .chain(std::iter::once(vec![0.0; projection.weight.numel()]))
            .collect();
        Ok(Distiller {
            cfg,
            teacher,
            student,
            projection,
            momentum,
            epochs_done: 0,
            steps_done: 0,
            best_eval_accuracy: 0.0,
            target_m,
        })
    }

    /// Rebuild a distiller from a train-state checkpoint.
    pub fn resume(cfg: RunConfig, teacher: ToyNet, blob: TrainStateBlob) -> Result<Distiller> {
        let mut d = Distiller::new(cfg, teacher)?;
        if blob.config_hash != d.cfg.hash() {
            return Err(Error::usage(
                "train state belongs to a different config".to_string(),
            ));
        }
        if blob.student.len() != d.student.params.len() || blob.projection.len() != 1 {
            return Err(Error::parse("train state parameter layout mismatch".to_string()));
        }
        d.student.params = blob.student;
        d.projection.weight = blob.projection.into_iter().next().expect("one projection param");
        d.momentum = blob.momentum;
        d.epochs_done = blob.epochs_done;
        d.steps_done = blob.steps_done;
        d.best_eval_accuracy = blob.best_eval_accuracy;
        Ok(d)
    }

    pub fn state(&self) -> TrainStateBlob {
        TrainStateBlob {
            config_hash: self.cfg.hash(),
            master_seed: self.cfg.seed,
            epochs_done: self.epochs_done,
            steps_done: self.steps_done,
            best_eval_accuracy: self.best_eval_accuracy,
            student: self.student.params.clone(),
            projection: vec![self.projection.weight.clone()],
            momentum: self.momentum.clone(),
        }
    }

    /// One optimizer step on one batch; returns the loss breakdown and the
    /// number of correctly classified instances.
    pub fn step(
        &mut self,
        images: &Tensor,
        labels: &[usize],
        epoch: usize,
        step_in_epoch: u64,
    ) -> Result<(LossBreakdown, usize)> {
        let b = labels.len();
        if b < 2 {
            return Err(Error::usage("distillation batches need at least 2 instances".to_string()));
        }
        let cfg = &self.cfg;
        let (lambda, alpha, beta, gamma) = (
            cfg.effective_lambda(),
            cfg.effective_alpha(),
            cfg.effective_beta(),
            cfg.effective_gamma(),
        );
        let tau_g = graph_temperature(&cfg.temperature_schedule()?, epoch);
        let lr = learning_rate(&cfg.lr_schedule(cfg.epochs)?, epoch);
        let m = self.target_m;

        // Frozen teacher: constants, so no gradient can reach it.
        let t_out = self.teacher.forward(&self.teacher.bind_frozen(), images)?;
        let tape = Tape::new();
        let s_bound = self.student.bind(&tape)?;
        let s_out = self.student.forward(&s_bound, images)?;

        let logit = logit_loss(
            &s_out.logits,
            &t_out.logits,
            labels,
            cfg.tau,
            lambda,
            cfg.kl_epsilon,
            cfg.kd_tau_squared,
        )?;

        let need_tokens = alpha > 0.0 || beta > 0.0 || gamma > 0.0;
        let (t_tokens, s_tokens) = if need_tokens {
            (Some(t_out.tokens(b, m)?), Some(s_out.tokens(b, m)?))
        } else {
            (None, None)
        };

        let inner = if alpha > 0.0 {
            let tt = t_tokens.as_ref().expect("tokens computed");
            let st = s_tokens.as_ref().expect("tokens computed");
            let mut cs_t = Vec::with_capacity(b);
            let mut cs_s = Vec::with_capacity(b);
            for i in 0..b {
                let rows: Vec<usize> = (i * m..(i + 1) * m).collect();
                cs_t.push(contextual_similarity(&tt.gather_rows(&rows)?)?);
                cs_s.push(contextual_similarity(&st.gather_rows(&rows)?)?);
            }
            Some(inner_loss(&cs_t, &cs_s)?)
        } else {
            None
        };

        let mut proj_leaf = None;
        let (local, global) = if beta > 0.0 || gamma > 0.0 {
            let tt = t_tokens.as_ref().expect("tokens computed");
            let st = s_tokens.as_ref().expect("tokens computed");
            let d_t = tt.shape()[1];
            let d_s = st.shape()[1];
            let budget = cfg.token_budget(b, m);
            let plan_seed = derive_seed(cfg.seed, "plan", &[epoch as u64, step_in_epoch]);
            let plan = make_sampling_plan(b, m, budget, plan_seed)?;
            let tb_t = apply_plan(&tt.reshape(vec![b, m, d_t])?, &plan, TokenSource::Teacher)?;
            let tb_s = apply_plan(&st.reshape(vec![b, m, d_s])?, &plan, TokenSource::Student)?;

            let local = if beta > 0.0 {
                let g_t = build_token_graph(&tb_t, cfg.k, cfg.sigma_policy(), cfg.symmetrize_mode())?;
                let g_s: TokenGraph = build_token_graph(
                    &tb_s,
                    cfg.k,
                    SigmaPolicy::Fixed(g_t.sigma),
                    cfg.symmetrize_mode(),
                )?;
                Some(local_loss(&g_s, &g_t, cfg.local_softmax(), cfg.kl_epsilon)?)
            } else {
                None
            };
            let global = if gamma > 0.0 {
                let pl = self.projection.bind(&tape)?;
                let sim = crate::loss::token_similarity(&tb_s.tokens, &tb_t.tokens, &pl)?;
                proj_leaf = Some(pl);
                Some(global_loss(&sim, tau_g)?)
            } else {
                None
            };
            (local, global)
        } else {
            (None, None)
        };

        let weights = LossWeights {
            lambda,
            alpha,
            beta,
            gamma,
            tau: cfg.tau,
            tau_g,
        };
        let terms = LossTerms {
            logit,
            inner,
            local,
            global,
        };
        let (total, breakdown) = total_loss(&terms, &weights)?;
        if !breakdown.total.is_finite() {
            return Err(Error::numeric(format!(
                "distillation loss is not finite at epoch {epoch} step {step_in_epoch}: {breakdown:?}"
            )));
        }
        total.backward()?;

        let (momentum_cfg, wd) = (cfg.momentum, cfg.weight_decay);
        for (i, leaf) in s_bound.iter().enumerate() {
            let grads = leaf.grad().expect("student leaf gradient");
            sgd_update(
                &mut self.student.params[i].value,
                &grads,
                &mut self.momentum[i],
                lr,
                momentum_cfg,
                wd,
            );
        }
        if let Some(pl) = proj_leaf {
            let grads = pl.grad().expect("projection gradient");
            let last = self.momentum.len() - 1;
            sgd_update(
                &mut self.projection.weight.value,
                &grads,
                &mut self.momentum[last],
                lr,
                momentum_cfg,
                wd,
            );
        }
        self.steps_done += 1;
        let correct = count_correct(&s_out.logits, labels);
        Ok((breakdown, correct))
    }

    /// Diagnostics on a deterministic eval subset: Mean KLD between aligned
    /// per-instance token features and the student-token uniformity value.
    fn diagnostics(&self, eval: &crate::data::LabeledDataset) -> Result<(f64, f64)> {
        let take = eval.len().min(64);
        let indices: Vec<usize> = (0..take).collect();
        let (images, _) = eval.batch(&indices)?;
        let t_out = self.teacher.forward(&self.teacher.bind_frozen(), &images)?;
        let s_out = self.student.forward(&self.student.bind_frozen(), &images)?;
        let m = self.target_m;
        let tt = t_out.tokens(take, m)?;
        let st = s_out.tokens(take, m)?;
        // Align the student tokens to the teacher dimension, flatten per instance.
        let projected = st.matmul(&self.projection.constant())?;
        let d_t = tt.shape()[1];
        let t_rows = tt.reshape(vec![take, m * d_t])?;
        let s_rows = projected.reshape(vec![take, m * d_t])?;
        let kld = mean_kld(&t_rows, &s_rows)?;

        let tokens = TokenBatch {
            tokens: st,
            instance_index: (0..take).flat_map(|i| std::iter::repeat(i).take(m)).collect(),
            source: TokenSource::Student,
        };
        let uniformity = mul(&tokens)?;
        Ok((kld, uniformity))
    }

    fn record_epoch(
        &mut self,
        epoch: usize,
        train_acc: f64,
        breakdowns: &[LossBreakdown],
        eval: &crate::data::LabeledDataset,
        metrics: &mut MetricsWriter,
    ) -> Result<f64> {
        let tau_g = graph_temperature(&self.cfg.temperature_schedule()?, epoch);
        let lr = learning_rate(&self.cfg.lr_schedule(self.cfg.epochs)?, epoch);
        metrics.push(MetricRecord {
            epoch,
            split: "train".to_string(),
            accuracy: train_acc,
            loss: Some(breakdown_mean(breakdowns)),
            mean_kld: None,
            mul: None,
            tau_g,
            lr,
        })?;
        let eval_acc = evaluate(&self.student, eval, self.cfg.batch_size)?;
        let (kld, uniformity) = self.diagnostics(eval)?;
        metrics.push(MetricRecord {
            epoch,
            split: "eval".to_string(),
            accuracy: eval_acc,
            loss: None,
            mean_kld: Some(kld),
            mul: Some(uniformity),
            tau_g,
            lr,
        })?;
        Ok(eval_acc)
    }

    /// Run epochs `epochs_done+1 ..= until` (clamped to the budget).
    pub fn run_until(
        &mut self,
        until: usize,
        train: &crate::data::LabeledDataset,
        eval: &crate::data::LabeledDataset,
        metrics: &mut MetricsWriter,
        out_dir: Option<&Path>,
    ) -> Result<()> {
        if train.is_empty() || eval.is_empty() {
            return Err(Error::usage("distillation needs nonempty train and eval splits".to_string()));
        }
        let until = until.min(self.cfg.epochs);
        while self.epochs_done < until {
            let epoch = self.epochs_done + 1;
            let start = Instant::now();
            let order = shuffled_indices(train.len(), self.cfg.seed, epoch);
            let mut correct = 0;
            let mut seen = 0;
            let mut breakdowns = Vec::new();
            let mut step_in_epoch = 0u64;
            for chunk in order.chunks(self.cfg.batch_size) {
                if chunk.len() < 2 {
                    continue;
                }
                let (images, labels) = train.batch(chunk)?;
                let (breakdown, hit) = self.step(&images, &labels, epoch, step_in_epoch)?;
                breakdowns.push(breakdown);
                correct += hit;
                seen += labels.len();
                step_in_epoch += 1;
            }
            let train_acc = correct as f64 / seen.max(1) as f64;
            let eval_acc = self.record_epoch(epoch, train_acc, &breakdowns, eval, metrics)?;
            self.epochs_done = epoch;
            metrics.push_timing(epoch, start.elapsed().as_secs_f64())?;
            if let Some(dir) = out_dir {
                save_train_state(&dir.join("state.ckpt"), &self.state())?;
                if eval_acc > self.best_eval_accuracy {
                    self.best_eval_accuracy = eval_acc;
                    save_train_state(&dir.join("best.ckpt"), &self.state())?;
                }
            } else if eval_acc > self.best_eval_accuracy {
                self.best_eval_accuracy = eval_acc;
            }
        }
        Ok(())
    }

    /// Run the full remaining budget.
    pub fn run(
        &mut self,
        train: &crate::data::LabeledDataset,
        eval: &crate::data::LabeledDataset,
        metrics: &mut MetricsWriter,
        out_dir: Option<&Path>,
    ) -> Result<()> {
        self.run_until(self.cfg.epochs, train, eval, metrics, out_dir)
    }
}
