//! The four distillation objectives and their weighted total.
//!
//! * logit loss: cross-entropy on hard labels plus temperature-softened KL
//!   against the teacher's logits, student distribution first.
//! * local loss: row-softmaxed adjacency KL between the student and teacher
//!   token graphs.
//! * global loss: InfoNCE over projected-cosine similarities, each student
//!   token contrasted against every teacher token in the batch.
//! * inner loss: per-instance MSE between contextual similarity matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::TokenGraph;
use crate::param::Param;
use crate::rng::stream;
use crate::tensor::{Tape, Tensor};

/// Trainable linear map aligning student token dimension to the teacher's.
#[derive(Debug, Clone)]
pub struct Projection {
    pub weight: Param,
}

impl Projection {
    pub fn new(d_student: usize, d_teacher: usize, seed: u64) -> Projection {
        let mut rng = stream(seed, &["projection-init"]);
        Projection {
            weight: Param::scaled_uniform("projection", vec![d_student, d_teacher], d_student, &mut rng),
        }
    }

    pub fn bind(&self, tape: &Tape) -> Result<Tensor> {
        self.weight.leaf(tape)
    }

    pub fn constant(&self) -> Tensor {
        self.weight.constant()
    }
}

/// Per-step scalar record of every term, its coefficient, and the
/// temperatures in effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub logit: f64,
    pub inner: f64,
    pub local: f64,
    pub global: f64,
    pub total: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tau: f64,
    pub tau_g: f64,
}

/// Temperature-soften logits: `softmax_rows(z / τ)`.
pub fn soften(z: &Tensor, tau: f64) -> Result<Tensor> {
    if tau <= 0.0 {
        return Err(Error::config(format!("temperature must be positive, got {tau}")));
    }
    z.div_scalar(tau).softmax_rows()
}

/// Mean row KL divergence with the student distribution first.
pub fn kd_loss(p_student: &Tensor, p_teacher: &Tensor, eps: f64) -> Result<Tensor> {
    Tensor::kl_rows(p_student, p_teacher, eps)
}

/// Hard-label cross-entropy plus `λ`·KD on softened logits.
///
/// With `λ = 0` the KD branch is not evaluated at all, so an ablated run is
/// bit-identical to a build without it. `tau_squared` restores the classic
/// τ² gradient rescaling; it is off by default because the plain objective
/// carries no such factor.
pub fn logit_loss(
    z_student: &Tensor,
    z_teacher: &Tensor,
    labels: &[usize],
    tau: f64,
    lambda: f64,
    eps: f64,
    tau_squared: bool,
) -> Result<Tensor> {
    let ce = z_student.cross_entropy_mean(labels)?;
    if lambda == 0.0 {
        return Ok(ce);
    }
    let ps = soften(z_student, tau)?;
    let pt = soften(z_teacher, tau)?;
    let mut kd = kd_loss(&ps, &pt, eps)?;
    if tau_squared {
        kd = kd.scale(tau * tau);
    }
    ce.add(&kd.scale(lambda))
}

/// How the local loss turns adjacency rows into distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LocalSoftmax {
    /// Softmax over the full row, zeros included (literal formula).
    #[default]
    FullRow,
    /// Softmax restricted to each graph's own neighbour set.
    NeighborsOnly,
}

fn masked_row_softmax(graph: &TokenGraph) -> Result<Tensor> {
    let s = graph.node_count();
    // Push non-neighbours to -1e9 before the softmax; exp underflows to an
    // exact zero, leaving a distribution supported on the neighbour set.
    let offsets: Vec<f64> = graph
        .neighbor_mask
        .iter()
        .map(|&m| if m { 0.0 } else { -1e9 })
        .collect();
    let offset_t = Tensor::from_vec(vec![s, s], offsets)?;
    graph.adjacency.add(&offset_t)?.softmax_rows()
}

/// Sum over nodes of KL between row-softmaxed adjacencies, student first.
pub fn local_loss(
    graph_student: &TokenGraph,
    graph_teacher: &TokenGraph,
    mode: LocalSoftmax,
    eps: f64,
) -> Result<Tensor> {
    let s = graph_student.node_count();
    if s != graph_teacher.node_count() {
        return Err(Error::usage(format!(
            "local_loss: student graph has {s} nodes, teacher {}",
            graph_teacher.node_count()
        )));
    }
    let (p, q) = match mode {
        LocalSoftmax::FullRow => (
            graph_student.adjacency.softmax_rows()?,
            graph_teacher.adjacency.softmax_rows()?,
        ),
        LocalSoftmax::NeighborsOnly => (
            masked_row_softmax(graph_student)?,
            masked_row_softmax(graph_teacher)?,
        ),
    };
    // kl_rows averages over rows; the objective sums over nodes.
    Ok(Tensor::kl_rows(&p, &q, eps)?.scale(s as f64))
}

/// Cosine similarities between projected student tokens and teacher tokens.
///
/// `SIM[i][j] = cos(Proj(Tˢᵢ), Tᵀⱼ)`, zero-norm denominators clamped at 1e-12.
pub fn token_similarity(
    tokens_student: &Tensor,
    tokens_teacher: &Tensor,
    projection: &Tensor,
) -> Result<Tensor> {
    let projected = tokens_student.matmul(projection)?;
    let pn = projected.normalize_rows(1e-12)?;
    let tn = tokens_teacher.normalize_rows(1e-12)?;
    pn.matmul(&tn.transpose()?)
}

/// InfoNCE over a similarity matrix whose positives sit on the diagonal:
/// `Σᵢ [logsumexpⱼ(SIMᵢⱼ/τ_g) − SIMᵢᵢ/τ_g]`. Negatives are all other
/// sampled tokens in the batch, same-instance ones included.
pub fn global_loss(sim: &Tensor, tau_g: f64) -> Result<Tensor> {
    if tau_g <= 0.0 {
        return Err(Error::config(format!("tau_g must be positive, got {tau_g}")));
    }
    let shape = sim.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::shape(format!("global_loss expects a square SIM, got {shape:?}")));
    }
    let z = sim.div_scalar(tau_g);
    let lse = z.logsumexp_rows()?;
    let diag = z.diag()?;
    Ok(lse.sub(&diag)?.sum())
}

/// Per-instance contextual similarity: `softmax_rows(F·Fᵀ/√D)`.
pub fn contextual_similarity(features: &Tensor) -> Result<Tensor> {
    let shape = features.shape();
    if shape.len() != 2 {
        return Err(Error::shape(format!(
            "contextual_similarity expects N×D features, got {shape:?}"
        )));
    }
    let d = shape[1] as f64;
    features
        .matmul(&features.transpose()?)?
        .div_scalar(d.sqrt())
        .softmax_rows()
}

/// Mean over instances of MSE between teacher and student contextual
/// similarity matrices.
pub fn inner_loss(cs_teacher: &[Tensor], cs_student: &[Tensor]) -> Result<Tensor> {
    if cs_teacher.len() != cs_student.len() || cs_teacher.is_empty() {
        return Err(Error::usage(format!(
            "inner_loss: {} teacher matrices vs {} student matrices",
            cs_teacher.len(),
            cs_student.len()
        )));
    }
    let mut per_instance = Vec::with_capacity(cs_teacher.len());
    for (t, s) in cs_teacher.iter().zip(cs_student) {
        if t.shape() != s.shape() {
            return Err(Error::usage(format!(
                "inner_loss: contextual matrices {:?} vs {:?} differ in shape",
                t.shape(),
                s.shape()
            )));
        }
        per_instance.push(t.mse(s)?);
    }
    Ok(Tensor::add_n(&per_instance)?.scale(1.0 / per_instance.len() as f64))
}

/// Individual loss tensors feeding the total; absent terms were gated off.
pub struct LossTerms {
    pub logit: Tensor,
    pub inner: Option<Tensor>,
    pub local: Option<Tensor>,
    pub global: Option<Tensor>,
}

/// Coefficients and temperatures, as recorded in every breakdown.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tau: f64,
    pub tau_g: f64,
}

/// `L = L_logit + α·L_inner + β·L_local + γ·L_global`.
///
/// Terms with a zero coefficient (or gated to `None`) are left out of the
/// graph entirely, so their gradient contribution is structurally zero.
pub fn total_loss(terms: &LossTerms, w: &LossWeights) -> Result<(Tensor, LossBreakdown)> {
    for (name, v) in [("alpha", w.alpha), ("beta", w.beta), ("gamma", w.gamma), ("lambda", w.lambda)] {
        if v < 0.0 {
            return Err(Error::config(format!("coefficient {name} must be >= 0, got {v}")));
        }
    }
    let mut total = terms.logit.clone();
    let scaled = |t: &Option<Tensor>, c: f64| -> Option<Tensor> {
        t.as_ref().filter(|_| c != 0.0).map(|t| t.scale(c))
    };
    for part in [
        scaled(&terms.inner, w.alpha),
        scaled(&terms.local, w.beta),
        scaled(&terms.global, w.gamma),
    ]
    .into_iter()
    .flatten()
    {
        total = total.add(&part)?;
    }
    let value = |t: &Option<Tensor>| t.as_ref().map_or(0.0, Tensor::item);
    let breakdown = LossBreakdown {
        logit: terms.logit.item(),
        inner: value(&terms.inner),
        local: value(&terms.local),
        global: value(&terms.global),
        total: total.item(),
        lambda: w.lambda,
        alpha: w.alpha,
        beta: w.beta,
        gamma: w.gamma,
        tau: w.tau,
        tau_g: w.tau_g,
    };
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_token_graph, SigmaPolicy, SymmetrizeMode};
    use crate::rng::stream;
    use crate::tensor::grad_check;
    use crate::token::{TokenBatch, TokenSource};
    use rand::Rng;

    fn batch_from(tokens: Tensor, source: TokenSource) -> TokenBatch {
        let s = tokens.shape()[0];
        TokenBatch {
            tokens,
            instance_index: vec![0; s],
            source,
        }
    }

    #[test]
    fn soften_approaches_uniform_at_huge_temperature() {
        let z = Tensor::from_vec(vec![2, 4], vec![3.0, -1.0, 0.5, 2.0, 1.0, 1.5, -2.0, 0.0]).unwrap();
        let p = soften(&z, 1e6).unwrap();
        for v in p.data() {
            assert!((v - 0.25).abs() <= 1e-5);
        }
        assert!(soften(&z, 0.0).is_err());
    }

    #[test]
    fn soften_matches_direct_evaluation() {
        let z = Tensor::from_vec(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let p = soften(&z, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((p.data()[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p.data()[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn kd_loss_identity_and_forced_value() {
        let p = Tensor::from_vec(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let q = Tensor::from_vec(vec![1, 2], vec![0.5, 0.5]).unwrap();
        assert!((kd_loss(&p, &q, 1e-12).unwrap().item() - 2.0f64.ln()).abs() < 1e-15);
        assert_eq!(kd_loss(&q, &q, 1e-12).unwrap().item(), 0.0);
    }

    #[test]
    fn logit_loss_reduces_to_cross_entropy_when_lambda_is_zero() {
        let zs = Tensor::from_vec(vec![2, 3], vec![1.0, 0.0, -1.0, 0.3, 0.7, 0.1]).unwrap();
        let zt = Tensor::from_vec(vec![2, 3], vec![0.1, 0.2, 0.3, -0.2, 0.5, 0.4]).unwrap();
        let labels = [0usize, 1];
        let with_zero = logit_loss(&zs, &zt, &labels, 4.0, 0.0, 1e-12, false).unwrap();
        let ce = zs.cross_entropy_mean(&labels).unwrap();
        assert_eq!(with_zero.item(), ce.item());
    }

    #[test]
    fn logit_loss_kd_term_vanishes_on_identical_logits() {
        let z = Tensor::from_vec(vec![2, 3], vec![2.0, 0.0, -1.0, 0.0, 1.0, 0.0]).unwrap();
        let labels = [0usize, 1];
        let loss = logit_loss(&z, &z, &labels, 4.0, 0.7, 1e-12, false).unwrap();
        let ce = z.cross_entropy_mean(&labels).unwrap();
        assert_eq!(loss.item(), ce.item());
    }

    /// Term-by-term reference: CE and KD both by direct summation.
    #[test]
    fn logit_loss_matches_term_by_term_oracle() {
        let mut rng = stream(5, &["logit-loss"]);
        let b = 3;
        let kc = 4;
        let zs: Vec<f64> = (0..b * kc).map(|_| rng.random_range(-2.0..2.0)).collect();
        let zt: Vec<f64> = (0..b * kc).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels = [2usize, 0, 3];
        let (tau, lambda) = (4.0, 0.6);

        let got = logit_loss(
            &Tensor::from_vec(vec![b, kc], zs.clone()).unwrap(),
            &Tensor::from_vec(vec![b, kc], zt.clone()).unwrap(),
            &labels,
            tau,
            lambda,
            1e-12,
            false,
        )
        .unwrap()
        .item();

        let softmax = |row: &[f64]| -> Vec<f64> {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let sum: f64 = e.iter().sum();
            e.iter().map(|v| v / sum).collect()
        };
        let mut ce = 0.0;
        let mut kd = 0.0;
        for i in 0..b {
            let ps = softmax(&zs[i * kc..(i + 1) * kc]);
            ce += -ps[labels[i]].ln();
            let ss: Vec<f64> = zs[i * kc..(i + 1) * kc].iter().map(|v| v / tau).collect();
            let st: Vec<f64> = zt[i * kc..(i + 1) * kc].iter().map(|v| v / tau).collect();
            let (ps, pt) = (softmax(&ss), softmax(&st));
            for j in 0..kc {
                kd += ps[j] * (ps[j] / pt[j]).ln();
            }
        }
        let want = ce / b as f64 + lambda * kd / b as f64;
        assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
    }

    #[test]
    fn local_loss_is_zero_on_identical_graphs() {
        let tokens = Tensor::from_vec(vec![5, 2], vec![0.0, 0.1, 1.0, 0.3, 2.0, -0.4, 3.3, 0.0, -1.0, 0.9]).unwrap();
        let g1 = build_token_graph(&batch_from(tokens.clone(), TokenSource::Student), 2, SigmaPolicy::Median, SymmetrizeMode::Union).unwrap();
        let g2 = build_token_graph(&batch_from(tokens, TokenSource::Teacher), 2, SigmaPolicy::Fixed(g1.sigma), SymmetrizeMode::Union).unwrap();
        assert_eq!(local_loss(&g1, &g2, LocalSoftmax::FullRow, 1e-12).unwrap().item(), 0.0);
    }

    #[test]
    fn local_loss_matches_direct_evaluation_for_two_nodes() {
        let mk = |w: f64| {
            let adjacency = Tensor::from_vec(vec![2, 2], vec![0.0, w, w, 0.0]).unwrap();
            TokenGraph {
                adjacency,
                neighbor_mask: vec![false, true, true, false],
                k: 1,
                sigma: 1.0,
                tokens: batch_from(Tensor::zeros(vec![2, 1]), TokenSource::Student),
            }
        };
        let gs = mk(1.0);
        let gt = mk(0.5);
        let got = local_loss(&gs, &gt, LocalSoftmax::FullRow, 1e-12).unwrap().item();

        let softmax2 = |a: f64, b: f64| {
            let (ea, eb) = (a.exp(), b.exp());
            (ea / (ea + eb), eb / (ea + eb))
        };
        let (p0, p1) = softmax2(0.0, 1.0);
        let (q0, q1) = softmax2(0.0, 0.5);
        let kl = p0 * (p0 / q0).ln() + p1 * (p1 / q1).ln();
        assert!((got - 2.0 * kl).abs() < 1e-14, "got {got}, want {}", 2.0 * kl);
    }

    #[test]
    fn local_loss_gradient_matches_finite_differences() {
        let mut rng = stream(17, &["local-grad"]);
        let (s, d, k) = (6, 3, 2);
        let student: Vec<f64> = (0..s * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let teacher: Vec<f64> = (0..s * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let teacher_graph = build_token_graph(
            &batch_from(Tensor::from_vec(vec![s, d], teacher).unwrap(), TokenSource::Teacher),
            k,
            SigmaPolicy::Median,
            SymmetrizeMode::Union,
        )
        .unwrap();
        // Freeze the student's discrete structure at the evaluation point.
        let base = Tensor::from_vec(vec![s, d], student.clone()).unwrap();
        let dist = base.pairwise_sq_dist().unwrap();
        let mask = crate::graph::knn_select(&dist, k, SymmetrizeMode::Union).unwrap();
        let sigma = teacher_graph.sigma;

        let report = grad_check(&[(vec![s, d], student)], 1e-5, |p| {
            let dist = p[0].pairwise_sq_dist()?;
            let adjacency = crate::graph::gaussian_adjacency(&dist, &mask, sigma)?;
            let gs = TokenGraph {
                adjacency,
                neighbor_mask: mask.clone(),
                k,
                sigma,
                tokens: batch_from(Tensor::zeros(vec![s, d]), TokenSource::Student),
            };
            local_loss(&gs, &teacher_graph, LocalSoftmax::FullRow, 1e-12)
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "rel error {}", report.max_rel_error);
    }

    #[test]
    fn token_similarity_identity_and_antiparallel() {
        let eye = Tensor::from_vec(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let sim = token_similarity(&eye, &eye, &eye).unwrap();
        assert!((sim.data()[0] - 1.0).abs() < 1e-12);
        assert!(sim.data()[1].abs() < 1e-12);
        assert!((sim.data()[3] - 1.0).abs() < 1e-12);

        let a = Tensor::from_vec(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(vec![1, 2], vec![-2.0, -4.0]).unwrap();
        let sim = token_similarity(&a, &b, &eye).unwrap();
        assert!((sim.data()[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn token_similarity_matches_per_pair_cosine_oracle() {
        let mut rng = stream(23, &["cosine"]);
        let (s, ds, dt) = (4, 3, 5);
        let ts: Vec<f64> = (0..s * ds).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tt: Vec<f64> = (0..s * dt).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..ds * dt).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sim = token_similarity(
            &Tensor::from_vec(vec![s, ds], ts.clone()).unwrap(),
            &Tensor::from_vec(vec![s, dt], tt.clone()).unwrap(),
            &Tensor::from_vec(vec![ds, dt], w.clone()).unwrap(),
        )
        .unwrap();

        for i in 0..s {
            let mut proj = vec![0.0; dt];
            for a in 0..ds {
                for bcol in 0..dt {
                    proj[bcol] += ts[i * ds + a] * w[a * dt + bcol];
                }
            }
            for j in 0..s {
                let trow = &tt[j * dt..(j + 1) * dt];
                let dot: f64 = proj.iter().zip(trow).map(|(x, y)| x * y).sum();
                let np: f64 = proj.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nt: f64 = trow.iter().map(|v| v * v).sum::<f64>().sqrt();
                let want = dot / (np * nt);
                assert!(
                    (sim.data()[i * s + j] - want).abs() < 1e-12,
                    "cosine mismatch at ({i},{j})"
                );
                assert!(sim.data()[i * s + j].abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn global_loss_base_cases() {
        let one = Tensor::from_vec(vec![1, 1], vec![0.73]).unwrap();
        assert_eq!(global_loss(&one, 0.5).unwrap().item(), 0.0);

        let eye = Tensor::from_vec(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let got = global_loss(&eye, 1.0).unwrap().item();
        // direct evaluation: per row, ln(e^1 + e^0) - 1 = ln(1 + e^-1)
        let direct = 2.0 * (1.0 + (-1.0f64).exp()).ln();
        assert!((got - direct).abs() < 1e-12, "got {got}, want {direct}");
        assert!((got - 0.6265).abs() < 1e-4);

        let aligned = Tensor::from_vec(vec![2, 2], vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        let tiny_tau = global_loss(&aligned, 1e-3).unwrap().item();
        assert!(tiny_tau.abs() < 1e-12);
        assert!(global_loss(&aligned, 0.0).is_err());
    }

    #[test]
    fn global_loss_summands_are_nonnegative() {
        let mut rng = stream(29, &["global-nonneg"]);
        for _ in 0..50 {
            let s = rng.random_range(1..8usize);
            let sim: Vec<f64> = (0..s * s).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t = Tensor::from_vec(vec![s, s], sim).unwrap();
            assert!(global_loss(&t, 0.1).unwrap().item() >= 0.0);
        }
    }

    #[test]
    fn global_loss_is_invariant_to_student_token_scaling() {
        let mut rng = stream(37, &["global-scale"]);
        let (s, ds, dt) = (5, 4, 4);
        let ts: Vec<f64> = (0..s * ds).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tt: Vec<f64> = (0..s * dt).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..ds * dt).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss_at = |scale: f64| {
            let scaled: Vec<f64> = ts.iter().map(|v| v * scale).collect();
            let sim = token_similarity(
                &Tensor::from_vec(vec![s, ds], scaled).unwrap(),
                &Tensor::from_vec(vec![s, dt], tt.clone()).unwrap(),
                &Tensor::from_vec(vec![ds, dt], w.clone()).unwrap(),
            )
            .unwrap();
            global_loss(&sim, 0.1).unwrap().item()
        };
        assert!((loss_at(1.0) - loss_at(2.0)).abs() <= 1e-10);
        assert!((loss_at(1.0) - loss_at(0.25)).abs() <= 1e-10);
    }

    #[test]
    fn contextual_similarity_base_cases() {
        let single = Tensor::from_vec(vec![1, 3], vec![0.2, -0.5, 1.0]).unwrap();
        let cs = contextual_similarity(&single).unwrap();
        assert_eq!(cs.data(), &[1.0]);

        let eye = Tensor::from_vec(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let cs = contextual_similarity(&eye).unwrap();
        let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
        let p = inv_sqrt2.exp() / (inv_sqrt2.exp() + 1.0);
        assert!((cs.data()[0] - p).abs() < 1e-12);
        assert!((cs.data()[1] - (1.0 - p)).abs() < 1e-12);
        assert!((cs.data()[0] - 0.6698).abs() < 1e-4);

        let mut rng = stream(41, &["cs-rows"]);
        let f: Vec<f64> = (0..4 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cs = contextual_similarity(&Tensor::from_vec(vec![4, 3], f).unwrap()).unwrap();
        for i in 0..4 {
            let sum: f64 = cs.data()[i * 4..(i + 1) * 4].iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn inner_loss_identity_forced_and_oracle() {
        let a = Tensor::from_vec(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(inner_loss(&[a.clone()], &[a.clone()]).unwrap().item(), 0.0);

        let b = Tensor::from_vec(vec![2, 2], vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(inner_loss(&[a.clone()], &[b.clone()]).unwrap().item(), 0.25);

        let mut rng = stream(43, &["inner"]);
        let x: Vec<f64> = (0..9).map(|_| rng.random_range(0.0..1.0)).collect();
        let y: Vec<f64> = (0..9).map(|_| rng.random_range(0.0..1.0)).collect();
        let tx = Tensor::from_vec(vec![3, 3], x.clone()).unwrap();
        let ty = Tensor::from_vec(vec![3, 3], y.clone()).unwrap();
        let want: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 9.0;
        let got = inner_loss(&[tx], &[ty]).unwrap().item();
        assert!((got - want).abs() < 1e-15);

        assert!(inner_loss(&[a.clone()], &[a.clone(), b.clone()]).is_err());
        let wrong = Tensor::zeros(vec![3, 3]);
        assert!(matches!(inner_loss(&[a], &[wrong]), Err(Error::Usage(_))));
    }

    #[test]
    fn total_loss_composes_linearly() {
        let w = LossWeights {
            lambda: 1.0,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            tau: 4.0,
            tau_g: 0.1,
        };
        let ones = LossTerms {
            logit: Tensor::scalar(1.0),
            inner: Some(Tensor::scalar(1.0)),
            local: Some(Tensor::scalar(1.0)),
            global: Some(Tensor::scalar(1.0)),
        };
        let (total, bd) = total_loss(&ones, &w).unwrap();
        assert_eq!(total.item(), 4.0);
        assert_eq!(bd.total, 4.0);

        let gated = LossWeights { alpha: 0.0, beta: 0.0, gamma: 0.0, ..w };
        let terms = LossTerms {
            logit: Tensor::scalar(0.7),
            inner: None,
            local: None,
            global: None,
        };
        let (total, bd) = total_loss(&terms, &gated).unwrap();
        assert_eq!(total.item(), 0.7);
        assert_eq!(bd.inner, 0.0);

        let mut rng = stream(47, &["total"]);
        for _ in 0..20 {
            let parts: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..2.0)).collect();
            let coef: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..2.0)).collect();
            let terms = LossTerms {
                logit: Tensor::scalar(parts[0]),
                inner: Some(Tensor::scalar(parts[1])),
                local: Some(Tensor::scalar(parts[2])),
                global: Some(Tensor::scalar(parts[3])),
            };
            let w = LossWeights {
                lambda: 1.0,
                alpha: coef[0],
                beta: coef[1],
                gamma: coef[2],
                tau: 4.0,
                tau_g: 0.1,
            };
            let (total, bd) = total_loss(&terms, &w).unwrap();
            let want = parts[0] + coef[0] * parts[1] + coef[1] * parts[2] + coef[2] * parts[3];
            assert!((total.item() - want).abs() <= 1e-10);
            assert!((bd.total - (bd.logit + bd.alpha * bd.inner + bd.beta * bd.local + bd.gamma * bd.global)).abs() <= 1e-10);
        }
        let bad = LossWeights { alpha: -0.1, ..w };
        let terms = LossTerms {
            logit: Tensor::scalar(0.0),
            inner: None,
            local: None,
            global: None,
        };
        assert!(total_loss(&terms, &bad).is_err());
    }

    #[test]
    fn teacher_side_tensors_receive_no_gradient() {
        let tape = Tape::new();
        let student = Tensor::leaf(&tape, vec![2, 2], vec![0.3, -0.4, 0.8, 0.1]).unwrap();
        let teacher = Tensor::from_vec(vec![2, 2], vec![0.5, 0.5, -0.5, 0.2]).unwrap();
        let proj = Tensor::leaf(&tape, vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let sim = token_similarity(&student, &teacher, &proj).unwrap();
        let loss = global_loss(&sim, 0.1).unwrap();
        loss.backward().unwrap();
        assert!(!teacher.requires_grad());
        assert!(teacher.grad().is_none());
        assert!(student.grad().unwrap().iter().any(|&g| g != 0.0));
        assert!(proj.grad().is_some());
    }
}
