//! Central finite-difference gradient checking.
//!
//! The independent oracle for every backward rule in this crate: perturb each
//! parameter coordinate by ±h, difference the loss, and compare against the
//! gradient the tape produced.

use crate::error::{Error, Result};

use super::{Tape, Tensor};

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max over coordinates of |g_fd − g_ad| / max(1e-8, |g_fd| + |g_ad|)
    pub max_rel_error: f64,
    /// (parameter index, coordinate) where the maximum occurred
    pub worst: (usize, usize),
    pub coords_checked: usize,
}

/// Relative disagreement between an analytic and a finite-difference gradient.
pub fn max_rel_error(g_ad: &[f64], g_fd: &[f64]) -> f64 {
    debug_assert_eq!(g_ad.len(), g_fd.len());
    g_ad.iter()
        .zip(g_fd)
        .map(|(a, f)| (a - f).abs() / f64::max(1e-8, a.abs() + f.abs()))
        .fold(0.0, f64::max)
}

/// Check the tape gradient of `f` at `params` against central differences.
///
/// `f` must be deterministic given its parameter tensors (freeze any RNG and
/// any data-dependent discrete structure outside the closure). It is called
/// once on tape-bound leaves for the analytic gradients and `2·Σ numel`
/// further times on perturbed constant inputs for the differences.
pub fn grad_check<F>(params: &[(Vec<usize>, Vec<f64>)], h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    if h <= 0.0 {
        return Err(Error::config(format!("grad_check: step h must be positive, got {h}")));
    }

    // Analytic pass.
    let tape = Tape::new();
    let leaves: Vec<Tensor> = params
        .iter()
        .map(|(shape, value)| Tensor::leaf(&tape, shape.clone(), value.clone()))
        .collect::<Result<_>>()?;
    let loss = f(&leaves)?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| l.grad().expect("leaf gradient after backward"))
        .collect();

    let eval = |values: &[Vec<f64>]| -> Result<f64> {
        let consts: Vec<Tensor> = params
            .iter()
            .zip(values)
            .map(|((shape, _), v)| Tensor::from_vec(shape.clone(), v.clone()))
            .collect::<Result<_>>()?;
        Ok(f(&consts)?.item())
    };

    let mut values: Vec<Vec<f64>> = params.iter().map(|(_, v)| v.clone()).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        coords_checked: 0,
    };
    for pi in 0..params.len() {
        for ci in 0..values[pi].len() {
            let orig = values[pi][ci];
            values[pi][ci] = orig + h;
            let plus = eval(&values)?;
            values[pi][ci] = orig - h;
            let minus = eval(&values)?;
            values[pi][ci] = orig;

            let g_fd = (plus - minus) / (2.0 * h);
            let g_ad = analytic[pi][ci];
            let rel = (g_fd - g_ad).abs() / f64::max(1e-8, g_fd.abs() + g_ad.abs());
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (pi, ci);
            }
            report.coords_checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_checks_to_rounding_noise() {
        let params = vec![(vec![1, 3], vec![0.3, -1.2, 2.0])];
        let report = grad_check(&params, 1e-5, |p| {
            // f = Σ xᵢ² + Σ xᵢ
            p[0].mul(&p[0])?.sum().add(&p[0].sum())
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-10, "rel error {}", report.max_rel_error);
        assert_eq!(report.coords_checked, 3);
    }

    #[test]
    fn softmax_kl_chain_checks() {
        let params = vec![
            (vec![2, 4], vec![0.1, -0.4, 0.9, 0.2, -0.7, 0.3, 0.5, -0.1]),
            (vec![2, 4], vec![0.6, 0.2, -0.3, 0.8, 0.1, -0.5, 0.4, 0.0]),
        ];
        let report = grad_check(&params, 1e-5, |p| {
            let sp = p[0].softmax_rows()?;
            let sq = p[1].softmax_rows()?;
            Tensor::kl_rows(&sp, &sq, 1e-12)
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-6, "rel error {}", report.max_rel_error);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let g_fd = vec![1.0, 2.0, 3.0];
        let mut g_ad = g_fd.clone();
        g_ad[1] += 1e-2;
        assert!(max_rel_error(&g_ad, &g_fd) > 1e-4);
        assert!(max_rel_error(&g_fd, &g_fd) == 0.0);
    }

    #[test]
    fn rejects_nonpositive_step() {
        let params = vec![(vec![1], vec![1.0])];
        assert!(grad_check(&params, 0.0, |p| Ok(p[0].sum())).is_err());
    }
}
