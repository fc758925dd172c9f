//! Closed-form projected ascent step for the continuous relaxation:
//! `argmin ‖A′ − (Aᵗ + η∇L_f)‖²` subject to the linearized utility
//! constraint `|∇Lᵀ(A′ − Aᵗ)| ≤ εₜ`. Only used to check the discrete
//! scoring rule's continuous counterpart.

use crate::error::{Error, Result};
use crate::linalg::dot;

pub fn pgd_step_closed_form(grad_l: &[f64], grad_lf: &[f64], a_t: &[f64], eta: f64, eps_t: f64) -> Result<Vec<f64>> {
    if grad_l.len() != grad_lf.len() || grad_l.len() != a_t.len() {
        return Err(Error::Dimension("gradient and point lengths differ".into()));
    }
    if !(eta > 0.0) {
        return Err(Error::InvalidParameter(format!("eta must be positive, got {eta}")));
    }
    if !(eps_t >= 0.0) {
        return Err(Error::InvalidParameter(format!("eps_t must be >= 0, got {eps_t}")));
    }
    let inner = dot(grad_l, grad_lf);
    let ascent: Vec<f64> = a_t.iter().zip(grad_lf).map(|(a, g)| a + eta * g).collect();
    if eta * inner.abs() <= eps_t {
        return Ok(ascent);
    }
    let norm_sq = dot(grad_l, grad_l);
    if norm_sq == 0.0 {
        return Err(Error::InvalidParameter(
            "zero utility gradient with a binding constraint".into(),
        ));
    }
    let e_t = inner.signum();
    let coef = (e_t * eps_t - eta * inner) / norm_sq;
    Ok(ascent.iter().zip(grad_l).map(|(a, g)| a + coef * g).collect())
}
