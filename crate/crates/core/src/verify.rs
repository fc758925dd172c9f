//! Numerical checks of the bounds behind the surrogate loss and the attack's
//! update rule: random inequality sweeps, a projection-oracle comparison for
//! the closed-form PGD step, and a witness search showing that the
//! best-gradient flip can move a smooth objective the wrong way.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{dot, sigmoid};
use crate::metrics::{mutual_information_kde, wasserstein1_empirical};
use crate::pgd::pgd_step_closed_form;
use crate::rng;
use crate::surrogate::group_densities;

/// Slack allowed on every inequality, covering grid discretization.
pub const BOUND_TOLERANCE: f64 = 1e-3;

/// Grid statistics of one prediction/sensitive configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSample {
    pub tv: f64,
    /// `|∫_{z ≥ 1/2} (P₀ − P₁)|` on the grid.
    pub delta_dp: f64,
    /// `∫ |F₀ − F₁|` of the smoothed conditionals on the grid.
    pub wasserstein: f64,
    /// Wasserstein-1 between the raw prediction samples. Not bounded by the
    /// grid TV in general: the two are distances between different
    /// distributions. Reported, not asserted.
    pub wasserstein_samples: f64,
    pub mutual_information: f64,
    /// `min_z P_Ŷ(z) ≥ Pr(S=0)·Pr(S=1)`.
    pub density_condition: bool,
    /// `max_z |P₀(z) − P₁(z)|`; the MI bound's proof also needs this ≤ 1.
    pub max_density_gap: f64,
    /// `∫ (P₀P₁ / (P₀P̂₀ + P₁P̂₁))²` with `P_i` the group priors.
    pub sqrt_integral: f64,
}

/// Grid statistics from soft predictions in `[0, 1]`.
pub fn bound_sample(preds: &[f64], sensitive: &[u8], h: f64, m: usize) -> Result<BoundSample> {
    let nodes: Vec<usize> = (0..preds.len()).collect();
    let dens = group_densities(preds, sensitive, &nodes, h, m)?;
    let mf = m as f64;
    let n = (dens.n0 + dens.n1) as f64;
    let (w0, w1) = (dens.n0 as f64 / n, dens.n1 as f64 / n);

    let mut tv = 0.0;
    let mut upper = 0.0;
    let mut w = 0.0;
    let mut cdf_gap = 0.0;
    let mut min_marginal = f64::INFINITY;
    let mut max_gap: f64 = 0.0;
    let mut integral = 0.0;
    for (j, (&p0, &p1)) in dens.p0.iter().zip(&dens.p1).enumerate() {
        let diff = p0 - p1;
        tv += diff.abs();
        if (j + 1) as f64 / mf >= 0.5 {
            upper += diff;
        }
        cdf_gap += diff / mf;
        w += cdf_gap.abs();
        max_gap = max_gap.max(diff.abs());
        let marginal = w0 * p0 + w1 * p1;
        min_marginal = min_marginal.min(marginal);
        integral += if marginal > 0.0 {
            (w0 * w1 / marginal).powi(2)
        } else {
            f64::INFINITY
        };
    }

    let g0: Vec<f64> = nodes
        .iter()
        .filter(|&&i| sensitive[i] == 0)
        .map(|&i| preds[i])
        .collect();
    let g1: Vec<f64> = nodes
        .iter()
        .filter(|&&i| sensitive[i] != 0)
        .map(|&i| preds[i])
        .collect();
    Ok(BoundSample {
        tv: tv / mf,
        delta_dp: (upper / mf).abs(),
        wasserstein: w / mf,
        wasserstein_samples: wasserstein1_empirical(&g0, &g1)?,
        mutual_information: mutual_information_kde(preds, sensitive, h, m)?,
        density_condition: min_marginal >= w0 * w1,
        max_density_gap: max_gap,
        sqrt_integral: integral / mf,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundSweep {
    pub trials: usize,
    pub dp_pass: usize,
    pub w_pass: usize,
    pub w_samples_pass: usize,
    /// Trials meeting the density condition.
    pub mi_condition: usize,
    pub mi_pass: usize,
    /// Trials meeting the density condition and `max |P₀ − P₁| ≤ 1`.
    pub mi_full_condition: usize,
    pub mi_full_pass: usize,
    pub sqrt_condition: usize,
    pub sqrt_pass: usize,
    /// Largest `lhs − rhs` seen per check (negative means slack).
    pub worst_dp_margin: f64,
    pub worst_w_margin: f64,
    pub worst_w_samples_margin: f64,
    pub worst_mi_margin: f64,
    pub worst_mi_full_margin: f64,
    pub worst_sqrt_margin: f64,
}

impl BoundSweep {
    pub fn record(&mut self, s: &BoundSample) {
        if self.trials == 0 {
            self.worst_dp_margin = f64::NEG_INFINITY;
            self.worst_w_margin = f64::NEG_INFINITY;
            self.worst_w_samples_margin = f64::NEG_INFINITY;
            self.worst_mi_margin = f64::NEG_INFINITY;
            self.worst_mi_full_margin = f64::NEG_INFINITY;
            self.worst_sqrt_margin = f64::NEG_INFINITY;
        }
        self.trials += 1;
        let check = |lhs: f64, rhs: f64, pass: &mut usize, worst: &mut f64| {
            *worst = worst.max(lhs - rhs);
            if lhs <= rhs + BOUND_TOLERANCE {
                *pass += 1;
            }
        };
        check(s.delta_dp, s.tv, &mut self.dp_pass, &mut self.worst_dp_margin);
        check(s.wasserstein, s.tv, &mut self.w_pass, &mut self.worst_w_margin);
        check(
            s.wasserstein_samples,
            s.tv,
            &mut self.w_samples_pass,
            &mut self.worst_w_samples_margin,
        );
        if s.density_condition {
            self.mi_condition += 1;
            check(s.mutual_information, s.tv, &mut self.mi_pass, &mut self.worst_mi_margin);
            if s.max_density_gap <= 1.0 {
                self.mi_full_condition += 1;
                check(
                    s.mutual_information,
                    s.tv,
                    &mut self.mi_full_pass,
                    &mut self.worst_mi_full_margin,
                );
            }
        }
        if s.sqrt_integral <= 1.0 {
            self.sqrt_condition += 1;
            check(
                s.mutual_information,
                s.tv.sqrt(),
                &mut self.sqrt_pass,
                &mut self.worst_sqrt_margin,
            );
        }
    }
}

/// Random configuration: two groups of sigmoid-transformed Gaussians with
/// independently drawn location and spread, and a bandwidth around the
/// default. Much wider kernels push a large share of the mass off `[0, 1]`,
/// and the grid TV then stops bounding the sample Wasserstein distance.
pub fn random_configuration(r: &mut rng::Rng) -> (Vec<f64>, Vec<u8>, f64) {
    let n = r.gen_range(40..=400);
    let frac1 = r.gen_range(0.2..0.8);
    let shared = r.gen_bool(0.15);
    let params: Vec<(f64, f64)> = (0..2)
        .map(|_| (r.gen_range(-2.5..2.5), r.gen_range(0.2..2.0)))
        .collect();
    let mut sensitive: Vec<u8> = (0..n).map(|_| u8::from(r.gen::<f64>() < frac1)).collect();
    sensitive[0] = 0;
    sensitive[1] = 1;
    let preds = sensitive
        .iter()
        .map(|&s| {
            let (mu, sd) = if shared { params[0] } else { params[usize::from(s)] };
            let x: f64 = Normal::new(mu, sd).expect("positive spread").sample(r);
            sigmoid(x)
        })
        .collect();
    let h = r.gen_range(0.03..0.2);
    (preds, sensitive, h)
}

pub fn bound_sweep(seed: u64, trials: usize, grid: usize) -> Result<BoundSweep> {
    let mut r = rng::stream(seed, "verify-bounds");
    let mut sweep = BoundSweep::default();
    for _ in 0..trials {
        let (preds, sens, h) = random_configuration(&mut r);
        sweep.record(&bound_sample(&preds, &sens, h, grid)?);
    }
    Ok(sweep)
}

/// Euclidean projection of `y` onto `{x : |gᵀ(x − a)| ≤ ε}` by Dykstra's
/// alternating projections onto the two bounding halfspaces.
pub fn project_slab_dykstra(y: &[f64], g: &[f64], a: &[f64], eps: f64, max_iter: usize) -> Vec<f64> {
    let gg = dot(g, g);
    let ga = dot(g, a);
    let mut x = y.to_vec();
    let mut p = vec![0.0; y.len()];
    let mut q = vec![0.0; y.len()];
    if gg == 0.0 {
        return x;
    }
    for _ in 0..max_iter {
        // Halfspace gᵀx ≤ gᵀa + ε.
        let u: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + b).collect();
        let excess = (dot(g, &u) - ga - eps).max(0.0);
        let next: Vec<f64> = u.iter().zip(g).map(|(ui, gi)| ui - excess / gg * gi).collect();
        p = u.iter().zip(&next).map(|(a, b)| a - b).collect();
        // Halfspace gᵀx ≥ gᵀa − ε.
        let v: Vec<f64> = next.iter().zip(&q).map(|(a, b)| a + b).collect();
        let deficit = (ga - eps - dot(g, &v)).max(0.0);
        let out: Vec<f64> = v.iter().zip(g).map(|(vi, gi)| vi + deficit / gg * gi).collect();
        q = v.iter().zip(&out).map(|(a, b)| a - b).collect();
        let moved = out.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = out;
        if moved < 1e-15 {
            break;
        }
    }
    x
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProjectionCheck {
    pub trials: usize,
    pub max_error: f64,
    /// Largest `|∇Lᵀ(A′ − Aᵗ)| − εₜ` over trials (≤ 0 when satisfied).
    pub max_constraint_violation: f64,
    pub binding_trials: usize,
}

pub fn projection_check(seed: u64, trials: usize, dim: usize) -> Result<ProjectionCheck> {
    let mut r = rng::stream(seed, "verify-projection");
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = ProjectionCheck {
        trials,
        max_constraint_violation: f64::NEG_INFINITY,
        ..Default::default()
    };
    for _ in 0..trials {
        let gl: Vec<f64> = (0..dim).map(|_| normal.sample(&mut r)).collect();
        let gf: Vec<f64> = (0..dim).map(|_| normal.sample(&mut r)).collect();
        let a: Vec<f64> = (0..dim).map(|_| r.gen_range(0.0..1.0)).collect();
        let eta = r.gen_range(0.01..1.0);
        let eps = r.gen_range(0.0..1.0) * eta * dot(&gl, &gf).abs() * 1.5;
        let closed = pgd_step_closed_form(&gl, &gf, &a, eta, eps)?;
        let target: Vec<f64> = a.iter().zip(&gf).map(|(ai, gi)| ai + eta * gi).collect();
        let oracle = project_slab_dykstra(&target, &gl, &a, eps, 10_000);
        let err = closed
            .iter()
            .zip(&oracle)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        out.max_error = out.max_error.max(err);
        let step: Vec<f64> = closed.iter().zip(&a).map(|(x, y)| x - y).collect();
        out.max_constraint_violation = out.max_constraint_violation.max(dot(&gl, &step).abs() - eps);
        if eta * dot(&gl, &gf).abs() > eps {
            out.binding_trials += 1;
        }
    }
    Ok(out)
}

/// Dense small instance for the witness search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseInstance {
    /// Row-major `n × n` symmetric 0/1 matrix.
    pub adjacency: Vec<f64>,
    pub features: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
    pub sensitive: Vec<u8>,
}

impl DenseInstance {
    pub fn n(&self) -> usize {
        self.sensitive.len()
    }

    /// Signed soft parity gap `mean σ(Zθ) | s=0 − mean σ(Zθ) | s=1` for a
    /// real-valued symmetric `a`.
    pub fn objective(&self, a: &[f64]) -> f64 {
        let n = self.n();
        let d = self.theta.len();
        let ahat = |i: usize, j: usize| a[i * n + j] + f64::from(u8::from(i == j));
        let deg: Vec<f64> = (0..n).map(|i| (0..n).map(|j| ahat(i, j)).sum()).collect();
        let ax: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..d)
                    .map(|k| (0..n).map(|j| ahat(i, j) * self.features[j][k]).sum())
                    .collect()
            })
            .collect();
        let mut sum = [0.0; 2];
        let mut cnt = [0.0; 2];
        for i in 0..n {
            let z: Vec<f64> = (0..d)
                .map(|k| (0..n).map(|j| ahat(i, j) * ax[j][k] / (deg[i] * deg[j])).sum())
                .collect();
            let s = usize::from(self.sensitive[i]);
            sum[s] += sigmoid(dot(&z, &self.theta));
            cnt[s] += 1.0;
        }
        sum[0] / cnt[0] - sum[1] / cnt[1]
    }

    fn flipped(&self, u: usize, v: usize) -> Vec<f64> {
        let n = self.n();
        let mut a = self.adjacency.clone();
        a[u * n + v] = 1.0 - a[u * n + v];
        a[v * n + u] = a[u * n + v];
        a
    }

    /// Symmetric central-difference derivative in `A_uv = A_vu`.
    pub fn gradient(&self, u: usize, v: usize) -> f64 {
        let n = self.n();
        let step = 1e-6;
        let mut plus = self.adjacency.clone();
        let mut minus = self.adjacency.clone();
        for (x, sgn) in [(&mut plus, 1.0), (&mut minus, -1.0)] {
            x[u * n + v] += sgn * step;
            x[v * n + u] += sgn * step;
        }
        (self.objective(&plus) - self.objective(&minus)) / (2.0 * step)
    }
}

/// A case where the first-order choice loses and the exhaustive choice gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub instance: DenseInstance,
    pub gradient_flip: (usize, usize),
    pub gradient_change: f64,
    pub exhaustive_flip: (usize, usize),
    pub exhaustive_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessSearch {
    pub instances_searched: usize,
    pub witness: Option<Witness>,
}

pub fn witness_search(seed: u64, max_instances: usize) -> WitnessSearch {
    let mut r = rng::stream(seed, "verify-witness");
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    for searched in 1..=max_instances {
        let n = r.gen_range(5..=7);
        let d = 2;
        let density = r.gen_range(0.2..0.6);
        let mut adjacency = vec![0.0; n * n];
        for u in 0..n {
            for v in u + 1..n {
                if r.gen::<f64>() < density {
                    adjacency[u * n + v] = 1.0;
                    adjacency[v * n + u] = 1.0;
                }
            }
        }
        let scale = r.gen_range(1.0..6.0);
        let features = (0..n)
            .map(|_| (0..d).map(|_| scale * normal.sample(&mut r)).collect())
            .collect();
        let theta = (0..d).map(|_| normal.sample(&mut r)).collect();
        let mut sensitive: Vec<u8> = (0..n).map(|_| u8::from(r.gen_bool(0.5))).collect();
        sensitive[0] = 0;
        sensitive[1] = 1;
        let inst = DenseInstance {
            adjacency,
            features,
            theta,
            sensitive,
        };

        let base = inst.objective(&inst.adjacency);
        let mut best_grad: Option<((usize, usize), f64)> = None;
        let mut best_exact: Option<((usize, usize), f64)> = None;
        for u in 0..n {
            for v in u + 1..n {
                let direction = 1.0 - 2.0 * inst.adjacency[u * n + v];
                let predicted = inst.gradient(u, v) * direction;
                if best_grad.map_or(true, |(_, b)| predicted > b) {
                    best_grad = Some(((u, v), predicted));
                }
                let change = inst.objective(&inst.flipped(u, v)) - base;
                if best_exact.map_or(true, |(_, b)| change > b) {
                    best_exact = Some(((u, v), change));
                }
            }
        }
        let ((gu, gv), _) = best_grad.expect("n >= 2");
        let ((eu, ev), exact_change) = best_exact.expect("n >= 2");
        let grad_change = inst.objective(&inst.flipped(gu, gv)) - base;
        if grad_change < 0.0 && exact_change > 0.0 {
            return WitnessSearch {
                instances_searched: searched,
                witness: Some(Witness {
                    instance: inst,
                    gradient_flip: (gu, gv),
                    gradient_change: grad_change,
                    exhaustive_flip: (eu, ev),
                    exhaustive_change: exact_change,
                }),
            };
        }
    }
    WitnessSearch {
        instances_searched: max_instances,
        witness: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub seed: u64,
    pub bounds: BoundSweep,
    pub projection: ProjectionCheck,
    pub witness: WitnessSearch,
}

impl TheoremReport {
    /// Every check that is expected to hold unconditionally did hold.
    pub fn passed(&self) -> bool {
        let b = &self.bounds;
        b.dp_pass == b.trials
            && b.w_pass == b.trials
            && b.mi_full_pass == b.mi_full_condition
            && b.sqrt_pass == b.sqrt_condition
            && self.projection.max_error <= 1e-6
            && self.projection.max_constraint_violation <= 1e-9
            && self.witness.witness.is_some()
    }
}

pub fn verify_theorems(seed: u64, trials: usize) -> Result<TheoremReport> {
    Ok(TheoremReport {
        seed,
        bounds: bound_sweep(seed, trials, 2000)?,
        projection: projection_check(seed, trials.max(50), 10)?,
        witness: witness_search(seed, 20 * trials.max(10)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_groups_have_zero_gaps() {
        let preds = [0.2, 0.7, 0.2, 0.7];
        let s = bound_sample(&preds, &[0, 0, 1, 1], 0.1, 1000).unwrap();
        assert!(s.tv < 1e-9 && s.delta_dp < 1e-9 && s.wasserstein < 1e-9);
        assert!(s.mutual_information.abs() < 1e-9);
    }

    #[test]
    fn dykstra_matches_simple_slab() {
        // Projection onto |x₀| ≤ 1 from (3, 2) is (1, 2).
        let x = project_slab_dykstra(&[3.0, 2.0], &[1.0, 0.0], &[0.0, 0.0], 1.0, 100);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
    }
}
