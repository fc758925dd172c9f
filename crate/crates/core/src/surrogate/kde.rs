//! Gaussian kernel density estimates of group-conditional prediction
//! distributions on the uniform grid `z_j = j/m, j = 1..=m`, and the total
//! variation loss built from them.

use crate::error::{Error, Result};

pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Kernel contributions beyond this many bandwidths are below 1e-18 of the
/// peak and are skipped.
const CUTOFF: f64 = 9.0;

/// Largest argument of the cross factor `exp(iφs²)` (about `CUTOFF·s`,
/// with `s` the grid step in bandwidths) still evaluated by polynomial.
const TAYLOR_LIMIT: f64 = 0.01;

#[inline]
pub fn gaussian_kernel(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Density of one group's predictions at `z`:
/// `(1/(h|V|)) Σ_{j∈V} K((z − ŷ_j)/h)`.
pub fn kde_density(predictions: &[f64], members: &[usize], z: f64, h: f64) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::EmptyGroup("kde group has no members".into()));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {h}")));
    }
    let sum: f64 = members.iter().map(|&j| gaussian_kernel((z - predictions[j]) / h)).sum();
    Ok(sum / (h * members.len() as f64))
}

/// Gaussian kernel evaluated on the grid `z_j = j/m` for arbitrary centers.
///
/// With `s = 1/(mh)`, `y = (J + φ)/m` and `i = j − J`, the scaled offset is
/// `x = (i − φ)s` and `exp(−x²/2) = exp(−i²s²/2) · exp(iφs²) · exp(−φ²s²/2)`.
/// The first factor comes from a table shared by every center. When `s` is
/// small the second has a tiny argument and becomes a polynomial in `is²`,
/// which also turns window sums of the kernel into prefix-sum differences.
pub(crate) struct GridKernel {
    m: usize,
    h: f64,
    s: f64,
    /// Table half-width `L`; index `L + i` holds offset `i`.
    half: usize,
    table: Vec<f64>,
    offsets: Vec<f64>,
    taylor: bool,
}

/// Degree of the polynomial for `exp(a)`; with `|a| ≤ TAYLOR_LIMIT` the
/// remainder is below 1e-18.
const TAYLOR_DEGREE: usize = 6;

#[inline]
fn exp_small(a: f64) -> f64 {
    1.0 + a * (1.0 + a * (0.5 + a * (1.0 / 6.0 + a * (1.0 / 24.0 + a * (1.0 / 120.0 + a * (1.0 / 720.0))))))
}

impl GridKernel {
    pub(crate) fn new(h: f64, m: usize) -> Self {
        let s = 1.0 / (m as f64 * h);
        let half = (CUTOFF / s).ceil() as usize + 3;
        let offsets: Vec<f64> = (0..=2 * half).map(|k| k as f64 - half as f64).collect();
        let table = offsets
            .iter()
            .map(|&i| {
                let t = i * s;
                (-0.5 * t * t).exp()
            })
            .collect();
        Self {
            m,
            h,
            s,
            half,
            table,
            offsets,
            taylor: half as f64 * s * s <= TAYLOR_LIMIT,
        }
    }

    /// Grid index range `[lo, hi]` within the cutoff of `y`, if any.
    #[inline]
    fn window(&self, y: f64) -> Option<(usize, usize)> {
        let mf = self.m as f64;
        let lo = ((y - CUTOFF * self.h) * mf).ceil().max(1.0);
        let hi = ((y + CUTOFF * self.h) * mf).floor().min(mf);
        (hi >= lo).then_some((lo as usize, hi as usize))
    }

    /// `(J, φ)` with `y·m = J + φ`.
    #[inline]
    fn split(&self, y: f64) -> (i64, f64) {
        let ym = y * self.m as f64;
        let base = ym.floor();
        (base as i64, ym - base)
    }

    #[inline]
    fn table_index(&self, j: usize, base: i64) -> usize {
        (self.half as i64 + j as i64 - base) as usize
    }

    /// Calls `f(j, x, K(x))` for every grid index `j ∈ 1..=m` within the
    /// cutoff of `y`, where `x = (j/m − y)/h`.
    #[inline]
    pub(crate) fn for_each(&self, y: f64, mut f: impl FnMut(usize, f64, f64)) {
        let Some((lo, hi)) = self.window(y) else { return };
        let (base, phi) = self.split(y);
        let s = self.s;
        let b = phi * s * s;
        let c0 = INV_SQRT_2PI * (-0.5 * phi * phi * s * s).exp();
        let start = self.table_index(lo, base);
        for (j, k) in (lo..=hi).zip(start..) {
            let i = self.offsets[k];
            let cross = if self.taylor { exp_small(i * b) } else { (i * b).exp() };
            f(j, (i - phi) * s, c0 * self.table[k] * cross);
        }
    }

    /// Adds `weight · K((z_j − y)/h)` to `out[j − 1]` over the window of `y`.
    #[inline]
    pub(crate) fn accumulate(&self, y: f64, weight: f64, out: &mut [f64]) {
        let Some((lo, hi)) = self.window(y) else { return };
        if !self.taylor {
            self.for_each(y, |j, _, kv| out[j - 1] += weight * kv);
            return;
        }
        let (base, phi) = self.split(y);
        let s = self.s;
        let b = phi * s * s;
        let c0 = weight * INV_SQRT_2PI * (-0.5 * phi * phi * s * s).exp();
        let start = self.table_index(lo, base);
        let len = hi - lo + 1;
        let table = &self.table[start..start + len];
        let offsets = &self.offsets[start..start + len];
        for ((o, &t), &i) in out[lo - 1..hi].iter_mut().zip(table).zip(offsets) {
            *o += c0 * t * exp_small(i * b);
        }
    }
}

/// Maximal runs of constant nonzero sign over grid indices `1..=m`.
struct SignRuns {
    /// `(first j, last j, sign)`, ascending.
    runs: Vec<(usize, usize, f64)>,
}

impl SignRuns {
    fn new(sign: &[f64]) -> Self {
        let mut runs: Vec<(usize, usize, f64)> = Vec::new();
        for (idx, &sg) in sign.iter().enumerate() {
            if sg == 0.0 {
                continue;
            }
            let j = idx + 1;
            match runs.last_mut() {
                Some(last) if last.2 == sg && last.1 + 1 == j => last.1 = j,
                _ => runs.push((j, j, sg)),
            }
        }
        Self { runs }
    }
}

/// Prefix sums `S_n(k) = Σ_{k' < k} T(k') (i(k') s²)ⁿ` over the kernel table
/// for `n ≤ TAYLOR_DEGREE + 1`.
struct MomentPrefix {
    sums: Vec<Vec<f64>>,
}

impl MomentPrefix {
    fn new(kernel: &GridKernel) -> Self {
        let s2 = kernel.s * kernel.s;
        let len = kernel.table.len();
        let mut sums = vec![vec![0.0; len + 1]; TAYLOR_DEGREE + 2];
        for k in 0..len {
            let u = kernel.offsets[k] * s2;
            let mut v = kernel.table[k];
            for row in sums.iter_mut() {
                row[k + 1] = row[k] + v;
                v *= u;
            }
        }
        Self { sums }
    }

    #[inline]
    fn range(&self, n: usize, k0: usize, k1: usize) -> f64 {
        self.sums[n][k1 + 1] - self.sums[n][k0]
    }
}

/// `Σ_j sign_j · x_j · K(x_j)` over the window of `y`, `x_j = (z_j − y)/h`.
fn signed_derivative_sum(
    kernel: &GridKernel,
    prefix: Option<&MomentPrefix>,
    runs: &SignRuns,
    sign: &[f64],
    y: f64,
) -> f64 {
    let Some((lo, hi)) = kernel.window(y) else { return 0.0 };
    let first = runs.runs.partition_point(|r| r.1 < lo);
    let touching = runs.runs[first..].iter().take_while(|r| r.0 <= hi);
    let n_runs = touching.clone().count();
    let Some(prefix) = prefix.filter(|_| n_runs * (TAYLOR_DEGREE + 2) * 4 < hi - lo + 1) else {
        let mut acc = 0.0;
        kernel.for_each(y, |j, x, kv| acc += sign[j - 1] * x * kv);
        return acc;
    };
    // x K = c0 Σ_n φⁿ/n! [ (1/s) T (is²)ⁿ⁺¹ − φ s T (is²)ⁿ ].
    let (base, phi) = kernel.split(y);
    let s = kernel.s;
    let c0 = INV_SQRT_2PI * (-0.5 * phi * phi * s * s).exp();
    let mut acc = 0.0;
    for &(a, b, sg) in touching {
        let k0 = kernel.table_index(a.max(lo), base);
        let k1 = kernel.table_index(b.min(hi), base);
        let mut coef = 1.0;
        let mut run = 0.0;
        for n in 0..=TAYLOR_DEGREE {
            run += coef * (prefix.range(n + 1, k0, k1) / s - phi * s * prefix.range(n, k0, k1));
            coef *= phi / (n + 1) as f64;
        }
        acc += sg * run;
    }
    c0 * acc
}

/// Grid densities of the two sensitive groups, index `j − 1` for `z_j`.
pub(crate) struct GroupDensities {
    pub p0: Vec<f64>,
    pub p1: Vec<f64>,
    pub n0: usize,
    pub n1: usize,
}

pub(crate) fn group_densities(
    predictions: &[f64],
    sensitive: &[u8],
    nodes: &[usize],
    h: f64,
    m: usize,
) -> Result<GroupDensities> {
    check_grid(h, m)?;
    let kernel = GridKernel::new(h, m);
    let mut p0 = vec![0.0; m];
    let mut p1 = vec![0.0; m];
    let (mut n0, mut n1) = (0usize, 0usize);
    for &k in nodes {
        let target = if sensitive[k] == 0 {
            n0 += 1;
            &mut p0
        } else {
            n1 += 1;
            &mut p1
        };
        kernel.accumulate(predictions[k], 1.0, target);
    }
    if n0 == 0 || n1 == 0 {
        return Err(Error::EmptyGroup(format!(
            "both sensitive groups need members (sizes {n0}, {n1})"
        )));
    }
    let s0 = 1.0 / (h * n0 as f64);
    let s1 = 1.0 / (h * n1 as f64);
    p0.iter_mut().for_each(|v| *v *= s0);
    p1.iter_mut().for_each(|v| *v *= s1);
    Ok(GroupDensities { p0, p1, n0, n1 })
}

pub(crate) fn check_grid(h: f64, m: usize) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {h}")));
    }
    if m < 2 {
        return Err(Error::InvalidParameter(format!("grid size must be >= 2, got {m}")));
    }
    Ok(())
}

/// `(1/m) Σ_j |P̂₀(j/m) − P̂₁(j/m)|` over every node.
pub fn tv_loss(predictions: &[f64], sensitive: &[u8], h: f64, m: usize) -> Result<f64> {
    let nodes: Vec<usize> = (0..predictions.len()).collect();
    tv_loss_on(predictions, sensitive, &nodes, h, m)
}

pub fn tv_loss_on(predictions: &[f64], sensitive: &[u8], nodes: &[usize], h: f64, m: usize) -> Result<f64> {
    let dens = group_densities(predictions, sensitive, nodes, h, m)?;
    Ok(dens.p0.iter().zip(&dens.p1).map(|(a, b)| (a - b).abs()).sum::<f64>() / m as f64)
}

/// TV loss and its derivative with respect to each node's prediction.
/// Ties `P̂₀ = P̂₁` take the zero subgradient.
pub fn tv_loss_with_grad(
    predictions: &[f64],
    sensitive: &[u8],
    nodes: &[usize],
    h: f64,
    m: usize,
) -> Result<(f64, Vec<f64>)> {
    let dens = group_densities(predictions, sensitive, nodes, h, m)?;
    let mf = m as f64;
    let mut tv = 0.0;
    let sign: Vec<f64> = dens
        .p0
        .iter()
        .zip(&dens.p1)
        .map(|(a, b)| {
            let diff = a - b;
            tv += diff.abs();
            if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect();
    tv /= mf;

    // ∂P̂_g(z)/∂ŷ_k = x K(x) / (h² n_g) with x = (z − ŷ_k)/h.
    let kernel = GridKernel::new(h, m);
    let prefix = kernel.taylor.then(|| MomentPrefix::new(&kernel));
    let runs = SignRuns::new(&sign);
    let mut grad = vec![0.0; predictions.len()];
    for &k in nodes {
        let (group_sign, ng) = if sensitive[k] == 0 {
            (1.0, dens.n0)
        } else {
            (-1.0, dens.n1)
        };
        let acc = signed_derivative_sum(&kernel, prefix.as_ref(), &runs, &sign, predictions[k]);
        grad[k] = group_sign * acc / (mf * h * h * ng as f64);
    }
    Ok((tv, grad))
}
