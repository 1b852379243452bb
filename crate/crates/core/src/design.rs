//! G-optimal experimental design over a finite arm set.
//!
//! Designs are computed in the span of the arms: the arms are first
//! projected onto an orthonormal basis of their span, and the design lives
//! in that reduced space. D-optimality (maximal `log det V(pi)`) and
//! G-optimality coincide by the Kiefer-Wolfowitz equivalence theorem, and
//! the returned design carries the certificate
//! `max_i b_i^T V(pi)^{-1} b_i <= d_r (1 + 2 eps)`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::instance::{ArmId, Instance};
use crate::linalg::{self, RANK_TOL};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignParams {
    /// Kiefer-Wolfowitz optimality gap.
    pub eps_kw: f64,
    /// Frank-Wolfe iteration cap; `None` means `10 * d * |arms|`.
    pub max_iters: Option<usize>,
}

impl Default for DesignParams {
    fn default() -> Self {
        Self {
            eps_kw: 1e-2,
            max_iters: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    /// Probability of each input arm, by position.
    pub weights: Vec<f64>,
    /// Orthonormal `d x d_r` basis of the arms' span.
    pub basis: DMatrix<f64>,
    /// `basis^T a(i)` for every input arm.
    pub reduced: Vec<DVector<f64>>,
    /// `V(pi) = sum_i pi(i) b(i) b(i)^T`.
    pub info_matrix: DMatrix<f64>,
    /// `max_i ||b(i)||^2_{V(pi)^{-1}}`.
    pub g_value: f64,
    pub iterations: usize,
}

impl Design {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn support(&self) -> Vec<usize> {
        support(&self.weights)
    }

    /// Largest support the pruning step guarantees.
    pub fn support_bound(&self) -> usize {
        let p = self.dim();
        p * (p + 1) / 2
    }
}

fn support(weights: &[f64]) -> Vec<usize> {
    weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// Orthonormal basis of `span(arms)` and the arms' coordinates in it.
///
/// A full-rank set gets the identity basis; otherwise the left singular
/// vectors above the rank tolerance are used.
pub fn orthonormal_basis(arms: &[DVector<f64>]) -> (DMatrix<f64>, Vec<DVector<f64>>) {
    let d = arms.first().map_or(0, |a| a.len());
    let a = linalg::column_matrix(arms);
    let svd = a.svd(true, false);
    let max = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let keep: Vec<usize> = if max == 0.0 {
        vec![]
    } else {
        (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > RANK_TOL * max)
            .collect()
    };
    let basis = if keep.len() == d {
        DMatrix::identity(d, d)
    } else {
        let u = svd.u.expect("left singular vectors requested");
        DMatrix::from_fn(d, keep.len(), |i, j| u[(i, keep[j])])
    };
    let reduced = arms.iter().map(|a| basis.tr_mul(a)).collect();
    (basis, reduced)
}

pub fn information_matrix(reduced: &[DVector<f64>], weights: &[f64]) -> DMatrix<f64> {
    let p = reduced.first().map_or(0, |b| b.len());
    let mut v = DMatrix::zeros(p, p);
    for (b, &w) in reduced.iter().zip(weights) {
        if w > 0.0 {
            v.ger(w, b, b, 1.0);
        }
    }
    v
}

/// `b_i^T V^{-1} b_i` for every arm, or `None` when `V` is singular.
pub fn variances(reduced: &[DVector<f64>], weights: &[f64]) -> Option<Vec<f64>> {
    let v = information_matrix(reduced, weights);
    let chol = linalg::cholesky(&v)?;
    Some(reduced.iter().map(|b| linalg::inverse_quadratic(&chol, b)).collect())
}

fn max_variance(reduced: &[DVector<f64>], weights: &[f64]) -> f64 {
    variances(reduced, weights).map_or(f64::INFINITY, |g| g.into_iter().fold(0.0, f64::max))
}

/// Indices of `p` arms spanning the reduced space, chosen greedily by
/// largest residual norm (ties to the lower index).
fn greedy_spanning_subset(reduced: &[DVector<f64>], p: usize) -> Vec<usize> {
    let mut chosen = Vec::with_capacity(p);
    let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(p);
    let scale = reduced.iter().map(|b| b.norm()).fold(0.0, f64::max);
    while chosen.len() < p {
        let mut best: Option<(usize, f64, DVector<f64>)> = None;
        for (i, b) in reduced.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            let mut r = b.clone();
            for q in &ortho {
                r.axpy(-q.dot(&r), q, 1.0);
            }
            let n = r.norm();
            if best.as_ref().is_none_or(|(_, bn, _)| n > *bn) {
                best = Some((i, n, r));
            }
        }
        match best {
            Some((i, n, r)) if n > RANK_TOL * scale => {
                chosen.push(i);
                ortho.push(r / n);
            }
            _ => break,
        }
    }
    chosen
}

struct FwOutcome {
    iterations: usize,
    converged: bool,
}

/// Frank-Wolfe with away steps on `log det V(w)`, using the closed-form line
/// search `gamma = (g_j - p) / (p (g_j - 1))`. Only arms flagged in
/// `allowed` may gain weight; the stopping rule checks every arm.
fn frank_wolfe(
    reduced: &[DVector<f64>],
    w: &mut [f64],
    allowed: &[bool],
    target: f64,
    max_iters: usize,
) -> FwOutcome {
    let p = reduced[0].len() as f64;
    for it in 0..max_iters {
        let Some(g) = variances(reduced, w) else {
            return FwOutcome {
                iterations: it,
                converged: false,
            };
        };
        if g.iter().cloned().fold(0.0, f64::max) <= target {
            return FwOutcome {
                iterations: it,
                converged: true,
            };
        }
        let mut plus: Option<usize> = None;
        let mut minus: Option<usize> = None;
        for i in 0..g.len() {
            if !allowed[i] {
                continue;
            }
            if plus.is_none_or(|j| g[i] > g[j]) {
                plus = Some(i);
            }
            if w[i] > 0.0 && minus.is_none_or(|j| g[i] < g[j]) {
                minus = Some(i);
            }
        }
        let (Some(jp), Some(jm)) = (plus, minus) else {
            break;
        };
        let fwd_gap = g[jp] - p;
        let away_gap = if w[jm] < 1.0 { p - g[jm] } else { 0.0 };
        if fwd_gap.max(away_gap) <= 1e-12 * p {
            // optimal over the allowed face
            break;
        }
        if fwd_gap >= away_gap {
            let gamma = (fwd_gap / (p * (g[jp] - 1.0))).clamp(0.0, 1.0);
            w.iter_mut().for_each(|x| *x *= 1.0 - gamma);
            w[jp] += gamma;
        } else {
            let wj = w[jm];
            let floor = -wj / (1.0 - wj);
            let gj = g[jm];
            let gamma = if gj <= 1.0 {
                floor
            } else {
                ((gj - p) / (p * (gj - 1.0))).max(floor)
            };
            if gamma <= floor {
                w[jm] = 0.0;
                w.iter_mut().for_each(|x| *x /= 1.0 - wj);
            } else {
                w.iter_mut().for_each(|x| *x *= 1.0 - gamma);
                w[jm] += gamma;
            }
        }
    }
    let converged = max_variance(reduced, w) <= target;
    FwOutcome {
        iterations: max_iters,
        converged,
    }
}

fn normalize(w: &mut [f64]) {
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
}

/// Symmetric-vectorised `b b^T` (upper triangle, off-diagonals scaled by
/// `sqrt 2`).
fn svec_outer(b: &DVector<f64>) -> Vec<f64> {
    let p = b.len();
    let mut out = Vec::with_capacity(p * (p + 1) / 2);
    for i in 0..p {
        out.push(b[i] * b[i]);
        for j in (i + 1)..p {
            out.push(std::f64::consts::SQRT_2 * b[i] * b[j]);
        }
    }
    out
}

/// Carathéodory reduction of a design to at most `p(p+1)/2` support points.
///
/// Each step moves along a null direction `z` of the matrices `b b^T` on
/// the support, so the unnormalised information matrix is unchanged. The
/// sign of `z` is chosen with `sum z >= 0`, so renormalising can only
/// shrink every variance `b^T V^{-1} b`.
pub fn caratheodory(reduced: &[DVector<f64>], weights: &[f64]) -> Vec<f64> {
    let mut w = weights.to_vec();
    let p = reduced.first().map_or(0, |b| b.len());
    let n_sym = p * (p + 1) / 2;
    loop {
        let supp = support(&w);
        if supp.len() <= n_sym {
            break;
        }
        let cols = &supp[..=n_sym];
        // (n_sym + 1) x (n_sym + 1), last row zero
        let mut a = DMatrix::zeros(n_sym + 1, n_sym + 1);
        for (c, &i) in cols.iter().enumerate() {
            for (r, x) in svec_outer(&reduced[i]).into_iter().enumerate() {
                a[(r, c)] = x;
            }
        }
        let svd = a.svd(false, true);
        let v_t = svd.v_t.expect("right singular vectors requested");
        let (k_min, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty");
        let mut z: Vec<f64> = v_t.row(k_min).iter().copied().collect();
        if z.iter().sum::<f64>() < 0.0 {
            z.iter_mut().for_each(|x| *x = -*x);
        }
        let (r_hit, t) = z
            .iter()
            .enumerate()
            .filter(|(_, &zi)| zi > 0.0)
            .map(|(c, &zi)| (c, w[cols[c]] / zi))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("null direction has mixed signs");
        for (c, &i) in cols.iter().enumerate() {
            w[i] = (w[i] - t * z[c]).max(0.0);
        }
        w[cols[r_hit]] = 0.0;
    }
    normalize(&mut w);
    w
}

/// Number of Frank-Wolfe steps allowed after pruning.
const REFINE_ITERS: usize = 200;

pub fn g_optimal(arms: &[DVector<f64>], params: &DesignParams) -> Result<Design> {
    if arms.is_empty() {
        return Err(Error::InvalidArgument("design over an empty arm set".into()));
    }
    if !(params.eps_kw > 0.0) {
        return Err(Error::InvalidArgument(format!("eps_kw = {}", params.eps_kw)));
    }
    let (basis, reduced) = orthonormal_basis(arms);
    let p = basis.ncols();
    if p == 0 {
        return Err(Error::InvalidArgument("arms span only the origin".into()));
    }
    let n = arms.len();
    let pf = p as f64;
    let max_iters = params.max_iters.unwrap_or(10 * arms[0].len() * n);
    let build = |weights: Vec<f64>, iterations: usize| -> Design {
        let info_matrix = information_matrix(&reduced, &weights);
        let g_value = max_variance(&reduced, &weights);
        Design {
            weights,
            basis: basis.clone(),
            reduced: reduced.clone(),
            info_matrix,
            g_value,
            iterations,
        }
    };

    let mut w = vec![0.0; n];
    let init = greedy_spanning_subset(&reduced, p);
    for &i in &init {
        w[i] = 1.0 / init.len() as f64;
    }
    let everything = vec![true; n];
    let bound = pf * (1.0 + params.eps_kw);
    let relaxed = pf * (1.0 + 2.0 * params.eps_kw);
    let fw = frank_wolfe(&reduced, &mut w, &everything, bound, max_iters);
    if !fw.converged {
        let best = build(w, fw.iterations);
        return Err(Error::NoConvergence {
            max_iters,
            g_value: best.g_value,
            bound,
            best: Box::new(best),
        });
    }
    let mut iterations = fw.iterations;

    let threshold = 1.0 / (4.0 * pf * pf * n as f64);
    let mut pruned: Vec<f64> = w.iter().map(|&x| if x < threshold { 0.0 } else { x }).collect();
    normalize(&mut pruned);
    if max_variance(&reduced, &pruned) > relaxed {
        let allowed: Vec<bool> = pruned.iter().map(|&x| x > 0.0).collect();
        let refine = frank_wolfe(&reduced, &mut pruned, &allowed, relaxed, REFINE_ITERS);
        iterations += refine.iterations;
        if !refine.converged {
            pruned = w;
        }
    }
    if support(&pruned).len() > p * (p + 1) / 2 {
        pruned = caratheodory(&reduced, &pruned);
    }
    let design = build(pruned, iterations);
    if design.g_value > relaxed {
        return Err(Error::NoConvergence {
            max_iters,
            g_value: design.g_value,
            bound: relaxed,
            best: Box::new(design),
        });
    }
    Ok(design)
}

// ---------------------------------------------------------------------------
// Allocation and budget

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PullAllocation {
    /// Pulls per input arm, by position.
    pub counts: Vec<usize>,
    pub total: usize,
}

/// `ceil(m x)` guarded against `m x` landing a few ulps above an integer.
fn ceil_pulls(m: usize, w: f64) -> usize {
    let x = m as f64 * w;
    (x - 1e-9 * x.max(1.0)).ceil().max(1.0) as usize
}

/// `T(i) = ceil(m pi(i))` on the support, zero elsewhere.
pub fn allocate(weights: &[f64], m: usize) -> PullAllocation {
    let counts: Vec<usize> = weights
        .iter()
        .map(|&w| if w > 0.0 { ceil_pulls(m, w) } else { 0 })
        .collect();
    let total = counts.iter().sum();
    PullAllocation { counts, total }
}

/// Per-round pull budget `m = floor((T - min(K, d(d+1)/2) - d + 2) / log d)`.
pub fn budget_m(t: usize, k: usize, d: usize) -> Result<usize> {
    if d < 2 || !linalg::is_power_of_two(d) {
        return Err(Error::InvalidArgument(format!("d = {d} is not a power of two >= 2")));
    }
    let first_round = k.min(d * (d + 1) / 2) as i64;
    let numerator = t as i64 - first_round - d as i64 + 2;
    let m = numerator.div_euclid(linalg::log2_exact(d) as i64);
    if m < 1 {
        return Err(Error::BudgetTooSmall { t, m });
    }
    Ok(m as usize)
}

// ---------------------------------------------------------------------------
// Memoised designs

/// Thread-safe memo of designs keyed by the exact arm vectors. Designs are
/// deterministic functions of their input, so sharing them across trials
/// changes no output.
#[derive(Debug, Default)]
pub struct DesignOracle {
    params: DesignParams,
    cache: Mutex<HashMap<Vec<u64>, Arc<Design>>>,
}

impl DesignOracle {
    pub fn new(params: DesignParams) -> Self {
        Self {
            params,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn params(&self) -> &DesignParams {
        &self.params
    }

    pub fn design(&self, arms: &[DVector<f64>]) -> Result<Arc<Design>> {
        let key: Vec<u64> = arms
            .iter()
            .flat_map(|a| std::iter::once(a.len() as u64).chain(a.iter().map(|x| x.to_bits())))
            .collect();
        if let Some(d) = self.cache.lock().expect("design cache poisoned").get(&key) {
            return Ok(Arc::clone(d));
        }
        let design = Arc::new(g_optimal(arms, &self.params)?);
        self.cache
            .lock()
            .expect("design cache poisoned")
            .insert(key, Arc::clone(&design));
        Ok(design)
    }

    /// Design over the arms `ids` of `instance`; weights follow `ids`.
    pub fn design_for(&self, instance: &Instance, ids: &[ArmId]) -> Result<Arc<Design>> {
        let arms: Vec<DVector<f64>> = ids.iter().map(|&i| instance.arm(i).clone()).collect();
        self.design(&arms)
    }
}
