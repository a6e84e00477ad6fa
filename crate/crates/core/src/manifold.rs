//! The manifold of tensor trains with fixed ranks: tangent spaces,
//! projection, retraction, transport and a Riemannian nonlinear CG.
//!
//! A point keeps two gauges of the same tensor, left-orthogonal cores `U`
//! (the last one carries the norm) and right-orthogonal cores `V` (the
//! first one carries the norm). A tangent vector is
//!
//! ```text
//! ξ = Σ_k U_1 ⋯ U_{k−1} W_k V_{k+1} ⋯ V_d,   L(U_k)ᵀ L(W_k) = 0 for k < d,
//! ```
//!
//! so the terms are mutually orthogonal and `⟨ξ, ζ⟩ = Σ_k ⟨W_k, W′_k⟩`.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tt::{slice_matrix, Core, Orthogonality, Side, TensorTrain};

#[derive(Clone, Debug)]
pub struct ManifoldPoint {
    left: Vec<Core>,
    right: Vec<Core>,
}

impl ManifoldPoint {
    /// Rounds `tt` to its own ranks, capped at the ranks its mode sizes
    /// allow, and caches both gauges.
    pub fn new(tt: &TensorTrain) -> Result<Arc<Self>> {
        let feasible = feasible_ranks(&tt.mode_dims(), &tt.ranks());
        let x = tt.round_to_ranks(&feasible)?;
        let right = x.orthogonalize(0, Side::Right)?.into_cores();
        Ok(Arc::new(Self {
            left: x.into_cores(),
            right,
        }))
    }

    pub fn tt(&self) -> TensorTrain {
        TensorTrain::from_parts(self.left.clone(), Orthogonality::Left(self.order() - 1))
    }

    pub fn order(&self) -> usize {
        self.left.len()
    }

    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![1];
        r.extend(self.left.iter().map(Core::right_rank));
        r
    }

    pub fn mode_dims(&self) -> Vec<usize> {
        self.left.iter().map(Core::mode_dim).collect()
    }

    pub fn left_cores(&self) -> &[Core] {
        &self.left
    }

    pub fn right_cores(&self) -> &[Core] {
        &self.right
    }

    pub fn norm(&self) -> f64 {
        self.left[self.order() - 1].norm()
    }

    /// `Σ_ν X(ν) Π_j feats_j[ν_j]`.
    pub fn evaluate<V: AsRef<[f64]>>(&self, feats: &[V]) -> f64 {
        let mut v = vec![1.0];
        for (core, f) in self.left.iter().zip(feats) {
            v = core.push_left(&v, f.as_ref());
        }
        v[0]
    }
}

/// Largest ranks compatible with the mode sizes, elementwise below `ranks`.
pub fn feasible_ranks(mode_dims: &[usize], ranks: &[usize]) -> Vec<usize> {
    let d = mode_dims.len();
    let mut out = ranks.to_vec();
    let mut left = 1usize;
    for k in 0..d {
        left = left.saturating_mul(mode_dims[k]);
        out[k + 1] = out[k + 1].min(left);
    }
    let mut right = 1usize;
    for k in (0..d).rev() {
        right = right.saturating_mul(mode_dims[k]);
        out[k] = out[k].min(right);
    }
    out[0] = 1;
    out[d] = 1;
    out
}

/// First-order variations in the gauge of `base`.
#[derive(Clone, Debug)]
pub struct TangentVector {
    base: Arc<ManifoldPoint>,
    variations: Vec<Core>,
}

impl TangentVector {
    pub fn zeros(base: &Arc<ManifoldPoint>) -> Self {
        let variations = base
            .left
            .iter()
            .map(|c| {
                let (l, p, r) = c.shape();
                Core::zeros(l, p, r)
            })
            .collect();
        Self {
            base: Arc::clone(base),
            variations,
        }
    }

    /// Builds a tangent vector from arbitrary cores by removing the gauge
    /// violating part; the result is the projection of their embedding.
    pub fn from_variations(base: &Arc<ManifoldPoint>, variations: Vec<Core>) -> Result<Self> {
        if variations.len() != base.order()
            || variations.iter().zip(&base.left).any(|(w, u)| w.shape() != u.shape())
        {
            return Err(Error::InvalidShape("variation shapes differ from the base point".into()));
        }
        let d = base.order();
        let variations = variations
            .into_iter()
            .enumerate()
            .map(|(k, w)| if k + 1 < d { gauge_project(&base.left[k], &w) } else { w })
            .collect();
        Ok(Self {
            base: Arc::clone(base),
            variations,
        })
    }

    pub fn base(&self) -> &Arc<ManifoldPoint> {
        &self.base
    }

    pub fn variations(&self) -> &[Core] {
        &self.variations
    }

    fn check_same_base(&self, other: &Self) -> Result<()> {
        if Arc::ptr_eq(&self.base, &other.base) {
            Ok(())
        } else {
            Err(Error::InvalidShape("tangent vectors live at different points".into()))
        }
    }

    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.check_same_base(other)?;
        Ok(self
            .variations
            .iter()
            .zip(&other.variations)
            .map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum::<f64>())
            .sum())
    }

    pub fn norm(&self) -> f64 {
        self.variations
            .iter()
            .map(|w| w.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut out = self.clone();
        for w in &mut out.variations {
            w.data_mut().iter_mut().for_each(|v| *v *= c);
        }
        out
    }

    /// `self + c · other`.
    pub fn axpy(&self, c: f64, other: &Self) -> Result<Self> {
        self.check_same_base(other)?;
        let mut out = self.clone();
        for (w, o) in out.variations.iter_mut().zip(&other.variations) {
            for (a, b) in w.data_mut().iter_mut().zip(o.data()) {
                *a += c * b;
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.axpy(1.0, other)
    }

    /// Largest gauge violation `max_k ‖L(U_k)ᵀ L(W_k)‖_max`, `k < d`.
    pub fn gauge_error(&self) -> f64 {
        let d = self.base.order();
        (0..d.saturating_sub(1))
            .map(|k| {
                let u = self.base.left[k].left_unfolding();
                let w = self.variations[k].left_unfolding();
                (u.transpose() * w).amax()
            })
            .fold(0.0, f64::max)
    }

    /// The vector as a tensor train of ranks at most `2r`.
    pub fn embed(&self) -> TensorTrain {
        self.block_train(0.0, 1.0)
    }

    /// Cores of `c · X + t · ξ` in the block layout.
    fn block_train(&self, c: f64, t: f64) -> TensorTrain {
        let base = &self.base;
        let d = base.order();
        if d == 1 {
            let data = base.left[0]
                .data()
                .iter()
                .zip(self.variations[0].data())
                .map(|(u, w)| c * u + t * w)
                .collect();
            let p = base.left[0].mode_dim();
            return TensorTrain::new(vec![Core::new(1, p, 1, data).expect("shape")]).expect("chain");
        }
        let mut cores = Vec::with_capacity(d);
        for k in 0..d {
            let (u, v, w) = (&base.left[k], &base.right[k], &self.variations[k]);
            let (rl, p, rr) = u.shape();
            if k == 0 {
                // [t W_1, U_1]
                let mut core = Core::zeros(1, p, 2 * rr);
                for i in 0..p {
                    for b in 0..rr {
                        core.set(0, i, b, t * w.get(0, i, b));
                        core.set(0, i, rr + b, u.get(0, i, b));
                    }
                }
                cores.push(core);
            } else if k + 1 == d {
                // [[V_d], [c U_d + t W_d]]
                let mut core = Core::zeros(2 * rl, p, 1);
                for a in 0..rl {
                    for i in 0..p {
                        core.set(a, i, 0, v.get(a, i, 0));
                        core.set(rl + a, i, 0, c * u.get(a, i, 0) + t * w.get(a, i, 0));
                    }
                }
                cores.push(core);
            } else {
                // [[V_k, 0], [t W_k, U_k]]
                let mut core = Core::zeros(2 * rl, p, 2 * rr);
                for a in 0..rl {
                    for i in 0..p {
                        for b in 0..rr {
                            core.set(a, i, b, v.get(a, i, b));
                            core.set(rl + a, i, b, t * w.get(a, i, b));
                            core.set(rl + a, i, rr + b, u.get(a, i, b));
                        }
                    }
                }
                cores.push(core);
            }
        }
        TensorTrain::new(cores).expect("block cores chain by construction")
    }
}

/// `(I − L(U) L(U)ᵀ) L(W)` folded back into a core.
fn gauge_project(u: &Core, w: &Core) -> Core {
    let lu = u.left_unfolding();
    let lw = w.left_unfolding();
    let corrected = &lw - &lu * (lu.transpose() * &lw);
    let (l, p, _) = w.shape();
    Core::from_left_unfolding(&corrected, l, p)
}

/// Orthogonal projection of an arbitrary tensor train onto the tangent
/// space at `x`.
pub fn project_tt(x: &Arc<ManifoldPoint>, z: &TensorTrain) -> Result<TangentVector> {
    if z.mode_dims() != x.mode_dims() {
        return Err(Error::InvalidShape(format!(
            "mode dimensions differ: {:?} vs {:?}",
            z.mode_dims(),
            x.mode_dims()
        )));
    }
    let d = x.order();
    let zc = z.cores();
    // psi[k]: U_{<k}ᵀ Z_{<k}, phi[k]: Z_{>k} V_{>k}ᵀ
    let mut psi = vec![DMatrix::from_element(1, 1, 1.0)];
    for k in 0..d - 1 {
        let mut next = DMatrix::zeros(x.left[k].right_rank(), zc[k].right_rank());
        for i in 0..zc[k].mode_dim() {
            next += slice_matrix(&x.left[k], i).transpose() * &psi[k] * slice_matrix(&zc[k], i);
        }
        psi.push(next);
    }
    let mut phi = vec![DMatrix::from_element(1, 1, 1.0); d];
    for k in (1..d).rev() {
        let mut next = DMatrix::zeros(zc[k].left_rank(), x.right[k].left_rank());
        for i in 0..zc[k].mode_dim() {
            next += slice_matrix(&zc[k], i) * &phi[k] * slice_matrix(&x.right[k], i).transpose();
        }
        phi[k - 1] = next;
    }
    let mut raw = Vec::with_capacity(d);
    for k in 0..d {
        let (l, p, r) = x.left[k].shape();
        let mut core = Core::zeros(l, p, r);
        for i in 0..p {
            let s = &psi[k] * slice_matrix(&zc[k], i) * &phi[k];
            for a in 0..l {
                for b in 0..r {
                    core.set(a, i, b, s[(a, b)]);
                }
            }
        }
        raw.push(core);
    }
    TangentVector::from_variations(x, raw)
}

/// Accumulates the projection of a sum of separable terms. Interface
/// vectors are computed per term so no high-rank train is formed.
#[derive(Clone, Debug)]
pub struct TangentAccumulator {
    base: Arc<ManifoldPoint>,
    raw: Vec<Core>,
    /// `tails[k]`: right interface of modes `k..d` contracted with `e_0`.
    tails: Vec<Vec<f64>>,
}

impl TangentAccumulator {
    pub fn new(base: &Arc<ManifoldPoint>) -> Self {
        let d = base.order();
        let raw = TangentVector::zeros(base).variations;
        let mut tails = vec![vec![1.0]; d + 1];
        for k in (0..d).rev() {
            let core = &base.right[k];
            let mut e0 = vec![0.0; core.mode_dim()];
            e0[0] = 1.0;
            tails[k] = core.push_right(&e0, &tails[k + 1]);
        }
        Self {
            base: Arc::clone(base),
            raw,
            tails,
        }
    }

    /// Adds `c · f_1 ⊗ ⋯ ⊗ f_d`.
    pub fn add_rank1<V: AsRef<[f64]>>(&mut self, c: f64, factors: &[V]) -> Result<()> {
        let d = self.base.order();
        self.check_factors(factors, d)?;
        let mut lefts = Vec::with_capacity(d);
        lefts.push(vec![1.0]);
        for k in 0..d - 1 {
            let next = self.base.left[k].push_left(&lefts[k], factors[k].as_ref());
            lefts.push(next);
        }
        let mut right = vec![1.0];
        for k in (0..d).rev() {
            outer_add(&mut self.raw[k], c, &lefts[k], factors[k].as_ref(), &right);
            if k > 0 {
                right = self.base.right[k].push_right(factors[k].as_ref(), &right);
            }
        }
        Ok(())
    }

    /// Adds `Σ_{n=0}^{d} c_n · f_1 ⊗ ⋯ ⊗ f_n ⊗ e_0 ⊗ ⋯ ⊗ e_0` in
    /// `O(d p r²)` using prefix and suffix recurrences.
    pub fn add_prefix_family<V: AsRef<[f64]>>(&mut self, coeffs: &[f64], factors: &[V]) -> Result<()> {
        let d = self.base.order();
        self.check_factors(factors, d)?;
        crate::error::check_len(d + 1, coeffs.len())?;
        let base = &self.base;

        let mut lambda = Vec::with_capacity(d + 1);
        lambda.push(vec![1.0]);
        for k in 0..d {
            let next = base.left[k].push_left(&lambda[k], factors[k].as_ref());
            lambda.push(next);
        }

        // suffix sums T[k] = Σ_{n ≥ k} c_n R_k^{(n)}
        let mut suffix = vec![Vec::new(); d + 1];
        suffix[d] = vec![coeffs[d]];
        for k in (1..d).rev() {
            let mut t = base.right[k].push_right(factors[k].as_ref(), &suffix[k + 1]);
            for (v, e) in t.iter_mut().zip(&self.tails[k]) {
                *v += coeffs[k] * e;
            }
            suffix[k] = t;
        }

        // B[k] = Σ_{n ≤ k} c_n λ_n U_n[e0] ⋯ U_{k−1}[e0]
        let mut carried = vec![coeffs[0]];
        for k in 0..d {
            let core = &base.left[k];
            outer_add(&mut self.raw[k], 1.0, &lambda[k], factors[k].as_ref(), &suffix[k + 1]);
            let tail = &self.tails[k + 1];
            let p = core.mode_dim();
            let r = core.right_rank();
            let data = self.raw[k].data_mut();
            for (a, &ba) in carried.iter().enumerate() {
                if ba == 0.0 {
                    continue;
                }
                let row = &mut data[a * p * r..][..r];
                for (x, &t) in row.iter_mut().zip(tail) {
                    *x += ba * t;
                }
            }
            if k + 1 < d {
                let mut e0 = vec![0.0; p];
                e0[0] = 1.0;
                let mut next = core.push_left(&carried, &e0);
                for (v, l) in next.iter_mut().zip(&lambda[k + 1]) {
                    *v += coeffs[k + 1] * l;
                }
                carried = next;
            }
        }
        Ok(())
    }

    fn check_factors<V: AsRef<[f64]>>(&self, factors: &[V], d: usize) -> Result<()> {
        crate::error::check_len(d, factors.len())?;
        for (f, core) in factors.iter().zip(&self.base.left) {
            crate::error::check_len(core.mode_dim(), f.as_ref().len())?;
        }
        Ok(())
    }

    /// Adds another accumulator at the same base.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if !Arc::ptr_eq(&self.base, &other.base) {
            return Err(Error::InvalidShape("accumulators live at different points".into()));
        }
        for (a, b) in self.raw.iter_mut().zip(&other.raw) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn finish(self) -> TangentVector {
        TangentVector::from_variations(&self.base, self.raw).expect("shapes match the base")
    }
}

#[inline]
fn outer_add(core: &mut Core, c: f64, left: &[f64], mid: &[f64], right: &[f64]) {
    let (_, p, r) = core.shape();
    let data = core.data_mut();
    for (a, &la) in left.iter().enumerate() {
        let la = c * la;
        if la == 0.0 {
            continue;
        }
        for (i, &fi) in mid.iter().enumerate() {
            let s = la * fi;
            if s == 0.0 {
                continue;
            }
            let row = &mut data[(a * p + i) * r..][..r];
            for (x, &rb) in row.iter_mut().zip(right) {
                *x += s * rb;
            }
        }
    }
}

/// `TT-SVD(X + t ξ)` truncated back to the ranks of `X`.
pub fn retract(v: &TangentVector, step: f64) -> Result<Arc<ManifoldPoint>> {
    let ranks = v.base.ranks();
    let sum = v.block_train(1.0, step);
    let rounded = sum.round_to_ranks(&ranks)?;
    if rounded.cores().iter().any(|c| c.data().iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite("retraction".into()));
    }
    let right = rounded.orthogonalize(0, Side::Right)?.into_cores();
    Ok(Arc::new(ManifoldPoint {
        left: rounded.into_cores(),
        right,
    }))
}

/// Projection of the embedded old vector onto the tangent space at `to`.
pub fn transport(to: &Arc<ManifoldPoint>, v: &TangentVector) -> Result<TangentVector> {
    if Arc::ptr_eq(to, &v.base) {
        return Ok(v.clone());
    }
    project_tt(to, &v.embed())
}

/// A smooth function on the manifold with its Riemannian gradient.
pub trait Objective {
    fn value(&self, x: &Arc<ManifoldPoint>) -> Result<f64>;

    fn value_and_gradient(&self, x: &Arc<ManifoldPoint>) -> Result<(f64, TangentVector)>;

    /// Held-out score used to select the returned iterate.
    fn validation(&self, _x: &Arc<ManifoldPoint>) -> Result<Option<f64>> {
        Ok(None)
    }
}

/// Hybrid coefficient `max(0, min(γ_PR, γ_FR))`.
pub fn fr_pr_plus(grad_new_sq: f64, grad_old_sq: f64, grad_new_dot_old: f64) -> f64 {
    if grad_old_sq <= 0.0 {
        return 0.0;
    }
    let pr = (grad_new_sq - grad_new_dot_old) / grad_old_sq;
    let fr = grad_new_sq / grad_old_sq;
    pr.min(fr).max(0.0)
}

#[derive(Clone, Debug)]
pub struct CgOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub armijo_c1: f64,
    pub contraction: f64,
    pub initial_step: f64,
    pub min_step: f64,
    pub restart_every: usize,
    /// Stop when the monitored value has not improved by this relative
    /// amount over `patience` iterations.
    pub stagnation_tolerance: f64,
    pub patience: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-10,
            armijo_c1: 1e-4,
            contraction: 0.5,
            initial_step: 1.0,
            min_step: 1e-14,
            restart_every: 20,
            stagnation_tolerance: 1e-6,
            patience: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgTraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub validation: Option<f64>,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CgStop {
    GradientTolerance,
    Stagnation,
    LineSearchFailure,
    MaxIterations,
}

#[derive(Clone, Debug)]
pub struct CgResult {
    pub point: Arc<ManifoldPoint>,
    pub trace: Vec<CgTraceRow>,
    pub stop: CgStop,
    pub best_iteration: usize,
}

fn check_finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

/// Nonlinear CG with FR-PR+ directions and Armijo backtracking. Returns the
/// iterate with the lowest validation value when the objective provides
/// one, otherwise the last iterate.
pub fn riemannian_cg<F: Objective + ?Sized>(
    objective: &F,
    x0: &Arc<ManifoldPoint>,
    opts: &CgOptions,
) -> Result<CgResult> {
    let mut x = Arc::clone(x0);
    let (mut f, mut grad) = objective.value_and_gradient(&x)?;
    check_finite(f, "objective at the starting point")?;
    let mut grad_sq = grad.inner(&grad)?;
    check_finite(grad_sq, "gradient at the starting point")?;
    let mut direction = grad.scale(-1.0);
    let mut step_guess = opts.initial_step;

    let first_validation = objective.validation(&x)?;
    let monitored = |f: f64, v: Option<f64>| v.unwrap_or(f);
    let mut best = (monitored(f, first_validation), Arc::clone(&x), 0usize);
    let mut last_improvement = 0usize;
    let mut trace = vec![CgTraceRow {
        iteration: 0,
        objective: f,
        validation: first_validation,
        grad_norm: grad_sq.sqrt(),
        step: 0.0,
    }];
    let mut stop = CgStop::MaxIterations;

    for it in 1..=opts.max_iterations {
        if grad_sq.sqrt() <= opts.gradient_tolerance {
            stop = CgStop::GradientTolerance;
            break;
        }
        let mut slope = grad.inner(&direction)?;
        if slope >= 0.0 {
            direction = grad.scale(-1.0);
            slope = -grad_sq;
        }

        let mut t = step_guess;
        let accepted = loop {
            let candidate = retract(&direction, t)?;
            let fc = objective.value(&candidate)?;
            if fc.is_finite() && fc <= f + opts.armijo_c1 * t * slope {
                break Some(candidate);
            }
            t *= opts.contraction;
            if t < opts.min_step {
                break None;
            }
        };
        let Some(x_new) = accepted else {
            stop = CgStop::LineSearchFailure;
            break;
        };
        step_guess = 2.0 * t;

        let (f_new, grad_new) = objective.value_and_gradient(&x_new)?;
        check_finite(f_new, "objective")?;
        let grad_new_sq = grad_new.inner(&grad_new)?;
        check_finite(grad_new_sq, "gradient")?;

        let old_grad = transport(&x_new, &grad)?;
        let old_dir = transport(&x_new, &direction)?;
        let gamma = if it % opts.restart_every == 0 {
            0.0
        } else {
            fr_pr_plus(grad_new_sq, grad_sq, grad_new.inner(&old_grad)?)
        };
        direction = grad_new.scale(-1.0).axpy(gamma, &old_dir)?;

        x = x_new;
        f = f_new;
        grad = grad_new;
        grad_sq = grad_new_sq;

        let validation = objective.validation(&x)?;
        trace.push(CgTraceRow {
            iteration: it,
            objective: f,
            validation,
            grad_norm: grad_sq.sqrt(),
            step: t,
        });
        let score = monitored(f, validation);
        if score < best.0 {
            if best.0 - score > opts.stagnation_tolerance * best.0.abs() {
                last_improvement = it;
            }
            best = (score, Arc::clone(&x), it);
        }
        if it - last_improvement >= opts.patience {
            stop = CgStop::Stagnation;
            break;
        }
    }

    let has_validation = trace.iter().any(|r| r.validation.is_some());
    let (point, best_iteration) = if has_validation {
        (best.1, best.2)
    } else {
        let last = trace.last().map_or(0, |r| r.iteration);
        (x, last)
    };
    Ok(CgResult {
        point,
        trace,
        stop,
        best_iteration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tt::DenseTensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn point(dims: &[usize], ranks: &[usize], seed: u64) -> Arc<ManifoldPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ManifoldPoint::new(&TensorTrain::random(dims, ranks, &mut rng).unwrap()).unwrap()
    }

    fn random_tangent(x: &Arc<ManifoldPoint>, seed: u64) -> TangentVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cores = x
            .left_cores()
            .iter()
            .map(|c| {
                let (l, p, r) = c.shape();
                let data = (0..l * p * r).map(|_| rng.sample(StandardNormal)).collect();
                Core::new(l, p, r, data).unwrap()
            })
            .collect();
        TangentVector::from_variations(x, cores).unwrap()
    }

    fn dense(t: &TensorTrain) -> DenseTensor {
        t.to_full().unwrap()
    }

    fn dense_dot(a: &DenseTensor, b: &DenseTensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    /// Orthonormal basis of the tangent space from embedding every unit
    /// core variation, by modified Gram–Schmidt.
    fn tangent_basis(x: &Arc<ManifoldPoint>) -> Vec<Vec<f64>> {
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for k in 0..x.order() {
            let (l, p, r) = x.left_cores()[k].shape();
            for e in 0..l * p * r {
                let mut raw = TangentVector::zeros(x).variations;
                raw[k].data_mut()[e] = 1.0;
                // raw embedding without the gauge projection
                let v = TangentVector {
                    base: Arc::clone(x),
                    variations: raw,
                };
                let mut w = dense(&v.embed()).into_data();
                for q in &basis {
                    let c: f64 = q.iter().zip(&w).map(|(a, b)| a * b).sum();
                    w.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
                }
                let n = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > 1e-8 {
                    basis.push(w.iter().map(|v| v / n).collect());
                }
            }
        }
        basis
    }

    #[test]
    fn gauges_reproduce_point() {
        let x = point(&[3, 4, 2, 3], &[1, 2, 3, 2, 1], 1);
        let a = dense(&x.tt());
        let b = dense(&TensorTrain::new(x.right_cores().to_vec()).unwrap());
        assert!(a.distance(&b) < 1e-12 * a.norm());
        assert_eq!(x.ranks(), vec![1, 2, 3, 2, 1]);
    }

    #[test]
    fn infeasible_ranks_are_capped() {
        assert_eq!(feasible_ranks(&[3, 3, 3], &[1, 4, 4, 1]), vec![1, 3, 3, 1]);
        let x = point(&[3, 3, 3], &[1, 4, 4, 1], 2);
        assert_eq!(x.ranks(), vec![1, 3, 3, 1]);
    }

    #[test]
    fn projection_matches_dense_oracle() {
        for (dims, ranks) in [(vec![2, 2, 2], vec![1, 1, 1, 1]), (vec![2, 3, 2], vec![1, 2, 2, 1])] {
            let x = point(&dims, &ranks, 3);
            let basis = tangent_basis(&x);
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let z = TensorTrain::random(&dims, &[1, 2, 2, 1], &mut rng).unwrap();
            let zd = dense(&z);
            let mut expected = vec![0.0; zd.len()];
            for q in &basis {
                let c: f64 = q.iter().zip(zd.data()).map(|(a, b)| a * b).sum();
                expected.iter_mut().zip(q).for_each(|(e, v)| *e += c * v);
            }
            let p = project_tt(&x, &z).unwrap();
            assert!(p.gauge_error() < 1e-10);
            let got = dense(&p.embed());
            let err: f64 = got.data().iter().zip(&expected).map(|(a, b)| (a - b).powi(2)).sum();
            assert!(err.sqrt() < 1e-10 * zd.norm(), "{dims:?}");
        }
    }

    #[test]
    fn projection_idempotent_and_self_adjoint() {
        let x = point(&[3, 2, 3], &[1, 2, 2, 1], 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = TensorTrain::random(&[3, 2, 3], &[1, 3, 3, 1], &mut rng).unwrap();
        let b = TensorTrain::random(&[3, 2, 3], &[1, 2, 2, 1], &mut rng).unwrap();
        let pa = project_tt(&x, &a).unwrap();
        let ppa = project_tt(&x, &pa.embed()).unwrap();
        assert!(dense(&ppa.embed()).distance(&dense(&pa.embed())) < 1e-9);
        let pb = project_tt(&x, &b).unwrap();
        let lhs = dense_dot(&dense(&pa.embed()), &dense(&b));
        let rhs = dense_dot(&dense(&a), &dense(&pb.embed()));
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
        // the tangent inner product equals the embedded one
        let embedded = dense_dot(&dense(&pa.embed()), &dense(&pb.embed()));
        assert!((pa.inner(&pb).unwrap() - embedded).abs() < 1e-9 * embedded.abs().max(1.0));
    }

    #[test]
    fn base_point_is_tangent() {
        let x = point(&[2, 3, 2], &[1, 2, 2, 1], 7);
        let p = project_tt(&x, &x.tt()).unwrap();
        assert!(dense(&p.embed()).distance(&dense(&x.tt())) < 1e-10);
    }

    #[test]
    fn accumulator_matches_tt_projection() {
        let dims = [3, 2, 4];
        let x = point(&dims, &[1, 2, 2, 1], 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut acc = TangentAccumulator::new(&x);
        let mut sum = TensorTrain::zeros(&dims).unwrap();
        for _ in 0..4 {
            let f: Vec<Vec<f64>> = dims
                .iter()
                .map(|&p| (0..p).map(|_| rng.sample(StandardNormal)).collect())
                .collect();
            let c: f64 = rng.sample(StandardNormal);
            acc.add_rank1(c, &f).unwrap();
            sum = sum.add(&TensorTrain::rank_one(&f).unwrap().scale(c)).unwrap();
        }
        let a = acc.finish();
        let b = project_tt(&x, &sum).unwrap();
        assert!(dense(&a.embed()).distance(&dense(&b.embed())) < 1e-10);
    }

    #[test]
    fn prefix_family_matches_rank_one_terms() {
        let dims = [3, 3, 3, 3];
        let x = point(&dims, &[1, 2, 3, 2, 1], 10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f: Vec<Vec<f64>> = dims
            .iter()
            .map(|&p| (0..p).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let c: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
        let mut fast = TangentAccumulator::new(&x);
        fast.add_prefix_family(&c, &f).unwrap();
        let mut slow = TangentAccumulator::new(&x);
        let e0 = vec![1.0, 0.0, 0.0];
        for n in 0..=4 {
            let factors: Vec<Vec<f64>> = (0..4).map(|k| if k < n { f[k].clone() } else { e0.clone() }).collect();
            slow.add_rank1(c[n], &factors).unwrap();
        }
        let (a, b) = (fast.finish(), slow.finish());
        let diff = a.axpy(-1.0, &b).unwrap().norm();
        assert!(diff < 1e-12 * b.norm().max(1.0), "{diff}");
    }

    #[test]
    fn retraction_properties() {
        let dims = [3, 3, 3];
        let x = point(&dims, &[1, 2, 2, 1], 12);
        let v = random_tangent(&x, 13);
        let x0 = retract(&v, 0.0).unwrap();
        assert!(dense(&x0.tt()).distance(&dense(&x.tt())) < 1e-12 * dense(&x.tt()).norm());
        assert_eq!(retract(&v, 0.1).unwrap().ranks(), x.ranks());

        let xd = dense(&x.tt());
        let vd = dense(&v.embed());
        let err = |h: f64| {
            let r = dense(&retract(&v, h).unwrap().tt());
            let lin: Vec<f64> = xd.data().iter().zip(vd.data()).map(|(a, b)| a + h * b).collect();
            r.data().iter().zip(&lin).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        };
        let h = 1e-2 / v.norm();
        let ratio = err(h) / err(h / 2.0);
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn transport_identity_and_nonexpansion() {
        let x = point(&[2, 2, 2], &[1, 1, 1, 1], 14);
        let v = random_tangent(&x, 15);
        let same = transport(&x, &v).unwrap();
        assert!(same.axpy(-1.0, &v).unwrap().norm() < 1e-12);
        for seed in 0..5 {
            let w = random_tangent(&x, 100 + seed);
            let y = retract(&w, 0.3).unwrap();
            let t = transport(&y, &v).unwrap();
            assert!(t.norm() <= v.norm() * (1.0 + 1e-10));

            // dense projector at the new point
            let basis = tangent_basis(&y);
            let vd = dense(&v.embed());
            let mut expected = vec![0.0; vd.len()];
            for q in &basis {
                let c: f64 = q.iter().zip(vd.data()).map(|(a, b)| a * b).sum();
                expected.iter_mut().zip(q).for_each(|(e, b)| *e += c * b);
            }
            let got = dense(&t.embed());
            let err: f64 = got.data().iter().zip(&expected).map(|(a, b)| (a - b).powi(2)).sum();
            assert!(err.sqrt() < 1e-10 * vd.norm().max(1.0));
        }
    }

    #[test]
    fn tangent_linear_space_and_gauge() {
        let x = point(&[3, 2, 3], &[1, 2, 2, 1], 16);
        let a = random_tangent(&x, 17);
        let b = random_tangent(&x, 18);
        assert!(a.gauge_error() < 1e-10);
        let c = a.axpy(2.0, &b).unwrap();
        assert!(c.gauge_error() < 1e-10);
        let lhs = dense(&c.embed());
        let rhs = dense(&a.embed().add(&b.embed().scale(2.0)).unwrap());
        assert!(lhs.distance(&rhs) < 1e-10 * rhs.norm());
        let other = point(&[3, 2, 3], &[1, 2, 2, 1], 19);
        assert!(a.inner(&random_tangent(&other, 20)).is_err());
    }

    #[test]
    fn fr_pr_plus_is_clipped() {
        assert_eq!(fr_pr_plus(1.0, 1.0, 2.0), 0.0);
        assert_eq!(fr_pr_plus(1.0, 2.0, 0.0), 0.5);
        assert!((fr_pr_plus(1.0, 2.0, 0.8) - 0.1).abs() < 1e-15);
        assert_eq!(fr_pr_plus(1.0, 0.0, 0.0), 0.0);
    }

    /// `f(X) = ‖X − A‖²`.
    struct Quadratic {
        target: TensorTrain,
    }

    impl Objective for Quadratic {
        fn value(&self, x: &Arc<ManifoldPoint>) -> Result<f64> {
            let diff = x.tt().sub(&self.target)?;
            Ok(diff.inner(&diff)?)
        }

        fn value_and_gradient(&self, x: &Arc<ManifoldPoint>) -> Result<(f64, TangentVector)> {
            let diff = x.tt().sub(&self.target)?;
            let g = project_tt(x, &diff.scale(2.0))?;
            Ok((diff.inner(&diff)?, g))
        }
    }

    #[test]
    fn cg_recovers_low_rank_target() {
        let dims = [3, 4, 3, 2];
        let ranks = [1, 2, 2, 2, 1];
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let target = TensorTrain::random(&dims, &ranks, &mut rng).unwrap();
        let x0 = point(&dims, &ranks, 22);
        let objective = Quadratic { target };
        let opts = CgOptions {
            max_iterations: 200,
            stagnation_tolerance: 0.0,
            patience: 200,
            gradient_tolerance: 1e-9,
            ..CgOptions::default()
        };
        let res = riemannian_cg(&objective, &x0, &opts).unwrap();
        let err = dense(&res.point.tt()).distance(&dense(&objective.target));
        assert!(err <= 1e-6, "error {err} after {} iterations", res.trace.len());
        for w in res.trace.windows(2) {
            assert!(w[1].objective <= w[0].objective);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let dims = [3, 3, 3];
        let ranks = [1, 2, 2, 1];
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let objective = Quadratic {
            target: TensorTrain::random(&dims, &[1, 3, 3, 1], &mut rng).unwrap(),
        };
        let x = point(&dims, &ranks, 24);
        let (_, g) = objective.value_and_gradient(&x).unwrap();
        let h = 1e-5;
        for seed in 0..10 {
            let v = random_tangent(&x, 200 + seed);
            let v = v.scale(1.0 / v.norm());
            let up = objective.value(&retract(&v, h).unwrap()).unwrap();
            let down = objective.value(&retract(&v, -h).unwrap()).unwrap();
            let fd = (up - down) / (2.0 * h);
            let exact = g.inner(&v).unwrap();
            assert!((fd - exact).abs() <= 1e-5 * exact.abs().max(g.norm()), "{fd} vs {exact}");
        }
    }
}
