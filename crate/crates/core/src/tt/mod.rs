//! Tensor trains: a coefficient tensor `U(ν_1, …, ν_d)` stored as a chain of
//! order-3 cores so that every entry is a product of core slices,
//!
//! ```text
//! U(ν_1, …, ν_d) = U_1[:, ν_1, :] · U_2[:, ν_2, :] ⋯ U_d[:, ν_d, :]
//! ```
//!
//! Mode indices are 0-based throughout and dense tensors use row-major order,
//! so `to_full` and the dense oracles in the tests enumerate entries the same
//! way. All operations are pure: they return new trains.

mod dense;
mod io;

pub(crate) use io::{read_f64, read_u64};

pub use dense::DenseTensor;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_len, invalid, Error, Result};
use crate::linalg::{self, lq, qr, to_row_major};


/// Largest number of entries `to_full` materializes unless told otherwise.
pub const DENSE_GUARD: usize = 10_000_000;

/// Singular values below this fraction of the largest one are treated as
/// exact zeros when truncating.
const NEGLIGIBLE_RELATIVE: f64 = 1e-13;

/// One order-3 core with shape `(left, mode, right)`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Core {
    left: usize,
    mode: usize,
    right: usize,
    data: Vec<f64>,
}

impl Core {
    pub fn new(left: usize, mode: usize, right: usize, data: Vec<f64>) -> Result<Self> {
        if left == 0 || mode == 0 || right == 0 {
            return Err(Error::InvalidShape(format!(
                "core shape ({left}, {mode}, {right}) has a zero dimension"
            )));
        }
        check_len(left * mode * right, data.len())?;
        Ok(Self {
            left,
            mode,
            right,
            data,
        })
    }

    pub fn zeros(left: usize, mode: usize, right: usize) -> Self {
        Self {
            left,
            mode,
            right,
            data: vec![0.0; left * mode * right],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.left, self.mode, self.right)
    }

    pub fn left_rank(&self) -> usize {
        self.left
    }

    pub fn mode_dim(&self) -> usize {
        self.mode
    }

    pub fn right_rank(&self) -> usize {
        self.right
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, a: usize, i: usize, b: usize) -> f64 {
        self.data[(a * self.mode + i) * self.right + b]
    }

    #[inline]
    pub fn set(&mut self, a: usize, i: usize, b: usize, v: f64) {
        self.data[(a * self.mode + i) * self.right + b] = v;
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Matrix of shape `(left * mode, right)`.
    pub fn left_unfolding(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.left * self.mode, self.right, &self.data)
    }

    /// Matrix of shape `(left, mode * right)`.
    pub fn right_unfolding(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.left, self.mode * self.right, &self.data)
    }

    pub(crate) fn from_left_unfolding(m: &DMatrix<f64>, left: usize, mode: usize) -> Self {
        debug_assert_eq!(m.nrows(), left * mode);
        Self {
            left,
            mode,
            right: m.ncols(),
            data: to_row_major(m),
        }
    }

    pub(crate) fn from_right_unfolding(m: &DMatrix<f64>, mode: usize, right: usize) -> Self {
        debug_assert_eq!(m.ncols(), mode * right);
        Self {
            left: m.nrows(),
            mode,
            right,
            data: to_row_major(m),
        }
    }

    /// `w[b] = Σ_{a,i} v[a] f[i] U[a, i, b]`.
    pub fn push_left(&self, v: &[f64], f: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; self.right];
        self.push_left_into(v, f, &mut w);
        w
    }

    pub(crate) fn push_left_into(&self, v: &[f64], f: &[f64], w: &mut [f64]) {
        debug_assert_eq!(v.len(), self.left);
        debug_assert_eq!(f.len(), self.mode);
        w.iter_mut().for_each(|x| *x = 0.0);
        for (a, &va) in v.iter().enumerate() {
            if va == 0.0 {
                continue;
            }
            for (i, &fi) in f.iter().enumerate() {
                let c = va * fi;
                if c == 0.0 {
                    continue;
                }
                let row = &self.data[(a * self.mode + i) * self.right..][..self.right];
                for (wb, &u) in w.iter_mut().zip(row) {
                    *wb += c * u;
                }
            }
        }
    }

    /// `v[a] = Σ_{i,b} U[a, i, b] f[i] w[b]`.
    pub fn push_right(&self, f: &[f64], w: &[f64]) -> Vec<f64> {
        debug_assert_eq!(f.len(), self.mode);
        debug_assert_eq!(w.len(), self.right);
        let mut v = vec![0.0; self.left];
        for (a, va) in v.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, &fi) in f.iter().enumerate() {
                if fi == 0.0 {
                    continue;
                }
                let row = &self.data[(a * self.mode + i) * self.right..][..self.right];
                let dot: f64 = row.iter().zip(w).map(|(u, x)| u * x).sum();
                acc += fi * dot;
            }
            *va = acc;
        }
        v
    }

    /// `Σ_i f[i] U[:, i, :]` as a `left × right` matrix.
    pub fn contract_mode(&self, f: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.left, self.right);
        for a in 0..self.left {
            for (i, &fi) in f.iter().enumerate() {
                for b in 0..self.right {
                    m[(a, b)] += fi * self.get(a, i, b);
                }
            }
        }
        m
    }
}

/// Which cores are known to be orthogonal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orthogonality {
    None,
    /// Cores `0..k` have orthonormal columns in their left unfolding.
    Left(usize),
    /// Cores `k+1..d` have orthonormal rows in their right unfolding.
    Right(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorTrain {
    cores: Vec<Core>,
    orthogonality: Orthogonality,
}

impl TensorTrain {
    /// Validates chain consistency and boundary ranks.
    pub fn new(cores: Vec<Core>) -> Result<Self> {
        if cores.is_empty() {
            return Err(Error::InvalidShape("a tensor train needs at least one core".into()));
        }
        if cores[0].left != 1 || cores[cores.len() - 1].right != 1 {
            return Err(Error::InvalidShape("boundary ranks must be 1".into()));
        }
        for (k, pair) in cores.windows(2).enumerate() {
            if pair[0].right != pair[1].left {
                return Err(Error::InvalidShape(format!(
                    "rank mismatch between cores {k} and {}: {} vs {}",
                    k + 1,
                    pair[0].right,
                    pair[1].left
                )));
            }
        }
        Ok(Self {
            cores,
            orthogonality: Orthogonality::None,
        })
    }

    pub(crate) fn from_parts(cores: Vec<Core>, orthogonality: Orthogonality) -> Self {
        debug_assert!(Self::new(cores.clone()).is_ok());
        Self {
            cores,
            orthogonality,
        }
    }

    /// The zero tensor, stored with all ranks 1 and zero cores.
    pub fn zeros(mode_dims: &[usize]) -> Result<Self> {
        dense::validate_shape(mode_dims)?;
        let cores = mode_dims.iter().map(|&p| Core::zeros(1, p, 1)).collect();
        Self::new(cores)
    }

    /// `f_1 ⊗ f_2 ⊗ ⋯ ⊗ f_d`.
    pub fn rank_one<V: AsRef<[f64]>>(factors: &[V]) -> Result<Self> {
        let cores = factors
            .iter()
            .map(|f| {
                let f = f.as_ref();
                Core::new(1, f.len(), 1, f.to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(cores)
    }

    /// The delta tensor that is one at `index` and zero elsewhere.
    pub fn unit(mode_dims: &[usize], index: &[usize]) -> Result<Self> {
        check_len(mode_dims.len(), index.len())?;
        let factors = mode_dims
            .iter()
            .zip(index)
            .map(|(&p, &i)| {
                if i >= p {
                    return Err(invalid("index", format!("{i} out of range for mode of size {p}")));
                }
                let mut e = vec![0.0; p];
                e[i] = 1.0;
                Ok(e)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::rank_one(&factors)
    }

    /// Standard normal cores with the given ranks.
    pub fn random<R: Rng + ?Sized>(mode_dims: &[usize], ranks: &[usize], rng: &mut R) -> Result<Self> {
        dense::validate_shape(mode_dims)?;
        check_len(mode_dims.len() + 1, ranks.len())?;
        let cores = mode_dims
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let len = ranks[k] * p * ranks[k + 1];
                let data = (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                Core::new(ranks[k], p, ranks[k + 1], data)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(cores)
    }

    pub fn order(&self) -> usize {
        self.cores.len()
    }

    pub fn mode_dims(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.mode).collect()
    }

    /// `r_0, …, r_d` with `r_0 = r_d = 1`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = Vec::with_capacity(self.cores.len() + 1);
        r.push(1);
        r.extend(self.cores.iter().map(|c| c.right));
        r
    }

    pub fn max_rank(&self) -> usize {
        self.ranks().into_iter().max().unwrap_or(1)
    }

    pub fn cores(&self) -> &[Core] {
        &self.cores
    }

    pub fn core(&self, k: usize) -> &Core {
        &self.cores[k]
    }

    pub fn into_cores(self) -> Vec<Core> {
        self.cores
    }

    pub fn orthogonality(&self) -> Orthogonality {
        self.orthogonality
    }

    /// Number of stored parameters.
    pub fn storage(&self) -> usize {
        self.cores.iter().map(|c| c.data.len()).sum()
    }

    /// TT-SVD: sequential truncated SVDs of the unfoldings.
    ///
    /// Bond `k` keeps the fewest singular values whose discarded tail has norm
    /// at most `tol · ‖σ‖ / √(d−1)`, capped at `max_rank`, which bounds the
    /// total relative error by `tol`.
    pub fn from_full(t: &DenseTensor, tol: f64, max_rank: usize) -> Result<Self> {
        check_tolerance(tol, max_rank)?;
        let shape = t.shape().to_vec();
        let d = shape.len();
        if t.norm() == 0.0 {
            return Self::zeros(&shape);
        }
        let bond_tol = bond_tolerance(tol, d);
        let mut rest = t.data().to_vec();
        let mut remaining: usize = shape.iter().product();
        let mut r_prev = 1;
        let mut cores = Vec::with_capacity(d);
        for k in 0..d - 1 {
            let rows = r_prev * shape[k];
            remaining /= shape[k];
            let m = DMatrix::from_row_slice(rows, remaining, &rest);
            let svd = linalg::svd(&m)?;
            let norm = svd.s.iter().map(|s| s * s).sum::<f64>().sqrt();
            let r = truncation_rank(&svd.s, bond_tol * norm, max_rank);
            let u = svd.u.columns(0, r).into_owned();
            cores.push(Core::from_left_unfolding(&u, r_prev, shape[k]));
            let mut sv = svd.vt.rows(0, r).into_owned();
            for (i, mut row) in sv.row_iter_mut().enumerate() {
                row *= svd.s[i];
            }
            rest = to_row_major(&sv);
            r_prev = r;
        }
        cores.push(Core::new(r_prev, shape[d - 1], 1, rest)?);
        Ok(Self::from_parts(cores, Orthogonality::Left(d - 1)))
    }

    pub fn to_full(&self) -> Result<DenseTensor> {
        self.to_full_with_limit(DENSE_GUARD)
    }

    pub fn to_full_with_limit(&self, limit: usize) -> Result<DenseTensor> {
        let dims = self.mode_dims();
        let entries: u128 = dims.iter().map(|&p| p as u128).product();
        if entries > limit as u128 {
            return Err(Error::TooLarge { entries, limit });
        }
        let first = &self.cores[0];
        let mut acc = first.left_unfolding();
        for core in &self.cores[1..] {
            let prod = &acc * core.right_unfolding();
            // (rows, mode * right) row-major equals (rows * mode, right) row-major
            acc = DMatrix::from_row_slice(prod.nrows() * core.mode, core.right, &to_row_major(&prod));
        }
        DenseTensor::new(dims, to_row_major(&acc))
    }

    /// Single entry by a left-to-right product of core slices.
    pub fn entry(&self, index: &[usize]) -> Result<f64> {
        check_len(self.order(), index.len())?;
        let mut v = vec![1.0];
        for (core, &i) in self.cores.iter().zip(index) {
            if i >= core.mode {
                return Err(invalid("index", format!("{i} out of range for mode of size {}", core.mode)));
            }
            let mut w = vec![0.0; core.right];
            for (a, &va) in v.iter().enumerate() {
                for (b, wb) in w.iter_mut().enumerate() {
                    *wb += va * core.get(a, i, b);
                }
            }
            v = w;
        }
        Ok(v[0])
    }

    /// `Σ_ν U(ν) Π_j feats_j[ν_j]` by sequential vector-matrix products.
    pub fn evaluate<V: AsRef<[f64]>>(&self, feats: &[V]) -> Result<f64> {
        check_len(self.order(), feats.len())?;
        let mut v = vec![1.0];
        for (core, f) in self.cores.iter().zip(feats) {
            let f = f.as_ref();
            check_len(core.mode, f.len())?;
            v = core.push_left(&v, f);
        }
        Ok(v[0])
    }

    /// QR/LQ sweep so that the requested side of `pivot` is orthogonal.
    pub fn orthogonalize(&self, pivot: usize, side: Side) -> Result<Self> {
        let d = self.order();
        if pivot >= d {
            return Err(invalid("pivot", format!("{pivot} out of range for order {d}")));
        }
        let mut cores = self.cores.clone();
        match side {
            Side::Left => {
                let start = match self.orthogonality {
                    Orthogonality::Left(k) => k.min(pivot),
                    _ => 0,
                };
                for k in start..pivot {
                    left_orthogonalize_step(&mut cores, k);
                }
                Ok(Self::from_parts(cores, Orthogonality::Left(pivot)))
            }
            Side::Right => {
                let stop = match self.orthogonality {
                    Orthogonality::Right(k) => k.max(pivot),
                    _ => d - 1,
                };
                for k in (pivot + 1..=stop).rev() {
                    right_orthogonalize_step(&mut cores, k);
                }
                Ok(Self::from_parts(cores, Orthogonality::Right(pivot)))
            }
        }
    }

    /// TT rounding: right-orthogonalize, then truncate every bond by SVD while
    /// sweeping left to right.
    pub fn round(&self, tol: f64, max_rank: usize) -> Result<Self> {
        check_tolerance(tol, max_rank)?;
        let d = self.order();
        // Cancellation leaves roundoff that no relative rule can see, so
        // compare against the submultiplicative bound on the norm.
        let bound: f64 = self.cores.iter().map(Core::norm).product();
        if self.norm() <= 1e-13 * bound {
            return Self::zeros(&self.mode_dims());
        }
        let bond_tol = bond_tolerance(tol, d);
        self.truncation_sweep(|_, s| {
            let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
            truncation_rank(s, bond_tol * norm, max_rank)
        })
    }

    /// Rounds to exactly the given ranks (or fewer, where an unfolding has
    /// smaller dimension). No singular value is dropped for being small.
    pub fn round_to_ranks(&self, ranks: &[usize]) -> Result<Self> {
        check_len(self.order() + 1, ranks.len())?;
        self.truncation_sweep(|k, s| ranks[k + 1].min(s.len()).max(1))
    }

    fn truncation_sweep(&self, mut choose: impl FnMut(usize, &[f64]) -> usize) -> Result<Self> {
        let d = self.order();
        let mut x = self.orthogonalize(0, Side::Right)?;
        if x.cores[0].norm() == 0.0 || !x.cores[0].norm().is_finite() {
            if !x.cores[0].norm().is_finite() {
                return Err(Error::NonFinite("tensor train rounding".into()));
            }
            return Self::zeros(&self.mode_dims());
        }
        for k in 0..d - 1 {
            let core = &x.cores[k];
            let (left, mode) = (core.left, core.mode);
            let svd = linalg::svd(&core.left_unfolding())?;
            let r = choose(k, &svd.s);
            let u = svd.u.columns(0, r).into_owned();
            let mut sv = svd.vt.rows(0, r).into_owned();
            for (i, mut row) in sv.row_iter_mut().enumerate() {
                row *= svd.s[i];
            }
            let next = &x.cores[k + 1];
            let merged = sv * next.right_unfolding();
            let next_core = Core::from_right_unfolding(&merged, next.mode, next.right);
            x.cores[k] = Core::from_left_unfolding(&u, left, mode);
            x.cores[k + 1] = next_core;
        }
        x.orthogonality = Orthogonality::Left(d - 1);
        Ok(x)
    }

    /// Sum with ranks `r_j(a) + r_j(b)` in the interior.
    pub fn add(&self, other: &Self) -> Result<Self> {
        let dims = self.mode_dims();
        if dims != other.mode_dims() {
            return Err(Error::InvalidShape(format!(
                "mode dimensions differ: {dims:?} vs {:?}",
                other.mode_dims()
            )));
        }
        let d = dims.len();
        if d == 1 {
            let data = self.cores[0]
                .data
                .iter()
                .zip(&other.cores[0].data)
                .map(|(a, b)| a + b)
                .collect();
            return Self::new(vec![Core::new(1, dims[0], 1, data)?]);
        }
        let mut cores = Vec::with_capacity(d);
        for k in 0..d {
            let (a, b) = (&self.cores[k], &other.cores[k]);
            let p = a.mode;
            let left = if k == 0 { 1 } else { a.left + b.left };
            let right = if k == d - 1 { 1 } else { a.right + b.right };
            let mut c = Core::zeros(left, p, right);
            let (b_left_off, b_right_off) = (
                if k == 0 { 0 } else { a.left },
                if k == d - 1 { 0 } else { a.right },
            );
            for i in 0..p {
                for l in 0..a.left {
                    for r in 0..a.right {
                        c.set(l, i, r, a.get(l, i, r));
                    }
                }
                for l in 0..b.left {
                    for r in 0..b.right {
                        c.set(l + b_left_off, i, r + b_right_off, b.get(l, i, r));
                    }
                }
            }
            cores.push(c);
        }
        Self::new(cores)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }

    /// Multiplies the pivot core (or the last core when no pivot is known).
    pub fn scale(&self, c: f64) -> Self {
        let k = match self.orthogonality {
            Orthogonality::Left(k) | Orthogonality::Right(k) => k,
            Orthogonality::None => self.order() - 1,
        };
        let mut out = self.clone();
        out.cores[k].data.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// Frobenius inner product, contracted left to right.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        let dims = self.mode_dims();
        if dims != other.mode_dims() {
            return Err(Error::InvalidShape(format!(
                "mode dimensions differ: {dims:?} vs {:?}",
                other.mode_dims()
            )));
        }
        // env[a, b] over the bond after core k
        let mut env = DMatrix::from_element(1, 1, 1.0);
        for (a, b) in self.cores.iter().zip(&other.cores) {
            let mut next = DMatrix::zeros(a.right, b.right);
            for i in 0..a.mode {
                let sa = slice_matrix(a, i);
                let sb = slice_matrix(b, i);
                next += sa.transpose() * &env * sb;
            }
            env = next;
        }
        Ok(env[(0, 0)])
    }

    pub fn norm(&self) -> f64 {
        let d = self.order();
        match self.orthogonalize(d - 1, Side::Left) {
            Ok(x) => x.cores[d - 1].norm(),
            Err(_) => f64::NAN,
        }
    }
}

/// Slice `U[:, i, :]` as a `left × right` matrix.
pub(crate) fn slice_matrix(core: &Core, i: usize) -> DMatrix<f64> {
    DMatrix::from_fn(core.left, core.right, |a, b| core.get(a, i, b))
}

pub(crate) fn left_orthogonalize_step(cores: &mut [Core], k: usize) {
    let core = &cores[k];
    let (left, mode) = (core.left, core.mode);
    let (q, r) = qr(&core.left_unfolding());
    let next = &cores[k + 1];
    let merged = r * next.right_unfolding();
    let next_core = Core::from_right_unfolding(&merged, next.mode, next.right);
    cores[k] = Core::from_left_unfolding(&q, left, mode);
    cores[k + 1] = next_core;
}

pub(crate) fn right_orthogonalize_step(cores: &mut [Core], k: usize) {
    let core = &cores[k];
    let (mode, right) = (core.mode, core.right);
    let (l, q) = lq(&core.right_unfolding());
    let prev = &cores[k - 1];
    let merged = prev.left_unfolding() * l;
    let prev_core = Core::from_left_unfolding(&merged, prev.left, prev.mode);
    cores[k] = Core::from_right_unfolding(&q, mode, right);
    cores[k - 1] = prev_core;
}

fn check_tolerance(tol: f64, max_rank: usize) -> Result<()> {
    if !(tol >= 0.0) || !tol.is_finite() {
        return Err(invalid("tol", format!("{tol} is not a finite nonnegative number")));
    }
    if max_rank == 0 {
        return Err(invalid("max_rank", "must be positive"));
    }
    Ok(())
}

fn bond_tolerance(tol: f64, d: usize) -> f64 {
    if d > 1 {
        tol / ((d - 1) as f64).sqrt()
    } else {
        0.0
    }
}

/// Smallest rank whose discarded tail has norm at most `delta`, at least 1,
/// at most `max_rank`. `s` must be sorted descending.
pub(crate) fn truncation_rank(s: &[f64], delta: f64, max_rank: usize) -> usize {
    let Some(&smax) = s.first() else {
        return 1;
    };
    if smax == 0.0 {
        return 1;
    }
    let floor = NEGLIGIBLE_RELATIVE * smax;
    let mut k = s.iter().take_while(|&&v| v > floor).count().max(1);
    let mut tail: f64 = s[k..].iter().map(|v| v * v).sum();
    let budget = delta * delta;
    while k > 1 {
        let next = tail + s[k - 1] * s[k - 1];
        if next <= budget {
            tail = next;
            k -= 1;
        } else {
            break;
        }
    }
    k.min(max_rank).max(1)
}
