//! Operator algebra on the composite qubit ⊗ mode Hilbert space.
//!
//! Operators are stored as compressed sparse rows over complex entries.
//! Composite basis states are ordered row-major over the slots of a
//! [`SystemLayout`], the first slot being the most significant digit.
//!
//! Qubit convention: the basis order is `(|e⟩, |g⟩)`, `σ_z = diag(1, −1)`,
//! `σ₋ = |g⟩⟨e|` and `σ₊ = |e⟩⟨g|`. With this ordering `σ₊` coincides with the
//! matrix `ladder(2)` and `σ₋` with its adjoint, so that `σ₊σ₋ = (I + σ_z)/2`
//! projects onto the excited state.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Dense conversions are refused above this dimension.
pub const DENSE_LIMIT: usize = 256;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Qubit,
    Mode,
}

/// Tensor structure of the composite space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemLayout {
    dims: Vec<usize>,
    labels: Vec<String>,
    kinds: Vec<SlotKind>,
    strides: Vec<usize>,
    total: usize,
}

impl SystemLayout {
    pub fn new(slots: Vec<(String, SlotKind, usize)>) -> Result<Self> {
        let mut dims = Vec::with_capacity(slots.len());
        let mut labels: Vec<String> = Vec::with_capacity(slots.len());
        let mut kinds = Vec::with_capacity(slots.len());
        let mut total: usize = 1;
        for (label, kind, dim) in slots {
            if dim < 2 {
                return Err(Error::InvalidDimension(dim));
            }
            if kind == SlotKind::Qubit && dim != 2 {
                return Err(Error::DimensionMismatch {
                    expected: 2,
                    found: dim,
                });
            }
            if labels.contains(&label) {
                return Err(Error::validation(label, "duplicate slot label"));
            }
            total = total
                .checked_mul(dim)
                .ok_or_else(|| Error::LayoutTooLarge(format!("{} slots overflow usize", dims.len() + 1)))?;
            dims.push(dim);
            labels.push(label);
            kinds.push(kind);
        }
        if total < 4 {
            return Err(Error::LayoutTooLarge(format!(
                "total dimension {total} is below the minimum of 4"
            )));
        }
        let mut strides = vec![1; dims.len()];
        for k in (0..dims.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * dims[k + 1];
        }
        Ok(Self {
            dims,
            labels,
            kinds,
            strides,
            total,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn kinds(&self) -> &[SlotKind] {
        &self.kinds
    }

    pub fn total_dim(&self) -> usize {
        self.total
    }

    pub fn num_slots(&self) -> usize {
        self.dims.len()
    }

    pub fn slot_index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownSlot(label.to_string()))
    }

    /// Digit of `slot` in composite basis index `index`.
    pub fn digit(&self, index: usize, slot: usize) -> usize {
        (index / self.strides[slot]) % self.dims[slot]
    }

    pub fn index_of(&self, digits: &[usize]) -> Result<usize> {
        if digits.len() != self.dims.len() {
            return Err(Error::DimensionMismatch {
                expected: self.dims.len(),
                found: digits.len(),
            });
        }
        let mut index = 0;
        for (k, &d) in digits.iter().enumerate() {
            if d >= self.dims[k] {
                return Err(Error::InvalidState(format!(
                    "digit {d} out of range for slot {}",
                    self.labels[k]
                )));
            }
            index += d * self.strides[k];
        }
        Ok(index)
    }

    /// Excitation quanta carried by `slot` in basis state `index`.
    pub fn quanta(&self, index: usize, slot: usize) -> usize {
        let d = self.digit(index, slot);
        match self.kinds[slot] {
            SlotKind::Qubit => 1 - d,
            SlotKind::Mode => d,
        }
    }

    /// Digit encoding `quanta` excitations in `slot`.
    pub fn digit_for_quanta(&self, slot: usize, quanta: usize) -> Result<usize> {
        match self.kinds[slot] {
            SlotKind::Qubit if quanta <= 1 => Ok(1 - quanta),
            SlotKind::Mode if quanta < self.dims[slot] => Ok(quanta),
            _ => Err(Error::InvalidState(format!(
                "{quanta} quanta do not fit in slot {}",
                self.labels[slot]
            ))),
        }
    }

    /// Total excitation number of every basis state.
    pub fn total_quanta(&self) -> Vec<usize> {
        (0..self.total)
            .map(|i| (0..self.dims.len()).map(|s| self.quanta(i, s)).sum())
            .collect()
    }
}

/// Complex sparse matrix in CSR form. Explicit zeros are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl Operator {
    /// Builds an operator from `(row, col, value)` triplets. Duplicates are
    /// summed and entries that cancel to exactly zero are dropped.
    pub fn from_triplets<I>(dim: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, C64)>,
    {
        if dim == 0 {
            return Err(Error::InvalidDimension(0));
        }
        let mut entries: Vec<(usize, usize, C64)> = Vec::new();
        for (r, c, v) in triplets {
            if r >= dim || c >= dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.max(c) + 1,
                });
            }
            entries.push((r, c, v));
        }
        entries.sort_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0; dim + 1];
        let mut cols = Vec::with_capacity(entries.len());
        let mut vals = Vec::with_capacity(entries.len());
        let mut i = 0;
        while i < entries.len() {
            let (r, c, mut v) = entries[i];
            let mut j = i + 1;
            while j < entries.len() && entries[j].0 == r && entries[j].1 == c {
                v += entries[j].2;
                j += 1;
            }
            if v != ZERO {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
            }
            i = j;
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            dim,
            row_ptr,
            cols,
            vals,
        })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            row_ptr: vec![0; dim + 1],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            row_ptr: (0..=dim).collect(),
            cols: (0..dim).collect(),
            vals: vec![ONE; dim],
        }
    }

    pub fn diagonal(diag: &[C64]) -> Self {
        let n = diag.len();
        Self::from_triplets(n, diag.iter().enumerate().map(|(i, &v)| (i, i, v)))
            .expect("diagonal indices are in range")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[C64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => ZERO,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(self.dim, self.iter().map(|(i, j, v)| (j, i, v.conj())))
            .expect("adjoint preserves dimension")
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self::from_triplets(self.dim, self.iter().map(|(i, j, v)| (i, j, v * factor)))
            .expect("scaling preserves dimension")
    }

    fn check_same_dim(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_dim(other)?;
        Self::from_triplets(self.dim, self.iter().chain(other.iter()))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_dim(other)?;
        Self::from_triplets(
            self.dim,
            self.iter().chain(other.iter().map(|(i, j, v)| (i, j, -v))),
        )
    }

    /// Sparse product `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.check_same_dim(other)?;
        let mut triplets = Vec::new();
        for i in 0..self.dim {
            let (cols, vals) = self.row(i);
            for (&k, &a) in cols.iter().zip(vals) {
                let (ocols, ovals) = other.row(k);
                for (&j, &b) in ocols.iter().zip(ovals) {
                    triplets.push((i, j, a * b));
                }
            }
        }
        Self::from_triplets(self.dim, triplets)
    }

    pub fn commutator(&self, other: &Self) -> Result<Self> {
        self.matmul(other)?.sub(&other.matmul(self)?)
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `max|H − H†| ≤ rel_tol · max|H|`.
    pub fn is_hermitian(&self, rel_tol: f64) -> bool {
        let scale = self.max_abs();
        let defect = self
            .iter()
            .map(|(i, j, v)| (v - self.get(j, i).conj()).norm())
            .fold(0.0, f64::max);
        defect <= rel_tol * scale
    }

    /// True when every row holds at most one entry.
    pub fn is_row_monomial(&self) -> bool {
        self.row_ptr.windows(2).all(|w| w[1] - w[0] <= 1)
    }

    pub fn to_dense(&self) -> Result<DMatrix<C64>> {
        if self.dim > DENSE_LIMIT {
            return Err(Error::DenseTooLarge {
                dim: self.dim,
                limit: DENSE_LIMIT,
            });
        }
        let mut m = DMatrix::from_element(self.dim, self.dim, ZERO);
        for (i, j, v) in self.iter() {
            m[(i, j)] = v;
        }
        Ok(m)
    }

    pub fn from_dense(m: &DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let n = m.nrows();
        Self::from_triplets(
            n,
            (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| (i, j, m[(i, j)])),
        )
    }

    pub fn apply(&self, v: &[C64]) -> Result<Vec<C64>> {
        let mut out = vec![ZERO; self.dim];
        self.apply_into(v, &mut out)?;
        Ok(out)
    }

    pub fn apply_into(&self, v: &[C64], out: &mut [C64]) -> Result<()> {
        if v.len() != self.dim || out.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: if v.len() != self.dim { v.len() } else { out.len() },
            });
        }
        for (i, o) in out.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *o = cols.iter().zip(vals).map(|(&j, &a)| a * v[j]).sum();
        }
        Ok(())
    }

    /// `out = self · m` for a dense row-major `dim × dim` matrix `m`.
    pub(crate) fn mul_dense_into(&self, m: &[C64], out: &mut [C64]) {
        let n = self.dim;
        debug_assert_eq!(m.len(), n * n);
        debug_assert_eq!(out.len(), n * n);
        for i in 0..n {
            let dst = &mut out[i * n..(i + 1) * n];
            dst.fill(ZERO);
            let (cols, vals) = self.row(i);
            for (&k, &a) in cols.iter().zip(vals) {
                let src = &m[k * n..(k + 1) * n];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
    }
}

/// Annihilation operator on a `d`-level truncated oscillator:
/// `a[i, i+1] = sqrt(i+1)`.
pub fn ladder(d: usize) -> Result<Operator> {
    if d < 2 {
        return Err(Error::InvalidDimension(d));
    }
    Operator::from_triplets(
        d,
        (0..d - 1).map(|i| (i, i + 1, C64::new(((i + 1) as f64).sqrt(), 0.0))),
    )
}

/// `a†a` on a `d`-level oscillator.
pub fn number(d: usize) -> Result<Operator> {
    let a = ladder(d)?;
    a.adjoint().matmul(&a)
}

pub fn sigma_z() -> Operator {
    Operator::diagonal(&[ONE, -ONE])
}

/// `|g⟩⟨e|` in the `(|e⟩, |g⟩)` basis.
pub fn sigma_minus() -> Operator {
    Operator::from_triplets(2, [(1, 0, ONE)]).expect("2x2")
}

pub fn sigma_plus() -> Operator {
    Operator::from_triplets(2, [(0, 1, ONE)]).expect("2x2")
}

pub fn sigma_x() -> Operator {
    Operator::from_triplets(2, [(0, 1, ONE), (1, 0, ONE)]).expect("2x2")
}

/// Lifts a single-slot operator to the composite space, acting as the
/// identity on every other slot.
pub fn embed(op: &Operator, slot: &str, layout: &SystemLayout) -> Result<Operator> {
    let s = layout.slot_index(slot)?;
    embed_at(op, s, layout)
}

pub(crate) fn embed_at(op: &Operator, s: usize, layout: &SystemLayout) -> Result<Operator> {
    let d = layout.dims()[s];
    if op.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: op.dim(),
        });
    }
    let right: usize = layout.dims()[s + 1..].iter().product();
    let left = layout.total_dim() / (d * right);
    let mut triplets = Vec::with_capacity(op.nnz() * left * right);
    for l in 0..left {
        for (i, j, v) in op.iter() {
            let bi = (l * d + i) * right;
            let bj = (l * d + j) * right;
            for r in 0..right {
                triplets.push((bi + r, bj + r, v));
            }
        }
    }
    Operator::from_triplets(layout.total_dim(), triplets)
}

/// Sparse matrix–vector product.
pub fn apply(op: &Operator, vec: &[C64]) -> Result<Vec<C64>> {
    op.apply(vec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateKind {
    Vector,
    Density,
}

/// Pure state vector or row-major density matrix on a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    layout: SystemLayout,
    kind: StateKind,
    data: Vec<C64>,
}

impl State {
    pub fn vector(layout: SystemLayout, data: Vec<C64>) -> Result<Self> {
        let n = layout.total_dim();
        if data.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: data.len(),
            });
        }
        let norm = data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidState(format!("vector norm {norm} is not 1")));
        }
        Ok(Self {
            layout,
            kind: StateKind::Vector,
            data,
        })
    }

    pub fn density(layout: SystemLayout, data: Vec<C64>) -> Result<Self> {
        let n = layout.total_dim();
        if data.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: data.len(),
            });
        }
        let trace: C64 = (0..n).map(|i| data[i * n + i]).sum();
        if (trace - ONE).norm() > 1e-9 {
            return Err(Error::InvalidState(format!("trace {trace} is not 1")));
        }
        let herm = hermiticity_defect(&data, n);
        if herm > 1e-9 {
            return Err(Error::InvalidState(format!(
                "density matrix is not Hermitian (defect {herm:e})"
            )));
        }
        if n <= DENSE_LIMIT {
            let min_eig = min_eigenvalue(&data, n);
            if min_eig < -1e-7 {
                return Err(Error::InvalidState(format!(
                    "density matrix has eigenvalue {min_eig:e}"
                )));
            }
        }
        Ok(Self {
            layout,
            kind: StateKind::Density,
            data,
        })
    }

    /// All qubits in `|g⟩`, all modes empty.
    pub fn ground(layout: SystemLayout) -> Self {
        let digits: Vec<usize> = (0..layout.num_slots())
            .map(|s| layout.digit_for_quanta(s, 0).expect("zero quanta always fit"))
            .collect();
        let idx = layout.index_of(&digits).expect("valid digits");
        let mut data = vec![ZERO; layout.total_dim()];
        data[idx] = ONE;
        Self {
            layout,
            kind: StateKind::Vector,
            data,
        }
    }

    /// Fock/qubit basis state given excitation quanta for the listed slots;
    /// unlisted slots are empty.
    pub fn basis(layout: SystemLayout, quanta: &[(&str, usize)]) -> Result<Self> {
        let mut digits: Vec<usize> = (0..layout.num_slots())
            .map(|s| layout.digit_for_quanta(s, 0))
            .collect::<Result<_>>()?;
        for &(label, q) in quanta {
            let s = layout.slot_index(label)?;
            digits[s] = layout.digit_for_quanta(s, q)?;
        }
        let idx = layout.index_of(&digits)?;
        let mut data = vec![ZERO; layout.total_dim()];
        data[idx] = ONE;
        Ok(Self {
            layout,
            kind: StateKind::Vector,
            data,
        })
    }

    pub fn to_density(&self) -> Self {
        match self.kind {
            StateKind::Density => self.clone(),
            StateKind::Vector => {
                let n = self.data.len();
                let mut rho = vec![ZERO; n * n];
                for i in 0..n {
                    for j in 0..n {
                        rho[i * n + j] = self.data[i] * self.data[j].conj();
                    }
                }
                Self {
                    layout: self.layout.clone(),
                    kind: StateKind::Density,
                    data: rho,
                }
            }
        }
    }

    pub(crate) fn from_parts_unchecked(layout: SystemLayout, kind: StateKind, data: Vec<C64>) -> Self {
        Self { layout, kind, data }
    }

    pub fn layout(&self) -> &SystemLayout {
        &self.layout
    }

    pub fn kind(&self) -> StateKind {
        self.kind
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn dim(&self) -> usize {
        self.layout.total_dim()
    }

    pub fn trace(&self) -> C64 {
        let n = self.dim();
        match self.kind {
            StateKind::Vector => C64::new(self.data.iter().map(|z| z.norm_sqr()).sum(), 0.0),
            StateKind::Density => (0..n).map(|i| self.data[i * n + i]).sum(),
        }
    }

    /// Probability of each basis state.
    pub fn probabilities(&self) -> Vec<f64> {
        let n = self.dim();
        match self.kind {
            StateKind::Vector => self.data.iter().map(|z| z.norm_sqr()).collect(),
            StateKind::Density => (0..n).map(|i| self.data[i * n + i].re).collect(),
        }
    }

    /// Mean excitation of the slot labelled `slot`.
    pub fn population(&self, slot: &str) -> Result<f64> {
        let s = self.layout.slot_index(slot)?;
        Ok(self
            .probabilities()
            .iter()
            .enumerate()
            .map(|(i, p)| p * self.layout.quanta(i, s) as f64)
            .sum())
    }

    pub fn hermiticity_defect(&self) -> f64 {
        match self.kind {
            StateKind::Vector => 0.0,
            StateKind::Density => hermiticity_defect(&self.data, self.dim()),
        }
    }

    /// Smallest eigenvalue of the density matrix (dense, `dim ≤ 256`).
    pub fn min_eigenvalue(&self) -> Result<f64> {
        let n = self.dim();
        if n > DENSE_LIMIT {
            return Err(Error::DenseTooLarge {
                dim: n,
                limit: DENSE_LIMIT,
            });
        }
        Ok(match self.kind {
            StateKind::Vector => 0.0,
            StateKind::Density => min_eigenvalue(&self.data, n),
        })
    }
}

fn hermiticity_defect(data: &[C64], n: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((data[i * n + j] - data[j * n + i].conj()).norm());
        }
    }
    worst
}

fn min_eigenvalue(data: &[C64], n: usize) -> f64 {
    // symmetrize so that rounding noise does not leak into the eigensolver
    let m = DMatrix::from_fn(n, n, |i, j| (data[i * n + j] + data[j * n + i].conj()) * 0.5);
    m.symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `⟨ψ|op|ψ⟩` for vectors, `tr(op·ρ)` for density matrices.
pub fn expectation(op: &Operator, state: &State) -> Result<C64> {
    let n = state.dim();
    if op.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: op.dim(),
        });
    }
    Ok(match state.kind {
        StateKind::Vector => {
            let v = op.apply(&state.data)?;
            state.data.iter().zip(&v).map(|(a, b)| a.conj() * b).sum()
        }
        StateKind::Density => op
            .iter()
            .map(|(i, j, v)| v * state.data[j * n + i])
            .sum(),
    })
}

/// Real expectation of a Hermitian observable.
pub fn expectation_real(op: &Operator, state: &State) -> Result<f64> {
    if !op.is_hermitian(1e-12) {
        return Err(Error::InvalidState(
            "real expectation requested for a non-Hermitian operator".into(),
        ));
    }
    let z = expectation(op, state)?;
    if z.im.abs() > 1e-9 {
        return Err(Error::InvalidState(format!(
            "expectation has imaginary part {:e}",
            z.im
        )));
    }
    Ok(z.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn two_qubits() -> SystemLayout {
        SystemLayout::new(vec![
            ("q1".into(), SlotKind::Qubit, 2),
            ("q2".into(), SlotKind::Qubit, 2),
        ])
        .unwrap()
    }

    fn qubit_mode(d: usize) -> SystemLayout {
        SystemLayout::new(vec![
            ("q1".into(), SlotKind::Qubit, 2),
            ("q2".into(), SlotKind::Qubit, 2),
            ("m".into(), SlotKind::Mode, d),
        ])
        .unwrap()
    }

    #[test]
    fn ladder_two_level() {
        let a = ladder(2).unwrap();
        assert_eq!(a.nnz(), 1);
        assert_eq!(a.get(0, 1), ONE);
        assert_eq!(a.get(1, 0), ZERO);
    }

    #[test]
    fn ladder_three_level() {
        let a = ladder(3).unwrap();
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.get(0, 1), ONE);
        assert_eq!(a.get(1, 2), c(2f64.sqrt()));
    }

    #[test]
    fn ladder_rejects_small_dims() {
        assert!(matches!(ladder(1), Err(Error::InvalidDimension(1))));
        assert!(matches!(ladder(0), Err(Error::InvalidDimension(0))));
    }

    #[test]
    fn number_operator_of_two_level_ladder() {
        let a = ladder(2).unwrap();
        let n = a.adjoint().matmul(&a).unwrap();
        let expected = Operator::identity(2)
            .sub(&sigma_z())
            .unwrap()
            .scale(c(0.5));
        assert_eq!(n, expected);
        assert_eq!(n, Operator::diagonal(&[ZERO, ONE]));
    }

    #[test]
    fn sigma_plus_minus_projects_on_excited() {
        let p = sigma_plus().matmul(&sigma_minus()).unwrap();
        assert_eq!(p, Operator::diagonal(&[ONE, ZERO]));
        assert_eq!(sigma_plus(), ladder(2).unwrap());
        assert_eq!(sigma_minus(), ladder(2).unwrap().adjoint());
    }

    #[test]
    fn truncated_commutator_has_single_defect() {
        for d in 2..7 {
            let a = ladder(d).unwrap();
            let comm = a.matmul(&a.adjoint()).unwrap().sub(&a.adjoint().matmul(&a).unwrap()).unwrap();
            for i in 0..d {
                let expected = if i == d - 1 { c(1.0 - d as f64) } else { ONE };
                // the identity part plus a defect of −d on the last entry
                assert!((comm.get(i, i) - expected).norm() < 1e-14, "d={d} i={i}");
            }
            assert_eq!(comm.nnz(), d);
        }
    }

    #[test]
    fn embed_sigma_minus_on_first_qubit() {
        let layout = two_qubits();
        let e = embed(&sigma_minus(), "q1", &layout).unwrap();
        assert_eq!(e.dim(), 4);
        // σ₋ ⊗ I: |e,x⟩ → |g,x⟩, i.e. index x → 2 + x
        let expected = Operator::from_triplets(4, [(2, 0, ONE), (3, 1, ONE)]).unwrap();
        assert_eq!(e, expected);
    }

    #[test]
    fn embed_identity_is_identity() {
        let layout = qubit_mode(3);
        for slot in ["q1", "q2"] {
            assert_eq!(embed(&Operator::identity(2), slot, &layout).unwrap(), Operator::identity(12));
        }
        assert_eq!(embed(&Operator::identity(3), "m", &layout).unwrap(), Operator::identity(12));
    }

    #[test]
    fn disjoint_slots_commute_exactly() {
        let layout = two_qubits();
        let z1 = embed(&sigma_z(), "q1", &layout).unwrap();
        let z2 = embed(&sigma_z(), "q2", &layout).unwrap();
        assert_eq!(z1.commutator(&z2).unwrap().nnz(), 0);
    }

    #[test]
    fn embed_errors() {
        let layout = two_qubits();
        assert!(matches!(embed(&sigma_z(), "q3", &layout), Err(Error::UnknownSlot(_))));
        assert!(matches!(
            embed(&ladder(3).unwrap(), "q1", &layout),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn expectation_examples() {
        let layout = two_qubits();
        let n1 = embed(&sigma_plus().matmul(&sigma_minus()).unwrap(), "q1", &layout).unwrap();
        let excited = State::basis(layout.clone(), &[("q1", 1)]).unwrap();
        assert_eq!(expectation(&n1, &excited).unwrap(), ONE);

        // maximally mixed single qubit (padded with q2 in |g⟩)
        let mut rho = vec![ZERO; 16];
        let g2 = 1; // q2 ground digit
        rho[g2 * 4 + g2] = c(0.5); // |e,g⟩
        rho[(2 + g2) * 4 + 2 + g2] = c(0.5); // |g,g⟩
        let mixed = State::density(layout.clone(), rho).unwrap();
        assert!((expectation_real(&n1, &mixed).unwrap() - 0.5).abs() < 1e-15);

        let eg = layout.index_of(&[0, 1]).unwrap();
        let ge = layout.index_of(&[1, 0]).unwrap();
        let mut v = vec![ZERO; 4];
        v[eg] = c(std::f64::consts::FRAC_1_SQRT_2);
        v[ge] = c(std::f64::consts::FRAC_1_SQRT_2);
        let bell = State::vector(layout, v).unwrap();
        assert!((expectation_real(&n1, &bell).unwrap() - 0.5).abs() < 1e-15);
        assert!((bell.population("q1").unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn expectation_dimension_mismatch() {
        let state = State::ground(two_qubits());
        assert!(matches!(
            expectation(&Operator::identity(8), &state),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn apply_examples() {
        let v = vec![C64::new(0.3, -0.1), C64::new(-1.2, 0.4), c(2.0)];
        assert_eq!(apply(&Operator::identity(3), &v).unwrap(), v);
        let out = apply(&ladder(2).unwrap(), &[ZERO, ONE]).unwrap();
        assert_eq!(out, vec![ONE, ZERO]);
        assert_eq!(apply(&ladder(4).unwrap(), &[ZERO; 4]).unwrap(), vec![ZERO; 4]);
        assert!(matches!(
            apply(&ladder(4).unwrap(), &[ZERO; 3]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn apply_matches_dense_multiply() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 16;
        let mut dense = vec![ZERO; n * n];
        for z in dense.iter_mut() {
            if rng.gen_bool(0.3) {
                *z = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        let op = Operator::from_triplets(
            n,
            (0..n * n).map(|k| (k / n, k % n, dense[k])),
        )
        .unwrap();
        let v: Vec<C64> = (0..n)
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let got = op.apply(&v).unwrap();
        for i in 0..n {
            let mut acc = ZERO;
            for j in 0..n {
                acc += dense[i * n + j] * v[j];
            }
            assert!((acc - got[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn explicit_zeros_are_dropped() {
        let op = Operator::from_triplets(3, [(0, 1, ONE), (0, 1, -ONE), (2, 2, ZERO)]).unwrap();
        assert_eq!(op.nnz(), 0);
        assert!(Operator::from_triplets(3, [(3, 0, ONE)]).is_err());
    }

    #[test]
    fn layout_rules() {
        assert!(matches!(
            SystemLayout::new(vec![("q1".into(), SlotKind::Qubit, 2)]),
            Err(Error::LayoutTooLarge(_))
        ));
        assert!(SystemLayout::new(vec![
            ("q1".into(), SlotKind::Qubit, 2),
            ("q1".into(), SlotKind::Qubit, 2)
        ])
        .is_err());
        let l = qubit_mode(3);
        assert_eq!(l.total_dim(), 12);
        let idx = l.index_of(&[0, 1, 2]).unwrap();
        assert_eq!(l.quanta(idx, 0), 1);
        assert_eq!(l.quanta(idx, 1), 0);
        assert_eq!(l.quanta(idx, 2), 2);
        assert_eq!(l.total_quanta()[idx], 3);
    }

    #[test]
    fn density_validation() {
        let layout = two_qubits();
        let mut rho = vec![ZERO; 16];
        rho[0] = c(1.2);
        rho[5] = c(-0.2);
        // trace one and Hermitian, but not positive
        assert!(State::density(layout.clone(), rho).is_err());
        let ok = State::ground(layout).to_density();
        assert!(ok.min_eigenvalue().unwrap() > -1e-12);
    }
}
