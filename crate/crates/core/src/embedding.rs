//! Dense embedding storage, its binary mask, and the masked optimizer step.
//!
//! Positions are flat row-major indices into the `(N + M) x d` table. Rows
//! `0..N` hold users and rows `N..N+M` hold items.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of active positions for a table of `total` entries at sparsity `s`,
/// rounded half-to-even.
pub fn active_budget(total: usize, sparsity: f64) -> usize {
    (total as f64 * (1.0 - sparsity)).round_ties_even() as usize
}

fn check_sparsity(s: f64) -> Result<()> {
    if (0.0..1.0).contains(&s) {
        Ok(())
    } else {
        Err(Error::InvalidSparsity(s))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    weights: Vec<f64>,
    num_users: usize,
    num_items: usize,
    dim: usize,
}

impl EmbeddingTable {
    pub fn zeros(num_users: usize, num_items: usize, dim: usize) -> Self {
        Self {
            weights: vec![0.0; (num_users + num_items) * dim],
            num_users,
            num_items,
            dim,
        }
    }

    /// Every entry drawn independently from `N(0, std^2)`.
    pub fn random_normal<R: Rng + ?Sized>(
        num_users: usize,
        num_items: usize,
        dim: usize,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let normal = Normal::new(0.0, std).expect("standard deviation must be finite and >= 0");
        let weights = (0..(num_users + num_items) * dim)
            .map(|_| normal.sample(rng))
            .collect();
        Self {
            weights,
            num_users,
            num_items,
            dim,
        }
    }

    pub fn from_weights(
        num_users: usize,
        num_items: usize,
        dim: usize,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let rows = num_users + num_items;
        if weights.len() != rows * dim {
            return Err(Error::ShapeMismatch {
                expected: (rows, dim),
                found: (weights.len() / dim.max(1), dim),
            });
        }
        Ok(Self {
            weights,
            num_users,
            num_items,
            dim,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn rows(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows(), self.dim)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.dim..(r + 1) * self.dim]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.weights[r * self.dim..(r + 1) * self.dim]
    }

    pub fn user(&self, u: usize) -> &[f64] {
        self.row(u)
    }

    pub fn item(&self, i: usize) -> &[f64] {
        self.row(self.num_users + i)
    }

    pub fn item_row_index(&self, i: usize) -> usize {
        self.num_users + i
    }
}

/// Bitset companion of an [`EmbeddingTable`] marking trainable positions.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMask {
    words: Vec<u64>,
    rows: usize,
    dim: usize,
    active: usize,
    target_sparsity: f64,
}

impl SparseMask {
    pub fn all_active(rows: usize, dim: usize) -> Self {
        let mut mask = Self::empty(rows, dim, 0.0);
        for p in 0..rows * dim {
            mask.activate(p);
        }
        mask
    }

    fn empty(rows: usize, dim: usize, target_sparsity: f64) -> Self {
        Self {
            words: vec![0; (rows * dim).div_ceil(64)],
            rows,
            dim,
            active: 0,
            target_sparsity,
        }
    }

    /// Uniformly random mask with exactly `active_budget(rows * d, s)` bits set.
    pub fn random<R: Rng + ?Sized>(shape: (usize, usize), s: f64, rng: &mut R) -> Result<Self> {
        check_sparsity(s)?;
        let (rows, dim) = shape;
        let total = rows * dim;
        let mut mask = Self::empty(rows, dim, s);
        for p in rand::seq::index::sample(rng, total, active_budget(total, s)) {
            mask.activate(p);
        }
        Ok(mask)
    }

    /// Mask from an explicit set of active positions.
    pub fn from_positions(
        shape: (usize, usize),
        target_sparsity: f64,
        positions: impl IntoIterator<Item = usize>,
    ) -> Self {
        let mut mask = Self::empty(shape.0, shape.1, target_sparsity);
        for p in positions {
            mask.activate(p);
        }
        mask
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.dim)
    }

    pub fn len(&self) -> usize {
        self.rows * self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn active_count(&self) -> usize {
        self.active
    }

    pub fn inactive_count(&self) -> usize {
        self.len() - self.active
    }

    pub fn target_sparsity(&self) -> f64 {
        self.target_sparsity
    }

    /// Fraction of inactive positions.
    pub fn sparsity(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.inactive_count() as f64 / self.len() as f64
        }
    }

    #[inline]
    pub fn is_active(&self, p: usize) -> bool {
        self.words[p / 64] >> (p % 64) & 1 == 1
    }

    /// Sets bit `p`; returns whether it was previously clear.
    pub fn activate(&mut self, p: usize) -> bool {
        let bit = 1u64 << (p % 64);
        let word = &mut self.words[p / 64];
        let newly = *word & bit == 0;
        *word |= bit;
        self.active += newly as usize;
        newly
    }

    /// Clears bit `p`; returns whether it was previously set.
    pub fn deactivate(&mut self, p: usize) -> bool {
        let bit = 1u64 << (p % 64);
        let word = &mut self.words[p / 64];
        let was = *word & bit != 0;
        *word &= !bit;
        self.active -= was as usize;
        was
    }

    pub fn popcount(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Active positions in ascending order.
    pub fn active_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.words
            .iter()
            .enumerate()
            .flat_map(|(wi, &word)| SetBits(word).map(move |b| wi * 64 + b))
    }

    pub(crate) fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn inactive_positions(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&p| !self.is_active(p))
    }

    pub fn row_active_count(&self, r: usize) -> usize {
        (r * self.dim..(r + 1) * self.dim)
            .filter(|&p| self.is_active(p))
            .count()
    }

    /// Size of the packed bitset in bytes.
    pub fn storage_bytes(&self) -> usize {
        self.len().div_ceil(8)
    }

    fn check_shape(&self, shape: (usize, usize)) -> Result<()> {
        if self.shape() == shape {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected: self.shape(),
                found: shape,
            })
        }
    }
}

/// Iterator over the set bit indices of one word, lowest first.
struct SetBits(u64);

impl Iterator for SetBits {
    type Item = usize;

    #[inline]
    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let b = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(b)
    }
}

pub fn init_mask<R: Rng + ?Sized>(
    shape: (usize, usize),
    s: f64,
    rng: &mut R,
) -> Result<SparseMask> {
    SparseMask::random(shape, s, rng)
}

/// Zeroes every weight at an inactive position.
pub fn apply_mask(table: &mut EmbeddingTable, mask: &SparseMask) -> Result<()> {
    mask.check_shape(table.shape())?;
    for (p, w) in table.weights.iter_mut().enumerate() {
        if !mask.is_active(p) {
            *w = 0.0;
        }
    }
    Ok(())
}

/// Largest absolute weight at an inactive position (zero when the mask holds).
pub fn max_inactive_magnitude(table: &EmbeddingTable, mask: &SparseMask) -> f64 {
    table
        .weights
        .iter()
        .enumerate()
        .filter(|(p, _)| !mask.is_active(*p))
        .map(|(_, w)| w.abs())
        .fold(0.0, f64::max)
}

/// Table-shaped gradient accumulator that remembers which rows were written.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    values: Vec<f64>,
    rows: usize,
    dim: usize,
    touched: Vec<bool>,
    touched_rows: Vec<usize>,
}

impl Gradient {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            values: vec![0.0; rows * dim],
            rows,
            dim,
            touched: vec![false; rows],
            touched_rows: Vec::new(),
        }
    }

    pub fn for_table(table: &EmbeddingTable) -> Self {
        Self::zeros(table.rows(), table.dim())
    }

    /// Wraps a fully dense gradient.
    pub fn from_dense(rows: usize, dim: usize, values: Vec<f64>) -> Self {
        assert_eq!(
            values.len(),
            rows * dim,
            "gradient length must equal rows * dim"
        );
        Self {
            values,
            rows,
            dim,
            touched: vec![true; rows],
            touched_rows: (0..rows).collect(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.dim)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, p: usize) -> f64 {
        self.values[p]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.dim..(r + 1) * self.dim]
    }

    /// Mutable row access; marks the row as touched.
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        if !self.touched[r] {
            self.touched[r] = true;
            self.touched_rows.push(r);
        }
        &mut self.values[r * self.dim..(r + 1) * self.dim]
    }

    /// Rows that may hold nonzero entries, in first-touch order.
    pub fn touched_rows(&self) -> &[usize] {
        &self.touched_rows
    }

    /// Zeroes the touched rows.
    pub fn clear(&mut self) {
        for &r in &self.touched_rows {
            self.values[r * self.dim..(r + 1) * self.dim].fill(0.0);
            self.touched[r] = false;
        }
        self.touched_rows.clear();
    }

    fn check_finite(&self) -> Result<()> {
        for &r in &self.touched_rows {
            for (c, &g) in self.row(r).iter().enumerate() {
                if !g.is_finite() {
                    return Err(Error::NonFiniteGradient {
                        row: r,
                        col: c,
                        value: g,
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(format!(
                "unknown optimizer '{other}' (expected sgd or adam)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr, 0)
    }

    pub fn adam(lr: f64, len: usize) -> Self {
        Self::new(OptimizerKind::Adam, lr, len)
    }

    pub fn new(kind: OptimizerKind, lr: f64, len: usize) -> Self {
        let moments = match kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam => len,
        };
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            step: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// First and second moments (empty for SGD).
    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// Zeroes the moments at the given positions.
    pub fn reset_positions(&mut self, positions: &[usize]) {
        if self.kind == OptimizerKind::Adam {
            for &p in positions {
                self.m[p] = 0.0;
                self.v[p] = 0.0;
            }
        }
    }

    /// Zeroes the moments wherever the mask is inactive.
    pub fn reset_inactive(&mut self, mask: &SparseMask) {
        if self.kind == OptimizerKind::Adam {
            for p in mask.inactive_positions() {
                self.m[p] = 0.0;
                self.v[p] = 0.0;
            }
        }
    }
}

/// One optimizer update restricted to active positions.
///
/// The gradient is checked for non-finite entries before anything is
/// written, so a failed step leaves the table untouched.
pub fn masked_step(
    table: &mut EmbeddingTable,
    grad: &Gradient,
    mask: &SparseMask,
    opt: &mut OptimizerState,
) -> Result<()> {
    mask.check_shape(table.shape())?;
    if grad.shape() != table.shape() {
        return Err(Error::ShapeMismatch {
            expected: table.shape(),
            found: grad.shape(),
        });
    }
    if opt.lr.is_nan() || opt.lr <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "learning rate must be positive, got {}",
            opt.lr
        )));
    }
    grad.check_finite()?;
    opt.step += 1;
    let dim = table.dim;
    match opt.kind {
        OptimizerKind::Sgd => {
            for &r in &grad.touched_rows {
                for p in r * dim..(r + 1) * dim {
                    if mask.is_active(p) {
                        table.weights[p] -= opt.lr * grad.values[p];
                    }
                }
            }
        }
        OptimizerKind::Adam => {
            if opt.m.len() != table.len() {
                return Err(Error::ShapeMismatch {
                    expected: table.shape(),
                    found: (opt.m.len() / dim.max(1), dim),
                });
            }
            let (b1, b2) = (opt.beta1, opt.beta2);
            let bias1 = 1.0 - b1.powi(opt.step as i32);
            let bias2 = 1.0 - b2.powi(opt.step as i32);
            let step_size = opt.lr / bias1;
            for p in mask.active_positions() {
                let g = grad.values[p];
                let m = b1 * opt.m[p] + (1.0 - b1) * g;
                let v = b2 * opt.v[p] + (1.0 - b2) * g * g;
                opt.m[p] = m;
                opt.v[p] = v;
                table.weights[p] -= step_size * m / ((v / bias2).sqrt() + opt.eps);
            }
        }
    }
    Ok(())
}

/// Serialized sparse table: dimensions plus active entries in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub dim: usize,
    pub num_users: usize,
    pub num_items: usize,
    pub sparsity: f64,
    /// `(row, col, value)` for every active position.
    pub entries: Vec<(usize, usize, f64)>,
}

impl Checkpoint {
    pub fn capture(table: &EmbeddingTable, mask: &SparseMask) -> Self {
        let dim = table.dim;
        let entries = mask
            .active_positions()
            .map(|p| (p / dim, p % dim, table.weights[p]))
            .collect();
        Self {
            dim,
            num_users: table.num_users,
            num_items: table.num_items,
            sparsity: mask.target_sparsity,
            entries,
        }
    }

    pub fn restore(&self) -> Result<(EmbeddingTable, SparseMask)> {
        let rows = self.num_users + self.num_items;
        let mut table = EmbeddingTable::zeros(self.num_users, self.num_items, self.dim);
        let mut mask = SparseMask::empty(rows, self.dim, self.sparsity);
        let mut last = None;
        for &(r, c, v) in &self.entries {
            if r >= rows || c >= self.dim {
                return Err(Error::Checkpoint(format!(
                    "entry ({r}, {c}) outside {rows}x{}",
                    self.dim
                )));
            }
            let p = r * self.dim + c;
            if last.is_some_and(|q| q >= p) {
                return Err(Error::Checkpoint(format!(
                    "entry ({r}, {c}) out of row-major order"
                )));
            }
            last = Some(p);
            table.weights[p] = v;
            mask.activate(p);
        }
        Ok((table, mask))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}
