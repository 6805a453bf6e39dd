//! Bars-and-stripes dataset.
//!
//! A `side x side` grid is flattened row-major. Bars have constant rows,
//! stripes constant columns. The last two cells are overwritten with the
//! label: `01` for a bar, `10` for a stripe. The all-zero and all-one grids
//! satisfy both predicates and are excluded.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::gibbs::ClampMask;
use crate::rbm::BinaryVector;
use crate::rng::{self, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Bar,
    Stripe,
}

impl Label {
    /// The two label bits `(L1, L2)`.
    pub fn bits(self) -> (u8, u8) {
        match self {
            Label::Bar => (0, 1),
            Label::Stripe => (1, 0),
        }
    }

    pub fn from_bits(l1: u8, l2: u8) -> Option<Label> {
        match (l1, l2) {
            (0, 1) => Some(Label::Bar),
            (1, 0) => Some(Label::Stripe),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Bar => "bar",
            Label::Stripe => "stripe",
        }
    }
}

/// One labeled grid.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BasRecord {
    pub bits: BinaryVector,
    pub label: Label,
}

impl BasRecord {
    pub fn side(&self) -> usize {
        (self.bits.len() as f64).sqrt().round() as usize
    }

    /// Indices of the two label cells.
    pub fn label_positions(&self) -> [usize; 2] {
        let n = self.bits.len();
        [n - 2, n - 1]
    }

    /// Label bits agree with `label`, and the remaining cells form constant
    /// rows (bar) or constant columns (stripe).
    pub fn is_consistent(&self) -> bool {
        let side = self.side();
        if side < 2 || side * side != self.bits.len() {
            return false;
        }
        let [l1, l2] = self.label_positions();
        if Label::from_bits(self.bits.get(l1), self.bits.get(l2)) != Some(self.label) {
            return false;
        }
        let is_label_cell = |r: usize, c: usize| r == side - 1 && c >= side - 2;
        let cell = |r: usize, c: usize| self.bits.get(r * side + c);
        match self.label {
            Label::Bar => (0..side).all(|r| {
                let cells: Vec<u8> = (0..side).filter(|&c| !is_label_cell(r, c)).map(|c| cell(r, c)).collect();
                cells.windows(2).all(|w| w[0] == w[1])
            }),
            Label::Stripe => (0..side).all(|c| {
                let cells: Vec<u8> = (0..side).filter(|&r| !is_label_cell(r, c)).map(|r| cell(r, c)).collect();
                cells.windows(2).all(|w| w[0] == w[1])
            }),
        }
    }

    /// The first `n - 2` bits, i.e. everything but the label.
    pub fn features(&self) -> &[u8] {
        &self.bits.as_slice()[..self.bits.len() - 2]
    }

    /// Dataset line: bits followed by ` #bar` or ` #stripe`.
    pub fn to_line(&self) -> String {
        format!("{} #{}", self.bits, self.label.name())
    }

    /// 8x8-style ASCII grid, one row per line, `#` for 1 and `.` for 0.
    pub fn grid(bits: &BinaryVector) -> String {
        let side = (bits.len() as f64).sqrt().round() as usize;
        let mut out = String::new();
        for r in 0..side {
            for c in 0..side {
                out.push(if bits.get(r * side + c) == 1 { '#' } else { '.' });
            }
            out.push('\n');
        }
        out
    }
}

fn label_grid(mut grid: Vec<u8>, label: Label) -> BasRecord {
    let n = grid.len();
    let (l1, l2) = label.bits();
    grid[n - 2] = l1;
    grid[n - 1] = l2;
    BasRecord {
        bits: BinaryVector::new(grid).expect("grid cells are binary"),
        label,
    }
}

/// Every distinct labeled pattern for `side`, bars first.
pub fn pool(side: usize) -> Result<Vec<BasRecord>> {
    if !(2..=31).contains(&side) {
        return Err(Error::InvalidArgument(format!("side must be in 2..=31, got {side}")));
    }
    let full = (1u64 << side) - 1;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for label in [Label::Bar, Label::Stripe] {
        for mask in 1..full {
            let grid: Vec<u8> = (0..side * side)
                .map(|k| {
                    let (r, c) = (k / side, k % side);
                    let line = if label == Label::Bar { r } else { c };
                    ((mask >> line) & 1) as u8
                })
                .collect();
            let rec = label_grid(grid, label);
            if seen.insert(rec.bits.clone()) {
                out.push(rec);
            }
        }
    }
    Ok(out)
}

/// `n_records` distinct records sampled uniformly without replacement.
pub fn generate_bas(side: usize, n_records: usize, seed: u64) -> Result<Vec<BasRecord>> {
    let pool = pool(side)?;
    if n_records > pool.len() {
        return Err(Error::Capacity(format!(
            "requested {n_records} records but side {side} has only {} unique patterns",
            pool.len()
        )));
    }
    let mut rng = rng::stream(seed, &[tag::DATA]);
    Ok(pool.choose_multiple(&mut rng, n_records).cloned().collect())
}

/// Train/test partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BasDataset {
    pub train: Vec<BasRecord>,
    pub test: Vec<BasRecord>,
}

impl BasDataset {
    pub fn train_bits(&self) -> Vec<BinaryVector> {
        self.train.iter().map(|r| r.bits.clone()).collect()
    }

    pub fn test_bits(&self) -> Vec<BinaryVector> {
        self.test.iter().map(|r| r.bits.clone()).collect()
    }
}

/// Seeded shuffle; the first `n_train` records become the training set.
pub fn split(records: &[BasRecord], n_train: usize, seed: u64) -> Result<BasDataset> {
    if n_train >= records.len() {
        return Err(Error::InvalidArgument(format!(
            "training size {n_train} must be smaller than the {} available records",
            records.len()
        )));
    }
    let mut shuffled = records.to_vec();
    shuffled.shuffle(&mut rng::stream(seed, &[tag::SHUFFLE]));
    let test = shuffled.split_off(n_train);
    Ok(BasDataset { train: shuffled, test })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorruptMode {
    /// Replace each listed bit by a fair coin.
    Randomize,
    /// Invert each listed bit.
    Flip,
}

/// Corrupts `positions` of `r` and returns the corrupted vector with a mask
/// clamping every uncorrupted position to its original value.
pub fn corrupt(
    r: &BasRecord,
    positions: &BTreeSet<usize>,
    mode: CorruptMode,
    seed: u64,
) -> Result<(BinaryVector, ClampMask)> {
    let n = r.bits.len();
    if let Some(&bad) = positions.iter().find(|&&p| p >= n) {
        return Err(Error::InvalidArgument(format!("corruption position {bad} outside 0..{n}")));
    }
    let mut rng = rng::stream(seed, &[tag::CORRUPT]);
    let mut out = r.bits.clone();
    for &p in positions {
        match mode {
            CorruptMode::Randomize => out.set(p, rng.gen::<bool>()),
            CorruptMode::Flip => out.flip(p),
        }
    }
    let clamped = (0..n).map(|i| !positions.contains(&i)).collect();
    let mask = ClampMask::new(clamped, r.bits.clone())?;
    Ok((out, mask))
}

/// Positions of the `size x size` block whose top-left cell is `(row, col)`.
pub fn block_positions(side: usize, row: usize, col: usize, size: usize) -> BTreeSet<usize> {
    (row..row + size)
        .flat_map(|r| (col..col + size).map(move |c| r * side + c))
        .collect()
}

/// Writes records one per line.
pub fn write_records(records: &[BasRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(out, "{}", r.to_line());
    }
    out
}

/// Parses a dataset file. Each line holds a bit string and an optional
/// `#bar` / `#stripe` comment; without the comment the label is read from
/// the label bits.
pub fn read_records<R: BufRead>(input: R) -> Result<Vec<BasRecord>> {
    let mut out = Vec::new();
    let mut width = None;
    for (n, line) in input.lines().enumerate() {
        let n = n + 1;
        let line = line?;
        let (body, comment) = match line.split_once('#') {
            Some((b, c)) => (b.trim(), Some(c.trim())),
            None => (line.trim(), None),
        };
        if body.is_empty() {
            continue;
        }
        let bits: BinaryVector = body.parse().map_err(|e| Error::parse(n, format!("{e}")))?;
        if bits.len() < 4 {
            return Err(Error::parse(n, "record too short"));
        }
        match width {
            None => width = Some(bits.len()),
            Some(w) if w != bits.len() => {
                return Err(Error::parse(n, format!("record has {} bits, previous records have {w}", bits.len())))
            }
            _ => {}
        }
        let from_bits = Label::from_bits(bits.get(bits.len() - 2), bits.get(bits.len() - 1))
            .ok_or_else(|| Error::parse(n, "label bits must be 01 (bar) or 10 (stripe)"))?;
        if let Some(c) = comment {
            let named = match c {
                "bar" => Label::Bar,
                "stripe" => Label::Stripe,
                other => return Err(Error::parse(n, format!("unknown label comment {other:?}"))),
            };
            if named != from_bits {
                return Err(Error::parse(n, "label comment disagrees with label bits"));
            }
        }
        out.push(BasRecord { bits, label: from_bits });
    }
    Ok(out)
}
