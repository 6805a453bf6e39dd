//! Chimera qubit topology and the bipartite chain embedding of an RBM.
//!
//! A `C_m` graph is an `m x m` grid of unit cells. Each cell holds two
//! partitions of four qubits joined as a complete bipartite `K(4,4)`.
//! Left-partition qubits also couple to the same offset in the cells above
//! and below; right-partition qubits couple to the cells left and right.
//!
//! Visible units become vertical chains of left-partition qubits and hidden
//! units horizontal chains of right-partition qubits. Visible chain `i` and
//! hidden chain `j` cross in exactly one cell, where the intra-cell coupler
//! carries the logical weight `w_ij`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::BufRead;

use crate::error::{Error, Result};
use crate::rbm::BinaryVector;

/// Ferromagnetic coupling that binds the qubits of a chain.
pub const DEFAULT_CHAIN_COUPLING: f64 = -1.0;

/// Cell partition of a qubit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Partition {
    /// Left column of the cell; couples vertically between cells.
    Vertical = 0,
    /// Right column of the cell; couples horizontally between cells.
    Horizontal = 1,
}

/// Coordinates of a qubit: `(cell_row, cell_col, partition, offset)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct QubitCoord {
    pub row: usize,
    pub col: usize,
    pub partition: Partition,
    pub offset: usize,
}

/// A Chimera graph with optional dead (unusable) qubits.
#[derive(Clone, Debug)]
pub struct ChimeraGraph {
    m: usize,
    dead: BTreeSet<usize>,
}

impl ChimeraGraph {
    pub fn new(m: usize, dead: impl IntoIterator<Item = usize>) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("Chimera grid size must be at least 1".into()));
        }
        let dead: BTreeSet<usize> = dead.into_iter().collect();
        let n = 8 * m * m;
        if let Some(&bad) = dead.iter().find(|&&q| q >= n) {
            return Err(Error::InvalidArgument(format!(
                "dead qubit {bad} is outside C{m} (valid range 0..{n})"
            )));
        }
        Ok(ChimeraGraph { m, dead })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn num_qubits(&self) -> usize {
        8 * self.m * self.m
    }

    pub fn dead(&self) -> &BTreeSet<usize> {
        &self.dead
    }

    pub fn is_live(&self, q: usize) -> bool {
        q < self.num_qubits() && !self.dead.contains(&q)
    }

    /// Flattened index, row-major over `(cell_row, cell_col, partition, offset)`.
    pub fn index(&self, c: QubitCoord) -> usize {
        debug_assert!(c.row < self.m && c.col < self.m && c.offset < 4);
        ((c.row * self.m + c.col) * 2 + c.partition as usize) * 4 + c.offset
    }

    pub fn coord(&self, q: usize) -> QubitCoord {
        let offset = q % 4;
        let partition = if (q / 4) % 2 == 0 {
            Partition::Vertical
        } else {
            Partition::Horizontal
        };
        let cell = q / 8;
        QubitCoord {
            row: cell / self.m,
            col: cell % self.m,
            partition,
            offset,
        }
    }

    /// Neighbours in the full topology, ignoring dead qubits.
    fn topology_neighbors(&self, q: usize) -> Vec<usize> {
        let c = self.coord(q);
        let mut out = Vec::with_capacity(6);
        let other = match c.partition {
            Partition::Vertical => Partition::Horizontal,
            Partition::Horizontal => Partition::Vertical,
        };
        for k in 0..4 {
            out.push(self.index(QubitCoord {
                partition: other,
                offset: k,
                ..c
            }));
        }
        match c.partition {
            Partition::Vertical => {
                if c.row > 0 {
                    out.push(self.index(QubitCoord { row: c.row - 1, ..c }));
                }
                if c.row + 1 < self.m {
                    out.push(self.index(QubitCoord { row: c.row + 1, ..c }));
                }
            }
            Partition::Horizontal => {
                if c.col > 0 {
                    out.push(self.index(QubitCoord { col: c.col - 1, ..c }));
                }
                if c.col + 1 < self.m {
                    out.push(self.index(QubitCoord { col: c.col + 1, ..c }));
                }
            }
        }
        out
    }

    /// Live neighbours of a live qubit; empty for dead qubits.
    pub fn neighbors(&self, q: usize) -> Vec<usize> {
        if !self.is_live(q) {
            return Vec::new();
        }
        self.topology_neighbors(q)
            .into_iter()
            .filter(|&n| self.is_live(n))
            .collect()
    }

    pub fn degree(&self, q: usize) -> usize {
        self.neighbors(q).len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.is_live(a) && self.is_live(b) && self.topology_neighbors(a).contains(&b)
    }

    /// All live couplers as `(a, b)` with `a < b`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for a in 0..self.num_qubits() {
            for b in self.neighbors(a) {
                if a < b {
                    out.push((a, b));
                }
            }
        }
        out
    }
}

/// Reads a dead-qubit list: one integer per line; blank lines and `#`
/// comments are ignored.
pub fn read_dead_qubits<R: BufRead>(input: R) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        out.push(
            body.parse()
                .map_err(|_| Error::parse(n + 1, format!("{body:?} is not a qubit index")))?,
        );
    }
    Ok(out)
}

/// A logical RBM unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Unit {
    Visible(usize),
    Hidden(usize),
}

impl std::fmt::Display for Unit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Unit::Visible(k) => write!(f, "V{k}"),
            Unit::Hidden(k) => write!(f, "H{k}"),
        }
    }
}

/// Mapping from RBM units to qubit chains.
#[derive(Clone, Debug)]
pub struct ChimeraEmbedding {
    n_visible: usize,
    n_hidden: usize,
    /// Visible chains followed by hidden chains, each in chain order.
    chains: Vec<Vec<usize>>,
    chain_coupling: f64,
    /// Physical coupler `(visible qubit, hidden qubit)` per logical edge,
    /// indexed `i * n_hidden + j`.
    couplers: Vec<Option<(usize, usize)>>,
    /// Qubits removed from chains by the dead-qubit policy.
    trimmed_qubits: Vec<(Unit, usize)>,
}

/// Embeds an `n_visible x n_hidden` RBM on `g`.
///
/// Visible unit `k` runs down cell column `k / 4` at offset `k % 4`; hidden
/// unit `k` runs across cell row `k / 4` at offset `k % 4`. Chains span only
/// the cells where the opposite layer has chains, so a full `4m x 4m`
/// request uses every qubit and smaller requests use fewer.
///
/// Dead qubits split chains into segments. The longest segment is kept
/// (the first one on ties); logical edges whose crossing qubit is lost are
/// dropped and logged. A unit with no live qubit is an error.
pub fn embed_rbm(
    g: &ChimeraGraph,
    n_visible: usize,
    n_hidden: usize,
    chain_coupling: f64,
) -> Result<ChimeraEmbedding> {
    let cap = 4 * g.m();
    if n_visible == 0 || n_hidden == 0 {
        return Err(Error::InvalidArgument("layer sizes must be positive".into()));
    }
    if n_visible > cap || n_hidden > cap {
        return Err(Error::Capacity(format!(
            "C{} holds at most {cap} units per layer, requested {n_visible} visible x {n_hidden} hidden",
            g.m()
        )));
    }
    let rows = n_hidden.div_ceil(4);
    let cols = n_visible.div_ceil(4);

    let mut chains = Vec::with_capacity(n_visible + n_hidden);
    let mut trimmed_qubits = Vec::new();
    let mut full_chains = Vec::with_capacity(n_visible + n_hidden);
    for k in 0..n_visible {
        let full: Vec<usize> = (0..rows)
            .map(|row| {
                g.index(QubitCoord {
                    row,
                    col: k / 4,
                    partition: Partition::Vertical,
                    offset: k % 4,
                })
            })
            .collect();
        full_chains.push((Unit::Visible(k), full));
    }
    for k in 0..n_hidden {
        let full: Vec<usize> = (0..cols)
            .map(|col| {
                g.index(QubitCoord {
                    row: k / 4,
                    col,
                    partition: Partition::Horizontal,
                    offset: k % 4,
                })
            })
            .collect();
        full_chains.push((Unit::Hidden(k), full));
    }
    for (unit, full) in full_chains {
        let kept = longest_live_segment(g, &full);
        if kept.is_empty() {
            return Err(Error::Embedding(format!(
                "unit {unit}: every qubit of its chain is dead ({full:?})"
            )));
        }
        for &q in &full {
            if !kept.contains(&q) {
                trimmed_qubits.push((unit, q));
                if g.is_live(q) {
                    log::warn!("unit {unit}: live qubit {q} dropped with a disconnected chain segment");
                }
            }
        }
        chains.push(kept);
    }

    let mut couplers = vec![None; n_visible * n_hidden];
    for i in 0..n_visible {
        for j in 0..n_hidden {
            let cell = (j / 4, i / 4);
            let vq = g.index(QubitCoord {
                row: cell.0,
                col: cell.1,
                partition: Partition::Vertical,
                offset: i % 4,
            });
            let hq = g.index(QubitCoord {
                row: cell.0,
                col: cell.1,
                partition: Partition::Horizontal,
                offset: j % 4,
            });
            if chains[i].contains(&vq) && chains[n_visible + j].contains(&hq) && g.has_edge(vq, hq) {
                couplers[i * n_hidden + j] = Some((vq, hq));
            } else {
                log::warn!("logical edge V{i}-H{j} dropped: crossing qubit unavailable");
            }
        }
    }

    Ok(ChimeraEmbedding {
        n_visible,
        n_hidden,
        chains,
        chain_coupling,
        couplers,
        trimmed_qubits,
    })
}

fn longest_live_segment(g: &ChimeraGraph, chain: &[usize]) -> Vec<usize> {
    let mut best: &[usize] = &[];
    for seg in chain.split(|&q| !g.is_live(q)) {
        if seg.len() > best.len() {
            best = seg;
        }
    }
    best.to_vec()
}

impl ChimeraEmbedding {
    pub fn n_visible(&self) -> usize {
        self.n_visible
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn chain_coupling(&self) -> f64 {
        self.chain_coupling
    }

    pub fn chain(&self, unit: Unit) -> &[usize] {
        match unit {
            Unit::Visible(k) => &self.chains[k],
            Unit::Hidden(k) => &self.chains[self.n_visible + k],
        }
    }

    /// All chains, visible units first.
    pub fn chains(&self) -> impl Iterator<Item = (Unit, &[usize])> {
        self.chains.iter().enumerate().map(move |(k, c)| {
            let unit = if k < self.n_visible {
                Unit::Visible(k)
            } else {
                Unit::Hidden(k - self.n_visible)
            };
            (unit, c.as_slice())
        })
    }

    /// Physical coupler carrying `w_ij`, if the edge survived embedding.
    pub fn coupler(&self, i: usize, j: usize) -> Option<(usize, usize)> {
        self.couplers[i * self.n_hidden + j]
    }

    pub fn mapped_edge_count(&self) -> usize {
        self.couplers.iter().filter(|c| c.is_some()).count()
    }

    /// Logical edges with no physical coupler.
    pub fn dropped_edges(&self) -> Vec<(usize, usize)> {
        (0..self.n_visible)
            .flat_map(|i| (0..self.n_hidden).map(move |j| (i, j)))
            .filter(|&(i, j)| self.coupler(i, j).is_none())
            .collect()
    }

    pub fn trimmed_qubits(&self) -> &[(Unit, usize)] {
        &self.trimmed_qubits
    }

    pub fn qubits_used(&self) -> usize {
        self.chains.iter().map(Vec::len).sum()
    }

    /// Consecutive qubit pairs inside each chain.
    pub fn chain_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.chains
            .iter()
            .flat_map(|c| c.windows(2).map(|w| (w[0], w[1])))
    }

    /// Checks the structural invariants against `g`.
    pub fn validate(&self, g: &ChimeraGraph) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (unit, chain) in self.chains() {
            let want = match unit {
                Unit::Visible(_) => Partition::Vertical,
                Unit::Hidden(_) => Partition::Horizontal,
            };
            for &q in chain {
                if !g.is_live(q) {
                    return Err(Error::Embedding(format!("unit {unit} uses unusable qubit {q}")));
                }
                if g.coord(q).partition != want {
                    return Err(Error::Embedding(format!("unit {unit} uses qubit {q} from the wrong partition")));
                }
                if !seen.insert(q) {
                    return Err(Error::Embedding(format!("qubit {q} is shared between chains")));
                }
            }
            if !chain.windows(2).all(|w| g.has_edge(w[0], w[1])) {
                return Err(Error::Embedding(format!("chain of unit {unit} is not connected")));
            }
        }
        for i in 0..self.n_visible {
            for j in 0..self.n_hidden {
                if let Some((a, b)) = self.coupler(i, j) {
                    let ok = self.chains[i].contains(&a)
                        && self.chains[self.n_visible + j].contains(&b)
                        && g.has_edge(a, b);
                    if !ok {
                        return Err(Error::Embedding(format!("edge V{i}-H{j} maps to an invalid coupler")));
                    }
                }
            }
        }
        Ok(())
    }

    /// One line per unit: `V<k>: q1 q2 ...` then `H<k>: ...`.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for (unit, chain) in self.chains() {
            let _ = write!(out, "{unit}:");
            for q in chain {
                let _ = write!(out, " {q}");
            }
            out.push('\n');
        }
        out
    }
}

/// Logical state recovered from one physical read.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResolvedSample {
    pub v: BinaryVector,
    pub h: BinaryVector,
    pub broken_chains: usize,
}

/// Majority vote over each chain's spins.
///
/// An exact tie takes the spin of the lowest-indexed qubit in the chain.
/// `raw_spins` is indexed by physical qubit and holds `-1` or `+1`.
pub fn resolve_chains(raw_spins: &[i8], e: &ChimeraEmbedding) -> ResolvedSample {
    let mut bits = Vec::with_capacity(e.n_visible + e.n_hidden);
    let mut broken = 0;
    for chain in &e.chains {
        let up = chain.iter().filter(|&&q| raw_spins[q] > 0).count();
        let down = chain.len() - up;
        if up > 0 && down > 0 {
            broken += 1;
        }
        let bit = match up.cmp(&down) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => {
                let lowest = *chain.iter().min().expect("chains are non-empty");
                raw_spins[lowest] > 0
            }
        };
        bits.push(bit);
    }
    let h = BinaryVector::from_bools(bits.split_off(e.n_visible));
    ResolvedSample {
        v: BinaryVector::from_bools(bits),
        h,
        broken_chains: broken,
    }
}
