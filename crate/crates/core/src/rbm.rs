//! RBM parameterization and exact probabilistic quantities.
//!
//! Energies follow `E(v,h) = -b.v - c.h - v^T W h` over binary units. All
//! normalizers are computed in the log domain: the partition function is
//! obtained by enumerating the hidden layer and marginalizing the visible
//! layer analytically, which costs `2^n_hidden * n_visible`.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::math::{log_sum_exp_pair, sigmoid, softplus, LogSumExp};
use crate::rng::Rng;

/// Largest hidden layer for which exact normalizers are computed.
pub const EXACT_HIDDEN_CAP: usize = 25;

/// A fixed-length vector of 0/1 values.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BinaryVector(Vec<u8>);

impl BinaryVector {
    pub fn zeros(len: usize) -> Self {
        BinaryVector(vec![0; len])
    }

    pub fn ones(len: usize) -> Self {
        BinaryVector(vec![1; len])
    }

    /// Builds from raw bits; every entry must be 0 or 1.
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return Err(Error::InvalidArgument(format!(
                "bit {pos} has value {}, expected 0 or 1",
                bits[pos]
            )));
        }
        Ok(BinaryVector(bits))
    }

    pub fn from_bools(bits: impl IntoIterator<Item = bool>) -> Self {
        BinaryVector(bits.into_iter().map(u8::from).collect())
    }

    /// Index `k` of the `len`-bit little-endian encoding of `code`.
    pub fn from_code(code: u64, len: usize) -> Self {
        BinaryVector((0..len).map(|k| ((code >> k) & 1) as u8).collect())
    }

    /// Independent fair coin per bit.
    pub fn random(len: usize, rng: &mut Rng) -> Self {
        BinaryVector((0..len).map(|_| u8::from(rng.gen::<bool>())).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn get(&self, i: usize) -> u8 {
        self.0[i]
    }

    pub fn set(&mut self, i: usize, bit: bool) {
        self.0[i] = u8::from(bit);
    }

    pub fn flip(&mut self, i: usize) {
        self.0[i] ^= 1;
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }

    pub fn hamming(&self, other: &BinaryVector) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }

    /// Little-endian integer encoding; only meaningful for `len <= 64`.
    pub fn code(&self) -> u64 {
        self.0
            .iter()
            .enumerate()
            .fold(0u64, |acc, (k, &b)| acc | (u64::from(b) << k))
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.0
    }
}

impl fmt::Display for BinaryVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BinaryVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BinaryVector({self})")
    }
}

impl FromStr for BinaryVector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|ch| match ch {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::InvalidArgument(format!(
                    "unexpected character {other:?} in bit string"
                ))),
            })
            .collect::<Result<Vec<u8>>>()
            .map(BinaryVector)
    }
}

/// Weights, visible biases and hidden biases of an RBM.
///
/// `weights` is stored row-major with the visible index first, so
/// `weights[i * n_hidden + j]` couples visible `i` to hidden `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct RbmParams {
    n_visible: usize,
    n_hidden: usize,
    weights: Vec<f64>,
    visible_bias: Vec<f64>,
    hidden_bias: Vec<f64>,
}

impl RbmParams {
    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        RbmParams {
            n_visible,
            n_hidden,
            weights: vec![0.0; n_visible * n_hidden],
            visible_bias: vec![0.0; n_visible],
            hidden_bias: vec![0.0; n_hidden],
        }
    }

    pub fn new(
        n_visible: usize,
        n_hidden: usize,
        weights: Vec<f64>,
        visible_bias: Vec<f64>,
        hidden_bias: Vec<f64>,
    ) -> Result<Self> {
        if n_visible == 0 || n_hidden == 0 {
            return Err(Error::dim("layer sizes must be positive"));
        }
        if weights.len() != n_visible * n_hidden {
            return Err(Error::dim(format!(
                "weight matrix has {} entries, expected {n_visible}x{n_hidden}",
                weights.len()
            )));
        }
        if visible_bias.len() != n_visible {
            return Err(Error::dim(format!(
                "visible bias has length {}, expected {n_visible}",
                visible_bias.len()
            )));
        }
        if hidden_bias.len() != n_hidden {
            return Err(Error::dim(format!(
                "hidden bias has length {}, expected {n_hidden}",
                hidden_bias.len()
            )));
        }
        let p = RbmParams {
            n_visible,
            n_hidden,
            weights,
            visible_bias,
            hidden_bias,
        };
        p.check_finite()?;
        Ok(p)
    }

    /// Weights i.i.d. uniform in `[-scale, scale]`, biases zero.
    pub fn random_init(n_visible: usize, n_hidden: usize, scale: f64, rng: &mut Rng) -> Self {
        let mut p = RbmParams::zeros(n_visible, n_hidden);
        if scale > 0.0 {
            for w in &mut p.weights {
                *w = rng.gen_range(-scale..=scale);
            }
        }
        p
    }

    pub fn n_visible(&self) -> usize {
        self.n_visible
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn visible_bias(&self) -> &[f64] {
        &self.visible_bias
    }

    pub fn visible_bias_mut(&mut self) -> &mut [f64] {
        &mut self.visible_bias
    }

    pub fn hidden_bias(&self) -> &[f64] {
        &self.hidden_bias
    }

    pub fn hidden_bias_mut(&mut self) -> &mut [f64] {
        &mut self.hidden_bias
    }

    #[inline]
    pub fn w(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n_hidden + j]
    }

    #[inline]
    pub fn set_w(&mut self, i: usize, j: usize, value: f64) {
        self.weights[i * self.n_hidden + j] = value;
    }

    /// Row of weights leaving visible unit `i`.
    #[inline]
    pub fn visible_row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n_hidden..(i + 1) * self.n_hidden]
    }

    /// Model with the roles of the two layers exchanged.
    pub fn transposed(&self) -> RbmParams {
        let mut t = RbmParams::zeros(self.n_hidden, self.n_visible);
        for i in 0..self.n_visible {
            for j in 0..self.n_hidden {
                t.set_w(j, i, self.w(i, j));
            }
        }
        t.visible_bias.clone_from(&self.hidden_bias);
        t.hidden_bias.clone_from(&self.visible_bias);
        t
    }

    pub fn check_finite(&self) -> Result<()> {
        let all = self
            .weights
            .iter()
            .chain(&self.visible_bias)
            .chain(&self.hidden_bias);
        if all.clone().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numerical("parameters contain NaN or infinity".into()))
        }
    }

    fn check_visible(&self, v: &BinaryVector) -> Result<()> {
        if v.len() != self.n_visible {
            return Err(Error::dim(format!(
                "visible vector has length {}, model has {} visible units",
                v.len(),
                self.n_visible
            )));
        }
        Ok(())
    }

    fn check_hidden(&self, h: &BinaryVector) -> Result<()> {
        if h.len() != self.n_hidden {
            return Err(Error::dim(format!(
                "hidden vector has length {}, model has {} hidden units",
                h.len(),
                self.n_hidden
            )));
        }
        Ok(())
    }

    fn check_exact_capacity(&self) -> Result<()> {
        if self.n_hidden > EXACT_HIDDEN_CAP {
            return Err(Error::Capacity(format!(
                "exact normalization enumerates the hidden layer; {} hidden units exceeds the cap of {EXACT_HIDDEN_CAP}",
                self.n_hidden
            )));
        }
        Ok(())
    }

    /// `E(v,h) = -b.v - c.h - sum_ij v_i w_ij h_j`.
    pub fn energy(&self, v: &BinaryVector, h: &BinaryVector) -> Result<f64> {
        self.check_visible(v)?;
        self.check_hidden(h)?;
        Ok(self.energy_unchecked(v.as_slice(), h.as_slice()))
    }

    pub(crate) fn energy_unchecked(&self, v: &[u8], h: &[u8]) -> f64 {
        let mut e = 0.0;
        for (j, &hj) in h.iter().enumerate() {
            if hj == 1 {
                e -= self.hidden_bias[j];
            }
        }
        for (i, &vi) in v.iter().enumerate() {
            if vi == 1 {
                e -= self.visible_bias[i];
                let row = self.visible_row(i);
                for (j, &hj) in h.iter().enumerate() {
                    if hj == 1 {
                        e -= row[j];
                    }
                }
            }
        }
        e
    }

    /// Hidden pre-activations `c_j + (v^T W)_j`.
    pub(crate) fn hidden_input(&self, v: &[u8], out: &mut [f64]) {
        out.copy_from_slice(&self.hidden_bias);
        for (i, &vi) in v.iter().enumerate() {
            if vi == 1 {
                for (o, w) in out.iter_mut().zip(self.visible_row(i)) {
                    *o += w;
                }
            }
        }
    }

    /// Visible pre-activation `b_i + (W h)_i` for a single unit.
    #[inline]
    pub(crate) fn visible_input_at(&self, i: usize, h: &[u8]) -> f64 {
        let row = self.visible_row(i);
        let mut s = self.visible_bias[i];
        for (w, &hj) in row.iter().zip(h) {
            if hj == 1 {
                s += w;
            }
        }
        s
    }

    /// `P(h_j = 1 | v) = sigmoid(c_j + (v^T W)_j)` for every hidden unit.
    pub fn hidden_activation(&self, v: &BinaryVector) -> Result<Vec<f64>> {
        self.check_visible(v)?;
        let mut out = vec![0.0; self.n_hidden];
        self.hidden_input(v.as_slice(), &mut out);
        out.iter_mut().for_each(|x| *x = sigmoid(*x));
        Ok(out)
    }

    /// `P(v_i = 1 | h) = sigmoid(b_i + (W h)_i)` for every visible unit.
    pub fn visible_activation(&self, h: &BinaryVector) -> Result<Vec<f64>> {
        self.check_hidden(h)?;
        Ok((0..self.n_visible)
            .map(|i| sigmoid(self.visible_input_at(i, h.as_slice())))
            .collect())
    }

    /// `log sum_h exp(-E(v,h)) = b.v + sum_j softplus(c_j + (v^T W)_j)`.
    pub fn neg_free_energy(&self, v: &BinaryVector) -> Result<f64> {
        self.check_visible(v)?;
        let mut buf = vec![0.0; self.n_hidden];
        Ok(self.neg_free_energy_with(v.as_slice(), &mut buf))
    }

    fn neg_free_energy_with(&self, v: &[u8], buf: &mut [f64]) -> f64 {
        self.hidden_input(v, buf);
        let bias: f64 = v
            .iter()
            .zip(&self.visible_bias)
            .filter(|(&x, _)| x == 1)
            .map(|(_, b)| b)
            .sum();
        bias + buf.iter().map(|&x| softplus(x)).sum::<f64>()
    }

    /// `log Z`, summing `exp(c.h) * prod_i (1 + exp(s_i))` with `s = b + W h`
    /// over all `2^n_hidden` hidden configurations.
    pub fn log_partition(&self) -> Result<f64> {
        self.check_exact_capacity()?;
        Ok(self.fold_hidden_states(LogSumExp::default(), |acc, log_w, _, _| acc.add(log_w))
            .value())
    }

    /// Visits every hidden configuration with its unnormalized log-weight
    /// after the visible layer is summed out, and its visible input `b + W h`.
    ///
    /// Configurations are visited in Gray-code order; `s` is recomputed from
    /// scratch every 1024 steps to bound drift from incremental updates.
    pub(crate) fn fold_hidden_states<A>(
        &self,
        init: A,
        mut f: impl FnMut(A, f64, &[u8], &[f64]) -> A,
    ) -> A {
        const REFRESH: u64 = 1024;
        let m = self.n_hidden;
        let total: u64 = 1u64 << m;
        let mut h = vec![0u8; m];
        let mut s = self.visible_bias.clone();
        let mut acc = init;
        let mut gray_prev = 0u64;
        for k in 0..total {
            let gray = k ^ (k >> 1);
            if k > 0 {
                let changed = (gray ^ gray_prev).trailing_zeros() as usize;
                h[changed] ^= 1;
                if k % REFRESH == 0 {
                    self.recompute_visible_input(&h, &mut s);
                } else {
                    let sign = if h[changed] == 1 { 1.0 } else { -1.0 };
                    for (i, si) in s.iter_mut().enumerate() {
                        *si += sign * self.weights[i * m + changed];
                    }
                }
            }
            gray_prev = gray;
            let ch: f64 = h
                .iter()
                .zip(&self.hidden_bias)
                .filter(|(&x, _)| x == 1)
                .map(|(_, c)| c)
                .sum();
            let log_w = ch + s.iter().map(|&x| softplus(x)).sum::<f64>();
            acc = f(acc, log_w, &h, &s);
        }
        acc
    }

    fn recompute_visible_input(&self, h: &[u8], s: &mut [f64]) {
        for (i, si) in s.iter_mut().enumerate() {
            *si = self.visible_input_at(i, h);
        }
    }

    /// `log P(v)`.
    pub fn marginal_log_prob(&self, v: &BinaryVector) -> Result<f64> {
        let log_z = self.log_partition()?;
        Ok(self.neg_free_energy(v)? - log_z)
    }

    /// Total and per-record mean of `log P(v)` over `data`.
    pub fn log_likelihood(&self, data: &[BinaryVector]) -> Result<LogLikelihood> {
        if data.is_empty() {
            return Err(Error::InvalidArgument(
                "log-likelihood of an empty dataset".into(),
            ));
        }
        for v in data {
            self.check_visible(v)?;
        }
        let log_z = self.log_partition()?;
        let mut buf = vec![0.0; self.n_hidden];
        let total: f64 = data
            .iter()
            .map(|v| self.neg_free_energy_with(v.as_slice(), &mut buf) - log_z)
            .sum();
        Ok(LogLikelihood {
            total,
            per_record: total / data.len() as f64,
            records: data.len(),
        })
    }

    /// Writes the checkpoint text format.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{CHECKPOINT_MAGIC}")?;
        writeln!(out, "{} {}", self.n_visible, self.n_hidden)?;
        write_row(&mut out, &self.visible_bias)?;
        write_row(&mut out, &self.hidden_bias)?;
        for i in 0..self.n_visible {
            write_row(&mut out, self.visible_row(i))?;
        }
        Ok(())
    }

    pub fn to_checkpoint_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("checkpoint text is ASCII")
    }

    /// Parses the checkpoint text format.
    pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate().filter_map(|(n, l)| match l {
            Ok(l) if l.trim().is_empty() => None,
            other => Some((n + 1, other)),
        });
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((n, Ok(l))) => Ok((n, l)),
                Some((_, Err(e))) => Err(e.into()),
                None => Err(Error::parse(0, format!("unexpected end of file, expected {what}"))),
            }
        };
        let (n, magic) = next("version line")?;
        if magic.trim() != CHECKPOINT_MAGIC {
            return Err(Error::parse(
                n,
                format!("expected version line {CHECKPOINT_MAGIC:?}, found {:?}", magic.trim()),
            ));
        }
        let (n, dims) = next("dimensions line")?;
        let dims = parse_row::<usize>(n, &dims)?;
        let [n_visible, n_hidden] = dims[..] else {
            return Err(Error::parse(n, "dimensions line must hold `n_visible n_hidden`"));
        };
        let (n, line) = next("visible biases")?;
        let visible_bias = parse_row_len(n, &line, n_visible)?;
        let (n, line) = next("hidden biases")?;
        let hidden_bias = parse_row_len(n, &line, n_hidden)?;
        let mut weights = Vec::with_capacity(n_visible * n_hidden);
        for _ in 0..n_visible {
            let (n, line) = next("weight row")?;
            weights.extend(parse_row_len(n, &line, n_hidden)?);
        }
        RbmParams::new(n_visible, n_hidden, weights, visible_bias, hidden_bias)
    }
}

impl FromStr for RbmParams {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RbmParams::read_checkpoint(s.as_bytes())
    }
}

const CHECKPOINT_MAGIC: &str = "rbm-checkpoint v1";

fn write_row<W: Write>(out: &mut W, row: &[f64]) -> Result<()> {
    let mut first = true;
    for x in row {
        if !first {
            out.write_all(b" ")?;
        }
        first = false;
        // 17 significant digits round-trips every f64.
        write!(out, "{x:.16e}")?;
    }
    out.write_all(b"\n")?;
    Ok(())
}

fn parse_row<T: FromStr>(line_no: usize, line: &str) -> Result<Vec<T>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<T>()
                .map_err(|_| Error::parse(line_no, format!("cannot parse {tok:?} as a number")))
        })
        .collect()
}

fn parse_row_len(line_no: usize, line: &str, len: usize) -> Result<Vec<f64>> {
    let row = parse_row::<f64>(line_no, line)?;
    if row.len() != len {
        return Err(Error::parse(
            line_no,
            format!("expected {len} values, found {}", row.len()),
        ));
    }
    Ok(row)
}

/// Log-likelihood of a dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLikelihood {
    pub total: f64,
    pub per_record: f64,
    pub records: usize,
}

/// Brute-force `log Z` over all `2^(n_visible + n_hidden)` joint states.
/// Used by tests as an independent check of [`RbmParams::log_partition`].
pub fn brute_force_log_partition(p: &RbmParams) -> f64 {
    let (n, m) = (p.n_visible(), p.n_hidden());
    assert!(n + m <= 26, "brute force limited to 26 units");
    let mut acc = f64::NEG_INFINITY;
    for vc in 0..(1u64 << n) {
        let v = BinaryVector::from_code(vc, n);
        for hc in 0..(1u64 << m) {
            let h = BinaryVector::from_code(hc, m);
            acc = log_sum_exp_pair(acc, -p.energy_unchecked(v.as_slice(), h.as_slice()));
        }
    }
    acc
}
