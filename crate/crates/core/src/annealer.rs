//! Ising encoding of an embedded RBM and a simulated-annealing sampler.
//!
//! The binary energy is mapped to spins with `x = (s + 1) / 2`:
//!
//! ```text
//! -b_i v_i      -> -b_i/2 s_i - b_i/2
//! -c_j h_j      -> -c_j/2 t_j - c_j/2
//! -w_ij v_i h_j -> -w_ij/4 (s_i t_j + s_i + t_j + 1)
//! ```
//!
//! so the Ising energy `sum h_q s_q + sum J_qr s_q s_r` plus a constant
//! offset reproduces `E(v,h)` on chain-consistent states. Problem terms are
//! divided by the scale `S` so that samples drawn at inverse temperature
//! `beta` follow `exp(-beta E / S)`. Chain couplers are not scaled.

use std::fmt::Write as _;
use std::io::BufRead;

use rand::Rng as _;
use rayon::prelude::*;

use crate::chimera::{resolve_chains, ChimeraEmbedding, ChimeraGraph, Unit};
use crate::error::{Error, Result};
use crate::gibbs::ClampMask;
use crate::rbm::{BinaryVector, RbmParams};
use crate::rng::{self, tag};
use crate::sample::{SampleBatch, SampleDiagnostics, SampleSource};

/// Coefficient range of the target hardware, used when clipping is enabled.
pub const HARDWARE_RANGE: f64 = 1.0;

/// A pairwise spin coupling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coupling {
    pub a: usize,
    pub b: usize,
    pub value: f64,
}

/// Spin-glass instance over physical qubits.
#[derive(Clone, Debug, PartialEq)]
pub struct IsingInstance {
    fields: Vec<f64>,
    problem: Vec<Coupling>,
    chain: Vec<Coupling>,
    offset: f64,
    clipped: usize,
}

impl IsingInstance {
    pub fn new(num_qubits: usize) -> Self {
        IsingInstance {
            fields: vec![0.0; num_qubits],
            problem: Vec::new(),
            chain: Vec::new(),
            offset: 0.0,
            clipped: 0,
        }
    }

    pub fn num_qubits(&self) -> usize {
        self.fields.len()
    }

    pub fn fields(&self) -> &[f64] {
        &self.fields
    }

    pub fn field(&self, q: usize) -> f64 {
        self.fields[q]
    }

    pub fn set_field(&mut self, q: usize, value: f64) {
        self.fields[q] = value;
    }

    /// Couplings carrying the model.
    pub fn problem_couplings(&self) -> &[Coupling] {
        &self.problem
    }

    /// Ferromagnetic couplings binding chains.
    pub fn chain_couplings(&self) -> &[Coupling] {
        &self.chain
    }

    pub fn add_problem_coupling(&mut self, a: usize, b: usize, value: f64) {
        self.problem.push(Coupling { a, b, value });
    }

    pub fn add_chain_coupling(&mut self, a: usize, b: usize, value: f64) {
        self.chain.push(Coupling { a, b, value });
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Number of coefficients changed by [`IsingInstance::clip_problem`].
    pub fn clipped_count(&self) -> usize {
        self.clipped
    }

    /// Clips problem fields and couplings to `[-limit, limit]`; returns how
    /// many coefficients changed.
    pub fn clip_problem(&mut self, limit: f64) -> usize {
        let mut n = 0;
        for x in self
            .fields
            .iter_mut()
            .chain(self.problem.iter_mut().map(|c| &mut c.value))
        {
            if x.abs() > limit {
                *x = x.clamp(-limit, limit);
                n += 1;
            }
        }
        self.clipped += n;
        n
    }

    /// `sum_q h_q s_q + sum J_qr s_q s_r`, without the offset.
    pub fn energy(&self, spins: &[i8]) -> f64 {
        self.field_energy(spins) + coupling_energy(&self.problem, spins) + coupling_energy(&self.chain, spins)
    }

    /// Energy without chain-coupler contributions.
    pub fn problem_energy(&self, spins: &[i8]) -> f64 {
        self.field_energy(spins) + coupling_energy(&self.problem, spins)
    }

    fn field_energy(&self, spins: &[i8]) -> f64 {
        self.fields
            .iter()
            .zip(spins)
            .map(|(h, &s)| h * f64::from(s))
            .sum()
    }

    /// Text export: `# qubits <n> offset <v>`, then `h <q> <v>` lines for
    /// nonzero fields and `J <a> <b> <v>` lines, chain couplers after a
    /// `# chain` marker.
    pub fn export(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# qubits {} offset {:.16e}", self.num_qubits(), self.offset);
        for (q, h) in self.fields.iter().enumerate() {
            if *h != 0.0 {
                let _ = writeln!(out, "h {q} {h:.16e}");
            }
        }
        for c in &self.problem {
            let _ = writeln!(out, "J {} {} {:.16e}", c.a, c.b, c.value);
        }
        if !self.chain.is_empty() {
            out.push_str("# chain\n");
            for c in &self.chain {
                let _ = writeln!(out, "J {} {} {:.16e}", c.a, c.b, c.value);
            }
        }
        out
    }

    pub fn import<R: BufRead>(input: R) -> Result<Self> {
        let mut inst: Option<IsingInstance> = None;
        let mut in_chain = false;
        for (n, line) in input.lines().enumerate() {
            let n = n + 1;
            let line = line?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks.as_slice() {
                [] => {}
                ["#", "qubits", q, "offset", off] => {
                    let mut i = IsingInstance::new(parse_tok(n, q)?);
                    i.offset = parse_tok(n, off)?;
                    inst = Some(i);
                }
                ["#", "chain"] => in_chain = true,
                ["#", ..] => {}
                ["h", q, v] => {
                    let i = inst.as_mut().ok_or_else(|| Error::parse(n, "field before header"))?;
                    let q: usize = parse_tok(n, q)?;
                    if q >= i.num_qubits() {
                        return Err(Error::parse(n, format!("qubit {q} out of range")));
                    }
                    i.fields[q] = parse_tok(n, v)?;
                }
                ["J", a, b, v] => {
                    let i = inst.as_mut().ok_or_else(|| Error::parse(n, "coupling before header"))?;
                    let c = Coupling {
                        a: parse_tok(n, a)?,
                        b: parse_tok(n, b)?,
                        value: parse_tok(n, v)?,
                    };
                    if c.a >= i.num_qubits() || c.b >= i.num_qubits() {
                        return Err(Error::parse(n, "coupling qubit out of range"));
                    }
                    if in_chain {
                        i.chain.push(c);
                    } else {
                        i.problem.push(c);
                    }
                }
                _ => return Err(Error::parse(n, format!("unrecognized line {line:?}"))),
            }
        }
        inst.ok_or_else(|| Error::parse(0, "missing `# qubits` header"))
    }

    fn check_against(&self, g: &ChimeraGraph) -> Result<()> {
        if self.num_qubits() != g.num_qubits() {
            return Err(Error::dim(format!(
                "instance has {} qubits, graph has {}",
                self.num_qubits(),
                g.num_qubits()
            )));
        }
        for c in self.problem.iter().chain(&self.chain) {
            if !g.has_edge(c.a, c.b) {
                return Err(Error::InvalidArgument(format!(
                    "coupling {}-{} is not a live coupler of the graph",
                    c.a, c.b
                )));
            }
        }
        for (q, h) in self.fields.iter().enumerate() {
            if *h != 0.0 && !g.is_live(q) {
                return Err(Error::InvalidArgument(format!("field on dead qubit {q}")));
            }
        }
        let finite = self.fields.iter().all(|x| x.is_finite())
            && self.problem.iter().chain(&self.chain).all(|c| c.value.is_finite());
        if !finite {
            return Err(Error::Numerical("instance has non-finite coefficients".into()));
        }
        Ok(())
    }
}

fn coupling_energy(cs: &[Coupling], spins: &[i8]) -> f64 {
    cs.iter()
        .map(|c| c.value * f64::from(spins[c.a]) * f64::from(spins[c.b]))
        .sum()
}

fn parse_tok<T: std::str::FromStr>(line: usize, tok: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::parse(line, format!("cannot parse {tok:?}")))
}

/// Builds the scaled Ising instance of `p` on the embedding.
///
/// Logical fields are split equally over the qubits of each chain. Edges the
/// embedding dropped are treated as `w_ij = 0`. With a clamp mask, each qubit
/// of a clamped visible chain receives a pinning field of magnitude
/// `2 (max |problem field| + sum of its incident |problem couplings|)`,
/// floored at `|chain coupling|`, signed toward the clamped bit.
pub fn rbm_to_ising(
    p: &RbmParams,
    e: &ChimeraEmbedding,
    g: &ChimeraGraph,
    scale: f64,
    clamp: Option<&ClampMask>,
) -> Result<IsingInstance> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("scale S must be positive, got {scale}")));
    }
    if e.n_visible() != p.n_visible() || e.n_hidden() != p.n_hidden() {
        return Err(Error::dim(format!(
            "embedding is {}x{}, model is {}x{}",
            e.n_visible(),
            e.n_hidden(),
            p.n_visible(),
            p.n_hidden()
        )));
    }
    if let Some(m) = clamp {
        if m.len() != p.n_visible() {
            return Err(Error::dim("clamp mask length differs from visible layer"));
        }
    }
    let (n, m) = (p.n_visible(), p.n_hidden());
    let mut vis_field: Vec<f64> = p.visible_bias().iter().map(|b| -b / 2.0).collect();
    let mut hid_field: Vec<f64> = p.hidden_bias().iter().map(|c| -c / 2.0).collect();
    let mut offset = -(p.visible_bias().iter().sum::<f64>() + p.hidden_bias().iter().sum::<f64>()) / 2.0;

    let mut inst = IsingInstance::new(g.num_qubits());
    for i in 0..n {
        for j in 0..m {
            if let Some((a, b)) = e.coupler(i, j) {
                let quarter = p.w(i, j) / 4.0;
                vis_field[i] -= quarter;
                hid_field[j] -= quarter;
                offset -= quarter;
                inst.add_problem_coupling(a, b, -quarter / scale);
            }
        }
    }
    for (unit, chain) in e.chains() {
        let logical = match unit {
            Unit::Visible(k) => vis_field[k],
            Unit::Hidden(k) => hid_field[k],
        };
        let share = logical / scale / chain.len() as f64;
        for &q in chain {
            inst.fields[q] = share;
        }
    }
    inst.offset = offset / scale;

    if let Some(mask) = clamp {
        let max_field = inst.fields.iter().fold(0.0f64, |a, h| a.max(h.abs()));
        let mut incident = vec![0.0; inst.num_qubits()];
        for c in &inst.problem {
            incident[c.a] += c.value.abs();
            incident[c.b] += c.value.abs();
        }
        for i in mask.clamped_indices() {
            let sign = if mask.value(i) == 1 { -1.0 } else { 1.0 };
            for &q in e.chain(Unit::Visible(i)) {
                let pin = (2.0 * (max_field + incident[q])).max(e.chain_coupling().abs());
                inst.fields[q] += sign * pin;
            }
        }
    }

    for (a, b) in e.chain_edges() {
        inst.add_chain_coupling(a, b, e.chain_coupling());
    }
    Ok(inst)
}

/// Parameters of the simulated annealer.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnealConfig {
    pub num_reads: usize,
    pub sweeps: usize,
    /// Inverse temperatures, strictly increasing. Sweep `k` of `sweeps` uses
    /// entry `k * len / sweeps`.
    pub beta_schedule: Vec<f64>,
    /// Divisor `S` applied to the model's coefficients.
    pub scale: f64,
    pub seed: u64,
    /// Clip problem coefficients to the hardware range.
    pub clip: bool,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        AnnealConfig::geometric(1000, 1000, 0.1, 10.0, 4.0, 0)
    }
}

impl AnnealConfig {
    /// Geometric schedule from `beta_min` to `beta_max`, one step per sweep.
    pub fn geometric(
        num_reads: usize,
        sweeps: usize,
        beta_min: f64,
        beta_max: f64,
        scale: f64,
        seed: u64,
    ) -> Self {
        AnnealConfig {
            num_reads,
            sweeps,
            beta_schedule: geometric_schedule(beta_min, beta_max, sweeps),
            scale,
            seed,
            clip: false,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        AnnealConfig {
            seed,
            ..self.clone()
        }
    }

    pub fn with_reads(&self, num_reads: usize) -> Self {
        AnnealConfig {
            num_reads,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta_schedule.is_empty() {
            return Err(Error::InvalidArgument("empty annealing schedule".into()));
        }
        if !self.beta_schedule.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument("annealing schedule must be strictly increasing".into()));
        }
        if self.beta_schedule.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::InvalidArgument("inverse temperatures must be finite and non-negative".into()));
        }
        if self.num_reads == 0 || self.sweeps == 0 {
            return Err(Error::InvalidArgument("reads and sweeps must be positive".into()));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale S must be positive, got {}", self.scale)));
        }
        Ok(())
    }

    fn beta_at(&self, sweep: usize) -> f64 {
        self.beta_schedule[sweep * self.beta_schedule.len() / self.sweeps]
    }
}

pub fn geometric_schedule(beta_min: f64, beta_max: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![beta_max],
        _ => {
            let ratio = (beta_max / beta_min).ln() / (steps - 1) as f64;
            (0..steps)
                .map(|k| beta_min * (ratio * k as f64).exp())
                .collect()
        }
    }
}

/// Final state of one annealing run.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnealRead {
    pub spins: Vec<i8>,
    /// Ising energy of `spins`, without the offset.
    pub energy: f64,
}

/// Compressed adjacency over the qubits that carry any term, renumbered
/// densely in qubit order.
struct Compiled {
    active: Vec<usize>,
    fields: Vec<f64>,
    start: Vec<u32>,
    neighbor: Vec<u32>,
    weight: Vec<f64>,
}

impl Compiled {
    fn new(inst: &IsingInstance) -> Self {
        let n = inst.num_qubits();
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for c in inst.problem.iter().chain(&inst.chain) {
            adj[c.a].push((c.b, c.value));
            adj[c.b].push((c.a, c.value));
        }
        let active: Vec<usize> = (0..n)
            .filter(|&q| inst.fields[q] != 0.0 || !adj[q].is_empty())
            .collect();
        let mut dense = vec![u32::MAX; n];
        for (k, &q) in active.iter().enumerate() {
            dense[q] = k as u32;
        }
        let mut start = Vec::with_capacity(active.len() + 1);
        let mut neighbor = Vec::new();
        let mut weight = Vec::new();
        for &q in &active {
            start.push(neighbor.len() as u32);
            for &(b, w) in &adj[q] {
                neighbor.push(dense[b]);
                weight.push(w);
            }
        }
        start.push(neighbor.len() as u32);
        Compiled {
            fields: active.iter().map(|&q| inst.fields[q]).collect(),
            active,
            start,
            neighbor,
            weight,
        }
    }

    #[inline]
    fn local_field(&self, k: usize, spins: &[f64]) -> f64 {
        let (lo, hi) = (self.start[k] as usize, self.start[k + 1] as usize);
        let mut f = self.fields[k];
        for (&w, &b) in self.weight[lo..hi].iter().zip(&self.neighbor[lo..hi]) {
            f += w * spins[b as usize];
        }
        f
    }
}

/// Moves with `beta * delta` above this are rejected without drawing; their
/// acceptance probability is below 1e-17.
const REJECT_CUTOFF: f64 = 40.0;

/// Independent simulated-annealing reads of `inst`.
///
/// Each read starts from uniformly random spins and performs `cfg.sweeps`
/// Metropolis sweeps in qubit order, following the schedule. Read `r` uses
/// the stream `(cfg.seed, r)`.
pub fn anneal_samples(inst: &IsingInstance, g: &ChimeraGraph, cfg: &AnnealConfig) -> Result<Vec<AnnealRead>> {
    cfg.validate()?;
    inst.check_against(g)?;
    let compiled = Compiled::new(inst);
    let reads = (0..cfg.num_reads)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(cfg.seed, &[tag::ANNEAL, r as u64]);
            let mut spins: Vec<i8> = (0..inst.num_qubits())
                .map(|_| if rng.gen::<bool>() { 1 } else { -1 })
                .collect();
            let mut state: Vec<f64> = compiled.active.iter().map(|&q| f64::from(spins[q])).collect();
            for sweep in 0..cfg.sweeps {
                let beta = cfg.beta_at(sweep);
                for k in 0..state.len() {
                    let s = state[k];
                    // Flipping changes the energy by -2 s f; x = -beta * dE.
                    let x = 2.0 * beta * s * compiled.local_field(k, &state);
                    if x >= 0.0 || (x > -REJECT_CUTOFF && rng.gen::<f64>() < x.exp()) {
                        state[k] = -s;
                    }
                }
            }
            for (&q, &s) in compiled.active.iter().zip(&state) {
                spins[q] = s as i8;
            }
            let energy = inst.energy(&spins);
            AnnealRead { spins, energy }
        })
        .collect();
    Ok(reads)
}

/// Model samples from the annealer: encode, anneal, resolve chains.
pub fn annealer_model_samples(
    p: &RbmParams,
    e: &ChimeraEmbedding,
    g: &ChimeraGraph,
    cfg: &AnnealConfig,
) -> Result<SampleBatch> {
    let mut inst = rbm_to_ising(p, e, g, cfg.scale, None)?;
    if cfg.clip {
        inst.clip_problem(HARDWARE_RANGE);
    }
    let reads = anneal_samples(&inst, g, cfg)?;
    let chains = p.n_visible() + p.n_hidden();
    let mut diagnostics = SampleDiagnostics {
        clipped_coefficients: inst.clipped_count(),
        ..SampleDiagnostics::default()
    };
    let pairs = reads
        .iter()
        .map(|r| {
            let res = resolve_chains(&r.spins, e);
            diagnostics.chain_breaks += res.broken_chains;
            diagnostics.chains_checked += chains;
            (res.v, res.h)
        })
        .collect();
    let mut batch = SampleBatch::new(pairs, SampleSource::Annealer);
    batch.diagnostics = diagnostics;
    Ok(batch)
}

/// Fills the unclamped visibles by annealing with pinning fields on the
/// clamped ones. Returns the visible vector of the lowest-energy read, with
/// clamped positions forced to their values.
pub fn anneal_inference(
    p: &RbmParams,
    e: &ChimeraEmbedding,
    g: &ChimeraGraph,
    cfg: &AnnealConfig,
    clamp: &ClampMask,
) -> Result<BinaryVector> {
    if clamp.len() != p.n_visible() {
        return Err(Error::dim("clamp mask length differs from visible layer"));
    }
    if clamp.is_fully_clamped() {
        return Ok(clamp.values().clone());
    }
    let mut inst = rbm_to_ising(p, e, g, cfg.scale, Some(clamp))?;
    if cfg.clip {
        inst.clip_problem(HARDWARE_RANGE);
    }
    let reads = anneal_samples(&inst, g, cfg)?;
    let best = reads
        .iter()
        .min_by(|a, b| a.energy.total_cmp(&b.energy))
        .expect("at least one read");
    let mut v = resolve_chains(&best.spins, e).v;
    clamp.apply(&mut v);
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chimera::embed_rbm;
    use crate::rng::stream;

    fn random_params(n: usize, m: usize, scale: f64, seed: u64) -> RbmParams {
        let mut rng = stream(seed, &[77]);
        let mut p = RbmParams::random_init(n, m, scale, &mut rng);
        for b in p.visible_bias_mut() {
            *b = rng.gen_range(-scale..scale);
        }
        for c in p.hidden_bias_mut() {
            *c = rng.gen_range(-scale..scale);
        }
        p
    }

    fn spins_for(e: &ChimeraEmbedding, n_qubits: usize, v: &BinaryVector, h: &BinaryVector) -> Vec<i8> {
        let mut spins = vec![-1i8; n_qubits];
        for (unit, chain) in e.chains() {
            let bit = match unit {
                Unit::Visible(k) => v.get(k),
                Unit::Hidden(k) => h.get(k),
            };
            for &q in chain {
                spins[q] = if bit == 1 { 1 } else { -1 };
            }
        }
        spins
    }

    #[test]
    fn zero_model_has_only_chain_couplers() {
        let g = ChimeraGraph::new(2, []).unwrap();
        let e = embed_rbm(&g, 8, 8, -1.0).unwrap();
        let inst = rbm_to_ising(&RbmParams::zeros(8, 8), &e, &g, 1.0, None).unwrap();
        assert!(inst.fields().iter().all(|&h| h == 0.0));
        assert!(inst.problem_couplings().iter().all(|c| c.value == 0.0));
        assert_eq!(inst.chain_couplings().len(), 16);
        assert!(inst.chain_couplings().iter().all(|c| c.value == -1.0));
    }

    #[test]
    fn single_unit_energy_identity() {
        let g = ChimeraGraph::new(1, []).unwrap();
        let e = embed_rbm(&g, 1, 1, -1.0).unwrap();
        let p = RbmParams::new(1, 1, vec![0.7], vec![-1.3], vec![0.4]).unwrap();
        let inst = rbm_to_ising(&p, &e, &g, 1.0, None).unwrap();
        for code in 0..4u64 {
            let v = BinaryVector::from_code(code & 1, 1);
            let h = BinaryVector::from_code(code >> 1, 1);
            let spins = spins_for(&e, g.num_qubits(), &v, &h);
            let lhs = inst.problem_energy(&spins) + inst.offset();
            assert!((lhs - p.energy(&v, &h).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_divides_problem_terms_only() {
        let g = ChimeraGraph::new(1, []).unwrap();
        let e = embed_rbm(&g, 1, 1, -1.0).unwrap();
        let p = RbmParams::new(1, 1, vec![0.7], vec![-1.3], vec![0.4]).unwrap();
        let one = rbm_to_ising(&p, &e, &g, 1.0, None).unwrap();
        let four = rbm_to_ising(&p, &e, &g, 4.0, None).unwrap();
        for (a, b) in one.fields().iter().zip(four.fields()) {
            assert_eq!(*b, a / 4.0);
        }
        for (a, b) in one.problem_couplings().iter().zip(four.problem_couplings()) {
            assert_eq!(b.value, a.value / 4.0);
        }
        assert_eq!(four.offset(), one.offset() / 4.0);
        assert_eq!(one.chain_couplings(), four.chain_couplings());
        assert!(rbm_to_ising(&p, &e, &g, 0.0, None).is_err());
        assert!(rbm_to_ising(&p, &e, &g, -1.0, None).is_err());
    }

    #[test]
    fn energy_identity_with_long_chains() {
        let g = ChimeraGraph::new(3, []).unwrap();
        let e = embed_rbm(&g, 5, 6, -1.0).unwrap();
        let p = random_params(5, 6, 1.5, 3);
        let s = 2.5;
        let inst = rbm_to_ising(&p, &e, &g, s, None).unwrap();
        let chain_total: f64 = inst.chain_couplings().iter().map(|c| c.value).sum();
        for code in 0..(1u64 << 11) {
            let v = BinaryVector::from_code(code & 31, 5);
            let h = BinaryVector::from_code(code >> 5, 6);
            let spins = spins_for(&e, g.num_qubits(), &v, &h);
            let want = p.energy(&v, &h).unwrap() / s;
            assert!((inst.problem_energy(&spins) + inst.offset() - want).abs() < 1e-10);
            assert!((inst.energy(&spins) - chain_total + inst.offset() - want).abs() < 1e-10);
        }
    }

    #[test]
    fn dropped_edges_behave_as_zero_weights() {
        let g = ChimeraGraph::new(2, [0]).unwrap();
        let e = embed_rbm(&g, 5, 5, -1.0).unwrap();
        assert!(!e.dropped_edges().is_empty());
        let mut p = random_params(5, 5, 1.0, 4);
        let inst = rbm_to_ising(&p, &e, &g, 1.0, None).unwrap();
        for (i, j) in e.dropped_edges() {
            p.set_w(i, j, 0.0);
        }
        for code in [0u64, 0x155, 0x2aa, 0x3ff, 0x0f3] {
            let v = BinaryVector::from_code(code & 31, 5);
            let h = BinaryVector::from_code(code >> 5, 5);
            let spins = spins_for(&e, g.num_qubits(), &v, &h);
            assert!((inst.problem_energy(&spins) + inst.offset() - p.energy(&v, &h).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn ising_text_round_trip() {
        let g = ChimeraGraph::new(2, []).unwrap();
        let e = embed_rbm(&g, 6, 7, -1.0).unwrap();
        let inst = rbm_to_ising(&random_params(6, 7, 2.0, 5), &e, &g, 3.0, None).unwrap();
        let text = inst.export();
        assert!(text.starts_with("# qubits 32 offset "));
        let back = IsingInstance::import(text.as_bytes()).unwrap();
        assert_eq!(back, inst);
        assert_eq!(back.export(), text);
        assert!(IsingInstance::import("h 0 1\n".as_bytes()).is_err());
        assert!(IsingInstance::import("# qubits 2 offset 0\nh 5 1\n".as_bytes()).is_err());
    }

    #[test]
    fn clipping_counts_events() {
        let mut inst = IsingInstance::new(8);
        inst.set_field(0, 3.0);
        inst.set_field(1, -0.5);
        inst.add_problem_coupling(0, 4, -2.0);
        inst.add_chain_coupling(0, 1, -1.0);
        assert_eq!(inst.clip_problem(1.0), 2);
        assert_eq!(inst.field(0), 1.0);
        assert_eq!(inst.problem_couplings()[0].value, -1.0);
        assert_eq!(inst.clipped_count(), 2);
    }

    #[test]
    fn config_validation() {
        let mut cfg = AnnealConfig::geometric(10, 10, 0.1, 5.0, 1.0, 0);
        assert!(cfg.validate().is_ok());
        cfg.beta_schedule.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = AnnealConfig::geometric(10, 10, 0.1, 5.0, 1.0, 0);
        cfg.beta_schedule.swap(0, 1);
        assert!(cfg.validate().is_err());
        assert!(AnnealConfig::geometric(10, 10, 0.1, 5.0, 0.0, 0).validate().is_err());
        let s = geometric_schedule(0.1, 10.0, 5);
        assert!((s[0] - 0.1).abs() < 1e-15 && (s[4] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn single_qubit_follows_field() {
        let g = ChimeraGraph::new(1, []).unwrap();
        let mut inst = IsingInstance::new(8);
        inst.set_field(0, -1.0);
        // Diagonal energy h*s: s=+1 gives -1, s=-1 gives +1.
        let mut up = vec![1i8; 8];
        let down_energy = {
            up[0] = -1;
            inst.energy(&up)
        };
        up[0] = 1;
        assert!(inst.energy(&up) < down_energy);
        let cfg = AnnealConfig::geometric(1000, 100, 0.1, 10.0, 1.0, 1);
        let reads = anneal_samples(&inst, &g, &cfg).unwrap();
        let favored = reads.iter().filter(|r| r.spins[0] == 1).count();
        assert!(favored >= 990, "{favored}");
    }

    #[test]
    fn zero_instance_is_uniform() {
        let g = ChimeraGraph::new(1, []).unwrap();
        let mut inst = IsingInstance::new(8);
        inst.add_problem_coupling(0, 4, 0.0);
        let cfg = AnnealConfig::geometric(10_000, 10, 0.1, 10.0, 1.0, 2);
        let reads = anneal_samples(&inst, &g, &cfg).unwrap();
        let mut counts = [0usize; 4];
        for r in &reads {
            counts[usize::from(r.spins[0] > 0) + 2 * usize::from(r.spins[4] > 0)] += 1;
        }
        for c in counts {
            let f = c as f64 / 10_000.0;
            assert!((0.22..=0.28).contains(&f), "{counts:?}");
        }
    }

    #[test]
    fn ferromagnetic_pair_aligns() {
        let g = ChimeraGraph::new(1, []).unwrap();
        let mut inst = IsingInstance::new(8);
        inst.add_chain_coupling(0, 4, -1.0);
        let cfg = AnnealConfig::geometric(1000, 200, 0.1, 10.0, 1.0, 3);
        let reads = anneal_samples(&inst, &g, &cfg).unwrap();
        let aligned = reads.iter().filter(|r| r.spins[0] == r.spins[4]).count();
        assert!(aligned >= 990, "{aligned}");
    }

    #[test]
    fn rejects_couplings_off_the_graph() {
        let g = ChimeraGraph::new(1, []).unwrap();
        let mut inst = IsingInstance::new(8);
        inst.add_problem_coupling(0, 1, 1.0);
        let cfg = AnnealConfig::geometric(1, 1, 0.1, 1.0, 1.0, 0);
        assert!(anneal_samples(&inst, &g, &cfg).is_err());
    }

    #[test]
    fn reads_are_reproducible() {
        let g = ChimeraGraph::new(2, []).unwrap();
        let e = embed_rbm(&g, 8, 8, -1.0).unwrap();
        let p = random_params(8, 8, 1.0, 6);
        let cfg = AnnealConfig::geometric(20, 50, 0.1, 10.0, 2.0, 9);
        let a = annealer_model_samples(&p, &e, &g, &cfg).unwrap();
        let b = annealer_model_samples(&p, &e, &g, &cfg).unwrap();
        assert_eq!(a.pairs(), b.pairs());
        assert_eq!(a.diagnostics, b.diagnostics);
    }

    #[test]
    fn more_sweeps_do_not_raise_mean_energy() {
        let g = ChimeraGraph::new(2, []).unwrap();
        let mut inst = IsingInstance::new(g.num_qubits());
        let mut rng = stream(10, &[]);
        for (a, b) in g.edges() {
            inst.add_problem_coupling(a, b, rng.gen_range(-1.0..1.0));
        }
        for q in 0..g.num_qubits() {
            inst.set_field(q, rng.gen_range(-0.5..0.5));
        }
        let mean = |sweeps: usize| {
            let cfg = AnnealConfig::geometric(1000, sweeps, 0.1, 10.0, 1.0, 11);
            let reads = anneal_samples(&inst, &g, &cfg).unwrap();
            reads.iter().map(|r| r.energy).sum::<f64>() / reads.len() as f64
        };
        let (e10, e100) = (mean(10), mean(100));
        assert!(e100 <= e10, "{e100} > {e10}");
    }

    #[test]
    fn inference_respects_clamp() {
        let g = ChimeraGraph::new(2, []).unwrap();
        let e = embed_rbm(&g, 8, 6, -1.0).unwrap();
        let p = random_params(8, 6, 3.0, 12);
        let cfg = AnnealConfig::geometric(10, 50, 0.1, 10.0, 1.0, 13);
        let values: BinaryVector = "10110100".parse().unwrap();
        let mask = ClampMask::all_except(values.clone(), &[1, 6]);
        for seed in 0..10 {
            let out = anneal_inference(&p, &e, &g, &cfg.with_seed(seed), &mask).unwrap();
            assert!(mask.is_respected_by(&out));
        }
        let all = ClampMask::all(values.clone());
        assert_eq!(anneal_inference(&p, &e, &g, &cfg, &all).unwrap(), values);
    }

    #[test]
    fn pinning_field_dominates() {
        let g = ChimeraGraph::new(1, []).unwrap();
        let e = embed_rbm(&g, 2, 2, -1.0).unwrap();
        let p = random_params(2, 2, 2.0, 14);
        let mask = ClampMask::all_except("10".parse().unwrap(), &[1]);
        let inst = rbm_to_ising(&p, &e, &g, 1.0, Some(&mask)).unwrap();
        let free = rbm_to_ising(&p, &e, &g, 1.0, None).unwrap();
        let q = e.chain(Unit::Visible(0))[0];
        let incident: f64 = free
            .problem_couplings()
            .iter()
            .filter(|c| c.a == q || c.b == q)
            .map(|c| c.value.abs())
            .sum();
        // Clamped to 1 means the field must strongly favour spin +1.
        assert!(inst.field(q) < -(free.field(q).abs() + incident));
    }

    fn tv(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0
    }

    #[test]
    fn samples_follow_a_tempered_boltzmann_law() {
        let g = ChimeraGraph::new(1, []).unwrap();
        let e = embed_rbm(&g, 2, 2, -1.0).unwrap();
        let p = random_params(2, 2, 2.0, 21);
        let cfg = AnnealConfig::geometric(20_000, 30, 0.05, 1.0, 2.0, 22);
        let batch = annealer_model_samples(&p, &e, &g, &cfg).unwrap();
        let mut empirical = vec![0.0; 16];
        for (v, h) in batch.pairs() {
            empirical[(v.code() | h.code() << 2) as usize] += 1.0 / 20_000.0;
        }
        let energies: Vec<f64> = (0..16u64)
            .map(|k| p.energy(&BinaryVector::from_code(k & 3, 2), &BinaryVector::from_code(k >> 2, 2)).unwrap())
            .collect();
        let tempered = |t: f64| {
            let w: Vec<f64> = energies.iter().map(|e| (-e / t).exp()).collect();
            let z: f64 = w.iter().sum();
            w.into_iter().map(|x| x / z).collect::<Vec<_>>()
        };
        let best = (1..=200).map(|k| tv(&empirical, &tempered(k as f64 * 0.05))).fold(f64::INFINITY, f64::min);
        let uniform = tv(&empirical, &[1.0 / 16.0; 16]);
        assert!(best < uniform, "fit {best} uniform {uniform}");
    }

    #[test]
    fn inference_matches_exact_label_argmax() {
        let g = ChimeraGraph::new(1, []).unwrap();
        let e = embed_rbm(&g, 4, 4, -1.0).unwrap();
        let cfg = AnnealConfig::geometric(32, 300, 0.1, 20.0, 1.0, 0);
        let mut checked = 0;
        for seed in 0..20 {
            let p = random_params(4, 4, 2.0, 100 + seed);
            let prefix: BinaryVector = BinaryVector::from_code(seed % 4, 2);
            let candidates: Vec<BinaryVector> = (0..4u64)
                .map(|l| BinaryVector::from_code(prefix.code() | l << 2, 4))
                .collect();
            let marginal = candidates
                .iter()
                .max_by(|a, b| p.neg_free_energy(a).unwrap().total_cmp(&p.neg_free_energy(b).unwrap()))
                .unwrap();
            let joint = candidates
                .iter()
                .flat_map(|v| (0..16u64).map(move |h| (v, BinaryVector::from_code(h, 4))))
                .min_by(|a, b| p.energy(a.0, &a.1).unwrap().total_cmp(&p.energy(b.0, &b.1).unwrap()))
                .unwrap()
                .0;
            // Lowest-energy reads target the joint optimum; only compare when it
            // agrees with the marginal argmax.
            if marginal != joint {
                continue;
            }
            checked += 1;
            let mask = ClampMask::all_except(marginal.clone(), &[2, 3]);
            let out = anneal_inference(&p, &e, &g, &cfg.with_seed(seed), &mask).unwrap();
            assert_eq!(&out, marginal, "seed {seed}");
        }
        assert!(checked >= 10, "only {checked} comparable instances");
    }

    #[test]
    fn unclamped_inference_recalls_single_pattern() {
        let g = ChimeraGraph::new(1, []).unwrap();
        let e = embed_rbm(&g, 4, 1, -1.0).unwrap();
        let pattern: BinaryVector = "1011".parse().unwrap();
        let mut p = RbmParams::zeros(4, 1);
        for i in 0..4 {
            let s = if pattern.get(i) == 1 { 10.0 } else { -10.0 };
            p.set_w(i, 0, s);
            p.visible_bias_mut()[i] = s;
        }
        p.hidden_bias_mut()[0] = -10.0 * pattern.count_ones() as f64 + 10.0;
        let cfg = AnnealConfig::geometric(4, 100, 0.1, 10.0, 4.0, 0);
        let free = ClampMask::none(4);
        let hits = (0..50)
            .filter(|&s| anneal_inference(&p, &e, &g, &cfg.with_seed(s), &free).unwrap() == pattern)
            .count();
        assert!(hits >= 45, "{hits}/50");
    }

    #[test]
    fn trained_model_samples_beat_uniform_energy() {
        use crate::train::{init_params, train_loop, TrainConfig};
        let recs = crate::bas::pool(4).unwrap();
        let cfg = TrainConfig { epochs: 100, learning_rate: 0.1, eval_every: 0, ..TrainConfig::default() };
        let (p, _) = train_loop(init_params(16, 8, &cfg), &recs, &[], &cfg, None, |_, _, _| Ok(())).unwrap();
        let g = ChimeraGraph::new(4, []).unwrap();
        let e = embed_rbm(&g, 16, 8, -1.0).unwrap();
        let batch = annealer_model_samples(&p, &e, &g, &AnnealConfig::geometric(200, 200, 0.1, 10.0, 1.0, 3)).unwrap();
        let mut rng = stream(4, &[]);
        let uniform: f64 = (0..20_000)
            .map(|_| p.energy(&BinaryVector::random(16, &mut rng), &BinaryVector::random(8, &mut rng)).unwrap())
            .sum::<f64>()
            / 20_000.0;
        assert!(batch.mean_energy(&p) < uniform, "{} vs {uniform}", batch.mean_energy(&p));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]

        #[test]
        fn scale_divides_every_problem_term(
            n in 1usize..9,
            m in 1usize..9,
            seed in proptest::prelude::any::<u64>(),
            s in 0.1f64..16.0,
        ) {
            let g = ChimeraGraph::new(2, []).unwrap();
            let e = embed_rbm(&g, n, m, -1.0).unwrap();
            let p = random_params(n, m, 2.0, seed);
            let one = rbm_to_ising(&p, &e, &g, 1.0, None).unwrap();
            let scaled = rbm_to_ising(&p, &e, &g, s, None).unwrap();
            for (a, b) in one.fields().iter().zip(scaled.fields()) {
                proptest::prop_assert!((b - a / s).abs() <= 1e-12 * (1.0 + a.abs()));
            }
            for (a, b) in one.problem_couplings().iter().zip(scaled.problem_couplings()) {
                proptest::prop_assert_eq!((a.a, a.b), (b.a, b.b));
                proptest::prop_assert!((b.value - a.value / s).abs() <= 1e-12 * (1.0 + a.value.abs()));
            }
            proptest::prop_assert_eq!(one.chain_couplings(), scaled.chain_couplings());
        }

        #[test]
        fn consistent_chains_reproduce_rbm_energy(
            n in 1usize..9,
            m in 1usize..9,
            seed in proptest::prelude::any::<u64>(),
            vc in proptest::prelude::any::<u64>(),
            hc in proptest::prelude::any::<u64>(),
            s in 0.5f64..8.0,
        ) {
            let g = ChimeraGraph::new(2, []).unwrap();
            let e = embed_rbm(&g, n, m, -1.0).unwrap();
            let p = random_params(n, m, 2.0, seed);
            let inst = rbm_to_ising(&p, &e, &g, s, None).unwrap();
            let v = BinaryVector::from_code(vc, n);
            let h = BinaryVector::from_code(hc, m);
            let spins = spins_for(&e, g.num_qubits(), &v, &h);
            let want = p.energy(&v, &h).unwrap() / s;
            proptest::prop_assert!((inst.problem_energy(&spins) + inst.offset() - want).abs() < 1e-10);
        }

        #[test]
        fn inference_never_changes_clamped_bits(
            seed in proptest::prelude::any::<u64>(),
            clamp_code in proptest::prelude::any::<u64>(),
            value_code in proptest::prelude::any::<u64>(),
        ) {
            let g = ChimeraGraph::new(2, []).unwrap();
            let e = embed_rbm(&g, 6, 4, -1.0).unwrap();
            let p = random_params(6, 4, 3.0, seed);
            let clamped: Vec<bool> = (0..6).map(|i| (clamp_code >> i) & 1 == 1).collect();
            let mask = ClampMask::new(clamped, BinaryVector::from_code(value_code, 6)).unwrap();
            let cfg = AnnealConfig::geometric(3, 30, 0.1, 10.0, 1.0, seed);
            let out = anneal_inference(&p, &e, &g, &cfg, &mask).unwrap();
            proptest::prop_assert!(mask.is_respected_by(&out));
        }
    }
}
