//! Block Gibbs sampling: CD-n chains for training and clamped chains for
//! inference.

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::rbm::{BinaryVector, RbmParams};
use crate::rng::{self, Rng};
use crate::sample::{SampleBatch, SampleSource};

/// Default number of clamped Gibbs cycles used for inference.
pub const DEFAULT_INFERENCE_CYCLES: usize = 50;

/// Current `(v, h)` of a chain together with its generator.
#[derive(Clone, Debug)]
pub struct GibbsState {
    pub v: BinaryVector,
    pub h: BinaryVector,
    pub rng: Rng,
}

impl GibbsState {
    pub fn new(v: BinaryVector, h: BinaryVector, rng: Rng) -> Self {
        GibbsState { v, h, rng }
    }
}

/// Visible positions fixed to known values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClampMask {
    clamped: Vec<bool>,
    values: BinaryVector,
}

impl ClampMask {
    pub fn new(clamped: Vec<bool>, values: BinaryVector) -> Result<Self> {
        if clamped.len() != values.len() {
            return Err(Error::dim(format!(
                "clamp mask has {} flags but {} values",
                clamped.len(),
                values.len()
            )));
        }
        Ok(ClampMask { clamped, values })
    }

    /// Clamps every position to `values`.
    pub fn all(values: BinaryVector) -> Self {
        ClampMask {
            clamped: vec![true; values.len()],
            values,
        }
    }

    /// Clamps every position of `values` except those listed in `free`.
    pub fn all_except(values: BinaryVector, free: &[usize]) -> Self {
        let mut clamped = vec![true; values.len()];
        for &i in free {
            clamped[i] = false;
        }
        ClampMask { clamped, values }
    }

    pub fn none(len: usize) -> Self {
        ClampMask {
            clamped: vec![false; len],
            values: BinaryVector::zeros(len),
        }
    }

    pub fn len(&self) -> usize {
        self.clamped.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clamped.is_empty()
    }

    pub fn is_clamped(&self, i: usize) -> bool {
        self.clamped[i]
    }

    pub fn value(&self, i: usize) -> u8 {
        self.values.get(i)
    }

    pub fn values(&self) -> &BinaryVector {
        &self.values
    }

    pub fn clamped_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.clamped[i])
    }

    pub fn free_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| !self.clamped[i])
    }

    pub fn is_fully_clamped(&self) -> bool {
        self.clamped.iter().all(|&c| c)
    }

    /// Overwrites the clamped positions of `v`.
    pub fn apply(&self, v: &mut BinaryVector) {
        for i in self.clamped_indices() {
            v.set(i, self.values.get(i) == 1);
        }
    }

    /// True when `v` agrees with the mask on every clamped index.
    pub fn is_respected_by(&self, v: &BinaryVector) -> bool {
        v.len() == self.len() && self.clamped_indices().all(|i| v.get(i) == self.values.get(i))
    }
}

fn sample_hidden(p: &RbmParams, v: &[u8], pre: &mut [f64], h: &mut [u8], rng: &mut Rng) {
    p.hidden_input(v, pre);
    for (hj, &x) in h.iter_mut().zip(pre.iter()) {
        *hj = u8::from(rng.gen::<f64>() < sigmoid(x));
    }
}

fn sample_visible(p: &RbmParams, h: &[u8], v: &mut [u8], rng: &mut Rng) {
    for (i, vi) in v.iter_mut().enumerate() {
        *vi = u8::from(rng.gen::<f64>() < sigmoid(p.visible_input_at(i, h)));
    }
}

/// One block update: `h ~ P(h|v)`, then `v ~ P(v|h)`.
pub fn gibbs_step(state: &mut GibbsState, p: &RbmParams) -> Result<()> {
    check_state(state, p)?;
    let mut pre = vec![0.0; p.n_hidden()];
    step_in_place(state, p, &mut pre);
    Ok(())
}

fn check_state(state: &GibbsState, p: &RbmParams) -> Result<()> {
    if state.v.len() != p.n_visible() || state.h.len() != p.n_hidden() {
        return Err(Error::dim(format!(
            "chain state is {}x{}, model is {}x{}",
            state.v.len(),
            state.h.len(),
            p.n_visible(),
            p.n_hidden()
        )));
    }
    Ok(())
}

fn step_in_place(state: &mut GibbsState, p: &RbmParams, pre: &mut [f64]) {
    let mut h = std::mem::take(&mut state.h).into_inner();
    let mut v = std::mem::take(&mut state.v).into_inner();
    sample_hidden(p, &v, pre, &mut h, &mut state.rng);
    sample_visible(p, &h, &mut v, &mut state.rng);
    state.h = BinaryVector::new(h).expect("sampled bits are binary");
    state.v = BinaryVector::new(v).expect("sampled bits are binary");
}

/// CD-n negative samples.
///
/// Each record seeds its own chain on stream `(seed, record index)`; the chain
/// runs `n` block steps and then resamples `h ~ P(h | v_n)`, emitting
/// `(v_n, h_n)`. With `n = 1` this is data -> h -> v' -> h'.
pub fn cd_model_samples(
    data: &[BinaryVector],
    p: &RbmParams,
    n: usize,
    seed: u64,
) -> Result<SampleBatch> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("CD needs at least one record".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("CD-n requires n >= 1".into()));
    }
    if let Some(bad) = data.iter().find(|v| v.len() != p.n_visible()) {
        return Err(Error::dim(format!(
            "record has {} bits, model has {} visible units",
            bad.len(),
            p.n_visible()
        )));
    }
    let pairs: Vec<(BinaryVector, BinaryVector)> = data
        .par_iter()
        .enumerate()
        .map(|(t, v0)| {
            let mut rng = rng::stream(seed, &[rng::tag::CD, t as u64]);
            let mut pre = vec![0.0; p.n_hidden()];
            let mut v = v0.as_slice().to_vec();
            let mut h = vec![0u8; p.n_hidden()];
            for _ in 0..n {
                sample_hidden(p, &v, &mut pre, &mut h, &mut rng);
                sample_visible(p, &h, &mut v, &mut rng);
            }
            sample_hidden(p, &v, &mut pre, &mut h, &mut rng);
            (
                BinaryVector::new(v).expect("binary"),
                BinaryVector::new(h).expect("binary"),
            )
        })
        .collect();
    Ok(SampleBatch::new(pairs, SampleSource::ContrastiveDivergence(n)))
}

/// Runs `cycles` block sweeps with the clamped visibles held fixed and
/// returns the final visible vector.
///
/// Unclamped positions of `initial` are replaced by fair coin flips before
/// the first sweep. Only free visibles are resampled; the hidden input from
/// the clamped part is computed once.
pub fn clamped_gibbs(
    initial: &BinaryVector,
    mask: &ClampMask,
    p: &RbmParams,
    cycles: usize,
    rng: &mut Rng,
) -> Result<BinaryVector> {
    if initial.len() != p.n_visible() || mask.len() != p.n_visible() {
        return Err(Error::dim(format!(
            "input has {} bits and mask {} positions, model has {} visible units",
            initial.len(),
            mask.len(),
            p.n_visible()
        )));
    }
    let mut v = initial.clone();
    mask.apply(&mut v);
    if mask.is_fully_clamped() {
        return Ok(v);
    }
    let free: Vec<usize> = mask.free_indices().collect();
    for &i in &free {
        v.set(i, rng.gen::<bool>());
    }

    let mut clamped_only = v.as_slice().to_vec();
    for &i in &free {
        clamped_only[i] = 0;
    }
    let mut base = vec![0.0; p.n_hidden()];
    p.hidden_input(&clamped_only, &mut base);

    let mut pre = vec![0.0; p.n_hidden()];
    let mut h = vec![0u8; p.n_hidden()];
    for _ in 0..cycles {
        pre.copy_from_slice(&base);
        for &i in &free {
            if v.get(i) == 1 {
                for (x, w) in pre.iter_mut().zip(p.visible_row(i)) {
                    *x += w;
                }
            }
        }
        for (hj, &x) in h.iter_mut().zip(&pre) {
            *hj = u8::from(rng.gen::<f64>() < sigmoid(x));
        }
        for &i in &free {
            let on = rng.gen::<f64>() < sigmoid(p.visible_input_at(i, &h));
            v.set(i, on);
        }
    }
    Ok(v)
}
