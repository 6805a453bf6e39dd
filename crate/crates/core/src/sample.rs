//! Model-expectation sample sets.

use crate::rbm::{BinaryVector, RbmParams};

/// Which sampler produced a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleSource {
    ContrastiveDivergence(usize),
    Annealer,
    Exact,
}

/// Chain-break and energy statistics attached to annealer batches.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SampleDiagnostics {
    /// Broken chains summed over all reads.
    pub chain_breaks: usize,
    /// Chains inspected summed over all reads.
    pub chains_checked: usize,
    /// Coefficients clipped to the hardware range, if clipping was enabled.
    pub clipped_coefficients: usize,
}

impl SampleDiagnostics {
    pub fn break_rate(&self) -> Option<f64> {
        (self.chains_checked > 0).then(|| self.chain_breaks as f64 / self.chains_checked as f64)
    }
}

/// Joint `(v, h)` configurations used for the model term of the gradient.
///
/// Samples are equally weighted unless explicit weights are attached (the
/// exact enumeration sampler uses Boltzmann weights).
#[derive(Clone, Debug)]
pub struct SampleBatch {
    pairs: Vec<(BinaryVector, BinaryVector)>,
    weights: Option<Vec<f64>>,
    source: SampleSource,
    pub diagnostics: SampleDiagnostics,
}

impl SampleBatch {
    pub fn new(pairs: Vec<(BinaryVector, BinaryVector)>, source: SampleSource) -> Self {
        SampleBatch {
            pairs,
            weights: None,
            source,
            diagnostics: SampleDiagnostics::default(),
        }
    }

    /// Weighted batch; weights are normalized to sum to one.
    pub fn weighted(
        pairs: Vec<(BinaryVector, BinaryVector)>,
        weights: Vec<f64>,
        source: SampleSource,
    ) -> Self {
        assert_eq!(pairs.len(), weights.len());
        let total: f64 = weights.iter().sum();
        SampleBatch {
            pairs,
            weights: Some(weights.iter().map(|w| w / total).collect()),
            source,
            diagnostics: SampleDiagnostics::default(),
        }
    }

    /// Every joint state of `p` with its exact Boltzmann probability.
    pub fn exact_enumeration(p: &RbmParams) -> Self {
        let (n, m) = (p.n_visible(), p.n_hidden());
        assert!(n + m <= 24, "exact enumeration limited to 24 units");
        let mut pairs = Vec::with_capacity(1 << (n + m));
        let mut log_w = Vec::with_capacity(1 << (n + m));
        for vc in 0..(1u64 << n) {
            let v = BinaryVector::from_code(vc, n);
            for hc in 0..(1u64 << m) {
                let h = BinaryVector::from_code(hc, m);
                log_w.push(-p.energy_unchecked(v.as_slice(), h.as_slice()));
                pairs.push((v.clone(), h));
            }
        }
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights = log_w.iter().map(|x| (x - max).exp()).collect();
        SampleBatch::weighted(pairs, weights, SampleSource::Exact)
    }

    pub fn pairs(&self) -> &[(BinaryVector, BinaryVector)] {
        &self.pairs
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn source(&self) -> SampleSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Mean model energy of the samples.
    pub fn mean_energy(&self, p: &RbmParams) -> f64 {
        let energies = self
            .pairs
            .iter()
            .map(|(v, h)| p.energy_unchecked(v.as_slice(), h.as_slice()));
        match &self.weights {
            Some(w) => energies.zip(w).map(|(e, w)| e * w).sum(),
            None => energies.sum::<f64>() / self.pairs.len() as f64,
        }
    }
}
