//! Classification, reconstruction and metrics over trained models.

use std::fmt::Write as _;

use rand::RngCore;
use rayon::prelude::*;

use crate::annealer::anneal_inference;
use crate::bas::{BasRecord, Label};
use crate::error::{Error, Result};
use crate::gibbs::{clamped_gibbs, ClampMask};
use crate::rbm::{BinaryVector, RbmParams};
use crate::rng::{self, tag, Rng};
use crate::train::AnnealContext;

/// Inference procedure used to fill unclamped visibles.
#[derive(Clone, Copy, Debug)]
pub enum ClassifyMethod<'a> {
    /// Clamped block Gibbs sampling for `cycles` sweeps.
    Gibbs { cycles: usize },
    /// Lowest-energy read of the simulated annealer with pinned visibles.
    Anneal(&'a AnnealContext),
}

/// Outcome of reading the two label units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Prediction {
    Bar,
    Stripe,
    Invalid,
}

impl Prediction {
    pub fn from_bits(l1: u8, l2: u8) -> Self {
        match Label::from_bits(l1, l2) {
            Some(Label::Bar) => Prediction::Bar,
            Some(Label::Stripe) => Prediction::Stripe,
            None => Prediction::Invalid,
        }
    }

    pub fn matches(self, label: Label) -> bool {
        matches!(
            (self, label),
            (Prediction::Bar, Label::Bar) | (Prediction::Stripe, Label::Stripe)
        )
    }
}

/// Fills the free positions of `mask` starting from `corrupted`; clamped
/// positions always keep their mask values.
pub fn reconstruct(
    corrupted: &BinaryVector,
    mask: &ClampMask,
    p: &RbmParams,
    method: &ClassifyMethod<'_>,
    rng: &mut Rng,
) -> Result<BinaryVector> {
    match method {
        ClassifyMethod::Gibbs { cycles } => clamped_gibbs(corrupted, mask, p, *cycles, rng),
        ClassifyMethod::Anneal(ctx) => {
            if corrupted.len() != p.n_visible() {
                return Err(Error::dim(format!(
                    "input has {} bits, model has {} visible units",
                    corrupted.len(),
                    p.n_visible()
                )));
            }
            let cfg = ctx.config.with_seed(rng.next_u64());
            anneal_inference(p, &ctx.embedding, &ctx.graph, &cfg, mask)
        }
    }
}

/// Clamps `features` (every visible except the trailing two label units),
/// randomizes the labels, runs inference and reads the labels back.
pub fn classify(
    features: &[u8],
    p: &RbmParams,
    method: &ClassifyMethod<'_>,
    rng: &mut Rng,
) -> Result<Prediction> {
    let n = p.n_visible();
    if n < 2 || features.len() + 2 != n {
        return Err(Error::dim(format!(
            "{} feature bits given, model with {n} visible units expects {}",
            features.len(),
            n.saturating_sub(2)
        )));
    }
    let mut bits = features.to_vec();
    bits.extend([0, 0]);
    let values = BinaryVector::new(bits)?;
    let mask = ClampMask::all_except(values.clone(), &[n - 2, n - 1]);
    let out = reconstruct(&values, &mask, p, method, rng)?;
    Ok(Prediction::from_bits(out.get(n - 2), out.get(n - 1)))
}

/// Majority vote over `repeats` classification passes. A tie between the
/// top outcomes, or a plurality of invalid readouts, is `Invalid`.
pub fn classify_repeated(
    features: &[u8],
    p: &RbmParams,
    method: &ClassifyMethod<'_>,
    repeats: usize,
    rng: &mut Rng,
) -> Result<Prediction> {
    if repeats <= 1 {
        return classify(features, p, method, rng);
    }
    let mut counts = [0usize; 3];
    for _ in 0..repeats {
        counts[match classify(features, p, method, rng)? {
            Prediction::Bar => 0,
            Prediction::Stripe => 1,
            Prediction::Invalid => 2,
        }] += 1;
    }
    Ok(if counts[0] > counts[1] && counts[0] > counts[2] {
        Prediction::Bar
    } else if counts[1] > counts[0] && counts[1] > counts[2] {
        Prediction::Stripe
    } else {
        Prediction::Invalid
    })
}

/// Correct-prediction counts per class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Accuracy {
    pub bar_correct: usize,
    pub bar_total: usize,
    pub stripe_correct: usize,
    pub stripe_total: usize,
}

impl Accuracy {
    fn ratio(a: usize, b: usize) -> Option<f64> {
        (b > 0).then(|| a as f64 / b as f64)
    }

    pub fn bar(&self) -> Option<f64> {
        Self::ratio(self.bar_correct, self.bar_total)
    }

    pub fn stripe(&self) -> Option<f64> {
        Self::ratio(self.stripe_correct, self.stripe_total)
    }

    /// Correct predictions over all predictions.
    pub fn total(&self) -> f64 {
        Self::ratio(self.bar_correct + self.stripe_correct, self.bar_total + self.stripe_total)
            .unwrap_or(0.0)
    }

    fn record(&mut self, label: Label, correct: bool) {
        let (hit, total) = match label {
            Label::Bar => (&mut self.bar_correct, &mut self.bar_total),
            Label::Stripe => (&mut self.stripe_correct, &mut self.stripe_total),
        };
        *total += 1;
        *hit += usize::from(correct);
    }
}

/// Fraction of `test` classified correctly. Record `k` draws its randomness
/// from its own stream of `seed`, so results do not depend on thread count.
pub fn accuracy(test: &[BasRecord], p: &RbmParams, method: &ClassifyMethod<'_>, seed: u64) -> Result<Accuracy> {
    accuracy_repeated(test, p, method, 1, seed)
}

/// [`accuracy`] with `repeats` passes per record combined by majority vote.
pub fn accuracy_repeated(
    test: &[BasRecord],
    p: &RbmParams,
    method: &ClassifyMethod<'_>,
    repeats: usize,
    seed: u64,
) -> Result<Accuracy> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let predictions: Vec<Prediction> = test
        .par_iter()
        .enumerate()
        .map(|(k, r)| {
            let mut rng = rng::stream(seed, &[tag::EVAL, k as u64]);
            classify_repeated(r.features(), p, method, repeats, &mut rng)
        })
        .collect::<Result<_>>()?;
    let mut acc = Accuracy::default();
    for (r, pred) in test.iter().zip(predictions) {
        acc.record(r.label, pred.matches(r.label));
    }
    Ok(acc)
}

/// Exact per-record log-likelihood of each `(epoch, params)` checkpoint.
pub fn loglik_curve(checkpoints: &[(usize, RbmParams)], data: &[BinaryVector]) -> Result<Vec<(usize, f64)>> {
    checkpoints
        .iter()
        .map(|(epoch, p)| Ok((*epoch, p.log_likelihood(data)?.per_record)))
        .collect()
}

/// One line of the metrics CSV. Absent values are written as empty fields.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub accuracy: Option<Accuracy>,
    pub loglik_per_record: Option<f64>,
    pub mean_sample_energy: Option<f64>,
    pub chain_break_rate: Option<f64>,
    pub seconds: Option<f64>,
}

impl MetricsRow {
    pub const HEADER: &'static str =
        "epoch,accuracy_bar,accuracy_stripe,accuracy_total,loglik_per_record,mean_sample_energy,chain_break_rate,seconds";

    pub fn to_csv(&self) -> String {
        fn opt(x: Option<f64>) -> String {
            x.map(|v| format!("{v}")).unwrap_or_default()
        }
        let acc = self.accuracy;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            opt(acc.and_then(|a| a.bar())),
            opt(acc.and_then(|a| a.stripe())),
            opt(acc.map(|a| a.total())),
            opt(self.loglik_per_record),
            opt(self.mean_sample_energy),
            opt(self.chain_break_rate),
            opt(self.seconds),
        )
    }
}

/// Header plus one line per row, newline terminated.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::new();
    writeln!(out, "{}", MetricsRow::HEADER).unwrap();
    for r in rows {
        writeln!(out, "{}", r.to_csv()).unwrap();
    }
    out
}
