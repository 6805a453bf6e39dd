//! Log-likelihood gradient assembly and gradient-ascent training.

use std::time::Instant;

use rand::seq::SliceRandom;

use crate::annealer::{annealer_model_samples, AnnealConfig};
use crate::chimera::{ChimeraEmbedding, ChimeraGraph};
use crate::error::{Error, Result};
use crate::eval::{accuracy_repeated, ClassifyMethod, MetricsRow};
use crate::gibbs::cd_model_samples;
use crate::math::{sigmoid, LogSumExp};
use crate::rbm::{BinaryVector, RbmParams, EXACT_HIDDEN_CAP};
use crate::rng::{self, tag};
use crate::sample::SampleBatch;
use crate::bas::BasRecord;

/// Largest `n_visible + n_hidden` accepted by [`exact_model_term`].
pub const EXACT_MODEL_TERM_CAP: usize = 20;

/// Gradient (or expectation) with respect to `W`, `b` and `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub n_visible: usize,
    pub n_hidden: usize,
    /// Row-major, visible index first.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl Gradient {
    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        Gradient {
            n_visible,
            n_hidden,
            w: vec![0.0; n_visible * n_hidden],
            b: vec![0.0; n_visible],
            c: vec![0.0; n_hidden],
        }
    }

    pub fn w(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n_hidden + j]
    }

    fn scale(&mut self, k: f64) {
        self.iter_mut().for_each(|x| *x *= k);
    }

    fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w.iter_mut().chain(self.b.iter_mut()).chain(self.c.iter_mut())
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.w.iter().chain(self.b.iter()).chain(self.c.iter())
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &Gradient) -> Gradient {
        let zip = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect();
        Gradient {
            n_visible: self.n_visible,
            n_hidden: self.n_hidden,
            w: zip(&self.w, &other.w),
            b: zip(&self.b, &other.b),
            c: zip(&self.c, &other.c),
        }
    }

    /// Adds `weight * (v outer h, v, h)`.
    fn accumulate(&mut self, v: &[u8], h: &[f64], weight: f64) {
        for (i, &vi) in v.iter().enumerate() {
            if vi == 1 {
                self.b[i] += weight;
                let row = &mut self.w[i * self.n_hidden..(i + 1) * self.n_hidden];
                for (w, &hj) in row.iter_mut().zip(h) {
                    *w += weight * hj;
                }
            }
        }
        for (c, &hj) in self.c.iter_mut().zip(h) {
            *c += weight * hj;
        }
    }
}

fn check_records(data: &[BinaryVector], p: &RbmParams) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if let Some(v) = data.iter().find(|v| v.len() != p.n_visible()) {
        return Err(Error::dim(format!(
            "record has {} bits, model has {} visible units",
            v.len(),
            p.n_visible()
        )));
    }
    Ok(())
}

/// Data-dependent term: means of `v (x) P(h=1|v)`, `v` and `P(h=1|v)` over
/// the batch, using exact activation probabilities.
pub fn data_term(batch: &[BinaryVector], p: &RbmParams) -> Result<Gradient> {
    check_records(batch, p)?;
    let mut g = Gradient::zeros(p.n_visible(), p.n_hidden());
    let mut act = vec![0.0; p.n_hidden()];
    for v in batch {
        p.hidden_input(v.as_slice(), &mut act);
        act.iter_mut().for_each(|x| *x = sigmoid(*x));
        g.accumulate(v.as_slice(), &act, 1.0);
    }
    g.scale(1.0 / batch.len() as f64);
    Ok(g)
}

/// Model term estimated from samples: (weighted) means of `v (x) h`, `v`, `h`.
pub fn model_term(samples: &SampleBatch) -> Result<Gradient> {
    let Some((v0, h0)) = samples.pairs().first() else {
        return Err(Error::InvalidArgument("empty sample batch".into()));
    };
    let (n, m) = (v0.len(), h0.len());
    let mut g = Gradient::zeros(n, m);
    let mut hf = vec![0.0; m];
    for (k, (v, h)) in samples.pairs().iter().enumerate() {
        if v.len() != n || h.len() != m {
            return Err(Error::dim("samples have inconsistent dimensions"));
        }
        for (x, &b) in hf.iter_mut().zip(h.as_slice()) {
            *x = f64::from(b);
        }
        let weight = samples.weights().map_or(1.0, |w| w[k]);
        g.accumulate(v.as_slice(), &hf, weight);
    }
    if samples.weights().is_none() {
        g.scale(1.0 / samples.len() as f64);
    }
    Ok(g)
}

/// Exact Boltzmann expectations of `v (x) h`, `v` and `h`.
///
/// Enumerates the hidden layer; given `h` the visibles are independent with
/// `E[v_i | h] = sigmoid(b_i + (W h)_i)`.
pub fn exact_model_term(p: &RbmParams) -> Result<Gradient> {
    if p.n_visible() + p.n_hidden() > EXACT_MODEL_TERM_CAP {
        return Err(Error::Capacity(format!(
            "exact model term limited to {EXACT_MODEL_TERM_CAP} units, model has {}",
            p.n_visible() + p.n_hidden()
        )));
    }
    let log_z = p.fold_hidden_states(LogSumExp::default(), |acc, lw, _, _| acc.add(lw)).value();
    let (n, m) = (p.n_visible(), p.n_hidden());
    let mut g = Gradient::zeros(n, m);
    let mut ev = vec![0.0; n];
    g = p.fold_hidden_states(g, |mut g, lw, h, s| {
        let prob = (lw - log_z).exp();
        for (e, &x) in ev.iter_mut().zip(s) {
            *e = sigmoid(x);
        }
        for (i, &e) in ev.iter().enumerate() {
            g.b[i] += prob * e;
            for j in 0..m {
                if h[j] == 1 {
                    g.w[i * m + j] += prob * e;
                }
            }
        }
        for j in 0..m {
            if h[j] == 1 {
                g.c[j] += prob;
            }
        }
        g
    });
    Ok(g)
}

/// `theta <- theta + lr * grad`.
pub fn apply_update(p: &mut RbmParams, grad: &Gradient, lr: f64) -> Result<()> {
    if grad.n_visible != p.n_visible() || grad.n_hidden != p.n_hidden() {
        return Err(Error::dim("gradient shape differs from model"));
    }
    if let Some(bad) = grad.iter().find(|x| !x.is_finite()) {
        return Err(Error::Numerical(format!("non-finite gradient component {bad}")));
    }
    for (w, g) in p.weights_mut().iter_mut().zip(&grad.w) {
        *w += lr * g;
    }
    for (b, g) in p.visible_bias_mut().iter_mut().zip(&grad.b) {
        *b += lr * g;
    }
    for (c, g) in p.hidden_bias_mut().iter_mut().zip(&grad.c) {
        *c += lr * g;
    }
    p.check_finite()
}

/// How the model term is obtained.
#[derive(Clone, Debug, PartialEq)]
pub enum SamplerKind {
    /// CD-n chains seeded at the batch records.
    Cd(usize),
    /// Simulated annealer on the Chimera embedding.
    Annealer,
    /// Exact enumeration.
    Exact,
}

/// Annealer bindings used when training or classifying with the annealer.
#[derive(Clone, Debug)]
pub struct AnnealContext {
    pub graph: ChimeraGraph,
    pub embedding: ChimeraEmbedding,
    /// `num_reads` is overridden per update to the batch size unless
    /// [`TrainConfig::anneal_reads`] is set.
    pub config: AnnealConfig,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Records per update; `None` is full batch.
    pub batch: Option<usize>,
    pub sampler: SamplerKind,
    pub init_scale: f64,
    pub seed: u64,
    /// Annealer reads per update; `None` uses the batch size.
    pub anneal_reads: Option<usize>,
    /// Evaluate test accuracy every this many epochs (0 disables).
    pub eval_every: usize,
    /// Record training-set log-likelihood every this many epochs (0 disables).
    pub loglik_every: usize,
    pub classify_cycles: usize,
    /// Majority vote over this many classification passes per test record.
    pub classify_repeats: usize,
    /// Classify with the annealer under this configuration instead of Gibbs
    /// sampling. Uses the graph and embedding passed to [`train_loop`].
    pub eval_anneal: Option<AnnealConfig>,
    /// Fill the `seconds` metric with wall-clock time.
    pub record_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 400,
            learning_rate: 0.05,
            batch: None,
            sampler: SamplerKind::Cd(1),
            init_scale: 0.1,
            seed: 0,
            anneal_reads: None,
            eval_every: 1,
            loglik_every: 0,
            classify_cycles: crate::gibbs::DEFAULT_INFERENCE_CYCLES,
            classify_repeats: 1,
            eval_anneal: None,
            record_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if self.batch == Some(0) {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if self.sampler == SamplerKind::Cd(0) {
            return Err(Error::InvalidArgument("CD-n requires n >= 1".into()));
        }
        if self.classify_repeats == 0 {
            return Err(Error::InvalidArgument("classification repeats must be at least 1".into()));
        }
        if self.init_scale < 0.0 || !self.init_scale.is_finite() {
            return Err(Error::InvalidArgument("init scale must be non-negative".into()));
        }
        Ok(())
    }
}

/// Initial parameters for `cfg`: uniform weights, zero biases.
pub fn init_params(n_visible: usize, n_hidden: usize, cfg: &TrainConfig) -> RbmParams {
    let mut rng = rng::stream(cfg.seed, &[tag::INIT]);
    RbmParams::random_init(n_visible, n_hidden, cfg.init_scale, &mut rng)
}

/// Samples for the model term of one update.
pub fn model_samples(
    sampler: &SamplerKind,
    batch: &[BinaryVector],
    p: &RbmParams,
    anneal: Option<&AnnealContext>,
    reads: usize,
    seed: u64,
) -> Result<Option<SampleBatch>> {
    match sampler {
        SamplerKind::Cd(n) => cd_model_samples(batch, p, *n, seed).map(Some),
        SamplerKind::Annealer => {
            let ctx = anneal.ok_or_else(|| Error::InvalidArgument("annealer sampler needs an embedding".into()))?;
            let cfg = ctx.config.with_seed(seed).with_reads(reads);
            annealer_model_samples(p, &ctx.embedding, &ctx.graph, &cfg).map(Some)
        }
        SamplerKind::Exact => Ok(None),
    }
}

/// Gradient-ascent training.
///
/// Each epoch visits the training records once (shuffled per epoch when
/// minibatching). Each update adds `lr * (data_term - model_term)`.
/// `observer` is called after every epoch with the epoch number, parameters
/// and metrics; an error from it stops training.
pub fn train_loop(
    init: RbmParams,
    train: &[BasRecord],
    test: &[BasRecord],
    cfg: &TrainConfig,
    anneal: Option<&AnnealContext>,
    mut observer: impl FnMut(usize, &RbmParams, &MetricsRow) -> Result<()>,
) -> Result<(RbmParams, Vec<MetricsRow>)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if (cfg.sampler == SamplerKind::Annealer || cfg.eval_anneal.is_some()) && anneal.is_none() {
        return Err(Error::InvalidArgument("annealer sampling needs an embedding".into()));
    }
    let eval_ctx = match (&cfg.eval_anneal, anneal) {
        (Some(config), Some(ctx)) => {
            config.validate()?;
            Some(AnnealContext { config: config.clone(), ..ctx.clone() })
        }
        _ => None,
    };
    if cfg.loglik_every > 0 && init.n_hidden() > EXACT_HIDDEN_CAP {
        return Err(Error::Capacity(format!(
            "log-likelihood tracking needs at most {EXACT_HIDDEN_CAP} hidden units, model has {}",
            init.n_hidden()
        )));
    }
    let data: Vec<BinaryVector> = train.iter().map(|r| r.bits.clone()).collect();
    let batch_size = cfg.batch.unwrap_or(data.len()).min(data.len());
    let mut p = init;
    let mut rows = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        if batch_size < data.len() {
            order.shuffle(&mut rng::stream(cfg.seed, &[tag::SHUFFLE, epoch as u64]));
        }
        let mut energy_sum = 0.0;
        let mut energy_batches = 0usize;
        let mut breaks = 0usize;
        let mut chains = 0usize;
        for (update, idx) in order.chunks(batch_size).enumerate() {
            let batch: Vec<BinaryVector> = idx.iter().map(|&k| data[k].clone()).collect();
            let seed = mix_seed(cfg.seed, epoch, update);
            let reads = cfg.anneal_reads.unwrap_or(batch.len());
            let step = (|| {
                let positive = data_term(&batch, &p)?;
                let negative = match model_samples(&cfg.sampler, &batch, &p, anneal, reads, seed)? {
                    Some(samples) => {
                        energy_sum += samples.mean_energy(&p);
                        energy_batches += 1;
                        breaks += samples.diagnostics.chain_breaks;
                        chains += samples.diagnostics.chains_checked;
                        model_term(&samples)?
                    }
                    None => exact_model_term(&p)?,
                };
                apply_update(&mut p, &positive.sub(&negative), cfg.learning_rate)
            })();
            step.map_err(|e| Error::Epoch { epoch, source: Box::new(e) })?;
        }

        let mut row = MetricsRow {
            epoch,
            mean_sample_energy: (energy_batches > 0).then(|| energy_sum / energy_batches as f64),
            chain_break_rate: (chains > 0).then(|| breaks as f64 / chains as f64),
            ..MetricsRow::default()
        };
        if cfg.eval_every > 0 && epoch % cfg.eval_every == 0 && !test.is_empty() {
            let method = match &eval_ctx {
                Some(ctx) => ClassifyMethod::Anneal(ctx),
                None => ClassifyMethod::Gibbs { cycles: cfg.classify_cycles },
            };
            let seed = mix_seed(cfg.seed ^ tag::EVAL, epoch, 0);
            let acc = accuracy_repeated(test, &p, &method, cfg.classify_repeats, seed)
                .map_err(|e| Error::Epoch { epoch, source: Box::new(e) })?;
            row.accuracy = Some(acc);
        }
        if cfg.loglik_every > 0 && epoch % cfg.loglik_every == 0 {
            let ll = p.log_likelihood(&data).map_err(|e| Error::Epoch { epoch, source: Box::new(e) })?;
            row.loglik_per_record = Some(ll.per_record);
        }
        if cfg.record_time {
            row.seconds = Some(started.elapsed().as_secs_f64());
        }
        log::info!(
            "epoch {epoch}: {:.3}s accuracy {:?} loglik {:?}",
            started.elapsed().as_secs_f64(),
            row.accuracy.map(|a| a.total()),
            row.loglik_per_record
        );
        observer(epoch, &p, &row)?;
        rows.push(row);
    }
    Ok((p, rows))
}

fn mix_seed(seed: u64, epoch: usize, update: usize) -> u64 {
    use rand::RngCore;
    rng::stream(seed, &[epoch as u64, update as u64]).next_u64()
}
