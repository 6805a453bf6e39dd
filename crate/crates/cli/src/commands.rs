use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::RngCore;
use rbm_anneal::bas::{self, BasRecord, CorruptMode};
use rbm_anneal::chimera::read_dead_qubits;
use rbm_anneal::eval::{accuracy_repeated, metrics_csv, reconstruct as fill_in, ClassifyMethod, MetricsRow};
use rbm_anneal::rbm::EXACT_HIDDEN_CAP;
use rbm_anneal::train::{init_params, train_loop, AnnealContext, SamplerKind, TrainConfig, EXACT_MODEL_TERM_CAP};
use rbm_anneal::{embed_rbm, rng, AnnealConfig, ChimeraGraph, Error, RbmParams, Unit};

use crate::{
    AnnealArgs, Common, CorruptArg, CorruptModeArg, EmbedArgs, EvalArgs, GenDataArgs, MethodArg, ReconstructArgs,
    SamplerArg, TrainArgs,
};

/// Failure of a command, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad command line; clap prints it and picks the exit code.
    Usage(clap::Error),
    /// Invalid configuration (exit 2).
    Config(String),
    /// Missing or malformed input data, or I/O failure (exit 3).
    Data(String),
    /// A size limit was exceeded (exit 4).
    Capacity(String),
    /// Anything else (exit 5).
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(e) => e.exit_code() as u8,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Capacity(_) => 4,
            CliError::Internal(_) => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(e) => write!(f, "{e}"),
            CliError::Config(m) | CliError::Data(m) | CliError::Capacity(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e.root() {
            Error::InvalidArgument(_) => CliError::Config(msg),
            Error::Capacity(_) => CliError::Capacity(msg),
            Error::Dimension(_) | Error::Parse { .. } | Error::Io(_) | Error::Embedding(_) => CliError::Data(msg),
            _ => CliError::Internal(msg),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn io_error(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn setup(common: &Common) -> CliResult<PathBuf> {
    if common.threads > 0 {
        // A second initialisation only happens in tests; keep the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(common.threads).build_global();
    }
    let dir = common.out_dir();
    if !dir.is_dir() {
        return Err(CliError::Data(format!(
            "output directory {} does not exist; create it or pass --out-dir",
            dir.display()
        )));
    }
    Ok(dir)
}

fn write_file(path: &Path, contents: &str) -> CliResult {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn read_records(path: &Path) -> CliResult<Vec<BasRecord>> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    let records = bas::read_records(BufReader::new(file)).map_err(|e| io_error(path, e))?;
    if records.is_empty() {
        return Err(CliError::Data(format!("{}: no records", path.display())));
    }
    Ok(records)
}

fn read_checkpoint(path: &Path) -> CliResult<RbmParams> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    RbmParams::read_checkpoint(BufReader::new(file)).map_err(|e| io_error(path, e))
}

fn write_checkpoint(dir: &Path, epoch: usize, p: &RbmParams) -> rbm_anneal::Result<()> {
    let path = dir.join(format!("ckpt_{epoch}.rbm"));
    let mut out = BufWriter::new(File::create(&path)?);
    p.write_checkpoint(&mut out)?;
    out.flush()?;
    Ok(())
}

fn graph(args: &AnnealArgs) -> CliResult<ChimeraGraph> {
    let dead = match &args.dead_file {
        Some(path) => {
            let file = File::open(path).map_err(|e| io_error(path, e))?;
            read_dead_qubits(BufReader::new(file)).map_err(|e| io_error(path, e))?
        }
        None => Vec::new(),
    };
    Ok(ChimeraGraph::new(args.chimera_m, dead)?)
}

fn anneal_config(args: &AnnealArgs, reads: usize, seed: u64) -> CliResult<AnnealConfig> {
    let mut cfg = AnnealConfig::geometric(reads, args.sweeps, args.beta_min, args.beta_max, args.s_param, seed);
    cfg.clip = args.clip;
    cfg.validate()?;
    Ok(cfg)
}

fn anneal_context(args: &AnnealArgs, n_visible: usize, n_hidden: usize, reads: usize) -> CliResult<AnnealContext> {
    let g = graph(args)?;
    let embedding = embed_rbm(&g, n_visible, n_hidden, args.chain_coupling)?;
    let dropped = embedding.dropped_edges().len();
    if dropped > 0 {
        log::warn!("{dropped} logical edges could not be mapped and are ignored");
    }
    Ok(AnnealContext {
        graph: g,
        embedding,
        config: anneal_config(args, reads.max(1), 0)?,
    })
}

fn record_width(records: &[BasRecord], path: &Path) -> CliResult<usize> {
    let n = records[0].bits.len();
    if records.iter().any(|r| r.bits.len() != n) {
        return Err(CliError::Data(format!("{}: records have different lengths", path.display())));
    }
    Ok(n)
}

pub fn gen_data(a: &GenDataArgs, resolved: &str) -> CliResult {
    let dir = setup(&a.common)?;
    let pool = bas::pool(a.side)?;
    let records = bas::generate_bas(a.side, a.count, a.seed)?;
    println!("pool size {}", pool.len());
    match a.train {
        Some(n_train) => {
            let ds = bas::split(&records, n_train, a.seed)?;
            let (train, test) = (dir.join("train.txt"), dir.join("test.txt"));
            write_file(&train, &bas::write_records(&ds.train))?;
            write_file(&test, &bas::write_records(&ds.test))?;
            println!("train {} records -> {}", ds.train.len(), train.display());
            println!("test {} records -> {}", ds.test.len(), test.display());
        }
        None => {
            let path = dir.join("records.txt");
            write_file(&path, &bas::write_records(&records))?;
            println!("{} records -> {}", records.len(), path.display());
        }
    }
    write_file(&dir.join("run.cfg"), resolved)
}

pub fn train(a: &TrainArgs, resolved: &str) -> CliResult {
    let dir = setup(&a.common)?;
    let train_records = read_records(&a.train_file)?;
    let n_visible = record_width(&train_records, &a.train_file)?;
    let test_records = match &a.test_file {
        Some(path) => {
            let recs = read_records(path)?;
            if record_width(&recs, path)? != n_visible {
                return Err(CliError::Data(format!(
                    "{}: test records are not {n_visible} bits wide",
                    path.display()
                )));
            }
            recs
        }
        None => Vec::new(),
    };
    if a.eval_every > 0 && test_records.is_empty() {
        return Err(CliError::Config("--eval-every needs --test-file (or pass --eval-every 0)".into()));
    }

    let sampler = match a.sampler {
        SamplerArg::Cd1 => SamplerKind::Cd(1),
        SamplerArg::CdN => SamplerKind::Cd(a.cd_steps),
        SamplerArg::Anneal => SamplerKind::Annealer,
        SamplerArg::Exact => SamplerKind::Exact,
    };
    if sampler == SamplerKind::Exact && n_visible + a.hidden > EXACT_MODEL_TERM_CAP {
        return Err(CliError::Capacity(format!(
            "exact sampler is limited to {EXACT_MODEL_TERM_CAP} units, model has {}",
            n_visible + a.hidden
        )));
    }
    if a.loglik_every > 0 && a.hidden > EXACT_HIDDEN_CAP {
        return Err(CliError::Capacity(format!(
            "exact log-likelihood is limited to {EXACT_HIDDEN_CAP} hidden units, model has {}",
            a.hidden
        )));
    }
    let batch = (a.batch > 0).then_some(a.batch);
    let needs_annealer = sampler == SamplerKind::Annealer || a.eval_method == MethodArg::Anneal;
    let ctx = if needs_annealer {
        let default_reads = batch.unwrap_or(train_records.len()).min(train_records.len());
        Some(anneal_context(&a.anneal, n_visible, a.hidden, a.anneal.reads.max(default_reads))?)
    } else {
        None
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
        batch,
        sampler,
        init_scale: a.init_scale,
        seed: a.seed,
        anneal_reads: (a.anneal.reads > 0).then_some(a.anneal.reads),
        eval_every: a.eval_every,
        loglik_every: a.loglik_every,
        classify_cycles: a.cycles,
        classify_repeats: a.repeats as usize,
        eval_anneal: match a.eval_method {
            MethodArg::Anneal => Some(anneal_config(&a.anneal, a.anneal.inference_reads, 0)?),
            MethodArg::Gibbs => None,
        },
        record_time: a.timing,
    };
    cfg.validate()?;

    write_file(&dir.join("run.cfg"), resolved)?;
    let metrics_path = dir.join("metrics.csv");
    let mut metrics = BufWriter::new(File::create(&metrics_path).map_err(|e| io_error(&metrics_path, e))?);
    writeln!(metrics, "{}", MetricsRow::HEADER).map_err(|e| io_error(&metrics_path, e))?;

    let init = init_params(n_visible, a.hidden, &cfg);
    write_checkpoint(&dir, 0, &init)?;
    let started = Instant::now();
    let (_, rows) = train_loop(init, &train_records, &test_records, &cfg, ctx.as_ref(), |epoch, p, row| {
        writeln!(metrics, "{}", row.to_csv())?;
        metrics.flush()?;
        let cadence = a.checkpoint_every > 0 && epoch % a.checkpoint_every == 0;
        if cadence || epoch == a.epochs {
            write_checkpoint(&dir, epoch, p)?;
        }
        Ok(())
    })?;
    log::info!("trained {} epochs in {:.1}s", a.epochs, started.elapsed().as_secs_f64());
    let last = rows.last().expect("at least one epoch");
    if let Some(acc) = last.accuracy {
        println!("final test accuracy {:.4}", acc.total());
    }
    if let Some(ll) = last.loglik_per_record {
        println!("final log-likelihood per record {ll:.4}");
    }
    println!("metrics -> {}", metrics_path.display());
    Ok(())
}

/// Epoch number encoded in a `ckpt_<epoch>.rbm` file name.
fn checkpoint_epoch(path: &Path) -> Option<usize> {
    path.file_stem()?.to_str()?.strip_prefix("ckpt_")?.parse().ok()
}

fn expand_checkpoints(patterns: &[String]) -> CliResult<Vec<PathBuf>> {
    let mut paths = BTreeSet::new();
    for pattern in patterns {
        if pattern.contains(['*', '?', '[']) {
            let matches = glob::glob(pattern).map_err(|e| CliError::Config(format!("bad pattern {pattern}: {e}")))?;
            let before = paths.len();
            for m in matches {
                paths.insert(m.map_err(|e| CliError::Data(e.to_string()))?);
            }
            if paths.len() == before {
                return Err(CliError::Data(format!("no checkpoint matches {pattern}")));
            }
        } else {
            paths.insert(PathBuf::from(pattern));
        }
    }
    let mut paths: Vec<PathBuf> = paths.into_iter().collect();
    paths.sort_by_key(|p| (checkpoint_epoch(p), p.clone()));
    Ok(paths)
}

pub fn eval(a: &EvalArgs, resolved: &str) -> CliResult {
    let dir = setup(&a.common)?;
    if a.test_file.is_none() && !a.loglik {
        return Err(CliError::Config("nothing to evaluate: pass --test-file and/or --loglik".into()));
    }
    if a.loglik && a.train_file.is_none() {
        return Err(CliError::Config("--loglik needs --train-file".into()));
    }
    let paths = expand_checkpoints(&a.checkpoints)?;
    let models: Vec<(PathBuf, RbmParams)> = paths
        .into_iter()
        .map(|p| read_checkpoint(&p).map(|m| (p, m)))
        .collect::<CliResult<_>>()?;
    if a.loglik {
        if let Some((path, m)) = models.iter().find(|(_, m)| m.n_hidden() > EXACT_HIDDEN_CAP) {
            return Err(CliError::Capacity(format!(
                "{}: exact log-likelihood is limited to {EXACT_HIDDEN_CAP} hidden units, checkpoint has {}",
                path.display(),
                m.n_hidden()
            )));
        }
    }
    let test = a.test_file.as_deref().map(read_records).transpose()?;
    let train: Option<Vec<_>> = match &a.train_file {
        Some(path) if a.loglik => Some(read_records(path)?.into_iter().map(|r| r.bits).collect()),
        _ => None,
    };

    let mut rows = Vec::with_capacity(models.len());
    for (k, (path, p)) in models.iter().enumerate() {
        let mut row = MetricsRow {
            epoch: checkpoint_epoch(path).unwrap_or(k),
            ..MetricsRow::default()
        };
        if let Some(test) = &test {
            let ctx = match a.method {
                MethodArg::Anneal => Some(anneal_context(&a.anneal, p.n_visible(), p.n_hidden(), a.anneal.inference_reads)?),
                MethodArg::Gibbs => None,
            };
            let method = match &ctx {
                Some(ctx) => ClassifyMethod::Anneal(ctx),
                None => ClassifyMethod::Gibbs { cycles: a.cycles },
            };
            row.accuracy = Some(accuracy_repeated(test, p, &method, a.repeats as usize, a.seed).map_err(|e| io_error(path, e))?);
        }
        if let Some(train) = &train {
            row.loglik_per_record = Some(p.log_likelihood(train).map_err(|e| io_error(path, e))?.per_record);
        }
        log::info!("evaluated {}", path.display());
        rows.push(row);
    }
    let csv = metrics_csv(&rows);
    match &a.output {
        Some(path) => {
            write_file(path, &csv)?;
            write_file(&dir.join("run.cfg"), resolved)?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn side_by_side(grids: &[String]) -> String {
    let split: Vec<Vec<&str>> = grids.iter().map(|g| g.lines().collect()).collect();
    let rows = split.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = String::new();
    for r in 0..rows {
        let line: Vec<&str> = split.iter().map(|g| g.get(r).copied().unwrap_or("")).collect();
        writeln!(out, "{}", line.join("   ")).unwrap();
    }
    out
}

pub fn reconstruct(a: &ReconstructArgs, resolved: &str) -> CliResult {
    let dir = setup(&a.common)?;
    let p = read_checkpoint(&a.checkpoint)?;
    let mut records = read_records(&a.data_file)?;
    if a.count > 0 {
        records.truncate(a.count);
    }
    let n = record_width(&records, &a.data_file)?;
    if n != p.n_visible() {
        return Err(CliError::Data(format!(
            "records are {n} bits wide, model has {} visible units",
            p.n_visible()
        )));
    }
    let side = records[0].side();
    let positions: BTreeSet<usize> = match a.corrupt {
        CorruptArg::Labels => records[0].label_positions().into_iter().collect(),
        CorruptArg::Block16 => {
            if a.block_row + 4 > side || a.block_col + 4 > side {
                return Err(CliError::Config(format!(
                    "a 4x4 block at ({}, {}) does not fit a {side}x{side} grid",
                    a.block_row, a.block_col
                )));
            }
            bas::block_positions(side, a.block_row, a.block_col, 4)
        }
        CorruptArg::All => (0..n).collect(),
    };
    let mode = match a.mode {
        CorruptModeArg::Randomize => CorruptMode::Randomize,
        CorruptModeArg::Flip => CorruptMode::Flip,
    };
    let ctx = match a.method {
        MethodArg::Anneal => Some(anneal_context(&a.anneal, n, p.n_hidden(), a.anneal.inference_reads)?),
        MethodArg::Gibbs => None,
    };
    let method = match &ctx {
        Some(ctx) => ClassifyMethod::Anneal(ctx),
        None => ClassifyMethod::Gibbs { cycles: a.cycles },
    };

    let mut report = String::new();
    let mut total_distance = 0usize;
    let mut labels_ok = 0usize;
    let mut exact = 0usize;
    for (k, r) in records.iter().enumerate() {
        let mut rng = rng::stream(a.seed, &[rng::tag::CORRUPT, k as u64]);
        let (bad, mask) = bas::corrupt(r, &positions, mode, rng.next_u64())?;
        let restored = fill_in(&bad, &mask, &p, &method, &mut rng)?;
        let distance = restored.hamming(&r.bits);
        let label_ok = r.label_positions().iter().all(|&i| restored.get(i) == r.bits.get(i));
        total_distance += distance;
        labels_ok += usize::from(label_ok);
        exact += usize::from(distance == 0);
        writeln!(report, "# record {k} {} hamming {distance} labels {}", r.label.name(), if label_ok { "ok" } else { "wrong" }).unwrap();
        writeln!(report, "original  {}", r.bits).unwrap();
        writeln!(report, "corrupted {bad}").unwrap();
        writeln!(report, "restored  {restored}").unwrap();
        report.push_str(&side_by_side(&[BasRecord::grid(&r.bits), BasRecord::grid(&bad), BasRecord::grid(&restored)]));
        report.push('\n');
    }
    let count = records.len() as f64;
    let summary = format!(
        "records {} corrupted_bits {} mean_hamming {} label_accuracy {} exact_fraction {}",
        records.len(),
        positions.len(),
        total_distance as f64 / count,
        labels_ok as f64 / count,
        exact as f64 / count
    );
    writeln!(report, "# {summary}").unwrap();
    let name = match a.corrupt {
        CorruptArg::Labels => "labels",
        CorruptArg::Block16 => "block16",
        CorruptArg::All => "all",
    };
    let path = dir.join(format!("reconstruct_{name}.txt"));
    write_file(&path, &report)?;
    write_file(&dir.join("run.cfg"), resolved)?;
    println!("{summary}");
    println!("report -> {}", path.display());
    Ok(())
}

pub fn embed(a: &EmbedArgs, resolved: &str) -> CliResult {
    let dir = setup(&a.common)?;
    let dead = match &a.dead_file {
        Some(path) => {
            let file = File::open(path).map_err(|e| io_error(path, e))?;
            read_dead_qubits(BufReader::new(file)).map_err(|e| io_error(path, e))?
        }
        None => Vec::new(),
    };
    let g = ChimeraGraph::new(a.m, dead)?;
    let e = embed_rbm(&g, a.visible, a.hidden, a.chain_coupling)?;
    e.validate(&g)?;

    let lengths = |visible: bool| -> (usize, usize) {
        let lens = e.chains().filter(|(u, _)| matches!(u, Unit::Visible(_)) == visible).map(|(_, c)| c.len());
        lens.fold((usize::MAX, 0), |(lo, hi), l| (lo.min(l), hi.max(l)))
    };
    let (vmin, vmax) = lengths(true);
    let (hmin, hmax) = lengths(false);
    let mut report = String::new();
    writeln!(report, "chimera C{}: {} qubits, {} dead", g.m(), g.num_qubits(), g.dead().len()).unwrap();
    writeln!(report, "chains {} ({} visible, {} hidden)", a.visible + a.hidden, a.visible, a.hidden).unwrap();
    writeln!(report, "visible chain length {vmin}..{vmax}").unwrap();
    writeln!(report, "hidden chain length {hmin}..{hmax}").unwrap();
    writeln!(report, "qubits used {}", e.qubits_used()).unwrap();
    writeln!(report, "logical edges mapped {} of {}", e.mapped_edge_count(), a.visible * a.hidden).unwrap();
    let dropped = e.dropped_edges();
    writeln!(report, "dropped edges {}", dropped.len()).unwrap();
    for (i, j) in &dropped {
        writeln!(report, "  V{i} - H{j}").unwrap();
    }
    let trimmed = e.trimmed_qubits();
    writeln!(report, "trimmed qubits {}", trimmed.len()).unwrap();
    for (unit, q) in trimmed {
        writeln!(report, "  {unit}: qubit {q}{}", if g.is_live(*q) { "" } else { " (dead)" }).unwrap();
    }
    let path = dir.join("embedding.txt");
    write_file(&path, &e.export())?;
    write_file(&dir.join("embedding_report.txt"), &report)?;
    write_file(&dir.join("run.cfg"), resolved)?;
    print!("{report}");
    println!("embedding -> {}", path.display());
    Ok(())
}
