use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use reid_core::data::io::{write_depth, write_rgb};
use reid_core::data::{generate_synthetic, scan_dataset, PreparedDataset};
use reid_core::embedding::FrameEmbedding;
use reid_core::eval::{EvalMode, EvalReport, Evaluator};
use reid_core::numeric::RngStream;
use reid_core::preproc::RawDepthFrame;
use reid_core::sequence::{Attention, SequenceModel};
use reid_core::train::{embed_dataset, train_embedding, train_sequence, EpochRecord, Regime};
use reid_core::transfer::{ablation_sweep, sweep_csv, transfer_and_train, Checkpoint, SweepConfig, TransferPlan};
use reid_core::{Error, Result};

use crate::config::RunConfig;
use crate::{Cli, Command, OUTPUT_ROOT_ENV};

/// Fork labels of the master seed, one per consumer.
const DATA_STREAM: u64 = 1;
const MODEL_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;

struct Run {
    cfg: RunConfig,
    out: PathBuf,
    rng: RngStream,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, contents).map_err(|e| Error::io(&p, e))
    }

    fn load_data(&self, root: &Path) -> Result<PreparedDataset> {
        let manifest = scan_dataset(root)?;
        log::info!("{}: {} sequences, {} frames", root.display(), manifest.entries.len(), manifest.frame_count());
        PreparedDataset::load(&manifest, self.cfg.depth_offset)
    }
}

/// Appends one JSON line per epoch.
struct TrainLog {
    path: PathBuf,
    writer: BufWriter<File>,
    failed: Option<std::io::Error>,
}

impl TrainLog {
    fn create(path: PathBuf) -> Result<Self> {
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(TrainLog {
            path,
            writer: BufWriter::new(file),
            failed: None,
        })
    }

    fn record(&mut self, r: &EpochRecord) {
        log::info!(
            "{} epoch {}: ce {:.4} acc {:.3} lr {:e}",
            r.stage,
            r.epoch,
            r.cross_entropy,
            r.train_accuracy,
            r.base_lr
        );
        if self.failed.is_some() {
            return;
        }
        let line = serde_json::to_string(r).expect("records serialise");
        if let Err(e) = writeln!(self.writer, "{line}") {
            self.failed = Some(e);
        }
    }

    fn finish(mut self) -> Result<()> {
        if let Some(e) = self.failed.take() {
            return Err(Error::io(&self.path, e));
        }
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn output_dir(explicit: Option<PathBuf>, command: &str) -> PathBuf {
    explicit.unwrap_or_else(|| {
        let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
        root.join(command)
    })
}

fn ensure_not_input(out: &Path, inputs: &[&Path]) -> Result<()> {
    let canon = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let o = canon(out);
    for i in inputs {
        if canon(i) == o {
            return Err(Error::InvalidArgument(format!(
                "output directory {} is also an input; choose another --output",
                out.display()
            )));
        }
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let Cli { global, command } = cli;
    let mut overrides = global.overrides.clone();
    if let Some(seed) = global.seed {
        overrides.push(format!("seed={seed}"));
    }
    overrides.extend(command.flag_overrides());
    let cfg = RunConfig::resolve(global.config.as_deref(), &overrides)?;

    let out = output_dir(global.output, command.name());
    let inputs: Vec<&Path> = match &command {
        Command::Synth => vec![],
        Command::Preprocess { data } | Command::TrainEmbedding { data } => vec![data],
        Command::TrainSequence { data, .. } | Command::Transfer { data, .. } | Command::Ablate { data, .. } => vec![data],
        Command::Evaluate { data, .. } => vec![data],
    };
    ensure_not_input(&out, &inputs)?;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let mut snapshot = format!("# command: {}\n", command.name());
    if let Some(p) = &global.config {
        snapshot.push_str(&format!("# config file: {}\n", p.display()));
    }
    for o in &overrides {
        snapshot.push_str(&format!("# override: {o}\n"));
    }
    snapshot.push('\n');
    snapshot.push_str(&cfg.to_toml()?);
    let run = Run {
        rng: RngStream::new(cfg.seed),
        cfg,
        out,
    };
    run.write("resolved_config.toml", snapshot)?;

    match &command {
        Command::Synth => synth(&run),
        Command::Preprocess { data } => preprocess(&run, data),
        Command::TrainEmbedding { data } => train_embedding_cmd(&run, data),
        Command::TrainSequence { data, embedding } => train_sequence_cmd(&run, data, embedding),
        Command::Transfer { data, source, .. } => transfer_cmd(&run, data, source),
        Command::Ablate { data, source, .. } => ablate(&run, data, source),
        Command::Evaluate { data, checkpoint, .. } => evaluate(&run, data, checkpoint),
    }
}

fn synth(run: &Run) -> Result<()> {
    let manifest = generate_synthetic(&run.cfg.synth, &run.rng.fork(DATA_STREAM), &run.out)?;
    println!(
        "wrote {} sequences ({} frames) to {}",
        manifest.entries.len(),
        manifest.frame_count(),
        run.out.display()
    );
    Ok(())
}

fn preprocess(run: &Run, root: &Path) -> Result<()> {
    let manifest = scan_dataset(root)?;
    manifest.save_json(&run.path("manifest.json"))?;
    let data = PreparedDataset::load(&manifest, run.cfg.depth_offset)?;
    for seq in &data.sequences {
        let dir = run
            .out
            .join("previews")
            .join(format!("person_{:03}", seq.person_id))
            .join(format!("seq_{:03}", seq.sequence_id));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (n, frame) in seq.frames.iter().enumerate() {
            let t = frame.tensor();
            let (h, w) = (t.shape()[1], t.shape()[2]);
            let plane = h * w;
            let v = t.data();
            let path = dir.join(format!("frame_{:03}.png", n + 1));
            if v[..plane] == v[plane..2 * plane] && v[..plane] == v[2 * plane..] {
                let gray: Vec<u16> = v[..plane].iter().map(|&x| x.round().clamp(0.0, 65535.0) as u16).collect();
                write_depth(&path, &RawDepthFrame::new(w, h, gray)?)?;
            } else {
                let rgb: Vec<u8> = (0..plane)
                    .flat_map(|i| (0..3).map(move |c| v[c * plane + i].round().clamp(0.0, 255.0) as u8))
                    .collect();
                write_rgb(&path, w, h, rgb)?;
            }
        }
    }
    println!(
        "preprocessed {} sequences ({} frames, {} skipped entries)",
        manifest.entries.len(),
        manifest.frame_count(),
        manifest.skipped.len()
    );
    Ok(())
}

fn write_report(run: &Run, report: &EvalReport) -> Result<()> {
    report.write(&run.out)?;
    println!("top-1 {:.4}  nAUC {:.4}  ({} probes)", report.top1, report.nauc, report.probes);
    Ok(())
}

fn train_embedding_cmd(run: &Run, root: &Path) -> Result<()> {
    let data = run.load_data(root)?;
    let mut emb = FrameEmbedding::build(&run.cfg.embedding, &mut run.rng.fork(MODEL_STREAM))?;
    let mut log = TrainLog::create(run.path("train_log.jsonl"))?;
    train_embedding(&mut emb, &data, &run.cfg.train, &mut run.rng.fork(TRAIN_STREAM), |r| log.record(r))?;
    log.finish()?;
    Checkpoint::capture(&emb, None, format!("train-embedding seed {}", run.cfg.seed)).save(&run.path("embedding.ckpt"))?;
    let report = Evaluator {
        embedding: &emb,
        sequence: None,
        history: run.cfg.eval.history,
    }
    .evaluate(&data, run.cfg.eval.split, EvalMode::SingleShot, Attention::Uniform, None)?;
    write_report(run, &report)
}

fn train_sequence_cmd(run: &Run, root: &Path, embedding: &Path) -> Result<()> {
    let data = run.load_data(root)?;
    let (mut emb, _) = Checkpoint::load(embedding)?.restore()?;
    let mut model = SequenceModel::new(data.classes, &mut run.rng.fork(MODEL_STREAM))?;
    let mut log = TrainLog::create(run.path("train_log.jsonl"))?;
    let train = &run.cfg.train;
    train_sequence(&mut emb, &mut model, &data, train, &mut run.rng.fork(TRAIN_STREAM), |r| log.record(r))?;
    log.finish()?;
    let regime = match train.regime {
        Regime::Staged => "staged",
        Regime::EndToEnd => "end_to_end",
    };
    Checkpoint::capture(&emb, Some(&model), format!("train-sequence {regime} seed {}", run.cfg.seed))
        .save(&run.path("model.ckpt"))?;
    let cache = embed_dataset(&emb, &data)?;
    let report = Evaluator {
        embedding: &emb,
        sequence: Some(&model),
        history: run.cfg.eval.history,
    }
    .evaluate(&data, run.cfg.eval.split, EvalMode::MultiShot, run.cfg.eval.attention, Some(&cache))?;
    write_report(run, &report)
}

fn transfer_cmd(run: &Run, root: &Path, source: &Path) -> Result<()> {
    let data = run.load_data(root)?;
    let source = Checkpoint::load(source)?;
    let t = &run.cfg.transfer;
    let names = source.embedding.group_names();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let plan = TransferPlan::build(&refs, t.k, t.treatment, t.method, t.slow_multiplier)?;
    run.write("plan.json", serde_json::to_string_pretty(&plan)?)?;
    let mut log = TrainLog::create(run.path("train_log.jsonl"))?;
    let (emb, _) = transfer_and_train(&source, &data, &plan, &run.cfg.train, run.cfg.seed, |r| log.record(r))?;
    log.finish()?;
    Checkpoint::capture(
        &emb,
        None,
        format!("transfer {} {} k={} seed {}", t.method.as_str(), t.treatment.as_str(), t.k, run.cfg.seed),
    )
    .save(&run.path("embedding.ckpt"))?;
    let report = Evaluator {
        embedding: &emb,
        sequence: None,
        history: run.cfg.eval.history,
    }
    .evaluate(&data, run.cfg.eval.split, EvalMode::SingleShot, Attention::Uniform, None)?;
    write_report(run, &report)
}

fn ablate(run: &Run, root: &Path, source: &Path) -> Result<()> {
    let data = run.load_data(root)?;
    let source = Checkpoint::load(source)?;
    let t = &run.cfg.transfer;
    let sweep = SweepConfig {
        k_values: t.k_values.clone(),
        methods: t.methods.clone(),
        treatment: t.treatment,
        seeds: t.seeds.clone(),
        slow_multiplier: t.slow_multiplier,
        train: run.cfg.train.clone(),
    };
    let rows = ablation_sweep(&source, &data, &sweep)?;
    run.write("sweep.csv", sweep_csv(&rows))?;
    println!("wrote {} sweep rows to {}", rows.len(), run.path("sweep.csv").display());
    Ok(())
}

fn evaluate(run: &Run, root: &Path, checkpoint: &Path) -> Result<()> {
    let data = run.load_data(root)?;
    let (emb, seq) = Checkpoint::load(checkpoint)?.restore()?;
    let e = &run.cfg.eval;
    let report = Evaluator {
        embedding: &emb,
        sequence: seq.as_ref(),
        history: e.history,
    }
    .evaluate(&data, e.split, e.mode, e.attention, None)?;
    write_report(run, &report)
}
