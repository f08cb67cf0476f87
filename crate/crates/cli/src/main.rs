mod args;

use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use coner_core::agent::run_training;
use coner_core::config::Preset;
use coner_core::corpus::{
    count_utterances, infer_manifest, load_corpus, parse_utterance, save_corpus, split_corpus, synth_generate, Splits,
};
use coner_core::eval::{evaluate, f1_report, sweep_windows, write_sweep, SweepConfig};
use coner_core::inference::{PredictionRecord, StreamPredictor};
use coner_core::rng::SeedStreams;
use coner_core::{
    build_dk, Conversation, DkTable, Error, Manifest, Model, QNetwork, Result, Revision, RunConfig, SynthSpec,
};

use args::{Cli, Command, Common, CorpusArgs, RevisionArg, Subset};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => EXIT_USAGE,
                ref e if e.is_numeric() => EXIT_NUMERIC,
                _ => EXIT_DATA,
            })
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::DkExtract(a) => dk_extract(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
    }
}

/// Preset, then config file, then `--set`, then the shared flags.
fn resolve(common: &Common) -> Result<RunConfig> {
    let preset: Option<Preset> = common.preset.as_deref().map(str::parse).transpose()?;
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load_with(path, preset)?,
        None => RunConfig::preset(preset.unwrap_or(Preset::Desk)),
    };
    for s in &common.set {
        cfg.set(s)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(w) = common.window {
        cfg.window = w;
    }
    Ok(cfg)
}

fn finish(cfg: RunConfig) -> Result<RunConfig> {
    cfg.validate()?;
    log::debug!("resolved config:\n{}", cfg.to_toml()?);
    Ok(cfg)
}

fn required(flag: Option<&PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or(fallback.as_ref())
        .cloned()
        .ok_or_else(|| Error::Config(format!("missing --{name} (or paths.{name} in the config)")))
}

fn revision_of(arg: Option<RevisionArg>, cfg: &RunConfig) -> Revision {
    match arg {
        Some(RevisionArg::Full) => Revision::Full,
        Some(RevisionArg::CorrOnly) => Revision::CorrOnly,
        Some(RevisionArg::Off) => Revision::Off,
        None => cfg.inference.revision,
    }
}

fn load_data(data: &CorpusArgs, cfg: &RunConfig) -> Result<(Vec<Conversation>, Manifest)> {
    let corpus = required(data.corpus.as_ref(), &cfg.paths.corpus, "corpus")?;
    let manifest = match data.manifest.as_ref().or(cfg.paths.manifest.as_ref()) {
        Some(m) => Manifest::load(m)?,
        None => infer_manifest(&corpus)?,
    };
    let convs = load_corpus(&corpus, &manifest)?;
    log::info!(
        "loaded {} conversations ({} utterances) from {}",
        convs.len(),
        count_utterances(&convs),
        corpus.display()
    );
    Ok((convs, manifest))
}

fn splits(convs: &[Conversation], cfg: &RunConfig) -> Result<Splits> {
    let [a, b, c] = cfg.data.split;
    split_corpus(convs, (a, b, c), cfg.data.split_seed)
}

fn subset(convs: Vec<Conversation>, which: Subset, cfg: &RunConfig) -> Result<Vec<Conversation>> {
    if which == Subset::All {
        return Ok(convs);
    }
    let s = splits(&convs, cfg)?;
    Ok(match which {
        Subset::Train => s.train,
        Subset::Valid => s.valid,
        Subset::Test => s.test,
        Subset::All => unreachable!(),
    })
}

fn set_dims(cfg: &mut RunConfig, m: &Manifest) {
    cfg.encoder.dim_audio = m.dim_audio;
    cfg.encoder.dim_video = m.dim_video;
    cfg.encoder.dim_text = m.dim_text;
}

fn synth(a: args::SynthArgs) -> Result<()> {
    let mut cfg = resolve(&a.common)?;
    let s = &mut cfg.synth;
    if let Some(v) = a.conversations {
        s.conversations = v;
    }
    if let Some(v) = a.min_length {
        s.min_length = v;
    }
    if let Some(v) = a.max_length {
        s.max_length = v;
    }
    if let Some(v) = a.max_entry {
        s.max_entry = v;
    }
    if let Some(v) = a.separation {
        s.separation = v;
    }
    let cfg = finish(cfg)?;
    let s = &cfg.synth;
    let dims = Manifest::new(cfg.encoder.dim_audio, cfg.encoder.dim_video, cfg.encoder.dim_text);
    let spec = SynthSpec::informative(
        cfg.seed,
        s.conversations,
        (s.min_length, s.max_length),
        cfg.window,
        &dims,
        s.max_entry,
        s.separation,
    );
    let convs = synth_generate(&spec)?;
    save_corpus(&a.out, &convs)?;
    let manifest_out = a.manifest_out.unwrap_or_else(|| a.out.with_extension("manifest.json"));
    dims.save(&manifest_out)?;
    log::info!(
        "wrote {} conversations to {} and manifest {}",
        convs.len(),
        a.out.display(),
        manifest_out.display()
    );
    Ok(())
}

fn dk_extract(a: args::DkArgs) -> Result<()> {
    let cfg = finish(resolve(&a.common)?)?;
    let out = required(a.out.as_ref(), &cfg.paths.dk, "dk")?;
    let (convs, _) = load_data(&a.data, &cfg)?;
    let convs = match a.subset {
        Some(which) => subset(convs, which, &cfg)?,
        None => {
            let s = splits(&convs, &cfg)?;
            let mut c = s.train;
            if cfg.data.dk_include_valid {
                c.extend(s.valid);
            }
            c
        }
    };
    let table = build_dk(&convs, cfg.window)?;
    table.save(&out)?;
    log::info!(
        "DK table w={}: {} label pairs, {} observations from {} conversations -> {}",
        table.window(),
        table.len(),
        table.observations(),
        convs.len(),
        out.display()
    );
    Ok(())
}

fn train(a: args::TrainArgs) -> Result<()> {
    let mut cfg = resolve(&a.common)?;
    let t = &mut cfg.trainer;
    if let Some(v) = a.episodes {
        t.episodes = v;
    }
    if let Some(v) = a.lr {
        t.lr = v;
    }
    if let Some(v) = a.gamma {
        t.gamma = v;
    }
    if let Some(v) = a.reward {
        t.reward = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.sync_period {
        t.sync_period = v;
    }
    if let Some(v) = a.weight_decay {
        t.weight_decay = v;
    }
    if let Some(v) = a.train_every {
        t.train_every = v;
    }
    if let Some(v) = a.staged_epochs {
        t.pretrain_epochs = v;
    }
    let checkpoint = required(a.checkpoint.as_ref(), &cfg.paths.checkpoint, "checkpoint")?;
    let (convs, manifest) = load_data(&a.data, &cfg)?;
    set_dims(&mut cfg, &manifest);
    let cfg = finish(cfg)?;
    let convs = subset(convs, a.subset, &cfg)?;
    let net = QNetwork::new(cfg.network())?;
    log::info!(
        "training w={} on {} conversations for {} episodes (seed {})",
        cfg.window,
        convs.len(),
        cfg.trainer.episodes,
        cfg.seed
    );
    let run = run_training(&net, &convs, &cfg.trainer, &SeedStreams::new(cfg.seed))?;
    if let Some(log_path) = a.log.as_ref().or(cfg.paths.log.as_ref()) {
        coner_core::agent::save_log(log_path, &run.log)?;
    }
    let model = Model::new(cfg.network(), run.params)?;
    model.save(&checkpoint)?;
    if let Some(last) = run.log.last() {
        log::info!(
            "done: {} steps, {} target syncs, running accuracy {:.3}",
            run.steps,
            run.target_syncs,
            last.running_accuracy
        );
    }
    log::info!("checkpoint written to {}", checkpoint.display());
    Ok(())
}

fn write_record(out: &mut dyn Write, r: &PredictionRecord) -> Result<()> {
    let line = serde_json::to_string(r)?;
    writeln!(out, "{line}").map_err(|e| Error::io("<output>", e))
}

fn predict(a: args::PredictArgs) -> Result<()> {
    let cfg = finish(resolve(&a.common)?)?;
    let checkpoint = required(a.checkpoint.as_ref(), &cfg.paths.checkpoint, "checkpoint")?;
    let dk = required(a.dk.as_ref(), &cfg.paths.dk, "dk")?;
    let model = Model::load(&checkpoint)?;
    let table = DkTable::load(&dk)?;
    let revision = revision_of(a.revision, &cfg);
    let dims = model.manifest();
    let mut predictor = StreamPredictor::new(&model, &table, revision)?;
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(BufWriter::new(std::fs::File::create(p).map_err(|e| Error::io(p, e))?)),
        None => Box::new(std::io::stdout().lock()),
    };
    if a.stream {
        let stdin = std::io::stdin();
        for (i, line) in stdin.lock().lines().enumerate() {
            let line = line.map_err(|e| Error::io("<stdin>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let utt = parse_utterance(&line, i + 1)?;
            utt.check_dims(&dims, i + 1)?;
            for r in predictor.push(&utt)? {
                write_record(&mut out, &r)?;
            }
            out.flush().map_err(|e| Error::io("<output>", e))?;
        }
    } else {
        let corpus = a
            .corpus
            .clone()
            .or(cfg.paths.corpus.clone())
            .ok_or_else(|| Error::Config("predict needs --stream or --corpus".into()))?;
        let convs = load_corpus(&corpus, &dims)?;
        let mut n = 0usize;
        for conv in &convs {
            for utt in &conv.utterances {
                for r in predictor.push(utt)? {
                    write_record(&mut out, &r)?;
                    n += 1;
                }
            }
        }
        out.flush().map_err(|e| Error::io("<output>", e))?;
        log::info!("{n} predictions for {} conversations", convs.len());
    }
    Ok(())
}

fn eval(a: args::EvalArgs) -> Result<()> {
    let cfg = finish(resolve(&a.common)?)?;
    let checkpoint = required(a.checkpoint.as_ref(), &cfg.paths.checkpoint, "checkpoint")?;
    let dk = required(a.dk.as_ref(), &cfg.paths.dk, "dk")?;
    let model = Model::load(&checkpoint)?;
    let table = DkTable::load(&dk)?;
    let corpus = required(a.data.corpus.as_ref(), &cfg.paths.corpus, "corpus")?;
    let manifest = match a.data.manifest.as_ref().or(cfg.paths.manifest.as_ref()) {
        Some(m) => Manifest::load(m)?,
        None => model.manifest(),
    };
    let convs = subset(load_corpus(&corpus, &manifest)?, a.subset, &cfg)?;
    let revision = revision_of(a.revision, &cfg);
    let ev = evaluate(&model, &table, &convs, revision)?;
    let revised = f1_report(&ev.revised)?;
    let raw = f1_report(&ev.raw)?;
    let w = model.window();
    println!(
        "scored {} of {} utterances (first {w} of each conversation are given)",
        ev.scored, ev.total_utterances
    );
    println!("accuracy over predicted utterances: {:.4}", revised.accuracy);
    println!(
        "accuracy counting given utterances as correct: {:.4}",
        ev.revised_accuracy_all()
    );
    println!(
        "weighted F1: {:.4}  macro F1: {:.4}",
        revised.weighted_f1, revised.macro_f1
    );
    println!(
        "without revision: accuracy {:.4}  weighted F1 {:.4}",
        raw.accuracy, raw.weighted_f1
    );
    if !ev.skipped_conversations.is_empty() {
        println!(
            "skipped {} conversations no longer than the window",
            ev.skipped_conversations.len()
        );
    }
    if a.heatmap {
        print!("{}", ev.revised.heatmap());
    }
    if let Some(path) = &a.confusion {
        write_text(path, &ev.revised.to_csv())?;
    }
    if let Some(path) = a.report.as_ref().or(cfg.paths.report.as_ref()) {
        let report = serde_json::json!({
            "window": w,
            "revision": revision,
            "scored": ev.scored,
            "total_utterances": ev.total_utterances,
            "accuracy_including_given": ev.revised_accuracy_all(),
            "skipped_conversations": ev.skipped_conversations,
            "revised": revised,
            "raw": raw,
            "confusion": ev.revised.counts,
        });
        write_text(path, &serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn thread_count(flag: Option<usize>) -> Result<usize> {
    if let Some(n) = flag {
        return Ok(n.max(1));
    }
    if let Ok(v) = std::env::var("CONER_THREADS") {
        return v
            .trim()
            .parse::<usize>()
            .map(|n| n.max(1))
            .map_err(|_| Error::Config(format!("CONER_THREADS={v:?} is not a number")));
    }
    Ok(std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn sweep(a: args::SweepArgs) -> Result<()> {
    let mut cfg = resolve(&a.common)?;
    if let Some(w) = a.windows {
        cfg.sweep.windows = w;
    }
    if let Some(s) = a.seeds {
        cfg.sweep.seeds = s;
    }
    if let Some(e) = a.episodes {
        cfg.trainer.episodes = e;
    }
    let out = a
        .out
        .clone()
        .ok_or_else(|| Error::Config("missing --out for the sweep CSV".into()))?;
    let (convs, manifest) = load_data(&a.data, &cfg)?;
    set_dims(&mut cfg, &manifest);
    let cfg = finish(cfg)?;
    let splits = splits(&convs, &cfg)?;
    let sc = SweepConfig {
        network: cfg.network(),
        trainer: cfg.trainer,
        windows: cfg.sweep.windows.clone(),
        seeds: cfg.sweep_seeds(),
        revision: revision_of(a.revision, &cfg),
        dk_include_valid: cfg.data.dk_include_valid,
        threads: thread_count(a.threads)?,
    };
    log::info!(
        "sweeping windows {:?} over seeds {:?} on {} threads",
        sc.windows,
        sc.seeds,
        sc.threads
    );
    let rows = sweep_windows(&splits, &sc)?;
    write_sweep(&out, &rows)?;
    for r in &rows {
        println!(
            "w={} weighted F1 {:.4} (std {:.4}, {} runs)",
            r.window, r.overall, r.overall_std, r.runs
        );
    }
    Ok(())
}
