use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use diffurank_core::config::{EngineConfig, ProviderKind};
use diffurank_core::evalx::{filling_dynamics, ndcg_at_k, paired_ttest, write_metric_report, Gain};
use diffurank_core::io::{
    load_candidates, load_corpus, load_qrels, load_queries, load_run, read_jsonl, read_traces,
    rerank_inputs, run_log_path, write_jsonl, write_run, write_run_log, write_traces,
};
use diffurank_core::orchestrate::{rerank_batch, Strategy};
use diffurank_core::provider::{LogitsProvider, RecordingProvider, ReplayStore};
use diffurank_core::sampler::SamplingMode;
use diffurank_core::synth::generate_synthetic;
use diffurank_core::train::{
    evaluate_scorer, gradcheck_suite, synthetic_training_set, teacher_qrels, train_sft, train_toy,
    write_loss_curve, LossKind, ScoreLoss, TrainInstance,
};

#[derive(Parser)]
#[command(
    name = "diffurank",
    version,
    about = "Document reranking with masked diffusion LMs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Rerank first-stage candidates and write a TREC run file.
    Rerank(RerankArgs),
    /// Score a run against qrels, optionally comparing two runs.
    Eval(EvalArgs),
    /// Aggregate filling dynamics from perm_samp traces.
    Dynamics(DynamicsArgs),
    /// Train a toy scorer or mask predictor.
    TrainToy(TrainArgs),
    /// Finite-difference check of every loss gradient.
    Gradcheck(GradcheckArgs),
    /// Generate a seeded synthetic benchmark.
    Synth(SynthArgs),
    /// Inspect recorded provider fixtures.
    Fixtures {
        #[command(subcommand)]
        command: FixturesCommand,
    },
}

#[derive(Args)]
struct RerankArgs {
    /// TOML experiment manifest; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// pointwise | logits_list | perm_assign | perm_samp
    #[arg(long)]
    strategy: Option<Strategy>,
    /// synthetic | remote | replay
    #[arg(long)]
    provider: Option<ProviderKind>,
    /// Denoising steps for perm_samp.
    #[arg(long)]
    k: Option<usize>,
    /// constrained | vanilla
    #[arg(long, value_parser = parse_mode)]
    mode: Option<SamplingMode>,
    /// Window size.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    step_size: Option<usize>,
    /// Candidates reranked per query; the rest keep their order.
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    remote_url: Option<String>,
    /// Replay store read by the replay provider.
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    candidates: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value = "run.txt")]
    out: PathBuf,
    /// Per-window decoding traces (JSON lines).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Record every provider response into this replay store.
    #[arg(long)]
    record: Option<PathBuf>,
    #[arg(long, default_value = "diffurank")]
    tag: String,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// Only `ndcg@k` is supported.
    #[arg(long, default_value = "ndcg@10")]
    metric: String,
    #[arg(long, value_parser = parse_gain, default_value = "exponential")]
    gain: Gain,
    /// Second run for a per-query comparison.
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Paired t-test between --run and --compare.
    #[arg(long, requires = "compare")]
    ttest: bool,
    /// Per-query CSV report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DynamicsArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also write the first-fill (H) and eligibility (E) count grids here.
    #[arg(long)]
    counts_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_parser = parse_loss)]
    loss: LossKind,
    /// Training JSON lines; a synthetic set is generated when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    /// Loss curve CSV.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Check a single loss; all three by default.
    #[arg(long, value_parser = parse_loss)]
    loss: Option<LossKind>,
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    queries: usize,
    #[arg(long, default_value_t = 100)]
    docs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "data")]
    out_dir: PathBuf,
    /// Also write a toy training set with this many queries.
    #[arg(long)]
    train_queries: Option<usize>,
}

#[derive(Subcommand)]
enum FixturesCommand {
    /// One line per recorded response.
    List {
        #[arg(long)]
        store: PathBuf,
    },
    /// Recompute every key and check row shapes.
    Verify {
        #[arg(long)]
        store: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<SamplingMode, String> {
    match s {
        "constrained" => Ok(SamplingMode::Constrained),
        "vanilla" => Ok(SamplingMode::Vanilla),
        _ => Err(format!("unknown mode {s}; expected constrained or vanilla")),
    }
}

fn parse_gain(s: &str) -> Result<Gain, String> {
    match s {
        "exponential" | "exp" => Ok(Gain::Exponential),
        "linear" => Ok(Gain::Linear),
        _ => Err(format!("unknown gain {s}; expected exponential or linear")),
    }
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    s.parse().map_err(|e: diffurank_core::Error| e.to_string())
}

fn parse_metric(metric: &str) -> Result<usize> {
    metric
        .strip_prefix("ndcg@")
        .and_then(|k| k.parse().ok())
        .filter(|&k| k > 0)
        .ok_or_else(|| anyhow!("unsupported metric {metric}; expected ndcg@k"))
}

fn required(path: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.ok_or_else(|| anyhow!("no {what} file: pass --{what} or set data.{what} in the config"))
}

fn rerank(args: RerankArgs) -> Result<ExitCode> {
    let mut cfg = match &args.config {
        Some(p) => EngineConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => EngineConfig::default(),
    };
    if let Some(v) = args.strategy {
        cfg.strategy = v;
    }
    if let Some(v) = args.provider {
        cfg.provider = v;
    }
    if let Some(v) = args.k {
        cfg.steps = v;
    }
    if let Some(v) = args.mode {
        cfg.mode = v;
    }
    if let Some(v) = args.window {
        cfg.window_size = v;
    }
    if let Some(v) = args.step_size {
        cfg.step_size = v;
    }
    if let Some(v) = args.top_k {
        cfg.top_k = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if args.remote_url.is_some() {
        cfg.remote_url = args.remote_url;
    }
    if args.replay.is_some() {
        cfg.replay_path = args.replay;
    }
    cfg.validate()?;

    let corpus = load_corpus(required(args.corpus.or(cfg.data.corpus.clone()), "corpus")?)?;
    let queries = load_queries(required(
        args.queries.or(cfg.data.queries.clone()),
        "queries",
    )?)?;
    let candidates = load_candidates(
        required(
            args.candidates.or(cfg.data.candidates.clone()),
            "candidates",
        )?,
        &corpus,
        cfg.top_k,
    )?;
    let inputs = rerank_inputs(&queries, candidates)?;
    info!(
        "reranking {} queries with {}",
        inputs.len(),
        cfg.strategy.name()
    );

    let provider = cfg.build_provider()?;
    let job = cfg.job();
    let store = args.record.as_ref().map(ReplayStore::open).transpose()?;
    let results = match &store {
        Some(store) => {
            let recorder = RecordingProvider::new(&*provider, store);
            rerank_batch(&inputs, &job, &recorder, args.jobs)?
        }
        None => rerank_batch(
            &inputs,
            &job,
            provider.as_ref() as &dyn LogitsProvider,
            args.jobs,
        )?,
    };
    if let Some(store) = &store {
        store.save()?;
        info!("recorded {} provider responses", store.len());
    }

    let runs: Vec<_> = results.iter().map(|r| r.outcome.ranking.clone()).collect();
    write_run(&runs, &args.out, &args.tag)?;
    let logs: Vec<_> = results.iter().map(|r| r.outcome.log.clone()).collect();
    write_run_log(&logs, run_log_path(&args.out))?;
    if let Some(path) = &args.trace {
        let traces: Vec<_> = results
            .iter()
            .flat_map(|r| r.outcome.traces.clone())
            .collect();
        write_traces(&traces, path)?;
    }

    let failed = results.iter().filter(|r| r.failed).count();
    let calls: usize = logs.iter().map(|l| l.provider_calls).sum();
    println!(
        "queries {}  failed {failed}  provider calls {calls}  run {}",
        results.len(),
        args.out.display()
    );
    if let Some(qrels_path) = &cfg.data.qrels {
        let qrels = load_qrels(qrels_path)?;
        let mean = runs
            .iter()
            .map(|r| ndcg_at_k(r, &qrels, 10, cfg.gain))
            .sum::<f64>()
            / runs.len().max(1) as f64;
        println!("ndcg@10 {mean:.4}");
    }
    Ok(if failed > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn per_query(
    runs: &[diffurank_core::RankedList],
    qrels: &diffurank_core::evalx::Qrels,
    k: usize,
    gain: Gain,
) -> Vec<(String, f64)> {
    runs.iter()
        .map(|r| (r.query_id.clone(), ndcg_at_k(r, qrels, k, gain)))
        .collect()
}

fn mean(values: &[(String, f64)]) -> f64 {
    values.iter().map(|(_, v)| v).sum::<f64>() / values.len().max(1) as f64
}

fn eval(args: EvalArgs) -> Result<ExitCode> {
    let k = parse_metric(&args.metric)?;
    let qrels = load_qrels(&args.qrels)?;
    let scores = per_query(&load_run(&args.run)?, &qrels, k, args.gain);
    println!(
        "{} {}: {:.4} over {} queries",
        args.run.display(),
        args.metric,
        mean(&scores),
        scores.len()
    );
    if let Some(out) = &args.out {
        write_metric_report(BufWriter::new(File::create(out)?), &args.metric, &scores)?;
    }
    if let Some(other) = &args.compare {
        let other_scores = per_query(&load_run(other)?, &qrels, k, args.gain);
        println!(
            "{} {}: {:.4} over {} queries",
            other.display(),
            args.metric,
            mean(&other_scores),
            other_scores.len()
        );
        if args.ttest {
            let lookup: std::collections::HashMap<&str, f64> =
                other_scores.iter().map(|(q, v)| (q.as_str(), *v)).collect();
            let (a, b): (Vec<f64>, Vec<f64>) = scores
                .iter()
                .filter_map(|(q, v)| lookup.get(q.as_str()).map(|w| (*v, *w)))
                .unzip();
            if a.len() != scores.len() || b.len() != other_scores.len() {
                warn!(
                    "t-test restricted to {} queries present in both runs",
                    a.len()
                );
            }
            let t = paired_ttest(&a, &b)?;
            println!(
                "paired t-test: mean diff {:.4}  t {:.4}  df {}  p {:.6}{}",
                t.mean_diff,
                t.t,
                t.df,
                t.p,
                if t.significant(0.05) {
                    "  (significant at 0.05)"
                } else {
                    ""
                }
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn dynamics(args: DynamicsArgs) -> Result<ExitCode> {
    let traces = read_traces(&args.trace)?;
    let d = filling_dynamics(&traces, args.k)?;
    d.write_csv(BufWriter::new(File::create(&args.out)?))?;
    if let Some(dir) = &args.counts_dir {
        std::fs::create_dir_all(dir)?;
        d.write_counts_csv(
            &d.h,
            BufWriter::new(File::create(dir.join("first_fill_counts.csv"))?),
        )?;
        d.write_counts_csv(
            &d.e,
            BufWriter::new(File::create(dir.join("eligible_counts.csv"))?),
        )?;
    }
    let summary: Vec<String> = (0..d.positions)
        .map(|i| match d.mean_first_fill_step(i) {
            Some(m) => format!("{}:{m:.2}", i + 1),
            None => format!("{}:-", i + 1),
        })
        .collect();
    println!(
        "{} traces, mean first-fill step by position: {}",
        d.traces,
        summary.join(" ")
    );
    Ok(ExitCode::SUCCESS)
}

fn train(args: TrainArgs) -> Result<ExitCode> {
    let (instances, qrels) = match &args.data {
        Some(p) => {
            let instances: Vec<TrainInstance> = read_jsonl(p)?;
            let qrels = teacher_qrels(&instances)?;
            (instances, qrels)
        }
        None => synthetic_training_set(50, 20, 8, args.seed)?,
    };
    let curve = match args.loss {
        LossKind::Ce | LossKind::RankNet => {
            let loss = if args.loss == LossKind::Ce {
                ScoreLoss::Ce
            } else {
                ScoreLoss::RankNet
            };
            let report = train_toy(&instances, loss, args.epochs, args.lr, args.seed)?;
            let ndcg = evaluate_scorer(&report.model, &instances, &qrels, 10);
            println!("training ndcg@10 {ndcg:.4}");
            std::fs::write(
                &args.out,
                serde_json::to_string_pretty(&report.model)? + "\n",
            )?;
            report.curve
        }
        LossKind::Sft => {
            let report = train_sft(
                &instances,
                Default::default(),
                args.epochs,
                args.lr,
                args.seed,
            )?;
            std::fs::write(
                &args.out,
                serde_json::to_string_pretty(&report.model)? + "\n",
            )?;
            report.curve
        }
    };
    if !curve.is_empty() {
        // the sft loss resamples masks every epoch, so single epochs are noisy
        let w = (curve.len() / 10).max(1);
        let avg = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        println!(
            "{} loss {:.4} -> {:.4} over {} epochs (mean of first/last {w})",
            args.loss.name(),
            avg(&curve[..w]),
            avg(&curve[curve.len() - w..]),
            curve.len()
        );
    }
    if let Some(p) = &args.curve {
        write_loss_curve(BufWriter::new(File::create(p)?), &curve)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    let losses = match args.loss {
        Some(l) => vec![l],
        None => LossKind::ALL.to_vec(),
    };
    let mut ok = true;
    for loss in losses {
        let worst = gradcheck_suite(loss, args.instances, args.seed);
        let pass = worst < args.tol;
        ok &= pass;
        println!(
            "{:<8} max relative error {worst:.3e} over {} instances: {}",
            loss.name(),
            args.instances,
            if pass { "ok" } else { "VIOLATION" }
        );
    }
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn synth(args: SynthArgs) -> Result<ExitCode> {
    let ds = generate_synthetic(args.queries, args.docs, args.seed)?;
    ds.write_to(&args.out_dir)?;
    let manifest = format!(
        "strategy = \"perm_assign\"\nprovider = \"synthetic\"\nseed = {seed}\n\n[oracle]\nbeta = 5.0\ngamma = 0.0\nlambda = 0.0\nrelevance_path = \"oracle.json\"\n\n[data]\ncorpus = \"corpus.jsonl\"\nqueries = \"queries.tsv\"\ncandidates = \"candidates.run\"\nqrels = \"qrels.txt\"\n",
        seed = args.seed
    );
    std::fs::write(args.out_dir.join("engine.toml"), manifest)?;
    if let Some(n) = args.train_queries {
        let (instances, _) = synthetic_training_set(n, 20, 8, args.seed)?;
        write_jsonl(&instances, args.out_dir.join("train.jsonl"))?;
    }
    println!(
        "wrote {} queries x {} docs to {}",
        args.queries,
        args.docs,
        args.out_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn open_existing_store(path: &Path) -> Result<ReplayStore> {
    if !path.exists() {
        bail!("replay store {} does not exist", path.display());
    }
    Ok(ReplayStore::open(path)?)
}

fn fixtures(command: FixturesCommand) -> Result<ExitCode> {
    match command {
        FixturesCommand::List { store } => {
            let store = open_existing_store(&store)?;
            for r in store.records() {
                println!(
                    "{}  {}  {:?}  {} docs  {}x{}",
                    r.key,
                    r.request.query_id,
                    r.request.strategy,
                    r.request.docs.len(),
                    r.rows.len(),
                    r.rows.first().map_or(0, Vec::len)
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        FixturesCommand::Verify { store } => {
            let store = open_existing_store(&store)?;
            let mut bad = 0;
            for r in store.records() {
                let mut problems = Vec::new();
                if r.request.key() != r.key {
                    problems.push("key does not match request".to_string());
                }
                if r.rows.len() != r.request.masked_positions.len() {
                    problems.push(format!(
                        "{} rows for {} masked slots",
                        r.rows.len(),
                        r.request.masked_positions.len()
                    ));
                }
                if r.rows
                    .iter()
                    .any(|row| row.len() != r.request.allowed_tokens.len())
                {
                    problems.push("row width differs from allowed tokens".to_string());
                }
                if r.rows.iter().flatten().any(|x| !x.is_finite() || *x < 0.0) {
                    problems.push("negative or non-finite probability".to_string());
                }
                if !problems.is_empty() {
                    bad += 1;
                    println!("{}: {}", r.key, problems.join("; "));
                }
            }
            println!("{} records, {bad} invalid", store.len());
            Ok(if bad == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Rerank(a) => rerank(a),
        Command::Eval(a) => eval(a),
        Command::Dynamics(a) => dynamics(a),
        Command::TrainToy(a) => train(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Synth(a) => synth(a),
        Command::Fixtures { command } => fixtures(command),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
