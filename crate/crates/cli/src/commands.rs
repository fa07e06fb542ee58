use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use simulmt::datagen::{
    build_prefix_dataset, full_records, mix_datasets, to_jsonl, PairCorpus, PrefixSpec,
};
use simulmt::metrics::report;
use simulmt::policy::{parse_traces, traces_to_jsonl};
use simulmt::text::{load_corpus, SentencePair};
use simulmt::{run_session, Backend, MetricsReport, PolicyConfig, PromptTemplate, SessionTrace};

use crate::config::{language_name, read, write, Resolved, Settings};
use crate::Failure;

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Tab-separated `source<TAB>reference` lines
    #[arg(long, required_unless_present = "print_config")]
    corpus: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
    /// Write one JSON trace per sentence here
    #[arg(long, value_name = "FILE")]
    traces: Option<PathBuf>,
    /// Write the JSON report here instead of stdout
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    /// Also write per-sentence metrics as CSV
    #[arg(long, value_name = "FILE")]
    report_csv: Option<PathBuf>,
    /// Log failed sentences and score the rest
    #[arg(long)]
    keep_going: bool,
    /// Print the resolved configuration as TOML and exit
    #[arg(long)]
    print_config: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, required_unless_present = "print_config")]
    corpus: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
    /// Comma-separated; defaults to 0.1,0.2,...,1.0
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    gammas: Option<Vec<f64>>,
    /// Comma-separated; defaults to the resolved k
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    ks: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    ns: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    beams: Option<Vec<usize>>,
    /// CSV destination; stdout if absent
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long)]
    keep_going: bool,
    #[arg(long)]
    print_config: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long, value_name = "FILE")]
    traces: PathBuf,
    /// Corpus the traces were produced from
    #[arg(long, value_name = "FILE")]
    references: PathBuf,
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    report_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DatagenArgs {
    /// Language pair and parallel corpus, e.g. `en-de=train.tsv`. Repeatable.
    #[arg(
        long = "corpus",
        value_name = "SRC-TGT=FILE",
        required_unless_present = "print_config"
    )]
    corpora: Vec<String>,
    #[command(flatten)]
    settings: Settings,
    /// Prefixes per language pair
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0.2)]
    min_frac: f64,
    #[arg(long, default_value_t = 0.8)]
    max_frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Emit only prefix records
    #[arg(long)]
    no_full: bool,
    #[arg(long, value_name = "FILE", required_unless_present = "print_config")]
    out: Option<PathBuf>,
    #[arg(long)]
    print_config: bool,
}

fn corpus_arg(path: Option<PathBuf>) -> Result<PathBuf, Failure> {
    path.ok_or_else(|| Failure::usage("--corpus is required"))
}

fn corpus_at(path: &Path) -> Result<Vec<SentencePair>, Failure> {
    load_corpus(path).map_err(|e| Failure {
        message: format!("{}: {e}", path.display()),
        ..e.into()
    })
}

fn references(corpus: &[SentencePair]) -> HashMap<String, String> {
    corpus
        .iter()
        .map(|p| (p.id.clone(), p.target.clone()))
        .collect()
}

/// Streams the corpus on a pool of `parallelism` threads. Results come back
/// in corpus order whatever the pool size.
fn simulate(
    corpus: &[SentencePair],
    policy: &PolicyConfig,
    backend: &dyn Backend,
    template: &PromptTemplate,
    parallelism: usize,
    keep_going: bool,
) -> Result<Vec<SessionTrace>, Failure> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Failure::usage(e.to_string()))?;
    let results: Vec<_> = pool.install(|| {
        corpus
            .par_iter()
            .map(|p| run_session(&p.id, &p.source, Some(&p.target), policy, backend, template))
            .collect()
    });
    let mut traces = Vec::with_capacity(results.len());
    let mut failed = 0;
    for (pair, result) in corpus.iter().zip(results) {
        match result {
            Ok(trace) => traces.push(trace),
            Err(e) if keep_going => {
                log::error!("sentence {}: {e}", pair.id);
                failed += 1;
            }
            Err(e) => {
                return Err(Failure {
                    message: format!("sentence {}: {e}", pair.id),
                    ..e.into()
                })
            }
        }
    }
    if failed > 0 {
        log::warn!(
            "{failed} of {} sentences failed and were left out",
            corpus.len()
        );
    }
    Ok(traces)
}

fn emit_report(r: &MetricsReport, json: Option<&Path>, csv: Option<&Path>) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(r).map_err(simulmt::Error::from)? + "\n";
    match json {
        Some(path) => write(path, &text)?,
        None => print!("{text}"),
    }
    if let Some(path) = csv {
        write(path, &r.to_csv()?)?;
    }
    log::info!(
        "BLEU {:.2}, mean LAAL {:.3}, mean invocations {:.2}",
        r.corpus_bleu.score,
        r.mean_laal,
        r.mean_invocations
    );
    Ok(())
}

pub fn run(args: RunArgs) -> Result<(), Failure> {
    let cfg = args.settings.resolve()?;
    if args.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let corpus = corpus_at(&corpus_arg(args.corpus)?)?;
    let template = cfg.template()?;
    let backend = cfg.backend()?;
    let traces = simulate(
        &corpus,
        &cfg.policy,
        backend.as_ref(),
        &template,
        cfg.parallelism,
        args.keep_going,
    )?;
    if let Some(path) = &args.traces {
        write(path, &traces_to_jsonl(&traces)?)?;
    }
    let r = report(&traces, &references(&corpus))?;
    emit_report(&r, args.report.as_deref(), args.report_csv.as_deref())
}

fn grid<T: Copy>(values: Option<Vec<T>>, default: T, name: &str) -> Result<Vec<T>, Failure> {
    match values {
        None => Ok(vec![default]),
        Some(v) if v.is_empty() => Err(Failure::usage(format!("--{name} grid is empty"))),
        Some(v) => Ok(v),
    }
}

pub fn sweep(args: SweepArgs) -> Result<(), Failure> {
    let cfg: Resolved = args.settings.resolve()?;
    if args.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let base = cfg.policy;
    let gammas = match args.gammas {
        None => (1..=10).map(|i| i as f64 / 10.0).collect(),
        Some(g) => grid(Some(g), base.gamma, "gammas")?,
    };
    let ks = grid(args.ks, base.k, "ks")?;
    let ns = grid(args.ns, base.n, "ns")?;
    let beams = grid(args.beams, base.beam, "beams")?;

    let corpus = corpus_at(&corpus_arg(args.corpus)?)?;
    let refs = references(&corpus);
    let template = cfg.template()?;
    let backend = cfg.backend()?;
    let mut csv = String::from("k,n,beam,gamma,corpus_bleu,mean_laal,mean_invocations\n");
    for &k in &ks {
        for &n in &ns {
            for &beam in &beams {
                for &gamma in &gammas {
                    let policy = PolicyConfig {
                        k,
                        n,
                        beam,
                        gamma,
                        ..base
                    };
                    policy.validate()?;
                    let traces = simulate(
                        &corpus,
                        &policy,
                        backend.as_ref(),
                        &template,
                        cfg.parallelism,
                        args.keep_going,
                    )?;
                    let r = report(&traces, &refs)?;
                    log::info!(
                        "k={k} n={n} beam={beam} gamma={gamma}: BLEU {:.2}",
                        r.corpus_bleu.score
                    );
                    writeln!(
                        csv,
                        "{k},{n},{beam},{gamma},{},{},{}",
                        r.corpus_bleu.score, r.mean_laal, r.mean_invocations
                    )
                    .expect("writing to a String");
                }
            }
        }
    }
    match &args.out {
        Some(path) => write(path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

pub fn score(args: ScoreArgs) -> Result<(), Failure> {
    let text = read(&args.traces)?;
    let traces = parse_traces(&text).map_err(|e| Failure {
        message: format!("{}: {e}", args.traces.display()),
        ..e.into()
    })?;
    let corpus = corpus_at(&args.references)?;
    let r = report(&traces, &references(&corpus))?;
    emit_report(&r, args.report.as_deref(), args.report_csv.as_deref())
}

/// Parses `en-de=path/to/corpus.tsv`.
fn pair_arg(arg: &str) -> Result<PairCorpus, Failure> {
    let malformed = || Failure::usage(format!("--corpus {arg:?}: expected SRC-TGT=FILE"));
    let (langs, path) = arg.split_once('=').ok_or_else(malformed)?;
    let (src, tgt) = langs.split_once('-').ok_or_else(malformed)?;
    if src.is_empty() || tgt.is_empty() || path.is_empty() {
        return Err(malformed());
    }
    Ok(PairCorpus {
        src_lang: language_name(src),
        tgt_lang: language_name(tgt),
        pairs: corpus_at(Path::new(path))?,
    })
}

pub fn datagen(args: DatagenArgs) -> Result<(), Failure> {
    let cfg = args.settings.resolve()?;
    if args.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let spec = PrefixSpec {
        samples_per_pair: args.samples,
        min_frac: args.min_frac,
        max_frac: args.max_frac,
        seed: args.seed,
    };
    spec.validate()?;
    let corpora = args
        .corpora
        .iter()
        .map(|a| pair_arg(a))
        .collect::<Result<Vec<_>, _>>()?;
    let out = args
        .out
        .ok_or_else(|| Failure::usage("--out is required"))?;
    let template = cfg.template()?;
    let backend = cfg.backend()?;
    let prefix = build_prefix_dataset(
        &corpora,
        &spec,
        backend.as_ref(),
        &template,
        cfg.parallelism,
    )?;

    let mut per_pair: BTreeMap<String, usize> = BTreeMap::new();
    for r in &prefix.records {
        *per_pair
            .entry(format!("{}-{}", r.src_lang, r.tgt_lang))
            .or_default() += 1;
    }
    let skipped: HashMap<&str, usize> = prefix
        .skipped
        .iter()
        .map(|(p, n)| (p.as_str(), *n))
        .collect();
    let prefix_count = prefix.records.len();
    let full = if args.no_full {
        Vec::new()
    } else {
        full_records(&corpora, &template)
    };
    let full_count = full.len();
    write(
        &out,
        &to_jsonl(&mix_datasets(full, prefix.records, spec.seed))?,
    )?;

    let pairs: Vec<String> = corpora
        .iter()
        .map(|c| {
            let name = c.name();
            let made = per_pair.get(&name).copied().unwrap_or(0);
            let lost = skipped.get(name.as_str()).copied().unwrap_or(0);
            format!("{name} {made} prefix ({lost} skipped)")
        })
        .collect();
    println!(
        "{}; total {prefix_count} prefix + {full_count} full records, {} skipped -> {}",
        pairs.join(", "),
        prefix.skipped.iter().map(|s| s.1).sum::<usize>(),
        out.display()
    );
    Ok(())
}
