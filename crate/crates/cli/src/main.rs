use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tweetprobe::config::{ProviderConfig, RunConfig, ENV_THREADS};
use tweetprobe::encoders::{write_vector_file, LdaConfig};
use tweetprobe::pipeline::{Pipeline, PipelineError};
use tweetprobe::synth::{synth_corpus, synth_word_vectors, SynthConfig};
use tweetprobe::ProviderKind;

/// Probe frozen tweet representations with eight elementary property tasks.
#[derive(Parser)]
#[command(name = "tweetprobe", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(short, long, global = true, default_value = "tweetprobe.toml")]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory (also TWEETPROBE_OUTPUT_DIR).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Worker threads (also TWEETPROBE_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the corpus and write the manifest.
    Ingest,
    /// Build task datasets.
    BuildTasks,
    /// Write request lists for external providers.
    Requests,
    /// Fit built-in providers and check external vectors.
    Encode,
    /// Train one probe per provider and task.
    Train,
    /// Evaluate probes: F1, length profile, permutation sensitivity.
    Analyze,
    /// Write report.json, f1.tsv and summary.txt.
    Report,
    /// All stages in order.
    Run,
    /// Generate a synthetic corpus, word vectors and a starter config.
    Synth {
        /// Directory to write into.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        tweets: usize,
        #[arg(long, default_value_t = 50)]
        dim: usize,
        /// Topics for the lda provider in the starter config.
        #[arg(long, default_value_t = 20)]
        topics: usize,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, String> {
    let mut cfg = RunConfig::load(&cli.config).map_err(|e| e.to_string())?;
    cfg.apply_env(|k| std::env::var(k).ok()).map_err(|e| e.to_string())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(n) = cli.threads {
        cfg.threads = Some(n);
    }
    Ok(cfg)
}

fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads.filter(|&n| n > 0) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("cannot size thread pool: {e}");
        }
    }
}

fn stage(cli: &Cli, pipeline: &Pipeline) -> Result<(), PipelineError> {
    match &cli.command {
        Command::Ingest => {
            let m = pipeline.ingest()?;
            println!("{} tweets, {} dropped, digest {}", m.tweets, m.dropped_empty, m.digest);
        }
        Command::BuildTasks => {
            for ds in pipeline.build_tasks()? {
                println!(
                    "{}\t{} train\t{} dev\t{} test",
                    ds.kind.slug(),
                    ds.train.len(),
                    ds.dev.len(),
                    ds.test.len()
                );
            }
        }
        Command::Requests => {
            for path in pipeline.requests()? {
                println!("{}", path.display());
            }
        }
        Command::Encode => pipeline.encode()?,
        Command::Train => {
            let n = pipeline.train()?.len();
            println!("{n} probes");
        }
        Command::Analyze => {
            for r in pipeline.analyze()? {
                println!("{}\t{}\t{:.4}", r.provider, r.task.slug(), r.metrics.macro_f1);
            }
        }
        Command::Report => print!("{}", pipeline.report()?.summary()),
        Command::Run => print!("{}", pipeline.run()?.summary()),
        Command::Synth { .. } => unreachable!(),
    }
    Ok(())
}

fn synth(out: &Path, tweets: usize, dim: usize, topics: usize, seed: u64) -> Result<(), String> {
    let err = |e: &dyn std::fmt::Display| e.to_string();
    fs::create_dir_all(out).map_err(|e| err(&e))?;
    let corpus = synth_corpus(&SynthConfig {
        tweets,
        seed,
        ..SynthConfig::default()
    })
    .map_err(|e| err(&e))?;
    corpus.write_jsonl(&out.join("tweets.jsonl")).map_err(|e| err(&e))?;
    let vectors = synth_word_vectors(&corpus, dim, seed);
    let file = fs::File::create(out.join("words.vec")).map_err(|e| err(&e))?;
    write_vector_file(std::io::BufWriter::new(file), dim, &vectors).map_err(|e| err(&e))?;

    let mut bom = ProviderConfig::builtin("bom", ProviderKind::Bom);
    bom.vectors = Some("words.vec".into());
    let mut lda = ProviderConfig::builtin("lda", ProviderKind::Lda);
    lda.lda = Some(LdaConfig {
        topics,
        iterations: 200,
        infer_iterations: 50,
        ..LdaConfig::default()
    });
    let mut cfg = RunConfig::new(
        "tweets.jsonl",
        "out",
        vec![ProviderConfig::builtin("bow", ProviderKind::Bow), bom, lda],
    );
    cfg.seed = seed;
    let config_path = out.join("tweetprobe.toml");
    if config_path.exists() {
        println!("kept existing {}", config_path.display());
    } else {
        fs::write(&config_path, cfg.to_toml()).map_err(|e| err(&e))?;
    }
    println!(
        "{} tweets and {} word vectors in {}",
        corpus.len(),
        vectors.len(),
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();

    if let Command::Synth {
        out,
        tweets,
        dim,
        topics,
    } = &cli.command
    {
        return match synth(out, *tweets, *dim, *topics, cli.seed.unwrap_or(0)) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: synth: {e}");
                ExitCode::from(3)
            }
        };
    }

    let cfg = match load_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: config: {e}");
            return ExitCode::from(2);
        }
    };
    init_threads(cfg.threads);
    log::debug!("threads: {:?} ({ENV_THREADS})", cfg.threads);
    let result = Pipeline::new(cfg).and_then(|p| stage(&cli, &p));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
