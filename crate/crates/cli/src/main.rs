use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use trajfuse::pipeline::{self, EvalOptions, Method, Run, RunManifest};

/// Dense-trajectory and pose based activity recognition.
#[derive(Parser)]
#[command(name = "trajfuse", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Run manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Overrides the manifest seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the manifest method (DT, GT, GT-T, PS-T, PS-M,
    /// PSM+DT-features, PSM+DT-classifiers, PSM-filter-DT).
    #[arg(long)]
    method: Option<String>,
    /// Overrides the manifest output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct EvalArgs {
    /// Restrict evaluation to the N classes with the most training clips.
    #[arg(long)]
    top_n: Option<usize>,
    /// `all` or `single-fully-visible`.
    #[arg(long, default_value = "all")]
    subset: String,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render the manifest's synthetic clips into a dataset directory.
    SynthGen(Common),
    /// Extract trajectory and/or pose descriptors for every clip.
    Extract(Common),
    /// Train the k-means codebooks on the training split.
    TrainCodebook(Common),
    /// Encode every clip as stacked bag-of-words histograms.
    Encode(Common),
    /// Train the one-vs-all classifiers.
    Train(Common),
    /// Score every clip.
    Predict(Common),
    /// Mean average precision on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Complexity measures per clip and per class.
    Analyze(Common),
    /// Cross-method tables, sorted performance curves and plots.
    Report {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: EvalArgs,
    },
}

fn manifest(c: &Common) -> Result<RunManifest> {
    let mut m = RunManifest::load(&c.manifest).with_context(|| format!("reading {}", c.manifest.display()))?;
    if let Some(s) = c.seed {
        m.seed = s;
    }
    if let Some(name) = &c.method {
        match Method::parse(name) {
            Some(method) => m.method = method,
            None => bail!("unknown method {name:?}"),
        }
    }
    if let Some(o) = &c.out {
        m.out = o.clone();
    }
    Ok(m)
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("TRAJFUSE_THREADS") {
        let n: usize = v.parse().with_context(|| format!("TRAJFUSE_THREADS={v:?} is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    init_threads()?;
    match cli.cmd {
        Cmd::SynthGen(c) => {
            let m = manifest(&c)?;
            let index = pipeline::synth_gen(&m)?;
            println!("wrote {} clips to {}", index.len(), m.dataset_dir().display());
        }
        Cmd::Extract(c) => {
            Run::open(manifest(&c)?)?.extract()?;
        }
        Cmd::TrainCodebook(c) => {
            Run::open(manifest(&c)?)?.train_codebooks()?;
        }
        Cmd::Encode(c) => {
            Run::open(manifest(&c)?)?.encode()?;
        }
        Cmd::Train(c) => {
            Run::open(manifest(&c)?)?.train()?;
        }
        Cmd::Predict(c) => {
            let scores = Run::open(manifest(&c)?)?.predict()?;
            println!("scored {} clips", scores.len());
        }
        Cmd::Eval { common, eval } => {
            let opts = EvalOptions {
                top_n: eval.top_n,
                subset: eval.subset,
            };
            let r = Run::open(manifest(&common)?)?.eval(&opts)?;
            for (c, ap) in r.class_ids.iter().zip(&r.ap) {
                println!("class {c:>4}  AP {ap:.4}");
            }
            if !r.excluded.is_empty() {
                println!("excluded (no test positives): {:?}", r.excluded);
            }
            println!("mAP {:.4}", r.map);
        }
        Cmd::Analyze(c) => {
            let p = Run::open(manifest(&c)?)?.analyze()?;
            println!("analysed {} clips", p.len());
        }
        Cmd::Report { common, eval } => {
            let m = manifest(&common)?;
            let opts = EvalOptions {
                top_n: eval.top_n,
                subset: eval.subset,
            };
            for f in pipeline::report(&m, &opts)? {
                println!("{f}");
            }
        }
    }
    Ok(())
}
