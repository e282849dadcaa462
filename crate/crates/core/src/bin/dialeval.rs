use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use dialeval::corpus::{load_corpus, write_corpus};
use dialeval::eval::{loocv, score_histogram};
use dialeval::features::{feature_matrix, ExtractOptions, FeatureTable};
use dialeval::gbt::{fit, GbtConfig, GbtModel};
use dialeval::io::atomic_write;
use dialeval::report::{
    beeswarm_svg, emit_beeswarm_data, emit_summary_table, read_features_csv, read_shap_csv, write_features_csv,
    write_histogram_csv, write_loocv_csv, write_shap_csv, RunManifest, TableFormat,
};
use dialeval::shapley::{shap_matrix, subsample_background, summarize};
use dialeval::synth::{generate, TaskProfile};

#[derive(Parser)]
#[command(name = "dialeval", version, about = "Evaluate spoken dialogue systems from user behavior")]
struct Cli {
    /// Key/value (TOML) config file; its values override the matching flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Omit the timestamp from run manifests.
    #[arg(long, global = true)]
    no_timestamp: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus from a task profile.
    Synth {
        /// Bundled profile (al, ji, fmc) or a profile file.
        #[arg(long)]
        profile: String,
        /// Generator seed (defaults to the profile's).
        #[arg(long)]
        seed: Option<u64>,
        /// Number of dialogues (defaults to the profile's).
        #[arg(long)]
        n_dialogues: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the behavior features of every dialogue.
    Extract {
        /// Corpus (JSONL) to read.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        extract: ExtractArgs,
    },
    /// Fit a boosted-tree score model.
    Train {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        gbt: GbtArgs,
    },
    /// Compute Shapley attributions for every feature row.
    Explain {
        /// Model file written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Feature CSV to explain; also the background data.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Subsample the background to this many rows (0 = all).
        #[arg(long, default_value_t = 0)]
        background_size: usize,
        /// Seed for background subsampling.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Leave-one-out cross-validation.
    Loocv {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: PathBuf,
        /// Hold out all dialogues of a participant together (needs --corpus).
        #[arg(long)]
        group_by_participant: bool,
        #[command(flatten)]
        gbt: GbtArgs,
    },
    /// Summarize attributions and emit plot data.
    Report {
        /// Attribution CSV written by `explain`.
        #[arg(long)]
        shap: PathBuf,
        /// Summary table format: markdown, csv or tsv.
        #[arg(long, default_value = "markdown")]
        format: TableFormat,
        /// Summary table destination (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Feature CSV aligned with the attributions (needed for --beeswarm and --svg).
        #[arg(long)]
        features: Option<PathBuf>,
        /// Beeswarm plot data (long-form CSV).
        #[arg(long)]
        beeswarm: Option<PathBuf>,
        /// Beeswarm strip plot rendered as SVG.
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Corpus whose score histogram is written to --histogram.
        #[arg(long, requires = "histogram")]
        corpus: Option<PathBuf>,
        /// Score histogram CSV.
        #[arg(long, requires = "corpus")]
        histogram: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        bin_width: f64,
    },
}

#[derive(Args)]
struct ExtractArgs {
    /// Same-speaker gaps shorter than this merge into one IPU.
    #[arg(long, default_value_t = 200)]
    ipu_threshold_ms: i64,
    /// Leave backchannel tokens out of the word-based features.
    #[arg(long)]
    exclude_backchannel_tokens: bool,
}

#[derive(Args)]
struct InputArgs {
    /// Feature CSV from `extract`.
    #[arg(long, required_unless_present = "corpus", conflicts_with = "corpus")]
    features: Option<PathBuf>,
    /// Corpus; features are extracted on the fly.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[command(flatten)]
    extract: ExtractArgs,
}

#[derive(Args)]
struct GbtArgs {
    /// Boosting rounds [default: 100].
    #[arg(long)]
    n_trees: Option<usize>,
    /// Shrinkage per tree [default: 0.1].
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Maximum tree depth [default: 3].
    #[arg(long)]
    max_depth: Option<usize>,
    /// Minimum rows per leaf [default: 1].
    #[arg(long)]
    min_samples_leaf: Option<usize>,
    /// Row fraction sampled per tree [default: 1.0].
    #[arg(long)]
    subsample: Option<f64>,
    /// Subsampling seed [default: 0].
    #[arg(long)]
    seed: Option<u64>,
}

/// Values accepted in a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    n_trees: Option<usize>,
    learning_rate: Option<f64>,
    max_depth: Option<usize>,
    min_samples_leaf: Option<usize>,
    subsample: Option<f64>,
    seed: Option<u64>,
    ipu_threshold_ms: Option<i64>,
    exclude_backchannel_tokens: Option<bool>,
    background_size: Option<usize>,
    group_by_participant: Option<bool>,
    n_dialogues: Option<usize>,
}

type CliResult<T> = Result<T, String>;

fn ctx<T>(path: &Path, r: dialeval::Result<T>) -> CliResult<T> {
    r.map_err(|e| match e {
        dialeval::Error::Io { .. } => e.to_string(),
        e => format!("{}: {e}", path.display()),
    })
}

fn override_with<T: Copy + std::fmt::Debug>(name: &str, flag: &mut T, file: Option<T>) {
    if let Some(v) = file {
        log::info!("config sets {name} = {v:?}");
        *flag = v;
    }
}

impl GbtArgs {
    fn resolve(&self, file: &FileConfig) -> GbtConfig {
        let mut c = GbtConfig::default();
        if let Some(v) = self.n_trees {
            c.n_trees = v;
        }
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.max_depth {
            c.max_depth = v;
        }
        if let Some(v) = self.min_samples_leaf {
            c.min_samples_leaf = v;
        }
        if let Some(v) = self.subsample {
            c.subsample = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        override_with("n_trees", &mut c.n_trees, file.n_trees);
        override_with("learning_rate", &mut c.learning_rate, file.learning_rate);
        override_with("max_depth", &mut c.max_depth, file.max_depth);
        override_with("min_samples_leaf", &mut c.min_samples_leaf, file.min_samples_leaf);
        override_with("subsample", &mut c.subsample, file.subsample);
        override_with("seed", &mut c.seed, file.seed);
        c
    }
}

impl ExtractArgs {
    fn resolve(&self, file: &FileConfig) -> ExtractOptions {
        let mut o = ExtractOptions {
            ipu_threshold_ms: self.ipu_threshold_ms,
            exclude_backchannel_tokens: self.exclude_backchannel_tokens,
        };
        override_with("ipu_threshold_ms", &mut o.ipu_threshold_ms, file.ipu_threshold_ms);
        override_with(
            "exclude_backchannel_tokens",
            &mut o.exclude_backchannel_tokens,
            file.exclude_backchannel_tokens,
        );
        o
    }
}

fn write_with_manifest(
    path: &Path,
    mut manifest: RunManifest,
    write: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> CliResult<()> {
    ctx(path, atomic_write(path, write))?;
    manifest.outputs.push(path.display().to_string());
    let json = manifest.to_json();
    let mpath = RunManifest::path_for(path);
    ctx(&mpath, atomic_write(&mpath, |w| w.write_all(json.as_bytes())))
}

fn to_io(e: dialeval::Error) -> std::io::Error {
    std::io::Error::other(e.to_string())
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| format!("{}: {e}", path.display()))
}

fn load_features(path: &Path) -> CliResult<FeatureTable> {
    ctx(path, read_features_csv(open(path)?))
}

fn echo_gbt(m: &mut RunManifest, c: &GbtConfig) {
    m.seeds.insert("gbt".into(), c.seed);
    m.config.insert("n_trees".into(), c.n_trees.to_string());
    m.config.insert("learning_rate".into(), c.learning_rate.to_string());
    m.config.insert("max_depth".into(), c.max_depth.to_string());
    m.config.insert("min_samples_leaf".into(), c.min_samples_leaf.to_string());
    m.config.insert("subsample".into(), c.subsample.to_string());
}

fn echo_extract(m: &mut RunManifest, o: &ExtractOptions) {
    m.config.insert("ipu_threshold_ms".into(), o.ipu_threshold_ms.to_string());
    m.config
        .insert("exclude_backchannel_tokens".into(), o.exclude_backchannel_tokens.to_string());
}

/// Loads the training table from either input flag and records it in the manifest.
fn load_input(input: &InputArgs, file: &FileConfig, m: &mut RunManifest) -> CliResult<FeatureTable> {
    if let Some(path) = &input.features {
        ctx(path, m.add_input(path))?;
        return load_features(path);
    }
    let path = input.corpus.as_ref().expect("clap enforces one input");
    ctx(path, m.add_input(path))?;
    let opts = input.extract.resolve(file);
    echo_extract(m, &opts);
    let corpus = ctx(path, load_corpus(path))?;
    ctx(path, feature_matrix(&corpus, &opts))
}

fn run(cli: Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            toml::from_str::<FileConfig>(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => FileConfig::default(),
    };
    let mut base = RunManifest::new(std::env::args().collect::<Vec<_>>().join(" "), !cli.no_timestamp);
    base.notes.push("scores and features of synthetic corpora are simulated, not human data".into());
    base.notes.push("features are raw per-minute rates without standardization".into());
    if let Some(path) = &cli.config {
        ctx(path, base.add_input(path))?;
    }

    match cli.command {
        Command::Synth {
            profile,
            seed,
            n_dialogues,
            out,
        } => {
            let mut m = base.clone();
            let mut p = match TaskProfile::bundled(&profile) {
                Some(p) => p,
                None => {
                    let path = Path::new(&profile);
                    ctx(path, m.add_input(path))?;
                    ctx(path, TaskProfile::load(path))?
                }
            };
            if let Some(s) = seed {
                p.seed = s;
            }
            if let Some(n) = n_dialogues {
                p.n_dialogues = n;
            }
            override_with("seed", &mut p.seed, file.seed);
            override_with("n_dialogues", &mut p.n_dialogues, file.n_dialogues);
            m.seeds.insert("synth".into(), p.seed);
            m.config.insert("profile".into(), p.name.clone());
            m.config.insert("n_dialogues".into(), p.n_dialogues.to_string());
            let corpus = generate(&p).map_err(|e| format!("profile `{profile}`: {e}"))?;
            write_with_manifest(&out, m, |w| write_corpus(&corpus, w))?;
            log::info!("wrote {} dialogues to {}", corpus.len(), out.display());
        }
        Command::Extract { corpus, out, extract } => {
            let mut m = base.clone();
            ctx(&corpus, m.add_input(&corpus))?;
            let opts = extract.resolve(&file);
            echo_extract(&mut m, &opts);
            let c = ctx(&corpus, load_corpus(&corpus))?;
            let table = ctx(&corpus, feature_matrix(&c, &opts))?;
            let flagged = table.no_transition.iter().filter(|&&f| f).count();
            if flagged > 0 {
                log::warn!("{flagged} dialogue(s) have no floor transitions; their f11 is 0");
            }
            write_with_manifest(&out, m, |w| write_features_csv(&table, w).map_err(to_io))?;
        }
        Command::Train { input, out, gbt } => {
            let mut m = base.clone();
            let table = load_input(&input, &file, &mut m)?;
            let config = gbt.resolve(&file);
            echo_gbt(&mut m, &config);
            let model = fit(&table.matrix(), &table.targets, &config).map_err(|e| e.to_string())?;
            let text = model.to_text();
            write_with_manifest(&out, m, |w| w.write_all(text.as_bytes()))?;
        }
        Command::Explain {
            model,
            features,
            out,
            mut background_size,
            mut seed,
        } => {
            let mut m = base.clone();
            ctx(&model, m.add_input(&model))?;
            ctx(&features, m.add_input(&features))?;
            override_with("background_size", &mut background_size, file.background_size);
            override_with("seed", &mut seed, file.seed);
            m.seeds.insert("background".into(), seed);
            m.config.insert("background_size".into(), background_size.to_string());
            let gbt = ctx(&model, GbtModel::load(&model))?;
            let table = load_features(&features)?;
            let matrix = table.matrix();
            let background = subsample_background(&matrix, background_size, seed);
            let attrs = ctx(&features, shap_matrix(&gbt, &background, &matrix, &table.ids))?;
            write_with_manifest(&out, m, |w| write_shap_csv(&attrs, w).map_err(to_io))?;
        }
        Command::Loocv {
            input,
            out,
            mut group_by_participant,
            gbt,
        } => {
            let mut m = base.clone();
            override_with("group_by_participant", &mut group_by_participant, file.group_by_participant);
            let table = load_input(&input, &file, &mut m)?;
            let config = gbt.resolve(&file);
            echo_gbt(&mut m, &config);
            m.config
                .insert("group_by_participant".into(), group_by_participant.to_string());
            let groups: Option<Vec<String>> = if group_by_participant {
                if input.corpus.is_none() {
                    return Err("--group-by-participant needs --corpus (participants are not in feature CSVs)".into());
                }
                Some(
                    table
                        .participants
                        .iter()
                        .zip(&table.ids)
                        .map(|(p, id)| p.clone().unwrap_or_else(|| id.clone()))
                        .collect(),
                )
            } else {
                None
            };
            let result = loocv(&table.matrix(), &table.targets, &table.ids, &config, groups.as_deref())
                .map_err(|e| e.to_string())?;
            m.notes.push(format!("mae = {}", result.mae));
            write_with_manifest(&out, m, |w| write_loocv_csv(&result, w).map_err(to_io))?;
            println!("mae\t{:.4}", result.mae);
        }
        Command::Report {
            shap,
            format,
            out,
            features,
            beeswarm,
            svg,
            corpus,
            histogram,
            bin_width,
        } => {
            let mut m = base.clone();
            ctx(&shap, m.add_input(&shap))?;
            let attrs = ctx(&shap, read_shap_csv(open(&shap)?))?;
            if attrs.is_empty() {
                return Err(format!("{}: no attributions", shap.display()));
            }
            let summary = ctx(&shap, summarize(&attrs))?;
            if summary.all_zero {
                log::warn!("all attributions are zero; percentages reported as 0");
            }
            let table = match &features {
                Some(path) => {
                    ctx(path, m.add_input(path))?;
                    Some(load_features(path)?)
                }
                None if beeswarm.is_some() || svg.is_some() => {
                    return Err("--beeswarm and --svg need --features".into());
                }
                None => None,
            };
            let hist = match &corpus {
                Some(path) => {
                    ctx(path, m.add_input(path))?;
                    let c = ctx(path, load_corpus(path))?;
                    Some(ctx(path, score_histogram(&c, bin_width))?)
                }
                None => None,
            };
            // Render everything before writing so a failure leaves no partial output.
            let mut beeswarm_csv = Vec::new();
            let mut svg_text = String::new();
            if let Some(t) = &table {
                if beeswarm.is_some() {
                    ctx(&shap, emit_beeswarm_data(&attrs, t, &mut beeswarm_csv))?;
                }
                if svg.is_some() {
                    svg_text = ctx(&shap, beeswarm_svg(&attrs, t))?;
                }
            }
            let mut table_text = Vec::new();
            ctx(&shap, emit_summary_table(&summary, format, &mut table_text))?;

            match &out {
                Some(path) => write_with_manifest(path, m.clone(), |w| w.write_all(&table_text))?,
                None => std::io::stdout()
                    .write_all(&table_text)
                    .map_err(|e| format!("stdout: {e}"))?,
            }
            if let Some(path) = &beeswarm {
                write_with_manifest(path, m.clone(), |w| w.write_all(&beeswarm_csv))?;
            }
            if let Some(path) = &svg {
                write_with_manifest(path, m.clone(), |w| w.write_all(svg_text.as_bytes()))?;
            }
            if let (Some(path), Some(bins)) = (&histogram, &hist) {
                write_with_manifest(path, m, |w| write_histogram_csv(bins, w).map_err(to_io))?;
            }
        }
    }
    Ok(())
}

fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("DIALEVAL_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| format!("DIALEVAL_THREADS: expected a non-negative integer, got `{value}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("DIALEVAL_THREADS: {e}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("dialeval: error: {e}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dialeval: error: {e}");
            ExitCode::from(1)
        }
    }
}
