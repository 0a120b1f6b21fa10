//! The `ncr` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric
//! failure. Diagnostics go to stderr; data goes to stdout or `--out`.

use std::collections::HashSet;
use std::ffi::OsString;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use log::info;

use crate::descriptor::DescriptorSet;
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_holidays, evaluate_oxford, evaluate_ukb, ApVariant, EvalReport, HolidaysOptions,
    OkPolicy, OxfordOptions,
};
use crate::index::build_index;
use crate::io;
use crate::math::normalize_set;
use crate::pairs::{greedy_unique_subset, mine_candidate_pairs, sample_negatives, PairSet};
use crate::pca::{apply_pca, fit_pca_with, ApplyOptions, PcaOptions, DEFAULT_SAMPLE_CAP};
use crate::projection::{apply_projection, fit_projection_logged, TrainConfig};
use crate::synth::{self, SynthSpec};
use crate::truth::{GroundTruth, TruthFormat};

#[derive(Parser, Debug)]
#[command(name = "ncr", version, about = "Neural-code image retrieval toolkit")]
pub struct Cli {
    /// Worker threads (falls back to NCR_THREADS, then all cores).
    #[arg(long, global = true, env = "NCR_THREADS")]
    threads: Option<usize>,

    /// `key\tvalue` defaults for the subcommand's flags; explicit flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// L2-normalize every descriptor.
    Normalize {
        #[command(flatten)]
        input: InputSet,
        #[command(flatten)]
        out: OutputSet,
    },
    /// Fit or apply a PCA model.
    #[command(subcommand)]
    Pca(PcaCommand),
    /// Fit or apply a learned linear projection.
    #[command(subcommand)]
    Proj(ProjCommand),
    /// Build training pairs.
    #[command(subcommand)]
    Pairs(PairsCommand),
    /// Nearest-neighbour search.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Retrieval benchmarks.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Synthetic benchmark data.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Convert between CSV (`id,v1,...,vd`) and NCD, chosen by extension.
    Convert {
        #[arg(long)]
        input: PathBuf,
        /// Ids file for an NCD input (default: input with `.ids` extension).
        #[arg(long)]
        ids: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        out_ids: Option<PathBuf>,
    },
    /// Run subcommand lines from a file in order, stopping at the first failure.
    Run { manifest: PathBuf },
}

#[derive(Args, Debug)]
struct InputSet {
    /// Descriptor file (NCD).
    #[arg(long)]
    input: PathBuf,
    /// Ids file (default: input with `.ids` extension).
    #[arg(long)]
    ids: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OutputSet {
    /// Output descriptor file (NCD).
    #[arg(long)]
    out: PathBuf,
    /// Output ids file (default: out with `.ids` extension).
    #[arg(long)]
    out_ids: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum PcaCommand {
    Fit {
        #[command(flatten)]
        input: InputSet,
        /// Output dimension D.
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Rows used for fitting; larger sets are subsampled.
        #[arg(long, default_value_t = DEFAULT_SAMPLE_CAP)]
        sample_cap: usize,
        /// Fail instead of padding when the data has rank below D.
        #[arg(long)]
        strict_rank: bool,
        /// Id list (one per line) of rows left out of fitting, e.g. the
        /// evaluation queries. Ids absent from the input are ignored.
        #[arg(long)]
        exclude_ids: Option<PathBuf>,
        /// Output model (NCP1).
        #[arg(long)]
        out: PathBuf,
    },
    Apply {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        input: InputSet,
        #[command(flatten)]
        out: OutputSet,
        /// Skip L2 renormalization of the projected rows.
        #[arg(long)]
        no_renormalize: bool,
        /// Divide each coordinate by the square root of its eigenvalue.
        #[arg(long)]
        whiten: bool,
    },
}

#[derive(Subcommand, Debug)]
enum ProjCommand {
    Fit {
        #[command(flatten)]
        input: InputSet,
        /// Pair file (`a\tb\tpos|neg`).
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 0.8)]
        tau_pos: f64,
        #[arg(long, default_value_t = 1.4)]
        tau_neg: f64,
        #[arg(long, default_value_t = 0.1)]
        eta0: f64,
        #[arg(long, default_value_t = 0.1)]
        decay: f64,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 256)]
        batch_size: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Per-epoch loss log (TSV).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Output model (NCW1 plus manifest).
        #[arg(long)]
        out: PathBuf,
    },
    Apply {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        input: InputSet,
        #[command(flatten)]
        out: OutputSet,
        #[arg(long)]
        no_renormalize: bool,
    },
}

#[derive(Subcommand, Debug)]
enum PairsCommand {
    /// Positive pairs: non-adjacent nodes with a common neighbour.
    Mine {
        /// Match graph (`a\tb` edges).
        #[arg(long)]
        graph: PathBuf,
        /// Optional `id\tclass` map; edges must stay within a class.
        #[arg(long)]
        classes: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy subset of positives in which every id appears at most once.
    Subset {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        budget: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Uniformly sampled cross-class negatives.
    Negatives {
        #[arg(long)]
        classes: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum IndexCommand {
    /// Ranked neighbours (`query\trank\titem\tdistance`) for every query row.
    Query {
        /// Database descriptors (NCD).
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        db_ids: Option<PathBuf>,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        queries_ids: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Drop each query's own id from its results.
        #[arg(long)]
        exclude_self: bool,
        /// Use database rows as stored instead of L2-normalizing them.
        #[arg(long)]
        no_normalize: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Tsv,
    Text,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OkPolicyArg {
    Positive,
    Junk,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ApVariantArg {
    Rectangular,
    Trapezoidal,
}

impl From<ApVariantArg> for ApVariant {
    fn from(v: ApVariantArg) -> Self {
        match v {
            ApVariantArg::Rectangular => ApVariant::Rectangular,
            ApVariantArg::Trapezoidal => ApVariant::Trapezoidal,
        }
    }
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Only print the aggregate line.
    #[arg(long)]
    aggregate_only: bool,
    /// Extra last column on the aggregate TSV row.
    #[arg(long)]
    label: Option<String>,
    /// Append to `--out` instead of truncating it.
    #[arg(long, requires = "out")]
    append: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Database {
    #[arg(long)]
    db: PathBuf,
    #[arg(long)]
    db_ids: Option<PathBuf>,
    /// Use database rows as stored instead of L2-normalizing them.
    #[arg(long)]
    no_normalize: bool,
    /// Ground truth file.
    #[arg(long)]
    gt: PathBuf,
}

#[derive(Subcommand, Debug)]
enum EvalCommand {
    /// mAP with good/ok/junk ground truth and separate query descriptors.
    Oxford {
        #[command(flatten)]
        db: Database,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        queries_ids: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = OkPolicyArg::Positive)]
        ok_policy: OkPolicyArg,
        #[arg(long, value_enum, default_value_t = ApVariantArg::Rectangular)]
        ap_variant: ApVariantArg,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// mAP over groups, one query per group, query left out of its ranking.
    Holidays {
        #[command(flatten)]
        db: Database,
        #[arg(long, value_enum, default_value_t = ApVariantArg::Rectangular)]
        ap_variant: ApVariantArg,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Mean number of same-group items in every item's top 4.
    Ukb {
        #[command(flatten)]
        db: Database,
        #[command(flatten)]
        report: ReportArgs,
    },
}

#[derive(Subcommand, Debug)]
enum SynthCommand {
    /// Writes <out>.ncd, <out>.ids and <out>.gt.tsv.
    Gen {
        #[arg(long)]
        groups: usize,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        /// Number of leading axes carrying within-group nuisance.
        #[arg(long, requires = "nuisance_amp")]
        nuisance_dim: Option<usize>,
        #[arg(long, requires = "nuisance_dim")]
        nuisance_amp: Option<f64>,
        #[arg(long)]
        intrinsic_dim: Option<usize>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Output prefix.
        #[arg(long)]
        out: PathBuf,
    },
    /// All same-group positives plus as many sampled negatives.
    Pairs {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` (without the program name) and runs the command.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut argv: Vec<OsString> = vec!["ncr".into()];
    argv.extend(args.into_iter().map(Into::into));
    let cli = match parse(argv) {
        Ok(cli) => cli,
        Err(code) => return code,
    };
    init_logging(cli.verbose);
    match execute(cli) {
        Ok(()) => 0,
        // reader went away, e.g. `| head`
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn clap_exit(e: clap::Error) -> i32 {
    let _ = e.print();
    if e.use_stderr() {
        1
    } else {
        0
    }
}

fn strict_parse(argv: &[OsString]) -> std::result::Result<Cli, i32> {
    let matches = Cli::command().try_get_matches_from(argv).map_err(clap_exit)?;
    Cli::from_arg_matches(&matches).map_err(clap_exit)
}

fn parse(mut argv: Vec<OsString>) -> std::result::Result<Cli, i32> {
    // Lenient first pass: required flags may still come from the config file.
    let Ok(matches) = Cli::command().ignore_errors(true).try_get_matches_from(&argv) else {
        return strict_parse(&argv);
    };
    let Some(path) = matches.get_one::<PathBuf>("config").cloned() else {
        return strict_parse(&argv);
    };
    let merged = fs::read_to_string(&path)
        .map_err(Error::from)
        .and_then(|t| io::parse_key_values(&t))
        .map_err(|e| {
            eprintln!("error: config {}: {e}", path.display());
            1
        })?;

    let mut names = Vec::new();
    let mut m = &matches;
    while let Some((name, sub)) = m.subcommand() {
        names.push(name.to_string());
        m = sub;
    }
    let mut cmd = Cli::command();
    cmd.build();
    let mut leaf = &cmd;
    for name in &names {
        leaf = leaf.find_subcommand(name).expect("matched subcommand");
    }
    let given: Vec<String> = argv
        .iter()
        .filter_map(|a| a.to_str())
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();
    for (key, value) in merged {
        let flag = key.replace('_', "-");
        let Some(arg) = leaf.get_arguments().find(|a| a.get_long() == Some(flag.as_str())) else {
            eprintln!("warning: config key {key:?} does not apply to this command, ignored");
            continue;
        };
        if given.iter().any(|g| *g == flag) || arg.is_global_set() {
            continue;
        }
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value.as_str() {
                "true" | "1" | "yes" => argv.push(format!("--{flag}").into()),
                "false" | "0" | "no" => {}
                other => {
                    eprintln!("error: config key {key}: expected true or false, got {other:?}");
                    return Err(1);
                }
            }
        } else {
            argv.push(format!("--{flag}={value}").into());
        }
    }
    strict_parse(&argv)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.threads {
        Some(0) => Err(Error::InvalidArgument("--threads must be >= 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            pool.install(|| run_command(cli.command))
        }
        None => run_command(cli.command),
    }
}

fn require_inputs(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            return Err(Error::InvalidArgument(format!("input file {} not found", p.display())));
        }
    }
    Ok(())
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

/// Output directories must exist and no output may overwrite an input.
fn require_outputs(outputs: &[&Path], inputs: &[&Path]) -> Result<()> {
    for out in outputs {
        let parent = out.parent().filter(|p| !p.as_os_str().is_empty());
        if let Some(dir) = parent {
            if !dir.is_dir() {
                return Err(Error::InvalidArgument(format!(
                    "output directory {} does not exist",
                    dir.display()
                )));
            }
        }
        if inputs.iter().any(|i| same_file(i, out)) {
            return Err(Error::InvalidArgument(format!(
                "output {} would overwrite an input",
                out.display()
            )));
        }
    }
    Ok(())
}

fn ids_or_default(path: &Path, ids: &Option<PathBuf>) -> PathBuf {
    ids.clone().unwrap_or_else(|| io::ids_path_for(path))
}

impl InputSet {
    fn paths(&self) -> (PathBuf, PathBuf) {
        (self.input.clone(), ids_or_default(&self.input, &self.ids))
    }
}

impl OutputSet {
    fn paths(&self) -> (PathBuf, PathBuf) {
        (self.out.clone(), ids_or_default(&self.out, &self.out_ids))
    }
}

fn emit(out: &Option<PathBuf>, text: &str, append: bool) -> Result<()> {
    match out {
        Some(path) => {
            let mut f = OpenOptions::new()
                .create(true)
                .write(true)
                .append(append)
                .truncate(!append)
                .open(path)?;
            f.write_all(text.as_bytes())?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(text.as_bytes())?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn with_optional<'a>(base: &[&'a Path], extra: &'a Option<PathBuf>) -> Vec<&'a Path> {
    let mut v = base.to_vec();
    v.extend(extra.as_deref());
    v
}

fn run_command(cmd: Command) -> Result<()> {
    match cmd {
        Command::Normalize { input, out } => {
            let (inp, ids) = input.paths();
            let (o, oi) = out.paths();
            require_inputs(&[&inp, &ids])?;
            require_outputs(&[&o, &oi], &[&inp, &ids])?;
            let set = io::read_ncd(&inp, &ids)?;
            io::write_ncd(&normalize_set(&set)?, &o, &oi)
        }
        Command::Pca(c) => run_pca(c),
        Command::Proj(c) => run_proj(c),
        Command::Pairs(c) => run_pairs(c),
        Command::Index(c) => run_index(c),
        Command::Eval(c) => run_eval(c),
        Command::Synth(c) => run_synth(c),
        Command::Convert {
            input,
            ids,
            out,
            out_ids,
        } => run_convert(&input, ids, &out, out_ids),
        Command::Run { manifest } => {
            require_inputs(&[&manifest])?;
            match run_manifest(&manifest)? {
                0 => Ok(()),
                code => Err(Error::StepFailed(code)),
            }
        }
    }
}

fn run_pca(cmd: PcaCommand) -> Result<()> {
    match cmd {
        PcaCommand::Fit {
            input,
            dim,
            seed,
            sample_cap,
            strict_rank,
            exclude_ids,
            out,
        } => {
            let (inp, ids) = input.paths();
            require_inputs(&[&inp, &ids])?;
            if let Some(ex) = &exclude_ids {
                require_inputs(&[ex])?;
            }
            require_outputs(&[&out], &[&inp, &ids])?;
            if dim == 0 {
                return Err(Error::InvalidArgument("--dim must be >= 1".into()));
            }
            let mut set = io::read_ncd(&inp, &ids)?;
            if let Some(ex) = &exclude_ids {
                let drop: HashSet<String> = io::parse_ids(&fs::read_to_string(ex)?)?.into_iter().collect();
                let keep: Vec<usize> = (0..set.len()).filter(|&i| !drop.contains(&set.ids()[i])).collect();
                info!("excluding {} of {} rows from fitting", set.len() - keep.len(), set.len());
                set = set.select(&keep)?;
            }
            let opts = PcaOptions {
                seed,
                sample_cap,
                strict_rank,
            };
            let model = fit_pca_with(&set, dim, &opts)?;
            info!("PCA {} -> {}", model.input_dim(), model.output_dim());
            io::write_pca(&model, &out)
        }
        PcaCommand::Apply {
            model,
            input,
            out,
            no_renormalize,
            whiten,
        } => {
            let (inp, ids) = input.paths();
            let (o, oi) = out.paths();
            require_inputs(&[&model, &inp, &ids])?;
            require_outputs(&[&o, &oi], &[&model, &inp, &ids])?;
            let model = io::read_pca(&model)?;
            let set = io::read_ncd(&inp, &ids)?;
            let opts = ApplyOptions {
                renormalize: !no_renormalize,
                whiten,
            };
            io::write_ncd(&apply_pca(&model, &set, opts)?, &o, &oi)
        }
    }
}

fn run_proj(cmd: ProjCommand) -> Result<()> {
    match cmd {
        ProjCommand::Fit {
            input,
            pairs,
            dim,
            tau_pos,
            tau_neg,
            eta0,
            decay,
            epochs,
            batch_size,
            seed,
            log,
            out,
        } => {
            let (inp, ids) = input.paths();
            require_inputs(&[&inp, &ids, &pairs])?;
            let inputs = [inp.as_path(), &ids, &pairs];
            require_outputs(&with_optional(&[&out], &log), &inputs)?;
            let cfg = TrainConfig {
                dim,
                tau_pos,
                tau_neg,
                eta0,
                decay,
                epochs,
                batch_size,
                seed,
            };
            cfg.validate()?;
            let set = io::read_ncd(&inp, &ids)?;
            let pair_set = io::read_pairs(&pairs)?;
            let (model, epochs_log) = fit_projection_logged(&set, &pair_set, &cfg)?;
            io::write_projection(&model, &out)?;
            if let Some(path) = log {
                let mut text = String::from("epoch\tstep\tloss\taccepted\n");
                for e in &epochs_log {
                    text.push_str(&format!(
                        "{}\t{}\t{}\t{}\n",
                        e.epoch,
                        crate::fmt::format_g(e.step, 9),
                        crate::fmt::format_g(e.loss, 9),
                        e.accepted
                    ));
                }
                fs::write(path, text)?;
            }
            Ok(())
        }
        ProjCommand::Apply {
            model,
            input,
            out,
            no_renormalize,
        } => {
            let (inp, ids) = input.paths();
            let (o, oi) = out.paths();
            require_inputs(&[&model, &inp, &ids])?;
            require_outputs(&[&o, &oi], &[&model, &inp, &ids])?;
            let model = io::read_projection(&model)?;
            let set = io::read_ncd(&inp, &ids)?;
            io::write_ncd(&apply_projection(&model, &set, !no_renormalize)?, &o, &oi)
        }
    }
}

fn run_pairs(cmd: PairsCommand) -> Result<()> {
    match cmd {
        PairsCommand::Mine {
            graph,
            classes,
            out,
        } => {
            let inputs = with_optional(&[&graph], &classes);
            require_inputs(&inputs)?;
            require_outputs(&with_optional(&[], &out), &inputs)?;
            let mut g = io::read_match_graph(&graph)?;
            if let Some(path) = &classes {
                g = g.with_classes(io::read_classes(path)?)?;
            }
            let positives = mine_candidate_pairs(&g);
            info!("{} candidate pairs from {} nodes", positives.len(), g.node_count());
            let set = PairSet {
                positives,
                negatives: Vec::new(),
            };
            emit(&out, &io::encode_pairs(&set), false)
        }
        PairsCommand::Subset { pairs, budget, out } => {
            require_inputs(&[&pairs])?;
            require_outputs(&with_optional(&[], &out), &[&pairs])?;
            let mut set = io::read_pairs(&pairs)?;
            let mut sorted = set.positives.clone();
            sorted.sort();
            set.positives = greedy_unique_subset(&sorted, budget);
            emit(&out, &io::encode_pairs(&set), false)
        }
        PairsCommand::Negatives {
            classes,
            count,
            seed,
            out,
        } => {
            require_inputs(&[&classes])?;
            require_outputs(&with_optional(&[], &out), &[&classes])?;
            let class_of = io::read_classes(&classes)?;
            let set = PairSet {
                positives: Vec::new(),
                negatives: sample_negatives(&class_of, count, seed)?,
            };
            emit(&out, &io::encode_pairs(&set), false)
        }
    }
}

fn run_index(cmd: IndexCommand) -> Result<()> {
    let IndexCommand::Query {
        db,
        db_ids,
        queries,
        queries_ids,
        k,
        exclude_self,
        no_normalize,
        out,
    } = cmd;
    let db_ids = ids_or_default(&db, &db_ids);
    let q_ids = ids_or_default(&queries, &queries_ids);
    let inputs = [db.as_path(), &db_ids, &queries, &q_ids];
    require_inputs(&inputs)?;
    require_outputs(&with_optional(&[], &out), &inputs)?;
    let index = build_index(&io::read_ncd(&db, &db_ids)?, !no_normalize)?;
    let qs = io::read_ncd(&queries, &q_ids)?;
    let exclude: Vec<Vec<&str>> = if exclude_self {
        qs.ids().iter().map(|id| vec![id.as_str()]).collect()
    } else {
        Vec::new()
    };
    let lists = index.batch_query(&qs, k, &exclude)?;
    let mut buf = Vec::new();
    for (id, list) in qs.ids().iter().zip(&lists) {
        list.write_tsv(&index, id, &mut buf)?;
    }
    emit(&out, &String::from_utf8_lossy(&buf), false)
}

fn load_db(db: &Database) -> Result<(crate::index::Index, PathBuf)> {
    let ids = ids_or_default(&db.db, &db.db_ids);
    let set = io::read_ncd(&db.db, &ids)?;
    Ok((build_index(&set, !db.no_normalize)?, ids))
}

fn db_inputs(db: &Database) -> Vec<PathBuf> {
    vec![db.db.clone(), ids_or_default(&db.db, &db.db_ids), db.gt.clone()]
}

fn check_paths(inputs: &[PathBuf], report: &ReportArgs) -> Result<()> {
    let inputs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    require_inputs(&inputs)?;
    require_outputs(&with_optional(&[], &report.out), &inputs)
}

fn write_report(report: &EvalReport, args: &ReportArgs) -> Result<()> {
    let label = args.label.as_deref();
    let text = match (args.format, args.aggregate_only) {
        (Format::Tsv, false) => report.to_tsv(label),
        (Format::Tsv, true) => report.aggregate_tsv(label),
        (Format::Text, false) => report.to_text(),
        (Format::Text, true) => {
            let prefix = label.map(|l| format!("{l}\t")).unwrap_or_default();
            format!("{prefix}{}: {:.4}\n", report.metric, report.aggregate)
        }
    };
    emit(&args.out, &text, args.append)
}

fn group_truth(path: &Path) -> Result<crate::truth::GroupTruth> {
    match io::read_ground_truth(path, TruthFormat::Groups)? {
        GroundTruth::Groups(g) => Ok(g),
        GroundTruth::Ranked(_) => unreachable!("group form requested"),
    }
}

fn run_eval(cmd: EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Oxford {
            db,
            queries,
            queries_ids,
            ok_policy,
            ap_variant,
            report,
        } => {
            let q_ids = ids_or_default(&queries, &queries_ids);
            let mut inputs = db_inputs(&db);
            inputs.extend([queries.clone(), q_ids.clone()]);
            check_paths(&inputs, &report)?;
            let GroundTruth::Ranked(gt) = io::read_ground_truth(&db.gt, TruthFormat::Ranked)? else {
                unreachable!("ranked form requested")
            };
            let (index, _) = load_db(&db)?;
            let qs = io::read_ncd(&queries, &q_ids)?;
            let opts = OxfordOptions {
                ok_policy: match ok_policy {
                    OkPolicyArg::Positive => OkPolicy::Positive,
                    OkPolicyArg::Junk => OkPolicy::Junk,
                },
                ap_variant: ap_variant.into(),
            };
            write_report(&evaluate_oxford(&index, &qs, &gt, opts)?, &report)
        }
        EvalCommand::Holidays {
            db,
            ap_variant,
            report,
        } => {
            check_paths(&db_inputs(&db), &report)?;
            let gt = group_truth(&db.gt)?;
            let (index, _) = load_db(&db)?;
            let opts = HolidaysOptions {
                ap_variant: ap_variant.into(),
            };
            write_report(&evaluate_holidays(&index, &gt, opts)?, &report)
        }
        EvalCommand::Ukb { db, report } => {
            check_paths(&db_inputs(&db), &report)?;
            let gt = group_truth(&db.gt)?;
            let (index, _) = load_db(&db)?;
            write_report(&evaluate_ukb(&index, &gt)?, &report)
        }
    }
}

fn run_synth(cmd: SynthCommand) -> Result<()> {
    match cmd {
        SynthCommand::Gen {
            groups,
            size,
            dim,
            sigma,
            nuisance_dim,
            nuisance_amp,
            intrinsic_dim,
            seed,
            out,
        } => {
            let (ncd, ids, gt) = synth::dataset_paths(&out);
            require_outputs(&[&ncd, &ids, &gt], &[])?;
            let mut spec = SynthSpec::new(groups, size, dim, sigma, seed);
            if let (Some(m), Some(a)) = (nuisance_dim, nuisance_amp) {
                spec = spec.with_nuisance(m, a);
            }
            if let Some(k) = intrinsic_dim {
                spec = spec.with_intrinsic_dim(k);
            }
            let ds = synth::generate(&spec)?;
            synth::write_dataset(&ds, &out)
        }
        SynthCommand::Pairs { gt, seed, out } => {
            require_inputs(&[&gt])?;
            require_outputs(&with_optional(&[], &out), &[&gt])?;
            let pairs = synth::generate_nuisance_pairs(&group_truth(&gt)?, seed)?;
            emit(&out, &io::encode_pairs(&pairs), false)
        }
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn run_convert(input: &Path, ids: Option<PathBuf>, out: &Path, out_ids: Option<PathBuf>) -> Result<()> {
    match (is_csv(input), is_csv(out)) {
        (true, false) => {
            let oi = ids_or_default(out, &out_ids);
            require_inputs(&[input])?;
            require_outputs(&[out, &oi], &[input])?;
            let set: DescriptorSet = io::parse_csv(&fs::read_to_string(input)?)?;
            io::write_ncd(&set, out, &oi)
        }
        (false, true) => {
            let ii = ids_or_default(input, &ids);
            require_inputs(&[input, &ii])?;
            require_outputs(&[out], &[input, &ii])?;
            let set = io::read_ncd(input, &ii)?;
            fs::write(out, io::encode_csv(&set)?)?;
            Ok(())
        }
        _ => Err(Error::InvalidArgument(
            "convert needs exactly one .csv side (CSV to NCD or NCD to CSV)".into(),
        )),
    }
}

/// Runs each non-blank, non-`#` line of `path` as an `ncr` command line.
/// A leading `ncr` token is optional. Returns the first non-zero exit code.
pub fn run_manifest(path: &Path) -> Result<i32> {
    let text = fs::read_to_string(path)?;
    let steps: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect();
    let total = steps.len();
    for (n, (line_no, line)) in steps.into_iter().enumerate() {
        let mut words = shlex::split(line).ok_or_else(|| Error::parse(line_no, "unbalanced quotes"))?;
        if words.first().map(String::as_str) == Some("ncr") {
            words.remove(0);
        }
        if words.first().map(String::as_str) == Some("run") {
            return Err(Error::parse(line_no, "manifests cannot run other manifests"));
        }
        let start = Instant::now();
        let code = dispatch(&words);
        eprintln!(
            "[{}/{total}] {:.3}s exit {code}: {line}",
            n + 1,
            start.elapsed().as_secs_f64()
        );
        if code != 0 {
            return Ok(code);
        }
    }
    Ok(0)
}
