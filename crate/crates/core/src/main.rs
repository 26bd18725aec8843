use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use honest_audit::dump::{read_dump, read_dump_checked};
use honest_audit::lexicon::MatchMode;
use honest_audit::report::{
    load_dumps, run_audit, sample_for_annotation, Bundle, ReportError, RunConfig, SampleOptions,
};
use honest_audit::scoring::{DatasetWeighting, PercentileOver, StdKind};
use honest_audit::similarity::AgreementMethod;
use honest_audit::template::{expand_templates, load_template_spec, TemplateManifest};
use honest_audit::AuditError;

#[derive(Parser)]
#[command(name = "audit", version, about = "Score language-model completions for hurtful content")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every dump in a config and write the report bundle.
    Run(RunArgs),
    /// Draw annotation sheets from the dumps in a config.
    Sample(SampleArgs),
    /// Check a single dump file, optionally against a manifest.
    Validate {
        dump: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Expand identity and predicate tables into a template manifest.
    Expand {
        #[arg(long)]
        identities: PathBuf,
        #[arg(long)]
        predicates: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, env = "AUDIT_CONFIG")]
    config: PathBuf,
    #[arg(long = "match", env = "AUDIT_MATCH")]
    match_mode: Option<MatchMode>,
    #[arg(long, env = "AUDIT_PERCENTILE_OVER")]
    percentile_over: Option<PercentileOver>,
    #[arg(long, env = "AUDIT_AGREEMENT")]
    agreement: Option<AgreementMethod>,
    #[arg(long, env = "AUDIT_DATASET_WEIGHTING")]
    dataset_weighting: Option<DatasetWeighting>,
    #[arg(long, env = "AUDIT_STD")]
    std: Option<StdKind>,
    #[arg(long, env = "AUDIT_K_MAX")]
    k_max: Option<usize>,
    #[arg(long, env = "AUDIT_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    #[arg(long, env = "AUDIT_SEED")]
    seed: Option<u64>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long, env = "AUDIT_CONFIG")]
    config: PathBuf,
    #[arg(long, default_value_t = 20)]
    per_relation: usize,
    #[arg(long, default_value_t = 2)]
    annotators: usize,
    #[arg(long, default_value_t = 10)]
    top_m: usize,
    #[arg(long, env = "AUDIT_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "AUDIT_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
}

fn run(args: RunArgs) -> Result<(), AuditError> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(v) = args.match_mode {
        config.match_mode = v;
    }
    if let Some(v) = args.percentile_over {
        config.percentile_over = v;
    }
    if let Some(v) = args.agreement {
        config.agreement = v;
    }
    if let Some(v) = args.dataset_weighting {
        config.dataset_weighting = v;
    }
    if let Some(v) = args.std {
        config.std = v;
    }
    if let Some(v) = args.k_max {
        config.k_max = v;
    }
    if let Some(v) = args.output_dir {
        config.output_dir = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    run_audit(&config)?;
    log::info!("wrote bundle to {}", config.output_dir.display());
    Ok(())
}

fn sample(args: SampleArgs) -> Result<(), AuditError> {
    let config = RunConfig::load(&args.config)?;
    config.validate()?;
    let manifest = TemplateManifest::load(&config.manifest)?;
    let dumps = load_dumps(&config.dumps, &manifest)?;
    let refs: Vec<_> = dumps.iter().collect();
    let options = SampleOptions {
        per_relation: args.per_relation,
        annotators: args.annotators,
        top_m: args.top_m,
    };
    let seed = args.seed.unwrap_or(config.seed);
    let sheets = sample_for_annotation(&refs, &manifest, options, seed)?;
    let bundle = Bundle {
        files: sheets.iter().map(|s| (s.file_name(), s.to_csv())).collect(),
    };
    let dir = args.output_dir.unwrap_or(config.output_dir);
    bundle.write_to(&dir)?;
    let total: usize = sheets.iter().map(|s| s.rows.len()).sum();
    log::info!("wrote {} sheet(s), {total} instance(s) to {}", sheets.len(), dir.display());
    Ok(())
}

fn validate(dump: PathBuf, manifest: Option<PathBuf>) -> Result<(), AuditError> {
    let wrap = |source| AuditError::DumpFile {
        path: dump.clone(),
        source,
    };
    let parsed = match manifest {
        Some(m) => read_dump_checked(&dump, &TemplateManifest::load(m)?).map_err(wrap)?,
        None => read_dump(&dump).map_err(wrap)?,
    };
    println!(
        "ok: {} {} templates={} records={} k_max={}",
        parsed.model.model_id,
        parsed.subset,
        parsed.templates.len(),
        parsed.record_count(),
        parsed.k_max
    );
    Ok(())
}

fn expand(identities: PathBuf, predicates: PathBuf, out: PathBuf) -> Result<(), AuditError> {
    let (ids, preds) = load_template_spec(identities, predicates)?;
    let manifest = TemplateManifest::new(expand_templates(&ids, &preds))?;
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).map(PathBuf::from).unwrap_or_else(|| ".".into());
    let name = out.file_name().ok_or_else(|| ReportError::Config(format!("bad output path {}", out.display())))?;
    Bundle {
        files: vec![(name.to_string_lossy().into_owned(), manifest.to_jsonl())],
    }
    .write_to(&dir)?;
    fs::metadata(&out).map_err(ReportError::Io)?;
    println!("{} templates, hash {}", manifest.len(), manifest.hash());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Sample(args) => sample(args),
        Command::Validate { dump, manifest } => validate(dump, manifest),
        Command::Expand {
            identities,
            predicates,
            out,
        } => expand(identities, predicates, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}
