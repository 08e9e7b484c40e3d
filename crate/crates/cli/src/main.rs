use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gazefocus::attention::rank_sessions;
use gazefocus::cluster::confusion_matrix;
use gazefocus::config::parse_key_values;
use gazefocus::ingest::{self, ReportFormat, SessionBundle};
use gazefocus::pipeline::{self, RunOptions};
use gazefocus::synth::{generate_session, GroundTruth, SynthScript, GROUND_TRUTH_FILE};
use gazefocus::{Error, Result};

#[derive(Parser)]
#[command(name = "gazefocus", version, about = "Teacher attention analysis from mobile eye-tracking sessions")]
struct Cli {
    /// Worker threads per stage (0 = one per core). Output does not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SessionArgs {
    /// Session directory holding detections.jsonl, gaze.csv and optionally frames/.
    bundle: PathBuf,

    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override one configuration key (repeatable), e.g. --set linking.theta_high=0.7
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Output directory (default: <bundle>/out).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Count only fixations that survive motion validation.
    #[arg(long)]
    validate_fixations: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Svg,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic session bundle with ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// JSON script; when given, the other generator flags are ignored.
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Comma-separated attention shares, one per student.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.4, 0.3, 0.2, 0.1])]
        shares: Vec<f64>,
        /// Fraction of segments spent looking at the board.
        #[arg(long, default_value_t = 0.3)]
        board_fraction: f64,
        #[arg(long, default_value_t = 900.0)]
        duration_s: f64,
        /// Emit a short session with this many head turns and a frame dump.
        #[arg(long)]
        turns: Option<usize>,
    },
    /// Link detections into tracklets (tracklets.jsonl).
    Link(SessionArgs),
    /// Cluster tracklets into identities (tracklets.jsonl, clusters.json).
    Cluster(SessionArgs),
    /// Detect fixations (fixations.csv).
    Fixations(SessionArgs),
    /// Estimate camera motion from the frame dump (flow.csv, fixations.csv).
    Motion(SessionArgs),
    /// Attribute fixations to identities (report.json, timeline.csv).
    Attention(SessionArgs),
    /// Re-render a report.json as json, csv or an svg timeline.
    Report {
        report: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score identity labels against ground_truth.json.
    Evaluate {
        #[command(flatten)]
        session: SessionArgs,
        /// Use labels from an existing clusters.json instead of re-running.
        #[arg(long)]
        clusters: Option<PathBuf>,
    },
    /// Session-by-rank table of identity attention shares.
    Rank {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage and write the full artifact set.
    Run(SessionArgs),
}

fn assignments(args: &SessionArgs) -> Result<BTreeMap<String, String>> {
    let mut kv = match &args.config {
        Some(path) => {
            let bytes = ingest::read_file(path)?;
            let text = String::from_utf8(bytes)
                .map_err(|_| Error::Config(format!("{}: not UTF-8", path.display())))?;
            parse_key_values(&text)?
        }
        None => BTreeMap::new(),
    };
    for s in &args.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(kv)
}

fn load(args: &SessionArgs) -> Result<SessionBundle> {
    let kv = assignments(args)?;
    ingest::load_bundle(&args.bundle, &kv)
}

fn out_dir(args: &SessionArgs) -> PathBuf {
    args.out.clone().unwrap_or_else(|| args.bundle.join("out"))
}

fn options(args: &SessionArgs) -> RunOptions {
    RunOptions {
        validate_fixations: args.validate_fixations,
    }
}

fn write_selected(args: &SessionArgs, files: BTreeMap<String, Vec<u8>>, names: &[&str]) -> Result<()> {
    let selected: BTreeMap<String, Vec<u8>> = files
        .into_iter()
        .filter(|(name, _)| names.contains(&name.as_str()))
        .collect();
    pipeline::write_artifacts(&out_dir(args), &selected)
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => ingest::write_file(path, bytes),
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(bytes)
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn synth(
    out: &Path,
    script: Option<&Path>,
    seed: u64,
    shares: &[f64],
    board_fraction: f64,
    duration_s: f64,
    turns: Option<usize>,
) -> Result<()> {
    let script = match (script, turns) {
        (Some(path), _) => SynthScript::from_json(&ingest::read_file(path)?)?,
        (None, Some(t)) => SynthScript::motion_session(seed, t)?,
        (None, None) => SynthScript::with_shares(seed, shares, board_fraction, duration_s)?,
    };
    let session = generate_session(&script)?;
    session.write_to(out)?;
    println!(
        "{}: {} detections, {} gaze samples, {} frames",
        out.display(),
        session.detections.len(),
        session.gaze.len(),
        session.frames.len()
    );
    Ok(())
}

fn evaluate(args: &SessionArgs, clusters: Option<&Path>) -> Result<()> {
    let bundle = load(args)?;
    let truth = GroundTruth::from_json(&ingest::read_file(&args.bundle.join(GROUND_TRUTH_FILE))?)?;
    let labels = match clusters {
        Some(path) => ingest::parse_cluster_labels(&ingest::read_file(path)?)?,
        None => {
            let linking = pipeline::link_stage(&bundle.detections, &bundle.config)?;
            pipeline::cluster_stage(&bundle.detections, &linking, &bundle.config)?.detection_labels
        }
    };
    let cm = confusion_matrix(&labels, &truth.detection_identity)
        .map_err(|e| Error::stage("evaluate", e.to_string()))?;
    println!("confusion matrix (rows: true identity, columns: predicted identity)");
    for row in cm.counts() {
        let cells: Vec<String> = row.iter().map(|c| format!("{c:>7}")).collect();
        println!("{}", cells.join(""));
    }
    println!("accuracy {:.6} ({}/{})", cm.accuracy(), cm.trace(), cm.total());
    Ok(())
}

fn rank(reports: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let loaded = reports
        .iter()
        .map(|p| {
            let report = ingest::parse_report(&ingest::read_file(p)?)?;
            Ok((p.display().to_string(), report))
        })
        .collect::<Result<Vec<_>>>()?;
    let table = rank_sessions(&loaded)?;
    emit(out, ingest::write_rank_table(&table).as_bytes())
}

fn execute(command: Command) -> Result<()> {
    use pipeline::*;
    match command {
        Command::Synth {
            out,
            script,
            seed,
            shares,
            board_fraction,
            duration_s,
            turns,
        } => synth(&out, script.as_deref(), seed, &shares, board_fraction, duration_s, turns),
        Command::Link(args) => {
            let bundle = load(&args)?;
            let linking = link_stage(&bundle.detections, &bundle.config)?;
            let mut files = BTreeMap::new();
            files.insert(
                ARTIFACT_TRACKLETS.to_string(),
                ingest::write_tracklets(&linking.tracklets, &bundle.detections).into_bytes(),
            );
            write_artifacts(&out_dir(&args), &files)
        }
        Command::Cluster(args) => {
            let bundle = load(&args)?;
            let linking = link_stage(&bundle.detections, &bundle.config)?;
            let clustering = cluster_stage(&bundle.detections, &linking, &bundle.config)?;
            let mut files = BTreeMap::new();
            files.insert(
                ARTIFACT_TRACKLETS.to_string(),
                ingest::write_tracklets(&linking.tracklets, &bundle.detections).into_bytes(),
            );
            files.insert(
                ARTIFACT_CLUSTERS.to_string(),
                ingest::write_clusters(&clustering.artifact()).into_bytes(),
            );
            write_artifacts(&out_dir(&args), &files)
        }
        Command::Fixations(args) => {
            let bundle = load(&args)?;
            let (fixations, spans) = fixation_stage(&bundle.gaze, &bundle.config)?;
            let mut files = BTreeMap::new();
            files.insert(
                ARTIFACT_FIXATIONS.to_string(),
                ingest::write_fixations(&fixations, &spans).into_bytes(),
            );
            write_artifacts(&out_dir(&args), &files)
        }
        Command::Motion(args) => {
            let bundle = load(&args)?;
            let dir = bundle.frames_dir.clone().ok_or_else(|| {
                Error::io(
                    args.bundle.join(ingest::FRAMES_DIR),
                    std::io::Error::new(std::io::ErrorKind::NotFound, "no frame dump"),
                )
            })?;
            let (mut fixations, spans) = fixation_stage(&bundle.gaze, &bundle.config)?;
            let motion = motion_stage(&dir, &bundle.config, &mut fixations, &spans)?;
            let mut files = BTreeMap::new();
            files.insert(ARTIFACT_FLOW.to_string(), ingest::write_flow(&motion.flows).into_bytes());
            files.insert(
                ARTIFACT_FIXATIONS.to_string(),
                ingest::write_fixations(&fixations, &spans).into_bytes(),
            );
            write_artifacts(&out_dir(&args), &files)
        }
        Command::Attention(args) => {
            let bundle = load(&args)?;
            let out = run_pipeline(&bundle, &options(&args))?;
            write_selected(
                &args,
                artifacts(&out, &bundle.detections),
                &[ARTIFACT_REPORT_JSON, ARTIFACT_TIMELINE_CSV],
            )
        }
        Command::Report { report, format, out } => {
            let parsed = ingest::parse_report(&ingest::read_file(&report)?)?;
            let format = match format {
                Format::Json => ReportFormat::Json,
                Format::Csv => ReportFormat::Csv,
                Format::Svg => ReportFormat::SvgTimeline,
            };
            emit(out.as_deref(), &ingest::write_report(&parsed, format))
        }
        Command::Evaluate { session, clusters } => evaluate(&session, clusters.as_deref()),
        Command::Rank { reports, out } => rank(&reports, out.as_deref()),
        Command::Run(args) => {
            let bundle = load(&args)?;
            let out = run_pipeline(&bundle, &options(&args))?;
            write_artifacts(&out_dir(&args), &artifacts(&out, &bundle.detections))
        }
    }
}

fn stage_of(e: &Error) -> &'static str {
    match e {
        Error::Parse { .. } | Error::Io { .. } => "ingest",
        Error::Config(_) => "config",
        Error::Stage { stage, .. } => stage,
        Error::Invalid { .. } => "pipeline",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.verbose {
        "info"
    } else {
        "warn"
    }))
    .init();
    let result = pipeline::with_jobs(cli.jobs, || execute(cli.command)).and_then(|r| r);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                Error::Stage { .. } | Error::Config(_) => eprintln!("gazefocus: {e}"),
                _ => eprintln!("gazefocus: {}: {e}", stage_of(&e)),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
