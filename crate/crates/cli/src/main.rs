//! courtsound: impact-event analysis for multichannel court audio.
//!
//! Each subcommand exposes one pipeline stage; `run` chains them all. File
//! formats are shared across stages, so the output of any stage feeds the
//! next: detections and labels travel as CSV, matched groups and events as
//! JSON Lines, audio as WAV.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 unreadable or
//! inconsistent data, 3 numerical failure.

// Guards written as `!(x > 0.0)` are deliberate: they reject NaN along with
// the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use clap::{Args, Parser, Subcommand};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use courtsound::classify::{
    extract_t1, extract_t2, fuse, train_bundle, ClassLabel, ClassifyError, FeatureKind,
    TrainExample, TrainingConfig,
};
use courtsound::detect::{detect_gaussian, detect_surprise, Detection, DetectorMethod};
use courtsound::geometry::{CourtGeometry, MicArray};
use courtsound::localize::{localize_3d, EventGroup, LocalizeError};
use courtsound::pipeline::io::{
    detections_to_csv, events_to_jsonl, ingest, labels_to_csv, read_detections_csv,
    read_events_jsonl, read_labels_csv, sig9, write_wav, LabelRecord,
};
use courtsound::pipeline::{
    compare_localizations, match_detections, run, BundleScorer, ClassifiedLocatedEvent,
    DetectionScorer, InputSpec, PipelineConfig, PipelineError,
};
use courtsound::simulate::{error_experiment, forward_delays, random_events, NoiseSpec,
    SimulateError};

#[derive(Parser)]
#[command(name = "courtsound", version, about = "Detect, localize and classify ball impacts \
in synchronized multichannel court audio")]
struct Cli {
    /// Pipeline configuration (JSON). Defaults to the standard court with
    /// its six-microphone layout.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for every randomized stage.
    #[arg(long, global = true, value_name = "INT", default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when omitted (required where noted).
    #[arg(long, global = true, value_name = "PATH")]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect impact onsets per channel; writes a detections CSV.
    Detect(AudioArgs),
    /// Group per-channel detections into candidate events (JSONL groups).
    Match(MatchArgs),
    /// Solve matched groups for 3-D positions (events JSONL).
    Localize(LocalizeArgs),
    /// Train a classifier bundle from audio plus a label CSV.
    Train(TrainArgs),
    /// Classify matched detections with a trained bundle (labels CSV).
    Predict(PredictArgs),
    /// Full pipeline: detect, match, classify, localize (events JSONL).
    Run(AudioArgs),
    /// Generate a synthetic scene: multichannel WAV plus ground truth.
    Simulate(SimulateArgs),
    /// Compare the positions of two id-aligned event lists (JSONL).
    Eval(EvalArgs),
    /// Localization-error sweep over timestamp noise levels.
    PlotErrors(PlotErrorsArgs),
}

#[derive(Args)]
struct AudioArgs {
    /// One multichannel WAV, or one mono WAV per channel in channel order.
    /// Falls back to the config's "input" entry when omitted.
    #[arg(value_name = "AUDIO")]
    audio: Vec<PathBuf>,
}

#[derive(Args)]
struct MatchArgs {
    /// Detections CSV, as written by `detect`.
    #[arg(value_name = "DETECTIONS")]
    detections: PathBuf,
}

#[derive(Args)]
struct LocalizeArgs {
    /// Matched groups JSONL, as written by `match`.
    #[arg(value_name = "GROUPS")]
    groups: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled detections CSV: channel,sample_index,class.
    #[arg(long, value_name = "PATH")]
    labels: PathBuf,
    /// Audio the labels refer to (see `detect` for accepted forms).
    #[arg(value_name = "AUDIO")]
    audio: Vec<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// Detections CSV to classify.
    #[arg(long, value_name = "PATH")]
    detections: PathBuf,
    /// Trained bundle; falls back to the config's "classifier_bundle".
    #[arg(long, value_name = "PATH")]
    bundle: Option<PathBuf>,
    /// Audio the detections refer to.
    #[arg(value_name = "AUDIO")]
    audio: Vec<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of events.
    #[arg(long, default_value_t = 20)]
    events: usize,
    /// Seconds between consecutive event times.
    #[arg(long, default_value_t = 0.25)]
    spacing: f64,
    /// Signal-to-noise ratio of the background floor, in dB.
    #[arg(long, default_value_t = 35.0)]
    snr: f64,
    /// Total length in seconds; derived from the event schedule if omitted.
    #[arg(long)]
    duration: Option<f64>,
    /// Also write the ground truth as an events JSONL file.
    #[arg(long, value_name = "PATH")]
    truth: Option<PathBuf>,
    /// Also write the ideal integer arrival times as a detections CSV.
    #[arg(long, value_name = "PATH")]
    detections: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Reference events JSONL.
    #[arg(value_name = "A")]
    a: PathBuf,
    /// Events JSONL to compare against the reference.
    #[arg(value_name = "B")]
    b: PathBuf,
    /// Pair events by position in the file instead of by event_id.
    #[arg(long)]
    by_order: bool,
}

#[derive(Args)]
struct PlotErrorsArgs {
    /// Random court positions per noise level.
    #[arg(long, default_value_t = 10_000)]
    points: usize,
    /// Comma-separated timestamp noise levels, in samples.
    #[arg(long, default_value = "0,1,10,50")]
    sigmas: String,
}

/// What went wrong, bucketed by exit code.
enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => m,
        }
    }
}

fn from_pipeline(err: PipelineError) -> Failure {
    let text = err.to_string();
    match &err {
        PipelineError::Config(_) => Failure::Usage(text),
        PipelineError::Localize { .. } | PipelineError::Signal(_) => Failure::Numeric(text),
        PipelineError::Classify { source, .. } => from_classify_ref(source, text),
        PipelineError::Bundle(source) => from_classify_ref(source, text),
        _ => Failure::Data(text),
    }
}

fn from_classify_ref(err: &ClassifyError, text: String) -> Failure {
    match err {
        ClassifyError::Divergence { .. } => Failure::Numeric(text),
        ClassifyError::InvalidParam(_) => Failure::Usage(text),
        _ => Failure::Data(text),
    }
}

fn from_classify(err: ClassifyError) -> Failure {
    let text = err.to_string();
    from_classify_ref(&err, text)
}

fn from_localize(err: LocalizeError) -> Failure {
    let text = err.to_string();
    match err {
        LocalizeError::NoSolution { .. } | LocalizeError::SingularGeometry { .. } => {
            Failure::Numeric(text)
        }
        _ => Failure::Data(text),
    }
}

fn from_simulate(err: SimulateError) -> Failure {
    let text = err.to_string();
    match err {
        SimulateError::Localize(_) | SimulateError::Signal(_) => Failure::Numeric(text),
        _ => Failure::Usage(text),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            let benign = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            return if benign { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let config = load_config(cli.config.as_deref())?;
    let output = cli.output.as_deref();
    match cli.command {
        Command::Detect(args) => cmd_detect(&config, &args, output),
        Command::Match(args) => cmd_match(&config, &args, output),
        Command::Localize(args) => cmd_localize(&config, &args, output),
        Command::Train(args) => cmd_train(&config, &args, cli.seed, output),
        Command::Predict(args) => cmd_predict(&config, &args, output),
        Command::Run(args) => cmd_run(config, &args, cli.output.as_ref()),
        Command::Simulate(args) => cmd_simulate(&config, &args, cli.seed, output),
        Command::Eval(args) => cmd_eval(&args, output),
        Command::PlotErrors(args) => cmd_plot_errors(&config, &args, cli.seed, output),
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
    match path {
        Some(p) => PipelineConfig::load(p).map_err(from_pipeline),
        None => {
            let geometry = CourtGeometry::standard();
            let array = MicArray::default_for(&geometry);
            Ok(PipelineConfig::for_array(geometry, array))
        }
    }
}

fn resolve_input(audio: &[PathBuf], config: &PipelineConfig) -> Result<InputSpec, Failure> {
    match audio {
        [] => config.input.clone().ok_or_else(|| {
            Failure::Usage("no audio: pass file arguments or set \"input\" in the config".into())
        }),
        [one] => Ok(InputSpec::Multichannel(one.clone())),
        many => Ok(InputSpec::PerChannel(many.to_vec())),
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| Failure::Data(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn earliest_of(group: &[Detection]) -> &Detection {
    group
        .iter()
        .min_by_key(|d| (d.sample_index, d.channel))
        .expect("matched groups are nonempty")
}

fn cmd_detect(
    config: &PipelineConfig,
    args: &AudioArgs,
    output: Option<&Path>,
) -> Result<(), Failure> {
    let input = resolve_input(&args.audio, config)?;
    let block = ingest(&input, &config.array).map_err(from_pipeline)?;
    let params = config.detector.params();
    let mut all = Vec::new();
    for ch in 0..block.channels() {
        let detections = match config.detector.method {
            DetectorMethod::GaussianThreshold => detect_gaussian(ch, block.channel(ch), &params),
            DetectorMethod::Surprise => detect_surprise(ch, block.channel(ch), &params),
        }
        .map_err(|e| Failure::Data(format!("channel {ch}: {e}")))?;
        all.extend(detections);
    }
    all.sort_by_key(|d| (d.channel, d.sample_index));
    emit(output, &detections_to_csv(&all))
}

/// Splits a flat detection list into per-channel runs; channels must fit the
/// configured array.
fn per_channel_lists(
    detections: Vec<Detection>,
    channels: usize,
) -> Result<Vec<Vec<Detection>>, Failure> {
    let mut per_channel: Vec<Vec<Detection>> = vec![Vec::new(); channels];
    for d in detections {
        if d.channel >= channels {
            return Err(Failure::Data(format!(
                "detection references channel {} but the array has {channels} channels",
                d.channel
            )));
        }
        per_channel[d.channel].push(d);
    }
    for list in &mut per_channel {
        list.sort_by_key(|d| d.sample_index);
    }
    Ok(per_channel)
}

fn matched_groups(
    config: &PipelineConfig,
    detections: Vec<Detection>,
) -> Result<Vec<Vec<Detection>>, Failure> {
    let per_channel = per_channel_lists(detections, config.array.len())?;
    let spread = config.matcher.resolved_max_spread(&config.geometry, &config.array);
    Ok(match_detections(&per_channel, spread, config.matcher.min_channels))
}

fn cmd_match(
    config: &PipelineConfig,
    args: &MatchArgs,
    output: Option<&Path>,
) -> Result<(), Failure> {
    let detections = read_detections_csv(&args.detections).map_err(from_pipeline)?;
    let groups = matched_groups(config, detections)?;
    let mut text = String::new();
    for (i, group) in groups.iter().enumerate() {
        let line = serde_json::json!({ "group_id": i, "detections": group });
        text.push_str(&line.to_string());
        text.push('\n');
    }
    emit(output, &text)
}

fn read_groups(path: &Path) -> Result<Vec<Vec<Detection>>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let mut groups = Vec::new();
    for (number, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |detail: String| {
            Failure::Data(format!("{} line {}: {detail}", path.display(), number + 1))
        };
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let detections = value
            .get("detections")
            .cloned()
            .ok_or_else(|| bad("missing field detections".into()))?;
        let group: Vec<Detection> =
            serde_json::from_value(detections).map_err(|e| bad(e.to_string()))?;
        if group.is_empty() {
            return Err(bad("empty group".into()));
        }
        groups.push(group);
    }
    Ok(groups)
}

fn cmd_localize(
    config: &PipelineConfig,
    args: &LocalizeArgs,
    output: Option<&Path>,
) -> Result<(), Failure> {
    let groups = read_groups(&args.groups)?;
    let opts = config.localizer.options();
    let mut events = Vec::new();
    for group in &groups {
        let timestamps = EventGroup::from_detections(group).map_err(from_localize)?;
        let solved = localize_3d(&timestamps, &config.array, &config.geometry, &opts)
            .map_err(from_localize)?;
        let earliest = earliest_of(group);
        events.push(ClassifiedLocatedEvent {
            event_id: format!("{}-{}", earliest.channel, earliest.sample_index),
            class: ClassLabel::Racquet,
            position: Some(solved.position),
            event_time: solved.event_time,
            residual: Some(solved.residual),
            confidences: BTreeMap::new(),
            detections: group.clone(),
        });
    }
    events.sort_by(|a, b| {
        a.event_time.total_cmp(&b.event_time).then_with(|| a.event_id.cmp(&b.event_id))
    });
    emit(output, &events_to_jsonl(&events))
}

fn cmd_train(
    config: &PipelineConfig,
    args: &TrainArgs,
    seed: u64,
    output: Option<&Path>,
) -> Result<(), Failure> {
    let out = output.ok_or_else(|| {
        Failure::Usage("--output <path> is required: where to save the bundle".into())
    })?;
    let input = resolve_input(&args.audio, config)?;
    let block = ingest(&input, &config.array).map_err(from_pipeline)?;
    let labels = read_labels_csv(&args.labels).map_err(from_pipeline)?;
    let w = config.detector.window_w;
    let mut examples = Vec::new();
    let mut skipped = 0usize;
    for label in &labels {
        if label.channel >= block.channels() {
            return Err(Failure::Data(format!(
                "label references channel {} but the audio has {} channels",
                label.channel,
                block.channels()
            )));
        }
        let detection = Detection {
            channel: label.channel,
            sample_index: label.sample_index,
            score: 0.0,
            method: config.detector.method,
        };
        let stream = block.channel(label.channel);
        for kind in [FeatureKind::T1, FeatureKind::T2] {
            let feature = match kind {
                FeatureKind::T1 => extract_t1(stream, &detection, w),
                FeatureKind::T2 => extract_t2(stream, &detection, w),
            };
            match feature {
                Ok(f) => examples.push(TrainExample {
                    channel: label.channel,
                    kind,
                    values: f.values,
                    class: label.class,
                }),
                Err(ClassifyError::Boundary { .. }) => skipped += 1,
                Err(e) => return Err(from_classify(e)),
            }
        }
    }
    if examples.is_empty() {
        return Err(Failure::Data("no label lies far enough from the stream edges".into()));
    }
    let mut cfg = TrainingConfig::default();
    cfg.hyper.seed = seed;
    let (bundle, summary) = train_bundle(&examples, &cfg).map_err(from_classify)?;
    bundle.save(out).map_err(from_classify)?;
    if skipped > 0 {
        eprintln!("note: skipped {skipped} feature windows crossing a stream edge");
    }
    let report = serde_json::to_string_pretty(&summary).expect("summary serializes");
    println!("{report}");
    Ok(())
}

fn cmd_predict(
    config: &PipelineConfig,
    args: &PredictArgs,
    output: Option<&Path>,
) -> Result<(), Failure> {
    let bundle_path = args.bundle.as_ref().or(config.classifier_bundle.as_ref()).ok_or_else(
        || Failure::Usage("no bundle: pass --bundle or set \"classifier_bundle\"".into()),
    )?;
    let scorer = BundleScorer::load(bundle_path).map_err(from_pipeline)?;
    let input = resolve_input(&args.audio, config)?;
    let block = ingest(&input, &config.array).map_err(from_pipeline)?;
    let detections = read_detections_csv(&args.detections).map_err(from_pipeline)?;
    let groups = matched_groups(config, detections)?;
    let rule = scorer.fusion_rule();
    let mut labels = Vec::new();
    for group in &groups {
        let confidences = scorer.confidences(&block, group).map_err(from_classify)?;
        let class = fuse(&confidences, &rule).map_err(from_classify)?;
        let earliest = earliest_of(group);
        labels.push(LabelRecord {
            channel: earliest.channel,
            sample_index: earliest.sample_index,
            class,
        });
    }
    emit(output, &labels_to_csv(&labels))
}

fn cmd_run(
    mut config: PipelineConfig,
    args: &AudioArgs,
    output: Option<&PathBuf>,
) -> Result<(), Failure> {
    if !args.audio.is_empty() {
        config.input = Some(resolve_input(&args.audio, &config)?);
    }
    let events = run(&config).map_err(from_pipeline)?;
    let destination = output.or(config.output.as_ref()).cloned();
    emit(destination.as_deref(), &events_to_jsonl(&events))
}

fn cmd_simulate(
    config: &PipelineConfig,
    args: &SimulateArgs,
    seed: u64,
    output: Option<&Path>,
) -> Result<(), Failure> {
    let out = output.ok_or_else(|| {
        Failure::Usage("--output <path> is required: where to save the WAV".into())
    })?;
    if args.events == 0 {
        return Err(Failure::Usage("--events must be at least 1".into()));
    }
    if !(args.spacing > 0.0) {
        return Err(Failure::Usage(format!("--spacing must be positive, got {}", args.spacing)));
    }
    let duration_s = match args.duration {
        Some(d) if d > 0.0 => d,
        Some(d) => {
            return Err(Failure::Usage(format!("--duration must be positive, got {d}")));
        }
        // Last event fires at events·spacing; leave room for propagation
        // across the court and the burst tail.
        None => (args.events + 1) as f64 * args.spacing + 0.1,
    };
    let events = random_events(args.events, &config.geometry, args.spacing, seed);
    let noise = NoiseSpec { timestamp_sigma: 0.0, waveform_snr_db: Some(args.snr), seed };
    let duration = (duration_s * config.array.sample_rate).round() as usize;
    let block = courtsound::simulate::synth_waveform(&events, &config.array, duration, &noise)
        .map_err(from_simulate)?;
    write_wav(out, &block).map_err(from_pipeline)?;

    if args.truth.is_some() || args.detections.is_some() {
        let mut truth_events = Vec::new();
        let mut ideal = Vec::new();
        for event in &events {
            let group = forward_delays(event, &config.array, true).map_err(from_simulate)?;
            let (&channel, &t) = group
                .timestamps()
                .iter()
                .min_by(|a, b| (a.1, a.0).partial_cmp(&(b.1, b.0)).expect("finite delays"))
                .expect("arrays are nonempty");
            // Same id convention as the analysis stages, so eval can align
            // recovered events with the truth.
            truth_events.push(ClassifiedLocatedEvent {
                event_id: format!("{}-{}", channel, t as u64),
                class: event.surface,
                position: Some(event.position),
                event_time: event.time,
                residual: None,
                confidences: BTreeMap::new(),
                detections: Vec::new(),
            });
            for (&ch, &arrival) in group.timestamps() {
                ideal.push(Detection {
                    channel: ch,
                    sample_index: arrival as u64,
                    score: event.amplitude,
                    method: DetectorMethod::GaussianThreshold,
                });
            }
        }
        if let Some(path) = &args.truth {
            emit(Some(path), &events_to_jsonl(&truth_events))?;
        }
        if let Some(path) = &args.detections {
            ideal.sort_by_key(|d| (d.channel, d.sample_index));
            emit(Some(path), &detections_to_csv(&ideal))?;
        }
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs, output: Option<&Path>) -> Result<(), Failure> {
    let mut a = read_events_jsonl(&args.a).map_err(from_pipeline)?;
    let mut b = read_events_jsonl(&args.b).map_err(from_pipeline)?;
    if args.by_order {
        for (i, event) in a.iter_mut().enumerate() {
            event.event_id = i.to_string();
        }
        for (i, event) in b.iter_mut().enumerate() {
            event.event_id = i.to_string();
        }
    }
    let delta = compare_localizations(&a, &b).map_err(from_pipeline)?;
    let line = serde_json::json!({
        "mean_distance_m": sig9(delta.mean_distance),
        "std_distance_m": sig9(delta.std_distance),
        "count": delta.count,
    });
    emit(output, &format!("{line}\n"))
}

fn cmd_plot_errors(
    config: &PipelineConfig,
    args: &PlotErrorsArgs,
    seed: u64,
    output: Option<&Path>,
) -> Result<(), Failure> {
    let mut sigmas = Vec::new();
    for part in args.sigmas.split(',') {
        let sigma: f64 = part
            .trim()
            .parse()
            .map_err(|e| Failure::Usage(format!("--sigmas: {:?}: {e}", part.trim())))?;
        sigmas.push(sigma);
    }
    let table = error_experiment(args.points, &sigmas, &config.array, &config.geometry, seed)
        .map_err(from_simulate)?;
    emit(output, &table.to_delimited())
}
