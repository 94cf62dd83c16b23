use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sparsedet::annotations::{
    load_class_values, load_cooccurrence_pairs, load_detections, load_ground_truth,
    load_proposals, load_verifications, occurrence_counts, read_detections,
    write_detections, CooccurrenceTable, DetectionFormat, LoadOptions, Loaded,
};
use sparsedet::assignment::{read_supervision_jsonl, write_supervision_jsonl};
use sparsedet::ensemble::{plan_expert_subsets, write_weight_table_csv};
use sparsedet::evaluation::{
    parse_rank_range, rank_range_means, summary_line, write_rank_ranges_csv, write_report_csv,
};
use sparsedet::pipeline::{
    cooccurrence_ablation, load_runs, run_manifest_to_dir, write_synthetic_dataset, Manifest,
    PipelineInputs,
};
use sparsedet::suppression::suppress_classwise;
use sparsedet::synth::{generate_synthetic_scene, SynthConfig};
use sparsedet::{
    assign_targets, build_weight_table, evaluate, fuse, sigmoid_ce, sigmoid_ce_grad,
    AssignmentConfig, ClassHierarchy, ClassId, EvalConfig, GroundTruthBox, Matrix, Reduction,
    SuppressionMethod, UnverifiedPolicy,
};

/// Output directory override for `pipeline` when `--out` is not given.
const OUTPUT_DIR_ENV: &str = "SPARSEDET_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "sparsedet", version, about = "Detection post-processing for sparsely verified labels")]
struct Cli {
    /// Skip malformed input rows (reported on stderr) instead of failing.
    #[arg(long, global = true)]
    lenient: bool,

    /// Cap on worker threads; defaults to all cores.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-(proposal, class) training targets as JSON lines.
    AssignTargets(AssignArgs),
    /// Masked sigmoid cross-entropy of a logit matrix against targets.
    Loss(LossArgs),
    /// NMS or NMW per (image, class); reads stdin, writes stdout by default.
    Suppress(SuppressArgs),
    /// Weight and fuse the runs of a manifest.
    Ensemble(EnsembleArgs),
    /// Per-class AP and mAP.
    Evaluate(EvaluateArgs),
    /// Split an occurrence-rank range into expert class subsets.
    PlanExperts(PlanArgs),
    /// Fuse, evaluate and write the fixed output layout.
    Pipeline(PipelineArgs),
    /// Write a seeded synthetic dataset with model runs and a manifest.
    Synth(SynthArgs),
    /// Baseline vs co-occurrence AP tables on a synthetic scene.
    Ablation(AblationArgs),
}

#[derive(Args)]
struct HierarchyArg {
    /// Class hierarchy: nested JSON (`.json`) or child,parent edge CSV.
    #[arg(long, value_name = "FILE")]
    hierarchy: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Negative,
    Ignore,
}

#[derive(Args)]
struct AssignArgs {
    #[command(flatten)]
    hierarchy: HierarchyArg,
    #[arg(long, value_name = "FILE")]
    gt: PathBuf,
    #[arg(long, value_name = "FILE")]
    verifications: PathBuf,
    /// ImageID,XMin,XMax,YMin,YMax rows.
    #[arg(long, value_name = "FILE")]
    proposals: PathBuf,
    /// SubjectLabelName,PartLabelName rows.
    #[arg(long, value_name = "FILE")]
    pairs: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pos_iou_threshold: f64,
    #[arg(long, default_value_t = 0.9)]
    containment_threshold: f64,
    #[arg(long, value_enum, default_value = "negative")]
    unverified_policy: Policy,
    /// Output file; stdout when omitted.
    #[arg(short, long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReductionArg {
    Sum,
    Mean,
}

#[derive(Args)]
struct LossArgs {
    #[command(flatten)]
    hierarchy: HierarchyArg,
    /// Targets written by `assign-targets`.
    #[arg(long, value_name = "FILE")]
    supervision: PathBuf,
    /// CSV with one column per label name, one row per proposal.
    #[arg(long, value_name = "FILE")]
    logits: PathBuf,
    #[arg(long, value_enum, default_value = "sum")]
    reduction: ReductionArg,
    /// Also write the gradient matrix as CSV.
    #[arg(long, value_name = "FILE")]
    grad_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

impl From<Format> for DetectionFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => DetectionFormat::Csv,
            Format::Jsonl => DetectionFormat::JsonLines,
        }
    }
}

#[derive(Args)]
struct SuppressArgs {
    #[command(flatten)]
    hierarchy: HierarchyArg,
    #[arg(long, default_value = "nmw")]
    method: SuppressionMethod,
    #[arg(long, default_value_t = 0.5)]
    iou_threshold: f64,
    #[arg(short, long, value_name = "FILE")]
    input: Option<PathBuf>,
    #[arg(short, long, value_name = "FILE")]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args)]
struct EnsembleArgs {
    #[command(flatten)]
    hierarchy: HierarchyArg,
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    #[arg(short, long, value_name = "FILE")]
    output: Option<PathBuf>,
    /// Write the per-(run, class) weight table here.
    #[arg(long, value_name = "FILE")]
    weights_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalFlags {
    #[arg(long, default_value_t = 0.5)]
    iou_threshold: f64,
    /// Do not credit ancestor classes with a box's ground truth.
    #[arg(long)]
    no_expand_gt: bool,
    /// Credit ancestor classes with each detection.
    #[arg(long)]
    expand_detections: bool,
    /// Exclude group-of boxes and detections that only hit them.
    #[arg(long)]
    ignore_group_of: bool,
}

impl EvalFlags {
    fn config(&self) -> EvalConfig {
        EvalConfig {
            iou_threshold: self.iou_threshold,
            expand_gt: !self.no_expand_gt,
            expand_detections: self.expand_detections,
            ignore_group_of: self.ignore_group_of,
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    hierarchy: HierarchyArg,
    #[arg(long, value_name = "FILE")]
    gt: PathBuf,
    #[arg(long, value_name = "FILE")]
    verifications: PathBuf,
    #[arg(long, value_name = "FILE")]
    detections: PathBuf,
    #[command(flatten)]
    flags: EvalFlags,
    /// Comma-separated occurrence-rank ranges, e.g. `1-10,11-100`.
    #[arg(long, value_name = "RANGES", value_delimiter = ',')]
    rank_ranges: Vec<String>,
    /// LabelName,Count occurrence table; derived from --gt when omitted.
    #[arg(long, value_name = "FILE")]
    occurrence: Option<PathBuf>,
    /// Per-class report CSV; stdout when omitted.
    #[arg(short, long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    hierarchy: HierarchyArg,
    #[arg(long, value_name = "FILE", required_unless_present = "occurrence")]
    gt: Option<PathBuf>,
    #[arg(long, value_name = "FILE", conflicts_with = "gt")]
    occurrence: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    subset_size: usize,
    /// Rank range, e.g. `11-100`.
    #[arg(long)]
    ranks: String,
    #[arg(short, long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    hierarchy: HierarchyArg,
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    #[arg(long, value_name = "FILE")]
    gt: PathBuf,
    #[arg(long, value_name = "FILE")]
    verifications: PathBuf,
    #[command(flatten)]
    flags: EvalFlags,
    /// Output directory; falls back to $SPARSEDET_OUTPUT_DIR, then `out`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SceneArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    images: usize,
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long, default_value_t = 0.5)]
    sparsity: f64,
    #[arg(long, default_value_t = 0.0)]
    class_skew: f64,
    #[arg(long, default_value_t = 2)]
    pairs: usize,
}

impl SceneArgs {
    fn config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            num_images: self.images,
            num_classes: self.classes,
            hierarchy_depth: self.depth,
            sparsity: self.sparsity,
            class_skew: self.class_skew,
            num_pairs: self.pairs,
            part_probability: if self.pairs > 0 { 0.8 } else { 0.0 },
            ..SynthConfig::default()
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    scene: SceneArgs,
    /// Suppression method recorded in the manifest.
    #[arg(long, default_value = "nmw")]
    method: SuppressionMethod,
}

#[derive(Args)]
struct AblationArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long, default_value_t = 0.9)]
    containment_threshold: f64,
    /// Comma-separated occurrence-rank ranges, e.g. `1-4,5-8`.
    #[arg(long, value_name = "RANGES", value_delimiter = ',')]
    rank_ranges: Vec<String>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(sparsedet::Error),
}

impl From<sparsedet::Error> for Failure {
    fn from(e: sparsedet::Error) -> Self {
        Failure::Data(e)
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn io_err(path: &Path, e: io::Error) -> Failure {
    Failure::Data(sparsedet::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) if p != Path::new("-") => {
            Box::new(BufWriter::new(File::create(p).map_err(|e| io_err(p, e))?))
        }
        _ => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn flush(mut w: Box<dyn Write>, path: Option<&Path>) -> CliResult {
    w.flush()
        .map_err(|e| io_err(path.unwrap_or(Path::new("<stdout>")), e))
}

fn opts(lenient: bool) -> LoadOptions<'static> {
    if lenient {
        LoadOptions::lenient()
    } else {
        LoadOptions::strict()
    }
}

fn report_skipped<T>(what: &str, loaded: &Loaded<T>) {
    for s in &loaded.skipped {
        eprintln!("warning: {what}: skipped line {}: {}", s.line, s.error);
    }
}

fn load_hierarchy(arg: &HierarchyArg) -> CliResult<ClassHierarchy> {
    Ok(ClassHierarchy::load(&arg.hierarchy)?)
}

fn ranges(specs: &[String]) -> CliResult<Vec<(usize, usize)>> {
    specs
        .iter()
        .map(|s| parse_rank_range(s).map_err(|e| Failure::Usage(e.to_string())))
        .collect()
}

fn assign(args: &AssignArgs, lenient: bool) -> CliResult {
    let h = load_hierarchy(&args.hierarchy)?;
    let gts = load_ground_truth(&args.gt, &h, opts(lenient))?;
    report_skipped("ground truth", &gts);
    let verifs = load_verifications(&args.verifications, &h, opts(lenient))?;
    report_skipped("verifications", &verifs);
    let proposals = load_proposals(&args.proposals, opts(lenient))?;
    report_skipped("proposals", &proposals);
    let pairs = match &args.pairs {
        Some(p) => {
            let loaded = load_cooccurrence_pairs(p, &h, opts(lenient))?;
            report_skipped("pairs", &loaded);
            loaded.records
        }
        None => CooccurrenceTable::default(),
    };
    let config = AssignmentConfig {
        pos_iou_threshold: args.pos_iou_threshold,
        containment_threshold: args.containment_threshold,
        unverified_policy: match args.unverified_policy {
            Policy::Negative => UnverifiedPolicy::Negative,
            Policy::Ignore => UnverifiedPolicy::Ignore,
        },
    };

    let mut by_image: Vec<(String, Vec<sparsedet::BBox>)> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    for (image, b) in proposals.records {
        let i = *slot.entry(image.clone()).or_insert_with(|| {
            by_image.push((image, Vec::new()));
            by_image.len() - 1
        });
        by_image[i].1.push(b);
    }
    let mut gts_by_image: HashMap<&str, Vec<GroundTruthBox>> = HashMap::new();
    for g in &gts.records {
        gts_by_image.entry(g.image_id.as_str()).or_default().push(g.clone());
    }

    let mut w = output(args.output.as_deref())?;
    for (image, boxes) in &by_image {
        let image_gts = gts_by_image.get(image.as_str()).map_or(&[][..], Vec::as_slice);
        let m = assign_targets(
            boxes,
            image_gts,
            verifs.records.get(image),
            &h,
            &pairs,
            &config,
        )?;
        write_supervision_jsonl(&mut w, image, &m)?;
    }
    flush(w, args.output.as_deref())
}

fn loss(args: &LossArgs) -> CliResult {
    let h = load_hierarchy(&args.hierarchy)?;
    let file = File::open(&args.supervision).map_err(|e| io_err(&args.supervision, e))?;
    let (_, sup) = read_supervision_jsonl(
        BufReader::new(file),
        &args.supervision.display().to_string(),
        h.len(),
    )?;
    let logits = read_logits(&args.logits, &h, sup.num_proposals())?;
    let reduction = match args.reduction {
        ReductionArg::Sum => Reduction::Sum,
        ReductionArg::Mean => Reduction::MeanSupervised,
    };
    let out = sigmoid_ce(&logits, &sup, reduction)?;
    println!("loss,{}", out.total);
    println!("supervised_entries,{}", out.supervised_entries);
    if let Some(path) = &args.grad_out {
        let grad = sigmoid_ce_grad(&logits, &sup, reduction)?;
        write_matrix(path, &grad, &h)?;
    }
    Ok(())
}

fn read_logits(path: &Path, h: &ClassHierarchy, rows: usize) -> CliResult<Matrix<f64>> {
    let source = path.display().to_string();
    let bad = |line: u64, msg: String| {
        Failure::Data(sparsedet::Error::Parse {
            source_name: source.clone(),
            line,
            message: msg,
        })
    };
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let header = reader.headers().map_err(|e| bad(1, e.to_string()))?.clone();
    let cols: Vec<ClassId> = header
        .iter()
        .map(|name| h.id(name.trim()))
        .collect::<sparsedet::Result<_>>()?;
    let distinct: BTreeSet<ClassId> = cols.iter().copied().collect();
    if distinct.len() != h.len() || cols.len() != h.len() {
        return Err(bad(1, format!("header must name each of the {} classes once", h.len())));
    }
    let mut m = Matrix::filled(rows, h.len(), 0.0);
    let mut n = 0;
    for (i, rec) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| bad(line, e.to_string()))?;
        if i >= rows {
            return Err(bad(line, format!("more logit rows than the {rows} proposals")));
        }
        if rec.len() != cols.len() {
            return Err(bad(line, format!("expected {} values, got {}", cols.len(), rec.len())));
        }
        for (c, v) in cols.iter().zip(rec.iter()) {
            *m.get_mut(i, c.index()) = v
                .trim()
                .parse()
                .map_err(|_| bad(line, format!("`{v}` is not a number")))?;
        }
        n += 1;
    }
    if n != rows {
        return Err(Failure::Data(sparsedet::Error::ShapeMismatch {
            expected: (rows, h.len()),
            actual: (n, h.len()),
        }));
    }
    Ok(m)
}

fn write_matrix(path: &Path, m: &Matrix<f64>, h: &ClassHierarchy) -> CliResult {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let data_err = |e: csv::Error| Failure::Data(e.into());
    w.write_record(h.names()).map_err(data_err)?;
    for r in 0..m.rows() {
        w.write_record(m.row(r).iter().map(|v| format!("{v}")))
            .map_err(data_err)?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn suppress(args: &SuppressArgs, lenient: bool) -> CliResult {
    let h = load_hierarchy(&args.hierarchy)?;
    let format = DetectionFormat::from(args.format);
    let loaded = match args.input.as_deref() {
        Some(p) if p != Path::new("-") => {
            let l = load_detections(p, &h, opts(lenient))?;
            report_skipped(&p.display().to_string(), &l);
            l.records
        }
        _ => {
            let mut buf = Vec::new();
            io::stdin()
                .read_to_end(&mut buf)
                .map_err(|e| io_err(Path::new("<stdin>"), e))?;
            let l = read_detections(&buf[..], format, "<stdin>", &h, opts(lenient))?;
            report_skipped("<stdin>", &l);
            l.records
        }
    };
    let out = suppress_classwise(&loaded, args.method, args.iou_threshold)?;
    let mut w = output(args.output.as_deref())?;
    write_detections(&mut w, format, &out, &h)?;
    flush(w, args.output.as_deref())
}

fn ensemble(args: &EnsembleArgs, lenient: bool) -> CliResult {
    let h = load_hierarchy(&args.hierarchy)?;
    let (manifest, _) = Manifest::load(&args.manifest)?;
    let base = args.manifest.parent().unwrap_or(Path::new(""));
    let (runs, warnings) = load_runs(&manifest, base, &h, opts(lenient))?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    let table = build_weight_table(&runs, manifest.alpha)?;
    if let Some(p) = &args.weights_out {
        let file = File::create(p).map_err(|e| io_err(p, e))?;
        write_weight_table_csv(file, &table, &h)?;
    }
    let fused = fuse(&runs, &table, manifest.method, manifest.iou_threshold)?;
    let mut w = output(args.output.as_deref())?;
    write_detections(&mut w, DetectionFormat::Csv, &fused, &h)?;
    flush(w, args.output.as_deref())
}

fn occurrence(
    path: Option<&Path>,
    gts: &[GroundTruthBox],
    h: &ClassHierarchy,
) -> CliResult<HashMap<ClassId, u64>> {
    match path {
        None => Ok(occurrence_counts(gts)),
        Some(p) => load_class_values(p, "Count", h)?
            .into_iter()
            .map(|(c, v)| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok((c, v as u64))
                } else {
                    Err(Failure::Data(sparsedet::Error::Domain(format!(
                        "count {v} for `{}` is not a non-negative integer",
                        h.name(c)
                    ))))
                }
            })
            .collect(),
    }
}

fn evaluate_cmd(args: &EvaluateArgs, lenient: bool) -> CliResult {
    let ranges = ranges(&args.rank_ranges)?;
    let h = load_hierarchy(&args.hierarchy)?;
    let gts = load_ground_truth(&args.gt, &h, opts(lenient))?;
    report_skipped("ground truth", &gts);
    let verifs = load_verifications(&args.verifications, &h, opts(lenient))?;
    report_skipped("verifications", &verifs);
    let dets = load_detections(&args.detections, &h, opts(lenient))?;
    report_skipped("detections", &dets);

    let report = evaluate(&dets.records, &gts.records, &verifs.records, &h, &args.flags.config())?;
    let mut w = output(args.output.as_deref())?;
    write_report_csv(&mut w, &report, &h)?;
    flush(w, args.output.as_deref())?;
    if args.output.is_some() {
        println!("{}", summary_line(&report));
    } else {
        eprintln!("{}", summary_line(&report));
    }
    if !ranges.is_empty() {
        let occ = occurrence(args.occurrence.as_deref(), &gts.records, &h)?;
        let means = rank_range_means(&report, &occ, &ranges)?;
        let target: Box<dyn Write> = if args.output.is_some() {
            Box::new(io::stdout().lock())
        } else {
            Box::new(io::stderr().lock())
        };
        write_rank_ranges_csv(target, &means)?;
    }
    Ok(())
}

fn plan(args: &PlanArgs, lenient: bool) -> CliResult {
    let (lo, hi) = parse_rank_range(&args.ranks).map_err(|e| Failure::Usage(e.to_string()))?;
    let h = load_hierarchy(&args.hierarchy)?;
    let gts = match &args.gt {
        Some(p) => {
            let l = load_ground_truth(p, &h, opts(lenient))?;
            report_skipped("ground truth", &l);
            l.records
        }
        None => Vec::new(),
    };
    let occ = occurrence(args.occurrence.as_deref(), &gts, &h)?;
    let subsets = plan_expert_subsets(&occ, args.subset_size, lo, hi)?;
    let mut w = output(args.output.as_deref())?;
    {
        let mut csv = csv::Writer::from_writer(&mut w);
        let data_err = |e: csv::Error| Failure::Data(e.into());
        csv.write_record(["Subset", "LabelName", "Count"]).map_err(data_err)?;
        for (i, s) in subsets.iter().enumerate() {
            for c in s {
                csv.write_record([
                    (i + 1).to_string(),
                    h.name(*c).to_string(),
                    occ.get(c).copied().unwrap_or(0).to_string(),
                ])
                .map_err(data_err)?;
            }
        }
        csv.flush()
            .map_err(|e| io_err(Path::new("<output>"), e))?;
    }
    flush(w, args.output.as_deref())
}

fn pipeline(args: &PipelineArgs, lenient: bool) -> CliResult {
    let h = load_hierarchy(&args.hierarchy)?;
    let gts = load_ground_truth(&args.gt, &h, opts(lenient))?;
    report_skipped("ground truth", &gts);
    let verifs = load_verifications(&args.verifications, &h, opts(lenient))?;
    report_skipped("verifications", &verifs);
    let out = args
        .out
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let label = |p: &Path| p.file_name().map_or_else(|| p.display().to_string(), |f| f.to_string_lossy().into_owned());
    let inputs = PipelineInputs {
        manifest_path: &args.manifest,
        gts: &gts.records,
        verifications: &verifs.records,
        hierarchy: &h,
        eval_config: args.flags.config(),
        extra_inputs: vec![
            (label(&args.hierarchy.hierarchy), args.hierarchy.hierarchy.clone()),
            (label(&args.gt), args.gt.clone()),
            (label(&args.verifications), args.verifications.clone()),
        ],
        lenient,
    };
    let (output, warnings) = run_manifest_to_dir(&inputs, &out)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    println!("{}", summary_line(&output.report));
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn synth(args: &SynthArgs) -> CliResult {
    let scene = generate_synthetic_scene(&args.scene.config())?;
    let manifest = write_synthetic_dataset(&args.out, &scene, &EvalConfig::default(), args.method)?;
    eprintln!(
        "wrote {} images, {} classes, {} runs to {}",
        scene.image_ids().len(),
        scene.hierarchy.len(),
        manifest.runs.len(),
        args.out.display()
    );
    Ok(())
}

fn ablation(args: &AblationArgs) -> CliResult {
    let ranges = ranges(&args.rank_ranges)?;
    let scene = generate_synthetic_scene(&args.scene.config())?;
    let report = cooccurrence_ablation(
        &scene,
        0,
        args.containment_threshold,
        &ranges,
        &EvalConfig::default(),
    )?;
    print!("{}", report.class_table(&scene.hierarchy));
    if !ranges.is_empty() {
        println!();
        print!("{}", report.rank_table());
    }
    eprintln!("removed {} detections for the baseline", report.removed_detections);
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    match &cli.command {
        Command::AssignTargets(a) => assign(a, cli.lenient),
        Command::Loss(a) => loss(a),
        Command::Suppress(a) => suppress(a, cli.lenient),
        Command::Ensemble(a) => ensemble(a, cli.lenient),
        Command::Evaluate(a) => evaluate_cmd(a, cli.lenient),
        Command::PlanExperts(a) => plan(a, cli.lenient),
        Command::Pipeline(a) => pipeline(a, cli.lenient),
        Command::Synth(a) => synth(a),
        Command::Ablation(a) => ablation(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
