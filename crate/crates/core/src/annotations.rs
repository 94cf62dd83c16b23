//! Readers and writers for the challenge CSV layouts: ground truth boxes,
//! image-level verification labels, detections, co-occurrence pairs and a few
//! small per-class tables.
//!
//! Ground truth and detection files store normalized coordinates in the column
//! order `XMin, XMax, YMin, YMax`. Loaders keep coordinates as given unless
//! image sizes are supplied.
//!
//! Parsing is strict by default: the first bad row aborts the load. With
//! [`LoadOptions::lenient`] bad rows are skipped and reported in
//! [`Loaded::skipped`], so `parsed_rows + skipped.len() == rows` always holds.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::hierarchy::{ClassHierarchy, ClassId};

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthBox {
    pub image_id: String,
    pub class: ClassId,
    pub bbox: BBox,
    pub is_group_of: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: String,
    pub class: ClassId,
    pub score: f64,
    pub bbox: BBox,
    /// Name of the model run that produced the detection, when known.
    pub source: Option<String>,
}

impl Detection {
    pub fn new(image_id: impl Into<String>, class: ClassId, score: f64, bbox: BBox) -> Self {
        Detection {
            image_id: image_id.into(),
            class,
            score,
            bbox,
            source: None,
        }
    }
}

/// Image-level verified labels for one image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageVerification {
    pub verified_positive: BTreeSet<ClassId>,
    pub verified_negative: BTreeSet<ClassId>,
}

impl ImageVerification {
    pub fn is_verified(&self, c: ClassId) -> bool {
        self.verified_positive.contains(&c) || self.verified_negative.contains(&c)
    }

    /// Adds a label, rejecting one that contradicts an earlier label.
    /// Returns `false` on conflict and leaves the sets unchanged.
    pub fn insert(&mut self, c: ClassId, positive: bool) -> bool {
        let (mine, other) = if positive {
            (&mut self.verified_positive, &self.verified_negative)
        } else {
            (&mut self.verified_negative, &self.verified_positive)
        };
        if other.contains(&c) {
            return false;
        }
        mine.insert(c);
        true
    }
}

/// Verification labels for a whole dataset. Images without rows have empty
/// verification sets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Verifications {
    by_image: HashMap<String, ImageVerification>,
}

static EMPTY_VERIFICATION: std::sync::LazyLock<ImageVerification> =
    std::sync::LazyLock::new(ImageVerification::default);

impl Verifications {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, image_id: &str) -> &ImageVerification {
        self.by_image.get(image_id).unwrap_or(&EMPTY_VERIFICATION)
    }

    pub fn entry(&mut self, image_id: &str) -> &mut ImageVerification {
        self.by_image.entry(image_id.to_string()).or_default()
    }

    pub fn is_verified(&self, image_id: &str, c: ClassId) -> bool {
        self.by_image
            .get(image_id)
            .is_some_and(|v| v.is_verified(c))
    }

    /// Image ids with at least one label, sorted.
    pub fn image_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.by_image.keys().map(String::as_str).collect();
        ids.sort_unstable();
        ids
    }

    pub fn len(&self) -> usize {
        self.by_image.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_image.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CooccurrencePair {
    pub subject: ClassId,
    pub part: ClassId,
}

impl CooccurrencePair {
    pub fn new(subject: ClassId, part: ClassId) -> Result<Self> {
        if subject == part {
            return Err(Error::SelfPair(subject.to_string()));
        }
        Ok(CooccurrencePair { subject, part })
    }
}

/// Deduplicated set of co-occurrence pairs with per-subject lookup.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CooccurrenceTable {
    pairs: Vec<CooccurrencePair>,
    parts_by_subject: HashMap<ClassId, Vec<ClassId>>,
}

impl CooccurrenceTable {
    pub fn new(pairs: impl IntoIterator<Item = CooccurrencePair>) -> Self {
        let mut table = CooccurrenceTable::default();
        for p in pairs {
            table.insert(p);
        }
        table
    }

    /// Returns `false` if the pair was already present.
    pub fn insert(&mut self, pair: CooccurrencePair) -> bool {
        let parts = self.parts_by_subject.entry(pair.subject).or_default();
        if parts.contains(&pair.part) {
            return false;
        }
        parts.push(pair.part);
        self.pairs.push(pair);
        true
    }

    pub fn contains(&self, subject: ClassId, part: ClassId) -> bool {
        self.parts(subject).contains(&part)
    }

    pub fn parts(&self, subject: ClassId) -> &[ClassId] {
        self.parts_by_subject
            .get(&subject)
            .map_or(&[], Vec::as_slice)
    }

    pub fn pairs(&self) -> &[CooccurrencePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Image width and height used to de-normalize coordinates.
pub type ImageSizes = HashMap<String, (f64, f64)>;

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions<'a> {
    pub lenient: bool,
    pub image_sizes: Option<&'a ImageSizes>,
}

impl LoadOptions<'_> {
    pub fn strict() -> Self {
        Self::default()
    }

    pub fn lenient() -> Self {
        LoadOptions {
            lenient: true,
            image_sizes: None,
        }
    }
}

/// A row that was skipped in lenient mode.
#[derive(Debug)]
pub struct RowError {
    pub line: u64,
    pub error: Error,
}

#[derive(Debug)]
pub struct Loaded<T> {
    pub records: T,
    /// Number of data rows in the input (header excluded).
    pub rows: usize,
    /// Rows that parsed successfully, including ones later collapsed as
    /// duplicates.
    pub parsed_rows: usize,
    pub skipped: Vec<RowError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionFormat {
    Csv,
    JsonLines,
}

impl DetectionFormat {
    /// `.jsonl` / `.ndjson` select JSON-lines, everything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("jsonl") || e.eq_ignore_ascii_case("ndjson") => {
                DetectionFormat::JsonLines
            }
            _ => DetectionFormat::Csv,
        }
    }
}

pub const GROUND_TRUTH_COLUMNS: [&str; 7] =
    ["ImageID", "LabelName", "XMin", "XMax", "YMin", "YMax", "IsGroupOf"];
pub const VERIFICATION_COLUMNS: [&str; 3] = ["ImageID", "LabelName", "Confidence"];
pub const DETECTION_COLUMNS: [&str; 7] =
    ["ImageID", "LabelName", "Score", "XMin", "XMax", "YMin", "YMax"];
pub const PAIR_COLUMNS: [&str; 2] = ["SubjectLabelName", "PartLabelName"];
pub const PROPOSAL_COLUMNS: [&str; 5] = ["ImageID", "XMin", "XMax", "YMin", "YMax"];

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn source_name(path: &Path) -> String {
    path.display().to_string()
}

/// Header-indexed CSV row access.
struct Row<'r> {
    record: &'r csv::StringRecord,
    columns: &'r [usize],
    optional: &'r [Option<usize>],
    source: &'r str,
    line: u64,
}

impl Row<'_> {
    fn field(&self, i: usize) -> Result<&str> {
        self.record
            .get(self.columns[i])
            .ok_or_else(|| Error::parse(self.source, self.line, "row has too few fields"))
    }

    fn optional(&self, i: usize) -> Option<&str> {
        self.optional[i]
            .and_then(|c| self.record.get(c))
            .filter(|s| !s.is_empty())
    }

    fn number(&self, i: usize, name: &str) -> Result<f64> {
        let raw = self.field(i)?;
        let v: f64 = raw.parse().map_err(|_| {
            Error::parse(self.source, self.line, format!("{name}: `{raw}` is not a number"))
        })?;
        if !v.is_finite() {
            return Err(Error::parse(
                self.source,
                self.line,
                format!("{name}: `{raw}` is not finite"),
            ));
        }
        Ok(v)
    }

    fn class(&self, i: usize, hierarchy: &ClassHierarchy) -> Result<ClassId> {
        hierarchy.id(self.field(i)?)
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::parse(self.source, self.line, message)
    }
}

/// Drives a headed CSV through `parse`, applying the strict/lenient policy.
fn read_rows<R, F>(
    reader: R,
    source: &str,
    required: &[&str],
    optional: &[&str],
    lenient: bool,
    mut parse: F,
) -> Result<(usize, usize, Vec<RowError>)>
where
    R: Read,
    F: FnMut(&Row<'_>) -> Result<()>,
{
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(source, 1, e.to_string()))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let columns = required
        .iter()
        .map(|name| find(name).ok_or_else(|| Error::parse(source, 1, format!("missing column `{name}`"))))
        .collect::<Result<Vec<_>>>()?;
    let optional: Vec<Option<usize>> = optional.iter().map(|n| find(n)).collect();

    let mut rows = 0;
    let mut parsed = 0;
    let mut skipped = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let line_hint = rdr.position().line();
        let outcome = match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                let line = record.position().map_or(line_hint, |p| p.line());
                let row = Row {
                    record: &record,
                    columns: &columns,
                    optional: &optional,
                    source,
                    line,
                };
                parse(&row).map_err(|e| (line, e))
            }
            Err(e) => Err((line_hint, Error::parse(source, line_hint, e.to_string()))),
        };
        rows += 1;
        match outcome {
            Ok(()) => parsed += 1,
            Err((line, error)) if lenient => skipped.push(RowError { line, error }),
            Err((_, error)) => return Err(error),
        }
    }
    Ok((rows, parsed, skipped))
}

fn boxed(row: &Row<'_>, first: usize) -> Result<(f64, f64, f64, f64)> {
    let x_min = row.number(first, "XMin")?;
    let x_max = row.number(first + 1, "XMax")?;
    let y_min = row.number(first + 2, "YMin")?;
    let y_max = row.number(first + 3, "YMax")?;
    if x_min > x_max {
        return Err(row.err(format!("XMin {x_min} > XMax {x_max}")));
    }
    if y_min > y_max {
        return Err(row.err(format!("YMin {y_min} > YMax {y_max}")));
    }
    Ok((x_min, x_max, y_min, y_max))
}

fn to_bbox(
    row: &Row<'_>,
    image_id: &str,
    (x_min, x_max, y_min, y_max): (f64, f64, f64, f64),
    sizes: Option<&ImageSizes>,
) -> Result<BBox> {
    let (sx, sy) = match sizes {
        Some(sizes) => *sizes
            .get(image_id)
            .ok_or_else(|| row.err(format!("no image size for `{image_id}`")))?,
        None => (1.0, 1.0),
    };
    Ok(BBox {
        x_min: x_min * sx,
        y_min: y_min * sy,
        x_max: x_max * sx,
        y_max: y_max * sy,
    })
}

fn parse_flag(row: &Row<'_>, raw: &str, name: &str) -> Result<bool> {
    match raw {
        "1" | "1.0" | "true" | "True" => Ok(true),
        "0" | "0.0" | "false" | "False" | "" => Ok(false),
        "-1" => Ok(false),
        _ => Err(row.err(format!("{name}: `{raw}` is not a 0/1 flag"))),
    }
}

pub fn read_ground_truth<R: Read>(
    reader: R,
    source: &str,
    hierarchy: &ClassHierarchy,
    opts: LoadOptions<'_>,
) -> Result<Loaded<Vec<GroundTruthBox>>> {
    let mut out = Vec::new();
    let (rows, parsed_rows, skipped) = read_rows(
        reader,
        source,
        &GROUND_TRUTH_COLUMNS[..6],
        &["IsGroupOf"],
        opts.lenient,
        |row| {
            let image_id = row.field(0)?.to_string();
            let class = row.class(1, hierarchy)?;
            let coords = boxed(row, 2)?;
            let bbox = to_bbox(row, &image_id, coords, opts.image_sizes)?;
            let is_group_of = match row.optional(0) {
                Some(raw) => parse_flag(row, raw, "IsGroupOf")?,
                None => false,
            };
            out.push(GroundTruthBox {
                image_id,
                class,
                bbox,
                is_group_of,
            });
            Ok(())
        },
    )?;
    Ok(Loaded {
        records: out,
        rows,
        parsed_rows,
        skipped,
    })
}

pub fn load_ground_truth(
    path: impl AsRef<Path>,
    hierarchy: &ClassHierarchy,
    opts: LoadOptions<'_>,
) -> Result<Loaded<Vec<GroundTruthBox>>> {
    let path = path.as_ref();
    read_ground_truth(open(path)?, &source_name(path), hierarchy, opts)
}

pub fn read_verifications<R: Read>(
    reader: R,
    source: &str,
    hierarchy: &ClassHierarchy,
    opts: LoadOptions<'_>,
) -> Result<Loaded<Verifications>> {
    let mut out = Verifications::new();
    let (rows, parsed_rows, skipped) = read_rows(
        reader,
        source,
        &VERIFICATION_COLUMNS,
        &[],
        opts.lenient,
        |row| {
            let image_id = row.field(0)?;
            let class = row.class(1, hierarchy)?;
            let raw = row.field(2)?;
            let positive = match raw.parse::<f64>() {
                Ok(1.0) => true,
                Ok(0.0) => false,
                _ => return Err(row.err(format!("Confidence: `{raw}` is not 0 or 1"))),
            };
            if !out.entry(image_id).insert(class, positive) {
                return Err(Error::Conflict {
                    image_id: image_id.to_string(),
                    class: hierarchy.name(class).to_string(),
                });
            }
            Ok(())
        },
    )?;
    Ok(Loaded {
        records: out,
        rows,
        parsed_rows,
        skipped,
    })
}

pub fn load_verifications(
    path: impl AsRef<Path>,
    hierarchy: &ClassHierarchy,
    opts: LoadOptions<'_>,
) -> Result<Loaded<Verifications>> {
    let path = path.as_ref();
    read_verifications(open(path)?, &source_name(path), hierarchy, opts)
}

fn detection_from_parts(
    row: &Row<'_>,
    image_id: String,
    class: ClassId,
    score: f64,
    coords: (f64, f64, f64, f64),
    source: Option<String>,
    sizes: Option<&ImageSizes>,
) -> Result<Detection> {
    if !(0.0..=1.0).contains(&score) {
        return Err(row.err(format!("Score {score} outside [0, 1]")));
    }
    let bbox = to_bbox(row, &image_id, coords, sizes)?;
    Ok(Detection {
        image_id,
        class,
        score,
        bbox,
        source,
    })
}

pub fn read_detections_csv<R: Read>(
    reader: R,
    source: &str,
    hierarchy: &ClassHierarchy,
    opts: LoadOptions<'_>,
) -> Result<Loaded<Vec<Detection>>> {
    let mut out = Vec::new();
    let (rows, parsed_rows, skipped) = read_rows(
        reader,
        source,
        &DETECTION_COLUMNS,
        &["Source"],
        opts.lenient,
        |row| {
            let image_id = row.field(0)?.to_string();
            let class = row.class(1, hierarchy)?;
            let score = row.number(2, "Score")?;
            let coords = boxed(row, 3)?;
            let src = row.optional(0).map(str::to_string);
            out.push(detection_from_parts(
                row,
                image_id,
                class,
                score,
                coords,
                src,
                opts.image_sizes,
            )?);
            Ok(())
        },
    )?;
    Ok(Loaded {
        records: out,
        rows,
        parsed_rows,
        skipped,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct DetectionRecord {
    #[serde(rename = "ImageID")]
    image_id: String,
    #[serde(rename = "LabelName")]
    label: String,
    #[serde(rename = "Score")]
    score: f64,
    #[serde(rename = "XMin")]
    x_min: f64,
    #[serde(rename = "XMax")]
    x_max: f64,
    #[serde(rename = "YMin")]
    y_min: f64,
    #[serde(rename = "YMax")]
    y_max: f64,
    #[serde(rename = "Source", default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
}

pub fn read_detections_jsonl<R: Read>(
    reader: R,
    source: &str,
    hierarchy: &ClassHierarchy,
    opts: LoadOptions<'_>,
) -> Result<Loaded<Vec<Detection>>> {
    let mut out = Vec::new();
    let mut rows = 0;
    let mut parsed_rows = 0;
    let mut skipped = Vec::new();
    let empty = csv::StringRecord::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows += 1;
        let row = Row {
            record: &empty,
            columns: &[],
            optional: &[],
            source,
            line: line_no,
        };
        let parsed = serde_json::from_str::<DetectionRecord>(&line)
            .map_err(|e| row.err(e.to_string()))
            .and_then(|r| {
                let class = hierarchy.id(&r.label)?;
                for (name, v) in [("XMin", r.x_min), ("XMax", r.x_max), ("YMin", r.y_min), ("YMax", r.y_max), ("Score", r.score)] {
                    if !v.is_finite() {
                        return Err(row.err(format!("{name} is not finite")));
                    }
                }
                if r.x_min > r.x_max || r.y_min > r.y_max {
                    return Err(row.err("inverted box coordinates"));
                }
                detection_from_parts(
                    &row,
                    r.image_id,
                    class,
                    r.score,
                    (r.x_min, r.x_max, r.y_min, r.y_max),
                    r.source,
                    opts.image_sizes,
                )
            });
        match parsed {
            Ok(d) => {
                parsed_rows += 1;
                out.push(d);
            }
            Err(error) if opts.lenient => skipped.push(RowError {
                line: line_no,
                error,
            }),
            Err(error) => return Err(error),
        }
    }
    Ok(Loaded {
        records: out,
        rows,
        parsed_rows,
        skipped,
    })
}

pub fn read_detections<R: Read>(
    reader: R,
    format: DetectionFormat,
    source: &str,
    hierarchy: &ClassHierarchy,
    opts: LoadOptions<'_>,
) -> Result<Loaded<Vec<Detection>>> {
    match format {
        DetectionFormat::Csv => read_detections_csv(reader, source, hierarchy, opts),
        DetectionFormat::JsonLines => read_detections_jsonl(reader, source, hierarchy, opts),
    }
}

pub fn load_detections(
    path: impl AsRef<Path>,
    hierarchy: &ClassHierarchy,
    opts: LoadOptions<'_>,
) -> Result<Loaded<Vec<Detection>>> {
    let path = path.as_ref();
    read_detections(
        open(path)?,
        DetectionFormat::from_path(path),
        &source_name(path),
        hierarchy,
        opts,
    )
}

pub fn read_cooccurrence_pairs<R: Read>(
    reader: R,
    source: &str,
    hierarchy: &ClassHierarchy,
    opts: LoadOptions<'_>,
) -> Result<Loaded<CooccurrenceTable>> {
    let mut table = CooccurrenceTable::default();
    let (rows, parsed_rows, skipped) =
        read_rows(reader, source, &PAIR_COLUMNS, &[], opts.lenient, |row| {
            let subject = row.class(0, hierarchy)?;
            let part = row.class(1, hierarchy)?;
            let pair = CooccurrencePair::new(subject, part)
                .map_err(|_| Error::SelfPair(hierarchy.name(subject).to_string()))?;
            table.insert(pair);
            Ok(())
        })?;
    Ok(Loaded {
        records: table,
        rows,
        parsed_rows,
        skipped,
    })
}

pub fn load_cooccurrence_pairs(
    path: impl AsRef<Path>,
    hierarchy: &ClassHierarchy,
    opts: LoadOptions<'_>,
) -> Result<Loaded<CooccurrenceTable>> {
    let path = path.as_ref();
    read_cooccurrence_pairs(open(path)?, &source_name(path), hierarchy, opts)
}

/// Per-image proposal boxes, in file order.
pub fn load_proposals(
    path: impl AsRef<Path>,
    opts: LoadOptions<'_>,
) -> Result<Loaded<Vec<(String, BBox)>>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    let (rows, parsed_rows, skipped) = read_rows(
        open(path)?,
        &source_name(path),
        &PROPOSAL_COLUMNS,
        &[],
        opts.lenient,
        |row| {
            let image_id = row.field(0)?.to_string();
            let coords = boxed(row, 1)?;
            let bbox = to_bbox(row, &image_id, coords, opts.image_sizes)?;
            out.push((image_id, bbox));
            Ok(())
        },
    )?;
    Ok(Loaded {
        records: out,
        rows,
        parsed_rows,
        skipped,
    })
}

/// Reads a `LabelName,<value>` table such as per-class validation AP or
/// occurrence counts. Duplicate labels are a parse error.
pub fn load_class_values(
    path: impl AsRef<Path>,
    value_column: &str,
    hierarchy: &ClassHierarchy,
) -> Result<HashMap<ClassId, f64>> {
    let path = path.as_ref();
    let mut out = HashMap::new();
    read_rows(
        open(path)?,
        &source_name(path),
        &["LabelName", value_column],
        &[],
        false,
        |row| {
            let class = row.class(0, hierarchy)?;
            let v = row.number(1, value_column)?;
            if out.insert(class, v).is_some() {
                return Err(row.err(format!("duplicate label `{}`", hierarchy.name(class))));
            }
            Ok(())
        },
    )?;
    Ok(out)
}

/// Reads a one-column `LabelName` list.
pub fn load_class_list(
    path: impl AsRef<Path>,
    hierarchy: &ClassHierarchy,
) -> Result<BTreeSet<ClassId>> {
    let path = path.as_ref();
    let mut out = BTreeSet::new();
    read_rows(
        open(path)?,
        &source_name(path),
        &["LabelName"],
        &[],
        false,
        |row| {
            out.insert(row.class(0, hierarchy)?);
            Ok(())
        },
    )?;
    Ok(out)
}

/// Number of distinct images in which each class has a ground truth box.
pub fn occurrence_counts(gts: &[GroundTruthBox]) -> HashMap<ClassId, u64> {
    let mut seen: HashSet<(&str, ClassId)> = HashSet::new();
    let mut counts = HashMap::new();
    for g in gts {
        if seen.insert((g.image_id.as_str(), g.class)) {
            *counts.entry(g.class).or_insert(0) += 1;
        }
    }
    counts
}

fn num(v: f64) -> String {
    // `Display` for f64 prints the shortest string that parses back exactly.
    format!("{v}")
}

fn flush<W: Write>(w: csv::Writer<W>) -> Result<()> {
    w.into_inner()
        .map_err(|e| Error::io("<csv output>", e.into_error()))?
        .flush()
        .map_err(|e| Error::io("<csv output>", e))
}

/// Writes detections in the CSV layout. A trailing `Source` column is added
/// when any detection carries one.
pub fn write_detections_csv<W: Write>(
    writer: W,
    detections: &[Detection],
    hierarchy: &ClassHierarchy,
) -> Result<()> {
    let with_source = detections.iter().any(|d| d.source.is_some());
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = DETECTION_COLUMNS.to_vec();
    if with_source {
        header.push("Source");
    }
    w.write_record(&header)?;
    for d in detections {
        let mut rec = vec![
            d.image_id.clone(),
            hierarchy.name(d.class).to_string(),
            num(d.score),
            num(d.bbox.x_min),
            num(d.bbox.x_max),
            num(d.bbox.y_min),
            num(d.bbox.y_max),
        ];
        if with_source {
            rec.push(d.source.clone().unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    flush(w)
}

pub fn write_detections_jsonl<W: Write>(
    mut writer: W,
    detections: &[Detection],
    hierarchy: &ClassHierarchy,
) -> Result<()> {
    for d in detections {
        let rec = DetectionRecord {
            image_id: d.image_id.clone(),
            label: hierarchy.name(d.class).to_string(),
            score: d.score,
            x_min: d.bbox.x_min,
            x_max: d.bbox.x_max,
            y_min: d.bbox.y_min,
            y_max: d.bbox.y_max,
            source: d.source.clone(),
        };
        serde_json::to_writer(&mut writer, &rec)?;
        writer
            .write_all(b"\n")
            .map_err(|e| Error::io("<jsonl output>", e))?;
    }
    writer.flush().map_err(|e| Error::io("<jsonl output>", e))
}

pub fn write_detections<W: Write>(
    writer: W,
    format: DetectionFormat,
    detections: &[Detection],
    hierarchy: &ClassHierarchy,
) -> Result<()> {
    match format {
        DetectionFormat::Csv => write_detections_csv(writer, detections, hierarchy),
        DetectionFormat::JsonLines => write_detections_jsonl(writer, detections, hierarchy),
    }
}

pub fn write_ground_truth_csv<W: Write>(
    writer: W,
    gts: &[GroundTruthBox],
    hierarchy: &ClassHierarchy,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(GROUND_TRUTH_COLUMNS)?;
    for g in gts {
        w.write_record([
            g.image_id.clone(),
            hierarchy.name(g.class).to_string(),
            num(g.bbox.x_min),
            num(g.bbox.x_max),
            num(g.bbox.y_min),
            num(g.bbox.y_max),
            if g.is_group_of { "1" } else { "0" }.to_string(),
        ])?;
    }
    flush(w)
}

/// Writes verification labels sorted by image id, positives then negatives.
pub fn write_verifications_csv<W: Write>(
    writer: W,
    verifications: &Verifications,
    hierarchy: &ClassHierarchy,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(VERIFICATION_COLUMNS)?;
    for image_id in verifications.image_ids() {
        let v = verifications.get(image_id);
        for (set, flag) in [(&v.verified_positive, "1"), (&v.verified_negative, "0")] {
            for &c in set {
                w.write_record([image_id, hierarchy.name(c), flag])?;
            }
        }
    }
    flush(w)
}

pub fn write_cooccurrence_pairs_csv<W: Write>(
    writer: W,
    table: &CooccurrenceTable,
    hierarchy: &ClassHierarchy,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PAIR_COLUMNS)?;
    for p in table.pairs() {
        w.write_record([hierarchy.name(p.subject), hierarchy.name(p.part)])?;
    }
    flush(w)
}

/// Writes a `LabelName,<value>` table in hierarchy order.
pub fn write_class_values_csv<W: Write>(
    writer: W,
    value_column: &str,
    values: &HashMap<ClassId, f64>,
    hierarchy: &ClassHierarchy,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["LabelName", value_column])?;
    for c in hierarchy.ids() {
        if let Some(v) = values.get(&c) {
            w.write_record([hierarchy.name(c).to_string(), num(*v)])?;
        }
    }
    flush(w)
}

pub fn write_class_list_csv<W: Write>(
    writer: W,
    classes: &BTreeSet<ClassId>,
    hierarchy: &ClassHierarchy,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["LabelName"])?;
    for &c in classes {
        w.write_record([hierarchy.name(c)])?;
    }
    flush(w)
}
