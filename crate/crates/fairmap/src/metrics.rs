//! Bias and quality metrics over prompts and generated outputs, plus the
//! audit report that assembles them.
//!
//! Distribution-side metrics score how far the empirical attribute
//! distribution of generated images sits from uniform. Embedding-side
//! metrics score how far the neutral prompt's embedding sits from each
//! attributed prompt's embedding relative to the average. Record-side
//! metrics (human-gated alignment, human frequency, intra-class average
//! distance) summarize per-image annotations.

use crate::embedding::{EmbeddingStore, EmbeddingVector};
use crate::error::{Error, Result};
use crate::lexicon::{AttributeSet, Keyword};
use crate::network::MappingNetwork;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const GENERATIONS_FORMAT: &str = "fairmap-generations";
pub const GENERATIONS_VERSION: u32 = 1;

/// Empirical attribute distribution for one keyword: how many labeled
/// images expressed each attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeDistribution {
    keyword: Keyword,
    attributes: Vec<String>,
    counts: Vec<u64>,
    total: u64,
}

impl AttributeDistribution {
    /// Counts per attribute in `attrs` member order. Unlisted attributes
    /// count zero; every supplied pair must name a member of `attrs`.
    pub fn new(
        keyword: Keyword,
        attrs: &AttributeSet,
        counts_by_attribute: &[(String, u64)],
    ) -> Result<Self> {
        let mut counts = vec![0u64; attrs.len()];
        for (word, count) in counts_by_attribute {
            let idx = attrs
                .members()
                .iter()
                .position(|m| m == word)
                .ok_or_else(|| Error::UnknownAttribute(word.clone()))?;
            counts[idx] += count;
        }
        let total = counts.iter().sum();
        Ok(AttributeDistribution {
            keyword,
            attributes: attrs.members().to_vec(),
            counts,
            total,
        })
    }

    /// Tallies attribute labels, rejecting words outside `attrs`.
    pub fn from_labels<'a>(
        keyword: Keyword,
        attrs: &AttributeSet,
        labels: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self> {
        let mut counts = vec![0u64; attrs.len()];
        for label in labels {
            let idx = attrs
                .members()
                .iter()
                .position(|m| m == label)
                .ok_or_else(|| Error::UnknownAttribute(label.to_string()))?;
            counts[idx] += 1;
        }
        let total = counts.iter().sum();
        Ok(AttributeDistribution {
            keyword,
            attributes: attrs.members().to_vec(),
            counts,
            total,
        })
    }

    pub fn keyword(&self) -> &Keyword {
        &self.keyword
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    fn probability(&self, idx: usize) -> f64 {
        self.counts[idx] as f64 / self.total as f64
    }

    /// Deviation of the attribute's empirical probability from the mean
    /// probability over all attributes. Range [-1/|A|, 1 - 1/|A|].
    pub fn dbias(&self, attribute: &str) -> Result<f64> {
        if self.total == 0 {
            return Err(Error::Invalid(format!(
                "no labeled images for keyword {:?}",
                self.keyword.text()
            )));
        }
        let idx = self
            .attributes
            .iter()
            .position(|m| m == attribute)
            .ok_or_else(|| Error::UnknownAttribute(attribute.to_string()))?;
        let n = self.attributes.len() as f64;
        let mean = (0..self.attributes.len())
            .map(|j| self.probability(j))
            .sum::<f64>()
            / n;
        Ok(self.probability(idx) - mean)
    }

    /// Root-mean-square of the per-attribute deviations. Zero exactly when
    /// the empirical distribution is uniform.
    pub fn bias_score(&self) -> Result<f64> {
        let n = self.attributes.len() as f64;
        let mut sum = 0.0;
        for attribute in &self.attributes {
            let d = self.dbias(attribute)?;
            sum += d * d;
        }
        Ok((sum / n).sqrt())
    }
}

/// Mean of per-keyword bias scores.
pub fn dataset_bias(dists: &[AttributeDistribution]) -> Result<f64> {
    if dists.is_empty() {
        return Err(Error::Invalid("dataset bias over an empty list".into()));
    }
    let mut sum = 0.0;
    for dist in dists {
        sum += dist.bias_score()?;
    }
    Ok(sum / dists.len() as f64)
}

/// Signed deviation: negative distance from the neutral embedding to the
/// indexed attribute's embedding, plus the mean distance over all
/// attributes. Positive means the neutral prompt sits closer to that
/// attribute than average.
pub fn lbias(f: &EmbeddingVector, f_attrs: &[EmbeddingVector], a_index: usize) -> Result<f64> {
    if f_attrs.len() < 2 {
        return Err(Error::Invalid(format!(
            "language bias needs at least 2 attribute embeddings, got {}",
            f_attrs.len()
        )));
    }
    if a_index >= f_attrs.len() {
        return Err(Error::Invalid(format!(
            "attribute index {a_index} out of range for {} embeddings",
            f_attrs.len()
        )));
    }
    let mut sum = 0.0;
    for v in f_attrs {
        sum += v.distance(f)?;
    }
    let mean = sum / f_attrs.len() as f64;
    Ok(mean - f_attrs[a_index].distance(f)?)
}

/// All per-attribute signed deviations in order.
pub fn lbias_all(f: &EmbeddingVector, f_attrs: &[EmbeddingVector]) -> Result<Vec<f64>> {
    (0..f_attrs.len()).map(|i| lbias(f, f_attrs, i)).collect()
}

/// Root-mean-square of the signed deviations: a scalar summary that is zero
/// exactly when all distances are equal. (The plain mean is identically
/// zero by construction, so it carries no information.)
pub fn lbias_magnitude(f: &EmbeddingVector, f_attrs: &[EmbeddingVector]) -> Result<f64> {
    let values = lbias_all(f, f_attrs)?;
    let sum: f64 = values.iter().map(|v| v * v).sum();
    Ok((sum / values.len() as f64).sqrt())
}

/// Per-image annotation for one generated output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub keyword: String,
    pub image_id: String,
    pub attribute: Option<String>,
    pub clip_score: f64,
    pub contains_human: bool,
    pub image_embedding: Option<EmbeddingVector>,
}

impl GenerationRecord {
    fn validate(&self) -> Result<()> {
        if self.keyword.trim().is_empty() {
            return Err(Error::Invalid("generation record has empty keyword".into()));
        }
        if !self.clip_score.is_finite() || !(-1.0..=1.0).contains(&self.clip_score) {
            return Err(Error::Invalid(format!(
                "clip_score {} outside [-1, 1]",
                self.clip_score
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct GenerationsHeader {
    format: String,
    version: u32,
}

/// Loads a JSON Lines generations file, enforcing the header, record
/// validity, and image-id uniqueness within each keyword.
pub fn load_generations(path: impl AsRef<Path>) -> Result<Vec<GenerationRecord>> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(display.clone(), e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut header_seen = false;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(display.clone(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: display.clone(),
            line: idx + 1,
            msg,
        };
        if !header_seen {
            let h: GenerationsHeader =
                serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            if h.format != GENERATIONS_FORMAT {
                return Err(parse_err(format!("unexpected format {:?}", h.format)));
            }
            if h.version != GENERATIONS_VERSION {
                return Err(Error::VersionMismatch {
                    what: "generations file".into(),
                    expected: GENERATIONS_VERSION,
                    got: h.version,
                });
            }
            header_seen = true;
            continue;
        }
        let record: GenerationRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        record.validate().map_err(|e| parse_err(e.to_string()))?;
        if !seen.insert((record.keyword.clone(), record.image_id.clone())) {
            return Err(parse_err(format!(
                "duplicate image_id {:?} for keyword {:?}",
                record.image_id, record.keyword
            )));
        }
        records.push(record);
    }
    if !header_seen {
        return Err(Error::Parse {
            path: display,
            line: 1,
            msg: "missing header line".into(),
        });
    }
    Ok(records)
}

pub fn save_generations(records: &[GenerationRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    let header = GenerationsHeader {
        format: GENERATIONS_FORMAT.into(),
        version: GENERATIONS_VERSION,
    };
    writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes")).map_err(io_err)?;
    for record in records {
        record.validate()?;
        writeln!(w, "{}", serde_json::to_string(record).expect("record serializes"))
            .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Mean over records of clip_score gated by human presence: images without
/// a human contribute zero.
pub fn human_clip(records: &[GenerationRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Invalid("human_clip over an empty list".into()));
    }
    let sum: f64 = records
        .iter()
        .map(|r| if r.contains_human { r.clip_score } else { 0.0 })
        .sum();
    Ok(sum / records.len() as f64)
}

/// Fraction of records whose image contains a human.
pub fn human_frequency(records: &[GenerationRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Invalid("human_frequency over an empty list".into()));
    }
    let humans = records.iter().filter(|r| r.contains_human).count();
    Ok(humans as f64 / records.len() as f64)
}

/// Intra-class average distance: mean distance from each image embedding to
/// the centroid of the keyword's embeddings. Records without embeddings are
/// ignored; at least one embedding is required. `squared` switches to the
/// squared-distance variant.
pub fn icad(records: &[GenerationRecord], squared: bool) -> Result<f64> {
    let embeddings: Vec<&EmbeddingVector> = records
        .iter()
        .filter_map(|r| r.image_embedding.as_ref())
        .collect();
    let first = embeddings
        .first()
        .ok_or_else(|| Error::Invalid("no image embeddings present".into()))?;
    let dim = first.dim();
    for e in &embeddings {
        if e.dim() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                got: e.dim(),
            });
        }
    }
    let n = embeddings.len() as f64;
    let mut centroid = vec![0.0; dim];
    for e in &embeddings {
        for (c, v) in centroid.iter_mut().zip(e.values()) {
            *c += v / n;
        }
    }
    let mut sum = 0.0;
    for e in &embeddings {
        let sq: f64 = e
            .values()
            .iter()
            .zip(&centroid)
            .map(|(v, c)| (v - c) * (v - c))
            .sum();
        sum += if squared { sq } else { sq.sqrt() };
    }
    Ok(sum / n)
}

/// One signed per-attribute value in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeValue {
    pub attribute: String,
    pub value: f64,
}

/// Per-keyword metric values. Absent fields mean the corresponding input
/// was not available for that keyword.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordReport {
    pub keyword: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dbias: Option<Vec<AttributeValue>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lbias: Option<Vec<AttributeValue>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lbias_magnitude: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lbias_mapped: Option<Vec<AttributeValue>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lbias_magnitude_mapped: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub human_clip: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub human_frequency: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub icad: Option<f64>,
    pub images: u64,
    pub unlabeled: u64,
}

/// Dataset-level aggregates. Bias is the mean of per-keyword bias scores;
/// human-gated alignment and human frequency average over all records;
/// intra-class distance and language-bias magnitudes average over keywords.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_bias: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub human_clip: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub human_frequency: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub icad: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lbias_magnitude: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lbias_magnitude_mapped: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub attribute_set: String,
    pub attributes: Vec<String>,
    pub keywords: Vec<KeywordReport>,
    pub aggregates: Aggregates,
}

/// Inputs to report assembly. At least one of `generations` / `embeddings`
/// must be present.
pub struct ReportInputs<'a> {
    pub keywords: &'a [Keyword],
    pub attrs: &'a AttributeSet,
    pub generations: Option<&'a [GenerationRecord]>,
    pub embeddings: Option<&'a EmbeddingStore>,
    pub network: Option<&'a MappingNetwork>,
    pub icad_squared: bool,
    /// Worker threads for per-keyword evaluation; results merge in keyword
    /// order regardless.
    pub jobs: usize,
}

fn keyword_report(inputs: &ReportInputs<'_>, kw: &Keyword) -> Result<KeywordReport> {
    let mut report = KeywordReport {
        keyword: kw.text().to_string(),
        bias_score: None,
        dbias: None,
        lbias: None,
        lbias_magnitude: None,
        lbias_mapped: None,
        lbias_magnitude_mapped: None,
        human_clip: None,
        human_frequency: None,
        icad: None,
        images: 0,
        unlabeled: 0,
    };

    if let Some(all_records) = inputs.generations {
        let records: Vec<&GenerationRecord> = all_records
            .iter()
            .filter(|r| r.keyword == kw.text())
            .collect();
        if !records.is_empty() {
            let owned: Vec<GenerationRecord> = records.iter().map(|r| (*r).clone()).collect();
            report.images = owned.len() as u64;
            report.human_clip = Some(human_clip(&owned)?);
            report.human_frequency = Some(human_frequency(&owned)?);
            // Images whose attribute classifier abstained are excluded from
            // the distribution and reported separately.
            let labels: Vec<&str> = owned
                .iter()
                .filter_map(|r| r.attribute.as_deref())
                .collect();
            report.unlabeled = (owned.len() - labels.len()) as u64;
            if !labels.is_empty() {
                let dist = AttributeDistribution::from_labels(kw.clone(), inputs.attrs, labels)?;
                report.bias_score = Some(dist.bias_score()?);
                report.dbias = Some(
                    inputs
                        .attrs
                        .members()
                        .iter()
                        .map(|a| {
                            dist.dbias(a).map(|value| AttributeValue {
                                attribute: a.clone(),
                                value,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?,
                );
            }
            if owned.iter().any(|r| r.image_embedding.is_some()) {
                report.icad = Some(icad(&owned, inputs.icad_squared)?);
            }
        }
    }

    if let Some(store) = inputs.embeddings {
        let neutral = store.find_by_meta(kw.text(), None)?;
        let mut attributed = Vec::with_capacity(inputs.attrs.len());
        for member in inputs.attrs.members() {
            attributed.push(store.find_by_meta(kw.text(), Some(member))?);
        }
        if let Some(neutral) = neutral {
            if attributed.iter().all(Option::is_some) {
                let f = neutral.vector.clone();
                let f_attrs: Vec<EmbeddingVector> = attributed
                    .iter()
                    .map(|r| r.unwrap().vector.clone())
                    .collect();
                let values = lbias_all(&f, &f_attrs)?;
                report.lbias = Some(pair_attrs(inputs.attrs, &values));
                report.lbias_magnitude = Some(lbias_magnitude(&f, &f_attrs)?);
                if let Some(net) = inputs.network {
                    let mapped_f = net.forward(&f)?;
                    let mapped_attrs: Vec<EmbeddingVector> = f_attrs
                        .iter()
                        .map(|v| net.forward(v))
                        .collect::<Result<Vec<_>>>()?;
                    let values = lbias_all(&mapped_f, &mapped_attrs)?;
                    report.lbias_mapped = Some(pair_attrs(inputs.attrs, &values));
                    report.lbias_magnitude_mapped =
                        Some(lbias_magnitude(&mapped_f, &mapped_attrs)?);
                }
            }
        }
    }

    Ok(report)
}

fn pair_attrs(attrs: &AttributeSet, values: &[f64]) -> Vec<AttributeValue> {
    attrs
        .members()
        .iter()
        .zip(values)
        .map(|(attribute, &value)| AttributeValue {
            attribute: attribute.clone(),
            value,
        })
        .collect()
}

/// Builds the full report. Per-keyword evaluation may run on `jobs` worker
/// threads; entries are merged in keyword order for determinism.
pub fn build_report(inputs: &ReportInputs<'_>) -> Result<AuditReport> {
    if inputs.generations.is_none() && inputs.embeddings.is_none() {
        return Err(Error::Invalid(
            "audit needs a generations file or an embeddings file".into(),
        ));
    }
    if inputs.keywords.is_empty() {
        return Err(Error::Invalid("audit needs at least one keyword".into()));
    }
    if let Some(records) = inputs.generations {
        if records.is_empty() {
            return Err(Error::Invalid("generations file has no records".into()));
        }
        let known: HashSet<&str> = inputs.keywords.iter().map(|k| k.text()).collect();
        for record in records {
            if !known.contains(record.keyword.as_str()) {
                return Err(Error::Invalid(format!(
                    "generation record references unknown keyword {:?}",
                    record.keyword
                )));
            }
            if let Some(attribute) = &record.attribute {
                if !inputs.attrs.contains(attribute) {
                    return Err(Error::UnknownAttribute(attribute.clone()));
                }
            }
        }
    }

    let keyword_reports = run_per_keyword(inputs)?;

    let scored: Vec<f64> = keyword_reports.iter().filter_map(|r| r.bias_score).collect();
    let icads: Vec<f64> = keyword_reports.iter().filter_map(|r| r.icad).collect();
    let raw_mags: Vec<f64> = keyword_reports
        .iter()
        .filter_map(|r| r.lbias_magnitude)
        .collect();
    let mapped_mags: Vec<f64> = keyword_reports
        .iter()
        .filter_map(|r| r.lbias_magnitude_mapped)
        .collect();
    let mean = |v: &[f64]| {
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    };

    let (agg_clip, agg_freq) = match inputs.generations {
        Some(records) if !records.is_empty() => (
            Some(human_clip(records)?),
            Some(human_frequency(records)?),
        ),
        _ => (None, None),
    };

    Ok(AuditReport {
        attribute_set: inputs.attrs.name().to_string(),
        attributes: inputs.attrs.members().to_vec(),
        aggregates: Aggregates {
            dataset_bias: mean(&scored),
            human_clip: agg_clip,
            human_frequency: agg_freq,
            icad: mean(&icads),
            lbias_magnitude: mean(&raw_mags),
            lbias_magnitude_mapped: mean(&mapped_mags),
        },
        keywords: keyword_reports,
    })
}

fn run_per_keyword(inputs: &ReportInputs<'_>) -> Result<Vec<KeywordReport>> {
    let jobs = inputs.jobs.max(1).min(inputs.keywords.len());
    if jobs <= 1 {
        return inputs
            .keywords
            .iter()
            .map(|kw| keyword_report(inputs, kw))
            .collect();
    }
    let mut slots: Vec<Option<Result<KeywordReport>>> =
        (0..inputs.keywords.len()).map(|_| None).collect();
    let chunk = inputs.keywords.len().div_ceil(jobs);
    std::thread::scope(|scope| {
        for (slot_chunk, kw_chunk) in slots.chunks_mut(chunk).zip(inputs.keywords.chunks(chunk)) {
            scope.spawn(move || {
                for (slot, kw) in slot_chunk.iter_mut().zip(kw_chunk) {
                    *slot = Some(keyword_report(inputs, kw));
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.expect("every keyword slot filled"))
        .collect()
}

fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn csv_opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes the flat CSV view of the report. Per-attribute deviation columns
/// follow the scalar columns; cells are empty where a metric is absent.
pub fn write_report_csv(report: &AuditReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);

    let has_mapped = report
        .keywords
        .iter()
        .any(|k| k.lbias_magnitude_mapped.is_some());
    let mut header = vec![
        "keyword".to_string(),
        "bias_score".to_string(),
        "human_clip".to_string(),
        "human_frequency".to_string(),
        "icad".to_string(),
        "lbias_magnitude".to_string(),
    ];
    if has_mapped {
        header.push("lbias_magnitude_mapped".to_string());
    }
    header.push("images".to_string());
    header.push("unlabeled".to_string());
    for a in &report.attributes {
        header.push(format!("dbias_{a}"));
    }
    for a in &report.attributes {
        header.push(format!("lbias_{a}"));
    }
    if has_mapped {
        for a in &report.attributes {
            header.push(format!("lbias_mapped_{a}"));
        }
    }
    writeln!(w, "{}", header.join(",")).map_err(io_err)?;

    let attr_cells = |values: &Option<Vec<AttributeValue>>, attrs: &[String]| -> Vec<String> {
        match values {
            Some(list) => attrs
                .iter()
                .map(|a| {
                    list.iter()
                        .find(|v| &v.attribute == a)
                        .map(|v| v.value.to_string())
                        .unwrap_or_default()
                })
                .collect(),
            None => vec![String::new(); attrs.len()],
        }
    };

    for entry in &report.keywords {
        let mut row = vec![
            csv_escape(&entry.keyword),
            csv_opt(entry.bias_score),
            csv_opt(entry.human_clip),
            csv_opt(entry.human_frequency),
            csv_opt(entry.icad),
            csv_opt(entry.lbias_magnitude),
        ];
        if has_mapped {
            row.push(csv_opt(entry.lbias_magnitude_mapped));
        }
        row.push(entry.images.to_string());
        row.push(entry.unlabeled.to_string());
        row.extend(attr_cells(&entry.dbias, &report.attributes));
        row.extend(attr_cells(&entry.lbias, &report.attributes));
        if has_mapped {
            row.extend(attr_cells(&entry.lbias_mapped, &report.attributes));
        }
        writeln!(w, "{}", row.join(",")).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Writes the report as a pretty-printed JSON document.
pub fn write_report_json(report: &AuditReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path.display().to_string(), e))
}

/// Writes scatter-plot data: per keyword, the signed language-bias and
/// distribution-bias deviations toward `reference_attribute`. A mapped
/// language-bias column appears when mapped values exist.
pub fn write_scatter_csv(
    report: &AuditReport,
    reference_attribute: &str,
    path: impl AsRef<Path>,
) -> Result<()> {
    if !report.attributes.iter().any(|a| a == reference_attribute) {
        return Err(Error::UnknownAttribute(reference_attribute.to_string()));
    }
    let path = path.as_ref();
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    let has_mapped = report
        .keywords
        .iter()
        .any(|k| k.lbias_mapped.is_some());
    if has_mapped {
        writeln!(w, "keyword,lbias,lbias_mapped,dbias").map_err(io_err)?;
    } else {
        writeln!(w, "keyword,lbias,dbias").map_err(io_err)?;
    }
    let pick = |values: &Option<Vec<AttributeValue>>| -> String {
        values
            .as_ref()
            .and_then(|list| list.iter().find(|v| v.attribute == reference_attribute))
            .map(|v| v.value.to_string())
            .unwrap_or_default()
    };
    for entry in &report.keywords {
        if has_mapped {
            writeln!(
                w,
                "{},{},{},{}",
                csv_escape(&entry.keyword),
                pick(&entry.lbias),
                pick(&entry.lbias_mapped),
                pick(&entry.dbias)
            )
            .map_err(io_err)?;
        } else {
            writeln!(
                w,
                "{},{},{}",
                csv_escape(&entry.keyword),
                pick(&entry.lbias),
                pick(&entry.dbias)
            )
            .map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}
