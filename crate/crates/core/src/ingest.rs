//! Raw cohort records: loading, imputation, outlier filtering, treatment
//! encoding and demographic grouping.
//!
//! Records are expected to be bucketed to uniform time steps already; nothing
//! here resamples.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{csv_err, io_err};

/// Column roles of a cohort CSV besides `subject_id`, `timestamp` and `died_in_hospital`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSchema {
    pub features: Vec<String>,
    pub treatments: Vec<String>,
    pub demographics: Vec<String>,
}

/// One time step of one subject. `features` is aligned with [`CohortSchema::features`].
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub subject_id: String,
    /// Minutes since admission.
    pub timestamp: i64,
    pub features: Vec<Option<f64>>,
    pub treatments: BTreeSet<String>,
    pub demographics: BTreeMap<String, String>,
    pub died_in_hospital: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NormalValueTable(pub BTreeMap<String, f64>);

/// Inclusive `[lo, hi]` per feature; features without bounds are unconstrained.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OutlierBounds(pub BTreeMap<String, (f64, f64)>);

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DropReport {
    pub rows_dropped: usize,
    /// Out-of-range values per feature; a row can count under several features.
    pub per_feature: BTreeMap<String, usize>,
}

impl DropReport {
    pub fn merge(&mut self, other: DropReport) {
        self.rows_dropped += other.rows_dropped;
        for (k, v) in other.per_feature {
            *self.per_feature.entry(k).or_default() += v;
        }
    }
}

/// Forward-fill each feature; before its first observation use the normal value.
pub fn impute_series(records: &[RawRecord], schema: &CohortSchema, normals: &NormalValueTable) -> Result<Vec<RawRecord>> {
    let defaults = schema
        .features
        .iter()
        .map(|f| {
            normals
                .0
                .get(f)
                .copied()
                .ok_or_else(|| Error::schema("ingest", format!("feature `{f}` has no normal value")))
        })
        .collect::<Result<Vec<f64>>>()?;
    if let Some(w) = records.windows(2).find(|w| w[1].timestamp <= w[0].timestamp) {
        return Err(Error::schema(
            "ingest",
            format!("subject {}: timestamps not strictly increasing at {}", w[1].subject_id, w[1].timestamp),
        ));
    }
    let mut last = defaults;
    Ok(records
        .iter()
        .map(|r| {
            let features = r
                .features
                .iter()
                .zip(last.iter_mut())
                .map(|(v, carried)| {
                    if let Some(v) = v {
                        *carried = *v;
                    }
                    Some(*carried)
                })
                .collect();
            RawRecord {
                features,
                ..r.clone()
            }
        })
        .collect())
}

impl OutlierBounds {
    pub fn validate(&self, schema: &CohortSchema) -> Result<()> {
        for (name, &(lo, hi)) in &self.0 {
            if !schema.features.contains(name) {
                return Err(Error::schema("ingest", format!("bounds given for unknown feature `{name}`")));
            }
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::param("ingest", "bounds", format!("`{name}`: need finite lo < hi, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Drop rows with any observed value outside its inclusive bounds.
pub fn filter_outliers(records: &[RawRecord], schema: &CohortSchema, bounds: &OutlierBounds) -> Result<(Vec<RawRecord>, DropReport)> {
    bounds.validate(schema)?;
    let limits: Vec<Option<(f64, f64)>> = schema.features.iter().map(|f| bounds.0.get(f).copied()).collect();
    let mut report = DropReport::default();
    let mut kept = Vec::with_capacity(records.len());
    for r in records {
        let mut ok = true;
        for ((value, limit), name) in r.features.iter().zip(&limits).zip(&schema.features) {
            if let (Some(v), Some((lo, hi))) = (value, limit) {
                if *v < *lo || *v > *hi {
                    ok = false;
                    *report.per_feature.entry(name.clone()).or_default() += 1;
                }
            }
        }
        if ok {
            kept.push(r.clone());
        } else {
            report.rows_dropped += 1;
        }
    }
    if kept.is_empty() && !records.is_empty() {
        return Err(Error::empty("ingest", "every row was removed by outlier filtering"));
    }
    Ok((kept, report))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlagMapping {
    pub flags: BTreeSet<String>,
    pub action: usize,
}

/// Maps the set of treatments given at a time step to one action index.
///
/// Exact flag-set matches come from `mapping`. Any other combination takes the
/// single-flag action of the first flag in `priority` that is present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionCodec {
    pub condition: String,
    pub labels: Vec<String>,
    pub mapping: Vec<FlagMapping>,
    pub priority: Vec<String>,
}

fn flag_set(flags: &[&str]) -> BTreeSet<String> {
    flags.iter().map(|f| f.to_string()).collect()
}

impl ActionCodec {
    /// No treatment, vasopressors, bolus epinephrine, and both.
    pub fn hypotension() -> Self {
        ActionCodec {
            condition: "hypotension".into(),
            labels: vec![
                "no_treatment".into(),
                "vasopressors".into(),
                "bolus_epinephrine".into(),
                "vasopressors+bolus_epinephrine".into(),
            ],
            mapping: vec![
                FlagMapping { flags: flag_set(&[]), action: 0 },
                FlagMapping { flags: flag_set(&["vasopressors"]), action: 1 },
                FlagMapping { flags: flag_set(&["bolus_epinephrine"]), action: 2 },
                FlagMapping { flags: flag_set(&["vasopressors", "bolus_epinephrine"]), action: 3 },
            ],
            priority: vec!["vasopressors".into(), "bolus_epinephrine".into()],
        }
    }

    /// No treatment, ventilation, glucocorticoids, antibiotics, vasoactive drugs;
    /// concurrent treatments resolve in that order.
    pub fn sepsis() -> Self {
        let treatments = ["ventilation", "glucocorticoids", "antibiotics", "vasoactive_drugs"];
        let mut labels = vec!["no_treatment".to_string()];
        labels.extend(treatments.iter().map(|t| t.to_string()));
        let mut mapping = vec![FlagMapping { flags: flag_set(&[]), action: 0 }];
        mapping.extend(treatments.iter().enumerate().map(|(i, t)| FlagMapping {
            flags: flag_set(&[t]),
            action: i + 1,
        }));
        ActionCodec {
            condition: "sepsis".into(),
            labels,
            mapping,
            priority: treatments.iter().map(|t| t.to_string()).collect(),
        }
    }

    pub fn builtin(condition: &str) -> Option<Self> {
        match condition {
            "hypotension" => Some(Self::hypotension()),
            "sepsis" => Some(Self::sepsis()),
            _ => None,
        }
    }

    pub fn n_actions(&self) -> usize {
        self.labels.len()
    }

    pub fn known_flags(&self) -> BTreeSet<String> {
        self.mapping
            .iter()
            .flat_map(|m| m.flags.iter().cloned())
            .chain(self.priority.iter().cloned())
            .collect()
    }

    fn single_flag_action(&self, flag: &str) -> Option<usize> {
        self.mapping
            .iter()
            .find(|m| m.flags.len() == 1 && m.flags.contains(flag))
            .map(|m| m.action)
    }

    /// Every flag subset must resolve to a valid action.
    pub fn validate(&self) -> Result<()> {
        if self.labels.len() < 2 {
            return Err(Error::param("ingest", "codec.labels", "need at least two actions"));
        }
        if let Some(m) = self.mapping.iter().find(|m| m.action >= self.labels.len()) {
            return Err(Error::param("ingest", "codec.mapping", format!("action {} out of range", m.action)));
        }
        if !self.mapping.iter().any(|m| m.flags.is_empty()) {
            return Err(Error::param("ingest", "codec.mapping", "the empty flag set must be mapped"));
        }
        for flag in self.known_flags() {
            if !self.priority.contains(&flag) {
                return Err(Error::param("ingest", "codec.priority", format!("flag `{flag}` missing from priority")));
            }
            if self.single_flag_action(&flag).is_none() {
                return Err(Error::param("ingest", "codec.mapping", format!("flag `{flag}` has no single-flag action")));
            }
        }
        Ok(())
    }

    pub fn encode(&self, flags: &BTreeSet<String>) -> Result<usize> {
        let known = self.known_flags();
        if let Some(unknown) = flags.iter().find(|f| !known.contains(*f)) {
            return Err(Error::schema(
                "ingest",
                format!("treatment `{unknown}` is not part of the {} codec", self.condition),
            ));
        }
        if let Some(m) = self.mapping.iter().find(|m| &m.flags == flags) {
            return Ok(m.action);
        }
        self.priority
            .iter()
            .find(|p| flags.contains(*p))
            .and_then(|p| self.single_flag_action(p))
            .ok_or_else(|| Error::schema("ingest", format!("flag set {flags:?} does not resolve to an action")))
    }
}

/// One action index per record.
pub fn encode_actions(records: &[RawRecord], codec: &ActionCodec) -> Result<Vec<usize>> {
    codec.validate()?;
    records.iter().map(|r| codec.encode(&r.treatments)).collect()
}

/// Relabels raw demographic categories into reporting groups and drops
/// subjects in groups below a minimum share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemographicGrouping {
    /// tag -> raw label -> group label; unmapped labels pass through.
    pub relabel: BTreeMap<String, BTreeMap<String, String>>,
    pub min_share: f64,
}

impl Default for DemographicGrouping {
    fn default() -> Self {
        DemographicGrouping {
            relabel: BTreeMap::new(),
            min_share: 0.01,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupingReport {
    /// `(tag, group)` pairs removed for falling below the minimum share.
    pub dropped_groups: Vec<(String, String)>,
    pub subjects_dropped: usize,
}

/// A subject's records, sorted by timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub records: Vec<RawRecord>,
}

impl Subject {
    pub fn demographics(&self) -> BTreeMap<String, String> {
        self.records.first().map(|r| r.demographics.clone()).unwrap_or_default()
    }

    pub fn died_in_hospital(&self) -> bool {
        self.records.iter().any(|r| r.died_in_hospital)
    }
}

pub fn group_demographics(subjects: Vec<Subject>, grouping: &DemographicGrouping) -> (Vec<Subject>, GroupingReport) {
    let mut subjects: Vec<Subject> = subjects
        .into_iter()
        .map(|mut s| {
            for r in &mut s.records {
                for (tag, value) in r.demographics.iter_mut() {
                    if let Some(group) = grouping.relabel.get(tag).and_then(|m| m.get(value)) {
                        *value = group.clone();
                    }
                }
            }
            s
        })
        .collect();
    let total = subjects.len() as f64;
    let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
    for s in &subjects {
        for (tag, value) in s.demographics() {
            *counts.entry((tag, value)).or_default() += 1;
        }
    }
    let small: BTreeSet<(String, String)> = counts
        .into_iter()
        .filter(|(_, c)| (*c as f64) < grouping.min_share * total)
        .map(|(k, _)| k)
        .collect();
    let before = subjects.len();
    subjects.retain(|s| s.demographics().into_iter().all(|kv| !small.contains(&kv)));
    let report = GroupingReport {
        dropped_groups: small.into_iter().collect(),
        subjects_dropped: before - subjects.len(),
    };
    (subjects, report)
}

/// Where the cohort CSV's columns go, resolved against its header.
pub fn resolve_schema(header: &[String], explicit: Option<&CohortSchema>, normals: &NormalValueTable, codec: &ActionCodec) -> Result<CohortSchema> {
    for required in ["subject_id", "timestamp", "died_in_hospital"] {
        if !header.iter().any(|h| h == required) {
            return Err(Error::schema("ingest", format!("cohort CSV lacks column `{required}`")));
        }
    }
    let schema = match explicit {
        Some(s) => s.clone(),
        None => {
            let known_flags = codec.known_flags();
            let mut schema = CohortSchema::default();
            for h in header {
                if matches!(h.as_str(), "subject_id" | "timestamp" | "died_in_hospital") {
                    continue;
                }
                if normals.0.contains_key(h) {
                    schema.features.push(h.clone());
                } else if known_flags.contains(h) {
                    schema.treatments.push(h.clone());
                } else {
                    schema.demographics.push(h.clone());
                }
            }
            schema
        }
    };
    for col in schema.features.iter().chain(&schema.treatments).chain(&schema.demographics) {
        if !header.contains(col) {
            return Err(Error::schema("ingest", format!("cohort CSV lacks column `{col}`")));
        }
    }
    if schema.features.is_empty() {
        return Err(Error::schema("ingest", "cohort has no feature columns"));
    }
    Ok(schema)
}

/// Read a cohort CSV into per-subject record lists ordered by subject id and timestamp.
pub fn read_cohort_csv(
    path: &Path,
    explicit: Option<&CohortSchema>,
    normals: &NormalValueTable,
    codec: &ActionCodec,
) -> Result<(CohortSchema, Vec<Subject>)> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header: Vec<String> = reader.headers().map_err(csv_err(path))?.iter().map(|h| h.trim().to_string()).collect();
    let schema = resolve_schema(&header, explicit, normals, codec)?;
    let col = |name: &str| header.iter().position(|h| h == name).expect("resolved above");
    let (id_col, ts_col, died_col) = (col("subject_id"), col("timestamp"), col("died_in_hospital"));
    let feature_cols: Vec<usize> = schema.features.iter().map(|f| col(f)).collect();
    let treatment_cols: Vec<usize> = schema.treatments.iter().map(|f| col(f)).collect();
    let demo_cols: Vec<usize> = schema.demographics.iter().map(|f| col(f)).collect();
    let bad = |line: u64, what: &str, value: &str| Error::schema("ingest", format!("{} line {line}: bad {what} `{value}`", path.display()));
    let flag = |line: u64, what: &str, value: &str| match value.trim() {
        "1" | "true" => Ok(true),
        "0" | "false" | "" => Ok(false),
        other => Err(bad(line, what, other)),
    };

    let mut by_subject: BTreeMap<String, Vec<RawRecord>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(csv_err(path))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let timestamp = record[ts_col].trim().parse().map_err(|_| bad(line, "timestamp", &record[ts_col]))?;
        let features = feature_cols
            .iter()
            .zip(&schema.features)
            .map(|(&c, name)| {
                let cell = record[c].trim();
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse::<f64>().map(Some).map_err(|_| bad(line, name, cell))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mut treatments = BTreeSet::new();
        for (&c, name) in treatment_cols.iter().zip(&schema.treatments) {
            if flag(line, name, &record[c])? {
                treatments.insert(name.clone());
            }
        }
        let demographics = demo_cols
            .iter()
            .zip(&schema.demographics)
            .map(|(&c, name)| (name.clone(), record[c].trim().to_string()))
            .collect();
        let subject_id = record[id_col].trim().to_string();
        by_subject.entry(subject_id.clone()).or_default().push(RawRecord {
            subject_id,
            timestamp,
            features,
            treatments,
            demographics,
            died_in_hospital: flag(line, "died_in_hospital", &record[died_col])?,
        });
    }
    if by_subject.is_empty() {
        return Err(Error::empty("ingest", format!("{} has no records", path.display())));
    }
    let subjects = by_subject
        .into_iter()
        .map(|(id, mut records)| {
            records.sort_by_key(|r| r.timestamp);
            Subject { id, records }
        })
        .collect();
    Ok((schema, subjects))
}

/// A cleaned, encoded time step ready for clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestedRow {
    pub subject_id: String,
    pub timestamp: i64,
    pub features: Vec<f64>,
    pub action: usize,
    pub demographics: BTreeMap<String, String>,
    pub died_in_hospital: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub subjects_in: usize,
    pub subjects_out: usize,
    pub rows_out: usize,
    pub outliers: DropReport,
    pub grouping: GroupingReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestedSchema {
    pub features: Vec<String>,
    pub demographics: Vec<String>,
    pub codec: ActionCodec,
}

/// Impute, filter, group and encode every subject.
pub fn ingest_subjects(
    schema: &CohortSchema,
    subjects: Vec<Subject>,
    normals: &NormalValueTable,
    bounds: &OutlierBounds,
    codec: &ActionCodec,
    grouping: &DemographicGrouping,
) -> Result<(Vec<IngestedRow>, IngestReport)> {
    codec.validate()?;
    let mut report = IngestReport {
        subjects_in: subjects.len(),
        ..IngestReport::default()
    };
    let mut cleaned = Vec::with_capacity(subjects.len());
    for subject in subjects {
        let imputed = impute_series(&subject.records, schema, normals)?;
        let (kept, drops) = match filter_outliers(&imputed, schema, bounds) {
            Ok(x) => x,
            Err(Error::Empty { .. }) => {
                report.outliers.rows_dropped += imputed.len();
                continue;
            }
            Err(e) => return Err(e),
        };
        report.outliers.merge(drops);
        cleaned.push(Subject {
            id: subject.id,
            records: kept,
        });
    }
    let (subjects, grouping_report) = group_demographics(cleaned, grouping);
    report.grouping = grouping_report;
    let mut rows = Vec::new();
    for subject in &subjects {
        let actions = encode_actions(&subject.records, codec)?;
        let died = subject.died_in_hospital();
        for (r, action) in subject.records.iter().zip(actions) {
            rows.push(IngestedRow {
                subject_id: r.subject_id.clone(),
                timestamp: r.timestamp,
                features: r.features.iter().map(|v| v.expect("imputed")).collect(),
                action,
                demographics: r.demographics.clone(),
                died_in_hospital: died,
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::empty("ingest", "no rows left after cleaning"));
    }
    report.subjects_out = subjects.len();
    report.rows_out = rows.len();
    Ok((rows, report))
}

/// `subject_id, timestamp, <features>, action, <demographics>, died_in_hospital`.
pub fn write_ingested_csv(path: &Path, schema: &IngestedSchema, rows: &[IngestedRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["subject_id".to_string(), "timestamp".into()];
    header.extend(schema.features.iter().cloned());
    header.push("action".into());
    header.extend(schema.demographics.iter().cloned());
    header.push("died_in_hospital".into());
    w.write_record(&header).map_err(csv_err(path))?;
    for r in rows {
        let mut row = vec![r.subject_id.clone(), r.timestamp.to_string()];
        row.extend(r.features.iter().map(f64::to_string));
        row.push(r.action.to_string());
        row.extend(schema.demographics.iter().map(|d| r.demographics.get(d).cloned().unwrap_or_default()));
        row.push(u8::from(r.died_in_hospital).to_string());
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_ingested_csv(path: &Path, schema: &IngestedSchema) -> Result<Vec<IngestedRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header: Vec<String> = r.headers().map_err(csv_err(path))?.iter().map(str::to_string).collect();
    let pos = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::schema("ingest", format!("{} lacks column `{name}`", path.display())))
    };
    let feature_cols = schema.features.iter().map(|f| pos(f)).collect::<Result<Vec<_>>>()?;
    let demo_cols = schema.demographics.iter().map(|f| pos(f)).collect::<Result<Vec<_>>>()?;
    let (id, ts, action, died) = (pos("subject_id")?, pos("timestamp")?, pos("action")?, pos("died_in_hospital")?);
    let bad = |what: &str, v: &str| Error::schema("ingest", format!("{}: bad {what} `{v}`", path.display()));
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record.map_err(csv_err(path))?;
        rows.push(IngestedRow {
            subject_id: record[id].to_string(),
            timestamp: record[ts].parse().map_err(|_| bad("timestamp", &record[ts]))?,
            features: feature_cols
                .iter()
                .map(|&c| record[c].parse().map_err(|_| bad("feature", &record[c])))
                .collect::<Result<_>>()?,
            action: record[action].parse().map_err(|_| bad("action", &record[action]))?,
            demographics: schema
                .demographics
                .iter()
                .zip(&demo_cols)
                .map(|(d, &c)| (d.clone(), record[c].to_string()))
                .collect(),
            died_in_hospital: &record[died] == "1",
        });
    }
    Ok(rows)
}
