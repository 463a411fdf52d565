//! Shared data model and corpus loaders.
//!
//! Corpora are line-delimited JSON. Triplet and caption records may omit
//! categories; the loader resolves them against the matching
//! [`CategoryTable`] and rejects labels no category claims.

use crate::jsonl::{self, JsonlError};
use crate::judge::RefusalLexicon;
use crate::perturb::AlteredDescription;
use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::path::Path;

/// The fixed attribute category set used for caption adjectives.
pub const ATTRIBUTE_CATEGORIES: [&str; 9] = [
    "Color",
    "Position",
    "Pattern",
    "Material",
    "Size",
    "Status",
    "Shape",
    "Human Status",
    "Uncategorized",
];

pub const UNCATEGORIZED: &str = "Uncategorized";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error on {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("line {0}: {1}")]
    MalformedLine(usize, String),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("label {0:?} is not a member of any known category")]
    UnknownCategory(String),
    #[error("label {0:?} appears more than once in the table")]
    DuplicateMember(String),
    #[error("category {0:?} has no members")]
    EmptyCategory(String),
    #[error("attribute table must have exactly the categories {expected:?}, found {found:?}")]
    WrongCategorySet {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("expected a {expected} table, file declares {found}")]
    KindMismatch {
        expected: TableKind,
        found: TableKind,
    },
    #[error("a {0} category table is required for this corpus format")]
    MissingTable(TableKind),
}

impl From<JsonlError> for CorpusError {
    fn from(e: JsonlError) -> Self {
        match e {
            JsonlError::Io { path, source } => CorpusError::Io {
                path,
                reason: source.to_string(),
            },
            JsonlError::Malformed { line, reason } => CorpusError::MalformedLine(line, reason),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableKind {
    Object,
    Relation,
    Attribute,
}

impl fmt::Display for TableKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TableKind::Object => "object",
            TableKind::Relation => "relation",
            TableKind::Attribute => "attribute",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRef {
    pub id: String,
    #[serde(rename = "source", default)]
    pub source_dataset: String,
    #[serde(rename = "frames", default)]
    pub frame_uris: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
}

impl VideoRef {
    fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("video id is empty".into());
        }
        if let Some(d) = self.duration_s {
            if !(d.is_finite() && d >= 0.0) {
                return Err(format!("duration_s must be non-negative, got {d}"));
            }
        }
        Ok(())
    }
}

/// A category table: category name → member labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryTable {
    kind: TableKind,
    categories: BTreeMap<String, BTreeSet<String>>,
    index: HashMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct CategoryTableFile {
    kind: TableKind,
    categories: BTreeMap<String, Vec<String>>,
}

impl CategoryTable {
    /// Build and validate a table.
    pub fn new(
        kind: TableKind,
        categories: BTreeMap<String, Vec<String>>,
    ) -> Result<Self, CorpusError> {
        if kind == TableKind::Attribute {
            let expected: BTreeSet<&str> = ATTRIBUTE_CATEGORIES.iter().copied().collect();
            let found: BTreeSet<&str> = categories.keys().map(String::as_str).collect();
            if expected != found {
                return Err(CorpusError::WrongCategorySet {
                    expected: ATTRIBUTE_CATEGORIES.iter().map(|s| s.to_string()).collect(),
                    found: categories.keys().cloned().collect(),
                });
            }
        }
        let mut index = HashMap::new();
        let mut sets = BTreeMap::new();
        for (name, members) in categories {
            if members.is_empty() {
                return Err(CorpusError::EmptyCategory(name));
            }
            let mut set = BTreeSet::new();
            for m in members {
                let m = m.trim().to_string();
                if m.is_empty() {
                    return Err(CorpusError::EmptyCategory(name));
                }
                if index.insert(m.clone(), name.clone()).is_some() {
                    return Err(CorpusError::DuplicateMember(m));
                }
                set.insert(m);
            }
            sets.insert(name, set);
        }
        Ok(CategoryTable {
            kind,
            categories: sets,
            index,
        })
    }

    pub fn from_json(text: &str, kind: TableKind) -> Result<Self, CorpusError> {
        let file: CategoryTableFile = serde_json::from_str(text)
            .map_err(|e| CorpusError::MalformedLine(e.line(), e.to_string()))?;
        if file.kind != kind {
            return Err(CorpusError::KindMismatch {
                expected: kind,
                found: file.kind,
            });
        }
        Self::new(kind, file.categories)
    }

    pub fn to_json(&self) -> String {
        let file = CategoryTableFile {
            kind: self.kind,
            categories: self
                .categories
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().cloned().collect()))
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("table serializes")
    }

    pub fn kind(&self) -> TableKind {
        self.kind
    }

    pub fn categories(&self) -> impl Iterator<Item = (&str, &BTreeSet<String>)> {
        self.categories.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn members(&self, category: &str) -> Option<&BTreeSet<String>> {
        self.categories.get(category)
    }

    pub fn contains_category(&self, category: &str) -> bool {
        self.categories.contains_key(category)
    }

    /// Category owning `label`; falls back to a lowercase lookup.
    pub fn category_of(&self, label: &str) -> Option<&str> {
        let label = label.trim();
        self.index
            .get(label)
            .or_else(|| self.index.get(&label.to_lowercase()))
            .map(String::as_str)
    }

    pub fn is_member(&self, category: &str, label: &str) -> bool {
        self.categories
            .get(category)
            .is_some_and(|m| m.contains(label.trim()) || m.contains(&label.trim().to_lowercase()))
    }
}

pub fn load_category_table(path: &Path, kind: TableKind) -> Result<CategoryTable, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    CategoryTable::from_json(&text, kind)
}

/// One labelled element of a triplet. On input, a bare string or an object
/// without `category` is accepted and resolved at load time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Element {
    pub label: String,
    pub category: String,
}

impl Element {
    pub fn new(label: impl Into<String>, category: impl Into<String>) -> Self {
        Element {
            label: label.into(),
            category: category.into(),
        }
    }
}

impl<'de> Deserialize<'de> for Element {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Bare(String),
            Full {
                label: String,
                #[serde(default)]
                category: Option<String>,
            },
        }
        Ok(match Raw::deserialize(deserializer)? {
            Raw::Bare(label) => Element {
                label,
                category: String::new(),
            },
            Raw::Full { label, category } => Element {
                label,
                category: category.unwrap_or_default(),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletDescription {
    pub source_object: Element,
    pub relation: Element,
    pub target_object: Element,
}

impl TripletDescription {
    /// Plain-text rendering, e.g. "police officer looking at pedestrians".
    pub fn render(&self) -> String {
        format!(
            "{} {} {}",
            self.source_object.label, self.relation.label, self.target_object.label
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjectiveSpan {
    pub start: usize,
    pub end: usize,
    pub surface: String,
    #[serde(default)]
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lemma: Option<String>,
}

impl AdjectiveSpan {
    /// Key used for category lookups and lexical comparisons.
    pub fn lookup_key(&self) -> String {
        self.lemma
            .clone()
            .unwrap_or_else(|| self.surface.to_lowercase())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionDescription {
    pub text: String,
    #[serde(default)]
    pub adjective_spans: Vec<AdjectiveSpan>,
}

impl CaptionDescription {
    /// Check span bounds, ordering and surfaces. Categories are not checked here.
    pub fn check_spans(&self) -> Result<(), String> {
        let mut prev_end = 0usize;
        for (i, s) in self.adjective_spans.iter().enumerate() {
            if s.start >= s.end || s.end > self.text.len() {
                return Err(format!("span {i} [{}, {}) out of bounds", s.start, s.end));
            }
            if i > 0 && s.start < prev_end {
                return Err(format!("span {i} overlaps or is out of order"));
            }
            match self.text.get(s.start..s.end) {
                Some(slice) if slice == s.surface => {}
                Some(slice) => {
                    return Err(format!(
                        "span {i} surface {:?} does not match text {:?}",
                        s.surface, slice
                    ))
                }
                None => return Err(format!("span {i} is not on a UTF-8 boundary")),
            }
            prev_end = s.end;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Description {
    Triplet(TripletDescription),
    Caption(CaptionDescription),
}

impl Description {
    pub fn render(&self) -> String {
        match self {
            Description::Triplet(t) => t.render(),
            Description::Caption(c) => c.text.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationSubtype {
    IntraStatic,
    IntraDynamic,
    InterStatic,
    InterDynamic,
}

impl RelationSubtype {
    pub fn as_str(&self) -> &'static str {
        match self {
            RelationSubtype::IntraStatic => "intra_static",
            RelationSubtype::IntraDynamic => "intra_dynamic",
            RelationSubtype::InterStatic => "inter_static",
            RelationSubtype::InterDynamic => "inter_dynamic",
        }
    }
}

/// A source description with its video, as read from a triplet or caption corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionRecord {
    pub id: String,
    pub video: VideoRef,
    #[serde(flatten)]
    pub description: Description,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation_subtype: Option<RelationSubtype>,
}

/// The answerability label k(v, x), serialized as `1` or `-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Answerability {
    Answerable,
    Unanswerable,
}

impl Answerability {
    pub fn sign(self) -> i8 {
        match self {
            Answerability::Answerable => 1,
            Answerability::Unanswerable => -1,
        }
    }
}

impl Serialize for Answerability {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i8(self.sign())
    }
}

impl<'de> Deserialize<'de> for Answerability {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match i64::deserialize(d)? {
            1 => Ok(Answerability::Answerable),
            -1 => Ok(Answerability::Unanswerable),
            other => Err(de::Error::custom(format!("k must be 1 or -1, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnanswerabilityKind {
    Object,
    Relation,
    Attribute,
}

impl UnanswerabilityKind {
    pub const ALL: [UnanswerabilityKind; 3] = [
        UnanswerabilityKind::Object,
        UnanswerabilityKind::Relation,
        UnanswerabilityKind::Attribute,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            UnanswerabilityKind::Object => "object",
            UnanswerabilityKind::Relation => "relation",
            UnanswerabilityKind::Attribute => "attribute",
        }
    }
}

impl fmt::Display for UnanswerabilityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One evaluation or training unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAItem {
    pub id: String,
    pub video: VideoRef,
    pub question: String,
    pub gt_answer: String,
    pub k: Answerability,
    #[serde(rename = "kind", default, skip_serializing_if = "Option::is_none")]
    pub unanswerability_kind: Option<UnanswerabilityKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation_subtype: Option<RelationSubtype>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<AlteredDescription>,
}

impl QAItem {
    pub fn answerable(
        id: impl Into<String>,
        video: VideoRef,
        question: impl Into<String>,
        answer: impl Into<String>,
    ) -> Self {
        QAItem {
            id: id.into(),
            video,
            question: question.into(),
            gt_answer: answer.into(),
            k: Answerability::Answerable,
            unanswerability_kind: None,
            relation_subtype: None,
            provenance: None,
        }
    }

    pub fn validate(&self, lexicon: &RefusalLexicon) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("item id is empty".into());
        }
        self.video.validate()?;
        if self.question.trim().is_empty() {
            return Err(format!("item {}: question is empty", self.id));
        }
        match self.k {
            Answerability::Unanswerable => {
                if self.unanswerability_kind.is_none() {
                    return Err(format!("item {}: k = -1 requires a kind", self.id));
                }
                if !lexicon.detect(&self.gt_answer) {
                    return Err(format!(
                        "item {}: unanswerable gt_answer lacks an unanswerable indicator",
                        self.id
                    ));
                }
            }
            Answerability::Answerable => {
                if self.unanswerability_kind.is_some() {
                    return Err(format!("item {}: k = 1 must not carry a kind", self.id));
                }
            }
        }
        if self.relation_subtype.is_some()
            && self.unanswerability_kind != Some(UnanswerabilityKind::Relation)
        {
            return Err(format!(
                "item {}: relation_subtype requires kind = relation",
                self.id
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Triplets,
    Captions,
    QaItems,
}

/// Category tables available to the loaders.
#[derive(Debug, Clone, Default)]
pub struct Tables {
    pub objects: Option<CategoryTable>,
    pub relations: Option<CategoryTable>,
    pub attributes: Option<CategoryTable>,
}

impl Tables {
    pub fn get(&self, kind: TableKind) -> Result<&CategoryTable, CorpusError> {
        match kind {
            TableKind::Object => self.objects.as_ref(),
            TableKind::Relation => self.relations.as_ref(),
            TableKind::Attribute => self.attributes.as_ref(),
        }
        .ok_or(CorpusError::MissingTable(kind))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Corpus {
    Descriptions(Vec<DescriptionRecord>),
    QaItems(Vec<QAItem>),
}

pub fn load_corpus(
    path: &Path,
    format: CorpusFormat,
    tables: &Tables,
) -> Result<Corpus, CorpusError> {
    let file = std::fs::File::open(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    read_corpus(std::io::BufReader::new(file), format, tables)
}

pub fn read_corpus(
    input: impl BufRead,
    format: CorpusFormat,
    tables: &Tables,
) -> Result<Corpus, CorpusError> {
    match format {
        CorpusFormat::Triplets | CorpusFormat::Captions => {
            read_descriptions(input, format, tables).map(Corpus::Descriptions)
        }
        CorpusFormat::QaItems => {
            read_qa_items(input, &RefusalLexicon::default()).map(Corpus::QaItems)
        }
    }
}

pub fn read_descriptions(
    input: impl BufRead,
    format: CorpusFormat,
    tables: &Tables,
) -> Result<Vec<DescriptionRecord>, CorpusError> {
    let rows = jsonl::read_from::<DescriptionRecord>(input)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let mut rec = row.value;
        rec.video
            .validate()
            .map_err(|r| CorpusError::MalformedLine(row.line, r))?;
        if rec.id.trim().is_empty() {
            return Err(CorpusError::MalformedLine(
                row.line,
                "record id is empty".into(),
            ));
        }
        match (&mut rec.description, format) {
            (Description::Triplet(t), CorpusFormat::Triplets) => {
                let objects = tables.get(TableKind::Object)?;
                let relations = tables.get(TableKind::Relation)?;
                resolve_element(&mut t.source_object, objects, row.line)?;
                resolve_element(&mut t.relation, relations, row.line)?;
                resolve_element(&mut t.target_object, objects, row.line)?;
            }
            (Description::Caption(c), CorpusFormat::Captions) => {
                let attributes = tables.get(TableKind::Attribute)?;
                c.check_spans()
                    .map_err(|r| CorpusError::MalformedLine(row.line, r))?;
                resolve_spans(c, attributes)?;
            }
            _ => {
                return Err(CorpusError::MalformedLine(
                    row.line,
                    format!("record does not match the {format:?} format"),
                ))
            }
        }
        if !seen.insert(rec.id.clone()) {
            return Err(CorpusError::DuplicateId(rec.id));
        }
        out.push(rec);
    }
    Ok(out)
}

fn resolve_element(
    el: &mut Element,
    table: &CategoryTable,
    line: usize,
) -> Result<(), CorpusError> {
    if el.label.trim().is_empty() {
        return Err(CorpusError::MalformedLine(line, "empty label".into()));
    }
    if el.category.is_empty() {
        el.category = table
            .category_of(&el.label)
            .ok_or_else(|| CorpusError::UnknownCategory(el.label.clone()))?
            .to_string();
    } else if !table.is_member(&el.category, &el.label) {
        return Err(CorpusError::UnknownCategory(el.label.clone()));
    }
    Ok(())
}

/// Fill missing span categories from the attribute table. Adjectives no
/// category claims fall into "Uncategorized".
pub fn resolve_spans(
    caption: &mut CaptionDescription,
    attributes: &CategoryTable,
) -> Result<(), CorpusError> {
    for span in &mut caption.adjective_spans {
        if span.category.is_empty() {
            span.category = attributes
                .category_of(&span.lookup_key())
                .unwrap_or(UNCATEGORIZED)
                .to_string();
        } else if !attributes.contains_category(&span.category) {
            return Err(CorpusError::UnknownCategory(span.surface.clone()));
        }
    }
    Ok(())
}

pub fn load_qa_items(path: &Path) -> Result<Vec<QAItem>, CorpusError> {
    load_qa_items_with(path, &RefusalLexicon::default())
}

pub fn load_qa_items_with(
    path: &Path,
    lexicon: &RefusalLexicon,
) -> Result<Vec<QAItem>, CorpusError> {
    let file = std::fs::File::open(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    read_qa_items(std::io::BufReader::new(file), lexicon)
}

pub fn read_qa_items(
    input: impl BufRead,
    lexicon: &RefusalLexicon,
) -> Result<Vec<QAItem>, CorpusError> {
    let rows = jsonl::read_from::<QAItem>(input)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        row.value
            .validate(lexicon)
            .map_err(|r| CorpusError::MalformedLine(row.line, r))?;
        if !seen.insert(row.value.id.clone()) {
            return Err(CorpusError::DuplicateId(row.value.id));
        }
        out.push(row.value);
    }
    Ok(out)
}

pub fn write_qa_items(path: &Path, items: &[QAItem]) -> Result<usize, CorpusError> {
    Ok(jsonl::write_path(path, items)?)
}

pub fn write_descriptions(
    path: &Path,
    records: &[DescriptionRecord],
) -> Result<usize, CorpusError> {
    Ok(jsonl::write_path(path, records)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn table(kind: TableKind, cats: &[(&str, &[&str])]) -> CategoryTable {
        CategoryTable::new(
            kind,
            cats.iter()
                .map(|(n, m)| (n.to_string(), m.iter().map(|s| s.to_string()).collect()))
                .collect(),
        )
        .unwrap()
    }

    fn triplet_tables() -> Tables {
        Tables {
            objects: Some(table(
                TableKind::Object,
                &[
                    (
                        "Independent Actors",
                        &["police officer", "match official", "soccer player"],
                    ),
                    ("Groups", &["pedestrians", "spectators"]),
                ],
            )),
            relations: Some(table(
                TableKind::Relation,
                &[("Static Relationships", &["looking at", "standing behind"])],
            )),
            attributes: None,
        }
    }

    fn video_json(id: &str) -> String {
        format!(r#"{{"id":"{id}","source":"moma","frames":["f/{id}/0.jpg"]}}"#)
    }

    #[test]
    fn loads_triplets_and_resolves_categories() {
        let text = [
            format!(r#"{{"id":"t1","video":{},"source_object":"police officer","relation":"looking at","target_object":"pedestrians"}}"#, video_json("v1")),
            format!(r#"{{"id":"t2","video":{},"source_object":{{"label":"match official","category":"Independent Actors"}},"relation":"standing behind","target_object":"spectators"}}"#, video_json("v2")),
            format!(r#"{{"id":"t3","video":{},"source_object":"soccer player","relation":"looking at","target_object":"match official"}}"#, video_json("v3")),
        ]
        .join("\n");
        let recs = read_descriptions(Cursor::new(text), CorpusFormat::Triplets, &triplet_tables())
            .unwrap();
        assert_eq!(recs.len(), 3);
        let Description::Triplet(t) = &recs[0].description else {
            panic!()
        };
        assert_eq!(t.relation.category, "Static Relationships");
        assert_eq!(t.target_object.category, "Groups");
        assert_eq!(t.render(), "police officer looking at pedestrians");
    }

    #[test]
    fn unknown_label_is_rejected() {
        let text = format!(
            r#"{{"id":"t1","video":{},"source_object":"unicorn","relation":"looking at","target_object":"pedestrians"}}"#,
            video_json("v1")
        );
        let err = read_descriptions(Cursor::new(text), CorpusFormat::Triplets, &triplet_tables())
            .unwrap_err();
        assert!(matches!(err, CorpusError::UnknownCategory(l) if l == "unicorn"));
    }

    #[test]
    fn wrong_declared_category_is_rejected() {
        let text = format!(
            r#"{{"id":"t1","video":{},"source_object":{{"label":"police officer","category":"Groups"}},"relation":"looking at","target_object":"pedestrians"}}"#,
            video_json("v1")
        );
        assert!(matches!(
            read_descriptions(Cursor::new(text), CorpusFormat::Triplets, &triplet_tables()),
            Err(CorpusError::UnknownCategory(_))
        ));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let line = format!(
            r#"{{"id":"t1","video":{},"source_object":"police officer","relation":"looking at","target_object":"pedestrians"}}"#,
            video_json("v1")
        );
        let text = format!("{line}\n{line}\n");
        assert!(matches!(
            read_descriptions(Cursor::new(text), CorpusFormat::Triplets, &triplet_tables()),
            Err(CorpusError::DuplicateId(id)) if id == "t1"
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "\n{not json}\n";
        assert!(matches!(
            read_descriptions(Cursor::new(text), CorpusFormat::Triplets, &triplet_tables()),
            Err(CorpusError::MalformedLine(2, _))
        ));
    }

    #[test]
    fn attribute_table_requires_the_nine_categories() {
        let mut cats: BTreeMap<String, Vec<String>> = ATTRIBUTE_CATEGORIES
            .iter()
            .map(|c| (c.to_string(), vec![format!("{c}-a").to_lowercase()]))
            .collect();
        assert!(CategoryTable::new(TableKind::Attribute, cats.clone()).is_ok());
        cats.remove("Human Status");
        assert!(matches!(
            CategoryTable::new(TableKind::Attribute, cats),
            Err(CorpusError::WrongCategorySet { .. })
        ));
    }

    #[test]
    fn object_table_with_two_members_loads() {
        let json = r#"{"kind":"object","categories":{"Animal":["cat","dog"]}}"#;
        let t = CategoryTable::from_json(json, TableKind::Object).unwrap();
        assert_eq!(t.members("Animal").unwrap().len(), 2);
        assert_eq!(t.category_of("dog"), Some("Animal"));
        assert!(matches!(
            CategoryTable::from_json(json, TableKind::Relation),
            Err(CorpusError::KindMismatch { .. })
        ));
    }

    #[test]
    fn table_errors() {
        let dup = r#"{"kind":"object","categories":{"A":["cat"],"B":["cat"]}}"#;
        assert!(matches!(
            CategoryTable::from_json(dup, TableKind::Object),
            Err(CorpusError::DuplicateMember(m)) if m == "cat"
        ));
        let empty = r#"{"kind":"object","categories":{"A":[]}}"#;
        assert!(matches!(
            CategoryTable::from_json(empty, TableKind::Object),
            Err(CorpusError::EmptyCategory(n)) if n == "A"
        ));
    }

    #[test]
    fn caption_spans_are_validated() {
        let attrs = {
            let mut cats: BTreeMap<String, Vec<String>> = ATTRIBUTE_CATEGORIES
                .iter()
                .map(|c| (c.to_string(), vec![format!("x-{c}").to_lowercase()]))
                .collect();
            cats.insert("Color".into(), vec!["red".into(), "blue".into()]);
            CategoryTable::new(TableKind::Attribute, cats).unwrap()
        };
        let tables = Tables {
            attributes: Some(attrs),
            ..Default::default()
        };
        let ok = format!(
            r#"{{"id":"c1","video":{},"text":"a red car passes","adjective_spans":[{{"start":2,"end":5,"surface":"red"}}]}}"#,
            video_json("v1")
        );
        let recs = read_descriptions(Cursor::new(ok), CorpusFormat::Captions, &tables).unwrap();
        let Description::Caption(c) = &recs[0].description else {
            panic!()
        };
        assert_eq!(c.adjective_spans[0].category, "Color");

        let bad = format!(
            r#"{{"id":"c1","video":{},"text":"a red car","adjective_spans":[{{"start":2,"end":6,"surface":"red"}}]}}"#,
            video_json("v1")
        );
        assert!(matches!(
            read_descriptions(Cursor::new(bad), CorpusFormat::Captions, &tables),
            Err(CorpusError::MalformedLine(1, _))
        ));
    }

    #[test]
    fn qa_item_invariants() {
        let lex = RefusalLexicon::default();
        let v = VideoRef {
            id: "v".into(),
            source_dataset: "s".into(),
            frame_uris: vec![],
            duration_s: None,
        };
        let mut item = QAItem::answerable("a", v, "What color is the car?", "red");
        assert!(item.validate(&lex).is_ok());
        item.k = Answerability::Unanswerable;
        assert!(item.validate(&lex).is_err());
        item.unanswerability_kind = Some(UnanswerabilityKind::Object);
        assert!(item.validate(&lex).is_err());
        item.gt_answer = "The question is unanswerable because there is no car.".into();
        assert!(item.validate(&lex).is_ok());
        let json = serde_json::to_string(&item).unwrap();
        assert!(json.contains(r#""k":-1"#));
        assert!(json.contains(r#""kind":"object""#));
        let back: QAItem = serde_json::from_str(&json).unwrap();
        assert_eq!(back, item);
    }
}
