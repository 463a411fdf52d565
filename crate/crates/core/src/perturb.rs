//! The altering process: replace exactly one element of a description with a
//! different member of the same category.
//!
//! Triplets change one of source object, relation or target object; captions
//! change one categorized adjective span, substituted in place.

use crate::corpus::{
    resolve_spans, AdjectiveSpan, CaptionDescription, CategoryTable, CorpusError, Description,
    DescriptionRecord, TableKind, Tables, TripletDescription, UnanswerabilityKind,
};
use crate::rng::{item_rng, ItemRng};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PerturbError {
    #[error("description has no eligible site")]
    NoEligibleSite,
    #[error("category {0:?} has no other member to substitute")]
    SingletonCategory(String),
    #[error("every candidate in category {0:?} is lexically too close to {1:?}")]
    AllCandidatesGuarded(String, String),
    #[error("{0}")]
    Table(String),
}

impl From<CorpusError> for PerturbError {
    fn from(e: CorpusError) -> Self {
        PerturbError::Table(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlterationKind {
    SourceObject,
    Relation,
    TargetObject,
    Attribute,
}

impl AlterationKind {
    pub fn unanswerability_kind(self) -> UnanswerabilityKind {
        match self {
            AlterationKind::SourceObject | AlterationKind::TargetObject => {
                UnanswerabilityKind::Object
            }
            AlterationKind::Relation => UnanswerabilityKind::Relation,
            AlterationKind::Attribute => UnanswerabilityKind::Attribute,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AlterationKind::SourceObject => "source_object",
            AlterationKind::Relation => "relation",
            AlterationKind::TargetObject => "target_object",
            AlterationKind::Attribute => "attribute",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteRange {
    pub start: usize,
    pub end: usize,
}

/// The change `c`: which element moved from `original` to `replacement`.
/// For attributes, `span` is the byte range of the adjective in the base text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alteration {
    pub kind: AlterationKind,
    pub original: String,
    pub replacement: String,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<ByteRange>,
}

impl Alteration {
    /// Human-readable rendering used in generation prompts.
    pub fn describe(&self) -> String {
        let what = match self.kind {
            AlterationKind::SourceObject => "source object",
            AlterationKind::Relation => "relation",
            AlterationKind::TargetObject => "target object",
            AlterationKind::Attribute => "attribute",
        };
        format!(
            "the {what} \"{}\" was replaced with \"{}\" (category: {}); \"{}\" does not appear in the video",
            self.original, self.replacement, self.category, self.replacement
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlteredDescription {
    pub base_id: String,
    #[serde(default)]
    pub variant: u32,
    pub altered: Description,
    pub alteration: Alteration,
}

impl AlteredDescription {
    /// Identifier of this output, distinct across variants of one base record.
    pub fn derived_id(&self) -> String {
        derived_id(&self.base_id, self.variant)
    }

    /// Reconstruct the base description by undoing the alteration.
    pub fn original(&self) -> Description {
        let a = &self.alteration;
        match &self.altered {
            Description::Triplet(t) => {
                let mut t = t.clone();
                match a.kind {
                    AlterationKind::SourceObject => t.source_object.label = a.original.clone(),
                    AlterationKind::Relation => t.relation.label = a.original.clone(),
                    AlterationKind::TargetObject => t.target_object.label = a.original.clone(),
                    AlterationKind::Attribute => {}
                }
                Description::Triplet(t)
            }
            Description::Caption(c) => {
                let Some(range) = a.span else {
                    return Description::Caption(c.clone());
                };
                let Some(idx) = c
                    .adjective_spans
                    .iter()
                    .position(|s| s.start == range.start)
                else {
                    return Description::Caption(c.clone());
                };
                let altered_span = &c.adjective_spans[idx];
                let surface = match_case(&a.original, &altered_span.surface);
                let (text, spans) = substitute(c, idx, &surface, Some(a.original.clone()));
                Description::Caption(CaptionDescription {
                    text,
                    adjective_spans: spans,
                })
            }
        }
    }
}

pub fn derived_id(base_id: &str, variant: u32) -> String {
    format!("{base_id}#{variant}")
}

/// Where an alteration is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Site {
    SourceObject,
    Relation,
    TargetObject,
    /// Index into the caption's adjective spans.
    Attribute(usize),
}

fn category_size(table: &CategoryTable, category: &str) -> usize {
    table.members(category).map_or(0, BTreeSet::len)
}

/// Sites whose category offers at least one alternative member.
pub fn eligible_sites(d: &Description, tables: &Tables) -> Result<Vec<Site>, PerturbError> {
    let mut sites = Vec::new();
    match d {
        Description::Triplet(t) => {
            let objects = tables.get(TableKind::Object)?;
            let relations = tables.get(TableKind::Relation)?;
            if category_size(objects, &t.source_object.category) >= 2 {
                sites.push(Site::SourceObject);
            }
            if category_size(relations, &t.relation.category) >= 2 {
                sites.push(Site::Relation);
            }
            if category_size(objects, &t.target_object.category) >= 2 {
                sites.push(Site::TargetObject);
            }
        }
        Description::Caption(c) => {
            let attributes = tables.get(TableKind::Attribute)?;
            for (i, span) in c.adjective_spans.iter().enumerate() {
                if category_size(attributes, &span.category) >= 2 {
                    sites.push(Site::Attribute(i));
                }
            }
        }
    }
    Ok(sites)
}

/// Choose one eligible site uniformly.
pub fn select_site(
    d: &Description,
    tables: &Tables,
    rng: &mut ItemRng,
) -> Result<Site, PerturbError> {
    let sites = eligible_sites(d, tables)?;
    if sites.is_empty() {
        return Err(PerturbError::NoEligibleSite);
    }
    Ok(sites[rng.random_range(0..sites.len())])
}

/// Symmetric synonym table consulted by [`lexical_guard`].
#[derive(Debug, Clone, Default)]
pub struct Synonyms {
    map: HashMap<String, HashSet<String>>,
}

impl Synonyms {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, a: &str, b: &str) {
        let (a, b) = (a.trim().to_lowercase(), b.trim().to_lowercase());
        self.map.entry(a.clone()).or_default().insert(b.clone());
        self.map.entry(b).or_default().insert(a);
    }

    pub fn are_synonyms(&self, a: &str, b: &str) -> bool {
        self.map
            .get(&a.trim().to_lowercase())
            .is_some_and(|s| s.contains(&b.trim().to_lowercase()))
    }

    /// Load `{"word": ["synonym", ...], ...}`.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let raw: HashMap<String, Vec<String>> = serde_json::from_str(text)?;
        let mut s = Synonyms::new();
        for (word, syns) in raw {
            for syn in syns {
                s.insert(&word, &syn);
            }
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// Crude suffix-stripping stem, enough to catch inflections of one word.
fn stem(word: &str) -> String {
    let mut w = word.to_lowercase();
    for suffix in ["ing", "est", "ed", "er", "es", "ly", "s"] {
        if w.len() >= suffix.len() + 3 && w.ends_with(suffix) {
            w.truncate(w.len() - suffix.len());
            break;
        }
    }
    let bytes = w.as_bytes();
    let n = bytes.len();
    if n >= 4 && bytes[n - 1] == bytes[n - 2] && !b"aeiou".contains(&bytes[n - 1]) {
        w.truncate(n - 1);
    }
    w
}

fn stems(label: &str) -> Vec<String> {
    label.split_whitespace().map(stem).collect()
}

/// `false` when `replacement` is the same word as `original`, a configured
/// synonym, or an inflection of it.
pub fn lexical_guard(original: &str, replacement: &str, synonyms: &Synonyms) -> bool {
    let (o, r) = (
        original.trim().to_lowercase(),
        replacement.trim().to_lowercase(),
    );
    if o == r || synonyms.are_synonyms(&o, &r) {
        return false;
    }
    stems(&o) != stems(&r)
}

fn pick_replacement(
    table: &CategoryTable,
    category: &str,
    original: &str,
    synonyms: &Synonyms,
    rng: &mut ItemRng,
) -> Result<String, PerturbError> {
    let members = table
        .members(category)
        .ok_or_else(|| PerturbError::Table(format!("unknown category {category:?}")))?;
    let others: Vec<&String> = members
        .iter()
        .filter(|m| !m.eq_ignore_ascii_case(original.trim()))
        .collect();
    if others.is_empty() {
        return Err(PerturbError::SingletonCategory(category.to_string()));
    }
    let candidates: Vec<&String> = others
        .into_iter()
        .filter(|m| lexical_guard(original, m, synonyms))
        .collect();
    if candidates.is_empty() {
        return Err(PerturbError::AllCandidatesGuarded(
            category.to_string(),
            original.to_string(),
        ));
    }
    Ok(candidates[rng.random_range(0..candidates.len())].clone())
}

/// Carry the original's leading capital over to the replacement.
fn match_case(replacement: &str, like: &str) -> String {
    let starts_upper = like.chars().next().is_some_and(char::is_uppercase);
    if !starts_upper {
        return replacement.to_string();
    }
    let mut chars = replacement.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Replace span `idx` with `surface`, shifting later spans.
fn substitute(
    c: &CaptionDescription,
    idx: usize,
    surface: &str,
    lemma: Option<String>,
) -> (String, Vec<AdjectiveSpan>) {
    let target = &c.adjective_spans[idx];
    let mut text = String::with_capacity(c.text.len() + surface.len());
    text.push_str(&c.text[..target.start]);
    text.push_str(surface);
    text.push_str(&c.text[target.end..]);
    let old_len = target.end - target.start;
    let new_len = surface.len();
    let spans = c
        .adjective_spans
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if i == idx {
                AdjectiveSpan {
                    start: s.start,
                    end: s.start + new_len,
                    surface: surface.to_string(),
                    category: s.category.clone(),
                    lemma: lemma.clone(),
                }
            } else if s.start >= target.end {
                AdjectiveSpan {
                    start: s.start + new_len - old_len,
                    end: s.end + new_len - old_len,
                    ..s.clone()
                }
            } else {
                s.clone()
            }
        })
        .collect();
    (text, spans)
}

/// Apply one same-category replacement at `site`.
pub fn alter(
    d: &Description,
    site: Site,
    tables: &Tables,
    synonyms: &Synonyms,
    rng: &mut ItemRng,
) -> Result<(Description, Alteration), PerturbError> {
    match (d, site) {
        (Description::Triplet(t), Site::SourceObject | Site::Relation | Site::TargetObject) => {
            let (kind, element, table) = match site {
                Site::SourceObject => (
                    AlterationKind::SourceObject,
                    &t.source_object,
                    tables.get(TableKind::Object)?,
                ),
                Site::Relation => (
                    AlterationKind::Relation,
                    &t.relation,
                    tables.get(TableKind::Relation)?,
                ),
                _ => (
                    AlterationKind::TargetObject,
                    &t.target_object,
                    tables.get(TableKind::Object)?,
                ),
            };
            if category_size(table, &element.category) < 2 {
                return Err(PerturbError::SingletonCategory(element.category.clone()));
            }
            let replacement =
                pick_replacement(table, &element.category, &element.label, synonyms, rng)?;
            let mut altered: TripletDescription = t.clone();
            let slot = match kind {
                AlterationKind::SourceObject => &mut altered.source_object,
                AlterationKind::Relation => &mut altered.relation,
                _ => &mut altered.target_object,
            };
            slot.label = replacement.clone();
            let alteration = Alteration {
                kind,
                original: element.label.clone(),
                replacement,
                category: element.category.clone(),
                span: None,
            };
            Ok((Description::Triplet(altered), alteration))
        }
        (Description::Caption(c), Site::Attribute(idx)) => {
            let span = c
                .adjective_spans
                .get(idx)
                .ok_or(PerturbError::NoEligibleSite)?;
            let table = tables.get(TableKind::Attribute)?;
            if category_size(table, &span.category) < 2 {
                return Err(PerturbError::SingletonCategory(span.category.clone()));
            }
            let original = span.lookup_key();
            let replacement = pick_replacement(table, &span.category, &original, synonyms, rng)?;
            let surface = match_case(&replacement, &span.surface);
            let (text, spans) = substitute(c, idx, &surface, Some(replacement.clone()));
            let alteration = Alteration {
                kind: AlterationKind::Attribute,
                original,
                replacement,
                category: span.category.clone(),
                span: Some(ByteRange {
                    start: span.start,
                    end: span.end,
                }),
            };
            Ok((
                Description::Caption(CaptionDescription {
                    text,
                    adjective_spans: spans,
                }),
                alteration,
            ))
        }
        _ => Err(PerturbError::NoEligibleSite),
    }
}

/// Adjective tagger interface: text in, spans with lemmas out. Categories are
/// resolved afterwards against the attribute table.
pub trait AdjectiveTagger: Send + Sync {
    fn tag(&self, text: &str) -> Vec<AdjectiveSpan>;
}

/// Closed-lexicon tagger: matches known adjectives (up to three words),
/// longest match first.
#[derive(Debug, Clone, Default)]
pub struct LexiconTagger {
    entries: HashMap<String, String>,
    max_words: usize,
}

impl LexiconTagger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every member of the attribute table becomes a lexicon entry.
    pub fn from_table(attributes: &CategoryTable) -> Self {
        let mut t = Self::new();
        for (_, members) in attributes.categories() {
            for m in members {
                t.add(m, m);
            }
        }
        t
    }

    pub fn add(&mut self, surface: &str, lemma: &str) {
        let key = surface.trim().to_lowercase();
        self.max_words = self.max_words.max(key.split_whitespace().count());
        self.entries.insert(key, lemma.trim().to_lowercase());
    }
}

fn word_tokens(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        let is_word = ch.is_alphabetic() || ch == '-' || ch == '\'';
        match (is_word, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, text.len()));
    }
    out
}

impl AdjectiveTagger for LexiconTagger {
    fn tag(&self, text: &str) -> Vec<AdjectiveSpan> {
        let tokens = word_tokens(text);
        let mut spans = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let mut matched = None;
            for n in (1..=self.max_words.min(tokens.len() - i)).rev() {
                let window = &tokens[i..i + n];
                let single_spaced = window.windows(2).all(|w| &text[w[0].1..w[1].0] == " ");
                if !single_spaced {
                    continue;
                }
                let (start, end) = (window[0].0, window[n - 1].1);
                if let Some(lemma) = self.entries.get(&text[start..end].to_lowercase()) {
                    matched = Some((n, start, end, lemma.clone()));
                    break;
                }
            }
            match matched {
                Some((n, start, end, lemma)) => {
                    spans.push(AdjectiveSpan {
                        start,
                        end,
                        surface: text[start..end].to_string(),
                        category: String::new(),
                        lemma: Some(lemma),
                    });
                    i += n;
                }
                None => i += 1,
            }
        }
        spans
    }
}

/// Tag a caption that arrived without spans.
pub fn ensure_tagged(
    caption: &mut CaptionDescription,
    tagger: &dyn AdjectiveTagger,
    attributes: &CategoryTable,
) -> Result<(), PerturbError> {
    if caption.adjective_spans.is_empty() {
        caption.adjective_spans = tagger.tag(&caption.text);
        resolve_spans(caption, attributes)?;
    }
    Ok(())
}

/// Seeded driver over a corpus.
pub struct Perturber<'a> {
    pub tables: &'a Tables,
    pub synonyms: &'a Synonyms,
    pub seed: u64,
}

impl Perturber<'_> {
    pub fn perturb(
        &self,
        record: &DescriptionRecord,
        variant: u32,
    ) -> Result<AlteredDescription, PerturbError> {
        let mut rng = item_rng(self.seed, &derived_id(&record.id, variant));
        let site = select_site(&record.description, self.tables, &mut rng)?;
        let (altered, alteration) = alter(
            &record.description,
            site,
            self.tables,
            self.synonyms,
            &mut rng,
        )?;
        Ok(AlteredDescription {
            base_id: record.id.clone(),
            variant,
            altered,
            alteration,
        })
    }

    /// Perturb every record `per_description` times, in parallel. Results come
    /// back in (record order, variant) order regardless of scheduling.
    pub fn perturb_all(
        &self,
        records: &[DescriptionRecord],
        per_description: u32,
    ) -> Vec<(String, Result<AlteredDescription, PerturbError>)> {
        let jobs: Vec<(&DescriptionRecord, u32)> = records
            .iter()
            .flat_map(|r| (0..per_description).map(move |v| (r, v)))
            .collect();
        jobs.par_iter()
            .map(|(r, v)| (derived_id(&r.id, *v), self.perturb(r, *v)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Element, ATTRIBUTE_CATEGORIES};
    use std::collections::BTreeMap;

    fn tables() -> Tables {
        let objects = CategoryTable::new(
            TableKind::Object,
            BTreeMap::from([
                (
                    "Independent Actors".to_string(),
                    vec!["police officer".into(), "match official".into()],
                ),
                ("Groups".to_string(), vec!["pedestrians".into()]),
            ]),
        )
        .unwrap();
        let relations = CategoryTable::new(
            TableKind::Relation,
            BTreeMap::from([(
                "Static".to_string(),
                vec!["looking at".into(), "standing behind".into()],
            )]),
        )
        .unwrap();
        let mut attrs: BTreeMap<String, Vec<String>> = ATTRIBUTE_CATEGORIES
            .iter()
            .map(|c| {
                (
                    c.to_string(),
                    vec![format!("only-{}", c.to_lowercase().replace(' ', "-"))],
                )
            })
            .collect();
        attrs.insert(
            "Color".into(),
            vec!["red".into(), "blue".into(), "green".into()],
        );
        attrs.insert(
            "Size".into(),
            vec!["big".into(), "large".into(), "small".into()],
        );
        let attributes = CategoryTable::new(TableKind::Attribute, attrs).unwrap();
        Tables {
            objects: Some(objects),
            relations: Some(relations),
            attributes: Some(attributes),
        }
    }

    fn police() -> Description {
        Description::Triplet(TripletDescription {
            source_object: Element::new("police officer", "Independent Actors"),
            relation: Element::new("looking at", "Static"),
            target_object: Element::new("pedestrians", "Groups"),
        })
    }

    fn caption(text: &str, tables: &Tables) -> Description {
        let mut c = CaptionDescription {
            text: text.into(),
            adjective_spans: vec![],
        };
        let attrs = tables.attributes.as_ref().unwrap();
        ensure_tagged(&mut c, &LexiconTagger::from_table(attrs), attrs).unwrap();
        Description::Caption(c)
    }

    #[test]
    fn relation_with_one_alternative_is_forced() {
        let t = tables();
        let mut rng = item_rng(1, "x");
        let (d, a) = alter(&police(), Site::Relation, &t, &Synonyms::new(), &mut rng).unwrap();
        assert_eq!(a.replacement, "standing behind");
        assert_eq!(a.original, "looking at");
        assert_eq!(d.render(), "police officer standing behind pedestrians");
    }

    #[test]
    fn source_object_change_keeps_other_elements() {
        let t = tables();
        let mut rng = item_rng(1, "x");
        let (d, a) = alter(
            &police(),
            Site::SourceObject,
            &t,
            &Synonyms::new(),
            &mut rng,
        )
        .unwrap();
        let (Description::Triplet(new), Description::Triplet(old)) = (&d, police()) else {
            panic!()
        };
        assert_eq!(new.source_object.label, "match official");
        assert_eq!(new.relation, old.relation);
        assert_eq!(new.target_object, old.target_object);
        assert_eq!(a.kind, AlterationKind::SourceObject);
    }

    #[test]
    fn singleton_category_is_not_eligible() {
        let t = tables();
        let sites = eligible_sites(&police(), &t).unwrap();
        assert_eq!(sites, vec![Site::SourceObject, Site::Relation]);
        let mut rng = item_rng(1, "x");
        assert_eq!(
            alter(
                &police(),
                Site::TargetObject,
                &t,
                &Synonyms::new(),
                &mut rng
            ),
            Err(PerturbError::SingletonCategory("Groups".into()))
        );
    }

    #[test]
    fn caption_with_one_adjective_selects_it() {
        let t = tables();
        let d = caption("A red car drives past the gate.", &t);
        let mut rng = item_rng(3, "c");
        assert_eq!(select_site(&d, &t, &mut rng).unwrap(), Site::Attribute(0));
    }

    #[test]
    fn caption_whose_adjective_category_is_singleton_has_no_site() {
        let t = tables();
        let d = caption("An only-shape block sits there.", &t);
        let Description::Caption(c) = &d else {
            panic!()
        };
        assert_eq!(c.adjective_spans.len(), 1);
        assert_eq!(c.adjective_spans[0].category, "Shape");
        let mut rng = item_rng(3, "c");
        assert_eq!(
            select_site(&d, &t, &mut rng),
            Err(PerturbError::NoEligibleSite)
        );
    }

    #[test]
    fn caption_substitution_reoffsets_later_spans() {
        let t = tables();
        let d = caption("The Red car and a small dog.", &t);
        let mut rng = item_rng(5, "c");
        let (new, a) = alter(&d, Site::Attribute(0), &t, &Synonyms::new(), &mut rng).unwrap();
        let Description::Caption(c) = &new else {
            panic!()
        };
        c.check_spans().unwrap();
        assert!(a.replacement == "blue" || a.replacement == "green");
        let expected_surface = if a.replacement == "blue" {
            "Blue"
        } else {
            "Green"
        };
        assert_eq!(c.adjective_spans[0].surface, expected_surface);
        assert_eq!(
            &c.text[c.adjective_spans[1].start..c.adjective_spans[1].end],
            "small"
        );
        let ad = AlteredDescription {
            base_id: "c".into(),
            variant: 0,
            altered: new.clone(),
            alteration: a,
        };
        assert_eq!(ad.original().render(), "The Red car and a small dog.");
    }

    #[test]
    fn lexical_guard_cases() {
        let mut syn = Synonyms::new();
        assert!(!lexical_guard("red", "red", &syn));
        assert!(!lexical_guard("Red", "red", &syn));
        syn.insert("big", "large");
        assert!(!lexical_guard("big", "large", &syn));
        assert!(!lexical_guard("large", "big", &syn));
        assert!(lexical_guard("walking", "sitting", &Synonyms::new()));
        assert!(!lexical_guard("walking", "walked", &Synonyms::new()));
        assert!(!lexical_guard("big", "bigger", &Synonyms::new()));
    }

    #[test]
    fn synonyms_are_skipped_when_sampling() {
        let t = tables();
        let mut syn = Synonyms::new();
        syn.insert("big", "large");
        let d = caption("a big house", &t);
        for s in 0..50 {
            let mut rng = item_rng(s, "h");
            let (_, a) = alter(&d, Site::Attribute(0), &t, &syn, &mut rng).unwrap();
            assert_eq!(a.replacement, "small");
        }
    }

    #[test]
    fn tagger_prefers_longest_match() {
        let mut tagger = LexiconTagger::new();
        tagger.add("light blue", "light blue");
        tagger.add("blue", "blue");
        let spans = tagger.tag("A light blue shirt and a blue hat.");
        let surfaces: Vec<_> = spans.iter().map(|s| s.surface.as_str()).collect();
        assert_eq!(surfaces, ["light blue", "blue"]);
    }

    #[test]
    fn perturbation_is_order_independent() {
        let t = tables();
        let syn = Synonyms::new();
        let p = Perturber {
            tables: &t,
            synonyms: &syn,
            seed: 42,
        };
        let recs: Vec<DescriptionRecord> = (0..20)
            .map(|i| DescriptionRecord {
                id: format!("r{i}"),
                video: crate::corpus::VideoRef {
                    id: format!("v{i}"),
                    source_dataset: "moma".into(),
                    frame_uris: vec![],
                    duration_s: None,
                },
                description: police(),
                relation_subtype: None,
            })
            .collect();
        let forward = p.perturb_all(&recs, 2);
        let mut reversed: Vec<_> = recs.iter().rev().cloned().collect();
        let backward = p.perturb_all(&reversed, 2);
        reversed.reverse();
        for (id, res) in &forward {
            let other = backward.iter().find(|(i, _)| i == id).unwrap();
            assert_eq!(res, &other.1);
        }
    }
}
