//! Documents, mentions, entity annotations and their on-disk JSON Lines form.
//!
//! Mention positions and lengths are measured in Unicode scalar values
//! (`char`s), never bytes.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::LazyLock;

use percent_encoding::percent_decode_str;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

impl Document {
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

/// An immutable, validated collection of documents indexed by id.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.docs == other.docs
    }
}

impl Corpus {
    pub fn new(docs: Vec<Document>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            if doc.id.is_empty() {
                return Err(Error::invalid(format!("document #{i} has an empty id")));
            }
            if doc.text.is_empty() {
                return Err(Error::invalid(format!("document {:?} has empty text", doc.id)));
            }
            if by_id.insert(doc.id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate document id {:?}", doc.id)));
            }
        }
        Ok(Self { docs, by_id })
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.docs[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

/// Collapses every run of whitespace into a single ASCII space.
pub fn normalize_whitespace(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_ws = false;
    for c in s.chars() {
        if c.is_whitespace() {
            if !in_ws {
                out.push(' ');
            }
            in_ws = true;
        } else {
            out.push(c);
            in_ws = false;
        }
    }
    out
}

/// Lower-cased, whitespace-normalized surface used as a lookup key.
pub fn surface_key(s: &str) -> String {
    normalize_whitespace(s.trim()).to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mention {
    pub doc_id: String,
    pub surface: String,
    /// Character offset of the surface start within the document text.
    pub position: usize,
}

impl Mention {
    pub fn new(doc_id: impl Into<String>, position: usize, surface: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            surface: surface.into(),
            position,
        }
    }

    pub fn char_len(&self) -> usize {
        self.surface.chars().count()
    }

    /// Exclusive end offset.
    pub fn end(&self) -> usize {
        self.position + self.char_len()
    }

    pub fn key(&self) -> MentionKey {
        MentionKey {
            doc_id: self.doc_id.clone(),
            position: self.position,
            surface: normalize_whitespace(&self.surface),
        }
    }

    pub fn overlaps(&self, other: &Mention) -> bool {
        self.doc_id == other.doc_id && self.position < other.end() && other.position < self.end()
    }

    /// Checks the offset and surface against the document text.
    pub fn validate(&self, doc: &Document) -> std::result::Result<(), String> {
        if self.surface.trim().is_empty() {
            return Err("surface is empty".into());
        }
        let len = self.char_len();
        let text_len = doc.char_len();
        if self.position + len > text_len {
            return Err(format!(
                "span [{}, {}) exceeds document length {text_len}",
                self.position,
                self.position + len
            ));
        }
        let slice: String = doc.text.chars().skip(self.position).take(len).collect();
        if normalize_whitespace(&slice) != normalize_whitespace(&self.surface) {
            return Err(format!(
                "surface {:?} does not match document text {slice:?} at offset {}",
                self.surface, self.position
            ));
        }
        Ok(())
    }
}

/// Identity of a mention under strong alignment: document, offset and
/// whitespace-normalized surface.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MentionKey {
    pub doc_id: String,
    pub position: usize,
    pub surface: String,
}

/// A knowledge-base entity title in canonical form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CanonicalEntityId(String);

impl CanonicalEntityId {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for CanonicalEntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for CanonicalEntityId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

static KB_PREFIX: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:https?://[^/\s]+/wiki/|(?:https?://)?[^/\s]+/resource/)").unwrap());

fn canonical_step(s: &str) -> String {
    let stripped = KB_PREFIX.replace(s, "");
    let decoded = percent_decode_str(&stripped).decode_utf8_lossy();
    let spaced = decoded.replace('_', " ");
    let collapsed = normalize_whitespace(spaced.trim());
    let mut chars = collapsed.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Maps the many URI and title spellings emitted by linking systems onto one
/// canonical title: KB prefix stripped, percent-decoded, underscores as
/// spaces, trimmed, first character upper-cased.
///
/// The rules are applied until a fixed point so the result is idempotent
/// even for inputs such as nested prefixes or double-encoded escapes.
pub fn canonicalize_entity(raw: &str) -> Result<CanonicalEntityId> {
    let mut current = canonical_step(raw);
    for _ in 0..32 {
        let next = canonical_step(&current);
        if next == current {
            break;
        }
        current = next;
    }
    if current.is_empty() {
        return Err(Error::Entity {
            raw: raw.to_string(),
            reason: "empty after normalization".into(),
        });
    }
    Ok(CanonicalEntityId(current))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityAnnotation {
    pub mention: Mention,
    pub entity: CanonicalEntityId,
}

/// Annotations produced by one linking system.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationSet {
    pub system_id: String,
    pub annotations: Vec<EntityAnnotation>,
}

impl AnnotationSet {
    pub fn new(system_id: impl Into<String>, annotations: Vec<EntityAnnotation>) -> Result<Self> {
        let system_id = system_id.into();
        check_unique(&annotations).map_err(|k| {
            Error::invalid(format!(
                "system {system_id:?}: duplicate annotation at {}:{} {:?}",
                k.doc_id, k.position, k.surface
            ))
        })?;
        Ok(Self { system_id, annotations })
    }

    pub fn len(&self) -> usize {
        self.annotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }
}

/// Curated annotations with NULL/OOKB entries already removed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroundTruth {
    pub annotations: Vec<EntityAnnotation>,
}

impl GroundTruth {
    pub fn new(annotations: Vec<EntityAnnotation>) -> Result<Self> {
        check_unique(&annotations).map_err(|k| {
            Error::invalid(format!(
                "ground truth: duplicate annotation at {}:{} {:?}",
                k.doc_id, k.position, k.surface
            ))
        })?;
        if let Some(a) = annotations.iter().find(|a| is_nil_entity(a.entity.as_str())) {
            return Err(Error::invalid(format!(
                "ground truth contains out-of-KB entity {:?}",
                a.entity.as_str()
            )));
        }
        Ok(Self { annotations })
    }

    pub fn len(&self) -> usize {
        self.annotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }
}

fn check_unique(annotations: &[EntityAnnotation]) -> std::result::Result<(), MentionKey> {
    let mut seen = HashSet::with_capacity(annotations.len());
    for a in annotations {
        let key = a.mention.key();
        if !seen.insert(key.clone()) {
            return Err(key);
        }
    }
    Ok(())
}

fn is_nil_entity(canonical: &str) -> bool {
    canonical == "NULL" || canonical == "OOKB"
}

/// One line of an annotation file. Provenance fields are only written for
/// unified outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub doc: String,
    pub start: usize,
    pub surface: String,
    pub entity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

impl From<&EntityAnnotation> for AnnotationRecord {
    fn from(a: &EntityAnnotation) -> Self {
        Self {
            doc: a.mention.doc_id.clone(),
            start: a.mention.position,
            surface: a.mention.surface.clone(),
            entity: Some(a.entity.as_str().to_string()),
            system: None,
            path: None,
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn file_label(path: &Path) -> String {
    path.display().to_string()
}

/// Iterates non-blank lines with their 1-based line numbers.
fn json_lines<'a, R: BufRead + 'a>(reader: R, name: &'a str) -> impl Iterator<Item = Result<(usize, String)>> + 'a {
    reader.lines().enumerate().filter_map(move |(i, line)| match line {
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(Ok((i + 1, l))),
        Err(e) => Some(Err(Error::io(name, e))),
    })
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    parse_corpus(open(path)?, &file_label(path))
}

pub fn parse_corpus<R: BufRead>(reader: R, name: &str) -> Result<Corpus> {
    let mut docs = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for item in json_lines(reader, name) {
        let (line, text) = item?;
        let record_err = |message: String| Error::Record {
            file: name.to_string(),
            line,
            message,
        };
        let doc: Document = serde_json::from_str(&text).map_err(|e| record_err(format!("malformed record: {e}")))?;
        if doc.id.is_empty() {
            return Err(record_err("empty document id".into()));
        }
        if doc.text.is_empty() {
            return Err(record_err(format!("document {:?} has empty text", doc.id)));
        }
        if let Some(first) = seen.insert(doc.id.clone(), line) {
            return Err(record_err(format!(
                "duplicate document id {:?} (first seen on line {first})",
                doc.id
            )));
        }
        docs.push(doc);
    }
    Corpus::new(docs)
}

struct ParsedRecord {
    line: usize,
    mention: Mention,
    entity: Option<String>,
}

fn parse_records<R: BufRead>(reader: R, name: &str, corpus: &Corpus) -> Result<Vec<ParsedRecord>> {
    let mut out = Vec::new();
    for item in json_lines(reader, name) {
        let (line, text) = item?;
        let record_err = |message: String| Error::Record {
            file: name.to_string(),
            line,
            message,
        };
        let rec: AnnotationRecord =
            serde_json::from_str(&text).map_err(|e| record_err(format!("malformed record: {e}")))?;
        let doc = corpus
            .get(&rec.doc)
            .ok_or_else(|| record_err(format!("unknown document id {:?}", rec.doc)))?;
        let mention = Mention::new(rec.doc, rec.start, rec.surface);
        mention.validate(doc).map_err(record_err)?;
        out.push(ParsedRecord {
            line,
            mention,
            entity: rec.entity,
        });
    }
    Ok(out)
}

fn dedup_check(name: &str, records: &[(usize, EntityAnnotation)]) -> Result<()> {
    let mut seen: HashMap<MentionKey, usize> = HashMap::new();
    for (line, a) in records {
        if let Some(first) = seen.insert(a.mention.key(), *line) {
            return Err(Error::Record {
                file: name.to_string(),
                line: *line,
                message: format!("duplicate mention (first seen on line {first})"),
            });
        }
    }
    Ok(())
}

pub fn load_annotation_set(path: impl AsRef<Path>, system_id: &str, corpus: &Corpus) -> Result<AnnotationSet> {
    let path = path.as_ref();
    parse_annotation_set(open(path)?, &file_label(path), system_id, corpus)
}

/// Parses one system's output. Every record must carry a non-null entity.
pub fn parse_annotation_set<R: BufRead>(
    reader: R,
    name: &str,
    system_id: &str,
    corpus: &Corpus,
) -> Result<AnnotationSet> {
    let mut annotations = Vec::new();
    for rec in parse_records(reader, name, corpus)? {
        let record_err = |message: String| Error::Record {
            file: name.to_string(),
            line: rec.line,
            message,
        };
        let raw = rec
            .entity
            .ok_or_else(|| record_err("null entity is only permitted in ground truth".into()))?;
        let entity = canonicalize_entity(&raw).map_err(|e| record_err(e.to_string()))?;
        annotations.push((
            rec.line,
            EntityAnnotation {
                mention: rec.mention,
                entity,
            },
        ));
    }
    dedup_check(name, &annotations)?;
    AnnotationSet::new(system_id, annotations.into_iter().map(|(_, a)| a).collect())
}

pub fn load_ground_truth(path: impl AsRef<Path>, corpus: &Corpus) -> Result<GroundTruth> {
    let path = path.as_ref();
    parse_ground_truth(open(path)?, &file_label(path), corpus)
}

/// Parses ground truth, dropping records whose entity is null, `NULL` or `OOKB`.
pub fn parse_ground_truth<R: BufRead>(reader: R, name: &str, corpus: &Corpus) -> Result<GroundTruth> {
    let mut annotations = Vec::new();
    for rec in parse_records(reader, name, corpus)? {
        let Some(raw) = rec.entity else { continue };
        let entity = canonicalize_entity(&raw).map_err(|e| Error::Record {
            file: name.to_string(),
            line: rec.line,
            message: e.to_string(),
        })?;
        if is_nil_entity(entity.as_str()) {
            continue;
        }
        annotations.push((
            rec.line,
            EntityAnnotation {
                mention: rec.mention,
                entity,
            },
        ));
    }
    dedup_check(name, &annotations)?;
    GroundTruth::new(annotations.into_iter().map(|(_, a)| a).collect())
}

pub fn write_records<'a, W: Write>(
    mut writer: W,
    records: impl IntoIterator<Item = &'a AnnotationRecord>,
) -> std::io::Result<()> {
    for rec in records {
        serde_json::to_writer(&mut writer, rec)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn write_annotations<'a, W: Write>(
    writer: W,
    annotations: impl IntoIterator<Item = &'a EntityAnnotation>,
) -> std::io::Result<()> {
    let records: Vec<AnnotationRecord> = annotations.into_iter().map(Into::into).collect();
    write_records(writer, &records)
}

pub fn write_documents<'a, W: Write>(
    mut writer: W,
    docs: impl IntoIterator<Item = &'a Document>,
) -> std::io::Result<()> {
    for doc in docs {
        serde_json::to_writer(&mut writer, doc)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus() -> Corpus {
        Corpus::new(vec![Document {
            id: "d1".into(),
            text: "Jordan played for the Wizards".into(),
        }])
        .unwrap()
    }

    #[test]
    fn loads_single_document() {
        let c = parse_corpus(r#"{"id":"d1","text":"Jordan played for the Wizards"}"#.as_bytes(), "t").unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.get("d1").unwrap().char_len(), 29);
    }

    #[test]
    fn duplicate_document_id_is_rejected() {
        let input = "{\"id\":\"d1\",\"text\":\"a\"}\n{\"id\":\"d1\",\"text\":\"b\"}\n";
        let err = parse_corpus(input.as_bytes(), "docs.jsonl").unwrap_err();
        assert!(matches!(err, Error::Record { line: 2, .. }), "{err}");
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn empty_text_is_rejected() {
        let err = parse_corpus(r#"{"id":"d1","text":""}"#.as_bytes(), "t").unwrap_err();
        assert!(err.to_string().contains("empty text"));
    }

    #[test]
    fn empty_file_gives_empty_corpus() {
        assert!(parse_corpus("".as_bytes(), "t").unwrap().is_empty());
    }

    #[test]
    fn unknown_fields_are_ignored() {
        let c = parse_corpus(r#"{"id":"d1","text":"x","lang":"en"}"#.as_bytes(), "t").unwrap();
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn annotation_entity_is_canonicalized() {
        let input = r#"{"doc":"d1","start":0,"surface":"Jordan","entity":"Michael_Jordan"}"#;
        let set = parse_annotation_set(input.as_bytes(), "a.jsonl", "A", &corpus()).unwrap();
        assert_eq!(set.annotations[0].entity.as_str(), "Michael Jordan");
        assert_eq!(set.system_id, "A");
    }

    #[test]
    fn offset_mismatch_is_rejected() {
        let input = r#"{"doc":"d1","start":1,"surface":"Jordan","entity":"Michael_Jordan"}"#;
        let err = parse_annotation_set(input.as_bytes(), "a.jsonl", "A", &corpus()).unwrap_err();
        assert!(matches!(err, Error::Record { line: 1, .. }));
        assert!(err.to_string().contains("does not match"));
    }

    #[test]
    fn unknown_document_is_rejected() {
        let input = r#"{"doc":"d9","start":0,"surface":"Jordan","entity":"X"}"#;
        let err = parse_annotation_set(input.as_bytes(), "a.jsonl", "A", &corpus()).unwrap_err();
        assert!(err.to_string().contains("unknown document"));
    }

    #[test]
    fn span_past_end_is_rejected() {
        let input = r#"{"doc":"d1","start":25,"surface":"Wizards","entity":"X"}"#;
        assert!(parse_annotation_set(input.as_bytes(), "a", "A", &corpus()).is_err());
    }

    #[test]
    fn null_entity_only_in_ground_truth() {
        let input = r#"{"doc":"d1","start":0,"surface":"Jordan","entity":null}"#;
        assert!(parse_annotation_set(input.as_bytes(), "a", "A", &corpus()).is_err());
        let gt = parse_ground_truth(input.as_bytes(), "gt", &corpus()).unwrap();
        assert!(gt.is_empty());
    }

    #[test]
    fn nil_entities_are_dropped_from_ground_truth() {
        let input = concat!(
            r#"{"doc":"d1","start":0,"surface":"Jordan","entity":"NULL"}"#,
            "\n",
            r#"{"doc":"d1","start":22,"surface":"Wizards","entity":"OOKB"}"#,
            "\n",
            r#"{"doc":"d1","start":22,"surface":"Wizards","entity":"Washington_Wizards"}"#,
        );
        // the third record survives because the OOKB one was dropped first
        let gt = parse_ground_truth(input.as_bytes(), "gt", &corpus()).unwrap();
        assert_eq!(gt.len(), 1);
        assert_eq!(gt.annotations[0].entity.as_str(), "Washington Wizards");
    }

    #[test]
    fn duplicate_mentions_in_one_set_are_rejected() {
        let line = r#"{"doc":"d1","start":0,"surface":"Jordan","entity":"A"}"#;
        let input = format!("{line}\n{line}\n");
        let err = parse_annotation_set(input.as_bytes(), "a", "A", &corpus()).unwrap_err();
        assert!(matches!(err, Error::Record { line: 2, .. }));
    }

    #[test]
    fn whitespace_differences_in_surface_are_tolerated() {
        let c = Corpus::new(vec![Document {
            id: "d".into(),
            text: "New  York".into(),
        }])
        .unwrap();
        let m = Mention::new("d", 0, "New\tYork");
        // lengths differ (9 vs 8), so the slice is "New  Yor" and must not match
        assert!(m.validate(c.get("d").unwrap()).is_err());
        let m = Mention::new("d", 0, "New \nYork");
        assert!(m.validate(c.get("d").unwrap()).is_ok());
    }

    #[test]
    fn character_offsets_not_bytes() {
        let c = Corpus::new(vec![Document {
            id: "d".into(),
            text: "Müller traf Zürich".into(),
        }])
        .unwrap();
        assert!(Mention::new("d", 12, "Zürich").validate(c.get("d").unwrap()).is_ok());
    }

    #[test]
    fn canonicalization_examples() {
        let c = |s| canonicalize_entity(s).unwrap().into_string();
        assert_eq!(
            c("http://en.wikipedia.org/wiki/Washington_Wizards"),
            "Washington Wizards"
        );
        assert_eq!(
            c("https://en.wikipedia.org/wiki/Washington_Wizards"),
            "Washington Wizards"
        );
        assert_eq!(c("washington Wizards"), "Washington Wizards");
        assert_eq!(c("Michael Jordan"), "Michael Jordan");
        assert_eq!(c("Michael%20Jordan"), "Michael Jordan");
        assert_eq!(c("dbpedia.org/resource/Chicago_Bulls"), "Chicago Bulls");
        assert_eq!(c("http://dbpedia.org/resource/Chicago_Bulls"), "Chicago Bulls");
        assert_eq!(c("  Foo__Bar "), "Foo Bar");
    }

    #[test]
    fn canonicalization_rejects_empty() {
        assert!(canonicalize_entity("").is_err());
        assert!(canonicalize_entity("___").is_err());
        assert!(canonicalize_entity("http://en.wikipedia.org/wiki/").is_err());
    }

    #[test]
    fn nested_prefixes_reach_a_fixed_point() {
        let once = canonicalize_entity("x.org/resource/a.org/resource/b%2541").unwrap();
        let twice = canonicalize_entity(once.as_str()).unwrap();
        assert_eq!(once, twice);
    }

    proptest! {
        #[test]
        fn canonicalize_is_idempotent(raw in "\\PC{0,24}") {
            if let Ok(once) = canonicalize_entity(&raw) {
                let twice = canonicalize_entity(once.as_str()).unwrap();
                prop_assert_eq!(once, twice);
            }
        }

        #[test]
        fn canonicalize_is_idempotent_on_uri_like(raw in "(https?://[a-z.]{1,8}/wiki/|[a-z]{1,5}/resource/)?[A-Za-z_%0-9 ]{1,16}") {
            if let Ok(once) = canonicalize_entity(&raw) {
                let twice = canonicalize_entity(once.as_str()).unwrap();
                prop_assert_eq!(once, twice);
            }
        }
    }
}
