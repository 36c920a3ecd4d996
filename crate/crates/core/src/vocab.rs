//! Entity/relation vocabularies, sparse triple counts and their text formats.
//!
//! Triples file: one `subject predicate object [count]` per line, `#` starts
//! a comment line. Vocabulary file: entity names one per line, a `---` line,
//! then relation names.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_id, Error, Result};

/// A `(subject, predicate, object)` id triple. Orders lexicographically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub s: usize,
    pub p: usize,
    pub o: usize,
}

impl Triple {
    pub const fn new(s: usize, p: usize, o: usize) -> Self {
        Triple { s, p, o }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Namespace {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Namespace {
    fn get_or_insert(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    fn insert_new(&mut self, name: &str) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidData(format!(
                "duplicate vocabulary name `{name}`"
            )));
        }
        Ok(self.get_or_insert(name))
    }
}

/// Bidirectional name/id maps for entity classes and relation types.
/// Ids are dense and assigned in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    entities: Namespace,
    relations: Namespace,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vocabulary from explicit name lists; duplicates are an error.
    pub fn from_names<E, R>(entities: E, relations: R) -> Result<Self>
    where
        E: IntoIterator,
        E::Item: AsRef<str>,
        R: IntoIterator,
        R::Item: AsRef<str>,
    {
        let mut vocab = Vocabulary::new();
        for name in entities {
            vocab.entities.insert_new(name.as_ref())?;
        }
        for name in relations {
            vocab.relations.insert_new(name.as_ref())?;
        }
        Ok(vocab)
    }

    pub fn num_entities(&self) -> usize {
        self.entities.names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.names.len()
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entities.index.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relations.index.get(name).copied()
    }

    pub fn entity_name(&self, id: usize) -> Result<&str> {
        check_id("entity", id, self.num_entities())?;
        Ok(&self.entities.names[id])
    }

    pub fn relation_name(&self, id: usize) -> Result<&str> {
        check_id("relation", id, self.num_relations())?;
        Ok(&self.relations.names[id])
    }

    pub fn entities(&self) -> &[String] {
        &self.entities.names
    }

    pub fn relations(&self) -> &[String] {
        &self.relations.names
    }

    pub fn add_entity(&mut self, name: &str) -> usize {
        self.entities.get_or_insert(name)
    }

    pub fn add_relation(&mut self, name: &str) -> usize {
        self.relations.get_or_insert(name)
    }

    /// Formats a triple as `subject predicate object`.
    pub fn triple_names(&self, t: Triple) -> Result<String> {
        Ok(format!(
            "{} {} {}",
            self.entity_name(t.s)?,
            self.relation_name(t.p)?,
            self.entity_name(t.o)?
        ))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for name in self.entities() {
            out.push_str(name);
            out.push('\n');
        }
        out.push_str("---\n");
        for name in self.relations() {
            out.push_str(name);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut vocab = Vocabulary::new();
        let mut in_relations = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line == "---" {
                if in_relations {
                    return Err(Error::parse(path, idx + 1, "second `---` separator"));
                }
                in_relations = true;
                continue;
            }
            if line.split_whitespace().count() != 1 {
                return Err(Error::parse(
                    path,
                    idx + 1,
                    "names may not contain whitespace",
                ));
            }
            let ns = if in_relations {
                &mut vocab.relations
            } else {
                &mut vocab.entities
            };
            ns.insert_new(line)
                .map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
        }
        if !in_relations && vocab.num_entities() > 0 {
            return Err(Error::parse(
                path,
                text.lines().count(),
                "missing `---` separator",
            ));
        }
        Ok(vocab)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Subject,
    Predicate,
    Object,
}

/// Sparse nonnegative counts over `(s, p, o)` with cached marginal totals.
/// Zero counts are never stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripleCounts {
    num_entities: usize,
    num_relations: usize,
    counts: BTreeMap<Triple, u64>,
    subject_totals: Vec<u64>,
    predicate_totals: Vec<u64>,
    object_totals: Vec<u64>,
}

impl TripleCounts {
    pub fn new(num_entities: usize, num_relations: usize) -> Self {
        TripleCounts {
            num_entities,
            num_relations,
            counts: BTreeMap::new(),
            subject_totals: vec![0; num_entities],
            predicate_totals: vec![0; num_relations],
            object_totals: vec![0; num_entities],
        }
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    fn check(&self, t: Triple) -> Result<()> {
        check_id("entity", t.s, self.num_entities)?;
        check_id("relation", t.p, self.num_relations)?;
        check_id("entity", t.o, self.num_entities)
    }

    /// Adds `count` occurrences of `t`. Adding zero is a no-op.
    pub fn add(&mut self, t: Triple, count: u64) -> Result<()> {
        self.check(t)?;
        if count == 0 {
            return Ok(());
        }
        *self.counts.entry(t).or_insert(0) += count;
        self.subject_totals[t.s] += count;
        self.predicate_totals[t.p] += count;
        self.object_totals[t.o] += count;
        Ok(())
    }

    /// Grows the id space, e.g. after the vocabulary gained names.
    fn resize(&mut self, num_entities: usize, num_relations: usize) {
        self.num_entities = num_entities;
        self.num_relations = num_relations;
        self.subject_totals.resize(num_entities, 0);
        self.object_totals.resize(num_entities, 0);
        self.predicate_totals.resize(num_relations, 0);
    }

    pub fn get(&self, t: Triple) -> u64 {
        self.counts.get(&t).copied().unwrap_or(0)
    }

    pub fn contains(&self, t: Triple) -> bool {
        self.counts.contains_key(&t)
    }

    /// Observed triples in lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = (Triple, u64)> + '_ {
        self.counts.iter().map(|(&t, &c)| (t, c))
    }

    /// Number of distinct observed triples.
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Total count along the other two axes plus the smoothing constant.
    pub fn marginal(&self, axis: Axis, id: usize, alpha: f64) -> Result<f64> {
        if alpha.is_nan() || alpha <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "smoothing constant must be positive, got {alpha}"
            )));
        }
        let totals = match axis {
            Axis::Subject => &self.subject_totals,
            Axis::Predicate => &self.predicate_totals,
            Axis::Object => &self.object_totals,
        };
        let kind = if axis == Axis::Predicate {
            "relation"
        } else {
            "entity"
        };
        check_id(kind, id, totals.len())?;
        Ok(totals[id] as f64 + alpha)
    }

    /// For each test triple, whether it was never observed here.
    pub fn zero_shot_mask(&self, test: &[Triple]) -> Result<Vec<bool>> {
        test.iter()
            .map(|&t| {
                self.check(t)?;
                Ok(!self.contains(t))
            })
            .collect()
    }

    /// Serializes in the triples format with explicit counts.
    pub fn to_text(&self, vocab: &Vocabulary) -> Result<String> {
        let mut out = String::new();
        for (t, c) in self.iter() {
            writeln!(out, "{} {}", vocab.triple_names(t)?, c).expect("write to String");
        }
        Ok(out)
    }

    pub fn save(&self, vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text(vocab)?).map_err(|e| Error::io(path, e))
    }
}

/// How names in a triples file are resolved.
#[derive(Debug, Clone, Copy)]
pub enum VocabMode<'a> {
    /// Grow a fresh vocabulary in first-appearance order.
    Build,
    /// Resolve every name against an existing vocabulary.
    Strict(&'a Vocabulary),
}

pub fn parse_triples(
    text: &str,
    path: &Path,
    mode: VocabMode<'_>,
) -> Result<(Vocabulary, TripleCounts)> {
    let mut vocab = match mode {
        VocabMode::Build => Vocabulary::new(),
        VocabMode::Strict(v) => v.clone(),
    };
    let mut counts = TripleCounts::new(vocab.num_entities(), vocab.num_relations());
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let count = match tokens.len() {
            3 => 1,
            4 => tokens[3].parse::<u64>().map_err(|_| {
                Error::parse(path, line_no, format!("invalid count `{}`", tokens[3]))
            })?,
            n => {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("expected 3 or 4 tokens, found {n}"),
                ))
            }
        };
        let unknown = |kind: &'static str, name: &str| Error::UnknownName {
            path: path.to_owned(),
            line: line_no,
            kind,
            name: name.to_owned(),
        };
        let t = match mode {
            VocabMode::Build => {
                let s = vocab.add_entity(tokens[0]);
                let p = vocab.add_relation(tokens[1]);
                let o = vocab.add_entity(tokens[2]);
                counts.resize(vocab.num_entities(), vocab.num_relations());
                Triple::new(s, p, o)
            }
            VocabMode::Strict(v) => Triple::new(
                v.entity_id(tokens[0])
                    .ok_or_else(|| unknown("entity", tokens[0]))?,
                v.relation_id(tokens[1])
                    .ok_or_else(|| unknown("relation", tokens[1]))?,
                v.entity_id(tokens[2])
                    .ok_or_else(|| unknown("entity", tokens[2]))?,
            ),
        };
        counts.add(t, count)?;
    }
    Ok((vocab, counts))
}

pub fn load_triples(
    path: impl AsRef<Path>,
    mode: VocabMode<'_>,
) -> Result<(Vocabulary, TripleCounts)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_triples(&text, path, mode)
}
