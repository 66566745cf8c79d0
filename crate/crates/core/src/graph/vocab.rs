//! Label inventories.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// Index into one of the label inventories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabelId(pub u32);

impl LabelId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Reserved edge label carried by every self-loop.
pub const SELF_LABEL: &str = "SELF";

/// Append-only string interner. Ids are assigned in first-seen order.
#[derive(Clone, Debug, Default)]
pub struct Interner {
    names: Vec<String>,
    index: HashMap<String, LabelId>,
}

impl Interner {
    pub fn new() -> Self {
        Self::default()
    }

    /// Interner whose id 0 is the reserved [`SELF_LABEL`].
    pub fn with_self_label() -> Self {
        let mut interner = Self::new();
        interner.intern(SELF_LABEL);
        interner
    }

    pub fn intern(&mut self, name: &str) -> LabelId {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = LabelId(self.names.len() as u32);
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<LabelId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: LabelId) -> Option<&str> {
        self.names.get(id.index()).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Entity and relation inventories (fixed by configuration) plus the open
/// inventories of parser and scene-graph labels that grow during ingestion.
///
/// The tag space used by the word-pair grid is `N`, then the entity types in
/// order, then the relation types in order.
#[derive(Clone, Debug)]
pub struct LabelVocabulary {
    entity_types: Vec<String>,
    relation_types: Vec<String>,
    pub dependency_labels: Interner,
    pub pos_labels: Interner,
    pub visual_relation_labels: Interner,
    pub object_labels: Interner,
}

pub const NO_RELATION: &str = "N";

impl Default for LabelVocabulary {
    fn default() -> Self {
        Self::new(
            ["PER", "LOC", "ORG", "MISC"].map(String::from).to_vec(),
            Vec::new(),
        )
        .expect("default inventory is valid")
    }
}

impl LabelVocabulary {
    pub fn new(entity_types: Vec<String>, relation_types: Vec<String>) -> Result<Self> {
        let mut seen = HashMap::new();
        seen.insert(NO_RELATION.to_string(), "reserved");
        for (kind, names) in [("entity", &entity_types), ("relation", &relation_types)] {
            for name in names.iter() {
                if name.is_empty() || name.chars().any(char::is_whitespace) {
                    return Err(Error::Ingest(format!("invalid {kind} type name {name:?}")));
                }
                if let Some(prev) = seen.insert(name.clone(), kind) {
                    return Err(Error::Ingest(format!(
                        "duplicate tag name {name:?} ({prev} and {kind})"
                    )));
                }
            }
        }
        if entity_types.is_empty() {
            return Err(Error::Ingest("no entity types configured".into()));
        }
        Ok(Self {
            entity_types,
            relation_types,
            dependency_labels: Interner::with_self_label(),
            pos_labels: Interner::new(),
            visual_relation_labels: Interner::with_self_label(),
            object_labels: Interner::new(),
        })
    }

    /// Parses the plain-text inventory format:
    ///
    /// ```text
    /// # comment
    /// [entities]
    /// PER
    /// LOC
    /// [relations]
    /// peer
    /// ```
    pub fn parse(text: &str) -> Result<Self> {
        enum Section {
            None,
            Entities,
            Relations,
        }
        let mut section = Section::None;
        let mut entities = Vec::new();
        let mut relations = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line {
                "[entities]" => section = Section::Entities,
                "[relations]" => section = Section::Relations,
                _ => match section {
                    Section::Entities => entities.push(line.to_string()),
                    Section::Relations => relations.push(line.to_string()),
                    Section::None => {
                        return Err(Error::Parse {
                            line: lineno + 1,
                            message: format!("label {line:?} outside of a section"),
                        })
                    }
                },
            }
        }
        Self::new(entities, relations)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_config_text(&self) -> String {
        let mut out = String::from("[entities]\n");
        for name in &self.entity_types {
            out.push_str(name);
            out.push('\n');
        }
        out.push_str("[relations]\n");
        for name in &self.relation_types {
            out.push_str(name);
            out.push('\n');
        }
        out
    }

    pub fn entity_types(&self) -> &[String] {
        &self.entity_types
    }

    pub fn relation_types(&self) -> &[String] {
        &self.relation_types
    }

    pub fn entity_index(&self, name: &str) -> Option<usize> {
        self.entity_types.iter().position(|t| t == name)
    }

    pub fn relation_index(&self, name: &str) -> Option<usize> {
        self.relation_types.iter().position(|t| t == name)
    }

    /// Size of the word-pair tag space, `d_y`.
    pub fn tag_count(&self) -> usize {
        1 + self.entity_types.len() + self.relation_types.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_in_order() {
        let vocab = LabelVocabulary::parse(
            "# inventory\n[entities]\nPER\nORG\n\n[relations]\npeer\nmember_of\n",
        )
        .unwrap();
        assert_eq!(vocab.entity_types(), ["PER", "ORG"]);
        assert_eq!(vocab.relation_types(), ["peer", "member_of"]);
        assert_eq!(vocab.tag_count(), 5);
        let again = LabelVocabulary::parse(&vocab.to_config_text()).unwrap();
        assert_eq!(again.relation_types(), vocab.relation_types());
    }

    #[test]
    fn rejects_duplicates_and_reserved_names() {
        assert!(LabelVocabulary::parse("[entities]\nPER\nPER\n").is_err());
        assert!(LabelVocabulary::parse("[entities]\nPER\n[relations]\nPER\n").is_err());
        assert!(LabelVocabulary::parse("[entities]\nN\n").is_err());
        assert!(LabelVocabulary::parse("PER\n").is_err());
        assert!(LabelVocabulary::parse("[relations]\npeer\n").is_err());
    }

    #[test]
    fn edge_interners_reserve_self() {
        let vocab = LabelVocabulary::default();
        assert_eq!(vocab.dependency_labels.get(SELF_LABEL), Some(LabelId(0)));
        assert_eq!(vocab.visual_relation_labels.get(SELF_LABEL), Some(LabelId(0)));
        assert!(vocab.pos_labels.is_empty());
    }

    #[test]
    fn interner_is_idempotent() {
        let mut interner = Interner::new();
        let a = interner.intern("nsubj");
        let b = interner.intern("dobj");
        assert_eq!(interner.intern("nsubj"), a);
        assert_ne!(a, b);
        assert_eq!(interner.name(b), Some("dobj"));
        assert_eq!(interner.len(), 2);
    }
}
