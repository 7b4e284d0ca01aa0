//! Class taxonomy: ids, canonical names, aliases and the label palette.
//!
//! Name resolution goes exact canonical name, then exact alias, then one
//! retry of both with a trailing plural `s` or `es` removed. Matching is
//! case-insensitive and ignores surrounding whitespace.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{BACKGROUND, IGNORE_INDEX};

/// Colour the VOC tooling uses for the ignore index.
pub const DEFAULT_IGNORE_RGB: [u8; 3] = [224, 224, 192];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("unknown class id {0}")]
    UnknownClassId(u8),
    #[error("taxonomy is empty")]
    Empty,
    #[error("class ids must be contiguous from 1; expected {expected}, found {found}")]
    NonContiguous { expected: u16, found: u16 },
    #[error("too many classes ({0}); ids must stay below the ignore index")]
    TooManyClasses(usize),
    #[error("name `{0}` is used more than once")]
    DuplicateName(String),
    #[error("palette colour {0:?} is assigned twice")]
    DuplicateColor([u8; 3]),
    #[error("failed to read taxonomy: {0}")]
    Io(String),
    #[error("malformed taxonomy document: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: u8,
    pub name: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    pub rgb: [u8; 3],
}

/// On-disk form: `{"classes":[{"id":1,"name":"aeroplane","aliases":[...],"rgb":[128,0,0]}, ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaxonomyDocument {
    pub classes: Vec<ClassEntry>,
    #[serde(default = "default_background_rgb")]
    pub background_rgb: [u8; 3],
    #[serde(default = "default_ignore_rgb")]
    pub ignore_rgb: [u8; 3],
}

fn default_background_rgb() -> [u8; 3] {
    [0, 0, 0]
}

fn default_ignore_rgb() -> [u8; 3] {
    DEFAULT_IGNORE_RGB
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTaxonomy {
    classes: Vec<ClassEntry>,
    background_rgb: [u8; 3],
    ignore_rgb: [u8; 3],
    canonical: HashMap<String, u8>,
    aliases: HashMap<String, u8>,
}

fn normalize(name: &str) -> String {
    name.trim().to_lowercase()
}

impl ClassTaxonomy {
    pub fn new(
        classes: Vec<ClassEntry>,
        background_rgb: [u8; 3],
        ignore_rgb: [u8; 3],
    ) -> Result<Self, TaxonomyError> {
        if classes.is_empty() {
            return Err(TaxonomyError::Empty);
        }
        if classes.len() >= IGNORE_INDEX as usize {
            return Err(TaxonomyError::TooManyClasses(classes.len()));
        }
        let mut classes = classes;
        classes.sort_by_key(|c| c.id);
        for (idx, class) in classes.iter().enumerate() {
            let expected = idx as u16 + 1;
            if class.id as u16 != expected {
                return Err(TaxonomyError::NonContiguous {
                    expected,
                    found: class.id as u16,
                });
            }
        }

        let mut canonical = HashMap::new();
        let mut aliases = HashMap::new();
        let mut all_names = HashMap::new();
        for class in &classes {
            let name = normalize(&class.name);
            if name.is_empty() || all_names.insert(name.clone(), class.id).is_some() {
                return Err(TaxonomyError::DuplicateName(class.name.clone()));
            }
            canonical.insert(name, class.id);
        }
        for class in &classes {
            for alias in &class.aliases {
                let alias_norm = normalize(alias);
                if alias_norm.is_empty() {
                    continue;
                }
                match all_names.insert(alias_norm.clone(), class.id) {
                    // Repeating a class's own canonical name as alias is harmless.
                    Some(prev) if prev == class.id && canonical.get(&alias_norm) == Some(&prev) => {}
                    Some(_) => return Err(TaxonomyError::DuplicateName(alias.clone())),
                    None => {
                        aliases.insert(alias_norm, class.id);
                    }
                }
            }
        }

        let mut colors = HashMap::new();
        colors.insert(background_rgb, BACKGROUND);
        for class in &classes {
            if colors.insert(class.rgb, class.id).is_some() {
                return Err(TaxonomyError::DuplicateColor(class.rgb));
            }
        }

        Ok(Self {
            classes,
            background_rgb,
            ignore_rgb,
            canonical,
            aliases,
        })
    }

    pub fn from_document(doc: TaxonomyDocument) -> Result<Self, TaxonomyError> {
        Self::new(doc.classes, doc.background_rgb, doc.ignore_rgb)
    }

    pub fn from_json(text: &str) -> Result<Self, TaxonomyError> {
        let doc: TaxonomyDocument =
            serde_json::from_str(text).map_err(|e| TaxonomyError::Parse(e.to_string()))?;
        Self::from_document(doc)
    }

    pub fn load(path: &Path) -> Result<Self, TaxonomyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TaxonomyError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_document(&self) -> TaxonomyDocument {
        TaxonomyDocument {
            classes: self.classes.clone(),
            background_rgb: self.background_rgb,
            ignore_rgb: self.ignore_rgb,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("taxonomy serializes")
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Largest valid class id.
    pub fn max_id(&self) -> u8 {
        self.classes.len() as u8
    }

    pub fn classes(&self) -> &[ClassEntry] {
        &self.classes
    }

    pub fn ids(&self) -> impl Iterator<Item = u8> + '_ {
        self.classes.iter().map(|c| c.id)
    }

    pub fn contains_id(&self, id: u8) -> bool {
        id >= 1 && id <= self.max_id()
    }

    pub fn name(&self, id: u8) -> Result<&str, TaxonomyError> {
        self.entry(id).map(|c| c.name.as_str())
    }

    pub fn entry(&self, id: u8) -> Result<&ClassEntry, TaxonomyError> {
        if self.contains_id(id) {
            Ok(&self.classes[id as usize - 1])
        } else {
            Err(TaxonomyError::UnknownClassId(id))
        }
    }

    /// Whether `value` may appear in a mask labelled with this taxonomy.
    pub fn is_valid_label(&self, value: u8) -> bool {
        value == BACKGROUND || value == IGNORE_INDEX || self.contains_id(value)
    }

    /// Palette colour for a label; ignore renders with the ignore colour and
    /// unassigned indices are black.
    pub fn color(&self, label: u8) -> [u8; 3] {
        match label {
            BACKGROUND => self.background_rgb,
            IGNORE_INDEX => self.ignore_rgb,
            id if self.contains_id(id) => self.classes[id as usize - 1].rgb,
            _ => [0, 0, 0],
        }
    }

    pub fn background_rgb(&self) -> [u8; 3] {
        self.background_rgb
    }

    /// Inverse palette lookup restricted to background and class ids.
    pub fn label_for_color(&self, rgb: [u8; 3]) -> Option<u8> {
        if rgb == self.background_rgb {
            return Some(BACKGROUND);
        }
        self.classes.iter().find(|c| c.rgb == rgb).map(|c| c.id)
    }

    /// Full 256-entry palette in PNG `PLTE` order.
    pub fn palette(&self) -> Vec<[u8; 3]> {
        (0..=255u8).map(|v| self.color(v)).collect()
    }

    fn lookup(&self, key: &str) -> Option<u8> {
        self.canonical
            .get(key)
            .or_else(|| self.aliases.get(key))
            .copied()
    }

    pub fn canonicalize(&self, name: &str) -> Result<u8, TaxonomyError> {
        let key = normalize(name);
        if let Some(id) = self.lookup(&key) {
            return Ok(id);
        }
        for suffix in ["s", "es"] {
            if let Some(id) = key.strip_suffix(suffix).and_then(|k| self.lookup(k)) {
                return Ok(id);
            }
        }
        Err(TaxonomyError::UnknownClass(name.to_string()))
    }

    /// The twenty PASCAL VOC classes with the standard VOC colour map.
    pub fn pascal_voc() -> Self {
        const NAMES: [(&str, &[&str]); 20] = [
            ("aeroplane", &["airplane", "plane", "aircraft"]),
            ("bicycle", &["bike"]),
            ("bird", &[]),
            ("boat", &["ship"]),
            ("bottle", &[]),
            ("bus", &[]),
            ("car", &[]),
            ("cat", &["kitten"]),
            ("chair", &[]),
            ("cow", &[]),
            ("diningtable", &["dining table", "table"]),
            ("dog", &["puppy"]),
            ("horse", &[]),
            ("motorbike", &["motorcycle"]),
            ("person", &["people", "man", "woman"]),
            ("pottedplant", &["potted plant", "plant"]),
            ("sheep", &[]),
            ("sofa", &["couch"]),
            ("train", &[]),
            ("tvmonitor", &["tv", "monitor", "television"]),
        ];
        let classes = NAMES
            .iter()
            .enumerate()
            .map(|(i, (name, aliases))| ClassEntry {
                id: i as u8 + 1,
                name: name.to_string(),
                aliases: aliases.iter().map(|a| a.to_string()).collect(),
                rgb: voc_color(i as u8 + 1),
            })
            .collect();
        Self::new(classes, voc_color(0), DEFAULT_IGNORE_RGB).expect("VOC taxonomy is valid")
    }
}

/// The bit-interleaved VOC colour map.
pub fn voc_color(index: u8) -> [u8; 3] {
    let mut rgb = [0u8; 3];
    let mut c = index;
    for shift in (0..8).rev() {
        rgb[0] |= (c & 1) << shift;
        rgb[1] |= ((c >> 1) & 1) << shift;
        rgb[2] |= ((c >> 2) & 1) << shift;
        c >>= 3;
    }
    rgb
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn voc_colors_match_reference() {
        assert_eq!(voc_color(0), [0, 0, 0]);
        assert_eq!(voc_color(1), [128, 0, 0]);
        assert_eq!(voc_color(6), [0, 128, 128]);
        assert_eq!(voc_color(15), [192, 128, 128]);
        assert_eq!(voc_color(20), [0, 64, 128]);
    }

    #[test]
    fn plural_forms_resolve() {
        let voc = ClassTaxonomy::pascal_voc();
        let bicycle = voc.canonicalize("bicycle").unwrap();
        assert_eq!(voc.canonicalize("bicycles"), Ok(bicycle));
        assert_eq!(voc.canonicalize("  Bikes "), Ok(bicycle));
        assert_eq!(voc.canonicalize("diningtable"), Ok(11));
        assert_eq!(voc.canonicalize("table"), Ok(11));
        assert_eq!(
            voc.canonicalize("unicorn"),
            Err(TaxonomyError::UnknownClass("unicorn".into()))
        );
    }

    #[test]
    fn canonicalization_is_idempotent() {
        let voc = ClassTaxonomy::pascal_voc();
        for class in voc.classes() {
            let id = voc.canonicalize(&class.name).unwrap();
            assert_eq!(id, class.id);
            assert_eq!(voc.canonicalize(voc.name(id).unwrap()), Ok(id));
        }
    }

    #[test]
    fn palette_is_a_bijection_on_valid_labels() {
        let voc = ClassTaxonomy::pascal_voc();
        for label in std::iter::once(0).chain(voc.ids()) {
            assert_eq!(voc.label_for_color(voc.color(label)), Some(label));
        }
    }

    #[test]
    fn rejects_invalid_documents() {
        let entry = |id, name: &str, rgb| ClassEntry {
            id,
            name: name.into(),
            aliases: vec![],
            rgb,
        };
        assert_eq!(
            ClassTaxonomy::new(vec![], [0; 3], DEFAULT_IGNORE_RGB),
            Err(TaxonomyError::Empty)
        );
        assert!(matches!(
            ClassTaxonomy::new(vec![entry(2, "a", [1, 1, 1])], [0; 3], DEFAULT_IGNORE_RGB),
            Err(TaxonomyError::NonContiguous { .. })
        ));
        assert!(matches!(
            ClassTaxonomy::new(
                vec![entry(1, "Cat", [1, 1, 1]), entry(2, "cat", [2, 2, 2])],
                [0; 3],
                DEFAULT_IGNORE_RGB
            ),
            Err(TaxonomyError::DuplicateName(_))
        ));
        assert!(matches!(
            ClassTaxonomy::new(vec![entry(1, "a", [0, 0, 0])], [0; 3], DEFAULT_IGNORE_RGB),
            Err(TaxonomyError::DuplicateColor(_))
        ));
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{"classes":[{"id":1,"name":"aeroplane","aliases":["airplane","plane"],"rgb":[128,0,0]},{"id":2,"name":"bicycle","rgb":[0,128,0]}]}"#;
        let tax = ClassTaxonomy::from_json(text).unwrap();
        assert_eq!(tax.canonicalize("planes"), Ok(1));
        assert_eq!(tax.color(0), [0, 0, 0]);
        assert_eq!(tax.color(255), DEFAULT_IGNORE_RGB);
        let again = ClassTaxonomy::from_json(&tax.to_json()).unwrap();
        assert_eq!(again, tax);
    }
}
