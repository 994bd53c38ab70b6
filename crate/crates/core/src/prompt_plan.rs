//! Query sentence composition and manifest checking.
//!
//! All categories of an image are merged into a single sentence, e.g.
//! `a photo including bottle, chair, and sofa.`, so that one forward pass
//! yields comparable attention for every class. Category names may be
//! replaced by richer synonyms and background prompts are appended after
//! the last category: `a photo including train, railway, track.`

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_store::{TokenKind, TokenManifest};

pub const SENTENCE_TEMPLATE: &str = "a photo including {}.";

const DEFAULT_SYNONYMS: &str = include_str!("../data/synonyms.txt");
const DEFAULT_BACKGROUNDS: &str = include_str!("../data/backgrounds.txt");
const VOC_CLASSES: &str = include_str!("../data/voc_classes.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPart {
    pub label: String,
    pub kind: TokenKind,
    pub surface_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPlan {
    pub sentence_template: String,
    pub parts: Vec<PromptPart>,
    pub synonym_table: BTreeMap<String, String>,
    pub background_prompts: Vec<String>,
}

impl PromptPlan {
    /// Renders the query sentence.
    ///
    /// Identifier parts attach to the category that follows them
    /// (`<new1> mug`). With two or more categories "and" precedes the last
    /// one, with a serial comma from three on. Background prompts follow,
    /// comma-separated.
    pub fn sentence(&self) -> String {
        let mut items: Vec<String> = Vec::new();
        let mut pending: Vec<&str> = Vec::new();
        for part in &self.parts {
            match part.kind {
                TokenKind::Identifier => pending.push(&part.surface_text),
                TokenKind::Category => {
                    pending.push(&part.surface_text);
                    items.push(pending.join(" "));
                    pending.clear();
                }
                TokenKind::Background | TokenKind::Other => {}
            }
        }
        if !pending.is_empty() {
            items.push(pending.join(" "));
        }

        let mut body = match items.len() {
            0 => String::new(),
            1 => items[0].clone(),
            2 => format!("{} and {}", items[0], items[1]),
            n => format!("{}, and {}", items[..n - 1].join(", "), items[n - 1]),
        };
        for bg in self.parts.iter().filter(|p| p.kind == TokenKind::Background) {
            body.push_str(", ");
            body.push_str(&bg.surface_text);
        }
        self.sentence_template.replacen("{}", &body, 1)
    }

    pub fn categories(&self) -> impl Iterator<Item = &PromptPart> {
        self.parts.iter().filter(|p| p.kind == TokenKind::Category)
    }

    /// Plan implied by an existing manifest, for bundles processed without
    /// an explicit class list.
    pub fn from_manifest(manifest: &TokenManifest) -> Self {
        let parts: Vec<PromptPart> = manifest
            .entries
            .iter()
            .filter(|e| e.kind != TokenKind::Other)
            .map(|e| PromptPart {
                label: e.label.clone(),
                kind: e.kind,
                surface_text: e.label.clone(),
            })
            .collect();
        let background_prompts = parts
            .iter()
            .filter(|p| p.kind == TokenKind::Background)
            .map(|p| p.label.clone())
            .collect();
        PromptPlan {
            sentence_template: SENTENCE_TEMPLATE.into(),
            parts,
            synonym_table: BTreeMap::new(),
            background_prompts,
        }
    }
}

/// Builds the composed query for an image with labels `classes`.
///
/// Categories are emitted in sorted label order, each as its synonym
/// surface text when `synonyms` has one and as the raw name otherwise.
pub fn compose_query<S: AsRef<str>>(
    classes: &[S],
    synonyms: &BTreeMap<String, String>,
    backgrounds: &[String],
) -> Result<PromptPlan> {
    let labels: BTreeSet<&str> = classes.iter().map(|c| c.as_ref()).collect();
    if labels.is_empty() {
        return Err(Error::Invalid("query needs at least one class".into()));
    }
    let mut parts: Vec<PromptPart> = labels
        .iter()
        .map(|&label| PromptPart {
            label: label.to_string(),
            kind: TokenKind::Category,
            surface_text: surface(label, synonyms),
        })
        .collect();
    parts.extend(backgrounds.iter().map(|bg| PromptPart {
        label: bg.clone(),
        kind: TokenKind::Background,
        surface_text: bg.clone(),
    }));
    Ok(PromptPlan {
        sentence_template: SENTENCE_TEMPLATE.into(),
        parts,
        synonym_table: synonyms.clone(),
        background_prompts: backgrounds.to_vec(),
    })
}

/// Query for a personalized item: `<class>` is replaced by
/// `<identifier> <class>`, e.g. `a photo including <new1> mug.`
pub fn compose_identifier_query(
    class: &str,
    identifier: &str,
    synonyms: &BTreeMap<String, String>,
) -> Result<PromptPlan> {
    if class.is_empty() || identifier.is_empty() {
        return Err(Error::Invalid(
            "identifier query needs a class and an identifier".into(),
        ));
    }
    Ok(PromptPlan {
        sentence_template: SENTENCE_TEMPLATE.into(),
        parts: vec![
            PromptPart {
                label: identifier.into(),
                kind: TokenKind::Identifier,
                surface_text: identifier.into(),
            },
            PromptPart {
                label: class.into(),
                kind: TokenKind::Category,
                surface_text: surface(class, synonyms),
            },
        ],
        synonym_table: synonyms.clone(),
        background_prompts: Vec::new(),
    })
}

fn surface(label: &str, synonyms: &BTreeMap<String, String>) -> String {
    synonyms
        .get(label)
        .cloned()
        .unwrap_or_else(|| label.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LabelRef {
    pub label: String,
    pub kind: TokenKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KindMismatch {
    pub label: String,
    pub expected: TokenKind,
    pub found: TokenKind,
}

/// Everything that differs between a plan and a manifest.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ManifestMismatch {
    pub missing: Vec<LabelRef>,
    pub extra: Vec<LabelRef>,
    pub wrong_kind: Vec<KindMismatch>,
    pub invalid: Option<String>,
}

impl ManifestMismatch {
    pub fn is_empty(&self) -> bool {
        self.missing.is_empty()
            && self.extra.is_empty()
            && self.wrong_kind.is_empty()
            && self.invalid.is_none()
    }
}

impl fmt::Display for ManifestMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut sep = "";
        if let Some(msg) = &self.invalid {
            write!(f, "invalid manifest: {msg}")?;
            sep = "; ";
        }
        for m in &self.missing {
            write!(f, "{sep}missing {} {:?}", m.kind, m.label)?;
            sep = "; ";
        }
        for m in &self.extra {
            write!(f, "{sep}extra {} {:?}", m.kind, m.label)?;
            sep = "; ";
        }
        for m in &self.wrong_kind {
            write!(
                f,
                "{sep}{:?} is {} in manifest, plan expects {}",
                m.label, m.found, m.expected
            )?;
            sep = "; ";
        }
        Ok(())
    }
}

/// Checks that `manifest` realizes `plan`: every planned category,
/// identifier and background prompt has a span of the same kind, and the
/// manifest has no unplanned labelled spans. Spans of kind `other` are
/// ignored.
pub fn validate_manifest(
    plan: &PromptPlan,
    manifest: &TokenManifest,
) -> std::result::Result<(), ManifestMismatch> {
    let mut report = ManifestMismatch::default();
    if let Err(e) = manifest.validate(usize::MAX) {
        report.invalid = Some(e.to_string());
    }

    for part in &plan.parts {
        if part.kind == TokenKind::Other {
            continue;
        }
        let found: Vec<TokenKind> = manifest
            .entries
            .iter()
            .filter(|e| e.label == part.label)
            .map(|e| e.kind)
            .collect();
        if found.contains(&part.kind) {
            continue;
        }
        match found.iter().find(|&&k| k != TokenKind::Other) {
            Some(&k) => report.wrong_kind.push(KindMismatch {
                label: part.label.clone(),
                expected: part.kind,
                found: k,
            }),
            None => report.missing.push(LabelRef {
                label: part.label.clone(),
                kind: part.kind,
            }),
        }
    }

    for e in &manifest.entries {
        if e.kind == TokenKind::Other {
            continue;
        }
        if !plan.parts.iter().any(|p| p.label == e.label) {
            report.extra.push(LabelRef {
                label: e.label.clone(),
                kind: e.kind,
            });
        }
    }

    if report.is_empty() {
        Ok(())
    } else {
        Err(report)
    }
}

/// Parses `class = surface text` lines. Blank lines and `#` comments are
/// skipped.
pub fn parse_synonyms(text: &str) -> Result<BTreeMap<String, String>> {
    let mut table = BTreeMap::new();
    for (n, line) in config_lines(text) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("synonyms line {n}: expected `class = text`")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(Error::Config(format!("synonyms line {n}: empty class or text")));
        }
        table.insert(k.to_string(), v.to_string());
    }
    Ok(table)
}

/// One background prompt per line.
pub fn parse_backgrounds(text: &str) -> Vec<String> {
    config_lines(text).map(|(_, l)| l.to_string()).collect()
}

pub fn default_synonyms() -> BTreeMap<String, String> {
    parse_synonyms(DEFAULT_SYNONYMS).expect("bundled synonym table parses")
}

pub fn default_backgrounds() -> Vec<String> {
    parse_backgrounds(DEFAULT_BACKGROUNDS)
}

/// PASCAL VOC class names with their dataset ids (1..=20).
pub fn voc_class_ids() -> BTreeMap<String, u8> {
    config_lines(VOC_CLASSES)
        .enumerate()
        .map(|(i, (_, name))| (name.to_string(), i as u8 + 1))
        .collect()
}

fn config_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then_some((i + 1, line))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_store::{TokenEntry, TokenSpan};

    fn none() -> BTreeMap<String, String> {
        BTreeMap::new()
    }

    #[test]
    fn three_categories() {
        let plan = compose_query(&["sofa", "bottle", "chair"], &none(), &[]).unwrap();
        assert_eq!(plan.sentence(), "a photo including bottle, chair, and sofa.");
    }

    #[test]
    fn person_synonym() {
        let plan = compose_query(&["person"], &default_synonyms(), &[]).unwrap();
        assert_eq!(plan.sentence(), "a photo including person with clothes.");
        assert_eq!(plan.parts[0].label, "person");
    }

    #[test]
    fn backgrounds_follow_categories() {
        let bgs = vec!["railway".to_string(), "track".to_string()];
        let plan = compose_query(&["train"], &none(), &bgs).unwrap();
        assert_eq!(plan.sentence(), "a photo including train, railway, track.");
        let kinds: Vec<TokenKind> = plan.parts.iter().map(|p| p.kind).collect();
        assert_eq!(
            kinds,
            vec![TokenKind::Category, TokenKind::Background, TokenKind::Background]
        );
    }

    #[test]
    fn two_categories_use_plain_and() {
        let plan = compose_query(&["dog", "cat"], &none(), &[]).unwrap();
        assert_eq!(plan.sentence(), "a photo including cat and dog.");
    }

    #[test]
    fn empty_classes_rejected() {
        let empty: [&str; 0] = [];
        assert!(compose_query(&empty, &none(), &[]).is_err());
    }

    #[test]
    fn deterministic_and_deduplicated() {
        let a = compose_query(&["b", "a", "b"], &none(), &[]).unwrap();
        let b = compose_query(&["a", "b"], &none(), &[]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identifier_sentence() {
        let plan = compose_identifier_query("mug", "<new1>", &none()).unwrap();
        assert_eq!(plan.sentence(), "a photo including <new1> mug.");
    }

    #[test]
    fn default_lists() {
        let bgs = default_backgrounds();
        assert_eq!(bgs.len(), 10);
        assert_eq!(bgs[0], "tree");
        assert_eq!(bgs[9], "rocks");
        let voc = voc_class_ids();
        assert_eq!(voc.len(), 20);
        assert_eq!(voc["aeroplane"], 1);
        assert_eq!(voc["person"], 15);
        assert_eq!(voc["tvmonitor"], 20);
    }

    #[test]
    fn synonym_parse_errors_carry_line() {
        let err = parse_synonyms("cat = kitty\n\nbroken line\n").unwrap_err();
        assert!(err.to_string().contains("line 3"));
    }

    fn manifest_for(labels: &[(&str, TokenKind, usize, usize)]) -> TokenManifest {
        TokenManifest {
            prompt_text: String::new(),
            entries: labels
                .iter()
                .map(|&(l, k, a, b)| TokenEntry::new(l, k, TokenSpan::new(a, b)))
                .collect(),
            class_ids: BTreeMap::new(),
        }
    }

    #[test]
    fn matching_manifest_validates() {
        let plan = compose_query(&["bottle", "chair", "sofa"], &none(), &[]).unwrap();
        let m = manifest_for(&[
            ("a", TokenKind::Other, 0, 0),
            ("bottle", TokenKind::Category, 3, 3),
            ("chair", TokenKind::Category, 5, 5),
            ("sofa", TokenKind::Category, 8, 8),
        ]);
        assert!(validate_manifest(&plan, &m).is_ok());
    }

    #[test]
    fn missing_sofa_reported() {
        let plan = compose_query(&["bottle", "chair", "sofa"], &none(), &[]).unwrap();
        let m = manifest_for(&[
            ("bottle", TokenKind::Category, 3, 3),
            ("chair", TokenKind::Category, 5, 5),
        ]);
        let report = validate_manifest(&plan, &m).unwrap_err();
        assert_eq!(
            report.missing,
            vec![LabelRef {
                label: "sofa".into(),
                kind: TokenKind::Category
            }]
        );
        assert!(report.extra.is_empty());
    }

    #[test]
    fn overlapping_spans_rejected() {
        let plan = compose_query(&["cat", "dog"], &none(), &[]).unwrap();
        let m = manifest_for(&[
            ("cat", TokenKind::Category, 3, 4),
            ("dog", TokenKind::Category, 4, 5),
        ]);
        let report = validate_manifest(&plan, &m).unwrap_err();
        assert!(report.invalid.is_some());
    }

    #[test]
    fn wrong_kind_and_extra() {
        let bgs = vec!["railway".to_string()];
        let plan = compose_query(&["train"], &none(), &bgs).unwrap();
        let m = manifest_for(&[
            ("train", TokenKind::Category, 3, 3),
            ("railway", TokenKind::Category, 5, 5),
            ("<new1>", TokenKind::Identifier, 2, 2),
        ]);
        let report = validate_manifest(&plan, &m).unwrap_err();
        assert_eq!(report.wrong_kind.len(), 1);
        assert_eq!(report.wrong_kind[0].expected, TokenKind::Background);
        assert_eq!(report.extra.len(), 1);
        assert_eq!(report.extra[0].label, "<new1>");
    }
}
