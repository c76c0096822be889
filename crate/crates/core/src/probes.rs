//! Template parsing, lexicon loading and probe generation.
//!
//! A template is a sentence with `{PLACEHOLDER}` slots. Each slot is filled
//! from a lexicon whose entries carry demographic labels ("axes"); the filled
//! sentence plus the merged labels is a [`Probe`].
//!
//! Label keys produced per placeholder:
//!
//! | placeholder  | lexicon    | label keys                               |
//! |--------------|------------|------------------------------------------|
//! | `{NAME}`     | `names`    | `gender`, `race`                         |
//! | `{REL1}`     | `rel1`     | `rel1_gender`                            |
//! | `{REL2}`     | `rel2`     | `rel2_gender`                            |
//! | `{LOCATION}` | `location` | `location`, `kind`, optional `religion`  |
//!
//! `{POSS}` is never supplied; it renders as `his`/`her` from the `{REL1}`
//! entry's gender. Relationship probes also get a derived `orientation` label:
//! `homosexual` when both relationship genders match, else `heterosexual`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl::{self, LineError};

pub const DEFAULT_TEMPLATES: &str = include_str!("../data/templates.jsonl");
pub const DEFAULT_LEXICONS: &str = include_str!("../data/lexicons.jsonl");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasType {
    Names,
    SexualOrientation,
    Location,
}

impl BiasType {
    pub const ALL: [BiasType; 3] = [BiasType::Names, BiasType::SexualOrientation, BiasType::Location];

    pub fn as_str(self) -> &'static str {
        match self {
            BiasType::Names => "names",
            BiasType::SexualOrientation => "sexual_orientation",
            BiasType::Location => "location",
        }
    }

    pub fn placeholders(self) -> &'static [Placeholder] {
        match self {
            BiasType::Names => &[Placeholder::Name],
            BiasType::SexualOrientation => &[Placeholder::Rel1, Placeholder::Poss, Placeholder::Rel2],
            BiasType::Location => &[Placeholder::Location],
        }
    }

    /// Placeholders filled from a lexicon, in substitution order.
    pub fn supplied(self) -> Vec<Placeholder> {
        self.placeholders()
            .iter()
            .copied()
            .filter(|p| p.lexicon().is_some())
            .collect()
    }
}

impl fmt::Display for BiasType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BiasType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        BiasType::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown bias type {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Placeholder {
    Name,
    Rel1,
    Poss,
    Rel2,
    Location,
}

impl Placeholder {
    pub fn parse(token: &str) -> Option<Self> {
        Some(match token {
            "NAME" => Placeholder::Name,
            "REL1" => Placeholder::Rel1,
            "POSS" => Placeholder::Poss,
            "REL2" => Placeholder::Rel2,
            "LOCATION" => Placeholder::Location,
            _ => return None,
        })
    }

    pub fn token(self) -> &'static str {
        match self {
            Placeholder::Name => "{NAME}",
            Placeholder::Rel1 => "{REL1}",
            Placeholder::Poss => "{POSS}",
            Placeholder::Rel2 => "{REL2}",
            Placeholder::Location => "{LOCATION}",
        }
    }

    /// Lexicon supplying this slot; `None` for derived slots.
    pub fn lexicon(self) -> Option<&'static str> {
        match self {
            Placeholder::Name => Some("names"),
            Placeholder::Rel1 => Some("rel1"),
            Placeholder::Poss => None,
            Placeholder::Rel2 => Some("rel2"),
            Placeholder::Location => Some("location"),
        }
    }

    fn label_prefix(self) -> &'static str {
        match self {
            Placeholder::Rel1 => "rel1_",
            Placeholder::Rel2 => "rel2_",
            _ => "",
        }
    }
}

/// Every `{...}` token in `text`, in order of appearance. Tokens that are
/// not known placeholders are returned as `Err(token)`.
pub fn scan_placeholders(text: &str) -> Vec<std::result::Result<Placeholder, String>> {
    let mut found = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let token = &after[..close];
                found.push(Placeholder::parse(token).ok_or_else(|| format!("{{{token}}}")));
                rest = &after[close + 1..];
            }
            None => {
                found.push(Err(format!("unterminated placeholder in {text:?}")));
                break;
            }
        }
    }
    found
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub id: String,
    pub bias_type: BiasType,
    pub text: String,
}

impl Template {
    /// Checks that the placeholders in `text` are exactly those of `bias_type`.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let mut present = BTreeSet::new();
        for p in scan_placeholders(&self.text) {
            match p {
                Ok(p) => {
                    present.insert(p);
                }
                Err(token) => return Err(format!("template {}: unknown placeholder {token}", self.id)),
            }
        }
        let allowed: BTreeSet<Placeholder> = self.bias_type.placeholders().iter().copied().collect();
        if let Some(extra) = present.difference(&allowed).next() {
            return Err(format!(
                "template {}: placeholder {} not allowed for bias type {}",
                self.id,
                extra.token(),
                self.bias_type
            ));
        }
        if let Some(missing) = allowed.difference(&present).next() {
            return Err(format!(
                "template {}: missing placeholder {} required by bias type {}",
                self.id,
                missing.token(),
                self.bias_type
            ));
        }
        Ok(())
    }
}

pub fn parse_templates(text: &str) -> (Vec<Template>, Vec<LineError>) {
    let (raw, mut errors) = jsonl::parse_lines::<Template>(text);
    let mut ids = BTreeSet::new();
    let mut templates = Vec::new();
    for (line, t) in raw {
        if let Err(message) = t.validate() {
            errors.push(LineError { line, message });
        } else if !ids.insert(t.id.clone()) {
            errors.push(LineError {
                line,
                message: format!("duplicate template id {:?}", t.id),
            });
        } else {
            templates.push(t);
        }
    }
    errors.sort_by_key(|e| e.line);
    (templates, errors)
}

pub fn load_templates(path: &Path) -> Result<(Vec<Template>, Vec<LineError>)> {
    Ok(parse_templates(&jsonl::read_to_string(path)?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub lexicon: String,
    pub surface: String,
    pub axes: BTreeMap<String, String>,
    /// Opposite-gender partner for relationship words.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterpart: Option<String>,
}

impl LexiconEntry {
    pub fn gender(&self) -> Option<&str> {
        self.axes.get("gender").map(String::as_str)
    }
}

/// Axes every entry of a lexicon must carry.
pub fn required_axes(lexicon: &str) -> &'static [&'static str] {
    match lexicon {
        "names" => &["gender", "race"],
        "rel1" | "rel2" => &["gender"],
        "location" => &["location", "kind"],
        _ => &[],
    }
}

/// Entries grouped by lexicon, each group in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicons {
    groups: BTreeMap<String, Vec<LexiconEntry>>,
}

impl Lexicons {
    pub fn get(&self, lexicon: &str) -> &[LexiconEntry] {
        self.groups.get(lexicon).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.groups.keys().map(String::as_str)
    }

    pub fn find(&self, lexicon: &str, surface: &str) -> Option<&LexiconEntry> {
        self.get(lexicon).iter().find(|e| e.surface == surface)
    }

    /// Surfaces of a lexicon, e.g. the nightlife category list.
    pub fn surfaces(&self, lexicon: &str) -> Vec<String> {
        self.get(lexicon).iter().map(|e| e.surface.clone()).collect()
    }

    /// Checks that counterparts within `lexicon` form a total, gender-flipping
    /// involution: every entry has a partner, the partner's partner is the
    /// entry, and the two genders differ.
    pub fn check_counterparts(&self, lexicon: &str) -> std::result::Result<(), String> {
        let entries = self.get(lexicon);
        let by_surface: HashMap<&str, &LexiconEntry> = entries.iter().map(|e| (e.surface.as_str(), e)).collect();
        for e in entries {
            let partner = e
                .counterpart
                .as_deref()
                .ok_or_else(|| format!("{lexicon}/{} has no counterpart", e.surface))?;
            let p = by_surface
                .get(partner)
                .ok_or_else(|| format!("{lexicon}/{}: counterpart {partner:?} not in lexicon", e.surface))?;
            if p.counterpart.as_deref() != Some(e.surface.as_str()) {
                return Err(format!("{lexicon}: {} ↔ {partner} is not symmetric", e.surface));
            }
            if p.gender() == e.gender() {
                return Err(format!("{lexicon}: {} and {partner} share a gender", e.surface));
            }
        }
        Ok(())
    }
}

pub fn parse_lexicons(text: &str) -> (Lexicons, Vec<LineError>) {
    let (raw, mut errors) = jsonl::parse_lines::<LexiconEntry>(text);
    let mut lex = Lexicons::default();
    for (line, entry) in raw {
        let missing: Vec<&str> = required_axes(&entry.lexicon)
            .iter()
            .copied()
            .filter(|a| !entry.axes.contains_key(*a))
            .collect();
        let group = lex.groups.entry(entry.lexicon.clone()).or_default();
        if entry.surface.trim().is_empty() {
            errors.push(LineError {
                line,
                message: "empty surface".into(),
            });
        } else if !missing.is_empty() {
            errors.push(LineError {
                line,
                message: format!("{}/{} missing axes {missing:?}", entry.lexicon, entry.surface),
            });
        } else if group.iter().any(|e| e.surface == entry.surface) {
            errors.push(LineError {
                line,
                message: format!("duplicate surface {:?} in lexicon {}", entry.surface, entry.lexicon),
            });
        } else {
            group.push(entry);
        }
    }
    lex.groups.retain(|_, v| !v.is_empty());
    errors.sort_by_key(|e| e.line);
    (lex, errors)
}

pub fn load_lexicons(path: &Path) -> Result<(Lexicons, Vec<LineError>)> {
    Ok(parse_lexicons(&jsonl::read_to_string(path)?))
}

/// The shipped templates and lexicons.
pub fn default_templates() -> Vec<Template> {
    let (t, errors) = parse_templates(DEFAULT_TEMPLATES);
    assert!(errors.is_empty(), "shipped templates invalid: {errors:?}");
    t
}

pub fn default_lexicons() -> Lexicons {
    let (l, errors) = parse_lexicons(DEFAULT_LEXICONS);
    assert!(errors.is_empty(), "shipped lexicons invalid: {errors:?}");
    l
}

pub type Labels = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Probe {
    pub probe_id: String,
    pub template_id: String,
    pub bias_type: BiasType,
    pub text: String,
    pub labels: Labels,
}

/// Fills every placeholder of `template` from `entries` (one per supplied slot).
pub fn instantiate(template: &Template, entries: &BTreeMap<Placeholder, &LexiconEntry>) -> Result<Probe> {
    let supplied = template.bias_type.supplied();
    for p in &supplied {
        if !entries.contains_key(p) {
            return Err(Error::Data(format!(
                "template {}: no entry supplied for {}",
                template.id,
                p.token()
            )));
        }
    }
    if let Some(extra) = entries.keys().find(|p| !supplied.contains(p)) {
        return Err(Error::Data(format!(
            "template {}: entry supplied for unused placeholder {}",
            template.id,
            extra.token()
        )));
    }

    let mut text = template.text.clone();
    let mut labels = Labels::new();
    for p in &supplied {
        let entry = entries[p];
        text = text.replace(p.token(), &entry.surface);
        for (axis, value) in &entry.axes {
            labels.insert(format!("{}{axis}", p.label_prefix()), value.clone());
        }
    }
    if template.bias_type == BiasType::SexualOrientation {
        let g1 = entries[&Placeholder::Rel1].gender();
        let g2 = entries[&Placeholder::Rel2].gender();
        let possessive = match g1 {
            Some("male") => "his",
            Some("female") => "her",
            other => {
                return Err(Error::Data(format!(
                    "cannot derive {{POSS}} from relationship gender {other:?}"
                )))
            }
        };
        text = text.replace(Placeholder::Poss.token(), possessive);
        let orientation = if g1 == g2 { "homosexual" } else { "heterosexual" };
        labels.insert("orientation".into(), orientation.into());
    }
    if labels.is_empty() {
        return Err(Error::Data(format!(
            "template {}: substitutions carry no labels",
            template.id
        )));
    }
    let surfaces: Vec<&str> = supplied.iter().map(|p| entries[p].surface.as_str()).collect();
    Ok(Probe {
        probe_id: format!("{}/{}", template.id, surfaces.join("+")),
        template_id: template.id.clone(),
        bias_type: template.bias_type,
        text,
        labels,
    })
}

/// Cross product of the templates of `bias_type` (ascending id) with the
/// admissible lexicon entries (lexicon order, first slot varying slowest).
pub fn generate_probe_set(bias_type: BiasType, templates: &[Template], lexicons: &Lexicons) -> Result<Vec<Probe>> {
    let mut selected: Vec<&Template> = templates.iter().filter(|t| t.bias_type == bias_type).collect();
    selected.sort_by(|a, b| a.id.cmp(&b.id));
    let slots = bias_type.supplied();
    let pools: Vec<&[LexiconEntry]> = slots
        .iter()
        .map(|p| lexicons.get(p.lexicon().expect("supplied slots have lexicons")))
        .collect();

    let combos: usize = pools.iter().map(|p| p.len()).product();
    let mut probes = Vec::with_capacity(selected.len() * combos);
    for template in selected {
        for n in 0..combos {
            // mixed-radix decode, last slot varying fastest
            let mut rem = n;
            let mut entries = BTreeMap::new();
            for d in (0..slots.len()).rev() {
                entries.insert(slots[d], &pools[d][rem % pools[d].len()]);
                rem /= pools[d].len();
            }
            probes.push(instantiate(template, &entries)?);
        }
    }
    Ok(probes)
}
