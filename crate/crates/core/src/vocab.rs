//! Vocabulary expansion: every aerial category becomes a bag of textual
//! variations whose members all count as positives for that category.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, FormatError};
use crate::seeding::sub_seed;

pub const TEXT_BAGS_FORMAT: &str = "crossview-text-bags";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("no categories to expand")]
    NoCategories,
    #[error("max_variants must be at least 1")]
    ZeroMaxVariants,
    #[error("duplicate category id {0}")]
    DuplicateCategory(u32),
    #[error("category {0}: canonical name is empty")]
    EmptyName(u32),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Case-insensitive matching key: trimmed, inner whitespace collapsed, lowercase.
pub fn variant_key(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    /// Display form as produced by the generator.
    pub text: String,
    /// Normalized form used for matching.
    pub key: String,
}

impl Variant {
    pub fn new(text: &str) -> Self {
        Self {
            text: text.trim().to_string(),
            key: variant_key(text),
        }
    }
}

/// A category with its ordered, deduplicated variation set. The canonical
/// name is always the first variant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextBag {
    pub category_id: u32,
    pub canonical: String,
    pub variants: Vec<Variant>,
}

impl TextBag {
    /// Builds a bag from the canonical name followed by `candidates`,
    /// dropping blanks and case-insensitive duplicates, keeping at most
    /// `max_variants` entries (canonical included).
    pub fn build<'a>(
        category_id: u32,
        canonical: &str,
        candidates: impl IntoIterator<Item = &'a str>,
        max_variants: usize,
    ) -> Self {
        let mut seen = BTreeSet::new();
        let variants = std::iter::once(Variant::new(canonical))
            .chain(candidates.into_iter().map(Variant::new))
            .filter(|v| !v.key.is_empty() && seen.insert(v.key.clone()))
            .take(max_variants.max(1))
            .collect();
        Self {
            category_id,
            canonical: canonical.trim().to_string(),
            variants,
        }
    }

    pub fn len(&self) -> usize {
        self.variants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variants.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.variants.iter().map(|v| v.text.as_str())
    }

    fn check(&self) -> Result<(), String> {
        let Some(first) = self.variants.first() else {
            return Err(format!("category {}: empty variant list", self.category_id));
        };
        if first.key != variant_key(&self.canonical) {
            return Err(format!(
                "category {}: first variant {:?} is not the canonical name {:?}",
                self.category_id, first.text, self.canonical
            ));
        }
        let mut seen = BTreeSet::new();
        for v in &self.variants {
            if v.key != variant_key(&v.text) {
                return Err(format!("variant {:?} has inconsistent key {:?}", v.text, v.key));
            }
            if !seen.insert(&v.key) {
                return Err(format!("category {}: duplicate variant {:?}", self.category_id, v.text));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("{0}")]
pub struct GeneratorError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariantRequest<'a> {
    pub category_name: &'a str,
    pub seed: u64,
}

/// A label-variation source, e.g. an LLM client or an offline mock.
pub trait VariantGenerator: Sync {
    fn variations(&self, request: &VariantRequest<'_>) -> Result<Vec<String>, GeneratorError>;
}

/// Recorded variations for five xView categories.
pub const REFERENCE_VARIATIONS: &[(&str, &[&str])] = &[
    (
        "Small Aircraft",
        &[
            "Light airplane",
            "Private plane",
            "Single-engine aircraft",
            "Propeller plane",
            "Cessna-type aircraft",
            "General aviation aircraft",
        ],
    ),
    (
        "Helicopter",
        &[
            "Chopper",
            "Rotary-wing aircraft",
            "Rotorcraft",
            "Helo",
            "Air ambulance",
            "Military helicopter",
            "Rescue helicopter",
        ],
    ),
    (
        "Shed",
        &["Storage shed", "Outbuilding", "Toolshed", "Garden shed", "Small barn"],
    ),
    (
        "Excavator",
        &["Digger", "Backhoe", "Trackhoe", "Mechanical shovel", "Hydraulic excavator"],
    ),
    (
        "Small Car",
        &[
            "Compact car",
            "Hatchback",
            "Subcompact vehicle",
            "Economy car",
            "City car",
            "Two-door car",
            "Four-door car",
        ],
    ),
];

const TEMPLATES: &[&str] = &[
    "aerial view of {}",
    "{} seen from above",
    "overhead {}",
    "satellite image of a {}",
    "top-down view of a {}",
    "{} from a drone",
    "remote sensing {}",
];

/// Deterministic offline generator: a synonym table for known names and
/// phrase templates for everything else. The seed rotates the template order.
#[derive(Debug, Clone, Default)]
pub struct TemplateGenerator {
    synonyms: BTreeMap<String, Vec<String>>,
    template_count: Option<usize>,
}

impl TemplateGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Generator preloaded with [`REFERENCE_VARIATIONS`].
    pub fn with_reference_table() -> Self {
        REFERENCE_VARIATIONS
            .iter()
            .fold(Self::new(), |g, (name, vars)| {
                g.with_synonyms(name, vars.iter().copied())
            })
    }

    pub fn with_synonyms<'a>(mut self, name: &str, variants: impl IntoIterator<Item = &'a str>) -> Self {
        self.synonyms
            .insert(variant_key(name), variants.into_iter().map(str::to_string).collect());
        self
    }

    /// Limit template output to the first `n` rotated templates.
    pub fn with_template_count(mut self, n: usize) -> Self {
        self.template_count = Some(n.min(TEMPLATES.len()));
        self
    }
}

impl VariantGenerator for TemplateGenerator {
    fn variations(&self, request: &VariantRequest<'_>) -> Result<Vec<String>, GeneratorError> {
        if let Some(list) = self.synonyms.get(&variant_key(request.category_name)) {
            return Ok(list.clone());
        }
        let name = request.category_name.trim();
        let start = (request.seed % TEMPLATES.len() as u64) as usize;
        let count = self.template_count.unwrap_or(TEMPLATES.len());
        Ok((0..count)
            .map(|i| TEMPLATES[(start + i) % TEMPLATES.len()].replace("{}", name))
            .collect())
    }
}

/// Returns only the canonical name.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityGenerator;

impl VariantGenerator for IdentityGenerator {
    fn variations(&self, request: &VariantRequest<'_>) -> Result<Vec<String>, GeneratorError> {
        Ok(vec![request.category_name.to_string()])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorWarning {
    pub category_id: u32,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Expansion {
    /// Sorted by category id.
    pub bags: Vec<TextBag>,
    pub warnings: Vec<GeneratorWarning>,
}

impl Expansion {
    pub fn totals(&self) -> VariantTotals {
        variant_totals(&self.bags)
    }
}

/// Expands each `(category_id, name)` into a bag of at most `max_variants`
/// entries. A generator failure yields a canonical-only bag and a warning.
pub fn expand_vocabulary(
    categories: &[(u32, String)],
    generator: &dyn VariantGenerator,
    max_variants: usize,
    seed: u64,
) -> Result<Expansion, VocabError> {
    if categories.is_empty() {
        return Err(VocabError::NoCategories);
    }
    if max_variants == 0 {
        return Err(VocabError::ZeroMaxVariants);
    }
    let mut ids = BTreeSet::new();
    for (id, name) in categories {
        if !ids.insert(*id) {
            return Err(VocabError::DuplicateCategory(*id));
        }
        if name.trim().is_empty() {
            return Err(VocabError::EmptyName(*id));
        }
    }
    let mut sorted: Vec<&(u32, String)> = categories.iter().collect();
    sorted.sort_by_key(|(id, _)| *id);

    let mut out = Expansion::default();
    for (id, name) in sorted {
        let request = VariantRequest {
            category_name: name,
            seed: sub_seed(seed, "vocab", u64::from(*id)),
        };
        let generated = match generator.variations(&request) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("variant generator failed for {name:?}: {e}");
                out.warnings.push(GeneratorWarning {
                    category_id: *id,
                    message: e.0,
                });
                Vec::new()
            }
        };
        out.bags.push(TextBag::build(
            *id,
            name,
            generated.iter().map(String::as_str),
            max_variants,
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariantTotals {
    pub with_canonical: usize,
    pub without_canonical: usize,
}

pub fn variant_totals(bags: &[TextBag]) -> VariantTotals {
    let with_canonical: usize = bags.iter().map(TextBag::len).sum();
    VariantTotals {
        with_canonical,
        without_canonical: with_canonical - bags.iter().filter(|b| !b.is_empty()).count(),
    }
}

/// A normalized variant shared by several bags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Collision {
    pub key: String,
    pub categories: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BagReport {
    pub collisions: Vec<Collision>,
    pub empty_bags: Vec<u32>,
}

impl BagReport {
    pub fn is_clean(&self) -> bool {
        self.collisions.is_empty() && self.empty_bags.is_empty()
    }
}

/// Lists cross-bag variant collisions and empty bags. Collisions are allowed
/// in training (positivity stays bag-local) but are surfaced here.
pub fn validate_bags(bags: &[TextBag]) -> BagReport {
    let mut owners: BTreeMap<&str, BTreeSet<u32>> = BTreeMap::new();
    for bag in bags {
        for v in &bag.variants {
            owners.entry(v.key.as_str()).or_default().insert(bag.category_id);
        }
    }
    BagReport {
        collisions: owners
            .into_iter()
            .filter(|(_, cats)| cats.len() > 1)
            .map(|(key, cats)| Collision {
                key: key.to_string(),
                categories: cats.into_iter().collect(),
            })
            .collect(),
        empty_bags: bags
            .iter()
            .filter(|b| b.is_empty())
            .map(|b| b.category_id)
            .collect(),
    }
}

/// Writes bags ordered by category id.
pub fn write_text_bags(bags: &[TextBag], path: &Path) -> Result<(), VocabError> {
    let mut sorted: Vec<&TextBag> = bags.iter().collect();
    sorted.sort_by_key(|b| b.category_id);
    let header = io::Header {
        format: TEXT_BAGS_FORMAT.into(),
        version: FORMAT_VERSION,
    };
    io::write_tagged(path, &header, sorted)?;
    Ok(())
}

pub fn read_text_bags(path: &Path) -> Result<Vec<TextBag>, VocabError> {
    let (_, body) = io::read_tagged(path, TEXT_BAGS_FORMAT, FORMAT_VERSION)?;
    let mut ids = BTreeSet::new();
    let mut bags = Vec::with_capacity(body.len());
    for line in &body {
        let bag: TextBag = io::parse_json_line(line)?;
        if !ids.insert(bag.category_id) {
            return Err(FormatError::parse(line.line, format!("duplicate category id {}", bag.category_id)).into());
        }
        bag.check().map_err(|m| FormatError::parse(line.line, m))?;
        bags.push(bag);
    }
    bags.sort_by_key(|b| b.category_id);
    Ok(bags)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Failing;
    impl VariantGenerator for Failing {
        fn variations(&self, _: &VariantRequest<'_>) -> Result<Vec<String>, GeneratorError> {
            Err(GeneratorError("timeout".into()))
        }
    }

    struct Twice;
    impl VariantGenerator for Twice {
        fn variations(&self, r: &VariantRequest<'_>) -> Result<Vec<String>, GeneratorError> {
            Ok(vec![r.category_name.to_string(), format!("  {} ", r.category_name.to_uppercase())])
        }
    }

    fn cats(names: &[&str]) -> Vec<(u32, String)> {
        names.iter().enumerate().map(|(i, n)| (i as u32, n.to_string())).collect()
    }

    #[test]
    fn reference_bag_for_small_aircraft() {
        let out = expand_vocabulary(&cats(&["Small Aircraft"]), &TemplateGenerator::with_reference_table(), 16, 0).unwrap();
        let bag = &out.bags[0];
        assert_eq!(bag.variants[0].text, "Small Aircraft");
        let texts: Vec<&str> = bag.texts().skip(1).collect();
        assert_eq!(
            texts,
            vec![
                "Light airplane",
                "Private plane",
                "Single-engine aircraft",
                "Propeller plane",
                "Cessna-type aircraft",
                "General aviation aircraft"
            ]
        );
    }

    #[test]
    fn duplicates_collapse() {
        let out = expand_vocabulary(&cats(&["Tower"]), &Twice, 8, 0).unwrap();
        assert_eq!(out.bags[0].len(), 1);
        assert_eq!(out.bags[0].variants[0].key, "tower");
    }

    #[test]
    fn identity_generator_gives_singletons() {
        let out = expand_vocabulary(&cats(&["a", "b", "c"]), &IdentityGenerator, 6, 0).unwrap();
        assert!(out.bags.iter().all(|b| b.len() == 1));
    }

    #[test]
    fn generator_failure_falls_back_to_canonical() {
        let out = expand_vocabulary(&cats(&["Pylon"]), &Failing, 6, 0).unwrap();
        assert_eq!(out.bags[0].len(), 1);
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn expansion_errors() {
        assert!(matches!(expand_vocabulary(&[], &IdentityGenerator, 6, 0), Err(VocabError::NoCategories)));
        assert!(matches!(expand_vocabulary(&cats(&["a"]), &IdentityGenerator, 0, 0), Err(VocabError::ZeroMaxVariants)));
        let dup = vec![(1, "a".to_string()), (1, "b".to_string())];
        assert!(matches!(expand_vocabulary(&dup, &IdentityGenerator, 6, 0), Err(VocabError::DuplicateCategory(1))));
    }

    #[test]
    fn truncation_counts_canonical() {
        let g = TemplateGenerator::new();
        let out = expand_vocabulary(&cats(&["Pylon", "Tower"]), &g, 6, 3).unwrap();
        assert!(out.bags.iter().all(|b| b.len() == 6));
        assert_eq!(
            out.totals(),
            VariantTotals {
                with_canonical: 12,
                without_canonical: 10
            }
        );
    }

    #[test]
    fn collisions_reported() {
        let a = TextBag::build(1, "Helicopter", ["Chopper"], 8);
        let c = TextBag::build(2, "Motorbike", ["chopper "], 8);
        let report = validate_bags(&[a.clone(), c]);
        assert_eq!(
            report.collisions,
            vec![Collision {
                key: "chopper".into(),
                categories: vec![1, 2]
            }]
        );
        assert!(validate_bags(&[a]).is_clean());
        let empty = TextBag {
            category_id: 4,
            canonical: "x".into(),
            variants: vec![],
        };
        assert_eq!(validate_bags(&[empty]).empty_bags, vec![4]);
    }
}
