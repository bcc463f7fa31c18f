//! Keywords, sensitive-attribute sets, and prompt templating.
//!
//! The lexicon is the single source of truth for which strings carry explicit
//! attributes: attribute membership is recorded as metadata on rendered
//! prompts and never recovered by parsing text. [`contains_sensitive`] exists
//! only for user-facing inputs (the detector's training-prompt screen).

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

/// A named set of sensitive attribute words, e.g. gender{male, female}.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSet {
    name: String,
    members: Vec<String>,
}

impl AttributeSet {
    /// Members must be nonempty tokens, pairwise distinct case-insensitively,
    /// and there must be at least two of them.
    pub fn new(name: impl Into<String>, members: Vec<String>) -> Result<Self> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(Error::InvalidAttributeSet("empty set name".into()));
        }
        if members.len() < 2 {
            return Err(Error::InvalidAttributeSet(format!(
                "set {name:?} needs at least 2 members, got {}",
                members.len()
            )));
        }
        let mut seen: Vec<String> = Vec::with_capacity(members.len());
        for m in &members {
            if m.trim().is_empty() || m.split_whitespace().count() != 1 {
                return Err(Error::InvalidAttributeSet(format!(
                    "member {m:?} of set {name:?} is not a single nonempty token"
                )));
            }
            let lower = m.to_lowercase();
            if seen.contains(&lower) {
                return Err(Error::InvalidAttributeSet(format!(
                    "duplicate member {m:?} in set {name:?}"
                )));
            }
            seen.push(lower);
        }
        Ok(AttributeSet { name, members })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Members in declaration order. That order is the determinism contract
    /// for prompt families and training batches.
    pub fn members(&self) -> &[String] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        let lower = word.to_lowercase();
        self.members.iter().any(|m| m.to_lowercase() == lower)
    }

    /// Load from a text file: first non-comment line is the set name,
    /// remaining lines are members. `#` lines and blank lines are ignored.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let mut name: Option<String> = None;
        let mut members = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match name {
                None => name = Some(line.to_string()),
                Some(_) => members.push(line.to_string()),
            }
        }
        let name = name.ok_or_else(|| Error::Parse {
            path: path.to_string(),
            line: 1,
            msg: "attribute set file has no name line".into(),
        })?;
        AttributeSet::new(name, members)
    }
}

/// Keyword category, carried as metadata only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeywordCategory {
    Occupation,
    Emotion,
    Custom,
}

/// A human-description term such as "doctor" or "pleasant".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keyword {
    text: String,
    category: KeywordCategory,
}

impl Keyword {
    pub fn new(text: impl Into<String>, category: KeywordCategory) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::InvalidKeyword {
                keyword: text,
                reason: "empty keyword".into(),
            });
        }
        Ok(Keyword { text, category })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn category(&self) -> KeywordCategory {
        self.category
    }
}

impl fmt::Display for Keyword {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Prompt pattern with a `{c}` keyword slot and an optional `{a}` attribute
/// slot. The neutral rendering replaces `{a}` with the empty string and
/// collapses whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pattern: String,
}

impl PromptTemplate {
    /// The pattern must contain exactly one `{c}` and at most one `{a}`.
    pub fn new(pattern: impl Into<String>) -> Result<Self> {
        let pattern = pattern.into();
        let c_count = pattern.matches("{c}").count();
        let a_count = pattern.matches("{a}").count();
        if c_count != 1 {
            return Err(Error::InvalidTemplate {
                pattern,
                reason: format!("expected exactly one {{c}}, found {c_count}"),
            });
        }
        if a_count > 1 {
            return Err(Error::InvalidTemplate {
                pattern,
                reason: format!("expected at most one {{a}}, found {a_count}"),
            });
        }
        Ok(PromptTemplate { pattern })
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    /// Template from Table 3-style occupation prompts.
    pub fn occupation() -> Self {
        PromptTemplate::new("an image of an {a} {c}").expect("valid builtin template")
    }

    /// Template from Table 2-style emotion prompts.
    pub fn emotion() -> Self {
        PromptTemplate::new("an image of an {a} {c} person").expect("valid builtin template")
    }

    fn render(&self, keyword: &str, attribute: Option<&str>) -> String {
        let substituted = self
            .pattern
            .replace("{a}", attribute.unwrap_or(""))
            .replace("{c}", keyword);
        // Collapse runs of whitespace and trim; this is what makes the
        // neutral rendering well-formed.
        substituted.split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

/// A rendered prompt plus the metadata that produced it. `attribute` is
/// authoritative; it is never re-derived from `text`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub text: String,
    pub keyword: Keyword,
    pub attribute: Option<String>,
}

impl PromptInstance {
    pub fn is_neutral(&self) -> bool {
        self.attribute.is_none()
    }
}

/// Registry of attribute sets and keywords. Immutable once built; safe for
/// concurrent reads.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    attribute_sets: Vec<AttributeSet>,
    keywords: Vec<Keyword>,
}

impl Lexicon {
    pub fn new() -> Self {
        Lexicon::default()
    }

    pub fn register_attribute_set(&mut self, set: AttributeSet) -> Result<()> {
        if self
            .attribute_sets
            .iter()
            .any(|s| s.name().eq_ignore_ascii_case(set.name()))
        {
            return Err(Error::InvalidAttributeSet(format!(
                "attribute set {:?} already registered",
                set.name()
            )));
        }
        // Keywords already present must stay attribute-free under the new set.
        for kw in &self.keywords {
            if let Some(word) = first_sensitive_token(kw.text(), &set) {
                return Err(Error::InvalidKeyword {
                    keyword: kw.text().to_string(),
                    reason: format!("contains attribute word {word:?} from set {:?}", set.name()),
                });
            }
        }
        self.attribute_sets.push(set);
        Ok(())
    }

    /// Adds a keyword, rejecting any that contains a registered attribute
    /// word as a whole token.
    pub fn add_keyword(&mut self, keyword: Keyword) -> Result<()> {
        for set in &self.attribute_sets {
            if let Some(word) = first_sensitive_token(keyword.text(), set) {
                return Err(Error::InvalidKeyword {
                    keyword: keyword.text().to_string(),
                    reason: format!("contains attribute word {word:?} from set {:?}", set.name()),
                });
            }
        }
        if self
            .keywords
            .iter()
            .any(|k| k.text().eq_ignore_ascii_case(keyword.text()))
        {
            return Err(Error::InvalidKeyword {
                keyword: keyword.text().to_string(),
                reason: "duplicate keyword".into(),
            });
        }
        self.keywords.push(keyword);
        Ok(())
    }

    /// Loads keywords from a text file: one keyword per line, `#` begins a
    /// comment line, blank lines ignored.
    pub fn load_keywords(&mut self, path: impl AsRef<Path>, category: KeywordCategory) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        self.parse_keywords(&text, &path.display().to_string(), category)
    }

    pub fn parse_keywords(
        &mut self,
        text: &str,
        path: &str,
        category: KeywordCategory,
    ) -> Result<()> {
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let keyword = Keyword::new(line, category).map_err(|e| Error::Parse {
                path: path.to_string(),
                line: idx + 1,
                msg: e.to_string(),
            })?;
            self.add_keyword(keyword).map_err(|e| Error::Parse {
                path: path.to_string(),
                line: idx + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn attribute_sets(&self) -> &[AttributeSet] {
        &self.attribute_sets
    }

    pub fn attribute_set(&self, name: &str) -> Option<&AttributeSet> {
        self.attribute_sets
            .iter()
            .find(|s| s.name().eq_ignore_ascii_case(name))
    }

    pub fn keywords(&self) -> &[Keyword] {
        &self.keywords
    }

    /// The set owning `word`, required to be exactly one.
    fn resolve_attribute(&self, word: &str) -> Result<&AttributeSet> {
        let mut owner = None;
        for set in &self.attribute_sets {
            if set.contains(word) {
                if owner.is_some() {
                    return Err(Error::AmbiguousAttribute {
                        word: word.to_string(),
                    });
                }
                owner = Some(set);
            }
        }
        owner.ok_or_else(|| Error::UnknownAttribute(word.to_string()))
    }

    /// Renders `template` for `keyword`, substituting `attribute` into the
    /// `{a}` slot (or collapsing it when absent). The attribute word must
    /// belong to exactly one registered set; it is recorded as metadata.
    pub fn render_prompt(
        &self,
        template: &PromptTemplate,
        keyword: &Keyword,
        attribute: Option<&str>,
    ) -> Result<PromptInstance> {
        if let Some(word) = attribute {
            self.resolve_attribute(word)?;
        }
        Ok(PromptInstance {
            text: template.render(keyword.text(), attribute),
            keyword: keyword.clone(),
            attribute: attribute.map(str::to_string),
        })
    }

    /// The neutral prompt followed by one attributed prompt per member of
    /// `attrs`, in member order. Always |attrs| + 1 instances.
    pub fn prompt_family(
        &self,
        template: &PromptTemplate,
        keyword: &Keyword,
        attrs: &AttributeSet,
    ) -> Result<Vec<PromptInstance>> {
        let mut family = Vec::with_capacity(attrs.len() + 1);
        family.push(self.render_prompt(template, keyword, None)?);
        for member in attrs.members() {
            family.push(self.render_prompt(template, keyword, Some(member))?);
        }
        Ok(family)
    }
}

/// True iff some member of `attrs` appears in `text` as a whole token,
/// case-insensitively, under whitespace/punctuation tokenization.
pub fn contains_sensitive(text: &str, attrs: &AttributeSet) -> bool {
    first_sensitive_token(text, attrs).is_some()
}

fn first_sensitive_token<'a>(text: &str, attrs: &'a AttributeSet) -> Option<&'a str> {
    for token in text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
    {
        let lower = token.to_lowercase();
        if let Some(member) = attrs
            .members()
            .iter()
            .find(|m| m.to_lowercase() == lower)
        {
            return Some(member);
        }
    }
    None
}

/// Bundled keyword and attribute datasets.
pub mod bundled {
    use super::*;

    pub const OCCUPATIONS: &str = include_str!("../data/occupations.txt");
    pub const EMOTIONS: &str = include_str!("../data/emotions.txt");
    pub const GENDER: &str = include_str!("../data/gender.txt");
    pub const RACE: &str = include_str!("../data/race.txt");

    pub fn gender() -> AttributeSet {
        AttributeSet::parse(GENDER, "bundled:gender").expect("bundled gender set is valid")
    }

    pub fn race() -> AttributeSet {
        AttributeSet::parse(RACE, "bundled:race").expect("bundled race set is valid")
    }

    /// Lexicon with the occupation keywords and the given attribute sets.
    pub fn occupations(attrs: Vec<AttributeSet>) -> Result<Lexicon> {
        build(OCCUPATIONS, "bundled:occupations", KeywordCategory::Occupation, attrs)
    }

    /// Lexicon with the emotion keywords and the given attribute sets.
    pub fn emotions(attrs: Vec<AttributeSet>) -> Result<Lexicon> {
        build(EMOTIONS, "bundled:emotions", KeywordCategory::Emotion, attrs)
    }

    fn build(
        text: &str,
        path: &str,
        category: KeywordCategory,
        attrs: Vec<AttributeSet>,
    ) -> Result<Lexicon> {
        let mut lexicon = Lexicon::new();
        for set in attrs {
            lexicon.register_attribute_set(set)?;
        }
        lexicon.parse_keywords(text, path, category)?;
        Ok(lexicon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gender() -> AttributeSet {
        AttributeSet::new("gender", vec!["male".into(), "female".into()]).unwrap()
    }

    fn race() -> AttributeSet {
        AttributeSet::new(
            "race",
            vec!["black".into(), "asian".into(), "white".into(), "indian".into()],
        )
        .unwrap()
    }

    fn lexicon_with(sets: Vec<AttributeSet>) -> Lexicon {
        let mut lx = Lexicon::new();
        for s in sets {
            lx.register_attribute_set(s).unwrap();
        }
        lx
    }

    #[test]
    fn attribute_set_rejects_degenerate_inputs() {
        assert!(AttributeSet::new("gender", vec!["male".into()]).is_err());
        assert!(AttributeSet::new("gender", vec!["male".into(), "MALE".into()]).is_err());
        assert!(AttributeSet::new("gender", vec!["male".into(), " ".into()]).is_err());
        assert!(AttributeSet::new("gender", vec!["male".into(), "two words".into()]).is_err());
    }

    #[test]
    fn render_substitutes_and_records_attribute() {
        let lx = lexicon_with(vec![gender()]);
        let template = PromptTemplate::new("an image of an {a} {c}").unwrap();
        let doctor = Keyword::new("doctor", KeywordCategory::Occupation).unwrap();

        let p = lx.render_prompt(&template, &doctor, Some("male")).unwrap();
        assert_eq!(p.text, "an image of an male doctor");
        assert_eq!(p.attribute.as_deref(), Some("male"));
    }

    #[test]
    fn render_neutral_collapses_empty_slot() {
        let lx = lexicon_with(vec![gender()]);
        let template = PromptTemplate::new("an image of an {a} {c}").unwrap();
        let doctor = Keyword::new("doctor", KeywordCategory::Occupation).unwrap();

        let p = lx.render_prompt(&template, &doctor, None).unwrap();
        assert_eq!(p.text, "an image of an doctor");
        assert!(p.is_neutral());
    }

    #[test]
    fn render_emotion_template() {
        let lx = lexicon_with(vec![gender(), race()]);
        let template = PromptTemplate::emotion();
        let pleasant = Keyword::new("pleasant", KeywordCategory::Emotion).unwrap();

        let p = lx.render_prompt(&template, &pleasant, Some("female")).unwrap();
        assert_eq!(p.text, "an image of an female pleasant person");
    }

    #[test]
    fn render_rejects_unknown_attribute() {
        let lx = lexicon_with(vec![gender()]);
        let template = PromptTemplate::occupation();
        let doctor = Keyword::new("doctor", KeywordCategory::Occupation).unwrap();

        let err = lx.render_prompt(&template, &doctor, Some("purple")).unwrap_err();
        assert!(matches!(err, Error::UnknownAttribute(w) if w == "purple"));
    }

    #[test]
    fn render_rejects_ambiguous_attribute() {
        let other = AttributeSet::new("shade", vec!["black".into(), "white".into()]).unwrap();
        let lx = lexicon_with(vec![race(), other]);
        let template = PromptTemplate::occupation();
        let doctor = Keyword::new("doctor", KeywordCategory::Occupation).unwrap();

        let err = lx.render_prompt(&template, &doctor, Some("black")).unwrap_err();
        assert!(matches!(err, Error::AmbiguousAttribute { .. }));
    }

    #[test]
    fn prompt_family_orders_neutral_first() {
        let lx = lexicon_with(vec![gender()]);
        let template = PromptTemplate::occupation();
        let doctor = Keyword::new("doctor", KeywordCategory::Occupation).unwrap();

        let family = lx.prompt_family(&template, &doctor, &gender()).unwrap();
        assert_eq!(family.len(), 3);
        assert!(family[0].is_neutral());
        assert_eq!(family[1].attribute.as_deref(), Some("male"));
        assert_eq!(family[2].attribute.as_deref(), Some("female"));
    }

    #[test]
    fn prompt_family_length_tracks_attribute_count() {
        let lx = lexicon_with(vec![race()]);
        let template = PromptTemplate::emotion();
        let pleasant = Keyword::new("pleasant", KeywordCategory::Emotion).unwrap();

        let family = lx.prompt_family(&template, &pleasant, &race()).unwrap();
        assert_eq!(family.len(), 5);
    }

    #[test]
    fn template_validation() {
        assert!(PromptTemplate::new("no keyword slot").is_err());
        assert!(PromptTemplate::new("{c} and {c}").is_err());
        assert!(PromptTemplate::new("{a} {a} {c}").is_err());
        assert!(PromptTemplate::new("{c}").is_ok());
        assert!(PromptTemplate::new("an {a} {c}").is_ok());
    }

    #[test]
    fn contains_sensitive_matches_whole_tokens_only() {
        let g = gender();
        assert!(contains_sensitive("an image of a male doctor", &g));
        assert!(!contains_sensitive("an image of a doctor", &g));
        assert!(!contains_sensitive("a maleficent portrait", &g));
        assert!(contains_sensitive("MALE nurse", &g));
        assert!(contains_sensitive("a female-coded icon", &g));
    }

    #[test]
    fn keyword_with_attribute_token_is_rejected() {
        let mut lx = lexicon_with(vec![gender()]);
        let err = lx
            .add_keyword(Keyword::new("male model", KeywordCategory::Custom).unwrap())
            .unwrap_err();
        assert!(matches!(err, Error::InvalidKeyword { .. }));
    }

    #[test]
    fn keyword_file_parsing_skips_comments_and_blanks() {
        let mut lx = lexicon_with(vec![gender()]);
        lx.parse_keywords("# header\n\ndoctor\n  nurse  \n", "test", KeywordCategory::Custom)
            .unwrap();
        let texts: Vec<&str> = lx.keywords().iter().map(|k| k.text()).collect();
        assert_eq!(texts, vec!["doctor", "nurse"]);
    }

    #[test]
    fn duplicate_keyword_rejected_with_line_number() {
        let mut lx = Lexicon::new();
        let err = lx
            .parse_keywords("doctor\nDoctor\n", "dup.txt", KeywordCategory::Custom)
            .unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn attribute_file_parsing() {
        let set = AttributeSet::parse("# comment\ngender\nmale\nfemale\n", "attrs.txt").unwrap();
        assert_eq!(set.name(), "gender");
        assert_eq!(set.members(), ["male", "female"]);
    }

    #[test]
    fn bundled_datasets_load_cleanly() {
        let lx = bundled::occupations(vec![bundled::gender(), bundled::race()]).unwrap();
        assert_eq!(lx.keywords().len(), 150);
        let lx = bundled::emotions(vec![bundled::gender(), bundled::race()]).unwrap();
        assert_eq!(lx.keywords().len(), 20);
    }

    #[test]
    fn bundled_keywords_carry_no_attribute_tokens() {
        let sets = [bundled::gender(), bundled::race()];
        let lx = bundled::occupations(sets.to_vec()).unwrap();
        for kw in lx.keywords() {
            for set in &sets {
                assert!(
                    !contains_sensitive(kw.text(), set),
                    "keyword {:?} contains a member of {:?}",
                    kw.text(),
                    set.name()
                );
            }
        }
    }

    proptest! {
        #[test]
        fn render_is_deterministic(kw in "[a-z]{1,12}", attr_present in any::<bool>()) {
            let lx = lexicon_with(vec![gender()]);
            let template = PromptTemplate::occupation();
            prop_assume!(kw != "male" && kw != "female");
            let keyword = Keyword::new(kw, KeywordCategory::Custom).unwrap();
            let attr = if attr_present { Some("male") } else { None };
            let a = lx.render_prompt(&template, &keyword, attr).unwrap();
            let b = lx.render_prompt(&template, &keyword, attr).unwrap();
            prop_assert_eq!(a.text.as_bytes(), b.text.as_bytes());
        }

        #[test]
        fn rendered_text_has_normalized_whitespace(kw in "[a-z]{1,12}") {
            let lx = lexicon_with(vec![gender()]);
            let template = PromptTemplate::occupation();
            prop_assume!(kw != "male" && kw != "female");
            let keyword = Keyword::new(kw, KeywordCategory::Custom).unwrap();
            let p = lx.render_prompt(&template, &keyword, None).unwrap();
            prop_assert!(!p.text.contains("  "));
            prop_assert_eq!(p.text.trim(), p.text.as_str());
        }

        #[test]
        fn family_length_is_members_plus_one(n in 2usize..6) {
            let members: Vec<String> = (0..n).map(|i| format!("attr{i}")).collect();
            let set = AttributeSet::new("set", members).unwrap();
            let lx = lexicon_with(vec![set.clone()]);
            let keyword = Keyword::new("doctor", KeywordCategory::Custom).unwrap();
            let family = lx.prompt_family(&PromptTemplate::occupation(), &keyword, &set).unwrap();
            prop_assert_eq!(family.len(), set.len() + 1);
            prop_assert!(family[0].is_neutral());
        }
    }
}
