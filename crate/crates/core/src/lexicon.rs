//! Word-category lexicons, response-class rules and valence scoring.
//!
//! Lexicon files hold a category name on the first non-comment line and one
//! pattern per following line. A pattern ending in `*` matches any token
//! with that prefix (`felt*` matches `felt` and `felts`). Lines starting with
//! `#` are comments.
//!
//! The bundled lexicons are open re-creations of the needed categories, not
//! the proprietary originals, and the response-class rules are approximate
//! reconstructions built from example phrases. Both can be overridden by
//! pointing [`LexiconSet::from_dir`] at a directory with replacement files.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Style-marker categories used for coordination.
pub const STYLE_MARKERS: [&str; 8] = [
    "article", "auxverb", "conj", "adverb", "ipron", "ppron", "preps", "quant",
];
pub const TIME_CATEGORIES: [&str; 3] = ["past", "present", "future"];
pub const SELF_CATEGORIES: [&str; 2] = ["i", "third"];
pub const SENTIMENT_CATEGORIES: [&str; 2] = ["posemo", "negemo"];
pub const NEGATION_CATEGORY: &str = "negate";

const BUNDLED_LEXICONS: &[(&str, &str)] = &[
    ("past", include_str!("../lexicons/past.txt")),
    ("present", include_str!("../lexicons/present.txt")),
    ("future", include_str!("../lexicons/future.txt")),
    ("i", include_str!("../lexicons/i.txt")),
    ("third", include_str!("../lexicons/third.txt")),
    ("posemo", include_str!("../lexicons/posemo.txt")),
    ("negemo", include_str!("../lexicons/negemo.txt")),
    ("negate", include_str!("../lexicons/negate.txt")),
    ("article", include_str!("../lexicons/article.txt")),
    ("auxverb", include_str!("../lexicons/auxverb.txt")),
    ("conj", include_str!("../lexicons/conj.txt")),
    ("adverb", include_str!("../lexicons/adverb.txt")),
    ("ipron", include_str!("../lexicons/ipron.txt")),
    ("ppron", include_str!("../lexicons/ppron.txt")),
    ("preps", include_str!("../lexicons/preps.txt")),
    ("quant", include_str!("../lexicons/quant.txt")),
];
const BUNDLED_RESPONSE_CLASSES: &str = include_str!("../lexicons/response_classes.json");
const BUNDLED_VALENCE: &str = include_str!("../lexicons/valence.tsv");

/// A named word category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    name: String,
    exact: HashSet<String>,
    prefixes: Vec<String>,
    patterns: Vec<String>,
}

impl Lexicon {
    /// Builds a lexicon from patterns, deduplicating them.
    pub fn new<I, S>(name: impl Into<String>, patterns: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let name = name.into();
        let mut seen = BTreeSet::new();
        let mut lex = Lexicon {
            name,
            exact: HashSet::new(),
            prefixes: Vec::new(),
            patterns: Vec::new(),
        };
        for p in patterns {
            let p = p.as_ref().to_lowercase();
            validate_pattern(&p).map_err(Error::invalid)?;
            if !seen.insert(p.clone()) {
                continue;
            }
            match p.strip_suffix('*') {
                Some(prefix) => lex.prefixes.push(prefix.to_string()),
                None => {
                    lex.exact.insert(p.clone());
                }
            }
            lex.patterns.push(p);
        }
        if lex.patterns.is_empty() {
            return Err(Error::invalid(format!(
                "lexicon `{}` has no patterns",
                lex.name
            )));
        }
        Ok(lex)
    }

    /// Parses the lexicon file format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut name: Option<(usize, String)> = None;
        let mut patterns = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if name.is_none() {
                if line.split_whitespace().count() != 1 {
                    return Err(Error::Parse {
                        line: i + 1,
                        message: format!("category name `{line}` contains whitespace"),
                    });
                }
                name = Some((i + 1, line.to_string()));
                continue;
            }
            let p = line.to_lowercase();
            validate_pattern(&p).map_err(|message| Error::Parse {
                line: i + 1,
                message,
            })?;
            patterns.push(p);
        }
        let Some((line, name)) = name else {
            return Err(Error::invalid("lexicon file is empty"));
        };
        if patterns.is_empty() {
            return Err(Error::Parse {
                line,
                message: format!("category `{name}` has no patterns"),
            });
        }
        Lexicon::new(name, patterns)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Patterns in first-seen order.
    pub fn patterns(&self) -> &[String] {
        &self.patterns
    }

    pub fn matches(&self, token: &str) -> bool {
        self.exact.contains(token) || self.prefixes.iter().any(|p| token.starts_with(p.as_str()))
    }

    pub fn count<S: AsRef<str>>(&self, tokens: &[S]) -> usize {
        tokens.iter().filter(|t| self.matches(t.as_ref())).count()
    }

    /// True when at least one token belongs to the category.
    pub fn exhibits<S: AsRef<str>>(&self, tokens: &[S]) -> bool {
        tokens.iter().any(|t| self.matches(t.as_ref()))
    }

    /// Returns a copy with every pattern passed through `f`.
    pub fn map_patterns(&self, f: impl Fn(&str) -> String) -> Result<Self> {
        Lexicon::new(self.name.clone(), self.patterns.iter().map(|p| f(p)))
    }
}

fn validate_pattern(p: &str) -> std::result::Result<(), String> {
    if p.chars().any(char::is_whitespace) {
        return Err(format!("pattern `{p}` contains whitespace"));
    }
    let stars = p.matches('*').count();
    if p == "*" || stars > 1 || (stars == 1 && !p.ends_with('*')) {
        return Err(format!("malformed pattern `{p}`"));
    }
    Ok(())
}

pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Lexicon::parse(&text)
}

/// Match fraction of a single category: `matches / |tokens|`, 0 for empty input.
pub fn category_rate<S: AsRef<str>>(tokens: &[S], lexicon: &Lexicon) -> f64 {
    if tokens.is_empty() {
        0.0
    } else {
        lexicon.count(tokens) as f64 / tokens.len() as f64
    }
}

/// Relative shares of a family of categories: `matches(c) / sum of matches`.
/// `None` when no category matches.
pub fn category_shares<S: AsRef<str>>(
    tokens: &[S],
    lexicons: &[&Lexicon],
) -> Option<BTreeMap<String, f64>> {
    let counts: Vec<usize> = lexicons.iter().map(|l| l.count(tokens)).collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return None;
    }
    Some(
        lexicons
            .iter()
            .zip(counts)
            .map(|(l, c)| (l.name().to_string(), c as f64 / total as f64))
            .collect(),
    )
}

/// Share of the first category among two, e.g. first-person among first- and
/// third-person pronouns, or positive among positive and negative emotion.
pub fn first_share<S: AsRef<str>>(tokens: &[S], first: &Lexicon, second: &Lexicon) -> Option<f64> {
    let a = first.count(tokens);
    let b = second.count(tokens);
    (a + b > 0).then(|| a as f64 / (a + b) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseClass {
    CheckQuestion,
    SuicideCheck,
    Thanks,
    Hedge,
    Surprise,
}

impl ResponseClass {
    pub const ALL: [ResponseClass; 5] = [
        ResponseClass::CheckQuestion,
        ResponseClass::SuicideCheck,
        ResponseClass::Thanks,
        ResponseClass::Hedge,
        ResponseClass::Surprise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ResponseClass::CheckQuestion => "check_question",
            ResponseClass::SuicideCheck => "suicide_check",
            ResponseClass::Thanks => "thanks",
            ResponseClass::Hedge => "hedge",
            ResponseClass::Surprise => "surprise",
        }
    }
}

impl fmt::Display for ResponseClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Case-insensitive regular-expression detectors for counselor response classes.
#[derive(Debug, Clone)]
pub struct ResponseClassRules {
    rules: BTreeMap<ResponseClass, Vec<Regex>>,
}

impl ResponseClassRules {
    /// Parses a JSON object mapping class name to a list of patterns.
    pub fn from_json_str(json: &str) -> Result<Self> {
        let raw: BTreeMap<ResponseClass, Vec<String>> = serde_json::from_str(json)?;
        let mut rules = BTreeMap::new();
        for (class, patterns) in raw {
            let compiled = patterns
                .iter()
                .map(|p| RegexBuilder::new(p).case_insensitive(true).build())
                .collect::<std::result::Result<Vec<_>, _>>()?;
            rules.insert(class, compiled);
        }
        Ok(ResponseClassRules { rules })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn bundled() -> Self {
        Self::from_json_str(BUNDLED_RESPONSE_CLASSES).expect("bundled response classes are valid")
    }

    pub fn matches(&self, class: ResponseClass, text: &str) -> bool {
        self.rules
            .get(&class)
            .is_some_and(|rs| rs.iter().any(|r| r.is_match(text)))
    }

    pub fn detect(&self, text: &str) -> BTreeSet<ResponseClass> {
        self.rules
            .keys()
            .copied()
            .filter(|&c| self.matches(c, text))
            .collect()
    }
}

/// Token valences in [-1, 1] with a negation list.
#[derive(Debug, Clone)]
pub struct ValenceLexicon {
    scores: HashMap<String, f64>,
    negations: Lexicon,
}

/// Number of following tokens whose valence a negation flips.
pub const NEGATION_WINDOW: usize = 3;

impl ValenceLexicon {
    pub fn new(scores: HashMap<String, f64>, negations: Lexicon) -> Result<Self> {
        for (t, &s) in &scores {
            if !(-1.0..=1.0).contains(&s) {
                return Err(Error::invalid(format!("valence of `{t}` is {s}, outside [-1, 1]")));
            }
        }
        Ok(ValenceLexicon { scores, negations })
    }

    /// Parses `token<TAB>score` lines; `#` starts a comment line.
    pub fn parse_tsv(text: &str, negations: Lexicon) -> Result<Self> {
        let mut scores = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(tok), Some(score), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "expected `token<TAB>score`".into(),
                });
            };
            let score: f64 = score.trim().parse().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("bad score `{score}`"),
            })?;
            scores.insert(tok.trim().to_lowercase(), score);
        }
        Self::new(scores, negations)
    }

    pub fn valence(&self, token: &str) -> f64 {
        self.scores.get(token).copied().unwrap_or(0.0)
    }

    pub fn negations(&self) -> &Lexicon {
        &self.negations
    }

    /// Returns a lexicon with every valence negated.
    pub fn negated(&self) -> Self {
        ValenceLexicon {
            scores: self.scores.iter().map(|(k, v)| (k.clone(), -v)).collect(),
            negations: self.negations.clone(),
        }
    }
}

/// Mean token valence with negation handling.
///
/// Each negation token flips the sign of the valence of the next
/// [`NEGATION_WINDOW`] tokens; overlapping negations compose. Negation tokens
/// act as operators and are not counted in the mean; tokens missing from the
/// lexicon count as 0. Input without any non-negation token scores 0.
pub fn valence_score<S: AsRef<str>>(tokens: &[S], vl: &ValenceLexicon) -> f64 {
    if tokens.is_empty() {
        return 0.0;
    }
    let mut negated_until: Vec<usize> = Vec::new();
    let mut total = 0.0;
    let mut counted = 0usize;
    for (i, t) in tokens.iter().enumerate() {
        let t = t.as_ref();
        if vl.negations.matches(t) {
            negated_until.push(i + NEGATION_WINDOW);
            continue;
        }
        let flips = negated_until.iter().filter(|&&end| i <= end).count();
        let v = vl.valence(t);
        total += if flips % 2 == 1 { -v } else { v };
        counted += 1;
    }
    if counted == 0 {
        0.0
    } else {
        (total / counted as f64).clamp(-1.0, 1.0)
    }
}

/// All lexical resources used by the analyses.
#[derive(Debug, Clone)]
pub struct LexiconSet {
    categories: BTreeMap<String, Lexicon>,
    pub response_classes: ResponseClassRules,
    pub valence: ValenceLexicon,
}

impl LexiconSet {
    pub fn bundled() -> Self {
        let categories: BTreeMap<String, Lexicon> = BUNDLED_LEXICONS
            .iter()
            .map(|(name, text)| {
                let lex = Lexicon::parse(text).expect("bundled lexicons are valid");
                debug_assert_eq!(lex.name(), *name);
                (name.to_string(), lex)
            })
            .collect();
        let valence = ValenceLexicon::parse_tsv(BUNDLED_VALENCE, categories[NEGATION_CATEGORY].clone())
            .expect("bundled valence lexicon is valid");
        LexiconSet {
            categories,
            response_classes: ResponseClassRules::bundled(),
            valence,
        }
    }

    /// Loads overrides from `dir`: every `*.txt` lexicon file replaces or adds
    /// the category it names, `response_classes.json` replaces the rules and
    /// `valence.tsv` replaces the valence scores. Missing files fall back to
    /// the bundled resources.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut set = Self::bundled();
        let mut entries: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::io(dir, e))?;
        entries.sort_by_key(|e| e.path());
        for entry in entries {
            let path = entry.path();
            if path.extension().is_some_and(|e| e == "txt") {
                let lex = load_lexicon(&path)?;
                set.categories.insert(lex.name().to_string(), lex);
            }
        }
        let rules = dir.join("response_classes.json");
        if rules.exists() {
            set.response_classes = ResponseClassRules::load(&rules)?;
        }
        let negations = set.category(NEGATION_CATEGORY)?.clone();
        let valence = dir.join("valence.tsv");
        set.valence = if valence.exists() {
            let text = fs::read_to_string(&valence).map_err(|e| Error::io(&valence, e))?;
            ValenceLexicon::parse_tsv(&text, negations)?
        } else {
            ValenceLexicon::parse_tsv(BUNDLED_VALENCE, negations)?
        };
        Ok(set)
    }

    pub fn category(&self, name: &str) -> Result<&Lexicon> {
        self.categories
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown lexicon category `{name}`")))
    }

    pub fn categories(&self, names: &[&str]) -> Result<Vec<&Lexicon>> {
        names.iter().map(|n| self.category(n)).collect()
    }

    pub fn style_markers(&self) -> Vec<&Lexicon> {
        self.categories(&STYLE_MARKERS)
            .expect("style markers are bundled")
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.categories.keys().map(String::as_str)
    }
}
