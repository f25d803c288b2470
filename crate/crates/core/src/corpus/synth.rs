//! Synthetic corpora drawn from the ordered-stage generative model.
//!
//! A conversation is generated by walking a left-to-right stage chain (stay
//! in the current stage or advance by one) and emitting each message as a bag
//! of tokens from the unigram distribution of its (stage, role). Counselor
//! groups can shift outcome rates, stage dwell times, counselor message
//! length, and late-conversation vocabulary by outcome.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{tokenize, Conversation, Corpus, Message, Outcome, Role};
use crate::error::{Error, Result};

const SUM_TOLERANCE: f64 = 1e-9;

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthRange {
    pub min: usize,
    pub max: usize,
}

/// Emission distributions of one stage, keyed by token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEmissionSpec {
    pub counselor: BTreeMap<String, f64>,
    pub texter: BTreeMap<String, f64>,
}

impl StageEmissionSpec {
    pub fn for_role(&self, role: Role) -> &BTreeMap<String, f64> {
        match role {
            Role::Counselor => &self.counselor,
            Role::Texter => &self.texter,
        }
    }
}

/// Outcome-dependent vocabulary used late in a conversation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeVocabShift {
    /// Messages whose relative position `index / n` is at least this value are affected.
    pub from_fraction: f64,
    /// Probability that an affected token is drawn from the outcome distribution.
    pub mix: f64,
    #[serde(default = "default_shift_roles")]
    pub roles: Vec<Role>,
    pub positive: BTreeMap<String, f64>,
    pub negative: BTreeMap<String, f64>,
}

fn default_shift_roles() -> Vec<Role> {
    vec![Role::Counselor]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounselorGroupSpec {
    pub name: String,
    pub counselors: usize,
    pub success_rate: f64,
    /// Per-stage stay probabilities overriding the corpus-wide ones.
    #[serde(default)]
    pub stay: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub counselor_length_scale: f64,
    #[serde(default)]
    pub outcome_vocab: Option<OutcomeVocabShift>,
}

fn one() -> f64 {
    1.0
}

fn default_groups() -> Vec<CounselorGroupSpec> {
    vec![CounselorGroupSpec {
        name: "all".into(),
        counselors: 1,
        success_rate: 0.5,
        stay: None,
        counselor_length_scale: 1.0,
        outcome_vocab: None,
    }]
}

fn default_first_role() -> Role {
    Role::Texter
}

/// Generator configuration. Deserializes from the JSON generator spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub stages: usize,
    /// Probability of remaining in each stage; the last entry must be 1.
    pub stay: Vec<f64>,
    pub emissions: Vec<StageEmissionSpec>,
    pub message_tokens: LengthRange,
    pub conversation_messages: LengthRange,
    pub conversations: usize,
    #[serde(default = "default_first_role")]
    pub first_role: Role,
    /// Probability that the next message switches speaker.
    #[serde(default = "one")]
    pub switch_prob: f64,
    #[serde(default = "one")]
    pub labeled_fraction: f64,
    #[serde(default)]
    pub issues: BTreeMap<String, f64>,
    #[serde(default = "default_groups")]
    pub groups: Vec<CounselorGroupSpec>,
}

/// A generated corpus with its true stage paths (0-based), in conversation order.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub true_stages: Vec<Vec<usize>>,
    /// Generator group name of every counselor.
    pub counselor_groups: BTreeMap<String, String>,
}

impl SyntheticCorpus {
    pub fn annotations(&self) -> Vec<StageAnnotation> {
        self.corpus
            .conversations()
            .iter()
            .zip(&self.true_stages)
            .map(|(c, s)| StageAnnotation {
                id: c.id.clone(),
                stages: s.iter().map(|&x| x + 1).collect(),
            })
            .collect()
    }
}

/// Side-channel true-stage record; stages are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageAnnotation {
    pub id: String,
    pub stages: Vec<usize>,
}

pub fn write_stage_annotations(annotations: &[StageAnnotation], mut w: impl Write) -> Result<()> {
    for a in annotations {
        writeln!(w, "{}", serde_json::to_string(a)?).map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

pub fn read_stage_annotations(path: impl AsRef<Path>) -> Result<Vec<StageAnnotation>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Categorical sampler over a token distribution.
#[derive(Debug, Clone)]
struct Categorical {
    tokens: Vec<String>,
    cumulative: Vec<f64>,
}

impl Categorical {
    fn new(what: &str, dist: &BTreeMap<String, f64>) -> Result<Self> {
        if dist.is_empty() {
            return Err(Error::InvalidDistribution(format!("{what}: empty")));
        }
        let mut total = 0.0;
        let mut tokens = Vec::with_capacity(dist.len());
        let mut cumulative = Vec::with_capacity(dist.len());
        for (tok, &p) in dist {
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::InvalidDistribution(format!(
                    "{what}: probability of `{tok}` is {p}"
                )));
            }
            if tokenize(tok) != [tok.clone()] {
                return Err(Error::InvalidDistribution(format!(
                    "{what}: `{tok}` is not a single lowercase token"
                )));
            }
            total += p;
            tokens.push(tok.clone());
            cumulative.push(total);
        }
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "{what}: probabilities sum to {total}"
            )));
        }
        Ok(Categorical { tokens, cumulative })
    }

    fn sample<'a>(&'a self, rng: &mut impl Rng) -> &'a str {
        let total = *self.cumulative.last().expect("nonempty");
        let u = rng.gen::<f64>() * total;
        let i = self.cumulative.partition_point(|&c| c <= u);
        &self.tokens[i.min(self.tokens.len() - 1)]
    }
}

fn check_probability(what: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} = {p} is not in [0, 1]")))
    }
}

fn check_stay(what: &str, stay: &[f64], stages: usize) -> Result<()> {
    if stay.len() != stages {
        return Err(Error::invalid(format!(
            "{what}: {} stay probabilities for {stages} stages",
            stay.len()
        )));
    }
    for (s, &p) in stay.iter().enumerate() {
        check_probability(&format!("{what}[{s}]"), p)?;
    }
    if stay[stages - 1] != 1.0 {
        return Err(Error::invalid(format!(
            "{what}: the last stage must have stay probability 1"
        )));
    }
    Ok(())
}

struct CompiledGroup<'a> {
    spec: &'a CounselorGroupSpec,
    stay: &'a [f64],
    shift: Option<(Categorical, Categorical)>,
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::invalid("stages must be at least 1"));
        }
        check_stay("stay", &self.stay, self.stages)?;
        if self.emissions.len() != self.stages {
            return Err(Error::invalid(format!(
                "{} emission entries for {} stages",
                self.emissions.len(),
                self.stages
            )));
        }
        for (name, r) in [
            ("message_tokens", self.message_tokens),
            ("conversation_messages", self.conversation_messages),
        ] {
            if r.min == 0 || r.min > r.max {
                return Err(Error::invalid(format!(
                    "{name}: need 1 <= min <= max, got {}..={}",
                    r.min, r.max
                )));
            }
        }
        check_probability("switch_prob", self.switch_prob)?;
        check_probability("labeled_fraction", self.labeled_fraction)?;
        if self.groups.is_empty() || self.groups.iter().all(|g| g.counselors == 0) {
            return Err(Error::invalid("at least one counselor is required"));
        }
        for g in &self.groups {
            check_probability(&format!("group {} success_rate", g.name), g.success_rate)?;
            if let Some(stay) = &g.stay {
                check_stay(&format!("group {} stay", g.name), stay, self.stages)?;
            }
            if !(g.counselor_length_scale.is_finite() && g.counselor_length_scale > 0.0) {
                return Err(Error::invalid(format!(
                    "group {}: counselor_length_scale must be positive",
                    g.name
                )));
            }
            if let Some(shift) = &g.outcome_vocab {
                check_probability("outcome_vocab.mix", shift.mix)?;
                check_probability("outcome_vocab.from_fraction", shift.from_fraction)?;
            }
        }
        Ok(())
    }

    pub fn from_json_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }

    /// Draws a corpus. Output is a deterministic function of `(self, seed)`.
    pub fn generate(&self, seed: u64) -> Result<SyntheticCorpus> {
        self.validate()?;
        let emissions: Vec<[Categorical; 2]> = self
            .emissions
            .iter()
            .enumerate()
            .map(|(s, e)| {
                Ok([
                    Categorical::new(&format!("stage {} counselor", s + 1), &e.counselor)?,
                    Categorical::new(&format!("stage {} texter", s + 1), &e.texter)?,
                ])
            })
            .collect::<Result<_>>()?;
        let issues = if self.issues.is_empty() {
            None
        } else {
            Some(Categorical::new("issues", &self.issues)?)
        };
        let groups: Vec<CompiledGroup> = self
            .groups
            .iter()
            .map(|g| {
                let shift = match &g.outcome_vocab {
                    Some(s) => Some((
                        Categorical::new(&format!("group {} positive", g.name), &s.positive)?,
                        Categorical::new(&format!("group {} negative", g.name), &s.negative)?,
                    )),
                    None => None,
                };
                Ok(CompiledGroup {
                    spec: g,
                    stay: g.stay.as_deref().unwrap_or(&self.stay),
                    shift,
                })
            })
            .collect::<Result<_>>()?;

        let mut counselors: Vec<(String, usize)> = Vec::new();
        let mut counselor_groups = BTreeMap::new();
        for (gi, g) in self.groups.iter().enumerate() {
            for i in 0..g.counselors {
                let id = format!("{}-{:03}", g.name, i + 1);
                counselor_groups.insert(id.clone(), g.name.clone());
                counselors.push((id, gi));
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut conversations = Vec::with_capacity(self.conversations);
        let mut true_stages = Vec::with_capacity(self.conversations);
        let width = self.conversations.max(1).to_string().len().max(5);
        for ci in 0..self.conversations {
            let (counselor_id, gi) = &counselors[rng.gen_range(0..counselors.len())];
            let group = &groups[*gi];
            let outcome = if rng.gen::<f64>() < group.spec.success_rate {
                Outcome::Positive
            } else {
                Outcome::Negative
            };
            let labeled = rng.gen::<f64>() < self.labeled_fraction;
            let issue = issues.as_ref().map(|c| c.sample(&mut rng).to_string());
            let n = rng.gen_range(self.conversation_messages.min..=self.conversation_messages.max);

            let mut stage = 0usize;
            let mut role = self.first_role;
            let mut messages = Vec::with_capacity(n);
            let mut path = Vec::with_capacity(n);
            for i in 0..n {
                if i > 0 {
                    if rng.gen::<f64>() >= group.stay[stage] {
                        stage += 1;
                    }
                    if rng.gen::<f64>() < self.switch_prob {
                        role = role.other();
                    }
                }
                let mut len = rng.gen_range(self.message_tokens.min..=self.message_tokens.max);
                if role == Role::Counselor {
                    len = ((len as f64 * group.spec.counselor_length_scale).round() as usize).max(1);
                }
                let shifted = match (&group.spec.outcome_vocab, &group.shift) {
                    (Some(spec), Some(dists))
                        if spec.roles.contains(&role)
                            && i as f64 / n as f64 >= spec.from_fraction =>
                    {
                        Some((
                            spec.mix,
                            if outcome.is_positive() { &dists.0 } else { &dists.1 },
                        ))
                    }
                    _ => None,
                };
                let base = &emissions[stage][role.index()];
                let tokens: Vec<String> = (0..len)
                    .map(|_| match shifted {
                        Some((mix, dist)) if rng.gen::<f64>() < mix => dist.sample(&mut rng),
                        _ => base.sample(&mut rng),
                    })
                    .map(str::to_string)
                    .collect();
                messages.push(Message {
                    index: i,
                    role,
                    text: tokens.join(" "),
                    tokens,
                });
                path.push(stage);
            }
            conversations.push(Conversation {
                id: format!("conv-{:0width$}", ci + 1),
                counselor_id: counselor_id.clone(),
                messages,
                outcome: labeled.then_some(outcome),
                issue,
            });
            true_stages.push(path);
        }
        Ok(SyntheticCorpus {
            corpus: Corpus::new(conversations)?,
            true_stages,
            counselor_groups,
        })
    }
}
