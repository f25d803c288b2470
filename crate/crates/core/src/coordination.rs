//! Linguistic coordination between speakers ("Aggregated 2").
//!
//! `C^m(b, A) = P(reply exhibits m | initiator exhibits m) - P(reply exhibits m)`,
//! estimated over the exchanges in which member `b` replies to someone in `A`.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, Role};
use crate::error::{Error, Result};
use crate::lexicon::Lexicon;
use crate::stats::{mann_whitney_u, MannWhitney};

/// One initiator utterance followed immediately by a reply from the other role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exchange {
    pub conversation_id: String,
    /// Replying member: the counselor id for counselor replies, the
    /// conversation id for texter replies.
    pub member: String,
    pub initiator: Vec<String>,
    pub reply: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CoordinationConfig {
    /// Merge consecutive same-role messages into one turn before pairing.
    pub merge_turns: bool,
}

/// Member identity of whoever speaks `role` in `conv`.
pub fn member_id(conv: &Conversation, role: Role) -> &str {
    match role {
        Role::Counselor => &conv.counselor_id,
        Role::Texter => &conv.id,
    }
}

/// Adjacent `(initiator, other role)` message pairs of each conversation.
pub fn extract_exchanges<'a, I>(conversations: I, initiator: Role, cfg: CoordinationConfig) -> Vec<Exchange>
where
    I: IntoIterator<Item = &'a Conversation>,
{
    let mut out = Vec::new();
    for conv in conversations {
        let turns: Vec<(Role, Vec<String>)> = if cfg.merge_turns {
            let mut merged: Vec<(Role, Vec<String>)> = Vec::new();
            for m in &conv.messages {
                match merged.last_mut() {
                    Some((role, tokens)) if *role == m.role => tokens.extend(m.tokens.iter().cloned()),
                    _ => merged.push((m.role, m.tokens.clone())),
                }
            }
            merged
        } else {
            conv.messages.iter().map(|m| (m.role, m.tokens.clone())).collect()
        };
        let member = member_id(conv, initiator.other());
        for pair in turns.windows(2) {
            if pair[0].0 == initiator && pair[1].0 == initiator.other() {
                out.push(Exchange {
                    conversation_id: conv.id.clone(),
                    member: member.to_string(),
                    initiator: pair[0].1.clone(),
                    reply: pair[1].1.clone(),
                });
            }
        }
    }
    out
}

/// `C^m` over one member's exchanges; `None` when no initiator exhibits the marker.
pub fn marker_coordination<'a, I>(exchanges: I, marker: &Lexicon) -> Option<f64>
where
    I: IntoIterator<Item = &'a Exchange>,
{
    let (mut n, mut n_reply, mut n_init, mut n_both) = (0usize, 0usize, 0usize, 0usize);
    for ex in exchanges {
        let a = marker.exhibits(&ex.initiator);
        let b = marker.exhibits(&ex.reply);
        n += 1;
        n_reply += usize::from(b);
        n_init += usize::from(a);
        n_both += usize::from(a && b);
    }
    (n_init > 0).then(|| n_both as f64 / n_init as f64 - n_reply as f64 / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberCoordination {
    /// Defined per-marker values only.
    pub markers: BTreeMap<String, f64>,
    /// Macro-average over defined markers.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinationResult {
    pub initiator: Role,
    pub markers: Vec<String>,
    pub members: BTreeMap<String, MemberCoordination>,
    /// Mean of the defined member values.
    pub group: f64,
    pub defined_members: usize,
}

impl CoordinationResult {
    /// Defined member values in member-id order.
    pub fn member_values(&self) -> Vec<f64> {
        self.members.values().filter_map(|m| m.value).collect()
    }
}

/// Aggregated coordination of the replying members of `conversations` to the
/// `initiator` role, macro-averaged over defined markers per member and then
/// averaged over members.
pub fn aggregated_coordination<'a, I>(
    conversations: I,
    initiator: Role,
    markers: &[&Lexicon],
    cfg: CoordinationConfig,
) -> Result<CoordinationResult>
where
    I: IntoIterator<Item = &'a Conversation>,
{
    if markers.is_empty() {
        return Err(Error::invalid("coordination needs at least one marker"));
    }
    let exchanges = extract_exchanges(conversations, initiator, cfg);
    coordination_from_exchanges(&exchanges, initiator, markers)
}

pub fn coordination_from_exchanges(
    exchanges: &[Exchange],
    initiator: Role,
    markers: &[&Lexicon],
) -> Result<CoordinationResult> {
    let mut by_member: BTreeMap<&str, Vec<&Exchange>> = BTreeMap::new();
    for ex in exchanges {
        by_member.entry(ex.member.as_str()).or_default().push(ex);
    }
    let mut members = BTreeMap::new();
    for (member, exs) in by_member {
        let values: BTreeMap<String, f64> = markers
            .iter()
            .filter_map(|m| marker_coordination(exs.iter().copied(), m).map(|c| (m.name().to_string(), c)))
            .collect();
        let value = (!values.is_empty()).then(|| values.values().sum::<f64>() / values.len() as f64);
        members.insert(member.to_string(), MemberCoordination { markers: values, value });
    }
    let defined: Vec<f64> = members.values().filter_map(|m| m.value).collect();
    if defined.is_empty() {
        return Err(Error::insufficient(
            "no member has an exchange whose initiator exhibits any marker",
        ));
    }
    Ok(CoordinationResult {
        initiator,
        markers: markers.iter().map(|m| m.name().to_string()).collect(),
        members,
        group: defined.iter().sum::<f64>() / defined.len() as f64,
        defined_members: defined.len(),
    })
}

/// Texter coordination to counselors over content categories.
pub fn perspective_coordination<'a, I>(
    conversations: I,
    markers: &[&Lexicon],
    cfg: CoordinationConfig,
) -> Result<CoordinationResult>
where
    I: IntoIterator<Item = &'a Conversation>,
{
    aggregated_coordination(conversations, Role::Counselor, markers, cfg)
}

/// Mann-Whitney comparison of two groups' member values.
pub fn compare_groups(a: &CoordinationResult, b: &CoordinationResult) -> Result<MannWhitney> {
    mann_whitney_u(&a.member_values(), &b.member_values())
}

/// Writes `group,member,marker,c_m,member_value` rows followed by one summary
/// row per group (member `ALL`).
pub fn write_coordination_csv(results: &[(&str, &CoordinationResult)], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["group", "member", "marker", "c_m", "member_value"])?;
    for (group, result) in results {
        for (member, mc) in &result.members {
            let member_value = mc.value.map(fmt).unwrap_or_default();
            for (marker, c) in &mc.markers {
                out.write_record([group, member.as_str(), marker, &fmt(*c), &member_value])?;
            }
        }
    }
    for (group, result) in results {
        out.write_record([group, "ALL", "ALL", "", &fmt(result.group)])?;
    }
    out.flush().map_err(|e| Error::io("<coordination csv>", e))?;
    Ok(())
}

fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(member: &str, init: &[&str], reply: &[&str]) -> Exchange {
        Exchange {
            conversation_id: "c".into(),
            member: member.into(),
            initiator: init.iter().map(|s| s.to_string()).collect(),
            reply: reply.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn lex(name: &str, words: &[&str]) -> Lexicon {
        Lexicon::new(name, words.iter().map(|s| s.to_string())).unwrap()
    }

    #[test]
    fn adjacency_rule() {
        let tct = Conversation::new("1", "c", [(Role::Texter, "a"), (Role::Counselor, "b"), (Role::Texter, "c")]);
        assert_eq!(extract_exchanges([&tct], Role::Texter, Default::default()).len(), 1);
        let cct = Conversation::new("2", "c", [(Role::Counselor, "a"), (Role::Counselor, "b"), (Role::Texter, "c")]);
        assert!(extract_exchanges([&cct], Role::Texter, Default::default()).is_empty());
        let empty = Conversation::new("3", "c", Vec::<(Role, &str)>::new());
        assert!(extract_exchanges([&empty], Role::Texter, Default::default()).is_empty());
    }

    #[test]
    fn merged_turns() {
        let conv = Conversation::new(
            "1",
            "c9",
            [(Role::Texter, "a"), (Role::Texter, "b"), (Role::Counselor, "c"), (Role::Counselor, "d")],
        );
        let exs = extract_exchanges([&conv], Role::Texter, CoordinationConfig { merge_turns: true });
        assert_eq!(exs.len(), 1);
        assert_eq!((exs[0].member.as_str(), exs[0].conversation_id.as_str()), ("c9", "1"));
        assert_eq!((exs[0].initiator.clone(), exs[0].reply.clone()), (vec!["a".to_string(), "b".into()], vec!["c".to_string(), "d".into()]));
        let exs = extract_exchanges([&conv], Role::Texter, CoordinationConfig::default());
        assert_eq!(exs[0].initiator, vec!["b"]);
    }

    #[test]
    fn worked_example() {
        let m = lex("m", &["the"]);
        let exs = vec![
            ex("b", &["the"], &["the"]),
            ex("b", &["the"], &["the"]),
            ex("b", &["x"], &["y"]),
            ex("b", &["x"], &["y"]),
        ];
        assert_eq!(marker_coordination(&exs, &m), Some(0.5));
        assert_eq!(marker_coordination(&exs[2..], &m), None);
    }

    #[test]
    fn aggregation() {
        let a = lex("a", &["the"]);
        let b = lex("b", &["and"]);
        let exs = vec![
            // member x: marker a -> 0.5, marker b undefined
            ex("x", &["the"], &["the"]),
            ex("x", &["q"], &["q"]),
            // member y: marker a -> 0, marker b -> 0
            ex("y", &["the", "and"], &["the", "and"]),
        ];
        let r = coordination_from_exchanges(&exs, Role::Texter, &[&a, &b]).unwrap();
        assert_eq!(r.members["x"].value, Some(0.5));
        assert_eq!(r.members["y"].value, Some(0.0));
        assert_eq!(r.group, 0.25);
        assert!(coordination_from_exchanges(&exs[1..2], Role::Texter, &[&a]).is_err());
    }

    #[test]
    fn csv_layout() {
        let m = lex("m", &["the"]);
        let exs = vec![ex("b", &["the"], &["the"]), ex("b", &["x"], &["y"])];
        let r = coordination_from_exchanges(&exs, Role::Texter, &[&m]).unwrap();
        let mut buf = Vec::new();
        write_coordination_csv(&[("g", &r)], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "group,member,marker,c_m,member_value\ng,b,m,0.500000,0.500000\ng,ALL,ALL,,0.500000\n"
        );
    }
}
