use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};

use super::oracle::Oracle;
use crate::error::{Error, Result};
use crate::model::{Assignment, CharacterId, Provenance, SegmentId, SegmentRecord};

pub const UNKNOWN_TOKEN: &str = "[UNKNOWN]";

pub const SYSTEM_PROMPT: &str = "You are a AI assistant to analyze the transcript of TV shows. Your job is to figure out who are [UNKNOWN]s in a dialogue in TV shows. Tell the truth and answer as precisely as possible.";
pub const SUMMARY_REQUEST: &str = "Write a summary for the above conversation.";
pub const IDENTIFICATION_REQUEST: &str = "Based on the summary, your job is to identify the name of the speaker of `[UNKNOWN]' when the line starts and ends with `**'. You must use the context and the flow of the dialogue, using the speakers' names and what they speak. The list of speakers with their corresponding tokens are provided below. Choose [UNKNOWN] if his or her name is not in the dialogue, or when you are not sure.";
pub const ANSWER_INSTRUCTION: &str = "Only output one number after ANSWER:";
pub const ANSWER_PREFIX: &str = "ANSWER:";

/// Tolerance on the probability mass of a verdict distribution.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueLine {
    /// `None` renders as `[UNKNOWN]`.
    pub speaker: Option<CharacterId>,
    pub text: String,
    pub is_target: bool,
}

/// The dialogue window around one unknown segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmQuery {
    pub target_segment_id: SegmentId,
    pub dialogue: Vec<DialogueLine>,
    /// Named speakers in order of first appearance; index `i` is token `i + 1`
    /// and token `speakers.len() + 1` is `[UNKNOWN]`.
    pub speakers: Vec<CharacterId>,
}

impl LlmQuery {
    /// Builds the window of `n_llm` sentences on each side of `target`.
    /// `labels` is indexed by ordinal; the target line is always `[UNKNOWN]`.
    pub fn build(target: usize, segments: &[SegmentRecord], labels: &[Option<CharacterId>], n_llm: usize) -> Self {
        let lo = target.saturating_sub(n_llm);
        let hi = (target + n_llm).min(segments.len() - 1);
        let mut speakers: Vec<CharacterId> = Vec::new();
        let dialogue = (lo..=hi)
            .map(|j| {
                let is_target = j == target;
                let speaker = if is_target { None } else { labels[j].clone() };
                if let Some(s) = &speaker {
                    if !speakers.contains(s) {
                        speakers.push(s.clone());
                    }
                }
                DialogueLine { speaker, text: segments[j].text.clone(), is_target }
            })
            .collect();
        Self { target_segment_id: segments[target].id.clone(), dialogue, speakers }
    }

    /// Number of entries in the index list, `[UNKNOWN]` included.
    pub fn index_count(&self) -> usize {
        self.speakers.len() + 1
    }

    pub fn unknown_index(&self) -> usize {
        self.index_count()
    }

    pub fn check_invariants(&self, n_llm: usize) -> Result<()> {
        let ctx = || format!("query for {}", self.target_segment_id);
        if self.dialogue.len() > 2 * n_llm + 1 {
            return Err(Error::validation(ctx(), "dialogue longer than 2 n_llm + 1"));
        }
        if self.dialogue.iter().filter(|l| l.is_target).count() != 1 {
            return Err(Error::validation(ctx(), "dialogue must mark exactly one target"));
        }
        let mut named: Vec<&CharacterId> = Vec::new();
        for s in self.dialogue.iter().filter_map(|l| l.speaker.as_ref()) {
            if !named.contains(&s) {
                named.push(s);
            }
        }
        if named.len() != self.speakers.len() || named.iter().zip(&self.speakers).any(|(a, b)| *a != b) {
            return Err(Error::validation(ctx(), "speaker list does not match the dialogue"));
        }
        Ok(())
    }

    pub fn render_dialogue(&self) -> String {
        let mut out = String::new();
        for line in &self.dialogue {
            let who = line.speaker.as_ref().map_or(UNKNOWN_TOKEN, |s| s.as_str());
            if line.is_target {
                let _ = writeln!(out, "**{who} : {}**", line.text);
            } else {
                let _ = writeln!(out, "{who} : {}", line.text);
            }
        }
        out
    }

    pub fn render_speaker_list(&self) -> String {
        self.speakers
            .iter()
            .map(CharacterId::as_str)
            .chain(std::iter::once(UNKNOWN_TOKEN))
            .enumerate()
            .map(|(i, name)| format!("{}: {name}", i + 1))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub content: String,
}

impl ChatTurn {
    fn new(role: Role, content: impl Into<String>) -> Self {
        Self { role, content: content.into() }
    }
}

/// The two-phase prompt: a summary request, then an identification request
/// that sees the model's own summary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmPrompt {
    pub dialogue: String,
    pub speaker_list: String,
}

impl LlmPrompt {
    /// Turns that ask for the summary.
    pub fn summary_turns(&self) -> Vec<ChatTurn> {
        vec![
            ChatTurn::new(Role::System, SYSTEM_PROMPT),
            ChatTurn::new(Role::User, format!("{}\n{SUMMARY_REQUEST}", self.dialogue)),
        ]
    }

    /// Full conversation after the summary, ending with the `ANSWER:` prefill.
    pub fn identification_turns(&self, summary: &str) -> Vec<ChatTurn> {
        let mut turns = self.summary_turns();
        turns.push(ChatTurn::new(Role::Assistant, summary));
        turns.push(ChatTurn::new(
            Role::User,
            format!("{IDENTIFICATION_REQUEST}\n{}\n{ANSWER_INSTRUCTION}", self.speaker_list),
        ));
        turns.push(ChatTurn::new(Role::Assistant, ANSWER_PREFIX));
        turns
    }
}

pub fn build_llm_prompt(query: &LlmQuery) -> LlmPrompt {
    LlmPrompt { dialogue: query.render_dialogue(), speaker_list: query.render_speaker_list() }
}

/// What the oracle answered. Either a distribution over 1-based indices or a
/// parsed index from a plain-text completion.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LlmVerdict {
    pub distribution: Option<BTreeMap<usize, f64>>,
    pub parsed_index: Option<usize>,
    pub raw_response: String,
}

impl LlmVerdict {
    pub fn from_distribution(distribution: BTreeMap<usize, f64>, raw_response: impl Into<String>) -> Self {
        Self { distribution: Some(distribution), parsed_index: None, raw_response: raw_response.into() }
    }

    pub fn from_text(raw_response: impl Into<String>) -> Self {
        let raw_response = raw_response.into();
        Self { distribution: None, parsed_index: parse_answer(&raw_response), raw_response }
    }

    /// Winning index, or `None` if the verdict is malformed. Ties go to the
    /// smaller index.
    pub fn chosen_index(&self) -> Option<(usize, f64)> {
        match &self.distribution {
            Some(d) => {
                let mass: f64 = d.values().sum();
                if d.is_empty()
                    || d.values().any(|p| !p.is_finite() || *p < 0.0)
                    || (mass - 1.0).abs() > DISTRIBUTION_TOLERANCE
                {
                    return None;
                }
                let mut best: Option<(usize, f64)> = None;
                for (&i, &p) in d {
                    if best.is_none_or(|(_, bp)| p > bp) {
                        best = Some((i, p));
                    }
                }
                best
            }
            None => self.parsed_index.map(|i| (i, 1.0)),
        }
    }
}

/// Reads the integer after an optional `ANSWER:` prefix.
pub fn parse_answer(text: &str) -> Option<usize> {
    let t = text.trim();
    let t = t.strip_prefix(ANSWER_PREFIX).unwrap_or(t).trim_start();
    let digits: String = t.chars().take_while(char::is_ascii_digit).collect();
    let rest = &t[digits.len()..];
    if digits.is_empty() || rest.starts_with(|c: char| c.is_alphanumeric()) {
        return None;
    }
    digits.parse().ok()
}

/// Maps a verdict onto the query's speaker list.
pub fn verdict_to_assignment(query: &LlmQuery, verdict: &LlmVerdict) -> Assignment {
    let id = query.target_segment_id.clone();
    match verdict.chosen_index() {
        Some((i, p)) if (1..=query.speakers.len()).contains(&i) => {
            Assignment::named(id, query.speakers[i - 1].clone(), Provenance::Llm, p)
        }
        Some((i, p)) if i == query.unknown_index() => Assignment::unresolved(id, p),
        _ => {
            warn!("unusable oracle verdict for {id}: {:?}", verdict.raw_response);
            Assignment::unresolved(id, 0.0)
        }
    }
}

/// Asks the oracle about one query. Never fails: transport errors leave the
/// segment UNRESOLVED with a warning.
pub fn resolve_unknown_with_llm(query: &LlmQuery, oracle: &dyn Oracle) -> Assignment {
    let prompt = build_llm_prompt(query);
    match oracle.complete(query, &prompt) {
        Ok(verdict) => verdict_to_assignment(query, &verdict),
        Err(e) => {
            warn!("oracle failed for {}: {e}", query.target_segment_id);
            Assignment::unresolved(query.target_segment_id.clone(), 0.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assign::oracle::ScriptedOracle;
    use crate::model::TimeInterval;

    fn scrubs() -> (Vec<SegmentRecord>, Vec<Option<CharacterId>>) {
        let lines = [
            (Some("Dr.Cox"), "You can use it."),
            (Some("Dr.Cox"), "God, I hate Halloween."),
            (Some("Carla"), "Somebody needs to adjust their attitude if they want some candy."),
            (Some("Dr.Cox"), "You mean, the popcorn balls and the deformed lollipops."),
            (Some("Dr.Cox"), "I mean, honestly, where do you get this crap anyway?"),
            (None, "I made it."),
            (Some("NurseRoberts"), "If you want name brand candy, my fish is packed with peanuts."),
            (Some("Dr.Cox"), "Of course it is."),
            (Some("Carla"), "Oh, what's the matter?"),
            (Some("Carla"), "Did Raggedy Ann scare you?"),
            (Some("Dr.Cox"), "What are you, a rat?"),
        ];
        let segs = lines
            .iter()
            .enumerate()
            .map(|(i, (_, text))| SegmentRecord {
                id: format!("s{i:02}").into(),
                episode: "scrubs".into(),
                interval: TimeInterval::new(i as f64, i as f64 + 0.9).unwrap(),
                text: text.to_string(),
                words: vec![],
                ordinal: i,
            })
            .collect();
        let labels = lines.iter().map(|(s, _)| s.map(CharacterId::from)).collect();
        (segs, labels)
    }

    #[test]
    fn scrubs_prompt_rendering() {
        let (segs, labels) = scrubs();
        let q = LlmQuery::build(5, &segs, &labels, 5);
        q.check_invariants(5).unwrap();
        let p = build_llm_prompt(&q);
        assert!(p.dialogue.contains("\n**[UNKNOWN] : I made it.**\n"));
        assert!(p.dialogue.starts_with("Dr.Cox : You can use it.\n"));
        assert_eq!(p.speaker_list, "1: Dr.Cox, 2: Carla, 3: NurseRoberts, 4: [UNKNOWN]");
        let turns = p.identification_turns("A summary.");
        assert_eq!(turns.len(), 5);
        assert_eq!(turns[0].role, Role::System);
        assert_eq!(turns[2].content, "A summary.");
        assert!(turns[3].content.ends_with(ANSWER_INSTRUCTION));
        assert!(turns[3].content.contains(&p.speaker_list));
    }

    #[test]
    fn single_named_speaker_list() {
        let (segs, _) = scrubs();
        let labels: Vec<Option<CharacterId>> = (0..segs.len()).map(|_| Some("Carla".into())).collect();
        let q = LlmQuery::build(5, &segs, &labels, 2);
        assert_eq!(q.render_speaker_list(), "1: Carla, 2: [UNKNOWN]");
        assert_eq!(q.dialogue.len(), 5);
    }

    #[test]
    fn only_target_is_starred() {
        let (segs, mut labels) = scrubs();
        labels[3] = None;
        labels[7] = None;
        let q = LlmQuery::build(5, &segs, &labels, 5);
        let d = q.render_dialogue();
        assert_eq!(d.matches("**").count(), 2);
        assert_eq!(d.matches("[UNKNOWN] :").count(), 3);
    }

    #[test]
    fn window_clips_at_episode_edges() {
        let (segs, labels) = scrubs();
        let q = LlmQuery::build(0, &segs, &labels, 3);
        assert_eq!(q.dialogue.len(), 4);
        assert!(q.dialogue[0].is_target);
        q.check_invariants(3).unwrap();
    }

    fn stub(dist: &[(usize, f64)]) -> ScriptedOracle {
        ScriptedOracle::from_distributions([(SegmentId::from("s05"), dist.iter().copied().collect())])
    }

    #[test]
    fn index_one_maps_to_first_speaker() {
        let (segs, labels) = scrubs();
        let q = LlmQuery::build(5, &segs, &labels, 5);
        let a = resolve_unknown_with_llm(&q, &stub(&[(1, 0.7), (2, 0.2), (3, 0.05), (4, 0.05)]));
        assert_eq!(a.label.unwrap().as_str(), "Dr.Cox");
        assert_eq!(a.provenance, Provenance::Llm);
        assert_eq!(a.score, 0.7);
    }

    #[test]
    fn unknown_index_gives_unknown() {
        let (segs, labels) = scrubs();
        let q = LlmQuery::build(5, &segs, &labels, 5);
        let a = resolve_unknown_with_llm(&q, &stub(&[(1, 0.1), (2, 0.1), (3, 0.1), (4, 0.7)]));
        assert!(a.is_unknown());
        assert_eq!(a.provenance, Provenance::Unresolved);
    }

    #[test]
    fn malformed_text_gives_unknown() {
        let (segs, labels) = scrubs();
        let q = LlmQuery::build(5, &segs, &labels, 5);
        let oracle = ScriptedOracle::from_responses([(SegmentId::from("s05"), "ANSWER: banana".to_string())]);
        let a = resolve_unknown_with_llm(&q, &oracle);
        assert!(a.is_unknown());
        assert_eq!(a.provenance, Provenance::Unresolved);
    }

    #[test]
    fn text_answer_in_range() {
        let (segs, labels) = scrubs();
        let q = LlmQuery::build(5, &segs, &labels, 5);
        let oracle = ScriptedOracle::from_responses([(SegmentId::from("s05"), "ANSWER: 2".to_string())]);
        assert_eq!(resolve_unknown_with_llm(&q, &oracle).label.unwrap().as_str(), "Carla");
    }

    #[test]
    fn out_of_range_index_gives_unknown() {
        let (segs, labels) = scrubs();
        let q = LlmQuery::build(5, &segs, &labels, 5);
        assert!(resolve_unknown_with_llm(&q, &stub(&[(9, 1.0)])).is_unknown());
        assert!(resolve_unknown_with_llm(&q, &stub(&[(0, 1.0)])).is_unknown());
    }

    #[test]
    fn unnormalised_distribution_gives_unknown() {
        let (segs, labels) = scrubs();
        let q = LlmQuery::build(5, &segs, &labels, 5);
        assert!(resolve_unknown_with_llm(&q, &stub(&[(1, 0.7), (2, 0.7)])).is_unknown());
    }

    #[test]
    fn ties_go_to_smaller_index() {
        let v = LlmVerdict::from_distribution([(2, 0.5), (1, 0.5)].into(), "");
        assert_eq!(v.chosen_index(), Some((1, 0.5)));
    }

    #[test]
    fn answer_parsing() {
        assert_eq!(parse_answer("ANSWER: 3"), Some(3));
        assert_eq!(parse_answer(" 2\n"), Some(2));
        assert_eq!(parse_answer("ANSWER:4."), Some(4));
        assert_eq!(parse_answer("ANSWER: banana"), None);
        assert_eq!(parse_answer("3rd"), None);
        assert_eq!(parse_answer(""), None);
    }
}
