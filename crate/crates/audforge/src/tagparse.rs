//! Parser and validator for the tagged response grammar used by training
//! targets and reward scoring.
//!
//! A well-formed response is a flat sequence of tagged sections in fixed
//! order: `<think>…</think>`, then optionally
//! `<semantic_elements>…</semantic_elements>`, then `<answer>…</answer>`.
//! Each tag appears exactly once, tags never nest, and anything outside the
//! tagged sections must be whitespace. Matching is case-sensitive and exact;
//! the only tolerated variant is `<thinking>`, accepted on input as an alias
//! for `<think>` but never produced by serializers.

use serde::{Deserialize, Serialize};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const SEMANTIC_OPEN: &str = "<semantic_elements>";
pub const SEMANTIC_CLOSE: &str = "</semantic_elements>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

const THINK_ALIAS_OPEN: &str = "<thinking>";
const THINK_ALIAS_CLOSE: &str = "</thinking>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagName {
    Think,
    SemanticElements,
    Answer,
}

impl TagName {
    pub fn open(self) -> &'static str {
        match self {
            TagName::Think => THINK_OPEN,
            TagName::SemanticElements => SEMANTIC_OPEN,
            TagName::Answer => ANSWER_OPEN,
        }
    }

    pub fn close(self) -> &'static str {
        match self {
            TagName::Think => THINK_CLOSE,
            TagName::SemanticElements => SEMANTIC_CLOSE,
            TagName::Answer => ANSWER_CLOSE,
        }
    }
}

/// A single grammar violation. The parser accumulates every violation it can
/// see rather than stopping at the first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "kebab-case")]
pub enum Violation {
    MissingTag { tag: TagName },
    DuplicateTag { tag: TagName },
    OutOfOrder,
    StrayContent,
    UnclosedTag { tag: TagName },
}

impl Violation {
    pub fn code(&self) -> &'static str {
        match self {
            Violation::MissingTag { .. } => "missing-tag",
            Violation::DuplicateTag { .. } => "duplicate-tag",
            Violation::OutOfOrder => "out-of-order",
            Violation::StrayContent => "stray-content",
            Violation::UnclosedTag { .. } => "unclosed-tag",
        }
    }
}

/// Parse result. Spans are extracted opportunistically: a span is filled
/// whenever its own tag pair occurs exactly once and in open/close order,
/// even if the response as a whole is malformed. Spans are
/// whitespace-trimmed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub think_span: String,
    pub semantic_span: Option<String>,
    pub answer_span: String,
    pub well_formed: bool,
    pub violations: Vec<Violation>,
}

impl ParsedResponse {
    pub fn violation_codes(&self) -> Vec<&'static str> {
        self.violations.iter().map(Violation::code).collect()
    }
}

fn find_all(haystack: &str, needle: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(needle) {
        out.push(from + pos);
        from += pos + needle.len();
    }
    out
}

/// Rewrites the `<thinking>` alias to canonical `<think>` tags.
fn canonicalize_alias(text: &str) -> String {
    text.replace(THINK_ALIAS_OPEN, THINK_OPEN)
        .replace(THINK_ALIAS_CLOSE, THINK_CLOSE)
}

struct TagScan {
    opens: Vec<usize>,
    closes: Vec<usize>,
}

impl TagScan {
    fn run(text: &str, tag: TagName) -> Self {
        // Occurrences of the open tag also match inside the close tag string
        // for none of our tags ("</think>" does not contain "<think>"), but
        // "<think>" does occur inside neither; scanning is safe as-is.
        TagScan {
            opens: find_all(text, tag.open()),
            closes: find_all(text, tag.close()),
        }
    }

    fn exactly_once(&self) -> bool {
        self.opens.len() == 1 && self.closes.len() == 1
    }

    fn ordered_pair(&self) -> Option<(usize, usize)> {
        if self.exactly_once() && self.opens[0] < self.closes[0] {
            Some((self.opens[0], self.closes[0]))
        } else {
            None
        }
    }

    fn present(&self) -> bool {
        !self.opens.is_empty() || !self.closes.is_empty()
    }
}

/// Parses `text` against the tag grammar.
///
/// With `require_semantic` the `<semantic_elements>` section is mandatory;
/// without it the section is optional but still validated when present.
/// Never panics, whatever the input.
pub fn parse_tagged(text: &str, require_semantic: bool) -> ParsedResponse {
    let text = canonicalize_alias(text);

    let think = TagScan::run(&text, TagName::Think);
    let semantic = TagScan::run(&text, TagName::SemanticElements);
    let answer = TagScan::run(&text, TagName::Answer);

    let mut violations = Vec::new();
    let mut out_of_order = false;

    let scans: [(&TagScan, TagName, bool); 3] = [
        (&think, TagName::Think, true),
        (&semantic, TagName::SemanticElements, require_semantic),
        (&answer, TagName::Answer, true),
    ];

    for (scan, tag, required) in scans {
        if scan.opens.is_empty() && scan.closes.is_empty() {
            if required {
                violations.push(Violation::MissingTag { tag });
            }
            continue;
        }
        if scan.opens.is_empty() {
            // A close tag with no open counts as the open tag missing.
            violations.push(Violation::MissingTag { tag });
            continue;
        }
        if scan.opens.len() > 1 || scan.closes.len() > 1 {
            violations.push(Violation::DuplicateTag { tag });
            continue;
        }
        if scan.closes.is_empty() {
            violations.push(Violation::UnclosedTag { tag });
            continue;
        }
        if scan.closes[0] < scan.opens[0] {
            out_of_order = true;
        }
    }

    // Cross-section ordering, checked over the sections that parsed as clean
    // pairs. The expected position order is think < semantic < answer with
    // every close after its open and before the next open.
    let mut pairs: Vec<(TagName, usize, usize)> = Vec::new();
    for (scan, tag) in [
        (&think, TagName::Think),
        (&semantic, TagName::SemanticElements),
        (&answer, TagName::Answer),
    ] {
        if let Some((open, close)) = scan.ordered_pair() {
            pairs.push((tag, open, close + tag.close().len()));
        }
    }
    for window in pairs.windows(2) {
        let (_, _, prev_end) = window[0];
        let (_, next_open, _) = window[1];
        if next_open < prev_end {
            out_of_order = true;
        }
    }
    if out_of_order {
        violations.push(Violation::OutOfOrder);
    }

    // Stray content is only decidable once every present section parsed as a
    // clean, non-overlapping pair.
    let all_clean = [&think, &semantic, &answer]
        .iter()
        .all(|scan| !scan.present() || scan.ordered_pair().is_some());
    if all_clean && !out_of_order {
        let mut cursor = 0;
        let mut stray = false;
        for &(_, open, end) in &pairs {
            if !text[cursor..open].trim().is_empty() {
                stray = true;
            }
            cursor = end;
        }
        if !text[cursor..].trim().is_empty() {
            stray = true;
        }
        if stray {
            violations.push(Violation::StrayContent);
        }
    }

    let span_of = |scan: &TagScan, tag: TagName| -> Option<String> {
        scan.ordered_pair()
            .map(|(open, close)| text[open + tag.open().len()..close].trim().to_string())
    };

    let think_span = span_of(&think, TagName::Think).unwrap_or_default();
    let semantic_span = if semantic.present() {
        span_of(&semantic, TagName::SemanticElements)
    } else {
        None
    };
    let answer_span = span_of(&answer, TagName::Answer).unwrap_or_default();

    let well_formed = violations.is_empty();
    ParsedResponse {
        think_span,
        semantic_span,
        answer_span,
        well_formed,
        violations,
    }
}

/// Lenient answer extraction for evaluation.
///
/// Uses the strict span when the response is well-formed; otherwise falls
/// back to everything after the last `<answer>` marker, cut at the next
/// `</answer>` if one follows. Returns `None` only when no answer marker
/// exists at all.
pub fn extract_answer(text: &str) -> Option<String> {
    let parsed = parse_tagged(text, false);
    if parsed.well_formed {
        return Some(parsed.answer_span);
    }
    let pos = text.rfind(ANSWER_OPEN)?;
    let tail = &text[pos + ANSWER_OPEN.len()..];
    let tail = match tail.find(ANSWER_CLOSE) {
        Some(end) => &tail[..end],
        None => tail,
    };
    Some(tail.trim().to_string())
}

/// Whitespace-token count of the think span; 0 when the span is absent or
/// not uniquely extractable.
pub fn think_word_count(text: &str) -> usize {
    crate::util::word_count(&parse_tagged(text, false).think_span)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn codes(text: &str, require_semantic: bool) -> Vec<&'static str> {
        parse_tagged(text, require_semantic).violation_codes()
    }

    #[test]
    fn accepts_two_phase_response() {
        let p = parse_tagged("<think>quiet room, a door</think>\n<answer>A door creaks.</answer>", false);
        assert!(p.well_formed);
        assert_eq!(p.think_span, "quiet room, a door");
        assert_eq!(p.answer_span, "A door creaks.");
        assert_eq!(p.semantic_span, None);
    }

    #[test]
    fn accepts_three_phase_response() {
        let text = "<think>reasoning here</think>\n<semantic_elements>agents_who: a dog</semantic_elements>\n<answer>A dog barks.</answer>";
        let p = parse_tagged(text, true);
        assert!(p.well_formed);
        assert_eq!(p.semantic_span.as_deref(), Some("agents_who: a dog"));
    }

    #[test]
    fn semantic_required_but_missing() {
        let text = "<think>x</think><answer>y</answer>";
        assert!(parse_tagged(text, false).well_formed);
        assert_eq!(codes(text, true), vec!["missing-tag"]);
    }

    #[test]
    fn flags_missing_tags() {
        assert_eq!(codes("<answer>y</answer>", false), vec!["missing-tag"]);
        assert_eq!(
            codes("no tags at all", false),
            vec!["missing-tag", "missing-tag", "stray-content"]
        );
        assert_eq!(codes("", false), vec!["missing-tag", "missing-tag"]);
    }

    #[test]
    fn close_without_open_counts_as_missing() {
        assert_eq!(
            codes("x</think><answer>y</answer>", false),
            vec!["missing-tag"]
        );
    }

    #[test]
    fn flags_duplicates() {
        let text = "<think>a</think><answer>b</answer><answer>c</answer>";
        assert_eq!(codes(text, false), vec!["duplicate-tag"]);
    }

    #[test]
    fn flags_unclosed() {
        let text = "<think>a</think><answer>b";
        assert_eq!(codes(text, false), vec!["unclosed-tag"]);
    }

    #[test]
    fn flags_out_of_order() {
        let text = "<answer>b</answer><think>a</think>";
        assert_eq!(codes(text, false), vec!["out-of-order"]);
    }

    #[test]
    fn inverted_pair_is_out_of_order() {
        let text = "<think>a</think></answer>b<answer>";
        assert_eq!(codes(text, false), vec!["out-of-order"]);
    }

    #[test]
    fn nesting_is_out_of_order() {
        let text = "<think>a <answer>b</answer> c</think>";
        assert_eq!(codes(text, false), vec!["out-of-order"]);
    }

    #[test]
    fn flags_stray_content() {
        let text = "<think>a</think> noise <answer>b</answer>";
        assert_eq!(codes(text, false), vec!["stray-content"]);
        let text = "preamble <think>a</think><answer>b</answer>";
        assert_eq!(codes(text, false), vec!["stray-content"]);
        let text = "<think>a</think><answer>b</answer> trailing";
        assert_eq!(codes(text, false), vec!["stray-content"]);
    }

    #[test]
    fn whitespace_between_sections_is_fine() {
        let text = "  <think>a</think>\n\n  <answer>b</answer>\n";
        assert!(parse_tagged(text, false).well_formed);
    }

    #[test]
    fn thinking_alias_accepted_on_input() {
        let p = parse_tagged("<thinking>a b c</thinking><answer>d</answer>", false);
        assert!(p.well_formed);
        assert_eq!(p.think_span, "a b c");
    }

    #[test]
    fn mixed_alias_and_canonical_is_duplicate() {
        let text = "<thinking>a</thinking><think>b</think><answer>c</answer>";
        assert_eq!(codes(text, false), vec!["duplicate-tag"]);
    }

    #[test]
    fn case_sensitive_tags() {
        assert_eq!(
            codes("<Think>a</Think><answer>b</answer>", false),
            vec!["missing-tag", "stray-content"]
        );
    }

    #[test]
    fn spans_survive_unrelated_violations() {
        let p = parse_tagged("<answer>only answer</answer>", false);
        assert!(!p.well_formed);
        assert_eq!(p.answer_span, "only answer");
        assert_eq!(p.think_span, "");
    }

    #[test]
    fn extract_answer_strict_and_lenient() {
        assert_eq!(
            extract_answer("<think>a</think><answer>It rains.</answer>"),
            Some("It rains.".to_string())
        );
        assert_eq!(
            extract_answer("chatter <answer>It rains.</answer> more chatter"),
            Some("It rains.".to_string())
        );
        assert_eq!(
            extract_answer("<answer>first</answer> <answer>second"),
            Some("second".to_string())
        );
        assert_eq!(extract_answer("no markers here"), None);
    }

    #[test]
    fn think_word_count_trims_and_counts() {
        assert_eq!(think_word_count("<think>  one two   three </think><answer>x</answer>"), 3);
        assert_eq!(think_word_count("<answer>x</answer>"), 0);
        assert_eq!(think_word_count("<think>unclosed words"), 0);
    }
}
