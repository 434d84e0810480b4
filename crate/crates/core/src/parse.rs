//! Classification of free-text model answers.
//!
//! The parser looks for the first "from X to Y"-shaped pair in a response.
//! It is case-insensitive and tolerates `frame`/`frames` words, zero padding,
//! hyphen and dash separators, `MM:SS` timestamps and values tagged with a
//! seconds unit (those are converted to frames with the stream's frame rate).
//! Every input lands in exactly one [`Validity`] class; nothing here fails.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::span::TemporalSpan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Validity {
    Valid,
    /// Endpoints were swapped or pulled back inside the video.
    Clamped,
    /// Both endpoints lie beyond the last frame.
    OutOfRange,
    Malformed,
}

impl Validity {
    pub fn is_scored(&self) -> bool {
        matches!(self, Validity::Valid | Validity::Clamped)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Validity::Valid => "valid",
            Validity::Clamped => "clamped",
            Validity::OutOfRange => "out_of_range",
            Validity::Malformed => "malformed",
        }
    }
}

impl fmt::Display for Validity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Result of parsing one moment answer.
///
/// `span` is in frames and present only for `Valid` and `Clamped`.
/// `extracted` keeps the pair as read from the text (after ordering), so
/// hallucinated intervals can still be tallied.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParseOutcome {
    pub span: Option<TemporalSpan>,
    pub validity: Validity,
    pub raw: String,
    pub extracted: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Value { value: f64, seconds: bool },
    Word(String),
    Dash,
    Punct(char),
}

const FRAME_WORDS: &[&str] = &["frame", "frames", "number"];
const SECOND_WORDS: &[&str] = &["s", "sec", "secs", "second", "seconds"];
const RANGE_WORDS: &[&str] = &["to", "until", "till", "through", "thru"];

fn is_dash(c: char) -> bool {
    matches!(c, '-' | '\u{2010}'..='\u{2015}' | '\u{2212}' | '~')
}

fn digits_value(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() {
            let run = |mut j: usize| {
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                j
            };
            let int_end = run(i);
            let int: String = chars[i..int_end].iter().collect();
            let next_is_digit = |j: usize| chars.get(j).is_some_and(|c| c.is_ascii_digit());
            if chars.get(int_end) == Some(&':') && next_is_digit(int_end + 1) {
                // MM:SS, optionally H:MM:SS.
                let mut parts = alloc::vec![int];
                let mut j = int_end;
                while chars.get(j) == Some(&':') && next_is_digit(j + 1) && parts.len() < 3 {
                    let end = run(j + 1);
                    parts.push(chars[j + 1..end].iter().collect());
                    j = end;
                }
                let seconds = parts
                    .iter()
                    .try_fold(0.0, |acc, p| digits_value(p).map(|v| acc * 60.0 + v));
                tokens.push(match seconds {
                    Some(value) => Token::Value { value, seconds: true },
                    None => Token::Punct('#'),
                });
                i = j;
            } else {
                let mut j = int_end;
                if chars.get(j) == Some(&'.') && next_is_digit(j + 1) {
                    j = run(j + 1);
                }
                let s: String = chars[i..j].iter().collect();
                tokens.push(match digits_value(&s) {
                    Some(value) => Token::Value { value, seconds: false },
                    None => Token::Punct('#'),
                });
                i = j;
            }
        } else if c.is_alphabetic() {
            let mut j = i;
            while j < chars.len() && chars[j].is_alphabetic() {
                j += 1;
            }
            let word: String = chars[i..j].iter().flat_map(|c| c.to_lowercase()).collect();
            tokens.push(Token::Word(word));
            i = j;
        } else if is_dash(c) {
            tokens.push(Token::Dash);
            i += 1;
        } else {
            tokens.push(Token::Punct(c));
            i += 1;
        }
    }
    tokens
}

struct Cursor<'a> {
    tokens: &'a [Token],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos)
    }

    fn word_in(&mut self, set: &[&str]) -> bool {
        match self.peek() {
            Some(Token::Word(w)) if set.contains(&w.as_str()) => {
                self.pos += 1;
                true
            }
            _ => false,
        }
    }

    fn punct(&mut self, set: &[char]) -> bool {
        match self.peek() {
            Some(Token::Punct(c)) if set.contains(c) => {
                self.pos += 1;
                true
            }
            _ => false,
        }
    }

    fn skip_frame_words(&mut self) {
        while self.word_in(FRAME_WORDS) || self.punct(&['#']) {}
    }

    /// A number, converted to frames when it is a timestamp or carries a
    /// seconds unit.
    fn endpoint(&mut self, fps: f64) -> Option<f64> {
        let Some(Token::Value { value, seconds }) = self.peek() else {
            return None;
        };
        self.pos += 1;
        let seconds = *seconds || self.word_in(SECOND_WORDS);
        Some(if seconds { value * fps } else { *value })
    }

    /// `[from|between] [frame] X (to|-|and) [frame] Y` starting here.
    fn pair(&mut self, fps: f64) -> Option<(f64, f64)> {
        let between = match self.peek() {
            Some(Token::Word(w)) if w == "from" => {
                self.pos += 1;
                false
            }
            Some(Token::Word(w)) if w == "between" => {
                self.pos += 1;
                true
            }
            Some(Token::Value { .. }) => false,
            _ => return None,
        };
        self.skip_frame_words();
        let a = self.endpoint(fps)?;
        self.skip_frame_words();
        let separated = self.word_in(RANGE_WORDS)
            || (between && self.word_in(&["and"]))
            || matches!(self.peek(), Some(Token::Dash)) && {
                self.pos += 1;
                true
            };
        if !separated {
            return None;
        }
        self.skip_frame_words();
        let b = self.endpoint(fps)?;
        Some((a, b))
    }
}

/// All non-overlapping pairs in reading order, with the token index just past
/// each pair.
fn pairs(tokens: &[Token], fps: f64) -> Vec<((f64, f64), usize)> {
    let mut found = Vec::new();
    let mut start = 0;
    while start < tokens.len() {
        let mut cursor = Cursor { tokens, pos: start };
        match cursor.pair(fps) {
            Some(pair) => {
                found.push((pair, cursor.pos));
                start = cursor.pos;
            }
            None => start += 1,
        }
    }
    found
}

/// Orders and clamps a pair to `[0, last]`. `None` when both ends are beyond
/// `last`; the flag reports whether anything was adjusted.
fn fit(pair: (f64, f64), last: f64) -> Option<((f64, f64), bool)> {
    let (mut a, mut b) = pair;
    let swapped = a > b;
    if swapped {
        core::mem::swap(&mut a, &mut b);
    }
    if a > last {
        return None;
    }
    let clamped = b > last;
    Some(((a, b.min(last)), swapped || clamped))
}

/// Extracts the first span from a moment-retrieval answer.
pub fn parse_moment(text: &str, n_frames: usize, fps: f64) -> ParseOutcome {
    let fps = if fps.is_finite() && fps > 0.0 { fps } else { 1.0 };
    let tokens = tokenize(text);
    let first = pairs(&tokens, fps).into_iter().next().map(|(pair, _)| pair);
    let malformed = ParseOutcome {
        span: None,
        validity: Validity::Malformed,
        raw: text.into(),
        extracted: None,
    };
    let Some(pair) = first else {
        return malformed;
    };
    if n_frames == 0 {
        return malformed;
    }
    let extracted = if pair.0 > pair.1 { (pair.1, pair.0) } else { pair };
    let last = (n_frames - 1) as f64;
    match fit(pair, last) {
        None => ParseOutcome {
            span: None,
            validity: Validity::OutOfRange,
            raw: text.into(),
            extracted: Some(extracted),
        },
        Some(((a, b), adjusted)) => ParseOutcome {
            span: TemporalSpan::frames(a, b).ok(),
            validity: if adjusted { Validity::Clamped } else { Validity::Valid },
            raw: text.into(),
            extracted: Some(extracted),
        },
    }
}

/// One `From x to y, saliency s` statement, as clip indices.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SaliencyEntry {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SaliencyOutcome {
    pub entries: Vec<SaliencyEntry>,
    pub validity: Validity,
    pub raw: String,
}

impl SaliencyOutcome {
    /// Per-clip predicted saliency: the highest score of any entry covering
    /// the clip, `None` for clips no entry mentions.
    pub fn clip_scores(&self, clip_count: usize) -> Vec<Option<f64>> {
        let mut scores = alloc::vec![None; clip_count];
        for e in &self.entries {
            for slot in scores.iter_mut().take(e.end.saturating_add(1)).skip(e.start) {
                let s: &mut Option<f64> = slot;
                *s = Some(s.map_or(e.score, |v: f64| v.max(e.score)));
            }
        }
        scores
    }
}

pub const MIN_SALIENCY: f64 = 1.0;
pub const MAX_SALIENCY: f64 = 5.0;

fn saliency_score(tokens: &[Token], mut pos: usize) -> Option<f64> {
    let mut cursor = Cursor { tokens, pos };
    // A few filler tokens may separate the span from the score.
    for _ in 0..3 {
        if !(cursor.punct(&[',', ';', ':', '(', '[']) || cursor.word_in(&["with", "a", "and"])) {
            break;
        }
    }
    if !cursor.word_in(&["saliency", "score"]) {
        return None;
    }
    cursor.word_in(&["score"]);
    while cursor.punct(&[':', '=']) || cursor.word_in(&["of", "is"]) {}
    pos = cursor.pos;
    match tokens.get(pos) {
        Some(Token::Value { value, seconds: false }) => Some(*value),
        _ => None,
    }
}

/// Extracts every `span, saliency score` statement from a highlight answer.
///
/// Scores outside `[1, 5]` and spans past the last clip are clamped (and the
/// outcome marked `Clamped`); spans entirely past the last clip are dropped.
pub fn parse_saliency(text: &str, clip_count: usize) -> SaliencyOutcome {
    let tokens = tokenize(text);
    let mut entries = Vec::new();
    let mut adjusted = false;
    let mut dropped = false;
    if clip_count > 0 {
        let last = (clip_count - 1) as f64;
        for (pair, end) in pairs(&tokens, 1.0) {
            let Some(score) = saliency_score(&tokens, end) else {
                continue;
            };
            let Some(((a, b), fitted)) = fit(pair, last) else {
                dropped = true;
                continue;
            };
            let clamped_score = score.clamp(MIN_SALIENCY, MAX_SALIENCY);
            adjusted |= fitted || clamped_score != score;
            entries.push(SaliencyEntry {
                start: a as usize,
                end: b as usize,
                score: clamped_score,
            });
        }
    }
    let validity = match (entries.is_empty(), dropped, adjusted) {
        (true, true, _) => Validity::OutOfRange,
        (true, false, _) => Validity::Malformed,
        (false, _, true) => Validity::Clamped,
        (false, _, false) => Validity::Valid,
    };
    SaliencyOutcome {
        entries,
        validity,
        raw: text.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DistributionError {
    #[error("no outcomes to tally")]
    Empty,
    #[error("top-k must be at least 1")]
    ZeroK,
}

/// Counts of predicted `(start, end)` intervals, truncated to integers.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IntervalHistogram {
    pub bins: BTreeMap<(i64, i64), usize>,
    /// Every outcome, including the malformed ones that have no bin.
    pub total: usize,
    pub malformed: usize,
}

impl IntervalHistogram {
    pub fn from_outcomes<'a>(outcomes: impl IntoIterator<Item = &'a ParseOutcome>) -> Self {
        let mut hist = Self::default();
        for outcome in outcomes {
            hist.total += 1;
            match outcome.extracted {
                Some((a, b)) if outcome.validity != Validity::Malformed => {
                    *hist.bins.entry((a as i64, b as i64)).or_default() += 1;
                }
                _ => hist.malformed += 1,
            }
        }
        hist
    }

    /// The `k` most frequent intervals; equal counts are ordered by interval.
    pub fn top_k(&self, k: usize) -> Vec<IntervalShare> {
        let mut rows: Vec<_> = self.bins.iter().map(|(&iv, &n)| (iv, n)).collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        rows.into_iter()
            .take(k)
            .map(|((start, end), count)| IntervalShare {
                start,
                end,
                count,
                share: count as f64 / self.total as f64,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IntervalShare {
    pub start: i64,
    pub end: i64,
    pub count: usize,
    /// `count / total`, in `[0, 1]`.
    pub share: f64,
}

/// Tallies predicted intervals and returns the `k` most common with their
/// share of all outcomes.
pub fn interval_distribution(
    outcomes: &[ParseOutcome],
    k: usize,
) -> Result<(IntervalHistogram, Vec<IntervalShare>), DistributionError> {
    if k == 0 {
        return Err(DistributionError::ZeroK);
    }
    if outcomes.is_empty() {
        return Err(DistributionError::Empty);
    }
    let hist = IntervalHistogram::from_outcomes(outcomes);
    let top = hist.top_k(k);
    Ok((hist, top))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;
    use proptest::prelude::*;

    fn span_of(o: &ParseOutcome) -> Option<(f64, f64)> {
        o.span.map(|s| (s.start(), s.end()))
    }

    #[test]
    fn template_answer() {
        let o = parse_moment("From 12 to 17", 60, 1.0);
        assert_eq!((span_of(&o), o.validity), (Some((12.0, 17.0)), Validity::Valid));
    }

    #[test]
    fn hallucinated_end_is_clamped() {
        let o = parse_moment("from frame 000 to frame 200", 19, 1.0);
        assert_eq!((span_of(&o), o.validity), (Some((0.0, 18.0)), Validity::Clamped));
        assert_eq!(o.extracted, Some((0.0, 200.0)));
    }

    #[test]
    fn truncated_answers_are_malformed() {
        for text in ["from 2 to .", "The given query happens in344-", "", "no idea", "to 5"] {
            let o = parse_moment(text, 60, 1.0);
            assert_eq!((o.validity, o.span), (Validity::Malformed, None), "{text:?}");
        }
    }

    #[test]
    fn both_ends_outside_is_out_of_range() {
        let o = parse_moment("From 40 to 50", 19, 1.0);
        assert_eq!((o.validity, o.span, o.extracted), (Validity::OutOfRange, None, Some((40.0, 50.0))));
    }

    #[test]
    fn swapped_endpoints_are_clamped() {
        let o = parse_moment("from 9 to 3", 19, 1.0);
        assert_eq!((span_of(&o), o.validity), (Some((3.0, 9.0)), Validity::Clamped));
    }

    #[test]
    fn first_pair_wins_and_tolerates_noise() {
        let o = parse_moment("It happens from frames 4 – 8, and again from 10 to 12.", 30, 1.0);
        assert_eq!(span_of(&o), Some((4.0, 8.0)));
        let o = parse_moment("Between frame 3 and frame 5.", 30, 1.0);
        assert_eq!(span_of(&o), Some((3.0, 5.0)));
        let o = parse_moment("FRAMES 007-011", 30, 1.0);
        assert_eq!(span_of(&o), Some((7.0, 11.0)));
        let o = parse_moment("The query happens in 2 - .", 30, 1.0);
        assert_eq!(o.validity, Validity::Malformed);
    }

    #[test]
    fn timestamps_and_seconds_use_fps() {
        let o = parse_moment("From 00:12 to 01:10", 200, 1.0);
        assert_eq!(span_of(&o), Some((12.0, 70.0)));
        let o = parse_moment("from 10s to 20 seconds", 60, 0.5);
        assert_eq!(span_of(&o), Some((5.0, 10.0)));
    }

    #[test]
    fn saliency_examples() {
        let o = parse_saliency("From 4 to 10, saliency 4", 20);
        assert_eq!(o.validity, Validity::Valid);
        assert_eq!(o.entries, vec![SaliencyEntry { start: 4, end: 10, score: 4.0 }]);

        let o = parse_saliency("From 4 to 10, saliency 7", 20);
        assert_eq!(o.validity, Validity::Clamped);
        assert_eq!(o.entries[0].score, 5.0);

        let o = parse_saliency("no relevant clips", 20);
        assert_eq!((o.validity, o.entries.len()), (Validity::Malformed, 0));

        let o = parse_saliency("From 40 to 50, saliency 3", 20);
        assert_eq!(o.validity, Validity::OutOfRange);
    }

    #[test]
    fn saliency_multiple_lines_and_clip_scores() {
        let text = "From 0 to 2, saliency 3\nFrom 2 to 3, saliency score: 5\nFrom 7 to 7 (score 1)";
        let o = parse_saliency(text, 8);
        assert_eq!(o.entries.len(), 3);
        assert_eq!(
            o.clip_scores(8),
            vec![Some(3.0), Some(3.0), Some(5.0), Some(5.0), None, None, None, Some(1.0)]
        );
    }

    #[test]
    fn distribution_shares() {
        let outcomes: Vec<_> = (0..100).map(|_| parse_moment("From 17 to 34", 60, 1.0)).collect();
        let (hist, top) = interval_distribution(&outcomes, 10).unwrap();
        assert_eq!(hist.total, 100);
        assert_eq!(top, vec![IntervalShare { start: 17, end: 34, count: 100, share: 1.0 }]);
        assert_eq!(interval_distribution(&[], 3), Err(DistributionError::Empty));
        assert_eq!(interval_distribution(&outcomes, 0), Err(DistributionError::ZeroK));
    }

    #[test]
    fn distribution_ties_are_ordered_by_interval() {
        let texts = ["From 5 to 6", "From 1 to 2", "garbage", "From 5 to 6", "From 1 to 2", "From 0 to 9"];
        let outcomes: Vec<_> = texts.iter().map(|t| parse_moment(t, 20, 1.0)).collect();
        let (hist, top) = interval_distribution(&outcomes, 2).unwrap();
        assert_eq!((hist.total, hist.malformed), (6, 1));
        assert_eq!((top[0].start, top[0].end, top[0].count), (1, 2, 2));
        assert_eq!((top[1].start, top[1].end), (5, 6));
    }

    proptest! {
        #[test]
        fn never_panics_and_spans_are_sound(text in "\\PC{0,80}", n in 1usize..500) {
            let o = parse_moment(&text, n, 1.0);
            match o.validity {
                Validity::Valid | Validity::Clamped => {
                    let s = o.span.unwrap();
                    prop_assert!(s.start() >= 0.0 && s.start() <= s.end() && s.end() <= (n - 1) as f64);
                }
                _ => prop_assert!(o.span.is_none()),
            }
        }

        #[test]
        fn noisy_template_mutations_are_total(a in 0u32..1000, b in 0u32..1000, pad in 0usize..4) {
            let text = format!("from frame {:0pad$} to frame {:0pad$}", a, b, pad = pad);
            let o = parse_moment(&text, 300, 1.0);
            prop_assert_ne!(o.validity, Validity::Malformed);
            prop_assert_eq!(o.extracted, Some((a.min(b) as f64, a.max(b) as f64)));
        }
    }
}
