//! Sentence words, LEAMR-style spans, and encoder subword reconciliation.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::TokenError;
use crate::tokens::{self, Marker};

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '“' | '”' | '‘' | '’' | '«' | '»' | '—' | '–' | '…')
}

/// Whitespace tokenization with leading and trailing punctuation split off
/// character by character. Word-internal punctuation (`don't`, `3.5`) stays.
pub fn word_tokenize(sentence: &str) -> Vec<String> {
    let mut words = Vec::new();
    for chunk in sentence.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let lead = chars.iter().take_while(|c| is_punct(**c)).count();
        if lead == chars.len() {
            words.extend(chars.iter().map(|c| c.to_string()));
            continue;
        }
        let trail = chars.iter().rev().take_while(|c| is_punct(**c)).count();
        words.extend(chars[..lead].iter().map(|c| c.to_string()));
        words.push(chars[lead..chars.len() - trail].iter().collect());
        words.extend(chars[chars.len() - trail..].iter().map(|c| c.to_string()));
    }
    words
}

/// Multiword-expression lexicon: one expression per line, words separated by spaces.
#[derive(Debug, Clone, Default)]
pub struct MweLexicon {
    entries: HashSet<Vec<String>>,
    max_len: usize,
}

impl MweLexicon {
    pub fn parse(text: &str) -> Self {
        let mut lex = MweLexicon::default();
        for line in text.lines() {
            let words: Vec<String> = line.split_whitespace().map(str::to_lowercase).collect();
            if words.len() >= 2 {
                lex.max_len = lex.max_len.max(words.len());
                lex.entries.insert(words);
            }
        }
        lex
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Length of the longest entry matching `words` from `start`, if any.
    fn longest_match(&self, words: &[String], start: usize) -> Option<usize> {
        let avail = words.len() - start;
        (2..=self.max_len.min(avail)).rev().find(|&len| {
            let cand: Vec<String> = words[start..start + len].iter().map(|w| w.to_lowercase()).collect();
            self.entries.contains(&cand)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    /// Exclusive.
    pub end: usize,
    pub text: String,
}

impl Span {
    pub fn words(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

/// A partition of the sentence words into consecutive spans.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanList {
    pub spans: Vec<Span>,
    pub span_of_word: Vec<usize>,
}

impl SpanList {
    /// Builds a span list from span lengths over `words`.
    pub fn from_lengths(words: &[String], lengths: &[usize]) -> Self {
        let mut spans = Vec::with_capacity(lengths.len());
        let mut span_of_word = Vec::with_capacity(words.len());
        let mut start = 0;
        for (i, &len) in lengths.iter().enumerate() {
            let end = start + len;
            spans.push(Span { start, end, text: words[start..end].join(" ") });
            span_of_word.extend(std::iter::repeat_n(i, len));
            start = end;
        }
        debug_assert_eq!(start, words.len());
        SpanList { spans, span_of_word }
    }

    /// One span per word.
    pub fn singletons(words: &[String]) -> Self {
        SpanList::from_lengths(words, &vec![1; words.len()])
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn word_count(&self) -> usize {
        self.span_of_word.len()
    }

    /// Span containing `word`.
    pub fn select_span(&self, word: usize) -> Result<usize, TokenError> {
        self.span_of_word
            .get(word)
            .copied()
            .ok_or(TokenError::WordOutOfRange { index: word, len: self.span_of_word.len() })
    }

    /// Span whose words are exactly `words`, if the partition has one.
    pub fn span_with_words(&self, words: &[usize]) -> Option<usize> {
        let first = *words.first()?;
        let s = *self.span_of_word.get(first)?;
        let span = &self.spans[s];
        (span.words().eq(words.iter().copied())).then_some(s)
    }

    /// Parses one line of a span file: spans separated by `|`, words by spaces.
    /// When `words` is given, the span words must reproduce it exactly.
    pub fn parse_line(line: &str, words: Option<&[String]>) -> Result<Self, TokenError> {
        let groups: Vec<Vec<String>> = line
            .split('|')
            .map(|g| g.split_whitespace().map(str::to_string).collect::<Vec<_>>())
            .filter(|g| !g.is_empty())
            .collect();
        let flat: Vec<String> = groups.iter().flatten().cloned().collect();
        if let Some(words) = words {
            if flat != words {
                return Err(TokenError::SpanMismatch(format!(
                    "expected `{}`, got `{}`",
                    words.join(" "),
                    flat.join(" ")
                )));
            }
        }
        let lengths: Vec<usize> = groups.iter().map(Vec::len).collect();
        Ok(SpanList::from_lengths(&flat, &lengths))
    }

    pub fn to_line(&self) -> String {
        self.spans.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" | ")
    }
}

fn capitalized(w: &str) -> bool {
    w.chars().next().is_some_and(char::is_uppercase)
}

/// Greedy left-to-right segmentation: at each word take the longest of
/// (lexicon match, run of capitalized words of length >= 2, the single word).
/// Ties between a lexicon match and a capitalized run go to the lexicon.
pub fn segment_spans(words: &[String], lexicon: &MweLexicon) -> SpanList {
    let mut lengths = Vec::new();
    let mut i = 0;
    while i < words.len() {
        let mwe = lexicon.longest_match(words, i).unwrap_or(1);
        let run = words[i..].iter().take_while(|w| capitalized(w)).count();
        let run = if run >= 2 { run } else { 1 };
        let len = mwe.max(run);
        lengths.push(len);
        i += len;
    }
    SpanList::from_lengths(words, &lengths)
}

/// Encoder subword tokens reconciled with sentence words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceTokens {
    pub encoder_tokens: Vec<String>,
    pub words: Vec<String>,
    /// Word of each token; control tokens map to `None`.
    pub word_of_token: Vec<Option<usize>>,
}

impl SentenceTokens {
    /// Recovers words from subword boundary markers.
    ///
    /// With `##` continuations present the stream is read as WordPiece,
    /// otherwise a `Ġ`/`▁` prefix starts a new word and unmarked tokens
    /// continue the previous one; the first text token always starts a word.
    /// Without any markers every token is its own word.
    pub fn from_markers<S: AsRef<str>>(encoder_tokens: &[S]) -> Result<Self, TokenError> {
        let toks: Vec<&str> = encoder_tokens.iter().map(AsRef::as_ref).collect();
        let wordpiece = toks.iter().any(|t| tokens::split_marker(t).0 == Marker::Continuation);
        let any_boundary = toks.iter().any(|t| tokens::split_marker(t).0 == Marker::Boundary);
        let mut words: Vec<String> = Vec::new();
        let mut word_of_token = Vec::with_capacity(toks.len());
        for (index, tok) in toks.iter().enumerate() {
            if tokens::is_special(tok) {
                word_of_token.push(None);
                continue;
            }
            let (marker, text) = tokens::split_marker(tok);
            let inner = tokens::split_marker(text).0;
            let mixed = (marker == Marker::Continuation && inner == Marker::Boundary)
                || (marker == Marker::Boundary && inner == Marker::Continuation)
                || (wordpiece && marker == Marker::Boundary);
            if mixed {
                return Err(TokenError::MarkerInconsistency { index, token: tok.to_string() });
            }
            if text.is_empty() {
                word_of_token.push(None);
                continue;
            }
            let starts_word = match marker {
                _ if words.is_empty() => {
                    if marker == Marker::Continuation {
                        return Err(TokenError::MarkerInconsistency { index, token: tok.to_string() });
                    }
                    true
                }
                Marker::Continuation => false,
                Marker::Boundary => true,
                Marker::None => wordpiece || !any_boundary,
            };
            if starts_word {
                words.push(text.to_string());
            } else {
                words.last_mut().expect("non-empty").push_str(text);
            }
            word_of_token.push(Some(words.len() - 1));
        }
        Ok(SentenceTokens {
            encoder_tokens: toks.iter().map(|t| t.to_string()).collect(),
            words,
            word_of_token,
        })
    }

    /// Reconciles tokens with externally tokenized words by character offsets.
    /// A token straddling a word boundary is attributed to the word holding its
    /// first character.
    pub fn align_to_words<S: AsRef<str>>(
        encoder_tokens: &[S],
        words: &[String],
    ) -> Result<Self, TokenError> {
        let surfaces: Vec<&str> = encoder_tokens.iter().map(|t| tokens::surface(t.as_ref())).collect();
        let ranges = tokens::reconcile(&surfaces, words)
            .map_err(|offset| TokenError::StreamMismatch { offset })?;
        Ok(SentenceTokens {
            encoder_tokens: encoder_tokens.iter().map(|t| t.as_ref().to_string()).collect(),
            words: words.to_vec(),
            word_of_token: ranges.into_iter().map(|r| r.map(|(a, _)| a)).collect(),
        })
    }

    /// Tokens are words: identity mapping.
    pub fn identity(words: &[String]) -> Self {
        SentenceTokens {
            encoder_tokens: words.to_vec(),
            words: words.to_vec(),
            word_of_token: (0..words.len()).map(Some).collect(),
        }
    }

    pub fn tokens_of_word(&self, word: usize) -> impl Iterator<Item = usize> + '_ {
        self.word_of_token
            .iter()
            .enumerate()
            .filter(move |(_, w)| **w == Some(word))
            .map(|(i, _)| i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(word_tokenize("It works."), ["It", "works", "."]);
        assert_eq!(word_tokenize("take your jacket off").len(), 4);
        assert!(word_tokenize("").is_empty());
        assert_eq!(word_tokenize("\"Flow\", a documentary"), ["\"", "Flow", "\"", ",", "a", "documentary"]);
        assert_eq!(word_tokenize("don't stop ... now?"), ["don't", "stop", ".", ".", ".", "now", "?"]);
    }

    #[test]
    fn capitalized_runs_merge() {
        let spans = segment_spans(&w("New York is big"), &MweLexicon::default());
        let texts: Vec<&str> = spans.spans.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(texts, ["New York", "is", "big"]);
        assert_eq!(spans.span_of_word, [0, 0, 1, 2]);
    }

    #[test]
    fn no_lexicon_no_capitals() {
        let spans = segment_spans(&w("the cat sat"), &MweLexicon::default());
        assert_eq!(spans.len(), 3);
    }

    #[test]
    fn discontinuous_mwe_not_merged() {
        let lex = MweLexicon::parse("take off\n");
        let spans = segment_spans(&w("take your jacket off"), &lex);
        assert_eq!(spans.len(), 4);
        let spans = segment_spans(&w("take off your jacket"), &lex);
        assert_eq!(spans.spans[0].text, "take off");
    }

    #[test]
    fn longest_lexicon_match_wins() {
        let lex = MweLexicon::parse("as well\nas well as\n");
        let spans = segment_spans(&w("cats as well as dogs"), &lex);
        let texts: Vec<&str> = spans.spans.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(texts, ["cats", "as well as", "dogs"]);
    }

    #[test]
    fn select_span_bounds() {
        let one = SpanList::singletons(&w("hi"));
        assert_eq!(one.select_span(0), Ok(0));
        let ny = segment_spans(&w("New York is big"), &MweLexicon::default());
        assert_eq!(ny.select_span(1), Ok(0));
        assert_eq!(ny.select_span(4), Err(TokenError::WordOutOfRange { index: 4, len: 4 }));
    }

    #[test]
    fn span_file_lines() {
        let words = w("New York is big");
        let s = SpanList::parse_line("New York | is|big", Some(&words)).unwrap();
        assert_eq!(s.span_of_word, [0, 0, 1, 2]);
        assert_eq!(s.to_line(), "New York | is | big");
        assert!(SpanList::parse_line("New | York", Some(&words)).is_err());
    }

    #[test]
    fn marker_words() {
        let st = SentenceTokens::from_markers(&["<s>", "The", "\u{120}mer", "chant", "\u{120}sold", "</s>"]).unwrap();
        assert_eq!(st.words, ["The", "merchant", "sold"]);
        assert_eq!(st.word_of_token, [None, Some(0), Some(1), Some(1), Some(2), None]);

        let plain = SentenceTokens::from_markers(&["a", "b", "c"]).unwrap();
        assert_eq!(plain.word_of_token, [Some(0), Some(1), Some(2)]);

        let wp = SentenceTokens::from_markers(&["mer", "##chant", "sold"]).unwrap();
        assert_eq!(wp.words, ["merchant", "sold"]);
    }

    #[test]
    fn marker_errors() {
        assert!(matches!(
            SentenceTokens::from_markers(&["##mer", "chant"]),
            Err(TokenError::MarkerInconsistency { index: 0, .. })
        ));
        assert!(matches!(
            SentenceTokens::from_markers(&["mer", "##\u{120}chant"]),
            Err(TokenError::MarkerInconsistency { index: 1, .. })
        ));
    }

    #[test]
    fn align_tokens_to_words() {
        let words = w("It works .");
        let st = SentenceTokens::align_to_words(&["<s>", "It", "\u{120}wor", "ks", ".", "</s>"], &words).unwrap();
        assert_eq!(st.word_of_token, [None, Some(0), Some(1), Some(1), Some(2), None]);
        assert!(SentenceTokens::align_to_words(&["It", "works"], &words).is_err());
    }
}
