//! Subword token conventions shared by the encoder and decoder sides.

/// Word-initial markers of byte-level BPE (`Ġ`) and SentencePiece (`▁`).
pub const BOUNDARY_MARKERS: [&str; 2] = ["\u{120}", "\u{2581}"];

/// WordPiece continuation marker.
pub const CONTINUATION_MARKER: &str = "##";

/// Model control tokens that carry no text.
pub const SPECIAL_TOKENS: [&str; 8] =
    ["<s>", "</s>", "<pad>", "<unk>", "<mask>", "<AMR>", "</AMR>", "<lit>"];

pub fn is_special(token: &str) -> bool {
    SPECIAL_TOKENS.contains(&token)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Marker {
    Boundary,
    Continuation,
    None,
}

/// Splits a token into its marker and the text it contributes.
pub fn split_marker(token: &str) -> (Marker, &str) {
    for m in BOUNDARY_MARKERS {
        if let Some(rest) = token.strip_prefix(m) {
            return (Marker::Boundary, rest);
        }
    }
    if let Some(rest) = token.strip_prefix(CONTINUATION_MARKER) {
        if !rest.is_empty() {
            return (Marker::Continuation, rest);
        }
    }
    (Marker::None, token)
}

/// Text contributed by a token: markers stripped, special tokens empty.
pub fn surface(token: &str) -> &str {
    if is_special(token) {
        ""
    } else {
        split_marker(token).1
    }
}

/// Character-level reconciliation of a token stream against a sequence of
/// reference pieces whose concatenation must equal the token concatenation.
///
/// Returns, per token, the inclusive range of reference pieces the token's
/// characters fall in (None for empty tokens), or the character offset into
/// the reference text where the two streams disagree.
pub fn reconcile<S: AsRef<str>>(
    tokens: &[&str],
    pieces: &[S],
) -> Result<Vec<Option<(usize, usize)>>, usize> {
    let reference: Vec<char> = pieces.iter().flat_map(|p| p.as_ref().chars()).collect();
    let mut owner = Vec::with_capacity(reference.len());
    for (i, p) in pieces.iter().enumerate() {
        owner.extend(std::iter::repeat_n(i, p.as_ref().chars().count()));
    }
    let mut pos = 0;
    let mut out = Vec::with_capacity(tokens.len());
    for tok in tokens {
        let text: Vec<char> = tok.chars().collect();
        if text.is_empty() {
            out.push(None);
            continue;
        }
        let end = pos + text.len();
        if end > reference.len() || reference[pos..end] != text[..] {
            let mismatch = (pos..end.min(reference.len()))
                .zip(&text)
                .find(|(i, c)| reference[*i] != **c)
                .map_or(reference.len().min(end), |(i, _)| i);
            return Err(mismatch);
        }
        out.push(Some((owner[pos], owner[end - 1])));
        pos = end;
    }
    if pos != reference.len() {
        return Err(pos);
    }
    Ok(out)
}
