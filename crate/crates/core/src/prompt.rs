//! Prompt tokenization and double-quoted span scanning.

use std::ops::Range;

/// A token with its char offsets in the source prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Splits on whitespace; every punctuation or symbol char is its own token,
/// runs of anything else form a word.
pub fn tokenize(prompt: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut word: Option<(usize, String)> = None;
    let flush = |word: &mut Option<(usize, String)>, end: usize, out: &mut Vec<Token>| {
        if let Some((start, text)) = word.take() {
            out.push(Token { text, start, end });
        }
    };
    for (i, ch) in prompt.chars().enumerate() {
        if ch.is_whitespace() {
            flush(&mut word, i, &mut out);
        } else if is_punct(ch) {
            flush(&mut word, i, &mut out);
            out.push(Token {
                text: ch.to_string(),
                start: i,
                end: i + 1,
            });
        } else {
            word.get_or_insert_with(|| (i, String::new())).1.push(ch);
        }
    }
    flush(&mut word, prompt.chars().count(), &mut out);
    out
}

fn is_punct(ch: char) -> bool {
    ch.is_ascii_punctuation() || matches!(ch, '“' | '”' | '‘' | '’' | '，' | '。' | '、' | '：' | '；' | '！' | '？' | '「' | '」' | '《' | '》' | '（' | '）')
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QuoteError {
    #[error("unbalanced quote: span opened at char {0} is never closed")]
    Unclosed(usize),
    #[error("unbalanced quote: closing quote at char {0} has no opening quote")]
    StrayClose(usize),
    #[error("unbalanced quote: opening quote at char {0} inside an open span")]
    Nested(usize),
}

/// Char ranges strictly inside double-quoted spans. ASCII `"` toggles;
/// typographic `“` opens and `”` closes. Single quotes are ignored.
pub fn quoted_spans(prompt: &str) -> Result<Vec<Range<usize>>, QuoteError> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (i, ch) in prompt.chars().enumerate() {
        match (ch, open) {
            ('"', None) | ('“', None) => open = Some(i),
            ('"', Some(s)) | ('”', Some(s)) => {
                spans.push(s + 1..i);
                open = None;
            }
            ('”', None) => return Err(QuoteError::StrayClose(i)),
            ('“', Some(_)) => return Err(QuoteError::Nested(i)),
            _ => {}
        }
    }
    match open {
        Some(s) => Err(QuoteError::Unclosed(s)),
        None => Ok(spans),
    }
}

/// Positions (in `tokenize` order) of tokens lying inside quoted spans.
pub fn quoted_token_positions(prompt: &str) -> Result<Vec<usize>, QuoteError> {
    let spans = quoted_spans(prompt)?;
    Ok(tokenize(prompt)
        .iter()
        .enumerate()
        .filter(|(_, t)| spans.iter().any(|r| r.start <= t.start && t.end <= r.end))
        .map(|(i, _)| i)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(s: &str) -> Vec<String> {
        tokenize(s).into_iter().map(|t| t.text).collect()
    }

    #[test]
    fn splits_punctuation() {
        assert_eq!(texts(r#"say "hi there" now"#), ["say", "\"", "hi", "there", "\"", "now"]);
        assert_eq!(texts("E=mc²!"), ["E", "=", "mc²", "!"]);
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn spans_and_positions() {
        let p = r#"say "hi there" now"#;
        assert_eq!(quoted_spans(p).unwrap(), vec![5..13]);
        assert_eq!(quoted_token_positions(p).unwrap(), vec![2, 3]);
        assert_eq!(quoted_token_positions("no quotes").unwrap(), Vec::<usize>::new());
        assert_eq!(quoted_token_positions(r#""a" b "c""#).unwrap(), vec![1, 5]);
        assert_eq!(quoted_spans("“x” y").unwrap(), vec![1..2]);
    }

    #[test]
    fn unbalanced_reports_position() {
        assert_eq!(quoted_spans(r#"ab "cd"#), Err(QuoteError::Unclosed(3)));
        assert_eq!(quoted_spans("a ” b"), Err(QuoteError::StrayClose(2)));
        assert_eq!(quoted_spans("“a “b”"), Err(QuoteError::Nested(3)));
    }
}
