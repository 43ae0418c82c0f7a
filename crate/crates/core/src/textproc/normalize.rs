use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::TextprocError;

/// Tweet normalization knobs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizeOptions {
    pub user_token: String,
    pub url_token: String,
    pub max_char_repeat: usize,
    pub lowercase: bool,
}

impl Default for NormalizeOptions {
    fn default() -> Self {
        NormalizeOptions {
            user_token: "@USER".to_string(),
            url_token: "HTTPURL".to_string(),
            max_char_repeat: 3,
            lowercase: false,
        }
    }
}

impl NormalizeOptions {
    pub fn validate(&self) -> Result<(), TextprocError> {
        for (name, tok) in [("user_token", &self.user_token), ("url_token", &self.url_token)] {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(TextprocError::InvalidOptions(format!(
                    "{name} must be non-empty and contain no whitespace"
                )));
            }
        }
        if self.max_char_repeat == 0 {
            return Err(TextprocError::InvalidOptions(
                "max_char_repeat must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

fn url_or_mention() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)(https?://\S+)|(@\w+)").unwrap())
}

enum Piece<'a> {
    Free(&'a str),
    Placeholder(&'a str),
}

/// Replaces user mentions and URLs with placeholder tokens, squeezes
/// character runs, collapses whitespace and optionally lowercases.
///
/// Placeholder tokens already present in the input are left untouched, so the
/// function is idempotent.
pub fn normalize_tweet(text: &str, opts: &NormalizeOptions) -> String {
    let mut current = normalize_pass(text, opts);
    // Squeezing can expose a new URL ("htttps://" with max_char_repeat 2), so
    // iterate to a fixed point.
    for _ in 0..8 {
        let next = normalize_pass(&current, opts);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

fn normalize_pass(text: &str, opts: &NormalizeOptions) -> String {
    let mut out = String::with_capacity(text.len());
    for piece in split_pieces(text, opts) {
        match piece {
            Piece::Placeholder(tok) => out.push_str(tok),
            Piece::Free(seg) => {
                if opts.lowercase {
                    squeeze_into(&seg.to_lowercase(), opts.max_char_repeat, &mut out);
                } else {
                    squeeze_into(seg, opts.max_char_repeat, &mut out);
                }
            }
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn split_pieces<'a>(text: &'a str, opts: &'a NormalizeOptions) -> Vec<Piece<'a>> {
    let mut pieces = Vec::new();
    let mut pos = 0;
    while pos < text.len() {
        let rest = &text[pos..];
        let found = [&opts.url_token, &opts.user_token]
            .into_iter()
            .filter_map(|tok| rest.find(tok.as_str()).map(|at| (at, tok.len(), tok.as_str())))
            .chain(
                url_or_mention()
                    .captures(rest)
                    .map(|c| {
                        let m = c.get(0).unwrap();
                        let tok = if c.get(1).is_some() {
                            opts.url_token.as_str()
                        } else {
                            opts.user_token.as_str()
                        };
                        (m.start(), m.len(), tok)
                    }),
            )
            // earliest start; on ties prefer the longer span, then literal tokens
            .min_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
        match found {
            Some((at, len, tok)) => {
                if at > 0 {
                    pieces.push(Piece::Free(&rest[..at]));
                }
                pieces.push(Piece::Placeholder(tok));
                pos += at + len;
            }
            None => {
                pieces.push(Piece::Free(rest));
                break;
            }
        }
    }
    pieces
}

fn squeeze_into(seg: &str, max_repeat: usize, out: &mut String) {
    let mut prev: Option<char> = None;
    let mut run = 0;
    for ch in seg.chars() {
        if Some(ch) == prev {
            run += 1;
        } else {
            prev = Some(ch);
            run = 1;
        }
        if run <= max_repeat {
            out.push(ch);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn norm(s: &str) -> String {
        normalize_tweet(s, &NormalizeOptions::default())
    }

    #[test]
    fn empty() {
        assert_eq!(norm(""), "");
        assert_eq!(norm("   \t\n "), "");
    }

    #[test]
    fn mentions_and_urls() {
        assert_eq!(norm("@john check https://t.co/ab"), "@USER check HTTPURL");
        assert_eq!(norm("RT @ana_b: mira http://x.co/1?a=b!"), "RT @USER: mira HTTPURL");
        assert_eq!(norm("HTTPS://T.CO/X"), "HTTPURL");
    }

    #[test]
    fn char_runs_and_whitespace() {
        assert_eq!(norm("soooooo  cool"), "sooo cool");
        let opts = NormalizeOptions {
            max_char_repeat: 1,
            ..Default::default()
        };
        assert_eq!(normalize_tweet("aaa bb", &opts), "a b");
    }

    #[test]
    fn hashtags_kept() {
        assert_eq!(norm("#FelizLunes a todos"), "#FelizLunes a todos");
    }

    #[test]
    fn lowercase_keeps_placeholders() {
        let opts = NormalizeOptions {
            lowercase: true,
            ..Default::default()
        };
        assert_eq!(normalize_tweet("Hola @Pepe MIRA https://a.b", &opts), "hola @USER mira HTTPURL");
        assert_eq!(normalize_tweet("HTTPURL @USER", &opts), "HTTPURL @USER");
    }

    #[test]
    fn options_validation() {
        assert!(NormalizeOptions::default().validate().is_ok());
        let bad = NormalizeOptions {
            url_token: "a b".into(),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = NormalizeOptions {
            max_char_repeat: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn idempotent(
            text in r"[a-zA-Z@:/. #_\t\nhtps]{0,40}",
            max_rep in 1usize..4,
            lowercase in any::<bool>(),
        ) {
            let opts = NormalizeOptions { max_char_repeat: max_rep, lowercase, ..Default::default() };
            let once = normalize_tweet(&text, &opts);
            prop_assert_eq!(normalize_tweet(&once, &opts), once);
        }

        #[test]
        fn idempotent_unicode(text in "\\PC{0,30}") {
            let opts = NormalizeOptions::default();
            let once = normalize_tweet(&text, &opts);
            prop_assert_eq!(normalize_tweet(&once, &opts), once.clone());
            prop_assert!(!once.starts_with(' ') && !once.ends_with(' '));
            prop_assert!(!once.contains("  "));
        }
    }
}
