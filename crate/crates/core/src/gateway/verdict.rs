//! Structured verdict protocol and its tolerant parser.

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Category {
    Confirmed,
    Uncertain,
    Normal,
    Skipped,
}

impl Category {
    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Confirmed => "CONFIRMED",
            Category::Uncertain => "UNCERTAIN",
            Category::Normal => "NORMAL",
            Category::Skipped => "SKIPPED",
        }
    }

    /// Midpoint of the category's confidence band, used when a response
    /// names a category without a number.
    pub fn band_midpoint(&self) -> u8 {
        match self {
            Category::Confirmed => 85,
            Category::Uncertain => 50,
            Category::Normal => 15,
            Category::Skipped => 0,
        }
    }

    /// Whether this verdict raises an alert.
    pub fn alerts(&self) -> bool {
        matches!(self, Category::Confirmed | Category::Uncertain)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "CONFIRMED" => Ok(Category::Confirmed),
            "UNCERTAIN" => Ok(Category::Uncertain),
            "NORMAL" => Ok(Category::Normal),
            "SKIPPED" => Ok(Category::Skipped),
            other => Err(format!("unknown category {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub category: Category,
    pub confidence: u8,
    pub description: String,
    pub raw: String,
    pub latency_ms: u64,
}

impl Verdict {
    /// Returned instead of a call when the rate limiter denies it.
    pub fn skipped() -> Self {
        Verdict {
            category: Category::Skipped,
            confidence: 0,
            description: String::new(),
            raw: String::new(),
            latency_ms: 0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("no verdict category in response: {snippet:?}")]
pub struct VerdictParseError {
    pub snippet: String,
}

static STRUCTURED: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?im)^[\s*#>_-]*(?:verdict[\s*_]*[:=-][\s*_]*)?(CONFIRMED|UNCERTAIN|NORMAL)\b[*_]*|verdict[\s*_]*[:=-][\s*_]*(CONFIRMED|UNCERTAIN|NORMAL)\b[*_]*",
    )
    .unwrap()
});

static CONFIDENCE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)[*_]*confidence[*_]*(?:\s*(?:score|level))?[\s*_]*[:=]?[\s*_]*(?:of\s+)?(\d{1,9})(?:\.\d+)?\s*%?")
        .unwrap()
});

static KEYWORD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(CONFIRMED|UNCERTAIN|NORMAL)\b").unwrap());

fn pick(found: impl Iterator<Item = Category>) -> Option<Category> {
    // Enum order is the precedence order.
    found.min()
}

fn category_of(s: &str) -> Category {
    s.parse().expect("regex only matches known categories")
}

fn clean_description(text: &str) -> String {
    text.lines()
        .map(|l| l.trim().trim_matches(|c: char| c.is_whitespace() || "*_#>-:".contains(c)))
        .map(|l| l.strip_prefix("Description").or_else(|| l.strip_prefix("description")).unwrap_or(l))
        .map(|l| l.trim_start_matches([':', ' ', '*']).trim())
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parses a free-form model response.
///
/// Structured pass: a line-leading (or `verdict:`-prefixed) category token
/// plus `confidence <int>`, clamped to 0..=100; the description is the rest
/// of the text. Fallback: any category keyword anywhere, with the band
/// midpoint when no confidence is given. Ties resolve
/// CONFIRMED > UNCERTAIN > NORMAL.
pub fn parse_verdict(text: &str) -> Result<Verdict, VerdictParseError> {
    let confidence = CONFIDENCE.captures(text).map(|c| {
        let v: u64 = c[1].parse().unwrap_or(u64::MAX);
        v.min(100) as u8
    });

    let structured: Vec<(std::ops::Range<usize>, Category)> = STRUCTURED
        .captures_iter(text)
        .map(|c| {
            let m = c.get(1).or_else(|| c.get(2)).unwrap();
            (c.get(0).unwrap().range(), category_of(m.as_str()))
        })
        .collect();

    if let Some(category) = pick(structured.iter().map(|(_, c)| *c)) {
        let mut rest = String::with_capacity(text.len());
        let mut cuts: Vec<std::ops::Range<usize>> = structured.into_iter().map(|(r, _)| r).collect();
        if let Some(c) = CONFIDENCE.find(text) {
            cuts.push(c.range());
        }
        cuts.sort_by_key(|r| r.start);
        let mut pos = 0;
        for r in cuts {
            if r.start >= pos {
                rest.push_str(&text[pos..r.start]);
                pos = r.end;
            } else {
                pos = pos.max(r.end);
            }
        }
        rest.push_str(&text[pos..]);
        return Ok(Verdict {
            category,
            confidence: confidence.unwrap_or_else(|| category.band_midpoint()),
            description: clean_description(&rest),
            raw: text.to_string(),
            latency_ms: 0,
        });
    }

    match pick(KEYWORD.captures_iter(text).map(|c| category_of(&c[1]))) {
        Some(category) => Ok(Verdict {
            category,
            confidence: confidence.unwrap_or_else(|| category.band_midpoint()),
            description: text.trim().to_string(),
            raw: text.to_string(),
            latency_ms: 0,
        }),
        None => Err(VerdictParseError { snippet: text.chars().take(80).collect() }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structured_response() {
        let v = parse_verdict("CONFIRMED\nConfidence: 85\nPerson places bottle into jacket pocket").unwrap();
        assert_eq!(v.category, Category::Confirmed);
        assert_eq!(v.confidence, 85);
        assert_eq!(v.description, "Person places bottle into jacket pocket");
    }

    #[test]
    fn fallback_keyword() {
        let text = "I believe this is normal shopping behavior.";
        let v = parse_verdict(text).unwrap();
        assert_eq!((v.category, v.confidence), (Category::Normal, 15));
        assert_eq!(v.description, text);
    }

    #[test]
    fn unparseable() {
        assert!(parse_verdict("The weather is nice.").is_err());
        assert!(parse_verdict("").is_err());
    }

    #[test]
    fn confidence_is_clamped() {
        let v = parse_verdict("UNCERTAIN\nconfidence 250").unwrap();
        assert_eq!(v.confidence, 100);
    }

    #[test]
    fn skipped_shape() {
        let s = Verdict::skipped();
        assert_eq!((s.category, s.confidence, s.description.as_str()), (Category::Skipped, 0, ""));
    }
}
