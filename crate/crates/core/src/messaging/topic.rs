//! Topic names and subscription filters.
//!
//! Topics are `/`-separated, non-empty segments without whitespace. A
//! subscription filter may end in a single multi-level wildcard segment `#`,
//! which matches one or more further segments. Publish topics never contain
//! wildcards.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LEVEL_SEPARATOR: char = '/';
pub const MULTI_LEVEL_WILDCARD: &str = "#";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopicError {
    #[error("topic is empty")]
    Empty,
    #[error("topic `{0}` has an empty segment")]
    EmptySegment(String),
    #[error("topic `{0}` contains whitespace")]
    Whitespace(String),
    #[error("topic `{0}` uses the wildcard outside a trailing filter segment")]
    MisplacedWildcard(String),
    #[error("segment `{0}` contains a level separator")]
    Separator(String),
}

/// Checks a single segment (also used for agent and correlation ids).
pub fn validate_segment(segment: &str) -> Result<(), TopicError> {
    if segment.is_empty() {
        return Err(TopicError::Empty);
    }
    if segment.contains(LEVEL_SEPARATOR) {
        return Err(TopicError::Separator(segment.to_string()));
    }
    if segment.chars().any(char::is_whitespace) {
        return Err(TopicError::Whitespace(segment.to_string()));
    }
    if segment == MULTI_LEVEL_WILDCARD {
        return Err(TopicError::MisplacedWildcard(segment.to_string()));
    }
    Ok(())
}

fn validate(raw: &str, allow_trailing_wildcard: bool) -> Result<(), TopicError> {
    if raw.is_empty() {
        return Err(TopicError::Empty);
    }
    if raw.chars().any(char::is_whitespace) {
        return Err(TopicError::Whitespace(raw.to_string()));
    }
    let segments: Vec<&str> = raw.split(LEVEL_SEPARATOR).collect();
    let last = segments.len() - 1;
    for (i, seg) in segments.iter().enumerate() {
        if seg.is_empty() {
            return Err(TopicError::EmptySegment(raw.to_string()));
        }
        if *seg == MULTI_LEVEL_WILDCARD && !(allow_trailing_wildcard && i == last) {
            return Err(TopicError::MisplacedWildcard(raw.to_string()));
        }
    }
    Ok(())
}

/// A concrete, wildcard-free topic that messages are published to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TopicName(Arc<str>);

impl TopicName {
    pub fn new(raw: impl AsRef<str>) -> Result<Self, TopicError> {
        let raw = raw.as_ref();
        validate(raw, false)?;
        Ok(Self(Arc::from(raw)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn segments(&self) -> impl Iterator<Item = &str> {
        self.0.split(LEVEL_SEPARATOR)
    }
}

impl fmt::Display for TopicName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for TopicName {
    type Error = TopicError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<TopicName> for String {
    fn from(t: TopicName) -> Self {
        t.0.to_string()
    }
}

impl std::str::FromStr for TopicName {
    type Err = TopicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

/// A subscription filter: either an exact topic or a prefix ending in `#`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TopicFilter(Arc<str>);

impl TopicFilter {
    pub fn new(raw: impl AsRef<str>) -> Result<Self, TopicError> {
        let raw = raw.as_ref();
        validate(raw, true)?;
        Ok(Self(Arc::from(raw)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_wildcard(&self) -> bool {
        self.0.ends_with(MULTI_LEVEL_WILDCARD)
    }

    /// The segments before the trailing `#`, joined; empty for the bare `#`.
    /// `None` for exact filters.
    pub fn wildcard_prefix(&self) -> Option<&str> {
        if !self.is_wildcard() {
            return None;
        }
        let without = &self.0[..self.0.len() - 1];
        Some(without.strip_suffix(LEVEL_SEPARATOR).unwrap_or(without))
    }
}

impl From<TopicName> for TopicFilter {
    fn from(t: TopicName) -> Self {
        Self(t.0)
    }
}

impl fmt::Display for TopicFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for TopicFilter {
    type Error = TopicError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<TopicFilter> for String {
    fn from(t: TopicFilter) -> Self {
        t.0.to_string()
    }
}

/// True iff `topic` is selected by `filter`: exact segment equality, or the
/// filter ends in `#` and every earlier filter segment equals the topic's
/// segment at that position, with at least one topic segment left for `#`.
pub fn match_filter(filter: &TopicFilter, topic: &TopicName) -> bool {
    let mut f = filter.0.split(LEVEL_SEPARATOR).peekable();
    let mut t = topic.0.split(LEVEL_SEPARATOR);
    loop {
        match (f.next(), t.next()) {
            (Some(MULTI_LEVEL_WILDCARD), Some(_)) if f.peek().is_none() => return true,
            (Some(fs), Some(ts)) if fs == ts => continue,
            (None, None) => return true,
            _ => return false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(s: &str) -> TopicFilter {
        TopicFilter::new(s).unwrap()
    }

    fn t(s: &str) -> TopicName {
        TopicName::new(s).unwrap()
    }

    #[test]
    fn exact_and_wildcard_matches() {
        assert!(match_filter(&f("a/b"), &t("a/b")));
        assert!(match_filter(&f("a/#"), &t("a/b/c")));
        assert!(!match_filter(&f("a/#"), &t("a")));
        assert!(!match_filter(&f("a/b"), &t("a/b/c")));
        assert!(!match_filter(&f("a/b/c"), &t("a/b")));
        assert!(match_filter(&f("#"), &t("x")));
    }

    #[test]
    fn grammar_rejections() {
        assert!(matches!(
            TopicFilter::new("svc req"),
            Err(TopicError::Whitespace(_))
        ));
        assert!(matches!(
            TopicName::new("a/#"),
            Err(TopicError::MisplacedWildcard(_))
        ));
        assert!(matches!(
            TopicFilter::new("#/a"),
            Err(TopicError::MisplacedWildcard(_))
        ));
        assert!(matches!(
            TopicName::new("a//b"),
            Err(TopicError::EmptySegment(_))
        ));
        assert!(matches!(TopicName::new(""), Err(TopicError::Empty)));
        assert!(matches!(
            TopicName::new("/a"),
            Err(TopicError::EmptySegment(_))
        ));
    }

    #[test]
    fn wildcard_prefix_extraction() {
        assert_eq!(f("svc/#").wildcard_prefix(), Some("svc"));
        assert_eq!(f("#").wildcard_prefix(), Some(""));
        assert_eq!(f("a/b").wildcard_prefix(), None);
    }

    /// Independent statement of the matching rule over segment vectors.
    fn rule(filter: &[&str], topic: &[&str]) -> bool {
        if filter.last() == Some(&"#") {
            let prefix = &filter[..filter.len() - 1];
            topic.len() > prefix.len() && topic[..prefix.len()] == *prefix
        } else {
            filter == topic
        }
    }

    #[test]
    fn enumerated_pairs_up_to_three_segments_agree_with_rule() {
        let alphabet = ["a", "b"];
        let mut topics: Vec<Vec<&str>> = Vec::new();
        for len in 1..=3 {
            let mut acc: Vec<Vec<&str>> = vec![vec![]];
            for _ in 0..len {
                acc = acc
                    .into_iter()
                    .flat_map(|p| {
                        alphabet.iter().map(move |s| {
                            let mut q = p.clone();
                            q.push(*s);
                            q
                        })
                    })
                    .collect();
            }
            topics.extend(acc);
        }
        let mut filters = topics.clone();
        for p in std::iter::once(vec![]).chain(topics.iter().filter(|t| t.len() < 3).cloned()) {
            let mut q = p.clone();
            q.push("#");
            filters.push(q);
        }
        let mut checked = 0;
        for fs in &filters {
            for ts in &topics {
                let filter = f(&fs.join("/"));
                let topic = t(&ts.join("/"));
                assert_eq!(
                    match_filter(&filter, &topic),
                    rule(fs, ts),
                    "filter {filter} topic {topic}"
                );
                checked += 1;
            }
        }
        assert_eq!(checked, filters.len() * topics.len());
    }
}
