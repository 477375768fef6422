//! Content expressions shared by both protocols.
//!
//! A [`Predicate`] is a conjunction of topic attributes (`football`) and
//! closed numeric ranges (`price[0,1]`). Subscriptions use ranges; events
//! carry point values (`lo == hi`) and are wrapped in [`EventPredicate`].
//! The textual form `apple/france/price[0,1]` is both the parse input and
//! the canonical serialization.

mod algebra;
mod parse;

pub use algebra::{covers, filter_set_insert, matches, try_merge, FilterSet};
pub use parse::DEFAULT_MAX_ATTRIBUTES;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::overlay::canonical_name;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PredicateError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("range {name} has lo > hi")]
    InvalidRange { name: String },
    #[error("attribute {name} given twice")]
    DuplicateAttribute { name: String },
    #[error("predicate has no attributes")]
    Empty,
    #[error("predicate has {count} attributes, limit is {max}")]
    TooManyAttributes { count: usize, max: usize },
    #[error("event range {name} is not a point value")]
    NotAPoint { name: String },
}

/// Closed interval `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Interval<S> {
    lo: S,
    hi: S,
}

impl<S: Scalar> Interval<S> {
    pub fn new(lo: S, hi: S) -> Option<Self> {
        (lo <= hi).then_some(Interval { lo, hi })
    }

    pub fn point(v: S) -> Self {
        Interval { lo: v.clone(), hi: v }
    }

    pub fn lo(&self) -> &S {
        &self.lo
    }

    pub fn hi(&self) -> &S {
        &self.hi
    }

    pub fn contains(&self, v: &S) -> bool {
        self.lo <= *v && *v <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval<S>) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    /// True when the two closed intervals share at least one point.
    pub fn overlaps(&self, other: &Interval<S>) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    /// Smallest interval containing both; exact union when they overlap.
    pub fn hull(&self, other: &Interval<S>) -> Interval<S> {
        Interval {
            lo: S::min_of(self.lo.clone(), other.lo.clone()),
            hi: S::max_of(self.hi.clone(), other.hi.clone()),
        }
    }
}

/// One attribute of a predicate.
#[derive(Clone, Debug, PartialEq)]
pub enum Attribute<S> {
    Topic(String),
    Range { name: String, interval: Interval<S> },
}

impl<S: Scalar> Attribute<S> {
    pub fn topic(name: &str) -> Self {
        Attribute::Topic(canonical_name(name))
    }

    pub fn range(name: &str, lo: S, hi: S) -> Result<Self, PredicateError> {
        let name = canonical_name(name);
        let interval = Interval::new(lo, hi).ok_or_else(|| PredicateError::InvalidRange {
            name: name.clone(),
        })?;
        Ok(Attribute::Range { name, interval })
    }

    pub fn name(&self) -> &str {
        match self {
            Attribute::Topic(n) => n,
            Attribute::Range { name, .. } => name,
        }
    }
}

/// Conjunction of attributes, at most one per (kind, name).
///
/// Topics and ranges live in ordered maps, so two equal predicates always
/// serialize to the same text.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Predicate<S> {
    topics: BTreeSet<String>,
    ranges: BTreeMap<String, Interval<S>>,
}

impl<S: Scalar> Predicate<S> {
    pub fn new<I>(attributes: I) -> Result<Self, PredicateError>
    where
        I: IntoIterator<Item = Attribute<S>>,
    {
        let mut topics = BTreeSet::new();
        let mut ranges = BTreeMap::new();
        for attr in attributes {
            match attr {
                Attribute::Topic(name) => {
                    check_name(&name)?;
                    if !topics.insert(name.clone()) {
                        return Err(PredicateError::DuplicateAttribute { name });
                    }
                }
                Attribute::Range { name, interval } => {
                    check_name(&name)?;
                    if ranges.insert(name.clone(), interval).is_some() {
                        return Err(PredicateError::DuplicateAttribute { name });
                    }
                }
            }
        }
        if topics.is_empty() && ranges.is_empty() {
            return Err(PredicateError::Empty);
        }
        Ok(Predicate { topics, ranges })
    }

    pub fn parse(text: &str) -> Result<Self, PredicateError> {
        parse::parse(text, DEFAULT_MAX_ATTRIBUTES)
    }

    pub fn parse_with_limit(text: &str, max_attributes: usize) -> Result<Self, PredicateError> {
        parse::parse(text, max_attributes)
    }

    pub fn topics(&self) -> impl Iterator<Item = &str> {
        self.topics.iter().map(String::as_str)
    }

    pub fn ranges(&self) -> impl Iterator<Item = (&str, &Interval<S>)> {
        self.ranges.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn has_topic(&self, name: &str) -> bool {
        self.topics.contains(name)
    }

    pub fn range(&self, name: &str) -> Option<&Interval<S>> {
        self.ranges.get(name)
    }

    pub fn len(&self) -> usize {
        self.topics.len() + self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Distinct attribute names; these are the rendezvous points of the
    /// predicate. A topic and a range sharing a name count once.
    pub fn attribute_names(&self) -> BTreeSet<&str> {
        self.topics
            .iter()
            .chain(self.ranges.keys())
            .map(String::as_str)
            .collect()
    }

    pub fn attributes(&self) -> Vec<Attribute<S>> {
        self.topics
            .iter()
            .map(|t| Attribute::Topic(t.clone()))
            .chain(self.ranges.iter().map(|(n, i)| Attribute::Range {
                name: n.clone(),
                interval: i.clone(),
            }))
            .collect()
    }

    /// True if every attribute name used here also appears in `other`.
    pub fn names_within(&self, other: &Predicate<S>) -> bool {
        self.topics.iter().all(|t| other.topics.contains(t))
            && self.ranges.keys().all(|r| other.ranges.contains_key(r))
    }

    pub(crate) fn with_range(&self, name: &str, interval: Interval<S>) -> Self {
        let mut p = self.clone();
        p.ranges.insert(name.to_string(), interval);
        p
    }

    pub(crate) fn topic_set(&self) -> &BTreeSet<String> {
        &self.topics
    }

    pub(crate) fn range_map(&self) -> &BTreeMap<String, Interval<S>> {
        &self.ranges
    }
}

fn check_name(name: &str) -> Result<(), PredicateError> {
    if name.is_empty() || name.contains(['/', '[', ']', ',']) {
        return Err(PredicateError::Syntax {
            pos: 0,
            msg: format!("invalid attribute name {name:?}"),
        });
    }
    Ok(())
}

impl<S: Scalar> fmt::Display for Predicate<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for t in &self.topics {
            if !first {
                f.write_str("/")?;
            }
            first = false;
            f.write_str(t)?;
        }
        for (name, i) in &self.ranges {
            if !first {
                f.write_str("/")?;
            }
            first = false;
            write!(f, "{name}[{},{}]", i.lo.format_literal(), i.hi.format_literal())?;
        }
        Ok(())
    }
}

impl<S: Scalar> std::str::FromStr for Predicate<S> {
    type Err = PredicateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Predicate::parse(s)
    }
}

impl<S: Scalar> Serialize for Predicate<S> {
    fn serialize<Ser: Serializer>(&self, s: Ser) -> Result<Ser::Ok, Ser::Error> {
        s.collect_str(self)
    }
}

impl<'de, S: Scalar> Deserialize<'de> for Predicate<S> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Predicate::parse(&text).map_err(serde::de::Error::custom)
    }
}

/// Predicate attached to a published event: every range is a point value.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EventPredicate<S>(Predicate<S>);

impl<S: Scalar> EventPredicate<S> {
    pub fn new(p: Predicate<S>) -> Result<Self, PredicateError> {
        if let Some((name, _)) = p.ranges.iter().find(|(_, i)| !i.is_point()) {
            return Err(PredicateError::NotAPoint { name: name.clone() });
        }
        Ok(EventPredicate(p))
    }

    pub fn parse(text: &str) -> Result<Self, PredicateError> {
        Self::new(Predicate::parse(text)?)
    }

    pub fn predicate(&self) -> &Predicate<S> {
        &self.0
    }

    /// Point value of the named numeric attribute, if present.
    pub fn value(&self, name: &str) -> Option<&S> {
        self.0.ranges.get(name).map(|i| &i.lo)
    }
}

impl<S: Scalar> fmt::Display for EventPredicate<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl<S: Scalar> Serialize for EventPredicate<S> {
    fn serialize<Ser: Serializer>(&self, s: Ser) -> Result<Ser::Ok, Ser::Error> {
        self.0.serialize(s)
    }
}

impl<'de, S: Scalar> Deserialize<'de> for EventPredicate<S> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let p = Predicate::deserialize(d)?;
        EventPredicate::new(p).map_err(serde::de::Error::custom)
    }
}
