//! Parser for `attr ('/' attr)*` with `attr := token | token '[' num ',' num ']'`.

use super::{Attribute, Interval, Predicate, PredicateError};
use crate::overlay::canonical_name;
use crate::scalar::Scalar;

/// Upper bound on attributes per predicate unless a caller picks another.
pub const DEFAULT_MAX_ATTRIBUTES: usize = 16;

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<char> {
        self.text[self.pos..].chars().next()
    }

    fn bump(&mut self) {
        if let Some(c) = self.peek() {
            self.pos += c.len_utf8();
        }
    }

    fn take_until(&mut self, stop: &[char]) -> (usize, &'a str) {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if stop.contains(&c) {
                break;
            }
            self.bump();
        }
        (start, &self.text[start..self.pos])
    }

    fn error(&self, pos: usize, msg: impl Into<String>) -> PredicateError {
        PredicateError::Syntax {
            pos,
            msg: msg.into(),
        }
    }
}

pub(super) fn parse<S: Scalar>(text: &str, max_attributes: usize) -> Result<Predicate<S>, PredicateError> {
    if text.trim().is_empty() {
        return Err(PredicateError::Syntax {
            pos: 0,
            msg: "empty predicate".into(),
        });
    }
    let mut cur = Cursor { text, pos: 0 };
    let mut attrs = Vec::new();
    loop {
        let (start, raw) = cur.take_until(&['/', '[', ']', ',']);
        let name = canonical_name(raw);
        if name.is_empty() {
            return Err(cur.error(start, "expected attribute name"));
        }
        match cur.peek() {
            Some('[') => {
                cur.bump();
                let (lo_pos, lo_raw) = cur.take_until(&[',', ']', '[']);
                if cur.peek() != Some(',') {
                    return Err(cur.error(cur.pos, "expected ',' inside range"));
                }
                cur.bump();
                let (hi_pos, hi_raw) = cur.take_until(&[',', ']', '[']);
                if cur.peek() != Some(']') {
                    return Err(cur.error(cur.pos, "expected ']' closing range"));
                }
                cur.bump();
                let lo = S::parse_literal(lo_raw)
                    .ok_or_else(|| cur.error(lo_pos, format!("bad number {:?}", lo_raw.trim())))?;
                let hi = S::parse_literal(hi_raw)
                    .ok_or_else(|| cur.error(hi_pos, format!("bad number {:?}", hi_raw.trim())))?;
                let interval = Interval::new(lo, hi)
                    .ok_or_else(|| PredicateError::InvalidRange { name: name.clone() })?;
                attrs.push(Attribute::Range { name, interval });
                // Only whitespace may sit between ']' and the next separator.
                let (ws_pos, trailing) = cur.take_until(&['/', '[', ']', ',']);
                if !trailing.trim().is_empty() {
                    return Err(cur.error(ws_pos, "unexpected text after range"));
                }
            }
            _ => attrs.push(Attribute::Topic(name)),
        }
        match cur.peek() {
            None => break,
            Some('/') => cur.bump(),
            Some(c) => return Err(cur.error(cur.pos, format!("unexpected {c:?}"))),
        }
    }
    if attrs.len() > max_attributes {
        return Err(PredicateError::TooManyAttributes {
            count: attrs.len(),
            max: max_attributes,
        });
    }
    Predicate::new(attrs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rational;

    type P = Predicate<Rational>;

    fn r(v: i64) -> Rational {
        Rational::from_integer(v)
    }

    #[test]
    fn group_notation() {
        let p = P::parse("apple/france/price[0,1]").unwrap();
        assert!(p.has_topic("apple"));
        assert!(p.has_topic("france"));
        assert_eq!(p.range("price"), Interval::new(r(0), r(1)).as_ref());
        assert_eq!(p.len(), 3);
    }

    #[test]
    fn single_topic() {
        let p = P::parse("football").unwrap();
        assert_eq!(p.topics().collect::<Vec<_>>(), vec!["football"]);
        assert_eq!(p.ranges().count(), 0);
    }

    #[test]
    fn canonicalizes_tokens() {
        let p = P::parse(" Football / Tom Brady ").unwrap();
        assert_eq!(p.to_string(), "football/tom-brady");
        let q = P::parse("Price [ 0 , 1 ]").unwrap();
        assert_eq!(q.to_string(), "price[0,1]");
    }

    #[test]
    fn errors() {
        assert!(matches!(P::parse("price[3,1]"), Err(PredicateError::InvalidRange { .. })));
        assert!(matches!(P::parse("a/a"), Err(PredicateError::DuplicateAttribute { .. })));
        assert!(matches!(
            P::parse("p[0,1]/p[2,3]"),
            Err(PredicateError::DuplicateAttribute { .. })
        ));
        assert!(matches!(P::parse(""), Err(PredicateError::Syntax { pos: 0, .. })));
        assert!(matches!(P::parse("a//b"), Err(PredicateError::Syntax { pos: 2, .. })));
        assert!(matches!(P::parse("a/"), Err(PredicateError::Syntax { pos: 2, .. })));
        assert!(matches!(P::parse("p[0 1]"), Err(PredicateError::Syntax { .. })));
        assert!(matches!(P::parse("p[x,1]"), Err(PredicateError::Syntax { pos: 2, .. })));
        assert!(matches!(P::parse("p[0,1]x"), Err(PredicateError::Syntax { .. })));
        assert!(matches!(P::parse("a]b"), Err(PredicateError::Syntax { pos: 1, .. })));
    }

    #[test]
    fn attribute_limit() {
        let text = (0..17).map(|i| format!("t{i}")).collect::<Vec<_>>().join("/");
        assert!(matches!(
            P::parse(&text),
            Err(PredicateError::TooManyAttributes { count: 17, max: 16 })
        ));
        assert!(P::parse_with_limit(&text, 20).is_ok());
    }

    #[test]
    fn fractions_inside_brackets() {
        let p = P::parse("price[1/2,3/2]/apple").unwrap();
        assert_eq!(p.range("price").unwrap().lo(), &Rational::new(1, 2));
        assert_eq!(p.to_string(), "apple/price[1/2,3/2]");
        let f = Predicate::<f64>::parse("price[0.5,1e1]").unwrap();
        assert_eq!(f.range("price").unwrap().hi(), &10.0);
    }
}
