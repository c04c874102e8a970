//! Tag canonicalization, edit distance and fuzzy-eligibility rules.
//!
//! Everything that decides whether two tags "look the same" goes through this
//! module: the canonical key collapses case, accents and separator noise, and
//! the Levenshtein distance over canonical keys drives the fuzzy tier.

use std::fmt;

use serde::Serialize;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

/// Minimum canonical length (in Unicode scalars) for a tag to take part in
/// fuzzy matching.
pub const FUZZY_MIN_LEN: usize = 4;

/// Lowercase, unaccented, hyphen-separated comparison form of a tag.
///
/// Only [`canonicalize`] produces values of this type, so a key is always a
/// fixed point of canonicalization.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize)]
#[serde(transparent)]
pub struct CanonicalKey(String);

impl CanonicalKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Length in Unicode scalar values.
    pub fn char_len(&self) -> usize {
        self.0.chars().count()
    }

    pub fn has_digit(&self) -> bool {
        self.0.chars().any(char::is_numeric)
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for CanonicalKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for CanonicalKey {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Computes the canonical comparison key of a raw tag.
///
/// Steps: compatibility decomposition (NFKD), removal of combining marks,
/// lowercasing, then every maximal run of non-alphanumeric characters becomes
/// a single hyphen and leading/trailing hyphens are dropped. Letters from
/// non-Latin scripts are kept (minus their marks); nothing is transliterated.
pub fn canonicalize(raw: &str) -> CanonicalKey {
    let folded = fold(raw);
    let mut out = String::with_capacity(folded.len());
    let mut pending_sep = false;
    for c in folded.chars() {
        if c.is_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('-');
            }
            pending_sep = false;
            out.push(c);
        } else {
            pending_sep = true;
        }
    }
    CanonicalKey(out)
}

// Lowercasing can expose new decomposable characters (and vice versa), so
// the fold runs until it stops changing. Two rounds suffice in practice.
fn fold(raw: &str) -> String {
    let mut current = fold_once(raw);
    for _ in 0..4 {
        let next = fold_once(&current);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

fn fold_once(s: &str) -> String {
    s.nfkd()
        .filter(|c| !is_combining_mark(*c))
        .flat_map(char::to_lowercase)
        .collect()
}

/// Unit-cost Levenshtein distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_chars(&a, &b)
}

pub(crate) fn levenshtein_chars(a: &[char], b: &[char]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Levenshtein distance if it is at most `max`, otherwise `None`.
///
/// Only the diagonal band of width `2 * max + 1` is evaluated, so the cost is
/// `O(max * min(len))` instead of the full quadratic table.
pub fn levenshtein_within(a: &[char], b: &[char], max: usize) -> Option<usize> {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    if a.len() - b.len() > max {
        return None;
    }
    if b.is_empty() {
        return Some(a.len());
    }
    const INF: usize = usize::MAX / 2;
    let width = b.len() + 1;
    let mut prev = vec![INF; width];
    let mut cur = vec![INF; width];
    for (j, cell) in prev.iter_mut().enumerate().take(max.min(b.len()) + 1) {
        *cell = j;
    }
    for i in 1..=a.len() {
        let lo = i.saturating_sub(max);
        let hi = (i + max).min(b.len());
        cur.iter_mut().for_each(|c| *c = INF);
        if lo == 0 {
            cur[0] = i;
        }
        let mut row_min = cur[0];
        for j in lo.max(1)..=hi {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            let v = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
            cur[j] = v;
            row_min = row_min.min(v);
        }
        if row_min > max {
            return None;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let d = prev[b.len()];
    (d <= max).then_some(d)
}

/// Whether a canonical key may take part in fuzzy (edit-distance or
/// semantic) matching: no digits and at least [`FUZZY_MIN_LEN`] scalars.
pub fn fuzzy_eligible(key: &CanonicalKey) -> bool {
    !key.has_digit() && key.char_len() >= FUZZY_MIN_LEN
}
