//! Coding functions mapping chain states to bits.
//!
//! Every coding fixes `0 -> 0`, `1 -> 0` and `even s >= 2 -> 1`. Odd states
//! `>= 3` default to `1` and may be overridden by a finite set of exceptions.
//! This sparse form represents the base coding, every adversarial level and
//! any finite truncation of their limit exactly.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{ChainPath, ChainState};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodingError {
    #[error("exception state {0} is not an odd state >= 3")]
    BadExceptionState(u64),
    #[error("exception bit {0} is not 0 or 1")]
    BadBit(u8),
    #[error("exception states must be strictly increasing (saw {0} after {1})")]
    UnsortedExceptions(u64, u64),
    #[error("default_odd must be 1, got {0}")]
    BadDefault(u8),
    #[error("bits must start with 0,0,1 (a block beginning at state 0)")]
    NotAResetBlock,
    #[error("no legal path emits these bits (first failure at position {0})")]
    Undecodable(usize),
    #[error("invalid bit character {0:?}")]
    BadBitChar(char),
}

/// A finite binary sequence.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct BitString(pub Vec<u8>);

impl BitString {
    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }
}

impl std::ops::Deref for BitString {
    type Target = [u8];
    fn deref(&self) -> &[u8] {
        &self.0
    }
}

impl From<Vec<u8>> for BitString {
    fn from(v: Vec<u8>) -> Self {
        BitString(v)
    }
}

impl FromStr for BitString {
    type Err = CodingError;

    /// Parses `"0010"`; commas and whitespace are ignored.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.chars()
            .filter(|c| !c.is_whitespace() && *c != ',')
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(CodingError::BadBitChar(other)),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(BitString)
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CodingFile", into = "CodingFile")]
pub struct CodingFunction {
    exceptions: BTreeMap<u64, u8>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CodingFile {
    default_odd: u8,
    exceptions: Vec<ExceptionEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExceptionEntry {
    state: u64,
    bit: u8,
}

impl TryFrom<CodingFile> for CodingFunction {
    type Error = CodingError;

    fn try_from(file: CodingFile) -> Result<Self, Self::Error> {
        if file.default_odd != 1 {
            return Err(CodingError::BadDefault(file.default_odd));
        }
        let mut f = CodingFunction::default();
        let mut prev: Option<u64> = None;
        for e in file.exceptions {
            if let Some(p) = prev {
                if e.state <= p {
                    return Err(CodingError::UnsortedExceptions(e.state, p));
                }
            }
            prev = Some(e.state);
            f.set_exception(e.state, e.bit)?;
        }
        Ok(f)
    }
}

impl From<CodingFunction> for CodingFile {
    fn from(f: CodingFunction) -> Self {
        CodingFile {
            default_odd: 1,
            exceptions: f
                .exceptions
                .into_iter()
                .map(|(state, bit)| ExceptionEntry { state, bit })
                .collect(),
        }
    }
}

/// The base coding: no exceptions.
pub fn base_coding() -> CodingFunction {
    CodingFunction::default()
}

impl CodingFunction {
    pub fn with_exceptions<I: IntoIterator<Item = (u64, u8)>>(
        exceptions: I,
    ) -> Result<Self, CodingError> {
        let mut f = CodingFunction::default();
        for (s, b) in exceptions {
            f.set_exception(s, b)?;
        }
        Ok(f)
    }

    pub fn set_exception(&mut self, state: u64, bit: u8) -> Result<(), CodingError> {
        if state < 3 || state.is_multiple_of(2) {
            return Err(CodingError::BadExceptionState(state));
        }
        if bit > 1 {
            return Err(CodingError::BadBit(bit));
        }
        self.exceptions.insert(state, bit);
        Ok(())
    }

    pub fn exceptions(&self) -> impl Iterator<Item = (u64, u8)> + '_ {
        self.exceptions.iter().map(|(&s, &b)| (s, b))
    }

    /// Odd states mapped to 0, ascending.
    pub fn zero_states(&self) -> impl Iterator<Item = u64> + '_ {
        self.exceptions().filter(|&(_, b)| b == 0).map(|(s, _)| s)
    }

    pub fn max_zero_state(&self) -> Option<u64> {
        self.zero_states().last()
    }

    pub fn apply(&self, s: ChainState) -> u8 {
        match s.0 {
            0 | 1 => 0,
            v if v.is_multiple_of(2) => 1,
            v => self.exceptions.get(&v).copied().unwrap_or(1),
        }
    }

    pub fn encode(&self, path: &ChainPath) -> BitString {
        BitString(path.states().iter().map(|&s| self.apply(s)).collect())
    }

    /// Upper bound on the Markov order of the coded process: one past the
    /// largest zero-valued exception, or 3 when there is none.
    pub fn order_bound(&self) -> usize {
        match self.max_zero_state() {
            Some(s) => (s + 1) as usize,
            None => 3,
        }
    }

    /// Decode a block that starts at state 0 back to the hidden path.
    pub fn invert(&self, bits: &[u8]) -> Result<Decoded, CodingError> {
        if bits.len() < 3 || bits[..3] != [0, 0, 1] {
            return Err(CodingError::NotAResetBlock);
        }
        let mut candidates: Vec<Vec<u64>> = vec![vec![0]];
        for (i, &bit) in bits.iter().enumerate().skip(1) {
            let mut next = Vec::with_capacity(candidates.len() + 1);
            for cand in candidates {
                let last = *cand.last().expect("candidate paths are non-empty");
                for succ in successors(last) {
                    if self.apply(ChainState(succ)) == bit {
                        let mut c = cand.clone();
                        c.push(succ);
                        next.push(c);
                    }
                }
            }
            if next.is_empty() {
                return Err(CodingError::Undecodable(i));
            }
            candidates = next;
        }
        let mut paths: Vec<ChainPath> = candidates
            .into_iter()
            .map(|c| ChainPath::from_values(&c).expect("decoder only emits legal transitions"))
            .collect();
        if paths.len() == 1 {
            Ok(Decoded::Unique(paths.pop().unwrap()))
        } else {
            Ok(Decoded::Ambiguous(paths))
        }
    }
}

fn successors(s: u64) -> impl Iterator<Item = u64> {
    let (a, b) = match s {
        0 => (1, None),
        1 => (2, None),
        v => (0, Some(v + 1)),
    };
    std::iter::once(a).chain(b)
}

/// Result of [`CodingFunction::invert`].
#[derive(Clone, Debug, PartialEq)]
pub enum Decoded {
    Unique(ChainPath),
    /// The trailing bits end inside an unresolved lookahead window.
    Ambiguous(Vec<ChainPath>),
}

impl Decoded {
    pub fn unique(self) -> Option<ChainPath> {
        match self {
            Decoded::Unique(p) => Some(p),
            Decoded::Ambiguous(_) => None,
        }
    }
}

/// Position of the `1` in the latest `0,0,1` window, if any.
pub fn last_reset_index(bits: &[u8]) -> Option<usize> {
    bits.windows(3).rposition(|w| w == [0, 0, 1]).map(|i| i + 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::enumerate_paths_to_hit;

    fn path(v: &[u64]) -> ChainPath {
        ChainPath::from_values(v).unwrap()
    }

    fn bits(s: &str) -> BitString {
        s.parse().unwrap()
    }

    #[test]
    fn fixed_part_and_defaults() {
        let f0 = base_coding();
        assert_eq!(f0.apply(ChainState(3)), 1);
        assert_eq!(f0.apply(ChainState(0)), 0);
        assert_eq!(f0.apply(ChainState(1)), 0);
        assert_eq!(f0.apply(ChainState(4)), 1);
        let f = CodingFunction::with_exceptions([(5, 0)]).unwrap();
        assert_eq!(f.apply(ChainState(5)), 0);
        assert_eq!(f.apply(ChainState(7)), 1);
        assert_eq!(f.apply(ChainState(2)), 1);
    }

    #[test]
    fn rejects_bad_exceptions() {
        assert_eq!(
            CodingFunction::with_exceptions([(4, 0)]),
            Err(CodingError::BadExceptionState(4))
        );
        assert_eq!(
            CodingFunction::with_exceptions([(1, 0)]),
            Err(CodingError::BadExceptionState(1))
        );
        assert_eq!(CodingFunction::with_exceptions([(5, 2)]), Err(CodingError::BadBit(2)));
    }

    #[test]
    fn encode_examples() {
        let f0 = base_coding();
        assert_eq!(f0.encode(&path(&[0, 1, 2, 3])), bits("0011"));
        assert_eq!(f0.encode(&path(&[0, 1, 2, 0])), bits("0010"));
        let f3 = CodingFunction::with_exceptions([(3, 0)]).unwrap();
        assert_eq!(f3.encode(&path(&[0, 1, 2, 3])), bits("0010"));
    }

    #[test]
    fn invert_examples() {
        let f0 = base_coding();
        assert_eq!(f0.invert(&bits("0010")).unwrap(), Decoded::Unique(path(&[0, 1, 2, 0])));
        assert_eq!(f0.invert(&bits("0011")).unwrap(), Decoded::Unique(path(&[0, 1, 2, 3])));
        assert_eq!(f0.invert(&bits("01")), Err(CodingError::NotAResetBlock));
        // 0,0,1,0 puts the chain at 0; the next bit must be 0.
        assert_eq!(f0.invert(&bits("00101")), Err(CodingError::Undecodable(4)));
    }

    #[test]
    fn invert_matches_enumeration_oracle() {
        // Oracle: every legal length-n path from 0, matched by encoding.
        fn all_paths(n: usize) -> Vec<Vec<u64>> {
            let mut out = vec![vec![0u64]];
            for _ in 1..n {
                out = out
                    .into_iter()
                    .flat_map(|p| {
                        successors(*p.last().unwrap()).map(move |s| {
                            let mut q = p.clone();
                            q.push(s);
                            q
                        })
                    })
                    .collect();
            }
            out
        }
        for f in [
            base_coding(),
            CodingFunction::with_exceptions([(3, 0)]).unwrap(),
            CodingFunction::with_exceptions([(5, 0), (7, 0)]).unwrap(),
        ] {
            for n in 3..=10 {
                let paths = all_paths(n);
                for p in &paths {
                    let cp = path(p);
                    let enc = f.encode(&cp);
                    let matching: Vec<ChainPath> = paths
                        .iter()
                        .filter(|q| f.encode(&path(q)) == enc)
                        .map(|q| path(q))
                        .collect();
                    match f.invert(&enc).unwrap() {
                        Decoded::Unique(d) => assert_eq!(vec![d], matching),
                        Decoded::Ambiguous(mut ds) => {
                            ds.sort_by_key(|p| p.values());
                            let mut m = matching.clone();
                            m.sort_by_key(|p| p.values());
                            assert_eq!(ds, m);
                            // Ambiguity only survives when the block ends in a 0.
                            assert_eq!(*enc.last().unwrap(), 0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn round_trip_hitting_blocks() {
        let f0 = base_coding();
        let (paths, _) = enumerate_paths_to_hit(2, 1e-2).unwrap();
        for wp in paths {
            let enc = f0.encode(&wp.path);
            assert_eq!(f0.invert(&enc).unwrap(), Decoded::Unique(wp.path));
        }
    }

    #[test]
    fn order_bounds() {
        assert_eq!(base_coding().order_bound(), 3);
        assert_eq!(CodingFunction::with_exceptions([(9, 0)]).unwrap().order_bound(), 10);
        assert_eq!(
            CodingFunction::with_exceptions([(5, 1), (9, 0)]).unwrap().order_bound(),
            10
        );
        let f = CodingFunction::with_exceptions([(5, 0), (11, 1)]).unwrap();
        let k = f.order_bound() as u64;
        assert!((k..k + 200).all(|s| f.apply(ChainState(s)) == 1));
    }

    #[test]
    fn reset_index_examples() {
        assert_eq!(last_reset_index(&bits("001")), Some(2));
        assert_eq!(last_reset_index(&bits("1111")), None);
        assert_eq!(last_reset_index(&bits("001001")), Some(5));
        assert_eq!(last_reset_index(&bits("00")), None);
    }

    #[test]
    fn reset_pattern_marks_state_zero() {
        // Exhaustive over legal paths of length 9 from every start <= 6.
        let f = CodingFunction::with_exceptions([(5, 0)]).unwrap();
        for start in 0..=6u64 {
            let mut frontier = vec![vec![start]];
            for _ in 1..9 {
                frontier = frontier
                    .into_iter()
                    .flat_map(|p| {
                        successors(*p.last().unwrap()).map(move |s| {
                            let mut q = p.clone();
                            q.push(s);
                            q
                        })
                    })
                    .collect();
            }
            for p in frontier {
                let enc = f.encode(&path(&p));
                for t in 2..p.len() {
                    let window = enc[t - 2..=t] == [0, 0, 1];
                    assert_eq!(window, p[t - 2] == 0, "path {p:?} t={t}");
                }
            }
        }
    }

    #[test]
    fn json_format() {
        let f = CodingFunction::with_exceptions([(9, 0), (5, 1)]).unwrap();
        let s = serde_json::to_string(&f).unwrap();
        assert_eq!(
            s,
            r#"{"default_odd":1,"exceptions":[{"state":5,"bit":1},{"state":9,"bit":0}]}"#
        );
        assert_eq!(serde_json::from_str::<CodingFunction>(&s).unwrap(), f);
        let unsorted = r#"{"default_odd":1,"exceptions":[{"state":9,"bit":0},{"state":5,"bit":1}]}"#;
        assert!(serde_json::from_str::<CodingFunction>(unsorted).is_err());
        let bad_default = r#"{"default_odd":0,"exceptions":[]}"#;
        assert!(serde_json::from_str::<CodingFunction>(bad_default).is_err());
        let even = r#"{"default_odd":1,"exceptions":[{"state":6,"bit":0}]}"#;
        assert!(serde_json::from_str::<CodingFunction>(even).is_err());
    }

    #[test]
    fn bitstring_parsing() {
        assert_eq!(bits("0, 0, 1").0, vec![0, 0, 1]);
        assert!("012".parse::<BitString>().is_err());
        assert_eq!(bits("0110").to_string(), "0110");
    }
}
