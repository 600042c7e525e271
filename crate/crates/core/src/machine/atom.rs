use std::fmt;
use std::sync::Arc;

/// Identifier of an atom. Initial atoms are numbered `0..N` in input order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AtomId(pub u64);

impl fmt::Display for AtomId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Index of a block of shared memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId(pub usize);

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PayloadKind {
    Plain,
    Semigroup,
    Edge,
    Interval,
}

/// Value carried by a semigroup atom. The machine never looks inside; only a
/// [`SemigroupSpec`](crate::variants::SemigroupSpec) combines two of them.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SemigroupValue {
    /// A word over symbols, combined by concatenation.
    Word(Arc<[u32]>),
    /// A pair `(a, b)`, combined by `(a, b)·(c, d) = (a, d)`.
    Pair(u64, u64),
    Int(i64),
}

impl SemigroupValue {
    pub fn word(symbols: &[u32]) -> Self {
        SemigroupValue::Word(Arc::from(symbols))
    }
}

/// A directed edge `src -> dst` with an accumulated weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EdgePayload {
    pub src: u64,
    pub dst: u64,
    pub weight: u64,
}

/// A closed interval `[lo, hi]` with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IntervalPayload {
    pub lo: u32,
    pub hi: u32,
}

impl IntervalPayload {
    pub fn len(&self) -> u32 {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi == self.lo
    }

    /// Closed-interval intersection, `None` when disjoint.
    pub fn intersection(&self, other: &IntervalPayload) -> Option<(u32, u32)> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some((lo, hi))
    }

    pub fn contains_range(&self, lo: u32, hi: u32) -> bool {
        self.lo <= lo && hi <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Payload {
    Plain(u64),
    Semigroup(SemigroupValue),
    Edge(EdgePayload),
    Interval(IntervalPayload),
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Plain(_) => PayloadKind::Plain,
            Payload::Semigroup(_) => PayloadKind::Semigroup,
            Payload::Edge(_) => PayloadKind::Edge,
            Payload::Interval(_) => PayloadKind::Interval,
        }
    }

    pub fn as_plain(&self) -> Option<u64> {
        match self {
            Payload::Plain(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_interval(&self) -> Option<IntervalPayload> {
        match self {
            Payload::Interval(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_edge(&self) -> Option<EdgePayload> {
        match self {
            Payload::Edge(e) => Some(*e),
            _ => None,
        }
    }
}

/// The set of initial atoms an atom derives from, kept sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    Single(AtomId),
    Set(Arc<[AtomId]>),
}

impl Provenance {
    pub fn len(&self) -> usize {
        match self {
            Provenance::Single(_) => 1,
            Provenance::Set(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_slice(&self) -> &[AtomId] {
        match self {
            Provenance::Single(id) => std::slice::from_ref(id),
            Provenance::Set(s) => s,
        }
    }

    pub fn contains(&self, id: AtomId) -> bool {
        self.as_slice().binary_search(&id).is_ok()
    }

    pub fn union(&self, other: &Provenance) -> Provenance {
        let (a, b) = (self.as_slice(), other.as_slice());
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push(a[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        if out.len() == 1 {
            Provenance::Single(out[0])
        } else {
            Provenance::Set(out.into())
        }
    }
}

/// An indivisible unit of data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atom {
    pub id: AtomId,
    pub payload: Payload,
    pub provenance: Provenance,
}

impl Atom {
    pub fn initial(id: AtomId, payload: Payload) -> Self {
        Atom {
            id,
            payload,
            provenance: Provenance::Single(id),
        }
    }
}
