//! Restricted operation sets on top of the atomic machine: semigroup
//! combining, edge contraction and interval fusing, plus the contiguity audit
//! over semigroup operation logs.
//!
//! All operations act on atoms in one processor's cache and are free.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::machine::{
    Atom, AtomId, EdgePayload, IntervalPayload, Machine, OpKind, OpLog, OpRecord, Payload,
    PayloadKind, SemigroupValue,
};

/// An associative operation on [`SemigroupValue`]s. `combine` returns `None`
/// for values outside the domain.
#[derive(Clone, Copy)]
pub struct SemigroupSpec {
    pub name: &'static str,
    pub combine: fn(&SemigroupValue, &SemigroupValue) -> Option<SemigroupValue>,
}

impl std::fmt::Debug for SemigroupSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SemigroupSpec({})", self.name)
    }
}

impl SemigroupSpec {
    /// Words under concatenation.
    pub fn concatenation() -> Self {
        fn op(a: &SemigroupValue, b: &SemigroupValue) -> Option<SemigroupValue> {
            match (a, b) {
                (SemigroupValue::Word(x), SemigroupValue::Word(y)) => {
                    let mut v = Vec::with_capacity(x.len() + y.len());
                    v.extend_from_slice(x);
                    v.extend_from_slice(y);
                    Some(SemigroupValue::Word(v.into()))
                }
                _ => None,
            }
        }
        SemigroupSpec {
            name: "concatenation",
            combine: op,
        }
    }

    /// `(a, b)·(c, d) = (a, d)`.
    pub fn pairing() -> Self {
        fn op(a: &SemigroupValue, b: &SemigroupValue) -> Option<SemigroupValue> {
            match (a, b) {
                (SemigroupValue::Pair(a, _), SemigroupValue::Pair(_, d)) => {
                    Some(SemigroupValue::Pair(*a, *d))
                }
                _ => None,
            }
        }
        SemigroupSpec {
            name: "pairing",
            combine: op,
        }
    }

    /// Integers under wrapping addition.
    pub fn addition() -> Self {
        fn op(a: &SemigroupValue, b: &SemigroupValue) -> Option<SemigroupValue> {
            match (a, b) {
                (SemigroupValue::Int(x), SemigroupValue::Int(y)) => {
                    Some(SemigroupValue::Int(x.wrapping_add(*y)))
                }
                _ => None,
            }
        }
        SemigroupSpec {
            name: "addition",
            combine: op,
        }
    }

    pub fn apply(&self, a: &SemigroupValue, b: &SemigroupValue) -> Option<SemigroupValue> {
        (self.combine)(a, b)
    }

    /// Checks `(ab)c = a(bc)` on every triple; returns the first failing one.
    pub fn check_associative<'a>(
        &self,
        triples: impl IntoIterator<Item = (&'a SemigroupValue, &'a SemigroupValue, &'a SemigroupValue)>,
    ) -> std::result::Result<(), (SemigroupValue, SemigroupValue, SemigroupValue)> {
        for (a, b, c) in triples {
            let left = self.apply(a, b).and_then(|ab| self.apply(&ab, c));
            let right = self.apply(b, c).and_then(|bc| self.apply(a, &bc));
            if left != right {
                return Err((a.clone(), b.clone(), c.clone()));
            }
        }
        Ok(())
    }

    /// Left-to-right product of a nonempty sequence.
    pub fn product<'a>(
        &self,
        values: impl IntoIterator<Item = &'a SemigroupValue>,
    ) -> Option<SemigroupValue> {
        let mut it = values.into_iter();
        let first = it.next()?.clone();
        it.try_fold(first, |acc, v| self.apply(&acc, v))
    }
}

fn resident(m: &Machine, proc: usize, id: AtomId) -> Result<usize> {
    m.check_proc(proc)?;
    m.find_in_cache(proc, id)
        .ok_or(Error::NotResident { proc, atom: id })
}

fn kind_check(atom: &Atom, expected: PayloadKind) -> Result<()> {
    let found = atom.payload.kind();
    if found == expected {
        Ok(())
    } else {
        Err(Error::KindError {
            atom: atom.id,
            expected,
            found,
        })
    }
}

fn log_op(m: &mut Machine, kind: OpKind, operands: Vec<AtomId>, result: AtomId, proc: usize) {
    let io_count = m.io_count();
    m.op_log_mut().push(OpRecord {
        kind,
        operands,
        result,
        proc,
        io_count,
    });
}

/// Creates `z = x·y` in `proc`'s cache. The operands stay resident.
pub fn semigroup_combine(
    m: &mut Machine,
    spec: &SemigroupSpec,
    proc: usize,
    x: AtomId,
    y: AtomId,
) -> Result<AtomId> {
    let ix = resident(m, proc, x)?;
    let iy = resident(m, proc, y)?;
    let (ax, ay) = (&m.cache(proc)[ix], &m.cache(proc)[iy]);
    kind_check(ax, PayloadKind::Semigroup)?;
    kind_check(ay, PayloadKind::Semigroup)?;
    let (Payload::Semigroup(vx), Payload::Semigroup(vy)) = (&ax.payload, &ay.payload) else {
        unreachable!()
    };
    let value = spec.apply(vx, vy).ok_or(Error::KindError {
        atom: y,
        expected: PayloadKind::Semigroup,
        found: PayloadKind::Semigroup,
    })?;
    let provenance = ax.provenance.union(&ay.provenance);
    let cap = m.config().m;
    let len = m.cache(proc).len();
    if len + 1 > cap {
        return Err(Error::CacheOverflow {
            proc,
            len: len + 1,
            capacity: cap,
        });
    }
    let id = m.fresh_id();
    m.push_to_cache(
        proc,
        Atom {
            id,
            payload: Payload::Semigroup(value),
            provenance,
        },
    )?;
    log_op(m, OpKind::Combine, vec![x, y], id, proc);
    Ok(id)
}

/// Replaces `e1 = (a, b)` and `e2 = (b, c)` by `(a, c)` carrying the summed
/// weight.
pub fn edge_contract(m: &mut Machine, proc: usize, e1: AtomId, e2: AtomId) -> Result<AtomId> {
    let i1 = resident(m, proc, e1)?;
    let i2 = resident(m, proc, e2)?;
    if i1 == i2 {
        return Err(Error::NotResident { proc, atom: e2 });
    }
    let (a1, a2) = (&m.cache(proc)[i1], &m.cache(proc)[i2]);
    kind_check(a1, PayloadKind::Edge)?;
    kind_check(a2, PayloadKind::Edge)?;
    let (p, q) = (a1.payload.as_edge().unwrap(), a2.payload.as_edge().unwrap());
    if p.dst != q.src {
        return Err(Error::NoSharedVertex(p.src, p.dst, q.src, q.dst));
    }
    let provenance = a1.provenance.union(&a2.provenance);
    let payload = Payload::Edge(EdgePayload {
        src: p.src,
        dst: q.dst,
        weight: p.weight + q.weight,
    });
    let id = m.fresh_id();
    let cache = m.cache_mut(proc)?;
    let (lo, hi) = (i1.min(i2), i1.max(i2));
    cache.remove(hi);
    cache.remove(lo);
    cache.push(Atom {
        id,
        payload,
        provenance,
    });
    log_op(m, OpKind::Contract, vec![e1, e2], id, proc);
    Ok(id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FuseOutcome {
    /// The new atom and the closed intersection of the operand intervals.
    Fused { atom: AtomId, overlap: (u32, u32) },
    Failed,
}

/// Fuses two intersecting interval atoms into their union, consuming both.
/// Disjoint intervals leave the machine unchanged.
pub fn interval_fuse(m: &mut Machine, proc: usize, x: AtomId, y: AtomId) -> Result<FuseOutcome> {
    let ix = resident(m, proc, x)?;
    let iy = resident(m, proc, y)?;
    if ix == iy {
        return Err(Error::NotResident { proc, atom: y });
    }
    let (ax, ay) = (&m.cache(proc)[ix], &m.cache(proc)[iy]);
    kind_check(ax, PayloadKind::Interval)?;
    kind_check(ay, PayloadKind::Interval)?;
    let (p, q) = (
        ax.payload.as_interval().unwrap(),
        ay.payload.as_interval().unwrap(),
    );
    let Some(overlap) = p.intersection(&q) else {
        return Ok(FuseOutcome::Failed);
    };
    let provenance = ax.provenance.union(&ay.provenance);
    let payload = Payload::Interval(IntervalPayload {
        lo: p.lo.min(q.lo),
        hi: p.hi.max(q.hi),
    });
    let id = m.fresh_id();
    let cache = m.cache_mut(proc)?;
    let (lo, hi) = (ix.min(iy), ix.max(iy));
    cache.remove(hi);
    cache.remove(lo);
    cache.push(Atom {
        id,
        payload,
        provenance,
    });
    log_op(m, OpKind::Fuse, vec![x, y], id, proc);
    Ok(FuseOutcome::Fused { atom: id, overlap })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub violations: Vec<String>,
    /// Cuts `i` such that some combine joined `[h, i]` with `[i + 1, k]`.
    pub join_points: BTreeSet<usize>,
    /// Run covered by the last result in the log.
    pub final_run: Option<(usize, usize)>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks that every combine in `log` joins adjacent runs of positions, left
/// operand first. `position[i]` is the position of initial atom `i` in the
/// product order. Copies inherit their source's run; contractions are
/// treated like combines.
pub fn contiguity_audit(log: &OpLog, position: &[usize]) -> AuditReport {
    let mut runs: HashMap<AtomId, (usize, usize)> = position
        .iter()
        .enumerate()
        .map(|(i, &p)| (AtomId(i as u64), (p, p)))
        .collect();
    let mut report = AuditReport::default();
    for (n, r) in log.records().iter().enumerate() {
        let lookup = |id: &AtomId| runs.get(id).copied();
        match r.kind {
            OpKind::Copy => match r.operands.first().and_then(lookup) {
                Some(run) => {
                    runs.insert(r.result, run);
                }
                None => report
                    .violations
                    .push(format!("record {n}: copy of unknown atom")),
            },
            OpKind::Combine | OpKind::Contract | OpKind::Fuse => {
                let (Some(a), Some(b)) = (
                    r.operands.first().and_then(lookup),
                    r.operands.get(1).and_then(lookup),
                ) else {
                    report
                        .violations
                        .push(format!("record {n}: operand without a known run"));
                    continue;
                };
                if a.1 + 1 == b.0 {
                    report.join_points.insert(a.1);
                    runs.insert(r.result, (a.0, b.1));
                    report.final_run = Some((a.0, b.1));
                } else {
                    report.violations.push(format!(
                        "record {n}: runs [{}, {}] and [{}, {}] are not adjacent",
                        a.0, a.1, b.0, b.1
                    ));
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::{BlockId, MachineConfig, ParallelStep, Request};

    fn word(s: &str) -> Payload {
        Payload::Semigroup(SemigroupValue::word(
            &s.bytes().map(u32::from).collect::<Vec<_>>(),
        ))
    }

    fn loaded(payloads: Vec<Payload>, p: usize, m: usize, b: usize) -> Machine {
        let n = payloads.len();
        let mut mach = Machine::new(MachineConfig::new(p, m, b, n).unwrap(), payloads).unwrap();
        let mut reqs = vec![Request::Idle; p];
        reqs[0] = Request::Read(BlockId(0));
        mach.execute_step(&ParallelStep::new(reqs)).unwrap();
        mach
    }

    #[test]
    fn concatenation_combine() {
        let mut m = loaded(vec![word("ab"), word("c")], 1, 4, 2);
        let z = semigroup_combine(&mut m, &SemigroupSpec::concatenation(), 0, AtomId(0), AtomId(1))
            .unwrap();
        let got = m.cache(0).iter().find(|a| a.id == z).unwrap();
        assert_eq!(got.payload, word("abc"));
        assert_eq!(m.cache(0).len(), 3);
        assert_eq!(m.op_log().len(), 1);
        assert_eq!(m.io_count(), 1);
    }

    #[test]
    fn pairing_combine() {
        let s = SemigroupSpec::pairing();
        assert_eq!(
            s.apply(&SemigroupValue::Pair(1, 2), &SemigroupValue::Pair(3, 4)),
            Some(SemigroupValue::Pair(1, 4))
        );
    }

    #[test]
    fn combine_across_caches_is_not_resident() {
        let mut m = Machine::new(
            MachineConfig::new(2, 2, 1, 2).unwrap(),
            vec![word("a"), word("b")],
        )
        .unwrap();
        m.execute_step(&ParallelStep::new(vec![
            Request::Read(BlockId(0)),
            Request::Read(BlockId(1)),
        ]))
        .unwrap();
        let err = semigroup_combine(&mut m, &SemigroupSpec::concatenation(), 0, AtomId(0), AtomId(1))
            .unwrap_err();
        assert!(matches!(err, Error::NotResident { .. }));
    }

    #[test]
    fn combine_wrong_kind() {
        let mut m = loaded(vec![word("a"), Payload::Plain(3)], 1, 4, 2);
        let err = semigroup_combine(&mut m, &SemigroupSpec::concatenation(), 0, AtomId(0), AtomId(1))
            .unwrap_err();
        assert!(matches!(err, Error::KindError { .. }));
    }

    fn edge(src: u64, dst: u64) -> Payload {
        Payload::Edge(EdgePayload { src, dst, weight: 1 })
    }

    #[test]
    fn contract_edges() {
        let mut m = loaded(vec![edge(1, 5), edge(5, 9)], 1, 4, 2);
        let e = edge_contract(&mut m, 0, AtomId(0), AtomId(1)).unwrap();
        assert_eq!(m.cache(0).len(), 1);
        assert_eq!(
            m.cache(0)[0].payload,
            Payload::Edge(EdgePayload { src: 1, dst: 9, weight: 2 })
        );
        assert_eq!(m.cache(0)[0].id, e);
    }

    #[test]
    fn contract_without_shared_vertex() {
        let mut m = loaded(vec![edge(1, 5), edge(7, 9)], 1, 4, 2);
        assert_eq!(
            edge_contract(&mut m, 0, AtomId(0), AtomId(1)),
            Err(Error::NoSharedVertex(1, 5, 7, 9))
        );
        assert_eq!(m.cache(0).len(), 2);
    }

    #[test]
    fn contract_chain_left_to_right() {
        let mut m = Machine::new(
            MachineConfig::new(1, 4, 2, 3).unwrap(),
            vec![edge(0, 1), edge(1, 2), edge(2, 3)],
        )
        .unwrap();
        for b in 0..2 {
            m.execute_step(&ParallelStep::new(vec![Request::Read(BlockId(b))]))
                .unwrap();
        }
        let e = edge_contract(&mut m, 0, AtomId(0), AtomId(1)).unwrap();
        edge_contract(&mut m, 0, e, AtomId(2)).unwrap();
        let last = &m.cache(0)[0];
        assert_eq!(last.payload.as_edge().map(|e| (e.src, e.dst)), Some((0, 3)));
        assert_eq!(last.provenance.len(), 3);
    }

    fn iv(lo: u32, hi: u32) -> Payload {
        Payload::Interval(IntervalPayload { lo, hi })
    }

    #[test]
    fn fuse_intervals() {
        for (a, b, want) in [
            ((0, 1), (1, 2), Some((0, 2))),
            ((0, 2), (1, 3), Some((0, 3))),
            ((0, 1), (2, 3), None),
        ] {
            let mut m = loaded(vec![iv(a.0, a.1), iv(b.0, b.1)], 1, 4, 2);
            let out = interval_fuse(&mut m, 0, AtomId(0), AtomId(1)).unwrap();
            match want {
                Some((lo, hi)) => {
                    assert!(matches!(out, FuseOutcome::Fused { .. }));
                    assert_eq!(m.cache(0).len(), 1);
                    assert_eq!(m.cache(0)[0].payload, iv(lo, hi));
                }
                None => {
                    assert_eq!(out, FuseOutcome::Failed);
                    assert_eq!(m.cache(0).len(), 2);
                    assert!(m.op_log().is_empty());
                }
            }
        }
    }

    fn rec(kind: OpKind, a: u64, b: u64, z: u64) -> OpRecord {
        OpRecord {
            kind,
            operands: vec![AtomId(a), AtomId(b)],
            result: AtomId(z),
            proc: 0,
            io_count: 0,
        }
    }

    #[test]
    fn audit_left_fold_passes() {
        let log: OpLog = [
            rec(OpKind::Combine, 0, 1, 4),
            rec(OpKind::Combine, 4, 2, 5),
            rec(OpKind::Combine, 5, 3, 6),
        ]
        .into_iter()
        .collect();
        let r = contiguity_audit(&log, &[0, 1, 2, 3]);
        assert!(r.passed());
        assert_eq!(r.final_run, Some((0, 3)));
    }

    #[test]
    fn audit_flags_gap() {
        let log: OpLog = [rec(OpKind::Combine, 0, 2, 4)].into_iter().collect();
        let r = contiguity_audit(&log, &[0, 1, 2, 3]);
        assert_eq!(r.violations.len(), 1);
    }

    #[test]
    fn audit_balanced_tree_hits_every_cut() {
        let mut recs = Vec::new();
        let mut level: Vec<u64> = (0..8).collect();
        let mut next = 8;
        while level.len() > 1 {
            level = level
                .chunks(2)
                .map(|c| {
                    recs.push(rec(OpKind::Combine, c[0], c[1], next));
                    next += 1;
                    next - 1
                })
                .collect();
        }
        let log: OpLog = recs.into_iter().collect();
        let r = contiguity_audit(&log, &(0..8).collect::<Vec<_>>());
        assert!(r.passed());
        assert_eq!(r.join_points, (0..7).collect());
    }

    #[test]
    fn associativity_spot_check() {
        let vals = [
            SemigroupValue::Pair(1, 2),
            SemigroupValue::Pair(3, 4),
            SemigroupValue::Pair(5, 6),
        ];
        let s = SemigroupSpec::pairing();
        assert!(s.check_associative([(&vals[0], &vals[1], &vals[2])]).is_ok());
        let bad = SemigroupSpec {
            name: "minus",
            combine: |a, b| match (a, b) {
                (SemigroupValue::Int(x), SemigroupValue::Int(y)) => Some(SemigroupValue::Int(x - y)),
                _ => None,
            },
        };
        let ints = [SemigroupValue::Int(1), SemigroupValue::Int(2), SemigroupValue::Int(3)];
        assert!(bad.check_associative([(&ints[0], &ints[1], &ints[2])]).is_err());
    }
}
