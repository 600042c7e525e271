use std::fmt::Write as _;

use super::atom::{AtomId, BlockId};

/// What one processor does during a parallel I/O.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    /// Copy the block's atoms into the cache; the block is unchanged.
    Read(BlockId),
    /// Move the selected cache atoms into the block, replacing its contents.
    Write(BlockId, Vec<AtomId>),
    Idle,
}

impl Request {
    pub fn is_idle(&self) -> bool {
        matches!(self, Request::Idle)
    }
}

/// One request per processor, executed in lock-step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelStep {
    pub requests: Vec<Request>,
}

impl ParallelStep {
    pub fn idle(p: usize) -> Self {
        ParallelStep {
            requests: vec![Request::Idle; p],
        }
    }

    pub fn new(requests: Vec<Request>) -> Self {
        ParallelStep { requests }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionKind {
    Read,
    Write,
    Idle,
}

impl ActionKind {
    fn as_str(self) -> &'static str {
        match self {
            ActionKind::Read => "read",
            ActionKind::Write => "write",
            ActionKind::Idle => "idle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionRecord {
    pub kind: ActionKind,
    pub block: Option<BlockId>,
    /// Atoms transferred; empty unless the trace runs in [`TraceMode::Full`].
    pub atoms: Vec<AtomId>,
}

/// How much of each executed step the trace keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceMode {
    /// Action kind, block and atom ids for every processor.
    #[default]
    Full,
    /// Action kind and block only. Large runs use this to bound memory.
    Actions,
    /// Nothing is recorded; only the machine's I/O counter advances.
    Off,
}

#[derive(Debug, Clone, Default)]
pub struct IoTrace {
    steps: Vec<Vec<ActionRecord>>,
}

impl IoTrace {
    pub(crate) fn push(&mut self, actions: Vec<ActionRecord>) {
        self.steps.push(actions);
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[Vec<ActionRecord>] {
        &self.steps
    }

    /// Line-delimited `step_index,proc,action,block,atom_ids` records, one
    /// per non-idle processor action. Atom ids are space separated.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for (step, actions) in self.steps.iter().enumerate() {
            for (proc, a) in actions.iter().enumerate() {
                if a.kind == ActionKind::Idle {
                    continue;
                }
                let block = a.block.map(|b| b.0.to_string()).unwrap_or_default();
                let ids = join_ids(&a.atoms);
                let _ = writeln!(out, "{step},{proc},{},{block},{ids}", a.kind.as_str());
            }
        }
        out
    }

    /// Replays the recorded writes and reports the first step in which two
    /// processors wrote one block.
    pub fn find_crew_violation(&self) -> Option<(usize, BlockId)> {
        for (step, actions) in self.steps.iter().enumerate() {
            let mut seen = std::collections::HashSet::new();
            for a in actions {
                if a.kind == ActionKind::Write {
                    let block = a.block?;
                    if !seen.insert(block) {
                        return Some((step, block));
                    }
                }
            }
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Combine,
    Contract,
    Fuse,
    Copy,
}

impl OpKind {
    fn as_str(self) -> &'static str {
        match self {
            OpKind::Combine => "combine",
            OpKind::Contract => "contract",
            OpKind::Fuse => "fuse",
            OpKind::Copy => "copy",
        }
    }
}

/// One in-cache operation that created an atom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpRecord {
    pub kind: OpKind,
    pub operands: Vec<AtomId>,
    pub result: AtomId,
    pub proc: usize,
    pub io_count: u64,
}

#[derive(Debug, Clone, Default)]
pub struct OpLog {
    records: Vec<OpRecord>,
}

impl OpLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: OpRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[OpRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Copy of the log without its last record; handy for building
    /// incomplete logs in checks.
    pub fn truncated(&self, len: usize) -> OpLog {
        OpLog {
            records: self.records[..len.min(self.records.len())].to_vec(),
        }
    }

    /// Line-delimited `io_count,proc,kind,operand_ids,result_id`.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.io_count,
                r.proc,
                r.kind.as_str(),
                join_ids(&r.operands),
                r.result
            );
        }
        out
    }
}

impl FromIterator<OpRecord> for OpLog {
    fn from_iter<T: IntoIterator<Item = OpRecord>>(iter: T) -> Self {
        OpLog {
            records: iter.into_iter().collect(),
        }
    }
}

fn join_ids(ids: &[AtomId]) -> String {
    let mut s = String::new();
    for (i, id) in ids.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{id}");
    }
    s
}
