//! The PEM machine: blocked shared memory, `P` private caches of `M` atoms and
//! a parallel-I/O counter that is the only source of cost.
//!
//! A [`ParallelStep`] carries one [`Request`] per processor. All reads of a
//! step observe the shared memory as it was before the step; writes are
//! applied afterwards. Every executed step costs exactly one parallel I/O,
//! however many processors are active. In-cache work (copy, delete and the
//! variant operations) is free.

mod atom;
pub mod schedule;
mod trace;

use std::collections::{BTreeMap, BTreeSet, HashMap};

pub use atom::{
    Atom, AtomId, BlockId, EdgePayload, IntervalPayload, Payload, PayloadKind, Provenance,
    SemigroupValue,
};
pub use trace::{
    ActionKind, ActionRecord, IoTrace, OpKind, OpLog, OpRecord, ParallelStep, Request, TraceMode,
};

use crate::error::{Error, Result};

/// Machine parameters: `p` processors, caches of `m` atoms, blocks of `b`
/// atoms and an input of `n` atoms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MachineConfig {
    pub p: usize,
    pub m: usize,
    pub b: usize,
    pub n: usize,
}

impl MachineConfig {
    pub fn new(p: usize, m: usize, b: usize, n: usize) -> Result<Self> {
        let cfg = MachineConfig { p, m, b, n };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let MachineConfig { p, m, b, n } = *self;
        if p == 0 {
            return Err(Error::Config("P must be at least 1".into()));
        }
        if b == 0 {
            return Err(Error::Config("B must be at least 1".into()));
        }
        if m < 2 * b {
            return Err(Error::Config(format!("M = {m} < 2B = {}", 2 * b)));
        }
        if p * b > n {
            return Err(Error::Config(format!("P = {p} exceeds N/B = {n}/{b}")));
        }
        Ok(())
    }
}

/// Content of shared memory as a set of atom ids per block.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BlockPermutation {
    pub blocks: BTreeMap<BlockId, BTreeSet<AtomId>>,
}

impl BlockPermutation {
    pub fn get(&self, block: BlockId) -> Option<&BTreeSet<AtomId>> {
        self.blocks.get(&block)
    }

    pub fn block_of(&self, atom: AtomId) -> Option<BlockId> {
        self.blocks
            .iter()
            .find(|(_, set)| set.contains(&atom))
            .map(|(b, _)| *b)
    }

    /// Map from atom to its block; fails if an atom sits in two blocks or a
    /// block holds more than `b` atoms.
    pub fn validate(&self, b: usize) -> std::result::Result<HashMap<AtomId, BlockId>, String> {
        let mut owner = HashMap::new();
        for (block, set) in &self.blocks {
            if set.len() > b {
                return Err(format!("block {block} holds {} > {b} atoms", set.len()));
            }
            for atom in set {
                if let Some(prev) = owner.insert(*atom, *block) {
                    return Err(format!("atom {atom} in blocks {prev} and {block}"));
                }
            }
        }
        Ok(owner)
    }

    pub fn atom_count(&self) -> usize {
        self.blocks.values().map(BTreeSet::len).sum()
    }
}

/// An ordered list of blocks holding one logical array.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Region {
    pub blocks: Vec<BlockId>,
}

impl Region {
    pub fn new(blocks: Vec<BlockId>) -> Self {
        Region { blocks }
    }

    pub fn len(&self, machine: &Machine) -> usize {
        self.blocks
            .iter()
            .map(|b| machine.block_len(*b).unwrap_or(0))
            .sum()
    }

    pub fn is_empty(&self, machine: &Machine) -> bool {
        self.len(machine) == 0
    }

    pub fn atoms<'a>(&'a self, machine: &'a Machine) -> impl Iterator<Item = &'a Atom> + 'a {
        self.blocks
            .iter()
            .flat_map(move |b| machine.block(*b).unwrap_or(&[]).iter())
    }

    pub fn ids(&self, machine: &Machine) -> Vec<AtomId> {
        self.atoms(machine).map(|a| a.id).collect()
    }

    /// True when every block except the last is full.
    pub fn is_packed(&self, machine: &Machine, per_block: usize) -> bool {
        let n = self.blocks.len();
        self.blocks.iter().enumerate().all(|(i, b)| {
            let len = machine.block_len(*b).unwrap_or(0);
            if i + 1 < n {
                len == per_block
            } else {
                len <= per_block && len > 0
            }
        })
    }
}

type StepHook = Box<dyn FnMut(&Machine)>;

pub struct Machine {
    config: MachineConfig,
    blocks: Vec<Vec<Atom>>,
    allocated: Vec<bool>,
    free: Vec<usize>,
    caches: Vec<Vec<Atom>>,
    io_count: u64,
    trace: IoTrace,
    trace_mode: TraceMode,
    op_log: OpLog,
    next_id: u64,
    normalized: bool,
    step_hook: Option<StepHook>,
}

impl std::fmt::Debug for Machine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Machine")
            .field("config", &self.config)
            .field("blocks", &self.blocks.len())
            .field("io_count", &self.io_count)
            .finish()
    }
}

/// Per-processor outcome of validating a request.
enum Planned {
    Idle,
    Read(usize),
    /// Cache indices moved into the block, in selection order.
    Write(usize, Vec<usize>),
}

impl Machine {
    /// Lays the payloads out `B` per block in input order; atom `i` gets id `i`.
    pub fn new(config: MachineConfig, initial: Vec<Payload>) -> Result<Self> {
        config.validate()?;
        if initial.len() != config.n {
            return Err(Error::Config(format!(
                "got {} initial atoms for N = {}",
                initial.len(),
                config.n
            )));
        }
        let atoms: Vec<Atom> = initial
            .into_iter()
            .enumerate()
            .map(|(i, p)| Atom::initial(AtomId(i as u64), p))
            .collect();
        let blocks: Vec<Vec<Atom>> = atoms.chunks(config.b).map(<[Atom]>::to_vec).collect();
        let n_blocks = blocks.len();
        Ok(Machine {
            config,
            blocks,
            allocated: vec![true; n_blocks],
            free: Vec::new(),
            caches: vec![Vec::new(); config.p],
            io_count: 0,
            trace: IoTrace::default(),
            trace_mode: TraceMode::Full,
            op_log: OpLog::new(),
            next_id: config.n as u64,
            normalized: false,
            step_hook: None,
        })
    }

    pub fn config(&self) -> &MachineConfig {
        &self.config
    }

    pub fn io_count(&self) -> u64 {
        self.io_count
    }

    pub fn trace(&self) -> &IoTrace {
        &self.trace
    }

    pub fn set_trace_mode(&mut self, mode: TraceMode) {
        self.trace_mode = mode;
    }

    pub fn op_log(&self) -> &OpLog {
        &self.op_log
    }

    pub(crate) fn op_log_mut(&mut self) -> &mut OpLog {
        &mut self.op_log
    }

    /// Rejects steps whose active processors mix reads and writes.
    pub fn set_normalized(&mut self, on: bool) {
        self.normalized = on;
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Called with the pre-step configuration before each accepted step.
    pub fn set_step_hook(&mut self, hook: Option<StepHook>) {
        self.step_hook = hook;
    }

    /// Blocks holding the initial input, in order.
    pub fn initial_region(&self) -> Region {
        let n_blocks = self.config.n.div_ceil(self.config.b);
        Region::new((0..n_blocks).map(BlockId).collect())
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, id: BlockId) -> Result<&[Atom]> {
        match self.allocated.get(id.0) {
            Some(true) => Ok(&self.blocks[id.0]),
            _ => Err(Error::NoSuchBlock(id)),
        }
    }

    pub fn block_len(&self, id: BlockId) -> Result<usize> {
        self.block(id).map(<[Atom]>::len)
    }

    pub fn cache(&self, proc: usize) -> &[Atom] {
        &self.caches[proc]
    }

    pub(crate) fn cache_mut(&mut self, proc: usize) -> Result<&mut Vec<Atom>> {
        let p = self.config.p;
        self.caches
            .get_mut(proc)
            .ok_or(Error::NoSuchProcessor { proc, p })
    }

    pub(crate) fn check_proc(&self, proc: usize) -> Result<()> {
        if proc < self.config.p {
            Ok(())
        } else {
            Err(Error::NoSuchProcessor {
                proc,
                p: self.config.p,
            })
        }
    }

    /// Position of the most recently added copy of `id` in the cache.
    pub fn find_in_cache(&self, proc: usize, id: AtomId) -> Option<usize> {
        self.caches.get(proc)?.iter().rposition(|a| a.id == id)
    }

    pub(crate) fn fresh_id(&mut self) -> AtomId {
        let id = AtomId(self.next_id);
        self.next_id += 1;
        id
    }

    /// A fresh empty block. Allocation is bookkeeping and costs nothing.
    pub fn alloc_block(&mut self) -> BlockId {
        if let Some(i) = self.free.pop() {
            self.allocated[i] = true;
            BlockId(i)
        } else {
            self.blocks.push(Vec::new());
            self.allocated.push(true);
            BlockId(self.blocks.len() - 1)
        }
    }

    /// Discards a block's contents and returns it to the allocator. Memory
    /// that is no longer part of any array is garbage; dropping it is free.
    pub fn release_block(&mut self, id: BlockId) -> Result<()> {
        self.block(id)?;
        self.blocks[id.0].clear();
        self.allocated[id.0] = false;
        self.free.push(id.0);
        Ok(())
    }

    pub fn release_region(&mut self, region: &Region) -> Result<()> {
        for b in &region.blocks {
            self.release_block(*b)?;
        }
        Ok(())
    }

    /// Executes one parallel I/O. On error the machine is left unchanged.
    pub fn execute_step(&mut self, step: &ParallelStep) -> Result<()> {
        let plan = self.validate_step(step)?;
        if let Some(mut hook) = self.step_hook.take() {
            hook(self);
            self.step_hook = Some(hook);
        }
        self.apply_step(step, plan);
        Ok(())
    }

    /// Like `execute_step`, but in normalized mode a step mixing reads and
    /// writes is issued as its reads followed by its writes. Reads see the
    /// pre-step blocks either way, and no processor does both.
    pub fn execute_split(&mut self, step: &ParallelStep) -> Result<()> {
        let reads = step.requests.iter().any(|r| matches!(r, Request::Read(_)));
        let writes = step.requests.iter().any(|r| matches!(r, Request::Write(..)));
        if !(self.normalized && reads && writes) {
            return self.execute_step(step);
        }
        let part = |keep_reads: bool| {
            ParallelStep::new(
                step.requests
                    .iter()
                    .map(|r| match r {
                        Request::Read(_) if keep_reads => r.clone(),
                        Request::Write(..) if !keep_reads => r.clone(),
                        _ => Request::Idle,
                    })
                    .collect(),
            )
        };
        let (first, second) = (part(true), part(false));
        // validate the whole step up front so a failure leaves no trace
        self.normalized = false;
        let checked = self.validate_step(step);
        self.normalized = true;
        checked?;
        self.execute_step(&first)?;
        self.execute_step(&second)
    }

    fn validate_step(&self, step: &ParallelStep) -> Result<Vec<Planned>> {
        let cfg = self.config;
        if step.requests.len() != cfg.p {
            return Err(Error::StepWidth {
                expected: cfg.p,
                got: step.requests.len(),
            });
        }
        let mut writers: Vec<(BlockId, usize)> = Vec::new();
        let mut plan = Vec::with_capacity(cfg.p);
        let mut kind = None;
        for (proc, req) in step.requests.iter().enumerate() {
            let cache = &self.caches[proc];
            match req {
                Request::Idle => plan.push(Planned::Idle),
                Request::Read(block) => {
                    let len = self.block_len(*block)?;
                    if cache.len() + len > cfg.m {
                        return Err(Error::CacheOverflow {
                            proc,
                            len: cache.len() + len,
                            capacity: cfg.m,
                        });
                    }
                    plan.push(Planned::Read(block.0));
                }
                Request::Write(block, ids) => {
                    self.block(*block)?;
                    if let Some(&(_, first)) = writers.iter().find(|w| w.0 == *block) {
                        return Err(Error::CrewViolation {
                            step: self.io_count,
                            block: *block,
                            first,
                            second: proc,
                        });
                    }
                    writers.push((*block, proc));
                    if ids.len() > cfg.b {
                        return Err(Error::BlockOverflow {
                            block: *block,
                            len: ids.len(),
                            capacity: cfg.b,
                        });
                    }
                    plan.push(Planned::Write(block.0, select(cache, ids, proc)?));
                }
            }
            if !req.is_idle() && self.normalized {
                let k = matches!(req, Request::Read(_));
                if *kind.get_or_insert(k) != k {
                    return Err(Error::NotNormalized);
                }
            }
        }
        Ok(plan)
    }

    fn apply_step(&mut self, step: &ParallelStep, plan: Vec<Planned>) {
        let full = self.trace_mode == TraceMode::Full;
        let off = self.trace_mode == TraceMode::Off;
        // reads first: they see memory as it was before the step, and a
        // processor never both reads and writes in one step
        for (proc, p) in plan.iter().enumerate() {
            if let Planned::Read(b) = p {
                let (blocks, caches) = (&self.blocks, &mut self.caches);
                caches[proc].extend_from_slice(&blocks[*b]);
            }
        }
        let mut actions = Vec::with_capacity(if off { 0 } else { plan.len() });
        for (proc, p) in plan.into_iter().enumerate() {
            match p {
                _ if off && !matches!(p, Planned::Write(..)) => {}
                Planned::Idle => actions.push(ActionRecord {
                    kind: ActionKind::Idle,
                    block: None,
                    atoms: Vec::new(),
                }),
                Planned::Read(b) => actions.push(ActionRecord {
                    kind: ActionKind::Read,
                    block: Some(BlockId(b)),
                    atoms: if full {
                        self.blocks[b].iter().map(|a| a.id).collect()
                    } else {
                        Vec::new()
                    },
                }),
                Planned::Write(b, indices) => {
                    let cache = &mut self.caches[proc];
                    let mut block = Vec::with_capacity(indices.len());
                    block.extend(indices.iter().map(|&i| cache[i].clone()));
                    let mut gone = indices;
                    gone.sort_unstable();
                    if gone.last().is_some_and(|&l| l + 1 == gone.len()) {
                        cache.drain(..gone.len());
                    } else if let Some(&first) = gone.first() {
                        // stable compaction starting at the first removed slot
                        let mut w = first;
                        let mut k = 0;
                        for i in first..cache.len() {
                            if k < gone.len() && gone[k] == i {
                                k += 1;
                            } else {
                                cache.swap(w, i);
                                w += 1;
                            }
                        }
                        cache.truncate(w);
                    }
                    self.blocks[b] = block;
                    let atoms = if full {
                        match &step.requests[proc] {
                            Request::Write(_, ids) => ids.clone(),
                            _ => Vec::new(),
                        }
                    } else {
                        Vec::new()
                    };
                    if !off {
                        actions.push(ActionRecord {
                            kind: ActionKind::Write,
                            block: Some(BlockId(b)),
                            atoms,
                        });
                    }
                }
            }
        }
        self.io_count += 1;
        if !off {
            self.trace.push(actions);
        }
    }

    /// Duplicates a cached atom under a fresh id. Free.
    pub fn copy_atom(&mut self, proc: usize, id: AtomId) -> Result<AtomId> {
        self.check_proc(proc)?;
        let idx = self
            .find_in_cache(proc, id)
            .ok_or(Error::NotResident { proc, atom: id })?;
        let m = self.config.m;
        let len = self.caches[proc].len();
        if len + 1 > m {
            return Err(Error::CacheOverflow {
                proc,
                len: len + 1,
                capacity: m,
            });
        }
        let fresh = self.fresh_id();
        let mut copy = self.caches[proc][idx].clone();
        copy.id = fresh;
        self.caches[proc].push(copy);
        let io_count = self.io_count;
        self.op_log.push(OpRecord {
            kind: OpKind::Copy,
            operands: vec![id],
            result: fresh,
            proc,
            io_count,
        });
        Ok(fresh)
    }

    /// Removes one copy of a cached atom. Free.
    pub fn delete_atom(&mut self, proc: usize, id: AtomId) -> Result<()> {
        self.check_proc(proc)?;
        let idx = self
            .find_in_cache(proc, id)
            .ok_or(Error::NotResident { proc, atom: id })?;
        self.caches[proc].remove(idx);
        Ok(())
    }

    /// Reorders a cache. Cache order carries no meaning, so this is free and
    /// only changes which selections hit the prefix fast path.
    pub(crate) fn sort_cache_by_key<K: Ord>(&mut self, proc: usize, f: impl FnMut(&Atom) -> K) {
        self.caches[proc].sort_by_cached_key(f);
    }

    /// Puts cache slot `order[i]` at position `i`; `order` must be a
    /// permutation of the slots. Free, like [`Machine::sort_cache_by_key`].
    pub(crate) fn reorder_cache(&mut self, proc: usize, order: &[usize]) {
        let cache = &mut self.caches[proc];
        debug_assert_eq!(order.len(), cache.len());
        if order.iter().enumerate().all(|(i, &o)| i == o) {
            return;
        }
        let mut slots: Vec<Option<Atom>> = cache.drain(..).map(Some).collect();
        cache.extend(order.iter().map(|&o| slots[o].take().expect("order repeats a slot")));
    }

    /// Removes every atom from a cache. Free.
    pub fn clear_cache(&mut self, proc: usize) -> Result<()> {
        self.cache_mut(proc)?.clear();
        Ok(())
    }

    pub(crate) fn push_to_cache(&mut self, proc: usize, atom: Atom) -> Result<()> {
        let m = self.config.m;
        let cache = self.cache_mut(proc)?;
        if cache.len() + 1 > m {
            return Err(Error::CacheOverflow {
                proc,
                len: cache.len() + 1,
                capacity: m,
            });
        }
        cache.push(atom);
        Ok(())
    }

    /// Faithful map of shared memory; caches are ignored.
    pub fn snapshot_block_permutation(&self) -> BlockPermutation {
        let blocks = self
            .blocks
            .iter()
            .enumerate()
            .filter(|(i, _)| self.allocated[*i])
            .map(|(i, atoms)| (BlockId(i), atoms.iter().map(|a| a.id).collect()))
            .collect();
        BlockPermutation { blocks }
    }

    /// Every atom currently held anywhere, as `(location, atom)`.
    pub fn locations(&self) -> impl Iterator<Item = (Location, &Atom)> + '_ {
        let caches = self
            .caches
            .iter()
            .enumerate()
            .flat_map(|(p, c)| c.iter().map(move |a| (Location::Cache(p), a)));
        let blocks = self
            .blocks
            .iter()
            .enumerate()
            .filter(|(i, _)| self.allocated[*i])
            .flat_map(|(i, c)| c.iter().map(move |a| (Location::Block(BlockId(i)), a)));
        caches.chain(blocks)
    }

    /// Distinct atom ids held in shared memory or any cache.
    pub fn live_ids(&self) -> BTreeSet<AtomId> {
        self.locations().map(|(_, a)| a.id).collect()
    }

    /// Checks block and cache capacities.
    pub fn check_capacity(&self) -> Result<()> {
        for (proc, c) in self.caches.iter().enumerate() {
            if c.len() > self.config.m {
                return Err(Error::CacheOverflow {
                    proc,
                    len: c.len(),
                    capacity: self.config.m,
                });
            }
        }
        for (i, blk) in self.blocks.iter().enumerate() {
            if blk.len() > self.config.b {
                return Err(Error::BlockOverflow {
                    block: BlockId(i),
                    len: blk.len(),
                    capacity: self.config.b,
                });
            }
        }
        Ok(())
    }
}

/// A cache or a block of shared memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Location {
    Cache(usize),
    Block(BlockId),
}

/// Resolves a write selection to cache indices. Duplicate ids in the
/// selection need as many resident copies.
fn select(cache: &[Atom], ids: &[AtomId], proc: usize) -> Result<Vec<usize>> {
    if ids.len() <= cache.len() && ids.iter().zip(cache).all(|(id, a)| *id == a.id) {
        return Ok((0..ids.len()).collect());
    }
    if let Some(out) = select_distinct(cache, ids) {
        return match out.iter().position(|&i| i == usize::MAX) {
            Some(j) => Err(Error::NotResident { proc, atom: ids[j] }),
            None => Ok(out),
        };
    }
    // repeated ids: sort the selection, then one pass over the cache; each
    // occurrence claims its own resident copy
    let mut want: Vec<(AtomId, usize)> = ids.iter().copied().zip(0..).collect();
    want.sort_unstable();
    const UNSET: usize = usize::MAX;
    let mut out = vec![UNSET; ids.len()];
    let mut filled = 0;
    for (slot, a) in cache.iter().enumerate() {
        let mut i = want.partition_point(|w| w.0 < a.id);
        while i < want.len() && want[i].0 == a.id && out[want[i].1] != UNSET {
            i += 1;
        }
        if i < want.len() && want[i].0 == a.id {
            out[want[i].1] = slot;
            filled += 1;
            if filled == ids.len() {
                break;
            }
        }
    }
    if let Some(j) = out.iter().position(|&i| i == UNSET) {
        return Err(Error::NotResident { proc, atom: ids[j] });
    }
    Ok(out)
}

/// Cache slot per selected id via a small open-addressing table; `None`
/// when the selection repeats an id. Missing ids map to `usize::MAX`.
fn select_distinct(cache: &[Atom], ids: &[AtomId]) -> Option<Vec<usize>> {
    let bits = (2 * ids.len()).next_power_of_two().max(8).trailing_zeros();
    let mask = (1usize << bits) - 1;
    let slot = |id: AtomId| (id.0.wrapping_mul(0x9E37_79B9_7F4A_7C15) >> (64 - bits)) as usize;
    let mut small = [u32::MAX; 64];
    let mut big = Vec::new();
    let table: &mut [u32] = if mask < 64 {
        &mut small[..=mask]
    } else {
        big.resize(mask + 1, u32::MAX);
        &mut big
    };
    for (order, id) in ids.iter().enumerate() {
        let mut h = slot(*id);
        while table[h] != u32::MAX {
            if ids[table[h] as usize] == *id {
                return None;
            }
            h = (h + 1) & mask;
        }
        table[h] = order as u32;
    }
    let mut out = vec![usize::MAX; ids.len()];
    let mut filled = 0;
    for (i, a) in cache.iter().enumerate() {
        let mut h = slot(a.id);
        while table[h] != u32::MAX {
            let order = table[h] as usize;
            if ids[order] == a.id {
                if out[order] == usize::MAX {
                    out[order] = i;
                    filled += 1;
                }
                break;
            }
            h = (h + 1) & mask;
        }
        if filled == ids.len() {
            break;
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain(n: usize) -> Vec<Payload> {
        (0..n as u64).map(Payload::Plain).collect()
    }

    fn ids(v: &[u64]) -> BTreeSet<AtomId> {
        v.iter().map(|&i| AtomId(i)).collect()
    }

    #[test]
    fn new_machine_lays_out_b_per_block() {
        let m = Machine::new(MachineConfig::new(2, 4, 2, 4).unwrap(), plain(4)).unwrap();
        let snap = m.snapshot_block_permutation();
        assert_eq!(snap.get(BlockId(0)), Some(&ids(&[0, 1])));
        assert_eq!(snap.get(BlockId(1)), Some(&ids(&[2, 3])));
        assert_eq!(m.io_count(), 0);
        assert!(m.cache(0).is_empty() && m.cache(1).is_empty());
    }

    #[test]
    fn degenerate_single_atom_blocks() {
        let m = Machine::new(MachineConfig::new(1, 2, 1, 3).unwrap(), plain(3)).unwrap();
        assert_eq!(m.snapshot_block_permutation().blocks.len(), 3);
    }

    #[test]
    fn too_many_processors_is_a_config_error() {
        assert!(matches!(
            MachineConfig::new(8, 4, 2, 8),
            Err(Error::Config(_))
        ));
        assert!(matches!(MachineConfig::new(1, 3, 2, 8), Err(Error::Config(_))));
        assert!(matches!(MachineConfig::new(0, 4, 2, 8), Err(Error::Config(_))));
    }

    #[test]
    fn idle_step_costs_one_io() {
        let mut m = Machine::new(MachineConfig::new(2, 4, 2, 4).unwrap(), plain(4)).unwrap();
        let before = m.snapshot_block_permutation();
        m.execute_step(&ParallelStep::idle(2)).unwrap();
        assert_eq!(m.io_count(), 1);
        assert_eq!(m.trace().len(), 1);
        assert_eq!(m.snapshot_block_permutation(), before);
    }

    #[test]
    fn concurrent_reads_copy_into_both_caches() {
        let mut m = Machine::new(MachineConfig::new(2, 4, 2, 4).unwrap(), plain(4)).unwrap();
        let b0 = BlockId(0);
        m.execute_step(&ParallelStep::new(vec![Request::Read(b0), Request::Read(b0)]))
            .unwrap();
        for p in 0..2 {
            let got: Vec<_> = m.cache(p).iter().map(|a| a.id).collect();
            assert_eq!(got, vec![AtomId(0), AtomId(1)]);
        }
        assert_eq!(m.block(b0).unwrap().len(), 2);
    }

    #[test]
    fn two_writers_to_one_block_is_crew_violation() {
        let mut m = Machine::new(MachineConfig::new(2, 4, 2, 4).unwrap(), plain(4)).unwrap();
        m.execute_step(&ParallelStep::new(vec![
            Request::Read(BlockId(0)),
            Request::Read(BlockId(1)),
        ]))
        .unwrap();
        let dst = m.alloc_block();
        let err = m
            .execute_step(&ParallelStep::new(vec![
                Request::Write(dst, vec![AtomId(0)]),
                Request::Write(dst, vec![AtomId(2)]),
            ]))
            .unwrap_err();
        assert!(matches!(err, Error::CrewViolation { .. }));
        assert_eq!(m.io_count(), 1);
        assert_eq!(m.cache(0).len(), 2);
    }

    #[test]
    fn read_overflowing_cache_is_rejected() {
        let mut m = Machine::new(MachineConfig::new(1, 2, 1, 3).unwrap(), plain(3)).unwrap();
        for b in 0..2 {
            m.execute_step(&ParallelStep::new(vec![Request::Read(BlockId(b))]))
                .unwrap();
        }
        let err = m
            .execute_step(&ParallelStep::new(vec![Request::Read(BlockId(2))]))
            .unwrap_err();
        assert!(matches!(err, Error::CacheOverflow { .. }));
    }

    #[test]
    fn oversized_write_is_block_overflow() {
        let mut m = Machine::new(MachineConfig::new(1, 4, 2, 4).unwrap(), plain(4)).unwrap();
        m.execute_step(&ParallelStep::new(vec![Request::Read(BlockId(0))]))
            .unwrap();
        m.execute_step(&ParallelStep::new(vec![Request::Read(BlockId(1))]))
            .unwrap();
        let err = m
            .execute_step(&ParallelStep::new(vec![Request::Write(
                BlockId(0),
                vec![AtomId(0), AtomId(1), AtomId(2)],
            )]))
            .unwrap_err();
        assert!(matches!(err, Error::BlockOverflow { .. }));
    }

    #[test]
    fn write_of_nonresident_atom_fails() {
        let mut m = Machine::new(MachineConfig::new(1, 4, 2, 4).unwrap(), plain(4)).unwrap();
        let err = m
            .execute_step(&ParallelStep::new(vec![Request::Write(
                BlockId(0),
                vec![AtomId(0)],
            )]))
            .unwrap_err();
        assert!(matches!(err, Error::NotResident { .. }));
    }

    #[test]
    fn copy_and_delete_are_free() {
        let mut m = Machine::new(
            MachineConfig::new(1, 2, 1, 2).unwrap(),
            vec![
                Payload::Interval(IntervalPayload { lo: 0, hi: 1 }),
                Payload::Interval(IntervalPayload { lo: 1, hi: 2 }),
            ],
        )
        .unwrap();
        m.execute_step(&ParallelStep::new(vec![Request::Read(BlockId(0))]))
            .unwrap();
        let c = m.copy_atom(0, AtomId(0)).unwrap();
        assert_eq!(m.io_count(), 1);
        let cache = m.cache(0);
        assert_eq!(cache.len(), 2);
        assert_eq!(cache[1].payload, cache[0].payload);
        assert_eq!(cache[1].provenance, Provenance::Single(AtomId(0)));
        assert_ne!(c, AtomId(0));
        // full cache
        assert!(matches!(
            m.copy_atom(0, AtomId(0)),
            Err(Error::CacheOverflow { .. })
        ));
        m.delete_atom(0, c).unwrap();
        m.delete_atom(0, AtomId(0)).unwrap();
        assert!(matches!(
            m.delete_atom(0, AtomId(0)),
            Err(Error::NotResident { .. })
        ));
    }

    #[test]
    fn write_is_unordered_in_snapshot_and_empty_write_leaves_empty_set() {
        let mut m = Machine::new(MachineConfig::new(1, 4, 2, 4).unwrap(), plain(4)).unwrap();
        m.execute_step(&ParallelStep::new(vec![Request::Read(BlockId(0))]))
            .unwrap();
        m.execute_step(&ParallelStep::new(vec![Request::Write(
            BlockId(0),
            vec![AtomId(1), AtomId(0)],
        )]))
        .unwrap();
        assert_eq!(
            m.snapshot_block_permutation().get(BlockId(0)),
            Some(&ids(&[0, 1]))
        );
        m.execute_step(&ParallelStep::new(vec![Request::Write(BlockId(1), vec![])]))
            .unwrap();
        assert_eq!(
            m.snapshot_block_permutation().get(BlockId(1)),
            Some(&BTreeSet::new())
        );
    }

    #[test]
    fn normalized_mode_rejects_mixed_steps() {
        let mut m = Machine::new(MachineConfig::new(2, 4, 2, 4).unwrap(), plain(4)).unwrap();
        m.set_normalized(true);
        m.execute_step(&ParallelStep::new(vec![
            Request::Read(BlockId(0)),
            Request::Idle,
        ]))
        .unwrap();
        let err = m
            .execute_step(&ParallelStep::new(vec![
                Request::Write(BlockId(0), vec![AtomId(0)]),
                Request::Read(BlockId(1)),
            ]))
            .unwrap_err();
        assert_eq!(err, Error::NotNormalized);
    }

    #[test]
    fn split_issues_reads_then_writes() {
        let mut m = Machine::new(MachineConfig::new(2, 4, 2, 4).unwrap(), plain(4)).unwrap();
        m.set_normalized(true);
        m.execute_step(&ParallelStep::new(vec![Request::Read(BlockId(0)), Request::Idle]))
            .unwrap();
        let mixed = ParallelStep::new(vec![
            Request::Write(BlockId(1), vec![AtomId(0)]),
            Request::Read(BlockId(1)),
        ]);
        m.execute_split(&mixed).unwrap();
        assert_eq!(m.io_count(), 3);
        // the read saw block 1 before the write replaced it
        let got: Vec<AtomId> = m.cache(1).iter().map(|a| a.id).collect();
        assert_eq!(got, vec![AtomId(2), AtomId(3)]);
        assert_eq!(m.block(BlockId(1)).unwrap()[0].id, AtomId(0));

        let bad = ParallelStep::new(vec![
            Request::Write(BlockId(0), vec![AtomId(9)]),
            Request::Read(BlockId(0)),
        ]);
        assert!(matches!(m.execute_split(&bad), Err(Error::NotResident { .. })));
        assert_eq!(m.io_count(), 3);
    }

    #[test]
    fn trace_export_lists_active_processors() {
        let mut m = Machine::new(MachineConfig::new(2, 4, 2, 4).unwrap(), plain(4)).unwrap();
        m.execute_step(&ParallelStep::new(vec![Request::Read(BlockId(1)), Request::Idle]))
            .unwrap();
        assert_eq!(m.trace().export(), "0,0,read,1,2 3\n");
        assert_eq!(m.trace().find_crew_violation(), None);
    }
}
