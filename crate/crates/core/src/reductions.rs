//! Instance transformers between proximate neighbors, semigroup evaluation
//! and atomic edge contraction, the evaluators used to check them, and the
//! block-permutation counting bound for the special class of PN instances.
//!
//! Atom and cell indices are 0-based. Text serialization and edge vertex
//! labels are 1-based, with vertex `N + 1` as the path's sink.

use std::collections::{BTreeSet, HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::machine::schedule::{run_jobs, ProcJob};
use crate::machine::{
    AtomId, BlockId, BlockPermutation, EdgePayload, Machine, MachineConfig, OpKind, OpLog, Payload,
    Region, Request, SemigroupValue,
};
use crate::permute::{check_permutation, pem_permute};
use crate::pn::check_labeling;
use crate::variants::{edge_contract, semigroup_combine, SemigroupSpec};

fn parse_ints(line: Option<&str>, what: &str) -> Result<Vec<usize>> {
    let line = line.ok_or_else(|| Error::Parse(format!("missing {what} line")))?;
    line.split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad integer {t:?} in {what}"))))
        .collect()
}

fn content_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
}

fn parse_header(lines: &mut dyn Iterator<Item = &str>) -> Result<usize> {
    let n = parse_ints(lines.next(), "N")?;
    match n.as_slice() {
        [n] => Ok(*n),
        _ => Err(Error::Parse("first line must hold N alone".into())),
    }
}

fn one_based(v: &[usize]) -> String {
    v.iter().map(|x| (x + 1).to_string()).collect::<Vec<_>>().join(" ")
}

fn zero_based(v: Vec<usize>, what: &str) -> Result<Vec<usize>> {
    v.into_iter()
        .map(|x| x.checked_sub(1).ok_or_else(|| Error::Parse(format!("{what} values are 1-based"))))
        .collect()
}

/// Proximate neighbors instance: `labels[i]` in `0..N/2`, each used twice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PnInstance {
    pub labels: Vec<u64>,
}

impl PnInstance {
    pub fn new(labels: Vec<u64>) -> Result<Self> {
        check_labeling(&labels)?;
        Ok(PnInstance { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Label pairs `(x, y)` with `x < y`, ordered by label.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        check_labeling(&self.labels).expect("validated at construction")
    }

    pub fn to_text(&self) -> String {
        let l: Vec<usize> = self.labels.iter().map(|&x| x as usize).collect();
        format!("{}\n{}\n", self.len(), one_based(&l))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = content_lines(text);
        let n = parse_header(&mut lines)?;
        let l = zero_based(parse_ints(lines.next(), "labels")?, "label")?;
        if l.len() != n {
            return Err(Error::Parse(format!("{} labels for N = {n}", l.len())));
        }
        PnInstance::new(l.into_iter().map(|x| x as u64).collect())
    }
}

/// Which test semigroup an instance's atoms carry: atom `j` holds the word
/// `[j]` or the pair `(j, j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemigroupKind {
    Concatenation,
    Pairing,
}

impl SemigroupKind {
    pub fn spec(self) -> SemigroupSpec {
        match self {
            SemigroupKind::Concatenation => SemigroupSpec::concatenation(),
            SemigroupKind::Pairing => SemigroupSpec::pairing(),
        }
    }

    pub fn value(self, j: usize) -> SemigroupValue {
        match self {
            SemigroupKind::Concatenation => SemigroupValue::word(&[j as u32]),
            SemigroupKind::Pairing => SemigroupValue::Pair(j as u64, j as u64),
        }
    }
}

/// Evaluate `values[pi[0]] · values[pi[1]] · ... · values[pi[N-1]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemigroupInstance {
    pub pi: Vec<usize>,
    pub kind: SemigroupKind,
}

impl SemigroupInstance {
    pub fn new(pi: Vec<usize>, kind: SemigroupKind) -> Result<Self> {
        check_permutation(&pi)?;
        if pi.is_empty() {
            return Err(Error::NotAPermutation("empty".into()));
        }
        Ok(SemigroupInstance { pi, kind })
    }

    /// Uniform random order over `n` atoms.
    pub fn random(n: usize, kind: SemigroupKind, seed: u64) -> Result<Self> {
        use rand::seq::SliceRandom;
        let mut pi: Vec<usize> = (0..n).collect();
        pi.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        SemigroupInstance::new(pi, kind)
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    pub fn values(&self) -> Vec<SemigroupValue> {
        (0..self.len()).map(|j| self.kind.value(j)).collect()
    }

    /// `position[j]`: where atom `j` sits in the product.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.len()];
        for (i, &j) in self.pi.iter().enumerate() {
            pos[j] = i;
        }
        pos
    }

    /// The product computed directly on the host.
    pub fn direct_product(&self) -> SemigroupValue {
        let spec = self.kind.spec();
        let vals = self.values();
        spec.product(self.pi.iter().map(|&j| &vals[j]))
            .expect("test semigroups are total on their own values")
    }

    pub fn to_text(&self) -> String {
        let kind = match self.kind {
            SemigroupKind::Concatenation => "concatenation",
            SemigroupKind::Pairing => "pairing",
        };
        format!("{}\n{}\n{kind}\n", self.len(), one_based(&self.pi))
    }

    /// `N`, the order line, and optionally the semigroup name (default
    /// concatenation).
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = content_lines(text);
        let n = parse_header(&mut lines)?;
        let pi = zero_based(parse_ints(lines.next(), "order")?, "order")?;
        if pi.len() != n {
            return Err(Error::Parse(format!("{} entries for N = {n}", pi.len())));
        }
        let kind = match lines.next() {
            None | Some("concatenation") => SemigroupKind::Concatenation,
            Some("pairing") => SemigroupKind::Pairing,
            Some(other) => return Err(Error::Parse(format!("unknown semigroup {other:?}"))),
        };
        SemigroupInstance::new(pi, kind)
    }
}

/// Cell `j` holds one directed edge; the edges form a path from vertex
/// `pi[0] + 1` to `N + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeContractionInstance {
    pub edges: Vec<EdgePayload>,
}

impl EdgeContractionInstance {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Follows the path from its unique source; returns the visited vertices
    /// when it is a single path covering every edge.
    pub fn path(&self) -> Result<Vec<u64>> {
        let mut out: HashMap<u64, u64> = HashMap::new();
        let mut indeg: HashMap<u64, usize> = HashMap::new();
        for e in &self.edges {
            if e.src == e.dst || out.insert(e.src, e.dst).is_some() {
                return Err(Error::NotAPath(format!("vertex {} has two out-edges", e.src)));
            }
            *indeg.entry(e.dst).or_default() += 1;
        }
        let sources: Vec<u64> = out.keys().filter(|v| !indeg.contains_key(v)).copied().collect();
        let [s] = sources.as_slice() else {
            return Err(Error::NotAPath(format!("{} sources", sources.len())));
        };
        let mut walk = vec![*s];
        let mut v = *s;
        while let Some(&w) = out.get(&v) {
            if walk.len() > self.edges.len() {
                return Err(Error::NotAPath("cycle".into()));
            }
            walk.push(w);
            v = w;
        }
        if walk.len() != self.edges.len() + 1 {
            return Err(Error::NotAPath("edges off the path".into()));
        }
        Ok(walk)
    }

    /// Cell order of the edges along the path.
    pub fn path_order(&self) -> Result<Vec<usize>> {
        let walk = self.path()?;
        let by_src: HashMap<u64, usize> = self.edges.iter().enumerate().map(|(j, e)| (e.src, j)).collect();
        Ok(walk[..walk.len() - 1].iter().map(|v| by_src[v]).collect())
    }
}

/// Chooses an order in which each label's two atoms are adjacent at
/// positions `2i, 2i+1`; the order inside a pair is drawn from `seed`.
pub fn pn_to_semigroup(pn: &PnInstance, seed: u64) -> SemigroupInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pi = Vec::with_capacity(pn.len());
    for (x, y) in pn.pairs() {
        if rng.gen::<bool>() {
            pi.extend([x, y]);
        } else {
            pi.extend([y, x]);
        }
    }
    SemigroupInstance::new(pi, SemigroupKind::Pairing).expect("pairs cover every atom once")
}

/// Reads the pairs `{b, c}` off every combine `(a, b)·(c, d)` in a pairing
/// evaluation log. Fails unless some result covers all `N` atoms.
pub fn extract_pn_solution(log: &OpLog, se: &SemigroupInstance) -> Result<BTreeSet<(usize, usize)>> {
    let n = se.len();
    let mut val: HashMap<AtomId, (u64, u64, usize)> =
        (0..n).map(|j| (AtomId(j as u64), (j as u64, j as u64, 1))).collect();
    let mut pairs = BTreeSet::new();
    let mut complete = n == 1;
    for r in log.records() {
        match r.kind {
            OpKind::Copy => {
                if let Some(&v) = r.operands.first().and_then(|o| val.get(o)) {
                    val.insert(r.result, v);
                }
            }
            OpKind::Combine => {
                let (Some(&(a, b, k1)), Some(&(c, d, k2))) = (
                    r.operands.first().and_then(|o| val.get(o)),
                    r.operands.get(1).and_then(|o| val.get(o)),
                ) else {
                    continue;
                };
                let (x, y) = (b.min(c) as usize, b.max(c) as usize);
                pairs.insert((x, y));
                val.insert(r.result, (a, d, k1 + k2));
                complete |= k1 + k2 == n;
            }
            OpKind::Contract | OpKind::Fuse => {}
        }
    }
    if complete {
        Ok(pairs)
    } else {
        Err(Error::IncompleteEvaluation)
    }
}

/// Atom `pi[i]` becomes the edge `(pi[i] + 1, pi[i+1] + 1)` stored in cell
/// `pi[i]`, with `N + 1` after the last atom.
pub fn semigroup_to_edge_contraction(se: &SemigroupInstance) -> EdgeContractionInstance {
    let n = se.len();
    let mut edges = vec![EdgePayload { src: 0, dst: 0, weight: 1 }; n];
    for (i, &j) in se.pi.iter().enumerate() {
        let next = se.pi.get(i + 1).map_or(n as u64 + 1, |&k| k as u64 + 1);
        edges[j] = EdgePayload {
            src: j as u64 + 1,
            dst: next,
            weight: 1,
        };
    }
    EdgeContractionInstance { edges }
}

/// Shape of the evaluation tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalStrategy {
    LeftFold,
    Balanced,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub result: Payload,
    pub log: OpLog,
    pub io_count: u64,
}

#[derive(Clone, Copy)]
enum Combiner {
    Semigroup(SemigroupSpec),
    Contract,
}

impl Combiner {
    /// Joins two adjacent runs, leaving only the result in the cache.
    fn apply(&self, m: &mut Machine, proc: usize, x: AtomId, y: AtomId) -> Result<AtomId> {
        match self {
            Combiner::Semigroup(spec) => {
                let z = semigroup_combine(m, spec, proc, x, y)?;
                m.delete_atom(proc, x)?;
                m.delete_atom(proc, y)?;
                Ok(z)
            }
            Combiner::Contract => edge_contract(m, proc, x, y),
        }
    }

    /// Cache slots needed beyond the operands.
    fn scratch(&self) -> usize {
        match self {
            Combiner::Semigroup(_) => 1,
            Combiner::Contract => 0,
        }
    }
}

enum Task {
    Read(BlockId),
    /// Fold these atoms into the running accumulator.
    Fold(Vec<AtomId>),
    /// Reduce these atoms to one by pairing neighbours level by level.
    Tree(Vec<AtomId>),
    /// Write pending results until `room` more atoms fit in the cache.
    MakeRoom(usize),
    Flush,
}

struct ReduceJob {
    tasks: VecDeque<Task>,
    op: Combiner,
    acc: Option<AtomId>,
    pending: VecDeque<AtomId>,
    out: Vec<BlockId>,
    index: usize,
}

impl ReduceJob {
    fn write_pending(&mut self, m: &mut Machine) -> Request {
        let b = m.config().b;
        let ids: Vec<AtomId> = self.pending.drain(..b.min(self.pending.len())).collect();
        let blk = m.alloc_block();
        self.out.push(blk);
        Request::Write(blk, ids)
    }
}

impl ProcJob<Machine> for ReduceJob {
    fn poll(&mut self, proc: usize, m: &mut Machine) -> Result<Option<Request>> {
        while let Some(task) = self.tasks.front_mut() {
            match task {
                Task::Read(blk) => {
                    let blk = *blk;
                    self.tasks.pop_front();
                    return Ok(Some(Request::Read(blk)));
                }
                Task::Fold(ids) => {
                    for &id in ids.iter() {
                        self.acc = Some(match self.acc {
                            None => id,
                            Some(a) => self.op.apply(m, proc, a, id)?,
                        });
                    }
                    self.tasks.pop_front();
                }
                Task::Tree(ids) => {
                    let mut level = std::mem::take(ids);
                    while level.len() > 1 {
                        let mut next = Vec::with_capacity(level.len().div_ceil(2));
                        for pair in level.chunks(2) {
                            next.push(match pair {
                                [x, y] => self.op.apply(m, proc, *x, *y)?,
                                [x] => *x,
                                _ => unreachable!(),
                            });
                        }
                        level = next;
                    }
                    self.pending.extend(level);
                    self.tasks.pop_front();
                }
                Task::MakeRoom(room) => {
                    if self.pending.len() + *room > m.config().m {
                        return Ok(Some(self.write_pending(m)));
                    }
                    self.tasks.pop_front();
                }
                Task::Flush => {
                    if let Some(a) = self.acc.take() {
                        self.pending.push_back(a);
                    }
                    if !self.pending.is_empty() {
                        return Ok(Some(self.write_pending(m)));
                    }
                    self.tasks.pop_front();
                }
            }
        }
        Ok(None)
    }
}

/// Reduces the atoms of `region`, in region order, to one atom; returns the
/// region holding it. The input blocks are released.
fn reduce_region(m: &mut Machine, mut region: Region, strategy: EvalStrategy, op: Combiner) -> Result<Region> {
    let (p, cap) = (m.config().p, m.config().m);
    if cap < 2 + op.scratch() {
        return Err(Error::Config(format!("M = {cap} cannot hold two operands and a result")));
    }
    while region.len(m) > 1 {
        let mut queues: Vec<Vec<ReduceJob>> = (0..p).map(|_| Vec::new()).collect();
        let job = |index| ReduceJob {
            tasks: VecDeque::new(),
            op,
            acc: None,
            pending: VecDeque::new(),
            out: Vec::new(),
            index,
        };
        match strategy {
            EvalStrategy::LeftFold => {
                let mut j = job(0);
                for &blk in &region.blocks {
                    let ids = m.block(blk)?.iter().map(|a| a.id).collect();
                    j.tasks.push_back(Task::Read(blk));
                    j.tasks.push_back(Task::Fold(ids));
                }
                j.tasks.push_back(Task::Flush);
                queues[0].push(j);
            }
            EvalStrategy::Balanced => {
                // consecutive blocks whose atoms fit in the cache together
                // with the scratch slot
                let mut groups: Vec<Vec<BlockId>> = Vec::new();
                let mut size = 0;
                for &blk in &region.blocks {
                    let k = m.block_len(blk)?;
                    match groups.last_mut() {
                        Some(g) if size + k + op.scratch() <= cap => {
                            g.push(blk);
                            size += k;
                        }
                        _ => {
                            groups.push(vec![blk]);
                            size = k;
                        }
                    }
                }
                let per_proc = groups.len().div_ceil(p);
                for (k, mine) in groups.chunks(per_proc).enumerate() {
                    let mut j = job(k);
                    for g in mine {
                        let mut ids = Vec::new();
                        for &blk in g.iter() {
                            ids.extend(m.block(blk)?.iter().map(|a| a.id));
                        }
                        j.tasks.push_back(Task::MakeRoom(ids.len() + op.scratch()));
                        for &blk in g.iter() {
                            j.tasks.push_back(Task::Read(blk));
                        }
                        j.tasks.push_back(Task::Tree(ids));
                    }
                    j.tasks.push_back(Task::Flush);
                    queues[k].push(j);
                }
            }
        }
        let mut done: Vec<ReduceJob> = run_jobs(m, queues)?.into_iter().flatten().collect();
        done.sort_by_key(|j| j.index);
        m.release_region(&region)?;
        region = Region::new(done.into_iter().flat_map(|j| j.out).collect());
    }
    Ok(region)
}

fn evaluate(m: &mut Machine, order: &[usize], strategy: EvalStrategy, op: Combiner) -> Result<Evaluation> {
    let input = m.initial_region();
    let mut target = vec![0; order.len()];
    for (i, &j) in order.iter().enumerate() {
        target[j] = i;
    }
    let placed = pem_permute(m, &input, &target)?;
    let last = reduce_region(m, placed, strategy, op)?;
    let result = last
        .atoms(m)
        .next()
        .ok_or_else(|| Error::Internal("reduction left no atom".into()))?
        .payload
        .clone();
    Ok(Evaluation {
        result,
        log: m.op_log().clone(),
        io_count: m.io_count(),
    })
}

/// Evaluates `se` on a machine: permute into product order, then reduce.
pub fn solve_semigroup(se: &SemigroupInstance, config: MachineConfig, strategy: EvalStrategy) -> Result<Evaluation> {
    let payloads = se.values().into_iter().map(Payload::Semigroup).collect();
    let mut m = Machine::new(config, payloads)?;
    evaluate(&mut m, &se.pi, strategy, Combiner::Semigroup(se.kind.spec()))
}

/// Contracts the path of `ec` to a single edge on a machine.
pub fn solve_edge_contraction(
    ec: &EdgeContractionInstance,
    config: MachineConfig,
    strategy: EvalStrategy,
) -> Result<Evaluation> {
    let order = ec.path_order()?;
    let payloads = ec.edges.iter().map(|&e| Payload::Edge(e)).collect();
    let mut m = Machine::new(config, payloads)?;
    evaluate(&mut m, &order, strategy, Combiner::Contract)
}

/// Replays the contractions of an edge-contraction log as combines over
/// `se`'s values; returns the value of the last result.
pub fn replay_contractions(log: &OpLog, se: &SemigroupInstance) -> Result<SemigroupValue> {
    let spec = se.kind.spec();
    let mut val: HashMap<AtomId, SemigroupValue> = se
        .values()
        .into_iter()
        .enumerate()
        .map(|(j, v)| (AtomId(j as u64), v))
        .collect();
    let mut last = (se.len() == 1).then(|| se.kind.value(0));
    let mut covered: HashMap<AtomId, usize> = (0..se.len()).map(|j| (AtomId(j as u64), 1)).collect();
    let mut full = se.len() == 1;
    for r in log.records() {
        let (Some(x), Some(y)) = (
            r.operands.first().and_then(|o| val.get(o)),
            r.operands.get(1).and_then(|o| val.get(o)),
        ) else {
            return Err(Error::IncompleteEvaluation);
        };
        let z = spec
            .apply(x, y)
            .ok_or_else(|| Error::Internal("replayed values outside the semigroup".into()))?;
        let k = covered[&r.operands[0]] + covered[&r.operands[1]];
        covered.insert(r.result, k);
        full |= k == se.len();
        val.insert(r.result, z.clone());
        last = Some(z);
    }
    match last {
        Some(v) if full => Ok(v),
        _ => Err(Error::IncompleteEvaluation),
    }
}

/// All `(N/2)!` special instances: atom `i < N/2` carries label `i`, the
/// second half carries the labels in every order.
pub fn enumerate_special_instances(n: usize) -> Result<Vec<PnInstance>> {
    if n > 12 {
        return Err(Error::TooLarge(n));
    }
    if n % 2 == 1 || n == 0 {
        return Err(Error::BadLabeling(format!("{n} atoms")));
    }
    let h = n / 2;
    let mut out = Vec::new();
    let mut perm: Vec<u64> = (0..h as u64).collect();
    // Heap's algorithm
    let mut c = vec![0usize; h];
    let push = |perm: &[u64], out: &mut Vec<PnInstance>| {
        let labels = (0..h as u64).chain(perm.iter().copied()).collect();
        out.push(PnInstance { labels });
    };
    push(&perm, &mut out);
    let mut i = 0;
    while i < h {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            push(&perm, &mut out);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(out)
}

fn factorial(k: usize) -> u128 {
    (1..=k as u128).product()
}

/// Number of special instances (see [`enumerate_special_instances`]) that
/// the layout solves: the product over blocks of `k!` when a block holds `k`
/// atoms of each half, zero if any block is unbalanced.
pub fn count_solved_instances(out: &BlockPermutation, n: usize, b: usize) -> Result<u128> {
    if n % 2 == 1 {
        return Err(Error::NotSpecialClass(format!("odd N = {n}")));
    }
    out.validate(b).map_err(Error::NotSpecialClass)?;
    let ids: BTreeSet<u64> = out.blocks.values().flatten().map(|a| a.0).collect();
    if ids.len() != n || ids.iter().next_back().is_some_and(|&x| x as usize >= n) {
        return Err(Error::NotSpecialClass(format!(
            "layout holds {} atoms, not ids 0..{n}",
            ids.len()
        )));
    }
    let h = n as u64 / 2;
    let mut count: u128 = 1;
    for set in out.blocks.values() {
        let first = set.iter().filter(|a| a.0 < h).count();
        let second = set.len() - first;
        if first != second {
            count = 0;
        } else {
            count *= factorial(first);
        }
    }
    let bound = ((b / 2) as u128).pow(h as u32);
    if count > bound {
        return Err(Error::Internal(format!("count {count} exceeds (B/2)^(N/2) = {bound}")));
    }
    Ok(count)
}
