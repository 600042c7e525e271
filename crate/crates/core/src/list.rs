//! Randomized list ranking by independent-set contraction.
//!
//! Link structure and weights live in host-side records; the machine holds
//! one plain atom per element and is driven through the sorts, scans and
//! message exchanges that a real implementation performs, so that the I/O
//! count is honest while the bookkeeping stays simple.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cost::bar_log;
use crate::error::{Error, Result};
use crate::machine::{Atom, AtomId, BlockId, Machine, ParallelStep, Region, Request};
use crate::permute::pem_permute;
use crate::sort::{copy_ranges, pem_merge_sort, scan_region};

/// A singly linked list over elements `0..n`. `ids` are the external names
/// used by the text format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkedListInstance {
    pub ids: Vec<u64>,
    pub succ: Vec<Option<usize>>,
}

impl LinkedListInstance {
    /// A list visiting `0..n` in uniformly random order.
    pub fn random(n: usize, seed: u64) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut succ = vec![None; n];
        for w in order.windows(2) {
            succ[w[0]] = Some(w[1]);
        }
        LinkedListInstance {
            ids: (0..n as u64).collect(),
            succ,
        }
    }

    /// The chain `0 -> 1 -> ... -> n-1`.
    pub fn chain(n: usize) -> Self {
        LinkedListInstance {
            ids: (0..n as u64).collect(),
            succ: (0..n).map(|i| (i + 1 < n).then_some(i + 1)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.succ.len()
    }

    pub fn is_empty(&self) -> bool {
        self.succ.is_empty()
    }

    /// Parses `id successor` lines; the successor of the last element is
    /// `TAIL`. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
                return Err(Error::Parse(format!("line {}: expected `id successor`", ln + 1)));
            };
            let id: u64 = a
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad id {a:?}", ln + 1)))?;
            let succ = if b == "TAIL" {
                None
            } else {
                Some(b.parse::<u64>().map_err(|_| {
                    Error::Parse(format!("line {}: bad successor {b:?}", ln + 1))
                })?)
            };
            pairs.push((id, succ));
        }
        let index: HashMap<u64, usize> = pairs.iter().enumerate().map(|(i, p)| (p.0, i)).collect();
        if index.len() != pairs.len() {
            return Err(Error::NotAPath("duplicate element id".into()));
        }
        let succ = pairs
            .iter()
            .map(|(_, s)| match s {
                None => Ok(None),
                Some(s) => index
                    .get(s)
                    .map(|&i| Some(i))
                    .ok_or_else(|| Error::NotAPath(format!("unknown successor {s}"))),
            })
            .collect::<Result<_>>()?;
        Ok(LinkedListInstance {
            ids: pairs.iter().map(|p| p.0).collect(),
            succ,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.succ.iter().enumerate() {
            match s {
                Some(s) => writeln!(out, "{} {}", self.ids[i], self.ids[*s]),
                None => writeln!(out, "{} TAIL", self.ids[i]),
            }
            .unwrap();
        }
        out
    }

    /// `id rank` lines in element order.
    pub fn format_ranks(&self, ranks: &[u64]) -> String {
        let mut out = String::new();
        for (i, r) in ranks.iter().enumerate() {
            writeln!(out, "{} {r}", self.ids[i]).unwrap();
        }
        out
    }
}

/// A list with predecessor links.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DoublyLinked {
    pub succ: Vec<Option<usize>>,
    pub pred: Vec<Option<usize>>,
    pub head: usize,
    pub tail: usize,
}

/// Adds predecessor links, rejecting anything but one simple path.
pub fn make_doubly_linked(list: &LinkedListInstance) -> Result<DoublyLinked> {
    let n = list.len();
    if n == 0 {
        return Err(Error::NotAPath("empty list".into()));
    }
    let mut pred = vec![None; n];
    let mut tail = None;
    for (x, s) in list.succ.iter().enumerate() {
        match *s {
            None => {
                if tail.replace(x).is_some() {
                    return Err(Error::NotAPath("more than one tail".into()));
                }
            }
            Some(s) if s >= n || s == x => {
                return Err(Error::NotAPath(format!("bad successor of {}", list.ids[x])))
            }
            Some(s) => {
                if pred[s].replace(x).is_some() {
                    return Err(Error::NotAPath(format!(
                        "two elements point to {}",
                        list.ids[s]
                    )));
                }
            }
        }
    }
    let tail = tail.ok_or_else(|| Error::NotAPath("no tail".into()))?;
    let head = (0..n)
        .find(|&x| pred[x].is_none())
        .ok_or_else(|| Error::NotAPath("cycle".into()))?;
    let mut seen = 1;
    let mut x = head;
    while let Some(s) = list.succ[x] {
        x = s;
        seen += 1;
        if seen > n {
            break;
        }
    }
    if seen != n {
        return Err(Error::NotAPath("links do not reach every element".into()));
    }
    Ok(DoublyLinked {
        succ: list.succ.clone(),
        pred,
        head,
        tail,
    })
}

/// Ranks by one traversal: distance to the tail.
pub fn sequential_rank_oracle(list: &LinkedListInstance) -> Result<Vec<u64>> {
    let d = make_doubly_linked(list)?;
    let n = list.len();
    let mut ranks = vec![0u64; n];
    let mut x = d.head;
    for r in (0..n as u64).rev() {
        ranks[x] = r;
        match list.succ[x] {
            Some(s) => x = s,
            None => break,
        }
    }
    Ok(ranks)
}

/// One coin per element, reproducible from `(seed, stream)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoinVector(pub Vec<bool>);

impl CoinVector {
    pub fn draw(n: usize, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        CoinVector((0..n).map(|_| rng.gen::<bool>()).collect())
    }

    pub fn get(&self, x: usize) -> bool {
        self.0[x]
    }
}

/// One bridged-out element: its neighbours and the weight of its outgoing
/// link at removal time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Removal {
    pub elem: usize,
    pub pred: Option<usize>,
    pub succ: usize,
    pub weight: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BridgeRecord {
    pub rounds: Vec<Vec<Removal>>,
}

/// The shrinking list during contraction. `weight[x]` is the length of the
/// link from `x` to its current successor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ListState {
    pub succ: Vec<Option<usize>>,
    pub pred: Vec<Option<usize>>,
    pub weight: Vec<u64>,
    pub alive: Vec<bool>,
    pub live: usize,
    pub head: usize,
    /// Total weight carried away by removed heads.
    pub shed: u64,
}

impl ListState {
    pub fn new(d: &DoublyLinked) -> Self {
        let n = d.succ.len();
        ListState {
            succ: d.succ.clone(),
            pred: d.pred.clone(),
            weight: d.succ.iter().map(|s| u64::from(s.is_some())).collect(),
            alive: vec![true; n],
            live: n,
            head: d.head,
            shed: 0,
        }
    }

    /// Live elements from head to tail.
    pub fn chain(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.live);
        let mut x = Some(self.head);
        while let Some(e) = x {
            out.push(e);
            x = self.succ[e];
        }
        out
    }

    /// Live link weights plus weight shed by removed heads; always `N - 1`.
    pub fn weight_total(&self) -> u64 {
        let live: u64 = (0..self.alive.len())
            .filter(|&x| self.alive[x] && self.succ[x].is_some())
            .map(|x| self.weight[x])
            .sum();
        live + self.shed
    }
}

/// `x` is sampled iff its coin is 1, it has a successor and the successor's
/// coin is 0.
pub fn sample_independent_set(st: &ListState, live: &[usize], coins: &CoinVector) -> Vec<usize> {
    live.iter()
        .copied()
        .filter(|&x| coins.get(x) && st.succ[x].is_some_and(|s| !coins.get(s)))
        .collect()
}

/// Links each removed element's predecessor to its successor and moves the
/// element's link weight onto the predecessor's link.
pub fn bridge_out(st: &mut ListState, set: &[usize]) -> Result<Vec<Removal>> {
    let mut in_set = HashMap::with_capacity(set.len());
    for &x in set {
        if !st.alive.get(x).copied().unwrap_or(false) {
            return Err(Error::DependentSet(format!("element {x} is not live")));
        }
        if in_set.insert(x, ()).is_some() {
            return Err(Error::DependentSet(format!("element {x} listed twice")));
        }
    }
    for &x in set {
        let Some(s) = st.succ[x] else {
            return Err(Error::DependentSet(format!("tail {x} selected")));
        };
        if in_set.contains_key(&s) {
            return Err(Error::DependentSet(format!("{x} and its successor {s}")));
        }
    }
    let mut round = Vec::with_capacity(set.len());
    for &x in set {
        let s = st.succ[x].unwrap();
        let p = st.pred[x];
        let w = st.weight[x];
        round.push(Removal {
            elem: x,
            pred: p,
            succ: s,
            weight: w,
        });
        match p {
            Some(p) => {
                st.succ[p] = Some(s);
                st.weight[p] += w;
            }
            None => {
                st.head = s;
                st.shed += w;
            }
        }
        st.pred[s] = p;
        st.alive[x] = false;
        st.live -= 1;
    }
    Ok(round)
}

/// Reinserts removed elements in reverse order of removal. Elements still
/// live are ranked by walking the remaining chain.
pub fn unwind_ranks(st: &ListState, record: &BridgeRecord) -> Result<Vec<u64>> {
    let n = st.alive.len();
    let mut rank: Vec<Option<u64>> = vec![None; n];
    let chain = st.chain();
    let mut acc = 0u64;
    for &x in chain.iter().rev() {
        if let Some(_s) = st.succ[x] {
            acc += st.weight[x];
        }
        rank[x] = Some(acc);
    }
    for round in record.rounds.iter().rev() {
        for r in round {
            if rank[r.elem].is_some() {
                return Err(Error::CorruptRecord(format!("element {} reinserted twice", r.elem)));
            }
            let base = rank[r.succ].ok_or_else(|| {
                Error::CorruptRecord(format!("successor {} of {} unranked", r.succ, r.elem))
            })?;
            rank[r.elem] = Some(base + r.weight);
        }
    }
    rank.into_iter()
        .enumerate()
        .map(|(x, r)| r.ok_or_else(|| Error::CorruptRecord(format!("element {x} never reinserted"))))
        .collect()
}

/// `max{1, floor(log2 P)}` capped at `B`.
pub fn queue_len(p: usize, b: usize) -> usize {
    (bar_log(p as f64).floor() as usize).max(1).min(b)
}

/// Size at which contraction hands over to the queue phase.
pub fn cutoff(p: usize, b: usize) -> usize {
    p * queue_len(p, b)
}

fn alg1_guard(n: usize) -> usize {
    let l = (n.max(2) as f64).ln() / (4.0f64 / 3.0).ln();
    (8.0 * l).ceil() as usize
}

fn alg2_guard(p: usize) -> usize {
    64 * (p as f64).log2().ceil().max(1.0) as usize
}

const ALG2_STREAM: u64 = 1 << 32;

/// Machine-side state of a ranking run.
pub struct ListRun {
    pub state: ListState,
    pub record: BridgeRecord,
    /// Live elements, one plain atom each.
    pub live: Region,
    /// Per contraction round, the atoms removed in it.
    pub removed: Vec<Region>,
    pub alg1_rounds: usize,
    pub alg1_sizes: Vec<usize>,
    pub alg2_rounds: usize,
    alg2: Option<Alg2Layout>,
    seed: u64,
    n0: usize,
}

struct Alg2Layout {
    queues: Vec<Vec<usize>>,
    region: Region,
    owner: Vec<usize>,
    first_round: usize,
}

fn elem(a: &Atom) -> usize {
    a.payload.as_plain().expect("list atoms are plain") as usize
}

fn link_key(v: Option<usize>) -> u64 {
    v.map_or(u64::MAX, |x| x as u64)
}

impl ListRun {
    /// Starts a run on a machine whose region holds one plain atom per list
    /// element (payload = element index).
    pub fn new(d: &DoublyLinked, live: Region, seed: u64) -> Self {
        let n0 = d.succ.len();
        ListRun {
            state: ListState::new(d),
            record: BridgeRecord::default(),
            live,
            removed: Vec::new(),
            alg1_rounds: 0,
            alg1_sizes: vec![n0],
            alg2_rounds: 0,
            alg2: None,
            seed,
            n0,
        }
    }
}

/// Contracts by random independent sets until at most `cutoff` elements are
/// live.
pub fn list_rank_alg1(m: &mut Machine, run: &mut ListRun, cutoff: usize) -> Result<()> {
    let guard = alg1_guard(run.n0);
    while run.state.live > cutoff {
        if run.alg1_rounds >= guard {
            return Err(Error::GuardTripped {
                rounds: run.alg1_rounds,
                limit: guard,
            });
        }
        let round = run.alg1_rounds as u64;
        let coins = CoinVector::draw(run.n0, run.seed, round);

        // bring each element next to its successor's coin
        let st = &run.state;
        let sorted = pem_merge_sort(m, &run.live, |a| link_key(st.succ[elem(a)]))?;
        scan_region(m, &sorted)?;
        let live = run.live_elems_of(m, &sorted);
        let set = sample_independent_set(&run.state, &live, &coins);

        // predecessors learn their new successor, successors their new
        // predecessor, then removed elements are moved to the back
        let st = &run.state;
        let by_pred = pem_merge_sort(m, &sorted, |a| link_key(st.pred[elem(a)]))?;
        let round_rec = bridge_out(&mut run.state, &set)?;
        let st = &run.state;
        let by_succ = pem_merge_sort(m, &by_pred, |a| link_key(st.succ[elem(a)]))?;
        scan_region(m, &by_succ)?;
        let alive = &run.state.alive;
        let compact = pem_merge_sort(m, &by_succ, |a| u64::from(!alive[elem(a)]))?;
        scan_region(m, &compact)?;
        let n = compact.len(m);
        let keep = n - set.len();
        let b = m.config().b;
        let mut parts = copy_ranges(m, &compact, &[(0, keep), (keep, n)], b)?;
        m.release_region(&compact)?;
        let gone = parts.pop().unwrap();
        run.live = parts.pop().unwrap();
        run.removed.push(gone);
        run.record.rounds.push(round_rec);
        run.alg1_rounds += 1;
        run.alg1_sizes.push(run.state.live);
    }
    Ok(())
}

impl ListRun {
    fn live_elems_of(&self, m: &Machine, r: &Region) -> Vec<usize> {
        r.atoms(m).map(elem).collect()
    }
}

/// Sends copies of atoms between caches through one scratch block per
/// processor. Each message is `(sender, atom, receiver)`; the atom must be in
/// the sender's cache. Costs one write step per `B` copies a sender holds,
/// plus one read step per distinct scratch block a receiver needs.
fn exchange(m: &mut Machine, scratch: &[BlockId], msgs: &[(usize, AtomId, usize)]) -> Result<()> {
    let p = m.config().p;
    let b = m.config().b;
    let mut outbox: Vec<Vec<AtomId>> = vec![Vec::new(); p];
    let mut wants: Vec<Vec<(usize, usize)>> = vec![Vec::new(); p];
    for &(s, atom, r) in msgs {
        if s == r {
            continue;
        }
        let slot = match outbox[s].iter().position(|&a| a == atom) {
            Some(i) => i,
            None => {
                outbox[s].push(atom);
                outbox[s].len() - 1
            }
        };
        wants[r].push((s, slot / b));
    }
    let waves = outbox.iter().map(|o| o.len().div_ceil(b)).max().unwrap_or(0);
    for w in 0..waves {
        let mut reqs = vec![Request::Idle; p];
        for s in 0..p {
            let chunk: Vec<AtomId> = outbox[s].iter().skip(w * b).take(b).copied().collect();
            if chunk.is_empty() {
                continue;
            }
            let copies = chunk
                .iter()
                .map(|&a| m.copy_atom(s, a))
                .collect::<Result<Vec<_>>>()?;
            reqs[s] = Request::Write(scratch[s], copies);
        }
        m.execute_step(&ParallelStep::new(reqs))?;

        let mut reads: Vec<Vec<usize>> = wants
            .iter()
            .map(|ws| {
                let mut v: Vec<usize> = ws.iter().filter(|x| x.1 == w).map(|x| x.0).collect();
                v.sort_unstable();
                v.dedup();
                v
            })
            .collect();
        let steps = reads.iter().map(Vec::len).max().unwrap_or(0);
        for _ in 0..steps {
            let mut reqs = vec![Request::Idle; p];
            let mut got = vec![None; p];
            for r in 0..p {
                if let Some(s) = reads[r].pop() {
                    reqs[r] = Request::Read(scratch[s]);
                    got[r] = Some(s);
                }
            }
            m.execute_step(&ParallelStep::new(reqs))?;
            for (r, s) in got.into_iter().enumerate() {
                if let Some(s) = s {
                    let ids: Vec<AtomId> = m.block(scratch[s])?.iter().map(|a| a.id).collect();
                    for id in ids {
                        m.delete_atom(r, id)?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// One step in which every processor with a queue reads its queue block.
fn load_queues(m: &mut Machine, region: &Region) -> Result<()> {
    let p = m.config().p;
    let mut reqs = vec![Request::Idle; p];
    for (i, blk) in region.blocks.iter().enumerate() {
        reqs[i] = Request::Read(*blk);
    }
    m.execute_step(&ParallelStep::new(reqs))
}

/// One step in which every processor writes its queue atoms back.
fn store_queues(m: &mut Machine, region: &Region) -> Result<()> {
    let p = m.config().p;
    let mut reqs = vec![Request::Idle; p];
    for (i, blk) in region.blocks.iter().enumerate() {
        let ids: Vec<AtomId> = m.cache(i).iter().map(|a| a.id).collect();
        reqs[i] = Request::Write(*blk, ids);
    }
    m.execute_step(&ParallelStep::new(reqs))
}

/// Queue phase: each processor holds a short queue of live elements and
/// repeatedly tries to bridge out its queue head.
pub fn list_rank_alg2(m: &mut Machine, run: &mut ListRun) -> Result<()> {
    let cfg = *m.config();
    let q = queue_len(cfg.p, cfg.b);
    if run.state.live > cfg.p * q {
        return Err(Error::Config(format!(
            "{} live elements exceed the queue capacity {}",
            run.state.live,
            cfg.p * q
        )));
    }
    if run.state.live <= 1 {
        return Ok(());
    }
    let n = run.live.len(m);
    let region = copy_ranges(m, &run.live, &[(0, n)], q)?.pop().unwrap();
    m.release_region(&run.live)?;
    run.live = Region::default();
    let queues: Vec<Vec<usize>> = region
        .blocks
        .iter()
        .map(|b| m.block(*b).map(|atoms| atoms.iter().map(elem).collect()))
        .collect::<Result<_>>()?;
    let mut owner = vec![usize::MAX; run.n0];
    for (i, qu) in queues.iter().enumerate() {
        for &x in qu {
            owner[x] = i;
        }
    }
    load_queues(m, &region)?;
    let scratch: Vec<BlockId> = (0..cfg.p).map(|_| m.alloc_block()).collect();
    let first_round = run.record.rounds.len();
    let guard = alg2_guard(cfg.p);
    let mut front = vec![0usize; queues.len()];
    loop {
        let st = &run.state;
        let mut nominees = Vec::new();
        for (i, qu) in queues.iter().enumerate() {
            while front[i] < qu.len()
                && (!st.alive[qu[front[i]]] || st.succ[qu[front[i]]].is_none())
            {
                front[i] += 1;
            }
            if let Some(&x) = qu.get(front[i]) {
                nominees.push(x);
            }
        }
        if nominees.is_empty() {
            break;
        }
        if run.alg2_rounds >= guard {
            return Err(Error::GuardTripped {
                rounds: run.alg2_rounds,
                limit: guard,
            });
        }
        let coins = CoinVector::draw(run.n0, run.seed, ALG2_STREAM + run.alg2_rounds as u64);
        let mut is_nominee = vec![false; run.n0];
        for &x in &nominees {
            is_nominee[x] = true;
        }
        let msgs: Vec<_> = nominees
            .iter()
            .map(|&x| {
                let s = st.succ[x].unwrap();
                (owner[s], AtomId(s as u64), owner[x])
            })
            .collect();
        exchange(m, &scratch, &msgs)?;
        let winners: Vec<usize> = nominees
            .iter()
            .copied()
            .filter(|&x| {
                let s = st.succ[x].unwrap();
                coins.get(x) && (!is_nominee[s] || !coins.get(s))
            })
            .collect();
        let mut msgs = Vec::new();
        for &x in &winners {
            if let Some(p) = st.pred[x] {
                msgs.push((owner[x], AtomId(x as u64), owner[p]));
            }
            let s = st.succ[x].unwrap();
            msgs.push((owner[x], AtomId(x as u64), owner[s]));
        }
        exchange(m, &scratch, &msgs)?;
        let rec = bridge_out(&mut run.state, &winners)?;
        run.record.rounds.push(rec);
        run.alg2_rounds += 1;
    }
    store_queues(m, &region)?;
    for s in scratch {
        m.release_block(s)?;
    }
    run.alg2 = Some(Alg2Layout {
        queues,
        region,
        owner,
        first_round,
    });
    Ok(())
}

/// Charges the reverse pass on the machine and returns the exact ranks.
pub fn unwind_on_machine(m: &mut Machine, run: &mut ListRun) -> Result<Vec<u64>> {
    let cfg = *m.config();
    let mut ranked = match run.alg2.take() {
        Some(layout) => {
            load_queues(m, &layout.region)?;
            let scratch: Vec<BlockId> = (0..cfg.p).map(|_| m.alloc_block()).collect();
            for round in run.record.rounds[layout.first_round..].iter().rev() {
                let msgs: Vec<_> = round
                    .iter()
                    .map(|r| (layout.owner[r.succ], AtomId(r.succ as u64), layout.owner[r.elem]))
                    .collect();
                exchange(m, &scratch, &msgs)?;
            }
            store_queues(m, &layout.region)?;
            for s in scratch {
                m.release_block(s)?;
            }
            debug_assert_eq!(layout.queues.len(), layout.region.blocks.len());
            layout.region
        }
        None => std::mem::take(&mut run.live),
    };
    while let Some(gone) = run.removed.pop() {
        let mut both = ranked.clone();
        both.blocks.extend(gone.blocks.iter().copied());
        let succ = &run.state.succ;
        let sorted = pem_merge_sort(m, &both, |a| link_key(succ[elem(a)]))?;
        scan_region(m, &sorted)?;
        ranked = sorted;
    }
    run.live = ranked;
    unwind_ranks(&run.state, &run.record)
}

/// Result of a full ranking run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ListRankOutcome {
    pub ranks: Vec<u64>,
    pub alg1_rounds: usize,
    pub alg1_sizes: Vec<usize>,
    pub alg2_rounds: usize,
    pub io_count: u64,
}

/// Ranks `list` on a fresh machine with the given `P`, `M`, `B`.
pub fn rank_list(
    list: &LinkedListInstance,
    p: usize,
    mcap: usize,
    b: usize,
    seed: u64,
) -> Result<ListRankOutcome> {
    rank_list_with(list, p, mcap, b, seed, false)
}

/// `rank_list` with the machine optionally in normalized mode.
pub fn rank_list_with(
    list: &LinkedListInstance,
    p: usize,
    mcap: usize,
    b: usize,
    seed: u64,
    normalized: bool,
) -> Result<ListRankOutcome> {
    let d = make_doubly_linked(list)?;
    let n = list.len();
    let cfg = crate::machine::MachineConfig::new(p, mcap, b, n)?;
    let mut m = Machine::new(cfg, (0..n as u64).map(crate::machine::Payload::Plain).collect())?;
    m.set_trace_mode(crate::machine::TraceMode::Off);
    m.set_normalized(normalized);
    let region = m.initial_region();

    // predecessor links: send each element to its successor's cell and back
    let to_succ: Vec<usize> = d.succ.iter().map(|s| s.unwrap_or(d.head)).collect();
    let mut back = vec![0usize; n];
    for (x, &t) in to_succ.iter().enumerate() {
        back[t] = x;
    }
    let there = pem_permute(&mut m, &region, &to_succ)?;
    let region = pem_permute(&mut m, &there, &back)?;

    let mut run = ListRun::new(&d, region, seed);
    list_rank_alg1(&mut m, &mut run, cutoff(p, b))?;
    list_rank_alg2(&mut m, &mut run)?;
    let ranks = unwind_on_machine(&mut m, &mut run)?;
    Ok(ListRankOutcome {
        ranks,
        alg1_rounds: run.alg1_rounds,
        alg1_sizes: run.alg1_sizes,
        alg2_rounds: run.alg2_rounds,
        io_count: m.io_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::{MachineConfig, Payload};
    use proptest::prelude::*;

    fn oracle(list: &LinkedListInstance) -> Vec<u64> {
        // independent of make_doubly_linked: count steps to the tail
        (0..list.len())
            .map(|mut x| {
                let mut r = 0;
                while let Some(s) = list.succ[x] {
                    x = s;
                    r += 1;
                }
                r
            })
            .collect()
    }

    #[test]
    fn doubly_linked_chain() {
        let d = make_doubly_linked(&LinkedListInstance::chain(3)).unwrap();
        assert_eq!(d.pred, vec![None, Some(0), Some(1)]);
        let one = make_doubly_linked(&LinkedListInstance::chain(1)).unwrap();
        assert_eq!((one.pred[0], one.succ[0]), (None, None));
    }

    #[test]
    fn fork_and_cycle_are_not_paths() {
        let fork = LinkedListInstance {
            ids: vec![0, 1, 2],
            succ: vec![Some(2), Some(2), None],
        };
        assert!(matches!(make_doubly_linked(&fork), Err(Error::NotAPath(_))));
        let cyc = LinkedListInstance {
            ids: vec![0, 1, 2],
            succ: vec![Some(1), Some(0), None],
        };
        assert!(matches!(sequential_rank_oracle(&cyc), Err(Error::NotAPath(_))));
    }

    #[test]
    fn oracle_examples() {
        assert_eq!(sequential_rank_oracle(&LinkedListInstance::chain(3)).unwrap(), vec![2, 1, 0]);
        assert_eq!(sequential_rank_oracle(&LinkedListInstance::chain(1)).unwrap(), vec![0]);
        let big = LinkedListInstance::random(100_000, 5);
        let mut r = sequential_rank_oracle(&big).unwrap();
        r.sort_unstable();
        assert!(r.iter().enumerate().all(|(i, &v)| v == i as u64));
    }

    #[test]
    fn sample_rule_hand_example() {
        let d = make_doubly_linked(&LinkedListInstance::chain(5)).unwrap();
        let st = ListState::new(&d);
        let coins = CoinVector(vec![true, false, true, true, false]);
        let s = sample_independent_set(&st, &[0, 1, 2, 3, 4], &coins);
        assert_eq!(s, vec![0, 3]);
        let zeros = CoinVector(vec![false; 5]);
        assert!(sample_independent_set(&st, &[0, 1, 2, 3, 4], &zeros).is_empty());
    }

    #[test]
    fn coins_are_reproducible() {
        assert_eq!(CoinVector::draw(64, 9, 3), CoinVector::draw(64, 9, 3));
        assert_ne!(CoinVector::draw(64, 9, 3), CoinVector::draw(64, 9, 4));
    }

    #[test]
    fn bridge_examples() {
        let d = make_doubly_linked(&LinkedListInstance::chain(3)).unwrap();
        let mut st = ListState::new(&d);
        let r = bridge_out(&mut st, &[1]).unwrap();
        assert_eq!(st.succ[0], Some(2));
        assert_eq!(st.weight[0], 2);
        assert_eq!(r.len(), 1);
        assert!(bridge_out(&mut st, &[]).unwrap().is_empty());
        let mut st = ListState::new(&d);
        assert!(matches!(bridge_out(&mut st, &[0, 1]), Err(Error::DependentSet(_))));
        assert!(matches!(bridge_out(&mut st, &[2]), Err(Error::DependentSet(_))));
    }

    #[test]
    fn unwind_detects_double_reinsertion() {
        let d = make_doubly_linked(&LinkedListInstance::chain(3)).unwrap();
        let mut st = ListState::new(&d);
        let r = bridge_out(&mut st, &[1]).unwrap();
        let rec = BridgeRecord {
            rounds: vec![r.clone(), r],
        };
        assert!(matches!(unwind_ranks(&st, &rec), Err(Error::CorruptRecord(_))));
    }

    #[test]
    fn full_runs_small() {
        assert_eq!(rank_list(&LinkedListInstance::chain(3), 1, 2, 1, 1).unwrap().ranks, vec![2, 1, 0]);
        assert_eq!(rank_list(&LinkedListInstance::chain(1), 1, 2, 1, 1).unwrap().ranks, vec![0]);
    }

    #[test]
    fn alg1_cutoff_example() {
        let list = LinkedListInstance::random(1 << 12, 3);
        let out = rank_list(&list, 16, 16, 8, 3).unwrap();
        assert_eq!(cutoff(16, 8), 64);
        assert!(out.alg1_sizes.last().copied().unwrap() <= 64);
        assert_eq!(out.ranks, oracle(&list));
    }

    #[test]
    fn alg2_bridges_everything_once() {
        let list = LinkedListInstance::random(8, 11);
        let d = make_doubly_linked(&list).unwrap();
        let cfg = MachineConfig::new(4, 4, 2, 8).unwrap();
        let mut m = Machine::new(cfg, (0..8).map(Payload::Plain).collect()).unwrap();
        let region = m.initial_region();
        let mut run = ListRun::new(&d, region, 11);
        assert_eq!(cutoff(4, 2), 8);
        list_rank_alg2(&mut m, &mut run).unwrap();
        let removed: usize = run.record.rounds.iter().map(Vec::len).sum();
        assert_eq!(removed, 7);
        assert_eq!(run.state.live, 1);
        let ranks = unwind_on_machine(&mut m, &mut run).unwrap();
        assert_eq!(ranks, oracle(&list));
        for p in 0..4 {
            assert!(m.cache(p).is_empty());
        }
    }

    #[test]
    fn text_round_trip() {
        let list = LinkedListInstance::parse("7 3\n3 9\n9 TAIL\n").unwrap();
        assert_eq!(LinkedListInstance::parse(&list.to_text()).unwrap(), list);
        let ranks = sequential_rank_oracle(&list).unwrap();
        assert_eq!(list.format_ranks(&ranks), "7 2\n3 1\n9 0\n");
        assert!(LinkedListInstance::parse("1 x\n").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn ranking_matches_oracle(
            pe in 0u32..4, be in 0u32..3, me in 1u32..3, extra in 0usize..300, seed in any::<u64>()
        ) {
            let (p, b) = (1usize << pe, 1usize << be);
            let n = p * b + extra;
            let list = LinkedListInstance::random(n, seed);
            let out = rank_list(&list, p, b << me, b, seed).unwrap();
            prop_assert_eq!(out.ranks, oracle(&list));
        }

        #[test]
        fn contraction_keeps_weight_and_distances(n in 2usize..400, seed in any::<u64>()) {
            let list = LinkedListInstance::random(n, seed);
            let d = make_doubly_linked(&list).unwrap();
            let truth = oracle(&list);
            let mut st = ListState::new(&d);
            for round in 0..40u64 {
                let live: Vec<usize> = st.chain();
                let coins = CoinVector::draw(n, seed, round);
                let s = sample_independent_set(&st, &live, &coins);
                for &x in &s {
                    prop_assert!(!s.contains(&st.succ[x].unwrap()));
                }
                bridge_out(&mut st, &s).unwrap();
                prop_assert_eq!(st.weight_total(), n as u64 - 1);
                for x in st.chain() {
                    if let Some(sx) = st.succ[x] {
                        prop_assert_eq!(st.weight[x], truth[x] - truth[sx]);
                    }
                }
            }
        }
    }
}
