//! Guided interval fusion.
//!
//! Atoms are unit intervals `[k-1, k]` placed in memory by a hidden
//! permutation. Two atoms can only be fused when their intervals meet. The
//! guide owns a perfect binary tree over the boundaries `1..N-1` and reveals,
//! for every atom that knows none of its boundaries, the one lower in the
//! tree. The reference solver fuses along revealed boundaries with a maximum
//! matching per round.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::machine::schedule::{run_jobs, HasMachine, ProcJob};
use crate::machine::{
    AtomId, BlockId, IntervalPayload, IoTrace, Location, Machine, MachineConfig, Payload, Region,
    Request, TraceMode,
};
use crate::permute::pem_permute;
use crate::variants::{interval_fuse, AuditReport, FuseOutcome};

/// A game instance: atom `i` holds `[pi[i] - 1, pi[i]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GifInstance {
    pub n: usize,
    pub pi: Vec<u32>,
    pub config: MachineConfig,
}

/// An instance of size `N = 2^x` with `P = M = 2^(x/2)` and `B = M/2`, the
/// permutation drawn from `seed`.
pub fn generate_gif_instance(x: u32, seed: u64) -> Result<GifInstance> {
    if x % 2 == 1 || !(2..=30).contains(&x) {
        return Err(Error::Config(format!("exponent {x} must be even and in 2..=30")));
    }
    let n = 1usize << x;
    let mut pi: Vec<u32> = (1..=n as u32).collect();
    pi.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let m = 1usize << (x / 2);
    GifInstance::from_permutation(pi, MachineConfig::new(m, m, m / 2, n)?)
}

impl GifInstance {
    /// An instance with an explicit permutation of `1..=N` (`N` a power of
    /// two) and any valid machine.
    pub fn from_permutation(pi: Vec<u32>, config: MachineConfig) -> Result<Self> {
        let n = pi.len();
        if !n.is_power_of_two() || n < 2 {
            return Err(Error::Config(format!("N = {n} is not a power of two >= 2")));
        }
        if config.n != n {
            return Err(Error::Config(format!("machine N = {} for {n} atoms", config.n)));
        }
        config.validate()?;
        let target: Vec<usize> = pi.iter().map(|&v| (v as usize).wrapping_sub(1)).collect();
        crate::permute::check_permutation(&target)?;
        Ok(GifInstance { n, pi, config })
    }

    pub fn log_n(&self) -> u32 {
        self.n.trailing_zeros()
    }

    pub fn payloads(&self) -> Vec<Payload> {
        self.pi
            .iter()
            .map(|&k| Payload::Interval(IntervalPayload { lo: k - 1, hi: k }))
            .collect()
    }
}

/// Level of the tree node of boundary `p`; leaves are level 1, the root
/// `N/2` is level `log2 N + 1`.
pub fn level(p: u32) -> u32 {
    p.trailing_zeros() + 2
}

/// Half-width of the node of boundary `p`: its children cover
/// `[p - h, p]` and `[p, p + h]`.
fn half_width(p: u32) -> u32 {
    1 << (level(p) - 2)
}

/// Counts set flags over positions `1..=n`.
#[derive(Debug, Clone)]
struct Fenwick(Vec<u32>);

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick(vec![0; n + 1])
    }

    fn add(&mut self, mut i: usize) {
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    fn prefix(&self, mut i: usize) -> u32 {
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i &= i - 1;
        }
        s
    }
}

/// Revealed and solved flags for boundaries `1..N-1`. The domain ends `0`
/// and `N` are not boundaries.
#[derive(Debug, Clone)]
pub struct BoundaryState {
    n: u32,
    revealed: Vec<bool>,
    solved: Vec<bool>,
    solved_count: Fenwick,
    /// Reveals of a boundary none of whose children was solved.
    pub illegal_reveals: usize,
    revealed_total: usize,
    solved_total: usize,
}

impl BoundaryState {
    pub fn new(n: usize) -> Self {
        BoundaryState {
            n: n as u32,
            revealed: vec![false; n + 1],
            solved: vec![false; n + 1],
            solved_count: Fenwick::new(n),
            illegal_reveals: 0,
            revealed_total: 0,
            solved_total: 0,
        }
    }

    fn is_boundary(&self, p: u32) -> bool {
        p > 0 && p < self.n
    }

    pub fn is_revealed(&self, p: u32) -> bool {
        self.is_boundary(p) && self.revealed[p as usize]
    }

    pub fn is_solved(&self, p: u32) -> bool {
        self.is_boundary(p) && self.solved[p as usize]
    }

    pub fn revealed_count(&self) -> usize {
        self.revealed_total
    }

    pub fn solved_count(&self) -> usize {
        self.solved_total
    }

    pub fn revealed(&self) -> Vec<u32> {
        (1..self.n).filter(|&p| self.revealed[p as usize]).collect()
    }

    pub fn mark_solved(&mut self, p: u32) {
        if self.is_boundary(p) && !self.solved[p as usize] {
            self.solved[p as usize] = true;
            self.solved_count.add(p as usize);
            self.solved_total += 1;
        }
    }

    /// True when every boundary strictly inside `[lo, hi]` is solved.
    pub fn range_solved(&self, lo: u32, hi: u32) -> bool {
        if hi <= lo + 1 {
            return true;
        }
        let inside = self.solved_count.prefix(hi as usize - 1) - self.solved_count.prefix(lo as usize);
        inside == hi - lo - 1
    }

    /// True when at least one child of the node of `p` is solved.
    pub fn has_solved_child(&self, p: u32) -> bool {
        let h = half_width(p);
        self.range_solved(p - h, p) || self.range_solved(p, p + h)
    }

    /// Applies the guide to one atom: if neither of its boundaries is
    /// revealed, reveals the one of lower level, the left one on a tie.
    pub fn reveal_for(&mut self, iv: IntervalPayload) -> Option<u32> {
        let (a, b) = (iv.lo, iv.hi);
        let ca = self.is_boundary(a).then_some(a);
        let cb = self.is_boundary(b).then_some(b);
        if ca.is_some_and(|p| self.revealed[p as usize]) || cb.is_some_and(|p| self.revealed[p as usize]) {
            return None;
        }
        let p = match (ca, cb) {
            (None, None) => return None,
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (Some(a), Some(b)) => {
                if level(b) < level(a) {
                    b
                } else {
                    a
                }
            }
        };
        if !self.has_solved_child(p) {
            self.illegal_reveals += 1;
        }
        self.revealed[p as usize] = true;
        self.revealed_total += 1;
        Some(p)
    }

    /// One reveal pass over a set of atoms.
    pub fn reveal_boundaries<'a>(&mut self, atoms: impl IntoIterator<Item = &'a IntervalPayload>) {
        for iv in atoms {
            self.reveal_for(*iv);
        }
    }

    /// Atoms that know none of their boundaries and are not `[0, N]`.
    pub fn guide_violations<'a>(&self, atoms: impl IntoIterator<Item = &'a IntervalPayload>) -> usize {
        atoms
            .into_iter()
            .filter(|iv| {
                let terminal = iv.lo == 0 && iv.hi == self.n;
                !terminal && !self.is_revealed(iv.lo) && !self.is_revealed(iv.hi)
            })
            .count()
    }
}

/// Machine plus guide state; the context solver jobs run against.
pub struct GifGame {
    pub machine: Machine,
    pub bounds: BoundaryState,
    pub chance_encounters: usize,
    pub fuses: usize,
}

impl HasMachine for GifGame {
    fn machine(&mut self) -> &mut Machine {
        &mut self.machine
    }
}

fn interval_of(m: &Machine, proc: usize, id: AtomId) -> Result<IntervalPayload> {
    let idx = m
        .find_in_cache(proc, id)
        .ok_or(Error::NotResident { proc, atom: id })?;
    let a = &m.cache(proc)[idx];
    a.payload.as_interval().ok_or(Error::KindError {
        atom: id,
        expected: crate::machine::PayloadKind::Interval,
        found: a.payload.kind(),
    })
}

impl GifGame {
    /// Lays the instance out in memory and runs the initial reveal pass.
    pub fn new(inst: &GifInstance) -> Result<Self> {
        let machine = Machine::new(inst.config, inst.payloads())?;
        let mut bounds = BoundaryState::new(inst.n);
        let ivs: Vec<IntervalPayload> = inst
            .pi
            .iter()
            .map(|&k| IntervalPayload { lo: k - 1, hi: k })
            .collect();
        bounds.reveal_boundaries(&ivs);
        Ok(GifGame {
            machine,
            bounds,
            chance_encounters: 0,
            fuses: 0,
        })
    }

    /// Fuses two co-resident atoms. On success the boundary they met at is
    /// solved, the result reports whether it had been revealed, and the
    /// guide reacts to the new atom.
    pub fn attempt_fuse(&mut self, proc: usize, x: AtomId, y: AtomId) -> Result<(FuseOutcome, bool)> {
        let ix = interval_of(&self.machine, proc, x)?;
        let iy = interval_of(&self.machine, proc, y)?;
        let out = interval_fuse(&mut self.machine, proc, x, y)?;
        let FuseOutcome::Fused { atom, overlap } = out else {
            return Ok((out, false));
        };
        let (lo, hi) = (ix.lo.min(iy.lo), ix.hi.max(iy.hi));
        let mut chance = false;
        for p in overlap.0.max(lo + 1)..=overlap.1.min(hi.saturating_sub(1)) {
            if !self.bounds.is_solved(p) {
                chance |= !self.bounds.is_revealed(p);
                self.bounds.mark_solved(p);
            }
        }
        self.fuses += 1;
        if chance {
            self.chance_encounters += 1;
        }
        self.bounds.reveal_for(interval_of(&self.machine, proc, atom)?);
        Ok((out, chance))
    }

    /// Intervals of a region's atoms in region order.
    pub fn intervals(&self, region: &Region) -> Vec<(AtomId, IntervalPayload)> {
        region
            .atoms(&self.machine)
            .map(|a| (a.id, a.payload.as_interval().expect("interval atom")))
            .collect()
    }
}

/// Edge counts between locations for a set of traced atom pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MultiplicityGraph {
    pub edges: HashMap<(Location, Location), u64>,
}

impl MultiplicityGraph {
    pub fn multiplicity(&self) -> u64 {
        self.edges.values().copied().max().unwrap_or(0)
    }

    fn add_pair(&mut self, a_locs: &[Location], b_locs: &[Location]) {
        let mut seen = Vec::new();
        for &u in a_locs {
            for &v in b_locs {
                let e = if u <= v { (u, v) } else { (v, u) };
                if !seen.contains(&e) {
                    seen.push(e);
                    *self.edges.entry(e).or_default() += 1;
                }
            }
        }
    }
}

/// Builds the graph from provenance: a location holds something derived
/// from `a` if one of its atoms has `a` in its provenance.
pub fn multiplicity_graph(m: &Machine, traced: &[(AtomId, AtomId)]) -> MultiplicityGraph {
    let mut g = MultiplicityGraph::default();
    let atoms: Vec<_> = m.locations().collect();
    for &(a, b) in traced {
        let mut la: Vec<Location> = atoms.iter().filter(|(_, x)| x.provenance.contains(a)).map(|(l, _)| *l).collect();
        let mut lb: Vec<Location> = atoms.iter().filter(|(_, x)| x.provenance.contains(b)).map(|(l, _)| *l).collect();
        la.sort();
        la.dedup();
        lb.sort();
        lb.dedup();
        g.add_pair(&la, &lb);
    }
    g
}

/// Traced pairs of a GIF run: for each boundary `p` at one tree level, the
/// unit atoms `[p-1, p]` and `[p, p+1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TracedLevel {
    pub n: u32,
    pub level: u32,
}

impl TracedLevel {
    pub fn boundaries(&self) -> impl Iterator<Item = u32> {
        let step = 1u32 << (self.level - 1);
        let first = 1u32 << (self.level - 2);
        (first..self.n).step_by(step as usize)
    }

    /// Traced boundaries `p` with `lo <= p <= hi`.
    fn within(&self, lo: u32, hi: u32) -> impl Iterator<Item = u32> {
        let step = 1u32 << (self.level - 1);
        let first = 1u32 << (self.level - 2);
        let start = if lo <= first {
            first
        } else {
            first + (lo - first).div_ceil(step) * step
        };
        let end = hi.min(self.n - 1);
        (start..=end).step_by(step as usize)
    }

    /// Initial-atom pairs for [`multiplicity_graph`].
    pub fn pairs(&self, inst: &GifInstance) -> Vec<(AtomId, AtomId)> {
        let mut at = vec![AtomId(0); inst.n + 1];
        for (i, &k) in inst.pi.iter().enumerate() {
            at[k as usize] = AtomId(i as u64);
        }
        self.boundaries().map(|p| (at[p as usize], at[p as usize + 1])).collect()
    }
}

/// The same graph computed from intervals: under fusion an atom derives from
/// `[p-1, p]` iff `lo < p <= hi`, and from `[p, p+1]` iff `lo <= p < hi`.
pub fn gif_multiplicity_graph(m: &Machine, traced: TracedLevel) -> MultiplicityGraph {
    let mut sides: HashMap<u32, (Vec<Location>, Vec<Location>)> = HashMap::new();
    for (loc, atom) in m.locations() {
        let Some(iv) = atom.payload.as_interval() else {
            continue;
        };
        for p in traced.within(iv.lo, iv.hi) {
            let e = sides.entry(p).or_default();
            if iv.lo < p {
                e.0.push(loc);
            }
            if p < iv.hi {
                e.1.push(loc);
            }
        }
    }
    let mut g = MultiplicityGraph::default();
    for (_, (mut a, mut b)) in sides {
        a.sort();
        a.dedup();
        b.sort();
        b.dedup();
        g.add_pair(&a, &b);
    }
    g
}

/// Checks `m(G_{t+1}) <= 4 m(G_t)` along a sequence of graphs.
pub fn audit_quadrupling(graphs: &[MultiplicityGraph]) -> AuditReport {
    let mut a = QuadruplingAuditor::default();
    for g in graphs {
        a.observe(g.multiplicity());
    }
    a.report()
}

/// Streaming form of [`audit_quadrupling`] over multiplicities.
#[derive(Debug, Clone, Default)]
pub struct QuadruplingAuditor {
    prev: Option<u64>,
    t: usize,
    pub max: u64,
    violations: Vec<String>,
}

impl QuadruplingAuditor {
    pub fn observe(&mut self, mult: u64) {
        if let Some(prev) = self.prev {
            if mult > 4 * prev {
                self.violations
                    .push(format!("graph {}: multiplicity {prev} -> {mult}", self.t));
            }
        }
        self.prev = Some(mult);
        self.max = self.max.max(mult);
        self.t += 1;
    }

    pub fn observations(&self) -> usize {
        self.t
    }

    pub fn report(&self) -> AuditReport {
        AuditReport {
            violations: self.violations.clone(),
            ..AuditReport::default()
        }
    }
}

/// Per-round line of the solver log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundLog {
    pub round: usize,
    pub live_atoms: usize,
    pub revealed: usize,
    pub solved: usize,
    pub chance_encounters: usize,
    pub io_count: u64,
}

impl RoundLog {
    pub const HEADER: &'static str = "round,live_atoms,revealed,solved,chance_encounters,io_count";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.round, self.live_atoms, self.revealed, self.solved, self.chance_encounters, self.io_count
        )
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub trace_mode: TraceMode,
    /// Tree level whose boundaries are traced for the quadrupling audit.
    pub audit_level: Option<u32>,
    /// Check the guide guarantee over all live atoms after every round.
    pub check_guide: bool,
    /// Run the machine in normalized mode.
    pub normalized: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            trace_mode: TraceMode::Full,
            audit_level: None,
            check_guide: true,
            normalized: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverReport {
    pub rounds: usize,
    pub io_count: u64,
    pub log: Vec<RoundLog>,
    pub final_atoms: Vec<IntervalPayload>,
    pub chance_encounters: usize,
    pub guide_violations: usize,
    pub illegal_reveals: usize,
    pub quadrupling: Option<AuditReport>,
    pub max_multiplicity: u64,
    pub trace: IoTrace,
}

impl SolverReport {
    pub fn log_csv(&self) -> String {
        let mut s = String::from(RoundLog::HEADER);
        s.push('\n');
        for r in &self.log {
            s.push_str(&r.to_csv());
            s.push('\n');
        }
        s
    }
}

/// `ceil(log_{3/2} N)`.
pub fn round_bound(n: usize) -> usize {
    ((n as f64).ln() / 1.5f64.ln()).ceil() as usize
}

/// Blocks read together and the pairs fused once they are in cache.
type Window = (Vec<BlockId>, Vec<(AtomId, AtomId)>);

/// Fuses matched pairs window by window: two blocks in, fuse, up to two
/// blocks out.
struct FuseJob {
    windows: Vec<Window>,
    cur: usize,
    reads: usize,
    fused: bool,
    out: Vec<Vec<BlockId>>,
}

impl ProcJob<GifGame> for FuseJob {
    fn poll(&mut self, proc: usize, g: &mut GifGame) -> Result<Option<Request>> {
        loop {
            let Some((blocks, pairs)) = self.windows.get(self.cur) else {
                return Ok(None);
            };
            if self.reads < blocks.len() {
                self.reads += 1;
                return Ok(Some(Request::Read(blocks[self.reads - 1])));
            }
            if !self.fused {
                for &(x, y) in pairs {
                    let (out, _) = g.attempt_fuse(proc, x, y)?;
                    if out == FuseOutcome::Failed {
                        return Err(Error::Internal(format!("matched atoms {x} and {y} did not fuse")));
                    }
                }
                self.fused = true;
                self.out.push(Vec::new());
            }
            let b = g.machine.config().b;
            let cache = g.machine.cache(proc);
            if !cache.is_empty() {
                let ids: Vec<AtomId> = cache.iter().take(b).map(|a| a.id).collect();
                let blk = g.machine.alloc_block();
                self.out[self.cur].push(blk);
                return Ok(Some(Request::Write(blk, ids)));
            }
            self.cur += 1;
            self.reads = 0;
            self.fused = false;
        }
    }
}

/// Repeats: match atoms across revealed boundaries, permute pairs next to
/// each other, fuse. Ends with the single atom `[0, N]`.
pub fn omniscient_reference_solver(inst: &GifInstance, opts: &SolverOptions) -> Result<SolverReport> {
    let mut g = GifGame::new(inst)?;
    g.machine.set_trace_mode(opts.trace_mode);
    g.machine.set_normalized(opts.normalized);
    let auditor = Rc::new(RefCell::new(QuadruplingAuditor::default()));
    let traced = opts.audit_level.map(|level| TracedLevel {
        n: inst.n as u32,
        level: level.clamp(2, inst.log_n() + 1),
    });
    if let Some(t) = traced {
        let a = Rc::clone(&auditor);
        g.machine.set_step_hook(Some(Box::new(move |m: &Machine| {
            a.borrow_mut().observe(gif_multiplicity_graph(m, t).multiplicity());
        })));
    }

    let b = inst.config.b;
    let p = inst.config.p;
    let guard = 8 * inst.log_n() as usize;
    let mut live = g.machine.initial_region();
    let mut log = Vec::new();
    let mut guide_violations = 0;
    let mut rounds = 0;
    loop {
        let atoms = g.intervals(&live);
        if atoms.len() <= 1 {
            break;
        }
        if rounds >= guard {
            return Err(Error::GuardTripped { rounds, limit: guard });
        }
        // maximum matching on the revealed-boundary paths
        let mut by_lo: Vec<usize> = (0..atoms.len()).collect();
        by_lo.sort_by_key(|&i| atoms[i].1.lo);
        let mut matched = vec![false; atoms.len()];
        let mut pairs = Vec::new();
        for w in by_lo.windows(2) {
            let (l, r) = (w[0], w[1]);
            if !matched[l] && atoms[l].1.hi == atoms[r].1.lo && g.bounds.is_revealed(atoms[l].1.hi) {
                matched[l] = true;
                matched[r] = true;
                pairs.push((l, r));
            }
        }
        let mut target = vec![0usize; atoms.len()];
        for (k, &(l, r)) in pairs.iter().enumerate() {
            target[l] = 2 * k;
            target[r] = 2 * k + 1;
        }
        let mut next = 2 * pairs.len();
        for &i in &by_lo {
            if !matched[i] {
                target[i] = next;
                next += 1;
            }
        }
        let placed = pem_permute(&mut g.machine, &live, &target)?;

        let paired_blocks = (2 * pairs.len()).div_ceil(b);
        let windows: Vec<Window> = placed.blocks[..paired_blocks]
            .chunks(2)
            .enumerate()
            .map(|(w, blks)| {
                let per = b; // pairs per window of two blocks
                let ps = pairs
                    .iter()
                    .skip(w * per)
                    .take(per)
                    .map(|&(l, r)| (atoms[l].0, atoms[r].0))
                    .collect();
                (blks.to_vec(), ps)
            })
            .collect();
        let per_proc = windows.len().div_ceil(p).max(1);
        let mut queues: Vec<Vec<FuseJob>> = (0..p).map(|_| Vec::new()).collect();
        let mut wins = windows.into_iter().peekable();
        for q in queues.iter_mut() {
            let mine: Vec<_> = wins.by_ref().take(per_proc).collect();
            if !mine.is_empty() {
                q.push(FuseJob {
                    windows: mine,
                    cur: 0,
                    reads: 0,
                    fused: false,
                    out: Vec::new(),
                });
            }
        }
        let done = run_jobs(&mut g, queues)?;
        let mut next_live = Region::default();
        for job in done.into_iter().flatten() {
            for w in job.out {
                next_live.blocks.extend(w);
            }
        }
        for blk in &placed.blocks[..paired_blocks] {
            g.machine.release_block(*blk)?;
        }
        next_live.blocks.extend_from_slice(&placed.blocks[paired_blocks..]);
        live = next_live;
        rounds += 1;

        let now = g.intervals(&live);
        if opts.check_guide {
            guide_violations += g.bounds.guide_violations(now.iter().map(|(_, iv)| iv));
        }
        log.push(RoundLog {
            round: rounds,
            live_atoms: now.len(),
            revealed: g.bounds.revealed_count(),
            solved: g.bounds.solved_count(),
            chance_encounters: g.chance_encounters,
            io_count: g.machine.io_count(),
        });
    }

    let final_atoms: Vec<IntervalPayload> = g.intervals(&live).into_iter().map(|(_, iv)| iv).collect();
    g.machine.set_step_hook(None);
    let quadrupling = traced.map(|t| {
        let mut a = auditor.borrow_mut();
        a.observe(gif_multiplicity_graph(&g.machine, t).multiplicity());
        a.report()
    });
    let max_multiplicity = auditor.borrow().max;
    Ok(SolverReport {
        rounds,
        io_count: g.machine.io_count(),
        log,
        final_atoms,
        chance_encounters: g.chance_encounters,
        guide_violations,
        illegal_reveals: g.bounds.illegal_reveals,
        quadrupling,
        max_multiplicity,
        trace: g.machine.trace().clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::{ParallelStep, Request};

    fn iv(lo: u32, hi: u32) -> IntervalPayload {
        IntervalPayload { lo, hi }
    }

    #[test]
    fn instance_generation() {
        let a = generate_gif_instance(2, 7).unwrap();
        assert_eq!(a, generate_gif_instance(2, 7).unwrap());
        assert_eq!((a.config.p, a.config.m, a.config.b), (2, 2, 1));
        assert!(matches!(generate_gif_instance(3, 7), Err(Error::Config(_))));
        let id = GifInstance::from_permutation(vec![1, 2, 3, 4], a.config).unwrap();
        assert_eq!(id.payloads()[2], Payload::Interval(iv(2, 3)));
        let sw = GifInstance::from_permutation(vec![2, 1, 4, 3], a.config).unwrap();
        assert_eq!(
            sw.payloads(),
            vec![iv(1, 2), iv(0, 1), iv(3, 4), iv(2, 3)]
                .into_iter()
                .map(Payload::Interval)
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn levels_follow_the_tree() {
        assert_eq!(level(1), 2);
        assert_eq!(level(2), 3);
        assert_eq!(level(8), 5);
        // N = 16: root 8 at level log N + 1
        let t = TracedLevel { n: 16, level: 3 };
        assert_eq!(t.boundaries().collect::<Vec<_>>(), vec![2, 6, 10, 14]);
        assert_eq!(t.within(3, 10).collect::<Vec<_>>(), vec![6, 10]);
    }

    #[test]
    fn fresh_reveal_and_continuation() {
        let mut s = BoundaryState::new(4);
        let start = [iv(0, 1), iv(1, 2), iv(2, 3), iv(3, 4)];
        s.reveal_boundaries(&start);
        assert_eq!(s.revealed(), vec![1, 3]);
        s.mark_solved(1);
        s.mark_solved(3);
        s.reveal_boundaries(&[iv(0, 2), iv(2, 4)]);
        assert_eq!(s.revealed(), vec![1, 2, 3]);
        assert_eq!(s.illegal_reveals, 0);
        s.mark_solved(2);
        s.reveal_boundaries(&[iv(0, 4)]);
        assert_eq!(s.revealed_count(), 3);
        assert_eq!(s.guide_violations(&[iv(0, 4)]), 0);
    }

    fn game_with_pair(a: IntervalPayload, b: IntervalPayload) -> GifGame {
        let cfg = MachineConfig::new(1, 2, 1, 2).unwrap();
        let inst = GifInstance {
            n: 4,
            pi: vec![],
            config: cfg,
        };
        let mut g = GifGame {
            machine: Machine::new(cfg, vec![Payload::Interval(a), Payload::Interval(b)]).unwrap(),
            bounds: BoundaryState::new(inst.n),
            chance_encounters: 0,
            fuses: 0,
        };
        for blk in 0..2 {
            g.machine
                .execute_step(&ParallelStep::new(vec![Request::Read(BlockId(blk))]))
                .unwrap();
        }
        g
    }

    #[test]
    fn fuse_outcomes() {
        let mut g = game_with_pair(iv(0, 1), iv(1, 2));
        g.bounds.reveal_for(iv(0, 1));
        let (out, chance) = g.attempt_fuse(0, AtomId(0), AtomId(1)).unwrap();
        assert!(matches!(out, FuseOutcome::Fused { .. }));
        assert!(!chance);

        let mut g = game_with_pair(iv(0, 1), iv(1, 2));
        let (_, chance) = g.attempt_fuse(0, AtomId(0), AtomId(1)).unwrap();
        assert!(chance);
        assert!(g.bounds.is_solved(1));

        let mut g = game_with_pair(iv(0, 1), iv(2, 3));
        let (out, _) = g.attempt_fuse(0, AtomId(0), AtomId(1)).unwrap();
        assert_eq!(out, FuseOutcome::Failed);
        assert_eq!(g.bounds.solved_count(), 0);
        assert_eq!(g.machine.cache(0).len(), 2);
    }

    #[test]
    fn solver_small_cases() {
        let cfg = MachineConfig::new(2, 2, 1, 4).unwrap();
        let inst = GifInstance::from_permutation(vec![1, 2, 3, 4], cfg).unwrap();
        let r = omniscient_reference_solver(&inst, &SolverOptions::default()).unwrap();
        assert_eq!(r.rounds, 2);
        assert_eq!(r.final_atoms, vec![iv(0, 4)]);
        assert_eq!(r.chance_encounters, 0);

        let two = GifInstance::from_permutation(vec![2, 1], MachineConfig::new(1, 2, 1, 2).unwrap()).unwrap();
        let r = omniscient_reference_solver(&two, &SolverOptions::default()).unwrap();
        assert_eq!(r.rounds, 1);
        assert_eq!(r.final_atoms, vec![iv(0, 2)]);
    }

    #[test]
    fn solver_random_instances() {
        for x in [2, 4, 6, 8] {
            for seed in 0..4 {
                let inst = generate_gif_instance(x, seed).unwrap();
                let opts = SolverOptions {
                    audit_level: Some(x / 2 + 1),
                    ..SolverOptions::default()
                };
                let r = omniscient_reference_solver(&inst, &opts).unwrap();
                assert_eq!(r.final_atoms, vec![iv(0, 1 << x)]);
                assert!(r.rounds <= round_bound(1 << x));
                assert_eq!(r.guide_violations, 0);
                assert_eq!(r.illegal_reveals, 0);
                assert!(r.quadrupling.unwrap().passed());
                assert!(r.trace.find_crew_violation().is_none());
                assert_eq!(r.log.last().unwrap().live_atoms, 1);
            }
        }
    }

    #[test]
    fn interval_and_provenance_graphs_agree() {
        let inst = generate_gif_instance(4, 3).unwrap();
        let t = TracedLevel { n: 16, level: 2 };
        let pairs = t.pairs(&inst);
        let mut g = GifGame::new(&inst).unwrap();
        let check = |m: &Machine| {
            assert_eq!(gif_multiplicity_graph(m, t), multiplicity_graph(m, &pairs));
        };
        check(&g.machine);
        for blk in 0..4 {
            let mut reqs = vec![Request::Idle; 4];
            reqs[blk % 4] = Request::Read(BlockId(blk));
            g.machine.execute_step(&ParallelStep::new(reqs)).unwrap();
            check(&g.machine);
        }
    }

    #[test]
    fn multiplicity_examples() {
        let cfg = MachineConfig::new(1, 4, 2, 4).unwrap();
        let m = Machine::new(cfg, (0..4).map(Payload::Plain).collect()).unwrap();
        // one traced pair sharing block 0
        let g = multiplicity_graph(&m, &[(AtomId(0), AtomId(1))]);
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.multiplicity(), 1);
        // pairs split across the same two blocks
        let g = multiplicity_graph(&m, &[(AtomId(0), AtomId(2)), (AtomId(1), AtomId(3)), (AtomId(0), AtomId(3))]);
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.multiplicity(), 3);
        assert!(multiplicity_graph(&m, &[]).edges.is_empty());
    }

    #[test]
    fn quadrupling_audit_sensitivity() {
        let mk = |k: u64| {
            let mut g = MultiplicityGraph::default();
            g.edges.insert((Location::Cache(0), Location::Cache(0)), k);
            g
        };
        assert!(audit_quadrupling(&[mk(1), mk(1), mk(1)]).passed());
        assert!(audit_quadrupling(&[mk(1), mk(4), mk(16)]).passed());
        assert_eq!(audit_quadrupling(&[mk(1), mk(5)]).violations.len(), 1);
    }
}
