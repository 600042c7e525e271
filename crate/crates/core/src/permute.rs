//! Permuting: move the atom at position `i` of a region to position
//! `target[i]`, either by direct gathering or by sorting on the target.

use rustc_hash::FxHashMap as HashMap;

use crate::cost::CostParams;
use crate::error::{Error, Result};
use crate::machine::schedule::{run_jobs, ProcJob};
use crate::machine::{AtomId, BlockId, Machine, Region, Request};
use crate::sort::pem_merge_sort_with;

/// How [`pem_permute`] moved the atoms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PermuteStrategy {
    Direct,
    Sort,
}

/// Checks that `target` is a bijection on `0..target.len()`.
pub fn check_permutation(target: &[usize]) -> Result<()> {
    let mut seen = vec![false; target.len()];
    for (i, &t) in target.iter().enumerate() {
        if t >= target.len() {
            return Err(Error::NotAPermutation(format!(
                "position {i} maps to {t}, out of range"
            )));
        }
        if std::mem::replace(&mut seen[t], true) {
            return Err(Error::NotAPermutation(format!("target {t} used twice")));
        }
    }
    Ok(())
}

/// The cheaper strategy under the cost formula: direct placement costs about
/// `N/P`, sorting about `(N/(PB)) log_d(N/B)`.
pub fn choose_strategy(n: usize, p: usize, m: usize, b: usize) -> PermuteStrategy {
    let c = CostParams::new(n.max(1), p, m, b);
    let direct = n as f64 / p as f64;
    if direct <= crate::cost::eval_sort_cost(&c) {
        PermuteStrategy::Direct
    } else {
        PermuteStrategy::Sort
    }
}

/// Permutes `input` into fresh blocks; the input is released.
pub fn pem_permute(m: &mut Machine, input: &Region, target: &[usize]) -> Result<Region> {
    let b = m.config().b;
    pem_permute_with(m, input, target, b).map(|(r, _)| r)
}

/// As [`pem_permute`] with at most `per_block` atoms per output block; also
/// reports the strategy used.
pub fn pem_permute_with(
    m: &mut Machine,
    input: &Region,
    target: &[usize],
    per_block: usize,
) -> Result<(Region, PermuteStrategy)> {
    let n = input.len(m);
    if target.len() != n {
        return Err(Error::NotAPermutation(format!(
            "{} targets for {n} atoms",
            target.len()
        )));
    }
    check_permutation(target)?;
    let cfg = *m.config();
    let strategy = choose_strategy(n, cfg.p, cfg.m, cfg.b);
    let out = match strategy {
        PermuteStrategy::Direct => {
            let out = direct_permute(m, input, target, per_block)?;
            m.release_region(input)?;
            out
        }
        PermuteStrategy::Sort => {
            let dest: HashMap<AtomId, u64> = input
                .ids(m)
                .into_iter()
                .zip(target.iter().map(|&t| t as u64))
                .collect();
            pem_merge_sort_with(m, input, |a| dest[&a.id], per_block)?
        }
    };
    Ok((out, strategy))
}

/// Builds output blocks one at a time by reading each source block that
/// contributes to it.
struct GatherJob {
    /// Per output block: source blocks to read and the atoms wanted, in
    /// output order.
    plan: Vec<(Vec<BlockId>, Vec<AtomId>)>,
    cur: usize,
    reads: usize,
    out: Vec<BlockId>,
    index: usize,
}

impl ProcJob<Machine> for GatherJob {
    fn poll(&mut self, proc: usize, m: &mut Machine) -> Result<Option<Request>> {
        let Some((sources, wanted)) = self.plan.get(self.cur) else {
            return Ok(None);
        };
        if self.reads > 0 {
            // drop what the last read brought in beyond the wanted atoms
            let last = sources[self.reads - 1];
            let ids: Vec<AtomId> = m.block(last)?.iter().map(|a| a.id).collect();
            for id in ids {
                if !wanted.contains(&id) {
                    m.delete_atom(proc, id)?;
                }
            }
        }
        if self.reads < sources.len() {
            self.reads += 1;
            return Ok(Some(Request::Read(sources[self.reads - 1])));
        }
        let ids = wanted.clone();
        self.cur += 1;
        self.reads = 0;
        let blk = m.alloc_block();
        self.out.push(blk);
        Ok(Some(Request::Write(blk, ids)))
    }
}

fn direct_permute(
    m: &mut Machine,
    input: &Region,
    target: &[usize],
    per_block: usize,
) -> Result<Region> {
    let n = target.len();
    let p = m.config().p;
    let mut source = vec![(AtomId(0), BlockId(0)); n];
    let mut pos = 0;
    for blk in &input.blocks {
        for a in m.block(*blk)? {
            source[target[pos]] = (a.id, *blk);
            pos += 1;
        }
    }
    let out_blocks = n.div_ceil(per_block);
    let per_proc = out_blocks.div_ceil(p);
    let mut queues: Vec<Vec<GatherJob>> = (0..p).map(|_| Vec::new()).collect();
    for (j, queue) in queues.iter_mut().enumerate() {
        let first = j * per_proc;
        let last = ((j + 1) * per_proc).min(out_blocks);
        if first >= last {
            continue;
        }
        let plan = (first..last)
            .map(|ob| {
                let slots = &source[ob * per_block..((ob + 1) * per_block).min(n)];
                let mut srcs: Vec<BlockId> = slots.iter().map(|s| s.1).collect();
                srcs.sort();
                srcs.dedup();
                (srcs, slots.iter().map(|s| s.0).collect())
            })
            .collect();
        queue.push(GatherJob {
            plan,
            cur: 0,
            reads: 0,
            out: Vec::new(),
            index: j,
        });
    }
    let done = run_jobs(m, queues)?;
    let mut jobs: Vec<GatherJob> = done.into_iter().flatten().collect();
    jobs.sort_by_key(|j| j.index);
    Ok(Region::new(jobs.into_iter().flat_map(|j| j.out).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::eval_perm_cost;
    use crate::machine::{MachineConfig, Payload};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn machine(p: usize, mcap: usize, b: usize, n: usize) -> Machine {
        let cfg = MachineConfig::new(p, mcap, b, n).unwrap();
        Machine::new(cfg, (0..n as u64).map(Payload::Plain).collect()).unwrap()
    }

    fn placed(m: &Machine, r: &Region) -> Vec<u64> {
        r.atoms(m).map(|a| a.payload.as_plain().unwrap()).collect()
    }

    #[test]
    fn identity_keeps_layout() {
        let mut m = machine(2, 8, 4, 16);
        let input = m.initial_region();
        let out = pem_permute(&mut m, &input, &(0..16).collect::<Vec<_>>()).unwrap();
        assert_eq!(placed(&m, &out), (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn reversal() {
        let mut m = machine(2, 8, 4, 16);
        let input = m.initial_region();
        let target: Vec<usize> = (0..16).rev().collect();
        let out = pem_permute(&mut m, &input, &target).unwrap();
        let oracle: Vec<u64> = (0..16u64).rev().collect();
        assert_eq!(placed(&m, &out), oracle);
        assert!(out.is_packed(&m, 4));
    }

    #[test]
    fn duplicate_target_rejected() {
        let mut m = machine(1, 4, 2, 4);
        let input = m.initial_region();
        assert!(matches!(
            pem_permute(&mut m, &input, &[0, 1, 1, 3]),
            Err(Error::NotAPermutation(_))
        ));
        assert_eq!(m.io_count(), 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn permutes_like_an_array(
            pe in 0u32..3, be in 0u32..3, me in 1u32..3, blocks in 1usize..40, seed in any::<u64>()
        ) {
            let (p, b) = (1usize << pe, 1usize << be);
            let n = (blocks * b).max(p * b);
            let mut m = machine(p, b << me, b, n);
            let mut target: Vec<usize> = (0..n).collect();
            target.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let input = m.initial_region();
            let (out, strategy) = pem_permute_with(&mut m, &input, &target, b).unwrap();
            let mut oracle = vec![0u64; n];
            for (i, &t) in target.iter().enumerate() {
                oracle[t] = i as u64;
            }
            prop_assert_eq!(placed(&m, &out), oracle);
            if strategy == PermuteStrategy::Direct {
                let bound = eval_perm_cost(&CostParams::new(n, p, b << me, b));
                prop_assert!(m.io_count() as f64 <= 2.0 * bound + 2.0);
            }
        }
    }
}
