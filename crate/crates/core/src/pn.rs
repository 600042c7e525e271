//! Proximate neighbors: place both atoms carrying a label into one block.

use rustc_hash::FxHashMap as HashMap;

use crate::error::{Error, Result};
use crate::machine::{AtomId, BlockPermutation, Machine, Region};
use crate::sort::pem_merge_sort_with;

/// Checks that every label is used exactly twice. Returns the pairs, ordered
/// by label.
pub fn check_labeling(labels: &[u64]) -> Result<Vec<(usize, usize)>> {
    if labels.len() % 2 == 1 {
        return Err(Error::BadLabeling(format!("{} atoms", labels.len())));
    }
    let mut seen: HashMap<u64, Vec<usize>> = HashMap::default();
    for (i, &l) in labels.iter().enumerate() {
        seen.entry(l).or_default().push(i);
    }
    let mut pairs = Vec::with_capacity(labels.len() / 2);
    let mut by_label: Vec<_> = seen.into_iter().collect();
    by_label.sort();
    for (l, pos) in by_label {
        if pos.len() != 2 {
            return Err(Error::BadLabeling(format!(
                "label {l} used {} times",
                pos.len()
            )));
        }
        pairs.push((pos[0], pos[1]));
    }
    Ok(pairs)
}

/// Sorts `input` by label so that each pair lands in one block. With odd `B`
/// blocks are filled to `B - 1` so that no pair straddles a boundary. The
/// input is released.
pub fn solve_proximate_neighbors(
    m: &mut Machine,
    input: &Region,
    labels: &[u64],
) -> Result<(Region, BlockPermutation)> {
    let n = input.len(m);
    if labels.len() != n {
        return Err(Error::BadLabeling(format!(
            "{} labels for {n} atoms",
            labels.len()
        )));
    }
    check_labeling(labels)?;
    let b = m.config().b;
    if b < 2 {
        return Err(Error::Config("proximate neighbors needs B >= 2".into()));
    }
    let per_block = b - b % 2;
    let label: HashMap<AtomId, u64> = input.ids(m).into_iter().zip(labels.iter().copied()).collect();
    let out = pem_merge_sort_with(m, input, |a| label[&a.id], per_block)?;
    let mut snap = m.snapshot_block_permutation();
    snap.blocks.retain(|k, _| out.blocks.contains(k));
    Ok((out, snap))
}

/// True when both atoms of every label share a block.
pub fn pairs_co_blocked(snap: &BlockPermutation, ids: &[AtomId], labels: &[u64]) -> bool {
    let Ok(owner) = snap.validate(usize::MAX) else {
        return false;
    };
    let Ok(pairs) = check_labeling(labels) else {
        return false;
    };
    pairs.iter().all(|&(x, y)| {
        matches!((owner.get(&ids[x]), owner.get(&ids[y])), (Some(a), Some(b)) if a == b)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::{MachineConfig, Payload};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn machine(p: usize, mcap: usize, b: usize, n: usize) -> Machine {
        let cfg = MachineConfig::new(p, mcap, b, n).unwrap();
        Machine::new(cfg, (0..n as u64).map(Payload::Plain).collect()).unwrap()
    }

    #[test]
    fn four_atoms_two_labels() {
        let mut m = machine(1, 4, 2, 4);
        let input = m.initial_region();
        let (out, snap) = solve_proximate_neighbors(&mut m, &input, &[1, 2, 1, 2]).unwrap();
        let sets: Vec<BTreeSet<AtomId>> = out.blocks.iter().map(|b| snap.get(*b).unwrap().clone()).collect();
        assert_eq!(sets[0], [AtomId(0), AtomId(2)].into());
        assert_eq!(sets[1], [AtomId(1), AtomId(3)].into());
    }

    #[test]
    fn single_pair() {
        let mut m = machine(1, 4, 2, 2);
        let input = m.initial_region();
        let (out, snap) = solve_proximate_neighbors(&mut m, &input, &[1, 1]).unwrap();
        assert_eq!(out.blocks.len(), 1);
        assert_eq!(snap.get(out.blocks[0]).unwrap().len(), 2);
    }

    #[test]
    fn triple_label_rejected() {
        let mut m = machine(1, 4, 2, 4);
        let input = m.initial_region();
        assert!(matches!(
            solve_proximate_neighbors(&mut m, &input, &[1, 1, 1, 2]),
            Err(Error::BadLabeling(_))
        ));
    }

    #[test]
    fn odd_block_size_never_splits_a_pair() {
        let n = 30;
        let mut m = machine(2, 6, 3, n);
        let labels: Vec<u64> = (0..n as u64).map(|i| (i * 7) % 15).collect();
        let input = m.initial_region();
        let (_, snap) = solve_proximate_neighbors(&mut m, &input, &labels).unwrap();
        let ids: Vec<AtomId> = (0..n as u64).map(AtomId).collect();
        assert!(pairs_co_blocked(&snap, &ids, &labels));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn random_labelings_are_solved(
            pe in 0u32..3, be in 1u32..3, pairs in 1usize..100, seed in any::<u64>()
        ) {
            let (p, b) = (1usize << pe, 1usize << be);
            let n = (2 * pairs).max(p * b);
            let n = n + n % 2;
            let mut labels: Vec<u64> = (0..n as u64).map(|i| i / 2).collect();
            labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut m = machine(p, 4 * b, b, n);
            let input = m.initial_region();
            let (_, snap) = solve_proximate_neighbors(&mut m, &input, &labels).unwrap();
            let ids: Vec<AtomId> = (0..n as u64).map(AtomId).collect();
            prop_assert!(pairs_co_blocked(&snap, &ids, &labels));
        }
    }
}
