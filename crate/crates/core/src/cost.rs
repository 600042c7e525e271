//! Closed-form parallel-I/O bounds for permuting, sorting and list ranking.

/// Parameters of a cost evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostParams {
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub b: usize,
}

impl CostParams {
    pub fn new(n: usize, p: usize, m: usize, b: usize) -> Self {
        CostParams { n, p, m, b }
    }

    /// `max{2, min{M/B, N/(PB)}}` as a real number.
    pub fn d(&self) -> f64 {
        let mb = self.m as f64 / self.b as f64;
        let npb = self.n as f64 / (self.p as f64 * self.b as f64);
        mb.min(npb).max(2.0)
    }

    /// `d` floored to an integer, for use as a merge fan-in.
    pub fn fan_in(&self) -> usize {
        (self.d().floor() as usize).max(2)
    }

    fn blocks_per_proc(&self) -> f64 {
        self.n as f64 / (self.p as f64 * self.b as f64)
    }

    fn log_term(&self) -> f64 {
        bar_log_base(self.n as f64 / self.b as f64, self.d())
    }
}

/// `max{1, log2 x}`.
pub fn bar_log(x: f64) -> f64 {
    if x <= 2.0 {
        1.0
    } else {
        x.log2()
    }
}

/// `max{1, log_base x}`.
pub fn bar_log_base(x: f64, base: f64) -> f64 {
    if x <= 1.0 {
        return 1.0;
    }
    (x.log2() / base.log2()).max(1.0)
}

/// `min{N/P, (N/(PB)) · log_d(N/B)}`.
pub fn eval_perm_cost(c: &CostParams) -> f64 {
    let direct = c.n as f64 / c.p as f64;
    direct.min(c.blocks_per_proc() * c.log_term())
}

/// `(N/(PB)) · log_d(N/B)`.
pub fn eval_sort_cost(c: &CostParams) -> f64 {
    c.blocks_per_proc() * c.log_term()
}

/// Sorting cost plus `log P · log(B / log P)`; the second term vanishes for
/// `B < log P`.
pub fn eval_listrank_cost(c: &CostParams) -> f64 {
    let lp = (c.p as f64).log2();
    let b = c.b as f64;
    let extra = if c.p <= 1 || b < lp {
        0.0
    } else {
        lp * bar_log(b / lp)
    };
    eval_sort_cost(c) + extra
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perm_examples() {
        assert_eq!(eval_perm_cost(&CostParams::new(1024, 32, 64, 16)), 12.0);
        assert_eq!(eval_perm_cost(&CostParams::new(16, 1, 32, 16)), 1.0);
        assert_eq!(eval_perm_cost(&CostParams::new(65536, 256, 256, 128)), 18.0);
    }

    #[test]
    fn sort_examples() {
        let c = CostParams::new(64, 4, 16, 4);
        assert_eq!(c.d(), 4.0);
        assert_eq!(eval_sort_cost(&c), 8.0);
        assert_eq!(eval_sort_cost(&CostParams::new(8, 1, 16, 8)), 1.0);
    }

    #[test]
    fn listrank_examples() {
        // B < log P: plain sorting cost
        let c = CostParams::new(4096, 64, 8, 4);
        assert_eq!(eval_listrank_cost(&c), eval_sort_cost(&c));
        let c = CostParams::new(1 << 14, 16, 128, 64);
        assert_eq!(eval_listrank_cost(&c) - eval_sort_cost(&c), 16.0);
        let c = CostParams::new(1 << 12, 16, 8, 4);
        assert_eq!(eval_listrank_cost(&c) - eval_sort_cost(&c), 4.0);
    }

    proptest! {
        #[test]
        fn perm_never_exceeds_sort(pe in 0u32..6, be in 0u32..6, me in 1u32..4, extra in 0u32..8) {
            let (p, b) = (1usize << pe, 1usize << be);
            let m = b << me;
            let n = (p * b) << extra;
            let c = CostParams::new(n, p, m, b);
            prop_assert!(c.d() >= 2.0);
            prop_assert!(c.fan_in() >= 2);
            prop_assert!(eval_perm_cost(&c) <= eval_sort_cost(&c));
            prop_assert!(eval_sort_cost(&c) >= c.blocks_per_proc());
        }
    }
}
