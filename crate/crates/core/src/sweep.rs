//! Parameter sweeps: run one experiment per grid cell and seed, record the
//! measured parallel I/Os next to the closed-form cost, and fit constants.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cost::{eval_listrank_cost, eval_perm_cost, eval_sort_cost, CostParams};
use crate::error::{Error, Result};
use crate::gif::{generate_gif_instance, omniscient_reference_solver, round_bound, SolverOptions};
use crate::list::{rank_list_with, sequential_rank_oracle, LinkedListInstance};
use crate::machine::{IntervalPayload, Machine, MachineConfig, Payload, TraceMode};
use crate::permute::pem_permute;
use crate::pn::{pairs_co_blocked, solve_proximate_neighbors};
use crate::sort::pem_merge_sort;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Experiment {
    Sort,
    Permute,
    Pn,
    ListRank,
    Gif,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::Sort,
        Experiment::Permute,
        Experiment::Pn,
        Experiment::ListRank,
        Experiment::Gif,
    ];
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Experiment::Sort => "sort",
            Experiment::Permute => "permute",
            Experiment::Pn => "pn",
            Experiment::ListRank => "listrank",
            Experiment::Gif => "gif",
        })
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.to_string() == s)
            .ok_or_else(|| Error::Parse(format!("unknown experiment {s:?}")))
    }
}

/// Grid over `N, P, M, B` with a list of seeds. For `gif`, only `N` is read
/// and the machine is `P = M = sqrt(N)`, `B = M/2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepSpec {
    pub experiment: Experiment,
    pub n: Vec<usize>,
    pub p: Vec<usize>,
    pub m: Vec<usize>,
    pub b: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Run every machine in normalized mode.
    pub normalized: bool,
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| Error::Parse(format!("{key}: bad value {t:?}")))
        })
        .collect()
}

/// `a..b` (half open) or a list.
fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = value.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| Error::Parse(format!("seeds: bad start {a:?}")))?;
        let b: u64 = b.trim().parse().map_err(|_| Error::Parse(format!("seeds: bad end {b:?}")))?;
        return Ok((a..b).collect());
    }
    parse_list("seeds", value)
}

impl SweepSpec {
    /// Parses `key = value` lines; `#` starts a comment. Keys: `experiment`,
    /// `N`, `P`, `M`, `B` (comma or space separated lists) and `seeds` (a list
    /// or `a..b`), plus an optional `normalized = true`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut experiment = None;
        let (mut n, mut p, mut m, mut b) = (vec![], vec![], vec![], vec![]);
        let mut seeds = vec![0];
        let mut normalized = false;
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", k + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "experiment" => experiment = Some(value.parse()?),
                "N" => n = parse_list(key, value)?,
                "P" => p = parse_list(key, value)?,
                "M" => m = parse_list(key, value)?,
                "B" => b = parse_list(key, value)?,
                "seeds" => seeds = parse_seeds(value)?,
                "normalized" => {
                    normalized = value
                        .parse()
                        .map_err(|_| Error::Parse(format!("normalized: bad value {value:?}")))?
                }
                other => return Err(Error::Parse(format!("line {}: unknown key {other:?}", k + 1))),
            }
        }
        let experiment = experiment.ok_or_else(|| Error::Parse("missing experiment".into()))?;
        let spec = SweepSpec {
            experiment,
            n,
            p,
            m,
            b,
            seeds,
            normalized,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment == Experiment::Gif {
            for &n in &self.n {
                if !n.is_power_of_two() || n.trailing_zeros() % 2 == 1 || n < 4 {
                    return Err(Error::Config(format!("gif needs N = 4^k >= 4, got {n}")));
                }
            }
            for (key, given) in [("P", &self.p), ("M", &self.m), ("B", &self.b)] {
                if !given.is_empty() {
                    return Err(Error::Config(format!("gif derives {key} from N")));
                }
            }
        }
        Ok(())
    }

    /// Cells in grid order `N, P, M, B`.
    pub fn cells(&self) -> Vec<(usize, usize, usize, usize)> {
        if self.experiment == Experiment::Gif {
            return self
                .n
                .iter()
                .map(|&n| {
                    let m = 1usize << (n.trailing_zeros() / 2);
                    (n, m, m, m / 2)
                })
                .collect();
        }
        let mut out = Vec::new();
        for &n in &self.n {
            for &p in &self.p {
                for &m in &self.m {
                    for &b in &self.b {
                        out.push((n, p, m, b));
                    }
                }
            }
        }
        out
    }
}

/// One CSV row; failed cells carry the error text and no measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub experiment: Experiment,
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub b: usize,
    pub seed: u64,
    pub measured_ios: Option<u64>,
    pub formula: Option<f64>,
    pub error: String,
}

impl SweepRow {
    pub fn ratio(&self) -> Option<f64> {
        Some(self.measured_ios? as f64 / self.formula?)
    }
}

pub const CSV_HEADER: [&str; 10] = [
    "experiment",
    "N",
    "P",
    "M",
    "B",
    "seed",
    "measured_ios",
    "formula",
    "ratio",
    "error",
];

pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in rows {
        let opt = |v: Option<String>| v.unwrap_or_default();
        w.write_record([
            r.experiment.to_string(),
            r.n.to_string(),
            r.p.to_string(),
            r.m.to_string(),
            r.b.to_string(),
            r.seed.to_string(),
            opt(r.measured_ios.map(|v| v.to_string())),
            opt(r.formula.map(|v| format!("{v:.6}"))),
            opt(r.ratio().map(|v| format!("{v:.6}"))),
            r.error.clone(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

fn plain_machine(n: usize, p: usize, m: usize, b: usize) -> Result<Machine> {
    Machine::new(MachineConfig::new(p, m, b, n)?, (0..n as u64).map(Payload::Plain).collect())
}

/// Runs one experiment; returns the measured I/Os and the formula value.
pub fn run_cell(exp: Experiment, n: usize, p: usize, m: usize, b: usize, seed: u64) -> Result<(u64, f64)> {
    run_cell_with(exp, n, p, m, b, seed, false)
}

/// `run_cell`, optionally with every machine in normalized mode.
pub fn run_cell_with(
    exp: Experiment,
    n: usize,
    p: usize,
    m: usize,
    b: usize,
    seed: u64,
    normalized: bool,
) -> Result<(u64, f64)> {
    let c = CostParams::new(n, p, m, b);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match exp {
        Experiment::Sort => {
            let mut mach = plain_machine(n, p, m, b)?;
            mach.set_trace_mode(TraceMode::Actions);
            mach.set_normalized(normalized);
            let keys: Vec<u64> = (0..n).map(|_| rng.gen_range(0..n as u64)).collect();
            let input = mach.initial_region();
            let out = pem_merge_sort(&mut mach, &input, |a| keys[a.id.0 as usize])?;
            let got: Vec<u64> = out.atoms(&mach).map(|a| keys[a.id.0 as usize]).collect();
            if got.windows(2).any(|w| w[0] > w[1]) || got.len() != n {
                return Err(Error::Internal("output not sorted".into()));
            }
            Ok((mach.io_count(), eval_sort_cost(&c)))
        }
        Experiment::Permute => {
            let mut mach = plain_machine(n, p, m, b)?;
            mach.set_trace_mode(TraceMode::Actions);
            mach.set_normalized(normalized);
            let mut target: Vec<usize> = (0..n).collect();
            target.shuffle(&mut rng);
            let input = mach.initial_region();
            let out = pem_permute(&mut mach, &input, &target)?;
            let got: Vec<u64> = out.atoms(&mach).map(|a| a.id.0).collect();
            if got.iter().enumerate().any(|(pos, &i)| target[i as usize] != pos) {
                return Err(Error::Internal("atoms misplaced".into()));
            }
            Ok((mach.io_count(), eval_perm_cost(&c)))
        }
        Experiment::Pn => {
            let mut mach = plain_machine(n, p, m, b)?;
            mach.set_trace_mode(TraceMode::Actions);
            mach.set_normalized(normalized);
            let mut labels: Vec<u64> = (0..n as u64).map(|i| i / 2).collect();
            labels.shuffle(&mut rng);
            let input = mach.initial_region();
            let ids = input.ids(&mach);
            let (_, snap) = solve_proximate_neighbors(&mut mach, &input, &labels)?;
            if !pairs_co_blocked(&snap, &ids, &labels) {
                return Err(Error::Internal("a pair was split".into()));
            }
            Ok((mach.io_count(), eval_sort_cost(&c)))
        }
        Experiment::ListRank => {
            let list = LinkedListInstance::random(n, seed);
            let out = rank_list_with(&list, p, m, b, seed, normalized)?;
            if out.ranks != sequential_rank_oracle(&list)? {
                return Err(Error::Internal("ranks differ from the oracle".into()));
            }
            Ok((out.io_count, eval_listrank_cost(&c)))
        }
        Experiment::Gif => {
            let inst = generate_gif_instance(n.trailing_zeros(), seed)?;
            let opts = SolverOptions {
                trace_mode: TraceMode::Actions,
                audit_level: Some(inst.log_n() / 2 + 1),
                check_guide: true,
                normalized,
            };
            let r = omniscient_reference_solver(&inst, &opts)?;
            let whole = IntervalPayload { lo: 0, hi: n as u32 };
            if r.final_atoms != [whole] {
                return Err(Error::Internal(format!("final atoms {:?}", r.final_atoms)));
            }
            if r.rounds > round_bound(n) || r.guide_violations > 0 || r.illegal_reveals > 0 {
                return Err(Error::Internal(format!(
                    "rounds {} guide {} reveals {}",
                    r.rounds, r.guide_violations, r.illegal_reveals
                )));
            }
            if let Some(q) = r.quadrupling.filter(|q| !q.passed()) {
                return Err(Error::Internal(q.violations.join("; ")));
            }
            let lg = (n as f64).log2();
            Ok((r.io_count, lg * lg))
        }
    }
}

/// Runs every cell and seed, in parallel; rows come back in (cell, seed)
/// order.
pub fn run_sweep(spec: &SweepSpec) -> Vec<SweepRow> {
    let jobs: Vec<((usize, usize, usize, usize), u64)> = spec
        .cells()
        .into_iter()
        .flat_map(|cell| spec.seeds.iter().map(move |&s| (cell, s)))
        .collect();
    jobs.into_par_iter()
        .map(|((n, p, m, b), seed)| {
            let (measured_ios, formula, error) = match run_cell_with(spec.experiment, n, p, m, b, seed, spec.normalized) {
                Ok((io, f)) => (Some(io), Some(f), String::new()),
                Err(e) => (None, None, e.to_string()),
            };
            SweepRow {
                experiment: spec.experiment,
                n,
                p,
                m,
                b,
                seed,
                measured_ios,
                formula,
                error,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitModel {
    /// `measured = C f`
    Proportional,
    /// `measured = a + C f`
    Affine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: FitModel,
    pub c: f64,
    pub intercept: f64,
    /// Extremes of `measured / fitted` over the rows.
    pub min_ratio: f64,
    pub max_ratio: f64,
}

impl FitResult {
    pub fn band(&self) -> f64 {
        self.max_ratio / self.min_ratio
    }
}

/// Least-squares fit of `(formula, measured)` points.
pub fn fit_points(points: &[(f64, f64)], model: FitModel) -> Result<FitResult> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(points.len()));
    }
    let k = points.len() as f64;
    let (c, intercept) = match model {
        FitModel::Proportional => {
            let fy: f64 = points.iter().map(|(f, y)| f * y).sum();
            let ff: f64 = points.iter().map(|(f, _)| f * f).sum();
            (fy / ff, 0.0)
        }
        FitModel::Affine => {
            let mf = points.iter().map(|p| p.0).sum::<f64>() / k;
            let my = points.iter().map(|p| p.1).sum::<f64>() / k;
            let sxy: f64 = points.iter().map(|(f, y)| (f - mf) * (y - my)).sum();
            let sxx: f64 = points.iter().map(|(f, _)| (f - mf) * (f - mf)).sum();
            let c = if sxx > 0.0 { sxy / sxx } else { 0.0 };
            (c, my - c * mf)
        }
    };
    let ratios = points.iter().map(|(f, y)| y / (intercept + c * f));
    let (min_ratio, max_ratio) = ratios.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)));
    Ok(FitResult {
        model,
        c,
        intercept,
        min_ratio,
        max_ratio,
    })
}

/// Fits the successful rows of a sweep.
pub fn fit_scaling(rows: &[SweepRow], model: FitModel) -> Result<FitResult> {
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| Some((r.formula?, r.measured_ios? as f64)))
        .collect();
    fit_points(&points, model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_runs_succeed() {
        for exp in Experiment::ALL {
            let (n, p, m, b) = if exp == Experiment::Gif { (256, 16, 16, 8) } else { (256, 4, 16, 4) };
            let (plain, _) = run_cell(exp, n, p, m, b, 3).unwrap();
            let (split, _) = run_cell_with(exp, n, p, m, b, 3, true).unwrap();
            assert!(plain <= split && split <= 2 * plain, "{exp}: {plain} vs {split}");
        }
    }

    #[test]
    fn parses_spec_text() {
        let s = SweepSpec::parse(
            "# sorting grid\nexperiment = sort\nN = 256, 1024\nP = 2 4\nM = 32\nB = 4\nseeds = 0..3\n",
        )
        .unwrap();
        assert_eq!(s.cells().len(), 4);
        assert_eq!(s.seeds, vec![0, 1, 2]);
        assert!(SweepSpec::parse("N = 4\n").is_err());
        assert!(SweepSpec::parse("experiment = bogus\n").is_err());
        assert!(SweepSpec::parse("experiment = gif\nN = 32\n").is_err());
        let g = SweepSpec::parse("experiment = gif\nN = 16 256\n").unwrap();
        assert_eq!(g.cells(), vec![(16, 4, 4, 2), (256, 16, 16, 8)]);
    }

    #[test]
    fn empty_grid_gives_header_only() {
        let s = SweepSpec::parse("experiment = sort\n").unwrap();
        let rows = run_sweep(&s);
        assert!(rows.is_empty());
        assert_eq!(rows_to_csv(&rows), "experiment,N,P,M,B,seed,measured_ios,formula,ratio,error\n");
    }

    #[test]
    fn every_experiment_runs_and_reruns_identically() {
        let specs = [
            "experiment = sort\nN = 256\nP = 2\nM = 16\nB = 4\nseeds = 0..2",
            "experiment = permute\nN = 256\nP = 2\nM = 16\nB = 4\nseeds = 0..2",
            "experiment = pn\nN = 256\nP = 2\nM = 16\nB = 4\nseeds = 0..2",
            "experiment = listrank\nN = 256\nP = 2\nM = 16\nB = 4\nseeds = 0..2",
            "experiment = gif\nN = 16 64\nseeds = 0..2",
        ];
        for text in specs {
            let spec = SweepSpec::parse(text).unwrap();
            let a = rows_to_csv(&run_sweep(&spec));
            assert_eq!(a, rows_to_csv(&run_sweep(&spec)));
            for line in a.lines().skip(1) {
                assert!(line.ends_with(','), "{line}");
            }
        }
    }

    #[test]
    fn bad_cells_become_error_rows() {
        let spec = SweepSpec::parse("experiment = sort\nN = 16\nP = 8\nM = 8\nB = 4").unwrap();
        let rows = run_sweep(&spec);
        assert_eq!(rows.len(), 1);
        assert!(rows[0].measured_ios.is_none());
        assert!(rows[0].error.contains("configuration"));
    }

    #[test]
    fn fits() {
        let pts: Vec<(f64, f64)> = [8.0, 12.0, 20.0, 30.0].iter().map(|&f| (f, 3.0 * f)).collect();
        let fit = fit_points(&pts, FitModel::Proportional).unwrap();
        assert!((fit.c - 3.0).abs() < 1e-12);
        assert!((fit.min_ratio - 1.0).abs() < 1e-12 && (fit.max_ratio - 1.0).abs() < 1e-12);

        let mut outlier = pts.clone();
        outlier[2].1 *= 10.0;
        let fit = fit_points(&outlier, FitModel::Proportional).unwrap();
        assert!((fit.band() - 10.0).abs() < 1e-9);

        let aff: Vec<(f64, f64)> = [1.0, 2.0, 4.0].iter().map(|&f| (f, 5.0 + 2.0 * f)).collect();
        let fit = fit_points(&aff, FitModel::Affine).unwrap();
        assert!((fit.c - 2.0).abs() < 1e-9 && (fit.intercept - 5.0).abs() < 1e-9);

        assert_eq!(fit_points(&pts[..2], FitModel::Proportional), Err(Error::InsufficientData(2)));
    }
}
