//! `pemsim`: cost formulas, single experiments, sweeps and the invariant suites.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use pemsim_core::cost::{eval_listrank_cost, eval_perm_cost, eval_sort_cost, CostParams};
use pemsim_core::gif::{audit_quadrupling, MultiplicityGraph};
use pemsim_core::list::{rank_list_with, sequential_rank_oracle, LinkedListInstance};
use pemsim_core::pn::solve_proximate_neighbors;
use pemsim_core::reductions::{
    count_solved_instances, enumerate_special_instances, extract_pn_solution, pn_to_semigroup,
    replay_contractions, semigroup_to_edge_contraction, solve_edge_contraction, solve_semigroup,
    EvalStrategy, SemigroupInstance, SemigroupKind,
};
use pemsim_core::sweep::{fit_scaling, rows_to_csv, run_sweep, Experiment, FitModel, SweepRow, SweepSpec};
use pemsim_core::variants::contiguity_audit;
use pemsim_core::{
    AtomId, BlockId, Error, Location, Machine, MachineConfig, ParallelStep, Payload, Request,
};

#[derive(Parser)]
#[command(name = "pemsim", version, about = "Parallel external memory simulator")]
struct Cli {
    /// First seed; runs use `seed .. seed + trials`.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Seeds per cell.
    #[arg(long, global = true, default_value_t = 1)]
    trials: u64,
    /// Write CSV rows here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Reject steps that mix reads and writes; algorithms split such steps.
    #[arg(long, global = true)]
    normalized: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct Cell {
    #[arg(short = 'n', long)]
    n: usize,
    #[arg(short = 'p', long)]
    p: usize,
    #[arg(short = 'm', long)]
    m: usize,
    #[arg(short = 'b', long)]
    b: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Print d and the permuting, sorting and list-ranking formulas.
    Cost(Cell),
    /// Merge sort random keys.
    Sort(Cell),
    /// Apply a random permutation.
    Permute(Cell),
    /// Solve a random proximate-neighbors instance.
    Pn(Cell),
    /// Rank a random list and compare with the sequential oracle.
    Listrank(Cell),
    /// Run the reference solver on a random GIF instance; P, M, B follow from N.
    Gif {
        #[arg(short = 'n', long)]
        n: usize,
    },
    /// Run a sweep described by a `key = value` spec file.
    Sweep { specfile: PathBuf },
    /// Run the invariant suites.
    Verify,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Returns whether every audit passed.
fn run(cli: &Cli) -> anyhow::Result<bool> {
    let seeds: Vec<u64> = (cli.seed..cli.seed + cli.trials).collect();
    let grid = |experiment, c: Cell| SweepSpec {
        experiment,
        n: vec![c.n],
        p: vec![c.p],
        m: vec![c.m],
        b: vec![c.b],
        seeds: seeds.clone(),
        normalized: cli.normalized,
    };
    let spec = match &cli.command {
        Command::Cost(c) => {
            MachineConfig::new(c.p, c.m, c.b, c.n)?;
            let cp = CostParams::new(c.n, c.p, c.m, c.b);
            println!("d = {}", cp.d());
            println!("perm = {}", eval_perm_cost(&cp));
            println!("sort = {}", eval_sort_cost(&cp));
            println!("listrank = {}", eval_listrank_cost(&cp));
            return Ok(true);
        }
        Command::Sort(c) => grid(Experiment::Sort, *c),
        Command::Permute(c) => grid(Experiment::Permute, *c),
        Command::Pn(c) => grid(Experiment::Pn, *c),
        Command::Listrank(c) => grid(Experiment::ListRank, *c),
        Command::Gif { n } => {
            let s = SweepSpec {
                experiment: Experiment::Gif,
                n: vec![*n],
                p: vec![],
                m: vec![],
                b: vec![],
                seeds,
                normalized: cli.normalized,
            };
            s.validate()?;
            s
        }
        Command::Sweep { specfile } => {
            let text = fs::read_to_string(specfile)
                .with_context(|| format!("reading {}", specfile.display()))?;
            let mut s = SweepSpec::parse(&text)?;
            s.normalized |= cli.normalized;
            s
        }
        Command::Verify => return verify(cli, &seeds),
    };
    let rows = run_sweep(&spec);
    emit(&rows, cli.out.as_deref())?;
    summarize(&rows);
    Ok(rows.iter().all(|r| r.error.is_empty()))
}

fn emit(rows: &[SweepRow], out: Option<&Path>) -> anyhow::Result<()> {
    let csv = rows_to_csv(rows);
    match out {
        Some(path) => fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn summarize(rows: &[SweepRow]) {
    let failed = rows.iter().filter(|r| !r.error.is_empty()).count();
    eprintln!("{} rows, {failed} failed", rows.len());
    let ratios: Vec<f64> = rows.iter().filter_map(SweepRow::ratio).collect();
    if let (Some(lo), Some(hi)) = (
        ratios.iter().copied().reduce(f64::min),
        ratios.iter().copied().reduce(f64::max),
    ) {
        eprintln!("measured/formula in [{lo:.3}, {hi:.3}], band {:.2}", hi / lo);
    }
    if let Ok(fit) = fit_scaling(rows, FitModel::Proportional) {
        eprintln!("least-squares C = {:.3}", fit.c);
    }
}

// ----------------------------------------------------------------- verify

fn verify(cli: &Cli, seeds: &[u64]) -> anyhow::Result<bool> {
    let mut rows = Vec::new();
    let mut all = true;
    let mut report = |name: &str, result: anyhow::Result<()>| {
        match &result {
            Ok(()) => println!("PASS {name}"),
            Err(e) => println!("FAIL {name}: {e:#}"),
        }
        all &= result.is_ok();
    };

    report("cost formulas", check_costs());
    let cells: &[(Experiment, usize, usize, usize, usize)] = &[
        (Experiment::Sort, 1024, 4, 32, 8),
        (Experiment::Sort, 4096, 2, 16, 4),
        (Experiment::Permute, 1024, 4, 32, 8),
        (Experiment::Permute, 4096, 8, 16, 2),
        (Experiment::Pn, 1024, 4, 32, 8),
        (Experiment::Pn, 1024, 2, 12, 3),
        (Experiment::ListRank, 1024, 4, 64, 8),
        (Experiment::ListRank, 1024, 16, 32, 4),
        (Experiment::Gif, 1024, 32, 32, 16),
        (Experiment::Gif, 4096, 64, 64, 32),
    ];
    for &(experiment, n, p, m, b) in cells {
        let spec = SweepSpec {
            experiment,
            n: vec![n],
            p: if experiment == Experiment::Gif { vec![] } else { vec![p] },
            m: if experiment == Experiment::Gif { vec![] } else { vec![m] },
            b: if experiment == Experiment::Gif { vec![] } else { vec![b] },
            seeds: seeds.to_vec(),
            normalized: cli.normalized,
        };
        let got = run_sweep(&spec);
        let bad: Vec<String> = got
            .iter()
            .filter(|r| !r.error.is_empty())
            .map(|r| format!("seed {}: {}", r.seed, r.error))
            .collect();
        let res = if bad.is_empty() { Ok(()) } else { Err(anyhow::anyhow!(bad.join("; "))) };
        report(&format!("{experiment} audits at N={n} P={p} M={m} B={b}"), res);
        rows.extend(got);
    }
    report("list ranking oracle", check_list_ranks(seeds, cli.normalized));
    report("CREW and capacity rejection", check_machine_errors());
    report("reduction round trips", check_reductions());
    report("exhaustive counting bound", check_counting());
    report("quadrupling audit sensitivity", check_quadrupling_audit());
    if let Some(path) = &cli.out {
        emit(&rows, Some(path))?;
    }
    Ok(all)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> anyhow::Result<()> {
    if !cond {
        bail!(msg());
    }
    Ok(())
}

fn check_costs() -> anyhow::Result<()> {
    let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
    let perm = eval_perm_cost(&CostParams::new(1024, 32, 64, 16));
    ensure(close(perm, 12.0), || format!("perm(1024,32,64,16) = {perm}"))?;
    let sort = eval_sort_cost(&CostParams::new(64, 4, 16, 4));
    ensure(close(sort, 8.0), || format!("sort(64,4,16,4) = {sort}"))?;
    let c = CostParams::new(1 << 12, 16, 128, 2);
    let lr = eval_listrank_cost(&c);
    ensure(close(lr, eval_sort_cost(&c)), || format!("listrank with B < log P = {lr}"))
}

fn check_list_ranks(seeds: &[u64], normalized: bool) -> anyhow::Result<()> {
    for &(n, p, m, b) in &[(64, 16, 32, 4), (1024, 2, 128, 32), (1024, 4, 128, 8), (500, 3, 20, 5)] {
        for &seed in seeds {
            let list = LinkedListInstance::random(n, seed);
            let got = rank_list_with(&list, p, m, b, seed, normalized)?;
            ensure(got.ranks == sequential_rank_oracle(&list)?, || {
                format!("N={n} P={p} M={m} B={b} seed={seed}: ranks differ")
            })?;
        }
    }
    Ok(())
}

fn check_machine_errors() -> anyhow::Result<()> {
    let cfg = MachineConfig::new(2, 4, 2, 8)?;
    let mut m = Machine::new(cfg, (0..8).map(Payload::Plain).collect())?;
    let expect = |m: &mut Machine, step: Vec<Request>, want: fn(&Error) -> bool| {
        let before = m.io_count();
        match m.execute_step(&ParallelStep::new(step)) {
            Err(e) if want(&e) && m.io_count() == before => Ok(()),
            other => Err(anyhow::anyhow!("unexpected outcome {other:?}")),
        }
    };
    m.execute_step(&ParallelStep::new(vec![Request::Read(BlockId(0)), Request::Read(BlockId(1))]))?;
    expect(
        &mut m,
        vec![
            Request::Write(BlockId(2), vec![AtomId(0)]),
            Request::Write(BlockId(2), vec![AtomId(2)]),
        ],
        |e| matches!(e, Error::CrewViolation { .. }),
    )?;
    m.execute_step(&ParallelStep::new(vec![Request::Read(BlockId(2)), Request::Idle]))?;
    expect(
        &mut m,
        vec![Request::Read(BlockId(3)), Request::Idle],
        |e| matches!(e, Error::CacheOverflow { .. }),
    )?;
    expect(
        &mut m,
        vec![Request::Write(BlockId(3), vec![AtomId(0), AtomId(1), AtomId(4)]), Request::Idle],
        |e| matches!(e, Error::BlockOverflow { .. }),
    )?;
    expect(
        &mut m,
        vec![Request::Idle, Request::Write(BlockId(3), vec![AtomId(0)])],
        |e| matches!(e, Error::NotResident { .. }),
    )?;
    expect(&mut m, vec![Request::Idle], |e| matches!(e, Error::StepWidth { .. }))?;
    ensure(m.trace().find_crew_violation().is_none(), || "trace shows a CREW violation".into())
}

fn small_cfg(n: usize) -> anyhow::Result<MachineConfig> {
    let b = if n >= 4 { 2 } else { 1 };
    Ok(MachineConfig::new(2.min(n / b).max(1), 4 * b, b, n)?)
}

fn check_reductions() -> anyhow::Result<()> {
    for n in [2, 4, 6, 8] {
        for (i, pn) in enumerate_special_instances(n)?.iter().enumerate() {
            let se = pn_to_semigroup(pn, i as u64);
            let ev = solve_semigroup(&se, small_cfg(n)?, EvalStrategy::Balanced)?;
            ensure(contiguity_audit(&ev.log, &se.positions()).passed(), || {
                format!("PN N={n} #{i}: contiguity audit failed")
            })?;
            let found = extract_pn_solution(&ev.log, &se)?;
            ensure(pn.pairs().iter().all(|p| found.contains(p)), || {
                format!("PN N={n} #{i}: a pair was not extracted")
            })?;
        }
    }
    for seed in 0..10u64 {
        let n = 1 + (seed as usize * 13) % 64;
        let kind = if seed % 2 == 0 { SemigroupKind::Concatenation } else { SemigroupKind::Pairing };
        let se = SemigroupInstance::random(n, kind, seed)?;
        let ev = solve_edge_contraction(&semigroup_to_edge_contraction(&se), small_cfg(n)?, EvalStrategy::Balanced)?;
        ensure(replay_contractions(&ev.log, &se)? == se.direct_product(), || {
            format!("SE #{seed}: edge contraction replay differs")
        })?;
    }
    Ok(())
}

fn check_counting() -> anyhow::Result<()> {
    let (n, b) = (8, 4);
    for pn in enumerate_special_instances(n)? {
        let mut m = Machine::new(MachineConfig::new(2, 2 * b, b, n)?, (0..n as u64).map(Payload::Plain).collect())?;
        let input = m.initial_region();
        let (_, layout) = solve_proximate_neighbors(&mut m, &input, &pn.labels)?;
        let c = count_solved_instances(&layout, n, b)?;
        ensure((1..=16).contains(&c), || format!("{:?} solves {c} instances", pn.labels))?;
    }
    Ok(())
}

fn check_quadrupling_audit() -> anyhow::Result<()> {
    let edge = |k: usize| (Location::Block(BlockId(k)), Location::Block(BlockId(k + 1)));
    let graph = |mults: &[u64]| MultiplicityGraph {
        edges: mults.iter().enumerate().map(|(k, &c)| (edge(k), c)).collect(),
    };
    let honest = [graph(&[1, 1]), graph(&[2, 3]), graph(&[4, 8])];
    ensure(audit_quadrupling(&honest).passed(), || "honest sequence flagged".into())?;
    let doctored = [graph(&[1, 1]), graph(&[5, 5])];
    ensure(!audit_quadrupling(&doctored).passed(), || "injected jump not detected".into())
}
