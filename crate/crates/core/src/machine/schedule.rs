//! Lock-step driver for per-processor jobs.
//!
//! Each job is a small state machine. Once per parallel I/O it is polled with
//! mutable access to the shared context, may do free in-cache work, and
//! returns the request it wants executed in this step, or `None` when done.

use super::{Machine, ParallelStep, Request};
use crate::error::Result;

pub trait HasMachine {
    fn machine(&mut self) -> &mut Machine;
}

impl HasMachine for Machine {
    fn machine(&mut self) -> &mut Machine {
        self
    }
}

pub trait ProcJob<C: HasMachine> {
    fn poll(&mut self, proc: usize, ctx: &mut C) -> Result<Option<Request>>;
}

/// Runs `queues[p]` one job after another on processor `p`, all processors in
/// lock-step, and returns the finished jobs. A processor whose queue is
/// exhausted idles. In normalized mode mixed steps are split in two.
pub fn run_jobs<C, J>(ctx: &mut C, queues: Vec<Vec<J>>) -> Result<Vec<Vec<J>>>
where
    C: HasMachine,
    J: ProcJob<C>,
{
    let p = ctx.machine().config().p;
    let mut pending: Vec<std::collections::VecDeque<J>> =
        queues.into_iter().map(Into::into).collect();
    pending.resize_with(p, Default::default);
    let mut done: Vec<Vec<J>> = (0..p).map(|_| Vec::new()).collect();
    let mut step = ParallelStep::new(Vec::with_capacity(p));
    loop {
        let requests = &mut step.requests;
        requests.clear();
        let mut active = false;
        for proc in 0..p {
            let mut req = Request::Idle;
            while let Some(job) = pending[proc].front_mut() {
                match job.poll(proc, ctx)? {
                    Some(r) => {
                        req = r;
                        active = true;
                        break;
                    }
                    None => done[proc].push(pending[proc].pop_front().unwrap()),
                }
            }
            requests.push(req);
        }
        if !active {
            return Ok(done);
        }
        ctx.machine().execute_split(&step)?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::{AtomId, BlockId, MachineConfig, Payload};

    /// Reads one block then writes its atoms to another.
    struct MoveBlock {
        from: BlockId,
        to: BlockId,
        stage: u8,
    }

    impl ProcJob<Machine> for MoveBlock {
        fn poll(&mut self, proc: usize, m: &mut Machine) -> Result<Option<Request>> {
            self.stage += 1;
            Ok(match self.stage {
                1 => Some(Request::Read(self.from)),
                2 => {
                    let ids: Vec<AtomId> = m.cache(proc).iter().map(|a| a.id).collect();
                    Some(Request::Write(self.to, ids))
                }
                _ => None,
            })
        }
    }

    #[test]
    fn jobs_run_in_lock_step() {
        let cfg = MachineConfig::new(2, 4, 2, 8).unwrap();
        let mut m = Machine::new(cfg, (0..8).map(Payload::Plain).collect()).unwrap();
        let dst: Vec<BlockId> = (0..4).map(|_| m.alloc_block()).collect();
        let queues = vec![
            vec![
                MoveBlock { from: BlockId(0), to: dst[0], stage: 0 },
                MoveBlock { from: BlockId(1), to: dst[1], stage: 0 },
            ],
            vec![MoveBlock { from: BlockId(2), to: dst[2], stage: 0 }],
        ];
        let done = run_jobs(&mut m, queues).unwrap();
        assert_eq!(done[0].len(), 2);
        assert_eq!(m.io_count(), 4);
        assert_eq!(m.block(dst[1]).unwrap().len(), 2);
    }
}
