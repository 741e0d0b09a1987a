use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use hierag_core::distill::{DistillError, LevelRunner, NodeOutput};

/// Runs the jobs of a level on a fixed pool of scoped threads.
///
/// Results come back in job order. After the first failure no new jobs are
/// started; jobs already running finish and are returned.
#[derive(Debug, Clone, Copy)]
pub struct ThreadedRunner {
    workers: usize,
}

impl ThreadedRunner {
    pub fn new(workers: usize) -> Self {
        ThreadedRunner {
            workers: workers.max(1),
        }
    }
}

impl LevelRunner for ThreadedRunner {
    fn run_level(
        &self,
        count: usize,
        job: &(dyn Fn(usize) -> Result<NodeOutput, DistillError> + Sync),
    ) -> Vec<Result<NodeOutput, DistillError>> {
        let next = AtomicUsize::new(0);
        let failed = AtomicBool::new(false);
        let slots: Mutex<Vec<Option<Result<NodeOutput, DistillError>>>> =
            Mutex::new((0..count).map(|_| None).collect());
        thread::scope(|s| {
            for _ in 0..self.workers.min(count) {
                s.spawn(|| loop {
                    if failed.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= count {
                        break;
                    }
                    let r = job(i);
                    if r.is_err() {
                        failed.store(true, Ordering::SeqCst);
                    }
                    slots.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(r);
                });
            }
        });
        slots
            .into_inner()
            .unwrap_or_else(|p| p.into_inner())
            .into_iter()
            .flatten()
            .collect()
    }
}
