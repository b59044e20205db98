use std::io::{BufRead, Write};

use rewardtree_core::orchestrator::{Labeler, PendingPair, Session};
use rewardtree_core::Result;

/// Reads labels from a line-oriented reader. An empty line or end of input
/// pauses the run.
pub struct StdinLabeler<R> {
    input: R,
}

impl StdinLabeler<std::io::StdinLock<'static>> {
    pub fn new() -> Self {
        Self {
            input: std::io::stdin().lock(),
        }
    }
}

/// Learnt return of a stored trajectory.
fn learnt_return(session: &Session, index: usize) -> f64 {
    session
        .store()
        .get(index)
        .map_or(f64::NAN, |t| session.tree().trajectory_return(&t.steps))
}

impl<R: BufRead> Labeler for StdinLabeler<R> {
    fn source(&self) -> &str {
        "human"
    }

    fn label(&mut self, session: &mut Session, pair: &PendingPair) -> Result<Option<f64>> {
        let mut err = std::io::stderr();
        loop {
            let _ = write!(
                err,
                "label {} (batch {}): trajectory {} [learnt {:.3}] vs {} [learnt {:.3}]; P(first preferred) = ",
                pair.k,
                pair.batch,
                pair.i,
                learnt_return(session, pair.i),
                pair.j,
                learnt_return(session, pair.j),
            );
            let _ = err.flush();
            let mut line = String::new();
            if self.input.read_line(&mut line).unwrap_or(0) == 0 || line.trim().is_empty() {
                return Ok(None);
            }
            match line.trim().parse::<f64>() {
                Ok(y) if (0.0..=1.0).contains(&y) => return Ok(Some(y)),
                _ => {
                    let _ = writeln!(err, "expected a number in [0, 1]");
                }
            }
        }
    }
}
