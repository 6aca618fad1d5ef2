//! Black-box agents answered by a child process.
//!
//! Protocol, one request per line on the child's stdin:
//! `x_1 .. x_n | w_1 .. w_p`, answered by one line `y_1 .. y_n` with the
//! noise-free successor. Numbers are whitespace separated. The child is
//! shared by all agents and queried under a lock.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context, Result};
use sbcert_core::system::TransitionFn;

struct Pipes {
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    line: String,
}

pub struct Oracle {
    child: Mutex<Child>,
    pipes: Mutex<Pipes>,
    state_dim: usize,
}

impl Oracle {
    pub fn spawn(command: &[String], state_dim: usize) -> Result<Self> {
        let Some((prog, args)) = command.split_first() else { bail!("external agent command is empty") };
        let mut child = Command::new(prog)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .with_context(|| format!("starting oracle {prog}"))?;
        let stdin = child.stdin.take().expect("piped");
        let stdout = BufReader::new(child.stdout.take().expect("piped"));
        Ok(Oracle { child: Mutex::new(child), pipes: Mutex::new(Pipes { stdin, stdout, line: String::new() }), state_dim })
    }

    pub fn query(&self, x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let mut p = self.pipes.lock().expect("oracle lock poisoned");
        let fmt = |v: &[f64]| v.iter().map(|a| format!("{a:e}")).collect::<Vec<_>>().join(" ");
        writeln!(p.stdin, "{} | {}", fmt(x), fmt(w))?;
        p.stdin.flush()?;
        let Pipes { stdout, line, .. } = &mut *p;
        line.clear();
        if stdout.read_line(line)? == 0 {
            bail!("oracle closed its output");
        }
        let y = line.split_whitespace().map(|t| t.parse::<f64>().with_context(|| format!("oracle sent '{t}'"))).collect::<Result<Vec<_>>>()?;
        if y.len() != self.state_dim {
            bail!("oracle answered {} values, expected {}", y.len(), self.state_dim);
        }
        Ok(y)
    }

    /// Wraps the oracle as a transition; failures are logged and surface
    /// as a dimension error in the caller.
    pub fn into_transition(self) -> Arc<TransitionFn> {
        let me = Arc::new(self);
        Arc::new(move |x: &[f64], w: &[f64]| match me.query(x, w) {
            Ok(y) => y,
            Err(e) => {
                log::error!("oracle query failed: {e:#}");
                Vec::new()
            }
        })
    }
}

impl Drop for Oracle {
    fn drop(&mut self) {
        if let Ok(mut c) = self.child.lock() {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}
