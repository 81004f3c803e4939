use std::io::Read;
use std::os::unix::process::CommandExt;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Exit code reported for commands killed on timeout (128 + SIGKILL).
pub const KILL_EXIT_CODE: i32 = 137;

/// How long reader threads may outlive the command before output is abandoned.
pub const GRACE: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecResult {
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
    pub timed_out: bool,
    pub duration_secs: f64,
}

impl ExecResult {
    pub fn success(&self) -> bool {
        self.exit_code == 0 && !self.timed_out
    }

    /// Stdout and stderr joined for display.
    pub fn combined(&self) -> String {
        match (self.stdout.is_empty(), self.stderr.is_empty()) {
            (true, true) => String::new(),
            (false, true) => self.stdout.clone(),
            (true, false) => self.stderr.clone(),
            (false, false) => format!("{}\n{}", self.stdout.trim_end_matches('\n'), self.stderr),
        }
    }
}

struct Captured {
    head: Vec<u8>,
    total: usize,
}

impl Captured {
    fn render(self, cap: usize) -> String {
        let mut text = String::from_utf8_lossy(&self.head).into_owned();
        if self.total > cap {
            if !text.ends_with('\n') {
                text.push('\n');
            }
            text.push_str(&format!("[output truncated: {} of {} bytes omitted]\n", self.total - cap, self.total));
        }
        text
    }
}

fn spawn_reader<R: Read + Send + 'static>(mut stream: R, cap: usize) -> mpsc::Receiver<Captured> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut head = Vec::new();
        let mut total = 0usize;
        let mut buf = [0u8; 8192];
        loop {
            match stream.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    if head.len() < cap {
                        let take = n.min(cap - head.len());
                        head.extend_from_slice(&buf[..take]);
                    }
                    total += n;
                }
            }
        }
        let _ = tx.send(Captured { head, total });
    });
    rx
}

fn kill_group(child: &Child) {
    // The child leads its own process group, so this reaches every descendant
    // that did not detach itself.
    let pid = child.id() as libc::pid_t;
    unsafe {
        libc::kill(-pid, libc::SIGKILL);
    }
}

/// Runs `cmd` to completion or until `timeout`, capturing at most `cap` bytes
/// of each stream.
pub fn run(mut cmd: Command, timeout: Duration, cap: usize) -> std::io::Result<ExecResult> {
    cmd.stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    let start = Instant::now();
    let mut child = cmd.spawn()?;
    let out_rx = spawn_reader(child.stdout.take().expect("piped stdout"), cap);
    let err_rx = spawn_reader(child.stderr.take().expect("piped stderr"), cap);

    let mut poll = Duration::from_millis(1);
    let (status, timed_out) = loop {
        if let Some(status) = child.try_wait()? {
            break (Some(status), false);
        }
        if start.elapsed() >= timeout {
            kill_group(&child);
            let _ = child.wait();
            break (None, true);
        }
        thread::sleep(poll.min(timeout.saturating_sub(start.elapsed())).max(Duration::from_millis(1)));
        poll = (poll * 2).min(Duration::from_millis(20));
    };
    // Stragglers left in the group would otherwise hold the pipes open.
    kill_group(&child);

    let deadline = Instant::now() + GRACE;
    let collect = |rx: mpsc::Receiver<Captured>| {
        rx.recv_timeout(deadline.saturating_duration_since(Instant::now()))
            .map(|c| c.render(cap))
            .unwrap_or_default()
    };
    let stdout = collect(out_rx);
    let stderr = collect(err_rx);

    let exit_code = match status {
        _ if timed_out => KILL_EXIT_CODE,
        Some(s) => s.code().unwrap_or_else(|| {
            use std::os::unix::process::ExitStatusExt;
            128 + s.signal().unwrap_or(0)
        }),
        None => KILL_EXIT_CODE,
    };
    Ok(ExecResult {
        exit_code,
        stdout,
        stderr,
        timed_out,
        duration_secs: start.elapsed().as_secs_f64(),
    })
}
