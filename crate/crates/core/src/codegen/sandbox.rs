//! Runs a program as a child process in a fresh temporary directory with a
//! cleared environment, a wall-clock timeout that kills the whole process
//! group, capped output capture and, unless allowed, no network.

use std::io::{self, Read};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::process::{Child, Command, Stdio};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SandboxConfig;

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("interpreter `{0}` not found")]
    InterpreterMissing(String),
    #[error("sandbox setup failed: {0}")]
    Setup(#[source] io::Error),
    #[error("network isolation is unavailable ({0}); set code.sandbox.allow_network = true to run without it")]
    Isolation(#[source] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SandboxLimits {
    pub interpreter: Vec<String>,
    pub script_name: String,
    pub timeout: Duration,
    pub stream_cap: usize,
    pub allow_network: bool,
    pub env_allowlist: Vec<String>,
}

impl From<&SandboxConfig> for SandboxLimits {
    fn from(c: &SandboxConfig) -> Self {
        Self {
            interpreter: c.interpreter.clone(),
            script_name: c.script_name.clone(),
            timeout: Duration::from_secs(c.timeout_secs),
            stream_cap: c.stream_cap_bytes,
            allow_network: c.allow_network,
            env_allowlist: c.env_allowlist.clone(),
        }
    }
}

impl Default for SandboxLimits {
    fn default() -> Self {
        (&SandboxConfig::default()).into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxResult {
    /// Exit code, or 128 plus the signal number when killed by a signal.
    pub exit_status: i32,
    pub stdout: String,
    pub stderr: String,
    pub wall_time: Duration,
    pub timed_out: bool,
}

impl SandboxResult {
    pub fn success(&self) -> bool {
        self.exit_status == 0 && !self.timed_out
    }
}

pub(crate) fn truncation_marker(cap: usize, total: usize) -> String {
    format!("\n[output truncated: {total} bytes, first {cap} kept]\n")
}

/// Reads the whole stream, keeping the first `cap` bytes.
fn drain_capped(mut r: impl Read, cap: usize) -> String {
    let mut kept = Vec::new();
    let mut total = 0usize;
    let mut buf = [0u8; 8192];
    loop {
        match r.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => {
                if kept.len() < cap {
                    let take = n.min(cap - kept.len());
                    kept.extend_from_slice(&buf[..take]);
                }
                total += n;
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(_) => break,
        }
    }
    let mut s = String::from_utf8_lossy(&kept).into_owned();
    if total > cap {
        s.push_str(&truncation_marker(cap, total));
    }
    s
}

fn kill_group(child: &mut Child) {
    let pid = child.id() as libc::pid_t;
    // SAFETY: signalling our own child's process group.
    unsafe {
        libc::kill(-pid, libc::SIGKILL);
    }
    let _ = child.kill();
}

/// Executes `program` once under `limits`.
pub fn run_sandbox(program: &str, limits: &SandboxLimits) -> Result<SandboxResult, SandboxError> {
    let (bin, args) = limits
        .interpreter
        .split_first()
        .ok_or_else(|| SandboxError::InterpreterMissing(String::new()))?;
    let dir = tempfile::Builder::new().prefix("xkg-sandbox-").tempdir().map_err(SandboxError::Setup)?;
    let script = dir.path().join(&limits.script_name);
    std::fs::write(&script, program).map_err(SandboxError::Setup)?;

    let mut cmd = Command::new(bin);
    cmd.args(args)
        .arg(&limits.script_name)
        .current_dir(dir.path())
        .env_clear()
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    for key in &limits.env_allowlist {
        if let Some(v) = std::env::var_os(key) {
            cmd.env(key, v);
        }
    }
    cmd.env("TMPDIR", dir.path());
    let isolate = !limits.allow_network;
    // SAFETY: only async-signal-safe libc calls between fork and exec.
    unsafe {
        cmd.pre_exec(move || {
            if libc::setpgid(0, 0) != 0 {
                return Err(io::Error::last_os_error());
            }
            if isolate && libc::unshare(libc::CLONE_NEWUSER | libc::CLONE_NEWNET) != 0 {
                return Err(io::Error::last_os_error());
            }
            Ok(())
        });
    }

    let start = Instant::now();
    let mut child = match cmd.spawn() {
        Ok(c) => c,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(SandboxError::InterpreterMissing(bin.clone())),
        Err(e) if isolate && matches!(e.raw_os_error(), Some(libc::EPERM | libc::EINVAL | libc::ENOSPC | libc::EUSERS)) => {
            return Err(SandboxError::Isolation(e))
        }
        Err(e) => return Err(SandboxError::Setup(e)),
    };
    let cap = limits.stream_cap;
    let out = child.stdout.take().expect("piped stdout");
    let err = child.stderr.take().expect("piped stderr");
    let out_reader = thread::spawn(move || drain_capped(out, cap));
    let err_reader = thread::spawn(move || drain_capped(err, cap));

    let mut timed_out = false;
    let status = loop {
        match child.try_wait().map_err(SandboxError::Setup)? {
            Some(s) => break s,
            None if start.elapsed() >= limits.timeout => {
                timed_out = true;
                kill_group(&mut child);
                break child.wait().map_err(SandboxError::Setup)?;
            }
            None => thread::sleep(Duration::from_millis(5)),
        }
    };
    // Any process left in the group would keep the pipes open.
    kill_group(&mut child);
    let wall_time = start.elapsed();
    let stdout = out_reader.join().unwrap_or_default();
    let stderr = err_reader.join().unwrap_or_default();
    let exit_status = status.code().unwrap_or_else(|| 128 + status.signal().unwrap_or(0));
    Ok(SandboxResult {
        exit_status,
        stdout,
        stderr,
        wall_time,
        timed_out,
    })
}

/// A bounded pool of sandbox slots shared by concurrent pipeline tasks.
#[derive(Debug)]
pub struct Sandbox {
    limits: SandboxLimits,
    free: Mutex<usize>,
    released: Condvar,
}

impl Sandbox {
    pub fn new(limits: SandboxLimits, slots: usize) -> Self {
        Self {
            limits,
            free: Mutex::new(slots.max(1)),
            released: Condvar::new(),
        }
    }

    pub fn limits(&self) -> &SandboxLimits {
        &self.limits
    }

    /// Waits for a free slot, then runs `program` in a fresh directory.
    pub fn run(&self, program: &str) -> Result<SandboxResult, SandboxError> {
        {
            let mut free = self.free.lock().unwrap();
            while *free == 0 {
                free = self.released.wait(free).unwrap();
            }
            *free -= 1;
        }
        let result = run_sandbox(program, &self.limits);
        *self.free.lock().unwrap() += 1;
        self.released.notify_one();
        result
    }
}
