//! Timed process execution with bounded output capture.

use std::ffi::OsString;
use std::io::{self, Read, Write};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::Path;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::SandboxError;

/// Exit code reported when a command is killed for exceeding its timeout.
pub const TIMEOUT_EXIT_CODE: i32 = 124;

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub timeout: Duration,
    pub stdin: Option<Vec<u8>>,
    /// Per-stream capture limit; bytes past it are drained and dropped.
    pub output_limit: usize,
    /// Send stderr into the stdout capture, interleaved as written.
    pub merge_stderr: bool,
    pub env: Vec<(OsString, OsString)>,
}

impl RunOptions {
    pub fn new(timeout: Duration) -> Self {
        RunOptions {
            timeout,
            stdin: None,
            output_limit: 64 << 20,
            merge_stderr: false,
            env: Vec::new(),
        }
    }

    pub fn stdin(mut self, bytes: impl Into<Vec<u8>>) -> Self {
        self.stdin = Some(bytes.into());
        self
    }

    pub fn output_limit(mut self, limit: usize) -> Self {
        self.output_limit = limit;
        self
    }

    pub fn merge_stderr(mut self, merge: bool) -> Self {
        self.merge_stderr = merge;
        self
    }

    pub fn env(mut self, key: impl Into<OsString>, value: impl Into<OsString>) -> Self {
        self.env.push((key.into(), value.into()));
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExecResult {
    pub exit_code: i32,
    #[serde(skip)]
    pub stdout: Vec<u8>,
    #[serde(skip)]
    pub stderr: Vec<u8>,
    pub duration: Duration,
    pub timed_out: bool,
    pub stdout_truncated: bool,
    pub stderr_truncated: bool,
    /// Also the process-group id, since the child leads its own group.
    pub pid: u32,
}

impl ExecResult {
    pub fn success(&self) -> bool {
        self.exit_code == 0 && !self.timed_out
    }
}

struct Capture {
    bytes: Vec<u8>,
    truncated: bool,
}

fn drain<R: Read>(mut r: R, limit: usize) -> io::Result<Capture> {
    let mut bytes = Vec::new();
    let mut truncated = false;
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = match r.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        };
        let room = limit.saturating_sub(bytes.len());
        if n > room {
            truncated = true;
        }
        bytes.extend_from_slice(&buf[..n.min(room)]);
    }
    Ok(Capture { bytes, truncated })
}

fn kill_group(pgid: u32) {
    // ESRCH just means the group is already gone.
    unsafe {
        libc::kill(-(pgid as libc::pid_t), libc::SIGKILL);
    }
}

/// True once the child has exited, without reaping it, so that its pid (and
/// therefore the process-group id) cannot be recycled before we kill the group.
fn exited_nowait(pid: u32) -> io::Result<bool> {
    let mut info: libc::siginfo_t = unsafe { std::mem::zeroed() };
    let rc = unsafe {
        libc::waitid(
            libc::P_PID,
            pid as libc::id_t,
            &mut info,
            libc::WEXITED | libc::WNOHANG | libc::WNOWAIT,
        )
    };
    if rc < 0 {
        return Err(io::Error::last_os_error());
    }
    Ok(unsafe { info.si_pid() } != 0)
}

/// Pids of running (non-zombie) processes in group `pgid`, from `/proc`.
pub fn live_group_members(pgid: u32) -> io::Result<Vec<u32>> {
    let mut live = Vec::new();
    for entry in std::fs::read_dir("/proc")? {
        let entry = entry?;
        let Some(pid) = entry.file_name().to_str().and_then(|n| n.parse::<u32>().ok()) else {
            continue;
        };
        let Ok(stat) = std::fs::read_to_string(entry.path().join("stat")) else {
            continue;
        };
        // The command name is parenthesised and may contain spaces.
        let Some(rest) = stat.rsplit_once(')').map(|(_, r)| r) else {
            continue;
        };
        let mut fields = rest.split_whitespace();
        let state = fields.next();
        let pgrp = fields.nth(1).and_then(|f| f.parse::<u32>().ok());
        if pgrp == Some(pgid) && state != Some("Z") && state != Some("X") {
            live.push(pid);
        }
    }
    Ok(live)
}

fn exit_code(status: ExitStatus) -> i32 {
    status
        .code()
        .or_else(|| status.signal().map(|s| 128 + s))
        .unwrap_or(-1)
}

fn wait_with_deadline(child: &mut Child, timeout: Duration, start: Instant) -> io::Result<bool> {
    let mut pause = Duration::from_millis(1);
    loop {
        if exited_nowait(child.id())? {
            return Ok(false);
        }
        let elapsed = start.elapsed();
        if elapsed >= timeout {
            return Ok(true);
        }
        thread::sleep(pause.min(timeout - elapsed));
        pause = (pause * 2).min(Duration::from_millis(20));
    }
}

/// Runs `argv` with `cwd` as working directory.
///
/// The child leads a fresh process group; the whole group is killed when the
/// leader exits or the timeout fires, so background helpers cannot outlive
/// the call. A timeout is reported through `timed_out`, not as an error.
pub fn run(cwd: &Path, argv: &[OsString], opts: &RunOptions) -> Result<ExecResult, SandboxError> {
    let program = argv
        .first()
        .ok_or_else(|| SandboxError::Spawn {
            program: String::new(),
            source: io::Error::new(io::ErrorKind::InvalidInput, "empty argv"),
        })?
        .clone();
    let spawn_err = |source| SandboxError::Spawn {
        program: program.to_string_lossy().into_owned(),
        source,
    };

    let mut cmd = Command::new(&program);
    cmd.args(&argv[1..])
        .current_dir(cwd)
        .envs(opts.env.iter().map(|(k, v)| (k, v)))
        .stdin(if opts.stdin.is_some() {
            Stdio::piped()
        } else {
            Stdio::null()
        })
        .process_group(0);

    let merged = if opts.merge_stderr {
        let (reader, writer) = io::pipe().map_err(spawn_err)?;
        cmd.stdout(writer.try_clone().map_err(spawn_err)?).stderr(writer);
        Some(reader)
    } else {
        cmd.stdout(Stdio::piped()).stderr(Stdio::piped());
        None
    };

    let start = Instant::now();
    let mut child = cmd.spawn().map_err(spawn_err)?;
    // Drop our copies of the pipe write ends so readers see EOF.
    drop(cmd);
    let pid = child.id();

    let limit = opts.output_limit;
    let (out_reader, err_reader) = match merged {
        Some(r) => (thread::spawn(move || drain(r, limit)), None),
        None => {
            let out = child.stdout.take().expect("piped stdout");
            let err = child.stderr.take().expect("piped stderr");
            (
                thread::spawn(move || drain(out, limit)),
                Some(thread::spawn(move || drain(err, limit))),
            )
        }
    };
    let writer = match (child.stdin.take(), opts.stdin.clone()) {
        (Some(mut pipe), Some(bytes)) => Some(thread::spawn(move || {
            // The child may exit without reading everything.
            let _ = pipe.write_all(&bytes);
        })),
        _ => None,
    };

    let waited = wait_with_deadline(&mut child, opts.timeout, start);
    kill_group(pid);
    let status = child.wait();
    let duration = start.elapsed();
    let timed_out = waited.map_err(spawn_err)?;
    let status = status.map_err(spawn_err)?;

    let join = |h: thread::JoinHandle<io::Result<Capture>>| -> Result<Capture, SandboxError> {
        h.join()
            .map_err(|_| spawn_err(io::Error::other("output reader panicked")))?
            .map_err(spawn_err)
    };
    let out = join(out_reader)?;
    let err = match err_reader {
        Some(h) => join(h)?,
        None => Capture {
            bytes: Vec::new(),
            truncated: false,
        },
    };
    if let Some(w) = writer {
        let _ = w.join();
    }

    Ok(ExecResult {
        exit_code: if timed_out {
            TIMEOUT_EXIT_CODE
        } else {
            exit_code(status)
        },
        stdout: out.bytes,
        stderr: err.bytes,
        duration,
        timed_out,
        stdout_truncated: out.truncated,
        stderr_truncated: err.truncated,
        pid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sh(script: &str, opts: &RunOptions) -> ExecResult {
        let argv: Vec<OsString> = vec!["sh".into(), "-c".into(), script.into()];
        run(Path::new("."), &argv, opts).unwrap()
    }

    fn group_alive(pgid: u32) -> bool {
        // SIGKILL delivery is asynchronous; give the kernel a moment.
        for _ in 0..100 {
            if live_group_members(pgid).unwrap().is_empty() {
                return false;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
        true
    }

    #[test]
    fn exit_codes_and_streams() {
        let r = sh("echo out; echo err >&2; exit 3", &RunOptions::new(Duration::from_secs(10)));
        assert_eq!(r.exit_code, 3);
        assert!(!r.timed_out);
        assert_eq!(r.stdout, b"out\n");
        assert_eq!(r.stderr, b"err\n");
    }

    #[test]
    fn zero_exit_is_success() {
        let r = sh("true", &RunOptions::new(Duration::from_secs(10)));
        assert!(r.success());
    }

    #[test]
    fn timeout_kills_and_reports_sentinel() {
        let limit = Duration::from_millis(300);
        let r = sh("sleep 30", &RunOptions::new(limit));
        assert!(r.timed_out);
        assert_eq!(r.exit_code, TIMEOUT_EXIT_CODE);
        assert!(r.duration < limit + Duration::from_secs(2), "{:?}", r.duration);
        assert!(!group_alive(r.pid));
    }

    #[test]
    fn background_children_do_not_outlive_the_call() {
        let r = sh("sleep 30 & echo started", &RunOptions::new(Duration::from_secs(10)));
        assert_eq!(r.stdout, b"started\n");
        assert!(!r.timed_out);
        assert!(!group_alive(r.pid));
    }

    #[test]
    fn ten_megabytes_are_captured_without_deadlock() {
        let r = sh(
            "head -c 10485760 /dev/zero; head -c 1048576 /dev/zero >&2",
            &RunOptions::new(Duration::from_secs(60)),
        );
        assert_eq!(r.stdout.len(), 10 << 20);
        assert_eq!(r.stderr.len(), 1 << 20);
        assert!(!r.stdout_truncated);
    }

    #[test]
    fn output_past_the_cap_is_flagged() {
        let r = sh(
            "head -c 5000 /dev/zero",
            &RunOptions::new(Duration::from_secs(10)).output_limit(1000),
        );
        assert_eq!(r.stdout.len(), 1000);
        assert!(r.stdout_truncated);
        assert_eq!(r.exit_code, 0);
    }

    #[test]
    fn stdin_is_fed_and_stderr_merges() {
        let opts = RunOptions::new(Duration::from_secs(10))
            .stdin(b"hello".to_vec())
            .merge_stderr(true);
        let r = sh("cat; echo ' world' >&2", &opts);
        assert_eq!(r.stdout, b"hello world\n");
        assert!(r.stderr.is_empty());
    }

    #[test]
    fn missing_program_is_a_spawn_failure() {
        let argv = vec![OsString::from("/nonexistent/program")];
        let err = run(Path::new("."), &argv, &RunOptions::new(Duration::from_secs(1))).unwrap_err();
        assert!(matches!(err, SandboxError::Spawn { .. }));
    }
}
