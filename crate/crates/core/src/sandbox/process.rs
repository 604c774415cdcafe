//! Child process execution with wall-clock, memory, and output caps.

use std::io::{self, Read, Write};
use std::os::unix::process::CommandExt;
use std::path::Path;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

pub(crate) struct ProcLimits {
    pub timeout: Duration,
    pub memory_bytes: Option<u64>,
    pub stdout_cap: usize,
    pub stderr_cap: usize,
}

pub(crate) struct ProcOutcome {
    pub status: Option<ExitStatus>,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub elapsed: Duration,
    pub timed_out: bool,
    pub output_exceeded: bool,
}

const POLL: Duration = Duration::from_millis(2);

fn reader<R: Read + Send + 'static>(
    mut pipe: R,
    cap: usize,
    overflow: Option<Arc<AtomicBool>>,
) -> JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let mut chunk = [0u8; 8192];
        loop {
            match pipe.read(&mut chunk) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = cap.saturating_sub(buf.len());
                    buf.extend_from_slice(&chunk[..n.min(room)]);
                    if n > room {
                        if let Some(flag) = &overflow {
                            flag.store(true, Ordering::SeqCst);
                            // Dropping the pipe makes further writes fail.
                            break;
                        }
                    }
                }
            }
        }
        buf
    })
}

fn kill_group(child: &Child) {
    let pid = child.id() as libc::pid_t;
    // SAFETY: plain syscall; the group id equals the child pid because the
    // child was spawned with process_group(0).
    unsafe {
        libc::killpg(pid, libc::SIGKILL);
    }
}

pub(crate) fn run_process(
    argv: &[String],
    cwd: &Path,
    stdin: &[u8],
    limits: &ProcLimits,
) -> io::Result<ProcOutcome> {
    let (program, args) = argv
        .split_first()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "empty command"))?;
    let mut cmd = Command::new(program);
    cmd.args(args)
        .current_dir(cwd)
        .env_clear()
        .env("PATH", std::env::var_os("PATH").unwrap_or_else(|| "/usr/local/bin:/usr/bin:/bin".into()))
        .env("HOME", cwd)
        .env("TMPDIR", cwd)
        .env("LANG", "C.UTF-8")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    if let Some(bytes) = limits.memory_bytes {
        // SAFETY: only async-signal-safe setrlimit calls between fork and exec.
        unsafe {
            cmd.pre_exec(move || {
                let as_limit = libc::rlimit {
                    rlim_cur: bytes as libc::rlim_t,
                    rlim_max: bytes as libc::rlim_t,
                };
                let no_core = libc::rlimit {
                    rlim_cur: 0,
                    rlim_max: 0,
                };
                if libc::setrlimit(libc::RLIMIT_AS, &as_limit) != 0 {
                    return Err(io::Error::last_os_error());
                }
                libc::setrlimit(libc::RLIMIT_CORE, &no_core);
                Ok(())
            });
        }
    }

    let started = Instant::now();
    let mut child = cmd.spawn()?;
    let overflow = Arc::new(AtomicBool::new(false));
    let out = reader(
        child.stdout.take().expect("piped stdout"),
        limits.stdout_cap,
        Some(Arc::clone(&overflow)),
    );
    let err = reader(child.stderr.take().expect("piped stderr"), limits.stderr_cap, None);
    let writer = {
        let mut pipe = child.stdin.take().expect("piped stdin");
        let input = stdin.to_vec();
        thread::spawn(move || {
            let _ = pipe.write_all(&input);
        })
    };

    let mut timed_out = false;
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break Some(status);
        }
        if overflow.load(Ordering::SeqCst) {
            kill_group(&child);
            break child.wait().ok();
        }
        if started.elapsed() >= limits.timeout {
            timed_out = true;
            kill_group(&child);
            break child.wait().ok();
        }
        thread::sleep(POLL);
    };
    let elapsed = started.elapsed();
    // Reap anything the program left behind in its group.
    kill_group(&child);
    let _ = writer.join();
    let stdout = out.join().unwrap_or_default();
    let stderr = err.join().unwrap_or_default();
    Ok(ProcOutcome {
        status,
        stdout,
        stderr,
        elapsed,
        timed_out,
        output_exceeded: overflow.load(Ordering::SeqCst),
    })
}
