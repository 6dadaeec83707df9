//! Process supervision for launched applications.

use std::collections::BTreeSet;
use std::io::Read;
use std::net::TcpListener;
use std::os::unix::process::CommandExt;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::workspace::TemplateDescriptor;

/// Hands out ports that are free on the host and unique among live instances.
#[derive(Debug)]
pub struct PortAllocator {
    base: u16,
    live: Mutex<BTreeSet<u16>>,
}

impl PortAllocator {
    pub fn new(base: u16) -> Self {
        PortAllocator { base, live: Mutex::new(BTreeSet::new()) }
    }

    pub fn base(&self) -> u16 {
        self.base
    }

    /// Sequentially probe upward from `requested` (or the base) for a free port.
    pub fn allocate(&self, requested: Option<u16>) -> Option<u16> {
        let start = requested.unwrap_or(self.base);
        let mut live = self.live.lock().expect("port table lock");
        for port in start..=u16::MAX {
            if port == 0 || live.contains(&port) {
                continue;
            }
            if TcpListener::bind(("127.0.0.1", port)).is_ok() {
                live.insert(port);
                return Some(port);
            }
        }
        None
    }

    pub fn release(&self, port: u16) {
        self.live.lock().expect("port table lock").remove(&port);
    }

    pub fn live(&self) -> Vec<u16> {
        self.live.lock().expect("port table lock").iter().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceState {
    Starting,
    Ready,
    Failed,
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LaunchFailure {
    ProbeTimeout,
    ProcessExited,
    SpawnFailed,
    NoFreePort,
}

#[derive(Debug, Clone, Default)]
struct LogBuffers {
    stdout: Arc<Mutex<String>>,
    stderr: Arc<Mutex<String>>,
}

/// A launched application process and its captured output.
pub struct AppInstance {
    child: Option<Child>,
    pid: Option<u32>,
    port: u16,
    base_url: String,
    state: InstanceState,
    failure: Option<LaunchFailure>,
    logs: LogBuffers,
    readers: Vec<JoinHandle<()>>,
    ports: Option<Arc<PortAllocator>>,
    root: String,
}

impl std::fmt::Debug for AppInstance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AppInstance")
            .field("pid", &self.pid)
            .field("port", &self.port)
            .field("state", &self.state)
            .finish()
    }
}

#[derive(Debug, thiserror::Error)]
#[error("launch failed ({failure:?}): {message}")]
pub struct LaunchError {
    pub failure: LaunchFailure,
    pub message: String,
    /// The failed instance, kept so its logs reach deployment verification.
    pub instance: Box<AppInstance>,
}

impl AppInstance {
    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn pid(&self) -> Option<u32> {
        self.pid
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn state(&self) -> InstanceState {
        self.state
    }

    pub fn failure(&self) -> Option<LaunchFailure> {
        self.failure
    }

    pub fn stdout(&self) -> String {
        self.logs.stdout.lock().expect("log lock").clone()
    }

    pub fn stderr(&self) -> String {
        self.logs.stderr.lock().expect("log lock").clone()
    }

    /// Captured logs with host-specific details (workspace path, port) masked.
    pub fn sanitized_logs(&self) -> String {
        let mut out = String::new();
        for (name, text) in [("stdout", self.stdout()), ("stderr", self.stderr())] {
            if text.trim().is_empty() {
                continue;
            }
            out.push_str(&format!("[{name}]\n{}\n", text.trim_end()));
        }
        let mut out = out.replace(&self.root, ".");
        if self.port != 0 {
            out = out.replace(&self.port.to_string(), "{port}");
        }
        out
    }

    fn is_running(&mut self) -> bool {
        match self.child.as_mut() {
            Some(child) => matches!(child.try_wait(), Ok(None)),
            None => false,
        }
    }

    /// Terminate the whole process group and reap the child.
    pub fn stop(&mut self) {
        if let Some(mut child) = self.child.take() {
            let pgid = child.id() as libc::pid_t;
            // SAFETY: signalling a process group we created; failures are harmless.
            unsafe {
                libc::kill(-pgid, libc::SIGTERM);
            }
            let deadline = Instant::now() + Duration::from_millis(1500);
            loop {
                match child.try_wait() {
                    Ok(Some(_)) => break,
                    Ok(None) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(20)),
                    _ => break,
                }
            }
            // Grandchildren may outlive the leader; always sweep the group.
            unsafe {
                libc::kill(-pgid, libc::SIGKILL);
            }
            let _ = child.kill();
            let _ = child.wait();
        }
        for reader in self.readers.drain(..) {
            let _ = reader.join();
        }
        if let Some(ports) = self.ports.take() {
            ports.release(self.port);
        }
        if self.state != InstanceState::Failed {
            self.state = InstanceState::Stopped;
        }
    }
}

impl Drop for AppInstance {
    fn drop(&mut self) {
        self.stop();
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SupervisorConfig {
    pub probe_timeout_ms: u64,
    pub probe_interval_ms: u64,
    pub install_timeout_secs: u64,
}

impl Default for SupervisorConfig {
    fn default() -> Self {
        SupervisorConfig { probe_timeout_ms: 20_000, probe_interval_ms: 100, install_timeout_secs: 600 }
    }
}

fn spawn_reader<R: Read + Send + 'static>(mut src: R, sink: Arc<Mutex<String>>) -> JoinHandle<()> {
    std::thread::spawn(move || {
        let mut buf = [0u8; 4096];
        loop {
            match src.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => sink.lock().expect("log lock").push_str(&String::from_utf8_lossy(&buf[..n])),
            }
        }
    })
}

fn shell(command: &str, root: &Path, port: u16, template: &TemplateDescriptor) -> Command {
    let mut cmd = Command::new("sh");
    cmd.arg("-c")
        .arg(command.replace("{port}", &port.to_string()))
        .current_dir(root)
        .env("PORT", port.to_string())
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    for (k, v) in &template.env {
        cmd.env(k, v.replace("{port}", &port.to_string()));
    }
    cmd
}

/// Run the template's install command to completion. Returns combined output on failure.
pub fn run_install(template: &TemplateDescriptor, root: &Path, timeout: Duration) -> Result<(), String> {
    let Some(install) = template.install_command.as_deref().filter(|c| !c.trim().is_empty()) else {
        return Ok(());
    };
    let mut inst = spawn(template, install, root, 0, None).map_err(|e| e.message)?;
    let deadline = Instant::now() + timeout;
    loop {
        let status = inst.child.as_mut().and_then(|c| c.try_wait().ok()).flatten();
        if let Some(status) = status {
            inst.child = None;
            for r in inst.readers.drain(..) {
                let _ = r.join();
            }
            if status.success() {
                return Ok(());
            }
            return Err(format!("install command failed ({status})\n{}", inst.sanitized_logs()));
        }
        if Instant::now() >= deadline {
            let logs = inst.sanitized_logs();
            inst.stop();
            return Err(format!("install command timed out\n{logs}"));
        }
        std::thread::sleep(Duration::from_millis(50));
    }
}

fn spawn(
    template: &TemplateDescriptor,
    command: &str,
    root: &Path,
    port: u16,
    ports: Option<Arc<PortAllocator>>,
) -> Result<AppInstance, LaunchError> {
    let logs = LogBuffers::default();
    let mut inst = AppInstance {
        child: None,
        pid: None,
        port,
        base_url: format!("http://127.0.0.1:{port}"),
        state: InstanceState::Starting,
        failure: None,
        logs: logs.clone(),
        readers: Vec::new(),
        ports,
        root: root.display().to_string(),
    };
    match shell(command, root, port, template).spawn() {
        Ok(mut child) => {
            inst.pid = Some(child.id());
            if let Some(out) = child.stdout.take() {
                inst.readers.push(spawn_reader(out, logs.stdout.clone()));
            }
            if let Some(err) = child.stderr.take() {
                inst.readers.push(spawn_reader(err, logs.stderr.clone()));
            }
            inst.child = Some(child);
            Ok(inst)
        }
        Err(e) => {
            inst.state = InstanceState::Failed;
            inst.failure = Some(LaunchFailure::SpawnFailed);
            Err(LaunchError { failure: LaunchFailure::SpawnFailed, message: e.to_string(), instance: Box::new(inst) })
        }
    }
}

fn probe_once(url: &str, expected: u16) -> bool {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_millis(1000)))
        .build()
        .into();
    match agent.get(url).call() {
        Ok(resp) => resp.status().as_u16() == expected,
        Err(_) => false,
    }
}

/// Start the template's launch command on `port` (or the next free one) and
/// poll the readiness probe until it answers or the process dies.
pub fn launch(
    template: &TemplateDescriptor,
    root: &Path,
    requested_port: Option<u16>,
    ports: &Arc<PortAllocator>,
    config: &SupervisorConfig,
) -> Result<AppInstance, LaunchError> {
    let Some(port) = ports.allocate(requested_port) else {
        let inst = AppInstance {
            child: None,
            pid: None,
            port: 0,
            base_url: String::new(),
            state: InstanceState::Failed,
            failure: Some(LaunchFailure::NoFreePort),
            logs: LogBuffers::default(),
            readers: Vec::new(),
            ports: None,
            root: root.display().to_string(),
        };
        return Err(LaunchError {
            failure: LaunchFailure::NoFreePort,
            message: "no free port available".into(),
            instance: Box::new(inst),
        });
    };
    let mut inst = spawn(template, &template.launch_command, root, port, Some(ports.clone()))?;
    let probe_url = format!("{}{}", inst.base_url, template.probe.path);
    let deadline = Instant::now() + Duration::from_millis(config.probe_timeout_ms);
    debug!(port, pid = ?inst.pid, "waiting for readiness");
    loop {
        if !inst.is_running() {
            // Let the readers drain so the logs are complete.
            for r in inst.readers.drain(..) {
                let _ = r.join();
            }
            inst.stop();
            inst.state = InstanceState::Failed;
            inst.failure = Some(LaunchFailure::ProcessExited);
            let message = format!("process exited before becoming ready\n{}", inst.sanitized_logs());
            warn!(port, "application exited during startup");
            return Err(LaunchError { failure: LaunchFailure::ProcessExited, message, instance: Box::new(inst) });
        }
        if probe_once(&probe_url, template.probe.expected_status) {
            inst.state = InstanceState::Ready;
            return Ok(inst);
        }
        if Instant::now() >= deadline {
            let logs = inst.sanitized_logs();
            inst.stop();
            inst.state = InstanceState::Failed;
            inst.failure = Some(LaunchFailure::ProbeTimeout);
            return Err(LaunchError {
                failure: LaunchFailure::ProbeTimeout,
                message: format!("readiness probe did not succeed in time\n{logs}"),
                instance: Box::new(inst),
            });
        }
        std::thread::sleep(Duration::from_millis(config.probe_interval_ms));
    }
}

/// Whether a process with this pid still exists (zombies count as gone).
pub fn process_alive(pid: u32) -> bool {
    let stat = match std::fs::read_to_string(format!("/proc/{pid}/stat")) {
        Ok(s) => s,
        Err(_) => return false,
    };
    // Field 3 is the state; it follows the parenthesised command name.
    let state = stat.rsplit_once(')').and_then(|(_, rest)| rest.split_whitespace().next());
    !matches!(state, Some("Z") | Some("X") | None)
}

/// Pids of live processes whose process group is `pgid`.
pub fn group_members(pgid: u32) -> Vec<u32> {
    let mut out = Vec::new();
    let Ok(entries) = std::fs::read_dir("/proc") else { return out };
    for entry in entries.flatten() {
        let Some(pid) = entry.file_name().to_str().and_then(|s| s.parse::<u32>().ok()) else { continue };
        let Ok(stat) = std::fs::read_to_string(format!("/proc/{pid}/stat")) else { continue };
        let Some((_, rest)) = stat.rsplit_once(')') else { continue };
        let fields: Vec<&str> = rest.split_whitespace().collect();
        // state ppid pgrp ...
        if fields.len() > 2 && fields[2] == pgid.to_string() && !matches!(fields[0], "Z" | "X") {
            out.push(pid);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocator_never_hands_out_a_live_port_twice() {
        let ports = PortAllocator::new(42_000);
        let a = ports.allocate(Some(42_000)).unwrap();
        let b = ports.allocate(Some(42_000)).unwrap();
        assert_ne!(a, b);
        assert!(b > a);
        ports.release(a);
        assert_eq!(ports.allocate(Some(42_000)), Some(a));
    }

    #[test]
    fn allocator_skips_bound_ports() {
        let held = TcpListener::bind(("127.0.0.1", 0)).unwrap();
        let busy = held.local_addr().unwrap().port();
        let ports = PortAllocator::new(busy);
        assert_ne!(ports.allocate(None), Some(busy));
    }
}
