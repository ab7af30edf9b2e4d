#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

pub const BIN: &str = env!("CARGO_BIN_EXE_dalton");
pub const TOKEN: &str = "acceptance-admin";

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

pub fn scenario(name: &str) -> PathBuf {
    repo_root().join("scenarios").join(format!("{name}.scn"))
}

/// A hub config on an ephemeral port with one admin user.
pub fn hub_config(data_dir: &Path, simulate: Option<&str>) -> String {
    let mut cfg = format!(
        "data_dir = {:?}\n[gateway]\nbind = \"127.0.0.1:0\"\nheartbeat_s = 1\n\n[[users]]\nuser_id = \"admin\"\nrole = \"ADMIN\"\ntoken = \"{TOKEN}\"\n",
        data_dir.display().to_string()
    );
    if let Some(s) = simulate {
        cfg.push_str(&format!("\n[simulator]\nscenario = {:?}\n", scenario(s).display().to_string()));
    }
    cfg
}

pub struct Hub {
    pub child: Child,
    pub url: String,
}

impl Hub {
    /// Starts `dalton serve` and waits for its listening line.
    pub fn start(config: &Path) -> Hub {
        let mut child = Command::new(BIN)
            .args(["serve", "--config"])
            .arg(config)
            .env_remove("DALTON_DATA_DIR")
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let url = line.trim().strip_prefix("listening ").unwrap_or_else(|| panic!("no listening line: {line:?}")).to_string();
        Hub { child, url }
    }

    pub fn get(&self, path: &str) -> reqwest::blocking::Response {
        reqwest::blocking::Client::new()
            .get(format!("{}{path}", self.url))
            .bearer_auth(TOKEN)
            .send()
            .unwrap()
    }

    pub fn json(&self, path: &str) -> serde_json::Value {
        serde_json::from_str(&self.get(path).text().unwrap()).unwrap()
    }

    /// `data` of every `reading` event on the live channel for `window`.
    pub fn stream_readings(&self, window: Duration) -> Vec<serde_json::Value> {
        let mut resp = reqwest::blocking::Client::builder()
            .timeout(None)
            .build()
            .unwrap()
            .get(format!("{}/api/v1/stream", self.url))
            .bearer_auth(TOKEN)
            .send()
            .unwrap();
        let start = Instant::now();
        let mut buf = String::new();
        let mut chunk = [0u8; 8192];
        while start.elapsed() < window {
            let n = resp.read(&mut chunk).unwrap();
            if n == 0 {
                break;
            }
            buf.push_str(&String::from_utf8_lossy(&chunk[..n]));
        }
        let mut out = Vec::new();
        // only complete events
        let complete = &buf[..buf.rfind("\n\n").map_or(0, |i| i + 2)];
        for block in complete.split("\n\n") {
            let mut event = "";
            let mut data = "";
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("event:") {
                    event = v.trim();
                } else if let Some(v) = line.strip_prefix("data:") {
                    data = v.trim();
                }
            }
            if event == "reading" {
                out.push(serde_json::from_str(data).unwrap());
            }
        }
        out
    }

    pub fn interrupt(mut self) -> std::process::ExitStatus {
        let pid = self.child.id().to_string();
        Command::new("kill").args(["-INT", &pid]).status().unwrap();
        wait_timeout(&mut self.child, Duration::from_secs(10)).expect("hub did not stop on interrupt")
    }

    pub fn crash(mut self) {
        self.child.kill().unwrap();
        let _ = self.child.wait();
    }
}

pub fn wait_timeout(child: &mut Child, limit: Duration) -> Option<std::process::ExitStatus> {
    let start = Instant::now();
    while start.elapsed() < limit {
        if let Some(s) = child.try_wait().unwrap() {
            return Some(s);
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    let _ = child.kill();
    None
}

pub fn dalton(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).env_remove("DALTON_DATA_DIR").output().unwrap()
}
