#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};

pub fn erflow() -> Command {
    Command::new(env!("CARGO_BIN_EXE_erflow"))
}

pub fn toy_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

/// A running `erflow serve`; killed (not shut down) on drop.
pub struct Server {
    child: Child,
    pub addr: String,
}

impl Server {
    pub fn start(config: &Path, store: &Path) -> Server {
        let mut child = erflow()
            .args(["serve", "--config"])
            .arg(config)
            .args(["--listen", "127.0.0.1:0"])
            .env("ERFLOW_STORE", store)
            .stderr(Stdio::piped())
            .spawn()
            .expect("spawn erflow serve");
        let mut stderr = BufReader::new(child.stderr.take().unwrap());
        let mut line = String::new();
        let addr = loop {
            line.clear();
            if stderr.read_line(&mut line).unwrap() == 0 {
                panic!("server exited before listening");
            }
            if let Some(addr) = line.trim().strip_prefix("erflow: listening on ") {
                break addr.to_owned();
            }
        };
        // keep draining so the child never blocks on a full pipe
        std::thread::spawn(move || std::io::copy(&mut stderr, &mut std::io::sink()));
        Server { child, addr }
    }

    pub fn get(&self, path: &str) -> (u16, serde_json::Value) {
        request(&self.addr, "GET", path, "")
    }

    pub fn post(&self, path: &str, body: &str) -> (u16, serde_json::Value) {
        request(&self.addr, "POST", path, body)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn request(addr: &str, method: &str, path: &str, body: &str) -> (u16, serde_json::Value) {
    let mut stream = TcpStream::connect(addr).unwrap();
    write!(
        stream,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut raw = String::new();
    stream.read_to_string(&mut raw).unwrap();
    let (head, payload) = raw.split_once("\r\n\r\n").expect("http response");
    let status: u16 = head.split_whitespace().nth(1).unwrap().parse().unwrap();
    let payload = if head.to_ascii_lowercase().contains("transfer-encoding: chunked") {
        dechunk(payload)
    } else {
        payload.to_owned()
    };
    let value = serde_json::from_str(&payload).unwrap_or(serde_json::Value::String(payload));
    (status, value)
}

fn dechunk(mut s: &str) -> String {
    let mut out = String::new();
    loop {
        let (size, rest) = s.split_once("\r\n").unwrap();
        let size = usize::from_str_radix(size.trim(), 16).unwrap();
        if size == 0 {
            return out;
        }
        out.push_str(&rest[..size]);
        s = &rest[size + 2..];
    }
}

/// Ids of each profile's members.
pub fn members(profiles: &serde_json::Value) -> Vec<Vec<String>> {
    profiles
        .as_array()
        .unwrap()
        .iter()
        .map(|p| {
            p["member_ids"]
                .as_array()
                .unwrap()
                .iter()
                .map(|m| m.as_str().unwrap().to_owned())
                .collect()
        })
        .collect()
}

pub fn record_body(ordinal: u64, name: &str, city: &str) -> String {
    serde_json::json!({
        "source_id": "cust",
        "record_ordinal": ordinal,
        "payload": {"name": name, "city": city}
    })
    .to_string()
}
