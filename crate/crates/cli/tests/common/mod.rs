#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

type Responder = dyn Fn(&str) -> (u16, String) + Send + Sync;

/// Local chat-completions stand-in. Every request bumps `calls`; replies
/// are delayed a little, by an amount derived from the prompt, so that
/// concurrent requests finish out of order.
pub struct Stub {
    pub url: String,
    pub calls: Arc<AtomicUsize>,
    pub auth: Arc<Mutex<Vec<Option<String>>>>,
    server: Arc<tiny_http::Server>,
}

impl Stub {
    pub fn start(respond: impl Fn(&str) -> (u16, String) + Send + Sync + 'static) -> Stub {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
        let port = server.server_addr().to_ip().unwrap().port();
        let calls = Arc::new(AtomicUsize::new(0));
        let auth = Arc::new(Mutex::new(Vec::new()));
        let respond: Arc<Responder> = Arc::new(respond);
        {
            let (server, calls, auth) = (server.clone(), calls.clone(), auth.clone());
            thread::spawn(move || {
                for mut req in server.incoming_requests() {
                    calls.fetch_add(1, Ordering::SeqCst);
                    let header = req
                        .headers()
                        .iter()
                        .find(|h| h.field.equiv("Authorization"))
                        .map(|h| h.value.to_string());
                    auth.lock().unwrap().push(header);
                    let mut body = String::new();
                    req.as_reader().read_to_string(&mut body).unwrap();
                    let v: Value = serde_json::from_str(&body).unwrap();
                    let prompt = v["messages"]
                        .as_array()
                        .and_then(|m| m.last())
                        .map(|m| m["content"].clone())
                        .unwrap_or_else(|| v["prompt"].clone())
                        .as_str()
                        .unwrap_or_default()
                        .to_string();
                    let respond = respond.clone();
                    thread::spawn(move || {
                        let delay = prompt
                            .bytes()
                            .fold(7u64, |a, b| a.wrapping_mul(31).wrapping_add(b as u64))
                            % 25;
                        thread::sleep(Duration::from_millis(delay));
                        let (status, answer) = respond(&prompt);
                        let body = if status == 200 { chat_body(&answer) } else { answer };
                        let _ = req.respond(tiny_http::Response::from_string(body).with_status_code(status));
                    });
                }
            });
        }
        Stub {
            url: format!("http://127.0.0.1:{port}/v1"),
            calls,
            auth,
            server,
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Drop for Stub {
    fn drop(&mut self) {
        self.server.unblock();
    }
}

pub fn chat_body(answer: &str) -> String {
    json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": answer}}]}).to_string()
}

/// Canned answer: the gold triplet for the queried pair, read back from
/// the appended query triplet and a relation chosen by the caller.
pub fn echo_query(prompt: &str, relation: &str) -> String {
    let q = prompt
        .lines()
        .find(|l| l.starts_with("([") && l.contains(", ?, "))
        .expect("prompt has a query triplet");
    q.replacen('?', relation, 1)
}

use std::path::PathBuf;
use std::process::{Command, Output};

pub fn core_fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

pub fn dscre(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dscre"))
        .args(args)
        .env_remove("DSCRE_API_KEY")
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn config_hash(o: &Output) -> String {
    stderr(o)
        .lines()
        .find_map(|l| l.strip_prefix("config hash: "))
        .expect("config hash printed")
        .to_string()
}
