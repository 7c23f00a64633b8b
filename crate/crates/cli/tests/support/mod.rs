#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::Value;

pub fn reanno() -> Command {
    Command::new(env!("CARGO_BIN_EXE_reanno"))
}

pub fn run(args: &[&str]) -> Output {
    reanno().args(args).output().expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// `key<TAB>value` lines printed by the table-style commands.
pub fn field(out: &str, key: &str) -> Option<String> {
    out.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('\t')))
        .map(str::to_string)
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// Deterministic stand-in for the chat endpoint. For every `Sentence <n>:`
/// line of the user message it annotates the first word as a Method and
/// the last word as a Task, links them, and for every fifth sentence adds
/// an entity that does not occur in the text plus one with an unknown
/// label.
pub fn mock_reply(user: &str) -> String {
    let mut out = String::new();
    for line in user.lines() {
        let Some(rest) = line.strip_prefix("Sentence ") else {
            continue;
        };
        let Some((idx, text)) = rest.split_once(':') else {
            continue;
        };
        let Ok(idx) = idx.trim().parse::<usize>() else { continue };
        let words: Vec<&str> = text
            .split_whitespace()
            .filter(|w| w.chars().all(char::is_alphanumeric))
            .collect();
        out.push_str(&format!("Sentence {idx}:\n"));
        if words.len() < 2 {
            out.push_str("(no annotations)\n");
            continue;
        }
        out.push_str(&format!("(T1;Method;{})\n", words[0]));
        out.push_str(&format!("(T2;Task;{})\n", words[words.len() - 1]));
        out.push_str("(R1;Used-for;T1;T2)\n");
        if idx % 5 == 0 {
            out.push_str("(T3;Metric;a rephrased span)\n(T4;Tool;x)\n(R2;Compare;T1;T3)\n");
        }
    }
    out
}

pub struct MockLlm {
    server: Arc<tiny_http::Server>,
    pub hits: Arc<AtomicUsize>,
    handle: Option<JoinHandle<()>>,
}

impl MockLlm {
    pub fn start() -> MockLlm {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind"));
        let hits = Arc::new(AtomicUsize::new(0));
        let (srv, count) = (server.clone(), hits.clone());
        let handle = std::thread::spawn(move || {
            for mut req in srv.incoming_requests() {
                count.fetch_add(1, Ordering::SeqCst);
                let mut raw = String::new();
                let _ = req.as_reader().read_to_string(&mut raw);
                let body: Value = serde_json::from_str(&raw).unwrap_or(Value::Null);
                let user = body["messages"]
                    .as_array()
                    .and_then(|m| m.last())
                    .and_then(|m| m["content"].as_str())
                    .unwrap_or("");
                let reply = serde_json::json!({
                    "choices": [{"index": 0, "message": {"role": "assistant", "content": mock_reply(user)}}]
                });
                let _ = req.respond(tiny_http::Response::from_string(reply.to_string()));
            }
        });
        MockLlm {
            server,
            hits,
            handle: Some(handle),
        }
    }

    pub fn url(&self) -> String {
        format!(
            "http://{}/v1/chat/completions",
            self.server.server_addr().to_ip().expect("ip")
        )
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

impl Drop for MockLlm {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

const WORDS: &[&str] = &[
    "building",
    "information",
    "modelling",
    "improves",
    "construction",
    "scheduling",
    "energy",
    "simulation",
    "reduces",
    "cost",
    "sensor",
    "networks",
    "monitor",
    "structural",
    "health",
    "digital",
    "twin",
    "supports",
    "facility",
    "management",
    "laser",
    "scanning",
    "captures",
    "geometry",
    "concrete",
    "strength",
    "prediction",
    "uses",
    "neural",
    "regression",
];

/// `n` distinct pre-split sentences spread over documents of five.
pub fn presplit_corpus(n: usize) -> String {
    (0..n)
        .map(|i| {
            let len = 5 + i % 4;
            let words: Vec<&str> = (0..len)
                .map(|j| WORDS[(i * 7 + j * 3 + i / WORDS.len()) % WORDS.len()])
                .collect();
            format!("W{}\tS{i} {} .\n", i / 5, words.join(" "))
        })
        .collect()
}

pub fn exemplar_json() -> &'static str {
    r#"[
{"tokens":["BIM","improves","construction","scheduling","."],"entities":[{"type":"Method","start":0,"end":1},{"type":"Task","start":2,"end":4}],"relations":[{"type":"Used-for","head":0,"tail":1}],"orig_id":"E1#0"},
{"tokens":["Accuracy","reached","20.99","%","."],"entities":[{"type":"Metric","start":0,"end":1}],"relations":[],"orig_id":"E1#1"},
{"tokens":["Laser","scanning","and","photogrammetry","capture","geometry","."],"entities":[{"type":"Method","start":0,"end":2},{"type":"Method","start":3,"end":4},{"type":"OtherScientificTerm","start":5,"end":6}],"relations":[{"type":"Conjunction","head":0,"tail":1},{"type":"Used-for","head":0,"tail":2}],"orig_id":"E2#0"},
{"tokens":["The","results","are","promising","."],"entities":[],"relations":[],"orig_id":"E2#1"}
]"#
}

pub fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, contents).expect("write fixture");
    path
}
