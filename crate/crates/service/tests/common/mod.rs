//! Spawning the `factrix` binary and talking to it.
#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reqwest::blocking::{Client, Response};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use factrix_core::pipeline::{load_records, load_templates};
use factrix_core::record::{Record, RecordDraft};
use factrix_core::template::Template;
use factrix_core::Timestamp;

pub const DURABILITY_TRIALS: usize = 10;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_factrix")
}

pub fn templates() -> Vec<Template> {
    load_templates(&fixtures().join("templates")).unwrap().iter().cloned().collect()
}

pub fn fixture_records() -> Vec<Record> {
    load_records(&fixtures().join("records")).unwrap()
}

pub struct Server {
    pub url: String,
    pub data: PathBuf,
    child: Child,
    /// Everything the server printed to stdout after the address line.
    pub log: Arc<Mutex<Vec<String>>>,
}

pub struct Options<'a> {
    pub token: Option<&'a str>,
    pub peers: Vec<String>,
    pub sync_interval: u64,
    pub replica_id: Option<&'a str>,
}

impl Default for Options<'_> {
    fn default() -> Self {
        Options {
            token: None,
            peers: Vec::new(),
            sync_interval: 30,
            replica_id: None,
        }
    }
}

impl Server {
    pub fn start(data: &Path) -> Server {
        Server::start_with(data, Options::default())
    }

    pub fn start_with(data: &Path, opts: Options) -> Server {
        let mut cmd = Command::new(bin());
        cmd.arg("serve")
            .arg("--addr")
            .arg("127.0.0.1:0")
            .arg("--data-dir")
            .arg(data)
            .arg("--config")
            .arg(fixtures())
            .arg("--sync-interval")
            .arg(opts.sync_interval.to_string())
            .env_remove("FACTRIX_TOKEN")
            .env("RUST_LOG", "warn")
            .stdout(Stdio::piped())
            .stderr(Stdio::null());
        if let Some(t) = opts.token {
            cmd.arg("--token").arg(t);
        }
        if let Some(r) = opts.replica_id {
            cmd.arg("--replica-id").arg(r);
        }
        for p in &opts.peers {
            cmd.arg("--peer").arg(p);
        }
        let mut child = cmd.spawn().expect("server starts");
        let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
        let first = lines.next().and_then(Result::ok).unwrap_or_default();
        let url = first
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected server output {first:?}"))
            .to_string();
        let log = Arc::new(Mutex::new(Vec::new()));
        let sink = log.clone();
        std::thread::spawn(move || {
            for l in lines.map_while(Result::ok) {
                sink.lock().unwrap().push(l);
            }
        });
        Server {
            url,
            data: data.to_path_buf(),
            child,
            log,
        }
    }

    /// SIGKILL: no shutdown path runs.
    pub fn kill9(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    pub fn api(&self) -> Api {
        Api::new(&self.url, None)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub struct Api {
    pub url: String,
    token: Option<String>,
    client: Client,
}

impl Api {
    pub fn new(url: &str, token: Option<&str>) -> Api {
        Api {
            url: url.to_string(),
            token: token.map(str::to_string),
            client: Client::builder().timeout(Duration::from_secs(120)).build().unwrap(),
        }
    }

    fn auth(&self, req: reqwest::blocking::RequestBuilder) -> reqwest::blocking::RequestBuilder {
        match &self.token {
            Some(t) => req.bearer_auth(t),
            None => req,
        }
    }

    pub fn get(&self, path: &str) -> Response {
        self.auth(self.client.get(format!("{}{path}", self.url))).send().unwrap()
    }

    pub fn post<B: Serialize + ?Sized>(&self, path: &str, body: &B) -> Response {
        self.auth(self.client.post(format!("{}{path}", self.url)).json(body)).send().unwrap()
    }

    pub fn put<B: Serialize + ?Sized>(&self, path: &str, body: &B) -> Response {
        self.auth(self.client.put(format!("{}{path}", self.url)).json(body)).send().unwrap()
    }

    /// GET expecting 2xx JSON.
    pub fn json<T: DeserializeOwned>(&self, path: &str) -> T {
        ok(self.get(path))
    }

    pub fn post_ok<B: Serialize + ?Sized>(&self, path: &str, body: &B) -> Value {
        ok(self.post(path, body))
    }

    pub fn seed_templates(&self) {
        for t in templates() {
            self.post_ok("/templates", &t);
        }
    }

    /// Submit a job and wait for it to finish; returns the final status.
    pub fn run_job(&self, req: Value) -> Value {
        let queued = self.post_ok("/jobs", &req);
        let id = queued["job_id"].as_u64().unwrap();
        let deadline = Instant::now() + Duration::from_secs(120);
        loop {
            let st: Value = self.json(&format!("/jobs/{id}"));
            if st["state"] == "done" || st["state"] == "failed" {
                return st;
            }
            assert!(Instant::now() < deadline, "job {id} did not finish");
            std::thread::sleep(Duration::from_millis(25));
        }
    }

    pub fn artifact(&self, status: &Value) -> Vec<u8> {
        assert_eq!(status["state"], "done", "{status}");
        let id = status["artifact"].as_str().unwrap();
        let resp = self.get(&format!("/artifacts/{id}"));
        assert!(resp.status().is_success());
        resp.bytes().unwrap().to_vec()
    }
}

pub fn ok<T: DeserializeOwned>(resp: Response) -> T {
    let status = resp.status();
    let text = resp.text().unwrap();
    assert!(status.is_success(), "{status}: {text}");
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("{e}: {text}"))
}

pub fn draft(id: &str, shared: bool) -> RecordDraft {
    RecordDraft {
        record_id: id.into(),
        title: format!("{id} title"),
        author_name: "Maria Rossi".into(),
        author_role: "transcriber".into(),
        shared,
        language: None,
    }
}

pub fn blank_record(t: &Template, id: &str, shared: bool, at: i64) -> Record {
    Record::new(t, draft(id, shared), Timestamp::from_millis(at))
}

/// Kill -9 right after acknowledged writes, restart and check every
/// acknowledged write is there at its acknowledged revision. Each trial
/// also kills while further writes are in flight.
pub fn durability(trials: usize) -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let t = templates().into_iter().find(|t| t.id == "list_of_ships").ok_or("no template")?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut acked: Vec<(String, Value, Record)> = Vec::new();
    let mut passed = 0;
    let mut failures = Vec::new();
    for trial in 0..trials {
        let server = Server::start(dir.path());
        let api = server.api();
        if trial == 0 {
            api.seed_templates();
        }
        let writes = rng.gen_range(1..=8);
        let base = acked.len();
        for k in 0..writes {
            let id = format!("d{trial:02}-{k}");
            let r = blank_record(&t, &id, k % 2 == 0, 1_700_000_000_000 + (base + k) as i64);
            let resp: Value = api.post_ok("/records", &r);
            acked.push((id, resp["revision"].clone(), r));
        }
        // an update of an earlier record, acknowledged too
        if let Some(i) = (!acked.is_empty()).then(|| rng.gen_range(0..acked.len())) {
            let (id, rev, r) = acked[i].clone();
            let mut r2 = r.clone();
            r2.meta.title = format!("{} (trial {trial})", r.meta.title);
            r2.meta.last_modified = Timestamp::from_millis(r.meta.last_modified.millis() + 1);
            let resp: Value = ok(api.put("/records", &serde_json::json!({ "record": r2, "revision": rev })));
            acked[i] = (id, resp["revision"].clone(), r2);
        }
        // unacknowledged writes racing the kill
        let url = server.url.clone();
        let racer_t = t.clone();
        let racer = std::thread::spawn(move || {
            let api = Api::new(&url, None);
            for k in 0..50 {
                let r = blank_record(&racer_t, &format!("x{trial:02}-{k}"), true, 1_600_000_000_000);
                let sent = api
                    .auth(api.client.post(format!("{url}/records")).json(&r))
                    .send();
                if sent.is_err() {
                    break;
                }
            }
        });
        std::thread::sleep(Duration::from_millis(rng.gen_range(0..20)));
        server.kill9();
        let _ = racer.join();

        let server = Server::start(dir.path());
        let api = server.api();
        let mut lost = Vec::new();
        for (id, rev, r) in &acked {
            let resp = api.get(&format!("/records/{id}"));
            if !resp.status().is_success() {
                lost.push(format!("{id} missing"));
                continue;
            }
            let doc: Value = resp.json().map_err(|e| e.to_string())?;
            let body: Record = serde_json::from_value(doc["record"].clone()).map_err(|e| e.to_string())?;
            if &doc["revision"] != rev || &body != r {
                lost.push(format!("{id} at {} instead of {rev}", doc["revision"]));
            }
        }
        drop(server);
        if lost.is_empty() {
            passed += 1;
        } else {
            failures.push(format!("trial {trial}: {}", lost.join(", ")));
        }
    }
    if passed == trials {
        Ok(format!("{passed}/{trials} kill -9 trials kept all {} acknowledged writes", acked.len()))
    } else {
        Err(format!("{passed}/{trials} trials passed; {}", failures.join("; ")))
    }
}
