#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde_json::Value;

use denial_core::llm::{LlmGateway, MockGateway};
use denial_core::storage::{FileStore, QuestionnaireScales};
use denial_core::taxonomy::Catalog;
use denial_server::config::{build_engine, load_personas};
use denial_server::{router, AppState, ServerOptions};

pub struct TestServer {
    pub base: String,
    pub data: tempfile::TempDir,
    agent: ureq::Agent,
    runtime: Option<tokio::runtime::Runtime>,
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(rt) = self.runtime.take() {
            rt.shutdown_timeout(Duration::from_millis(100));
        }
    }
}

pub fn spawn(gateway: Option<Arc<dyn LlmGateway>>, reveal_debug: bool) -> TestServer {
    let catalog = Arc::new(Catalog::shipped());
    let personas = load_personas(None, &catalog).unwrap();
    let gateway = gateway.unwrap_or_else(|| Arc::new(MockGateway::new(catalog.clone())));
    let engine = build_engine(catalog, personas, gateway, Default::default());
    let data = tempfile::tempdir().unwrap();
    let store = FileStore::open(data.path()).unwrap();
    let state = AppState::new(engine, store, QuestionnaireScales::shipped(), reveal_debug);
    let app = router(
        state,
        &ServerOptions {
            reveal_debug,
            ..Default::default()
        },
    );
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .unwrap();
    let listener = runtime
        .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
        .unwrap();
    let addr = listener.local_addr().unwrap();
    runtime.spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into();
    TestServer {
        base: format!("http://{addr}"),
        data,
        agent,
        runtime: Some(runtime),
    }
}

impl TestServer {
    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    pub fn addr(&self) -> String {
        self.base.trim_start_matches("http://").to_string()
    }

    pub fn get(&self, path: &str) -> (u16, String) {
        let mut resp = self.agent.get(&self.url(path)).call().unwrap();
        let status = resp.status().as_u16();
        (status, resp.body_mut().read_to_string().unwrap())
    }

    pub fn get_json(&self, path: &str) -> (u16, Value) {
        let (status, body) = self.get(path);
        (status, serde_json::from_str(&body).unwrap_or(Value::Null))
    }

    pub fn post(&self, path: &str, body: Value) -> (u16, Value) {
        let mut resp = self.agent.post(&self.url(path)).send_json(&body).unwrap();
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::Null))
    }

    pub fn post_raw(&self, path: &str, body: &str) -> (u16, Value) {
        let mut resp = self
            .agent
            .post(&self.url(path))
            .header("content-type", "application/json")
            .send(body)
            .unwrap();
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::Null))
    }

    pub fn create_session(&self, persona: &str) -> String {
        let (status, body) = self.post(
            "/api/sessions",
            serde_json::json!({ "persona_id": persona }),
        );
        assert_eq!(status, 201, "{body}");
        body["id"].as_str().unwrap().to_string()
    }

    pub fn session_file(&self, id: &str) -> PathBuf {
        self.data.path().join("sessions").join(format!("{id}.json"))
    }

    /// Opens the event stream on a raw socket and returns it once the
    /// response headers have been read.
    pub fn open_events(&self, id: &str) -> EventSocket {
        let mut stream = TcpStream::connect(self.addr()).unwrap();
        write!(
            stream,
            "GET /api/sessions/{id}/events HTTP/1.1\r\nHost: localhost\r\nAccept: text/event-stream\r\n\r\n"
        )
        .unwrap();
        let mut head = Vec::new();
        let mut byte = [0u8; 1];
        while !head.ends_with(b"\r\n\r\n") {
            stream.read_exact(&mut byte).unwrap();
            head.push(byte[0]);
        }
        EventSocket {
            head: String::from_utf8_lossy(&head).into_owned(),
            stream,
            received: String::new(),
        }
    }
}

pub struct EventSocket {
    pub head: String,
    stream: TcpStream,
    pub received: String,
}

impl EventSocket {
    /// Collects whatever bytes have already arrived without waiting.
    pub fn drain_available(&mut self) -> &str {
        self.stream.set_nonblocking(true).unwrap();
        let mut buf = [0u8; 4096];
        loop {
            match self.stream.read(&mut buf) {
                Ok(0) => break,
                Ok(n) => self.received.push_str(&String::from_utf8_lossy(&buf[..n])),
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => break,
                Err(e) => panic!("event stream read failed: {e}"),
            }
        }
        &self.received
    }

    /// Reads until `needle` shows up or `timeout` passes.
    pub fn wait_for(&mut self, needle: &str, timeout: Duration) -> bool {
        let deadline = std::time::Instant::now() + timeout;
        while std::time::Instant::now() < deadline {
            if self.drain_available().contains(needle) {
                return true;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
        false
    }
}
