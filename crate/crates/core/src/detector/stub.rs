//! Minimal local HTTP server speaking the remote detector protocol, for
//! tests and offline demos. Requests are JSON bodies carrying a base64 PNG;
//! a user-supplied handler decides the reply.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use base64::Engine as _;
use serde_json::{json, Value};

use crate::image::{decode_png, RasterImage, Rect};

#[derive(Debug, Clone)]
pub struct StubRequest {
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl StubRequest {
    pub fn json(&self) -> Option<Value> {
        serde_json::from_str(&self.body).ok()
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    /// Decodes the PNG carried in `field` of the JSON body.
    pub fn image(&self, field: &str) -> Option<RasterImage> {
        let doc = self.json()?;
        let b64 = doc.get(field)?.as_str()?;
        let bytes = base64::engine::general_purpose::STANDARD.decode(b64).ok()?;
        decode_png(&bytes).ok()
    }
}

#[derive(Debug, Clone)]
pub struct StubResponse {
    pub status: u16,
    pub body: String,
    pub delay: Duration,
}

impl StubResponse {
    pub fn ok(body: impl Into<String>) -> Self {
        StubResponse {
            status: 200,
            body: body.into(),
            delay: Duration::ZERO,
        }
    }

    pub fn status(status: u16, body: impl Into<String>) -> Self {
        StubResponse {
            status,
            body: body.into(),
            delay: Duration::ZERO,
        }
    }

    pub fn delayed(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

/// Body in the default response mapping (`faces[].{x,y,width,height,score}`).
pub fn faces_body(rects: &[Rect]) -> String {
    let faces: Vec<Value> = rects
        .iter()
        .map(|r| json!({"x": r.x, "y": r.y, "width": r.w, "height": r.h, "score": 0.99}))
        .collect();
    json!({ "faces": faces }).to_string()
}

type Handler = dyn Fn(&StubRequest) -> StubResponse + Send + Sync;

pub struct StubServer {
    addr: SocketAddr,
    server: Arc<tiny_http::Server>,
    hits: Arc<AtomicUsize>,
    worker: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Binds an ephemeral localhost port and serves until dropped.
    pub fn start<F>(handler: F) -> std::io::Result<StubServer>
    where
        F: Fn(&StubRequest) -> StubResponse + Send + Sync + 'static,
    {
        let server = tiny_http::Server::http("127.0.0.1:0")
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::Other, e.to_string()))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::Other, "no TCP address"))?;
        let server = Arc::new(server);
        let hits = Arc::new(AtomicUsize::new(0));
        let handler: Arc<Handler> = Arc::new(handler);
        let worker = {
            let server = Arc::clone(&server);
            let hits = Arc::clone(&hits);
            std::thread::spawn(move || {
                for mut request in server.incoming_requests() {
                    hits.fetch_add(1, Ordering::SeqCst);
                    let handler = Arc::clone(&handler);
                    std::thread::spawn(move || {
                        let mut body = String::new();
                        let _ = request.as_reader().read_to_string(&mut body);
                        let req = StubRequest {
                            path: request.url().to_string(),
                            headers: request
                                .headers()
                                .iter()
                                .map(|h| (h.field.to_string(), h.value.to_string()))
                                .collect(),
                            body,
                        };
                        let reply = handler(&req);
                        if !reply.delay.is_zero() {
                            std::thread::sleep(reply.delay);
                        }
                        let header =
                            tiny_http::Header::from_bytes("Content-Type", "application/json")
                                .expect("static header");
                        let _ = request.respond(
                            tiny_http::Response::from_string(reply.body)
                                .with_status_code(reply.status)
                                .with_header(header),
                        );
                    });
                }
            })
        };
        Ok(StubServer {
            addr,
            server,
            hits,
            worker: Some(worker),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}/detect", self.addr)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}
