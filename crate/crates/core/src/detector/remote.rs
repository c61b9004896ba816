use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::FaceDetector;
use crate::cascade::Detection;
use crate::error::{RemoteError, Result};
use crate::image::{encode_png, RasterImage, Rect};

/// How a provider encodes one face box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxFormat {
    /// Top-left corner plus width and height.
    Xywh,
    /// Left, top, right, bottom edges.
    Ltrb,
    /// Box center plus width and height.
    CenterWh,
}

/// Where the face boxes live in a provider's JSON response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResponseMapping {
    /// Dot-separated path to the array of faces; numeric segments index
    /// arrays. Empty means the response body itself is the array.
    pub faces_path: String,
    pub box_format: BoxFormat,
    /// Field names of the four box numbers, in `box_format` order. Each may
    /// itself be a dot path relative to the face object.
    pub box_fields: [String; 4],
    pub confidence_field: Option<String>,
    /// Box numbers are fractions of the image size rather than pixels.
    pub normalized: bool,
}

impl Default for ResponseMapping {
    fn default() -> Self {
        ResponseMapping {
            faces_path: "faces".into(),
            box_format: BoxFormat::Xywh,
            box_fields: ["x", "y", "width", "height"].map(String::from),
            confidence_field: Some("score".into()),
            normalized: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteDetectorConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the API key. Keys are never
    /// read from configuration files.
    pub api_key_env: Option<String>,
    pub auth_header: String,
    /// Prepended to the key in the auth header, e.g. `"Bearer "`.
    pub auth_prefix: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub backoff_base_secs: f64,
    pub max_payload_bytes: usize,
    /// Request body field carrying the base64 PNG.
    pub image_field: String,
    /// Constant fields merged into every request body.
    pub extra_fields: serde_json::Map<String, Value>,
    pub response: ResponseMapping,
}

impl Default for RemoteDetectorConfig {
    fn default() -> Self {
        RemoteDetectorConfig {
            endpoint: String::new(),
            api_key_env: None,
            auth_header: "Authorization".into(),
            auth_prefix: String::new(),
            timeout_secs: 30.0,
            max_retries: 2,
            backoff_base_secs: 1.0,
            max_payload_bytes: 4 * 1024 * 1024,
            image_field: "image_base64".into(),
            extra_fields: Default::default(),
            response: ResponseMapping::default(),
        }
    }
}

impl RemoteDetectorConfig {
    pub fn validate(&self) -> Result<()> {
        use crate::error::Error::InvalidConfig;
        if self.endpoint.is_empty() {
            return Err(InvalidConfig("remote endpoint is empty".into()));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(InvalidConfig("timeout_secs must be > 0".into()));
        }
        if !(self.backoff_base_secs >= 0.0) {
            return Err(InvalidConfig("backoff_base_secs must be >= 0".into()));
        }
        Ok(())
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    /// Longest a single `remote_detect` call can block, excluding time spent
    /// waiting for a concurrency slot.
    pub fn worst_case_duration(&self) -> Duration {
        let attempts = self.max_retries as f64 + 1.0;
        let backoff: f64 = (0..self.max_retries)
            .map(|k| self.backoff_base_secs * 2f64.powi(k as i32))
            .sum();
        Duration::from_secs_f64(self.timeout_secs * attempts + backoff)
    }
}

/// Provider answer mapped to detections, plus the raw body for auditing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteDetection {
    pub detections: Vec<Detection>,
    pub raw_response: String,
    pub attempts: u32,
}

struct Slots {
    in_flight: Mutex<(usize, usize)>,
    freed: Condvar,
}

static SLOTS: Slots = Slots {
    in_flight: Mutex::new((0, 2)),
    freed: Condvar::new(),
};

/// Caps the number of concurrent remote requests process-wide (default 2).
pub fn set_remote_concurrency(limit: usize) {
    let mut g = SLOTS.in_flight.lock().unwrap();
    g.1 = limit.max(1);
    SLOTS.freed.notify_all();
}

struct SlotGuard;

impl SlotGuard {
    fn acquire() -> SlotGuard {
        let mut g = SLOTS.in_flight.lock().unwrap();
        while g.0 >= g.1 {
            g = SLOTS.freed.wait(g).unwrap();
        }
        g.0 += 1;
        SlotGuard
    }
}

impl Drop for SlotGuard {
    fn drop(&mut self) {
        let mut g = SLOTS.in_flight.lock().unwrap();
        g.0 -= 1;
        SLOTS.freed.notify_one();
    }
}

/// Posts `img` as a base64 PNG and maps the provider's boxes to detections.
///
/// Timeouts and 5xx responses are retried up to `max_retries` times with
/// exponential backoff (`backoff_base_secs * 2^k`); every other failure is
/// returned immediately.
pub fn remote_detect(img: &RasterImage, cfg: &RemoteDetectorConfig) -> Result<RemoteDetection> {
    cfg.validate()?;
    let png = encode_png(img);
    if png.len() > cfg.max_payload_bytes {
        return Err(RemoteError::PayloadTooLarge {
            size: png.len(),
            limit: cfg.max_payload_bytes,
        }
        .into());
    }
    let mut body = cfg.extra_fields.clone();
    body.insert(
        cfg.image_field.clone(),
        Value::String(base64::engine::general_purpose::STANDARD.encode(&png)),
    );
    let body = Value::Object(body);

    let auth = match &cfg.api_key_env {
        Some(var) => {
            let key = std::env::var(var).map_err(|_| RemoteError::MissingApiKey(var.clone()))?;
            Some(format!("{}{}", cfg.auth_prefix, key))
        }
        None => None,
    };

    let agent = ureq::AgentBuilder::new().timeout(cfg.timeout()).build();
    let _slot = SlotGuard::acquire();
    let mut attempt = 0;
    loop {
        attempt += 1;
        let mut req = agent
            .post(&cfg.endpoint)
            .set("Content-Type", "application/json");
        if let Some(value) = &auth {
            req = req.set(&cfg.auth_header, value);
        }
        let outcome = req
            .send_string(&body.to_string())
            .map_err(|e| classify(e, cfg.timeout()))
            .and_then(|resp| {
                resp.into_string()
                    .map_err(|e| RemoteError::Transport(e.to_string()))
            });
        match outcome {
            Ok(raw) => {
                let detections = parse_detections(&raw, &cfg.response, img.width(), img.height())?;
                return Ok(RemoteDetection {
                    detections,
                    raw_response: raw,
                    attempts: attempt,
                });
            }
            Err(e) if e.is_retryable() && attempt <= cfg.max_retries => {
                let wait = cfg.backoff_base_secs * 2f64.powi(attempt as i32 - 1);
                std::thread::sleep(Duration::from_secs_f64(wait));
            }
            Err(e) => return Err(e.into()),
        }
    }
}

fn classify(err: ureq::Error, timeout: Duration) -> RemoteError {
    match err {
        ureq::Error::Status(status, resp) => {
            if status == 401 || status == 403 {
                RemoteError::Auth { status }
            } else {
                RemoteError::Status {
                    status,
                    body: resp.into_string().unwrap_or_default(),
                }
            }
        }
        ureq::Error::Transport(t) => {
            let mut source: Option<&(dyn std::error::Error + 'static)> = std::error::Error::source(&t);
            while let Some(s) = source {
                if let Some(io) = s.downcast_ref::<std::io::Error>() {
                    if matches!(
                        io.kind(),
                        std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
                    ) {
                        return RemoteError::Timeout(timeout);
                    }
                }
                source = s.source();
            }
            if t.to_string().contains("timed out") {
                RemoteError::Timeout(timeout)
            } else {
                RemoteError::Transport(t.to_string())
            }
        }
    }
}

fn lookup<'v>(root: &'v Value, path: &str) -> Option<&'v Value> {
    if path.is_empty() {
        return Some(root);
    }
    path.split('.').try_fold(root, |v, seg| match v {
        Value::Array(items) => items.get(seg.parse::<usize>().ok()?),
        Value::Object(map) => map.get(seg),
        _ => None,
    })
}

fn number(face: &Value, path: &str) -> std::result::Result<f64, RemoteError> {
    let v = lookup(face, path).ok_or_else(|| RemoteError::Parse(format!("face lacks `{path}`")))?;
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
    .ok_or_else(|| RemoteError::Parse(format!("`{path}` is not numeric")))
}

/// Maps a provider JSON body to detections clipped to the image.
/// Neighbors are 0; weight is the provider confidence, or 1.0.
pub(crate) fn parse_detections(
    raw: &str,
    map: &ResponseMapping,
    width: u32,
    height: u32,
) -> std::result::Result<Vec<Detection>, RemoteError> {
    let doc: Value = serde_json::from_str(raw).map_err(|e| RemoteError::Parse(e.to_string()))?;
    let faces = match lookup(&doc, &map.faces_path) {
        Some(Value::Array(items)) => items,
        Some(Value::Null) | None => {
            return Err(RemoteError::Parse(format!(
                "no face array at `{}`",
                map.faces_path
            )))
        }
        Some(_) => {
            return Err(RemoteError::Parse(format!(
                "`{}` is not an array",
                map.faces_path
            )))
        }
    };
    let (sx, sy) = if map.normalized {
        (width as f64, height as f64)
    } else {
        (1.0, 1.0)
    };
    let mut out = Vec::with_capacity(faces.len());
    for face in faces {
        let [a, b, c, d] = [0, 1, 2, 3].map(|i| number(face, &map.box_fields[i]));
        let (a, b, c, d) = (a?, b?, c?, d?);
        let (x0, y0, x1, y1) = match map.box_format {
            BoxFormat::Xywh => (a * sx, b * sy, (a + c) * sx, (b + d) * sy),
            BoxFormat::Ltrb => (a * sx, b * sy, c * sx, d * sy),
            BoxFormat::CenterWh => (
                (a - c / 2.0) * sx,
                (b - d / 2.0) * sy,
                (a + c / 2.0) * sx,
                (b + d / 2.0) * sy,
            ),
        };
        let (x0, y0) = (x0.round() as i32, y0.round() as i32);
        let (x1, y1) = (x1.round() as i32, y1.round() as i32);
        let Some(rect) = Rect::new(x0, y0, x1 - x0, y1 - y0).clip_to(width, height) else {
            continue;
        };
        let weight = match &map.confidence_field {
            Some(field) => lookup(face, field).and_then(Value::as_f64).unwrap_or(1.0),
            None => 1.0,
        };
        out.push(Detection {
            rect,
            neighbors: 0,
            weight,
        });
    }
    Ok(out)
}

/// [`FaceDetector`] backed by [`remote_detect`].
#[derive(Debug, Clone)]
pub struct RemoteDetector {
    pub config: RemoteDetectorConfig,
}

impl FaceDetector for RemoteDetector {
    fn detect(&self, img: &RasterImage) -> Result<Vec<Detection>> {
        Ok(remote_detect(img, &self.config)?.detections)
    }

    fn name(&self) -> String {
        format!("remote:{}", self.config.endpoint)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_nested_center_boxes() {
        let map = ResponseMapping {
            faces_path: "media.faces".into(),
            box_format: BoxFormat::CenterWh,
            box_fields: ["x", "y", "width", "height"].map(String::from),
            confidence_field: Some("score".into()),
            normalized: false,
        };
        let raw = r#"{"media":{"faces":[{"x":35,"y":35,"width":50,"height":50,"score":0.9}]}}"#;
        let d = parse_detections(raw, &map, 100, 100).unwrap();
        assert_eq!(d[0].rect, Rect::new(10, 10, 50, 50));
        assert_eq!(d[0].weight, 0.9);
        assert_eq!(d[0].neighbors, 0);
    }

    #[test]
    fn normalized_ltrb_and_clipping() {
        let map = ResponseMapping {
            faces_path: String::new(),
            box_format: BoxFormat::Ltrb,
            box_fields: ["box.0", "box.1", "box.2", "box.3"].map(String::from),
            confidence_field: None,
            normalized: true,
        };
        let raw = r#"[{"box":[0.5,0.25,1.2,0.75]}]"#;
        let d = parse_detections(raw, &map, 200, 100).unwrap();
        assert_eq!(d[0].rect, Rect::new(100, 25, 100, 50));
        assert_eq!(d[0].weight, 1.0);
    }

    #[test]
    fn malformed_bodies() {
        let map = ResponseMapping::default();
        assert!(matches!(parse_detections("not json", &map, 10, 10), Err(RemoteError::Parse(_))));
        assert!(matches!(parse_detections("{}", &map, 10, 10), Err(RemoteError::Parse(_))));
        assert!(matches!(
            parse_detections(r#"{"faces":[{"x":1}]}"#, &map, 10, 10),
            Err(RemoteError::Parse(_))
        ));
        assert!(parse_detections(r#"{"faces":[]}"#, &map, 10, 10).unwrap().is_empty());
    }

    #[test]
    fn worst_case_budget() {
        let cfg = RemoteDetectorConfig {
            timeout_secs: 30.0,
            max_retries: 2,
            backoff_base_secs: 1.0,
            ..Default::default()
        };
        assert_eq!(cfg.worst_case_duration(), Duration::from_secs(93));
    }
}
