use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use log::{debug, error};
use serde::de::DeserializeOwned;
use serde::Serialize;
use tiny_http::{Header, Method, Response, Server};

use super::wire::*;
use super::{BackendError, Backends, Capability, GenerateRequest};

/// HTTP front for a [`Backends`] bundle speaking the wire protocol.
///
/// Used to serve the mocks to out-of-process clients and to pin the
/// protocol with golden fixtures.
pub struct WireServer {
    server: Arc<Server>,
    addr: SocketAddr,
    worker: Option<JoinHandle<()>>,
}

type Reply = (u16, Vec<u8>);

fn json<T: Serialize>(status: u16, body: &T) -> Reply {
    (status, serde_json::to_vec(body).expect("wire types serialize"))
}

fn backend_failure(err: BackendError) -> Reply {
    let status = match err {
        BackendError::Transient(_) => 503,
        BackendError::Timeout(_) => 504,
        BackendError::Permanent(_) | BackendError::Protocol(_) => 400,
    };
    json(status, &ErrorResponse { error: err.to_string() })
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, Reply> {
    serde_json::from_slice(body).map_err(|e| json(400, &ErrorResponse { error: e.to_string() }))
}

/// Answers one request; exposed so fixtures can be checked without a socket.
pub fn dispatch(
    backends: &Backends,
    capabilities: &[Capability],
    method: &str,
    path: &str,
    body: &[u8],
) -> (u16, Vec<u8>) {
    let result: Result<Reply, Reply> = (|| {
        match (method, path) {
            ("GET", HEALTH_PATH) => Ok(json(
                200,
                &HealthResponse {
                    capabilities: capabilities.iter().map(|c| c.as_str().to_string()).collect(),
                },
            )),
            ("POST", CAPTION_PATH) => {
                let req: CaptionRequest = parse(body)?;
                let image = b64_to_image(&req.image).map_err(backend_failure)?;
                let caption = backends.caption.caption(&image).map_err(backend_failure)?;
                Ok(json(200, &CaptionResponse { caption }))
            }
            ("POST", DETECT_PATH) => {
                let req: DetectRequest = parse(body)?;
                let image = b64_to_image(&req.image).map_err(backend_failure)?;
                let found = backends
                    .detect
                    .detect(&image, &req.classes, req.threshold)
                    .map_err(backend_failure)?;
                let boxes = found
                    .into_iter()
                    .map(|d| WireBox {
                        xyxy: d.xyxy,
                        label: d.label,
                        score: d.score,
                    })
                    .collect();
                Ok(json(200, &DetectResponse { boxes }))
            }
            ("POST", SEGMENT_PATH) => {
                let req: SegmentRequest = parse(body)?;
                let image = b64_to_image(&req.image).map_err(backend_failure)?;
                let masks = backends
                    .segment
                    .segment(&image, &req.boxes)
                    .map_err(backend_failure)?;
                let masks = masks
                    .iter()
                    .map(mask_to_b64)
                    .collect::<Result<_, _>>()
                    .map_err(backend_failure)?;
                Ok(json(200, &SegmentResponse { masks }))
            }
            ("POST", GENERATE_PATH) => {
                let req: GenerateRequestBody = parse(body)?;
                let control = b64_to_image(&req.control).map_err(backend_failure)?;
                if req.width == 0 || req.height == 0 || req.steps == 0 {
                    return Err(json(400, &ErrorResponse {
                        error: "width, height and steps must be positive".into(),
                    }));
                }
                let image = backends
                    .generate
                    .generate(&GenerateRequest {
                        control,
                        prompt: req.prompt,
                        negative_prompt: req.negative_prompt,
                        seed: req.seed,
                        steps: req.steps,
                        guidance_scale: req.guidance_scale,
                        width: req.width,
                        height: req.height,
                    })
                    .map_err(backend_failure)?;
                let image = image_to_b64(&image).map_err(backend_failure)?;
                Ok(json(200, &GenerateResponse { image }))
            }
            ("POST", EMBED_PATH) => {
                let req: EmbedRequest = parse(body)?;
                let image = b64_to_image(&req.image).map_err(backend_failure)?;
                let vector = backends.embed.embed(&image, &req.model).map_err(backend_failure)?;
                Ok(json(200, &EmbedResponse { vector }))
            }
            _ => Err(json(404, &ErrorResponse {
                error: format!("no route for {method} {path}"),
            })),
        }
    })();
    match result {
        Ok(reply) | Err(reply) => reply,
    }
}

impl WireServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and serves on a
    /// background thread until dropped.
    pub fn start(
        addr: &str,
        backends: Backends,
        capabilities: Vec<Capability>,
    ) -> std::io::Result<Self> {
        let server = Server::http(addr).map_err(|e| std::io::Error::other(e.to_string()))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("server is not bound to an IP address"))?;
        let server = Arc::new(server);
        let serving = server.clone();
        let worker = std::thread::spawn(move || {
            let content_type =
                Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header");
            for mut request in serving.incoming_requests() {
                let mut body = Vec::new();
                if let Err(e) = request.as_reader().read_to_end(&mut body) {
                    error!("reading request body: {e}");
                    continue;
                }
                let method = match request.method() {
                    Method::Get => "GET",
                    Method::Post => "POST",
                    _ => "OTHER",
                };
                let path = request.url().split('?').next().unwrap_or("").to_string();
                let (status, reply) = dispatch(&backends, &capabilities, method, &path, &body);
                debug!("{method} {path} -> {status}");
                let response = Response::from_data(reply)
                    .with_status_code(status)
                    .with_header(content_type.clone());
                if let Err(e) = request.respond(response) {
                    error!("writing response: {e}");
                }
            }
        });
        Ok(Self {
            server,
            addr,
            worker: Some(worker),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server thread exits.
    pub fn join(mut self) {
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}

impl Drop for WireServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}
