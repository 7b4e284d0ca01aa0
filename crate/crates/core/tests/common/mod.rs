#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use synthseg::backends::wire::{
    image_to_b64, CaptionRequest, DetectRequest, DetectResponse, EmbedRequest, GenerateRequestBody, SegmentRequest,
    CAPTION_PATH, DETECT_PATH, EMBED_PATH, GENERATE_PATH, HEALTH_PATH, SEGMENT_PATH,
};
use synthseg::backends::{dispatch, Backends, Capability, MockBackend, MockSettings};
use synthseg::fixture::{render_scene, write_corpus, CorpusSpec};
use synthseg::generate::mask_to_control;
use synthseg::pipeline::PipelineConfig;
use synthseg::taxonomy::ClassTaxonomy;

pub fn voc() -> ClassTaxonomy {
    ClassTaxonomy::pascal_voc()
}

pub fn mock_backends() -> Backends {
    Backends::uniform(Arc::new(MockBackend::new(voc(), MockSettings::default())))
}

/// Writes a fixture corpus of `images` scenes under `root/corpus`.
pub fn corpus(root: &Path, images: usize) -> PathBuf {
    let dir = root.join("corpus");
    write_corpus(&dir, &CorpusSpec { images, ..CorpusSpec::default() }, &voc()).expect("fixture corpus");
    dir
}

/// Pipeline config with the documented defaults, writing to `root/<out>`.
pub fn config(root: &Path, corpus: &Path, out: &str) -> PipelineConfig {
    let mut c = PipelineConfig::new(corpus, root.join(out));
    c.jobs = 4;
    c
}

/// Relative path -> contents for every file below `dir`.
pub fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).expect("read_dir").map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                let rel = p.strip_prefix(base).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&p).expect("read file"));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Names of the files that differ between two trees.
pub fn tree_diff(a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>) -> Vec<String> {
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter().filter(|k| a.get(*k) != b.get(*k)).cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireCase {
    pub method: String,
    pub path: String,
    /// Raw request body.
    pub request: String,
    pub status: u16,
    /// Raw response body.
    pub response: String,
}

pub fn wire_fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/wire")
}

pub fn wire_capabilities() -> Vec<Capability> {
    Capability::ALL.to_vec()
}

/// The golden request set, answered by the in-process mock.
pub fn wire_cases() -> BTreeMap<String, WireCase> {
    let taxonomy = voc();
    let backends = mock_backends();
    let caps = wire_capabilities();
    let spec = CorpusSpec {
        width: 32,
        height: 24,
        max_objects: 2,
        ..CorpusSpec::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (image, mask) = render_scene(&mut rng, &spec, &taxonomy);
    let image64 = image_to_b64(&image).unwrap();
    let classes: Vec<String> = mask
        .foreground_classes()
        .iter()
        .map(|&c| taxonomy.name(c).unwrap().to_string())
        .collect();

    let mut cases = BTreeMap::new();
    let mut add = |name: &str, method: &str, path: &str, request: String| {
        let (status, body) = dispatch(&backends, &caps, method, path, request.as_bytes());
        let response = String::from_utf8(body).expect("json responses are utf-8");
        cases.insert(
            name.to_string(),
            WireCase {
                method: method.into(),
                path: path.into(),
                request,
                status,
                response,
            },
        );
    };
    let to_json = |v: &dyn erased::Json| v.json();

    add("health", "GET", HEALTH_PATH, String::new());
    add("caption", "POST", CAPTION_PATH, to_json(&CaptionRequest { image: image64.clone() }));
    let detect = DetectRequest {
        image: image64.clone(),
        classes: classes.clone(),
        threshold: 0.3,
    };
    add("detect", "POST", DETECT_PATH, to_json(&detect));
    let (_, found) = dispatch(&backends, &caps, "POST", DETECT_PATH, to_json(&detect).as_bytes());
    let found: DetectResponse = serde_json::from_slice(&found).unwrap();
    let segment = SegmentRequest {
        image: image64.clone(),
        boxes: found.boxes.iter().map(|b| b.xyxy).collect(),
    };
    add("segment", "POST", SEGMENT_PATH, to_json(&segment));
    let generate = GenerateRequestBody {
        control: image_to_b64(&mask_to_control(&mask, &taxonomy)).unwrap(),
        prompt: format!("a photo; {}", classes.join(", ")),
        negative_prompt: String::new(),
        seed: 42,
        steps: 50,
        guidance_scale: 7.5,
        width: 32,
        height: 24,
    };
    add("generate", "POST", GENERATE_PATH, to_json(&generate));
    add(
        "embed",
        "POST",
        EMBED_PATH,
        to_json(&EmbedRequest {
            image: image64,
            model: "default".into(),
        }),
    );
    add("error_unknown_route", "POST", "/v1/nothing", "{}".into());
    add("error_malformed_body", "POST", DETECT_PATH, "{\"image\": 3}".into());
    add(
        "error_zero_size",
        "POST",
        GENERATE_PATH,
        to_json(&GenerateRequestBody {
            width: 0,
            ..generate
        }),
    );
    cases
}

pub mod erased {
    pub trait Json {
        fn json(&self) -> String;
    }
    impl<T: serde::Serialize> Json for T {
        fn json(&self) -> String {
            serde_json::to_string(self).unwrap()
        }
    }
}

pub fn load_wire_fixtures() -> Result<BTreeMap<String, WireCase>, String> {
    let dir = wire_fixture_dir();
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    for entry in entries {
        let path = entry.map_err(|e| e.to_string())?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
        let case: WireCase = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        out.insert(path.file_stem().unwrap().to_string_lossy().into_owned(), case);
    }
    if out.is_empty() {
        return Err(format!("no fixtures in {}", dir.display()));
    }
    Ok(out)
}

/// Replays every golden case through `dispatch` and through a live server.
pub fn check_wire_fixtures() -> Result<usize, String> {
    let fixtures = load_wire_fixtures()?;
    let backends = mock_backends();
    let caps = wire_capabilities();
    let server = synthseg::backends::WireServer::start("127.0.0.1:0", backends.clone(), caps.clone())
        .map_err(|e| e.to_string())?;
    let agent = ureq::AgentBuilder::new().build();
    for (name, case) in &fixtures {
        let (status, body) = dispatch(&backends, &caps, &case.method, &case.path, case.request.as_bytes());
        if status != case.status || body != case.response.as_bytes() {
            return Err(format!("{name}: in-process reply differs from fixture"));
        }
        let url = format!("{}{}", server.url(), case.path);
        let result = match case.method.as_str() {
            "GET" => agent.get(&url).call(),
            _ => agent.post(&url).set("Content-Type", "application/json").send_string(&case.request),
        };
        let (status, text) = match result {
            Ok(r) => (r.status(), r.into_string().map_err(|e| e.to_string())?),
            Err(ureq::Error::Status(code, r)) => (code, r.into_string().map_err(|e| e.to_string())?),
            Err(e) => return Err(format!("{name}: {e}")),
        };
        if status != case.status || text.as_bytes() != case.response.as_bytes() {
            return Err(format!("{name}: HTTP reply differs from fixture (status {status})"));
        }
    }
    Ok(fixtures.len())
}
