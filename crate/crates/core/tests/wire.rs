//! Golden request/response pairs for the model-service protocol.
//!
//! Regenerate with `SYNTHSEG_BLESS=1 cargo test -p synthseg --test wire`.

mod common;

use std::sync::Arc;

use synthseg::backends::wire::*;
use synthseg::backends::{
    Backends, CaptionBackend, DetectBackend, EmbedBackend, GenerateBackend, GenerateRequest, HttpBackend,
    MockBackend, MockSettings, SegmentBackend, WireServer,
};
use synthseg::backends::BackendConfig;

#[test]
fn golden_fixtures_match() {
    let dir = common::wire_fixture_dir();
    if std::env::var("SYNTHSEG_BLESS").as_deref() == Ok("1") {
        std::fs::create_dir_all(&dir).unwrap();
        for (name, case) in common::wire_cases() {
            let text = serde_json::to_string_pretty(&case).unwrap() + "\n";
            std::fs::write(dir.join(format!("{name}.json")), text).unwrap();
        }
    }
    let checked = common::check_wire_fixtures().unwrap();
    assert_eq!(checked, common::wire_cases().len());
    // The committed fixtures are exactly what the mock produces today.
    assert_eq!(common::load_wire_fixtures().unwrap(), common::wire_cases());
}

#[test]
fn golden_requests_follow_the_schema() {
    for (name, case) in common::load_wire_fixtures().unwrap() {
        let body = case.request.as_bytes();
        let ok = match (case.path.as_str(), name.starts_with("error_")) {
            (_, true) | (HEALTH_PATH, _) => continue,
            (CAPTION_PATH, _) => serde_json::from_slice::<CaptionRequest>(body).is_ok(),
            (DETECT_PATH, _) => serde_json::from_slice::<DetectRequest>(body).is_ok(),
            (SEGMENT_PATH, _) => serde_json::from_slice::<SegmentRequest>(body).is_ok(),
            (GENERATE_PATH, _) => serde_json::from_slice::<GenerateRequestBody>(body).is_ok(),
            (EMBED_PATH, _) => serde_json::from_slice::<EmbedRequest>(body).is_ok(),
            (other, _) => panic!("unexpected path {other}"),
        };
        assert!(ok, "{name}: request does not parse");
        assert_eq!(case.status, 200, "{name}");
        let reply = case.response.as_bytes();
        let ok = match case.path.as_str() {
            CAPTION_PATH => serde_json::from_slice::<CaptionResponse>(reply).is_ok(),
            DETECT_PATH => serde_json::from_slice::<DetectResponse>(reply).is_ok(),
            SEGMENT_PATH => serde_json::from_slice::<SegmentResponse>(reply).is_ok(),
            GENERATE_PATH => serde_json::from_slice::<GenerateResponse>(reply).is_ok(),
            _ => serde_json::from_slice::<EmbedResponse>(reply).is_ok(),
        };
        assert!(ok, "{name}: response does not parse");
    }
}

#[test]
fn error_fixtures_carry_an_error_body() {
    let fixtures = common::load_wire_fixtures().unwrap();
    for (name, status) in [("error_unknown_route", 404), ("error_malformed_body", 400), ("error_zero_size", 400)] {
        let case = &fixtures[name];
        assert_eq!(case.status, status, "{name}");
        let body: ErrorResponse = serde_json::from_str(&case.response).unwrap();
        assert!(!body.error.is_empty());
    }
}

/// The HTTP client talking to the served mock sees what the mock returns directly.
#[test]
fn http_client_against_served_mock() {
    let taxonomy = common::voc();
    let mock = Arc::new(MockBackend::new(taxonomy.clone(), MockSettings::default()));
    let server = WireServer::start("127.0.0.1:0", Backends::uniform(mock.clone()), common::wire_capabilities()).unwrap();
    let client = HttpBackend::new(BackendConfig::with_url(server.url())).unwrap();

    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
    let spec = synthseg::fixture::CorpusSpec::default();
    let (image, mask) = synthseg::fixture::render_scene(&mut rng, &spec, &taxonomy);
    let classes: Vec<String> = mask.foreground_classes().iter().map(|&c| taxonomy.name(c).unwrap().to_string()).collect();

    assert_eq!(client.caption(&image).unwrap(), mock.caption(&image).unwrap());
    let a = client.detect(&image, &classes, 0.3).unwrap();
    assert_eq!(a, mock.detect(&image, &classes, 0.3).unwrap());
    let boxes: Vec<[f64; 4]> = a.iter().map(|d| d.xyxy).collect();
    assert_eq!(client.segment(&image, &boxes).unwrap(), mock.segment(&image, &boxes).unwrap());
    let request = GenerateRequest {
        control: synthseg::generate::mask_to_control(&mask, &taxonomy),
        prompt: "p".into(),
        negative_prompt: String::new(),
        seed: 9,
        steps: 50,
        guidance_scale: 7.5,
        width: 40,
        height: 30,
    };
    assert_eq!(client.generate(&request).unwrap(), mock.generate(&request).unwrap());
    assert_eq!(client.embed(&image, "default").unwrap(), mock.embed(&image, "default").unwrap());
    assert_eq!(client.health().unwrap(), vec!["caption", "detect", "segment", "generate", "embed"]);
}
