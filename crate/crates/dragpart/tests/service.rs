mod common;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use dragpart::dataset;
use dragpart::imageio;
use dragpart::service::{router, AppState};
use dragpart_core::world::Palette;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    state: AppState,
    image: String,
    mask: String,
    drags: Value,
    _dir: tempfile::TempDir,
}

fn fixture() -> Fixture {
    let cfg = common::config();
    let ckpt = common::checkpoint(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let mut world = cfg.dataset.clone();
    world.assets = 2;
    world.animations_per_asset = 1;
    dataset::generate(&world, 5, dir.path()).unwrap();
    let (_, records) = dataset::load(dir.path()).unwrap();
    let rec = &records[0];
    let frame = rec.render(0, Palette::Regular).unwrap();
    let drags = rec.drags(0, rec.frames() - 1, 5).unwrap();
    let state = AppState::new(ckpt, cfg, Some(dir.path().to_path_buf())).unwrap();
    Fixture {
        state,
        image: imageio::to_base64(&imageio::encode_image(&frame.image).unwrap()),
        mask: imageio::to_base64(&imageio::encode_mask(&frame.foreground()).unwrap()),
        drags: serde_json::to_value(&drags).unwrap(),
        _dir: dir,
    }
}

async fn call(state: &AppState, method: &str, uri: &str, body: Option<Vec<u8>>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn post(state: &AppState, uri: &str, body: &Value) -> (StatusCode, Value) {
    call(state, "POST", uri, Some(serde_json::to_vec(body).unwrap())).await
}

fn drag_list(n: usize) -> Value {
    Value::Array((0..n).map(|i| json!({"source": [4.0 + i as f64, 5.0], "termination": [6.0, 7.0 + i as f64]})).collect())
}

#[tokio::test]
async fn meta_echoes_the_model() {
    let f = fixture();
    let (status, body) = call(&f.state, "GET", "/v1/meta", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["N"], 5);
    assert_eq!(body["resolution"], 32);
    assert_eq!(body["checkpoint_hash"], f.state.checkpoint_hash());
    assert_eq!(body["ranges"]["steps"]["default"], 50);
    assert_eq!(body["ranges"]["cfg"]["default"], 5.0);
    assert_eq!(body["ranges"]["t"]["default"], 200);
    assert_eq!(body["ranges"]["clusters"]["default"], 4);
}

#[tokio::test]
async fn generate_is_deterministic_per_seed() {
    let f = fixture();
    let req = json!({"image": f.image, "drags": f.drags, "seed": 3, "steps": 4, "cfg": 5.0});
    let (s1, a) = post(&f.state, "/v1/generate", &req).await;
    let (s2, b) = post(&f.state, "/v1/generate", &req).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(a["image"], b["image"]);
    assert!(a["latency_ms"].as_f64().unwrap() >= 0.0);
    let mut keys: Vec<&String> = a.as_object().unwrap().keys().collect();
    keys.sort();
    assert_eq!(keys, ["image", "latency_ms"]);
    let img = imageio::decode_image(&imageio::from_base64(a["image"].as_str().unwrap()).unwrap()).unwrap();
    assert_eq!((img.height(), img.width()), (32, 32));

    let other = json!({"image": f.image, "drags": f.drags, "seed": 4, "steps": 4});
    let (_, c) = post(&f.state, "/v1/generate", &other).await;
    assert_ne!(a["image"], c["image"]);
}

#[tokio::test]
async fn concurrent_identical_requests_agree() {
    let f = fixture();
    let req = json!({"image": f.image, "drags": drag_list(2), "seed": 1, "steps": 3});
    let (a, b) = tokio::join!(post(&f.state, "/v1/generate", &req), post(&f.state, "/v1/generate", &req));
    assert_eq!(a.0, StatusCode::OK);
    assert_eq!(a.1["image"], b.1["image"]);
}

#[tokio::test]
async fn capacity_and_input_errors() {
    let f = fixture();
    let six = json!({"image": f.image, "drags": drag_list(6), "seed": 0, "steps": 2});
    let (status, body) = post(&f.state, "/v1/generate", &six).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].as_str().unwrap().contains("too many drags"), "{body}");

    let set = json!({"image": f.image, "drags": {"capacity": 6, "drags": drag_list(6)}, "steps": 2});
    assert_eq!(post(&f.state, "/v1/generate", &set).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let five = json!({"image": f.image, "drags": drag_list(5), "steps": 2});
    assert_eq!(post(&f.state, "/v1/generate", &five).await.0, StatusCode::OK);

    let outside = json!({"image": f.image, "drags": [{"source": [40.0, 3.0], "termination": [1.0, 1.0]}], "steps": 2});
    assert_eq!(post(&f.state, "/v1/generate", &outside).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let bad_png = json!({"image": imageio::to_base64(b"not a png"), "drags": drag_list(1)});
    assert_eq!(post(&f.state, "/v1/generate", &bad_png).await.0, StatusCode::BAD_REQUEST);
    let bad_b64 = json!({"image": "@@@", "drags": drag_list(1)});
    assert_eq!(post(&f.state, "/v1/generate", &bad_b64).await.0, StatusCode::BAD_REQUEST);
    let big = dragpart_core::ImageGrid::filled(16, 16, 3, 0.5).unwrap();
    let small = json!({"image": imageio::to_base64(&imageio::encode_image(&big).unwrap()), "drags": drag_list(1)});
    assert_eq!(post(&f.state, "/v1/generate", &small).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let steps = json!({"image": f.image, "drags": drag_list(1), "steps": 0});
    assert_eq!(post(&f.state, "/v1/generate", &steps).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&f.state, "POST", "/v1/generate", Some(b"{ nope".to_vec())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let unknown = json!({"image": f.image, "drags": [], "sead": 1});
    assert_eq!(post(&f.state, "/v1/generate", &unknown).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn full_queue_returns_503() {
    let f = fixture();
    let queue = f.state.queue();
    let held = queue.clone().acquire_many_owned(8).await.unwrap();
    let req = json!({"image": f.image, "drags": drag_list(1), "steps": 2});
    let (status, body) = post(&f.state, "/v1/generate", &req).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE, "{body}");
    drop(held);
    assert_eq!(post(&f.state, "/v1/generate", &req).await.0, StatusCode::OK);
}

#[tokio::test]
async fn segment_contract() {
    let f = fixture();
    let req = json!({"image": f.image, "drags": f.drags, "mask": f.mask, "t": 200, "clusters": 4, "seed": 1});
    let (status, body) = post(&f.state, "/v1/segment", &req).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].as_str().unwrap().contains("untrained"), "{body}");

    let cfg = common::config();
    let ckpt = common::checkpoint(&cfg);
    common::open_drag_pathways(&ckpt, 0.05, 2);
    let state = AppState::new(ckpt, cfg, None).unwrap();
    let (status, a) = post(&state, "/v1/segment", &req).await;
    assert_eq!(status, StatusCode::OK, "{a}");
    let (_, b) = post(&state, "/v1/segment", &req).await;
    assert_eq!(a["mask"], b["mask"]);
    assert_eq!(a["clusters"], b["clusters"]);
    let mask = imageio::decode_mask(&imageio::from_base64(a["mask"].as_str().unwrap()).unwrap()).unwrap();
    let fg = imageio::decode_mask(&imageio::from_base64(&f.mask).unwrap()).unwrap();
    assert!(mask.is_subset_of(&fg));
    assert!(mask.count() > 0);
    let clusters = a["clusters"].as_array().unwrap();
    assert_eq!(clusters.len(), 32 * 32);
    assert_eq!(a["n_clusters"], 4);
    for (i, c) in clusters.iter().enumerate() {
        assert_eq!(c.as_i64().unwrap() >= 0, fg.data[i]);
    }

    let bad = json!({"image": f.image, "drags": f.drags, "mask": f.mask, "clusters": 1});
    assert_eq!(post(&state, "/v1/segment", &bad).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let six = json!({"image": f.image, "drags": drag_list(6), "mask": f.mask});
    assert_eq!(post(&state, "/v1/segment", &six).await.0, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn samples_list_the_dataset() {
    let f = fixture();
    let (status, body) = call(&f.state, "GET", "/v1/samples", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["ids"], json!(["anim_0000", "anim_0001"]));
    let (status, one) = call(&f.state, "GET", "/v1/samples/anim_0001", None).await;
    assert_eq!(status, StatusCode::OK);
    let img = imageio::decode_image(&imageio::from_base64(one["image"].as_str().unwrap()).unwrap()).unwrap();
    assert_eq!(img.height(), 32);
    assert!(one["drags"]["drags"].as_array().unwrap().len() <= 5);
    assert_eq!(call(&f.state, "GET", "/v1/samples/anim_9999", None).await.0, StatusCode::NOT_FOUND);
}
