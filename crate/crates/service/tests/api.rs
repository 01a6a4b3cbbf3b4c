mod common;

use axum::http::StatusCode;
use base64::Engine as _;
use common::{call, fixture};
use myfood_core::dataset::LabelMask;
use myfood_service::api::PredictResponse;
use myfood_service::rle::decode_classes;
use rust_decimal::Decimal;
use serde_json::{json, Value};

#[tokio::test]
async fn unavailable_until_loaded() {
    let f = fixture(2, 32);
    let app = f.app(false);
    for (method, uri) in [("GET", "/health"), ("GET", "/foods"), ("GET", "/diary")] {
        assert_eq!(call(&app, method, uri, vec![]).await.status, StatusCode::SERVICE_UNAVAILABLE, "{uri}");
    }
    let r = call(&app, "POST", "/predict", f.image_bytes("synth_0000")).await;
    assert_eq!(r.status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(r.json()["error"], "unavailable");
}

#[tokio::test]
async fn health_and_foods() {
    let f = fixture(2, 32);
    let app = f.app(true);
    let h = call(&app, "GET", "/health", vec![]).await;
    assert_eq!(h.status, StatusCode::OK);
    assert_eq!(h.json()["status"], "ok");
    assert_eq!(h.json()["model"], "oracle");

    let foods = call(&app, "GET", "/foods", vec![]).await.json();
    let foods = foods.as_array().unwrap();
    assert_eq!(foods.len(), 9);
    for food in foods {
        assert!(food["grams_per_pixel"].is_number(), "{food}");
        assert!(food["per_100g"]["kcal"].is_number(), "{food}");
    }
}

#[tokio::test]
async fn bad_uploads() {
    let mut f = fixture(2, 32);
    let app = f.app(true);
    let empty = call(&app, "POST", "/predict", vec![]).await;
    assert_eq!(empty.status, StatusCode::BAD_REQUEST);
    assert_eq!(empty.json()["error"], "decode");
    let junk = call(&app, "POST", "/predict", b"not an image".to_vec()).await;
    assert_eq!(junk.status, StatusCode::BAD_REQUEST);
    let format = call(&app, "POST", "/predict?format=gif", f.image_bytes("synth_0000")).await;
    assert_eq!(format.status, StatusCode::BAD_REQUEST);

    f.config.max_upload_bytes = 64;
    let small = f.app(true);
    let big = call(&small, "POST", "/predict", f.image_bytes("synth_0000")).await;
    assert_eq!(big.status, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn images_unknown_to_the_oracle_are_unprocessable() {
    let f = fixture(2, 32);
    let app = f.app(true);
    let mut png = Vec::new();
    image::RgbImage::new(8, 8)
        .write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
        .unwrap();
    let r = call(&app, "POST", "/predict", png).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.json()["error"], "lookup");
}

#[tokio::test]
async fn predictions_decode_to_the_ground_truth() {
    let f = fixture(3, 48);
    let app = f.app(true);
    for record in &f.dataset.index.records {
        let bytes = f.image_bytes(&record.image_id);
        let first = call(&app, "POST", "/predict", bytes.clone()).await;
        assert_eq!(first.status, StatusCode::OK);
        let second = call(&app, "POST", "/predict", bytes.clone()).await;
        assert_eq!(first.bytes, second.bytes, "responses must be deterministic");

        let resp: PredictResponse = serde_json::from_slice(&first.bytes).unwrap();
        let gt = f.dataset.load_mask(&record.image_id).unwrap();
        let decoded = decode_classes(
            resp.width,
            resp.height,
            resp.classes.iter().map(|c| (c.class_id, c.mask.as_ref().unwrap())),
        )
        .unwrap();
        assert_eq!(decoded, gt);
        for c in &resp.classes {
            assert_eq!(c.pixel_area, gt.pixel_count(c.class_id));
        }
        assert_eq!(resp.meal.items.len(), resp.classes.len());

        let png = call(&app, "POST", "/predict?format=png", bytes).await.json();
        assert!(png["classes"][0].get("mask").is_none());
        let raw = base64::engine::general_purpose::STANDARD
            .decode(png["label_png"].as_str().unwrap())
            .unwrap();
        assert_eq!(LabelMask::from_png_bytes(&raw).unwrap(), gt);
    }
}

async fn predict(f: &common::Fixture, app: &axum::Router, id: &str) -> Value {
    call(app, "POST", "/predict", f.image_bytes(id)).await.json()
}

#[tokio::test]
async fn diary_round_trip_and_edits() {
    let f = fixture(2, 48);
    let app = f.app(true);
    let mut body = predict(&f, &app, "synth_0000").await;
    body["timestamp"] = json!("2026-03-01T12:30:00Z");
    let posted = call(&app, "POST", "/diary", serde_json::to_vec(&body).unwrap()).await;
    assert_eq!(posted.status, StatusCode::CREATED);
    let entry = posted.json();
    let id = entry["entry_id"].as_str().unwrap().to_string();
    assert_eq!(entry["meal"], body["meal"]);
    assert_eq!(entry["image_ref"], body["image_digest"]);

    let listing = call(&app, "GET", "/diary?from=2026-03-01&to=2026-03-01", vec![]).await.json();
    assert_eq!(listing["entries"].as_array().unwrap().len(), 1);
    assert_eq!(listing["entries"][0], entry);
    assert_eq!(listing["totals"], body["meal"]["totals"]);
    assert_eq!(listing["daily"][0]["entries"], 1);

    let empty = call(&app, "GET", "/diary?from=2026-04-01&to=2026-04-02", vec![]).await.json();
    assert_eq!(empty["entries"], json!([]));
    assert_eq!(empty["daily"], json!([]));
    for v in empty["totals"].as_object().unwrap().values() {
        assert_eq!(dec(v), Decimal::ZERO);
    }

    let grams = dec(&entry["meal"]["items"][0]["grams"]);
    let edit = json!({ "edits": [{ "item": 0, "field": "grams", "value": grams * Decimal::TWO }] });
    let patched = call(&app, "PATCH", &format!("/diary/{id}"), serde_json::to_vec(&edit).unwrap()).await;
    assert_eq!(patched.status, StatusCode::OK);
    let patched = patched.json();
    for (k, v) in entry["meal"]["items"][0]["nutrients"].as_object().unwrap() {
        assert_eq!(dec(&patched["meal"]["items"][0]["nutrients"][k]), dec(v) * Decimal::TWO, "{k}");
    }
    let items = patched["meal"]["items"].as_array().unwrap();
    let kcal: Decimal = items.iter().map(|i| dec(&i["nutrients"]["kcal"])).sum();
    assert_eq!(dec(&patched["meal"]["totals"]["kcal"]), kcal);
    assert_eq!(patched["user_edits"].as_array().unwrap().len(), 1);

    let missing_item = json!({ "edits": [{ "item": 0, "field": "grams", "value": 1 }, { "item": 99, "field": "grams", "value": 1 }] });
    let r = call(&app, "PATCH", &format!("/diary/{id}"), serde_json::to_vec(&missing_item).unwrap()).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    let after = call(&app, "GET", "/diary", vec![]).await.json();
    assert_eq!(after["entries"][0], patched, "a failed edit must change nothing");

    let r = call(&app, "PATCH", "/diary/no-such-entry", serde_json::to_vec(&edit).unwrap()).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert_eq!(r.json()["error"], "lookup");
    assert_eq!(r.json()["message"], "no diary entry no-such-entry");
}

#[tokio::test]
async fn diary_rejects_inconsistent_meals() {
    let f = fixture(2, 48);
    let app = f.app(true);
    let mut body = predict(&f, &app, "synth_0001").await;
    body["meal"]["totals"]["kcal"] = json!(1);
    let r = call(&app, "POST", "/diary", serde_json::to_vec(&body).unwrap()).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);

    let r = call(&app, "POST", "/diary", b"{".to_vec()).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    let r = call(&app, "POST", "/diary", b"{\"image_ref\":\"x\"}".to_vec()).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    let r = call(&app, "GET", "/diary?from=yesterday", vec![]).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "GET", "/diary", vec![]).await.json()["entries"], json!([]));
}

fn dec(v: &Value) -> Decimal {
    serde_json::from_value(v.clone()).unwrap()
}
