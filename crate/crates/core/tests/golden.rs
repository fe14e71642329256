//! Loaders against files written by `fixtures/golden/make_golden.py`, an
//! independent stdlib-only encoder.

use std::path::PathBuf;

use lesplat_core::container::{
    load_feature_map, load_mask_set, load_pca, load_query, write_feature_map, write_mask_set, write_pca, ContainerError,
};
use lesplat_core::dataset::DatasetManifest;
use lesplat_core::guidance::wire::{
    decode_error, decode_handshake, decode_request, encode_error, encode_handshake, encode_request, read_message, write_message, Kind,
};
use lesplat_core::ply::{load_scene, write_scene};
use serde_json::Value;

fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

fn expected() -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir().join("expected.json")).unwrap()).unwrap()
}

fn f32s(v: &Value) -> Vec<f32> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap() as f32).collect()
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn bytes(name: &str) -> Vec<u8> {
    std::fs::read(dir().join(name)).unwrap()
}

#[test]
fn feature_container() {
    let exp = &expected()["feature.tgrf"];
    let map = load_feature_map(dir().join("feature.tgrf"), "golden").unwrap();
    assert_eq!((map.height, map.width, map.dim), (2, 3, 4));
    assert_eq!(bits(&map.data), bits(&f32s(&exp["data"])));
    assert!(map.data[0].is_sign_negative() && map.data[0] == 0.0);
    assert!(map.data[23].is_subnormal());
    assert_eq!(map.pixel(1, 0), &f32s(&exp["data"])[4..8]);

    let mut out = Vec::new();
    write_feature_map(&map, &mut out).unwrap();
    assert_eq!(out, bytes("feature.tgrf"));
}

#[test]
fn mask_container() {
    let exp = &expected()["masks.tgrm"];
    let set = load_mask_set(dir().join("masks.tgrm")).unwrap();
    assert_eq!((set.height, set.width), (3, 5));
    let want: Vec<Vec<bool>> =
        exp["masks"].as_array().unwrap().iter().map(|m| m.as_array().unwrap().iter().map(|b| b.as_bool().unwrap()).collect()).collect();
    assert_eq!(set.masks, want);

    let mut out = Vec::new();
    write_mask_set(&set, &mut out).unwrap();
    assert_eq!(out, bytes("masks.tgrm"));
}

#[test]
fn pca_container() {
    let exp = &expected()["basis.tgrp"];
    let basis = load_pca(dir().join("basis.tgrp")).unwrap();
    assert_eq!((basis.dim, basis.k), (4, 2));
    assert_eq!(bits(&basis.mean), bits(&f32s(&exp["mean"])));
    assert_eq!(bits(&basis.components), bits(&f32s(&exp["components"])));
    assert_eq!(bits(&basis.explained_variance), bits(&f32s(&exp["explained_variance"])));

    let mut out = Vec::new();
    write_pca(&basis, &mut out).unwrap();
    assert_eq!(out, bytes("basis.tgrp"));
}

#[test]
fn query_container_is_normalized_on_load() {
    let exp = &expected()["query.tgrq"];
    let q = load_query(dir().join("query.tgrq")).unwrap();
    assert_eq!(q.label, exp["label"].as_str().unwrap());
    for (a, b) in q.vector.iter().zip(f32s(&exp["vector"])) {
        assert!((a - b).abs() < 1e-7);
    }
}

#[test]
fn truncated_and_mislabeled_files_fail() {
    let file = bytes("feature.tgrf");
    let cut = lesplat_core::container::read_feature_map(&mut &file[..file.len() - 1], "x");
    assert!(matches!(cut, Err(ContainerError::Truncated(_))));
    let mut extra = file.clone();
    extra.push(0);
    assert!(matches!(lesplat_core::container::read_feature_map(&mut extra.as_slice(), "x"), Err(ContainerError::TrailingBytes(1))));
    let masks = bytes("masks.tgrm");
    assert!(matches!(lesplat_core::container::read_feature_map(&mut masks.as_slice(), "x"), Err(ContainerError::BadMagic { .. })));
}

#[test]
fn ply_scene() {
    let rows = expected()["scene.ply"].as_array().unwrap().clone();
    let scene = load_scene(dir().join("scene.ply")).unwrap();
    assert_eq!(scene.len(), rows.len());
    for (i, row) in rows.iter().enumerate() {
        let g = scene.get(i);
        assert_eq!(bits(&g.position), bits(&f32s(&row["position"])));
        assert_eq!(bits(&g.scale), bits(&f32s(&row["scale"])));
        assert_eq!(bits(&g.rotation), bits(&f32s(&row["rotation"])));
        assert_eq!(bits(&g.color), bits(&f32s(&row["color"])));
        assert_eq!(g.opacity_logit.to_bits(), (row["opacity_logit"].as_f64().unwrap() as f32).to_bits());
        assert_eq!(bits(&g.lang), bits(&f32s(&row["lang"])));
    }
    // Re-encoding reproduces the payload; only the header comment differs.
    let mut out = Vec::new();
    write_scene(&scene, &mut out).unwrap();
    let file = bytes("scene.ply");
    let payload = 2 * (14 + 64) * 4;
    assert_eq!(out[out.len() - payload..], file[file.len() - payload..]);
}

#[test]
fn dataset_manifest() {
    let m = DatasetManifest::load(dir()).unwrap();
    let views = m.load_views(dir()).unwrap();
    assert_eq!(views.len(), 1);
    let (cam, map) = &views[0];
    assert_eq!((cam.width, cam.height, cam.fx), (3, 2, 3.5));
    assert_eq!(cam.translation.z, 0.5);
    assert_eq!((map.width, map.height), (3, 2));
}

#[test]
fn wire_frames() {
    let exp = &expected()["wire"];

    let m = read_message(&mut bytes("handshake.tgrw").as_slice()).unwrap().unwrap();
    assert_eq!((m.version, m.kind), (1, Kind::Handshake));
    let h = decode_handshake(&m.payload).unwrap();
    let eh = &exp["handshake"];
    assert_eq!((h.capabilities, h.max_height, h.max_width), (3, 64, 48));
    assert_eq!(h.name, eh["name"].as_str().unwrap());
    assert_eq!(encode_handshake(&h), m.payload);

    let file = bytes("request.tgrw");
    let m = read_message(&mut file.as_slice()).unwrap().unwrap();
    assert_eq!((m.version, m.kind), (1, Kind::Request));
    let req = decode_request(&m.payload).unwrap();
    let er = &exp["request"];
    assert_eq!(req.prompt, er["prompt"].as_str().unwrap());
    assert_eq!(req.t, 0.125);
    assert_eq!(req.seed.to_string(), er["seed"].as_str().unwrap());
    for (k, pose) in req.poses.iter().enumerate() {
        assert_eq!(bits(pose), bits(&f32s(&er["poses"][k])));
    }
    for (k, img) in req.rendered_views.iter().enumerate() {
        assert_eq!((img.height, img.width), (1, 2));
        assert_eq!(bits(&img.data), bits(&f32s(&er["rendered"][k])));
        assert_eq!(bits(&req.original_views[k].data), bits(&f32s(&er["original"][k])));
    }
    assert_eq!(req.config.get("description").map(String::as_str), Some("a mug"));
    assert_eq!(req.config.get("text_guidance").map(String::as_str), Some("7.5"));
    let mut framed = Vec::new();
    write_message(&mut framed, 1, Kind::Request, &encode_request(&req)).unwrap();
    assert_eq!(framed, file);

    let m = read_message(&mut bytes("error.tgrw").as_slice()).unwrap().unwrap();
    assert_eq!(m.kind, Kind::Error);
    let (code, msg) = decode_error(&m.payload).unwrap();
    assert_eq!(code, exp["error"]["code"].as_u64().unwrap() as u16);
    assert_eq!(msg, exp["error"]["message"].as_str().unwrap());
    assert_eq!(encode_error(code, &msg), m.payload);
}
