mod common;

use std::collections::BTreeMap;

use common::*;
use image::{Rgb, RgbImage};
use seeds_core::decompose::DecomposeParams;
use seeds_core::forge::{
    build_canvases, build_pool, compose_canvas, mint_batch, mint_triplet, ForgeError, PoolSpec, PromptSource,
    PromptTemplate, TripletStatus, RESIZE_FILTER,
};
use seeds_core::manifest::{read_manifest, write_manifest};
use seeds_core::sae::{Matrix, SaeModel};
use seeds_core::store::ImageStore;

const REGEN_ENV: &str = "SEEDS_REGEN_GOLDEN";

fn vague_only(variants: usize) -> PoolSpec {
    PoolSpec {
        templated: vec![],
        vague: vec!["something cozy".into()],
        variants_per_vague: variants,
        generator_seeds: vec![7],
        limit: None,
    }
}

/// Every pre-activation is negative, so no atom ever fires.
fn silent_sae() -> SaeModel {
    let m = 2 * MOCK_DIM;
    SaeModel::new(
        Matrix::from_vec(m, MOCK_DIM, vec![0.0; m * MOCK_DIM]).unwrap(),
        vec![-1.0; m],
        Matrix::from_vec(MOCK_DIM, m, vec![0.1; m * MOCK_DIM]).unwrap(),
        vec![0.0; MOCK_DIM],
        0.01,
    )
    .unwrap()
}

#[test]
fn one_vague_prompt_with_three_variants_gives_three_images() {
    let dir = tempfile::tempdir().unwrap();
    let bridge = mock_bridge(dir.path());
    let rows = build_pool(&vague_only(3), &bridge, 2).unwrap();
    assert_eq!(rows.len(), 3);
    for (i, row) in rows.iter().enumerate() {
        assert!(row.image.is_some() && row.error.is_none());
        assert_eq!(row.seed, 7);
        assert_eq!(
            row.source,
            PromptSource::Vague {
                vague: "something cozy".into(),
                variant: i
            }
        );
    }
}

#[test]
fn templates_expand_over_every_slot_combination() {
    let dir = tempfile::tempdir().unwrap();
    let bridge = mock_bridge(dir.path());
    let mut slots = BTreeMap::new();
    slots.insert("color".to_string(), vec!["red".to_string(), "green".to_string()]);
    slots.insert("thing".to_string(), vec!["cup".to_string(), "hat".to_string(), "kite".to_string()]);
    let spec = PoolSpec {
        templated: vec![PromptTemplate {
            pattern: "a {color} {thing}".into(),
            slots,
        }],
        vague: vec![],
        variants_per_vague: 0,
        generator_seeds: vec![1, 2],
        limit: None,
    };
    let rows = build_pool(&spec, &bridge, 3).unwrap();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().any(|r| r.prompt == "a green kite"));
    assert!(rows.iter().all(|r| !r.prompt.contains('{')));
}

#[test]
fn empty_pool_spec_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bridge = mock_bridge(dir.path());
    let spec = PoolSpec {
        templated: vec![],
        vague: vec![],
        variants_per_vague: 1,
        generator_seeds: vec![0],
        limit: None,
    };
    assert!(matches!(build_pool(&spec, &bridge, 1), Err(ForgeError::Precondition(_))));
}

#[test]
fn pool_manifests_are_identical_across_runs() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let bridge = mock_bridge(dir.path());
        let rows = build_pool(&PoolSpec::representative(), &bridge, 4).unwrap();
        let path = dir.path().join("pool.jsonl");
        write_manifest(&path, &rows).unwrap();
        // Paths differ between temp dirs; everything else must not.
        std::fs::read_to_string(&path).unwrap().replace(dir.path().to_str().unwrap(), "<root>")
    };
    let first = run();
    assert_eq!(first.lines().count(), 16);
    assert_eq!(first, run());
}

#[test]
fn mint_on_a_fixture_photo_is_ok_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let bridge = mock_bridge(dir.path());
    let img = put_photo(bridge.store(), 80, 60, 1);
    let model = mock_sae(1);
    let params = DecomposeParams::default();
    let first = mint_triplet(&img, &model, &params, &bridge);
    assert_eq!(first.status, TripletStatus::Ok, "{:?}", first.error);
    let (a, b) = (first.a.clone().unwrap(), first.b.clone().unwrap());
    assert_ne!(a.content_hash, b.content_hash);
    assert_eq!((a.width, a.height), (64, 64));
    assert_eq!(mint_triplet(&img, &model, &params, &bridge), first);
}

#[test]
fn silent_activations_are_skipped_without_images() {
    let dir = tempfile::tempdir().unwrap();
    let bridge = mock_bridge(dir.path());
    let img = put_photo(bridge.store(), 32, 32, 2);
    let record = mint_triplet(&img, &silent_sae(), &DecomposeParams::default(), &bridge);
    assert_eq!(record.status, TripletStatus::SkippedDegenerate);
    assert!(record.a.is_none() && record.b.is_none() && record.decomposition_summary.is_none());
}

#[test]
fn batch_keeps_one_row_per_input_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let bridge = mock_bridge(dir.path());
    let images: Vec<_> = (0..5).map(|s| put_photo(bridge.store(), 48, 40, 10 + s)).collect();

    let skipped = mint_batch(&images, &silent_sae(), &DecomposeParams::default(), &bridge, 3).unwrap();
    assert_eq!(skipped.len(), 5);
    assert!(skipped.iter().all(|t| t.status == TripletStatus::SkippedDegenerate));

    let model = mock_sae(2);
    let rows = mint_batch(&images, &model, &DecomposeParams::default(), &bridge, 3).unwrap();
    assert_eq!(rows.len(), 5);
    let path = dir.path().join("triplets.jsonl");
    write_manifest(&path, &rows).unwrap();
    let back: Vec<seeds_core::forge::TripletRecord> = read_manifest(&path).unwrap().records;
    for (img, t) in images.iter().zip(&back) {
        assert_eq!(&t.comb, img);
        assert!([0.5, 1.0].contains(&t.params.edit_step));
        if t.is_ok() {
            let replay = mint_triplet(&t.comb, &model, &t.params, &bridge);
            assert_eq!(replay.decomposition_summary, t.decomposition_summary);
            assert_eq!(replay.a, t.a);
        }
    }
    assert!(back.iter().any(|t| t.is_ok()));
}

#[test]
fn canvases_follow_triplet_order_and_record_the_filter() {
    let dir = tempfile::tempdir().unwrap();
    let bridge = mock_bridge(dir.path());
    let images: Vec<_> = (0..4).map(|s| put_photo(bridge.store(), 40, 40, 30 + s)).collect();
    let triplets = mint_batch(&images, &mock_sae(3), &DecomposeParams::default(), &bridge, 2).unwrap();
    let canvases = build_canvases(&triplets, &bridge).unwrap();
    let ok: Vec<_> = triplets.iter().filter(|t| t.is_ok()).collect();
    assert_eq!(canvases.len(), ok.len());
    for (c, t) in canvases.iter().zip(ok) {
        assert_eq!(c.triplet_id, t.id);
        assert_eq!(c.target, t.comb);
        assert_eq!(c.resize_filter, RESIZE_FILTER);
        assert_eq!((c.canvas.width, c.canvas.height), (1024, 1024));
    }
}

fn solid(store: &ImageStore, w: u32, h: u32, rgb: [u8; 3]) -> seeds_core::store::ImageRef {
    store.put_rgb(&RgbImage::from_pixel(w, h, Rgb(rgb))).unwrap()
}

#[test]
fn canvas_quadrants_and_order() {
    let dir = tempfile::tempdir().unwrap();
    let store = ImageStore::open(dir.path()).unwrap();
    let red = solid(&store, 64, 64, [255, 0, 0]);
    let blue = solid(&store, 64, 64, [0, 0, 255]);
    let canvas = compose_canvas(&store, &red, &blue).unwrap();
    assert_eq!(canvas.content_type(), "image/png");
    let px = canvas.decode().unwrap().to_rgb8();
    assert_eq!(px.dimensions(), (1024, 1024));
    assert_eq!(px.get_pixel(768, 256), &Rgb([255, 255, 255]));
    assert_eq!(px.get_pixel(10, 10), &Rgb([255, 0, 0]));
    assert_eq!(px.get_pixel(900, 900), &Rgb([0, 0, 255]));
    assert_eq!(px.get_pixel(10, 900), &Rgb([255, 255, 255]));
    let swapped = compose_canvas(&store, &blue, &red).unwrap();
    assert_ne!(swapped.content_hash, canvas.content_hash);
}

#[test]
fn canvas_matches_golden_png() {
    let photo_a = fixture_path("photo_a.png");
    let photo_b = fixture_path("photo_b.png");
    let golden = fixture_path("canvas_golden.png");
    if std::env::var_os(REGEN_ENV).is_some() {
        photo_like(200, 150, 101).save(&photo_a).unwrap();
        photo_like(96, 160, 202).save(&photo_b).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let store = ImageStore::open(dir.path()).unwrap();
    let a = store.import(&photo_a).unwrap();
    let b = store.import(&photo_b).unwrap();
    let canvas = compose_canvas(&store, &a, &b).unwrap();
    let bytes = canvas.read_bytes().unwrap();
    if std::env::var_os(REGEN_ENV).is_some() {
        std::fs::write(&golden, &bytes).unwrap();
    }
    let want = std::fs::read(&golden).expect("golden canvas missing; rerun with SEEDS_REGEN_GOLDEN=1");
    assert!(bytes == want, "canvas differs from {}", golden.display());
}
