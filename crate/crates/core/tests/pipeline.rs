//! Metadata → preprocess → balanced splits → batch stream, end to end.

mod common;

use std::path::{Path, PathBuf};

use common::{write_fixture, COUNTRIES, FIXTURE_SIZE};
use dcnn::cli::{cmd_preprocess, cmd_stats};
use dcnn::data::{
    build_balanced_splits, load_png, parse_metadata, scan_split, BBox, BatchStream, SampleRecord, Split,
    StreamConfig, CLASS_NAMES, PREPROCESS_SIZE,
};

fn files_under(root: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/"));
            }
        }
    }
    out.sort();
    out
}

fn expected_tree() -> Vec<String> {
    let mut v = vec!["rejections.csv".to_string()];
    for (i, split) in ["train", "valid", "test"].iter().enumerate() {
        for (label, class) in CLASS_NAMES.iter().enumerate() {
            v.push(format!("{split}/{class}/ct_{label}_{i}.png"));
        }
    }
    v.sort();
    v
}

#[test]
fn nine_row_metadata_round_trips_field_by_field() {
    let dir = tempfile::tempdir().unwrap();
    let parsed = parse_metadata(&write_fixture(dir.path(), None)).unwrap();
    assert!(parsed.rejected.is_empty());
    assert_eq!(parsed.record_rows, (1..=9).collect::<Vec<_>>());
    let mut expected = Vec::new();
    for label in 0..3usize {
        for i in 0..3usize {
            expected.push(SampleRecord {
                filename: format!("ct_{label}_{i}.png"),
                label,
                bbox: BBox {
                    xmin: 16 * i as u32,
                    ymin: 8 * label as u32,
                    xmax: 480 + 8 * i as u32,
                    ymax: 500 + 4 * label as u32,
                },
                split: Split::ALL[i],
                country: Some(COUNTRIES[i].to_string()),
                sex: ["F", "M", ""][(label + i) % 3].parse().ok().filter(|s: &String| !s.is_empty()),
                age: (i != 2).then_some(25 + 20 * label as u32 + 7 * i as u32),
            });
        }
    }
    assert_eq!(parsed.records, expected);
}

#[test]
fn preprocess_fixture_builds_exact_tree_of_224_images() {
    let dir = tempfile::tempdir().unwrap();
    let meta = write_fixture(&dir.path().join("raw"), None);
    let out = dir.path().join("out");
    let summary = cmd_preprocess(&meta, &dir.path().join("raw"), &out, PREPROCESS_SIZE, Some(42)).unwrap();
    assert_eq!(summary.written(), 9);
    assert!(summary.rejected.is_empty());
    for split in Split::ALL {
        for class in 0..3 {
            assert_eq!(summary.counts[&(split, class)], 1);
        }
    }
    assert_eq!(files_under(&out), expected_tree());
    for f in files_under(&out).iter().filter(|f| f.ends_with(".png")) {
        let img = load_png(&out.join(f)).unwrap();
        assert_eq!((img.width, img.height), (224, 224), "{f}");
    }
    assert_eq!(std::fs::read_to_string(out.join("rejections.csv")).unwrap().trim(), "row,reason");
}

#[test]
fn preprocess_output_bytes_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    let meta = write_fixture(&raw, None);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    cmd_preprocess(&meta, &raw, &a, 224, Some(1)).unwrap();
    cmd_preprocess(&meta, &raw, &b, 224, Some(1)).unwrap();
    for f in files_under(&a) {
        assert_eq!(std::fs::read(a.join(&f)).unwrap(), std::fs::read(b.join(&f)).unwrap(), "{f}");
    }
}

#[test]
fn out_of_bounds_bbox_is_rejected_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    let bad = format!("0,0,{},100", FIXTURE_SIZE + 88);
    let meta = write_fixture(&raw, Some((5, &bad)));
    let out = dir.path().join("out");
    let summary = cmd_preprocess(&meta, &raw, &out, 224, Some(42)).unwrap();
    assert_eq!(summary.written(), 8);
    assert_eq!(summary.rejected.len(), 1);
    assert_eq!(summary.rejected[0].row, 5);
    assert_eq!(files_under(&out).iter().filter(|f| f.ends_with(".png")).count(), 8);
    assert!(!out.join("valid/Pneumonia/ct_1_1.png").exists());
    let report = std::fs::read_to_string(out.join("rejections.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("5,"), "{report}");
}

#[test]
fn empty_bbox_row_is_rejected_at_parse() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    let meta = write_fixture(&raw, Some((7, "300,10,200,400")));
    let out = dir.path().join("out");
    let summary = cmd_preprocess(&meta, &raw, &out, 224, None).unwrap();
    assert_eq!(summary.written(), 8);
    assert_eq!(summary.rejected.len(), 1);
    assert_eq!(summary.rejected[0].row, 7);
}

#[test]
fn missing_images_dir_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let meta = write_fixture(&dir.path().join("raw"), None);
    let err = cmd_preprocess(&meta, &dir.path().join("nope"), &dir.path().join("out"), 224, None).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn stats_of_fixture_is_one_third_per_class() {
    let dir = tempfile::tempdir().unwrap();
    let meta = write_fixture(dir.path(), None);
    let rows = cmd_stats(&meta, &dir.path().join("stats.csv")).unwrap();
    let class: Vec<_> = rows.iter().filter(|r| r.section == "class").collect();
    assert_eq!(class.len(), 3);
    for r in class {
        assert_eq!(r.count, 3);
        assert!((r.percent - 100.0 / 3.0).abs() < 1e-9);
    }
    let text = std::fs::read_to_string(dir.path().join("stats.csv")).unwrap();
    assert!(text.starts_with("section,key,class,count,percent\n"));
    assert!(text.contains("class,all,Normal,3,33.33\n"));
}

fn record(label: usize, i: usize) -> SampleRecord {
    SampleRecord {
        filename: format!("{label}_{i}.png"),
        label,
        bbox: BBox::full(8, 8),
        split: Split::Train,
        country: None,
        sex: None,
        age: None,
    }
}

#[test]
fn balancing_uses_the_smallest_class() {
    let mut records = Vec::new();
    for (label, n) in [10, 7, 12].into_iter().enumerate() {
        records.extend((0..n).map(|i| record(label, i)));
    }
    let plan = build_balanced_splits(&records, 3).unwrap();
    assert_eq!([0, 1, 2].map(|c| plan.count(Split::Train, c)), [7, 7, 7]);
    assert_eq!(plan.records(Split::Train).len(), 21);
}

fn stream_signature(items: Vec<(PathBuf, usize)>, prefetch: usize, seed: u64) -> Vec<(Vec<usize>, Vec<u32>)> {
    let cfg = StreamConfig {
        batch_size: 4,
        seed,
        prefetch,
        image_size: 32,
        channels: 3,
    };
    let stream = BatchStream::new(items, cfg).unwrap();
    let mut out = Vec::new();
    for epoch in 1..=2 {
        for b in stream.epoch(epoch) {
            let b = b.unwrap();
            out.push((b.indices, b.images.data().iter().map(|v| v.to_bits()).collect()));
        }
    }
    out
}

#[test]
fn stream_over_preprocessed_tree_is_prefetch_independent() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    let meta = write_fixture(&raw, None);
    let out = dir.path().join("out");
    cmd_preprocess(&meta, &raw, &out, 224, Some(42)).unwrap();
    let mut items = Vec::new();
    for split in Split::ALL {
        items.extend(scan_split(&out, split).unwrap());
    }
    assert_eq!(items.len(), 9);
    let a = stream_signature(items.clone(), 0, 5);
    let b = stream_signature(items.clone(), 8, 5);
    assert_eq!(a, b);
    assert_eq!(a.len(), 6);
    assert_eq!(a, stream_signature(items.clone(), 0, 5));
    let order = |s: &[(Vec<usize>, Vec<u32>)]| s.iter().flat_map(|(i, _)| i.clone()).collect::<Vec<_>>();
    assert_ne!(order(&a), order(&stream_signature(items, 0, 6)));
}
