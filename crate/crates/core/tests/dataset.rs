use std::fs;
use std::path::Path;

use texrefine::data::{load_identity, load_manifest, render_dataset, rerender_error, NUM_VIEWS};

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().display().to_string(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn two_identities_with_eight_views_each() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = render_dataset(2, 11, dir.path()).unwrap();
    assert_eq!(manifest.identities.len(), 2);
    let subdirs: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_dir()).collect();
    assert_eq!(subdirs.len(), 2);
    for sub in subdirs {
        for f in ["texture_gt.png", "mesh.json"] {
            assert!(sub.join(f).is_file());
        }
        for k in 0..NUM_VIEWS {
            for f in ["image.png", "parts.png", "camera.json"] {
                assert!(sub.join("views").join(k.to_string()).join(f).is_file(), "{k}/{f}");
            }
        }
        assert!(!sub.join("views").join(NUM_VIEWS.to_string()).exists());
    }
    assert_eq!(load_manifest(dir.path()).unwrap(), manifest);
}

#[test]
fn stored_views_re_render_exactly_after_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = render_dataset(2, 5, dir.path()).unwrap();
    for entry in &manifest.identities {
        let stored = load_identity(dir.path(), &entry.id).unwrap();
        assert_eq!(rerender_error(&stored).unwrap(), 0.0);
        for (view, fresh) in stored.views.iter().zip(stored.rerender().unwrap()) {
            assert_eq!(view.labels, fresh.raster.part);
        }
    }
}

#[test]
fn train_and_test_identities_are_disjoint() {
    let dir = tempfile::tempdir().unwrap();
    let m = render_dataset(5, 2, dir.path()).unwrap();
    assert_eq!(m.train.len() + m.test.len(), 5);
    assert_eq!(m.test.len(), 1);
    assert!(m.train.iter().all(|id| !m.test.contains(id)));
}

#[test]
fn dataset_bytes_depend_only_on_seed_and_size() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    render_dataset(2, 9, a.path()).unwrap();
    render_dataset(2, 9, b.path()).unwrap();
    assert_eq!(tree_bytes(a.path()), tree_bytes(b.path()));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let err = render_dataset(1, 0, &blocker.join("sub")).unwrap_err();
    assert!(matches!(err, texrefine::Error::Io { .. }), "{err}");
}
