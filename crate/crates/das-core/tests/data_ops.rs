mod common;

use das_core::data::{
    coherency_from_scattering, default_covariances, extract_patches, mirror_index, patch_at,
    read_pct, read_plb, split_dataset, synth_generate, validate_covariance, write_pct, write_plb,
    CoherencyImage, Cov, LabelMap, Split, Standardizer, PLANES,
};
use num_complex::Complex64;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn diag(a: f64, b: f64, d: f64) -> Cov {
    let z = c(0.0, 0.0);
    [
        [c(a, 0.0), z, z],
        [z, c(b, 0.0), z],
        [z, z, c(d, 0.0)],
    ]
}

#[test]
fn scattering_outer_products() {
    let t = coherency_from_scattering(&[[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]]).unwrap();
    assert_eq!(t[0][0], c(1.0, 0.0));
    for r in 0..3 {
        for s in 0..3 {
            if (r, s) != (0, 0) {
                assert_eq!(t[r][s], c(0.0, 0.0));
            }
        }
    }

    let t = coherency_from_scattering(&[[c(0.0, 0.0), c(0.0, 1.0), c(0.0, 0.0)]]).unwrap();
    assert_eq!(t[1][1], c(1.0, 0.0));
    assert_eq!(t[0][0], c(0.0, 0.0));

    // averaging identical looks changes nothing
    let k = [c(0.5, 0.25), c(-1.0, 2.0), c(0.0, -0.5)];
    let one = coherency_from_scattering(&[k]).unwrap();
    let many = coherency_from_scattering(&[k; 7]).unwrap();
    for r in 0..3 {
        for s in 0..3 {
            assert!((one[r][s] - many[r][s]).norm() < 1e-12);
        }
    }

    assert!(coherency_from_scattering(&[]).is_err());
}

#[test]
fn covariance_validation() {
    assert!(validate_covariance(&diag(1.0, 1.0, 1.0)).is_ok());
    // not Hermitian
    let mut bad = diag(1.0, 1.0, 1.0);
    bad[0][1] = c(0.5, 0.0);
    assert!(validate_covariance(&bad).is_err());
    // negative eigenvalue
    assert!(validate_covariance(&diag(1.0, -0.5, 1.0)).is_err());
    // indefinite via large off-diagonal
    let mut ind = diag(1.0, 1.0, 1.0);
    ind[0][1] = c(2.0, 0.0);
    ind[1][0] = c(2.0, 0.0);
    assert!(validate_covariance(&ind).is_err());
    // PSD but singular is fine
    assert!(validate_covariance(&diag(1.0, 0.0, 0.0)).is_ok());
}

#[test]
fn generated_scene_matches_requested_statistics() {
    let covs = vec![diag(1.0, 1.0, 1.0), diag(1.0, 1.0, 1.0)];
    let (img, _) = synth_generate(&covs, 100, 100, 64, 25, 7).unwrap();
    // mean coherency over 10^4 pixels approaches the identity
    for p in 0..PLANES {
        let mean: Complex64 = (0..100)
            .flat_map(|i| (0..100).map(move |j| (i, j)))
            .map(|(i, j)| img.at(p, i, j))
            .sum::<Complex64>()
            / 10_000.0;
        let want = if [0, 3, 5].contains(&p) { 1.0 } else { 0.0 };
        assert!(
            (mean.re - want).abs() < 0.05 && mean.im.abs() < 0.05,
            "plane {p}: {mean}"
        );
    }
}

#[test]
fn generation_is_deterministic_and_validated() {
    let covs = default_covariances(3).unwrap();
    let a = synth_generate(&covs, 24, 24, 4, 8, 42).unwrap();
    let b = synth_generate(&covs, 24, 24, 4, 8, 42).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    let c2 = synth_generate(&covs, 24, 24, 4, 8, 43).unwrap();
    assert!(a.0 != c2.0);

    assert!(synth_generate(&covs[..1], 8, 8, 4, 4, 1).is_err());
    assert!(synth_generate(&covs, 8, 8, 0, 4, 1).is_err());
    let bad = vec![diag(1.0, -1.0, 1.0), diag(1.0, 1.0, 1.0)];
    assert!(synth_generate(&bad, 8, 8, 4, 4, 1).is_err());

    // diagonal planes stay real with non-negative power
    for p in [0usize, 3, 5] {
        for i in 0..24 {
            for j in 0..24 {
                let v = a.0.at(p, i, j);
                assert_eq!(v.im, 0.0);
                assert!(v.re >= 0.0);
            }
        }
    }
    // every class appears in the label map
    for want in 1..=3u16 {
        assert!(a.1.labels.iter().any(|&l| l == want));
    }
}

#[test]
fn nearest_centroid_separates_disjoint_power_classes() {
    let eps = 0.01;
    let covs = vec![diag(1.0, eps, eps), diag(eps, 1.0, eps)];
    let (img, labels) = synth_generate(&covs, 64, 64, 8, 16, 9).unwrap();

    // 12 real features per pixel: all plane values split into parts
    let feat = |i: usize, j: usize| -> Vec<f64> {
        (0..PLANES)
            .flat_map(|p| {
                let v = img.at(p, i, j);
                [v.re, v.im]
            })
            .collect()
    };
    let mut centroids = vec![vec![0.0; 12]; 2];
    let mut counts = [0usize; 2];
    for i in 0..64 {
        for j in 0..64 {
            let cls = (labels.at(i, j) - 1) as usize;
            for (a, b) in centroids[cls].iter_mut().zip(feat(i, j)) {
                *a += b;
            }
            counts[cls] += 1;
        }
    }
    for (cen, n) in centroids.iter_mut().zip(counts) {
        for v in cen.iter_mut() {
            *v /= n as f64;
        }
    }
    let mut correct = 0usize;
    for i in 0..64 {
        for j in 0..64 {
            let f = feat(i, j);
            let d: Vec<f64> = centroids
                .iter()
                .map(|cen| cen.iter().zip(&f).map(|(a, b)| (a - b) * (a - b)).sum())
                .collect();
            let pred = if d[0] <= d[1] { 0 } else { 1 };
            if pred == (labels.at(i, j) - 1) as usize {
                correct += 1;
            }
        }
    }
    let acc = correct as f64 / (64.0 * 64.0);
    assert!(acc > 0.99, "nearest centroid accuracy {acc}");
}

#[test]
fn mirror_reflection_is_symmetric() {
    assert_eq!(mirror_index(0, 5), 0);
    assert_eq!(mirror_index(-1, 5), 0);
    assert_eq!(mirror_index(-2, 5), 1);
    assert_eq!(mirror_index(5, 5), 4);
    assert_eq!(mirror_index(6, 5), 3);
    assert_eq!(mirror_index(-1, 1), 0);
    assert_eq!(mirror_index(3, 1), 0);
}

fn tiny_scene() -> (CoherencyImage, LabelMap) {
    let covs = default_covariances(2).unwrap();
    synth_generate(&covs, 10, 12, 4, 6, 5).unwrap()
}

#[test]
fn patch_extraction_counts_and_windows() {
    let (img, labels) = tiny_scene();
    let ds = extract_patches(&img, &labels, 5).unwrap();
    assert_eq!(ds.len(), 10 * 12);
    assert_eq!(ds.class_count, 2);

    // an interior patch is exactly the raw window
    let idx = ds
        .centers
        .iter()
        .position(|&(i, j)| i == 5 && j == 6)
        .unwrap();
    let x = ds.real_batch(&[idx], 12).unwrap();
    for p in 0..PLANES {
        for di in 0..5 {
            for dj in 0..5 {
                let v = img.at(p, 3 + di, 4 + dj);
                assert_eq!(x.at(&[0, p, di, dj]), v.re);
                assert_eq!(x.at(&[0, PLANES + p, di, dj]), v.im);
            }
        }
    }

    assert!(extract_patches(&img, &labels, 4).is_err());
    let wrong = LabelMap::new(3, 3, vec![0; 9]).unwrap();
    assert!(extract_patches(&img, &wrong, 5).is_err());
}

#[test]
fn corner_patch_mirrors_the_border() {
    let (img, _) = tiny_scene();
    let mut labels = vec![0u16; 10 * 12];
    labels[0] = 1; // only the top-left pixel
    let labels = LabelMap::new(10, 12, labels).unwrap();
    let ds = extract_patches(&img, &labels, 5).unwrap();
    assert_eq!(ds.len(), 1);
    let x = ds.real_batch(&[0], 12).unwrap();
    // row -1 mirrors row 0, row -2 mirrors row 1
    assert_eq!(x.at(&[0, 0, 0, 2]), img.at(0, 1, 0).re);
    assert_eq!(x.at(&[0, 0, 1, 2]), img.at(0, 0, 0).re);
    assert_eq!(x.at(&[0, 0, 2, 2]), img.at(0, 0, 0).re);

    let direct = patch_at(&img, 0, 0, 5);
    assert_eq!(direct[2 * 5 + 2], img.at(0, 0, 0));
}

#[test]
fn shifted_scene_shifts_interior_patches() {
    let (img, _) = tiny_scene();
    let mut shifted = vec![Complex64::new(0.0, 0.0); PLANES * 10 * 12];
    for p in 0..PLANES {
        for i in 1..10 {
            for j in 1..12 {
                shifted[(p * 10 + i) * 12 + j] = img.at(p, i - 1, j - 1);
            }
        }
    }
    let shifted = CoherencyImage::new(10, 12, shifted).unwrap();
    let a = patch_at(&img, 4, 5, 5);
    let b = patch_at(&shifted, 5, 6, 5);
    assert_eq!(a, b);
}

#[test]
fn real_channel_layouts() {
    let mut planes = vec![Complex64::new(0.0, 0.0); PLANES * 9];
    // constant T12 = 1 + 2i over a 3x3 image
    for t in 0..9 {
        planes[9 + t] = c(1.0, 2.0);
    }
    let img = CoherencyImage::new(3, 3, planes).unwrap();
    let labels = LabelMap::new(3, 3, vec![1; 9]).unwrap();
    let ds = extract_patches(&img, &labels, 3).unwrap();

    let x12 = ds.real_batch(&[4], 12).unwrap();
    assert_eq!(x12.at(&[0, 1, 1, 1]), 1.0);
    assert_eq!(x12.at(&[0, 7, 1, 1]), 2.0);
    for ch in [0, 2, 3, 4, 5, 6, 8, 9, 10, 11] {
        assert_eq!(x12.at(&[0, ch, 1, 1]), 0.0);
    }

    let x9 = ds.real_batch(&[4], 9).unwrap();
    assert_eq!(x9.shape(), &[1, 9, 3, 3]);
    assert_eq!(x9.at(&[0, 1, 1, 1]), 1.0);
    assert_eq!(x9.at(&[0, 6, 1, 1]), 2.0); // T12 imaginary
    assert_eq!(x9.at(&[0, 7, 1, 1]), 0.0); // T13 imaginary
    assert!(ds.real_batch(&[0], 7).is_err());

    // complex view recombines to the same values
    let z = ds.complex_batch(&[4]).unwrap();
    assert_eq!(z.re.at(&[0, 1, 1, 1]), 1.0);
    assert_eq!(z.im.at(&[0, 1, 1, 1]), 2.0);
    for p in 0..PLANES {
        for t in 0..9 {
            let i = p * 9 + t;
            assert_eq!(z.re.data()[i], x12.data()[i]);
            assert_eq!(z.im.data()[i], x12.data()[PLANES * 9 + i]);
        }
    }
}

#[test]
fn real_conversion_preserves_frobenius_energy() {
    let (img, labels) = tiny_scene();
    let ds = extract_patches(&img, &labels, 5).unwrap();
    let idx: Vec<usize> = (0..6).collect();
    let x = ds.real_batch(&idx, 12).unwrap();
    let z = ds.complex_batch(&idx).unwrap();
    let real_sq: f64 = x.data().iter().map(|v| v * v).sum();
    let cplx_sq: f64 = z
        .re
        .data()
        .iter()
        .zip(z.im.data())
        .map(|(a, b)| a * a + b * b)
        .sum();
    assert!((real_sq - cplx_sq).abs() < 1e-9 * (1.0 + cplx_sq));
}

#[test]
fn split_partitions_each_class() {
    let covs = default_covariances(2).unwrap();
    let (img, labels) = synth_generate(&covs, 40, 50, 2, 10, 11).unwrap();
    let mut ds = extract_patches(&img, &labels, 5).unwrap();
    split_dataset(&mut ds, 300, 100, None, 3).unwrap();
    for cls in 0..2 {
        let of_class = |s: Split| {
            ds.indices(s)
                .iter()
                .filter(|&&i| ds.labels[i] == cls)
                .count()
        };
        assert_eq!(of_class(Split::Train), 300);
        assert_eq!(of_class(Split::Val), 100);
        let total = ds.labels.iter().filter(|&&l| l == cls).count();
        assert_eq!(of_class(Split::Test), total - 400);
    }
    assert!(ds.indices(Split::Unsplit).is_empty());

    // same seed reproduces the identical partition
    let mut ds2 = extract_patches(&img, &labels, 5).unwrap();
    split_dataset(&mut ds2, 300, 100, None, 3).unwrap();
    assert_eq!(ds.tags, ds2.tags);

    // explicit test count leaves a remainder unassigned
    split_dataset(&mut ds2, 10, 5, Some(7), 3).unwrap();
    assert_eq!(ds2.indices(Split::Test).len(), 14);
    assert!(!ds2.indices(Split::Unsplit).is_empty());

    // asking for more than a class holds names the class
    let err = split_dataset(&mut ds2, 10_000, 0, None, 3).unwrap_err();
    assert!(err.to_string().contains("class 1"));
}

#[test]
fn standardizer_normalizes_training_statistics() {
    let (img, labels) = tiny_scene();
    let ds = extract_patches(&img, &labels, 5).unwrap();
    let idx: Vec<usize> = (0..ds.len()).collect();
    let x = ds.real_batch(&idx, 12).unwrap();
    let st = Standardizer::fit_real(&x).unwrap();
    let y = st.apply_real(&x).unwrap();
    let s = y.shape().to_vec();
    let hw = s[2] * s[3];
    for ch in 0..12 {
        let vals: Vec<f64> = (0..s[0])
            .flat_map(|n| {
                let base = (n * 12 + ch) * hw;
                y.data()[base..base + hw].to_vec()
            })
            .collect();
        let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
        let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / vals.len() as f64;
        assert!(mean.abs() < 1e-9, "channel {ch} mean {mean}");
        if st.scale[ch] != 1.0 {
            assert!((var - 1.0).abs() < 1e-9, "channel {ch} var {var}");
        }
    }
    // identically zero channels (diagonal imaginaries) stay untouched
    for ch in [6usize, 9, 11] {
        assert_eq!(st.scale[ch], 1.0);
        assert_eq!(st.mean[ch], 0.0);
    }

    let z = ds.complex_batch(&idx).unwrap();
    let stc = Standardizer::fit_complex(&z).unwrap();
    assert_eq!(stc.mean, vec![0.0; PLANES]);
    let zn = stc.apply_complex(&z).unwrap();
    for ch in 0..PLANES {
        let mut sq = 0.0;
        let mut n = 0usize;
        for ni in 0..s[0] {
            let base = (ni * PLANES + ch) * hw;
            for t in 0..hw {
                sq += zn.re.data()[base + t].powi(2) + zn.im.data()[base + t].powi(2);
                n += 1;
            }
        }
        assert!(((sq / n as f64).sqrt() - 1.0).abs() < 1e-9, "channel {ch}");
    }

    assert!(Standardizer::fit_real(&das_core::tensor::Tensor::zeros(&[0, 12, 5, 5])).is_err());
}

#[test]
fn scene_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (img, labels) = tiny_scene();

    let pct = dir.path().join("scene.pct");
    write_pct(&pct, &img).unwrap();
    let back = read_pct(&pct).unwrap();
    assert_eq!(img, back);

    let plb = dir.path().join("scene.plb");
    write_plb(&plb, &labels).unwrap();
    let back = read_plb(&plb).unwrap();
    assert_eq!(labels, back);
}

#[test]
fn malformed_scene_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (img, labels) = tiny_scene();
    let pct = dir.path().join("scene.pct");
    write_pct(&pct, &img).unwrap();

    // corrupted magic
    let mut bytes = std::fs::read(&pct).unwrap();
    bytes[0] = b'X';
    let bad = dir.path().join("bad_magic.pct");
    std::fs::write(&bad, &bytes).unwrap();
    let err = read_pct(&bad).unwrap_err();
    assert!(matches!(err, das_core::DasError::Format { offset: 0, .. }));
    assert_eq!(err.exit_code(), 2);

    // truncated payload
    let bytes = std::fs::read(&pct).unwrap();
    let cut = dir.path().join("cut.pct");
    std::fs::write(&cut, &bytes[..bytes.len() - 9]).unwrap();
    assert!(read_pct(&cut).is_err());

    // trailing bytes beyond the declared size
    let mut bytes = std::fs::read(&pct).unwrap();
    bytes.push(0);
    let long = dir.path().join("long.pct");
    std::fs::write(&long, &bytes).unwrap();
    assert!(read_pct(&long).is_err());

    // nonzero imaginary part on a diagonal plane
    let mut bytes = std::fs::read(&pct).unwrap();
    let first_diag_im = 16 + 4;
    bytes[first_diag_im..first_diag_im + 4].copy_from_slice(&1.0f32.to_le_bytes());
    let herm = dir.path().join("herm.pct");
    std::fs::write(&herm, &bytes).unwrap();
    assert!(read_pct(&herm).is_err());

    let plb = dir.path().join("scene.plb");
    write_plb(&plb, &labels).unwrap();
    let bytes = std::fs::read(&plb).unwrap();
    let cut = dir.path().join("cut.plb");
    std::fs::write(&cut, &bytes[..bytes.len() - 1]).unwrap();
    assert!(read_plb(&cut).is_err());
}

#[test]
fn default_covariance_families_are_distinct() {
    for classes in [2usize, 5, 9] {
        let covs = default_covariances(classes).unwrap();
        assert_eq!(covs.len(), classes);
        for (i, a) in covs.iter().enumerate() {
            validate_covariance(a).unwrap();
            for b in covs[..i].iter() {
                let mut diff = 0.0;
                for r in 0..3 {
                    for s in 0..3 {
                        diff += (a[r][s] - b[r][s]).norm();
                    }
                }
                assert!(diff > 0.1, "classes too similar");
            }
        }
    }
    assert!(default_covariances(1).is_err());
}
