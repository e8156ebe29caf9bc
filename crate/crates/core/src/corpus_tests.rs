use crate::corpus::*;
use crate::tensor::Tensor;

fn spec(kind: DomainKind, seed: u64) -> DomainSpec {
    DomainSpec::new(kind, 64, 1, seed)
}

/// Fraction of non-DC spectral power below a quarter of Nyquist,
/// averaged over channels (rustfft oracle).
fn low_band_fraction(x: &Tensor<f64>) -> f64 {
    use rustfft::{num_complex::Complex, FftPlanner};
    let (h, w) = (x.shape()[1], x.shape()[2]);
    let mut planner = FftPlanner::<f64>::new();
    let fft_w = planner.plan_fft_forward(w);
    let fft_h = planner.plan_fft_forward(h);
    let mut total_frac = 0.0;
    for c in 0..3 {
        let mut rows: Vec<Vec<Complex<f64>>> = (0..h)
            .map(|i| {
                let mut row: Vec<Complex<f64>> = (0..w)
                    .map(|j| Complex::new(x.data()[(c * h + i) * w + j], 0.0))
                    .collect();
                fft_w.process(&mut row);
                row
            })
            .collect();
        let mut power = vec![0.0; h * w];
        for j in 0..w {
            let mut col: Vec<Complex<f64>> = (0..h).map(|i| rows[i][j]).collect();
            fft_h.process(&mut col);
            for i in 0..h {
                power[i * w + j] = col[i].norm_sqr();
            }
            for i in 0..h {
                rows[i][j] = col[i];
            }
        }
        let (mut low, mut all) = (0.0, 0.0);
        let quarter = (h.min(w) / 8) as f64; // quarter of the Nyquist index
        for i in 0..h {
            for j in 0..w {
                if i == 0 && j == 0 {
                    continue; // DC
                }
                let fi = i.min(h - i) as f64;
                let fj = j.min(w - j) as f64;
                let r = (fi * fi + fj * fj).sqrt();
                all += power[i * w + j];
                if r <= quarter {
                    low += power[i * w + j];
                }
            }
        }
        total_frac += low / all;
    }
    total_frac / 3.0
}

/// Fraction of pixels with a forward luminance difference above 0.5.
fn edge_fraction(x: &Tensor<f64>) -> f64 {
    let (h, w) = (x.shape()[1], x.shape()[2]);
    let luma = |i: usize, j: usize| {
        (0..3).map(|c| x.data()[(c * h + i) * w + j]).sum::<f64>() / 3.0
    };
    let mut edges = 0usize;
    for i in 0..h {
        for j in 0..w {
            let v = luma(i, j);
            let dx = if j + 1 < w { (luma(i, j + 1) - v).abs() } else { 0.0 };
            let dy = if i + 1 < h { (luma(i + 1, j) - v).abs() } else { 0.0 };
            if dx.max(dy) > 0.5 {
                edges += 1;
            }
        }
    }
    edges as f64 / (h * w) as f64
}

#[test]
fn natural_energy_concentrates_at_low_frequencies() {
    for seed in 0..100 {
        let img = &gen_natural::<f64>(&spec(DomainKind::Natural, seed))[0];
        let frac = low_band_fraction(&img.pixels);
        assert!(frac >= 0.7, "seed {seed}: low-band fraction {frac}");
    }
}

#[test]
fn screen_has_dense_high_contrast_edges() {
    for seed in 0..100 {
        let img = &gen_screen::<f64>(&spec(DomainKind::Screen, seed))[0];
        let frac = edge_fraction(&img.pixels);
        assert!(frac >= 0.2, "seed {seed}: edge fraction {frac}");
    }
}

#[test]
fn pixel_cells_are_constant_with_bounded_palette() {
    for seed in 0..100 {
        let img = &gen_pixel::<f64>(&spec(DomainKind::Pixel, seed))[0];
        let x = &img.pixels;
        let (h, w) = (64, 64);
        let mut colors = std::collections::BTreeSet::new();
        for cy in 0..h / 4 {
            for cx in 0..w / 4 {
                let base: Vec<u64> = (0..3)
                    .map(|c| x.data()[(c * h + cy * 4) * w + cx * 4].to_bits())
                    .collect();
                colors.insert(base.clone());
                for i in cy * 4..(cy + 1) * 4 {
                    for j in cx * 4..(cx + 1) * 4 {
                        for c in 0..3 {
                            assert_eq!(
                                x.data()[(c * h + i) * w + j].to_bits(),
                                base[c],
                                "seed {seed} cell ({cy},{cx})"
                            );
                        }
                    }
                }
            }
        }
        assert!(colors.len() <= 16, "seed {seed}: {} colors", colors.len());
    }
}

#[test]
fn generators_are_deterministic_and_in_range() {
    for kind in [DomainKind::Natural, DomainKind::Screen, DomainKind::Pixel] {
        let s = DomainSpec::new(kind, 64, 3, 9);
        let a = generate::<f64>(&s);
        let b = generate::<f64>(&s);
        assert_eq!(a.len(), 3);
        for (ia, ib) in a.iter().zip(&b) {
            assert_eq!(ia.pixels.data(), ib.pixels.data(), "{kind:?}");
            assert_eq!(ia.provenance, ib.provenance);
            for v in ia.pixels.data() {
                assert!((0.0..=1.0).contains(v), "{kind:?}");
            }
        }
        // different seeds differ
        let c = generate::<f64>(&DomainSpec::new(kind, 64, 3, 10));
        assert_ne!(a[0].pixels.data(), c[0].pixels.data(), "{kind:?}");
    }
}

#[test]
fn ppm_round_trip_is_exact_at_8_bits() {
    let img = &gen_screen::<f64>(&spec(DomainKind::Screen, 3))[0];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("img.ppm");
    save_ppm(&img.pixels, &path).unwrap();
    let loaded: Tensor<f64> = load_image(&path).unwrap();
    // quantize the original to 8 bits; the loaded image must match exactly
    for (orig, got) in img.pixels.data().iter().zip(loaded.data()) {
        let q = (orig.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        assert_eq!(q.to_bits(), got.to_bits());
    }
    // save(load(x)) is byte-identical
    let again = dir.path().join("img2.ppm");
    save_ppm(&loaded, &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn one_pixel_white_ppm() {
    let bytes = b"P6\n1 1\n255\n\xff\xff\xff";
    let x: Tensor<f64> = ppm_from_bytes(bytes).unwrap();
    assert_eq!(x.shape(), &[3, 1, 1]);
    assert_eq!(x.data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn golden_two_by_two_ppm_layout() {
    // hand-written: red, green / blue, white — interleaved row-major
    let bytes = b"P6\n2 2\n255\n\xff\x00\x00\x00\xff\x00\x00\x00\xff\xff\xff\xff";
    let x: Tensor<f64> = ppm_from_bytes(bytes).unwrap();
    assert_eq!(x.shape(), &[3, 2, 2]);
    let px = |c: usize, i: usize, j: usize| x.data()[(c * 2 + i) * 2 + j];
    assert_eq!((px(0, 0, 0), px(1, 0, 0), px(2, 0, 0)), (1.0, 0.0, 0.0));
    assert_eq!((px(0, 0, 1), px(1, 0, 1), px(2, 0, 1)), (0.0, 1.0, 0.0));
    assert_eq!((px(0, 1, 0), px(1, 1, 0), px(2, 1, 0)), (0.0, 0.0, 1.0));
    assert_eq!((px(0, 1, 1), px(1, 1, 1), px(2, 1, 1)), (1.0, 1.0, 1.0));
    // and the same bytes come back out
    assert_eq!(ppm_bytes(&x).unwrap(), bytes.to_vec());
}

#[test]
fn unsupported_and_truncated_files_error() {
    let dir = tempfile::tempdir().unwrap();
    let png = dir.path().join("x.png");
    std::fs::write(&png, [0x89, b'P', b'N', b'G', 13, 10]).unwrap();
    assert!(load_image::<f64>(&png).is_err());
    let trunc = dir.path().join("t.ppm");
    std::fs::write(&trunc, b"P6\n4 4\n255\n\x00\x01").unwrap();
    assert!(load_image::<f64>(&trunc).is_err());
}

#[test]
fn corpus_directory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let s = DomainSpec::new(DomainKind::Pixel, 32, 2, 5);
    let paths = write_corpus::<f64>(&s, dir.path()).unwrap();
    assert_eq!(paths.len(), 2);
    assert!(paths[0].ends_with("pixel/5_0.ppm"));
    assert!(paths[1].ends_with("pixel/5_1.ppm"));
    let loaded = load_dir::<f64>(dir.path()).unwrap();
    assert_eq!(loaded.len(), 2);
    assert_eq!(loaded[0].1.shape(), &[3, 32, 32]);
}
