//! Synthetic corpora and image file ingestion.
//!
//! Three generator families stand in for distinct image domains:
//! `natural` (smooth multi-octave noise plus gentle gradients, energy
//! concentrated at low spatial frequencies), `screen` (flat panels, 1-px
//! borders, glyph rows and dithered blocks, dense high-contrast edges)
//! and `pixel` (palette-limited art constant on 4x4 cells). Same spec,
//! same pixels, always.
//!
//! Files are binary PPM (P6, maxval 255), laid out as
//! `<dir>/<domain>/<seed>_<idx>.ppm`.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    Natural,
    Screen,
    Pixel,
}

impl DomainKind {
    pub fn name(self) -> &'static str {
        match self {
            DomainKind::Natural => "natural",
            DomainKind::Screen => "screen",
            DomainKind::Pixel => "pixel",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "natural" => Ok(DomainKind::Natural),
            "screen" => Ok(DomainKind::Screen),
            "pixel" => Ok(DomainKind::Pixel),
            other => Err(Error::Config(format!("unknown domain {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub size: usize,
    pub count: usize,
    pub seed: u64,
}

impl DomainSpec {
    pub fn new(kind: DomainKind, size: usize, count: usize, seed: u64) -> Self {
        DomainSpec { kind, size, count, seed }
    }
}

/// Generated image plus where it came from.
#[derive(Debug, Clone)]
pub struct CorpusImage<F: Scalar> {
    pub pixels: Tensor<F>,
    pub provenance: String,
}

pub fn generate<F: Scalar>(spec: &DomainSpec) -> Vec<CorpusImage<F>> {
    assert!(spec.size >= 32, "corpus images are at least 32x32");
    match spec.kind {
        DomainKind::Natural => gen_natural(spec),
        DomainKind::Screen => gen_screen(spec),
        DomainKind::Pixel => gen_pixel(spec),
    }
}

fn image_rng(spec: &DomainSpec, idx: usize) -> Rng {
    Rng::new(spec.seed).fork(spec.kind as u64 + 1).fork(idx as u64)
}

fn finish<F: Scalar>(spec: &DomainSpec, idx: usize, data: Vec<f64>) -> CorpusImage<F> {
    let s = spec.size;
    let pixels = Tensor::new(
        vec![3, s, s],
        data.into_iter().map(|v| F::of(v.clamp(0.0, 1.0))).collect(),
    )
    .expect("generator size");
    CorpusImage {
        pixels,
        provenance: format!("{}:{}:{}", spec.kind.name(), spec.seed, idx),
    }
}

/// Bilinear upsample of a `g x g` grid to `s x s` (cell-centered).
fn upsample(grid: &[f64], g: usize, s: usize, out: &mut [f64], amp: f64) {
    let scale = g as f64 / s as f64;
    for i in 0..s {
        let fy = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, g as f64 - 1.0);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(g - 1);
        let ty = fy - y0 as f64;
        for j in 0..s {
            let fx = ((j as f64 + 0.5) * scale - 0.5).clamp(0.0, g as f64 - 1.0);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(g - 1);
            let tx = fx - x0 as f64;
            let v = grid[y0 * g + x0] * (1.0 - ty) * (1.0 - tx)
                + grid[y0 * g + x1] * (1.0 - ty) * tx
                + grid[y1 * g + x0] * ty * (1.0 - tx)
                + grid[y1 * g + x1] * ty * tx;
            out[i * s + j] += amp * v;
        }
    }
}

/// Smooth filtered-noise images: three octaves of bilinearly upsampled
/// seeded noise plus low-amplitude linear gradients.
pub fn gen_natural<F: Scalar>(spec: &DomainSpec) -> Vec<CorpusImage<F>> {
    let s = spec.size;
    (0..spec.count)
        .map(|idx| {
            let mut rng = image_rng(spec, idx);
            let mut luma = vec![0.0; s * s];
            let octaves = [(s / 16, 0.26), ((s / 8).max(2), 0.13), ((s / 4).max(2), 0.065)];
            for &(g, amp) in &octaves {
                let g = g.max(2);
                let grid: Vec<f64> = (0..g * g).map(|_| rng.normal()).collect();
                upsample(&grid, g, s, &mut luma, amp);
            }
            // per-channel chroma: one coarse octave, small weight
            let mut chroma = [vec![0.0; s * s], vec![0.0; s * s], vec![0.0; s * s]];
            for ch in chroma.iter_mut() {
                let g = (s / 16).max(2);
                let grid: Vec<f64> = (0..g * g).map(|_| rng.normal()).collect();
                upsample(&grid, g, s, ch, 0.08);
            }
            let mut data = vec![0.0; 3 * s * s];
            for (c, ch) in chroma.iter().enumerate() {
                let gx = rng.range(-0.2, 0.2);
                let gy = rng.range(-0.2, 0.2);
                for i in 0..s {
                    for j in 0..s {
                        let grad = gx * (j as f64 / s as f64 - 0.5) + gy * (i as f64 / s as f64 - 0.5);
                        data[(c * s + i) * s + j] = 0.5 + luma[i * s + j] + ch[i * s + j] + grad;
                    }
                }
            }
            finish(spec, idx, data)
        })
        .collect()
}

/// Screen-content composites: flat panels with 1-px borders, glyph-like
/// dithered text rows and checkerboard blocks.
pub fn gen_screen<F: Scalar>(spec: &DomainSpec) -> Vec<CorpusImage<F>> {
    let s = spec.size;
    (0..spec.count)
        .map(|idx| {
            let mut rng = image_rng(spec, idx);
            let mut data = vec![0.0; 3 * s * s];
            let bg = [rng.range(0.82, 0.95), rng.range(0.82, 0.95), rng.range(0.82, 0.95)];
            for c in 0..3 {
                data[c * s * s..(c + 1) * s * s].fill(bg[c]);
            }
            let put = |i: usize, j: usize, col: [f64; 3], data: &mut Vec<f64>| {
                if i < s && j < s {
                    for c in 0..3 {
                        data[(c * s + i) * s + j] = col[c];
                    }
                }
            };

            // panels with hard 1-px borders
            let n_panels = 2 + rng.below(3);
            for _ in 0..n_panels {
                let h = 8 + rng.below(s / 2);
                let w = 8 + rng.below(s / 2);
                let i0 = rng.below(s - h.min(s - 1));
                let j0 = rng.below(s - w.min(s - 1));
                let fill = [rng.range(0.2, 0.75), rng.range(0.2, 0.75), rng.range(0.2, 0.75)];
                let border = [0.05, 0.05, 0.08];
                for i in i0..(i0 + h).min(s) {
                    for j in j0..(j0 + w).min(s) {
                        let on_border = i == i0 || j == j0 || i + 1 == (i0 + h).min(s) || j + 1 == (j0 + w).min(s);
                        put(i, j, if on_border { border } else { fill }, &mut data);
                    }
                }
            }

            // checkerboard-dithered blocks
            let n_dither = 2 + rng.below(2);
            for _ in 0..n_dither {
                let h = 8 + rng.below(s / 4);
                let w = 8 + rng.below(s / 3);
                let i0 = rng.below(s - h.min(s - 1));
                let j0 = rng.below(s - w.min(s - 1));
                let (a, b) = ([0.92, 0.92, 0.9], [0.08, 0.08, 0.12]);
                for i in i0..(i0 + h).min(s) {
                    for j in j0..(j0 + w).min(s) {
                        put(i, j, if (i + j) % 2 == 0 { a } else { b }, &mut data);
                    }
                }
            }

            // glyph rows: 5-tall binary ink patterns on light bands
            let n_bands = 3 + rng.below(3);
            for _ in 0..n_bands {
                let i0 = rng.below(s - 6);
                let paper = [0.96, 0.96, 0.94];
                let ink = [0.04, 0.04, 0.07];
                for i in i0..i0 + 6 {
                    for j in 0..s {
                        put(i, j, paper, &mut data);
                    }
                }
                let mut j = 1 + rng.below(3);
                while j + 4 < s {
                    for gi in 0..5 {
                        for gj in 0..3 {
                            if rng.unit() < 0.55 {
                                put(i0 + gi, j + gj, ink, &mut data);
                            }
                        }
                    }
                    j += 4 + rng.below(2);
                }
            }
            finish(spec, idx, data)
        })
        .collect()
}

/// Palette-limited art: every 4x4 cell constant, at most 16 colors.
pub fn gen_pixel<F: Scalar>(spec: &DomainSpec) -> Vec<CorpusImage<F>> {
    let s = spec.size;
    let cell = 4usize;
    (0..spec.count)
        .map(|idx| {
            let mut rng = image_rng(spec, idx);
            let k = 6 + rng.below(11); // 6..=16
            let palette: Vec<[f64; 3]> = (0..k)
                .map(|_| {
                    [
                        (rng.below(6) as f64) / 5.0,
                        (rng.below(6) as f64) / 5.0,
                        (rng.below(6) as f64) / 5.0,
                    ]
                })
                .collect();
            let cells = s / cell;
            let mut data = vec![0.0; 3 * s * s];
            for cy in 0..cells {
                for cx in 0..cells {
                    // group 2x2 cells into blocks most of the time
                    let grouped = crate::rng::uniform(spec.seed, 0x505853, (idx * 7919) as u64 ^ ((cy / 2 * 100 + cx / 2) as u64)) < 0.7;
                    let (gy, gx) = if grouped { (cy / 2, cx / 2) } else { (cy, cx) };
                    let pick = crate::rng::counter_hash(
                        spec.seed ^ idx as u64,
                        0x504958454c,
                        (gy * 4096 + gx) as u64 + if grouped { 1 << 40 } else { 0 },
                    ) as usize
                        % k;
                    let col = palette[pick];
                    for i in cy * cell..(cy + 1) * cell {
                        for j in cx * cell..(cx + 1) * cell {
                            for c in 0..3 {
                                data[(c * s + i) * s + j] = col[c];
                            }
                        }
                    }
                }
            }
            finish(spec, idx, data)
        })
        .collect()
}

// ---------------------------------------------------------------------
// PPM I/O
// ---------------------------------------------------------------------

/// Write an RGB image as binary PPM (P6, maxval 255).
pub fn save_ppm<F: Scalar>(x: &Tensor<F>, path: &Path) -> Result<()> {
    Ok(std::fs::write(path, ppm_bytes(x)?)?)
}

pub fn ppm_bytes<F: Scalar>(x: &Tensor<F>) -> Result<Vec<u8>> {
    if x.shape().len() != 3 || x.shape()[0] != 3 {
        return Err(Error::ShapeMismatch {
            op: "save_ppm",
            detail: format!("expected [3,H,W], got {:?}", x.shape()),
        });
    }
    let (h, w) = (x.shape()[1], x.shape()[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    for i in 0..h {
        for j in 0..w {
            for c in 0..3 {
                let v = x.data()[(c * h + i) * w + j].as_f64();
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

/// Load an 8-bit image; binary PPM is the native format.
pub fn load_image<F: Scalar>(path: &Path) -> Result<Tensor<F>> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(b"P6") {
        return ppm_from_bytes(&bytes);
    }
    if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        return Err(Error::Format("PNG input is not supported; convert to binary PPM (P6)".into()));
    }
    Err(Error::Format(format!("{}: not a binary PPM (P6) file", path.display())))
}

pub fn ppm_from_bytes<F: Scalar>(bytes: &[u8]) -> Result<Tensor<F>> {
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        // skip whitespace and '#' comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PPM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token(bytes)? != "P6" {
        return Err(Error::Format("not a P6 PPM".into()));
    }
    let w: usize = token(bytes)?.parse().map_err(|_| Error::Format("bad PPM width".into()))?;
    let h: usize = token(bytes)?.parse().map_err(|_| Error::Format("bad PPM height".into()))?;
    let maxval: usize = token(bytes)?.parse().map_err(|_| Error::Format("bad PPM maxval".into()))?;
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported PPM maxval {maxval}")));
    }
    pos += 1; // single whitespace after maxval
    if pos + 3 * w * h > bytes.len() {
        return Err(Error::Format("truncated PPM pixel data".into()));
    }
    let mut data = vec![F::zero(); 3 * h * w];
    for i in 0..h {
        for j in 0..w {
            for c in 0..3 {
                let v = bytes[pos + (i * w + j) * 3 + c];
                data[(c * h + i) * w + j] = F::of(v as f64 / 255.0);
            }
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// Generate and write a corpus as `<dir>/<domain>/<seed>_<idx>.ppm`;
/// returns the written paths in index order.
pub fn write_corpus<F: Scalar>(spec: &DomainSpec, dir: &Path) -> Result<Vec<PathBuf>> {
    let sub = dir.join(spec.kind.name());
    std::fs::create_dir_all(&sub)?;
    let images = generate::<F>(spec);
    let mut paths = Vec::with_capacity(images.len());
    for (idx, img) in images.iter().enumerate() {
        let path = sub.join(format!("{}_{idx}.ppm", spec.seed));
        save_ppm(&img.pixels, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Load every `.ppm` under a directory (recursing one level into domain
/// subdirectories), sorted by path for a stable order.
pub fn load_dir<F: Scalar>(dir: &Path) -> Result<Vec<(String, Tensor<F>)>> {
    let mut files = Vec::new();
    let walk = |d: &Path, files: &mut Vec<PathBuf>| -> Result<()> {
        for entry in std::fs::read_dir(d)? {
            let p = entry?.path();
            if p.is_file() && p.extension().is_some_and(|e| e == "ppm") {
                files.push(p);
            }
        }
        Ok(())
    };
    walk(dir, &mut files)?;
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            walk(&p, &mut files)?;
        }
    }
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let name = p
                .strip_prefix(dir)
                .unwrap_or(&p)
                .to_string_lossy()
                .trim_end_matches(".ppm")
                .replace(std::path::MAIN_SEPARATOR, "_");
            Ok((name, load_image(&p)?))
        })
        .collect()
}

