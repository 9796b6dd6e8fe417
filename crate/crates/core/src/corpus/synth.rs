//! Planted-template synthetic corpora with procedurally rendered image pairs.
//!
//! Each report comes from one of `n_templates` sentence templates with two
//! slots filled from pools shared by all templates, plus a random
//! measurement. The first image of a pair encodes the template (background
//! level and blob count), the second encodes both slot fills (blob radius
//! and brightness), so every report is recoverable from its images.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{GrayImage, RawRecord};
use crate::{Error, Result};

const SIDE: usize = 32;

const SHAPE_POOL: [&str; 6] = ["regular", "irregular", "smooth", "lobulated", "angular", "blurred"];
const ECHO_POOL: [&str; 6] = [
    "hypoechoic",
    "isoechoic",
    "hyperechoic",
    "anechoic",
    "heterogeneous",
    "homogeneous",
];

/// `{a}`/`{b}` are slot fills, `{m}` a measurement phrase.
const TEMPLATES: [&str; 8] = [
    "the left breast shows a {a} {b} nodule measuring {m} , no blood flow signal inside",
    "right thyroid lobe contains one {a} {b} cyst of {m} , calcification absent , isthmus normal",
    "liver parenchyma appears {a} with {b} echo , portal vein diameter {m} , gallbladder wall thin",
    "axillary lymph node detected with {a} cortex and {b} hilum , size {m} , vascularity increased",
    "subcutaneous fat layer intact , gland tissue {a} , duct dilation {b} , depth {m}",
    "kidney cortex echo {a} , collecting system {b} , renal length {m} , no stone found",
    "spleen size normal , capsule {a} , parenchyma {b} , splenic vessels patent {m}",
    "pancreas head visible , echotexture {a} , main duct {b} , tail obscured by bowel gas {m}",
];

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub records: Vec<RawRecord>,
    /// Planted template index per record.
    pub labels: Vec<usize>,
    /// Image pair per record, matching `records[i].image_refs`.
    pub images: Vec<[GrayImage; 2]>,
}

fn template_text(t: usize) -> String {
    if t < TEMPLATES.len() {
        TEMPLATES[t].to_string()
    } else {
        format!("finding{t} in region{t} shows marker{t} , {{a}} border and {{b}} core , extent{t} {{m}}")
    }
}

fn measurement(kind: usize, rng: &mut impl Rng) -> String {
    let mut v = || rng.gen_range(3..60) as f32 / 10.0;
    match kind % 4 {
        0 => format!("{:.1}cm × {:.1}cm", v(), v()),
        1 => format!("{:.1}cm×{:.1}cm×{:.1}cm", v(), v(), v()),
        2 => format!("{:.1}mm", v()),
        _ => format!("{:.1}cm", v()),
    }
}

fn render(background: f32, blobs: &[(f32, f32, f32, f32)], rng: &mut impl Rng) -> GrayImage {
    let mut pixels = Vec::with_capacity(SIDE * SIDE);
    for y in 0..SIDE {
        for x in 0..SIDE {
            let mut v = background;
            for &(cx, cy, r, level) in blobs {
                let d2 = (x as f32 + 0.5 - cx).powi(2) + (y as f32 + 0.5 - cy).powi(2);
                if d2 <= r * r {
                    v = level;
                }
            }
            v += rng.gen_range(-0.02..0.02);
            pixels.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    GrayImage { width: SIDE, height: SIDE, pixels }
}

const BLOB_SITES: [(f32, f32); 4] = [(8.0, 8.0), (24.0, 24.0), (24.0, 8.0), (8.0, 24.0)];

fn overview_image(t: usize, n_templates: usize, rng: &mut impl Rng) -> GrayImage {
    let background = 0.1 + 0.5 * t as f32 / (n_templates - 1) as f32;
    let count = 1 + t % BLOB_SITES.len();
    let blobs: Vec<_> = BLOB_SITES[..count]
        .iter()
        .map(|&(x, y)| (x, y, 4.0, 0.95))
        .collect();
    render(background, &blobs, rng)
}

fn detail_image(a: usize, b: usize, rng: &mut impl Rng) -> GrayImage {
    let radius = 3.0 + 1.5 * a as f32;
    let level = 0.45 + 0.1 * b as f32;
    render(0.15, &[(16.0, 16.0, radius, level)], rng)
}

/// Draws `n_records` reports from `n_templates` planted templates.
pub fn generate_synthetic_corpus(
    n_templates: usize,
    n_records: usize,
    seed: u64,
) -> Result<SyntheticCorpus> {
    if n_templates < 2 {
        return Err(Error::config("need at least 2 templates"));
    }
    if n_records < n_templates {
        return Err(Error::DatasetTooSmall { needed: n_templates, got: n_records });
    }
    let mut rng = crate::rng::seeded(seed);
    let mut labels: Vec<usize> = (0..n_records).map(|i| i % n_templates).collect();
    labels.shuffle(&mut rng);

    let mut records = Vec::with_capacity(n_records);
    let mut images = Vec::with_capacity(n_records);
    for (i, &t) in labels.iter().enumerate() {
        let a = rng.gen_range(0..SHAPE_POOL.len());
        let b = rng.gen_range(0..ECHO_POOL.len());
        let report = template_text(t)
            .replace("{a}", SHAPE_POOL[a])
            .replace("{b}", ECHO_POOL[b])
            .replace("{m}", &measurement(t, &mut rng));
        let id = format!("syn-{i:05}");
        let pair = [overview_image(t, n_templates, &mut rng), detail_image(a, b, &mut rng)];
        records.push(RawRecord {
            image_refs: [format!("images/{id}_a.pgm"), format!("images/{id}_b.pgm")],
            id,
            report_text: report,
        });
        images.push(pair);
    }
    Ok(SyntheticCorpus { records, labels, images })
}
