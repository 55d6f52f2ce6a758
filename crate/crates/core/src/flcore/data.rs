//! Datasets: IDX loading, a built-in 8x8 digit generator and the label-sorted
//! shard partition across clients.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{stream, tag};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Pixel intensities in `[0, 1]`, row-major.
    pub x: Vec<f32>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }
}

/// One client's local data and its aggregation weight `|D_m| / |D|`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub id: usize,
    pub samples: Vec<Sample>,
    pub weight: f64,
}

impl ClientDataset {
    pub fn classes(&self) -> BTreeSet<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

const GLYPHS: [[&str; 7]; 10] = [
    [
        ".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###.",
    ],
    [
        "..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###.",
    ],
    [
        ".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####",
    ],
    [
        "#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###.",
    ],
    [
        "...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#.",
    ],
    [
        "#####", "#....", "####.", "....#", "....#", "#...#", ".###.",
    ],
    [
        "..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###.",
    ],
    [
        "#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#...",
    ],
    [
        ".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###.",
    ],
    [
        ".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##..",
    ],
];

pub const DIGIT_SIDE: usize = 8;

fn render_digit<R: Rng + ?Sized>(label: usize, rng: &mut R) -> Vec<f32> {
    let mut img = [0f32; DIGIT_SIDE * DIGIT_SIDE];
    let dx = rng.random_range(0..=DIGIT_SIDE - 5);
    let dy = rng.random_range(0..=DIGIT_SIDE - 7);
    let ink = rng.random_range(0.55f32..1.0);
    let thick = rng.random_bool(0.3);
    let noise = Normal::new(0.0f32, 0.12).unwrap();
    for (r, line) in GLYPHS[label].iter().enumerate() {
        for (c, ch) in line.bytes().enumerate() {
            if ch != b'#' || rng.random_bool(0.12) {
                continue;
            }
            let (y, x) = (r + dy, c + dx);
            img[y * DIGIT_SIDE + x] = ink;
            if thick && x + 1 < DIGIT_SIDE {
                let i = y * DIGIT_SIDE + x + 1;
                img[i] = img[i].max(0.6 * ink);
            }
        }
    }
    for v in img.iter_mut() {
        if rng.random_bool(0.06) {
            *v = rng.random_range(0.0..0.6);
        }
        *v = (*v + noise.sample(rng)).clamp(0.0, 1.0);
    }
    img.to_vec()
}

/// Noisy 8x8 renderings of the ten digits, `per_class` of each, in class
/// order. Jitter comes from random placement, ink level, stroke width,
/// dropped stroke pixels and pixel noise.
pub fn synthetic_digits(per_class: usize, seed: u64) -> Dataset {
    let mut rng = stream(seed, &[tag::DATA]);
    let mut samples = Vec::with_capacity(per_class * 10);
    for label in 0..10 {
        for _ in 0..per_class {
            samples.push(Sample {
                x: render_digit(label, &mut rng),
                label,
            });
        }
    }
    Dataset {
        samples,
        n_classes: 10,
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Payload("truncated IDX header".into()))
}

/// Parses an IDX image file (magic 0x803) and label file (magic 0x801),
/// scaling pixels to `[0, 1]`.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    if be_u32(images, 0)? != 0x0803 {
        return Err(Error::Payload("bad IDX image magic".into()));
    }
    if be_u32(labels, 0)? != 0x0801 {
        return Err(Error::Payload("bad IDX label magic".into()));
    }
    let n = be_u32(images, 4)? as usize;
    let rows = be_u32(images, 8)? as usize;
    let cols = be_u32(images, 12)? as usize;
    let n_labels = be_u32(labels, 4)? as usize;
    if n != n_labels {
        return Err(Error::Payload(format!("{n} images but {n_labels} labels")));
    }
    let px = rows * cols;
    let pixels = images
        .get(16..16 + n * px)
        .ok_or_else(|| Error::Payload("truncated IDX image data".into()))?;
    let labs = labels
        .get(8..8 + n)
        .ok_or_else(|| Error::Payload("truncated IDX label data".into()))?;
    let n_classes = labs
        .iter()
        .map(|&l| l as usize + 1)
        .max()
        .unwrap_or(0)
        .max(10);
    let samples = pixels
        .chunks_exact(px)
        .zip(labs)
        .map(|(img, &label)| Sample {
            x: img.iter().map(|&p| p as f32 / 255.0).collect(),
            label: label as usize,
        })
        .collect();
    Ok(Dataset { samples, n_classes })
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    parse_idx(&fs::read(images)?, &fs::read(labels)?)
}

/// Non-iid split: every class is cut into equal label-pure shards and each
/// client receives `shards_per_client` shards of distinct classes.
///
/// With one client the whole dataset is returned unchanged.
pub fn partition_noniid(
    dataset: &Dataset,
    n_clients: usize,
    shards_per_client: usize,
    seed: u64,
) -> Result<Vec<ClientDataset>> {
    if n_clients == 0 || shards_per_client == 0 {
        return Err(Error::Config(
            "clients and shards per client must be >= 1".into(),
        ));
    }
    if dataset.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    if n_clients == 1 {
        return Ok(vec![ClientDataset {
            id: 0,
            samples: dataset.samples.clone(),
            weight: 1.0,
        }]);
    }
    let present: Vec<usize> = dataset
        .class_counts()
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(k, _)| k)
        .collect();
    let total_shards = n_clients * shards_per_client;
    if shards_per_client > present.len() || !total_shards.is_multiple_of(present.len()) {
        return Err(Error::Config(format!(
            "{n_clients} clients x {shards_per_client} shards cannot be cut evenly from {} classes",
            present.len()
        )));
    }
    let per_class = total_shards / present.len();
    // Stable sort by label, then slice each class into `per_class` shards.
    let mut by_class: Vec<Vec<&Sample>> = vec![Vec::new(); dataset.n_classes];
    for s in &dataset.samples {
        by_class[s.label].push(s);
    }
    let mut shards: Vec<(usize, Vec<Sample>)> = Vec::with_capacity(total_shards);
    for &k in &present {
        let members = &by_class[k];
        if members.len() < per_class {
            return Err(Error::Config(format!(
                "class {k} has fewer samples than shards"
            )));
        }
        for i in 0..per_class {
            let lo = i * members.len() / per_class;
            let hi = (i + 1) * members.len() / per_class;
            shards.push((k, members[lo..hi].iter().map(|&s| s.clone()).collect()));
        }
    }

    let mut rng = stream(seed, &[tag::PARTITION]);
    let mut order: Vec<usize> = (0..total_shards).collect();
    order.shuffle(&mut rng);
    // Repair clients holding two shards of one class by swapping with a
    // random other slot until every client's classes are distinct.
    let s = shards_per_client;
    let label = |slot: usize, order: &[usize]| shards[order[slot]].0;
    let conflicted = |client: usize, order: &[usize]| {
        let mut seen = BTreeSet::new();
        (0..s).any(|j| !seen.insert(label(client * s + j, order)))
    };
    let mut budget = 1_000_000usize;
    while let Some(client) = (0..n_clients).find(|&c| conflicted(c, &order)) {
        budget = budget
            .checked_sub(1)
            .ok_or_else(|| Error::Config("could not assign distinct classes to clients".into()))?;
        let slot = client * s + rng.random_range(0..s);
        let other = rng.random_range(0..total_shards);
        order.swap(slot, other);
        if conflicted(client, &order) && conflicted(other / s, &order) {
            order.swap(slot, other);
        }
    }

    let total = dataset.len() as f64;
    Ok((0..n_clients)
        .map(|id| {
            let samples: Vec<Sample> = order[id * s..(id + 1) * s]
                .iter()
                .flat_map(|&sh| shards[sh].1.iter().cloned())
                .collect();
            let weight = samples.len() as f64 / total;
            ClientDataset {
                id,
                samples,
                weight,
            }
        })
        .collect())
}
