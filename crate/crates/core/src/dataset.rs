//! Synthetic nested-component segmentation data: generation, client
//! partitioning, label corruption, and reproducible export.
//!
//! Each sample imitates a blastocyst-style micrograph at desk scale: a
//! wobbled zona-pellucida (ZP) ring enclosing a trophectoderm (TE) ring
//! enclosing the blastocoel (BL) cavity, which contains an inner-cell-mass
//! (ICM) blob, all on background. The image is the mask rendered as
//! per-class intensities plus Gaussian texture noise.
//!
//! Corruption emulates sloppy annotation: every foreground class region is
//! dilated by a discrete disk, and overlapping claims resolve by fixed
//! precedence ICM > TE > ZP > BL > background, so inner structures push
//! their boundaries outward. Clean test masks never pass through here.
//!
//! Generation is pure given a seed: sample `idx` draws everything from an
//! RNG stream derived from `(seed, "sample", idx << 8 | attempt)`, so
//! regenerating a degenerate draw never disturbs its neighbors.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SplitFedError};
use crate::mask::Mask;
use crate::rng::stream;
use crate::tensor::Tensor;

pub const BACKGROUND: u8 = 0;
pub const ZP: u8 = 1;
pub const TE: u8 = 2;
pub const ICM: u8 = 3;
pub const BL: u8 = 4;
pub const NUM_CLASSES: usize = 5;

/// Class names in id order, for report headers.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["background", "zp", "te", "icm", "bl"];

/// Every generated mask must give each class at least this pixel share.
const MIN_CLASS_SHARE: f64 = 0.01;

/// Regeneration budget per sample before giving up on the geometry.
const MAX_ATTEMPTS: u64 = 16;

/// Mean image intensity per class id, before jitter and texture noise.
const INTENSITY: [f64; NUM_CLASSES] = [0.15, 0.75, 0.55, 0.90, 0.35];

/// Uniform per-sample intensity jitter half-width.
const INTENSITY_JITTER: f64 = 0.05;

/// Standard deviation of the per-pixel Gaussian texture noise.
const NOISE_STD: f64 = 0.05;

/// Validation fraction of each client's samples (floor rule).
const VALIDATION_FRACTION: f64 = 0.15;

/// Magic bytes opening every exported sample record.
const SAMPLE_MAGIC: [u8; 4] = *b"SFS1";

/// One image/mask pair. The image is an `h x w` grid in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SegSample {
    pub image: Tensor,
    pub mask: Mask,
}

impl SegSample {
    pub fn dims(&self) -> (usize, usize) {
        (self.mask.height(), self.mask.width())
    }
}

/// One client's local data and its annotation status.
#[derive(Clone, Debug)]
pub struct ClientDataset {
    pub client_id: usize,
    pub train: Vec<SegSample>,
    pub validation: Vec<SegSample>,
    pub corrupted: bool,
}

/// All clients plus the held-out global test set (never corrupted).
#[derive(Clone, Debug)]
pub struct PartitionedData {
    pub clients: Vec<ClientDataset>,
    pub test: Vec<SegSample>,
}

/// A wobbled circle boundary `r(θ) = base·(1 + a₃sin(3θ+φ₃) + a₅sin(5θ+φ₅))`.
#[derive(Clone, Copy, Debug)]
struct Boundary {
    base: f64,
    a3: f64,
    p3: f64,
    a5: f64,
    p5: f64,
}

impl Boundary {
    fn draw<R: Rng>(rng: &mut R, base: f64) -> Boundary {
        Boundary {
            base,
            a3: rng.gen_range(0.02..0.05),
            p3: rng.gen_range(0.0..std::f64::consts::TAU),
            a5: rng.gen_range(0.01..0.03),
            p5: rng.gen_range(0.0..std::f64::consts::TAU),
        }
    }

    fn radius(&self, theta: f64) -> f64 {
        self.base
            * (1.0 + self.a3 * (3.0 * theta + self.p3).sin() + self.a5 * (5.0 * theta + self.p5).sin())
    }
}

/// Full geometry of one sample: three nested ring boundaries around a
/// shared center, plus an off-center ICM blob inside the cavity.
#[derive(Clone, Debug)]
struct RingGeometry {
    cy: f64,
    cx: f64,
    zp_outer: Boundary,
    zp_inner: Boundary,
    te_inner: Boundary,
    icm_cy: f64,
    icm_cx: f64,
    icm: Boundary,
}

fn draw_geometry<R: Rng>(rng: &mut R, h: usize, w: usize) -> RingGeometry {
    let rr = h.min(w) as f64 / 2.0;
    let cy = h as f64 / 2.0 + rr * rng.gen_range(-0.05..0.05);
    let cx = w as f64 / 2.0 + rr * rng.gen_range(-0.05..0.05);
    let zp_outer_base = rr * rng.gen_range(0.88..0.96);
    let zp_inner_base = zp_outer_base - rr * rng.gen_range(0.16..0.20);
    let te_inner_base = zp_inner_base - rr * rng.gen_range(0.19..0.24);
    let zp_outer = Boundary::draw(rng, zp_outer_base);
    let zp_inner = Boundary::draw(rng, zp_inner_base);
    let te_inner = Boundary::draw(rng, te_inner_base);
    let icm_r = rr * rng.gen_range(0.24..0.30);
    let icm_angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let icm_dist = rr * rng.gen_range(0.0..0.12);
    let icm_cy = cy + icm_dist * icm_angle.sin();
    let icm_cx = cx + icm_dist * icm_angle.cos();
    let icm = Boundary::draw(rng, icm_r);
    RingGeometry { cy, cx, zp_outer, zp_inner, te_inner, icm_cy, icm_cx, icm }
}

/// Rejects geometries whose rings pinch below one pixel anywhere.
fn geometry_is_sound(g: &RingGeometry) -> bool {
    const PROBES: usize = 256;
    for k in 0..PROBES {
        let theta = k as f64 * std::f64::consts::TAU / PROBES as f64;
        let outer = g.zp_outer.radius(theta);
        let inner = g.zp_inner.radius(theta);
        let cavity = g.te_inner.radius(theta);
        if outer - inner < 1.0 || inner - cavity < 1.0 || cavity < 2.0 {
            return false;
        }
        if g.icm.radius(theta) < 1.0 {
            return false;
        }
    }
    true
}

fn rasterize(g: &RingGeometry, h: usize, w: usize) -> Mask {
    let mut data = vec![BACKGROUND; h * w];
    for y in 0..h {
        for x in 0..w {
            let dy = y as f64 - g.cy;
            let dx = x as f64 - g.cx;
            let r = dy.hypot(dx);
            let theta = dy.atan2(dx);
            let class = if r <= g.te_inner.radius(theta) {
                let idy = y as f64 - g.icm_cy;
                let idx = x as f64 - g.icm_cx;
                if idy.hypot(idx) <= g.icm.radius(idy.atan2(idx)) {
                    ICM
                } else {
                    BL
                }
            } else if r <= g.zp_inner.radius(theta) {
                TE
            } else if r <= g.zp_outer.radius(theta) {
                ZP
            } else {
                BACKGROUND
            };
            data[y * w + x] = class;
        }
    }
    Mask::new(h, w, data).expect("rasterized mask dims are the requested dims")
}

fn generate_sample(seed: u64, idx: usize, h: usize, w: usize) -> Result<SegSample> {
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = stream(seed, "sample", ((idx as u64) << 8) | attempt);
        let g = draw_geometry(&mut rng, h, w);
        if !geometry_is_sound(&g) {
            continue;
        }
        let mask = rasterize(&g, h, w);
        if (0..NUM_CLASSES).any(|c| mask.class_share(c as u8) < MIN_CLASS_SHARE) {
            continue;
        }
        let mut levels = INTENSITY;
        for level in &mut levels {
            *level += rng.gen_range(-INTENSITY_JITTER..INTENSITY_JITTER);
        }
        let noise = Normal::new(0.0, NOISE_STD)
            .map_err(|e| SplitFedError::Numerics(format!("noise distribution: {e}")))?;
        let data: Vec<f64> = mask
            .data()
            .iter()
            .map(|&class| (levels[usize::from(class)] + noise.sample(&mut rng)).clamp(0.0, 1.0))
            .collect();
        let image = Tensor::new(vec![h, w], data)?;
        return Ok(SegSample { image, mask });
    }
    Err(SplitFedError::Data(format!(
        "sample {idx}: geometry stayed degenerate after {MAX_ATTEMPTS} attempts at {h}x{w}"
    )))
}

/// Generates `count` deterministic samples of size `h x w` (both >= 16).
/// Every mask contains all five classes with at least a 1% pixel share.
pub fn generate_synthetic(seed: u64, count: usize, h: usize, w: usize) -> Result<Vec<SegSample>> {
    if h < 16 || w < 16 {
        return Err(SplitFedError::Config(format!(
            "image size must be at least 16x16, got {h}x{w}"
        )));
    }
    (0..count).map(|idx| generate_sample(seed, idx, h, w)).collect()
}

/// Deals `counts[i]` samples to client `i` from a seeded shuffle, splits
/// each client 85/15 into train/validation (validation takes
/// `floor(0.15·cᵢ)`, the remainder trains), and returns the leftover
/// samples as the global test set.
pub fn partition_clients(
    samples: Vec<SegSample>,
    counts: &[usize],
    seed: u64,
) -> Result<PartitionedData> {
    let total: usize = counts.iter().sum();
    if total > samples.len() {
        return Err(SplitFedError::Config(format!(
            "client counts ask for {total} samples but only {} were provided",
            samples.len()
        )));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut stream(seed, "partition", 0));
    let mut pool: Vec<Option<SegSample>> = samples.into_iter().map(Some).collect();
    let mut take = |idx: usize| pool[idx].take().expect("each shuffled index is used once");

    let mut clients = Vec::with_capacity(counts.len());
    let mut cursor = 0usize;
    for (client_id, &count) in counts.iter().enumerate() {
        let ids = &order[cursor..cursor + count];
        cursor += count;
        let val_len = (VALIDATION_FRACTION * count as f64).floor() as usize;
        let train_len = count - val_len;
        let train: Vec<SegSample> = ids[..train_len].iter().map(|&i| take(i)).collect();
        let validation: Vec<SegSample> = ids[train_len..].iter().map(|&i| take(i)).collect();
        clients.push(ClientDataset { client_id, train, validation, corrupted: false });
    }
    let test: Vec<SegSample> = order[cursor..].iter().map(|&i| take(i)).collect();
    Ok(PartitionedData { clients, test })
}

/// Disk-dilation corruption: radius, which classes dilate, and the paint
/// precedence (ascending; later entries overwrite earlier ones).
#[derive(Clone, Debug)]
pub struct CorruptionSpec {
    pub radius: u32,
    pub classes: Vec<u8>,
    pub precedence: Vec<u8>,
}

impl CorruptionSpec {
    /// Disk of the given radius (>= 1), dilating every foreground class
    /// with the default precedence ICM > TE > ZP > BL.
    pub fn disk(radius: u32) -> Result<CorruptionSpec> {
        let spec = CorruptionSpec {
            radius,
            classes: vec![ZP, TE, ICM, BL],
            precedence: vec![BL, ZP, TE, ICM],
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks radius, class ids, and precedence coverage.
    pub fn validate(&self) -> Result<()> {
        if self.radius == 0 {
            return Err(SplitFedError::Config("corruption radius must be at least 1".into()));
        }
        let foreground = |c: u8| (1..NUM_CLASSES as u8).contains(&c);
        if self.classes.is_empty() || !self.classes.iter().all(|&c| foreground(c)) {
            return Err(SplitFedError::Config(
                "dilated classes must be a nonempty set of foreground class ids".into(),
            ));
        }
        let mut sorted = self.precedence.clone();
        sorted.sort_unstable();
        if sorted != (1..NUM_CLASSES as u8).collect::<Vec<u8>>() {
            return Err(SplitFedError::Config(
                "precedence must order each foreground class exactly once".into(),
            ));
        }
        if self.classes.iter().enumerate().any(|(i, c)| self.classes[..i].contains(c)) {
            return Err(SplitFedError::Config("dilated classes must be distinct".into()));
        }
        Ok(())
    }

    /// Rank per class id; background is 0, foreground ranks follow the
    /// precedence order starting at 1.
    fn ranks(&self) -> [u8; NUM_CLASSES] {
        let mut ranks = [0u8; NUM_CLASSES];
        for (i, &class) in self.precedence.iter().enumerate() {
            ranks[usize::from(class)] = i as u8 + 1;
        }
        ranks
    }

    /// Lattice points of the closed disk `dx² + dy² <= radius²`.
    fn disk_offsets(&self) -> Vec<(i32, i32)> {
        let r = self.radius as i32;
        let mut offsets = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy <= r * r {
                    offsets.push((dy, dx));
                }
            }
        }
        offsets
    }
}

/// Dilates each selected class region of `mask` by the spec's disk. A
/// pixel takes the highest-precedence class among its original label and
/// every dilated region covering it, so inner structures swallow their
/// neighbors' borders and background never grows.
pub fn corrupt_mask(mask: &Mask, spec: &CorruptionSpec) -> Result<Mask> {
    spec.validate()?;
    mask.validate_classes(NUM_CLASSES)?;
    let ranks = spec.ranks();
    let offsets = spec.disk_offsets();
    let (h, w) = (mask.height() as i32, mask.width() as i32);
    let mut out = mask.clone();
    for &class in &spec.classes {
        let rank = ranks[usize::from(class)];
        for y in 0..h {
            for x in 0..w {
                if mask.get(y as usize, x as usize) != class {
                    continue;
                }
                for &(dy, dx) in &offsets {
                    let (ty, tx) = (y + dy, x + dx);
                    if ty < 0 || tx < 0 || ty >= h || tx >= w {
                        continue;
                    }
                    let (ty, tx) = (ty as usize, tx as usize);
                    if ranks[usize::from(out.get(ty, tx))] < rank {
                        out.set(ty, tx, class);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Corrupts every train and validation mask of the named clients in place
/// and flags them; test masks are untouched by construction.
pub fn apply_corruption(
    data: &mut PartitionedData,
    client_ids: &[usize],
    spec: &CorruptionSpec,
) -> Result<()> {
    for &id in client_ids {
        if id >= data.clients.len() {
            return Err(SplitFedError::Config(format!(
                "cannot corrupt client {id}; only {} clients exist",
                data.clients.len()
            )));
        }
    }
    for &id in client_ids {
        let client = &mut data.clients[id];
        client.corrupted = true;
        for sample in client.train.iter_mut().chain(client.validation.iter_mut()) {
            sample.mask = corrupt_mask(&sample.mask, spec)?;
        }
    }
    Ok(())
}

/// The default choice of which `k` clients to corrupt: those holding the
/// most data first (worst case for the global model), ties broken toward
/// the lower client id.
pub fn corrupted_ids(counts: &[usize], k: usize) -> Result<Vec<usize>> {
    if k > counts.len() {
        return Err(SplitFedError::Config(format!(
            "cannot corrupt {k} of {} clients",
            counts.len()
        )));
    }
    let mut by_size: Vec<usize> = (0..counts.len()).collect();
    by_size.sort_by_key(|&i| (std::cmp::Reverse(counts[i]), i));
    by_size.truncate(k);
    Ok(by_size)
}

/// Stacks samples into a `[B, 1, H, W]` input tensor plus their masks.
pub fn batch_inputs(samples: &[SegSample]) -> Result<(Tensor, Vec<Mask>)> {
    let Some(first) = samples.first() else {
        return Err(SplitFedError::Data("cannot batch zero samples".into()));
    };
    let (h, w) = first.dims();
    let mut data = Vec::with_capacity(samples.len() * h * w);
    let mut masks = Vec::with_capacity(samples.len());
    for sample in samples {
        if sample.dims() != (h, w) {
            return Err(SplitFedError::Shape(format!(
                "cannot batch {}x{} sample with {h}x{w} samples",
                sample.mask.height(),
                sample.mask.width()
            )));
        }
        data.extend_from_slice(sample.image.data());
        masks.push(sample.mask.clone());
    }
    Ok((Tensor::new(vec![samples.len(), 1, h, w], data)?, masks))
}

#[derive(Serialize, Deserialize)]
struct ManifestClient {
    client_id: usize,
    corrupted: bool,
    train: Vec<usize>,
    validation: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    height: usize,
    width: usize,
    clients: Vec<ManifestClient>,
    test: Vec<usize>,
}

const MANIFEST_FORMAT: &str = "splitfed-dataset-v1";

fn write_sample(path: &Path, sample: &SegSample) -> Result<()> {
    let (h, w) = sample.dims();
    let mut bytes = Vec::with_capacity(16 + sample.image.len() * 8 + sample.mask.len());
    bytes.extend_from_slice(&SAMPLE_MAGIC);
    bytes.extend_from_slice(&(h as u32).to_le_bytes());
    bytes.extend_from_slice(&(w as u32).to_le_bytes());
    for v in sample.image.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes.extend_from_slice(sample.mask.data());
    fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

fn read_sample(path: &Path) -> Result<SegSample> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let name = path.display();
    if bytes.len() < 12 || bytes[..4] != SAMPLE_MAGIC {
        return Err(SplitFedError::Serde(format!("{name}: not a sample record")));
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().expect("length checked")) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().expect("length checked")) as usize;
    let pixels = h
        .checked_mul(w)
        .ok_or_else(|| SplitFedError::Serde(format!("{name}: dimension overflow")))?;
    if bytes.len() != 12 + pixels * 9 {
        return Err(SplitFedError::Serde(format!(
            "{name}: expected {} bytes for {h}x{w}, got {}",
            12 + pixels * 9,
            bytes.len()
        )));
    }
    let image_bytes = &bytes[12..12 + pixels * 8];
    let data: Vec<f64> = image_bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunked by 8")))
        .collect();
    let image = Tensor::new(vec![h, w], data)?;
    let mask = Mask::new(h, w, bytes[12 + pixels * 8..].to_vec())?;
    mask.validate_classes(NUM_CLASSES)?;
    Ok(SegSample { image, mask })
}

fn sample_path(dir: &Path, idx: usize) -> std::path::PathBuf {
    dir.join("samples").join(format!("{idx:04}.bin"))
}

/// Writes the partition to `dir`: one binary record per sample under
/// `samples/`, plus `manifest.json` mapping clients to record indices and
/// carrying their corruption flags.
pub fn export_dataset(dir: &Path, data: &PartitionedData) -> Result<()> {
    let Some(first) = data
        .clients
        .iter()
        .flat_map(|c| c.train.iter())
        .chain(data.test.iter())
        .next()
    else {
        return Err(SplitFedError::Data("refusing to export an empty dataset".into()));
    };
    let (height, width) = first.dims();
    fs::create_dir_all(dir.join("samples"))?;
    let mut idx = 0usize;
    let mut store = |samples: &[SegSample]| -> Result<Vec<usize>> {
        let mut ids = Vec::with_capacity(samples.len());
        for sample in samples {
            write_sample(&sample_path(dir, idx), sample)?;
            ids.push(idx);
            idx += 1;
        }
        Ok(ids)
    };
    let mut clients = Vec::with_capacity(data.clients.len());
    for client in &data.clients {
        clients.push(ManifestClient {
            client_id: client.client_id,
            corrupted: client.corrupted,
            train: store(&client.train)?,
            validation: store(&client.validation)?,
        });
    }
    let test = store(&data.test)?;
    let manifest = Manifest {
        format: MANIFEST_FORMAT.to_string(),
        height,
        width,
        clients,
        test,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Reads a dataset previously written by [`export_dataset`].
pub fn import_dataset(dir: &Path) -> Result<PartitionedData> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(SplitFedError::Serde(format!(
            "unsupported dataset format {:?}",
            manifest.format
        )));
    }
    let load = |ids: &[usize]| -> Result<Vec<SegSample>> {
        ids.iter()
            .map(|&idx| {
                let sample = read_sample(&sample_path(dir, idx))?;
                if sample.dims() != (manifest.height, manifest.width) {
                    return Err(SplitFedError::Serde(format!(
                        "sample {idx} dims disagree with the manifest"
                    )));
                }
                Ok(sample)
            })
            .collect()
    };
    let mut clients = Vec::with_capacity(manifest.clients.len());
    for entry in &manifest.clients {
        clients.push(ClientDataset {
            client_id: entry.client_id,
            train: load(&entry.train)?,
            validation: load(&entry.validation)?,
            corrupted: entry.corrupted,
        });
    }
    Ok(PartitionedData { clients, test: load(&manifest.test)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn desk_counts() -> Vec<usize> {
        vec![42, 24, 17, 36, 24]
    }

    #[test]
    fn same_seed_reproduces_bit_identical_samples() {
        let a = generate_synthetic(7, 3, 32, 32).unwrap();
        let b = generate_synthetic(7, 3, 32, 32).unwrap();
        assert_eq!(a.len(), 3);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.mask, y.mask);
            let xbits: Vec<u64> = x.image.data().iter().map(|v| v.to_bits()).collect();
            let ybits: Vec<u64> = y.image.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xbits, ybits);
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate_synthetic(7, 1, 32, 32).unwrap();
        let b = generate_synthetic(8, 1, 32, 32).unwrap();
        assert_ne!(a[0].mask, b[0].mask);
    }

    #[test]
    fn every_class_keeps_at_least_one_percent_share() {
        for sample in generate_synthetic(11, 8, 32, 32).unwrap() {
            for class in 0..NUM_CLASSES as u8 {
                assert!(
                    sample.mask.class_share(class) >= MIN_CLASS_SHARE,
                    "class {class} starved"
                );
            }
            assert!(sample.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn structure_is_radially_nested() {
        let sample = &generate_synthetic(3, 1, 32, 32).unwrap()[0];
        let mask = &sample.mask;
        // Corners lie beyond the outermost ring.
        assert_eq!(mask.get(0, 0), BACKGROUND);
        assert_eq!(mask.get(31, 31), BACKGROUND);
        // Mean distance from the image center orders the ring classes.
        let mean_r = |class: u8| {
            let mut total = 0.0;
            let mut n = 0usize;
            for y in 0..32 {
                for x in 0..32 {
                    if mask.get(y, x) == class {
                        total += (y as f64 - 16.0).hypot(x as f64 - 16.0);
                        n += 1;
                    }
                }
            }
            total / n as f64
        };
        assert!(mean_r(ZP) > mean_r(TE));
        assert!(mean_r(TE) > mean_r(BL));
        assert!(mean_r(BL) > mean_r(ICM));
    }

    #[test]
    fn tiny_sizes_and_zero_count_behave() {
        assert!(generate_synthetic(1, 1, 12, 32).is_err());
        assert!(generate_synthetic(1, 0, 32, 32).unwrap().is_empty());
    }

    #[test]
    fn desk_partition_leaves_seventeen_test_samples() {
        let samples = generate_synthetic(42, 160, 16, 16).unwrap();
        let parted = partition_clients(samples, &desk_counts(), 42).unwrap();
        assert_eq!(parted.test.len(), 17);
        // Client 0 holds 42 samples: validation floor(0.15*42)=6, train 36.
        assert_eq!(parted.clients[0].validation.len(), 6);
        assert_eq!(parted.clients[0].train.len(), 36);
        let held: usize = parted
            .clients
            .iter()
            .map(|c| c.train.len() + c.validation.len())
            .sum();
        assert_eq!(held + parted.test.len(), 160);
        assert!(parted.clients.iter().all(|c| !c.corrupted));
    }

    #[test]
    fn partition_assigns_each_sample_exactly_once() {
        // Tag each sample by a unique pixel value, then count tags after.
        let mut samples = generate_synthetic(5, 20, 16, 16).unwrap();
        for (i, s) in samples.iter_mut().enumerate() {
            s.image.data_mut()[0] = i as f64 / 100.0;
        }
        let parted = partition_clients(samples, &[7, 8], 9).unwrap();
        let mut tags: Vec<u64> = parted
            .clients
            .iter()
            .flat_map(|c| c.train.iter().chain(c.validation.iter()))
            .chain(parted.test.iter())
            .map(|s| s.image.data()[0].to_bits())
            .collect();
        tags.sort_unstable();
        tags.dedup();
        assert_eq!(tags.len(), 20);
    }

    #[test]
    fn ten_samples_split_nine_one() {
        let samples = generate_synthetic(1, 10, 16, 16).unwrap();
        let parted = partition_clients(samples, &[10], 1).unwrap();
        assert_eq!(parted.clients[0].train.len(), 9);
        assert_eq!(parted.clients[0].validation.len(), 1);
        assert!(parted.test.is_empty());
    }

    #[test]
    fn oversubscribed_counts_are_rejected() {
        let samples = generate_synthetic(1, 5, 16, 16).unwrap();
        assert!(matches!(
            partition_clients(samples, &[4, 2], 1),
            Err(SplitFedError::Config(_))
        ));
    }

    #[test]
    fn single_pixel_dilates_to_the_thirteen_point_disk() {
        let mut data = vec![BACKGROUND; 49];
        data[3 * 7 + 3] = ZP;
        let mask = Mask::new(7, 7, data).unwrap();
        let out = corrupt_mask(&mask, &CorruptionSpec::disk(2).unwrap()).unwrap();
        let mut hits = Vec::new();
        for y in 0..7i32 {
            for x in 0..7i32 {
                if out.get(y as usize, x as usize) == ZP {
                    hits.push((y - 3, x - 3));
                }
            }
        }
        assert_eq!(hits.len(), 13);
        for (dy, dx) in hits {
            assert!(dy * dy + dx * dx <= 4);
        }
    }

    #[test]
    fn covering_disk_floods_the_highest_precedence_class() {
        let mut data = vec![BACKGROUND; 64];
        data[9] = ZP;
        data[54] = ICM;
        let mask = Mask::new(8, 8, data).unwrap();
        let spec = CorruptionSpec { radius: 100, ..CorruptionSpec::disk(1).unwrap() };
        let out = corrupt_mask(&mask, &spec).unwrap();
        assert!(out.data().iter().all(|&c| c == ICM));
    }

    #[test]
    fn all_background_is_untouched() {
        let mask = Mask::filled(9, 9, BACKGROUND).unwrap();
        let out = corrupt_mask(&mask, &CorruptionSpec::disk(3).unwrap()).unwrap();
        assert_eq!(out, mask);
    }

    #[test]
    fn radius_zero_and_bad_precedence_are_rejected() {
        assert!(CorruptionSpec::disk(0).is_err());
        let mut spec = CorruptionSpec::disk(2).unwrap();
        spec.precedence = vec![ZP, ZP, TE, ICM];
        assert!(corrupt_mask(&Mask::filled(4, 4, 0).unwrap(), &spec).is_err());
        let mut spec = CorruptionSpec::disk(2).unwrap();
        spec.classes = vec![BACKGROUND];
        assert!(corrupt_mask(&Mask::filled(4, 4, 0).unwrap(), &spec).is_err());
    }

    #[test]
    fn corruption_shifts_every_foreground_boundary() {
        let sample = &generate_synthetic(21, 1, 32, 32).unwrap()[0];
        let spec = CorruptionSpec::disk(2).unwrap();
        let out = corrupt_mask(&sample.mask, &spec).unwrap();
        let bg_before = sample.mask.class_share(BACKGROUND);
        let bg_after = out.class_share(BACKGROUND);
        assert!(bg_after <= bg_before);
        for class in 1..NUM_CLASSES as u8 {
            let mut inter = 0usize;
            let mut union = 0usize;
            for (a, b) in sample.mask.data().iter().zip(out.data()) {
                let (xa, xb) = (*a == class, *b == class);
                inter += usize::from(xa && xb);
                union += usize::from(xa || xb);
            }
            assert!(union > 0);
            assert!(
                (inter as f64) < (union as f64),
                "class {class} boundary did not move"
            );
        }
    }

    #[test]
    fn apply_corruption_flags_and_rewrites_local_masks_only() {
        let samples = generate_synthetic(13, 30, 16, 16).unwrap();
        let mut parted = partition_clients(samples, &[10, 10], 13).unwrap();
        let before_test: Vec<Mask> = parted.test.iter().map(|s| s.mask.clone()).collect();
        let before_c0: Vec<Mask> = parted.clients[0].train.iter().map(|s| s.mask.clone()).collect();
        let spec = CorruptionSpec::disk(2).unwrap();
        apply_corruption(&mut parted, &[1], &spec).unwrap();
        assert!(!parted.clients[0].corrupted);
        assert!(parted.clients[1].corrupted);
        for (s, old) in parted.clients[0].train.iter().zip(&before_c0) {
            assert_eq!(&s.mask, old);
        }
        for (s, old) in parted.test.iter().zip(&before_test) {
            assert_eq!(&s.mask, old);
        }
        assert!(parted.clients[1]
            .train
            .iter()
            .chain(parted.clients[1].validation.iter())
            .all(|s| s.mask.validate_classes(NUM_CLASSES).is_ok()));
        assert!(apply_corruption(&mut parted, &[5], &spec).is_err());
    }

    #[test]
    fn corruption_order_prefers_the_biggest_clients() {
        let counts = desk_counts();
        assert_eq!(corrupted_ids(&counts, 0).unwrap(), Vec::<usize>::new());
        assert_eq!(corrupted_ids(&counts, 1).unwrap(), vec![0]);
        assert_eq!(corrupted_ids(&counts, 2).unwrap(), vec![0, 3]);
        // Clients 1 and 4 tie at 24 samples; the lower id goes first.
        assert_eq!(corrupted_ids(&counts, 4).unwrap(), vec![0, 3, 1, 4]);
        assert_eq!(corrupted_ids(&counts, 5).unwrap(), vec![0, 3, 1, 4, 2]);
        assert!(corrupted_ids(&counts, 6).is_err());
    }

    #[test]
    fn batches_stack_on_the_sample_axis() {
        let samples = generate_synthetic(2, 3, 16, 16).unwrap();
        let (input, masks) = batch_inputs(&samples).unwrap();
        assert_eq!(input.shape(), &[3, 1, 16, 16]);
        assert_eq!(masks.len(), 3);
        assert_eq!(&input.data()[..256], samples[0].image.data());
        assert_eq!(&input.data()[512..], samples[2].image.data());
        assert!(batch_inputs(&[]).is_err());
    }

    #[test]
    fn export_import_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let samples = generate_synthetic(17, 24, 16, 16).unwrap();
        let mut parted = partition_clients(samples, &[8, 12], 17).unwrap();
        apply_corruption(&mut parted, &[0], &CorruptionSpec::disk(2).unwrap()).unwrap();
        export_dataset(dir.path(), &parted).unwrap();
        let loaded = import_dataset(dir.path()).unwrap();
        assert_eq!(loaded.clients.len(), 2);
        assert_eq!(loaded.test.len(), 4);
        for (a, b) in parted.clients.iter().zip(&loaded.clients) {
            assert_eq!(a.client_id, b.client_id);
            assert_eq!(a.corrupted, b.corrupted);
            for (x, y) in a
                .train
                .iter()
                .chain(a.validation.iter())
                .zip(b.train.iter().chain(b.validation.iter()))
            {
                assert_eq!(x.mask, y.mask);
                let xb: Vec<u64> = x.image.data().iter().map(|v| v.to_bits()).collect();
                let yb: Vec<u64> = y.image.data().iter().map(|v| v.to_bits()).collect();
                assert_eq!(xb, yb);
            }
        }
        for (x, y) in parted.test.iter().zip(&loaded.test) {
            assert_eq!(x.mask, y.mask);
        }
    }

    #[test]
    fn import_rejects_tampered_records() {
        let dir = tempfile::tempdir().unwrap();
        let samples = generate_synthetic(1, 8, 16, 16).unwrap();
        let parted = partition_clients(samples, &[8], 1).unwrap();
        export_dataset(dir.path(), &parted).unwrap();
        let victim = sample_path(dir.path(), 0);
        let mut bytes = fs::read(&victim).unwrap();
        bytes[0] = b'X';
        fs::write(&victim, &bytes).unwrap();
        assert!(import_dataset(dir.path()).is_err());
        bytes[0] = b'S';
        bytes.pop();
        fs::write(&victim, &bytes).unwrap();
        assert!(import_dataset(dir.path()).is_err());
    }

    /// Brute-force reference: a pixel takes the highest-precedence class
    /// among its original label and every dilated class with an original
    /// pixel within the disk radius.
    fn corrupt_by_search(mask: &Mask, spec: &CorruptionSpec) -> Mask {
        let ranks = spec.ranks();
        let (h, w) = (mask.height() as i32, mask.width() as i32);
        let r2 = (spec.radius * spec.radius) as i32;
        let mut out = mask.clone();
        for y in 0..h {
            for x in 0..w {
                let mut best = mask.get(y as usize, x as usize);
                for sy in 0..h {
                    for sx in 0..w {
                        let c = mask.get(sy as usize, sx as usize);
                        if !spec.classes.contains(&c) || ranks[usize::from(c)] <= ranks[usize::from(best)] {
                            continue;
                        }
                        let (dy, dx) = (sy - y, sx - x);
                        if dy * dy + dx * dx <= r2 {
                            best = c;
                        }
                    }
                }
                out.set(y as usize, x as usize, best);
            }
        }
        out
    }

    proptest! {
        #[test]
        fn dilation_matches_brute_force(
            (h, w, cells) in (4usize..=10, 4usize..=10)
                .prop_flat_map(|(h, w)| (Just(h), Just(w), prop::collection::vec(0u8..5, h * w))),
            radius in 1u32..=3,
        ) {
            let mask = Mask::new(h, w, cells).unwrap();
            let spec = CorruptionSpec::disk(radius).unwrap();
            let fast = corrupt_mask(&mask, &spec).unwrap();
            let slow = corrupt_by_search(&mask, &spec);
            prop_assert_eq!(fast, slow);
        }

        #[test]
        fn dilation_is_extensive_and_background_never_grows(
            (h, w, cells) in (4usize..=10, 4usize..=10)
                .prop_flat_map(|(h, w)| (Just(h), Just(w), prop::collection::vec(0u8..5, h * w))),
            radius in 1u32..=3,
        ) {
            let mask = Mask::new(h, w, cells).unwrap();
            let spec = CorruptionSpec::disk(radius).unwrap();
            let out = corrupt_mask(&mask, &spec).unwrap();
            let ranks = spec.ranks();
            for (before, after) in mask.data().iter().zip(out.data()) {
                // A pixel only ever climbs in precedence, so foreground
                // pixels never fall back to background.
                prop_assert!(ranks[usize::from(*after)] >= ranks[usize::from(*before)]);
            }
        }
    }
}
