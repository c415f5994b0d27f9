//! Dataset ingestion: IDX images, packed event streams, and a synthetic
//! spatio-temporal task with a known-optimal structure.
//!
//! The synthetic task is the desk-scale verification workload: two classes
//! share identical single-frame statistics and differ only in the sweep
//! direction of a bright pixel, so above-chance accuracy requires temporal
//! integration.

use crate::{Error, Result, RngStream, Tensor};
use std::fs;
use std::path::Path;

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;
const EVS_MAGIC: &[u8; 4] = b"EVS1";
const EVENT_RECORD_BYTES: usize = 10;

/// One DVS-style event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventRecord {
    pub t: u32,
    pub x: u16,
    pub y: u16,
    pub polarity: u8,
}

/// An event file: sensor geometry plus the sorted event list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    pub width: u16,
    pub height: u16,
    pub events: Vec<EventRecord>,
}

/// One training example.
#[derive(Debug, Clone)]
pub struct Sample {
    /// [T, C, H, W]
    pub frames: Tensor,
    pub label: usize,
}

fn parse_err(path: &Path, offset: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        path: Some(path.to_path_buf()),
        offset,
        detail: detail.into(),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    match bytes.get(offset..offset + 4) {
        Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]])),
        None => Err(parse_err(path, offset, "truncated header (need 4 bytes)")),
    }
}

/// Load an IDX image/label file pair.
///
/// Pixels are scaled to [0,1] by /255 and returned as [1,H,W] tensors.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<(Tensor, usize)>> {
    let img = read_file(images_path)?;
    let magic = be_u32(&img, 0, images_path)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(parse_err(
            images_path,
            0,
            format!("bad image magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}"),
        ));
    }
    let count = be_u32(&img, 4, images_path)? as usize;
    let rows = be_u32(&img, 8, images_path)? as usize;
    let cols = be_u32(&img, 12, images_path)? as usize;
    let pixel_bytes = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| parse_err(images_path, 4, "image dimensions overflow"))?;
    if img.len() != 16 + pixel_bytes {
        let offset = img.len().min(16 + pixel_bytes);
        return Err(parse_err(
            images_path,
            offset,
            format!("payload is {} bytes, header promises {}", img.len() - 16.min(img.len()), pixel_bytes),
        ));
    }

    let lab = read_file(labels_path)?;
    let magic = be_u32(&lab, 0, labels_path)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(parse_err(
            labels_path,
            0,
            format!("bad label magic {magic:#010x}, expected {IDX_LABEL_MAGIC:#010x}"),
        ));
    }
    let label_count = be_u32(&lab, 4, labels_path)? as usize;
    if label_count != count {
        return Err(parse_err(
            labels_path,
            4,
            format!("{label_count} labels for {count} images"),
        ));
    }
    if lab.len() != 8 + label_count {
        let offset = lab.len().min(8 + label_count);
        return Err(parse_err(labels_path, offset, "truncated label payload"));
    }

    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let start = 16 + i * rows * cols;
        let pixels: Vec<f64> = img[start..start + rows * cols]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect();
        let tensor = Tensor::from_vec(&[1, rows, cols], pixels)?;
        out.push((tensor, lab[8 + i] as usize));
    }
    Ok(out)
}

/// Write an IDX image/label pair. Pixel values are mapped back to bytes by
/// round(v·255), the exact inverse of the loader's scaling, so a load/write
/// cycle reproduces a valid file byte for byte.
pub fn write_idx(
    images_path: &Path,
    labels_path: &Path,
    samples: &[(Tensor, usize)],
) -> Result<()> {
    let (rows, cols) = match samples.first() {
        Some((img, _)) => {
            let s = img.shape();
            if s.len() != 3 || s[0] != 1 {
                return Err(Error::shape("write_idx", format!("image must be [1,H,W], got {s:?}")));
            }
            (s[1], s[2])
        }
        None => (0, 0),
    };
    let mut img_bytes = Vec::with_capacity(16 + samples.len() * rows * cols);
    img_bytes.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    img_bytes.extend_from_slice(&(samples.len() as u32).to_be_bytes());
    img_bytes.extend_from_slice(&(rows as u32).to_be_bytes());
    img_bytes.extend_from_slice(&(cols as u32).to_be_bytes());
    let mut lab_bytes = Vec::with_capacity(8 + samples.len());
    lab_bytes.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    lab_bytes.extend_from_slice(&(samples.len() as u32).to_be_bytes());
    for (img, label) in samples {
        if img.shape() != [1, rows, cols] {
            return Err(Error::shape("write_idx", "inconsistent image shapes"));
        }
        for &v in img.data() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::contract("write_idx", format!("pixel {v} outside [0,1]")));
            }
            img_bytes.push((v * 255.0).round() as u8);
        }
        if *label > u8::MAX as usize {
            return Err(Error::contract("write_idx", format!("label {label} exceeds u8")));
        }
        lab_bytes.push(*label as u8);
    }
    write_file(images_path, &img_bytes)?;
    write_file(labels_path, &lab_bytes)
}

/// Repeat a static image at every timestep: direct (analog) coding.
pub fn encode_static(image: &Tensor, timesteps: usize) -> Result<Tensor> {
    if timesteps == 0 {
        return Err(Error::contract("encode_static", "T must be >= 1"));
    }
    let mut shape = vec![timesteps];
    shape.extend_from_slice(image.shape());
    let mut data = Vec::with_capacity(timesteps * image.len());
    for _ in 0..timesteps {
        data.extend_from_slice(image.data());
    }
    Tensor::from_vec(&shape, data)
}

/// Load a packed EVS1 event file.
pub fn load_events(path: &Path) -> Result<EventStream> {
    let bytes = read_file(path)?;
    if bytes.len() < 12 {
        return Err(parse_err(path, bytes.len(), "truncated header (need 12 bytes)"));
    }
    if &bytes[0..4] != EVS_MAGIC {
        return Err(parse_err(
            path,
            0,
            format!("bad magic {:?}, expected {:?}", &bytes[0..4], EVS_MAGIC),
        ));
    }
    let width = u16::from_le_bytes([bytes[4], bytes[5]]);
    let height = u16::from_le_bytes([bytes[6], bytes[7]]);
    let count = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    let expected = 12 + count * EVENT_RECORD_BYTES;
    if bytes.len() != expected {
        return Err(parse_err(
            path,
            bytes.len().min(expected),
            format!("file is {} bytes, header promises {expected}", bytes.len()),
        ));
    }
    let mut events = Vec::with_capacity(count);
    let mut last_t = 0u32;
    for i in 0..count {
        let off = 12 + i * EVENT_RECORD_BYTES;
        let r = &bytes[off..off + EVENT_RECORD_BYTES];
        let event = EventRecord {
            t: u32::from_le_bytes([r[0], r[1], r[2], r[3]]),
            x: u16::from_le_bytes([r[4], r[5]]),
            y: u16::from_le_bytes([r[6], r[7]]),
            polarity: r[8],
        };
        if event.x >= width {
            return Err(parse_err(
                path,
                off,
                format!("record {i}: x = {} out of bounds (width {width})", event.x),
            ));
        }
        if event.y >= height {
            return Err(parse_err(
                path,
                off,
                format!("record {i}: y = {} out of bounds (height {height})", event.y),
            ));
        }
        if event.polarity > 1 {
            return Err(parse_err(
                path,
                off,
                format!("record {i}: polarity = {} not in {{0,1}}", event.polarity),
            ));
        }
        if i > 0 && event.t < last_t {
            return Err(parse_err(
                path,
                off,
                format!("record {i}: timestamp {} < previous {last_t}", event.t),
            ));
        }
        last_t = event.t;
        events.push(event);
    }
    Ok(EventStream {
        width,
        height,
        events,
    })
}

/// Write a packed EVS1 event file.
pub fn write_events(path: &Path, stream: &EventStream) -> Result<()> {
    if stream.events.len() > u32::MAX as usize {
        return Err(Error::contract("write_events", "too many events for u32 count"));
    }
    let mut bytes = Vec::with_capacity(12 + stream.events.len() * EVENT_RECORD_BYTES);
    bytes.extend_from_slice(EVS_MAGIC);
    bytes.extend_from_slice(&stream.width.to_le_bytes());
    bytes.extend_from_slice(&stream.height.to_le_bytes());
    bytes.extend_from_slice(&(stream.events.len() as u32).to_le_bytes());
    let mut last_t = 0u32;
    for (i, e) in stream.events.iter().enumerate() {
        if e.x >= stream.width || e.y >= stream.height {
            return Err(Error::contract(
                "write_events",
                format!("record {i}: ({}, {}) outside {}x{}", e.x, e.y, stream.width, stream.height),
            ));
        }
        if e.polarity > 1 {
            return Err(Error::contract(
                "write_events",
                format!("record {i}: polarity {} not in {{0,1}}", e.polarity),
            ));
        }
        if i > 0 && e.t < last_t {
            return Err(Error::contract(
                "write_events",
                format!("record {i}: timestamps must be non-decreasing"),
            ));
        }
        last_t = e.t;
        bytes.extend_from_slice(&e.t.to_le_bytes());
        bytes.extend_from_slice(&e.x.to_le_bytes());
        bytes.extend_from_slice(&e.y.to_le_bytes());
        bytes.push(e.polarity);
        bytes.push(0); // pad
    }
    write_file(path, &bytes)
}

/// Per-bin, per-polarity event counts without clipping; [T, 2, H, W].
pub fn bin_events_counts(
    events: &[EventRecord],
    timesteps: usize,
    width: u16,
    height: u16,
    duration_us: u32,
) -> Result<Tensor> {
    if timesteps == 0 {
        return Err(Error::contract("bin_events", "T must be >= 1"));
    }
    if duration_us == 0 {
        return Err(Error::contract("bin_events", "duration_us must be > 0"));
    }
    let (h, w) = (height as usize, width as usize);
    let mut counts = Tensor::zeros(&[timesteps, 2, h, w]);
    let data = counts.data_mut();
    for e in events {
        let bin = ((e.t as u64 * timesteps as u64) / duration_us as u64)
            .min(timesteps as u64 - 1) as usize;
        let idx = ((bin * 2 + e.polarity as usize) * h + e.y as usize) * w + e.x as usize;
        data[idx] += 1.0;
    }
    Ok(counts)
}

/// Accumulate events into [T, 2, H, W] frames, each cell clipped to 1.0.
pub fn bin_events(
    events: &[EventRecord],
    timesteps: usize,
    width: u16,
    height: u16,
    duration_us: u32,
) -> Result<Tensor> {
    let counts = bin_events_counts(events, timesteps, width, height, duration_us)?;
    Ok(counts.map(|c| c.min(1.0)))
}

/// Synthetic 8×8 two-class temporal task.
///
/// Each sample is a bright pixel on one row sweeping left-to-right (class 0,
/// column t mod 8) or right-to-left (class 1, column 7 − t mod 8), with
/// independent per-pixel flip noise. The row is drawn per sample; within a
/// sample the two classes traverse the same column set in opposite orders,
/// so single-frame (and frame-averaged) statistics are identical across
/// classes and only temporal structure separates them.
pub fn synth_task(seed: u64, n_samples: usize, timesteps: usize, noise: f64) -> Result<Vec<Sample>> {
    if timesteps < 4 {
        return Err(Error::contract(
            "synth_task",
            format!("T must be >= 4, got {timesteps}"),
        ));
    }
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::contract(
            "synth_task",
            format!("noise must be in [0,1], got {noise}"),
        ));
    }
    let mut rng = RngStream::derive(seed, "synth_task");
    let mut samples = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let label = i % 2;
        let row = rng.below(8) as usize;
        let mut frames = Tensor::zeros(&[timesteps, 1, 8, 8]);
        let data = frames.data_mut();
        for t in 0..timesteps {
            let col = if label == 0 { t % 8 } else { 7 - (t % 8) };
            data[(t * 8 + row) * 8 + col] = 1.0;
        }
        // Draw a flip decision for every pixel even at noise = 0, so the
        // same seed yields the same rows and flip coupling at every noise
        // level (clean and noisy datasets differ only where a flip fires).
        for v in data.iter_mut() {
            if rng.next_f64() < noise {
                *v = 1.0 - *v;
            }
        }
        samples.push(Sample {
            frames,
            label,
        });
    }
    Ok(samples)
}

/// Convenience: a deterministic train/test split of the synthetic task.
pub fn synth_split(
    seed: u64,
    n_train: usize,
    n_test: usize,
    timesteps: usize,
    noise: f64,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let train = synth_task(seed, n_train, timesteps, noise)?;
    let test = synth_task(seed.wrapping_add(0x9e37_79b9_7f4a_7c15), n_test, timesteps, noise)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().expect("tempdir")
    }

    fn idx_fixture() -> (Vec<u8>, Vec<u8>) {
        // Two 2x3 images and their labels, crafted by hand.
        let mut img = Vec::new();
        img.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&2u32.to_be_bytes());
        img.extend_from_slice(&3u32.to_be_bytes());
        img.extend_from_slice(&[0, 51, 102, 153, 204, 255]);
        img.extend_from_slice(&[255; 6]);
        let mut lab = Vec::new();
        lab.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        lab.extend_from_slice(&2u32.to_be_bytes());
        lab.extend_from_slice(&[7, 0]);
        (img, lab)
    }

    #[test]
    fn idx_load_scales_and_labels() {
        let dir = tmp();
        let (img, lab) = idx_fixture();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lab.idx");
        fs::write(&ip, &img).unwrap();
        fs::write(&lp, &lab).unwrap();
        let samples = load_idx(&ip, &lp).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].0.shape(), &[1, 2, 3]);
        assert_eq!(samples[0].1, 7);
        assert_eq!(samples[1].1, 0);
        assert!((samples[0].0.data()[1] - 51.0 / 255.0).abs() < 1e-15);
        assert!(samples[1].0.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn idx_round_trip_is_byte_exact() {
        let dir = tmp();
        let (img, lab) = idx_fixture();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lab.idx");
        fs::write(&ip, &img).unwrap();
        fs::write(&lp, &lab).unwrap();
        let samples = load_idx(&ip, &lp).unwrap();
        let ip2 = dir.path().join("img2.idx");
        let lp2 = dir.path().join("lab2.idx");
        write_idx(&ip2, &lp2, &samples).unwrap();
        assert_eq!(fs::read(&ip2).unwrap(), img);
        assert_eq!(fs::read(&lp2).unwrap(), lab);
    }

    #[test]
    fn idx_bad_magic_and_truncation() {
        let dir = tmp();
        let (mut img, lab) = idx_fixture();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lab.idx");
        img[3] = 0x04; // wrong magic
        fs::write(&ip, &img).unwrap();
        fs::write(&lp, &lab).unwrap();
        let err = load_idx(&ip, &lp).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");

        let (img, lab) = idx_fixture();
        fs::write(&ip, &img[..20]).unwrap(); // cut payload
        fs::write(&lp, &lab).unwrap();
        let err = load_idx(&ip, &lp).unwrap_err().to_string();
        assert!(err.contains("byte offset 20"), "{err}");
    }

    #[test]
    fn idx_count_mismatch() {
        let dir = tmp();
        let (img, mut lab) = idx_fixture();
        lab[7] = 3; // claim 3 labels
        lab.push(1);
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lab.idx");
        fs::write(&ip, &img).unwrap();
        fs::write(&lp, &lab).unwrap();
        let err = load_idx(&ip, &lp).unwrap_err().to_string();
        assert!(err.contains("3 labels for 2 images"), "{err}");
    }

    #[test]
    fn encode_static_repeats_frames() {
        let image = Tensor::from_vec(&[1, 2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let one = encode_static(&image, 1).unwrap();
        assert_eq!(one.shape(), &[1, 1, 2, 2]);
        assert_eq!(one.data(), image.data());
        let four = encode_static(&image, 4).unwrap();
        assert_eq!(four.shape(), &[4, 1, 2, 2]);
        for t in 0..4 {
            assert_eq!(&four.data()[t * 4..(t + 1) * 4], image.data());
        }
        assert!(encode_static(&image, 0).is_err());
    }

    #[test]
    fn event_codec_round_trips() {
        let dir = tmp();
        let path = dir.path().join("e.evs");
        // Single-record example.
        let stream = EventStream {
            width: 4,
            height: 4,
            events: vec![EventRecord { t: 5, x: 1, y: 2, polarity: 1 }],
        };
        write_events(&path, &stream).unwrap();
        assert_eq!(load_events(&path).unwrap(), stream);

        // Empty stream.
        let empty = EventStream { width: 8, height: 8, events: vec![] };
        write_events(&path, &empty).unwrap();
        assert_eq!(load_events(&path).unwrap(), empty);

        // Random streams.
        let mut rng = RngStream::new(97);
        for round in 0..20 {
            let width = 1 + rng.below(64) as u16;
            let height = 1 + rng.below(64) as u16;
            let n = rng.below(200) as usize;
            let mut t = 0u32;
            let mut events = Vec::with_capacity(n);
            for _ in 0..n {
                t = t.saturating_add(rng.below(1000) as u32);
                events.push(EventRecord {
                    t,
                    x: rng.below(width as usize) as u16,
                    y: rng.below(height as usize) as u16,
                    polarity: rng.below(2) as u8,
                });
            }
            let stream = EventStream { width, height, events };
            write_events(&path, &stream).unwrap();
            assert_eq!(load_events(&path).unwrap(), stream, "round {round}");
        }
    }

    #[test]
    fn event_errors_name_the_record() {
        let dir = tmp();
        let path = dir.path().join("e.evs");
        let stream = EventStream {
            width: 4,
            height: 4,
            events: vec![
                EventRecord { t: 1, x: 0, y: 0, polarity: 0 },
                EventRecord { t: 2, x: 1, y: 1, polarity: 1 },
            ],
        };
        write_events(&path, &stream).unwrap();
        let mut bytes = fs::read(&path).unwrap();

        // x of record 1 out of bounds.
        let off = 12 + EVENT_RECORD_BYTES + 4;
        bytes[off..off + 2].copy_from_slice(&9u16.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        let err = load_events(&path).unwrap_err().to_string();
        assert!(err.contains("record 1") && err.contains("out of bounds"), "{err}");

        // Non-monotone timestamps.
        write_events(&path, &stream).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[12..16].copy_from_slice(&7u32.to_le_bytes()); // record 0 t=7 > record 1 t=2
        fs::write(&path, &bytes).unwrap();
        let err = load_events(&path).unwrap_err().to_string();
        assert!(err.contains("record 1") && err.contains("timestamp"), "{err}");

        // Bad magic.
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        let err = load_events(&path).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");
    }

    #[test]
    fn bin_events_placement_and_boundaries() {
        let events = [EventRecord { t: 0, x: 2, y: 1, polarity: 1 }];
        let frames = bin_events(&events, 4, 4, 3, 1000).unwrap();
        assert_eq!(frames.shape(), &[4, 2, 3, 4]);
        let nonzero: Vec<usize> = frames
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(nonzero, vec![(0 * 2 + 1) * 12 + 1 * 4 + 2]);

        // Boundary timestamp lands in the last bin.
        let events = [EventRecord { t: 1000, x: 0, y: 0, polarity: 0 }];
        let frames = bin_events(&events, 4, 4, 3, 1000).unwrap();
        assert_eq!(frames.data()[3 * 24], 1.0);
        assert_eq!(frames.data().iter().filter(|&&v| v != 0.0).count(), 1);

        // Duplicate cell clips to 1.
        let events = [
            EventRecord { t: 10, x: 1, y: 1, polarity: 0 },
            EventRecord { t: 11, x: 1, y: 1, polarity: 0 },
        ];
        let frames = bin_events(&events, 4, 4, 3, 1000).unwrap();
        assert_eq!(frames.data()[0 * 24 + 1 * 4 + 1], 1.0);
    }

    #[test]
    fn bin_events_conserves_mass_before_clipping() {
        let mut rng = RngStream::new(101);
        let mut t = 0u32;
        let mut events = Vec::new();
        for _ in 0..500 {
            t = t.saturating_add(rng.below(40) as u32);
            events.push(EventRecord {
                t,
                x: rng.below(6) as u16,
                y: rng.below(5) as u16,
                polarity: rng.below(2) as u8,
            });
        }
        let counts = bin_events_counts(&events, 7, 6, 5, 12_000).unwrap();
        let total: f64 = counts.data().iter().sum();
        assert_eq!(total, 500.0);
        // Clipped frames never exceed 1 and zero exactly where counts zero.
        let frames = bin_events(&events, 7, 6, 5, 12_000).unwrap();
        for (&c, &f) in counts.data().iter().zip(frames.data()) {
            assert!(f <= 1.0);
            assert_eq!(f == 0.0, c == 0.0);
        }
    }

    #[test]
    fn synth_task_construction() {
        let samples = synth_task(11, 8, 8, 0.0).unwrap();
        assert_eq!(samples.len(), 8);
        for (i, sample) in samples.iter().enumerate() {
            assert_eq!(sample.label, i % 2);
            assert_eq!(sample.frames.shape(), &[8, 1, 8, 8]);
            // Exactly one bright pixel per frame, at the mandated column.
            for t in 0..8 {
                let frame = &sample.frames.data()[t * 64..(t + 1) * 64];
                assert_eq!(frame.iter().filter(|&&v| v == 1.0).count(), 1);
                let idx = frame.iter().position(|&v| v == 1.0).unwrap();
                let col = idx % 8;
                let expected = if sample.label == 0 { t % 8 } else { 7 - (t % 8) };
                assert_eq!(col, expected, "sample {i} t {t}");
            }
            // The pixel stays on one row for the whole sweep.
            let rows: Vec<usize> = (0..8)
                .map(|t| {
                    let frame = &sample.frames.data()[t * 64..(t + 1) * 64];
                    frame.iter().position(|&v| v == 1.0).unwrap() / 8
                })
                .collect();
            assert!(rows.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn synth_task_is_deterministic() {
        let a = synth_task(42, 16, 8, 0.2).unwrap();
        let b = synth_task(42, 16, 8, 0.2).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.label, y.label);
            assert_eq!(x.frames.data(), y.frames.data());
        }
        let c = synth_task(43, 16, 8, 0.2).unwrap();
        assert!(a.iter().zip(&c).any(|(x, y)| x.frames.data() != y.frames.data()));
    }

    #[test]
    fn synth_task_noise_rate() {
        // With noise = 0.1 over many pixels, the flip fraction concentrates.
        let clean = synth_task(5, 50, 8, 0.0).unwrap();
        let noisy = synth_task(5, 50, 8, 0.1).unwrap();
        let mut flips = 0usize;
        let mut total = 0usize;
        for (c, n) in clean.iter().zip(&noisy) {
            for (&a, &b) in c.frames.data().iter().zip(n.frames.data()) {
                if a != b {
                    flips += 1;
                }
                total += 1;
            }
        }
        let rate = flips as f64 / total as f64;
        assert!((0.08..0.12).contains(&rate), "flip rate {rate}");
    }

    #[test]
    fn synth_task_frame_sets_match_across_classes() {
        // Same row ⇒ class 0 and class 1 traverse identical frame sets, so
        // the time-averaged frame is class-independent.
        let samples = synth_task(3, 32, 8, 0.0).unwrap();
        let mean_frame = |s: &Sample| -> Vec<f64> {
            let mut m = vec![0.0; 64];
            for t in 0..8 {
                for i in 0..64 {
                    m[i] += s.frames.data()[t * 64 + i] / 8.0;
                }
            }
            m
        };
        for a in samples.iter().filter(|s| s.label == 0) {
            let ma = mean_frame(a);
            let row_a = ma.iter().position(|&v| v > 0.0).unwrap() / 8;
            let b = samples
                .iter()
                .find(|s| {
                    s.label == 1 && mean_frame(s).iter().position(|&v| v > 0.0).unwrap() / 8 == row_a
                });
            if let Some(b) = b {
                assert_eq!(ma, mean_frame(b));
            }
        }
    }

    #[test]
    fn synth_task_contracts() {
        assert!(synth_task(1, 4, 3, 0.0).is_err());
        assert!(synth_task(1, 4, 8, 1.5).is_err());
        assert!(synth_task(1, 0, 8, 0.0).unwrap().is_empty());
    }
}
