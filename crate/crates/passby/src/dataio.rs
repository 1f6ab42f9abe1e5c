//! On-disk formats: mono 32-bit float WAV clips and the label CSV.
//!
//! WAV files are written with the canonical 44-byte header (RIFF, a 16-byte
//! fmt chunk with format tag 3, then data). The reader walks the chunk list,
//! skips chunks it does not know, and rejects encodings other than mono
//! IEEE float-32. All writes go through a temp file plus rename so a crash
//! never leaves a half-written file at the destination.

use crate::dsp::AudioClip;
use crate::error::{Error, Result};
use crate::features::RecordingLabel;
use std::io::Write;
use std::path::Path;

const WAVE_FORMAT_IEEE_FLOAT: u16 = 3;

/// Writes `contents` to `path` atomically: temp file in the same directory,
/// flushed, then renamed over the destination.
pub(crate) fn atomic_write(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let stem = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = stem.to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = match dir {
        Some(d) => d.join(&tmp_name),
        None => tmp_name.into(),
    };
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        Ok(())
    };
    write().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        std::fs::remove_file(&tmp).ok();
        Error::io(path, e)
    })
}

/// Serializes a clip as canonical mono float-32 WAV: always
/// `44 + 4 * n_samples` bytes.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let data_len = clip.len() * 4;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&WAVE_FORMAT_IEEE_FLOAT.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 4).to_le_bytes());
    out.extend_from_slice(&4u16.to_le_bytes());
    out.extend_from_slice(&32u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for s in &clip.samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    atomic_write(path, &out)
}

/// Reads a mono float-32 WAV. Unknown chunks are skipped; other sample
/// encodings are rejected as unsupported rather than misread.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let need = |offset: usize, len: usize, what: &str| -> Result<&[u8]> {
        bytes.get(offset..offset + len).ok_or_else(|| {
            Error::parse(
                path,
                format!("byte {offset}"),
                format!("file truncated while reading {what}"),
            )
        })
    };
    let u16_at = |offset: usize, what: &str| -> Result<u16> {
        Ok(u16::from_le_bytes(need(offset, 2, what)?.try_into().unwrap()))
    };
    let u32_at = |offset: usize, what: &str| -> Result<u32> {
        Ok(u32::from_le_bytes(need(offset, 4, what)?.try_into().unwrap()))
    };

    if need(0, 4, "RIFF magic")? != b"RIFF" {
        return Err(Error::parse(path, "byte 0", "missing RIFF magic"));
    }
    if need(8, 4, "WAVE magic")? != b"WAVE" {
        return Err(Error::parse(path, "byte 8", "missing WAVE form type"));
    }

    let mut offset = 12usize;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<(usize, usize)> = None;
    while offset + 8 <= bytes.len() {
        let id: [u8; 4] = need(offset, 4, "chunk id")?.try_into().unwrap();
        let size = u32_at(offset + 4, "chunk size")? as usize;
        let body = offset + 8;
        match &id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::parse(
                        path,
                        format!("byte {body}"),
                        "fmt chunk shorter than 16 bytes",
                    ));
                }
                need(body, size, "fmt chunk")?;
                fmt = Some((
                    u16_at(body, "format tag")?,
                    u16_at(body + 2, "channel count")?,
                    u32_at(body + 4, "sample rate")?,
                    u16_at(body + 14, "bits per sample")?,
                ));
            }
            b"data" => {
                need(body, size, "data chunk")?;
                data = Some((body, size));
            }
            _ => {
                need(body, size, "chunk body")?;
            }
        }
        // Chunks are word-aligned; odd sizes carry a pad byte.
        offset = body + size + (size & 1);
    }

    let (tag, channels, sample_rate, bits) =
        fmt.ok_or_else(|| Error::parse(path, format!("byte {offset}"), "no fmt chunk"))?;
    if tag != WAVE_FORMAT_IEEE_FLOAT || bits != 32 {
        return Err(Error::unsupported(
            path,
            format!("only IEEE float-32 samples are supported, found format tag {tag} with {bits} bits"),
        ));
    }
    if channels != 1 {
        return Err(Error::unsupported(
            path,
            format!("only mono audio is supported, found {channels} channels"),
        ));
    }
    let (body, size) =
        data.ok_or_else(|| Error::parse(path, format!("byte {offset}"), "no data chunk"))?;
    if size % 4 != 0 {
        return Err(Error::parse(
            path,
            format!("byte {body}"),
            "data chunk size is not a multiple of the sample size",
        ));
    }
    let samples = bytes[body..body + size]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    AudioClip::new(samples, sample_rate)
}

/// One label CSV row: the clip's file stem plus its annotation.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelRow {
    pub clip: String,
    pub label: RecordingLabel,
}

const LABEL_HEADER: &str = "clip,vehicle,speed_kmh,t_cpa_s,has_vehicle";

/// Writes the label CSV. Times and speeds keep six decimals so a write/read
/// roundtrip stays within 1e-6.
pub fn write_labels(path: &Path, rows: &[LabelRow]) -> Result<()> {
    let mut out = String::new();
    out.push_str(LABEL_HEADER);
    out.push('\n');
    for r in rows {
        if r.clip.contains(',') || r.label.vehicle_id.contains(',') {
            return Err(Error::invalid(format!(
                "clip and vehicle names must not contain commas: {}",
                r.clip
            )));
        }
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{}\n",
            r.clip, r.label.vehicle_id, r.label.speed_kmh, r.label.t_cpa_s, r.label.has_vehicle
        ));
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == LABEL_HEADER => {}
        Some((_, h)) => {
            return Err(Error::parse(
                path,
                "line 1",
                format!("expected header `{LABEL_HEADER}`, found `{h}`"),
            ))
        }
        None => return Err(Error::parse(path, "line 1", "empty file")),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let ln = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::parse(
                path,
                format!("line {ln}"),
                format!("expected 5 fields, found {}", fields.len()),
            ));
        }
        let speed_kmh = fields[2].trim().parse::<f64>().map_err(|e| {
            Error::parse(path, format!("line {ln}"), format!("bad speed: {e}"))
        })?;
        let t_cpa_s = fields[3].trim().parse::<f64>().map_err(|e| {
            Error::parse(path, format!("line {ln}"), format!("bad t_cpa: {e}"))
        })?;
        let has_vehicle = match fields[4].trim() {
            "true" => true,
            "false" => false,
            other => {
                return Err(Error::parse(
                    path,
                    format!("line {ln}"),
                    format!("bad has_vehicle flag `{other}`"),
                ))
            }
        };
        rows.push(LabelRow {
            clip: fields[0].trim().to_string(),
            label: RecordingLabel {
                vehicle_id: fields[1].trim().to_string(),
                speed_kmh,
                t_cpa_s,
                has_vehicle,
            },
        });
    }
    Ok(rows)
}

/// One held-out prediction row, keyed by clip file stem rather than index
/// so prediction files stay meaningful next to their label files.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRow {
    pub rep: usize,
    pub clip: String,
    pub vehicle_id: String,
    pub estimated_speed_kmh: f64,
    pub predicted_t_cpa_s: f64,
    pub profile_max: f64,
    pub detected: bool,
}

const PREDICTION_HEADER: &str =
    "rep,clip,vehicle,estimated_speed_kmh,predicted_t_cpa_s,profile_max,detected";

/// Writes the prediction CSV with six decimals per number. Identical inputs
/// produce byte-identical files.
pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let mut out = String::new();
    out.push_str(PREDICTION_HEADER);
    out.push('\n');
    for r in rows {
        if r.clip.contains(',') || r.vehicle_id.contains(',') {
            return Err(Error::invalid(format!(
                "clip and vehicle names must not contain commas: {}",
                r.clip
            )));
        }
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},{}\n",
            r.rep,
            r.clip,
            r.vehicle_id,
            r.estimated_speed_kmh,
            r.predicted_t_cpa_s,
            r.profile_max,
            r.detected
        ));
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == PREDICTION_HEADER => {}
        Some((_, h)) => {
            return Err(Error::parse(
                path,
                "line 1",
                format!("expected header `{PREDICTION_HEADER}`, found `{h}`"),
            ))
        }
        None => return Err(Error::parse(path, "line 1", "empty file")),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let ln = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::parse(
                path,
                format!("line {ln}"),
                format!("expected 7 fields, found {}", fields.len()),
            ));
        }
        let num = |i: usize, what: &str| -> Result<f64> {
            fields[i].trim().parse::<f64>().map_err(|e| {
                Error::parse(path, format!("line {ln}"), format!("bad {what}: {e}"))
            })
        };
        let rep = fields[0].trim().parse::<usize>().map_err(|e| {
            Error::parse(path, format!("line {ln}"), format!("bad rep: {e}"))
        })?;
        let detected = match fields[6].trim() {
            "true" => true,
            "false" => false,
            other => {
                return Err(Error::parse(
                    path,
                    format!("line {ln}"),
                    format!("bad detected flag `{other}`"),
                ))
            }
        };
        rows.push(PredictionRow {
            rep,
            clip: fields[1].trim().to_string(),
            vehicle_id: fields[2].trim().to_string(),
            estimated_speed_kmh: num(3, "speed")?,
            predicted_t_cpa_s: num(4, "t_cpa")?,
            profile_max: num(5, "profile max")?,
            detected,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn tmpdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("dataio-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn sample_clip() -> AudioClip {
        let samples: Vec<f32> = (0..1000)
            .map(|i| ((i as f32) * 0.01).sin() * 0.8)
            .collect();
        AudioClip::new(samples, 44_100).unwrap()
    }

    #[test]
    fn wav_roundtrip_is_bit_exact_with_canonical_size() {
        let dir = tmpdir("wav");
        let path = dir.join("clip.wav");
        let clip = sample_clip();
        write_wav(&path, &clip).unwrap();
        let meta = std::fs::metadata(&path).unwrap();
        assert_eq!(meta.len(), 44 + 4 * clip.len() as u64);

        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, clip.sample_rate);
        assert_eq!(back.len(), clip.len());
        assert!(back
            .samples
            .iter()
            .zip(&clip.samples)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn reader_skips_unknown_chunks() {
        let dir = tmpdir("chunks");
        let path = dir.join("extra.wav");
        let clip = sample_clip();
        write_wav(&path, &clip).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        // Rebuild the file with a LIST chunk inserted between fmt and data.
        let mut patched = Vec::new();
        patched.extend_from_slice(&bytes[..36]);
        let extra = b"LIST\x05\x00\x00\x00INFO0\x00";
        patched.extend_from_slice(extra);
        patched.extend_from_slice(&bytes[36..]);
        let new_riff = (patched.len() - 8) as u32;
        patched[4..8].copy_from_slice(&new_riff.to_le_bytes());
        std::fs::write(&path, &patched).unwrap();

        let back = read_wav(&path).unwrap();
        assert_eq!(back.len(), clip.len());
        assert!(back
            .samples
            .iter()
            .zip(&clip.samples)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn truncated_wav_names_the_offset() {
        let dir = tmpdir("trunc");
        let path = dir.join("cut.wav");
        let clip = sample_clip();
        write_wav(&path, &clip).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..100]).unwrap();
        match read_wav(&path) {
            Err(Error::Parse { location, .. }) => {
                assert!(location.starts_with("byte"), "location: {location}")
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn non_float_and_multichannel_are_unsupported() {
        let dir = tmpdir("fmt");
        let path = dir.join("bad.wav");
        let clip = sample_clip();
        write_wav(&path, &clip).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        // PCM16 format tag.
        let mut pcm = bytes.clone();
        pcm[20..22].copy_from_slice(&1u16.to_le_bytes());
        pcm[34..36].copy_from_slice(&16u16.to_le_bytes());
        std::fs::write(&path, &pcm).unwrap();
        assert!(matches!(
            read_wav(&path),
            Err(Error::UnsupportedFormat { .. })
        ));

        // Stereo.
        let mut stereo = bytes.clone();
        stereo[22..24].copy_from_slice(&2u16.to_le_bytes());
        std::fs::write(&path, &stereo).unwrap();
        assert!(matches!(
            read_wav(&path),
            Err(Error::UnsupportedFormat { .. })
        ));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn labels_roundtrip_within_tolerance() {
        let dir = tmpdir("labels");
        let path = dir.join("labels.csv");
        let rows: Vec<LabelRow> = (0..5)
            .map(|i| LabelRow {
                clip: format!("v01_p{:02}", i + 1),
                label: RecordingLabel {
                    vehicle_id: "v01".into(),
                    speed_kmh: 30.0 + i as f64 * 7.7701234,
                    t_cpa_s: 2.0 + i as f64 * 0.33300077,
                    has_vehicle: i % 2 == 0,
                },
            })
            .collect();
        write_labels(&path, &rows).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(LABEL_HEADER));
        // Six decimals on the time column.
        let first = text.lines().nth(1).unwrap();
        let t_field = first.split(',').nth(3).unwrap();
        assert_eq!(t_field.split('.').nth(1).unwrap().len(), 6);

        let back = read_labels(&path).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in back.iter().zip(&rows) {
            assert_eq!(a.clip, b.clip);
            assert_eq!(a.label.vehicle_id, b.label.vehicle_id);
            assert_eq!(a.label.has_vehicle, b.label.has_vehicle);
            assert!((a.label.speed_kmh - b.label.speed_kmh).abs() <= 1e-6);
            assert!((a.label.t_cpa_s - b.label.t_cpa_s).abs() <= 1e-6);
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn malformed_label_row_names_the_line() {
        let dir = tmpdir("badcsv");
        let path = dir.join("labels.csv");
        std::fs::write(
            &path,
            format!("{LABEL_HEADER}\nv01_p01,v01,80.0,5.0,true\nv01_p02,v01,not_a_number,5.0,true\n"),
        )
        .unwrap();
        match read_labels(&path) {
            Err(Error::Parse { location, message, .. }) => {
                assert_eq!(location, "line 3");
                assert!(message.contains("speed"), "message: {message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }

        std::fs::write(&path, "wrong,header\n").unwrap();
        assert!(matches!(
            read_labels(&path),
            Err(Error::Parse { .. })
        ));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tmpdir("atomic");
        let path = dir.join("out.txt");
        atomic_write(&path, b"hello").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"hello");
        let entries: Vec<_> = std::fs::read_dir(&dir).unwrap().collect();
        assert_eq!(entries.len(), 1);

        // Overwrite keeps the old content until the rename lands.
        atomic_write(&path, b"world").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"world");

        let missing = dir.join("no_such_dir").join("out.txt");
        assert!(matches!(
            atomic_write(&missing, b"x"),
            Err(Error::Io { .. })
        ));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn prediction_roundtrip_and_byte_stability() {
        let dir = tmpdir("pred");
        let path = dir.join("predictions.csv");
        let rows = vec![
            PredictionRow {
                rep: 0,
                clip: "v01_p01".into(),
                vehicle_id: "v01".into(),
                estimated_speed_kmh: 63.25,
                predicted_t_cpa_s: 5.012471,
                profile_max: 7.3,
                detected: true,
            },
            PredictionRow {
                rep: 1,
                clip: "v02_p03".into(),
                vehicle_id: "v02".into(),
                estimated_speed_kmh: 41.0,
                predicted_t_cpa_s: 2.2,
                profile_max: 0.4,
                detected: false,
            },
        ];
        write_predictions(&path, &rows).unwrap();
        let back = read_predictions(&path).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.rep, b.rep);
            assert_eq!(a.clip, b.clip);
            assert_eq!(a.detected, b.detected);
            assert!((a.estimated_speed_kmh - b.estimated_speed_kmh).abs() < 1e-6);
            assert!((a.predicted_t_cpa_s - b.predicted_t_cpa_s).abs() < 1e-6);
        }

        let first = std::fs::read(&path).unwrap();
        write_predictions(&path, &rows).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());

        let bad = dir.join("bad.csv");
        std::fs::write(&bad, "rep,clip\n").unwrap();
        assert!(matches!(read_predictions(&bad), Err(Error::Parse { .. })));
        std::fs::remove_dir_all(&dir).ok();
    }
}
