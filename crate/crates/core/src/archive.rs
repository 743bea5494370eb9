//! Compact binary sample archive (`FOVS`), the training-throughput
//! counterpart of the auditable text streams.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! magic "FOVS" | version u16 | SampleSpec block | sample count u64
//! per sample:
//!   recording tag (u16 length + UTF-8 bytes)
//!   sample_time f64
//!   anchor pose qw qx qy qz tx ty tz t   (8 x f64)
//!   current gaze gx gy gz t              (4 x f64)
//!   grid origin                          (3 x f64)
//!   input frame windows                  (T_p x 2 f64)
//!   grids, ceil(R^3/64) u64 words each, channel order
//!     [frame0: foveal central peripheral orientation scene] ... frame{T_p-1}
//!     [target: foveal central peripheral orientation]
//! ```
//!
//! Reads are strict: bad magic, version or geometry mismatch, short files
//! and trailing bytes all fail without yielding partial samples.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::dataset::{SampleSpec, SpanSample};
use crate::error::{Error, Result};
use crate::geom::{GazeSample, Pose};
use crate::voxel::{MultiLevelSpan, OccupancyGrid};

const MAGIC: &[u8; 4] = b"FOVS";
const VERSION: u16 = 1;

fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn write_spec<W: Write>(w: &mut W, spec: &SampleSpec) -> Result<()> {
    write_f64(w, spec.t_past_s)?;
    write_f64(w, spec.t_future_s)?;
    write_f64(w, spec.stride_s)?;
    write_f64(w, spec.frame_duration_s)?;
    let cfg = &spec.cfg;
    write_f64(w, cfg.cube_length_m)?;
    w.write_all(&(cfg.resolution as u32).to_le_bytes())?;
    let e = &cfg.eccentricities;
    for v in [e.foveal_deg, e.central_deg, e.peripheral_deg, e.orientation_deg] {
        write_f64(w, v)?;
    }
    w.write_all(&(cfg.outlier_neighbors as u32).to_le_bytes())?;
    write_f64(w, cfg.outlier_std_ratio)?;
    write_f64(w, cfg.frame_quantum_s)?;
    Ok(())
}

fn read_spec<R: Read>(r: &mut R) -> Result<SampleSpec> {
    let t_past_s = read_f64(r)?;
    let t_future_s = read_f64(r)?;
    let stride_s = read_f64(r)?;
    let frame_duration_s = read_f64(r)?;
    let cube_length_m = read_f64(r)?;
    let resolution = read_u32(r)? as usize;
    let foveal_deg = read_f64(r)?;
    let central_deg = read_f64(r)?;
    let peripheral_deg = read_f64(r)?;
    let orientation_deg = read_f64(r)?;
    let outlier_neighbors = read_u32(r)? as usize;
    let outlier_std_ratio = read_f64(r)?;
    let frame_quantum_s = read_f64(r)?;
    let spec = SampleSpec {
        t_past_s,
        t_future_s,
        stride_s,
        frame_duration_s,
        cfg: crate::geom::SpanConfig {
            cube_length_m,
            resolution,
            eccentricities: crate::geom::Eccentricities {
                foveal_deg,
                central_deg,
                peripheral_deg,
                orientation_deg,
            },
            outlier_neighbors,
            outlier_std_ratio,
            frame_quantum_s,
        },
    };
    spec.validate()
        .map_err(|e| Error::Archive(format!("invalid sample spec in archive: {e}")))?;
    Ok(spec)
}

fn write_grid<W: Write>(w: &mut W, grid: &OccupancyGrid, spec: &SampleSpec, origin: &Vector3<f64>) -> Result<()> {
    if grid.resolution() != spec.cfg.resolution
        || grid.cube_length() != spec.cfg.cube_length_m
        || grid.origin() != *origin
    {
        return Err(Error::Archive(
            "sample grid geometry does not match the archive spec".into(),
        ));
    }
    for &word in grid.words() {
        write_u64(w, word)?;
    }
    Ok(())
}

fn read_grid<R: Read>(r: &mut R, spec: &SampleSpec, origin: Vector3<f64>) -> Result<OccupancyGrid> {
    let resolution = spec.cfg.resolution;
    let n_words = (resolution * resolution * resolution).div_ceil(64);
    let mut words = Vec::with_capacity(n_words);
    for _ in 0..n_words {
        words.push(read_u64(r)?);
    }
    OccupancyGrid::from_words(resolution, spec.cfg.cube_length_m, origin, words)
}

/// Serialize samples sharing `spec` to `path`.
pub fn write_archive(path: &Path, samples: &[SpanSample], spec: &SampleSpec) -> Result<()> {
    spec.validate()?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    write_spec(&mut w, spec)?;
    write_u64(&mut w, samples.len() as u64)?;
    let t_p = spec.past_frames();
    for s in samples {
        if s.inputs.len() != t_p {
            return Err(Error::Archive(format!(
                "sample has {} input frames, spec demands {t_p}",
                s.inputs.len()
            )));
        }
        let tag = s.recording.as_bytes();
        if tag.len() > u16::MAX as usize {
            return Err(Error::Archive("recording tag longer than 65535 bytes".into()));
        }
        w.write_all(&(tag.len() as u16).to_le_bytes())?;
        w.write_all(tag)?;
        write_f64(&mut w, s.sample_time)?;
        let q = s.anchor.rotation.quaternion();
        for v in [q.w, q.i, q.j, q.k] {
            write_f64(&mut w, v)?;
        }
        for v in [s.anchor.translation.x, s.anchor.translation.y, s.anchor.translation.z] {
            write_f64(&mut w, v)?;
        }
        write_f64(&mut w, s.anchor.at)?;
        for v in [s.current_gaze.direction.x, s.current_gaze.direction.y, s.current_gaze.direction.z] {
            write_f64(&mut w, v)?;
        }
        write_f64(&mut w, s.current_gaze.at)?;
        let origin = s.inputs[0].origin();
        for v in [origin.x, origin.y, origin.z] {
            write_f64(&mut w, v)?;
        }
        for span in &s.inputs {
            write_f64(&mut w, span.window.0)?;
            write_f64(&mut w, span.window.1)?;
        }
        for span in &s.inputs {
            for grid in &span.levels {
                write_grid(&mut w, grid, spec, &origin)?;
            }
            write_grid(&mut w, &span.scene, spec, &origin)?;
        }
        for grid in &s.target {
            write_grid(&mut w, grid, spec, &origin)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Deserialize an archive; strict structural validation, no partial output.
pub fn read_archive(path: &Path) -> Result<(Vec<SpanSample>, SampleSpec)> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Archive(format!("{}: too short for magic", path.display())))?;
    if &magic != MAGIC {
        return Err(Error::Archive(format!(
            "{}: bad magic {magic:?}, expected {MAGIC:?}",
            path.display()
        )));
    }
    let version = read_u16(&mut r)?;
    if version != VERSION {
        return Err(Error::Archive(format!(
            "{}: unsupported version {version}, expected {VERSION}",
            path.display()
        )));
    }
    let spec = read_spec(&mut r)?;
    let count = read_u64(&mut r)? as usize;
    let t_p = spec.past_frames();

    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let tag_len = read_u16(&mut r)? as usize;
        let mut tag = vec![0u8; tag_len];
        r.read_exact(&mut tag)?;
        let recording = String::from_utf8(tag)
            .map_err(|_| Error::Archive("recording tag is not UTF-8".into()))?;
        let sample_time = read_f64(&mut r)?;
        let qw = read_f64(&mut r)?;
        let qx = read_f64(&mut r)?;
        let qy = read_f64(&mut r)?;
        let qz = read_f64(&mut r)?;
        let tx = read_f64(&mut r)?;
        let ty = read_f64(&mut r)?;
        let tz = read_f64(&mut r)?;
        let at = read_f64(&mut r)?;
        let anchor = Pose::new(
            UnitQuaternion::new_unchecked(Quaternion::new(qw, qx, qy, qz)),
            Vector3::new(tx, ty, tz),
            at,
        );
        let gx = read_f64(&mut r)?;
        let gy = read_f64(&mut r)?;
        let gz = read_f64(&mut r)?;
        let gt = read_f64(&mut r)?;
        let current_gaze = GazeSample::new(Vector3::new(gx, gy, gz), gt);
        let ox = read_f64(&mut r)?;
        let oy = read_f64(&mut r)?;
        let oz = read_f64(&mut r)?;
        let origin = Vector3::new(ox, oy, oz);
        let mut windows = Vec::with_capacity(t_p);
        for _ in 0..t_p {
            let a = read_f64(&mut r)?;
            let b = read_f64(&mut r)?;
            windows.push((a, b));
        }
        let mut inputs = Vec::with_capacity(t_p);
        for window in windows {
            let levels = [
                read_grid(&mut r, &spec, origin)?,
                read_grid(&mut r, &spec, origin)?,
                read_grid(&mut r, &spec, origin)?,
                read_grid(&mut r, &spec, origin)?,
            ];
            let scene = read_grid(&mut r, &spec, origin)?;
            inputs.push(MultiLevelSpan { levels, scene, window });
        }
        let target = [
            read_grid(&mut r, &spec, origin)?,
            read_grid(&mut r, &spec, origin)?,
            read_grid(&mut r, &spec, origin)?,
            read_grid(&mut r, &spec, origin)?,
        ];
        samples.push(SpanSample {
            inputs,
            target,
            anchor,
            current_gaze,
            recording,
            sample_time,
        });
    }
    let mut trailing = [0u8; 1];
    match r.read(&mut trailing)? {
        0 => Ok((samples, spec)),
        _ => Err(Error::Archive(format!(
            "{}: trailing bytes after the last sample",
            path.display()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_samples, Streams};
    use crate::synth;
    use tempfile::TempDir;

    fn sample_set() -> (Vec<SpanSample>, SampleSpec) {
        let scene = synth::standard_scene(21);
        let behavior = synth::standard_behavior(22, 8.0);
        let cfg = crate::geom::SpanConfig::default();
        let gen = synth::generate(&scene, &behavior, &cfg).unwrap();
        let streams = Streams {
            points: gen.points,
            poses: gen.poses,
            gazes: gen.gazes,
            warnings: vec![],
        };
        let spec = SampleSpec { cfg, ..SampleSpec::default() };
        let build = build_samples(&streams, "rec-a", &spec).unwrap();
        assert!(!build.samples.is_empty());
        (build.samples, spec)
    }

    #[test]
    fn roundtrip_is_identity() {
        let (samples, spec) = sample_set();
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("s.fovs");
        write_archive(&path, &samples, &spec).unwrap();
        let (back, back_spec) = read_archive(&path).unwrap();
        assert_eq!(back_spec, spec);
        assert_eq!(back, samples);
    }

    #[test]
    fn payload_size_arithmetic() {
        let (samples, spec) = sample_set();
        let one = &samples[..1];
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("one.fovs");
        write_archive(&path, one, &spec).unwrap();
        let len = std::fs::metadata(&path).unwrap().len() as usize;
        let grid_bytes = (2 * 5 + 4) * 512;
        // magic + version + spec block (11 f64 + 2 u32) + sample count.
        let header = 4 + 2 + 11 * 8 + 2 * 4 + 8;
        let per_sample = 2 + "rec-a".len() + 8 + 8 * 8 + 4 * 8 + 3 * 8 + 2 * 2 * 8;
        assert_eq!(len, header + per_sample + grid_bytes);
    }

    #[test]
    fn corrupted_magic_rejected() {
        let (samples, spec) = sample_set();
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("s.fovs");
        write_archive(&path, &samples, &spec).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_archive(&path).is_err());
    }

    #[test]
    fn truncation_and_trailing_bytes_rejected() {
        let (samples, spec) = sample_set();
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("s.fovs");
        write_archive(&path, &samples, &spec).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(read_archive(&path).is_err());
        let mut extended = bytes.clone();
        extended.push(0);
        std::fs::write(&path, &extended).unwrap();
        assert!(read_archive(&path).is_err());
    }

    #[test]
    fn writes_are_deterministic() {
        let (samples, spec) = sample_set();
        let dir = TempDir::new().unwrap();
        let a = dir.path().join("a.fovs");
        let b = dir.path().join("b.fovs");
        write_archive(&a, &samples, &spec).unwrap();
        write_archive(&b, &samples, &spec).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }
}
