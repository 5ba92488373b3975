//! File formats: PNG frames, Middlebury `.flo`, `.pvol` pixel volumes and sequence manifests.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use image::{DynamicImage, GrayImage, ImageBuffer, RgbImage};

use crate::error::{Error, Result};
use crate::frame::{quantize, FlowField, Frame};
use crate::volume::PixelVolume;

/// `PIEH` read as a little-endian `f32`.
pub const FLO_MAGIC: f32 = 202021.25;
pub const PVOL_MAGIC: &[u8; 4] = b"PVOL";

fn format_err(format: &'static str, reason: impl Into<String>) -> Error {
    Error::Format {
        format,
        reason: reason.into(),
    }
}

/// Loads an 8-bit PNG as a 1- or 3-channel frame. Alpha and 16-bit data are converted.
pub fn load_png(path: impl AsRef<Path>) -> Result<Frame> {
    let img = image::open(path.as_ref()).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::Io(io),
        other => Error::Image(other),
    })?;
    let frame = match img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageLuma16(_) => {
            let g = img.to_luma8();
            Frame::new(
                g.width() as usize,
                g.height() as usize,
                1,
                g.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
            )?
        }
        _ => {
            let rgb = img.to_rgb8();
            Frame::new(
                rgb.width() as usize,
                rgb.height() as usize,
                3,
                rgb.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
            )?
        }
    };
    Ok(frame)
}

/// Saves a frame as an 8-bit grayscale or RGB PNG.
pub fn save_png(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let (w, h) = (frame.width() as u32, frame.height() as u32);
    let bytes: Vec<u8> = frame.data().iter().map(|&v| quantize(v)).collect();
    match frame.channels() {
        1 => {
            let img: GrayImage = ImageBuffer::from_raw(w, h, bytes).expect("buffer sized to frame");
            img.save(path.as_ref())?;
        }
        _ => {
            let img: RgbImage = ImageBuffer::from_raw(w, h, bytes).expect("buffer sized to frame");
            img.save(path.as_ref())?;
        }
    }
    Ok(())
}

pub fn write_flo<W: Write>(mut writer: W, flow: &FlowField) -> Result<()> {
    writer.write_f32::<LittleEndian>(FLO_MAGIC)?;
    writer.write_i32::<LittleEndian>(flow.width() as i32)?;
    writer.write_i32::<LittleEndian>(flow.height() as i32)?;
    for (&u, &v) in flow.u().iter().zip(flow.v()) {
        writer.write_f32::<LittleEndian>(u)?;
        writer.write_f32::<LittleEndian>(v)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_flo<R: Read>(mut reader: R) -> Result<FlowField> {
    let magic = reader.read_f32::<LittleEndian>()?;
    if magic != FLO_MAGIC {
        return Err(format_err("flo", format!("bad magic {magic}")));
    }
    let w = reader.read_i32::<LittleEndian>()?;
    let h = reader.read_i32::<LittleEndian>()?;
    if w <= 0 || h <= 0 || (w as i64) * (h as i64) > (1 << 28) {
        return Err(format_err("flo", format!("implausible size {w}x{h}")));
    }
    let n = (w * h) as usize;
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for _ in 0..n {
        u.push(reader.read_f32::<LittleEndian>()?);
        v.push(reader.read_f32::<LittleEndian>()?);
    }
    FlowField::new(w as usize, h as usize, u, v)
}

pub fn save_flo(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    write_flo(BufWriter::new(File::create(path)?), flow)
}

pub fn load_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    read_flo(BufReader::new(File::open(path)?))
}

/// `PVOL`, `u32` width, height, k, then the float32 samples slice by slice, then one byte of
/// validity per sample, all little-endian.
pub fn write_pvol<W: Write>(mut writer: W, pv: &PixelVolume) -> Result<()> {
    writer.write_all(PVOL_MAGIC)?;
    writer.write_u32::<LittleEndian>(pv.width() as u32)?;
    writer.write_u32::<LittleEndian>(pv.height() as u32)?;
    writer.write_u32::<LittleEndian>(pv.k() as u32)?;
    for &s in pv.samples() {
        writer.write_f32::<LittleEndian>(s)?;
    }
    let flags: Vec<u8> = pv.validity().iter().map(|&v| v as u8).collect();
    writer.write_all(&flags)?;
    writer.flush()?;
    Ok(())
}

pub fn read_pvol<R: Read>(mut reader: R) -> Result<PixelVolume> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != PVOL_MAGIC {
        return Err(format_err("pvol", "bad magic"));
    }
    let w = reader.read_u32::<LittleEndian>()? as usize;
    let h = reader.read_u32::<LittleEndian>()? as usize;
    let k = reader.read_u32::<LittleEndian>()? as usize;
    let n = w
        .checked_mul(h)
        .and_then(|v| v.checked_mul(k))
        .and_then(|v| v.checked_mul(k))
        .filter(|&n| n > 0 && n <= 1 << 30)
        .ok_or_else(|| format_err("pvol", format!("implausible size {w}x{h}, k={k}")))?;
    let mut samples = vec![0f32; n];
    reader.read_f32_into::<LittleEndian>(&mut samples)?;
    let mut flags = vec![0u8; n];
    reader.read_exact(&mut flags)?;
    if flags.iter().any(|&f| f > 1) {
        return Err(format_err("pvol", "validity flags must be 0 or 1"));
    }
    PixelVolume::from_parts(
        w,
        h,
        k,
        samples,
        flags.into_iter().map(|f| f == 1).collect(),
    )
}

pub fn save_pvol(pv: &PixelVolume, path: impl AsRef<Path>) -> Result<()> {
    write_pvol(BufWriter::new(File::create(path)?), pv)
}

pub fn load_pvol(path: impl AsRef<Path>) -> Result<PixelVolume> {
    read_pvol(BufReader::new(File::open(path)?))
}

/// Ordered frame lists of one sequence.
///
/// Stored as `key=value` lines: repeated `sharp=`, `blurred=` and `flow=` entries in frame
/// order (paths relative to the manifest), any other key as metadata. `flow=` entry `i` maps
/// frame `i + 1` onto frame `i`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SequenceManifest {
    pub sharp: Vec<PathBuf>,
    pub blurred: Vec<PathBuf>,
    pub flows: Vec<PathBuf>,
    pub metadata: Vec<(String, String)>,
}

impl SequenceManifest {
    pub fn validate(&self) -> Result<()> {
        if self.blurred.is_empty() {
            return Err(format_err("manifest", "no blurred frames listed"));
        }
        if !self.sharp.is_empty() && self.sharp.len() != self.blurred.len() {
            return Err(format_err(
                "manifest",
                format!(
                    "{} sharp vs {} blurred frames",
                    self.sharp.len(),
                    self.blurred.len()
                ),
            ));
        }
        if !self.flows.is_empty() && self.flows.len() + 1 != self.blurred.len() {
            return Err(format_err(
                "manifest",
                format!(
                    "{} flows for {} frames",
                    self.flows.len(),
                    self.blurred.len()
                ),
            ));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = SequenceManifest::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                format_err(
                    "manifest",
                    format!("line {}: expected key=value", lineno + 1),
                )
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "sharp" => m.sharp.push(value.into()),
                "blurred" => m.blurred.push(value.into()),
                "flow" => m.flows.push(value.into()),
                _ => m.metadata.push((key.to_string(), value.to_string())),
            }
        }
        m.validate()?;
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# sequence manifest\n");
        for (k, v) in &self.metadata {
            out.push_str(&format!("{k}={v}\n"));
        }
        for (key, list) in [
            ("sharp", &self.sharp),
            ("blurred", &self.blurred),
            ("flow", &self.flows),
        ] {
            for p in list {
                out.push_str(&format!("{key}={}\n", p.display()));
            }
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let m = SequenceManifest::parse(&fs::read_to_string(path)?)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((m, base))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn metadata_value(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::gen_texture;
    use proptest::prelude::*;

    #[test]
    fn flo_layout() {
        let flow = FlowField::new(2, 1, vec![1.0, -2.5], vec![0.5, 3.0]).unwrap();
        let mut buf = Vec::new();
        write_flo(&mut buf, &flow).unwrap();
        assert_eq!(&buf[..4], b"PIEH");
        assert_eq!(buf.len(), 12 + 2 * 8);
        assert_eq!(&buf[12..16], &1.0f32.to_le_bytes());
        assert_eq!(&buf[16..20], &0.5f32.to_le_bytes());
        assert_eq!(read_flo(&buf[..]).unwrap(), flow);
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_flo(&bad[..]).is_err());
        assert!(read_flo(&buf[..20]).is_err());
    }

    #[test]
    fn pvol_layout_and_round_trip() {
        let f = gen_texture(1, 6, 5, 1.0).unwrap();
        let flow = FlowField::constant(6, 5, 1.0, 0.0);
        let pv = crate::volume::build_pixel_volume(&f, &flow, 3).unwrap();
        let mut buf = Vec::new();
        write_pvol(&mut buf, &pv).unwrap();
        assert_eq!(&buf[..4], b"PVOL");
        assert_eq!(buf.len(), 16 + 6 * 5 * 9 * 5);
        // first sample is slice (dy, dx) = (-1, -1), pixel (0, 0)
        assert_eq!(&buf[16..20], &pv.slice(-1, -1)[0].to_le_bytes());
        assert_eq!(read_pvol(&buf[..]).unwrap(), pv);
        assert!(read_pvol(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn png_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let f = gen_texture(2, 17, 9, 1.0).unwrap();
        let path = dir.path().join("f.png");
        save_png(&f, &path).unwrap();
        let back = load_png(&path).unwrap();
        assert_eq!(back.channels(), 1);
        for (a, b) in f.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 510.0 + 1e-6);
        }
        let rgb = Frame::new(2, 1, 3, vec![1.0, 0.0, 0.5, 0.2, 0.4, 0.6]).unwrap();
        let path = dir.path().join("c.png");
        save_png(&rgb, &path).unwrap();
        assert_eq!(load_png(&path).unwrap(), rgb.quantize());
    }

    #[test]
    fn manifest_parse_and_validate() {
        let text = "# x\nframes=2\nsharp=s/0.png\nsharp=s/1.png\nblurred=b/0.png\nblurred=b/1.png\nflow=f/1.flo\n";
        let m = SequenceManifest::parse(text).unwrap();
        assert_eq!(m.blurred.len(), 2);
        assert_eq!(m.metadata_value("frames"), Some("2"));
        assert_eq!(SequenceManifest::parse(&m.to_text()).unwrap(), m);
        assert!(SequenceManifest::parse("sharp=a.png\nblurred=a.png\nblurred=b.png\n").is_err());
        assert!(SequenceManifest::parse("frames=0\n").is_err());
        assert!(SequenceManifest::parse("blurred=a.png\nflow=x.flo\n").is_err());
    }

    proptest! {
        #[test]
        fn flo_round_trip_is_bit_exact(
            w in 1usize..9,
            h in 1usize..9,
            seed in prop::collection::vec(-1e6f32..1e6, 2 * 64),
        ) {
            let n = w * h;
            let flow = FlowField::new(w, h, seed[..n].to_vec(), seed[64..64 + n].to_vec()).unwrap();
            let mut buf = Vec::new();
            write_flo(&mut buf, &flow).unwrap();
            let back = read_flo(&buf[..]).unwrap();
            for (a, b) in flow.u().iter().chain(flow.v()).zip(back.u().iter().chain(back.v())) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
