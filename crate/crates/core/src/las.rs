//! LAS 1.4 reading and writing for point record formats 7 and 8.
//!
//! Only uncompressed files are handled. Variable length records are skipped
//! on read and never written. Format 8 files are read with their NIR channel
//! dropped and written with NIR set to zero.

use std::io::Write;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian as LE};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::taxonomy::ClassId;

pub const HEADER_SIZE: usize = 375;
const SCAN_ANGLE_UNIT: f64 = 0.006;

/// Minimum record length for a supported point format.
fn base_record_len(format: u8) -> Option<usize> {
    match format {
        7 => Some(36),
        8 => Some(38),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LasHeaderInfo {
    pub version: (u8, u8),
    pub point_format: u8,
    pub scale: [f64; 3],
    pub offset: [f64; 3],
    pub point_count: u64,
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl LasHeaderInfo {
    /// A format 7 header for `cloud` with the given scale, offset at the
    /// cloud's minimum corner truncated to whole meters.
    pub fn for_cloud(cloud: &PointCloud, scale: f64) -> Self {
        let (min, max) = cloud
            .bounds()
            .map(|(lo, hi)| ([lo.x, lo.y, lo.z], [hi.x, hi.y, hi.z]))
            .unwrap_or(([0.0; 3], [0.0; 3]));
        LasHeaderInfo {
            version: (1, 4),
            point_format: 7,
            scale: [scale; 3],
            offset: min.map(f64::floor),
            point_count: cloud.len() as u64,
            min,
            max,
        }
    }
}

/// Bidirectional map between LAS classification bytes and [`ClassId`].
///
/// Text form is one `byte = ClassName` line per entry. The first byte listed
/// for a class is used when writing it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LasClassMap {
    to_class: Vec<Option<ClassId>>,
    to_byte: [Option<u8>; 7],
}

impl Default for LasClassMap {
    fn default() -> Self {
        let mut map = LasClassMap::empty();
        for c in ClassId::ALL {
            map.insert(c.as_u8(), c);
        }
        map
    }
}

impl LasClassMap {
    fn empty() -> Self {
        LasClassMap {
            to_class: vec![None; 256],
            to_byte: [None; 7],
        }
    }

    fn insert(&mut self, byte: u8, class: ClassId) {
        self.to_class[byte as usize] = Some(class);
        self.to_byte[class as usize].get_or_insert(byte);
    }

    /// A map with no entries: decoding keeps only the raw classification bytes.
    pub fn raw() -> Self {
        LasClassMap::empty()
    }

    pub fn is_empty(&self) -> bool {
        self.to_class.iter().all(Option::is_none)
    }

    pub fn class_of(&self, byte: u8) -> Option<ClassId> {
        self.to_class[byte as usize]
    }

    pub fn byte_of(&self, class: ClassId) -> Option<u8> {
        self.to_byte[class as usize]
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = LasClassMap::empty();
        let mut seen = [false; 256];
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let parse_err = |reason: String| Error::Parse { line, reason };
            let (byte, class) = content
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected `byte = class`, got `{content}`")))?;
            let byte: u8 = byte
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("`{}` is not a byte value", byte.trim())))?;
            let class: ClassId = class.trim().parse().map_err(|e: Error| parse_err(e.to_string()))?;
            if std::mem::replace(&mut seen[byte as usize], true) {
                return Err(parse_err(format!("byte {byte} is mapped more than once")));
            }
            map.insert(byte, class);
        }
        Ok(map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        LasClassMap::parse(&text)
    }
}

/// Everything decoded from one file, including the raw classification bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct LasFile {
    pub cloud: PointCloud,
    pub header: LasHeaderInfo,
    pub classification: Vec<u8>,
}

pub fn read_las(path: impl AsRef<Path>) -> Result<(PointCloud, LasHeaderInfo)> {
    let file = read_las_with(path, &LasClassMap::default())?;
    Ok((file.cloud, file.header))
}

pub fn read_las_with(path: impl AsRef<Path>, class_map: &LasClassMap) -> Result<LasFile> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_las(&bytes, class_map)
}

pub fn decode_las(bytes: &[u8], class_map: &LasClassMap) -> Result<LasFile> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Corruption {
            offset: bytes.len() as u64,
            reason: format!("file is {} bytes, shorter than a LAS 1.4 header", bytes.len()),
        });
    }
    if &bytes[0..4] != b"LASF" {
        return Err(Error::Format("missing LASF signature".into()));
    }
    let version = (bytes[24], bytes[25]);
    if version != (1, 4) {
        return Err(Error::Format(format!(
            "LAS version {}.{} is not supported, only 1.4",
            version.0, version.1
        )));
    }
    let header_size = LE::read_u16(&bytes[94..96]) as usize;
    let data_offset = LE::read_u32(&bytes[96..100]) as usize;
    let format_byte = bytes[104];
    if format_byte & 0x80 != 0 {
        return Err(Error::Format("compressed (LAZ) point data is not supported".into()));
    }
    let point_format = format_byte & 0x3f;
    let min_len = base_record_len(point_format).ok_or_else(|| {
        Error::Format(format!(
            "point record format {point_format} is not supported, only 7 and 8"
        ))
    })?;
    let record_len = LE::read_u16(&bytes[105..107]) as usize;
    if record_len < min_len {
        return Err(Error::Format(format!(
            "record length {record_len} is too short for point format {point_format}"
        )));
    }
    if header_size < HEADER_SIZE || data_offset < header_size {
        return Err(Error::Corruption {
            offset: 94,
            reason: format!("header size {header_size} / point offset {data_offset} are inconsistent"),
        });
    }

    let read3 = |at: usize| [LE::read_f64(&bytes[at..]), LE::read_f64(&bytes[at + 8..]), LE::read_f64(&bytes[at + 16..])];
    let scale = read3(131);
    let offset = read3(155);
    let max = [LE::read_f64(&bytes[179..]), LE::read_f64(&bytes[195..]), LE::read_f64(&bytes[211..])];
    let min = [LE::read_f64(&bytes[187..]), LE::read_f64(&bytes[203..]), LE::read_f64(&bytes[219..])];
    let num_evlrs = LE::read_u32(&bytes[243..247]);
    let mut point_count = LE::read_u64(&bytes[247..255]);
    if point_count == 0 {
        point_count = LE::read_u32(&bytes[107..111]) as u64;
    }

    let available = bytes.len().saturating_sub(data_offset);
    let needed = (point_count as usize)
        .checked_mul(record_len)
        .ok_or_else(|| Error::Corruption {
            offset: 247,
            reason: format!("point count {point_count} overflows"),
        })?;
    if available < needed {
        let complete = available / record_len;
        return Err(Error::Corruption {
            offset: (data_offset + complete * record_len) as u64,
            reason: format!(
                "point block truncated: header declares {point_count} records, only {complete} complete"
            ),
        });
    }
    if num_evlrs == 0 && available > needed {
        return Err(Error::Corruption {
            offset: (data_offset + needed) as u64,
            reason: format!(
                "header declares {point_count} records but the point block holds {} bytes ({} records)",
                available,
                available / record_len
            ),
        });
    }

    let n = point_count as usize;
    let mut cloud = PointCloud::from_xyz(vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut intensity = Vec::with_capacity(n);
    let mut classification = Vec::with_capacity(n);
    for i in 0..n {
        let at = data_offset + i * record_len;
        let rec = &bytes[at..at + record_len];
        cloud.x[i] = LE::read_i32(&rec[0..4]) as f64 * scale[0] + offset[0];
        cloud.y[i] = LE::read_i32(&rec[4..8]) as f64 * scale[1] + offset[1];
        cloud.z[i] = LE::read_i32(&rec[8..12]) as f64 * scale[2] + offset[2];
        intensity.push(LE::read_u16(&rec[12..14]));
        let ret = rec[14] & 0x0f;
        let num = rec[14] >> 4;
        if ret == 0 || num < ret {
            return Err(Error::Corruption {
                offset: (at + 14) as u64,
                reason: format!("point {i} has return {ret} of {num}"),
            });
        }
        cloud.return_number[i] = ret;
        cloud.num_returns[i] = num;
        cloud.scan_direction[i] = rec[15] & 0x40 != 0;
        classification.push(rec[16]);
        cloud.scan_angle[i] = LE::read_i16(&rec[18..20]) as f64 * SCAN_ANGLE_UNIT;
        cloud.gps_time[i] = LE::read_f64(&rec[22..30]);
        cloud.red[i] = LE::read_u16(&rec[30..32]);
        cloud.green[i] = LE::read_u16(&rec[32..34]);
        cloud.blue[i] = LE::read_u16(&rec[34..36]);
    }
    cloud.intensity = Some(intensity);

    if !class_map.is_empty() && classification.iter().any(|&b| b != 0) {
        let labels = classification
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                class_map.class_of(b).ok_or_else(|| {
                    Error::Validation(format!("classification byte {b} at point {i} has no class mapping"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        cloud.labels = Some(labels);
    }

    Ok(LasFile {
        cloud,
        header: LasHeaderInfo {
            version,
            point_format,
            scale,
            offset,
            point_count,
            min,
            max,
        },
        classification,
    })
}

pub fn write_las(cloud: &PointCloud, header: &LasHeaderInfo, path: impl AsRef<Path>) -> Result<()> {
    write_las_with(cloud, header, &LasClassMap::default(), path)
}

pub fn write_las_with(
    cloud: &PointCloud,
    header: &LasHeaderInfo,
    class_map: &LasClassMap,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_las(cloud, header, class_map)?;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

fn quantize(value: f64, scale: f64, offset: f64, index: usize, axis: char) -> Result<i32> {
    let raw = ((value - offset) / scale).round();
    if !raw.is_finite() || raw < i32::MIN as f64 || raw > i32::MAX as f64 {
        return Err(Error::CoordinateRange {
            index,
            axis,
            value,
            scale,
            offset,
        });
    }
    Ok(raw as i32)
}

/// Encodes `cloud` as a complete LAS 1.4 file. Point count and bounds in the
/// output come from the cloud; version, format, scale and offset from `header`.
pub fn encode_las(cloud: &PointCloud, header: &LasHeaderInfo, class_map: &LasClassMap) -> Result<Vec<u8>> {
    cloud.validate()?;
    if header.version != (1, 4) {
        return Err(Error::Format(format!(
            "cannot write LAS version {}.{}",
            header.version.0, header.version.1
        )));
    }
    let record_len = base_record_len(header.point_format).ok_or_else(|| {
        Error::Format(format!("cannot write point format {}", header.point_format))
    })?;
    if header.scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::Argument(format!("scale {:?} must be positive", header.scale)));
    }

    let n = cloud.len();
    let [sx, sy, sz] = header.scale;
    let [ox, oy, oz] = header.offset;
    let mut raw = Vec::with_capacity(n);
    for i in 0..n {
        raw.push([
            quantize(cloud.x[i], sx, ox, i, 'x')?,
            quantize(cloud.y[i], sy, oy, i, 'y')?,
            quantize(cloud.z[i], sz, oz, i, 'z')?,
        ]);
    }

    let mut class_bytes = vec![0u8; n];
    if let Some(labels) = &cloud.labels {
        for (i, &label) in labels.iter().enumerate() {
            class_bytes[i] = class_map.byte_of(label).ok_or_else(|| {
                Error::Validation(format!("class {label} at point {i} has no LAS byte in the class map"))
            })?;
        }
    }

    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for r in &raw {
        let decoded = [r[0] as f64 * sx + ox, r[1] as f64 * sy + oy, r[2] as f64 * sz + oz];
        for a in 0..3 {
            min[a] = min[a].min(decoded[a]);
            max[a] = max[a].max(decoded[a]);
        }
    }
    if n == 0 {
        min = [0.0; 3];
        max = [0.0; 3];
    }

    let mut by_return = [0u64; 15];
    for (i, &r) in cloud.return_number.iter().enumerate() {
        let num = cloud.num_returns[i];
        if r == 0 || r > 15 || num > 15 || num < r {
            return Err(Error::Validation(format!(
                "point {i} has return {r} of {num}; LAS needs 1 <= return <= returns <= 15"
            )));
        }
        by_return[r as usize - 1] += 1;
    }

    let mut out = vec![0u8; HEADER_SIZE + n * record_len];
    let h = &mut out[..HEADER_SIZE];
    h[0..4].copy_from_slice(b"LASF");
    // global encoding: GPS standard time, WKT CRS
    LE::write_u16(&mut h[6..8], 0x11);
    h[24] = 1;
    h[25] = 4;
    write_padded(&mut h[26..58], b"urbanseg");
    write_padded(&mut h[58..90], concat!("urbanseg ", env!("CARGO_PKG_VERSION")).as_bytes());
    LE::write_u16(&mut h[94..96], HEADER_SIZE as u16);
    LE::write_u32(&mut h[96..100], HEADER_SIZE as u32);
    h[104] = header.point_format;
    LE::write_u16(&mut h[105..107], record_len as u16);
    for a in 0..3 {
        LE::write_f64(&mut h[131 + 8 * a..], header.scale[a]);
        LE::write_f64(&mut h[155 + 8 * a..], header.offset[a]);
        LE::write_f64(&mut h[179 + 16 * a..], max[a]);
        LE::write_f64(&mut h[187 + 16 * a..], min[a]);
    }
    LE::write_u64(&mut h[247..255], n as u64);
    for (k, count) in by_return.iter().enumerate() {
        LE::write_u64(&mut h[255 + 8 * k..], *count);
    }

    let intensity = cloud.intensity.as_deref();
    for i in 0..n {
        let at = HEADER_SIZE + i * record_len;
        let rec = &mut out[at..at + record_len];
        LE::write_i32(&mut rec[0..4], raw[i][0]);
        LE::write_i32(&mut rec[4..8], raw[i][1]);
        LE::write_i32(&mut rec[8..12], raw[i][2]);
        LE::write_u16(&mut rec[12..14], intensity.map_or(0, |v| v[i]));
        rec[14] = cloud.return_number[i] | (cloud.num_returns[i] << 4);
        rec[15] = if cloud.scan_direction[i] { 0x40 } else { 0 };
        rec[16] = class_bytes[i];
        let angle = (cloud.scan_angle[i] / SCAN_ANGLE_UNIT).round();
        if !(i16::MIN as f64..=i16::MAX as f64).contains(&angle) {
            return Err(Error::Validation(format!(
                "scan angle {} at point {i} is out of range",
                cloud.scan_angle[i]
            )));
        }
        LE::write_i16(&mut rec[18..20], angle as i16);
        LE::write_f64(&mut rec[22..30], cloud.gps_time[i]);
        LE::write_u16(&mut rec[30..32], cloud.red[i]);
        LE::write_u16(&mut rec[32..34], cloud.green[i]);
        LE::write_u16(&mut rec[34..36], cloud.blue[i]);
    }
    Ok(out)
}

fn write_padded(dst: &mut [u8], src: &[u8]) {
    let len = src.len().min(dst.len());
    dst[..len].copy_from_slice(&src[..len]);
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Builds a three point format 7 file byte by byte, without the encoder.
    fn hand_encoded_fixture() -> Vec<u8> {
        let mut b = vec![0u8; 375];
        b[0..4].copy_from_slice(b"LASF");
        b[24] = 1;
        b[25] = 4;
        b[94..96].copy_from_slice(&375u16.to_le_bytes());
        b[96..100].copy_from_slice(&375u32.to_le_bytes());
        b[104] = 7;
        b[105..107].copy_from_slice(&36u16.to_le_bytes());
        for a in 0..3 {
            b[131 + 8 * a..139 + 8 * a].copy_from_slice(&0.01f64.to_le_bytes());
        }
        b[155..163].copy_from_slice(&1000.0f64.to_le_bytes());
        b[163..171].copy_from_slice(&2000.0f64.to_le_bytes());
        b[171..179].copy_from_slice(&0.0f64.to_le_bytes());
        b[247..255].copy_from_slice(&3u64.to_le_bytes());

        struct P {
            xyz: [i32; 3],
            intensity: u16,
            returns: u8,
            flags: u8,
            class: u8,
            angle: i16,
            gps: f64,
            rgb: [u16; 3],
        }
        let points = [
            P { xyz: [100, 200, 300], intensity: 10, returns: 0x11, flags: 0x00, class: 1, angle: 500, gps: 1.5, rgb: [65535, 0, 0] },
            P { xyz: [-100, 0, 1234], intensity: 20, returns: 0x32, flags: 0x40, class: 4, angle: -500, gps: 2.25, rgb: [0, 65535, 0] },
            P { xyz: [0, -7, 0], intensity: 65535, returns: 0x33, flags: 0x00, class: 6, angle: 0, gps: 1e6, rgb: [1, 2, 3] },
        ];
        for p in &points {
            let mut rec = Vec::new();
            for v in p.xyz {
                rec.extend_from_slice(&v.to_le_bytes());
            }
            rec.extend_from_slice(&p.intensity.to_le_bytes());
            rec.push(p.returns);
            rec.push(p.flags);
            rec.push(p.class);
            rec.push(0); // user data
            rec.extend_from_slice(&p.angle.to_le_bytes());
            rec.extend_from_slice(&0u16.to_le_bytes()); // point source id
            rec.extend_from_slice(&p.gps.to_le_bytes());
            for c in p.rgb {
                rec.extend_from_slice(&c.to_le_bytes());
            }
            assert_eq!(rec.len(), 36);
            b.extend_from_slice(&rec);
        }
        b
    }

    #[test]
    fn hand_encoded_fixture_decodes() {
        let file = decode_las(&hand_encoded_fixture(), &LasClassMap::default()).unwrap();
        let c = &file.cloud;
        assert_eq!(c.len(), 3);
        assert_eq!(c.x, vec![100.0 * 0.01 + 1000.0, -100.0 * 0.01 + 1000.0, 1000.0]);
        assert_eq!(c.y, vec![200.0 * 0.01 + 2000.0, 2000.0, -7.0 * 0.01 + 2000.0]);
        assert_eq!(c.z, vec![300.0 * 0.01, 1234.0 * 0.01, 0.0]);
        assert_eq!(c.intensity.as_deref(), Some(&[10, 20, 65535][..]));
        assert_eq!(c.return_number, vec![1, 2, 3]);
        assert_eq!(c.num_returns, vec![1, 3, 3]);
        assert_eq!(c.scan_direction, vec![false, true, false]);
        assert_eq!(c.scan_angle, vec![500.0 * 0.006, -500.0 * 0.006, 0.0]);
        assert_eq!(c.gps_time, vec![1.5, 2.25, 1e6]);
        assert_eq!(c.red, vec![65535, 0, 1]);
        assert_eq!(c.green, vec![0, 65535, 2]);
        assert_eq!(c.blue, vec![0, 0, 3]);
        assert_eq!(
            c.labels.as_deref(),
            Some(&[ClassId::Soil, ClassId::Building, ClassId::Water][..])
        );
        assert_eq!(file.header.point_count, 3);
        assert_eq!(file.header.point_format, 7);
    }

    #[test]
    fn encoder_reproduces_fixture_records() {
        let fixture = hand_encoded_fixture();
        let file = decode_las(&fixture, &LasClassMap::default()).unwrap();
        let again = encode_las(&file.cloud, &file.header, &LasClassMap::default()).unwrap();
        assert_eq!(&again[375..], &fixture[375..]);
    }

    #[test]
    fn empty_cloud_round_trips() {
        let cloud = PointCloud::from_xyz(vec![], vec![], vec![]);
        let header = LasHeaderInfo::for_cloud(&cloud, 0.001);
        let bytes = encode_las(&cloud, &header, &LasClassMap::default()).unwrap();
        assert_eq!(bytes.len(), HEADER_SIZE);
        let file = decode_las(&bytes, &LasClassMap::default()).unwrap();
        assert_eq!(file.cloud.len(), 0);
        assert_eq!(file.header.point_count, 0);
    }

    #[test]
    fn version_1_2_is_rejected() {
        let mut b = hand_encoded_fixture();
        b[25] = 2;
        assert!(matches!(decode_las(&b, &LasClassMap::default()), Err(Error::Format(_))));
    }

    #[test]
    fn unsupported_point_format_is_rejected() {
        let mut b = hand_encoded_fixture();
        b[104] = 6;
        assert!(matches!(decode_las(&b, &LasClassMap::default()), Err(Error::Format(_))));
        b[104] = 0x87;
        assert!(matches!(decode_las(&b, &LasClassMap::default()), Err(Error::Format(_))));
    }

    #[test]
    fn truncation_names_offset_of_first_incomplete_record() {
        let b = hand_encoded_fixture();
        let cut = &b[..375 + 36 + 20];
        match decode_las(cut, &LasClassMap::default()) {
            Err(Error::Corruption { offset, .. }) => assert_eq!(offset, 375 + 36),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn count_mismatch_is_corruption() {
        let mut b = hand_encoded_fixture();
        b[247..255].copy_from_slice(&2u64.to_le_bytes());
        assert!(matches!(
            decode_las(&b, &LasClassMap::default()),
            Err(Error::Corruption { offset, .. }) if offset == 375 + 72
        ));
    }

    #[test]
    fn far_coordinate_is_a_range_error() {
        let mut cloud = PointCloud::from_xyz(vec![0.0, 1e12], vec![0.0; 2], vec![0.0; 2]);
        cloud.intensity = Some(vec![0; 2]);
        let header = LasHeaderInfo {
            offset: [0.0; 3],
            ..LasHeaderInfo::for_cloud(&cloud, 0.001)
        };
        assert!(matches!(
            encode_las(&cloud, &header, &LasClassMap::default()),
            Err(Error::CoordinateRange { index: 1, axis: 'x', .. })
        ));
    }

    #[test]
    fn custom_class_map_parses_and_inverts() {
        let map = LasClassMap::parse("2 = Terrain\n5 = Vegetation\n6 = Building\n9 = Water\n1 = Unassigned\n0 = unassigned").unwrap();
        assert_eq!(map.class_of(5), Some(ClassId::Vegetation));
        assert_eq!(map.byte_of(ClassId::Water), Some(9));
        assert_eq!(map.byte_of(ClassId::Unassigned), Some(1));
        assert_eq!(map.class_of(3), None);
        assert!(LasClassMap::parse("2 = Terrain\n2 = Soil").is_err());
    }
}
