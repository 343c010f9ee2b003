//! Netpbm images, feature CSV files and assignment dumps.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::GridGeometry;

/// Grayscale image with intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub geom: GridGeometry,
    pub pixels: Vec<f64>,
}

/// RGB image with channels in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub geom: GridGeometry,
    pub pixels: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Image {
    Gray(GrayImage),
    Rgb(RgbImage),
}

impl Image {
    pub fn geom(&self) -> GridGeometry {
        match self {
            Image::Gray(g) => g.geom,
            Image::Rgb(c) => c.geom,
        }
    }

    /// Per-pixel channel vectors.
    pub fn channels(&self) -> Vec<Vec<f64>> {
        match self {
            Image::Gray(g) => g.pixels.iter().map(|v| vec![*v]).collect(),
            Image::Rgb(c) => c.pixels.iter().map(|p| p.to_vec()).collect(),
        }
    }

    pub fn to_gray(&self) -> GrayImage {
        match self {
            Image::Gray(g) => g.clone(),
            Image::Rgb(c) => GrayImage {
                geom: c.geom,
                pixels: c
                    .pixels
                    .iter()
                    .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                    .collect(),
            },
        }
    }
}

/// Header tokens and the byte offset where raster data starts.
struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: u32,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let mut tokens = Vec::new();
    let mut line = 1;
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                if bytes[pos] == b'\n' {
                    line += 1;
                }
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(line, "truncated image header"));
        }
        tokens.push((String::from_utf8_lossy(&bytes[start..pos]).into_owned(), line));
    }
    // A single whitespace byte separates the header from binary data.
    let data_start = (pos + 1).min(bytes.len());
    let magic = tokens[0].0.as_bytes();
    if magic.len() != 2 || magic[0] != b'P' || !matches!(magic[1], b'2' | b'3' | b'5' | b'6') {
        return Err(Error::parse(1, format!("unsupported magic number {:?}", tokens[0].0)));
    }
    let num = |idx: usize, what: &str| -> Result<usize> {
        let (tok, line) = &tokens[idx];
        tok.parse::<usize>()
            .map_err(|_| Error::parse(*line, format!("invalid {what} {tok:?}")))
    };
    let width = num(1, "width")?;
    let height = num(2, "height")?;
    let maxval = num(3, "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::parse(tokens[3].1, format!("maxval {maxval} out of range")));
    }
    Ok(Header {
        magic: [magic[0], magic[1]],
        width,
        height,
        maxval: maxval as u32,
        data_start,
    })
}

/// Reads PGM (P2/P5) or PPM (P3/P6) data, scaling samples to [0, 1].
pub fn parse_netpbm(bytes: &[u8]) -> Result<Image> {
    let h = parse_header(bytes)?;
    let geom = GridGeometry::new(h.height, h.width)?;
    let channels = if matches!(h.magic[1], b'3' | b'6') { 3 } else { 1 };
    let count = geom.len() * channels;
    let samples: Vec<u32> = match h.magic[1] {
        b'2' | b'3' => {
            let text = String::from_utf8_lossy(&bytes[h.data_start..]);
            let mut out = Vec::with_capacity(count);
            for tok in text
                .lines()
                .flat_map(|l| l.split('#').next().unwrap_or("").split_whitespace())
            {
                out.push(
                    tok.parse::<u32>()
                        .map_err(|_| Error::parse(0, format!("invalid sample {tok:?}")))?,
                );
            }
            out
        }
        _ => {
            let data = &bytes[h.data_start..];
            let wide = h.maxval > 255;
            let need = count * if wide { 2 } else { 1 };
            if data.len() < need {
                return Err(Error::Domain(format!(
                    "raster has {} bytes, expected {need}",
                    data.len()
                )));
            }
            if wide {
                data[..need]
                    .chunks_exact(2)
                    .map(|c| u32::from(u16::from_be_bytes([c[0], c[1]])))
                    .collect()
            } else {
                data[..need].iter().map(|b| u32::from(*b)).collect()
            }
        }
    };
    if samples.len() < count {
        return Err(Error::Domain(format!(
            "image has {} samples, expected {count}",
            samples.len()
        )));
    }
    if let Some(bad) = samples[..count].iter().find(|s| **s > h.maxval) {
        return Err(Error::Domain(format!("sample {bad} exceeds maxval {}", h.maxval)));
    }
    let scale = f64::from(h.maxval);
    let values: Vec<f64> = samples[..count].iter().map(|s| f64::from(*s) / scale).collect();
    Ok(if channels == 1 {
        Image::Gray(GrayImage { geom, pixels: values })
    } else {
        Image::Rgb(RgbImage {
            geom,
            pixels: values.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        })
    })
}

pub fn read_netpbm(path: &Path) -> Result<Image> {
    parse_netpbm(&std::fs::read(path)?)
}

/// Plain PGM (P2) of a label map; labels are the gray levels.
pub fn labels_to_pgm(geom: GridGeometry, labels: &[usize], k: usize) -> String {
    let mut out = format!("P2\n{} {}\n{}\n", geom.width, geom.height, k.max(1));
    for row in labels.chunks(geom.width) {
        let line: Vec<String> = row.iter().map(|l| l.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Palette sidecar: one `label r g b` line per label, colors in [0, 1].
pub fn palette_text(colors: &[Vec<f64>]) -> String {
    let mut out = String::from("# label r g b\n");
    for (k, c) in colors.iter().enumerate() {
        let rgb: Vec<String> = if c.len() >= 3 {
            c[..3].iter().map(|v| format!("{v:.6}")).collect()
        } else {
            let g = format!("{:.6}", c.first().copied().unwrap_or(0.0));
            vec![g.clone(), g.clone(), g]
        };
        let _ = writeln!(out, "{} {}", k + 1, rgb.join(" "));
    }
    out
}

/// Numeric CSV rows; `NaN` (any case) or an empty cell marks a missing
/// value. Lines starting with `#` are skipped, and a first line that does
/// not parse is taken as a header.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Option<Vec<String>>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn columns(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Rows with no missing cell.
    pub fn valid_mask(&self) -> Vec<bool> {
        self.rows
            .iter()
            .map(|r| r.iter().all(|v| !v.is_nan()))
            .collect()
    }
}

fn parse_cell(cell: &str) -> Option<f64> {
    let t = cell.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("nan") {
        return Some(f64::NAN);
    }
    t.parse::<f64>().ok()
}

pub fn parse_csv(text: &str) -> Result<CsvTable> {
    let mut header: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = trimmed.split(',').collect();
        let parsed: Option<Vec<f64>> = cells.iter().map(|c| parse_cell(c)).collect();
        match parsed {
            Some(values) => {
                if let Some(first) = rows.first() {
                    if first.len() != values.len() {
                        return Err(Error::parse(
                            lineno,
                            format!("expected {} columns, found {}", first.len(), values.len()),
                        ));
                    }
                }
                rows.push(values);
            }
            None if rows.is_empty() && header.is_none() => {
                header = Some(cells.iter().map(|c| c.trim().to_string()).collect());
            }
            None => {
                let bad = cells.iter().find(|c| parse_cell(c).is_none()).unwrap_or(&"");
                return Err(Error::parse(lineno, format!("invalid number {:?}", bad.trim())));
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::parse(0, "no data rows"));
    }
    if let Some(h) = &header {
        if h.len() != rows[0].len() {
            return Err(Error::parse(1, "header and data column counts differ"));
        }
    }
    Ok(CsvTable { header, rows })
}

pub fn read_csv(path: &Path) -> Result<CsvTable> {
    parse_csv(&std::fs::read_to_string(path)?)
}

/// CSV of a matrix with 17 significant digits, so values round-trip exactly.
pub fn matrix_to_csv(m: &Array2<f64>, header: Option<&[String]>) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&h.join(","));
        out.push('\n');
    }
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Reads a mask as either a PGM (nonzero = observed) or a CSV column of
/// 0/1 values.
pub fn read_mask(path: &Path, expected: usize) -> Result<Vec<bool>> {
    let bytes = std::fs::read(path)?;
    let mask: Vec<bool> = if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        match parse_netpbm(&bytes)? {
            Image::Gray(g) => g.pixels.iter().map(|v| *v > 0.0).collect(),
            Image::Rgb(_) => unreachable!("gray magic"),
        }
    } else {
        let table = parse_csv(&String::from_utf8_lossy(&bytes))?;
        table.rows.iter().flatten().map(|v| *v != 0.0 && !v.is_nan()).collect()
    };
    if mask.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            found: mask.len(),
        });
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_and_binary_pgm_agree() {
        let plain = b"P2\n# comment\n3 2\n255\n0 51 102\n153 204 255\n";
        let mut raw = b"P5 3 2 255\n".to_vec();
        raw.extend_from_slice(&[0, 51, 102, 153, 204, 255]);
        let a = parse_netpbm(plain).unwrap();
        let b = parse_netpbm(&raw).unwrap();
        assert_eq!(a, b);
        match a {
            Image::Gray(g) => {
                assert_eq!(g.geom, GridGeometry::new(2, 3).unwrap());
                assert!((g.pixels[1] - 0.2).abs() < 1e-15);
            }
            _ => panic!("expected gray"),
        }
    }

    #[test]
    fn ppm_and_sixteen_bit() {
        let p3 = b"P3 1 2 10\n10 0 5\n0 10 0\n";
        match parse_netpbm(p3).unwrap() {
            Image::Rgb(c) => assert_eq!(c.pixels, vec![[1.0, 0.0, 0.5], [0.0, 1.0, 0.0]]),
            _ => panic!("expected rgb"),
        }
        let mut p6 = b"P6 1 1 65535\n".to_vec();
        p6.extend_from_slice(&[0xff, 0xff, 0, 0, 0x80, 0]);
        match parse_netpbm(&p6).unwrap() {
            Image::Rgb(c) => {
                assert_eq!(c.pixels[0][0], 1.0);
                assert!((c.pixels[0][2] - 32768.0 / 65535.0).abs() < 1e-15);
            }
            _ => panic!("expected rgb"),
        }
    }

    #[test]
    fn bad_images() {
        assert!(parse_netpbm(b"P7 1 1 255\n").is_err());
        assert!(parse_netpbm(b"P2 2 2 255\n1 2 3").is_err());
        assert!(parse_netpbm(b"P2 1 1 10\n11").is_err());
        assert!(matches!(parse_netpbm(b"P2 x 1 10\n1"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn csv_rules() {
        let t = parse_csv("a,b\n1,2\n# skip\nNaN,3\n4,\n").unwrap();
        assert_eq!(t.header.as_deref(), Some(&["a".to_string(), "b".to_string()][..]));
        assert_eq!(t.valid_mask(), vec![true, false, false]);
        let err = parse_csv("1,2\n3,4\n5,x\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
        let err = parse_csv("1,2\n3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn matrix_csv_round_trips() {
        let m = ndarray::array![[0.1, 1.0 / 3.0], [1e-300, 2.0f64.sqrt()]];
        let back = parse_csv(&matrix_to_csv(&m, None)).unwrap();
        for (r, row) in back.rows.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert_eq!(*v, m[[r, c]]);
            }
        }
    }

    #[test]
    fn label_pgm_reads_back() {
        let geom = GridGeometry::new(2, 2).unwrap();
        let text = labels_to_pgm(geom, &[1, 2, 3, 1], 3);
        match parse_netpbm(text.as_bytes()).unwrap() {
            Image::Gray(g) => assert_eq!(g.pixels[2], 1.0),
            _ => panic!(),
        }
        assert!(palette_text(&[vec![0.5], vec![1.0, 0.0, 0.0]]).contains("2 1.000000 0.000000 0.000000"));
    }
}
