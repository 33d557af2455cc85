//! Binary frame files, PGM/PPM previews, and text-format field loaders.
//!
//! Frames: magic "WJKO", format version u16, domain kind u8 (0 = grid,
//! 1 = mesh), two u32 dimensions, float64 payload, all little-endian.
//! Grid frames store the full width*height raster in row-major cell order
//! with zeros at inactive cells, so a frame renders without the mask file.

use std::fs;
use std::path::Path;

use crate::domain::{DomainSpec, GridDomain};
use crate::error::{Error, Result};
use crate::laplacian::AnisotropyField;

pub const FRAME_MAGIC: [u8; 4] = *b"WJKO";
pub const FRAME_VERSION: u16 = 1;

const KIND_GRID: u8 = 0;
const KIND_MESH: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameLayout {
    Grid { width: u32, height: u32 },
    Mesh { nodes: u32 },
}

impl FrameLayout {
    pub fn for_domain(domain: &DomainSpec) -> FrameLayout {
        match domain {
            DomainSpec::Grid(g) => FrameLayout::Grid {
                width: g.width as u32,
                height: g.height as u32,
            },
            DomainSpec::Mesh(m) => FrameLayout::Mesh {
                nodes: m.node_count() as u32,
            },
        }
    }

    /// Number of payload values a frame with this layout carries.
    pub fn value_count(&self) -> usize {
        match self {
            FrameLayout::Grid { width, height } => *width as usize * *height as usize,
            FrameLayout::Mesh { nodes } => *nodes as usize,
        }
    }

    fn kind(&self) -> u8 {
        match self {
            FrameLayout::Grid { .. } => KIND_GRID,
            FrameLayout::Mesh { .. } => KIND_MESH,
        }
    }

    fn dims(&self) -> (u32, u32) {
        match self {
            FrameLayout::Grid { width, height } => (*width, *height),
            FrameLayout::Mesh { nodes } => (*nodes, 0),
        }
    }
}

/// Spread node values onto the full cell raster, zero where inactive.
pub fn expand_to_raster(grid: &GridDomain, nodes: &[f64]) -> Vec<f64> {
    let mut raster = vec![0.0; grid.width * grid.height];
    for (node, &v) in nodes.iter().enumerate() {
        let (x, y) = grid.cell_of(node);
        raster[y * grid.width + x] = v;
    }
    raster
}

/// Collect the active-cell values of a full raster in node order.
pub fn restrict_to_nodes(grid: &GridDomain, raster: &[f64]) -> Vec<f64> {
    (0..grid.node_count())
        .map(|node| {
            let (x, y) = grid.cell_of(node);
            raster[y * grid.width + x]
        })
        .collect()
}

pub fn encode_frame(layout: FrameLayout, values: &[f64]) -> Result<Vec<u8>> {
    if values.len() != layout.value_count() {
        return Err(Error::Format {
            path: "<frame>".into(),
            message: format!(
                "layout expects {} values, got {}",
                layout.value_count(),
                values.len()
            ),
        });
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Format {
            path: "<frame>".into(),
            message: format!("non-finite value {bad} in frame payload"),
        });
    }
    let (w, h) = layout.dims();
    let mut out = Vec::with_capacity(15 + 8 * values.len());
    out.extend_from_slice(&FRAME_MAGIC);
    out.extend_from_slice(&FRAME_VERSION.to_le_bytes());
    out.push(layout.kind());
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_frame(bytes: &[u8], label: &str) -> Result<(FrameLayout, Vec<f64>)> {
    let fail = |message: String| Error::Format {
        path: label.to_string(),
        message,
    };
    if bytes.len() < 15 {
        return Err(fail(format!("truncated header: {} bytes", bytes.len())));
    }
    if bytes[0..4] != FRAME_MAGIC {
        return Err(fail("bad magic, not a frame file".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FRAME_VERSION {
        return Err(fail(format!(
            "unsupported format version {version}, expected {FRAME_VERSION}"
        )));
    }
    let kind = bytes[6];
    let w = u32::from_le_bytes(bytes[7..11].try_into().unwrap());
    let h = u32::from_le_bytes(bytes[11..15].try_into().unwrap());
    let layout = match kind {
        KIND_GRID => FrameLayout::Grid {
            width: w,
            height: h,
        },
        KIND_MESH => {
            if h != 0 {
                return Err(fail(format!("mesh layout with nonzero second dim {h}")));
            }
            FrameLayout::Mesh { nodes: w }
        }
        other => return Err(fail(format!("unknown domain kind {other}"))),
    };
    let expected = layout.value_count();
    let payload = &bytes[15..];
    if payload.len() != expected * 8 {
        return Err(fail(format!(
            "payload holds {} bytes, header promises {} values",
            payload.len(),
            expected
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(fail(format!("non-finite value {bad} in frame payload")));
    }
    Ok((layout, values))
}

pub fn write_frame(path: &Path, layout: FrameLayout, values: &[f64]) -> Result<()> {
    let bytes = encode_frame(layout, values).map_err(|e| match e {
        Error::Format { message, .. } => Error::Format {
            path: path.display().to_string(),
            message,
        },
        other => other,
    })?;
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_frame(path: &Path) -> Result<(FrameLayout, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_frame(&bytes, &path.display().to_string())
}

/// 8-bit binary PGM with max-normalized pixels: floor(255 * v / max).
pub fn encode_pgm(width: usize, height: usize, raster: &[f64]) -> Result<Vec<u8>> {
    if raster.len() != width * height {
        return Err(Error::Format {
            path: "<pgm>".into(),
            message: format!(
                "raster holds {} values for {width}x{height}",
                raster.len()
            ),
        });
    }
    let max = raster.iter().cloned().fold(0.0, f64::max);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(raster.iter().map(|&v| {
        if max > 0.0 && v > 0.0 {
            ((255.0 * v / max).floor() as i64).clamp(0, 255) as u8
        } else {
            0
        }
    }));
    Ok(out)
}

pub fn write_pgm(path: &Path, width: usize, height: usize, raster: &[f64]) -> Result<()> {
    let bytes = encode_pgm(width, height, raster)?;
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Binary PPM carrying two jointly max-normalized densities in the red and
/// green channels.
pub fn encode_ppm(width: usize, height: usize, red: &[f64], green: &[f64]) -> Result<Vec<u8>> {
    if red.len() != width * height || green.len() != red.len() {
        return Err(Error::Format {
            path: "<ppm>".into(),
            message: format!(
                "channel lengths {} and {} for {width}x{height}",
                red.len(),
                green.len()
            ),
        });
    }
    let max = red
        .iter()
        .chain(green.iter())
        .cloned()
        .fold(0.0, f64::max);
    let scale = |v: f64| -> u8 {
        if max > 0.0 && v > 0.0 {
            ((255.0 * v / max).floor() as i64).clamp(0, 255) as u8
        } else {
            0
        }
    };
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    for (&r, &g) in red.iter().zip(green) {
        out.push(scale(r));
        out.push(scale(g));
        out.push(0);
    }
    Ok(out)
}

pub fn write_ppm(
    path: &Path,
    width: usize,
    height: usize,
    red: &[f64],
    green: &[f64],
) -> Result<()> {
    let bytes = encode_ppm(width, height, red, green)?;
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parse a binary (P5) PGM; returns width, height, and samples scaled to
/// [0, 1] by the declared maxval. 16-bit samples are big-endian per the
/// format.
pub fn decode_pgm(bytes: &[u8], label: &str) -> Result<(usize, usize, Vec<f64>)> {
    let fail = |message: String| Error::Format {
        path: label.to_string(),
        message,
    };
    let mut pos = 0usize;
    let token = |pos: &mut usize| -> Option<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            } else {
                break;
            }
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos > start {
            Some(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
        } else {
            None
        }
    };
    let magic = token(&mut pos).ok_or_else(|| fail("empty file".into()))?;
    if magic != "P5" {
        return Err(fail(format!("expected binary PGM magic P5, got {magic}")));
    }
    let dim = |name: &str, pos: &mut usize| -> Result<usize> {
        token(pos)
            .ok_or_else(|| fail(format!("missing {name}")))?
            .parse::<usize>()
            .map_err(|e| fail(format!("bad {name}: {e}")))
    };
    let width = dim("width", &mut pos)?;
    let height = dim("height", &mut pos)?;
    let maxval = dim("maxval", &mut pos)?;
    if width == 0 || height == 0 {
        return Err(fail(format!("degenerate dimensions {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(fail(format!("maxval {maxval} outside [1, 65535]")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(fail("missing separator before raster".into()));
    }
    pos += 1;
    let raster = &bytes[pos..];
    let count = width * height;
    let wide = maxval > 255;
    let needed = count * if wide { 2 } else { 1 };
    if raster.len() < needed {
        return Err(fail(format!(
            "raster holds {} bytes, need {needed} for {width}x{height}",
            raster.len()
        )));
    }
    let values = if wide {
        raster
            .chunks_exact(2)
            .take(count)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / maxval as f64)
            .collect()
    } else {
        raster
            .iter()
            .take(count)
            .map(|&b| b as f64 / maxval as f64)
            .collect()
    };
    Ok((width, height, values))
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_pgm(&bytes, &path.display().to_string())
}

/// Raw little-endian float64 field of a known length.
pub fn decode_raw_field(bytes: &[u8], expected: usize, label: &str) -> Result<Vec<f64>> {
    if bytes.len() != expected * 8 {
        return Err(Error::Format {
            path: label.to_string(),
            message: format!(
                "file holds {} bytes, expected {} float64 values ({} bytes)",
                bytes.len(),
                expected,
                expected * 8
            ),
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Format {
            path: label.to_string(),
            message: format!("non-finite value {bad}"),
        });
    }
    Ok(values)
}

pub fn read_raw_field(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_raw_field(&bytes, expected, &path.display().to_string())
}

/// Per-cell diffusion tensors from CSV lines `cell_x,cell_y,txx,txy,tyy`.
/// Blank lines and `#` comments are skipped; one optional literal header
/// line is allowed. Every active cell must appear exactly once.
pub fn parse_anisotropy_csv(
    text: &str,
    label: &str,
    grid: &GridDomain,
) -> Result<AnisotropyField> {
    let n = grid.node_count();
    let mut txx = vec![f64::NAN; n];
    let mut txy = vec![f64::NAN; n];
    let mut tyy = vec![f64::NAN; n];
    let mut seen = vec![false; n];
    let fail = |line: usize, message: String| Error::Parse {
        path: label.to_string(),
        line,
        message,
    };
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line == "cell_x,cell_y,txx,txy,tyy" {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(fail(
                line_no,
                format!("expected 5 comma-separated fields, got {}", fields.len()),
            ));
        }
        let cell_x: usize = fields[0]
            .parse()
            .map_err(|e| fail(line_no, format!("bad cell_x {:?}: {e}", fields[0])))?;
        let cell_y: usize = fields[1]
            .parse()
            .map_err(|e| fail(line_no, format!("bad cell_y {:?}: {e}", fields[1])))?;
        let mut comps = [0.0f64; 3];
        for (k, name) in ["txx", "txy", "tyy"].iter().enumerate() {
            comps[k] = fields[k + 2]
                .parse()
                .map_err(|e| fail(line_no, format!("bad {name} {:?}: {e}", fields[k + 2])))?;
        }
        let node = grid.index_of(cell_x, cell_y).ok_or_else(|| {
            fail(
                line_no,
                format!("cell ({cell_x}, {cell_y}) is outside the grid or masked off"),
            )
        })?;
        if seen[node] {
            return Err(fail(
                line_no,
                format!("duplicate tensor for cell ({cell_x}, {cell_y})"),
            ));
        }
        let (a, b, c) = (comps[0], comps[1], comps[2]);
        if !(a.is_finite() && b.is_finite() && c.is_finite())
            || a <= 0.0
            || c <= 0.0
            || a * c - b * b <= 0.0
        {
            return Err(fail(
                line_no,
                format!("tensor ({a}, {b}, {c}) is not positive definite"),
            ));
        }
        seen[node] = true;
        txx[node] = a;
        txy[node] = b;
        tyy[node] = c;
    }
    let missing = seen.iter().filter(|&&s| !s).count();
    if missing > 0 {
        let first = seen.iter().position(|&s| !s).unwrap();
        let (x, y) = grid.cell_of(first);
        return Err(Error::Parse {
            path: label.to_string(),
            line: text.lines().count() + 1,
            message: format!(
                "{missing} active cells have no tensor, first missing is ({x}, {y})"
            ),
        });
    }
    AnisotropyField::new(txx, txy, tyy)
}

pub fn read_anisotropy_csv(path: &Path, grid: &GridDomain) -> Result<AnisotropyField> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_anisotropy_csv(&text, &path.display().to_string(), grid)
}
