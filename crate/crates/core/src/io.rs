//! File formats: POLR float planes and flat `key=value` configs.
//!
//! A POLR file is the magic line `POLR1`, four ASCII header lines
//! (`width W`, `height H`, `channels C`, `names a,b,c`), a blank line, then
//! `C` row-major `f32` little-endian planes.

use crate::error::{Error, Result};
use crate::image::{FourAngleImage, Density, Plane, RgbImage, StokesImage};
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

pub const POLR_MAGIC: &str = "POLR1";

/// A set of equally sized named planes.
#[derive(Debug, Clone, PartialEq)]
pub struct Polr {
    pub names: Vec<String>,
    pub planes: Vec<Plane>,
}

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

impl Polr {
    pub fn new(names: Vec<String>, planes: Vec<Plane>) -> Result<Self> {
        if names.is_empty() || names.len() != planes.len() {
            return format_err(format!("{} names for {} planes", names.len(), planes.len()));
        }
        let dims = planes[0].dims();
        if planes.iter().any(|p| p.dims() != dims) {
            return format_err("planes differ in size");
        }
        if names.iter().any(|n| n.is_empty() || n.contains(',') || n.contains(char::is_whitespace)) {
            return format_err("channel names must be non-empty without commas or whitespace");
        }
        Ok(Polr { names, planes })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.planes[0].dims()
    }

    pub fn plane(&self, name: &str) -> Option<&Plane> {
        self.names.iter().position(|n| n == name).map(|i| &self.planes[i])
    }

    fn take(&self, name: &str) -> Result<Plane> {
        match self.plane(name) {
            Some(p) => Ok(p.clone()),
            None => format_err(format!("missing channel {name:?}")),
        }
    }

    pub fn from_rgb(rgb: &RgbImage) -> Self {
        Polr {
            names: vec!["r".into(), "g".into(), "b".into()],
            planes: vec![rgb.r.clone(), rgb.g.clone(), rgb.b.clone()],
        }
    }

    pub fn from_stokes(s: &StokesImage) -> Self {
        Polr {
            names: vec!["s0".into(), "s1".into(), "s2".into()],
            planes: vec![s.s0.clone(), s.s1.clone(), s.s2.clone()],
        }
    }

    pub fn from_angles(a: &FourAngleImage) -> Self {
        Polr {
            names: vec!["i0".into(), "i45".into(), "i90".into(), "i135".into()],
            planes: a.planes().into_iter().cloned().collect(),
        }
    }

    /// Concatenates the channels of several files of equal size.
    pub fn merge(parts: &[Polr]) -> Result<Self> {
        let mut names = Vec::new();
        let mut planes = Vec::new();
        for p in parts {
            names.extend(p.names.iter().cloned());
            planes.extend(p.planes.iter().cloned());
        }
        if names.iter().enumerate().any(|(i, n)| names[..i].contains(n)) {
            return format_err("duplicate channel names");
        }
        Polr::new(names, planes)
    }

    pub fn rgb(&self) -> Result<RgbImage> {
        Ok(RgbImage {
            r: self.take("r")?,
            g: self.take("g")?,
            b: self.take("b")?,
        })
    }

    pub fn stokes(&self) -> Result<StokesImage> {
        Ok(StokesImage {
            s0: self.take("s0")?,
            s1: self.take("s1")?,
            s2: self.take("s2")?,
        })
    }

    pub fn angles(&self) -> Result<FourAngleImage> {
        FourAngleImage::new(self.take("i0")?, self.take("i45")?, self.take("i90")?, self.take("i135")?, Density::Dense)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let (width, height) = self.dims();
        write!(
            w,
            "{POLR_MAGIC}\nwidth {width}\nheight {height}\nchannels {}\nnames {}\n\n",
            self.planes.len(),
            self.names.join(",")
        )?;
        let mut buf = Vec::with_capacity(width * height * 4);
        for p in &self.planes {
            buf.clear();
            for &v in p.data() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        let mut next_line = |r: &mut BufReader<R>| -> Result<String> {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return format_err("truncated header");
            }
            Ok(line.trim_end_matches('\n').to_string())
        };
        if next_line(&mut r)? != POLR_MAGIC {
            return format_err("bad magic");
        }
        let mut field = |r: &mut BufReader<R>, key: &str| -> Result<String> {
            let l = next_line(r)?;
            match l.split_once(' ') {
                Some((k, v)) if k == key => Ok(v.to_string()),
                _ => format_err(format!("expected {key:?} header, got {l:?}")),
            }
        };
        let num = |s: String, key: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::Format(format!("bad {key} {s:?}")))
        };
        let width = num(field(&mut r, "width")?, "width")?;
        let height = num(field(&mut r, "height")?, "height")?;
        let channels = num(field(&mut r, "channels")?, "channels")?;
        let names: Vec<String> = field(&mut r, "names")?.split(',').map(str::to_string).collect();
        if !next_line(&mut r)?.is_empty() {
            return format_err("missing blank line after header");
        }
        if names.len() != channels {
            return format_err(format!("{channels} channels but {} names", names.len()));
        }
        if width == 0 || height == 0 {
            return format_err("empty image");
        }
        let n = width.checked_mul(height).ok_or_else(|| Error::Format("size overflow".into()))?;
        let mut planes = Vec::with_capacity(channels);
        let mut bytes = vec![0u8; n * 4];
        for _ in 0..channels {
            r.read_exact(&mut bytes).map_err(|_| Error::Format("truncated plane data".into()))?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            planes.push(Plane::from_vec(width, height, data)?);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return format_err("trailing bytes after plane data");
        }
        Polr::new(names, planes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Polr::read_from(fs::File::open(path)?)
    }
}

/// Flat `key=value` configuration. Blank lines and lines starting with `#`
/// are ignored. Later assignments win, so flag overrides are applied with
/// [`Config::set`] after loading the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let l = raw.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let Some((k, v)) = l.split_once('=') else {
                return format_err(format!("line {}: expected key=value, got {l:?}", i + 1));
            };
            let k = k.trim();
            if k.is_empty() {
                return format_err(format!("line {}: empty key", i + 1));
            }
            values.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Config { values })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Config::parse(&fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Parsed value, `None` when absent, an error when present but malformed.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Param(format!("bad value for {key}: {v:?}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    /// Serializes in key order, so equal configs give equal text.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}
