//! `.rtk` k-space datasets and `.rti` image streams.
//!
//! `.rtk` layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes   "RTK1"
//! hlen       u32       length of the header text in bytes
//! header     hlen      UTF-8 `key=value` lines, fixed key order
//! payload    frames x slices blocks, each channel -> spoke -> sample,
//!            every sample an interleaved (re, im) f32 pair
//! ```
//!
//! `.rti` is raw f32 rows, `N*N` values per image; the sidecar
//! `<file>.idx` lists one `frame<TAB>slice<TAB>kind<TAB>offset` line per
//! image after a `# rti n=<N>` header line. See `docs/FORMATS.md`.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::config::Config;
use crate::seqsim::{KSpaceFrame, TrajectorySpec};
use crate::{Error, Result, C32};

pub const RTK_MAGIC: &[u8; 4] = b"RTK1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    SingleSlice,
    MultiSlice,
    Flow,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::SingleSlice => "single_slice",
            Mode::MultiSlice => "multi_slice",
            Mode::Flow => "flow",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_slice" => Ok(Mode::SingleSlice),
            "multi_slice" => Ok(Mode::MultiSlice),
            "flow" => Ok(Mode::Flow),
            other => Err(Error::format(format!("unknown imaging mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetHeader {
    pub version: u32,
    /// Image side length in pixels.
    pub n: usize,
    pub channels: usize,
    pub spokes: usize,
    pub turns: usize,
    pub samples_per_spoke: usize,
    pub frames: usize,
    pub slices: usize,
    pub mode: Mode,
    pub base_angle: f64,
}

impl DatasetHeader {
    pub fn new(n: usize, channels: usize, trajectory: &TrajectorySpec, frames: usize) -> Self {
        Self {
            version: FORMAT_VERSION,
            n,
            channels,
            spokes: trajectory.spokes,
            turns: trajectory.turns,
            samples_per_spoke: trajectory.samples_per_spoke,
            frames,
            slices: 1,
            mode: Mode::SingleSlice,
            base_angle: trajectory.base_angle,
        }
    }

    pub fn trajectory(&self) -> TrajectorySpec {
        TrajectorySpec {
            spokes: self.spokes,
            turns: self.turns,
            samples_per_spoke: self.samples_per_spoke,
            base_angle: self.base_angle,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n", self.n),
            ("channels", self.channels),
            ("spokes", self.spokes),
            ("turns", self.turns),
            ("samples_per_spoke", self.samples_per_spoke),
            ("frames", self.frames),
            ("slices", self.slices),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::format(format!("header field `{name}` must be >= 1")));
        }
        if self.version != FORMAT_VERSION {
            return Err(Error::format(format!("unsupported version {}", self.version)));
        }
        if self.mode == Mode::Flow && !self.frames.is_multiple_of(2) {
            return Err(Error::format(format!(
                "flow datasets need an even frame count, got {}",
                self.frames
            )));
        }
        if self.mode == Mode::SingleSlice && self.slices != 1 {
            return Err(Error::format("single_slice mode with more than one slice"));
        }
        if !self.base_angle.is_finite() {
            return Err(Error::NonFinite("header base_angle".into()));
        }
        Ok(())
    }

    /// Bytes of one (frame, slice) block.
    pub fn frame_bytes(&self) -> usize {
        self.channels * self.spokes * self.samples_per_spoke * 8
    }

    pub fn to_text(&self) -> String {
        format!(
            "version={}\nn={}\nchannels={}\nspokes={}\nturns={}\nsamples_per_spoke={}\nframes={}\nslices={}\nmode={}\nbase_angle={}\n",
            self.version,
            self.n,
            self.channels,
            self.spokes,
            self.turns,
            self.samples_per_spoke,
            self.frames,
            self.slices,
            self.mode,
            self.base_angle
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let cfg = Config::parse(text).map_err(|e| Error::format(e.to_string()))?;
        let s = cfg.section_or_empty("");
        let field = |key: &str| -> Result<usize> {
            s.require::<usize>(key).map_err(|e| Error::format(e.to_string()))
        };
        let header = Self {
            version: s.require("version").map_err(|e| Error::format(e.to_string()))?,
            n: field("n")?,
            channels: field("channels")?,
            spokes: field("spokes")?,
            turns: field("turns")?,
            samples_per_spoke: field("samples_per_spoke")?,
            frames: field("frames")?,
            slices: field("slices")?,
            mode: s
                .get("mode")
                .ok_or_else(|| Error::format("missing key `mode`"))?
                .parse()?,
            base_angle: s
                .parse_or("base_angle", 0.0)
                .map_err(|e| Error::format(e.to_string()))?,
        };
        header.validate()?;
        Ok(header)
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        self.validate()?;
        let text = self.to_text();
        out.write_all(RTK_MAGIC)?;
        out.write_all(&(text.len() as u32).to_le_bytes())?;
        out.write_all(text.as_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input
            .read_exact(&mut magic)
            .map_err(|_| Error::format("missing .rtk magic"))?;
        if &magic != RTK_MAGIC {
            return Err(Error::format("not an .rtk stream (bad magic)"));
        }
        let mut len = [0u8; 4];
        input
            .read_exact(&mut len)
            .map_err(|_| Error::format("missing header length"))?;
        let len = u32::from_le_bytes(len) as usize;
        if len > 1 << 20 {
            return Err(Error::format(format!("implausible header length {len}")));
        }
        let mut text = vec![0u8; len];
        input
            .read_exact(&mut text)
            .map_err(|_| Error::format("truncated header"))?;
        let text = String::from_utf8(text).map_err(|_| Error::format("header is not UTF-8"))?;
        Self::from_text(&text)
    }
}

/// Streaming `.rtk` reader holding at most one frame of payload.
pub struct RtkReader<R> {
    input: R,
    header: DatasetHeader,
    buf: Vec<u8>,
    next: usize,
}

impl RtkReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: Read> RtkReader<R> {
    pub fn new(mut input: R) -> Result<Self> {
        let header = DatasetHeader::read_from(&mut input)?;
        let buf = Vec::with_capacity(header.frame_bytes());
        Ok(Self {
            input,
            header,
            buf,
            next: 0,
        })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    /// Bytes reserved for payload; never more than one frame.
    pub fn buffer_capacity(&self) -> usize {
        self.buf.capacity()
    }

    pub fn total_blocks(&self) -> usize {
        self.header.frames * self.header.slices
    }

    /// Next (frame, slice) block in acquisition order, `None` once all
    /// declared frames have been read.
    pub fn read_frame(&mut self) -> Result<Option<KSpaceFrame>> {
        if self.next >= self.total_blocks() {
            return Ok(None);
        }
        let need = self.header.frame_bytes();
        self.buf.clear();
        self.buf.resize(need, 0);
        let mut got = 0;
        while got < need {
            match self.input.read(&mut self.buf[got..]) {
                Ok(0) => break,
                Ok(k) => got += k,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => {
                    return Err(Error::Io {
                        frame: Some(self.next / self.header.slices),
                        source: e,
                    })
                }
            }
        }
        if got < need {
            return Err(Error::Truncated {
                expected: need,
                got,
            });
        }
        let frame_index = self.next / self.header.slices;
        let slice_id = self.next % self.header.slices;
        self.next += 1;
        let traj = self.header.trajectory();
        let samples: Vec<C32> = self
            .buf
            .chunks_exact(8)
            .map(|c| {
                C32::new(
                    f32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                    f32::from_le_bytes([c[4], c[5], c[6], c[7]]),
                )
            })
            .collect();
        if samples.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite(format!(
                "samples of frame {frame_index} slice {slice_id}"
            )));
        }
        Ok(Some(KSpaceFrame {
            frame_index,
            slice_id,
            channels: self.header.channels,
            spokes: self.header.spokes,
            samples_per_spoke: self.header.samples_per_spoke,
            spoke_angles: traj.frame_angles(frame_index),
            samples,
        }))
    }
}

impl<R: Read> Iterator for RtkReader<R> {
    type Item = Result<KSpaceFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        self.read_frame().transpose()
    }
}

pub struct RtkWriter<W: Write> {
    out: W,
    header: DatasetHeader,
    next: usize,
}

impl RtkWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, header: DatasetHeader) -> Result<Self> {
        Self::new(BufWriter::new(File::create(path)?), header)
    }
}

impl<W: Write> RtkWriter<W> {
    pub fn new(mut out: W, header: DatasetHeader) -> Result<Self> {
        header.write_to(&mut out)?;
        Ok(Self {
            out,
            header,
            next: 0,
        })
    }

    pub fn write_frame(&mut self, frame: &KSpaceFrame) -> Result<()> {
        let h = &self.header;
        if frame.channels != h.channels
            || frame.spokes != h.spokes
            || frame.samples_per_spoke != h.samples_per_spoke
        {
            return Err(Error::format(format!(
                "frame {} has shape {}x{}x{}, header says {}x{}x{}",
                frame.frame_index,
                frame.channels,
                frame.spokes,
                frame.samples_per_spoke,
                h.channels,
                h.spokes,
                h.samples_per_spoke
            )));
        }
        let expect = (self.next / h.slices, self.next % h.slices);
        if (frame.frame_index, frame.slice_id) != expect {
            return Err(Error::format(format!(
                "expected frame {} slice {}, got frame {} slice {}",
                expect.0, expect.1, frame.frame_index, frame.slice_id
            )));
        }
        if self.next >= h.frames * h.slices {
            return Err(Error::format("more frames than declared in the header"));
        }
        frame.validate()?;
        let mut bytes = Vec::with_capacity(h.frame_bytes());
        for v in &frame.samples {
            bytes.extend_from_slice(&v.re.to_le_bytes());
            bytes.extend_from_slice(&v.im.to_le_bytes());
        }
        self.out.write_all(&bytes).map_err(|e| Error::Io {
            frame: Some(frame.frame_index),
            source: e,
        })?;
        self.next += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ImageKind {
    Magnitude,
    PhaseDifference,
}

impl ImageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ImageKind::Magnitude => "magnitude",
            ImageKind::PhaseDifference => "phase_difference",
        }
    }
}

impl FromStr for ImageKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "magnitude" => Ok(ImageKind::Magnitude),
            "phase_difference" => Ok(ImageKind::PhaseDifference),
            other => Err(Error::format(format!("unknown image kind `{other}`"))),
        }
    }
}

/// One output image, `n x n` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageOut {
    pub frame_index: usize,
    pub slice_id: usize,
    pub n: usize,
    pub kind: ImageKind,
    pub pixels: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndexRecord {
    pub frame_index: usize,
    pub slice_id: usize,
    pub kind: ImageKind,
    pub offset: u64,
}

/// Sidecar index path for an `.rti` file.
pub fn index_path(rti: &Path) -> PathBuf {
    let mut s = rti.as_os_str().to_owned();
    s.push(".idx");
    PathBuf::from(s)
}

pub struct RtiWriter<W: Write, I: Write> {
    payload: W,
    index: I,
    n: usize,
    strict: bool,
    offset: u64,
    last: Option<(usize, usize, ImageKind)>,
}

impl RtiWriter<BufWriter<File>, BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, n: usize, strict: bool) -> Result<Self> {
        let path = path.as_ref();
        let payload = BufWriter::new(File::create(path)?);
        let index = BufWriter::new(File::create(index_path(path))?);
        Self::new(payload, index, n, strict)
    }
}

impl<W: Write, I: Write> RtiWriter<W, I> {
    pub fn new(payload: W, mut index: I, n: usize, strict: bool) -> Result<Self> {
        writeln!(index, "# rti n={n}")?;
        Ok(Self {
            payload,
            index,
            n,
            strict,
            offset: 0,
            last: None,
        })
    }

    pub fn images_written(&self) -> Option<(usize, usize)> {
        self.last.map(|(f, s, _)| (f, s))
    }

    pub fn write_image(&mut self, img: &ImageOut) -> Result<()> {
        if img.n != self.n || img.pixels.len() != self.n * self.n {
            return Err(Error::format(format!(
                "image of frame {} is {} pixels, expected {}x{}",
                img.frame_index,
                img.pixels.len(),
                self.n,
                self.n
            )));
        }
        let key = (img.frame_index, img.slice_id, img.kind);
        if self.strict {
            if let Some(last) = self.last {
                if key <= last {
                    return Err(Error::Ordering {
                        frame: img.frame_index,
                        slice: img.slice_id,
                        last_frame: last.0,
                        last_slice: last.1,
                    });
                }
            }
        }
        let io_err = |e: io::Error| Error::Io {
            frame: Some(img.frame_index),
            source: e,
        };
        let mut bytes = Vec::with_capacity(img.pixels.len() * 4);
        for v in &img.pixels {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.payload.write_all(&bytes).map_err(io_err)?;
        writeln!(
            self.index,
            "{}\t{}\t{}\t{}",
            img.frame_index,
            img.slice_id,
            img.kind.as_str(),
            self.offset
        )
        .map_err(io_err)?;
        self.offset += bytes.len() as u64;
        self.last = Some(key);
        Ok(())
    }

    pub fn finish(mut self) -> Result<(W, I)> {
        self.payload.flush()?;
        self.index.flush()?;
        Ok((self.payload, self.index))
    }
}

/// Parses an `.rti.idx` sidecar into `(n, records)`.
pub fn read_index<R: BufRead>(input: R) -> Result<(usize, Vec<IndexRecord>)> {
    let mut lines = input.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::format("empty index"))??;
    let n = first
        .strip_prefix("# rti n=")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| Error::format(format!("bad index header `{first}`")))?;
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(Error::format(format!("bad index line `{line}`")));
        }
        let num = |s: &str| -> Result<u64> {
            s.parse().map_err(|_| Error::format(format!("bad number `{s}`")))
        };
        out.push(IndexRecord {
            frame_index: num(f[0])? as usize,
            slice_id: num(f[1])? as usize,
            kind: f[2].parse()?,
            offset: num(f[3])?,
        });
    }
    Ok((n, out))
}

/// Loads every image of an `.rti` file using its sidecar index.
pub fn read_images(path: impl AsRef<Path>) -> Result<Vec<ImageOut>> {
    let path = path.as_ref();
    let (n, records) = read_index(BufReader::new(File::open(index_path(path))?))?;
    let mut payload = Vec::new();
    File::open(path)?.read_to_end(&mut payload)?;
    records
        .into_iter()
        .map(|r| {
            let start = r.offset as usize;
            let end = start + n * n * 4;
            let bytes = payload
                .get(start..end)
                .ok_or(Error::Truncated {
                    expected: end,
                    got: payload.len(),
                })?;
            Ok(ImageOut {
                frame_index: r.frame_index,
                slice_id: r.slice_id,
                n,
                kind: r.kind,
                pixels: bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            })
        })
        .collect()
}
