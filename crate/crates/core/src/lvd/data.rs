use std::fmt::Write as _;
use std::io::{Read, Write};

use crate::error::{PcError, Result};
use crate::growing::EmbeddedDataset;

/// Images with one embedding vector per cell of a latent grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    pub num_vars: usize,
    pub dim: usize,
    pub grid: (usize, usize),
    pub images: Vec<Vec<u32>>,
    /// `embeddings[n][pos]`, positions in row-major grid order.
    pub embeddings: Vec<Vec<Vec<f64>>>,
}

impl ImageDataset {
    pub fn new(
        num_vars: usize,
        dim: usize,
        grid: (usize, usize),
        images: Vec<Vec<u32>>,
        embeddings: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        if images.len() != embeddings.len() {
            return Err(PcError::arg("one embedding grid is needed per image"));
        }
        if images.iter().any(|x| x.len() != num_vars) {
            return Err(PcError::arg(format!("every image must have {num_vars} values")));
        }
        let cells = grid.0 * grid.1;
        for e in &embeddings {
            if e.len() != cells || e.iter().any(|h| h.len() != dim) {
                return Err(PcError::arg(format!(
                    "every embedding grid must be {}x{} vectors of length {dim}",
                    grid.0, grid.1
                )));
            }
        }
        Ok(ImageDataset {
            num_vars,
            dim,
            grid,
            images,
            embeddings,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Largest pixel value plus one.
    pub fn inferred_domain(&self) -> usize {
        self.images
            .iter()
            .flat_map(|x| x.iter())
            .max()
            .map_or(1, |&m| m as usize + 1)
    }

    pub fn subset(&self, indices: &[usize]) -> ImageDataset {
        ImageDataset {
            num_vars: self.num_vars,
            dim: self.dim,
            grid: self.grid,
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            embeddings: indices.iter().map(|&i| self.embeddings[i].clone()).collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "DS v1 {} {} {} {} {}\n",
            self.len(),
            self.num_vars,
            self.dim,
            self.grid.0,
            self.grid.1
        );
        for (x, e) in self.images.iter().zip(&self.embeddings) {
            let px: Vec<String> = x.iter().map(u32::to_string).collect();
            s.push_str(&px.join(" "));
            s.push('\n');
            for h in e {
                let row: Vec<String> = h.iter().map(|v| format!("{v:.16e}")).collect();
                let _ = writeln!(s, "{}", row.join(" "));
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = Tokens::new(text);
        let magic = tokens.next_str()?;
        let version = tokens.next_str()?;
        if magic.1 != "DS" || version.1 != "v1" {
            return Err(PcError::parse(magic.0, "expected header `DS v1`"));
        }
        let n = tokens.next_usize("sample count")?;
        let v = tokens.next_usize("variable count")?;
        let d = tokens.next_usize("embedding dimension")?;
        let gh = tokens.next_usize("grid height")?;
        let gw = tokens.next_usize("grid width")?;
        let mut images = Vec::with_capacity(n);
        let mut embeddings = Vec::with_capacity(n);
        for _ in 0..n {
            let mut x = Vec::with_capacity(v);
            for _ in 0..v {
                let (off, t) = tokens.next_str()?;
                x.push(t.parse::<u32>().map_err(|_| PcError::parse(off, format!("bad pixel value `{t}`")))?);
            }
            let mut grid = Vec::with_capacity(gh * gw);
            for _ in 0..gh * gw {
                let mut h = Vec::with_capacity(d);
                for _ in 0..d {
                    let (off, t) = tokens.next_str()?;
                    h.push(t.parse::<f64>().map_err(|_| PcError::parse(off, format!("bad embedding value `{t}`")))?);
                }
                grid.push(h);
            }
            images.push(x);
            embeddings.push(grid);
        }
        if let Some((off, _)) = tokens.peek() {
            return Err(PcError::parse(off, "trailing content after the last sample"));
        }
        ImageDataset::new(v, d, (gh, gw), images, embeddings)
    }
}

struct Tokens<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        Tokens { text, pos: 0 }
    }

    fn peek(&self) -> Option<(usize, &'a str)> {
        let rest = &self.text[self.pos..];
        let start = rest.find(|c: char| !c.is_whitespace())?;
        let tail = &rest[start..];
        let len = tail.find(char::is_whitespace).unwrap_or(tail.len());
        Some((self.pos + start, &tail[..len]))
    }

    fn next_str(&mut self) -> Result<(usize, &'a str)> {
        let (off, t) = self
            .peek()
            .ok_or_else(|| PcError::parse(self.text.len(), "unexpected end of input"))?;
        self.pos = off + t.len();
        Ok((off, t))
    }

    fn next_usize(&mut self, what: &str) -> Result<usize> {
        let (off, t) = self.next_str()?;
        t.parse().map_err(|_| PcError::parse(off, format!("bad {what} `{t}`")))
    }
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<ImageDataset> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    ImageDataset::from_text(&text)
}

pub fn write_dataset<W: Write>(data: &ImageDataset, mut w: W) -> Result<()> {
    w.write_all(data.to_text().as_bytes())?;
    Ok(())
}

/// Partition of an `H x W x C` image into equally sized rectangular
/// patches, one per latent grid cell. Pixel `(r, c, ch)` is variable
/// `(r * W + c) * C + ch`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchLayout {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub patch_height: usize,
    pub patch_width: usize,
    /// Variables of each patch in row-major grid order; within a patch the
    /// order is row, column, channel.
    pub patches: Vec<Vec<usize>>,
}

impl PatchLayout {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        patch_height: usize,
        patch_width: usize,
    ) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 || patch_height == 0 || patch_width == 0 {
            return Err(PcError::arg("image and patch dimensions must be positive"));
        }
        if height % patch_height != 0 || width % patch_width != 0 {
            return Err(PcError::arg(format!(
                "{patch_height}x{patch_width} patches do not tile a {height}x{width} image"
            )));
        }
        let mut patches = Vec::new();
        for gr in 0..height / patch_height {
            for gc in 0..width / patch_width {
                let mut vars = Vec::with_capacity(patch_height * patch_width * channels);
                for r in gr * patch_height..(gr + 1) * patch_height {
                    for c in gc * patch_width..(gc + 1) * patch_width {
                        for ch in 0..channels {
                            vars.push((r * width + c) * channels + ch);
                        }
                    }
                }
                patches.push(vars);
            }
        }
        Ok(PatchLayout {
            height,
            width,
            channels,
            patch_height,
            patch_width,
            patches,
        })
    }

    /// A single patch covering the whole image.
    pub fn whole(height: usize, width: usize, channels: usize) -> Result<Self> {
        PatchLayout::new(height, width, channels, height, width)
    }

    pub fn num_vars(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn num_patches(&self) -> usize {
        self.patches.len()
    }

    pub fn patch_size(&self) -> usize {
        self.patch_height * self.patch_width * self.channels
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.patch_height, self.width / self.patch_width)
    }

    pub fn patch_of(&self, image: &[u32], position: usize) -> Vec<u32> {
        self.patches[position].iter().map(|&v| image[v]).collect()
    }

    /// Inverse of cutting an image into patches.
    pub fn reassemble(&self, patches: &[Vec<u32>]) -> Result<Vec<u32>> {
        if patches.len() != self.num_patches() || patches.iter().any(|p| p.len() != self.patch_size()) {
            return Err(PcError::arg("patch count or size does not match the layout"));
        }
        let mut image = vec![0; self.num_vars()];
        for (vars, vals) in self.patches.iter().zip(patches) {
            for (&v, &x) in vars.iter().zip(vals) {
                image[v] = x;
            }
        }
        Ok(image)
    }

    pub fn check_dataset(&self, data: &ImageDataset) -> Result<()> {
        if data.num_vars != self.num_vars() {
            return Err(PcError::arg(format!(
                "dataset has {} variables, layout expects {}",
                data.num_vars,
                self.num_vars()
            )));
        }
        if data.grid != self.grid() {
            return Err(PcError::arg(format!(
                "embedding grid {:?} does not match the {:?} patch grid",
                data.grid,
                self.grid()
            )));
        }
        Ok(())
    }
}

/// One dataset per latent position pairing each image's patch with the
/// embedding at that position.
pub fn extract_patches(data: &ImageDataset, layout: &PatchLayout) -> Result<Vec<EmbeddedDataset>> {
    layout.check_dataset(data)?;
    (0..layout.num_patches())
        .map(|pos| {
            let xs = data.images.iter().map(|x| layout.patch_of(x, pos)).collect();
            let hs = data.embeddings.iter().map(|e| e[pos].clone()).collect();
            EmbeddedDataset::new(xs, hs)
        })
        .collect()
}
