use crate::error::{Error, Result};
use crate::numerics::{DenseArray, Linear, ParamTree, Real, Rng};

/// Splits an `[H × W × ch]` image into non-overlapping `patch × patch` tiles,
/// in row-major tile order. Each row of the result is one flattened tile,
/// ordered `(row, col, channel)`.
pub fn patchify<T: Real>(image: &DenseArray<T>, patch: usize) -> Result<DenseArray<T>> {
    if image.ndim() != 3 {
        return Err(Error::dim(format!(
            "image must be [H × W × ch], got {:?}",
            image.shape()
        )));
    }
    let (h, w, ch) = (image.dim(0), image.dim(1), image.dim(2));
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::dim(format!(
            "{h}×{w} image is not divisible into {patch}-pixel patches"
        )));
    }
    let (gh, gw) = (h / patch, w / patch);
    let tile = patch * patch * ch;
    let mut data = Vec::with_capacity(gh * gw * tile);
    let src = image.data();
    for py in 0..gh {
        for px in 0..gw {
            for r in 0..patch {
                let y = py * patch + r;
                let start = (y * w + px * patch) * ch;
                data.extend_from_slice(&src[start..start + patch * ch]);
            }
        }
    }
    DenseArray::new(&[gh * gw, tile], data)
}

/// `proj(patches) + pos`, one token per patch.
pub fn patch_embed<T: Real>(
    image: &DenseArray<T>,
    patch: usize,
    proj: &Linear<T>,
    pos: &DenseArray<T>,
) -> Result<DenseArray<T>> {
    let tiles = patchify(image, patch)?;
    let t = tiles.dim(0);
    if pos.shape() != [t, proj.output_dim()] {
        return Err(Error::dim(format!(
            "position table {:?} does not match {t} tokens × {} channels",
            pos.shape(),
            proj.output_dim()
        )));
    }
    let mut tokens = proj.forward(&tiles)?;
    tokens.add_assign(pos)?;
    Ok(tokens)
}

/// Patch projection plus separate learnable position tables for template and
/// search tokens of one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding<T> {
    pub proj: Linear<T>,
    pub pos_template: DenseArray<T>,
    pub pos_search: DenseArray<T>,
}

impl<T: Real> Embedding<T> {
    pub fn init(
        patch: usize,
        in_channels: usize,
        width: usize,
        template_tokens: usize,
        search_tokens: usize,
        rng: &mut Rng,
    ) -> Self {
        Self {
            proj: Linear::init(patch * patch * in_channels, width, 0.02, rng),
            pos_template: DenseArray::randn(&[template_tokens, width], 0.02, rng),
            pos_search: DenseArray::randn(&[search_tokens, width], 0.02, rng),
        }
    }

    /// Embeds a batch of images `[B × H × W × ch]` against one position table.
    /// Returns `[B × T × C]` and the flattened patches for the backward pass.
    pub fn forward(
        &self,
        images: &DenseArray<T>,
        patch: usize,
        template: bool,
    ) -> Result<(DenseArray<T>, DenseArray<T>)> {
        if images.ndim() != 4 {
            return Err(Error::dim("embedding expects [B × H × W × ch] images"));
        }
        let b = images.dim(0);
        let per = images.len() / b.max(1);
        let pos = if template {
            &self.pos_template
        } else {
            &self.pos_search
        };
        let mut tiles = Vec::new();
        let mut rows = 0;
        let mut tile_width = 0;
        for i in 0..b {
            let img = DenseArray::new(
                &images.shape()[1..],
                images.data()[i * per..(i + 1) * per].to_vec(),
            )?;
            let t = patchify(&img, patch)?;
            rows = t.dim(0);
            tile_width = t.dim(1);
            tiles.extend_from_slice(t.data());
        }
        if pos.dim(0) != rows {
            return Err(Error::dim(format!(
                "position table has {} rows for {rows} tokens",
                pos.dim(0)
            )));
        }
        let tiles = DenseArray::new(&[b, rows, tile_width], tiles)?;
        let mut out = self.proj.forward(&tiles)?;
        let c = self.proj.output_dim();
        for item in out.data_mut().chunks_exact_mut(rows * c) {
            for (v, &p) in item.iter_mut().zip(pos.data()) {
                *v += p;
            }
        }
        Ok((out, tiles))
    }

    pub fn backward(
        &self,
        tiles: &DenseArray<T>,
        grad_out: &DenseArray<T>,
        template: bool,
        grads: &mut Embedding<T>,
    ) -> Result<()> {
        self.proj.backward(tiles, grad_out, &mut grads.proj)?;
        let pos = if template {
            &mut grads.pos_template
        } else {
            &mut grads.pos_search
        };
        let n = pos.len();
        for item in grad_out.data().chunks_exact(n) {
            for (g, &v) in pos.data_mut().iter_mut().zip(item) {
                *g += v;
            }
        }
        Ok(())
    }
}

impl<T: Real> ParamTree<T> for Embedding<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a DenseArray<T>)>) {
        self.proj.visit(&format!("{prefix}.proj"), out);
        out.push((format!("{prefix}.pos_template"), &self.pos_template));
        out.push((format!("{prefix}.pos_search"), &self.pos_search));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut DenseArray<T>)>) {
        self.proj.visit_mut(&format!("{prefix}.proj"), out);
        out.push((format!("{prefix}.pos_template"), &mut self.pos_template));
        out.push((format!("{prefix}.pos_search"), &mut self.pos_search));
    }
}
