//! Sliding-window partition of a high-resolution image into encoder-sized
//! local crops plus one resized global view.
//!
//! Each axis gets `ceil(extent / window)` windows. The first window starts at
//! 0, the last ends at the image border, and the ones in between are spaced
//! evenly (rounded to whole pixels), so windows only overlap when the extent
//! is not a multiple of the window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Default cap on local crops.
pub const MAX_PATCHES: usize = 6;

/// Native input size of the vision encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub height: usize,
    pub width: usize,
}

impl Window {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Validation("window extents must be positive".into()));
        }
        Ok(Self { height, width })
    }

    pub fn square(side: usize) -> Self {
        Self {
            height: side,
            width: side,
        }
    }
}

/// One local crop and where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalCrop {
    pub row: usize,
    pub col: usize,
    pub y: usize,
    pub x: usize,
    pub image: ImageTensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
    /// Row-major; crop `(r, c)` sits at index `r·cols + c`.
    pub locals: Vec<LocalCrop>,
    pub global: ImageTensor,
    /// Whether the input was upscaled before cropping.
    pub upscaled: bool,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.locals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locals.is_empty()
    }

    /// Adapter slot of the crop at `(row, col)`.
    pub fn adapter_index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionOptions {
    pub max_patches: usize,
}

impl Default for PartitionOptions {
    fn default() -> Self {
        Self {
            max_patches: MAX_PATCHES,
        }
    }
}

/// `(ceil(H / Hv), ceil(W / Wv))`.
pub fn grid_dims(height: usize, width: usize, win: Window) -> Result<(usize, usize)> {
    if height < win.height || width < win.width {
        return Err(Error::Validation(format!(
            "image {height}x{width} is smaller than the {}x{} window; upscale it first",
            win.height, win.width
        )));
    }
    Ok((height.div_ceil(win.height), width.div_ceil(win.width)))
}

/// Start offsets of `n` windows of size `win` along an axis of length
/// `extent`: first 0, last `extent - win`, evenly spaced in between.
pub fn placements(extent: usize, win: usize, n: usize) -> Result<Vec<usize>> {
    if win == 0 || extent < win {
        return Err(Error::Validation(format!(
            "axis of {extent} px cannot hold a {win} px window"
        )));
    }
    if n != extent.div_ceil(win) {
        return Err(Error::Validation(format!(
            "{n} windows do not tile {extent} px with {win} px windows"
        )));
    }
    if n == 1 {
        return Ok(vec![0]);
    }
    let span = extent - win;
    let den = n - 1;
    // round half up: floor((2·i·span + den) / (2·den))
    Ok((0..n).map(|i| (2 * i * span + den) / (2 * den)).collect())
}

pub fn partition(img: &ImageTensor, win: Window) -> Result<PatchGrid> {
    partition_with(img, win, PartitionOptions::default())
}

/// Splits `img` into local crops and a global view. Inputs smaller than the
/// window along an axis are first upscaled to the window along that axis.
pub fn partition_with(img: &ImageTensor, win: Window, opts: PartitionOptions) -> Result<PatchGrid> {
    let target_h = img.height().max(win.height);
    let target_w = img.width().max(win.width);
    let upscaled = target_h != img.height() || target_w != img.width();
    let source = if upscaled {
        img.resize_bilinear(target_h, target_w)?
    } else {
        img.clone()
    };

    let (rows, cols) = grid_dims(source.height(), source.width(), win)?;
    if rows * cols > opts.max_patches {
        return Err(Error::PatchCapacity {
            patches: rows * cols,
            limit: opts.max_patches,
        });
    }
    let ys = placements(source.height(), win.height, rows)?;
    let xs = placements(source.width(), win.width, cols)?;

    let mut locals = Vec::with_capacity(rows * cols);
    for (row, &y) in ys.iter().enumerate() {
        for (col, &x) in xs.iter().enumerate() {
            locals.push(LocalCrop {
                row,
                col,
                y,
                x,
                image: source.crop(y, x, win.height, win.width)?,
            });
        }
    }
    let global = source.resize_bilinear(win.height, win.width)?;
    Ok(PatchGrid {
        rows,
        cols,
        locals,
        global,
        upscaled,
    })
}
