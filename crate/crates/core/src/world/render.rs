use serde::{Deserialize, Serialize};

use super::{Aabb, Bounds, Category, Roster, WorldState};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub width: u32,
    pub height: u32,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
        }
    }
}

/// Packed RGB8 raster, row-major, top row = far edge of the table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<u8>,
}

impl Image {
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width, self.height);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
            w.write_image_data(&self.rgb)
                .map_err(|e| Error::Png(e.to_string()))?;
        }
        Ok(out)
    }

    pub fn from_png(bytes: &[u8]) -> Result<Image> {
        let dec = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = dec.read_info().map_err(|e| Error::Png(e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Png("image too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Png(e.to_string()))?;
        if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
            return Err(Error::Png(format!(
                "expected RGB8, got {:?}/{:?}",
                info.color_type, info.bit_depth
            )));
        }
        buf.truncate(info.buffer_size());
        Ok(Image {
            width: info.width,
            height: info.height,
            rgb: buf,
        })
    }
}

pub fn category_color(c: Category) -> [u8; 3] {
    match c {
        Category::Table => [196, 164, 120],
        Category::Bowl => [30, 30, 30],
        Category::Plate => [235, 235, 235],
        Category::Ramekin => [220, 120, 60],
        Category::Cabinet => [120, 72, 40],
        Category::Drawer => [160, 100, 55],
        Category::Stove => [90, 90, 110],
    }
}

/// Top-down orthographic raster of `workspace`'s x/y extent. Objects are
/// painted in order of increasing top height; drawers are drawn as frames so
/// their contents stay visible.
pub fn render(
    roster: &Roster,
    world: &WorldState,
    workspace: &Bounds,
    cfg: &RenderConfig,
) -> Image {
    let (w, h) = (cfg.width.max(1), cfg.height.max(1));
    let mut img = Image {
        width: w,
        height: h,
        rgb: category_color(Category::Table).repeat(w as usize * h as usize),
    };

    let mut boxes: Vec<(f64, &str, Category, Aabb)> = roster
        .objects()
        .iter()
        .filter(|o| o.category != Category::Table)
        .filter_map(|o| Aabb::of(world, o).map(|b| (b.top(), o.id.as_str(), o.category, b)))
        .collect();
    boxes.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));

    let px = workspace.width() / w as f64;
    let py = workspace.depth() / h as f64;
    for (_, _, category, b) in boxes {
        let color = category_color(category);
        let round = matches!(
            category,
            Category::Bowl | Category::Plate | Category::Ramekin
        );
        let frame = category == Category::Drawer;
        let col0 = (((b.center[0] - b.half[0] - workspace.min[0]) / px)
            .floor()
            .max(0.0)) as u32;
        let col1 = (((b.center[0] + b.half[0] - workspace.min[0]) / px).ceil() as i64)
            .clamp(0, w as i64) as u32;
        let row0 = (((workspace.max[1] - b.center[1] - b.half[1]) / py)
            .floor()
            .max(0.0)) as u32;
        let row1 = (((workspace.max[1] - b.center[1] + b.half[1]) / py).ceil() as i64)
            .clamp(0, h as i64) as u32;
        for row in row0..row1 {
            let y = workspace.max[1] - (row as f64 + 0.5) * py;
            let dy = (y - b.center[1]) / b.half[1];
            for col in col0..col1 {
                let x = workspace.min[0] + (col as f64 + 0.5) * px;
                let dx = (x - b.center[0]) / b.half[0];
                let inside = if round {
                    dx * dx + dy * dy <= 1.0
                } else {
                    dx.abs() <= 1.0 && dy.abs() <= 1.0
                };
                if !inside {
                    continue;
                }
                if frame {
                    let edge_x = (x - b.center[0]).abs() > b.half[0] - 2.0 * px;
                    let edge_y = (y - b.center[1]).abs() > b.half[1] - 2.0 * py;
                    if !(edge_x || edge_y) {
                        continue;
                    }
                }
                let i = 3 * (row as usize * w as usize + col as usize);
                img.rgb[i..i + 3].copy_from_slice(&color);
            }
        }
    }
    img
}
