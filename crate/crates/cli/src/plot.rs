use anyhow::Result;

use cebd_core::Image;

const SCALE: usize = 4;
const PANEL: usize = 64;
const MARGIN: usize = 4;

fn put(img: &mut Image, y: usize, x: usize, rgb: [f32; 3]) {
    if y < img.height() && x < img.width() {
        for (c, v) in rgb.into_iter().enumerate() {
            img.set(y, x, c, v);
        }
    }
}

/// Draws one profile as a polyline inside a panel starting at row `top`.
fn draw(img: &mut Image, values: &[f32], top: usize, peak: f32, rgb: [f32; 3]) {
    let height = PANEL - 2 * MARGIN;
    let row = |v: f32| top + MARGIN + height - ((v / peak).clamp(0.0, 1.0) * height as f32).round() as usize;
    for x in 0..img.width() {
        put(img, top + MARGIN + height, x, [0.6; 3]);
    }
    let mut prev: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        let y = row(v);
        for dx in 0..SCALE {
            put(img, y, i * SCALE + dx, rgb);
        }
        if let Some(p) = prev {
            for yy in p.min(y)..=p.max(y) {
                put(img, yy, i * SCALE, rgb);
            }
        }
        prev = Some(y);
    }
}

/// Two stacked panels: the forward-motion snapshot row on top, the
/// backward-motion row below, on a shared vertical scale.
pub fn profiles(forward: &[f32], backward: &[f32]) -> Result<Image> {
    let width = forward.len().max(backward.len()) * SCALE;
    let mut img = Image::filled(2 * PANEL, width, 3, 1.0)?;
    let peak = forward
        .iter()
        .chain(backward)
        .copied()
        .fold(f32::MIN_POSITIVE, f32::max);
    draw(&mut img, forward, 0, peak, [0.8, 0.1, 0.1]);
    draw(&mut img, backward, PANEL, peak, [0.1, 0.2, 0.8]);
    Ok(img)
}
