use std::collections::BTreeMap;
use std::io::Cursor;

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::raster::{LabelRaster, UNCLASSIFIED};

pub type Palette = BTreeMap<u32, [u8; 3]>;

/// Encodes a label raster as an 8-bit RGB PNG, one image pixel per cell.
/// Unclassified cells are black unless the palette overrides id 0.
pub fn render_class_map(labels: &LabelRaster, palette: &Palette) -> Result<Vec<u8>> {
    let (w, h) = (labels.width(), labels.height());
    let mut img = RgbImage::new(w as u32, h as u32);
    for (i, &l) in labels.labels().iter().enumerate() {
        let rgb = match palette.get(&l) {
            Some(c) => *c,
            None if l == UNCLASSIFIED => [0, 0, 0],
            None => return Err(Error::MissingPalette(l)),
        };
        img.put_pixel((i % w) as u32, (i / w) as u32, image::Rgb(rgb));
    }
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).map_err(|e| Error::Png(e.to_string()))?;
    Ok(out.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decode(bytes: &[u8]) -> RgbImage {
        image::load_from_memory_with_format(bytes, ImageFormat::Png).unwrap().to_rgb8()
    }

    #[test]
    fn unclassified_is_black() {
        let l = LabelRaster::new(4, 3, vec![0; 12], BTreeMap::new()).unwrap();
        let img = decode(&render_class_map(&l, &Palette::new()).unwrap());
        assert_eq!(img.dimensions(), (4, 3));
        assert!(img.pixels().all(|p| p.0 == [0, 0, 0]));
    }

    #[test]
    fn two_pixels() {
        let legend = BTreeMap::from([(1, "a".into()), (2, "b".into())]);
        let l = LabelRaster::new(2, 1, vec![1, 2], legend).unwrap();
        let palette = Palette::from([(1, [255, 0, 0]), (2, [0, 0, 255])]);
        let img = decode(&render_class_map(&l, &palette).unwrap());
        assert_eq!(img.get_pixel(0, 0).0, [255, 0, 0]);
        assert_eq!(img.get_pixel(1, 0).0, [0, 0, 255]);
    }

    #[test]
    fn missing_palette_entry() {
        let l = LabelRaster::new(1, 1, vec![3], BTreeMap::from([(3, "c".into())])).unwrap();
        assert!(matches!(render_class_map(&l, &Palette::new()), Err(Error::MissingPalette(3))));
    }
}
