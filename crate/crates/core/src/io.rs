//! Raster codecs: binary masks as 0/255 grayscale PNG, quality maps as
//! paletted PNG, and RGB renderings of quality maps.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor};
use std::path::Path;

use image::{GrayImage, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::quality::{BinaryMask, EdgeMap, PqmClass, QualityMap};

/// Display colour of each class.
pub fn class_color(c: PqmClass) -> [u8; 3] {
    match c {
        PqmClass::Tp => [255, 0, 0],
        PqmClass::Fp => [0, 255, 0],
        PqmClass::Tn => [0, 0, 255],
        PqmClass::Fn => [0, 255, 255],
    }
}

/// RGB palette in palette-index order (0=TN, 1=TP, 2=FP, 3=FN).
pub fn palette() -> [u8; 12] {
    let mut p = [0u8; 12];
    for i in 0..4u8 {
        let c = PqmClass::from_palette_index(i).expect("index < 4");
        p[3 * i as usize..3 * i as usize + 3].copy_from_slice(&class_color(c));
    }
    p
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)?.to_rgb8())
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Loads any 8-bit raster and thresholds nonzero luma to foreground.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let g = image::open(path)?.to_luma8();
    BinaryMask::from_threshold(g.height() as usize, g.width() as usize, g.as_raw())
}

pub fn write_mask(path: &Path, m: &BinaryMask) -> Result<()> {
    let g = GrayImage::from_raw(m.width() as u32, m.height() as u32, m.to_u8_255())
        .expect("buffer size matches");
    g.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn write_edge_map(path: &Path, e: &EdgeMap) -> Result<()> {
    write_mask(path, e.mask())
}

pub fn encode_quality_png(q: &QualityMap) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, q.width() as u32, q.height() as u32);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_palette(palette().to_vec());
        let mut w = enc.write_header()?;
        w.write_image_data(&q.to_palette_indices())?;
        w.finish()?;
    }
    Ok(buf)
}

fn decode_quality<R: std::io::BufRead + std::io::Seek>(r: R) -> Result<QualityMap> {
    let mut dec = png::Decoder::new(r);
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info()?;
    let info = reader.info();
    if info.color_type != png::ColorType::Indexed || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::InvalidArgument(format!(
            "quality map must be an 8-bit paletted PNG, got {:?}/{:?}",
            info.color_type, info.bit_depth
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::InvalidArgument("quality map too large".into()))?;
    let mut buf = vec![0u8; size];
    reader.next_frame(&mut buf)?;
    buf.truncate(w * h);
    QualityMap::from_palette_indices(h, w, &buf)
}

pub fn decode_quality_png(bytes: &[u8]) -> Result<QualityMap> {
    decode_quality(Cursor::new(bytes))
}

pub fn read_quality_map(path: &Path) -> Result<QualityMap> {
    decode_quality(BufReader::new(File::open(path)?))
}

pub fn write_quality_map(path: &Path, q: &QualityMap) -> Result<()> {
    let bytes = encode_quality_png(q)?;
    let mut f = BufWriter::new(File::create(path)?);
    std::io::Write::write_all(&mut f, &bytes)?;
    Ok(())
}

pub fn render_quality_map(q: &QualityMap) -> RgbImage {
    RgbImage::from_fn(q.width() as u32, q.height() as u32, |x, y| {
        Rgb(class_color(q.get(y as usize, x as usize)))
    })
}

/// Inverse of [`render_quality_map`]; any colour outside the palette is an error.
pub fn decode_rendered(img: &RgbImage) -> Result<QualityMap> {
    let labels = img
        .pixels()
        .map(|p| {
            PqmClass::ALL
                .into_iter()
                .find(|c| class_color(*c) == p.0)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("colour {:?} is not a quality-map class", p.0))
                })
        })
        .collect::<Result<Vec<_>>>()?;
    QualityMap::from_vec(img.height() as usize, img.width() as usize, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quality::PqmClass::*;

    fn fixture() -> QualityMap {
        QualityMap::from_rows(&[&[Tp, Fp], &[Fn, Tn]]).unwrap()
    }

    #[test]
    fn render_colors() {
        let img = render_quality_map(&fixture());
        assert_eq!(img.get_pixel(0, 0).0, [255, 0, 0]);
        assert_eq!(img.get_pixel(1, 0).0, [0, 255, 0]);
        assert_eq!(img.get_pixel(0, 1).0, [0, 255, 255]);
        assert_eq!(img.get_pixel(1, 1).0, [0, 0, 255]);
        let blue = render_quality_map(&QualityMap::filled(3, 3, Tn));
        assert!(blue.pixels().all(|p| p.0 == [0, 0, 255]));
    }

    #[test]
    fn render_decode_render_is_identical() {
        let q = fixture();
        let a = render_quality_map(&q);
        let back = decode_rendered(&a).unwrap();
        assert_eq!(back, q);
        assert_eq!(render_quality_map(&back).into_raw(), a.into_raw());
        let bad = RgbImage::from_pixel(1, 1, Rgb([1, 2, 3]));
        assert!(decode_rendered(&bad).is_err());
    }

    #[test]
    fn paletted_png_round_trip() {
        let q = QualityMap::from_rows(&[&[Tp, Fp, Tn], &[Fn, Tn, Tn], &[Tp, Tp, Fn]]).unwrap();
        let bytes = encode_quality_png(&q).unwrap();
        assert_eq!(decode_quality_png(&bytes).unwrap(), q);
        assert_eq!(&palette()[..3], &[0, 0, 255]);
    }

    #[test]
    fn mask_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = BinaryMask::from_rows(&[[1, 0, 0], [0, 1, 1]]).unwrap();
        let p = dir.path().join("m.png");
        write_mask(&p, &m).unwrap();
        assert_eq!(read_mask(&p).unwrap(), m);
        let raw = image::open(&p).unwrap().to_luma8();
        assert_eq!(raw.as_raw(), &vec![255, 0, 0, 0, 255, 255]);
        let q = fixture();
        let qp = dir.path().join("q.png");
        write_quality_map(&qp, &q).unwrap();
        assert_eq!(read_quality_map(&qp).unwrap(), q);
    }
}
