//! Conversions between rasters and batched `B×C×H×W` tensors.

use candle_core::{DType, Device, Tensor};
use image::RgbImage;

use crate::error::{Error, Result};
use crate::quality::{BinaryMask, EdgeMap, PqmClass, QualityMap};

fn common_dims(dims: impl IntoIterator<Item = (usize, usize)>) -> Result<(usize, usize, usize)> {
    let mut n = 0;
    let mut first = None;
    for d in dims {
        match first {
            None => first = Some(d),
            Some(f) if f != d => return Err(crate::error::shape_err(f, d)),
            _ => {}
        }
        n += 1;
    }
    let (h, w) = first.ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    Ok((n, h, w))
}

/// `B×3×H×W` with raw 0..255 values.
pub fn images_to_tensor(images: &[&RgbImage], dtype: DType, device: &Device) -> Result<Tensor> {
    let (b, h, w) = common_dims(
        images
            .iter()
            .map(|i| (i.height() as usize, i.width() as usize)),
    )?;
    let mut data = Vec::with_capacity(b * 3 * h * w);
    for img in images {
        for c in 0..3 {
            data.extend(img.pixels().map(|p| p.0[c] as f32));
        }
    }
    Ok(Tensor::from_vec(data, (b, 3, h, w), device)?.to_dtype(dtype)?)
}

/// `B×1×H×W` in {0,1}.
pub fn masks_to_tensor(masks: &[&BinaryMask], dtype: DType, device: &Device) -> Result<Tensor> {
    let (b, h, w) = common_dims(masks.iter().map(|m| m.dims()))?;
    let data: Vec<f32> = masks.iter().flat_map(|m| m.to_f32()).collect();
    Ok(Tensor::from_vec(data, (b, 1, h, w), device)?.to_dtype(dtype)?)
}

pub fn edges_to_tensor(edges: &[&EdgeMap], dtype: DType, device: &Device) -> Result<Tensor> {
    let masks: Vec<&BinaryMask> = edges.iter().map(|e| e.mask()).collect();
    masks_to_tensor(&masks, dtype, device)
}

/// One-hot `B×4×H×W` in logit-channel order.
pub fn quality_to_tensor(maps: &[&QualityMap], dtype: DType, device: &Device) -> Result<Tensor> {
    let (b, h, w) = common_dims(maps.iter().map(|q| q.dims()))?;
    let data: Vec<f32> = maps.iter().flat_map(|q| q.to_one_hot()).collect();
    Ok(Tensor::from_vec(data, (b, 4, h, w), device)?.to_dtype(dtype)?)
}

/// Per-pixel argmax over the class channel; ties resolve to the lowest channel.
pub fn argmax_quality(logits: &Tensor) -> Result<Vec<QualityMap>> {
    let (b, c, h, w) = logits.dims4()?;
    if c != 4 {
        return Err(Error::Shape {
            expected: "Bx4xHxW".into(),
            actual: format!("{b}x{c}x{h}x{w}"),
        });
    }
    let v = logits
        .to_dtype(DType::F64)?
        .flatten_all()?
        .to_vec1::<f64>()?;
    let plane = h * w;
    (0..b)
        .map(|i| {
            let base = i * 4 * plane;
            let labels = (0..plane)
                .map(|p| {
                    let mut best = 0;
                    for ch in 1..4 {
                        if v[base + ch * plane + p] > v[base + best * plane + p] {
                            best = ch;
                        }
                    }
                    PqmClass::from_channel(best).expect("channel < 4")
                })
                .collect();
            QualityMap::from_vec(h, w, labels)
        })
        .collect()
}

/// `sigmoid(logit) > 0.5`, i.e. `logit > 0`, for a `B×1×H×W` tensor.
pub fn threshold_edges(logits: &Tensor) -> Result<Vec<EdgeMap>> {
    let (b, _, h, w) = logits.dims4()?;
    let v = logits
        .to_dtype(DType::F64)?
        .flatten_all()?
        .to_vec1::<f64>()?;
    let plane = h * w;
    (0..b)
        .map(|i| {
            let data = v[i * plane..(i + 1) * plane]
                .iter()
                .map(|&x| (x > 0.0) as u8)
                .collect();
            Ok(EdgeMap(BinaryMask::from_vec(h, w, data)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quality::PqmClass::*;

    #[test]
    fn one_hot_argmax_round_trip() {
        let q = QualityMap::from_rows(&[&[Tp, Fp, Tn], &[Fn, Tn, Tp]]).unwrap();
        let t = quality_to_tensor(&[&q, &q], DType::F32, &Device::Cpu).unwrap();
        assert_eq!(t.dims(), &[2, 4, 2, 3]);
        assert_eq!(argmax_quality(&t).unwrap(), vec![q.clone(), q]);
    }

    #[test]
    fn image_layout_is_channel_major() {
        let img = RgbImage::from_fn(2, 1, |x, _| {
            image::Rgb([x as u8, 10 + x as u8, 20 + x as u8])
        });
        let t = images_to_tensor(&[&img], DType::F32, &Device::Cpu).unwrap();
        assert_eq!(
            t.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            vec![0., 1., 10., 11., 20., 21.]
        );
    }

    #[test]
    fn mismatched_batch_is_rejected() {
        let a = BinaryMask::zeros(2, 2);
        let b = BinaryMask::zeros(3, 2);
        assert!(masks_to_tensor(&[&a, &b], DType::F32, &Device::Cpu).is_err());
        assert!(masks_to_tensor(&[], DType::F32, &Device::Cpu).is_err());
    }

    #[test]
    fn edge_threshold_at_zero_logit() {
        let t = Tensor::new(&[[[[-1f32, 0.0, 0.5]]]], &Device::Cpu).unwrap();
        let e = threshold_edges(&t).unwrap();
        assert_eq!(e[0].mask().as_slice(), &[0, 0, 1]);
    }
}
