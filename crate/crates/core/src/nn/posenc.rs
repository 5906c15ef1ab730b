use sgdvit_tensor::{Element, Tensor};

use crate::error::{CoreError, Result};

/// Fixed 2-D sinusoidal encodings, one row of width `dim` per `(y, x)`
/// coordinate. The first half encodes `y`, the second `x`; each half holds
/// `dim/4` sines followed by `dim/4` cosines at frequencies
/// `temperature^(-i / (dim/4))`.
pub fn sinusoid_2d<T: Element>(coords: &[(f64, f64)], dim: usize, temperature: f64) -> Result<Tensor<T>> {
    if !dim.is_multiple_of(4) || dim == 0 {
        return Err(CoreError::config("model.channels", format!("positional encoding needs a multiple of 4, got {dim}")));
    }
    if coords.is_empty() {
        return Err(CoreError::data("positional encoding of zero coordinates"));
    }
    let q = dim / 4;
    let freqs: Vec<f64> = (0..q).map(|i| temperature.powf(-(i as f64) / q as f64)).collect();
    let mut data = Vec::with_capacity(coords.len() * dim);
    for &(y, x) in coords {
        for p in [y, x] {
            data.extend(freqs.iter().map(|f| (p * f).sin()));
            data.extend(freqs.iter().map(|f| (p * f).cos()));
        }
    }
    Ok(Tensor::from_f64([coords.len(), dim], &data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_values() {
        let e = sinusoid_2d::<f64>(&[(0.0, 0.0), (1.0, 2.0)], 8, 32.0).unwrap();
        assert_eq!(e.shape(), &[2, 8]);
        assert_eq!(&e.data()[..8], &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
        let f1 = 32f64.powf(-0.5);
        let row = &e.data()[8..];
        assert!((row[0] - 1f64.sin()).abs() < 1e-15);
        assert!((row[1] - f1.sin()).abs() < 1e-15);
        assert!((row[3] - f1.cos()).abs() < 1e-15);
        assert!((row[4] - 2f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn nearby_positions_are_more_similar() {
        let e = sinusoid_2d::<f64>(&[(5.0, 5.0), (5.0, 6.0), (5.0, 12.0)], 32, 32.0).unwrap();
        let dot = |a: usize, b: usize| -> f64 { (0..32).map(|i| e.data()[a * 32 + i] * e.data()[b * 32 + i]).sum() };
        assert!(dot(0, 0) > dot(0, 1));
        assert!(dot(0, 1) > dot(0, 2));
    }

    #[test]
    fn rejects_bad_width() {
        assert!(sinusoid_2d::<f32>(&[(0.0, 0.0)], 6, 32.0).is_err());
    }
}
