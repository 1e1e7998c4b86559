use crate::error::{Error, Result};

/// Smallest probability fed to the logarithm.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// `−Σ y·ln(max(ŷ, 1e-12))` for a probability vector and a one-hot label.
pub fn cross_entropy(prediction: &[f64], one_hot: &[f64]) -> Result<f64> {
    if prediction.len() != one_hot.len() {
        return Err(Error::shape(format!(
            "prediction has {} classes, label has {}",
            prediction.len(),
            one_hot.len()
        )));
    }
    let total: f64 = prediction.iter().sum();
    if !((total - 1.0).abs() <= 1e-9) {
        return Err(Error::InvalidArgument(format!("prediction sums to {total}, not 1")));
    }
    let ones = one_hot.iter().filter(|&&y| y == 1.0).count();
    if ones != 1 || one_hot.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::InvalidLabel(format!("{one_hot:?} is not one-hot")));
    }
    Ok(prediction
        .iter()
        .zip(one_hot)
        .filter(|(_, &y)| y == 1.0)
        .map(|(&p, _)| -p.max(PROBABILITY_FLOOR).ln())
        .sum())
}

/// One-hot vector for a class index.
pub fn one_hot(label: usize, classes: usize) -> Result<Vec<f64>> {
    if label >= classes {
        return Err(Error::InvalidLabel(format!("label {label} with {classes} classes")));
    }
    let mut v = vec![0.0; classes];
    v[label] = 1.0;
    Ok(v)
}
