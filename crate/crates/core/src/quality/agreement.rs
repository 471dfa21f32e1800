use super::QualityError;

/// Fraction of pairs whose two labels are equal.
pub fn exact_match_agreement<T: PartialEq>(pairs: &[(T, T)]) -> Result<f64, QualityError> {
    if pairs.is_empty() {
        return Err(QualityError::EmptyPairs);
    }
    let matches = pairs.iter().filter(|(a, b)| a == b).count();
    Ok(matches as f64 / pairs.len() as f64)
}
