use serde::{Deserialize, Serialize};

use super::{ModelError, ModelKind};

/// Predicts the same coordinate for every input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantModel {
    pub kind: ModelKind,
    pub point: [f64; 2],
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Per-axis mean and per-axis median of the training coordinates.
pub fn constant_baselines(
    targets: &[[f64; 2]],
) -> Result<(ConstantModel, ConstantModel), ModelError> {
    if targets.is_empty() {
        return Err(ModelError::EmptyTraining);
    }
    let n = targets.len() as f64;
    let mean = [0, 1].map(|a| targets.iter().map(|t| t[a]).sum::<f64>() / n);
    let med = [0, 1].map(|a| median(targets.iter().map(|t| t[a]).collect()));
    Ok((
        ConstantModel {
            kind: ModelKind::Mean,
            point: mean,
        },
        ConstantModel {
            kind: ModelKind::Median,
            point: med,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_median() {
        let (mean, med) = constant_baselines(&[[0.0, 0.0], [2.0, 10.0], [10.0, 11.0]]).unwrap();
        assert_eq!(mean.point, [4.0, 7.0]);
        assert_eq!(med.point, [2.0, 10.0]);
        let (_, med) = constant_baselines(&[[0.0, 1.0], [2.0, 3.0]]).unwrap();
        assert_eq!(med.point, [1.0, 2.0]);
        assert!(constant_baselines(&[]).is_err());
    }
}
