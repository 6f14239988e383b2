//! Energy-domain decibel arithmetic: Leq is the constant level carrying
//! the same acoustic energy as a varying signal over a window.

use serde::{Deserialize, Serialize};

/// `10^(L/10)`: relative acoustic energy of a level.
#[inline]
pub fn db_to_energy(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// `10·log10(e)`: level of a relative energy.
#[inline]
pub fn energy_to_db(energy: f64) -> f64 {
    10.0 * energy.log10()
}

/// How in-window samples collapse to one reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregateMode {
    /// Leq: mean in the energy domain. The acoustics-correct default.
    #[default]
    Energetic,
    /// Plain mean of dB values; kept for parity with naive averaging.
    Arithmetic,
}

/// Collapse a window of dB samples into one value, or `None` for an
/// empty window (no reading is emitted).
pub fn window_aggregate(samples: &[f64], mode: AggregateMode) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let n = samples.len() as f64;
    Some(match mode {
        AggregateMode::Energetic => {
            energy_to_db(samples.iter().map(|&l| db_to_energy(l)).sum::<f64>() / n)
        }
        AggregateMode::Arithmetic => samples.iter().sum::<f64>() / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn energetic_mean_of_60_and_70() {
        // 10·log10((10^6 + 10^7)/2) = 67.4036…
        let leq = window_aggregate(&[60.0, 70.0], AggregateMode::Energetic).unwrap();
        assert!((leq - 67.40).abs() < 0.01, "got {leq}");
        assert!((leq - 67.40362689494245).abs() < 1e-9);
    }

    #[test]
    fn constant_window_is_fixed_point() {
        for mode in [AggregateMode::Energetic, AggregateMode::Arithmetic] {
            let v = window_aggregate(&[65.0, 65.0, 65.0], mode).unwrap();
            assert!((v - 65.0).abs() < 1e-12);
        }
    }

    #[test]
    fn arithmetic_mean_of_60_and_70() {
        let v = window_aggregate(&[60.0, 70.0], AggregateMode::Arithmetic).unwrap();
        assert!((v - 65.0).abs() < 1e-12);
    }

    #[test]
    fn empty_window_emits_nothing() {
        assert_eq!(window_aggregate(&[], AggregateMode::Energetic), None);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // Jensen: the energetic mean dominates the arithmetic mean.
            #[test]
            fn energetic_dominates_arithmetic(samples in proptest::collection::vec(20.0f64..110.0, 1..40)) {
                let e = window_aggregate(&samples, AggregateMode::Energetic).unwrap();
                let a = window_aggregate(&samples, AggregateMode::Arithmetic).unwrap();
                prop_assert!(e >= a - 1e-9);
                let spread = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    - samples.iter().cloned().fold(f64::INFINITY, f64::min);
                if spread > 1.0 {
                    prop_assert!(e > a);
                }
            }

            #[test]
            fn db_energy_round_trip(db in -20.0f64..140.0) {
                prop_assert!((energy_to_db(db_to_energy(db)) - db).abs() < 1e-9);
            }
        }
    }
}
