//! Prkachin–Solomon pain intensity from FACS action units.
//!
//! ```
//! use maskpain::pspi::{compute_pspi, binarize_pspi, ActionUnitVector, BinarizationPolicy};
//! use maskpain::PainLabel;
//!
//! let aus = ActionUnitVector { au4: 2, au6: 3, au7: 1, au9: 0, au10: 4, au43: 1 };
//! let score = compute_pspi(&aus).unwrap();
//! assert_eq!(score, 10);
//! assert_eq!(binarize_pspi(score, BinarizationPolicy::default()).unwrap(), PainLabel::Pain);
//! ```

use serde::{Deserialize, Serialize};

use crate::dataset::PainLabel;

pub const MAX_INTENSITY: u8 = 5;
pub const MAX_PSPI: u8 = 16;

/// Intensities of the action units that enter the PSPI score. Ordinal
/// units use 0 (absent) to 5 (FACS level E); `au43` is binary.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionUnitVector {
    /// Brow lowerer.
    pub au4: u8,
    /// Cheek raiser.
    pub au6: u8,
    /// Lid tightener.
    pub au7: u8,
    /// Nose wrinkler.
    pub au9: u8,
    /// Upper lip raiser.
    pub au10: u8,
    /// Eyes closed.
    pub au43: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PspiError {
    #[error("{unit} intensity {value} outside 0..={max}")]
    Range { unit: &'static str, value: u8, max: u8 },
    #[error("PSPI score {0} outside 0..=16")]
    Score(u8),
    #[error("binarization thresholds must satisfy 0 <= no_pain_max < pain_min <= 16 (got {no_pain_max}, {pain_min})")]
    Policy { no_pain_max: u8, pain_min: u8 },
}

impl ActionUnitVector {
    pub fn validate(&self) -> Result<(), PspiError> {
        let ordinal = [
            ("AU4", self.au4),
            ("AU6", self.au6),
            ("AU7", self.au7),
            ("AU9", self.au9),
            ("AU10", self.au10),
        ];
        for (unit, value) in ordinal {
            if value > MAX_INTENSITY {
                return Err(PspiError::Range {
                    unit,
                    value,
                    max: MAX_INTENSITY,
                });
            }
        }
        if self.au43 > 1 {
            return Err(PspiError::Range {
                unit: "AU43",
                value: self.au43,
                max: 1,
            });
        }
        Ok(())
    }
}

/// `AU4 + max(AU6, AU7) + max(AU9, AU10) + AU43`, in `0..=16`.
pub fn compute_pspi(aus: &ActionUnitVector) -> Result<u8, PspiError> {
    aus.validate()?;
    Ok(aus.au4 + aus.au6.max(aus.au7) + aus.au9.max(aus.au10) + aus.au43)
}

/// Thresholds for turning a PSPI score into a training label. Scores
/// strictly between the two thresholds are excluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinarizationPolicy {
    pub no_pain_max: u8,
    pub pain_min: u8,
}

impl Default for BinarizationPolicy {
    fn default() -> Self {
        Self {
            no_pain_max: 0,
            pain_min: 4,
        }
    }
}

impl BinarizationPolicy {
    pub fn new(no_pain_max: u8, pain_min: u8) -> Result<Self, PspiError> {
        let p = Self {
            no_pain_max,
            pain_min,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), PspiError> {
        if self.no_pain_max >= self.pain_min || self.pain_min > MAX_PSPI {
            return Err(PspiError::Policy {
                no_pain_max: self.no_pain_max,
                pain_min: self.pain_min,
            });
        }
        Ok(())
    }
}

pub fn binarize_pspi(score: u8, policy: BinarizationPolicy) -> Result<PainLabel, PspiError> {
    policy.validate()?;
    if score > MAX_PSPI {
        return Err(PspiError::Score(score));
    }
    Ok(if score <= policy.no_pain_max {
        PainLabel::NoPain
    } else if score >= policy.pain_min {
        PainLabel::Pain
    } else {
        PainLabel::Excluded
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn aus(v: [u8; 6]) -> ActionUnitVector {
        ActionUnitVector {
            au4: v[0],
            au6: v[1],
            au7: v[2],
            au9: v[3],
            au10: v[4],
            au43: v[5],
        }
    }

    #[test]
    fn examples() {
        assert_eq!(compute_pspi(&aus([0; 6])).unwrap(), 0);
        assert_eq!(compute_pspi(&aus([5, 5, 5, 5, 5, 1])).unwrap(), 16);
        assert_eq!(compute_pspi(&aus([2, 3, 1, 0, 4, 1])).unwrap(), 10);
    }

    #[test]
    fn out_of_range_intensity() {
        assert!(matches!(
            compute_pspi(&aus([6, 0, 0, 0, 0, 0])),
            Err(PspiError::Range { unit: "AU4", .. })
        ));
        assert!(matches!(
            compute_pspi(&aus([0, 0, 0, 0, 0, 2])),
            Err(PspiError::Range { unit: "AU43", .. })
        ));
    }

    #[test]
    fn binarization_defaults() {
        let p = BinarizationPolicy::default();
        assert_eq!(binarize_pspi(0, p).unwrap(), PainLabel::NoPain);
        assert_eq!(binarize_pspi(4, p).unwrap(), PainLabel::Pain);
        assert_eq!(binarize_pspi(2, p).unwrap(), PainLabel::Excluded);
        assert!(binarize_pspi(17, p).is_err());
    }

    #[test]
    fn invalid_policy() {
        assert!(BinarizationPolicy::new(4, 4).is_err());
        assert!(BinarizationPolicy::new(0, 17).is_err());
        assert!(BinarizationPolicy::new(1, 3).is_ok());
    }

    #[test]
    fn eyes_closed_adds_one_sixteenth() {
        for a in [[0, 0, 0, 0, 0, 0], [3, 2, 4, 1, 0, 0], [5, 5, 5, 5, 5, 0]] {
            let open = compute_pspi(&aus(a)).unwrap();
            let mut c = a;
            c[5] = 1;
            let closed = compute_pspi(&aus(c)).unwrap();
            assert_eq!(closed - open, 1);
            assert_eq!(f64::from(closed - open) / f64::from(MAX_PSPI), 0.0625);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn valid() -> impl Strategy<Value = [u8; 6]> {
            (0u8..=5, 0u8..=5, 0u8..=5, 0u8..=5, 0u8..=5, 0u8..=1)
                .prop_map(|(a, b, c, d, e, f)| [a, b, c, d, e, f])
        }

        proptest! {
            #[test]
            fn monotone_in_every_unit(v in valid(), unit in 0usize..6) {
                let base = compute_pspi(&aus(v)).unwrap();
                let max = if unit == 5 { 1 } else { 5 };
                if v[unit] < max {
                    let mut up = v;
                    up[unit] += 1;
                    prop_assert!(compute_pspi(&aus(up)).unwrap() >= base);
                }
            }
        }
    }
}
