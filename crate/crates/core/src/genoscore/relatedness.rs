use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelatednessClass {
    DuplicateOrMz,
    ParentChild,
    FullSibling,
    SecondOrThirdDegree,
    Unrelated,
}

pub const KINSHIP_DUPLICATE: f64 = 0.3540;
pub const KINSHIP_FIRST_DEGREE: f64 = 0.1770;
pub const KINSHIP_THIRD_DEGREE: f64 = 0.0442;
pub const IBS0_PARENT_CHILD: f64 = 0.0012;

/// KING-style pair classification from kinship and IBS0.
///
/// Kinship bands are open below and closed above. IBS0 only matters inside
/// the first-degree band: below 0.0012 is parent-child, otherwise siblings.
pub fn classify_relatedness(kinship: f64, ibs0: f64) -> Result<RelatednessClass> {
    if !kinship.is_finite() || !ibs0.is_finite() || kinship < 0.0 || ibs0 < 0.0 {
        return Err(Error::Domain(format!("kinship ({kinship}) and IBS0 ({ibs0}) must be finite and non-negative")));
    }
    Ok(if kinship > KINSHIP_DUPLICATE {
        RelatednessClass::DuplicateOrMz
    } else if kinship > KINSHIP_FIRST_DEGREE {
        if ibs0 < IBS0_PARENT_CHILD {
            RelatednessClass::ParentChild
        } else {
            RelatednessClass::FullSibling
        }
    } else if kinship > KINSHIP_THIRD_DEGREE {
        RelatednessClass::SecondOrThirdDegree
    } else {
        RelatednessClass::Unrelated
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use RelatednessClass::*;

    #[test]
    fn table_rows() {
        assert_eq!(classify_relatedness(0.25, 0.002).unwrap(), FullSibling);
        assert_eq!(classify_relatedness(0.25, 0.0005).unwrap(), ParentChild);
        assert_eq!(classify_relatedness(0.40, 0.0).unwrap(), DuplicateOrMz);
        assert_eq!(classify_relatedness(0.40, 0.5).unwrap(), DuplicateOrMz);
        assert_eq!(classify_relatedness(0.10, 0.3).unwrap(), SecondOrThirdDegree);
        assert_eq!(classify_relatedness(0.01, 0.3).unwrap(), Unrelated);
    }

    #[test]
    fn boundaries_are_closed_above() {
        assert_eq!(classify_relatedness(0.3540, 0.01).unwrap(), FullSibling);
        assert_eq!(classify_relatedness(0.1770, 0.01).unwrap(), SecondOrThirdDegree);
        assert_eq!(classify_relatedness(0.0442, 0.01).unwrap(), Unrelated);
        assert_eq!(classify_relatedness(0.25, 0.0012).unwrap(), FullSibling);
    }

    #[test]
    fn rejects_negative() {
        assert!(classify_relatedness(-0.1, 0.0).is_err());
        assert!(classify_relatedness(0.1, -0.01).is_err());
        assert!(classify_relatedness(f64::NAN, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn every_valid_pair_has_a_class(k in 0.0f64..1.0, i in 0.0f64..1.0) {
            let c = classify_relatedness(k, i).unwrap();
            let expected_band = if k > 0.354 { 0 } else if k > 0.177 { 1 } else if k > 0.0442 { 2 } else { 3 };
            let band = match c { DuplicateOrMz => 0, ParentChild | FullSibling => 1, SecondOrThirdDegree => 2, Unrelated => 3 };
            prop_assert_eq!(band, expected_band);
        }
    }
}
