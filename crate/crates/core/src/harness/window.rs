use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One train/test split; the test slice starts where training ends.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub index: usize,
    pub train: Range<usize>,
    pub test: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub train_len: usize,
    pub test_len: usize,
    pub stride: usize,
    pub windows: Vec<Window>,
}

impl WindowPlan {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// Rolling windows at offsets `0, stride, 2·stride, …` while train + test still fits.
pub fn make_windows(
    series_len: usize,
    train_len: usize,
    test_len: usize,
    stride: usize,
) -> Result<WindowPlan> {
    if train_len == 0 || test_len == 0 || stride == 0 {
        return Err(Error::Validation(format!(
            "train length, test length and stride must be positive (got {train_len}, {test_len}, {stride})"
        )));
    }
    let span = train_len + test_len;
    if series_len < span {
        return Err(Error::Validation(format!(
            "series of {series_len} rows is shorter than one window ({train_len} train + {test_len} test)"
        )));
    }
    let count = (series_len - span) / stride + 1;
    let windows = (0..count)
        .map(|index| {
            let start = index * stride;
            Window {
                index,
                train: start..start + train_len,
                test: start + train_len..start + span,
            }
        })
        .collect();
    Ok(WindowPlan {
        train_len,
        test_len,
        stride,
        windows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counts() {
        assert_eq!(make_windows(10_500, 7500, 1500, 1500).unwrap().len(), 2);
        assert_eq!(make_windows(9_000, 7500, 1500, 1500).unwrap().len(), 1);
        assert_eq!(make_windows(24_090, 7500, 1500, 1500).unwrap().len(), 11);
        assert_eq!(make_windows(24_000, 7500, 1500, 1500).unwrap().len(), 11);
        assert!(matches!(
            make_windows(8_999, 7500, 1500, 1500),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn second_window_is_shifted_by_stride() {
        let plan = make_windows(10_500, 7500, 1500, 1500).unwrap();
        assert_eq!(plan.windows[1].train, 1500..9000);
        assert_eq!(plan.windows[1].test, 9000..10_500);
    }

    proptest! {
        #[test]
        fn windows_are_well_formed(
            train in 1usize..500, test in 1usize..200, stride in 1usize..300, extra in 0usize..2000,
        ) {
            let len = train + test + extra;
            let plan = make_windows(len, train, test, stride).unwrap();
            prop_assert_eq!(plan.len(), extra / stride + 1);
            for w in &plan.windows {
                prop_assert_eq!(w.test.start, w.train.end);
                prop_assert!(w.test.end <= len);
            }
            for pair in plan.windows.windows(2) {
                prop_assert!(pair[0].train.start < pair[1].train.start);
            }
            // with stride = test length the test slices tile without gaps
            let tiled = make_windows(len, train, test, test).unwrap();
            for pair in tiled.windows.windows(2) {
                prop_assert_eq!(pair[0].test.end, pair[1].test.start);
            }
        }
    }
}
