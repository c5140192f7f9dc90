//! Closed-form values checked against numbers evaluated independently at
//! 30 digits.

use std::f64::consts::PI;

use approx::assert_relative_eq;
use stirap_core::matched::{complete_transfer_areas, second_order_transfer_populations};
use stirap_core::scenarios::{sweep, Designer, SweepOptions};

#[test]
fn second_order_populations_match_high_precision_values() {
    let cases = [
        (
            0.1 * PI,
            [
                0.990_038_240_335_772_9,
                0.009_957_162_096_492_183,
                4.597_567_734_920_028_5e-6,
            ],
        ),
        (
            PI,
            [
                0.316_563_835_510_353_9,
                0.644_568_015_784_229_8,
                0.038_868_148_705_416_35,
            ],
        ),
        (
            5.0 * PI,
            [
                0.037_538_535_855_994_54,
                0.049_327_820_359_901_93,
                0.913_133_643_784_103_5,
            ],
        ),
    ];
    for (area, expected) in cases {
        let p = second_order_transfer_populations(area).unwrap();
        for k in 0..3 {
            assert_relative_eq!(p[k], expected[k], max_relative = 1e-12);
        }
    }
}

#[test]
fn complete_transfer_at_listed_areas() {
    for a in complete_transfer_areas(3) {
        let p = second_order_transfer_populations(a).unwrap();
        assert!((p[2] - 1.0).abs() < 1e-12, "{a}");
    }
}

#[test]
fn third_order_sweep_reports_the_asymptotic_loss() {
    let rows = sweep(
        &[20.0 * PI],
        Designer::ThirdState3,
        &SweepOptions::default(),
    );
    let formula = rows[0].p3_formula().unwrap();
    assert_relative_eq!(
        1.0 - formula,
        0.009_950_248_756_218_905,
        max_relative = 1e-12
    );
    let numeric = rows[0].p3_numeric().unwrap();
    assert!(((1.0 - numeric) / (1.0 - formula) - 1.0).abs() < 0.5);
}

#[test]
fn state2_sweep_has_no_formula_column() {
    let rows = sweep(&[16.0], Designer::ThirdState2, &SweepOptions::default());
    assert!(rows[0].p3_formula().is_none());
    assert!(rows[0].numeric.as_ref().unwrap()[1] > 0.95);
}
