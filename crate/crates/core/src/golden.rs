//! Reference measurements from the physical 16-bit CMOS camera.
//!
//! The calibration table seeds the simulator's default response curve. The
//! `CAMERA_*` recovery tables are shipped for side-by-side display in
//! reports only; the simulator is a different device, so they are never
//! used as pass/fail oracles.

/// `(design dB, scaled irradiance, mean output)` for the 16 calibration
/// patches, brightest first.
pub const CALIBRATION_CRF: [(f64, f64, f64); 16] = [
    (0.0, 1_000_000.0, 64537.8),
    (8.0, 398_107.2, 59537.6),
    (14.0, 199_526.2, 52046.9),
    (18.0, 125_892.5, 47782.7),
    (28.0, 39_810.7, 42901.4),
    (32.0, 25_118.9, 37486.7),
    (36.0, 15_848.9, 26563.7),
    (40.0, 10_000.0, 18573.6),
    (44.0, 6_309.6, 13003.9),
    (52.0, 2_511.9, 5200.5),
    (58.0, 1_258.9, 2134.2),
    (64.0, 631.0, 1438.2),
    (70.0, 316.2, 804.4),
    (78.0, 125.9, 486.5),
    (84.0, 63.1, 389.6),
    (90.0, 31.6, 285.5),
];

/// Black (no light) zone output.
pub const CALIBRATION_BLACK_LEVEL: f64 = 191.3;

/// Exposure the calibration table was recorded at, seconds.
pub const CALIBRATION_EXPOSURE: f64 = 3.703e-3;

/// Brightest calibration patch flagged as containing full-scale pixels:
/// patches 0..=18 dB show saturation, 28 dB is the first clean one.
pub const FIRST_UNSATURATED_DB: f64 = 28.0;

/// Shipped calibration table in the `crf.csv` format.
pub const REFERENCE_CRF_CSV: &str = include_str!("../data/reference_crf.csv");

/// Test-target recovery with a 16-exposure ladder (design dB column first,
/// then the proposed method and five weighted algorithms).
pub const CAMERA_LADDER16_CSV: &str = include_str!("../data/camera_ladder16.csv");

/// Two-exposure recovery of the 78 dB test target.
pub const CAMERA_TWO_EXPOSURE_CSV: &str = include_str!("../data/camera_two_exposure.csv");

/// Two-exposure recovery across light-box illumination levels.
pub const CAMERA_ILLUMINATION_CSV: &str = include_str!("../data/camera_illumination.csv");

/// 16 exposure times of the factor-2 comparison ladder, seconds.
pub fn ladder16() -> Vec<f64> {
    let longest = 970.903e-3;
    (0..16).map(|k| longest / f64::from(1u32 << (15 - k))).collect()
}

/// Parses one of the golden tables into `(header, rows)`.
pub fn parse_table(csv_text: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut lines = csv_text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let header = lines.next().map(|h| h.split(',').map(|s| s.trim().to_string()).collect()).unwrap_or_default();
    let rows = lines.map(|l| l.split(',').map(|s| s.trim().parse().unwrap_or(f64::NAN)).collect()).collect();
    (header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn irradiance_column_follows_db() {
        for &(db, irr, _) in &CALIBRATION_CRF {
            let expect = 1e6 * 10f64.powf(-db / 20.0);
            assert!((irr - expect).abs() <= 0.05 + 1e-9 * expect, "{db}: {irr} vs {expect}");
        }
    }

    #[test]
    fn ladder_matches_published_settings() {
        let ms: Vec<f64> = ladder16().iter().map(|t| t * 1e3).collect();
        let published = [
            0.029, 0.059, 0.118, 0.237, 0.474, 0.948, 1.896, 3.792, 7.585, 15.17, 30.340, 60.681, 121.362, 242.725,
            485.451, 970.903,
        ];
        for (got, want) in ms.iter().zip(published) {
            assert!((got - want).abs() < 1.5e-3, "{got} vs {want}");
        }
    }

    #[test]
    fn display_tables_have_sixteen_rows() {
        for text in [CAMERA_LADDER16_CSV, CAMERA_TWO_EXPOSURE_CSV, CAMERA_ILLUMINATION_CSV] {
            let (header, rows) = parse_table(text);
            assert_eq!(rows.len(), 16);
            assert!(rows.iter().all(|r| r.len() == header.len()));
            assert!(rows[0].iter().all(|&v| v == 0.0));
        }
    }
}
