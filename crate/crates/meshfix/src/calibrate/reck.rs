//! Triangular-mesh calibration driver (intensity detectors only).

use super::chip::MeasurableChip;
use super::CalibrationRecord;
use crate::error::CalibrationError;

/// Calibrate a triangular chip using intensity detectors only.
pub fn calibrate_reck(_chip: &mut dyn MeasurableChip) -> Result<CalibrationRecord, CalibrationError> {
    todo!("triangular driver")
}
