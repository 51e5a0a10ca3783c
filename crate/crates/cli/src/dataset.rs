//! Ground-truth file written next to a simulated dataset.

use serde::{Deserialize, Serialize};

pub const IMU_FILE: &str = "imu.csv";
pub const TRACKS_FILE: &str = "tracks.json";
pub const CALIB_FILE: &str = "calib.json";
pub const GT_FILE: &str = "gt.json";
pub const ESTIMATE_FILE: &str = "estimate.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub v0: [f64; 3],
    pub g0: [f64; 3],
    pub window: usize,
    pub start_frame: usize,
    pub sigma_px: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accel_bias: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gyro_bias: Option<[f64; 3]>,
}
