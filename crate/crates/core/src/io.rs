//! File formats: IMU streams as CSV, calibrations, tracks and estimates as JSON.
//!
//! All numbers go through `f64` on disk.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{InitEstimate, Method};
use crate::geometry::{CameraCalibration, ImuSample, ImuStream, Observation, RigCalibration};
use crate::scalar::{lit, to_f64, Scalar};
use crate::system::PairingMode;

pub const IMU_HEADER: [&str; 7] = ["t", "wx", "wy", "wz", "ax", "ay", "az"];

/// Relative tolerance on the spacing of IMU timestamps.
const DT_TOL: f64 = 1e-6;

fn json_error(e: serde_json::Error) -> Error {
    if e.is_io() {
        return Error::Io(e.into());
    }
    Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

fn m3<T: Scalar>(m: &Matrix3<T>) -> [[f64; 3]; 3] {
    std::array::from_fn(|r| std::array::from_fn(|c| to_f64(m[(r, c)])))
}

fn from_m3<T: Scalar>(a: &[[f64; 3]; 3]) -> Matrix3<T> {
    Matrix3::from_fn(|r, c| lit(a[r][c]))
}

fn v3<T: Scalar>(v: &Vector3<T>) -> [f64; 3] {
    [to_f64(v.x), to_f64(v.y), to_f64(v.z)]
}

fn from_v3<T: Scalar>(a: &[f64; 3]) -> Vector3<T> {
    Vector3::new(lit(a[0]), lit(a[1]), lit(a[2]))
}

/// Reads `t,wx,wy,wz,ax,ay,az` rows. Timestamps must be uniformly spaced.
pub fn read_imu_csv<T: Scalar>(reader: impl Read) -> Result<ImuStream<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(csv_error)?.clone();
    if header.iter().ne(IMU_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: format!("expected header `{}`", IMU_HEADER.join(",")),
        });
    }
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let mut vals = [0.0; 7];
        let mut column = 1;
        for (k, field) in record.iter().enumerate() {
            vals[k] = field.parse::<f64>().map_err(|e| Error::Parse {
                line,
                column,
                message: format!("field `{}`: {e}", IMU_HEADER[k]),
            })?;
            column += field.len() + 1;
        }
        times.push((vals[0], line));
        samples.push(ImuSample::new(
            Vector3::new(lit(vals[1]), lit(vals[2]), lit(vals[3])),
            Vector3::new(lit(vals[4]), lit(vals[5]), lit(vals[6])),
        ));
    }
    if times.len() < 2 {
        return Err(Error::invalid("IMU CSV needs at least two samples"));
    }
    let t0 = times[0].0;
    let dt = (times[times.len() - 1].0 - t0) / (times.len() - 1) as f64;
    for (k, &(t, line)) in times.iter().enumerate() {
        if (t - (t0 + dt * k as f64)).abs() > DT_TOL * dt.abs().max(f64::MIN_POSITIVE) * (k as f64).max(1.0) {
            return Err(Error::Parse {
                line,
                column: 1,
                message: format!("timestamp {t} breaks the uniform spacing of {dt} s"),
            });
        }
    }
    ImuStream::new(samples, lit(dt), lit(t0))
}

fn csv_error(e: csv::Error) -> Error {
    let (line, column) = match e.kind() {
        csv::ErrorKind::UnequalLengths { pos, .. } => (pos.as_ref().map_or(0, |p| p.line() as usize), 1),
        csv::ErrorKind::Utf8 { pos, err } => (pos.as_ref().map_or(0, |p| p.line() as usize), err.field() + 1),
        _ => (0, 0),
    };
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            line,
            column,
            message: format!("{kind:?}"),
        },
    }
}

pub fn write_imu_csv<T: Scalar>(stream: &ImuStream<T>, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        k => Error::invalid(format!("{k:?}")),
    };
    w.write_record(IMU_HEADER).map_err(io)?;
    for (k, s) in stream.samples().iter().enumerate() {
        let row = [
            to_f64(stream.time(k)),
            to_f64(s.omega.x),
            to_f64(s.omega.y),
            to_f64(s.omega.z),
            to_f64(s.accel.x),
            to_f64(s.accel.y),
            to_f64(s.accel.z),
        ];
        w.write_record(row.iter().map(|v| format!("{v:e}"))).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraJson {
    k: [[f64; 3]; 3],
    r_cam_imu: [[f64; 3]; 3],
    t_cam_imu: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RigJson {
    cameras: Vec<CameraJson>,
    readout_per_line: f64,
    image_height: usize,
    fps: f64,
}

/// Calibration document. Matrices are lists of rows.
pub fn read_calibration_json<T: Scalar>(reader: impl Read) -> Result<RigCalibration<T>> {
    let doc: RigJson = serde_json::from_reader(reader).map_err(json_error)?;
    let cameras = doc
        .cameras
        .iter()
        .map(|c| CameraCalibration::new(from_m3(&c.k), from_m3(&c.r_cam_imu), from_v3(&c.t_cam_imu)))
        .collect::<Result<Vec<_>>>()?;
    RigCalibration::new(cameras, lit(doc.readout_per_line), doc.image_height, lit(doc.fps))
}

pub fn write_calibration_json<T: Scalar>(calib: &RigCalibration<T>, writer: impl Write) -> Result<()> {
    let doc = RigJson {
        cameras: calib
            .cameras
            .iter()
            .map(|c| CameraJson {
                k: m3(&c.k),
                r_cam_imu: m3(&c.r_cam_imu),
                t_cam_imu: v3(&c.t_cam_imu),
            })
            .collect(),
        readout_per_line: to_f64(calib.readout_per_line),
        image_height: calib.image_height,
        fps: to_f64(calib.fps),
    };
    serde_json::to_writer_pretty(writer, &doc).map_err(json_error)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObservationJson {
    cam_id: usize,
    frame: usize,
    row: usize,
    u: [f64; 2],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TracksJson {
    pairing: PairingMode,
    tracks: Vec<Vec<ObservationJson>>,
}

/// Feature tracks with the pairing mode used to build correspondences.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackFile<T: Scalar> {
    pub pairing: PairingMode,
    pub tracks: Vec<Vec<Observation<T>>>,
}

pub fn read_tracks_json<T: Scalar>(reader: impl Read) -> Result<TrackFile<T>> {
    let doc: TracksJson = serde_json::from_reader(reader).map_err(json_error)?;
    Ok(TrackFile {
        pairing: doc.pairing,
        tracks: doc
            .tracks
            .iter()
            .map(|t| {
                t.iter()
                    .map(|o| Observation::new(o.cam_id, o.frame, o.row, lit(o.u[0]), lit(o.u[1])))
                    .collect()
            })
            .collect(),
    })
}

pub fn write_tracks_json<T: Scalar>(file: &TrackFile<T>, writer: impl Write) -> Result<()> {
    let doc = TracksJson {
        pairing: file.pairing,
        tracks: file
            .tracks
            .iter()
            .map(|t| {
                t.iter()
                    .map(|o| ObservationJson {
                        cam_id: o.cam_id,
                        frame: o.frame,
                        row: o.row,
                        u: [to_f64(o.u.x), to_f64(o.u.y)],
                    })
                    .collect()
            })
            .collect(),
    };
    serde_json::to_writer(writer, &doc).map_err(json_error)
}

/// On-disk form of an [`InitEstimate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateJson {
    pub method: Method,
    pub v0: [f64; 3],
    pub g0: [f64; 3],
    /// Row-major 6×6 covariance of `[v0; g0]`.
    pub cov: Option<Vec<f64>>,
    /// Row-major 6×6 covariance accounting for observations shared between pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov_correlated: Option<Vec<f64>>,
    pub sigma_hat: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accel_bias: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gyro_bias: Option<[f64; 3]>,
}

fn row_major_6<T: Scalar>(m: &DMatrix<T>) -> Vec<f64> {
    (0..6).flat_map(|r| (0..6).map(move |c| to_f64(m[(r, c)]))).collect()
}

impl EstimateJson {
    pub fn from_estimate<T: Scalar>(est: &InitEstimate<T>) -> Self {
        let block = |m: &DMatrix<T>| row_major_6(&m.view((0, 0), (6, 6)).into_owned());
        Self {
            method: est.method,
            v0: v3(&est.v0),
            g0: v3(&est.g0),
            cov: est.cov.as_ref().map(block),
            cov_correlated: est.cov_correlated.as_ref().map(block),
            sigma_hat: est.sigma_hat.map(to_f64),
            iterations: est.iterations,
            converged: est.converged,
            accel_bias: est.accel_bias.as_ref().map(v3),
            gyro_bias: est.gyro_bias.as_ref().map(v3),
        }
    }

    pub fn v0(&self) -> Vector3<f64> {
        from_v3(&self.v0)
    }

    pub fn g0(&self) -> Vector3<f64> {
        from_v3(&self.g0)
    }

    /// The covariance as a matrix.
    pub fn cov_matrix(&self) -> Option<DMatrix<f64>> {
        self.cov.as_ref().map(|c| DMatrix::from_row_slice(6, 6, c))
    }
}

pub fn read_json<D: serde::de::DeserializeOwned>(reader: impl Read) -> Result<D> {
    serde_json::from_reader(reader).map_err(json_error)
}

pub fn write_json<S: Serialize>(value: &S, writer: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(writer, value).map_err(json_error)
}

fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>> {
    Ok(std::io::BufReader::new(std::fs::File::open(path)?))
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_imu_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<ImuStream<T>> {
    read_imu_csv(open(path.as_ref())?)
}

pub fn save_imu_csv<T: Scalar>(stream: &ImuStream<T>, path: impl AsRef<Path>) -> Result<()> {
    write_imu_csv(stream, create(path.as_ref())?)
}

pub fn load_calibration_json<T: Scalar>(path: impl AsRef<Path>) -> Result<RigCalibration<T>> {
    read_calibration_json(open(path.as_ref())?)
}

pub fn save_calibration_json<T: Scalar>(calib: &RigCalibration<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut f = create(path.as_ref())?;
    write_calibration_json(calib, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn load_tracks_json<T: Scalar>(path: impl AsRef<Path>) -> Result<TrackFile<T>> {
    read_tracks_json(open(path.as_ref())?)
}

pub fn save_tracks_json<T: Scalar>(file: &TrackFile<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut f = create(path.as_ref())?;
    write_tracks_json(file, &mut f)?;
    f.flush()?;
    Ok(())
}
