//! Analytic rig trajectories with exact velocity, acceleration and angular
//! rate, so the ideal IMU readings are derivatives rather than differences.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rsvio_core::geometry::{ImuSample, ImuStream};
use serde::{Deserialize, Serialize};

use crate::{Result, SynthError};

/// Gravity in the world frame. The world `y` axis points down, like the
/// image rows of a level camera.
pub const GRAVITY_WORLD: [f64; 3] = [0.0, 9.81, 0.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryKind {
    /// Walking forward along `+z` while looking left and right.
    Forward,
    /// A closed horizontal circle.
    Loop,
    /// Fast left-right shaking with slow forward drift.
    Shake,
    /// Out along `+z`, turning around, and back.
    ForwardBack,
    /// Quintic Hermite spline through user waypoints.
    CustomSpline,
    /// Rig at rest.
    Stationary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    /// Path length (m).
    pub length: f64,
    /// Mean speed along the path (m/s).
    pub mean_speed: f64,
    /// Peak of the yaw oscillation (deg).
    #[serde(default = "default_yaw_amplitude")]
    pub yaw_amplitude_deg: f64,
    /// Frequency of the yaw oscillation (Hz).
    #[serde(default = "default_yaw_frequency")]
    pub yaw_frequency: f64,
    /// Pitch and roll wobble peaks (deg). Head-worn rigs never hold level.
    #[serde(default = "default_pitch_amplitude")]
    pub pitch_amplitude_deg: f64,
    #[serde(default = "default_roll_amplitude")]
    pub roll_amplitude_deg: f64,
    /// Waypoints of a custom spline, visited at uniform times.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub waypoints: Vec<[f64; 3]>,
}

fn default_yaw_amplitude() -> f64 {
    15.0
}
fn default_yaw_frequency() -> f64 {
    0.3
}
fn default_pitch_amplitude() -> f64 {
    4.0
}
fn default_roll_amplitude() -> f64 {
    2.0
}

impl TrajectorySpec {
    /// The 9 m forward walk at 0.7 m/s.
    pub fn forward() -> Self {
        Self::of_kind(TrajectoryKind::Forward, 9.0, 0.7)
    }

    pub fn of_kind(kind: TrajectoryKind, length: f64, mean_speed: f64) -> Self {
        Self {
            kind,
            length,
            mean_speed,
            yaw_amplitude_deg: default_yaw_amplitude(),
            yaw_frequency: default_yaw_frequency(),
            pitch_amplitude_deg: default_pitch_amplitude(),
            roll_amplitude_deg: default_roll_amplitude(),
            waypoints: Vec::new(),
        }
    }

    pub fn stationary(duration: f64) -> Self {
        Self {
            yaw_amplitude_deg: 0.0,
            pitch_amplitude_deg: 0.0,
            roll_amplitude_deg: 0.0,
            ..Self::of_kind(TrajectoryKind::Stationary, duration, 1.0)
        }
    }

    pub fn duration(&self) -> f64 {
        match self.kind {
            TrajectoryKind::CustomSpline => polyline_length(&self.waypoints) / self.mean_speed,
            _ => self.length / self.mean_speed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.length,
            self.mean_speed,
            self.yaw_amplitude_deg,
            self.yaw_frequency,
            self.pitch_amplitude_deg,
            self.roll_amplitude_deg,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(SynthError::Config("trajectory parameters must be finite".into()));
        }
        if !(self.mean_speed > 0.0) {
            return Err(SynthError::Config("mean speed must be positive".into()));
        }
        if self.kind == TrajectoryKind::CustomSpline {
            if self.waypoints.len() < 2 {
                return Err(SynthError::Config("a custom spline needs at least two waypoints".into()));
            }
            if !(polyline_length(&self.waypoints) > 0.0) {
                return Err(SynthError::Config("custom spline waypoints must not all coincide".into()));
            }
        } else if !(self.length > 0.0) {
            return Err(SynthError::Config("trajectory length must be positive".into()));
        }
        Ok(())
    }
}

fn polyline_length(w: &[[f64; 3]]) -> f64 {
    w.windows(2)
        .map(|p| (Vector3::from(p[1]) - Vector3::from(p[0])).norm())
        .sum()
}

/// `amplitude · sin(2π f t + phase)`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Wave {
    amplitude: f64,
    frequency: f64,
    phase: f64,
}

impl Wave {
    fn new(amplitude: f64, frequency: f64, phase: f64) -> Self {
        Self {
            amplitude,
            frequency,
            phase,
        }
    }

    /// Value and first two derivatives.
    fn eval(&self, t: f64) -> [f64; 3] {
        let w = 2.0 * std::f64::consts::PI * self.frequency;
        let (s, c) = (w * t + self.phase).sin_cos();
        [self.amplitude * s, self.amplitude * w * c, -self.amplitude * w * w * s]
    }
}

/// `offset + rate · t + Σ waves`.
#[derive(Clone, Debug, Default, PartialEq)]
struct Channel {
    offset: f64,
    rate: f64,
    waves: Vec<Wave>,
}

impl Channel {
    fn eval(&self, t: f64) -> [f64; 3] {
        self.waves.iter().fold([self.offset + self.rate * t, self.rate, 0.0], |acc, w| {
            let d = w.eval(t);
            [acc[0] + d[0], acc[1] + d[1], acc[2] + d[2]]
        })
    }
}

/// Quintic Hermite segments with matched position, velocity and acceleration
/// at the knots.
#[derive(Clone, Debug, PartialEq)]
struct Spline {
    knot_dt: f64,
    /// Power-basis coefficients in the local parameter `s ∈ [0, 1]`.
    segments: Vec<[Vector3<f64>; 6]>,
}

const HERMITE5: [[f64; 6]; 6] = [
    [1.0, 0.0, 0.0, -10.0, 15.0, -6.0],
    [0.0, 1.0, 0.0, -6.0, 8.0, -3.0],
    [0.0, 0.0, 0.5, -1.5, 1.5, -0.5],
    [0.0, 0.0, 0.0, 0.5, -1.0, 0.5],
    [0.0, 0.0, 0.0, -4.0, 7.0, -3.0],
    [0.0, 0.0, 0.0, 10.0, -15.0, 6.0],
];

impl Spline {
    fn new(points: &[[f64; 3]], duration: f64) -> Self {
        let p: Vec<Vector3<f64>> = points.iter().map(|&q| Vector3::from(q)).collect();
        let n = p.len();
        let h = duration / (n - 1) as f64;
        // Catmull-Rom velocities, at rest at both ends.
        let v: Vec<Vector3<f64>> = (0..n)
            .map(|k| {
                if k == 0 || k == n - 1 {
                    Vector3::zeros()
                } else {
                    (p[k + 1] - p[k - 1]) / (2.0 * h)
                }
            })
            .collect();
        let a: Vec<Vector3<f64>> = (0..n)
            .map(|k| {
                if k == 0 || k == n - 1 {
                    Vector3::zeros()
                } else {
                    (v[k + 1] - v[k - 1]) / (2.0 * h)
                }
            })
            .collect();
        let segments = (0..n - 1)
            .map(|k| {
                let weights = [p[k], v[k] * h, a[k] * h * h, a[k + 1] * h * h, v[k + 1] * h, p[k + 1]];
                std::array::from_fn(|j| weights.iter().zip(HERMITE5.iter()).map(|(w, b)| w * b[j]).sum())
            })
            .collect();
        Self { knot_dt: h, segments }
    }

    fn eval(&self, t: f64) -> [Vector3<f64>; 3] {
        let x = (t / self.knot_dt).max(0.0);
        let k = (x.floor() as usize).min(self.segments.len() - 1);
        let s = x - k as f64;
        let c = &self.segments[k];
        let mut out = [Vector3::zeros(); 3];
        for j in 0..6 {
            out[0] += c[j] * s.powi(j as i32);
            if j >= 1 {
                out[1] += c[j] * (j as f64 * s.powi(j as i32 - 1));
            }
            if j >= 2 {
                out[2] += c[j] * ((j * (j - 1)) as f64 * s.powi(j as i32 - 2));
            }
        }
        [out[0], out[1] / self.knot_dt, out[2] / (self.knot_dt * self.knot_dt)]
    }
}

/// Kinematic state of the IMU at one instant, in the world frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct State {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    /// IMU-to-world rotation.
    pub rotation: Matrix3<f64>,
    /// Angular rate in the IMU frame (rad/s).
    pub omega: Vector3<f64>,
}

impl State {
    /// Velocity in the IMU frame.
    pub fn body_velocity(&self) -> Vector3<f64> {
        self.rotation.transpose() * self.velocity
    }

    /// Gravity in the IMU frame.
    pub fn body_gravity(&self) -> Vector3<f64> {
        self.rotation.transpose() * Vector3::from(GRAVITY_WORLD)
    }

    /// Ideal IMU reading: angular rate and specific force.
    pub fn imu(&self) -> ImuSample<f64> {
        ImuSample::new(self.omega, self.rotation.transpose() * (self.acceleration - Vector3::from(GRAVITY_WORLD)))
    }
}

/// A trajectory ready for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    spec: TrajectorySpec,
    duration: f64,
    position: [Channel; 3],
    spline: Option<Spline>,
    yaw: Channel,
    pitch: Channel,
    roll: Channel,
}

impl Trajectory {
    pub fn new(spec: &TrajectorySpec) -> Result<Self> {
        spec.validate()?;
        let duration = spec.duration();
        let v = spec.mean_speed;
        let deg = std::f64::consts::PI / 180.0;
        let wobble = |amp: f64, f: f64, phase: f64| Channel {
            waves: vec![Wave::new(amp * deg, f, phase)],
            ..Channel::default()
        };
        let mut yaw = wobble(spec.yaw_amplitude_deg, spec.yaw_frequency, 0.0);
        let pitch = wobble(spec.pitch_amplitude_deg, 0.53, 0.4);
        let roll = wobble(spec.roll_amplitude_deg, 0.71, 1.1);
        let mut spline = None;
        let position = match spec.kind {
            TrajectoryKind::Stationary => Default::default(),
            TrajectoryKind::Forward => [
                // Lateral sway at step frequency, vertical bob at twice that.
                Channel {
                    waves: vec![Wave::new(0.04, 0.9, 0.0)],
                    ..Default::default()
                },
                Channel {
                    waves: vec![Wave::new(0.02, 1.8, 0.3)],
                    ..Default::default()
                },
                Channel {
                    rate: v,
                    waves: vec![Wave::new(0.1 * v / (2.0 * std::f64::consts::PI * 0.5), 0.5, 0.0)],
                    ..Default::default()
                },
            ],
            TrajectoryKind::Loop => {
                let r = spec.length / (2.0 * std::f64::consts::PI);
                let f = v / (2.0 * std::f64::consts::PI * r);
                yaw.rate = v / r;
                [
                    Channel {
                        offset: r,
                        waves: vec![Wave::new(-r, f, std::f64::consts::FRAC_PI_2)],
                        ..Default::default()
                    },
                    Channel {
                        waves: vec![Wave::new(0.02, 1.8, 0.3)],
                        ..Default::default()
                    },
                    Channel {
                        waves: vec![Wave::new(r, f, 0.0)],
                        ..Default::default()
                    },
                ]
            }
            TrajectoryKind::Shake => {
                // Half-metre sweeps: one period covers 1 m of path.
                let f = v / 1.0;
                [
                    Channel {
                        waves: vec![Wave::new(0.25, f, 0.0)],
                        ..Default::default()
                    },
                    Channel {
                        waves: vec![Wave::new(0.03, 2.0 * f, 0.5)],
                        ..Default::default()
                    },
                    Channel {
                        rate: 0.1,
                        ..Default::default()
                    },
                ]
            }
            TrajectoryKind::ForwardBack => {
                // z = L/4 (1 − cos 2πt/T): out to L/2 and back with mean speed L/T.
                let quarter = spec.length / 4.0;
                let f = 1.0 / duration;
                yaw.offset = std::f64::consts::FRAC_PI_2;
                yaw.waves.push(Wave::new(-std::f64::consts::FRAC_PI_2, 0.5 * f, std::f64::consts::FRAC_PI_2));
                [
                    Channel::default(),
                    Channel {
                        waves: vec![Wave::new(0.02, 1.8, 0.3)],
                        ..Default::default()
                    },
                    Channel {
                        offset: quarter,
                        waves: vec![Wave::new(-quarter, f, std::f64::consts::FRAC_PI_2)],
                        ..Default::default()
                    },
                ]
            }
            TrajectoryKind::CustomSpline => {
                spline = Some(Spline::new(&spec.waypoints, duration));
                Default::default()
            }
        };
        Ok(Self {
            spec: spec.clone(),
            duration,
            position,
            spline,
            yaw,
            pitch,
            roll,
        })
    }

    pub fn spec(&self) -> &TrajectorySpec {
        &self.spec
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn state(&self, t: f64) -> State {
        let (position, velocity, acceleration) = match &self.spline {
            Some(s) => {
                let [p, v, a] = s.eval(t);
                (p, v, a)
            }
            None => {
                let e = self.position.each_ref().map(|c| c.eval(t));
                (
                    Vector3::new(e[0][0], e[1][0], e[2][0]),
                    Vector3::new(e[0][1], e[1][1], e[2][1]),
                    Vector3::new(e[0][2], e[1][2], e[2][2]),
                )
            }
        };
        let [yaw, yaw_dot, _] = self.yaw.eval(t);
        let [pitch, pitch_dot, _] = self.pitch.eval(t);
        let [roll, roll_dot, _] = self.roll.eval(t);
        let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw);
        let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), pitch);
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), roll);
        let rotation = (ry * rx * rz).into_inner();
        // ω = Rzᵀ (Rxᵀ ẏ e_y + ṗ e_x) + ṙ e_z for R = Ry Rx Rz.
        let omega = rz.inverse() * (rx.inverse() * (Vector3::y() * yaw_dot) + Vector3::x() * pitch_dot) + Vector3::z() * roll_dot;
        State {
            position,
            velocity,
            acceleration,
            rotation,
            omega,
        }
    }

    /// Ideal IMU stream at `rate` Hz over `[start, start + span]`, with its
    /// first sample at time zero.
    pub fn sample_imu(&self, rate: f64, start: f64, span: f64) -> Result<ImuStream<f64>> {
        let dt = 1.0 / rate;
        let n = (span / dt).ceil() as usize + 2;
        let samples = (0..n).map(|k| self.state(start + k as f64 * dt).imu()).collect();
        Ok(ImuStream::new(samples, dt, 0.0)?)
    }
}
