//! Closed-form velocity and gravity initialization for rolling-shutter
//! visual-inertial rigs.

pub mod ba;
pub mod bias;
pub mod error;
pub mod estimators;
pub mod geometry;
pub mod io;
mod linalg;
pub mod noise;
pub mod scalar;
pub mod so3;
pub mod system;

pub use error::{Error, Result};
pub use scalar::Scalar;

macro_rules! precision_aliases {
    ($($name:ident => $ty:ident in $module:ident),* $(,)?) => {
        /// Single-precision instantiations of the generic types.
        pub mod f32 {
            $(pub type $name = crate::$module::$ty<f32>;)*
        }
        /// Double-precision instantiations of the generic types.
        pub mod f64 {
            $(pub type $name = crate::$module::$ty<f64>;)*
        }
    };
}

precision_aliases! {
    ImuSample => ImuSample in geometry,
    ImuStream => ImuStream in geometry,
    CameraCalibration => CameraCalibration in geometry,
    RigCalibration => RigCalibration in geometry,
    Observation => Observation in geometry,
    ScanlineKinematics => ScanlineKinematics in geometry,
    CorrespondenceSet => CorrespondenceSet in system,
    FullSystem => FullSystem in system,
    ReducedSystem => ReducedSystem in system,
    PointNoiseModel => PointNoiseModel in noise,
    RowCovariances => RowCovariances in noise,
    InitEstimate => InitEstimate in estimators,
    RenormOptions => RenormOptions in estimators,
    BiasConfig => BiasConfig in bias,
    BaProblem => BaProblem in ba,
    LmOptions => LmOptions in ba,
}
