//! Rigid poses, point clouds, box distances, grippers and serial chains.

pub mod chain;
pub mod cloud;
pub mod gripper;
pub mod pose;
pub mod sdf;

pub use chain::{IkOptions, IkSolution, Joint, SerialChain};
pub use cloud::{NormalOrientation, PointCloud};
pub use gripper::GripperModel;
pub use pose::{se3_distance, Pose, TangentVector};
pub use sdf::{box_sdf, OrientedBox};
