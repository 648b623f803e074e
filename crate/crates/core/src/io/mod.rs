//! File formats shared by the library and the command-line tool.
//!
//! | data                | format                                               |
//! |---------------------|------------------------------------------------------|
//! | correspondences     | CSV `t,k,x_um,y_um,z_um,ul_px,vl_px,ur_px,vr_px`      |
//! | stereo matches      | CSV `ul_px,vl_px,ur_px,vr_px`                         |
//! | landmark points     | CSV `x,y,z` or `frame,x,y,z` (µm)                     |
//! | keypoint detections | CSV `channel,u_px,v_px,peak`                          |
//! | point clouds, mesh  | ASCII PLY, units in comment lines                    |
//! | calibration         | JSON, matrices row-major                             |
//! | surface, transform  | JSON                                                 |
//! | heatmap             | text header `width height sigma`, then row-major LE `f32` |
//!
//! Readers and writers work on `std::io` streams; files are the caller's
//! concern. Only `f64` data is read and written.

mod documents;
mod heatmap;
mod ply;
mod tables;

use thiserror::Error;

pub use documents::{
    BundleSummary, CalibrationDocument, CameraDocument, CameraPair, DomainDocument, InlierCounts, IntrinsicsDocument,
    ResidualDocument, SurfaceDocument, TransformDocument, Units, TRANSFORM_CONVENTION,
};
pub use heatmap::{read_heatmap, write_heatmap};
pub use ply::{read_ply_cloud, write_ply_cloud, write_ply_mesh, PlyCloud};
pub use tables::{
    read_correspondences, read_keypoints, read_matches, read_pixels, read_points, write_correspondences,
    write_keypoints, write_matches, write_points, PointTable,
};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },
}

pub(crate) fn malformed(what: &'static str, detail: impl Into<String>) -> FormatError {
    FormatError::Malformed {
        what,
        detail: detail.into(),
    }
}
