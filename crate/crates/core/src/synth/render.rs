//! Synthetic image annotations: projected keypoints and silhouettes.

use nalgebra::Matrix3;

use crate::imagefit::{
    rasterize, vertex_visibility, Camera, ImageObservation, Keypoint2, KeypointVertexMap,
};
use crate::mesh::{rodrigues_to_matrix, Mesh, Vec3};
use crate::{Error, Result};

/// Project keypoints and rasterize the silhouette of `mesh`. A keypoint is
/// invisible when any of its vertices is occluded by the mesh itself or its
/// projection leaves the image.
pub fn render_annotation(
    mesh: &Mesh,
    map: &KeypointVertexMap,
    camera: &Camera,
) -> Result<ImageObservation> {
    map.validate_against(mesh.vertex_count())?;
    let buffer = rasterize(&mesh.vertices, &mesh.faces, camera)?;
    let silhouette = buffer.mask();
    if silhouette.is_empty() {
        return Err(Error::Empty("silhouette: the mesh covers no pixel"));
    }
    let visible = vertex_visibility(&mesh.vertices, &buffer, camera)?;
    let projected = camera.project(&mesh.vertices)?;
    let [w, h] = camera.resolution;
    let keypoints = map
        .entries()
        .iter()
        .map(|(name, verts)| {
            let p = verts
                .iter()
                .fold(nalgebra::Vector2::zeros(), |a, &v| a + projected[v])
                / verts.len() as f64;
            let inside = (0.0..=w as f64).contains(&p.x) && (0.0..=h as f64).contains(&p.y);
            let shown = inside && verts.iter().all(|&v| visible[v]);
            Keypoint2 {
                name: name.clone(),
                position: shown.then_some([p.x, p.y]),
            }
        })
        .collect();
    Ok(ImageObservation {
        resolution: camera.resolution,
        keypoints,
        silhouette,
    })
}

/// Rotation that shows an animal standing along `+z` with `+y` up, seen
/// from `yaw` radians around the vertical axis, upright in image
/// coordinates whose rows grow downward. Yaw 0 shows the animal from behind
/// and a quarter turn shows its left side.
pub fn view_rotation(yaw: f64) -> Matrix3<f64> {
    rodrigues_to_matrix(&Vec3::new(0.0, 0.0, std::f64::consts::PI))
        * rodrigues_to_matrix(&Vec3::new(0.0, yaw, 0.0))
}

/// Translation that centers `vertices` on the optical axis at the depth
/// where their bounding sphere spans `fill` of the shorter image side.
pub fn framing_translation(vertices: &[Vec3], camera: &Camera, fill: f64) -> Vec3 {
    let (lo, hi) = crate::mesh::bounding_box(vertices);
    let center = (lo + hi) * 0.5;
    let radius = 0.5 * (hi - lo).norm();
    let side = camera.resolution[0].min(camera.resolution[1]) as f64;
    let depth = 2.0 * camera.focal * radius / (fill * side);
    Vec3::new(0.0, 0.0, depth) - center
}

/// `mesh` rotated by [`view_rotation`] about the origin and framed by
/// [`framing_translation`], with the applied rotation and translation.
pub fn place_in_view(
    mesh: &Mesh,
    yaw: f64,
    camera: &Camera,
    fill: f64,
) -> (Mesh, Matrix3<f64>, Vec3) {
    let r = view_rotation(yaw);
    let rotated: Vec<Vec3> = mesh.vertices.iter().map(|v| r * v).collect();
    let t = framing_translation(&rotated, camera, fill);
    (
        mesh.with_vertices(rotated.iter().map(|v| v + t).collect()),
        r,
        t,
    )
}
