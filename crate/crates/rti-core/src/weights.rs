//! Weight matrix construction: W = S ⊙ Ω.
//!
//! S is a binary selection matrix saying which voxels participate in which
//! links; Ω assigns each participating voxel a real magnitude. Five magnitude
//! models and three selection rules from the RTI literature are provided.

use nalgebra::{DMatrix, Point3};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RtiError};
use crate::geometry::{focal_distances, segment_length_in_voxel, GridSpec, Link};

/// Default floor on the excess path length in the inverse-ellipse-area model,
/// which otherwise diverges for voxel centers on the link segment.
pub const DEFAULT_LAMBDA_FLOOR: f64 = 1e-3;

fn default_lambda_floor() -> f64 {
    DEFAULT_LAMBDA_FLOOR
}

/// Rule deciding which (link, voxel) pairs carry weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionModel {
    /// Voxel center inside the ellipse with the link endpoints as foci:
    /// d1 + d2 < d + lambda.
    Ellipse { lambda: f64 },
    /// Link segment intersects the voxel box.
    Line,
    /// Every pair participates.
    All,
}

/// Magnitude assigned to a selected (link, voxel) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MagnitudeModel {
    /// d^{-1/2}: constant along each link's row.
    NeSh,
    /// Chord length of the link through the voxel.
    Line,
    /// Chord length scaled by d^{-1/2}.
    NeShLine,
    /// exp(-lambda_tilde / (2 sigma_lambda)).
    ExpDec { sigma_lambda: f64 },
    /// Inverse area of the ellipse through the voxel center; lambda_tilde is
    /// floored to keep the weight finite on the segment itself.
    InvArea {
        #[serde(default = "default_lambda_floor")]
        lambda_floor: f64,
    },
}

impl SelectionModel {
    pub fn validate(&self) -> Result<()> {
        if let SelectionModel::Ellipse { lambda } = self {
            if !(*lambda > 0.0) {
                return Err(RtiError::InvalidModel(format!(
                    "ellipse lambda must be > 0, got {lambda}"
                )));
            }
        }
        Ok(())
    }
}

impl MagnitudeModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            MagnitudeModel::ExpDec { sigma_lambda } if !(*sigma_lambda > 0.0) => {
                Err(RtiError::InvalidModel(format!(
                    "sigma_lambda must be > 0, got {sigma_lambda}"
                )))
            }
            MagnitudeModel::InvArea { lambda_floor } if !(*lambda_floor > 0.0) => {
                Err(RtiError::InvalidModel(format!(
                    "lambda floor must be > 0, got {lambda_floor}"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// M×N weight matrix with the models that produced it and the scalar applied
/// by cross-model normalization (1.0 when none).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub values: DMatrix<f64>,
    pub selection: SelectionModel,
    pub magnitude: MagnitudeModel,
    pub scale: f64,
}

impl WeightMatrix {
    pub fn link_count(&self) -> usize {
        self.values.nrows()
    }

    pub fn voxel_count(&self) -> usize {
        self.values.ncols()
    }
}

/// Excess path length through a voxel center: d1 + d2 - d, the smallest
/// ellipse parameter whose ellipse passes through the center.
pub fn lambda_tilde(link: &Link, center: &Point3<f64>) -> f64 {
    let (d1, d2) = focal_distances(link, center);
    (d1 + d2 - link.d).max(0.0)
}

/// Binary selection matrix (entries 0.0 / 1.0).
pub fn selection_matrix(
    grid: &GridSpec,
    links: &[Link],
    model: SelectionModel,
) -> Result<DMatrix<f64>> {
    model.validate()?;
    let n = grid.voxel_count();
    let mut s = DMatrix::zeros(links.len(), n);
    for (m, link) in links.iter().enumerate() {
        for j in 0..n {
            let selected = match model {
                SelectionModel::Ellipse { lambda } => {
                    let c = grid.voxel_center(j)?;
                    let (d1, d2) = focal_distances(link, &c);
                    d1 + d2 < link.d + lambda
                }
                SelectionModel::Line => segment_length_in_voxel(grid, j, link)? > 0.0,
                SelectionModel::All => true,
            };
            if selected {
                s[(m, j)] = 1.0;
            }
        }
    }
    Ok(s)
}

/// Real magnitude matrix before selection masking.
pub fn magnitude_matrix(
    grid: &GridSpec,
    links: &[Link],
    model: MagnitudeModel,
) -> Result<DMatrix<f64>> {
    model.validate()?;
    let n = grid.voxel_count();
    let mut omega = DMatrix::zeros(links.len(), n);
    for (m, link) in links.iter().enumerate() {
        let inv_sqrt_d = 1.0 / link.d.sqrt();
        for j in 0..n {
            omega[(m, j)] = match model {
                MagnitudeModel::NeSh => inv_sqrt_d,
                MagnitudeModel::Line => segment_length_in_voxel(grid, j, link)?,
                MagnitudeModel::NeShLine => {
                    segment_length_in_voxel(grid, j, link)? * inv_sqrt_d
                }
                MagnitudeModel::ExpDec { sigma_lambda } => {
                    let lt = lambda_tilde(link, &grid.voxel_center(j)?);
                    (-lt / (2.0 * sigma_lambda)).exp()
                }
                MagnitudeModel::InvArea { lambda_floor } => {
                    let lt = lambda_tilde(link, &grid.voxel_center(j)?).max(lambda_floor);
                    let d = link.d;
                    let area = std::f64::consts::PI / 4.0
                        * (d + lt)
                        * (2.0 * d * lt + lt * lt).sqrt();
                    1.0 / area
                }
            };
        }
    }
    Ok(omega)
}

/// Build W = S ⊙ Ω, optionally rescaled so its Frobenius norm matches the
/// Line/Line matrix for the same geometry (making one α setting comparable
/// across models).
pub fn build_weight_matrix(
    grid: &GridSpec,
    links: &[Link],
    sel: SelectionModel,
    mag: MagnitudeModel,
    normalize: bool,
) -> Result<WeightMatrix> {
    let s = selection_matrix(grid, links, sel)?;
    let omega = magnitude_matrix(grid, links, mag)?;
    let mut w = s.component_mul(&omega);
    let norm = w.norm();
    if norm == 0.0 {
        return Err(RtiError::AllZeroWeights);
    }
    let mut scale = 1.0;
    if normalize {
        let line = selection_matrix(grid, links, SelectionModel::Line)?
            .component_mul(&magnitude_matrix(grid, links, MagnitudeModel::Line)?);
        let line_norm = line.norm();
        if line_norm == 0.0 {
            return Err(RtiError::AllZeroWeights);
        }
        scale = line_norm / norm;
        w *= scale;
    }
    Ok(WeightMatrix {
        values: w,
        selection: sel,
        magnitude: mag,
        scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{enumerate_links, SensorLayout};
    use approx::assert_relative_eq;
    use nalgebra::Point3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_voxel_grid() -> GridSpec {
        GridSpec::new((1, 1, 1), (1.0, 1.0, 1.0), [0.0; 3]).unwrap()
    }

    fn straight_link(a: [f64; 3], b: [f64; 3]) -> Link {
        let pa = Point3::new(a[0], a[1], a[2]);
        let pb = Point3::new(b[0], b[1], b[2]);
        Link {
            link_id: 0,
            tx_id: 0,
            rx_id: 1,
            endpoints: [pa, pb],
            d: (pb - pa).norm(),
        }
    }

    #[test]
    fn lambda_tilde_values() {
        let link = straight_link([0.0, 0.0, 0.0], [4.0, 0.0, 0.0]);
        assert_eq!(lambda_tilde(&link, &Point3::new(2.0, 0.0, 0.0)), 0.0);
        assert_relative_eq!(
            lambda_tilde(&link, &Point3::new(2.0, 1.5, 0.0)),
            1.0,
            max_relative = 1e-12
        );
        assert_eq!(lambda_tilde(&link, &Point3::new(0.0, 0.0, 0.0)), 0.0);
    }

    #[test]
    fn selection_variants() {
        let g = one_voxel_grid();
        let on_link = straight_link([-1.0, 0.5, 0.5], [2.0, 0.5, 0.5]);
        let miss = straight_link([0.0, 5.0, 0.5], [1.0, 5.0, 0.5]);
        let links = vec![on_link.clone(), miss.clone()];

        let ell = selection_matrix(&g, &links, SelectionModel::Ellipse { lambda: 0.01 }).unwrap();
        assert_eq!(ell[(0, 0)], 1.0);
        assert_eq!(ell[(1, 0)], 0.0);

        let line = selection_matrix(&g, &links, SelectionModel::Line).unwrap();
        assert_eq!(line[(0, 0)], 1.0);
        assert_eq!(line[(1, 0)], 0.0);

        let all = selection_matrix(&g, &links, SelectionModel::All).unwrap();
        assert_eq!(all[(0, 0)], 1.0);
        assert_eq!(all[(1, 0)], 1.0);
    }

    #[test]
    fn magnitude_variants() {
        let g = one_voxel_grid();
        let link4 = straight_link([-1.5, 0.5, 0.5], [2.5, 0.5, 0.5]);
        assert_eq!(link4.d, 4.0);
        let links = vec![link4];

        let nesh = magnitude_matrix(&g, &links, MagnitudeModel::NeSh).unwrap();
        assert_relative_eq!(nesh[(0, 0)], 0.5, max_relative = 1e-12);

        let line = magnitude_matrix(&g, &links, MagnitudeModel::Line).unwrap();
        assert_relative_eq!(line[(0, 0)], 1.0, max_relative = 1e-12);

        let nl = magnitude_matrix(&g, &links, MagnitudeModel::NeShLine).unwrap();
        assert_relative_eq!(nl[(0, 0)], 0.5, max_relative = 1e-12);

        // Voxel center lies on the link, so the excess path length is zero.
        let exp = magnitude_matrix(&g, &links, MagnitudeModel::ExpDec { sigma_lambda: 0.3 })
            .unwrap();
        assert_relative_eq!(exp[(0, 0)], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn inv_area_finite_on_segment() {
        let g = one_voxel_grid();
        let links = vec![straight_link([-1.5, 0.5, 0.5], [2.5, 0.5, 0.5])];
        let w = magnitude_matrix(
            &g,
            &links,
            MagnitudeModel::InvArea {
                lambda_floor: DEFAULT_LAMBDA_FLOOR,
            },
        )
        .unwrap();
        assert!(w[(0, 0)].is_finite());
        assert!(w[(0, 0)] > 0.0);
        // Floored value matches the closed form at lambda_tilde = floor.
        let d = 4.0;
        let lt = DEFAULT_LAMBDA_FLOOR;
        let expect =
            1.0 / (std::f64::consts::PI / 4.0 * (d + lt) * (2.0 * d * lt + lt * lt).sqrt());
        assert_relative_eq!(w[(0, 0)], expect, max_relative = 1e-12);
    }

    #[test]
    fn build_simple_cases() {
        let g = one_voxel_grid();
        // 3 m link clipped to 1 m inside the voxel.
        let links = vec![straight_link([-1.0, 0.5, 0.5], [2.0, 0.5, 0.5])];
        let w = build_weight_matrix(&g, &links, SelectionModel::Line, MagnitudeModel::Line, false)
            .unwrap();
        assert_relative_eq!(w.values[(0, 0)], 1.0, max_relative = 1e-12);
        assert_eq!(w.scale, 1.0);

        let links2 = vec![
            straight_link([-1.5, 0.5, 0.5], [2.5, 0.5, 0.5]),
            straight_link([-4.0, 0.5, 0.5], [5.0, 0.5, 0.5]),
        ];
        let w2 =
            build_weight_matrix(&g, &links2, SelectionModel::All, MagnitudeModel::NeSh, false)
                .unwrap();
        assert_relative_eq!(w2.values[(0, 0)], 0.5, max_relative = 1e-12);
        assert_relative_eq!(w2.values[(1, 0)], 1.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn normalization_matches_line_frobenius() {
        let g = GridSpec::new((3, 2, 1), (1.0, 1.0, 1.0), [0.0; 3]).unwrap();
        let layout = SensorLayout::full_mesh(&[
            [-0.5, 0.5, 0.5],
            [3.5, 1.5, 0.5],
            [1.5, -0.5, 0.5],
            [1.5, 2.5, 0.5],
        ]);
        let links = enumerate_links(&layout).unwrap();
        let line =
            build_weight_matrix(&g, &links, SelectionModel::Line, MagnitudeModel::Line, false)
                .unwrap();
        let nesh =
            build_weight_matrix(&g, &links, SelectionModel::All, MagnitudeModel::NeSh, true)
                .unwrap();
        assert_relative_eq!(
            nesh.values.norm(),
            line.values.norm(),
            max_relative = 1e-12
        );
        assert_ne!(nesh.scale, 1.0);
    }

    #[test]
    fn all_zero_weights_rejected() {
        let g = one_voxel_grid();
        // Link far outside the grid: Line model selects nothing.
        let links = vec![straight_link([0.0, 9.0, 9.0], [1.0, 9.0, 9.0])];
        assert!(matches!(
            build_weight_matrix(&g, &links, SelectionModel::Line, MagnitudeModel::Line, false),
            Err(RtiError::AllZeroWeights)
        ));
    }

    #[test]
    fn ellipse_monotone_in_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = GridSpec::new((4, 3, 2), (0.9, 1.1, 0.8), [0.0; 3]).unwrap();
        for _ in 0..50 {
            let p = |rng: &mut ChaCha8Rng| {
                [
                    rng.random_range(-2.0..6.0),
                    rng.random_range(-2.0..6.0),
                    rng.random_range(-1.0..3.0),
                ]
            };
            let links = vec![straight_link(p(&mut rng), p(&mut rng))];
            if links[0].d == 0.0 {
                continue;
            }
            let (l1, l2) = {
                let a: f64 = rng.random_range(0.05..2.0);
                let b: f64 = rng.random_range(0.05..2.0);
                (a.min(b), a.max(b))
            };
            let s1 = selection_matrix(&g, &links, SelectionModel::Ellipse { lambda: l1 }).unwrap();
            let s2 = selection_matrix(&g, &links, SelectionModel::Ellipse { lambda: l2 }).unwrap();
            for j in 0..g.voxel_count() {
                assert!(s1[(0, j)] <= s2[(0, j)]);
            }
        }
    }

    #[test]
    fn line_selection_matches_positive_chord() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let g = GridSpec::new((3, 3, 3), (1.0, 1.0, 1.0), [0.0; 3]).unwrap();
        for _ in 0..100 {
            let p = |rng: &mut ChaCha8Rng| {
                [
                    rng.random_range(-2.0..5.0),
                    rng.random_range(-2.0..5.0),
                    rng.random_range(-2.0..5.0),
                ]
            };
            let link = straight_link(p(&mut rng), p(&mut rng));
            if link.d == 0.0 {
                continue;
            }
            let links = vec![link.clone()];
            let s = selection_matrix(&g, &links, SelectionModel::Line).unwrap();
            for j in 0..g.voxel_count() {
                let chord = segment_length_in_voxel(&g, j, &link).unwrap();
                assert_eq!(s[(0, j)] == 1.0, chord > 0.0);
            }
        }
    }

    #[test]
    fn hadamard_consistency_and_finiteness() {
        let g = GridSpec::new((4, 2, 2), (1.0, 2.0, 0.5), [0.0; 3]).unwrap();
        let layout = SensorLayout::cross_road(
            &[[0.5, -0.5, 0.25], [2.5, -0.5, 0.75]],
            &[[0.5, 4.5, 0.25], [2.5, 4.5, 0.75]],
        );
        let links = enumerate_links(&layout).unwrap();
        let models = [
            MagnitudeModel::NeSh,
            MagnitudeModel::Line,
            MagnitudeModel::NeShLine,
            MagnitudeModel::ExpDec { sigma_lambda: 0.2 },
            MagnitudeModel::InvArea {
                lambda_floor: DEFAULT_LAMBDA_FLOOR,
            },
        ];
        for mag in models {
            let w = build_weight_matrix(
                &g,
                &links,
                SelectionModel::Ellipse { lambda: 0.8 },
                mag,
                false,
            )
            .unwrap();
            let s = selection_matrix(&g, &links, SelectionModel::Ellipse { lambda: 0.8 }).unwrap();
            for m in 0..w.values.nrows() {
                for j in 0..w.values.ncols() {
                    let v = w.values[(m, j)];
                    assert!(v >= 0.0 && v.is_finite());
                    if s[(m, j)] == 0.0 {
                        assert_eq!(v, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn invalid_model_params_rejected() {
        let g = one_voxel_grid();
        let links = vec![straight_link([-1.0, 0.5, 0.5], [2.0, 0.5, 0.5])];
        assert!(selection_matrix(&g, &links, SelectionModel::Ellipse { lambda: 0.0 }).is_err());
        assert!(
            magnitude_matrix(&g, &links, MagnitudeModel::ExpDec { sigma_lambda: -1.0 }).is_err()
        );
    }
}
