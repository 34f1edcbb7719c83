//! Ellipsoidal distances on WGS-84 using Vincenty's inverse formula.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// WGS-84 semi-major axis in kilometers.
pub const WGS84_A_KM: f64 = 6378.137;
/// WGS-84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;
/// Mean Earth radius used by the haversine fallback.
pub const MEAN_RADIUS_KM: f64 = 6371.0088;

const MAX_ITERATIONS: usize = 200;
const LAMBDA_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid coordinate (lat {lat}, lon {lon}): latitude must lie in [-90, 90] and longitude in (-180, 180]")]
pub struct GeoError {
    pub lat: f64,
    pub lon: f64,
}

/// Latitude/longitude in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        let valid = lat.is_finite()
            && lon.is_finite()
            && (-90.0..=90.0).contains(&lat)
            && lon > -180.0
            && lon <= 180.0;
        if valid {
            Ok(Self { lat, lon })
        } else {
            Err(GeoError { lat, lon })
        }
    }

    /// Clamps latitude into range and wraps longitude into (-180, 180].
    /// Used for model outputs, which are unconstrained.
    pub fn normalized(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(GeoError { lat, lon });
        }
        let mut wrapped = (lon + 180.0).rem_euclid(360.0) - 180.0;
        if wrapped == -180.0 {
            wrapped = 180.0;
        }
        Self::new(lat.clamp(-90.0, 90.0), wrapped)
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.lat, self.lon]
    }
}

/// Distance result; `fallback` marks pairs where the iteration did not
/// converge and the haversine distance was used instead.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Distance {
    pub km: f64,
    pub fallback: bool,
}

/// Geodesic distance in kilometers between two points on WGS-84.
///
/// Arguments are put in a canonical order first so that the result is
/// bitwise symmetric.
pub fn vincenty_distance(a: GeoPoint, b: GeoPoint) -> Distance {
    let (p, q) = if (a.lat, a.lon) <= (b.lat, b.lon) {
        (a, b)
    } else {
        (b, a)
    };
    match vincenty_inverse(p, q) {
        Some(km) => Distance {
            km,
            fallback: false,
        },
        None => Distance {
            km: haversine_km(p, q),
            fallback: true,
        },
    }
}

/// Great-circle distance on a sphere of radius [`MEAN_RADIUS_KM`].
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * MEAN_RADIUS_KM * h.sqrt().min(1.0).asin()
}

fn vincenty_inverse(p: GeoPoint, q: GeoPoint) -> Option<f64> {
    if p == q {
        return Some(0.0);
    }
    let f = WGS84_F;
    let a = WGS84_A_KM;
    let b = a * (1.0 - f);

    let mut big_l = (q.lon - p.lon).to_radians();
    if big_l > std::f64::consts::PI {
        big_l -= 2.0 * std::f64::consts::PI;
    } else if big_l < -std::f64::consts::PI {
        big_l += 2.0 * std::f64::consts::PI;
    }
    let u1 = ((1.0 - f) * p.lat.to_radians().tan()).atan();
    let u2 = ((1.0 - f) * q.lat.to_radians().tan()).atan();
    let (sin_u1, cos_u1) = u1.sin_cos();
    let (sin_u2, cos_u2) = u2.sin_cos();

    let mut lambda = big_l;
    for _ in 0..MAX_ITERATIONS {
        let (sin_lambda, cos_lambda) = lambda.sin_cos();
        let sin_sigma = ((cos_u2 * sin_lambda).powi(2)
            + (cos_u1 * sin_u2 - sin_u1 * cos_u2 * cos_lambda).powi(2))
        .sqrt();
        if sin_sigma == 0.0 {
            // coincident points (e.g. both at a pole)
            return Some(0.0);
        }
        let cos_sigma = sin_u1 * sin_u2 + cos_u1 * cos_u2 * cos_lambda;
        let sigma = sin_sigma.atan2(cos_sigma);
        let sin_alpha = cos_u1 * cos_u2 * sin_lambda / sin_sigma;
        let cos_sq_alpha = 1.0 - sin_alpha * sin_alpha;
        // equatorial lines have cos^2(alpha) = 0
        let cos_2sigma_m = if cos_sq_alpha != 0.0 {
            cos_sigma - 2.0 * sin_u1 * sin_u2 / cos_sq_alpha
        } else {
            0.0
        };
        let c = f / 16.0 * cos_sq_alpha * (4.0 + f * (4.0 - 3.0 * cos_sq_alpha));
        let previous = lambda;
        lambda = big_l
            + (1.0 - c)
                * f
                * sin_alpha
                * (sigma
                    + c * sin_sigma
                        * (cos_2sigma_m + c * cos_sigma * (-1.0 + 2.0 * cos_2sigma_m.powi(2))));
        if !lambda.is_finite() || lambda.abs() > std::f64::consts::PI {
            return None;
        }
        if (lambda - previous).abs() < LAMBDA_TOLERANCE {
            let u_sq = cos_sq_alpha * (a * a - b * b) / (b * b);
            let big_a =
                1.0 + u_sq / 16384.0 * (4096.0 + u_sq * (-768.0 + u_sq * (320.0 - 175.0 * u_sq)));
            let big_b = u_sq / 1024.0 * (256.0 + u_sq * (-128.0 + u_sq * (74.0 - 47.0 * u_sq)));
            let delta_sigma = big_b
                * sin_sigma
                * (cos_2sigma_m
                    + big_b / 4.0
                        * (cos_sigma * (-1.0 + 2.0 * cos_2sigma_m.powi(2))
                            - big_b / 6.0
                                * cos_2sigma_m
                                * (-3.0 + 4.0 * sin_sigma.powi(2))
                                * (-3.0 + 4.0 * cos_2sigma_m.powi(2))));
            let s = b * big_a * (sigma - delta_sigma);
            return s.is_finite().then_some(s);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn identical_points_are_zero() {
        let p = pt(34.7, 135.5);
        assert_eq!(vincenty_distance(p, p).km, 0.0);
    }

    #[test]
    fn one_degree_along_equator() {
        // a * pi / 180 along the equator
        let d = vincenty_distance(pt(0.0, 0.0), pt(0.0, 1.0));
        assert!(!d.fallback);
        assert_abs_diff_eq!(d.km, 111.319_490_8, epsilon = 1e-6);
    }

    #[test]
    fn invalid_coordinates_rejected() {
        assert!(GeoPoint::new(91.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, -180.0).is_err());
        assert!(GeoPoint::new(0.0, 180.0).is_ok());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn normalization_wraps_longitude() {
        assert_eq!(GeoPoint::normalized(95.0, 190.0).unwrap(), pt(90.0, -170.0));
        assert_eq!(GeoPoint::normalized(0.0, -180.0).unwrap(), pt(0.0, 180.0));
        assert_eq!(GeoPoint::normalized(0.0, 540.0).unwrap(), pt(0.0, 180.0));
    }

    #[test]
    fn near_antipodal_pair_falls_back() {
        let d = vincenty_distance(pt(0.0, 0.0), pt(0.5, 179.7));
        assert!(d.fallback);
        assert_abs_diff_eq!(
            d.km,
            haversine_km(pt(0.0, 0.0), pt(0.5, 179.7)),
            epsilon = 0.0
        );
    }

    proptest! {
        #[test]
        fn symmetric_bitwise(a in (-90.0f64..=90.0, -179.9f64..=180.0), b in (-90.0f64..=90.0, -179.9f64..=180.0)) {
            let (p, q) = (pt(a.0, a.1), pt(b.0, b.1));
            prop_assert_eq!(vincenty_distance(p, q).km.to_bits(), vincenty_distance(q, p).km.to_bits());
        }

        #[test]
        fn close_to_haversine(a in (-80.0f64..80.0, -179.0f64..179.0), b in (-80.0f64..80.0, -179.0f64..179.0)) {
            let (p, q) = (pt(a.0, a.1), pt(b.0, b.1));
            let d = vincenty_distance(p, q);
            prop_assume!(!d.fallback && d.km > 1.0);
            let h = haversine_km(p, q);
            prop_assert!((d.km - h).abs() <= 0.006 * h, "{} vs {}", d.km, h);
            prop_assert!(d.km > 0.0);
        }
    }
}
