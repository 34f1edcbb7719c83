//! Ellipsoidal distances between coordinates, including the near-antipodal
//! fallback.
//!
//!     cargo run --example geodesic

use cmdn::geo::{haversine_km, vincenty_distance, GeoPoint};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tokyo = GeoPoint::new(35.6812, 139.7671)?;
    let kagoshima = GeoPoint::new(31.5966, 130.5571)?;
    let sapporo = GeoPoint::new(43.0618, 141.3545)?;
    for (name, p) in [("Kagoshima", kagoshima), ("Sapporo", sapporo)] {
        let d = vincenty_distance(tokyo, p);
        println!(
            "Tokyo - {name}: {:.3} km on the ellipsoid, {:.3} km on the sphere",
            d.km,
            haversine_km(tokyo, p)
        );
    }
    let d = vincenty_distance(GeoPoint::new(0.0, 0.0)?, GeoPoint::new(0.5, 179.7)?);
    println!(
        "nearly antipodal pair: {:.1} km (fallback used: {})",
        d.km, d.fallback
    );
    Ok(())
}
