//! `priors.csv` sidecar and geodetic conversion.
//!
//! Local files use the header `timestamp_ns,x,y,z,qw,qx,qy,qz,sx,sy,sz`;
//! geodetic files replace `x,y,z` with `lat,lon,alt` (degrees, degrees,
//! metres) and are converted to East-North-Up metres anchored at the first fix.
//! Quaternion columns may be left empty.

use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::{io_err, IngestError, PosePrior};

const WGS84_A: f64 = 6_378_137.0;
const WGS84_F: f64 = 1.0 / 298.257_223_563;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Geodetic {
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub alt_m: f64,
}

fn to_ecef(g: &Geodetic) -> Vector3<f64> {
    let e2 = WGS84_F * (2.0 - WGS84_F);
    let (lat, lon) = (g.lat_deg.to_radians(), g.lon_deg.to_radians());
    let n = WGS84_A / (1.0 - e2 * lat.sin().powi(2)).sqrt();
    Vector3::new(
        (n + g.alt_m) * lat.cos() * lon.cos(),
        (n + g.alt_m) * lat.cos() * lon.sin(),
        (n * (1.0 - e2) + g.alt_m) * lat.sin(),
    )
}

/// East-North-Up coordinates of `fix` in the tangent plane at `anchor`.
pub fn geodetic_to_enu(fix: &Geodetic, anchor: &Geodetic) -> Vector3<f64> {
    let d = to_ecef(fix) - to_ecef(anchor);
    let (lat, lon) = (anchor.lat_deg.to_radians(), anchor.lon_deg.to_radians());
    let (sl, cl, so, co) = (lat.sin(), lat.cos(), lon.sin(), lon.cos());
    Vector3::new(
        -so * d.x + co * d.y,
        -sl * co * d.x - sl * so * d.y + cl * d.z,
        cl * co * d.x + cl * so * d.y + sl * d.z,
    )
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

pub fn read_priors_csv(path: &Path) -> Result<Vec<PosePrior>, IngestError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => {
            IngestError::Io { path: path.to_path_buf(), source: std::io::Error::other(e.to_string()) }
        }
        _ => IngestError::Csv(e),
    })?;
    let headers = reader.headers()?.clone();
    let bad = |line: String, reason: &str| IngestError::InvalidPrior { line, reason: reason.to_string() };
    let need =
        |name: &str| column(&headers, name).ok_or_else(|| bad("header".into(), &format!("missing column {name}")));
    let geodetic = column(&headers, "lat").is_some();
    let (c0, c1, c2) =
        if geodetic { (need("lat")?, need("lon")?, need("alt")?) } else { (need("x")?, need("y")?, need("z")?) };
    let ts = need("timestamp_ns")?;
    let sig = [need("sx")?, need("sy")?, need("sz")?];
    let quat = ["qw", "qx", "qy", "qz"].map(|n| column(&headers, n));

    let mut anchor: Option<Geodetic> = None;
    let mut out = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = format!("{}:{}", path.display(), row + 2);
        let num = |i: usize| -> Result<f64, IngestError> {
            rec.get(i).and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| bad(line.clone(), "expected a number"))
        };
        let timestamp_ns: i64 =
            rec.get(ts).and_then(|s| s.parse().ok()).ok_or_else(|| bad(line.clone(), "bad timestamp"))?;
        let (a, b, c) = (num(c0)?, num(c1)?, num(c2)?);
        let position_m = if geodetic {
            let fix = Geodetic { lat_deg: a, lon_deg: b, alt_m: c };
            let anchor = *anchor.get_or_insert(fix);
            geodetic_to_enu(&fix, &anchor)
        } else {
            Vector3::new(a, b, c)
        };
        let qs: Vec<Option<&str>> = quat.iter().map(|c| c.and_then(|i| rec.get(i)).filter(|s| !s.is_empty())).collect();
        let orientation = if qs.iter().all(Option::is_some) {
            let v: Vec<f64> = qs
                .iter()
                .map(|s| s.unwrap().parse::<f64>().map_err(|_| bad(line.clone(), "bad quaternion")))
                .collect::<Result<_, _>>()?;
            let q = Quaternion::new(v[0], v[1], v[2], v[3]);
            if (q.norm() - 1.0).abs() > 1e-6 {
                return Err(bad(line, "quaternion is not unit norm"));
            }
            Some(UnitQuaternion::new_normalize(q))
        } else if qs.iter().any(Option::is_some) {
            return Err(bad(line, "quaternion columns must be all set or all empty"));
        } else {
            None
        };
        let position_sigma_m = Vector3::new(num(sig[0])?, num(sig[1])?, num(sig[2])?);
        let prior = PosePrior { timestamp_ns, position_m, orientation, position_sigma_m };
        prior.validate().map_err(|r| bad(line.clone(), &r))?;
        out.push(prior);
    }
    Ok(out)
}

pub fn write_priors_csv(path: &Path, priors: &[PosePrior]) -> Result<(), IngestError> {
    let mut s = String::from("timestamp_ns,x,y,z,qw,qx,qy,qz,sx,sy,sz\n");
    for p in priors {
        let q = p.orientation.map(|q| format!("{},{},{},{}", q.w, q.i, q.j, q.k)).unwrap_or_else(|| ",,,".into());
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            p.timestamp_ns,
            p.position_m.x,
            p.position_m.y,
            p.position_m.z,
            q,
            p.position_sigma_m.x,
            p.position_sigma_m.y,
            p.position_sigma_m.z
        ));
    }
    std::fs::write(path, s).map_err(io_err(path))
}
