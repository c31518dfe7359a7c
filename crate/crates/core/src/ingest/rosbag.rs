//! rosbag2 SQLite storage: reader used by ingestion and a minimal writer used
//! to produce fixtures.

use std::path::{Path, PathBuf};

use rusqlite::{params, Connection, OpenFlags};

use super::manifest::{read_intrinsics, INTRINSICS_FILE, PRIORS_FILE};
use super::messages::{
    CameraInfoMsg, ImageMsg, NavSatFixMsg, PoseMsg, CAMERA_INFO_TYPE, IMAGE_TYPE, NAVSAT_TYPE, POSE_COV_TYPE, POSE_TYPE,
};
use super::priors::{geodetic_to_enu, Geodetic};
use super::{io_err, read_priors_csv, IngestConfig, IngestError, PosePrior, RecordingFrame};
use crate::camera::CameraIntrinsics;
use crate::par;

const SCHEMA: &str = "
CREATE TABLE topics(
    id INTEGER PRIMARY KEY,
    name TEXT NOT NULL,
    type TEXT NOT NULL,
    serialization_format TEXT NOT NULL,
    offered_qos_profiles TEXT NOT NULL DEFAULT ''
);
CREATE TABLE messages(
    id INTEGER PRIMARY KEY,
    topic_id INTEGER NOT NULL,
    timestamp INTEGER NOT NULL,
    data BLOB NOT NULL
);
CREATE INDEX timestamp_idx ON messages (timestamp ASC);
";

/// Writes a single-file rosbag2 database.
pub struct BagWriter {
    conn: Connection,
}

impl BagWriter {
    /// Creates `path` (a `.db3` file), replacing nothing: the file must not exist.
    pub fn create(path: &Path) -> Result<Self, IngestError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let conn = Connection::open(path)?;
        conn.execute_batch(SCHEMA)?;
        conn.execute_batch("BEGIN")?;
        Ok(Self { conn })
    }

    pub fn add_topic(&mut self, name: &str, msg_type: &str) -> Result<i64, IngestError> {
        self.conn.execute(
            "INSERT INTO topics(name, type, serialization_format) VALUES (?1, ?2, 'cdr')",
            params![name, msg_type],
        )?;
        Ok(self.conn.last_insert_rowid())
    }

    pub fn write(&mut self, topic_id: i64, timestamp_ns: i64, data: &[u8]) -> Result<(), IngestError> {
        self.conn.execute(
            "INSERT INTO messages(topic_id, timestamp, data) VALUES (?1, ?2, ?3)",
            params![topic_id, timestamp_ns, data],
        )?;
        Ok(())
    }

    pub fn finish(self) -> Result<(), IngestError> {
        self.conn.execute_batch("COMMIT")?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Topic {
    id: i64,
    name: String,
    msg_type: String,
}

fn locate_db(path: &Path) -> Result<PathBuf, IngestError> {
    if path.is_file() {
        return Ok(path.to_path_buf());
    }
    let mut dbs: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(io_err(path))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "db3"))
        .collect();
    dbs.sort();
    dbs.into_iter().next().ok_or_else(|| IngestError::NoFrames(path.to_path_buf()))
}

fn pick_topic<'a>(topics: &'a [Topic], wanted: Option<&str>, msg_type: &str) -> Result<Option<&'a Topic>, IngestError> {
    match wanted {
        Some(name) => {
            topics.iter().find(|t| t.name == name).map(Some).ok_or_else(|| IngestError::UnknownTopic(name.to_string()))
        }
        None => Ok(topics.iter().find(|t| t.msg_type == msg_type)),
    }
}

fn messages(conn: &Connection, topic: i64) -> Result<Vec<(i64, i64, Vec<u8>)>, IngestError> {
    let mut stmt =
        conn.prepare("SELECT id, timestamp, data FROM messages WHERE topic_id = ?1 ORDER BY timestamp, id")?;
    let rows = stmt.query_map([topic], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?)))?;
    Ok(rows.collect::<Result<_, _>>()?)
}

type Parts = (Vec<RecordingFrame>, CameraIntrinsics, Vec<PosePrior>);

pub(crate) fn read(path: &Path, config: &IngestConfig) -> Result<Parts, IngestError> {
    let db = locate_db(path)?;
    let sidecar_dir = db.parent().map(Path::to_path_buf).unwrap_or_default();
    let conn = Connection::open_with_flags(&db, OpenFlags::SQLITE_OPEN_READ_ONLY)?;
    let topics: Vec<Topic> = {
        let mut stmt = conn.prepare("SELECT id, name, type FROM topics ORDER BY id")?;
        let rows = stmt.query_map([], |r| Ok(Topic { id: r.get(0)?, name: r.get(1)?, msg_type: r.get(2)? }))?;
        rows.collect::<Result<_, _>>()?
    };

    let image_topic = match pick_topic(&topics, config.image_topic.as_deref(), IMAGE_TYPE)? {
        Some(t) => t.clone(),
        None => return Err(IngestError::NoFrames(path.to_path_buf())),
    };
    if image_topic.msg_type != IMAGE_TYPE {
        return Err(IngestError::UnsupportedEncoding(image_topic.msg_type.clone()));
    }
    let raw = messages(&conn, image_topic.id)?;
    let decoded = par::map(&raw, |(id, ts, data)| {
        let msg = ImageMsg::decode(data).map_err(|source| IngestError::Cdr { message: *id, source })?;
        let stamp = msg.header.stamp_ns();
        let image = msg.to_image()?;
        Ok::<_, IngestError>((if stamp != 0 { stamp } else { *ts }, image))
    });
    let mut frames = Vec::with_capacity(decoded.len());
    for (i, d) in decoded.into_iter().enumerate() {
        let (timestamp_ns, image) = d.map_err(|e| match e {
            IngestError::InvalidFrame { reason, .. } => IngestError::InvalidFrame { index: i, reason },
            other => other,
        })?;
        frames.push(RecordingFrame { frame_id: i, timestamp_ns, image, source_topic: image_topic.name.clone() });
    }

    let intrinsics = match pick_topic(&topics, config.camera_info_topic.as_deref(), CAMERA_INFO_TYPE)? {
        Some(t) if t.msg_type == CAMERA_INFO_TYPE => {
            let msgs = messages(&conn, t.id)?;
            match msgs.first() {
                Some((id, _, data)) => CameraInfoMsg::decode(data)
                    .map_err(|source| IngestError::Cdr { message: *id, source })?
                    .intrinsics(),
                None => read_sidecar_intrinsics(&sidecar_dir)?,
            }
        }
        _ => read_sidecar_intrinsics(&sidecar_dir)?,
    };

    let mut priors = Vec::new();
    if let Some(name) = &config.prior_topic {
        let topic = pick_topic(&topics, Some(name), "")?.expect("named topic resolved").clone();
        let mut anchor: Option<Geodetic> = None;
        for (id, _, data) in messages(&conn, topic.id)? {
            let cdr = |source| IngestError::Cdr { message: id, source };
            let prior = match topic.msg_type.as_str() {
                NAVSAT_TYPE => {
                    let fix = NavSatFixMsg::decode(&data).map_err(cdr)?;
                    let g = Geodetic { lat_deg: fix.latitude, lon_deg: fix.longitude, alt_m: fix.altitude };
                    let a = *anchor.get_or_insert(g);
                    let c = fix.position_covariance;
                    let sig = |v: f64| {
                        if v > 0.0 {
                            v.sqrt()
                        } else {
                            config.default_prior_sigma_m
                        }
                    };
                    PosePrior {
                        timestamp_ns: fix.header.stamp_ns(),
                        position_m: geodetic_to_enu(&g, &a),
                        orientation: None,
                        position_sigma_m: nalgebra::Vector3::new(sig(c[0]), sig(c[4]), sig(c[8])),
                    }
                }
                POSE_COV_TYPE => PoseMsg::decode(&data, true).map_err(cdr)?.to_prior(config.default_prior_sigma_m),
                POSE_TYPE => PoseMsg::decode(&data, false).map_err(cdr)?.to_prior(config.default_prior_sigma_m),
                other => return Err(IngestError::UnsupportedEncoding(other.to_string())),
            };
            priors.push(prior);
        }
    } else {
        let csv = sidecar_dir.join(PRIORS_FILE);
        if csv.exists() {
            priors = read_priors_csv(&csv)?;
        }
    }
    Ok((frames, intrinsics, priors))
}

fn read_sidecar_intrinsics(dir: &Path) -> Result<CameraIntrinsics, IngestError> {
    let path = dir.join(INTRINSICS_FILE);
    if path.exists() {
        read_intrinsics(&path)
    } else {
        Err(IngestError::MissingIntrinsics(path))
    }
}
