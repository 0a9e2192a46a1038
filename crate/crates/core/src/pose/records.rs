use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::keypoints::csv_error;
use crate::error::{Error, Result};

/// Metadata for one annotated gesture stroke.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GestureRecord {
    pub gesture_id: String,
    pub speaker_id: String,
    pub dialogue_id: String,
    pub referent_id: String,
    #[serde(rename = "start_frame")]
    pub stroke_start_frame: usize,
    #[serde(rename = "end_frame")]
    pub stroke_end_frame: usize,
}

/// The five pairwise form-similarity dimensions, in file column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormFeature {
    Handedness,
    Shape,
    Movement,
    Rotation,
    Position,
}

impl FormFeature {
    pub const ALL: [FormFeature; 5] = [
        FormFeature::Handedness,
        FormFeature::Shape,
        FormFeature::Movement,
        FormFeature::Rotation,
        FormFeature::Position,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FormFeature::Handedness => "handedness",
            FormFeature::Shape => "shape",
            FormFeature::Movement => "movement",
            FormFeature::Rotation => "rotation",
            FormFeature::Position => "position",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// A coded gesture pair with its binary form-similarity flags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PairAnnotation {
    pub pair_id: String,
    pub gesture_a: String,
    pub gesture_b: String,
    /// Indexed by [`FormFeature::index`].
    pub features: [bool; 5],
}

impl PairAnnotation {
    pub fn shared_count(&self) -> usize {
        self.features.iter().filter(|f| **f).count()
    }

    pub fn has(&self, feature: FormFeature) -> bool {
        self.features[feature.index()]
    }
}

#[derive(Deserialize)]
struct PairRow {
    pair_id: String,
    gesture_a: String,
    gesture_b: String,
    handedness: String,
    shape: String,
    movement: String,
    rotation: String,
    position: String,
}

fn parse_flag(raw: &str, column: &str, file: &str, line: u64) -> Result<bool> {
    match raw.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Parse {
            file: file.to_string(),
            line,
            message: format!("{column} flag must be 0 or 1, got {other:?}"),
        }),
    }
}

pub fn load_gesture_records(path: &Path) -> Result<Vec<GestureRecord>> {
    let file = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut records = Vec::new();
    for row in reader.deserialize::<GestureRecord>() {
        let rec = row.map_err(|e| csv_error(path, e))?;
        if rec.stroke_end_frame < rec.stroke_start_frame {
            return Err(Error::Parse {
                file: file.clone(),
                line: records.len() as u64 + 2,
                message: format!(
                    "gesture {} ends ({}) before it starts ({})",
                    rec.gesture_id, rec.stroke_end_frame, rec.stroke_start_frame
                ),
            });
        }
        records.push(rec);
    }
    validate_records(&records)?;
    Ok(records)
}

/// Unique gesture ids, and every speaker belongs to exactly one dialogue.
pub fn validate_records(records: &[GestureRecord]) -> Result<()> {
    let mut ids = HashSet::new();
    let mut speaker_dialogue: HashMap<&str, &str> = HashMap::new();
    for r in records {
        if !ids.insert(r.gesture_id.as_str()) {
            return Err(Error::Integrity(format!("duplicate gesture id {}", r.gesture_id)));
        }
        if r.stroke_end_frame < r.stroke_start_frame {
            return Err(Error::Integrity(format!("gesture {} has an inverted stroke", r.gesture_id)));
        }
        match speaker_dialogue.get(r.speaker_id.as_str()) {
            Some(d) if *d != r.dialogue_id => {
                return Err(Error::Integrity(format!(
                    "speaker {} appears in dialogues {d} and {}",
                    r.speaker_id, r.dialogue_id
                )))
            }
            _ => {
                speaker_dialogue.insert(&r.speaker_id, &r.dialogue_id);
            }
        }
    }
    Ok(())
}

/// Reads pair annotations and checks them against the known gestures.
pub fn load_pair_annotations(path: &Path, records: &[GestureRecord]) -> Result<Vec<PairAnnotation>> {
    let file = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for row in reader.deserialize::<PairRow>() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = out.len() as u64 + 2;
        let features = [
            parse_flag(&row.handedness, "handedness", &file, line)?,
            parse_flag(&row.shape, "shape", &file, line)?,
            parse_flag(&row.movement, "movement", &file, line)?,
            parse_flag(&row.rotation, "rotation", &file, line)?,
            parse_flag(&row.position, "position", &file, line)?,
        ];
        out.push(PairAnnotation {
            pair_id: row.pair_id,
            gesture_a: row.gesture_a,
            gesture_b: row.gesture_b,
            features,
        });
    }
    validate_annotations(&out, records)?;
    Ok(out)
}

/// Referential integrity: both gestures are known and come from distinct
/// speakers of one dialogue.
pub fn validate_annotations(annotations: &[PairAnnotation], records: &[GestureRecord]) -> Result<()> {
    let by_id: BTreeMap<&str, &GestureRecord> =
        records.iter().map(|r| (r.gesture_id.as_str(), r)).collect();
    for a in annotations {
        let ra = by_id
            .get(a.gesture_a.as_str())
            .ok_or_else(|| Error::Integrity(format!("pair {}: unknown gesture {}", a.pair_id, a.gesture_a)))?;
        let rb = by_id
            .get(a.gesture_b.as_str())
            .ok_or_else(|| Error::Integrity(format!("pair {}: unknown gesture {}", a.pair_id, a.gesture_b)))?;
        if ra.speaker_id == rb.speaker_id || ra.dialogue_id != rb.dialogue_id {
            return Err(Error::Integrity(format!(
                "pair {} must join two speakers of one dialogue",
                a.pair_id
            )));
        }
    }
    Ok(())
}

pub fn write_gesture_records(path: &Path, records: &[GestureRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_pair_annotations(path: &Path, annotations: &[PairAnnotation]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record([
        "pair_id", "gesture_a", "gesture_b", "handedness", "shape", "movement", "rotation", "position",
    ])
    .map_err(|e| csv_error(path, e))?;
    for a in annotations {
        let mut row = vec![a.pair_id.clone(), a.gesture_a.clone(), a.gesture_b.clone()];
        row.extend(a.features.iter().map(|f| if *f { "1" } else { "0" }.to_string()));
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const GESTURES: &str = "gesture_id,speaker_id,dialogue_id,referent_id,start_frame,end_frame\n\
g1,s1,d1,r1,10,20\n\
g2,s2,d1,r1,30,44\n\
g3,s1,d1,r2,50,60\n";

    fn setup(pairs: &str) -> (tempfile::TempDir, Vec<GestureRecord>, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let g = dir.path().join("gestures.csv");
        std::fs::write(&g, GESTURES).unwrap();
        let records = load_gesture_records(&g).unwrap();
        let p = dir.path().join("pairs.csv");
        std::fs::write(
            &p,
            format!("pair_id,gesture_a,gesture_b,handedness,shape,movement,rotation,position\n{pairs}"),
        )
        .unwrap();
        (dir, records, p)
    }

    #[test]
    fn all_flags_set_gives_five() {
        let (_d, records, p) = setup("p1,g1,g2,1,1,1,1,1\n");
        let pairs = load_pair_annotations(&p, &records).unwrap();
        assert_eq!(pairs[0].shared_count(), 5);
    }

    #[test]
    fn non_binary_flag_is_a_parse_error() {
        let (_d, records, p) = setup("p1,g1,g2,1,2,1,1,1\n");
        assert!(matches!(load_pair_annotations(&p, &records), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn unknown_gesture_is_an_integrity_error() {
        let (_d, records, p) = setup("p1,g1,g9,1,0,1,1,1\n");
        assert!(matches!(load_pair_annotations(&p, &records), Err(Error::Integrity(_))));
    }

    #[test]
    fn same_speaker_pair_is_rejected() {
        let (_d, records, p) = setup("p1,g1,g3,1,0,1,1,1\n");
        assert!(matches!(load_pair_annotations(&p, &records), Err(Error::Integrity(_))));
    }

    #[test]
    fn speaker_in_two_dialogues_is_rejected() {
        let (_d, mut records, _) = setup("");
        records[2].dialogue_id = "d2".into();
        assert!(validate_records(&records).is_err());
    }

    #[test]
    fn records_round_trip() {
        let (dir, records, _) = setup("");
        let out = dir.path().join("out.csv");
        write_gesture_records(&out, &records).unwrap();
        assert_eq!(load_gesture_records(&out).unwrap(), records);
    }
}
