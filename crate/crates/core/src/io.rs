//! Line-delimited JSON dataset files.
//!
//! One record per line:
//!
//! ```text
//! {"id":"img-1","width":640,"height":480,
//!  "predictions":[{"cx":10.5,"cy":20,"w":8,"h":8,"score":0.93}],
//!  "ground_truth":[{"cx":11,"cy":20,"w":8,"h":8}]}
//! ```
//!
//! Images annotated with a total count only replace `ground_truth` with
//! `"count": <n>`. Blank lines are skipped. Numbers are written in their
//! shortest round-trip form.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::{BBox, Detection, ImageRecord};

const RECORD_KEYS: &[&str] = &[
    "id",
    "width",
    "height",
    "predictions",
    "ground_truth",
    "count",
];
const PREDICTION_KEYS: &[&str] = &["cx", "cy", "w", "h", "score"];
const BOX_KEYS: &[&str] = &["cx", "cy", "w", "h"];

#[derive(Serialize, Deserialize)]
struct RecordWire {
    id: String,
    width: f64,
    height: f64,
    #[serde(default)]
    predictions: Vec<Detection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_truth: Option<Vec<BBox>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    count: Option<usize>,
}

fn unknown_keys(value: &Value) -> Vec<String> {
    let mut found = Vec::new();
    let mut check = |obj: &Value, allowed: &[&str], path: &str| {
        if let Some(map) = obj.as_object() {
            found.extend(
                map.keys()
                    .filter(|k| !allowed.contains(&k.as_str()))
                    .map(|k| format!("{path}{k}")),
            );
        }
    };
    check(value, RECORD_KEYS, "");
    for (list, allowed) in [("predictions", PREDICTION_KEYS), ("ground_truth", BOX_KEYS)] {
        if let Some(items) = value.get(list).and_then(Value::as_array) {
            for (i, item) in items.iter().enumerate() {
                check(item, allowed, &format!("{list}[{i}]."));
            }
        }
    }
    found
}

/// Parses one line. In strict mode unknown fields are an error; otherwise
/// they are logged and ignored.
pub fn parse_record(line: &str, line_no: usize, strict: bool) -> Result<ImageRecord> {
    let fail = |reason: String| Error::Parse {
        line: line_no,
        reason,
    };
    let value: Value = serde_json::from_str(line).map_err(|e| fail(e.to_string()))?;
    let unknown = unknown_keys(&value);
    if !unknown.is_empty() {
        if strict {
            return Err(fail(format!("unknown field(s): {}", unknown.join(", "))));
        }
        log::warn!(
            "line {line_no}: ignoring unknown field(s): {}",
            unknown.join(", ")
        );
    }
    let wire: RecordWire = serde_json::from_value(value).map_err(|e| fail(e.to_string()))?;
    let (ground_truth, gt_count) = match (wire.ground_truth, wire.count) {
        (Some(_), Some(_)) => {
            return Err(fail(
                "`ground_truth` and `count` are mutually exclusive".into(),
            ))
        }
        (Some(gt), None) => (gt, None),
        (None, Some(n)) => (Vec::new(), Some(n)),
        (None, None) => return Err(fail("record needs `ground_truth` or `count`".into())),
    };
    let record = ImageRecord {
        id: wire.id,
        width: wire.width,
        height: wire.height,
        predictions: wire.predictions,
        ground_truth,
        gt_count,
    };
    record.validate().map_err(|e| fail(e.to_string()))?;
    Ok(record)
}

/// Streams records from a reader, numbering lines from 1.
pub fn records(reader: impl BufRead, strict: bool) -> impl Iterator<Item = Result<ImageRecord>> {
    reader
        .lines()
        .enumerate()
        .filter_map(move |(i, line)| match line {
            Err(e) => Some(Err(Error::Io(e))),
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(parse_record(&l, i + 1, strict)),
        })
}

pub fn read_dataset(reader: impl BufRead, strict: bool) -> Result<Vec<ImageRecord>> {
    records(reader, strict).collect()
}

pub fn to_json_line(record: &ImageRecord) -> String {
    let wire = RecordWire {
        id: record.id.clone(),
        width: record.width,
        height: record.height,
        predictions: record.predictions.clone(),
        ground_truth: record
            .gt_count
            .is_none()
            .then(|| record.ground_truth.clone()),
        count: record.gt_count,
    };
    serde_json::to_string(&wire).expect("records serialize")
}

pub fn write_dataset(mut writer: impl Write, records: &[ImageRecord]) -> Result<()> {
    for r in records {
        writeln!(writer, "{}", to_json_line(r))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LINE: &str = r#"{"id":"a","width":100,"height":80,"predictions":[{"cx":10.5,"cy":20,"w":8,"h":8,"score":0.9}],"ground_truth":[{"cx":11,"cy":20,"w":8,"h":8}]}"#;

    #[test]
    fn parses_a_record() {
        let r = parse_record(LINE, 1, true).unwrap();
        assert_eq!(r.id, "a");
        assert_eq!(r.predictions[0].bbox.cx, 10.5);
        assert_eq!(r.predictions[0].score, 0.9);
        assert_eq!(r.ground_truth, vec![BBox::new(11.0, 20.0, 8.0, 8.0)]);
        assert!(r.has_instances());
    }

    #[test]
    fn count_only_records() {
        let r = parse_record(
            r#"{"id":"c","width":10,"height":10,"predictions":[],"count":4}"#,
            1,
            true,
        )
        .unwrap();
        assert_eq!(r.true_count(), 4);
        assert!(!r.has_instances());
        assert_eq!(parse_record(&to_json_line(&r), 1, true).unwrap(), r);
        let both = r#"{"id":"c","width":10,"height":10,"ground_truth":[],"count":4}"#;
        assert!(parse_record(both, 1, true).is_err());
        let neither = r#"{"id":"c","width":10,"height":10,"predictions":[]}"#;
        assert!(parse_record(neither, 1, true).is_err());
    }

    #[test]
    fn unknown_fields_strict_vs_lenient() {
        let extra = LINE.replacen(r#""score":0.9"#, r#""score":0.9,"label":"handle""#, 1);
        match parse_record(&extra, 7, true) {
            Err(Error::Parse { line, reason }) => {
                assert_eq!(line, 7);
                assert!(reason.contains("predictions[0].label"), "{reason}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(parse_record(&extra, 7, false).is_ok());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = format!("{LINE}\n\n{{\"id\":\"b\",\"width\":10}}\n");
        match read_dataset(text.as_bytes(), true) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad_score = LINE.replace("0.9", "1.9");
        assert!(parse_record(&bad_score, 1, false).is_err());
        let nonfinite = LINE.replace("10.5", "1e999");
        assert!(parse_record(&nonfinite, 1, false).is_err());
    }

    fn arb_record() -> impl Strategy<Value = ImageRecord> {
        let bx = (0.0..640.0f64, 0.0..480.0f64, 0.5..50.0f64, 0.5..50.0f64);
        (
            "[a-z0-9_-]{1,12}",
            prop::collection::vec((bx.clone(), 0.0..=1.0f64), 0..8),
            prop::collection::vec(bx, 0..8),
        )
            .prop_map(|(id, preds, gts)| {
                let mut r = ImageRecord::new(id, 640.0, 480.0);
                r.predictions = preds
                    .into_iter()
                    .map(|((x, y, w, h), s)| Detection::new(BBox::new(x, y, w, h), s))
                    .collect();
                r.ground_truth = gts
                    .into_iter()
                    .map(|(x, y, w, h)| BBox::new(x, y, w, h))
                    .collect();
                r
            })
    }

    proptest! {
        #[test]
        fn round_trip(records in prop::collection::vec(arb_record(), 0..5)) {
            let mut buf = Vec::new();
            write_dataset(&mut buf, &records).unwrap();
            let back = read_dataset(buf.as_slice(), true).unwrap();
            prop_assert_eq!(back, records);
        }
    }
}
