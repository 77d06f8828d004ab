//! YOLO-style text annotations: `class cx cy w h` per line, all normalized
//! to [0, 1]; prediction files carry a trailing confidence field.

use crate::detect::{BBox, Detection, GroundTruth};
use crate::error::{Error, Result};

/// One normalized annotation line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnnotationRecord {
    pub class_id: u32,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: Option<f64>,
}

impl AnnotationRecord {
    pub fn validate(&self, line: usize) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(self.cx) && unit(self.cy) && unit(self.w) && unit(self.h)) {
            return Err(Error::AnnotationParse {
                line,
                message: "normalized fields must be in [0, 1]".into(),
            });
        }
        if let Some(c) = self.confidence {
            if !unit(c) {
                return Err(Error::AnnotationParse {
                    line,
                    message: format!("confidence {c} outside [0, 1]"),
                });
            }
        }
        Ok(())
    }

    /// Corner box in absolute pixels, clamped to the image bounds.
    pub fn to_bbox(&self, img_w: usize, img_h: usize) -> BBox {
        let (wf, hf) = (img_w as f64, img_h as f64);
        let x_min = ((self.cx - self.w / 2.0) * wf).clamp(0.0, wf);
        let x_max = ((self.cx + self.w / 2.0) * wf).clamp(0.0, wf);
        let y_min = ((self.cy - self.h / 2.0) * hf).clamp(0.0, hf);
        let y_max = ((self.cy + self.h / 2.0) * hf).clamp(0.0, hf);
        BBox { x_min, y_min, x_max, y_max }
    }

    pub fn from_bbox(bbox: &BBox, class_id: u32, confidence: Option<f64>, img_w: usize, img_h: usize) -> Self {
        let (wf, hf) = (img_w as f64, img_h as f64);
        AnnotationRecord {
            class_id,
            cx: (bbox.x_min + bbox.x_max) / 2.0 / wf,
            cy: (bbox.y_min + bbox.y_max) / 2.0 / hf,
            w: (bbox.x_max - bbox.x_min) / wf,
            h: (bbox.y_max - bbox.y_min) / hf,
            confidence,
        }
    }
}

fn parse_line(text: &str, line: usize, expect_confidence: bool) -> Result<AnnotationRecord> {
    let fields: Vec<&str> = text.split_whitespace().collect();
    let expected = if expect_confidence { 6 } else { 5 };
    if fields.len() != expected {
        return Err(Error::AnnotationParse {
            line,
            message: format!("expected {expected} fields, found {}", fields.len()),
        });
    }
    let parse_f = |s: &str, what: &str| -> Result<f64> {
        s.parse().map_err(|_| Error::AnnotationParse {
            line,
            message: format!("invalid {what} '{s}'"),
        })
    };
    let class_id: u32 = fields[0].parse().map_err(|_| Error::AnnotationParse {
        line,
        message: format!("invalid class id '{}'", fields[0]),
    })?;
    let record = AnnotationRecord {
        class_id,
        cx: parse_f(fields[1], "cx")?,
        cy: parse_f(fields[2], "cy")?,
        w: parse_f(fields[3], "w")?,
        h: parse_f(fields[4], "h")?,
        confidence: if expect_confidence {
            Some(parse_f(fields[5], "confidence")?)
        } else {
            None
        },
    };
    record.validate(line)?;
    Ok(record)
}

fn parse_records(text: &str, expect_confidence: bool) -> Result<Vec<(usize, AnnotationRecord)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        out.push((line, parse_line(raw, line, expect_confidence)?));
    }
    Ok(out)
}

/// Parse a ground-truth file (`class cx cy w h`). An empty file is a valid
/// image with no objects.
pub fn parse_ground_truths(
    text: &str,
    image_id: &str,
    img_w: usize,
    img_h: usize,
) -> Result<Vec<GroundTruth>> {
    Ok(parse_records(text, false)?
        .into_iter()
        .map(|(_, r)| GroundTruth {
            bbox: r.to_bbox(img_w, img_h),
            class_id: r.class_id,
            image_id: image_id.to_string(),
        })
        .collect())
}

/// Parse a prediction file (`class cx cy w h conf`).
pub fn parse_detections(
    text: &str,
    image_id: &str,
    img_w: usize,
    img_h: usize,
) -> Result<Vec<Detection>> {
    Ok(parse_records(text, true)?
        .into_iter()
        .map(|(_, r)| Detection {
            bbox: r.to_bbox(img_w, img_h),
            class_id: r.class_id,
            confidence: r.confidence.unwrap(),
            image_id: image_id.to_string(),
        })
        .collect())
}

pub fn format_record(r: &AnnotationRecord) -> String {
    match r.confidence {
        Some(c) => format!("{} {:.6} {:.6} {:.6} {:.6} {:.6}", r.class_id, r.cx, r.cy, r.w, r.h, c),
        None => format!("{} {:.6} {:.6} {:.6} {:.6}", r.class_id, r.cx, r.cy, r.w, r.h),
    }
}
