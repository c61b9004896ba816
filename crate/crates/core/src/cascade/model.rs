use roxmltree::{Document, Node};

use crate::error::{Error, Result};

/// One weighted rectangle of a Haar feature, in base-window coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HaarRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HaarFeature {
    pub rects: Vec<HaarRect>,
    pub tilted: bool,
}

/// Single-split decision stump. Evaluates to `fail_value` when the
/// normalized feature response is below `threshold`, `pass_value` otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakClassifier {
    pub feature_index: usize,
    pub threshold: f64,
    pub fail_value: f64,
    pub pass_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeStage {
    pub stage_threshold: f64,
    pub classifiers: Vec<WeakClassifier>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeModel {
    pub window_w: u32,
    pub window_h: u32,
    pub stages: Vec<CascadeStage>,
    pub features: Vec<HaarFeature>,
}

impl CascadeModel {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io {
                path: path.to_path_buf(),
                source: e,
            },
        })?;
        parse_cascade(&bytes)
    }

    pub fn weak_count(&self) -> usize {
        self.stages.iter().map(|s| s.classifiers.len()).sum()
    }
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedCascade(msg.into())
}

fn child<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    node.children().find(|n| n.has_tag_name(name))
}

fn required<'a, 'i>(node: Node<'a, 'i>, name: &str) -> Result<Node<'a, 'i>> {
    child(node, name).ok_or_else(|| malformed(format!("missing <{name}>")))
}

fn text_of<'a>(node: Node<'a, '_>) -> &'a str {
    node.text().unwrap_or("").trim()
}

fn numbers(node: Node<'_, '_>, what: &str) -> Result<Vec<f64>> {
    text_of(node)
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| malformed(format!("bad number `{t}` in <{what}>")))
        })
        .collect()
}

fn scalar<T: std::str::FromStr>(node: Node<'_, '_>, name: &str) -> Result<T> {
    let n = required(node, name)?;
    text_of(n)
        .parse()
        .map_err(|_| malformed(format!("bad value in <{name}>")))
}

fn items<'a, 'i>(node: Node<'a, 'i>) -> impl Iterator<Item = Node<'a, 'i>> {
    node.children().filter(|n| n.has_tag_name("_"))
}

/// Parses a boosted Haar cascade in the current OpenCV XML dialect
/// (`<cascade>` root, `BOOST` stages, `HAAR` features, stump classifiers).
pub fn parse_cascade(model_text: &[u8]) -> Result<CascadeModel> {
    let text = std::str::from_utf8(model_text)
        .map_err(|_| malformed("model file is not valid UTF-8"))?;
    let doc = Document::parse(text).map_err(|e| malformed(e.to_string()))?;
    let root = doc.root_element();
    let storage = if root.has_tag_name("opencv_storage") {
        root
    } else {
        return Err(malformed(format!(
            "expected <opencv_storage> root, found <{}>",
            root.tag_name().name()
        )));
    };
    let top = storage
        .children()
        .find(|n| n.is_element())
        .ok_or_else(|| malformed("empty <opencv_storage>"))?;
    if !top.has_tag_name("cascade") {
        let legacy = top.attribute("type_id") == Some("opencv-haar-classifier")
            || child(top, "size").is_some();
        let name = top.tag_name().name().to_string();
        return Err(if legacy {
            Error::LegacyCascade(name)
        } else {
            malformed(format!("expected <cascade>, found <{name}>"))
        });
    }

    let stage_type = text_of(required(top, "stageType")?);
    if stage_type != "BOOST" {
        return Err(Error::UnsupportedCascade(format!("stage type {stage_type}")));
    }
    let feature_type = text_of(required(top, "featureType")?);
    if feature_type != "HAAR" {
        return Err(Error::UnsupportedCascade(format!(
            "feature type {feature_type}"
        )));
    }
    let window_w: u32 = scalar(top, "width")?;
    let window_h: u32 = scalar(top, "height")?;
    if window_w < 3 || window_h < 3 {
        return Err(malformed(format!("window {window_w}x{window_h} too small")));
    }

    let features = items(required(top, "features")?)
        .enumerate()
        .map(|(i, node)| parse_feature(node, i, window_w, window_h))
        .collect::<Result<Vec<_>>>()?;

    let mut stages = Vec::new();
    for (si, stage) in items(required(top, "stages")?).enumerate() {
        let stage_threshold: f64 = scalar(stage, "stageThreshold")?;
        let mut classifiers = Vec::new();
        for weak in items(required(stage, "weakClassifiers")?) {
            classifiers.push(parse_stump(weak, features.len())?);
        }
        if classifiers.is_empty() {
            return Err(malformed(format!("stage {si} has no weak classifiers")));
        }
        stages.push(CascadeStage {
            stage_threshold,
            classifiers,
        });
    }
    if stages.is_empty() {
        return Err(malformed("cascade has no stages"));
    }
    if let Ok(declared) = scalar::<usize>(top, "stageNum") {
        if declared != stages.len() {
            return Err(malformed(format!(
                "stageNum says {declared} but {} stages are present",
                stages.len()
            )));
        }
    }

    Ok(CascadeModel {
        window_w,
        window_h,
        stages,
        features,
    })
}

fn parse_stump(node: Node<'_, '_>, n_features: usize) -> Result<WeakClassifier> {
    let internal = numbers(required(node, "internalNodes")?, "internalNodes")?;
    let leaves = numbers(required(node, "leafValues")?, "leafValues")?;
    if internal.len() != 4 || leaves.len() != 2 {
        return Err(Error::UnsupportedCascade(
            "only single-split stump classifiers are supported".to_string(),
        ));
    }
    let index = internal[2];
    if index < 0.0 || index.fract() != 0.0 {
        return Err(malformed(format!("bad feature index {index}")));
    }
    let feature_index = index as usize;
    if feature_index >= n_features {
        return Err(Error::DanglingFeature {
            index: feature_index,
            len: n_features,
        });
    }
    Ok(WeakClassifier {
        feature_index,
        threshold: internal[3],
        fail_value: leaves[0],
        pass_value: leaves[1],
    })
}

fn parse_feature(node: Node<'_, '_>, idx: usize, win_w: u32, win_h: u32) -> Result<HaarFeature> {
    let tilted = match child(node, "tilted") {
        Some(t) => text_of(t) != "0",
        None => false,
    };
    if tilted {
        return Err(Error::UnsupportedCascade(format!(
            "feature {idx} is tilted; rotated Haar features are not implemented"
        )));
    }
    let mut rects = Vec::new();
    for r in items(required(node, "rects")?) {
        let v = numbers(r, "rects")?;
        if v.len() != 5 {
            return Err(malformed(format!("feature {idx}: rect needs 5 values")));
        }
        if v[..4].iter().any(|c| *c < 0.0 || c.fract() != 0.0) {
            return Err(malformed(format!("feature {idx}: bad rect coordinates")));
        }
        let rect = HaarRect {
            x: v[0] as u32,
            y: v[1] as u32,
            w: v[2] as u32,
            h: v[3] as u32,
            weight: v[4],
        };
        if rect.w == 0 || rect.h == 0 || rect.x + rect.w > win_w || rect.y + rect.h > win_h {
            return Err(malformed(format!(
                "feature {idx}: rect {:?} outside the {win_w}x{win_h} window",
                (rect.x, rect.y, rect.w, rect.h)
            )));
        }
        rects.push(rect);
    }
    if !(2..=3).contains(&rects.len()) {
        return Err(malformed(format!(
            "feature {idx} has {} rects, expected 2 or 3",
            rects.len()
        )));
    }
    Ok(HaarFeature { rects, tilted })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = r#"<?xml version="1.0"?>
<opencv_storage>
<cascade type_id="opencv-cascade-classifier"><stageType>BOOST</stageType>
  <featureType>HAAR</featureType>
  <height>4</height>
  <width>4</width>
  <stageNum>1</stageNum>
  <stages>
    <_>
      <maxWeakCount>1</maxWeakCount>
      <stageThreshold>-0.5</stageThreshold>
      <weakClassifiers>
        <_>
          <internalNodes>0 -1 FEATURE 0.1</internalNodes>
          <leafValues>-1. 1.</leafValues></_></weakClassifiers></_></stages>
  <features>
    <_>
      <rects>
        <_>0 0 4 4 -1.</_>
        <_>0 0 2 4 2.</_></rects></_></features></cascade>
</opencv_storage>
"#;

    #[test]
    fn parses_tiny_model() {
        let m = parse_cascade(TINY.replace("FEATURE", "0").as_bytes()).unwrap();
        assert_eq!((m.window_w, m.window_h), (4, 4));
        assert_eq!(m.stages.len(), 1);
        assert_eq!(m.features[0].rects.len(), 2);
        assert_eq!(m.stages[0].classifiers[0].pass_value, 1.0);
    }

    #[test]
    fn dangling_feature_index() {
        let err = parse_cascade(TINY.replace("FEATURE", "3").as_bytes()).unwrap_err();
        assert!(matches!(err, Error::DanglingFeature { index: 3, len: 1 }));
    }

    #[test]
    fn empty_input_is_malformed() {
        assert!(matches!(parse_cascade(b""), Err(Error::MalformedCascade(_))));
    }

    #[test]
    fn legacy_format_rejected() {
        let legacy = r#"<?xml version="1.0"?>
<opencv_storage>
<haarcascade_frontalface type_id="opencv-haar-classifier">
  <size>20 20</size>
  <stages></stages>
</haarcascade_frontalface>
</opencv_storage>"#;
        match parse_cascade(legacy.as_bytes()) {
            Err(Error::LegacyCascade(name)) => assert_eq!(name, "haarcascade_frontalface"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tilted_and_tree_models_unsupported() {
        let tilted = TINY
            .replace("FEATURE", "0")
            .replace("2.</_></rects>", "2.</_></rects><tilted>1</tilted>");
        assert!(matches!(
            parse_cascade(tilted.as_bytes()),
            Err(Error::UnsupportedCascade(_))
        ));
        let tree = TINY.replace("0 -1 FEATURE 0.1", "1 -1 0 0.1 0 -2 0 0.3");
        assert!(matches!(
            parse_cascade(tree.as_bytes()),
            Err(Error::UnsupportedCascade(_))
        ));
    }

    #[test]
    fn rect_outside_window_rejected() {
        let bad = TINY.replace("FEATURE", "0").replace("0 0 2 4 2.", "3 0 2 4 2.");
        assert!(matches!(
            parse_cascade(bad.as_bytes()),
            Err(Error::MalformedCascade(_))
        ));
    }
}
