//! Checkpoints are safetensors files. Every backbone and head tensor is
//! stored under its dotted name; the header metadata carries
//! `format`, `backbone_id`, `head` (JSON), `seed`, `trained`, `mask` and
//! `schedule` (JSON or empty).

use std::collections::HashMap;
use std::path::Path;

use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use super::backbone::{Backbone, BackboneProfile};
use super::nn::Param;
use super::{DeepError, DeepModel, HeadSpec, TrainSchedule, TrainableMask};

const FORMAT: &str = "maskpain-checkpoint-1";

fn weights_err(path: &Path, message: impl Into<String>) -> DeepError {
    DeepError::Weights {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn to_bytes(p: &Param) -> Vec<u8> {
    p.data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn read_f32(view: &TensorView<'_>) -> Option<Vec<f32>> {
    (view.dtype() == Dtype::F32).then(|| {
        view.data()
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect()
    })
}

pub fn save_checkpoint(model: &DeepModel, path: &Path) -> Result<(), DeepError> {
    let mut tensors: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    model.visit(&mut |name, p, _| tensors.push((name.to_string(), p.shape.clone(), to_bytes(p))));
    let views = tensors
        .iter()
        .map(|(n, shape, bytes)| {
            TensorView::new(Dtype::F32, shape.clone(), bytes)
                .map(|v| (n.clone(), v))
                .map_err(|e| weights_err(path, e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let head = serde_json::to_string(&model.head_spec).expect("head spec serializes");
    let schedule = model
        .schedule
        .map(|s| serde_json::to_string(&s).expect("schedule serializes"))
        .unwrap_or_default();
    let mask = match model.mask {
        TrainableMask::HeadOnly => "head_only",
        TrainableMask::HeadAndLastStage => "head_and_last_stage",
    };
    let meta: HashMap<String, String> = [
        ("format", FORMAT.to_string()),
        ("backbone_id", model.backbone.profile.backbone_id().to_string()),
        ("head", head),
        ("seed", model.seed.to_string()),
        ("trained", model.trained.to_string()),
        ("mask", mask.to_string()),
        ("schedule", schedule),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let bytes = safetensors::serialize(views, &Some(meta)).map_err(|e| weights_err(path, e.to_string()))?;
    std::fs::write(path, bytes).map_err(|e| weights_err(path, e.to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<DeepModel, DeepError> {
    let bytes = std::fs::read(path).map_err(|e| weights_err(path, e.to_string()))?;
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| weights_err(path, e.to_string()))?;
    let meta = header.metadata().clone().unwrap_or_default();
    let get = |k: &str| meta.get(k).cloned().ok_or_else(|| weights_err(path, format!("missing metadata `{k}`")));
    if get("format")? != FORMAT {
        return Err(weights_err(path, "not a model checkpoint"));
    }
    let id = get("backbone_id")?;
    let profile =
        BackboneProfile::from_backbone_id(&id).ok_or_else(|| weights_err(path, format!("unknown backbone `{id}`")))?;
    let head_spec: HeadSpec = serde_json::from_str(&get("head")?).map_err(|e| weights_err(path, e.to_string()))?;
    let seed: u64 = get("seed")?.parse().map_err(|_| weights_err(path, "bad seed"))?;
    let trained = get("trained")? == "true";
    let mask = match get("mask")?.as_str() {
        "head_only" => TrainableMask::HeadOnly,
        "head_and_last_stage" => TrainableMask::HeadAndLastStage,
        other => return Err(weights_err(path, format!("unknown mask `{other}`"))),
    };
    let schedule_text = get("schedule")?;
    let schedule: Option<TrainSchedule> = if schedule_text.is_empty() {
        None
    } else {
        Some(serde_json::from_str(&schedule_text).map_err(|e| weights_err(path, e.to_string()))?)
    };

    let backbone = match profile {
        BackboneProfile::Smoke => Backbone::smoke(seed),
        BackboneProfile::Paper => Backbone::resnext50_32x4d(seed),
    };
    let mut model = DeepModel::with_backbone(backbone, &head_spec, seed);
    let st = SafeTensors::deserialize(&bytes).map_err(|e| weights_err(path, e.to_string()))?;
    let mut names = Vec::new();
    model.visit(&mut |n, _, _| names.push(n.to_string()));
    for name in names {
        let view = st.tensor(&name).map_err(|_| weights_err(path, format!("missing tensor `{name}`")))?;
        let target = if name.starts_with("head.") {
            model.head.param_mut(&name)
        } else {
            model.backbone.param_mut(&name)
        }
        .expect("name came from the model");
        fill(target, &view, &name, path)?;
    }
    model.trained = trained;
    model.mask = mask;
    model.schedule = schedule;
    Ok(model)
}

fn fill(target: &mut Param, view: &TensorView<'_>, name: &str, path: &Path) -> Result<(), DeepError> {
    if view.shape() != target.shape.as_slice() {
        return Err(weights_err(
            path,
            format!("`{name}` has shape {:?}, expected {:?}", view.shape(), target.shape),
        ));
    }
    target.data = read_f32(view).ok_or_else(|| weights_err(path, format!("`{name}` is not f32")))?;
    Ok(())
}

/// Fills a ResNeXt backbone from safetensors using torchvision names.
/// Classifier (`fc.*`) and `num_batches_tracked` entries are ignored; any
/// other unknown or missing tensor is an error.
pub fn load_pretrained_weights(backbone: &mut Backbone, path: &Path) -> Result<(), DeepError> {
    let bytes = std::fs::read(path).map_err(|e| DeepError::WeightsUnavailable(format!("{}: {e}", path.display())))?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| weights_err(path, e.to_string()))?;
    let mut expected = Vec::new();
    backbone.visit(&mut |n, _, _| expected.push(n.to_string()));
    for name in st.names() {
        if name.starts_with("fc.") || name.ends_with("num_batches_tracked") {
            continue;
        }
        if !expected.iter().any(|e| e == name) {
            return Err(weights_err(path, format!("unexpected tensor `{name}`")));
        }
    }
    for name in expected {
        let view = st.tensor(&name).map_err(|_| weights_err(path, format!("missing tensor `{name}`")))?;
        let target = backbone.param_mut(&name).expect("name came from the backbone");
        fill(target, &view, &name, path)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deep::{build_model, score_frames_deep};
    use image::RgbImage;

    #[test]
    fn smoke_round_trip_preserves_scores() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = build_model(&HeadSpec::default(), BackboneProfile::Smoke, None, 11).unwrap();
        m.trained = true;
        m.schedule = Some(TrainSchedule::default());
        let p = dir.path().join("model.safetensors");
        save_checkpoint(&m, &p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back, m);
        let img = RgbImage::from_fn(32, 32, |x, y| image::Rgb([x as u8 * 7, y as u8 * 5, 90]));
        assert_eq!(score_frames_deep(&m, &[img.clone()]).unwrap(), score_frames_deep(&back, &[img]).unwrap());
    }

    #[test]
    fn resnext_round_trip_and_weight_import() {
        let dir = tempfile::tempdir().unwrap();
        let m = DeepModel::with_backbone(Backbone::resnext50_32x4d(2), &HeadSpec::default(), 2);
        let p = dir.path().join("resnext.safetensors");
        save_checkpoint(&m, &p).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), m);

        // a backbone checkpoint doubles as an importable weight file once
        // the head tensors are ignored; here we write backbone-only weights
        let mut tensors: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
        m.backbone.visit(&mut |n, p, _| tensors.push((n.to_string(), p.shape.clone(), to_bytes(p))));
        let views: Vec<(String, TensorView<'_>)> = tensors
            .iter()
            .map(|(n, s, b)| (n.clone(), TensorView::new(Dtype::F32, s.clone(), b).unwrap()))
            .collect();
        let wp = dir.path().join("weights.safetensors");
        std::fs::write(&wp, safetensors::serialize(views, &None).unwrap()).unwrap();
        let mut fresh = Backbone::resnext50_32x4d(99);
        load_pretrained_weights(&mut fresh, &wp).unwrap();
        assert_eq!(fresh, m.backbone);
        let built = build_model(&HeadSpec::default(), BackboneProfile::Paper, Some(&wp), 5).unwrap();
        assert_eq!(built.backbone, m.backbone);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let bytes = to_bytes(&Param::zeros(&[3]));
        let views = vec![("conv1.weight".to_string(), TensorView::new(Dtype::F32, vec![3], &bytes).unwrap())];
        let wp = dir.path().join("bad.safetensors");
        std::fs::write(&wp, safetensors::serialize(views, &None).unwrap()).unwrap();
        let mut b = Backbone::resnext50_32x4d(0);
        assert!(matches!(load_pretrained_weights(&mut b, &wp), Err(DeepError::Weights { .. })));
    }
}
