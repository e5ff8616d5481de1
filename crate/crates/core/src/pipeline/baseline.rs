//! Reference pipelines that do without propagation, for comparison.

use super::{EditorSettings, TAG_KEY_EDIT};
use crate::editing::{blend_refine, EditError, EditRequest, EditorHandle};
use crate::scene::DatasetManifest;
use crate::seed;
use rayon::prelude::*;

const TAG_INDEPENDENT: u64 = 0x696e;
const TAG_ITERATIVE: u64 = 0x6974;

#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub dataset: DatasetManifest,
    /// Logical editor invocations the baseline made.
    pub invocations: u64,
}

/// Edits every view on its own with one plain edit each.
pub fn run_independent(
    dataset: &DatasetManifest,
    settings: &EditorSettings,
    run_seed: u64,
    handle: &EditorHandle,
) -> Result<BaselineRun, EditError> {
    let before = handle.invocations();
    let seed = seed::derive(run_seed, &[TAG_INDEPENDENT]);
    let images = dataset
        .views
        .par_iter()
        .map(|v| {
            let cfg = settings.key_config(seed, v.id as u64);
            handle.edit(&EditRequest::new(v.image.clone(), v.image.clone(), cfg))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = dataset.clone();
    for (v, img) in out.views.iter_mut().zip(images) {
        v.image = img;
    }
    Ok(BaselineRun { dataset: out, invocations: handle.invocations() - before })
}

/// Iterative dataset update: each round edits every view from its current
/// image and then runs the two blend passes on it, three logical
/// invocations per view and round.
pub fn simulate_iterative_baseline(
    dataset: &DatasetManifest,
    settings: &EditorSettings,
    run_seed: u64,
    rounds: u32,
    handle: &EditorHandle,
) -> Result<BaselineRun, EditError> {
    let before = handle.invocations();
    let mut out = dataset.clone();
    for round in 0..rounds {
        let seed = seed::derive(run_seed, &[TAG_ITERATIVE, round as u64]);
        let images = out
            .views
            .par_iter()
            .zip(&dataset.views)
            .map(|(current, original)| {
                let cfg = settings.key_config(seed, current.id as u64);
                let edited = handle.edit(&EditRequest::new(current.image.clone(), original.image.clone(), cfg))?;
                let blend = settings.blend_config(seed::derive(seed, &[TAG_KEY_EDIT, current.id as u64]));
                blend_refine(&original.image, &edited, handle, &blend)
            })
            .collect::<Result<Vec<_>, _>>()?;
        for (v, img) in out.views.iter_mut().zip(images) {
            v.image = img;
        }
    }
    Ok(BaselineRun { dataset: out, invocations: handle.invocations() - before })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::editing::{EditorSpec, MockEditor};
    use crate::scene::{gen_synthetic, ScenePreset, SyntheticSceneSpec};

    #[test]
    fn invocation_counts() {
        let data = gen_synthetic(&SyntheticSceneSpec::preset(ScenePreset::PlaneRing, 4, 16).unwrap(), 0).unwrap();
        let handle = EditorHandle::from_spec(&EditorSpec::Mock(MockEditor::Grayscale));
        let settings = EditorSettings::default();
        let indep = run_independent(&data, &settings, 1, &handle).unwrap();
        assert_eq!(indep.invocations, 4);
        let iter = simulate_iterative_baseline(&data, &settings, 1, 3, &handle).unwrap();
        assert_eq!(iter.invocations, 3 * 4 * 3);
        assert_eq!(handle.invocations(), 4 + 36);
    }
}
