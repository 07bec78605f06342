//! Scene documents (TOML).
//!
//! ```toml
//! schema_version = 1
//!
//! [camera]
//! position = [0.0, 40.0, -5.0]   # cm, table frame
//! yaw_deg = 0.0
//! pitch_deg = 38.7               # positive looks down
//!
//! [hand]
//! id = "hand"
//! label = "hand"
//! hand_kind = "my_right"
//! position = [0.0, 2.0, 22.0]    # center of the extent
//! extent = [9.0, 4.0, 12.0]      # width, height, depth
//!
//! [[objects]]
//! id = "bottle-1"
//! label = "bottle"
//! position = [0.0, 12.5, 40.0]
//! extent = [7.0, 25.0, 7.0]
//! is_obstacle = false
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CameraPose, Scene, SceneError, SceneObject, Vec3};
use crate::geometry::{Category, HandKind};

pub const SCENE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SceneFileError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported schema_version {0} (expected {SCENE_SCHEMA_VERSION})")]
    Version(u32),
    #[error(transparent)]
    Invalid(#[from] SceneError),
}

#[derive(Debug, Serialize, Deserialize)]
struct ObjectDoc {
    id: String,
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hand_kind: Option<HandKind>,
    position: Vec3,
    extent: Vec3,
    #[serde(default)]
    is_obstacle: bool,
}

impl From<&SceneObject> for ObjectDoc {
    fn from(o: &SceneObject) -> Self {
        Self {
            id: o.id.clone(),
            label: o.category.label.clone(),
            hand_kind: o.category.hand_kind,
            position: o.position,
            extent: o.extent,
            is_obstacle: o.is_obstacle,
        }
    }
}

impl From<ObjectDoc> for SceneObject {
    fn from(d: ObjectDoc) -> Self {
        SceneObject {
            id: d.id,
            category: Category {
                label: d.label,
                hand_kind: d.hand_kind,
            },
            position: d.position,
            extent: d.extent,
            is_obstacle: d.is_obstacle,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneDoc {
    schema_version: u32,
    camera: CameraPose,
    hand: ObjectDoc,
    #[serde(default)]
    objects: Vec<ObjectDoc>,
}

pub fn parse_scene(text: &str) -> Result<Scene, SceneFileError> {
    let doc: SceneDoc = toml::from_str(text)?;
    if doc.schema_version != SCENE_SCHEMA_VERSION {
        return Err(SceneFileError::Version(doc.schema_version));
    }
    let scene = Scene {
        objects: doc.objects.into_iter().map(SceneObject::from).collect(),
        hand: doc.hand.into(),
        camera_pose: doc.camera,
    };
    scene.validate()?;
    Ok(scene)
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene, SceneFileError> {
    parse_scene(&std::fs::read_to_string(path)?)
}

pub fn scene_to_toml(scene: &Scene) -> String {
    let doc = SceneDoc {
        schema_version: SCENE_SCHEMA_VERSION,
        camera: scene.camera_pose,
        hand: (&scene.hand).into(),
        objects: scene.objects.iter().map(ObjectDoc::from).collect(),
    };
    toml::to_string(&doc).expect("scene documents always serialize")
}
