//! Scene layouts and trial schedules for the three tasks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Category, HandKind};
use crate::scene::{CameraPose, Scene, SceneObject, Vec3};

/// Distance of the middle object from the table edge.
pub const ROW_DEPTH_CM: f64 = 40.0;
pub const ROW_SPACING_CM: f64 = 15.0;
pub const ROW_SLOTS: usize = 5;
pub const HAND_EXTENT: Vec3 = [9.0, 4.0, 12.0];

pub const GRASPING_CATEGORIES: [(&str, Vec3); 5] = [
    ("bottle", [7.0, 25.0, 7.0]),
    ("cup", [8.0, 10.0, 8.0]),
    ("vase", [10.0, 20.0, 10.0]),
    ("teddy bear", [15.0, 20.0, 10.0]),
    ("bowl", [15.0, 7.0, 15.0]),
];
pub const BOTTLE_EXTENT: Vec3 = [7.0, 25.0, 7.0];
pub const PLANT_EXTENT: Vec3 = [15.0, 25.0, 15.0];

/// Bottles per round of the multiple-objects task.
pub const MULTI_ROUNDS: [usize; 3] = [4, 4, 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Grasping,
    MultipleObjects,
    Depth,
}

impl std::str::FromStr for TaskKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "grasping" => Ok(TaskKind::Grasping),
            "multiple_objects" | "multi" => Ok(TaskKind::MultipleObjects),
            "depth" => Ok(TaskKind::Depth),
            other => Err(format!("unknown task {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthTrialKind {
    Back,
    Above,
}

/// Everything a single trial needs besides the shared config.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSpec {
    pub scene: Scene,
    pub target_id: String,
    pub target_category: Category,
    pub depth_kind: Option<DepthTrialKind>,
}

/// splitmix64 finalizer, used to derive independent stream seeds.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn rng(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, a, b))
}

pub fn slot_x(slot: usize) -> f64 {
    (slot as f64 - (ROW_SLOTS as f64 - 1.0) / 2.0) * ROW_SPACING_CM
}

fn hand_at(x: f64, z: f64) -> SceneObject {
    SceneObject::on_table("hand", Category::hand(HandKind::MyRight), x, z, HAND_EXTENT)
}

/// Starting point of the hand for the row tasks: close to the body, right of center.
pub fn row_hand() -> SceneObject {
    hand_at(25.0, 22.0)
}

/// Five unique objects in a row parallel to the table edge. `block` selects
/// the shuffle; the order changes every five trials.
pub fn layout_grasping(seed: u64, block: u64) -> Scene {
    let mut order: Vec<usize> = (0..ROW_SLOTS).collect();
    order.shuffle(&mut rng(seed, 1, block));
    let objects = order
        .iter()
        .enumerate()
        .map(|(slot, &c)| {
            let (label, extent) = GRASPING_CATEGORIES[c];
            SceneObject::on_table(label.replace(' ', "-"), Category::object(label), slot_x(slot), ROW_DEPTH_CM, extent)
        })
        .collect();
    Scene {
        objects,
        hand: row_hand(),
        camera_pose: CameraPose::default(),
    }
}

/// Slots used by the plant and the bottles in a round of the multiple-objects task.
pub fn multi_round_slots(round: usize, seed: u64) -> (usize, Vec<usize>) {
    assert!((1..=3).contains(&round), "round must be 1, 2 or 3");
    let mut plant = 0usize;
    let mut prev: Option<usize> = None;
    for r in 1..=round {
        let mut g = rng(seed, 2, r as u64);
        loop {
            plant = g.random_range(0..ROW_SLOTS);
            if Some(plant) != prev {
                break;
            }
        }
        prev = Some(plant);
    }
    let mut free: Vec<usize> = (0..ROW_SLOTS).filter(|s| *s != plant).collect();
    let n = MULTI_ROUNDS[round - 1];
    if n < free.len() {
        free.shuffle(&mut rng(seed, 3, round as u64));
        free.truncate(n);
        free.sort_unstable();
    }
    (plant, free)
}

/// Scene at the start of a round, before any bottle is removed.
pub fn layout_multi(round: usize, seed: u64) -> Scene {
    let (plant, bottles) = multi_round_slots(round, seed);
    let mut objects: Vec<SceneObject> = bottles
        .iter()
        .map(|&s| SceneObject::on_table(format!("bottle-r{round}-s{s}"), Category::object("bottle"), slot_x(s), ROW_DEPTH_CM, BOTTLE_EXTENT))
        .collect();
    objects.push(SceneObject::on_table(
        format!("plant-r{round}"),
        Category::object("potted plant"),
        slot_x(plant),
        ROW_DEPTH_CM,
        PLANT_EXTENT,
    ));
    Scene {
        objects,
        hand: row_hand(),
        camera_pose: CameraPose::default(),
    }
}

/// Round (1-based) and position within the round for a trial index.
pub fn multi_round_of(trial_index: usize) -> (usize, usize) {
    let mut i = trial_index % MULTI_ROUNDS.iter().sum::<usize>();
    for (r, n) in MULTI_ROUNDS.iter().enumerate() {
        if i < *n {
            return (r + 1, i);
        }
        i -= n;
    }
    unreachable!()
}

/// Obstacle and target placement for the depth task.
pub fn layout_depth(kind: DepthTrialKind, seed: u64, trial_index: u64) -> Scene {
    let mut g = rng(seed, 4, trial_index);
    let target_x = -22.0 + g.random_range(-2.0..2.0);
    let height = match kind {
        DepthTrialKind::Back => 60.0 + g.random_range(-5.0..5.0),
        DepthTrialKind::Above => 15.0 + g.random_range(-2.0..1.0),
    };
    let objects = vec![
        SceneObject::on_table("bottle", Category::object("bottle"), target_x, 50.0, BOTTLE_EXTENT),
        SceneObject::on_table("obstacle", Category::object("box"), 0.0, 37.0, [16.0, height, 10.0]).obstacle(),
    ];
    Scene {
        objects,
        hand: hand_at(25.0, 33.0),
        camera_pose: CameraPose::default(),
    }
}

/// Detour kinds for `trials` depth trials: each block of ten holds five of
/// each kind in seeded order.
pub fn depth_schedule(seed: u64, trials: usize) -> Vec<DepthTrialKind> {
    let mut out = Vec::with_capacity(trials);
    let mut block = 0u64;
    while out.len() < trials {
        let mut kinds: Vec<DepthTrialKind> = [DepthTrialKind::Back; 5].into_iter().chain([DepthTrialKind::Above; 5]).collect();
        kinds.shuffle(&mut rng(seed, 5, block));
        out.extend(kinds);
        block += 1;
    }
    out.truncate(trials);
    out
}

/// Scene and target for trial `trial_index` of a task.
pub fn trial_spec(kind: TaskKind, seed: u64, trial_index: usize) -> TrialSpec {
    match kind {
        TaskKind::Grasping => {
            let scene = layout_grasping(seed, (trial_index / ROW_SLOTS) as u64);
            // left to right through the row, once per block
            let mut by_x: Vec<&SceneObject> = scene.objects.iter().collect();
            by_x.sort_by(|a, b| a.position[0].total_cmp(&b.position[0]));
            let t = by_x[trial_index % ROW_SLOTS].clone();
            TrialSpec {
                target_id: t.id.clone(),
                target_category: t.category.clone(),
                scene,
                depth_kind: None,
            }
        }
        TaskKind::MultipleObjects => {
            let (round, k) = multi_round_of(trial_index);
            let mut scene = layout_multi(round, seed);
            let mut bottles: Vec<SceneObject> = scene.objects.iter().filter(|o| o.category.label == "bottle").cloned().collect();
            bottles.sort_by(|a, b| a.position[0].total_cmp(&b.position[0]));
            for gone in &bottles[..k] {
                scene.remove_object(&gone.id);
            }
            let t = &bottles[k];
            TrialSpec {
                target_id: t.id.clone(),
                target_category: t.category.clone(),
                scene,
                depth_kind: None,
            }
        }
        TaskKind::Depth => {
            let kind = depth_schedule(seed, trial_index + 1)[trial_index];
            let scene = layout_depth(kind, seed, trial_index as u64);
            TrialSpec {
                target_id: "bottle".into(),
                target_category: Category::object("bottle"),
                scene,
                depth_kind: Some(kind),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn grasping_row_shape() {
        for seed in 0..20 {
            let s = layout_grasping(seed, 0);
            s.validate().unwrap();
            assert_eq!(s.objects.len(), 5);
            let labels: BTreeSet<_> = s.objects.iter().map(|o| o.category.label.clone()).collect();
            assert_eq!(labels.len(), 5);
            let mut xs: Vec<f64> = s.objects.iter().map(|o| o.position[0]).collect();
            xs.sort_by(f64::total_cmp);
            for w in xs.windows(2) {
                assert_eq!(w[1] - w[0], 15.0);
            }
            assert!(s.objects.iter().all(|o| o.position[2] == 40.0));
            assert!(s.objects.iter().any(|o| o.position[0] == 0.0));
            assert_eq!(s, layout_grasping(seed, 0));
        }
        // some seed reshuffles between blocks
        assert!((0..20).any(|seed| layout_grasping(seed, 0) != layout_grasping(seed, 1)));
    }

    #[test]
    fn grasping_targets_cover_the_row_each_block() {
        let ids: Vec<String> = (0..5).map(|i| trial_spec(TaskKind::Grasping, 3, i).target_id).collect();
        assert_eq!(ids.iter().collect::<BTreeSet<_>>().len(), 5);
    }

    #[test]
    fn multi_rounds_follow_four_four_two() {
        for seed in 0..20 {
            let counts: Vec<usize> = (0..10)
                .map(|i| {
                    let spec = trial_spec(TaskKind::MultipleObjects, seed, i);
                    assert_eq!(spec.scene.objects.iter().filter(|o| o.category.label == "potted plant").count(), 1);
                    spec.scene.objects.iter().filter(|o| o.category.label == "bottle").count()
                })
                .collect();
            assert_eq!(counts, vec![4, 3, 2, 1, 4, 3, 2, 1, 2, 1]);
            let plants: Vec<usize> = (1..=3).map(|r| multi_round_slots(r, seed).0).collect();
            assert_ne!(plants[0], plants[1]);
            assert_ne!(plants[1], plants[2]);
        }
    }

    #[test]
    fn multi_target_is_leftmost_bottle() {
        let spec = trial_spec(TaskKind::MultipleObjects, 7, 2);
        let min_x = spec
            .scene
            .objects
            .iter()
            .filter(|o| o.category.label == "bottle")
            .map(|o| o.position[0])
            .fold(f64::INFINITY, f64::min);
        assert_eq!(spec.scene.object(&spec.target_id).unwrap().position[0], min_x);
    }

    #[test]
    fn depth_schedule_balances_kinds() {
        for seed in 0..50 {
            let s = depth_schedule(seed, 10);
            assert_eq!(s.iter().filter(|k| **k == DepthTrialKind::Back).count(), 5);
            let spec = trial_spec(TaskKind::Depth, seed, 4);
            assert_eq!(spec.depth_kind, Some(s[4]));
        }
        assert!((0..10).any(|seed| depth_schedule(seed, 10) != depth_schedule(0, 10)));
    }

    #[test]
    fn depth_hand_starts_right_of_obstacle() {
        for kind in [DepthTrialKind::Back, DepthTrialKind::Above] {
            let s = layout_depth(kind, 1, 0);
            s.validate().unwrap();
            let obstacle = s.object("obstacle").unwrap();
            assert!(s.hand.min_corner()[0] > obstacle.max_corner()[0]);
            assert!(!s.hand.intersects(obstacle));
            assert!(s.object("bottle").unwrap().max_corner()[0] < obstacle.min_corner()[0]);
        }
    }
}
