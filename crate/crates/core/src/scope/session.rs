use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use super::{capture_fov, FovFrame, Objective, ObjectiveName, Result, ScopeError, StagePose, VirtualSlide};
use crate::netgraph::{load_graph, NetGraph};

pub const NO_MODEL_NOTICE: &str = "no-model";

/// Networks keyed by objective tag. Tags that are not objective names (for
/// example "bench") are kept too and reachable through [`ModelRegistry::by_tag`].
#[derive(Debug, Clone, Default)]
pub struct ModelRegistry {
    models: BTreeMap<String, Arc<NetGraph>>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers under the graph's objective tag, replacing any previous model.
    pub fn register(&mut self, g: NetGraph) {
        self.models.insert(g.objective_tag().to_string(), Arc::new(g));
    }

    /// Loads every `*.json` graph in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut reg = Self::new();
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        paths.sort();
        for p in paths {
            reg.register(load_graph(&p, None)?);
        }
        Ok(reg)
    }

    pub fn for_objective(&self, name: ObjectiveName) -> Option<Arc<NetGraph>> {
        self.by_tag(name.tag())
    }

    pub fn by_tag(&self, tag: &str) -> Option<Arc<NetGraph>> {
        self.models.get(tag).cloned()
    }

    pub fn tags(&self) -> Vec<String> {
        self.models.keys().cloned().collect()
    }
}

#[derive(Debug, Clone)]
pub struct ObjectiveChange {
    pub objective: Objective,
    pub model: Option<Arc<NetGraph>>,
    /// `Some("no-model")` when nothing is registered for the objective.
    pub notice: Option<&'static str>,
}

/// Mutable microscope state for one viewer: slide, stage pose, objective and
/// the model selected for it. Frames carry strictly increasing `seq`.
#[derive(Debug)]
pub struct ScopeSession {
    slide: Arc<VirtualSlide>,
    registry: Arc<ModelRegistry>,
    pose: StagePose,
    objective: Objective,
    model: Option<Arc<NetGraph>>,
    sensor_pitch_um: f64,
    fov_px: usize,
    next_seq: u64,
}

impl ScopeSession {
    /// Starts at the slide center with the 10X objective.
    pub fn new(slide: Arc<VirtualSlide>, registry: Arc<ModelRegistry>, fov_px: usize) -> Result<Self> {
        if fov_px == 0 || fov_px % 2 != 0 {
            return Err(ScopeError::BadFovSize(fov_px));
        }
        let pose = StagePose::new(slide.width_um() / 2.0, slide.height_um() / 2.0);
        let mut s = Self {
            slide,
            registry,
            pose,
            objective: Objective::standard(ObjectiveName::X10),
            model: None,
            sensor_pitch_um: super::DEFAULT_SENSOR_PITCH_UM,
            fov_px,
            next_seq: 0,
        };
        s.set_objective(ObjectiveName::X10);
        Ok(s)
    }

    pub fn slide(&self) -> &Arc<VirtualSlide> {
        &self.slide
    }

    pub fn pose(&self) -> StagePose {
        self.pose
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }

    pub fn model(&self) -> Option<&Arc<NetGraph>> {
        self.model.as_ref()
    }

    pub fn fov_px(&self) -> usize {
        self.fov_px
    }

    /// Moves the stage. Out-of-slide poses are an error unless `clamp` is set,
    /// in which case the center is clamped onto the slide.
    pub fn set_pose(&mut self, pose: StagePose, clamp: bool) -> Result<StagePose> {
        let mut pose = pose;
        if !self.slide.contains_um(pose.x_um, pose.y_um) {
            if !clamp || !pose.x_um.is_finite() || !pose.y_um.is_finite() {
                return Err(ScopeError::OutOfBounds {
                    x_um: pose.x_um,
                    y_um: pose.y_um,
                });
            }
            pose.x_um = pose.x_um.clamp(0.0, self.slide.width_um());
            pose.y_um = pose.y_um.clamp(0.0, self.slide.height_um());
        }
        self.pose = pose;
        Ok(pose)
    }

    /// Switches objective and model together; takes effect from the next capture.
    pub fn set_objective(&mut self, name: ObjectiveName) -> ObjectiveChange {
        self.objective = Objective::new(name, self.sensor_pitch_um);
        self.model = self.registry.for_objective(name);
        ObjectiveChange {
            objective: self.objective,
            model: self.model.clone(),
            notice: self.model.is_none().then_some(NO_MODEL_NOTICE),
        }
    }

    /// Overrides the automatically selected model (benchmarks run one network
    /// regardless of objective).
    pub fn set_model(&mut self, model: Option<Arc<NetGraph>>) {
        self.model = model;
    }

    /// Sequence number the next capture will carry.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn capture(&mut self) -> Result<FovFrame> {
        let mut frame = capture_fov(&self.slide, self.pose, &self.objective, self.fov_px)?;
        frame.seq = self.next_seq;
        frame.model = self.model.clone();
        self.next_seq += 1;
        Ok(frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::build_color_detector;
    use crate::tensor::Tensor;

    fn session() -> ScopeSession {
        let slide = VirtualSlide::new("s", Tensor::filled(200, 200, 3, 1.0), 0.25, vec![]).unwrap();
        let mut reg = ModelRegistry::new();
        for tag in ["10X", "20X"] {
            reg.register(build_color_detector([1.0, 0.0, 1.0], 0.2).unwrap().with_objective_tag(tag));
        }
        ScopeSession::new(Arc::new(slide), Arc::new(reg), 16).unwrap()
    }

    #[test]
    fn objective_switch_swaps_model() {
        let mut s = session();
        let change = s.set_objective(ObjectiveName::X20);
        assert!(change.notice.is_none());
        let f = s.capture().unwrap();
        assert_eq!(f.objective.name, ObjectiveName::X20);
        assert_eq!(f.model.unwrap().objective_tag(), "20X");

        let change = s.set_objective(ObjectiveName::X4);
        assert_eq!(change.notice, Some(NO_MODEL_NOTICE));
        assert!(s.capture().unwrap().model.is_none());
    }

    #[test]
    fn resolution_halves_from_10x_to_20x() {
        let mut s = session();
        let ten = s.set_objective(ObjectiveName::X10).objective.um_per_px;
        let twenty = s.set_objective(ObjectiveName::X20).objective.um_per_px;
        assert!((ten / 2.0 - twenty).abs() < 1e-12);
    }

    #[test]
    fn pose_bounds_and_clamp() {
        let mut s = session();
        assert!(s.set_pose(StagePose::new(60.0, 10.0), false).is_err());
        assert_eq!(s.pose(), StagePose::new(25.0, 25.0));
        let p = s.set_pose(StagePose::new(60.0, -3.0), true).unwrap();
        assert_eq!((p.x_um, p.y_um), (50.0, 0.0));
    }

    #[test]
    fn seq_strictly_increases() {
        let mut s = session();
        let seqs: Vec<u64> = (0..4).map(|_| s.capture().unwrap().seq).collect();
        assert_eq!(seqs, vec![0, 1, 2, 3]);
    }

    #[test]
    fn registry_loads_directory() {
        let dir = tempfile::tempdir().unwrap();
        build_color_detector([1.0, 0.0, 1.0], 0.2)
            .unwrap()
            .with_objective_tag("40X")
            .save(&dir.path().join("det40.json"))
            .unwrap();
        let reg = ModelRegistry::load_dir(dir.path()).unwrap();
        assert!(reg.for_objective(ObjectiveName::X40).is_some());
        assert!(reg.for_objective(ObjectiveName::X10).is_none());
        assert_eq!(reg.tags(), vec!["40X".to_string()]);
    }
}
