//! Renders a textured square sliding across a static background and runs
//! trace extraction on it.

use somtom::evalkit::{render_scene, Camera, SceneObject, Shape, SyntheticScene};
use somtom::tracking::LkTracker;
use somtom::{run_tom, ImageDims, TomConfig, TrackerConfig};

fn main() -> somtom::Result<()> {
    let scene = SyntheticScene {
        canvas: ImageDims::new(256, 256),
        objects: vec![SceneObject {
            id: "cup".into(),
            shape: Shape::Rect,
            size: [64.0, 64.0],
            texture_seed: 7,
            start: [40.0, 80.0],
            velocity: [3.0, 0.0],
        }],
        camera: Camera::default(),
        frames: 16,
        fps: 30.0,
        grid_size: 15,
        background_seed: 1,
    };
    let clip = render_scene(&scene)?.seq;
    let tracker = LkTracker::new(TrackerConfig::default())?;
    let result = run_tom(&clip, &TomConfig::default(), &tracker, "demo")?;
    println!("{} foreground marks", result.fg_marks.len());
    for (label, mark) in result.fg_marks.iter() {
        let p = mark.anchor();
        println!("  mark {label} at ({:.3}, {:.3})", p.x, p.y);
    }
    Ok(())
}
