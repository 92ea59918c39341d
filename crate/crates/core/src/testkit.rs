//! Builders for small synthetic screens and trajectories used in tests.

use std::sync::Arc;

use crate::action::{render_action, Action, Key};
use crate::model::{Rect, StopReason, Step, Trajectory, UINode, UIScreen};

pub const WIDTH: u32 = 400;
pub const ROW: i32 = 100;

pub fn node(class: &str, bounds: Rect) -> UINode {
    UINode {
        class_name: class.to_string(),
        bounds,
        enabled: true,
        visible: true,
        ..Default::default()
    }
}

/// A screen whose root carries `title` as its text and has one clickable
/// button per label, stacked in rows of 100 px.
pub fn screen(title: &str, buttons: &[&str]) -> UIScreen {
    let height = (buttons.len() as i32 + 1) * ROW;
    let mut root = node("android.widget.FrameLayout", Rect::new(0, 0, WIDTH as i32, height));
    root.text = title.to_string();
    for (i, label) in buttons.iter().enumerate() {
        let top = (i as i32 + 1) * ROW;
        let mut b = node("android.widget.Button", Rect::new(0, top, WIDTH as i32, top + ROW));
        b.text = label.to_string();
        b.resource_id = format!("app:id/{}", label.to_lowercase().replace(' ', "_"));
        b.clickable = true;
        root.children.push(b);
    }
    UIScreen {
        root,
        screen_size: (WIDTH, height as u32),
        screenshot_ref: None,
        activity_tag: None,
    }
}

#[derive(Default)]
pub struct TrajectoryBuilder {
    steps: Vec<Step>,
}

impl TrajectoryBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(mut self, screen: UIScreen, action: Action) -> Self {
        let raw = render_action(&action);
        let idx = self.steps.len();
        self.steps.push(Step {
            screen: Arc::new(screen),
            screen_ref: format!("screens/s{idx}.json"),
            raw_output: raw,
            parsed: Ok(action),
            rejected: None,
            key: String::new(),
        });
        self
    }

    pub fn malformed(mut self, screen: UIScreen, raw: &str) -> Self {
        let idx = self.steps.len();
        let parsed = crate::action::parse_action(raw);
        assert!(parsed.is_err(), "{raw:?} parses");
        self.steps.push(Step {
            screen: Arc::new(screen),
            screen_ref: format!("screens/s{idx}.json"),
            raw_output: raw.to_string(),
            parsed,
            rejected: None,
            key: String::new(),
        });
        self
    }

    /// Append `press [stop]` on `screen` and finish with it as the final screen.
    pub fn stop(self, screen: UIScreen) -> Trajectory {
        self.step(screen.clone(), Action::Press(Key::Stop))
            .finish(screen, StopReason::AgentStop)
    }

    pub fn finish(self, final_screen: UIScreen, stop_reason: StopReason) -> Trajectory {
        let n = self.steps.len();
        Trajectory {
            steps: self.steps,
            final_screen: Arc::new(final_screen),
            final_screen_ref: format!("screens/s{n}.json"),
            stop_reason,
        }
    }
}
