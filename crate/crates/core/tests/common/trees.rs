//! Random accessibility trees for serializer properties.

use navbench::model::{Rect, UINode, UIScreen};
use proptest::prelude::*;

pub const WIDTH: i32 = 360;
pub const HEIGHT: i32 = 640;

const CLASSES: [&str; 6] = [
    "android.widget.FrameLayout",
    "android.widget.LinearLayout",
    "android.widget.Button",
    "android.widget.TextView",
    "android.widget.EditText",
    "View",
];

const TEXTS: [&str; 8] = [
    "",
    "",
    "Save",
    "he said \"hi\"",
    "C:\\temp",
    "two\nlines",
    "[3] looks like a tag",
    "caf\u{e9}",
];

#[derive(Debug, Clone)]
pub struct NodeSpec {
    parent: usize,
    class: usize,
    text: usize,
    desc: usize,
    flags: [bool; 6],
    bounds: (i32, i32, i32, i32),
}

fn node_spec() -> impl Strategy<Value = NodeSpec> {
    (
        any::<prop::sample::Index>(),
        0..CLASSES.len(),
        0..TEXTS.len(),
        0..TEXTS.len(),
        prop::array::uniform6(any::<bool>()),
        (0..WIDTH, 0..WIDTH, 0..HEIGHT, 0..HEIGHT),
        (any::<bool>(), any::<bool>()),
    )
        .prop_map(|(parent, class, text, desc, mut flags, (x0, x1, y0, y1), (hide, disable))| {
            // Mostly visible and enabled so that many nodes are interactable.
            flags[4] = !disable || flags[4];
            flags[5] = !hide || flags[5];
            NodeSpec {
                parent: parent.index(usize::MAX),
                class,
                text,
                desc,
                flags,
                bounds: (x0.min(x1), y0.min(y1), x0.max(x1) + 1, y0.max(y1) + 1),
            }
        })
}

fn build(specs: &[NodeSpec], children: &[Vec<usize>], k: usize) -> UINode {
    let s = &specs[k];
    let (l, t, r, b) = s.bounds;
    UINode {
        class_name: CLASSES[s.class].to_string(),
        resource_id: format!("app:id/n{k}"),
        text: TEXTS[s.text].to_string(),
        content_desc: TEXTS[s.desc].to_string(),
        bounds: Rect::new(l, t, r, b),
        clickable: s.flags[0],
        long_clickable: s.flags[1],
        scrollable: s.flags[2],
        editable: s.flags[3],
        enabled: s.flags[4],
        visible: s.flags[5],
        children: children[k].iter().map(|&c| build(specs, children, c)).collect(),
    }
}

/// Screens of 1 to `max_nodes` nodes. Node `k > 0` hangs under a uniformly
/// chosen earlier node, so every tree shape is reachable.
pub fn screens(max_nodes: usize) -> impl Strategy<Value = UIScreen> {
    prop::collection::vec(node_spec(), 1..=max_nodes).prop_map(|mut specs| {
        let mut children = vec![Vec::new(); specs.len()];
        for (k, spec) in specs.iter_mut().enumerate().skip(1) {
            spec.parent %= k;
            children[spec.parent].push(k);
        }
        UIScreen {
            root: build(&specs, &children, 0),
            screen_size: (WIDTH as u32, HEIGHT as u32),
            screenshot_ref: None,
            activity_tag: None,
        }
    })
}
