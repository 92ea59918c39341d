//! UI snapshots, trajectories and the canonical screen document.
//!
//! A screen document is a JSON object:
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "screen_size": [1080, 1920],
//!   "screenshot": "screenshots/login.png",
//!   "activity": ".LoginActivity",
//!   "root": { "class": "android.widget.FrameLayout", "bounds": [0, 0, 1080, 1920], "children": [] }
//! }
//! ```
//!
//! Node attributes other than `class` and `bounds` are optional and default to
//! the empty string or `false`. Unknown fields are ignored.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::action::{Action, FormatFailure, ValidationFailure};
use crate::error::SchemaError;

pub const FORMAT_VERSION: u64 = 1;

/// Screen rectangle, half-open on the right and bottom edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "[i32; 4]", from = "[i32; 4]")]
pub struct Rect {
    pub left: i32,
    pub top: i32,
    pub right: i32,
    pub bottom: i32,
}

impl Rect {
    pub const fn new(left: i32, top: i32, right: i32, bottom: i32) -> Self {
        Self {
            left,
            top,
            right,
            bottom,
        }
    }

    pub fn is_well_formed(&self) -> bool {
        self.left <= self.right && self.top <= self.bottom
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        i64::from(self.left) <= x
            && x < i64::from(self.right)
            && i64::from(self.top) <= y
            && y < i64::from(self.bottom)
    }

    /// Floor of the midpoint on both axes.
    pub fn center(&self) -> (i64, i64) {
        let cx = (i64::from(self.left) + i64::from(self.right)).div_euclid(2);
        let cy = (i64::from(self.top) + i64::from(self.bottom)).div_euclid(2);
        (cx, cy)
    }

    pub fn area(&self) -> i64 {
        (i64::from(self.right) - i64::from(self.left)).max(0)
            * (i64::from(self.bottom) - i64::from(self.top)).max(0)
    }

    pub fn translate(&self, dx: i32, dy: i32) -> Rect {
        Rect::new(self.left + dx, self.top + dy, self.right + dx, self.bottom + dy)
    }
}

impl From<[i32; 4]> for Rect {
    fn from(v: [i32; 4]) -> Self {
        Rect::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Rect> for [i32; 4] {
    fn from(r: Rect) -> Self {
        [r.left, r.top, r.right, r.bottom]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct UINode {
    pub class_name: String,
    pub resource_id: String,
    pub text: String,
    pub content_desc: String,
    pub bounds: Rect,
    pub clickable: bool,
    pub long_clickable: bool,
    pub scrollable: bool,
    pub editable: bool,
    pub enabled: bool,
    pub visible: bool,
    pub children: Vec<UINode>,
}

impl Default for Rect {
    fn default() -> Self {
        Rect::new(0, 0, 0, 0)
    }
}

impl UINode {
    /// Visible, enabled and accepting at least one kind of touch or input.
    pub fn is_interactable(&self) -> bool {
        self.visible
            && self.enabled
            && (self.clickable || self.long_clickable || self.scrollable || self.editable)
    }

    /// Substring after the last `.` of the class name.
    pub fn simple_class(&self) -> &str {
        match self.class_name.rfind('.') {
            Some(i) => &self.class_name[i + 1..],
            None => &self.class_name,
        }
    }

    /// Pre-order traversal with depth (root at depth 0).
    pub fn preorder(&self) -> Vec<(usize, &UINode)> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, self)];
        while let Some((depth, node)) = stack.pop() {
            out.push((depth, node));
            for child in node.children.iter().rev() {
                stack.push((depth + 1, child));
            }
        }
        out
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(UINode::node_count).sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UIScreen {
    pub root: UINode,
    pub screen_size: (u32, u32),
    pub screenshot_ref: Option<String>,
    pub activity_tag: Option<String>,
}

/// An interactable element together with its observation index.
#[derive(Debug, Clone, Copy)]
pub struct Indexed<'a> {
    pub index: usize,
    pub depth: usize,
    pub node: &'a UINode,
}

impl UIScreen {
    pub fn node_count(&self) -> usize {
        self.root.node_count()
    }

    /// Interactable elements in pre-order, numbered from zero.
    pub fn interactables(&self) -> Vec<Indexed<'_>> {
        self.root
            .preorder()
            .into_iter()
            .filter(|(_, n)| n.is_interactable())
            .enumerate()
            .map(|(index, (depth, node))| Indexed { index, depth, node })
            .collect()
    }

    pub fn interactable(&self, index: usize) -> Option<&UINode> {
        self.interactables().get(index).map(|e| e.node)
    }

    /// Innermost interactable element containing the point. Ties on depth go
    /// to the element visited last (drawn on top).
    pub fn hit_test(&self, x: i64, y: i64) -> Option<Indexed<'_>> {
        let mut best: Option<Indexed<'_>> = None;
        for item in self.interactables() {
            if item.node.bounds.contains(x, y) && best.is_none_or(|b| item.depth >= b.depth) {
                best = Some(item);
            }
        }
        best
    }

    pub fn width(&self) -> u32 {
        self.screen_size.0
    }

    pub fn height(&self) -> u32 {
        self.screen_size.1
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(self)
    }
}

/// Interactable elements of `screen` as `(index, node)` pairs.
pub fn interactables(screen: &UIScreen) -> Vec<(usize, &UINode)> {
    screen
        .interactables()
        .into_iter()
        .map(|e| (e.index, e.node))
        .collect()
}

/// SHA-256 over a length-prefixed pre-order encoding of each node's depth,
/// identity strings and flags. Bounds and screenshots are excluded.
pub fn fingerprint(screen: &UIScreen) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"navbench-screen-v1");
    for (depth, node) in screen.root.preorder() {
        hasher.update((depth as u32).to_le_bytes());
        for field in [
            &node.class_name,
            &node.resource_id,
            &node.text,
            &node.content_desc,
        ] {
            hasher.update((field.len() as u64).to_le_bytes());
            hasher.update(field.as_bytes());
        }
        let flags = [
            node.clickable,
            node.long_clickable,
            node.scrollable,
            node.editable,
            node.enabled,
            node.visible,
        ]
        .iter()
        .enumerate()
        .fold(0u8, |acc, (i, &f)| acc | (u8::from(f) << i));
        hasher.update([flags]);
    }
    hex::encode(hasher.finalize())
}

// ---------------------------------------------------------------------------
// Screen document parsing

fn expect_version(obj: &Map<String, Value>, path: &str) -> Result<(), SchemaError> {
    let at = join(path, "format_version");
    match obj.get("format_version") {
        None => Err(SchemaError::new(at, "missing required field")),
        Some(v) if v.as_u64() == Some(FORMAT_VERSION) => Ok(()),
        Some(v) => Err(SchemaError::new(
            at,
            format!("unsupported format version {v}, expected {FORMAT_VERSION}"),
        )),
    }
}

fn join(parent: &str, field: &str) -> String {
    if parent.is_empty() {
        field.to_string()
    } else {
        format!("{parent}.{field}")
    }
}

fn opt_string(obj: &Map<String, Value>, key: &str, path: &str) -> Result<String, SchemaError> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(String::new()),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(SchemaError::new(join(path, key), "expected a string")),
    }
}

fn opt_bool(obj: &Map<String, Value>, key: &str, path: &str) -> Result<bool, SchemaError> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(false),
        Some(Value::Bool(b)) => Ok(*b),
        Some(_) => Err(SchemaError::new(join(path, key), "expected a boolean")),
    }
}

fn parse_bounds(value: Option<&Value>, path: &str) -> Result<Rect, SchemaError> {
    let at = join(path, "bounds");
    let arr = match value {
        None => return Err(SchemaError::new(at, "missing required field")),
        Some(Value::Array(a)) => a,
        Some(_) => return Err(SchemaError::new(at, "expected [left, top, right, bottom]")),
    };
    if arr.len() != 4 {
        return Err(SchemaError::new(
            at,
            format!("expected 4 integers, found {}", arr.len()),
        ));
    }
    let mut v = [0i32; 4];
    for (slot, item) in v.iter_mut().zip(arr) {
        *slot = item
            .as_i64()
            .and_then(|n| i32::try_from(n).ok())
            .ok_or_else(|| SchemaError::new(at.clone(), "bounds must be 32-bit integers"))?;
    }
    let rect = Rect::from(v);
    if !rect.is_well_formed() {
        return Err(SchemaError::new(
            at,
            format!("malformed bounds {v:?}: requires left <= right and top <= bottom"),
        ));
    }
    Ok(rect)
}

fn parse_node(value: &Value, path: &str) -> Result<UINode, SchemaError> {
    let obj = value
        .as_object()
        .ok_or_else(|| SchemaError::new(path, "expected an object"))?;
    let class_name = match obj.get("class") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(SchemaError::new(join(path, "class"), "expected a string")),
        None => return Err(SchemaError::new(join(path, "class"), "missing required field")),
    };
    let bounds = parse_bounds(obj.get("bounds"), path)?;
    let children = match obj.get("children") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, child)| parse_node(child, &format!("{path}.children[{i}]")))
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(SchemaError::new(join(path, "children"), "expected an array")),
    };
    Ok(UINode {
        class_name,
        resource_id: opt_string(obj, "resource_id", path)?,
        text: opt_string(obj, "text", path)?,
        content_desc: opt_string(obj, "content_desc", path)?,
        bounds,
        clickable: opt_bool(obj, "clickable", path)?,
        long_clickable: opt_bool(obj, "long_clickable", path)?,
        scrollable: opt_bool(obj, "scrollable", path)?,
        editable: opt_bool(obj, "editable", path)?,
        enabled: opt_bool(obj, "enabled", path)?,
        visible: opt_bool(obj, "visible", path)?,
        children,
    })
}

/// Parse and validate a canonical screen document.
pub fn load_screen(bytes: &[u8]) -> Result<UIScreen, SchemaError> {
    let doc: Value = serde_json::from_slice(bytes)
        .map_err(|e| SchemaError::new("$", format!("invalid JSON: {e}")))?;
    screen_from_value(&doc)
}

pub fn screen_from_value(doc: &Value) -> Result<UIScreen, SchemaError> {
    let obj = doc
        .as_object()
        .ok_or_else(|| SchemaError::new("$", "expected a JSON object"))?;
    expect_version(obj, "")?;
    let size = match obj.get("screen_size") {
        Some(Value::Array(a)) if a.len() == 2 => {
            let w = a[0].as_u64().and_then(|n| u32::try_from(n).ok());
            let h = a[1].as_u64().and_then(|n| u32::try_from(n).ok());
            match (w, h) {
                (Some(w), Some(h)) if w > 0 && h > 0 => (w, h),
                _ => {
                    return Err(SchemaError::new(
                        "screen_size",
                        "width and height must be positive integers",
                    ))
                }
            }
        }
        Some(_) => return Err(SchemaError::new("screen_size", "expected [width, height]")),
        None => return Err(SchemaError::new("screen_size", "missing required field")),
    };
    let root = match obj.get("root") {
        Some(v) => parse_node(v, "root")?,
        None => return Err(SchemaError::new("root", "missing required field")),
    };
    let opt = |key: &str| -> Result<Option<String>, SchemaError> {
        match obj.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(SchemaError::new(key, "expected a string")),
        }
    };
    Ok(UIScreen {
        root,
        screen_size: size,
        screenshot_ref: opt("screenshot")?,
        activity_tag: opt("activity")?,
    })
}

fn node_to_value(node: &UINode) -> Value {
    let mut obj = Map::new();
    obj.insert("class".into(), Value::from(node.class_name.clone()));
    obj.insert("resource_id".into(), Value::from(node.resource_id.clone()));
    obj.insert("text".into(), Value::from(node.text.clone()));
    obj.insert("content_desc".into(), Value::from(node.content_desc.clone()));
    obj.insert(
        "bounds".into(),
        serde_json::to_value(node.bounds).expect("rect serializes"),
    );
    for (key, flag) in [
        ("clickable", node.clickable),
        ("long_clickable", node.long_clickable),
        ("scrollable", node.scrollable),
        ("editable", node.editable),
        ("enabled", node.enabled),
        ("visible", node.visible),
    ] {
        obj.insert(key.into(), Value::Bool(flag));
    }
    if !node.children.is_empty() {
        obj.insert(
            "children".into(),
            Value::Array(node.children.iter().map(node_to_value).collect()),
        );
    }
    Value::Object(obj)
}

/// Serialize a screen to its canonical document.
pub fn save_screen(screen: &UIScreen) -> String {
    let mut obj = Map::new();
    obj.insert("format_version".into(), Value::from(FORMAT_VERSION));
    obj.insert(
        "screen_size".into(),
        Value::from(vec![screen.screen_size.0, screen.screen_size.1]),
    );
    if let Some(s) = &screen.screenshot_ref {
        obj.insert("screenshot".into(), Value::from(s.clone()));
    }
    if let Some(a) = &screen.activity_tag {
        obj.insert("activity".into(), Value::from(a.clone()));
    }
    obj.insert("root".into(), node_to_value(&screen.root));
    let mut out = serde_json::to_string_pretty(&Value::Object(obj)).expect("value serializes");
    out.push('\n');
    out
}

// ---------------------------------------------------------------------------
// Trajectories

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    AgentStop,
    StepLimit,
    EnvironmentError,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::AgentStop => "agent_stop",
            StopReason::StepLimit => "step_limit",
            StopReason::EnvironmentError => "environment_error",
        }
    }
}

/// One model turn: the screen it saw, what it said, and what was parsed.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub screen: Arc<UIScreen>,
    pub screen_ref: String,
    pub raw_output: String,
    pub parsed: Result<Action, FormatFailure>,
    /// Set when a parsed action was refused before reaching the environment.
    pub rejected: Option<ValidationFailure>,
    pub key: String,
}

impl Step {
    /// The action that was actually sent to the environment (or was the stop).
    pub fn executed_action(&self) -> Option<&Action> {
        match (&self.parsed, &self.rejected) {
            (Ok(a), None) => Some(a),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub final_screen: Arc<UIScreen>,
    pub final_screen_ref: String,
    pub stop_reason: StopReason,
}

impl Trajectory {
    /// Number of steps; also the position of the final screen.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Screen at position `i`, where position `len()` is the final screen.
    pub fn screen_at(&self, i: usize) -> &UIScreen {
        if i < self.steps.len() {
            &self.steps[i].screen
        } else {
            &self.final_screen
        }
    }

    /// Fingerprints of every visited screen, final screen included.
    pub fn fingerprints(&self) -> Vec<String> {
        (0..=self.len()).map(|i| fingerprint(self.screen_at(i))).collect()
    }

    /// Actions that reached the environment, in order, excluding the stop.
    pub fn executed_actions(&self) -> Vec<&Action> {
        self.steps
            .iter()
            .filter_map(Step::executed_action)
            .filter(|a| !a.is_stop())
            .collect()
    }
}
