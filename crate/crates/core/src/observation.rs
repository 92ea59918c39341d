//! The four observation modes presented to a model.
//!
//! Text lines follow one grammar in both accessibility modes:
//!
//! ```text
//! <2*depth spaces>[<i>] <SimpleClass> text="..." desc="..." id="..."
//! ```
//!
//! The `[i] ` tag appears only on interactable nodes; empty attributes are
//! omitted; `\`, `"` and line breaks inside values are backslash-escaped.

use std::fmt;
use std::io::Cursor;
use std::str::FromStr;

use image::{ImageFormat, Rgba, RgbaImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{UINode, UIScreen};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMode {
    Image,
    A11yFull,
    A11ySimplified,
    AnnotatedImage,
}

impl ObservationMode {
    pub const ALL: [ObservationMode; 4] = [
        ObservationMode::Image,
        ObservationMode::A11yFull,
        ObservationMode::A11ySimplified,
        ObservationMode::AnnotatedImage,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ObservationMode::Image => "image",
            ObservationMode::A11yFull => "a11y_full",
            ObservationMode::A11ySimplified => "a11y_simplified",
            ObservationMode::AnnotatedImage => "annotated_image",
        }
    }

    pub fn needs_screenshot(&self) -> bool {
        matches!(self, ObservationMode::Image | ObservationMode::AnnotatedImage)
    }
}

impl fmt::Display for ObservationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObservationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                format!("unknown observation mode {s:?} (expected image, a11y_full, a11y_simplified or annotated_image)")
            })
    }
}

/// A set-of-mark label: element index and the point it is drawn at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mark {
    pub index: usize,
    pub cx: i64,
    pub cy: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub mode: ObservationMode,
    pub text_payload: Option<String>,
    /// PNG bytes.
    pub image_payload: Option<Vec<u8>>,
    pub marks: Option<Vec<Mark>>,
}

#[derive(Debug, Error)]
pub enum ObservationError {
    #[error("cannot decode screenshot: {0}")]
    Decode(String),
    #[error("cannot encode image: {0}")]
    Encode(String),
    #[error("screenshot is {actual:?} but the screen is {expected:?}")]
    SizeMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error("observation mode {0} needs a screenshot")]
    MissingScreenshot(ObservationMode),
}

fn escape(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for c in value.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            _ => out.push(c),
        }
    }
    out
}

fn describe(node: &UINode, index: Option<usize>) -> String {
    let mut parts = Vec::with_capacity(4);
    let class = node.simple_class();
    if !class.is_empty() {
        parts.push(class.to_string());
    }
    for (name, value) in [
        ("text", &node.text),
        ("desc", &node.content_desc),
        ("id", &node.resource_id),
    ] {
        if !value.is_empty() {
            parts.push(format!("{name}=\"{}\"", escape(value)));
        }
    }
    let body = parts.join(" ");
    match index {
        Some(i) => format!("[{i}] {body}"),
        None => body,
    }
}

/// Whole tree, one line per node, indented by depth.
pub fn serialize_full(screen: &UIScreen) -> String {
    let mut next_index = 0;
    let mut lines = Vec::new();
    for (depth, node) in screen.root.preorder() {
        let index = node.is_interactable().then(|| {
            next_index += 1;
            next_index - 1
        });
        lines.push(format!("{}{}", "  ".repeat(depth), describe(node, index)));
    }
    lines.join("\n")
}

/// Interactable elements only, flat, in index order.
pub fn serialize_simplified(screen: &UIScreen) -> String {
    screen
        .interactables()
        .into_iter()
        .map(|e| describe(e.node, Some(e.index)))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn som_marks(screen: &UIScreen) -> Vec<Mark> {
    screen
        .interactables()
        .into_iter()
        .map(|e| {
            let (cx, cy) = e.node.bounds.center();
            Mark {
                index: e.index,
                cx,
                cy,
            }
        })
        .collect()
}

pub const MARK_RADIUS: i64 = 14;
const MARK_FILL: Rgba<u8> = Rgba([220, 38, 38, 255]);
const MARK_INK: Rgba<u8> = Rgba([255, 255, 255, 255]);

// 3x5 digit glyphs, one row per byte, bit 2 is the leftmost column.
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b001, 0b001, 0b001],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

fn put(img: &mut RgbaImage, x: i64, y: i64, color: Rgba<u8>) {
    if x >= 0 && y >= 0 && x < i64::from(img.width()) && y < i64::from(img.height()) {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn draw_mark(img: &mut RgbaImage, mark: &Mark) {
    let r = MARK_RADIUS;
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                put(img, mark.cx + dx, mark.cy + dy, MARK_FILL);
            }
        }
    }
    let digits: Vec<usize> = mark
        .index
        .to_string()
        .bytes()
        .map(|b| usize::from(b - b'0'))
        .collect();
    let scale: i64 = if digits.len() <= 3 { 2 } else { 1 };
    let n = digits.len() as i64;
    let width = n * 3 * scale + (n - 1) * scale;
    let height = 5 * scale;
    let left = mark.cx - width / 2;
    let top = mark.cy - height / 2;
    for (k, &d) in digits.iter().enumerate() {
        let x0 = left + k as i64 * 4 * scale;
        for (row, bits) in DIGITS[d].iter().enumerate() {
            for col in 0..3i64 {
                if bits & (0b100 >> col) != 0 {
                    for sy in 0..scale {
                        for sx in 0..scale {
                            put(
                                img,
                                x0 + col * scale + sx,
                                top + row as i64 * scale + sy,
                                MARK_INK,
                            );
                        }
                    }
                }
            }
        }
    }
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbaImage, ObservationError> {
    image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map(|img| img.to_rgba8())
        .map_err(|e| ObservationError::Decode(e.to_string()))
}

pub fn encode_png(img: &RgbaImage) -> Result<Vec<u8>, ObservationError> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| ObservationError::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

/// Draw numbered marks on a copy of the screenshot and return it as PNG.
pub fn render_som(
    screenshot: &[u8],
    screen_size: (u32, u32),
    marks: &[Mark],
) -> Result<Vec<u8>, ObservationError> {
    let mut img = decode_png(screenshot)?;
    if img.dimensions() != screen_size {
        return Err(ObservationError::SizeMismatch {
            expected: screen_size,
            actual: img.dimensions(),
        });
    }
    for mark in marks {
        draw_mark(&mut img, mark);
    }
    encode_png(&img)
}

pub fn build_observation(
    mode: ObservationMode,
    screen: &UIScreen,
    screenshot: Option<&[u8]>,
) -> Result<Observation, ObservationError> {
    match mode {
        ObservationMode::A11yFull => Ok(Observation {
            mode,
            text_payload: Some(serialize_full(screen)),
            image_payload: None,
            marks: None,
        }),
        ObservationMode::A11ySimplified => Ok(Observation {
            mode,
            text_payload: Some(serialize_simplified(screen)),
            image_payload: None,
            marks: None,
        }),
        ObservationMode::Image => {
            let shot = screenshot.ok_or(ObservationError::MissingScreenshot(mode))?;
            let img = decode_png(shot)?;
            if img.dimensions() != screen.screen_size {
                return Err(ObservationError::SizeMismatch {
                    expected: screen.screen_size,
                    actual: img.dimensions(),
                });
            }
            Ok(Observation {
                mode,
                text_payload: None,
                image_payload: Some(shot.to_vec()),
                marks: None,
            })
        }
        ObservationMode::AnnotatedImage => {
            let shot = screenshot.ok_or(ObservationError::MissingScreenshot(mode))?;
            let marks = som_marks(screen);
            let image = render_som(shot, screen.screen_size, &marks)?;
            Ok(Observation {
                mode,
                text_payload: None,
                image_payload: Some(image),
                marks: Some(marks),
            })
        }
    }
}
