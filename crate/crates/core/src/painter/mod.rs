//! Canvas rendering through a text-to-image or layout-to-image backend.
//!
//! HTTP contracts (all bodies JSON, images base64-encoded PNG):
//!
//! ```text
//! T2I  POST {"prompt": str, "seed": u64, "width": u32, "height": u32}
//!      ->   {"image": str}
//! L2I  POST {"background": str,
//!            "regions": [{"id": str, "bbox": [x0, y0, x1, y1], "caption": str, "z_order": i64}],
//!            "prior_image": str | null, "seed": u64, "width": u32, "height": u32}
//!      ->   {"image": str}
//! ```
//!
//! `regions` always carries the whole cumulative layout in ascending z_order.

pub mod mock;

use std::collections::BTreeMap;
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::image::{ImageError, ImageHandle};
use crate::scene::{LayoutSet, PlacedObject, Prompt, SceneError};
use crate::transport::{HttpTransport, UreqTransport};

pub const DEFAULT_RESOLUTION: u32 = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PainterError {
    #[error("painter backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

impl From<SceneError> for PainterError {
    fn from(e: SceneError) -> Self {
        PainterError::LayoutMismatch(e.to_string())
    }
}

/// The image so far plus the layout it depicts.
#[derive(Debug, Clone, PartialEq)]
pub struct CanvasState {
    pub image: Option<ImageHandle>,
    pub layout_so_far: LayoutSet,
    pub iteration: u32,
    pub background: String,
}

impl CanvasState {
    pub fn blank(background: impl Into<String>, canvas_aspect: f64) -> Self {
        Self {
            image: None,
            layout_so_far: LayoutSet::empty(canvas_aspect),
            iteration: 0,
            background: background.into(),
        }
    }

    /// Same canvas with the recorded layout replaced, e.g. after the checker
    /// adjusted earlier boxes.
    pub fn with_layout(&self, layout: LayoutSet) -> Self {
        Self {
            layout_so_far: layout,
            ..self.clone()
        }
    }
}

/// Per-object data a painter needs beyond the box.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub caption: String,
    pub content_key: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    T2iHttp,
    L2iHttp,
    Mock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpEndpoints {
    pub t2i: Option<String>,
    pub l2i: Option<String>,
    /// Environment variable holding the bearer token, if any.
    pub token_env: Option<String>,
}

pub struct PainterBackend {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    http: Option<(HttpEndpoints, Arc<dyn HttpTransport>)>,
}

impl PainterBackend {
    pub fn mock(seed: u64, width: u32, height: u32) -> Self {
        Self {
            seed,
            width: width.max(1),
            height: height.max(1),
            http: None,
        }
    }

    pub fn http(endpoints: HttpEndpoints, seed: u64, width: u32, height: u32) -> Self {
        Self::http_with_transport(endpoints, Arc::new(UreqTransport::default()), seed, width, height)
    }

    pub fn http_with_transport(
        endpoints: HttpEndpoints,
        transport: Arc<dyn HttpTransport>,
        seed: u64,
        width: u32,
        height: u32,
    ) -> Self {
        Self {
            http: Some((endpoints, transport)),
            ..Self::mock(seed, width, height)
        }
    }

    pub fn canvas_aspect(&self) -> f64 {
        self.width as f64 / self.height as f64
    }

    pub fn is_mock(&self) -> bool {
        self.http.is_none()
    }

    pub fn free_kind(&self) -> BackendKind {
        if self.is_mock() {
            BackendKind::Mock
        } else {
            BackendKind::T2iHttp
        }
    }

    pub fn step_kind(&self) -> BackendKind {
        if self.is_mock() {
            BackendKind::Mock
        } else {
            BackendKind::L2iHttp
        }
    }

    /// One image straight from the prompt.
    pub fn paint_free(&self, prompt: &Prompt, background: &str) -> Result<CanvasState, PainterError> {
        let image = match &self.http {
            None => {
                let color = mock::background_color(&prompt.text, self.seed);
                ImageHandle::from_rgb8(self.width, self.height, mock::solid(self.width, self.height, color))?
            }
            Some((ep, transport)) => {
                let url = ep
                    .t2i
                    .as_deref()
                    .ok_or_else(|| PainterError::BackendUnavailable("no text-to-image endpoint configured".into()))?;
                let body =
                    json!({"prompt": prompt.text, "seed": self.seed, "width": self.width, "height": self.height});
                self.post_image(transport.as_ref(), ep, url, &body)?
            }
        };
        Ok(CanvasState {
            image: Some(image),
            layout_so_far: LayoutSet::empty(self.canvas_aspect()),
            iteration: 1,
            background: background.to_string(),
        })
    }

    /// Adds one iteration's objects. `regions` must describe every object of
    /// the merged layout, not only the new ones.
    pub fn paint_step(
        &self,
        canvas: &CanvasState,
        new_objects: &[PlacedObject],
        regions: &BTreeMap<String, RegionSpec>,
    ) -> Result<CanvasState, PainterError> {
        let next = canvas.iteration + 1;
        for o in new_objects {
            if canvas.layout_so_far.contains(&o.descriptor_id) {
                return Err(PainterError::LayoutMismatch(format!(
                    "`{}` is already on the canvas",
                    o.descriptor_id
                )));
            }
            if o.iteration != next {
                return Err(PainterError::LayoutMismatch(format!(
                    "`{}` belongs to iteration {}, canvas expects {next}",
                    o.descriptor_id, o.iteration
                )));
            }
        }
        let layout = canvas.layout_so_far.merged(new_objects)?;
        let image = match &self.http {
            None => {
                let bg = mock::background_color(&canvas.background, self.seed);
                mock::render(&layout, regions, bg, self.width, self.height)
            }
            Some((ep, transport)) => {
                let url = ep
                    .l2i
                    .as_deref()
                    .ok_or_else(|| PainterError::BackendUnavailable("no layout-to-image endpoint configured".into()))?;
                let body = l2i_body(canvas, &layout, regions, self.seed, self.width, self.height);
                self.post_image(transport.as_ref(), ep, url, &body)?
            }
        };
        Ok(CanvasState {
            image: Some(image),
            layout_so_far: layout,
            iteration: next,
            background: canvas.background.clone(),
        })
    }

    fn post_image(
        &self,
        transport: &dyn HttpTransport,
        ep: &HttpEndpoints,
        url: &str,
        body: &Value,
    ) -> Result<ImageHandle, PainterError> {
        let token = ep.token_env.as_deref().and_then(|v| std::env::var(v).ok());
        let reply = transport
            .post_json(url, token.as_deref(), body)
            .map_err(|e| PainterError::BackendUnavailable(e.to_string()))?;
        let encoded = reply
            .get("image")
            .and_then(Value::as_str)
            .ok_or_else(|| PainterError::BackendUnavailable("reply has no `image` field".into()))?;
        let bytes = B64
            .decode(encoded)
            .map_err(|e| PainterError::BackendUnavailable(format!("image is not base64: {e}")))?;
        Ok(ImageHandle::from_png(bytes)?)
    }
}

/// Request body for the layout-to-image backend.
pub fn l2i_body(
    canvas: &CanvasState,
    layout: &LayoutSet,
    regions: &BTreeMap<String, RegionSpec>,
    seed: u64,
    width: u32,
    height: u32,
) -> Value {
    let mut placed: Vec<_> = layout.placed.iter().collect();
    placed.sort_by_key(|p| p.z_order);
    let regions: Vec<Value> = placed
        .iter()
        .map(|p| {
            let caption = regions
                .get(&p.descriptor_id)
                .map_or(p.descriptor_id.as_str(), |r| r.caption.as_str());
            json!({"id": p.descriptor_id, "bbox": p.bbox.as_array(), "caption": caption, "z_order": p.z_order})
        })
        .collect();
    json!({
        "background": canvas.background,
        "regions": regions,
        "prior_image": canvas.image.as_ref().map(|i| B64.encode(i.png_bytes())),
        "seed": seed,
        "width": width,
        "height": height,
    })
}
