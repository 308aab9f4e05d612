use std::fmt;

use serde::Serialize;

use crate::nn::Model;
use crate::numfmt::fmt_sig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerCount {
    pub layer: usize,
    pub kind: String,
    pub trainable: usize,
    pub backbone: usize,
}

/// Trainable-parameter accounting relative to full fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamReport {
    pub method: Option<String>,
    pub layers: Vec<LayerCount>,
    pub trainable: usize,
    pub full_ft: usize,
    /// `100 · trainable / full_ft`.
    pub percent: f64,
}

impl ParamReport {
    /// Percentage rendered at 4 significant digits.
    pub fn percent_display(&self) -> String {
        fmt_sig(self.percent, 4)
    }
}

pub fn param_report(m: &Model) -> ParamReport {
    let layers: Vec<LayerCount> = m
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let (mut trainable, mut backbone) = (0, 0);
            for (k, p) in m.params().range(crate::nn::SlotKey::new(i, "")..) {
                if k.layer != i {
                    break;
                }
                if p.trainable {
                    trainable += p.value.len();
                }
                if p.role == crate::nn::SlotRole::Backbone {
                    backbone += p.value.len();
                }
            }
            LayerCount {
                layer: i,
                kind: l.kind_name().to_string(),
                trainable,
                backbone,
            }
        })
        .collect();
    let trainable = m.trainable_count();
    let full_ft = m.backbone_count();
    ParamReport {
        method: m.peft().map(|r| r.method.to_string()),
        layers,
        trainable,
        full_ft,
        percent: if full_ft == 0 {
            0.0
        } else {
            100.0 * trainable as f64 / full_ft as f64
        },
    }
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "method: {}", self.method.as_deref().unwrap_or("none"))?;
        writeln!(
            f,
            "{:>5}  {:<16} {:>10} {:>10}",
            "layer", "kind", "trainable", "backbone"
        )?;
        for l in &self.layers {
            if l.trainable == 0 && l.backbone == 0 {
                continue;
            }
            writeln!(
                f,
                "{:>5}  {:<16} {:>10} {:>10}",
                l.layer, l.kind, l.trainable, l.backbone
            )?;
        }
        write!(
            f,
            "total trainable {} / full fine-tuning {} ({}%)",
            self.trainable,
            self.full_ft,
            self.percent_display()
        )
    }
}
