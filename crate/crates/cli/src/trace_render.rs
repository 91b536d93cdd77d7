//! Trace artifacts: the JSON trace record and a static self-contained
//! HTML rendering (boxes drawn with opacity proportional to attention,
//! boolean probabilities as labeled scores, and the final answer).

use nmn_core::executor::{AnswerSpace, AnswerTarget, FeatureSet, Provenance, Trace};
use nmn_core::guidance::StepTarget;
use nmn_core::program::Kind;
use serde_json::{json, Value};

/// Values are rounded to 6 decimals in trace files; internal precision is
/// unaffected.
fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

fn answer_string(trace: &Trace, features: &FeatureSet) -> Option<String> {
    match &trace.answer_target {
        Some(AnswerTarget::Index(i)) => features.answer_vocab.get(*i).cloned(),
        Some(AnswerTarget::YesNo(y)) => Some(if *y { "yes" } else { "no" }.to_string()),
        None => None,
    }
}

fn provenance_str(p: Provenance) -> &'static str {
    match p {
        Provenance::Predicted => "predicted",
        Provenance::GroundTruth => "ground_truth",
    }
}

pub fn trace_to_json(trace: &Trace, features: &FeatureSet, question: Option<&str>) -> Value {
    let steps: Vec<Value> = trace
        .steps
        .iter()
        .map(|s| {
            let values: Vec<f64> = s.output.data().iter().map(|&v| round6(v as f64)).collect();
            let mut step = json!({
                "op": s.op,
                "arg": s.text_arg,
                "provenance": s.provenance.iter().map(|&p| provenance_str(p)).collect::<Vec<_>>(),
                "output": { "kind": s.kind.to_string(), "values": values },
            });
            if let Some(target) = &s.target {
                let gt = match target {
                    StepTarget::Attention(at) => json!({ "indices": at.indices }),
                    StepTarget::Boolean(b) => json!({ "value": b }),
                };
                step["gt"] = gt;
            }
            step
        })
        .collect();
    json!({
        "id": trace.id,
        "question": question,
        "answer": answer_string(trace, features),
        "predicted": trace.predicted,
        "steps": steps,
    })
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const CANVAS: f64 = 320.0;

fn svg_boxes(features: &FeatureSet, attention: &[f64], argmax: usize) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        r#"<svg viewBox="0 0 {c} {c}" width="{c}" height="{c}">"#,
        c = CANVAS
    ));
    out.push_str(&format!(
        r#"<rect x="0" y="0" width="{c}" height="{c}" class="frame"/>"#,
        c = CANVAS
    ));
    for (j, b) in features.boxes.iter().enumerate() {
        let (x, y) = (b.x1 * CANVAS, b.y1 * CANVAS);
        let (w, h) = ((b.x2 - b.x1) * CANVAS, (b.y2 - b.y1) * CANVAS);
        let class = if j == argmax { "box argmax" } else { "box" };
        out.push_str(&format!(
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" class="{class}" fill-opacity="{op:.6}" data-box="{j}"/>"#,
            op = attention[j],
        ));
    }
    out.push_str("</svg>");
    out
}

/// Static HTML rendering of one trace. Machine-checkable fields ride on
/// data- attributes: per step data-kind/data-argmax/data-prob, and the
/// final answer on data-predicted.
pub fn render_html(trace: &Trace, features: &FeatureSet, question: Option<&str>) -> String {
    let mut html = String::new();
    html.push_str("<!DOCTYPE html><html><head><meta charset=\"utf-8\">");
    html.push_str(&format!("<title>trace {}</title>", escape(&trace.id)));
    html.push_str(
        "<style>body{font-family:sans-serif;max-width:720px;margin:1em auto}\
         .frame{fill:none;stroke:#888}.box{fill:#d33;stroke:#555}\
         .argmax{stroke:#d33;stroke-width:3}.step{margin:1em 0;border-top:1px solid #ddd}\
         .score{font-weight:bold}</style></head><body>",
    );
    html.push_str(&format!("<h1>trace {}</h1>", escape(&trace.id)));
    if let Some(q) = question {
        html.push_str(&format!("<p class=\"question\">{}</p>", escape(q)));
    }

    for (t, s) in trace.steps.iter().enumerate() {
        let arg = s
            .text_arg
            .as_deref()
            .map(|a| format!("({})", escape(a)))
            .unwrap_or_default();
        let provenance = s
            .provenance
            .iter()
            .map(|&p| provenance_str(p))
            .collect::<Vec<_>>()
            .join(",");
        match s.kind {
            Kind::Attention => {
                let attention: Vec<f64> = s.output.data().iter().map(|&v| v as f64).collect();
                let argmax = s.output.argmax();
                html.push_str(&format!(
                    "<div class=\"step\" data-step=\"{t}\" data-kind=\"attention\" data-op=\"{}\" data-argmax=\"{argmax}\" data-provenance=\"{provenance}\">",
                    escape(&s.op)
                ));
                html.push_str(&format!("<h2>{t}: {}{arg}</h2>", escape(&s.op)));
                html.push_str(&svg_boxes(features, &attention, argmax));
                html.push_str(&format!(
                    "<p>argmax box {argmax}, p = <span class=\"score\">{:.6}</span></p>",
                    attention[argmax]
                ));
            }
            Kind::Boolean => {
                let p = s.output.item() as f64;
                html.push_str(&format!(
                    "<div class=\"step\" data-step=\"{t}\" data-kind=\"boolean\" data-op=\"{}\" data-prob=\"{:.6}\" data-provenance=\"{provenance}\">",
                    escape(&s.op),
                    p
                ));
                html.push_str(&format!("<h2>{t}: {}{arg}</h2>", escape(&s.op)));
                html.push_str(&format!(
                    "<p>probability = <span class=\"score\">{p:.6}</span></p>"
                ));
            }
            Kind::Answer => {
                let argmax = s.output.argmax();
                html.push_str(&format!(
                    "<div class=\"step\" data-step=\"{t}\" data-kind=\"answer\" data-op=\"{}\" data-argmax=\"{argmax}\" data-provenance=\"{provenance}\">",
                    escape(&s.op)
                ));
                html.push_str(&format!("<h2>{t}: {}{arg}</h2>", escape(&s.op)));
                let mut ranked: Vec<(usize, f64)> = s
                    .output
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| (i, v as f64))
                    .collect();
                ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
                html.push_str("<ol>");
                for (i, p) in ranked.into_iter().take(5) {
                    let label = features
                        .answer_vocab
                        .get(i)
                        .map(|s| s.as_str())
                        .unwrap_or("?");
                    html.push_str(&format!("<li>{} : {p:.6}</li>", escape(label)));
                }
                html.push_str("</ol>");
            }
        }
        html.push_str("</div>");
    }

    let answer = answer_string(trace, features);
    let yes_no = matches!(trace.answer_space, AnswerSpace::YesNo);
    html.push_str(&format!(
        "<div class=\"final\" data-predicted=\"{}\" data-answer=\"{}\" data-yesno=\"{yes_no}\">",
        escape(&trace.predicted),
        escape(answer.as_deref().unwrap_or("")),
    ));
    html.push_str(&format!(
        "<h2>predicted: {}</h2>",
        escape(&trace.predicted)
    ));
    if let Some(a) = &answer {
        html.push_str(&format!("<p>ground truth: {}</p>", escape(a)));
    }
    html.push_str("</div></body></html>");
    html
}
