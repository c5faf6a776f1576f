//! Parses a small LaTeX source (with an `\input` file) and asks a scripted
//! model for its technique tree.
//!
//! Run with `cargo run --example extract_techniques`.

use std::collections::BTreeMap;
use std::error::Error;
use std::sync::Arc;

use xkg::curator::LatexBundle;
use xkg::extract::{extract_techniques, parse_paper};
use xkg::llm::{Gateway, LlmProfile, StubProvider, TemplateId};

const MAIN: &str = r"\documentclass{article}
\title{Tiny Attention}
\begin{document}
\begin{abstract}
We scale dot products before the softmax.
\end{abstract}
\section{Method}
Scaled attention divides scores by the square root of the key width.
\input{eq}
\end{document}
";

const EQ: &str = r"\begin{equation}
a = \mathrm{softmax}(q k^\top / \sqrt{d})
\end{equation}
";

const TECHNIQUES: &str = r#"```
[{"name": "Tiny Attention", "type": "Methodology", "description": "Attention with scaled scores.",
  "components": [{"name": "Score Scaling", "type": "Technique", "description": "Divides scores by sqrt(d)."}]},
 {"name": "Scaling Stabilizes Training", "type": "Finding", "description": "Scaled scores avoid saturation."}]
```"#;

fn main() -> Result<(), Box<dyn Error>> {
    let files = BTreeMap::from([("main.tex".to_owned(), MAIN.to_owned()), ("eq.tex".to_owned(), EQ.to_owned())]);
    let bundle = LatexBundle::from_files(files)?;
    let text = parse_paper(&bundle);
    println!("title: {}\nabstract: {}", text.title, text.abstract_text);
    for s in &text.sections {
        println!("section `{}` ({} chars)", s.title, s.body.len());
    }
    println!("equations: {:?}", text.equations);

    let stub = StubProvider::new().with_response(TemplateId::ExtractTechniques, TECHNIQUES);
    let gw = Gateway::single(Arc::new(stub), LlmProfile::default());
    let tree = extract_techniques("tiny", &text, &gw, 4)?;
    for id in tree.preorder() {
        let t = &tree.techniques[&id];
        println!("{id}: {} [{}] children={:?}", t.name, t.category, t.children);
    }
    Ok(())
}
