use serde_json::{json, Map, Value};

/// One evaluation result. Fields that do not apply to a task stay `None`
/// and are written as `null` / `na`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub auc: Option<f64>,
    pub ap: Option<f64>,
    pub acc: Option<f64>,
    pub weighted_f1: Option<f64>,
    pub seed: u64,
    pub k: Option<usize>,
}

impl Metrics {
    fn fields(&self) -> [(&'static str, Option<f64>); 4] {
        [
            ("auc", self.auc),
            ("ap", self.ap),
            ("acc", self.acc),
            ("weighted_f1", self.weighted_f1),
        ]
    }

    /// `# key = value` header lines for `config`, then one `key=value` line
    /// per metric.
    pub fn to_key_value(&self, config: &[(String, String)]) -> String {
        let mut out = String::from("# config\n");
        for (k, v) in config {
            out.push_str(&format!("# {k} = {v}\n"));
        }
        for (name, v) in self.fields() {
            match v {
                Some(v) => out.push_str(&format!("{name}={v:.17e}\n")),
                None => out.push_str(&format!("{name}=na\n")),
            }
        }
        out.push_str(&format!("seed={}\n", self.seed));
        match self.k {
            Some(k) => out.push_str(&format!("k={k}\n")),
            None => out.push_str("k=na\n"),
        }
        out
    }

    /// One JSON object; `config` comes first and holds the resolved run
    /// configuration as strings.
    pub fn to_json(&self, config: &[(String, String)]) -> String {
        let mut obj = Map::new();
        let cfg: Map<String, Value> = config.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
        obj.insert("config".into(), Value::Object(cfg));
        for (name, v) in self.fields() {
            obj.insert(name.into(), v.map_or(Value::Null, |v| json!(v)));
        }
        obj.insert("seed".into(), json!(self.seed));
        obj.insert("k".into(), self.k.map_or(Value::Null, |k| json!(k)));
        let mut s = serde_json::to_string_pretty(&Value::Object(obj)).expect("plain values serialize");
        s.push('\n');
        s
    }
}
