//! Configurations as JSON objects of parameter name to value, e.g.
//! `{"FlashChannelCount": 8, "PageAllocationScheme": "CWDP", "GreedyGCEnabled": true}`.
//! Parameters left out keep their value from the base configuration.

use serde_json::{Map, Value};
use ssd_autotune::paramspace::{Configuration, ParamKind, ParamSpace};

pub fn parse(space: &ParamSpace, base: &Configuration, json: &str) -> Result<Configuration, String> {
    let value: Value = serde_json::from_str(json).map_err(|e| e.to_string())?;
    let Value::Object(fields) = value else {
        return Err("configuration must be a JSON object".into());
    };
    let mut config = base.clone();
    for (name, v) in fields {
        let p = space
            .param(&name)
            .ok_or_else(|| format!("unknown parameter {name:?}"))?;
        let idx = match (&p.kind, &v) {
            (ParamKind::Boolean, Value::Bool(b)) => usize::from(*b),
            (ParamKind::Categorical { labels }, Value::String(s)) => labels
                .iter()
                .position(|l| l == s)
                .ok_or_else(|| format!("{name}: {s:?} is not one of {labels:?}"))?,
            (kind, Value::Number(n)) if !matches!(kind, ParamKind::Categorical { .. }) => {
                let x = n.as_f64().ok_or_else(|| format!("{name}: bad number"))?;
                let i = kind.nearest_index(x);
                let got = kind.value(i);
                if (got - x).abs() > 1e-9 * x.abs().max(1.0) {
                    return Err(format!("{name}: {x} is not a catalog level"));
                }
                i
            }
            _ => return Err(format!("{name}: unexpected value {v}")),
        };
        config.set(&name, idx);
    }
    Ok(config)
}

pub fn render(space: &ParamSpace, config: &Configuration) -> String {
    let mut out = Map::new();
    for p in space.params() {
        let Some(idx) = config.get(&p.name) else { continue };
        let v = match &p.kind {
            ParamKind::Boolean => Value::Bool(idx == 1),
            ParamKind::Categorical { labels } => Value::String(labels[idx].clone()),
            kind => serde_json::Number::from_f64(kind.value(idx)).map_or(Value::Null, Value::Number),
        };
        out.insert(p.name.clone(), v);
    }
    serde_json::to_string_pretty(&Value::Object(out)).expect("plain JSON values")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let space = ParamSpace::default_catalog();
        let r = space.reference_config();
        let lowest = space.lowest_config();
        assert_eq!(parse(&space, &lowest, &render(&space, &r)).unwrap(), r);
    }

    #[test]
    fn rejects_off_catalog_values() {
        let space = ParamSpace::default_catalog();
        let r = space.reference_config();
        assert!(parse(&space, &r, r#"{"FlashChannelCount": 7.5}"#).is_err());
        assert!(parse(&space, &r, r#"{"Nope": 1}"#).is_err());
        assert!(parse(&space, &r, "[1]").is_err());
        let c = parse(&space, &r, r#"{"GreedyGCEnabled": false}"#).unwrap();
        assert_eq!(c.get("GreedyGCEnabled"), Some(0));
    }
}
