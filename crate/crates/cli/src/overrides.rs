//! Dotted-path config overrides: `--set hyper.steps=50` rewrites the parsed
//! TOML tree before deserialization, so sweeps can script any field.

use tandem_core::RunConfig;
use toml::Value;

/// Parses `text` as TOML, applies `key.path=value` overrides, and
/// deserializes the result.
pub fn apply(text: &str, overrides: &[String]) -> Result<RunConfig, String> {
    let table: toml::Table =
        text.parse().map_err(|e| format!("config parse error: {e}"))?;
    let mut root = Value::Table(table);
    for entry in overrides {
        let (path, raw) = entry
            .split_once('=')
            .ok_or_else(|| format!("override '{entry}' is not of the form key.path=value"))?;
        let value = parse_value(raw);
        set_path(&mut root, path, value)?;
    }
    root.try_into().map_err(|e| format!("config field error: {e}"))
}

/// A bare override value parses as TOML when possible (numbers, booleans,
/// arrays) and falls back to a string.
fn parse_value(raw: &str) -> Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut table) => table.remove("v").expect("key v present"),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), String> {
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("override path '{path}' has an empty segment"));
    }
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| format!("override path '{path}': '{part}' is not a table"))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| format!("override path '{path}' does not end in a table"))?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
