//! Markdown flag reference rendered from the argument definitions.

use clap::CommandFactory;

use crate::args::Cli;

/// Repository-relative location of the rendered page.
pub const REFERENCE_PATH: &str = "docs/cli-reference.md";

pub fn render() -> String {
    let root = Cli::command();
    let mut out = String::new();
    out.push_str("# `aesfa` command reference\n\n");
    out.push_str("<!-- Rendered from crates/cli/src/args.rs by the cli reference test. Do not edit by hand. -->\n\n");
    if let Some(about) = root.get_long_about().or(root.get_about()) {
        out.push_str(&format!("{about}\n\n"));
    }
    out.push_str(
        "Training settings are taken from flags first, then the `--config` TOML file, then the built-in defaults.\n\n",
    );
    for sub in root.get_subcommands() {
        out.push_str(&format!("## `aesfa {}`\n\n", sub.get_name()));
        if let Some(about) = sub.get_about() {
            out.push_str(&format!("{about}\n\n"));
        }
        out.push_str("| Flag | Description | Default |\n|---|---|---|\n");
        for arg in sub.get_arguments() {
            let Some(long) = arg.get_long() else { continue };
            if long == "help" {
                continue;
            }
            let value = arg
                .get_value_names()
                .map(|v| format!(" <{}>", v.join(" ")))
                .unwrap_or_default();
            let help = arg.get_help().map(|h| h.to_string()).unwrap_or_default();
            let (help, default) = split_default(&help);
            let default = arg
                .get_default_values()
                .first()
                .map(|d| d.to_string_lossy().into_owned())
                .or(default)
                .unwrap_or_else(|| {
                    if arg.is_required_set() {
                        "required".into()
                    } else {
                        "".into()
                    }
                });
            let help = help.replace('\n', " ").replace('|', "\\|");
            out.push_str(&format!("| `--{long}{value}` | {help} | {default} |\n"));
        }
        out.push('\n');
    }
    out
}

/// Pulls a trailing `[default: X]` out of a help string.
fn split_default(help: &str) -> (String, Option<String>) {
    match help.rfind(" [default: ") {
        Some(i) if help.ends_with(']') => (
            help[..i].to_string(),
            Some(help[i + " [default: ".len()..help.len() - 1].to_string()),
        ),
        _ => (help.to_string(), None),
    }
}
