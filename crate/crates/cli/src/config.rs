//! `--config` files: `key = value` lines named after the long flags.
//!
//! File entries are spliced in right after the subcommand, ahead of the
//! flags typed on the command line. Because every flag may be repeated with
//! the last occurrence winning, command-line flags override the file.

use std::ffi::OsString;
use std::fs;

use crate::Failure;

/// Turns config text into `--key value` arguments. Blank lines and `#`
/// comments are skipped; `true` and `false` switch boolean flags.
pub fn parse_config(text: &str) -> Result<Vec<String>, String> {
    let mut args = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(format!(
                "config line {}: expected `key = value`, got `{raw}`",
                i + 1
            ));
        };
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        let value = value.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(format!("config line {}: bad key `{key}`", i + 1));
        }
        if key == "config" {
            return Err(format!(
                "config line {}: config files cannot include other config files",
                i + 1
            ));
        }
        match value {
            "true" => args.push(format!("--{key}")),
            "false" => {}
            _ => {
                args.push(format!("--{key}"));
                args.push(value.to_string());
            }
        }
    }
    Ok(args)
}

/// Expands a `--config FILE` (or `--config=FILE`) found in `argv`.
pub fn merge_config(argv: Vec<OsString>) -> Result<Vec<OsString>, Failure> {
    let mut config = None;
    let mut subcommand = None;
    let mut i = 1;
    while i < argv.len() {
        let arg = argv[i].to_string_lossy();
        if arg == "--config" {
            config = argv.get(i + 1).cloned();
            i += 2;
            continue;
        }
        if let Some(path) = arg.strip_prefix("--config=") {
            config = Some(path.into());
        } else if subcommand.is_none() && !arg.starts_with('-') {
            subcommand = Some(i);
        }
        i += 1;
    }
    let (Some(path), Some(sub)) = (config, subcommand) else {
        // missing values and subcommands are reported by the parser
        return Ok(argv);
    };
    let text = fs::read_to_string(&path).map_err(|e| {
        Failure::Runtime(capsule_pose::Error::InvalidArgument(format!(
            "cannot read config file {}: {e}",
            path.to_string_lossy()
        )))
    })?;
    let extra = parse_config(&text).map_err(Failure::Usage)?;
    let mut merged = argv[..=sub].to_vec();
    merged.extend(extra.into_iter().map(OsString::from));
    merged.extend_from_slice(&argv[sub + 1..]);
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lines_become_flags() {
        let args = parse_config(
            "# run\nepochs = 5\nlr_decay=0.9  # slower\n\nalign = true\nverbose = false\n",
        )
        .unwrap();
        assert_eq!(args, ["--epochs", "5", "--lr-decay", "0.9", "--align"]);
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(parse_config("epochs 5").is_err());
        assert!(parse_config("config = other.toml").is_err());
    }

    #[test]
    fn file_args_precede_command_line_args() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(&path, "epochs = 5\n").unwrap();
        let argv: Vec<OsString> = ["bin", "train", "--epochs", "7", "--config"]
            .iter()
            .map(OsString::from)
            .chain([path.clone().into_os_string()])
            .collect();
        let merged = merge_config(argv).unwrap();
        let merged: Vec<String> = merged
            .iter()
            .map(|s| s.to_string_lossy().into_owned())
            .collect();
        assert_eq!(
            &merged[..6],
            ["bin", "train", "--epochs", "5", "--epochs", "7"]
        );
    }
}
