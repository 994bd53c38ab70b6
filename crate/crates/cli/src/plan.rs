use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Result};
use attnseg::prompt_plan::{
    compose_identifier_query, compose_query, default_backgrounds, default_synonyms,
    parse_backgrounds, parse_synonyms, validate_manifest, PromptPlan,
};
use attnseg::tensor_store::read_bundle;

use crate::args::{PlanArgs, PlanCommand};
use crate::io::{read_json, write_json};
use crate::settings::print_header;

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| attnseg::Error::Io { path: path.into(), source: e }.into())
}

fn emit(plan: &PromptPlan, out: Option<&Path>) -> Result<()> {
    println!("{}", plan.sentence());
    if let Some(out) = out {
        write_json(out, plan)?;
    }
    Ok(())
}

pub fn run(args: PlanArgs) -> Result<()> {
    match args.command {
        PlanCommand::Compose {
            classes,
            synonyms,
            backgrounds,
            no_backgrounds,
            no_synonyms,
            out,
        } => {
            let synonyms = match (no_synonyms, synonyms) {
                (true, _) => BTreeMap::new(),
                (false, Some(p)) => parse_synonyms(&read_text(&p)?)?,
                (false, None) => default_synonyms(),
            };
            let backgrounds = match (no_backgrounds, backgrounds) {
                (true, _) => Vec::new(),
                (false, Some(p)) => parse_backgrounds(&read_text(&p)?),
                (false, None) => default_backgrounds(),
            };
            print_header(
                "plan compose",
                &BTreeMap::from([
                    ("classes".to_string(), classes.join(",")),
                    ("synonyms".to_string(), synonyms.len().to_string()),
                    ("backgrounds".to_string(), backgrounds.len().to_string()),
                ]),
            );
            emit(&compose_query(&classes, &synonyms, &backgrounds)?, out.as_deref())
        }
        PlanCommand::Identifier { class, identifier, out } => {
            print_header(
                "plan identifier",
                &BTreeMap::from([
                    ("class".to_string(), class.clone()),
                    ("identifier".to_string(), identifier.clone()),
                ]),
            );
            emit(
                &compose_identifier_query(&class, &identifier, &default_synonyms())?,
                out.as_deref(),
            )
        }
        PlanCommand::Validate { plan, bundle } => {
            print_header(
                "plan validate",
                &BTreeMap::from([
                    ("plan".to_string(), plan.display().to_string()),
                    ("bundle".to_string(), bundle.display().to_string()),
                ]),
            );
            let plan: PromptPlan = read_json(&plan)?;
            let bundle = read_bundle(&bundle)?;
            match validate_manifest(&plan, &bundle.token_manifest) {
                Ok(()) => {
                    println!("ok");
                    Ok(())
                }
                Err(mismatch) => bail!(attnseg::Error::PlanMismatch(mismatch)),
            }
        }
    }
}
