//! `deanchor session ...`: a thin front end over the service client.

use clap::{Args, Subcommand};
use deanchor_client::Client;
use deanchor_core::harness::report;
use deanchor_core::harness::{Group, SelfConfidence};
use deanchor_core::schema;
use deanchor_core::session::{
    AnswerSubmission, CreateSession, SurveyResponse, TimeUsage, Verdict, ADVANCE_ACK_KIND, ANSWER_ACK_KIND,
    HEALTH_KIND, STATUS_KIND, TRIAL_KIND,
};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{CliError, Common};

pub const URL_ENV: &str = "DEANCHOR_SERVICE_URL";

#[derive(Debug, Args)]
pub struct SessionArgs {
    /// Base URL of the session service
    #[arg(long, env = URL_ENV, default_value = "http://127.0.0.1:8080")]
    pub url: String,
    #[command(subcommand)]
    pub action: Action,
}

/// Parses a wire-format enum value such as `confidence_explained`.
fn wire<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Action {
    /// Service health and the groups it assigns
    Health,
    /// Start a session
    Create {
        /// Force a group (human_only, constant, random, confidence, confidence_explained)
        #[arg(long, value_parser = wire::<Group>)]
        group: Option<Group>,
        #[arg(long)]
        participant: Option<u64>,
        /// Seed for the random group assignment
        #[arg(long)]
        assignment_seed: Option<u64>,
    },
    /// Phase and position of a session
    Status { id: String },
    /// The current trial
    Trial { id: String },
    /// Answer the current trial
    Answer {
        id: String,
        #[arg(long)]
        trial_id: u32,
        /// pass or fail
        #[arg(long, value_parser = wire::<Verdict>)]
        decision: Verdict,
        /// low, medium or high
        #[arg(long, value_parser = wire::<SelfConfidence>)]
        confidence: Option<SelfConfidence>,
        #[arg(long)]
        elapsed_ms: Option<u64>,
    },
    /// Move past an answered trial once its time is up
    Advance { id: String },
    /// Submit the closing questionnaire
    Survey {
        id: String,
        /// never, rarely, sometimes, often or always
        #[arg(long, value_parser = wire::<TimeUsage>)]
        used_full_time: TimeUsage,
        #[arg(long)]
        comment: Option<String>,
    },
    /// Metrics of a finished session, in `--format`
    Summary { id: String },
}

fn print<T: Serialize>(kind: &str, body: &T) {
    print!("{}", schema::to_document(kind, body).expect("response serializes"));
}

pub fn run(common: &Common, args: SessionArgs) -> Result<(), CliError> {
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Other(format!("cannot start runtime: {e}")))?;
    let client = Client::new(&args.url)?;
    rt.block_on(async {
        match args.action {
            Action::Health => print(HEALTH_KIND, &client.health().await?),
            Action::Create {
                group,
                participant,
                assignment_seed,
            } => {
                let req = CreateSession {
                    participant,
                    seed: assignment_seed,
                    group,
                };
                print(STATUS_KIND, &client.create_session(&req).await?)
            }
            Action::Status { id } => print(STATUS_KIND, &client.status(&id).await?),
            Action::Trial { id } => print(TRIAL_KIND, &client.next_trial(&id).await?),
            Action::Answer {
                id,
                trial_id,
                decision,
                confidence,
                elapsed_ms,
            } => {
                let sub = AnswerSubmission {
                    trial_id,
                    decision,
                    self_confidence: confidence,
                    client_elapsed_ms: elapsed_ms,
                };
                print(ANSWER_ACK_KIND, &client.answer(&id, &sub).await?)
            }
            Action::Advance { id } => print(ADVANCE_ACK_KIND, &client.advance(&id).await?),
            Action::Survey {
                id,
                used_full_time,
                comment,
            } => {
                let resp = SurveyResponse { used_full_time, comment };
                print(STATUS_KIND, &client.survey(&id, &resp).await?)
            }
            Action::Summary { id } => {
                let m = client.summary(&id).await?;
                print!("{}", report::render(&m, common.format.into()));
            }
        }
        Ok(())
    })
}
