//! Static role tokens and the endpoint authorization table.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Migrant,
    HealthWorker,
    PolicyMaker,
    Researcher,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Migrant, Role::HealthWorker, Role::PolicyMaker, Role::Researcher];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Migrant => "migrant",
            Role::HealthWorker => "health_worker",
            Role::PolicyMaker => "policy_maker",
            Role::Researcher => "researcher",
        }
    }

    /// Roles that see free-text answers in record listings.
    pub fn sees_free_text(self) -> bool {
        self == Role::HealthWorker
    }
}

/// Every route of the API.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Endpoint {
    SubmitSurvey,
    ListSurveys,
    Train,
    JobStatus,
    ModelReport,
    Assess,
    Analytics,
    Tips,
    Schema,
    Labels,
}

impl Endpoint {
    pub const ALL: [Endpoint; 10] = [
        Endpoint::SubmitSurvey,
        Endpoint::ListSurveys,
        Endpoint::Train,
        Endpoint::JobStatus,
        Endpoint::ModelReport,
        Endpoint::Assess,
        Endpoint::Analytics,
        Endpoint::Tips,
        Endpoint::Schema,
        Endpoint::Labels,
    ];

    pub fn allows(self, role: Role) -> bool {
        use Role::*;
        let roles: &[Role] = match self {
            Endpoint::SubmitSurvey => &[Migrant],
            Endpoint::ListSurveys => &[HealthWorker, PolicyMaker, Researcher],
            Endpoint::Train | Endpoint::JobStatus => &[Researcher],
            Endpoint::ModelReport => &[HealthWorker, PolicyMaker, Researcher],
            Endpoint::Assess | Endpoint::Labels => &[HealthWorker, Researcher],
            Endpoint::Analytics => &[PolicyMaker, Researcher],
            Endpoint::Tips | Endpoint::Schema => &Role::ALL,
        };
        roles.contains(&role)
    }
}
