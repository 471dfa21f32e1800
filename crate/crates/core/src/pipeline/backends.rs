use std::collections::BTreeMap;
use std::sync::Arc;

use super::{PipelineConfig, PipelineError};
use crate::backends::{BackendClient, HttpTransport, MockBackend, Role, Transport};

/// One configured client per role.
pub struct Backends {
    clients: BTreeMap<Role, BackendClient>,
    mock: Option<Arc<MockBackend>>,
}

impl Backends {
    /// `mock://` endpoints share one in-process mock built from
    /// `config.mock`; other endpoints get an HTTP transport.
    ///
    /// HTTP transports are blocking; do not call this on an async runtime
    /// thread.
    pub fn from_config(config: &PipelineConfig) -> Result<Self, PipelineError> {
        let mut mock = None;
        let mut clients = BTreeMap::new();
        for role in Role::ALL {
            let endpoint = config.endpoint(role);
            let transport: Arc<dyn Transport> = if endpoint.is_mock() {
                mock.get_or_insert_with(|| Arc::new(build_mock(config))).clone()
            } else {
                Arc::new(HttpTransport::new(&endpoint.base_url).map_err(|e| PipelineError::Backend {
                    role,
                    message: e.to_string(),
                })?)
            };
            clients.insert(role, client(config, role, transport));
        }
        Ok(Self { clients, mock })
    }

    /// Every role served by `mock`.
    pub fn with_mock(config: &PipelineConfig, mock: Arc<MockBackend>) -> Self {
        let mut backends = Self::with_transport(config, mock.clone());
        backends.mock = Some(mock);
        backends
    }

    /// Every role served by one transport.
    pub fn with_transport(config: &PipelineConfig, transport: Arc<dyn Transport>) -> Self {
        let clients = Role::ALL
            .into_iter()
            .map(|role| (role, client(config, role, transport.clone())))
            .collect();
        Self { clients, mock: None }
    }

    pub fn client(&self, role: Role) -> &BackendClient {
        &self.clients[&role]
    }

    pub fn mock(&self) -> Option<&Arc<MockBackend>> {
        self.mock.as_ref()
    }
}

fn build_mock(config: &PipelineConfig) -> MockBackend {
    let mut mock = MockBackend::new(config.mock.seed).with_embed_dim(config.mock.embed_dim);
    if let Some(dir) = &config.mock.fixtures {
        mock = mock.with_fixtures(dir);
    }
    mock
}

fn client(config: &PipelineConfig, role: Role, transport: Arc<dyn Transport>) -> BackendClient {
    BackendClient::new(config.endpoint(role), transport)
        .with_max_in_flight(config.pool.max_in_flight)
        .with_params(config.params(role))
}
