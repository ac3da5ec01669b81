use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, Mutex, RwLock};

use super::{huggingface, openai, replicate, GatewayError, LlmClient, ProviderSpec};
use crate::requirements::ModelId;

/// Builds clients for one provider.
pub trait ProviderFactory: Send + Sync {
    /// Default endpoint and credential variable for `model`.
    fn spec_for(&self, provider: &str, model: &str) -> ProviderSpec {
        ProviderSpec {
            provider: provider.to_owned(),
            model: model.to_owned(),
            endpoint: String::new(),
            credentials: None,
        }
    }

    fn create(&self, spec: &ProviderSpec) -> Result<Arc<dyn LlmClient>, GatewayError>;
}

/// Provider name to factory. Every resolution attempt is logged, which lets
/// callers verify that a command never reached for a provider.
pub struct ProviderRegistry {
    factories: RwLock<BTreeMap<String, Arc<dyn ProviderFactory>>>,
    resolutions: Mutex<Vec<String>>,
}

impl fmt::Debug for ProviderRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProviderRegistry")
            .field("providers", &self.providers())
            .finish()
    }
}

impl ProviderRegistry {
    pub fn empty() -> Self {
        Self {
            factories: RwLock::new(BTreeMap::new()),
            resolutions: Mutex::new(Vec::new()),
        }
    }

    /// Registry with the openai, huggingface and replicate factories.
    pub fn with_builtins() -> Self {
        let reg = Self::empty();
        reg.register_provider("openai", Arc::new(openai::OpenAiFactory))
            .expect("fresh registry");
        reg.register_provider("huggingface", Arc::new(huggingface::HuggingFaceFactory))
            .expect("fresh registry");
        reg.register_provider(
            "replicate",
            Arc::new(replicate::ReplicateFactory::default()),
        )
        .expect("fresh registry");
        reg
    }

    pub fn register_provider(
        &self,
        name: &str,
        factory: Arc<dyn ProviderFactory>,
    ) -> Result<(), GatewayError> {
        let mut map = self.factories.write().expect("registry lock");
        if map.contains_key(name) {
            return Err(GatewayError::DuplicateProvider(name.to_owned()));
        }
        map.insert(name.to_owned(), factory);
        Ok(())
    }

    pub fn providers(&self) -> Vec<String> {
        self.factories
            .read()
            .expect("registry lock")
            .keys()
            .cloned()
            .collect()
    }

    pub fn spec_for(&self, model: &ModelId) -> Result<ProviderSpec, GatewayError> {
        let factory = self.factory(&model.provider)?;
        Ok(factory.spec_for(&model.provider, &model.model))
    }

    fn factory(&self, provider: &str) -> Result<Arc<dyn ProviderFactory>, GatewayError> {
        self.factories
            .read()
            .expect("registry lock")
            .get(provider)
            .cloned()
            .ok_or_else(|| GatewayError::UnknownProvider(provider.to_owned()))
    }

    pub fn resolve(&self, model: &ModelId) -> Result<Arc<dyn LlmClient>, GatewayError> {
        self.resolutions
            .lock()
            .expect("log lock")
            .push(model.to_string());
        let factory = self.factory(&model.provider)?;
        factory.create(&factory.spec_for(&model.provider, &model.model))
    }

    pub fn resolution_log(&self) -> Vec<String> {
        self.resolutions.lock().expect("log lock").clone()
    }
}

impl Default for ProviderRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}
