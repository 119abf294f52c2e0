from .base import (
    AuthError,
    Backend,
    BackendError,
    CompletionRequest,
    CompletionResponse,
    MalformedResponseError,
    MockPromptError,
    RateLimitError,
    TransientError,
    from_body,
    to_body,
)
from .http import API_KEY_ENV, HttpBackend
from .mock import (
    INTERVENTIONAL,
    OBSERVATIONAL,
    DgpConfig,
    Estimate,
    MockBackend,
    detect_mode,
    ground_truth_demand,
    mock_complete,
)
