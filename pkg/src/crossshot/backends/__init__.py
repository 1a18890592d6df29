from .base import (BackendError, BackendSet, BackendUnreachable, Detection, JudgeFailure, JudgeRequest,
                   NoScriptedResponse)
from .contract import ContractReport, ProbeSuite, verify_backend_contract
from .fakes import FAIL, FakeTables, fake_suite
from .verdicts import AuditLog, Judge

__all__ = [
    "AuditLog", "BackendError", "BackendSet", "BackendUnreachable", "ContractReport", "Detection", "FAIL",
    "FakeTables", "Judge", "JudgeFailure", "JudgeRequest", "NoScriptedResponse", "ProbeSuite",
    "fake_suite", "verify_backend_contract",
]
