"""Contract probing against a block explorer and an Ethereum node."""

from nftaudit.chainio.calls import (
    TOKEN_URI_SELECTOR,
    AbiResult,
    AbiStatus,
    OutcomeKind,
    Readability,
    TokenUriOutcome,
    call_token_uri,
    classify_readability,
    decode_abi_string,
    encode_abi_string,
    fetch_abi,
)
from nftaudit.chainio.clients import (
    ClientPair,
    FixtureExplorerClient,
    FixtureNodeClient,
    HttpExplorerClient,
    HttpNodeClient,
    fixture_clients,
    http_clients,
)
from nftaudit.chainio.probe import (
    ContractProbe,
    ExtraCheck,
    ProbeCache,
    ProbeFailure,
    ProbeRun,
    probe_all,
    probe_contract,
    read_probes,
    write_probes,
)

__all__ = [
    "TOKEN_URI_SELECTOR",
    "AbiResult",
    "AbiStatus",
    "ClientPair",
    "ContractProbe",
    "ExtraCheck",
    "FixtureExplorerClient",
    "FixtureNodeClient",
    "HttpExplorerClient",
    "HttpNodeClient",
    "OutcomeKind",
    "ProbeCache",
    "ProbeFailure",
    "ProbeRun",
    "Readability",
    "TokenUriOutcome",
    "call_token_uri",
    "classify_readability",
    "decode_abi_string",
    "encode_abi_string",
    "fetch_abi",
    "fixture_clients",
    "http_clients",
    "probe_all",
    "probe_contract",
    "read_probes",
    "write_probes",
]
