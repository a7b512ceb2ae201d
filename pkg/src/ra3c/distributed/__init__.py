from .client import (DEFAULT_ENV_PORT, DEFAULT_PARAMS_PORT, EnvClient, LocalEnvClient, LocalParamClient,
                     ParamClient, TcpEnvClient, TcpParamClient, bind_address, parse_address)
from .env_server import EnvServer, EnvSession, obs_to_payload
from .param_server import ParameterStore, ParamServer, checksum
from .protocol import (Ack, Act, Bye, GetParams, Hello, Message, Nack, ObsPayload, Params, ProtocolError,
                       PushGrads, Reset, Tag, decode, encode)

__all__ = [
    "Ack", "Act", "Bye", "DEFAULT_ENV_PORT", "DEFAULT_PARAMS_PORT", "EnvClient", "EnvServer", "EnvSession",
    "GetParams", "Hello", "LocalEnvClient", "LocalParamClient", "Message", "Nack", "ObsPayload", "ParamClient",
    "ParamServer", "ParameterStore", "Params", "ProtocolError", "PushGrads", "Reset", "Tag", "TcpEnvClient",
    "TcpParamClient", "bind_address", "checksum", "decode", "encode", "obs_to_payload", "parse_address",
]
