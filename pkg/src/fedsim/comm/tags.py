"""Message type registry. Values are part of the wire contract."""

FINISH = 0
INIT_MODEL = 1
GLOBAL_MODEL = 2
CLIENT_UPDATE = 3
GOSSIP_MODEL = 4
ACTIVATIONS = 5
GRAD_ACTIVATIONS = 6
PARTIAL_LOGITS = 7
RESIDUALS = 8
METRICS = 9

NAMES = {
    FINISH: "FINISH",
    INIT_MODEL: "INIT_MODEL",
    GLOBAL_MODEL: "GLOBAL_MODEL",
    CLIENT_UPDATE: "CLIENT_UPDATE",
    GOSSIP_MODEL: "GOSSIP_MODEL",
    ACTIVATIONS: "ACTIVATIONS",
    GRAD_ACTIVATIONS: "GRAD_ACTIVATIONS",
    PARTIAL_LOGITS: "PARTIAL_LOGITS",
    RESIDUALS: "RESIDUALS",
    METRICS: "METRICS",
}
