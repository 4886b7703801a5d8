from .base import Directory, NetworkFunction
from .core import Amf, Bsf, Gmlc, Lmf, NgBs, Pcf, Smf, Udm, lmf_position
from .external import Tpae, Uss
from .uas import Uaaf, Ucf, Ufes
from .ue import Uav, UavController, UasNode

__all__ = [
    "Directory",
    "NetworkFunction",
    "Amf",
    "Bsf",
    "Gmlc",
    "Lmf",
    "NgBs",
    "Pcf",
    "Smf",
    "Udm",
    "lmf_position",
    "Tpae",
    "Uss",
    "Uaaf",
    "Ucf",
    "Ufes",
    "Uav",
    "UavController",
    "UasNode",
]
