from enum import Enum


class FlowModel(Enum):
    PM = "pm"  # convexified Perona-Malik flow at a fixed eps
    TV = "tv"  # total variation flow
